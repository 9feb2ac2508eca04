//! Scratch pilot for hyperparameter calibration (removed before release).

use std::time::Instant;

use policed_core::envs::{Env, PointMassEnv, PointMassParams, ResetMode};
use policed_core::geometry::{build_buffer, is_safe, AffineConstraint, AxisBox};
use policed_core::net::Activation;
use policed_core::trainer::{StandardReset, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let policed = std::env::args().nth(2).map_or(true, |s| s != "nopolice");
    let c = AffineConstraint::new(vec![0.0, 1.0], 0.7).unwrap();
    let clamp = AxisBox::new(vec![0.4, 0.0], vec![1.0, 1.0]).unwrap();
    let buffer = build_buffer(&c, 0.1, &clamp).unwrap();

    let config = TrainConfig {
        discount: 0.97,
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        batch_size: 64,
        replay_capacity: 100_000,
        exploration_noise: 0.15,
        random_action_prob: 0.2,
        episode_len: 60,
        max_episodes: 2500,
        reward_window: 10,
        reward_threshold: 200.0,
        warmup_steps: 1000,
        curriculum_stages: 10,
        coverage_samples: 50,
        critic_hidden: vec![32, 32],
        standard_reset: StandardReset::Uniform,
        seed,
        ..TrainConfig::default()
    };

    let mut env = PointMassEnv::new(PointMassParams {
        violation_penalty: 3.0,
        ..PointMassParams::default()
    })
    .unwrap();
    let start = Instant::now();
    let mut trainer = Trainer::new(
        &mut env,
        buffer.clone(),
        0.0,
        &[2, 32, 32, 2],
        Activation::Relu,
        config,
        policed,
        None,
    )
    .unwrap();
    let converged = trainer.train().unwrap();
    let episodes = trainer.episodes_run();
    for chunk in trainer.metrics.chunks(50) {
        let mean: f64 = chunk.iter().map(|r| r.ret).sum::<f64>() / chunk.len() as f64;
        let vf: f64 = chunk.iter().map(|r| r.vertex_fraction).sum::<f64>() / chunk.len() as f64;
        println!(
            "  ep {:4} mean_return {:8.1} vertex_fraction {:.2}",
            chunk[0].episode, mean, vf
        );
    }
    let result = trainer.finish(converged).unwrap();
    println!(
        "seed {seed}: converged={converged} certified={} admissible={} pattern_ok={} episodes={} elapsed={:.1}s",
        result.certified,
        result.admissible,
        result.pattern_ok,
        episodes,
        start.elapsed().as_secs_f64()
    );
    for v in &result.report.vertex_checks {
        println!("  vertex {:?} -> margin {:+.4}", v.vertex, v.margin);
    }

    // Evaluation: 1000 rollouts x 100 steps from uniform safe starts.
    let mut env = PointMassEnv::new(PointMassParams {
        violation_penalty: 3.0,
        ..PointMassParams::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(777));
    let spec = env.spec().clone();
    let mut violations = 0usize;
    let mut reached = 0usize;
    let mut total_return = 0.0;
    for _ in 0..1000 {
        let mut s = loop {
            let s = env.reset(ResetMode::Uniform, None, &mut rng).unwrap();
            if is_safe(&spec.constraint, &spec.state_box, &s) {
                break s;
            }
        };
        let mut hit = false;
        for _ in 0..100 {
            let a = spec.action_box.clamp(&result.fused.forward(&s).unwrap());
            let r = env.step(&a);
            if !r.respect {
                violations += 1;
            }
            total_return += r.reward;
            s = r.s_next;
            let dist = ((s[0] - 0.9f64).powi(2) + (s[1] - 0.9f64).powi(2)).sqrt();
            if dist <= 0.05 {
                hit = true;
            }
        }
        if hit {
            reached += 1;
        }
    }
    println!(
        "eval: violations={violations} reach={}/1000 mean_return={:.1} total={:.1}s",
        reached,
        total_return / 1000.0,
        start.elapsed().as_secs_f64()
    );
}
