//! Scratch diagnostics (removed before release).

use policed_core::envs::{Env, PointMassEnv, PointMassParams};
use policed_core::geometry::{build_buffer, AffineConstraint, AxisBox};
use policed_core::net::Activation;
use policed_core::trainer::{StandardReset, TrainConfig, Trainer};

fn main() {
    let c = AffineConstraint::new(vec![0.0, 1.0], 0.7).unwrap();
    let clamp = AxisBox::new(vec![0.4, 0.0], vec![1.0, 1.0]).unwrap();
    let buffer = build_buffer(&c, 0.1, &clamp).unwrap();
    let config = TrainConfig {
        discount: 0.97,
        actor_lr: 3e-4,
        critic_lr: 1e-3,
        batch_size: 64,
        exploration_noise: 0.15,
        random_action_prob: 0.2,
        nstep: 1,
        episode_len: 60,
        max_episodes: 1500,
        reward_window: 10,
        reward_threshold: 1e18,
        warmup_steps: 1000,
        coverage_samples: 0,
        critic_hidden: vec![32, 32],
        standard_reset: StandardReset::Uniform,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut env = PointMassEnv::new(PointMassParams {
        violation_penalty: 3.0,
        ..PointMassParams::default()
    })
    .unwrap();
    let mut trainer = Trainer::new(
        &mut env,
        buffer,
        0.0,
        &[2, 32, 32, 2],
        Activation::Relu,
        config,
        false,
        None,
    )
    .unwrap();
    trainer.standard_phase().unwrap();
    for chunk in trainer.metrics.chunks(100) {
        let mean: f64 = chunk.iter().map(|r| r.ret).sum::<f64>() / chunk.len() as f64;
        println!("ep {:4} mean_return {:8.1}", chunk[0].episode, mean);
    }

    // Q landscape at a probe state.
    for s in [[0.5f64, 0.3], [0.85, 0.85], [0.7, 0.65]] {
        println!("state {s:?}: actor -> {:?}", trainer.actor.act(&s).unwrap());
        for a in [[1.0f64, 1.0], [0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0], [0.7, 0.7]] {
            let mut x = s.to_vec();
            x.extend_from_slice(&a);
            println!("   Q(s, {a:?}) = {:8.2}", trainer.critic_value(&x).unwrap());
        }
    }

    // Greedy rollouts.
    let fresh = PointMassEnv::new(PointMassParams::default()).unwrap();
    for start in [[0.1f64, 0.1], [0.8, 0.65], [0.2, 0.6]] {
        let mut s = start.to_vec();
        let mut env2 = fresh.clone();
        env2.set_state(&s).unwrap();
        print!("traj from {start:?}: ");
        for t in 0..40 {
            let a = env2.spec().action_box.clamp(&trainer.actor.act(&s).unwrap());
            let r = env2.step(&a);
            s = r.s_next;
            if t % 8 == 0 {
                print!("({:.2},{:.2}) ", s[0], s[1]);
            }
        }
        println!();
    }
}
