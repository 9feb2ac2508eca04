//! 2D point mass: `s' = s + a δt` on the unit square, with an obstacle
//! segment at `s₂ = 0.7` for `s₁ ≥ 0.4` handled by bouncing.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{AffineConstraint, AxisBox};
use crate::linalg::norm2;
use crate::{Error, Result};

use super::{clip_action, Env, EnvSpec, StepResult, ViolationMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointMassParams {
    pub dt: f64,
    pub target: Vec<f64>,
    pub target_tolerance: f64,
    pub target_bonus: f64,
    pub violation_penalty: f64,
    /// Row vector and offset of `C s ≤ d`.
    pub constraint_c: Vec<f64>,
    pub constraint_d: f64,
    /// Sub-box of the state space where the constraint is active.
    pub active_lower: Vec<f64>,
    pub active_upper: Vec<f64>,
    pub violation_mode: ViolationMode,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            target: vec![0.9, 0.9],
            target_tolerance: 0.05,
            target_bonus: 10.0,
            violation_penalty: 10.0,
            constraint_c: vec![0.0, 1.0],
            constraint_d: 0.7,
            active_lower: vec![0.4, 0.0],
            active_upper: vec![1.0, 1.0],
            violation_mode: ViolationMode::Bouncing,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PointMassEnv {
    spec: EnvSpec,
    params: PointMassParams,
    state: Vec<f64>,
}

impl PointMassEnv {
    pub fn new(params: PointMassParams) -> Result<Self> {
        if params.target.len() != 2 {
            return Err(Error::Config("point-mass target must be 2-dimensional".into()));
        }
        if params.dt <= 0.0 {
            return Err(Error::Config("dt must be positive".into()));
        }
        let spec = EnvSpec {
            state_box: AxisBox::new(vec![0.0, 0.0], vec![1.0, 1.0])?,
            action_box: AxisBox::new(vec![-1.0, -1.0], vec![1.0, 1.0])?,
            dt: params.dt,
            constraint: AffineConstraint::new(params.constraint_c.clone(), params.constraint_d)?,
            active_box: AxisBox::new(params.active_lower.clone(), params.active_upper.clone())?,
            violation_mode: params.violation_mode,
            initial_distribution: "fixed origin (0, 0)".into(),
        };
        Ok(Self { spec, params, state: vec![0.0, 0.0] })
    }

    /// Does the segment `from → to` cross `C s = d` upward inside the active
    /// box?
    fn crosses_constraint(&self, from: &[f64], to: &[f64]) -> bool {
        let c = &self.spec.constraint;
        let (y0, y1) = (c.value(from), c.value(to));
        if !(y0 <= c.d && y1 > c.d) {
            return false;
        }
        let lambda = (c.d - y0) / (y1 - y0);
        let crossing: Vec<f64> =
            from.iter().zip(to).map(|(a, b)| a + lambda * (b - a)).collect();
        self.spec.active_box.contains(&crossing, 1e-12)
    }

    fn reward_at(&self, s: &[f64]) -> f64 {
        let dist = norm2(&[s[0] - self.params.target[0], s[1] - self.params.target[1]]);
        let mut r = -dist;
        if dist <= self.params.target_tolerance {
            r += self.params.target_bonus;
        }
        r
    }
}

impl Env for PointMassEnv {
    fn name(&self) -> &'static str {
        "point_mass"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn state(&self) -> &[f64] {
        &self.state
    }

    fn set_state(&mut self, s: &[f64]) -> Result<()> {
        if s.len() != 2 {
            return Err(Error::Shape("point-mass state must be 2-dimensional".into()));
        }
        self.state = s.to_vec();
        Ok(())
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let a = clip_action(&self.spec.action_box, action);
        let s = self.state.clone();
        let candidate: Vec<f64> =
            s.iter().zip(&a).map(|(si, ai)| si + ai * self.params.dt).collect();
        // Crossing test on the realized (clamped) motion: hitting the state
        // box wall slides the segment along it.
        let clamped = self.spec.state_box.clamp(&candidate);
        let violated = self.crosses_constraint(&s, &clamped);
        let (s_next, done) = if violated {
            match self.spec.violation_mode {
                ViolationMode::Bouncing => (s.clone(), false),
                ViolationMode::Terminal => (clamped, true),
                ViolationMode::Penalized => (clamped, false),
            }
        } else {
            (clamped, false)
        };
        let mut reward = self.reward_at(&s_next);
        if violated {
            reward -= self.params.violation_penalty;
        }
        self.state = s_next.clone();
        StepResult { s_next, reward, done, respect: !violated }
    }

    fn dynamics(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let a = clip_action(&self.spec.action_box, a);
        let candidate: Vec<f64> =
            s.iter().zip(&a).map(|(si, ai)| si + ai * self.params.dt).collect();
        self.spec.state_box.clamp(&candidate)
    }

    fn projection_step_bound(&self, constraint: &AffineConstraint) -> Option<f64> {
        // One step moves each coordinate by at most |aᵢ| δt; clamping and
        // bouncing only shrink the move.
        let bound: f64 = constraint
            .c
            .iter()
            .zip(self.spec.action_box.lower.iter().zip(&self.spec.action_box.upper))
            .map(|(ci, (lo, hi))| ci.abs() * lo.abs().max(hi.abs()))
            .sum();
        Some(bound * self.params.dt)
    }

    fn nominal_state(&self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![0.0, 0.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_buffer;
    use crate::envs::ResetMode;
    use rand::SeedableRng;

    fn env() -> PointMassEnv {
        PointMassEnv::new(PointMassParams::default()).unwrap()
    }

    #[test]
    fn plain_step_is_euler() {
        let mut e = env();
        e.set_state(&[0.5, 0.5]).unwrap();
        let r = e.step(&[1.0, 1.0]);
        assert!((r.s_next[0] - 0.6).abs() < 1e-12);
        assert!((r.s_next[1] - 0.6).abs() < 1e-12);
        assert!(r.respect && !r.done);
    }

    #[test]
    fn upward_crossing_in_active_zone_bounces() {
        let mut e = env();
        e.set_state(&[0.5, 0.65]).unwrap();
        let r = e.step(&[0.0, 1.0]);
        assert_eq!(r.s_next, vec![0.5, 0.65]);
        assert!(!r.respect);
        assert!(r.reward < -5.0);
    }

    #[test]
    fn crossing_outside_active_zone_is_free() {
        let mut e = env();
        e.set_state(&[0.2, 0.65]).unwrap();
        let r = e.step(&[0.0, 1.0]);
        assert!((r.s_next[1] - 0.75).abs() < 1e-12);
        assert!(r.respect);
    }

    #[test]
    fn diagonal_crossing_uses_the_crossing_point() {
        let mut e = env();
        // Crossing point lands at s₁ = 0.40 exactly, inside the active zone.
        e.set_state(&[0.35, 0.65]).unwrap();
        let r = e.step(&[1.0, 1.0]);
        assert!(!r.respect);
        assert_eq!(r.s_next, vec![0.35, 0.65]);
        // Slightly further left the crossing point is inactive.
        e.set_state(&[0.3, 0.65]).unwrap();
        let r = e.step(&[1.0, 1.0]);
        assert!(r.respect);
    }

    #[test]
    fn state_stays_in_the_box() {
        let mut e = env();
        e.set_state(&[0.95, 0.05]).unwrap();
        let r = e.step(&[1.0, -1.0]);
        assert_eq!(r.s_next, vec![1.0, 0.0]);
    }

    #[test]
    fn dynamics_ignores_the_obstacle() {
        let e = env();
        let s_next = e.dynamics(&[0.5, 0.65], &[0.0, 1.0]);
        assert!((s_next[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn determinism() {
        let mut a = env();
        let mut b = env();
        a.set_state(&[0.3, 0.4]).unwrap();
        b.set_state(&[0.3, 0.4]).unwrap();
        assert_eq!(a.step(&[0.2, -0.7]), b.step(&[0.2, -0.7]));
    }

    #[test]
    fn projection_bound_matches_plant() {
        let e = env();
        let c = e.spec().constraint.clone();
        assert!((e.projection_step_bound(&c).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn vertex_reset_is_exact() {
        let c = AffineConstraint::new(vec![0.0, 1.0], 0.7).unwrap();
        let clamp = AxisBox::new(vec![0.4, 0.0], vec![1.0, 1.0]).unwrap();
        let buffer = build_buffer(&c, 0.1, &clamp).unwrap();
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = e.reset(ResetMode::AtVertex(0), Some(&buffer), &mut rng).unwrap();
        assert_eq!(s, buffer.vertices[0]);
        assert!(e.reset(ResetMode::AtVertex(9), Some(&buffer), &mut rng).is_err());
    }

    #[test]
    fn in_buffer_resets_pass_membership() {
        let c = AffineConstraint::new(vec![0.0, 1.0], 0.7).unwrap();
        let clamp = AxisBox::new(vec![0.4, 0.0], vec![1.0, 1.0]).unwrap();
        let buffer = build_buffer(&c, 0.1, &clamp).unwrap();
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = e.reset(ResetMode::InBuffer, Some(&buffer), &mut rng).unwrap();
            assert!(buffer.contains(&s));
        }
    }

    #[test]
    fn bouncing_never_lands_past_the_line_in_active_zone() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        use rand::Rng;
        for _ in 0..2000 {
            let s = vec![rng.random_range(0.0..=1.0), rng.random_range(0.0..=0.7f64)];
            e.set_state(&s).unwrap();
            let a = vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0f64)];
            let r = e.step(&a);
            let crossed_segment = e.crosses_constraint(&s, &r.s_next);
            assert!(!crossed_segment, "constraint segment crossed from {s:?} with {a:?}");
        }
    }
}
