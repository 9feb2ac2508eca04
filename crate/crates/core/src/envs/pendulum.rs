//! Cart-pole inverted pendulum with state `(x, θ, ẋ, θ̇)` and a scalar
//! force action, integrated by semi-implicit Euler.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{AffineConstraint, AxisBox};
use crate::{Error, Result};

use super::{clip_action, Env, EnvSpec, StepResult, ViolationMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    pub dt: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half-length of the pole.
    pub pole_length: f64,
    pub gravity: f64,
    /// Force applied to the cart per unit action.
    pub force_scale: f64,
    pub angle_limit: f64,
    pub position_limit: f64,
    pub violation_penalty: f64,
    pub constraint_c: Vec<f64>,
    pub constraint_d: f64,
    pub active_lower: Vec<f64>,
    pub active_upper: Vec<f64>,
    pub violation_mode: ViolationMode,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            dt: 0.02,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.5,
            gravity: 9.81,
            force_scale: 10.0,
            angle_limit: 0.2,
            position_limit: 1.0,
            violation_penalty: 10.0,
            // Repulsion target: θ̇ ≤ 0 while the pole leans right.
            constraint_c: vec![0.0, 0.0, 0.0, 1.0],
            constraint_d: 0.0,
            active_lower: vec![-0.9, 0.1, -1.0, -2.0],
            active_upper: vec![0.9, 0.2, 1.0, 2.0],
            violation_mode: ViolationMode::Terminal,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PendulumEnv {
    spec: EnvSpec,
    params: PendulumParams,
    state: Vec<f64>,
}

impl PendulumEnv {
    pub fn new(params: PendulumParams) -> Result<Self> {
        if params.dt <= 0.0 {
            return Err(Error::Config("dt must be positive".into()));
        }
        let spec = EnvSpec {
            state_box: AxisBox::new(vec![-1.0, -0.25, -2.0, -2.0], vec![1.0, 0.25, 2.0, 2.0])?,
            action_box: AxisBox::new(vec![-1.0], vec![1.0])?,
            dt: params.dt,
            constraint: AffineConstraint::new(params.constraint_c.clone(), params.constraint_d)?,
            active_box: AxisBox::new(params.active_lower.clone(), params.active_upper.clone())?,
            violation_mode: params.violation_mode,
            initial_distribution: "uniform ±0.02 around the upright origin".into(),
        };
        Ok(Self { spec, params, state: vec![0.0; 4] })
    }

    /// Cart and pole accelerations of the continuous-time plant.
    pub fn accelerations(&self, s: &[f64], action: f64) -> (f64, f64) {
        let p = &self.params;
        let force = p.force_scale * action;
        let theta = s[1];
        let theta_dot = s[3];
        let total_mass = p.cart_mass + p.pole_mass;
        let (sin_t, cos_t) = theta.sin_cos();
        let temp = (force + p.pole_mass * p.pole_length * theta_dot * theta_dot * sin_t)
            / total_mass;
        let theta_acc = (p.gravity * sin_t - cos_t * temp)
            / (p.pole_length * (4.0 / 3.0 - p.pole_mass * cos_t * cos_t / total_mass));
        let x_acc = temp - p.pole_mass * p.pole_length * theta_acc * cos_t / total_mass;
        (x_acc, theta_acc)
    }

    /// Semi-implicit Euler step, unclamped.
    fn integrate(&self, s: &[f64], action: f64) -> Vec<f64> {
        let dt = self.params.dt;
        let (x_acc, theta_acc) = self.accelerations(s, action);
        let x_dot = s[2] + x_acc * dt;
        let theta_dot = s[3] + theta_acc * dt;
        vec![s[0] + x_dot * dt, s[1] + theta_dot * dt, x_dot, theta_dot]
    }

    fn attempted_violation(&self, from: &[f64], to: &[f64]) -> bool {
        let c = &self.spec.constraint;
        c.value(from) <= c.d
            && c.value(to) > c.d
            && self.spec.active_box.contains(from, 1e-12)
    }
}

impl Env for PendulumEnv {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn state(&self) -> &[f64] {
        &self.state
    }

    fn set_state(&mut self, s: &[f64]) -> Result<()> {
        if s.len() != 4 {
            return Err(Error::Shape("pendulum state must be 4-dimensional".into()));
        }
        self.state = s.to_vec();
        Ok(())
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let a = clip_action(&self.spec.action_box, action);
        let s = self.state.clone();
        let raw = self.integrate(&s, a[0]);
        let respect = !self.attempted_violation(&s, &raw);
        let fell = raw[1].abs() > self.params.angle_limit
            || raw[0].abs() > self.params.position_limit;
        let mut reward = if raw[1].abs() <= self.params.angle_limit { 1.0 } else { 0.0 };
        if fell {
            reward -= self.params.violation_penalty;
        }
        let s_next = self.spec.state_box.clamp(&raw);
        self.state = s_next.clone();
        StepResult { s_next, reward, done: fell, respect }
    }

    fn dynamics(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let a = clip_action(&self.spec.action_box, a);
        self.spec.state_box.clamp(&self.integrate(s, a[0]))
    }

    fn projection_step_bound(&self, _constraint: &AffineConstraint) -> Option<f64> {
        // Treated as a black box: no analytic bound is declared.
        None
    }

    fn nominal_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..4).map(|_| rng.random_range(-0.02..=0.02)).collect()
    }
}
