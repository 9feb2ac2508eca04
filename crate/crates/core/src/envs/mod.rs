//! Deterministic discrete-time environments with constraint accounting.
//!
//! Each environment exposes two faces: `step` is the training interface with
//! the configured violation behavior (bouncing / terminal / penalized), while
//! `dynamics` is the raw one-step transition map used for system
//! identification and certificate checks, where the constraint machinery
//! must not mask what the plant actually does.

mod pendulum;
mod point_mass;

pub use pendulum::{PendulumEnv, PendulumParams};
pub use point_mass::{PointMassEnv, PointMassParams};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{AffineConstraint, AxisBox, Buffer};
use crate::{Error, Result};

/// How the environment reacts to an attempted constraint violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationMode {
    /// Keep going, subtract a penalty.
    Penalized,
    /// End the episode with a penalty.
    Terminal,
    /// Hold the state at its last constraint-abiding value with a penalty.
    Bouncing,
}

/// Static description of an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_box: AxisBox,
    pub action_box: AxisBox,
    pub dt: f64,
    pub constraint: AffineConstraint,
    /// Sub-box of the state space where the constraint is active.
    pub active_box: AxisBox,
    pub violation_mode: ViolationMode,
    pub initial_distribution: String,
}

impl EnvSpec {
    pub fn state_dim(&self) -> usize {
        self.state_box.dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_box.dim()
    }
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub s_next: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// False when a constraint violation was attempted this step.
    pub respect: bool,
}

/// Initial-state selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetMode {
    /// Environment-specific default start.
    Nominal,
    /// Uniform inside the buffer.
    InBuffer,
    /// Exactly at buffer vertex `i`.
    AtVertex(usize),
    /// Uniform over the state box.
    Uniform,
}

pub trait Env {
    fn name(&self) -> &'static str;

    fn spec(&self) -> &EnvSpec;

    fn state(&self) -> &[f64];

    fn set_state(&mut self, s: &[f64]) -> Result<()>;

    /// Training-facing step with the configured violation behavior.
    fn step(&mut self, action: &[f64]) -> StepResult;

    /// Raw one-step transition `s ↦ s + f(s, a) δt`, clamped to the state
    /// box, with no constraint behavior applied. Pure.
    fn dynamics(&self, s: &[f64], a: &[f64]) -> Vec<f64>;

    /// Analytic bound on `C (s' − s)` over safe states and admissible
    /// actions, when one is known for this plant.
    fn projection_step_bound(&self, constraint: &AffineConstraint) -> Option<f64>;

    /// Environment-specific nominal start.
    fn nominal_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    fn reset(
        &mut self,
        mode: ResetMode,
        buffer: Option<&Buffer>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let s = match mode {
            ResetMode::Nominal => self.nominal_state(rng),
            ResetMode::Uniform => self.spec().state_box.sample(rng),
            ResetMode::InBuffer => {
                let buffer = buffer
                    .ok_or_else(|| Error::Env("in-buffer reset needs a buffer".into()))?;
                sample_buffer(buffer, rng)
            }
            ResetMode::AtVertex(i) => {
                let buffer = buffer
                    .ok_or_else(|| Error::Env("vertex reset needs a buffer".into()))?;
                buffer
                    .vertices
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Env(format!("vertex index {i} out of range")))?
            }
        };
        self.set_state(&s)?;
        Ok(s)
    }
}

/// Uniform sample from a buffer: exact box sampling when the constraint is
/// axis-aligned, random convex combination of the vertices otherwise.
pub fn sample_buffer(buffer: &Buffer, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    if let Some(b) = buffer.as_box() {
        return b.sample(rng);
    }
    let n = buffer.vertices.len();
    let mut w: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let total: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= total;
    }
    let mut s = vec![0.0; buffer.dim()];
    for (wi, v) in w.iter().zip(&buffer.vertices) {
        for (si, vi) in s.iter_mut().zip(v) {
            *si += wi * vi;
        }
    }
    s
}

pub(crate) fn clip_action(action_box: &AxisBox, a: &[f64]) -> Vec<f64> {
    action_box.clamp(a)
}
