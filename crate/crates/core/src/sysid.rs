//! Transition sampling, buffer-radius estimation, and least-squares fitting
//! of the constraint-projected affine dynamics surrogate.

use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Env, ResetMode};
use crate::geometry::{AffineConstraint, Buffer};
use crate::linalg::{dot, lstsq};
use crate::{Error, Result};

/// One sampled environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub transitions: Vec<Transition>,
    pub seed: u64,
}

/// C-projected affine surrogate `C f(s, a) ≈ CA·s + CB·a + Cc` with its
/// approximation measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectedModel {
    pub ca: Vec<f64>,
    pub cb: Vec<f64>,
    pub cc: f64,
    pub epsilon: f64,
}

impl ProjectedModel {
    /// `CA·s + CB·a + Cc`.
    pub fn predict(&self, s: &[f64], a: &[f64]) -> f64 {
        dot(&self.ca, s) + dot(&self.cb, a) + self.cc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusEstimate {
    pub r: f64,
    /// Largest observed `C (s' − s)`.
    pub max_step: f64,
    /// Index of the maximizing transition.
    pub argmax: usize,
}

/// Sample `n` transitions with `s` uniform over the state space (joint space
/// for manifold-constrained envs), `a` uniform over the action set, and the
/// successor taken from the raw plant dynamics.
pub fn collect_dataset(env: &mut dyn Env, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = env.spec().dt;
    let mut transitions = Vec::with_capacity(n);
    for _ in 0..n {
        let s = env.reset(ResetMode::Uniform, None, &mut rng)?;
        let a = env.spec().action_box.sample(&mut rng);
        let s_next = env.dynamics(&s, &a);
        transitions.push(Transition { s, a, s_next, dt });
    }
    Ok(Dataset { transitions, seed })
}

/// Buffer radius: `safety_factor × max C(s' − s)` over the dataset, clipped
/// below at zero.
pub fn estimate_radius(
    dataset: &Dataset,
    constraint: &AffineConstraint,
    safety_factor: f64,
) -> Result<RadiusEstimate> {
    if dataset.transitions.is_empty() {
        return Err(Error::Estimation("radius estimation needs a nonempty dataset".into()));
    }
    let mut max_step = f64::NEG_INFINITY;
    let mut argmax = 0;
    for (i, t) in dataset.transitions.iter().enumerate() {
        let step = constraint.value(&t.s_next) - constraint.value(&t.s);
        if step > max_step {
            max_step = step;
            argmax = i;
        }
    }
    Ok(RadiusEstimate { r: (safety_factor * max_step).max(0.0), max_step, argmax })
}

/// Least-squares fit of `C(s' − s)/δt ≈ CA·s + CB·a + Cc` over the
/// transitions starting inside the buffer. `epsilon` is the safety factor
/// times the worst absolute residual.
pub fn fit_projection(
    dataset: &Dataset,
    buffer: &Buffer,
    constraint: &AffineConstraint,
    safety_factor: f64,
) -> Result<ProjectedModel> {
    if safety_factor < 1.0 {
        return Err(Error::Config(
            "epsilon safety factor must be at least 1 so the estimate overshoots".into(),
        ));
    }
    let in_buffer: Vec<&Transition> = dataset
        .transitions
        .iter()
        .filter(|t| buffer.contains(&t.s))
        .collect();
    if in_buffer.is_empty() {
        return Err(Error::Estimation("no dataset transitions start inside the buffer".into()));
    }
    let n = in_buffer[0].s.len();
    let m = in_buffer[0].a.len();
    if in_buffer.len() < n + m + 1 {
        return Err(Error::Estimation(format!(
            "underdetermined fit: {} in-buffer transitions for {} coefficients",
            in_buffer.len(),
            n + m + 1
        )));
    }
    let mut rows = Vec::with_capacity(in_buffer.len());
    let mut targets = Vec::with_capacity(in_buffer.len());
    for t in &in_buffer {
        let mut row = Vec::with_capacity(n + m + 1);
        row.extend_from_slice(&t.s);
        row.extend_from_slice(&t.a);
        row.push(1.0);
        rows.push(row);
        targets.push((constraint.value(&t.s_next) - constraint.value(&t.s)) / t.dt);
    }
    let beta = lstsq(&rows, &targets)?;
    let model = ProjectedModel {
        ca: beta[..n].to_vec(),
        cb: beta[n..n + m].to_vec(),
        cc: beta[n + m],
        epsilon: 0.0,
    };
    let max_residual = in_buffer
        .iter()
        .zip(&targets)
        .map(|(t, y)| (y - model.predict(&t.s, &t.a)).abs())
        .fold(0.0f64, f64::max);
    Ok(ProjectedModel { epsilon: safety_factor * max_residual, ..model })
}

impl Dataset {
    /// Delimited text, one transition per line, with a header naming the
    /// dimensions: `dt,s0..,a0..,next_s0..`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let (n, m) = match self.transitions.first() {
            Some(t) => (t.s.len(), t.a.len()),
            None => (0, 0),
        };
        let mut header = vec!["dt".to_string()];
        header.extend((0..n).map(|i| format!("s{i}")));
        header.extend((0..m).map(|i| format!("a{i}")));
        header.extend((0..n).map(|i| format!("next_s{i}")));
        out.push_str(&header.join(","));
        out.push('\n');
        for t in &self.transitions {
            let mut fields = vec![format!("{}", t.dt)];
            fields.extend(t.s.iter().map(|v| format!("{v}")));
            fields.extend(t.a.iter().map(|v| format!("{v}")));
            fields.extend(t.s_next.iter().map(|v| format!("{v}")));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        crate::write_atomic(path, out.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Estimation("dataset file is empty".into()))??;
        let columns: Vec<&str> = header.split(',').collect();
        let n = columns.iter().filter(|c| c.starts_with('s')).count();
        let m = columns.iter().filter(|c| c.starts_with('a')).count();
        if columns.len() != 1 + 2 * n + m {
            return Err(Error::Estimation("dataset header is inconsistent".into()));
        }
        let mut transitions = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let values: Vec<f64> = line
                .split(',')
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Estimation(format!("bad float in dataset: {e}")))
                })
                .collect::<Result<_>>()?;
            if values.len() != columns.len() {
                return Err(Error::Estimation("dataset row length mismatch".into()));
            }
            transitions.push(Transition {
                dt: values[0],
                s: values[1..1 + n].to_vec(),
                a: values[1 + n..1 + n + m].to_vec(),
                s_next: values[1 + n + m..].to_vec(),
            });
        }
        Ok(Dataset { transitions, seed: 0 })
    }
}
