//! Repulsion certificates at the buffer vertices, relative-degree analysis,
//! and the linear existence problem for constraint-satisfying policies.

use serde::{Deserialize, Serialize};

use crate::geometry::{AffineConstraint, AxisBox, Buffer};
use crate::linalg::{dot, Matrix};
use crate::lp::feasible_point;
use crate::police::AffineMap;
use crate::sysid::ProjectedModel;
use crate::{Error, Result};

const CB_ZERO_TOL: f64 = 1e-12;
const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepulsionMode {
    /// `C(s' − v) + 2ε δt ≤ 0`
    Discrete,
    /// `C(s' − v)/δt + 2ε ≤ 0`
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexCheck {
    pub vertex: Vec<f64>,
    pub action: Vec<f64>,
    pub s_next: Vec<f64>,
    pub margin: f64,
    pub pass: bool,
}

/// Result of the buffer-width condition `max C(s' − s) ≤ r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthCheck {
    pub max_step: f64,
    pub radius: f64,
    /// True when `max_step` comes from an analytic plant bound rather than
    /// a dataset maximum.
    pub analytic: bool,
    pub pass: bool,
}

impl WidthCheck {
    pub fn new(max_step: f64, radius: f64, analytic: bool) -> Self {
        Self { max_step, radius, analytic, pass: max_step <= radius + 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub mode: RepulsionMode,
    pub constraint: AffineConstraint,
    pub epsilon: f64,
    pub dt: f64,
    pub vertex_checks: Vec<VertexCheck>,
    pub width_check: Option<WidthCheck>,
    pub worst_vertex: usize,
    pub pass: bool,
}

impl VerificationReport {
    /// Re-derive the pass flag from the raw per-vertex states; the stored
    /// flag must be a pure function of them.
    pub fn recompute_pass(&self) -> bool {
        let vertices_ok = self.vertex_checks.iter().all(|v| {
            let delta = self.constraint.value(&v.s_next) - self.constraint.value(&v.vertex);
            let margin = match self.mode {
                RepulsionMode::Discrete => delta + 2.0 * self.epsilon * self.dt,
                RepulsionMode::Continuous => delta / self.dt + 2.0 * self.epsilon,
            };
            margin <= 0.0
        });
        vertices_ok && self.width_check.as_ref().map_or(true, |w| w.pass)
    }

    pub fn with_width_check(mut self, width: WidthCheck) -> Self {
        let vertices_ok = self.vertex_checks.iter().all(|v| v.pass);
        self.pass = vertices_ok && width.pass;
        self.width_check = Some(width);
        self
    }
}

fn check_repulsion<P, F>(
    mode: RepulsionMode,
    mut policy: P,
    mut step: F,
    buffer: &Buffer,
    epsilon: f64,
    dt: f64,
) -> Result<VerificationReport>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
    F: FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    if buffer.vertices.is_empty() {
        return Err(Error::Verification("buffer has no vertices".into()));
    }
    if epsilon < 0.0 {
        return Err(Error::Verification("epsilon must be nonnegative".into()));
    }
    if dt <= 0.0 {
        return Err(Error::Verification("dt must be positive".into()));
    }
    let constraint = &buffer.constraint;
    let mut vertex_checks = Vec::with_capacity(buffer.vertices.len());
    let mut worst = 0usize;
    for (i, v) in buffer.vertices.iter().enumerate() {
        let action = policy(v)?;
        let s_next = step(v, &action)
            .map_err(|e| Error::Verification(format!("cannot step from vertex {i}: {e}")))?;
        let delta = constraint.value(&s_next) - constraint.value(v);
        let margin = match mode {
            RepulsionMode::Discrete => delta + 2.0 * epsilon * dt,
            RepulsionMode::Continuous => delta / dt + 2.0 * epsilon,
        };
        if margin > vertex_checks.get(worst).map_or(f64::NEG_INFINITY, |w: &VertexCheck| w.margin) {
            worst = i;
        }
        vertex_checks.push(VertexCheck { vertex: v.clone(), action, s_next, margin, pass: margin <= 0.0 });
    }
    let pass = vertex_checks.iter().all(|v| v.pass);
    Ok(VerificationReport {
        mode,
        constraint: constraint.clone(),
        epsilon,
        dt,
        vertex_checks,
        width_check: None,
        worst_vertex: worst,
        pass,
    })
}

/// Vertex-level discrete repulsion certificate: from every buffer vertex,
/// one plant step under the policy must satisfy `C(s' − v) ≤ −2ε δt`.
pub fn check_discrete_repulsion<P, F>(
    policy: P,
    step: F,
    buffer: &Buffer,
    epsilon: f64,
    dt: f64,
) -> Result<VerificationReport>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
    F: FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    check_repulsion(RepulsionMode::Discrete, policy, step, buffer, epsilon, dt)
}

/// Continuous variant with `C f(v, μ(v))` approximated by `C(s' − v)/δt`.
pub fn check_continuous_repulsion<P, F>(
    policy: P,
    step: F,
    buffer: &Buffer,
    epsilon: f64,
    dt: f64,
) -> Result<VerificationReport>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
    F: FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    check_repulsion(RepulsionMode::Continuous, policy, step, buffer, epsilon, dt)
}

/// Fraction of sampled buffer points satisfying the discrete repulsion
/// condition.
pub fn coverage_scan<P, F>(
    mut policy: P,
    mut step: F,
    buffer: &Buffer,
    epsilon: f64,
    dt: f64,
    n_samples: usize,
    seed: u64,
) -> Result<f64>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
    F: FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    use rand::SeedableRng;
    if n_samples == 0 {
        return Err(Error::Verification("coverage scan needs at least one sample".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let constraint = &buffer.constraint;
    let mut satisfied = 0usize;
    for _ in 0..n_samples {
        let s = crate::envs::sample_buffer(buffer, &mut rng);
        let action = policy(&s)?;
        let s_next = step(&s, &action)?;
        let delta = constraint.value(&s_next) - constraint.value(&s);
        if delta + 2.0 * epsilon * dt <= 0.0 {
            satisfied += 1;
        }
    }
    Ok(satisfied as f64 / n_samples as f64)
}

/// Relative degree 1 ⟺ the action appears in the constraint derivative,
/// i.e. `CB ≠ 0`.
pub fn relative_degree_is_one(model: &ProjectedModel) -> bool {
    model.cb.iter().fold(0.0f64, |m, v| m.max(v.abs())) > CB_ZERO_TOL
}

/// `c_v* = max { CA·v + Cc : v ∈ V(B) }`.
pub fn cv_star(model: &ProjectedModel, buffer: &Buffer) -> f64 {
    buffer
        .vertices
        .iter()
        .map(|v| dot(&model.ca, v) + model.cc)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityMethod {
    Constructive,
    Lp,
}

/// Answer to the policy-existence question: is there an affine map on the
/// buffer that repels at every vertex while staying admissible?
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub witness: Option<AffineMap>,
    pub method: FeasibilityMethod,
    pub cv_star: f64,
}

/// Repulsion slack of a candidate affine policy at one vertex:
/// `−ε − C((A + BD)v + Be + c)`, nonnegative when the condition holds.
pub fn repulsion_slack(
    model: &ProjectedModel,
    map: &AffineMap,
    vertex: &[f64],
    epsilon: f64,
) -> f64 {
    let action = map.apply(vertex);
    -epsilon - (dot(&model.ca, vertex) + dot(&model.cb, &action) + model.cc)
}

/// Decide existence of a repelling admissible affine policy.
///
/// With `CB = 0` the action cannot influence the constraint output and
/// feasibility reduces to `c_v* ≤ −ε`. Otherwise try the constructive
/// single-component witness first, and fall back to a phase-1 simplex over
/// the entries of `(D, e)`.
pub fn existence_check(
    model: &ProjectedModel,
    buffer: &Buffer,
    action_box: &AxisBox,
    epsilon: f64,
) -> Result<Feasibility> {
    if epsilon < 0.0 {
        return Err(Error::Verification("epsilon must be nonnegative".into()));
    }
    let n = buffer.dim();
    let m = action_box.dim();
    if model.ca.len() != n || model.cb.len() != m {
        return Err(Error::Shape("model dimensions do not match buffer/action box".into()));
    }
    let star = cv_star(model, buffer);

    if !relative_degree_is_one(model) {
        let feasible = star <= -epsilon;
        let witness = feasible.then(|| AffineMap {
            d: Matrix::zeros(m, n),
            // Any admissible constant action works; stay at zero when allowed.
            e: action_box.clamp(&vec![0.0; m]),
        });
        return Ok(Feasibility { feasible, witness, method: FeasibilityMethod::Constructive, cv_star: star });
    }

    // Constructive witness: D = 0 and a single action component scaled so
    // that CB·e = −c_v* − ε.
    let j_star = (0..m)
        .max_by(|&i, &j| model.cb[i].abs().total_cmp(&model.cb[j].abs()))
        .unwrap();
    let mut e = vec![0.0; m];
    e[j_star] = (-star - epsilon) / model.cb[j_star];
    if action_box.contains(&e, FEASIBILITY_TOL) {
        let witness = AffineMap { d: Matrix::zeros(m, n), e };
        return Ok(Feasibility {
            feasible: true,
            witness: Some(witness),
            method: FeasibilityMethod::Constructive,
            cv_star: star,
        });
    }

    // Feasibility LP over (D, e): one repulsion row per vertex plus the box
    // rows keeping D v + e admissible. Variable order: D row-major, then e.
    let num_vars = m * n + m;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for v in &buffer.vertices {
        let mut row = vec![0.0; num_vars];
        for j in 0..m {
            for k in 0..n {
                row[j * n + k] = model.cb[j] * v[k];
            }
            row[m * n + j] = model.cb[j];
        }
        rows.push(row);
        rhs.push(-epsilon - dot(&model.ca, v) - model.cc);
    }
    for v in &buffer.vertices {
        for j in 0..m {
            let mut upper = vec![0.0; num_vars];
            for k in 0..n {
                upper[j * n + k] = v[k];
            }
            upper[m * n + j] = 1.0;
            let lower: Vec<f64> = upper.iter().map(|x| -x).collect();
            rows.push(upper);
            rhs.push(action_box.upper[j]);
            rows.push(lower);
            rhs.push(-action_box.lower[j]);
        }
    }
    let solution = feasible_point(&rows, &rhs, FEASIBILITY_TOL)?;
    let witness = solution.map(|x| AffineMap {
        d: Matrix::from_fn(m, n, |j, k| x[j * n + k]),
        e: x[m * n..].to_vec(),
    });
    Ok(Feasibility {
        feasible: witness.is_some(),
        witness,
        method: FeasibilityMethod::Lp,
        cv_star: star,
    })
}
