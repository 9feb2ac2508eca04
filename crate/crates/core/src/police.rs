//! Region enforcement for piecewise-affine networks.
//!
//! `enforce_region` computes per-layer extra biases so that every vertex of a
//! polytopic input region shares one activation pattern. Since the network is
//! affine wherever the pattern is fixed, its restriction to the region is then
//! exactly affine, and `extract_affine_map` recovers the slope/offset pair.
//! `fuse` folds the extra biases into the ordinary biases, producing a plain
//! network that is pointwise identical.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, sub, Matrix};
use crate::net::Mlp;
use crate::{Error, Result};

/// Tolerance used when re-deriving a pattern from stored weights. Freshly
/// enforced states are exact; fused checkpoints can be off by rounding.
const PATTERN_TOL: f64 = 1e-9;

/// Polytopic input region given by its vertex list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineRegion {
    vertices: Vec<Vec<f64>>,
}

impl AffineRegion {
    pub fn new(vertices: Vec<Vec<f64>>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::Config("region needs at least one vertex".into()));
        }
        let dim = vertices[0].len();
        if vertices.iter().any(|v| v.len() != dim) {
            return Err(Error::Shape("region vertices have mixed dimensions".into()));
        }
        for i in 0..vertices.len() {
            for j in i + 1..vertices.len() {
                let close = vertices[i]
                    .iter()
                    .zip(&vertices[j])
                    .all(|(a, b)| (a - b).abs() <= 1e-9);
                if close {
                    return Err(Error::Config(format!(
                        "duplicate region vertices at indices {i} and {j}"
                    )));
                }
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.vertices.len() as f64;
        let mut c = vec![0.0; self.dim()];
        for v in &self.vertices {
            for (ci, vi) in c.iter_mut().zip(v) {
                *ci += vi / n;
            }
        }
        c
    }

    /// Random convex combination of the vertices (uniform over the simplex of
    /// weights, not over the polytope).
    pub fn sample_convex<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.vertices.len();
        let mut w: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let total: f64 = w.iter().sum();
        for wi in &mut w {
            *wi /= total;
        }
        let mut s = vec![0.0; self.dim()];
        for (wi, v) in w.iter().zip(&self.vertices) {
            for (si, vi) in s.iter_mut().zip(v) {
                *si += wi * vi;
            }
        }
        s
    }
}

/// Extra biases pinning one activation pattern over a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoliceState {
    /// One vector per hidden layer.
    pub extra_biases: Vec<Vec<f64>>,
    /// Shared sign per hidden unit (`true` = active side).
    pub vertex_patterns: Vec<Vec<bool>>,
    pub region: AffineRegion,
}

/// Affine restriction of a network to an enforced region: `x ↦ D x + e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub d: Matrix,
    pub e: Vec<f64>,
}

impl AffineMap {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.d.matvec(x);
        for (yi, ei) in y.iter_mut().zip(&self.e) {
            *yi += ei;
        }
        y
    }
}

fn check_region_dim(net: &Mlp, region: &AffineRegion) -> Result<()> {
    if region.dim() != net.input_dim() {
        return Err(Error::Shape(format!(
            "region dimension {} does not match network input dimension {}",
            region.dim(),
            net.input_dim()
        )));
    }
    Ok(())
}

/// Compute extra biases so all region vertices share one activation pattern.
///
/// Layer by layer: propagate every vertex, pick the majority sign per unit
/// (a pre-activation of exactly zero votes active, and ties go to the active
/// side), then shift by the smallest bias that moves every vertex onto the
/// chosen side. Propagation continues with the shifted values, so later
/// layers see the enforced geometry. Deterministic.
pub fn enforce_region(net: &Mlp, region: &AffineRegion) -> Result<PoliceState> {
    check_region_dim(net, region)?;
    let n_vertices = region.vertices().len();
    let mut h: Vec<Vec<f64>> = region.vertices().to_vec();
    let mut extra_biases = Vec::with_capacity(net.num_layers() - 1);
    let mut vertex_patterns = Vec::with_capacity(net.num_layers() - 1);
    for layer in 0..net.num_layers() - 1 {
        let pre: Vec<Vec<f64>> = h
            .iter()
            .map(|v| {
                let mut z = net.weights[layer].matvec(v);
                for (zj, bj) in z.iter_mut().zip(&net.biases[layer]) {
                    *zj += bj;
                }
                z
            })
            .collect();
        let width = net.layer_dims[layer + 1];
        let mut b_extra = vec![0.0; width];
        let mut pattern = vec![false; width];
        for j in 0..width {
            let mut active_votes = 0usize;
            let mut qmin = f64::INFINITY;
            let mut qmax = f64::NEG_INFINITY;
            for p in &pre {
                let q = p[j];
                if q >= 0.0 {
                    active_votes += 1;
                }
                qmin = qmin.min(q);
                qmax = qmax.max(q);
            }
            let active = 2 * active_votes >= n_vertices;
            b_extra[j] = if active { (-qmin).max(0.0) } else { -qmax.max(0.0) };
            pattern[j] = active;
        }
        h = pre
            .into_iter()
            .map(|mut z| {
                for (zj, (ej, _)) in z.iter_mut().zip(b_extra.iter().zip(&pattern)) {
                    *zj = net.activation.apply(*zj + ej);
                }
                z
            })
            .collect();
        extra_biases.push(b_extra);
        vertex_patterns.push(pattern);
    }
    Ok(PoliceState { extra_biases, vertex_patterns, region: region.clone() })
}

/// Propagate the region vertices under existing extra biases and derive the
/// shared pattern. Errors if any unit has vertices on both sides of zero,
/// i.e. the stored state is stale for these weights.
pub fn derive_police(
    net: &Mlp,
    extra_biases: Vec<Vec<f64>>,
    region: AffineRegion,
) -> Result<PoliceState> {
    check_region_dim(net, &region)?;
    if extra_biases.len() != net.num_layers() - 1 {
        return Err(Error::Shape("extra biases must cover every hidden layer".into()));
    }
    let mut vertex_patterns = Vec::with_capacity(extra_biases.len());
    let traces: Vec<_> = region
        .vertices()
        .iter()
        .map(|v| net.forward_traced(Some(&extra_biases), v))
        .collect::<Result<_>>()?;
    for layer in 0..extra_biases.len() {
        let width = net.layer_dims[layer + 1];
        let mut pattern = vec![false; width];
        for j in 0..width {
            let all_active = traces.iter().all(|t| t.pre_activations[layer][j] >= -PATTERN_TOL);
            let all_inactive = traces.iter().all(|t| t.pre_activations[layer][j] <= PATTERN_TOL);
            pattern[j] = match (all_active, all_inactive) {
                (true, _) => true,
                (false, true) => false,
                (false, false) => {
                    return Err(Error::Certificate(format!(
                        "activation pattern violated at hidden layer {} unit {j}",
                        layer + 1
                    )))
                }
            };
        }
        vertex_patterns.push(pattern);
    }
    Ok(PoliceState { extra_biases, vertex_patterns, region })
}

/// Check that a stored state still pins one pattern under the current weights.
pub fn validate_police(net: &Mlp, police: &PoliceState) -> Result<()> {
    let derived = derive_police(net, police.extra_biases.clone(), police.region.clone())?;
    for (layer, (stored, fresh)) in police
        .vertex_patterns
        .iter()
        .zip(&derived.vertex_patterns)
        .enumerate()
    {
        for (j, (s, f)) in stored.iter().zip(fresh).enumerate() {
            // A unit whose every vertex sits inside the tolerance band is
            // consistent with either sign; only hard flips are stale.
            if s != f {
                let flippable = police.region.vertices().iter().all(|v| {
                    let t = net.forward_traced(Some(&police.extra_biases), v).unwrap();
                    t.pre_activations[layer][j].abs() <= PATTERN_TOL
                });
                if !flippable {
                    return Err(Error::Certificate(format!(
                        "stored pattern stale at hidden layer {} unit {j}",
                        layer + 1
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Forward pass through a POLICEd network.
pub fn forward(net: &Mlp, police: Option<&PoliceState>, x: &[f64]) -> Result<Vec<f64>> {
    match police {
        Some(p) => Ok(net
            .forward_traced(Some(&p.extra_biases), x)?
            .activations
            .pop()
            .unwrap()),
        None => net.forward(x),
    }
}

/// Slope/offset of the network restricted to the enforced region.
///
/// `D` is the product of the weight matrices with inactive units damped by
/// the activation's negative slope; `e` anchors the map at the region
/// centroid. Errors if the state is stale, and cross-checks the map against
/// a direct forward pass at every vertex.
pub fn extract_affine_map(net: &Mlp, police: &PoliceState) -> Result<AffineMap> {
    validate_police(net, police)?;
    let slope = net.activation.negative_slope();
    let mut d: Option<Matrix> = None;
    for layer in 0..net.num_layers() {
        let mut w = net.weights[layer].clone();
        if layer < net.num_layers() - 1 {
            let scales: Vec<f64> = police.vertex_patterns[layer]
                .iter()
                .map(|&active| if active { 1.0 } else { slope })
                .collect();
            w.scale_rows_inplace(&scales);
        }
        d = Some(match d {
            None => w,
            Some(prev) => w.matmul(&prev),
        });
    }
    let d = d.unwrap();
    let centroid = police.region.centroid();
    let f_centroid = forward(net, Some(police), &centroid)?;
    let e = sub(&f_centroid, &d.matvec(&centroid));
    let map = AffineMap { d, e };
    for v in police.region.vertices() {
        let fv = forward(net, Some(police), v)?;
        let mv = map.apply(v);
        for (a, b) in fv.iter().zip(&mv) {
            if (a - b).abs() > 1e-6 * (1.0 + a.abs()) {
                return Err(Error::Certificate(format!(
                    "affine map residual {} at a region vertex exceeds tolerance",
                    (a - b).abs()
                )));
            }
        }
    }
    Ok(map)
}

/// Fold the extra biases into the standard biases. The returned network is
/// pointwise equal to the POLICEd one, and the returned state carries zero
/// extra biases (so fusing again is the identity).
pub fn fuse(net: &Mlp, police: &PoliceState) -> (Mlp, PoliceState) {
    let mut fused = net.clone();
    for (b, extra) in fused.biases.iter_mut().zip(&police.extra_biases) {
        for (bj, ej) in b.iter_mut().zip(extra) {
            *bj += ej;
        }
    }
    let cleared = PoliceState {
        extra_biases: police.extra_biases.iter().map(|e| vec![0.0; e.len()]).collect(),
        vertex_patterns: police.vertex_patterns.clone(),
        region: police.region.clone(),
    };
    (fused, cleared)
}

/// Activation pattern of an arbitrary input under the POLICEd forward pass,
/// with zero ties resolved to the active side.
pub fn activation_pattern(net: &Mlp, police: &PoliceState, x: &[f64]) -> Result<Vec<Vec<bool>>> {
    let trace = net.forward_traced(Some(&police.extra_biases), x)?;
    Ok(trace.pre_activations[..net.num_layers() - 1]
        .iter()
        .map(|z| z.iter().map(|&q| q >= 0.0).collect())
        .collect())
}

/// Pattern comparison that tolerates units sitting exactly on the kink,
/// where both linearizations coincide.
pub fn pattern_matches(
    net: &Mlp,
    police: &PoliceState,
    x: &[f64],
) -> Result<bool> {
    let trace = net.forward_traced(Some(&police.extra_biases), x)?;
    for (layer, pattern) in police.vertex_patterns.iter().enumerate() {
        for (j, &active) in pattern.iter().enumerate() {
            let q = trace.pre_activations[layer][j];
            let ok = if active { q >= -PATTERN_TOL } else { q <= PATTERN_TOL };
            if !ok {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

pub fn affine_residual_at(net: &Mlp, police: &PoliceState, map: &AffineMap, x: &[f64]) -> Result<f64> {
    let fx = forward(net, Some(police), x)?;
    let mx = map.apply(x);
    Ok(fx
        .iter()
        .zip(&mx)
        .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
        .fold(0.0, f64::max))
}

/// Convenience for the single-row constraint products used by the verifier.
pub fn project(c: &[f64], s: &[f64]) -> f64 {
    dot(c, s)
}
