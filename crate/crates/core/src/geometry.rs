//! Constraint geometry: axis-aligned boxes, a single affine inequality, and
//! the buffer slab sitting directly below the constraint boundary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::dot;
use crate::{Error, Result};

const DEDUP_TOL: f64 = 1e-9;
const MEMBER_TOL: f64 = 1e-12;

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl AxisBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Shape("box bounds have mixed dimensions".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::Config("box lower bound exceeds upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, s: &[f64], tol: f64) -> bool {
        s.len() == self.dim()
            && s.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *x >= l - tol && *x <= u + tol)
    }

    pub fn clamp(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (l, u))| x.max(*l).min(*u))
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| if l == u { *l } else { rng.random_range(*l..=*u) })
            .collect()
    }

    /// All 2ⁿ corners.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|k| if mask >> k & 1 == 1 { self.upper[k] } else { self.lower[k] })
                    .collect()
            })
            .collect()
    }
}

/// Single affine inequality `C s ≤ d` with `C` a row vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineConstraint {
    pub c: Vec<f64>,
    pub d: f64,
}

impl AffineConstraint {
    pub fn new(c: Vec<f64>, d: f64) -> Result<Self> {
        if c.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("constraint row must have a nonzero entry".into()));
        }
        Ok(Self { c, d })
    }

    /// `C s`.
    pub fn value(&self, s: &[f64]) -> f64 {
        dot(&self.c, s)
    }

    /// Index of the only nonzero coefficient, if the constraint is
    /// axis-aligned.
    pub fn axis(&self) -> Option<usize> {
        let mut nonzero = self.c.iter().enumerate().filter(|(_, v)| **v != 0.0);
        let first = nonzero.next()?;
        if nonzero.next().is_none() {
            Some(first.0)
        } else {
            None
        }
    }
}

/// Slab `{s : C s ∈ [d − r, d]}` intersected with a clamp box, with its
/// vertex list materialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buffer {
    pub constraint: AffineConstraint,
    pub radius: f64,
    pub clamp_box: AxisBox,
    pub vertices: Vec<Vec<f64>>,
}

fn dedup(points: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for p in points {
        let dup = out
            .iter()
            .any(|q| q.iter().zip(&p).all(|(a, b)| (a - b).abs() <= DEDUP_TOL));
        if !dup {
            out.push(p);
        }
    }
    out
}

/// Vertices of `clamp_box ∩ {d − r ≤ C s ≤ d}`.
///
/// Every vertex of a box-slab intersection is either a box corner inside the
/// slab or the point where a box edge pierces one of the two bounding
/// hyperplanes, so enumerating those candidates is exact.
pub fn build_buffer(constraint: &AffineConstraint, radius: f64, clamp_box: &AxisBox) -> Result<Buffer> {
    if radius <= 0.0 {
        return Err(Error::Config(format!("buffer radius must be positive, got {radius}")));
    }
    if constraint.c.len() != clamp_box.dim() {
        return Err(Error::Shape("constraint and clamp box dimensions differ".into()));
    }
    let lo = constraint.d - radius;
    let hi = constraint.d;
    let in_slab = |s: &[f64]| {
        let y = constraint.value(s);
        y >= lo - DEDUP_TOL && y <= hi + DEDUP_TOL
    };

    let mut candidates: Vec<Vec<f64>> = clamp_box
        .corners()
        .into_iter()
        .filter(|c| in_slab(c))
        .collect();

    // Box edges: pick a free coordinate k, pin the others to corner values.
    let n = clamp_box.dim();
    for k in 0..n {
        let ck = constraint.c[k];
        if ck == 0.0 {
            continue;
        }
        let others: Vec<usize> = (0..n).filter(|&i| i != k).collect();
        for mask in 0..1usize << others.len() {
            let mut point = vec![0.0; n];
            for (bit, &i) in others.iter().enumerate() {
                point[i] = if mask >> bit & 1 == 1 { clamp_box.upper[i] } else { clamp_box.lower[i] };
            }
            let rest: f64 = others.iter().map(|&i| constraint.c[i] * point[i]).sum();
            for plane in [hi, lo] {
                let xk = (plane - rest) / ck;
                if xk >= clamp_box.lower[k] - DEDUP_TOL && xk <= clamp_box.upper[k] + DEDUP_TOL {
                    point[k] = xk.clamp(clamp_box.lower[k], clamp_box.upper[k]);
                    if in_slab(&point) {
                        candidates.push(point.clone());
                    }
                }
            }
        }
    }

    let vertices = dedup(candidates);
    if vertices.is_empty() {
        return Err(Error::InfeasibleBuffer(
            "clamp box does not intersect the constraint slab".into(),
        ));
    }
    Ok(Buffer { constraint: constraint.clone(), radius, clamp_box: clamp_box.clone(), vertices })
}

impl Buffer {
    /// Closed membership test with a tight tolerance.
    pub fn contains(&self, s: &[f64]) -> bool {
        if !self.clamp_box.contains(s, MEMBER_TOL) {
            return false;
        }
        let y = self.constraint.value(s);
        y >= self.constraint.d - self.radius - MEMBER_TOL && y <= self.constraint.d + MEMBER_TOL
    }

    pub fn dim(&self) -> usize {
        self.clamp_box.dim()
    }

    /// When the constraint is axis-aligned the buffer is itself a box.
    pub fn as_box(&self) -> Option<AxisBox> {
        let k = self.constraint.axis()?;
        let ck = self.constraint.c[k];
        let (mut a, mut b) = ((self.constraint.d - self.radius) / ck, self.constraint.d / ck);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        let mut lower = self.clamp_box.lower.clone();
        let mut upper = self.clamp_box.upper.clone();
        lower[k] = lower[k].max(a);
        upper[k] = upper[k].min(b);
        if lower[k] > upper[k] {
            return None;
        }
        Some(AxisBox { lower, upper })
    }
}

/// Strictly-safe test: `s ∈ S` and `C s < d`.
pub fn is_safe(constraint: &AffineConstraint, state_box: &AxisBox, s: &[f64]) -> bool {
    state_box.contains(s, MEMBER_TOL) && constraint.value(s) < constraint.d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn section6_buffer() -> Buffer {
        let c = AffineConstraint::new(vec![0.0, 1.0], 0.7).unwrap();
        let clamp = AxisBox::new(vec![0.4, 0.0], vec![1.0, 1.0]).unwrap();
        build_buffer(&c, 0.1, &clamp).unwrap()
    }

    fn sort_vertices(mut v: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn implementation_walkthrough_vertices() {
        let buffer = section6_buffer();
        let got = sort_vertices(buffer.vertices.clone());
        let want = sort_vertices(vec![
            vec![0.4, 0.7],
            vec![1.0, 0.7],
            vec![1.0, 0.6],
            vec![0.4, 0.6],
        ]);
        assert_eq!(got.len(), 4);
        for (g, w) in got.iter().zip(&want) {
            for (a, b) in g.iter().zip(w) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn axis_aligned_constraint_gives_two_to_the_n_vertices() {
        for n in 2..=4usize {
            let mut c = vec![0.0; n];
            c[n - 1] = 1.0;
            let constraint = AffineConstraint::new(c, 0.5).unwrap();
            let clamp = AxisBox::new(vec![0.0; n], vec![1.0; n]).unwrap();
            let buffer = build_buffer(&constraint, 0.25, &clamp).unwrap();
            assert_eq!(buffer.vertices.len(), 1 << n);
            for v in &buffer.vertices {
                assert!(v[n - 1] == 0.25 || v[n - 1] == 0.5);
            }
        }
    }

    /// Brute-force candidate oracle: box corners plus every (vertex pair
    /// differing in one coordinate) × (plane) intersection, filtered by
    /// membership of both the slab and the box.
    fn oracle_vertices(constraint: &AffineConstraint, radius: f64, clamp: &AxisBox) -> Vec<Vec<f64>> {
        let corners = clamp.corners();
        let mut candidates: Vec<Vec<f64>> = Vec::new();
        let lo = constraint.d - radius;
        let hi = constraint.d;
        for c in &corners {
            let y = constraint.value(c);
            if y >= lo - 1e-9 && y <= hi + 1e-9 {
                candidates.push(c.clone());
            }
        }
        for i in 0..corners.len() {
            for j in i + 1..corners.len() {
                let diff: Vec<usize> = (0..clamp.dim())
                    .filter(|&k| corners[i][k] != corners[j][k])
                    .collect();
                if diff.len() != 1 {
                    continue;
                }
                for plane in [lo, hi] {
                    let (a, b) = (&corners[i], &corners[j]);
                    let ya = constraint.value(a);
                    let yb = constraint.value(b);
                    if (ya - plane) * (yb - plane) > 0.0 || ya == yb {
                        continue;
                    }
                    let t = (plane - ya) / (yb - ya);
                    let p: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect();
                    if clamp.contains(&p, 1e-9) {
                        candidates.push(p);
                    }
                }
            }
        }
        sort_vertices(dedup(candidates))
    }

    #[test]
    fn diagonal_constraint_matches_brute_force_oracle() {
        let constraint = AffineConstraint::new(vec![1.0, 1.0], 1.0).unwrap();
        let clamp = AxisBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let buffer = build_buffer(&constraint, 0.5, &clamp).unwrap();
        let got = sort_vertices(buffer.vertices.clone());
        let want = oracle_vertices(&constraint, 0.5, &clamp);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            for (a, b) in g.iter().zip(w) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn random_slabs_match_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(2..=3);
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0f64)).collect();
            if c.iter().all(|v| v.abs() < 1e-3) {
                continue;
            }
            let constraint = AffineConstraint::new(c, rng.random_range(-0.5..=0.5)).unwrap();
            let clamp = AxisBox::new(vec![-1.0; n], vec![1.0; n]).unwrap();
            let radius = rng.random_range(0.1..=1.0);
            match build_buffer(&constraint, radius, &clamp) {
                Ok(buffer) => {
                    let got = sort_vertices(buffer.vertices.clone());
                    let want = oracle_vertices(&constraint, radius, &clamp);
                    assert_eq!(got.len(), want.len());
                    for (g, w) in got.iter().zip(&want) {
                        for (a, b) in g.iter().zip(w) {
                            assert!((a - b).abs() < 1e-8);
                        }
                    }
                }
                Err(_) => {
                    assert!(oracle_vertices(&constraint, radius, &clamp).is_empty());
                }
            }
        }
    }

    #[test]
    fn vertices_satisfy_slab_inequalities() {
        let buffer = section6_buffer();
        for v in &buffer.vertices {
            let y = buffer.constraint.value(v);
            assert!(y >= 0.6 - 1e-9 && y <= 0.7 + 1e-9);
            assert!(buffer.clamp_box.contains(v, 1e-9));
        }
    }

    #[test]
    fn convex_combinations_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let constraint = AffineConstraint::new(vec![0.5, -1.0], 0.2).unwrap();
        let clamp = AxisBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let buffer = build_buffer(&constraint, 0.4, &clamp).unwrap();
        for _ in 0..500 {
            let mut weights: Vec<f64> =
                (0..buffer.vertices.len()).map(|_| rng.random::<f64>()).collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            let mut s = vec![0.0; 2];
            for (w, v) in weights.iter().zip(&buffer.vertices) {
                s[0] += w * v[0];
                s[1] += w * v[1];
            }
            assert!(buffer.contains(&s));
        }
    }

    #[test]
    fn membership_examples() {
        let buffer = section6_buffer();
        assert!(buffer.contains(&[0.7, 0.65]));
        assert!(!buffer.contains(&[0.7, 0.75]));
        assert!(!buffer.contains(&[0.2, 0.65]));
    }

    #[test]
    fn empty_intersection_is_an_error() {
        let c = AffineConstraint::new(vec![0.0, 1.0], 5.0).unwrap();
        let clamp = AxisBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(build_buffer(&c, 0.1, &clamp), Err(Error::InfeasibleBuffer(_))));
    }

    #[test]
    fn safe_set_is_strict() {
        let c = AffineConstraint::new(vec![0.0, 1.0], 0.7).unwrap();
        let s_box = AxisBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(is_safe(&c, &s_box, &[0.5, 0.5]));
        assert!(!is_safe(&c, &s_box, &[0.5, 0.7]));
        assert!(!is_safe(&c, &s_box, &[1.5, 0.5]));
    }

    #[test]
    fn buffer_as_box_round_trip() {
        let buffer = section6_buffer();
        let b = buffer.as_box().unwrap();
        assert_eq!(b.lower, vec![0.4, 0.6]);
        assert_eq!(b.upper, vec![1.0, 0.7]);
    }
}
