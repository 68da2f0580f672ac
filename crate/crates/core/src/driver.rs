//! Driver grammar `f(t, x, y, z) = c(t, x) + βy + μ·sin(y) + λ‖z‖_X + b'Ψz`.
//!
//! Every term has an exactly computable Lipschitz pair: `l₁ = |β| + |μ|` and
//! `l₂ = λ + max ‖b‖_X` over states and segments, which is what the
//! comparison assumptions need as certified inputs.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::chain::{path_rng, RateMatrix};
use crate::geometry::{PsiCache, PsiMatrix};
use crate::report::VerdictReport;
use crate::solver::{BsdeSolution, CellTable, Side, TimeGrid};
use crate::tolerances::{DRIVER_ORDER, LINEARIZATION_ZERO};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriverError {
    #[error("unknown driver term `{0}`")]
    UnknownTerm(String),
    #[error("base term jumps by {gap} at t = {time} in state {state}")]
    DiscontinuousBase { time: f64, state: usize, gap: f64 },
    #[error("lambda must be nonnegative, got {0}")]
    NegativeLambda(f64),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("malformed driver document: {0}")]
    Malformed(String),
}

/// Polynomial pieces of the base in time; piece `k` applies from `t` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasePiece {
    pub t: f64,
    pub poly: Vec<Vec<f64>>,
}

/// `height·sin²(π(t − start)/(end − start))` on `[start, end]`, zero outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub start: f64,
    pub end: f64,
    pub height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<usize>>,
}

/// State-dependent base `c(t, x)`; all present terms are summed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseDocument {
    #[serde(rename = "const", default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_state: Option<Vec<f64>>,
    /// Ascending-power coefficients in `t`, one list per state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poly: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub piecewise: Option<Vec<BasePiece>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bump: Option<Bump>,
}

const DRIVER_KEYS: &[&str] = &["base", "beta", "mu", "lambda", "b_vec", "inactive_states"];
const BASE_KEYS: &[&str] = &["const", "per_state", "poly", "piecewise", "bump"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<BaseDocument>,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_vec: Option<Vec<f64>>,
    /// States on which the driver is switched off (absorbing transformation).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inactive_states: Vec<usize>,
}

impl DriverDocument {
    pub fn seminorm(lambda: f64) -> Self {
        Self { lambda, ..Self::default() }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_b_vec(mut self, b: Vec<f64>) -> Self {
        self.b_vec = Some(b);
        self
    }

    pub fn with_const(mut self, c: f64) -> Self {
        self.base.get_or_insert_with(BaseDocument::default).constant = Some(c);
        self
    }

    pub fn with_per_state(mut self, c: Vec<f64>) -> Self {
        self.base.get_or_insert_with(BaseDocument::default).per_state = Some(c);
        self
    }

    pub fn with_poly(mut self, p: Vec<Vec<f64>>) -> Self {
        self.base.get_or_insert_with(BaseDocument::default).poly = Some(p);
        self
    }

    pub fn with_bump(mut self, bump: Bump) -> Self {
        self.base.get_or_insert_with(BaseDocument::default).bump = Some(bump);
        self
    }

    pub fn bind(&self, chain: &RateMatrix) -> Result<DriverSpec, DriverError> {
        DriverSpec::bind(self.clone(), chain)
    }
}

fn check_keys(v: &Value, allowed: &[&str]) -> Result<(), DriverError> {
    let obj = v.as_object().ok_or_else(|| DriverError::Malformed("expected an object".into()))?;
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(DriverError::UnknownTerm(k.clone()));
        }
    }
    Ok(())
}

/// Parses a driver document and certifies it against `chain`.
pub fn parse_driver(text: &str, chain: &RateMatrix) -> Result<DriverSpec, DriverError> {
    let v: Value = serde_json::from_str(text).map_err(|e| DriverError::Malformed(e.to_string()))?;
    parse_driver_value(&v, chain)
}

pub fn parse_driver_value(v: &Value, chain: &RateMatrix) -> Result<DriverSpec, DriverError> {
    check_keys(v, DRIVER_KEYS)?;
    if let Some(base) = v.get("base") {
        check_keys(base, BASE_KEYS)?;
    }
    let doc: DriverDocument = serde_json::from_value(v.clone()).map_err(|e| DriverError::Malformed(e.to_string()))?;
    DriverSpec::bind(doc, chain)
}

fn poly_eval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// A driver certified against one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverSpec {
    doc: DriverDocument,
    n_states: usize,
    /// Base and inactive states are looked up at `state % base_modulus`.
    base_modulus: usize,
    b_vec: Option<DVector<f64>>,
    inactive: Vec<bool>,
    l1: f64,
    l2: f64,
}

impl DriverSpec {
    pub fn bind(doc: DriverDocument, chain: &RateMatrix) -> Result<Self, DriverError> {
        let n = chain.n_states();
        if !(doc.lambda >= 0.0) {
            return Err(DriverError::NegativeLambda(doc.lambda));
        }
        for (name, v) in [("beta", doc.beta), ("mu", doc.mu), ("lambda", doc.lambda)] {
            if !v.is_finite() {
                return Err(DriverError::Malformed(format!("{name} is not finite")));
            }
        }
        if let Some(base) = &doc.base {
            check_base(base, n)?;
        }
        let b_vec = match &doc.b_vec {
            Some(b) if b.len() != n => {
                return Err(DriverError::DimensionMismatch { what: "b_vec", expected: n, got: b.len() })
            }
            Some(b) => Some(DVector::from_vec(b.clone())),
            None => None,
        };
        let mut inactive = vec![false; n];
        for &s in &doc.inactive_states {
            if s >= n {
                return Err(DriverError::DimensionMismatch { what: "inactive_states", expected: n, got: s });
            }
            inactive[s] = true;
        }
        let mut spec = Self { doc, n_states: n, base_modulus: n, b_vec, inactive, l1: 0.0, l2: 0.0 };
        spec.certify(chain);
        Ok(spec)
    }

    fn certify(&mut self, chain: &RateMatrix) {
        self.l1 = self.doc.beta.abs() + self.doc.mu.abs();
        let cache = PsiCache::new(chain);
        let b_norm = match &self.b_vec {
            Some(b) => (0..cache.n_segments())
                .flat_map(|k| (0..self.n_states).map(move |i| (k, i)))
                .map(|(k, i)| cache.entry(k, i).psi.quadratic_form(b).max(0.0).sqrt())
                .fold(0.0, f64::max),
            None => 0.0,
        };
        self.l2 = self.doc.lambda + b_norm;
    }

    pub fn document(&self) -> &DriverDocument {
        &self.doc
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn l1(&self) -> f64 {
        self.l1
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn beta(&self) -> f64 {
        self.doc.beta
    }

    pub fn mu(&self) -> f64 {
        self.doc.mu
    }

    pub fn lambda(&self) -> f64 {
        self.doc.lambda
    }

    pub fn b_vec(&self) -> Option<&DVector<f64>> {
        self.b_vec.as_ref()
    }

    /// `f(t, x, y, 0) = 0` for all arguments: no base, `β = 0`, `μ = 0`.
    pub fn is_normalized(&self) -> bool {
        self.base_is_zero() && self.doc.beta == 0.0 && self.doc.mu == 0.0
    }

    pub fn base_is_zero(&self) -> bool {
        match &self.doc.base {
            None => true,
            Some(b) => {
                b.constant.map_or(true, |c| c == 0.0)
                    && b.per_state.as_ref().map_or(true, |v| v.iter().all(|&c| c == 0.0))
                    && b.poly.as_ref().map_or(true, |p| p.iter().flatten().all(|&c| c == 0.0))
                    && b.piecewise.as_ref().map_or(true, |ps| ps.iter().all(|p| p.poly.iter().flatten().all(|&c| c == 0.0)))
                    && b.bump.as_ref().map_or(true, |bm| bm.height == 0.0)
            }
        }
    }

    /// No `t`-dependence in the base.
    pub fn base_is_time_invariant(&self) -> bool {
        match &self.doc.base {
            None => true,
            Some(b) => {
                b.poly.as_ref().map_or(true, |p| p.iter().all(|c| c.iter().skip(1).all(|&v| v == 0.0)))
                    && b.piecewise.is_none()
                    && b.bump.as_ref().map_or(true, |bm| bm.height == 0.0)
            }
        }
    }

    /// Driver reduces to `c(x) + βy`: no sine, seminorm, or Ψ-linear terms.
    pub fn is_linear_in_y_only(&self) -> bool {
        self.doc.mu == 0.0
            && self.doc.lambda == 0.0
            && self.b_vec.as_ref().map_or(true, |b| b.iter().all(|&v| v == 0.0))
    }

    pub fn is_inactive(&self, state: usize) -> bool {
        self.inactive[state]
    }

    /// Times where the base changes formula; the solver places nodes there.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(b) = &self.doc.base {
            if let Some(ps) = &b.piecewise {
                out.extend(ps.iter().skip(1).map(|p| p.t));
            }
            if let Some(bm) = &b.bump {
                out.push(bm.start);
                out.push(bm.end);
            }
        }
        out
    }

    /// `c(t, x)`.
    pub fn base_value(&self, t: f64, state: usize) -> f64 {
        let Some(b) = &self.doc.base else { return 0.0 };
        let s = state % self.base_modulus;
        let mut v = b.constant.unwrap_or(0.0);
        if let Some(ps) = &b.per_state {
            v += ps[s];
        }
        if let Some(p) = &b.poly {
            v += poly_eval(&p[s], t);
        }
        if let Some(pieces) = &b.piecewise {
            let k = pieces.partition_point(|p| p.t <= t).max(1) - 1;
            v += poly_eval(&pieces[k].poly[s], t);
        }
        if let Some(bm) = &b.bump {
            let applies = bm.states.as_ref().map_or(true, |st| st.contains(&s));
            if applies && t >= bm.start && t <= bm.end {
                let x = (PI * (t - bm.start) / (bm.end - bm.start)).sin();
                v += bm.height * x * x;
            }
        }
        v
    }

    /// The driver value without dimension checks.
    pub fn value(&self, t: f64, state: usize, y: f64, z: &DVector<f64>, psi: &PsiMatrix) -> f64 {
        if self.inactive[state] {
            return 0.0;
        }
        let mut v = self.base_value(t, state) + self.doc.beta * y;
        if self.doc.mu != 0.0 {
            v += self.doc.mu * y.sin();
        }
        if self.doc.lambda != 0.0 {
            v += self.doc.lambda * psi.quadratic_form(z).max(0.0).sqrt();
        }
        if let Some(b) = &self.b_vec {
            v += psi.bilinear(b, z);
        }
        v
    }

    pub fn evaluate(&self, t: f64, state: usize, y: f64, z: &DVector<f64>, psi: &PsiMatrix) -> Result<f64, DriverError> {
        if z.len() != self.n_states {
            return Err(DriverError::DimensionMismatch { what: "z", expected: self.n_states, got: z.len() });
        }
        if psi.dim() != self.n_states || state >= self.n_states {
            return Err(DriverError::DimensionMismatch { what: "psi", expected: self.n_states, got: psi.dim() });
        }
        Ok(self.value(t, state, y, z, psi))
    }

    /// Same driver with the listed states switched off.
    pub fn with_inactive(&self, states: &[usize]) -> Self {
        let mut out = self.clone();
        for &s in states {
            out.inactive[s] = true;
            if !out.doc.inactive_states.contains(&s) {
                out.doc.inactive_states.push(s);
            }
        }
        out.doc.inactive_states.sort_unstable();
        out
    }

    /// Re-certify `l₂` against another chain on the same state space.
    pub fn rebind(&self, chain: &RateMatrix) -> Self {
        let mut out = self.clone();
        out.certify(chain);
        out
    }

    /// Lift to the tagged chain of [`RateMatrix::tagged`]: state `tag·N + j`
    /// sees the base of `j` and `b_vec` is replicated per block.
    pub fn lift_tagged(&self, tagged: &RateMatrix) -> Self {
        let n = self.n_states;
        let mut out = self.clone();
        out.n_states = n * n;
        out.b_vec = self.b_vec.as_ref().map(|b| DVector::from_fn(n * n, |k, _| b[k % n]));
        out.inactive = (0..n * n).map(|k| self.inactive[k % n]).collect();
        out.certify(tagged);
        out
    }
}

fn check_base(base: &BaseDocument, n: usize) -> Result<(), DriverError> {
    if let Some(ps) = &base.per_state {
        if ps.len() != n {
            return Err(DriverError::DimensionMismatch { what: "base.per_state", expected: n, got: ps.len() });
        }
    }
    if let Some(p) = &base.poly {
        if p.len() != n {
            return Err(DriverError::DimensionMismatch { what: "base.poly", expected: n, got: p.len() });
        }
    }
    if let Some(pieces) = &base.piecewise {
        if pieces.is_empty() {
            return Err(DriverError::Malformed("base.piecewise is empty".into()));
        }
        for p in pieces {
            if p.poly.len() != n {
                return Err(DriverError::DimensionMismatch { what: "base.piecewise.poly", expected: n, got: p.poly.len() });
            }
        }
        for w in pieces.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(DriverError::Malformed("base.piecewise times must increase".into()));
            }
            for s in 0..n {
                let gap = poly_eval(&w[1].poly[s], w[1].t) - poly_eval(&w[0].poly[s], w[1].t);
                if gap.abs() > 1e-10 {
                    return Err(DriverError::DiscontinuousBase { time: w[1].t, state: s, gap });
                }
            }
        }
    }
    if let Some(bm) = &base.bump {
        if !(bm.end > bm.start) {
            return Err(DriverError::Malformed("bump end must exceed start".into()));
        }
        if bm.states.as_ref().map_or(false, |st| st.iter().any(|&s| s >= n)) {
            return Err(DriverError::Malformed("bump state out of range".into()));
        }
    }
    Ok(())
}

/// Finite sample of `(t, x, y, z)` on which two drivers are compared.
#[derive(Debug, Clone)]
pub struct OrderGrid {
    pub times: Vec<f64>,
    pub states: Vec<usize>,
    pub ys: Vec<f64>,
    pub zs: Vec<DVector<f64>>,
}

impl OrderGrid {
    /// `n_times` uniform times plus segment boundaries, `n_y` values in
    /// `[−5, 5]`, and `z` made of zero, unit vectors, pairwise differences,
    /// and `n_random_z` Gaussian vectors at scales 0.1, 1, and 10.
    pub fn sampled(chain: &RateMatrix, n_times: usize, n_y: usize, n_random_z: usize, seed: u64) -> Self {
        let n = chain.n_states();
        let horizon = chain.horizon();
        let mut times: Vec<f64> = (0..n_times.max(2)).map(|k| horizon * k as f64 / (n_times.max(2) - 1) as f64).collect();
        for s in chain.segments().iter().skip(1) {
            // both sides of a switch
            times.push(s.start);
            times.push((s.start - 1e-9).max(0.0));
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        let ys: Vec<f64> = (0..n_y.max(1))
            .map(|k| if n_y <= 1 { 0.0 } else { -5.0 + 10.0 * k as f64 / (n_y - 1) as f64 })
            .collect();
        let mut zs = vec![DVector::zeros(n)];
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            zs.push(e);
            for j in (i + 1)..n {
                let mut d = DVector::zeros(n);
                d[i] = 1.0;
                d[j] = -1.0;
                zs.push(d);
            }
        }
        let mut rng = path_rng(seed, 0);
        for _ in 0..n_random_z {
            let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            for scale in [0.1, 1.0, 10.0] {
                zs.push(&v * scale);
            }
        }
        Self { times, states: (0..n).collect(), ys, zs }
    }
}

/// Minimum of `f2 − f1` over the grid; ordered iff it is `≥ −1e-12`.
/// A violation on the grid is conclusive, a pass is evidence only.
pub fn driver_order_check(f1: &DriverSpec, f2: &DriverSpec, chain: &RateMatrix, grid: &OrderGrid) -> VerdictReport {
    let cache = PsiCache::new(chain);
    let mut min_gap = f64::INFINITY;
    let mut arg = Value::Null;
    for &t in &grid.times {
        let seg = chain.segment_index(t);
        for &x in &grid.states {
            let psi = &cache.entry(seg, x).psi;
            for &y in &grid.ys {
                for (zi, z) in grid.zs.iter().enumerate() {
                    let gap = f2.value(t, x, y, z, psi) - f1.value(t, x, y, z, psi);
                    if gap < min_gap {
                        min_gap = gap;
                        arg = json!({"t": t, "state": x, "y": y, "z_index": zi, "z": z.as_slice(), "gap": gap});
                    }
                }
            }
        }
    }
    let points = grid.times.len() * grid.states.len() * grid.ys.len() * grid.zs.len();
    let mut report = VerdictReport::new("driver_order")
        .tolerance("order", DRIVER_ORDER)
        .margin("grid_points", points as f64)
        .margin("min_gap", min_gap);
    report.witness = Some(arg.clone());
    report.conclude(min_gap >= -DRIVER_ORDER, "min_gap", min_gap, || arg)
}

/// `a_s` and `b_s` of the linearized difference equation, tabulated per
/// grid cell and state along two solutions on the same grid.
#[derive(Debug, Clone)]
pub struct LinearizationCoefficients {
    pub grid: TimeGrid,
    pub a: CellTable<f64>,
    pub b: CellTable<DVector<f64>>,
    /// Projected `Z = ΨΨ†(u² − u¹)` at each cell end.
    pub z: CellTable<DVector<f64>>,
}

impl LinearizationCoefficients {
    pub fn a_at(&self, t: f64, state: usize, side: Side) -> f64 {
        self.a.interp(&self.grid, t, state, side)
    }

    pub fn b_at(&self, t: f64, state: usize, side: Side) -> DVector<f64> {
        self.b.interp(&self.grid, t, state, side)
    }
}

/// `a_s = [f₁(Y², Z²) − f₁(Y¹, Z²)]/(Y² − Y¹)` and
/// `b_s = [f₁(Y¹, Z²) − f₁(Y¹, Z¹)]·Z'/|Z|²` with `Z = Z² − Z¹` projected,
/// each set to zero where its denominator vanishes.
pub fn linearization_coeffs(
    f1: &DriverSpec,
    sol1: &BsdeSolution,
    sol2: &BsdeSolution,
    chain: &RateMatrix,
) -> LinearizationCoefficients {
    let grid = sol1.grid().clone();
    assert_eq!(grid.times(), sol2.grid().times(), "solutions must share a grid");
    let n = chain.n_states();
    let cache = PsiCache::new(chain);
    let mut a_tab = CellTable { start: Vec::new(), end: Vec::new() };
    let mut b_tab = CellTable { start: Vec::new(), end: Vec::new() };
    let mut z_tab = CellTable { start: Vec::new(), end: Vec::new() };
    for c in 0..grid.n_cells() {
        let seg = grid.cell_segment(c);
        for (node, target) in [(c, 0), (c + 1, 1)] {
            let t = grid.times()[node];
            let u1 = sol1.u(node);
            let u2 = sol2.u(node);
            let mut av = Vec::with_capacity(n);
            let mut bv = Vec::with_capacity(n);
            let mut zv = Vec::with_capacity(n);
            for i in 0..n {
                let e = cache.entry(seg, i);
                let (y1, y2) = (u1[i], u2[i]);
                let dy = y2 - y1;
                let a = if dy.abs() > LINEARIZATION_ZERO {
                    (f1.value(t, i, y2, u2, &e.psi) - f1.value(t, i, y1, u2, &e.psi)) / dy
                } else {
                    0.0
                };
                let z = &e.projector * (u2 - u1);
                let zz = z.norm_squared();
                let b = if zz > LINEARIZATION_ZERO * LINEARIZATION_ZERO {
                    &z * ((f1.value(t, i, y1, u2, &e.psi) - f1.value(t, i, y1, u1, &e.psi)) / zz)
                } else {
                    DVector::zeros(n)
                };
                av.push(a);
                bv.push(b);
                zv.push(z);
            }
            let (ta, tb, tz) = if target == 0 {
                (&mut a_tab.start, &mut b_tab.start, &mut z_tab.start)
            } else {
                (&mut a_tab.end, &mut b_tab.end, &mut z_tab.end)
            };
            ta.push(av);
            tb.push(bv);
            tz.push(zv);
        }
    }
    LinearizationCoefficients { grid, a: a_tab, b: b_tab, z: z_tab }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_z, psi};
    use proptest::prelude::*;
    use rand::Rng;

    fn two_state() -> RateMatrix {
        RateMatrix::from_rows(&[&[-1.0, 1.0], &[1.0, -1.0]], 1.0).unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn parse_examples() {
        let a = two_state();
        let f = parse_driver(r#"{"lambda": 0.3}"#, &a).unwrap();
        assert!(f.is_normalized());
        assert_eq!((f.l1(), f.l2()), (0.0, 0.3));

        let f = parse_driver(r#"{"beta": 0.1, "base": {"const": 1}}"#, &a).unwrap();
        assert!(!f.is_normalized());
        assert_eq!((f.l1(), f.l2()), (0.1, 0.0));
        let p = psi(&a, 0.0, 0).unwrap();
        assert!((f.evaluate(0.3, 0, 2.0, &v(&[0.0, 0.0]), &p).unwrap() - 1.2).abs() < 1e-15);

        let f = parse_driver(r#"{"b_vec": [1, 0]}"#, &a).unwrap();
        assert!((f.l2() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn parse_errors() {
        let a = two_state();
        assert_eq!(parse_driver(r#"{"gamma": 1}"#, &a).unwrap_err(), DriverError::UnknownTerm("gamma".into()));
        assert_eq!(parse_driver(r#"{"base": {"exp": 1}}"#, &a).unwrap_err(), DriverError::UnknownTerm("exp".into()));
        assert_eq!(parse_driver(r#"{"lambda": -0.1}"#, &a).unwrap_err(), DriverError::NegativeLambda(-0.1));
        let err = parse_driver(
            r#"{"base": {"piecewise": [{"t": 0, "poly": [[0], [0]]}, {"t": 0.5, "poly": [[1], [0]]}]}}"#,
            &a,
        )
        .unwrap_err();
        assert!(matches!(err, DriverError::DiscontinuousBase { state: 0, .. }));
        assert!(matches!(parse_driver(r#"{"b_vec": [1, 0, 0]}"#, &a), Err(DriverError::DimensionMismatch { .. })));
    }

    #[test]
    fn continuous_piecewise_base_is_accepted() {
        let a = two_state();
        let f = parse_driver(
            r#"{"base": {"piecewise": [{"t": 0, "poly": [[0, 2], [1]]}, {"t": 0.5, "poly": [[1], [1]]}]}}"#,
            &a,
        )
        .unwrap();
        assert_eq!(f.breakpoints(), vec![0.5]);
        assert!((f.base_value(0.25, 0) - 0.5).abs() < 1e-15);
        assert!((f.base_value(0.75, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_examples() {
        let a = two_state();
        let p = psi(&a, 0.0, 0).unwrap();
        let f = DriverDocument::seminorm(0.3).bind(&a).unwrap();
        assert_eq!(f.evaluate(0.0, 0, 5.0, &v(&[0.0, 0.0]), &p).unwrap(), 0.0);
        let f = DriverDocument::seminorm(1.0).bind(&a).unwrap();
        assert!((f.evaluate(0.0, 0, 0.0, &v(&[1.0, 0.0]), &p).unwrap() - 1.0).abs() < 1e-15);
        let f = DriverDocument::default().with_beta(0.1).bind(&a).unwrap();
        assert!((f.evaluate(0.0, 0, 2.0, &v(&[0.0, 0.0]), &p).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(f.evaluate(0.0, 0, 2.0, &v(&[0.0]), &p), Err(DriverError::DimensionMismatch { .. })));
    }

    #[test]
    fn bump_is_continuous_and_vanishes_outside() {
        let a = two_state();
        let f = DriverDocument::default()
            .with_bump(Bump { start: 0.2, end: 0.6, height: 2.0, states: None })
            .bind(&a)
            .unwrap();
        assert_eq!(f.base_value(0.1, 0), 0.0);
        assert!(f.base_value(0.2, 1).abs() < 1e-15);
        assert!((f.base_value(0.4, 1) - 2.0).abs() < 1e-15);
        assert!(f.base_value(0.6, 0).abs() < 1e-15);
    }

    #[test]
    fn order_check_examples() {
        let a = two_state();
        let grid = OrderGrid::sampled(&a, 11, 5, 4, 1);
        let f1 = DriverDocument::seminorm(0.3).bind(&a).unwrap();
        let r = driver_order_check(&f1, &f1, &a, &grid);
        assert!(r.is_pass());
        assert_eq!(r.margins["min_gap"], 0.0);

        let f2 = DriverDocument::seminorm(0.3).with_const(0.5).bind(&a).unwrap();
        let r = driver_order_check(&f1, &f2, &a, &grid);
        assert!(r.is_pass());
        assert!((r.margins["min_gap"] - 0.5).abs() < 1e-12);

        let hi = DriverDocument::seminorm(0.4).bind(&a).unwrap();
        let r = driver_order_check(&hi, &f1, &a, &grid);
        assert!(!r.is_pass());
        // min of −0.1‖z‖_X, attained at the largest sampled z
        assert!(r.margins["min_gap"] < 0.0);
        let w = r.witness.unwrap();
        let z: Vec<f64> = serde_json::from_value(w["z"].clone()).unwrap();
        let p = psi(&a, 0.0, w["state"].as_u64().unwrap() as usize).unwrap();
        let expected = -0.1 * crate::geometry::seminorm(&DVector::from_vec(z), &p).unwrap();
        assert!((r.margins["min_gap"] - expected).abs() < 1e-12);
    }

    fn arb_driver() -> impl Strategy<Value = DriverDocument> {
        (-1.0f64..1.0, -1.0f64..1.0, 0.0f64..1.0, proptest::collection::vec(-1.0f64..1.0, 3), -2.0f64..2.0).prop_map(
            |(beta, mu, lambda, b, c)| {
                DriverDocument::seminorm(lambda).with_beta(beta).with_mu(mu).with_b_vec(b).with_const(c)
            },
        )
    }

    fn chain3() -> RateMatrix {
        RateMatrix::from_rows(&[&[-1.2, 0.4, 0.0], &[0.7, -0.4, 2.0], &[0.5, 0.0, -2.0]], 1.0).unwrap()
    }

    proptest! {
        #[test]
        fn lipschitz_certificate_holds(doc in arb_driver(), seed in 0u64..10_000) {
            let a = chain3();
            let f = doc.bind(&a).unwrap();
            let mut rng = path_rng(seed, 1);
            for state in 0..3 {
                let p = psi(&a, 0.0, state).unwrap();
                for _ in 0..50 {
                    let y1: f64 = rng.sample::<f64, _>(StandardNormal) * 3.0;
                    let y2: f64 = rng.sample::<f64, _>(StandardNormal) * 3.0;
                    let z1 = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let z2 = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let lhs = (f.value(0.1, state, y1, &z1, &p) - f.value(0.1, state, y2, &z2, &p)).abs();
                    let rhs = f.l1() * (y1 - y2).abs() + f.l2() * crate::geometry::seminorm(&(&z1 - &z2), &p).unwrap();
                    prop_assert!(lhs <= rhs + 1e-10);
                }
            }
        }

        #[test]
        fn drivers_see_z_only_through_projection(doc in arb_driver(), seed in 0u64..10_000) {
            let a = chain3();
            let f = doc.bind(&a).unwrap();
            let mut rng = path_rng(seed, 2);
            for state in 0..3 {
                let p = psi(&a, 0.0, state).unwrap();
                let z = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
                let pz = project_z(&p, &z).unwrap();
                let y = rng.sample::<f64, _>(StandardNormal);
                prop_assert!((f.value(0.0, state, y, &z, &p) - f.value(0.0, state, y, &pz, &p)).abs() <= 1e-10);
            }
        }

        #[test]
        fn normalized_drivers_vanish_at_zero_z(lambda in 0.0f64..2.0, b in proptest::collection::vec(-1.0f64..1.0, 3), y in -10.0f64..10.0) {
            let a = chain3();
            let f = DriverDocument::seminorm(lambda).with_b_vec(b).bind(&a).unwrap();
            prop_assert!(f.is_normalized());
            for state in 0..3 {
                let p = psi(&a, 0.0, state).unwrap();
                prop_assert_eq!(f.value(0.4, state, y, &DVector::zeros(3), &p), 0.0);
            }
        }
    }
}
