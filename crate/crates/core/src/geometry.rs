//! Predictable covariation density `Ψ`, its Moore–Penrose pseudoinverse, the
//! state-dependent seminorm `‖C‖_X = √(C'ΨC)`, the `Z`-projection `ΨΨ†`, and
//! the quantitative assumption margin `l₂‖Ψ†‖√(6m)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::chain::{ensemble_map, path_rng, ChainError, RateMatrix};
use crate::report::VerdictReport;
use crate::stats::MeanSe;
use crate::tolerances::{
    MARGIN_EQUALITY, MOORE_PENROSE, NORM_BOUND_SLACK, PINV_CUTOFF, PSD, SEMINORM_RADICAND, SE_MULTIPLIER, SYMMETRY,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not symmetric (asymmetry {0})")]
    NotSymmetric(f64),
    #[error("matrix is not square")]
    NotSquare,
    #[error("quadratic form C'ΨC = {0} is negative; Ψ is not positive semidefinite")]
    NegativeRadicand(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// `Ψ_t = diag(A_t X_t) − diag(X_t) A_t' − A_t diag(X_t)` at `X_t = e_state`.
///
/// Symmetric, positive semidefinite, and `Ψ𝟙 = 0`; `d⟨X,X⟩_t = Ψ_t dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiMatrix {
    pub state: usize,
    pub time: f64,
    pub matrix: DMatrix<f64>,
}

impl PsiMatrix {
    /// Wraps an arbitrary matrix; no invariant is checked.
    pub fn from_parts(state: usize, time: f64, matrix: DMatrix<f64>) -> Self {
        Self { state, time, matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `C'ΨC` evaluated on `C − C_state·𝟙`. Equal to the plain form whenever
    /// `Ψ𝟙 = 0`, and for a chain `Ψ` it reduces to a sum of nonnegative
    /// terms `Σ_{j≠i} A_ji (C_j − C_i)²`, so constants give exactly zero.
    pub fn quadratic_form(&self, c: &DVector<f64>) -> f64 {
        let d = shifted(c, self.state);
        d.dot(&(&self.matrix * &d))
    }

    /// `b'Ψz`, shifted the same way as [`PsiMatrix::quadratic_form`].
    pub fn bilinear(&self, b: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let db = shifted(b, self.state);
        let dz = shifted(z, self.state);
        db.dot(&(&self.matrix * &dz))
    }
}

fn shifted(c: &DVector<f64>, state: usize) -> DVector<f64> {
    let base = c[state];
    c.map(|v| v - base)
}

/// The three-term definition applied to one generator.
pub fn psi_of_generator(a: &DMatrix<f64>, state: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut e = DVector::zeros(n);
    e[state] = 1.0;
    let diag_e = DMatrix::from_diagonal(&e);
    DMatrix::from_diagonal(&(a * &e)) - &diag_e * a.transpose() - a * &diag_e
}

pub fn psi(a: &RateMatrix, t: f64, state: usize) -> Result<PsiMatrix, GeometryError> {
    a.check_state(state)?;
    a.check_time(t)?;
    Ok(PsiMatrix { state, time: t, matrix: psi_of_generator(a.generator_at(t), state) })
}

/// Moore–Penrose pseudoinverse of a symmetric matrix through its
/// eigendecomposition; eigenvalues with `|λ| ≤ 1e-10·max(1, |λ|_max)` are
/// dropped.
pub fn pseudoinverse(s: &DMatrix<f64>) -> Result<DMatrix<f64>, GeometryError> {
    if !s.is_square() {
        return Err(GeometryError::NotSquare);
    }
    let asym = (s - s.transpose()).amax();
    if asym > SYMMETRY * s.amax().max(1.0) {
        return Err(GeometryError::NotSymmetric(asym));
    }
    let n = s.nrows();
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.amax();
    let cutoff = PINV_CUTOFF * lmax.max(1.0);
    let mut out = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > cutoff {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / l;
        }
    }
    Ok(out)
}

/// `√(C'ΨC)`, clamping radicands in `[−1e-12, 0)` to zero.
pub fn seminorm(c: &DVector<f64>, psi: &PsiMatrix) -> Result<f64, GeometryError> {
    if c.len() != psi.dim() {
        return Err(GeometryError::DimensionMismatch { expected: psi.dim(), got: c.len() });
    }
    let q = psi.quadratic_form(c);
    if q < -SEMINORM_RADICAND {
        return Err(GeometryError::NegativeRadicand(q));
    }
    Ok(q.max(0.0).sqrt())
}

/// `ΨΨ†z`: the representative of `z` modulo the seminorm kernel.
pub fn project_z(psi: &PsiMatrix, z: &DVector<f64>) -> Result<DVector<f64>, GeometryError> {
    if z.len() != psi.dim() {
        return Err(GeometryError::DimensionMismatch { expected: psi.dim(), got: z.len() });
    }
    let dagger = pseudoinverse(&psi.matrix)?;
    Ok(&psi.matrix * (dagger * z))
}

/// Per-(segment, state) geometry computed once for a chain.
#[derive(Debug, Clone)]
pub struct PsiEntry {
    pub psi: PsiMatrix,
    pub dagger: DMatrix<f64>,
    pub projector: DMatrix<f64>,
    /// `Ψ†(e_j − e_i)` for each target `j`; the jump response of `ΔV`.
    pub jump_response: Vec<DVector<f64>>,
    /// `Ψ† A e_i`; the drift of `dM` seen through `Ψ†`.
    pub drift_response: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct PsiCache {
    entries: Vec<Vec<PsiEntry>>,
}

impl PsiCache {
    pub fn new(a: &RateMatrix) -> Self {
        let n = a.n_states();
        let entries = a
            .segments()
            .iter()
            .map(|seg| {
                (0..n)
                    .map(|i| {
                        let m = psi_of_generator(&seg.generator, i);
                        let dagger = pseudoinverse(&m).expect("Ψ is symmetric by construction");
                        let projector = &m * &dagger;
                        let jump_response = (0..n)
                            .map(|j| {
                                let mut w = DVector::zeros(n);
                                w[j] += 1.0;
                                w[i] -= 1.0;
                                &dagger * w
                            })
                            .collect();
                        let drift_response = &dagger * seg.generator.column(i);
                        PsiEntry {
                            psi: PsiMatrix { state: i, time: seg.start, matrix: m },
                            dagger,
                            projector,
                            jump_response,
                            drift_response,
                        }
                    })
                    .collect()
            })
            .collect();
        Self { entries }
    }

    pub fn entry(&self, segment: usize, state: usize) -> &PsiEntry {
        &self.entries[segment][state]
    }

    pub fn n_segments(&self) -> usize {
        self.entries.len()
    }

    /// `max ‖Ψ†‖_F` over segments and states.
    pub fn sup_dagger_norm(&self) -> f64 {
        self.entries.iter().flatten().map(|e| e.dagger.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginClass {
    /// `l₂‖Ψ†‖√(6m) < 1`
    Strict,
    /// `l₂‖Ψ†‖√(6m) = 1`
    Weak,
    Violated,
}

impl MarginClass {
    /// Weak or strict: the jump bound `|ΔV| ≤ 1` holds.
    pub fn admits_comparison(self) -> bool {
        !matches!(self, MarginClass::Violated)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionMargin {
    pub l2: f64,
    pub sup_psi_dagger_norm: f64,
    pub m: f64,
    pub product: f64,
    pub classification: MarginClass,
    /// Largest `l₂` keeping the product at or below one.
    pub l2_max: f64,
}

pub fn classify(product: f64) -> MarginClass {
    if (product - 1.0).abs() <= MARGIN_EQUALITY {
        MarginClass::Weak
    } else if product < 1.0 {
        MarginClass::Strict
    } else {
        MarginClass::Violated
    }
}

pub fn assumption_margin(a: &RateMatrix, l2: f64) -> AssumptionMargin {
    assumption_margin_cached(a, &PsiCache::new(a), l2)
}

pub fn assumption_margin_cached(a: &RateMatrix, cache: &PsiCache, l2: f64) -> AssumptionMargin {
    let sup = cache.sup_dagger_norm();
    let m = a.m_declared();
    let denom = sup * (6.0 * m).sqrt();
    let product = l2 * denom;
    AssumptionMargin {
        l2,
        sup_psi_dagger_norm: sup,
        m,
        product,
        classification: classify(product),
        l2_max: if denom > 0.0 { 1.0 / denom } else { f64::INFINITY },
    }
}

/// One row of the geometry table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRow {
    pub state: usize,
    pub segment: usize,
    pub min_eig: f64,
    pub psi_dagger_norm: f64,
    pub bound_ratio_max: f64,
}

/// Ratio `‖C‖_X / (√(3m)|C|)`; zero when the denominator vanishes.
fn bound_ratio(c: &DVector<f64>, psi: &PsiMatrix, m: f64) -> f64 {
    let num = psi.quadratic_form(c).max(0.0).sqrt();
    let den = (3.0 * m).sqrt() * c.norm();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Random sweep of `‖C‖_X ≤ √(3m)|C|` over every segment and state, plus
/// the per-(segment, state) table of Ψ diagnostics.
pub fn geometry_sweep(a: &RateMatrix, samples: usize, seed: u64) -> (Vec<GeometryRow>, VerdictReport) {
    let n = a.n_states();
    let m = a.m_declared();
    let cache = PsiCache::new(a);
    let mut rng = path_rng(seed, u64::MAX);
    let cs: Vec<DVector<f64>> = (0..samples)
        .map(|_| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    let mut witness = None;
    for seg in 0..cache.n_segments() {
        for i in 0..n {
            let e = cache.entry(seg, i);
            let min_eig = e.psi.matrix.clone().symmetric_eigen().eigenvalues.min();
            let mut ratio_max = 0.0f64;
            for c in &cs {
                let ratio = bound_ratio(c, &e.psi, m);
                ratio_max = ratio_max.max(ratio);
                let bound = (3.0 * m).sqrt() * c.norm() + NORM_BOUND_SLACK;
                if e.psi.quadratic_form(c).max(0.0).sqrt() > bound && witness.is_none() {
                    witness = Some(json!({"segment": seg, "state": i, "C": c.as_slice(), "ratio": ratio}));
                }
            }
            worst = worst.max(ratio_max);
            rows.push(GeometryRow { state: i, segment: seg, min_eig, psi_dagger_norm: e.dagger.norm(), bound_ratio_max: ratio_max });
        }
    }
    let mut report = VerdictReport::new("norm_bound")
        .seed(seed)
        .tolerance("bound_slack", NORM_BOUND_SLACK)
        .margin("m", m)
        .margin("samples", samples as f64);
    for (k, r) in rows.iter().enumerate() {
        report.push_row(format!("ratio[seg{}:state{}]", r.segment, r.state), k, r.bound_ratio_max, r.bound_ratio_max <= 1.0 + NORM_BOUND_SLACK);
    }
    let report = report.conclude(witness.is_none(), "max_bound_ratio", worst, || witness.unwrap());
    (rows, report)
}

/// `‖C‖_X ≤ √(3m)|C|` for `samples` random `C` at every segment and state.
pub fn norm_bound_check(a: &RateMatrix, samples: usize, seed: u64) -> VerdictReport {
    geometry_sweep(a, samples, seed).1
}

/// `Σ_{jumps} ΔXΔX' − ∫₀ᵀ Ψ_s ds` has zero mean: its ensemble mean must lie
/// within `SE_MULTIPLIER` standard errors of zero in every component.
pub fn bracket_consistency(a: &RateMatrix, x0: usize, n_paths: usize, seed: u64) -> Result<VerdictReport, GeometryError> {
    let n = a.n_states();
    let cache = PsiCache::new(a);
    let horizon = a.horizon();
    let samples = ensemble_map(a, x0, horizon, n_paths, seed, |p| {
        let mut acc = DMatrix::<f64>::zeros(n, n);
        let times = p.jump_times();
        let states = p.post_jump_states();
        for k in 0..times.len() {
            let from = if k == 0 { p.initial_state() } else { states[k - 1] };
            let to = states[k];
            acc[(from, from)] += 1.0;
            acc[(to, to)] += 1.0;
            acc[(from, to)] -= 1.0;
            acc[(to, from)] -= 1.0;
        }
        for (t0, t1, s) in p.sojourns() {
            for (seg, sg) in a.segments().iter().enumerate() {
                let lo = sg.start.max(t0);
                let hi = a.segment_end(seg).min(t1);
                if hi > lo {
                    acc -= &cache.entry(seg, s).psi.matrix * (hi - lo);
                }
            }
        }
        acc
    })?;
    let mut report = VerdictReport::new("bracket")
        .seed(seed)
        .tolerance("se_multiplier", SE_MULTIPLIER)
        .margin("n_paths", n_paths as f64);
    let mut worst = 0.0f64;
    let mut witness = None;
    for i in 0..n {
        for j in 0..n {
            let vals: Vec<f64> = samples.iter().map(|m| m[(i, j)]).collect();
            let est = MeanSe::from_slice(&vals);
            let ok = est.agrees_with(0.0, SE_MULTIPLIER);
            worst = worst.max(est.z_score(0.0));
            report.push_row(format!("L[{i}][{j}]"), i * n + j, est.mean, ok);
            if !ok && witness.is_none() {
                witness = Some(json!({"component": [i, j], "mean": est.mean, "se": est.se}));
            }
        }
    }
    Ok(report.conclude(witness.is_none(), "max_z_score", worst, || witness.unwrap()))
}

fn penrose_residual(q: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let qd = q * d;
    let dq = d * q;
    let r1 = (&qd * q - q).amax();
    let r2 = (&dq * d - d).amax();
    let r3 = (&qd - qd.transpose()).amax();
    let r4 = (&dq - dq.transpose()).amax();
    r1.max(r2).max(r3).max(r4)
}

/// Symmetry, positive semidefiniteness, `Ψ𝟙 = 0` and the four Moore–Penrose
/// identities at every segment and state.
pub fn psi_invariant_check(a: &RateMatrix) -> VerdictReport {
    let n = a.n_states();
    let cache = PsiCache::new(a);
    let ones = DVector::from_element(n, 1.0);
    let (mut asym, mut neg, mut kernel, mut penrose) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut witness = None;
    for seg in 0..cache.n_segments() {
        for i in 0..n {
            let e = cache.entry(seg, i);
            let q = &e.psi.matrix;
            let s = (q - q.transpose()).amax();
            let min_eig = q.clone().symmetric_eigen().eigenvalues.min();
            let k = (q * &ones).amax();
            let p = penrose_residual(q, &e.dagger);
            asym = asym.max(s);
            neg = neg.max(-min_eig);
            kernel = kernel.max(k);
            penrose = penrose.max(p);
            if (s > SYMMETRY || min_eig < -PSD || k > SYMMETRY || p > MOORE_PENROSE) && witness.is_none() {
                witness = Some(json!({"segment": seg, "state": i, "asymmetry": s, "min_eig": min_eig, "kernel": k, "penrose": p}));
            }
        }
    }
    let mut report = VerdictReport::new("psi_invariants")
        .tolerance("symmetry", SYMMETRY)
        .tolerance("psd", PSD)
        .tolerance("moore_penrose", MOORE_PENROSE)
        .margin("max_asymmetry", asym)
        .margin("max_negative_eig", neg)
        .margin("max_kernel_residual", kernel)
        .margin("max_penrose_residual", penrose);
    report.push_row("asymmetry", 0, asym, asym <= SYMMETRY);
    report.push_row("negative_eig", 0, neg, neg <= PSD);
    report.push_row("kernel", 0, kernel, kernel <= SYMMETRY);
    report.push_row("penrose", 0, penrose, penrose <= MOORE_PENROSE);
    report.conclude(witness.is_none(), "max_penrose_residual", penrose, || witness.unwrap())
}

/// Invariants and the norm bound on `n_generators` random chains with
/// `min_states..=max_states` states; every third generator is sparse.
pub fn geometry_suite(n_generators: usize, min_states: usize, max_states: usize, samples: usize, seed: u64) -> Result<VerdictReport, GeometryError> {
    let reports: Vec<(usize, VerdictReport, VerdictReport)> = (0..n_generators)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(seed, k as u64);
            let n = rng.random_range(min_states..=max_states);
            let sparsity = if k % 3 == 2 { 0.4 } else { 0.0 };
            let a = RateMatrix::random(&mut rng, n, 0.05, 3.0, sparsity, 1.0)?;
            Ok((n, psi_invariant_check(&a), norm_bound_check(&a, samples, seed.wrapping_add(k as u64))))
        })
        .collect::<Result<_, GeometryError>>()?;
    let mut report = VerdictReport::new("geometry_suite")
        .seed(seed)
        .tolerance("symmetry", SYMMETRY)
        .tolerance("psd", PSD)
        .tolerance("moore_penrose", MOORE_PENROSE)
        .tolerance("bound_slack", NORM_BOUND_SLACK)
        .margin("generators", n_generators as f64)
        .margin("samples", samples as f64);
    let mut worst_penrose = 0.0f64;
    let mut worst_ratio = 0.0f64;
    let mut witness = None;
    for (k, (n, inv, bound)) in reports.iter().enumerate() {
        let p = inv.margins["max_penrose_residual"];
        let r = bound.worst_margin.as_ref().map_or(0.0, |w| w.value);
        worst_penrose = worst_penrose.max(p);
        worst_ratio = worst_ratio.max(r);
        report.push_row(format!("invariants[n={n}]"), k, p, inv.is_pass());
        report.push_row(format!("bound_ratio[n={n}]"), k, r, bound.is_pass());
        if witness.is_none() {
            for sub in [inv, bound] {
                if !sub.is_pass() {
                    witness = Some(json!({"generator": k, "check": sub.experiment, "witness": sub.witness}));
                    break;
                }
            }
        }
    }
    report = report.margin("max_penrose_residual", worst_penrose).margin("max_bound_ratio", worst_ratio);
    Ok(report.conclude(witness.is_none(), "max_bound_ratio", worst_ratio, || witness.unwrap()))
}
