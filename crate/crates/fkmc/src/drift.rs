//! Drift and minorization audits.
//!
//! The certificates produced elsewhere (eigen-triples, small-set pairs,
//! variance thresholds) are only meaningful when the kernel satisfies a
//! multiplicative drift condition,
//! Q(e^V)(x) <= e^{V(x)(1 - delta) + b 1_{C_d}(x)},
//! together with a minorization of Q^{m0} on the sublevel set
//! C_d = {V <= d}. None of that can be proved by a program for a general
//! model, but it can be audited: evaluate the transform Q(e^V) either in
//! closed form or by quadrature, sweep a grid spanning C_{3d}, and report
//! the empirical constant b on C_d along with any violation found outside.
//! A clean report is strong evidence, a violation is a proof of failure.
//!
//! The same machinery covers the strengthened variance-side condition on
//! Q(e^{(1+eps)V}), the drift the twisted kernel inherits from (lambda,
//! h0), and the closed-form CIR drift constants.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::finite::FiniteModel;
use crate::logspace::log_sum_exp;
use crate::model::{FkModel, Kernel, StateSpace};
use crate::models::{self, CirParams};
use crate::spectral::{twisted_kernel, SmallSetCertificate, SpectralTriple};

/// Grid resolution of the continuous-state sweeps.
pub const DRIFT_GRID_POINTS: usize = 2001;

// Simpson nodes for the quadrature fallback; odd so the rule closes.
const QUAD_POINTS: usize = 4001;

// The integrand must have decayed by this many nats at the window edge,
// otherwise the truncated sum says nothing about the integral. e^-34 is
// below the roundoff floor of a sum of a few thousand doubles.
const TAIL_MARGIN: f64 = 34.0;

// Sweep half-width used when V is bounded, so C_{3d} is the whole space
// and gives no natural truncation.
const BOUNDED_V_SPAN: f64 = 20.0;

// The geometric rate grid {0.00, 0.01, ..., 0.99}.
const RHO_STEPS: usize = 100;

/// Drift functions V. The continuous checks need a shape they can
/// evaluate anywhere (and build grids and closed forms from); finite
/// models take a per-state table.
#[derive(Debug, Clone)]
pub enum VFn {
    /// a x^2 + c
    Quadratic { a: f64, c: f64 },
    /// a |x| + c
    AbsLinear { a: f64, c: f64 },
    /// a x + c, for kernels on the positive half line
    Linear { a: f64, c: f64 },
    /// one value per state of a finite model
    Table(Vec<f64>),
}

impl VFn {
    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            VFn::Quadratic { a, c } => Ok(a * x * x + c),
            VFn::AbsLinear { a, c } => Ok(a * x.abs() + c),
            VFn::Linear { a, c } => Ok(a * x + c),
            VFn::Table(_) => Err(Error::InvalidArgument(
                "a tabulated V has no continuous evaluation".into(),
            )),
        }
    }

    // (1 + eps) V keeps the shape, so the closed forms and windows of the
    // base check apply verbatim to the variance-side check.
    fn scaled(&self, f: f64) -> VFn {
        match self {
            VFn::Quadratic { a, c } => VFn::Quadratic { a: f * a, c: f * c },
            VFn::AbsLinear { a, c } => VFn::AbsLinear { a: f * a, c: f * c },
            VFn::Linear { a, c } => VFn::Linear { a: f * a, c: f * c },
            VFn::Table(t) => VFn::Table(t.iter().map(|v| f * v).collect()),
        }
    }

    fn table_for(&self, dim: usize) -> Result<&[f64]> {
        match self {
            VFn::Table(t) if t.len() == dim => Ok(t),
            VFn::Table(t) => Err(Error::DimensionMismatch(format!(
                "V tabulates {} states but the model has {dim}",
                t.len()
            ))),
            _ => Err(Error::InvalidArgument(
                "finite-model drift checks need VFn::Table".into(),
            )),
        }
    }
}

/// The hypothesis being audited: V, the contraction delta, the small-set
/// level d, and optionally the variance-side pair (epsilon, epsilon0).
#[derive(Debug, Clone)]
pub struct DriftSpec {
    pub v_fn: VFn,
    pub delta: f64,
    pub d: f64,
    pub epsilon: Option<f64>,
    pub epsilon0: Option<f64>,
}

impl DriftSpec {
    pub fn new(
        v_fn: VFn,
        delta: f64,
        d: f64,
        epsilon: Option<f64>,
        epsilon0: Option<f64>,
    ) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        if !(d >= 1.0) || !d.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "the small-set level d must be >= 1, got {d}"
            )));
        }
        // V >= 1 everywhere: the norm weights are v = e^V >= e and the
        // iterated drift bound needs V >= 0.
        let shape_ok = match &v_fn {
            VFn::Quadratic { a, c } | VFn::AbsLinear { a, c } | VFn::Linear { a, c } => {
                *a >= 0.0 && a.is_finite() && *c >= 1.0 && c.is_finite()
            }
            VFn::Table(t) => !t.is_empty() && t.iter().all(|v| *v >= 1.0 && v.is_finite()),
        };
        if !shape_ok {
            return Err(Error::InvalidArgument(
                "V must be >= 1 everywhere (need a >= 0 and c >= 1, or table entries >= 1)"
                    .into(),
            ));
        }
        match (epsilon, epsilon0) {
            (None, None) => {}
            (Some(e), Some(e0)) => {
                if !(e0 > 0.0 && e0 < e) || !e.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "need 0 < epsilon0 < epsilon, got epsilon = {e}, epsilon0 = {e0}"
                    )));
                }
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "epsilon and epsilon0 come as a pair".into(),
                ))
            }
        }
        Ok(DriftSpec { v_fn, delta, d, epsilon, epsilon0 })
    }

    fn variance_pair(&self) -> Result<(f64, f64)> {
        match (self.epsilon, self.epsilon0) {
            (Some(e), Some(e0)) => Ok((e, e0)),
            _ => Err(Error::InvalidArgument(
                "the variance-side drift check needs epsilon and epsilon0".into(),
            )),
        }
    }
}

/// How to evaluate Q(e^V) on continuous models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    ClosedForm,
    Quadrature,
}

#[derive(Debug, Clone)]
pub struct DriftViolation {
    /// grid point (continuous) or state label (finite)
    pub state: String,
    /// by how many nats the bound failed there
    pub margin: f64,
}

/// Outcome of a drift audit. `b_empirical` is the supremum of the drift
/// margin over C_d (the additive constant the hypothesis needs there);
/// `rho`/`b_geo` are filled by the twisted-kernel checks, which certify a
/// geometric rate instead of a log-scale contraction.
#[derive(Debug, Clone)]
pub struct DriftReport {
    pub holds: bool,
    pub b_empirical: f64,
    pub rho: Option<f64>,
    pub b_geo: Option<f64>,
    pub worst_violation: Option<DriftViolation>,
    pub check_points: usize,
}

impl DriftReport {
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "holds={}", self.holds);
        let _ = writeln!(s, "b_empirical={:e}", self.b_empirical);
        if let Some(r) = self.rho {
            let _ = writeln!(s, "rho={r:e}");
        }
        if let Some(b) = self.b_geo {
            let _ = writeln!(s, "b_geo={b:e}");
        }
        if let Some(w) = &self.worst_violation {
            let _ = writeln!(s, "violation_state={}", w.state);
            let _ = writeln!(s, "violation_margin={:e}", w.margin);
        }
        let _ = writeln!(s, "check_points={}", self.check_points);
        s
    }
}

/// The pointwise (H2) margin log Q(e^V)(x) - (1 - delta) V(x); the grid
/// checks report sups of exactly this quantity.
pub fn drift_margin(model: &FkModel, spec: &DriftSpec, mode: EvalMode, x: f64) -> Result<f64> {
    Ok(log_q_exp_v(model, &spec.v_fn, mode, x)? - (1.0 - spec.delta) * spec.v_fn.eval(x)?)
}

/// Audit Q(e^V) <= e^{V(1-delta) + b 1_{C_d}} over a grid spanning C_{3d}.
pub fn check_mult_drift(model: &FkModel, spec: &DriftSpec, mode: EvalMode) -> Result<DriftReport> {
    sweep_continuous(model, spec, mode, &spec.v_fn, 1.0 - spec.delta)
}

/// Audit the variance-side strengthening
/// Q(e^{(1+eps)V}) <= e^{(1+eps)V - (1+eps0)V + b* 1_{C_d}}, i.e. the
/// margin log Q(e^{(1+eps)V}) - (eps - eps0) V.
pub fn check_drift_var(model: &FkModel, spec: &DriftSpec, mode: EvalMode) -> Result<DriftReport> {
    let (eps, eps0) = spec.variance_pair()?;
    let lhs = spec.v_fn.scaled(1.0 + eps);
    sweep_continuous(model, spec, mode, &lhs, eps - eps0)
}

/// Finite-state version of `check_mult_drift`; exact, every state is
/// checked.
pub fn check_mult_drift_finite(model: &FiniteModel, spec: &DriftSpec) -> Result<DriftReport> {
    let lhs = spec.table_v(model)?.to_vec();
    sweep_finite(model, spec, &lhs, 1.0 - spec.delta)
}

/// Finite-state version of `check_drift_var`.
pub fn check_drift_var_finite(model: &FiniteModel, spec: &DriftSpec) -> Result<DriftReport> {
    let (eps, eps0) = spec.variance_pair()?;
    let lhs: Vec<f64> = spec.table_v(model)?.iter().map(|t| (1.0 + eps) * t).collect();
    sweep_finite(model, spec, &lhs, eps - eps0)
}

impl DriftSpec {
    fn table_v<'a>(&'a self, model: &FiniteModel) -> Result<&'a [f64]> {
        self.v_fn.table_for(model.dim())
    }
}

/// Build a minorization certificate for Q^{m0} on C_d = {log v <= d} by
/// taking columnwise minima over the rows started in C_d:
/// Q^{m0}(i, j) >= min_{i' in C_d} Q^{m0}(i', j) = epsilon nu(j). This is
/// the largest epsilon for which a state-independent measure works.
pub fn estimate_minorization(
    model: &FiniteModel,
    m0: usize,
    d: f64,
    v_weights: &[f64],
) -> Result<SmallSetCertificate> {
    let dim = model.dim();
    if m0 == 0 {
        return Err(Error::InvalidArgument("m0 must be >= 1".into()));
    }
    if v_weights.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {dim} states",
            v_weights.len()
        )));
    }
    if v_weights.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "v weights must be positive and finite".into(),
        ));
    }
    let mask: Vec<bool> = v_weights.iter().map(|v| v.ln() <= d).collect();
    if !mask.iter().any(|m| *m) {
        return Err(Error::InvalidArgument(format!(
            "C_d is empty at level d = {d}"
        )));
    }
    let qm = model.q().pow(m0);
    let mut mins = vec![f64::INFINITY; dim];
    for i in 0..dim {
        if mask[i] {
            for (j, mn) in mins.iter_mut().enumerate() {
                *mn = mn.min(qm.get(i, j));
            }
        }
    }
    let eps: f64 = mins.iter().sum();
    if !(eps > 0.0) {
        return Err(Error::Certificate(
            "the rows of Q^m0 over C_d share no common support; no minorization measure exists"
                .into(),
        ));
    }
    let nu = mins.iter().map(|m| m / eps).collect();
    Ok(SmallSetCertificate { m0, epsilon_d: eps, nu_d: nu, c_d_mask: mask })
}

/// Drift constants of the exact CIR skeleton, from the noncentral
/// chi-square transform.
#[derive(Debug, Clone, Copy)]
pub struct CirDriftBounds {
    /// smallest admissible small-set level
    pub d_lower: f64,
    /// drift constant b evaluated at d_lower
    pub b_d: f64,
}

/// With V(x) = 1 + 2 c_Delta s x, the transform is linear in V:
///
///   log M(e^V)(x) = zeta (V(x) - 1) - (kappa/2) log(1 - 2s) + 1,
///   zeta = e^{-theta Delta} / (1 - 2s),
///
/// so M(e^V) <= e^{V(1 - delta)} holds exactly when
/// V(x)(1 - zeta - delta) >= 1 - (kappa/2) log(1 - 2s), which is a
/// sublevel-set condition: it pins the threshold d_lower below which V
/// may not be small. s must keep the transform finite and zeta < 1 - delta
/// keeps the threshold positive.
pub fn cir_drift_params(params: &CirParams, s: f64, delta: f64) -> Result<CirDriftBounds> {
    params.validate()?;
    let e = params.exp_decay();
    let s_up = (1.0 - e) / 2.0;
    if !(s > 0.0 && s < s_up) {
        return Err(Error::InvalidArgument(format!(
            "s must lie in (0, {s_up}), got {s}"
        )));
    }
    let zeta = e / (1.0 - 2.0 * s);
    let delta_up = 1.0 - zeta;
    if !(delta > 0.0 && delta < delta_up) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, {delta_up}), got {delta}"
        )));
    }
    let khalf = params.kappa() / 2.0;
    let log1m = (1.0 - 2.0 * s).ln();
    let d_lower = (1.0 - khalf * log1m) / (delta_up - delta);
    // On C_d the transform itself is bounded: log M(e^V) <= d zeta
    // - (kappa/2) log(1-2s) + 1 - zeta <= b_d.
    let b_d = d_lower * zeta - khalf * log1m + 1.0;
    Ok(CirDriftBounds { d_lower, b_d })
}

/// Drift of the twisted kernel. With v_check = V - log h0 + log ||h0||_v
/// the check kernel satisfies, outside C_d,
/// P_check(e^{v_check}) <= rho e^{v_check} for the smallest feasible rho
/// in {0, 0.01, ..., 0.99}, and b_check = sup over C_d of the excess.
/// The report carries rho and uses b_empirical for b_check; nothing is
/// swept because every state is inspected.
pub fn check_twisted_drift(
    model: &FiniteModel,
    triple: &SpectralTriple,
    spec: &DriftSpec,
) -> Result<DriftReport> {
    let v = spec.table_v(model)?;
    let pk = twisted_kernel(model, triple)?;
    let dim = model.dim();
    let log_norm = (0..dim)
        .map(|i| triple.h0[i].ln() - v[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let vtw: Vec<f64> = (0..dim).map(|i| v[i] - triple.h0[i].ln() + log_norm).collect();
    let ev: Vec<f64> = vtw.iter().map(|t| t.exp()).collect();
    let w = pk.mul_vec(&ev);
    let outside: Vec<bool> = v.iter().map(|vi| *vi > spec.d).collect();
    let (rho, worst) = smallest_feasible_rho(&w, &ev, &outside);
    let rho = rho.ok_or_else(|| {
        Error::DriftFailure(format!(
            "no rate in [0, 0.99] dominates the twisted kernel outside C_d (worst ratio {worst:.6})"
        ))
    })?;
    let mut b = 0.0f64;
    for i in 0..dim {
        if !outside[i] {
            b = b.max(w[i] - rho * ev[i]);
        }
    }
    Ok(DriftReport {
        holds: true,
        b_empirical: b,
        rho: Some(rho),
        b_geo: None,
        worst_violation: None,
        check_points: dim,
    })
}

/// Drift in the inflated norm: V* = (1+eps) V - log h0 + log
/// ||h0||_{v^{1+eps}}. Two conclusions are audited at once: the additive
/// form log P_check(e^{V*}) <= V* - V + b_bar (b_bar reported as
/// b_empirical, violations outside C_d flip `holds`), and the geometric
/// form with the smallest feasible rho_bar and its companion constant in
/// b_geo.
pub fn check_v_star_drift(
    model: &FiniteModel,
    triple: &SpectralTriple,
    spec: &DriftSpec,
) -> Result<DriftReport> {
    let v = spec.table_v(model)?;
    let (eps, _) = spec.variance_pair()?;
    let pk = twisted_kernel(model, triple)?;
    let dim = model.dim();
    let up = 1.0 + eps;
    let log_norm = (0..dim)
        .map(|i| triple.h0[i].ln() - up * v[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let vstar: Vec<f64> = (0..dim).map(|i| up * v[i] - triple.h0[i].ln() + log_norm).collect();
    let ev: Vec<f64> = vstar.iter().map(|t| t.exp()).collect();
    let w = pk.mul_vec(&ev);
    let outside: Vec<bool> = v.iter().map(|vi| *vi > spec.d).collect();

    let mut b = f64::NEG_INFINITY;
    let mut worst_v: Option<DriftViolation> = None;
    for i in 0..dim {
        let margin = w[i].ln() - (vstar[i] - v[i]);
        if outside[i] {
            if margin > 0.0 && worst_v.as_ref().map_or(true, |wv| margin > wv.margin) {
                worst_v = Some(DriftViolation { state: model.labels()[i].clone(), margin });
            }
        } else if margin > b {
            b = margin;
        }
    }

    let (rho, worst_ratio) = smallest_feasible_rho(&w, &ev, &outside);
    let rho = rho.ok_or_else(|| {
        Error::DriftFailure(format!(
            "no rate in [0, 0.99] dominates e^{{V*}} outside C_d (worst ratio {worst_ratio:.6})"
        ))
    })?;
    let mut bg = 0.0f64;
    for i in 0..dim {
        if !outside[i] {
            bg = bg.max(w[i] - rho * ev[i]);
        }
    }
    Ok(DriftReport {
        holds: worst_v.is_none(),
        b_empirical: b,
        rho: Some(rho),
        b_geo: Some(bg),
        worst_violation: worst_v,
        check_points: dim,
    })
}

// Feasibility of w <= rho e^v outside C_d is monotone in rho, so the
// smallest grid point at or above the worst ratio is the answer.
fn smallest_feasible_rho(w: &[f64], ev: &[f64], outside: &[bool]) -> (Option<f64>, f64) {
    let mut worst = 0.0f64;
    for i in 0..w.len() {
        if outside[i] {
            worst = worst.max(w[i] / ev[i]);
        }
    }
    for k in 0..RHO_STEPS {
        let rho = k as f64 / RHO_STEPS as f64;
        if worst <= rho {
            return (Some(rho), worst);
        }
    }
    (None, worst)
}

fn sweep_continuous(
    model: &FkModel,
    spec: &DriftSpec,
    mode: EvalMode,
    lhs: &VFn,
    rhs_coeff: f64,
) -> Result<DriftReport> {
    let grid = drift_grid(model, spec)?;
    let mut b = f64::NEG_INFINITY;
    let mut worst: Option<DriftViolation> = None;
    for &x in &grid {
        let vx = spec.v_fn.eval(x)?;
        let margin = log_q_exp_v(model, lhs, mode, x)? - rhs_coeff * vx;
        if vx <= spec.d {
            if margin > b {
                b = margin;
            }
        } else if margin > 0.0 && worst.as_ref().map_or(true, |w| margin > w.margin) {
            worst = Some(DriftViolation { state: format!("{x}"), margin });
        }
    }
    Ok(finish_report(b, worst, grid.len()))
}

fn sweep_finite(
    model: &FiniteModel,
    spec: &DriftSpec,
    lhs: &[f64],
    rhs_coeff: f64,
) -> Result<DriftReport> {
    let v = spec.table_v(model)?;
    let q = model.q();
    let dim = model.dim();
    let mut b = f64::NEG_INFINITY;
    let mut worst: Option<DriftViolation> = None;
    let mut terms = Vec::with_capacity(dim);
    for i in 0..dim {
        terms.clear();
        for j in 0..dim {
            let qij = q.get(i, j);
            if qij > 0.0 {
                terms.push(qij.ln() + lhs[j]);
            }
        }
        let margin = log_sum_exp(&terms) - rhs_coeff * v[i];
        if v[i] <= spec.d {
            if margin > b {
                b = margin;
            }
        } else if margin > 0.0 && worst.as_ref().map_or(true, |w| margin > w.margin) {
            worst = Some(DriftViolation { state: model.labels()[i].clone(), margin });
        }
    }
    Ok(finish_report(b, worst, dim))
}

// b_empirical = -inf means C_d had no points, which certifies a fortiori
// (the inequality held without the indicator term); only +inf or NaN
// invalidate the audit.
fn finish_report(b: f64, worst: Option<DriftViolation>, points: usize) -> DriftReport {
    let holds = worst.is_none() && !b.is_nan() && b < f64::INFINITY;
    DriftReport {
        holds,
        b_empirical: b,
        rho: None,
        b_geo: None,
        worst_violation: worst,
        check_points: points,
    }
}

fn drift_grid(model: &FkModel, spec: &DriftSpec) -> Result<Vec<f64>> {
    let span = 3.0 * spec.d;
    let radius = |growth: f64, c: f64, quadratic: bool| -> Result<f64> {
        if growth == 0.0 {
            return Ok(BOUNDED_V_SPAN);
        }
        if span < c {
            return Err(Error::InvalidArgument(format!(
                "C_3d is empty: V >= {c} everywhere but 3d = {span}"
            )));
        }
        let r = (span - c) / growth;
        Ok(if quadratic { r.sqrt() } else { r })
    };
    let x_max = match &spec.v_fn {
        VFn::Quadratic { a, c } => radius(*a, *c, true)?,
        VFn::AbsLinear { a, c } => radius(*a, *c, false)?,
        VFn::Linear { a, c } => {
            if model.state_space == StateSpace::RealLine {
                return Err(Error::InvalidArgument(
                    "V = a x + c is unbounded below on the real line; it cannot stay >= 1"
                        .into(),
                ));
            }
            radius(*a, *c, false)?
        }
        VFn::Table(_) => {
            return Err(Error::InvalidArgument(
                "tabulated V belongs to the finite-model drift checks".into(),
            ))
        }
    };
    let n = DRIFT_GRID_POINTS;
    let grid = match model.state_space {
        StateSpace::RealLine => {
            let step = 2.0 * x_max / (n - 1) as f64;
            (0..n).map(|k| -x_max + step * k as f64).collect()
        }
        StateSpace::PositiveHalfLine => {
            let lo = x_max / n as f64;
            let step = (x_max - lo) / (n - 1) as f64;
            (0..n).map(|k| lo + step * k as f64).collect()
        }
    };
    Ok(grid)
}

fn log_q_exp_v(model: &FkModel, v: &VFn, mode: EvalMode, x: f64) -> Result<f64> {
    let lm = match mode {
        EvalMode::ClosedForm => log_m_closed(model, v, x)?,
        EvalMode::Quadrature => log_m_quadrature(model, v, x)?,
    };
    Ok(model.log_potential(x) + lm)
}

fn log_m_closed(model: &FkModel, v: &VFn, x: f64) -> Result<f64> {
    let gaussian_mean = match &model.kernel {
        Kernel::GaussianRw => Some(x),
        Kernel::GaussianAr { alpha } => Some(alpha * x),
        Kernel::Cir(_) => None,
    };
    if let Some(m) = gaussian_mean {
        return match v {
            VFn::Quadratic { a, c } => models::gaussian_log_m_exp_quadratic(m, *a, *c),
            VFn::Linear { a, c } => Ok(a * m + 0.5 * a * a + c),
            _ => Err(Error::InvalidArgument(
                "no closed form for this V against a Gaussian step; use quadrature".into(),
            )),
        };
    }
    let Kernel::Cir(p) = &model.kernel else { unreachable!() };
    match v {
        VFn::Linear { a, c } => {
            if *a == 0.0 {
                return Ok(*c);
            }
            let s = a / (2.0 * p.c_delta());
            if s >= 0.5 {
                return Err(Error::DivergentIntegral(format!(
                    "the CIR transform of e^{{{a} y}} does not exist (needs slope < c_delta)"
                )));
            }
            // V = a x + c = (1 + 2 c_delta s x) + (c - 1): shift the
            // unit-offset transform by c - 1
            Ok(models::cir_exp_v_closed_form(p, s, x)? + (c - 1.0))
        }
        _ => Err(Error::InvalidArgument(
            "the CIR kernel has a closed transform only for linear V; use quadrature".into(),
        )),
    }
}

fn log_m_quadrature(model: &FkModel, v: &VFn, x: f64) -> Result<f64> {
    let (mut lo, hi) = quad_window(model, v, x)?;
    let n = QUAD_POINTS;
    let h = (hi - lo) / (n - 1) as f64;
    // |y| kinks at the origin, which costs Simpson an order of accuracy
    // when it falls mid-panel; translate the grid so the kink lands
    // exactly on a panel boundary (an even node) and each panel sees a
    // smooth integrand. The window edges only move by O(h).
    if matches!(v, VFn::AbsLinear { .. }) && lo < 0.0 && hi > 0.0 {
        let k = (-lo / (2.0 * h)).round();
        lo = -(2.0 * h) * k;
    }
    let mut terms = Vec::with_capacity(n);
    let mut peak = f64::NEG_INFINITY;
    let mut edge = f64::NEG_INFINITY;
    for k in 0..n {
        let y = lo + h * k as f64;
        let logf = model.log_density(x, y) + v.eval(y)?;
        if k == 0 || k + 1 == n {
            edge = edge.max(logf);
        }
        peak = peak.max(logf);
        let w = if k == 0 || k + 1 == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        terms.push(logf + (w * h / 3.0).ln());
    }
    if peak == f64::INFINITY || !(edge <= peak - TAIL_MARGIN) {
        return Err(Error::DivergentIntegral(format!(
            "integrand has not decayed at the quadrature window edge (x = {x}); \
             the truncated integral is unreliable"
        )));
    }
    Ok(log_sum_exp(&terms))
}

fn quad_window(model: &FkModel, v: &VFn, x: f64) -> Result<(f64, f64)> {
    match &model.kernel {
        Kernel::GaussianRw | Kernel::GaussianAr { .. } => {
            let m = match &model.kernel {
                Kernel::GaussianRw => x,
                Kernel::GaussianAr { alpha } => alpha * x,
                Kernel::Cir(_) => unreachable!(),
            };
            match v {
                VFn::Quadratic { a, .. } => {
                    if *a >= 0.5 {
                        return Err(Error::DivergentIntegral(format!(
                            "E[e^{{a Z^2}}] diverges for a = {a} >= 1/2"
                        )));
                    }
                    // e^{-(y-m)^2/2 + a y^2} is a Gaussian bump centred at
                    // m/(1-2a) with scale 1/sqrt(1-2a)
                    let center = m / (1.0 - 2.0 * a);
                    let sd = (1.0 - 2.0 * a).sqrt().recip();
                    Ok((center - 14.0 * sd, center + 14.0 * sd))
                }
                // two tilted bumps at m - a and m + a
                VFn::AbsLinear { a, .. } => Ok((m - a.abs() - 16.0, m + a.abs() + 16.0)),
                VFn::Linear { a, .. } => Ok((m + a - 14.0, m + a + 14.0)),
                VFn::Table(_) => Err(Error::InvalidArgument(
                    "a tabulated V has no continuous evaluation".into(),
                )),
            }
        }
        Kernel::Cir(p) => {
            if let VFn::Quadratic { a, .. } = v {
                if *a > 0.0 {
                    return Err(Error::DivergentIntegral(
                        "e^{a y^2} grows faster than the noncentral chi-square tail decays"
                            .into(),
                    ));
                }
            }
            let tilt = match v {
                VFn::Linear { a, .. } => *a,
                VFn::AbsLinear { a, .. } => a.abs(),
                _ => 0.0,
            };
            let s_eff = tilt / (2.0 * p.c_delta());
            if s_eff >= 0.5 {
                return Err(Error::DivergentIntegral(format!(
                    "the CIR transform of e^{{{tilt} y}} does not exist (needs slope < c_delta)"
                )));
            }
            let e = p.exp_decay();
            let mean = p.conditional_mean(x);
            let var = p.sigma * p.sigma * (1.0 - e) / p.theta * (x * e + p.mu * (1.0 - e) / 2.0);
            // tilting by e^{tilt y} turns the noncentral chi-square into
            // another one with scale inflated by 1/(1-2s)
            let infl = 1.0 / (1.0 - 2.0 * s_eff.max(0.0));
            let center = (mean + tilt * var) * infl;
            let sd = var.sqrt() * infl;
            let lo = (center - 24.0 * sd).max(center * 1e-3).max(1e-12);
            Ok((lo, center + 24.0 * sd))
        }
    }
}
