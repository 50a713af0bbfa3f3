//! Spectral analysis of finite Feynman-Kac kernels: the principal
//! eigentriple (lambda, h0, mu0), resolvents and the small-set resolvent
//! construction of h0, the twisted (Doob) kernel, decay-rate fitting for the
//! multiplicative ergodic bound, and the variance-threshold function phi(x)
//! built from that fit.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::finite::FiniteModel;
use crate::linalg::Matrix;

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 1_000_000;

/// Below this absolute size a MET gap is treated as converged noise and
/// excluded from the decay fit.
pub const MET_GAP_FLOOR: f64 = 1e-14;

/// Principal eigendata of a primitive non-negative kernel Q:
/// Q h0 = lambda h0 and mu0 Q = lambda mu0, with mu0 a probability vector
/// and mu0(h0) = 1.
#[derive(Debug, Clone)]
pub struct SpectralTriple {
    pub lambda: f64,
    pub h0: Vec<f64>,
    pub mu0: Vec<f64>,
}

impl SpectralTriple {
    pub fn dim(&self) -> usize {
        self.h0.len()
    }

    /// Columns `state, h0, mu0`; lambda rides in a leading comment line.
    pub fn to_csv_string(&self, labels: &[String]) -> Result<String> {
        if labels.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} states",
                labels.len(),
                self.dim()
            )));
        }
        let mut s = String::new();
        let _ = writeln!(s, "# lambda = {:e}", self.lambda);
        let _ = writeln!(s, "state,h0,mu0");
        for i in 0..self.dim() {
            let _ = writeln!(s, "{},{:e},{:e}", labels[i], self.h0[i], self.mu0[i]);
        }
        Ok(s)
    }
}

// Primitivity test on the sparsity pattern: Q is primitive iff Q^k is
// strictly positive for some k, and for a d x d matrix k <= d^2 suffices
// (Wielandt's bound is (d-1)^2 + 1). Once some power is positive every
// later power is too, so checking the squares Q, Q^2, Q^4, ... until the
// exponent passes d^2 is enough. Rows are u64 bitsets; squaring ORs rows.
fn is_primitive(q: &Matrix) -> bool {
    let d = q.dim();
    if d == 0 {
        return false;
    }
    if (0..d).all(|i| q.row(i).iter().all(|&v| v > 0.0)) {
        return true;
    }
    let words = d.div_ceil(64);
    let mut cur = vec![0u64; d * words];
    for i in 0..d {
        for j in 0..d {
            if q.get(i, j) > 0.0 {
                cur[i * words + j / 64] |= 1u64 << (j % 64);
            }
        }
    }
    let full_last: u64 = if d % 64 == 0 { !0 } else { (1u64 << (d % 64)) - 1 };
    let all_set = |m: &[u64]| -> bool {
        (0..d).all(|i| {
            let row = &m[i * words..(i + 1) * words];
            row[..words - 1].iter().all(|&w| w == !0) && row[words - 1] == full_last
        })
    };
    let mut exp: u128 = 1;
    let limit = (d as u128) * (d as u128);
    loop {
        if all_set(&cur) {
            return true;
        }
        if exp >= limit {
            return false;
        }
        cur = bool_square(&cur, d, words);
        exp *= 2;
    }
}

fn bool_square(cur: &[u64], d: usize, words: usize) -> Vec<u64> {
    let mut out = vec![0u64; d * words];
    for i in 0..d {
        for jw in 0..words {
            let mut bits = cur[i * words + jw];
            while bits != 0 {
                let j = jw * 64 + bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let src = j * words;
                for w in 0..words {
                    out[i * words + w] |= cur[src + w];
                }
            }
        }
    }
    out
}

/// Power iteration with tolerance 1e-12 and iteration cap 10^6.
pub fn principal_triple(model: &FiniteModel) -> Result<SpectralTriple> {
    principal_triple_with(model, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// Forward power iteration for h0, adjoint iteration for mu0. `tol` governs
/// the relative eigenvalue change between iterations; on top of that the sup
/// change of both (max-normalized) iterates must fall to a fixed floor of
/// 1e-14 sqrt(dim). The eigenvalue settles much earlier than the vectors
/// (the Rayleigh estimate is second-order accurate), and downstream users
/// need the vectors themselves: twisted row sums carry the vector error
/// times the spectral gap, and the MET gap tail is compared against an
/// absolute 1e-14 floor. The sqrt(dim) factor leaves room for the matvec
/// rounding noise of large grids.
///
/// Iterates are renormalized by their max entry, so a stochastic kernel
/// applied to the all-ones vector is a bitwise fixed point: doubly
/// stochastic models return lambda = 1, h0 = 1 exactly.
pub fn principal_triple_with(
    model: &FiniteModel,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralTriple> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::InvalidArgument(format!("tol = {tol} (must be positive)")));
    }
    let d = model.dim();
    let q = model.q();
    if !is_primitive(q) {
        return Err(Error::AmbiguousSpectrum(format!(
            "no power Q^k with k <= {} is strictly positive; the kernel is \
             reducible or periodic and has no isolated maximal eigenvalue",
            (d as u128) * (d as u128)
        )));
    }
    let qt = q.transpose();
    let vec_tol = 1e-14 * (d as f64).sqrt();

    let mut h = vec![1.0f64; d];
    let mut mu = vec![1.0 / d as f64; d];
    let mut lam_f = f64::NAN;
    let mut lam_a = f64::NAN;
    let mut delta_f = f64::INFINITY;
    let mut delta_a = f64::INFINITY;
    let mut converged = false;

    for it in 1..=max_iter {
        let wh = q.mul_vec(&h);
        let wm = qt.mul_vec(&mu);
        let nf = wh.iter().sum::<f64>() / h.iter().sum::<f64>();
        let na = wm.iter().sum::<f64>() / mu.iter().sum::<f64>();
        let mh = wh.iter().fold(0.0f64, |a, &x| a.max(x));
        let mm = wm.iter().fold(0.0f64, |a, &x| a.max(x));
        if !(mh > 0.0) || !(mm > 0.0) || !nf.is_finite() || !na.is_finite() {
            return Err(Error::AmbiguousSpectrum(
                "power iterate collapsed or overflowed".into(),
            ));
        }
        let mut dh = 0.0f64;
        let mut dm = 0.0f64;
        for i in 0..d {
            let hn = wh[i] / mh;
            let mn = wm[i] / mm;
            dh = dh.max((hn - h[i]).abs());
            dm = dm.max((mn - mu[i]).abs());
            h[i] = hn;
            mu[i] = mn;
        }
        delta_f = (nf - lam_f).abs();
        delta_a = (na - lam_a).abs();
        lam_f = nf;
        lam_a = na;
        if it >= 2
            && delta_f <= tol * nf.abs()
            && delta_a <= tol * na.abs()
            && dh <= vec_tol
            && dm <= vec_tol
        {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "power iteration did not settle in {max_iter} iterations; last \
             eigenvalue deltas {delta_f:.3e} (forward) / {delta_a:.3e} (adjoint)"
        )));
    }

    // Normalizations: mu0 a probability vector, then mu0(h0) = 1. The
    // Rayleigh quotient mu0(Q h0)/mu0(h0) is accurate to second order in the
    // remaining iterate error, better than either per-side ratio.
    let mu_sum: f64 = mu.iter().sum();
    for m in &mut mu {
        *m /= mu_sum;
    }
    let qh = q.mul_vec(&h);
    let num: f64 = mu.iter().zip(&qh).map(|(a, b)| a * b).sum();
    let den: f64 = mu.iter().zip(&h).map(|(a, b)| a * b).sum();
    let lambda = num / den;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::AmbiguousSpectrum(format!(
            "principal eigenvalue estimate {lambda} is not a positive real"
        )));
    }
    for x in &mut h {
        *x /= den;
    }

    let triple = SpectralTriple { lambda, h0: h, mu0: mu };
    let allowed = (100.0 * tol).max(1e-10);
    let (res_h, res_mu) = eigen_residuals(q, &qt, &triple);
    if res_h > allowed || res_mu > allowed {
        return Err(Error::NonConvergence(format!(
            "eigen-residuals {res_h:.3e} / {res_mu:.3e} exceed {allowed:.1e} \
             after convergence"
        )));
    }
    Ok(triple)
}

// Relative sup residuals of Q h0 = lambda h0 and mu0 Q = lambda mu0.
fn eigen_residuals(q: &Matrix, qt: &Matrix, t: &SpectralTriple) -> (f64, f64) {
    let qh = q.mul_vec(&t.h0);
    let qm = qt.mul_vec(&t.mu0);
    let hmax = t.h0.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let mmax = t.mu0.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let mut rh = 0.0f64;
    let mut rm = 0.0f64;
    for i in 0..t.dim() {
        rh = rh.max((qh[i] - t.lambda * t.h0[i]).abs());
        rm = rm.max((qm[i] - t.lambda * t.mu0[i]).abs());
    }
    (rh / (t.lambda * hmax), rm / (t.lambda * mmax))
}

/// Spectral-radius estimate by the Gelfand formula rho = lim ||A^k||^{1/k},
/// evaluated at k = 2^32 via repeated squaring with max-abs renormalization.
/// The max-row-sum norm dominates the radius, so apart from roundoff the
/// estimate never undershoots, and its upward bias is ~ log(cond)/2^32
/// relative. Cost is 32 dense multiplies: meant for small matrices.
pub fn spectral_radius_estimate(a: &Matrix) -> f64 {
    const SQUARINGS: u32 = 32;
    let s0 = a.max_abs();
    if s0 == 0.0 {
        return 0.0;
    }
    if !s0.is_finite() {
        return f64::INFINITY;
    }
    let mut cur = a.scaled(1.0 / s0);
    let mut log_scale = s0.ln();
    for _ in 0..SQUARINGS {
        cur = cur.mat_mul(&cur);
        let s = cur.max_abs();
        if s == 0.0 {
            // nilpotent: some power vanished exactly
            return 0.0;
        }
        cur = cur.scaled(1.0 / s);
        log_scale = 2.0 * log_scale + s.ln();
    }
    let k = f64::from(SQUARINGS).exp2();
    ((log_scale + cur.max_row_sum().ln()) / k).exp()
}

/// (I theta - Q)^{-1}. Defined for any non-negative kernel (primitive or
/// not), so the gate theta > spectral radius uses the Gelfand estimate
/// rather than the principal triple; the estimate only over-covers, and a
/// theta inside the spectrum that slips past it still fails in the LU solve.
pub fn resolvent(model: &FiniteModel, theta: f64) -> Result<Matrix> {
    if !theta.is_finite() {
        return Err(Error::InvalidArgument(format!("theta = {theta}")));
    }
    let rho = spectral_radius_estimate(model.q());
    if theta <= rho {
        return Err(Error::InvalidArgument(format!(
            "theta = {theta} is not above the spectral radius (estimate \
             {rho:.12e}); the resolvent series diverges"
        )));
    }
    Matrix::identity(model.dim()).scaled(theta).sub(model.q()).inverse()
}

/// A small-set (minorization) certificate: Q^{m0}(x, .) >= epsilon_d nu_d(.)
/// for every state x in C_d, with nu_d a probability vector charging C_d.
///
/// epsilon_d is deliberately not capped at 1: Q is not stochastic, so the
/// componentwise minimum over a small set can sum past 1 wherever the
/// potential is positive (already the 1-state kernel [[e^u]] with u > 0).
#[derive(Debug, Clone)]
pub struct SmallSetCertificate {
    pub m0: usize,
    pub epsilon_d: f64,
    pub nu_d: Vec<f64>,
    pub c_d_mask: Vec<bool>,
}

impl SmallSetCertificate {
    pub fn nu_mass_on_c(&self) -> f64 {
        self.nu_d
            .iter()
            .zip(&self.c_d_mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v)
            .sum()
    }

    // Structural checks that do not touch the model's entries.
    fn basic_checks(&self, dim: usize) -> Result<()> {
        if self.nu_d.len() != dim || self.c_d_mask.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "certificate over {} states applied to a model with {dim}",
                self.nu_d.len()
            )));
        }
        if self.m0 == 0 {
            return Err(Error::Certificate("m0 must be >= 1".into()));
        }
        if !(self.epsilon_d > 0.0) || !self.epsilon_d.is_finite() {
            return Err(Error::Certificate(format!(
                "epsilon_d = {} (must be finite and > 0)",
                self.epsilon_d
            )));
        }
        if self.nu_d.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Certificate("nu_d has a negative or non-finite mass".into()));
        }
        let total: f64 = self.nu_d.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Certificate(format!(
                "nu_d masses sum to {total}, not 1"
            )));
        }
        if !(self.nu_mass_on_c() > 0.0) {
            return Err(Error::Certificate("nu_d puts no mass on C_d".into()));
        }
        Ok(())
    }

    /// Full validation including the minorization inequality
    /// Q^{m0}[i][j] >= epsilon_d nu_d[j] on every row i in C_d
    /// (with 1e-12 relative slack for certificates built elsewhere).
    pub fn validate(&self, model: &FiniteModel) -> Result<()> {
        self.basic_checks(model.dim())?;
        let qm = model.q().pow(self.m0);
        for i in 0..model.dim() {
            if !self.c_d_mask[i] {
                continue;
            }
            for j in 0..model.dim() {
                let need = self.epsilon_d * self.nu_d[j];
                if qm.get(i, j) < need * (1.0 - 1e-12) {
                    return Err(Error::Certificate(format!(
                        "Q^{}[{i}][{j}] = {:.12e} is below epsilon_d nu_d[{j}] = {need:.12e}",
                        self.m0,
                        qm.get(i, j)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The resolvent construction of the eigenfunction:
///
///   H = [ I lambda_theta - (R_theta - theta^{-m0-1} epsilon_d 1_C (x) nu_d) ]^{-1},
///   lambda_theta = (theta - lambda)^{-1},
///
/// returned as H(1_C) normalized by mu0 H(1_C). For a consistent certificate
/// the result equals the principal h0 independently of theta and of the
/// small set; the inner operator having spectral radius >= lambda_theta is
/// exactly the inconsistent case and is reported as such.
pub fn h0_via_resolvent(
    model: &FiniteModel,
    theta: f64,
    cert: &SmallSetCertificate,
) -> Result<Vec<f64>> {
    let d = model.dim();
    cert.basic_checks(d)?;
    let triple = principal_triple(model)?;
    if theta <= triple.lambda {
        return Err(Error::InvalidArgument(format!(
            "theta = {theta} <= lambda = {}",
            triple.lambda
        )));
    }
    let r = resolvent(model, theta)?;

    let scale = cert.epsilon_d / theta.powi(cert.m0 as i32 + 1);
    let mut a = r;
    for i in 0..d {
        if cert.c_d_mask[i] {
            for j in 0..d {
                a.set(i, j, a.get(i, j) - scale * cert.nu_d[j]);
            }
        }
    }
    let lam_theta = 1.0 / (theta - triple.lambda);
    let rho_inner = spectral_radius_estimate(&a);
    if rho_inner >= lam_theta {
        return Err(Error::Certificate(format!(
            "inner operator has spectral radius {rho_inner:.12e} >= \
             lambda_theta = {lam_theta:.12e}; the minorization certificate \
             is inconsistent with the kernel"
        )));
    }

    let h_op = Matrix::identity(d).scaled(lam_theta).sub(&a).inverse()?;
    let ind: Vec<f64> =
        cert.c_d_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let g = h_op.mul_vec(&ind);
    let s: f64 = triple.mu0.iter().zip(&g).map(|(a, b)| a * b).sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Certificate(format!(
            "normalization mu0(H 1_C) = {s} is not positive"
        )));
    }
    let h: Vec<f64> = g.iter().map(|x| x / s).collect();
    if h.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Certificate(
            "resolvent construction produced non-positive eigenfunction values".into(),
        ));
    }
    Ok(h)
}

/// The Doob-transformed kernel P[i][j] = q[i][j] h0[j] / (lambda h0[i]).
/// Row-stochastic whenever the triple actually solves Q h0 = lambda h0; row
/// sums off by more than 1e-12 mean the triple does not belong to this model.
pub fn twisted_kernel(model: &FiniteModel, triple: &SpectralTriple) -> Result<Matrix> {
    let d = model.dim();
    if triple.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "triple over {} states, model over {d}",
            triple.dim()
        )));
    }
    if !(triple.lambda > 0.0) || triple.h0.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument(
            "triple must have lambda > 0 and strictly positive h0".into(),
        ));
    }
    let mut p = Matrix::zeros(d);
    for i in 0..d {
        let row_scale = 1.0 / (triple.lambda * triple.h0[i]);
        for j in 0..d {
            p.set(i, j, model.q().get(i, j) * triple.h0[j] * row_scale);
        }
    }
    for i in 0..d {
        let s: f64 = p.row(i).iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "twisted row {i} sums to {s:.15}; the triple does not match the model"
            )));
        }
    }
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct MetResidual {
    pub n: usize,
    pub phi_index: usize,
    pub gap: f64,
    /// false when the gap sat below the 1e-14 floor and was left out of the fit
    pub used: bool,
}

/// Least-squares estimates for the multiplicative ergodic bound
/// |lambda^{-n} gamma_{n,x}(phi) - h0(x) mu0(phi)| <= ||phi||_v B0 e^{-n B1} v(x).
///
/// B0 is the max over fitted points of gap * e^{n B1} / (||phi||_v v(x)), so
/// the bound covers every residual that entered the fit by construction.
/// Note that B0 is reported raw and can land below 1; the threshold function
/// clamps it there, which is the only place the assumption B0 > 1 matters.
#[derive(Debug, Clone)]
pub struct MetFit {
    pub b0: f64,
    pub b1: f64,
    /// modulus of the second eigenvalue, from power-deflation
    pub lambda2: f64,
    pub residuals: Vec<MetResidual>,
    pub note: &'static str,
}

pub const MET_NOTE: &str = "B0/B1 are least-squares estimates of the ergodic \
constants, heuristic rather than certified";

/// Fits the decay of the MET gap over `n_range` (inclusive) pooled across
/// `phi_set`. Gaps below 1e-14 are excluded as converged; an empty or
/// single-horizon fit, a non-positive rate, or a rate below 0.9x the
/// spectral-gap rate log(lambda/|lambda2|) are all reported as DegenerateFit.
pub fn met_decay(
    model: &FiniteModel,
    triple: &SpectralTriple,
    x_index: usize,
    phi_set: &[Vec<f64>],
    n_range: (usize, usize),
) -> Result<MetFit> {
    let d = model.dim();
    if triple.dim() != d {
        return Err(Error::DimensionMismatch("triple does not match model".into()));
    }
    if x_index >= d {
        return Err(Error::InvalidArgument(format!("state index {x_index} out of range")));
    }
    if phi_set.is_empty() {
        return Err(Error::InvalidArgument("empty phi set".into()));
    }
    let (n_lo, n_hi) = n_range;
    if n_lo > n_hi {
        return Err(Error::InvalidArgument(format!(
            "empty horizon range [{n_lo}, {n_hi}]"
        )));
    }
    let v: Vec<f64> = match model.v_weights() {
        Some(w) => w.to_vec(),
        None => vec![1.0; d],
    };
    let ln_lambda = triple.lambda.ln();

    let mut residuals = Vec::new();
    let mut norms = Vec::with_capacity(phi_set.len());
    for (pi, phi) in phi_set.iter().enumerate() {
        if phi.len() != d {
            return Err(Error::InvalidArgument(format!(
                "phi[{pi}] has length {}, expected {d}",
                phi.len()
            )));
        }
        // ||phi||_v = sup |phi| / v
        let norm_v = phi
            .iter()
            .zip(&v)
            .map(|(p, w)| p.abs() / w)
            .fold(0.0f64, f64::max);
        norms.push(norm_v);
        let mu_phi: f64 = triple.mu0.iter().zip(phi).map(|(a, b)| a * b).sum();
        let target = triple.h0[x_index] * mu_phi;
        let seq = model.gamma_exact_prefix(x_index, n_hi, phi)?;
        for n in n_lo..=n_hi {
            let sl = seq[n];
            let val = if sl.sign == 0 {
                0.0
            } else {
                f64::from(sl.sign) * (sl.log_abs - n as f64 * ln_lambda).exp()
            };
            let gap = (val - target).abs();
            let used = gap >= MET_GAP_FLOOR && norm_v > 0.0;
            residuals.push(MetResidual { n, phi_index: pi, gap, used });
        }
    }

    let fitted: Vec<&MetResidual> = residuals.iter().filter(|r| r.used).collect();
    if fitted.is_empty() {
        return Err(Error::DegenerateFit(format!(
            "every MET gap over n in [{n_lo}, {n_hi}] is below {MET_GAP_FLOOR:e}; \
             nothing left to fit"
        )));
    }
    let first_n = fitted[0].n;
    if fitted.iter().all(|r| r.n == first_n) {
        return Err(Error::DegenerateFit(
            "gaps survive at a single horizon only; the decay rate is undetermined".into(),
        ));
    }

    let m = fitted.len() as f64;
    let xbar = fitted.iter().map(|r| r.n as f64).sum::<f64>() / m;
    let ybar = fitted.iter().map(|r| r.gap.ln()).sum::<f64>() / m;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for r in &fitted {
        let dx = r.n as f64 - xbar;
        sxx += dx * dx;
        sxy += dx * (r.gap.ln() - ybar);
    }
    let b1 = -(sxy / sxx);
    if !(b1 > 0.0) || !b1.is_finite() {
        return Err(Error::DegenerateFit(format!(
            "fitted decay rate {b1:.6e} is not positive; the gap does not decay \
             over this horizon range"
        )));
    }

    // Second eigenvalue by deflation: mu0(h0) = 1 makes h0 (x) mu0 the
    // spectral projector, so Q - lambda h0 (x) mu0 removes the principal
    // part and its radius is |lambda2|.
    let mut defl = model.q().clone();
    for i in 0..d {
        for j in 0..d {
            let v0 = defl.get(i, j);
            defl.set(i, j, v0 - triple.lambda * triple.h0[i] * triple.mu0[j]);
        }
    }
    let lambda2 = spectral_radius_estimate(&defl);
    if lambda2 > 1e-9 * triple.lambda {
        let gap_rate = (triple.lambda / lambda2).ln();
        if b1 < 0.9 * gap_rate {
            return Err(Error::DegenerateFit(format!(
                "fitted decay rate {b1:.6} is below 0.9x the spectral-gap rate \
                 {gap_rate:.6}; the fit did not capture the geometric regime"
            )));
        }
    }

    let b0 = fitted
        .iter()
        .map(|r| r.gap * ((r.n as f64) * b1).exp() / (norms[r.phi_index] * v[x_index]))
        .fold(0.0f64, f64::max);

    Ok(MetFit { b0, b1, lambda2, residuals, note: MET_NOTE })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhiThreshold {
    /// c1 * (ceil((1/B1) log(B0^2 v(x)/h0(x))) + 1). Can be non-positive
    /// when v/h0 is tiny: the asymptotic regime then starts immediately.
    pub value: i64,
    /// true when the fitted B0 was <= 1 and got clamped to 1 + 1e-9
    pub b0_clamped: bool,
}

/// The horizon threshold phi(x) past which the linear-in-N variance regime
/// is guaranteed.
pub fn variance_threshold_phi(
    x_index: usize,
    v_weights: &[f64],
    triple: &SpectralTriple,
    met: &MetFit,
    c1: u32,
) -> Result<PhiThreshold> {
    let d = triple.dim();
    if v_weights.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "{} v_weights for {d} states",
            v_weights.len()
        )));
    }
    if x_index >= d {
        return Err(Error::InvalidArgument(format!("state index {x_index} out of range")));
    }
    if c1 == 0 {
        return Err(Error::InvalidArgument("c1 must be >= 1".into()));
    }
    let vx = v_weights[x_index];
    if !(vx > 0.0) || !vx.is_finite() {
        return Err(Error::InvalidArgument(format!("v({x_index}) = {vx}")));
    }
    if !(met.b1 > 0.0) || !met.b1.is_finite() {
        return Err(Error::InvalidArgument(format!("B1 = {} (must be > 0)", met.b1)));
    }
    // "it can be assumed that B0 > 1": clamp rather than reject, flagged
    let b0_clamped = !(met.b0 > 1.0);
    let b0 = if b0_clamped { 1.0 + 1e-9 } else { met.b0 };
    let arg = b0 * b0 * vx / triple.h0[x_index];
    let inner = (arg.ln() / met.b1).ceil() + 1.0;
    Ok(PhiThreshold { value: i64::from(c1) * inner as i64, b0_clamped })
}

/// The small-set lower bound epsilon_d nu_d(C_d) <= lambda^m0. Returns
/// (lower bound, lambda^m0); a violation means the certificate cannot
/// belong to this kernel.
///
/// The m0 power is there because the minorization controls Q^m0, not Q:
/// iterating it k times bounds Q^{k m0}(e^V)/e^V below by
/// epsilon^{k-1} nu(C)^{k-2} times constants, and taking the (k m0)-th
/// root and k -> infinity leaves (epsilon nu(C))^{1/m0} <= lambda. With
/// m0 = 1 this is the familiar epsilon nu(C) <= lambda; for m0 > 1 the
/// unpowered comparison would falsely reject certificates of kernels
/// with lambda > 1 (one state, Q = [[e^u]], m0 = 2: epsilon = e^{2u}).
pub fn spectral_radius_lower_bound(
    cert: &SmallSetCertificate,
    triple: &SpectralTriple,
) -> Result<(f64, f64)> {
    if cert.nu_d.len() != triple.dim() || cert.c_d_mask.len() != triple.dim() {
        return Err(Error::DimensionMismatch(
            "certificate and triple cover different state counts".into(),
        ));
    }
    let lower = cert.epsilon_d * cert.nu_mass_on_c();
    let upper = triple.lambda.powi(cert.m0 as i32);
    if lower > upper * (1.0 + 1e-12) {
        return Err(Error::Certificate(format!(
            "epsilon_d nu_d(C_d) = {lower:.12e} exceeds lambda^m0 = {upper:.12e}"
        )));
    }
    Ok((lower, upper))
}
