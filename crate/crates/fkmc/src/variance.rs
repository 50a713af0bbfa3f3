//! Variance laboratory for the unnormalized estimator gamma^N_n(1).
//!
//! Three independent routes to the same quantity, used to cross-check each
//! other:
//!
//! 1. Monte Carlo: replicate the particle system R times against an exact
//!    log gamma oracle and average (gamma^N/gamma - 1)^2.
//! 2. Exact coalescent expansion (finite state spaces): the second moment
//!    of gamma^N_n(1) decomposes over "coalescence configurations", subsets
//!    c = (i_1 < ... < i_s) of {0..n} marking the generations at which the
//!    two genealogical lineages of a pair of particles sit on a common
//!    ancestor. Each configuration contributes a tensor functional
//!    Gamma^{(c)}(1 (x) 1), and
//!
//!      E[(gamma^N/gamma - 1)^2]
//!        = sum_{s=1}^{n+1} (1 - 1/N)^{(n+1)-s} N^{-s}
//!            sum_{|c| = s} [ Gamma-bar^{(c)}(1 (x) 1) - 1 ]
//!
//!    with Gamma-bar = Gamma / gamma_n(1)^2. The N-dependence is exact, not
//!    asymptotic; brute force agrees to machine precision.
//! 3. Brute force (tiny systems): enumerate every trajectory of the particle
//!    algorithm itself and sum probability times squared deviation.
//!
//! The tensor functionals never materialize a d^2 x d^2 operator: the
//! two-argument function F(y, y') is a d x d matrix, one step of Q^{(x)2}
//! is F <- Q F Q^T, and a coalescence replaces F by its diagonal broadcast
//! F(y, y') <- F(y, y).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::finite::FiniteModel;
use crate::linalg::Matrix;
use crate::parallel::map_indexed;
use crate::particle::{run, ParticleModel};
use crate::rng::{derive_cell_seed, SeedSpec};

/// Log deviations beyond this window are reported as saturated cells
/// instead of being exponentiated into inf.
pub const SATURATION_LOG_RANGE: f64 = 700.0;

/// |z| above this flags a cell in the unbiasedness report.
pub const Z_FLAG_THRESHOLD: f64 = 4.0;

/// Largest state space accepted by the d x d tensor walk.
pub const MAX_TENSOR_STATES: usize = 64;

/// Largest horizon for the exact coalescent sum (2^{n+1} configurations).
pub const MAX_COALESCENT_HORIZON: usize = 20;

/// Cap on log2 of the brute-force trajectory count N (n+1) log2 d.
pub const MAX_BRUTE_FORCE_BITS: f64 = 24.0;

/// Tolerated defect in the brute-force probability mass.
const BRUTE_FORCE_MASS_TOL: f64 = 1e-12;

/// A grid of Monte Carlo cells: every start point crossed with every
/// horizon, each cell replicated `replicates` times at `n_particles`
/// particles. Seeds are derived per cell and per replicate from
/// `master_seed`, so a plan is reproducible independent of thread count
/// and of which cells a caller happens to evaluate.
#[derive(Debug, Clone)]
pub struct ExperimentPlan<S> {
    pub model_id: String,
    pub x0_list: Vec<S>,
    pub n_list: Vec<usize>,
    pub n_particles: usize,
    pub replicates: usize,
    pub master_seed: u64,
}

impl<S: Copy> ExperimentPlan<S> {
    pub fn new(
        model_id: &str,
        x0_list: Vec<S>,
        n_list: Vec<usize>,
        n_particles: usize,
        replicates: usize,
        master_seed: u64,
    ) -> Result<Self> {
        if model_id.is_empty() || model_id.contains(',') || model_id.contains('\n') {
            return Err(Error::InvalidArgument(
                "model id must be nonempty and free of commas and newlines".into(),
            ));
        }
        if x0_list.is_empty() {
            return Err(Error::InvalidArgument("empty x0 list".into()));
        }
        if n_list.is_empty() {
            return Err(Error::InvalidArgument("empty horizon list".into()));
        }
        if n_particles == 0 {
            return Err(Error::InvalidArgument(
                "need at least one particle".into(),
            ));
        }
        if replicates < 2 {
            return Err(Error::InvalidArgument(
                "variance estimation needs at least two replicates".into(),
            ));
        }
        Ok(ExperimentPlan {
            model_id: model_id.to_string(),
            x0_list,
            n_list,
            n_particles,
            replicates,
            master_seed,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.x0_list.len() * self.n_list.len()
    }
}

/// One cell of a Monte Carlo variance experiment.
#[derive(Debug, Clone)]
pub struct VarianceRow {
    pub model: String,
    pub x0: f64,
    pub n: usize,
    pub n_particles: usize,
    pub replicates: usize,
    pub rel_var: f64,
    pub std_err: f64,
    pub log_gamma_oracle: f64,
    pub failures: usize,
    pub saturated: bool,
}

impl VarianceRow {
    /// A cell is usable when no replicate went extinct, nothing saturated
    /// the log window, and the estimate came out a finite nonnegative
    /// number.
    pub fn is_valid(&self) -> bool {
        self.failures == 0
            && !self.saturated
            && self.rel_var.is_finite()
            && self.rel_var >= 0.0
    }
}

#[derive(Debug, Clone)]
pub struct VarianceTable {
    pub rows: Vec<VarianceRow>,
}

impl VarianceTable {
    pub fn all_valid(&self) -> bool {
        self.rows.iter().all(VarianceRow::is_valid)
    }

    /// Floats print via {:e}, the shortest exponential form that parses
    /// back to the same bits, so equal tables give equal byte strings.
    pub fn to_csv_string(&self) -> String {
        let mut out =
            String::from("model,x0,n,N,R,rel_var,std_err,log_gamma_oracle,failures\n");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{:e},{},{},{},{:e},{:e},{:e},{}",
                row.model,
                row.x0,
                row.n,
                row.n_particles,
                row.replicates,
                row.rel_var,
                row.std_err,
                row.log_gamma_oracle,
                row.failures
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// One cell of an unbiasedness report: z-score of the replicate mean of
/// gamma^N/gamma against its exact value 1.
#[derive(Debug, Clone)]
pub struct ZScoreRow {
    pub x0: f64,
    pub n: usize,
    pub z: f64,
    /// Every replicate reproduced gamma exactly (zero spread, zero error);
    /// the usual z-score is 0/0 there, so the match is reported directly.
    pub exact: bool,
    pub flagged: bool,
    pub failures: usize,
}

// Runs one cell of a plan: replicate log gamma^N values in replicate order,
// plus the count of extinctions. The per-replicate stream is keyed by
// (master seed, cell ordinal, replicate index), so the values do not depend
// on the thread count, and adding cells to a plan never reshuffles the
// randomness of existing ones... except that the ordinal is row-major in
// (x0, n), so only appending to the end of either list is stable.
fn cell_log_gammas<M: ParticleModel>(
    model: &M,
    plan: &ExperimentPlan<M::State>,
    x0_index: usize,
    n_index: usize,
) -> Result<(Vec<f64>, usize)> {
    let x0 = plan.x0_list[x0_index];
    let n = plan.n_list[n_index];
    let n_particles = plan.n_particles;
    let ordinal = (x0_index * plan.n_list.len() + n_index) as u64;
    let cell_seed = derive_cell_seed(plan.master_seed, ordinal);
    let runs = map_indexed(plan.replicates, |r| {
        run(model, x0, n, n_particles, SeedSpec::new(cell_seed, r as u64))
            .map(|rec| rec.log_gamma)
    });
    // reduce in replicate order whatever the thread schedule did
    let mut values = Vec::with_capacity(plan.replicates);
    let mut failures = 0usize;
    for res in runs {
        match res {
            Ok(lg) => values.push(lg),
            Err(Error::Extinction { .. }) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((values, failures))
}

/// Monte Carlo estimate of the relative variance E[(gamma^N/gamma - 1)^2]
/// for every cell of the plan. `oracle` must return the exact log gamma_n(1)
/// for a cell or None if it has no value there (which is an error: the
/// statistic is meaningless against an approximate or missing reference).
///
/// Cells touched by extinction or by log deviations outside the +-700
/// window report NaN and stay in the table with their failure counts;
/// downstream consumers decide whether that sinks the experiment.
pub fn relative_variance_mc<M: ParticleModel>(
    model: &M,
    plan: &ExperimentPlan<M::State>,
    oracle: impl Fn(M::State, usize) -> Option<f64>,
) -> Result<VarianceTable> {
    let mut rows = Vec::with_capacity(plan.cell_count());
    for (xi, &x0) in plan.x0_list.iter().enumerate() {
        for (ni, &n) in plan.n_list.iter().enumerate() {
            let log_gamma = oracle(x0, n).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no oracle value for cell x0 = {}, n = {}",
                    model.state_as_f64(x0),
                    n
                ))
            })?;
            let (values, failures) = cell_log_gammas(model, plan, xi, ni)?;
            let mut saturated = false;
            let mut devsq = Vec::with_capacity(values.len());
            for lg in &values {
                let delta = lg - log_gamma;
                if delta.abs() > SATURATION_LOG_RANGE {
                    saturated = true;
                }
                // gamma^N/gamma - 1 through expm1, exact at delta = 0
                let dev = delta.exp_m1();
                devsq.push(dev * dev);
            }
            let (rel_var, std_err) = if failures > 0 || saturated {
                (f64::NAN, f64::NAN)
            } else {
                let r = devsq.len() as f64;
                let mean = devsq.iter().sum::<f64>() / r;
                // jackknife standard error of the mean: the leave-one-out
                // estimates are theta_(i) = (T - s_i)/(R-1), so
                // theta_(i) - mean = -(s_i - mean)/(R-1) and
                //   (R-1)/R sum (theta_(i) - mean)^2
                //     = sum (s_i - mean)^2 / (R (R-1)),
                // the classical squared standard error.
                let ss: f64 = devsq.iter().map(|&s| (s - mean) * (s - mean)).sum();
                (mean, (ss / (r * (r - 1.0))).sqrt())
            };
            rows.push(VarianceRow {
                model: plan.model_id.clone(),
                x0: model.state_as_f64(x0),
                n,
                n_particles: plan.n_particles,
                replicates: plan.replicates,
                rel_var,
                std_err,
                log_gamma_oracle: log_gamma,
                failures,
                saturated,
            });
        }
    }
    Ok(VarianceTable { rows })
}

/// Tests E[gamma^N_n(1)] = gamma_n(1) cell by cell: z-score of the replicate
/// mean of gamma^N/gamma against 1. Uses the same seeds as
/// `relative_variance_mc`, so the two reports describe the same runs.
pub fn unbiasedness_check<M: ParticleModel>(
    model: &M,
    plan: &ExperimentPlan<M::State>,
    oracle: impl Fn(M::State, usize) -> Option<f64>,
) -> Result<Vec<ZScoreRow>> {
    let mut rows = Vec::with_capacity(plan.cell_count());
    for (xi, &x0) in plan.x0_list.iter().enumerate() {
        for (ni, &n) in plan.n_list.iter().enumerate() {
            let log_gamma = oracle(x0, n).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no oracle value for cell x0 = {}, n = {}",
                    model.state_as_f64(x0),
                    n
                ))
            })?;
            let (values, failures) = cell_log_gammas(model, plan, xi, ni)?;
            let x0_f = model.state_as_f64(x0);
            let saturated = values
                .iter()
                .any(|lg| (lg - log_gamma).abs() > SATURATION_LOG_RANGE);
            if failures > 0 || saturated {
                rows.push(ZScoreRow {
                    x0: x0_f,
                    n,
                    z: f64::NAN,
                    exact: false,
                    flagged: true,
                    failures,
                });
                continue;
            }
            let r = values.len() as f64;
            let ratios: Vec<f64> = values.iter().map(|lg| (lg - log_gamma).exp()).collect();
            let mean = ratios.iter().sum::<f64>() / r;
            let ss: f64 = ratios.iter().map(|&t| (t - mean) * (t - mean)).sum();
            let se = (ss / (r * (r - 1.0))).sqrt();
            let (z, exact, flagged) = if se == 0.0 {
                // all replicates identical; either they all hit gamma on the
                // nose (deterministic flat cases) or they are all off by the
                // same amount, which no finite z-score expresses
                if mean == 1.0 {
                    (0.0, true, false)
                } else {
                    ((mean - 1.0).signum() * f64::INFINITY, false, true)
                }
            } else {
                let z = (mean - 1.0) / se;
                (z, false, z.abs() > Z_FLAG_THRESHOLD)
            };
            rows.push(ZScoreRow {
                x0: x0_f,
                n,
                z,
                exact,
                flagged,
                failures,
            });
        }
    }
    Ok(rows)
}

/// A coalescence configuration: the ordered set of generations at which a
/// pair of lineages shares its ancestor, i_1 < i_2 < ... < i_s, all in
/// 0..=n.
#[derive(Debug, Clone)]
pub struct CoalescentConfig {
    indices: Vec<usize>,
    n: usize,
}

impl CoalescentConfig {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        for w in indices.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidArgument(format!(
                    "coalescence indices must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&last) = indices.last() {
            if last > n {
                return Err(Error::InvalidArgument(format!(
                    "coalescence index {last} exceeds the horizon {n}"
                )));
            }
        }
        Ok(CoalescentConfig { indices, n })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn order(&self) -> usize {
        self.indices.len()
    }

    pub fn horizon(&self) -> usize {
        self.n
    }
}

/// Normalized tensor functional Gamma-bar^{(c)}(1 (x) 1) for one
/// configuration, evaluated right to left:
///
///   Gamma^{(c)} = gamma_{i_1}^{(x)2} D Q^{(x)2}_{i_2 - i_1} D ... D Q^{(x)2}_{n - i_s} (1 (x) 1)
///
/// where D collapses a two-argument function onto its diagonal,
/// D(F)(y, y') = F(y, y), one D for every index in the configuration, and
/// gamma_{i_1} = delta_x Q^{i_1} is the unnormalized marginal at the first
/// coalescence. Division by gamma_n(1)^2 makes the empty configuration
/// (which this function accepts) come out exactly 1.
pub fn gamma_bar_config(
    model: &FiniteModel,
    x_index: usize,
    config: &CoalescentConfig,
) -> Result<f64> {
    let d = model.dim();
    if d > MAX_TENSOR_STATES {
        return Err(Error::TooLarge(format!(
            "state space of {d} exceeds the {MAX_TENSOR_STATES}-state tensor limit"
        )));
    }
    if x_index >= d {
        return Err(Error::DimensionMismatch(format!(
            "start index {x_index} in a {d}-state model"
        )));
    }
    let n = config.horizon();
    let q = model.q();
    let qt = q.transpose();

    // F = 1 (x) 1, consumed right to left
    let ones_sq: Vec<Vec<f64>> = vec![vec![1.0; d]; d];
    let mut f = Matrix::from_rows(&ones_sq)?;
    let mut t = n;
    for &i in config.indices().iter().rev() {
        for _ in 0..(t - i) {
            // one step of Q^{(x)2}: F(y, y') <- sum_{z, z'} Q(y,z) Q(y',z') F(z,z')
            f = q.mat_mul(&f).mat_mul(&qt);
        }
        let rows: Vec<Vec<f64>> = (0..d).map(|y| vec![f.get(y, y); d]).collect();
        f = Matrix::from_rows(&rows)?;
        t = i;
    }

    // leftmost block: w = x-th row of Q^{i_1} (the point mass itself when
    // i_1 = 0), then the bilinear form w^T F w
    let mut w = vec![0.0; d];
    w[x_index] = 1.0;
    for _ in 0..t {
        w = q.mul_vec_left(&w);
    }
    let mut raw = 0.0;
    for y in 0..d {
        for yp in 0..d {
            raw += w[y] * w[yp] * f.get(y, yp);
        }
    }

    let ones = vec![1.0; d];
    let log_gamma = model.gamma_exact_finite(x_index, n, &ones)?;
    if log_gamma.sign <= 0 {
        return Err(Error::InvalidArgument(
            "gamma_n(1) = 0, the normalized tensor is undefined".into(),
        ));
    }
    let denom = (2.0 * log_gamma.log_abs).exp();
    if !denom.is_finite() || denom == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gamma_n(1)^2 = {denom:e} leaves the representable range"
        )));
    }
    Ok(raw / denom)
}

// (configuration order, Gamma-bar - 1) for every nonempty subset of
// {0..n}, enumerated by a binary counter so the order is deterministic.
fn config_brackets(model: &FiniteModel, x_index: usize, n: usize) -> Result<Vec<(usize, f64)>> {
    let count = 1u64 << (n + 1);
    let mut out = Vec::with_capacity(count as usize - 1);
    for mask in 1..count {
        let indices: Vec<usize> = (0..=n).filter(|&i| (mask >> i) & 1 == 1).collect();
        let s = indices.len();
        let config = CoalescentConfig::new(indices, n)?;
        let bar = gamma_bar_config(model, x_index, &config)?;
        out.push((s, bar - 1.0));
    }
    Ok(out)
}

/// Exact relative variance E[(gamma^N_n(1)/gamma_n(1) - 1)^2] of the
/// N-particle system on a finite model, by the coalescent expansion: each
/// configuration of s coalescences carries weight (1 - 1/N)^{(n+1)-s} N^{-s}
/// and contributes its centered tensor bracket.
pub fn coalescent_exact_variance(
    model: &FiniteModel,
    x_index: usize,
    n: usize,
    n_particles: usize,
) -> Result<f64> {
    if n_particles == 0 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    if n > MAX_COALESCENT_HORIZON {
        return Err(Error::TooLarge(format!(
            "horizon {n} asks for 2^{} coalescence configurations",
            n + 1
        )));
    }
    let nf = n_particles as f64;
    let mut total = 0.0;
    for (s, bracket) in config_brackets(model, x_index, n)? {
        let coeff = (1.0 - 1.0 / nf).powi((n + 1 - s) as i32) * nf.powi(-(s as i32));
        total += coeff * bracket;
    }
    Ok(total)
}

// Depth-first enumeration of every trajectory of the particle algorithm.
// The ensemble at generation k contributes the factor eta_k^N(e^U)
// = total/N to gamma^N, then each child is drawn iid with the
// ancestor-marginalized law
//   P(z) = sum_i (rm_i/total) (q[i][z]/rm_i) = sum_i q[i][z] / total.
// A dead ensemble (total = 0) pins every remaining factor at 0, so the
// branch closes with squared deviation (0 - 1)^2 = 1.
struct BruteWalk<'a> {
    q: &'a Matrix,
    row_mass: Vec<f64>,
    dim: usize,
    horizon: usize,
    n_particles: usize,
    gamma: f64,
    acc: f64,
    mass: f64,
}

impl BruteWalk<'_> {
    fn descend(&mut self, ensemble: &[usize], k: usize, prob: f64, partial: f64) {
        let total: f64 = ensemble.iter().map(|&i| self.row_mass[i]).sum();
        let partial = partial * total / self.n_particles as f64;
        if k + 1 == self.horizon {
            let dev = partial / self.gamma - 1.0;
            self.acc += prob * dev * dev;
            self.mass += prob;
            return;
        }
        if total == 0.0 {
            self.acc += prob;
            self.mass += prob;
            return;
        }
        let p: Vec<f64> = (0..self.dim)
            .map(|z| ensemble.iter().map(|&i| self.q.get(i, z)).sum::<f64>() / total)
            .collect();
        // odometer over the d^N ordered child vectors
        let mut child = vec![0usize; self.n_particles];
        loop {
            let mut cp = prob;
            for &z in &child {
                cp *= p[z];
            }
            if cp > 0.0 {
                self.descend(&child, k + 1, cp, partial);
            }
            let mut slot = 0;
            loop {
                if slot == self.n_particles {
                    return;
                }
                child[slot] += 1;
                if child[slot] < self.dim {
                    break;
                }
                child[slot] = 0;
                slot += 1;
            }
        }
    }
}

/// Exact relative variance by full enumeration of the particle algorithm,
/// for systems tiny enough that d^{N(n+1)} trajectories fit in the 24-bit
/// guard. Independent of the coalescent route: this walks the algorithm
/// itself (selection marginalized against mutation), the other evaluates a
/// closed formula.
pub fn brute_force_variance(
    model: &FiniteModel,
    x_index: usize,
    n: usize,
    n_particles: usize,
) -> Result<f64> {
    let d = model.dim();
    if x_index >= d {
        return Err(Error::DimensionMismatch(format!(
            "start index {x_index} in a {d}-state model"
        )));
    }
    if n_particles == 0 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    // guard on the full trajectory count; generous, since the final
    // generation never enters gamma^N and is not branched over
    let bits = (n_particles * (n + 1)) as f64 * (d as f64).log2();
    if bits > MAX_BRUTE_FORCE_BITS {
        return Err(Error::TooLarge(format!(
            "{bits:.1} bits of trajectory space exceeds the {MAX_BRUTE_FORCE_BITS} bit cap"
        )));
    }
    // gamma^N_0(1) = 1 = gamma_0(1): an empty product on both sides
    if n == 0 {
        return Ok(0.0);
    }
    let ones = vec![1.0; d];
    let log_gamma = model.gamma_exact_finite(x_index, n, &ones)?;
    if log_gamma.sign <= 0 {
        return Err(Error::InvalidArgument(
            "gamma_n(1) = 0, relative variance undefined".into(),
        ));
    }
    let gamma = log_gamma.log_abs.exp();
    if !gamma.is_finite() || gamma == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gamma_n(1) = {gamma:e} leaves the representable range"
        )));
    }
    let mut walk = BruteWalk {
        q: model.q(),
        row_mass: (0..d).map(|i| model.row_mass(i)).collect(),
        dim: d,
        horizon: n,
        n_particles,
        gamma,
        acc: 0.0,
        mass: 0.0,
    };
    walk.descend(&vec![x_index; n_particles], 0, 1.0, 1.0);
    if (walk.mass - 1.0).abs() > BRUTE_FORCE_MASS_TOL {
        return Err(Error::Certificate(format!(
            "brute force enumeration carries probability mass {:.17e}",
            walk.mass
        )));
    }
    Ok(walk.acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{gaussian_rw_gamma_oracle, gaussian_rw_model};
    use crate::parallel::with_threads;
    use crate::rng::SplitMix64;

    fn flat_chain(d: usize) -> FiniteModel {
        let p = 1.0 / d as f64;
        FiniteModel::from_rows_unlabeled(&vec![vec![p; d]; d]).unwrap()
    }

    fn growth_chain() -> FiniteModel {
        FiniteModel::from_rows_unlabeled(&[vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap()
    }

    // the two-state fixture with unequal potentials used across the crate:
    // row masses e^{0.5} and e^{-0.3}
    fn q2_fixture() -> FiniteModel {
        let e05 = 0.5f64.exp();
        let em03 = (-0.3f64).exp();
        FiniteModel::from_rows_unlabeled(&[
            vec![0.6 * e05, 0.4 * e05],
            vec![0.5 * em03, 0.5 * em03],
        ])
        .unwrap()
    }

    fn random_positive_model(rng: &mut SplitMix64, d: usize) -> FiniteModel {
        let rows: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..d).map(|_| 0.05 + 2.0 * rng.next_f64()).collect())
            .collect();
        FiniteModel::from_rows_unlabeled(&rows).unwrap()
    }

    #[test]
    fn plan_validation() {
        assert!(ExperimentPlan::new("m", vec![0.0], vec![2], 10, 2, 7).is_ok());
        assert!(ExperimentPlan::new("", vec![0.0], vec![2], 10, 2, 7).is_err());
        assert!(ExperimentPlan::new("a,b", vec![0.0], vec![2], 10, 2, 7).is_err());
        assert!(ExperimentPlan::<f64>::new("m", vec![], vec![2], 10, 2, 7).is_err());
        assert!(ExperimentPlan::new("m", vec![0.0], vec![], 10, 2, 7).is_err());
        assert!(ExperimentPlan::new("m", vec![0.0], vec![2], 0, 2, 7).is_err());
        assert!(ExperimentPlan::new("m", vec![0.0], vec![2], 10, 1, 7).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CoalescentConfig::new(vec![], 3).is_ok());
        assert!(CoalescentConfig::new(vec![0, 1, 3], 3).is_ok());
        assert!(CoalescentConfig::new(vec![0], 0).is_ok());
        assert!(CoalescentConfig::new(vec![1, 1], 3).is_err());
        assert!(CoalescentConfig::new(vec![2, 1], 3).is_err());
        assert!(CoalescentConfig::new(vec![4], 3).is_err());
    }

    // a flat kernel has U = 0 and M doubly stochastic along rows, so every
    // tensor functional equals gamma^2 and the ratio is exactly 1; the
    // arithmetic is exact (sums of 1/d over d terms), so assert bitwise
    #[test]
    fn gamma_bar_flat_chain_is_one() {
        let model = flat_chain(2);
        let n = 3;
        for mask in 0u64..(1 << (n + 1)) {
            let indices: Vec<usize> = (0..=n).filter(|&i| (mask >> i) & 1 == 1).collect();
            let config = CoalescentConfig::new(indices, n).unwrap();
            let bar = gamma_bar_config(&model, 0, &config).unwrap();
            assert_eq!(bar, 1.0, "mask {mask}");
        }
    }

    #[test]
    fn gamma_bar_single_state_is_one() {
        let model = FiniteModel::from_rows_unlabeled(&[vec![0.7f64.exp()]]).unwrap();
        for (indices, n) in [(vec![0], 2), (vec![1, 2], 4), (vec![0, 3], 3)] {
            let config = CoalescentConfig::new(indices, n).unwrap();
            let bar = gamma_bar_config(&model, 0, &config).unwrap();
            assert!((bar - 1.0).abs() <= 1e-12, "bar = {bar}");
        }
    }

    // independent evaluation of the definition: literal nested sums with the
    // diagonal collapse written out, no matrix algebra shared with the
    // production path
    #[test]
    fn gamma_bar_two_state_vs_nested_loops() {
        let model = growth_chain();
        let q = model.q();
        let get = |i: usize, j: usize| q.get(i, j);

        // n = 2, config (1): Gamma = sum_{y,y'} w_y w_{y'} sum_{z,z'} q(y,z) q(y,z')
        // with w = row x of Q (both inner factors ride on y: that is the
        // coalescence at index 1)
        let x = 0usize;
        let w = [get(x, 0), get(x, 1)];
        let mut raw = 0.0;
        for y in 0..2 {
            for yp in 0..2 {
                for z in 0..2 {
                    for zp in 0..2 {
                        raw += w[y] * w[yp] * get(y, z) * get(y, zp);
                    }
                }
            }
        }
        // gamma_2(1) at x = 0: Q^2 row sums; Q^2 = [[5,3],[3,2]]
        let gamma2 = 8.0;
        let expected = raw / (gamma2 * gamma2);
        let config = CoalescentConfig::new(vec![1], 2).unwrap();
        let bar = gamma_bar_config(&model, x, &config).unwrap();
        assert!(
            (bar - expected).abs() <= 1e-12 * expected,
            "bar = {bar}, loops = {expected}"
        );
        // and the hand value: w = (2,1), sum_z q(y,z) = (3,2),
        // raw = gamma_1(1) * sum_y w_y rm_y^2 = 3 * (2*9 + 1*4) = 66
        assert!((bar - 66.0 / 64.0).abs() <= 1e-12);

        // n = 3, config (1, 2): two collapses,
        // Gamma = sum_{y,y'} w_y w_{y'} sum_{a,a'} q(y,a) q(y,a')
        //           sum_{b,b'} q(a,b) q(a,b')
        let mut raw = 0.0;
        for y in 0..2 {
            for yp in 0..2 {
                for a in 0..2 {
                    for ap in 0..2 {
                        for b in 0..2 {
                            for bp in 0..2 {
                                raw += w[y]
                                    * w[yp]
                                    * get(y, a)
                                    * get(y, ap)
                                    * get(a, b)
                                    * get(a, bp);
                            }
                        }
                    }
                }
            }
        }
        let ones = vec![1.0, 1.0];
        let lg = model.gamma_exact_finite(x, 3, &ones).unwrap();
        let expected = raw / (2.0 * lg.log_abs).exp();
        let config = CoalescentConfig::new(vec![1, 2], 3).unwrap();
        let bar = gamma_bar_config(&model, x, &config).unwrap();
        assert!(
            (bar - expected).abs() <= 1e-12 * expected,
            "bar = {bar}, loops = {expected}"
        );
    }

    #[test]
    fn gamma_bar_guards() {
        let model = flat_chain(65);
        let config = CoalescentConfig::new(vec![0], 1).unwrap();
        match gamma_bar_config(&model, 0, &config) {
            Err(Error::TooLarge(_)) => {}
            other => panic!("expected TooLarge, got {other:?}"),
        }
        let model = flat_chain(2);
        assert!(gamma_bar_config(&model, 5, &config).is_err());
    }

    #[test]
    fn coalescent_flat_chain_is_zero() {
        // with dyadic entries (1/2, 1/4) every bracket is exactly 0.0, so
        // the sum is exactly 0.0
        for d in [2usize, 4] {
            let model = flat_chain(d);
            for n in [1, 2, 5] {
                for n_particles in [2, 7] {
                    let v = coalescent_exact_variance(&model, d - 1, n, n_particles).unwrap();
                    assert_eq!(v, 0.0, "d = {d}, n = {n}, N = {n_particles}");
                }
            }
        }
        // 1/3 is not dyadic: (1/3)^2 rounds, leaving 2^-54 crumbs in the
        // brackets, so only near-zero survives
        let model = flat_chain(3);
        for n in [1, 2, 5] {
            let v = coalescent_exact_variance(&model, 1, n, 2).unwrap();
            assert!(v.abs() <= 1e-15, "n = {n}, v = {v}");
        }
    }

    // at horizon 1 both factors of gamma^N are exact: eta_0^N = delta_x and
    // the mean weight of an iid sample from M(x, .) enters gamma^N_1 only
    // through eta_0^N(e^U) = e^{U(x)}... every configuration bracket
    // telescopes to zero, whatever the model
    #[test]
    fn coalescent_horizon_one_is_zero() {
        for model in [q2_fixture(), growth_chain()] {
            for n_particles in [2, 5] {
                for x in 0..2 {
                    let v = coalescent_exact_variance(&model, x, 1, n_particles).unwrap();
                    assert!(v.abs() <= 1e-13, "x = {x}, N = {n_particles}, v = {v}");
                }
            }
        }
    }

    #[test]
    fn coalescent_guards() {
        let model = flat_chain(2);
        match coalescent_exact_variance(&model, 0, 25, 4) {
            Err(Error::TooLarge(_)) => {}
            other => panic!("expected TooLarge, got {other:?}"),
        }
        assert!(coalescent_exact_variance(&model, 0, 2, 0).is_err());
    }

    #[test]
    fn brute_force_flat_chain_is_zero() {
        let model = flat_chain(2);
        let v = brute_force_variance(&model, 0, 2, 2).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn brute_force_single_state() {
        // one state: gamma^N is deterministic, variance collapses; the only
        // float noise is exp(3 ln 2) vs 2^3
        let model = FiniteModel::from_rows_unlabeled(&[vec![2.0]]).unwrap();
        let v = brute_force_variance(&model, 0, 3, 3).unwrap();
        assert!(v <= 1e-25, "v = {v}");
    }

    #[test]
    fn brute_force_guards() {
        let model = flat_chain(2);
        match brute_force_variance(&model, 0, 8, 3) {
            Err(Error::TooLarge(_)) => {}
            other => panic!("expected TooLarge, got {other:?}"),
        }
        match brute_force_variance(&model, 0, 25, 2) {
            Err(Error::TooLarge(_)) => {}
            other => panic!("expected TooLarge, got {other:?}"),
        }
        assert_eq!(brute_force_variance(&model, 0, 0, 4).unwrap(), 0.0);
    }

    #[test]
    fn coalescent_matches_brute_force_on_fixture() {
        let model = q2_fixture();
        let exact = coalescent_exact_variance(&model, 0, 3, 2).unwrap();
        let brute = brute_force_variance(&model, 0, 3, 2).unwrap();
        assert!(
            (exact - brute).abs() <= 1e-12,
            "coalescent {exact} vs brute {brute}"
        );
        assert!(exact > 0.0);
    }

    // the dual-oracle sweep: two unrelated evaluations of the same variance
    // agree to near machine precision across random positive models
    #[test]
    fn coalescent_matches_brute_force_fuzzed() {
        let mut rng = SplitMix64::new(0xc0a1e5ce_u64);
        let mut checked = 0;
        while checked < 50 {
            let d = 2 + (rng.next_raw() % 2) as usize; // 2 or 3
            let n_particles = 2 + (rng.next_raw() % 2) as usize; // 2 or 3
            let n = 2 + (rng.next_raw() % 3) as usize; // 2..4
            let bits = (n_particles * (n + 1)) as f64 * (d as f64).log2();
            if bits > MAX_BRUTE_FORCE_BITS {
                continue;
            }
            let model = random_positive_model(&mut rng, d);
            let x = (rng.next_raw() % d as u64) as usize;
            let exact = coalescent_exact_variance(&model, x, n, n_particles).unwrap();
            let brute = brute_force_variance(&model, x, n, n_particles).unwrap();
            let scale = exact.abs().max(1e-3);
            assert!(
                (exact - brute).abs() <= 1e-10 * scale,
                "d = {d}, N = {n_particles}, n = {n}: {exact} vs {brute}"
            );
            checked += 1;
        }
    }

    // the identity behind the coalescent bookkeeping: summing a product over
    // all nonempty subsets of m slots factorizes,
    // sum_{c != empty} prod_{j in c} a_j = prod_j (1 + a_j) - 1
    #[test]
    fn subset_product_identity() {
        let mut rng = SplitMix64::new(0x5e7_1d_u64);
        for _ in 0..20 {
            let m = 1 + (rng.next_raw() % 12) as usize;
            let a: Vec<f64> = (0..m).map(|_| rng.next_f64() * 1.5 - 0.5).collect();
            let mut lhs = 0.0;
            for mask in 1u64..(1 << m) {
                let mut prod = 1.0;
                for (j, &aj) in a.iter().enumerate() {
                    if (mask >> j) & 1 == 1 {
                        prod *= aj;
                    }
                }
                lhs += prod;
            }
            let rhs = a.iter().map(|&aj| 1.0 + aj).product::<f64>() - 1.0;
            assert!(
                (lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()),
                "m = {m}: {lhs} vs {rhs}"
            );
        }
    }

    // shape of the exact variance in n: for a primitive two-state chain the
    // per-step contribution settles, so relvar/(n+1) stays within a small
    // constant band instead of growing; the max/min ratio over n in [2, 15]
    // stays well under an order of magnitude
    #[test]
    fn coalescent_variance_linear_shape() {
        let model = growth_chain();
        for n_particles in [64usize, 256] {
            let mut per_step = Vec::new();
            for n in 2..=15 {
                let brackets = config_brackets(&model, 0, n).unwrap();
                let nf = n_particles as f64;
                let mut total = 0.0;
                for (s, bracket) in brackets {
                    total +=
                        (1.0 - 1.0 / nf).powi((n + 1 - s) as i32) * nf.powi(-(s as i32)) * bracket;
                }
                per_step.push(total / (n + 1) as f64);
            }
            let max = per_step.iter().cloned().fold(f64::MIN, f64::max);
            let min = per_step.iter().cloned().fold(f64::MAX, f64::min);
            assert!(min > 0.0);
            let ratio = max / min;
            assert!(
                ratio < 10.0,
                "N = {n_particles}: per-step spread {ratio} too wide"
            );
        }
    }

    #[test]
    fn mc_flat_chain_is_exact_zero() {
        // U = 0 makes every mean weight exactly 1.0 and the oracle exactly
        // 0.0, so the estimator reproduces gamma bit for bit
        let model = flat_chain(3);
        let plan = ExperimentPlan::new("flat3", vec![0usize, 2], vec![2, 5], 3, 10, 99).unwrap();
        let table = relative_variance_mc(&model, &plan, |_, _| Some(0.0)).unwrap();
        assert_eq!(table.rows.len(), 4);
        for row in &table.rows {
            assert_eq!(row.rel_var, 0.0);
            assert_eq!(row.std_err, 0.0);
            assert_eq!(row.failures, 0);
            assert!(row.is_valid());
        }
        let zs = unbiasedness_check(&model, &plan, |_, _| Some(0.0)).unwrap();
        for z in &zs {
            assert!(z.exact);
            assert!(!z.flagged);
            assert_eq!(z.z, 0.0);
        }
    }

    #[test]
    fn mc_single_state_is_exact_zero() {
        // both the runs and the oracle accumulate the same ln(row mass)
        // term by term, so the deviation is not just small but zero
        let model = FiniteModel::from_rows_unlabeled(&[vec![2.0]]).unwrap();
        let plan = ExperimentPlan::new("one", vec![0usize], vec![3], 4, 5, 11).unwrap();
        let oracle = |_: usize, n: usize| {
            let ones = vec![1.0];
            Some(model.gamma_exact_finite(0, n, &ones).unwrap().log_abs)
        };
        let table = relative_variance_mc(&model, &plan, oracle).unwrap();
        assert_eq!(table.rows[0].rel_var, 0.0);
        assert!(table.rows[0].is_valid());
    }

    // the one continuous-state cell with a hand-computable variance: for the
    // gaussian random walk from 0 at n = 2 the first weight is exactly 1 and
    // gamma^N/gamma is a plain iid average of e^{-X^2}/E e^{-X^2}, X std
    // normal, so relvar = (E e^{-2X^2}/(E e^{-X^2})^2 - 1)/N
    //                   = (3/sqrt(5) - 1)/N exactly
    #[test]
    fn mc_gaussian_matches_closed_form() {
        let model = gaussian_rw_model();
        let plan = ExperimentPlan::new("gauss", vec![0.0], vec![2], 100, 100_000, 2024).unwrap();
        let table =
            relative_variance_mc(&model, &plan, |x, n| Some(gaussian_rw_gamma_oracle(x, n)))
                .unwrap();
        let row = &table.rows[0];
        assert!(row.is_valid());
        let exact = (3.0 / 5.0f64.sqrt() - 1.0) / 100.0;
        assert!(
            (row.rel_var - exact).abs() <= 4.0 * row.std_err,
            "rel_var = {}, exact = {}, se = {}",
            row.rel_var,
            exact,
            row.std_err
        );
        // the band itself should be tight at R = 1e5
        assert!(row.std_err < 0.1 * exact);
    }

    #[test]
    fn mc_matches_coalescent_on_finite_model() {
        let model = q2_fixture();
        let exact = coalescent_exact_variance(&model, 0, 3, 2).unwrap();
        let plan = ExperimentPlan::new("q2", vec![0usize], vec![3], 2, 100_000, 31).unwrap();
        let ones = vec![1.0, 1.0];
        let oracle = |x: usize, n: usize| {
            Some(model.gamma_exact_finite(x, n, &ones).unwrap().log_abs)
        };
        let table = relative_variance_mc(&model, &plan, oracle).unwrap();
        let row = &table.rows[0];
        assert!(row.is_valid());
        assert!(
            (row.rel_var - exact).abs() <= 4.0 * row.std_err,
            "mc = {} vs exact = {} (se {})",
            row.rel_var,
            exact,
            row.std_err
        );
    }

    #[test]
    fn mc_unbiasedness_flags_wrong_oracle() {
        let model = gaussian_rw_model();
        let plan = ExperimentPlan::new("gauss", vec![0.0], vec![2], 100, 2000, 5150).unwrap();
        let honest = unbiasedness_check(&model, &plan, |x, n| {
            Some(gaussian_rw_gamma_oracle(x, n))
        })
        .unwrap();
        assert!(!honest[0].flagged, "z = {}", honest[0].z);
        // shift the oracle by 10 percent: same runs, so the z-score moves by
        // roughly 0.1/se and must trip the flag
        let shifted = unbiasedness_check(&model, &plan, |x, n| {
            Some(gaussian_rw_gamma_oracle(x, n) + 0.1f64.ln_1p())
        })
        .unwrap();
        assert!(shifted[0].flagged, "z = {}", shifted[0].z);
        assert!(!shifted[0].exact);
    }

    #[test]
    fn mc_saturation_is_flagged_not_inf() {
        let model = FiniteModel::from_rows_unlabeled(&[vec![2.0]]).unwrap();
        let plan = ExperimentPlan::new("one", vec![0usize], vec![2], 2, 3, 1).unwrap();
        // an oracle off by 800 in log space would push exp over the cliff;
        // the cell must come back saturated and invalid, not inf
        let table = relative_variance_mc(&model, &plan, |_, n| {
            let ones = vec![1.0];
            Some(model.gamma_exact_finite(0, n, &ones).unwrap().log_abs - 800.0)
        })
        .unwrap();
        let row = &table.rows[0];
        assert!(row.saturated);
        assert!(!row.is_valid());
        assert!(row.rel_var.is_nan());
        let zs = unbiasedness_check(&model, &plan, |_, n| {
            let ones = vec![1.0];
            Some(model.gamma_exact_finite(0, n, &ones).unwrap().log_abs - 800.0)
        })
        .unwrap();
        assert!(zs[0].flagged);
        assert!(zs[0].z.is_nan());
    }

    #[test]
    fn mc_extinction_counts_failures() {
        // state 1 is absorbing with zero mass, so every replicate dies at
        // the second selection
        let model =
            FiniteModel::from_rows_unlabeled(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let plan = ExperimentPlan::new("dead", vec![0usize], vec![2], 3, 4, 8).unwrap();
        let table = relative_variance_mc(&model, &plan, |_, _| Some(0.0)).unwrap();
        let row = &table.rows[0];
        assert_eq!(row.failures, 4);
        assert!(!row.is_valid());
        assert!(row.rel_var.is_nan());
        let zs = unbiasedness_check(&model, &plan, |_, _| Some(0.0)).unwrap();
        assert!(zs[0].flagged);
        assert_eq!(zs[0].failures, 4);
    }

    #[test]
    fn mc_missing_oracle_is_an_error() {
        let model = flat_chain(2);
        let plan = ExperimentPlan::new("flat", vec![0usize], vec![2, 3], 2, 2, 0).unwrap();
        let res = relative_variance_mc(&model, &plan, |_, n| if n == 2 { Some(0.0) } else { None });
        assert!(matches!(res, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mc_deterministic_across_thread_counts() {
        let model = q2_fixture();
        let ones = vec![1.0, 1.0];
        let make_plan =
            || ExperimentPlan::new("q2", vec![0usize, 1], vec![2, 4], 8, 50, 777).unwrap();
        let csv_at = |threads: usize| {
            let plan = make_plan();
            with_threads(Some(threads), || {
                relative_variance_mc(&model, &plan, |x, n| {
                    Some(model.gamma_exact_finite(x, n, &ones).unwrap().log_abs)
                })
                .unwrap()
                .to_csv_string()
            })
        };
        let a = csv_at(1);
        let b = csv_at(4);
        assert_eq!(a, b);
        let c = csv_at(4);
        assert_eq!(b, c);
    }

    #[test]
    fn csv_shape_and_round_trip() {
        let model = flat_chain(2);
        let plan = ExperimentPlan::new("flat2", vec![1usize], vec![2, 3], 2, 3, 5).unwrap();
        let table = relative_variance_mc(&model, &plan, |_, _| Some(0.0)).unwrap();
        let csv = table.to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "model,x0,n,N,R,rel_var,std_err,log_gamma_oracle,failures"
        );
        let body: Vec<&str> = lines.collect();
        assert_eq!(body.len(), 2);
        for line in body {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 9);
            assert_eq!(fields[0], "flat2");
            assert_eq!(fields[1].parse::<f64>().unwrap(), 1.0);
            assert_eq!(fields[5].parse::<f64>().unwrap(), 0.0);
            assert_eq!(fields[8].parse::<usize>().unwrap(), 0);
        }
    }
}
