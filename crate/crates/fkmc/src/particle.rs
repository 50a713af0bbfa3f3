//! The interacting particle system: N particles, one selection/mutation
//! sweep per generation. Selection picks ancestors with probability
//! proportional to e^{U(state)} (multinomial, one uniform per slot via
//! inverse CDF), mutation pushes each selected ancestor through the kernel.
//! gamma^N(1) is the running product of the per-generation mean weights,
//! carried as a sum of logs.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::finite::FiniteModel;
use crate::logspace::{log_sum_exp, SignedLog};
use crate::model::FkModel;
use crate::rng::{SeedSpec, SplitMix64};

pub trait ParticleModel: Sync {
    type State: Copy + Send + Sync + std::fmt::Debug;

    fn log_potential(&self, s: Self::State) -> f64;
    fn sample_state(&self, s: Self::State, rng: &mut SplitMix64) -> Result<Self::State>;
    fn validate_state(&self, s: Self::State) -> Result<()>;
    /// numeric view of a state for reports (finite states report their index)
    fn state_as_f64(&self, s: Self::State) -> f64;
}

impl ParticleModel for FkModel {
    type State = f64;

    fn log_potential(&self, s: f64) -> f64 {
        FkModel::log_potential(self, s)
    }

    fn sample_state(&self, s: f64, rng: &mut SplitMix64) -> Result<f64> {
        FkModel::sample(self, s, rng)
    }

    fn validate_state(&self, s: f64) -> Result<()> {
        if self.contains(s) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "state {s} lies outside the model state space"
            )))
        }
    }

    fn state_as_f64(&self, s: f64) -> f64 {
        s
    }
}

/// Finite models split Q = e^U M with U(i) = log row mass and M the
/// row-normalized kernel; mutation is a categorical draw along the row.
impl ParticleModel for FiniteModel {
    type State = usize;

    fn log_potential(&self, s: usize) -> f64 {
        FiniteModel::log_potential(self, s)
    }

    fn sample_state(&self, s: usize, rng: &mut SplitMix64) -> Result<usize> {
        let row = self.q().row(s);
        let mass: f64 = row.iter().sum();
        if mass <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "cannot mutate from zero-mass state {s}"
            )));
        }
        let u = rng.next_f64() * mass;
        let mut acc = 0.0;
        let mut idx = row.len() - 1;
        for (j, &q) in row.iter().enumerate() {
            acc += q;
            if u < acc {
                idx = j;
                break;
            }
        }
        Ok(idx)
    }

    fn validate_state(&self, s: usize) -> Result<()> {
        if s < self.dim() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "state index {s} out of range ({} states)",
                self.dim()
            )))
        }
    }

    fn state_as_f64(&self, s: usize) -> f64 {
        s as f64
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble<S> {
    pub positions: Vec<S>,
    /// generation index
    pub n: usize,
}

pub fn init_ensemble<M: ParticleModel>(
    model: &M,
    x0: M::State,
    n_particles: usize,
) -> Result<Ensemble<M::State>> {
    if n_particles == 0 {
        return Err(Error::InvalidArgument("population size must be >= 1".into()));
    }
    model.validate_state(x0)?;
    Ok(Ensemble { positions: vec![x0; n_particles], n: 0 })
}

/// log eta^N(e^U) = logsumexp_i U(x_i) - log N for a position multiset.
pub fn ensemble_log_mean_weight<M: ParticleModel>(model: &M, positions: &[M::State]) -> f64 {
    let logs: Vec<f64> = positions.iter().map(|&p| model.log_potential(p)).collect();
    log_sum_exp(&logs) - (positions.len() as f64).ln()
}

/// One selection + mutation sweep. Returns the stepped ensemble and
/// log eta_n^N(e^U) measured on the incoming positions.
pub fn step<M: ParticleModel>(
    ensemble: &Ensemble<M::State>,
    model: &M,
    rng: &mut SplitMix64,
) -> Result<(Ensemble<M::State>, f64)> {
    let n_particles = ensemble.positions.len();
    let logw: Vec<f64> = ensemble.positions.iter().map(|&p| model.log_potential(p)).collect();
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::Extinction { generation: ensemble.n });
    }

    // max-shifted weights; when all weights are equal the shifted values are
    // exactly 1.0, the sum is exactly N, and the two ln(N) terms cancel
    // bit-for-bit
    let mut cum = Vec::with_capacity(n_particles);
    let mut acc = 0.0f64;
    let shifted: Vec<f64> = logw.iter().map(|&w| (w - m).exp()).collect();
    for &s in &shifted {
        acc += s;
        cum.push(acc);
    }
    let total = acc;
    // grouped so that the flat case (total == N exactly) contributes an
    // exact 0.0 and log_mean_weight == m bit-for-bit
    let log_mean_weight = m + (total.ln() - (n_particles as f64).ln());

    let mut next = Vec::with_capacity(n_particles);
    for _ in 0..n_particles {
        let u = rng.next_f64() * total;
        // smallest index with cum > u, then skip any zero-weight slots the
        // boundary case u == cum[k] could land on
        let mut idx = cum.partition_point(|&c| c < u);
        while idx < n_particles && shifted[idx] == 0.0 {
            idx += 1;
        }
        if idx >= n_particles {
            idx = n_particles - 1;
        }
        next.push(model.sample_state(ensemble.positions[idx], rng)?);
    }

    Ok((Ensemble { positions: next, n: ensemble.n + 1 }, log_mean_weight))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// log eta_k^N(e^U) for k = 0..n-1
    pub log_mean_weights: Vec<f64>,
    /// log gamma^N_n(1) = sum of log_mean_weights
    pub log_gamma: f64,
    pub n: usize,
    pub n_particles: usize,
    pub seed: SeedSpec,
}

impl RunRecord {
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("k,log_mean_weight,log_gamma_cum\n");
        let mut cum = 0.0;
        for (k, w) in self.log_mean_weights.iter().enumerate() {
            cum += w;
            let _ = writeln!(s, "{k},{w:e},{cum:e}");
        }
        s
    }
}

pub fn run<M: ParticleModel>(
    model: &M,
    x0: M::State,
    n: usize,
    n_particles: usize,
    seed: SeedSpec,
) -> Result<RunRecord> {
    run_with_final(model, x0, n, n_particles, seed).map(|(r, _)| r)
}

pub fn run_with_final<M: ParticleModel>(
    model: &M,
    x0: M::State,
    n: usize,
    n_particles: usize,
    seed: SeedSpec,
) -> Result<(RunRecord, Ensemble<M::State>)> {
    let mut ensemble = init_ensemble(model, x0, n_particles)?;
    let mut rng = seed.stream();
    let mut log_mean_weights = Vec::with_capacity(n);
    let mut log_gamma = 0.0f64;
    for _ in 0..n {
        let (next, lmw) = step(&ensemble, model, &mut rng)?;
        ensemble = next;
        log_mean_weights.push(lmw);
        log_gamma += lmw;
    }
    Ok((RunRecord { log_mean_weights, log_gamma, n, n_particles, seed }, ensemble))
}

/// gamma^N_n(phi) = gamma^N_n(1) * eta_n^N(phi), signed because phi may take
/// both signs. phi = 1 returns exactly record.log_gamma.
pub fn estimate_gamma_phi<M: ParticleModel>(
    model: &M,
    record: &RunRecord,
    final_ensemble: &Ensemble<M::State>,
    phi: impl Fn(M::State) -> f64,
) -> SignedLog {
    let _ = model;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for &p in &final_ensemble.positions {
        let v = phi(p);
        if v > 0.0 {
            pos.push(v.ln());
        } else if v < 0.0 {
            neg.push((-v).ln());
        }
    }
    let n = final_ensemble.positions.len() as f64;
    SignedLog::from_pos_neg(log_sum_exp(&pos), log_sum_exp(&neg))
        .scaled(-n.ln())
        .scaled(record.log_gamma)
}
