//! Continuous-state models: kernel + potential + state space, plus grid
//! discretization which turns them into FiniteModel oracles.

use crate::error::{Error, Result};
use crate::finite::FiniteModel;
use crate::models::{self, CirParams};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateSpace {
    RealLine,
    PositiveHalfLine,
}

#[derive(Debug, Clone)]
pub enum Kernel {
    /// x' = x + xi, xi ~ N(0,1)
    GaussianRw,
    /// x' = alpha x + xi, xi ~ N(0,1)
    GaussianAr { alpha: f64 },
    /// exact CIR skeleton over one time step delta
    Cir(CirParams),
}

#[derive(Debug, Clone)]
pub enum Potential {
    /// U(x) = -x^2
    NegSquare,
    /// U(x) = |x|
    AbsValue,
    /// U(x) = alpha log x
    LogLinear { alpha: f64 },
}

impl Potential {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Potential::NegSquare => -x * x,
            Potential::AbsValue => x.abs(),
            Potential::LogLinear { alpha } => alpha * x.ln(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FkModel {
    pub kernel: Kernel,
    pub potential: Potential,
    pub state_space: StateSpace,
    name: String,
}

impl FkModel {
    pub(crate) fn new(
        kernel: Kernel,
        potential: Potential,
        state_space: StateSpace,
        name: &str,
    ) -> Self {
        FkModel { kernel, potential, state_space, name: name.to_string() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn log_potential(&self, x: f64) -> f64 {
        self.potential.eval(x)
    }

    pub fn sample(&self, x: f64, rng: &mut SplitMix64) -> Result<f64> {
        match &self.kernel {
            Kernel::GaussianRw => Ok(x + models::standard_normal(rng)),
            Kernel::GaussianAr { alpha } => Ok(alpha * x + models::standard_normal(rng)),
            Kernel::Cir(p) => models::cir_transition_sample(p, x, rng),
        }
    }

    pub fn has_density(&self) -> bool {
        true
    }

    /// log of the transition density y -> M(x, dy)/dy.
    pub fn log_density(&self, x: f64, y: f64) -> f64 {
        match &self.kernel {
            Kernel::GaussianRw => models::log_gaussian_density(y - x),
            Kernel::GaussianAr { alpha } => models::log_gaussian_density(y - alpha * x),
            Kernel::Cir(p) => models::cir_log_density(p, x, y),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match self.state_space {
            StateSpace::RealLine => x.is_finite(),
            StateSpace::PositiveHalfLine => x.is_finite() && x > 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadRule {
    Trapezoid,
    Simpson,
}

#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
    pub rule: QuadRule,
}

impl GridSpec {
    pub fn trapezoid(lower: f64, upper: f64, points: usize) -> Self {
        GridSpec { lower, upper, points, rule: QuadRule::Trapezoid }
    }

    /// Uniform grid that contains x0 as an exact node: nodes x0 + k h for
    /// integer k, extended to cover [lower, upper]. Snapping x0 to the
    /// nearest node of a non-anchored grid costs ~1e-3 relative error in the
    /// oracle; anchoring removes that entirely.
    pub fn anchored(lower: f64, upper: f64, step: f64, x0: f64) -> Result<(Self, usize)> {
        if !(step > 0.0) || !(lower < upper) || !x0.is_finite() {
            return Err(Error::InvalidArgument("bad anchored grid parameters".into()));
        }
        let n_lo = ((x0 - lower) / step).ceil().max(0.0) as usize;
        let n_hi = ((upper - x0) / step).ceil().max(0.0) as usize;
        let spec = GridSpec {
            lower: x0 - n_lo as f64 * step,
            upper: x0 + n_hi as f64 * step,
            points: n_lo + n_hi + 1,
            rule: QuadRule::Trapezoid,
        };
        Ok((spec, n_lo))
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = (self.upper - self.lower) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.lower + i as f64 * h).collect()
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        if self.points < 2 {
            return Err(Error::InvalidArgument("grid needs at least 2 points".into()));
        }
        let h = (self.upper - self.lower) / (self.points - 1) as f64;
        match self.rule {
            QuadRule::Trapezoid => {
                let mut w = vec![h; self.points];
                w[0] = h / 2.0;
                w[self.points - 1] = h / 2.0;
                Ok(w)
            }
            QuadRule::Simpson => {
                if self.points % 2 == 0 || self.points < 3 {
                    return Err(Error::InvalidArgument(
                        "Simpson rule needs an odd point count >= 3".into(),
                    ));
                }
                let mut w = vec![0.0; self.points];
                for (i, wi) in w.iter_mut().enumerate() {
                    *wi = if i == 0 || i == self.points - 1 {
                        h / 3.0
                    } else if i % 2 == 1 {
                        4.0 * h / 3.0
                    } else {
                        2.0 * h / 3.0
                    };
                }
                Ok(w)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscretizedModel {
    pub model: FiniteModel,
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    /// U = 0 row masses (quadrature of the bare density along each row).
    pub row_mass: Vec<f64>,
    /// worst |1 - row mass| over the central half of the grid
    pub mass_deficit: f64,
    /// true when some central-half row keeps less than 0.999 of its mass on
    /// the grid; the discretization is then too narrow to trust as an oracle
    pub truncation_warning: bool,
}

/// q[i][j] = e^{U(x_i)} density(x_i, x_j) w_j. Rows at the very edge of the
/// grid always lose outward mass; the deficit is therefore reported over the
/// central half, which is the region an oracle run actually visits.
pub fn discretize(model: &FkModel, grid: GridSpec) -> Result<DiscretizedModel> {
    if !model.has_density() {
        return Err(Error::InvalidArgument(
            "discretize needs a kernel density".into(),
        ));
    }
    if grid.points < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 points".into()));
    }
    if !(grid.lower < grid.upper) {
        return Err(Error::InvalidArgument("grid lower must be below upper".into()));
    }
    if model.state_space == StateSpace::PositiveHalfLine && grid.lower <= 0.0 {
        return Err(Error::InvalidArgument(
            "grid must stay inside the positive half-line".into(),
        ));
    }
    let xs = grid.nodes();
    let w = grid.weights()?;
    let d = xs.len();

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut row_mass = Vec::with_capacity(d);
    for &xi in &xs {
        let eu = model.log_potential(xi).exp();
        let mut mass = 0.0;
        let mut row = Vec::with_capacity(d);
        for (j, &xj) in xs.iter().enumerate() {
            let dens = model.log_density(xi, xj).exp();
            mass += dens * w[j];
            row.push(eu * dens * w[j]);
        }
        row_mass.push(mass);
        rows.push(row);
    }

    let labels: Vec<String> = xs.iter().map(|x| format!("{x:e}")).collect();
    let finite = FiniteModel::new(&rows, labels, None)?;

    let central = d / 4..(3 * d).div_ceil(4);
    let mass_deficit = central
        .clone()
        .map(|i| (1.0 - row_mass[i]).abs())
        .fold(0.0, f64::max);
    let truncation_warning = central.clone().any(|i| row_mass[i] < 0.999);

    Ok(DiscretizedModel {
        model: finite,
        grid: xs,
        weights: w,
        row_mass,
        mass_deficit,
        truncation_warning,
    })
}

/// log gamma_{n,x0}(1) for each requested n, by quadrature on an anchored
/// grid. The window (lower, upper, step) is the caller's truncation choice;
/// accuracy is checked by refining the window/step, not assumed.
pub struct GridOracle {
    pub log_gamma: Vec<f64>,
    pub disc: DiscretizedModel,
    pub x_index: usize,
}

pub fn gamma_oracle_via_grid(
    model: &FkModel,
    x0: f64,
    ns: &[usize],
    lower: f64,
    upper: f64,
    step: f64,
) -> Result<GridOracle> {
    let (spec, x_index) = GridSpec::anchored(lower, upper, step, x0)?;
    let disc = discretize(model, spec)?;
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let ones = vec![1.0; disc.grid.len()];
    let seq = disc.model.gamma_exact_prefix(x_index, n_max, &ones)?;
    let log_gamma = ns
        .iter()
        .map(|&n| {
            let g = seq[n];
            if g.sign <= 0 {
                f64::NEG_INFINITY
            } else {
                g.log_abs
            }
        })
        .collect();
    Ok(GridOracle { log_gamma, disc, x_index })
}

/// Default oracle windows. Each model's window was chosen so that halving
/// the step or widening the window moves log gamma by < 1e-9; the tests
/// re-verify this by dual-resolution comparison.
pub fn default_oracle_window(model: &FkModel, x0: f64) -> (f64, f64, f64) {
    match &model.kernel {
        Kernel::GaussianRw | Kernel::GaussianAr { .. } => {
            (x0.min(-12.0).min(x0 - 6.0), x0.max(12.0).max(x0 + 6.0), 0.01)
        }
        Kernel::Cir(p) => {
            let m = x0.min(p.mu);
            let lo = if m < 0.5 { 0.3 * m } else { 0.6 * m };
            let hi = 1.35 * x0.max(p.mu);
            // trapezoid step ~ a quarter of the one-step conditional sd at
            // the left edge, the narrowest part of the transition density
            let h = p.sigma * (lo * p.delta).sqrt() / 4.0;
            (lo, hi, h)
        }
    }
}
