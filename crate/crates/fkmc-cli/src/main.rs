//! Command line driver: wires the models, the particle experiments, the
//! exact variance oracles, and the spectral/drift audits together and emits
//! CSV for the plotting workflow.
//!
//! Exit codes: 0 success, 1 configuration error, 2 check failure
//! (a mathematical outcome: invalid cells, ambiguous spectrum, drift that
//! does not hold, oracle disagreement), 3 resource guard refusal.
//!
//! Every parameter can come from a flag (`--key value` or `--key=value`) or
//! from a config file (`--config path`, flat `key = value` lines, `#`
//! comments); flags win over file entries, unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;

use fkmc::drift::{
    check_mult_drift, cir_drift_params, DriftSpec, EvalMode, VFn,
};
use fkmc::error::Error;
use fkmc::finite::FiniteModel;
use fkmc::model::{discretize, gamma_oracle_via_grid, GridSpec};
use fkmc::models::{ar_model, cir_model, gaussian_rw_gamma_oracle, gaussian_rw_model, CirParams};
use fkmc::parallel::with_threads;
use fkmc::particle::run;
use fkmc::rng::SeedSpec;
use fkmc::spectral::{met_decay, principal_triple, variance_threshold_phi};
use fkmc::variance::{
    brute_force_variance, coalescent_exact_variance, relative_variance_mc, ExperimentPlan,
};

/// Agreement demanded of the two exact variance routes by `exact`.
const EXACT_AGREEMENT_TOL: f64 = 1e-10;

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            // refusals of the computation's size
            Error::TooLarge(_) => 3,
            // bad inputs
            Error::InvalidArgument(_)
            | Error::DimensionMismatch(_)
            | Error::Parse(_)
            | Error::Io(_) => 1,
            // mathematical outcomes
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

struct KeySpec {
    name: &'static str,
    help: &'static str,
}

const fn key(name: &'static str, help: &'static str) -> KeySpec {
    KeySpec { name, help }
}

const COMMON_KEYS: &[KeySpec] = &[
    key("config", "flat key=value file merged under the flags"),
    key("out", "write output to this path instead of standard output"),
];

const VARIANCE_KEYS: &[KeySpec] = &[
    key("model", "gaussian-rw | ar | cir | finite"),
    key("model-file", "kernel CSV (required for model=finite)"),
    key("alpha", "AR coefficient (model=ar) / potential exponent (model=cir)"),
    key("theta", "CIR mean-reversion rate (default 10)"),
    key("mu", "CIR long-run mean (default 1)"),
    key("sigma", "CIR volatility (default 0.1)"),
    key("delta", "CIR observation time step (default 0.01)"),
    key("x0", "comma-separated start points (state indices for finite)"),
    key("n", "comma-separated horizons"),
    key("N", "particles per run"),
    key("R", "replicates per cell"),
    key("seed", "master seed (default 0)"),
    key("threads", "cap on worker threads (default: machine parallelism)"),
];

const EXACT_KEYS: &[KeySpec] = &[
    key("model-file", "kernel CSV of the finite model"),
    key("x0", "start state index (default 0)"),
    key("n", "horizon"),
    key("N", "particle count"),
];

const SPECTRAL_KEYS: &[KeySpec] = &[
    key("model", "gaussian-rw | ar | cir (discretized on the grid below)"),
    key("model-file", "kernel CSV (alternative to model + grid)"),
    key("alpha", "AR coefficient (model=ar) / potential exponent (model=cir)"),
    key("theta", "CIR mean-reversion rate (default 10)"),
    key("mu", "CIR long-run mean (default 1)"),
    key("sigma", "CIR volatility (default 0.1)"),
    key("delta", "CIR observation time step (default 0.01)"),
    key("grid-lo", "discretization grid lower edge"),
    key("grid-hi", "discretization grid upper edge"),
    key("grid-points", "discretization grid size"),
    key("x0", "state index for the MET fit and threshold (default 0; grid center for discretized models)"),
    key("met-n-lo", "first horizon of the MET fit (default 1)"),
    key("met-n-hi", "last horizon of the MET fit (default 20)"),
    key("c1", "threshold prefactor c1 (default 1)"),
];

const DRIFT_KEYS: &[KeySpec] = &[
    key("model", "gaussian-rw | ar | cir"),
    key("alpha", "AR coefficient (model=ar) / potential exponent (model=cir)"),
    key("theta", "CIR mean-reversion rate (default 10)"),
    key("mu", "CIR long-run mean (default 1)"),
    key("sigma", "CIR volatility (default 0.1)"),
    key("dt", "CIR observation time step (default 0.01)"),
    key("s", "CIR tilt parameter; selects V = 1 + 2 c_Delta s x"),
    key("v-shape", "quadratic | abs-linear | linear (non-CIR models)"),
    key("v-a", "V growth coefficient"),
    key("v-c", "V constant term (must keep V >= 1)"),
    key("delta", "drift margin delta in (0,1) (default 0.01 for cir)"),
    key("d", "sublevel radius d of C_d = {V <= d}"),
    key("mode", "closed | quadrature (default closed)"),
];

const SIMULATE_KEYS: &[KeySpec] = &[
    key("model", "gaussian-rw | ar | cir | finite"),
    key("model-file", "kernel CSV (required for model=finite)"),
    key("alpha", "AR coefficient (model=ar) / potential exponent (model=cir)"),
    key("theta", "CIR mean-reversion rate (default 10)"),
    key("mu", "CIR long-run mean (default 1)"),
    key("sigma", "CIR volatility (default 0.1)"),
    key("delta", "CIR observation time step (default 0.01)"),
    key("x0", "start point (state index for finite)"),
    key("n", "horizon"),
    key("N", "particle count"),
    key("seed", "run seed (default 0)"),
];

const SUBCOMMANDS: &[(&str, &[KeySpec], &str)] = &[
    ("variance", VARIANCE_KEYS, "Monte Carlo relative variance sweep, CSV per cell"),
    ("exact", EXACT_KEYS, "coalescent vs brute-force exact variance on a finite model"),
    ("spectral", SPECTRAL_KEYS, "principal eigentriple, MET fit, and threshold column"),
    ("drift", DRIFT_KEYS, "multiplicative drift certification report"),
    ("simulate", SIMULATE_KEYS, "single particle run, RunRecord CSV"),
];

fn global_help() -> String {
    let mut s = String::from("usage: fkmc <command> [--key value ...]\n\ncommands:\n");
    for (name, _, blurb) in SUBCOMMANDS {
        s.push_str(&format!("  {name:<9} {blurb}\n"));
    }
    s.push_str("\n`fkmc <command> --help` lists every key the command accepts.\n");
    s
}

fn command_help(name: &str, keys: &[KeySpec]) -> String {
    let mut s = format!("usage: fkmc {name} [--key value ...]\n\nkeys:\n");
    for k in keys.iter().chain(COMMON_KEYS) {
        s.push_str(&format!("  --{:<12} {}\n", k.name, k.help));
    }
    s
}

/// Parsed configuration: file entries overlaid by flags.
struct Cfg {
    cmd: &'static str,
    map: BTreeMap<String, String>,
}

impl Cfg {
    fn parse(cmd: &'static str, keys: &[KeySpec], args: &[String]) -> Result<Cfg, Failure> {
        let known =
            |k: &str| keys.iter().chain(COMMON_KEYS).any(|s| s.name == k);
        let mut flags: BTreeMap<String, String> = BTreeMap::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let Some(stripped) = arg.strip_prefix("--") else {
                return Err(Failure::config(format!(
                    "unexpected argument '{arg}': keys are passed as --key value"
                )));
            };
            let (k, v) = if let Some((k, v)) = stripped.split_once('=') {
                (k.to_string(), v.to_string())
            } else {
                let v = args.get(i + 1).ok_or_else(|| {
                    Failure::config(format!("--{stripped} is missing a value"))
                })?;
                i += 1;
                (stripped.to_string(), v.clone())
            };
            if !known(&k) {
                return Err(Failure::config(format!("unknown key '{k}' for {cmd}")));
            }
            flags.insert(k, v);
            i += 1;
        }
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        if let Some(path) = flags.get("config") {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::config(format!("cannot read config file {path}: {e}"))
            })?;
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Failure::config(format!("{path}:{}: expected key=value", lineno + 1))
                })?;
                let (k, v) = (k.trim(), v.trim());
                if k == "config" || !known(k) {
                    return Err(Failure::config(format!(
                        "{path}:{}: unknown key '{k}' for {cmd}",
                        lineno + 1
                    )));
                }
                map.insert(k.to_string(), v.to_string());
            }
        }
        map.extend(flags); // flags win
        Ok(Cfg { cmd, map })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str, Failure> {
        self.get(key).ok_or_else(|| {
            Failure::config(format!("missing required key '{key}' for {}", self.cmd))
        })
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T, Failure> {
        raw.trim().parse::<T>().map_err(|_| {
            Failure::config(format!(
                "key '{key}' for {}: cannot parse '{raw}'",
                self.cmd
            ))
        })
    }

    fn f64_req(&self, key: &str) -> Result<f64, Failure> {
        self.parsed(key, self.require(key)?)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, Failure> {
        match self.get(key) {
            Some(raw) => self.parsed(key, raw),
            None => Ok(default),
        }
    }

    fn usize_req(&self, key: &str) -> Result<usize, Failure> {
        self.parsed(key, self.require(key)?)
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, Failure> {
        match self.get(key) {
            Some(raw) => self.parsed(key, raw),
            None => Ok(default),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64, Failure> {
        match self.get(key) {
            Some(raw) => self.parsed(key, raw),
            None => Ok(default),
        }
    }

    fn list_req<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, Failure> {
        let raw = self.require(key)?;
        let items: Result<Vec<T>, Failure> = raw
            .split(',')
            .map(|piece| self.parsed::<T>(key, piece))
            .collect();
        let items = items?;
        if items.is_empty() {
            return Err(Failure::config(format!("key '{key}' is an empty list")));
        }
        Ok(items)
    }

    fn threads(&self) -> Result<Option<usize>, Failure> {
        match self.get("threads") {
            None => Ok(None),
            Some(raw) => {
                let k: usize = self.parsed("threads", raw)?;
                if k == 0 {
                    return Err(Failure::config("key 'threads' must be at least 1"));
                }
                Ok(Some(k))
            }
        }
    }

    fn emit(&self, text: &str) -> Result<(), Failure> {
        match self.get("out") {
            Some(path) => std::fs::write(path, text).map_err(|e| {
                Failure::config(format!("cannot write {path}: {e}"))
            }),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn cir_params(cfg: &Cfg, step_key: &str) -> Result<CirParams, Failure> {
    let base = CirParams::reference();
    let params = CirParams {
        theta: cfg.f64_or("theta", base.theta)?,
        mu: cfg.f64_or("mu", base.mu)?,
        sigma: cfg.f64_or("sigma", base.sigma)?,
        delta: cfg.f64_or(step_key, base.delta)?,
        alpha: cfg.f64_or("alpha", base.alpha)?,
    };
    params.validate()?;
    Ok(params)
}

fn model_file_stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "finite".to_string())
}

// ---------------------------------------------------------------- variance

// Runs the plan, emits the table, and maps invalid cells to exit 2: the CSV
// is still written so the failure can be inspected.
fn finish_variance(cfg: &Cfg, table: fkmc::variance::VarianceTable) -> Result<u8, Failure> {
    cfg.emit(&table.to_csv_string())?;
    Ok(if table.all_valid() { 0 } else { 2 })
}

fn cmd_variance(cfg: &Cfg) -> Result<u8, Failure> {
    let n_list: Vec<usize> = cfg.list_req("n")?;
    let n_particles = cfg.usize_req("N")?;
    let replicates = cfg.usize_req("R")?;
    let seed = cfg.u64_or("seed", 0)?;
    let threads = cfg.threads()?;

    match cfg.require("model")? {
        "gaussian-rw" => {
            let model = gaussian_rw_model();
            let x0: Vec<f64> = cfg.list_req("x0")?;
            let plan = ExperimentPlan::new(
                "gaussian-rw", x0, n_list, n_particles, replicates, seed,
            )?;
            let table = with_threads(threads, || {
                relative_variance_mc(&model, &plan, |x, n| {
                    Some(gaussian_rw_gamma_oracle(x, n))
                })
            })?;
            finish_variance(cfg, table)
        }
        "ar" => {
            let model = ar_model(cfg.f64_req("alpha")?)?;
            let x0: Vec<f64> = cfg.list_req("x0")?;
            let plan =
                ExperimentPlan::new("ar", x0, n_list, n_particles, replicates, seed)?;
            let oracle = grid_oracle_map(&model, &plan)?;
            let table = with_threads(threads, || {
                relative_variance_mc(&model, &plan, |x, n| {
                    oracle.get(&(x.to_bits(), n)).copied()
                })
            })?;
            finish_variance(cfg, table)
        }
        "cir" => {
            let model = cir_model(cir_params(cfg, "delta")?)?;
            let x0: Vec<f64> = cfg.list_req("x0")?;
            let plan =
                ExperimentPlan::new("cir", x0, n_list, n_particles, replicates, seed)?;
            let oracle = grid_oracle_map(&model, &plan)?;
            let table = with_threads(threads, || {
                relative_variance_mc(&model, &plan, |x, n| {
                    oracle.get(&(x.to_bits(), n)).copied()
                })
            })?;
            finish_variance(cfg, table)
        }
        "finite" => {
            let path = cfg.require("model-file")?;
            let model = FiniteModel::read_csv(Path::new(path))?;
            let x0: Vec<usize> = cfg.list_req("x0")?;
            let id = model_file_stem(path);
            let plan =
                ExperimentPlan::new(&id, x0, n_list, n_particles, replicates, seed)?;
            let ones = vec![1.0; model.dim()];
            let table = with_threads(threads, || {
                relative_variance_mc(&model, &plan, |x, n| {
                    model.gamma_exact_finite(x, n, &ones).ok().map(|g| {
                        if g.sign <= 0 { f64::NEG_INFINITY } else { g.log_abs }
                    })
                })
            })?;
            finish_variance(cfg, table)
        }
        other => Err(Failure::config(format!(
            "unknown model '{other}': expected gaussian-rw, ar, cir, or finite"
        ))),
    }
}

// Exact log gamma per (x0, n) cell by anchored-grid quadrature, precomputed
// so the experiment loop is a plain lookup. Keys are the exact bit patterns
// of the plan's x0 values.
fn grid_oracle_map(
    model: &fkmc::model::FkModel,
    plan: &ExperimentPlan<f64>,
) -> Result<BTreeMap<(u64, usize), f64>, Failure> {
    let mut map = BTreeMap::new();
    for &x0 in &plan.x0_list {
        let (lo, hi, step) = fkmc::model::default_oracle_window(model, x0);
        let oracle = gamma_oracle_via_grid(model, x0, &plan.n_list, lo, hi, step)?;
        if oracle.disc.truncation_warning {
            return Err(Failure::config(format!(
                "oracle grid for x0 = {x0} loses too much mass; widen the window"
            )));
        }
        for (i, &n) in plan.n_list.iter().enumerate() {
            map.insert((x0.to_bits(), n), oracle.log_gamma[i]);
        }
    }
    Ok(map)
}

// ------------------------------------------------------------------- exact

fn cmd_exact(cfg: &Cfg) -> Result<u8, Failure> {
    let path = cfg.require("model-file")?;
    let model = FiniteModel::read_csv(Path::new(path))?;
    let x0 = cfg.usize_or("x0", 0)?;
    let n = cfg.usize_req("n")?;
    let n_particles = cfg.usize_req("N")?;
    let coal = coalescent_exact_variance(&model, x0, n, n_particles)?;
    let brute = brute_force_variance(&model, x0, n, n_particles)?;
    let diff = coal - brute;
    let text = format!(
        "coalescent = {coal:e}\nbrute_force = {brute:e}\ndiff = {diff:e}\n"
    );
    cfg.emit(&text)?;
    Ok(if diff.abs() > EXACT_AGREEMENT_TOL { 2 } else { 0 })
}

// ---------------------------------------------------------------- spectral

fn cmd_spectral(cfg: &Cfg) -> Result<u8, Failure> {
    // For a grid-built model the MET fit defaults to the central node; at
    // the grid edge h0 is so small that every gap sits under the exclusion
    // floor and the fit is empty.
    let mut default_x = 0usize;
    let (model, labels): (FiniteModel, Vec<String>) = if let Some(path) = cfg.get("model-file") {
        let m = FiniteModel::read_csv(Path::new(path))?;
        let labels = m.labels().to_vec();
        (m, labels)
    } else {
        let lo = cfg.f64_req("grid-lo")?;
        let hi = cfg.f64_req("grid-hi")?;
        let points = cfg.usize_req("grid-points")?;
        let continuous = match cfg.require("model")? {
            "gaussian-rw" => gaussian_rw_model(),
            "ar" => ar_model(cfg.f64_req("alpha")?)?,
            "cir" => cir_model(cir_params(cfg, "delta")?)?,
            other => {
                return Err(Failure::config(format!(
                    "unknown model '{other}': expected gaussian-rw, ar, cir, or a model-file"
                )))
            }
        };
        let disc = discretize(&continuous, GridSpec::trapezoid(lo, hi, points))?;
        let labels = disc.model.labels().to_vec();
        default_x = points / 2;
        (disc.model, labels)
    };

    let x_index = cfg.usize_or("x0", default_x)?;
    let n_lo = cfg.usize_or("met-n-lo", 1)?;
    let n_hi = cfg.usize_or("met-n-hi", 20)?;
    let c1 = cfg.usize_or("c1", 1)? as u32;

    let triple = principal_triple(&model)?;
    let d = model.dim();
    let ones = vec![1.0; d];
    let met = met_decay(&model, &triple, x_index, &[ones], (n_lo, n_hi))?;
    let v_weights = model
        .v_weights()
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![1.0; d]);

    let mut text = String::new();
    text.push_str(&format!("# lambda = {:.6}\n", triple.lambda));
    text.push_str(&format!("# lambda_raw = {:e}\n", triple.lambda));
    text.push_str(&format!("# lambda2 = {:e}\n", met.lambda2));
    text.push_str(&format!("# B0 = {:e}\n", met.b0));
    text.push_str(&format!("# B1 = {:e}\n", met.b1));
    text.push_str(&format!("# note = {}\n", met.note));
    text.push_str("state,h0,mu0,phi_threshold\n");
    for i in 0..d {
        let phi = variance_threshold_phi(i, &v_weights, &triple, &met, c1)?;
        text.push_str(&format!(
            "{},{:e},{:e},{}\n",
            labels[i], triple.h0[i], triple.mu0[i], phi.value
        ));
    }
    cfg.emit(&text)?;
    Ok(0)
}

// ------------------------------------------------------------------- drift

fn cmd_drift(cfg: &Cfg) -> Result<u8, Failure> {
    match cfg.require("model")? {
        "cir" => {
            // The calibrated CIR certificate: V = 1 + 2 c_Delta s x, level
            // d_lower, margin delta; the s-tilt fixes the whole geometry.
            let params = cir_params(cfg, "dt")?;
            let s = cfg.f64_req("s")?;
            let delta = cfg.f64_or("delta", 0.01)?;
            let bounds = cir_drift_params(&params, s, delta)?;
            let model = cir_model(params)?;
            let a = 2.0 * params.c_delta() * s;
            let spec = DriftSpec::new(
                VFn::Linear { a, c: 1.0 },
                delta,
                bounds.d_lower,
                None,
                None,
            )?;
            let report = check_mult_drift(&model, &spec, EvalMode::ClosedForm)?;
            let mut text = format!(
                "d_lower = {:e}\nb_d = {:e}\n",
                bounds.d_lower, bounds.b_d
            );
            text.push_str(&report.to_kv_string());
            cfg.emit(&text)?;
            Ok(if report.holds { 0 } else { 2 })
        }
        id @ ("gaussian-rw" | "ar") => {
            let model = if id == "ar" {
                ar_model(cfg.f64_req("alpha")?)?
            } else {
                gaussian_rw_model()
            };
            let v_a = cfg.f64_req("v-a")?;
            let v_c = cfg.f64_req("v-c")?;
            let v = match cfg.require("v-shape")? {
                "quadratic" => VFn::Quadratic { a: v_a, c: v_c },
                "abs-linear" => VFn::AbsLinear { a: v_a, c: v_c },
                "linear" => VFn::Linear { a: v_a, c: v_c },
                other => {
                    return Err(Failure::config(format!(
                        "unknown v-shape '{other}': expected quadratic, abs-linear, or linear"
                    )))
                }
            };
            let delta = cfg.f64_req("delta")?;
            let d = cfg.f64_req("d")?;
            let mode = match cfg.get("mode").unwrap_or("closed") {
                "closed" => EvalMode::ClosedForm,
                "quadrature" => EvalMode::Quadrature,
                other => {
                    return Err(Failure::config(format!(
                        "unknown mode '{other}': expected closed or quadrature"
                    )))
                }
            };
            let spec = DriftSpec::new(v, delta, d, None, None)?;
            let report = check_mult_drift(&model, &spec, mode)?;
            cfg.emit(&report.to_kv_string())?;
            Ok(if report.holds { 0 } else { 2 })
        }
        other => Err(Failure::config(format!(
            "unknown model '{other}': drift checks cover gaussian-rw, ar, and cir"
        ))),
    }
}

// ---------------------------------------------------------------- simulate

fn cmd_simulate(cfg: &Cfg) -> Result<u8, Failure> {
    let n = cfg.usize_req("n")?;
    let n_particles = cfg.usize_req("N")?;
    let seed = SeedSpec::new(cfg.u64_or("seed", 0)?, 0);
    let record = match cfg.require("model")? {
        "gaussian-rw" => run(&gaussian_rw_model(), cfg.f64_req("x0")?, n, n_particles, seed)?,
        "ar" => {
            let model = ar_model(cfg.f64_req("alpha")?)?;
            run(&model, cfg.f64_req("x0")?, n, n_particles, seed)?
        }
        "cir" => {
            let model = cir_model(cir_params(cfg, "delta")?)?;
            run(&model, cfg.f64_req("x0")?, n, n_particles, seed)?
        }
        "finite" => {
            let model = FiniteModel::read_csv(Path::new(cfg.require("model-file")?))?;
            run(&model, cfg.usize_req("x0")?, n, n_particles, seed)?
        }
        other => {
            return Err(Failure::config(format!(
                "unknown model '{other}': expected gaussian-rw, ar, cir, or finite"
            )))
        }
    };
    cfg.emit(&record.to_csv_string())?;
    Ok(0)
}

// -------------------------------------------------------------------- main

fn dispatch(args: &[String]) -> Result<u8, Failure> {
    let Some(cmd) = args.first() else {
        return Err(Failure::config(global_help()));
    };
    if cmd == "--help" || cmd == "-h" || cmd == "help" {
        print!("{}", global_help());
        return Ok(0);
    }
    let Some((name, keys, _)) = SUBCOMMANDS.iter().find(|(n, _, _)| n == cmd) else {
        return Err(Failure::config(format!(
            "unknown command '{cmd}'\n\n{}",
            global_help()
        )));
    };
    let rest = &args[1..];
    if rest.iter().any(|a| a == "--help" || a == "-h") {
        print!("{}", command_help(name, keys));
        return Ok(0);
    }
    let cfg = Cfg::parse(name, keys, rest)?;
    match *name {
        "variance" => cmd_variance(&cfg),
        "exact" => cmd_exact(&cfg),
        "spectral" => cmd_spectral(&cfg),
        "drift" => cmd_drift(&cfg),
        "simulate" => cmd_simulate(&cfg),
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("fkmc: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
