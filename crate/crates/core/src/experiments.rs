//! Experiment harness: variance scans, cost scans and work profiles written as CSV.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::ops::RangeInclusive;

use crate::brownian::Correlation;
use crate::engine::{level_statistics, run, step_size, MlmcConfig, MlmcResult};
use crate::error::{MlmcError, Result};
use crate::heston::{gbm_system, heston_system, Gbm, Heston, HestonParams};
use crate::model::SdeSystem;
use crate::payoff::{builtin_payoff, BuiltinPayoff};
use crate::schemes::Scheme;

/// A built-in model selected by name.
#[derive(Debug, Clone)]
pub enum Model {
    Heston(Heston<f64>),
    Gbm(Gbm<f64>),
}

impl Model {
    fn inner(&self) -> &dyn SdeSystem<f64> {
        match self {
            Model::Heston(m) => m,
            Model::Gbm(m) => m,
        }
    }
}

impl SdeSystem<f64> for Model {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }
    fn noise_dim(&self) -> usize {
        self.inner().noise_dim()
    }
    fn initial_state(&self) -> &[f64] {
        self.inner().initial_state()
    }
    fn horizon(&self) -> f64 {
        self.inner().horizon()
    }
    fn correlation(&self) -> &Correlation<f64> {
        self.inner().correlation()
    }
    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.inner().drift(x, t, out)
    }
    fn diffusion(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.inner().diffusion(x, t, out)
    }
    fn diffusion_jacobian(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.inner().diffusion_jacobian(x, t, out)
    }
    fn h_tensor(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.inner().h_tensor(x, t, out)
    }
}

const PAYOFF_KEYS: [&str; 2] = ["strike", "component"];
const HESTON_KEYS: [&str; 9] = ["kappa", "theta", "xi", "mu", "eta", "s1", "s2", "T", "rho"];
const GBM_KEYS: [&str; 4] = ["mu", "sigma", "s0", "T"];

fn check_keys(params: &BTreeMap<String, f64>, model_keys: &[&str], model: &str) -> Result<()> {
    for key in params.keys() {
        if !model_keys.contains(&key.as_str()) && !PAYOFF_KEYS.contains(&key.as_str()) {
            return Err(MlmcError::Config(format!("unknown parameter `{key}` for model `{model}`")));
        }
    }
    Ok(())
}

/// Builds `heston` (keys `kappa theta xi mu eta s1 s2 T rho`) or `gbm` (keys
/// `mu sigma s0 T`); missing keys take the defaults of the test configuration.
pub fn build_model(name: &str, params: &BTreeMap<String, f64>) -> Result<Model> {
    let get = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
    match name {
        "heston" => {
            check_keys(params, &HESTON_KEYS, name)?;
            let p = HestonParams {
                kappa: get("kappa", 1.0),
                theta: get("theta", 1.0),
                xi: get("xi", 1.0),
                mu: get("mu", 1.0),
                eta: get("eta", 0.25),
            };
            let mut model = heston_system(p, [get("s1", 0.5), get("s2", 1.0)], get("T", 0.125))?;
            if let Some(&rho) = params.get("rho") {
                if !(-1.0..=1.0).contains(&rho) {
                    return Err(MlmcError::Domain(format!("rho must lie in [-1, 1], got {rho}")));
                }
                let root = vec![1.0, 0.0, rho, (1.0 - rho * rho).sqrt()];
                model = model.with_correlation(Correlation::from_root(2, root)?)?;
            }
            Ok(Model::Heston(model))
        }
        "gbm" => {
            check_keys(params, &GBM_KEYS, name)?;
            Ok(Model::Gbm(gbm_system(
                get("mu", 1.0),
                get("sigma", 0.2),
                get("s0", 1.0),
                get("T", 0.125),
            )?))
        }
        other => Err(MlmcError::Config(format!("unknown model `{other}` (expected heston or gbm)"))),
    }
}

/// Payoff by name; `component` defaults to the last state component, `strike` to 1.
pub fn build_payoff(name: &str, params: &BTreeMap<String, f64>, dim: usize) -> Result<BuiltinPayoff<f64>> {
    let component = match params.get("component") {
        Some(&c) if c >= 0.0 && c.fract() == 0.0 => c as usize,
        Some(&c) => return Err(MlmcError::Config(format!("component must be a non-negative integer, got {c}"))),
        None => dim - 1,
    };
    builtin_payoff(name, component, params.get("strike").copied().unwrap_or(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub model: String,
    /// Model and payoff parameter overrides.
    pub params: BTreeMap<String, f64>,
    pub payoff: String,
    pub schemes: Vec<Scheme>,
    pub refinements: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub ito_linearize: bool,
    /// Samples per level in variance scans.
    pub samples: u64,
    /// Levels covered by variance scans.
    pub levels: RangeInclusive<u32>,
    pub max_level: u32,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            model: "heston".into(),
            params: BTreeMap::new(),
            payoff: "sin".into(),
            schemes: vec![Scheme::Euler, Scheme::Antithetic, Scheme::ApproxMilstein],
            refinements: vec![2, 3, 4, 5, 7],
            epsilons: vec![2e-2, 1e-2, 5e-3, 2e-3, 1e-3],
            ito_linearize: false,
            samples: 100_000,
            levels: 1..=6,
            max_level: 12,
            seed: 0,
            threads: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() || self.refinements.is_empty() || self.epsilons.is_empty() {
            return Err(MlmcError::Config("need at least one scheme, one M and one epsilon".into()));
        }
        if self.samples < 2 {
            return Err(MlmcError::Config("need at least two samples per level".into()));
        }
        if self.levels.is_empty() {
            return Err(MlmcError::Config("empty level range".into()));
        }
        if self.threads == Some(0) {
            return Err(MlmcError::Config("thread count must be positive".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Model> {
        build_model(&self.model, &self.params)
    }

    pub fn build_payoff(&self, model: &Model) -> Result<BuiltinPayoff<f64>> {
        build_payoff(&self.payoff, &self.params, model.state_dim())
    }

    fn config(&self, scheme: Scheme, refinement: usize, epsilon: f64) -> MlmcConfig<f64> {
        MlmcConfig {
            epsilon,
            refinement,
            scheme,
            ito_linearize: self.ito_linearize,
            initial_samples: 400,
            max_level: self.max_level,
            global_seed: self.seed,
        }
    }

    fn label(&self, scheme: Scheme) -> String {
        scheme_label(scheme, self.ito_linearize)
    }
}

/// Scheme name, suffixed with `+ito` for Ito-linearized runs.
pub fn scheme_label(scheme: Scheme, ito: bool) -> String {
    if ito {
        format!("{}+ito", scheme.name())
    } else {
        scheme.name().to_string()
    }
}

/// Rows of one subcommand plus whether every adaptive run converged.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan<R> {
    pub rows: Vec<R>,
    pub converged: bool,
}

/// A CSV row with a fixed column set.
pub trait CsvRow: Sized {
    const COLUMNS: &'static [&'static str];
    fn to_record(&self) -> Vec<String>;
    fn from_record(record: &csv::StringRecord) -> Result<Self>;
}

/// Plain decimal with 17 significant digits; integers print without a fraction.
pub fn format_decimal(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = (16 - exponent).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn field<V: std::str::FromStr>(record: &csv::StringRecord, index: usize, name: &str) -> Result<V> {
    let raw = record
        .get(index)
        .ok_or_else(|| MlmcError::Config(format!("missing column `{name}`")))?;
    raw.parse()
        .map_err(|_| MlmcError::Config(format!("column `{name}`: cannot parse `{raw}`")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub scheme: String,
    pub refinement: usize,
    pub level: u32,
    pub step: f64,
    pub variance: f64,
    pub variance_over_step: f64,
    pub samples: u64,
}

impl CsvRow for VarianceRow {
    const COLUMNS: &'static [&'static str] = &["scheme", "M", "level", "h_l", "V_l", "V_l_over_h_l", "N_used"];

    fn to_record(&self) -> Vec<String> {
        vec![
            self.scheme.clone(),
            self.refinement.to_string(),
            self.level.to_string(),
            format_decimal(self.step),
            format_decimal(self.variance),
            format_decimal(self.variance_over_step),
            self.samples.to_string(),
        ]
    }

    fn from_record(r: &csv::StringRecord) -> Result<Self> {
        let c = Self::COLUMNS;
        Ok(Self {
            scheme: field(r, 0, c[0])?,
            refinement: field(r, 1, c[1])?,
            level: field(r, 2, c[2])?,
            step: field(r, 3, c[3])?,
            variance: field(r, 4, c[4])?,
            variance_over_step: field(r, 5, c[5])?,
            samples: field(r, 6, c[6])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub scheme: String,
    pub refinement: usize,
    pub epsilon: f64,
    pub cost: f64,
    pub scaled_cost: f64,
    pub final_level: u32,
    pub estimate: f64,
    pub converged: bool,
}

impl CsvRow for CostRow {
    const COLUMNS: &'static [&'static str] =
        &["scheme", "M", "eps", "K", "eps2_K", "L_final", "estimate", "converged"];

    fn to_record(&self) -> Vec<String> {
        vec![
            self.scheme.clone(),
            self.refinement.to_string(),
            format_decimal(self.epsilon),
            format_decimal(self.cost),
            format_decimal(self.scaled_cost),
            self.final_level.to_string(),
            format_decimal(self.estimate),
            self.converged.to_string(),
        ]
    }

    fn from_record(r: &csv::StringRecord) -> Result<Self> {
        let c = Self::COLUMNS;
        Ok(Self {
            scheme: field(r, 0, c[0])?,
            refinement: field(r, 1, c[1])?,
            epsilon: field(r, 2, c[2])?,
            cost: field(r, 3, c[3])?,
            scaled_cost: field(r, 4, c[4])?,
            final_level: field(r, 5, c[5])?,
            estimate: field(r, 6, c[6])?,
            converged: field(r, 7, c[7])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkRow {
    pub scheme: String,
    pub level: u32,
    pub fraction: f64,
}

impl CsvRow for WorkRow {
    const COLUMNS: &'static [&'static str] = &["scheme", "level", "fraction_of_total_steps"];

    fn to_record(&self) -> Vec<String> {
        vec![self.scheme.clone(), self.level.to_string(), format_decimal(self.fraction)]
    }

    fn from_record(r: &csv::StringRecord) -> Result<Self> {
        let c = Self::COLUMNS;
        Ok(Self {
            scheme: field(r, 0, c[0])?,
            level: field(r, 1, c[1])?,
            fraction: field(r, 2, c[2])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub scheme: String,
    pub refinement: usize,
    pub epsilon: f64,
    pub estimate: f64,
    /// `√(Σ V_l/N_l)`.
    pub std_error: f64,
    pub cost: f64,
    pub final_level: u32,
    pub converged: bool,
}

impl CsvRow for EstimateRow {
    const COLUMNS: &'static [&'static str] =
        &["scheme", "M", "eps", "estimate", "std_error", "K", "L_final", "converged"];

    fn to_record(&self) -> Vec<String> {
        vec![
            self.scheme.clone(),
            self.refinement.to_string(),
            format_decimal(self.epsilon),
            format_decimal(self.estimate),
            format_decimal(self.std_error),
            format_decimal(self.cost),
            self.final_level.to_string(),
            self.converged.to_string(),
        ]
    }

    fn from_record(r: &csv::StringRecord) -> Result<Self> {
        let c = Self::COLUMNS;
        Ok(Self {
            scheme: field(r, 0, c[0])?,
            refinement: field(r, 1, c[1])?,
            epsilon: field(r, 2, c[2])?,
            estimate: field(r, 3, c[3])?,
            std_error: field(r, 4, c[4])?,
            cost: field(r, 5, c[5])?,
            final_level: field(r, 6, c[6])?,
            converged: field(r, 7, c[7])?,
        })
    }
}

fn with_threads<R: Send>(threads: Option<usize>, job: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| MlmcError::Config(format!("cannot start thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// `V_l` at a fixed sample count for every scheme, `M` and level in the spec.
pub fn variance_scan(spec: &ExperimentSpec) -> Result<Scan<VarianceRow>> {
    spec.validate()?;
    let model = spec.model()?;
    let payoff = spec.build_payoff(&model)?;
    with_threads(spec.threads, || {
        let mut rows = Vec::new();
        for &scheme in &spec.schemes {
            for &m in &spec.refinements {
                let config = spec.config(scheme, m, 1.0);
                for level in spec.levels.clone() {
                    let stats = level_statistics(&config, &model, &payoff, level, spec.samples)?;
                    let step = step_size(model.horizon(), m, level);
                    let variance = stats.variance().unwrap_or(0.0);
                    rows.push(VarianceRow {
                        scheme: spec.label(scheme),
                        refinement: m,
                        level,
                        step,
                        variance,
                        variance_over_step: variance / step,
                        samples: stats.count(),
                    });
                }
            }
        }
        Ok(Scan { rows, converged: true })
    })?
}

fn adaptive_runs(spec: &ExperimentSpec) -> Result<Vec<(Scheme, usize, f64, MlmcResult<f64>)>> {
    spec.validate()?;
    let model = spec.model()?;
    let payoff = spec.build_payoff(&model)?;
    with_threads(spec.threads, || {
        let mut out = Vec::new();
        for &scheme in &spec.schemes {
            for &m in &spec.refinements {
                for &eps in &spec.epsilons {
                    let result = run(&spec.config(scheme, m, eps), &model, &payoff)?;
                    out.push((scheme, m, eps, result));
                }
            }
        }
        Ok(out)
    })?
}

/// One adaptive run per `(scheme, M, ε)`, recording the weighted cost.
pub fn cost_scan(spec: &ExperimentSpec) -> Result<Scan<CostRow>> {
    let runs = adaptive_runs(spec)?;
    let converged = runs.iter().all(|r| r.3.converged);
    let rows = runs
        .into_iter()
        .map(|(scheme, m, eps, r)| CostRow {
            scheme: spec.label(scheme),
            refinement: m,
            epsilon: eps,
            cost: r.total_cost,
            scaled_cost: eps * eps * r.total_cost,
            final_level: r.final_level(),
            estimate: r.estimate,
            converged: r.converged,
        })
        .collect();
    Ok(Scan { rows, converged })
}

/// Point estimates for every `(scheme, M, ε)`.
pub fn estimate(spec: &ExperimentSpec) -> Result<Scan<EstimateRow>> {
    let runs = adaptive_runs(spec)?;
    let converged = runs.iter().all(|r| r.3.converged);
    let rows = runs
        .into_iter()
        .map(|(scheme, m, eps, r)| EstimateRow {
            scheme: spec.label(scheme),
            refinement: m,
            epsilon: eps,
            estimate: r.estimate,
            std_error: r.sampling_variance().sqrt(),
            cost: r.total_cost,
            final_level: r.final_level(),
            converged: r.converged,
        })
        .collect();
    Ok(Scan { rows, converged })
}

/// Fraction of the weighted steps spent on each level, one run per scheme at the first
/// `M` and `ε` of the spec.
pub fn work_profile(spec: &ExperimentSpec) -> Result<Scan<WorkRow>> {
    let narrowed = ExperimentSpec {
        refinements: spec.refinements.iter().take(1).copied().collect(),
        epsilons: spec.epsilons.iter().take(1).copied().collect(),
        ..spec.clone()
    };
    let runs = adaptive_runs(&narrowed)?;
    let converged = runs.iter().all(|r| r.3.converged);
    let mut rows = Vec::new();
    for (scheme, _, _, r) in &runs {
        for (level, fraction) in r.work_fractions().into_iter().enumerate() {
            rows.push(WorkRow {
                scheme: spec.label(*scheme),
                level: level as u32,
                fraction,
            });
        }
    }
    Ok(Scan { rows, converged })
}

/// First line of every CSV file written here.
pub fn version_stamp(subcommand: &str) -> String {
    format!("# mlmc-bench {} {subcommand}", env!("CARGO_PKG_VERSION"))
}

/// Writes the version stamp, the column header and the rows.
pub fn write_csv<R: CsvRow, W: Write>(mut out: W, subcommand: &str, rows: &[R]) -> Result<()> {
    writeln!(out, "{}", version_stamp(subcommand))?;
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(R::COLUMNS)?;
    for row in rows {
        writer.write_record(row.to_record())?;
    }
    writer.flush()?;
    Ok(())
}

/// Parses a file produced by [`write_csv`]; the header must match `R::COLUMNS`.
pub fn read_csv<R: CsvRow, I: BufRead>(input: I) -> Result<Vec<R>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header = reader.headers()?.clone();
    for (i, name) in R::COLUMNS.iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(MlmcError::Config(format!("missing column `{name}`")));
        }
    }
    reader
        .records()
        .map(|record| R::from_record(&record?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, 2000.0, 1.1331484530668263, 6.02e23, 1e-9, -0.907365, 0.0] {
            let s = format_decimal(x);
            assert!(!s.contains('e'), "{s}");
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(format_decimal(2000.0), "2000");
        assert_eq!(format_decimal(0.125), "0.125");
    }

    #[test]
    fn model_parameters_by_name() {
        let mut params = BTreeMap::new();
        params.insert("eta".to_string(), 0.5);
        params.insert("strike".to_string(), 1.1);
        let m = build_model("heston", &params).unwrap();
        let mut b = [0.0; 4];
        m.diffusion(&[0.5, 1.0], 0.0, &mut b);
        assert!((b[3] - 0.5 * 0.5f64.sqrt()).abs() < 1e-15);
        params.insert("sigma".to_string(), 0.3);
        assert!(build_model("heston", &params).is_err());
        assert!(build_model("cir", &BTreeMap::new()).is_err());
        let g = build_model("gbm", &BTreeMap::new()).unwrap();
        assert_eq!(g.initial_state(), &[1.0]);
        let p = build_payoff("call", &BTreeMap::new(), 2).unwrap();
        assert_eq!(p, crate::payoff::european_call(1, 1.0));
    }

    #[test]
    fn correlated_heston_by_rho() {
        let mut params = BTreeMap::new();
        params.insert("rho".to_string(), -0.5);
        let m = build_model("heston", &params).unwrap();
        assert!((m.correlation().omega()[1] + 0.5).abs() < 1e-15);
        params.insert("rho".to_string(), 1.5);
        assert!(build_model("heston", &params).is_err());
    }

    #[test]
    fn rejects_bad_header() {
        let text = "# stamp\nscheme,M,eps\neuler,2,0.1\n";
        let err = read_csv::<CostRow, _>(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("K"), "{err}");
    }
}
