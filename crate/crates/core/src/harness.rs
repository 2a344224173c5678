//! Experiment runner: flat `key = value` configs, per-trial CSV, aggregate
//! JSON and a manifest. Output is a pure function of the config bytes except
//! for the manifest's `timestamp` field.

use crate::decomposition::{cover_analysis_prechecked, synthetic_candidate, synthetic_gradual, CoverBranch, CoverConstants};
use crate::ell::{decompose, verify_structure, KVector, Lat, PartKind};
use crate::estimators::{compute_bundle, is_standard, project_q, wtilde_order, QMatrix, StandardOptions};
use crate::graph::{RegularMatrix, RowMask};
use crate::graph_stats::{check_omega, deflated_norm, left_right_split, wilson_interval, NormOptions, OmegaOptions};
use crate::rng::{trial_rng, Module};
use crate::sampler::{enumerate_all, sample_matrix, sample_multigraph_with, sample_uniform_with, sample_z_with, SwitchChain};
use crate::spectral::{delocalization_census, smallest_sv_probe, Branch, CensusOptions, DENSE_BUDGET};
use crate::taxonomy::{
    ac_lower_bound, almost_constant_witness, classify_with, decay_check, derive_params, fuzz_vector, in_s, norm_bound_check, split_shifted, SteepClass,
    TaxonomyConstants, TaxonomyParams, XStar,
};
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MANIFEST_SCHEMA: &str = "regkernel.manifest/1";
pub const SUMMARY_SCHEMA: &str = "regkernel.summary/1";
pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_HARD_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("computation failed: {0}")]
    Compute(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

type Result<T> = std::result::Result<T, HarnessError>;

fn cfg_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn compute<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Compute(e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Uniformity,
    Expansion,
    DeflatedNorm,
    TaxonomyCensus,
    EllFuzz,
    EstimatorIdentities,
    ZEquivalence,
    Cover,
    Delocalization,
}

impl Kind {
    pub const ALL: [Kind; 9] = [
        Kind::Uniformity,
        Kind::Expansion,
        Kind::DeflatedNorm,
        Kind::TaxonomyCensus,
        Kind::EllFuzz,
        Kind::EstimatorIdentities,
        Kind::ZEquivalence,
        Kind::Cover,
        Kind::Delocalization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Uniformity => "uniformity",
            Kind::Expansion => "expansion",
            Kind::DeflatedNorm => "deflated-norm",
            Kind::TaxonomyCensus => "taxonomy-census",
            Kind::EllFuzz => "ell-fuzz",
            Kind::EstimatorIdentities => "estimator-identities",
            Kind::ZEquivalence => "z-equivalence",
            Kind::Cover => "cover",
            Kind::Delocalization => "delocalization",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Kind-specific numeric keys with their defaults. A default of `NaN`
    /// means "derived at run time" and is documented per key.
    fn extra_keys(self) -> &'static [(&'static str, f64)] {
        match self {
            Kind::Uniformity => &[("mcmc_steps", 2000.0), ("budget", 1e6)],
            Kind::Expansion => &[("eps", 0.3), ("k_max", 2.0), ("samples", 10000.0), ("splits", 20.0), ("budget", 1e4)],
            Kind::DeflatedNorm => &[("c", 3.0), ("tol", 1e-6), ("max_iter", 2000.0), ("confidence_gap", 1e-6), ("probes", 1.0), ("probe_tol", 1e-8), ("probe_iter", 100.0), ("budget", 1e4)],
            Kind::TaxonomyCensus => &[("t", 12.0), ("budget", 1e4)],
            Kind::EllFuzz => &[("k", f64::NAN)],
            Kind::EstimatorIdentities => &[("k", f64::NAN), ("c_row", 0.05), ("c_two_sided", 0.05), ("random_subsets", 256.0), ("budget", 1e4)],
            Kind::ZEquivalence => &[],
            Kind::Cover => &[("v", 8.0), ("max_tries", 200.0)],
            Kind::Delocalization => &[("rho_exp", 0.3), ("delta", f64::NAN), ("tol", 1e-8), ("eps", 0.3), ("budget", 1e4), ("dense_budget", DENSE_BUDGET as f64)],
        }
    }
}

/// Rows removed from `[n]` when building `K`.
#[derive(Clone, Debug, PartialEq)]
pub enum KSpec {
    All,
    /// 1-based rows, as written in the config.
    Drop(Vec<usize>),
    /// This many rows drawn per trial.
    Random(usize),
}

impl KSpec {
    fn parse(s: &str) -> Result<KSpec> {
        let s = s.trim();
        if s == "all" {
            return Ok(KSpec::All);
        }
        if let Some(rest) = s.strip_prefix("drop:") {
            let rows = rest.split(',').map(|t| t.trim().parse::<usize>().map_err(|_| cfg_err(format!("bad row `{t}` in k_spec")))).collect::<Result<Vec<_>>>()?;
            if rows.contains(&0) {
                return Err(cfg_err("k_spec rows are 1-based"));
            }
            return Ok(KSpec::Drop(rows));
        }
        if let Some(rest) = s.strip_prefix("random:") {
            return rest.trim().parse().map(KSpec::Random).map_err(|_| cfg_err("bad count in k_spec"));
        }
        Err(cfg_err(format!("k_spec must be `all`, `drop:i,j,..` or `random:m`, got `{s}`")))
    }

    fn removed(&self) -> usize {
        match self {
            KSpec::All => 0,
            KSpec::Drop(v) => v.len(),
            KSpec::Random(m) => *m,
        }
    }

    pub fn mask<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> RowMask {
        match self {
            KSpec::All => RowMask::full(n),
            KSpec::Drop(rows) => RowMask::without(n, &rows.iter().map(|r| r - 1).collect::<Vec<_>>()).expect("validated"),
            KSpec::Random(m) => RowMask::without(n, &sample(rng, n, *m).into_vec()).expect("in range"),
        }
    }
}

fn parse_z_grid(s: &str, d: usize) -> Result<Vec<Complex64>> {
    let s = s.trim();
    if s == "default" {
        return Ok(crate::spectral::default_z_grid(d));
    }
    s.split(';')
        .map(|t| {
            let t = t.trim().replace(' ', "");
            t.parse::<Complex64>().map_err(|_| cfg_err(format!("bad complex number `{t}` in z_grid")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub n: usize,
    pub d: usize,
    pub l: usize,
    pub k_spec: KSpec,
    pub z_grid: Vec<Complex64>,
    pub trials: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub taxonomy: TaxonomyConstants,
    pub cover: CoverConstants,
    pub extra: BTreeMap<String, f64>,
    /// The parsed key-value pairs, echoed into the manifest.
    pub raw: BTreeMap<String, String>,
    /// Hash of the config bytes.
    pub sha256: String,
}

const COMMON_KEYS: [&str; 9] = ["kind", "n", "d", "L", "k_spec", "z_grid", "trials", "seed", "out_dir"];

fn parse_num<T: std::str::FromStr>(raw: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match raw.get(key) {
        None => Ok(None),
        Some(v) => v.parse::<T>().map(Some).map_err(|_| cfg_err(format!("`{key}`: cannot parse `{v}`"))),
    }
}

/// Parses a flat config: one `key = value` per line, `#` starts a comment.
/// Relative `out_dir` paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let mut raw = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| cfg_err(format!("line {}: expected `key = value`", no + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(cfg_err(format!("line {}: empty key", no + 1)));
        }
        if raw.insert(k.clone(), v).is_some() {
            return Err(cfg_err(format!("line {}: duplicate key `{k}`", no + 1)));
        }
    }
    let kind_s = raw.get("kind").ok_or_else(|| cfg_err("missing `kind`"))?;
    let kind = Kind::parse(kind_s).ok_or_else(|| cfg_err(format!("unknown kind `{kind_s}`")))?;
    let mut taxonomy = TaxonomyConstants::default();
    let mut cover = CoverConstants::default();
    let mut extra: BTreeMap<String, f64> = kind.extra_keys().iter().map(|(k, v)| (k.to_string(), *v)).collect();
    for (k, v) in &raw {
        if COMMON_KEYS.contains(&k.as_str()) {
            continue;
        }
        let num = || v.parse::<f64>().map_err(|_| cfg_err(format!("`{k}`: cannot parse `{v}`")));
        if let Some(c) = k.strip_prefix("const.") {
            let slot = match c {
                "a3" => &mut taxonomy.a3,
                "p_scale" => &mut taxonomy.p_scale,
                "jump" => &mut taxonomy.jump,
                "steep_exp" => &mut taxonomy.steep_exp,
                "very_steep" => &mut taxonomy.very_steep,
                "shift_ratio" => &mut taxonomy.shift_ratio,
                "theta_scale" => &mut taxonomy.theta_scale,
                "c_k" => &mut cover.c_k,
                "c_p" => &mut cover.c_p,
                "c_k_halving" => &mut cover.c_k_halving,
                _ => return Err(cfg_err(format!("unknown constant `{c}`"))),
            };
            *slot = num()?;
        } else if extra.contains_key(k) {
            extra.insert(k.clone(), num()?);
        } else {
            return Err(cfg_err(format!("key `{k}` is not valid for kind {}", kind.name())));
        }
    }
    let n = parse_num(&raw, "n")?.unwrap_or(if kind == Kind::ZEquivalence { 3 } else { 0 });
    let d = parse_num(&raw, "d")?.unwrap_or(if kind == Kind::ZEquivalence { 1 } else { 0 });
    let out_dir = PathBuf::from(raw.get("out_dir").map(String::as_str).unwrap_or("out"));
    let out_dir = if out_dir.is_absolute() { out_dir } else { base_dir.join(out_dir) };
    let cfg = ExperimentConfig {
        kind,
        n,
        d,
        l: parse_num(&raw, "L")?.unwrap_or(1),
        k_spec: raw.get("k_spec").map(|s| KSpec::parse(s)).transpose()?.unwrap_or(KSpec::All),
        z_grid: parse_z_grid(raw.get("z_grid").map(String::as_str).unwrap_or("default"), d.max(1))?,
        trials: parse_num(&raw, "trials")?.unwrap_or(0),
        seed: parse_num(&raw, "seed")?.unwrap_or(0),
        out_dir,
        taxonomy,
        cover,
        extra,
        raw,
        sha256: Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect(),
    };
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}

/// Values computed from the config before any sampling.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct Derived {
    pub params: Option<TaxonomyParams>,
    pub values: BTreeMap<String, f64>,
}

impl ExperimentConfig {
    pub fn get(&self, key: &str) -> f64 {
        self.extra[key]
    }

    fn get_usize(&self, key: &str) -> usize {
        self.extra[key] as usize
    }

    fn positive_int(&self, key: &str) -> Result<()> {
        let v = self.extra[key];
        if !(v >= 1.0 && v.fract() == 0.0) {
            return Err(cfg_err(format!("`{key}` must be a positive integer, got {v}")));
        }
        Ok(())
    }

    fn needs_params(&self) -> bool {
        matches!(self.kind, Kind::TaxonomyCensus | Kind::Cover | Kind::Delocalization)
    }

    /// Checks every module precondition the run will rely on.
    pub fn validate(&self) -> Result<Derived> {
        let (n, d) = (self.n, self.d);
        if n == 0 || d == 0 || d > n {
            return Err(cfg_err(format!("need 1 <= d <= n, got n={n}, d={d}")));
        }
        if self.k_spec.removed() > n / 4 && matches!(self.kind, Kind::TaxonomyCensus) {
            return Err(cfg_err("k_spec removes more than n/4 rows"));
        }
        if self.k_spec.removed() >= n {
            return Err(cfg_err("k_spec removes every row"));
        }
        if let KSpec::Drop(rows) = &self.k_spec {
            if rows.iter().any(|&r| r > n) {
                return Err(cfg_err("k_spec row out of range"));
            }
        }
        let mut values = BTreeMap::new();
        for key in ["budget", "samples", "splits", "max_iter", "probe_iter", "max_tries", "random_subsets", "mcmc_steps", "dense_budget", "k_max", "v"] {
            if self.extra.contains_key(key) {
                self.positive_int(key)?;
            }
        }
        match self.kind {
            Kind::Uniformity => {
                if n > crate::sampler::ENUMERATE_MAX_N {
                    return Err(cfg_err(format!("uniformity needs n <= {}", crate::sampler::ENUMERATE_MAX_N)));
                }
            }
            Kind::Expansion => {
                let eps = self.get("eps");
                if !(eps > 0.0 && eps < 1.0) {
                    return Err(cfg_err("eps must lie in (0, 1)"));
                }
                if self.get_usize("k_max") > n {
                    return Err(cfg_err("k_max exceeds n"));
                }
            }
            Kind::DeflatedNorm => {
                for key in ["c", "tol", "confidence_gap", "probe_tol"] {
                    if !(self.get(key) > 0.0) {
                        return Err(cfg_err(format!("`{key}` must be positive")));
                    }
                }
            }
            Kind::EllFuzz | Kind::EstimatorIdentities => {
                let k = self.get("k");
                let k = if k.is_nan() { (d as f64).powi(4) } else { k };
                if !(k >= 1.0 && k.fract() == 0.0 && k < 2f64.powi(100)) {
                    return Err(cfg_err(format!("k must be a positive integer below 2^100, got {k}")));
                }
                values.insert("k".into(), k);
                if self.kind == Kind::EstimatorIdentities {
                    for key in ["c_row", "c_two_sided"] {
                        let c = self.get(key);
                        if !(c > 0.0 && c < 1.0) {
                            return Err(cfg_err(format!("`{key}` must lie in (0, 1)")));
                        }
                    }
                }
            }
            Kind::ZEquivalence => {
                if (n, d) != (3, 1) {
                    return Err(cfg_err("z-equivalence runs on the fixed instance n = 3, d = 1"));
                }
            }
            Kind::Cover => {
                if self.get_usize("v") < 5 {
                    return Err(cfg_err("v must be at least 5"));
                }
            }
            Kind::Delocalization => {
                if n > self.get_usize("dense_budget") {
                    return Err(cfg_err(format!("n = {n} exceeds the dense solver budget {}", self.get_usize("dense_budget"))));
                }
                let delta = self.get("delta");
                let delta = if delta.is_nan() { 8.0 * (d as f64).ln().powi(2) / (n as f64).ln() } else { delta };
                if !(delta > 0.0) || !(self.get("rho_exp") > 0.0) || !(self.get("tol") > 0.0) {
                    return Err(cfg_err("delta, rho_exp and tol must be positive"));
                }
                values.insert("delta".into(), delta);
                values.insert("rho".into(), (n as f64).powf(-self.get("rho_exp")));
            }
            Kind::TaxonomyCensus => {
                let t = self.get("t");
                if !(t >= 12.0) {
                    return Err(cfg_err("t must be at least 12"));
                }
            }
        }
        let params = if self.needs_params() {
            let p = derive_params(n, d, self.l, &self.taxonomy, false).map_err(|e| cfg_err(format!("parameter window: {e}")))?;
            if self.kind == Kind::TaxonomyCensus && self.taxonomy.a3 * self.get("t") > 0.01 + 1e-15 {
                return Err(cfg_err("need a3 t <= 1/100"));
            }
            Some(p)
        } else {
            None
        };
        Ok(Derived { params, values })
    }
}

/// Result of a run held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: Map<String, Value>,
    pub hard_failures: Vec<String>,
}

struct Trial {
    rows: Vec<Vec<String>>,
    failures: Vec<String>,
    metrics: BTreeMap<&'static str, f64>,
}

impl Trial {
    fn new() -> Self {
        Trial { rows: Vec::new(), failures: Vec::new(), metrics: BTreeMap::new() }
    }
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

fn fmt_f(v: f64) -> String {
    format!("{v:e}")
}

fn fmt_c(v: Complex64) -> [String; 2] {
    [fmt_f(v.re), fmt_f(v.im)]
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn freq_json(successes: usize, trials: usize) -> Value {
    let (lo, hi) = wilson_interval(successes as u64, trials as u64, 0.95);
    json!({
        "successes": successes,
        "trials": trials,
        "frequency": num(if trials == 0 { f64::NAN } else { successes as f64 / trials as f64 }),
        "ci95": [num(lo), num(hi)],
    })
}

fn par_trials<F>(trials: usize, f: F) -> Result<Vec<Trial>>
where
    F: Fn(u64) -> Result<Trial> + Sync + Send,
{
    (0..trials as u64).into_par_iter().map(f).collect()
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

/// Runs the experiment in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<Report> {
    let derived = cfg.validate()?;
    let mut summary = Map::new();
    summary.insert("schema".into(), json!(SUMMARY_SCHEMA));
    summary.insert("kind".into(), json!(cfg.kind.name()));
    summary.insert("trials".into(), json!(cfg.trials));
    let (head, trials) = match cfg.kind {
        Kind::Uniformity => uniformity(cfg, &mut summary)?,
        Kind::Expansion => expansion(cfg, &mut summary)?,
        Kind::DeflatedNorm => deflated(cfg, &mut summary)?,
        Kind::TaxonomyCensus => taxonomy_census(cfg, derived.params.as_ref().expect("validated"), &mut summary)?,
        Kind::EllFuzz => ell_fuzz(cfg, derived.values["k"] as u128, &mut summary)?,
        Kind::EstimatorIdentities => estimator_identities(cfg, derived.values["k"] as u128, &mut summary)?,
        Kind::ZEquivalence => z_equivalence(cfg, &mut summary)?,
        Kind::Cover => cover(cfg, derived.params.as_ref().expect("validated"), &mut summary)?,
        Kind::Delocalization => delocalization(cfg, &derived, &mut summary)?,
    };
    let mut rows = Vec::new();
    let mut hard_failures = Vec::new();
    for t in trials {
        rows.extend(t.rows);
        hard_failures.extend(t.failures);
    }
    summary.insert("hard_failures".into(), json!(hard_failures.len()));
    summary.insert("first_failures".into(), json!(hard_failures.iter().take(10).collect::<Vec<_>>()));
    Ok(Report { header: head, rows, summary, hard_failures })
}

/// Files written by [`run`] and the process exit status.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub out_dir: PathBuf,
    pub hard_failures: usize,
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(compute)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// Validates, runs, and writes `manifest.json`, `trials.csv` and
/// `summary.json` into the configured output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let derived = cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let manifest = |status: &str| -> Value {
        json!({
            "schema": MANIFEST_SCHEMA,
            "crate": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "kind": cfg.kind.name(),
            "config": cfg.raw,
            "config_sha256": cfg.sha256,
            "derived": serde_json::to_value(&derived).unwrap_or(Value::Null),
            "constants": { "taxonomy": serde_json::to_value(&cfg.taxonomy).unwrap_or(Value::Null), "cover": serde_json::to_value(&cfg.cover).unwrap_or(Value::Null) },
            "rng": "ChaCha8, stream = (trial << 8) | module",
            "outputs": [TRIALS_FILE, SUMMARY_FILE],
            "status": status,
            "timestamp": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })
    };
    write_json(&cfg.out_dir.join(MANIFEST_FILE), &manifest("running"))?;
    let report = execute(cfg)?;
    write_csv(&cfg.out_dir.join(TRIALS_FILE), &report.header, &report.rows)?;
    write_json(&cfg.out_dir.join(SUMMARY_FILE), &Value::Object(report.summary.clone()))?;
    let status = if report.hard_failures.is_empty() { "ok" } else { "hard_failure" };
    write_json(&cfg.out_dir.join(MANIFEST_FILE), &manifest(status))?;
    Ok(RunOutcome {
        exit_code: if report.hard_failures.is_empty() { EXIT_OK } else { EXIT_HARD_FAILURE },
        out_dir: cfg.out_dir.clone(),
        hard_failures: report.hard_failures.len(),
    })
}

fn supports_key(m: &RegularMatrix) -> Vec<usize> {
    (0..m.n()).flat_map(|i| m.row(i).to_vec()).collect()
}

/// Chi-square statistic and upper-tail p-value against the uniform law.
pub fn chi_square_uniform(counts: &[u64]) -> (f64, f64) {
    let total: u64 = counts.iter().sum();
    let k = counts.len();
    if total == 0 || k < 2 {
        return (f64::NAN, f64::NAN);
    }
    let e = total as f64 / k as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new((k - 1) as f64).expect("df >= 1").cdf(stat);
    (stat, p)
}

/// Stream offset separating the switch-chain draws from the rejection draws
/// of the same trial index.
const MCMC_TRIAL_OFFSET: u64 = 1 << 40;

fn uniformity(cfg: &ExperimentConfig, summary: &mut Map<String, Value>) -> Result<(Vec<String>, Vec<Trial>)> {
    let (n, d) = (cfg.n, cfg.d);
    let all = enumerate_all(n, d).map_err(compute)?;
    let index: BTreeMap<Vec<usize>, usize> = all.iter().enumerate().map(|(i, m)| (supports_key(m), i)).collect();
    let budget = cfg.get("budget") as u64;
    let steps = cfg.get("mcmc_steps") as u64;
    let start = RegularMatrix::circulant(n, &(0..d).collect::<Vec<_>>()).map_err(compute)?;
    let draws: Vec<(Option<usize>, Option<usize>)> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(cfg.seed, t, Module::Sampler);
            let a = sample_uniform_with(&mut rng, n, d, budget).map_err(compute)?;
            let mut rng = trial_rng(cfg.seed, MCMC_TRIAL_OFFSET + t, Module::Sampler);
            let mut chain = SwitchChain::new(start.clone());
            chain.run(&mut rng, steps);
            Ok((index.get(&supports_key(&a)).copied(), index.get(&supports_key(chain.state())).copied()))
        })
        .collect::<Result<_>>()?;
    let mut rej = vec![0u64; all.len()];
    let mut mc = vec![0u64; all.len()];
    let mut trial = Trial::new();
    for (t, (a, b)) in draws.iter().enumerate() {
        match a {
            Some(i) => rej[*i] += 1,
            None => trial.failures.push(format!("draw {t}: rejection sample not in the enumeration")),
        }
        match b {
            Some(i) => mc[*i] += 1,
            None => trial.failures.push(format!("draw {t}: chain state not in the enumeration")),
        }
    }
    let expected = cfg.trials as f64 / all.len() as f64;
    for i in 0..all.len() {
        trial.rows.push(vec![i.to_string(), fmt_f(expected), rej[i].to_string(), mc[i].to_string()]);
    }
    let (s1, p1) = chi_square_uniform(&rej);
    let (s2, p2) = chi_square_uniform(&mc);
    summary.insert("classes".into(), json!(all.len()));
    summary.insert("rejection".into(), json!({"chi2": num(s1), "p_value": num(p1)}));
    summary.insert("mcmc".into(), json!({"chi2": num(s2), "p_value": num(p2), "proposals_per_draw": steps}));
    summary.insert("df".into(), json!(all.len().saturating_sub(1)));
    Ok((header(&["matrix", "expected", "rejection_count", "mcmc_count"]), vec![trial]))
}

fn expansion(cfg: &ExperimentConfig, summary: &mut Map<String, Value>) -> Result<(Vec<String>, Vec<Trial>)> {
    let (n, d) = (cfg.n, cfg.d);
    let eps = cfg.get("eps");
    let k_max = cfg.get_usize("k_max");
    let splits = cfg.get_usize("splits");
    let trials = par_trials(cfg.trials, |t| {
        let mut rng = trial_rng(cfg.seed, t, Module::Sampler);
        let (m, method) = sample_matrix(&mut rng, n, d, cfg.get("budget") as u64).map_err(compute)?;
        let mut out = Trial::new();
        let mut row = vec![t.to_string(), format!("{method:?}").to_lowercase()];
        let opts = OmegaOptions { k_exhaustive: k_max.max(2), samples: cfg.get("samples") as u64, seed: crate::rng::stream_id(t, Module::Stats) ^ cfg.seed };
        for k in 1..=k_max {
            let r = check_omega(&m, k, eps, &opts).map_err(compute)?;
            out.metrics.insert(["omega_k1", "omega_k2", "omega_k3", "omega_k4", "omega_k5"].get(k - 1).copied().unwrap_or("omega_k_more"), r.holds as u8 as f64);
            row.push((r.holds as u8).to_string());
        }
        let mut srng = trial_rng(cfg.seed, t, Module::Stats);
        let (mut expanding, mut bad) = (0usize, 0usize);
        let max_size = (n / (4 * d)).max(2).min(n);
        for s in 0..splits {
            let size = srng.random_range(2..=max_size);
            let j = sample(&mut srng, n, size).into_vec();
            let cut = srng.random_range(1..size);
            let lr = left_right_split(&m, &j[..cut], &j[cut..], eps).map_err(compute)?;
            if lr.expansion_holds {
                expanding += 1;
            }
            if lr.bounds_hold == Some(false) {
                bad += 1;
                out.failures.push(format!("trial {t} split {s}: left/right bounds fail under expansion"));
            }
        }
        row.extend([splits.to_string(), expanding.to_string(), bad.to_string()]);
        out.rows.push(row);
        Ok(out)
    })?;
    for k in 1..=k_max {
        let key = ["omega_k1", "omega_k2", "omega_k3", "omega_k4", "omega_k5"].get(k - 1).copied().unwrap_or("omega_k_more");
        let s = trials.iter().filter(|t| t.metrics.get(key) == Some(&1.0)).count();
        summary.insert(format!("omega_k{k}"), freq_json(s, cfg.trials));
    }
    summary.insert("eps".into(), num(eps));
    let mut head = vec!["trial".to_string(), "method".into()];
    head.extend((1..=k_max).map(|k| format!("omega_k{k}")));
    head.extend(["splits".into(), "splits_expanding".into(), "split_bound_failures".into()]);
    Ok((head, trials))
}

fn deflated(cfg: &ExperimentConfig, summary: &mut Map<String, Value>) -> Result<(Vec<String>, Vec<Trial>)> {
    let (n, d) = (cfg.n, cfg.d);
    let c = cfg.get("c");
    let bound = c * (d as f64).sqrt();
    let probes = cfg.get("probes") != 0.0;
    let trials = par_trials(cfg.trials, |t| {
        let mut rng = trial_rng(cfg.seed, t, Module::Sampler);
        let (m, method) = sample_matrix(&mut rng, n, d, cfg.get("budget") as u64).map_err(compute)?;
        let opts = NormOptions { tol: cfg.get("tol"), max_iter: cfg.get_usize("max_iter"), seed: cfg.seed ^ crate::rng::stream_id(t, Module::Stats), confidence_gap: cfg.get("confidence_gap") };
        let r = deflated_norm(&m, &opts);
        let mut out = Trial::new();
        if !(r.lower <= r.estimate * (1.0 + 1e-12) && r.estimate <= r.upper * (1.0 + 1e-12) && r.upper <= d as f64 * (1.0 + 1e-12)) {
            out.failures.push(format!("trial {t}: norm bracket inconsistent ({}, {}, {})", r.lower, r.estimate, r.upper));
        }
        out.metrics.insert("within", (r.estimate <= bound) as u8 as f64);
        out.metrics.insert("estimate", r.estimate);
        let mut row = vec![t.to_string(), format!("{method:?}").to_lowercase(), fmt_f(r.estimate), fmt_f(r.lower), fmt_f(r.upper), r.iterations.to_string(), (r.converged as u8).to_string(), ((r.estimate <= bound) as u8).to_string()];
        if probes {
            let mut krng = trial_rng(cfg.seed, t, Module::Spectral);
            let k = cfg.k_spec.mask(n, &mut krng);
            for (zi, z) in cfg.z_grid.iter().enumerate() {
                let p = smallest_sv_probe(&m, *z, &k, cfg.get("probe_tol"), cfg.get_usize("probe_iter"), cfg.seed ^ crate::rng::stream_id(t, Module::Spectral) ^ zi as u64).map_err(compute)?;
                if p.sigma_min > d as f64 + z.norm() + 1e-9 {
                    out.failures.push(format!("trial {t}: probe at z = {z} exceeds the trivial norm bound"));
                }
                row.push(fmt_f(p.sigma_min));
            }
        }
        out.rows.push(row);
        Ok(out)
    })?;
    let within = trials.iter().filter(|t| t.metrics["within"] == 1.0).count();
    summary.insert("bound".into(), num(bound));
    summary.insert("within_bound".into(), freq_json(within, cfg.trials));
    summary.insert("median_estimate".into(), num(median(trials.iter().map(|t| t.metrics["estimate"]).collect())));
    summary.insert("z_grid".into(), json!(cfg.z_grid.iter().map(|z| [num(z.re), num(z.im)]).collect::<Vec<_>>()));
    let mut head = header(&["trial", "method", "estimate", "lower", "upper", "iterations", "converged", "within_bound"]);
    if probes {
        head.extend((0..cfg.z_grid.len()).map(|i| format!("sigma_min_z{i}")));
    }
    Ok((head, trials))
}

/// Almost-constant vector around a random center with up to `n3 - 1`
/// arbitrary coordinates of modulus at most `10 |center|`.
pub fn constructed_almost_constant<R: Rng + ?Sized>(rng: &mut R, params: &TaxonomyParams, theta: f64) -> Vec<Complex64> {
    let n = params.n;
    let scale: f64 = 10f64.powf(rng.random_range(-3.0..3.0));
    let center = Complex64::from_polar(scale, rng.random_range(0.0..std::f64::consts::TAU));
    let r = theta * scale / 4.0;
    let mut x: Vec<Complex64> = (0..n).map(|_| center + Complex64::from_polar(r * rng.random::<f64>().sqrt(), rng.random_range(0.0..std::f64::consts::TAU))).collect();
    let outliers = rng.random_range(0..params.n3.max(1));
    for i in sample(rng, n, outliers.min(n)) {
        x[i] = Complex64::from_polar(scale * rng.random_range(0.0..10.0), rng.random_range(0.0..std::f64::consts::TAU));
    }
    x
}

/// Almost-constant vector outside the normalized set: `n0` coordinates
/// raised to `A > t`, the rest near `1`. Almost constant only when
/// `n0 < n3`.
pub fn constructed_outside_s<R: Rng + ?Sized>(rng: &mut R, params: &TaxonomyParams, t: f64) -> Vec<Complex64> {
    let n = params.n;
    let a = t * rng.random_range(1.5..1e4);
    let r = params.theta0 / 8.0;
    let mut x: Vec<Complex64> = (0..n).map(|_| Complex64::new(1.0, 0.0) + Complex64::from_polar(r * rng.random::<f64>(), rng.random_range(0.0..std::f64::consts::TAU))).collect();
    for i in sample(rng, n, params.n0.min(n)) {
        x[i] = Complex64::new(a, 0.0);
    }
    x
}

fn steep_name(s: SteepClass) -> String {
    match s {
        SteepClass::T3 => "T3".into(),
        SteepClass::T0(i) => format!("T0_{i}"),
        SteepClass::T1 => "T1".into(),
        SteepClass::T2 => "T2".into(),
        SteepClass::None => "none".into(),
    }
}

fn taxonomy_census(cfg: &ExperimentConfig, params: &TaxonomyParams, summary: &mut Map<String, Value>) -> Result<(Vec<String>, Vec<Trial>)> {
    let n = cfg.n;
    let t_s = cfg.get("t");
    let theta = params.theta0.min(1.0 / 20.0);
    let m = sample_matrix(&mut trial_rng(cfg.seed, u64::MAX >> 8, Module::Sampler), n, cfg.d, cfg.get("budget") as u64).map_err(compute)?.0;
    let zs: Vec<Complex64> = cfg.z_grid.iter().copied().filter(|z| z.norm() <= cfg.d as f64 / 5.0).collect();
    let trials = par_trials(cfg.trials, |t| {
        let mut rng = trial_rng(cfg.seed, t, Module::Vectors);
        let family = t % 4;
        let x = match family {
            0 => fuzz_vector(&mut rng, n),
            1 => synthetic_candidate(n, &mut rng),
            2 => constructed_almost_constant(&mut rng, params, theta),
            _ => constructed_outside_s(&mut rng, params, t_s),
        };
        let mut out = Trial::new();
        if x.iter().all(|c| c.norm() == 0.0) {
            out.rows.push(vec![t.to_string(), family.to_string(), "zero".into(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new()]);
            return Ok(out);
        }
        let xs = XStar::for_params(&x, params);
        let v = classify_with(&x, &xs, params).map_err(compute)?;
        let decay = if v.steep_class == SteepClass::None && !v.degenerate {
            let viol = decay_check(&xs, params);
            if !viol.is_empty() && params.decay_window_holds() {
                out.failures.push(format!("trial {t}: decay fails outside the steep classes at m = {}", viol[0].m));
            }
            viol.len().to_string()
        } else {
            String::new()
        };
        let norm = match norm_bound_check(&x, &xs, params) {
            Some(b) => {
                if !b.holds && params.norm_window_holds() {
                    out.failures.push(format!("trial {t}: norm bound fails ({} > {})", b.norm, b.bound));
                }
                (b.holds as u8).to_string()
            }
            None => String::new(),
        };
        let xn3 = xs.get(params.n3);
        let mut lower = String::new();
        if xn3 > 0.0 && in_s(&xs, params, t_s) && almost_constant_witness(&x, theta, xn3, params.n3).map_err(compute)?.witness().is_some() && !zs.is_empty() {
            let mut krng = trial_rng(cfg.seed, t, Module::Spectral);
            let k = cfg.k_spec.mask(n, &mut krng);
            let z = zs[t as usize % zs.len()];
            let lb = ac_lower_bound(&m, z, &k, &x, xn3).map_err(compute)?;
            if !lb.holds {
                out.failures.push(format!("trial {t}: almost-constant lower bound fails at z = {z}"));
            }
            lower = (lb.holds as u8).to_string();
        }
        let mut split = String::new();
        let ac = xn3 > 0.0 && almost_constant_witness(&x, params.theta0, xn3, params.n3).map_err(compute)?.witness().is_some();
        if family == 3 && !ac {
            split = "not_almost_constant".into();
        } else if family == 3 {
            match split_shifted(&x, params.theta0, t_s, params) {
                Ok(Some(sp)) => {
                    out.metrics.insert("split_n1_fail", (!sp.n1_bound_holds) as u8 as f64);
                    split = "1".into();
                }
                Ok(None) => split = "in_s".into(),
                Err(e) => {
                    out.failures.push(format!("trial {t}: split failed: {e}"));
                    split = "0".into();
                }
            }
        }
        out.metrics.insert("gradual", v.gradual as u8 as f64);
        out.rows.push(vec![t.to_string(), family.to_string(), steep_name(v.steep_class), (v.almost_constant as u8).to_string(), (v.ac_undecided as u8).to_string(), (v.gradual as u8).to_string(), decay, norm, lower, split]);
        Ok(out)
    })?;
    let gradual = trials.iter().filter(|t| t.metrics.get("gradual") == Some(&1.0)).count();
    summary.insert("gradual".into(), freq_json(gradual, cfg.trials));
    summary.insert("split_n1_bound_failures".into(), json!(trials.iter().filter(|t| t.metrics.get("split_n1_fail") == Some(&1.0)).count()));
    summary.insert("theta".into(), num(theta));
    summary.insert("t".into(), num(t_s));
    summary.insert("decay_window_holds".into(), json!(params.decay_window_holds()));
    summary.insert("norm_window_holds".into(), json!(params.norm_window_holds()));
    Ok((header(&["trial", "family", "steep_class", "almost_constant", "ac_undecided", "gradual", "decay_violations", "norm_bound_ok", "lower_bound_ok", "split_ok"]), trials))
}

fn fuzz_input<R: Rng + ?Sized>(rng: &mut R, n: usize, t: u64) -> Vec<Complex64> {
    if t % 2 == 0 {
        fuzz_vector(rng, n)
    } else {
        synthetic_candidate(n, rng)
    }
}

fn ell_fuzz(cfg: &ExperimentConfig, k: u128, summary: &mut Map<String, Value>) -> Result<(Vec<String>, Vec<Trial>)> {
    let (n, d) = (cfg.n, cfg.d);
    let trials = par_trials(cfg.trials, |t| {
        let mut rng = trial_rng(cfg.seed, t, Module::Vectors);
        let x = fuzz_input(&mut rng, n, t);
        let y = KVector::approx(&x, k).map_err(compute)?;
        let dec = decompose(&y, d).map_err(compute)?;
        let bad = verify_structure(&dec, &y);
        let mut out = Trial::new();
        for b in bad.iter().take(3) {
            out.failures.push(format!("trial {t}: {b}"));
        }
        let spread_parts = dec.parts().iter().filter(|p| p.kind == PartKind::Spread).count();
        out.rows.push(vec![
            t.to_string(),
            dec.num_parts().to_string(),
            spread_parts.to_string(),
            dec.spread_cardinality().to_string(),
            dec.max_order().map(|o| o.to_string()).unwrap_or_default(),
            bad.len().to_string(),
        ]);
        Ok(out)
    })?;
    summary.insert("k".into(), json!(k.to_string()));
    Ok((header(&["trial", "parts", "spread_parts", "spread_cardinality", "max_order", "violations"]), trials))
}

fn estimator_identities(cfg: &ExperimentConfig, k: u128, summary: &mut Map<String, Value>) -> Result<(Vec<String>, Vec<Trial>)> {
    let (n, d) = (cfg.n, cfg.d);
    let (c_row, c_two) = (cfg.get("c_row"), cfg.get("c_two_sided"));
    let trials = par_trials(cfg.trials, |t| {
        let mut rng = trial_rng(cfg.seed, t, Module::Sampler);
        let (m, _) = sample_matrix(&mut rng, n, d, cfg.get("budget") as u64).map_err(compute)?;
        let mut vrng = trial_rng(cfg.seed, t, Module::Vectors);
        let x = fuzz_input(&mut vrng, n, t);
        let y = KVector::approx(&x, k).map_err(compute)?;
        let dec = decompose(&y, d).map_err(compute)?;
        let q = project_q(&m, &dec);
        let mut out = Trial::new();
        if let Err(e) = q.check_admissible(&dec) {
            out.failures.push(format!("trial {t}: projected Q not admissible: {e}"));
        }
        let b = compute_bundle(&dec, &q).map_err(compute)?;
        let pw = b.pointwise_weight_violations(&q, 1e-12).len();
        if pw > 0 {
            out.failures.push(format!("trial {t}: {pw} entries with w_iq < w~_q / d"));
        }
        let order = wtilde_order(&b);
        let opts = StandardOptions { random_subsets: cfg.get_usize("random_subsets"), seed: cfg.seed ^ crate::rng::stream_id(t, Module::Standard), ..Default::default() };
        let std = is_standard(&q, c_row, c_two, Some(&order), &opts);
        let c = c_row.min(c_two);
        let balance = b.wset_balance() as f64;
        let eta_ok = !std.holds || b.eta >= c * c * balance * (1.0 - 1e-12);
        if !eta_ok {
            out.failures.push(format!("trial {t}: eta {} below c^2 * balance {}", b.eta, c * c * balance));
        }
        let cst = b.measured_sb_te_constant();
        out.metrics.insert("standard", std.holds as u8 as f64);
        out.metrics.insert("c_sb_te", cst);
        out.rows.push(vec![
            t.to_string(),
            dec.num_parts().to_string(),
            (std.holds as u8).to_string(),
            (std.exhaustive as u8).to_string(),
            fmt_f(b.eta),
            fmt_f(balance),
            (eta_ok as u8).to_string(),
            fmt_f(cst),
            fmt_f(b.measured_majorization_constant(&dec)),
            pw.to_string(),
        ]);
        Ok(out)
    })?;
    let std = trials.iter().filter(|t| t.metrics["standard"] == 1.0).count();
    summary.insert("standard".into(), freq_json(std, cfg.trials));
    summary.insert("max_c_sb_te".into(), num(trials.iter().map(|t| t.metrics["c_sb_te"]).fold(f64::NAN, f64::max)));
    summary.insert("c_row".into(), num(c_row));
    summary.insert("c_two_sided".into(), num(c_two));
    Ok((header(&["trial", "parts", "standard", "exhaustive", "eta", "wset_balance", "eta_bound_ok", "c_sb_te", "c_majorization", "pointwise_violations"]), trials))
}

/// The fixed instance: `n = 3`, `d = 1`, `y = (0, 0, 3)` at `k = 1` (one
/// spread part with two levels and one regular part), `M` the cyclic shift.
pub fn z_instance() -> (RegularMatrix, crate::ell::EllDecomposition, KVector) {
    let y = KVector::new(1, vec![(0, 0), (0, 0), (3, 0)]).expect("valid");
    let dec = decompose(&y, 1).expect("decomposes");
    let m = RegularMatrix::circulant(3, &[1]).expect("regular");
    (m, dec, y)
}

/// Total-variation distance between two empirical laws.
pub fn tv_distance<K: Ord + Clone>(a: &BTreeMap<K, u64>, b: &BTreeMap<K, u64>) -> f64 {
    let (na, nb) = (a.values().sum::<u64>() as f64, b.values().sum::<u64>() as f64);
    if na == 0.0 || nb == 0.0 {
        return f64::NAN;
    }
    let mut keys: Vec<&K> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys.iter().map(|k| (a.get(*k).copied().unwrap_or(0) as f64 / na - b.get(*k).copied().unwrap_or(0) as f64 / nb).abs()).sum::<f64>()
}

/// Empirical laws of `A^K y` (multigraph draws, simple only) and of `Z`
/// (exact-count draws only), each over `draws` attempts.
pub fn z_equivalence_laws(seed: u64, draws: usize, k: &RowMask) -> Result<(BTreeMap<Vec<Lat>, u64>, BTreeMap<Vec<Lat>, u64>)> {
    let (m, dec, y) = z_instance();
    let q = project_q(&m, &dec);
    z_equivalence_laws_for(seed, draws, &dec, &q, &y, k, true)
}

/// As [`z_equivalence_laws`] for an arbitrary admissible `(y, Q)`. With
/// `simple_only = false` every multigraph draw counts.
pub fn z_equivalence_laws_for(
    seed: u64,
    draws: usize,
    dec: &crate::ell::EllDecomposition,
    q: &QMatrix,
    y: &KVector,
    k: &RowMask,
    simple_only: bool,
) -> Result<(BTreeMap<Vec<Lat>, u64>, BTreeMap<Vec<Lat>, u64>)> {
    let pairs: Vec<(Option<Vec<Lat>>, Option<Vec<Lat>>)> = (0..draws as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t, Module::Multigraph);
            let g = sample_multigraph_with(&mut rng, dec, q).map_err(compute)?;
            let a = (!simple_only || g.is_simple()).then(|| g.apply_lattice(y.coords(), k));
            let mut rng = trial_rng(seed, t, Module::Surrogate);
            let z = sample_z_with(&mut rng, dec, q, k).map_err(compute)?;
            let b = z.exact_count_flag.then_some(z.z_lattice);
            Ok((a, b))
        })
        .collect::<Result<_>>()?;
    let (mut la, mut lb) = (BTreeMap::new(), BTreeMap::new());
    for (a, b) in pairs {
        if let Some(a) = a {
            *la.entry(a).or_insert(0) += 1;
        }
        if let Some(b) = b {
            *lb.entry(b).or_insert(0) += 1;
        }
    }
    Ok((la, lb))
}

fn z_equivalence(cfg: &ExperimentConfig, summary: &mut Map<String, Value>) -> Result<(Vec<String>, Vec<Trial>)> {
    let mut krng = trial_rng(cfg.seed, 0, Module::Spectral);
    let k = cfg.k_spec.mask(3, &mut krng);
    let (la, lb) = z_equivalence_laws(cfg.seed, cfg.trials, &k)?;
    let (na, nb) = (la.values().sum::<u64>(), lb.values().sum::<u64>());
    let mut keys: Vec<&Vec<Lat>> = la.keys().chain(lb.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut trial = Trial::new();
    for key in keys {
        let label = key.iter().map(|(a, b)| format!("{a}{b:+}i")).collect::<Vec<_>>().join(" ");
        let pa = la.get(key).copied().unwrap_or(0);
        let pb = lb.get(key).copied().unwrap_or(0);
        trial.rows.push(vec![label, pa.to_string(), pb.to_string()]);
    }
    summary.insert("simple_draws".into(), json!(na));
    summary.insert("exact_count_draws".into(), json!(nb));
    summary.insert("tv".into(), num(tv_distance(&la, &lb)));
    Ok((header(&["value", "multigraph_count", "z_count"]), vec![trial]))
}

fn cover(cfg: &ExperimentConfig, params: &TaxonomyParams, summary: &mut Map<String, Value>) -> Result<(Vec<String>, Vec<Trial>)> {
    let v = cfg.get_usize("v") as u32;
    let tries = cfg.get_usize("max_tries");
    let trials = par_trials(cfg.trials, |t| {
        let mut rng = trial_rng(cfg.seed, t, Module::Cover);
        let mut out = Trial::new();
        let Some((x, used)) = synthetic_gradual(params, &mut rng, tries) else {
            out.failures.push(format!("trial {t}: no gradual vector within {tries} candidates"));
            out.rows.push(vec![t.to_string(), tries.to_string(), "none".into(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), "0".into()]);
            return Ok(out);
        };
        match cover_analysis_prechecked(&x, v, &cfg.cover, params) {
            Ok(a) => {
                if a.separation.is_none() {
                    out.failures.push(format!("trial {t}: no separation at k = d^4"));
                }
                if !a.dichotomy.holds() {
                    out.failures.push(format!("trial {t}: height dichotomy fails"));
                }
                let (branch, u) = match a.witness.branch {
                    CoverBranch::Ku { u } => ("ku", u.to_string()),
                    CoverBranch::Pv => ("pv", String::new()),
                };
                out.metrics.insert(if branch == "ku" { "ku" } else { "pv" }, 1.0);
                out.rows.push(vec![
                    t.to_string(),
                    used.to_string(),
                    branch.into(),
                    u,
                    a.witness.certificate.total.to_string(),
                    fmt_f(a.witness.certificate.threshold),
                    a.separation.as_ref().map(|s| format!("{:?}", s.direction)).unwrap_or_default(),
                    a.dichotomy.tall_orders_cardinality.to_string(),
                    a.dichotomy.spread_cardinality.to_string(),
                    (a.all_hold() as u8).to_string(),
                ]);
            }
            Err(e) => {
                out.failures.push(format!("trial {t}: {e}"));
                out.rows.push(vec![t.to_string(), used.to_string(), "failure".into(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), "0".into()]);
            }
        }
        Ok(out)
    })?;
    let ku = trials.iter().filter(|t| t.metrics.contains_key("ku")).count();
    let pv = trials.iter().filter(|t| t.metrics.contains_key("pv")).count();
    summary.insert("branch_ku".into(), json!(ku));
    summary.insert("branch_pv".into(), json!(pv));
    summary.insert("v".into(), json!(v));
    Ok((header(&["trial", "candidates", "branch", "u", "certificate_total", "certificate_threshold", "separation_direction", "tall_orders_cardinality", "spread_cardinality", "lemmas_hold"]), trials))
}

fn delocalization(cfg: &ExperimentConfig, derived: &Derived, summary: &mut Map<String, Value>) -> Result<(Vec<String>, Vec<Trial>)> {
    let params = derived.params.as_ref().expect("validated");
    let (n, d) = (cfg.n, cfg.d);
    let (rho, delta) = (derived.values["rho"], derived.values["delta"]);
    let opts = CensusOptions { tol: cfg.get("tol"), budget: cfg.get_usize("dense_budget"), ..Default::default() };
    let trials = par_trials(cfg.trials, |t| {
        let mut rng = trial_rng(cfg.seed, t, Module::Sampler);
        let (m, method) = sample_matrix(&mut rng, n, d, cfg.get("budget") as u64).map_err(compute)?;
        let omega = (1..=2.min(n)).all(|k| check_omega(&m, k, cfg.get("eps"), &OmegaOptions::default()).map(|r| r.holds).unwrap_or(false));
        let r = delocalization_census(&m, rho, delta, params, &opts).map_err(compute)?;
        let mut out = Trial::new();
        if r.flagged_pairs > 0 {
            out.failures.push(format!("trial {t}: {} eigenpairs fail the residual check", r.flagged_pairs));
        }
        for v in &r.vectors {
            let [lr, li] = fmt_c(v.lambda);
            out.rows.push(vec![
                t.to_string(),
                format!("{method:?}").to_lowercase(),
                (omega as u8).to_string(),
                v.index.to_string(),
                lr,
                li,
                fmt_f(v.residual),
                v.multiplicity.to_string(),
                v.ball_lower.to_string(),
                v.ball_upper.to_string(),
                fmt_f(v.ball_mass),
                (v.ball_ok as u8).to_string(),
                match v.branch {
                    Branch::Gradual => "gradual",
                    Branch::VerySteep => "very_steep",
                    Branch::Neither => "neither",
                }
                .into(),
            ]);
        }
        let masses: Vec<f64> = r.vectors.iter().map(|v| v.ball_upper as f64 / n as f64).collect();
        out.metrics.insert("median_mass", median(masses));
        out.metrics.insert("neither", r.vectors.iter().filter(|v| v.branch == Branch::Neither).count() as f64);
        out.metrics.insert("violation_frac", r.frac_ball_violations);
        out.metrics.insert("omega", omega as u8 as f64);
        Ok(out)
    })?;
    let ok_matrices = trials.iter().filter(|t| t.metrics["violation_frac"] <= 1.0 / n as f64).count();
    summary.insert("rho".into(), num(rho));
    summary.insert("delta".into(), num(delta));
    summary.insert("median_ball_mass".into(), num(median(trials.iter().map(|t| t.metrics["median_mass"]).collect())));
    summary.insert("neither_total".into(), num(trials.iter().map(|t| t.metrics["neither"]).sum()));
    summary.insert("neither_on_expanding".into(), num(trials.iter().filter(|t| t.metrics["omega"] == 1.0).map(|t| t.metrics["neither"]).sum()));
    summary.insert("matrices_within_violation_rate".into(), freq_json(ok_matrices, cfg.trials));
    Ok((
        header(&["trial", "method", "omega_ok", "eigen_index", "lambda_re", "lambda_im", "residual", "multiplicity", "ball_lower", "ball_upper", "ball_mass", "ball_ok", "branch"]),
        trials,
    ))
}

/// Sets the rayon worker count from `REGKERNEL_WORKERS` when present.
pub fn init_workers() -> std::result::Result<Option<usize>, String> {
    match std::env::var("REGKERNEL_WORKERS") {
        Ok(v) => {
            let w: usize = v.trim().parse().map_err(|_| format!("REGKERNEL_WORKERS must be a positive integer, got `{v}`"))?;
            if w == 0 {
                return Err("REGKERNEL_WORKERS must be at least 1".into());
            }
            rayon::ThreadPoolBuilder::new().num_threads(w).build_global().map_err(|e| e.to_string())?;
            Ok(Some(w))
        }
        Err(_) => Ok(None),
    }
}
