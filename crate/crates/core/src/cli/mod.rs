//! The `crt` command-line tool.
//!
//! Settings are resolved as flags over an optional JSON config file over
//! defaults. A config file is either a bare settings object or a manifest
//! written by an earlier run, in which case its `config` member is used.

mod manifest;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bridge::{BridgeClient, DEFAULT_TIMEOUT};
use crate::crt::{test_features, CrtConfig, FeatureTests};
use crate::data::{Dataset, FeatureKind};
use crate::dgp::{generate, DgpName, ALL, TABLE1};
use crate::error::{Error, Result};
use crate::eval::{run_experiment, table_report, write_bench_outputs, ExperimentConfig};
use crate::io::{read_dataset_csv, read_truth, truth_path, write_dataset_csv, write_truth, Truth};
use crate::models::{
    builtin_model_fitter, ExternalFitter, KnnSamplerFitter, ModelChoice, ModelFitter, OracleFitter,
    SamplerChoice, SamplerFitter,
};
use crate::seed::derive_seed;

pub use manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_WARNINGS: i32 = 2;
pub const EXIT_BRIDGE: i32 = 3;

/// Environment variable consulted when `--bridge-cmd` is absent.
pub const BRIDGE_CMD_ENV: &str = "CRT_BRIDGE_CMD";

#[derive(Debug, Parser)]
#[command(name = "crt", version, about = "Conditional randomization tests for feature relevance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its ground-truth sidecar.
    Generate(GenerateArgs),
    /// Test features of a dataset CSV.
    Test(TestArgs),
    /// Run a benchmark suite and write the table and diagnostics.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    dgp: String,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; the truth sidecar goes next to it as `<stem>.truth.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Number of null draws.
    #[arg(long = "B", visible_alias = "draws")]
    draws: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Quantile grid size for grid samplers.
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    split_fraction: Option<f64>,
    /// auto, linear, poly2, knn or external.
    #[arg(long)]
    y_model: Option<ModelChoice>,
    /// oracle, knn or external.
    #[arg(long)]
    sampler: Option<SamplerChoice>,
    /// Worker command for external models; falls back to $CRT_BRIDGE_CMD.
    #[arg(long)]
    bridge_cmd: Option<String>,
    #[arg(long)]
    bridge_timeout: Option<f64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// JSON settings or a previous run's manifest.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// A 0-based feature index or `all`.
    #[arg(long)]
    feature: Option<String>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
    /// Target kind without a truth sidecar: `continuous` or `categorical:L`.
    #[arg(long)]
    target_kind: Option<String>,
    /// Write results here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the null statistics as CSV (feature,draw,t_null).
    #[arg(long)]
    emit_null: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Table1,
    All,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    suite: Option<Suite>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long, default_value = "bench_out")]
    out_dir: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

/// Resolved settings of `crt test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSettings {
    pub crt: CrtConfig,
    /// `None` tests every feature.
    pub features: Option<Vec<usize>>,
    pub model_choice: ModelChoice,
    pub sampler_choice: SamplerChoice,
    pub bridge_command: Option<String>,
    pub bridge_timeout_secs: f64,
    pub format: OutputFormat,
    /// Used only without a truth sidecar.
    pub target_kind: FeatureKind,
    /// Feature kinds; all continuous when unset.
    pub feature_kinds: Option<Vec<FeatureKind>>,
}

impl Default for TestSettings {
    fn default() -> Self {
        TestSettings {
            crt: CrtConfig::default(),
            features: None,
            model_choice: ModelChoice::Auto,
            sampler_choice: SamplerChoice::Knn,
            bridge_command: None,
            bridge_timeout_secs: DEFAULT_TIMEOUT.as_secs_f64(),
            format: OutputFormat::Csv,
            target_kind: FeatureKind::Continuous,
            feature_kinds: None,
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Test(a) => cmd_test(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_bridge() {
                EXIT_BRIDGE
            } else {
                EXIT_USAGE
            }
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(inner) = value.get_mut("config").map(serde_json::Value::take) {
        value = inner;
    }
    serde_json::from_value(value)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Overrides shared by `test` and `bench`.
fn apply_common(
    c: &CommonArgs,
    crt: &mut CrtConfig,
    model: &mut ModelChoice,
    sampler: &mut SamplerChoice,
    bridge: &mut Option<String>,
    timeout: &mut f64,
) {
    if let Some(b) = c.draws {
        crt.num_null_draws = b;
    }
    if let Some(a) = c.alpha {
        crt.alpha = a;
    }
    if let Some(s) = c.seed {
        crt.master_seed = s;
    }
    if let Some(k) = c.grid_size {
        crt.quantile_grid_size = k;
    }
    if let Some(f) = c.split_fraction {
        crt.split_fraction = f;
    }
    if let Some(m) = c.y_model {
        *model = m;
    }
    if let Some(s) = c.sampler {
        *sampler = s;
    }
    if let Some(cmd) = c.bridge_cmd.clone() {
        *bridge = Some(cmd);
    }
    if let Some(t) = c.bridge_timeout {
        *timeout = t;
    }
    let external = *model == ModelChoice::External || *sampler == SamplerChoice::External;
    if bridge.is_none() && external {
        *bridge = std::env::var(BRIDGE_CMD_ENV).ok().filter(|s| !s.trim().is_empty());
    }
}

fn thread_pool(threads: Option<usize>) -> Result<Option<rayon::ThreadPool>> {
    match threads {
        None => Ok(None),
        Some(0) => Err(Error::InvalidConfig("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(Some)
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}"))),
    }
}

fn in_pool<R: Send>(pool: Option<&rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

fn parse_kind(s: &str) -> Result<FeatureKind> {
    match s.split_once(':') {
        None if s == "continuous" => Ok(FeatureKind::Continuous),
        Some(("categorical", l)) => {
            let levels = l
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad level count in `{s}`")))?;
            FeatureKind::categorical(levels)
        }
        _ => Err(Error::InvalidConfig(format!(
            "target kind must be `continuous` or `categorical:L`, got `{s}`"
        ))),
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<i32> {
    let name: DgpName = a.dgp.parse()?;
    let inst = generate(name, a.n, a.seed)?;
    let sidecar = truth_path(&a.out);
    write_dataset_csv(&inst.data, &a.out)?;
    write_truth(&Truth::of(&inst, a.seed), &sidecar)?;
    if let Some(path) = &a.manifest {
        let config = serde_json::json!({ "dgp": name, "n": a.n, "seed": a.seed });
        RunManifest::new("generate", config, a.seed, vec![a.out.clone(), sidecar]).write(path)?;
    }
    Ok(EXIT_OK)
}

fn cmd_test(a: TestArgs) -> Result<i32> {
    let mut s: TestSettings = load_config(a.common.config.as_deref())?;
    apply_common(
        &a.common,
        &mut s.crt,
        &mut s.model_choice,
        &mut s.sampler_choice,
        &mut s.bridge_command,
        &mut s.bridge_timeout_secs,
    );
    if let Some(f) = &a.feature {
        s.features = match f.as_str() {
            "all" => None,
            j => Some(vec![j.parse().map_err(|_| {
                Error::InvalidConfig(format!("--feature must be an index or `all`, got `{j}`"))
            })?]),
        };
    }
    if let Some(f) = a.format {
        s.format = f;
    }
    if let Some(k) = &a.target_kind {
        s.target_kind = parse_kind(k)?;
    }
    s.crt.validate()?;
    if s.sampler_choice == SamplerChoice::Oracle && a.truth.is_none() {
        return Err(Error::InvalidConfig("oracle requires truth sidecar".into()));
    }
    if (s.model_choice == ModelChoice::External || s.sampler_choice == SamplerChoice::External)
        && s.bridge_command.is_none()
    {
        return Err(Error::InvalidConfig(format!(
            "external model or sampler needs --bridge-cmd or ${BRIDGE_CMD_ENV}"
        )));
    }

    let truth = a.truth.as_deref().map(read_truth).transpose()?;
    let target_kind = truth.as_ref().map_or(s.target_kind, |t| t.name.target_kind());
    let data = read_dataset_csv(&a.data, s.feature_kinds.clone(), target_kind)?;
    if let Some(t) = &truth {
        if t.p != data.p() {
            return Err(Error::InvalidData(format!(
                "truth sidecar describes {} features, data has {}",
                t.p,
                data.p()
            )));
        }
    }

    let pool = thread_pool(a.common.threads)?;
    let tests = in_pool(pool.as_ref(), || run_tests(&data, truth.as_ref(), &s))?;

    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    write_results(&mut out, &tests, &s)?;
    out.flush()?;
    drop(out);

    let mut outputs: Vec<PathBuf> = a.out.iter().cloned().collect();
    if let Some(path) = &a.emit_null {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["feature", "draw", "t_null"])?;
        for r in tests.results() {
            for (b, t) in r.t_null.iter().enumerate() {
                w.write_record([r.feature_index.to_string(), b.to_string(), t.to_string()])?;
            }
        }
        w.flush()?;
        outputs.push(path.clone());
    }
    if let Some(path) = &a.manifest {
        RunManifest::new("test", serde_json::to_value(&s)?, s.crt.master_seed, outputs).write(path)?;
    }

    let mut code = EXIT_OK;
    for o in &tests.outcomes {
        if let Err(e) = &o.result {
            eprintln!("warning: feature {} failed: {e}", o.feature_index);
            code = code.max(if e.is_bridge() { EXIT_BRIDGE } else { EXIT_WARNINGS });
        }
    }
    Ok(code)
}

fn run_tests(data: &Dataset, truth: Option<&Truth>, s: &TestSettings) -> Result<FeatureTests> {
    let client = if s.model_choice == ModelChoice::External
        || s.sampler_choice == SamplerChoice::External
    {
        let cmd = s.bridge_command.as_deref().expect("checked by caller");
        let timeout = Duration::from_secs_f64(s.bridge_timeout_secs);
        Some(Arc::new(Mutex::new(BridgeClient::spawn(cmd, timeout)?)))
    } else {
        None
    };
    let external = |tag: u64| {
        ExternalFitter::shared(
            Arc::clone(client.as_ref().expect("bridge client")),
            s.crt.quantile_grid_size,
            derive_seed(s.crt.master_seed, &[tag]),
        )
    };
    let model_fitter: Box<dyn ModelFitter> =
        match s.model_choice.resolve(data.target_kind(), truth.map(|t| t.name)) {
            ModelChoice::External => Box::new(external(2)),
            other => builtin_model_fitter(other)?,
        };
    let sampler_fitter: Box<dyn SamplerFitter> = match s.sampler_choice {
        SamplerChoice::Oracle => {
            let t = truth.ok_or_else(|| Error::InvalidConfig("oracle requires truth sidecar".into()))?;
            Box::new(OracleFitter {
                spec: t.name.spec(t.n),
            })
        }
        SamplerChoice::Knn => Box::new(KnnSamplerFitter {
            grid_size: s.crt.quantile_grid_size,
            k: None,
        }),
        SamplerChoice::External => Box::new(external(3)),
    };
    test_features(data, &s.crt, s.features.as_deref(), model_fitter.as_ref(), sampler_fitter.as_ref())
}

#[derive(Serialize)]
struct ResultRecord {
    j: usize,
    t_obs: f64,
    p_value: f64,
    reject_at_alpha: bool,
}

fn write_results(out: &mut dyn Write, tests: &FeatureTests, s: &TestSettings) -> Result<()> {
    let records: Vec<ResultRecord> = tests
        .results()
        .map(|r| ResultRecord {
            j: r.feature_index,
            t_obs: r.t_obs,
            p_value: r.p_value,
            reject_at_alpha: r.rejects(s.crt.alpha),
        })
        .collect();
    match s.format {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut *out, &records)?;
            writeln!(out)?;
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["j", "t_obs", "p_value", "reject_at_alpha"])?;
            for r in &records {
                w.write_record([
                    r.j.to_string(),
                    r.t_obs.to_string(),
                    r.p_value.to_string(),
                    r.reject_at_alpha.to_string(),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<i32> {
    let mut cfg: ExperimentConfig = load_config(a.common.config.as_deref())?;
    apply_common(
        &a.common,
        &mut cfg.crt,
        &mut cfg.model_choice,
        &mut cfg.sampler_choice,
        &mut cfg.bridge_command,
        &mut cfg.bridge_timeout_secs,
    );
    match a.suite {
        Some(Suite::Table1) => cfg.dgp_names = TABLE1.to_vec(),
        Some(Suite::All) => cfg.dgp_names = ALL.to_vec(),
        None => {}
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(r) = a.repeats {
        cfg.n_repeats = r;
    }
    cfg.validate()?;

    let pool = thread_pool(a.common.threads)?;
    let report = in_pool(pool.as_ref(), || run_experiment(&cfg))?;
    let mut outputs = write_bench_outputs(&report, &a.out_dir)?;
    let manifest_path = a.out_dir.join("manifest.json");
    outputs.push(manifest_path.clone());
    RunManifest::new("bench", serde_json::to_value(&cfg)?, cfg.crt.master_seed, outputs)
        .write(&manifest_path)?;

    print!("{}", table_report(&report));
    for f in &report.failures {
        let feature = f.feature.map_or_else(|| "all".to_string(), |j| j.to_string());
        eprintln!(
            "warning: {} repeat {} feature {feature}: {}",
            f.dataset, f.repeat, f.message
        );
    }
    Ok(if report.has_bridge_failures() {
        EXIT_BRIDGE
    } else if report.has_failures() {
        EXIT_WARNINGS
    } else {
        EXIT_OK
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_parse() {
        assert_eq!(parse_kind("continuous").unwrap(), FeatureKind::Continuous);
        assert_eq!(parse_kind("categorical:3").unwrap(), FeatureKind::Categorical { levels: 3 });
        assert!(parse_kind("categorical:1").is_err());
        assert!(parse_kind("ordinal").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["crt", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["crt", "generate", "--dgp", "nope", "--out", "/dev/null"]), EXIT_USAGE);
        assert_eq!(run(["crt", "--help"]), EXIT_OK);
    }

    #[test]
    fn manifest_config_member_is_unwrapped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, r#"{"config": {"n": 77, "crt": {"num_null_draws": 9}}, "seed": 0}"#).unwrap();
        let cfg: ExperimentConfig = load_config(Some(&path)).unwrap();
        assert_eq!(cfg.n, 77);
        assert_eq!(cfg.crt.num_null_draws, 9);
        assert_eq!(cfg.crt.alpha, 0.05);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"n_repeat": 3}"#).unwrap();
        assert!(matches!(
            load_config::<ExperimentConfig>(Some(&path)),
            Err(Error::InvalidConfig(_))
        ));
    }
}
