//! The `onecast` command surface.
//!
//! A run is described by one TOML file (see [`RunConfig`]); flags override
//! the file, and the output directory resolves as `--out-dir`, then
//! `ONECAST_OUT_DIR`, then the file, then `onecast-out`. Every command
//! finishes its validation before it creates a directory or writes a file.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{
    line_plot_svg, make_windows, read_csv, token_budget, write_csv_file, DatasetSpec, LoadedSeries, SplitFractions,
    SplitWindows, TokenMethod,
};
use crate::decomposition::{decompose_values, normalize_values, residual_component_rate, DEFAULT_EPSILON, DEFAULT_MA_WINDOW};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pipeline::{
    evaluate, read_header, train_stage1, train_stage2, DomainData, DomainInfo, EvalOptions, ModelConfig, OneCast, Stage,
    TrainConfig, TrainReport,
};
use crate::seasonal::{default_bank, evaluate_basis, fit_weights};
use crate::selfcheck::{self, SelfcheckOptions};

pub const OUT_DIR_ENV: &str = "ONECAST_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "onecast-out";

/// Everything a training or evaluation run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Where checkpoints, logs and reports go (default `onecast-out`).
    pub output_dir: PathBuf,
    /// Step between consecutive window starts (default 1).
    pub window_stride: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// One entry per domain, `[[dataset]]` in the file. Relative paths are
    /// resolved against the config file's directory.
    #[serde(rename = "dataset")]
    pub datasets: Vec<DatasetSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from(DEFAULT_OUT_DIR),
            window_stride: 1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            datasets: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for d in &mut cfg.datasets {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config serialization failed: {e}")))
    }

    /// The model configuration with every dataset's declared natural
    /// periods merged into the seasonal bank.
    pub fn effective_model(&self) -> ModelConfig {
        let mut m = self.model.clone();
        for d in &self.datasets {
            for &p in &d.natural_periods {
                if !m.natural_periods.contains(&p) {
                    m.natural_periods.push(p);
                }
            }
        }
        m.natural_periods.sort_by(|a, b| a.total_cmp(b));
        m
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_model().validate()?;
        self.train.validate()?;
        if self.window_stride == 0 {
            return Err(Error::Config("window_stride must be positive".into()));
        }
        if self.datasets.is_empty() {
            return Err(Error::Config("config lists no [[dataset]] entries".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.datasets {
            d.validate()?;
            if !seen.insert(&d.domain_id) {
                return Err(Error::Config(format!("domain id `{}` appears twice", d.domain_id)));
            }
        }
        Ok(())
    }
}

/// Flag, then environment, then config value, then the default.
pub fn resolve_out_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    if let Some(f) = flag {
        return f.to_path_buf();
    }
    if let Some(env) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(env);
    }
    config.map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), Path::to_path_buf)
}

#[derive(Debug, Parser)]
#[command(name = "onecast", version, about = "Cross-domain forecasting with seasonal bases and trend tokens")]
pub struct Cli {
    /// Output directory; beats ONECAST_OUT_DIR and the config file.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a CSV and split it into trend and seasonal parts.
    Decompose(DecomposeArgs),
    /// Check that decompose output sums back to the normalized input.
    Verify(VerifyArgs),
    /// Train the joint stage, the diffusion stage, or both.
    Train(TrainArgs),
    /// Forecast the window after the last rows of a CSV.
    Forecast(ForecastArgs),
    /// Score a checkpoint on the test split.
    Eval(EvalArgs),
    /// Token counts of the four encoding schemes.
    Budget(BudgetArgs),
    /// Numeric self-tests.
    Selfcheck(SelfcheckArgs),
    /// Print a checkpoint's header.
    Inspect(InspectArgs),
    /// Print the default run configuration as TOML.
    DefaultConfig,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Moving-average width.
    #[arg(long, default_value_t = DEFAULT_MA_WINDOW)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Natural periods (steps) of the basis used for the RCR fit.
    #[arg(long, value_delimiter = ',', default_value = "24")]
    pub periods: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Directory holding decompose output; the output directory by default.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub stage: Option<Stage>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub diffusion_epochs: Option<usize>,
    /// Joint-stage checkpoint to continue from (required for `--stage diffusion`).
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// The last `history_len` rows are the history window.
    #[arg(long)]
    pub input: PathBuf,
    /// Needed only when the checkpoint knows several domains.
    #[arg(long)]
    pub domain: Option<String>,
    /// Must equal the checkpoint's horizon when given.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Denoising rounds; 1 generates every token at once.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Forecast CSV; `forecast.csv` in the output directory by default.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// SVG of channel 0: history then forecast.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// JSON-lines record of every denoising round.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run config whose datasets are evaluated.
    #[arg(long, conflicts_with = "input")]
    pub config: Option<PathBuf>,
    /// Single CSV evaluated with the default split.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub domain: Option<String>,
    /// Horizons scored on prefixes of the forecast; the checkpoint horizon by default.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Vec<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Debug: score the truth against itself.
    #[arg(long)]
    pub truth_as_forecast: bool,
    /// Write one SVG per horizon for the first test window.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    /// One scheme; all four when omitted.
    #[arg(long)]
    pub method: Option<TokenMethod>,
    #[arg(long, default_value_t = 96)]
    pub len: u64,
    #[arg(long, default_value_t = 16)]
    pub patch: u64,
    #[arg(long)]
    pub channels: u64,
    /// Text tokens per value.
    #[arg(long, default_value_t = 3)]
    pub k: u64,
    /// Vocabulary size.
    #[arg(long, default_value_t = 437)]
    pub vocab: u64,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    /// Random seeds per gradient case.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn decompose_cmd(args: &DecomposeArgs, out: &Path) -> Result<f64> {
    if args.n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    if !(args.epsilon > 0.0) {
        return Err(Error::Config("--epsilon must be positive".into()));
    }
    let basis = default_bank(&args.periods)?;
    let series = read_csv(&args.input)?;
    let len = series.rows();
    if len < 2 {
        return Err(Error::WindowTooShort { len, min: 2 });
    }
    let dec = decompose_values(&series.values, args.epsilon, args.n)?;
    let fitted = if basis.check_independent(len).is_ok() {
        evaluate_basis(&basis, &fit_weights(&basis, &dec.season, 0)?, 0, len)?
    } else {
        return Err(Error::Dataset(format!(
            "{len} rows are too few to fit {} seasonal frequencies",
            basis.len()
        )));
    };
    let residual = dec.season.zip_map(&fitted, |a, b| a - b)?;
    let rcr = residual_component_rate(&dec.trend, &fitted, &residual)?;

    create_dir(out)?;
    write_csv_file(&out.join("trend.csv"), &series.columns, &dec.trend)?;
    write_csv_file(&out.join("season.csv"), &series.columns, &dec.season)?;
    let stats = Tensor::from_fn(series.channels(), 3, |j, k| match k {
        0 => dec.stats.mu[j],
        1 => dec.stats.sigma[j],
        _ => dec.stats.epsilon,
    });
    write_csv_file(&out.join("stats.csv"), &["mu".into(), "sigma".into(), "epsilon".into()], &stats)?;
    write_text(&out.join("rcr.txt"), &format!("{rcr}\n"))?;
    Ok(rcr)
}

/// Largest gap between `trend + season` and the input normalized with the
/// recorded statistics.
pub fn verify_cmd(args: &VerifyArgs, dir: &Path) -> Result<f64> {
    let input = read_csv(&args.input)?;
    let trend = read_csv(&dir.join("trend.csv"))?.values;
    let season = read_csv(&dir.join("season.csv"))?.values;
    let stats = read_csv(&dir.join("stats.csv"))?.values;
    let c = input.channels();
    if trend.shape() != input.values.shape() || season.shape() != input.values.shape() || stats.shape() != [c, 3] {
        return Err(Error::Dataset("decompose output does not match the input's shape".into()));
    }
    let (norm, recomputed) = normalize_values(&input.values, stats.get(0, 2))?;
    let mut gap: f64 = 0.0;
    for j in 0..c {
        gap = gap.max((recomputed.mu[j] - stats.get(j, 0)).abs());
        gap = gap.max((recomputed.sigma[j] - stats.get(j, 1)).abs());
    }
    let sum = trend.zip_map(&season, |a, b| a + b)?;
    gap = gap.max(sum.max_abs_diff(&norm));
    if !(gap <= args.tolerance) {
        return Err(Error::Dataset(format!(
            "trend + season differs from the normalized input by {gap:e} (tolerance {:e})",
            args.tolerance
        )));
    }
    Ok(gap)
}

/// A dataset and its windows, ready for training or evaluation.
pub struct LoadedDomain {
    pub spec: DatasetSpec,
    pub series: LoadedSeries,
    pub windows: SplitWindows,
}

pub fn load_domains(cfg: &RunConfig, model: &ModelConfig, stride: usize) -> Result<Vec<LoadedDomain>> {
    cfg.datasets
        .iter()
        .map(|spec| {
            let series = read_csv(&spec.path)?;
            let windows = make_windows(&series.values, model.history_len, model.horizon, stride, &spec.split)?;
            if windows.train.is_empty() {
                return Err(Error::Dataset(format!("domain `{}` has no training windows", spec.domain_id)));
            }
            Ok(LoadedDomain {
                spec: spec.clone(),
                series,
                windows,
            })
        })
        .collect()
}

fn domain_data(domains: &[LoadedDomain]) -> Vec<DomainData> {
    domains
        .iter()
        .map(|d| DomainData {
            domain: d.spec.domain_id.clone(),
            train: d.windows.train.clone(),
            val: d.windows.val.clone(),
        })
        .collect()
}

fn write_log(path: &Path, report: &TrainReport) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    report.write_jsonl(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub joint: Option<PathBuf>,
    pub final_checkpoint: Option<PathBuf>,
    pub steps: usize,
}

pub fn train_cmd(args: &TrainArgs, out_flag: Option<&Path>) -> Result<TrainOutcome> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.stage {
        cfg.train.stage = s;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(e) = args.diffusion_epochs {
        cfg.train.diffusion_epochs = e;
    }
    cfg.validate()?;
    let out = resolve_out_dir(out_flag, Some(&cfg.output_dir));
    let stage = cfg.train.stage;
    let start = match (stage, &args.init) {
        (Stage::Diffusion, None) => {
            return Err(Error::Config("--stage diffusion needs --init <joint checkpoint>".into()));
        }
        (Stage::Diffusion, Some(p)) => Some(OneCast::load(p)?),
        (_, Some(_)) => return Err(Error::Config("--init is only used with --stage diffusion".into())),
        _ => None,
    };
    let model_cfg = match &start {
        Some(m) => m.config.clone(),
        None => cfg.effective_model(),
    };
    if stage == Stage::Diffusion && !model_cfg.variant.has_trend() {
        return Err(Error::Config("seasonal-only models have no diffusion stage".into()));
    }
    let domains = load_domains(&cfg, &model_cfg, cfg.window_stride)?;
    let infos: Vec<DomainInfo> = domains
        .iter()
        .map(|d| DomainInfo {
            name: d.spec.domain_id.clone(),
            channels: d.series.channels(),
        })
        .collect();
    let mut model = match start {
        Some(m) => {
            if m.domains != infos {
                return Err(Error::Config("checkpoint domains differ from the config's datasets".into()));
            }
            m
        }
        None => OneCast::new(model_cfg, infos, cfg.train.seed)?,
    };
    let data = domain_data(&domains);

    create_dir(&out)?;
    write_text(&out.join("run.toml"), &cfg.to_toml()?)?;
    let mut outcome = TrainOutcome {
        joint: None,
        final_checkpoint: None,
        steps: 0,
    };
    if matches!(stage, Stage::Joint | Stage::Both) {
        let report = train_stage1(&mut model, &data, &cfg.train)?;
        write_log(&out.join("joint.jsonl"), &report)?;
        let path = out.join("joint.ockpt");
        model.save(&path)?;
        println!(
            "joint: {} steps, best validation {:.6} at epoch {} -> {}",
            report.summary.steps,
            report.summary.best_validation,
            report.summary.best_epoch,
            path.display()
        );
        outcome.steps += report.summary.steps;
        outcome.joint = Some(path);
    }
    if matches!(stage, Stage::Diffusion | Stage::Both) {
        if model.config.variant.has_trend() {
            let report = train_stage2(&mut model, &data, &cfg.train)?;
            write_log(&out.join("diffusion.jsonl"), &report)?;
            let path = out.join("final.ockpt");
            model.save(&path)?;
            println!(
                "diffusion: {} steps, best validation {:.6} at epoch {} -> {}",
                report.summary.steps,
                report.summary.best_validation,
                report.summary.best_epoch,
                path.display()
            );
            outcome.steps += report.summary.steps;
            outcome.final_checkpoint = Some(path);
        } else {
            println!("seasonal-only model: no diffusion stage");
        }
    }
    Ok(outcome)
}

fn pick_domain(model: &OneCast, requested: Option<&str>) -> Result<String> {
    match requested {
        Some(d) => Ok(model.domain(d)?.name.clone()),
        None if model.domains.len() == 1 => Ok(model.domains[0].name.clone()),
        None => Err(Error::Config(format!(
            "checkpoint has {} domains; pick one with --domain",
            model.domains.len()
        ))),
    }
}

pub fn forecast_cmd(args: &ForecastArgs, out: &Path) -> Result<PathBuf> {
    let model = OneCast::load(&args.checkpoint)?;
    if let Some(h) = args.horizon {
        if h != model.config.horizon {
            return Err(Error::Config(format!(
                "requested horizon {h} but the checkpoint forecasts {}",
                model.config.horizon
            )));
        }
    }
    let domain = pick_domain(&model, args.domain.as_deref())?;
    let series = read_csv(&args.input)?;
    let l_h = model.config.history_len;
    if series.rows() < l_h {
        return Err(Error::WindowTooShort {
            len: series.rows(),
            min: l_h,
        });
    }
    let history = series.values.slice_rows(series.rows() - l_h, l_h);
    let f = model.forecast(&domain, &history, args.steps)?;

    let path = args.output.clone().unwrap_or_else(|| out.join("forecast.csv"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_csv_file(&path, &series.columns, &f.values)?;
    if let Some(svg) = &args.plot {
        let hist = history.column(0);
        let mut joined = hist.clone();
        joined.extend(f.values.column(0));
        let title = format!("{domain} / {}: history and forecast", series.columns[0]);
        write_text(svg, &line_plot_svg(&title, &hist, &joined))?;
    }
    if let Some(trace_path) = &args.trace {
        let file = fs::File::create(trace_path).map_err(|e| Error::io(trace_path, e))?;
        if let Some(trace) = &f.trace {
            trace.write_jsonl(file).map_err(|e| Error::io(trace_path, e))?;
        }
    }
    Ok(path)
}

pub fn eval_cmd(args: &EvalArgs, out_flag: Option<&Path>) -> Result<Vec<crate::data::EvalReport>> {
    let model = OneCast::load(&args.checkpoint)?;
    let (cfg, config_out) = match (&args.config, &args.input) {
        (Some(p), _) => {
            let cfg = RunConfig::load(p)?;
            let out = cfg.output_dir.clone();
            (cfg, Some(out))
        }
        (None, Some(input)) => {
            let domain = pick_domain(&model, args.domain.as_deref())?;
            let cfg = RunConfig {
                datasets: vec![DatasetSpec {
                    path: input.clone(),
                    domain_id: domain,
                    split: SplitFractions::default(),
                    ..DatasetSpec::default()
                }],
                ..RunConfig::default()
            };
            (cfg, None)
        }
        (None, None) => return Err(Error::Config("eval needs --config or --input".into())),
    };
    let out = resolve_out_dir(out_flag, config_out.as_deref());
    let stride = args.stride.unwrap_or(cfg.window_stride);
    if stride == 0 {
        return Err(Error::Config("--stride must be positive".into()));
    }
    for d in &cfg.datasets {
        d.validate()?;
        model.domain(&d.domain_id)?;
    }
    if let Some(d) = &args.domain {
        if !cfg.datasets.iter().any(|s| &s.domain_id == d) {
            return Err(Error::Config(format!("no dataset for domain `{d}`")));
        }
    }
    let horizons = if args.horizons.is_empty() {
        vec![model.config.horizon]
    } else {
        args.horizons.clone()
    };
    let opts = EvalOptions {
        horizons,
        steps: args.steps,
        truth_as_forecast: args.truth_as_forecast,
    };
    let domains = load_domains(&cfg, &model.config, stride)?;
    let mut reports = Vec::new();
    let mut plots = Vec::new();
    for d in domains
        .iter()
        .filter(|d| args.domain.as_ref().is_none_or(|x| *x == d.spec.domain_id))
    {
        let report = evaluate(&model, &d.spec.domain_id, &d.windows.test, &opts)?;
        if args.plot {
            let w = &d.windows.test[0];
            let pred = if opts.truth_as_forecast {
                w.future.clone()
            } else {
                model.forecast(&d.spec.domain_id, &w.history, opts.steps)?.values
            };
            for &h in &opts.horizons {
                let truth: Vec<f64> = w.future.column(0)[..h].to_vec();
                let fc: Vec<f64> = pred.column(0)[..h].to_vec();
                let title = format!("{} horizon {h}: truth and forecast", d.spec.domain_id);
                plots.push((format!("eval_{}_h{h}.svg", d.spec.domain_id), line_plot_svg(&title, &truth, &fc)));
            }
        }
        reports.push(report);
    }
    create_dir(&out)?;
    for r in &reports {
        r.save(
            &out.join(format!("eval_{}.json", r.domain)),
            &out.join(format!("eval_{}.csv", r.domain)),
        )?;
        for h in &r.horizons {
            println!(
                "{} h={:<4} mse {:.6} mae {:.6} amad {:.6}",
                r.domain, h.horizon, h.mse, h.mae, h.amad
            );
        }
        if let Some(acc) = r.token_accuracy {
            println!("{} token accuracy {:.4}", r.domain, acc);
        }
    }
    for (name, svg) in plots {
        write_text(&out.join(name), &svg)?;
    }
    Ok(reports)
}

pub fn budget_cmd(args: &BudgetArgs) -> Result<Vec<(TokenMethod, u64)>> {
    let methods = match args.method {
        Some(m) => vec![m],
        None => TokenMethod::ALL.to_vec(),
    };
    methods
        .into_iter()
        .map(|m| Ok((m, token_budget(m, args.len, args.patch, args.channels, args.k, args.vocab)?)))
        .collect()
}

pub fn selfcheck_cmd(args: &SelfcheckArgs) -> Result<()> {
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()));
    }
    let checks = selfcheck::run(&SelfcheckOptions {
        gradient_seeds: args.seeds,
        inject_fault: args.inject_fault,
        ..SelfcheckOptions::default()
    });
    print!("{}", selfcheck::render_table(&checks));
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} self-checks failed")));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let flag = cli.out_dir.as_deref();
    match cli.command {
        Command::Decompose(a) => {
            let out = resolve_out_dir(flag, None);
            let rcr = decompose_cmd(&a, &out)?;
            println!("rcr {rcr}");
        }
        Command::Verify(a) => {
            let dir = a.dir.clone().unwrap_or_else(|| resolve_out_dir(flag, None));
            let gap = verify_cmd(&a, &dir)?;
            println!("ok max_abs_diff {gap:e}");
        }
        Command::Train(a) => {
            train_cmd(&a, flag)?;
        }
        Command::Forecast(a) => {
            let path = forecast_cmd(&a, &resolve_out_dir(flag, None))?;
            println!("forecast -> {}", path.display());
        }
        Command::Eval(a) => {
            eval_cmd(&a, flag)?;
        }
        Command::Budget(a) => {
            for (m, n) in budget_cmd(&a)? {
                println!("{m} {n}");
            }
        }
        Command::Selfcheck(a) => selfcheck_cmd(&a)?,
        Command::Inspect(a) => {
            let h = read_header(&a.checkpoint)?;
            println!("{}", serde_json::to_string_pretty(&h).map_err(|e| Error::Checkpoint(e.to_string()))?);
        }
        Command::DefaultConfig => print!("{}", RunConfig::default().to_toml()?),
    }
    Ok(())
}

/// Parses the process arguments, runs, and maps errors to exit codes.
pub fn main_exit_code() -> i32 {
    match run(Cli::parse()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
    }

    #[test]
    fn dataset_table_parses() {
        let c = RunConfig::from_toml(
            r#"
window_stride = 4
[model]
history_len = 48
[[dataset]]
path = "a.csv"
domain_id = "a"
natural_periods = [12.0]
"#,
        )
        .unwrap();
        assert_eq!(c.window_stride, 4);
        assert_eq!(c.model.history_len, 48);
        assert_eq!(c.datasets[0].domain_id, "a");
        assert_eq!(c.effective_model().natural_periods, vec![12.0, 24.0]);
    }

    #[test]
    fn flag_beats_config() {
        let p = resolve_out_dir(Some(Path::new("x")), Some(Path::new("y")));
        assert_eq!(p, PathBuf::from("x"));
    }

    #[test]
    fn budget_lists_all_methods() {
        let b = budget_cmd(&BudgetArgs {
            method: None,
            len: 96,
            patch: 16,
            channels: 11,
            k: 3,
            vocab: 437,
        })
        .unwrap();
        let n: Vec<u64> = b.iter().map(|x| x.1).collect();
        assert_eq!(n, vec![66, 1056, 3168, 443]);
    }
}
