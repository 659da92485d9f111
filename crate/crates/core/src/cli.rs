//! The `voi` command-line tool: sample the HIV model, summarize the
//! posterior, and compute EVPPI grids, EVSI curves and ENBS tables.
//!
//! Settings are merged as flags > `--config` file > defaults. The merged
//! configuration is echoed to `<out>/config.json`, and every CSV gets a
//! `<stem>.meta.json` sidecar carrying the config hash and seed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, anyhow, bail};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::designs::{DesignKind, DesignSpec};
use crate::hiv::{HivData, HivModel, HivOutputs, Scenario};
use crate::plot::{self, Series};
use crate::regress::FitConfig;
use crate::samples::{SampleTable, TableMeta, format_number, write_meta};
use crate::sampler::{ChainConfig, Diagnostics, hiv_column_names, run_chains};
use crate::voi::{self, EvppiGrid, LossSpec, VoiConfig, VoiEstimate};

pub const DEFAULT_N_GRID: [u64; 7] = [10, 50, 100, 500, 1000, 5000, 10000];

/// Input groups for the default EVPPI grid: one row per founder, with the
/// two data-source quantities `pi_GA` and `or_GM` standing in for the GUM
/// Anon and GMSHS parameters.
pub const DEFAULT_INPUT_GROUPS: [&str; 17] = [
    "mu_pop", "rho_G", "rho_N", "rho_P", "a_S", "a_H", "a_deltaG", "a_deltaN", "a_deltaP", "gamma1",
    "gamma2", "gamma3", "gamma4", "a_UN", "a_OP", "pi_GA", "or_GM",
];

pub const DEFAULT_EVSI_OUTPUT: &str = "mu_U";

#[derive(Debug, Parser)]
#[command(name = "voi", version, about = "Value of information for Bayesian evidence synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CommandArgs,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum CommandArgs {
    /// Run the MCMC sampler and write samples.csv.
    Sample(RunArgs),
    /// Posterior summaries of every column.
    Summary(RunArgs),
    /// EVPPI grid of input groups against outputs.
    Evppi(RunArgs),
    /// EVSI curves over sample sizes for the study designs.
    Evsi(RunArgs),
    /// Expected net benefit of sampling.
    Enbs(RunArgs),
}

impl CommandArgs {
    fn split(self) -> (Command, RunArgs) {
        match self {
            CommandArgs::Sample(a) => (Command::Sample, a),
            CommandArgs::Summary(a) => (Command::Summary, a),
            CommandArgs::Evppi(a) => (Command::Evppi, a),
            CommandArgs::Evsi(a) => (Command::Evsi, a),
            CommandArgs::Enbs(a) => (Command::Enbs, a),
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Model data JSON (default: built-in synthetic London 2012 data).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model scenario: base, a (GUM Anon only) or b (GUMCAD diagnosed).
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Option<Scenario>,
    /// Seed for the sampler, the design simulations and the standard errors.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pooled post-burn-in draws across chains.
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Burn-in iterations per chain.
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Use an existing samples CSV instead of running the sampler.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Comma-separated input groups; join names with `+` to group them.
    #[arg(long)]
    pub inputs: Option<String>,
    /// Comma-separated outputs.
    #[arg(long)]
    pub outputs: Option<String>,
    #[arg(long, value_enum)]
    pub loss: Option<LossKind>,
    /// Study design (default: both).
    #[arg(long, value_enum)]
    pub design: Option<DesignTag>,
    /// Fixed GUM share of the GMSHS sample instead of the posterior one.
    #[arg(long)]
    pub gmshs_split: Option<f64>,
    /// Comma-separated, strictly increasing sample sizes.
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub cost_fixed: Option<f64>,
    #[arg(long)]
    pub cost_per_unit: Option<f64>,
    /// Existing evsi_curve.csv for `enbs`.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Coefficient draws for standard errors (0 disables them).
    #[arg(long)]
    pub se_draws: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: crate::error::VoiError| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    #[default]
    Sample,
    Summary,
    Evppi,
    Evsi,
    Enbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Posterior variance of each output.
    #[default]
    Var,
    /// Sum of output variances.
    Trace,
    /// Determinant of the output covariance.
    Det,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DesignTag {
    Gumanon,
    Gmshs,
}

/// Fully merged settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub data: Option<PathBuf>,
    pub scenario: Scenario,
    pub seed: u64,
    pub draws: usize,
    pub chains: usize,
    pub burnin: usize,
    pub thin: usize,
    pub samples: Option<PathBuf>,
    pub inputs: Option<Vec<Vec<String>>>,
    pub outputs: Option<Vec<String>>,
    pub loss: LossKind,
    pub design: Option<DesignTag>,
    pub gmshs_split: Option<f64>,
    pub n: Option<Vec<u64>>,
    pub cost_fixed: f64,
    pub cost_per_unit: f64,
    pub curve: Option<PathBuf>,
    pub se_draws: usize,
    pub fit: FitConfig,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let chain = ChainConfig::default();
        RunConfig {
            command: Command::Sample,
            data: None,
            scenario: Scenario::Base,
            seed: chain.seed,
            draws: chain.chains * chain.iterations,
            chains: chain.chains,
            burnin: chain.burnin,
            thin: chain.thin,
            samples: None,
            inputs: None,
            outputs: None,
            loss: LossKind::Var,
            design: None,
            gmshs_split: None,
            n: None,
            cost_fixed: 0.0,
            cost_per_unit: 0.0,
            curve: None,
            se_draws: VoiConfig::default().se_draws,
            fit: FitConfig::default(),
            out: PathBuf::from("."),
            threads: None,
        }
    }
}

/// `a+b,c` -> `[[a, b], [c]]`.
pub fn parse_groups(s: &str) -> Result<Vec<Vec<String>>, String> {
    let groups: Vec<Vec<String>> = s
        .split(',')
        .map(|g| g.split('+').map(|n| n.trim().to_string()).collect::<Vec<_>>())
        .collect();
    if groups.iter().flatten().any(|n| n.is_empty()) {
        return Err(format!("empty name in `{s}`"));
    }
    Ok(groups)
}

pub fn parse_list(s: &str) -> Result<Vec<String>, String> {
    let names: Vec<String> = s.split(',').map(|n| n.trim().to_string()).collect();
    if names.iter().any(|n| n.is_empty()) {
        return Err(format!("empty name in `{s}`"));
    }
    Ok(names)
}

pub fn parse_n_grid(s: &str) -> Result<Vec<u64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<u64>().map_err(|_| format!("`{v}` is not a sample size")))
        .collect()
}

impl RunConfig {
    /// Merge flags over an optional config file over defaults.
    pub fn merge(command: Command, args: RunArgs, file: Option<&Path>, threads: Option<usize>) -> Result<Self, String> {
        let mut c = match file {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                serde_json::from_str::<RunConfig>(&text).map_err(|e| format!("{}: {e}", p.display()))?
            }
            None => RunConfig::default(),
        };
        c.command = command;
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = args.$f { c.$f = v; })* };
        }
        macro_rules! set_opt {
            ($($f:ident),*) => { $(if args.$f.is_some() { c.$f = args.$f; })* };
        }
        set!(scenario, seed, draws, chains, burnin, thin, loss, cost_fixed, cost_per_unit, se_draws, out);
        set_opt!(data, samples, design, gmshs_split, curve);
        if let Some(s) = &args.inputs {
            c.inputs = Some(parse_groups(s)?);
        }
        if let Some(s) = &args.outputs {
            c.outputs = Some(parse_list(s)?);
        }
        if let Some(s) = &args.n {
            c.n = Some(parse_n_grid(s)?);
        }
        if threads.is_some() {
            c.threads = threads;
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<(), String> {
        for (flag, path) in [("--data", &self.data), ("--samples", &self.samples), ("--curve", &self.curve)] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(format!("{flag}: no such file `{}`", p.display()));
                }
            }
        }
        if self.samples.is_none() {
            self.chain_config().validate().map_err(|e| e.to_string())?;
            if self.draws == 0 {
                return Err("--draws must be positive".into());
            }
        }
        if let Some(n) = &self.n {
            if n.is_empty() || n.windows(2).any(|w| w[0] >= w[1]) {
                return Err("--n must be a strictly increasing list".into());
            }
        }
        if let Some(q) = self.gmshs_split {
            if !(0.0..=1.0).contains(&q) {
                return Err("--gmshs-split must lie in [0, 1]".into());
            }
        }
        if !(self.cost_fixed.is_finite() && self.cost_per_unit.is_finite()) || self.cost_fixed < 0.0 || self.cost_per_unit < 0.0 {
            return Err("costs must be finite and non-negative".into());
        }
        if self.threads == Some(0) {
            return Err("--threads must be positive".into());
        }
        if matches!(self.loss, LossKind::Trace | LossKind::Det) && self.outputs.as_ref().is_some_and(|o| o.len() < 2) {
            return Err("trace and det losses need at least two outputs".into());
        }
        Ok(())
    }

    pub fn chain_config(&self) -> ChainConfig {
        let chains = self.chains.max(1);
        ChainConfig {
            chains: self.chains,
            iterations: self.draws.div_ceil(chains) * self.thin.max(1),
            burnin: self.burnin,
            thin: self.thin,
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn voi_config(&self) -> VoiConfig {
        VoiConfig {
            fit: self.fit.clone(),
            se_draws: self.se_draws,
            seed: self.seed,
        }
    }

    /// SHA-256 over everything that affects results (not `out` or `threads`).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.threads = None;
        let text = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn designs(&self) -> Vec<DesignKind> {
        let gmshs = DesignKind::Gmshs { split: self.gmshs_split };
        match self.design {
            Some(DesignTag::Gumanon) => vec![DesignKind::GumAnon],
            Some(DesignTag::Gmshs) => vec![gmshs],
            None => vec![DesignKind::GumAnon, gmshs],
        }
    }

    fn n_grid(&self) -> Vec<u64> {
        self.n.clone().unwrap_or_else(|| DEFAULT_N_GRID.to_vec())
    }
}

/// Failure classes mapped to exit codes 2 and 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let (command, args) = cli.command.split();
    let cfg = RunConfig::merge(command, args, cli.config.as_deref(), cli.threads).map_err(CliError::Usage)?;
    if let Some(t) = cfg.threads {
        if rayon::ThreadPoolBuilder::new().num_threads(t).build_global().is_err() {
            log::warn!("thread pool already initialised; --threads ignored");
        }
    }
    let mut run = Run::new(cfg)?;
    match command {
        Command::Sample => run.sample()?,
        Command::Summary => run.summary()?,
        Command::Evppi => run.evppi()?,
        Command::Evsi => run.evsi()?,
        Command::Enbs => run.enbs()?,
    }
    run.finish()?;
    Ok(())
}

struct Run {
    cfg: RunConfig,
    hash: String,
    files: Vec<String>,
    extra: serde_json::Map<String, serde_json::Value>,
}

/// `(design, output, [(n, evsi)])`.
type CurveRows = (String, String, Vec<(u64, f64)>);

/// One EVSI curve: design tag, output label and per-n results.
struct Curve {
    design: String,
    output: String,
    points: Vec<(u64, Result<VoiEstimate, String>)>,
}

fn na(x: Option<f64>) -> String {
    x.filter(|v| v.is_finite()).map(format_number).unwrap_or_else(|| "NA".into())
}

impl Run {
    fn new(cfg: RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
        let hash = cfg.hash();
        let text = serde_json::to_string_pretty(&cfg).map_err(anyhow::Error::from)?;
        let path = cfg.out.join("config.json");
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(Run {
            cfg,
            hash,
            files: vec!["config.json".into()],
            extra: serde_json::Map::new(),
        })
    }

    fn file_meta(&self) -> TableMeta {
        let mut meta = TableMeta {
            seed: Some(self.cfg.seed),
            scenario: Some(self.cfg.scenario.tag().to_string()),
            ..Default::default()
        };
        meta.extra.insert("config_hash".into(), self.hash.clone().into());
        meta.extra.insert("command".into(), serde_json::to_value(self.cfg.command).unwrap());
        meta
    }

    fn write_text(&mut self, name: &str, text: &str) -> anyhow::Result<()> {
        let path = self.cfg.out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_csv(&mut self, name: &str, text: &str) -> anyhow::Result<()> {
        self.write_text(name, text)?;
        let path = self.cfg.out.join(name);
        write_meta(&path, &self.file_meta()).with_context(|| format!("writing metadata for {name}"))?;
        Ok(())
    }

    fn model(&self) -> anyhow::Result<HivModel> {
        let data = match &self.cfg.data {
            Some(p) => HivData::load(p).with_context(|| format!("loading data {}", p.display()))?,
            None => HivData::synthetic_london_2012(),
        };
        if data.is_synthetic() {
            log::info!("data fields {} are synthetic", data.synthetic.join(", "));
        }
        Ok(HivModel::new(data, self.cfg.scenario)?)
    }

    /// Column names available before any work is done.
    fn registry(&self) -> Option<Vec<String>> {
        self.cfg.samples.is_none().then(|| hiv_column_names(self.cfg.scenario))
    }

    fn check_names<'a>(&self, names: impl IntoIterator<Item = &'a String>, columns: &[String]) -> Result<(), CliError> {
        let mut missing: Vec<String> = names
            .into_iter()
            .filter(|n| !columns.contains(n))
            .cloned()
            .collect();
        missing.dedup();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!("unknown variable(s): {}", missing.join(", "))))
        }
    }

    /// Sampled or loaded draws, plus diagnostics when sampled.
    fn table(&mut self) -> anyhow::Result<(SampleTable, Option<Diagnostics>)> {
        if let Some(p) = &self.cfg.samples {
            let t = SampleTable::read_csv(p).with_context(|| format!("reading samples {}", p.display()))?;
            return Ok((t, None));
        }
        let model = self.model()?;
        if model.data.is_synthetic() {
            self.extra.insert("synthetic_fields".into(), serde_json::json!(model.data.synthetic));
        }
        let (t, diag) = run_chains(&model, &self.cfg.chain_config()).context("running the sampler")?;
        let max_rhat = diag.max_rhat();
        let min_ess = diag.ess.iter().copied().fold(f64::INFINITY, f64::min);
        self.extra.insert(
            "diagnostics".into(),
            serde_json::json!({ "max_rhat": max_rhat, "min_ess": min_ess }),
        );
        if let Some(r) = max_rhat.filter(|r| *r >= 1.05) {
            log::warn!("max split R-hat {r:.3} exceeds 1.05; consider more iterations");
        }
        Ok((t, Some(diag)))
    }

    fn sample(&mut self) -> Result<(), CliError> {
        let (table, diag) = self.table()?;
        let mut meta = table.meta().cloned().unwrap_or_default();
        meta.extra.insert("config_hash".into(), self.hash.clone().into());
        let table = table.with_meta(meta);
        let path = self.cfg.out.join("samples.csv");
        table.write_csv(&path).context("writing samples.csv")?;
        self.files.push("samples.csv".into());
        if let Some(d) = diag {
            let mut s = String::from("name,rhat,ess\n");
            for (i, n) in d.names.iter().enumerate() {
                let _ = writeln!(s, "{n},{},{}", na(d.rhat[i]), na(Some(d.ess[i])));
            }
            self.write_csv("diagnostics.csv", &s)?;
        }
        Ok(())
    }

    fn summary(&mut self) -> Result<(), CliError> {
        let (table, diag) = self.table()?;
        let rows = table.summarize().map_err(anyhow::Error::from)?;
        let mut s = String::from("name,mean,sd,median,q2.5,q97.5,rhat,ess\n");
        for r in rows {
            let rhat = diag.as_ref().and_then(|d| d.rhat_of(&r.name));
            let ess = diag.as_ref().and_then(|d| d.ess_of(&r.name));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.name,
                format_number(r.mean),
                format_number(r.sd),
                format_number(r.median),
                format_number(r.q2_5),
                format_number(r.q97_5),
                na(rhat),
                na(ess)
            );
        }
        self.write_csv("summary.csv", &s)?;
        Ok(())
    }

    fn multi_loss(&self, outputs: &[String]) -> Option<LossSpec> {
        match self.cfg.loss {
            LossKind::Var => None,
            LossKind::Trace => Some(LossSpec::TraceA { outputs: outputs.to_vec() }),
            LossKind::Det => Some(LossSpec::DCriterion {
                outputs: outputs.to_vec(),
                standardized: false,
            }),
        }
    }

    fn multi_label(&self, outputs: &[String]) -> String {
        let kind = match self.cfg.loss {
            LossKind::Var => "var",
            LossKind::Trace => "trace",
            LossKind::Det => "det",
        };
        format!("{kind}({})", outputs.join("+"))
    }

    fn evppi(&mut self) -> Result<(), CliError> {
        let groups = self
            .cfg
            .inputs
            .clone()
            .unwrap_or_else(|| DEFAULT_INPUT_GROUPS.iter().map(|g| vec![g.to_string()]).collect());
        let outputs = self
            .cfg
            .outputs
            .clone()
            .unwrap_or_else(|| HivOutputs::NAMES.iter().map(|s| s.to_string()).collect());
        if self.cfg.loss != LossKind::Var && outputs.len() < 2 {
            return Err(CliError::Usage("trace and det losses need at least two outputs".into()));
        }
        if let Some(reg) = self.registry() {
            self.check_names(groups.iter().flatten().chain(&outputs), &reg)?;
        }
        let (table, _) = self.table()?;
        self.check_names(groups.iter().flatten().chain(&outputs), table.names())?;
        let vcfg = self.cfg.voi_config();
        let grid = match self.multi_loss(&outputs) {
            None => voi::evppi_grid(&table, &groups, &outputs, &vcfg),
            Some(loss) => EvppiGrid {
                cells: groups
                    .iter()
                    .map(|g| vec![voi::evppi(&table, g, &loss, &vcfg).map_err(|e| e.to_string())])
                    .collect(),
                groups: groups.clone(),
                outputs: vec![self.multi_label(&outputs)],
            },
        };

        let labels: Vec<String> = grid.groups.iter().map(|g| EvppiGrid::group_label(g)).collect();
        let mut wide = format!("group,{}\n", grid.outputs.join(","));
        let mut long = String::from("group,output,evppi,baseline,proportion,se,k,error\n");
        let mut cells = Vec::new();
        for (g, label) in labels.iter().enumerate() {
            let mut row = Vec::new();
            wide.push_str(label);
            for (o, out) in grid.outputs.iter().enumerate() {
                match &grid.cells[g][o] {
                    Ok(e) => {
                        let _ = write!(wide, ",{}", na(e.proportion));
                        let _ = writeln!(
                            long,
                            "{label},{out},{},{},{},{},{},",
                            format_number(e.value),
                            format_number(e.baseline),
                            na(e.proportion),
                            na(e.se),
                            e.k_used
                        );
                        row.push(e.proportion);
                    }
                    Err(msg) => {
                        wide.push_str(",NA");
                        let _ = writeln!(long, "{label},{out},NA,NA,NA,NA,NA,\"{}\"", msg.replace('"', "'"));
                        row.push(None);
                    }
                }
            }
            wide.push('\n');
            cells.push(row);
        }
        self.write_csv("evppi_grid.csv", &wide)?;
        self.write_csv("evppi_cells.csv", &long)?;
        let title = format!("EVPPI as % of expected loss (scenario {})", self.cfg.scenario);
        self.write_text("evppi_grid.svg", &plot::heatmap(&title, &labels, &grid.outputs, &cells))?;
        Ok(())
    }

    fn curves(&mut self, table: &SampleTable) -> Result<Vec<Curve>, CliError> {
        let outputs = self
            .cfg
            .outputs
            .clone()
            .unwrap_or_else(|| vec![DEFAULT_EVSI_OUTPUT.to_string()]);
        self.check_names(&outputs, table.names())?;
        let losses: Vec<(String, LossSpec)> = match self.multi_loss(&outputs) {
            None => outputs.iter().map(|o| (o.clone(), LossSpec::scalar(o.clone()))).collect(),
            Some(l) => vec![(self.multi_label(&outputs), l)],
        };
        let grid = self.cfg.n_grid();
        let vcfg = self.cfg.voi_config();
        let mut curves = Vec::new();
        for kind in self.cfg.designs() {
            let design = DesignSpec::new(kind.clone(), 0, self.cfg.seed);
            self.check_names(&kind.required_columns(), table.names())?;
            for (label, loss) in &losses {
                let pts = voi::evsi_curve(table, &design, &grid, loss, &vcfg)
                    .with_context(|| format!("EVSI curve for {} / {label}", kind.tag()))?;
                curves.push(Curve {
                    design: kind.tag().to_string(),
                    output: label.clone(),
                    points: pts.into_iter().map(|p| (p.n, p.estimate)).collect(),
                });
            }
        }
        Ok(curves)
    }

    fn evsi_table(&mut self) -> Result<Vec<Curve>, CliError> {
        if let Some(reg) = self.registry() {
            if let Some(o) = &self.cfg.outputs {
                self.check_names(o, &reg)?;
            }
        }
        let (table, _) = self.table()?;
        self.curves(&table)
    }

    fn evsi(&mut self) -> Result<(), CliError> {
        let curves = self.evsi_table()?;
        let mut s = String::from("design,output,n,evsi,remaining_variance,se,proportion,error\n");
        for c in &curves {
            for (n, e) in &c.points {
                match e {
                    Ok(e) => {
                        let _ = writeln!(
                            s,
                            "{},{},{n},{},{},{},{},",
                            c.design,
                            c.output,
                            format_number(e.value),
                            format_number(e.remaining()),
                            na(e.se),
                            na(e.proportion)
                        );
                    }
                    Err(m) => {
                        let _ = writeln!(s, "{},{},{n},NA,NA,NA,NA,\"{}\"", c.design, c.output, m.replace('"', "'"));
                    }
                }
            }
        }
        self.write_csv("evsi_curve.csv", &s)?;
        let x: Vec<String> = self.cfg.n_grid().iter().map(|n| n.to_string()).collect();
        let series: Vec<Series> = curves
            .iter()
            .map(|c| Series {
                label: format!("{} {}", c.design, c.output),
                y: c.points.iter().map(|(_, e)| e.as_ref().map_or(f64::NAN, |e| e.value)).collect(),
                band: c
                    .points
                    .iter()
                    .map(|(_, e)| e.as_ref().ok().and_then(|e| e.se).unwrap_or(0.0))
                    .collect(),
            })
            .collect();
        let title = format!("EVSI by sample size (scenario {})", self.cfg.scenario);
        self.write_text("evsi_curve.svg", &plot::line_chart(&title, "n", "EVSI", &x, &series))?;
        Ok(())
    }

    /// Curves read back from an evsi_curve.csv.
    fn read_curve(path: &Path) -> anyhow::Result<Vec<CurveRows>> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| *h == name)
                .ok_or_else(|| anyhow!("{}: missing column `{name}`", path.display()))
        };
        let (cd, co, cn, cv) = (col("design")?, col("output")?, col("n")?, col("evsi")?);
        let mut out: Vec<CurveRows> = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < header.len() {
                bail!("{}: line {}: too few fields", path.display(), i + 2);
            }
            let n: u64 = f[cn].parse().with_context(|| format!("{}: line {}: bad n", path.display(), i + 2))?;
            let v: f64 = if f[cv] == "NA" {
                f64::NAN
            } else {
                f[cv].parse().with_context(|| format!("{}: line {}: bad evsi", path.display(), i + 2))?
            };
            match out.last_mut() {
                Some((d, o, pts)) if d == f[cd] && o == f[co] => pts.push((n, v)),
                _ => out.push((f[cd].to_string(), f[co].to_string(), vec![(n, v)])),
            }
        }
        Ok(out)
    }

    fn enbs(&mut self) -> Result<(), CliError> {
        let curves: Vec<CurveRows> = match self.cfg.curve.clone() {
            Some(p) => Self::read_curve(&p)?,
            None => self
                .evsi_table()?
                .into_iter()
                .map(|c| {
                    let pts = c
                        .points
                        .iter()
                        .map(|(n, e)| (*n, e.as_ref().map_or(f64::NAN, |e| e.value)))
                        .collect();
                    (c.design, c.output, pts)
                })
                .collect(),
        };
        let mut s = String::from("design,output,n,evsi,cost,net,optimal\n");
        let mut best = Vec::new();
        let mut series = Vec::new();
        let mut x: Vec<u64> = Vec::new();
        for (design, output, pts) in &curves {
            let r = voi::enbs(pts, self.cfg.cost_fixed, self.cfg.cost_per_unit);
            for row in &r.rows {
                let optimal = !r.do_not_sample && row.n == r.optimal_n;
                let _ = writeln!(
                    s,
                    "{design},{output},{},{},{},{},{}",
                    row.n,
                    na(Some(row.value)),
                    format_number(row.cost),
                    na(Some(row.net)),
                    u8::from(optimal)
                );
                if !x.contains(&row.n) {
                    x.push(row.n);
                }
            }
            best.push(serde_json::json!({
                "design": design,
                "output": output,
                "optimal_n": r.optimal_n,
                "do_not_sample": r.do_not_sample,
            }));
            series.push((format!("{design} {output}"), r.rows));
        }
        self.write_csv("enbs.csv", &s)?;
        self.extra.insert("enbs".into(), serde_json::Value::Array(best));
        x.sort_unstable();
        let series: Vec<Series> = series
            .into_iter()
            .map(|(label, rows)| Series {
                label,
                y: x
                    .iter()
                    .map(|n| rows.iter().find(|r| r.n == *n).map_or(f64::NAN, |r| r.net))
                    .collect(),
                band: vec![0.0; x.len()],
            })
            .collect();
        let xl: Vec<String> = x.iter().map(|n| n.to_string()).collect();
        self.write_text("enbs.svg", &plot::line_chart("Expected net benefit of sampling", "n", "ENBS", &xl, &series))?;
        Ok(())
    }

    fn finish(&mut self) -> anyhow::Result<()> {
        let mut meta = serde_json::json!({
            "command": self.cfg.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": self.hash,
            "seed": self.cfg.seed,
            "scenario": self.cfg.scenario.tag(),
            "files": self.files,
        });
        let obj = meta.as_object_mut().expect("object");
        for (k, v) in std::mem::take(&mut self.extra) {
            obj.insert(k, v);
        }
        let path = self.cfg.out.join("run.meta.json");
        let text = serde_json::to_string_pretty(&meta)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
