//! Command-line front end.
//!
//! Configs are TOML with an explicit `schema_version`; unknown keys are
//! rejected. Every CSV written starts with a `#` comment line carrying the
//! tool version and seed, followed by a header row. Run metadata that is not
//! reproducible (wall time) goes to stderr or a separate metadata file, so
//! CSV output is byte-identical for identical inputs.

use std::cell::RefCell;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::allocate::{
    bundle_disj, bundle_grd, item_disj, validate_allocation, AllocateError, PrimaSelector,
    SeedSelector,
};
use crate::blocks::generate_blocks;
use crate::diffusion::{estimate_welfare, Allocation};
use crate::graph::{load_graph, Graph, NodeId, WeightMode};
use crate::items::{
    build_additive, build_cone, build_levelwise, ItemSet, NoiseSpec, NoiseWorld, UtilityModel,
};
use crate::oracle::{
    brute_force_opt_welfare, ExactGreedySelector, OracleError, DEFAULT_SEARCH_CAP,
};
use crate::prima::{prima, PrimaError, PrimaParams, DEFAULT_RR_CAP};

pub const SCHEMA_VERSION: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SAMPLE_GRAPH: &str = include_str!("../data/sample_graph.txt");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    ResourceCap(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::ResourceCap(_) => 3,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        invalid(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        invalid(e)
    }
}

impl From<PrimaError> for CliError {
    fn from(e: PrimaError) -> Self {
        match e {
            PrimaError::ResourceCap { .. } => CliError::ResourceCap(e.to_string()),
            _ => invalid(e),
        }
    }
}

impl From<AllocateError> for CliError {
    fn from(e: AllocateError) -> Self {
        match e {
            AllocateError::Prima(p) => p.into(),
            _ => invalid(e),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::SearchCap { .. } | OracleError::TooManyUncertainEdges { .. } => {
                CliError::ResourceCap(e.to_string())
            }
            _ => invalid(e),
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration files

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseConfig {
    #[default]
    Zero,
    Gaussian {
        variance: f64,
    },
    Uniform {
        half_width: f64,
    },
    Discrete {
        values: Vec<f64>,
        probs: Vec<f64>,
    },
}

impl From<&NoiseConfig> for NoiseSpec {
    fn from(n: &NoiseConfig) -> Self {
        match n {
            NoiseConfig::Zero => NoiseSpec::Zero,
            NoiseConfig::Gaussian { variance } => NoiseSpec::Gaussian {
                variance: *variance,
            },
            NoiseConfig::Uniform { half_width } => NoiseSpec::Uniform {
                half_width: *half_width,
            },
            NoiseConfig::Discrete { values, probs } => NoiseSpec::Discrete {
                values: values.clone(),
                probs: probs.clone(),
            },
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ItemConfig {
    pub name: String,
    pub price: f64,
    #[serde(default)]
    pub noise: NoiseConfig,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub items: Vec<String>,
    pub value: f64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ValuationConfig {
    /// Explicit value of every nonempty subset.
    Table { entries: Vec<TableEntry> },
    /// Per-item values summed over the set.
    Additive { values: Vec<f64> },
    /// Only sets containing `core` have value; `core_value` is the value of
    /// `{core}` and `increment` the utility added per extra item.
    Cone {
        core: String,
        core_value: f64,
        increment: f64,
    },
    /// Random supermodular table drawn from `seed`.
    Levelwise { seed: u64 },
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema_version: Option<u32>,
    #[serde(default = "default_true")]
    pub complementary: bool,
    pub items: Vec<ItemConfig>,
    pub valuation: ValuationConfig,
}

fn default_true() -> bool {
    true
}

fn check_schema(found: Option<u32>, what: &str) -> Result<(), CliError> {
    match found {
        Some(SCHEMA_VERSION) => Ok(()),
        Some(v) => Err(invalid(format!(
            "{what}: unsupported schema_version {v} (expected {SCHEMA_VERSION})"
        ))),
        None => Err(invalid(format!("{what}: missing schema_version"))),
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<UtilityModel, CliError> {
        let names: Vec<String> = self.items.iter().map(|i| i.name.clone()).collect();
        let s = names.len();
        for (a, name) in names.iter().enumerate() {
            if names[..a].contains(name) {
                return Err(invalid(format!("duplicate item name `{name}`")));
            }
        }
        let prices: Vec<f64> = self.items.iter().map(|i| i.price).collect();
        let noise: Vec<NoiseSpec> = self.items.iter().map(|i| (&i.noise).into()).collect();
        let index = |name: &str| {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| invalid(format!("unknown item `{name}`")))
        };
        let valuation: Vec<f64> = match &self.valuation {
            ValuationConfig::Table { entries } => {
                if s == 0 || s > crate::items::MAX_ITEMS {
                    return Err(invalid(format!("item count {s} out of range")));
                }
                let mut v = vec![None; 1 << s];
                v[0] = Some(0.0);
                for e in entries {
                    let mut set = ItemSet::EMPTY;
                    for name in &e.items {
                        let i = index(name)?;
                        if set.contains(i) {
                            return Err(invalid(format!(
                                "item `{name}` repeated in a table entry"
                            )));
                        }
                        set = set.with(i);
                    }
                    if set.is_empty() {
                        if e.value != 0.0 {
                            return Err(invalid("the empty set must have value 0"));
                        }
                        continue;
                    }
                    if v[set.0 as usize].replace(e.value).is_some() {
                        return Err(invalid(format!("set {set} listed twice")));
                    }
                }
                let missing: Vec<String> = (1..1u32 << s)
                    .filter(|&m| v[m as usize].is_none())
                    .map(|m| display_set(&names, ItemSet(m)))
                    .collect();
                if !missing.is_empty() {
                    return Err(invalid(format!(
                        "valuation table incomplete; missing {}",
                        missing.join(", ")
                    )));
                }
                v.into_iter().map(Option::unwrap).collect()
            }
            ValuationConfig::Additive { values } => {
                if values.len() != s {
                    return Err(invalid(format!(
                        "expected {s} additive values, found {}",
                        values.len()
                    )));
                }
                let utilities: Vec<f64> = values.iter().zip(&prices).map(|(v, p)| v - p).collect();
                build_additive(&utilities, &prices)
                    .map_err(invalid)?
                    .valuation()
                    .to_vec()
            }
            ValuationConfig::Cone {
                core,
                core_value,
                increment,
            } => {
                let c = index(core)?;
                build_cone(c, core_value - prices[c], *increment, &prices)
                    .map_err(invalid)?
                    .valuation()
                    .to_vec()
            }
            ValuationConfig::Levelwise { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                build_levelwise(&mut rng, s, &prices)
                    .map_err(invalid)?
                    .valuation()
                    .to_vec()
            }
        };
        UtilityModel::new(names, valuation, prices, noise, self.complementary).map_err(invalid)
    }
}

fn display_set(names: &[String], set: ItemSet) -> String {
    let parts: Vec<&str> = set.iter().map(|i| names[i].as_str()).collect();
    format!("{{{}}}", parts.join(","))
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub path: PathBuf,
    #[serde(default = "default_weights")]
    pub weights: String,
}

fn default_weights() -> String {
    "explicit".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocatorKind {
    BundleGrd,
    ItemDisj,
    BundleDisj,
}

impl AllocatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AllocatorKind::BundleGrd => "bundle-grd",
            AllocatorKind::ItemDisj => "item-disj",
            AllocatorKind::BundleDisj => "bundle-disj",
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: Option<u32>,
    pub seed: u64,
    pub graph: GraphConfig,
    pub model_path: Option<PathBuf>,
    pub model: Option<ModelConfig>,
    pub budgets: Vec<usize>,
    #[serde(default = "default_allocator")]
    pub allocator: AllocatorKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_ell")]
    pub ell: f64,
    #[serde(default = "default_mc_runs")]
    pub mc_runs: usize,
    #[serde(default = "default_rr_cap")]
    pub rr_cap: usize,
    pub output: Option<PathBuf>,
}

fn default_allocator() -> AllocatorKind {
    AllocatorKind::BundleGrd
}
fn default_epsilon() -> f64 {
    0.5
}
fn default_ell() -> f64 {
    1.0
}
fn default_mc_runs() -> usize {
    1000
}
fn default_rr_cap() -> usize {
    DEFAULT_RR_CAP
}

/// A validated experiment with every input loaded.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub graph: Graph,
    pub model: UtilityModel,
    pub base_dir: PathBuf,
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub fn parse_model_config(text: &str, origin: &str) -> Result<ModelConfig, CliError> {
    toml::from_str(text).map_err(|e| invalid(format!("{origin}: {e}")))
}

/// Reads a standalone model file.
pub fn load_model(path: &Path) -> Result<UtilityModel, CliError> {
    let cfg = parse_model_config(&read_to_string(path)?, &path.display().to_string())?;
    check_schema(cfg.schema_version, &path.display().to_string())?;
    cfg.build()
}

pub fn parse_experiment(text: &str, origin: &str) -> Result<ExperimentConfig, CliError> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| invalid(format!("{origin}: {e}")))?;
    check_schema(cfg.schema_version, origin)?;
    Ok(cfg)
}

impl Experiment {
    pub fn load(path: &Path, g: &GlobalOpts) -> Result<Self, CliError> {
        let origin = path.display().to_string();
        let mut config = parse_experiment(&read_to_string(path)?, &origin)?;
        g.apply(&mut config);
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let model = match (&config.model_path, &config.model) {
            (Some(p), None) => load_model(&base_dir.join(p))?,
            (None, Some(m)) => {
                if m.schema_version.is_some_and(|v| v != SCHEMA_VERSION) {
                    return Err(invalid("inline model: unsupported schema_version"));
                }
                m.build()?
            }
            _ => {
                return Err(invalid(format!(
                    "{origin}: give exactly one of `model_path` or `[model]`"
                )))
            }
        };
        if config.budgets.len() != model.num_items() {
            return Err(invalid(format!(
                "{} budgets given for {} items",
                config.budgets.len(),
                model.num_items()
            )));
        }
        PrimaParams {
            epsilon: config.epsilon,
            ell: config.ell,
            rr_cap: config.rr_cap,
        }
        .validate()
        .map_err(invalid)?;
        if config.mc_runs == 0 {
            return Err(invalid("mc_runs must be at least 1"));
        }
        let mode: WeightMode = config.graph.weights.parse().map_err(invalid)?;
        let gpath = base_dir.join(&config.graph.path);
        let file =
            fs::File::open(&gpath).map_err(|e| invalid(format!("{}: {e}", gpath.display())))?;
        let graph = load_graph(BufReader::new(file), mode)
            .map_err(|e| invalid(format!("{}: {e}", gpath.display())))?;
        let b_max = config.budgets.iter().copied().max().unwrap_or(0);
        if b_max > graph.num_nodes() {
            return Err(invalid(format!(
                "largest budget {b_max} exceeds node count {}",
                graph.num_nodes()
            )));
        }
        Ok(Experiment {
            config,
            graph,
            model,
            base_dir,
        })
    }

    pub fn params(&self) -> PrimaParams {
        PrimaParams {
            epsilon: self.config.epsilon,
            ell: self.config.ell,
            rr_cap: self.config.rr_cap,
        }
    }
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(
    name = "uic",
    version,
    about = "Social-welfare seed allocation under utility-driven cascades"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct GlobalOpts {
    /// Master random seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub ell: Option<f64>,
    #[arg(long, global = true)]
    pub mc_runs: Option<usize>,
    /// Cap on stored RR-set entries.
    #[arg(long, global = true)]
    pub rr_cap: Option<usize>,
}

impl GlobalOpts {
    fn apply(&self, c: &mut ExperimentConfig) {
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        if let Some(v) = self.ell {
            c.ell = v;
        }
        if let Some(v) = self.mc_runs {
            c.mc_runs = v;
        }
        if let Some(v) = self.rr_cap {
            c.rr_cap = v;
        }
    }
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ModelSource {
    /// Experiment config providing the model (and budgets).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Standalone model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a seed allocation and write it as CSV.
    Allocate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        allocator: Option<AllocatorKind>,
        /// Output CSV; defaults to the config's `output`, else stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Metadata file (seed, parameters, RR-set counts, wall time).
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Estimate the expected welfare of an allocation file.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        allocation: PathBuf,
    },
    /// Print the block decomposition of the maximal itemset.
    Blocks {
        #[command(flatten)]
        source: ModelSource,
        /// Comma-separated budgets; defaults to the config's.
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<usize>,
        /// Sample the noise world from this seed instead of using zero noise.
        #[arg(long)]
        noise_seed: Option<u64>,
    },
    /// Print the four adoption probabilities of a two-item model.
    Gaps {
        #[command(flatten)]
        source: ModelSource,
    },
    /// Exhaustive optimum versus greedy allocation on a tiny instance.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEARCH_CAP)]
        search_cap: u64,
        #[arg(long)]
        noise_seed: Option<u64>,
    },
    /// Time allocation and estimation over a sweep of uniform budgets.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        budgets: Vec<usize>,
    },
    /// Write a sample experiment, model and graph into a directory.
    GenConfig {
        #[arg(long)]
        dir: PathBuf,
    },
}

/// Parses `args` and runs the command, writing results to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                write!(out, "{e}")?;
                return Ok(());
            }
            return Err(CliError::Usage(e.to_string()));
        }
    };
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // The global pool can be set once per process; later calls keep it.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    dispatch(&cli, out)
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Allocate {
            config,
            allocator,
            out: path,
            meta,
        } => cmd_allocate(g, config, *allocator, path.as_deref(), meta.as_deref(), out),
        Command::Estimate { config, allocation } => cmd_estimate(g, config, allocation, out),
        Command::Blocks {
            source,
            budgets,
            noise_seed,
        } => cmd_blocks(g, source, budgets, *noise_seed, out),
        Command::Gaps { source } => cmd_gaps(g, source, out),
        Command::Oracle {
            config,
            search_cap,
            noise_seed,
        } => cmd_oracle(g, config, *search_cap, *noise_seed, out),
        Command::Bench { config, budgets } => cmd_bench(g, config, budgets, out),
        Command::GenConfig { dir } => cmd_gen_config(dir, out),
    }
}

fn comment_line(out: &mut dyn Write, seed: Option<u64>, extra: &str) -> io::Result<()> {
    match seed {
        Some(s) => writeln!(out, "# uic {VERSION} seed={s}{extra}"),
        None => writeln!(out, "# uic {VERSION} seed=none{extra}"),
    }
}

/// Seed selector that remembers the sample sizes of every call.
struct RecordingSelector {
    inner: PrimaSelector,
    calls: RefCell<Vec<(f64, usize)>>,
}

impl SeedSelector for RecordingSelector {
    fn select(&self, g: &Graph, budgets: &[usize]) -> Result<Vec<NodeId>, AllocateError> {
        let positive: Vec<usize> = budgets.iter().copied().filter(|&b| b > 0).collect();
        if positive.is_empty() {
            return Ok(Vec::new());
        }
        let res = prima(g, &positive, &self.inner.params, self.inner.seed)?;
        self.calls.borrow_mut().push((res.theta, res.rr_sets));
        Ok(res.order.nodes)
    }
}

pub fn run_allocator(
    kind: AllocatorKind,
    graph: &Graph,
    model: &UtilityModel,
    budgets: &[usize],
    selector: &dyn SeedSelector,
) -> Result<Allocation, AllocateError> {
    match kind {
        AllocatorKind::BundleGrd => bundle_grd(graph, budgets, selector),
        AllocatorKind::ItemDisj => item_disj(graph, budgets, selector),
        AllocatorKind::BundleDisj => bundle_disj(graph, model, budgets, selector),
    }
}

fn write_allocation(
    out: &mut dyn Write,
    exp: &Experiment,
    alloc: &Allocation,
    kind: AllocatorKind,
) -> Result<(), CliError> {
    let c = &exp.config;
    comment_line(
        out,
        Some(c.seed),
        &format!(
            " allocator={} epsilon={} ell={}",
            kind.name(),
            c.epsilon,
            c.ell
        ),
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "item"])?;
    for (v, i) in alloc.pairs() {
        w.write_record([exp.graph.label(v), &exp.model.names()[i]])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_allocate(
    g: &GlobalOpts,
    config: &Path,
    allocator: Option<AllocatorKind>,
    path: Option<&Path>,
    meta: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let exp = Experiment::load(config, g)?;
    let kind = allocator.unwrap_or(exp.config.allocator);
    let selector = RecordingSelector {
        inner: PrimaSelector {
            params: exp.params(),
            seed: exp.config.seed,
        },
        calls: RefCell::new(Vec::new()),
    };
    let start = Instant::now();
    let alloc = run_allocator(kind, &exp.graph, &exp.model, &exp.config.budgets, &selector)?;
    let wall = start.elapsed();
    let violations = validate_allocation(&alloc, &exp.config.budgets, exp.graph.num_nodes());
    if let Some(v) = violations.first() {
        return Err(invalid(format!(
            "allocator produced an invalid allocation: {v}"
        )));
    }

    let target = path
        .map(Path::to_path_buf)
        .or_else(|| exp.config.output.as_ref().map(|p| exp.base_dir.join(p)));
    match &target {
        Some(p) => {
            let mut f = io::BufWriter::new(fs::File::create(p)?);
            write_allocation(&mut f, &exp, &alloc, kind)?;
            f.flush()?;
        }
        None => write_allocation(out, &exp, &alloc, kind)?,
    }

    let calls = selector.calls.borrow();
    let theta: Vec<String> = calls.iter().map(|(t, _)| format!("{t:.3}")).collect();
    let rr: Vec<String> = calls.iter().map(|(_, r)| r.to_string()).collect();
    let record = format!(
        "seed = {}\nallocator = \"{}\"\nepsilon = {}\nell = {}\ntheta = [{}]\nrr_sets = [{}]\nwall_ms = {:.3}\n",
        exp.config.seed,
        kind.name(),
        exp.config.epsilon,
        exp.config.ell,
        theta.join(", "),
        rr.join(", "),
        wall.as_secs_f64() * 1e3
    );
    match meta {
        Some(p) => fs::write(p, record)?,
        None => eprint!("{record}"),
    }
    Ok(())
}

/// Reads a `node,item` CSV written by `allocate`.
pub fn read_allocation(path: &Path, exp: &Experiment) -> Result<Allocation, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["node", "item"] {
        return Err(invalid(format!(
            "{}: expected header `node,item`",
            path.display()
        )));
    }
    let mut pairs = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v = exp
            .graph
            .node_by_label(&rec[0])
            .ok_or_else(|| invalid(format!("unknown node `{}`", &rec[0])))?;
        let i = exp
            .model
            .item_by_name(&rec[1])
            .ok_or_else(|| invalid(format!("unknown item `{}`", &rec[1])))?;
        pairs.push((v, i));
    }
    let alloc = Allocation::from_pairs_unchecked(exp.config.budgets.clone(), pairs);
    let violations = validate_allocation(&alloc, &exp.config.budgets, exp.graph.num_nodes());
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(invalid(format!("{}: {}", path.display(), msgs.join("; "))));
    }
    Ok(alloc)
}

fn cmd_estimate(
    g: &GlobalOpts,
    config: &Path,
    allocation: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let exp = Experiment::load(config, g)?;
    let alloc = read_allocation(allocation, &exp)?;
    let est = estimate_welfare(
        &exp.graph,
        &exp.model,
        &alloc,
        exp.config.mc_runs,
        exp.config.seed,
        None,
    )
    .map_err(invalid)?;
    comment_line(out, Some(exp.config.seed), "")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mean", "stderr", "mc_runs", "seed"])?;
    w.write_record([
        est.mean.to_string(),
        est.stderr.to_string(),
        est.runs.to_string(),
        exp.config.seed.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// Model plus optional budgets and seed from either source.
fn model_from(
    g: &GlobalOpts,
    src: &ModelSource,
) -> Result<(UtilityModel, Vec<usize>, Option<u64>), CliError> {
    match (&src.config, &src.model) {
        (Some(c), None) => {
            let origin = c.display().to_string();
            let mut cfg = parse_experiment(&read_to_string(c)?, &origin)?;
            g.apply(&mut cfg);
            let base = c.parent().map(Path::to_path_buf).unwrap_or_default();
            let model = match (&cfg.model_path, &cfg.model) {
                (Some(p), None) => load_model(&base.join(p))?,
                (None, Some(m)) => m.build()?,
                _ => {
                    return Err(invalid(format!(
                        "{origin}: give exactly one of `model_path` or `[model]`"
                    )))
                }
            };
            Ok((model, cfg.budgets, Some(cfg.seed)))
        }
        (None, Some(m)) => Ok((load_model(m)?, Vec::new(), g.seed)),
        _ => Err(CliError::Usage(
            "give exactly one of --config or --model".into(),
        )),
    }
}

fn cmd_blocks(
    g: &GlobalOpts,
    src: &ModelSource,
    budgets: &[usize],
    noise_seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let (model, cfg_budgets, seed) = model_from(g, src)?;
    let budgets = if budgets.is_empty() {
        cfg_budgets
    } else {
        budgets.to_vec()
    };
    if budgets.is_empty() {
        return Err(CliError::Usage(
            "budgets required (--budgets or a config)".into(),
        ));
    }
    let w = match noise_seed {
        Some(s) => model.sample_noise_world(&mut ChaCha8Rng::seed_from_u64(s)),
        None => NoiseWorld::zero(model.num_items()),
    };
    let bs = generate_blocks(&model, &w, &budgets).map_err(invalid)?;
    let names = model.names();
    let extra = match noise_seed {
        Some(s) => format!(" noise_seed={s} istar={}", display_set(names, bs.istar)),
        None => format!(" noise=zero istar={}", display_set(names, bs.istar)),
    };
    comment_line(out, seed, &extra)?;
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record([
        "block",
        "items",
        "delta",
        "block_budget",
        "effective_budget",
        "anchor_block",
        "anchor_item",
    ])?;
    for i in 0..bs.len() {
        wr.write_record([
            (i + 1).to_string(),
            display_set(names, bs.blocks[i]),
            bs.deltas[i].to_string(),
            bs.block_budgets[i].to_string(),
            bs.effective_budgets[i].to_string(),
            (bs.anchor_blocks[i] + 1).to_string(),
            names[bs.anchor_items[i]].clone(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

fn cmd_gaps(g: &GlobalOpts, src: &ModelSource, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, _, seed) = model_from(g, src)?;
    let gaps = model.gaps_from_utilities().map_err(invalid)?;
    comment_line(out, seed, "")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["q_a_none", "q_a_b", "q_b_none", "q_b_a"])?;
    w.write_record([
        format!("{:.6}", gaps.q_a_none),
        format!("{:.6}", gaps.q_a_b),
        format!("{:.6}", gaps.q_b_none),
        format!("{:.6}", gaps.q_b_a),
    ])?;
    w.flush()?;
    Ok(())
}

fn describe_allocation(exp: &Experiment, a: &Allocation) -> String {
    let parts: Vec<String> = a
        .pairs()
        .map(|(v, i)| format!("{}:{}", exp.graph.label(v), exp.model.names()[i]))
        .collect();
    parts.join(" ")
}

fn cmd_oracle(
    g: &GlobalOpts,
    config: &Path,
    search_cap: u64,
    noise_seed: Option<u64>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let exp = Experiment::load(config, g)?;
    let w = match noise_seed {
        Some(s) => exp
            .model
            .sample_noise_world(&mut ChaCha8Rng::seed_from_u64(s)),
        None => NoiseWorld::zero(exp.model.num_items()),
    };
    let budgets = &exp.config.budgets;
    let (opt, opt_value) =
        brute_force_opt_welfare(&exp.graph, &exp.model, &w, budgets, search_cap)?;
    let greedy = bundle_grd(&exp.graph, budgets, &ExactGreedySelector)?;
    let greedy_value = crate::oracle::exact_welfare(&exp.graph, &exp.model, &w, &greedy)?;
    comment_line(out, Some(exp.config.seed), "")?;
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["strategy", "welfare", "allocation"])?;
    wr.write_record([
        "optimal",
        &opt_value.to_string(),
        &describe_allocation(&exp, &opt),
    ])?;
    wr.write_record([
        "bundle-grd-exact",
        &greedy_value.to_string(),
        &describe_allocation(&exp, &greedy),
    ])?;
    wr.flush()?;
    Ok(())
}

fn cmd_bench(
    g: &GlobalOpts,
    config: &Path,
    sweep: &[usize],
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let exp = Experiment::load(config, g)?;
    let s = exp.model.num_items();
    comment_line(
        out,
        Some(exp.config.seed),
        &format!(" allocator={}", exp.config.allocator.name()),
    )?;
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["budget", "items", "allocate_ms", "estimate_ms", "welfare"])?;
    for &b in sweep {
        if b == 0 || b > exp.graph.num_nodes() {
            return Err(invalid(format!(
                "sweep budget {b} outside 1..={}",
                exp.graph.num_nodes()
            )));
        }
        let budgets = vec![b; s];
        let selector = PrimaSelector {
            params: exp.params(),
            seed: exp.config.seed,
        };
        let t0 = Instant::now();
        let alloc = run_allocator(
            exp.config.allocator,
            &exp.graph,
            &exp.model,
            &budgets,
            &selector,
        )?;
        let t1 = Instant::now();
        let est = estimate_welfare(
            &exp.graph,
            &exp.model,
            &alloc,
            exp.config.mc_runs,
            exp.config.seed,
            None,
        )
        .map_err(invalid)?;
        let t2 = Instant::now();
        wr.write_record([
            b.to_string(),
            s.to_string(),
            format!("{:.3}", (t1 - t0).as_secs_f64() * 1e3),
            format!("{:.3}", (t2 - t1).as_secs_f64() * 1e3),
            est.mean.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub const SAMPLE_MODEL: &str = r#"schema_version = 1
complementary = true

[[items]]
name = "i1"
price = 3.0
noise = { kind = "gaussian", variance = 1.0 }

[[items]]
name = "i2"
price = 4.0
noise = { kind = "gaussian", variance = 1.0 }

[valuation]
kind = "table"
entries = [
    { items = ["i1"], value = 3.0 },
    { items = ["i2"], value = 4.0 },
    { items = ["i1", "i2"], value = 8.0 },
]
"#;

pub const SAMPLE_EXPERIMENT: &str = r#"schema_version = 1
seed = 42
model_path = "model.toml"
budgets = [10, 5]
allocator = "bundle-grd"
epsilon = 0.5
ell = 1.0
mc_runs = 1000

[graph]
path = "graph.txt"
weights = "weighted-cascade"
"#;

fn cmd_gen_config(dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    for (name, body) in [
        ("experiment.toml", SAMPLE_EXPERIMENT),
        ("model.toml", SAMPLE_MODEL),
        ("graph.txt", SAMPLE_GRAPH),
    ] {
        let p = dir.join(name);
        if p.exists() {
            return Err(invalid(format!("{} already exists", p.display())));
        }
        fs::write(&p, body)?;
        writeln!(out, "{}", p.display())?;
    }
    Ok(())
}
