//! Command-line front end.
//!
//! Settings come from built-in defaults, then an optional TOML run file
//! (`--config`), then command-line flags. Machine-readable output goes to
//! stdout or `--out`; short human summaries go to stderr.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::augment::{predict_all_legal, threshold_grid_search, NoiseOracle, ThresholdGrid};
use crate::error::{Error, Result};
use crate::hin::{
    enumerate_legal_pairs, generate_synthetic, load_graph_with_seed, load_noise, save_graph,
    save_noise, Edge, HeteroGraph, SyntheticSpec,
};
use crate::model::{GraphContext, Model};
use crate::tgd::PairSampling;
use crate::trainer::{evaluate, train, TrainConfig};
use crate::verify::{gradcheck_fixture, GradcheckOptions, TOLERANCE};

#[derive(Debug, Parser)]
#[command(
    name = "thegau",
    version,
    about = "Type-aware heterogeneous graph autoencoder"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the joint model and report per-epoch losses and test metrics.
    Train(TrainCmd),
    /// Augment the graph with a trained decoder over a threshold grid and retrain.
    AugmentTrain(AugmentCmd),
    /// Evaluate a saved model on the validation and test splits.
    Eval(EvalCmd),
    /// Write a synthetic dataset directory.
    Synth(SynthCmd),
    /// List legal type pairs and candidate-pair counts.
    InspectSchema(InspectCmd),
    /// Check every loss gradient against central finite differences.
    Gradcheck(GradcheckCmd),
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// TOML run file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset directory or synthetic spec (.toml).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Built-in synthetic preset: separable, imdb-like, ablation, noisy.
    #[arg(long, conflicts_with = "data")]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (directory for `synth`); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Include wall-clock seconds in summaries.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau_pos: Option<f64>,
    #[arg(long)]
    pub tau_neg: Option<f64>,
    /// Sample this many negatives per positive instead of scoring every pair.
    #[arg(long)]
    pub neg_ratio: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Write the best-by-validation parameters here.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Phase-1 model whose decoder scores the candidate pairs.
    #[arg(long, required_unless_present = "two_phase")]
    pub model: Option<PathBuf>,
    /// Train the phase-1 model first instead of loading one.
    #[arg(long, conflicts_with = "model")]
    pub two_phase: bool,
    #[arg(long, value_delimiter = ',')]
    pub grid_add: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub grid_rm: Option<Vec<f64>>,
    /// Grid points retrained concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Write the best phase-2 parameters here.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub model: PathBuf,
    /// Also write decoder probabilities of every legal pair as TSV.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct InspectCmd {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct GradcheckCmd {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Corrupt one backward rule; the check must then fail.
    #[arg(long)]
    pub inject_fault: bool,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub gradcheck: GradcheckConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub preset: Option<String>,
    /// Seed for synthetic generation and for splits drawn at load time.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub add: Vec<f64>,
    pub rm: Vec<f64>,
    pub jobs: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        let g = ThresholdGrid::default();
        AugmentConfig {
            add: g.add,
            rm: g.rm,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub eps: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            eps: crate::verify::DEFAULT_EPS,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn resolve(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &common.data {
            cfg.data.path = Some(p.clone());
            cfg.data.preset = None;
        }
        if let Some(p) = &common.preset {
            cfg.data.preset = Some(p.clone());
            cfg.data.path = None;
        }
        if let Some(s) = common.seed {
            cfg.data.seed = s;
            cfg.train.seed = s;
        }
        Ok(cfg)
    }

    fn apply(&mut self, f: &TrainFlags) {
        let t = &mut self.train;
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => { $(if let Some(v) = f.$flag { $field = v; })* };
        }
        set! {
            alpha => t.alpha,
            beta => t.beta,
            dim => t.model.dim,
            heads => t.model.heads,
            layers => t.model.layers,
            dropout => t.model.dropout,
            lr => t.optim.lr,
            weight_decay => t.optim.weight_decay,
            max_epochs => t.max_epochs,
            patience => t.patience,
            gamma => t.focal.gamma,
            tau_pos => t.focal.tau_pos,
            tau_neg => t.focal.tau_neg,
        }
        if let Some(r) = f.neg_ratio {
            t.sampling = PairSampling::Sampled { ratio: r };
        }
    }
}

/// A loaded or generated graph and its known noise edges, when available.
pub struct Dataset {
    pub graph: HeteroGraph,
    pub noise: Option<HashSet<Edge>>,
}

pub fn load_dataset(data: &DataConfig) -> Result<Dataset> {
    let synth = |spec: &SyntheticSpec| -> Result<Dataset> {
        let s = generate_synthetic(spec, data.seed)?;
        let noise = Some(s.noise_set());
        Ok(Dataset {
            graph: s.graph,
            noise,
        })
    };
    match (&data.path, &data.preset) {
        (_, Some(name)) => {
            let spec = SyntheticSpec::preset(name)
                .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
            synth(&spec)
        }
        (Some(p), None) if p.is_dir() => {
            let graph = load_graph_with_seed(p, data.seed)?;
            let noise = load_noise(&graph, p)?;
            Ok(Dataset { graph, noise })
        }
        (Some(p), None) => synth(&SyntheticSpec::load(p)?),
        (None, None) => Err(Error::Config("no dataset: pass --data or --preset".into())),
    }
}

fn open_out(path: Option<&Path>) -> Result<Option<BufWriter<File>>> {
    path.map(|p| {
        File::create(p)
            .map(BufWriter::new)
            .map_err(|e| Error::io(p, e))
    })
    .transpose()
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

/// Runs one command, writing machine-readable output to `stdout` unless
/// `--out` redirects it.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(c) => cmd_train(c, stdout),
        Command::AugmentTrain(c) => cmd_augment_train(c, stdout),
        Command::Eval(c) => cmd_eval(c, stdout),
        Command::Synth(c) => cmd_synth(c, stdout),
        Command::InspectSchema(c) => cmd_inspect_schema(c, stdout),
        Command::Gradcheck(c) => cmd_gradcheck(c, stdout),
    }
}

fn with_out<T>(
    common: &Common,
    stdout: &mut dyn Write,
    f: impl FnOnce(&mut dyn Write) -> Result<T>,
) -> Result<T> {
    match open_out(common.out.as_deref())? {
        Some(mut file) => {
            let r = f(&mut file)?;
            file.flush().map_err(io_err)?;
            Ok(r)
        }
        None => f(stdout),
    }
}

fn cmd_train(c: TrainCmd, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::resolve(&c.common)?;
    cfg.apply(&c.train);
    cfg.train.validate()?;
    let data = load_dataset(&cfg.data)?;
    let (model, report) = train(&data.graph, &cfg.train)?;
    with_out(&c.common, stdout, |w| {
        report.write_jsonl(w, c.common.timing)
    })?;
    if let Some(p) = &c.save_model {
        model.save(p)?;
    }
    eprintln!(
        "best epoch {}  test Macro-F1 {:.4}  Micro-F1 {:.4}",
        report.best_epoch, report.test.macro_f1, report.test.micro_f1
    );
    Ok(())
}

#[derive(Serialize)]
struct AugmentSummary {
    thr_add: f64,
    thr_rm: f64,
    added: usize,
    removed: usize,
    best_epoch: usize,
    test_macro: f64,
    test_micro: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seconds: Option<f64>,
}

fn cmd_augment_train(c: AugmentCmd, stdout: &mut dyn Write) -> Result<()> {
    let start = std::time::Instant::now();
    let mut cfg = RunConfig::resolve(&c.common)?;
    cfg.apply(&c.train);
    if let Some(a) = &c.grid_add {
        cfg.augment.add = a.clone();
    }
    if let Some(r) = &c.grid_rm {
        cfg.augment.rm = r.clone();
    }
    if let Some(j) = c.jobs {
        cfg.augment.jobs = j;
    }
    cfg.train.validate()?;
    let grid = ThresholdGrid {
        add: cfg.augment.add.clone(),
        rm: cfg.augment.rm.clone(),
    };
    grid.points()?;
    let data = load_dataset(&cfg.data)?;
    let graph = &data.graph;
    let model = match &c.model {
        Some(p) if !c.two_phase => Model::load(p, &GraphContext::new(graph), &cfg.train.model)?,
        _ => train(graph, &cfg.train)?.0,
    };
    let preds = predict_all_legal(&model, graph)?;
    let oracle = data.noise.map(|noise| NoiseOracle { noise });
    let search = threshold_grid_search(
        graph,
        &preds,
        &cfg.train,
        &grid,
        oracle.as_ref(),
        cfg.augment.jobs,
    )?;
    let best = search.best_row();
    let report = &search.outcome.report;
    let summary = AugmentSummary {
        thr_add: best.thr_add,
        thr_rm: best.thr_rm,
        added: best.added,
        removed: best.removed,
        best_epoch: report.best_epoch,
        test_macro: report.test.macro_f1,
        test_micro: report.test.micro_f1,
        seconds: c.common.timing.then(|| start.elapsed().as_secs_f64()),
    };
    with_out(&c.common, stdout, |w| {
        search.write_tsv(&mut *w)?;
        writeln!(
            w,
            "{}",
            serde_json::to_string(&summary).expect("plain struct")
        )
        .map_err(io_err)
    })?;
    if let Some(p) = &c.save_model {
        search.outcome.model.save(p)?;
    }
    eprintln!(
        "policy add {} rm {}  (+{} / -{} edges)  test Macro-F1 {:.4}  Micro-F1 {:.4}",
        best.thr_add, best.thr_rm, best.added, best.removed, summary.test_macro, summary.test_micro
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    valid_macro: f64,
    valid_micro: f64,
    test_macro: f64,
    test_micro: f64,
}

fn cmd_eval(c: EvalCmd, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::resolve(&c.common)?;
    cfg.apply(&c.train);
    cfg.train.model.validate()?;
    let data = load_dataset(&cfg.data)?;
    let graph = &data.graph;
    let ctx = GraphContext::new(graph);
    let model = Model::load(&c.model, &ctx, &cfg.train.model)?;
    let s = graph.splits();
    let valid = evaluate(&model, graph, &ctx, &s.valid)?;
    let test = evaluate(&model, graph, &ctx, &s.test)?;
    let summary = EvalSummary {
        valid_macro: valid.macro_f1,
        valid_micro: valid.micro_f1,
        test_macro: test.macro_f1,
        test_micro: test.micro_f1,
    };
    with_out(&c.common, stdout, |w| {
        writeln!(
            w,
            "{}",
            serde_json::to_string(&summary).expect("plain struct")
        )
        .map_err(io_err)
    })?;
    if let Some(p) = &c.predictions {
        let mut f = open_out(Some(p))?.expect("path given");
        model.predict_edges(&ctx)?.write_tsv(graph, &mut f)?;
        f.flush().map_err(io_err)?;
    }
    eprintln!(
        "test Macro-F1 {:.4}  Micro-F1 {:.4}",
        test.macro_f1, test.micro_f1
    );
    Ok(())
}

fn cmd_synth(c: SynthCmd, stdout: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::resolve(&c.common)?;
    let dir = c
        .common
        .out
        .as_ref()
        .ok_or_else(|| Error::Config("synth needs --out <dir>".into()))?;
    let spec = match (&cfg.data.preset, &cfg.data.path) {
        (Some(name), _) => SyntheticSpec::preset(name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?,
        (None, Some(p)) => SyntheticSpec::load(p)?,
        (None, None) => {
            return Err(Error::Config(
                "synth needs --preset or --data <spec.toml>".into(),
            ))
        }
    };
    let synth = generate_synthetic(&spec, cfg.data.seed)?;
    save_graph(&synth.graph, dir)?;
    save_noise(&synth, dir)?;
    writeln!(
        stdout,
        "{}",
        serde_json::json!({
            "nodes": synth.graph.num_nodes(),
            "edges": synth.graph.num_edges(),
            "noise_edges": synth.noise_edges.len(),
        })
    )
    .map_err(io_err)?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn cmd_inspect_schema(c: InspectCmd, stdout: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::resolve(&c.common)?;
    let data = load_dataset(&cfg.data)?;
    let g = &data.graph;
    let s = g.schema();
    let pairs = enumerate_legal_pairs(g);
    with_out(&c.common, stdout, |w| {
        writeln!(w, "type_u\ttype_v\tedge_types\tn_u\tn_v\tcandidates\tedges").map_err(io_err)?;
        for b in pairs.blocks() {
            let names: Vec<&str> = b
                .edge_types
                .iter()
                .map(|&r| s.edge_types()[r].name.as_str())
                .collect();
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.node_types()[b.type_u],
                s.node_types()[b.type_v],
                names.join(","),
                b.n_u,
                b.n_v,
                b.len(),
                b.positives()
            )
            .map_err(io_err)?;
        }
        let n = g.num_nodes();
        writeln!(
            w,
            "# total\t{}\tall_pairs\t{}",
            pairs.total_candidates(),
            n * n
        )
        .map_err(io_err)
    })?;
    eprintln!(
        "{} legal type pairs, {} candidates of {} node pairs",
        pairs.num_blocks(),
        pairs.total_candidates(),
        g.num_nodes() * g.num_nodes()
    );
    Ok(())
}

fn cmd_gradcheck(c: GradcheckCmd, stdout: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::resolve(&c.common)?;
    let opts = GradcheckOptions {
        eps: c.eps.unwrap_or(cfg.gradcheck.eps),
        seed: cfg.train.seed,
        inject_fault: c.inject_fault,
        ..GradcheckOptions::default()
    };
    let errors = gradcheck_fixture(&opts)?;
    with_out(&c.common, stdout, |w| {
        writeln!(w, "term\tmax_rel_error").map_err(io_err)?;
        for e in &errors {
            writeln!(w, "{}\t{:e}", e.term.name(), e.max_rel_error).map_err(io_err)?;
        }
        Ok(())
    })?;
    let worst = errors.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    if worst >= TOLERANCE {
        return Err(Error::Verification(format!(
            "max relative error {worst:e} exceeds {TOLERANCE:e}"
        )));
    }
    eprintln!("all loss terms within {TOLERANCE:e}");
    Ok(())
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
