//! Command-line entry point. Each subcommand reads its inputs from files,
//! writes its artifacts, and appends one line to a JSON-lines manifest.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 64 usage
//! error, 74 I/O failure.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{split_three_way, ExperimentTable, OracleOutcomes, ScalarizationWeights};
use crate::datagen::{gen_covid_like, gen_synthetic_a, generate, SyntheticSpec};
use crate::distill_hte::{
    fit_mtdt, pairwise_effects, render_segment_bars, segment_report, ExplanationTree, LossForm,
    MtdtConfig,
};
use crate::ensemble::{
    guide_ope, guide_uniform_explore, ope_ips, Constituent, ExploreConfig, ExploreCredit, OpeConfig,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_reports, pehe, regret, render_aggregate, subgroup_variances, true_effects,
    true_policy_value, MetricsReport,
};
use crate::io::{
    oracle_path_for, read_json, read_oracle, read_predictions, read_table, write_json,
    write_oracle, write_predictions, write_table, write_text,
};
use crate::policy::{Policy, PolicyModel};
use crate::policy_greedy::{distill_policy, greedy_tree_search, GreedyConfig};
use crate::policy_no_hte::{fit_no_hte_greedy, fit_no_hte_iterative, NoHteConfig};
use crate::teacher::{fit_tlearner, naive_hte_policy, predict_potential, TLearnerModel, TeacherConfig};
use crate::tree::{fmt_threshold, render_if_else, unroll_tree};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_IO: i32 = 74;

#[derive(Debug, Parser)]
#[command(name = "hte-policy", version, about = "Interpretable treatment policies from experiments and HTE models")]
struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true, env = "HTE_POLICY_THREADS")]
    threads: Option<usize>,
    /// Manifest file; defaults to `manifest.jsonl` beside the first output.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a synthetic experiment and its oracle outcomes.
    Datagen(DatagenArgs),
    /// Split a table into train, validation and test parts.
    Split(SplitArgs),
    /// Fit a T-learner teacher.
    Teach(TeachArgs),
    /// Predict potential outcomes with a teacher.
    Predict(PredictArgs),
    /// Distill explanation trees from predicted effects.
    Explain(ExplainArgs),
    /// Learn a policy.
    Learn(LearnArgs),
    /// Combine policies with a guidance tree.
    Ensemble(EnsembleArgs),
    /// Compute regret, value, PEHE and subgroup variances.
    Evaluate(EvaluateArgs),
    /// Estimate a policy's value by inverse propensity scoring.
    Ope(OpeArgs),
    /// Aggregate metric reports into a mean ± sd table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Generator {
    SyntheticA,
    CovidLike,
}

#[derive(Debug, Args, Serialize)]
struct DatagenArgs {
    #[arg(long, value_enum, default_value = "synthetic-a")]
    generator: Generator,
    /// TOML generator spec; replaces --generator, --n and --seed.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = crate::data::DEFAULT_TEST_FRAC)]
    test_frac: f64,
    #[arg(long, default_value_t = crate::data::DEFAULT_VAL_FRAC_OF_REST)]
    val_frac: f64,
}

#[derive(Debug, Args, Serialize)]
struct TeachArgs {
    #[arg(long)]
    train: PathBuf,
    /// TOML teacher config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ExplainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Treated arm to contrast with control; all arms when omitted.
    #[arg(long)]
    contrast: Option<usize>,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Grow until no split lowers the loss; overrides --depth.
    #[arg(long)]
    unlimited_depth: bool,
    #[arg(long, default_value_t = 10)]
    n_min: usize,
    /// Use all rows for both structure and estimates.
    #[arg(long)]
    no_honest: bool,
    #[arg(long, default_value_t = 0.95)]
    ci_level: f64,
    /// Square the weighted residual sum instead of summing squares.
    #[arg(long)]
    literal_loss: bool,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum LearnMethod {
    GreedyHte,
    DistillPolicy,
    NoHteGreedy,
    NoHteIterative,
}

#[derive(Debug, Args, Serialize)]
struct LearnArgs {
    #[arg(long, value_enum)]
    method: LearnMethod,
    #[arg(long)]
    input: PathBuf,
    /// Required by greedy-hte and distill-policy.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 1)]
    min_leaf: usize,
    #[arg(long, default_value_t = 25)]
    min_arm_per_child: usize,
    #[arg(long, default_value_t = 3)]
    iterations: usize,
    #[arg(long)]
    default_arm: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    weights: Option<Vec<f64>>,
    /// Policy JSON; the text rendering goes beside it with a `.txt` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum EnsembleMethod {
    GuideExplore,
    GuideOpe,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CreditArg {
    AllPolicies,
    ExploredOnly,
}

#[derive(Debug, Args, Serialize)]
struct EnsembleArgs {
    #[arg(long, value_enum)]
    method: EnsembleMethod,
    /// Validation table the ensemble is learned on.
    #[arg(long)]
    input: PathBuf,
    /// Required by guide-explore.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Constituent policy as `path` or `name=path`; repeat for each.
    #[arg(long = "policy", required = true)]
    policies: Vec<String>,
    /// Guidance depth; 2 for guide-explore and 1 for guide-ope by default.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "all-policies")]
    credit: CreditArg,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Explanation tree JSON for PEHE and subgroup variances.
    #[arg(long)]
    explanation: Option<PathBuf>,
    /// Oracle CSV; defaults to the table's `.oracle.csv` sibling.
    #[arg(long)]
    oracle: Option<PathBuf>,
    /// Predicted outcomes for PEHE when no explanation tree is given.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    contrast: usize,
    /// Method label in the report; defaults to the policy file stem.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct OpeArgs {
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    /// Metric report JSON files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Text table output; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Aggregated rows as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ManifestLine<'a> {
    command: &'a str,
    inputs: Vec<String>,
    config_hash: String,
    seed: Option<u64>,
    outputs: Vec<String>,
}

/// Files touched by one run.
#[derive(Default)]
struct Artifacts {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
}

impl Artifacts {
    fn read(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    fn wrote(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
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
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return EXIT_INVALID;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                EXIT_IO
            } else {
                EXIT_INVALID
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let mut art = Artifacts::default();
    let name = match &cli.command {
        Command::Datagen(a) => {
            datagen(a, &mut art)?;
            "datagen"
        }
        Command::Split(a) => {
            split(a, &mut art)?;
            "split"
        }
        Command::Teach(a) => {
            teach(a, &mut art)?;
            "teach"
        }
        Command::Predict(a) => {
            predict(a, &mut art)?;
            "predict"
        }
        Command::Explain(a) => {
            explain(a, &mut art)?;
            "explain"
        }
        Command::Learn(a) => {
            learn(a, &mut art)?;
            "learn"
        }
        Command::Ensemble(a) => {
            ensemble(a, &mut art)?;
            "ensemble"
        }
        Command::Evaluate(a) => {
            evaluate(a, &mut art)?;
            "evaluate"
        }
        Command::Ope(a) => {
            ope(a, &mut art)?;
            "ope"
        }
        Command::Report(a) => {
            report(a, &mut art)?;
            "report"
        }
    };
    append_manifest(cli, name, &art)
}

fn config_hash(command: &Command) -> Result<String> {
    let json = serde_json::to_vec(command).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(&json)))
}

fn append_manifest(cli: &Cli, name: &str, art: &Artifacts) -> Result<()> {
    let path = match (&cli.manifest, art.outputs.first()) {
        (Some(p), _) => p.clone(),
        (None, Some(first)) => first
            .parent()
            .map_or_else(|| PathBuf::from("manifest.jsonl"), |d| d.join("manifest.jsonl")),
        (None, None) => return Ok(()),
    };
    let show = |ps: &[PathBuf]| ps.iter().map(|p| p.display().to_string()).collect();
    let line = ManifestLine {
        command: name,
        inputs: show(&art.inputs),
        config_hash: config_hash(&cli.command)?,
        seed: art.seed,
        outputs: show(&art.outputs),
    };
    let text = serde_json::to_string(&line).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{text}").map_err(|e| Error::io(&path, e))
}

fn weights_for(w: &Option<Vec<f64>>, n_outcomes: usize) -> Result<ScalarizationWeights> {
    let given = w.clone().map(ScalarizationWeights::new).transpose()?;
    ScalarizationWeights::resolve(given.as_ref(), n_outcomes)
}

fn load_table(p: &Path, art: &mut Artifacts) -> Result<ExperimentTable> {
    art.read(p);
    read_table(p)
}

fn text_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("txt")
}

fn datagen(a: &DatagenArgs, art: &mut Artifacts) -> Result<()> {
    let (table, oracle) = match &a.config {
        Some(c) => {
            art.read(c);
            let text = std::fs::read_to_string(c).map_err(|e| Error::io(c, e))?;
            let spec = SyntheticSpec::from_toml(&text)?;
            art.seed = Some(spec.seed);
            generate(&spec)?
        }
        None => {
            art.seed = Some(a.seed);
            match a.generator {
                Generator::SyntheticA => gen_synthetic_a(a.n, a.seed)?,
                Generator::CovidLike => gen_covid_like(a.n, a.seed)?,
            }
        }
    };
    let oracle_path = oracle_path_for(&a.out);
    write_table(&a.out, &table)?;
    art.wrote(&a.out);
    write_oracle(&oracle_path, &oracle)?;
    art.wrote(&oracle_path);
    Ok(())
}

fn split(a: &SplitArgs, art: &mut Artifacts) -> Result<()> {
    art.seed = Some(a.seed);
    let table = load_table(&a.input, art)?;
    let bundle = split_three_way(&table, a.test_frac, a.val_frac, a.seed)?;
    let oracle_in = oracle_path_for(&a.input);
    let oracle = if oracle_in.exists() {
        art.read(&oracle_in);
        let o = read_oracle(&oracle_in)?;
        o.check_against(&table)?;
        Some(o)
    } else {
        None
    };
    let parts = [
        ("train", &bundle.train, &bundle.indices.train),
        ("validation", &bundle.validation, &bundle.indices.validation),
        ("test", &bundle.test, &bundle.indices.test),
    ];
    for (name, part, rows) in parts {
        let path = a.out_dir.join(format!("{name}.csv"));
        write_table(&path, part)?;
        art.wrote(&path);
        if let Some(o) = &oracle {
            let op = oracle_path_for(&path);
            write_oracle(&op, &o.select(rows)?)?;
            art.wrote(&op);
        }
    }
    let idx = a.out_dir.join("split.json");
    write_json(&idx, &bundle.indices)?;
    art.wrote(&idx);
    Ok(())
}

fn teach(a: &TeachArgs, art: &mut Artifacts) -> Result<()> {
    let mut cfg = match &a.config {
        Some(c) => {
            art.read(c);
            let text = std::fs::read_to_string(c).map_err(|e| Error::io(c, e))?;
            toml::from_str::<TeacherConfig>(&text).map_err(|e| Error::config(e.to_string()))?
        }
        None => TeacherConfig::default(),
    };
    if let Some(v) = a.n_trees {
        cfg.n_trees = v;
    }
    if let Some(v) = a.max_depth {
        cfg.max_depth = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.min_leaf {
        cfg.min_leaf = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    art.seed = Some(cfg.seed);
    let table = load_table(&a.train, art)?;
    let model = fit_tlearner(&table, &cfg)?;
    write_json(&a.out, &model)?;
    art.wrote(&a.out);
    Ok(())
}

fn predict(a: &PredictArgs, art: &mut Artifacts) -> Result<()> {
    art.read(&a.model);
    let model: TLearnerModel = read_json(&a.model)?;
    let table = load_table(&a.input, art)?;
    if model.feature_names != table.feature_names() {
        return Err(Error::dim(format!(
            "model features {:?} differ from table features {:?}",
            model.feature_names,
            table.feature_names()
        )));
    }
    let preds = predict_potential(&model, table.features())?;
    write_predictions(&a.out, &preds)?;
    art.wrote(&a.out);
    Ok(())
}

fn render_explanation(tree: &ExplanationTree) -> String {
    render_if_else(&tree.tree.root, &tree.tree.feature_names, &|l| {
        let parts: Vec<String> = l
            .effect
            .iter()
            .zip(&l.ci)
            .map(|(e, [lo, hi])| format!("{} [{}, {}]", fmt_threshold(*e), fmt_threshold(*lo), fmt_threshold(*hi)))
            .collect();
        format!(
            "effect {} (treated {}, control {})",
            parts.join("; "),
            l.n_treated,
            l.n_control
        )
    })
}

fn explain(a: &ExplainArgs, art: &mut Artifacts) -> Result<()> {
    art.seed = Some(a.seed);
    let table = load_table(&a.input, art)?;
    art.read(&a.predictions);
    let preds = read_predictions(&a.predictions)?;
    preds.check_against(&table)?;
    let weights = weights_for(&a.weights, table.n_outcomes())?;
    let cfg = MtdtConfig {
        max_depth: (!a.unlimited_depth).then_some(a.depth),
        n_min: a.n_min,
        honest: !a.no_honest,
        seed: a.seed,
        ci_level: a.ci_level,
        loss: if a.literal_loss { LossForm::Literal } else { LossForm::SumOfSquares },
        ..MtdtConfig::default()
    };
    let contrasts: Vec<usize> = match a.contrast {
        Some(k) => vec![k],
        None => (1..preds.n_arms()).collect(),
    };
    for k in contrasts {
        let fit = fit_mtdt(&pairwise_effects(&preds, k)?, &weights, &table, &cfg)?;
        let tree_path = a.out_dir.join(format!("explain_{k}.json"));
        write_json(&tree_path, &fit.tree)?;
        art.wrote(&tree_path);
        let segments = segment_report(&fit.tree, &table)?;
        let seg_path = a.out_dir.join(format!("segments_{k}.json"));
        write_json(&seg_path, &segments)?;
        art.wrote(&seg_path);
        let text = format!(
            "{}\n{}",
            render_explanation(&fit.tree),
            render_segment_bars(&segments, 40)
        );
        let txt_path = a.out_dir.join(format!("explain_{k}.txt"));
        write_text(&txt_path, &text)?;
        art.wrote(&txt_path);
    }
    Ok(())
}

fn learn(a: &LearnArgs, art: &mut Artifacts) -> Result<()> {
    let table = load_table(&a.input, art)?;
    let weights = weights_for(&a.weights, table.n_outcomes())?;
    let greedy_cfg = GreedyConfig {
        max_depth: a.depth,
        min_leaf: a.min_leaf,
        ..GreedyConfig::default()
    };
    let no_hte_cfg = NoHteConfig {
        max_depth: a.depth,
        min_arm_per_child: a.min_arm_per_child,
        iterations: a.iterations,
        default_arm: a.default_arm,
        ..NoHteConfig::default()
    };
    let mut segments_out = None;
    let policy: PolicyModel = match a.method {
        LearnMethod::GreedyHte | LearnMethod::DistillPolicy => {
            let Some(pp) = &a.predictions else {
                return Err(Error::config("--predictions is required for this method"));
            };
            art.read(pp);
            let preds = read_predictions(pp)?;
            preds.check_against(&table)?;
            if a.method == LearnMethod::GreedyHte {
                greedy_tree_search(&table, &preds, &weights, &greedy_cfg)?.into()
            } else {
                let labels = naive_hte_policy(&preds, &weights)?;
                distill_policy(&table, &labels, &greedy_cfg)?.into()
            }
        }
        LearnMethod::NoHteGreedy => {
            let fit = fit_no_hte_greedy(&table, &weights, &no_hte_cfg)?;
            segments_out = Some(fit.segments);
            fit.policy.into()
        }
        LearnMethod::NoHteIterative => {
            let fit = fit_no_hte_iterative(&table, &weights, &no_hte_cfg)?;
            segments_out = Some(fit.segments);
            fit.policy.into()
        }
    };
    write_json(&a.out, &policy)?;
    art.wrote(&a.out);
    let txt = text_path(&a.out);
    write_text(&txt, &policy.render(table.n_arms()))?;
    art.wrote(&txt);
    if let Some(segments) = segments_out {
        let sp = a.out.with_extension("segments.json");
        write_json(&sp, &segments)?;
        art.wrote(&sp);
    }
    Ok(())
}

fn load_constituent(spec: &str, art: &mut Artifacts) -> Result<Constituent> {
    let (id, path) = match spec.split_once('=') {
        Some((id, p)) => (id.to_string(), PathBuf::from(p)),
        None => {
            let p = PathBuf::from(spec);
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| spec.to_string());
            (id, p)
        }
    };
    art.read(&path);
    Ok(Constituent {
        id,
        policy: read_json(&path)?,
    })
}

fn ensemble(a: &EnsembleArgs, art: &mut Artifacts) -> Result<()> {
    let table = load_table(&a.input, art)?;
    let weights = weights_for(&a.weights, table.n_outcomes())?;
    let constituents = a
        .policies
        .iter()
        .map(|s| load_constituent(s, art))
        .collect::<Result<Vec<_>>>()?;
    let tree = match a.method {
        EnsembleMethod::GuideExplore => {
            art.seed = Some(a.seed);
            let Some(pp) = &a.predictions else {
                return Err(Error::config("--predictions is required for guide-explore"));
            };
            art.read(pp);
            let preds = read_predictions(pp)?;
            let cfg = ExploreConfig {
                depth: a.depth.unwrap_or(2),
                seed: a.seed,
                credit: match a.credit {
                    CreditArg::AllPolicies => ExploreCredit::AllPolicies,
                    CreditArg::ExploredOnly => ExploreCredit::ExploredOnly,
                },
                ..ExploreConfig::default()
            };
            guide_uniform_explore(&table, &preds, constituents, &weights, &cfg)?.tree
        }
        EnsembleMethod::GuideOpe => {
            let cfg = OpeConfig {
                depth: a.depth.unwrap_or(1),
                ..OpeConfig::default()
            };
            guide_ope(&table, constituents, &weights, &cfg)?
        }
    };
    let model = PolicyModel::Guidance(tree);
    write_json(&a.out, &model)?;
    art.wrote(&a.out);
    let txt = text_path(&a.out);
    write_text(&txt, &model.render(table.n_arms()))?;
    art.wrote(&txt);
    Ok(())
}

/// Row groups of a policy: tree leaves, or rule matches plus the default.
fn policy_groups(policy: &PolicyModel, table: &ExperimentTable) -> Result<Vec<Vec<usize>>> {
    let all: Vec<usize> = (0..table.n_rows()).collect();
    Ok(match policy {
        PolicyModel::Tree(t) => t.root.partition(table.features(), &all),
        PolicyModel::Guidance(g) => g.root.partition(table.features(), &all),
        PolicyModel::RuleList(r) => {
            let mut groups = vec![Vec::new(); r.rules.len() + 1];
            for i in all {
                let x = table.feature_row(i);
                let g = r
                    .rules
                    .iter()
                    .position(|rule| rule.predicate.matches(&x))
                    .unwrap_or(r.rules.len());
                groups[g].push(i);
            }
            groups
        }
    })
}

fn evaluate(a: &EvaluateArgs, art: &mut Artifacts) -> Result<()> {
    art.seed = Some(a.seed);
    if a.policy.is_none() && a.explanation.is_none() {
        return Err(Error::config("give --policy, --explanation, or both"));
    }
    let table = load_table(&a.input, art)?;
    let weights = weights_for(&a.weights, table.n_outcomes())?;
    let oracle_path = a.oracle.clone().unwrap_or_else(|| oracle_path_for(&a.input));
    let oracle: Option<OracleOutcomes> = if a.oracle.is_some() || oracle_path.exists() {
        art.read(&oracle_path);
        let o = read_oracle(&oracle_path)?;
        o.check_against(&table)?;
        Some(o)
    } else {
        None
    };
    let policy: Option<PolicyModel> = match &a.policy {
        Some(p) => {
            art.read(p);
            let m: PolicyModel = read_json(p)?;
            m.check_schema(table.n_features(), table.n_arms())?;
            Some(m)
        }
        None => None,
    };
    let explanation: Option<ExplanationTree> = match &a.explanation {
        Some(p) => {
            art.read(p);
            let t: ExplanationTree = read_json(p)?;
            t.tree.check_schema(table.n_features())?;
            Some(t)
        }
        None => None,
    };
    let method = a.method.clone().unwrap_or_else(|| {
        a.policy
            .as_ref()
            .or(a.explanation.as_ref())
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let mut report = MetricsReport::empty(method, a.seed);

    if let (Some(p), Some(o)) = (&policy, &oracle) {
        let r = regret(p, &table, o, &weights)?;
        report.regret = Some(r);
        report.regret_per_capita = Some(r / table.n_rows() as f64);
        report.value = Some(true_policy_value(p, &table, o, &weights)?);
    }

    let predicted: Option<Vec<f64>> = match (&explanation, &a.predictions) {
        (Some(t), _) => {
            let ew = &t.weights;
            Some(
                (0..table.n_rows())
                    .map(|i| ew.dot(t.predict(&table.feature_row(i)).effect.iter().copied()))
                    .collect(),
            )
        }
        (None, Some(pp)) => {
            art.read(pp);
            let preds = read_predictions(pp)?;
            preds.check_against(&table)?;
            let e = pairwise_effects(&preds, a.contrast)?;
            Some(
                e.values()
                    .rows()
                    .into_iter()
                    .map(|r| weights.dot(r.iter().copied()))
                    .collect(),
            )
        }
        (None, None) => None,
    };
    let truth = oracle
        .as_ref()
        .map(|o| true_effects(o, a.contrast, &weights))
        .transpose()?;
    if let (Some(p), Some(t)) = (&predicted, &truth) {
        report.pehe = Some(pehe(p, t)?);
    }

    let groups = match (&explanation, &policy) {
        (Some(t), _) => Some(
            unroll_tree(&t.tree, &table, &weights)?
                .into_iter()
                .map(|s| s.row_indices)
                .collect::<Vec<_>>(),
        ),
        (None, Some(p)) => Some(policy_groups(p, &table)?),
        (None, None) => None,
    };
    if let (Some(groups), Some(effects)) = (groups, truth.as_ref().or(predicted.as_ref())) {
        let per_group: Vec<Vec<f64>> = groups
            .into_iter()
            .filter(|g| !g.is_empty())
            .map(|g| g.into_iter().map(|i| effects[i]).collect())
            .collect();
        let v = subgroup_variances(&per_group)?;
        report.within_var = Some(v.within);
        report.between_var = Some(v.between);
    }

    write_json(&a.out, &report)?;
    art.wrote(&a.out);
    Ok(())
}

#[derive(Serialize)]
struct OpeReport {
    policy: String,
    n: usize,
    value: f64,
}

fn ope(a: &OpeArgs, art: &mut Artifacts) -> Result<()> {
    art.read(&a.policy);
    let policy: PolicyModel = read_json(&a.policy)?;
    let table = load_table(&a.input, art)?;
    policy.check_schema(table.n_features(), table.n_arms())?;
    let weights = weights_for(&a.weights, table.n_outcomes())?;
    let value = ope_ips(&policy as &dyn Policy, &table, &weights)?;
    println!("{value}");
    if let Some(out) = &a.out {
        write_json(
            out,
            &OpeReport {
                policy: a.policy.display().to_string(),
                n: table.n_rows(),
                value,
            },
        )?;
        art.wrote(out);
    }
    Ok(())
}

fn report(a: &ReportArgs, art: &mut Artifacts) -> Result<()> {
    let reports = a
        .inputs
        .iter()
        .map(|p| {
            art.read(p);
            read_json::<MetricsReport>(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = aggregate_reports(&reports);
    let text = render_aggregate(&rows);
    match &a.out {
        Some(p) => {
            write_text(p, &text)?;
            art.wrote(p);
        }
        None => print!("{text}"),
    }
    if let Some(p) = &a.json {
        write_json(p, &rows)?;
        art.wrote(p);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_ok(args: &[&str]) {
        let mut full = vec!["hte-policy"];
        full.extend_from_slice(args);
        assert_eq!(run(full), EXIT_OK, "{args:?}");
    }

    #[test]
    fn usage_errors_exit_64() {
        assert_eq!(run(["hte-policy", "learn", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["hte-policy", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["hte-policy", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_input_exits_74() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("p.json");
        let code = run([
            "hte-policy",
            "learn",
            "--method",
            "no-hte-greedy",
            "--input",
            dir.path().join("nope.csv").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_IO);
    }

    #[test]
    fn learn_writes_policy_and_text() {
        let dir = tempfile::tempdir().unwrap();
        let d = |f: &str| dir.path().join(f).to_string_lossy().into_owned();
        run_ok(&["datagen", "--n", "600", "--seed", "1", "--out", &d("t.csv")]);
        run_ok(&["teach", "--train", &d("t.csv"), "--n-trees", "20", "--out", &d("m.json")]);
        run_ok(&["predict", "--model", &d("m.json"), "--input", &d("t.csv"), "--out", &d("p.csv")]);
        run_ok(&[
            "learn", "--method", "greedy-hte", "--depth", "2", "--input", &d("t.csv"),
            "--predictions", &d("p.csv"), "--out", &d("g.json"),
        ]);
        let text = std::fs::read_to_string(d("g.txt")).unwrap();
        assert!(text.starts_with("If feature"), "{text}");
        let model: PolicyModel = read_json(d("g.json")).unwrap();
        assert!(matches!(model, PolicyModel::Tree(_)));
        let manifest = std::fs::read_to_string(d("manifest.jsonl")).unwrap();
        assert_eq!(manifest.lines().count(), 4);
        let last: serde_json::Value = serde_json::from_str(manifest.lines().last().unwrap()).unwrap();
        assert_eq!(last["command"], "learn");
        assert_eq!(last["config_hash"].as_str().unwrap().len(), 64);
    }
}
