//! Command-line pipeline. Each subcommand reads and writes files; JSON and
//! CSV go to files or stdout, human-readable summaries to stderr.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::align::{error_counts, levenshtein_align, EditWeights, ErrorCounts};
use crate::birnn::{gradient_check, BiRnnModel, CellKind, Example, ModelConfig};
use crate::calibrate::{MapKind, PiecewiseMap, DEFAULT_BINS};
use crate::corpus::{read_corpus, write_corpus, LabeledUtterance, Targets};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::io::{read_json, write_atomic, write_json, write_string_atomic};
use crate::pipeline::{
    attach_targets, calibrated_predictions, evaluate, train_calibration, train_estimator, Estimator, PipelineConfig,
};
use crate::select::{fit_discount, fit_thresholds, rank_and_curve, DiscountGrid, DiscountParams, Scheme, ThresholdGrid, Thresholds};
use crate::simgen::{generate, preset, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "confdel", version, about = "Word confidence and deletion estimation for recogniser output")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Simulate(SimulateArgs),
    /// Align hypotheses to references and attach training targets.
    Align(AlignArgs),
    /// Fit a monotone calibration map for raw posteriors.
    TrainCalib(TrainCalibArgs),
    /// Train the full estimator (calibration, LM, embeddings, BiRNN).
    TrainBirnn(TrainBirnnArgs),
    /// Attach predictions from a trained estimator or calibration map.
    Predict(PredictArgs),
    /// Score predictions against targets.
    Evaluate(EvaluateArgs),
    /// Rank utterances and write the selection curve.
    Select(SelectArgs),
    /// Grid-search thresholds for the WER-estimate scheme.
    FitThresholds(FitArgs),
    /// Grid-search deletion discount coefficients.
    FitDiscount(FitArgs),
    /// Compare analytic and finite-difference gradients on a small model.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON simulation config; fields left out take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from a named preset (matched, mismatched) instead.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_utts: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    #[arg(long, default_value_t = 10)]
    pub sub_cost: u32,
    #[arg(long, default_value_t = 7)]
    pub del_cost: u32,
    #[arg(long, default_value_t = 7)]
    pub ins_cost: u32,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-utterance error counts as CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub weights: WeightArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MapKindArg {
    Step,
    Linear,
}

impl From<MapKindArg> for MapKind {
    fn from(k: MapKindArg) -> Self {
        match k {
            MapKindArg::Step => MapKind::Step,
            MapKindArg::Linear => MapKind::Linear,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainCalibArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, value_enum, default_value_t = MapKindArg::Linear)]
    pub kind: MapKindArg,
}

#[derive(Debug, Args)]
pub struct TrainBirnnArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss history as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// JSON pipeline config; the flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Train the confidence head only.
    #[arg(long)]
    pub no_deletions: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Estimator written by train-birnn.
    #[arg(long, conflicts_with = "calib")]
    pub model: Option<PathBuf>,
    /// Calibration map written by train-calib. With neither option the raw
    /// posteriors are copied.
    #[arg(long)]
    pub calib: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Confidence,
    Discount,
    Threshold,
    Oracle,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Ranked utterance ids, one per line.
    #[arg(long)]
    pub out: PathBuf,
    /// Selection curve CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SchemeArg::Confidence)]
    pub scheme: SchemeArg,
    /// Parameter JSON from fit-discount or fit-thresholds.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub theta_d: Option<f64>,
    #[arg(long)]
    pub theta_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON grid; the default grid is used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CellArg {
    Lstm,
    Vanilla,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 6)]
    pub input_dim: usize,
    #[arg(long, value_enum, default_value_t = CellArg::Lstm)]
    pub cell: CellArg,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid("output", e.to_string()))?;
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
            Ok(())
        }
    }
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(p), _) => read_json::<SimConfig>(p)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => SimConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.n_utts {
        cfg.n_utts = n;
    }
    let corpus = generate(&cfg)?;
    write_corpus(&corpus, &args.out)?;
    eprintln!("simulate: wrote {} utterances to {}", corpus.len(), args.out.display());
    Ok(())
}

fn align(args: &AlignArgs) -> Result<()> {
    let weights = EditWeights::new(args.weights.sub_cost, args.weights.del_cost, args.weights.ins_cost)?;
    let mut corpus = read_corpus(&args.input)?;
    attach_targets(&mut corpus, &weights)?;
    let per_utt: Vec<ErrorCounts> = corpus
        .iter()
        .map(|u| {
            let reference = u.reference.as_ref().expect("checked by attach_targets");
            error_counts(&levenshtein_align(&u.utterance.tokens(), reference, weights))
        })
        .collect();
    let total: ErrorCounts = per_utt.iter().copied().sum();
    if let Some(path) = &args.summary {
        write_atomic(path, |f| {
            let mut w = BufWriter::new(f);
            writeln!(w, "id,ref_words,cor,sub,del,ins,wer")?;
            for (u, c) in corpus.iter().zip(&per_utt).map(|(u, c)| (u.id(), *c)).chain([("TOTAL", total)]) {
                let wer = c.wer().map_or(String::new(), |x| x.to_string());
                writeln!(w, "{},{},{},{},{},{},{}", u, c.reference_len(), c.cor, c.sub, c.del, c.ins, wer)?;
            }
            w.flush()?;
            Ok(())
        })?;
    }
    write_corpus(&corpus, &args.out)?;
    let n = total.reference_len().max(1) as f64;
    eprintln!(
        "align: {} utterances, {} reference words, WER {:.2}% (sub {:.2}%, del {:.2}%, ins {:.2}%)",
        corpus.len(),
        total.reference_len(),
        100.0 * total.errors() as f64 / n,
        100.0 * total.sub as f64 / n,
        100.0 * total.del as f64 / n,
        100.0 * total.ins as f64 / n,
    );
    Ok(())
}

fn train_calib(args: &TrainCalibArgs) -> Result<()> {
    let mut corpus = read_corpus(&args.input)?;
    ensure_targets(&mut corpus)?;
    let map = train_calibration(&corpus, args.bins, args.kind.into())?;
    write_json(&args.out, &map)?;
    eprintln!("train-calib: {} cells", map.values.len());
    Ok(())
}

fn write_history(path: &Path, history: &[crate::birnn::EpochStats]) -> Result<()> {
    write_atomic(path, |f| {
        let mut w = BufWriter::new(f);
        writeln!(w, "epoch,mean_loss,l2_penalty")?;
        for h in history {
            writeln!(w, "{},{},{}", h.epoch, h.mean_loss, h.l2_penalty)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn train_birnn(args: &TrainBirnnArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => read_json::<PipelineConfig>(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.train.seed = v;
        cfg.embedding_seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.hidden_dim {
        cfg.train.hidden_dim = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = args.l2 {
        cfg.train.l2 = v;
    }
    if let Some(v) = args.embedding_dim {
        cfg.embedding_dim = v;
    }
    if args.no_deletions {
        cfg.predict_deletions = false;
    }
    let mut corpus = read_corpus(&args.input)?;
    ensure_targets(&mut corpus)?;
    let (est, history) = train_estimator(&corpus, &cfg)?;
    write_string_atomic(&args.out, &(est.to_json()? + "\n"))?;
    if let Some(p) = &args.history {
        write_history(p, &history)?;
    }
    for h in &history {
        eprintln!("train-birnn: epoch {} mean loss {:.5}", h.epoch, h.mean_loss);
    }
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<()> {
    let mut corpus = read_corpus(&args.input)?;
    if let Some(p) = &args.model {
        let est = Estimator::from_json(&std::fs::read_to_string(p)?)?;
        for u in &mut corpus {
            u.predictions = Some(est.predict(u)?);
        }
    } else if let Some(p) = &args.calib {
        let map: PiecewiseMap = read_json(p)?;
        map.validate()?;
        for u in &mut corpus {
            u.predictions = Some(calibrated_predictions(u, &map));
        }
    } else {
        for u in &mut corpus {
            u.predictions = Some(crate::corpus::Predictions::confidence_only(u.utterance.raw_posteriors()));
        }
    }
    write_corpus(&corpus, &args.out)?;
    eprintln!("predict: {} utterances", corpus.len());
    Ok(())
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let mut corpus = read_corpus(&args.input)?;
    ensure_targets(&mut corpus)?;
    let report = evaluate(&corpus)?;
    eprintln!(
        "evaluate: {} words, NCE {:.4}, AUC {:.4}",
        report.words, report.nce, report.roc_auc
    );
    emit_json(args.out.as_deref(), &report)
}

fn scheme_from(args: &SelectArgs) -> Result<Scheme> {
    let needs = |what: &str| Error::invalid("select", format!("{what} scheme needs --params or thresholds"));
    Ok(match args.scheme {
        SchemeArg::Confidence => Scheme::Confidence,
        SchemeArg::Oracle => Scheme::Oracle,
        SchemeArg::Discount => {
            let params = match (&args.params, args.theta_d, args.theta_s) {
                (Some(p), None, None) => read_json::<DiscountParams>(p)?,
                (None, Some(d), Some(s)) => DiscountParams { theta_d: d, theta_s: s },
                _ => return Err(needs("discount")),
            };
            Scheme::Discount(params)
        }
        SchemeArg::Threshold => match &args.params {
            Some(p) => Scheme::Threshold(read_json::<Thresholds>(p)?),
            None => return Err(needs("threshold")),
        },
    })
}

fn select(args: &SelectArgs) -> Result<()> {
    let scheme = scheme_from(args)?;
    let corpus = read_corpus(&args.input)?;
    let result = rank_and_curve(&corpus, &scheme)?;
    let ids = result.ids.join("\n") + "\n";
    if let Some(path) = &args.curve {
        write_atomic(path, |f| {
            let mut w = BufWriter::new(f);
            result.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        })?;
    }
    write_string_atomic(&args.out, &ids)?;
    let row = result.row_at(0.25);
    match row.true_counts {
        Some(c) => eprintln!(
            "select: 25% prefix true WER {:.2}% ({} deletions)",
            100.0 * c.wer().unwrap_or(f64::NAN),
            c.del
        ),
        None => eprintln!("select: 25% prefix estimated WER {:.2}%", 100.0 * row.est_wer),
    }
    Ok(())
}

fn fit_thresholds_cmd(args: &FitArgs) -> Result<()> {
    let grid = match &args.config {
        Some(p) => read_json::<ThresholdGrid>(p)?,
        None => ThresholdGrid::default(),
    };
    let corpus = read_corpus(&args.input)?;
    let fit = fit_thresholds(&corpus, &grid)?;
    eprintln!("fit-thresholds: MSE {:.6}", fit.mse);
    write_json(&args.out, &fit.thresholds)
}

fn fit_discount_cmd(args: &FitArgs) -> Result<()> {
    let grid = match &args.config {
        Some(p) => read_json::<DiscountGrid>(p)?,
        None => DiscountGrid::default(),
    };
    let corpus = read_corpus(&args.input)?;
    let fit = fit_discount(&corpus, &grid)?;
    eprintln!(
        "fit-discount: {} deletions in the selected subset (confidence only: {})",
        fit.deletions, fit.baseline_deletions
    );
    write_json(&args.out, &fit.params)
}

#[derive(Serialize)]
struct GradCheckReport {
    parameters: usize,
    max_relative_error: f64,
    tolerance: f64,
    passed: bool,
}

/// Random sequences with random binary targets.
pub fn random_examples(rng: &mut ChaCha8Rng, lengths: &[usize], input_dim: usize) -> Vec<Example> {
    lengths
        .iter()
        .map(|&len| Example {
            features: (0..len)
                .map(|_| FeatureVector((0..input_dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect(),
            targets: Targets {
                c: (0..len).map(|_| rng.random()).collect(),
                d: (0..len).map(|_| rng.random()).collect(),
                s: rng.random(),
            },
        })
        .collect()
}

fn grad_check(args: &GradCheckArgs) -> Result<()> {
    let cell = match args.cell {
        CellArg::Lstm => CellKind::Lstm,
        CellArg::Vanilla => CellKind::Vanilla,
    };
    let model = BiRnnModel::new(
        ModelConfig {
            input_dim: args.input_dim,
            hidden_dim: args.hidden_dim,
            predict_deletions: true,
            cell,
        },
        args.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
    let batch = random_examples(&mut rng, &[5, 3], args.input_dim);
    let err = gradient_check(&model, &batch, 1e-3, args.step)?;
    let report = GradCheckReport {
        parameters: model.num_params(),
        max_relative_error: err,
        tolerance: args.tolerance,
        passed: err < args.tolerance,
    };
    eprintln!("grad-check: max relative error {err:.3e} over {} parameters", report.parameters);
    emit_json(args.out.as_deref(), &report)?;
    if report.passed {
        Ok(())
    } else {
        Err(Error::invalid("grad-check", format!("relative error {err:e} exceeds {}", args.tolerance)))
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Align(a) => align(a),
        Command::TrainCalib(a) => train_calib(a),
        Command::TrainBirnn(a) => train_birnn(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Select(a) => select(a),
        Command::FitThresholds(a) => fit_thresholds_cmd(a),
        Command::FitDiscount(a) => fit_discount_cmd(a),
        Command::GradCheck(a) => grad_check(a),
    }
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Derives targets with the default weights unless every record has them.
fn ensure_targets(corpus: &mut [LabeledUtterance]) -> Result<()> {
    if corpus.iter().all(|u| u.targets.is_some()) {
        return Ok(());
    }
    attach_targets(corpus, &EditWeights::default())
}
