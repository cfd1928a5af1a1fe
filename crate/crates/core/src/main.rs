//! `tap` command-line front end.
//!
//! Each subcommand loads one experiment configuration, runs a single
//! operation and writes CSV/JSON artifacts plus `manifest.json` into the
//! output directory. `tap replay` re-executes a manifest and checks that
//! every recorded output is byte-identical.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use tap_core::actionability::{CostModel, FeatureSchema};
use tap_core::baselines::{cw_l2, mad_weights, wachter_counterfactual, BaselineResult, InputBox, Method};
use tap_core::bench::{self, plots, FrontierRow};
use tap_core::config::{sweep_grid, ExperimentConfig, BUNDLED};
use tap_core::dataset::{Dataset, Split};
use tap_core::manifest::{sha256_bytes, Manifest};
use tap_core::netcore::{ece, train_on_splits, DenseClassifier, DEFAULT_ECE_BINS};
use tap_core::perturb::{frontier_sweep, generate_candidate, meet_budget, Budget, PerturbContext, TapCandidate};
use tap_core::probspace::TargetSet;
use tap_core::rng::{stream, sub_seed};
use tap_core::verify::{
    self, build_pair_dataset, calibrate_gamma, pac_gap_terms, sample_different_class_pairs, train_verifier,
    GammaCalibration, Verifier,
};
use tap_core::TapError;

#[derive(Parser)]
#[command(name = "tap", version, about = "Trustworthy actionable perturbations for tabular classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file, or the name of a bundled config (adult, law, diabetes, german, synthetic).
    #[arg(long, default_value = "synthetic")]
    config: String,
    /// Output directory; defaults to the config's out_dir or `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct Models {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    verifier: Option<PathBuf>,
    #[arg(long)]
    calibration: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier M.
    Train(Common),
    /// Train the pair verifier V on the training split.
    TrainVerifier(Common),
    /// Pick the rejection threshold gamma on test-split pairs.
    CalibrateGamma {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        verifier: PathBuf,
    },
    /// Generate one perturbation for one individual.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
        /// Row index in the loaded data.
        #[arg(long)]
        individual: usize,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, conflicts_with = "delta_max")]
        epsilon_max: Option<f64>,
        #[arg(long)]
        delta_max: Option<f64>,
    },
    /// Cost-benefit frontier over a log-spaced lambda grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        individual: usize,
    },
    /// Verify a candidate written by `generate`.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        candidate: PathBuf,
    },
    /// Carlini-Wagner L2 attacks toward the first desirable class.
    AttackCw {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
        /// Row index; defaults to test-split rows outside the target set.
        #[arg(long)]
        individual: Option<usize>,
    },
    /// Counterfactual baseline toward the first desirable class.
    BaselineWachter {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        individual: Option<usize>,
    },
    /// Full synthetic ground-truth benchmark.
    BenchSynthetic(Common),
    /// Expected calibration error of a model on the test split.
    Ece {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ECE_BINS)]
        bins: usize,
    },
    /// Generalization-gap bound terms for the verifier.
    PacBound {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        d: u64,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a manifest and compare every recorded output.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to `replay` next to the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Schema(String),
    MissingModel(String),
    UnreachableBudget(String),
    Mismatch(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config: {m}"),
            Failure::Schema(m) => write!(f, "schema mismatch: {m}"),
            Failure::MissingModel(m) => write!(f, "missing model: {m}"),
            Failure::UnreachableBudget(m) => write!(f, "unreachable budget: {m}"),
            Failure::Mismatch(m) => write!(f, "replay mismatch: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(f) = e.downcast_ref::<Failure>() {
        return match f {
            Failure::Config(_) => 2,
            Failure::Schema(_) => 3,
            Failure::MissingModel(_) => 4,
            Failure::UnreachableBudget(_) => 5,
            Failure::Mismatch(_) => 6,
        };
    }
    match e.downcast_ref::<TapError>() {
        Some(TapError::Config(_)) => 2,
        Some(TapError::Schema(_) | TapError::DimensionMismatch { .. } | TapError::CostModel(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {line}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(args: Vec<String>) -> anyhow::Result<()> {
    let cli = Cli::try_parse_from(std::iter::once("tap".to_string()).chain(args.iter().cloned()))
        .map_err(|e| {
            if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            anyhow!(Failure::Config(e.to_string().lines().next().unwrap_or("bad arguments").to_string()))
        })?;
    match cli.command {
        Command::Train(c) => cmd_train(&Session::open("train", &c, &args)?),
        Command::TrainVerifier(c) => cmd_train_verifier(&Session::open("train-verifier", &c, &args)?),
        Command::CalibrateGamma { common, model, verifier } => {
            let mut s = Session::open("calibrate-gamma", &common, &args)?;
            let m = s.load_model(&model)?;
            let v = s.load_verifier(&verifier)?;
            cmd_calibrate(&mut s, &m, &v)
        }
        Command::Generate {
            common,
            models,
            individual,
            lambda,
            epsilon_max,
            delta_max,
        } => {
            let mut s = Session::open("generate", &common, &args)?;
            let loaded = s.load_models(&models)?;
            cmd_generate(&mut s, &loaded, individual, lambda, epsilon_max, delta_max)
        }
        Command::Sweep { common, models, individual } => {
            let mut s = Session::open("sweep", &common, &args)?;
            let loaded = s.load_models(&models)?;
            cmd_sweep(&mut s, &loaded, individual)
        }
        Command::Verify { common, models, candidate } => {
            let mut s = Session::open("verify", &common, &args)?;
            let loaded = s.load_models(&models)?;
            cmd_verify(&mut s, &loaded, &candidate)
        }
        Command::AttackCw { common, models, individual } => {
            let mut s = Session::open("attack-cw", &common, &args)?;
            let loaded = s.load_models(&models)?;
            cmd_baseline(&mut s, &loaded, individual, Method::Cw)
        }
        Command::BaselineWachter { common, models, individual } => {
            let mut s = Session::open("baseline-wachter", &common, &args)?;
            let loaded = s.load_models(&models)?;
            cmd_baseline(&mut s, &loaded, individual, Method::Wachter)
        }
        Command::BenchSynthetic(c) => cmd_bench(&Session::open("bench-synthetic", &c, &args)?),
        Command::Ece { common, model, bins } => {
            let mut s = Session::open("ece", &common, &args)?;
            let m = s.load_model(&model)?;
            cmd_ece(&mut s, &m, bins)
        }
        Command::PacBound { n, k, d, b, delta, out } => cmd_pac(&args, n, k, d, b, delta, out),
        Command::Replay { manifest, out } => cmd_replay(&manifest, out),
    }
}

/// Loaded configuration plus the manifest being built for this run.
struct Session {
    cfg: ExperimentConfig,
    seed: u64,
    out: PathBuf,
    manifest: std::cell::RefCell<Manifest>,
}

fn config_error(e: TapError) -> anyhow::Error {
    match e {
        TapError::Config(m) => anyhow!(Failure::Config(m)),
        TapError::Schema(m) | TapError::CostModel(m) => anyhow!(Failure::Schema(m)),
        TapError::InvalidTargetSet(m) => anyhow!(Failure::Config(format!("target set: {m}"))),
        other => anyhow!(Failure::Config(other.to_string())),
    }
}

impl Session {
    fn open(command: &str, common: &Common, args: &[String]) -> anyhow::Result<Self> {
        let path = Path::new(&common.config);
        let (cfg, text) = if path.exists() {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            (ExperimentConfig::from_toml_str(&text, path.parent()).map_err(config_error)?, text)
        } else if let Some(text) = ExperimentConfig::bundled_source(&common.config) {
            (ExperimentConfig::bundled(&common.config).map_err(config_error)?, text.to_string())
        } else {
            bail!(Failure::Config(format!(
                "no config file '{}' and no bundled config of that name (bundled: {})",
                common.config,
                BUNDLED.join(", ")
            )));
        };
        let seed = common.seed.unwrap_or(cfg.seed);
        let out = common
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let manifest = Manifest::new(command, args.to_vec(), seed).with_config(&text);
        Ok(Self {
            cfg,
            seed,
            out,
            manifest: std::cell::RefCell::new(manifest),
        })
    }

    fn schema(&self) -> anyhow::Result<FeatureSchema> {
        self.cfg.schema().map_err(config_error)
    }

    fn data(&self) -> anyhow::Result<Dataset> {
        self.cfg.load_data(self.seed).map_err(|e| match e {
            TapError::Data(m) | TapError::Schema(m) => anyhow!(Failure::Schema(m)),
            other => anyhow!(other),
        })
    }

    fn split(&self) -> anyhow::Result<(Dataset, Split)> {
        let data = self.data()?;
        let split = data.split(self.cfg.train.split, &mut stream(self.seed, "split"))?;
        Ok((data, split))
    }

    fn load_model(&self, path: &Path) -> anyhow::Result<DenseClassifier> {
        let m = DenseClassifier::load(path).map_err(|e| anyhow!(Failure::MissingModel(format!("{}: {e}", path.display()))))?;
        self.manifest.borrow_mut().add_input(path)?;
        let dim = self.schema()?.features().len();
        if m.num_inputs() != dim {
            bail!(Failure::Schema(format!(
                "model {} takes {} inputs but the schema has {dim} features",
                path.display(),
                m.num_inputs()
            )));
        }
        Ok(m)
    }

    fn load_verifier(&self, path: &Path) -> anyhow::Result<Verifier> {
        let net = DenseClassifier::load(path).map_err(|e| anyhow!(Failure::MissingModel(format!("{}: {e}", path.display()))))?;
        self.manifest.borrow_mut().add_input(path)?;
        Verifier::new(net).map_err(|e| anyhow!(Failure::Schema(format!("{}: {e}", path.display()))))
    }

    fn load_calibration(&self, path: &Path) -> anyhow::Result<GammaCalibration> {
        let c = GammaCalibration::load(path).map_err(|e| anyhow!(Failure::MissingModel(format!("{}: {e}", path.display()))))?;
        self.manifest.borrow_mut().add_input(path)?;
        Ok(c)
    }

    fn load_models(&self, m: &Models) -> anyhow::Result<Loaded> {
        let model = self.load_model(&m.model)?;
        let verifier = m.verifier.as_deref().map(|p| self.load_verifier(p)).transpose()?;
        let calibration = m.calibration.as_deref().map(|p| self.load_calibration(p)).transpose()?;
        if verifier.is_some() != calibration.is_some() {
            bail!(Failure::Config("--verifier and --calibration go together".into()));
        }
        Ok(Loaded {
            model,
            verifier,
            calibration,
        })
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.borrow_mut().add_output(&self.out, Path::new(rel))?;
        Ok(())
    }

    fn write_csv<T: Serialize>(&self, rel: &str, rows: &[T]) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        self.write(rel, &w.into_inner()?)
    }

    fn finish(&self) -> anyhow::Result<()> {
        self.manifest.borrow().save(&self.out)?;
        Ok(())
    }

    fn target(&self) -> anyhow::Result<TargetSet> {
        self.cfg.target_set().map_err(config_error)
    }
}

struct Loaded {
    model: DenseClassifier,
    verifier: Option<Verifier>,
    calibration: Option<GammaCalibration>,
}

impl Loaded {
    fn verdict(&self, x: &[f64], xt: &[f64]) -> anyhow::Result<(Option<f64>, Option<bool>)> {
        match (&self.verifier, &self.calibration) {
            (Some(v), Some(c)) => {
                let r = verify::verify(&self.model, v, c, x, xt)?;
                Ok((Some(r.discrepancy), Some(r.accepted)))
            }
            _ => Ok((None, None)),
        }
    }
}

fn cmd_train(s: &Session) -> anyhow::Result<()> {
    let (_, split) = s.split()?;
    let cfg = s.cfg.train_config(s.seed);
    let model = train_on_splits(&split.train, Some(&split.validation), &cfg, &s.cfg.model)?;
    let test_accuracy = model.accuracy(&split.test)?;
    let test_ece = ece(&model, &split.test, DEFAULT_ECE_BINS)?;
    s.write("model.json", model.to_json()?.as_bytes())?;
    #[derive(Serialize)]
    struct Row {
        epochs_run: usize,
        best_epoch: usize,
        best_validation_loss: f64,
        train_accuracy: f64,
        validation_accuracy: f64,
        test_accuracy: f64,
        test_ece: f64,
    }
    let r = model.report();
    s.write_csv(
        "train_summary.csv",
        &[Row {
            epochs_run: r.epochs_run,
            best_epoch: r.best_epoch,
            best_validation_loss: r.best_validation_loss,
            train_accuracy: r.train_accuracy,
            validation_accuracy: r.validation_accuracy,
            test_accuracy,
            test_ece,
        }],
    )?;
    println!(
        "trained M: {} epochs, test accuracy {test_accuracy:.4}, test ECE {test_ece:.4} -> {}",
        r.epochs_run,
        s.out.join("model.json").display()
    );
    s.finish()
}

fn cmd_train_verifier(s: &Session) -> anyhow::Result<()> {
    let (_, split) = s.split()?;
    let pairs = build_pair_dataset(
        &split.train,
        s.cfg.verifier.max_pairs,
        s.cfg.verifier.pair_balance,
        &mut stream(s.seed, "pairs"),
    )?;
    let cfg = tap_core::netcore::TrainConfig {
        seed: sub_seed(s.seed, "verifier"),
        ..s.cfg.verifier_train()
    };
    let verifier = train_verifier(&pairs, &cfg, &s.cfg.verifier_arch())?;
    let test_pairs = build_pair_dataset(&split.test, s.cfg.verifier.max_pairs, 0.5, &mut stream(s.seed, "verifier-test-pairs"))?;
    let test_accuracy = verifier.net().accuracy(&test_pairs.to_dataset()?)?;
    s.write("verifier.json", verifier.net().to_json()?.as_bytes())?;
    let (same, different) = pairs.label_counts();
    #[derive(Serialize)]
    struct Row {
        pairs: usize,
        same: usize,
        different: usize,
        epochs_run: usize,
        test_pair_accuracy: f64,
    }
    s.write_csv(
        "verifier_summary.csv",
        &[Row {
            pairs: pairs.len(),
            same,
            different,
            epochs_run: verifier.net().report().epochs_run,
            test_pair_accuracy: test_accuracy,
        }],
    )?;
    println!("trained V on {} pairs, test pair accuracy {test_accuracy:.4}", pairs.len());
    s.finish()
}

fn cmd_calibrate(s: &mut Session, model: &DenseClassifier, verifier: &Verifier) -> anyhow::Result<()> {
    let (_, split) = s.split()?;
    let cal = calibrate_gamma(
        model,
        verifier,
        &split.test,
        s.cfg.verifier.rejection_rate,
        s.cfg.verifier.calibration_pairs,
        sub_seed(s.seed, "calibration"),
    )?;
    let path = s.out.join("calibration.json");
    cal.save(&path)?;
    s.manifest.borrow_mut().add_output(&s.out, Path::new("calibration.json"))?;
    #[derive(Serialize)]
    struct Row {
        gamma: f64,
        rate: f64,
        sample_size: usize,
        fresh_pairs: usize,
        fresh_rejection_rate: f64,
    }
    let fresh = sample_different_class_pairs(&split.test, s.cfg.verifier.calibration_pairs, &mut stream(s.seed, "calibration-check"));
    let mut rejected = 0usize;
    for &(a, b) in &fresh {
        if !verify::verify(model, verifier, &cal, &split.test.row_vec(a), &split.test.row_vec(b))?.accepted {
            rejected += 1;
        }
    }
    let fresh_rate = if fresh.is_empty() { 0.0 } else { rejected as f64 / fresh.len() as f64 };
    s.write_csv(
        "calibration.csv",
        &[Row {
            gamma: cal.gamma,
            rate: cal.rate,
            sample_size: cal.sample_size,
            fresh_pairs: fresh.len(),
            fresh_rejection_rate: fresh_rate,
        }],
    )?;
    println!(
        "gamma = {:.6} at rate {} ({} pairs); fresh different-class rejection {fresh_rate:.4}",
        cal.gamma, cal.rate, cal.sample_size
    );
    s.finish()
}

struct Problem {
    schema: FeatureSchema,
    cost: CostModel,
    target: TargetSet,
    divergence: tap_core::probspace::Divergence,
}

impl Problem {
    fn new(s: &Session) -> anyhow::Result<Self> {
        Ok(Self {
            schema: s.schema()?,
            cost: s.cfg.cost_model().map_err(config_error)?,
            target: s.target()?,
            divergence: s.cfg.divergence().map_err(config_error)?,
        })
    }

    fn context<'a>(&'a self, s: &Session, model: &'a DenseClassifier) -> PerturbContext<'a> {
        PerturbContext {
            model,
            target: self.target.clone(),
            divergence: self.divergence,
            cost: &self.cost,
            schema: &self.schema,
            penalty: s.cfg.penalty,
        }
    }
}

fn row_of(data: &Dataset, i: usize) -> anyhow::Result<Vec<f64>> {
    if i >= data.len() {
        bail!(Failure::Config(format!("individual {i} is out of range (data has {} rows)", data.len())));
    }
    Ok(data.row_vec(i))
}

#[derive(Serialize)]
struct CandidateRow {
    individual_id: usize,
    lambda: f64,
    epsilon: f64,
    delta: f64,
    discrepancy: Option<f64>,
    verified: Option<bool>,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct FeatureRow<'a> {
    feature: &'a str,
    original: f64,
    perturbed: f64,
}

fn cmd_generate(
    s: &mut Session,
    loaded: &Loaded,
    individual: usize,
    lambda: Option<f64>,
    epsilon_max: Option<f64>,
    delta_max: Option<f64>,
) -> anyhow::Result<()> {
    let data = s.data()?;
    let x = row_of(&data, individual)?;
    let problem = Problem::new(s)?;
    let ctx = problem.context(s, &loaded.model);
    let mut oc = s.cfg.opt.clone();
    oc.seed = sub_seed(s.seed, "opt");
    if let Some(l) = lambda {
        oc = oc.with_lambda(l);
    }
    let budget = match (epsilon_max, delta_max) {
        (Some(e), _) => Some(Budget::EpsilonMax(e)),
        (_, Some(d)) => Some(Budget::DeltaMax(d)),
        _ => None,
    };
    let mut cand = match budget {
        None => generate_candidate(&ctx, &x, &oc)?,
        Some(b) => {
            let outcome = meet_budget(&ctx, &x, &oc, b)?;
            if !outcome.met {
                bail!(Failure::UnreachableBudget(format!(
                    "{b:?} not met after {} trials (closest: epsilon {:.6}, delta {:.6})",
                    outcome.trials, outcome.candidate.epsilon, outcome.candidate.delta
                )));
            }
            outcome.candidate
        }
    };
    if let (Some(v), Some(c)) = (&loaded.verifier, &loaded.calibration) {
        cand.verify_with(&loaded.model, v, c)?;
    }
    s.write("candidate.json", serde_json::to_string_pretty(&CandidateFile::from(&cand))?.as_bytes())?;
    s.write_csv(
        "candidate.csv",
        &[CandidateRow {
            individual_id: individual,
            lambda: cand.lambda_used,
            epsilon: cand.epsilon,
            delta: cand.delta,
            discrepancy: cand.discrepancy,
            verified: cand.verified,
            iterations: cand.iterations,
            converged: cand.converged,
        }],
    )?;
    let rows: Vec<FeatureRow> = problem
        .schema
        .features()
        .iter()
        .enumerate()
        .map(|(i, f)| FeatureRow {
            feature: &f.name,
            original: cand.x_original[i],
            perturbed: cand.x_perturbed[i],
        })
        .collect();
    s.write_csv("candidate_features.csv", &rows)?;
    println!(
        "individual {individual}: epsilon {:.6}, delta {:.6}, changed features {}{}",
        cand.epsilon,
        cand.delta,
        rows.iter().filter(|r| r.original != r.perturbed).count(),
        match cand.verified {
            Some(true) => ", verified",
            Some(false) => ", rejected by the verifier",
            None => "",
        }
    );
    s.finish()
}

/// The parts of a candidate needed to verify it later.
#[derive(Serialize, Deserialize)]
struct CandidateFile {
    x_original: Vec<f64>,
    x_perturbed: Vec<f64>,
    epsilon: f64,
    delta: f64,
    /// Absent for the unmodified origin.
    lambda: Option<f64>,
}

impl From<&TapCandidate> for CandidateFile {
    fn from(c: &TapCandidate) -> Self {
        Self {
            x_original: c.x_original.clone(),
            x_perturbed: c.x_perturbed.clone(),
            epsilon: c.epsilon,
            delta: c.delta,
            lambda: c.lambda_used.is_finite().then_some(c.lambda_used),
        }
    }
}

fn cmd_sweep(s: &mut Session, loaded: &Loaded, individual: usize) -> anyhow::Result<()> {
    let data = s.data()?;
    let x = row_of(&data, individual)?;
    let problem = Problem::new(s)?;
    let ctx = problem.context(s, &loaded.model);
    let mut oc = s.cfg.opt.clone();
    oc.seed = sub_seed(s.seed, "opt");
    let frontier = frontier_sweep(&ctx, &x, &oc, &sweep_grid())?;
    let mut rows = Vec::new();
    for c in &frontier.candidates {
        let (discrepancy, verified) = loaded.verdict(&x, &c.x_perturbed)?;
        rows.push(FrontierRow {
            individual_id: individual,
            method: Method::Tap,
            lambda: c.lambda_used,
            epsilon: c.epsilon,
            delta: c.delta,
            true_delta: f64::NAN,
            discrepancy: discrepancy.unwrap_or(f64::NAN),
            verified: verified.unwrap_or(false),
            iterations: c.iterations,
            success: true,
            true_gain: f64::NAN,
            x_perturbed: c.x_perturbed.clone(),
        });
    }
    let mut buf = Vec::new();
    bench::write_frontier_csv(&mut buf, &rows)?;
    s.write("frontier.csv", &buf)?;
    let refs: Vec<&FrontierRow> = rows.iter().collect();
    s.write(&format!("frontier_{individual}.svg"), plots::frontier_svg(individual, &refs).as_bytes())?;
    for f in &frontier.failures {
        eprintln!("lambda {}: {}", f.lambda, f.error);
    }
    println!("{} frontier points for individual {individual}", rows.len());
    s.finish()
}

fn cmd_verify(s: &mut Session, loaded: &Loaded, candidate: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(candidate).map_err(|e| anyhow!(Failure::MissingModel(format!("{}: {e}", candidate.display()))))?;
    s.manifest.borrow_mut().add_input(candidate)?;
    let c: CandidateFile = serde_json::from_str(&text)?;
    let (Some(v), Some(cal)) = (&loaded.verifier, &loaded.calibration) else {
        bail!(Failure::Config("verify needs --verifier and --calibration".into()));
    };
    let verdict = verify::verify(&loaded.model, v, cal, &c.x_original, &c.x_perturbed)?;
    #[derive(Serialize)]
    struct Row {
        discrepancy: f64,
        gamma: f64,
        accepted: bool,
    }
    s.write_csv(
        "verdict.csv",
        &[Row {
            discrepancy: verdict.discrepancy,
            gamma: cal.gamma,
            accepted: verdict.accepted,
        }],
    )?;
    println!(
        "discrepancy {:.6} vs gamma {:.6}: {}",
        verdict.discrepancy,
        cal.gamma,
        if verdict.accepted { "accepted" } else { "rejected" }
    );
    s.finish()
}

#[derive(Serialize)]
struct BaselineRow {
    individual_id: usize,
    method: &'static str,
    weight: f64,
    epsilon: f64,
    delta: f64,
    discrepancy: Option<f64>,
    verified: Option<bool>,
    success: bool,
    iterations: usize,
}

fn cmd_baseline(s: &mut Session, loaded: &Loaded, individual: Option<usize>, method: Method) -> anyhow::Result<()> {
    let (data, split) = s.split()?;
    let problem = Problem::new(s)?;
    let ctx = problem.context(s, &loaded.model);
    let desired = *problem
        .target
        .desirable()
        .first()
        .ok_or_else(|| anyhow!(Failure::Config("baselines need a desirable class".into())))?;
    let individuals: Vec<(usize, Vec<f64>)> = match individual {
        Some(i) => vec![(i, row_of(&data, i)?)],
        None => bench::select_individuals(&loaded.model, &split.test, &problem.target, s.cfg.bench.individuals)?
            .into_iter()
            .map(|i| (split.test_rows[i], split.test.row_vec(i)))
            .collect(),
    };
    let mad = mad_weights(&split.train);
    let bx = InputBox::from_data(&split.train, Some(&problem.schema), s.cfg.bench.cw_box_margin);
    let mut rows = Vec::new();
    for (id, x) in &individuals {
        if method == Method::Cw && loaded.model.predict_class(x)? == desired {
            eprintln!("individual {id}: already predicted as class {desired}, no attack needed");
            continue;
        }
        let mut r: BaselineResult = match method {
            Method::Cw => cw_l2(&ctx, x, desired, &bx, &s.cfg.bench.cw)?,
            _ => wachter_counterfactual(&ctx, x, desired, &mad, &s.cfg.bench.wachter)?,
        };
        if let (Some(v), Some(c)) = (&loaded.verifier, &loaded.calibration) {
            r.verify_with(&loaded.model, v, c)?;
        }
        rows.push(BaselineRow {
            individual_id: *id,
            method: method.as_str(),
            weight: r.weight,
            epsilon: r.epsilon,
            delta: r.delta,
            discrepancy: r.discrepancy,
            verified: r.verified,
            success: r.success,
            iterations: r.iterations,
        });
    }
    s.write_csv(&format!("{}.csv", method.as_str()), &rows)?;
    let ok = rows.iter().filter(|r| r.success).count();
    let rejected = rows.iter().filter(|r| r.success && r.verified == Some(false)).count();
    println!("{method}: {ok}/{} succeeded, {rejected} of those rejected by the verifier", rows.len());
    s.finish()
}

fn cmd_bench(s: &Session) -> anyhow::Result<()> {
    let cfg = s.cfg.bench_config(s.seed).map_err(config_error)?;
    let trained = bench::train_models(&cfg)?;
    let out = bench::run_benchmark(&cfg, &trained, &[Method::Tap, Method::Wachter, Method::Cw])?;
    let mut buf = Vec::new();
    bench::write_success_csv(&mut buf, &out.table)?;
    s.write("success.csv", &buf)?;
    let mut buf = Vec::new();
    bench::write_frontier_csv(&mut buf, &out.rows)?;
    s.write("frontier.csv", &buf)?;

    let target = TargetSet::at_least(cfg.spec.num_classes(), cfg.desirable_class, cfg.p)?;
    let candidates = bench::improvement_candidates(&out, &trained.split.test);
    #[derive(Serialize)]
    struct Row {
        method: &'static str,
        candidates: usize,
        mean_true_improvement: f64,
    }
    let report = bench::true_improvement_report(&candidates, &cfg.spec, &target)?;
    let rows: Vec<Row> = report
        .iter()
        .map(|(m, v, n)| Row {
            method: m.as_str(),
            candidates: *n,
            mean_true_improvement: *v,
        })
        .collect();
    s.write_csv("true_improvement.csv", &rows)?;
    let plot_dir = s.out.join("plots");
    for path in plots::emit_plots(&plot_dir, &out)? {
        let rel = path.strip_prefix(&s.out).unwrap_or(&path).to_path_buf();
        s.manifest.borrow_mut().add_output(&s.out, &rel)?;
    }
    for f in &out.failures {
        eprintln!("{f}");
    }
    println!(
        "gamma {:.6}; {} individuals; success table -> {}",
        trained.calibration.gamma,
        out.individuals.len(),
        s.out.join("success.csv").display()
    );
    for r in &rows {
        println!("{}: mean true improvement {:.4} over {} candidates", r.method, r.mean_true_improvement, r.candidates);
    }
    s.finish()
}

fn cmd_ece(s: &mut Session, model: &DenseClassifier, bins: usize) -> anyhow::Result<()> {
    let (_, split) = s.split()?;
    let value = ece(model, &split.test, bins)?;
    #[derive(Serialize)]
    struct Row {
        bins: usize,
        points: usize,
        ece: f64,
    }
    s.write_csv(
        "ece.csv",
        &[Row {
            bins,
            points: split.test.len(),
            ece: value,
        }],
    )?;
    println!("ECE ({bins} bins, {} test points): {value:.6}", split.test.len());
    s.finish()
}

fn cmd_pac(args: &[String], n: u64, k: u64, d: u64, b: f64, delta: f64, out: Option<PathBuf>) -> anyhow::Result<()> {
    let terms = pac_gap_terms(n, k, d, b, delta).map_err(|e| match e {
        TapError::Domain(m) => anyhow!(Failure::Config(m)),
        other => anyhow!(other),
    })?;
    println!("explicit term:   {:.12}", terms.explicit_term);
    println!("complexity base: {:.12}", terms.complexity_base);
    if let Some(out) = out {
        std::fs::create_dir_all(&out)?;
        #[derive(Serialize)]
        struct Row {
            n: u64,
            k: u64,
            d: u64,
            b: f64,
            delta: f64,
            explicit_term: f64,
            complexity_base: f64,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(Row {
            n,
            k,
            d,
            b,
            delta,
            explicit_term: terms.explicit_term,
            complexity_base: terms.complexity_base,
        })?;
        std::fs::write(out.join("pac.csv"), w.into_inner()?)?;
        let mut m = Manifest::new("pac-bound", args.to_vec(), 0);
        m.add_output(&out, Path::new("pac.csv"))?;
        m.save(&out)?;
    }
    Ok(())
}

/// Replaces the value of `--flag` (either `--flag v` or `--flag=v`), or
/// appends it.
fn set_flag(args: &mut Vec<String>, flag: &str, value: &str) {
    let eq = format!("{flag}=");
    if let Some(i) = args.iter().position(|a| a == flag) {
        if i + 1 < args.len() {
            args[i + 1] = value.into();
            return;
        }
    }
    if let Some(i) = args.iter().position(|a| a.starts_with(&eq)) {
        args[i] = format!("{eq}{value}");
        return;
    }
    args.push(flag.into());
    args.push(value.into());
}

fn cmd_replay(manifest_path: &Path, out: Option<PathBuf>) -> anyhow::Result<()> {
    let m = Manifest::load(manifest_path).map_err(config_error)?;
    let out = out.unwrap_or_else(|| manifest_path.parent().unwrap_or(Path::new(".")).join("replay"));
    std::fs::create_dir_all(&out)?;
    let changed = m.changed_inputs();
    if !changed.is_empty() {
        let names: Vec<String> = changed.iter().map(|c| c.path.display().to_string()).collect();
        bail!(Failure::Mismatch(format!("inputs changed since the run: {}", names.join(", "))));
    }
    let mut args = m.args.clone();
    if let Some(text) = &m.config_text {
        // Prefer the original file when it still has the recorded bytes so
        // relative data paths keep resolving; otherwise use the stored text.
        let original = flag_value(&args, "--config");
        let intact = original
            .as_deref()
            .filter(|p| Path::new(p).exists())
            .and_then(|p| std::fs::read(p).ok())
            .is_some_and(|b| Some(sha256_bytes(&b)) == m.config_sha256);
        let named = original.as_deref().is_some_and(|p| !Path::new(p).exists() && ExperimentConfig::bundled_source(p) == Some(text.as_str()));
        if !intact && !named {
            let path = out.join("replay_config.toml");
            std::fs::write(&path, text)?;
            set_flag(&mut args, "--config", &path.to_string_lossy());
        }
    }
    set_flag(&mut args, "--out", &out.to_string_lossy());
    if m.command != "pac-bound" && flag_value(&args, "--seed").is_none() {
        set_flag(&mut args, "--seed", &m.seed.to_string());
    }
    run(args)?;
    let mismatches = m.compare_outputs(&out);
    if !mismatches.is_empty() {
        let names: Vec<String> = mismatches.iter().map(|c| c.path.display().to_string()).collect();
        bail!(Failure::Mismatch(format!("outputs differ: {}", names.join(", "))));
    }
    println!("replayed '{}': {} outputs identical", m.command, m.outputs.len());
    Ok(())
}

fn flag_value(args: &[String], flag: &str) -> Option<String> {
    let eq = format!("{flag}=");
    args.iter()
        .position(|a| a == flag)
        .and_then(|i| args.get(i + 1).cloned())
        .or_else(|| args.iter().find_map(|a| a.strip_prefix(&eq).map(str::to_string)))
}
