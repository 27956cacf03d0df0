//! `subgrade`: command-line front end for the soil-strength study.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use subgrade_core::dataset::{summarize, synthesize, SynthSpec};
use subgrade_core::experiment::{
    bundle_pdps, emit_report, evaluate_bundle, finish_stage, load_data, repeat_study, run_study, tune_stage,
    write_task_artifacts, DataSource, ExperimentError, ModelBundle, MetricSet, RepeatSummary, RunConfig, StudyReport,
};
use subgrade_core::{ModelKind, SplitSpec, Target};

#[derive(Parser)]
#[command(name = "subgrade", version, about = "Soil strength regression study: SVR and boosted trees")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for splitting, folds and tree sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    target: Option<TargetArg>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelArg>,
    /// Number of repeated splits for `repeat` and `all`.
    #[arg(long, global = true)]
    repeats: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summary statistics of every column.
    Stats,
    /// Write a synthetic dataset to OUT/synthetic.csv.
    Synth {
        #[arg(long, default_value_t = 121)]
        n: usize,
        /// Relative noise scale; defaults to the level giving R^2 of about 0.999.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Write the train and test partitions to OUT/train.csv and OUT/test.csv.
    Split,
    /// Grid search only; writes OUT/tuning/.
    Tune,
    /// Grid search and refit; writes OUT/tuning/ and OUT/models/.
    Train,
    /// Evaluate saved models in OUT/models/ on their splits.
    Evaluate,
    /// Partial dependence curves for saved models in OUT/models/.
    Pdp,
    /// Repeated-split study.
    Repeat,
    /// Re-emit report files from a saved report.json.
    Report {
        /// Saved report; defaults to OUT/report.json.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Full pipeline for every model and target, then the repeated-split study.
    All {
        /// Skip the repeated-split study.
        #[arg(long)]
        no_repeat: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Cbr,
    Ucs,
    R,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Svr,
    Xgb,
    Oblivious,
    All,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<ExperimentError>().map_or(1, |x| x.exit_code());
            ExitCode::from(code as u8)
        }
    }
}

fn config(cli: &Cli) -> Result<RunConfig, ExperimentError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(n) = cli.repeats {
        cfg.repeats = n;
    }
    if let Some(t) = cli.target {
        cfg.targets = match t {
            TargetArg::Cbr => vec![Target::Cbr],
            TargetArg::Ucs => vec![Target::Ucs],
            TargetArg::R => vec![Target::R],
            TargetArg::All => Target::ALL.to_vec(),
        };
    }
    if let Some(m) = cli.model {
        cfg.models = match m {
            ModelArg::Svr => vec![ModelKind::Svr],
            ModelArg::Xgb => vec![ModelKind::Xgb],
            ModelArg::Oblivious => vec![ModelKind::Oblivious],
            ModelArg::All => ModelKind::ALL.to_vec(),
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn io_err<'a>(stage: &'static str, path: &'a Path) -> impl FnOnce(std::io::Error) -> ExperimentError + 'a {
    move |source| ExperimentError::Io {
        stage,
        path: path.display().to_string(),
        source,
    }
}

fn write_file(stage: &'static str, path: &Path, text: &str) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(stage, dir))?;
    }
    fs::write(path, text).map_err(io_err(stage, path))
}

fn stem(model: ModelKind, target: Target) -> String {
    format!("{}_{}", model.slug(), target.slug())
}

fn tasks(cfg: &RunConfig) -> Vec<(ModelKind, Target)> {
    cfg.models
        .iter()
        .flat_map(|&m| cfg.targets.iter().map(move |&t| (m, t)))
        .collect()
}

fn metrics_line(model: ModelKind, target: Target, phase: &str, m: MetricSet) -> String {
    format!(
        "{phase},{},{},{},{},{},{}",
        model.slug(),
        target.slug(),
        m.r2,
        m.rmse,
        m.mae,
        m.mape
    )
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let cfg = config(&cli)?;
    let out = cfg.output_dir.clone();
    match &cli.command {
        Command::Stats => {
            let data = load_data(&cfg)?;
            let table = summarize(&data).to_table();
            print!("{table}");
            if cli.out.is_some() {
                write_file("stats", &out.join("stats.csv"), &table)?;
            }
        }
        Command::Synth { n, noise } => {
            let mut spec = match cfg.data {
                DataSource::Synthetic { seed, n, noise_scale } => SynthSpec { seed, n, noise_scale },
                DataSource::Csv { .. } => SynthSpec::default(),
            };
            spec.n = *n;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            if let Some(v) = noise {
                spec.noise_scale = *v;
            }
            if spec.n < 10 || !(spec.noise_scale >= 0.0 && spec.noise_scale.is_finite()) {
                return Err(ExperimentError::Config("synth needs n >= 10 and a finite noise >= 0".into()).into());
            }
            let path = out.join("synthetic.csv");
            fs::create_dir_all(&out).map_err(io_err("synth", &out))?;
            synthesize(&spec)
                .save_csv(&path)
                .with_context(|| format!("synth: writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        Command::Split => {
            let data = load_data(&cfg)?;
            let (train, test) = data
                .split(&SplitSpec::new(cfg.train_fraction, cfg.base_seed))
                .map_err(|source| ExperimentError::Data { stage: "split", source })?;
            fs::create_dir_all(&out).map_err(io_err("split", &out))?;
            for (name, d) in [("train.csv", &train), ("test.csv", &test)] {
                let path = out.join(name);
                d.save_csv(&path).map_err(|source| ExperimentError::Data { stage: "split", source })?;
            }
            println!("train {} rows, test {} rows", train.n(), test.n());
        }
        Command::Tune => {
            let data = load_data(&cfg)?;
            for (m, t) in tasks(&cfg) {
                let stage = tune_stage(&cfg, &data, m, t, cfg.base_seed)?;
                let path = out.join("tuning").join(format!("{}.json", stem(m, t)));
                write_file("tune", &path, &stage.artifacts_json())?;
                println!(
                    "{} {}: cv mse {} with {:?}",
                    m.slug(),
                    t.slug(),
                    stage.tuning.best_cv_mse,
                    stage.tuning.best_candidate
                );
            }
        }
        Command::Train => {
            let data = load_data(&cfg)?;
            println!("phase,model,target,r2,rmse,mae,mape");
            let mut code = 0;
            for (m, t) in tasks(&cfg) {
                let stage = tune_stage(&cfg, &data, m, t, cfg.base_seed)?;
                let outcome = finish_stage(&cfg, stage, false)?;
                write_task_artifacts(&outcome, &out)?;
                if !outcome.report.converged {
                    code = 3;
                }
                println!("{}", metrics_line(m, t, "train", MetricSet::of(&outcome.report.train)));
                println!("{}", metrics_line(m, t, "test", MetricSet::of(&outcome.report.test)));
            }
            return Ok(code);
        }
        Command::Evaluate => {
            let data = load_data(&cfg)?;
            let mut csv = String::from("phase,model,target,r2,rmse,mae,mape\n");
            for (m, t) in tasks(&cfg) {
                let bundle = ModelBundle::load(out.join("models").join(format!("{}.json", stem(m, t))))?;
                let (train, test) = data
                    .split(&SplitSpec::new(bundle.train_fraction, bundle.seed))
                    .map_err(|source| ExperimentError::Data { stage: "split", source })?;
                let (tr, te, _) = evaluate_bundle(&bundle, &train, &test)?;
                csv.push_str(&metrics_line(m, t, "train", MetricSet::of(&tr)));
                csv.push('\n');
                csv.push_str(&metrics_line(m, t, "test", MetricSet::of(&te)));
                csv.push('\n');
            }
            print!("{csv}");
            write_file("evaluate", &out.join("evaluate.csv"), &csv)?;
        }
        Command::Pdp => {
            let data = load_data(&cfg)?;
            for (m, t) in tasks(&cfg) {
                let bundle = ModelBundle::load(out.join("models").join(format!("{}.json", stem(m, t))))?;
                let (train, _) = data
                    .split(&SplitSpec::new(bundle.train_fraction, bundle.seed))
                    .map_err(|source| ExperimentError::Data { stage: "split", source })?;
                for c in bundle_pdps(&bundle, &train, cfg.pdp_points)? {
                    let base = out.join("pdp").join(format!("{}_{}", stem(m, t), c.feature));
                    write_file("sensitivity", &base.with_extension("csv"), &c.to_csv_string())?;
                    let json = serde_json::to_string_pretty(&c)? + "\n";
                    write_file("sensitivity", &base.with_extension("json"), &json)?;
                }
                println!("{} {}: partial dependence written", m.slug(), t.slug());
            }
        }
        Command::Repeat => {
            let data = load_data(&cfg)?;
            let mut summaries: Vec<RepeatSummary> = Vec::new();
            for (m, t) in tasks(&cfg) {
                let s = repeat_study(&cfg, &data, m, t, cfg.repeats)?;
                println!("{} {}: {:?}", m.slug(), t.slug(), s.formatted);
                summaries.push(s);
            }
            let json = serde_json::to_string_pretty(&summaries)? + "\n";
            write_file("repeat", &out.join("repeat.json"), &json)?;
        }
        Command::Report { from } => {
            let path = from.clone().unwrap_or_else(|| out.join("report.json"));
            let text = fs::read_to_string(&path).map_err(io_err("report", &path))?;
            let study = StudyReport::from_json(&text).map_err(|e| ExperimentError::Format {
                stage: "report",
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            emit_report(&study, &out)?;
            println!("report files written to {}", out.display());
        }
        Command::All { no_repeat } => {
            let data = load_data(&cfg)?;
            let repeats = (!no_repeat).then_some(cfg.repeats);
            let study = run_study(&cfg, &data, repeats, |o| write_task_artifacts(o, &out))?;
            emit_report(&study, &out)?;
            print!("{}", subgrade_core::experiment::report::metrics_csv(&study));
            if study.partial {
                eprintln!("warning: partial results; some fits did not converge");
                return Ok(3);
            }
        }
    }
    Ok(0)
}
