use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use genreg::config::RunConfig;
use genreg::evalharness::{
    emit_report, equivariance_certificate, table2_protocol, CertificateMode, CertificateSettings, ErrorStats,
    GeneratorFactory, ProtocolSettings, ReportFormat,
};
use genreg::flowgen::Variant;
use genreg::policy::{
    f_pick, f_place, prepare_gripper, train, DemonstrationRecord, FlowGenerator, Generator, Phase, PolicyBundle,
};
use genreg::pointcloud::{read_cloud, write_cloud, RigidTransform};
use genreg::synthtasks::{
    canonical_gripper, make_task, read_dataset, synthesize, write_dataset, TaskId, Vocabulary, DEFAULT_GRIPPER_POINTS,
    DEFAULT_OBJECT_POINTS, GRIPPER_SEED,
};
use genreg::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_ASSERTION: u8 = 3;

#[derive(Parser)]
#[command(name = "genreg", version, about = "Generate-then-register keyframe pick-and-place")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic demonstration dataset.
    Synth {
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 10)]
        demos: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Surface points per object before preprocessing.
        #[arg(long, default_value_t = DEFAULT_OBJECT_POINTS)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train pick and place models on a dataset and write a model bundle.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory (default: `paths.data` from the config).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Bundle directory (default: `paths.bundle` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a goal configuration and print the world action.
    Sample {
        #[arg(long)]
        bundle: PathBuf,
        /// One cloud file (pick: the object) or two (place: receiver, then moved object).
        #[arg(long, num_args = 1..=2, required = true)]
        scene: Vec<PathBuf>,
        #[arg(long)]
        instruction: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the generated clouds.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the rotated-input protocol on a dataset and write CSV and SVG reports.
    Eval {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Runs per evaluation record (default: `eval.runs`).
        #[arg(long)]
        runs: Option<usize>,
        /// Report path; `.csv` and `.svg` files are written next to each other.
        #[arg(long)]
        report: PathBuf,
        /// Protocol seed (default: `eval.seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check equivariance of every model in a bundle.
    Equicheck {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "forced")]
        mode: String,
        /// Group samples per model.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print bundle dimensions, training steps, noise scale and vocabulary.
    Inspect {
        #[arg(long)]
        bundle: PathBuf,
    },
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_data_error() || matches!(e, Error::Divergence { .. } | Error::NonFiniteLoss { .. }) {
            EXIT_DATA
        } else {
            EXIT_USAGE
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Synth {
            task,
            demos,
            seed,
            points,
            out,
        } => run_synth(&task, demos, seed, points, &out),
        Command::Train { config, data, out } => run_train(config.as_deref(), data, out),
        Command::Sample {
            bundle,
            scene,
            instruction,
            seed,
            out,
        } => run_sample(&bundle, &scene, &instruction, seed, out.as_deref()),
        Command::Eval {
            bundle,
            data,
            runs,
            report,
            seed,
        } => run_eval(&bundle, &data, runs, &report, seed),
        Command::Equicheck {
            bundle,
            mode,
            samples,
            seed,
        } => run_equicheck(&bundle, &mode, samples, seed),
        Command::Inspect { bundle } => run_inspect(&bundle),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run_synth(task: &str, demos: usize, seed: u64, points: usize, out: &Path) -> CliResult {
    if demos == 0 {
        return Err(usage("--demos must be at least 1"));
    }
    let dataset = synthesize(TaskId::parse(task)?, demos, seed, points)?;
    write_dataset(&dataset, out)?;
    println!("wrote {} records ({} demonstrations) to {}", dataset.records.len(), demos, out.display());
    Ok(())
}

fn run_train(config: Option<&Path>, data: Option<PathBuf>, out: Option<PathBuf>) -> CliResult {
    let config = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    };
    let from_config = |flag: Option<PathBuf>, value: &str, key: &str| -> Result<PathBuf, Failure> {
        flag.or_else(|| (!value.is_empty()).then(|| PathBuf::from(value)))
            .ok_or_else(|| usage(format!("missing --{key} (or `paths.{key}` in the config)")))
    };
    let data = from_config(data, &config.data_path, "data")?;
    let out = from_config(out, &config.bundle_path, "bundle")?;
    let dataset = read_dataset(&data)?;
    let vocabulary = Vocabulary::standard();

    let picks = dataset.by_phase(&[Phase::Pick]);
    let raw_gripper = match picks.first() {
        Some(r) => r.cloud_a.clone(),
        None => canonical_gripper(DEFAULT_GRIPPER_POINTS, GRIPPER_SEED)?,
    };
    let gripper = prepare_gripper(&raw_gripper, config.gripper_points, config.voxel_cell, config.train_seed)?;
    println!("config {} (profile {}), {} records", config.hash(), config.profile.name(), dataset.records.len());

    let fit = |name: &str, records: &[&DemonstrationRecord], variant: Variant| -> Result<_, Failure> {
        if records.is_empty() {
            println!("{name}: no records, skipped");
            return Ok(None);
        }
        let outcome = train(records, variant, vocabulary.len(), Some(&gripper), &config, |e| {
            println!("{name} step {:>7} loss {:.6e} lr {:.3e}", e.step, e.loss, e.lr)
        })?;
        Ok(Some(outcome.model))
    };
    let pick = fit("pick", &picks, Variant::Single)?;
    let place = fit("place", &dataset.by_phase(&[Phase::Preplace, Phase::Place]), Variant::Pair)?;
    let bundle = PolicyBundle {
        config: config.clone(),
        task: dataset.task.clone(),
        vocabulary,
        gripper,
        pick,
        place,
    };
    bundle.save(&out)?;
    println!("wrote bundle to {}", out.display());
    Ok(())
}

fn print_action(t: &RigidTransform) {
    for row in t.to_row_major().chunks(4) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
        println!("{}", cells.join(" "));
    }
}

fn run_sample(bundle_dir: &Path, scene: &[PathBuf], instruction: &str, seed: u64, out: Option<&Path>) -> CliResult {
    let bundle = PolicyBundle::load(bundle_dir)?;
    let id = bundle.vocabulary.id(instruction)?;
    let pre = bundle.preprocessing();
    let steps = bundle.config.flow_steps;
    let result = match scene {
        [object] => {
            let gen = FlowGenerator::new(bundle.pick_model()?, steps);
            f_pick(&gen, &bundle.gripper, &read_cloud(object)?, id, seed, pre)?
        }
        [a, b] => {
            let gen = FlowGenerator::new(bundle.place_model()?, steps);
            f_place(&gen, &read_cloud(a)?, &read_cloud(b)?, id, seed, pre)?
        }
        _ => return Err(usage("--scene takes one (pick) or two (place) cloud files")),
    };
    if result.is_degenerate() {
        eprintln!("warning: near-degenerate rigid fit");
    }
    print_action(&result.action_world);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_cloud(dir.join("generated_a.txt"), &result.generated_a)?;
        write_cloud(dir.join("generated_b.txt"), &result.generated_b)?;
    }
    Ok(())
}

fn report_paths(report: &Path) -> (PathBuf, PathBuf) {
    (report.with_extension("csv"), report.with_extension("svg"))
}

fn run_eval(bundle_dir: &Path, data: &Path, runs: Option<usize>, report: &Path, seed: Option<u64>) -> CliResult {
    let bundle = PolicyBundle::load(bundle_dir)?;
    let dataset = read_dataset(data)?;
    let settings = ProtocolSettings {
        runs: runs.unwrap_or(bundle.config.eval_runs),
        seed: seed.unwrap_or(bundle.config.eval_seed),
        pre: bundle.preprocessing(),
    };
    let steps = bundle.config.flow_steps;
    let mut stats: Vec<ErrorStats> = Vec::new();
    let groups = [
        ("pick", bundle.pick.as_ref(), dataset.by_phase(&[Phase::Pick])),
        ("place", bundle.place.as_ref(), dataset.by_phase(&[Phase::Preplace, Phase::Place])),
    ];
    for (label, model, records) in groups {
        let (Some(model), false) = (model, records.is_empty()) else {
            continue;
        };
        let factory: &GeneratorFactory<'_> =
            &|_: &DemonstrationRecord| Ok(Box::new(FlowGenerator::new(model, steps)) as Box<dyn Generator>);
        let s = table2_protocol(label, &records, factory, Some(&bundle.gripper), settings)?;
        println!(
            "{label}: {} runs, rotation deg min/mean/max {:.3}/{:.3}/{:.3}, translation cm {:.3}/{:.3}/{:.3}, success {:.1}%",
            s.runs(),
            s.rotation.min,
            s.rotation.mean,
            s.rotation.max,
            s.translation.min,
            s.translation.mean,
            s.translation.max,
            100.0 * s.success_rate()
        );
        stats.push(s);
    }
    if stats.is_empty() {
        return Err(usage("nothing to evaluate: no model in the bundle matches the dataset's records"));
    }
    let (csv, svg) = report_paths(report);
    let hash = bundle.config.hash();
    emit_report(&stats, &csv, ReportFormat::Csv, settings.seed, &hash)?;
    emit_report(&stats, &svg, ReportFormat::SvgScatter, settings.seed, &hash)?;
    println!("wrote {} and {}", csv.display(), svg.display());
    Ok(())
}

fn run_equicheck(bundle_dir: &Path, mode: &str, samples: usize, seed: u64) -> CliResult {
    let mode = CertificateMode::parse(mode)?;
    let bundle = PolicyBundle::load(bundle_dir)?;
    let task = TaskId::parse(&bundle.task)?;
    let (_, records) = make_task(task, seed)?;
    let settings = CertificateSettings {
        steps: bundle.config.flow_steps,
        points: bundle.config.points,
        cell: bundle.config.voxel_cell,
        gripper: Some(&bundle.gripper),
    };
    let mut failed = false;
    let mut checked = 0;
    for (label, model, phase) in [("pick", bundle.pick.as_ref(), Phase::Pick), ("place", bundle.place.as_ref(), Phase::Place)] {
        let (Some(model), Some(scene)) = (model, records.iter().find(|r| r.phase == phase)) else {
            continue;
        };
        let c = equivariance_certificate(model, scene, samples, mode, settings, seed)?;
        checked += 1;
        let verdict = match mode {
            CertificateMode::ForcedInvariant if c.passes() => "PASS",
            CertificateMode::ForcedInvariant => {
                failed = true;
                "FAIL"
            }
            CertificateMode::Learned => "reported",
        };
        println!(
            "{label} {}: {} samples, max deviation {:.3e} deg / {:.3e} m, mean {:.3e} deg / {:.3e} m [{verdict}]",
            mode.name(),
            c.samples,
            c.max_rotation_deg,
            c.max_translation_m,
            c.mean_rotation_deg,
            c.mean_translation_m
        );
    }
    if checked == 0 {
        return Err(usage("bundle contains no models"));
    }
    if failed {
        return Err(Failure {
            code: EXIT_ASSERTION,
            message: format!(
                "equivariance certificate exceeded {:e} deg / {:e} m",
                genreg::evalharness::Certificate::ROTATION_TOL_DEG,
                genreg::evalharness::Certificate::TRANSLATION_TOL_M
            ),
        });
    }
    Ok(())
}

fn run_inspect(bundle_dir: &Path) -> CliResult {
    let bundle = PolicyBundle::load(bundle_dir)?;
    println!("task: {}", bundle.task);
    println!("profile: {} (config {})", bundle.config.profile.name(), bundle.config.hash());
    println!("points: {}, flow steps: {}, gripper points: {}", bundle.config.points, bundle.config.flow_steps, bundle.gripper.len());
    for (label, model) in [("pick", bundle.pick.as_ref()), ("place", bundle.place.as_ref())] {
        let Some(m) = model else {
            println!("{label}: absent");
            continue;
        };
        let d = m.dims();
        println!(
            "{label}: {} variant, steps {}, sigma {:.6} m, coord scale {:.4}, dims feature {} language {} time {} mask {} (input {}), hidden {}, encoder hidden {}, {} parameters",
            m.variant().name(),
            m.store.step(),
            m.settings.sigma,
            m.settings.coord_scale,
            d.feature,
            d.language,
            d.time,
            d.mask,
            d.generator_input_dim(),
            d.hidden,
            d.encoder_hidden,
            m.store.num_scalars()
        );
    }
    println!("vocabulary ({} phrases):", bundle.vocabulary.len());
    for (i, p) in bundle.vocabulary.phrases().iter().enumerate() {
        println!("  {i:>3}  {p}");
    }
    Ok(())
}
