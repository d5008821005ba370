use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use voxgen::harness::{
    complete_cmd, eval_benchmark, gen_data, render_mesh_cmd, sample_cmd, BaselineTrainer,
    MeshFitConfig, Profile, RunConfig, SampleRequest, Trainer,
};
use voxgen::{Error, Result};

#[derive(Parser)]
#[command(
    name = "voxgen",
    version,
    about = "Sequential generative models of 3D structure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON file overriding the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "toy")]
    profile: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train and test splits as VOX1 datasets.
    GenData(Common),
    /// Train a model, resuming from `<out>/checkpoint` when present.
    Train(Common),
    /// Importance-weighted held-out bound of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        importance: Option<usize>,
    },
    /// Prior samples from a checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Comma-separated class ids for class-conditional models.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<usize>>,
    },
    /// Fill in the hidden half of held-out volumes.
    Complete {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        iters: usize,
    },
    /// Recover a mesh from a rendered scene through the rasterizer.
    RenderMesh(Common),
    /// Train the deterministic three-view baseline.
    TrainBaseline(Common),
}

fn profile(c: &Common) -> Result<Profile> {
    c.profile.parse()
}

fn run_config(c: &Common) -> Result<RunConfig> {
    let p = profile(c)?;
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(p, path)?,
        None => RunConfig::for_profile(p),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mesh_config(c: &Common) -> Result<MeshFitConfig> {
    let mut base = serde_json::to_value(match profile(c)? {
        Profile::Toy => MeshFitConfig::default(),
        Profile::Paper => MeshFitConfig {
            width: 64,
            height: 64,
            hidden_size: 300,
            read_size: 256,
            steps: 2000,
            ..Default::default()
        },
    })?;
    if let Some(path) = &c.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let user: Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let Value::Object(map) = user else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        for (k, v) in map {
            base[k] = v;
        }
    }
    let mut cfg: MeshFitConfig =
        serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn append(path: &Path) -> Result<File> {
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}

fn write_config(out: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(value)?,
    )?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::GenData(c) => {
            let cfg = run_config(&c)?;
            create_out(&c.out)?;
            let (train, test) = gen_data(&cfg, &c.out)?;
            writeln!(
                stdout,
                "{}",
                serde_json::json!({"kind": "gen_data", "train": train.entries.len(), "test": test.entries.len()})
            )?;
        }
        Command::Train(c) => {
            let cfg = run_config(&c)?;
            create_out(&c.out)?;
            let ckpt = c.out.join(voxgen::harness::train::CHECKPOINT);
            let mut trainer = if ckpt.join(voxgen::harness::checkpoint::MANIFEST).exists() {
                let t = Trainer::<f32>::resume(&ckpt, Some(cfg.steps))?;
                let again: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg)?)?;
                if again != t.cfg {
                    return Err(Error::Config(
                        "existing checkpoint was trained with a different config".into(),
                    ));
                }
                t
            } else {
                Trainer::<f32>::new(cfg.clone())?
            };
            write_config(&c.out, &cfg)?;
            let mut log = append(&c.out.join(voxgen::harness::train::METRICS))?;
            let report = trainer.run(Some(&c.out), &mut log)?;
            writeln!(stdout, "{}", serde_json::to_string(&report)?)?;
        }
        Command::Eval {
            common,
            checkpoint,
            importance,
        } => {
            create_out(&common.out)?;
            let n = match importance {
                Some(n) => n,
                None => {
                    voxgen::harness::load_model::<f32>(&checkpoint)?
                        .cfg
                        .eval_importance
                }
            };
            if n == 0 {
                return Err(Error::Config("--importance must be at least 1".into()));
            }
            let report = eval_benchmark(&checkpoint, n)?;
            let line = serde_json::to_string(&report)?;
            writeln!(append(&common.out.join("eval.jsonl"))?, "{line}")?;
            writeln!(stdout, "{line}")?;
        }
        Command::Sample {
            common,
            checkpoint,
            n,
            classes,
        } => {
            profile(&common)?;
            let req = SampleRequest {
                n,
                seed: common.seed.unwrap_or(0),
                classes,
            };
            let files = sample_cmd(&checkpoint, &common.out, &req)?;
            writeln!(
                stdout,
                "{}",
                serde_json::json!({"kind": "sample", "files": files.len()})
            )?;
        }
        Command::Complete {
            common,
            checkpoint,
            n,
            iters,
        } => {
            profile(&common)?;
            if iters == 0 {
                return Err(Error::Config("--iters must be at least 1".into()));
            }
            create_out(&common.out)?;
            let mut log = File::create(common.out.join("completion.jsonl"))?;
            let reports = complete_cmd(
                &checkpoint,
                &common.out,
                n,
                iters,
                common.seed.unwrap_or(0),
                &mut log,
            )?;
            writeln!(
                stdout,
                "{}",
                serde_json::json!({"kind": "complete", "snapshots": reports.len()})
            )?;
        }
        Command::RenderMesh(c) => {
            let cfg = mesh_config(&c)?;
            create_out(&c.out)?;
            write_config(&c.out, &cfg)?;
            let mut log = File::create(c.out.join(voxgen::harness::train::METRICS))?;
            let files = render_mesh_cmd(&cfg, &c.out, &mut log)?;
            writeln!(
                stdout,
                "{}",
                serde_json::json!({"kind": "render_mesh", "files": files.len()})
            )?;
        }
        Command::TrainBaseline(c) => {
            let cfg = run_config(&c)?;
            create_out(&c.out)?;
            write_config(&c.out, &cfg)?;
            let mut log = File::create(c.out.join(voxgen::harness::train::METRICS))?;
            let report =
                BaselineTrainer::<f32>::new(cfg)?.run(Some(&c.out.join("baseline")), &mut log)?;
            writeln!(stdout, "{}", serde_json::to_string(&report)?)?;
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidCamera { .. } => 2,
        Error::Format(_)
        | Error::BadMagic { .. }
        | Error::TruncatedFile(_)
        | Error::LabelCountMismatch { .. }
        | Error::CheckpointCorrupt(_)
        | Error::ContextMismatch(_)
        | Error::ShapeMismatch(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Image(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
