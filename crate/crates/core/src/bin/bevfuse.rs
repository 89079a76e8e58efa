use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bevfuse::bev::QueryMode;
use bevfuse::error::{Error, Result};
use bevfuse::experiment::{self, Axis, ExperimentConfig, Overrides, CHECKPOINT_FILE};
use bevfuse::fusion::FusionKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bevfuse", version, about = "Multi-modal BEV detection on synthetic desk-scale scenes")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// JSON experiment config; omitted fields keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (gen: the config's dataset path; otherwise runs/default).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// concat, avg or cnw.
    #[arg(long, global = true)]
    fusion: Option<FusionKind>,
    /// Probability of dropping a modality for an iteration.
    #[arg(long = "p-md", global = true)]
    p_md: Option<f64>,
    /// Share of dropped iterations that keep only LiDAR.
    #[arg(long = "p-l", global = true)]
    p_l: Option<f64>,
    /// shared or separate BEV queries for the two encoders.
    #[arg(long, global = true)]
    queries: Option<QueryMode>,
    /// Dataset directory, overriding the config.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// No training progress on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render the synthetic train/val dataset.
    Gen,
    /// Train a model; resumes when --out already holds this run.
    Train,
    /// Evaluate a checkpoint under the L+C, L and C conditions.
    Eval {
        /// Defaults to <out>/checkpoint.bin.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every variant along one axis.
    Ablate {
        /// fusion, md or queries
        axis: Axis,
    },
    /// Dump BEV variance maps and CNW weights for one validation scene.
    Inspect {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Validation scene index.
        #[arg(long, default_value_t = 0)]
        scene: usize,
    },
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: g.seed,
        fusion: g.fusion,
        p_md: g.p_md,
        p_l: g.p_l,
        queries: g.queries,
        dataset: g.data.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint_path(out: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.join(CHECKPOINT_FILE))
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(j) = g.jobs {
        if j == 0 {
            return Err(Error::Config(vec!["--jobs must be at least 1".into()]));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::Config(vec![e.to_string()]))?;
    }
    let verbose = !g.quiet;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("runs/default"));
    match &cli.cmd {
        Cmd::Gen => {
            let cfg = load_config(g)?;
            let dir = g.out.clone().unwrap_or_else(|| cfg.dataset.clone());
            let m = experiment::generate(&cfg, &dir)?;
            println!("wrote {} train and {} val scenes to {}", m.counts.train, m.counts.val, dir.display());
        }
        Cmd::Train => {
            let cfg = load_config(g)?;
            let t = experiment::train(&cfg, &out, verbose)?;
            match t.last_loss {
                Some(l) => println!(
                    "trained steps {}..{} (final loss {l:.4}); checkpoint {}",
                    t.start_step,
                    t.steps,
                    t.checkpoint.display()
                ),
                None => println!("nothing to train; checkpoint {}", t.checkpoint.display()),
            }
        }
        Cmd::Eval { checkpoint } => {
            let r = experiment::evaluate_checkpoint(&checkpoint_path(&out, checkpoint), g.data.as_deref(), &out)?;
            println!("mAP L+C {:.4}  L {:.4}  C {:.4}  summary {:.4}", r.map_lc, r.map_l, r.map_c, r.summary_map);
        }
        Cmd::Ablate { axis } => {
            let cfg = load_config(g)?;
            let t = experiment::ablate(&cfg, *axis, &out, verbose)?;
            print!("{}", t.to_csv().lines().skip(2).map(|l| format!("{l}\n")).collect::<String>());
        }
        Cmd::Inspect { checkpoint, scene } => {
            let o = experiment::inspect(&checkpoint_path(&out, checkpoint), g.data.as_deref(), *scene, &out)?;
            println!("wrote {} and {}", o.cam_pgm.display(), o.lidar_pgm.display());
            if let Some(p) = &o.weights_csv {
                println!("wrote {}", p.display());
            }
            if let Some(n) = &o.notice {
                println!("{n}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bevfuse: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
