//! Command-line front end: dataset generation, training, inference,
//! evaluation and mask inspection.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{generate_scenes, load_dataset, write_dataset, write_pfm, write_png_mask, write_png_preview};
use crate::error::{Error, Result};
use crate::fusion::ResidualNet;
use crate::metrics::{write_report_csv, MetricReport};
use crate::pipeline::{evaluate_scene, infer_scene, EvalSpec, PreparedScene};
use crate::tiling::GridSpec;
use crate::train::{load_parameters, train, StepLog, TrainOutput, TrainState};

#[derive(Debug, Parser)]
#[command(name = "pro-refine", version, about = "Patch-wise depth refinement on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply to anything it omits.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the run seed (and the generator seed for gen-data).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Inference grid as ROWSxCOLS; overrides `infer.grid`.
    #[arg(long, global = true)]
    pub grid: Option<GridSpec>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long, default_value_t = 32)]
        count: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train the residual network on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Resume from a saved training state.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Refine scenes with a checkpoint and write depth maps.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Only this scene; every scene when absent.
        #[arg(long)]
        scene: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint against `depth_true`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write the unreliable, edge and reliable masks of a scene as PNGs.
    InspectMask {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: String,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData { common, .. }
            | Command::Train { common, .. }
            | Command::Infer { common, .. }
            | Command::Eval { common, .. }
            | Command::InspectMask { common, .. } => common,
        }
    }
}

fn resolve_config(common: &Common, gen_data: bool) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        if gen_data {
            cfg.gen.seed = seed;
        } else {
            cfg.seed = seed;
        }
    }
    if let Some(grid) = common.grid {
        cfg.infer.grid = grid;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory; pass --out or set `out`".into()))?;
    Ok((cfg, out))
}

fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() && !force {
            return Err(Error::Data(format!(
                "{} is not empty; pass --force to write into it",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn prepare_dataset(root: &Path, cfg: &RunConfig) -> Result<Vec<PreparedScene>> {
    load_dataset(root)?
        .into_iter()
        .map(|(entry, scene)| PreparedScene::new(&entry.scene_id, scene, &cfg.oracle, &cfg.bfm))
        .collect()
}

fn load_net(path: &Path, cfg: &RunConfig) -> Result<(ResidualNet, crate::fusion::ParameterStore)> {
    let params = load_parameters(path)?;
    let net = ResidualNet::bind(&cfg.net, &params)?;
    Ok((net, params))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn eval_spec(cfg: &RunConfig) -> EvalSpec {
    EvalSpec {
        grid: cfg.infer.grid,
        patch: cfg.crop_patch(),
        ce_overlap: cfg.ce_overlap(),
        br_tolerance: cfg.eval.br_tolerance,
        d3r_cell: cfg.eval.d3r_cell,
        d3r_threshold: cfg.eval.d3r_threshold,
    }
}

/// Executes one parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    let gen_data = matches!(cli.command, Command::GenData { .. });
    let (cfg, out) = resolve_config(common, gen_data)?;
    let force = common.force;
    match &cli.command {
        Command::GenData { count, .. } => {
            prepare_out(&out, force)?;
            write_dataset(&out, &generate_scenes(&cfg.gen, *count)?)?;
            eprintln!("wrote {count} scenes to {}", out.display());
        }
        Command::Train { data, resume, .. } => {
            let scenes = prepare_dataset(data, &cfg)?;
            prepare_out(&out, force)?;
            std::fs::write(out.join("config.toml"), cfg.to_toml()).map_err(|e| Error::io(&out, e))?;
            let state = match resume {
                Some(path) => TrainState::load(path)?,
                None => TrainState::new(ResidualNet::init(&cfg.net, cfg.seed)?.1),
            };
            let mut report = |log: &StepLog, total: u64| {
                eprintln!(
                    "step {}/{total} loss {:.6} masked {:.6} con {:.6}",
                    log.step + 1,
                    log.loss,
                    log.masked,
                    log.con
                );
            };
            let state = train(
                &cfg,
                &scenes,
                state,
                TrainOutput {
                    dir: Some(&out),
                    on_step: &mut report,
                },
            )?;
            eprintln!("trained {} steps; checkpoint {}", state.step, out.join("final.pro").display());
        }
        Command::Infer { checkpoint, data, scene, .. } => {
            let (net, params) = load_net(checkpoint, &cfg)?;
            let mut scenes = prepare_dataset(data, &cfg)?;
            if let Some(id) = scene {
                scenes.retain(|s| &s.id == id);
                if scenes.is_empty() {
                    return Err(Error::Data(format!("scene `{id}` is not in {}", data.display())));
                }
            }
            prepare_out(&out, force)?;
            for prep in &scenes {
                let inf = infer_scene(&net, &params, prep, cfg.infer.grid)?;
                let dir = out.join(&prep.id);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_pfm(&inf.depth, &dir.join("depth.pfm"))?;
                write_png_preview(&inf.depth, &dir.join("depth.png"))?;
                write_png_preview(&inf.residual_canvas, &dir.join("residual.png"))?;
            }
            eprintln!("refined {} scenes into {}", scenes.len(), out.display());
        }
        Command::Eval { checkpoint, data, .. } => {
            let (net, params) = load_net(checkpoint, &cfg)?;
            let scenes = prepare_dataset(data, &cfg)?;
            prepare_out(&out, force)?;
            let spec = eval_spec(&cfg);
            let mut reports = Vec::with_capacity(scenes.len());
            let mut probe = csv::Writer::from_writer(create(&out.join("transparent.csv"))?);
            let csv_err = |e: csv::Error| Error::Data(e.to_string());
            probe
                .write_record(["scene_id", "absrel_transparent", "absrel_opaque", "transparent_pixels"])
                .map_err(csv_err)?;
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            for prep in &scenes {
                let e = evaluate_scene(&net, &params, prep, &spec)?;
                probe
                    .write_record([
                        prep.id.clone(),
                        cell(e.absrel_transparent),
                        cell(e.absrel_opaque),
                        e.transparent_pixels.to_string(),
                    ])
                    .map_err(csv_err)?;
                reports.push(e.report);
            }
            probe.flush().map_err(|e| Error::io(out.join("transparent.csv"), e))?;
            let metrics = out.join("metrics.csv");
            write_report_csv(create(&metrics)?, &reports).map_err(|e| Error::io(&metrics, e))?;
            let mean = MetricReport::aggregate("mean", &reports);
            eprintln!(
                "{} scenes: absrel {} delta1 {} ce {}",
                reports.len(),
                cell(mean.absrel),
                cell(mean.delta1),
                cell(mean.ce)
            );
        }
        Command::InspectMask { data, scene, .. } => {
            let scenes = prepare_dataset(data, &cfg)?;
            let prep = scenes
                .iter()
                .find(|s| &s.id == scene)
                .ok_or_else(|| Error::Data(format!("scene `{scene}` is not in {}", data.display())))?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_png_mask(&prep.masks.unreliable, &out.join(format!("{scene}_unreliable.png")))?;
            write_png_mask(&prep.masks.edge, &out.join(format!("{scene}_edge.png")))?;
            write_png_mask(&prep.masks.reliable, &out.join(format!("{scene}_bfm.png")))?;
            eprintln!(
                "{scene}: unreliable {:.3}, reliable {:.3}",
                prep.masks.unreliable.mean(),
                prep.masks.reliable.mean()
            );
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
