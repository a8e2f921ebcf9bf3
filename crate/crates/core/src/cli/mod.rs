//! Command-line entry points: `synth`, `train`, `render` and `eval`.
//!
//! Exit codes: 0 on success, 1 for data, training and I/O failures, 2 for
//! malformed invocations. Failures print one `error:` line on stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate, write_metrics_csv};
use crate::renderer::ImageRequest;
use crate::sceneio::{synth_scene, write_pfm, FloatBuffer, Motion, SceneDataset, SynthSpec};
use crate::training::{
    checkpoint_load, checkpoint_save, train, write_loss_csv, Ablation, TrainConfig, TrainState,
    TrainingSet,
};

#[derive(Debug, Parser)]
#[command(name = "wildnerf", version, about = "Dynamic radiance fields from posed video frames")]
pub struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "WILDSYNTH_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a ray-traced synthetic dataset.
    Synth(SynthArgs),
    /// Optimize the fields on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Render one camera at one time step.
    Render(RenderArgs),
    /// Compare renders of a split with its ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "translate")]
    pub preset: Motion,
    #[arg(long, default_value_t = 64)]
    pub resolution: u32,
    #[arg(long, default_value_t = 8)]
    pub times: usize,
    #[arg(long, default_value_t = 3)]
    pub cameras: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_pruning: bool,
    #[arg(long, value_enum)]
    pub ablate: Option<Ablation>,
    #[arg(long)]
    pub deterministic: bool,
    /// TOML file with `TrainConfig` fields; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Loss history; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Camera id.
    #[arg(long)]
    pub camera: u32,
    /// Time index.
    #[arg(long)]
    pub time: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Expected-depth map as PFM.
    #[arg(long)]
    pub depth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Scene label; defaults to the dataset directory name.
    #[arg(long)]
    pub scene: Option<String>,
    /// Configuration label; defaults to `full` or the ablation name.
    #[arg(long)]
    pub label: Option<String>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            1
        }
    }
}

fn one_line(e: &Error) -> String {
    e.to_string().replace('\n', " ")
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be positive".into()));
        }
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a).map(|summary| println!("{summary}")),
        Command::Render(a) => cmd_render(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let scene = synth_scene(SynthSpec {
        resolution: a.resolution,
        num_times: a.times,
        num_cameras: a.cameras,
        motion: a.preset,
        seed: a.seed,
    })?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    scene.write(&a.out)?;
    Ok(())
}

/// Built-in defaults, then the TOML file, then flags.
pub fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(n) = a.iters {
        c.max_iters = n;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if a.no_pruning {
        c.pruning_enabled = false;
    }
    if a.ablate.is_some() {
        c.ablation = a.ablate;
    }
    if a.deterministic {
        c.deterministic = true;
    }
    c.validate()?;
    Ok(c)
}

/// Loads a dataset with the frame size training uses.
pub fn load_dataset(dir: &Path, config: &TrainConfig) -> Result<SceneDataset> {
    let ds = SceneDataset::load(dir)?;
    let cam = ds.camera_of(0);
    let resize = config.resize_for(cam.width, cam.height);
    Ok(ds.with_resize(resize))
}

/// Trains and writes the checkpoint and loss CSV. Returns the summary line.
pub fn cmd_train(a: &TrainArgs) -> Result<String> {
    let config = train_config(a)?;
    let dataset = load_dataset(&a.data, &config)?;
    let set = TrainingSet::load(dataset, &a.split)?;
    let until = config.max_iters;
    let mut state = TrainState::for_set(config, &set)?;
    let start = Instant::now();
    train(&mut state, &set, until, |_| {})?;
    let wall = start.elapsed().as_secs_f64();
    checkpoint_save(&state, &a.out)?;
    let csv = a.loss_csv.clone().unwrap_or_else(|| loss_csv_path(&a.out));
    write_loss_csv(&csv, &state.history)?;
    let last = state.history.last().map_or(0.0, |r| r.l_total);
    Ok(format!("iters {} loss {last:.6} wall {wall:.2}s", state.iter))
}

pub fn loss_csv_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_stem().unwrap_or_default().to_os_string();
    name.push(".loss.csv");
    ckpt.with_file_name(name)
}

/// Checkpoint plus the dataset it was trained on, checked for agreement.
pub fn load_pair(ckpt: &Path, data: &Path) -> Result<(TrainState, SceneDataset)> {
    let state = checkpoint_load(ckpt)?;
    let dataset = load_dataset(data, &state.config)?;
    if dataset.time_count != state.config.field.time_count {
        return Err(Error::Data(format!(
            "checkpoint expects {} time steps but {} has {}",
            state.config.field.time_count,
            data.display(),
            dataset.time_count
        )));
    }
    Ok((state, dataset))
}

pub fn cmd_render(a: &RenderArgs) -> Result<()> {
    let (state, dataset) = load_pair(&a.ckpt, &a.data)?;
    if !dataset.cameras.iter().any(|c| c.id == a.camera) {
        return Err(Error::Data(format!(
            "camera {} not in dataset ({} cameras)",
            a.camera,
            dataset.cameras.len()
        )));
    }
    let frame = dataset
        .frames
        .iter()
        .position(|f| f.camera == a.camera && f.time == a.time)
        .ok_or_else(|| Error::Data(format!("no frame for camera {} at time {}", a.camera, a.time)))?;
    let camera = dataset.camera_model(frame);
    let mask = dataset.load_mask(frame)?;
    let out = state.renderer().render_image(
        &state.bundle,
        state.active_grid(),
        &ImageRequest {
            camera: &camera,
            pose: &dataset.frames[frame].pose,
            time: dataset.frame_time(frame),
            mask: mask.as_ref(),
            force_dynamic: state.force_dynamic(),
        },
    )?;
    out.rgb.save_png(&a.out)?;
    if let Some(p) = &a.depth {
        write_pfm(
            p,
            &FloatBuffer {
                width: out.depth.width,
                height: out.depth.height,
                channels: 1,
                data: out.depth.data,
            },
        )?;
    }
    Ok(())
}

pub fn config_label(ablation: Option<Ablation>) -> &'static str {
    match ablation {
        None => "full",
        Some(Ablation::Background) => "no_background",
        Some(Ablation::Flow) => "no_flow",
        Some(Ablation::Deformation) => "no_deformation",
    }
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (state, dataset) = load_pair(&a.ckpt, &a.data)?;
    let frames = evaluate(&state, &dataset, &a.split)?;
    let scene = a.scene.clone().unwrap_or_else(|| {
        a.data
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "scene".into())
    });
    let label = a
        .label
        .clone()
        .unwrap_or_else(|| config_label(state.config.ablation).into());
    let row = aggregate(&scene, &a.split, &label, &frames);
    write_metrics_csv(&a.out, &[row])
}
