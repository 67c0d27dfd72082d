use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use zoomvqa::harness::ablation::{self, Toggles};
use zoomvqa::harness::{checkpoint, eval, gradsuite, train, RunConfig};
use zoomvqa::media::{self, Manifest, Split, SynthOptions};
use zoomvqa::vqa::{self, PaddingType};
use zoomvqa::Error;

#[derive(Parser)]
#[command(name = "zoomvqa", version, about = "Two-branch no-reference video quality assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the desk-scale configuration instead of the full-scale one.
    #[arg(long)]
    toy: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic noise-graded dataset (train and test manifests).
    SynthData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 64)]
        n_train: usize,
        #[arg(long, default_value_t = 16)]
        n_test: usize,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 96)]
        height: usize,
        #[arg(long, default_value_t = 24)]
        frames: usize,
        #[arg(long, default_value_t = 8)]
        fps: u64,
    },
    /// Train the frame branch.
    TrainIqa {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the clip branch.
    TrainVqa {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Score a manifest with both branches and write report.json / report.txt.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        iqa_ckpt: PathBuf,
        #[arg(long)]
        vqa_ckpt: PathBuf,
    },
    /// Train and evaluate head and tokenization variants.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Manifest to evaluate on (defaults to the training manifest).
        #[arg(long)]
        eval_manifest: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        pam: Option<Vec<bool>>,
        #[arg(long, value_delimiter = ',')]
        fpa: Option<Vec<bool>>,
        #[arg(long, value_delimiter = ',')]
        padding: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        frag_size: Option<Vec<usize>>,
    },
    /// Render the quality map of one view as a PPM heatmap.
    Qmap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        vqa_ckpt: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 220)]
        per_branch: usize,
        #[arg(long, default_value_t = 64)]
        per_loss: usize,
    },
    /// Write one clip view of a video as .rgb24 for inspection.
    FragmentDump {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        video: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parameter(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult = Result<ExitCode, Failure>;

fn config(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None if c.toy => RunConfig::toy(),
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if cfg.paths.out_dir.is_none() {
        cfg.paths.out_dir = Some(c.out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn manifest(given: &Option<PathBuf>, fallback: &Option<PathBuf>) -> Result<Manifest, Failure> {
    let path = given
        .as_ref()
        .or(fallback.as_ref())
        .ok_or_else(|| Failure::Config("no manifest given (--manifest or paths in --config)".into()))?;
    Ok(Manifest::load(path)?)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = cfg.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::SynthData { common, n_train, n_test, width, height, frames, fps } => {
            let cfg = config(&common)?;
            let dir = out_dir(&cfg)?;
            let base =
                SynthOptions { seed: cfg.seed, width, height, num_frames: frames, fps_num: fps, ..Default::default() };
            let train =
                media::synth_dataset(&SynthOptions { n_videos: n_train, split: Split::Train, ..base.clone() }, &dir)?;
            if n_test > 0 {
                media::synth_dataset(
                    &SynthOptions { n_videos: n_test, split: Split::Test, norm: Some(train.norm_stats), ..base },
                    &dir,
                )?;
            }
            println!("wrote {} train and {} test videos to {}", n_train, n_test, dir.display());
        }
        Command::TrainIqa { common, manifest: m } => {
            let cfg = config(&common)?;
            let m = manifest(&m, &cfg.paths.train_manifest)?;
            let dir = out_dir(&cfg)?;
            let t = train::train_iqa(&m, &cfg)?;
            checkpoint::save_iqa(dir.join("iqa.ckpt"), &t.params)?;
            write_json(&dir.join("iqa_loss.json"), &t.curve)?;
            println!("iqa: {} steps, final loss {:.5}", t.curve.steps.len(), t.curve.last().unwrap_or(f64::NAN));
        }
        Command::TrainVqa { common, manifest: m } => {
            let cfg = config(&common)?;
            let m = manifest(&m, &cfg.paths.train_manifest)?;
            let dir = out_dir(&cfg)?;
            let t = train::train_vqa(&m, &cfg)?;
            checkpoint::save_vqa(dir.join("vqa.ckpt"), &t.params)?;
            write_json(&dir.join("vqa_loss.json"), &t.curve)?;
            println!(
                "vqa: {} steps ({} skipped), final loss {:.5}",
                t.curve.steps.len(),
                t.curve.skipped,
                t.curve.last().unwrap_or(f64::NAN)
            );
        }
        Command::Eval { common, manifest: m, iqa_ckpt, vqa_ckpt } => {
            let cfg = config(&common)?;
            let m = manifest(&m, &cfg.paths.test_manifest)?;
            let dir = out_dir(&cfg)?;
            let report = eval::evaluate_checkpoints(&m, &iqa_ckpt, &vqa_ckpt, &cfg)?;
            report.write(&dir)?;
            print!("{}", report.to_table());
            if !report.failures.is_empty() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Ablate { common, manifest: m, eval_manifest, pam, fpa, padding, frag_size } => {
            let cfg = config(&common)?;
            let train_m = manifest(&m, &cfg.paths.train_manifest)?;
            let eval_m = match &eval_manifest {
                Some(p) => Manifest::load(p)?,
                None => train_m.clone(),
            };
            let mut t = Toggles::standard(&cfg);
            if let Some(v) = pam {
                t.pam = v;
            }
            if let Some(v) = fpa {
                t.fpa = v;
            }
            if let Some(v) = padding {
                t.padding = v.iter().map(|s| s.parse::<PaddingType>()).collect::<Result<_, _>>()?;
            }
            if let Some(v) = frag_size {
                t.frag_size = v;
            }
            let dir = out_dir(&cfg)?;
            let table = ablation::ablation(&train_m, &eval_m, &cfg, &t)?;
            write_json(&dir.join("ablation.json"), &table)?;
            fs::write(dir.join("ablation.txt"), table.to_table()).map_err(|e| Failure::Runtime(e.to_string()))?;
            print!("{}", table.to_table());
        }
        Command::Qmap { common, video, vqa_ckpt, view } => {
            let cfg = config(&common)?;
            let dir = out_dir(&cfg)?;
            let v = media::load_raw_video(&video)?;
            let params = checkpoint::load_vqa(&vqa_ckpt)?;
            let spec = cfg.vqa.view_spec();
            let clip = spec.view(&v, view, &mut vqa::view_rng(cfg.seed, view))?;
            let (y, q) = vqa::vqa_forward(&clip, &params)?;
            let src = media::ensure_min_edge(&v, spec.grid * spec.frag_size)?;
            let frame = src.frame_tensor(clip.temporal_indices[0]);
            let path = dir.join(format!("qmap_view{view}.ppm"));
            vqa::render_quality_map(&q, Some(&frame), &path)?;
            println!("view {view}: score {y:.5}, map mean {:.5}, wrote {}", q.mean(), path.display());
        }
        Command::Gradcheck { common, per_branch, per_loss } => {
            let cfg = config(&common)?;
            let report = gradsuite::run(cfg.seed, gradsuite::SuiteBudget { per_loss, per_branch })?;
            print!("{}", report.to_table());
            println!("checked {} coordinates, max relative error {:.3e}", report.checked(), report.max_rel_err());
            if !report.pass() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::FragmentDump { common, video, view } => {
            let cfg = config(&common)?;
            let dir = out_dir(&cfg)?;
            let v = media::load_raw_video(&video)?;
            let spec = cfg.vqa.view_spec();
            let clip = spec.view(&v, view, &mut vqa::view_rng(cfg.seed, view))?;
            let path = dir.join(format!("view{view}.rgb24"));
            clip.dump(&path, v.fps_num, v.fps_den * cfg.vqa.stride as u64)?;
            println!("frames {:?}, wrote {}", clip.temporal_indices, path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
