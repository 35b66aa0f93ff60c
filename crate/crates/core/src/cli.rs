//! Command-line surface: scene generation, training, merging, evaluation and
//! visualization, with a JSON manifest per segmentation run.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
//! 4 numeric divergence during training.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{evaluate_oracle, evaluate_run, EvalError, JaccardReport};
use crate::flowfield::{
    encode_pgm, flow_to_color, read_flo, read_pgm, write_ppm, FlowError, LabelMap, MaxMagnitude, RgbImage,
};
use crate::gwm_energy::SoftMasks;
use crate::motion_models::ModelFamily;
use crate::pipeline::{merge_scene, scene_masks};
use crate::scenes::{self, heldout_pair, preset, Scene, SceneError};
use crate::segmenter::{train_internal, Mode, Segmenter, TrainConfig, TrainError};

pub const GIT_DESCRIBE: &str = env!("GWM_GIT_DESCRIBE");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::UnknownPreset(_) | SceneError::InvalidSpec(_) | SceneError::SpriteOutOfBounds { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::DivergedLoss { .. } => CliError::Diverged(e.to_string()),
            TrainError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Io(e.to_string())
    }
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Heuristic,
    Oracle,
}

/// Settings shared by every command; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Scene preset for `gen`.
    pub preset: String,
    /// Seeds both scene noise (`gen`) and parameter initialization (`segment`).
    pub seed: u64,
    pub mode: Mode,
    pub eval_mode: EvalMode,
    /// Training settings; `train.seed` is always overwritten by `seed`.
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: "smoke".into(),
            seed: 0,
            mode: Mode::PerPixel,
            eval_mode: EvalMode::Heuristic,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "gwm", version = GIT_DESCRIBE, about = "Unsupervised object segmentation from optical flow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic scene directory.
    Gen(GenArgs),
    /// Train a segmenter on a scene and write masks plus a manifest.
    Segment(SegmentArgs),
    /// Merge stored soft masks into binary foreground maps.
    Merge(MergeArgs),
    /// Score predictions against a scene's ground truth.
    Eval(EvalArgs),
    /// Render a flow field, soft masks or a label map as a PPM.
    Viz(VizArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// constant, affine or quadratic12
    #[arg(long)]
    pub family: Option<ModelFamily>,
    /// perpixel or linear
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(io_at(path))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.k {
            cfg.train.k = k;
        }
        if let Some(f) = self.family {
            cfg.train.family = f;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(i) = self.iters {
            cfg.train.iterations = i;
        }
        if let Some(lr) = self.lr {
            cfg.train.learning_rate = Some(lr);
        }
        cfg.train.seed = cfg.seed;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// smoke, two-sprites, parallax, nonrigid-proxy or heldout-pair
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Re-check the scene invariants and the written files.
    #[arg(long)]
    pub verify: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// Scene directory written by `gen`.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct MergeArgs {
    /// Directory holding `masks_%04d.bin`.
    #[arg(long)]
    pub masks: PathBuf,
    /// Scene directory supplying the frames' colors.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory with `fg_%04d.pgm` (heuristic) or `masks_%04d.bin` (oracle).
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, value_enum)]
    pub eval_mode: Option<EvalMode>,
    /// JSON report path; defaults to `<pred>/eval_<mode>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct VizArgs {
    /// `.flo` flow, `.bin` soft masks or `.pgm` label map.
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fixed flow magnitude for full saturation; default is the 99th percentile.
    #[arg(long)]
    pub max_mag: Option<f64>,
    /// Label count of a `.pgm` input (its gray levels are evenly spaced).
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))?;
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Segment(a) => cmd_segment(&a),
        Command::Merge(a) => cmd_merge(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Viz(a) => cmd_viz(&a),
    }
}

/// Applies `GWM_THREADS` (0 or unset = one thread per core).
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("GWM_THREADS") else { return Ok(()) };
    let n: usize = value.trim().parse().map_err(|_| CliError::Config(format!("GWM_THREADS='{value}' is not a count")))?;
    if n > 0 {
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(io_at(path))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_at(path))
}

fn write_scene(scene: &Scene, dir: &Path, verify: bool) -> Result<(), CliError> {
    if verify {
        scenes::verify(scene).map_err(|e| CliError::Config(e.to_string()))?;
    }
    scenes::export(scene, dir)?;
    if verify {
        let back = scenes::load(dir)?;
        if &back != scene {
            return Err(CliError::Io(format!("{}: reloaded scene differs from the generated one", dir.display())));
        }
    }
    Ok(())
}

pub fn cmd_gen(args: &GenArgs) -> Result<String, CliError> {
    let cfg = args.overrides.resolve()?;
    let name = args.preset.clone().unwrap_or(cfg.preset);
    let spec = preset(&name, cfg.seed)?;
    write_scene(&scenes::generate(&spec)?, &args.out, args.verify)?;
    if name == "heldout-pair" {
        let test = scenes::generate(&heldout_pair(cfg.seed).1)?;
        write_scene(&test, &args.out.join("test"), args.verify)?;
    }
    Ok(format!("wrote {name} (seed {}) to {}\n", cfg.seed, args.out.display()))
}

const MASK_MAGIC: &[u8; 4] = b"GWMK";

/// Soft-mask dump: `GWMK`, then K, width, height as little-endian u32, then
/// the pixel-major probabilities as little-endian f64.
pub fn encode_masks(masks: &SoftMasks) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * masks.probs().len());
    out.extend_from_slice(MASK_MAGIC);
    for v in [masks.k(), masks.width(), masks.height()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for p in masks.probs() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_masks(bytes: &[u8]) -> Result<SoftMasks, String> {
    if bytes.len() < 16 || &bytes[..4] != MASK_MAGIC {
        return Err("not a soft-mask file".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (k, w, h) = (word(0), word(1), word(2));
    let count = k.checked_mul(w).and_then(|n| n.checked_mul(h)).ok_or("mask dimensions overflow")?;
    if bytes.len() != 16 + 8 * count {
        return Err(format!("expected {} bytes, found {}", 16 + 8 * count, bytes.len()));
    }
    let probs = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    SoftMasks::new(k, w, h, probs).map_err(|e| e.to_string())
}

fn read_masks(path: &Path) -> Result<SoftMasks, CliError> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    decode_masks(&bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_mask_dir(dir: &Path, frames: usize) -> Result<Vec<SoftMasks>, CliError> {
    (0..frames).map(|t| read_masks(&dir.join(format!("masks_{t:04}.bin")))).collect()
}

fn write_foreground(dir: &Path, fg: &[LabelMap]) -> Result<(), CliError> {
    for (t, m) in fg.iter().enumerate() {
        let gray: Vec<u8> = m.data().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
        write_file(&dir.join(format!("fg_{t:04}.pgm")), &encode_pgm(m.width(), m.height(), &gray))?;
    }
    Ok(())
}

/// Run record written next to the masks; no timestamps, so reruns are byte-identical.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Shortest decimal strings that parse back to the exact values.
    pub initial_loss: String,
    pub final_loss: String,
    pub merge: String,
    pub outputs: Vec<String>,
}

pub fn cmd_segment(args: &SegmentArgs) -> Result<String, CliError> {
    let cfg = args.overrides.resolve()?;
    let scene = scenes::load(&args.scene)?;
    let frames: Vec<_> = scene.frames.iter().map(|f| (f.image.clone(), f.flow.clone())).collect();
    let result = train_internal(&frames, &cfg.train, cfg.mode)?;
    let masks = scene_masks(&result.segmenter, &scene)?;
    let (fg, merge) = merge_scene(&scene, &masks, cfg.train.weight_floor).map_err(|e| CliError::Io(e.to_string()))?;

    create_dir(&args.out)?;
    let mut outputs = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<(), CliError> {
        write_file(&args.out.join(&name), &bytes)?;
        outputs.push(name);
        Ok(())
    };
    let k = cfg.train.k;
    for (t, m) in masks.iter().enumerate() {
        let gray: Vec<u8> = m.argmax().iter().map(|&c| crate::flowfield::component_gray(c, k)).collect();
        put(format!("components_{t:04}.pgm"), encode_pgm(m.width(), m.height(), &gray))?;
        put(format!("masks_{t:04}.bin"), encode_masks(m))?;
    }
    write_foreground(&args.out, &fg)?;
    outputs.extend((0..fg.len()).map(|t| format!("fg_{t:04}.pgm")));
    let mut csv = String::from("iteration,loss\n");
    for (i, l) in result.loss_trace.iter().enumerate() {
        csv += &format!("{i},{l:?}\n");
    }
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), CliError> {
        write_file(&args.out.join(name), &bytes)?;
        outputs.push(name.to_string());
        Ok(())
    };
    put("loss_trace.csv", csv.into_bytes())?;
    if let Segmenter::Linear(lin) = &result.segmenter {
        let doc = serde_json::to_string_pretty(&lin.to_doc(&cfg.train)).expect("serializable") + "\n";
        put("segmenter.json", doc.into_bytes())?;
    }
    outputs.sort();

    let (w, h) = (scene.spec.width, scene.spec.height);
    let manifest = Manifest {
        command: "segment".into(),
        version: GIT_DESCRIBE.into(),
        config: cfg,
        frames: scene.frames.len(),
        width: w,
        height: h,
        initial_loss: format!("{:?}", result.loss_trace[0]),
        final_loss: format!("{:?}", result.final_loss()),
        merge: merge.name().into(),
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("serializable") + "\n";
    write_file(&args.out.join("manifest.json"), text.as_bytes())?;
    Ok(format!(
        "loss {} -> {} over {} iterations, merge {}\n",
        manifest.initial_loss,
        manifest.final_loss,
        result.loss_trace.len() - 1,
        manifest.merge
    ))
}

pub fn cmd_merge(args: &MergeArgs) -> Result<String, CliError> {
    let cfg = args.overrides.resolve()?;
    if !args.masks.is_dir() {
        return Err(CliError::Io(format!("{}: masks directory not found", args.masks.display())));
    }
    let scene = scenes::load(&args.scene)?;
    let masks = read_mask_dir(&args.masks, scene.frames.len())?;
    let (fg, kind) = merge_scene(&scene, &masks, cfg.train.weight_floor).map_err(|e| CliError::Io(e.to_string()))?;
    create_dir(&args.out)?;
    write_foreground(&args.out, &fg)?;
    Ok(format!("merge {} on {} frames\n", kind.name(), fg.len()))
}

/// Report for one scene and one evaluation mode.
pub fn evaluate_dir(pred: &Path, scene: &Scene, mode: EvalMode) -> Result<JaccardReport, CliError> {
    match mode {
        EvalMode::Heuristic => {
            let fg = (0..scene.frames.len())
                .map(|t| read_pgm(pred.join(format!("fg_{t:04}.pgm")), 2).map_err(CliError::from))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(evaluate_run(scene, &fg)?)
        }
        EvalMode::Oracle => Ok(evaluate_oracle(scene, &read_mask_dir(pred, scene.frames.len())?)?),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String, CliError> {
    let cfg = args.overrides.resolve()?;
    let mode = args.eval_mode.unwrap_or(cfg.eval_mode);
    let scene = scenes::load(&args.scene)?;
    let report = evaluate_dir(&args.pred, &scene, mode)?;
    let name = match mode {
        EvalMode::Heuristic => "heuristic",
        EvalMode::Oracle => "oracle",
    };
    let out = args.out.clone().unwrap_or_else(|| args.pred.join(format!("eval_{name}.json")));
    let json = serde_json::to_string_pretty(&report).expect("serializable") + "\n";
    write_file(&out, json.as_bytes())?;
    Ok(format!("{name} evaluation\n{}", report.to_table()))
}

/// Colors for mask components 0..16, repeating beyond.
pub const PALETTE: [[u8; 3]; 16] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
];

pub fn palette_image(labels: &[usize], width: usize, height: usize) -> RgbImage {
    let data = labels.iter().flat_map(|&l| PALETTE[l % PALETTE.len()]).collect();
    RgbImage::new(width, height, data).expect("label count matches size")
}

pub fn cmd_viz(args: &VizArgs) -> Result<String, CliError> {
    let ext = args.input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let image = match ext {
        "flo" => {
            let mag = match args.max_mag {
                Some(m) if m > 0.0 => MaxMagnitude::Fixed(m),
                Some(m) => return Err(CliError::Config(format!("--max-mag must be positive, got {m}"))),
                None => MaxMagnitude::Auto,
            };
            flow_to_color(&read_flo(&args.input)?, mag)
        }
        "bin" => {
            let m = read_masks(&args.input)?;
            palette_image(&m.argmax(), m.width(), m.height())
        }
        "pgm" => {
            let map = read_pgm(&args.input, args.levels)?;
            let labels: Vec<usize> = map.data().iter().map(|&l| l as usize).collect();
            palette_image(&labels, map.width(), map.height())
        }
        _ => return Err(CliError::Config(format!("{}: expected a .flo, .bin or .pgm input", args.input.display()))),
    };
    write_ppm(&image, &args.out)?;
    Ok(format!("wrote {}\n", args.out.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_dump_roundtrip() {
        let m = SoftMasks::from_logits(3, 4, 2, &(0..24).map(|i| (i as f64).sin()).collect::<Vec<_>>()).unwrap();
        let bytes = encode_masks(&m);
        assert_eq!(bytes.len(), 16 + 8 * 24);
        assert_eq!(decode_masks(&bytes).unwrap(), m);
        assert!(decode_masks(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_masks(b"P5\n").is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"seed": 1, "bogus": 2}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"k": 3, "bogus": 2}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"train": {"k": 3}}"#).unwrap();
        assert_eq!(c.train.k, 3);
        assert_eq!(c.train.iterations, TrainConfig::default().iterations);
    }

    #[test]
    fn overrides_win_and_seed_propagates() {
        let o = Overrides { seed: Some(9), k: Some(2), mode: Some(Mode::Linear), lr: Some(0.2), ..Overrides::default() };
        let c = o.resolve().unwrap();
        assert_eq!((c.seed, c.train.seed, c.train.k, c.mode), (9, 9, 2, Mode::Linear));
        assert_eq!(c.train.learning_rate, Some(0.2));
        let bad = Overrides { k: Some(1), ..Overrides::default() };
        assert_eq!(bad.resolve().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn palette_starts_black_and_wraps() {
        let img = palette_image(&[0, 1, 16], 3, 1);
        assert_eq!(img.get(0, 0), [0, 0, 0]);
        assert_eq!(img.get(1, 0), PALETTE[1]);
        assert_eq!(img.get(2, 0), [0, 0, 0]);
    }
}
