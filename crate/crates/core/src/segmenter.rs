//! Mask parameterizations and full-batch momentum training on the motion loss.
//!
//! Two segmenters are provided:
//!
//! * [`PerPixelLogits`]: free logits for every pixel of every training frame.
//!   The segmenter sees the evaluated video during optimization and can only
//!   produce masks for those frames.
//! * [`LinearFeatureSegmenter`]: logits `W φ_u` from per-pixel appearance
//!   features `φ_u`, shared across frames, so it can segment unseen images
//!   without flow.
//!
//! The optimizer is heavy-ball momentum, `v ← μ v − η g; θ ← θ + v`, on the
//! logarithm of the mean per-frame loss `R`, so `g = ∇R / R`. The minimizers
//! are those of `R`, steps do not depend on the flow's units, and the step
//! grows as the loss falls, which keeps convergence geometric near an exact
//! fit. In per-pixel mode every logit only influences its own pixel, whose
//! share of the frame-normalized loss is `1 / (|Ω| T)`, so the step uses
//! `|Ω| T g` and the rate is per pixel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowfield::{FlowField, RgbImage};
use crate::gwm_energy::{softmax_into, EnergyError, LossConfig, PreparedFrame, SoftMasks, DEFAULT_WEIGHT_FLOOR};
use crate::motion_models::{CoordNormalization, ModelFamily, DEFAULT_RIDGE};
use crate::rng::SplitMix64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("no training frames")]
    EmptyDataset,
    #[error("frame {0} has inconsistent dimensions")]
    DimensionMismatch(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss or parameters became non-finite at iteration {iteration}")]
    DivergedLoss { iteration: usize },
    #[error("per-pixel segmenter cannot predict on an unseen frame")]
    ModeMismatch,
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// Appearance features: `[r, g, b, x, y, 1]` with colors in `[0, 1]` and
/// positions normalized to `[-1, 1]`, optionally followed by `fourier_pairs`
/// random Fourier pairs `cos(ω·f), sin(ω·f)` of the five base features `f`,
/// with every component of `ω` drawn from `Normal(0, fourier_scale²)` by
/// `SplitMix64::new(fourier_seed)` in pair-major order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    #[serde(default)]
    pub fourier_pairs: usize,
    #[serde(default = "default_fourier_scale")]
    pub fourier_scale: f64,
    #[serde(default)]
    pub fourier_seed: u64,
}

fn default_fourier_scale() -> f64 {
    1.0
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self { fourier_pairs: 0, fourier_scale: default_fourier_scale(), fourier_seed: 0 }
    }
}

pub const BASE_FEATURES: usize = 6;

impl FeatureSpec {
    pub fn dim(&self) -> usize {
        BASE_FEATURES + 2 * self.fourier_pairs
    }

    fn frequencies(&self) -> Vec<[f64; 5]> {
        let mut g = SplitMix64::new(self.fourier_seed);
        (0..self.fourier_pairs)
            .map(|_| std::array::from_fn(|_| g.normal() * self.fourier_scale))
            .collect()
    }
}

/// Pixel-major feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn pixel(&self, u: usize) -> &[f64] {
        &self.data[u * self.dim..(u + 1) * self.dim]
    }

    pub fn pixels(&self) -> usize {
        self.data.len() / self.dim
    }
}

pub fn featurize(image: &RgbImage, spec: &FeatureSpec) -> Features {
    let norm = CoordNormalization::new(image.width(), image.height());
    let freqs = spec.frequencies();
    let dim = spec.dim();
    let mut data = Vec::with_capacity(dim * image.width() * image.height());
    for y in 0..image.height() {
        for x in 0..image.width() {
            let [r, g, b] = image.get(x, y).map(|c| c as f64 / 255.0);
            let [xn, yn] = norm.apply(x as f64, y as f64);
            let base = [r, g, b, xn, yn];
            data.extend_from_slice(&base);
            data.push(1.0);
            for w in &freqs {
                let phase: f64 = w.iter().zip(&base).map(|(a, b)| a * b).sum();
                data.push(phase.cos());
                data.push(phase.sin());
            }
        }
    }
    Features { dim, data }
}

/// The color channels of [`featurize`], without position or Fourier terms.
/// Used as the appearance descriptor when merging segments.
pub fn color_features(image: &RgbImage) -> Features {
    let data = image.data().iter().map(|&c| c as f64 / 255.0).collect();
    Features { dim: 3, data }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[serde(rename = "perpixel")]
    PerPixel,
    Linear,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "perpixel" | "per-pixel" => Ok(Mode::PerPixel),
            "linear" => Ok(Mode::Linear),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

impl Mode {
    pub fn default_learning_rate(self) -> f64 {
        match self {
            Mode::PerPixel => 0.1,
            Mode::Linear => 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub family: ModelFamily,
    pub k: usize,
    pub iterations: usize,
    /// `None` selects [`Mode::default_learning_rate`].
    pub learning_rate: Option<f64>,
    pub momentum: f64,
    pub seed: u64,
    /// Standard deviation of the initial parameters.
    pub init_scale: f64,
    pub ridge: f64,
    pub weight_floor: f64,
    pub features: FeatureSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            family: ModelFamily::Quadratic12,
            k: 4,
            iterations: 300,
            learning_rate: None,
            momentum: 0.9,
            seed: 0,
            init_scale: 0.01,
            ridge: DEFAULT_RIDGE,
            weight_floor: DEFAULT_WEIGHT_FLOOR,
            features: FeatureSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.k < 2 {
            return bad("k must be at least 2");
        }
        if self.iterations < 1 {
            return bad("iterations must be at least 1");
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad("learning rate must be positive");
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.init_scale >= 0.0 && self.ridge >= 0.0 && self.weight_floor >= 0.0) {
            return bad("init_scale, ridge and weight_floor must be non-negative");
        }
        Ok(())
    }

    pub fn rate(&self, mode: Mode) -> f64 {
        self.learning_rate.unwrap_or_else(|| mode.default_learning_rate())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { family: self.family, ridge: self.ridge, weight_floor: self.weight_floor }
    }
}

/// Free logits of one training frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLogits {
    pub frame_id: usize,
    pub image: RgbImage,
    /// Pixel-major, `k` per pixel.
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerPixelLogits {
    pub k: usize,
    pub width: usize,
    pub height: usize,
    pub frames: Vec<FrameLogits>,
}

impl PerPixelLogits {
    pub fn masks(&self, frame: usize) -> SoftMasks {
        SoftMasks::from_logits(self.k, self.width, self.height, &self.frames[frame].logits)
            .expect("trained logits are finite")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearFeatureSegmenter {
    pub features: FeatureSpec,
    pub k: usize,
    /// Row-major K x dim.
    pub weights: Vec<f64>,
}

impl LinearFeatureSegmenter {
    fn logits(&self, feats: &Features) -> Vec<f64> {
        let d = feats.dim;
        let mut z = Vec::with_capacity(self.k * feats.pixels());
        for u in 0..feats.pixels() {
            let phi = feats.pixel(u);
            for j in 0..self.k {
                z.push(self.weights[j * d..(j + 1) * d].iter().zip(phi).map(|(w, f)| w * f).sum());
            }
        }
        z
    }

    pub fn predict(&self, image: &RgbImage) -> SoftMasks {
        let feats = featurize(image, &self.features);
        let z = self.logits(&feats);
        let mut probs = vec![0.0; z.len()];
        for (zu, pu) in z.chunks(self.k).zip(probs.chunks_mut(self.k)) {
            softmax_into(zu, pu);
        }
        SoftMasks::new(self.k, image.width(), image.height(), probs).expect("softmax rows are distributions")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Segmenter {
    PerPixel(PerPixelLogits),
    Linear(LinearFeatureSegmenter),
}

impl Segmenter {
    pub fn k(&self) -> usize {
        match self {
            Segmenter::PerPixel(p) => p.k,
            Segmenter::Linear(l) => l.k,
        }
    }

    /// Masks for `image`. A per-pixel segmenter only answers for its own training frames.
    pub fn predict(&self, image: &RgbImage) -> Result<SoftMasks, TrainError> {
        match self {
            Segmenter::Linear(l) => Ok(l.predict(image)),
            Segmenter::PerPixel(p) => p
                .frames
                .iter()
                .position(|f| &f.image == image)
                .map(|i| p.masks(i))
                .ok_or(TrainError::ModeMismatch),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub segmenter: Segmenter,
    /// Dataset loss before each update, followed by the loss of the final parameters.
    pub loss_trace: Vec<f64>,
}

impl TrainResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace is never empty")
    }

    /// Fraction of steps where the loss did not increase.
    pub fn non_increasing_fraction(&self) -> f64 {
        let steps = self.loss_trace.len().saturating_sub(1).max(1);
        self.loss_trace.windows(2).filter(|w| w[1] <= w[0]).count() as f64 / steps as f64
    }
}

fn check_frames(frames: &[(RgbImage, FlowField)]) -> Result<(usize, usize), TrainError> {
    let (img, _) = frames.first().ok_or(TrainError::EmptyDataset)?;
    let dims = (img.width(), img.height());
    for (i, (im, fl)) in frames.iter().enumerate() {
        if (im.width(), im.height()) != dims || (fl.width(), fl.height()) != dims {
            return Err(TrainError::DimensionMismatch(i));
        }
    }
    Ok(dims)
}

/// Mean loss and per-frame logit gradients; frames are evaluated in parallel
/// and reduced in frame order.
fn evaluate(
    prepared: &[PreparedFrame],
    logits: &[Vec<f64>],
    k: usize,
    cfg: &LossConfig,
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    let results: Vec<Result<(f64, Vec<f64>), EnergyError>> = prepared
        .par_iter()
        .zip(logits.par_iter())
        .map(|(p, z)| p.loss_and_grad(z, k, cfg).map(|(r, g)| (r.total, g)))
        .collect();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(results.len());
    for r in results {
        let (l, g) = r?;
        total += l;
        grads.push(g);
    }
    Ok((total / prepared.len() as f64, grads))
}

/// `∂R/∂W` for the mean risk `R` over frames, from per-frame logit gradients.
fn weight_gradient(feats: &[Features], logit_grads: &[Vec<f64>], k: usize) -> Vec<f64> {
    let d = feats[0].dim;
    let mut grad_w = vec![0.0; k * d];
    for (f, g) in feats.iter().zip(logit_grads) {
        for u in 0..f.pixels() {
            let phi = f.pixel(u);
            for j in 0..k {
                let gj = g[u * k + j];
                if gj != 0.0 {
                    for (gw, p) in grad_w[j * d..(j + 1) * d].iter_mut().zip(phi) {
                        *gw += gj * p;
                    }
                }
            }
        }
    }
    let t = feats.len() as f64;
    grad_w.iter_mut().for_each(|g| *g /= t);
    grad_w
}

/// Step size for descent on `ln(risk)`: the risk gradient divided by the risk.
/// A zero risk has a zero gradient, so no step is taken.
fn log_step(base: f64, loss: f64) -> f64 {
    if loss > 0.0 {
        base / loss
    } else {
        0.0
    }
}

/// Trains a segmenter on `(image, flow)` frames by minimizing the mean motion loss.
pub fn train_internal(frames: &[(RgbImage, FlowField)], cfg: &TrainConfig, mode: Mode) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    let (width, height) = check_frames(frames)?;
    let k = cfg.k;
    let n = width * height;
    let t = frames.len();
    let loss_cfg = cfg.loss_config();
    let prepared: Vec<PreparedFrame> = frames.iter().map(|(_, f)| PreparedFrame::new(f, cfg.family)).collect();
    let rate = cfg.rate(mode);
    let mut rng = SplitMix64::new(cfg.seed);
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let check = |loss: f64, iteration: usize| {
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(TrainError::DivergedLoss { iteration })
        }
    };

    match mode {
        Mode::PerPixel => {
            let mut logits: Vec<Vec<f64>> =
                (0..t).map(|_| (0..n * k).map(|_| rng.normal() * cfg.init_scale).collect()).collect();
            let mut velocity = vec![vec![0.0; n * k]; t];
            let scale = rate * (n * t) as f64;
            for it in 0..cfg.iterations {
                let (loss, grads) = evaluate(&prepared, &logits, k, &loss_cfg)?;
                trace.push(check(loss, it)?);
                let step = log_step(scale, loss);
                for ((z, v), g) in logits.iter_mut().zip(velocity.iter_mut()).zip(&grads) {
                    for ((zi, vi), gi) in z.iter_mut().zip(v.iter_mut()).zip(g) {
                        *vi = cfg.momentum * *vi - step * gi;
                        *zi += *vi;
                    }
                }
                if logits.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(TrainError::DivergedLoss { iteration: it });
                }
            }
            let (loss, _) = evaluate(&prepared, &logits, k, &loss_cfg)?;
            trace.push(check(loss, cfg.iterations)?);
            let frames = frames
                .iter()
                .zip(logits)
                .enumerate()
                .map(|(frame_id, ((image, _), logits))| FrameLogits { frame_id, image: image.clone(), logits })
                .collect();
            Ok(TrainResult { segmenter: Segmenter::PerPixel(PerPixelLogits { k, width, height, frames }), loss_trace: trace })
        }
        Mode::Linear => {
            let feats: Vec<Features> = frames.iter().map(|(im, _)| featurize(im, &cfg.features)).collect();
            let d = cfg.features.dim();
            let mut seg = LinearFeatureSegmenter {
                features: cfg.features,
                k,
                weights: (0..k * d).map(|_| rng.normal() * cfg.init_scale).collect(),
            };
            let mut velocity = vec![0.0; k * d];
            for it in 0..cfg.iterations + 1 {
                let logits: Vec<Vec<f64>> = feats.iter().map(|f| seg.logits(f)).collect();
                let (loss, grads) = evaluate(&prepared, &logits, k, &loss_cfg)?;
                trace.push(check(loss, it)?);
                if it == cfg.iterations {
                    break;
                }
                let grad_w = weight_gradient(&feats, &grads, k);
                let step = log_step(rate, loss);
                for ((w, v), g) in seg.weights.iter_mut().zip(velocity.iter_mut()).zip(&grad_w) {
                    *v = cfg.momentum * *v - step * g;
                    *w += *v;
                }
                if seg.weights.iter().any(|v| !v.is_finite()) {
                    return Err(TrainError::DivergedLoss { iteration: it });
                }
            }
            Ok(TrainResult { segmenter: Segmenter::Linear(seg), loss_trace: trace })
        }
    }
}

/// JSON document for a trained linear segmenter; weights are decimal strings
/// that parse back to the identical `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSegmenterDoc {
    pub feature_spec: FeatureSpec,
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<String>,
    pub seed: u64,
    pub config: TrainConfig,
}

impl LinearFeatureSegmenter {
    pub fn to_doc(&self, config: &TrainConfig) -> LinearSegmenterDoc {
        LinearSegmenterDoc {
            feature_spec: self.features,
            k: self.k,
            dim: self.features.dim(),
            weights: self.weights.iter().map(|w| format!("{w:?}")).collect(),
            seed: config.seed,
            config: config.clone(),
        }
    }

    pub fn from_doc(doc: &LinearSegmenterDoc) -> Result<Self, String> {
        if doc.dim != doc.feature_spec.dim() || doc.weights.len() != doc.k * doc.dim {
            return Err("weight count does not match k x dim".into());
        }
        let weights = doc
            .weights
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| format!("bad weight '{s}': {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { features: doc.feature_spec, k: doc.k, weights })
    }
}
