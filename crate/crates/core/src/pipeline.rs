//! End-to-end runs on generated scenes: train, merge, score.

use crate::eval::{evaluate_oracle, evaluate_run, EvalError, JaccardReport};
use crate::flowfield::LabelMap;
use crate::gwm_energy::SoftMasks;
use crate::merging::{merge_to_foreground, MergeError, MergeKind, DEFAULT_EPSILON};
use crate::scenes::Scene;
use crate::segmenter::{color_features, train_internal, Mode, Segmenter, TrainConfig, TrainError, TrainResult};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Soft masks for every frame of `scene` from a trained segmenter.
pub fn scene_masks(segmenter: &Segmenter, scene: &Scene) -> Result<Vec<SoftMasks>, TrainError> {
    scene.frames.iter().map(|f| segmenter.predict(&f.image)).collect()
}

/// Heuristic foreground masks; segments are compared by their mean color.
pub fn merge_scene(scene: &Scene, masks: &[SoftMasks], weight_floor: f64) -> Result<(Vec<LabelMap>, MergeKind), MergeError> {
    let mut kind = MergeKind::Identity;
    let fg = scene
        .frames
        .iter()
        .zip(masks)
        .map(|(f, m)| {
            let feats = color_features(&f.image);
            let (fg, _, k) = merge_to_foreground(&feats, m, DEFAULT_EPSILON, weight_floor)?;
            kind = k;
            Ok(fg)
        })
        .collect::<Result<Vec<_>, MergeError>>()?;
    Ok((fg, kind))
}

pub struct RunOutcome {
    pub train: TrainResult,
    pub masks: Vec<SoftMasks>,
    pub foreground: Vec<LabelMap>,
    pub merge: MergeKind,
    pub oracle: JaccardReport,
    pub heuristic: JaccardReport,
}

/// Trains on all frames of `scene` and scores both merge modes on the same frames.
pub fn run_scene(scene: &Scene, cfg: &TrainConfig, mode: Mode) -> Result<RunOutcome, PipelineError> {
    let frames: Vec<_> = scene.frames.iter().map(|f| (f.image.clone(), f.flow.clone())).collect();
    let train = train_internal(&frames, cfg, mode)?;
    let masks = scene_masks(&train.segmenter, scene)?;
    score(scene, train, masks, cfg.weight_floor)
}

/// Scores masks of `scene` produced by an already trained segmenter.
pub fn score(scene: &Scene, train: TrainResult, masks: Vec<SoftMasks>, weight_floor: f64) -> Result<RunOutcome, PipelineError> {
    let (foreground, merge) = merge_scene(scene, &masks, weight_floor)?;
    let oracle = evaluate_oracle(scene, &masks)?;
    let heuristic = evaluate_run(scene, &foreground)?;
    Ok(RunOutcome { train, masks, foreground, merge, oracle, heuristic })
}
