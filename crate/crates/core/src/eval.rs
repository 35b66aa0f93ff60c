//! Jaccard metrics and the oracle foreground assignment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowfield::LabelMap;
use crate::gwm_energy::SoftMasks;
use crate::scenes::Scene;

pub const MAX_ORACLE_K: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("frame count mismatch: {predictions} predictions for {frames} frames")]
    FrameCountMismatch { predictions: usize, frames: usize },
    #[error("oracle search supports K <= {MAX_ORACLE_K}, got {0}")]
    KTooLarge(usize),
}

/// Intersection over union of the nonzero pixels; two empty masks score 1.
pub fn jaccard(pred: &LabelMap, gt: &LabelMap) -> Result<f64, EvalError> {
    let (a, b) = ((pred.width(), pred.height()), (gt.width(), gt.height()));
    if a != b {
        return Err(EvalError::DimensionMismatch(a, b));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p != 0, g != 0);
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Best foreground/background labeling of the argmax components, by exhaustive search
/// over the `2^K − 2` nontrivial assignments. Ties keep the lowest bitmask.
pub fn oracle_component_assignment(masks: &SoftMasks, gt_fg: &LabelMap) -> Result<(Vec<bool>, f64), EvalError> {
    let k = masks.k();
    if k > MAX_ORACLE_K {
        return Err(EvalError::KTooLarge(k));
    }
    let (a, b) = ((masks.width(), masks.height()), (gt_fg.width(), gt_fg.height()));
    if a != b {
        return Err(EvalError::DimensionMismatch(a, b));
    }
    // per-component counts of fg and bg pixels decide every assignment's IoU
    let mut in_fg = vec![0usize; k];
    let mut in_bg = vec![0usize; k];
    for (c, &g) in masks.argmax().into_iter().zip(gt_fg.data()) {
        if g != 0 {
            in_fg[c] += 1;
        } else {
            in_bg[c] += 1;
        }
    }
    let gt_total: usize = in_fg.iter().sum();
    let mut best = (0u32, f64::NEG_INFINITY);
    for bits in 1..((1u32 << k) - 1) {
        let (mut inter, mut pred_bg) = (0usize, 0usize);
        for c in 0..k {
            if bits >> c & 1 == 1 {
                inter += in_fg[c];
                pred_bg += in_bg[c];
            }
        }
        let union = gt_total + pred_bg;
        let j = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        if j > best.1 {
            best = (bits, j);
        }
    }
    Ok(((0..k).map(|c| best.0 >> c & 1 == 1).collect(), best.1))
}

/// Binary mask of pixels whose argmax component is assigned to foreground.
pub fn assignment_mask(masks: &SoftMasks, assignment: &[bool]) -> LabelMap {
    let data = masks.argmax().into_iter().map(|c| u8::from(assignment[c])).collect();
    LabelMap::new(masks.width(), masks.height(), data).expect("mask size")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JaccardReport {
    pub per_frame: Vec<f64>,
    pub mean: f64,
    pub frames: usize,
}

impl JaccardReport {
    pub fn from_values(per_frame: Vec<f64>) -> Self {
        let frames = per_frame.len();
        let mean = if frames == 0 { 0.0 } else { per_frame.iter().sum::<f64>() / frames as f64 };
        Self { per_frame, mean, frames }
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("frame  jaccard\n");
        for (t, j) in self.per_frame.iter().enumerate() {
            s += &format!("{t:>5}  {j:.4}\n");
        }
        s += &format!(" mean  {:.4}\n", self.mean);
        s
    }
}

/// Per-frame Jaccard of binary predictions against the scene's foreground.
pub fn evaluate_run(scene: &Scene, predictions: &[LabelMap]) -> Result<JaccardReport, EvalError> {
    if predictions.len() != scene.frames.len() {
        return Err(EvalError::FrameCountMismatch { predictions: predictions.len(), frames: scene.frames.len() });
    }
    let per_frame = predictions
        .iter()
        .zip(&scene.frames)
        .map(|(p, f)| jaccard(p, &f.foreground))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(JaccardReport::from_values(per_frame))
}

/// Oracle-mode evaluation: the best assignment of each frame's components.
pub fn evaluate_oracle(scene: &Scene, masks: &[SoftMasks]) -> Result<JaccardReport, EvalError> {
    if masks.len() != scene.frames.len() {
        return Err(EvalError::FrameCountMismatch { predictions: masks.len(), frames: scene.frames.len() });
    }
    let per_frame = masks
        .iter()
        .zip(&scene.frames)
        .map(|(m, f)| oracle_component_assignment(m, &f.foreground).map(|(_, j)| j))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(JaccardReport::from_values(per_frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::scenes::{generate, preset};

    fn row(bits: &[u8]) -> LabelMap {
        LabelMap::new(bits.len(), 1, bits.to_vec()).unwrap()
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&row(&[1, 1, 0]), &row(&[1, 1, 0])).unwrap(), 1.0);
        assert_eq!(jaccard(&row(&[1, 0, 0]), &row(&[0, 0, 1])).unwrap(), 0.0);
        assert_eq!(jaccard(&row(&[0, 0]), &row(&[0, 0])).unwrap(), 1.0);
        // left half vs left two-thirds of a 6-wide frame: 3 / 4
        assert_eq!(jaccard(&row(&[1, 1, 1, 0, 0, 0]), &row(&[1, 1, 1, 1, 0, 0])).unwrap(), 0.75);
        assert!(jaccard(&row(&[1]), &LabelMap::zeros(1, 2)).is_err());
    }

    #[test]
    fn jaccard_symmetric_and_transpose_invariant() {
        let mut g = SplitMix64::new(2);
        for _ in 0..50 {
            let a = LabelMap::new(5, 4, (0..20).map(|_| (g.next_u64() & 1) as u8).collect()).unwrap();
            let b = LabelMap::new(5, 4, (0..20).map(|_| (g.next_u64() & 1) as u8).collect()).unwrap();
            let j = jaccard(&a, &b).unwrap();
            assert_eq!(j, jaccard(&b, &a).unwrap());
            assert_eq!(j, jaccard(&a.transpose(), &b.transpose()).unwrap());
        }
    }

    #[test]
    fn oracle_exact_two_components() {
        let gt = row(&[0, 1, 1, 0]);
        let masks = SoftMasks::from_hard(2, 4, 1, &[0, 1, 1, 0]);
        let (assign, j) = oracle_component_assignment(&masks, &gt).unwrap();
        assert_eq!((assign, j), (vec![false, true], 1.0));
    }

    #[test]
    fn oracle_finds_split_foreground() {
        // fg is covered by components 1 and 3; 0 and 2 are background
        let labels = [0, 1, 1, 3, 3, 2, 2, 0, 1, 3];
        let gt = row(&labels.map(|l| u8::from(l == 1 || l == 3)));
        let masks = SoftMasks::from_hard(4, 10, 1, &labels);
        let (assign, j) = oracle_component_assignment(&masks, &gt).unwrap();
        assert_eq!(assign, vec![false, true, false, true]);
        assert_eq!(j, 1.0);
    }

    #[test]
    fn oracle_dominates_every_assignment() {
        let mut g = SplitMix64::new(17);
        for _ in 0..40 {
            let k = 2 + (g.next_u64() % 3) as usize;
            let z: Vec<f64> = (0..k * 30).map(|_| g.normal()).collect();
            let masks = SoftMasks::from_logits(k, 6, 5, &z).unwrap();
            let gt = LabelMap::new(6, 5, (0..30).map(|_| (g.next_u64() % 3 == 0) as u8).collect()).unwrap();
            let (_, best) = oracle_component_assignment(&masks, &gt).unwrap();
            for bits in 1..((1u32 << k) - 1) {
                let assign: Vec<bool> = (0..k).map(|c| bits >> c & 1 == 1).collect();
                let j = jaccard(&assignment_mask(&masks, &assign), &gt).unwrap();
                assert!(best >= j);
            }
        }
    }

    #[test]
    fn k_too_large() {
        let masks = SoftMasks::uniform(17, 2, 1);
        assert_eq!(oracle_component_assignment(&masks, &LabelMap::zeros(2, 1)), Err(EvalError::KTooLarge(17)));
    }

    #[test]
    fn evaluate_run_examples() {
        let scene = generate(&preset("two-sprites", 0).unwrap()).unwrap();
        let gt: Vec<LabelMap> = scene.frames.iter().map(|f| f.foreground.clone()).collect();
        assert_eq!(evaluate_run(&scene, &gt).unwrap().mean, 1.0);
        let empty: Vec<LabelMap> = gt.iter().map(|m| LabelMap::zeros(m.width(), m.height())).collect();
        assert_eq!(evaluate_run(&scene, &empty).unwrap().mean, 0.0);
        assert!(evaluate_run(&scene, &gt[..2]).is_err());
        let r = JaccardReport::from_values(vec![0.6, 0.8]);
        assert!((r.mean - 0.7).abs() < 1e-15);
        assert!(r.to_table().contains("0.7000"));
    }
}
