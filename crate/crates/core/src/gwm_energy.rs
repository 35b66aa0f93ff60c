//! Motion-anticipation energy over soft masks.
//!
//! For a frame with flow `F` and component probabilities `p_uk`, every
//! component gets its own flow model fitted with weights `p_·k`, and the loss
//! is the sum of the attained residual energies divided by the pixel count:
//!
//! ```text
//! L = (1 / |Ω|) Σ_k min_θk Σ_u p_uk ‖F_u − A_k lift(u) − b_k‖²
//! ```
//!
//! Because `L` is linear in `p` for fixed `θ` and `θ*` minimizes it, the
//! derivative with respect to `p_uk` at `θ*` is the residual `r_uk / |Ω|`.
//! Chaining through the per-pixel softmax gives the logit gradient
//! `p_uk (r_uk − Σ_j p_uj r_uj) / |Ω|`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowfield::FlowField;
use crate::motion_models::{
    fit_with_basis, residuals_with_basis, Basis, CoordNormalization, FitError, ModelFamily, MotionModelParams,
    DEFAULT_RIDGE,
};

/// Default per-pixel mass below which a component is considered empty.
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("dimension mismatch: flow {flow:?}, masks {masks:?}")]
    DimensionMismatch { flow: (usize, usize), masks: (usize, usize) },
    #[error("non-finite logit at pixel {pixel}, component {component}")]
    NonFiniteLogit { pixel: usize, component: usize },
    #[error("invalid soft masks: {0}")]
    InvalidMasks(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Per-pixel K-way probabilities, stored pixel-major (`probs[u * k + j]`).
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMasks {
    k: usize,
    width: usize,
    height: usize,
    probs: Vec<f64>,
}

impl SoftMasks {
    /// Validates that each pixel holds a probability vector (non-negative, sums to 1 ± 1e-6).
    pub fn new(k: usize, width: usize, height: usize, probs: Vec<f64>) -> Result<Self, EnergyError> {
        if k == 0 {
            return Err(EnergyError::InvalidMasks("K must be at least 1".into()));
        }
        if probs.len() != k * width * height {
            return Err(EnergyError::InvalidMasks(format!(
                "expected {} values, found {}",
                k * width * height,
                probs.len()
            )));
        }
        for (u, px) in probs.chunks(k).enumerate() {
            let s: f64 = px.iter().sum();
            if px.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (s - 1.0).abs() > 1e-6 {
                return Err(EnergyError::InvalidMasks(format!("pixel {u} is not a distribution")));
            }
        }
        Ok(Self { k, width, height, probs })
    }

    /// Per-pixel softmax of pixel-major logits.
    pub fn from_logits(k: usize, width: usize, height: usize, logits: &[f64]) -> Result<Self, EnergyError> {
        if k == 0 || logits.len() != k * width * height {
            return Err(EnergyError::InvalidMasks("logit count does not match K x W x H".into()));
        }
        let mut probs = vec![0.0; logits.len()];
        for (u, (z, p)) in logits.chunks(k).zip(probs.chunks_mut(k)).enumerate() {
            if let Some(j) = z.iter().position(|v| !v.is_finite()) {
                return Err(EnergyError::NonFiniteLogit { pixel: u, component: j });
            }
            softmax_into(z, p);
        }
        Ok(Self { k, width, height, probs })
    }

    /// One-hot masks from a label per pixel (labels must be `< k`).
    pub fn from_hard(k: usize, width: usize, height: usize, labels: &[usize]) -> Self {
        assert_eq!(labels.len(), width * height);
        let mut probs = vec![0.0; k * labels.len()];
        for (u, &l) in labels.iter().enumerate() {
            assert!(l < k, "label {l} out of range for K = {k}");
            probs[u * k + l] = 1.0;
        }
        Self { k, width, height, probs }
    }

    pub fn uniform(k: usize, width: usize, height: usize) -> Self {
        Self { k, width, height, probs: vec![1.0 / k as f64; k * width * height] }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pixel(&self, u: usize) -> &[f64] {
        &self.probs[u * self.k..(u + 1) * self.k]
    }

    /// Weights of component `j` across all pixels.
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.probs.iter().skip(j).step_by(self.k).copied().collect()
    }

    /// Hard assignment; ties go to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        self.probs
            .chunks(self.k)
            .map(|p| {
                p.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                    .0
            })
            .collect()
    }

    /// Reorders components: new component `j` is old component `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> SoftMasks {
        assert_eq!(perm.len(), self.k);
        let probs = self.probs.chunks(self.k).flat_map(|p| perm.iter().map(move |&j| p[j])).collect();
        SoftMasks { probs, ..self.clone() }
    }

    /// Appends a component with zero probability everywhere.
    pub fn with_empty_component(&self) -> SoftMasks {
        let k = self.k + 1;
        let probs = self.probs.chunks(self.k).flat_map(|p| p.iter().copied().chain([0.0])).collect();
        SoftMasks { k, probs, ..self.clone() }
    }
}

/// Numerically stable softmax of `z` into `out`.
pub fn softmax_into(z: &[f64], out: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// Loss settings shared by every frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub family: ModelFamily,
    /// Relative ridge, see [`crate::motion_models::fit_wls`].
    pub ridge: f64,
    /// Components with mass below `weight_floor * |Ω|` are treated as empty.
    pub weight_floor: f64,
}

impl LossConfig {
    pub fn new(family: ModelFamily) -> Self {
        Self { family, ridge: DEFAULT_RIDGE, weight_floor: DEFAULT_WEIGHT_FLOOR }
    }
}

#[derive(Clone, Debug)]
pub struct EnergyReport {
    /// Σ_k energy_k / |Ω| (px²).
    pub total: f64,
    pub per_component: Vec<MotionModelParams>,
    /// `residuals[k][u]`; all zero for empty components.
    pub residuals: Vec<Vec<f64>>,
}

/// Flow frame with its cached lifted basis.
pub struct PreparedFrame {
    width: usize,
    height: usize,
    flow: Vec<[f64; 2]>,
    basis: Basis,
}

impl PreparedFrame {
    pub fn new(flow: &FlowField, family: ModelFamily) -> Self {
        Self {
            width: flow.width(),
            height: flow.height(),
            flow: flow.to_f64(),
            basis: Basis::new(flow.width(), flow.height(), family, CoordNormalization::for_flow(flow)),
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn loss(&self, masks: &SoftMasks, cfg: &LossConfig) -> Result<EnergyReport, EnergyError> {
        if (masks.width(), masks.height()) != (self.width, self.height) {
            return Err(EnergyError::DimensionMismatch {
                flow: (self.width, self.height),
                masks: (masks.width(), masks.height()),
            });
        }
        debug_assert_eq!(self.basis.family(), cfg.family);
        let n = self.pixels();
        let floor = cfg.weight_floor * n as f64;
        let fits: Vec<Result<(MotionModelParams, Vec<f64>), FitError>> = (0..masks.k())
            .into_par_iter()
            .map(|j| {
                let w = masks.component(j);
                let mass: f64 = w.iter().sum();
                if mass < floor || mass <= 0.0 {
                    return Ok((MotionModelParams::degenerate(cfg.family, mass), vec![0.0; n]));
                }
                let p = fit_with_basis(&self.basis, &self.flow, &w, cfg.ridge)?;
                let r = residuals_with_basis(&self.basis, &self.flow, &p);
                Ok((p, r))
            })
            .collect();
        let mut per_component = Vec::with_capacity(masks.k());
        let mut residuals = Vec::with_capacity(masks.k());
        for f in fits {
            let (p, r) = f?;
            per_component.push(p);
            residuals.push(r);
        }
        let total = per_component.iter().map(|p| p.energy).sum::<f64>() / n as f64;
        Ok(EnergyReport { total, per_component, residuals })
    }

    /// Loss and logit gradient under the frozen-θ* convention.
    pub fn loss_and_grad(&self, logits: &[f64], k: usize, cfg: &LossConfig) -> Result<(EnergyReport, Vec<f64>), EnergyError> {
        let masks = SoftMasks::from_logits(k, self.width, self.height, logits)?;
        let report = self.loss(&masks, cfg)?;
        let n = self.pixels();
        let inv_n = 1.0 / n as f64;
        let mut grad = vec![0.0; k * n];
        for u in 0..n {
            let p = masks.pixel(u);
            let mean: f64 = (0..k).map(|j| p[j] * report.residuals[j][u]).sum();
            for j in 0..k {
                grad[u * k + j] = p[j] * (report.residuals[j][u] - mean) * inv_n;
            }
        }
        Ok((report, grad))
    }
}

pub fn gwm_loss(flow: &FlowField, masks: &SoftMasks, cfg: &LossConfig) -> Result<EnergyReport, EnergyError> {
    PreparedFrame::new(flow, cfg.family).loss(masks, cfg)
}

/// Loss of `softmax(logits)` and its gradient with respect to the pixel-major logits.
pub fn gwm_grad_logits(
    flow: &FlowField,
    logits: &[f64],
    k: usize,
    cfg: &LossConfig,
) -> Result<(EnergyReport, Vec<f64>), EnergyError> {
    PreparedFrame::new(flow, cfg.family).loss_and_grad(logits, k, cfg)
}

/// Mean of per-frame losses, summed in frame order.
pub fn dataset_risk(frames: &[(FlowField, SoftMasks)], cfg: &LossConfig) -> Result<f64, EnergyError> {
    if frames.is_empty() {
        return Err(EnergyError::EmptyDataset);
    }
    let totals: Vec<Result<f64, EnergyError>> =
        frames.par_iter().map(|(f, m)| gwm_loss(f, m, cfg).map(|r| r.total)).collect();
    let mut sum = 0.0;
    for t in totals {
        sum += t?;
    }
    Ok(sum / frames.len() as f64)
}
