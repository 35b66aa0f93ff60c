//! Parametric flow models and their closed-form weighted least-squares fit.
//!
//! A model predicts `F(u) = A * lift(u) + b` where `u` is the pixel position
//! in normalized coordinates (see [`CoordNormalization`]) and `lift` is the
//! family's basis. Two solvers are provided: [`fit_wls`] solves the
//! homogeneous moment system `M = Λ_Fū Λ_ūū⁻¹` with `M = [A b]` and
//! `ū = [lift(u), 1]`; [`fit_wls_centered`] solves `A = Σ_FΩ Σ_ΩΩ⁻¹`,
//! `b = μ_F − A μ_Ω` from centered moments. They agree up to rounding.
//!
//! Weights are rescaled to sum to one before forming moments. The reported
//! energy is the unridged objective `Σ w ‖F − A lift(u) − b‖²` at the
//! caller's original weight scale.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowfield::FlowField;
use crate::linalg::solve_spd;

/// Default relative ridge; the absolute ridge is `ridge * trace(Λ_ūū) / (d + 1)`.
pub const DEFAULT_RIDGE: f64 = 1e-9;

/// Largest lifted-basis dimension across families.
pub const MAX_BASIS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("total weight {0} is not positive")]
    ZeroWeight(f64),
    #[error("negative or non-finite weight at pixel {0}")]
    InvalidWeight(usize),
    #[error("moment matrix is singular (degenerate support)")]
    SingularSystem,
    #[error("weights length {weights} does not match flow size {pixels}")]
    LengthMismatch { weights: usize, pixels: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Constant,
    Affine,
    Quadratic12,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [ModelFamily::Constant, ModelFamily::Affine, ModelFamily::Quadratic12];

    /// Lifted-basis dimension `d` (the constant term is extra).
    pub fn basis_dim(self) -> usize {
        match self {
            ModelFamily::Constant => 0,
            ModelFamily::Affine => 2,
            ModelFamily::Quadratic12 => 5,
        }
    }

    /// Number of free parameters: `2 * (d + 1)`.
    pub fn param_count(self) -> usize {
        2 * (self.basis_dim() + 1)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Constant => "constant",
            ModelFamily::Affine => "affine",
            ModelFamily::Quadratic12 => "quadratic12",
        }
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(ModelFamily::Constant),
            "affine" => Ok(ModelFamily::Affine),
            "quadratic12" | "quadratic" => Ok(ModelFamily::Quadratic12),
            other => Err(format!("unknown model family '{other}'")),
        }
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Affine map from pixel coordinates to `[-1, 1]²`.
///
/// Pixel centers `0` and `W - 1` map to `-1` and `1`; a one-pixel axis maps to `0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordNormalization {
    pub width: usize,
    pub height: usize,
}

impl CoordNormalization {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn for_flow(flow: &FlowField) -> Self {
        Self::new(flow.width(), flow.height())
    }

    fn axis(v: f64, n: usize) -> f64 {
        if n <= 1 {
            0.0
        } else {
            2.0 * v / (n - 1) as f64 - 1.0
        }
    }

    fn axis_inv(v: f64, n: usize) -> f64 {
        if n <= 1 {
            0.0
        } else {
            (v + 1.0) * (n - 1) as f64 / 2.0
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> [f64; 2] {
        [Self::axis(x, self.width), Self::axis(y, self.height)]
    }

    pub fn invert(&self, u: [f64; 2]) -> [f64; 2] {
        [Self::axis_inv(u[0], self.width), Self::axis_inv(u[1], self.height)]
    }
}

/// Basis of `family` at the normalized position `u`, without the constant term.
pub fn lift(u: [f64; 2], family: ModelFamily) -> Vec<f64> {
    let mut out = [0.0; MAX_BASIS];
    lift_into(u, family, &mut out);
    out[..family.basis_dim()].to_vec()
}

fn lift_into(u: [f64; 2], family: ModelFamily, out: &mut [f64; MAX_BASIS]) {
    let [x, y] = u;
    match family {
        ModelFamily::Constant => {}
        ModelFamily::Affine => {
            out[0] = x;
            out[1] = y;
        }
        ModelFamily::Quadratic12 => {
            *out = [x, x * x, y, y * y, x * y];
        }
    }
}

/// Fitted flow model of one region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionModelParams {
    pub family: ModelFamily,
    /// Rows of the 2 x d matrix `A` (x channel, y channel).
    pub a: [Vec<f64>; 2],
    pub b: [f64; 2],
    /// Unridged weighted residual energy at the original weight scale (px²).
    #[serde(default)]
    pub energy: f64,
    #[serde(default)]
    pub weight_total: f64,
    /// Set when the region had too little mass to be fitted.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl MotionModelParams {
    pub fn new(family: ModelFamily, a: [Vec<f64>; 2], b: [f64; 2]) -> Self {
        assert_eq!(a[0].len(), family.basis_dim());
        assert_eq!(a[1].len(), family.basis_dim());
        Self { family, a, b, energy: 0.0, weight_total: 0.0, degenerate: false }
    }

    pub fn translation(family: ModelFamily, b: [f64; 2]) -> Self {
        let d = family.basis_dim();
        Self::new(family, [vec![0.0; d], vec![0.0; d]], b)
    }

    /// Empty model used for components that carry no mass.
    pub fn degenerate(family: ModelFamily, weight_total: f64) -> Self {
        let mut p = Self::translation(family, [0.0; 2]);
        p.weight_total = weight_total;
        p.degenerate = true;
        p
    }

    /// Flow predicted at the normalized position `u`.
    pub fn predict(&self, u: [f64; 2]) -> [f64; 2] {
        let mut l = [0.0; MAX_BASIS];
        lift_into(u, self.family, &mut l);
        self.predict_lifted(&l)
    }

    fn predict_lifted(&self, l: &[f64]) -> [f64; 2] {
        let mut out = self.b;
        for (c, row) in self.a.iter().enumerate() {
            out[c] += row.iter().zip(l).map(|(a, x)| a * x).sum::<f64>();
        }
        out
    }

    /// Homogeneous matrix `M = [A b]` as two rows of length `d + 1`.
    pub fn homogeneous(&self) -> [Vec<f64>; 2] {
        std::array::from_fn(|c| {
            let mut row = self.a[c].clone();
            row.push(self.b[c]);
            row
        })
    }

    /// Re-express this model in a larger family with zero extra coefficients.
    pub fn embed(&self, family: ModelFamily) -> Option<MotionModelParams> {
        let positions: &[usize] = match (self.family, family) {
            (a, b) if a == b => return Some(self.clone()),
            (ModelFamily::Constant, _) => &[],
            (ModelFamily::Affine, ModelFamily::Quadratic12) => &[0, 2],
            _ => return None,
        };
        let d = family.basis_dim();
        let a = std::array::from_fn(|c| {
            let mut row = vec![0.0; d];
            for (src, &dst) in positions.iter().enumerate() {
                row[dst] = self.a[c][src];
            }
            row
        });
        Some(MotionModelParams { a, ..MotionModelParams::new(family, [vec![0.0; d], vec![0.0; d]], self.b) })
    }
}

/// Lifted coordinates `ū = [lift(u), 1]` for every pixel of a frame.
#[derive(Clone, Debug)]
pub struct Basis {
    family: ModelFamily,
    n: usize,
    rows: Vec<f64>,
}

impl Basis {
    pub fn new(width: usize, height: usize, family: ModelFamily, norm: CoordNormalization) -> Self {
        let n = family.basis_dim() + 1;
        let mut rows = Vec::with_capacity(n * width * height);
        let mut l = [0.0; MAX_BASIS];
        for y in 0..height {
            for x in 0..width {
                lift_into(norm.apply(x as f64, y as f64), family, &mut l);
                rows.extend_from_slice(&l[..n - 1]);
                rows.push(1.0);
            }
        }
        Self { family, n, rows }
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn pixels(&self) -> usize {
        self.rows.len() / self.n
    }

    /// `ū` at pixel index `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n..(i + 1) * self.n]
    }
}

fn check_weights(weights: &[f64], pixels: usize) -> Result<f64, FitError> {
    if weights.len() != pixels {
        return Err(FitError::LengthMismatch { weights: weights.len(), pixels });
    }
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(FitError::InvalidWeight(i));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(FitError::ZeroWeight(total));
    }
    Ok(total)
}

/// `Σ w ‖F − M ū‖²` over all pixels.
fn weighted_energy(basis: &Basis, flow: &[[f64; 2]], weights: &[f64], params: &MotionModelParams) -> f64 {
    let d = basis.n - 1;
    let mut e = 0.0;
    for (i, (f, &w)) in flow.iter().zip(weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        let p = params.predict_lifted(&basis.row(i)[..d]);
        let (dx, dy) = (f[0] - p[0], f[1] - p[1]);
        e += w * (dx * dx + dy * dy);
    }
    e
}

/// Homogeneous-moment solve on a precomputed basis.
pub fn fit_with_basis(
    basis: &Basis,
    flow: &[[f64; 2]],
    weights: &[f64],
    ridge: f64,
) -> Result<MotionModelParams, FitError> {
    let total = check_weights(weights, basis.pixels())?;
    if flow.len() != basis.pixels() {
        return Err(FitError::LengthMismatch { weights: flow.len(), pixels: basis.pixels() });
    }
    let n = basis.n;
    let inv_total = 1.0 / total;
    let mut lam_uu = vec![0.0; n * n];
    let mut lam_uf = vec![0.0; n * 2];
    for (i, (f, &w)) in flow.iter().zip(weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        let wn = w * inv_total;
        let r = basis.row(i);
        for p in 0..n {
            let wp = wn * r[p];
            for q in p..n {
                lam_uu[p * n + q] += wp * r[q];
            }
            lam_uf[p * 2] += wp * f[0];
            lam_uf[p * 2 + 1] += wp * f[1];
        }
    }
    for p in 0..n {
        for q in 0..p {
            lam_uu[p * n + q] = lam_uu[q * n + p];
        }
    }
    let trace: f64 = (0..n).map(|i| lam_uu[i * n + i]).sum();
    let lambda = ridge * trace / n as f64;
    for i in 0..n {
        lam_uu[i * n + i] += lambda;
    }
    // (Λ_ūū + λI) Mᵀ = Λ_ūF
    let mt = solve_spd(&lam_uu, n, &lam_uf, 2).ok_or(FitError::SingularSystem)?;
    let d = n - 1;
    let a = std::array::from_fn(|c| (0..d).map(|p| mt[p * 2 + c]).collect());
    let b = [mt[d * 2], mt[d * 2 + 1]];
    let mut params = MotionModelParams::new(basis.family, a, b);
    params.weight_total = total;
    params.energy = weighted_energy(basis, flow, weights, &params);
    Ok(params)
}

/// Weighted least-squares fit through the homogeneous moment matrices.
///
/// `ridge` is relative: `ridge * trace(Λ_ūū) / (d + 1)` is added to the
/// diagonal of the normalized moment matrix before solving.
pub fn fit_wls(
    flow: &FlowField,
    weights: &[f64],
    family: ModelFamily,
    norm: CoordNormalization,
    ridge: f64,
) -> Result<MotionModelParams, FitError> {
    let basis = Basis::new(flow.width(), flow.height(), family, norm);
    fit_with_basis(&basis, &flow.to_f64(), weights, ridge)
}

/// Weighted least-squares fit through centered covariances.
///
/// The ridge (same absolute value as [`fit_wls`]) regularizes only `A`, so the
/// two forms differ by `O(ridge)` unless `ridge = 0`.
pub fn fit_wls_centered(
    flow: &FlowField,
    weights: &[f64],
    family: ModelFamily,
    norm: CoordNormalization,
    ridge: f64,
) -> Result<MotionModelParams, FitError> {
    let total = check_weights(weights, flow.len())?;
    let d = family.basis_dim();
    let inv_total = 1.0 / total;
    let lifted: Vec<[f64; MAX_BASIS]> = (0..flow.height())
        .flat_map(|y| (0..flow.width()).map(move |x| (x, y)))
        .map(|(x, y)| {
            let mut l = [0.0; MAX_BASIS];
            lift_into(norm.apply(x as f64, y as f64), family, &mut l);
            l
        })
        .collect();
    let f = flow.to_f64();

    let mut mu_f = [0.0; 2];
    let mut mu_l = [0.0; MAX_BASIS];
    for ((fv, l), &w) in f.iter().zip(&lifted).zip(weights) {
        let wn = w * inv_total;
        mu_f[0] += wn * fv[0];
        mu_f[1] += wn * fv[1];
        for p in 0..d {
            mu_l[p] += wn * l[p];
        }
    }
    let mut s_ll = vec![0.0; d * d];
    let mut s_lf = vec![0.0; d * 2];
    let mut s_ff = 0.0;
    for ((fv, l), &w) in f.iter().zip(&lifted).zip(weights) {
        if w == 0.0 {
            continue;
        }
        let wn = w * inv_total;
        let cf = [fv[0] - mu_f[0], fv[1] - mu_f[1]];
        s_ff += wn * (cf[0] * cf[0] + cf[1] * cf[1]);
        for p in 0..d {
            let cp = wn * (l[p] - mu_l[p]);
            for q in 0..d {
                s_ll[p * d + q] += cp * (l[q] - mu_l[q]);
            }
            s_lf[p * 2] += cp * cf[0];
            s_lf[p * 2 + 1] += cp * cf[1];
        }
    }
    // trace of the homogeneous second-moment matrix, for the shared ridge scale
    let trace_hom: f64 = (0..d).map(|p| s_ll[p * d + p] + mu_l[p] * mu_l[p]).sum::<f64>() + 1.0;
    let lambda = ridge * trace_hom / (d + 1) as f64;
    let mut s_reg = s_ll.clone();
    for p in 0..d {
        s_reg[p * d + p] += lambda;
    }
    let at = if d == 0 {
        Vec::new()
    } else {
        solve_spd(&s_reg, d, &s_lf, 2).ok_or(FitError::SingularSystem)?
    };
    let a: [Vec<f64>; 2] = std::array::from_fn(|c| (0..d).map(|p| at[p * 2 + c]).collect());
    let b = std::array::from_fn(|c| mu_f[c] - (0..d).map(|p| a[c][p] * mu_l[p]).sum::<f64>());

    // E / S = tr Σ_FF − 2 tr(A Σ_ΩF) + tr(A Σ_ΩΩ Aᵀ), exact for b = μ_F − A μ_Ω
    let mut cross = 0.0;
    let mut quad = 0.0;
    for c in 0..2 {
        for p in 0..d {
            cross += a[c][p] * s_lf[p * 2 + c];
            for q in 0..d {
                quad += a[c][p] * s_ll[p * d + q] * a[c][q];
            }
        }
    }
    let mut params = MotionModelParams::new(family, a, b);
    params.weight_total = total;
    params.energy = (total * (s_ff - 2.0 * cross + quad)).max(0.0);
    Ok(params)
}

/// Per-pixel squared residual `‖F − A lift(u) − b‖²`.
pub fn residual_map(flow: &FlowField, params: &MotionModelParams, norm: CoordNormalization) -> Vec<f64> {
    let basis = Basis::new(flow.width(), flow.height(), params.family, norm);
    residuals_with_basis(&basis, &flow.to_f64(), params)
}

pub fn residuals_with_basis(basis: &Basis, flow: &[[f64; 2]], params: &MotionModelParams) -> Vec<f64> {
    let d = basis.n - 1;
    flow.iter()
        .enumerate()
        .map(|(i, f)| {
            let p = params.predict_lifted(&basis.row(i)[..d]);
            let (dx, dy) = (f[0] - p[0], f[1] - p[1]);
            dx * dx + dy * dy
        })
        .collect()
}

/// Evaluates the model at every pixel.
pub fn synthesize_flow(params: &MotionModelParams, width: usize, height: usize, norm: CoordNormalization) -> FlowField {
    FlowField::from_fn(width, height, |x, y| {
        let p = params.predict(norm.apply(x as f64, y as f64));
        [p[0] as f32, p[1] as f32]
    })
}
