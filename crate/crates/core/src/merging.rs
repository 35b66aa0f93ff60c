//! Merging an over-segmentation into foreground and background.
//!
//! Segments are described by their mass-weighted mean appearance feature.
//! Cosine similarities between those means, floored at `ε`, form an affinity
//! graph that is split in two with the normalized-cut relaxation: the
//! eigenvector of the second-smallest eigenvalue of
//! `L = I − D^{-1/2} Π D^{-1/2}`, rescaled by `D^{-1/2}`, orders the segments,
//! and the split point along that order with the lowest normalized cut wins.

use thiserror::Error;

use crate::flowfield::LabelMap;
use crate::gwm_energy::SoftMasks;
use crate::linalg::symmetric_eigen;
use crate::segmenter::Features;

pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergeError {
    #[error("every segment is degenerate")]
    AllDegenerate,
    #[error("need at least two segments, got {0}")]
    TooFewSegments(usize),
    #[error("eigen-decomposition did not converge")]
    EigenFailure,
    #[error("features and masks disagree on pixel count ({features} vs {masks})")]
    DimensionMismatch { features: usize, masks: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentFeatures {
    /// Mean feature per segment; `None` when the segment mass is below the floor.
    pub means: Vec<Option<Vec<f64>>>,
    pub mass: Vec<f64>,
}

pub fn pool_features(features: &Features, masks: &SoftMasks, weight_floor: f64) -> Result<SegmentFeatures, MergeError> {
    if features.pixels() != masks.pixels() {
        return Err(MergeError::DimensionMismatch { features: features.pixels(), masks: masks.pixels() });
    }
    let (k, d) = (masks.k(), features.dim);
    let mut sums = vec![vec![0.0; d]; k];
    let mut mass = vec![0.0; k];
    for u in 0..masks.pixels() {
        let phi = features.pixel(u);
        for (j, &p) in masks.pixel(u).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            mass[j] += p;
            for (s, f) in sums[j].iter_mut().zip(phi) {
                *s += p * f;
            }
        }
    }
    let floor = weight_floor * masks.pixels() as f64;
    let means = sums
        .into_iter()
        .zip(&mass)
        .map(|(s, &m)| (m > 0.0 && m >= floor).then(|| s.into_iter().map(|v| v / m).collect()))
        .collect();
    Ok(SegmentFeatures { means, mass })
}

/// Symmetric K x K affinities in `[ε, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    pub k: usize,
    pub values: Vec<f64>,
}

impl AffinityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }

    /// Simultaneous row/column permutation: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> AffinityMatrix {
        let k = self.k;
        let values = (0..k * k).map(|idx| self.get(perm[idx / k], perm[idx % k])).collect();
        AffinityMatrix { k, values }
    }
}

pub fn affinity(sf: &SegmentFeatures, epsilon: f64) -> Result<AffinityMatrix, MergeError> {
    let k = sf.means.len();
    let unit: Vec<Option<Vec<f64>>> = sf
        .means
        .iter()
        .map(|m| {
            m.as_ref().and_then(|v| {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
            })
        })
        .collect();
    if unit.iter().all(Option::is_none) {
        return Err(MergeError::AllDegenerate);
    }
    let mut values = vec![epsilon; k * k];
    for i in 0..k {
        values[i * k + i] = 1.0;
        for j in (i + 1)..k {
            if let (Some(a), Some(b)) = (&unit[i], &unit[j]) {
                let c: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let v = c.clamp(epsilon, 1.0);
                values[i * k + j] = v;
                values[j * k + i] = v;
            }
        }
    }
    Ok(AffinityMatrix { k, values })
}

/// Normalized-cut value `cut(A,B)/assoc(A,V) + cut(A,B)/assoc(B,V)` of a 2-coloring.
pub fn normalized_cut(pi: &AffinityMatrix, coloring: &[bool]) -> f64 {
    let k = pi.k;
    let (mut cut, mut assoc_a, mut assoc_b) = (0.0, 0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let w = pi.get(i, j);
            if coloring[i] {
                assoc_b += w;
            } else {
                assoc_a += w;
            }
            if coloring[i] != coloring[j] && i < j {
                cut += w;
            }
        }
    }
    cut / assoc_a + cut / assoc_b
}

/// Two-way split of the segments. Node 0 is always colored `false`.
pub fn spectral_bipartition(pi: &AffinityMatrix) -> Result<Vec<bool>, MergeError> {
    let k = pi.k;
    if k < 2 {
        return Err(MergeError::TooFewSegments(k));
    }
    let degree: Vec<f64> = (0..k).map(|i| (0..k).map(|j| pi.get(i, j)).sum()).collect();
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut lap = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let id = if i == j { 1.0 } else { 0.0 };
            lap[i * k + j] = id - inv_sqrt[i] * pi.get(i, j) * inv_sqrt[j];
        }
    }
    let eig = symmetric_eigen(&lap, k).ok_or(MergeError::EigenFailure)?;
    let fiedler: Vec<f64> = eig.vector(1).iter().zip(&inv_sqrt).map(|(v, s)| v * s).collect();

    // best contiguous split of the nodes sorted by their Fiedler entry
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| fiedler[a].total_cmp(&fiedler[b]).then(a.cmp(&b)));
    let mut coloring = vec![false; k];
    let mut best = f64::INFINITY;
    for cut in 1..k {
        let mut side = vec![false; k];
        for &i in &order[cut..] {
            side[i] = true;
        }
        let value = normalized_cut(pi, &side);
        if value < best {
            best = value;
            coloring = side;
        }
    }
    if coloring[0] {
        coloring.iter_mut().for_each(|c| *c = !*c);
    }
    Ok(coloring)
}

/// Binary foreground: pixels whose argmax component is on the chosen side.
///
/// The side touching the image border less (as a fraction of border pixels)
/// is foreground; ties go to the smaller area, then to the side containing
/// component 0.
pub fn select_foreground(coloring: &[bool], masks: &SoftMasks) -> LabelMap {
    let (w, h) = (masks.width(), masks.height());
    let side: Vec<bool> = masks.argmax().into_iter().map(|j| coloring[j]).collect();
    let on_border = |u: usize| {
        let (x, y) = (u % w, u / w);
        x == 0 || y == 0 || x + 1 == w || y + 1 == h
    };
    let mut border = [0usize; 2];
    let mut area = [0usize; 2];
    for (u, &s) in side.iter().enumerate() {
        area[s as usize] += 1;
        if on_border(u) {
            border[s as usize] += 1;
        }
    }
    let fg_side = match border[0].cmp(&border[1]) {
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Equal => match area[0].cmp(&area[1]) {
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Equal => coloring[0],
        },
    };
    let data = side.iter().map(|&s| u8::from(s == fg_side)).collect();
    LabelMap::new(w, h, data).expect("mask size")
}

/// How a foreground mask was obtained from K components.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeKind {
    /// K = 2: the two components are the two sides.
    Identity,
    Spectral,
}

impl MergeKind {
    pub fn name(self) -> &'static str {
        match self {
            MergeKind::Identity => "identity",
            MergeKind::Spectral => "spectral",
        }
    }
}

/// Full merge: pool features, build affinities, bipartition, pick the foreground side.
pub fn merge_to_foreground(
    features: &Features,
    masks: &SoftMasks,
    epsilon: f64,
    weight_floor: f64,
) -> Result<(LabelMap, Vec<bool>, MergeKind), MergeError> {
    if masks.k() == 2 {
        let coloring = vec![false, true];
        return Ok((select_foreground(&coloring, masks), coloring, MergeKind::Identity));
    }
    let sf = pool_features(features, masks, weight_floor)?;
    let pi = affinity(&sf, epsilon)?;
    let coloring = spectral_bipartition(&pi)?;
    Ok((select_foreground(&coloring, masks), coloring, MergeKind::Spectral))
}
