//! Synthetic scenes with exact ground-truth flow and instance masks.
//!
//! Each sprite has a shape centered at `c_t` and a per-step flow model. The
//! flow at a pixel is the motion model of its topmost owner (painter's order:
//! later sprites cover earlier ones, all cover the background) evaluated at the
//! pixel, plus optional Gaussian noise. The shape is carried rigidly: the next
//! center is `c_{t+1} = c_t + F(c_t)`. Flow is analytic, so it is exact even
//! where the rendered frames only approximate the motion (non-translational
//! models, disocclusions).
//!
//! Noise for frame `t` is drawn from `SplitMix64::stream(seed, t)`, two normals
//! per pixel (x then y channel) in row-major order, so frames can be rendered
//! independently.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowfield::{
    read_flo, read_pgm, read_ppm, write_flo, write_pgm, write_ppm, FlowError, FlowField, LabelMap, RgbImage,
};
use crate::motion_models::{CoordNormalization, ModelFamily, MotionModelParams};
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("sprite {sprite} leaves the frame at t = {frame}")]
    SpriteOutOfBounds { sprite: usize, frame: usize },
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("scene check failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Format(#[from] FlowError),
    #[error("scene.json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rectangle,
    Ellipse,
    /// Isosceles, apex up.
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Fill {
    Flat { color: [u8; 3] },
    Checker { a: [u8; 3], b: [u8; 3], cell: usize },
}

impl Fill {
    fn color_at(&self, dx: f64, dy: f64) -> [u8; 3] {
        match *self {
            Fill::Flat { color } => color,
            Fill::Checker { a, b, cell } => {
                let c = cell.max(1) as f64;
                let parity = ((dx / c).floor() as i64 + (dy / c).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

/// Per-step motion: one model per frame, or a single model reused for every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory(pub Vec<MotionModelParams>);

impl Trajectory {
    pub fn constant(p: MotionModelParams) -> Self {
        Trajectory(vec![p])
    }

    pub fn at(&self, t: usize) -> &MotionModelParams {
        &self.0[t.min(self.0.len() - 1)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub shape: Shape,
    /// Center at frame 0, pixels.
    pub center: [f64; 2],
    pub half_size: [f64; 2],
    pub fill: Fill,
    pub motion: Trajectory,
}

impl Sprite {
    fn contains(&self, center: [f64; 2], x: f64, y: f64) -> bool {
        let (dx, dy) = (x - center[0], y - center[1]);
        let [hx, hy] = self.half_size;
        match self.shape {
            Shape::Rectangle => dx.abs() <= hx && dy.abs() <= hy,
            Shape::Ellipse => (dx / hx).powi(2) + (dy / hy).powi(2) <= 1.0,
            Shape::Triangle => dy.abs() <= hy && dx.abs() <= hx * (dy + hy) / (2.0 * hy),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub fill: Fill,
    pub motion: Trajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub sprites: Vec<Sprite>,
    pub background: Background,
    /// Flow noise standard deviation, px.
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: RgbImage,
    pub flow: FlowField,
    /// 0 = background, `i + 1` = sprite `i`.
    pub labels: LabelMap,
    /// Binary union of all sprites.
    pub foreground: LabelMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub frames: Vec<Frame>,
}

impl SceneSpec {
    fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidSpec(m.into()));
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return bad("width, height and frames must be positive");
        }
        if self.sprites.is_empty() {
            return bad("at least one sprite is required");
        }
        if self.sprites.len() > 254 {
            return bad("at most 254 sprites");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be a finite non-negative number");
        }
        let trajectories = self.sprites.iter().map(|s| &s.motion).chain([&self.background.motion]);
        for tr in trajectories {
            if tr.0.is_empty() || (tr.0.len() != 1 && tr.0.len() != self.frames) {
                return bad("each trajectory needs 1 or `frames` motion models");
            }
        }
        for s in &self.sprites {
            if !(s.half_size[0] > 0.0 && s.half_size[1] > 0.0) {
                return bad("sprite half sizes must be positive");
            }
        }
        Ok(())
    }

    fn norm(&self) -> CoordNormalization {
        CoordNormalization::new(self.width, self.height)
    }

    /// Sprite centers per frame, `centers[t][i]`.
    pub fn centers(&self) -> Result<Vec<Vec<[f64; 2]>>, SceneError> {
        let norm = self.norm();
        let mut out = Vec::with_capacity(self.frames);
        let mut current: Vec<[f64; 2]> = self.sprites.iter().map(|s| s.center).collect();
        for t in 0..self.frames {
            for (i, (s, c)) in self.sprites.iter().zip(&current).enumerate() {
                let [hx, hy] = s.half_size;
                let inside = c[0] - hx >= 0.0
                    && c[1] - hy >= 0.0
                    && c[0] + hx <= (self.width - 1) as f64
                    && c[1] + hy <= (self.height - 1) as f64;
                if !inside {
                    return Err(SceneError::SpriteOutOfBounds { sprite: i, frame: t });
                }
            }
            out.push(current.clone());
            for (s, c) in self.sprites.iter().zip(current.iter_mut()) {
                let f = s.motion.at(t).predict(norm.apply(c[0], c[1]));
                c[0] += f[0];
                c[1] += f[1];
            }
        }
        Ok(out)
    }

    /// Background texture offsets per frame (accumulated flow at the image center).
    fn background_offsets(&self) -> Vec<[f64; 2]> {
        let mut o = [0.0; 2];
        (0..self.frames)
            .map(|t| {
                let cur = o;
                let f = self.background.motion.at(t).predict([0.0, 0.0]);
                o = [o[0] + f[0], o[1] + f[1]];
                cur
            })
            .collect()
    }
}

fn render_frame(spec: &SceneSpec, t: usize, centers: &[[f64; 2]], bg_offset: [f64; 2]) -> Frame {
    let (w, h) = (spec.width, spec.height);
    let norm = spec.norm();
    let mut image = RgbImage::filled(w, h, [0, 0, 0]);
    let mut labels = LabelMap::zeros(w, h);
    let mut clean = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let owner = spec.sprites.iter().zip(centers).enumerate().rev().find(|(_, (s, &c))| s.contains(c, xf, yf));
            let u = norm.apply(xf, yf);
            let (color, label, f) = match owner {
                Some((i, (s, &c))) => (s.fill.color_at(xf - c[0], yf - c[1]), (i + 1) as u8, s.motion.at(t).predict(u)),
                None => (
                    spec.background.fill.color_at(xf - bg_offset[0], yf - bg_offset[1]),
                    0,
                    spec.background.motion.at(t).predict(u),
                ),
            };
            image.set(x, y, color);
            labels.set(x, y, label);
            clean.push(f);
        }
    }
    let mut rng = SplitMix64::stream(spec.seed, t as u64);
    let data = clean
        .into_iter()
        .map(|f| {
            if spec.noise_sigma > 0.0 {
                let nx = rng.normal() * spec.noise_sigma;
                let ny = rng.normal() * spec.noise_sigma;
                [(f[0] + nx) as f32, (f[1] + ny) as f32]
            } else {
                [f[0] as f32, f[1] as f32]
            }
        })
        .collect();
    let flow = FlowField::new(w, h, data).expect("frame size");
    let foreground = labels.foreground();
    Frame { image, flow, labels, foreground }
}

/// Renders every frame of `spec`; deterministic in the spec (including its seed).
pub fn generate(spec: &SceneSpec) -> Result<Scene, SceneError> {
    spec.validate()?;
    let centers = spec.centers()?;
    let offsets = spec.background_offsets();
    let frames = (0..spec.frames)
        .into_par_iter()
        .map(|t| render_frame(spec, t, &centers[t], offsets[t]))
        .collect();
    Ok(Scene { spec: spec.clone(), frames })
}

/// Checks a scene against the generator's invariants: sizes agree, the
/// foreground is the union of instances, and flow matches the owner's motion
/// exactly (noise-free) or with residual variance near `σ²` per channel.
pub fn verify(scene: &Scene) -> Result<(), SceneError> {
    let spec = &scene.spec;
    let fail = |m: String| Err(SceneError::Verification(m));
    if scene.frames.len() != spec.frames {
        return fail(format!("expected {} frames, found {}", spec.frames, scene.frames.len()));
    }
    let centers = spec.centers()?;
    let norm = spec.norm();
    let mut sq = 0.0;
    let mut count = 0usize;
    for (t, fr) in scene.frames.iter().enumerate() {
        let dims = [
            (fr.image.width(), fr.image.height()),
            (fr.flow.width(), fr.flow.height()),
            (fr.labels.width(), fr.labels.height()),
            (fr.foreground.width(), fr.foreground.height()),
        ];
        if dims.iter().any(|&d| d != (spec.width, spec.height)) {
            return fail(format!("frame {t}: dimension mismatch"));
        }
        fr.flow.check_finite()?;
        if fr.foreground != fr.labels.foreground() {
            return fail(format!("frame {t}: foreground is not the union of instances"));
        }
        for y in 0..spec.height {
            for x in 0..spec.width {
                let (xf, yf) = (x as f64, y as f64);
                let owner = spec.sprites.iter().zip(&centers[t]).rposition(|(s, &c)| s.contains(c, xf, yf));
                let label = owner.map_or(0, |i| i + 1) as u8;
                if fr.labels.get(x, y) != label {
                    return fail(format!("frame {t}: label mismatch at ({x}, {y})"));
                }
                let model = owner.map_or(spec.background.motion.at(t), |i| spec.sprites[i].motion.at(t));
                let p = model.predict(norm.apply(xf, yf));
                let f = fr.flow.get(x, y);
                for c in 0..2 {
                    let r = f[c] as f64 - p[c];
                    if spec.noise_sigma == 0.0 && r.abs() > 1e-4 * (1.0 + p[c].abs()) {
                        return fail(format!("frame {t}: flow mismatch at ({x}, {y})"));
                    }
                    sq += r * r;
                    count += 1;
                }
            }
        }
    }
    if spec.noise_sigma > 0.0 && count >= 100 {
        let var = sq / count as f64;
        let s2 = spec.noise_sigma * spec.noise_sigma;
        if !(0.7 * s2..=1.3 * s2).contains(&var) {
            return fail(format!("flow noise variance {var} inconsistent with sigma {}", spec.noise_sigma));
        }
    }
    Ok(())
}

pub const PRESETS: [&str; 5] = ["smoke", "two-sprites", "parallax", "nonrigid-proxy", "heldout-pair"];

fn translation(b: [f64; 2]) -> MotionModelParams {
    MotionModelParams::translation(ModelFamily::Affine, b)
}

fn affine(a: [[f64; 2]; 2], b: [f64; 2]) -> MotionModelParams {
    MotionModelParams::new(ModelFamily::Affine, [a[0].to_vec(), a[1].to_vec()], b)
}

fn still() -> Trajectory {
    Trajectory::constant(translation([0.0, 0.0]))
}

const GRAY: [u8; 3] = [128, 128, 128];
const DARK: [u8; 3] = [40, 40, 40];
const RED: [u8; 3] = [200, 50, 40];
const BLUE: [u8; 3] = [40, 70, 210];
const GREEN: [u8; 3] = [50, 180, 70];
const ORANGE: [u8; 3] = [230, 140, 30];
const YELLOW: [u8; 3] = [240, 200, 60];

/// Documented fixed scene specs. `seed` only drives the flow noise.
pub fn preset(name: &str, seed: u64) -> Result<SceneSpec, SceneError> {
    let spec = match name {
        "smoke" => SceneSpec {
            width: 48,
            height: 48,
            frames: 2,
            sprites: vec![Sprite {
                shape: Shape::Rectangle,
                center: [18.0, 20.0],
                half_size: [7.0, 6.0],
                fill: Fill::Flat { color: RED },
                motion: Trajectory::constant(translation([2.0, 1.0])),
            }],
            background: Background { fill: Fill::Flat { color: GRAY }, motion: still() },
            noise_sigma: 0.0,
            seed,
        },
        "two-sprites" => SceneSpec {
            width: 64,
            height: 64,
            frames: 4,
            sprites: vec![
                Sprite {
                    shape: Shape::Rectangle,
                    center: [18.0, 18.0],
                    half_size: [11.0, 9.0],
                    fill: Fill::Flat { color: RED },
                    motion: Trajectory::constant(affine([[0.3, 0.0], [0.0, 0.3]], [4.0, 2.0])),
                },
                Sprite {
                    shape: Shape::Ellipse,
                    center: [45.0, 45.0],
                    half_size: [12.0, 11.0],
                    fill: Fill::Checker { a: ORANGE, b: YELLOW, cell: 4 },
                    motion: Trajectory::constant(affine([[0.0, -0.4], [0.4, 0.0]], [-4.0, -3.0])),
                },
            ],
            background: Background {
                fill: Fill::Checker { a: [40, 60, 110], b: [60, 85, 140], cell: 8 },
                motion: Trajectory::constant(translation([0.5, 0.25])),
            },
            noise_sigma: 0.1,
            seed,
        },
        "parallax" => SceneSpec {
            width: 64,
            height: 64,
            frames: 3,
            sprites: vec![Sprite {
                shape: Shape::Rectangle,
                center: [30.0, 32.0],
                half_size: [8.0, 7.0],
                fill: Fill::Flat { color: GREEN },
                motion: Trajectory::constant(translation([1.5, 0.5])),
            }],
            background: Background {
                fill: Fill::Checker { a: [112, 112, 112], b: [144, 144, 144], cell: 8 },
                motion: Trajectory::constant(MotionModelParams::new(
                    ModelFamily::Quadratic12,
                    [vec![0.0, 0.0, 2.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 0.0, 0.0]],
                    [0.0, 0.0],
                )),
            },
            noise_sigma: 0.0,
            seed,
        },
        "nonrigid-proxy" => SceneSpec {
            width: 64,
            height: 64,
            frames: 3,
            sprites: vec![
                Sprite {
                    shape: Shape::Rectangle,
                    center: [26.0, 32.0],
                    half_size: [7.0, 10.0],
                    fill: Fill::Flat { color: RED },
                    motion: Trajectory::constant(translation([1.5, 0.0])),
                },
                Sprite {
                    shape: Shape::Rectangle,
                    center: [40.0, 30.0],
                    half_size: [7.0, 3.0],
                    fill: Fill::Flat { color: RED },
                    motion: Trajectory::constant(affine([[0.0, -2.0], [2.0, 0.0]], [-1.0, 1.0])),
                },
            ],
            background: Background { fill: Fill::Flat { color: GRAY }, motion: still() },
            noise_sigma: 0.0,
            seed,
        },
        "heldout-pair" => heldout_pair(seed).0,
        other => return Err(SceneError::UnknownPreset(other.to_string())),
    };
    Ok(spec)
}

/// Training and held-out specs sharing sprite appearance but not placement or motion.
pub fn heldout_pair(seed: u64) -> (SceneSpec, SceneSpec) {
    let bg = Background { fill: Fill::Flat { color: DARK }, motion: Trajectory::constant(translation([-0.5, 0.0])) };
    let sprite = |shape, center, half_size, color, motion| Sprite {
        shape,
        center,
        half_size,
        fill: Fill::Flat { color },
        motion: Trajectory::constant(motion),
    };
    let train = SceneSpec {
        width: 64,
        height: 64,
        frames: 4,
        sprites: vec![
            sprite(Shape::Rectangle, [18.0, 18.0], [8.0, 6.0], RED, translation([1.5, 1.0])),
            sprite(Shape::Ellipse, [44.0, 44.0], [8.0, 8.0], BLUE, translation([-1.0, -1.5])),
        ],
        background: bg.clone(),
        noise_sigma: 0.05,
        seed,
    };
    let test = SceneSpec {
        width: 64,
        height: 64,
        frames: 2,
        sprites: vec![
            sprite(Shape::Rectangle, [42.0, 20.0], [7.0, 7.0], RED, translation([-1.0, 1.0])),
            sprite(Shape::Ellipse, [20.0, 44.0], [9.0, 7.0], BLUE, translation([1.0, -0.5])),
        ],
        background: bg,
        noise_sigma: 0.05,
        seed: seed.wrapping_add(1),
    };
    (train, test)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io { path: path.display().to_string(), source }
}

/// Writes `frame_%04d.ppm`, `flow_%04d.flo`, `gt_%04d.pgm`, `fg_%04d.pgm` and `scene.json`.
pub fn export(scene: &Scene, dir: &Path) -> Result<(), SceneError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let levels = scene.spec.sprites.len() + 1;
    for (t, fr) in scene.frames.iter().enumerate() {
        write_ppm(&fr.image, dir.join(format!("frame_{t:04}.ppm")))?;
        write_flo(&fr.flow, dir.join(format!("flow_{t:04}.flo")))?;
        write_pgm(&fr.labels, levels, dir.join(format!("gt_{t:04}.pgm")))?;
        write_pgm(&fr.foreground, 2, dir.join(format!("fg_{t:04}.pgm")))?;
    }
    let json = serde_json::to_string_pretty(&scene.spec)? + "\n";
    let path = dir.join("scene.json");
    fs::write(&path, json).map_err(io_err(&path))
}

/// Reads a directory written by [`export`].
pub fn load(dir: &Path) -> Result<Scene, SceneError> {
    let path = dir.join("scene.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let spec: SceneSpec = serde_json::from_str(&text)?;
    let levels = spec.sprites.len() + 1;
    let frames = (0..spec.frames)
        .map(|t| {
            Ok(Frame {
                image: read_ppm(dir.join(format!("frame_{t:04}.ppm")))?,
                flow: read_flo(dir.join(format!("flow_{t:04}.flo")))?,
                labels: read_pgm(dir.join(format!("gt_{t:04}.pgm")), levels)?,
                foreground: read_pgm(dir.join(format!("fg_{t:04}.pgm")), 2)?,
            })
        })
        .collect::<Result<Vec<_>, SceneError>>()?;
    Ok(Scene { spec, frames })
}
