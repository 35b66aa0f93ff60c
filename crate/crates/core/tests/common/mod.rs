//! Test-only oracles built independently of the library's solvers.
#![allow(dead_code)]

use gwm::flowfield::FlowField;
use gwm::gwm_energy::{gwm_grad_logits, gwm_loss, LossConfig, SoftMasks};
use gwm::merging::AffinityMatrix;
use gwm::motion_models::ModelFamily;
use gwm::rng::SplitMix64;

pub const FAMILIES: [ModelFamily; 3] = [ModelFamily::Constant, ModelFamily::Affine, ModelFamily::Quadratic12];

/// Basis in raw pixel coordinates, constant last.
pub fn raw_basis(x: f64, y: f64, family: ModelFamily) -> Vec<f64> {
    match family {
        ModelFamily::Constant => vec![1.0],
        ModelFamily::Affine => vec![x, y, 1.0],
        ModelFamily::Quadratic12 => vec![x, x * x, y, y * y, x * y, 1.0],
    }
}

/// Gaussian elimination with partial pivoting; `a` is n×n row-major.
pub fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(piv * n + c, col * n + c);
            }
            b.swap(piv, col);
        }
        for r in (col + 1)..n {
            let f = a[r * n + col] / a[col * n + col];
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|c| a[r * n + c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    Some(x)
}

/// Raw-coordinate least-squares problem `Σ w ‖F − M φ‖²`, both channels jointly.
pub struct RawProblem {
    pub phi: Vec<Vec<f64>>,
    pub flow: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl RawProblem {
    pub fn new(flow: &FlowField, weights: &[f64], family: ModelFamily) -> Self {
        let mut phi = Vec::new();
        for y in 0..flow.height() {
            for x in 0..flow.width() {
                phi.push(raw_basis(x as f64, y as f64, family));
            }
        }
        Self { phi, flow: flow.to_f64(), weights: weights.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.phi[0].len()
    }

    /// `m` holds 2·n unknowns: channel 0 coefficients then channel 1.
    pub fn energy(&self, m: &[f64]) -> f64 {
        let n = self.dim();
        let mut e = 0.0;
        for ((p, f), &w) in self.phi.iter().zip(&self.flow).zip(&self.weights) {
            for c in 0..2 {
                let pred: f64 = (0..n).map(|i| m[c * n + i] * p[i]).sum();
                e += w * (f[c] - pred).powi(2);
            }
        }
        e
    }

    pub fn gradient(&self, m: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut g = vec![0.0; 2 * n];
        for ((p, f), &w) in self.phi.iter().zip(&self.flow).zip(&self.weights) {
            for c in 0..2 {
                let pred: f64 = (0..n).map(|i| m[c * n + i] * p[i]).sum();
                let r = pred - f[c];
                for i in 0..n {
                    g[c * n + i] += 2.0 * w * r * p[i];
                }
            }
        }
        g
    }

    /// Normal equations for all 2·n unknowns as one block system.
    pub fn solve(&self) -> Option<Vec<f64>> {
        let n = self.dim();
        let size = 2 * n;
        let mut a = vec![0.0; size * size];
        let mut b = vec![0.0; size];
        for ((p, f), &w) in self.phi.iter().zip(&self.flow).zip(&self.weights) {
            for c in 0..2 {
                for i in 0..n {
                    b[c * n + i] += w * p[i] * f[c];
                    for j in 0..n {
                        a[(c * n + i) * size + c * n + j] += w * p[i] * p[j];
                    }
                }
            }
        }
        dense_solve(a, b, size)
    }

    /// Steepest descent with exact line search; returns the lowest energy seen.
    pub fn refine(&self, start: &[f64], steps: usize) -> f64 {
        let mut m = start.to_vec();
        let mut best = self.energy(&m);
        for _ in 0..steps {
            let g = self.gradient(&m);
            let gg: f64 = g.iter().map(|v| v * v).sum();
            if gg == 0.0 {
                break;
            }
            // the energy is quadratic: E(m − t g) = E − t gg + t² curv
            let e0 = self.energy(&m);
            let probe: Vec<f64> = m.iter().zip(&g).map(|(a, b)| a - b).collect();
            let curv = self.energy(&probe) - e0 + gg;
            if curv <= 0.0 {
                break;
            }
            let t = gg / (2.0 * curv);
            m.iter_mut().zip(&g).for_each(|(a, b)| *a -= t * b);
            best = best.min(self.energy(&m));
        }
        best
    }
}

/// Oracle minimum energy: elimination, then checked by descent refinement.
pub fn oracle_energy(flow: &FlowField, weights: &[f64], family: ModelFamily) -> f64 {
    let prob = RawProblem::new(flow, weights, family);
    let m = prob.solve().expect("oracle system singular");
    prob.refine(&m, 20)
}

pub fn random_flow(rng: &mut SplitMix64, w: usize, h: usize, scale: f64) -> FlowField {
    FlowField::from_fn(w, h, |_, _| {
        [(scale * (2.0 * rng.uniform() - 1.0)) as f32, (scale * (2.0 * rng.uniform() - 1.0)) as f32]
    })
}

/// Positive weights with a random global scale; about one in eight pixels gets weight 0.
pub fn random_weights(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    let scale = 10f64.powf(4.0 * rng.uniform() - 2.0);
    (0..n).map(|_| if rng.uniform() < 0.125 { 0.0 } else { scale * (0.05 + rng.uniform()) }).collect()
}

pub fn random_logits(rng: &mut SplitMix64, n: usize, spread: f64) -> Vec<f64> {
    (0..n).map(|_| spread * rng.normal()).collect()
}

pub struct RelErr {
    pub worst: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Analytic logit gradient against central differences of the loss.
///
/// The error of one entry is `|a − n| / max(|n|, 1e-2 ‖n‖∞)`, so entries that
/// are tiny compared to the whole gradient are judged on the gradient's scale.
/// Pixels where two residuals are within `tie` are skipped.
pub fn fd_gradient_error(flow: &FlowField, logits: &[f64], k: usize, cfg: &LossConfig, step: f64, tie: f64) -> RelErr {
    let (w, h) = (flow.width(), flow.height());
    let (report, grad) = gwm_grad_logits(flow, logits, k, cfg).unwrap();
    let loss_at = |z: &[f64]| gwm_loss(flow, &SoftMasks::from_logits(k, w, h, z).unwrap(), cfg).unwrap().total;
    let mut z = logits.to_vec();
    let mut numeric = vec![0.0; logits.len()];
    for i in 0..logits.len() {
        let orig = z[i];
        z[i] = orig + step;
        let up = loss_at(&z);
        z[i] = orig - step;
        let down = loss_at(&z);
        z[i] = orig;
        numeric[i] = (up - down) / (2.0 * step);
    }
    let norm = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = RelErr { worst: 0.0, checked: 0, skipped: 0 };
    for u in 0..w * h {
        let r: Vec<f64> = (0..k).map(|j| report.residuals[j][u]).collect();
        let tied = (0..k).any(|a| ((a + 1)..k).any(|b| (r[a] - r[b]).abs() < tie));
        if tied {
            out.skipped += 1;
            continue;
        }
        for j in 0..k {
            let (a, n) = (grad[u * k + j], numeric[u * k + j]);
            let denom = n.abs().max(1e-2 * norm);
            if denom > 0.0 {
                out.worst = out.worst.max((a - n).abs() / denom);
            }
        }
        out.checked += 1;
    }
    out
}

/// Random symmetric affinity with unit diagonal and entries in (0, 1].
pub fn random_affinity(rng: &mut SplitMix64, k: usize) -> AffinityMatrix {
    let mut values = vec![1.0; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            let v = rng.uniform().max(1e-12);
            values[i * k + j] = v;
            values[j * k + i] = v;
        }
    }
    AffinityMatrix { k, values }
}

/// Normalized cut computed from the node degrees.
pub fn ncut_oracle(pi: &AffinityMatrix, side: &[bool]) -> f64 {
    let k = pi.k;
    let degree = |i: usize| (0..k).map(|j| pi.get(i, j)).sum::<f64>();
    let vol_a: f64 = (0..k).filter(|&i| !side[i]).map(degree).sum();
    let vol_b: f64 = (0..k).filter(|&i| side[i]).map(degree).sum();
    let mut cut = 0.0;
    for i in 0..k {
        for j in 0..k {
            if !side[i] && side[j] {
                cut += pi.get(i, j);
            }
        }
    }
    cut / vol_a + cut / vol_b
}

/// Exhaustive minimum over all 2^K − 2 nontrivial bipartitions.
pub fn brute_min_ncut(pi: &AffinityMatrix) -> f64 {
    let k = pi.k;
    (1..(1u32 << k) - 1)
        .map(|mask| {
            let side: Vec<bool> = (0..k).map(|i| mask >> i & 1 == 1).collect();
            ncut_oracle(pi, &side)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Relative difference with an absolute floor on the scale.
pub fn rel_diff(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Every file under `dir`, keyed by relative path.
pub fn tree_bytes(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Checks `value` against the JSON-schema keywords the manifest schema uses:
/// type, enum, required, properties, additionalProperties, items, minimum,
/// exclusiveMinimum, exclusiveMaximum.
pub fn schema_errors(schema: &serde_json::Value, value: &serde_json::Value, at: &str) -> Vec<String> {
    use serde_json::Value;
    let mut errs = Vec::new();
    let type_ok = |t: &str| match t {
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "integer" => value.is_u64() || value.is_i64(),
        "number" => value.is_number(),
        "null" => value.is_null(),
        "boolean" => value.is_boolean(),
        _ => false,
    };
    match schema.get("type") {
        Some(Value::String(t)) if !type_ok(t) => errs.push(format!("{at}: expected {t}")),
        Some(Value::Array(ts)) if !ts.iter().any(|t| type_ok(t.as_str().unwrap())) => {
            errs.push(format!("{at}: expected one of {ts:?}"))
        }
        _ => {}
    }
    if let Some(Value::Array(allowed)) = schema.get("enum") {
        if !allowed.contains(value) {
            errs.push(format!("{at}: {value} not in {allowed:?}"));
        }
    }
    if let Some(x) = value.as_f64() {
        if let Some(m) = schema.get("minimum").and_then(Value::as_f64) {
            if x < m {
                errs.push(format!("{at}: {x} < {m}"));
            }
        }
        if let Some(m) = schema.get("exclusiveMinimum").and_then(Value::as_f64) {
            if x <= m {
                errs.push(format!("{at}: {x} <= {m}"));
            }
        }
        if let Some(m) = schema.get("exclusiveMaximum").and_then(Value::as_f64) {
            if x >= m {
                errs.push(format!("{at}: {x} >= {m}"));
            }
        }
    }
    if let Some(obj) = value.as_object() {
        let props = schema.get("properties").and_then(Value::as_object);
        if let Some(Value::Array(req)) = schema.get("required") {
            for r in req {
                if !obj.contains_key(r.as_str().unwrap()) {
                    errs.push(format!("{at}: missing {r}"));
                }
            }
        }
        for (key, v) in obj {
            match props.and_then(|p| p.get(key)) {
                Some(sub) => errs.extend(schema_errors(sub, v, &format!("{at}.{key}"))),
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    errs.push(format!("{at}: unexpected key {key}"))
                }
                None => {}
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            errs.extend(schema_errors(items, v, &format!("{at}[{i}]")));
        }
    }
    errs
}
