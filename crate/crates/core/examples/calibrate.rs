//! Prints the segmentation experiments used to pin the acceptance floors.

use std::time::Instant;

use gwm::motion_models::ModelFamily;
use gwm::eval::evaluate_oracle;
use gwm::pipeline::{run_scene, scene_masks};
use gwm::scenes::{generate, heldout_pair, preset};
use gwm::segmenter::{Mode, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let name = args.get(1).map(String::as_str).unwrap_or("two-sprites");
    let family: ModelFamily = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(ModelFamily::Quadratic12);
    let k: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(4);
    let mode: Mode = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(Mode::PerPixel);
    let lr: Option<f64> = args.get(5).map(|s| s.parse().unwrap());
    let iters: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(300);
    let seeds: u64 = std::env::var("SEEDS").ok().map(|s| s.parse().unwrap()).unwrap_or(5);
    for seed in 0..seeds {
        let scene = generate(&preset(name, seed).unwrap()).unwrap();
        let mut cfg = TrainConfig { family, k, seed, learning_rate: lr, iterations: iters, ..TrainConfig::default() };
        if let Ok(v) = std::env::var("INIT") {
            cfg.init_scale = v.parse().unwrap();
        }
        if let Ok(v) = std::env::var("RIDGE") {
            cfg.ridge = v.parse().unwrap();
        }
        if let Ok(v) = std::env::var("MOMENTUM") {
            cfg.momentum = v.parse().unwrap();
        }
        let t = Instant::now();
        let out = run_scene(&scene, &cfg, mode).unwrap();
        let tr = &out.train.loss_trace;
        if name == "heldout-pair" {
            let test = generate(&heldout_pair(seed).1).unwrap();
            let masks = scene_masks(&out.train.segmenter, &test).unwrap();
            println!("  held-out oracle J {:.4}", evaluate_oracle(&test, &masks).unwrap().mean);
        }
        println!(
            "{name} {family} K={k} seed={seed}: loss {:.4e} -> {:.4e} (ratio {:.2e}, mono {:.3}) oracle J {:.4} heuristic J {:.4} [{:.2}s]",
            tr[0],
            out.train.final_loss(),
            out.train.final_loss() / tr[0],
            out.train.non_increasing_fraction(),
            out.oracle.mean,
            out.heuristic.mean,
            t.elapsed().as_secs_f64()
        );
        if std::env::var("TABLE").is_ok() {
            for (m, f) in out.masks.iter().zip(&scene.frames) {
                let gmax = f.labels.max_label() as usize;
                let mut table = vec![vec![0usize; gmax + 1]; k];
                for (c, &g) in m.argmax().into_iter().zip(f.labels.data()) {
                    table[c][g as usize] += 1;
                }
                println!("  {table:?}");
            }
        }
        if std::env::var("MAP").is_ok() {
            let m = &out.masks[0];
            let am = m.argmax();
            for y in 0..m.height() {
                let row: String = (0..m.width()).map(|x| {
                    let c = am[y * m.width() + x];
                    let g = scene.frames[0].labels.get(x, y);
                    let ch = (b'a' + c as u8) as char;
                    if g != 0 { ch.to_ascii_uppercase() } else { ch }
                }).collect();
                println!("  {row}");
            }
        }
        if std::env::var("TRACE").is_ok() {
            for (i, l) in tr.iter().enumerate().step_by(10) {
                println!("  {i} {l:.4e}");
            }
        }
    }
}
