//! Command-line behavior: exit codes, determinism, manifests and parity with the library.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{schema_errors, tree_bytes};
use gwm::cli::{decode_masks, run, PALETTE};
use gwm::eval::{evaluate_oracle, evaluate_run, JaccardReport};
use gwm::flowfield::{flow_to_color, read_flo, read_pgm, read_ppm, write_flo, FlowField, MaxMagnitude};
use gwm::pipeline::merge_scene;
use gwm::scenes;

fn gwm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gwm")).args(args).output().unwrap()
}

fn call(args: &[&str]) -> Result<String, gwm::cli::CliError> {
    run(std::iter::once("gwm").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn smoke_scene(dir: &Path) -> std::path::PathBuf {
    let s = dir.join("scene");
    call(&["gen", "--preset", "smoke", "--seed", "7", "--out", p(&s)]).unwrap();
    s
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = gwm(&["gen", "--preset", "two-sprites", "--seed", "7", "--out", p(out)]);
        assert!(o.status.success());
    }
    let ta = tree_bytes(&a);
    assert_eq!(ta.len(), 4 * 4 + 1);
    assert_eq!(ta, tree_bytes(&b));
}

#[test]
fn unknown_preset_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = gwm(&["gen", "--preset", "no-such-scene", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no-such-scene"));
}

#[test]
fn gen_verify_passes_for_every_preset() {
    let dir = tempfile::tempdir().unwrap();
    for name in scenes::PRESETS {
        let out = dir.path().join(name);
        call(&["gen", "--preset", name, "--verify", "--out", p(&out)]).unwrap();
        let scene = scenes::load(&out).unwrap();
        scenes::verify(&scene).unwrap();
    }
    let test = scenes::load(&dir.path().join("heldout-pair/test")).unwrap();
    assert_eq!(test, scenes::generate(&scenes::heldout_pair(0).1).unwrap());
}

#[test]
fn bad_config_and_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let scene = smoke_scene(dir.path());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"k": 4, "learning_rat": 0.1}}"#).unwrap();
    let out = dir.path().join("o");
    assert_eq!(gwm(&["segment", "--scene", p(&scene), "--out", p(&out), "--config", p(&cfg)]).status.code(), Some(2));
    assert_eq!(gwm(&["segment", "--scene", p(&scene), "--out", p(&out), "--k", "1"]).status.code(), Some(2));
    assert_eq!(gwm(&["segment", "--scene", p(&scene), "--out", p(&out), "--family", "cubic"]).status.code(), Some(2));
    assert_eq!(gwm(&["frobnicate"]).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_gwm"))
        .args(["gen", "--out", p(&out)])
        .env("GWM_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let scene = smoke_scene(dir.path());
    let missing = dir.path().join("missing");
    let out = dir.path().join("o");
    assert_eq!(gwm(&["merge", "--masks", p(&missing), "--scene", p(&scene), "--out", p(&out)]).status.code(), Some(3));
    assert_eq!(gwm(&["segment", "--scene", p(&missing), "--out", p(&out)]).status.code(), Some(3));
    assert_eq!(gwm(&["viz", p(&missing.join("x.flo")), "--out", p(&out)]).status.code(), Some(3));
    let cfg = missing.join("cfg.json");
    assert_eq!(gwm(&["gen", "--config", p(&cfg), "--out", p(&out)]).status.code(), Some(3));
}

#[test]
fn divergence_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let scene = smoke_scene(dir.path());
    let out = dir.path().join("o");
    let o = gwm(&["segment", "--scene", p(&scene), "--out", p(&out), "--lr", "1e308"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn smoke_segment_is_fast_and_lowers_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let scene = smoke_scene(dir.path());
    let out = dir.path().join("o");
    let t = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_gwm"))
        .args(["segment", "--scene", p(&scene), "--out", p(&out)])
        .env("GWM_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(t.elapsed().as_secs_f64() < 10.0);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let parse = |k: &str| m[k].as_str().unwrap().parse::<f64>().unwrap();
    assert!(parse("final_loss") < parse("initial_loss"));
    assert_eq!(m["merge"], "spectral");
    let trace = std::fs::read_to_string(out.join("loss_trace.csv")).unwrap();
    let last: f64 = trace.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(last.to_bits(), parse("final_loss").to_bits());
}

#[test]
fn manifest_matches_published_schema() {
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../schemas/manifest.schema.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let scene = smoke_scene(dir.path());
    for (i, extra) in [vec![], vec!["--k", "2", "--mode", "linear", "--lr", "0.3"]].into_iter().enumerate() {
        let out = dir.path().join(format!("o{i}"));
        let mut args = vec!["segment", "--scene", p(&scene), "--out", p(&out), "--iters", "20"];
        args.extend(extra);
        call(&args).unwrap();
        let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
        let errs = schema_errors(&schema, &m, "$");
        assert!(errs.is_empty(), "{errs:?}");
        assert!(m.to_string().find("time").is_none());
    }
    // the checker itself rejects a broken manifest
    let mut bad: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("o0/manifest.json")).unwrap()).unwrap();
    bad["merge"] = "kmeans".into();
    bad["extra"] = 1.into();
    assert_eq!(schema_errors(&schema, &bad, "$").len(), 2);
}

#[test]
fn two_components_merge_as_identity() {
    let dir = tempfile::tempdir().unwrap();
    let scene = smoke_scene(dir.path());
    let out = dir.path().join("o");
    call(&["segment", "--scene", p(&scene), "--out", p(&out), "--k", "2", "--iters", "50"]).unwrap();
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["merge"], "identity");
    for t in 0..2 {
        let masks = decode_masks(&std::fs::read(out.join(format!("masks_{t:04}.bin"))).unwrap()).unwrap();
        let fg = read_pgm(out.join(format!("fg_{t:04}.pgm")), 2).unwrap();
        let am = masks.argmax();
        // passthrough: the foreground is exactly one of the two argmax components
        let side = (0..am.len()).find(|&u| fg.data()[u] != 0).map(|u| am[u]).unwrap();
        assert!(am.iter().zip(fg.data()).all(|(&c, &f)| (c == side) == (f != 0)));
    }
}

#[test]
fn linear_mode_writes_a_reloadable_segmenter() {
    let dir = tempfile::tempdir().unwrap();
    let scene = smoke_scene(dir.path());
    let out = dir.path().join("o");
    call(&["segment", "--scene", p(&scene), "--out", p(&out), "--mode", "linear", "--iters", "40"]).unwrap();
    let doc: gwm::segmenter::LinearSegmenterDoc =
        serde_json::from_slice(&std::fs::read(out.join("segmenter.json")).unwrap()).unwrap();
    let seg = gwm::segmenter::LinearFeatureSegmenter::from_doc(&doc).unwrap();
    let s = scenes::load(&scene).unwrap();
    let masks = decode_masks(&std::fs::read(out.join("masks_0001.bin")).unwrap()).unwrap();
    assert_eq!(seg.predict(&s.frames[1].image), masks);
}

#[test]
fn merge_and_eval_match_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let scene_dir = dir.path().join("scene");
    call(&["gen", "--preset", "two-sprites", "--out", p(&scene_dir)]).unwrap();
    let seg = dir.path().join("seg");
    call(&["segment", "--scene", p(&scene_dir), "--out", p(&seg), "--iters", "60"]).unwrap();
    let merged = dir.path().join("merged");
    call(&["merge", "--masks", p(&seg), "--scene", p(&scene_dir), "--out", p(&merged)]).unwrap();

    let scene = scenes::load(&scene_dir).unwrap();
    let masks: Vec<_> = (0..scene.frames.len())
        .map(|t| decode_masks(&std::fs::read(seg.join(format!("masks_{t:04}.bin"))).unwrap()).unwrap())
        .collect();
    let (fg, _) = merge_scene(&scene, &masks, 1e-8).unwrap();
    for (t, f) in fg.iter().enumerate() {
        assert_eq!(&read_pgm(merged.join(format!("fg_{t:04}.pgm")), 2).unwrap(), f);
        assert_eq!(tree_bytes(&merged)[&format!("fg_{t:04}.pgm")], tree_bytes(&seg)[&format!("fg_{t:04}.pgm")]);
    }

    let read_report = |path: &Path| -> JaccardReport { serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap() };
    call(&["eval", "--pred", p(&merged), "--scene", p(&scene_dir)]).unwrap();
    let heuristic = read_report(&merged.join("eval_heuristic.json"));
    assert_eq!(heuristic, evaluate_run(&scene, &fg).unwrap());
    let oracle_path = dir.path().join("oracle.json");
    let table = call(&["eval", "--pred", p(&seg), "--scene", p(&scene_dir), "--eval-mode", "oracle", "--out", p(&oracle_path)]).unwrap();
    assert!(table.contains("mean"));
    let oracle = read_report(&oracle_path);
    assert_eq!(oracle, evaluate_oracle(&scene, &masks).unwrap());
    for (o, h) in oracle.per_frame.iter().zip(&heuristic.per_frame) {
        assert!(o >= h);
    }
}

#[test]
fn ground_truth_as_prediction_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    call(&["gen", "--preset", "parallax", "--out", p(&scene)]).unwrap();
    let report = dir.path().join("r.json");
    call(&["eval", "--pred", p(&scene), "--scene", p(&scene), "--out", p(&report)]).unwrap();
    let r: JaccardReport = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r.mean, 1.0);
}

#[test]
fn viz_outputs_match_library_rendering() {
    let dir = tempfile::tempdir().unwrap();
    let zero = dir.path().join("zero.flo");
    write_flo(&FlowField::zeros(5, 3), &zero).unwrap();
    let out = dir.path().join("zero.ppm");
    call(&["viz", p(&zero), "--out", p(&out)]).unwrap();
    assert!(read_ppm(&out).unwrap().data().iter().all(|&c| c == 255));

    let scene = smoke_scene(dir.path());
    let flow_path = scene.join("flow_0000.flo");
    let out = dir.path().join("flow.ppm");
    call(&["viz", p(&flow_path), "--out", p(&out)]).unwrap();
    assert_eq!(read_ppm(&out).unwrap(), flow_to_color(&read_flo(&flow_path).unwrap(), MaxMagnitude::Auto));
    call(&["viz", p(&flow_path), "--out", p(&out), "--max-mag", "2.5"]).unwrap();
    assert_eq!(read_ppm(&out).unwrap(), flow_to_color(&read_flo(&flow_path).unwrap(), MaxMagnitude::Fixed(2.5)));

    let gt = scene.join("gt_0000.pgm");
    call(&["viz", p(&gt), "--out", p(&out), "--levels", "2"]).unwrap();
    let img = read_ppm(&out).unwrap();
    let labels = read_pgm(&gt, 2).unwrap();
    for (i, &l) in labels.data().iter().enumerate() {
        assert_eq!(img.data()[3 * i..3 * i + 3], PALETTE[l as usize]);
    }
    assert_eq!(gwm(&["viz", p(&scene.join("scene.json")), "--out", p(&out)]).status.code(), Some(2));
}
