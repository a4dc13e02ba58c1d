use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vidstyle::bench::{parse_delimited, warp_back_mse};
use vidstyle::flow::{read_flo, FlowField};
use vidstyle::image::{read_pgm, read_ppm, write_ppm, Image, WeightMask};
use vidstyle::pipeline::{flow_bwd_name, frame_name};

fn vidstyle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidstyle")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "-o", s(dir)];
    args.extend_from_slice(extra);
    let o = vidstyle(&args);
    assert!(o.status.success(), "{}", stderr(&o));
}

/// Small 16x16 sequence with its own flows.
fn tiny_inputs(root: &Path) -> PathBuf {
    let scene = root.join("scene.toml");
    fs::write(
        &scene,
        "seed = 3\nwidth = 16\nheight = 16\nframes = 3\nbackground_velocity = [0.0, 0.0]\n\
         [[objects]]\nx = 2.0\ny = 4.0\nwidth = 6.0\nheight = 6.0\nvelocity = [1.0, 0.0]\n",
    )
    .unwrap();
    let dir = root.join("tiny");
    synth(&dir, &["--scene-file", s(&scene)]);
    dir
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn synth_default_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    synth(&t.path().join("a"), &["--seed", "4"]);
    synth(&t.path().join("b"), &["--seed", "4"]);
    let a = read_all(&t.path().join("a"));
    assert_eq!(a, read_all(&t.path().join("b")));
    assert!(a.iter().any(|(n, _)| n == "frame_0005.ppm"));
    synth(&t.path().join("c"), &["--seed", "5"]);
    assert_ne!(a, read_all(&t.path().join("c")));
}

#[test]
fn synth_static_flows_are_zero() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path().join("static");
    synth(&dir, &["--scene", "static"]);
    let mut seen = 0;
    for (name, _) in read_all(&dir) {
        if name.ends_with(".flo") {
            let f = read_flo(dir.join(&name)).unwrap();
            assert!(f.data().iter().all(|&v| v == 0.0), "{name}");
            seen += 1;
        }
    }
    assert_eq!(seen, 6);
}

#[test]
fn synth_moving_rectangle_masks() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path().join("rect");
    synth(&dir, &["--scene", "moving-rectangle", "--speed", "2"]);
    let occ = read_pgm(dir.join("occ_0001_0002.pgm")).unwrap();
    // rectangle starts at (8, 20), 16x16; after one frame columns 8 and 9 are revealed
    for y in 0..64 {
        for x in 0..64 {
            let strip = (8..10).contains(&x) && (20..36).contains(&y);
            assert_eq!(occ.get(x, y) == 1.0, strip, "({x},{y})");
        }
    }
    let f = read_flo(dir.join("flow_fwd_0001_0002.flo")).unwrap();
    assert_eq!(f.get(8, 20), (2.0, 0.0));
    assert_eq!(f.get(30, 5), (0.0, 0.0));
}

#[test]
fn synth_rejects_canvas_violation() {
    let t = tempfile::tempdir().unwrap();
    let o = vidstyle(&["synth", "--scene", "moving-rectangle", "--speed", "20", "-o", s(&t.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("leaves"));
}

#[test]
fn stylize_image_end_to_end() {
    let t = tempfile::tempdir().unwrap();
    let inputs = tiny_inputs(t.path());
    let content = inputs.join(frame_name(0));
    let style = inputs.join("style_blobs.ppm");
    let run = |out: &Path, seed: &str| {
        vidstyle(&[
            "stylize-image",
            "--content",
            s(&content),
            "--style",
            s(&style),
            "-o",
            s(out),
            "--seed",
            seed,
            "--max-iterations",
            "30",
        ])
    };
    let a = t.path().join("a.ppm");
    let o = run(&a, "9");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(a.is_file());
    assert!(a.with_extension("log").is_file());
    assert!(a.with_extension("manifest.toml").is_file());
    let b = t.path().join("b.ppm");
    assert!(run(&b, "9").status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let missing = t.path().join("nope.ppm");
    let o = vidstyle(&["stylize-image", "--content", s(&content), "--style", s(&missing), "-o", s(&a)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.ppm"), "{}", stderr(&o));
}

#[test]
fn stylize_image_rejects_indivisible_size() {
    let t = tempfile::tempdir().unwrap();
    let img = t.path().join("odd.ppm");
    write_ppm(&Image::filled(10, 12, 3, 0.5), &img).unwrap();
    let o = vidstyle(&["stylize-image", "--content", s(&img), "--style", s(&img), "-o", s(&t.path().join("o.ppm"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pad to 12x12"), "{}", stderr(&o));
}

#[test]
fn short_term_without_flows_lists_missing_files() {
    let t = tempfile::tempdir().unwrap();
    let inputs = tiny_inputs(t.path());
    let frames = t.path().join("frames");
    fs::create_dir(&frames).unwrap();
    for i in 0..3 {
        fs::copy(inputs.join(frame_name(i)), frames.join(frame_name(i))).unwrap();
    }
    let style = inputs.join("style_blobs.ppm");
    let out = t.path().join("out");
    let o = vidstyle(&[
        "stylize-video", "--frames", s(&frames), "--style", s(&style), "--flows", s(&frames),
        "--algorithm", "short-term", "-o", s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("flow_bwd_0001_0002.flo") && err.contains("flow_fwd_0002_0003.flo"), "{err}");
    // nothing was started
    assert!(!out.join(frame_name(0)).exists());

    let o = vidstyle(&["stylize-video", "--frames", s(&frames), "--style", s(&style), "--algorithm", "warped-init", "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_algorithm_is_a_usage_error() {
    let o = vidstyle(&["stylize-video", "--algorithm", "fastest"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn long_term_offsets_accepted() {
    let t = tempfile::tempdir().unwrap();
    let inputs = tiny_inputs(t.path());
    let out = t.path().join("lt");
    let o = vidstyle(&[
        "stylize-video", "--frames", s(&inputs), "--flows", s(&inputs), "--style", s(&inputs.join("style_stripes.ppm")),
        "--algorithm", "long-term", "--J", "1,10,20,40", "--max-iterations", "10", "-o", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("offsets = [1, 10, 20, 40]"), "{manifest}");
    assert!(out.join(frame_name(2)).is_file());
    assert!(out.join("frame_0003.log").is_file());
    assert!(out.join("weights_0003_from_0002.pgm").is_file());
}

#[test]
fn multi_pass_flags_reach_the_schedule() {
    let t = tempfile::tempdir().unwrap();
    let inputs = tiny_inputs(t.path());
    let out = t.path().join("mp");
    let o = vidstyle(&[
        "stylize-video", "--frames", s(&inputs), "--flows", s(&inputs), "--style", s(&inputs.join("style_blobs.ppm")),
        "--algorithm", "multi-pass", "--passes", "10", "--pass-iters", "100", "--delta", "0.5", "-o", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(out.join("passes.log")).unwrap();
    let rows: Vec<Vec<&str>> = log.lines().skip(1).map(|l| l.split(' ').collect()).collect();
    assert_eq!(rows.len(), 10);
    for (p, row) in rows.iter().enumerate() {
        let dir = if p % 2 == 0 { "forward" } else { "backward" };
        assert_eq!(row, &vec![p.to_string().as_str(), dir, if p >= 4 { "true" } else { "false" }, "0.5", "100"]);
    }
    let report = fs::read_to_string(out.join("frame_0002.log")).unwrap();
    assert!(report.starts_with("# iterations=100 "), "{report}");
}

fn video(inputs: &Path, style: &str, algorithm: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "stylize-video", "--frames", s(inputs), "--flows", s(inputs), "--style", style, "--algorithm", algorithm,
        "-o", s(out),
    ];
    args.extend_from_slice(extra);
    vidstyle(&args)
}

#[test]
fn rerun_from_manifest_is_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    let inputs = tiny_inputs(t.path());
    let out = t.path().join("run");
    let style = inputs.join("style_blobs.ppm");
    let o = video(&inputs, s(&style), "short-term", &out, &["--max-iterations", "40", "--threads", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = read_all(&out);
    let o = vidstyle(&["stylize-video", "--config", s(&out.join("manifest.toml")), "--threads", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(first, read_all(&out));
}

#[test]
fn resume_skips_finished_frames() {
    let t = tempfile::tempdir().unwrap();
    let inputs = tiny_inputs(t.path());
    let out = t.path().join("run");
    let style = inputs.join("style_blobs.ppm");
    assert!(video(&inputs, s(&style), "prev-init", &out, &["--max-iterations", "20"]).status.success());
    fs::remove_file(out.join(frame_name(2))).unwrap();
    let o = video(&inputs, s(&style), "prev-init", &out, &["--max-iterations", "20", "--resume", "-v"]);
    assert!(o.status.success());
    let err = stderr(&o);
    assert!(err.contains("frame 1: kept") && err.contains("frame 2: kept"), "{err}");
    assert!(err.contains("frame 3: 20 iterations"), "{err}");
    assert!(out.join(frame_name(2)).is_file());
    // a different manifest recomputes everything
    let o = video(&inputs, s(&style), "prev-init", &out, &["--max-iterations", "21", "--resume", "-v"]);
    assert!(!stderr(&o).contains("kept"));
}

#[test]
fn evaluate_tables() {
    let t = tempfile::tempdir().unwrap();
    let inputs = tiny_inputs(t.path());
    let style = inputs.join("style_stripes.ppm");
    let a = t.path().join("a");
    let b = t.path().join("b");
    assert!(video(&inputs, s(&style), "independent", &a, &["--max-iterations", "20"]).status.success());
    assert!(video(&inputs, s(&style), "short-term", &b, &["--max-iterations", "20"]).status.success());

    let o = vidstyle(&["evaluate", s(&a), s(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("ground-truth masks"), "{text}");
    let rows: Vec<&str> = text.lines().take_while(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 3, "{text}");

    let o = vidstyle(&["evaluate", "--format", "delimited", s(&a), s(&b)]);
    let (scenes, rows) = parse_delimited(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(scenes, vec!["tiny"]);
    for (method, cells) in rows {
        let dir = if method == "independent" { &a } else { &b };
        let frames: Vec<Image> = (0..3).map(|i| read_ppm(dir.join(frame_name(i))).unwrap()).collect();
        let flows: Vec<FlowField> = (1..3).map(|i| read_flo(inputs.join(flow_bwd_name(i - 1, i))).unwrap()).collect();
        let masks: Vec<WeightMask> = (1..3)
            .map(|i| {
                let occ = read_pgm(inputs.join(format!("occ_{:04}_{:04}.pgm", i, i + 1))).unwrap();
                WeightMask::from_bools(16, 16, occ.data().iter().map(|&v| v < 0.5))
            })
            .collect();
        let expect = warp_back_mse(&frames, &flows, &masks).unwrap().mean;
        assert_eq!(cells, vec![expect], "{method}");
    }
}

#[test]
fn evaluate_rejects_frame_count_mismatch() {
    let t = tempfile::tempdir().unwrap();
    let inputs = tiny_inputs(t.path());
    let res = t.path().join("res");
    fs::create_dir(&res).unwrap();
    for i in 0..2 {
        fs::copy(inputs.join(frame_name(i)), res.join(frame_name(i))).unwrap();
    }
    let o = vidstyle(&["evaluate", "--gt", s(&inputs), s(&res)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn flow_masks_dump() {
    let t = tempfile::tempdir().unwrap();
    let dir = t.path().join("rect");
    synth(&dir, &["--scene", "moving-rectangle", "--offsets", "1,2"]);
    let out = t.path().join("masks");
    let o = vidstyle(&["flow-masks", "--flows", s(&dir), "--offsets", "1,2", "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let occ = read_pgm(dir.join("occ_0001_0002.pgm")).unwrap();
    let dis = read_pgm(out.join("disocclusion_0001_0002.pgm")).unwrap();
    assert_eq!(occ, dis);
    assert!(out.join("boundary_0004_0005.pgm").is_file());
    assert!(out.join("longterm_0003_0005.pgm").is_file());
    assert!(!out.join("longterm_0000_0001.pgm").exists());
}

#[test]
fn synthetic_benchmark_ordering_end_to_end() {
    let t = tempfile::tempdir().unwrap();
    let scene = t.path().join("scene");
    synth(&scene, &["--seed", "7"]);
    let style = scene.join("style_blobs.ppm");
    let mut dirs = Vec::new();
    for alg in ["short-term", "warped-init", "prev-init", "independent"] {
        let out = t.path().join(alg);
        let o = video(&scene, s(&style), alg, &out, &["--benchmark-weights", "--relaxed"]);
        assert!(o.status.success(), "{}", stderr(&o));
        dirs.push(out);
    }
    let mut args = vec!["evaluate", "--format", "delimited"];
    args.extend(dirs.iter().map(|d| s(d)));
    let o = vidstyle(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, rows) = parse_delimited(&String::from_utf8(o.stdout).unwrap()).unwrap();
    let score = |m: &str| rows.iter().find(|(n, _)| n == m).unwrap().1[0].unwrap();
    let (st, wi, pi, ri) = (score("short-term"), score("warped-init"), score("prev-init"), score("independent"));
    assert!(st < wi && wi < pi && pi < ri, "{st:e} {wi:e} {pi:e} {ri:e}");
}
