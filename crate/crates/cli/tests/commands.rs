use std::path::Path;

use photoba::io::{load_depth, load_image, load_intrinsics, parse_poses, save_depth};
use photoba::DepthMap;
use photoba_cli::run_cli_with;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("photoba").chain(args.iter().copied());
    let code = run_cli_with(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("small.conf");
    std::fs::write(
        &path,
        "width = 16\nheight = 16\niterations = 30\nstage_iterations = 5 5 5\nconsistency_warmup = 5\nscales = 3\n",
    )
    .unwrap();
    path
}

#[test]
fn help_documents_every_flag() {
    let r = run(&["optimize", "--help"]);
    assert_eq!(r.code, 0);
    for flag in [
        "--config",
        "--seed",
        "--scales",
        "--clip-q",
        "--ssim-mix",
        "--dc-weight",
        "--smooth-weight",
        "--cap",
        "--out",
        "--intrinsics",
    ] {
        assert!(r.stdout.contains(flag), "{flag} missing from help");
    }
    let top = run(&["--help"]);
    assert_eq!(top.code, 0);
    for cmd in ["synth", "optimize", "eval", "gradcheck", "upsample"] {
        assert!(top.stdout.contains(cmd));
    }
}

#[test]
fn usage_errors_exit_one() {
    let r = run(&["eval", "--bogus"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("Usage"), "{}", r.stderr);
    assert_eq!(run(&["frobnicate"]).code, 1);
    assert_eq!(run(&["gradcheck", "--clip-q", "150"]).code, 1);
}

#[test]
fn eval_of_identical_maps_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let gt = DepthMap::from_values(4, 3, (0..12).map(|i| 1.0 + i as f64 * 0.5).collect()).unwrap();
    let path = dir.path().join("gt.pfm");
    save_depth(&path, &gt).unwrap();
    let json = dir.path().join("metrics.json");
    let r = run(&["eval", "--pred", s(&path), "--gt", s(&path), "--out", s(&json)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let line = r.stdout.lines().find(|l| l.starts_with("abs_rel")).unwrap();
    assert!(line.ends_with("0.000000"), "{line}");
    assert!(r.stdout.contains("delta1         1.000000"));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(doc["metrics"]["abs_rel"], 0.0);
    assert_eq!(doc["metrics"]["count"], 12);
}

#[test]
fn missing_inputs_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("absent.txt");
    let frame = dir.path().join("absent.ppm");
    let out = dir.path().join("out");
    let r = run(&["optimize", "--intrinsics", s(&nowhere), s(&frame), s(&frame), "--out", s(&out)]);
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert!(r.stderr.contains("absent.txt"));
    let r = run(&["eval", "--pred", s(&nowhere), "--gt", s(&nowhere)]);
    assert_eq!(r.code, 3);
    let r = run(&["gradcheck", "--config", s(&nowhere)]);
    assert_eq!(r.code, 3);
}

#[test]
fn gradcheck_on_bundled_config() {
    let r = run(&["gradcheck", "--seed", "7"]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    let last = r.stdout.lines().last().unwrap();
    let value: f64 = last
        .strip_prefix("max relative error ")
        .and_then(|rest| rest.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(value < 1e-5, "{last}");
    assert_eq!(r.stdout.lines().filter(|l| l.starts_with("seed ")).count(), 5);
}

#[test]
fn pipeline_round_trips_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let scene = dir.path().join("scene");
    let r = run(&["synth", "--config", s(&cfg), "--seed", "3", "--out", s(&scene)]);
    assert_eq!(r.code, 0, "{}", r.stderr);

    let k = load_intrinsics(scene.join("intrinsics.txt")).unwrap();
    assert!(k.fx > 0.0);
    assert_eq!(parse_poses(&std::fs::read_to_string(scene.join("poses.txt")).unwrap()).unwrap().len(), 2);
    let frames: Vec<String> = (0..3).map(|t| s(&scene.join(format!("frame_{t}.ppm"))).to_string()).collect();
    for (t, f) in frames.iter().enumerate() {
        assert_eq!(load_image(f).unwrap().dims(), (16, 16));
        assert_eq!(load_depth(scene.join(format!("depth_{t}.pfm"))).unwrap().valid_count(), 256);
    }

    let again = dir.path().join("again");
    assert_eq!(run(&["synth", "--config", s(&cfg), "--seed", "3", "--out", s(&again)]).code, 0);
    for name in ["frame_0.ppm", "frame_2.ppm", "depth_1.pfm", "poses.txt"] {
        assert_eq!(std::fs::read(scene.join(name)).unwrap(), std::fs::read(again.join(name)).unwrap());
    }

    let solve = |out: &Path| {
        let mut args = vec!["optimize", "--config", s(&cfg), "--intrinsics"];
        let kpath = scene.join("intrinsics.txt");
        let kpath = s(&kpath).to_string();
        args.push(&kpath);
        args.extend(frames.iter().map(String::as_str));
        args.extend(["--out", s(out)]);
        run(&args)
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let r = solve(&a);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(solve(&b).code, 0);
    for name in ["depth_0.pfm", "depth_2.pfm", "poses.txt", "report.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_eq!(parse_poses(&std::fs::read_to_string(a.join("poses.txt")).unwrap()).unwrap().len(), 2);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert!(report["objective"].as_f64().unwrap().is_finite());

    let pred = a.join("depth_0.pfm");
    let gt = scene.join("depth_0.pfm");
    let r = run(&["eval", "--pred", s(&pred), "--gt", s(&gt)]);
    assert_eq!(r.code, 0, "{}", r.stderr);

    let low = dir.path().join("low.pfm");
    save_depth(&low, &load_depth(&gt).unwrap().downsample2()).unwrap();
    let up = dir.path().join("up.pfm");
    let r = run(&["upsample", "--depth", s(&low), "--factor", "2", "--guide", &frames[0], "--out", s(&up)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(load_depth(&up).unwrap().dims(), (16, 16));
    let r = run(&["upsample", "--depth", s(&low), "--factor", "2", "--out", s(&up)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
}

#[test]
fn corrupted_synth_writes_static_masks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("patch.conf");
    std::fs::write(&cfg, "width = 20\nheight = 20\npatch = 2 2 4 4 1 2\nbrightness = 0 0.05 -0.05\n").unwrap();
    let out = dir.path().join("scene");
    let r = run(&["synth", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let mask = load_image(out.join("static_1.pgm")).unwrap();
    let moving = mask.data().iter().filter(|v| **v == 0.0).count();
    assert_eq!(moving, 16);
    assert_eq!(mask.get(3, 4, 0), 0.0);

    std::fs::write(&cfg, "width = 20\nheight = 20\npatch = 2 2 10 10 1 2\n").unwrap();
    assert_eq!(run(&["synth", "--config", s(&cfg), "--out", s(&out)]).code, 1);
}
