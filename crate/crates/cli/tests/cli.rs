use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_rfield");

/// Small-run overrides so each training call takes well under a second.
const FAST: &[&str] = &[
    "-s",
    "train.sampler.patch_size=8",
    "-s",
    "train.sampler.dilation=2",
    "-s",
    "train.sampler.batch_rays=128",
    "-s",
    "train.g_hidden=[8]",
    "-s",
    "train.eval_every=5",
];

fn rfield(args: &[&str]) -> Output {
    rfield_env(args, &[])
}

fn rfield_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("RF_")) {
        cmd.env_remove(k);
    }
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn rfield")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_small(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.join(format!("data{seed}"));
    let o = rfield(&[
        "gen", "--mode", "flat2d", "--seed", seed, "--occlusion", "0.2", "--width", "24", "--height", "24", "--views", "3",
        "--test-views", "1", "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn train_small(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--dataset", p(data), "--out", p(out), "--iters", "10", "--deterministic"];
    args.extend_from_slice(FAST);
    args.extend_from_slice(extra);
    rfield(&args)
}

fn dir_contents(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// `(iter, test_psnr, test_ssim)` of every row of a report CSV.
fn report_rows(path: &Path) -> Vec<(usize, f64, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (i, ps, ss) = (col("iter"), col("test_psnr"), col("test_ssim"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[i].parse().unwrap(), f[ps].parse().unwrap(), f[ss].parse().unwrap())
        })
        .collect()
}

#[test]
fn help_documents_every_flag() {
    let o = rfield(&["--help"]);
    assert_eq!(code(&o), 0);
    let top = stdout(&o);
    for word in ["gen", "train", "eval", "render", "ablate", "--config", "--set", "--threads", "RF_", "Exit codes"] {
        assert!(top.contains(word), "top-level help lacks {word}");
    }
    let expected: &[(&str, &[&str])] = &[
        ("gen", &["--out", "--preset", "--mode", "--seed", "--occlusion", "--views", "--test-views", "--width", "--height", "--camouflage", "--features"]),
        ("train", &["--dataset", "--out", "--iters", "--seed", "--eval-every", "--deterministic", "--baseline", "--heatmap-views", "--no-plot"]),
        ("eval", &["--checkpoint", "--dataset", "--out"]),
        ("render", &["--checkpoint", "--dataset", "--out", "--split", "--cameras", "--beta"]),
        ("ablate", &["--dataset", "--out", "--suite", "--variants", "--iters"]),
    ];
    for (sub, flags) in expected {
        let o = rfield(&[sub, "--help"]);
        assert_eq!(code(&o), 0);
        let text = stdout(&o);
        for f in flags.iter().chain(&["--config", "--set", "--threads"]) {
            assert!(text.contains(f), "`{sub} --help` lacks {f}");
        }
    }
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_small(dir.path(), "7");
    let b = dir.path().join("again");
    std::fs::rename(&a, &b).unwrap();
    let a = gen_small(dir.path(), "7");
    let (ca, cb) = (dir_contents(&a), dir_contents(&b));
    assert!(ca.keys().any(|k| k.ends_with("resolved.toml")));
    assert!(ca.len() > 5);
    assert_eq!(ca, cb);
    let c = gen_small(dir.path(), "8");
    assert_ne!(dir_contents(&c), ca);
}

#[test]
fn train_eval_render_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path(), "1");
    let run = dir.path().join("run");
    let o = train_small(&data, &run, &["--heatmap-views", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = report_rows(&run.join("report.csv"));
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![5, 10]);
    for f in ["resolved.toml", "checkpoint.rfck", "convergence.png", "heatmaps/beta_iter000010_view000.png"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }

    // Metrics recomputed from the checkpoint match the final report row.
    let ev = dir.path().join("eval");
    let o = rfield(&["eval", "--checkpoint", p(&run.join("checkpoint.rfck")), "--dataset", p(&data), "--out", p(&ev)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics: BTreeMap<String, String> = stdout(&o)
        .lines()
        .filter_map(|l| l.split_once(',').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let (it, psnr, ssim) = *rows.last().unwrap();
    assert_eq!(metrics["iter"], it.to_string());
    assert_eq!(metrics["test_psnr"].parse::<f64>().unwrap(), psnr);
    assert_eq!(metrics["test_ssim"].parse::<f64>().unwrap(), ssim);
    assert!(ev.join("metrics.csv").is_file());

    let rd = dir.path().join("render");
    let o = rfield(&[
        "render", "--checkpoint", p(&run.join("checkpoint.rfck")), "--dataset", p(&data), "--out", p(&rd), "--split", "train", "--beta",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for i in 0..3 {
        assert!(rd.join(format!("view_{i:03}.png")).is_file());
        assert!(rd.join(format!("beta_{i:03}.png")).is_file());
    }

    let cams = dir.path().join("cams.toml");
    std::fs::write(
        &cams,
        "[[cameras]]\nfx = 20.0\nfy = 20.0\ncx = 8.0\ncy = 6.0\nwidth = 16\nheight = 12\n\
         pose = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]\n",
    )
    .unwrap();
    let rc = dir.path().join("render_cams");
    let o = rfield(&["render", "--checkpoint", p(&run.join("checkpoint.rfck")), "--dataset", p(&data), "--out", p(&rc), "--cameras", p(&cams)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(rc.join("view_000.png").is_file());
}

#[test]
fn resolved_config_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path(), "2");
    let a = dir.path().join("a");
    assert_eq!(code(&train_small(&data, &a, &["-s", "train.lr_field=0.02"])), 0);
    let b = dir.path().join("b");
    let o = rfield(&["train", "--dataset", p(&data), "--out", p(&b), "--config", p(&a.join("resolved.toml"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(a.join("report.csv")).unwrap(), std::fs::read(b.join("report.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("checkpoint.rfck")).unwrap(), std::fs::read(b.join("checkpoint.rfck")).unwrap());
    assert_eq!(std::fs::read(a.join("resolved.toml")).unwrap(), std::fs::read(b.join("resolved.toml")).unwrap());
}

#[test]
fn layers_take_precedence_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path(), "3");
    let file = dir.path().join("c.toml");
    std::fs::write(&file, "[train]\niterations = 20\neval_every = 5\n").unwrap();
    let mut base: Vec<&str> = FAST.to_vec();
    base.extend(["--config", p(&file)]);

    let run = |name: &str, extra: &[&str], env: &[(&str, &str)]| {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--dataset", p(&data), "--out", p(&out)];
        args.extend_from_slice(&base);
        args.extend_from_slice(extra);
        let o = rfield_env(&args, env);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        report_rows(&out.join("report.csv")).last().unwrap().0
    };
    assert_eq!(run("file", &[], &[]), 20);
    assert_eq!(run("env", &[], &[("RF_TRAIN__ITERATIONS", "15")]), 15);
    assert_eq!(run("flag", &["--iters", "10"], &[("RF_TRAIN__ITERATIONS", "15")]), 10);
}

#[test]
fn ablate_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path(), "4");
    let out = dir.path().join("abl");
    let mut args = vec!["ablate", "--dataset", p(&data), "--out", p(&out), "--suite", "dilation", "--variants", "1,2", "--iters", "10"];
    args.extend_from_slice(FAST);
    let o = rfield(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert!(table.starts_with("variant,"));
    assert!(table.contains("\nd1,10,") && table.contains("\nd2,10,"));
    assert!(out.join("d1/report.csv").is_file() && out.join("resolved.toml").is_file());

    let o = rfield(&["ablate", "--dataset", p(&data), "--out", p(&out), "--suite", "loss", "--variants", "bogus"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");

    let o = rfield(&["train", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(code(&rfield(&[])), 1);
    assert_eq!(code(&rfield(&["frobnicate"])), 1);
    assert_eq!(code(&rfield(&["--version"])), 0);

    let o = rfield(&["train", "--dataset", p(&missing), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));

    let o = rfield(&["train", "--dataset", p(&missing), "--out", "o", "-s", "train.lr_feild=1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("lr_feild"));
    let o = rfield(&["train", "--dataset", p(&missing), "--out", "o", "-s", "train.iterations=0"]);
    assert_eq!(code(&o), 1);
    let o = rfield_env(&["train", "--dataset", p(&missing), "--out", "o"], &[("RF_TRAIN__NOPE", "1")]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&rfield(&["--threads", "0", "gen", "--out", "x"])), 1);
    let o = rfield(&["gen", "--out", p(&dir.path().join("g")), "--config", p(&missing)]);
    assert_eq!(code(&o), 1);

    let data = gen_small(dir.path(), "5");
    let ck = dir.path().join("none.rfck");
    let o = rfield(&["eval", "--checkpoint", p(&ck), "--dataset", p(&data)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("none.rfck"));
    let o = rfield(&["render", "--checkpoint", p(&ck), "--dataset", p(&missing), "--out", p(&dir.path().join("r"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn garbage_argv_never_crashes() {
    use rand::{Rng, SeedableRng};
    let tokens = [
        "gen", "train", "eval", "render", "ablate", "--out", "--dataset", "--checkpoint", "--iters", "-s", "--set", "--config",
        "--threads", "--suite", "--variants", "--mode", "--seed", "x=1", "train.iterations=-1", "scene.width=3", "-1", "0",
        "1e400", "nan", "", "=", "--", "-", "--help", "loss", "dilation", "flat2d", "\u{00e9}", "/nonexistent/path",
    ];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    // Relative output paths land here rather than in the crate directory.
    let cwd = tempfile::tempdir().unwrap();
    for _ in 0..150 {
        let n = rng.gen_range(0..7);
        let args: Vec<&str> = (0..n).map(|_| tokens[rng.gen_range(0..tokens.len())]).collect();
        let o = Command::new(BIN).args(&args).current_dir(cwd.path()).output().unwrap();
        let c = o.status.code();
        assert!(matches!(c, Some(0..=2)), "{args:?} gave {c:?}: {}", stderr(&o));
        if c != Some(0) {
            assert!(!stderr(&o).trim().is_empty(), "{args:?} failed silently");
        }
    }
}
