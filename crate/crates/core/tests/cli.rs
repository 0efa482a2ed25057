use std::path::Path;
use std::process::Command;

fn subband(dir: &Path, args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_subband")).current_dir(dir).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn stdout(out: &std::process::Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn eval_of_perfectly_separated_scores_prints_zero() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.tsv"), "id\tlabel\tscore\na\tbonafide\t-1\nb\tdeepfake\t2\n").unwrap();
    let out = subband(dir.path(), &["eval", "--scores", "s.tsv", "--bootstrap", "0"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.lines().nth(1).unwrap().contains("0.00"), "{text}");
}

#[test]
fn aggregate_of_two_score_files_is_their_mean() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.tsv"), "id\tlabel\tscore\nx\tdeepfake\t2\n").unwrap();
    std::fs::write(dir.path().join("b.tsv"), "id\tlabel\tscore\nx\tdeepfake\t4\n").unwrap();
    let out = subband(dir.path(), &["fuse", "--kind", "aggregate", "--scores", "a.tsv", "b.tsv", "--run", "run"]);
    assert!(out.status.success());
    let fused = subband::eval::read_scores(dir.path().join("run/scores/fused_aggregation.tsv")).unwrap();
    assert_eq!(fused.len(), 1);
    assert_eq!(fused.get("x").unwrap().score, 3.0);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = subband(dir.path(), &["score", "--checkpoint", "missing.sbck", "--manifest", "m.tsv", "--run", "r"]);
    assert_eq!(out.status.code(), Some(1));
    let out = subband(dir.path(), &["train-expert", "--manifest", "m.tsv", "--run", "r", "--partition", "3", "--index", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = subband(dir.path(), &["eval"]);
    assert!(!out.status.success());
}

/// synth -> train fullband (50 steps) -> score -> eval -> gradcam, run twice.
#[test]
fn end_to_end_smoke_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(subband(d, &["synth", "--out", "corpus", "--n-bonafide", "16", "--n-deepfake", "16", "--duration-secs", "1"]).status.success());
    std::fs::write(
        d.join("cfg.toml"),
        "window_size = 512\nhop_size = 512\nduration_secs = 1.0\nchannels = [4, 8]\nepochs = 10\nbatch_size = 4\n",
    )
    .unwrap();
    for run in ["run1", "run2"] {
        let train = subband(d, &["train-expert", "--manifest", "corpus/manifest.tsv", "--run", run, "--config", "cfg.toml"]);
        assert!(train.status.success());
        assert!(stdout(&train).contains("50 steps"), "{}", stdout(&train));
        let ckpt = format!("{run}/checkpoints/fullband.sbck");
        assert!(subband(d, &["score", "--checkpoint", &ckpt, "--manifest", "corpus/manifest.tsv", "--run", run]).status.success());
        let scores = format!("{run}/scores/fullband_testA.tsv");
        let eval = subband(d, &["eval", "--scores", &scores, "--bootstrap", "200", "--run", run]);
        assert!(eval.status.success());
        assert!(stdout(&eval).contains("fullband_testA"));
        let gc = subband(d, &["gradcam", "--checkpoint", &ckpt, "--manifest", "corpus/manifest.tsv", "--run", run, "--limit", "2"]);
        assert!(gc.status.success());
    }
    let files = [
        "config.toml",
        "provenance.toml",
        "checkpoints/fullband.sbck",
        "checkpoints/fullband.sbck.toml",
        "scores/fullband_testA.tsv",
        "reports/eer.csv",
        "reports/train_fullband.tsv",
        "reports/gradcam_fractions_fullband.csv",
    ];
    let overlays: Vec<String> = std::fs::read_dir(d.join("run1/overlays"))
        .unwrap()
        .map(|e| format!("overlays/{}", e.unwrap().file_name().to_string_lossy()))
        .collect();
    assert_eq!(overlays.len(), 2);
    for f in files.iter().map(|s| s.to_string()).chain(overlays) {
        let f = f.as_str();
        let a = std::fs::read(d.join("run1").join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        assert_eq!(a, std::fs::read(d.join("run2").join(f)).unwrap(), "{f} differs between runs");
    }
    let flag_over_file = subband(
        d,
        &["train-expert", "--manifest", "corpus/manifest.tsv", "--run", "run3", "--config", "cfg.toml", "--epochs", "1", "--band", "11025:22050"],
    );
    assert!(stdout(&flag_over_file).contains("5 steps"), "{}", stdout(&flag_over_file));
    assert!(d.join("run3/checkpoints/sb_11025_22050.sbck").exists());
}
