use std::path::Path;
use std::process::{Command, Output};

fn sgfn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgfn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn synth_train_eval_retrieve() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = sgfn(&["synth", "--seed", "4", "--pairs", "6", "--n", "3", "--m", "4", "--d", "6", "--out", "data.json"], d);
    assert!(out.status.success(), "{out:?}");

    std::fs::write(
        d.join("config.json"),
        r#"{"d": 6, "K": 2, "epochs": 3, "batch_size": 3, "learning_rate": 0.01, "val_fraction": 0.0, "seed": 2}"#,
    )
    .unwrap();
    let out = sgfn(
        &["train", "--config", "config.json", "--data", "data.json", "--out", "model.ckpt", "--log", "train.log"],
        d,
    );
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert!(text.starts_with("epoch\tmean_loss\tlr\tratio_image\tratio_text\tval_rsum"));
    assert_eq!(text.lines().count(), 4);
    let log = std::fs::read_to_string(d.join("train.log")).unwrap();
    assert_eq!(log.lines().collect::<Vec<_>>(), text.lines().skip(1).collect::<Vec<_>>());

    let out = sgfn(&["eval", "--ckpt", "model.ckpt", "--data", "data.json", "--delta", "0"], d);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).contains("rSum"));

    let out = sgfn(
        &["retrieve", "--ckpt", "model.ckpt", "--query", "data.json", "--gallery", "data.json", "--topk", "10", "--explain", "3"],
        d,
    );
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with(char::is_numeric)).count(), 6 + 3);
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("broken.ckpt"), "{\"format_version\": 1}\nchecksum crc32:00000000\n").unwrap();
    std::fs::write(d.join("data.json"), "{\"dimension\": 4, \"records\": []}").unwrap();
    let out = sgfn(&["eval", "--ckpt", "broken.ckpt", "--data", "data.json"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn gradcheck_flags_an_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let ok = sgfn(&["gradcheck", "--seed", "1"], dir.path());
    assert!(ok.status.success(), "{ok:?}");
    assert!(stdout(&ok).contains("PASS"));
    let bad = sgfn(&["gradcheck", "--seed", "1", "--inject-fault"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAIL"));
}
