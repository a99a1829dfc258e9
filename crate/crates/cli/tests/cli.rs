use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
model.p = 32
model.z = 4
model.m = 4
model.g = 8
model.enc_block1 = 8,16
model.enc_block2 = 16,32
model.enc_mlp = 32
model.coarse_hidden = 32
model.fold_hidden = 16
model.head_hidden = 16
cohort.n = 24
train.batch = 4
train.max_steps = 6
train.val_interval = 3
train.patience = 6
train.log_interval = 1
";

fn mopa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mopa")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the tiny config and a cohort; returns (config, manifest).
fn setup(root: &Path) -> (String, String) {
    let cfg = root.join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let data = root.join("data");
    ok(&mopa(&["gen-data", "--config", s(&cfg), "--seed", "4", "--out", s(&data)]));
    (s(&cfg).to_string(), s(&data.join("manifest.csv")).to_string())
}

#[test]
fn gen_data_is_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let (cfg, manifest) = setup(root.path());
    let again = root.path().join("again");
    ok(&mopa(&["gen-data", "--config", &cfg, "--seed", "4", "--out", s(&again)]));
    let a = fs::read_to_string(&manifest).unwrap();
    let b = fs::read_to_string(again.join("manifest.csv")).unwrap();
    assert_eq!(a.lines().count(), 25);
    // Paths differ by directory; compare everything else.
    let strip = |t: &str| t.replace(s(&root.path().join("data")), "").replace(s(&again), "");
    assert_eq!(strip(&a), strip(&b));
    let resolved = fs::read_to_string(again.join("resolved.cfg")).unwrap();
    assert!(resolved.lines().any(|l| l == "cohort.seed=4"));
}

#[test]
fn train_eval_and_embed_write_their_outputs() {
    let root = tempfile::tempdir().unwrap();
    let (cfg, manifest) = setup(root.path());
    let run = root.path().join("run");
    ok(&mopa(&["train", "--config", &cfg, "--manifest", &manifest, "--out", s(&run)]));
    for f in ["train_log.csv", "validation.csv", "best.ckpt", "last.ckpt", "resolved.cfg"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let ckpt = run.join("best.ckpt");
    let eval = root.path().join("eval");
    let text = ok(&mopa(&[
        "eval", "--config", &cfg, "--manifest", &manifest, "--checkpoint", s(&ckpt), "--out", s(&eval),
    ]));
    assert!(text.contains("test AUROC"));
    assert_eq!(fs::read_to_string(eval.join("table2.csv")).unwrap().lines().count(), 7);
    let embed = root.path().join("embed");
    ok(&mopa(&[
        "embed", "--config", &cfg, "--manifest", &manifest, "--checkpoint", s(&ckpt), "--k", "3", "--out", s(&embed),
    ]));
    assert!(fs::read_to_string(embed.join("eigenmap.csv")).unwrap().starts_with("id,x,y,label,lv_ef"));
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let root = tempfile::tempdir().unwrap();
    let (cfg, manifest) = setup(root.path());
    let out = root.path().join("ablate");
    ok(&mopa(&["ablate", "--config", &cfg, "--manifest", &manifest, "--out", s(&out)]));
    let table = fs::read_to_string(out.join("table4.csv")).unwrap();
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["full", "no_dropout", "no_kl", "no_recon_branch", "recon_only"]);
}

#[test]
fn gradcheck_passes() {
    let root = tempfile::tempdir().unwrap();
    let text = ok(&mopa(&["gradcheck", "--out", s(root.path())]));
    assert!(text.lines().any(|l| l == "PASS"), "{text}");
}

#[test]
fn unknown_keys_and_missing_manifest_exit_with_failure() {
    let root = tempfile::tempdir().unwrap();
    let bad = mopa(&["gen-data", "--set", "model.zz=3", "--out", s(root.path())]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error:"));
    let no_manifest = mopa(&["train", "--out", s(root.path())]);
    assert_eq!(no_manifest.status.code(), Some(1));
}
