//! Command-line behavior: outputs, manifests and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mergelab_core::recmodel::{checkpoint, ModelDims, ParamSet};

const CONFIG: &str = r#"out_dir = "out"
seeds = [0, 1]

[corpus]
source = "synthetic"
shared = 0.7

[[corpus.domains]]
id = "a"
users = 60
items = 30

[[corpus.domains]]
id = "b"
users = 60
items = 40

[pretrain]

[[pretrain.domains]]
id = "p"
users = 80
items = 40

[model]
hidden = 8
output = 4
layers = 2

[train]
max_epochs = 6
patience = 6
lr = 0.01

[merge]
steps = 20
"#;

fn mergelab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mergelab"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn mergelab")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mergelab(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    mergelab(dir, args).status.code().expect("exit code")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("mergelab.toml"), config).unwrap();
    dir
}

#[test]
fn config_errors_exit_2() {
    let dir = setup(&CONFIG.replace("[model]", "[model]\nwidth = 3"));
    assert_eq!(code(dir.path(), &["pretrain"]), 2);
    let dir = setup(CONFIG);
    assert_eq!(code(dir.path(), &["--config", "missing.toml", "pretrain"]), 2);
    assert_eq!(code(dir.path(), &["--seed", "9", "finetune"]), 2);
    assert_eq!(code(dir.path(), &["experiment", "--recipe", "everything"]), 2);
    // Fine-tuning needs the base model first.
    assert_eq!(code(dir.path(), &["finetune"]), 2);
    let stderr = String::from_utf8(mergelab(dir.path(), &["finetune"]).stderr).unwrap();
    assert!(stderr.contains("finetune"), "{stderr}");
}

#[test]
fn pipeline_outputs_and_failures() {
    let dir = setup(CONFIG);
    let d = dir.path();
    assert!(ok(d, &["pretrain"]).contains("base.ckpt"));
    let listed = ok(d, &["finetune"]);
    assert_eq!(listed.lines().count(), 4);
    let out = d.join("out");
    for s in 0..2 {
        for dom in ["a", "b"] {
            assert!(out.join(format!("seed-{s}/finetuned/{dom}.ckpt")).exists());
        }
    }
    let base = checkpoint::load::<f32>(out.join("base.ckpt")).unwrap();
    let tuned = checkpoint::load::<f32>(out.join("seed-0/finetuned/a.ckpt")).unwrap();
    assert_ne!(base.layers, tuned.layers);
    let catalog = fs::read_to_string(out.join("catalogs/a.tsv")).unwrap();
    assert!(catalog.starts_with("# mergelab "), "{catalog}");

    fs::write(d.join("ta.toml"), "method = \"task_arithmetic\"\nweight = 0.5\n").unwrap();
    ok(d, &["--seed", "1", "merge", "--recipe", "ta.toml"]);
    let merged = checkpoint::load::<f32>(out.join("seed-1/merged/task-arithmetic.ckpt")).unwrap();
    assert_eq!(merged.meta.notes["inputs"], "a,b");
    assert!(!out.join("seed-0/merged").exists());

    let report = ok(d, &["--seed", "1", "eval", "--checkpoint", "out/seed-{seed}/merged/task-arithmetic.ckpt"]);
    assert!(report.contains("norm_recall@10"), "{report}");
    let tsv = fs::read_to_string(out.join("eval/task-arithmetic.tsv")).unwrap();
    let header = tsv.lines().next().unwrap();
    assert!(header.starts_with("# mergelab ") && header.ends_with("seed=1"), "{header}");
    assert_eq!(tsv.lines().count(), 1 + 2 * 4);

    // A checkpoint with other layer shapes is an incompatibility.
    let odd = ParamSet::<f32>::random(&ModelDims { input: 64, hidden: 5, output: 4, layers: 2 }, 3).unwrap();
    checkpoint::save(&odd, d.join("odd.ckpt")).unwrap();
    fs::write(d.join("odd.toml"), "method = \"ties\"\nmodels = { b = \"odd.ckpt\" }\n").unwrap();
    assert_eq!(code(d, &["--seed", "0", "merge", "--recipe", "odd.toml"]), 3);
    let stderr = String::from_utf8(mergelab(d, &["--seed", "0", "merge", "--recipe", "odd.toml"]).stderr).unwrap();
    assert!(stderr.contains("b has shapes"), "{stderr}");

    // A diverging teacher makes adaptive merging fail numerically.
    let mut bad = checkpoint::load::<f32>(out.join("seed-0/finetuned/a.ckpt")).unwrap();
    bad.values_mut().for_each(|v| *v = f32::NAN);
    checkpoint::save(&bad, d.join("nan.ckpt")).unwrap();
    fs::write(d.join("nan.toml"), "method = \"mergerec\"\nmodels = { a = \"nan.ckpt\" }\n").unwrap();
    assert_eq!(code(d, &["--seed", "0", "merge", "--recipe", "nan.toml"]), 4);
}

#[test]
fn tsv_corpus_with_feature_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut rows = String::new();
    for u in 0..30 {
        for t in 0..7 {
            rows.push_str(&format!("u{u}\ti{}\t{t}\n", (u * 3 + t * 5) % 12));
        }
    }
    fs::write(d.join("x.tsv"), &rows).unwrap();
    fs::write(d.join("p.tsv"), &rows).unwrap();
    let mut feats = String::from("# item features\n");
    for i in 0..12 {
        let v: Vec<String> = (0..4).map(|j| if (i + j) % 3 == 0 { "1".into() } else { "0".into() }).collect();
        feats.push_str(&format!("i{i}\t{}\n", v.join(",")));
    }
    fs::write(d.join("x.features.tsv"), feats).unwrap();
    let config = r#"out_dir = "out"
seeds = [0]

[corpus]
source = "tsv"
features = { dim = 4, active = 2 }

[[corpus.domains]]
id = "x"
path = "x.tsv"
features = "x.features.tsv"

[pretrain]

[[pretrain.domains]]
id = "p"
path = "p.tsv"

[model]
hidden = 6
output = 3
layers = 2

[train]
max_epochs = 2
"#;
    fs::write(d.join("mergelab.toml"), config).unwrap();
    ok(d, &["pretrain"]);
    ok(d, &["finetune", "--domain", "x"]);
    assert_eq!(code(d, &["finetune", "--domain", "z"]), 2);
    let catalog = fs::read_to_string(d.join("out/catalogs/x.tsv")).unwrap();
    assert_eq!(catalog.lines().filter(|l| !l.starts_with('#')).count(), 12);
}
