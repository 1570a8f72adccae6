use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn s2ut(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2ut"))
        .args(args)
        .env("S2UT_OUT_DIR", out)
        .output()
        .expect("spawn")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn train(steps: usize) -> serde_json::Value {
    serde_json::json!({
        "schedule": {"kind": "inverse_sqrt", "peak_lr": 0.003, "warmup_steps": 1},
        "max_updates": steps, "max_tokens": 200
    })
}

fn shape(enc: usize, dec: usize) -> serde_json::Value {
    serde_json::json!({"d_model": 8, "n_heads": 2, "ffn_dim": 16, "enc_layers": enc, "dec_layers": dec, "max_positions": 128})
}

fn tiny_recipe(dir: &Path) -> std::path::PathBuf {
    let r = serde_json::json!({
        "name": "tiny",
        "seed": 3,
        "data": {"n_train": 6, "n_dev": 3, "n_test": 3, "n_source_only": 8, "n_target_only": 12, "n_text": 12},
        "model": shape(2, 1),
        "asr": {"model": shape(1, 1), "train": train(3)},
        "mbart": {"lambda": 3.0, "p": 0.3, "train": train(2)},
        "s2ut": {"train": train(2)},
        "eval": {"test_beam": {"beam_size": 2, "max_len": 30, "length_penalty": 1.0},
                 "dev_beam": {"beam_size": 1, "max_len": 30, "length_penalty": 1.0}}
    });
    let p = dir.join("tiny.json");
    fs::write(&p, serde_json::to_string_pretty(&r).unwrap()).unwrap();
    p
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let d = tempfile::tempdir().unwrap();
    let o = s2ut(&["frobnicate"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("Usage"), "{}", text(&o));
}

#[test]
fn invalid_config_exits_1_with_field_path() {
    let d = tempfile::tempdir().unwrap();
    let p = tiny_recipe(d.path());
    let mut r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    r["asr"]["train"]["max_tokens"] = serde_json::json!(0);
    fs::write(&p, r.to_string()).unwrap();
    let o = s2ut(&["gen-data", "--config", p.to_str().unwrap()], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("asr.train.max_tokens"), "{}", text(&o));
    assert!(!d.path().join("data").exists(), "nothing may be written before validation");

    r["asr"]["train"]["max_tokens"] = serde_json::json!(10);
    r["s2ut"]["train"]["bogus"] = serde_json::json!(1);
    fs::write(&p, r.to_string()).unwrap();
    let o = s2ut(&["gen-data", "--config", p.to_str().unwrap()], d.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("s2ut.train"), "{}", text(&o));
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let d = tempfile::tempdir().unwrap();
    let p = tiny_recipe(d.path());
    let mut snaps = Vec::new();
    for run in ["a", "b"] {
        let out = d.path().join(run);
        let o = s2ut(&["gen-data", "--config", p.to_str().unwrap(), "--seed", "1", "--out-dir", out.to_str().unwrap()], &out);
        assert!(o.status.success(), "{}", text(&o));
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        let mut stack = vec![out.join("data")];
        while let Some(dir) = stack.pop() {
            for e in fs::read_dir(&dir).unwrap() {
                let path = e.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    files.push((path.strip_prefix(&out).unwrap().display().to_string(), fs::read(&path).unwrap()));
                }
            }
        }
        files.sort();
        snaps.push(files);
    }
    assert!(!snaps[0].is_empty());
    assert_eq!(snaps[0], snaps[1]);
}

#[test]
fn grad_check_lists_every_op() {
    let d = tempfile::tempdir().unwrap();
    let o = s2ut(&["grad-check", "--instances", "1"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let out = String::from_utf8_lossy(&o.stdout).to_string();
    for name in ["matmul", "attention", "ctc_loss", "layer_norm", "s2ut_assembly"] {
        assert!(out.lines().any(|l| l.starts_with(&format!("{name}\t"))), "{name} missing");
    }
    assert!(fs::read_to_string(d.path().join("grad_check.tsv")).unwrap().contains("max_rel_err"));
}

fn fake_run(root: &Path, name: &str, test: f64) {
    let dir = root.join(name);
    fs::create_dir_all(&dir).unwrap();
    let rep = serde_json::json!({"name": name, "strategy": "lna_d", "dev_bleu": 1.0, "test_bleu": test,
        "trainable_params": 1000, "dev_excluded": 0, "test_excluded": 0});
    fs::write(dir.join("report.json"), rep.to_string()).unwrap();
}

#[test]
fn report_sorts_and_flags_missing() {
    let d = tempfile::tempdir().unwrap();
    fake_run(d.path(), "b", 20.0);
    fake_run(d.path(), "a", 20.0);
    fake_run(d.path(), "c", 30.0);
    fs::create_dir_all(d.path().join("broken/s2ut")).unwrap();
    let o = s2ut(&["report"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let tsv = fs::read_to_string(d.path().join("report.tsv")).unwrap();
    let names: Vec<&str> = tsv.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(&names[..3], ["c", "a", "b"]);
    assert!(names[3].starts_with("MISSING"));

    let single = s2ut(&["report", d.path().join("c").to_str().unwrap(), "--out-dir", d.path().join("one").to_str().unwrap()], d.path());
    assert!(single.status.success());
    assert_eq!(fs::read_to_string(d.path().join("one/report.tsv")).unwrap().lines().count(), 2);
}

#[test]
fn report_full_scale_parameter_ordering() {
    let d = tempfile::tempdir().unwrap();
    let o = s2ut(&["report", "--full-scale"], d.path());
    assert!(o.status.success());
    let out = String::from_utf8_lossy(&o.stdout).to_string();
    let pos = |k: &str| out.find(&format!("\n{k} ")).unwrap_or_else(|| panic!("{k} in {out}"));
    let val = |k: &str| -> f64 { out[pos(k)..].split_whitespace().nth(1).unwrap().parse().unwrap() };
    assert!(val("lna_ed") < val("lna_e") && val("lna_e") < val("lna_d") && val("lna_d") < val("full"));
}

#[test]
fn sweep_emits_full_grid() {
    let d = tempfile::tempdir().unwrap();
    let p = tiny_recipe(d.path());
    let cfg = p.to_str().unwrap();
    for args in [vec!["gen-data", "--config", cfg], vec!["train-supervised", "--config", cfg, "--stage", "asr"]] {
        let o = s2ut(&args, d.path());
        assert!(o.status.success(), "{}", text(&o));
    }
    let o = s2ut(&["sweep", "--config", cfg, "--grid", "p=0.3,0.5,0.7", "lambda=5,10,15"], d.path());
    assert!(o.status.success(), "{}", text(&o));
    let tsv = fs::read_to_string(d.path().join("sweep.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows[0], ["p", "lambda=5", "lambda=10", "lambda=15"]);
    assert_eq!(rows.len(), 4);
    for r in &rows[1..] {
        assert_eq!(r.len(), 4);
        assert!(r[1..].iter().all(|c| c.parse::<f64>().is_ok()), "{r:?}");
    }
}
