use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bilaf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bilaf"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// Non-comment lines of a written file.
fn body(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = bilaf(
        dir.path(),
        &["generate", "--out", "pool.bin", "--classes", "4", "--per-class", "60", "--dim", "8", "--noise-fraction", "0.1", "--seed", "2"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn exit_codes() {
    let dir = workspace();
    let d = dir.path();
    assert_eq!(code(&bilaf(d, &["select", "--bogus"])), 1);
    assert_eq!(code(&bilaf(d, &["select", "--pool", "pool.bin", "--out-dir", "o", "--denoise", "sharpen"])), 1);
    assert_eq!(code(&bilaf(d, &["select", "--pool", "pool.bin", "--out-dir", "o", "--budget", "5", "--cores", "6"])), 1);
    assert_eq!(code(&bilaf(d, &["select", "--pool", "missing.bin", "--out-dir", "o"])), 2);
    fs::write(d.join("bad.bin"), b"not a pool").unwrap();
    assert_eq!(code(&bilaf(d, &["select", "--pool", "bad.bin", "--out-dir", "o"])), 2);
    assert_eq!(code(&bilaf(d, &["--help"])), 0);
}

#[test]
fn select_writes_budget_indices_and_provenance() {
    let dir = workspace();
    let d = dir.path();
    let out = bilaf(d, &["select", "--pool", "pool.bin", "--budget", "30", "--cores", "6", "--out-dir", "s", "--trace", "--denoise-report"]);
    assert_eq!(code(&out), 0);
    let lines = body(&d.join("s/selection.txt"));
    assert_eq!(lines.len(), 30);
    let mut idx: Vec<usize> = lines.iter().map(|l| l.parse().unwrap()).collect();
    idx.sort();
    idx.dedup();
    assert_eq!(idx.len(), 30);

    let header = fs::read_to_string(d.join("s/selection.txt")).unwrap();
    assert!(header.contains("# budget = 30"));
    assert!(header.contains("# cores = 6"));

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("s/selection.json")).unwrap()).unwrap();
    assert_eq!(json["selected"].as_array().unwrap().len(), 30);
    assert_eq!(json["core_indices"].as_array().unwrap().len(), 6);
    assert_eq!(json["config"]["budget"], 30);
    assert_eq!(body(&d.join("s/optimizer_trace.csv"))[0], "iter,loss");
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("s/denoise.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 6);
}

#[test]
fn flags_override_config_file() {
    let dir = workspace();
    let d = dir.path();
    fs::write(d.join("run.cfg"), "# tuned\nbudget = 24\ncores = 4\ndenoise = none\n").unwrap();
    assert_eq!(code(&bilaf(d, &["select", "--pool", "pool.bin", "--config", "run.cfg", "--budget", "20", "--out-dir", "s"])), 0);
    let text = fs::read_to_string(d.join("s/selection.txt")).unwrap();
    assert!(text.contains("# budget = 20"));
    assert!(text.contains("# cores = 4"));
    assert!(text.contains("# denoise = none"));
    assert_eq!(body(&d.join("s/selection.txt")).len(), 20);

    fs::write(d.join("broken.cfg"), "budget: 3\n").unwrap();
    assert_eq!(code(&bilaf(d, &["select", "--pool", "pool.bin", "--config", "broken.cfg", "--out-dir", "s"])), 1);
}

#[test]
fn baseline_selection() {
    let dir = workspace();
    let d = dir.path();
    for m in ["random", "fds", "kmeans"] {
        assert_eq!(code(&bilaf(d, &["select", "--pool", "pool.bin", "--method", m, "--budget", "12", "--out-dir", m])), 0);
        assert_eq!(body(&d.join(m).join("selection.txt")).len(), 12);
    }
    assert_eq!(code(&bilaf(d, &["select", "--pool", "pool.bin", "--method", "oracle", "--out-dir", "x"])), 1);
}

#[test]
fn single_cell_sweep_matches_evaluate() {
    let dir = workspace();
    let d = dir.path();
    let common = ["--pool", "pool.bin", "--budget", "20", "--cores", "5", "--trials", "2", "--seed", "4"];
    let mut eval_args = vec!["evaluate", "--method", "bilaf", "--out-dir", "e"];
    eval_args.extend(common);
    assert_eq!(code(&bilaf(d, &eval_args)), 0);
    let mut sweep_args = vec!["sweep", "--out-dir", "w"];
    sweep_args.extend(common);
    assert_eq!(code(&bilaf(d, &sweep_args)), 0);

    let eval = body(&d.join("e/summary.csv"));
    let sweep = body(&d.join("w/sweep.csv"));
    assert_eq!(sweep.len(), 2);
    let e: Vec<&str> = eval[1].split(',').collect();
    let s: Vec<&str> = sweep[1].split(',').collect();
    // trials and the four summary statistics line up
    assert_eq!(&e[1..], &s[7..]);
}

#[test]
fn sweep_grid_size_is_axis_product() {
    let dir = workspace();
    let d = dir.path();
    let out = bilaf(
        d,
        &[
            "sweep", "--pool", "pool.bin", "--budget", "20", "--cores", "4,5", "--denoise", "idc,db,none",
            "--process", "isr,os", "--out-dir", "w",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = body(&d.join("w/sweep.csv"));
    assert_eq!(rows.len(), 1 + 2 * 3 * 2);
    assert!(rows[0].starts_with("denoise,criterion,process,opponent_penalty,cores,removal_ratio,delta,"));
    assert_eq!(code(&bilaf(d, &["sweep", "--pool", "pool.bin", "--criterion", "bs,xx", "--out-dir", "w"])), 1);
}

#[test]
fn evaluate_saved_selection_and_export() {
    let dir = workspace();
    let d = dir.path();
    assert_eq!(code(&bilaf(d, &["select", "--pool", "pool.bin", "--budget", "16", "--cores", "4", "--out-dir", "s"])), 0);
    assert_eq!(code(&bilaf(d, &["evaluate", "--pool", "pool.bin", "--selection", "s/selection.txt", "--out-dir", "e"])), 0);
    let rows = body(&d.join("e/evaluation.csv"));
    assert_eq!(rows[0], "method,trial,accuracy,coverage,margin");
    let acc: f64 = rows[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    assert_eq!(code(&bilaf(d, &["export-viz", "--pool", "pool.bin", "--selection", "s/selection.json", "--out-dir", "v"])), 0);
    let viz = body(&d.join("v/viz.csv"));
    assert_eq!(viz[0], "x,y,label,selected_stage");
    assert_eq!(viz.len(), 1 + 240);
    let core = viz.iter().filter(|l| l.ends_with(",core")).count();
    let boundary = viz.iter().filter(|l| l.ends_with(",boundary")).count();
    assert_eq!((core, boundary), (4, 12));
}

#[test]
fn csv_pools_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&bilaf(d, &["generate", "--out", "pool.csv", "--classes", "3", "--per-class", "30", "--dim", "5", "--seed", "1"])),
        0
    );
    assert_eq!(code(&bilaf(d, &["select", "--pool", "pool.csv", "--budget", "9", "--cores", "3", "--out-dir", "s"])), 0);
    assert_eq!(body(&d.join("s/selection.txt")).len(), 9);
}
