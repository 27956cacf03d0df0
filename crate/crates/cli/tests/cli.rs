use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
targets = ["cbr", "r"]
models = ["svr", "xgb_style", "oblivious"]
pdp_points = 5
repeats = 2

[data]
source = "synthetic"
n = 40

[grids.svr]
c = [10.0, 52.0]
gamma = [0.9]
epsilon = [0.01]

[grids.xgb_style]
n_estimators = [20.0, 30.0]
max_depth = [3.0]
subsample = [0.7]
colsample_bytree = [0.5, 1.0]

[grids.oblivious]
n_estimators = [20.0]
max_depth = [3.0, 4.0]
subsample = [0.9]
"#;

fn subgrade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subgrade"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_bad_flags() {
    let o = subgrade(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["stats", "synth", "split", "tune", "train", "evaluate", "pdp", "repeat", "report", "all"] {
        assert!(text.contains(cmd), "{cmd}");
    }
    assert_eq!(subgrade(&["all", "--target", "sand"]).status.code(), Some(1));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cv_k = 1\n");
    let o = subgrade(&["stats", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config"));

    let cfg = write_config(dir.path(), "[data]\nsource = \"csv\"\npath = \"missing.csv\"\n");
    assert_eq!(subgrade(&["stats", "--config", s(&cfg)]).status.code(), Some(1));
    assert_eq!(subgrade(&["stats", "--config", "/nonexistent/run.toml"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("soil.csv"), "HARSH,LL,PL,PI,OMC,CA,MDD,CBR,UCS\n1,2,3,4,5,6,7,8,9\n").unwrap();
    let cfg = write_config(dir.path(), "[data]\nsource = \"csv\"\npath = \"soil.csv\"\n");
    let o = subgrade(&["stats", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("load"));
}

#[test]
fn synth_then_stats_on_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = subgrade(&["synth", "--seed", "3", "--n", "33", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = dir.path().join("synthetic.csv");
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 34);
    let cfg = write_config(dir.path(), "[data]\nsource = \"csv\"\npath = \"synthetic.csv\"\n");
    let o = subgrade(&["stats", "--config", s(&cfg)]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("HARSH") && text.contains("CBR"));

    let o = subgrade(&["split", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("train.csv")).unwrap().lines().count(), 24);
    assert_eq!(fs::read_to_string(dir.path().join("test.csv")).unwrap().lines().count(), 11);
}

#[test]
fn all_is_deterministic_and_report_reemits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = subgrade(&["all", "--seed", "42", "--config", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ta = tree(&a);
    assert_eq!(ta, tree(&b));
    for f in ["report.json", "metrics.csv", "comparison.md", "repeat.csv"] {
        assert!(ta.contains_key(f), "{f}");
    }
    assert!(ta.contains_key("pdp/xgb_cbr_HARSH.csv"));
    assert!(ta.contains_key("tuning/oblivious_r.json"));
    assert!(ta.contains_key("models/svr_cbr.json"));
    assert!(ta.contains_key("residuals/svr_r.csv"));

    let metrics = String::from_utf8(ta["metrics.csv"].clone()).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("phase,model,target,r2,rmse,mae,mape"));
    assert_eq!(lines.count(), 3 * 2 * 2);
    let repeat = String::from_utf8(ta["repeat.csv"].clone()).unwrap();
    assert!(repeat.lines().nth(1).unwrap().contains('±'));

    let c = dir.path().join("c");
    let o = subgrade(&["report", "--from", s(&a.join("report.json")), "--out", s(&c)]);
    assert!(o.status.success());
    for (k, v) in tree(&c) {
        assert_eq!(&ta[&k], &v, "{k}");
    }
}

#[test]
fn staged_commands_agree_with_all() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("o");
    let args = |cmd: &'static str| vec![cmd, "--config", s(&cfg), "--out", s(&out), "--model", "xgb", "--target", "cbr"];
    let o = subgrade(&args("tune"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("tuning/xgb_cbr.json").is_file());
    let o = subgrade(&args("train"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trained = String::from_utf8(o.stdout).unwrap();
    let o = subgrade(&args("evaluate"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), trained);
    let o = subgrade(&args("pdp"));
    assert!(o.status.success());
    assert!(out.join("pdp/xgb_cbr_MDD.json").is_file());

    let all = dir.path().join("all");
    let o = subgrade(&["all", "--no-repeat", "--config", s(&cfg), "--out", s(&all), "--model", "xgb", "--target", "cbr"]);
    assert!(o.status.success());
    assert_eq!(fs::read(all.join("models/xgb_cbr.json")).unwrap(), fs::read(out.join("models/xgb_cbr.json")).unwrap());
    assert_eq!(
        fs::read(all.join("pdp/xgb_cbr_MDD.csv")).unwrap(),
        fs::read(out.join("pdp/xgb_cbr_MDD.csv")).unwrap()
    );

    let o = subgrade(&["repeat", "--config", s(&cfg), "--out", s(&out), "--model", "xgb", "--target", "cbr", "--repeats", "2"]);
    assert!(o.status.success());
    assert!(out.join("repeat.json").is_file());
}

#[test]
fn non_convergence_exits_3_with_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "targets = [\"cbr\"]\nmodels = [\"svr\", \"xgb_style\"]\npdp_points = 3\n\
         [data]\nsource = \"synthetic\"\nn = 30\n\
         [grids.svr]\nc = [10.0]\nmax_passes = [1.0]\n\
         [grids.xgb_style]\nn_estimators = [5.0]\n",
    );
    let out = dir.path().join("o");
    let o = subgrade(&["all", "--no-repeat", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    let report = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"partial\": true"));
    assert!(out.join("models/xgb_cbr.json").is_file());
    assert!(!out.join("models/svr_cbr.json").exists());
}
