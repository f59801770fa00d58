use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_evoheur");

fn evoheur(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("EVOHEUR_API_KEY").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const HEURISTICS: [&str; 6] = [
    "-bins",
    "bins",
    "-np.arange(len(bins))",
    "-(bins - item) ** 2",
    "np.where(bins - item < 5, 100.0, -bins)",
    "-np.abs(bins - 2 * item)",
];

fn script() -> String {
    let mut s = String::new();
    for round in 0..8 {
        for (i, expr) in HEURISTICS.iter().enumerate() {
            s.push_str(&format!(
                "[[responses]]\nresponse = '''\n{{Heuristic {i} round {round}.}}\n```python\nimport numpy as np\n\ndef score(item, bins):\n    bins = np.asarray(bins, dtype=float)\n    return {expr}\n```\n'''\n\n"
            ));
        }
        s.push_str("[[responses]]\nstrategy = \"EXTRACT\"\nresponse = \"- Prefer bins whose residual capacity is closest to the item size.\"\n\n");
    }
    s
}

/// Small bin packing setup with a scripted generator.
fn setup(dir: &Path) -> PathBuf {
    std::fs::write(dir.join("script.toml"), script()).unwrap();
    let cfg = "task = \"bpp_online\"\nseed = 5\n\n[generator]\nbackend = \"mock\"\nscript = \"script.toml\"\n\n[[manifest]]\ntask = \"bpp_online\"\nsize = 120\ncount = 2\nseed = 1\ncapacity = 100\n";
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    v.sort();
    v
}

#[test]
fn mock_run_completes_and_echoes_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    setup(tmp.path());
    let o = evoheur(&["run", "--config", "run.toml", "--pop", "3", "--gens", "2", "--out", "out"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("best_objective\t"), "{text}");
    assert!(text.contains("gap\t"), "{text}");
    let echo = std::fs::read_to_string(tmp.path().join("out/config.toml")).unwrap();
    assert!(echo.contains("pop_size = 3"), "{echo}");
    assert!(echo.contains("generations = 2"), "{echo}");
    assert!(echo.contains("task = \"bpp_online\""), "{echo}");
    for f in ["events.jsonl", "report.json", "best_heuristic.py"] {
        assert!(tmp.path().join("out").join(f).exists(), "{f}");
    }

    // same inputs give the same log
    let again = evoheur(&["run", "--config", "run.toml", "--pop", "3", "--gens", "2", "--out", "out2"], tmp.path());
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(
        std::fs::read(tmp.path().join("out/events.jsonl")).unwrap(),
        std::fs::read(tmp.path().join("out2/events.jsonl")).unwrap()
    );

    let before = snapshot(&tmp.path().join("out"));
    let r = evoheur(&["report", "out"], tmp.path());
    assert!(r.status.success(), "{}", stderr(&r));
    assert_eq!(before, snapshot(&tmp.path().join("out")), "report must not write");
    let report = stdout(&r);
    let curve: Vec<&str> = report
        .lines()
        .skip_while(|l| *l != "# curve")
        .skip(2)
        .take_while(|l| !l.starts_with('#'))
        .collect();
    assert_eq!(curve.len(), 3, "{report}");
    let requests: u64 = report
        .lines()
        .find_map(|l| l.strip_prefix("requests\t"))
        .unwrap()
        .parse()
        .unwrap();
    let log = std::fs::read_to_string(tmp.path().join("out/events.jsonl")).unwrap();
    assert_eq!(requests, log.lines().filter(|l| l.contains("\"kind\":\"prompt\"")).count() as u64);
    let regimes: Vec<&str> = report
        .lines()
        .skip_while(|l| *l != "# regimes")
        .skip(2)
        .take_while(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').nth(1).unwrap())
        .collect();
    assert_eq!(regimes.len(), 2);
    assert!(regimes.iter().all(|r| ["explore", "exploit", "balance"].contains(r)), "{regimes:?}");
}

#[test]
fn task_flag_overrides_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("script.toml"), script()).unwrap();
    std::fs::write(
        tmp.path().join("tsp.toml"),
        "task = \"tsp_construct\"\n[generator]\nbackend = \"mock\"\nscript = \"script.toml\"\n",
    )
    .unwrap();
    let o = evoheur(&["run", "--config", "tsp.toml", "--task", "bpp", "--pop", "2", "--gens", "1", "--seed", "3", "--out", "o"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = std::fs::read_to_string(tmp.path().join("o/config.toml")).unwrap();
    assert!(echo.contains("task = \"bpp_online\""), "{echo}");
    assert!(echo.contains("seed = 3"), "{echo}");
    let bad = evoheur(&["run", "--config", "tsp.toml", "--task", "knapsack"], tmp.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn live_backend_without_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("live.toml"),
        "task = \"bpp\"\n[generator]\nbackend = \"live\"\nendpoint_url = \"http://127.0.0.1:9\"\nmodel_name = \"m\"\n",
    )
    .unwrap();
    let o = evoheur(&["run", "--config", "live.toml", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("EVOHEUR_API_KEY"), "{}", stderr(&o));
}

#[test]
fn missing_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = evoheur(&["run", "--config", "nope.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_task_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = evoheur(&["baseline", "--task", "knapsack"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

fn mean_row(out: &str, heuristic: &str) -> f64 {
    out.lines()
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .find(|c| c[1] == "mean" && c[3] == heuristic)
        .unwrap_or_else(|| panic!("no mean row for {heuristic}: {out}"))[4]
        .parse()
        .unwrap()
}

#[test]
fn baseline_tsp_unit_square() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("sq.tsp"),
        "NAME: sq\nTYPE: TSP\nDIMENSION: 4\nEDGE_WEIGHT_TYPE: EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 1 0\n3 1 1\n4 0 1\nEOF\n",
    )
    .unwrap();
    std::fs::write(tmp.path().join("m.toml"), "[[instances]]\ntask = \"tsp\"\npath = \"sq.tsp\"\n").unwrap();
    let o = evoheur(&["baseline", "--task", "tsp", "--manifest", "m.toml"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(mean_row(&stdout(&o), "nearest_neighbor"), 4.0);
}

#[test]
fn baseline_single_machine_flow_shop_is_total_time() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("f.txt"), "3 1\n5\n7\n2\n").unwrap();
    std::fs::write(tmp.path().join("m.toml"), "[[instances]]\ntask = \"fssp\"\npath = \"f.txt\"\n").unwrap();
    let o = evoheur(&["baseline", "--task", "fssp", "--manifest", "m.toml"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(mean_row(&stdout(&o), "ascending_total_time"), 14.0);
}

#[test]
fn baseline_bpp_default_set_has_both_rules() {
    let tmp = tempfile::tempdir().unwrap();
    let o = evoheur(&["baseline", "--task", "bpp"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let ff = mean_row(&out, "first_fit");
    let bf = mean_row(&out, "best_fit");
    assert!(bf <= ff + 1e-12 && bf > 0.0, "{out}");
}

#[test]
fn evaluate_reports_mean() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("h.py"), "def score(item, bins):\n    return -bins\n").unwrap();
    std::fs::write(tmp.path().join("m.toml"), "[[instances]]\ntask = \"bpp\"\nsize = 200\ncapacity = 100\n").unwrap();
    let o = evoheur(&["evaluate", "--task", "bpp", "--manifest", "m.toml", "--code", "h.py"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let b = evoheur(&["baseline", "--task", "bpp", "--manifest", "m.toml"], tmp.path());
    let mean: f64 = stdout(&o).lines().find_map(|l| l.strip_prefix("mean\t")).unwrap().parse().unwrap();
    assert_eq!(mean, mean_row(&stdout(&b), "best_fit"));
}

#[test]
fn corrupt_log_exits_3_naming_the_record() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    std::fs::create_dir(&dir).unwrap();
    std::fs::write(
        dir.join("events.jsonl"),
        "{\"seq\":0,\"kind\":\"error\",\"generation\":0,\"payload\":null}\n{\"seq\":1,\"kind\":\"bogus\"}\n",
    )
    .unwrap();
    let o = evoheur(&["report", "run"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("record 2"), "{}", stderr(&o));
}
