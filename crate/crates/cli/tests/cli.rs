use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ehdl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ehdl"))
        .current_dir(dir)
        .args(args)
        .env("EHDL_THREADS", "2")
        .output()
        .unwrap()
}

fn setup(config: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.toml");
    std::fs::write(&path, config).unwrap();
    (dir, path)
}

/// Rows of a CSV keyed by column name.
fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    r.records()
        .map(|rec| header.iter().cloned().zip(rec.unwrap().iter().map(String::from)).collect())
        .collect()
}

fn f(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

#[test]
fn uncorrelated_powers_follow_the_tightest_string() {
    let (dir, _) = setup("K = 10\nd = 1\nrho = 0.0\npaper_profile = true\n");
    let out = ehdl(dir.path(), &["solve-dc", "--config", "config.toml", "--out", "run/"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&dir.path().join("run/power.csv"));
    assert_eq!(rows.len(), 10);

    // string oracle: the cheapest slope from each corner of the arrival curve
    let energy = [0.2, 0.0, 0.6, 0.0, 0.0, 0.8, 1.4, 0.0, 0.0, 0.0];
    let mut expected = vec![0.0; 10];
    let (mut at, mut spent) = (0usize, 0.0);
    while at < 10 {
        let (slope, end) = (at + 1..=10)
            .map(|m| ((energy[..m].iter().sum::<f64>() - spent) / (m - at) as f64, m))
            .fold((f64::INFINITY, at), |b, c| if c.0 <= b.0 + 1e-15 { c } else { b });
        expected[at..end].fill(slope);
        spent += slope * (end - at) as f64;
        at = end;
    }
    for (row, e) in rows.iter().zip(expected) {
        assert!((f(row, "power") - e).abs() < 1e-6, "{row:?} vs {e}");
        assert!(f(row, "cumulative_energy_used") <= f(row, "cumulative_energy_in") + 1e-9);
    }
    let hash = &rows[0]["config_hash"];
    assert_eq!(hash.len(), 16);
    let manifest = std::fs::read_to_string(dir.path().join("run/manifest.toml")).unwrap();
    assert!(manifest.contains(&format!("config_hash = \"{hash}\"")));
}

#[test]
fn sweep_distortion_falls_along_delay() {
    let (dir, _) = setup("paper_profile = true\nrho_list = [0.2, 0.5, 0.8]\nd_list = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]\n");
    let out = ehdl(dir.path(), &["sweep", "--config", "config.toml", "--out", "s-"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut avg: BTreeMap<(String, usize), f64> = BTreeMap::new();
    for row in read_csv(&dir.path().join("s-distortion.csv")) {
        *avg.entry((row["rho"].clone(), row["d"].parse().unwrap())).or_default() += f(&row, "D_i") / 10.0;
    }
    assert_eq!(avg.len(), 30);
    for rho in ["0.2", "0.5", "0.8"] {
        let series: Vec<f64> = (1..=10).map(|d| avg[&(rho.to_string(), d)]).collect();
        assert!(series.windows(2).all(|w| w[1] <= w[0] + 1e-9), "rho {rho}: {series:?}");
    }
    let sweep = read_csv(&dir.path().join("s-sweep.csv"));
    assert_eq!(sweep.len(), 30);
    for row in &sweep {
        assert!(f(row, "D_avg_benchmark") >= f(row, "D_avg") - 1e-9);
        let reduction = (f(row, "D_avg_benchmark") - f(row, "D_avg")) / f(row, "D_avg_benchmark");
        assert!((reduction - f(row, "reduction")).abs() < 1e-9);
    }
}

#[test]
fn out_of_range_correlation_exits_with_2() {
    let (dir, _) = setup("K = 10\nd = 1\nrho = 1.5\npaper_profile = true\n");
    let out = ehdl(dir.path(), &["solve-dc", "--config", "config.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("correlation"));
}

#[test]
fn syntax_errors_exit_with_2_and_a_position() {
    let (dir, _) = setup("rho = 0.5\npaper_profile = true\nd = [1,\n");
    let out = ehdl(dir.path(), &["solve-dt", "--config", "config.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let (dir, _) = setup("rho = 0.5\npaper_profile = true\nbogus = 1\n");
    let out = ehdl(dir.path(), &["solve-dt", "--config", "config.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn flag_overrides_are_validated() {
    let (dir, _) = setup("rho = 0.5\npaper_profile = true\n");
    let out = ehdl(dir.path(), &["solve-dc", "--config", "config.toml", "--tol=0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tolerance"));
}

#[test]
fn non_convergence_exits_with_3_and_still_writes() {
    let (dir, _) = setup("rho = 0.8\nd = 4\npaper_profile = true\n[solver]\npolish = false\n");
    let out = ehdl(dir.path(), &["solve-dt", "--config", "config.toml", "--max-iter", "20", "--out", "p/"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(dir.path().join("p/manifest.toml")).unwrap();
    assert!(manifest.contains("converged = false"));
    assert_eq!(read_csv(&dir.path().join("p/power.csv")).len(), 10);
}

#[test]
fn seed_flags_select_the_traces() {
    let (dir, _) = setup("rho = 0.2\npaper_profile = true\nseeds = [100]\n");
    let out = ehdl(dir.path(), &["online", "--config", "config.toml", "--seed", "5", "--seed", "3", "--out", "o/"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&dir.path().join("o/online.csv"));
    let seeds: Vec<&str> = rows.iter().map(|r| r["seed"].as_str()).collect();
    assert_eq!(seeds, ["3", "5"]);
    for row in &rows {
        assert!(f(row, "D_online") >= f(row, "D_offline") * (1.0 - 1e-9));
    }
    let manifest = std::fs::read_to_string(dir.path().join("o/manifest.toml")).unwrap();
    assert!(manifest.contains("seeds = [3, 5]"), "{manifest}");
}

#[test]
fn online_reads_a_trace_file() {
    let (dir, _) = setup("rho = 0.5\nd = 2\ntrace = \"arrivals.csv\"\n");
    std::fs::write(dir.path().join("arrivals.csv"), "slot,energy\n1,1.0\n2,0.0\n3,2.0\n").unwrap();
    let out = ehdl(dir.path(), &["online", "--config", "config.toml", "--out", "t/"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&dir.path().join("t/online.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["seed"], "");
    assert!(f(&rows[0], "D_online") >= f(&rows[0], "D_offline") * (1.0 - 1e-9));
}

#[test]
fn oracle_check_compares_with_brute_force() {
    let (dir, _) = setup("energy = [2.0, 0.0]\nrho = 1.0\nd = 2\n");
    let out = ehdl(dir.path(), &["oracle-check", "--config", "config.toml", "--out", "k/"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&dir.path().join("k/oracle.csv"));
    assert!((f(&rows[0], "D_solver") - 0.25).abs() < 1e-7);
    assert!(f(&rows[0], "abs_diff") < 1e-3);
    assert!(f(&rows[0], "kkt_stationarity") < 1e-4);
}

#[test]
fn reruns_are_byte_identical() {
    let (dir, _) = setup("paper_profile = true\nrho_list = [0.3]\nd_list = [1, 2]\n");
    for prefix in ["a/", "b/"] {
        assert!(ehdl(dir.path(), &["solve-dt", "--config", "config.toml", "--out", prefix]).status.success());
    }
    for name in ["power.csv", "distortion.csv", "rates.csv", "trace.csv"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}
