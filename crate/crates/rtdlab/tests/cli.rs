//! End-to-end runs of the `rtdlab` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rtdlab_core::oracle::OracleSolution;
use rtdlab_core::{nominal_td, LearnerConfig, Mdp, Policy};

fn rtdlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtdlab")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// The single run directory under `root`.
fn only_dir(root: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = std::fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

fn read_oracle(dir: &Path) -> OracleSolution {
    serde_json::from_str(&std::fs::read_to_string(dir.join("oracle.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_trace_with_one_row_per_outer_step() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&rtdlab(&["run", "--T", "30", "--K", "500", "--out", "runs"], tmp.path()));
    let dir = only_dir(&tmp.path().join("runs"));
    let csv = std::fs::read_to_string(dir.join("trace.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,sup_err,theta_norm,mean_td,wall_ms");
    assert_eq!(lines.len(), 1 + 31);
    for (t, line) in lines[1..].iter().enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 5);
        assert_eq!(cols[0], t.to_string());
        assert!(cols[1].parse::<f64>().unwrap().is_finite());
    }
    assert!(dir.join("config.json").exists());
    assert!(dir.join("oracle.json").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["run", "--T", "5", "--K", "300", "--seed", "4", "--uncertainty", "w:0.2:2"];
    ok(&rtdlab(&[&args[..], &["--out", "a"]].concat(), tmp.path()));
    ok(&rtdlab(&[&args[..], &["--out", "b"]].concat(), tmp.path()));
    let (a, b) = (only_dir(&tmp.path().join("a")), only_dir(&tmp.path().join("b")));
    assert_eq!(a.file_name(), b.file_name(), "run ids differ");
    for f in ["trace.csv", "config.json", "oracle.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn several_seeds_write_one_trace_each() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&rtdlab(&["run", "--T", "2", "--K", "100", "--seeds", "3,5", "--no-oracle"], tmp.path()));
    let dir = only_dir(&tmp.path().join("runs"));
    for seed in [3, 5] {
        let csv = std::fs::read_to_string(dir.join(format!("trace_seed{seed}.csv"))).unwrap();
        assert!(csv.lines().nth(1).unwrap().split(',').nth(1) == Some("NaN"));
    }
    assert!(!dir.join("oracle.json").exists());
}

#[test]
fn missing_config_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rtdlab(&["run", "--config", "nope.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn bad_spec_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(rtdlab(&["oracle", "--uncertainty", "kl:0.1"], tmp.path()).status.code(), Some(2));
    assert_eq!(rtdlab(&["run", "--omega", "0.4"], tmp.path()).status.code(), Some(2));
}

#[test]
fn periodic_model_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let flip = Mdp::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 1.0], 0.9).unwrap();
    std::fs::write(tmp.path().join("flip.json"), serde_json::to_string(&flip).unwrap()).unwrap();
    let out = rtdlab(&["run", "--mdp", "flip.json", "--T", "1", "--K", "10"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn oracle_on_one_state_model_is_ten() {
    let tmp = tempfile::tempdir().unwrap();
    let one = Mdp::new(1, 1, vec![1.0], vec![1.0], 0.9).unwrap();
    std::fs::write(tmp.path().join("one.json"), serde_json::to_string(&one).unwrap()).unwrap();
    for (i, u) in ["tv:0.3", "w:0.3:1"].iter().enumerate() {
        let out = format!("o{i}");
        ok(&rtdlab(&["oracle", "--mdp", "one.json", "--uncertainty", u, "--tol", "1e-12", "--out", &out], tmp.path()));
        let sol = read_oracle(&only_dir(&tmp.path().join(&out)));
        assert!((sol.q[0] - 10.0).abs() <= 1e-10, "{u}: {}", sol.q[0]);
    }
}

#[test]
fn zero_radius_oracle_matches_linear_solve() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&rtdlab(&["oracle", "--uncertainty", "tv:0", "--tol", "1e-11"], tmp.path()));
    let sol = read_oracle(&only_dir(&tmp.path().join("runs")));

    // (I − γ P_π) q = r by Gaussian elimination
    let mdp = rtdlab_core::random_mdp(5, 2, 0);
    let (ns, na, g) = (5, 2, mdp.gamma());
    let n = ns * na;
    let mut a = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        a[i][i] += 1.0;
        a[i][n] = mdp.rewards()[i];
        let row = mdp.row(i / na, i % na);
        for (y, p) in row.iter().enumerate() {
            for b in 0..na {
                a[i][y * na + b] -= g * p / na as f64;
            }
        }
    }
    for c in 0..n {
        let piv = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    for i in 0..n {
        let want = a[i][n] / a[i][i];
        assert!((sol.q[i] - want).abs() <= 1e-10, "pair {i}: {} vs {want}", sol.q[i]);
    }
}

#[test]
fn oracle_tolerance_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    for (tol, out) in [("1e-3", "loose"), ("1e-11", "tight")] {
        ok(&rtdlab(&["oracle", "--tol", tol, "--out", out], tmp.path()));
    }
    let loose = read_oracle(&only_dir(&tmp.path().join("loose")));
    let tight = read_oracle(&only_dir(&tmp.path().join("tight")));
    assert!(loose.residual <= 1e-3 * 0.1 + 1e-15);
    assert!(tight.residual <= 1e-11 * 0.1 + 1e-15);
    assert!(tight.iterations > loose.iterations);
    let gap = loose.q.iter().zip(&tight.q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap <= 1e-3);
}

#[test]
fn q_oracle_reports_greedy_policy() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&rtdlab(&["oracle", "--algo", "q", "--mdp", "random:4x2:1"], tmp.path()));
    let sol = read_oracle(&only_dir(&tmp.path().join("runs")));
    let greedy = sol.greedy_policy.expect("q oracle writes its greedy policy");
    for (s, &a) in greedy.iter().enumerate() {
        assert!(sol.q[s * 2 + a] >= sol.q[s * 2 + 1 - a]);
    }
}

#[test]
fn rate_study_writes_summary_and_slope() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&rtdlab(&["rate-study", "--T", "3", "--k-grid", "100,200,400"], tmp.path()));
    assert!(out.contains("slope"));
    let dir = only_dir(&tmp.path().join("runs"));
    let csv = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "K,median_err,q25,q75");
    assert_eq!(lines.len(), 4);
    for line in &lines[1..] {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[2] <= v[1] && v[1] <= v[3]);
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("rate_study.json")).unwrap()).unwrap();
    assert!(json["slope"].as_f64().unwrap().is_finite());
    assert_eq!(json["points"].as_array().unwrap().len(), 3);
    assert_eq!(json["seeds"].as_array().unwrap().len(), 10);
}

#[test]
fn rate_study_rejects_short_grid() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(rtdlab(&["rate-study", "--k-grid", "100,200"], tmp.path()).status.code(), Some(2));
    assert_eq!(rtdlab(&["rate-study", "--seeds", "1,2,3"], tmp.path()).status.code(), Some(2));
}

#[test]
fn tiny_radius_tracks_nominal_td() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&rtdlab(&["run", "--uncertainty", "tv:1e-6", "--T", "20", "--K", "5000"], tmp.path()));
    assert!(out.contains("final sup_err"));
    let dir = only_dir(&tmp.path().join("runs"));
    let robust: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    let robust_err = robust["results"][0]["final_sup_err"].as_f64().unwrap();

    let mdp = rtdlab_core::random_mdp(5, 2, 0);
    let pol = Policy::uniform(5, 2);
    let phi = rtdlab_core::linear_fa::tabular_features(5, 2, rtdlab_core::FeatureKind::Primal);
    let q = read_oracle(&dir).q;
    let cfg = LearnerConfig { t_outer: 20, k_inner: 5000, ..Default::default() };
    let nominal = nominal_td(&mdp, &pol, &phi, &cfg, Some(&q)).unwrap();
    let nominal_err = nominal.trace.final_sup_err().unwrap();
    assert!(robust_err <= 2.0 * nominal_err, "robust {robust_err} vs nominal {nominal_err}");
}

#[test]
fn config_file_paths_resolve_from_its_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let sub = tmp.path().join("exp");
    std::fs::create_dir(&sub).unwrap();
    let one = Mdp::new(1, 1, vec![1.0], vec![1.0], 0.9).unwrap();
    std::fs::write(sub.join("one.json"), serde_json::to_string(&one).unwrap()).unwrap();
    std::fs::write(sub.join("exp.toml"), "mdp = \"one.json\"\nuncertainty = \"tv:0.1\"\n[learner]\nt_outer = 2\nk_inner = 50\n")
        .unwrap();
    ok(&rtdlab(&["oracle", "--config", "exp/exp.toml"], tmp.path()));
    let sol = read_oracle(&only_dir(&tmp.path().join("runs")));
    assert_eq!(sol.q.len(), 1);
}

#[test]
fn gen_mdp_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&rtdlab(&["gen-mdp", "--mdp", "random:3x2:7", "--gamma", "0.8", "--out", "m.json"], tmp.path()));
    let mdp: Mdp = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(mdp, rtdlab_core::random_mdp(3, 2, 7).with_gamma(0.8).unwrap());
    let stdout = ok(&rtdlab(&["gen-mdp", "--mdp", "m.json"], tmp.path()));
    assert_eq!(serde_json::from_str::<Mdp>(&stdout).unwrap(), mdp);
}
