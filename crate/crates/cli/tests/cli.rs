//! End-to-end tests of the `sage-opt` binary: exit-code protocol, strict
//! config handling, output determinism, snapshot/resume round-trips, and CSV
//! schemas (parsed back with an independent reader).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sage_opt::snapshot::read_snapshot;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sage-opt"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn sage-opt");
    assert!(
        out.status.success(),
        "sage-opt {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    bin()
        .args(args)
        .output()
        .expect("spawn sage-opt")
        .status
        .code()
        .expect("exit code")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sage-opt-test-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn read_csv(path: &Path) -> Vec<csv::StringRecord> {
    let mut reader = csv::Reader::from_path(path).expect("open csv");
    reader.records().map(|r| r.expect("csv record")).collect()
}

fn csv_headers(path: &Path) -> Vec<String> {
    let mut reader = csv::Reader::from_path(path).expect("open csv");
    reader
        .headers()
        .expect("headers")
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[test]
fn counterexample_rows_match_the_constructions() {
    let dir = tmp_dir("ce");
    let out = dir.join("run");
    run_ok(&["counterexample", "--out", out.to_str().unwrap()]);

    let csv_path = out.join("counterexample.csv");
    assert_eq!(
        csv_headers(&csv_path),
        vec!["M", "variant", "tr_H", "tr_HinvSigma", "bound_check"]
    );
    let rows = read_csv(&csv_path);
    assert_eq!(rows.len(), 6);
    let flat10 = rows
        .iter()
        .find(|r| &r[0] == "10" && &r[1] == "flat_misaligned")
        .expect("M=10 flat row");
    let tr_h: f64 = flat10[2].parse().unwrap();
    let tr_his: f64 = flat10[3].parse().unwrap();
    assert!((tr_h - 0.1).abs() <= 1e-11);
    assert!((tr_his - 20.0).abs() <= 2e-9);
    assert_eq!(&flat10[4], "true");
    assert!(rows.iter().all(|r| &r[4] == "true"));
}

#[test]
fn small_m_still_satisfies_the_bounds() {
    let dir = tmp_dir("ce-m15");
    let cfg = dir.join("cfg.txt");
    fs::write(&cfg, "[counterexample]\nm_grid = 1.5\n").unwrap();
    let out = dir.join("run");
    run_ok(&[
        "counterexample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let rows = read_csv(&out.join("counterexample.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| &r[4] == "true"));
}

#[test]
fn decomposition_grid_passes_and_ignores_thread_count() {
    let dir = tmp_dir("vd");
    let cfg = dir.join("cfg.txt");
    fs::write(
        &cfg,
        "[verify-decomposition]\ntrials = 4000\nk_grid = 1,2\nsigma_grid = 0,0.1\n",
    )
    .unwrap();
    let out1 = dir.join("one");
    run_ok(&[
        "verify-decomposition",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out1.to_str().unwrap(),
        "--seed",
        "9",
    ]);
    let rows = read_csv(&out1.join("decomposition.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| &r[7] == "true"));

    let out2 = dir.join("four");
    let status = bin()
        .args([
            "verify-decomposition",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out2.to_str().unwrap(),
            "--seed",
            "9",
        ])
        .env("SAGE_OPT_THREADS", "4")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        fs::read(out1.join("decomposition.csv")).unwrap(),
        fs::read(out2.join("decomposition.csv")).unwrap(),
        "thread count changed the results"
    );
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tmp_dir("cfg-errors");

    // Below the trial minimum.
    let cfg = dir.join("low.txt");
    fs::write(&cfg, "[verify-decomposition]\ntrials = 1\n").unwrap();
    assert_eq!(
        exit_code(&[
            "verify-decomposition",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join("a").to_str().unwrap(),
        ]),
        2
    );

    // Unknown key in the selected section.
    let cfg = dir.join("unknown-key.txt");
    fs::write(&cfg, "[toy2d]\nbogus_knob = 3\n").unwrap();
    assert_eq!(
        exit_code(&[
            "toy2d",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join("b").to_str().unwrap(),
        ]),
        2
    );

    // Unknown section name.
    let cfg = dir.join("unknown-section.txt");
    fs::write(&cfg, "[mystery]\nx = 1\n").unwrap();
    assert_eq!(
        exit_code(&[
            "toy2d",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join("c").to_str().unwrap(),
        ]),
        2
    );

    // Unknown subcommand is a usage error.
    assert_eq!(exit_code(&["no-such-command"]), 2);
}

#[test]
fn motivating_ledger_all_rows_pass() {
    let dir = tmp_dir("mot");
    let out = dir.join("run");
    run_ok(&["motivating", "--out", out.to_str().unwrap()]);
    let rows = read_csv(&out.join("motivating.csv"));
    assert_eq!(rows.len(), 17);
    assert!(rows.iter().all(|r| &r[5] == "true"));
    let theta = rows.iter().find(|r| &r[0] == "theta_star[0]").unwrap();
    let v: f64 = theta[1].parse().unwrap();
    assert!((v - 0.1).abs() <= 1e-10);
}

#[test]
fn resolved_config_reparses_to_the_same_run() {
    let dir = tmp_dir("echo");
    let cfg = dir.join("cfg.txt");
    fs::write(&cfg, "[counterexample]\nm_grid = 3,9\nseed = 5\n").unwrap();
    let first = dir.join("first");
    run_ok(&[
        "counterexample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        first.to_str().unwrap(),
    ]);

    // Re-run purely from the resolved config (only the out dir overridden).
    let second = dir.join("second");
    run_ok(&[
        "counterexample",
        "--config",
        first.join("resolved_config.txt").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(first.join("counterexample.csv")).unwrap(),
        fs::read(second.join("counterexample.csv")).unwrap()
    );
    let strip_out = |text: &str| -> String {
        text.lines()
            .filter(|l| !l.starts_with("out = "))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(
        strip_out(&fs::read_to_string(first.join("resolved_config.txt")).unwrap()),
        strip_out(&fs::read_to_string(second.join("resolved_config.txt")).unwrap())
    );
}

#[test]
fn train_is_byte_deterministic_given_the_seed() {
    let dir = tmp_dir("det");
    let cfg = dir.join("cfg.txt");
    fs::write(
        &cfg,
        "[train]\nproblem = two-domain\nstepper = sage\nsteps = 60\ngamma = 0.3\n",
    )
    .unwrap();
    // Re-running into the same destination must overwrite every
    // deterministic artifact with byte-identical content (wall-clock
    // timings.csv is the documented exception).
    let a = dir.join("a");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
        "--seed",
        "123",
    ]);
    let deterministic = [
        "run_record.csv",
        "final_params.sageps",
        "final_checkpoint.sageps",
        "run_manifest.txt",
        "resolved_config.txt",
    ];
    let before: Vec<Vec<u8>> = deterministic
        .iter()
        .map(|f| fs::read(a.join(f)).unwrap())
        .collect();
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
        "--seed",
        "123",
    ]);
    for (file, old) in deterministic.iter().zip(&before) {
        assert_eq!(
            &fs::read(a.join(file)).unwrap(),
            old,
            "{file} differs between identical runs"
        );
    }
    // A different seed must change the trajectory.
    let c = dir.join("c");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
        "--seed",
        "124",
    ]);
    assert_ne!(
        fs::read(a.join("final_params.sageps")).unwrap(),
        fs::read(c.join("final_params.sageps")).unwrap()
    );
}

#[test]
fn resume_equals_the_uninterrupted_run() {
    let dir = tmp_dir("resume");
    let cfg = dir.join("cfg.txt");
    fs::write(
        &cfg,
        "[train]\nproblem = two-domain\nstepper = sage\nsteps = 40\ngamma = 0.3\ncheckpoint_every = 20\n",
    )
    .unwrap();
    let full = dir.join("full");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        full.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    let checkpoint = full.join("checkpoint_20.sageps");
    assert!(checkpoint.exists());

    let resumed = dir.join("resumed");
    let cfg2 = dir.join("cfg-resume.txt");
    fs::write(
        &cfg2,
        format!(
            "[train]\nproblem = two-domain\nstepper = sage\nsteps = 40\ngamma = 0.3\nresume = {}\n",
            checkpoint.display()
        ),
    )
    .unwrap();
    run_ok(&[
        "train",
        "--config",
        cfg2.to_str().unwrap(),
        "--out",
        resumed.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert_eq!(
        fs::read(full.join("final_params.sageps")).unwrap(),
        fs::read(resumed.join("final_params.sageps")).unwrap(),
        "resumed run diverged from the uninterrupted one"
    );
}

#[test]
fn sage_training_converges_to_the_aggregate_minimizer() {
    let dir = tmp_dir("converge");
    let out = dir.join("run");
    run_ok(&["train", "--out", out.to_str().unwrap(), "--seed", "42"]);
    let params = read_snapshot(&out.join("final_params.sageps")).unwrap();
    let theta = params.flatten();
    let dist = ((theta[0] - 0.1).powi(2) + theta[1].powi(2)).sqrt();
    assert!(
        dist <= 0.05,
        "final theta {theta:?} is {dist} from (0.1, 0)"
    );

    // Run-record schema and row count.
    let record = out.join("run_record.csv");
    assert_eq!(
        csv_headers(&record),
        vec![
            "step",
            "loss_domain1",
            "loss_domain2",
            "aggregate_loss",
            "agreement",
            "beta",
            "eps_norm"
        ]
    );
    assert_eq!(read_csv(&record).len(), 2000);
}

#[test]
fn train_runs_the_mlp_problem_with_multi_tensor_snapshots() {
    let dir = tmp_dir("mlp");
    let cfg = dir.join("cfg.txt");
    fs::write(
        &cfg,
        "[train]\nproblem = mlp\nstepper = sage\nsteps = 20\nlr = 0.05\nrho = 0.01\ngamma = 0.01\n",
    )
    .unwrap();
    let out = dir.join("run");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let params = read_snapshot(&out.join("final_params.sageps")).unwrap();
    let names: Vec<&str> = params.tensors().iter().map(|t| t.name()).collect();
    assert_eq!(names, vec!["w1", "b1", "w2", "b2"]);
}

#[test]
fn toy2d_small_ensemble_passes_and_writes_artifacts() {
    let dir = tmp_dir("toy2d");
    let cfg = dir.join("cfg.txt");
    fs::write(
        &cfg,
        "[toy2d]\nseeds = 10\nsteps = 2000\nrecord_trajectories = 2\n",
    )
    .unwrap();
    let out = dir.join("run");
    run_ok(&[
        "toy2d",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "20250810",
    ]);
    let summary = read_csv(&out.join("toy2d_summary.csv"));
    assert_eq!(summary.len(), 4);
    let basins = read_csv(&out.join("toy2d_basins.csv"));
    assert_eq!(basins.len(), 40);
    assert!(basins.iter().all(|r| &r[4] == "A" || &r[4] == "B"));
    assert!(out.join("toy2d_traj_sage_noise_0.csv").exists());
    assert!(out.join("toy2d.svg").exists());
}

#[test]
fn scale_invariance_emits_both_variants_and_passes() {
    let dir = tmp_dir("si");
    let out = dir.join("run");
    run_ok(&["scale-invariance", "--out", out.to_str().unwrap()]);
    for variant in ["with_bias", "no_bias"] {
        let path = out.join(format!("scale_invariance_{variant}.csv"));
        assert_eq!(
            csv_headers(&path),
            vec![
                "alpha",
                "sharpness_sam",
                "sharpness_adaptive",
                "sharpness_spectral",
                "true_flag"
            ]
        );
        let rows = read_csv(&path);
        assert_eq!(rows.len(), 7);
        for row in &rows {
            // Every rule's probe is finite and positive at every alpha,
            // including the converged alpha = 1 row.
            for col in 1..=3 {
                let value: f64 = row[col].parse().unwrap();
                assert!(value.is_finite() && value > 0.0, "column {col}: {value}");
            }
            assert!(&row[4] == "0" || &row[4] == "1");
        }
    }
    assert!(out.join("scale_invariance.svg").exists());
}

#[test]
fn gate_failure_exits_with_code_1() {
    // A gamma of zero removes the escape mechanism, so the ensemble gate
    // cannot hold: the command must report failure (exit 1), not error.
    let dir = tmp_dir("gate-fail");
    let cfg = dir.join("cfg.txt");
    fs::write(&cfg, "[toy2d]\nseeds = 6\nsteps = 400\ngamma = 0\n").unwrap();
    assert_eq!(
        exit_code(&[
            "toy2d",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join("run").to_str().unwrap(),
        ]),
        1
    );
}
