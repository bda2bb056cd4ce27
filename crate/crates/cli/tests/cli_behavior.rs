//! End-to-end behavior of the `gdro` binary: CSV shape, exit codes,
//! config-file handling, and sweep outputs.

use std::path::Path;
use std::process::{Command, Output};

fn run_binary(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdro"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_text(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect()
}

/// Rows with the measured wall-time column cleared, for comparisons.
fn without_wall_time(rows: &[String]) -> Vec<String> {
    rows.iter()
        .map(|line| {
            let mut fields: Vec<&str> = line.split(',').collect();
            if fields.len() == 8 && fields[6] != "wall_time_ms" {
                fields[6] = "";
            }
            fields.join(",")
        })
        .collect()
}

const HEADER: &str =
    "t,samples_used,max_risk,regret_q_prime,regret_ratio,eps_phi_est,wall_time_ms,clamp_count";

#[test]
fn emits_exact_header_and_one_row_per_eval_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("metrics.csv");
    let output = run_binary(&[
        "run",
        "--m",
        "2",
        "--dim",
        "2",
        "--schedule",
        "fixed:1",
        "--iters",
        "100000",
        "--eval-every",
        "1000",
        "--eval-samples",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", stderr_text(&output));

    let raw = std::fs::read(&out).unwrap();
    assert!(!raw.contains(&b'\r'), "line endings must be bare LF");

    let rows = read_rows(&out);
    assert_eq!(rows[0], HEADER);
    assert_eq!(rows.len(), 101, "100,000 rounds at cadence 1,000");
    for (i, row) in rows[1..].iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[0], ((i as u64 + 1) * 1000).to_string());
        // Diagnostics are off: the three diagnostic columns stay empty.
        assert!(fields[3].is_empty() && fields[4].is_empty() && fields[5].is_empty());
        let risk: f64 = fields[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&risk));
        assert!(!row.contains(';'), "decimal separator must be '.'");
    }
}

#[test]
fn zero_iterations_is_a_config_error_naming_the_key() {
    let output = run_binary(&["run", "--iters", "0"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(
        stderr_text(&output).contains("iters"),
        "stderr must name the failing key: {}",
        stderr_text(&output)
    );
}

#[test]
fn unknown_config_key_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.conf");
    std::fs::write(&path, "bogus_knob=1\n").unwrap();
    let output = run_binary(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_text(&output).contains("bogus_knob"));
}

#[test]
fn malformed_schedule_grammar_is_a_config_error() {
    let output = run_binary(&["run", "--schedule", "every-other-round"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_text(&output).contains("schedule"));
}

#[test]
fn exhausted_schedule_file_aborts_with_the_failing_round() {
    let dir = tempfile::tempdir().unwrap();
    let schedule = dir.path().join("budgets.txt");
    std::fs::write(&schedule, "1\n2\n1\n").unwrap();
    let out = dir.path().join("metrics.csv");
    let output = run_binary(&[
        "run",
        "--m",
        "3",
        "--dim",
        "2",
        "--schedule",
        &format!("file:{}", schedule.display()),
        "--iters",
        "10",
        "--eval-samples",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(
        stderr_text(&output).contains("round 4"),
        "stderr must carry the failing round: {}",
        stderr_text(&output)
    );
}

#[test]
fn flags_override_config_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    let out = dir.path().join("metrics.csv");
    std::fs::write(
        &conf,
        format!(
            "# comment lines and blanks are ignored\n\n\
             m=3\ndim=4\nschedule=fixed:2\niters=4000\neval_every=1000\n\
             eval_samples=10\nout={}\n",
            out.display()
        ),
    )
    .unwrap();
    let output = run_binary(&[
        "run",
        "--config",
        conf.to_str().unwrap(),
        "--iters",
        "6000",
    ]);
    assert!(output.status.success(), "{}", stderr_text(&output));
    let rows = read_rows(&out);
    assert_eq!(rows.len(), 7, "six eval points under the overridden horizon");
}

#[test]
fn csv_environment_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let mut text = String::from("f1,f2,y,region\n");
    for i in 0..40 {
        let x = (i % 7) as f64 / 3.0 - 1.0;
        let group = if i % 2 == 0 { "north" } else { "south" };
        let label = if (x + 0.2 * (i % 3) as f64) > 0.0 { "yes" } else { "no" };
        text.push_str(&format!("{x},{:.2},{label},{group}\n", 0.5 - x));
    }
    std::fs::write(&data, text).unwrap();

    let conf = dir.path().join("run.conf");
    let out = dir.path().join("metrics.csv");
    std::fs::write(
        &conf,
        format!(
            "env=csv\ncsv_path={}\ncsv_features=f1,f2\ncsv_label=y\n\
             csv_groups=region\ncsv_positive=yes\nm=2\nschedule=fixed:1\n\
             iters=200\neval_every=100\nout={}\n",
            data.display(),
            out.display()
        ),
    )
    .unwrap();
    let output = run_binary(&["run", "--config", conf.to_str().unwrap()]);
    assert!(output.status.success(), "{}", stderr_text(&output));
    let rows = read_rows(&out);
    assert_eq!(rows.len(), 3);
    let risk: f64 = rows[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&risk));
}

#[test]
fn missing_csv_keys_fail_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "env=csv\n").unwrap();
    let output = run_binary(&["run", "--config", conf.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_text(&output).contains("csv_path"));
}

#[test]
fn sweep_writes_one_file_per_replicate_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("cells");
    let output = run_binary(&[
        "sweep",
        "--m",
        "3",
        "--dim",
        "2",
        "--iters",
        "300",
        "--eval-every",
        "100",
        "--eval-samples",
        "20",
        "--r-list",
        "1,2",
        "--seed-list",
        "0,1",
        "--out",
        out_dir.to_str().unwrap(),
        "--jobs",
        "1",
    ]);
    assert!(output.status.success(), "{}", stderr_text(&output));

    let mut finals = std::collections::BTreeMap::new();
    for budget in [1, 2] {
        for seed in [0, 1] {
            let path = out_dir.join(format!("unified_fixed{budget}_seed{seed}.csv"));
            let rows = read_rows(&path);
            assert_eq!(rows.len(), 4, "{}", path.display());
            let risk: f64 = rows[3].split(',').nth(2).unwrap().parse().unwrap();
            finals.entry(budget).or_insert_with(Vec::new).push(risk);
        }
    }

    let summary = read_rows(&out_dir.join("summary.csv"));
    assert_eq!(
        summary[0],
        "algo,schedule,seeds,final_max_risk_mean,final_max_risk_std"
    );
    assert_eq!(summary.len(), 3, "one row per cell");
    for (line, budget) in summary[1..].iter().zip([1, 2]) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], "unified");
        assert_eq!(fields[1], format!("fixed:{budget}"));
        assert_eq!(fields[2], "2");
        let mean: f64 = fields[3].parse().unwrap();
        let expect: f64 = finals[&budget].iter().sum::<f64>() / 2.0;
        assert!((mean - expect).abs() <= 1e-12, "summary mean disagrees");
    }
}

#[test]
fn sweep_single_cell_matches_a_plain_run() {
    let dir = tempfile::tempdir().unwrap();
    let run_out = dir.path().join("single.csv");
    let base = [
        "--m", "3", "--dim", "2", "--schedule", "fixed:2", "--iters", "400",
        "--eval-every", "200", "--eval-samples", "30", "--seed", "7",
    ];
    let mut run_args = vec!["run"];
    run_args.extend_from_slice(&base);
    run_args.extend(["--out", run_out.to_str().unwrap()]);
    assert!(run_binary(&run_args).status.success());

    let sweep_dir = dir.path().join("cells");
    let mut sweep_args = vec!["sweep"];
    sweep_args.extend_from_slice(&base);
    sweep_args.extend(["--out", sweep_dir.to_str().unwrap()]);
    assert!(run_binary(&sweep_args).status.success());

    let from_run = without_wall_time(&read_rows(&run_out));
    let from_sweep =
        without_wall_time(&read_rows(&sweep_dir.join("unified_fixed2_seed7.csv")));
    assert_eq!(from_run, from_sweep);
}

#[test]
fn sweep_continues_past_failing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("cells");
    // Budget 9 exceeds the group count, so that cell fails while the
    // budget-2 cell still completes.
    let output = run_binary(&[
        "sweep",
        "--m",
        "3",
        "--dim",
        "2",
        "--iters",
        "200",
        "--eval-every",
        "100",
        "--eval-samples",
        "10",
        "--r-list",
        "2,9",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));

    let good = read_rows(&out_dir.join("unified_fixed2_seed0.csv"));
    assert_eq!(good.len(), 3, "healthy cell still ran to completion");
    assert!(!out_dir.join("unified_fixed9_seed0.csv").exists());

    let summary = read_rows(&out_dir.join("summary.csv"));
    assert_eq!(summary.len(), 3);
    let failed: Vec<&str> = summary[2].split(',').collect();
    assert_eq!(failed[1], "fixed:9");
    assert_eq!(failed[2], "0", "no completed seeds");
    assert!(failed[3].is_empty() && failed[4].is_empty());
}
