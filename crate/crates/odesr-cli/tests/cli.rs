//! End-to-end contract tests for the command-line interface, driving the
//! compiled binary.

use std::path::Path;
use std::process::{Command, Output};

fn odesr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odesr")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A fast experiment config over two simulated instances; success of the
/// runs is irrelevant to these tests, only the persisted artifacts are.
fn tiny_experiment_config(output_dir: &Path) -> String {
    format!(
        "instances = ChemicalReaction,Glider\n\
         configurations = I_opt+D_opt,I\n\
         runs_per_cell = 3\n\
         base_seed = 100\n\
         output_dir = {}\n\
         parallelism = 1\n\
         deterministic = true\n\
         population_size = 16\n\
         max_integration_steps = 500\n\
         [group1]\n\
         max_generations = 2\n\
         max_evaluated_solutions = 200\n\
         [group2]\n\
         max_generations = 2\n\
         max_evaluated_solutions = 200\n",
        output_dir.display()
    )
}

#[test]
fn generate_glider_emits_100_rows_of_3_columns() {
    let out = odesr(&["generate", "Glider"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let data_rows: Vec<&str> =
        text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).collect();
    assert_eq!(data_rows.len(), 100);
    for row in data_rows {
        assert_eq!(row.split_whitespace().count(), 3, "t, v, theta");
    }
    assert!(text.contains("# columns: t v theta"));
}

#[test]
fn generate_writes_files_and_validates_names() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chem.txt");
    let out = odesr(&["generate", "ChemicalReaction", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 100);

    let out = odesr(&["generate", "NoSuchSystem"]);
    assert_eq!(out.status.code(), Some(1), "unknown instance is a config error");
}

#[test]
fn run_prints_finite_snmse_and_model() {
    let out = odesr(&[
        "run",
        "--instance",
        "ChemicalReaction",
        "--config",
        "I_opt+D_opt",
        "--seed",
        "1",
        "--population-size",
        "16",
        "--max-generations",
        "1",
        "--max-evaluations",
        "100",
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let snmse_line = text.lines().find(|l| l.starts_with("snmse:")).expect("snmse line");
    let value: f64 = snmse_line.trim_start_matches("snmse:").trim().parse().unwrap();
    assert!(value.is_finite());
    // The model prints one equation per state variable plus theta.
    let eq_lines = text.lines().filter(|l| l.contains("/dt =")).count();
    assert_eq!(eq_lines, 3);
    assert!(text.lines().any(|l| l.starts_with("theta:")));
}

#[test]
fn run_on_missing_data_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = odesr(&[
        "run",
        "--instance",
        "PendulumReal",
        "--config",
        "I",
        "--seed",
        "1",
        "--data-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_configuration_exits_1() {
    let out = odesr(&["run", "--instance", "Glider", "--config", "Z_opt", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Z_opt"));
}

#[test]
fn experiment_grid_is_complete_idempotent_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("results");
    let config_path = dir.path().join("exp.conf");
    std::fs::write(&config_path, tiny_experiment_config(&out_dir)).unwrap();

    let out = odesr(&["experiment", "--config", config_path.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // 2 instances x 2 configurations x 3 seeds.
    let csv_path = out_dir.join("results.csv");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(rows.len(), 12, "csv:\n{csv}");
    for row in &rows {
        assert_eq!(row.split(',').count(), 10);
        let model_file = row.split(',').next_back().unwrap();
        assert!(out_dir.join(model_file).exists(), "missing model file {model_file}");
    }
    assert!(out_dir.join("metadata.txt").exists());

    // Re-running changes nothing: all cells are already present.
    let before = csv.clone();
    let out = odesr(&["experiment", "--config", config_path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("(12 already present)"));
    assert_eq!(std::fs::read_to_string(&csv_path).unwrap(), before);

    // The report verifies every cell and its Total row sums the columns.
    let out = odesr(&["report", "--in", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("cells: 12, verified: 12"), "report:\n{text}");
    let table: Vec<&str> = text.lines().take_while(|l| !l.is_empty()).collect();
    let header: Vec<&str> = table[0].split_whitespace().collect();
    assert_eq!(header, vec!["Instance", "I", "I_opt+D_opt"]);
    let total_line = table.iter().find(|l| l.starts_with("Total")).expect("total row");
    let totals: Vec<usize> =
        total_line.split_whitespace().skip(1).map(|v| v.parse().unwrap()).collect();
    let mut sums = vec![0usize; 2];
    for line in table.iter().filter(|l| !l.starts_with("Instance") && !l.starts_with("Total")) {
        for (k, v) in line.split_whitespace().skip(1).enumerate() {
            sums[k] += v.parse::<usize>().unwrap();
        }
    }
    assert_eq!(totals, sums, "Total row must equal the column sums");
}

#[test]
fn deterministic_mode_reproduces_identical_csv_content() {
    let make = |tag: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out_dir = dir.path().join(format!("results-{tag}"));
        let config_path = dir.path().join("exp.conf");
        let config = format!(
            "instances = Glider\n\
             configurations = D\n\
             runs_per_cell = 2\n\
             base_seed = 5\n\
             output_dir = {}\n\
             deterministic = true\n\
             population_size = 12\n\
             [group1]\n\
             max_generations = 2\n\
             max_evaluated_solutions = 150\n",
            out_dir.display()
        );
        std::fs::write(&config_path, config).unwrap();
        let out = odesr(&["experiment", "--config", config_path.to_str().unwrap()]);
        assert!(out.status.success());
        std::fs::read_to_string(out_dir.join("results.csv")).unwrap()
    };
    assert_eq!(make("a"), make("b"));
}

#[test]
fn report_rejects_tampered_success_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("results");
    let config_path = dir.path().join("exp.conf");
    let config = format!(
        "instances = ChemicalReaction\n\
         configurations = I\n\
         runs_per_cell = 1\n\
         base_seed = 0\n\
         output_dir = {}\n\
         deterministic = true\n\
         population_size = 12\n\
         [group1]\n\
         max_generations = 1\n\
         max_evaluated_solutions = 60\n",
        out_dir.display()
    );
    std::fs::write(&config_path, config).unwrap();
    assert!(odesr(&["experiment", "--config", config_path.to_str().unwrap()]).status.success());

    // Flip the success flag in the CSV; the report must notice.
    let csv_path = out_dir.join("results.csv");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let flipped = if csv.contains(",true,") {
        csv.replace(",true,", ",false,")
    } else {
        csv.replace(",false,", ",true,")
    };
    assert_ne!(csv, flipped);
    std::fs::write(&csv_path, flipped).unwrap();
    let out = odesr(&["report", "--in", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MISMATCH"));
}
