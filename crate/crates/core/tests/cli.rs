use std::process::{Command, Output};

use treecode::bench::{read_csv, CSV_HEADER};
use treecode::solver::Mode;

fn treecode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treecode"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_one_line_failure(out: &Output) {
    assert!(!out.status.success());
    let err = stderr(out);
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic: {err:?}");
    assert!(err.starts_with("error"), "diagnostic: {err:?}");
}

#[test]
fn mesh_info_reports_counts() {
    let out = treecode(&["mesh-info", "--cells", "1", "--refine", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("leaves: 48"), "{text}");
    assert!(text.contains("depth: 2"), "{text}");
}

#[test]
fn mesh_info_saves_a_loadable_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("leaves.mesh");
    let out = treecode(&["mesh-info", "--refine", "1", "--save", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mesh = treecode::mesh::Mesh::load(&path).unwrap();
    assert_eq!(mesh.tets.len(), 48);
    assert!((mesh.total_volume() - 64.0).abs() < 1e-12);

    // and it can serve as a base mesh
    let out = treecode(&["mesh-info", "--mesh", path.to_str().unwrap(), "--refine", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8(out.stdout).unwrap().contains("leaves: 384"));
}

#[test]
fn solve_prints_csv_to_stdout() {
    let out = treecode(&["solve", "--refine", "1", "--mode", "direct"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER.join(",").as_str()));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "48");
    assert_eq!(row[1], "direct");
    assert_eq!(row[6].parse::<f64>().unwrap(), 0.0);
    assert!(lines.next().is_none());
}

#[test]
fn sweep_writes_one_row_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let out = treecode(&[
        "sweep",
        "--refine",
        "1,2",
        "--mode",
        "tc1,tc2",
        "--epsilon",
        "1e-2,1e-4",
        "--p-max",
        "8",
        "--uniform-p",
        "3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_csv(&path).unwrap();
    // per mesh: 2 modes x 2 tolerances + 1 uniform run
    assert_eq!(rows.len(), 10);
    assert_eq!(rows.iter().filter(|r| r.n == 48).count(), 5);
    assert_eq!(rows.iter().filter(|r| r.n == 384).count(), 5);
    let uniform: Vec<_> = rows.iter().filter(|r| r.uniform_p.is_some()).collect();
    assert_eq!(uniform.len(), 2);
    assert!(uniform.iter().all(|r| r.mode == Mode::Treecode1 && r.uniform_p == Some(3)));
    assert!(rows.iter().all(|r| r.e2.is_some() && r.e1.is_some()));
}

#[test]
fn problem_file_runs_without_exact_solution() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("source.txt");
    std::fs::write(&src, "# two bumps\n1.0 1 1 1\n-0.5 2 2 2\n").unwrap();
    let out = treecode(&[
        "solve",
        "--refine",
        "1",
        "--problem",
        "file",
        "--problem-file",
        src.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    // E1 and E_DT need an exact solution
    assert_eq!(row[5], "");
    assert_eq!(row[7], "");
    assert!(!row[6].is_empty());
}

#[test]
fn calibrate_reports_a_table() {
    let out = treecode(&["calibrate", "--refine", "2", "--orders", "0,2,4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("crossover order"), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with(['0', '2', '4'])).count(), 3, "{text}");
}

#[test]
fn errors_are_one_line_and_nonzero() {
    assert_one_line_failure(&treecode(&["solve", "--domain", "nonsense"]));
    assert_one_line_failure(&treecode(&["solve", "--mode", "bogus"]));
    assert_one_line_failure(&treecode(&["solve", "--epsilon", "-1"]));
    assert_one_line_failure(&treecode(&["solve", "--problem", "file"]));
    assert_one_line_failure(&treecode(&["solve", "--mesh", "/nonexistent/base.mesh"]));
    assert_one_line_failure(&treecode(&["mesh-info", "--demote-at", "1.5"]));
    assert_one_line_failure(&treecode(&["calibrate", "--orders", "5..2"]));
    assert_one_line_failure(&treecode(&["frobnicate"]));
}

#[test]
fn help_succeeds() {
    let out = treecode(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("mesh-info"));
}
