use std::process::Command;

use hpdriver::{run, Config, CSV_HEADER};

fn quiet(ranks: usize, cycles: u64) -> Config {
    Config { ranks, cycles, zero_timings: true, ..Default::default() }
}

#[test]
fn metrics_file_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        run(&Config { output: Some(out.clone()), ..quiet(3, 3) }).unwrap();
        files.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    let text = String::from_utf8(files.remove(0)).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn dof_column_does_not_depend_on_rank_count() {
    let one = run(&quiet(1, 5)).unwrap();
    let four = run(&quiet(4, 5)).unwrap();
    let n = |rows: &[hpdriver::CycleMetrics]| rows.iter().map(|r| (r.cells, r.dofs)).collect::<Vec<_>>();
    assert_eq!(n(&one.rows), n(&four.rows));
    let constraints = |rows: &[hpdriver::CycleMetrics]| {
        rows.iter().map(|r| (r.hp_constraints, r.hanging_constraints, r.identity_constraints)).collect::<Vec<_>>()
    };
    assert_eq!(constraints(&one.rows), constraints(&four.rows));
}

#[test]
fn default_run_trends() {
    let out = run(&quiet(2, 5)).unwrap();
    assert_eq!(out.rows.len(), 6);
    for w in out.rows.windows(2) {
        assert!(w[1].dofs > w[0].dofs, "N must grow: {} -> {}", w[0].dofs, w[1].dofs);
        // Cells at the reentrant corner are always refined.
        assert!(w[1].max_level > w[0].max_level);
    }
    for r in &out.rows {
        assert!(r.max_degree_jump <= 1, "cycle {}: degree jump {}", r.cycle, r.max_degree_jump);
        assert!(r.weight_imbalance >= 1.0);
        assert_eq!(r.rank_dofs.iter().sum::<u64>(), r.dofs);
    }
    assert_eq!(out.rows[0].repartition_bytes, 0);
    assert!(out.rows[1..].iter().all(|r| r.repartition_bytes > 0));
}

#[test]
fn restart_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("state");
    run(&Config { checkpoint: Some(prefix.clone()), ..quiet(2, 2) }).unwrap();
    let resumed = run(&Config { restart: Some(prefix), ..quiet(4, 4) }).unwrap();
    let straight = run(&quiet(1, 4)).unwrap();
    let tail: Vec<u64> = straight.rows[3..].iter().map(|r| r.dofs).collect();
    assert_eq!(resumed.rows.iter().map(|r| r.cycle).collect::<Vec<_>>(), vec![3, 4]);
    assert_eq!(resumed.rows.iter().map(|r| r.dofs).collect::<Vec<_>>(), tail);
}

#[test]
fn cli_fixture_run_writes_metrics_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_hpdriver"))
        .args(["--ranks", "2", "--cycles", "0", "--initial-refines", "0", "--fixture", "fig2", "--dump-mesh"])
        .arg("--output")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..5], &["0", "4", "57", "28", "29"]);
    let mesh = std::fs::read_to_string(dir.path().join("mesh_cycle0.txt")).unwrap();
    assert_eq!(mesh.lines().count(), 4);
    assert!(dir.path().join("constraints_cycle0.txt").exists());
}

#[test]
fn cli_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--degrees", "5..3"][..], &["--fixture", "fig9"], &["--ranks", "0"]] {
        let out =
            Command::new(env!("CARGO_BIN_EXE_hpdriver")).args(args).arg("--output").arg(dir.path()).output().unwrap();
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty());
    }
}
