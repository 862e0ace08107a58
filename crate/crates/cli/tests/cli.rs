use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpi-pam4")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn analytic_prints_closed_form() {
    let o = run(&["analytic", "--snr-db", "20", "--mpi-db", "none"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "snr_db,mpi_db,er_db,v_b,b_sq_mean,residual_variance,ber_analytic");
    let ber: f64 = lines.next().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((ber / 2.904081161641531e-6 - 1.0).abs() < 1e-9);
}

#[test]
fn analytic_grid_and_json() {
    let o = run(&["analytic", "--snr-db", "12,14,16", "--mpi-db=-30,-24", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 6);
}

#[test]
fn literal_variant_is_worse() {
    let get = |variant: &str| -> f64 {
        let o = run(&["analytic", "--snr-db", "16", "--mpi-db=-24", "--eq6-variant", variant]);
        stdout(&o).lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap()
    };
    assert!(get("literal") > get("mpi-only"));
}

#[test]
fn invalid_config_exits_1() {
    assert_eq!(run(&["simulate", "--bits", "7"]).status.code(), Some(1));
    assert_eq!(run(&["analytic", "--er-db=-1"]).status.code(), Some(1));
    assert_eq!(run(&["analytic", "--b2-mode", "empirical"]).status.code(), Some(1));
    assert_eq!(run(&["sweep", "--jobs", "0"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--snr-db", "12,13"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"snr": 3}"#).unwrap();
    assert_eq!(run(&["analytic", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(run(&["analytic", "--config", "/nonexistent/run.json"]).status.code(), Some(1));
}

#[test]
fn simulate_with_dump() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("y.bin");
    let out = dir.path().join("row.csv");
    let o = run(&[
        "simulate",
        "--snr-db",
        "14",
        "--mpi-db=-24",
        "--bits",
        "20000",
        "--dump",
        dump.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::metadata(&dump).unwrap().len(), 10_000 * 8);
    assert!(Path::new(&format!("{}.json", dump.display())).exists());
    let rows = mpi_pam4::sweep::read_table(&out).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].is_ok());
    assert_eq!(rows[0].mpi_db, -24.0);
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"n_bits": 20000, "seed": 3, "sweep": {"snr_db_list": [12, 13], "mpi_db_list": [-27], "linewidth_list": [1e7]}}"#,
    )
    .unwrap();
    let out = dir.path().join("t.csv");
    let o = run(&["sweep", "--config", cfg.to_str().unwrap(), "--snr-db", "15,16,17", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = mpi_pam4::sweep::read_table(&out).unwrap();
    assert_eq!(rows.iter().map(|r| r.snr_db).collect::<Vec<_>>(), vec![15.0, 16.0, 17.0]);
    assert!(rows.iter().all(|r| r.mpi_db == -27.0 && r.linewidth_hz == 1e7 && r.n_bits == 20_000));
}

#[test]
fn sweep_is_repeatable_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for jobs in ["1", "3"] {
        let out = dir.path().join(format!("s{jobs}.csv"));
        let o = run(&[
            "sweep",
            "--snr-db",
            "12,16",
            "--mpi-db=none,-21",
            "--linewidth-hz",
            "1e6,1e7",
            "--bits",
            "40000",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(String::from_utf8_lossy(&outputs[0]).lines().count(), 9);
}

#[test]
fn compare_gates_on_agreement() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("t.csv");
    let o = run(&[
        "sweep",
        "--snr-db",
        "14,15",
        "--mpi-db",
        "none",
        "--linewidth-hz",
        "1e6",
        "--out",
        table.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));

    let report = dir.path().join("cmp.csv");
    let good = run(&["compare", "--in", table.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert_eq!(good.status.code(), Some(0), "{}", String::from_utf8_lossy(&good.stderr));
    assert!(String::from_utf8_lossy(&good.stderr).contains("PASS"));
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 3);

    let bad = run(&["compare", "--in", table.to_str().unwrap(), "--eq6-variant", "literal"]);
    // Without MPI the two readings differ only by the doubled noise term.
    assert_eq!(bad.status.code(), Some(3));

    let empty = dir.path().join("empty.csv");
    mpi_pam4::sweep::write_csv(&[], std::fs::File::create(&empty).unwrap()).unwrap();
    assert_eq!(run(&["compare", "--in", empty.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["compare", "--in", "/nonexistent.csv"]).status.code(), Some(1));
}

#[test]
fn dsp_demo_writes_level_stats() {
    let o = run(&["dsp-demo", "--bits", "200000"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().next().unwrap(), "level,stage,count,mean,variance");
    assert_eq!(text.lines().count(), 13);
    assert!(String::from_utf8_lossy(&o.stderr).contains("modified bias"));
}
