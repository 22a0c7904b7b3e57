use std::process::{Command, Output};

fn trimsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trimsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field(text: &str, key: &str) -> String {
    let prefix = format!("{key}: ");
    text.lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .to_string()
}

#[test]
fn sweep_csv_has_header_and_45_rows() {
    let o = trimsim(&["sweep", "--format", "csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "dataflow,K,I,H_O,W_O,MA,OV,latency,throughput,TPE,registers,norm_energy"
    );
    assert_eq!(lines.len(), 46);
}

#[test]
fn sweep_is_byte_identical_across_runs() {
    let a = trimsim(&["sweep", "--format", "json", "--no-sim"]);
    let b = trimsim(&["sweep", "--format", "json", "--no-sim"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn sweep_writes_to_file() {
    let path = std::env::temp_dir().join(format!("trimsim-sweep-{}.csv", std::process::id()));
    let o = trimsim(&[
        "sweep",
        "--no-sim",
        "--k",
        "3",
        "--ifmap",
        "16",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn trace_shows_cycle_four() {
    let o = trimsim(&["trace", "--dataflow", "trim", "--k", "3", "--ifmap", "5"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for line in [
        "# cycle 4",
        "t=3 PE(0,0) src=D in=6 w=1 psum_in=0 psum_out=6",
        "t=3 PE(1,2) src=Ext in=10",
        "t=3 PE(2,2) src=Ext in=14",
        "t=3 OUT[0][0]=411",
        "ext_fetches=29",
    ] {
        assert!(text.contains(line), "missing `{line}`");
    }
}

#[test]
fn registers_cross_at_inversion_point() {
    let trim = stdout(&trimsim(&[
        "model",
        "--dataflow",
        "trim",
        "--k",
        "5",
        "--ifmap",
        "75",
    ]));
    let ws = stdout(&trimsim(&[
        "model",
        "--dataflow",
        "ws",
        "--k",
        "5",
        "--ifmap",
        "75",
    ]));
    let below_trim = stdout(&trimsim(&[
        "model",
        "--dataflow",
        "trim",
        "--k",
        "5",
        "--ifmap",
        "74",
    ]));
    let (t, w, b): (u64, u64, u64) = (
        field(&trim, "registers").parse().unwrap(),
        field(&ws, "registers").parse().unwrap(),
        field(&below_trim, "registers").parse().unwrap(),
    );
    assert_eq!(w, 375);
    assert_eq!(t, 377);
    assert!(b < w && t >= w);
    let k3 = |df| {
        field(
            &stdout(&trimsim(&[
                "model",
                "--dataflow",
                df,
                "--k",
                "3",
                "--ifmap",
                "17",
            ])),
            "registers",
        )
    };
    assert_eq!(k3("trim"), k3("ws"));
}

#[test]
fn sim_prints_counters() {
    let o = trimsim(&[
        "sim",
        "--dataflow",
        "trim",
        "--k",
        "3",
        "--ifmap",
        "5",
        "--data",
        "raster",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("ext_fetches=29\n") && text.contains("register_count=39\n"));
}

#[test]
fn alpha_override_changes_rs_energy() {
    let o = stdout(&trimsim(&[
        "model",
        "--dataflow",
        "rs",
        "--k",
        "3",
        "--ifmap",
        "16",
        "--alpha",
        "2.5",
    ]));
    assert_eq!(field(&o, "norm_energy"), "3.5");
}

#[test]
fn verify_passes_and_fault_fails() {
    let ok = trimsim(&[
        "verify", "--k", "3", "--ifmap", "16,32", "--cases", "20", "--format", "json",
    ]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("\"passed\": true"));
    let bad = trimsim(&[
        "verify",
        "--k",
        "3",
        "--ifmap",
        "16",
        "--cases",
        "5",
        "--inject-fault",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAIL worked_example"));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["model", "--dataflow", "tpu", "--k", "3", "--ifmap", "5"][..],
        &["model", "--dataflow", "trim", "--k", "3", "--ifmap", "3"],
        &["sweep", "--format", "text"],
        &["bogus"],
    ] {
        let o = trimsim(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}
