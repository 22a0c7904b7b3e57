use serde_json::Value;
use trim_core::dse::{self, render_rows, sweep, OutputFormat, SweepSpec, CSV_HEADER};
use trim_core::DataflowKind;

fn model_only() -> SweepSpec {
    SweepSpec {
        simulate: false,
        ..SweepSpec::default()
    }
}

#[test]
fn csv_and_json_carry_identical_values() {
    let rows = sweep(&model_only()).unwrap();
    let csv_text = render_rows(&rows, OutputFormat::Csv);
    let json: Vec<Value> = serde_json::from_str(&render_rows(&rows, OutputFormat::Json)).unwrap();
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        CSV_HEADER
    );
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), json.len());
    for (rec, obj) in records.iter().zip(&json) {
        let obj = obj.as_object().unwrap();
        assert_eq!(
            obj.keys().map(String::as_str).collect::<Vec<_>>(),
            CSV_HEADER
        );
        for (name, text) in CSV_HEADER.iter().zip(rec.iter()) {
            let value = match &obj[*name] {
                Value::String(s) => s.clone(),
                v => v.to_string(),
            };
            assert_eq!(value, text, "column {name}");
        }
    }
}

#[test]
fn output_is_deterministic() {
    let spec = SweepSpec::default();
    let a = sweep(&spec).unwrap();
    let b = sweep(&spec).unwrap();
    for format in [OutputFormat::Csv, OutputFormat::Json] {
        assert_eq!(render_rows(&a, format), render_rows(&b, format));
    }
    let text = render_rows(&a, OutputFormat::Csv);
    assert!(text.ends_with('\n') && !text.contains('\r'));
}

#[test]
fn input_order_does_not_matter() {
    let shuffled = SweepSpec {
        kernel_sizes: vec![7, 3, 5],
        ifmap_sizes: vec![256, 16, 64, 32, 128],
        dataflows: vec![DataflowKind::Trim, DataflowKind::Ws, DataflowKind::Rs],
        ..model_only()
    };
    assert_eq!(sweep(&shuffled).unwrap(), sweep(&model_only()).unwrap());
}

#[test]
fn model_only_sweeps_reach_large_ifmaps() {
    let spec = SweepSpec {
        ifmap_sizes: vec![1024],
        ..model_only()
    };
    let rows = sweep(&spec).unwrap();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| !r.simulated));
}

#[test]
fn known_rows() {
    let rows = sweep(&model_only()).unwrap();
    let csv = render_rows(&rows, OutputFormat::Csv);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 46);
    assert_eq!(
        lines[1],
        "WS,3,16,14,14,1764,0,204,17.2941,1.92157,63,6.89063"
    );
    assert_eq!(
        lines[3],
        "TrIM,3,16,14,14,308,52,199,17.7286,1.96985,61,1.20313"
    );
}

#[test]
fn comparisons_cover_every_point() {
    let cmp = dse::compare(&SweepSpec::default()).unwrap();
    assert_eq!(cmp.len(), 15);
    let csv = dse::comparisons_to_csv(&cmp);
    assert!(csv.starts_with("K,I,MA_WS/MA_TrIM,"));
    assert!(csv.lines().nth(1).unwrap().starts_with("3,16,5.72727,"));
}
