use std::process::{Command, Output};

fn natgrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_natgrad")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn help_lists_subcommands() {
    let out = natgrad(&["--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for sub in ["train", "grid-search", "batch-sweep", "bench-scaling", "verify"] {
        assert!(text.contains(sub), "missing {sub}");
    }
}

#[test]
fn train_writes_header_and_one_row_per_step() {
    let out = natgrad(&[
        "train",
        "--synthetic",
        "linreg",
        "--samples",
        "64",
        "--batch-size",
        "16",
        "--epochs",
        "2",
        "--method",
        "sgd",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,method,epoch,step,lr,batch_size,loss,log_loss,step_time_ns,optimizer_bytes,status"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    let fields: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(fields[1], "sgd");
    // floats use 16 significant decimals in scientific form
    assert!(fields[6].contains('e') && fields[6].split('e').next().unwrap().len() == 18);
    assert_eq!(fields[8], "0");
    assert_eq!(fields[10], "ok");
}

#[test]
fn train_reads_a_csv_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let mut text = String::from("a,b,label\n");
    for i in 0..40 {
        let x = i as f64 / 10.0;
        text += &format!("{x},{},{}\n", 1.0 - x, if x > 2.0 { "hi" } else { "lo" });
    }
    std::fs::write(&data, text).unwrap();
    let log = dir.path().join("log.csv");
    let out = natgrad(&[
        "train",
        "--dataset",
        data.to_str().unwrap(),
        "--target",
        "label",
        "--task",
        "classification",
        "--batch-size",
        "8",
        "--epochs",
        "1",
        "--out",
        log.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(log).unwrap().lines().count(), 6);
}

#[test]
fn verify_passes_and_writes_checks() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("verify.csv");
    let out = natgrad(&["verify", "--out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("check_name,metric,value,tolerance,status\n"));
    assert!(text.lines().skip(1).all(|l| l.ends_with(",pass")));
}

#[test]
fn bad_input_exits_with_usage_error() {
    assert_eq!(natgrad(&["train"]).status.code(), Some(2));
    assert_eq!(
        natgrad(&["train", "--synthetic", "linreg", "--method", "adam"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        natgrad(&["train", "--dataset", "/nonexistent.csv", "--target", "y"])
            .status
            .code(),
        Some(2)
    );
    let out = natgrad(&["train", "--synthetic", "linreg", "--method", "tengrad", "--beta", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn bench_scaling_marks_exact_ngd_over_cap() {
    let out = natgrad(&[
        "bench-scaling",
        "--depths",
        "1,3",
        "--width",
        "6",
        "--steps",
        "1",
        "--warmup",
        "0",
        "--dense-cap",
        "100",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let row = text.lines().find(|l| l.starts_with("exact-ngd,3,")).unwrap();
    assert!(row.ends_with(",infeasible"), "{row}");
}

#[test]
fn summaries_stay_off_the_csv_stream() {
    let data = [
        "--synthetic",
        "linreg",
        "--samples",
        "64",
        "--epochs",
        "1",
        "--batch-size",
        "16",
    ];
    for sub in [
        &["grid-search", "--alphas", "0.01,0.1"][..],
        &["batch-sweep", "--sizes", "8,16"][..],
    ] {
        let out = natgrad(&[sub, &data[..]].concat());
        assert!(out.status.success());
        let text = stdout(&out);
        let mut lines = text.lines();
        let width = lines.next().unwrap().split(',').count();
        assert!(lines.all(|l| l.split(',').count() == width), "{sub:?}");
        assert!(!out.stderr.is_empty());
    }
}
