use std::path::PathBuf;
use std::process::{Command, Output};

fn loco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loco"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = loco(args);
    assert!(
        out.status.success(),
        "loco {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    assert!(!csv.contains('\r'));
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn col(rows: &[Vec<String>], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("loco-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn error_analysis_default_curve() {
    let out = ok(&["error-analysis"]);
    assert!(out.starts_with("eps,mean_rel_err,std_rel_err\n"));
    let r = rows(&out);
    assert_eq!(r.len(), 20);
    let mean = col(&r, 1);
    assert!(mean.windows(2).all(|w| w[1] >= w[0]));
    assert!(mean[0] < 1e-10);
}

#[test]
fn error_analysis_is_reproducible() {
    let args = ["error-analysis", "--trials", "1", "--seed", "5"];
    assert_eq!(ok(&args), ok(&args));
    let one = ok(&["error-analysis", "--grid", "1e-3:1e-3:1"]);
    assert_eq!(rows(&one).len(), 1);
}

#[test]
fn deviation_rows_satisfy_bound() {
    let out = ok(&["deviation", "--trials", "3"]);
    assert!(out.starts_with("n,d,r,gamma,deviation,bound,satisfied\n"));
    let r = rows(&out);
    assert_eq!(r.len(), 4 * 3 * 3);
    for row in &r {
        assert_eq!(row[6], "true");
        let (dev, bound): (f64, f64) = (row[4].parse().unwrap(), row[5].parse().unwrap());
        assert!(dev <= bound + 1e-12);
        if row[0] == "1" {
            assert!(dev <= 1e-12);
        }
    }
    // γ tracks the requested size.
    let gammas = col(&r, 3);
    assert!((gammas[0] - 0.01).abs() < 1e-3);
}

#[test]
fn deviation_rejects_large_d() {
    let out = loco(&["deviation", "--d", "512"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: dimension_too_large:"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn finetune_and_temperature_sweep() {
    let ckpt = scratch("demo.loco");
    let trace = ok(&["finetune-demo", "--save", ckpt.to_str().unwrap()]);
    assert!(trace.starts_with("step,loss\n"));
    let loss = col(&rows(&trace), 1);
    assert_eq!(loss.len(), 2001);
    assert!(loss[0] >= 1000.0 * loss[2000]);
    let adapter = loco_core::checkpoint::load_file(&ckpt).unwrap();
    assert_eq!((adapter.out_dim(), adapter.dim(), adapter.chain().len()), (16, 32, 2));

    let sweep = rows(&ok(&["temperature-sweep"]));
    assert_eq!(sweep.len(), 9);
    let sweep_loss = col(&sweep, 1);
    // t = 0 is the untouched pretrained model, which is also step 0 of training.
    assert_eq!(sweep_loss[0], loss[0]);
    assert_eq!(sweep_loss[4], loss[2000]);
    assert!(sweep_loss.iter().all(|&l| l >= sweep_loss[4]));

    let exact = rows(&ok(&["temperature-sweep", "--mode", "exact"]));
    assert!(col(&exact, 2).iter().all(|&v| v <= 1e-9));
}

#[test]
fn finetune_flat_without_learning_rate() {
    let trace = ok(&["finetune-demo", "--lr", "0", "--steps", "20"]);
    let loss = col(&rows(&trace), 1);
    assert!(loss.iter().all(|&l| l == loss[0]));
    let again = ok(&["finetune-demo", "--lr", "0", "--steps", "20"]);
    assert_eq!(trace, again);
}

#[test]
fn writes_to_file() {
    let path = scratch("sweep.csv");
    let stdout = ok(&["error-analysis", "--trials", "2", "--out", path.to_str().unwrap()]);
    assert!(stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, ok(&["error-analysis", "--trials", "2"]));
}

#[test]
fn bench_small_grid() {
    let out = ok(&["bench", "--d", "32", "--r", "4", "--n", "1,2", "--batch", "4"]);
    assert!(out.starts_with("method,d,r_or_b,n,batch,wall_ns_median,wall_ns_min,wall_ns_max,peak_bytes\n"));
    let r = rows(&out);
    assert_eq!(r.len(), 6);
    for row in &r {
        let med: u64 = row[5].parse().unwrap();
        assert!(med > 0);
    }
}

#[test]
fn bench_unsupported_block() {
    let out = loco(&["bench", "--methods", "oft_block", "--d", "30", "--r", "4"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error: config_unsupported:"));
}

#[test]
fn thread_variable() {
    let bad = Command::new(env!("CARGO_BIN_EXE_loco"))
        .args(["error-analysis", "--trials", "1"])
        .env("LOCO_THREADS", "many")
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8(bad.stderr).unwrap().starts_with("error: config:"));
    let two = Command::new(env!("CARGO_BIN_EXE_loco"))
        .args(["error-analysis", "--trials", "3"])
        .env("LOCO_THREADS", "2")
        .output()
        .unwrap();
    assert!(two.status.success());
    assert_eq!(String::from_utf8(two.stdout).unwrap(), ok(&["error-analysis", "--trials", "3"]));
}
