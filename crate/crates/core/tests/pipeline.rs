//! End-to-end flows across modules: train, sweep, merge, save, reload.

use loco_core::adapter::{forward, merge, pretrained_forward};
use loco_core::bench::{run_grid, write_csv, BenchConfig, BenchMethod};
use loco_core::checkpoint;
use loco_core::recovery::{linear_grid, rotation_recovery_demo, temperature_sweep, RecoveryConfig};
use loco_core::{ChainMode, TemperatureParam};

fn small() -> RecoveryConfig {
    RecoveryConfig {
        k: 8,
        d: 12,
        r: 2,
        n: 2,
        steps: 300,
        batch: 48,
        ..RecoveryConfig::default()
    }
}

#[test]
fn train_merge_and_reload() {
    let run = rotation_recovery_demo(&small()).unwrap();
    assert!(run.final_loss() < 0.05 * run.initial_loss());

    let mut a = run.adapter.clone();
    a.set_mode(ChainMode::Exact);
    let merged = merge(&a).unwrap();
    let direct = forward(&a, &run.xs).unwrap();
    let folded = pretrained_forward(&merged, &run.xs).unwrap();
    assert!(direct.distance(&folded) <= 1e-10 * direct.frobenius_norm());

    let dir = std::env::temp_dir().join(format!("loco-pipeline-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("trained.loco");
    checkpoint::save_file(&run.adapter, &path).unwrap();
    let back = checkpoint::load_file(&path).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(back, run.adapter);
    assert_eq!(forward(&back, &run.xs).unwrap(), forward(&run.adapter, &run.xs).unwrap());
}

#[test]
fn temperature_interpolates() {
    let run = rotation_recovery_demo(&small()).unwrap();
    let ts = linear_grid(0.0, 2.0, 41).unwrap();
    let pts = temperature_sweep(&run.adapter, &run.xs, &run.ys, &ts, ChainMode::FirstOrder).unwrap();
    assert_eq!(pts[0].loss, run.pretrained_loss);
    // Loss falls towards t = 1 and rises after it.
    let one = pts.iter().position(|p| p.t == 1.0).unwrap();
    assert!(pts[..=one].windows(2).all(|w| w[1].loss <= w[0].loss));
    assert!(pts[one..].windows(2).all(|w| w[1].loss >= w[0].loss));
    let exact = temperature_sweep(&run.adapter, &run.xs, &run.ys, &ts, ChainMode::Exact).unwrap();
    assert!(exact.iter().all(|p| p.norm_dev <= 1e-9));

    let mut half = run.adapter.clone();
    half.set_temperature(TemperatureParam::new(0.5).unwrap());
    assert_eq!(half.w0(), run.adapter.w0());
}

#[test]
fn bench_grid_to_csv() {
    let cfg = BenchConfig {
        batch: 4,
        ..BenchConfig::default()
    };
    let recs = run_grid(&BenchMethod::ALL, &[32], &[4], &[2], &cfg).unwrap();
    let mut buf = Vec::new();
    write_csv(&recs, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(!text.contains('\r'));
    assert!(lines[1].starts_with("loco_woodbury,32,4,2,4,"));
    assert!(lines[4].starts_with("householder_seq,32,4,1,4,"));
}
