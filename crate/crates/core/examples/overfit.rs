//! Overfits a reduced network on a small synthetic set and prints progress.
//!
//! `cargo run --release -p pose3d-core --example overfit -- [lr] [batch] [epochs]`

use std::time::Instant;

use pose3d::datapipe::synth::{generate_synthetic, SynthOptions, SyntheticSceneSpec};
use pose3d::pipeline::run_training;
use pose3d::{ArchitectureConfig, RunConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let data = tmp.path().join("data");
    let spec = SyntheticSceneSpec { seed: 7, ..Default::default() };
    let opts = SynthOptions { clips: 8, frames: 40, val_clips: 0, test_clips: 0 };
    generate_synthetic(&spec, &opts, &data).expect("synthetic data");

    let mut cfg = RunConfig::default();
    cfg.architecture = ArchitectureConfig::reduced([8; 5], 64, 17);
    cfg.training.learning_rate = arg(1, 1.5e-3);
    cfg.training.batch_size = arg(2, 4);
    cfg.training.max_epochs = arg(3, 500);
    cfg.training.patience = cfg.training.max_epochs;
    cfg.data.dataset = Some(data);
    cfg.data.windows_per_clip = Some(2);
    cfg.inference.weights = tmp.path().join("weights.p3dw");
    cfg.inference.epoch_log = tmp.path().join("epochs.csv");

    let start = Instant::now();
    let result = run_training(&cfg, |r| {
        if r.epoch % 25 == 0 {
            println!("epoch {:>4}  loss {:8.3} mm  val {:8.3} mm", r.epoch, r.train_loss_mm, r.val_mpjpe_mm);
        }
    });
    match result {
        Ok(s) => println!(
            "best {:.2} mm at epoch {} of {} ({:.0} s)",
            s.best_val_mpjpe_mm,
            s.best_epoch,
            s.epochs,
            start.elapsed().as_secs_f64()
        ),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
