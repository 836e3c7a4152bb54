//! `pose3d`: command-line client of the pose3d service.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric divergence.

mod args;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use args::{Cli, Command, ConfigArgs, EvalArgs, PredictArgs, SynthArgs, TrainArgs};
use pose3d::api::{EvalCall, PredictRequest, SynthRequest, TrainRequest};
use pose3d::datapipe::synth::{SynthOptions, SyntheticSceneSpec};
use pose3d::inference::render_pretty;
use pose3d::pipeline::EvalRequest;
use pose3d::weights::peek_header;
use pose3d::{Error, ErrorKind, RunConfig};
use pose3d_client::{Client, ClientError};

struct Failure {
    kind: ErrorKind,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        kind: ErrorKind::Usage,
        message: message.into(),
    }
}

type Outcome = Result<(), Failure>;

/// Paths travel to the server as absolute paths resolved against our cwd.
fn absolute(path: &Path) -> Result<PathBuf, Failure> {
    std::path::absolute(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn init_threads() -> Outcome {
    let Ok(value) = std::env::var("POSE3D_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("POSE3D_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| usage(format!("thread pool: {e}")))
}

fn load_config(common: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.dataset {
        cfg.data.dataset = Some(d.clone());
    }
    if let Some(hz) = common.target_hz {
        cfg.data.target_hz = hz;
    }
    if let Some(d) = &cfg.data.dataset {
        cfg.data.dataset = Some(absolute(d)?);
    }
    Ok(cfg)
}

async fn synth(client: &Client, args: SynthArgs) -> Outcome {
    let mut scene = match &args.scene {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<SyntheticSceneSpec>(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => SyntheticSceneSpec::default(),
    };
    scene.seed = args.seed;
    println!("seed: {}", scene.seed);
    let req = SynthRequest {
        out: absolute(&args.out)?,
        options: SynthOptions {
            clips: args.clips,
            frames: args.frames,
            val_clips: args.val_clips,
            test_clips: args.test_clips,
        },
        scene,
    };
    let resp = client.synth(&req).await?;
    for id in &resp.summary.short_clips {
        eprintln!("warning: clip {id} is shorter than one window and will yield no training windows");
    }
    println!(
        "wrote {} clips of {} frames to {}",
        resp.summary.clips,
        resp.summary.frames_per_clip,
        resp.out.display()
    );
    Ok(())
}

async fn train(client: &Client, args: TrainArgs) -> Outcome {
    let mut cfg = load_config(&args.common)?;
    let t = &mut cfg.training;
    if let Some(v) = args.seed {
        t.seed = v;
    }
    if let Some(v) = args.max_epochs {
        t.max_epochs = v;
    }
    if let Some(v) = args.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = args.momentum {
        t.momentum = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.patience {
        t.patience = v;
    }
    if let Some(v) = args.precision {
        t.precision = v.into();
    }
    if let Some(v) = args.windows_per_clip {
        cfg.data.windows_per_clip = Some(v);
    }
    if let Some(v) = args.weights {
        cfg.inference.weights = v;
    }
    if let Some(v) = args.epoch_log {
        cfg.inference.epoch_log = v;
    }
    cfg.inference.weights = absolute(&cfg.inference.weights)?;
    cfg.inference.epoch_log = absolute(&cfg.inference.epoch_log)?;
    cfg.validate()?;

    println!("seed: {}", cfg.training.seed);
    let summary = client
        .train(&TrainRequest { config: cfg }, |r| {
            println!(
                "epoch {:>4}  train {:>9.3} mm  val {:>9.3} mm  {:>6.2} s",
                r.epoch, r.train_loss_mm, r.val_mpjpe_mm, r.seconds
            );
        })
        .await?;
    println!(
        "best validation MPJPE: {:.3} mm (epoch {} of {}, validation from {})",
        summary.best_val_mpjpe_mm, summary.best_epoch, summary.epochs, summary.val_source
    );
    println!("final training MPJPE: {:.3} mm", summary.train_mpjpe_mm);
    println!("weights: {}", summary.weights.display());
    println!("epoch log: {}", summary.epoch_log.display());
    Ok(())
}

async fn eval(client: &Client, args: EvalArgs) -> Outcome {
    let mut cfg = load_config(&args.common)?;
    let weights = absolute(&args.weights)?;
    if args.common.config.is_none() {
        // no config: score the weights with the architecture they were saved with
        let bytes = std::fs::read(&weights).map_err(|e| Failure {
            kind: ErrorKind::Data,
            message: format!("reading {}: {e}", weights.display()),
        })?;
        cfg.architecture = peek_header(&bytes)?.0;
    }
    let report = absolute(args.report.as_deref().unwrap_or(&cfg.inference.report))?;
    let baseline = match args.baseline.as_deref().or(cfg.inference.baseline.as_deref()) {
        Some(b) => Some(absolute(b)?),
        None => None,
    };
    let call = EvalCall {
        config: cfg,
        request: EvalRequest {
            weights,
            split: args.split.into(),
            report,
            format: args.format.into(),
            baseline,
        },
    };
    let resp = client.eval(&call).await?;
    print!("{}", render_pretty(&resp.evaluation.table()));
    println!("overall MPJPE: {:.3} mm", resp.evaluation.overall_mm);
    if let Some(pct) = resp.evaluation.overall_improvement_pct {
        println!("overall improvement: {pct:.2}%");
    }
    println!("report: {}", resp.report.display());
    Ok(())
}

async fn predict(client: &Client, args: PredictArgs) -> Outcome {
    let req = PredictRequest {
        weights: absolute(&args.weights)?,
        clip_dir: absolute(&args.clip)?,
        target_hz: args.target_hz,
        out: absolute(&args.out)?,
    };
    let s = client.predict(&req).await?;
    println!(
        "{} frames, {} rows, MPJPE against clip joints {:.3} mm",
        s.frames, s.rows, s.mpjpe_mm
    );
    println!("poses: {}", s.out.display());
    Ok(())
}

async fn run(cli: Cli) -> Outcome {
    if let Command::Serve(args) = &cli.command {
        println!("listening on http://{}", args.addr);
        return pose3d_server::serve(args.addr)
            .await
            .map_err(|e| usage(format!("serving on {}: {e}", args.addr)));
    }
    let (client, _embedded) = match &cli.server {
        Some(url) => (Client::new(url.clone()), None),
        None => {
            let (addr, handle) = pose3d_server::spawn(SocketAddr::from(([127, 0, 0, 1], 0)))
                .await
                .map_err(|e| usage(format!("starting embedded server: {e}")))?;
            tracing::debug!(%addr, "embedded server");
            (Client::new(format!("http://{addr}")), Some(handle))
        }
    };
    match cli.command {
        Command::Synth(a) => synth(&client, a).await,
        Command::Train(a) => train(&client, a).await,
        Command::Eval(a) => eval(&client, a).await,
        Command::Predict(a) => predict(&client, a).await,
        Command::Serve(_) => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let filter = EnvFilter::try_new(&cli.log).unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();

    let result = init_threads().and_then(|()| {
        tokio::runtime::Runtime::new()
            .map_err(|e| usage(format!("runtime: {e}")))?
            .block_on(run(cli))
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.kind.exit_code() as u8)
        }
    }
}
