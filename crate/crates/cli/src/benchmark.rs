//! Per-family size and speed accounting.

use std::fmt::Write as _;
use std::time::Instant;

use deepseg::augment::AugmentSpec;
use deepseg::data::{phantom_records, PhantomSpec};
use deepseg::grid::Image;
use deepseg::nn::{assemble_model, count_layers, count_parameters, encode_checkpoint, EncoderFamily, ModelConfig};
use deepseg::train::{image_batch, train_loop, TrainConfig};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::{Outcome, BENCHMARK_FILE};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub family: EncoderFamily,
    pub checkpoint_bytes: usize,
    pub epoch_seconds: f64,
    pub predict_seconds: f64,
    pub parameters: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub hardware: Vec<(String, String)>,
    pub rows: Vec<(EncoderFamily, Result<BenchRow, String>)>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.hardware {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out.push_str("family,status,checkpoint_bytes,epoch_seconds,predict_seconds,parameters,layers,note\n");
        for (family, row) in &self.rows {
            match row {
                Ok(r) => {
                    let _ = writeln!(
                        out,
                        "{family},ok,{},{:.6},{:.6},{},{},",
                        r.checkpoint_bytes, r.epoch_seconds, r.predict_seconds, r.parameters, r.layers
                    );
                }
                Err(msg) => {
                    let note = msg.replace([',', '\n'], ";");
                    let _ = writeln!(out, "{family},failed,NA,NA,NA,NA,NA,{note}");
                }
            }
        }
        out
    }
}

fn cpu_model() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into())
}

fn hardware(cfg: &RunConfig) -> Vec<(String, String)> {
    let [c, h, w] = cfg.model.input_shape;
    vec![
        ("cpu".into(), cpu_model()),
        (
            "logical_cpus".into(),
            std::thread::available_parallelism().map_or(0, |n| n.get()).to_string(),
        ),
        ("worker_threads".into(), rayon::current_num_threads().to_string()),
        ("os".into(), format!("{} {}", std::env::consts::OS, std::env::consts::ARCH)),
        (
            "model".into(),
            format!("depth {} base {} input {c}x{h}x{w}", cfg.model.depth, cfg.model.base_filters),
        ),
        (
            "schedule".into(),
            format!(
                "{} warm-up + {} timed epochs on {} slices; {} timed predictions",
                cfg.benchmark.warmup_epochs, cfg.benchmark.epochs, cfg.benchmark.slices, cfg.benchmark.predictions
            ),
        ),
    ]
}

fn bench_family(cfg: &RunConfig, family: EncoderFamily) -> deepseg::Result<BenchRow> {
    let model_cfg = ModelConfig {
        encoder: family,
        ..cfg.model.clone()
    };
    let model = assemble_model(&model_cfg)?;
    let parameters = count_parameters(&model);
    let layers = count_layers(&model);
    let checkpoint_bytes = encode_checkpoint(&model)?.len();

    let [_, h, w] = model_cfg.input_shape;
    let spec = PhantomSpec {
        extent: h.max(w).max(8),
        seed: cfg.train.seed,
        ..PhantomSpec::default()
    };
    let b = &cfg.benchmark;
    let records = phantom_records(&spec, b.slices.max(1), 1, (h, w))?;
    let train_cfg = TrainConfig {
        epochs: b.warmup_epochs + b.epochs,
        ..cfg.train.clone()
    };
    let (model, history) = train_loop(model, &records, &[], &train_cfg, &cfg.loss, &AugmentSpec::disabled())?;
    let timed = &history.epochs[b.warmup_epochs.min(history.len())..];
    let epoch_seconds = if timed.is_empty() {
        0.0
    } else {
        timed.iter().map(|r| r.seconds).sum::<f64>() / timed.len() as f64
    };

    let mut predict_total = 0.0;
    for i in 0..b.predictions {
        let img: &Image = records[i % records.len()].image();
        let x = image_batch(&[img])?;
        let started = Instant::now();
        model.predict(&x)?;
        predict_total += started.elapsed().as_secs_f64();
    }
    let predict_seconds = if b.predictions == 0 {
        0.0
    } else {
        predict_total / b.predictions as f64
    };
    Ok(BenchRow {
        family,
        checkpoint_bytes,
        epoch_seconds,
        predict_seconds,
        parameters,
        layers,
    })
}

pub fn run(cfg: &RunConfig) -> CliResult<Outcome> {
    let families: Vec<EncoderFamily> = if cfg.benchmark.encoders.is_empty() {
        EncoderFamily::ALL.to_vec()
    } else {
        cfg.benchmark.encoders.clone()
    };
    let mut outcome = Outcome::default();
    let mut rows = Vec::with_capacity(families.len());
    for family in families {
        eprintln!("benchmarking {family}");
        let row = bench_family(cfg, family).map_err(|e| e.to_string());
        if let Err(msg) = &row {
            outcome.warn(format!("{family} failed: {msg}"));
        }
        rows.push((family, row));
    }
    let report = BenchReport {
        hardware: hardware(cfg),
        rows,
    };
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", cfg.output_dir.display())))?;
    let path = cfg.output_dir.join(BENCHMARK_FILE);
    std::fs::write(&path, report.to_csv()).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(outcome)
}
