use std::path::PathBuf;

use clap::Args;

use longtail_core::autodiff::write_checkpoint;
use longtail_core::trainer::{merge_params, train, training_log_csv};
use longtail_core::{Error, Result};

use crate::config::RunConfig;
use crate::manifest::{write_atomic, RunManifest};

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Interaction TSV (user, item, timestamp).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint, log, and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config's training mode (tp or joint).
    #[arg(long)]
    pub mode: Option<String>,
    /// Override the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(mode) = &args.mode {
        cfg.trainer.mode = mode.parse()?;
    }
    if let Some(seed) = args.seed {
        cfg.trainer.seed = seed;
    }
    cfg.trainer.validate()?;
    let data_bytes = std::fs::read(&args.data)
        .map_err(|e| Error::Config(format!("cannot read dataset {}: {e}", args.data.display())))?;
    let mut manifest = RunManifest::begin(cfg.clone(), &data_bytes);

    let bundle = super::load_bundle(&args.data, &cfg, &args.out)?;
    let outcome = train(&bundle, &cfg.trainer)?;

    let ckpt = args.out.join("checkpoint.ltap");
    write_checkpoint(&ckpt, &merge_params(&outcome.enc_params, &outcome.disc_params))?;
    manifest.record_output("checkpoint", &ckpt);

    let log_path = args.out.join("train_log.csv");
    write_atomic(&log_path, training_log_csv(&outcome.log).as_bytes())?;
    manifest.record_output("train_log", &log_path);

    let manifest_path = args.out.join("manifest.txt");
    manifest.write(&manifest_path)?;

    if let Some(last) = outcome.log.last() {
        println!(
            "trained {} iterations (mode {}): predictor loss {:.4}, discriminator accuracy {:.3}",
            outcome.log.len(),
            cfg.trainer.mode,
            last.pred_loss,
            last.disc_accuracy
        );
    }
    println!("checkpoint: {}", ckpt.display());
    println!("training log: {}", log_path.display());
    println!("manifest: {}", manifest_path.display());
    Ok(())
}
