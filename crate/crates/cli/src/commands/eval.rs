use std::path::PathBuf;

use clap::Args;

use longtail_core::autodiff::read_checkpoint;
use longtail_core::encoders::{Encoder, EncoderKind};
use longtail_core::evalkit::evaluate;
use longtail_core::trainer::split_params;
use longtail_core::{Error, Result};

use crate::config::RunConfig;
use crate::manifest::{write_atomic, RunManifest};

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to evaluate; defaults to <out>/checkpoint.ltap.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let data_bytes = std::fs::read(&args.data)
        .map_err(|e| Error::Config(format!("cannot read dataset {}: {e}", args.data.display())))?;
    let mut manifest = RunManifest::begin(cfg.clone(), &data_bytes);

    let ckpt_path = args.checkpoint.clone().unwrap_or_else(|| args.out.join("checkpoint.ltap"));
    let all_params = read_checkpoint(&ckpt_path)?;
    let (enc_params, _disc_params) = split_params(&all_params);
    let kind = EncoderKind::infer(&enc_params)?;
    if kind != cfg.trainer.encoder {
        return Err(Error::Incompatible(format!(
            "checkpoint holds a {kind} encoder but the config says {}",
            cfg.trainer.encoder
        )));
    }
    let emb = enc_params.get("enc.emb")?;
    let (rows, dim) = (emb.shape()[0], emb.shape()[1]);
    if dim != cfg.trainer.dim {
        return Err(Error::Incompatible(format!(
            "checkpoint dimension {dim} but the config says {}",
            cfg.trainer.dim
        )));
    }

    let bundle = super::load_bundle(&args.data, &cfg, &args.out)?;
    let vocab = bundle.dataset.vocab();
    if rows != vocab as usize + 1 {
        return Err(Error::Incompatible(format!(
            "checkpoint built for a vocabulary of {} items, dataset has {vocab}",
            rows.saturating_sub(1)
        )));
    }

    let encoder = Encoder::new(kind, dim, cfg.trainer.window);
    let report = evaluate(
        &encoder,
        &enc_params,
        &bundle,
        cfg.trainer.window,
        &cfg.cutoffs,
        cfg.repetitions,
        cfg.trainer.head_frac,
    )?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let report_path = args.out.join("report.csv");
    write_atomic(&report_path, report.csv().as_bytes())?;
    manifest.record_output("checkpoint", &ckpt_path);
    manifest.record_output("report", &report_path);
    let manifest_path = args.out.join("manifest.txt");
    manifest.write(&manifest_path)?;

    print!("{}", report.table());
    println!("report: {}", report_path.display());
    Ok(())
}
