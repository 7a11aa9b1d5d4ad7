use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use longtail_core::encoders::Encoder;
use longtail_core::evalkit::{evaluate, Cohort};
use longtail_core::trainer::{train, TrainerConfig};
use longtail_core::{Error, Result};

use crate::config::RunConfig;
use crate::manifest::{write_atomic, RunManifest};

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Which parameter to sweep: k or lambda.
    #[arg(long)]
    pub sweep: String,
    /// Override the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

const K_GRID: [usize; 5] = [1, 2, 3, 4, 5];
const LAMBDA_GRID: [f64; 5] = [0.0, 0.01, 0.1, 1.0, 10.0];

/// Discriminator accuracy near the end of training: mean over the
/// final tenth of iterations, so one noisy batch cannot swing it.
fn late_disc_accuracy(log: &[longtail_core::trainer::IterationLog]) -> f64 {
    let tail = (log.len() / 10).max(1);
    let slice = &log[log.len() - tail..];
    slice.iter().map(|r| r.disc_accuracy).sum::<f64>() / slice.len() as f64
}

pub fn run(args: &AblateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.trainer.seed = seed;
    }
    let grid: Vec<(String, TrainerConfig)> = match args.sweep.as_str() {
        "k" => K_GRID
            .iter()
            .map(|&k| (k.to_string(), TrainerConfig { k, ..cfg.trainer.clone() }))
            .collect(),
        "lambda" => LAMBDA_GRID
            .iter()
            .map(|&lambda| (lambda.to_string(), TrainerConfig { lambda, ..cfg.trainer.clone() }))
            .collect(),
        other => {
            return Err(Error::Config(format!(
                "unknown sweep {other:?}; valid sweeps: k, lambda"
            )));
        }
    };

    let data_bytes = std::fs::read(&args.data)
        .map_err(|e| Error::Config(format!("cannot read dataset {}: {e}", args.data.display())))?;
    let mut manifest = RunManifest::begin(cfg.clone(), &data_bytes);
    // One bundle for every grid point: the sweep varies the algorithm,
    // never the data.
    let bundle = super::load_bundle(&args.data, &cfg, &args.out)?;
    let cutoff = if cfg.cutoffs.contains(&10) { 10 } else { cfg.cutoffs[0] };

    let mut csv = String::from(
        "sweep,value,cutoff,all_hr,all_ndcg,head_hr,head_ndcg,tail_hr,tail_ndcg,disc_accuracy\n",
    );
    for (label, point) in &grid {
        let outcome = train(&bundle, point)?;
        let encoder = Encoder::new(point.encoder, point.dim, point.window);
        let report = evaluate(
            &encoder,
            &outcome.enc_params,
            &bundle,
            point.window,
            &[cutoff],
            cfg.repetitions,
            point.head_frac,
        )?;
        let cell = |cohort: Cohort, metric: &str| -> f64 {
            report.get(cohort, cutoff, metric).map(|r| r.mean).unwrap_or(f64::NAN)
        };
        writeln!(
            csv,
            "{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            args.sweep,
            label,
            cutoff,
            cell(Cohort::All, "hr"),
            cell(Cohort::All, "ndcg"),
            cell(Cohort::Head, "hr"),
            cell(Cohort::Head, "ndcg"),
            cell(Cohort::Tail, "hr"),
            cell(Cohort::Tail, "ndcg"),
            late_disc_accuracy(&outcome.log),
        )
        .expect("string write");
        println!("{} = {label}: tail hr@{cutoff} {:.4}", args.sweep, cell(Cohort::Tail, "hr"));
    }

    let sweep_path = args.out.join("sweep.csv");
    write_atomic(&sweep_path, csv.as_bytes())?;
    manifest.record_output("sweep", &sweep_path);
    manifest.write(&args.out.join("manifest.txt"))?;
    println!("sweep report: {}", sweep_path.display());
    Ok(())
}
