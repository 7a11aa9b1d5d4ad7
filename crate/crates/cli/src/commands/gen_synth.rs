use std::path::PathBuf;

use clap::Args;

use longtail_core::dataio::synth::{generate, SynthConfig};
use longtail_core::dataio::{parse_interactions, preprocess};
use longtail_core::Result;

use crate::manifest::write_atomic;

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Output TSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub users: usize,
    #[arg(long, default_value_t = 8)]
    pub clusters: usize,
    #[arg(long, default_value_t = 50)]
    pub items_per_cluster: usize,
    /// Pareto tail exponent for sequence lengths.
    #[arg(long, default_value_t = 1.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 10)]
    pub min_len: usize,
    #[arg(long, default_value_t = 400)]
    pub max_len: usize,
    /// Rank ceiling for low-activity users' within-cluster draws.
    #[arg(long, default_value_t = 12)]
    pub casual_depth: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

pub fn run(args: &GenSynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        users: args.users,
        clusters: args.clusters,
        items_per_cluster: args.items_per_cluster,
        gamma: args.gamma,
        min_len: args.min_len,
        max_len: args.max_len,
        casual_depth: args.casual_depth,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let text = generate(&cfg)?;
    write_atomic(&args.out, text.as_bytes())?;
    // Summarize what a consumer will actually see after thresholds.
    let ds = preprocess(&parse_interactions(&text)?, 1, 1)?;
    let interactions: usize = ds.sequences.iter().map(|s| s.len()).sum();
    println!(
        "wrote {}: {} users, {} items, {} interactions",
        args.out.display(),
        ds.sequences.len(),
        ds.vocab(),
        interactions
    );
    Ok(())
}
