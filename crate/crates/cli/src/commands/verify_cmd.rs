use clap::Args;

use longtail_core::trainer::oracle::Mutation;
use longtail_core::verify::run_all;
use longtail_core::{Error, Result};

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Random model instances for the gradient check sweep.
    #[arg(long, default_value_t = 102)]
    pub instances: usize,
}

pub fn run(args: &VerifyArgs) -> Result<()> {
    let start = std::time::Instant::now();
    let reports = run_all(args.instances, Mutation::None);
    for r in &reports {
        println!("{r}");
    }
    println!("verification finished in {:.1}s", start.elapsed().as_secs_f64());
    if reports.iter().any(|r| !r.passed) {
        return Err(Error::Incompatible("one or more verification suites failed".into()));
    }
    Ok(())
}
