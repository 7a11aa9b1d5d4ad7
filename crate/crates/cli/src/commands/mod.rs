use std::path::Path;

use longtail_core::dataio::cache::load_or_preprocess;
use longtail_core::dataio::DatasetBundle;
use longtail_core::Result;

use crate::config::RunConfig;

pub mod ablate;
pub mod eval;
pub mod gen_synth;
pub mod train;
pub mod verify_cmd;

/// Load the dataset (through the preprocessing cache under `out`) and
/// assemble the bundle with the run's split/label/window settings.
pub(crate) fn load_bundle(data: &Path, cfg: &RunConfig, out: &Path) -> Result<DatasetBundle> {
    let dataset = load_or_preprocess(data, cfg.min_item, cfg.min_user, Some(&out.join("cache")))?;
    DatasetBundle::build(
        dataset,
        cfg.trainer.window,
        cfg.trainer.train_frac,
        cfg.trainer.head_frac,
        cfg.trainer.seed,
    )
}
