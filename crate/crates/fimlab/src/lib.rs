//! Configuration, run records, visitation heatmaps and report export for
//! the `fimlab-core` training library, plus the `fimlab` command-line tool.

pub mod config;
pub mod error;
pub mod heatmap;
pub mod record;
pub mod report;

use std::path::{Path, PathBuf};

use fimlab_core::harness::{run_training_observed, EvalPoint, RunConfig, RunObserver, RunRecord};
use fimlab_core::env::PushBoxState;

pub use config::{load_config, ExperimentSpec, Overrides};
pub use error::{Error, Result};
pub use heatmap::HeatmapGrid;
pub use record::{load_record, save_record};
pub use report::export_reports;

/// Sub-directory of a run directory holding the saved record.
pub const RECORD_DIR: &str = "record";
/// Sub-directory of a run directory holding exported reports.
pub const REPORTS_DIR: &str = "reports";

struct Recorder<F> {
    grid: HeatmapGrid,
    on_eval: F,
}

impl<F: FnMut(&EvalPoint)> RunObserver for Recorder<F> {
    fn on_step(&mut self, _step: u64, state: &PushBoxState) {
        // Training states always lie on the grid the recorder was built for.
        let _ = self.grid.record_visitation(state);
    }

    fn on_eval(&mut self, point: &EvalPoint) {
        (self.on_eval)(point)
    }
}

/// Trains one run, then saves its record and heatmaps under
/// `dir/record` and its reports under `dir/reports`.
pub fn run_and_save(config: &RunConfig, dir: &Path, on_eval: impl FnMut(&EvalPoint)) -> Result<(RunRecord, Vec<PathBuf>)> {
    let mut obs = Recorder {
        grid: HeatmapGrid::new(&config.env),
        on_eval,
    };
    let record = run_training_observed(config, &mut obs)?;
    let rec_dir = dir.join(RECORD_DIR);
    save_record(&record, &rec_dir)?;
    record::save_heatmaps(&obs.grid, &rec_dir)?;
    let written = export_reports(&record, Some(&obs.grid), &dir.join(REPORTS_DIR))?;
    Ok((record, written))
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    record::write_file(path, text)
}

/// Re-exports the reports of a saved run into `out`.
pub fn replay(run_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let rec_dir = run_dir.join(RECORD_DIR);
    let record = load_record(&rec_dir)?;
    let grid = record::load_heatmaps(&rec_dir, &record.config.env)?;
    export_reports(&record, Some(&grid), out)
}
