//! Plot-ready exports derived from a run record.

use std::path::{Path, PathBuf};

use fimlab_core::harness::RunRecord;

use crate::error::Result;
use crate::heatmap::HeatmapGrid;
use crate::record::{heatmap_file, render_heatmap, write_file, Table};

/// Writes every report into `dir` and returns the written paths in order.
///
/// * `heatmap_<entity>.tsv`: visit counts, one row per grid row.
/// * `profile.tsv`: per-dimension scale, entropies and weight of the first estimation.
/// * `entropy.tsv`: raw entropy of every dimension at each estimation round.
/// * `weights.tsv`: smoothed weights in force after each estimation round.
/// * `success.tsv`: greedy success rate at each evaluation point.
/// * `traces.tsv`: eligibility trace snapshots.
pub fn export_reports(record: &RunRecord, grid: Option<&HeatmapGrid>, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        write_file(&path, &text)?;
        written.push(path);
        Ok(())
    };
    let labels = &record.labels;

    if let Some(grid) = grid {
        for (e, label) in grid.labels.iter().enumerate() {
            put(heatmap_file(label), render_heatmap(grid, e))?;
        }
    }

    let mut t = Table::new(&["dim", "label", "scale", "raw_entropy", "entropy", "weight"]);
    if let Some(first) = record.estimations.first() {
        let p = &first.profile;
        for (k, label) in labels.iter().enumerate() {
            t.row([
                k.to_string(),
                label.clone(),
                p.scale[k].to_string(),
                p.raw_entropy[k].to_string(),
                p.entropy[k].to_string(),
                p.weight[k].to_string(),
            ]);
        }
    }
    put("profile.tsv".into(), t.finish())?;

    let mut header = vec!["round".to_string(), "step".to_string()];
    header.extend(labels.iter().cloned());
    let mut entropy = Table::new(&header);
    let mut weights = Table::new(&header);
    for r in &record.estimations {
        let lead = [r.round.to_string(), r.step.to_string()];
        entropy.row(lead.iter().cloned().chain(r.profile.raw_entropy.iter().map(f64::to_string)));
        weights.row(lead.iter().cloned().chain(r.weights.iter().map(f64::to_string)));
    }
    put("entropy.tsv".into(), entropy.finish())?;
    put("weights.tsv".into(), weights.finish())?;

    let mut t = Table::new(&["step", "success_rate"]);
    for e in &record.evals {
        t.row([e.step.to_string(), e.success_rate.to_string()]);
    }
    put("success.tsv".into(), t.finish())?;

    let mut header = vec!["step".to_string()];
    header.extend(labels.iter().cloned());
    let mut t = Table::new(&header);
    for s in &record.traces {
        t.row(std::iter::once(s.step.to_string()).chain(s.values.iter().map(f64::to_string)));
    }
    put("traces.tsv".into(), t.finish())?;
    Ok(written)
}
