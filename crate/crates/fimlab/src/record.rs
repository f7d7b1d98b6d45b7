//! Run records on disk: a TOML manifest holding the resolved configuration
//! plus tab-separated tables, one per series.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! record loaded back compares equal to the one that was saved.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use fimlab_core::entropy::DimensionProfile;
use fimlab_core::env::PushBox;
use fimlab_core::harness::{EstimationRound, EvalPoint, LossPoint, MetricsRow, RunRecord, TraceSnapshot};

use crate::config::{parse_manifest, render_manifest};
use crate::error::{Error, Result};
use crate::heatmap::HeatmapGrid;

pub const MANIFEST: &str = "manifest.toml";

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    fs::write(path, contents).map_err(Error::io(path))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(Error::io(path))
}

/// Tab-separated table with a header row.
pub(crate) struct Table {
    text: String,
}

impl Table {
    pub(crate) fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut t = Table { text: String::new() };
        t.row(header.iter().map(|h| h.as_ref().to_string()));
        t
    }

    pub(crate) fn row<I, T>(&mut self, cells: I)
    where
        I: IntoIterator<Item = T>,
        T: std::fmt::Display,
    {
        let mut first = true;
        for c in cells {
            if !first {
                self.text.push('\t');
            }
            first = false;
            let _ = write!(self.text, "{c}");
        }
        self.text.push('\n');
    }

    pub(crate) fn finish(self) -> String {
        self.text
    }
}

/// Rows of a table file with the header removed.
struct Rows<'a> {
    path: &'a Path,
    lines: Vec<(usize, Vec<&'a str>)>,
}

impl<'a> Rows<'a> {
    fn parse(path: &'a Path, text: &'a str, header: &[&str]) -> Result<Self> {
        let mut it = text.lines().enumerate();
        let head: Vec<&str> = it.next().map(|(_, l)| l.split('\t').collect()).unwrap_or_default();
        if head.len() < header.len() || head[..header.len()] != *header {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("expected header starting with {}", header.join(" ")),
            });
        }
        let lines = it
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| (i + 1, l.split('\t').collect()))
            .collect();
        Ok(Rows { path, lines })
    }

    fn field<T: FromStr>(&self, line: usize, cells: &[&str], i: usize) -> Result<T> {
        let err = |message: String| Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message,
        };
        let raw = cells.get(i).ok_or_else(|| err(format!("missing column {}", i + 1)))?;
        raw.parse().map_err(|_| err(format!("cannot parse `{raw}` in column {}", i + 1)))
    }

    fn floats(&self, line: usize, cells: &[&str], from: usize) -> Result<Vec<f64>> {
        (from..cells.len()).map(|i| self.field(line, cells, i)).collect()
    }
}

fn load_table<T>(dir: &Path, name: &str, header: &[&str], mut f: impl FnMut(&Rows<'_>, usize, &[&str]) -> Result<T>) -> Result<Vec<T>> {
    let path = dir.join(name);
    let text = read_file(&path)?;
    let rows = Rows::parse(&path, &text, header)?;
    rows.lines.iter().map(|(line, cells)| f(&rows, *line, cells)).collect()
}

/// Writes `record` into `dir`, replacing earlier files of the same names.
pub fn save_record(record: &RunRecord, dir: &Path) -> Result<()> {
    let labels = &record.labels;
    write_file(&dir.join(MANIFEST), &render_manifest(&record.config)?)?;

    let mut t = Table::new(&["key", "value"]);
    t.row(["train_steps".to_string(), record.train_steps.to_string()]);
    t.row(["estimation_env_steps".to_string(), record.estimation_env_steps.to_string()]);
    t.row(["episodes".to_string(), record.episodes.to_string()]);
    write_file(&dir.join("summary.tsv"), &t.finish())?;

    let mut t = Table::new(&["step", "success_rate"]);
    for e in &record.evals {
        t.row([e.step.to_string(), e.success_rate.to_string()]);
    }
    write_file(&dir.join("eval.tsv"), &t.finish())?;

    let mut t = Table::new(&["step", "reward"]);
    for (i, r) in record.rewards.iter().enumerate() {
        t.row([(i + 1).to_string(), r.to_string()]);
    }
    write_file(&dir.join("rewards.tsv"), &t.finish())?;

    let mut t = Table::new(&["round", "step", "dim", "label", "scale", "raw_entropy", "entropy", "entropy_weight", "fresh_weight", "weight"]);
    for r in &record.estimations {
        for (k, label) in labels.iter().enumerate() {
            t.row([
                r.round.to_string(),
                r.step.to_string(),
                k.to_string(),
                label.clone(),
                r.profile.scale[k].to_string(),
                r.profile.raw_entropy[k].to_string(),
                r.profile.entropy[k].to_string(),
                r.profile.weight[k].to_string(),
                r.fresh[k].to_string(),
                r.weights[k].to_string(),
            ]);
        }
    }
    write_file(&dir.join("estimation.tsv"), &t.finish())?;

    let mut header = vec!["step".to_string()];
    header.extend(labels.iter().cloned());
    let mut t = Table::new(&header);
    for s in &record.traces {
        t.row(std::iter::once(s.step.to_string()).chain(s.values.iter().map(f64::to_string)));
    }
    write_file(&dir.join("traces.tsv"), &t.finish())?;

    let mut t = Table::new(&["update", "step", "loss"]);
    for p in &record.dynamics_loss {
        t.row([p.update.to_string(), p.step.to_string(), p.loss.to_string()]);
    }
    write_file(&dir.join("dynamics_loss.tsv"), &t.finish())?;

    let mut t = Table::new(&["step", "episode", "td_loss", "epsilon", "success_rate"]);
    for m in &record.metrics {
        t.row([
            m.step.to_string(),
            m.episode.to_string(),
            m.td_loss.to_string(),
            m.epsilon.to_string(),
            m.success_rate.map(|x| x.to_string()).unwrap_or_default(),
        ]);
    }
    write_file(&dir.join("metrics.tsv"), &t.finish())
}

/// Reads a record written by [`save_record`].
pub fn load_record(dir: &Path) -> Result<RunRecord> {
    let manifest_path = dir.join(MANIFEST);
    let config = parse_manifest(&read_file(&manifest_path)?, &manifest_path)?;
    let labels = PushBox::new(config.env.clone())?.dimension_labels();
    let d = labels.len();

    let summary = load_table(dir, "summary.tsv", &["key", "value"], |r, line, c| {
        Ok((c.first().copied().unwrap_or("").to_string(), r.field::<u64>(line, c, 1)?))
    })?;
    let lookup = |key: &str| -> Result<u64> {
        summary
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Config(format!("{}: summary lacks `{key}`", dir.display())))
    };

    let evals = load_table(dir, "eval.tsv", &["step", "success_rate"], |r, line, c| {
        Ok(EvalPoint {
            step: r.field(line, c, 0)?,
            success_rate: r.field(line, c, 1)?,
        })
    })?;
    let rewards = load_table(dir, "rewards.tsv", &["step", "reward"], |r, line, c| r.field(line, c, 1))?;

    let est_rows = load_table(
        dir,
        "estimation.tsv",
        &["round", "step", "dim", "label", "scale", "raw_entropy", "entropy", "entropy_weight", "fresh_weight", "weight"],
        |r, line, c| {
            let round: usize = r.field(line, c, 0)?;
            let step: u64 = r.field(line, c, 1)?;
            let v: Vec<f64> = (4..10).map(|i| r.field(line, c, i)).collect::<Result<_>>()?;
            Ok((round, step, v))
        },
    )?;
    let mut estimations = Vec::new();
    for chunk in est_rows.chunks(d) {
        if chunk.len() != d {
            return Err(Error::Config(format!("{}: truncated estimation table", dir.display())));
        }
        let col = |i: usize| chunk.iter().map(|row| row.2[i]).collect::<Vec<f64>>();
        estimations.push(EstimationRound {
            round: chunk[0].0,
            step: chunk[0].1,
            profile: DimensionProfile {
                scale: col(0),
                raw_entropy: col(1),
                entropy: col(2),
                weight: col(3),
            },
            fresh: col(4),
            weights: col(5),
        });
    }

    let traces = load_table(dir, "traces.tsv", &["step"], |r, line, c| {
        Ok(TraceSnapshot {
            step: r.field(line, c, 0)?,
            values: r.floats(line, c, 1)?,
        })
    })?;
    let dynamics_loss = load_table(dir, "dynamics_loss.tsv", &["update", "step", "loss"], |r, line, c| {
        Ok(LossPoint {
            update: r.field(line, c, 0)?,
            step: r.field(line, c, 1)?,
            loss: r.field(line, c, 2)?,
        })
    })?;
    let metrics = load_table(
        dir,
        "metrics.tsv",
        &["step", "episode", "td_loss", "epsilon", "success_rate"],
        |r, line, c| {
            Ok(MetricsRow {
                step: r.field(line, c, 0)?,
                episode: r.field(line, c, 1)?,
                td_loss: r.field(line, c, 2)?,
                epsilon: r.field(line, c, 3)?,
                success_rate: match c.get(4) {
                    None | Some(&"") => None,
                    Some(_) => Some(r.field(line, c, 4)?),
                },
            })
        },
    )?;

    Ok(RunRecord {
        labels,
        evals,
        rewards,
        estimations,
        traces,
        dynamics_loss,
        metrics,
        train_steps: lookup("train_steps")?,
        estimation_env_steps: lookup("estimation_env_steps")?,
        episodes: lookup("episodes")?,
        config,
    })
}

/// Height rows of width counts, tab-separated.
pub fn render_heatmap(grid: &HeatmapGrid, entity: usize) -> String {
    let mut t = String::new();
    for row in grid.counts[entity].chunks(grid.width) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        t.push_str(&cells.join("\t"));
        t.push('\n');
    }
    t
}

pub fn heatmap_file(label: &str) -> String {
    format!("heatmap_{label}.tsv")
}

pub fn save_heatmaps(grid: &HeatmapGrid, dir: &Path) -> Result<()> {
    for (e, label) in grid.labels.iter().enumerate() {
        write_file(&dir.join(heatmap_file(label)), &render_heatmap(grid, e))?;
    }
    Ok(())
}

/// Reads heatmaps saved for a run with grid configuration `config`.
pub fn load_heatmaps(dir: &Path, config: &fimlab_core::env::GridConfig) -> Result<HeatmapGrid> {
    let mut grid = HeatmapGrid::new(config);
    for e in 0..grid.labels.len() {
        let path = dir.join(heatmap_file(&grid.labels[e]));
        let text = read_file(&path)?;
        let rows: Vec<&str> = text.lines().collect();
        if rows.len() != grid.height {
            return Err(Error::Parse {
                path,
                line: rows.len(),
                message: format!("expected {} rows", grid.height),
            });
        }
        for (y, row) in rows.iter().enumerate() {
            let cells: Vec<&str> = row.split('\t').collect();
            if cells.len() != grid.width {
                return Err(Error::Parse {
                    path,
                    line: y + 1,
                    message: format!("expected {} columns", grid.width),
                });
            }
            for (x, c) in cells.iter().enumerate() {
                grid.counts[e][y * grid.width + x] = c.parse().map_err(|_| Error::Parse {
                    path: path.clone(),
                    line: y + 1,
                    message: format!("cannot parse count `{c}`"),
                })?;
            }
        }
    }
    Ok(grid)
}
