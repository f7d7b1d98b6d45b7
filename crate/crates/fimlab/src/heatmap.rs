//! Per-entity visitation counters over the grid.

use fimlab_core::env::{Cell, GridConfig, PushBoxState};

use crate::error::{Error, Result};

/// One `width x height` counter grid per agent and per box.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeatmapGrid {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<String>,
    /// Row-major counts, one vector per entity.
    pub counts: Vec<Vec<u64>>,
}

impl HeatmapGrid {
    pub fn new(config: &GridConfig) -> Self {
        let labels: Vec<String> = (0..config.n_agents)
            .map(|i| format!("agent{i}"))
            .chain((0..config.n_boxes).map(|i| format!("box{i}")))
            .collect();
        let cells = config.width as usize * config.height as usize;
        HeatmapGrid {
            width: config.width as usize,
            height: config.height as usize,
            counts: vec![vec![0; cells]; labels.len()],
            labels,
        }
    }

    pub fn get(&self, entity: usize, x: usize, y: usize) -> u64 {
        self.counts[entity][y * self.width + x]
    }

    pub fn total(&self, entity: usize) -> u64 {
        self.counts[entity].iter().sum()
    }

    /// Adds one visit to the current cell of every agent and box.
    pub fn record_visitation(&mut self, state: &PushBoxState) -> Result<()> {
        let cells: Vec<Cell> = state.agents.iter().chain(&state.boxes).copied().collect();
        if cells.len() != self.counts.len() {
            return Err(Error::Config(format!(
                "state has {} entities, heatmap tracks {}",
                cells.len(),
                self.counts.len()
            )));
        }
        for c in &cells {
            if c.x < 0 || c.y < 0 || c.x as usize >= self.width || c.y as usize >= self.height {
                return Err(Error::Config(format!("cell ({}, {}) outside the heatmap", c.x, c.y)));
            }
        }
        for (grid, c) in self.counts.iter_mut().zip(cells) {
            grid[c.y as usize * self.width + c.x as usize] += 1;
        }
        Ok(())
    }
}
