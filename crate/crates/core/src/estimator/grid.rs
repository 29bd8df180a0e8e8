use std::collections::BTreeMap;

use super::config::EstimatorConfig;
use super::train::train;
use super::EstimatorModel;
use crate::error::{Error, Result};
use crate::windowing::Dataset;

#[derive(Debug, Clone)]
pub struct GridOptions {
    pub max_cells: usize,
    /// Replaces `max_epochs` in every cell, for quicker sweeps.
    pub max_epochs: Option<usize>,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            max_cells: 64,
            max_epochs: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridCell {
    pub index: usize,
    pub overrides: Vec<(String, String)>,
    pub parameter_count: usize,
    /// Best validation loss and epochs run, or why the cell failed.
    pub outcome: std::result::Result<(f64, usize), String>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best_index: usize,
    pub best_config: EstimatorConfig,
    pub best_model: EstimatorModel,
    pub cells: Vec<GridCell>,
}

/// Cartesian product of the grid in key order, last key varying fastest.
fn cells(grid: &BTreeMap<String, Vec<String>>) -> Vec<Vec<(String, String)>> {
    let mut out: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in grid {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut cell = prefix.clone();
                    cell.push((key.clone(), v.clone()));
                    cell
                })
            })
            .collect();
    }
    out
}

fn run_cell(
    index: usize,
    overrides: &[(String, String)],
    dataset: &Dataset,
    base: &EstimatorConfig,
    opts: &GridOptions,
) -> (GridCell, Option<(EstimatorConfig, EstimatorModel)>) {
    let mut cfg = base.clone();
    let mut applied = Ok(());
    for (k, v) in overrides {
        applied = applied.and_then(|_| cfg.set(k, v));
    }
    cfg.seed = base.seed.wrapping_add(index as u64);
    if let Some(e) = opts.max_epochs {
        cfg.max_epochs = e;
    }
    let trained = applied.and_then(|_| cfg.validate()).and_then(|_| train(dataset, &cfg));
    let parameter_count = if cfg.validate().is_ok() {
        cfg.parameter_count()
    } else {
        0
    };
    let mut cell = GridCell {
        index,
        overrides: overrides.to_vec(),
        parameter_count,
        outcome: Err(String::new()),
    };
    match trained {
        Ok((model, log)) => {
            cell.outcome = Ok((model.meta.best_validation_loss, log.epochs.len()));
            (cell, Some((cfg, model)))
        }
        Err(e) => {
            cell.outcome = Err(e.to_string());
            (cell, None)
        }
    }
}

/// Train one model per grid cell and keep the lowest validation loss; ties
/// go to fewer parameters, then to the earlier cell. Cell `i` trains with
/// seed `base.seed + i`.
pub fn grid_search(
    dataset: &Dataset,
    base: &EstimatorConfig,
    grid: &BTreeMap<String, Vec<String>>,
    opts: &GridOptions,
) -> Result<GridResult> {
    if grid.is_empty() || grid.values().any(Vec::is_empty) {
        return Err(Error::config("grid must name at least one value per key"));
    }
    let all = cells(grid);
    if all.len() > opts.max_cells {
        return Err(Error::config(format!(
            "grid has {} cells, more than the cap of {}",
            all.len(),
            opts.max_cells
        )));
    }

    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        all.par_iter()
            .enumerate()
            .map(|(i, o)| run_cell(i, o, dataset, base, opts))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = all
        .iter()
        .enumerate()
        .map(|(i, o)| run_cell(i, o, dataset, base, opts))
        .collect();

    let mut best: Option<(f64, usize, usize)> = None;
    for (cell, _) in &results {
        if let Ok((loss, _)) = cell.outcome {
            if !loss.is_finite() {
                continue;
            }
            let key = (loss, cell.parameter_count, cell.index);
            let better = match best {
                None => true,
                Some(b) => key.0 < b.0 || (key.0 == b.0 && (key.1, key.2) < (b.1, b.2)),
            };
            if better {
                best = Some(key);
            }
        }
    }
    let (_, _, best_index) = best.ok_or(Error::GridExhausted)?;
    let mut cells_out = Vec::with_capacity(results.len());
    let mut winner = None;
    for (cell, trained) in results {
        if cell.index == best_index {
            winner = trained;
        }
        cells_out.push(cell);
    }
    let (best_config, best_model) = winner.expect("winning cell has a model");
    Ok(GridResult {
        best_index,
        best_config,
        best_model,
        cells: cells_out,
    })
}
