//! Event node series and the lag-maximised Pearson weight matrix.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridStack;
use crate::stats::pearson;
use crate::tracker::Event;

/// Reflectivity series of one grid cell over an event's window.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSeries {
    pub node_id: usize,
    pub cell: (u32, u32),
    pub latlon: (f64, f64),
    pub series: Vec<f64>,
}

/// Nodes for every cell of the event footprint whose series over
/// `[start, end]` is not entirely zero. Ordered by `(i, j)`.
pub fn extract_node_series(stack: &GridStack, event: &Event) -> Result<Vec<NodeSeries>> {
    if event.features.is_empty() {
        return Err(Error::Invalid(format!("event {} has no features", event.id)));
    }
    let (start, end) = (event.start_frame(), event.end_frame());
    if end >= stack.nt() {
        return Err(Error::Invalid(format!(
            "event {} spans frames {start}..={end} but the stack has {} frames",
            event.id,
            stack.nt()
        )));
    }
    let nodes = event
        .footprint()
        .into_iter()
        .filter_map(|(i, j)| {
            let series: Vec<f64> = (start..=end)
                .map(|t| f64::from(stack.dbz(t, i as usize, j as usize)))
                .collect();
            series.iter().any(|&v| v != 0.0).then(|| {
                let latlon = stack.geometry.position_to_latlon(f64::from(i), f64::from(j));
                (((i, j), latlon), series)
            })
        })
        .enumerate()
        .map(|(node_id, ((cell, latlon), series))| NodeSeries {
            node_id,
            cell,
            latlon,
            series,
        })
        .collect();
    Ok(nodes)
}

fn has_variance(x: &[f64]) -> bool {
    x.iter().any(|&v| v != x[0])
}

/// Maximum Pearson correlation over lags `0..=max_lag_steps` in both
/// orientations, with the lag that achieves it.
///
/// Candidates whose overlap is shorter than `min_overlap` or whose window has
/// zero variance in either series are skipped; `None` if all are skipped.
/// Ties go to the smaller lag, then to `x` leading.
pub fn lagged_pearson(
    x: &[f64],
    y: &[f64],
    max_lag_steps: usize,
    min_overlap: usize,
) -> Result<Option<(f64, usize)>> {
    if x.len() != y.len() {
        return Err(Error::Invalid(format!(
            "series length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    let mut best: Option<(f64, usize)> = None;
    let mut consider = |a: &[f64], b: &[f64], lag: usize| {
        if a.len() < min_overlap.max(2) || !has_variance(a) || !has_variance(b) {
            return;
        }
        let r = pearson(a, b).expect("windows checked for length and variance");
        if best.is_none_or(|(r_best, _)| r > r_best) {
            best = Some((r, lag));
        }
    };
    for lag in 0..=max_lag_steps.min(n.saturating_sub(1)) {
        consider(&x[lag..], &y[..n - lag], lag);
        if lag > 0 {
            consider(&y[lag..], &x[..n - lag], lag);
        }
    }
    Ok(best)
}

/// Symmetric weights and delays; `None` marks undefined pairs and the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    weights: Vec<Option<f64>>,
    delays: Vec<usize>,
}

impl WeightMatrix {
    /// Matrix with no defined entries.
    pub fn empty(n: usize) -> Self {
        WeightMatrix {
            n,
            weights: vec![None; n * n],
            delays: vec![0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        self.weights[a * self.n + b]
    }

    pub fn delay(&self, a: usize, b: usize) -> usize {
        self.delays[a * self.n + b]
    }

    /// Sets both `(a, b)` and `(b, a)`.
    pub fn set(&mut self, a: usize, b: usize, weight: f64, delay: usize) {
        assert_ne!(a, b, "diagonal is excluded");
        self.weights[a * self.n + b] = Some(weight);
        self.weights[b * self.n + a] = Some(weight);
        self.delays[a * self.n + b] = delay;
        self.delays[b * self.n + a] = delay;
    }

    /// Defined upper-triangle entries as `(a, b, weight, delay)` with `a < b`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64, usize)> + '_ {
        (0..self.n).flat_map(move |a| {
            (a + 1..self.n).filter_map(move |b| self.weight(a, b).map(|w| (a, b, w, self.delay(a, b))))
        })
    }
}

pub fn build_weight_matrix(
    nodes: &[NodeSeries],
    max_lag_steps: usize,
    min_overlap: usize,
) -> Result<WeightMatrix> {
    let n = nodes.len();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "weight matrix needs at least 2 nodes, got {n}"
        )));
    }
    let rows: Vec<Vec<Option<(f64, usize)>>> = (0..n)
        .into_par_iter()
        .map(|a| {
            (a + 1..n)
                .map(|b| lagged_pearson(&nodes[a].series, &nodes[b].series, max_lag_steps, min_overlap))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut matrix = WeightMatrix::empty(n);
    for (a, row) in rows.into_iter().enumerate() {
        for (k, entry) in row.into_iter().enumerate() {
            if let Some((r, lag)) = entry {
                matrix.set(a, a + 1 + k, r, lag);
            }
        }
    }
    Ok(matrix)
}

/// Lag steps covering `max_lag_minutes` at the given cadence.
pub fn max_lag_steps(max_lag_minutes: u32, timestep_minutes: u32) -> usize {
    (max_lag_minutes / timestep_minutes) as usize
}
