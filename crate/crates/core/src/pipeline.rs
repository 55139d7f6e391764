//! Pipeline configuration and the file-to-file stages behind the CLI.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{load_grid_stack, write_grid_stack, BoundingBox, GridStack};
use crate::meteonet::{
    compare_metric_groups, correlate_metrics, group_events, write_boxplot_csv, write_graph_dot, write_graph_json,
    write_mw_tests_csv, GroupSpec, MetricsTable, GROUP_TEST_METRICS,
};
use crate::network::{network_metrics, select_global_threshold_with, threshold_graph, GtScan, NetMetrics};
use crate::similarity::{build_weight_matrix, extract_node_series, max_lag_steps, WeightMatrix};
use crate::synth::Scenario;
use crate::tracker::{filter_events, load_events, meteo_metrics, segment_stack, track_events, write_events, Event};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Geographic region of interest, without the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl FromStr for Region {
    type Err = String;

    /// `lat_min,lat_max,lon_min,lon_max`
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("bad bbox {s:?}: {e}"))?;
        match parts[..] {
            [lat_min, lat_max, lon_min, lon_max] => Ok(Region {
                lat_min,
                lat_max,
                lon_min,
                lon_max,
            }),
            _ => Err(format!("bbox needs 4 comma-separated numbers, got {s:?}")),
        }
    }
}

/// Score used to pick the event graph's global threshold, as written in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GtScanMode(pub GtScan);

impl TryFrom<String> for GtScanMode {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse::<GtScan>().map(GtScanMode).map_err(|e| e.to_string())
    }
}

impl From<GtScanMode> for String {
    fn from(m: GtScanMode) -> String {
        m.0.to_string()
    }
}

impl fmt::Display for GtScanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dbz_min: f64,
    pub min_area_km2: f64,
    pub overlap_frac: f64,
    pub min_duration_min: u64,
    pub max_duration_min: u64,
    pub buffer_km: f64,
    pub max_lag_min: u32,
    pub min_overlap_points: usize,
    pub alpha: f64,
    pub r_cut: f64,
    pub d1_max_min: f64,
    pub d2_min_min: f64,
    pub bbox: Option<Region>,
    pub gt_scan: GtScanMode,
    /// Worker threads; not part of the echoed config since results do not depend on it.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dbz_min: 20.0,
            min_area_km2: 9.0,
            overlap_frac: 0.10,
            min_duration_min: 100,
            max_duration_min: 1200,
            buffer_km: 10.0,
            max_lag_min: 30,
            min_overlap_points: 8,
            alpha: 0.05,
            r_cut: 0.4,
            d1_max_min: 120.0,
            d2_min_min: 300.0,
            bbox: None,
            gt_scan: GtScanMode(GtScan::Exact),
            threads: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if !(self.dbz_min.is_finite()) {
            return bad(format!("dbz_min must be finite, got {}", self.dbz_min));
        }
        if !(self.min_area_km2 >= 0.0 && self.min_area_km2.is_finite()) {
            return bad(format!("min_area_km2 must be non-negative, got {}", self.min_area_km2));
        }
        if !(self.overlap_frac > 0.0 && self.overlap_frac <= 1.0) {
            return bad(format!("overlap_frac must lie in (0, 1], got {}", self.overlap_frac));
        }
        if self.min_duration_min > self.max_duration_min {
            return bad(format!(
                "min_duration_min ({}) exceeds max_duration_min ({})",
                self.min_duration_min, self.max_duration_min
            ));
        }
        if !(self.buffer_km >= 0.0 && self.buffer_km.is_finite()) {
            return bad(format!("buffer_km must be non-negative, got {}", self.buffer_km));
        }
        if self.min_overlap_points < 3 {
            return bad(format!("min_overlap_points must be at least 3, got {}", self.min_overlap_points));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.r_cut) {
            return bad(format!("r_cut must lie in [0, 1), got {}", self.r_cut));
        }
        if !(self.d1_max_min < self.d2_min_min) {
            return bad(format!(
                "d1_max_min ({}) must be below d2_min_min ({})",
                self.d1_max_min, self.d2_min_min
            ));
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        if let Some(b) = self.bounding_box() {
            b.validate()?;
        }
        Ok(())
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        self.bbox.map(|r| BoundingBox {
            lat_min: r.lat_min,
            lat_max: r.lat_max,
            lon_min: r.lon_min,
            lon_max: r.lon_max,
            buffer_km: self.buffer_km,
        })
    }

    pub fn group_spec(&self) -> GroupSpec {
        GroupSpec {
            d1_max_minutes: self.d1_max_min,
            d2_min_minutes: self.d2_min_min,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Comment lines identifying the tool version and the effective config.
    pub fn header_lines(&self) -> Vec<String> {
        vec![
            format!("stormnet {VERSION}"),
            format!("config {}", serde_json::to_string(self).expect("config serializes")),
        ]
    }
}

/// Which duration group `correlate` runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupSelect {
    #[default]
    All,
    D1,
    D2,
}

impl FromStr for GroupSelect {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(GroupSelect::All),
            "d1" => Ok(GroupSelect::D1),
            "d2" => Ok(GroupSelect::D2),
            _ => Err(format!("unknown group {s:?} (expected all, d1 or d2)")),
        }
    }
}

pub fn run_synth(scenario_path: &Path, out_manifest: &Path) -> Result<GridStack> {
    let stack = Scenario::load(scenario_path)?.generate()?;
    write_grid_stack(&stack, out_manifest)?;
    Ok(stack)
}

/// Segments, tracks and filters the stack; returns the kept events.
pub fn track_stack(stack: &GridStack, config: &PipelineConfig) -> Result<Vec<Event>> {
    let features = segment_stack(stack, config.dbz_min, config.min_area_km2)?;
    let events = track_events(&features, config.overlap_frac);
    let tracked = events.len();
    let kept = filter_events(
        events,
        &stack.geometry,
        config.bounding_box().as_ref(),
        config.min_duration_min,
        config.max_duration_min,
    );
    log::info!("tracked {tracked} events, kept {}", kept.len());
    Ok(kept)
}

pub fn run_track(stack_path: &Path, config: &PipelineConfig, out: &Path) -> Result<usize> {
    config.validate()?;
    let stack = load_grid_stack(stack_path)?;
    let events = track_stack(&stack, config)?;
    write_events(out, &events, &stack, &config.header_lines())?;
    Ok(events.len())
}

/// Weight matrix, thresholded graph and metrics for one event.
pub fn event_network(stack: &GridStack, event: &Event, config: &PipelineConfig) -> Result<NetMetrics> {
    let timestep = stack.geometry.timestep_minutes;
    let nodes = extract_node_series(stack, event)?;
    let weights = if nodes.len() >= 2 {
        build_weight_matrix(
            &nodes,
            max_lag_steps(config.max_lag_min, timestep),
            config.min_overlap_points,
        )?
    } else {
        WeightMatrix::empty(nodes.len())
    };
    let mut graph = if weights.entries().next().is_none() {
        log::warn!("event {} has no defined node similarities; graph left edgeless", event.id);
        threshold_graph(&weights, 1.0)
    } else {
        let (gt, _) = select_global_threshold_with(&weights, config.gt_scan.0)?;
        threshold_graph(&weights, gt)
    };
    graph.event_id = event.id;
    graph.positions = nodes.iter().map(|n| n.latlon).collect();
    Ok(network_metrics(&graph, timestep))
}

/// One row per event, sorted by event id.
pub fn build_metrics_table(stack: &GridStack, events: &[Event], config: &PipelineConfig) -> Result<MetricsTable> {
    let mut rows = events
        .par_iter()
        .map(|event| Ok((meteo_metrics(event, &stack.geometry)?, event_network(stack, event, config)?)))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|(m, _)| m.event_id);
    Ok(MetricsTable::new(rows))
}

pub fn run_netbuild(stack_path: &Path, events_path: &Path, config: &PipelineConfig, out: &Path) -> Result<usize> {
    config.validate()?;
    let stack = load_grid_stack(stack_path)?;
    let events = load_events(events_path, &stack)?;
    let table = build_metrics_table(&stack, &events, config)?;
    table.write_csv(out, &config.header_lines())?;
    Ok(table.len())
}

fn select_rows(table: MetricsTable, group: GroupSelect, config: &PipelineConfig) -> Result<MetricsTable> {
    let groups = || group_events(&table, &config.group_spec());
    let (rows, name) = match group {
        GroupSelect::All => return Ok(table),
        GroupSelect::D1 => (groups()?.d1, "D1"),
        GroupSelect::D2 => (groups()?.d2, "D2"),
    };
    if rows.is_empty() {
        return Err(Error::EmptyGroup(format!("no events in {name}")));
    }
    Ok(rows)
}

/// Writes `meteonet.json` and `meteonet.dot`; returns the number of edges.
pub fn run_correlate(metrics_path: &Path, config: &PipelineConfig, group: GroupSelect, out_dir: &Path) -> Result<usize> {
    config.validate()?;
    let table = select_rows(MetricsTable::read_csv(metrics_path)?, group, config)?;
    let graph = correlate_metrics(&table, config.alpha, config.r_cut)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_graph_json(
        out_dir.join("meteonet.json"),
        &graph,
        Some(&format!("stormnet {VERSION}")),
        Some(config.to_json()),
    )?;
    write_graph_dot(out_dir.join("meteonet.dot"), &graph, &config.header_lines())?;
    Ok(graph.edges.len())
}

/// Writes `boxplot.csv` and `mw_tests.csv`; returns `(|D1|, |D2|)`.
pub fn run_groups(metrics_path: &Path, config: &PipelineConfig, out_dir: &Path) -> Result<(usize, usize)> {
    config.validate()?;
    let table = MetricsTable::read_csv(metrics_path)?;
    let groups = group_events(&table, &config.group_spec())?;
    let tests = compare_metric_groups(&groups, &GROUP_TEST_METRICS, config.alpha)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let header = config.header_lines();
    write_boxplot_csv(out_dir.join("boxplot.csv"), &groups, &header)?;
    write_mw_tests_csv(out_dir.join("mw_tests.csv"), &tests, &header)?;
    Ok((groups.d1.len(), groups.d2.len()))
}

/// Input of the full chain.
#[derive(Debug, Clone)]
pub enum ChainInput {
    Scenario(PathBuf),
    Stack(PathBuf),
}

/// Runs every stage into `out_dir`, one file per stage.
pub fn run_all(input: &ChainInput, config: &PipelineConfig, out_dir: &Path) -> Result<()> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stack_path = match input {
        ChainInput::Scenario(spec) => {
            let manifest = out_dir.join("stack.json");
            run_synth(spec, &manifest)?;
            manifest
        }
        ChainInput::Stack(path) => path.clone(),
    };
    let events_path = out_dir.join("events.jsonl");
    let metrics_path = out_dir.join("metrics.csv");
    let count = run_track(&stack_path, config, &events_path)?;
    log::info!("{count} events written to {}", events_path.display());
    run_netbuild(&stack_path, &events_path, config, &metrics_path)?;
    run_correlate(&metrics_path, config, GroupSelect::All, out_dir)?;
    run_groups(&metrics_path, config, out_dir)?;
    Ok(())
}
