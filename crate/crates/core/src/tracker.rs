//! Feature segmentation, overlap tracking, event filtering and per-event
//! meteorological metrics.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{format_timestamp, BoundingBox, GridGeometry, GridStack};

/// Grid cell as `(i, j)`: x index, y index.
pub type Cell = (u32, u32);

/// An 8-connected set of above-threshold cells in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub frame_index: usize,
    /// Sorted lexicographically by `(i, j)`.
    pub cells: Vec<Cell>,
    pub area_km2: f64,
    /// Area centroid `(lat, lon)`.
    pub centroid: (f64, f64),
    pub max_dbz: f64,
    pub mean_dbz: f64,
}

impl Feature {
    /// Builds a feature from its cells and their reflectivities, deriving area and centroid.
    pub fn from_cells(
        frame_index: usize,
        mut cells: Vec<Cell>,
        values: &[f64],
        geometry: &GridGeometry,
    ) -> Self {
        debug_assert_eq!(cells.len(), values.len());
        let max_dbz = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean_dbz = values.iter().sum::<f64>() / values.len() as f64;
        cells.sort_unstable();
        Self::with_stats(frame_index, cells, max_dbz, mean_dbz, geometry)
    }

    fn with_stats(
        frame_index: usize,
        cells: Vec<Cell>,
        max_dbz: f64,
        mean_dbz: f64,
        geometry: &GridGeometry,
    ) -> Self {
        let n = cells.len() as f64;
        let (si, sj) = cells
            .iter()
            .fold((0.0, 0.0), |(a, b), &(i, j)| (a + f64::from(i), b + f64::from(j)));
        Feature {
            frame_index,
            area_km2: n * geometry.cell_area_km2(),
            centroid: geometry.position_to_latlon(si / n, sj / n),
            cells,
            max_dbz,
            mean_dbz,
        }
    }

    /// Number of cells shared with `other`.
    pub fn overlap_cells(&self, other: &Feature) -> usize {
        let (mut a, mut b) = (self.cells.iter().peekable(), other.cells.iter().peekable());
        let mut shared = 0;
        while let (Some(x), Some(y)) = (a.peek(), b.peek()) {
            match x.cmp(y) {
                Ordering::Less => {
                    a.next();
                }
                Ordering::Greater => {
                    b.next();
                }
                Ordering::Equal => {
                    shared += 1;
                    a.next();
                    b.next();
                }
            }
        }
        shared
    }

    /// Shared cells divided by the smaller feature's cell count.
    pub fn overlap_fraction(&self, other: &Feature) -> f64 {
        let denom = self.cells.len().min(other.cells.len());
        if denom == 0 {
            return 0.0;
        }
        self.overlap_cells(other) as f64 / denom as f64
    }
}

/// A track of features over consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub id: u64,
    pub features: Vec<Feature>,
}

impl Event {
    pub fn start_frame(&self) -> usize {
        self.features[0].frame_index
    }

    pub fn end_frame(&self) -> usize {
        self.features[self.features.len() - 1].frame_index
    }

    pub fn step_count(&self) -> usize {
        self.features.len()
    }

    /// Step count times the cadence, so 10 frames at 10 min last 100 min.
    pub fn duration_minutes(&self, timestep_minutes: u32) -> u64 {
        self.features.len() as u64 * u64::from(timestep_minutes)
    }

    /// Sorted, deduplicated union of the cells of every feature.
    pub fn footprint(&self) -> Vec<Cell> {
        let mut cells: Vec<Cell> = self
            .features
            .iter()
            .flat_map(|f| f.cells.iter().copied())
            .collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }
}

/// Labels the maximal 8-connected components of cells with value `>= dbz_min`
/// and keeps those covering at least `min_area_km2`.
///
/// `frame` holds `ny * nx` values in row-major order with missing cells
/// already mapped to 0 dBZ. Features come back ordered by their smallest cell.
pub fn segment_frame(
    frame: &[f32],
    frame_index: usize,
    geometry: &GridGeometry,
    dbz_min: f64,
    min_area_km2: f64,
) -> Result<Vec<Feature>> {
    let (nx, ny) = (geometry.nx, geometry.ny);
    if frame.len() != nx * ny {
        return Err(Error::Invalid(format!(
            "frame has {} values, geometry implies {}x{}={}",
            frame.len(),
            nx,
            ny,
            nx * ny
        )));
    }
    let above = |idx: usize| f64::from(frame[idx]) >= dbz_min;
    let mut visited = vec![false; frame.len()];
    let mut stack = Vec::new();
    let mut features = Vec::new();
    // Tolerates rounding in count * cell_km^2 against the configured minimum.
    let area_floor = min_area_km2 * (1.0 - 1e-9);

    for start in 0..frame.len() {
        if visited[start] || !above(start) {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut cells = Vec::new();
        let mut values = Vec::new();
        while let Some(idx) = stack.pop() {
            let (i, j) = (idx % nx, idx / nx);
            cells.push((i as u32, j as u32));
            values.push(f64::from(frame[idx]));
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= nx as i64 || nj >= ny as i64 {
                        continue;
                    }
                    let n = nj as usize * nx + ni as usize;
                    if !visited[n] && above(n) {
                        visited[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        if cells.len() as f64 * geometry.cell_area_km2() >= area_floor {
            features.push(Feature::from_cells(frame_index, cells, &values, geometry));
        }
    }
    features.sort_by(|a, b| a.cells[0].cmp(&b.cells[0]));
    Ok(features)
}

/// Segments every frame of a stack.
pub fn segment_stack(stack: &GridStack, dbz_min: f64, min_area_km2: f64) -> Result<Vec<Vec<Feature>>> {
    use rayon::prelude::*;
    (0..stack.nt())
        .into_par_iter()
        .map(|t| segment_frame(&stack.frame_dbz(t), t, &stack.geometry, dbz_min, min_area_km2))
        .collect()
}

// Preference order among candidates: larger overlap, then larger area, then smaller
// cell list. Within a frame, index order equals cell-list order.
fn prefer(a: (usize, usize, usize), b: (usize, usize, usize)) -> bool {
    let (ov_a, area_a, idx_a) = a;
    let (ov_b, area_b, idx_b) = b;
    (ov_a, area_a, std::cmp::Reverse(idx_a)) > (ov_b, area_b, std::cmp::Reverse(idx_b))
}

/// Associates features across consecutive frames into events.
///
/// A predecessor `f` (frame t) and successor `g` (frame t+1) are linked when
/// their shared cells cover at least `min_overlap_frac` of the smaller one.
/// Each successor picks its best linked predecessor; when several successors
/// pick the same predecessor, the best of them continues the track and the
/// rest start new events. Predecessors left without a successor end there.
pub fn track_events(per_frame_features: &[Vec<Feature>], min_overlap_frac: f64) -> Vec<Event> {
    let mut events: Vec<Event> = Vec::new();
    let mut prev_owner: Vec<usize> = Vec::new();
    let mut next_id = 1u64;

    for (t, current) in per_frame_features.iter().enumerate() {
        let mut owner = vec![usize::MAX; current.len()];
        if t > 0 {
            let previous = &per_frame_features[t - 1];
            // Best linked predecessor for every successor.
            let mut choice: Vec<Option<(usize, usize)>> = vec![None; current.len()];
            for (gi, g) in current.iter().enumerate() {
                for (fi, f) in previous.iter().enumerate() {
                    if f.overlap_fraction(g) < min_overlap_frac {
                        continue;
                    }
                    let shared = f.overlap_cells(g);
                    let better = match choice[gi] {
                        None => true,
                        Some((best, best_shared)) => prefer(
                            (shared, f.cells.len(), fi),
                            (best_shared, previous[best].cells.len(), best),
                        ),
                    };
                    if better {
                        choice[gi] = Some((fi, shared));
                    }
                }
            }
            // Each predecessor keeps at most one successor.
            let mut winner: Vec<Option<(usize, usize)>> = vec![None; previous.len()];
            for (gi, c) in choice.iter().enumerate() {
                let Some((fi, shared)) = *c else { continue };
                let better = match winner[fi] {
                    None => true,
                    Some((best, best_shared)) => prefer(
                        (shared, current[gi].cells.len(), gi),
                        (best_shared, current[best].cells.len(), best),
                    ),
                };
                if better {
                    winner[fi] = Some((gi, shared));
                }
            }
            for (fi, w) in winner.iter().enumerate() {
                if let Some((gi, _)) = *w {
                    owner[gi] = prev_owner[fi];
                }
            }
        }
        for (gi, g) in current.iter().enumerate() {
            if owner[gi] == usize::MAX {
                owner[gi] = events.len();
                events.push(Event {
                    id: next_id,
                    features: Vec::new(),
                });
                next_id += 1;
            }
            events[owner[gi]].features.push(g.clone());
        }
        prev_owner = owner;
    }
    events
}

/// Keeps events whose duration lies in `[min_duration, max_duration]` minutes and,
/// when a box is given, whose footprint has a cell centre inside the buffered box.
pub fn filter_events(
    events: Vec<Event>,
    geometry: &GridGeometry,
    bbox: Option<&BoundingBox>,
    min_duration_minutes: u64,
    max_duration_minutes: u64,
) -> Vec<Event> {
    events
        .into_iter()
        .filter(|e| {
            let d = e.duration_minutes(geometry.timestep_minutes);
            d >= min_duration_minutes && d <= max_duration_minutes
        })
        .filter(|e| match bbox {
            None => true,
            Some(b) => e.footprint().iter().any(|&(i, j)| {
                let (lat, lon) = geometry.position_to_latlon(f64::from(i), f64::from(j));
                b.contains_buffered(lat, lon)
            }),
        })
        .collect()
}

/// Meteorological properties of one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeteoRecord {
    pub event_id: u64,
    #[serde(rename = "duration_min")]
    pub duration_minutes: f64,
    #[serde(rename = "area_avg")]
    pub area_avg_km2: f64,
    #[serde(rename = "area_max")]
    pub area_max_km2: f64,
    #[serde(rename = "area_peak")]
    pub area_peak_km2: f64,
    #[serde(rename = "speed_avg")]
    pub speed_avg_kmh: f64,
    #[serde(rename = "speed_max")]
    pub speed_max_kmh: f64,
    #[serde(rename = "reflect_avg")]
    pub reflect_avg_dbz: f64,
    #[serde(rename = "reflect_max")]
    pub reflect_max_dbz: f64,
    #[serde(rename = "delta_reflect")]
    pub delta_reflect_dbz: f64,
}

impl MeteoRecord {
    pub const COLUMNS: [&'static str; 9] = [
        "duration_min",
        "area_avg",
        "area_max",
        "area_peak",
        "speed_avg",
        "speed_max",
        "reflect_avg",
        "reflect_max",
        "delta_reflect",
    ];

    /// Values in [`Self::COLUMNS`] order.
    pub fn values(&self) -> [f64; 9] {
        [
            self.duration_minutes,
            self.area_avg_km2,
            self.area_max_km2,
            self.area_peak_km2,
            self.speed_avg_kmh,
            self.speed_max_kmh,
            self.reflect_avg_dbz,
            self.reflect_max_dbz,
            self.delta_reflect_dbz,
        ]
    }
}

pub fn meteo_metrics(event: &Event, geometry: &GridGeometry) -> Result<MeteoRecord> {
    let features = &event.features;
    if features.is_empty() {
        return Err(Error::Invalid(format!("event {} has no features", event.id)));
    }
    let n = features.len() as f64;
    let area_avg = features.iter().map(|f| f.area_km2).sum::<f64>() / n;
    let area_max = features.iter().map(|f| f.area_km2).fold(0.0, f64::max);

    // Earliest feature holding the event maximum.
    let peak = features
        .iter()
        .fold(&features[0], |best, f| if f.max_dbz > best.max_dbz { f } else { best });
    let reflect_max = peak.max_dbz;
    let reflect_min_of_max = features.iter().map(|f| f.max_dbz).fold(f64::INFINITY, f64::min);
    let reflect_avg = features.iter().map(|f| f.mean_dbz).sum::<f64>() / n;

    let hours = f64::from(geometry.timestep_minutes) / 60.0;
    let speeds: Vec<f64> = features
        .windows(2)
        .map(|w| geometry.distance_km(w[0].centroid, w[1].centroid) / hours)
        .collect();
    let (speed_avg, speed_max) = if speeds.is_empty() {
        (0.0, 0.0)
    } else {
        (
            speeds.iter().sum::<f64>() / speeds.len() as f64,
            speeds.iter().copied().fold(0.0, f64::max),
        )
    };

    Ok(MeteoRecord {
        event_id: event.id,
        duration_minutes: event.duration_minutes(geometry.timestep_minutes) as f64,
        area_avg_km2: area_avg,
        area_max_km2: area_max,
        area_peak_km2: peak.area_km2,
        speed_avg_kmh: speed_avg,
        speed_max_kmh: speed_max,
        reflect_avg_dbz: reflect_avg,
        reflect_max_dbz: reflect_max,
        delta_reflect_dbz: reflect_max - reflect_min_of_max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameRecord {
    t: usize,
    cells: Vec<Cell>,
    max_dbz: f64,
    mean_dbz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EventRecord {
    id: u64,
    start: String,
    end: String,
    frames: Vec<FrameRecord>,
}

/// Writes events one JSON record per line, after `#`-prefixed header lines.
pub fn write_events(
    path: impl AsRef<Path>,
    events: &[Event],
    stack: &GridStack,
    header: &[String],
) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for line in header {
        writeln!(out, "# {line}").expect("write to Vec");
    }
    for e in events {
        let record = EventRecord {
            id: e.id,
            start: format_timestamp(&stack.timestamps[e.start_frame()]),
            end: format_timestamp(&stack.timestamps[e.end_frame()]),
            frames: e
                .features
                .iter()
                .map(|f| FrameRecord {
                    t: f.frame_index,
                    cells: f.cells.clone(),
                    max_dbz: f.max_dbz,
                    mean_dbz: f.mean_dbz,
                })
                .collect(),
        };
        let line = serde_json::to_string(&record).map_err(|e| Error::json(path, e))?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads an events file, checking every record against the stack it came from.
pub fn load_events(path: impl AsRef<Path>, stack: &GridStack) -> Result<Vec<Event>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let geometry = &stack.geometry;
    let mut events = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = |msg: String| Error::Format(format!("{}:{}: {msg}", path.display(), lineno + 1));
        let record: EventRecord = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        if record.frames.is_empty() {
            return Err(at(format!("event {} has no frames", record.id)));
        }
        let mut features = Vec::with_capacity(record.frames.len());
        for (k, fr) in record.frames.into_iter().enumerate() {
            if fr.t >= stack.nt() {
                return Err(at(format!(
                    "event {} references frame {} but the stack has {} frames",
                    record.id,
                    fr.t,
                    stack.nt()
                )));
            }
            if k > 0 && fr.t != features.last().map(|f: &Feature| f.frame_index + 1).unwrap_or(0) {
                return Err(at(format!("event {} frames are not consecutive", record.id)));
            }
            if fr.cells.is_empty() {
                return Err(at(format!("event {} frame {} has no cells", record.id, fr.t)));
            }
            if let Some(&(i, j)) = fr
                .cells
                .iter()
                .find(|&&(i, j)| i as usize >= geometry.nx || j as usize >= geometry.ny)
            {
                return Err(at(format!("cell ({i}, {j}) outside the grid")));
            }
            let mut cells = fr.cells;
            cells.sort_unstable();
            features.push(Feature::with_stats(fr.t, cells, fr.max_dbz, fr.mean_dbz, geometry));
        }
        let event = Event {
            id: record.id,
            features,
        };
        let start = format_timestamp(&stack.timestamps[event.start_frame()]);
        let end = format_timestamp(&stack.timestamps[event.end_frame()]);
        if start != record.start || end != record.end {
            return Err(at(format!(
                "event {} window {}..{} does not match stack times {}..{}",
                event.id, record.start, record.end, start, end
            )));
        }
        events.push(event);
    }
    Ok(events)
}
