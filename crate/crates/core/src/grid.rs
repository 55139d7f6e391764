//! Gridded reflectivity stacks and the RGS v1 on-disk format.
//!
//! A stack is a manifest (JSON) plus a raw data file of `nt * ny * nx`
//! little-endian `f32` values, frame-major then row-major (x fastest).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kilometres per degree of latitude in the equirectangular approximation.
pub const KM_PER_DEGREE: f64 = 111.32;

pub const RGS_VERSION: u32 = 1;
pub const RGS_DTYPE: &str = "f32le";
pub const DEFAULT_MISSING_VALUE: f32 = -9999.0;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub nx: usize,
    pub ny: usize,
    pub cell_km: f64,
    /// Latitude of the centre of cell (0, 0), degrees.
    pub origin_lat: f64,
    /// Longitude of the centre of cell (0, 0), degrees.
    pub origin_lon: f64,
    pub timestep_minutes: u32,
}

impl GridGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::Invalid(format!(
                "grid must have at least one cell (nx={}, ny={})",
                self.nx, self.ny
            )));
        }
        if !(self.cell_km.is_finite() && self.cell_km > 0.0) {
            return Err(Error::Invalid(format!(
                "cell_km must be positive, got {}",
                self.cell_km
            )));
        }
        if self.timestep_minutes == 0 {
            return Err(Error::Invalid("timestep_minutes must be positive".into()));
        }
        if !self.origin_lat.is_finite() || !self.origin_lon.is_finite() {
            return Err(Error::Invalid("origin coordinates must be finite".into()));
        }
        if self.origin_lat.abs() >= 90.0 {
            return Err(Error::Invalid(format!(
                "origin_lat out of range: {}",
                self.origin_lat
            )));
        }
        Ok(())
    }

    pub fn cell_area_km2(&self) -> f64 {
        self.cell_km * self.cell_km
    }

    pub fn cells_per_frame(&self) -> usize {
        self.nx * self.ny
    }

    /// Kilometres per degree of longitude at the origin latitude.
    pub fn km_per_degree_lon(&self) -> f64 {
        KM_PER_DEGREE * self.origin_lat.to_radians().cos()
    }

    /// Flat index of cell (i, j) within a frame.
    #[inline]
    pub fn offset(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Latitude/longitude of a fractional grid position; no range check.
    pub fn position_to_latlon(&self, i: f64, j: f64) -> (f64, f64) {
        let lat = self.origin_lat + j * self.cell_km / KM_PER_DEGREE;
        let lon = self.origin_lon + i * self.cell_km / self.km_per_degree_lon();
        (lat, lon)
    }

    /// Distance in km between two lat/lon points, equirectangular at the origin latitude.
    pub fn distance_km(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let dy = (b.0 - a.0) * KM_PER_DEGREE;
        let dx = (b.1 - a.1) * self.km_per_degree_lon();
        dx.hypot(dy)
    }
}

/// Centre of cell (i, j) in degrees.
pub fn cell_index_to_latlon(geometry: &GridGeometry, i: usize, j: usize) -> Result<(f64, f64)> {
    if i >= geometry.nx || j >= geometry.ny {
        return Err(Error::Invalid(format!(
            "cell index ({i}, {j}) out of range for {}x{} grid",
            geometry.nx, geometry.ny
        )));
    }
    Ok(geometry.position_to_latlon(i as f64, j as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub buffer_km: f64,
}

impl BoundingBox {
    pub fn validate(&self) -> Result<()> {
        if !(self.lat_min < self.lat_max) || !(self.lon_min < self.lon_max) {
            return Err(Error::Invalid(format!("degenerate bounding box {self:?}")));
        }
        if !(self.buffer_km >= 0.0) {
            return Err(Error::Invalid(format!(
                "buffer_km must be non-negative, got {}",
                self.buffer_km
            )));
        }
        Ok(())
    }

    /// Whether a point lies inside the box grown by `buffer_km` on every side.
    pub fn contains_buffered(&self, lat: f64, lon: f64) -> bool {
        let mid_lat = 0.5 * (self.lat_min + self.lat_max);
        let dlat = self.buffer_km / KM_PER_DEGREE;
        let dlon = self.buffer_km / (KM_PER_DEGREE * mid_lat.to_radians().cos());
        lat >= self.lat_min - dlat
            && lat <= self.lat_max + dlat
            && lon >= self.lon_min - dlon
            && lon <= self.lon_max + dlon
    }
}

/// A time-ordered stack of reflectivity frames (dBZ).
#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    pub geometry: GridGeometry,
    pub timestamps: Vec<DateTime<Utc>>,
    /// `nt * ny * nx` values, frame-major then row-major.
    pub data: Vec<f32>,
    pub missing_value: f32,
    /// Generator seed, recorded for synthetic stacks.
    pub seed: Option<u64>,
}

impl GridStack {
    pub fn new(
        geometry: GridGeometry,
        timestamps: Vec<DateTime<Utc>>,
        data: Vec<f32>,
        missing_value: f32,
    ) -> Result<Self> {
        let stack = GridStack {
            geometry,
            timestamps,
            data,
            missing_value,
            seed: None,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn nt(&self) -> usize {
        self.timestamps.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let nt = self.timestamps.len();
        if nt == 0 {
            return Err(Error::Invalid("stack must hold at least one frame".into()));
        }
        check_timestamps(&self.timestamps, self.geometry.timestep_minutes)?;
        if !self.missing_value.is_finite() {
            return Err(Error::Invalid("missing_value must be finite".into()));
        }
        let expected = nt * self.geometry.cells_per_frame();
        if self.data.len() != expected {
            return Err(Error::Format(format!(
                "byte-length mismatch: expected {} values ({} bytes), got {}",
                expected,
                expected * 4,
                self.data.len()
            )));
        }
        if let Some(pos) = self
            .data
            .iter()
            .position(|v| !v.is_finite() && *v != self.missing_value)
        {
            return Err(Error::Invalid(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(())
    }

    /// Raw values of frame `t`.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.geometry.cells_per_frame();
        &self.data[t * n..(t + 1) * n]
    }

    /// Frame `t` with missing cells replaced by 0 dBZ.
    pub fn frame_dbz(&self, t: usize) -> Vec<f32> {
        self.frame(t).iter().map(|&v| self.clean(v)).collect()
    }

    /// Reflectivity at (t, i, j), missing cells read as 0 dBZ.
    #[inline]
    pub fn dbz(&self, t: usize, i: usize, j: usize) -> f32 {
        let n = self.geometry.cells_per_frame();
        self.clean(self.data[t * n + self.geometry.offset(i, j)])
    }

    #[inline]
    fn clean(&self, v: f32) -> f32 {
        if v == self.missing_value {
            0.0
        } else {
            v
        }
    }
}

fn check_timestamps(timestamps: &[DateTime<Utc>], step_minutes: u32) -> Result<()> {
    let step = Duration::minutes(i64::from(step_minutes));
    for (k, pair) in timestamps.windows(2).enumerate() {
        let delta = pair[1] - pair[0];
        if delta <= Duration::zero() {
            return Err(Error::Format(format!(
                "timestamps not strictly increasing at index {}",
                k + 1
            )));
        }
        if delta != step {
            return Err(Error::Format(format!(
                "non-uniform timestamps at index {}: step {} min, expected {} min",
                k + 1,
                delta.num_minutes(),
                step_minutes
            )));
        }
    }
    Ok(())
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .map(|naive| naive.and_utc())
        .or_else(|_| DateTime::parse_from_rfc3339(s).map(|t| t.with_timezone(&Utc)))
        .map_err(|e| Error::Format(format!("bad timestamp {s:?}: {e}")))
}

/// RGS v1 manifest document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub nx: usize,
    pub ny: usize,
    pub cell_km: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub timestep_minutes: u32,
    pub timestamps: Vec<String>,
    pub dtype: String,
    pub missing_value: f32,
    pub data_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub fn load_grid_stack(manifest_path: impl AsRef<Path>) -> Result<GridStack> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::json(manifest_path, e))?;
    if manifest.version != RGS_VERSION {
        return Err(Error::Format(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    if manifest.dtype != RGS_DTYPE {
        return Err(Error::Format(format!("unknown dtype {:?}", manifest.dtype)));
    }
    let geometry = GridGeometry {
        nx: manifest.nx,
        ny: manifest.ny,
        cell_km: manifest.cell_km,
        origin_lat: manifest.origin_lat,
        origin_lon: manifest.origin_lon,
        timestep_minutes: manifest.timestep_minutes,
    };
    geometry.validate()?;
    let timestamps = manifest
        .timestamps
        .iter()
        .map(|s| parse_timestamp(s))
        .collect::<Result<Vec<_>>>()?;
    if timestamps.is_empty() {
        return Err(Error::Format("manifest lists no timestamps".into()));
    }

    let data_path = data_path_for(manifest_path, &manifest.data_file);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let expected = timestamps.len() * geometry.cells_per_frame() * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "byte-length mismatch: {} holds {} bytes, manifest implies {} ({} frames of {}x{})",
            data_path.display(),
            bytes.len(),
            expected,
            timestamps.len(),
            geometry.nx,
            geometry.ny
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut stack = GridStack::new(geometry, timestamps, data, manifest.missing_value)?;
    stack.seed = manifest.seed;
    Ok(stack)
}

/// Writes the manifest to `manifest_path` and the data next to it as `<stem>.f32`.
pub fn write_grid_stack(stack: &GridStack, manifest_path: impl AsRef<Path>) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    stack.validate()?;
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("stack");
    let data_file = format!("{stem}.f32");
    let g = &stack.geometry;
    let manifest = Manifest {
        version: RGS_VERSION,
        nx: g.nx,
        ny: g.ny,
        cell_km: g.cell_km,
        origin_lat: g.origin_lat,
        origin_lon: g.origin_lon,
        timestep_minutes: g.timestep_minutes,
        timestamps: stack.timestamps.iter().map(format_timestamp).collect(),
        dtype: RGS_DTYPE.to_string(),
        missing_value: stack.missing_value,
        data_file: data_file.clone(),
        seed: stack.seed,
    };

    let mut bytes = Vec::with_capacity(stack.data.len() * 4);
    for v in &stack.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let data_path = data_path_for(manifest_path, &data_file);
    fs::write(&data_path, &bytes).map_err(|e| Error::io(&data_path, e))?;

    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(manifest_path, e))?;
    text.push('\n');
    let mut file = fs::File::create(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(manifest_path, e))?;
    Ok(())
}

fn data_path_for(manifest_path: &Path, data_file: &str) -> PathBuf {
    match manifest_path.parent() {
        Some(dir) => dir.join(data_file),
        None => PathBuf::from(data_file),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn geometry(nx: usize, ny: usize) -> GridGeometry {
        GridGeometry {
            nx,
            ny,
            cell_km: 1.0,
            origin_lat: -23.5,
            origin_lon: -46.6,
            timestep_minutes: 10,
        }
    }

    fn times(nt: usize, step: i64) -> Vec<DateTime<Utc>> {
        let t0 = Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap();
        (0..nt).map(|k| t0 + Duration::minutes(step * k as i64)).collect()
    }

    #[test]
    fn smallest_stack_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let stack = GridStack::new(geometry(2, 2), times(1, 10), vec![1.0, 2.0, 3.0, 4.0], -1.0)
            .unwrap();
        write_grid_stack(&stack, &path).unwrap();
        assert_eq!(fs::metadata(dir.path().join("s.f32")).unwrap().len(), 16);
        let back = load_grid_stack(&path).unwrap();
        assert_eq!(back.nt(), 1);
        assert_eq!(back.frame(0), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn declared_frames_must_match_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let stack = GridStack::new(geometry(2, 2), times(2, 10), vec![0.0; 8], -1.0).unwrap();
        write_grid_stack(&stack, &path).unwrap();
        let mut manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        manifest.timestamps = times(3, 10).iter().map(format_timestamp).collect();
        fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        let err = load_grid_stack(&path).unwrap_err();
        assert!(err.to_string().contains("byte-length mismatch"), "{err}");
    }

    #[test]
    fn rejects_unknown_dtype_and_bad_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let stack = GridStack::new(geometry(1, 1), times(3, 10), vec![0.0; 3], -1.0).unwrap();
        write_grid_stack(&stack, &path).unwrap();
        let original: Manifest =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();

        let mut m = original.clone();
        m.dtype = "f64be".into();
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(load_grid_stack(&path).unwrap_err().to_string().contains("dtype"));

        let mut m = original.clone();
        m.timestamps.swap(1, 2);
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(load_grid_stack(&path).is_err());

        let mut m = original;
        m.timestamps = times(3, 15).iter().map(format_timestamp).collect();
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(load_grid_stack(&path)
            .unwrap_err()
            .to_string()
            .contains("non-uniform"));
    }

    #[test]
    fn malformed_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        fs::write(&path, "{ \"version\": 1, ").unwrap();
        assert_eq!(load_grid_stack(&path).unwrap_err().category(), "format");
    }

    #[test]
    fn empty_stack_cannot_be_written() {
        let dir = tempfile::tempdir().unwrap();
        let stack = GridStack {
            geometry: geometry(2, 2),
            timestamps: vec![],
            data: vec![],
            missing_value: -1.0,
            seed: None,
        };
        assert!(write_grid_stack(&stack, dir.path().join("e.json")).is_err());
    }

    #[test]
    fn file_size_follows_format_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.json");
        let stack =
            GridStack::new(geometry(64, 64), times(20, 10), vec![0.0; 64 * 64 * 20], -1.0).unwrap();
        write_grid_stack(&stack, &path).unwrap();
        let len = fs::metadata(dir.path().join("big.f32")).unwrap().len();
        assert_eq!(len, 64 * 64 * 20 * 4);
    }

    #[test]
    fn missing_cells_read_as_zero() {
        let stack = GridStack::new(geometry(2, 1), times(1, 10), vec![-9999.0, 25.0], -9999.0)
            .unwrap();
        assert_eq!(stack.frame_dbz(0), vec![0.0, 25.0]);
        assert_eq!(stack.dbz(0, 0, 0), 0.0);
    }

    #[test]
    fn latlon_origin_and_unit_degree() {
        let g = geometry(4, 4);
        assert_eq!(cell_index_to_latlon(&g, 0, 0).unwrap(), (g.origin_lat, g.origin_lon));
        let g = GridGeometry {
            cell_km: 111.32,
            origin_lat: 0.0,
            ..g
        };
        let (lat, lon) = cell_index_to_latlon(&g, 0, 1).unwrap();
        assert!((lat - 1.0).abs() < 1e-12);
        assert_eq!(lon, g.origin_lon);
        assert!(cell_index_to_latlon(&g, 4, 0).is_err());
        assert!(cell_index_to_latlon(&g, 0, 4).is_err());
    }

    #[test]
    fn buffered_box_extends_by_buffer() {
        let bbox = BoundingBox {
            lat_min: 0.0,
            lat_max: 1.0,
            lon_min: 0.0,
            lon_max: 1.0,
            buffer_km: 11.132,
        };
        assert!(bbox.contains_buffered(1.09, 0.5));
        assert!(!bbox.contains_buffered(1.11, 0.5));
        assert!(bbox.contains_buffered(0.5, -0.099));
    }

    proptest! {
        #[test]
        fn latlon_matches_formula(i in 0usize..200, j in 0usize..200, cell in 0.1f64..5.0,
                                  lat0 in -60.0f64..60.0, lon0 in -180.0f64..180.0) {
            let g = GridGeometry { nx: 200, ny: 200, cell_km: cell, origin_lat: lat0,
                                   origin_lon: lon0, timestep_minutes: 10 };
            let (lat, lon) = cell_index_to_latlon(&g, i, j).unwrap();
            let want_lat = lat0 + j as f64 * cell / 111.32;
            let want_lon = lon0 + i as f64 * cell / (111.32 * (lat0 * std::f64::consts::PI / 180.0).cos());
            prop_assert!((lat - want_lat).abs() < 1e-9);
            prop_assert!((lon - want_lon).abs() < 1e-9);
        }

        #[test]
        fn write_then_load_is_identity(nx in 1usize..6, ny in 1usize..6, nt in 1usize..5,
                                       seed in any::<u64>(), step in 1u32..30) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = GridGeometry { timestep_minutes: step, ..geometry(nx, ny) };
            let data: Vec<f32> = (0..nx * ny * nt)
                .map(|_| if rng.random_bool(0.1) { -9999.0 } else { rng.random_range(-10.0f32..70.0) })
                .collect();
            let mut stack = GridStack::new(g, times(nt, step as i64), data, -9999.0).unwrap();
            stack.seed = Some(seed);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("rt.json");
            write_grid_stack(&stack, &path).unwrap();
            let bytes = fs::read(dir.path().join("rt.f32")).unwrap();
            let back = load_grid_stack(&path).unwrap();
            prop_assert_eq!(&back, &stack);
            write_grid_stack(&back, &path).unwrap();
            prop_assert_eq!(fs::read(dir.path().join("rt.f32")).unwrap(), bytes);
        }
    }
}
