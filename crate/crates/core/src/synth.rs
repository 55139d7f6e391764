//! Deterministic synthetic reflectivity stacks built from moving Gaussian storms.
//!
//! Noise uses ChaCha8 with a key derived from the stack seed and the storm
//! seed, and the frame index as the stream number, so every frame can be
//! generated independently and in any order.

use std::fs;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{parse_timestamp, GridGeometry, GridStack};

/// Fraction of the peak reached at the start and end of a ramped life.
pub const PROFILE_FLOOR: f64 = 0.5;

/// Bumps are cut off at this many standard deviations.
const SUPPORT_SIGMAS: f64 = 4.0;

fn default_plateau() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StormSpec {
    #[serde(default)]
    pub seed: u64,
    pub start_frame: usize,
    pub duration_steps: usize,
    /// Grid position (i, j) at the first frame of the storm's life.
    pub center0: (f64, f64),
    /// Cells per step along i and j.
    #[serde(default)]
    pub velocity: (f64, f64),
    pub sigma_cells: f64,
    pub peak_dbz: f64,
    #[serde(default)]
    pub ramp_frac: f64,
    #[serde(default = "default_plateau")]
    pub plateau_frac: f64,
    #[serde(default)]
    pub decay_frac: f64,
    #[serde(default)]
    pub noise_dbz_sd: f64,
}

impl StormSpec {
    /// A noiseless storm at constant intensity.
    pub fn steady(
        start_frame: usize,
        duration_steps: usize,
        center0: (f64, f64),
        velocity: (f64, f64),
        sigma_cells: f64,
        peak_dbz: f64,
    ) -> Self {
        StormSpec {
            seed: 0,
            start_frame,
            duration_steps,
            center0,
            velocity,
            sigma_cells,
            peak_dbz,
            ramp_frac: 0.0,
            plateau_frac: 1.0,
            decay_frac: 0.0,
            noise_dbz_sd: 0.0,
        }
    }

    pub fn validate(&self, geometry: &GridGeometry, nt: usize) -> Result<()> {
        if self.duration_steps < 1 {
            return Err(Error::Invalid("storm duration_steps must be at least 1".into()));
        }
        if !(self.peak_dbz > 20.0 && self.peak_dbz.is_finite()) {
            return Err(Error::Invalid(format!("storm peak_dbz must exceed 20, got {}", self.peak_dbz)));
        }
        if !(self.sigma_cells > 0.0 && self.sigma_cells.is_finite()) {
            return Err(Error::Invalid(format!("storm sigma_cells must be positive, got {}", self.sigma_cells)));
        }
        if !(self.noise_dbz_sd >= 0.0 && self.noise_dbz_sd.is_finite()) {
            return Err(Error::Invalid(format!("storm noise_dbz_sd must be non-negative, got {}", self.noise_dbz_sd)));
        }
        let fracs = [self.ramp_frac, self.plateau_frac, self.decay_frac];
        if fracs.iter().any(|f| !(*f >= 0.0)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "storm profile fractions must be non-negative and sum to 1, got {fracs:?}"
            )));
        }
        if self.start_frame + self.duration_steps > nt {
            return Err(Error::Invalid(format!(
                "storm frames {}..{} exceed the stack length {nt}",
                self.start_frame,
                self.start_frame + self.duration_steps
            )));
        }
        for s in [0, self.duration_steps - 1] {
            let (ci, cj) = self.center_at(s);
            let inside = ci.is_finite()
                && cj.is_finite()
                && ci >= 0.0
                && cj >= 0.0
                && ci <= (geometry.nx - 1) as f64
                && cj <= (geometry.ny - 1) as f64;
            if !inside {
                return Err(Error::Invalid(format!(
                    "storm centre ({ci}, {cj}) at step {s} leaves the {}x{} grid",
                    geometry.nx, geometry.ny
                )));
            }
        }
        Ok(())
    }

    /// Centre position `s` steps into the storm's life.
    pub fn center_at(&self, s: usize) -> (f64, f64) {
        (
            self.center0.0 + s as f64 * self.velocity.0,
            self.center0.1 + s as f64 * self.velocity.1,
        )
    }

    /// Intensity multiplier in [PROFILE_FLOOR, 1] for step `s` of the life.
    pub fn profile(&self, s: usize) -> f64 {
        let u = (s as f64 + 0.5) / self.duration_steps as f64;
        if u < self.ramp_frac {
            PROFILE_FLOOR + (1.0 - PROFILE_FLOOR) * u / self.ramp_frac
        } else if u <= self.ramp_frac + self.plateau_frac {
            1.0
        } else {
            let v = (u - self.ramp_frac - self.plateau_frac) / self.decay_frac;
            1.0 - (1.0 - PROFILE_FLOOR) * v.min(1.0)
        }
    }
}

/// Radius (cells) inside which a noiseless bump of the given peak stays at or above `dbz_min`.
pub fn analytic_radius_cells(sigma_cells: f64, peak_dbz: f64, dbz_min: f64) -> f64 {
    sigma_cells * (2.0 * (peak_dbz / dbz_min).ln()).sqrt()
}

pub fn generate_stack(
    geometry: &GridGeometry,
    start_time: DateTime<Utc>,
    nt: usize,
    storms: &[StormSpec],
    seed: u64,
) -> Result<GridStack> {
    geometry.validate()?;
    if nt == 0 {
        return Err(Error::Invalid("stack needs at least one frame".into()));
    }
    for (k, storm) in storms.iter().enumerate() {
        storm
            .validate(geometry, nt)
            .map_err(|e| Error::Invalid(format!("storm {k}: {e}")))?;
    }
    let cells = geometry.cells_per_frame();
    let frames: Vec<Vec<f32>> = (0..nt)
        .into_par_iter()
        .map(|t| {
            let mut frame = vec![0.0f32; cells];
            for storm in storms {
                if t < storm.start_frame || t >= storm.start_frame + storm.duration_steps {
                    continue;
                }
                paint_storm(&mut frame, geometry, storm, t, seed);
            }
            frame
        })
        .collect();
    let step = Duration::minutes(i64::from(geometry.timestep_minutes));
    let timestamps = (0..nt).map(|t| start_time + step * t as i32).collect();
    let mut stack = GridStack::new(*geometry, timestamps, frames.concat(), crate::grid::DEFAULT_MISSING_VALUE)?;
    stack.seed = Some(seed);
    Ok(stack)
}

fn noise_rng(stack_seed: u64, storm_seed: u64, frame: usize) -> ChaCha8Rng {
    let key = stack_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ storm_seed;
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(frame as u64);
    rng
}

fn paint_storm(frame: &mut [f32], geometry: &GridGeometry, storm: &StormSpec, t: usize, seed: u64) {
    let s = t - storm.start_frame;
    let (ci, cj) = storm.center_at(s);
    let amplitude = storm.peak_dbz * storm.profile(s);
    let reach = SUPPORT_SIGMAS * storm.sigma_cells;
    let i0 = (ci - reach).floor().max(0.0) as usize;
    let i1 = ((ci + reach).ceil() as usize).min(geometry.nx - 1);
    let j0 = (cj - reach).floor().max(0.0) as usize;
    let j1 = ((cj + reach).ceil() as usize).min(geometry.ny - 1);
    let noise = (storm.noise_dbz_sd > 0.0).then(|| {
        (
            noise_rng(seed, storm.seed, t),
            Normal::new(0.0, storm.noise_dbz_sd).expect("validated sd"),
        )
    });
    let mut noise = noise;
    let two_var = 2.0 * storm.sigma_cells * storm.sigma_cells;
    for j in j0..=j1 {
        for i in i0..=i1 {
            let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
            if d2 > reach * reach {
                continue;
            }
            let mut v = amplitude * (-d2 / two_var).exp();
            if let Some((rng, dist)) = noise.as_mut() {
                v += dist.sample(rng);
            }
            let v = v.max(0.0) as f32;
            let cell = &mut frame[geometry.offset(i, j)];
            if v > *cell {
                *cell = v;
            }
        }
    }
}

/// Storm scenario document consumed by the `synth` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub nx: usize,
    pub ny: usize,
    pub cell_km: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub timestep_minutes: u32,
    pub nt: usize,
    pub start_time: String,
    pub seed: u64,
    pub storms: Vec<StormSpec>,
}

impl Scenario {
    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            nx: self.nx,
            ny: self.ny,
            cell_km: self.cell_km,
            origin_lat: self.origin_lat,
            origin_lon: self.origin_lon,
            timestep_minutes: self.timestep_minutes,
        }
    }

    pub fn generate(&self) -> Result<GridStack> {
        generate_stack(
            &self.geometry(),
            parse_timestamp(&self.start_time)?,
            self.nt,
            &self.storms,
            self.seed,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
