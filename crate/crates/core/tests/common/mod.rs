#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use stormnet::synth::{Scenario, StormSpec};

pub const STUDY_EVENTS: usize = 60;
const LANES: usize = 10;
const LANE_HEIGHT: usize = 16;
const GAP_FRAMES: usize = 3;

/// Storms travelling east along horizontal lanes, one after another in each
/// lane, with lifetimes of 10 steps plus an exponential tail (mean 15, capped at 72).
pub fn planted_study(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lane_clock = [0usize; LANES];
    let mut storms = Vec::new();
    for k in 0..STUDY_EVENTS {
        let lane = k % LANES;
        let extra: f64 = rng.sample(Exp::new(1.0 / 15.0).unwrap());
        let steps = 10 + (extra.floor() as usize).min(62);
        let speed = rng.random_range(0.3..0.6);
        let sigma = rng.random_range(2.2..3.0);
        storms.push(StormSpec {
            seed: k as u64,
            start_frame: lane_clock[lane],
            duration_steps: steps,
            center0: (8.0, (lane * LANE_HEIGHT + LANE_HEIGHT / 2) as f64),
            velocity: (speed, 0.0),
            sigma_cells: sigma,
            peak_dbz: rng.random_range(42.0..50.0),
            ramp_frac: 0.2,
            plateau_frac: 0.6,
            decay_frac: 0.2,
            noise_dbz_sd: 1.0,
        });
        lane_clock[lane] += steps + GAP_FRAMES;
    }
    Scenario {
        nx: 64,
        ny: LANES * LANE_HEIGHT,
        cell_km: 1.0,
        origin_lat: -23.6,
        origin_lon: -47.6,
        timestep_minutes: 10,
        nt: lane_clock.iter().copied().max().unwrap(),
        start_time: "2019-01-01T00:00:00Z".into(),
        seed,
        storms,
    }
}
