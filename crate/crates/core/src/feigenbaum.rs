//! Frequency sweeps, unstable-branch trails and attractor clouds.

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{
    detect_period, iterate, newton_fixed_point, FixedPointResult, MapHandle, NewtonOptions, DEFAULT_ESCAPE_RADIUS,
    DEFAULT_MAX_PERIOD, DEFAULT_PERIOD_TOL,
};

pub const DEFAULT_SWEEP_TRANSIENT: usize = 2000;
pub const DEFAULT_SWEEP_KEEP: usize = 256;
pub const DEFAULT_CLOUD_TRANSIENT: usize = 10_000;
pub const DEFAULT_CLOUD_KEEP: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeigenbaumError {
    #[error("omega range [{min}, {max}] is empty")]
    EmptyRange { min: f64, max: f64 },
    #[error("a sweep needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("Newton did not converge at the first trail point omega = {omega}: {reason}")]
    TrailStart { omega: f64, reason: String },
    #[error("window has an empty side: {0:?}")]
    EmptyWindow(Window),
    #[error(transparent)]
    Dynamics(#[from] crate::dynamics::DynamicsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedMode {
    /// Each frequency starts from the last steady point of the previous one.
    Continuation,
    /// Every frequency starts from the configured seed.
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub omega_min: f64,
    pub omega_max: f64,
    pub samples: usize,
    pub transient: usize,
    pub keep: usize,
    pub seed_mode: SeedMode,
    pub seed: [f64; 2],
    pub direction: Direction,
    pub period_max: usize,
    pub period_tol: f64,
    pub escape_radius: f64,
}

impl SweepConfig {
    pub fn new(omega_min: f64, omega_max: f64, samples: usize, seed: [f64; 2]) -> Self {
        SweepConfig {
            omega_min,
            omega_max,
            samples,
            transient: DEFAULT_SWEEP_TRANSIENT,
            keep: DEFAULT_SWEEP_KEEP,
            seed_mode: SeedMode::Continuation,
            seed,
            direction: Direction::Up,
            period_max: DEFAULT_MAX_PERIOD,
            period_tol: DEFAULT_PERIOD_TOL,
            escape_radius: DEFAULT_ESCAPE_RADIUS,
        }
    }

    pub fn validate(&self) -> Result<(), FeigenbaumError> {
        if self.samples < 2 {
            return Err(FeigenbaumError::TooFewSamples(self.samples));
        }
        if !(self.omega_min < self.omega_max) {
            return Err(FeigenbaumError::EmptyRange { min: self.omega_min, max: self.omega_max });
        }
        Ok(())
    }

    /// Uniform grid in sweep order.
    pub fn grid(&self) -> Vec<f64> {
        let step = (self.omega_max - self.omega_min) / (self.samples - 1) as f64;
        let mut g: Vec<f64> = (0..self.samples).map(|i| self.omega_min + i as f64 * step).collect();
        if self.direction == Direction::Down {
            g.reverse();
        }
        g
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub omega: f64,
    pub kept_points: Vec<[f64; 2]>,
    pub period: Option<usize>,
    pub escaped: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    pub warnings: Vec<String>,
}

fn steady_record(map: &MapHandle, cfg: &SweepConfig, omega: f64, seed: [f64; 2]) -> SweepRecord {
    let bound = map.at(omega);
    let orbit = iterate(&bound, seed, cfg.transient, cfg.keep, cfg.escape_radius);
    let period = if orbit.escaped { None } else { period_of(&orbit.points, cfg.period_tol, cfg.period_max) };
    SweepRecord { omega, kept_points: orbit.points, period, escaped: orbit.escaped }
}

/// Period of a kept-point sequence, shrinking the search bound when few points were kept.
fn period_of(points: &[[f64; 2]], tol: f64, period_max: usize) -> Option<usize> {
    let bound = period_max.min(points.len() / 2);
    if bound == 0 {
        return None;
    }
    detect_period(points, tol, bound).ok().flatten()
}

/// Steady-state samples along a uniform frequency grid.
pub fn sweep(cfg: &SweepConfig, map: &MapHandle) -> Result<SweepOutcome, FeigenbaumError> {
    cfg.validate()?;
    let grid = cfg.grid();
    let records: Vec<SweepRecord> = match cfg.seed_mode {
        SeedMode::Fixed => grid.par_iter().map(|&w| steady_record(map, cfg, w, cfg.seed)).collect(),
        SeedMode::Continuation => {
            let mut seed = cfg.seed;
            let mut out = Vec::with_capacity(grid.len());
            for &w in &grid {
                let rec = steady_record(map, cfg, w, seed);
                if !rec.escaped {
                    if let Some(&last) = rec.kept_points.last() {
                        seed = last;
                    }
                }
                out.push(rec);
            }
            out
        }
    };
    let mut warnings = Vec::new();
    if records.iter().all(|r| r.escaped) {
        warnings.push(format!("every orbit escaped over omega in [{}, {}]", cfg.omega_min, cfg.omega_max));
    }
    Ok(SweepOutcome { records, warnings })
}

/// Newton continuation of a period-`k` fixed point along `omegas`, each
/// solve seeded with the previous solution. Stops at the first failure.
pub fn unstable_trail(
    omegas: &[f64],
    k: usize,
    guess: [f64; 2],
    map: &MapHandle,
    opts: &NewtonOptions,
) -> Result<Vec<FixedPointResult>, FeigenbaumError> {
    let mut trail = Vec::new();
    let mut seed = guess;
    for (i, &w) in omegas.iter().enumerate() {
        let fp = newton_fixed_point(&map.at(w), k, seed, opts)?;
        if !fp.converged {
            if i == 0 {
                return Err(FeigenbaumError::TrailStart {
                    omega: w,
                    reason: fp.diagnostic.unwrap_or_default(),
                });
            }
            break;
        }
        seed = fp.location;
        trail.push(fp);
    }
    Ok(trail)
}

/// Rectangle `q_lo <= q <= q_hi`, `p_lo <= p <= p_hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub q_lo: f64,
    pub q_hi: f64,
    pub p_lo: f64,
    pub p_hi: f64,
}

impl Window {
    pub fn contains(&self, z: [f64; 2]) -> bool {
        (self.q_lo..=self.q_hi).contains(&z[0]) && (self.p_lo..=self.p_hi).contains(&z[1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttractorConfig {
    pub omega: f64,
    pub transient: usize,
    pub keep: usize,
    pub window: Option<Window>,
    pub seed: [f64; 2],
    pub escape_radius: f64,
    /// Number of independent orbits; `1` is the sequential default.
    pub workers: usize,
}

impl AttractorConfig {
    pub fn new(omega: f64, seed: [f64; 2]) -> Self {
        AttractorConfig {
            omega,
            transient: DEFAULT_CLOUD_TRANSIENT,
            keep: DEFAULT_CLOUD_KEEP,
            window: None,
            seed,
            escape_radius: DEFAULT_ESCAPE_RADIUS,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttractorOutcome {
    /// Kept points inside the window (all kept points without one).
    pub points: Vec<[f64; 2]>,
    pub escaped: bool,
    pub diagnostic: Option<String>,
    /// Period of the unfiltered orbit, if one `<= DEFAULT_MAX_PERIOD` exists.
    pub period: Option<usize>,
}

/// Seed offset between parallel workers.
const WORKER_SEED_OFFSET: f64 = 1e-7;

/// Iterates past the transient and collects `keep` points.
///
/// With `workers > 1`, worker `w` starts at `seed + (w * 1e-7, 0)`, runs its
/// own transient and keeps its share of the points; output is concatenated in
/// worker order, so it is deterministic for a given worker count.
pub fn attractor_cloud(cfg: &AttractorConfig, map: &MapHandle) -> Result<AttractorOutcome, FeigenbaumError> {
    if let Some(w) = cfg.window {
        if !(w.q_lo < w.q_hi && w.p_lo < w.p_hi) {
            return Err(FeigenbaumError::EmptyWindow(w));
        }
    }
    let workers = cfg.workers.max(1);
    let bound = map.at(cfg.omega);
    let share = |w: usize| cfg.keep / workers + usize::from(w < cfg.keep % workers);
    let run = |w: usize| {
        let seed = [cfg.seed[0] + w as f64 * WORKER_SEED_OFFSET, cfg.seed[1]];
        iterate(&bound, seed, cfg.transient, share(w), cfg.escape_radius)
    };
    let orbits: Vec<_> = if workers == 1 { vec![run(0)] } else { (0..workers).into_par_iter().map(run).collect() };

    let mut diagnostic = None;
    let mut escaped = false;
    let mut all = Vec::with_capacity(cfg.keep);
    for (w, orbit) in orbits.into_iter().enumerate() {
        if orbit.escaped {
            escaped = true;
            let step = orbit.escape_step.unwrap_or(0);
            diagnostic.get_or_insert_with(|| {
                if step < cfg.transient {
                    format!("orbit {w} escaped during the transient at application {step}")
                } else {
                    format!("orbit {w} escaped after {} kept points", orbit.points.len())
                }
            });
            if step < cfg.transient {
                continue;
            }
        }
        all.extend(orbit.points);
    }
    let period = if escaped { None } else { period_of(&all, DEFAULT_PERIOD_TOL, DEFAULT_MAX_PERIOD) };
    let points = match cfg.window {
        Some(win) => all.into_iter().filter(|&z| win.contains(z)).collect(),
        None => all,
    };
    Ok(AttractorOutcome { points, escaped, diagnostic, period })
}
