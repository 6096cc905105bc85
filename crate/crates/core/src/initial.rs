//! Built-in initial data generators.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::solver::State;
use crate::spectral::{Field, Grid};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// Uniform noise of the given amplitude around a constant. The seed is
    /// not part of the serialized form; configs carry one top-level seed.
    Random {
        #[serde(default)]
        phi_mean: f64,
        #[serde(default = "default_amplitude")]
        phi_amplitude: f64,
        #[serde(default = "default_sigma_mean")]
        sigma_mean: f64,
        #[serde(default)]
        sigma_amplitude: f64,
        #[serde(skip)]
        seed: u64,
    },
    /// Smooth tanh bump centred in the domain.
    Bump {
        radius: f64,
        width: f64,
        inside: f64,
        outside: f64,
        sigma: f64,
    },
    Checkerboard {
        tiles: usize,
        phi_amplitude: f64,
        sigma: f64,
    },
    /// Mean plus a single cosine along the first axis.
    Cosine {
        phi_mean: f64,
        phi_amplitude: f64,
        sigma_mean: f64,
        sigma_amplitude: f64,
        mode: usize,
    },
    Constant { phi: f64, sigma: f64 },
}

fn default_amplitude() -> f64 {
    0.05
}

fn default_sigma_mean() -> f64 {
    0.1
}

impl Default for InitialData {
    fn default() -> Self {
        Self::Random {
            phi_mean: 0.0,
            phi_amplitude: 0.05,
            sigma_mean: 0.1,
            sigma_amplitude: 0.0,
            seed: 42,
        }
    }
}

impl InitialData {
    pub fn seed(&self) -> Option<u64> {
        match self {
            Self::Random { seed, .. } => Some(*seed),
            _ => None,
        }
    }

    pub fn with_seed(&self, new_seed: u64) -> Self {
        let mut out = self.clone();
        if let Self::Random { seed, .. } = &mut out {
            *seed = new_seed;
        }
        out
    }

    pub fn generate(&self, grid: &Arc<Grid>) -> State {
        let (phi, sigma) = match *self {
            Self::Random {
                phi_mean,
                phi_amplitude,
                sigma_mean,
                sigma_amplitude,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = grid.len();
                let phi: Vec<f64> = (0..n)
                    .map(|_| phi_mean + phi_amplitude * rng.gen_range(-1.0..=1.0))
                    .collect();
                let sigma: Vec<f64> = (0..n)
                    .map(|_| sigma_mean + sigma_amplitude * rng.gen_range(-1.0..=1.0))
                    .collect();
                (
                    Field::from_raw(grid.clone(), phi),
                    Field::from_raw(grid.clone(), sigma),
                )
            }
            Self::Bump {
                radius,
                width,
                inside,
                outside,
                sigma,
            } => {
                let centre: Vec<f64> = grid.lengths().iter().map(|l| 0.5 * l).collect();
                let phi = Field::from_fn(grid.clone(), |x| {
                    let r = x
                        .iter()
                        .zip(&centre)
                        .map(|(a, c)| (a - c) * (a - c))
                        .sum::<f64>()
                        .sqrt();
                    outside + (inside - outside) * 0.5 * (1.0 - ((r - radius) / width).tanh())
                });
                (phi, Field::constant(grid.clone(), sigma))
            }
            Self::Checkerboard {
                tiles,
                phi_amplitude,
                sigma,
            } => {
                let tiles = tiles.max(1);
                let phi = Field::from_fn(grid.clone(), |x| {
                    let parity: usize = x
                        .iter()
                        .zip(grid.lengths())
                        .map(|(&xi, &l)| ((xi / l * tiles as f64).floor() as usize).min(tiles - 1))
                        .sum();
                    if parity.is_multiple_of(2) {
                        phi_amplitude
                    } else {
                        -phi_amplitude
                    }
                });
                (phi, Field::constant(grid.clone(), sigma))
            }
            Self::Cosine {
                phi_mean,
                phi_amplitude,
                sigma_mean,
                sigma_amplitude,
                mode,
            } => {
                let l = grid.lengths()[0];
                let wave = move |x: &[f64]| (PI * mode as f64 * x[0] / l).cos();
                (
                    Field::from_fn(grid.clone(), |x| phi_mean + phi_amplitude * wave(x)),
                    Field::from_fn(grid.clone(), |x| sigma_mean + sigma_amplitude * wave(x)),
                )
            }
            Self::Constant { phi, sigma } => (
                Field::constant(grid.clone(), phi),
                Field::constant(grid.clone(), sigma),
            ),
        };
        State { t: 0.0, phi, sigma }
    }
}
