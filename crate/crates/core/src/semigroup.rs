//! The linearised evolution around a constant state, one symmetric 2x2
//! block per eigenvalue `lambda` of `A`:
//!
//! ```text
//! d/dt (phi, sigma) = [[-lambda^2 - R1 lambda, chi_phi lambda],
//!                      [chi_phi lambda,       -chi_sigma lambda]] (phi, sigma)
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::spectral::Grid;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SemigroupError {
    #[error("eigenvalue must be at least 1 (got {0})")]
    Lambda(f64),
    #[error("chi_sigma must be positive (got {0})")]
    ChiSigma(f64),
    #[error("R1 = {r1} does not exceed 2 chi_phi^2 / chi_sigma = {threshold}")]
    Gap { r1: f64, threshold: f64 },
    #[error("need at least one positive sample time")]
    Samples,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeBlock {
    pub lambda: f64,
    pub matrix: [[f64; 2]; 2],
    /// Ascending.
    pub eigenvalues: [f64; 2],
    pub spectral_abscissa: f64,
    // unit eigenvector of the larger eigenvalue
    axis: [f64; 2],
}

pub fn mode_block(lambda: f64, chi_phi: f64, chi_sigma: f64, r1: f64) -> Result<ModeBlock, SemigroupError> {
    if !(lambda >= 1.0 && lambda.is_finite()) {
        return Err(SemigroupError::Lambda(lambda));
    }
    let a = -lambda * lambda - r1 * lambda;
    let b = chi_phi * lambda;
    let d = -chi_sigma * lambda;
    let (eigenvalues, axis) = if b == 0.0 {
        // decoupled: keep the diagonal exactly
        if a >= d {
            ([d, a], [1.0, 0.0])
        } else {
            ([a, d], [0.0, 1.0])
        }
    } else {
        let mean = 0.5 * (a + d);
        let half = 0.5 * (a - d);
        let radius = half.hypot(b);
        let theta = 0.5 * b.atan2(half);
        ([mean - radius, mean + radius], [theta.cos(), theta.sin()])
    };
    Ok(ModeBlock {
        lambda,
        matrix: [[a, b], [b, d]],
        eigenvalues,
        spectral_abscissa: eigenvalues[1],
        axis,
    })
}

impl ModeBlock {
    pub fn trace(&self) -> f64 {
        self.matrix[0][0] + self.matrix[1][1]
    }

    pub fn determinant(&self) -> f64 {
        self.matrix[0][0] * self.matrix[1][1] - self.matrix[0][1] * self.matrix[1][0]
    }

    /// `exp(t B)` through the spectral projectors.
    pub fn exp(&self, t: f64) -> [[f64; 2]; 2] {
        let [c, s] = self.axis;
        let hi = (t * self.eigenvalues[1]).exp();
        let lo = (t * self.eigenvalues[0]).exp();
        // P_hi = v v^T, P_lo = I - P_hi
        let p = [[c * c, c * s], [c * s, s * s]];
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let id = if i == j { 1.0 } else { 0.0 };
                out[i][j] = hi * p[i][j] + lo * (id - p[i][j]);
            }
        }
        out
    }

    /// Operator norm of `exp(tB)` from the `H^1* x H^1*` weights
    /// `(1/lambda, 1/lambda)` into the `H^1 x L2` weights `(lambda, 1)`.
    pub fn smoothing_gain(&self, t: f64) -> f64 {
        let e = self.exp(t);
        let r = self.lambda.sqrt();
        let m = [[r * r * e[0][0], r * r * e[0][1]], [r * e[1][0], r * e[1][1]]];
        norm2(&m)
    }

    /// Operator norm of `exp(tB)` on `H^1 x L2`.
    pub fn energy_gain(&self, t: f64) -> f64 {
        let e = self.exp(t);
        let r = self.lambda.sqrt();
        let m = [[e[0][0], r * e[0][1]], [e[1][0] / r, e[1][1]]];
        norm2(&m)
    }
}

pub fn evolve_mode(block: &ModeBlock, z0: [f64; 2], t: f64) -> [f64; 2] {
    let e = block.exp(t);
    [
        e[0][0] * z0[0] + e[0][1] * z0[1],
        e[1][0] * z0[0] + e[1][1] * z0[1],
    ]
}

/// Spectral norm of a real 2x2 matrix.
fn norm2(m: &[[f64; 2]; 2]) -> f64 {
    let [[a, b], [c, d]] = *m;
    let frob = a * a + b * b + c * c + d * d;
    let det = a * d - b * c;
    let disc = (frob * frob - 4.0 * det * det).max(0.0).sqrt();
    (0.5 * (frob + disc)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub lambda: f64,
    pub t: f64,
    /// `||T(t) z|| / (2 e^{-omega1 t} ||z||)`; above 1 means the bound failed.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub omega1: f64,
    pub omega2: f64,
    pub smoothing_constant: f64,
    /// Least-squares slope of `log sup_j gain_j(t)` against `log t` at small `t`.
    pub small_t_slope: f64,
    pub n_modes: usize,
    /// Largest ratio observed in the decay check (bound holds when <= 1).
    pub worst_decay_ratio: f64,
    pub violations: Vec<Violation>,
    pub blocks: Vec<ModeBlock>,
    /// Index into `blocks` of the mode attaining `omega1`.
    pub slowest: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayOptions {
    /// Times at which the decay bound is checked.
    pub t_samples: Vec<f64>,
    pub random_vectors: usize,
    pub seed: u64,
    /// Log-spaced times for the smoothing sup, and the small-`t` window
    /// used for the slope fit.
    pub smoothing_range: (f64, f64),
    pub smoothing_points: usize,
    pub slope_window: (f64, f64),
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self {
            t_samples: vec![0.01, 0.1, 1.0, 10.0],
            random_vectors: 100,
            seed: 0,
            smoothing_range: (1e-4, 1e2),
            smoothing_points: 61,
            slope_window: (1e-4, 1e-2),
        }
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

pub fn chemotaxis_gap(chi_phi: f64, chi_sigma: f64, r1: f64) -> f64 {
    r1 - 2.0 * chi_phi * chi_phi / chi_sigma
}

/// Decay and smoothing constants over the eigenvalues of `grid`.
pub fn decay_constants(
    chi_phi: f64,
    chi_sigma: f64,
    r1: f64,
    grid: &Grid,
    opts: &DecayOptions,
) -> Result<DecayReport, SemigroupError> {
    decay_constants_for(chi_phi, chi_sigma, r1, grid.eigenvalues(), opts)
}

/// As [`decay_constants`] for an explicit list of eigenvalues.
pub fn decay_constants_for(
    chi_phi: f64,
    chi_sigma: f64,
    r1: f64,
    lambdas: &[f64],
    opts: &DecayOptions,
) -> Result<DecayReport, SemigroupError> {
    if !(chi_sigma > 0.0) {
        return Err(SemigroupError::ChiSigma(chi_sigma));
    }
    if !(chemotaxis_gap(chi_phi, chi_sigma, r1) > 0.0) {
        return Err(SemigroupError::Gap {
            r1,
            threshold: 2.0 * chi_phi * chi_phi / chi_sigma,
        });
    }
    if !opts.t_samples.iter().any(|t| *t > 0.0) {
        return Err(SemigroupError::Samples);
    }
    let blocks = lambdas
        .iter()
        .map(|&l| mode_block(l, chi_phi, chi_sigma, r1))
        .collect::<Result<Vec<_>, _>>()?;
    let (slowest, omega1) = blocks
        .iter()
        .enumerate()
        .map(|(i, b)| (i, -b.spectral_abscissa))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let omega2 = 0.5 * omega1;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let vectors: Vec<Vec<[f64; 2]>> = (0..opts.random_vectors)
        .map(|_| {
            blocks
                .iter()
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect()
        })
        .collect();

    let mut violations = Vec::new();
    let mut worst = 0.0f64;
    for &t in &opts.t_samples {
        let bound = 2.0 * (-omega1 * t).exp();
        for z in &vectors {
            let mut before = 0.0;
            let mut after = 0.0;
            for (block, zk) in blocks.iter().zip(z) {
                let l = block.lambda;
                before += l * zk[0] * zk[0] + zk[1] * zk[1];
                let w = evolve_mode(block, *zk, t);
                after += l * w[0] * w[0] + w[1] * w[1];
            }
            let ratio = (after / before).sqrt() / bound;
            worst = worst.max(ratio);
            if ratio > 1.0 {
                // attribute to the mode with the largest individual gain
                let (i, _) = blocks
                    .iter()
                    .enumerate()
                    .map(|(i, b)| (i, b.energy_gain(t)))
                    .fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
                violations.push(Violation {
                    lambda: blocks[i].lambda,
                    t,
                    ratio,
                });
            }
        }
    }

    let sup_gain = |t: f64| -> f64 {
        blocks
            .par_iter()
            .map(|b| b.smoothing_gain(t))
            .reduce(|| 0.0, f64::max)
    };
    let times = log_space(opts.smoothing_range.0, opts.smoothing_range.1, opts.smoothing_points);
    let smoothing_constant = times
        .iter()
        .map(|&t| t.sqrt() * (omega2 * t).exp() * sup_gain(t))
        .fold(0.0, f64::max);

    let window = log_space(opts.slope_window.0, opts.slope_window.1, 21);
    let xs: Vec<f64> = window.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = window.iter().map(|&t| sup_gain(t).ln()).collect();
    let small_t_slope = least_squares_slope(&xs, &ys);

    Ok(DecayReport {
        omega1,
        omega2,
        smoothing_constant,
        small_t_slope,
        n_modes: blocks.len(),
        worst_decay_ratio: worst,
        violations,
        blocks,
        slowest,
    })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
