//! Rectangular Neumann grids and their cosine eigenbasis.
//!
//! Points sit at cell midpoints `x_i = (i + 1/2) h`. On such a grid the
//! sampled cosines `cos(pi k x / L)`, `k < N`, are exactly orthogonal under
//! the discrete inner product `h * sum(u_i v_i)`, so the discrete shifted
//! Laplacian `A = -Laplace + I` is diagonal in mode space with eigenvalues
//! `1 + sum_axis (pi k_axis / L_axis)^2`.
//!
//! Mode coefficients are stored against the L2-orthonormal basis
//! `w_k = prod_axis c_k cos(pi k x / L)` with `c_0 = 1/sqrt(L)` and
//! `c_k = sqrt(2/L)`, which makes Parseval hold with no extra weights.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("dims must be 1, 2 or 3 (got {0})")]
    Dims(usize),
    #[error("expected {expected} {what}, got {got}")]
    Arity {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("length along axis {axis} must be positive and finite (got {value})")]
    Length { axis: usize, value: f64 },
    #[error("resolution along axis {axis} must be at least 4 (got {value})")]
    Resolution { axis: usize, value: usize },
    #[error("expected {expected} values, got {got}")]
    Size { expected: usize, got: usize },
    #[error("non-finite value at point {0}")]
    NonFinite(usize),
    #[error("fields live on different grids")]
    Mismatch,
}

/// Axis-aligned box `[0, L_0] x ... x [0, L_{d-1}]` sampled at cell midpoints.
pub struct Grid {
    lengths: Vec<f64>,
    resolution: Vec<usize>,
    strides: Vec<usize>,
    cell_volume: f64,
    eigenvalues: Vec<f64>,
    plans: Vec<Arc<dyn TransformType2And3<f64>>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("lengths", &self.lengths)
            .field("resolution", &self.resolution)
            .field("cell_volume", &self.cell_volume)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.lengths == other.lengths && self.resolution == other.resolution
    }
}

/// Validates the geometry and builds a shareable grid.
pub fn build_grid(
    dims: usize,
    lengths: &[f64],
    resolution: &[usize],
) -> Result<Arc<Grid>, GridError> {
    Grid::new(dims, lengths, resolution).map(Arc::new)
}

impl Grid {
    pub fn new(dims: usize, lengths: &[f64], resolution: &[usize]) -> Result<Self, GridError> {
        if !(1..=3).contains(&dims) {
            return Err(GridError::Dims(dims));
        }
        if lengths.len() != dims {
            return Err(GridError::Arity {
                what: "lengths",
                expected: dims,
                got: lengths.len(),
            });
        }
        if resolution.len() != dims {
            return Err(GridError::Arity {
                what: "resolution entries",
                expected: dims,
                got: resolution.len(),
            });
        }
        for (axis, &value) in lengths.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(GridError::Length { axis, value });
            }
        }
        for (axis, &value) in resolution.iter().enumerate() {
            if value < 4 {
                return Err(GridError::Resolution { axis, value });
            }
        }

        let mut strides = vec![1; dims];
        for axis in (0..dims.saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * resolution[axis + 1];
        }
        let cell_volume = lengths
            .iter()
            .zip(resolution)
            .map(|(l, &n)| l / n as f64)
            .product();

        let total: usize = resolution.iter().product();
        let mut eigenvalues = vec![1.0; total];
        for (flat, lambda) in eigenvalues.iter_mut().enumerate() {
            for axis in 0..dims {
                let k = (flat / strides[axis]) % resolution[axis];
                let wave = PI * k as f64 / lengths[axis];
                *lambda += wave * wave;
            }
        }

        let mut planner = DctPlanner::new();
        let plans = resolution.iter().map(|&n| planner.plan_dct2(n)).collect();

        Ok(Self {
            lengths: lengths.to_vec(),
            resolution: resolution.to_vec(),
            strides,
            cell_volume,
            eigenvalues,
            plans,
        })
    }

    pub fn dims(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// `|Omega|`, the product of the side lengths.
    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.resolution[axis] as f64
    }

    /// Eigenvalues of `A` indexed like the mode coefficients (row-major).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, flat: usize) -> f64 {
        self.eigenvalues[flat]
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        (0..self.dims())
            .map(|axis| (flat / self.strides[axis]) % self.resolution[axis])
            .collect()
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.strides)
            .map(|(i, s)| i * s)
            .sum()
    }

    /// Physical coordinates of grid point `flat`.
    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .into_iter()
            .enumerate()
            .map(|(axis, i)| (i as f64 + 0.5) * self.spacing(axis))
            .collect()
    }

    /// Value of the orthonormal eigenfunction with multi-index `k` at `x`.
    pub fn basis_function(&self, k: &[usize], x: &[f64]) -> f64 {
        k.iter()
            .zip(x)
            .zip(&self.lengths)
            .map(|((&k, &x), &l)| {
                let c = if k == 0 { (1.0 / l).sqrt() } else { (2.0 / l).sqrt() };
                c * (PI * k as f64 * x / l).cos()
            })
            .product()
    }

    /// Same resolution, every axis refined by `factor`; used for dealiased
    /// quadrature of polynomial nonlinearities.
    pub fn refined(&self, factor: usize) -> Result<Grid, GridError> {
        let res: Vec<usize> = self.resolution.iter().map(|n| n * factor.max(1)).collect();
        Grid::new(self.dims(), &self.lengths, &res)
    }

    fn norm_factor(&self, axis: usize, k: usize) -> f64 {
        let l = self.lengths[axis];
        if k == 0 {
            (1.0 / l).sqrt()
        } else {
            (2.0 / l).sqrt()
        }
    }

    fn check_len(&self, data: &[f64]) {
        assert_eq!(data.len(), self.len(), "buffer does not match grid size");
    }

    fn for_each_line(&self, data: &mut [f64], axis: usize, mut f: impl FnMut(&mut [f64])) {
        let n = self.resolution[axis];
        let stride = self.strides[axis];
        let outer = data.len() / (n * stride);
        let mut line = vec![0.0; n];
        for o in 0..outer {
            for i in 0..stride {
                let base = o * n * stride + i;
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + j * stride];
                }
                f(&mut line);
                for (j, value) in line.iter().enumerate() {
                    data[base + j * stride] = *value;
                }
            }
        }
    }

    fn cosine_analysis(&self, data: &mut [f64], axis: usize) {
        let plan = self.plans[axis].clone();
        let h = self.spacing(axis);
        let c0 = h * self.norm_factor(axis, 0);
        let ck = h * self.norm_factor(axis, 1);
        self.for_each_line(data, axis, |line| {
            plan.process_dct2(line);
            line[0] *= c0;
            for v in &mut line[1..] {
                *v *= ck;
            }
        });
    }

    fn cosine_synthesis(&self, data: &mut [f64], axis: usize) {
        let plan = self.plans[axis].clone();
        let c0 = 2.0 * self.norm_factor(axis, 0);
        let ck = self.norm_factor(axis, 1);
        self.for_each_line(data, axis, |line| {
            line[0] *= c0;
            for v in &mut line[1..] {
                *v *= ck;
            }
            plan.process_dct3(line);
        });
    }

    /// Mode coefficients to sampled x-derivative (a sine series).
    fn derivative_synthesis(&self, data: &mut [f64], axis: usize) {
        let plan = self.plans[axis].clone();
        let ck = self.norm_factor(axis, 1);
        let wave = PI / self.lengths[axis];
        self.for_each_line(data, axis, |line| {
            let n = line.len();
            for k in 1..n {
                line[k - 1] = -ck * wave * k as f64 * line[k];
            }
            line[n - 1] = 0.0;
            plan.process_dst3(line);
        });
    }

    /// Sampled sine series to the mode coefficients of its x-derivative.
    fn derivative_analysis(&self, data: &mut [f64], axis: usize) {
        let plan = self.plans[axis].clone();
        let ck = self.norm_factor(axis, 1);
        let wave = PI / self.lengths[axis];
        self.for_each_line(data, axis, |line| {
            let n = line.len();
            plan.process_dst2(line);
            for k in (1..n).rev() {
                let sine_coeff = 2.0 / n as f64 * line[k - 1];
                line[k] = sine_coeff * wave * k as f64 / ck;
            }
            line[0] = 0.0;
        });
    }

    /// Grid values to orthonormal mode coefficients.
    pub fn forward(&self, values: &[f64]) -> Vec<f64> {
        self.check_len(values);
        let mut data = values.to_vec();
        for axis in 0..self.dims() {
            self.cosine_analysis(&mut data, axis);
        }
        data
    }

    /// Orthonormal mode coefficients to grid values.
    pub fn inverse(&self, coefficients: &[f64]) -> Vec<f64> {
        self.check_len(coefficients);
        let mut data = coefficients.to_vec();
        for axis in 0..self.dims() {
            self.cosine_synthesis(&mut data, axis);
        }
        data
    }

    /// Pointwise gradient, one component per axis, evaluated spectrally.
    pub fn gradient(&self, values: &[f64]) -> Vec<Vec<f64>> {
        let modes = self.forward(values);
        (0..self.dims())
            .map(|d| {
                let mut data = modes.clone();
                for axis in 0..self.dims() {
                    if axis == d {
                        self.derivative_synthesis(&mut data, axis);
                    } else {
                        self.cosine_synthesis(&mut data, axis);
                    }
                }
                data
            })
            .collect()
    }

    /// Mode coefficients of `div F` for a flux with vanishing normal
    /// component, i.e. component `d` is a sine series along axis `d`.
    pub fn divergence_modes(&self, flux: &[Vec<f64>]) -> Vec<f64> {
        assert_eq!(flux.len(), self.dims(), "one flux component per axis");
        let mut out = vec![0.0; self.len()];
        for (d, component) in flux.iter().enumerate() {
            self.check_len(component);
            let mut data = component.clone();
            for axis in 0..self.dims() {
                if axis == d {
                    self.derivative_analysis(&mut data, axis);
                } else {
                    self.cosine_analysis(&mut data, axis);
                }
            }
            for (o, v) in out.iter_mut().zip(&data) {
                *o += v;
            }
        }
        out
    }

    pub fn divergence(&self, flux: &[Vec<f64>]) -> Vec<f64> {
        self.inverse(&self.divergence_modes(flux))
    }
}

/// Evaluates nonlinear terms of a mode expansion on a finer grid and
/// projects back, so products up to a known polynomial degree are
/// integrated without aliasing. A factor of 1 is plain collocation.
#[derive(Debug, Clone)]
pub struct Quadrature {
    coarse: Arc<Grid>,
    fine: Arc<Grid>,
    // coarse flat index -> fine flat index of the same multi-index
    map: Vec<usize>,
}

impl Quadrature {
    pub fn new(coarse: Arc<Grid>, factor: usize) -> Result<Self, GridError> {
        let factor = factor.max(1);
        let fine = if factor == 1 {
            coarse.clone()
        } else {
            Arc::new(coarse.refined(factor)?)
        };
        let map = (0..coarse.len())
            .map(|k| fine.flat_index(&coarse.multi_index(k)))
            .collect();
        Ok(Self { coarse, fine, map })
    }

    pub fn collocation(grid: Arc<Grid>) -> Self {
        let map = (0..grid.len()).collect();
        Self {
            coarse: grid.clone(),
            fine: grid,
            map,
        }
    }

    pub fn coarse(&self) -> &Arc<Grid> {
        &self.coarse
    }

    pub fn fine(&self) -> &Arc<Grid> {
        &self.fine
    }

    pub fn is_collocation(&self) -> bool {
        Arc::ptr_eq(&self.coarse, &self.fine)
    }

    /// Coarse coefficients to fine-grid coefficients (zero padded).
    pub fn pad(&self, coefficients: &[f64]) -> Vec<f64> {
        if self.is_collocation() {
            return coefficients.to_vec();
        }
        let mut out = vec![0.0; self.fine.len()];
        for (c, &f) in coefficients.iter().zip(&self.map) {
            out[f] = *c;
        }
        out
    }

    /// Fine-grid coefficients truncated to the coarse modes.
    pub fn truncate(&self, fine_coefficients: &[f64]) -> Vec<f64> {
        self.map.iter().map(|&f| fine_coefficients[f]).collect()
    }

    /// Coarse coefficients to values on the fine grid.
    pub fn lift(&self, coefficients: &[f64]) -> Vec<f64> {
        self.fine.inverse(&self.pad(coefficients))
    }

    /// Fine-grid values to the coarse coefficients of their L2 projection.
    pub fn project(&self, fine_values: &[f64]) -> Vec<f64> {
        self.truncate(&self.fine.forward(fine_values))
    }
}

/// A real scalar field sampled on a [`Grid`].
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        *self.grid == *other.grid && self.values == other.values
    }
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Size {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    /// Skips the finiteness scan; callers guarantee the length.
    pub(crate) fn from_raw(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: Arc<Grid>, value: f64) -> Self {
        let n = grid.len();
        Self::from_raw(grid, vec![value; n])
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        Self::from_raw(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Self::from_raw(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert!(self.same_grid(other));
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_raw(self.grid.clone(), values)
    }

    pub fn to_modes(&self) -> ModeRep {
        ModeRep {
            grid: self.grid.clone(),
            coefficients: self.grid.forward(&self.values),
        }
    }

    /// Discrete L2 inner product `h * sum(u_i v_i)`.
    pub fn inner(&self, other: &Field) -> f64 {
        debug_assert!(self.same_grid(other));
        self.grid.cell_volume()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    pub fn mean_value(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn apply_a(&self) -> Field {
        self.to_modes().scale_by_eigenvalue(1.0).to_field()
    }

    pub fn apply_a_inv(&self) -> Field {
        self.to_modes().scale_by_eigenvalue(-1.0).to_field()
    }

    /// Spectral Laplacian, `-(A - I)`.
    pub fn laplacian(&self) -> Field {
        let mut modes = self.to_modes();
        for (c, lambda) in modes.coefficients.iter_mut().zip(self.grid.eigenvalues()) {
            *c *= 1.0 - lambda;
        }
        modes.to_field()
    }

    pub fn norms(&self) -> DualNormReport {
        self.to_modes().norms()
    }
}

/// Coefficients against the orthonormal cosine eigenbasis of `A`.
#[derive(Debug, Clone)]
pub struct ModeRep {
    grid: Arc<Grid>,
    coefficients: Vec<f64>,
}

impl ModeRep {
    pub fn new(grid: Arc<Grid>, coefficients: Vec<f64>) -> Result<Self, GridError> {
        if coefficients.len() != grid.len() {
            return Err(GridError::Size {
                expected: grid.len(),
                got: coefficients.len(),
            });
        }
        Ok(Self { grid, coefficients })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Self {
            grid,
            coefficients: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }

    pub fn eigenvalue(&self, flat: usize) -> f64 {
        self.grid.eigenvalue(flat)
    }

    pub fn to_field(&self) -> Field {
        Field::from_raw(self.grid.clone(), self.grid.inverse(&self.coefficients))
    }

    /// Multiplies coefficient `k` by `lambda_k^power`.
    pub fn scale_by_eigenvalue(mut self, power: f64) -> ModeRep {
        for (c, lambda) in self.coefficients.iter_mut().zip(self.grid.eigenvalues()) {
            *c *= lambda.powf(power);
        }
        self
    }

    /// `sqrt(sum lambda_k^s a_k^2)`; `s = 1` is the H1 norm, `s = -1` the
    /// dual norm and `s = 3` the H3 norm used by the regularity probe.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.coefficients
            .iter()
            .zip(self.grid.eigenvalues())
            .map(|(a, lambda)| lambda.powf(s) * a * a)
            .sum::<f64>()
            .sqrt()
    }

    /// `sqrt(sum (lambda_k - 1) a_k^2)`, the L2 norm of the gradient.
    pub fn gradient_norm(&self) -> f64 {
        self.coefficients
            .iter()
            .zip(self.grid.eigenvalues())
            .map(|(a, lambda)| (lambda - 1.0) * a * a)
            .sum::<f64>()
            .sqrt()
    }

    pub fn norms(&self) -> DualNormReport {
        DualNormReport {
            l2: self.sobolev_norm(0.0),
            h1: self.sobolev_norm(1.0),
            h1_dual: self.sobolev_norm(-1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualNormReport {
    pub l2: f64,
    pub h1: f64,
    pub h1_dual: f64,
}

pub fn to_modes(field: &Field) -> ModeRep {
    field.to_modes()
}

pub fn from_modes(rep: &ModeRep) -> Field {
    rep.to_field()
}

pub fn apply_a(field: &Field) -> Field {
    field.apply_a()
}

pub fn apply_a_inv(field: &Field) -> Field {
    field.apply_a_inv()
}

pub fn norms(field: &Field) -> DualNormReport {
    field.norms()
}

pub fn mean_value(field: &Field) -> f64 {
    field.mean_value()
}
