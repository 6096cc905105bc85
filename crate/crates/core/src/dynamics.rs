//! Long-time experiments on top of the solver: energy audits, convergence
//! to equilibria, sensitivity to the initial data and norm tracking.

use crate::potentials::ProliferationMode;
use crate::solver::{run, ModelParams, RunOptions, SolverError, State};
use crate::spectral::Field;
use crate::stationary::{constant_states, stationary_residual, RootOptions, StationaryPoint};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AuditError {
    #[error("energy table is empty")]
    Empty,
    #[error("energy table has no `{0}` column")]
    MissingColumn(&'static str),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditViolation {
    /// Zero-based data row (the header and `#` lines are not counted).
    pub row: usize,
    pub t: f64,
    pub previous: f64,
    pub energy: f64,
}

/// Rows of an energy CSV where `E` rose by more than `1e-10 (1 + |E|)`.
pub fn lyapunov_audit(csv: &str) -> Result<Vec<AuditViolation>, AuditError> {
    lyapunov_audit_with(csv, 1e-10)
}

pub fn lyapunov_audit_with(csv: &str, tol: f64) -> Result<Vec<AuditViolation>, AuditError> {
    let mut lines = csv
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, header) = lines.next().ok_or(AuditError::Empty)?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &'static str| {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or(AuditError::MissingColumn(name))
    };
    let t_col = find("t")?;
    let e_col = find("E")?;

    let mut out = Vec::new();
    let mut previous: Option<f64> = None;
    for (row, (index, line)) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |col: usize| -> Result<f64, AuditError> {
            let raw = fields.get(col).ok_or_else(|| AuditError::Parse {
                line: index + 1,
                message: format!("expected {} fields, found {}", columns.len(), fields.len()),
            })?;
            raw.parse::<f64>().map_err(|e| AuditError::Parse {
                line: index + 1,
                message: format!("`{raw}`: {e}"),
            })
        };
        let t = get(t_col)?;
        let e = get(e_col)?;
        if let Some(prev) = previous {
            if e > prev + tol * (1.0 + prev.abs()) {
                out.push(AuditViolation {
                    row,
                    t,
                    previous: prev,
                    energy: e,
                });
            }
        }
        previous = Some(e);
    }
    Ok(out)
}

/// `||phi||_{H1*}` of a field.
fn dual(f: &Field) -> f64 {
    f.norms().h1_dual
}

fn difference(a: &Field, b: &Field) -> Field {
    a.zip_map(b, |x, y| x - y)
}

#[derive(Debug, Clone)]
pub struct OmegaConfig {
    pub initial: State,
    pub params: ModelParams,
    pub horizon: f64,
    pub run: RunOptions,
    /// Convergence threshold for `||phi_t||_{H1*} + ||sigma_t||_{H1*}`.
    pub velocity_tol: f64,
    /// Extra stationary points to measure the distance against.
    pub known: Vec<StationaryPoint>,
}

#[derive(Debug, Clone)]
pub struct OmegaLimitReport {
    pub phi_velocity: f64,
    pub sigma_velocity: f64,
    /// `L2 x L2` distance of the final state to the nearest known
    /// stationary point (constant states plus any supplied ones).
    pub distance_to_known: f64,
    pub energy_plateau: f64,
    pub converged: bool,
    /// `max(r1, r2)` of the final state.
    pub final_residual: f64,
    pub mass_level: f64,
    pub final_state: State,
    /// Snapshots at the run's cadence, for [`regularity_probe`].
    pub snapshots: Vec<State>,
    pub steps: usize,
}

pub fn omega_limit_probe(cfg: &OmegaConfig) -> Result<OmegaLimitReport, SolverError> {
    let grid = cfg.initial.grid().clone();
    let m = cfg.initial.mass() / grid.volume();
    let summary = run(&cfg.initial, &cfg.params, cfg.horizon, &cfg.run)?;
    let last = summary.reports.last().expect("at least the initial report");
    // backward difference over the last snapshot interval, or over the
    // last step when no cadence is set
    let n = summary.snapshots.len();
    let (phi_velocity, sigma_velocity) = if summary.steps == 0 {
        (0.0, 0.0)
    } else if cfg.run.snapshot_every.is_some() && n >= 2 {
        let (a, b) = (&summary.snapshots[n - 2], &summary.snapshots[n - 1]);
        let h = b.t - a.t;
        (dual(&difference(&b.phi, &a.phi)) / h, dual(&difference(&b.sigma, &a.sigma)) / h)
    } else {
        (last.h1dual_phit, last.h1dual_sigmat)
    };
    let end = &summary.final_state;
    let mut candidates = constant_states(&grid, m, &cfg.params, &RootOptions::default());
    candidates.extend(cfg.known.iter().cloned());
    let distance_to_known = candidates
        .iter()
        .map(|p| {
            let a = difference(&end.phi, &p.phi_star).l2_norm();
            let b = difference(&end.sigma, &p.sigma_star).l2_norm();
            a.hypot(b)
        })
        .fold(f64::INFINITY, f64::min);
    let r = stationary_residual(end, m, &cfg.params);
    Ok(OmegaLimitReport {
        phi_velocity,
        sigma_velocity,
        distance_to_known,
        energy_plateau: last.energy,
        converged: phi_velocity + sigma_velocity < cfg.velocity_tol,
        final_residual: r.r1.max(r.r2),
        mass_level: m,
        final_state: summary.final_state,
        snapshots: summary.snapshots,
        steps: summary.steps,
    })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DependenceError {
    #[error("continuous dependence is only claimed for unit mobilities")]
    Mobility,
    #[error("continuous dependence needs a proliferation function in P2 mode")]
    Proliferation,
    #[error("epsilon must be non-negative and finite")]
    Epsilon,
    #[error("sample times must be positive and increasing")]
    Samples,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone)]
pub struct DependenceConfig {
    pub initial: State,
    pub params: ModelParams,
    /// Fixed step; the guard is switched off so all runs share it.
    pub run: RunOptions,
    pub epsilon: f64,
    pub sample_times: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependenceSample {
    pub t: f64,
    pub d_eps: f64,
    pub d_half: f64,
    /// `d_eps / d_half`, NaN when both vanish.
    pub ratio: f64,
    /// `d_eps(t) / d_eps(0)`.
    pub growth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceReport {
    pub epsilon: f64,
    pub d0: f64,
    pub samples: Vec<DependenceSample>,
}

/// Product of the first cosine along each axis.
pub fn perturbation_direction(grid: &std::sync::Arc<crate::spectral::Grid>) -> Field {
    let lengths = grid.lengths().to_vec();
    Field::from_fn(grid.clone(), |x| {
        x.iter()
            .zip(&lengths)
            .map(|(xi, l)| (std::f64::consts::PI * xi / l).cos())
            .product()
    })
}

fn dual_distance(a: &State, b: &State) -> f64 {
    dual(&difference(&a.phi, &b.phi)) + dual(&difference(&a.sigma, &b.sigma))
}

pub fn continuous_dependence_experiment(cfg: &DependenceConfig) -> Result<DependenceReport, DependenceError> {
    if !cfg.params.unit_mobilities() {
        return Err(DependenceError::Mobility);
    }
    if cfg.params.p.mode != ProliferationMode::P2 {
        return Err(DependenceError::Proliferation);
    }
    if !(cfg.epsilon.is_finite() && cfg.epsilon >= 0.0) {
        return Err(DependenceError::Epsilon);
    }
    if cfg.sample_times.is_empty()
        || cfg.sample_times[0] <= 0.0
        || cfg.sample_times.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(DependenceError::Samples);
    }
    let w = perturbation_direction(cfg.initial.grid());
    let shifted = |scale: f64| State {
        phi: cfg.initial.phi.zip_map(&w, |a, b| a + scale * b),
        ..cfg.initial.clone()
    };
    let mut opts = cfg.run.clone();
    opts.scheme.guard = false;
    opts.snapshot_every = None;

    let mut runs = [cfg.initial.clone(), shifted(cfg.epsilon), shifted(0.5 * cfg.epsilon)];
    let d0 = dual_distance(&runs[1], &runs[0]);
    let mut samples = Vec::new();
    let mut t = 0.0;
    for &target in &cfg.sample_times {
        for state in runs.iter_mut() {
            *state = run(state, &cfg.params, target - t, &opts)?.final_state;
        }
        t = target;
        let d_eps = dual_distance(&runs[1], &runs[0]);
        let d_half = dual_distance(&runs[2], &runs[0]);
        samples.push(DependenceSample {
            t,
            d_eps,
            d_half,
            ratio: d_eps / d_half,
            growth: d_eps / d0,
        });
    }
    Ok(DependenceReport {
        epsilon: cfg.epsilon,
        d0,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    /// `(t, ||phi||_{H3}, ||sigma||_{H1})` per snapshot.
    pub series: Vec<(f64, f64, f64)>,
    /// Sup of `||phi||_{H3} + ||sigma||_{H1}` over the window.
    pub sup: f64,
    pub median: f64,
    pub flagged: bool,
}

/// Norm series over the snapshots with `t >= t_from`; flags the run when
/// the max/median ratio exceeds `sanity`.
pub fn regularity_probe(snapshots: &[State], t_from: f64, sanity: f64) -> RegularityReport {
    let series: Vec<(f64, f64, f64)> = snapshots
        .iter()
        .map(|s| {
            (
                s.t,
                s.phi.to_modes().sobolev_norm(3.0),
                s.sigma.to_modes().sobolev_norm(1.0),
            )
        })
        .collect();
    let mut window: Vec<f64> = series
        .iter()
        .filter(|(t, _, _)| *t >= t_from)
        .map(|(_, a, b)| a + b)
        .collect();
    window.sort_by(f64::total_cmp);
    let sup = window.last().copied().unwrap_or(0.0);
    let median = if window.is_empty() { 0.0 } else { window[window.len() / 2] };
    let flagged = !sup.is_finite() || (median > 0.0 && sup / median > sanity);
    RegularityReport {
        series,
        sup,
        median,
        flagged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::InitialData;
    use crate::solver::{energy, EnergyReport};
    use crate::spectral::build_grid;

    fn csv(energies: &[f64]) -> String {
        let mut s = String::from("# seed=1\nt,dt_used,E\n");
        for (i, e) in energies.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", i as f64 * 0.1, 0.1, e));
        }
        s
    }

    #[test]
    fn audit_flags_exactly_the_increase() {
        let v = lyapunov_audit(&csv(&[3.0, 2.0, 2.5, 1.0])).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].row, 2);
        assert!(lyapunov_audit(&csv(&[1.0, 1.0, 1.0])).unwrap().is_empty());
        assert_eq!(lyapunov_audit("t,x\n0,1\n"), Err(AuditError::MissingColumn("E")));
        assert!(matches!(lyapunov_audit("t,E\n0,abc\n"), Err(AuditError::Parse { line: 2, .. })));
        assert_eq!(lyapunov_audit("# only a comment\n"), Err(AuditError::Empty));
    }

    #[test]
    fn audit_reads_the_solver_schema() {
        let header = EnergyReport::CSV_HEADER.join(",");
        let mut r = EnergyReport { energy: 1.0, ..EnergyReport::default() };
        let row = |r: &EnergyReport| r.csv_values().map(|v| format!("{v:e}")).join(",");
        let mut text = format!("{header}\n{}\n", row(&r));
        r.energy = 1.0 + 1e-12;
        text.push_str(&format!("{}\n", row(&r)));
        assert!(lyapunov_audit(&text).unwrap().is_empty());
        r.energy = 1.1;
        text.push_str(&format!("{}\n", row(&r)));
        assert_eq!(lyapunov_audit(&text).unwrap().len(), 1);
    }

    #[test]
    fn stationary_start_is_a_fixed_point() {
        let g = build_grid(1, &[1.0], &[16]).unwrap();
        let params = ModelParams { chi_phi: 0.0, ..ModelParams::default() };
        let c = constant_states(&g, 0.0, &params, &RootOptions::default()).remove(0);
        let cfg = OmegaConfig {
            initial: c.state(),
            params,
            horizon: 1.0,
            run: RunOptions::default(),
            velocity_tol: 1e-6,
            known: Vec::new(),
        };
        let r = omega_limit_probe(&cfg).unwrap();
        assert!(r.converged);
        assert!(r.distance_to_known < 1e-14);
        assert!((r.energy_plateau - energy(&c.state(), &cfg.params).energy).abs() < 1e-14);
    }

    #[test]
    fn zero_perturbation_gives_zero_distance() {
        let g = build_grid(1, &[6.0], &[32]).unwrap();
        let cfg = DependenceConfig {
            initial: InitialData::default().generate(&g),
            params: ModelParams::default(),
            run: RunOptions { dt: 1e-2, ..RunOptions::default() },
            epsilon: 0.0,
            sample_times: vec![0.1, 0.2],
        };
        let r = continuous_dependence_experiment(&cfg).unwrap();
        assert!(r.samples.iter().all(|s| s.d_eps == 0.0 && s.d_half == 0.0));
    }

    #[test]
    fn dependence_rejects_variable_mobility() {
        use crate::potentials::{MobilityShape, MobilitySpec};
        let g = build_grid(1, &[6.0], &[16]).unwrap();
        let cfg = DependenceConfig {
            initial: InitialData::default().generate(&g),
            params: ModelParams {
                mobility_m: MobilitySpec::Bounded { m0: 0.5, m1: 1.0, shape: MobilityShape::Bump },
                ..ModelParams::default()
            },
            run: RunOptions::default(),
            epsilon: 1e-3,
            sample_times: vec![0.1],
        };
        assert!(matches!(continuous_dependence_experiment(&cfg), Err(DependenceError::Mobility)));
    }

    #[test]
    fn regularity_of_constant_trajectory_is_flat() {
        let g = build_grid(1, &[1.0], &[16]).unwrap();
        let s = InitialData::Constant { phi: 0.3, sigma: 0.1 }.generate(&g);
        let snaps: Vec<State> = (0..5).map(|i| State { t: i as f64, ..s.clone() }).collect();
        let r = regularity_probe(&snaps, 1.0, 1e3);
        assert!(!r.flagged);
        assert!(r.series.windows(2).all(|w| w[0].1 == w[1].1 && w[0].2 == w[1].2));
        assert_eq!(r.sup, r.median);
    }
}
