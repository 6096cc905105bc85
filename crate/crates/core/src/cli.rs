//! Command-line front end: `chtumor <command> --config <path> [--out <dir>] [--seed <u64>]`.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{load_config, ConfigError, LoadedConfig, OutputFormat, RunConfig};
use crate::dynamics::{
    continuous_dependence_experiment, lyapunov_audit, omega_limit_probe, regularity_probe, DependenceConfig,
    DependenceError, OmegaConfig,
};
use crate::galerkin::{cross_validate, integrate_galerkin, project_initial, CrossvalError, CrossvalOptions, GalerkinError, GalerkinOptions};
use crate::io::{self, SnapshotError};
use crate::potentials::PotentialError;
use crate::render::{render_heatmap, Colormap, RenderError, RenderOptions};
use crate::semigroup::{decay_constants, DecayOptions, SemigroupError};
use crate::solver::{run, SolverError, State};
use crate::stationary::{boundedness_sweep, constant_states, minimize_energy, MinimizeOptions, RootOptions};

#[derive(Debug, Parser)]
#[command(name = "chtumor", version, about = "Numerical lab for a diffuse-interface tumour growth model with chemotaxis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML). Defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ColormapArg {
    Grayscale,
    Viridis,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time-integrate the grid model; writes the energy CSV and snapshots.
    Simulate,
    /// Integrate the modal truncation; writes energy and coefficient CSVs.
    Galerkin,
    /// Minimise the energy at fixed mass and list the constant stationary states.
    Stationary,
    /// Decay and smoothing constants of the linearised semigroup.
    Semigroup,
    /// Grid solver against the Galerkin system on the same modes.
    Crossval,
    /// Sensitivity of trajectories to a small perturbation of the initial data.
    Dependence,
    /// Long run towards equilibrium with velocity and norm tracking.
    Omega,
    /// Minimisers from many random starts and their common bound.
    Sweep,
    /// Heatmap of a 2D binary snapshot.
    Render {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, value_enum, default_value = "grayscale")]
        colormap: ColormapArg,
        #[arg(long, default_value_t = 4)]
        scale: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Galerkin => "galerkin",
            Self::Stationary => "stationary",
            Self::Semigroup => "semigroup",
            Self::Crossval => "crossval",
            Self::Dependence => "dependence",
            Self::Omega => "omega",
            Self::Sweep => "sweep",
            Self::Render { .. } => "render",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("grid: {0}")]
    Grid(#[from] crate::spectral::GridError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Galerkin(#[from] GalerkinError),
    #[error(transparent)]
    Crossval(#[from] CrossvalError),
    #[error(transparent)]
    Dependence(#[from] DependenceError),
    #[error(transparent)]
    Semigroup(#[from] SemigroupError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

/// What a command produced. `passed` is false when the command ran but its
/// built-in check did not hold.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub passed: bool,
    pub files: Vec<PathBuf>,
    pub summary: Vec<(String, String)>,
}

impl Outcome {
    fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self, command: &str) -> String {
        let mut out = format!("command={command}\nstatus={}\n", if self.passed { "pass" } else { "fail" });
        for (k, v) in &self.summary {
            out.push_str(&format!("{k}={v}\n"));
        }
        for f in &self.files {
            out.push_str(&format!("file={}\n", f.display()));
        }
        out
    }
}

struct Ctx {
    cfg: RunConfig,
    loaded: LoadedConfig,
    dir: PathBuf,
    outcome: Outcome,
}

impl Ctx {
    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|source| CliError::Io { path: path.clone(), source })?;
        self.outcome.files.push(path);
        Ok(())
    }

    fn header(&self) -> String {
        io::header_line(self.cfg.seed, Some(&self.loaded.assumptions))
    }

    fn wants(&self, f: OutputFormat) -> bool {
        self.cfg.output.formats.contains(&f)
    }

    fn save_state(&mut self, stem: &str, s: &State) -> Result<(), CliError> {
        for (name, field) in [("phi", &s.phi), ("sigma", &s.sigma)] {
            if self.wants(OutputFormat::Binary) {
                let mut bytes = Vec::new();
                io::write_snapshot(&mut bytes, field).expect("writing to memory");
                self.write(&format!("{stem}_{name}.bin"), bytes)?;
            }
            if self.wants(OutputFormat::Csv) {
                self.write(&format!("{stem}_{name}.csv"), io::snapshot_csv(field))?;
            }
        }
        Ok(())
    }

    fn mass_level(&self, s: &State) -> f64 {
        self.cfg
            .experiment
            .mass
            .unwrap_or_else(|| s.mass() / s.grid().volume())
    }
}

pub fn dispatch(cli: &Cli) -> Result<Outcome, CliError> {
    let loaded = match &cli.config {
        Some(p) => load_config(p)?,
        None => crate::config::parse_config("")?,
    };
    let mut cfg = loaded.config.clone();
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let dir = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    let mut ctx = Ctx {
        cfg,
        loaded,
        dir,
        outcome: Outcome { passed: true, ..Outcome::default() },
    };
    match &cli.command {
        Command::Simulate => simulate(&mut ctx)?,
        Command::Galerkin => galerkin(&mut ctx)?,
        Command::Stationary => stationary(&mut ctx)?,
        Command::Semigroup => semigroup(&mut ctx)?,
        Command::Crossval => crossval(&mut ctx)?,
        Command::Dependence => dependence(&mut ctx)?,
        Command::Omega => omega(&mut ctx)?,
        Command::Sweep => sweep(&mut ctx)?,
        Command::Render { snapshot, colormap, scale } => render(&mut ctx, snapshot, *colormap, *scale)?,
    }
    Ok(ctx.outcome)
}

fn simulate(ctx: &mut Ctx) -> Result<(), CliError> {
    let grid = ctx.cfg.build_grid()?;
    let params = ctx.cfg.params()?;
    let initial = ctx.cfg.initial_data().generate(&grid);
    let summary = run(&initial, &params, ctx.cfg.time.t_end, &ctx.cfg.run_options())?;
    let csv = io::energy_csv(&ctx.header(), &summary.reports);
    let violations = lyapunov_audit(&csv).expect("own CSV parses").len();
    ctx.write("energy.csv", &csv)?;
    if ctx.cfg.time.snapshot_every.is_some() {
        for (i, s) in summary.snapshots.iter().enumerate() {
            ctx.save_state(&format!("snap_{i:05}"), s)?;
        }
    }
    ctx.save_state("final", &summary.final_state)?;
    let o = &mut ctx.outcome;
    o.note("steps", summary.steps);
    o.note("rejections", summary.rejections);
    o.note("lyapunov_violations", violations);
    o.note("mass_drift", summary.mass_drift);
    o.note("phi_min", summary.phi_min);
    o.note("phi_max", summary.phi_max);
    o.passed = !ctx.cfg.time.guard || violations == 0;
    Ok(())
}

fn galerkin(ctx: &mut Ctx) -> Result<(), CliError> {
    let grid = ctx.cfg.build_grid()?;
    let params = ctx.cfg.params()?;
    let initial = ctx.cfg.initial_data().generate(&grid);
    let g0 = project_initial(&initial, ctx.cfg.experiment.galerkin_modes)?;
    let t_end = ctx.cfg.time.t_end;
    let opts = GalerkinOptions {
        sample_dt: ctx.cfg.time.dt.max(t_end / 1000.0),
        ..GalerkinOptions::default()
    };
    let traj = integrate_galerkin(&g0, &params, t_end, &opts)?;
    let header = ctx.header();
    ctx.write("energy.csv", io::energy_csv(&header, &traj.reports))?;
    ctx.write("coefficients.csv", io::galerkin_coefficients_csv(&header, &traj.samples))?;
    ctx.save_state("final", &traj.last().to_state())?;
    let o = &mut ctx.outcome;
    o.note("modes", g0.n());
    o.note("steps", traj.steps);
    o.note("rejected", traj.rejected);
    o.note("energy_identity_defect", traj.energy_identity_defect());
    Ok(())
}

fn minimize_opts(cfg: &RunConfig) -> MinimizeOptions {
    MinimizeOptions {
        tol: cfg.experiment.stationary_tol,
        ..MinimizeOptions::default()
    }
}

fn stationary(ctx: &mut Ctx) -> Result<(), CliError> {
    let grid = ctx.cfg.build_grid()?;
    let params = ctx.cfg.params()?;
    let initial = ctx.cfg.initial_data().generate(&grid);
    let m = ctx.mass_level(&initial);
    let point = minimize_energy(&initial, m, &params, &minimize_opts(&ctx.cfg));
    let constants = constant_states(&grid, m, &params, &RootOptions::default());
    let mut rows = vec![point.clone()];
    rows.extend(constants.iter().cloned());
    let (cp, cs) = (params.chi_phi, params.chi_sigma);
    let csv = io::stationary_csv(&ctx.header(), cp, cs, &rows);
    ctx.write("stationary.csv", csv)?;
    ctx.save_state("minimizer", &point.state())?;
    let o = &mut ctx.outcome;
    o.note("M", m);
    o.note("converged", point.converged);
    o.note("iterations", point.iterations);
    o.note("E_value", point.e_value);
    o.note("r1", point.residuals.r1);
    o.note("r2", point.residuals.r2);
    o.note("r3", point.residuals.r3);
    o.note("constant_states", constants.len());
    o.passed = point.converged;
    Ok(())
}

fn semigroup(ctx: &mut Ctx) -> Result<(), CliError> {
    let grid = ctx.cfg.build_grid()?;
    let params = ctx.cfg.params()?;
    let opts = DecayOptions {
        seed: ctx.cfg.seed,
        ..DecayOptions::default()
    };
    let report = decay_constants(params.chi_phi, params.chi_sigma, params.psi.r1, &grid, &opts)?;
    let header = ctx.header();
    ctx.write("decay.csv", io::decay_csv(&header, &report))?;
    ctx.write("decay_summary.txt", io::decay_summary(ctx.cfg.seed, &report))?;
    let o = &mut ctx.outcome;
    o.note("omega1", report.omega1);
    o.note("omega2", report.omega2);
    o.note("smoothing_constant", report.smoothing_constant);
    o.note("small_t_slope", report.small_t_slope);
    o.note("violations", report.violations.len());
    o.passed = report.violations.is_empty();
    Ok(())
}

fn crossval(ctx: &mut Ctx) -> Result<(), CliError> {
    let grid = ctx.cfg.build_grid()?;
    let params = ctx.cfg.params()?;
    let initial = ctx.cfg.initial_data().generate(&grid);
    let opts = CrossvalOptions {
        dt: ctx.cfg.time.dt,
        ..CrossvalOptions::default()
    };
    let report = cross_validate(&initial, &params, ctx.cfg.time.t_end, &opts)?;
    let mut csv = ctx.header();
    csv.push_str("t,gap_phi,gap_sigma\n");
    for p in &report.points {
        csv.push_str(&format!("{},{},{}\n", p.t, p.gap_phi, p.gap_sigma));
    }
    ctx.write("crossval.csv", csv)?;
    let o = &mut ctx.outcome;
    o.note("modes", report.n);
    o.note("max_gap", report.max_gap);
    o.note("threshold", opts.threshold);
    o.passed = report.passed;
    Ok(())
}

fn dependence(ctx: &mut Ctx) -> Result<(), CliError> {
    let grid = ctx.cfg.build_grid()?;
    let params = ctx.cfg.params()?;
    let cfg = DependenceConfig {
        initial: ctx.cfg.initial_data().generate(&grid),
        params,
        run: ctx.cfg.run_options(),
        epsilon: ctx.cfg.experiment.epsilon,
        sample_times: ctx.cfg.experiment.sample_times.clone(),
    };
    let report = continuous_dependence_experiment(&cfg)?;
    let mut csv = ctx.header();
    csv.push_str("t,d_eps,d_half,ratio,growth\n");
    for s in &report.samples {
        csv.push_str(&format!("{},{},{},{},{}\n", s.t, s.d_eps, s.d_half, s.ratio, s.growth));
    }
    ctx.write("dependence.csv", csv)?;
    let in_band = report.samples.iter().all(|s| (1.8..=2.2).contains(&s.ratio));
    let summary = io::summary_text(
        ctx.cfg.seed,
        &[
            ("epsilon", report.epsilon.to_string()),
            ("d0", report.d0.to_string()),
            ("ratios_in_band", in_band.to_string()),
        ],
    );
    ctx.write("dependence_summary.txt", summary)?;
    let o = &mut ctx.outcome;
    o.note("d0", report.d0);
    for s in &report.samples {
        o.note(&format!("ratio@{}", s.t), s.ratio);
        o.note(&format!("growth@{}", s.t), s.growth);
    }
    o.passed = report.epsilon == 0.0 || in_band;
    Ok(())
}

fn omega(ctx: &mut Ctx) -> Result<(), CliError> {
    let grid = ctx.cfg.build_grid()?;
    let params = ctx.cfg.params()?;
    let mut run_opts = ctx.cfg.run_options();
    run_opts.snapshot_every = Some(ctx.cfg.time.snapshot_every.unwrap_or(ctx.cfg.experiment.norm_every));
    let cfg = OmegaConfig {
        initial: ctx.cfg.initial_data().generate(&grid),
        params,
        horizon: ctx.cfg.time.t_end,
        run: run_opts,
        velocity_tol: ctx.cfg.experiment.velocity_tol,
        known: Vec::new(),
    };
    let report = omega_limit_probe(&cfg)?;
    let reg = regularity_probe(&report.snapshots, 1.0, ctx.cfg.experiment.regularity_sanity);
    let mut csv = ctx.header();
    csv.push_str("t,h3_phi,h1_sigma\n");
    for (t, a, b) in &reg.series {
        csv.push_str(&format!("{t},{a},{b}\n"));
    }
    ctx.write("norms.csv", csv)?;
    let summary = io::summary_text(
        ctx.cfg.seed,
        &[
            ("phi_velocity", report.phi_velocity.to_string()),
            ("sigma_velocity", report.sigma_velocity.to_string()),
            ("distance_to_known_stationary_points", report.distance_to_known.to_string()),
            ("energy_plateau", report.energy_plateau.to_string()),
            ("final_residual", report.final_residual.to_string()),
            ("converged", report.converged.to_string()),
            ("regularity_sup", reg.sup.to_string()),
            ("regularity_flagged", reg.flagged.to_string()),
        ],
    );
    ctx.write("omega_summary.txt", summary)?;
    ctx.save_state("final", &report.final_state)?;
    let o = &mut ctx.outcome;
    o.note("phi_velocity", report.phi_velocity);
    o.note("sigma_velocity", report.sigma_velocity);
    o.note("distance_to_known_stationary_points", report.distance_to_known);
    o.note("final_residual", report.final_residual);
    o.note("converged", report.converged);
    o.passed = report.converged && !reg.flagged;
    Ok(())
}

fn sweep(ctx: &mut Ctx) -> Result<(), CliError> {
    let grid = ctx.cfg.build_grid()?;
    let params = ctx.cfg.params()?;
    let initial = ctx.cfg.initial_data().generate(&grid);
    let m = ctx.mass_level(&initial);
    let seeds: Vec<u64> = (0..ctx.cfg.experiment.sweep_seeds as u64)
        .map(|i| ctx.cfg.seed.wrapping_add(i))
        .collect();
    let report = boundedness_sweep(
        &grid,
        m,
        &params,
        ctx.cfg.experiment.sweep_amplitude,
        &seeds,
        &minimize_opts(&ctx.cfg),
    );
    let csv = io::stationary_csv(&ctx.header(), params.chi_phi, params.chi_sigma, &report.points);
    ctx.write("sweep.csv", csv)?;
    let o = &mut ctx.outcome;
    o.note("M", m);
    o.note("starts", seeds.len());
    o.note("converged", report.converged);
    o.note("bound", report.bound);
    o.passed = report.converged == seeds.len();
    Ok(())
}

fn render(ctx: &mut Ctx, snapshot: &Path, colormap: ColormapArg, scale: usize) -> Result<(), CliError> {
    let field = io::load_snapshot(snapshot)?;
    let stem = snapshot.file_stem().and_then(|s| s.to_str()).unwrap_or("snapshot");
    let path = ctx.dir.join(format!("{stem}.png"));
    let opts = RenderOptions {
        colormap: match colormap {
            ColormapArg::Grayscale => Colormap::Grayscale,
            ColormapArg::Viridis => Colormap::Viridis,
        },
        scale,
    };
    let map = render_heatmap(&field, &path, &opts)?;
    let o = &mut ctx.outcome;
    o.files.push(path.clone());
    o.files.push(crate::render::sidecar_path(&path));
    o.note("min", map.min);
    o.note("max", map.max);
    o.note("width", map.width);
    o.note("height", map.height);
    Ok(())
}
