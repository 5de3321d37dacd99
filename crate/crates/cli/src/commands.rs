use std::sync::Arc;

use obslab::analyticity::{fit_rho, geometric_times, CERT_CSV_HEADER as RHO_HEADER};
use obslab::control::{
    coupled_single_observation, hum_control, time_optimal, HumOptions, TimeOptimalOptions, CONTROL_CSV_HEADER,
};
use obslab::observability::{
    boundary_certify, certify_interior, count_violations, empirical_constant, random_states, BoundaryOptions,
    EmpiricalOptions, ObservationOperator, QuadOptions, StepOptions, CERT_CSV_HEADER,
};
use obslab::sampling::{rng, unit_sphere, SweepRng};
use obslab::sets::Interval;
use obslab::smallness::{estimate_holder, REPORT_CSV_HEADER};
use obslab::spectral::{build_basis, EigenBasis, SpectralState};
use serde_json::json;

use crate::config::{ConfigError, ControlMode, ExperimentConfig, InitialState, Method};

/// An output file: name inside the output directory and its contents.
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Numerical(#[from] obslab::Error),
}

fn missing(field: &str) -> RunError {
    RunError::Config(ConfigError {
        field: field.into(),
        message: "required by this subcommand".into(),
    })
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub basis: Arc<EigenBasis>,
    pub rng: SweepRng,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, seed: u64) -> Result<Self, RunError> {
        let basis = Arc::new(build_basis(&cfg.spec, cfg.k)?);
        Ok(Self {
            cfg,
            basis,
            rng: rng(seed),
        })
    }

    fn initial(&mut self, init: &InitialState, field: &str) -> Result<Vec<f64>, RunError> {
        let dim = self.basis.state_dim();
        match init {
            InitialState::Coeffs(c) if c.len() == dim => Ok(c.clone()),
            InitialState::Coeffs(c) => Err(RunError::Config(ConfigError {
                field: field.into(),
                message: format!("expected {dim} coefficients, got {}", c.len()),
            })),
            InitialState::Named(n) if n == "random" => Ok(unit_sphere(&mut self.rng, dim)),
            InitialState::Named(n) => Err(RunError::Config(ConfigError {
                field: field.into(),
                message: format!("unknown initial state {n:?} (use \"random\" or a coefficient list)"),
            })),
        }
    }
}

/// Trajectory `"t, norm, a_1, …"` on a uniform grid of `(0, T)`.
pub fn simulate(ctx: &mut Context) -> Result<Vec<Artifact>, RunError> {
    let init = ctx.cfg.simulate.initial.clone();
    let a = ctx.initial(&init, "simulate.initial")?;
    let steps = ctx.cfg.simulate.steps.max(1);
    let s0 = SpectralState::new(ctx.basis.clone(), a, 0.0)?;
    let dim = ctx.basis.state_dim();
    let header = std::iter::once("t, norm".to_string())
        .chain((1..=dim).map(|j| format!("a_{j}")))
        .collect::<Vec<_>>()
        .join(", ");
    let mut rows = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let t = ctx.cfg.horizon * i as f64 / steps as f64;
        let st = s0.evolve(t)?;
        let line = st.to_csv_line();
        let (time, rest) = line.split_once(", ").unwrap_or((line.as_str(), ""));
        rows.push(if rest.is_empty() {
            format!("{time}, {}", st.norm())
        } else {
            format!("{time}, {}, {rest}", st.norm())
        });
    }
    Ok(vec![Artifact {
        name: "trajectory.csv".into(),
        contents: csv(&header, rows),
    }])
}

pub fn analyticity(ctx: &mut Context) -> Result<Vec<Artifact>, RunError> {
    let c = ctx.cfg.analyticity.clone();
    let times = geometric_times(c.t_min, 1.0, c.t_points);
    let mut rows = Vec::new();
    for _ in 0..c.states {
        let a = unit_sphere(&mut ctx.rng, ctx.basis.state_dim());
        let s = SpectralState::new(ctx.basis.clone(), a, 0.0)?;
        rows.push(fit_rho(&s, &times, c.alpha_max, c.p_max)?.csv_row());
    }
    Ok(vec![Artifact {
        name: "analyticity.csv".into(),
        contents: csv(RHO_HEADER, rows),
    }])
}

pub fn smallness(ctx: &mut Context) -> Result<Vec<Artifact>, RunError> {
    let s = ctx.cfg.smallness.clone().ok_or_else(|| missing("smallness"))?;
    let omega = ctx.cfg.interval_set(&s.omega, "smallness.omega")?;
    let (lo, hi) = s.domain.unwrap_or((0.0, ctx.cfg.spec.length()));
    let domain = Interval::new(lo, hi)?;
    let report = estimate_holder(&s.family, &omega, domain, s.samples, &mut ctx.rng)?;
    Ok(vec![Artifact {
        name: "smallness.csv".into(),
        contents: csv(REPORT_CSV_HEADER, [report.csv_row()]),
    }])
}

pub fn observability(ctx: &mut Context, method_override: Option<Method>) -> Result<Vec<Artifact>, RunError> {
    let o = ctx.cfg.observability.clone().ok_or_else(|| missing("observability"))?;
    let method = method_override.unwrap_or(o.method);
    let horizon = ctx.cfg.horizon;
    let quad = QuadOptions::default();
    let mut rows = Vec::new();
    if method == Method::Boundary {
        let times = o.boundary_times.as_deref().ok_or_else(|| missing("observability.boundary_times"))?;
        let e = ctx.cfg.interval_set(times, "observability.boundary_times")?;
        let mut cert = boundary_certify(&ctx.basis, &e, horizon, &BoundaryOptions::default(), &mut ctx.rng)?;
        let op = ObservationOperator::boundary(&ctx.basis, &e, &e, &quad)?;
        let states = random_states(&mut ctx.rng, ctx.basis.state_dim(), o.validation);
        cert.violations = count_violations(&cert, &ctx.basis, &op, &states)?;
        rows.push(cert.csv_row());
    } else {
        let name = o.set.as_deref().ok_or_else(|| missing("observability.set"))?;
        let d = ctx.cfg.space_time_set(name, "observability.set")?;
        let op = ObservationOperator::interior(&ctx.basis, &d, &quad)?;
        if matches!(method, Method::Telescoping | Method::Both) {
            let (_, mut cert) = certify_interior(&ctx.basis, &d, horizon, o.fit_states, StepOptions::default(), &mut ctx.rng)?;
            let states = random_states(&mut ctx.rng, ctx.basis.state_dim(), o.validation);
            cert.violations = count_violations(&cert, &ctx.basis, &op, &states)?;
            rows.push(cert.csv_row());
        }
        if matches!(method, Method::Empirical | Method::Both) {
            let opts = EmpiricalOptions {
                restarts: o.restarts,
                ..Default::default()
            };
            let mut cert = empirical_constant(&ctx.basis, &d, horizon, &opts, &mut ctx.rng)?;
            let states = random_states(&mut ctx.rng, ctx.basis.state_dim(), o.validation);
            cert.violations = count_violations(&cert, &ctx.basis, &op, &states)?;
            rows.push(cert.csv_row());
        }
    }
    Ok(vec![Artifact {
        name: "certificates.csv".into(),
        contents: csv(CERT_CSV_HEADER, rows),
    }])
}

pub fn control(ctx: &mut Context) -> Result<Vec<Artifact>, RunError> {
    let c = ctx.cfg.control.clone().ok_or_else(|| missing("control"))?;
    let tol = ctx.cfg.tolerances.clone();
    let horizon = ctx.cfg.horizon;
    let hum_opts = HumOptions {
        tol: tol.hum_residual,
        ..Default::default()
    };
    match c.mode {
        ControlMode::Hum => {
            let name = c.set.as_deref().ok_or_else(|| missing("control.set"))?;
            let d = ctx.cfg.space_time_set(name, "control.set")?;
            let u0 = ctx.initial(&c.initial, "control.initial")?;
            let r = hum_control(&ctx.basis, &d, horizon, &u0, &hum_opts)?;
            let summary = json!({
                "control": "control.csv",
                "lambda": r.lambda,
                "residual": r.residual,
                "iterations": r.iterations,
                "bangbang_fraction": r.bangbang_fraction,
                "duality_gap": r.duality_gap,
            });
            Ok(vec![
                Artifact {
                    name: "control.csv".into(),
                    contents: csv(CONTROL_CSV_HEADER, r.csv_lines()),
                },
                Artifact {
                    name: "control_summary.json".into(),
                    contents: serde_json::to_string_pretty(&summary).unwrap() + "\n",
                },
            ])
        }
        ControlMode::TimeOptimal => {
            let name = c.omega.as_deref().ok_or_else(|| missing("control.omega"))?;
            let omega = ctx.cfg.interval_set(name, "control.omega")?;
            let u0 = ctx.initial(&c.initial, "control.initial")?;
            let opts = TimeOptimalOptions {
                rel_width: tol.time_rel_width,
                cap: tol.horizon_cap,
                hum: hum_opts,
            };
            let results = c
                .bounds
                .iter()
                .map(|&m| time_optimal(&ctx.basis, &omega, m, &u0, &opts))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(vec![Artifact {
                name: "time_optimal.json".into(),
                contents: serde_json::to_string_pretty(&results).unwrap() + "\n",
            }])
        }
        ControlMode::Coupled => {
            let name = c.set.as_deref().ok_or_else(|| missing("control.set"))?;
            let d = ctx.cfg.space_time_set(name, "control.set")?;
            let opts = EmpiricalOptions {
                restarts: c.restarts,
                ..Default::default()
            };
            let cert = coupled_single_observation(&ctx.basis, &d, horizon, &opts, c.validation, &mut ctx.rng)?;
            Ok(vec![Artifact {
                name: "certificates.csv".into(),
                contents: csv(CERT_CSV_HEADER, [cert.csv_row()]),
            }])
        }
    }
}
