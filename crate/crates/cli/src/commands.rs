//! Command implementations: each writes a result bundle into the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gvs_core::assembly::generalized_mass;
use gvs_core::constraints::closure_residual;
use gvs_core::control::{actuator_bounds, pd_task_control};
use gvs_core::energy::dissipation;
use gvs_core::{
    energy, forward_kinematics, momentum, pattern_search, static_sweep, Actuator, ControlContext,
    DynamicOptions, Input, Integrator, KinematicsCache, Linkage, PatternSearchOptions,
    PlacementProblem, Pose, StaticOptions, TargetPath, TaskTarget, Trajectory, Twist,
};
use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::build::{arc_to_normalized, build_model, pose, profile, Model};
use crate::error::{CliError, SolverResult};
use crate::output::{state_header, state_row, Bundle, FrameWriter, PlotData, Table};
use crate::scenario::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Static,
    Dyn,
    Energy,
    Control,
    Optimize,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Static => "static",
            Command::Dyn => "dyn",
            Command::Energy => "energy",
            Command::Control => "control",
            Command::Optimize => "optimize",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub strict: bool,
    pub seed: u64,
}

/// Parse, build and run one scenario file.
pub fn run_file(cmd: Command, path: &Path, opts: &RunOptions) -> Result<Bundle, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    run_text(cmd, &text, opts)
}

pub fn run_text(cmd: Command, text: &str, opts: &RunOptions) -> Result<Bundle, CliError> {
    let parsed = parse_scenario(text, opts.strict)?;
    let mut bundle = Bundle::new(&opts.out)?;
    let sc = &parsed.scenario;
    bundle.set("command", json!(cmd.name()));
    bundle.set("scenario", json!(sc.name));
    bundle.set("scenario_hash", json!(sc.hash()));
    bundle.set("seed", json!(opts.seed));
    for w in &parsed.warnings {
        bundle.log(format!("warning: {w}"));
    }
    let start = Instant::now();
    let model = build_model(sc)?;
    let l = &model.linkage;
    bundle.set("linkage_hash", json!(l.fingerprint()));
    bundle.set("dof", json!(l.dof()));
    bundle.set("actuators", json!(l.actuator_count()));
    bundle.set("links", json!(l.link_count()));
    bundle.set("evaluation_points", json!(l.points().len()));
    bundle.log(format!(
        "built '{}': {} links, {} DoF, {} actuators, {} constraints",
        sc.name.as_deref().unwrap_or("unnamed"),
        l.link_count(),
        l.dof(),
        l.actuator_count(),
        l.constraint_count()
    ));
    let result = match cmd {
        Command::Validate => validate(&model, opts.seed, &mut bundle),
        Command::Static => run_static(sc, &model, &mut bundle),
        Command::Dyn => run_dynamic(sc, &model, false, &mut bundle),
        Command::Energy => run_dynamic(sc, &model, true, &mut bundle),
        Command::Control => run_control(sc, &model, &mut bundle),
        Command::Optimize => run_optimize(sc, &model, &mut bundle),
    };
    bundle.set("wall_clock_s", json!(start.elapsed().as_secs_f64()));
    if let Err(e) = &result {
        bundle.set("status", json!("failed"));
        bundle.set("error", json!(e.to_string()));
        bundle.log(format!("error: {e}"));
    } else {
        bundle.set("status", json!("ok"));
    }
    bundle.finish()?;
    result.map(|_| bundle)
}

fn missing(block: &str) -> CliError {
    CliError::Usage(format!("scenario has no [{block}] block"))
}

fn physical_state(l: &Linkage, v: &Option<Vec<f64>>, what: &str) -> Result<DVector<f64>, CliError> {
    match v {
        None => Ok(DVector::zeros(l.dof())),
        Some(v) if v.len() == l.dof() => Ok(l.to_internal(&DVector::from_column_slice(v))),
        Some(v) => Err(CliError::Usage(format!("{what} has {} entries, the model has {} DoF", v.len(), l.dof()))),
    }
}

fn actuation(l: &Linkage, u: &[f64]) -> Result<DVector<f64>, CliError> {
    if u.is_empty() {
        return Ok(DVector::zeros(l.actuator_count()));
    }
    if u.len() != l.actuator_count() {
        return Err(CliError::Usage(format!(
            "actuation has {} entries, the model has {} actuators",
            u.len(),
            l.actuator_count()
        )));
    }
    Ok(DVector::from_column_slice(u))
}

fn vec3(v: &Vector3<f64>) -> Value {
    json!([v.x, v.y, v.z])
}

/// Build-only audit: structural counts plus mass-matrix and closure checks
/// at the reference state and at seeded random states.
fn validate(model: &Model, seed: u64, bundle: &mut Bundle) -> Result<(), CliError> {
    let l = &model.linkage;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_asym: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    let mut worst_ortho: f64 = 0.0;
    let free = l.free_coordinates();
    for k in 0..4 {
        let q = if k == 0 {
            DVector::zeros(l.dof())
        } else {
            DVector::from_fn(l.dof(), |_, _| rng.random_range(-0.2..0.2))
        };
        let kin = KinematicsCache::at_rest(l, &q).model()?;
        let m = generalized_mass(l, &kin);
        let scale = m.amax().max(f64::MIN_POSITIVE);
        worst_asym = worst_asym.max((&m - m.transpose()).amax() / scale);
        let mf = m.select_rows(free).select_columns(free);
        if mf.nrows() > 0 {
            let e = mf.symmetric_eigen().eigenvalues.min() / scale;
            min_eig = min_eig.min(e);
        }
        for g in &kin.poses {
            worst_ortho = worst_ortho.max(g.orthonormality_defect());
        }
    }
    let kin0 = KinematicsCache::at_rest(l, &DVector::zeros(l.dof())).model()?;
    let phi0 = if l.constraint_count() > 0 {
        closure_residual(l, &kin0).model()?.amax()
    } else {
        0.0
    };
    let k = l.stiffness();
    let k_asym = (k - k.transpose()).amax();
    let mut problems = Vec::new();
    if worst_asym > 1e-12 {
        problems.push(format!("mass matrix asymmetry {worst_asym:.3e}"));
    }
    if min_eig.is_finite() && min_eig <= 0.0 {
        problems.push(format!("mass matrix not positive definite on free coordinates ({min_eig:.3e})"));
    }
    if worst_ortho > 1e-10 {
        problems.push(format!("rotation orthonormality defect {worst_ortho:.3e}"));
    }
    if k_asym > 1e-9 * k.amax().max(1.0) {
        problems.push(format!("stiffness asymmetry {k_asym:.3e}"));
    }
    bundle.set(
        "audit",
        json!({
            "mass_asymmetry": worst_asym,
            "mass_min_relative_eigenvalue": if min_eig.is_finite() { json!(min_eig) } else { Value::Null },
            "orthonormality_defect": worst_ortho,
            "stiffness_asymmetry": k_asym,
            "reference_closure_residual": phi0,
            "total_mass": l.total_mass(),
            "problems": problems,
        }),
    );
    if phi0 > 1e-6 {
        bundle.log(format!(
            "note: loop closures are not assembled at q = 0 (residual {phi0:.3e}); statics will assemble them"
        ));
    }
    if problems.is_empty() {
        bundle.log("audit passed");
        Ok(())
    } else {
        Err(CliError::Model(gvs_core::GvsError::InvalidModel(problems.join("; "))))
    }
}

fn static_options(b: &StaticBlock, time: f64) -> StaticOptions {
    StaticOptions {
        tol: b.tol,
        max_iterations: b.max_iterations,
        fd_step: b.fd_step,
        steps: b.steps,
        time,
    }
}

fn run_static(sc: &Scenario, model: &Model, bundle: &mut Bundle) -> Result<(), CliError> {
    let block = sc.statics.as_ref().ok_or_else(|| missing("static"))?;
    let l = &model.linkage;
    let stages = if block.stages.is_empty() {
        vec![StageSpec {
            time: block.time,
            actuation: None,
            label: None,
        }]
    } else {
        block.stages.clone()
    };
    let mut q = physical_state(l, &block.q0, "static.q0")?;
    let rest = forward_kinematics(l, &DVector::zeros(l.dof())).model()?;
    let n = l.dof();
    let mut header = vec!["stage".to_string(), "step".into(), "factor".into(), "time".into()];
    header.extend((0..n).map(|i| format!("q_{i}")));
    for (name, x, _) in &model.outputs {
        for a in ["x", "y", "z"] {
            header.push(format!("{name}@{x}_{a}"));
        }
    }
    header.extend(["residual".into(), "closure_residual".into(), "iterations".into()]);
    let mut table = Table::new(header);
    let mut frames = FrameWriter::create(&bundle.path("frames.jsonl"))?;
    let plot_point = match &block.plot {
        Some(p) => Some((p, model.point(&p.point)?)),
        None => None,
    };
    let mut horizontal = Vec::new();
    let mut vertical = Vec::new();
    let mut stage_meta = Vec::new();
    let mut max_disp: f64 = 0.0;
    let mut total_iterations = 0;
    for (s, stage) in stages.iter().enumerate() {
        let u = actuation(l, stage.actuation.as_deref().unwrap_or(&block.actuation))?;
        let t0 = Instant::now();
        let sols = static_sweep(l, &u, &q, &static_options(block, stage.time)).solver()?;
        let last = sols.last().expect("at least one step");
        for sol in &sols {
            let poses = forward_kinematics(l, &sol.q).model()?;
            let mut row = vec![s as f64, (table.rows.len()) as f64, sol.factor, stage.time];
            row.extend(l.to_physical(&sol.q).iter());
            for (_, _, i) in &model.outputs {
                row.extend(poses[*i].translation.iter());
            }
            row.extend([sol.residual, sol.closure_residual, sol.iterations as f64]);
            table.push(row);
            total_iterations += sol.iterations;
            frames.write(sol.factor, &poses, Some(("stage", json!(s))))?;
            if let Some((p, i)) = &plot_point {
                let d = poses[*i].translation - rest[*i].translation;
                horizontal.push((p.load * sol.factor, d[p.horizontal]));
                vertical.push((p.load * sol.factor, d[p.vertical]));
            }
        }
        let poses = forward_kinematics(l, &last.q).model()?;
        let stage_disp = poses
            .iter()
            .zip(&rest)
            .map(|(a, b)| (a.translation - b.translation).norm())
            .fold(0.0, f64::max);
        max_disp = max_disp.max(stage_disp);
        bundle.log(format!(
            "stage {s}{}: {} steps, {} iterations, residual {:.3e}, closure {:.3e}, {:.3} s",
            stage.label.as_ref().map(|x| format!(" ({x})")).unwrap_or_default(),
            sols.len(),
            sols.iter().map(|x| x.iterations).sum::<usize>(),
            last.residual,
            last.closure_residual,
            t0.elapsed().as_secs_f64()
        ));
        let outputs: Vec<Value> = model.outputs.iter().map(|(_, _, i)| vec3(&poses[*i].translation)).collect();
        stage_meta.push(json!({
            "label": stage.label,
            "time": stage.time,
            "steps": sols.len(),
            "residual": last.residual,
            "closure_residual": last.closure_residual,
            "max_displacement": stage_disp,
            "outputs": outputs,
            "q": l.to_physical(&last.q).as_slice(),
        }));
        q = last.q.clone();
    }
    frames.finish()?;
    table.write(&bundle.path("sweep.csv"))?;
    if plot_point.is_some() {
        let mut plot = PlotData::default();
        plot.add("horizontal", horizontal);
        plot.add("vertical", vertical);
        plot.write(&bundle.path("plot.csv"))?;
    }
    bundle.set(
        "solver",
        json!({"kind": "static", "tol": block.tol, "max_iterations": block.max_iterations,
               "fd_step": block.fd_step, "steps": block.steps}),
    );
    bundle.set("stages", Value::Array(stage_meta));
    bundle.set("max_displacement", json!(max_disp));
    bundle.set("iterations", json!(total_iterations));
    Ok(())
}

fn dynamic_options(b: &DynamicBlock) -> DynamicOptions {
    DynamicOptions {
        t_end: b.t_end,
        integrator: match b.integrator {
            IntegratorSpec::Rk4 => Integrator::Rk4 { dt: b.dt },
            IntegratorSpec::Adaptive => Integrator::Adaptive {
                rtol: b.rtol,
                atol: b.atol,
            },
        },
        sample: b.sample,
        recenter: b.recenter,
        max_step: b.max_step.unwrap_or(f64::INFINITY),
    }
}

fn schedule(l: &Linkage, inputs: &[InputSpec]) -> Result<Input<'static>, CliError> {
    let na = l.actuator_count();
    if inputs.is_empty() {
        return Ok(Input::None);
    }
    let mut spec = Vec::new();
    for i in inputs {
        if i.actuator >= na {
            return Err(CliError::Usage(format!("input actuator {} out of range ({na} actuators)", i.actuator)));
        }
        spec.push((i.actuator, i.value, profile(&i.profile)));
    }
    Ok(Input::Schedule(Box::new(move |t| {
        let mut u = DVector::zeros(na);
        for (a, v, p) in &spec {
            u[*a] += v * p.value(t);
        }
        u
    })))
}

fn write_frames(l: &Linkage, traj: &Trajectory, path: &Path) -> Result<(), CliError> {
    let mut frames = FrameWriter::create(path)?;
    for k in 0..traj.len() {
        frames.write(traj.t[k], &forward_kinematics(l, &traj.q[k]).model()?, None)?;
    }
    frames.finish()
}

fn trajectory_meta(traj: &Trajectory, bundle: &mut Bundle) {
    bundle.set(
        "integration",
        json!({"samples": traj.len(), "steps": traj.steps, "rejected": traj.rejected,
               "evaluations": traj.evaluations, "t_final": traj.t.last()}),
    );
    bundle.log(format!(
        "integrated to t = {:.4}: {} steps, {} rejected, {} evaluations",
        traj.t.last().copied().unwrap_or(0.0),
        traj.steps,
        traj.rejected,
        traj.evaluations
    ));
}

fn run_dynamic(sc: &Scenario, model: &Model, with_energy: bool, bundle: &mut Bundle) -> Result<(), CliError> {
    let block = sc.dynamic.as_ref().ok_or_else(|| missing("dynamic"))?;
    let l = &model.linkage;
    let q0 = physical_state(l, &block.q0, "dynamic.q0")?;
    let qd0 = physical_state(l, &block.qd0, "dynamic.qd0")?;
    let opts = dynamic_options(block);
    bundle.set(
        "solver",
        json!({"kind": "dynamic", "integrator": format!("{:?}", opts.integrator), "t_end": opts.t_end,
               "sample": opts.sample, "recenter": opts.recenter}),
    );
    let traj = gvs_core::simulate(l, &q0, &qd0, schedule(l, &block.inputs)?, &opts).solver()?;
    trajectory_meta(&traj, bundle);
    let na = l.actuator_count();
    let mut extras: Vec<String> = (0..na).map(|i| format!("u_{i}")).collect();
    if with_energy {
        extras.extend(
            ["kinetic", "gravitational", "elastic", "total", "dissipation", "p_x", "p_y", "p_z", "h_x", "h_y", "h_z"]
                .map(String::from),
        );
    }
    let mut table = Table::new(state_header(l.dof(), &extras));
    let mut reports = Vec::with_capacity(traj.len());
    let mut momenta = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let mut ex: Vec<f64> = traj.u[k].iter().copied().collect();
        if with_energy {
            let e = energy(l, &traj.q[k], &traj.qd[k]).model()?;
            let m = momentum(l, &traj.q[k], &traj.qd[k]).model()?;
            ex.extend([e.kinetic, e.gravitational, e.elastic, e.total, dissipation(l, &traj.qd[k])]);
            ex.extend(m.linear.iter().chain(m.angular.iter()));
            reports.push(e);
            momenta.push(m);
        }
        table.push(state_row(traj.t[k], &l.to_physical(&traj.q[k]), &l.to_physical(&traj.qd[k]), &ex));
    }
    table.write(&bundle.path("timeseries.csv"))?;
    if block.frames {
        write_frames(l, &traj, &bundle.path("frames.jsonl"))?;
    }
    if with_energy && !reports.is_empty() {
        let e0 = reports[0];
        let max_drift = reports.iter().map(|e| (e.total - e0.total).abs()).fold(0.0, f64::max);
        let max_increase = reports.windows(2).map(|w| w[1].total - w[0].total).fold(f64::NEG_INFINITY, f64::max);
        let p0 = momenta[0];
        let p_drift = momenta.iter().map(|m| (m.linear - p0.linear).norm()).fold(0.0, f64::max);
        let h_drift = momenta.iter().map(|m| (m.angular - p0.angular).norm()).fold(0.0, f64::max);
        bundle.set(
            "energy",
            json!({"initial": {"kinetic": e0.kinetic, "gravitational": e0.gravitational,
                               "elastic": e0.elastic, "total": e0.total},
                   "final_total": reports.last().map(|e| e.total),
                   "max_total_drift": max_drift,
                   "max_total_drift_relative_to_initial_elastic":
                        if e0.elastic != 0.0 { json!(max_drift / e0.elastic) } else { Value::Null },
                   "max_sample_increase": max_increase,
                   "max_linear_momentum_drift": p_drift,
                   "max_angular_momentum_drift": h_drift}),
        );
        bundle.log(format!(
            "energy: E0 = {:.6e} J, max |ΔE| = {max_drift:.3e} J, max per-sample increase {max_increase:.3e} J",
            e0.total
        ));
        let mut plot = PlotData::default();
        for (name, f) in [
            ("kinetic", (|e: &gvs_core::EnergyReport| e.kinetic) as fn(&gvs_core::EnergyReport) -> f64),
            ("gravitational", |e| e.gravitational),
            ("elastic", |e| e.elastic),
            ("total", |e| e.total),
        ] {
            plot.add(name, traj.t.iter().zip(&reports).map(|(t, e)| (*t, f(e))).collect());
        }
        plot.write(&bundle.path("plot.csv"))?;
    }
    Ok(())
}

/// Orbit about the axis through `center`: world twist `(ω, c × ω)`.
pub fn orbit_twist(axis: [f64; 3], center: [f64; 3], rpm: f64) -> Twist {
    let w = Vector3::from(axis).normalize() * (rpm * std::f64::consts::TAU / 60.0);
    let v = Vector3::from(center).cross(&w);
    Twist::new(w.x, w.y, w.z, v.x, v.y, v.z)
}

fn target_path(sc: &Scenario, model: &Model, spec: &TargetSpec, point: usize) -> Result<TargetPath, CliError> {
    let l = &model.linkage;
    Ok(match spec {
        TargetSpec::Pose { pose: p } => TargetPath::Fixed(pose(p)),
        TargetSpec::Static { actuation: u, steps } => {
            let block = sc.statics.clone().unwrap_or_default();
            let opts = StaticOptions {
                steps: *steps,
                ..static_options(&block, 0.0)
            };
            let s = gvs_core::static_equilibrium(l, &actuation(l, u)?, &DVector::zeros(l.dof()), &opts).solver()?;
            TargetPath::Fixed(forward_kinematics(l, &s.q).model()?[point])
        }
        TargetSpec::Orbit {
            reference,
            axis,
            center,
            rpm,
        } => TargetPath::Orbit {
            reference: pose(reference),
            axis: orbit_twist(*axis, *center, *rpm),
        },
    })
}

fn pose_json(g: &Pose) -> Value {
    let r = &g.rotation;
    json!({"R": [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
           "r": [g.translation.x, g.translation.y, g.translation.z]})
}

fn run_control(sc: &Scenario, model: &Model, bundle: &mut Bundle) -> Result<(), CliError> {
    let block = sc.control.as_ref().ok_or_else(|| missing("control"))?;
    let l = &model.linkage;
    let point = model.point(&block.point)?;
    let path = target_path(sc, model, &block.target, point)?;
    let mut target = TaskTarget::new(path, point, block.kp, block.kd);
    target.unbounded = block.unbounded;
    bundle.set("target_initial", pose_json(&target.path.sample(0.0).0));
    let opts = DynamicOptions {
        t_end: block.t_end,
        integrator: Integrator::Rk4 { dt: block.dt },
        sample: block.sample,
        ..Default::default()
    };
    bundle.set(
        "solver",
        json!({"kind": "control", "integrator": "rk4", "dt": block.dt, "t_end": block.t_end,
               "kp": block.kp, "kd": block.kd, "unbounded": block.unbounded}),
    );
    let tgt = target.clone();
    let ctrl = move |ctx: &ControlContext<'_>| pd_task_control(ctx, &tgt).map(|o| o.u);
    let n = l.dof();
    let traj = gvs_core::simulate(
        l,
        &DVector::zeros(n),
        &DVector::zeros(n),
        Input::Feedback(Box::new(ctrl)),
        &opts,
    )
    .solver()?;
    trajectory_meta(&traj, bundle);
    let na = l.actuator_count();
    let mut extras: Vec<String> = (0..na).map(|i| format!("u_{i}")).collect();
    extras.extend(["position_error", "orientation_error"].map(String::from));
    let mut table = Table::new(state_header(n, &extras));
    let mut frames = FrameWriter::create(&bundle.path("frames.jsonl"))?;
    let (mut worst_p, mut worst_r): (f64, f64) = (0.0, 0.0);
    let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut errors = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let poses = forward_kinematics(l, &traj.q[k]).model()?;
        let (ep, er) = target.error(traj.t[k], &poses[point]).model()?;
        if traj.t[k] > block.settle {
            worst_p = worst_p.max(ep);
            worst_r = worst_r.max(er);
        }
        umin = umin.min(traj.u[k].min());
        umax = umax.max(traj.u[k].max());
        let mut ex: Vec<f64> = traj.u[k].iter().copied().collect();
        ex.extend([ep, er]);
        table.push(state_row(traj.t[k], &l.to_physical(&traj.q[k]), &l.to_physical(&traj.qd[k]), &ex));
        frames.write(traj.t[k], &poses, None)?;
        errors.push((traj.t[k], ep, er));
    }
    frames.finish()?;
    table.write(&bundle.path("timeseries.csv"))?;
    let mut plot = PlotData::default();
    plot.add("position_error", errors.iter().map(|e| (e.0, e.1)).collect());
    plot.add("orientation_error", errors.iter().map(|e| (e.0, e.2)).collect());
    plot.write(&bundle.path("plot.csv"))?;
    let (lo, hi) = actuator_bounds(l);
    bundle.set(
        "control",
        json!({"settle": block.settle,
               "max_position_error_after_settle": worst_p,
               "max_orientation_error_after_settle": worst_r,
               "min_actuation": umin, "max_actuation": umax,
               "lower_bounds": lo.as_slice(), "upper_bounds": hi.as_slice(),
               "final_actuation": traj.u.last().map(|u| u.as_slice().to_vec())}),
    );
    bundle.log(format!(
        "control: after t = {}: max position error {worst_p:.3e} m, max orientation error {worst_r:.3e} rad; actuation in [{umin:.4}, {umax:.4}]",
        block.settle
    ));
    Ok(())
}

fn run_optimize(sc: &Scenario, model: &Model, bundle: &mut Bundle) -> Result<(), CliError> {
    let block = sc.optimize.as_ref().ok_or_else(|| missing("optimize"))?;
    let l = &model.linkage;
    for (name, v) in [("x0", &block.x0), ("lower", &block.lower), ("upper", &block.upper)] {
        if v.len() != 7 {
            return Err(CliError::Usage(format!("optimize.{name} needs 7 entries, got {}", v.len())));
        }
    }
    let actuator = l
        .actuators()
        .iter()
        .position(|a| matches!(a, Actuator::Cable(c) if c.name == block.cable))
        .ok_or_else(|| CliError::Parse(format!("unknown cable '{}'", block.cable)))?;
    let cable_spec = sc.cables.iter().find(|c| c.name == block.cable).expect("audited");
    let span = match cable_spec.abscissa {
        AbscissaSpec::Normalized => None,
        AbscissaSpec::ArcLength => {
            let Actuator::Cable(c) = &l.actuators()[actuator] else { unreachable!() };
            let link = &sc.links[model.link(&cable_spec.link)?];
            Some(link.divisions[c.divisions.clone()].iter().map(|d| d.length).sum::<f64>())
        }
    };
    let to_design = move |x: &[f64]| -> Vec<f64> {
        match span {
            None => x.to_vec(),
            Some(s) => {
                let mut d = arc_to_normalized(&x[0..3], s);
                d.extend(arc_to_normalized(&x[3..6], s));
                d.push(x[6]);
                d
            }
        }
    };
    let statics = StaticOptions {
        steps: block.steps,
        ..static_options(&sc.statics.clone().unwrap_or_default(), 0.0)
    };
    let problem = PlacementProblem {
        linkage: l,
        actuator,
        mid_point: model.point(&block.mid)?,
        end_point: model.point(&block.end)?,
        mid_target: Vector3::from(block.mid_target),
        end_target: Vector3::from(block.end_target),
        statics,
    };
    let opts = PatternSearchOptions {
        mesh: block.mesh,
        tol: block.tol,
        max_evaluations: block.max_evaluations,
        scales: block.scales.clone(),
    };
    bundle.set(
        "solver",
        json!({"kind": "pattern_search", "mesh": block.mesh, "tol": block.tol,
               "max_evaluations": block.max_evaluations, "scales": block.scales, "static_steps": block.steps}),
    );
    let t0 = Instant::now();
    let r = pattern_search(|x| problem.objective(&to_design(x)), &block.x0, &block.lower, &block.upper, &opts)
        .model()?;
    bundle.log(format!(
        "pattern search: f = {:.6e} after {} evaluations, {} iterations, converged = {}, {:.2} s",
        r.f,
        r.evaluations,
        r.iterations,
        r.converged,
        t0.elapsed().as_secs_f64()
    ));
    let describe = |x: &[f64]| -> Result<Value, CliError> {
        let e = problem.evaluate(&to_design(x)).solver()?;
        let mid_err = (e.mid - problem.mid_target).norm();
        let end_err = (e.end - problem.end_target).norm();
        Ok(json!({"x": x, "objective": e.objective, "mid": vec3(&e.mid), "end": vec3(&e.end),
                  "mid_error": mid_err, "end_error": end_err,
                  "mid_error_relative": mid_err / problem.mid_target.norm()}))
    };
    let best = describe(&r.x)?;
    bundle.set("optimum", best.clone());
    bundle.set(
        "search",
        json!({"evaluations": r.evaluations, "iterations": r.iterations, "converged": r.converged}),
    );
    let mut table = Table::new(
        ["design", "y0", "y1", "y2", "z0", "z1", "z2", "tension", "objective", "mid_error", "end_error"]
            .map(String::from)
            .to_vec(),
    );
    let mut row = |k: f64, x: &[f64], v: &Value| {
        let mut r = vec![k];
        r.extend_from_slice(x);
        r.extend(["objective", "mid_error", "end_error"].map(|f| v[f].as_f64().unwrap_or(f64::NAN)));
        table.push(r);
    };
    row(0.0, &r.x, &best);
    if let Some(c) = &block.compare {
        if c.len() != 7 {
            return Err(CliError::Usage("optimize.compare needs 7 entries".into()));
        }
        match describe(c) {
            Ok(v) => {
                row(1.0, c, &v);
                bundle.set("compare", v);
            }
            Err(e) => {
                bundle.log(format!("reference design failed: {e}"));
                bundle.set("compare", json!({"x": c, "error": e.to_string()}));
            }
        }
    }
    table.write(&bundle.path("designs.csv"))?;
    let e = problem.evaluate(&to_design(&r.x)).solver()?;
    let mut frames = FrameWriter::create(&bundle.path("frames.jsonl"))?;
    frames.write(0.0, &forward_kinematics(l, &e.q).model()?, None)?;
    frames.finish()?;
    let mut plot = PlotData::default();
    let path = |x: &[f64], k: usize| -> Vec<(f64, f64)> {
        (0..=50)
            .map(|i| {
                let s = i as f64 / 50.0;
                (s, x[k] + x[k + 1] * s + x[k + 2] * s * s)
            })
            .collect()
    };
    let d0 = to_design(&block.x0);
    let d1 = to_design(&r.x);
    plot.add("y_initial", path(&d0, 0));
    plot.add("z_initial", path(&d0, 3));
    plot.add("y_optimum", path(&d1, 0));
    plot.add("z_optimum", path(&d1, 3));
    plot.write(&bundle.path("plot.csv"))?;
    Ok(())
}

