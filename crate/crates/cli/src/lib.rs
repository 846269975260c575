//! Command implementations behind the `pzbeam` binary.
//!
//! Each command is a function of the configuration (and input files) that
//! writes its outputs into a directory and returns a short text summary.

pub mod config;

use std::path::{Path, PathBuf};

use piezobeam::fem::{assemble, ReducedSystem};
use piezobeam::ident::{identify_cmaes, identify_sequential, objective, synthesize, ForwardModel, IdentResult, MeasurementSet, ObjectiveValue};
use piezobeam::io::write_atomic;
use piezobeam::mesh::{export_vtk, generate_assembly_mesh, generate_beam_mesh, save_mesh, NodalField, PointTag, Region, TaggedMesh};
use piezobeam::model::{
    bernoulli_first_frequency, cantilever_tip_deflection, longitudinal_wave_speed, modulus_from_wave_speed, ParameterBounds,
    ParameterSet, Param,
};
use piezobeam::signal::dominant_frequency;
use piezobeam::solve::{preload, run_transient, solve_modal, RunOptions, TransientRecord};
use serde_json::{json, Value};

pub use config::RunConfig;
use config::{Strategy, Structure};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] piezobeam::Error),
}

impl CliError {
    /// Process exit code: 2 for bad input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(piezobeam::Error::Io { .. }) => 1,
            CliError::Core(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Output file names inside the output directory.
pub mod files {
    pub const ANALYTIC: &str = "analytic.json";
    pub const MESH: &str = "mesh.txt";
    pub const MESH_VTK: &str = "mesh.vtk";
    pub const MODES: &str = "modes.csv";
    pub const MODES_VTK: &str = "modes.vtk";
    pub const STATIC: &str = "static.json";
    pub const STATIC_VTK: &str = "static.vtk";
    pub const TRANSIENT: &str = "transient.csv";
    pub const MEASUREMENTS: &str = "measurements.csv";
    pub const IDENTIFICATION: &str = "identification.json";
    pub const FREQUENCY: &str = "frequency.json";
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| piezobeam::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn theta_json(t: &ParameterSet) -> Value {
    serde_json::to_value(config::ParameterValues::from(*t)).expect("parameters serialize")
}

fn objective_json(f: &ObjectiveValue) -> Value {
    json!({"total": f.total, "velocity": f.velocity, "voltage": f.voltage})
}

pub fn build_mesh(cfg: &RunConfig, structure: Structure) -> Result<TaggedMesh> {
    let geom = cfg.assembly_geometry()?;
    let res = cfg.resolution()?;
    Ok(match structure {
        Structure::Assembly => generate_assembly_mesh(&geom, &res, cfg.mesh.order)?,
        Structure::Beam => generate_beam_mesh(&geom, &res, cfg.mesh.order)?,
    })
}

fn build_system(cfg: &RunConfig, mesh: &TaggedMesh) -> Result<(piezobeam::fem::AssembledSystem, ReducedSystem)> {
    let full = assemble(mesh, &cfg.materials()?, &cfg.assembly_options()?)?;
    let reduced = full.reduce();
    Ok((full, reduced))
}

pub fn cmd_analytic(cfg: &RunConfig, out: &Path) -> Result<String> {
    let geom = cfg.assembly_geometry()?;
    let mats = cfg.materials()?;
    let f1 = bernoulli_first_frequency(&geom.beam, &mats.beam);
    let tip = cantilever_tip_deflection(&geom.beam, &mats.beam, cfg.load.tip_force);
    let bounds = cfg.bounds()?;
    let table: Vec<Value> = [bounds.lower.young_modulus(), mats.beam.young_modulus, bounds.upper.young_modulus()]
        .iter()
        .map(|&e| {
            let c1 = longitudinal_wave_speed(&mats.beam.with_young_modulus(e));
            let back = modulus_from_wave_speed(c1, mats.beam.poisson_ratio, mats.beam.density).unwrap_or(f64::NAN);
            json!({"young_modulus": e, "wave_speed": c1, "recovered_modulus": back})
        })
        .collect();
    prepare_dir(out)?;
    write_json(
        &out.join(files::ANALYTIC),
        &json!({
            "first_frequency_hz": f1,
            "tip_force": cfg.load.tip_force,
            "tip_deflection": tip,
            "wave_speed_table": table,
        }),
    )?;
    let mut s = format!("f1 (Euler-Bernoulli) = {f1:.2} Hz\ntip deflection under {:.4} N = {:.4} mm\n", cfg.load.tip_force, tip * 1e3);
    s.push_str("E [GPa]      c1 [m/s]\n");
    for row in &table {
        s.push_str(&format!("{:<12.2} {:.1}\n", row["young_modulus"].as_f64().unwrap_or(0.0) / 1e9, row["wave_speed"].as_f64().unwrap_or(0.0)));
    }
    Ok(s)
}

pub fn cmd_mesh(cfg: &RunConfig, out: &Path) -> Result<String> {
    let mesh = build_mesh(cfg, Structure::Assembly)?;
    prepare_dir(out)?;
    save_mesh(&mesh, out.join(files::MESH))?;
    export_vtk(&mesh, &[], out.join(files::MESH_VTK))?;
    Ok(format!(
        "{} vertices, {} cells ({} piezo), order {}\nbeam volume {:.4e} m^3, disc volume {:.4e} m^3\n",
        mesh.n_vertices(),
        mesh.n_cells(),
        mesh.regions().iter().filter(|&&r| r == Region::Piezo).count(),
        mesh.order(),
        mesh.region_volume(Region::Elastic),
        mesh.region_volume(Region::Piezo),
    ))
}

pub fn cmd_modal(cfg: &RunConfig, out: &Path) -> Result<String> {
    let mesh = build_mesh(cfg, cfg.modal.structure)?;
    let (full, sys) = build_system(cfg, &mesh)?;
    let modes = solve_modal(&sys, cfg.materials.beam.young_modulus, cfg.modal.n_modes, cfg.modal.include_piezo)?;
    let index: Vec<f64> = (1..=modes.len()).map(|i| i as f64).collect();
    let freqs: Vec<f64> = modes.iter().map(|m| m.frequency).collect();
    prepare_dir(out)?;
    piezobeam::io::write_csv(&out.join(files::MODES), &["mode", "frequency_hz"], &[&index, &freqs])?;
    let shapes: Vec<(String, Vec<[f64; 3]>)> = modes
        .iter()
        .enumerate()
        .map(|(i, m)| (format!("mode_{}", i + 1), full.u_space.nodal_vectors(&full.u_space.expand(&m.shape))))
        .collect();
    let fields: Vec<NodalField<'_>> = shapes.iter().map(|(n, v)| NodalField::Vector(n, v)).collect();
    export_vtk(&mesh, &fields, out.join(files::MODES_VTK))?;
    Ok(freqs.iter().enumerate().map(|(i, f)| format!("f{} = {f:.3} Hz\n", i + 1)).collect())
}

pub fn cmd_static(cfg: &RunConfig, out: &Path) -> Result<String> {
    let mesh = build_mesh(cfg, Structure::Assembly)?;
    let (full, sys) = build_system(cfg, &mesh)?;
    let pre = preload(&sys, cfg.materials.beam.young_modulus)?;
    let u = full.u_space.expand(&pre.state.u);
    let p = full.p_space.expand(&pre.state.p);
    let deflection = |tag| {
        mesh.point(tag)
            .and_then(|node| full.u_space.dof(node, 2))
            .map_or(0.0, |d| u[d])
    };
    let (w, l) = (deflection(PointTag::W), deflection(PointTag::L));
    prepare_dir(out)?;
    let disp = full.u_space.nodal_vectors(&u);
    let pot = full.p_space.nodal_scalars(&p);
    export_vtk(
        &mesh,
        &[NodalField::Vector("displacement", &disp), NodalField::Scalar("potential", &pot)],
        out.join(files::STATIC_VTK),
    )?;
    write_json(
        &out.join(files::STATIC),
        &json!({"uz_weight_point": w, "uz_laser_point": l, "max_abs_potential": pot.iter().fold(0.0f64, |m, x| m.max(x.abs()))}),
    )?;
    Ok(format!("uz at W = {:.5} mm\nuz at L = {:.5} mm\n", w * 1e3, l * 1e3))
}

fn transient_record(cfg: &RunConfig) -> Result<TransientRecord> {
    let mesh = build_mesh(cfg, Structure::Assembly)?;
    let (_, sys) = build_system(cfg, &mesh)?;
    let theta = cfg.theta();
    let pre = preload(&sys, theta.young_modulus())?;
    Ok(run_transient(&sys, &cfg.grid()?, &pre.state, &theta, &RunOptions::default())?)
}

pub fn cmd_transient(cfg: &RunConfig, out: &Path) -> Result<String> {
    let rec = transient_record(cfg)?;
    prepare_dir(out)?;
    rec.write_csv(out.join(files::TRANSIENT))?;
    let peak = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(format!(
        "{} rows to {}\nmax |vz_L| = {:.4e} m/s, max |p_bar| = {:.4e} V\n",
        rec.len(),
        files::TRANSIENT,
        peak(&rec.vz_laser),
        peak(&rec.p_bar)
    ))
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<String> {
    let mesh = build_mesh(cfg, Structure::Assembly)?;
    let (_, sys) = build_system(cfg, &mesh)?;
    let grid = cfg.grid()?;
    let model = ForwardModel::new(&sys, grid)?;
    let times: Vec<f64> = grid.times().into_iter().step_by(cfg.synthesis.stride).collect();
    let truth: ParameterSet = cfg.synthesis.truth.into();
    let data = synthesize(&model, &truth, &times, cfg.synthesis.noise_level, cfg.seed)?;
    prepare_dir(out)?;
    data.write_csv(out.join(files::MEASUREMENTS))?;
    Ok(format!("{} samples to {}\n", data.len(), files::MEASUREMENTS))
}

fn result_json(r: &IdentResult) -> Value {
    json!({
        "theta": theta_json(&r.theta),
        "objective": objective_json(&r.objective),
        "evaluations": r.evaluations,
        "jacobian_evaluations": r.jacobian_evaluations,
        "failed_evaluations": r.failed_evaluations,
        "iterations": r.iterations,
        "termination": r.termination,
        "history": {
            "objective": r.history.iter().map(|h| h.objective).collect::<Vec<_>>(),
            "theta": r.history.iter().map(|h| h.theta.0.to_vec()).collect::<Vec<_>>(),
        },
    })
}

/// Load and preprocess the measurements named by `path` or the config.
pub fn load_measurements(cfg: &RunConfig, path: Option<&Path>) -> Result<MeasurementSet> {
    let path: PathBuf = path
        .map(Path::to_path_buf)
        .or_else(|| cfg.identification.measurements.clone())
        .ok_or_else(|| CliError::Config("no measurement file given".into()))?;
    let mut m = MeasurementSet::read_csv(&path).map_err(|e| match e {
        piezobeam::Error::Io { .. } | piezobeam::Error::Parse { .. } => CliError::Config(e.to_string()),
        other => other.into(),
    })?;
    if let Some([a, b]) = cfg.identification.window {
        m = m.window(a, b)?;
    }
    if cfg.identification.stride > 1 {
        m = m.subsample(cfg.identification.stride)?;
    }
    Ok(m)
}

pub fn cmd_identify(cfg: &RunConfig, measurements: Option<&Path>, out: &Path) -> Result<String> {
    let bounds = cfg.bounds()?;
    let theta0: ParameterSet = cfg.identification.initial.into();
    let meas = load_measurements(cfg, measurements)?;
    let mesh = build_mesh(cfg, Structure::Assembly)?;
    let (_, sys) = build_system(cfg, &mesh)?;
    let model = ForwardModel::new(&sys, cfg.grid()?)?;
    let initial = objective(&model, &theta0, &meas)?;
    let id = &cfg.identification;
    let mut report = json!({
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "strategy": id.strategy,
        "samples": meas.len(),
        "theta0": theta_json(&theta0),
        "bounds": bounds_json(&bounds),
        "initial_objective": objective_json(&initial),
    });
    let (theta, fin, evaluations) = match id.strategy {
        Strategy::Sequential => {
            let r = identify_sequential(&model, &theta0, &bounds, &meas, id.passes, &cfg.lsq_options())?;
            let stage = |name: &str, s: &IdentResult| {
                let mut v = result_json(s);
                v["stage"] = json!(name);
                v
            };
            report["passes"] = json!(id.passes);
            report["stages"] = json!([stage("mechanical", &r.mechanical), stage("electrical", &r.electrical)]);
            report["earlier_stages"] = Value::Array(
                r.earlier
                    .iter()
                    .enumerate()
                    .map(|(i, s)| stage(if i % 2 == 0 { "mechanical" } else { "electrical" }, s))
                    .collect(),
            );
            (r.theta, r.objective, r.evaluations())
        }
        Strategy::Cmaes => {
            let r = identify_cmaes(&model, &theta0, &bounds, &meas, &cfg.cmaes_options())?;
            report["run"] = result_json(&r);
            (r.theta, r.objective, r.evaluations)
        }
    };
    report["theta"] = theta_json(&theta);
    report["objective"] = objective_json(&fin);
    report["evaluations"] = json!(evaluations);
    prepare_dir(out)?;
    write_json(&out.join(files::IDENTIFICATION), &report)?;
    let mut s = format!("F: {:.4e} -> {:.4e} after {evaluations} evaluations\n", initial.total, fin.total);
    for p in Param::ALL {
        s.push_str(&format!("{:<6} {:.6e}\n", p.name(), theta.get(p)));
    }
    Ok(s)
}

fn bounds_json(b: &ParameterBounds) -> Value {
    json!({"lower": theta_json(&b.lower), "upper": theta_json(&b.upper)})
}

/// Dominant frequency of the laser velocity, from a measurement CSV when
/// given, otherwise from a transient run of the config.
pub fn cmd_freq(cfg: &RunConfig, input: Option<&Path>, out: &Path) -> Result<String> {
    let (times, vz) = match input {
        Some(path) => {
            let m = MeasurementSet::read_csv(path).map_err(|e| CliError::Config(e.to_string()))?;
            (m.times().to_vec(), m.vz().to_vec())
        }
        None => {
            let r = transient_record(cfg)?;
            (r.times, r.vz_laser)
        }
    };
    if times.len() < 2 {
        return Err(CliError::Config("need at least two samples".into()));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let f = dominant_frequency(&vz, dt)?;
    prepare_dir(out)?;
    write_json(&out.join(files::FREQUENCY), &json!({"frequency_hz": f, "samples": vz.len(), "dt": dt}))?;
    Ok(format!("dominant frequency = {f:.3} Hz\n"))
}
