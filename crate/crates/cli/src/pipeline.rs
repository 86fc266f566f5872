//! Implementation of the subcommands. Each returns a JSON summary that the
//! binary prints on success.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use softrigid::contact::{id_solve_sequence, ContactSelection};
use softrigid::ik::ik_solve_sequence;
use softrigid::io::{
    grf_to_table, load_model, save_model, series_to_table, shape_names, states_to_table, table_to_frames, table_to_series,
    table_to_stance, table_to_states, Table,
};
use softrigid::metrics::compute_rrmse;
use softrigid::muscle::{activation_step, hill_tension, muscle_geometry, muscle_optimize, MuscleState};
use softrigid::synthetic::{reference_model, run_synthetic, write_dataset, Scenario, SyntheticSettings};
use softrigid::{Error, HybridModel};

use crate::weights::WeightsFile;
use crate::CliError;

/// Time stamps of two tables must agree to this tolerance.
const TIME_TOL: f64 = 1e-9;
/// Tension weight used with EMG references when the weights file gives none.
const EMG_TENSION_WEIGHT: f64 = 1e-4;

fn read_table(path: &Path) -> Result<Table, CliError> {
    if !path.exists() {
        return Err(CliError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
    }
    Ok(Table::read(path)?)
}

fn write_table(table: &Table, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(table.write(path)?)
}

fn model_at(path: &Path) -> Result<HybridModel, CliError> {
    if !path.exists() {
        return Err(CliError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "model file not found")));
    }
    Ok(load_model(path)?)
}

fn check_same_times(a: &[f64], b: &[f64], what: &str) -> Result<(), CliError> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| (x - y).abs() > TIME_TOL) {
        return Err(CliError::Usage(format!("{what}: time columns differ ({} vs {} rows)", a.len(), b.len())));
    }
    Ok(())
}

fn check_mu(mu: Option<f64>) -> Result<(), CliError> {
    match mu {
        Some(m) if !(m > 0.0 && m.is_finite()) => Err(CliError::Usage(format!("--mu must be positive, got {m}"))),
        _ => Ok(()),
    }
}

pub struct SimulateOptions {
    pub scenario: String,
    pub model: Option<PathBuf>,
    pub output: PathBuf,
    pub dt: f64,
    pub seed: u64,
    pub duration: f64,
    pub noise: f64,
    pub sample_every: usize,
    pub mu: Option<f64>,
}

pub fn simulate(o: SimulateOptions) -> Result<Value, CliError> {
    let scenario: Scenario = o.scenario.parse()?;
    check_mu(o.mu)?;
    let mut model = match &o.model {
        Some(p) => model_at(p)?,
        None => reference_model(),
    };
    if let Some(mu) = o.mu {
        for c in &mut model.contacts {
            c.mu = mu;
        }
    }
    let settings = SyntheticSettings {
        seed: o.seed,
        noise_sigma: o.noise,
        duration: o.duration,
        dt: o.dt,
        sample_every: o.sample_every,
        ..SyntheticSettings::default()
    };
    let ds = run_synthetic(&model, scenario, &settings)?;
    let mut files = write_dataset(&model, &ds, &o.output)?;
    let model_path = o.output.join("model.json");
    save_model(&model, &model_path)?;
    files.push(model_path);
    Ok(json!({
        "status": "ok",
        "command": "simulate",
        "scenario": scenario.name(),
        "frames": ds.times.len(),
        "body_weight": body_weight(&model),
        "files": files,
    }))
}

fn body_weight(model: &HybridModel) -> f64 {
    model.total_mass() * model.gravity.norm()
}

pub fn ik(model: &Path, input: &Path, output: &Path, weights: Option<&Path>) -> Result<Value, CliError> {
    let model = model_at(model)?;
    let settings = WeightsFile::load(weights)?.ik_settings();
    let frames = table_to_frames(&model, &read_table(input)?)?;
    let seq = ik_solve_sequence(&model, &frames, &settings, None)?;
    write_table(&states_to_table(&model, &seq.times, &seq.states), output)?;
    let n = seq.reports.len().max(1) as f64;
    let residuals: Vec<f64> = seq.reports.iter().map(|r| r.residual_rms).collect();
    let unconverged: Vec<usize> = seq.reports.iter().enumerate().filter(|(_, r)| !r.converged).map(|(k, _)| k).collect();
    Ok(json!({
        "status": "ok",
        "command": "ik",
        "frames": seq.reports.len(),
        "mean_residual_rms": residuals.iter().sum::<f64>() / n,
        "max_residual_rms": residuals.iter().copied().fold(0.0, f64::max),
        "max_iterations": seq.reports.iter().map(|r| r.iterations).max().unwrap_or(0),
        "unconverged_frames": unconverged,
        "output": output,
    }))
}

pub struct IdOptions {
    pub model: PathBuf,
    pub input: PathBuf,
    pub output: PathBuf,
    pub stance_mask: Option<PathBuf>,
    pub mu: Option<f64>,
    pub weights_file: Option<PathBuf>,
    pub height_eps: f64,
    pub speed_eps: f64,
}

pub fn id(o: IdOptions) -> Result<Value, CliError> {
    check_mu(o.mu)?;
    let model = model_at(&o.model)?;
    let weights = WeightsFile::load(o.weights_file.as_deref())?.id_weights(o.mu);
    let (times, states) = table_to_states(&model, &read_table(&o.input)?)?;
    let selection = match &o.stance_mask {
        Some(p) => {
            let table = read_table(p)?;
            check_same_times(&table.times()?, &times, "stance mask")?;
            ContactSelection::Given(table_to_stance(&model, &table)?)
        }
        None => ContactSelection::Thresholds { height_eps: o.height_eps, speed_eps: o.speed_eps },
    };
    let seq = id_solve_sequence(&model, &times, &states, &selection, &weights)?;

    let nr = model.n_joints();
    let ns = model.n_strains();
    let mut torques = Vec::with_capacity(times.len());
    let mut report = Table::new(
        ["time", "active_contacts", "solved", "qp_iterations", "dynamics_residual", "cone_violation"]
            .map(String::from)
            .to_vec(),
    );
    let mut worst_cone = 0.0f64;
    for f in &seq.frames {
        match &f.outcome {
            Ok(sol) => {
                let mut v = DVector::zeros(nr + ns);
                v.rows_mut(0, nr).copy_from(&sol.tau_r);
                v.rows_mut(nr, ns).copy_from(&sol.tau_s_residual);
                torques.push(v);
                let cone = sol
                    .forces
                    .iter()
                    .map(|(c, f)| {
                        let mu = o.mu.unwrap_or(model.contacts[*c].mu);
                        (f.xy().norm() - mu * f.z).max(-f.z).max(0.0)
                    })
                    .fold(0.0, f64::max);
                worst_cone = worst_cone.max(cone);
                report.push(vec![
                    f.time,
                    f.active.len() as f64,
                    1.0,
                    sol.qp_info.iterations as f64,
                    sol.residual_dynamics.norm(),
                    cone,
                ]);
            }
            Err(_) => {
                torques.push(DVector::from_element(nr + ns, f64::NAN));
                report.push(vec![f.time, f.active.len() as f64, 0.0, f64::NAN, f64::NAN, f64::NAN]);
            }
        }
    }
    std::fs::create_dir_all(&o.output).map_err(|e| CliError::io(&o.output, e))?;
    write_table(&grf_to_table(&times, &seq.grf), &o.output.join("grf.csv"))?;
    write_table(&series_to_table(&times, &shape_names(&model), &torques), &o.output.join("torques.csv"))?;
    write_table(&report, &o.output.join("id_report.csv"))?;

    let failed = seq.failed_frames();
    if !times.is_empty() && failed.len() == times.len() {
        let first = seq.frames.into_iter().next().and_then(|f| f.outcome.err());
        return Err(first.map_or_else(|| CliError::Usage("every frame failed".into()), CliError::Core));
    }
    let errors: Vec<Value> = seq
        .frames
        .iter()
        .enumerate()
        .filter_map(|(k, f)| f.outcome.as_ref().err().map(|e| json!({ "frame": k, "message": e.to_string() })))
        .collect();
    Ok(json!({
        "status": "ok",
        "command": "id",
        "frames": times.len(),
        "failed_frames": failed,
        "frame_errors": errors,
        "max_cone_violation": worst_cone,
        "output": o.output,
    }))
}

pub fn muscle(
    model: &Path,
    input: &Path,
    states: &Path,
    emg: Option<&Path>,
    output: &Path,
    weights: Option<&Path>,
) -> Result<Value, CliError> {
    let model = model_at(model)?;
    if model.muscles.is_empty() {
        return Err(CliError::Usage("the model defines no muscles".into()));
    }
    let file = WeightsFile::load(weights)?;
    let mut mw = file.muscle_weights();
    let (times, states) = table_to_states(&model, &read_table(states)?)?;
    let joint_names: Vec<String> = shape_names(&model).into_iter().take(model.n_joints()).collect();
    let (tau_times, tau) = table_to_series(&read_table(input)?, &joint_names)?;
    check_same_times(&tau_times, &times, "torques vs states")?;
    let names: Vec<String> = model.muscles.iter().map(|m| m.name.clone()).collect();
    let nm = names.len();

    let activations = match emg {
        Some(p) => {
            let (emg_times, emg) = table_to_series(&read_table(p)?, &names)?;
            check_same_times(&emg_times, &times, "EMG vs states")?;
            if mw.w_tension.is_empty() {
                mw.w_tension = vec![EMG_TENSION_WEIGHT; nm];
            }
            Some(activation_series(&model, &times, &emg)?)
        }
        None => None,
    };

    let solved: Vec<Result<(DVector<f64>, f64), Error>> = (0..times.len())
        .into_par_iter()
        .map(|k| {
            let f_ref = match &activations {
                Some(a) => {
                    let geo = muscle_geometry(&model, &states[k], &model.muscles)?;
                    DVector::from_fn(nm, |i, _| hill_tension(&model.muscles[i].params, a[k][i], geo.lengths[i], geo.rates[i]))
                }
                None => DVector::zeros(nm),
            };
            let sol = muscle_optimize(&model, &states[k], &tau[k], &model.muscles, &f_ref, &mw)?;
            let rel = sol.residual.norm() / tau[k].norm().max(f64::MIN_POSITIVE);
            Ok((sol.tensions, rel))
        })
        .collect();
    let mut tensions = Vec::with_capacity(solved.len());
    let mut worst = 0.0f64;
    for (k, s) in solved.into_iter().enumerate() {
        let (t, rel) = s.map_err(|e| CliError::Core(Error::Frame { index: k, source: Box::new(e) }))?;
        worst = worst.max(rel);
        tensions.push(t);
    }
    write_table(&series_to_table(&times, &names, &tensions), output)?;
    Ok(json!({
        "status": "ok",
        "command": "muscle",
        "frames": times.len(),
        "muscles": names,
        "max_relative_residual": worst,
        "emg": activations.is_some(),
        "output": output,
    }))
}

/// Activations driven by the EMG rows, starting from the first row's
/// normalized input.
fn activation_series(model: &HybridModel, times: &[f64], emg: &[DVector<f64>]) -> Result<Vec<Vec<f64>>, CliError> {
    let mut out = Vec::with_capacity(times.len());
    let mut state: Vec<MuscleState> = model
        .muscles
        .iter()
        .enumerate()
        .map(|(i, m)| MuscleState { activation: emg.first().map_or(0.0, |e| (e[i] / m.params.u_mvc).clamp(0.0, 1.0)) })
        .collect();
    for k in 0..times.len() {
        if k > 0 {
            let dt = times[k] - times[k - 1];
            for (i, m) in model.muscles.iter().enumerate() {
                state[i] = activation_step(&m.params, state[i], emg[k][i], dt)?;
            }
        }
        out.push(state.iter().map(|s| s.activation).collect());
    }
    Ok(out)
}

fn metric(estimate: &[f64], truth: &[f64], mask: Option<&[bool]>) -> Value {
    let used = mask.map_or(truth.len(), |m| m.iter().filter(|b| **b).count());
    match compute_rrmse(estimate, truth, mask) {
        Ok(r) => json!({ "rmse": r.rmse, "rrmse_percent": r.percent, "samples": used }),
        Err(Error::DegenerateRange(_)) => {
            let sq: f64 = (0..truth.len())
                .filter(|&i| mask.is_none_or(|m| m[i]))
                .map(|i| (estimate[i] - truth[i]).powi(2))
                .sum();
            json!({ "rmse": (sq / used as f64).sqrt(), "rrmse_percent": null, "samples": used, "note": "degenerate range" })
        }
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn grf_groups(table: &Table) -> Vec<String> {
    table.header.iter().filter_map(|h| h.strip_suffix(".fx")).map(String::from).collect()
}

fn net_force(table: &Table, groups: &[String]) -> Result<Vec<Vector3<f64>>, CliError> {
    let mut net = vec![Vector3::zeros(); table.n_rows()];
    for g in groups {
        for (a, axis) in ["fx", "fy", "fz"].iter().enumerate() {
            for (k, v) in table.column(&format!("{g}.{axis}"))?.into_iter().enumerate() {
                net[k][a] += v;
            }
        }
    }
    Ok(net)
}

pub fn validate(
    input: &Path,
    truth: &Path,
    stance: Option<&Path>,
    model: Option<&Path>,
    output: Option<&Path>,
) -> Result<Value, CliError> {
    let est = read_table(input)?;
    let tru = read_table(truth)?;
    let times = tru.times()?;
    check_same_times(&est.times()?, &times, "estimate vs truth")?;
    let model = model.map(model_at).transpose()?;

    let mut group_masks: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    let mut any_mask: Option<Vec<bool>> = None;
    if let Some(path) = stance {
        let model = model.as_ref().ok_or_else(|| CliError::Usage("--stance-mask requires --model".into()))?;
        let table = read_table(path)?;
        check_same_times(&table.times()?, &times, "stance mask")?;
        let sets = table_to_stance(model, &table)?;
        for g in model.contact_groups() {
            let mask = sets.iter().map(|s| s.iter().any(|&c| model.contacts[c].group == g)).collect();
            group_masks.insert(g, mask);
        }
        any_mask = Some(sets.iter().map(|s| !s.is_empty()).collect());
    }
    let mask_for = |column: &str| -> Option<&[bool]> {
        let group = column.rsplit_once('.').map(|(g, _)| g);
        group.and_then(|g| group_masks.get(g)).or(any_mask.as_ref()).map(|m| m.as_slice())
    };

    let mut columns = Map::new();
    for name in est.header.iter().filter(|h| *h != "time") {
        if tru.column_index(name).is_err() {
            continue;
        }
        let (e, t) = (est.column(name)?, tru.column(name)?);
        columns.insert(name.clone(), metric(&e, &t, mask_for(name)));
    }

    let mut report = json!({
        "status": "ok",
        "command": "validate",
        "frames": times.len(),
        "masked": any_mask.is_some(),
        "columns": columns,
    });

    let groups = grf_groups(&est);
    if !groups.is_empty() {
        let (net_e, net_t) = (net_force(&est, &groups)?, net_force(&tru, &groups)?);
        let mut net = Map::new();
        for (a, axis) in ["fx", "fy", "fz"].iter().enumerate() {
            let e: Vec<f64> = net_e.iter().map(|v| v[a]).collect();
            let t: Vec<f64> = net_t.iter().map(|v| v[a]).collect();
            net.insert(axis.to_string(), metric(&e, &t, any_mask.as_deref()));
        }
        report["net"] = Value::Object(net);
        if let Some(model) = &model {
            let frames: Vec<usize> = (0..times.len()).filter(|&k| any_mask.as_ref().is_none_or(|m| m[k])).collect();
            let mean_fz = frames.iter().map(|&k| net_e[k].z).sum::<f64>() / frames.len().max(1) as f64;
            let w = body_weight(model);
            report["body_weight"] = json!({
                "weight": w,
                "mean_net_fz": mean_fz,
                "relative_error": (mean_fz - w).abs() / w,
            });
        }
    }
    if let Some(path) = output {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    }
    Ok(report)
}

