use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use rtheta::control::{calibrate_correction, pid_track, single_shot_correct, Calibration, CorrectionConfig};
use rtheta::dynamics::State;
use rtheta::planners::{
    constraint_limited_protocol_with, min_feasible_tf, peak_inputs, sta_inputs, Protocol, ProtocolDocument,
    ProtocolLabel, ReferenceTrajectory,
};
use rtheta::robustness::{
    dissipation_scan, initial_error_grid, initial_error_grid_with, input_noise_trials, measurement_noise_trials,
    pid_initial_error_grid, re_metric, DissipationMap, RobustnessReport, RunOutcome,
};
use rtheta::simulate::TrajectoryRecord;
use rtheta::timeopt::{pmp_diagnostics, solve_time_optimal, OcpConfig, OcpSolution};
use rtheta::trajectory::{PolynomialProfile, ShapeOrder};

use crate::config::{Controller, CorrectionSpec, ProtocolSpec, RobustnessSpec, RunConfig};
use crate::error::CliError;
use crate::output::{Outputs, Provenance};

/// Bisection tolerance for shortest feasible STA durations (s).
pub const MIN_TF_TOL: f64 = 1e-4;

pub struct Built {
    pub protocol: Protocol,
    pub document: ProtocolDocument,
    pub solution: Option<OcpSolution>,
}

pub fn ocp_config(cfg: &RunConfig) -> OcpConfig {
    let mut ocp = OcpConfig {
        bounds: cfg.bounds,
        seed: cfg.seed,
        ..OcpConfig::default()
    };
    if let ProtocolSpec::TimeOptimal {
        n_intervals,
        endpoint_accel,
    } = cfg.protocol
    {
        ocp.n_intervals = n_intervals;
        ocp.endpoint_accel = endpoint_accel;
    }
    ocp
}

pub fn solve(cfg: &RunConfig) -> Result<Built, CliError> {
    let ends = cfg.endpoints();
    let sol = solve_time_optimal(&cfg.params, &ends.start(), &ends.goal(), &ocp_config(cfg))?;
    Ok(Built {
        protocol: sol.to_protocol()?,
        document: sol.to_document()?,
        solution: Some(sol),
    })
}

pub fn build_protocol(cfg: &RunConfig) -> Result<Built, CliError> {
    let p = &cfg.params;
    let ends = cfg.endpoints();
    let protocol = match &cfg.protocol {
        ProtocolSpec::Sta { order, t_f, samples } => {
            let t_f = match t_f {
                Some(t) => *t,
                None => min_feasible_tf(p, *order, &ends, &cfg.bounds, MIN_TF_TOL)?,
            };
            let prof = PolynomialProfile::new(*order, ends.q0, ends.qf, t_f)?;
            sta_inputs(p, &prof, *samples)?
        }
        ProtocolSpec::ConstraintLimited {
            kinematic_bounds,
            samples,
        } => constraint_limited_protocol_with(p, &ends, kinematic_bounds, *samples)?,
        ProtocolSpec::TimeOptimal { .. } => return solve(cfg),
        ProtocolSpec::File { path } => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read protocol {}: {e}", path.display())))?;
            let doc: ProtocolDocument = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("protocol {}: {e}", path.display())))?;
            let protocol = Protocol::from_document(doc.clone())?;
            return Ok(Built {
                protocol,
                document: doc,
                solution: None,
            });
        }
        ProtocolSpec::Hold => Protocol::zero_duration(ProtocolLabel::StaQuintic, p, ends.q0)?,
    };
    Ok(Built {
        document: protocol.to_document(),
        protocol,
        solution: None,
    })
}

fn reference(protocol: &Protocol) -> Result<ReferenceTrajectory, CliError> {
    protocol
        .reference
        .ok_or_else(|| CliError::config("this command needs a protocol with a reference trajectory"))
}

#[derive(Debug, Serialize)]
struct RunSummary {
    label: String,
    t_f: f64,
    terminal_state: State,
    #[serde(rename = "E_f")]
    e_f: f64,
    residual_kinetic: f64,
    aborted_at: Option<f64>,
}

fn run_summary(cfg: &RunConfig, label: &str, t_f: f64, rec: &TrajectoryRecord) -> RunSummary {
    RunSummary {
        label: label.to_owned(),
        t_f,
        terminal_state: rec.terminal,
        e_f: rec.terminal_energy,
        residual_kinetic: rec.residual_kinetic(&cfg.params),
        aborted_at: rec.aborted_at,
    }
}

pub fn write_record(out: &Outputs, name: &str, rec: &TrajectoryRecord) -> Result<(), CliError> {
    let note = rec.aborted_at.map(|t| format!("partial: aborted at t = {t}"));
    out.csv(name, note.as_deref(), |w| rec.write_csv(w))?;
    Ok(())
}

fn abort_check(rec: &TrajectoryRecord) -> Result<(), CliError> {
    match rec.aborted_at {
        Some(t) => Err(CliError::aborted(format!("trajectory aborted at t = {t} s; partial record written"))),
        None => Ok(()),
    }
}

pub fn plan(cfg: &RunConfig, dir: &Path, prov: Provenance) -> Result<Value, CliError> {
    let built = build_protocol(cfg)?;
    let proto = &built.protocol;
    let (rec, _) = proto.run(&proto.params, &proto.endpoints.start(), &cfg.sim());
    let out = Outputs::create(dir, prov)?;
    out.protocol("protocol.json", built.document.clone())?;
    write_record(&out, "trajectory.csv", &rec)?;
    let (peak_tau, peak_f) = proto.schedule.peak_abs();
    abort_check(&rec)?;
    Ok(json!({
        "command": "plan",
        "label": proto.label.as_str(),
        "t_f": proto.t_f,
        "peak_tau": peak_tau,
        "peak_f": peak_f,
        "config_hash": out.provenance().config_hash,
    }))
}

pub fn min_tf(cfg: &RunConfig, dir: &Path, prov: Provenance) -> Result<Value, CliError> {
    let order = match cfg.protocol {
        ProtocolSpec::Sta { order, .. } => order,
        _ => ShapeOrder::Seventh,
    };
    let ends = cfg.endpoints();
    let t_f = min_feasible_tf(&cfg.params, order, &ends, &cfg.bounds, MIN_TF_TOL)?;
    let (peak_tau, peak_f) = peak_inputs(&cfg.params, &PolynomialProfile::new(order, ends.q0, ends.qf, t_f)?, 4001)?;
    let summary = json!({
        "command": "min-tf",
        "order": order,
        "t_f": t_f,
        "tolerance": MIN_TF_TOL,
        "bounds": cfg.bounds,
        "peak_tau": peak_tau,
        "peak_f": peak_f,
    });
    let out = Outputs::create(dir, prov)?;
    out.json("min_tf.json", &summary)?;
    Ok(with_hash(summary, &out))
}

pub fn timeopt(cfg: &RunConfig, dir: &Path, prov: Provenance) -> Result<Value, CliError> {
    let built = solve(cfg)?;
    let sol = built.solution.as_ref().expect("solver output");
    let costate = pmp_diagnostics(&cfg.params, sol);
    let (rec, _) = built.protocol.run(&cfg.params, &built.protocol.endpoints.start(), &cfg.sim());
    let out = Outputs::create(dir, prov)?;
    out.protocol("protocol.json", built.document.clone())?;
    out.json("costate.json", &costate)?;
    write_record(&out, "trajectory.csv", &rec)?;
    abort_check(&rec)?;
    Ok(with_hash(
        json!({
            "command": "timeopt",
            "t_f": sol.t_f,
            "n_intervals": sol.n_intervals(),
            "saturation_fraction": sol.saturation_fraction,
            "kkt_residual": sol.kkt_residual,
            "terminal_error": sol.terminal_error,
            "sign_consistency": costate.sign_consistency,
        }),
        &out,
    ))
}

pub fn run(cfg: &RunConfig, dir: &Path, prov: Provenance) -> Result<Value, CliError> {
    let built = build_protocol(cfg)?;
    let proto = &built.protocol;
    let (rec, _) = proto.run(&cfg.params, &cfg.start(), &cfg.sim());
    let summary = run_summary(cfg, proto.label.as_str(), proto.t_f, &rec);
    let out = Outputs::create(dir, prov)?;
    write_record(&out, "trajectory.csv", &rec)?;
    out.json("summary.json", &summary)?;
    abort_check(&rec)?;
    Ok(with_hash(json!({ "command": "run", "summary": summary }), &out))
}

pub fn pid(cfg: &RunConfig, dir: &Path, prov: Provenance) -> Result<Value, CliError> {
    let built = build_protocol(cfg)?;
    let reference = reference(&built.protocol)?;
    let noise = cfg.measurement_noise.map(|n| n.spec());
    let rec = pid_track(&cfg.params, &reference, &cfg.pid, &cfg.start(), noise.as_ref(), cfg.seed, &cfg.sim())?;
    let goal = built.protocol.endpoints.qf;
    let summary = run_summary(cfg, "pid", built.protocol.t_f, &rec);
    let terminal_error = [rec.terminal.theta - goal.theta, rec.terminal.r - goal.r];
    let out = Outputs::create(dir, prov)?;
    write_record(&out, "pid.csv", &rec)?;
    out.json("summary.json", &json!({ "run": summary, "terminal_error": terminal_error }))?;
    abort_check(&rec)?;
    Ok(with_hash(
        json!({ "command": "pid", "summary": summary, "terminal_error": terminal_error }),
        &out,
    ))
}

/// Fixed constants, or the calibrated best with the calibration record.
pub fn correction_config(cfg: &RunConfig, proto: &Protocol) -> Result<(CorrectionConfig, Option<Calibration>), CliError> {
    match &cfg.correction {
        CorrectionSpec::Fixed(c) => Ok((*c, None)),
        CorrectionSpec::Calibrate { grid, space } => {
            let cal = calibrate_correction(&cfg.params, proto, &grid.spec().offsets(), space, &cfg.sim())?;
            let best = cal.config.ok_or_else(|| CliError {
                code: CliError::SOLVER,
                message: "calibration found no configuration that beats the uncorrected protocol".into(),
            })?;
            Ok((best, Some(cal)))
        }
    }
}

pub fn correct(cfg: &RunConfig, dir: &Path, prov: Provenance) -> Result<Value, CliError> {
    let built = build_protocol(cfg)?;
    let proto = &built.protocol;
    reference(proto)?;
    let sim = cfg.sim();
    let (cc, calibration) = correction_config(cfg, proto)?;
    let nominal = proto.nominal_run(&sim)?;
    let (uncorrected, _) = proto.run(&cfg.params, &cfg.start(), &sim);
    let noise = cfg.measurement_noise.map(|n| n.spec());
    let corrected = single_shot_correct(&cfg.params, proto, &cc, &cfg.start(), noise.as_ref(), cfg.seed, &sim)?;
    let re = |rec: &TrajectoryRecord| match rec.aborted_at {
        Some(_) => Ok(None),
        None => re_metric(nominal.terminal_energy, rec.terminal_energy).map(Some),
    };
    let summary = json!({
        "command": "correct",
        "config": cc,
        "calibration": calibration,
        "E_f": nominal.terminal_energy,
        "RE_uncorrected": re(&uncorrected)?,
        "RE_corrected": re(&corrected.record)?,
        "terminal_state": corrected.record.terminal,
    });
    let out = Outputs::create(dir, prov)?;
    write_record(&out, "uncorrected.csv", &uncorrected)?;
    write_record(&out, "corrected.csv", &corrected.record)?;
    match &corrected.report {
        Some(r) => out.json("correction.json", r)?,
        None => out.json("correction.json", &json!({ "skipped": "run aborted before the measurement" }))?,
    };
    out.json("summary.json", &summary)?;
    abort_check(&corrected.record)?;
    Ok(with_hash(summary, &out))
}

pub fn robustness_report(cfg: &RunConfig) -> Result<RobustnessReport, CliError> {
    let built = build_protocol(cfg)?;
    let proto = &built.protocol;
    let p = &cfg.params;
    let sim = cfg.sim();
    let report = match &cfg.robustness {
        RobustnessSpec::InitialErrorGrid { controller, grid } => match controller {
            Controller::OpenLoop => initial_error_grid(p, proto, &grid.spec(), &sim)?,
            Controller::Pid => {
                pid_initial_error_grid(p, &reference(proto)?, &cfg.pid, &proto.endpoints.start(), &grid.spec(), &sim)?
            }
            Controller::Corrected => {
                reference(proto)?;
                let (cc, _) = correction_config(cfg, proto)?;
                initial_error_grid_with(p, "sta_corrected", &proto.endpoints.start(), &grid.spec(), |x0| {
                    single_shot_correct(p, proto, &cc, x0, None, 0, &sim).map(|r| RunOutcome::from(&r.record))
                })?
            }
        },
        RobustnessSpec::InputNoise { n_trials } => input_noise_trials(
            p,
            proto,
            *n_trials,
            &cfg.input_noise.spec(),
            cfg.input_noise.spacing,
            cfg.seed,
            &sim,
        )?,
        RobustnessSpec::MeasurementNoise { n_trials } => measurement_noise_trials(
            p,
            &reference(proto)?,
            &cfg.pid,
            &proto.endpoints.start(),
            *n_trials,
            &cfg.measurement_noise.unwrap_or_default().spec(),
            cfg.seed,
            &sim,
        )?,
    };
    Ok(report)
}

pub fn report_headline(rep: &RobustnessReport) -> Value {
    json!({
        "label": rep.label,
        "MRE": rep.mre,
        "max_RE": rep.max_re(),
        "cells": rep.cells.len(),
        "aborted": rep.aborted.len(),
        "E_f": rep.e_f,
    })
}

pub fn write_report(out: &Outputs, stem: &str, rep: &RobustnessReport) -> Result<(), CliError> {
    out.json(&format!("{stem}.json"), rep)?;
    out.csv(&format!("{stem}.csv"), None, |w| rep.write_csv(w))?;
    Ok(())
}

pub fn robustness(cfg: &RunConfig, dir: &Path, prov: Provenance) -> Result<Value, CliError> {
    let rep = robustness_report(cfg)?;
    let out = Outputs::create(dir, prov)?;
    write_report(&out, "report", &rep)?;
    Ok(with_hash(json!({ "command": "robustness", "report": report_headline(&rep) }), &out))
}

pub fn scan_map(cfg: &RunConfig) -> Result<DissipationMap, CliError> {
    let built = build_protocol(cfg)?;
    let Some(ReferenceTrajectory::Polynomial(profile)) = built.protocol.reference else {
        return Err(CliError::config("the damping scan needs a polynomial STA protocol"));
    };
    let s = &cfg.scan;
    Ok(dissipation_scan(&cfg.params, &profile, s.b1, s.b2, s.counts, s.mode, &cfg.sim())?)
}

pub fn map_headline(map: &DissipationMap) -> Value {
    let all: Vec<f64> = map.re.iter().flatten().flatten().copied().collect();
    let max = all.iter().copied().fold(0.0, f64::max);
    let at = |i: usize, j: usize| map.re[i][j];
    let (n1, n2) = (map.b1.len(), map.b2.len());
    json!({
        "mode": map.mode,
        "max_RE": max,
        "RE_weakest_damping": at(0, 0),
        "RE_strongest_damping": at(n1 - 1, n2 - 1),
        "aborted": n1 * n2 - all.len(),
    })
}

pub fn scan(cfg: &RunConfig, dir: &Path, prov: Provenance) -> Result<Value, CliError> {
    let map = scan_map(cfg)?;
    let out = Outputs::create(dir, prov)?;
    out.json("scan.json", &map)?;
    out.csv("scan.csv", None, |w| map.write_csv(w))?;
    Ok(with_hash(json!({ "command": "scan", "scan": map_headline(&map) }), &out))
}

pub fn with_hash(mut v: Value, out: &Outputs) -> Value {
    if let Value::Object(m) = &mut v {
        m.insert("config_hash".into(), json!(out.provenance().config_hash));
    }
    v
}
