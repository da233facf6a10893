//! Acceptance suite: one PASS/FAIL line per criterion.

use std::f64::consts::{FRAC_PI_4, PI};
use std::process::ExitCode;
use std::time::Instant;

use rtheta::control::{calibrate_correction, pid_track, single_shot_correct, CalibrationSpace, PidConfig};
use rtheta::dynamics::{
    forward_accel, inverse_dynamics, kinetic_energy, mechanical_energy, power_balance, state_derivative, Config2,
    GenInput, KinPoint, State, SystemParams,
};
use rtheta::planners::{
    constraint_limited_protocol, min_feasible_tf, sta_inputs, ActuatorBounds, Endpoints, KinematicBounds, Protocol,
};
use rtheta::robustness::{
    dissipation_scan, initial_error_grid, initial_error_grid_with, input_noise_trials, measurement_noise_trials,
    DampingMode, GridSpec, RunOutcome,
};
use rtheta::simulate::{integrate, integrate_terminal, FnInput, NoiseKind, NoiseSpec, SimConfig};
use rtheta::timeopt::{solve_nominal, OcpConfig, OcpSolution};
use rtheta::trajectory::{PolynomialProfile, Reference, ShapeOrder};

const CORNER: (f64, f64) = (PI / 1800.0, -0.01);

struct Shared {
    p: SystemParams,
    ends: Endpoints,
    sim: SimConfig,
    seventh: PolynomialProfile,
    sta: Protocol,
    min_tf_seventh: Option<f64>,
    time_optimal: Option<OcpSolution>,
    sta_grid_mre: Option<f64>,
    to_grid_mre: Option<f64>,
}

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn endpoint_inputs(s: &mut Shared) -> Verdict {
    let prof = PolynomialProfile::new(ShapeOrder::Quintic, s.ends.q0, s.ends.qf, 4.0).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for proto in [
        sta_inputs(&s.p, &prof, 4001).map_err(|e| e.to_string())?,
        s.sta.clone(),
    ] {
        let sched = &proto.schedule;
        let first = sched.node(0);
        let last = sched.node(sched.len() - 1);
        worst = worst
            .max(rel(first.tau, 196.0))
            .max(first.f.abs() / 196.0)
            .max(rel(last.tau, 784.0 / 2f64.sqrt()))
            .max(rel(last.f, 196.0 / 2f64.sqrt()));
    }
    check(worst < 1e-10, format!("worst relative endpoint error {worst:.2e} (< 1e-10)"))
}

fn quintic_self_consistency(s: &mut Shared) -> Verdict {
    let prof = PolynomialProfile::new(ShapeOrder::Quintic, s.ends.q0, s.ends.qf, 4.0).map_err(|e| e.to_string())?;
    let proto = sta_inputs(&s.p, &prof, 4001).map_err(|e| e.to_string())?;
    let rec = integrate(&s.p, &s.ends.start(), &proto.schedule, &s.sim).map_err(|e| e.to_string())?;
    let x = rec.terminal;
    let pos = (x.theta - FRAC_PI_4).abs().max((x.r - 4.0).abs());
    let ke = kinetic_energy(&s.p, &x);
    check(
        pos < 1e-4 && ke < 1e-6,
        format!("position error {pos:.2e} (< 1e-4), residual kinetic energy {ke:.2e} J (< 1e-6)"),
    )
}

fn min_durations(s: &mut Shared) -> Verdict {
    let b = ActuatorBounds::nominal();
    let q = min_feasible_tf(&s.p, ShapeOrder::Quintic, &s.ends, &b, 1e-4).map_err(|e| e.to_string())?;
    let v = min_feasible_tf(&s.p, ShapeOrder::Seventh, &s.ends, &b, 1e-4).map_err(|e| e.to_string())?;
    s.min_tf_seventh = Some(v);
    check(
        (q - 3.615).abs() <= 0.05 && (v - 2.535).abs() <= 0.05,
        format!("quintic {q:.4} s (3.615 ± 0.05), seventh {v:.4} s (2.535 ± 0.05)"),
    )
}

fn constraint_limited(s: &mut Shared) -> Verdict {
    let kb = KinematicBounds::nominal();
    let proto = constraint_limited_protocol(&s.p, &s.ends, &kb).map_err(|e| e.to_string())?;
    let reference = proto.reference.as_ref().ok_or("no reference")?;
    let n = 20_001;
    let mut admitted = true;
    for k in 0..n {
        let t = proto.t_f * k as f64 / (n - 1) as f64;
        let kin = reference.kin_at(t).map_err(|e| e.to_string())?;
        admitted &= kb.admits(&kin, 1e-9);
    }
    check(
        (3.20..=3.45).contains(&proto.t_f) && admitted,
        format!("t_f = {:.4} s in [3.20, 3.45], kinematic bounds respected at {n} points: {admitted}", proto.t_f),
    )
}

fn time_optimal(s: &mut Shared) -> Verdict {
    let coarse = solve_nominal(&s.p, &OcpConfig::default()).map_err(|e| e.to_string())?;
    let fine = solve_nominal(
        &s.p,
        &OcpConfig {
            n_intervals: 200,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let sta_min = s.min_tf_seventh.unwrap_or(2.535);
    let change = rel(fine.t_f, coarse.t_f);
    let sat_f = coarse.saturation_fraction.f;
    let verdict = check(
        (1.60..=2.00).contains(&coarse.t_f) && coarse.t_f < sta_min && sat_f >= 0.7 && change < 0.02,
        format!(
            "t_f = {:.4} s in [1.60, 2.00] and below {sta_min:.4} s; force saturation {sat_f:.2} (>= 0.7); N=200 gives {:.4} s, change {:.2}% (< 2%)",
            coarse.t_f,
            fine.t_f,
            100.0 * change
        ),
    );
    s.time_optimal = Some(coarse);
    verdict
}

fn to_protocol(s: &Shared) -> Result<Protocol, String> {
    s.time_optimal
        .as_ref()
        .ok_or_else(|| "time-optimal solution unavailable".to_owned())?
        .to_protocol()
        .map_err(|e| e.to_string())
}

fn initial_error_grids(s: &mut Shared) -> Verdict {
    let grid = GridSpec::standard();
    let sta = initial_error_grid(&s.p, &s.sta, &grid, &s.sim).map_err(|e| e.to_string())?;
    let corner = sta.re_near(CORNER.0, CORNER.1).ok_or("corner cell aborted")?;
    s.sta_grid_mre = Some(sta.mre);
    let to = initial_error_grid(&s.p, &to_protocol(s)?, &grid, &s.sim).map_err(|e| e.to_string())?;
    s.to_grid_mre = Some(to.mre);
    check(
        (0.02..=0.05).contains(&sta.mre) && to.mre < sta.mre && (corner - 0.084).abs() <= 0.01 && sta.aborted.is_empty(),
        format!(
            "STA MRE {:.3}% in [2, 5]%, time-optimal MRE {:.3}% < STA, corner RE {:.3}% (8.4 ± 1)",
            100.0 * sta.mre,
            100.0 * to.mre,
            100.0 * corner
        ),
    )
}

fn correction(s: &mut Shared) -> Verdict {
    let coarse = GridSpec::symmetric(PI / 1800.0, 0.01, 5);
    let cal = calibrate_correction(&s.p, &s.sta, &coarse.offsets(), &CalibrationSpace::default(), &s.sim)
        .map_err(|e| e.to_string())?;
    let cfg = cal.config.ok_or("calibration found no improvement")?;
    let rep = initial_error_grid_with(&s.p, "sta_corrected", &s.ends.start(), &GridSpec::standard(), |x0| {
        single_shot_correct(&s.p, &s.sta, &cfg, x0, None, 0, &s.sim).map(|r| RunOutcome::from(&r.record))
    })
    .map_err(|e| e.to_string())?;
    let corner = rep.re_near(CORNER.0, CORNER.1).ok_or("corner cell aborted")?;
    let bar = s.sta_grid_mre.unwrap_or(f64::NAN).min(s.to_grid_mre.unwrap_or(f64::NAN));
    check(
        corner < 0.015 && rep.mre < bar,
        format!(
            "corner RE {:.3}% (< 1.5%), grid MRE {:.3}% < {:.3}% (t_i = {:.4} s, c = [{}, {}, {:.4}, {}, {:.4}])",
            100.0 * corner,
            100.0 * rep.mre,
            100.0 * bar,
            cfg.t_i,
            cfg.c1,
            cfg.c2,
            cfg.c3,
            cfg.c4,
            cfg.c5
        ),
    )
}

fn input_noise(s: &mut Shared) -> Verdict {
    let noise = NoiseSpec::gaussian(NoiseKind::Input, [30.0, 10.0]);
    let sta = input_noise_trials(&s.p, &s.sta, 500, &noise, Some(1e-3), 2024, &s.sim).map_err(|e| e.to_string())?;
    let to = input_noise_trials(&s.p, &to_protocol(s)?, 500, &noise, Some(1e-3), 2024, &s.sim)
        .map_err(|e| e.to_string())?;
    check(
        to.mre < sta.mre && (0.004..=0.035).contains(&sta.mre),
        format!(
            "500 trials: time-optimal MRE {:.3}% < STA MRE {:.3}% in [0.4, 3.5]%",
            100.0 * to.mre,
            100.0 * sta.mre
        ),
    )
}

fn pid(s: &mut Shared) -> Verdict {
    let cfg = PidConfig::default();
    let rec = pid_track(&s.p, &s.seventh, &cfg, &s.ends.start(), None, 0, &SimConfig::oracle())
        .map_err(|e| e.to_string())?;
    let e_theta = (rec.terminal.theta - FRAC_PI_4).abs();
    let e_r = (rec.terminal.r - 4.0).abs();
    let noise = NoiseSpec::gaussian(NoiseKind::Measurement, [PI / 3600.0, 0.005]);
    let rep = measurement_noise_trials(&s.p, &s.seventh, &cfg, &s.ends.start(), 1000, &noise, 2024, &s.sim)
        .map_err(|e| e.to_string())?;
    check(
        e_theta < 5e-3 && e_r < 5e-3 && (0.005..=0.04).contains(&rep.mre),
        format!(
            "terminal error {e_theta:.2e} rad, {e_r:.2e} m (< 5e-3); measurement-noise MRE {:.3}% in [0.5, 4]%",
            100.0 * rep.mre
        ),
    )
}

fn dissipation(s: &mut Shared) -> Verdict {
    let run = |dt| {
        dissipation_scan(&s.p, &s.seventh, [0.0, 200.0], [0.0, 200.0], [5, 5], DampingMode::Matched, &SimConfig::with_dt(dt))
    };
    let fine = run(1e-4).map_err(|e| e.to_string())?;
    let coarse = run(0.02).map_err(|e| e.to_string())?;
    let worst = fine.re.iter().flatten().map(|v| v.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    let lo = coarse.re[0][0].unwrap_or(f64::NAN);
    let hi = coarse.re[4][4].unwrap_or(f64::NAN);
    check(
        worst < 1e-6 && lo >= hi,
        format!("matched max RE {worst:.2e} at dt = 1e-4 (< 1e-6); dt = 0.02: RE(0,0) = {lo:.2e} >= RE(200,200) = {hi:.2e}"),
    )
}

fn properties(s: &mut Shared) -> Verdict {
    let p = s.p;
    let mut notes = Vec::new();
    let mut ok = true;

    // Inverse then forward dynamics.
    let mut round: f64 = 0.0;
    for k in 0..200 {
        let a = k as f64;
        let kin = KinPoint {
            q: Config2::new((0.37 * a).sin(), 0.5 + (0.11 * a).cos().abs() * 3.0),
            dq: Config2::new((0.53 * a).cos(), (0.29 * a).sin() * 2.0),
            ddq: Config2::new((0.71 * a).sin() * 3.0, (0.13 * a).cos()),
        };
        let u = inverse_dynamics(&p, &kin).map_err(|e| e.to_string())?;
        let acc = forward_accel(&p, &kin.state(), &u).map_err(|e| e.to_string())?;
        round = round
            .max((acc.theta - kin.ddq.theta).abs() / (1.0 + kin.ddq.theta.abs()))
            .max((acc.r - kin.ddq.r).abs() / (1.0 + kin.ddq.r.abs()));
    }
    ok &= round < 1e-12;
    notes.push(format!("round-trip {round:.1e}"));

    // Order of the integrator on a smooth forced transfer.
    let prof = s.seventh;
    let input = FnInput(|t: f64| inverse_dynamics(&p, &prof.eval(t.clamp(0.0, prof.t_f)).unwrap()).unwrap());
    let x0 = State::at_rest(0.0, 1.05);
    let end = |dt: f64| integrate_terminal(&p, &x0, prof.t_f, &input, dt).unwrap().to_array();
    let reference = end(0.02 / 16.0);
    let err = |dt: f64| {
        let x = end(dt);
        (0..4).map(|i| (x[i] - reference[i]).abs()).fold(0.0, f64::max)
    };
    let ratio = err(0.02) / err(0.01);
    ok &= (ratio - 16.0).abs() <= 3.0;
    notes.push(format!("RK4 ratio {ratio:.2}"));

    // dE/dt from the state derivative against the power balance.
    let mut rate: f64 = 0.0;
    for k in 0..200 {
        let a = k as f64;
        let x = State::new((0.3 * a).sin(), 1.0 + (0.7 * a).cos().abs() * 3.0, (0.9 * a).cos(), (0.4 * a).sin());
        let u = GenInput::new(300.0 * (0.2 * a).sin(), 100.0 * (0.6 * a).cos());
        let d = state_derivative(&p, &x, &u);
        let chain = p.m * x.r * x.dtheta * x.dtheta * x.dr
            + p.m * x.r * x.r * x.dtheta * d[2]
            + p.m * x.dr * d[3]
            + p.m * p.g * (x.dr * x.theta.sin() + x.r * x.theta.cos() * x.dtheta);
        let pb = power_balance(&p, &x, &u);
        rate = rate.max((chain - pb).abs() / pb.abs().max(1.0));
    }
    ok &= rate < 1e-6;
    notes.push(format!("energy rate {rate:.1e}"));

    // Boundary conditions of both shapes.
    let mut bc: f64 = 0.0;
    for order in [ShapeOrder::Quintic, ShapeOrder::Seventh] {
        let prof = PolynomialProfile::new(order, s.ends.q0, s.ends.qf, 2.7).map_err(|e| e.to_string())?;
        let a = prof.eval(0.0).map_err(|e| e.to_string())?;
        let b = prof.eval(2.7).map_err(|e| e.to_string())?;
        for v in [
            a.q.theta,
            a.q.r - 1.0,
            a.dq.theta,
            a.dq.r,
            a.ddq.theta,
            a.ddq.r,
            b.q.theta - FRAC_PI_4,
            b.q.r - 4.0,
            b.dq.theta,
            b.dq.r,
            b.ddq.theta,
            b.ddq.r,
        ] {
            bc = bc.max(v.abs());
        }
    }
    ok &= bc < 1e-14;
    notes.push(format!("boundary conditions {bc:.1e}"));

    // Unforced, undamped motion conserves energy.
    let cons = SystemParams::new(20.0, 9.8, 0.0, 0.0).map_err(|e| e.to_string())?;
    let x0 = State::new(0.5, 2.0, 0.3, 0.2);
    let e0 = mechanical_energy(&cons, &x0);
    let x1 = integrate_terminal(&cons, &x0, 2.0, &GenInput::ZERO, 1e-4).map_err(|e| e.to_string())?;
    let drift = rel(mechanical_energy(&cons, &x1), e0);
    ok &= drift < 1e-8;
    notes.push(format!("conservative drift {drift:.1e}"));

    // Reports regenerate bit-identically, on any number of workers.
    let noise = NoiseSpec::gaussian(NoiseKind::Input, [30.0, 10.0]);
    let make = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| input_noise_trials(&p, &s.sta, 100, &noise, Some(1e-3), 77, &s.sim))
            .map(|r| serde_json::to_string(&r).unwrap())
    };
    let first = make(1).map_err(|e| e.to_string())?;
    let replay = make(3).map_err(|e| e.to_string())?;
    ok &= first == replay;
    notes.push(format!("replay identical: {}", first == replay));

    check(ok, notes.join(", "))
}

fn main() -> ExitCode {
    let p = SystemParams::nominal();
    let ends = Endpoints::nominal();
    let seventh = PolynomialProfile::new(ShapeOrder::Seventh, ends.q0, ends.qf, 2.535).expect("valid profile");
    let sta = sta_inputs(&p, &seventh, 4001).expect("seventh-order STA");
    let mut shared = Shared {
        p,
        ends,
        sim: SimConfig::experiment(),
        seventh,
        sta,
        min_tf_seventh: None,
        time_optimal: None,
        sta_grid_mre: None,
        to_grid_mre: None,
    };
    let criteria: [(&str, fn(&mut Shared) -> Verdict); 11] = [
        ("endpoint-input exactness", endpoint_inputs),
        ("STA self-consistency", quintic_self_consistency),
        ("minimum feasible STA durations", min_durations),
        ("constraint-limited duration", constraint_limited),
        ("time-optimal solver", time_optimal),
        ("initial-error grid", initial_error_grids),
        ("single-shot correction", correction),
        ("input-noise trials", input_noise),
        ("PID tracking", pid),
        ("dissipation scan", dissipation),
        ("property suites", properties),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let verdict = run(&mut shared);
        let secs = t0.elapsed().as_secs_f64();
        match verdict {
            Ok(d) => println!("criterion {:>2} PASS  {name}: {d} [{secs:.1} s]", k + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {d} [{secs:.1} s]", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
