use std::f64::consts::PI;

use rtheta::control::{pid_track, PidConfig};
use rtheta::dynamics::SystemParams;
use rtheta::planners::{sta_inputs, Endpoints, Protocol};
use rtheta::robustness::{
    dissipation_scan, initial_error_grid, input_noise_trials, pid_input_noise_trials, DampingMode, GridSpec, RobustnessReport,
};
use rtheta::simulate::{NoiseKind, NoiseSpec, SimConfig};
use rtheta::trajectory::{PolynomialProfile, ShapeOrder};

fn seventh() -> PolynomialProfile {
    let e = Endpoints::nominal();
    PolynomialProfile::new(ShapeOrder::Seventh, e.q0, e.qf, 2.535).unwrap()
}

fn sta() -> Protocol {
    sta_inputs(&SystemParams::nominal(), &seventh(), 4001).unwrap()
}

fn csv_re_column(rep: &RobustnessReport) -> Vec<f64> {
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).unwrap();
    String::from_utf8(buf)
        .unwrap()
        .lines()
        .skip(1)
        .filter_map(|l| l.split(',').nth(2).and_then(|v| v.parse().ok()))
        .collect()
}

#[test]
fn unperturbed_cell_reproduces_nominal_energy() {
    let rep = initial_error_grid(&SystemParams::nominal(), &sta(), &GridSpec::symmetric(PI / 1800.0, 0.01, 5), &SimConfig::experiment())
        .unwrap();
    let centre = rep.cells.iter().find(|c| c.d_theta == 0.0 && c.d_r == 0.0).unwrap();
    assert!(centre.re.unwrap() < 1e-8);
    assert!(rep.aborted.is_empty());
}

#[test]
fn mre_matches_persisted_column() {
    let rep = initial_error_grid(&SystemParams::nominal(), &sta(), &GridSpec::standard(), &SimConfig::experiment()).unwrap();
    let col = csv_re_column(&rep);
    assert_eq!(col.len(), 441);
    let mean = col.iter().sum::<f64>() / col.len() as f64;
    assert!(((mean - rep.mre) / rep.mre).abs() < 1e-10);
}

#[test]
fn grid_refinement_changes_mre_modestly() {
    let p = SystemParams::nominal();
    let sim = SimConfig::experiment();
    let coarse = initial_error_grid(&p, &sta(), &GridSpec::standard(), &sim).unwrap();
    let fine = initial_error_grid(&p, &sta(), &GridSpec::symmetric(PI / 1800.0, 0.01, 41), &sim).unwrap();
    assert!(((fine.mre - coarse.mre) / coarse.mre).abs() < 0.2);
}

#[test]
fn zero_input_noise_leaves_runs_unchanged() {
    let noise = NoiseSpec::gaussian(NoiseKind::Input, [0.0, 0.0]);
    let rep = input_noise_trials(&SystemParams::nominal(), &sta(), 100, &noise, None, 3, &SimConfig::experiment()).unwrap();
    assert!(rep.max_re() < 1e-8);
}

#[test]
fn report_json_round_trips_and_replays() {
    let noise = NoiseSpec::gaussian(NoiseKind::Input, [30.0, 10.0]);
    let run = || input_noise_trials(&SystemParams::nominal(), &sta(), 100, &noise, Some(1e-3), 11, &SimConfig::experiment()).unwrap();
    let rep = run();
    let text = serde_json::to_string(&rep).unwrap();
    let back: RobustnessReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, rep);
    assert_eq!(serde_json::to_string(&run()).unwrap(), text);
    let seeds: std::collections::HashSet<_> = rep.cells.iter().map(|c| c.seed.unwrap()).collect();
    assert_eq!(seeds.len(), 100);
}

#[test]
fn mismatched_scan_is_exact_at_the_design_point() {
    let p = SystemParams::nominal();
    let map = dissipation_scan(&p, &seventh(), [0.0, 200.0], [0.0, 200.0], [5, 5], DampingMode::Mismatched, &SimConfig::oracle())
        .unwrap();
    // B1 = 100 is the middle row, B2 = 50 the second column.
    assert_eq!((map.b1[2], map.b2[1]), (100.0, 50.0));
    assert!(map.re[2][1].unwrap() < 1e-8);
    assert!(map.re[0][0].unwrap() > 1e-3);
    assert!(dissipation_scan(&p, &seventh(), [0.0, 200.0], [0.0, 200.0], [4, 5], DampingMode::Matched, &SimConfig::oracle()).is_err());
}

#[test]
fn pid_input_noise_trials_reduce_to_plain_tracking() {
    let p = SystemParams::nominal();
    let sim = SimConfig::experiment();
    let cfg = PidConfig::default();
    let start = Endpoints::nominal().start();
    let quiet = NoiseSpec::gaussian(NoiseKind::Input, [0.0, 0.0]);
    let rep = pid_input_noise_trials(&p, &seventh(), &cfg, &start, 100, &quiet, 1e-3, 5, &sim).unwrap();
    assert!(rep.max_re() < 1e-8);
    let plain = pid_track(&p, &seventh(), &cfg, &start, None, 0, &sim).unwrap();
    let e_f = plain.terminal_energy;
    assert!((rep.e_f - e_f).abs() < 1e-12 * e_f.abs());

    let loud = NoiseSpec::gaussian(NoiseKind::Input, [30.0, 10.0]);
    let rep = pid_input_noise_trials(&p, &seventh(), &cfg, &start, 100, &loud, 1e-3, 5, &sim).unwrap();
    assert!(rep.mre > 0.0 && rep.aborted.is_empty());
    assert!(pid_input_noise_trials(&p, &seventh(), &cfg, &start, 100, &quiet, 0.0, 5, &sim).is_err());
}
