use nalgebra::Vector3;
use sha2::{Digest, Sha256};

use ceiling_mpc::harness::{
    hold_stats, recompute_hold_stats, run_scenario, sweep, ControllerKind, Phase, ScenarioConfig,
};
use ceiling_mpc::inner_loop::{AttitudeController, AttitudeGains};
use ceiling_mpc::integrator::{step, IntegratorConfig};
use ceiling_mpc::sim::{exact_measurement, Plant, PlantConfig, PlantState};
use ceiling_mpc::vehicle::{AugmentedState, ControlInput, VehicleParams};

fn scenario(controller: ControllerKind, distance: f64) -> ScenarioConfig {
    ScenarioConfig {
        controller,
        distance,
        ..ScenarioConfig::default()
    }
}

fn short(mut cfg: ScenarioConfig) -> ScenarioConfig {
    cfg.timeline.hover = 0.5;
    cfg.timeline.approach = 1.0;
    cfg.timeline.settle = 0.5;
    cfg.timeline.hold = 1.0;
    cfg
}

fn trace_digest(cfg: &ScenarioConfig, seed: u64) -> [u8; 32] {
    let dir = tempfile::tempdir().unwrap();
    run_scenario(cfg, seed).unwrap().write(dir.path()).unwrap();
    Sha256::digest(std::fs::read(dir.path().join("trace.csv")).unwrap()).into()
}

#[test]
fn roll_step_settles_quickly_with_small_overshoot() {
    let p = VehicleParams::default();
    let plant = Plant::new(PlantConfig::default(), p, None);
    let mut ctrl = AttitudeController::new(AttitudeGains::default());
    let mut s = PlantState::hover_at(Vector3::zeros(), &p);
    let mut rate_accel = Vector3::zeros();
    let (target, dt) = (0.1, 0.001);
    let (mut peak, mut settle) = (0.0_f64, 0.0);
    for k in 0..1000 {
        let torque = ctrl.update(&Vector3::new(target, 0.0, 0.0), &s.attitude, &s.rates, &rate_accel, dt);
        let next = plant.step(&s, &plant.mixer().allocate(p.weight(), &torque).command, dt);
        rate_accel = (next.rates - s.rates) / dt;
        s = next;
        peak = peak.max(s.attitude.x);
        if (s.attitude.x - target).abs() > 0.05 * target {
            settle = (k + 1) as f64 * dt;
        }
    }
    assert!(settle < 0.5, "settling time {settle}");
    assert!(peak / target - 1.0 < 0.2, "overshoot {}", peak / target - 1.0);
    assert!(s.attitude.yz().norm() < 1e-3);
}

#[test]
fn prediction_model_matches_plant_without_ceiling() {
    // Drive the plant through a tilting manoeuvre and replay the realised
    // thrust and attitude through the prediction model.
    let p = VehicleParams::default();
    let plant = Plant::new(PlantConfig::default(), p, None);
    let mut ctrl = AttitudeController::new(AttitudeGains::default());
    let mut s = PlantState::hover_at(Vector3::new(0.0, 0.0, 1.0), &p);
    let integ = IntegratorConfig::default();
    let mut model = AugmentedState::new(s.position, s.velocity, Vector3::zeros());
    let mut rate_accel = Vector3::zeros();
    let mut worst = 0.0_f64;
    for tick in 0..200 {
        let t = tick as f64 * 0.01;
        let att_ref = Vector3::new(0.15 * (2.0 * t).sin(), 0.1 * (3.0 * t).cos() - 0.1, 0.0);
        let thrust = p.weight() * (1.0 + 0.1 * (1.5 * t).sin());
        let y = exact_measurement(&s, plant.mixer());
        let u = ControlInput::new(y.f_z, y.attitude.x, y.attitude.y, y.attitude.z);
        for _ in 0..10 {
            let torque = ctrl.update(&att_ref, &s.attitude, &s.rates, &rate_accel, 0.001);
            let next = plant.step(&s, &plant.mixer().allocate(thrust, &torque).command, 0.001);
            rate_accel = (next.rates - s.rates) / 0.001;
            s = next;
        }
        model = step(&model, &u, &integ, &p).unwrap().next_state;
        worst = worst.max((model.position - s.position).norm());
    }
    assert!(worst < 0.05, "divergence {worst} m over 2 s");
}

#[test]
fn estimator_reports_no_force_in_free_flight() {
    let mut cfg = scenario(ControllerKind::ForceNmpc, 0.01);
    cfg.free_flight = true;
    let out = run_scenario(&cfg, 0).unwrap();
    let hold: Vec<_> = out.trace.iter().filter(|r| r.phase == Phase::Hold).collect();
    let mean = hold.iter().map(|r| r.f_hat).sum::<Vector3<f64>>() / hold.len() as f64;
    assert!(mean.norm() < 0.05, "mean estimate {mean:?}");
}

#[test]
fn identical_seeds_give_identical_traces() {
    let cfg = short(scenario(ControllerKind::ForceNmpc, 0.06));
    assert_eq!(trace_digest(&cfg, 4), trace_digest(&cfg, 4));
    assert_ne!(trace_digest(&cfg, 4), trace_digest(&cfg, 5));
}

#[test]
fn summary_agrees_with_exported_trace() {
    let cfg = short(scenario(ControllerKind::Nmpc, 0.11));
    let out = run_scenario(&cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    let from_file = recompute_hold_stats(&dir.path().join("trace.csv")).unwrap();
    let from_rows = hold_stats(&out.trace);
    for (a, b) in [
        (from_file.error_mean, out.summary.hold.error_mean),
        (from_file.error_std, out.summary.hold.error_std),
        (from_file.p_ave, out.summary.hold.p_ave),
        (from_file.i_ave, out.summary.hold.i_ave),
        (from_rows.contact_fraction, out.summary.hold.contact_fraction),
    ] {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["controller"], "nmpc");
}

#[test]
fn single_cell_sweep_reproduces_direct_run() {
    let mut cfg = short(scenario(ControllerKind::Pid, 0.16));
    cfg.seeds = vec![2];
    cfg.sweep.controllers = vec![ControllerKind::Pid];
    cfg.sweep.distances = vec![0.16];
    let result = sweep(&cfg, None).unwrap();
    let direct = run_scenario(&cfg, 2).unwrap();
    let cell = result.cell(ControllerKind::Pid, 0.16).unwrap();
    assert_eq!(cell.runs, 1);
    assert_eq!(cell.error_mean_m, direct.summary.hold.error_mean);
    assert_eq!(cell.p_ave_w, direct.summary.hold.p_ave);
    let free = &result.free_hover[0];
    let expected = 1.0 - direct.summary.hold.p_ave / free.p_ave;
    assert!((cell.relative_power.unwrap() - expected).abs() < 1e-12);
}

#[test]
fn every_controller_regulates_in_free_space() {
    for c in ControllerKind::ALL {
        let mut cfg = scenario(c, 0.16);
        cfg.free_flight = true;
        let out = run_scenario(&cfg, 0).unwrap();
        let s = &out.summary;
        assert!(!s.stuck, "{c}");
        assert!(s.hold.error_mean < 0.02, "{c}: hold error {}", s.hold.error_mean);
        assert_eq!(s.degraded_ticks, 0, "{c}");
    }
}
