//! Electrical power proxy and the average-power integral.

use serde::{Deserialize, Serialize};

use crate::inner_loop::RotorCommand;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerModel {
    /// Cube-law rotor power coefficient, P = k_P·ω³ per rotor [W·s³].
    pub k_power: f64,
    /// Constant avionics load [W].
    pub avionics: f64,
    /// Open-circuit battery voltage [V].
    pub v0: f64,
    /// Battery internal resistance [Ω].
    pub r_int: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            k_power: 2.0e-7,
            avionics: 6.0,
            v0: 16.8,
            r_int: 0.05,
        }
    }
}

impl PowerModel {
    /// Electrical power demanded by rotors spinning at `cmd` plus avionics [W].
    pub fn demand(&self, cmd: &RotorCommand) -> f64 {
        self.avionics + cmd.omega.iter().map(|w| self.k_power * w.abs().powi(3)).sum::<f64>()
    }
}

/// Terminal voltage and current delivering the demanded power through the
/// internal resistance. Solves v·i = P with v = v₀ − i·R_int on the
/// low-current branch; demands beyond the maximum power point are capped.
pub fn power_draw(cmd: &RotorCommand, battery: &PowerModel) -> (f64, f64) {
    let p = battery.demand(cmd);
    let (v0, r) = (battery.v0, battery.r_int);
    if r <= 0.0 {
        return (v0, p / v0);
    }
    let disc = v0 * v0 - 4.0 * r * p;
    let i = if disc > 0.0 {
        (v0 - disc.sqrt()) / (2.0 * r)
    } else {
        v0 / (2.0 * r)
    };
    (v0 - i * r, i)
}

/// Logged voltage and current with trapezoidal averages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PowerMeter {
    t: Vec<f64>,
    v: Vec<f64>,
    i: Vec<f64>,
    energy: f64,
}

impl PowerMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, v: f64, i: f64) {
        if let (Some(&t0), Some(&v0), Some(&i0)) = (self.t.last(), self.v.last(), self.i.last()) {
            self.energy += 0.5 * (t - t0) * (v0 * i0 + v * i);
        }
        self.t.push(t);
        self.v.push(v);
        self.i.push(i);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn voltage(&self) -> &[f64] {
        &self.v
    }

    pub fn current(&self) -> &[f64] {
        &self.i
    }

    /// Accumulated energy ∫v·i dt [J].
    pub fn energy(&self) -> f64 {
        self.energy
    }

    fn span(&self) -> f64 {
        match (self.t.first(), self.t.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// (1/T)∫v·i dt, or the single sample's power for a one-point trace.
    pub fn average_power(&self) -> f64 {
        let p: Vec<f64> = self.v.iter().zip(&self.i).map(|(v, i)| v * i).collect();
        self.average(&p)
    }

    /// (1/T)∫i dt.
    pub fn average_current(&self) -> f64 {
        self.average(&self.i)
    }

    fn average(&self, y: &[f64]) -> f64 {
        // Integrating deviations from the first sample keeps constant
        // traces exact in floating point.
        let Some(&y0) = y.first() else { return 0.0 };
        if y.len() == 1 {
            return y0;
        }
        let dev: Vec<f64> = y.iter().map(|v| v - y0).collect();
        y0 + trapezoid(&self.t, &dev) / self.span()
    }
}

/// Trapezoidal integral of samples `y` over times `t`.
pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idle_rotors_draw_avionics_only() {
        let m = PowerModel::default();
        let (v, i) = power_draw(&RotorCommand::default(), &m);
        assert!((v * i - m.avionics).abs() < 1e-12);
        assert!(v < m.v0);
    }

    #[test]
    fn draw_satisfies_battery_model() {
        let m = PowerModel::default();
        let cmd = RotorCommand {
            omega: [600.0, 610.0, 590.0, 605.0],
        };
        let (v, i) = power_draw(&cmd, &m);
        assert!((v - (m.v0 - i * m.r_int)).abs() < 1e-12);
        assert!((v * i - m.demand(&cmd)).abs() < 1e-9);
    }

    #[test]
    fn current_falls_faster_than_power_under_sag() {
        let m = PowerModel::default();
        let hi = RotorCommand { omega: [606.0; 4] };
        let lo = RotorCommand { omega: [560.0; 4] };
        let (vh, ih) = power_draw(&hi, &m);
        let (vl, il) = power_draw(&lo, &m);
        assert!(1.0 - il / ih > 1.0 - (vl * il) / (vh * ih));
    }

    #[test]
    fn constant_trace_averages_to_product() {
        let mut meter = PowerMeter::new();
        for k in 0..=1000 {
            meter.push(0.01 * k as f64, 15.3, 12.25);
        }
        assert_eq!(meter.average_power(), 15.3 * 12.25);
        assert!((meter.average_current() - 12.25).abs() < 1e-12);
    }

    #[test]
    fn linear_power_ramp_integrates_exactly() {
        let mut meter = PowerMeter::new();
        for k in 0..=10 {
            let t = k as f64 * 0.5;
            meter.push(t, 10.0, 1.0 + t);
        }
        // ∫₀⁵ 10(1+t) dt = 10·(5 + 12.5) = 175
        assert!((meter.energy() - 175.0).abs() < 1e-12);
        assert!((meter.average_power() - 35.0).abs() < 1e-12);
    }
}
