//! Parametric ceiling-effect field.
//!
//! The thrust amplification follows a mirrored ground-effect law,
//! `1/(1 − κ·(R/(4d))²)`, blended to exactly one at the cutoff distance so
//! that the ratio and its slope are continuous there. The law is a simulator
//! choice calibrated to an observable (the hover power reduction), not a
//! claim about the aerodynamics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CeilingModel {
    /// Height of the ceiling surface in the world frame [m].
    pub ceiling_height: f64,
    /// Dimensionless field gain κ.
    pub kappa: f64,
    /// Distance beyond which the field vanishes [m].
    pub d_on: f64,
    /// Singularity guard: distances below this are treated as `d_min` [m].
    pub d_min: f64,
    /// Upper clamp on the thrust ratio.
    pub max_ratio: f64,
    /// Rotor radius R [m].
    pub rotor_radius: f64,
    /// Vertical offset from the body reference point up to the rotor plane's
    /// distance origin: rotor-to-ceiling distance is `height − z + offset` [m].
    pub prop_offset: f64,
}

impl Default for CeilingModel {
    fn default() -> Self {
        Self {
            ceiling_height: 2.5,
            kappa: 0.5,
            d_on: 0.5,
            d_min: 0.01,
            max_ratio: 1.6,
            rotor_radius: 0.12,
            prop_offset: 0.06,
        }
    }
}

impl CeilingModel {
    /// Distance from the rotor plane to the ceiling for body height `z`.
    pub fn rotor_distance(&self, z: f64) -> f64 {
        self.ceiling_height - z + self.prop_offset
    }

    fn unblended_excess(&self, d: f64) -> Option<(f64, f64)> {
        // Returns g(d) = raw − 1 and g'(d), or None past the singularity.
        let a = self.kappa * (self.rotor_radius / (4.0 * d)).powi(2);
        if a >= 1.0 {
            return None;
        }
        let raw = 1.0 / (1.0 - a);
        Some((raw - 1.0, -2.0 * a * raw * raw / d))
    }

    /// Thrust amplification at rotor-to-ceiling distance `d`.
    pub fn thrust_ratio(&self, d: f64) -> f64 {
        if d >= self.d_on {
            return 1.0;
        }
        let d = d.max(self.d_min);
        let (g_on, dg_on) = self
            .unblended_excess(self.d_on)
            .expect("field must be regular at the cutoff distance");
        match self.unblended_excess(d) {
            Some((g, _)) => (1.0 + g - g_on - dg_on * (d - self.d_on)).min(self.max_ratio),
            None => self.max_ratio,
        }
    }

    /// Returns a copy whose κ gives `ratio` at rotor distance `d`, found by
    /// bisection (the ratio is increasing in κ at fixed distance).
    pub fn calibrated(&self, d: f64, ratio: f64) -> Option<Self> {
        if !(ratio > 1.0 && ratio < self.max_ratio && d > self.d_min && d < self.d_on) {
            return None;
        }
        // Largest κ that keeps the cutoff point regular.
        let mut hi = (4.0 * self.d_on / self.rotor_radius).powi(2) * (1.0 - 1e-9);
        let mut lo = 0.0;
        let at = |kappa: f64| Self { kappa, ..*self }.thrust_ratio(d);
        if at(hi) < ratio {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if at(mid) < ratio {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(Self {
            kappa: 0.5 * (lo + hi),
            ..*self
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn far_field_is_exactly_one() {
        assert_eq!(CeilingModel::default().thrust_ratio(1.0), 1.0);
    }

    #[test]
    fn guard_distance_gives_maximum() {
        let c = CeilingModel::default();
        assert_eq!(c.thrust_ratio(c.d_min), c.max_ratio);
        assert_eq!(c.thrust_ratio(1e-6), c.max_ratio);
    }

    #[test]
    fn ratio_is_monotone_on_samples() {
        let c = CeilingModel::default();
        let r: Vec<f64> = (0..100).map(|i| c.thrust_ratio(0.005 + 0.006 * i as f64)).collect();
        assert!(r.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.iter().all(|&x| x >= 1.0));
    }

    #[test]
    fn blend_is_continuous_in_value_and_slope() {
        let c = CeilingModel::default();
        let h = 1e-6;
        let below = c.thrust_ratio(c.d_on - h);
        assert!((below - 1.0).abs() < 1e-9);
        let slope = (c.thrust_ratio(c.d_on - h) - c.thrust_ratio(c.d_on - 2.0 * h)) / h;
        assert!(slope.abs() < 1e-5, "slope {slope}");
    }

    #[test]
    fn unblended_law_recovered_from_independent_formula() {
        // Far below the cutoff with d_on → large, the blend correction is tiny.
        let c = CeilingModel {
            d_on: 50.0,
            ..CeilingModel::default()
        };
        let d = 0.1;
        let expect = 1.0 / (1.0 - 0.5 * (0.12f64 / 0.4).powi(2));
        assert!((c.thrust_ratio(d) - expect).abs() < 1e-4);
    }

    #[test]
    fn calibration_hits_target() {
        let c = CeilingModel::default().calibrated(0.07, 1.1).unwrap();
        assert!((c.thrust_ratio(0.07) - 1.1).abs() < 1e-12);
        assert!(CeilingModel::default().calibrated(0.07, 0.9).is_none());
    }

    proptest! {
        #[test]
        fn ratio_bounds_hold(d in 1e-4..2.0f64, kappa in 0.0..2.0f64) {
            let c = CeilingModel { kappa, ..CeilingModel::default() };
            let r = c.thrust_ratio(d);
            prop_assert!(r >= 1.0 && r <= c.max_ratio);
            prop_assert!(c.thrust_ratio(d * 1.01) <= r);
        }
    }
}
