//! Noisy measurement of the plant.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::plant::PlantState;
use crate::inner_loop::Mixer;
use crate::vehicle::Measurement;

/// Standard deviations of the i.i.d. Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Position [m].
    pub position: f64,
    /// Velocity [m/s].
    pub velocity: f64,
    /// Collective thrust [N].
    pub f_z: f64,
    /// Attitude angles [rad].
    pub attitude: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            position: 0.002,
            velocity: 0.002,
            f_z: 0.1,
            attitude: 0.002,
        }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self {
            position: 0.0,
            velocity: 0.0,
            f_z: 0.0,
            attitude: 0.0,
        }
    }
}

/// Noise-free measurement: position, velocity and attitude of the plant,
/// and the collective thrust the rotors would produce in free air.
pub fn exact_measurement(s: &PlantState, mixer: &Mixer) -> Measurement {
    Measurement {
        position: s.position,
        velocity: s.velocity,
        f_z: mixer.wrench(&s.rotor_command())[0],
        attitude: s.attitude,
    }
}

/// Seeded sensor. Every sample draws the ten channels in a fixed order, so a
/// seed fully determines the noise sequence.
#[derive(Debug, Clone)]
pub struct Sensor {
    noise: NoiseConfig,
    rng: ChaCha8Rng,
}

impl Sensor {
    pub fn new(noise: NoiseConfig, seed: u64) -> Self {
        Self {
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn draw(&mut self, std: f64) -> f64 {
        // Always consume the generator so the sequence is independent of
        // which channels are noise-free.
        let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut self.rng);
        std * z
    }

    fn draw3(&mut self, std: f64) -> Vector3<f64> {
        Vector3::new(self.draw(std), self.draw(std), self.draw(std))
    }

    pub fn sample(&mut self, s: &PlantState, mixer: &Mixer) -> Measurement {
        let exact = exact_measurement(s, mixer);
        let n = self.noise;
        Measurement {
            position: exact.position + self.draw3(n.position),
            velocity: exact.velocity + self.draw3(n.velocity),
            f_z: exact.f_z + self.draw(n.f_z),
            attitude: exact.attitude + self.draw3(n.attitude),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{measure, AugmentedState, VehicleParams};

    fn state() -> PlantState {
        let mut s = PlantState::hover_at(Vector3::new(0.1, -0.2, 1.5), &VehicleParams::default());
        s.velocity = Vector3::new(0.3, 0.0, -0.1);
        s.attitude = Vector3::new(0.05, -0.02, 0.4);
        s
    }

    fn mixer() -> Mixer {
        Mixer::new(&VehicleParams::default(), 1000.0)
    }

    #[test]
    fn zero_noise_matches_model_measurement() {
        let s = state();
        let y = Sensor::new(NoiseConfig::zero(), 3).sample(&s, &mixer());
        let u = y.input();
        let aug = AugmentedState::new(s.position, s.velocity, Vector3::zeros());
        assert_eq!(measure(&aug, &u).to_vector(), y.to_vector());
        let hover = VehicleParams::default().weight();
        assert!((y.f_z - hover).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_samples() {
        let s = state();
        let mut a = Sensor::new(NoiseConfig::default(), 11);
        let mut b = Sensor::new(NoiseConfig::default(), 11);
        for _ in 0..100 {
            assert_eq!(a.sample(&s, &mixer()).to_vector(), b.sample(&s, &mixer()).to_vector());
        }
        let mut c = Sensor::new(NoiseConfig::default(), 12);
        assert_ne!(a.sample(&s, &mixer()).to_vector(), c.sample(&s, &mixer()).to_vector());
    }

    #[test]
    fn sample_variance_matches_configuration() {
        let s = state();
        let exact = exact_measurement(&s, &mixer()).to_vector();
        let noise = NoiseConfig::default();
        let std = [
            noise.position,
            noise.position,
            noise.position,
            noise.velocity,
            noise.velocity,
            noise.velocity,
            noise.f_z,
            noise.attitude,
            noise.attitude,
            noise.attitude,
        ];
        let mut sensor = Sensor::new(noise, 2024);
        let n = 100_000;
        let mut sum = [0.0; 10];
        let mut sq = [0.0; 10];
        for _ in 0..n {
            let e = sensor.sample(&s, &mixer()).to_vector() - exact;
            for j in 0..10 {
                sum[j] += e[j];
                sq[j] += e[j] * e[j];
            }
        }
        for j in 0..10 {
            let mean = sum[j] / n as f64;
            let var = sq[j] / n as f64 - mean * mean;
            let target = std[j] * std[j];
            assert!((var / target - 1.0).abs() < 0.05, "channel {j}: {var} vs {target}");
        }
    }
}
