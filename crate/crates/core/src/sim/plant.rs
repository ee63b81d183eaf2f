//! Rigid-body quadrotor plant with rotor lag, ceiling field and contact.

use nalgebra::{SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::ceiling::CeilingModel;
use crate::inner_loop::{Mixer, RotorCommand};
use crate::vehicle::{rotation_world_from_body, VehicleParams};

type Packed = SVector<f64, 16>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    /// Principal moments of inertia [kg·m²].
    pub inertia: [f64; 3],
    /// First-order rotor lag time constant [s].
    pub rotor_time_constant: f64,
    /// Maximum rotor speed [rad/s].
    pub omega_max: f64,
    /// Contact happens when the body reference reaches `ceiling_height − contact_offset` [m].
    pub contact_offset: f64,
    /// Net downward force that detaches a stuck vehicle [N].
    pub release_threshold: f64,
    /// Constant world-frame force acting on the body [N].
    pub disturbance_force: [f64; 3],
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            inertia: [0.0117, 0.0117, 0.0234],
            rotor_time_constant: 0.03,
            omega_max: 1000.0,
            contact_offset: 0.0,
            release_threshold: 1.0,
            disturbance_force: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Roll, pitch, yaw (Z-Y-X) [rad].
    pub attitude: Vector3<f64>,
    /// Body angular rates [rad/s].
    pub rates: Vector3<f64>,
    /// Rotor speeds [rad/s].
    pub rotors: [f64; 4],
    /// Set while the vehicle is pinned to the ceiling.
    pub stuck: bool,
}

impl PlantState {
    /// Level, at rest at `position`, rotors at the free-air hover speed.
    pub fn hover_at(position: Vector3<f64>, p: &VehicleParams) -> Self {
        let w = (p.weight() / (4.0 * p.thrust_coeff)).sqrt();
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: Vector3::zeros(),
            rates: Vector3::zeros(),
            rotors: [w; 4],
            stuck: false,
        }
    }

    pub fn rotor_command(&self) -> RotorCommand {
        RotorCommand { omega: self.rotors }
    }

    fn pack(&self) -> Packed {
        let mut x = Packed::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.position);
        x.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        x.fixed_rows_mut::<3>(6).copy_from(&self.attitude);
        x.fixed_rows_mut::<3>(9).copy_from(&self.rates);
        for i in 0..4 {
            x[12 + i] = self.rotors[i];
        }
        x
    }

    fn unpack(x: &Packed, stuck: bool) -> Self {
        Self {
            position: x.fixed_rows::<3>(0).into(),
            velocity: x.fixed_rows::<3>(3).into(),
            attitude: x.fixed_rows::<3>(6).into(),
            rates: x.fixed_rows::<3>(9).into(),
            rotors: [x[12], x[13], x[14], x[15]],
            stuck,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Plant {
    pub cfg: PlantConfig,
    pub params: VehicleParams,
    /// Ceiling, absent for free flight.
    pub ceiling: Option<CeilingModel>,
    mixer: Mixer,
}

impl Plant {
    pub fn new(cfg: PlantConfig, params: VehicleParams, ceiling: Option<CeilingModel>) -> Self {
        Self {
            mixer: Mixer::new(&params, cfg.omega_max),
            cfg,
            params,
            ceiling,
        }
    }

    pub fn mixer(&self) -> &Mixer {
        &self.mixer
    }

    /// Thrust amplification at body height `z`.
    pub fn thrust_ratio(&self, z: f64) -> f64 {
        self.ceiling.map_or(1.0, |c| c.thrust_ratio(c.rotor_distance(z)))
    }

    /// Distance from the body reference to the ceiling, infinite without one.
    pub fn distance_to_ceiling(&self, z: f64) -> f64 {
        self.ceiling.map_or(f64::INFINITY, |c| c.ceiling_height - z)
    }

    /// Actual wrench (f_z, τx, τy, τz) including the ceiling amplification.
    fn wrench(&self, z: f64, rotors: &[f64]) -> Vector4<f64> {
        let w2 = Vector4::from_iterator(rotors.iter().map(|w| w * w));
        let mut wrench = self.mixer.matrix() * w2;
        let r = self.thrust_ratio(z);
        for k in 0..3 {
            wrench[k] *= r;
        }
        wrench
    }

    /// World-frame force on the body excluding contact [N].
    pub fn net_force(&self, s: &PlantState) -> Vector3<f64> {
        let thrust = self.wrench(s.position.z, &s.rotors)[0];
        let a = s.attitude;
        let mut f =
            rotation_world_from_body(a.x, a.y, a.z).column(2) * thrust + Vector3::from(self.cfg.disturbance_force);
        f.z -= self.params.weight();
        f
    }

    fn derivative(&self, x: &Packed, cmd: &RotorCommand, pinned: bool) -> Packed {
        let s = PlantState::unpack(x, pinned);
        let mut d = Packed::zeros();
        let wrench = self.wrench(s.position.z, &s.rotors);
        if !pinned {
            d.fixed_rows_mut::<3>(0).copy_from(&s.velocity);
            d.fixed_rows_mut::<3>(3)
                .copy_from(&(self.net_force(&s) / self.params.mass));
        }
        let (phi, theta) = (s.attitude.x, s.attitude.y);
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let w = s.rates;
        d[6] = w.x + (sp * w.y + cp * w.z) * st / ct;
        d[7] = cp * w.y - sp * w.z;
        d[8] = (sp * w.y + cp * w.z) / ct;
        let j = Vector3::from(self.cfg.inertia);
        let jw = j.component_mul(&w);
        let torque = Vector3::new(wrench[1], wrench[2], wrench[3]);
        d.fixed_rows_mut::<3>(9)
            .copy_from(&(torque - w.cross(&jw)).component_div(&j));
        for i in 0..4 {
            let target = cmd.omega[i].clamp(0.0, self.cfg.omega_max);
            d[12 + i] = (target - s.rotors[i]) / self.cfg.rotor_time_constant;
        }
        d
    }

    /// Advances the plant by `dt` with rotor speed command `cmd` (RK4, then
    /// the contact rules).
    pub fn step(&self, s: &PlantState, cmd: &RotorCommand, dt: f64) -> PlantState {
        let mut stuck = s.stuck;
        if stuck && self.net_force(s).z < -self.cfg.release_threshold {
            stuck = false;
        }
        let x = s.pack();
        let k1 = self.derivative(&x, cmd, stuck);
        let k2 = self.derivative(&(x + k1 * (0.5 * dt)), cmd, stuck);
        let k3 = self.derivative(&(x + k2 * (0.5 * dt)), cmd, stuck);
        let k4 = self.derivative(&(x + k3 * dt), cmd, stuck);
        let mut next = PlantState::unpack(&(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)), stuck);
        for w in next.rotors.iter_mut() {
            *w = w.clamp(0.0, self.cfg.omega_max);
        }
        if let Some(c) = self.ceiling {
            let limit = c.ceiling_height - self.cfg.contact_offset;
            if next.position.z >= limit {
                if next.velocity.z > 0.0 {
                    next.stuck = true;
                }
                next.position.z = limit;
                if next.stuck {
                    next.velocity = Vector3::zeros();
                } else {
                    next.velocity.z = next.velocity.z.min(0.0);
                }
            }
        }
        next
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    fn hover_cmd() -> RotorCommand {
        PlantState::hover_at(Vector3::zeros(), &params()).rotor_command()
    }

    #[test]
    fn free_hover_stays_put() {
        let plant = Plant::new(PlantConfig::default(), params(), None);
        let mut s = PlantState::hover_at(Vector3::new(0.0, 0.0, 1.0), &params());
        for _ in 0..2000 {
            s = plant.step(&s, &hover_cmd(), 0.001);
        }
        assert!((s.position - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-9);
        assert!(s.rates.norm() < 1e-12 && !s.stuck);
    }

    #[test]
    fn hover_command_near_ceiling_is_sucked_up() {
        let plant = Plant::new(PlantConfig::default(), params(), Some(CeilingModel::default()));
        let c = plant.ceiling.unwrap();
        let mut s = PlantState::hover_at(Vector3::new(0.0, 0.0, c.ceiling_height - 0.05), &params());
        assert!(plant.net_force(&s).z > 0.0);
        let mut stuck_at = None;
        for k in 0..3000 {
            s = plant.step(&s, &hover_cmd(), 0.001);
            if s.stuck && stuck_at.is_none() {
                stuck_at = Some(k);
            }
            assert!(s.position.z <= c.ceiling_height);
        }
        assert!(stuck_at.is_some());
        assert_eq!(s.position.z, c.ceiling_height);
        assert_eq!(s.velocity, Vector3::zeros());
    }

    #[test]
    fn stuck_vehicle_releases_only_on_thrust_deficit() {
        let plant = Plant::new(PlantConfig::default(), params(), Some(CeilingModel::default()));
        let c = plant.ceiling.unwrap();
        let mut s = PlantState::hover_at(Vector3::new(0.3, 0.0, c.ceiling_height), &params());
        s.stuck = true;
        // Slight deficit, within the release threshold: stays pinned.
        let ratio = plant.thrust_ratio(c.ceiling_height);
        let w_hold = (params().weight() / ratio / (4.0 * params().thrust_coeff)).sqrt() * 0.99;
        let hold = RotorCommand { omega: [w_hold; 4] };
        s.rotors = hold.omega;
        for _ in 0..500 {
            s = plant.step(&s, &hold, 0.001);
        }
        assert!(s.stuck);
        assert_eq!(s.position, Vector3::new(0.3, 0.0, c.ceiling_height));
        // A large deficit detaches it and it falls away.
        let drop = RotorCommand {
            omega: [w_hold * 0.8; 4],
        };
        for _ in 0..500 {
            s = plant.step(&s, &drop, 0.001);
        }
        assert!(!s.stuck);
        assert!(s.position.z < c.ceiling_height - 0.01);
    }

    #[test]
    fn roll_torque_rolls_positive() {
        let plant = Plant::new(PlantConfig::default(), params(), None);
        let s = PlantState::hover_at(Vector3::zeros(), &params());
        let a = plant.mixer().allocate(params().weight(), &Vector3::new(0.01, 0.0, 0.0));
        let mut x = s;
        x.rotors = a.command.omega;
        let next = plant.step(&x, &a.command, 0.01);
        assert!(next.rates.x > 0.0 && next.attitude.x > 0.0);
        assert!(next.rates.y.abs() < 1e-9 && next.rates.z.abs() < 1e-9);
    }

    #[test]
    fn rotor_lag_is_first_order() {
        let plant = Plant::new(PlantConfig::default(), params(), None);
        let mut s = PlantState::hover_at(Vector3::zeros(), &params());
        let w0 = s.rotors[0];
        let cmd = RotorCommand { omega: [w0 + 100.0; 4] };
        for _ in 0..30 {
            s = plant.step(&s, &cmd, 0.001);
        }
        let expect = w0 + 100.0 * (1.0 - (-1.0f64).exp());
        assert!((s.rotors[0] - expect).abs() < 1e-6);
    }
}
