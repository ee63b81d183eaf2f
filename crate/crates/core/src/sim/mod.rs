//! Ground-truth simulation: plant, ceiling field, sensors and power.

pub mod ceiling;
pub mod plant;
pub mod power;
pub mod sensor;

pub use ceiling::CeilingModel;
pub use plant::{Plant, PlantConfig, PlantState};
pub use power::{power_draw, PowerMeter, PowerModel};
pub use sensor::{exact_measurement, NoiseConfig, Sensor};
