//! Road-geometry audits, telemetry analysis and roadway-readiness prediction
//! for torque-limited lane keeping assist (LKA) systems.

pub mod deviation;
pub mod diagnosis;
pub mod dynamics;
pub mod geometry;
pub mod readiness;
pub mod rules;
pub mod telemetry;
