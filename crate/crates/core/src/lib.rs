pub mod calibration;
pub mod channel;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod rti;
pub mod scenario;
