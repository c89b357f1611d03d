pub mod config;
pub mod emulator;
pub mod kinematics;
pub mod wire;
pub mod twin;
pub mod gateway;
pub mod proxy;
pub mod scenarios;
