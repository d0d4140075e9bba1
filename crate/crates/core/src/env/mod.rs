//! Environments: the UAV data-collection world, the space-air-ground
//! downlink world, and a small chain MDP with a known optimum.

pub mod chain;
pub mod sagin;
pub mod uav;
