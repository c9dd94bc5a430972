//! Equilibria, social welfare and price of anarchy for networked Cournot
//! platform markets under open access, controlled allocation and
//! discriminatory access.

pub mod equilibrium;
pub mod model;
pub mod poa_analysis;
pub mod controlled;
pub mod design;
