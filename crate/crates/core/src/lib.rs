pub mod config;
pub mod data;
pub mod image;
pub mod ledger;
pub mod nn;
pub mod prob;
pub mod rng;
pub mod selection;
pub mod temperature;
pub mod trainer;
pub mod ttda;
pub mod victim;
