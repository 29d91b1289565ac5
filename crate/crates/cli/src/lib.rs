//! Command-line workbench: data generation, unsupervised training and
//! evaluation of the FTM ranging network.

pub mod commands;
pub mod manifest;
pub mod pipeline;
pub mod plot;
