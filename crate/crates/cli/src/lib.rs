pub mod analysis;
pub mod config;
pub mod dataset;
pub mod run;
pub mod synthetic;
pub mod weights_io;
pub mod wine;
