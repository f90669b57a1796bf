//! Command-line front end: argument parsing, result records and SVG plots.

pub mod app;
pub mod records;
pub mod svg;

pub use app::run;
