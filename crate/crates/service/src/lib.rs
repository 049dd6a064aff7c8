//! HTTP service and command line for the scholarag pipeline.

pub mod app;
pub mod cli;
pub mod config;
pub mod http;
pub mod render;
