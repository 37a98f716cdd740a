//! Coverage-collecting test runner: live pipeline, HTTP API, collectors and
//! the simulated SUT server.

pub mod api;
pub mod cli;
pub mod collector;
pub mod http_adapter;
pub mod pipeline;
pub mod sim_server;
