//! HTTP server, HTTP client transport and command-line front end for
//! `oais-core`.

pub mod cli;
pub mod http;
pub mod server;
