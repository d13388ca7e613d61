//! HTTP service and command-line tool over the promptscope core library.

pub mod api;
pub mod cli;
pub mod config;
pub mod embed_server;
pub mod server;
