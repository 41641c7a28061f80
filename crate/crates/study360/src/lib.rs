//! Session server, network headset client and command-line tooling for
//! guided 360-video studies, built on [`study360_core`].

pub mod cli;
pub mod client;
pub mod server;

pub use client::{run_sim, ClientError};
pub use server::{serve, ServeError, ServeOptions, Server};
