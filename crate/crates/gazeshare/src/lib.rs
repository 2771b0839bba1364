//! Group gaze-sharing hub: wire protocol, configuration files, the live and
//! replayed session, and the evaluation toolkit.

pub mod cli;
pub mod config;
pub mod evalkit;
pub mod hub;
pub mod protocol;
