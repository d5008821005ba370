//! LSTM cell, MLPs, Glorot initialization and Adam.

mod adam;
pub mod init;
mod lstm;
mod mlp;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use lstm::{LstmCell, LstmState};
pub use mlp::{Activation, Mlp};
pub use params::{grad_check_params, Bound, Param, ParamId, ParamStore};
