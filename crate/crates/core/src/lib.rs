pub mod basis;
pub mod constraints;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod posterior;
pub mod tmvn;
pub mod qp;
pub mod diagnostics;
pub mod hyperparam;
pub mod emulator;
pub mod io;
pub mod config;
pub mod experiments;
