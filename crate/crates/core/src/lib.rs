//! Estimation of age-dependent transmission rates, the force of infection
//! and the basic reproduction number from serological survey data combined
//! with social contact diaries.

pub mod bootstrap;
pub mod contact;
pub mod data;
pub mod error;
pub mod foi;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod selection;
pub mod simulate;
pub mod transmission;
pub mod waifw;

pub use error::{Error, Result};
