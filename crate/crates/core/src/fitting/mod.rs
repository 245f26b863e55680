//! Least-squares engine and the line-shape fits built on it.

pub mod lm;
pub mod models;
pub mod t2star;

pub use lm::{fit_curve, Bounds, DataPoint, FitOptions, FitResult, LineModel, Model};
pub use models::{
    binomial_weight, fit_echo_decay, fit_fringe, fit_ramsey_decay, EchoDecayModel, FringeModel, RamseyDecayModel,
};
pub use t2star::{fit_t2star_tm, log_spaced, t2star_prediction, t2star_vs_tm, T2StarFit, T2StarRegime, T2StarSeries};
