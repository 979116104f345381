//! Progressive transmission over noisy channels with recurrent
//! transmitter/receiver pairs, plus classical baselines and evaluation.

pub mod autodiff;
pub mod baselines;
pub mod channels;
pub mod checkpoint;
pub mod evaluation;
pub mod experiment;
pub mod objectives;
pub mod rng;
pub mod training;
pub mod transceiver;
