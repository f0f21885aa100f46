//! Multi-step streamflow forecasting: sliding-window embedding, catchment
//! data strategies, small recurrent and convolutional forecasters trained
//! under MSE or pinball loss, and a switching ensemble that routes each
//! window to a quantile branch chosen by its predicted flow-duration rank.

pub mod experiment;
pub mod ingest;
pub mod metrics;
pub mod neural;
pub mod series;
pub mod strategy;
pub mod switch;
pub mod synth;
