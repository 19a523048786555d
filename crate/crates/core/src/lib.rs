pub mod baselines;
pub mod client;
pub mod data;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod solver;
pub mod svm;
