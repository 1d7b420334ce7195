//! Forecasting in both inference modes, recall evaluation, risk
//! trajectories and sequence embeddings.

mod embedding;
mod eval;
mod forecast;
mod recall;
mod risk;

pub use embedding::{centroid_classify, classify_centroids, cosine, fit_centroids, sequence_embedding};
pub use eval::{
    cut_targets, evaluate, evaluate_with_threads, forecast_patient, marginal_frequencies, BucketRecall, EvalProtocol,
    EvalReport, ForecastRecord, PatientForecast, RecallReport,
};
pub use forecast::{
    autoregressive_continue, autoregressive_forecast, prime, time_specific_continue, time_specific_forecast,
    AbsorbMode, Forecast,
};
pub use recall::{rank_of, topk_recall};
pub use risk::{risk_distributions, risk_trajectory, RiskTrajectory};
