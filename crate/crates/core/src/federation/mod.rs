//! Federated rounds: joint FedAvg of both factors, FFA (frozen `A`) and the
//! alternating schedule, with the aggregation-deviation metric.

mod deviation;
mod metrics;
mod schedule;
mod state;

pub use deviation::{aggregate, aggregation_deviation};
pub use metrics::{accuracy, macro_f1, MetricLog, MetricRow};
pub use schedule::{BudgetPattern, Method, Phase, RoundSchedule};
pub use state::{
    client_rng, init_rng, run_federation, AggregationEvent, ClientCheckpoint, DpBudget, FederationCheckpoint, FederationConfig,
    FederationState,
};
