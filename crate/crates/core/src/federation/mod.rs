pub mod aggregate;
pub mod client;
pub mod experiment;
pub mod groups;
pub mod protocols;

pub use aggregate::{aggregate, aggregate_by_client};
pub use client::{client_update, ClientRecord, ClientUpdate, TrainConfig};
pub use experiment::{
    group_specs, plan_partition, prepare_data, run_experiment, run_experiment_with, RoundMetrics, Simulation,
    DATA_DIR_ENV,
};
pub use groups::GroupMap;
pub use protocols::{
    distinct_models, initial_modules, run_round_fedavg, run_round_fedper, run_round_modfl, run_round_modfl_with,
    AprioriClustering, FedAvgState, FedPerState, OperationClustering, RoundReport, ServerState,
};
