//! End-to-end simulation: data, partition, clients, rounds, evaluation.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use super::client::{ClientRecord, TrainConfig};
use super::groups::GroupMap;
use super::protocols::{
    initial_modules, run_round_fedavg, run_round_fedper, run_round_modfl, FedAvgState, FedPerState, RoundReport,
    ServerState,
};
use crate::data::{
    even_and_split, generate_synthetic, load_cifar10, load_stl10, partition, Dataset, GroupLayout, PartitionPlan,
};
use crate::error::{Error, Result};
use crate::harness::config::{DatasetKind, ExperimentConfig, Framework};
use crate::nn::{evaluate, evaluate_with_loss, ParamSet};
use crate::registry::{build_arch, ModelSpec, NUM_CLASSES};
use crate::rng::{self, derive_seed};

pub const DATA_DIR_ENV: &str = "MODFL_DATA_DIR";

/// Test metrics after one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    /// 1-based.
    pub round: usize,
    pub framework: Framework,
    pub per_client_accuracy: BTreeMap<usize, f64>,
    pub per_client_loss: BTreeMap<usize, f64>,
    pub per_client_train_loss: BTreeMap<usize, f64>,
    /// Mean client accuracy per architecture.
    pub cohort_mean: BTreeMap<String, f64>,
    pub cohort_loss: BTreeMap<String, f64>,
    pub cohort_train_loss: BTreeMap<String, f64>,
    /// With one label set covering all classes: mean accuracy of the
    /// architecture's client models on its whole test split. Empty otherwise.
    pub global_accuracy: BTreeMap<String, f64>,
}

enum Protocol {
    ModFl(ServerState),
    FedAvg(FedAvgState),
    FedPer(FedPerState),
}

/// A running experiment.
pub struct Simulation {
    config: ExperimentConfig,
    specs: BTreeMap<usize, ModelSpec>,
    plan: PartitionPlan,
    clients: Vec<ClientRecord>,
    group_tests: Vec<Dataset>,
    protocol: Protocol,
    train: TrainConfig,
    round: usize,
}

/// The architectures of the configuration groups, in order.
pub fn group_specs(config: &ExperimentConfig) -> Result<BTreeMap<usize, ModelSpec>> {
    config
        .architectures
        .iter()
        .enumerate()
        .map(|(g, a)| Ok((g, build_arch(a)?.with_operation_layers(config.operation_layers)?)))
        .collect()
}

fn data_path(explicit: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Data(format!("no path for {what}: set data_paths.{what} or {DATA_DIR_ENV}")))
}

/// Loads or generates each configuration group's dataset and splits it into
/// class-balanced train and test parts.
pub fn prepare_data(config: &ExperimentConfig) -> Result<Vec<(Dataset, Dataset)>> {
    config.validate()?;
    let specs = group_specs(config)?;
    let mut out = Vec::new();
    for (&g, spec) in &specs {
        let full = match config.dataset {
            DatasetKind::Synthetic => {
                let res = spec.input_shape[1];
                generate_synthetic(
                    res,
                    config.samples_per_dataset / NUM_CLASSES,
                    derive_seed(config.seed, &[rng::TAG_DATA, res as u64]),
                )?
            }
            DatasetKind::CifarStl => match spec.arch_id.as_str() {
                "cifar_gen" => load_cifar10(&data_path(&config.data_paths.cifar10, "cifar10")?)?,
                "stl_gen" => load_stl10(&data_path(&config.data_paths.stl10, "stl10")?)?,
                other => return Err(Error::config(format!("no dataset for architecture {other}"))),
            },
        };
        out.push(even_and_split(
            &full,
            config.samples_per_dataset,
            config.train_ratio,
            derive_seed(config.seed, &[rng::TAG_SPLIT, g as u64]),
        )?);
    }
    Ok(out)
}

/// Partition plan for a config and its prepared data.
pub fn plan_partition(config: &ExperimentConfig, data: &[(Dataset, Dataset)]) -> Result<PartitionPlan> {
    let refs: Vec<(&Dataset, &Dataset)> = data.iter().map(|(a, b)| (a, b)).collect();
    partition(
        &refs,
        config.clients,
        GroupLayout {
            config_groups: config.config_groups(),
            op_groups: config.num_op_groups,
        },
        config.labels_per_group,
        derive_seed(config.seed, &[rng::TAG_PARTITION]),
    )
}

impl Simulation {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let data = prepare_data(config)?;
        Self::from_data(config, data)
    }

    /// `data[i]` is the `(train, test)` split of configuration group `i`.
    pub fn from_data(config: &ExperimentConfig, data: Vec<(Dataset, Dataset)>) -> Result<Self> {
        config.validate()?;
        let specs = group_specs(config)?;
        let plan = plan_partition(config, &data)?;
        let init_seed = derive_seed(config.seed, &[rng::TAG_INIT]);
        let (config_init, op_init) = initial_modules(&specs, init_seed)?;

        let mut clients = Vec::with_capacity(config.clients);
        for n in 0..config.clients {
            let (cg, og) = (plan.config_groups[n], plan.operation_groups[n]);
            let (train, test) = &data[cg];
            let shard = &plan.shards[n];
            clients.push(ClientRecord::new(
                n,
                cg,
                og,
                specs[&cg].clone(),
                config_init[&cg].clone().concat(op_init.clone())?,
                train.subset(&shard.train)?,
                test.subset(&shard.test)?,
                config.lr,
                derive_seed(config.seed, &[rng::TAG_CLIENT, n as u64]),
            )?);
        }

        let protocol = match config.framework {
            Framework::ModFl => {
                let map = GroupMap::from_assignment(&plan.config_groups, &plan.operation_groups)?;
                Protocol::ModFl(ServerState::initialise(&specs, map, init_seed)?)
            }
            Framework::FedAvg => Protocol::FedAvg(FedAvgState::initialise(&specs, init_seed)?),
            Framework::FedPer => Protocol::FedPer(FedPerState::initialise(&specs, init_seed)?),
        };
        Ok(Self {
            config: config.clone(),
            specs,
            plan,
            clients,
            group_tests: data.into_iter().map(|(_, test)| test).collect(),
            protocol,
            train: TrainConfig {
                epochs: config.local_epochs,
                batch_size: config.batch_size,
                lr: config.lr,
            },
            round: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.plan
    }

    pub fn clients(&self) -> &[ClientRecord] {
        &self.clients
    }

    pub fn specs(&self) -> &BTreeMap<usize, ModelSpec> {
        &self.specs
    }

    /// Completed rounds.
    pub fn round(&self) -> usize {
        self.round
    }

    /// ModFL server state, if this is a ModFL run.
    pub fn server(&self) -> Option<&ServerState> {
        match &self.protocol {
            Protocol::ModFl(s) => Some(s),
            _ => None,
        }
    }

    /// The server-side model for a configuration/operation group pair:
    /// ModFL's `W_c,i + W_o,j`, FedAvg's global model of group `i`. FedPer
    /// keeps no global operation module and returns `None`.
    pub fn global_model(&self, config_group: usize, op_group: usize) -> Option<ParamSet> {
        match &self.protocol {
            Protocol::ModFl(s) => {
                let c = s.global_config.get(&config_group)?;
                let o = s.global_op.get(&op_group)?;
                c.clone().concat(o.clone()).ok()
            }
            Protocol::FedAvg(s) => s.full_model(config_group),
            Protocol::FedPer(_) => None,
        }
    }

    /// Runs one round and evaluates every client.
    pub fn step(&mut self) -> Result<RoundMetrics> {
        let report = match &mut self.protocol {
            Protocol::ModFl(s) => run_round_modfl(s, &mut self.clients, &self.train)?,
            Protocol::FedAvg(s) => run_round_fedavg(s, &mut self.clients, &self.train)?,
            Protocol::FedPer(s) => run_round_fedper(s, &mut self.clients, &self.train)?,
        };
        self.round += 1;
        self.evaluate(&report)
    }

    fn evaluate(&self, report: &RoundReport) -> Result<RoundMetrics> {
        let scores: Vec<(usize, f64, f64)> = self
            .clients
            .par_iter()
            .map(|c| {
                let (acc, loss) = evaluate_with_loss(&c.spec, &c.model()?, &c.test)?;
                Ok((c.id, acc, loss))
            })
            .collect::<Result<_>>()?;
        let per_client_accuracy: BTreeMap<usize, f64> = scores.iter().map(|s| (s.0, s.1)).collect();
        let per_client_loss: BTreeMap<usize, f64> = scores.iter().map(|s| (s.0, s.2)).collect();

        let cohort = |values: &BTreeMap<usize, f64>| -> BTreeMap<String, f64> {
            let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for c in &self.clients {
                let e = sums.entry(c.arch_id.clone()).or_default();
                e.0 += values[&c.id];
                e.1 += 1;
            }
            sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
        };

        let mut global_accuracy = BTreeMap::new();
        if self.plan.label_sets.len() == 1 && self.plan.label_sets[0].len() == NUM_CLASSES {
            // identical models are scored once
            let mut cache: HashMap<(usize, Vec<u64>), f64> = HashMap::new();
            let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for c in &self.clients {
                let model = c.model()?;
                let key = (c.config_group, model.flatten().iter().map(|v| v.to_bits()).collect());
                let acc = match cache.get(&key) {
                    Some(a) => *a,
                    None => {
                        let a = evaluate(&c.spec, &model, &self.group_tests[c.config_group])?;
                        cache.insert(key, a);
                        a
                    }
                };
                let e = sums.entry(c.arch_id.clone()).or_default();
                e.0 += acc;
                e.1 += 1;
            }
            global_accuracy = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
        }

        Ok(RoundMetrics {
            round: self.round,
            framework: self.config.framework,
            cohort_mean: cohort(&per_client_accuracy),
            cohort_loss: cohort(&per_client_loss),
            cohort_train_loss: cohort(&report.train_loss),
            per_client_accuracy,
            per_client_loss,
            per_client_train_loss: report.train_loss.clone(),
            global_accuracy,
        })
    }
}

/// Runs every round, handing each round's metrics to `on_round` as it lands.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    mut on_round: impl FnMut(&RoundMetrics) -> Result<()>,
) -> Result<Vec<RoundMetrics>> {
    let mut sim = Simulation::new(config)?;
    let mut out = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let m = sim.step()?;
        on_round(&m)?;
        out.push(m);
    }
    Ok(out)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RoundMetrics>> {
    run_experiment_with(config, |_| Ok(()))
}
