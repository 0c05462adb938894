//! Round procedures. All three protocols share [`client_update`]; they differ
//! only in which modules are averaged with whom.
//!
//! - ModFL: configuration modules averaged within `C_i`, operation modules
//!   within `O_j`.
//! - FedAvg: whole models averaged within each architecture.
//! - FedPer: configuration (base) modules averaged within each architecture,
//!   operation (personalisation) modules never leave the client.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;

use super::aggregate::aggregate_by_client;
use super::client::{client_update, ClientRecord, ClientUpdate, TrainConfig};
use super::groups::GroupMap;
use crate::error::{Error, Result};
use crate::nn::{init_params, ParamSet};
use crate::registry::{check_operation_compatibility, split, ModelSpec};

/// Per-client mean training loss of the round's last local epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundReport {
    pub round: usize,
    pub train_loss: BTreeMap<usize, f64>,
}

/// Hook for regrouping clients by their operation modules between the
/// configuration and operation aggregation steps.
pub trait OperationClustering: Sync {
    /// Returns the operation-group memberships to aggregate with this round.
    fn cluster(
        &self,
        round: usize,
        updates: &[(usize, &ParamSet)],
        current: &BTreeMap<usize, Vec<usize>>,
    ) -> Result<BTreeMap<usize, Vec<usize>>>;
}

/// Fixed groups known ahead of time.
#[derive(Debug, Clone, Copy, Default)]
pub struct AprioriClustering;

impl OperationClustering for AprioriClustering {
    fn cluster(
        &self,
        _round: usize,
        _updates: &[(usize, &ParamSet)],
        current: &BTreeMap<usize, Vec<usize>>,
    ) -> Result<BTreeMap<usize, Vec<usize>>> {
        Ok(current.clone())
    }
}

/// Initial configuration modules per configuration group and the single
/// shared operation module. Every group's full model comes from
/// `init_params(spec, seed)`; operation-module entries are keyed by name so
/// all architectures agree on them.
pub fn initial_modules(specs: &BTreeMap<usize, ModelSpec>, seed: u64) -> Result<(BTreeMap<usize, ParamSet>, ParamSet)> {
    let list: Vec<ModelSpec> = specs.values().cloned().collect();
    check_operation_compatibility(&list)?;
    let mut config = BTreeMap::new();
    let mut op: Option<ParamSet> = None;
    for (&g, spec) in specs {
        let s = split(spec, init_params(spec, seed)?)?;
        match &op {
            None => op = Some(s.operation.params),
            Some(o) if !o.bit_eq(&s.operation.params) => {
                return Err(Error::Compatibility(format!(
                    "{} initialises a different operation module",
                    spec.arch_id
                )))
            }
            Some(_) => {}
        }
        config.insert(g, s.config.params);
    }
    let op = op.ok_or_else(|| Error::Protocol("no configuration groups".into()))?;
    Ok((config, op))
}

fn index_clients(clients: &[ClientRecord]) -> Result<BTreeMap<usize, usize>> {
    let mut pos = BTreeMap::new();
    for (k, c) in clients.iter().enumerate() {
        if pos.insert(c.id, k).is_some() {
            return Err(Error::Protocol(format!("duplicate client id {}", c.id)));
        }
    }
    Ok(pos)
}

fn train_all<'a, F>(clients: &'a [ClientRecord], train: &TrainConfig, round: usize, modules: F) -> Result<Vec<ClientUpdate>>
where
    F: Fn(&'a ClientRecord) -> Result<(&'a ParamSet, &'a ParamSet)> + Sync,
{
    clients
        .par_iter()
        .map(|c| {
            let (w_c, w_o) = modules(c)?;
            client_update(c, w_c, w_o, train, round)
        })
        .collect()
}

fn members_by_config(clients: &[ClientRecord]) -> BTreeMap<usize, Vec<usize>> {
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for c in clients {
        out.entry(c.config_group).or_default().push(c.id);
    }
    out.values_mut().for_each(|v| v.sort_unstable());
    out
}

fn report(round: usize, updates: &[ClientUpdate]) -> RoundReport {
    RoundReport {
        round,
        train_loss: updates.iter().map(|u| (u.client, u.train_loss)).collect(),
    }
}

/// Server side of ModFL.
#[derive(Debug, Clone)]
pub struct ServerState {
    /// Completed rounds.
    pub round: usize,
    pub global_config: BTreeMap<usize, ParamSet>,
    pub global_op: BTreeMap<usize, ParamSet>,
    pub group_map: GroupMap,
}

impl ServerState {
    /// Every `W_c,i` from its architecture's initialisation, every `W_o,j`
    /// the same shared operation module.
    pub fn initialise(specs: &BTreeMap<usize, ModelSpec>, group_map: GroupMap, seed: u64) -> Result<Self> {
        group_map.validate()?;
        let (global_config, op) = initial_modules(specs, seed)?;
        if let Some(g) = group_map.config_members.keys().find(|g| !global_config.contains_key(g)) {
            return Err(Error::Protocol(format!("no architecture for configuration group {g}")));
        }
        let global_op = group_map.op_members.keys().map(|&j| (j, op.clone())).collect();
        Ok(Self {
            round: 0,
            global_config,
            global_op,
            group_map,
        })
    }
}

/// One ModFL round with the a-priori operation groups.
pub fn run_round_modfl(server: &mut ServerState, clients: &mut [ClientRecord], train: &TrainConfig) -> Result<RoundReport> {
    run_round_modfl_with(server, clients, train, &AprioriClustering)
}

/// One ModFL round. Nothing is committed unless every client succeeds.
pub fn run_round_modfl_with(
    server: &mut ServerState,
    clients: &mut [ClientRecord],
    train: &TrainConfig,
    clustering: &dyn OperationClustering,
) -> Result<RoundReport> {
    let pos = index_clients(clients)?;
    for c in clients.iter() {
        if server.group_map.config_group_of(c.id) != Some(c.config_group)
            || server.group_map.op_group_of(c.id) != Some(c.op_group)
        {
            return Err(Error::Protocol(format!("client {} disagrees with the server's group map", c.id)));
        }
    }
    if pos.len() != server.group_map.num_clients() {
        return Err(Error::Protocol("group map and client list differ in size".into()));
    }
    let round = server.round;
    let updates = train_all(clients, train, round, |c| {
        let w_c = server.global_config.get(&c.config_group);
        let w_o = server.global_op.get(&c.op_group);
        match (w_c, w_o) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Protocol(format!("no global modules for client {}", c.id))),
        }
    })?;
    let by_id: BTreeMap<usize, &ClientUpdate> = updates.iter().map(|u| (u.client, u)).collect();

    let mut new_config = BTreeMap::new();
    for (&i, members) in &server.group_map.config_members {
        let list: Vec<(usize, &ParamSet)> = members.iter().map(|n| (*n, &by_id[n].config)).collect();
        new_config.insert(i, aggregate_by_client(&list)?);
    }

    let op_updates: Vec<(usize, &ParamSet)> = by_id.iter().map(|(&n, u)| (n, &u.operation)).collect();
    let op_members = clustering.cluster(round, &op_updates, &server.group_map.op_members)?;
    let group_map = GroupMap {
        config_members: server.group_map.config_members.clone(),
        op_members,
    };
    group_map.validate()?;
    let mut new_op = BTreeMap::new();
    for (&j, members) in &group_map.op_members {
        let list: Vec<(usize, &ParamSet)> = members.iter().map(|n| (*n, &by_id[n].operation)).collect();
        new_op.insert(j, aggregate_by_client(&list)?);
    }

    for u in &updates {
        let c = &mut clients[pos[&u.client]];
        c.adam = u.adam.clone();
        c.op_group = group_map.op_group_of(c.id).expect("validated membership");
        c.local.config.params = new_config[&c.config_group].clone();
        c.local.operation.params = new_op[&c.op_group].clone();
    }
    server.global_config = new_config;
    server.global_op = new_op;
    server.group_map = group_map;
    server.round += 1;
    Ok(report(round, &updates))
}

/// Global models of FedAvg, one per architecture.
#[derive(Debug, Clone)]
pub struct FedAvgState {
    pub round: usize,
    /// `(configuration part, operation part)` of each group's global model.
    pub global: BTreeMap<usize, (ParamSet, ParamSet)>,
}

impl FedAvgState {
    pub fn initialise(specs: &BTreeMap<usize, ModelSpec>, seed: u64) -> Result<Self> {
        let (config, op) = initial_modules(specs, seed)?;
        Ok(Self {
            round: 0,
            global: config.into_iter().map(|(g, c)| (g, (c, op.clone()))).collect(),
        })
    }

    pub fn full_model(&self, group: usize) -> Option<ParamSet> {
        let (c, o) = self.global.get(&group)?;
        c.clone().concat(o.clone()).ok()
    }
}

/// One FedAvg round: every architecture's clients average their whole models.
pub fn run_round_fedavg(state: &mut FedAvgState, clients: &mut [ClientRecord], train: &TrainConfig) -> Result<RoundReport> {
    let pos = index_clients(clients)?;
    let round = state.round;
    let updates = train_all(clients, train, round, |c| {
        state
            .global
            .get(&c.config_group)
            .map(|(a, b)| (a, b))
            .ok_or_else(|| Error::Protocol(format!("no global model for client {}", c.id)))
    })?;
    let by_id: BTreeMap<usize, &ClientUpdate> = updates.iter().map(|u| (u.client, u)).collect();
    let mut new_global = BTreeMap::new();
    for (g, members) in members_by_config(clients) {
        let full: Vec<(usize, ParamSet)> = members
            .iter()
            .map(|n| {
                let u = by_id[n];
                Ok((*n, u.config.clone().concat(u.operation.clone())?))
            })
            .collect::<Result<_>>()?;
        let refs: Vec<(usize, &ParamSet)> = full.iter().map(|(n, p)| (*n, p)).collect();
        let mean = aggregate_by_client(&refs)?;
        new_global.insert(g, mean.split_off(by_id[&members[0]].config.len()));
    }
    for u in &updates {
        let c = &mut clients[pos[&u.client]];
        c.adam = u.adam.clone();
        let (w_c, w_o) = &new_global[&c.config_group];
        c.local.config.params = w_c.clone();
        c.local.operation.params = w_o.clone();
    }
    state.global = new_global;
    state.round += 1;
    Ok(report(round, &updates))
}

/// Shared base modules of FedPer; personalisation modules live on the clients.
#[derive(Debug, Clone)]
pub struct FedPerState {
    pub round: usize,
    pub base: BTreeMap<usize, ParamSet>,
}

impl FedPerState {
    pub fn initialise(specs: &BTreeMap<usize, ModelSpec>, seed: u64) -> Result<Self> {
        let (base, _) = initial_modules(specs, seed)?;
        Ok(Self { round: 0, base })
    }
}

/// One FedPer round: bases averaged per architecture, heads kept local.
pub fn run_round_fedper(state: &mut FedPerState, clients: &mut [ClientRecord], train: &TrainConfig) -> Result<RoundReport> {
    let pos = index_clients(clients)?;
    let round = state.round;
    let updates = train_all(clients, train, round, |c| {
        state
            .base
            .get(&c.config_group)
            .map(|b| (b, &c.local.operation.params))
            .ok_or_else(|| Error::Protocol(format!("no base module for client {}", c.id)))
    })?;
    let by_id: BTreeMap<usize, &ClientUpdate> = updates.iter().map(|u| (u.client, u)).collect();
    let mut new_base = BTreeMap::new();
    for (g, members) in members_by_config(clients) {
        let list: Vec<(usize, &ParamSet)> = members.iter().map(|n| (*n, &by_id[n].config)).collect();
        new_base.insert(g, aggregate_by_client(&list)?);
    }
    for u in &updates {
        let c = &mut clients[pos[&u.client]];
        c.adam = u.adam.clone();
        c.local.config.params = new_base[&c.config_group].clone();
        c.local.operation.params = u.operation.clone();
    }
    state.base = new_base;
    state.round += 1;
    Ok(report(round, &updates))
}

/// Number of bitwise-distinct full models held by the clients.
pub fn distinct_models(clients: &[ClientRecord]) -> Result<usize> {
    let mut seen = HashSet::new();
    for c in clients {
        let bits: Vec<u64> = c.model()?.flatten().iter().map(|v| v.to_bits()).collect();
        seen.insert(bits);
    }
    Ok(seen.len())
}
