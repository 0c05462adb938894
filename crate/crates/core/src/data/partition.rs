//! Non-IID client partitioning. Clients are laid out over configuration
//! groups (one per device generation and dataset) and operation groups (one
//! per label set); every client receives the same number of samples per label
//! of its operation group's label set.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::registry::NUM_CLASSES;
use crate::rng;

/// Circular label windows: group `g` gets `{(g + i) mod 9 : i < p}`.
/// With `p == 9` every group would be identical, so a single group is returned.
pub fn make_label_sets(num_groups: usize, p: usize) -> Result<Vec<BTreeSet<usize>>> {
    if p == 0 || p > NUM_CLASSES {
        return Err(Error::config(format!("labels per operation group must be in 1..={NUM_CLASSES}, got {p}")));
    }
    if p == NUM_CLASSES {
        return Ok(vec![(0..NUM_CLASSES).collect()]);
    }
    if num_groups == 0 || num_groups > NUM_CLASSES {
        return Err(Error::config(format!(
            "{num_groups} operation groups cannot have distinct circular label windows (1..={NUM_CLASSES})"
        )));
    }
    Ok((0..num_groups)
        .map(|g| (0..p).map(|i| (g + i) % NUM_CLASSES).collect())
        .collect())
}

/// Group counts the partitioner lays clients out over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GroupLayout {
    pub config_groups: usize,
    pub op_groups: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Shard {
    /// Indices into the client's configuration group's train split.
    pub train: Vec<usize>,
    /// Indices into the client's configuration group's test split.
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionPlan {
    pub num_clients: usize,
    /// Configuration group of each client.
    pub config_groups: Vec<usize>,
    /// Operation group of each client.
    pub operation_groups: Vec<usize>,
    /// Label set of each operation group.
    pub label_sets: Vec<BTreeSet<usize>>,
    pub shards: Vec<Shard>,
}

impl PartitionPlan {
    pub fn clients_in(&self, config_group: usize, op_group: usize) -> Vec<usize> {
        (0..self.num_clients)
            .filter(|&n| self.config_groups[n] == config_group && self.operation_groups[n] == op_group)
            .collect()
    }
}

/// Client `n` belongs to configuration group `n / (N / m)`; within a
/// configuration group clients are assigned to operation groups round-robin.
pub fn assign_groups(num_clients: usize, layout: GroupLayout) -> Result<(Vec<usize>, Vec<usize>)> {
    let GroupLayout { config_groups: m, op_groups: l } = layout;
    if m == 0 || l == 0 || num_clients == 0 || num_clients % (m * l) != 0 {
        return Err(Error::config(format!(
            "{num_clients} clients cannot be split evenly over {m} configuration x {l} operation groups"
        )));
    }
    let per_config = num_clients / m;
    let config = (0..num_clients).map(|n| n / per_config).collect();
    let op = (0..num_clients).map(|n| (n % per_config) % l).collect();
    Ok((config, op))
}

/// Builds the client plan. `splits[i]` is the `(train, test)` pair of
/// configuration group `i`.
pub fn partition(
    splits: &[(&Dataset, &Dataset)],
    num_clients: usize,
    layout: GroupLayout,
    labels_per_group: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    if splits.len() != layout.config_groups {
        return Err(Error::Partition(format!(
            "{} datasets for {} configuration groups",
            splits.len(),
            layout.config_groups
        )));
    }
    let label_sets = make_label_sets(layout.op_groups, labels_per_group)?;
    if label_sets.len() != layout.op_groups {
        return Err(Error::config(format!(
            "{labels_per_group} labels per group yields {} operation group(s), {} requested",
            label_sets.len(),
            layout.op_groups
        )));
    }
    let (config_groups, operation_groups) = assign_groups(num_clients, layout)?;
    let per_cell = num_clients / (layout.config_groups * layout.op_groups);

    // Clients competing for each label within one dataset, in ascending order.
    let groups_with: Vec<Vec<usize>> = (0..NUM_CLASSES)
        .map(|label| (0..label_sets.len()).filter(|&g| label_sets[g].contains(&label)).collect())
        .collect();

    let quota = |side: usize| -> Result<usize> {
        let mut q = usize::MAX;
        let mut worst = None;
        for (i, &(train, test)) in splits.iter().enumerate() {
            let ds = if side == 0 { train } else { test };
            let by_class = ds.indices_by_class();
            for (label, groups) in groups_with.iter().enumerate() {
                if groups.is_empty() {
                    continue;
                }
                let available = by_class.get(label).map_or(0, Vec::len);
                let per_client = available / (groups.len() * per_cell);
                if per_client < q {
                    q = per_client;
                    worst = Some((i, label, groups[0], available));
                }
            }
        }
        match worst {
            Some((i, label, group, available)) if q == 0 => Err(Error::Partition(format!(
                "label {label} of operation group {group} has {available} {} samples in configuration group {i}, \
                 fewer than the {} clients that need it",
                if side == 0 { "train" } else { "test" },
                groups_with[label].len() * per_cell
            ))),
            _ => Ok(q),
        }
    };
    let quotas = [quota(0)?, quota(1)?];

    let mut shards = vec![
        Shard {
            train: Vec::new(),
            test: Vec::new()
        };
        num_clients
    ];
    for (i, &(train, test)) in splits.iter().enumerate() {
        for (side, ds) in [train, test].into_iter().enumerate() {
            let by_class = ds.indices_by_class();
            for (label, groups) in groups_with.iter().enumerate() {
                let (cg, og) = (&config_groups, &operation_groups);
                let recipients: Vec<usize> = groups
                    .iter()
                    .flat_map(|&g| (0..num_clients).filter(move |&n| cg[n] == i && og[n] == g))
                    .collect();
                if recipients.is_empty() {
                    continue;
                }
                let mut pool = by_class[label].clone();
                pool.shuffle(&mut rng::stream(
                    seed,
                    &[rng::TAG_PARTITION, i as u64, side as u64, label as u64],
                ));
                for (t, &sample) in pool.iter().take(quotas[side] * recipients.len()).enumerate() {
                    let shard = &mut shards[recipients[t % recipients.len()]];
                    if side == 0 {
                        shard.train.push(sample);
                    } else {
                        shard.test.push(sample);
                    }
                }
            }
        }
    }
    for s in &mut shards {
        s.train.sort_unstable();
        s.test.sort_unstable();
    }
    Ok(PartitionPlan {
        num_clients,
        config_groups,
        operation_groups,
        label_sets,
        shards,
    })
}
