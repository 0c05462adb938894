use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};

/// Client memberships of the configuration groups `C_i` and operation
/// groups `O_j`. Member lists are kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupMap {
    pub config_members: BTreeMap<usize, Vec<usize>>,
    pub op_members: BTreeMap<usize, Vec<usize>>,
}

impl GroupMap {
    /// From per-client group ids; client `n` is `config[n]` / `op[n]`.
    pub fn from_assignment(config: &[usize], op: &[usize]) -> Result<Self> {
        if config.len() != op.len() {
            return Err(Error::Protocol(format!(
                "{} configuration assignments for {} operation assignments",
                config.len(),
                op.len()
            )));
        }
        let mut config_members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut op_members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (n, (&c, &o)) in config.iter().zip(op).enumerate() {
            config_members.entry(c).or_default().push(n);
            op_members.entry(o).or_default().push(n);
        }
        let map = Self {
            config_members,
            op_members,
        };
        map.validate()?;
        Ok(map)
    }

    /// Both families must partition the same client set.
    pub fn validate(&self) -> Result<()> {
        let check = |family: &BTreeMap<usize, Vec<usize>>, what: &str| -> Result<BTreeSet<usize>> {
            let mut seen = BTreeSet::new();
            for (g, members) in family {
                if members.is_empty() {
                    return Err(Error::Protocol(format!("{what} group {g} is empty")));
                }
                if members.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Protocol(format!("{what} group {g} members not sorted and unique")));
                }
                for &n in members {
                    if !seen.insert(n) {
                        return Err(Error::Protocol(format!("client {n} is in two {what} groups")));
                    }
                }
            }
            Ok(seen)
        };
        let a = check(&self.config_members, "configuration")?;
        let b = check(&self.op_members, "operation")?;
        if a != b {
            return Err(Error::Protocol(
                "configuration and operation groups cover different clients".into(),
            ));
        }
        Ok(())
    }

    pub fn num_clients(&self) -> usize {
        self.config_members.values().map(Vec::len).sum()
    }

    pub fn config_group_of(&self, client: usize) -> Option<usize> {
        self.config_members
            .iter()
            .find_map(|(&g, m)| m.binary_search(&client).is_ok().then_some(g))
    }

    pub fn op_group_of(&self, client: usize) -> Option<usize> {
        self.op_members
            .iter()
            .find_map(|(&g, m)| m.binary_search(&client).is_ok().then_some(g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_client_example() {
        // gen1 = {1, 2}, gen2 = {3, 4}; sporty = {1, 3}, couch potato = {2, 4}
        let map = GroupMap::from_assignment(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert_eq!(map.config_members[&0], vec![0, 1]);
        assert_eq!(map.op_members[&0], vec![0, 2]);
        assert_eq!(map.op_group_of(3), Some(1));
        assert_eq!(map.config_group_of(2), Some(1));
    }

    #[test]
    fn overlapping_membership_is_rejected() {
        let mut map = GroupMap::from_assignment(&[0, 0], &[0, 1]).unwrap();
        map.op_members.get_mut(&1).unwrap().push(0);
        map.op_members.get_mut(&1).unwrap().sort();
        assert!(map.validate().is_err());
        let mut map = GroupMap::from_assignment(&[0, 0], &[0, 1]).unwrap();
        map.op_members.remove(&1);
        assert!(map.validate().is_err());
    }
}
