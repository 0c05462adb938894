use crate::error::{Error, Result};
use crate::nn::ParamSet;

/// Unweighted elementwise mean, accumulated in list order as a running mean
/// so that averaging identical sets returns them bit-for-bit.
pub fn aggregate(weights: &[&ParamSet]) -> Result<ParamSet> {
    let (first, rest) = weights
        .split_first()
        .ok_or_else(|| Error::Protocol("aggregation over an empty list".into()))?;
    let mut mean = (*first).clone();
    for (k, w) in rest.iter().enumerate() {
        mean.ensure_compatible(w, "aggregation")
            .map_err(|e| Error::Protocol(e.to_string()))?;
        let count = (k + 2) as f64;
        for (m, x) in mean.buffers_mut().zip(w.buffers()) {
            for (mi, xi) in m.iter_mut().zip(x) {
                *mi += (xi - *mi) / count;
            }
        }
    }
    Ok(mean)
}

/// [`aggregate`] over `(client id, update)` pairs in ascending client order,
/// whatever order they arrived in.
pub fn aggregate_by_client(updates: &[(usize, &ParamSet)]) -> Result<ParamSet> {
    let mut sorted = updates.to_vec();
    sorted.sort_by_key(|&(id, _)| id);
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Protocol("duplicate client id in aggregation".into()));
    }
    let ordered: Vec<&ParamSet> = sorted.into_iter().map(|(_, p)| p).collect();
    aggregate(&ordered)
}
