use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{adam_step, loss_and_grad, validate_params, AdamState, ParamSet};
use crate::registry::{concatenate, split, ModelSpec, SplitModel};
use crate::rng;

/// Local training hyperparameters shared by every client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 16,
            lr: AdamState::DEFAULT_LR,
        }
    }
}

/// One simulated client.
#[derive(Debug, Clone)]
pub struct ClientRecord {
    pub id: usize,
    pub config_group: usize,
    pub op_group: usize,
    pub arch_id: String,
    pub spec: ModelSpec,
    pub train: Dataset,
    pub test: Dataset,
    /// The modules the client currently holds.
    pub local: SplitModel,
    /// Optimiser state; stays on the client and persists across rounds.
    pub adam: AdamState,
    /// Root of the client's shuffling streams.
    pub seed: u64,
}

impl ClientRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        config_group: usize,
        op_group: usize,
        spec: ModelSpec,
        initial: ParamSet,
        train: Dataset,
        test: Dataset,
        lr: f64,
        seed: u64,
    ) -> Result<Self> {
        if train.sample_shape() != spec.input_shape.as_slice() || test.sample_shape() != spec.input_shape.as_slice() {
            return Err(Error::Protocol(format!(
                "client {id}: data shape {:?} does not fit {} input {:?}",
                train.sample_shape(),
                spec.arch_id,
                spec.input_shape
            )));
        }
        let adam = AdamState::new(&initial, lr);
        let local = split(&spec, initial)?;
        Ok(Self {
            id,
            config_group,
            op_group,
            arch_id: spec.arch_id.clone(),
            spec,
            train,
            test,
            local,
            adam,
            seed,
        })
    }

    /// The full model the client currently holds.
    pub fn model(&self) -> Result<ParamSet> {
        Ok(concatenate(&self.local)?.1)
    }
}

/// Result of one local training call.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client: usize,
    pub config: ParamSet,
    pub operation: ParamSet,
    pub adam: AdamState,
    /// Mean mini-batch loss over the last epoch; `NaN` when no step ran.
    pub train_loss: f64,
}

/// Receives `(w_c, w_o)`, runs `epochs` passes of mini-batch Adam over the
/// client's shard and returns the re-split modules. Does not mutate the client.
pub fn client_update(
    client: &ClientRecord,
    w_c: &ParamSet,
    w_o: &ParamSet,
    train: &TrainConfig,
    round: usize,
) -> Result<ClientUpdate> {
    let mut params = w_c
        .clone()
        .concat(w_o.clone())
        .map_err(|e| Error::Protocol(format!("client {}: {e}", client.id)))?;
    validate_params(&client.spec, &params).map_err(|e| Error::Protocol(format!("client {}: {e}", client.id)))?;
    if train.batch_size == 0 {
        return Err(Error::Protocol("batch size must be positive".into()));
    }
    let mut adam = client.adam.clone();
    let mut last_loss = f64::NAN;
    let n = client.train.len();
    for epoch in 0..train.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(client.seed, &[round as u64, epoch as u64]));
        let mut total = 0.0;
        for chunk in order.chunks(train.batch_size) {
            let (x, y) = client.train.batch(chunk);
            let (loss, grads) = loss_and_grad(&client.spec, &params, &x, &y)?;
            adam_step(&mut params, &grads, &mut adam)?;
            total += loss * chunk.len() as f64;
        }
        last_loss = total / n as f64;
    }
    let split_model = split(&client.spec, params)?;
    Ok(ClientUpdate {
        client: client.id,
        config: split_model.config.params,
        operation: split_model.operation.params,
        adam,
        train_loss: last_loss,
    })
}
