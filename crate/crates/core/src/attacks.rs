//! Model-poisoning transforms applied to a malicious client's public upload.
//!
//! All attacks act on parameter-space deltas `theta - theta_g` relative to the
//! previous round's global model.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::client::Upload;
use crate::error::{FedFgError, Result};
use crate::model::PublicModel;
use crate::nn::ParamVector;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AttackKind {
    #[default]
    None,
    /// Sign flipping: `theta' = theta_g - scale * (theta - theta_g)`.
    Sf {
        #[serde(default = "default_sf_scale")]
        scale: f64,
    },
    /// Inner-product manipulation: `theta' = theta_g - epsilon * mean benign delta`.
    Ipm {
        #[serde(default = "default_ipm_epsilon")]
        epsilon: f64,
    },
    /// Fake-client base-model attack: `theta' = theta_g + lambda * (base - theta_g)`.
    Mpaf {
        #[serde(default = "default_mpaf_lambda")]
        lambda: f64,
    },
}

fn default_sf_scale() -> f64 {
    1.0
}

fn default_ipm_epsilon() -> f64 {
    0.5
}

fn default_mpaf_lambda() -> f64 {
    100.0
}

impl AttackKind {
    pub fn sf() -> Self {
        AttackKind::Sf { scale: default_sf_scale() }
    }

    pub fn ipm() -> Self {
        AttackKind::Ipm {
            epsilon: default_ipm_epsilon(),
        }
    }

    pub fn mpaf() -> Self {
        AttackKind::Mpaf {
            lambda: default_mpaf_lambda(),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, AttackKind::None)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AttackKind::None => Ok(()),
            AttackKind::Sf { scale } if !(scale >= 0.0 && scale.is_finite()) => {
                Err(FedFgError::config("attack.scale", "must be a finite number >= 0"))
            }
            AttackKind::Ipm { epsilon } if !(epsilon > 0.0 && epsilon.is_finite()) => {
                Err(FedFgError::config("attack.epsilon", "must be a finite number > 0"))
            }
            AttackKind::Mpaf { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                Err(FedFgError::config("attack.lambda", "must be a finite number > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// When attackers activate and how many there are.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSchedule {
    pub start_round: usize,
    pub malicious_fraction: f64,
}

impl Default for AttackSchedule {
    fn default() -> Self {
        Self {
            start_round: 20,
            malicious_fraction: 0.0,
        }
    }
}

impl AttackSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.malicious_fraction) {
            return Err(FedFgError::config(
                "schedule.malicious_fraction",
                "must lie in [0, 0.5]",
            ));
        }
        Ok(())
    }

    pub fn malicious_count(&self, clients: usize) -> usize {
        (self.malicious_fraction * clients as f64).round() as usize
    }

    pub fn is_active(&self, round: usize) -> bool {
        round >= self.start_round
    }

    /// Malicious ids, fixed for the run and chosen from the attack stream.
    pub fn malicious_set(&self, clients: usize, seed: u64) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..clients).collect();
        ids.shuffle(&mut rng::substream(seed, Stream::Attack, 0, 0));
        let mut chosen: Vec<usize> = ids.into_iter().take(self.malicious_count(clients)).collect();
        chosen.sort_unstable();
        chosen
    }
}

fn delta_map(
    client_id: usize,
    global_prev: &PublicModel,
    source: &PublicModel,
    factor: f64,
) -> Result<Upload> {
    global_prev.ensure_same_layout(source, "attack")?;
    let map = |g: &ParamVector, s: &ParamVector| -> ParamVector {
        let mut out = g.clone();
        if factor == 1.0 {
            out.values_mut().copy_from_slice(s.values());
        } else {
            for (o, &sv) in out.values_mut().iter_mut().zip(s.values()) {
                *o += factor * (sv - *o);
            }
        }
        out
    };
    Ok(Upload::new(
        client_id,
        PublicModel {
            generator: map(&global_prev.generator, &source.generator),
            classifier: map(&global_prev.classifier, &source.classifier),
        },
    ))
}

/// Negates and scales the honest update.
pub fn apply_sf(honest: &Upload, global_prev: &PublicModel, scale: f64) -> Result<Upload> {
    delta_map(honest.client_id, global_prev, &honest.public(), -scale)
}

/// Sends the negated, `epsilon`-scaled mean of the benign updates.
pub fn apply_ipm(client_id: usize, global_prev: &PublicModel, benign: &[&Upload], epsilon: f64) -> Result<Upload> {
    if benign.is_empty() {
        return Err(FedFgError::invalid("IPM needs at least one benign upload"));
    }
    let mut mean = global_prev.zeros_like();
    let w = 1.0 / benign.len() as f64;
    for up in benign {
        mean.axpy(w, &up.public())?;
    }
    delta_map(client_id, global_prev, &mean, -epsilon)
}

/// Pulls the global model towards `base` with amplification `lambda`.
pub fn apply_mpaf(client_id: usize, global_prev: &PublicModel, base: &PublicModel, lambda: f64) -> Result<Upload> {
    delta_map(client_id, global_prev, base, lambda)
}
