//! Ablation flags and the hyperparameters of one training run.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BatchNormConfig, ModelSpec};
use crate::training::OptimConfig;

/// The six binary ablation switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Flags {
    /// BN: batch normalization over the logits.
    pub bn_final: bool,
    /// WL: inverse-frequency class weights in the loss.
    pub weighted_loss: bool,
    /// DA: random flips, shifts and brightness on training images.
    pub data_augment: bool,
    /// MX: mixup of training batches.
    pub mixup: bool,
    /// UF: train the pre-existing BN layers instead of freezing them.
    pub unfreeze_bn: bool,
    /// WD: weight decay on dense and convolution weights.
    pub weight_decay: bool,
}

pub const FLAG_NAMES: [&str; 6] = ["bn", "wl", "da", "mx", "uf", "wd"];

impl Flags {
    pub const COUNT: u8 = 64;

    fn bits(&self) -> [bool; 6] {
        [
            self.bn_final,
            self.weighted_loss,
            self.data_augment,
            self.mixup,
            self.unfreeze_bn,
            self.weight_decay,
        ]
    }

    fn from_bits(bits: [bool; 6]) -> Self {
        let [bn_final, weighted_loss, data_augment, mixup, unfreeze_bn, weight_decay] = bits;
        Self {
            bn_final,
            weighted_loss,
            data_augment,
            mixup,
            unfreeze_bn,
            weight_decay,
        }
    }

    /// `BN·32 + WL·16 + DA·8 + MX·4 + UF·2 + WD·1`.
    pub fn config_id(&self) -> u8 {
        self.bits()
            .iter()
            .fold(0u8, |acc, &b| (acc << 1) | u8::from(b))
    }

    pub fn from_config_id(id: u8) -> Result<Self> {
        if id >= Self::COUNT {
            return Err(Error::Config(format!("config id {id} outside 0..63")));
        }
        let mut bits = [false; 6];
        for (k, bit) in bits.iter_mut().enumerate() {
            *bit = id & (1 << (5 - k)) != 0;
        }
        Ok(Self::from_bits(bits))
    }

    /// Parses a comma-separated subset of `bn,wl,da,mx,uf,wd`. An empty
    /// string or `none` means all flags off.
    pub fn parse_list(list: &str) -> Result<Self> {
        let mut bits = [false; 6];
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if name.eq_ignore_ascii_case("none") {
                continue;
            }
            let k = FLAG_NAMES
                .iter()
                .position(|f| f.eq_ignore_ascii_case(name))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown flag '{name}' (expected any of {})",
                        FLAG_NAMES.join(",")
                    ))
                })?;
            bits[k] = true;
        }
        Ok(Self::from_bits(bits))
    }

    pub fn enabled(&self) -> Vec<&'static str> {
        FLAG_NAMES
            .iter()
            .zip(self.bits())
            .filter_map(|(n, b)| b.then_some(*n))
            .collect()
    }

    /// Checkmark columns in `BN,WL,DA,MX,UF,WD` order.
    pub fn checkmarks(&self) -> [&'static str; 6] {
        self.bits().map(|b| if b { "✓" } else { "" })
    }

    pub fn all() -> impl Iterator<Item = Flags> {
        (0..Self::COUNT).map(|id| Self::from_config_id(id).expect("id in range"))
    }
}

impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on = self.enabled();
        if on.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&on.join(","))
        }
    }
}

/// Hyperparameters shared by every grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub optim: OptimConfig,
    pub mixup_alpha: f64,
    pub hidden_size: usize,
    pub dropout: [f64; 2],
    pub batch_norm: BatchNormConfig,
    pub final_bn_learnable: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            optim: OptimConfig::default(),
            mixup_alpha: 0.4,
            hidden_size: 32,
            dropout: [0.25, 0.5],
            batch_norm: BatchNormConfig::default(),
            final_bn_learnable: false,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::Config(format!("mixup_alpha must be positive, got {}", self.mixup_alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub flags: Flags,
    pub hyper: Hyper,
}

impl TrainConfig {
    pub fn new(flags: Flags, hyper: Hyper) -> Self {
        Self { flags, hyper }
    }

    pub fn config_id(&self) -> u8 {
        self.flags.config_id()
    }

    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = ModelSpec::desk_scale(self.flags.bn_final);
        spec.hidden_size = self.hyper.hidden_size;
        spec.dropout = self.hyper.dropout;
        spec.batch_norm = self.hyper.batch_norm;
        spec.final_bn_learnable = self.hyper.final_bn_learnable;
        spec
    }
}
