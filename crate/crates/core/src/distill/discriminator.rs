use candle_core::{DType, Device, Module, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::layers::{group_norm, groups_for, Conv2d};
use crate::nn::{ParamBuilder, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub width: usize,
}

impl DiscriminatorConfig {
    pub fn desk(in_channels: usize) -> Self {
        Self { in_channels, width: 32 }
    }
}

/// Three convolutions, the first two followed by group norm and SiLU;
/// one score per spatial patch.
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    store: ParamStore,
    conv1: Conv2d,
    norm1: candle_nn::GroupNorm,
    conv2: Conv2d,
    norm2: candle_nn::GroupNorm,
    conv3: Conv2d,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let store = ParamStore::new(dtype, device);
        let pb = ParamBuilder::new(&store, seed);
        let w = config.width;
        Ok(Self {
            conv1: Conv2d::new(&pb.pp("conv1"), config.in_channels, w, 3, 1, 1)?,
            norm1: group_norm(&pb.pp("norm1"), w, groups_for(w, 8))?,
            conv2: Conv2d::new(&pb.pp("conv2"), w, w, 3, 2, 1)?,
            norm2: group_norm(&pb.pp("norm2"), w, groups_for(w, 8))?,
            conv3: Conv2d::new(&pb.pp("conv3"), w, 1, 3, 1, 1)?,
            config,
            store,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Patch scores `[B, 1, H', W']`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(&self.conv1.forward(x)?)?.silu()?;
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?.silu()?;
        Ok(self.conv3.forward(&h)?)
    }
}
