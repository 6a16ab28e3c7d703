//! Named parameter storage with deterministic, order-independent
//! initialization.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// U(-b, b) with b = gain / sqrt(fan_in).
    Uniform { fan_in: usize, gain: f64 },
    Normal { std: f64 },
}

/// Shared map from parameter path to variable.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: Arc<Mutex<BTreeMap<String, Var>>>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(dtype: DType, device: &Device) -> Self {
        Self { vars: Arc::new(Mutex::new(BTreeMap::new())), dtype, device: device.clone() }
    }

    pub fn from_tensors(tensors: BTreeMap<String, Tensor>, dtype: DType, device: &Device) -> Result<Self> {
        let store = Self::new(dtype, device);
        {
            let mut vars = store.vars.lock().unwrap();
            for (name, t) in tensors {
                vars.insert(name, Var::from_tensor(&t.to_dtype(dtype)?.to_device(device)?)?);
            }
        }
        Ok(store)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.lock().unwrap().keys().cloned().collect()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.vars.lock().unwrap().values().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.lock().unwrap().get(name).cloned()
    }

    pub fn num_params(&self) -> usize {
        self.vars.lock().unwrap().values().map(|v| v.elem_count()).sum()
    }

    /// Detached copies of every tensor.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        let vars = self.vars.lock().unwrap();
        vars.iter().map(|(k, v)| Ok((k.clone(), v.as_tensor().detach().copy()?))).collect()
    }

    /// Copies values from `other` into the matching variables.
    pub fn load_from(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let vars = self.vars.lock().unwrap();
        for (name, var) in vars.iter() {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::ShapeMismatch { expected: var.dims().to_vec(), got: t.dims().to_vec() });
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    fn get_or_init(&self, name: &str, shape: &[usize], init: Init, seed: u64) -> Result<Var> {
        let mut vars = self.vars.lock().unwrap();
        if let Some(v) = vars.get(name) {
            if v.dims() != shape {
                return Err(Error::ShapeMismatch { expected: shape.to_vec(), got: v.dims().to_vec() });
            }
            return Ok(v.clone());
        }
        let mut rng = SeededRng::new(seed ^ name_hash(name));
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform { fan_in, gain } => {
                let bound = gain / (fan_in.max(1) as f64).sqrt();
                return self.insert(
                    &mut vars,
                    name,
                    rng.uniform_tensor(shape, -bound, bound, self.dtype, &self.device)?,
                );
            }
            Init::Normal { std } => rng.normal_vec(n).into_iter().map(|v| v * std).collect(),
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        self.insert(&mut vars, name, t)
    }

    fn insert(&self, vars: &mut BTreeMap<String, Var>, name: &str, t: Tensor) -> Result<Var> {
        let var = Var::from_tensor(&t)?;
        vars.insert(name.to_string(), var.clone());
        Ok(var)
    }
}

fn name_hash(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Hands out parameters under a path prefix. Frozen builders return
/// detached tensors, so no gradient ever reaches the stored values.
#[derive(Debug, Clone)]
pub struct ParamBuilder {
    store: ParamStore,
    prefix: String,
    seed: u64,
    frozen: bool,
}

impl ParamBuilder {
    pub fn new(store: &ParamStore, seed: u64) -> Self {
        Self { store: store.clone(), prefix: String::new(), seed, frozen: false }
    }

    pub fn frozen(store: &ParamStore) -> Self {
        Self { store: store.clone(), prefix: String::new(), seed: 0, frozen: true }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn pp(&self, name: impl AsRef<str>) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Self { prefix, ..self.clone() }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }

    pub fn get(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let path = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{}", self.prefix, name) };
        if self.frozen {
            let var = self
                .store
                .get(&path)
                .ok_or_else(|| Error::Checkpoint(format!("frozen parameter {path} not found")))?;
            if var.dims() != shape {
                return Err(Error::ShapeMismatch { expected: shape.to_vec(), got: var.dims().to_vec() });
            }
            return Ok(var.as_tensor().detach());
        }
        Ok(self.store.get_or_init(&path, shape, init, self.seed)?.as_tensor().clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_independent_of_creation_order() {
        let a = ParamStore::new(DType::F32, &Device::Cpu);
        let pa = ParamBuilder::new(&a, 3);
        let x1 = pa.get("x", &[4], Init::Normal { std: 1.0 }).unwrap();
        let _ = pa.get("y", &[4], Init::Normal { std: 1.0 }).unwrap();
        let b = ParamStore::new(DType::F32, &Device::Cpu);
        let pb = ParamBuilder::new(&b, 3);
        let _ = pb.get("y", &[4], Init::Normal { std: 1.0 }).unwrap();
        let x2 = pb.get("x", &[4], Init::Normal { std: 1.0 }).unwrap();
        assert_eq!(x1.to_vec1::<f32>().unwrap(), x2.to_vec1::<f32>().unwrap());
    }

    #[test]
    fn frozen_builder_requires_existing_params() {
        let s = ParamStore::new(DType::F32, &Device::Cpu);
        assert!(ParamBuilder::frozen(&s).get("w", &[2], Init::Zeros).is_err());
        ParamBuilder::new(&s, 0).pp("layer").get("w", &[2], Init::Ones).unwrap();
        let w = ParamBuilder::frozen(&s).pp("layer").get("w", &[2], Init::Zeros).unwrap();
        assert_eq!(w.to_vec1::<f32>().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn shape_conflicts_are_reported() {
        let s = ParamStore::new(DType::F32, &Device::Cpu);
        let pb = ParamBuilder::new(&s, 0);
        pb.get("w", &[2, 3], Init::Zeros).unwrap();
        assert!(pb.get("w", &[3, 2], Init::Zeros).is_err());
    }
}
