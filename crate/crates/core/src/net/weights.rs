//! Named parameter tensors and the `.tsmw` weight file.
//!
//! File layout: `"TSMW"`, version byte (1), entry count as `u32` LE, then per
//! entry a `u16` LE name length, the UTF-8 name, a rank byte, the extents as
//! `u64` LE and the elements as `f32` LE. Entries are written in name order.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{self, Reader};
use crate::error::{Error, Result};
use crate::net::spec::{NetworkSpec, Placement};
use crate::nn::{Conv2dParams, ConvDesc, LinearParams};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"TSMW";
pub const WEIGHTS_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore<F = f32> {
    entries: BTreeMap<String, Tensor<F>>,
}

pub(crate) fn conv_names(prefix: &str) -> (String, String) {
    (format!("{prefix}.weight"), format!("{prefix}.bias"))
}

/// Every parameter tensor a spec needs: `(name, extents, fan_in)`.
pub fn expected_entries(spec: &NetworkSpec) -> Result<Vec<(String, Vec<usize>, usize)>> {
    let shapes = spec.shapes()?;
    let mut out = Vec::new();
    let mut conv = |prefix: String, d: &ConvDesc| {
        let (w, b) = conv_names(&prefix);
        out.push((w, d.weight_extents().to_vec(), d.fan_in()));
        out.push((b, vec![d.c_out], d.fan_in()));
    };
    conv("stem".into(), &spec.stem);
    for (i, block) in spec.blocks.iter().enumerate() {
        conv(format!("blocks.{i}.conv1"), &block.conv1);
        conv(format!("blocks.{i}.conv2"), &block.conv2);
        if let (Placement::Residual, Some(ds)) = (block.placement, &block.downsample) {
            conv(format!("blocks.{i}.downsample"), ds);
        }
    }
    out.push(("head.weight".into(), vec![spec.num_classes(), shapes.head_in], shapes.head_in));
    out.push(("head.bias".into(), vec![spec.num_classes()], shapes.head_in));
    Ok(out)
}

impl<F> WeightStore<F> {
    pub fn new() -> Self {
        WeightStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> Option<Tensor<F>> {
        self.entries.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::spec(format!("no weight named {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn param_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Checks that every tensor the network needs is present with its shape.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        for (name, extents, _) in expected_entries(spec)? {
            let t = self.get(&name)?;
            if t.extents() != extents.as_slice() {
                return Err(Error::spec(format!(
                    "weight {name:?} has extents {:?}, spec needs {extents:?}",
                    t.extents()
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn conv(&self, prefix: &str, d: &ConvDesc) -> Result<Conv2dParams<'_, F>> {
        let (w, b) = conv_names(prefix);
        let params = Conv2dParams::new(self.get(&w)?, self.get(&b)?, d.stride, d.pad)
            .map_err(|e| Error::spec(format!("{prefix}: {e}")))?;
        if params.desc() != *d {
            return Err(Error::spec(format!("{prefix}: weights do not match {d:?}")));
        }
        Ok(params)
    }

    pub(crate) fn linear(&self, prefix: &str) -> Result<LinearParams<'_, F>> {
        let (w, b) = conv_names(prefix);
        LinearParams::new(self.get(&w)?, self.get(&b)?).map_err(|e| Error::spec(format!("{prefix}: {e}")))
    }
}

impl<F: Real> WeightStore<F> {
    /// Seeded initialization: weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = WeightStore::new();
        for (name, extents, fan_in) in expected_entries(spec)? {
            let len = extents.iter().product();
            let data = if name.ends_with(".bias") {
                vec![F::zero(); len]
            } else {
                let a = (6.0 / fan_in as f64).sqrt();
                (0..len).map(|_| F::lit(rng.gen_range(-a..a))).collect()
            };
            store.insert(name, Tensor::unlabeled(extents, data)?);
        }
        Ok(store)
    }

    /// Same names and extents, all zeros.
    pub fn zeros_like(&self) -> Self {
        WeightStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.map(|_| F::zero())))
                .collect(),
        }
    }

    pub fn cast<G: Real>(&self) -> WeightStore<G> {
        WeightStore {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// `self -= lr * grads`, entry by entry.
    pub fn sgd_step(&mut self, grads: &WeightStore<F>, lr: F) -> Result<()> {
        for (name, w) in self.entries.iter_mut() {
            let g = grads.get(name)?;
            if g.extents() != w.extents() {
                return Err(Error::shape(format!("gradient for {name:?} has the wrong shape")));
            }
            for (wv, &gv) in w.data_mut().iter_mut().zip(g.data()) {
                *wv -= lr * gv;
            }
        }
        Ok(())
    }
}

impl WeightStore<f32> {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let count = u32::try_from(self.entries.len()).map_err(|_| Error::shape("too many weight entries"))?;
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.push(WEIGHTS_VERSION);
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.entries {
            let len = u16::try_from(name.len()).map_err(|_| Error::shape(format!("weight name too long: {name}")))?;
            let rank = u8::try_from(t.rank()).map_err(|_| Error::shape("rank above 255"))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &e in t.extents() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            codec::put_f32s(&mut out, t.data());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(WEIGHTS_MAGIC)?;
        r.expect_version(WEIGHTS_VERSION)?;
        let count = r.u32("entry count")?;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let len = r.u16("name length")? as usize;
            let at = r.offset();
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::format(at, "weight name is not UTF-8"))?
                .to_string();
            let at = r.offset();
            let rank = r.u8("rank")? as usize;
            if rank == 0 {
                return Err(Error::format(at, format!("weight {name:?} has rank 0")));
            }
            let (extents, n) = r.extents(rank)?;
            let data = r.f32s(n)?;
            if store.entries.contains_key(&name) {
                return Err(Error::format(at, format!("duplicate weight {name:?}")));
            }
            store.insert(name, Tensor::unlabeled(extents, data)?);
        }
        r.finish()?;
        Ok(store)
    }
}

pub fn save_weights(w: &WeightStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    codec::write_file(path.as_ref(), &w.encode()?)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore<f32>> {
    let path = path.as_ref();
    WeightStore::decode(&codec::read_file(path)?).map_err(|e| e.in_file(path))
}
