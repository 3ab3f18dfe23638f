use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};

/// How a slot is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal(0, std) truncated at two standard deviations.
    TruncNormal(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

impl SlotSpec {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, init: Init) -> Self {
        Self { name: name.into(), rows, cols, init }
    }
}

/// Seed for one slot, derived from the global seed and the slot name so that
/// adding or reordering other slots does not perturb it.
pub fn slot_seed(global_seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn init_values(spec: &SlotSpec, global_seed: u64) -> Vec<f64> {
    let n = spec.rows * spec.cols;
    match spec.init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::TruncNormal(std) => {
            let mut rng = ChaCha8Rng::seed_from_u64(slot_seed(global_seed, &spec.name));
            let normal = Normal::new(0.0, std).expect("positive std");
            (0..n)
                .map(|_| loop {
                    let v: f64 = normal.sample(&mut rng);
                    if v.abs() <= 2.0 * std {
                        break v;
                    }
                })
                .collect()
        }
    }
}

/// Named trainable tensors with a stable iteration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    /// Builds and initializes every slot in `specs` order.
    pub fn init(specs: &[SlotSpec], global_seed: u64) -> Result<Self> {
        let mut store = Self::new();
        for spec in specs {
            let values = init_values(spec, global_seed).into_iter().map(F::lit).collect();
            store.insert(&spec.name, Tensor::from_vec(spec.rows, spec.cols, values)?)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<F>) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter slot `{name}`")));
        }
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn slot_id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: usize) -> &Tensor<F> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor<F> {
        &mut self.tensors[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.slot_id(name).map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.slot_id(name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Grads<F> {
        Grads { tensors: self.tensors.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect() }
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect(), index: self.index.clone() }
    }

    /// Flat coordinate `(slot, offset)` addressing over every scalar.
    pub fn coordinates(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.tensors.iter().enumerate().flat_map(|(s, t)| (0..t.len()).map(move |o| (s, o)))
    }

    pub fn scalar(&self, slot: usize, offset: usize) -> F {
        self.tensors[slot].data()[offset]
    }

    pub fn set_scalar(&mut self, slot: usize, offset: usize, v: F) {
        self.tensors[slot].data_mut()[offset] = v;
    }
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients aligned slot-for-slot with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<F> {
    pub tensors: Vec<Tensor<F>>,
}

impl<F: Real> Grads<F> {
    pub fn get(&self, slot: usize) -> &Tensor<F> {
        &self.tensors[slot]
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"HOMERCK\0";
const CHECKPOINT_VERSION: u16 = 1;

/// Writes `params` as a checkpoint: magic, version, tag, slot count, then per
/// slot `(name, rows, cols, f32 values)`, all little-endian.
pub fn write_checkpoint<F: Real, W: Write>(params: &ParamStore<F>, tag: &str, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    write_str(&mut w, tag)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        write_str(&mut w, name)?;
        w.write_all(&(t.rows() as u32).to_le_bytes())?;
        w.write_all(&(t.cols() as u32).to_le_bytes())?;
        for &v in t.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u16).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0; n];
    r.read_exact(&mut buf).map_err(|e| Error::Invalid(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    Ok(u16::from_le_bytes(read_exact(r, 2)?.try_into().expect("2 bytes")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4)?.try_into().expect("4 bytes")))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u16(r)? as usize;
    String::from_utf8(read_exact(r, n)?).map_err(|_| Error::Invalid("checkpoint string is not utf-8".into()))
}

/// Reads a checkpoint, returning the parameters and the embedded tag.
pub fn read_checkpoint<F: Real, R: Read>(mut r: R) -> Result<(ParamStore<F>, String)> {
    if read_exact(&mut r, 8)? != CHECKPOINT_MAGIC {
        return Err(Error::Invalid("not a checkpoint file".into()));
    }
    let version = read_u16(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Invalid(format!("unsupported checkpoint version {version}")));
    }
    let tag = read_str(&mut r)?;
    let count = read_u32(&mut r)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = read_str(&mut r)?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let raw = read_exact(&mut r, rows * cols * 4)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| F::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        store.insert(&name, Tensor::from_vec(rows, cols, values)?)?;
    }
    Ok((store, tag))
}

/// Draws `n` coordinates uniformly (with replacement) from the flat address space.
pub fn sample_coordinates<F: Real>(params: &ParamStore<F>, n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let total = params.num_scalars();
    if total == 0 {
        return Vec::new();
    }
    let mut starts = Vec::with_capacity(params.len());
    let mut acc = 0;
    for (_, t) in params.iter() {
        starts.push(acc);
        acc += t.len();
    }
    (0..n)
        .map(|_| {
            let flat = rng.gen_range(0..total);
            let slot = starts.partition_point(|&s| s <= flat) - 1;
            (slot, flat - starts[slot])
        })
        .collect()
}

/// Adds uniform noise in `[-scale, scale]` to every scalar, so that zero or
/// constant initial slots take generic values (used for gradient checks).
pub fn jitter<F: Real>(params: &mut ParamStore<F>, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors.iter_mut() {
        for v in t.data_mut() {
            *v += F::lit(rng.gen_range(-scale..=scale));
        }
    }
}
