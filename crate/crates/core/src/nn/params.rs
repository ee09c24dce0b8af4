//! Named parameter storage, gradients, Adam, and the checkpoint container.
//!
//! Checkpoint layout (little endian):
//!
//! ```text
//! magic "TVSGCKPT" | version u32 | config_len u64 | config JSON
//! | tensor_count u32 | { name_len u32 | name | rows u64 | cols u64 | f64 × rows·cols }*
//! ```

use std::io::{Read, Write};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TVSGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Adds a `rows × cols` parameter drawn from N(0, std²).
    pub fn add_normal(&mut self, name: impl Into<String>, rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> ParamId {
        let normal = Normal::new(0.0, std).expect("finite std");
        let value = Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng));
        self.add(name, value)
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn write_tensors(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(&(self.values.len() as u32).to_le_bytes())?;
        for (name, value) in self.names.iter().zip(&self.values) {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(value.nrows() as u64).to_le_bytes())?;
            out.write_all(&(value.ncols() as u64).to_le_bytes())?;
            for v in value.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads tensors and assigns them by name; every stored parameter must be
    /// present with a matching shape.
    pub fn read_tensors(&mut self, input: &mut impl Read) -> Result<(), CheckpointError> {
        let count = read_u32(input)? as usize;
        let mut seen = vec![false; self.values.len()];
        for _ in 0..count {
            let name_len = read_u32(input)? as usize;
            let mut name = vec![0u8; name_len];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?;
            let rows = read_u64(input)? as usize;
            let cols = read_u64(input)? as usize;
            let id = self.find(&name).ok_or_else(|| CheckpointError::UnknownTensor(name.clone()))?;
            if self.values[id.0].dim() != (rows, cols) {
                return Err(CheckpointError::ShapeMismatch { name, expected: self.values[id.0].dim(), found: (rows, cols) });
            }
            let mut buf = [0u8; 8];
            for v in self.values[id.0].iter_mut() {
                input.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            seen[id.0] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(CheckpointError::MissingTensor(self.names[missing].clone()));
        }
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint tensor {0} does not belong to this model")]
    UnknownTensor(String),
    #[error("checkpoint lacks tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
}

/// Writes the container header and config echo.
pub fn write_header(out: &mut impl Write, config_json: &str) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(config_json.len() as u64).to_le_bytes())?;
    out.write_all(config_json.as_bytes())
}

/// Reads the container header, returning the config JSON.
pub fn read_header(input: &mut impl Read) -> Result<String, CheckpointError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = read_u32(input)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let len = read_u64(input)? as usize;
    let mut raw = vec![0u8; len];
    input.read_exact(&mut raw)?;
    String::from_utf8(raw).map_err(|_| CheckpointError::Format("config is not UTF-8".into()))
}

/// One gradient tensor per parameter, aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(Vec<Array2<f64>>);

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self(store.values.iter().map(|v| Array2::zeros(v.dim())).collect())
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.0[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.0[id.0]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.0 {
            *g *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Array2<f64>> = store.values.iter().map(|v| Array2::zeros(v.dim())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, value) in store.values.iter_mut().enumerate() {
            let g = &grads.0[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(value).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        s.add_normal("a", 2, 3, 0.02, &mut rng);
        s.add_normal("b", 1, 4, 0.02, &mut rng);
        s
    }

    #[test]
    fn zero_lr_step_is_identity() {
        let mut s = store();
        let before = s.clone();
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(ParamId(0)).fill(3.5);
        let mut adam = Adam::new(&s, 0.0);
        adam.step(&mut s, &g);
        for id in s.ids() {
            let same = s.value(id).iter().zip(before.value(id).iter()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same);
        }
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut s = store();
        let before = s.value(ParamId(1)).clone();
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(ParamId(1)).fill(1.0);
        Adam::new(&s, 0.1).step(&mut s, &g);
        // the first Adam step has magnitude lr in every coordinate
        for (a, b) in s.value(ParamId(1)).iter().zip(before.iter()) {
            assert!((b - a - 0.1).abs() < 1e-6);
        }
    }

    #[test]
    fn tensors_round_trip_and_shape_checked() {
        let s = store();
        let mut buf = Vec::new();
        s.write_tensors(&mut buf).unwrap();
        let mut fresh = ParamStore::new();
        fresh.add("a", Array2::zeros((2, 3)));
        fresh.add("b", Array2::zeros((1, 4)));
        fresh.read_tensors(&mut buf.as_slice()).unwrap();
        assert_eq!(fresh, s);

        let mut wrong = ParamStore::new();
        wrong.add("a", Array2::zeros((3, 2)));
        wrong.add("b", Array2::zeros((1, 4)));
        assert!(matches!(wrong.read_tensors(&mut buf.as_slice()), Err(CheckpointError::ShapeMismatch { .. })));
    }

    #[test]
    fn header_round_trip() {
        let mut buf = Vec::new();
        write_header(&mut buf, "{\"x\":1}").unwrap();
        assert_eq!(read_header(&mut buf.as_slice()).unwrap(), "{\"x\":1}");
        buf[0] = b'X';
        assert!(matches!(read_header(&mut buf.as_slice()), Err(CheckpointError::Format(_))));
    }
}
