//! Named learnable parameters and the MSWT checkpoint format.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! "MSWT" | version u16 = 1 | record count u32
//! per record: name length u32 | name utf-8 | rank u32 | extents u32 × rank | f32 × Π extents
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MSWT";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::full(shape, 1.0))
    }

    /// Uniform in `±1/√fan_in`.
    pub fn uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor) {
        self.params[id.0].grad.add_assign(grad);
    }

    pub fn scale_grads(&mut self, k: f64) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, self.checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &e in p.value.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in p.value.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Overwrites parameter values from a checkpoint. Every record must match
    /// an existing parameter by name and shape, and every parameter must be
    /// present.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.load_checkpoint_bytes(&bytes)
    }

    pub fn load_checkpoint_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let records = parse_checkpoint(bytes)?;
        if records.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} records, model expects {}",
                records.len(),
                self.params.len()
            )));
        }
        for (name, tensor) in records {
            let id = self
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}`: checkpoint shape {:?}, model shape {:?}",
                    tensor.shape(),
                    p.value.shape()
                )));
            }
            p.value = tensor;
        }
        Ok(())
    }
}

fn read_u32(c: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    c.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))?;
    Ok(u32::from_le_bytes(b))
}

/// Parses checkpoint bytes into `(name, tensor)` records.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < 10 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("missing MSWT magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut c = Cursor::new(bytes);
    c.set_position(6);
    let count = read_u32(&mut c)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut c)? as usize;
        let mut name = vec![0u8; name_len];
        c.read_exact(&mut name)
            .map_err(|_| Error::Checkpoint("truncated name".into()))?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not utf-8".into()))?;
        let rank = read_u32(&mut c)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut c).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 4];
        for _ in 0..n {
            c.read_exact(&mut b)
                .map_err(|_| Error::Checkpoint(format!("truncated values for `{name}`")))?;
            let v = f32::from_le_bytes(b);
            if !v.is_finite() {
                return Err(Error::NonFiniteValue(format!(
                    "checkpoint parameter `{name}`"
                )));
            }
            data.push(v as f64);
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}
