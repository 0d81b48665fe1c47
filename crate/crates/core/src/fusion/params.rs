//! Named trainable arrays and the flat binary checkpoint container.
//!
//! Container layout, all integers little-endian `u32`:
//!
//! ```text
//! "PRO1"
//! repeated until EOF:
//!     name_len, name (UTF-8), ndim, dims[ndim], values (f32 LE, product(dims))
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Rng;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PRO1";

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Parameter {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Handle to a parameter inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered set of named parameters with paired gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    grads: Vec<Vec<f64>>,
    pub init_seed: u64,
}

/// Gradient buffer shaped like a store, filled by backward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.0[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.0[id.0]
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

impl ParameterStore {
    pub fn new(init_seed: u64) -> Self {
        Self {
            params: Vec::new(),
            grads: Vec::new(),
            init_seed,
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], values: Vec<f32>) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Shape(format!("duplicate parameter `{name}`")));
        }
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::Shape(format!(
                "parameter `{name}` of shape {shape:?} given {} values",
                values.len()
            )));
        }
        self.params.push(Parameter {
            name: name.to_owned(),
            shape: shape.to_vec(),
            values,
        });
        self.grads.push(vec![0.0; n]);
        Ok(ParamId(self.params.len() - 1))
    }

    /// Parameter with fan-in scaled normal entries, drawn from its own stream
    /// of the store's seed so every tensor is reproducible in isolation.
    pub fn add_kaiming(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let mut rng = Rng::with_stream(self.init_seed, self.params.len() as u64 + 1);
        let std = (2.0 / fan_in as f64).sqrt();
        let values = (0..n).map(|_| (rng.normal() * std) as f32).collect();
        self.add(name, shape, values)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, shape, vec![0.0; shape.iter().product()])
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.params[id.0].values
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients(self.params.iter().map(|p| vec![0.0; p.len()]).collect())
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    /// Folds a backward pass into the accumulators.
    pub fn accumulate(&mut self, g: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&g.0) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn take_gradients(&mut self) -> Gradients {
        let fresh = self.params.iter().map(|p| vec![0.0; p.len()]).collect();
        Gradients(std::mem::replace(&mut self.grads, fresh))
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        for p in &self.params {
            write_record(out, &p.name, &p.shape, &p.values)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Reads every record of a container into a fresh store.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut store = ParameterStore::new(0);
        for rec in read_records(bytes)? {
            store.add(&rec.name, &rec.shape, rec.values)?;
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Overwrites values from `other`, which must carry the same names and
    /// shapes in the same order.
    pub fn copy_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, network expects {}",
                other.params.len(),
                self.params.len()
            )));
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if mine.name != theirs.name || mine.shape != theirs.shape {
                return Err(Error::Checkpoint(format!(
                    "checkpoint parameter `{}` {:?} does not match `{}` {:?}",
                    theirs.name, theirs.shape, mine.name, mine.shape
                )));
            }
            mine.values.clone_from(&theirs.values);
        }
        Ok(())
    }
}

/// One decoded container record.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn write_record(
    out: &mut impl Write,
    name: &str,
    shape: &[usize],
    values: &[f32],
) -> std::io::Result<()> {
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    out.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_records(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut cur = std::io::Cursor::new(bytes);
    let mut magic = [0u8; 4];
    if cur.read_exact(&mut magic).is_err() || &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("missing PRO1 magic".into()));
    }
    let truncated = |at: u64| Error::Parse {
        offset: at as usize,
        msg: "truncated checkpoint record".into(),
    };
    let mut records = Vec::new();
    while (cur.position() as usize) < bytes.len() {
        let u32_at = |cur: &mut std::io::Cursor<&[u8]>| -> Result<u32> {
            let mut b = [0u8; 4];
            let at = cur.position();
            cur.read_exact(&mut b).map_err(|_| truncated(at))?;
            Ok(u32::from_le_bytes(b))
        };
        let name_len = u32_at(&mut cur)? as usize;
        let at = cur.position();
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name).map_err(|_| truncated(at))?;
        let name = String::from_utf8(name).map_err(|_| Error::Parse {
            offset: at as usize,
            msg: "parameter name is not UTF-8".into(),
        })?;
        let ndim = u32_at(&mut cur)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32_at(&mut cur)? as usize);
        }
        let n: usize = shape.iter().product();
        let at = cur.position();
        if bytes.len() - (at as usize) < 4 * n {
            return Err(truncated(at));
        }
        let mut values = Vec::with_capacity(n);
        let mut b = [0u8; 4];
        for _ in 0..n {
            cur.read_exact(&mut b).map_err(|_| truncated(at))?;
            values.push(f32::from_le_bytes(b));
        }
        records.push(Record {
            name,
            shape,
            values,
        });
    }
    Ok(records)
}
