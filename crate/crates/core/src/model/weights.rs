//! Named-tensor container and its binary serialization (SNW1).
//!
//! Format, little-endian: magic `SNW1`; u32 tensor count; per tensor a u16
//! name length, the UTF-8 name, u8 ndim (1 or 2), ndim u32 dims, then
//! dims-product f32 values row-major.

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Real, Vector};
use std::collections::BTreeMap;

/// A named tensor: either a matrix or a vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor<T = f32> {
    Mat(Matrix<T>),
    Vec(Vector<T>),
}

impl<T: Real> Tensor<T> {
    pub fn len(&self) -> usize {
        match self {
            Tensor::Mat(m) => m.rows() * m.cols(),
            Tensor::Vec(v) => v.dim(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[T] {
        match self {
            Tensor::Mat(m) => m.data(),
            Tensor::Vec(v) => v.data(),
        }
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        match self {
            Tensor::Mat(m) => m.data_mut(),
            Tensor::Vec(v) => v.data_mut(),
        }
    }

    /// Shape-checked elementwise `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Tensor<T>, alpha: T) -> Result<()> {
        match (&mut *self, other) {
            (Tensor::Mat(a), Tensor::Mat(b)) => a.add_scaled(b, alpha),
            (Tensor::Vec(a), Tensor::Vec(b)) => a.add_scaled(b, alpha),
            _ => Err(Error::Shape("tensor kind mismatch in add_scaled".into())),
        }
    }
}

/// Immutable-after-load store of named tensors backing all model forwards.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightContainer<T = f32> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> WeightContainer<T> {
    pub fn new() -> Self {
        WeightContainer { map: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn insert_mat(&mut self, name: &str, m: Matrix<T>) {
        self.map.insert(name.to_string(), Tensor::Mat(m));
    }

    pub fn insert_vec(&mut self, name: &str, v: Vector<T>) {
        self.map.insert(name.to_string(), Tensor::Vec(v));
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        self.map.get(name).ok_or_else(|| Error::Shape(format!("missing tensor {name:?}")))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.map.get_mut(name).ok_or_else(|| Error::Shape(format!("missing tensor {name:?}")))
    }

    pub fn mat(&self, name: &str) -> Result<&Matrix<T>> {
        match self.tensor(name)? {
            Tensor::Mat(m) => Ok(m),
            Tensor::Vec(_) => Err(Error::Shape(format!("tensor {name:?} is a vector, expected matrix"))),
        }
    }

    pub fn vec(&self, name: &str) -> Result<&Vector<T>> {
        match self.tensor(name)? {
            Tensor::Vec(v) => Ok(v),
            Tensor::Mat(_) => Err(Error::Shape(format!("tensor {name:?} is a matrix, expected vector"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Total number of scalar parameters across tensors whose name passes the
    /// filter.
    pub fn param_count(&self, filter: impl Fn(&str) -> bool) -> usize {
        self.map.iter().filter(|(n, _)| filter(n)).map(|(_, t)| t.len()).sum()
    }
}

impl WeightContainer<f32> {
    pub fn to_f64(&self) -> WeightContainer<f64> {
        let map = self
            .map
            .iter()
            .map(|(n, t)| {
                let t = match t {
                    Tensor::Mat(m) => Tensor::Mat(m.to_f64()),
                    Tensor::Vec(v) => Tensor::Vec(v.to_f64()),
                };
                (n.clone(), t)
            })
            .collect();
        WeightContainer { map }
    }
}

impl WeightContainer<f64> {
    pub fn to_f32(&self) -> WeightContainer<f32> {
        let map = self
            .map
            .iter()
            .map(|(n, t)| {
                let t = match t {
                    Tensor::Mat(m) => Tensor::Mat(m.to_f32()),
                    Tensor::Vec(v) => Tensor::Vec(v.to_f32()),
                };
                (n.clone(), t)
            })
            .collect();
        WeightContainer { map }
    }
}

const MAGIC: &[u8; 4] = b"SNW1";

/// Serialize a container to SNW1 bytes. Tensors are written in name order,
/// so identical containers always produce identical bytes.
pub fn save_weights(w: &WeightContainer<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(w.map.len() as u32).to_le_bytes());
    for (name, tensor) in &w.map {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        match tensor {
            Tensor::Mat(m) => {
                out.push(2);
                out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
                out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
                for v in m.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Tensor::Vec(v) => {
                out.push(1);
                out.extend_from_slice(&(v.dim() as u32).to_le_bytes());
                for x in v.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!("short {what}: need {n} bytes at offset {}", self.pos))),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let b = self.take(n * 4, what)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

/// Parse SNW1 bytes. Rejects bad magic, truncation, duplicate names,
/// non-finite values, and trailing bytes.
pub fn load_weights(bytes: &[u8]) -> Result<WeightContainer<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "header").map(|m| m != MAGIC).unwrap_or(true) {
        return Err(Error::Format("bad magic: not an SNW1 stream".into()));
    }
    let count = r.u32("tensor count")? as usize;
    let mut out = WeightContainer::new();
    for idx in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name_bytes = r.take(name_len, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("tensor {idx}: name is not UTF-8")))?
            .to_string();
        if out.contains(&name) {
            return Err(Error::Format(format!("duplicate tensor name {name:?}")));
        }
        let ndim = r.u8("ndim")?;
        let tensor = match ndim {
            1 => {
                let dim = r.u32("dim")? as usize;
                let data = r.f32s(dim, "tensor")?;
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("tensor {name:?} contains a non-finite value")));
                }
                Tensor::Vec(Vector::new(data))
            }
            2 => {
                let rows = r.u32("rows")? as usize;
                let cols = r.u32("cols")? as usize;
                let data = r.f32s(rows * cols, "tensor")?;
                Tensor::Mat(Matrix::from_vec(rows, cols, data)?)
            }
            n => return Err(Error::Format(format!("tensor {name:?}: unsupported ndim {n}"))),
        };
        out.map.insert(name, tensor);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after last tensor", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Accumulator for named gradients, mirroring the container's tensor names.
#[derive(Debug, Clone, Default)]
pub struct GradStore<T = f64> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> GradStore<T> {
    pub fn new() -> Self {
        GradStore { map: BTreeMap::new() }
    }

    pub fn mat_mut(&mut self, name: &str, rows: usize, cols: usize) -> &mut Matrix<T> {
        let entry = self
            .map
            .entry(name.to_string())
            .or_insert_with(|| Tensor::Mat(Matrix::zeros(rows, cols)));
        match entry {
            Tensor::Mat(m) => m,
            Tensor::Vec(_) => panic!("gradient {name:?} accumulated as both vector and matrix"),
        }
    }

    pub fn vec_mut(&mut self, name: &str, dim: usize) -> &mut Vector<T> {
        let entry = self.map.entry(name.to_string()).or_insert_with(|| Tensor::Vec(Vector::zeros(dim)));
        match entry {
            Tensor::Vec(v) => v,
            Tensor::Mat(_) => panic!("gradient {name:?} accumulated as both matrix and vector"),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn mat(&self, name: &str) -> Result<&Matrix<T>> {
        match self.map.get(name) {
            Some(Tensor::Mat(m)) => Ok(m),
            Some(Tensor::Vec(_)) => Err(Error::Shape(format!("gradient {name:?} is a vector"))),
            None => Err(Error::Shape(format!("missing gradient {name:?}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// `self += alpha * other`, creating zero tensors for unseen names.
    pub fn merge_scaled(&mut self, other: &GradStore<T>, alpha: T) -> Result<()> {
        for (name, tensor) in &other.map {
            match self.map.get_mut(name) {
                Some(existing) => existing.add_scaled(tensor, alpha)?,
                None => {
                    let mut fresh = tensor.clone();
                    fresh.data_mut().iter_mut().for_each(|v| *v = T::zero());
                    fresh.add_scaled(tensor, alpha)?;
                    self.map.insert(name.clone(), fresh);
                }
            }
        }
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.map.remove(name)
    }

    pub fn rename(&mut self, from: &str, to: &str) {
        if let Some(t) = self.map.remove(from) {
            self.map.insert(to.to_string(), t);
        }
    }
}
