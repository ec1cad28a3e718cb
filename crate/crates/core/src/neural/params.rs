//! Named parameter tensors: a flat bundle used for SGD updates, checkpoint
//! snapshots, gradient checking and the versioned binary container.
//!
//! Container layout: magic `SSNP0001`, a length-prefixed UTF-8 config
//! descriptor, a tensor table (name, dims), then all values as little-endian
//! f64 in table order. Round trips are bit-exact.

use super::NeuralError;
use std::io::{Read, Write};

const MAGIC: &[u8; 8] = b"SSNP0001";

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered collection of named tensors. Gradient bundles mirror the model's
/// parameter bundle entry for entry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamBundle {
    pub descriptor: String,
    pub tensors: Vec<ParamTensor>,
}

impl ParamBundle {
    pub fn push(&mut self, name: &str, shape: &[usize], values: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.tensors.push(ParamTensor { name: name.to_string(), shape: shape.to_vec(), values });
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Anything holding an ordered set of named parameter tensors. The visit
/// order is fixed and identical between `export` and `import`, and matches
/// the order of gradient bundles produced by the backward passes.
pub trait Parameterized {
    fn export_params(&self) -> ParamBundle;
    fn import_params(&mut self, bundle: &ParamBundle) -> Result<(), NeuralError>;
}

/// θ <- θ - lr * g, entry for entry. The bundles must be congruent.
pub fn sgd_step_bundle(params: &mut ParamBundle, grads: &ParamBundle, lr: f64) -> Result<(), NeuralError> {
    if params.tensors.len() != grads.tensors.len() {
        return Err(NeuralError::Shape(format!(
            "parameter/gradient bundle mismatch: {} vs {} tensors",
            params.tensors.len(),
            grads.tensors.len()
        )));
    }
    for (p, g) in params.tensors.iter_mut().zip(&grads.tensors) {
        if p.name != g.name || p.values.len() != g.values.len() {
            return Err(NeuralError::Shape(format!(
                "gradient tensor {} incongruent with parameter {}",
                g.name, p.name
            )));
        }
        for (pv, gv) in p.values.iter_mut().zip(&g.values) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

pub fn write_params(bundle: &ParamBundle, mut w: impl Write) -> Result<(), NeuralError> {
    w.write_all(MAGIC)?;
    let desc = bundle.descriptor.as_bytes();
    w.write_all(&(desc.len() as u32).to_le_bytes())?;
    w.write_all(desc)?;
    w.write_all(&(bundle.tensors.len() as u32).to_le_bytes())?;
    for t in &bundle.tensors {
        let name = t.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for d in &t.shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
    }
    for t in &bundle.tensors {
        for v in &t.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_params(mut r: impl Read) -> Result<ParamBundle, NeuralError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NeuralError::Container(format!("bad magic {magic:?}")));
    }
    let desc_len = read_u32(&mut r)? as usize;
    let mut desc = vec![0u8; desc_len];
    r.read_exact(&mut desc)?;
    let descriptor = String::from_utf8(desc)
        .map_err(|e| NeuralError::Container(format!("descriptor not UTF-8: {e}")))?;
    let count = read_u32(&mut r)? as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| NeuralError::Container(format!("tensor name not UTF-8: {e}")))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        shapes.push((name, shape));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in shapes {
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        let mut b = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        tensors.push(ParamTensor { name, shape, values });
    }
    Ok(ParamBundle { descriptor, tensors })
}

fn read_u32(r: &mut impl Read) -> Result<u32, NeuralError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
