//! Named access to learnable parameter buffers.
//!
//! Gradients and optimizer state reuse the parameter types themselves, so a
//! gradient for `AttentionParams` is another `AttentionParams`. Walking two
//! values of the same type yields slots in the same order.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One named buffer with its logical shape.
#[derive(Debug)]
pub struct ParamSlot<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: T,
}

impl<T> ParamSlot<T> {
    pub fn new(name: String, shape: Vec<usize>, data: T) -> Self {
        ParamSlot { name, shape, data }
    }
}

pub trait Parameters {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<ParamSlot<&'a [f64]>>);
    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamSlot<&'a mut [f64]>>);

    fn named(&self) -> Vec<ParamSlot<&[f64]>> {
        let mut out = Vec::new();
        self.slots("", &mut out);
        for s in &mut out {
            if let Some(stripped) = s.name.strip_prefix('.') {
                s.name = stripped.to_string();
            }
        }
        out
    }

    fn named_mut(&mut self) -> Vec<ParamSlot<&mut [f64]>> {
        let mut out = Vec::new();
        self.slots_mut("", &mut out);
        for s in &mut out {
            if let Some(stripped) = s.name.strip_prefix('.') {
                s.name = stripped.to_string();
            }
        }
        out
    }

    fn param_count(&self) -> usize {
        self.named().iter().map(|s| s.data.len()).sum()
    }

    fn fill(&mut self, value: f64) {
        for s in self.named_mut() {
            s.data.iter_mut().for_each(|v| *v = value);
        }
    }

    /// `self += a * other`, slot by slot.
    fn axpy(&mut self, a: f64, other: &Self)
    where
        Self: Sized,
    {
        let src = other.named();
        for (dst, src) in self.named_mut().into_iter().zip(src) {
            debug_assert_eq!(dst.name, src.name);
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += a * s;
            }
        }
    }

    fn scale(&mut self, a: f64) {
        for s in self.named_mut() {
            s.data.iter_mut().for_each(|v| *v *= a);
        }
    }

    fn norm(&self) -> f64 {
        self.named()
            .iter()
            .flat_map(|s| s.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn to_map(&self) -> BTreeMap<String, Vec<f64>> {
        self.named()
            .into_iter()
            .map(|s| (s.name, s.data.to_vec()))
            .collect()
    }

    fn flat(&self) -> Vec<f64> {
        self.named()
            .iter()
            .flat_map(|s| s.data.iter().copied())
            .collect()
    }
}

/// Overwrites every slot of `p` from `(name, values)` pairs; every slot must
/// be present with a matching length.
pub fn assign_named<P: Parameters + ?Sized>(
    p: &mut P,
    values: &[(String, Vec<f64>)],
) -> Result<()> {
    let lookup: BTreeMap<&str, &Vec<f64>> = values.iter().map(|(n, v)| (n.as_str(), v)).collect();
    for slot in p.named_mut() {
        let src = lookup
            .get(slot.name.as_str())
            .ok_or_else(|| Error::Parse(format!("checkpoint lacks parameter {}", slot.name)))?;
        if src.len() != slot.data.len() {
            return Err(Error::Parse(format!(
                "parameter {} has {} values in checkpoint, expected {}",
                slot.name,
                src.len(),
                slot.data.len()
            )));
        }
        slot.data.copy_from_slice(src);
    }
    Ok(())
}

/// Zero-valued copy with the same layout.
pub fn zeros_like<P: Parameters + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.fill(0.0);
    z
}

impl<P: Parameters> Parameters for Vec<P> {
    fn slots<'a>(&'a self, prefix: &str, out: &mut Vec<ParamSlot<&'a [f64]>>) {
        for (i, p) in self.iter().enumerate() {
            p.slots(&format!("{prefix}.{i}"), out);
        }
    }

    fn slots_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamSlot<&'a mut [f64]>>) {
        for (i, p) in self.iter_mut().enumerate() {
            p.slots_mut(&format!("{prefix}.{i}"), out);
        }
    }
}
