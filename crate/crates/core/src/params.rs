//! Named parameter traversal shared by the optimizer, gradient checker and
//! checkpoint writer. Gradient buffers use the same type as the parameters
//! they belong to.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub trait Parameters {
    /// Every trainable tensor, in a fixed order, with a dotted name.
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    /// Same structure with every value set to zero.
    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut out = self.clone();
        for (_, t) in out.named_params_mut() {
            t.fill(0.0);
            t.zero_grad();
        }
        out
    }

    fn add_assign(&mut self, other: &Self) {
        let src = other.named_params();
        for ((_, dst), (_, s)) in self.named_params_mut().into_iter().zip(src) {
            for (d, v) in dst.values_mut().iter_mut().zip(s.values()) {
                *d += v;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for (_, t) in self.named_params_mut() {
            t.values_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Name of the first tensor holding a NaN or infinity.
    fn first_non_finite(&self) -> Option<String> {
        self.named_params().into_iter().find(|(_, t)| !t.is_finite()).map(|(n, _)| n)
    }
}

/// A flat list of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedTensors(pub Vec<(String, Tensor)>);

impl NamedTensors {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

impl Parameters for NamedTensors {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.0.iter().map(|(n, t)| (n.clone(), t)).collect()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.0.iter_mut().map(|(n, t)| (n.clone(), t)).collect()
    }
}

/// Copies values from `src` into `dst`, checking names and shapes match.
pub fn load_into<P: Parameters>(dst: &mut P, src: &NamedTensors) -> Result<()> {
    let mut dst_params = dst.named_params_mut();
    if dst_params.len() != src.0.len() {
        return Err(Error::Format(format!(
            "expected {} parameter tensors, found {}",
            dst_params.len(),
            src.0.len()
        )));
    }
    for ((name, t), (src_name, s)) in dst_params.iter_mut().zip(&src.0) {
        if name != src_name || t.shape() != s.shape() {
            return Err(Error::Format(format!(
                "parameter mismatch: expected `{name}` {:?}, found `{src_name}` {:?}",
                t.shape(),
                s.shape()
            )));
        }
        t.values_mut().copy_from_slice(s.values());
    }
    Ok(())
}

pub fn snapshot<P: Parameters>(p: &P) -> NamedTensors {
    NamedTensors(
        p.named_params()
            .into_iter()
            .map(|(n, t)| {
                let mut t = t.clone();
                t.zero_grad();
                (n, t)
            })
            .collect(),
    )
}
