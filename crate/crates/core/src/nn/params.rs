use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A model exposing its trainable tensors under stable names, in a fixed order.
pub trait Parameterized<T: Scalar> {
    fn parameters(&self) -> Vec<(String, &Tensor<T>)>;
    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;

    fn num_params(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// FNV-1a over names and raw element bits; changes whenever any parameter changes.
    fn param_hash(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(PRIME);
        };
        for (name, t) in self.parameters() {
            name.bytes().for_each(&mut eat);
            for v in t.data() {
                v.bits().to_le_bytes().into_iter().for_each(&mut eat);
            }
        }
        h
    }

    fn zero_grads(&self) -> Grads<T> {
        Grads {
            entries: self
                .parameters()
                .into_iter()
                .map(|(n, t)| (n, Tensor::zeros(t.shape())))
                .collect(),
        }
    }
}

/// One gradient tensor per parameter, in the owning model's parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.entries.iter().find(|(_, t)| !t.all_finite()) {
            Some((name, _)) => Err(Error::NonFinite(format!("gradient of {name}"))),
            None => Ok(()),
        }
    }

    /// Flattened copy in parameter order.
    pub fn flatten(&self) -> Vec<T> {
        self.entries.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    pub fn scale(&mut self, factor: T) {
        for (_, t) in &mut self.entries {
            t.data_mut().iter_mut().for_each(|v| *v = *v * factor);
        }
    }
}
