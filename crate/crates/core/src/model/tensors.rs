//! Named flat views over parameter groups, used by the optimizer, the
//! checkpoint format and gradient flattening.

use super::backbone::LoraSet;
use super::layers::Linear;

/// `(name, shape, values)`
pub type TensorRef<'a, T> = (String, Vec<usize>, &'a [T]);
pub type TensorMut<'a, T> = (String, Vec<usize>, &'a mut [T]);

pub trait Tensors<T> {
    fn tensors(&self, prefix: &str) -> Vec<TensorRef<'_, T>>;
    fn tensors_mut(&mut self, prefix: &str) -> Vec<TensorMut<'_, T>>;
}

impl<T> Tensors<T> for Linear<T> {
    fn tensors(&self, prefix: &str) -> Vec<TensorRef<'_, T>> {
        vec![
            (format!("{prefix}.weight"), vec![self.dout, self.din], &self.w[..]),
            (format!("{prefix}.bias"), vec![self.dout], &self.b[..]),
        ]
    }

    fn tensors_mut(&mut self, prefix: &str) -> Vec<TensorMut<'_, T>> {
        vec![
            (format!("{prefix}.weight"), vec![self.dout, self.din], &mut self.w[..]),
            (format!("{prefix}.bias"), vec![self.dout], &mut self.b[..]),
        ]
    }
}

impl<T> LoraSet<T> {
    /// Tensors of blocks `from..`.
    pub fn block_tensors(&self, prefix: &str, from: usize) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        for (b, bl) in self.blocks.iter().enumerate().skip(from) {
            for (proj, pair) in [("q", &bl.q), ("v", &bl.v)] {
                out.push((format!("{prefix}.{b}.{proj}.a"), vec![pair.rank, pair.din], &pair.a[..]));
                out.push((format!("{prefix}.{b}.{proj}.b"), vec![pair.dout, pair.rank], &pair.b[..]));
            }
        }
        out
    }

    pub fn block_tensors_mut(&mut self, prefix: &str, from: usize) -> Vec<TensorMut<'_, T>> {
        let mut out = Vec::new();
        for (b, bl) in self.blocks.iter_mut().enumerate().skip(from) {
            for (proj, pair) in [("q", &mut bl.q), ("v", &mut bl.v)] {
                let (r, din, dout) = (pair.rank, pair.din, pair.dout);
                out.push((format!("{prefix}.{b}.{proj}.a"), vec![r, din], &mut pair.a[..]));
                out.push((format!("{prefix}.{b}.{proj}.b"), vec![dout, r], &mut pair.b[..]));
            }
        }
        out
    }
}

impl<T> Tensors<T> for LoraSet<T> {
    fn tensors(&self, prefix: &str) -> Vec<TensorRef<'_, T>> {
        self.block_tensors(prefix, 0)
    }

    fn tensors_mut(&mut self, prefix: &str) -> Vec<TensorMut<'_, T>> {
        self.block_tensors_mut(prefix, 0)
    }
}

/// Concatenation of all values, in tensor order.
pub fn flatten<T: Copy>(tensors: &[TensorRef<'_, T>]) -> Vec<T> {
    tensors.iter().flat_map(|(_, _, v)| v.iter().copied()).collect()
}
