use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Anything holding trainable tensors in a fixed visiting order.
///
/// Gradients use the same type as the parameters they belong to, so
/// optimizers and the gradient checker can pair them positionally.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |t| n += t.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |t| out.extend_from_slice(t.data()));
        out
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if n != flat.len() {
            return Err(Error::shape(format!("expected {n} parameters, got {}", flat.len())));
        }
        let mut offset = 0;
        self.visit_mut(&mut |t| {
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        });
        Ok(())
    }

    fn zero(&mut self) {
        self.visit_mut(&mut |t| t.fill(0.0));
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        self.visit(&mut |t| out.push(t.shape().to_vec()));
        out
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |t| ok &= t.all_finite());
        ok
    }

    /// Multiplies every entry by `factor`.
    fn scale(&mut self, factor: f64) {
        self.visit_mut(&mut |t| t.data_mut().iter_mut().for_each(|x| *x *= factor));
    }

    /// Adds `other` entrywise; shapes must match.
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let flat = other.flatten();
        let mut offset = 0;
        self.visit_mut(&mut |t| {
            let len = t.len();
            for (a, b) in t.data_mut().iter_mut().zip(&flat[offset..offset + len]) {
                *a += b;
            }
            offset += len;
        });
    }
}

impl Parameters for Tensor {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        f(self)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(self)
    }
}

impl<P: Parameters> Parameters for Vec<P> {
    fn visit(&self, f: &mut dyn FnMut(&Tensor)) {
        for p in self {
            p.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for p in self {
            p.visit_mut(f);
        }
    }
}
