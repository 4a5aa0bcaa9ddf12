//! Fully connected layer over (N, C, 1, 1, 1) feature vectors, and the
//! numerically stable log-softmax head.

use crate::layers::LayerError;
use crate::scalar::Scalar;
use crate::tensor::Tensor5;

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// Row-major (out_features x in_features).
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Linear {
            in_features,
            out_features,
            weight: vec![T::zero(); out_features * in_features],
            bias: vec![T::zero(); out_features],
        }
    }

    fn check(&self, x: &Tensor5<T>) -> Result<usize, LayerError> {
        let [n, c, d, h, w] = x.shape();
        if c != self.in_features || d != 1 || h != 1 || w != 1 {
            return Err(LayerError::ShapeMismatch {
                expected: vec![n, self.in_features, 1, 1, 1],
                got: x.shape().to_vec(),
            });
        }
        Ok(n)
    }

    /// y = x W^T + b, row per batch item.
    pub fn forward(&self, x: &Tensor5<T>) -> Result<Tensor5<T>, LayerError> {
        let n = self.check(x)?;
        let mut y = Tensor5::zeros([n, self.out_features, 1, 1, 1])?;
        for ni in 0..n {
            let xrow = &x.data()[ni * self.in_features..(ni + 1) * self.in_features];
            let yrow = &mut y.data_mut()[ni * self.out_features..(ni + 1) * self.out_features];
            for (o, yv) in yrow.iter_mut().enumerate() {
                let wrow = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                let mut acc = self.bias[o];
                for (&xv, &wv) in xrow.iter().zip(wrow) {
                    acc += xv * wv;
                }
                *yv = acc;
            }
        }
        Ok(y)
    }

    /// Returns (grad_x, grad_weight, grad_bias).
    pub fn backward(
        &self,
        x: &Tensor5<T>,
        grad_out: &Tensor5<T>,
    ) -> Result<(Tensor5<T>, Vec<T>, Vec<T>), LayerError> {
        let n = self.check(x)?;
        let mut grad_x = Tensor5::zeros(x.shape())?;
        let mut grad_w = vec![T::zero(); self.weight.len()];
        let mut grad_b = vec![T::zero(); self.bias.len()];
        for ni in 0..n {
            let xrow = &x.data()[ni * self.in_features..(ni + 1) * self.in_features];
            let grow = &grad_out.data()[ni * self.out_features..(ni + 1) * self.out_features];
            let gxrow = &mut grad_x.data_mut()[ni * self.in_features..(ni + 1) * self.in_features];
            for (o, &g) in grow.iter().enumerate() {
                grad_b[o] += g;
                let wrow = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                let gwrow = &mut grad_w[o * self.in_features..(o + 1) * self.in_features];
                for i in 0..self.in_features {
                    gwrow[i] += g * xrow[i];
                    gxrow[i] += g * wrow[i];
                }
            }
        }
        Ok((grad_x, grad_w, grad_b))
    }
}

/// Row-wise log-softmax over the channel axis, computed with
/// max-subtraction for stability.
pub fn log_softmax<T: Scalar>(x: &Tensor5<T>) -> Result<Tensor5<T>, LayerError> {
    let [n, c, d, h, w] = x.shape();
    if d != 1 || h != 1 || w != 1 || c == 0 {
        return Err(LayerError::ShapeMismatch {
            expected: vec![n, c.max(1), 1, 1, 1],
            got: x.shape().to_vec(),
        });
    }
    let mut y = x.clone();
    for ni in 0..n {
        let row = &mut y.data_mut()[ni * c..(ni + 1) * c];
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Ok(y)
}

/// grad_x = grad_y - softmax(x) * sum(grad_y) per row, using the stored
/// forward output.
pub fn log_softmax_backward<T: Scalar>(
    y: &Tensor5<T>,
    grad_out: &Tensor5<T>,
) -> Result<Tensor5<T>, LayerError> {
    let [n, c, _, _, _] = y.shape();
    let mut grad_x = grad_out.clone();
    for ni in 0..n {
        let yrow = &y.data()[ni * c..(ni + 1) * c];
        let gsum: T = grad_out.data()[ni * c..(ni + 1) * c].iter().copied().sum();
        let grow = &mut grad_x.data_mut()[ni * c..(ni + 1) * c];
        for (g, &yv) in grow.iter_mut().zip(yrow) {
            *g = *g - yv.exp() * gsum;
        }
    }
    Ok(grad_x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_constant_maps() {
        let mut lin = Linear::<f64>::new(3, 3);
        for i in 0..3 {
            lin.weight[i * 3 + i] = 1.0;
        }
        let x = Tensor5::from_vec([1, 3, 1, 1, 1], vec![1.5, -2.0, 0.25]).unwrap();
        assert_eq!(lin.forward(&x).unwrap().data(), x.data());

        let mut constant = Linear::<f64>::new(3, 2);
        constant.bias = vec![7.0, -1.0];
        let y = constant.forward(&x).unwrap();
        assert_eq!(y.data(), &[7.0, -1.0]);
    }

    #[test]
    fn log_softmax_symmetry_and_shift_invariance() {
        let x = Tensor5::from_vec([1, 2, 1, 1, 1], vec![0.0f64, 0.0]).unwrap();
        let y = log_softmax(&x).unwrap();
        let ln2 = 2.0f64.ln();
        assert!((y.data()[0] + ln2).abs() < 1e-12);
        assert!((y.data()[1] + ln2).abs() < 1e-12);

        let a = Tensor5::from_vec([1, 3, 1, 1, 1], vec![1.0f64, 2.0, 3.0]).unwrap();
        let b = a.map(|v| v + 1000.0);
        let ya = log_softmax(&a).unwrap();
        let yb = log_softmax(&b).unwrap();
        for (va, vb) in ya.data().iter().zip(yb.data()) {
            assert!((va - vb).abs() < 1e-6);
        }
    }

    #[test]
    fn log_softmax_matches_naive_formula() {
        let x = Tensor5::from_vec([1, 3, 1, 1, 1], vec![1.0f64, 2.0, 3.0]).unwrap();
        let y = log_softmax(&x).unwrap();
        let z: f64 = x.data().iter().map(|v| v.exp()).sum();
        for (i, &v) in y.data().iter().enumerate() {
            assert!((v - (x.data()[i] - z.ln())).abs() < 1e-12);
        }
        let expsum: f64 = y.data().iter().map(|v| v.exp()).sum();
        assert!((expsum - 1.0).abs() < 1e-6);
    }
}
