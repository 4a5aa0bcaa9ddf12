//! Per-channel batch normalization over the (N, D, H, W) population.

use crate::layers::{LayerError, Mode};
use crate::scalar::Scalar;
use crate::tensor::Tensor5;

#[derive(Debug, Clone)]
pub struct BatchNorm3<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub stats_momentum: f64,
}

/// Saved activations for the backward pass of one train-mode forward.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub x_hat: Tensor5<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

impl<T: Scalar> BatchNorm3<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm3 {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: 1e-5,
            stats_momentum: 0.1,
        }
    }

    fn check(&self, x: &Tensor5<T>) -> Result<(), LayerError> {
        let c = x.shape()[1];
        if c != self.channels {
            return Err(LayerError::ChannelMismatch { expected: self.channels, got: c });
        }
        Ok(())
    }

    pub fn forward(
        &mut self,
        x: &Tensor5<T>,
        mode: Mode,
    ) -> Result<(Tensor5<T>, BnCache<T>), LayerError> {
        self.check(x)?;
        let [n, c, d, h, w] = x.shape();
        let pop = n * d * h * w;
        let eps = T::of_f64(self.eps);
        let (mean, var) = match mode {
            Mode::Train => {
                if pop < 2 {
                    return Err(LayerError::DegeneratePopulation(pop));
                }
                let (mean, var) = batch_stats(x);
                // Running averages use the unbiased variance.
                let m = T::of_f64(self.stats_momentum);
                let one_m = T::one() - m;
                let unbias = T::of_f64(pop as f64 / (pop as f64 - 1.0));
                for ci in 0..c {
                    self.running_mean[ci] = one_m * self.running_mean[ci] + m * mean[ci];
                    self.running_var[ci] = one_m * self.running_var[ci] + m * var[ci] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut x_hat = x.clone();
        let mut y = x.clone();
        for off in 0..x.len() {
            let ci = x_hat.unravel(off)[1];
            let xh = (x.data()[off] - mean[ci]) * inv_std[ci];
            x_hat.data_mut()[off] = xh;
            y.data_mut()[off] = self.gamma[ci] * xh + self.beta[ci];
        }
        Ok((y, BnCache { x_hat, inv_std, mode }))
    }

    /// Returns (grad_x, grad_gamma, grad_beta).
    pub fn backward(
        &self,
        cache: &BnCache<T>,
        grad_out: &Tensor5<T>,
    ) -> Result<(Tensor5<T>, Vec<T>, Vec<T>), LayerError> {
        self.check(grad_out)?;
        let [n, c, d, h, w] = grad_out.shape();
        let pop = n * d * h * w;
        let mut grad_gamma = vec![T::zero(); c];
        let mut grad_beta = vec![T::zero(); c];
        for off in 0..grad_out.len() {
            let ci = grad_out.unravel(off)[1];
            grad_gamma[ci] += grad_out.data()[off] * cache.x_hat.data()[off];
            grad_beta[ci] += grad_out.data()[off];
        }
        let mut grad_x = grad_out.clone();
        match cache.mode {
            Mode::Eval => {
                for off in 0..grad_out.len() {
                    let ci = grad_out.unravel(off)[1];
                    grad_x.data_mut()[off] =
                        grad_out.data()[off] * self.gamma[ci] * cache.inv_std[ci];
                }
            }
            Mode::Train => {
                // dx = gamma*inv_std/pop * (pop*dy - sum(dy) - x_hat*sum(dy*x_hat))
                let popt = T::of_f64(pop as f64);
                for off in 0..grad_out.len() {
                    let ci = grad_out.unravel(off)[1];
                    let dy = grad_out.data()[off];
                    let xh = cache.x_hat.data()[off];
                    grad_x.data_mut()[off] = self.gamma[ci] * cache.inv_std[ci] / popt
                        * (popt * dy - grad_beta[ci] - xh * grad_gamma[ci]);
                }
            }
        }
        Ok((grad_x, grad_gamma, grad_beta))
    }
}

fn batch_stats<T: Scalar>(x: &Tensor5<T>) -> (Vec<T>, Vec<T>) {
    let [n, c, d, h, w] = x.shape();
    let pop = T::of_f64((n * d * h * w) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for off in 0..x.len() {
        let ci = x.unravel(off)[1];
        mean[ci] += x.data()[off];
    }
    for m in &mut mean {
        *m /= pop;
    }
    for off in 0..x.len() {
        let ci = x.unravel(off)[1];
        let dev = x.data()[off] - mean[ci];
        var[ci] += dev * dev;
    }
    for v in &mut var {
        *v /= pop;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn train_mode_normalizes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..2 * 3 * 2 * 2 * 2).map(|_| rng.random_range(-4.0..4.0)).collect();
        let x = Tensor5::from_vec([2, 3, 2, 2, 2], data).unwrap();
        let mut bn = BatchNorm3::<f64>::new(3);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        let (mean, var) = batch_stats(&y);
        for c in 0..3 {
            assert!(mean[c].abs() < 1e-5);
            assert!((var[c] - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_gamma_gives_constant_beta() {
        let x = Tensor5::from_vec([1, 1, 1, 1, 4], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let mut bn = BatchNorm3::<f64>::new(1);
        bn.gamma[0] = 0.0;
        bn.beta[0] = 2.5;
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn population_of_one_rejected() {
        let x = Tensor5::<f64>::ones([1, 2, 1, 1, 1]).unwrap();
        let mut bn = BatchNorm3::<f64>::new(2);
        assert!(matches!(
            bn.forward(&x, Mode::Train),
            Err(LayerError::DegeneratePopulation(1))
        ));
        // Eval mode is fine on the same input.
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }
}
