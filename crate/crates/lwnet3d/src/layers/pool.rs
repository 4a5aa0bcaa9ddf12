//! Max, average, and global-average pooling over (D, H, W) windows.

use crate::layers::LayerError;
use crate::scalar::Scalar;
use crate::tensor::{Extent3, Stride3, Tensor5};

fn pool_out_extent(input: usize, kernel: usize, stride: usize, ceil_mode: bool) -> Option<usize> {
    if ceil_mode {
        if input == 0 {
            return None;
        }
        Some(if input <= kernel { 1 } else { (input - kernel).div_ceil(stride) + 1 })
    } else {
        if input < kernel {
            return None;
        }
        Some((input - kernel) / stride + 1)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaxPool3 {
    pub kernel: Extent3,
    pub stride: Stride3,
}

impl MaxPool3 {
    pub fn out_shape(&self, x: [usize; 5]) -> Result<[usize; 5], LayerError> {
        let [n, c, d, h, w] = x;
        let od = pool_out_extent(d, self.kernel.d, self.stride.d, false);
        let oh = pool_out_extent(h, self.kernel.h, self.stride.h, false);
        let ow = pool_out_extent(w, self.kernel.w, self.stride.w, false);
        match (od, oh, ow) {
            (Some(od), Some(oh), Some(ow)) => Ok([n, c, od, oh, ow]),
            _ => Err(LayerError::KernelTooLarge),
        }
    }

    /// Returns the pooled tensor and, per output element, the input offset
    /// of its (first-in-scan-order) maximum for gradient routing.
    pub fn forward<T: Scalar>(
        &self,
        x: &Tensor5<T>,
    ) -> Result<(Tensor5<T>, Vec<usize>), LayerError> {
        let out_shape = self.out_shape(x.shape())?;
        let [n, c, od, oh, ow] = out_shape;
        let mut y = Tensor5::zeros(out_shape)?;
        let mut argmax = vec![0usize; y.len()];
        let mut o = 0usize;
        for ni in 0..n {
            for ci in 0..c {
                for odx in 0..od {
                    for ohx in 0..oh {
                        for owx in 0..ow {
                            let mut best = T::neg_infinity();
                            let mut best_off = 0usize;
                            for kd in 0..self.kernel.d {
                                for kh in 0..self.kernel.h {
                                    for kw in 0..self.kernel.w {
                                        let off = x.offset(
                                            ni,
                                            ci,
                                            odx * self.stride.d + kd,
                                            ohx * self.stride.h + kh,
                                            owx * self.stride.w + kw,
                                        );
                                        let v = x.data()[off];
                                        if v > best {
                                            best = v;
                                            best_off = off;
                                        }
                                    }
                                }
                            }
                            y.data_mut()[o] = best;
                            argmax[o] = best_off;
                            o += 1;
                        }
                    }
                }
            }
        }
        Ok((y, argmax))
    }

    pub fn backward<T: Scalar>(
        &self,
        in_shape: [usize; 5],
        argmax: &[usize],
        grad_out: &Tensor5<T>,
    ) -> Result<Tensor5<T>, LayerError> {
        let mut grad_x = Tensor5::zeros(in_shape)?;
        for (o, &off) in argmax.iter().enumerate() {
            grad_x.data_mut()[off] += grad_out.data()[o];
        }
        Ok(grad_x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AvgPool3 {
    pub kernel: Extent3,
    pub stride: Stride3,
    /// Ceil-mode truncates boundary windows to valid elements and divides
    /// by the truncated count. The stride-2 shortcut path uses this so its
    /// output extents match the strided convolution on the main path.
    pub ceil_mode: bool,
}

impl AvgPool3 {
    pub fn out_shape(&self, x: [usize; 5]) -> Result<[usize; 5], LayerError> {
        let [n, c, d, h, w] = x;
        let od = pool_out_extent(d, self.kernel.d, self.stride.d, self.ceil_mode);
        let oh = pool_out_extent(h, self.kernel.h, self.stride.h, self.ceil_mode);
        let ow = pool_out_extent(w, self.kernel.w, self.stride.w, self.ceil_mode);
        match (od, oh, ow) {
            (Some(od), Some(oh), Some(ow)) => Ok([n, c, od, oh, ow]),
            _ => Err(LayerError::KernelTooLarge),
        }
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor5<T>) -> Result<Tensor5<T>, LayerError> {
        let out_shape = self.out_shape(x.shape())?;
        let [n, c, od, oh, ow] = out_shape;
        let [_, _, d, h, w] = x.shape();
        let mut y = Tensor5::zeros(out_shape)?;
        let mut o = 0usize;
        for ni in 0..n {
            for ci in 0..c {
                for odx in 0..od {
                    for ohx in 0..oh {
                        for owx in 0..ow {
                            let dl = (odx * self.stride.d).min(d);
                            let hl = (ohx * self.stride.h).min(h);
                            let wl = (owx * self.stride.w).min(w);
                            let du = (dl + self.kernel.d).min(d);
                            let hu = (hl + self.kernel.h).min(h);
                            let wu = (wl + self.kernel.w).min(w);
                            let count = (du - dl) * (hu - hl) * (wu - wl);
                            let mut acc = T::zero();
                            for id in dl..du {
                                for ih in hl..hu {
                                    for iw in wl..wu {
                                        acc += x.at(ni, ci, id, ih, iw);
                                    }
                                }
                            }
                            y.data_mut()[o] = acc / T::of_f64(count as f64);
                            o += 1;
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward<T: Scalar>(
        &self,
        in_shape: [usize; 5],
        grad_out: &Tensor5<T>,
    ) -> Result<Tensor5<T>, LayerError> {
        let [n, c, od, oh, ow] = grad_out.shape();
        let [_, _, d, h, w] = in_shape;
        let mut grad_x = Tensor5::zeros(in_shape)?;
        let mut o = 0usize;
        for ni in 0..n {
            for ci in 0..c {
                for odx in 0..od {
                    for ohx in 0..oh {
                        for owx in 0..ow {
                            let dl = (odx * self.stride.d).min(d);
                            let hl = (ohx * self.stride.h).min(h);
                            let wl = (owx * self.stride.w).min(w);
                            let du = (dl + self.kernel.d).min(d);
                            let hu = (hl + self.kernel.h).min(h);
                            let wu = (wl + self.kernel.w).min(w);
                            let count = (du - dl) * (hu - hl) * (wu - wl);
                            let g = grad_out.data()[o] / T::of_f64(count as f64);
                            for id in dl..du {
                                for ih in hl..hu {
                                    for iw in wl..wu {
                                        *grad_x.at_mut(ni, ci, id, ih, iw) += g;
                                    }
                                }
                            }
                            o += 1;
                        }
                    }
                }
            }
        }
        Ok(grad_x)
    }
}

/// Global mean over (D, H, W); output shape (N, C, 1, 1, 1).
pub fn adaptive_avgpool<T: Scalar>(x: &Tensor5<T>) -> Result<Tensor5<T>, LayerError> {
    let [n, c, d, h, w] = x.shape();
    if d * h * w == 0 {
        return Err(LayerError::EmptySpatial);
    }
    let vol = T::of_f64((d * h * w) as f64);
    let mut y = Tensor5::zeros([n, c, 1, 1, 1])?;
    for ni in 0..n {
        for ci in 0..c {
            let base = x.offset(ni, ci, 0, 0, 0);
            let acc: T = x.data()[base..base + d * h * w].iter().copied().sum();
            *y.at_mut(ni, ci, 0, 0, 0) = acc / vol;
        }
    }
    Ok(y)
}

pub fn adaptive_avgpool_backward<T: Scalar>(
    in_shape: [usize; 5],
    grad_out: &Tensor5<T>,
) -> Result<Tensor5<T>, LayerError> {
    let [n, c, d, h, w] = in_shape;
    let vol = T::of_f64((d * h * w) as f64);
    let mut grad_x = Tensor5::zeros(in_shape)?;
    for ni in 0..n {
        for ci in 0..c {
            let g = grad_out.at(ni, ci, 0, 0, 0) / vol;
            let base = grad_x.offset(ni, ci, 0, 0, 0);
            grad_x.data_mut()[base..base + d * h * w].fill(g);
        }
    }
    Ok(grad_x)
}
