//! 3-D convolution (cross-correlation, bias-free) with grouped kernels.
//!
//! `groups == in_channels == out_channels` gives the depthwise case,
//! kernel (1,1,1) with one group gives the pointwise case. The main path
//! gathers padded input patches into a matrix and multiplies; the
//! nested-loop reference is kept as an always-available oracle.

use crate::layers::matmul::{matmul_nn, matmul_nt, matmul_tn};
use crate::layers::LayerError;
use crate::scalar::Scalar;
use crate::tensor::{Extent3, Stride3, Tensor5};

#[derive(Debug, Clone)]
pub struct Conv3<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Extent3,
    pub stride: Stride3,
    pub padding: Extent3,
    pub groups: usize,
    /// (out_channels, in_channels/groups, kD, kH, kW)
    pub weight: Tensor5<T>,
}

pub fn conv_out_extent(input: usize, pad: usize, kernel: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl<T: Scalar> Conv3<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: Extent3,
        stride: Stride3,
        padding: Extent3,
        groups: usize,
    ) -> Self {
        assert!(groups >= 1 && in_channels % groups == 0 && out_channels % groups == 0);
        let weight =
            Tensor5::zeros([out_channels, in_channels / groups, kernel.d, kernel.h, kernel.w])
                .expect("weight shape");
        Conv3 { in_channels, out_channels, kernel, stride, padding, groups, weight }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len()
    }

    pub fn out_shape(&self, x: [usize; 5]) -> Result<[usize; 5], LayerError> {
        let [n, c, d, h, w] = x;
        if c != self.in_channels {
            return Err(LayerError::ChannelMismatch { expected: self.in_channels, got: c });
        }
        let od = conv_out_extent(d, self.padding.d, self.kernel.d, self.stride.d);
        let oh = conv_out_extent(h, self.padding.h, self.kernel.h, self.stride.h);
        let ow = conv_out_extent(w, self.padding.w, self.kernel.w, self.stride.w);
        match (od, oh, ow) {
            (Some(od), Some(oh), Some(ow)) => Ok([n, self.out_channels, od, oh, ow]),
            _ => Err(LayerError::KernelTooLarge),
        }
    }

    /// Gather the padded patches of one batch item and one channel group
    /// into a (cg*kvol) x (od*oh*ow) column matrix.
    fn im2col(&self, x: &Tensor5<T>, n: usize, group: usize, out: [usize; 5], cols: &mut [T]) {
        let [_, _, od, oh, ow] = out;
        let [_, _, d, h, w] = x.shape();
        let cg = self.in_channels / self.groups;
        let positions = od * oh * ow;
        let mut row = 0usize;
        for ci in 0..cg {
            let c = group * cg + ci;
            for kd in 0..self.kernel.d {
                for kh in 0..self.kernel.h {
                    for kw in 0..self.kernel.w {
                        let dst = &mut cols[row * positions..(row + 1) * positions];
                        let mut p = 0usize;
                        for odx in 0..od {
                            let id = (odx * self.stride.d + kd) as isize - self.padding.d as isize;
                            if id < 0 || id as usize >= d {
                                dst[p..p + oh * ow].fill(T::zero());
                                p += oh * ow;
                                continue;
                            }
                            for ohx in 0..oh {
                                let ih =
                                    (ohx * self.stride.h + kh) as isize - self.padding.h as isize;
                                if ih < 0 || ih as usize >= h {
                                    dst[p..p + ow].fill(T::zero());
                                    p += ow;
                                    continue;
                                }
                                for owx in 0..ow {
                                    let iw = (owx * self.stride.w + kw) as isize
                                        - self.padding.w as isize;
                                    dst[p] = if iw < 0 || iw as usize >= w {
                                        T::zero()
                                    } else {
                                        x.at(n, c, id as usize, ih as usize, iw as usize)
                                    };
                                    p += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor5<T>) -> Result<Tensor5<T>, LayerError> {
        let out_shape = self.out_shape(x.shape())?;
        let [n, _, od, oh, ow] = out_shape;
        let mut y = Tensor5::zeros(out_shape)?;
        let cg = self.in_channels / self.groups;
        let og = self.out_channels / self.groups;
        let k = cg * self.kernel.volume();
        let positions = od * oh * ow;
        let mut cols = vec![T::zero(); k * positions];
        for ni in 0..n {
            for g in 0..self.groups {
                self.im2col(x, ni, g, out_shape, &mut cols);
                let wmat = &self.weight.data()[g * og * k..(g + 1) * og * k];
                let base = y.offset(ni, g * og, 0, 0, 0);
                let dst = &mut y.data_mut()[base..base + og * positions];
                matmul_nn(dst, wmat, &cols, og, k, positions);
            }
        }
        Ok(y)
    }

    /// Direct six-nested-loop evaluation; correctness oracle for the
    /// gathered-patch path.
    pub fn forward_naive(&self, x: &Tensor5<T>) -> Result<Tensor5<T>, LayerError> {
        let out_shape = self.out_shape(x.shape())?;
        let [n, _, od, oh, ow] = out_shape;
        let [_, _, d, h, w] = x.shape();
        let cg = self.in_channels / self.groups;
        let og = self.out_channels / self.groups;
        let mut y = Tensor5::zeros(out_shape)?;
        for ni in 0..n {
            for o in 0..self.out_channels {
                let g = o / og;
                for odx in 0..od {
                    for ohx in 0..oh {
                        for owx in 0..ow {
                            let mut acc = T::zero();
                            for ci in 0..cg {
                                let c = g * cg + ci;
                                for kd in 0..self.kernel.d {
                                    let id = (odx * self.stride.d + kd) as isize
                                        - self.padding.d as isize;
                                    if id < 0 || id as usize >= d {
                                        continue;
                                    }
                                    for kh in 0..self.kernel.h {
                                        let ih = (ohx * self.stride.h + kh) as isize
                                            - self.padding.h as isize;
                                        if ih < 0 || ih as usize >= h {
                                            continue;
                                        }
                                        for kw in 0..self.kernel.w {
                                            let iw = (owx * self.stride.w + kw) as isize
                                                - self.padding.w as isize;
                                            if iw < 0 || iw as usize >= w {
                                                continue;
                                            }
                                            acc += self.weight.at(o, ci, kd, kh, kw)
                                                * x.at(ni, c, id as usize, ih as usize, iw as usize);
                                        }
                                    }
                                }
                            }
                            *y.at_mut(ni, o, odx, ohx, owx) = acc;
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    /// Gradients of a recorded forward: (d/dx, d/dweight).
    pub fn backward(
        &self,
        x: &Tensor5<T>,
        grad_out: &Tensor5<T>,
    ) -> Result<(Tensor5<T>, Tensor5<T>), LayerError> {
        let out_shape = self.out_shape(x.shape())?;
        if grad_out.shape() != out_shape {
            return Err(LayerError::ShapeMismatch {
                expected: out_shape.to_vec(),
                got: grad_out.shape().to_vec(),
            });
        }
        let [n, _, od, oh, ow] = out_shape;
        let cg = self.in_channels / self.groups;
        let og = self.out_channels / self.groups;
        let k = cg * self.kernel.volume();
        let positions = od * oh * ow;
        let mut grad_x = Tensor5::zeros(x.shape())?;
        let mut grad_w = Tensor5::zeros(self.weight.shape())?;
        let mut cols = vec![T::zero(); k * positions];
        let mut col_grad = vec![T::zero(); k * positions];
        for ni in 0..n {
            for g in 0..self.groups {
                let base = grad_out.offset(ni, g * og, 0, 0, 0);
                let gmat = &grad_out.data()[base..base + og * positions];

                // dW_g += G (og x P) * cols^T (P x K)
                self.im2col(x, ni, g, out_shape, &mut cols);
                let wslice = &mut grad_w.data_mut()[g * og * k..(g + 1) * og * k];
                matmul_nt(wslice, gmat, &cols, og, positions, k);

                // dcols = W^T (K x og) * G (og x P), then scatter back
                col_grad.fill(T::zero());
                let wmat = &self.weight.data()[g * og * k..(g + 1) * og * k];
                matmul_tn(&mut col_grad, wmat, gmat, k, og, positions);
                self.col2im(&col_grad, ni, g, out_shape, &mut grad_x);
            }
        }
        Ok((grad_x, grad_w))
    }

    /// Scatter-add a column-gradient matrix back onto the input positions.
    fn col2im(&self, cols: &[T], n: usize, group: usize, out: [usize; 5], grad_x: &mut Tensor5<T>) {
        let [_, _, od, oh, ow] = out;
        let [_, _, d, h, w] = grad_x.shape();
        let cg = self.in_channels / self.groups;
        let positions = od * oh * ow;
        let mut row = 0usize;
        for ci in 0..cg {
            let c = group * cg + ci;
            for kd in 0..self.kernel.d {
                for kh in 0..self.kernel.h {
                    for kw in 0..self.kernel.w {
                        let src = &cols[row * positions..(row + 1) * positions];
                        let mut p = 0usize;
                        for odx in 0..od {
                            let id = (odx * self.stride.d + kd) as isize - self.padding.d as isize;
                            if id < 0 || id as usize >= d {
                                p += oh * ow;
                                continue;
                            }
                            for ohx in 0..oh {
                                let ih =
                                    (ohx * self.stride.h + kh) as isize - self.padding.h as isize;
                                if ih < 0 || ih as usize >= h {
                                    p += ow;
                                    continue;
                                }
                                for owx in 0..ow {
                                    let iw = (owx * self.stride.w + kw) as isize
                                        - self.padding.w as isize;
                                    if iw >= 0 && (iw as usize) < w {
                                        *grad_x.at_mut(n, c, id as usize, ih as usize, iw as usize) +=
                                            src[p];
                                    }
                                    p += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}
