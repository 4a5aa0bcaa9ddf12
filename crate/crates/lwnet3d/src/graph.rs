//! Network graphs: sequences and residual branches of named layers, with
//! recorded forward passes replayed in reverse for gradients.

use std::collections::BTreeMap;

use crate::layers::{
    adaptive_avgpool, adaptive_avgpool_backward, log_softmax, log_softmax_backward, AvgPool3,
    BatchNorm3, BnCache, Conv3, LayerError, Linear, MaxPool3, Mode,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor5;

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv3(Conv3<T>),
    BatchNorm(BatchNorm3<T>),
    Relu,
    MaxPool(MaxPool3),
    AvgPool(AvgPool3),
    AdaptiveAvgPool,
    Linear(Linear<T>),
    LogSoftmax,
}

#[derive(Debug, Clone)]
pub enum Node<T> {
    Layer { name: String, layer: Layer<T> },
    Seq(Vec<Node<T>>),
    Residual { main: Box<Node<T>>, shortcut: Box<Node<T>>, post_relu: bool },
}

/// Saved activations of one recorded forward pass.
pub enum Cache<T> {
    Conv(Tensor5<T>),
    Bn(BnCache<T>),
    Relu(Vec<bool>),
    MaxPool([usize; 5], Vec<usize>),
    AvgPool([usize; 5]),
    Adaptive([usize; 5]),
    Linear(Tensor5<T>),
    LogSoftmax(Tensor5<T>),
    Seq(Vec<Cache<T>>),
    Residual { main: Box<Cache<T>>, shortcut: Box<Cache<T>>, relu_mask: Option<Vec<bool>> },
}

/// Parameter gradients keyed by hierarchical name; BTreeMap keeps the
/// iteration order deterministic.
pub type Grads<T> = BTreeMap<String, Vec<T>>;

impl<T: Scalar> Layer<T> {
    fn forward(
        &mut self,
        name: &str,
        x: &Tensor5<T>,
        mode: Mode,
        want_cache: bool,
    ) -> Result<(Tensor5<T>, Option<Cache<T>>), LayerError> {
        let _ = name;
        match self {
            Layer::Conv3(conv) => {
                let y = conv.forward(x)?;
                Ok((y, want_cache.then(|| Cache::Conv(x.clone()))))
            }
            Layer::BatchNorm(bn) => {
                let (y, cache) = bn.forward(x, mode)?;
                Ok((y, want_cache.then_some(Cache::Bn(cache))))
            }
            Layer::Relu => {
                let y = x.map(|v| v.max(T::zero()));
                let cache = want_cache
                    .then(|| Cache::Relu(x.data().iter().map(|&v| v > T::zero()).collect()));
                Ok((y, cache))
            }
            Layer::MaxPool(pool) => {
                let (y, argmax) = pool.forward(x)?;
                Ok((y, want_cache.then(|| Cache::MaxPool(x.shape(), argmax))))
            }
            Layer::AvgPool(pool) => {
                let y = pool.forward(x)?;
                Ok((y, want_cache.then(|| Cache::AvgPool(x.shape()))))
            }
            Layer::AdaptiveAvgPool => {
                let y = adaptive_avgpool(x)?;
                Ok((y, want_cache.then(|| Cache::Adaptive(x.shape()))))
            }
            Layer::Linear(lin) => {
                let y = lin.forward(x)?;
                Ok((y, want_cache.then(|| Cache::Linear(x.clone()))))
            }
            Layer::LogSoftmax => {
                let y = log_softmax(x)?;
                let cache = want_cache.then(|| Cache::LogSoftmax(y.clone()));
                Ok((y, cache))
            }
        }
    }

    fn backward(
        &self,
        name: &str,
        cache: &Cache<T>,
        grad_out: &Tensor5<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor5<T>, LayerError> {
        match (self, cache) {
            (Layer::Conv3(conv), Cache::Conv(x)) => {
                let (gx, gw) = conv.backward(x, grad_out)?;
                grads.insert(format!("{name}.weight"), gw.into_data());
                Ok(gx)
            }
            (Layer::BatchNorm(bn), Cache::Bn(c)) => {
                let (gx, ggamma, gbeta) = bn.backward(c, grad_out)?;
                grads.insert(format!("{name}.gamma"), ggamma);
                grads.insert(format!("{name}.beta"), gbeta);
                Ok(gx)
            }
            (Layer::Relu, Cache::Relu(mask)) => {
                let mut gx = grad_out.clone();
                for (g, &keep) in gx.data_mut().iter_mut().zip(mask) {
                    if !keep {
                        *g = T::zero();
                    }
                }
                Ok(gx)
            }
            (Layer::MaxPool(pool), Cache::MaxPool(in_shape, argmax)) => {
                pool.backward(*in_shape, argmax, grad_out)
            }
            (Layer::AvgPool(pool), Cache::AvgPool(in_shape)) => pool.backward(*in_shape, grad_out),
            (Layer::AdaptiveAvgPool, Cache::Adaptive(in_shape)) => {
                adaptive_avgpool_backward(*in_shape, grad_out)
            }
            (Layer::Linear(lin), Cache::Linear(x)) => {
                let (gx, gw, gb) = lin.backward(x, grad_out)?;
                grads.insert(format!("{name}.weight"), gw);
                grads.insert(format!("{name}.bias"), gb);
                Ok(gx)
            }
            (Layer::LogSoftmax, Cache::LogSoftmax(y)) => log_softmax_backward(y, grad_out),
            _ => panic!("cache does not match layer {name}"),
        }
    }

    pub fn out_shape(&self, x: [usize; 5]) -> Result<[usize; 5], LayerError> {
        match self {
            Layer::Conv3(conv) => conv.out_shape(x),
            Layer::BatchNorm(_) | Layer::Relu | Layer::LogSoftmax => Ok(x),
            Layer::MaxPool(pool) => pool.out_shape(x),
            Layer::AvgPool(pool) => pool.out_shape(x),
            Layer::AdaptiveAvgPool => Ok([x[0], x[1], 1, 1, 1]),
            Layer::Linear(lin) => Ok([x[0], lin.out_features, 1, 1, 1]),
        }
    }
}

impl<T: Scalar> Node<T> {
    pub fn seq(nodes: Vec<Node<T>>) -> Self {
        Node::Seq(nodes)
    }

    pub fn layer(name: impl Into<String>, layer: Layer<T>) -> Self {
        Node::Layer { name: name.into(), layer }
    }

    pub fn forward(
        &mut self,
        x: &Tensor5<T>,
        mode: Mode,
        want_cache: bool,
    ) -> Result<(Tensor5<T>, Option<Cache<T>>), LayerError> {
        match self {
            Node::Layer { name, layer } => layer.forward(name, x, mode, want_cache),
            Node::Seq(nodes) => {
                let mut caches = want_cache.then(Vec::new);
                let mut cur = x.clone();
                for node in nodes {
                    let (y, c) = node.forward(&cur, mode, want_cache)?;
                    cur = y;
                    if let (Some(caches), Some(c)) = (&mut caches, c) {
                        caches.push(c);
                    }
                }
                Ok((cur, caches.map(Cache::Seq)))
            }
            Node::Residual { main, shortcut, post_relu } => {
                let (ym, cm) = main.forward(x, mode, want_cache)?;
                let (ys, cs) = shortcut.forward(x, mode, want_cache)?;
                let mut sum = ym.add(&ys)?;
                let mut relu_mask = None;
                if *post_relu {
                    if want_cache {
                        relu_mask = Some(sum.data().iter().map(|&v| v > T::zero()).collect());
                    }
                    sum = sum.map(|v| v.max(T::zero()));
                }
                let cache = match (cm, cs) {
                    (Some(cm), Some(cs)) => Some(Cache::Residual {
                        main: Box::new(cm),
                        shortcut: Box::new(cs),
                        relu_mask,
                    }),
                    _ => None,
                };
                Ok((sum, cache))
            }
        }
    }

    pub fn backward(
        &self,
        cache: &Cache<T>,
        grad_out: &Tensor5<T>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor5<T>, LayerError> {
        match (self, cache) {
            (Node::Layer { name, layer }, cache) => layer.backward(name, cache, grad_out, grads),
            (Node::Seq(nodes), Cache::Seq(caches)) => {
                let mut grad = grad_out.clone();
                for (node, c) in nodes.iter().zip(caches).rev() {
                    grad = node.backward(c, &grad, grads)?;
                }
                Ok(grad)
            }
            (
                Node::Residual { main, shortcut, post_relu },
                Cache::Residual { main: cm, shortcut: cs, relu_mask },
            ) => {
                let mut grad = grad_out.clone();
                if *post_relu {
                    let mask = relu_mask.as_ref().expect("relu mask recorded");
                    for (g, &keep) in grad.data_mut().iter_mut().zip(mask) {
                        if !keep {
                            *g = T::zero();
                        }
                    }
                }
                let gm = main.backward(cm, &grad, grads)?;
                let gs = shortcut.backward(cs, &grad, grads)?;
                Ok(gm.add(&gs)?)
            }
            _ => panic!("cache does not match node structure"),
        }
    }

    pub fn out_shape(&self, x: [usize; 5]) -> Result<[usize; 5], LayerError> {
        match self {
            Node::Layer { layer, .. } => layer.out_shape(x),
            Node::Seq(nodes) => {
                let mut cur = x;
                for node in nodes {
                    cur = node.out_shape(cur)?;
                }
                Ok(cur)
            }
            Node::Residual { main, shortcut, .. } => {
                let sm = main.out_shape(x)?;
                let ss = shortcut.out_shape(x)?;
                if sm != ss {
                    return Err(LayerError::ShapeMismatch {
                        expected: sm.to_vec(),
                        got: ss.to_vec(),
                    });
                }
                Ok(sm)
            }
        }
    }

    /// Visit every learnable parameter, in construction order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, Vec<usize>, &mut [T])) {
        self.visit_state_impl(false, f)
    }

    /// Visit learnable parameters plus batch-norm running statistics.
    pub fn visit_state(&mut self, f: &mut dyn FnMut(&str, Vec<usize>, &mut [T])) {
        self.visit_state_impl(true, f)
    }

    fn visit_state_impl(&mut self, with_stats: bool, f: &mut dyn FnMut(&str, Vec<usize>, &mut [T])) {
        match self {
            Node::Layer { name, layer } => match layer {
                Layer::Conv3(conv) => {
                    let shape = conv.weight.shape().to_vec();
                    f(&format!("{name}.weight"), shape, conv.weight.data_mut());
                }
                Layer::BatchNorm(bn) => {
                    let c = bn.channels;
                    f(&format!("{name}.gamma"), vec![c], &mut bn.gamma);
                    f(&format!("{name}.beta"), vec![c], &mut bn.beta);
                    if with_stats {
                        f(&format!("{name}.running_mean"), vec![c], &mut bn.running_mean);
                        f(&format!("{name}.running_var"), vec![c], &mut bn.running_var);
                    }
                }
                Layer::Linear(lin) => {
                    f(
                        &format!("{name}.weight"),
                        vec![lin.out_features, lin.in_features],
                        &mut lin.weight,
                    );
                    f(&format!("{name}.bias"), vec![lin.out_features], &mut lin.bias);
                }
                _ => {}
            },
            Node::Seq(nodes) => {
                for node in nodes {
                    node.visit_state_impl(with_stats, f);
                }
            }
            Node::Residual { main, shortcut, .. } => {
                main.visit_state_impl(with_stats, f);
                shortcut.visit_state_impl(with_stats, f);
            }
        }
    }

    /// Walk every named layer with its inferred input/output shapes.
    pub fn visit_shapes(
        &self,
        x: [usize; 5],
        f: &mut dyn FnMut(&str, &Layer<T>, [usize; 5], [usize; 5]),
    ) -> Result<[usize; 5], LayerError> {
        match self {
            Node::Layer { name, layer } => {
                let out = layer.out_shape(x)?;
                f(name, layer, x, out);
                Ok(out)
            }
            Node::Seq(nodes) => {
                let mut cur = x;
                for node in nodes {
                    cur = node.visit_shapes(cur, f)?;
                }
                Ok(cur)
            }
            Node::Residual { main, shortcut, .. } => {
                let sm = main.visit_shapes(x, f)?;
                shortcut.visit_shapes(x, f)?;
                Ok(sm)
            }
        }
    }

    /// Visit every named layer without shape propagation.
    pub fn visit_layers(&self, f: &mut dyn FnMut(&str, &Layer<T>)) {
        match self {
            Node::Layer { name, layer } => f(name, layer),
            Node::Seq(nodes) => {
                for node in nodes {
                    node.visit_layers(f);
                }
            }
            Node::Residual { main, shortcut, .. } => {
                main.visit_layers(f);
                shortcut.visit_layers(f);
            }
        }
    }
}
