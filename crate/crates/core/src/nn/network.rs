use ndarray::{ArrayD, ArrayView2, Axis, IxDyn};
use rand::Rng;

use super::conv::{col2im, im2col, to_batch_major, to_channel_major, Geometry};
use super::params::{Grads, Owner, ParamStore};
use super::spec::LayerSpec;
use crate::error::{Error, Result};

/// A layer of a built network: its spec, resolved shapes and parameter slots.
#[derive(Debug, Clone)]
pub struct Layer {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    weight: Option<usize>,
    bias: Option<usize>,
}

/// Per-layer data kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
enum Cache {
    None,
    /// Column matrix (convolution) or channel-major input (transposed convolution).
    Matrix(Vec<f64>),
    Argmax(Vec<usize>),
}

/// Activations of every layer from one forward pass. `acts[0]` is the input and
/// `acts[k]` the output of layer `k` (1-based).
#[derive(Debug, Clone)]
pub struct Trace {
    pub acts: Vec<ArrayD<f64>>,
    caches: Vec<Cache>,
}

impl Trace {
    pub fn output(&self) -> &ArrayD<f64> {
        self.acts.last().expect("trace always holds the input")
    }
}

/// A feed-forward chain of layers whose parameters live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Network {
    owner: Owner,
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
}

/// Resolves the output shape of every layer, naming the first incompatible pair.
pub fn infer_shapes(name: &str, layers: &[LayerSpec], input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = Vec::with_capacity(layers.len());
    let mut current = input_shape.to_vec();
    for (k, layer) in layers.iter().enumerate() {
        current = layer.output_shape(&current).map_err(|detail| Error::ShapeMismatch {
            upstream: if k == 0 {
                format!("{name} input {input_shape:?}")
            } else {
                format!("{name} layer {k} ({})", layers[k - 1])
            },
            downstream: format!("{name} layer {} ({layer})", k + 1),
            detail,
        })?;
        shapes.push(current.clone());
    }
    Ok(shapes)
}

impl Network {
    /// Validates the chain and allocates fan-in scaled uniform weights and zero biases.
    pub fn build<R: Rng>(
        owner: Owner,
        layers: &[LayerSpec],
        input_shape: &[usize],
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let shapes = infer_shapes(owner.as_str(), layers, input_shape)?;
        let mut built = Vec::with_capacity(layers.len());
        let mut in_shape = input_shape.to_vec();
        for (k, (spec, out_shape)) in layers.iter().zip(shapes).enumerate() {
            let (weight, bias) = match spec.param_shapes() {
                Some((w_shape, b_shape)) => {
                    let bound = (3.0 / spec.fan_in() as f64).sqrt();
                    let n: usize = w_shape.iter().product();
                    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                    let b = vec![0.0; b_shape.iter().product()];
                    let wi = store.push(format!("{owner}.{}.weight", k + 1), owner, w_shape, w);
                    let bi = store.push(format!("{owner}.{}.bias", k + 1), owner, b_shape, b);
                    (Some(wi), Some(bi))
                }
                None => (None, None),
            };
            built.push(Layer {
                spec: spec.clone(),
                in_shape: in_shape.clone(),
                out_shape: out_shape.clone(),
                weight,
                bias,
            });
            in_shape = out_shape;
        }
        Ok(Network {
            owner,
            layers: built,
            input_shape: input_shape.to_vec(),
        })
    }

    pub fn owner(&self) -> Owner {
        self.owner
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers.last().map_or(&self.input_shape, |l| &l.out_shape)
    }

    /// Shape (excluding batch) of activation `k` (0 = input).
    pub fn act_shape(&self, k: usize) -> &[usize] {
        if k == 0 {
            &self.input_shape
        } else {
            &self.layers[k - 1].out_shape
        }
    }

    fn check_input(&self, x: &ArrayD<f64>) -> Result<()> {
        if x.ndim() == 0 || x.shape()[0] == 0 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch {
                upstream: format!("batch {:?}", x.shape()),
                downstream: format!("{} input", self.owner),
                detail: format!("expected (batch, {:?}) with batch >= 1", self.input_shape),
            });
        }
        Ok(())
    }

    pub fn forward(&self, store: &ParamStore, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        self.check_input(x)?;
        let mut current = standard(x.clone());
        for layer in &self.layers {
            current = layer.forward(store, &current).0;
        }
        Ok(current)
    }

    pub fn forward_trace(&self, store: &ParamStore, x: &ArrayD<f64>) -> Result<Trace> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        acts.push(standard(x.clone()));
        for layer in &self.layers {
            let (y, cache) = layer.forward(store, acts.last().unwrap());
            acts.push(y);
            caches.push(cache);
        }
        Ok(Trace { acts, caches })
    }

    /// Reverse pass. `output_grad` is the gradient at the final output; `injections`
    /// add gradients at intermediate activations (`(k, grad)` targets `acts[k]`).
    /// Parameter gradients of trainable arrays are accumulated into `grads` when given.
    /// Returns the gradient w.r.t. the input when `want_input_grad` is set.
    pub fn backward(
        &self,
        store: &ParamStore,
        trace: &Trace,
        output_grad: Option<ArrayD<f64>>,
        injections: &[(usize, ArrayD<f64>)],
        mut grads: Option<&mut Grads>,
        want_input_grad: bool,
    ) -> Option<ArrayD<f64>> {
        let n = self.layers.len();
        let mut running = output_grad;
        for k in (1..=n).rev() {
            for (idx, g) in injections.iter().filter(|(idx, _)| *idx == k) {
                debug_assert_eq!(*idx, k);
                running = Some(match running {
                    Some(r) => r + g,
                    None => g.clone(),
                });
            }
            let Some(grad) = running.take() else { continue };
            let need_input = k > 1 || want_input_grad;
            let layer = &self.layers[k - 1];
            running = layer.backward(
                store,
                &trace.acts[k - 1],
                &trace.acts[k],
                &trace.caches[k - 1],
                &grad,
                grads.as_deref_mut(),
                need_input,
            );
        }
        if want_input_grad {
            Some(running.unwrap_or_else(|| ArrayD::zeros(trace.acts[0].raw_dim())))
        } else {
            None
        }
    }
}

fn standard(x: ArrayD<f64>) -> ArrayD<f64> {
    if x.is_standard_layout() {
        x
    } else {
        x.as_standard_layout().into_owned()
    }
}

fn slice(x: &ArrayD<f64>) -> &[f64] {
    x.as_slice().expect("activations are kept in standard layout")
}

fn batched(batch: usize, shape: &[usize]) -> IxDyn {
    let mut dims = Vec::with_capacity(shape.len() + 1);
    dims.push(batch);
    dims.extend_from_slice(shape);
    IxDyn(&dims)
}

fn add_into(dst: &mut [f64], src: impl IntoIterator<Item = f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Layer {
    fn conv_geometry(&self) -> Geometry {
        match self.spec {
            LayerSpec::Conv {
                kernel,
                stride,
                padding,
                ..
            } => Geometry::new(self.in_shape[0], self.in_shape[1], self.in_shape[2], kernel, stride, padding),
            // The transposed convolution is the adjoint of a convolution over its output.
            LayerSpec::TrConv {
                kernel,
                stride,
                padding,
                ..
            } => Geometry::new(self.out_shape[0], self.out_shape[1], self.out_shape[2], kernel, stride, padding),
            _ => unreachable!("not a convolution"),
        }
    }

    fn weight<'a>(&self, store: &'a ParamStore, rows: usize, cols: usize) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((rows, cols), store.values(self.weight.unwrap())).expect("weight shape")
    }

    fn forward(&self, store: &ParamStore, x: &ArrayD<f64>) -> (ArrayD<f64>, Cache) {
        let batch = x.shape()[0];
        let out_dim = batched(batch, &self.out_shape);
        match self.spec {
            LayerSpec::Fc { inputs, outputs } => {
                let x2 = ArrayView2::from_shape((batch, inputs), slice(x)).unwrap();
                let w = self.weight(store, outputs, inputs);
                let mut y = x2.dot(&w.t());
                let b = store.values(self.bias.unwrap());
                for mut row in y.rows_mut() {
                    add_into(row.as_slice_mut().unwrap(), b.iter().copied());
                }
                (y.into_dyn(), Cache::None)
            }
            LayerSpec::Conv { out_maps, .. } => {
                let g = self.conv_geometry();
                let cols = im2col(slice(x), batch, &g);
                let cols_view = ArrayView2::from_shape((g.rows(), g.cols(batch)), &cols).unwrap();
                let w = self.weight(store, out_maps, g.rows());
                let y = w.dot(&cols_view);
                let spatial = g.out_h * g.out_w;
                let mut out = to_batch_major(y.as_slice().unwrap(), batch, out_maps, spatial);
                add_bias(&mut out, store.values(self.bias.unwrap()), spatial);
                (ArrayD::from_shape_vec(out_dim, out).unwrap(), Cache::Matrix(cols))
            }
            LayerSpec::TrConv { in_maps, out_maps, .. } => {
                let g = self.conv_geometry();
                let in_spatial = self.in_shape[1] * self.in_shape[2];
                let xm = to_channel_major(slice(x), batch, in_maps, in_spatial);
                let xm_view = ArrayView2::from_shape((in_maps, batch * in_spatial), &xm).unwrap();
                let w = self.weight(store, in_maps, g.rows());
                let cols = w.t().dot(&xm_view);
                let mut out = col2im(cols.as_slice().unwrap(), batch, &g);
                add_bias(&mut out, store.values(self.bias.unwrap()), self.out_shape[1] * self.out_shape[2]);
                debug_assert_eq!(out_maps, self.out_shape[0]);
                (ArrayD::from_shape_vec(out_dim, out).unwrap(), Cache::Matrix(xm))
            }
            LayerSpec::MaxPool { window } => {
                let (c, h, w) = (self.in_shape[0], self.in_shape[1], self.in_shape[2]);
                let (oh, ow) = (self.out_shape[1], self.out_shape[2]);
                let xs = slice(x);
                let mut out = Vec::with_capacity(batch * c * oh * ow);
                let mut argmax = Vec::with_capacity(out.capacity());
                for plane in 0..batch * c {
                    let base = plane * h * w;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = base + oy * window * w + ox * window;
                            for dy in 0..window {
                                for dx in 0..window {
                                    let i = base + (oy * window + dy) * w + ox * window + dx;
                                    if xs[i] > xs[best] {
                                        best = i;
                                    }
                                }
                            }
                            out.push(xs[best]);
                            argmax.push(best);
                        }
                    }
                }
                (ArrayD::from_shape_vec(out_dim, out).unwrap(), Cache::Argmax(argmax))
            }
            LayerSpec::Reshape(_) | LayerSpec::Flatten => (x.clone().into_shape_with_order(out_dim).unwrap(), Cache::None),
            LayerSpec::Relu => (x.mapv(|v| v.max(0.0)), Cache::None),
            LayerSpec::Sigmoid => (x.mapv(sigmoid), Cache::None),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        store: &ParamStore,
        input: &ArrayD<f64>,
        output: &ArrayD<f64>,
        cache: &Cache,
        grad: &ArrayD<f64>,
        grads: Option<&mut Grads>,
        need_input: bool,
    ) -> Option<ArrayD<f64>> {
        let batch = grad.shape()[0];
        let in_dim = batched(batch, &self.in_shape);
        let grad = if grad.is_standard_layout() {
            std::borrow::Cow::Borrowed(grad)
        } else {
            std::borrow::Cow::Owned(grad.as_standard_layout().into_owned())
        };
        let gs = slice(&grad);
        let trainable = grads.is_some() && self.weight.is_some_and(|w| store.is_trainable(w));
        let mut grads = grads;
        match (&self.spec, cache) {
            (&LayerSpec::Fc { inputs, outputs }, _) => {
                let g2 = ArrayView2::from_shape((batch, outputs), gs).unwrap();
                if trainable {
                    let x2 = ArrayView2::from_shape((batch, inputs), slice(input)).unwrap();
                    let dw = g2.t().dot(&x2);
                    add_into(grads.as_deref_mut().unwrap().get_mut(self.weight.unwrap()), dw.iter().copied());
                    add_into(grads.as_deref_mut().unwrap().get_mut(self.bias.unwrap()), g2.sum_axis(Axis(0)));
                }
                need_input.then(|| {
                    let w = self.weight(store, outputs, inputs);
                    g2.dot(&w).into_dyn()
                })
            }
            (&LayerSpec::Conv { out_maps, .. }, Cache::Matrix(cols)) => {
                let g = self.conv_geometry();
                let spatial = g.out_h * g.out_w;
                let gm = to_channel_major(gs, batch, out_maps, spatial);
                let gm = ArrayView2::from_shape((out_maps, batch * spatial), &gm).unwrap();
                if trainable {
                    let cols = ArrayView2::from_shape((g.rows(), g.cols(batch)), cols).unwrap();
                    let dw = gm.dot(&cols.t());
                    add_into(grads.as_deref_mut().unwrap().get_mut(self.weight.unwrap()), dw.iter().copied());
                    add_into(grads.as_deref_mut().unwrap().get_mut(self.bias.unwrap()), gm.sum_axis(Axis(1)));
                }
                need_input.then(|| {
                    let w = self.weight(store, out_maps, g.rows());
                    let dcols = w.t().dot(&gm);
                    let dx = col2im(dcols.as_slice().unwrap(), batch, &g);
                    ArrayD::from_shape_vec(in_dim, dx).unwrap()
                })
            }
            (&LayerSpec::TrConv { in_maps, .. }, Cache::Matrix(xm)) => {
                let g = self.conv_geometry();
                let in_spatial = self.in_shape[1] * self.in_shape[2];
                let dcols = im2col(gs, batch, &g);
                let dcols = ArrayView2::from_shape((g.rows(), batch * in_spatial), &dcols).unwrap();
                if trainable {
                    let xm = ArrayView2::from_shape((in_maps, batch * in_spatial), xm).unwrap();
                    let dw = xm.dot(&dcols.t());
                    add_into(grads.as_deref_mut().unwrap().get_mut(self.weight.unwrap()), dw.iter().copied());
                    let spatial = self.out_shape[1] * self.out_shape[2];
                    let db = grads.as_deref_mut().unwrap().get_mut(self.bias.unwrap());
                    for (plane, chunk) in gs.chunks(spatial).enumerate() {
                        db[plane % self.out_shape[0]] += chunk.iter().sum::<f64>();
                    }
                }
                need_input.then(|| {
                    let w = self.weight(store, in_maps, g.rows());
                    let dxm = w.dot(&dcols);
                    let dx = to_batch_major(dxm.as_slice().unwrap(), batch, in_maps, in_spatial);
                    ArrayD::from_shape_vec(in_dim, dx).unwrap()
                })
            }
            (LayerSpec::MaxPool { .. }, Cache::Argmax(argmax)) => need_input.then(|| {
                let mut dx = vec![0.0; input.len()];
                for (&i, &g) in argmax.iter().zip(gs) {
                    dx[i] += g;
                }
                ArrayD::from_shape_vec(in_dim, dx).unwrap()
            }),
            (LayerSpec::Reshape(_) | LayerSpec::Flatten, _) => {
                need_input.then(|| grad.into_owned().into_shape_with_order(in_dim).unwrap())
            }
            (LayerSpec::Relu, _) => need_input.then(|| {
                let mut dx = grad.into_owned();
                dx.zip_mut_with(output, |d, &y| {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                });
                dx
            }),
            (LayerSpec::Sigmoid, _) => need_input.then(|| {
                let mut dx = grad.into_owned();
                dx.zip_mut_with(output, |d, &y| *d *= y * (1.0 - y));
                dx
            }),
            _ => unreachable!("cache does not match layer kind"),
        }
    }
}

fn add_bias(out: &mut [f64], bias: &[f64], spatial: usize) {
    for (plane, chunk) in out.chunks_mut(spatial).enumerate() {
        let b = bias[plane % bias.len()];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
