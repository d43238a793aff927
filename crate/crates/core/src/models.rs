//! Predictor with hidden-layer taps, attribute network, linear-softmax head and decoder.

use ndarray::{Array2, Array3, Array4, ArrayD, ArrayView2, Axis, Ix2, Ix4, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::softmax_rows;
use crate::nn::{infer_shapes, parse_layers, LayerSpec, Network, Owner, ParamStore, Trace};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictorSpec {
    pub layers: Vec<LayerSpec>,
    /// (channels, height, width)
    pub input_shape: [usize; 3],
    pub classes: usize,
}

/// Hidden layers of the predictor whose outputs feed the attribute network.
///
/// Index `k` refers to the output of the `k`-th predictor layer (1-based); the
/// final layer produces logits and cannot be tapped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapConfig {
    pub indices: Vec<usize>,
    /// Expected flattened dimension of each tap; checked against the predictor when set.
    pub dims: Option<Vec<usize>>,
}

impl TapConfig {
    pub fn new(indices: Vec<usize>) -> Self {
        TapConfig { indices, dims: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterpreterSpec {
    pub attributes: usize,
    /// Maps the flat tap vector to `attributes` non-negative values; must end in `relu`.
    pub psi_layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderSpec {
    pub layers: Vec<LayerSpec>,
}

/// Everything needed to rebuild a bundle's architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleSpec {
    pub predictor: PredictorSpec,
    pub taps: TapConfig,
    pub interpreter: InterpreterSpec,
    pub decoder: DecoderSpec,
}

impl BundleSpec {
    /// LeNet-style networks for 28×28 grayscale digits: 800-wide tap after the
    /// second convolution block.
    pub fn lenet_mnist(classes: usize, attributes: usize) -> Self {
        let layers = |s: &str| parse_layers(s).expect("preset layers parse");
        BundleSpec {
            predictor: PredictorSpec {
                layers: layers(&format!(
                    "conv(1,20,5,1) relu maxpool(2) conv(20,50,5,1) relu maxpool(2) flatten fc(800,500) relu fc(500,{classes})"
                )),
                input_shape: [1, 28, 28],
                classes,
            },
            taps: TapConfig {
                indices: vec![6],
                dims: Some(vec![800]),
            },
            interpreter: InterpreterSpec {
                attributes,
                psi_layers: layers(&format!(
                    "reshape(50,4,4) conv(50,64,3,1,1) relu maxpool(2) flatten fc(256,{attributes}) relu"
                )),
            },
            decoder: DecoderSpec {
                layers: layers(&format!(
                    "fc({attributes},49) relu reshape(1,7,7) trconv(1,16,4,2,1) relu trconv(16,1,4,2,1)"
                )),
            },
        }
    }

    /// Narrower LeNet-style networks sized for CPU-only runs on 28×28 inputs.
    pub fn lenet_desk(classes: usize, attributes: usize) -> Self {
        let layers = |s: &str| parse_layers(s).expect("preset layers parse");
        BundleSpec {
            predictor: PredictorSpec {
                layers: layers(&format!(
                    "conv(1,8,5,1) relu maxpool(2) conv(8,16,5,1) relu maxpool(2) flatten fc(256,64) relu fc(64,{classes})"
                )),
                input_shape: [1, 28, 28],
                classes,
            },
            taps: TapConfig {
                indices: vec![6],
                dims: Some(vec![256]),
            },
            interpreter: InterpreterSpec {
                attributes,
                psi_layers: layers(&format!("fc(256,64) relu fc(64,{attributes}) relu")),
            },
            decoder: DecoderSpec {
                layers: layers(&format!(
                    "fc({attributes},196) relu reshape(4,7,7) trconv(4,8,4,2,1) relu trconv(8,1,4,2,1)"
                )),
            },
        }
    }

    /// A few hundred parameters on 6×6 inputs; used for gradient checks.
    pub fn toy(classes: usize, attributes: usize) -> Self {
        let layers = |s: &str| parse_layers(s).expect("preset layers parse");
        BundleSpec {
            predictor: PredictorSpec {
                layers: layers(&format!("conv(1,2,3,1) relu maxpool(2) flatten fc(8,{classes})")),
                input_shape: [1, 6, 6],
                classes,
            },
            taps: TapConfig::new(vec![3]),
            interpreter: InterpreterSpec {
                attributes,
                psi_layers: layers(&format!("fc(8,5) relu fc(5,{attributes}) relu")),
            },
            decoder: DecoderSpec {
                layers: layers(&format!("fc({attributes},18) reshape(2,3,3) trconv(2,1,2,2) sigmoid")),
            },
        }
    }

    /// Looks up a named preset.
    pub fn preset(name: &str, classes: usize, attributes: usize) -> Option<Self> {
        match name {
            "lenet-mnist" => Some(Self::lenet_mnist(classes, attributes)),
            "lenet-desk" => Some(Self::lenet_desk(classes, attributes)),
            "toy" => Some(Self::toy(classes, attributes)),
            _ => None,
        }
    }

    pub const PRESETS: &'static [&'static str] = &["lenet-mnist", "lenet-desk", "toy"];
}

/// Outputs of a full forward pass through every component.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub logits: Array2<f64>,
    pub f_probs: Array2<f64>,
    pub taps: Array2<f64>,
    pub phi: Array2<f64>,
    pub g_probs: Array2<f64>,
}

impl Prediction {
    /// Predicted class of f per sample.
    pub fn f_classes(&self) -> Vec<usize> {
        argmax_rows(&self.logits)
    }

    /// Predicted class of g per sample.
    pub fn g_classes(&self) -> Vec<usize> {
        argmax_rows(&self.g_probs)
    }
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(x: &Array2<f64>) -> Vec<usize> {
    x.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Predictor, interpreter and decoder sharing one parameter store.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    spec: BundleSpec,
    predictor: Network,
    psi: Network,
    decoder: Network,
    head: usize,
    tap_dims: Vec<usize>,
    params: ParamStore,
}

/// Builds a bundle with parameters drawn deterministically from `seed`.
pub fn build_bundle(
    predictor_spec: PredictorSpec,
    tap_config: TapConfig,
    interpreter_spec: InterpreterSpec,
    decoder_spec: DecoderSpec,
    seed: u64,
) -> Result<ModelBundle> {
    ModelBundle::build(
        BundleSpec {
            predictor: predictor_spec,
            taps: tap_config,
            interpreter: interpreter_spec,
            decoder: decoder_spec,
        },
        seed,
    )
}

/// Starts the decoder's last weighted layer at zero: reconstruction gradients
/// then reach Φ only once the decoder output correlates with the input, instead
/// of first shrinking every attribute to suppress random reconstructions.
fn zero_output_layer(params: &mut ParamStore, owner: Owner) {
    if let Some(t) = params
        .tensors_mut()
        .iter_mut()
        .rev()
        .find(|t| t.owner == owner && t.name.ends_with(".weight"))
    {
        t.values.iter_mut().for_each(|v| *v = 0.0);
    }
}

impl ModelBundle {
    pub fn build(spec: BundleSpec, seed: u64) -> Result<Self> {
        let tap_dims = validate(&spec)?;
        let total: usize = tap_dims.iter().sum();
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = &spec.predictor;
        let predictor = Network::build(Owner::Predictor, &p.layers, &p.input_shape, &mut params, &mut rng)?;
        let j = spec.interpreter.attributes;
        let psi = Network::build(Owner::Psi, &spec.interpreter.psi_layers, &[total], &mut params, &mut rng)?;
        let bound = (3.0 / j as f64).sqrt();
        let w: Vec<f64> = (0..j * p.classes).map(|_| rng.random_range(-bound..bound)).collect();
        let head = params.push("head.weight".into(), Owner::Head, vec![j, p.classes], w);
        let decoder = Network::build(Owner::Decoder, &spec.decoder.layers, &[j], &mut params, &mut rng)?;
        zero_output_layer(&mut params, Owner::Decoder);
        Ok(ModelBundle {
            spec,
            predictor,
            psi,
            decoder,
            head,
            tap_dims,
            params,
        })
    }

    pub fn spec(&self) -> &BundleSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.spec.predictor.classes
    }

    pub fn attribute_count(&self) -> usize {
        self.spec.interpreter.attributes
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.spec.predictor.input_shape
    }

    pub fn tap_dims(&self) -> &[usize] {
        &self.tap_dims
    }

    /// Width D of the concatenated tap vector.
    pub fn tap_width(&self) -> usize {
        self.tap_dims.iter().sum()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn predictor(&self) -> &Network {
        &self.predictor
    }

    pub fn psi(&self) -> &Network {
        &self.psi
    }

    pub fn decoder(&self) -> &Network {
        &self.decoder
    }

    pub(crate) fn head_index(&self) -> usize {
        self.head
    }

    /// The J×C matrix W of the linear head.
    pub fn head(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.attribute_count(), self.classes()), self.params.values(self.head)).unwrap()
    }

    /// Freezes (or unfreezes) every predictor parameter.
    pub fn freeze_predictor(&mut self, frozen: bool) {
        self.params.set_trainable(Owner::Predictor, !frozen);
    }

    pub fn predictor_frozen(&self) -> bool {
        !self.params.owner_trainable(Owner::Predictor)
    }

    pub(crate) fn check_images(&self, x: &Array4<f64>) -> Result<()> {
        let [c, h, w] = self.input_shape();
        let s = x.shape();
        if s[0] == 0 || s[1..] != [c, h, w] {
            return Err(Error::ShapeMismatch {
                upstream: format!("image batch {s:?}"),
                downstream: "predictor input".into(),
                detail: format!("expected (batch >= 1, {c}, {h}, {w})"),
            });
        }
        Ok(())
    }

    pub(crate) fn trace_predictor(&self, x: &Array4<f64>) -> Result<Trace> {
        self.check_images(x)?;
        self.predictor.forward_trace(&self.params, &x.clone().into_dyn())
    }

    /// Concatenates the flattened tapped activations of a predictor trace.
    pub(crate) fn gather_taps(&self, trace: &Trace) -> Array2<f64> {
        let batch = trace.acts[0].shape()[0];
        let mut out = Array2::zeros((batch, self.tap_width()));
        let mut offset = 0;
        for (&k, &dim) in self.spec.taps.indices.iter().zip(&self.tap_dims) {
            let act = trace.acts[k].view().into_shape_with_order((batch, dim)).unwrap();
            out.slice_mut(ndarray::s![.., offset..offset + dim]).assign(&act);
            offset += dim;
        }
        out
    }

    /// Splits a gradient over the tap vector into per-layer injections.
    pub(crate) fn scatter_taps(&self, grad: &Array2<f64>) -> Vec<(usize, ArrayD<f64>)> {
        let batch = grad.nrows();
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.tap_dims.len());
        for (&k, &dim) in self.spec.taps.indices.iter().zip(&self.tap_dims) {
            let block = grad.slice(ndarray::s![.., offset..offset + dim]).to_owned();
            let mut shape = vec![batch];
            shape.extend_from_slice(self.predictor.act_shape(k));
            out.push((k, block.into_shape_with_order(IxDyn(&shape)).unwrap()));
            offset += dim;
        }
        out
    }

    /// Predictor logits and the concatenated tap vector.
    pub fn forward_with_taps(&self, x: &Array4<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let trace = self.trace_predictor(x)?;
        let taps = self.gather_taps(&trace);
        let logits = to2(trace.acts.last().unwrap().clone());
        Ok((logits, taps))
    }

    fn check_width(&self, what: &str, x: &Array2<f64>, expected: usize) -> Result<()> {
        if x.ncols() != expected || x.nrows() == 0 {
            return Err(Error::ShapeMismatch {
                upstream: format!("{what} batch {:?}", x.shape()),
                downstream: what.to_string(),
                detail: format!("expected width {expected} and at least one row"),
            });
        }
        Ok(())
    }

    /// Attribute activations Φ from a tap batch.
    pub fn attributes(&self, taps: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width("tap vector", taps, self.tap_width())?;
        Ok(to2(self.psi.forward(&self.params, &taps.clone().into_dyn())?))
    }

    pub(crate) fn trace_psi(&self, taps: &Array2<f64>) -> Result<Trace> {
        self.check_width("tap vector", taps, self.tap_width())?;
        self.psi.forward_trace(&self.params, &taps.clone().into_dyn())
    }

    /// Unnormalized interpreter scores ΦW.
    pub fn interpreter_logits(&self, phi: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width("attribute", phi, self.attribute_count())?;
        Ok(phi.dot(&self.head()))
    }

    /// softmax(ΦW), one probability row per sample.
    pub fn interpreter_forward(&self, phi: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.interpreter_logits(phi)?))
    }

    pub fn decode(&self, phi: &Array2<f64>) -> Result<Array4<f64>> {
        self.check_width("attribute", phi, self.attribute_count())?;
        let out = self.decoder.forward(&self.params, &phi.clone().into_dyn())?;
        Ok(out.into_dimensionality::<Ix4>().unwrap())
    }

    pub(crate) fn trace_decoder(&self, phi: &Array2<f64>) -> Result<Trace> {
        self.check_width("attribute", phi, self.attribute_count())?;
        self.decoder.forward_trace(&self.params, &phi.clone().into_dyn())
    }

    /// Runs predictor, attribute network and head on an image batch.
    pub fn predict(&self, x: &Array4<f64>) -> Result<Prediction> {
        let (logits, taps) = self.forward_with_taps(x)?;
        let phi = self.attributes(&taps)?;
        let g_probs = self.interpreter_forward(&phi)?;
        Ok(Prediction {
            f_probs: softmax_rows(&logits),
            logits,
            taps,
            phi,
            g_probs,
        })
    }

    /// Runs [`predict`](Self::predict) over `x` in chunks of `chunk` samples.
    pub fn predict_chunked(&self, x: &Array4<f64>, chunk: usize) -> Result<Prediction> {
        let n = x.shape()[0];
        if n <= chunk {
            return self.predict(x);
        }
        let mut parts = Vec::new();
        for start in (0..n).step_by(chunk) {
            let end = (start + chunk).min(n);
            parts.push(self.predict(&x.slice(ndarray::s![start..end, .., .., ..]).to_owned())?);
        }
        let cat = |f: fn(&Prediction) -> &Array2<f64>| {
            let views: Vec<_> = parts.iter().map(|p| f(p).view()).collect();
            ndarray::concatenate(Axis(0), &views).unwrap()
        };
        Ok(Prediction {
            logits: cat(|p| &p.logits),
            f_probs: cat(|p| &p.f_probs),
            taps: cat(|p| &p.taps),
            phi: cat(|p| &p.phi),
            g_probs: cat(|p| &p.g_probs),
        })
    }

    /// Gradient of `Σ_b grad_phi[b]·Φ(x_b)` with respect to the input images.
    pub fn attribute_input_gradient(&self, x: &Array4<f64>, grad_phi: &Array2<f64>) -> Result<Array4<f64>> {
        let trace = self.trace_predictor(x)?;
        let taps = self.gather_taps(&trace);
        let psi_trace = self.trace_psi(&taps)?;
        let d_taps = self
            .psi
            .backward(&self.params, &psi_trace, Some(grad_phi.clone().into_dyn()), &[], None, true)
            .unwrap();
        let injections = self.scatter_taps(&to2(d_taps));
        let dx = self
            .predictor
            .backward(&self.params, &trace, None, &injections, None, true)
            .unwrap();
        Ok(dx.into_dimensionality::<Ix4>().unwrap())
    }

    /// Φ for a single `(C, H, W)` image.
    pub fn attributes_of(&self, x: &Array3<f64>) -> Result<Vec<f64>> {
        let batch = x.clone().insert_axis(Axis(0));
        let (_, taps) = self.forward_with_taps(&batch)?;
        Ok(self.attributes(&taps)?.row(0).to_vec())
    }
}

pub(crate) fn to2(x: ArrayD<f64>) -> Array2<f64> {
    x.into_dimensionality::<Ix2>().expect("rank-2 activation")
}

/// Checks that the four specs compose; returns the flattened tap dimensions.
fn validate(spec: &BundleSpec) -> Result<Vec<usize>> {
    let p = &spec.predictor;
    if p.classes == 0 {
        return Err(Error::InvalidSpec("class count must be positive".into()));
    }
    if p.layers.is_empty() {
        return Err(Error::InvalidSpec("predictor has no layers".into()));
    }
    let shapes = infer_shapes("predictor", &p.layers, &p.input_shape)?;
    let last = shapes.last().unwrap();
    if last[..] != [p.classes] {
        return Err(Error::ShapeMismatch {
            upstream: format!("predictor layer {} ({})", p.layers.len(), p.layers.last().unwrap()),
            downstream: "class logits".into(),
            detail: format!("produces {last:?}, expected [{}]", p.classes),
        });
    }

    let taps = &spec.taps.indices;
    if taps.is_empty() {
        return Err(Error::InvalidSpec("at least one tap index is required".into()));
    }
    let output_layer = p.layers.len();
    let mut previous = 0;
    for &k in taps {
        if k == 0 || k >= output_layer {
            return Err(Error::InvalidTap {
                index: k,
                reason: format!("hidden layers are 1..={}", output_layer - 1),
            });
        }
        if k <= previous {
            return Err(Error::InvalidTap {
                index: k,
                reason: "tap indices must be strictly increasing".into(),
            });
        }
        previous = k;
    }
    let dims: Vec<usize> = taps.iter().map(|&k| shapes[k - 1].iter().product()).collect();
    if let Some(expected) = &spec.taps.dims {
        if expected != &dims {
            return Err(Error::ShapeMismatch {
                upstream: format!("predictor taps {taps:?}"),
                downstream: "tap configuration".into(),
                detail: format!("layers produce widths {dims:?}, configuration says {expected:?}"),
            });
        }
    }
    let total: usize = dims.iter().sum();

    let interp = &spec.interpreter;
    if interp.attributes == 0 {
        return Err(Error::InvalidSpec("attribute count must be positive".into()));
    }
    if interp.psi_layers.last() != Some(&LayerSpec::Relu) {
        return Err(Error::InvalidSpec(
            "attribute network must end with relu so activations are non-negative".into(),
        ));
    }
    let psi_shapes = infer_shapes("psi", &interp.psi_layers, &[total])?;
    if psi_shapes.last().unwrap()[..] != [interp.attributes] {
        return Err(Error::ShapeMismatch {
            upstream: format!("psi layer {}", interp.psi_layers.len()),
            downstream: "attribute vector".into(),
            detail: format!("produces {:?}, expected [{}]", psi_shapes.last().unwrap(), interp.attributes),
        });
    }

    let dec = &spec.decoder.layers;
    if dec.is_empty() {
        return Err(Error::InvalidSpec("decoder has no layers".into()));
    }
    let dec_shapes = infer_shapes("decoder", dec, &[interp.attributes])?;
    if dec_shapes.last().unwrap()[..] != p.input_shape {
        return Err(Error::ShapeMismatch {
            upstream: format!("decoder layer {} ({})", dec.len(), dec.last().unwrap()),
            downstream: "reconstruction".into(),
            detail: format!("produces {:?}, expected {:?}", dec_shapes.last().unwrap(), p.input_shape),
        });
    }
    Ok(dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand_distr::{Distribution, Uniform};

    fn images(n: usize, shape: [usize; 3], seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(0.0, 1.0).unwrap();
        Array::from_shape_fn((n, shape[0], shape[1], shape[2]), |_| u.sample(&mut rng))
    }

    #[test]
    fn mnist_preset_tap_width() {
        let bundle = ModelBundle::build(BundleSpec::lenet_mnist(10, 25), 0).unwrap();
        assert_eq!(bundle.tap_width(), 800);
        let (logits, taps) = bundle.forward_with_taps(&images(4, [1, 28, 28], 1)).unwrap();
        assert_eq!(logits.dim(), (4, 10));
        assert_eq!(taps.dim(), (4, 800));
    }

    #[test]
    fn output_layer_is_not_a_tap() {
        let mut spec = BundleSpec::lenet_desk(4, 12);
        spec.taps = TapConfig::new(vec![spec.predictor.layers.len()]);
        assert!(matches!(ModelBundle::build(spec, 0), Err(Error::InvalidTap { .. })));
    }

    #[test]
    fn taps_must_increase() {
        let mut spec = BundleSpec::lenet_desk(4, 12);
        spec.taps = TapConfig::new(vec![6, 3]);
        assert!(matches!(ModelBundle::build(spec, 0), Err(Error::InvalidTap { .. })));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = ModelBundle::build(BundleSpec::lenet_desk(4, 12), 7).unwrap();
        let b = ModelBundle::build(BundleSpec::lenet_desk(4, 12), 7).unwrap();
        let c = ModelBundle::build(BundleSpec::lenet_desk(4, 12), 8).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params().digest(), c.params().digest());
    }

    #[test]
    fn two_taps_concatenate_in_order() {
        let mut spec = BundleSpec::lenet_desk(4, 5);
        // Tap after the first pooling (8x12x12) and after the second (16x4x4).
        spec.taps = TapConfig::new(vec![3, 6]);
        spec.interpreter.psi_layers = parse_layers("fc(1408,5) relu").unwrap();
        let bundle = ModelBundle::build(spec, 3).unwrap();
        assert_eq!(bundle.tap_dims(), &[1152, 256]);
        let x = images(2, [1, 28, 28], 4);
        let trace = bundle.trace_predictor(&x).unwrap();
        let (_, taps) = bundle.forward_with_taps(&x).unwrap();
        let first: Vec<f64> = trace.acts[3].index_axis(Axis(0), 1).iter().copied().collect();
        let second: Vec<f64> = trace.acts[6].index_axis(Axis(0), 1).iter().copied().collect();
        assert_eq!(taps.row(1).slice(ndarray::s![..1152]).to_vec(), first);
        assert_eq!(taps.row(1).slice(ndarray::s![1152..]).to_vec(), second);
    }

    #[test]
    fn duplicated_sample_gives_identical_rows() {
        let bundle = ModelBundle::build(BundleSpec::lenet_desk(4, 12), 1).unwrap();
        let one = images(1, [1, 28, 28], 9);
        let x = ndarray::concatenate(Axis(0), &[one.view(), one.view()]).unwrap();
        let p = bundle.predict(&x).unwrap();
        assert_eq!(p.logits.row(0), p.logits.row(1));
        assert_eq!(p.taps.row(0), p.taps.row(1));
        assert_eq!(p.phi.row(0), p.phi.row(1));
    }

    #[test]
    fn attributes_are_non_negative_and_width_checked() {
        let bundle = ModelBundle::build(BundleSpec::lenet_desk(4, 12), 2).unwrap();
        let zeros = Array2::zeros((3, 256));
        let phi = bundle.attributes(&zeros).unwrap();
        assert_eq!(phi.dim(), (3, 12));
        assert!(phi.iter().all(|v| *v >= 0.0));
        assert!(bundle.attributes(&Array2::zeros((3, 257))).is_err());
    }

    #[test]
    fn zero_head_or_zero_phi_is_uniform() {
        let mut bundle = ModelBundle::build(BundleSpec::lenet_desk(4, 12), 2).unwrap();
        let phi = Array2::from_elem((2, 12), 0.0);
        let g = bundle.interpreter_forward(&phi).unwrap();
        assert!(g.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let head = bundle.head_index();
        bundle.params_mut().tensors_mut()[head].values.iter_mut().for_each(|v| *v = 0.0);
        let phi = Array2::from_elem((2, 12), 3.0);
        let g = bundle.interpreter_forward(&phi).unwrap();
        assert!(g.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn decode_shape() {
        let bundle = ModelBundle::build(BundleSpec::lenet_mnist(10, 25), 0).unwrap();
        let out = bundle.decode(&Array2::from_elem((8, 25), 0.5)).unwrap();
        assert_eq!(out.dim(), (8, 1, 28, 28));
        assert!(bundle.decode(&Array2::zeros((8, 24))).is_err());
    }

    #[test]
    fn psi_must_end_in_relu() {
        let mut spec = BundleSpec::toy(3, 3);
        spec.interpreter.psi_layers = parse_layers("fc(8,3)").unwrap();
        assert!(matches!(ModelBundle::build(spec, 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn decoder_must_reconstruct_input_shape() {
        let mut spec = BundleSpec::toy(3, 3);
        spec.decoder.layers = parse_layers("fc(3,36) reshape(1,6,6) maxpool(2)").unwrap();
        assert!(matches!(ModelBundle::build(spec, 0), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn malformed_batch_rejected() {
        let bundle = ModelBundle::build(BundleSpec::toy(3, 3), 0).unwrap();
        assert!(bundle.forward_with_taps(&images(2, [1, 5, 6], 0)).is_err());
    }
}
