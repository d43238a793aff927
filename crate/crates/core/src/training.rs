//! Staged joint training of predictor and interpreter, the post-hoc variant
//! for a frozen predictor, and evaluation.

use std::time::Instant;

use log::info;
use ndarray::{Array2, Array4, ArrayD};
use serde::Serialize;

use crate::data::{BatchStream, Dataset, Preprocess};
use crate::error::{Error, Result};
use crate::losses::{
    conciseness_diversity_loss_grad, input_fidelity_loss_grad, output_fidelity_loss_grad, prediction_loss_grad,
    softmax_backward, softmax_rows, total_loss, LossBreakdown, LossComponents, LossWeights, StageMask,
};
use crate::models::{to2, ModelBundle};
use crate::nn::Grads;
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Predictor and interpreter trained together.
    Joint,
    /// Interpreter and decoder trained against a frozen predictor.
    Posthoc,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "joint" => Ok(Mode::Joint),
            "posthoc" => Ok(Mode::Posthoc),
            other => Err(format!("unknown mode {other:?} (expected joint or posthoc)")),
        }
    }
}

/// 1-based epochs at which the output-fidelity and conciseness terms switch on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageSchedule {
    pub of_epoch: usize,
    pub cd_epoch: usize,
}

impl Default for StageSchedule {
    fn default() -> Self {
        StageSchedule { of_epoch: 3, cd_epoch: 4 }
    }
}

impl StageSchedule {
    pub fn mask(&self, epoch: usize, mode: Mode) -> StageMask {
        StageMask {
            pred: mode == Mode::Joint,
            of: epoch >= self.of_epoch,
            cd: epoch >= self.cd_epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub mode: Mode,
    pub schedule: StageSchedule,
    /// Whether the output-fidelity gradient reaches θ_f through f's probabilities.
    pub of_into_predictor: bool,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
    #[serde(skip)]
    pub preprocess: Preprocess,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::MNIST,
            epochs: 12,
            batch_size: 64,
            learning_rate: 1e-4,
            seed: 0,
            mode: Mode::Joint,
            schedule: StageSchedule::default(),
            of_into_predictor: true,
            max_steps: None,
            preprocess: Preprocess::default(),
        }
    }
}

impl TrainConfig {
    /// Settings for the 2000-sample synthetic corpus: with ~30x fewer samples
    /// than MNIST per epoch, a larger rate and smaller batches give a comparable
    /// number of optimizer steps, and f is not pulled toward g.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 8,
            learning_rate: 1e-3,
            of_into_predictor: false,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        let s = self.schedule;
        if s.of_epoch == 0 || s.cd_epoch == 0 {
            return bad("stage epochs are 1-based".into());
        }
        if self.weights.beta > 0.0 && s.of_epoch > self.epochs {
            return bad(format!("output fidelity starts at epoch {} of {}", s.of_epoch, self.epochs));
        }
        if self.weights.delta > 0.0 && s.cd_epoch > self.epochs {
            return bad(format!("conciseness starts at epoch {} of {}", s.cd_epoch, self.epochs));
        }
        Ok(())
    }
}

/// Accuracies of f and g against labels, and agreement of g with f.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy_f: f64,
    pub accuracy_g: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mask: StageMask,
    pub steps: usize,
    /// Mean over the epoch's mini-batches.
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub mode: Mode,
    pub batch_size: usize,
    pub steps: usize,
    pub epochs: Vec<EpochRecord>,
    pub train: Option<EvalReport>,
    pub test: Option<EvalReport>,
    pub seconds: f64,
    pub checksum: String,
}

impl TrainReport {
    /// Equality of everything except wall-clock time.
    pub fn same_outcome(&self, other: &TrainReport) -> bool {
        TrainReport {
            seconds: 0.0,
            ..self.clone()
        } == TrainReport {
            seconds: 0.0,
            ..other.clone()
        }
    }
}

const EVAL_CHUNK: usize = 256;

pub fn evaluate(bundle: &ModelBundle, data: &Dataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let p = bundle.predict_chunked(&data.images, EVAL_CHUNK)?;
    let f = p.f_classes();
    let g = p.g_classes();
    let n = data.len() as f64;
    let agree = |a: &[usize], b: &[usize]| a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    Ok(EvalReport {
        samples: data.len(),
        accuracy_f: agree(&f, &data.labels),
        accuracy_g: agree(&g, &data.labels),
        fidelity: agree(&f, &g),
    })
}

/// Which gradient paths are live for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub weights: LossWeights,
    pub mask: StageMask,
    pub of_into_predictor: bool,
}

/// Total loss and parameter gradients on one mini-batch. Gradients are only
/// accumulated for trainable arrays; the loss breakdown reports every term.
pub fn loss_and_grads(
    bundle: &ModelBundle,
    images: &Array4<f64>,
    labels: &[usize],
    opts: &StepOptions,
) -> Result<(LossBreakdown, Grads)> {
    let w = opts.weights;
    let mask = opts.mask;
    let params = bundle.params();
    let ptrace = bundle.trace_predictor(images)?;
    let logits = to2(ptrace.output().clone());
    let taps = bundle.gather_taps(&ptrace);
    let psi_trace = bundle.trace_psi(&taps)?;
    let phi = to2(psi_trace.output().clone());
    let head = bundle.head();
    let g_logits = phi.dot(&head);
    let g_probs = softmax_rows(&g_logits);
    let f_probs = softmax_rows(&logits);
    let dec_trace = bundle.trace_decoder(&phi)?;
    let x_hat = dec_trace.output().clone().into_dimensionality().unwrap();

    let (pred, d_pred) = prediction_loss_grad(&logits, labels)?;
    let (of, dg, df) = output_fidelity_loss_grad(&g_probs, &f_probs)?;
    let (cd, d_cd) = conciseness_diversity_loss_grad(&phi, w.cd_weights())?;
    let (if_, d_if) = input_fidelity_loss_grad(&x_hat, images)?;
    let breakdown = total_loss(&LossComponents { pred, of, cd, if_ }, &w, mask)?;

    let mut grads = Grads::zeros_like(params);
    let predictor_live = !bundle.predictor_frozen();
    let mut d_logits: Option<Array2<f64>> = None;
    if mask.pred && predictor_live {
        d_logits = Some(d_pred);
    }

    let mut d_phi = Array2::<f64>::zeros(phi.dim());
    let mut phi_live = false;
    if mask.of && w.beta > 0.0 {
        let d_gl = softmax_backward(&g_probs, &dg) * w.beta;
        let hi = bundle.head_index();
        if params.is_trainable(hi) {
            let dw = phi.t().dot(&d_gl);
            grads.get_mut(hi).copy_from_slice(dw.as_slice().unwrap());
        }
        d_phi += &d_gl.dot(&head.t());
        phi_live = true;
        if opts.of_into_predictor && predictor_live {
            let d_fl = softmax_backward(&f_probs, &df) * w.beta;
            d_logits = Some(match d_logits {
                Some(d) => d + d_fl,
                None => d_fl,
            });
        }
    }
    if mask.cd && w.delta > 0.0 {
        d_phi.scaled_add(w.delta, &d_cd);
        phi_live = true;
    }
    if w.gamma > 0.0 {
        let d_xhat: ArrayD<f64> = (d_if * w.gamma).into_dyn();
        let d = bundle
            .decoder()
            .backward(params, &dec_trace, Some(d_xhat), &[], Some(&mut grads), true)
            .unwrap();
        d_phi += &to2(d);
        phi_live = true;
    }

    let mut injections = Vec::new();
    if phi_live {
        let d_taps = bundle.psi().backward(
            params,
            &psi_trace,
            Some(d_phi.into_dyn()),
            &[],
            Some(&mut grads),
            predictor_live,
        );
        if let Some(d_taps) = d_taps {
            injections = bundle.scatter_taps(&to2(d_taps));
        }
    }
    if predictor_live && (d_logits.is_some() || !injections.is_empty()) {
        bundle.predictor().backward(
            params,
            &ptrace,
            d_logits.map(Array2::into_dyn),
            &injections,
            Some(&mut grads),
            false,
        );
    }
    Ok((breakdown, grads))
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn run(
    bundle: &ModelBundle,
    data: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(ModelBundle, TrainReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if data.image_shape() != bundle.input_shape() {
        return Err(Error::ShapeMismatch {
            upstream: format!("dataset images {:?}", data.image_shape()),
            downstream: "predictor input".into(),
            detail: format!("expected {:?}", bundle.input_shape()),
        });
    }
    if data.classes() > bundle.classes() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes but the predictor emits {}",
            data.classes(),
            bundle.classes()
        )));
    }
    let started = Instant::now();
    let mut model = bundle.clone();
    let mut adam = Adam::for_store(AdamConfig::with_rate(config.learning_rate), model.params());
    let mut records = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    let limit = config.max_steps.unwrap_or(usize::MAX);
    'epochs: for epoch in 1..=config.epochs {
        if steps >= limit {
            break;
        }
        let mask = config.schedule.mask(epoch, config.mode);
        let opts = StepOptions {
            weights: config.weights,
            mask,
            of_into_predictor: config.of_into_predictor,
        };
        let stream = BatchStream::new(data, config.batch_size, config.preprocess, epoch_seed(config.seed, epoch))?;
        let mut losses = Vec::with_capacity(stream.batch_count());
        for (b, batch) in stream.enumerate() {
            let (loss, grads) = loss_and_grads(&model, &batch.images, &batch.labels, &opts)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    detail: format!("{loss:?}"),
                });
            }
            adam.step_store(model.params_mut(), &grads);
            losses.push(loss);
            steps += 1;
            if steps >= limit {
                records.push(epoch_record(epoch, mask, &losses));
                break 'epochs;
            }
        }
        let record = epoch_record(epoch, mask, &losses);
        info!(
            "epoch {epoch}: total {:.4} pred {:.4} of {:.4} cd {:.4} if {:.4}",
            record.loss.total, record.loss.pred, record.loss.of, record.loss.cd, record.loss.if_
        );
        records.push(record);
    }
    let train = if steps > 0 { Some(evaluate(&model, data)?) } else { None };
    let test = test.map(|t| evaluate(&model, t)).transpose()?;
    let report = TrainReport {
        mode: config.mode,
        batch_size: config.batch_size,
        steps,
        epochs: records,
        train,
        test,
        seconds: started.elapsed().as_secs_f64(),
        checksum: model.params().digest(),
    };
    Ok((model, report))
}

fn epoch_record(epoch: usize, mask: StageMask, losses: &[LossBreakdown]) -> EpochRecord {
    EpochRecord {
        epoch,
        mask,
        steps: losses.len(),
        loss: LossBreakdown::mean(losses),
    }
}

/// Staged joint training on a copy of `bundle`. When `test` is given it is
/// evaluated once at the end.
pub fn train_joint(
    bundle: &ModelBundle,
    data: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(ModelBundle, TrainReport)> {
    if config.mode != Mode::Joint {
        return Err(Error::InvalidArgument("train_joint needs mode = joint".into()));
    }
    if bundle.predictor_frozen() {
        return Err(Error::InvalidArgument("joint training needs a trainable predictor".into()));
    }
    run(bundle, data, test, config)
}

/// Trains Ψ, the head and the decoder against the frozen predictor of `bundle`.
pub fn train_posthoc(
    bundle: &ModelBundle,
    data: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(ModelBundle, TrainReport)> {
    if config.mode != Mode::Posthoc {
        return Err(Error::InvalidArgument("train_posthoc needs mode = posthoc".into()));
    }
    if !bundle.predictor_frozen() {
        return Err(Error::InvalidArgument(
            "post-hoc training refuses a trainable predictor; freeze it first".into(),
        ));
    }
    run(bundle, data, test, config)
}

/// Dispatches on `config.mode`, freezing the predictor for post-hoc runs.
pub fn train(
    bundle: &ModelBundle,
    data: &Dataset,
    test: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(ModelBundle, TrainReport)> {
    match config.mode {
        Mode::Joint => train_joint(bundle, data, test, config),
        Mode::Posthoc => {
            let mut frozen = bundle.clone();
            frozen.freeze_predictor(true);
            train_posthoc(&frozen, data, test, config)
        }
    }
}

/// Re-initializes Ψ, the head and the decoder of a trained bundle from `seed`,
/// keeping the predictor, so a post-hoc interpreter starts from scratch.
pub fn fresh_interpreter(bundle: &ModelBundle, seed: u64) -> Result<ModelBundle> {
    let mut fresh = ModelBundle::build(bundle.spec().clone(), seed)?;
    for (dst, src) in fresh.params_mut().tensors_mut().iter_mut().zip(bundle.params().tensors()) {
        if dst.owner == crate::nn::Owner::Predictor {
            dst.values.clone_from(&src.values);
        }
    }
    Ok(fresh)
}
