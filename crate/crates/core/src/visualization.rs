//! Maximum-activating samples, activation maximization with partial
//! initialization (AM+PI), decoder ablation and gradient saliency.

use ndarray::{Array2, Array3, Axis, Zip};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasResult {
    pub class: usize,
    pub attribute: usize,
    pub mas_size: usize,
    /// `(sample_id, φ_j(x))`, activations descending.
    pub samples: Vec<(usize, f64)>,
}

/// The `k` highest-scoring entries as `(id, score)`, ties broken by id ascending.
pub fn top_k(ids: &[usize], scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut pairs: Vec<(usize, f64)> = ids.iter().copied().zip(scores.iter().copied()).collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    pairs.truncate(k);
    pairs
}

/// The `mas_size` samples labelled `class` with the largest φ_j. Maximizing
/// the summed activation over subsets of a fixed size picks exactly these.
pub fn select_mas(
    bundle: &ModelBundle,
    data: &Dataset,
    class: usize,
    attribute: usize,
    mas_size: usize,
) -> Result<MasResult> {
    if attribute >= bundle.attribute_count() {
        return Err(Error::InvalidArgument(format!("attribute {attribute} out of range")));
    }
    if mas_size == 0 {
        return Err(Error::InvalidArgument("mas_size must be at least 1".into()));
    }
    let ids = data.indices_of_class(class);
    if ids.len() < mas_size {
        return Err(Error::InvalidArgument(format!(
            "class {class} has {} samples, fewer than mas_size {mas_size}",
            ids.len()
        )));
    }
    let p = bundle.predict_chunked(&data.gather(&ids), 256)?;
    let scores: Vec<f64> = p.phi.column(attribute).to_vec();
    Ok(MasResult {
        class,
        attribute,
        mas_size,
        samples: top_k(&ids, &scores, mas_size),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmpiParams {
    pub lambda_phi: f64,
    pub lambda_tv: f64,
    pub lambda_bo: f64,
    /// Start from `init_scale · x'`.
    pub init_scale: f64,
    pub iterations: usize,
    pub step_size: f64,
    /// The step size halves after every this many iterations.
    pub step_halving_period: usize,
    /// Data range enforced softly by the boundedness penalty.
    pub range: (f64, f64),
}

impl Default for AmpiParams {
    fn default() -> Self {
        AmpiParams {
            lambda_phi: 2.0,
            lambda_tv: 6.0,
            lambda_bo: 10.0,
            init_scale: 0.3,
            iterations: 300,
            step_size: 0.05,
            step_halving_period: 50,
            range: (0.0, 1.0),
        }
    }
}

impl AmpiParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        for (name, v) in [
            ("lambda_phi", self.lambda_phi),
            ("lambda_tv", self.lambda_tv),
            ("lambda_bo", self.lambda_bo),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.init_scale > 0.0 && self.init_scale <= 1.0) {
            return bad(format!("init_scale must lie in (0, 1], got {}", self.init_scale));
        }
        if self.iterations == 0 || self.step_halving_period == 0 {
            return bad("iterations and step_halving_period must be at least 1".into());
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return bad(format!("step size must be positive, got {}", self.step_size));
        }
        if !(self.range.0 < self.range.1) {
            return bad(format!("empty range {:?}", self.range));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmpiResult {
    pub source: usize,
    pub attribute: usize,
    #[serde(skip)]
    pub x_vis: Array3<f64>,
    /// Objective at the start of every iteration.
    pub objective_trace: Vec<f64>,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub initial_activation: f64,
    pub final_activation: f64,
}

fn check_spatial(x: &Array3<f64>) -> Result<()> {
    let (_, h, w) = x.dim();
    if h < 2 || w < 2 {
        return Err(Error::InvalidArgument(format!("total variation needs H, W >= 2, got {h}x{w}")));
    }
    Ok(())
}

/// Anisotropic total variation Σ |x[i+1,j] − x[i,j]| + |x[i,j+1] − x[i,j]|.
pub fn total_variation(x: &Array3<f64>) -> Result<f64> {
    total_variation_grad(x).map(|(v, _)| v)
}

/// Total variation and a subgradient (sign(0) = 0).
pub fn total_variation_grad(x: &Array3<f64>) -> Result<(f64, Array3<f64>)> {
    check_spatial(x)?;
    let (c, h, w) = x.dim();
    let mut tv = 0.0;
    let mut g = Array3::zeros(x.dim());
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                if i + 1 < h {
                    let d = x[[ch, i + 1, j]] - x[[ch, i, j]];
                    tv += d.abs();
                    let s = sign(d);
                    g[[ch, i + 1, j]] += s;
                    g[[ch, i, j]] -= s;
                }
                if j + 1 < w {
                    let d = x[[ch, i, j + 1]] - x[[ch, i, j]];
                    tv += d.abs();
                    let s = sign(d);
                    g[[ch, i, j + 1]] += s;
                    g[[ch, i, j]] -= s;
                }
            }
        }
    }
    Ok((tv, g))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Σ max(0, x − hi)² + max(0, lo − x)².
pub fn boundedness_penalty(x: &Array3<f64>, range: (f64, f64)) -> f64 {
    boundedness_penalty_grad(x, range).0
}

pub fn boundedness_penalty_grad(x: &Array3<f64>, (lo, hi): (f64, f64)) -> (f64, Array3<f64>) {
    let mut total = 0.0;
    let mut g = Array3::zeros(x.dim());
    Zip::from(&mut g).and(x).for_each(|g, &v| {
        if v > hi {
            total += (v - hi) * (v - hi);
            *g = 2.0 * (v - hi);
        } else if v < lo {
            total += (lo - v) * (lo - v);
            *g = -2.0 * (lo - v);
        }
    });
    (total, g)
}

fn check_attribute(bundle: &ModelBundle, j: usize) -> Result<()> {
    if j >= bundle.attribute_count() {
        return Err(Error::InvalidArgument(format!(
            "attribute {j} out of range for J = {}",
            bundle.attribute_count()
        )));
    }
    Ok(())
}

/// λ_φ φ_j(x) − λ_tv TV(x) − λ_bo Bo(x), with its gradient in x.
pub fn ampi_objective_grad(
    bundle: &ModelBundle,
    x: &Array3<f64>,
    j: usize,
    params: &AmpiParams,
) -> Result<(f64, f64, Array3<f64>)> {
    check_attribute(bundle, j)?;
    let batch = x.clone().insert_axis(Axis(0));
    let phi = bundle.attributes_of(x)?;
    let mut onehot = Array2::zeros((1, bundle.attribute_count()));
    onehot[[0, j]] = 1.0;
    let d_phi = bundle.attribute_input_gradient(&batch, &onehot)?.index_axis_move(Axis(0), 0);
    let (tv, d_tv) = total_variation_grad(x)?;
    let (bo, d_bo) = boundedness_penalty_grad(x, params.range);
    let objective = params.lambda_phi * phi[j] - params.lambda_tv * tv - params.lambda_bo * bo;
    let grad = d_phi * params.lambda_phi - d_tv * params.lambda_tv - d_bo * params.lambda_bo;
    Ok((objective, phi[j], grad))
}

pub fn ampi_objective(bundle: &ModelBundle, x: &Array3<f64>, j: usize, params: &AmpiParams) -> Result<f64> {
    check_attribute(bundle, j)?;
    let phi = bundle.attributes_of(x)?;
    Ok(params.lambda_phi * phi[j]
        - params.lambda_tv * total_variation(x)?
        - params.lambda_bo * boundedness_penalty(x, params.range))
}

/// Adaptive-moment ascent on the AM+PI objective from `init_scale · x_prime`.
pub fn am_pi(
    bundle: &ModelBundle,
    x_prime: &Array3<f64>,
    source: usize,
    j: usize,
    params: &AmpiParams,
) -> Result<AmpiResult> {
    params.validate()?;
    let mut x = x_prime * params.init_scale;
    let mut adam = Adam::new(AdamConfig::with_rate(params.step_size), [x.len()]);
    let mut trace = Vec::with_capacity(params.iterations);
    let mut initial_activation = 0.0;
    for t in 0..params.iterations {
        let (objective, activation, grad) = ampi_objective_grad(bundle, &x, j, params)?;
        if !objective.is_finite() {
            return Err(Error::NonFinite("AM+PI objective"));
        }
        if t == 0 {
            initial_activation = activation;
        }
        trace.push(objective);
        adam.config.learning_rate = params.step_size * 0.5f64.powi((t / params.step_halving_period) as i32);
        let descent = -grad;
        adam.update(
            [x.as_slice_mut().unwrap()],
            [descent.as_slice().unwrap()],
            |_| false,
        );
    }
    let final_objective = ampi_objective(bundle, &x, j, params)?;
    if !final_objective.is_finite() {
        return Err(Error::NonFinite("AM+PI objective"));
    }
    let final_activation = bundle.attributes_of(&x)?[j];
    Ok(AmpiResult {
        source,
        attribute: j,
        initial_objective: trace[0],
        objective_trace: trace,
        final_objective,
        initial_activation,
        final_activation,
        x_vis: x,
    })
}

/// Reconstructions from Φ(x) and from Φ(x) with attribute `j` zeroed.
pub fn decoder_ablation(bundle: &ModelBundle, x: &Array3<f64>, j: usize) -> Result<(Array3<f64>, Array3<f64>)> {
    check_attribute(bundle, j)?;
    let phi = bundle.attributes_of(x)?;
    let mut both = Array2::zeros((2, phi.len()));
    for (k, v) in phi.iter().enumerate() {
        both[[0, k]] = *v;
        both[[1, k]] = *v;
    }
    both[[1, j]] = 0.0;
    let out = bundle.decode(&both)?;
    Ok((
        out.index_axis(Axis(0), 0).to_owned(),
        out.index_axis(Axis(0), 1).to_owned(),
    ))
}

/// ∂φ_j(x)/∂x.
pub fn gradient_saliency(bundle: &ModelBundle, x: &Array3<f64>, j: usize) -> Result<Array3<f64>> {
    check_attribute(bundle, j)?;
    let mut onehot = Array2::zeros((1, bundle.attribute_count()));
    onehot[[0, j]] = 1.0;
    let batch = x.clone().insert_axis(Axis(0));
    Ok(bundle.attribute_input_gradient(&batch, &onehot)?.index_axis_move(Axis(0), 0))
}
