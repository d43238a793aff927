//! Prediction, fidelity, conciseness/diversity and reconstruction losses.
//!
//! Every sum over samples is reduced as a batch mean so that the loss weights do
//! not depend on the mini-batch size. Each loss has a `_grad` companion returning
//! the analytic gradient with respect to its inputs.

use ndarray::{Array2, Array4, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

/// Row sums of probability inputs must lie within this distance of one.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-4;

/// Weights of the interpretability terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Output fidelity.
    pub beta: f64,
    /// Input fidelity (reconstruction).
    pub gamma: f64,
    /// Conciseness and diversity.
    pub delta: f64,
    /// ℓ1 strength inside the conciseness/diversity term.
    pub eta: f64,
    /// Weight of the per-sample entropy inside the conciseness/diversity term.
    pub zeta: f64,
    /// Weight of the batch-mean entropy inside the conciseness/diversity term.
    pub mu: f64,
}

impl LossWeights {
    /// β=0.5, γ=0.8, δ=0.2, η=0.5 with unit entropy weights.
    pub const MNIST: LossWeights = LossWeights {
        beta: 0.5,
        gamma: 0.8,
        delta: 0.2,
        eta: 0.5,
        zeta: 1.0,
        mu: 1.0,
    };

    /// β=0.1, γ=5, δ=0.1, η=3 with a doubled diversity weight.
    pub const QUICKDRAW: LossWeights = LossWeights {
        beta: 0.1,
        gamma: 5.0,
        delta: 0.1,
        eta: 3.0,
        zeta: 1.0,
        mu: 2.0,
    };

    /// Prediction loss only.
    pub const NONE: LossWeights = LossWeights {
        beta: 0.0,
        gamma: 0.0,
        delta: 0.0,
        eta: 0.0,
        zeta: 0.0,
        mu: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("eta", self.eta),
            ("zeta", self.zeta),
            ("mu", self.mu),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn cd_weights(&self) -> CdWeights {
        CdWeights {
            eta: self.eta,
            zeta: self.zeta,
            mu: self.mu,
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::MNIST
    }
}

/// Which optional terms are active in the current training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageMask {
    pub pred: bool,
    pub of: bool,
    pub cd: bool,
}

impl StageMask {
    pub const ALL: StageMask = StageMask {
        pred: true,
        of: true,
        cd: true,
    };
}

/// Per-term loss values and their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pred: f64,
    pub of: f64,
    pub cd: f64,
    #[serde(rename = "if")]
    pub if_: f64,
    pub total: f64,
    /// −E(Φ̄)
    pub cd_diversity: f64,
    /// mean over samples of E(Φ(x))
    pub cd_conciseness: f64,
    /// mean over samples of ‖Φ(x)‖₁
    pub cd_l1: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.pred, self.of, self.cd, self.if_, self.total].iter().all(|v| v.is_finite())
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut out = LossBreakdown::default();
        for b in items {
            out.pred += b.pred / n;
            out.of += b.of / n;
            out.cd += b.cd / n;
            out.if_ += b.if_ / n;
            out.total += b.total / n;
            out.cd_diversity += b.cd_diversity / n;
            out.cd_conciseness += b.cd_conciseness / n;
            out.cd_l1 += b.cd_l1 / n;
        }
        out
    }
}

pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Pulls a gradient on softmax outputs `p` back to the logits.
pub fn softmax_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let dots = (p * dp).sum_axis(Axis(1));
    let mut dz = dp.clone();
    for (mut row, d) in dz.rows_mut().into_iter().zip(dots.iter()) {
        row.mapv_inplace(|v| v - d);
    }
    dz * p
}

fn check_finite(values: impl IntoIterator<Item = f64>, what: &'static str) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Entropy of softmax(v): E(v) = −Σ pᵢ log pᵢ, with pᵢ = exp(vᵢ)/Σⱼ exp(vⱼ).
pub fn soft_entropy(v: &[f64]) -> Result<f64> {
    soft_entropy_grad(v).map(|(e, _)| e)
}

/// Entropy of softmax(v) and its gradient −pₖ(log pₖ + E).
pub fn soft_entropy_grad(v: &[f64]) -> Result<(f64, Vec<f64>)> {
    if v.is_empty() {
        return Err(Error::Empty("entropy input"));
    }
    check_finite(v.iter().copied(), "entropy input")?;
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let log_z = v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    let log_p: Vec<f64> = v.iter().map(|x| x - m - log_z).collect();
    let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
    let raw: f64 = -p.iter().zip(&log_p).map(|(p, l)| p * l).sum::<f64>();
    let e = raw.clamp(0.0, (v.len() as f64).ln());
    let grad = p.iter().zip(&log_p).map(|(p, l)| -p * (l + e)).collect();
    Ok((e, grad))
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::InvalidArgument(format!("{} labels for {rows} rows", labels.len())));
    }
    if rows == 0 {
        return Err(Error::Empty("prediction batch"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean cross-entropy of softmax(logits) against class indices.
pub fn prediction_loss(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    prediction_loss_grad(logits, labels).map(|(l, _)| l)
}

pub fn prediction_loss_grad(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    check_labels(labels, logits.nrows(), logits.ncols())?;
    check_finite(logits.iter().copied(), "logits")?;
    let batch = logits.nrows() as f64;
    let mut loss = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[y];
    }
    let mut grad = softmax_rows(logits);
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
    }
    grad /= batch;
    Ok((loss / batch, grad))
}

fn check_stochastic(p: &Array2<f64>, what: &'static str) -> Result<()> {
    check_finite(p.iter().copied(), what)?;
    for (i, row) in p.rows().into_iter().enumerate() {
        let s = row.sum();
        if (s - 1.0).abs() > STOCHASTIC_TOLERANCE || row.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidArgument(format!("{what} row {i} is not a probability vector (sum {s})")));
        }
    }
    Ok(())
}

/// Mean over the batch of −Σ_c g_c log f_c.
pub fn output_fidelity_loss(g_probs: &Array2<f64>, f_probs: &Array2<f64>) -> Result<f64> {
    output_fidelity_loss_grad(g_probs, f_probs).map(|(l, _, _)| l)
}

/// Loss plus gradients with respect to `g_probs` and `f_probs`.
pub fn output_fidelity_loss_grad(
    g_probs: &Array2<f64>,
    f_probs: &Array2<f64>,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if g_probs.dim() != f_probs.dim() {
        return Err(Error::InvalidArgument(format!(
            "interpreter probabilities {:?} vs predictor probabilities {:?}",
            g_probs.dim(),
            f_probs.dim()
        )));
    }
    if g_probs.nrows() == 0 {
        return Err(Error::Empty("fidelity batch"));
    }
    check_stochastic(g_probs, "interpreter probabilities")?;
    check_stochastic(f_probs, "predictor probabilities")?;
    let batch = g_probs.nrows() as f64;
    let mut loss = 0.0;
    let mut dg = Array2::zeros(g_probs.dim());
    let mut df = Array2::zeros(f_probs.dim());
    Zip::from(&mut dg)
        .and(&mut df)
        .and(g_probs)
        .and(f_probs)
        .for_each(|dg, df, &g, &f| {
            let log_f = f.max(LOG_CLAMP).ln();
            loss -= g * log_f;
            *dg = -log_f / batch;
            *df = if f > LOG_CLAMP { -g / (f * batch) } else { 0.0 };
        });
    Ok((loss / batch, dg, df))
}

/// Weights inside the conciseness/diversity term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdWeights {
    pub eta: f64,
    pub zeta: f64,
    pub mu: f64,
}

impl CdWeights {
    pub fn with_eta(eta: f64) -> Self {
        CdWeights { eta, zeta: 1.0, mu: 1.0 }
    }
}

/// Value of the conciseness/diversity term and its unweighted parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdTerms {
    pub total: f64,
    /// −E(Φ̄) with Φ̄ the batch-mean attribute vector.
    pub diversity: f64,
    /// Batch mean of E(Φ(x)).
    pub conciseness: f64,
    /// Batch mean of ‖Φ(x)‖₁.
    pub l1: f64,
}

/// −E(Φ̄) + mean E(Φ(x)) + η · mean ‖Φ(x)‖₁.
pub fn conciseness_diversity_loss(phi: &Array2<f64>, eta: f64) -> Result<CdTerms> {
    conciseness_diversity_loss_grad(phi, CdWeights::with_eta(eta)).map(|(t, _)| t)
}

/// μ·(−E(Φ̄)) + ζ·mean E(Φ(x)) + η·mean ‖Φ(x)‖₁, with its gradient in Φ.
pub fn conciseness_diversity_loss_grad(phi: &Array2<f64>, w: CdWeights) -> Result<(CdTerms, Array2<f64>)> {
    if phi.nrows() == 0 || phi.ncols() == 0 {
        return Err(Error::Empty("attribute batch"));
    }
    let batch = phi.nrows() as f64;
    let mean = phi.mean_axis(Axis(0)).unwrap();
    let (e_mean, g_mean) = soft_entropy_grad(mean.as_slice().unwrap())?;
    let mut grad = Array2::zeros(phi.dim());
    let mut conciseness = 0.0;
    let mut l1 = 0.0;
    for (row, mut grow) in phi.rows().into_iter().zip(grad.rows_mut()) {
        let row = row.to_vec();
        let (e, g) = soft_entropy_grad(&row)?;
        conciseness += e / batch;
        l1 += row.iter().map(|v| v.abs()).sum::<f64>() / batch;
        for k in 0..row.len() {
            grow[k] = (w.zeta * g[k] + w.eta * signum(row[k]) - w.mu * g_mean[k]) / batch;
        }
    }
    let diversity = -e_mean;
    let terms = CdTerms {
        total: w.mu * diversity + w.zeta * conciseness + w.eta * l1,
        diversity,
        conciseness,
        l1,
    };
    Ok((terms, grad))
}

fn signum(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Batch mean of the per-pixel mean squared reconstruction error.
pub fn input_fidelity_loss(x_hat: &Array4<f64>, x: &Array4<f64>) -> Result<f64> {
    input_fidelity_loss_grad(x_hat, x).map(|(l, _)| l)
}

pub fn input_fidelity_loss_grad(x_hat: &Array4<f64>, x: &Array4<f64>) -> Result<(f64, Array4<f64>)> {
    if x_hat.dim() != x.dim() {
        return Err(Error::InvalidArgument(format!(
            "reconstruction {:?} vs input {:?}",
            x_hat.dim(),
            x.dim()
        )));
    }
    if x.is_empty() {
        return Err(Error::Empty("reconstruction batch"));
    }
    let n = x.len() as f64;
    let diff = x_hat - x;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

/// Already-evaluated loss components for [`total_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub pred: f64,
    pub of: f64,
    pub cd: CdTerms,
    pub if_: f64,
}

/// Combines components as pred + β·of + γ·if + δ·cd; masked terms contribute exactly 0.
pub fn total_loss(c: &LossComponents, weights: &LossWeights, mask: StageMask) -> Result<LossBreakdown> {
    weights.validate()?;
    let pred = if mask.pred { c.pred } else { 0.0 };
    let of = if mask.of { c.of } else { 0.0 };
    let cd = if mask.cd { c.cd } else { CdTerms { total: 0.0, diversity: 0.0, conciseness: 0.0, l1: 0.0 } };
    Ok(LossBreakdown {
        pred,
        of,
        cd: cd.total,
        if_: c.if_,
        total: pred + weights.beta * of + weights.gamma * c.if_ + weights.delta * cd.total,
        cd_diversity: cd.diversity,
        cd_conciseness: cd.conciseness,
        cd_l1: cd.l1,
    })
}
