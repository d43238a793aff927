//! Attribute contributions, local and per-class relevance, and thresholded
//! interpretation sets.

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{argmax_rows, ModelBundle};

/// Reporting threshold 1/τ for relevance.
pub const DEFAULT_THRESHOLD: f64 = 0.2;

const CHUNK: usize = 256;

/// Contributions α and normalized relevances r of every attribute to the
/// interpreter's predicted class for one sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalRelevance {
    pub sample_id: usize,
    pub predicted_class: usize,
    pub alpha: Vec<f64>,
    pub r: Vec<f64>,
}

impl LocalRelevance {
    /// The `k` attributes with largest |r|, ties to the lower index.
    pub fn top(&self, k: usize) -> Vec<(usize, f64)> {
        let mut order: Vec<usize> = (0..self.r.len()).collect();
        order.sort_by(|&a, &b| self.r[b].abs().total_cmp(&self.r[a].abs()).then(a.cmp(&b)));
        order.into_iter().take(k).map(|j| (j, self.r[j])).collect()
    }
}

/// α / max|α|, or all zeros when α ≡ 0.
pub fn normalize_relevance(alpha: &[f64]) -> Vec<f64> {
    let m = alpha.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    if m == 0.0 {
        vec![0.0; alpha.len()]
    } else {
        alpha.iter().map(|a| a / m).collect()
    }
}

/// Relevances from an attribute vector and the J×C head for a given class.
pub fn relevance_from_parts(
    sample_id: usize,
    phi: &[f64],
    head: ArrayView2<'_, f64>,
    predicted_class: usize,
) -> Result<LocalRelevance> {
    if phi.len() != head.nrows() {
        return Err(Error::InvalidArgument(format!(
            "{} attributes but head has {} rows",
            phi.len(),
            head.nrows()
        )));
    }
    if predicted_class >= head.ncols() {
        return Err(Error::InvalidArgument(format!("class {predicted_class} out of range")));
    }
    let alpha: Vec<f64> = phi.iter().zip(head.column(predicted_class)).map(|(p, w)| p * w).collect();
    Ok(LocalRelevance {
        sample_id,
        predicted_class,
        r: normalize_relevance(&alpha),
        alpha,
    })
}

/// Local relevance of one `(C, H, W)` sample at the interpreter's predicted class.
pub fn local_relevance(bundle: &ModelBundle, x: &Array3<f64>, sample_id: usize) -> Result<LocalRelevance> {
    let batch = x.clone().insert_axis(Axis(0));
    Ok(local_relevances(bundle, &batch, &[sample_id])?.remove(0))
}

/// Local relevances for a batch; `ids` label the rows of `images`.
pub fn local_relevances(bundle: &ModelBundle, images: &Array4<f64>, ids: &[usize]) -> Result<Vec<LocalRelevance>> {
    if ids.len() != images.shape()[0] {
        return Err(Error::InvalidArgument(format!(
            "{} ids for {} images",
            ids.len(),
            images.shape()[0]
        )));
    }
    let p = bundle.predict_chunked(images, CHUNK)?;
    let classes = argmax_rows(&p.g_probs);
    let head = bundle.head();
    ids.iter()
        .zip(p.phi.rows())
        .zip(classes)
        .map(|((&id, phi), c)| relevance_from_parts(id, phi.as_slice().unwrap(), head, c))
        .collect()
}

/// Mean relevance r_{j,c} over the samples the interpreter assigns to class c.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalRelevanceMatrix {
    /// J×C; columns of classes without support are zero.
    pub r: Array2<f64>,
    pub support: Vec<usize>,
}

impl GlobalRelevanceMatrix {
    pub fn from_local(locals: &[LocalRelevance], attributes: usize, classes: usize) -> Result<Self> {
        let mut sum = Array2::zeros((attributes, classes));
        let mut support = vec![0usize; classes];
        for l in locals {
            if l.r.len() != attributes || l.predicted_class >= classes {
                return Err(Error::InvalidArgument(format!(
                    "relevance of sample {} does not fit a {attributes}x{classes} matrix",
                    l.sample_id
                )));
            }
            support[l.predicted_class] += 1;
            for (j, r) in l.r.iter().enumerate() {
                sum[[j, l.predicted_class]] += r;
            }
        }
        for (c, &n) in support.iter().enumerate() {
            if n > 0 {
                sum.column_mut(c).mapv_inplace(|v| v / n as f64);
            }
        }
        Ok(GlobalRelevanceMatrix { r: sum, support })
    }

    pub fn attributes(&self) -> usize {
        self.r.nrows()
    }

    pub fn classes(&self) -> usize {
        self.r.ncols()
    }

    /// Whether any sample was assigned to `class`.
    pub fn defined(&self, class: usize) -> bool {
        self.support[class] > 0
    }

    /// Support-weighted combination of matrices computed on disjoint samples.
    pub fn merge(&self, other: &GlobalRelevanceMatrix) -> Result<GlobalRelevanceMatrix> {
        if self.r.dim() != other.r.dim() {
            return Err(Error::InvalidArgument("merging matrices of different shapes".into()));
        }
        let mut r = Array2::zeros(self.r.dim());
        let support: Vec<usize> = self.support.iter().zip(&other.support).map(|(a, b)| a + b).collect();
        for c in 0..self.classes() {
            if support[c] == 0 {
                continue;
            }
            let (a, b) = (self.support[c] as f64, other.support[c] as f64);
            let col = (&self.r.column(c) * a + &other.r.column(c) * b) / (a + b);
            r.column_mut(c).assign(&col);
        }
        Ok(GlobalRelevanceMatrix { r, support })
    }
}

pub fn global_relevance(bundle: &ModelBundle, images: &Array4<f64>) -> Result<GlobalRelevanceMatrix> {
    let ids: Vec<usize> = (0..images.shape()[0]).collect();
    let locals = local_relevances(bundle, images, &ids)?;
    GlobalRelevanceMatrix::from_local(&locals, bundle.attribute_count(), bundle.classes())
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("relevance threshold must lie in (0, 1), got {t}")))
    }
}

/// Attributes whose |r| exceeds the threshold.
pub fn local_set(r: &[f64], threshold: f64) -> Result<Vec<usize>> {
    check_threshold(threshold)?;
    Ok((0..r.len()).filter(|&j| r[j].abs() > threshold).collect())
}

/// `(class, attribute)` pairs whose signed relevance exceeds the threshold,
/// over classes with support, ordered by class then attribute.
pub fn global_set(m: &GlobalRelevanceMatrix, threshold: f64) -> Result<Vec<(usize, usize)>> {
    check_threshold(threshold)?;
    let mut out = Vec::new();
    for c in (0..m.classes()).filter(|&c| m.defined(c)) {
        for j in 0..m.attributes() {
            if m.r[[j, c]] > threshold {
                out.push((c, j));
            }
        }
    }
    Ok(out)
}

/// Local sets (|r| rule) per sample and the global set (signed rule).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterpretationSet {
    pub threshold: f64,
    pub local: Vec<(usize, Vec<usize>)>,
    pub global: Vec<(usize, usize)>,
}

pub fn interpretation_sets(
    locals: &[LocalRelevance],
    global: &GlobalRelevanceMatrix,
    threshold: f64,
) -> Result<InterpretationSet> {
    let local = locals
        .iter()
        .map(|l| local_set(&l.r, threshold).map(|s| (l.sample_id, s)))
        .collect::<Result<_>>()?;
    Ok(InterpretationSet {
        threshold,
        local,
        global: global_set(global, threshold)?,
    })
}
