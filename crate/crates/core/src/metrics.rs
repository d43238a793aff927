//! Fidelity, conciseness, attribute-shuffling importance and projection-depth
//! analysis of disagreements between predictor and interpreter.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{argmax_rows, ModelBundle};

/// Default number of random directions approximating the depth supremum.
pub const DEFAULT_DIRECTIONS: usize = 1000;

const CHUNK: usize = 256;

/// Fraction of positions where the two label vectors agree.
pub fn fidelity(f_classes: &[usize], g_classes: &[usize]) -> Result<f64> {
    if f_classes.len() != g_classes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictor labels vs {} interpreter labels",
            f_classes.len(),
            g_classes.len()
        )));
    }
    if f_classes.is_empty() {
        return Err(Error::Empty("fidelity inputs"));
    }
    let agree = f_classes.iter().zip(g_classes).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / f_classes.len() as f64)
}

/// Position of `class` when a row is sorted by probability descending, ties
/// to the lower class index.
fn rank_of(row: &[f64], class: usize) -> usize {
    let p = row[class];
    row.iter()
        .enumerate()
        .filter(|&(c, &q)| q > p || (q == p && c < class))
        .count()
}

/// Fraction of samples whose predictor class is among the interpreter's top `k`.
pub fn top_k_fidelity(f_classes: &[usize], g_probs: &Array2<f64>, k: usize) -> Result<f64> {
    let classes = g_probs.ncols();
    if k == 0 || k > classes {
        return Err(Error::InvalidArgument(format!("k must lie in 1..={classes}, got {k}")));
    }
    if f_classes.len() != g_probs.nrows() {
        return Err(Error::InvalidArgument("label count differs from probability rows".into()));
    }
    if f_classes.is_empty() {
        return Err(Error::Empty("fidelity inputs"));
    }
    let hits = f_classes
        .iter()
        .zip(g_probs.rows())
        .filter(|(&f, row)| rank_of(row.as_slice().unwrap(), f) < k)
        .count();
    Ok(hits as f64 / f_classes.len() as f64)
}

/// Mean number of attributes with |r| above each threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcisenessCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn conciseness_curve(relevances: &[Vec<f64>], thresholds: &[f64]) -> Result<ConcisenessCurve> {
    if relevances.is_empty() || thresholds.is_empty() {
        return Err(Error::Empty("conciseness inputs"));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::InvalidArgument(format!("threshold {t} outside (0, 1)")));
    }
    let n = relevances.len() as f64;
    let values = thresholds
        .iter()
        .map(|&t| {
            relevances
                .iter()
                .map(|r| r.iter().filter(|v| v.abs() > t).count() as f64)
                .sum::<f64>()
                / n
        })
        .collect();
    Ok(ConcisenessCurve {
        thresholds: thresholds.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShuffleReport {
    pub accuracy: f64,
    pub shuffled_accuracy: f64,
    /// `accuracy − shuffled_accuracy` in percentage points.
    pub drop: f64,
}

/// Accuracy of g before and after rearranging each sample's attribute values
/// with `permute(sample_index, values)`.
pub fn shuffle_test_with(
    bundle: &ModelBundle,
    data: &Dataset,
    mut permute: impl FnMut(usize, &mut [f64]),
) -> Result<ShuffleReport> {
    if data.is_empty() {
        return Err(Error::Empty("shuffle dataset"));
    }
    let p = bundle.predict_chunked(&data.images, CHUNK)?;
    let mut shuffled = p.phi.clone();
    for (i, mut row) in shuffled.rows_mut().into_iter().enumerate() {
        permute(i, row.as_slice_mut().unwrap());
    }
    let before = argmax_rows(&p.g_probs);
    let after = argmax_rows(&bundle.interpreter_logits(&shuffled)?);
    let accuracy = fidelity(&before, &data.labels)?;
    let shuffled_accuracy = fidelity(&after, &data.labels)?;
    Ok(ShuffleReport {
        accuracy,
        shuffled_accuracy,
        drop: 100.0 * (accuracy - shuffled_accuracy),
    })
}

/// Shuffles every sample's attributes with a fresh seeded permutation.
pub fn shuffle_attribute_test(bundle: &ModelBundle, data: &Dataset, seed: u64) -> Result<ShuffleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_test_with(bundle, data, |_, row| row.shuffle(&mut rng))
}

/// `k` directions drawn uniformly from the unit sphere in `dim` dimensions, one per row.
pub fn random_directions(dim: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((k, dim));
    for mut row in out.rows_mut() {
        loop {
            row.mapv_inplace(|_| -> f64 { StandardNormal.sample(&mut rng) });
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row /= norm;
                break;
            }
        }
    }
    out
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Projection depth `1 / (1 + max_p |⟨p,x⟩ − med⟨p,X⟩| / MAD⟨p,X⟩)` over the rows
/// of `directions`. A direction with zero MAD is skipped unless x lies off the
/// median there, in which case the depth is 0.
pub fn projection_depth_with_directions(x: &[f64], data: &Array2<f64>, directions: &Array2<f64>) -> Result<f64> {
    if data.nrows() < 3 {
        return Err(Error::InvalidArgument(format!(
            "projection depth needs at least 3 reference rows, got {}",
            data.nrows()
        )));
    }
    if x.len() != data.ncols() || directions.ncols() != data.ncols() {
        return Err(Error::InvalidArgument("dimension mismatch in projection depth".into()));
    }
    if directions.nrows() == 0 {
        return Err(Error::InvalidArgument("at least one direction is required".into()));
    }
    let x = Array1::from(x.to_vec());
    let projected = data.dot(&directions.t());
    let px = directions.dot(&x);
    let mut outlyingness = f64::NEG_INFINITY;
    for (d, column) in projected.axis_iter(Axis(1)).enumerate() {
        let mut values = column.to_vec();
        let med = median(&mut values);
        let mut deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
        let mad = median(&mut deviations);
        let numerator = (px[d] - med).abs();
        if mad == 0.0 {
            if numerator > 0.0 {
                return Ok(0.0);
            }
            continue;
        }
        outlyingness = outlyingness.max(numerator / mad);
    }
    if outlyingness == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument("every projection direction is degenerate".into()));
    }
    Ok(1.0 / (1.0 + outlyingness))
}

pub fn projection_depth(x: &[f64], data: &Array2<f64>, directions: usize, seed: u64) -> Result<f64> {
    if directions == 0 {
        return Err(Error::InvalidArgument("at least one direction is required".into()));
    }
    projection_depth_with_directions(x, data, &random_directions(data.ncols(), directions, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthReport {
    pub depths: Vec<f64>,
    pub direction_count: usize,
    pub seed: u64,
}

/// Depth of each row of `points` with respect to `data`, sharing one direction set.
pub fn projection_depths(points: &Array2<f64>, data: &Array2<f64>, directions: usize, seed: u64) -> Result<DepthReport> {
    let dirs = random_directions(data.ncols(), directions, seed);
    let depths = points
        .rows()
        .into_iter()
        .map(|p| projection_depth_with_directions(p.as_slice().unwrap(), data, &dirs))
        .collect::<Result<_>>()?;
    Ok(DepthReport {
        depths,
        direction_count: directions,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisagreementEntry {
    pub sample_id: usize,
    pub label: usize,
    pub f_class: usize,
    pub g_top: Vec<usize>,
    pub f_correct: bool,
    /// Depth within the reference samples of `f_class`, for flagged samples
    /// where f is correct.
    pub depth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisagreementReport {
    pub k: usize,
    pub samples: usize,
    pub entries: Vec<DisagreementEntry>,
    /// Median depth of each class's reference samples within themselves.
    pub class_median_depth: Vec<Option<f64>>,
    pub direction_count: usize,
    pub seed: u64,
}

impl DisagreementReport {
    pub fn correct_count(&self) -> usize {
        self.entries.iter().filter(|e| e.f_correct).count()
    }
}

fn flatten(data: &Dataset, ids: &[usize]) -> Array2<f64> {
    let imgs = data.gather(ids);
    let n = ids.len();
    let d = imgs.len() / n.max(1);
    imgs.into_shape_with_order((n, d)).unwrap()
}

/// Options for [`disagreement_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisagreementOptions {
    pub k: usize,
    /// Reference samples per class drawn from the reference set.
    pub reference_per_class: usize,
    pub directions: usize,
    pub seed: u64,
}

impl Default for DisagreementOptions {
    fn default() -> Self {
        DisagreementOptions {
            k: 3,
            reference_per_class: 100,
            directions: DEFAULT_DIRECTIONS,
            seed: 0,
        }
    }
}

/// Samples of `data` whose predictor class is outside the interpreter's top-k,
/// with projection depths (in flattened input space) of the ones f gets right,
/// measured against the first `reference_per_class` samples of that class in
/// `reference`.
pub fn disagreement_report(
    bundle: &ModelBundle,
    data: &Dataset,
    reference: &Dataset,
    opts: &DisagreementOptions,
) -> Result<DisagreementReport> {
    let classes = bundle.classes();
    if opts.k == 0 || opts.k > classes {
        return Err(Error::InvalidArgument(format!("k must lie in 1..={classes}, got {}", opts.k)));
    }
    if data.is_empty() {
        return Err(Error::Empty("disagreement dataset"));
    }
    let p = bundle.predict_chunked(&data.images, CHUNK)?;
    let f = p.f_classes();
    let dim = data.images.len() / data.len();
    let dirs = random_directions(dim, opts.directions, opts.seed);
    let mut references: Vec<Option<Array2<f64>>> = vec![None; classes];
    let mut class_median_depth = vec![None; classes];
    let mut entries = Vec::new();
    for (i, row) in p.g_probs.rows().into_iter().enumerate() {
        let row = row.as_slice().unwrap();
        if rank_of(row, f[i]) < opts.k {
            continue;
        }
        let mut order: Vec<usize> = (0..classes).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        order.truncate(opts.k);
        let f_correct = f[i] == data.labels[i];
        let mut depth = None;
        if f_correct {
            let c = f[i];
            if references[c].is_none() {
                let ids: Vec<usize> = reference
                    .indices_of_class(c)
                    .into_iter()
                    .take(opts.reference_per_class)
                    .collect();
                if ids.len() >= 3 {
                    let refs = flatten(reference, &ids);
                    let mut own: Vec<f64> = refs
                        .rows()
                        .into_iter()
                        .map(|r| projection_depth_with_directions(r.as_slice().unwrap(), &refs, &dirs))
                        .collect::<Result<_>>()?;
                    class_median_depth[c] = Some(median(&mut own));
                    references[c] = Some(refs);
                }
            }
            if let Some(refs) = &references[c] {
                let x = flatten(data, &[i]);
                depth = Some(projection_depth_with_directions(x.row(0).as_slice().unwrap(), refs, &dirs)?);
            }
        }
        entries.push(DisagreementEntry {
            sample_id: i,
            label: data.labels[i],
            f_class: f[i],
            g_top: order,
            f_correct,
            depth,
        });
    }
    Ok(DisagreementReport {
        k: opts.k,
        samples: data.len(),
        entries,
        class_median_depth,
        direction_count: opts.directions,
        seed: opts.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn fidelity_cases() {
        assert_eq!(fidelity(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(fidelity(&[0, 1, 1, 0], &[1, 0, 0, 1]).unwrap(), 0.0);
        assert!(fidelity(&[0], &[0, 1]).is_err());
        assert!(fidelity(&[], &[]).is_err());
    }

    #[test]
    fn top_k_cases() {
        let g = array![[0.5, 0.3, 0.2], [0.2, 0.2, 0.6], [0.1, 0.6, 0.3]];
        let f = [1, 0, 1];
        assert_eq!(top_k_fidelity(&f, &g, 3).unwrap(), 1.0);
        assert_eq!(top_k_fidelity(&f, &g, 1).unwrap(), fidelity(&f, &argmax_rows(&g)).unwrap());
        // Ties at 0.2 rank class 0 ahead of class 1.
        assert!((top_k_fidelity(&f, &g, 2).unwrap() - 1.0).abs() < 1e-15);
        assert!((top_k_fidelity(&[1, 1, 1], &g, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(top_k_fidelity(&f, &g, 0).is_err());
        assert!(top_k_fidelity(&f, &g, 4).is_err());
    }

    #[test]
    fn conciseness_cases() {
        let c = conciseness_curve(&[vec![1.0, 0.3, 0.05]], &[0.2, 0.5]).unwrap();
        assert_eq!(c.values, vec![2.0, 1.0]);
        let z = conciseness_curve(&vec![vec![0.0; 4]; 3], &[0.1, 0.9]).unwrap();
        assert_eq!(z.values, vec![0.0, 0.0]);
        assert!(conciseness_curve(&[], &[0.2]).is_err());
        assert!(conciseness_curve(&[vec![1.0]], &[1.0]).is_err());
    }

    #[test]
    fn depth_of_symmetric_cloud_centre_is_one() {
        let data = array![[1.0, 2.0], [-1.0, -2.0], [3.0, -1.0], [-3.0, 1.0], [0.5, 0.5], [-0.5, -0.5]];
        let d = projection_depth(&[0.0, 0.0], &data, 200, 3).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn one_dimensional_closed_form() {
        let values = [0.3, 1.7, -2.0, 4.5, 0.9, 1.1, -0.4];
        let data = Array2::from_shape_vec((7, 1), values.to_vec()).unwrap();
        let mut v = values.to_vec();
        let med = median(&mut v);
        let mut dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
        let mad = median(&mut dev);
        for x in [-3.0, 0.0, 0.9, 2.5] {
            let expected = 1.0 / (1.0 + (x - med).abs() / mad);
            for k in [1, 5] {
                assert_eq!(projection_depth(&[x], &data, k, 11).unwrap(), expected);
            }
        }
    }

    #[test]
    fn zero_mad_directions() {
        let data = array![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]];
        let dirs = array![[0.0, 1.0]];
        assert_eq!(projection_depth_with_directions(&[2.0, 1.0], &data, &dirs).unwrap(), 0.0);
        assert!(projection_depth_with_directions(&[2.0, 0.0], &data, &dirs).is_err());
        let both = array![[0.0, 1.0], [1.0, 0.0]];
        assert!(projection_depth_with_directions(&[2.5, 0.0], &data, &both).unwrap() > 0.0);
        assert!(projection_depth(&[0.0, 0.0], &data.slice(ndarray::s![..2, ..]).to_owned(), 5, 0).is_err());
    }

    #[test]
    fn outlier_ranks_below_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = Array2::from_shape_fn((60, 2), |_| StandardNormal.sample(&mut rng));
        let outlier = projection_depth(&[8.0, -7.0], &cloud, 500, 1).unwrap();
        for row in cloud.rows() {
            assert!(outlier < projection_depth(row.as_slice().unwrap(), &cloud, 500, 1).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn depth_in_unit_interval(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = Array2::from_shape_fn((10, 3), |_| rng.random_range(-1.0..1.0));
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let d = projection_depth(&x, &data, 50, seed).unwrap();
            prop_assert!(d > 0.0 && d <= 1.0);
        }

        #[test]
        fn top_k_monotone(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Array2::from_shape_fn((20, 5), |_| rng.random::<f64>());
            let f: Vec<usize> = (0..20).map(|_| rng.random_range(0..5)).collect();
            let mut last = 0.0;
            for k in 1..=5 {
                let v = top_k_fidelity(&f, &g, k).unwrap();
                prop_assert!(v >= last);
                last = v;
            }
            prop_assert_eq!(last, 1.0);
        }

        #[test]
        fn conciseness_non_increasing(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rs: Vec<Vec<f64>> = (0..10).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let ts: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
            let c = conciseness_curve(&rs, &ts).unwrap();
            for w in c.values.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            prop_assert!(c.values.iter().all(|v| (0.0..=6.0).contains(v)));
        }
    }
}
