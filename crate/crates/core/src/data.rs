//! Datasets: IDX ingestion, a synthetic shapes corpus, class manifests and
//! seeded mini-batch streams with optional augmentation.

use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{s, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Labelled images in `[0, 1]`, stored as `(N, C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Array4<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub split: Split,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        images: Array4<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        split: Split,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if images.shape()[0] != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Data(format!("label {bad} out of range for {} classes", class_names.len())));
        }
        if let Some(bad) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Dataset {
            images,
            labels,
            class_names,
            split,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    /// `(C, H, W)` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, index: usize) -> Array3<f64> {
        self.images.index_axis(Axis(0), index).to_owned()
    }

    /// Images at `indices`, stacked in that order.
    pub fn gather(&self, indices: &[usize]) -> Array4<f64> {
        self.images.select(Axis(0), indices)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            split: self.split,
            provenance: format!("{} (subset of {})", self.provenance, indices.len()),
        }
    }

    /// Indices of the samples labelled `class`, ascending.
    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Data(format!("{what}: truncated header")))
}

/// Parses an IDX image file into `(N, H, W)` raw bytes.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Array3<u8>> {
    let magic = read_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Data(format!("images: bad magic {magic:#010x}")));
    }
    let n = read_u32(bytes, 4, "images")? as usize;
    let h = read_u32(bytes, 8, "images")? as usize;
    let w = read_u32(bytes, 12, "images")? as usize;
    let body = &bytes[16..];
    let expected = n * h * w;
    if body.len() < expected {
        return Err(Error::Data(format!(
            "images: truncated payload ({} of {expected} bytes)",
            body.len()
        )));
    }
    Ok(Array3::from_shape_vec((n, h, w), body[..expected].to_vec()).unwrap())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Data(format!("labels: bad magic {magic:#010x}")));
    }
    let n = read_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Data(format!("labels: truncated payload ({} of {n} bytes)", body.len())));
    }
    Ok(body[..n].to_vec())
}

/// Builds a dataset from the contents of an IDX image file and label file.
pub fn dataset_from_idx(images: &[u8], labels: &[u8], split: Split, provenance: &str) -> Result<Dataset> {
    let raw = parse_idx_images(images)?;
    let labels = parse_idx_labels(labels)?;
    if raw.shape()[0] != labels.len() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            raw.shape()[0],
            labels.len()
        )));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let (n, h, w) = raw.dim();
    let images = raw.mapv(|b| b as f64 / 255.0).into_shape_with_order((n, 1, h, w)).unwrap();
    Dataset::new(
        images,
        labels.into_iter().map(usize::from).collect(),
        (0..classes).map(|c| c.to_string()).collect(),
        split,
        provenance,
    )
}

pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    dataset_from_idx(&images, &labels, split, &images_path.display().to_string())
}

/// Pixel byte used when quantizing a `[0, 1]` value to IDX.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Serializes single-channel images as IDX, quantizing pixels to bytes.
pub fn idx_image_bytes(images: &Array4<f64>) -> Result<Vec<u8>> {
    let (n, c, h, w) = images.dim();
    if c != 1 {
        return Err(Error::Data(format!("IDX images are single-channel, got {c} channels")));
    }
    let mut out = Vec::with_capacity(16 + n * h * w);
    for v in [IDX_IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn idx_label_bytes(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::Data(format!("label {l} does not fit in a byte")))?);
    }
    Ok(out)
}

pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    fs::write(images_path, idx_image_bytes(&dataset.images)?)?;
    fs::write(labels_path, idx_label_bytes(&dataset.labels)?)?;
    Ok(())
}

/// Loads a manifest of `class_name<TAB>path` lines, where each path is an IDX
/// image file holding samples of that class. Classes are numbered in order of
/// first appearance; blank lines and `#` comments are ignored.
pub fn load_manifest(path: &Path, split: Split) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut class_names: Vec<String> = Vec::new();
    let mut blocks = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, file) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("{}:{}: expected class_name<TAB>path", path.display(), lineno + 1)))?;
        let class = match class_names.iter().position(|c| c == name) {
            Some(c) => c,
            None => {
                class_names.push(name.to_string());
                class_names.len() - 1
            }
        };
        let raw = parse_idx_images(&fs::read(base.join(file))?)?;
        labels.extend(std::iter::repeat_n(class, raw.shape()[0]));
        blocks.push(raw);
    }
    if blocks.is_empty() {
        return Err(Error::Data(format!("{}: manifest lists no files", path.display())));
    }
    let (_, h, w) = blocks[0].dim();
    if let Some(b) = blocks.iter().find(|b| b.dim().1 != h || b.dim().2 != w) {
        return Err(Error::Data(format!("manifest mixes {h}x{w} and {}x{} images", b.dim().1, b.dim().2)));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let raw = ndarray::concatenate(Axis(0), &views).unwrap();
    let n = raw.shape()[0];
    let images = raw.mapv(|b| b as f64 / 255.0).into_shape_with_order((n, 1, h, w)).unwrap();
    Dataset::new(images, labels, class_names, split, path.display().to_string())
}

/// Classes of the synthetic corpus, in label order.
pub const SHAPE_CLASSES: [&str; 4] = ["bar", "cross", "box", "disk"];

pub const SHAPE_SIZE: usize = 28;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Bar { half_len: f64, half_width: f64 },
    Cross { half_len: f64, half_width: f64 },
    Box { half_side: f64, stroke: f64 },
    Disk { radius: f64 },
}

impl Shape {
    fn random(class: usize, rng: &mut impl Rng) -> Shape {
        match class {
            0 => Shape::Bar {
                half_len: rng.random_range(7.0..11.0),
                half_width: rng.random_range(1.4..2.4),
            },
            1 => Shape::Cross {
                half_len: rng.random_range(6.0..10.0),
                half_width: rng.random_range(1.2..2.0),
            },
            2 => Shape::Box {
                half_side: rng.random_range(5.5..9.0),
                stroke: rng.random_range(1.5..2.5),
            },
            _ => Shape::Disk {
                radius: rng.random_range(4.5..8.5),
            },
        }
    }

    /// Whether the point `(u, v)` in shape-local coordinates is covered.
    fn covers(&self, u: f64, v: f64) -> bool {
        let bar = |hl: f64, hw: f64, a: f64, b: f64| a.abs() <= hl && b.abs() <= hw;
        match *self {
            Shape::Bar { half_len, half_width } => bar(half_len, half_width, u, v),
            Shape::Cross { half_len, half_width } => {
                bar(half_len, half_width, u, v) || bar(half_len, half_width, v, u)
            }
            Shape::Box { half_side, stroke } => {
                let m = u.abs().max(v.abs());
                m <= half_side && m >= half_side - stroke
            }
            Shape::Disk { radius } => u * u + v * v <= radius * radius,
        }
    }
}

fn render_shape(class: usize, rng: &mut impl Rng, noise: &Normal<f64>) -> Vec<f64> {
    let shape = Shape::random(class, rng);
    let centre = SHAPE_SIZE as f64 / 2.0;
    let cx = centre + rng.random_range(-3.5..3.5);
    let cy = centre + rng.random_range(-3.5..3.5);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (sin, cos) = angle.sin_cos();
    let intensity = rng.random_range(0.7..1.0);
    let sub = [0.25, 0.75];
    let mut out = Vec::with_capacity(SHAPE_SIZE * SHAPE_SIZE);
    for py in 0..SHAPE_SIZE {
        for px in 0..SHAPE_SIZE {
            let mut hits = 0;
            for dy in sub {
                for dx in sub {
                    let x = px as f64 + dx - cx;
                    let y = py as f64 + dy - cy;
                    if shape.covers(cos * x + sin * y, -sin * x + cos * y) {
                        hits += 1;
                    }
                }
            }
            let v = intensity * hits as f64 / 4.0 + noise.sample(rng);
            out.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

/// Balanced 28×28 renderings of bars, crosses, boxes and disks with jittered
/// position, size, rotation and intensity plus mild pixel noise. Samples are
/// interleaved by class.
pub fn synth_shapes(n_per_class: usize, seed: u64, split: Split) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be at least 1".into()));
    }
    let classes = SHAPE_CLASSES.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.04).unwrap();
    let n = n_per_class * classes;
    let mut pixels = Vec::with_capacity(n * SHAPE_SIZE * SHAPE_SIZE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        pixels.extend(render_shape(class, &mut rng, &noise));
        labels.push(class);
    }
    let images = Array4::from_shape_vec((n, 1, SHAPE_SIZE, SHAPE_SIZE), pixels).unwrap();
    Dataset::new(
        images,
        labels,
        SHAPE_CLASSES.iter().map(|s| s.to_string()).collect(),
        split,
        format!("synth-shapes(n_per_class={n_per_class}, seed={seed})"),
    )
}

/// Train and test corpora drawn from disjoint random streams of one seed.
pub fn synth_shapes_split(train_per_class: usize, test_per_class: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let train = synth_shapes(train_per_class, seed, Split::Train)?;
    let test = synth_shapes(test_per_class, seed ^ 0x5EED_7E57_0000_0001, Split::Test)?;
    Ok((train, test))
}

/// Per-batch transformations applied by a [`BatchStream`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Preprocess {
    /// `(mean, std)` applied as `(x - mean) / std` after all other steps.
    pub normalize: Option<(f64, f64)>,
    /// Zero-pad by this many pixels on each side, then crop back at a random offset.
    pub pad_crop: Option<usize>,
    /// Mirror horizontally with probability 1/2.
    pub flip: bool,
}

impl Preprocess {
    pub fn validate(&self, shape: [usize; 3]) -> Result<()> {
        if let Some(p) = self.pad_crop {
            if p > shape[1] || p > shape[2] {
                return Err(Error::InvalidArgument(format!(
                    "pad {p} exceeds image size {}x{}",
                    shape[1], shape[2]
                )));
            }
        }
        if let Some((m, sd)) = self.normalize {
            if !m.is_finite() || !sd.is_finite() || sd <= 0.0 {
                return Err(Error::InvalidArgument(format!("invalid normalization ({m}, {sd})")));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == Preprocess::default()
    }
}

/// One mini-batch: images, labels, and the dataset indices they came from.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Array4<f64>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Seeded shuffled pass over a dataset, yielding augmented mini-batches.
pub struct BatchStream<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    position: usize,
    config: Preprocess,
    rng: ChaCha8Rng,
}

impl<'a> BatchStream<'a> {
    pub fn new(data: &'a Dataset, batch_size: usize, config: Preprocess, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        config.validate(data.image_shape())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        Ok(BatchStream {
            data,
            order,
            batch_size,
            position: 0,
            config,
            rng,
        })
    }

    /// The visiting order of this pass.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn batch_count(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    fn augment(&mut self, images: &mut Array4<f64>) {
        let (_, _, h, w) = images.dim();
        for mut img in images.outer_iter_mut() {
            if let Some(p) = self.config.pad_crop {
                let oy = self.rng.random_range(0..=2 * p);
                let ox = self.rng.random_range(0..=2 * p);
                let mut padded = Array3::zeros((img.shape()[0], h + 2 * p, w + 2 * p));
                padded.slice_mut(s![.., p..p + h, p..p + w]).assign(&img);
                img.assign(&padded.slice(s![.., oy..oy + h, ox..ox + w]));
            }
            if self.config.flip && self.rng.random_bool(0.5) {
                let flipped = img.slice(s![.., .., ..;-1]).to_owned();
                img.assign(&flipped);
            }
        }
        if let Some((m, sd)) = self.config.normalize {
            images.mapv_inplace(|v| (v - m) / sd);
        }
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.position >= self.order.len() {
            return None;
        }
        let end = (self.position + self.batch_size).min(self.order.len());
        let indices = self.order[self.position..end].to_vec();
        self.position = end;
        let mut images = self.data.gather(&indices);
        if !self.config.is_identity() {
            self.augment(&mut images);
        }
        let labels = indices.iter().map(|&i| self.data.labels[i]).collect();
        Some(Batch { images, labels, indices })
    }
}

/// Applies a stream's preprocessing deterministically to a whole dataset
/// (normalization only; random augmentation is a training-time concern).
pub fn normalize_images(images: &Array4<f64>, config: &Preprocess) -> Array4<f64> {
    match config.normalize {
        Some((m, sd)) => images.mapv(|v| (v - m) / sd),
        None => images.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut img = Vec::new();
        for v in [IDX_IMAGES_MAGIC, 4, 2, 3] {
            img.extend_from_slice(&v.to_be_bytes());
        }
        img.extend((0u8..24).map(|v| v * 10));
        let mut lab = Vec::new();
        for v in [IDX_LABELS_MAGIC, 4] {
            lab.extend_from_slice(&v.to_be_bytes());
        }
        lab.extend([3u8, 0, 2, 1]);
        (img, lab)
    }

    #[test]
    fn golden_fixture() {
        let (img, lab) = fixture();
        let d = dataset_from_idx(&img, &lab, Split::Train, "fixture").unwrap();
        assert_eq!(d.images.shape(), &[4, 1, 2, 3]);
        assert_eq!(d.labels, vec![3, 0, 2, 1]);
        assert_eq!(d.images[[1, 0, 0, 1]], 70.0 / 255.0);
        assert_eq!(d.classes(), 4);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let (mut img, lab) = fixture();
        img[3] = 0x04;
        assert!(matches!(dataset_from_idx(&img, &lab, Split::Train, ""), Err(Error::Data(m)) if m.contains("magic")));
        let (img, lab) = fixture();
        assert!(dataset_from_idx(&img[..30], &lab, Split::Train, "").is_err());
        assert!(dataset_from_idx(&img, &lab[..10], Split::Train, "").is_err());
        let mut short = lab.clone();
        short[7] = 3;
        short.truncate(11);
        assert!(matches!(dataset_from_idx(&img, &short, Split::Train, ""), Err(Error::Data(m)) if m.contains("4 images but 3")));
    }

    #[test]
    fn mnist_byte_count_arithmetic() {
        // The standard training image file is 16 header bytes plus 60000 28x28 images.
        assert_eq!(16 + 60000 * 28 * 28, 47_040_016);
        assert_eq!(8 + 60000, 60_008);
    }

    #[test]
    fn idx_round_trip_is_exact() {
        let d = synth_shapes(3, 1, Split::Train).unwrap();
        let img = idx_image_bytes(&d.images).unwrap();
        let lab = idx_label_bytes(&d.labels).unwrap();
        let back = dataset_from_idx(&img, &lab, Split::Train, "").unwrap();
        assert_eq!(back.labels, d.labels);
        for (a, b) in back.images.iter().zip(d.images.iter()) {
            assert_eq!(*a, quantize(*b) as f64 / 255.0);
        }
        assert_eq!(idx_image_bytes(&back.images).unwrap(), img);
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_balanced() {
        let a = synth_shapes(5, 9, Split::Train).unwrap();
        let b = synth_shapes(5, 9, Split::Train).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert_eq!(a.class_counts(), vec![5; 4]);
        assert_ne!(a.images, synth_shapes(5, 10, Split::Train).unwrap().images);
        assert!(a.images.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(synth_shapes(500, 0, Split::Train).unwrap().len(), 2000);
    }

    #[test]
    fn synthetic_shapes_have_ink() {
        let d = synth_shapes(10, 3, Split::Train).unwrap();
        for img in d.images.outer_iter() {
            assert!(img.iter().filter(|&&v| v > 0.5).count() > 20);
        }
    }

    #[test]
    fn manifest_loading() {
        let dir = std::env::temp_dir().join(format!("flint-manifest-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let d = synth_shapes(2, 4, Split::Train).unwrap();
        let apples = d.subset(&[0, 4]);
        let pears = d.subset(&[1]);
        fs::write(dir.join("apple.idx"), idx_image_bytes(&apples.images).unwrap()).unwrap();
        fs::write(dir.join("pear.idx"), idx_image_bytes(&pears.images).unwrap()).unwrap();
        fs::write(dir.join("m.tsv"), "# fruit\napple\tapple.idx\npear\tpear.idx\n").unwrap();
        let m = load_manifest(&dir.join("m.tsv"), Split::Test).unwrap();
        assert_eq!(m.class_names, vec!["apple", "pear"]);
        assert_eq!(m.labels, vec![0, 0, 1]);
        fs::write(dir.join("bad.tsv"), "apple apple.idx\n").unwrap();
        assert!(load_manifest(&dir.join("bad.tsv"), Split::Test).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn stream_without_augmentation_replays_shuffled_dataset() {
        let d = synth_shapes(4, 2, Split::Train).unwrap();
        let stream = BatchStream::new(&d, 5, Preprocess::default(), 11).unwrap();
        let order = stream.order().to_vec();
        let batches: Vec<Batch> = stream.collect();
        assert_eq!(batches.len(), 4);
        let seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        assert_eq!(seen, order);
        let mut sorted = seen.clone();
        sorted.sort();
        assert_eq!(sorted, (0..16).collect::<Vec<_>>());
        for b in &batches {
            assert_eq!(b.images, d.gather(&b.indices));
        }
    }

    #[test]
    fn pad_crop_keeps_shape_and_rejects_large_pads() {
        let d = synth_shapes(2, 2, Split::Train).unwrap();
        let cfg = Preprocess {
            pad_crop: Some(2),
            flip: true,
            ..Default::default()
        };
        for b in BatchStream::new(&d, 3, cfg, 1).unwrap() {
            assert_eq!(&b.images.shape()[1..], &[1, 28, 28]);
            assert!(b.images.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let big = Preprocess {
            pad_crop: Some(29),
            ..Default::default()
        };
        assert!(BatchStream::new(&d, 3, big, 1).is_err());
    }

    #[test]
    fn flip_mirrors_columns() {
        let img = Array4::from_shape_fn((1, 1, 2, 3), |(_, _, y, x)| (y * 3 + x) as f64 / 10.0);
        let d = Dataset::new(img, vec![0], vec!["a".into()], Split::Train, "").unwrap();
        let cfg = Preprocess {
            flip: true,
            ..Default::default()
        };
        let outs: Vec<f64> = (0..16)
            .map(|seed| BatchStream::new(&d, 1, cfg, seed).unwrap().next().unwrap().images[[0, 0, 0, 0]])
            .collect();
        assert!(outs.contains(&0.0));
        assert!(outs.contains(&0.2));
    }

    proptest! {
        #[test]
        fn same_seed_same_batches(seed in 0u64..1000, pad in 0usize..4, flip: bool) {
            let d = synth_shapes(3, 5, Split::Train).unwrap();
            let cfg = Preprocess { normalize: Some((0.1, 0.3)), pad_crop: Some(pad), flip };
            let a: Vec<Batch> = BatchStream::new(&d, 4, cfg, seed).unwrap().collect();
            let b: Vec<Batch> = BatchStream::new(&d, 4, cfg, seed).unwrap().collect();
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(&x.images, &y.images);
                prop_assert_eq!(&x.labels, &y.labels);
                for (&i, &l) in x.indices.iter().zip(&x.labels) {
                    prop_assert_eq!(d.labels[i], l);
                }
                let lo = (0.0 - 0.1) / 0.3;
                let hi = (1.0 - 0.1) / 0.3;
                prop_assert!(x.images.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
            }
        }
    }
}
