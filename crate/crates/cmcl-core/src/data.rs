//! Synthetic dataset generators, delimited-text ingestion, normalization,
//! splitting and seeded batching.
//!
//! Delimited format: comma-separated UTF-8, one example per line, no header.
//! With the label-first schema the first column is the integer class label
//! and the remaining columns are decimal features.

use std::fmt::Write as _;
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeds::{self, STREAM_SHUFFLE, STREAM_SPLIT};

/// Distance of generated cluster centers from the origin.
const CLUSTER_RADIUS: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize, name: &str) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Input("dataset has no examples".into()));
        }
        if labels.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if !features.is_finite() {
            return Err(Error::Input("features contain non-finite values".into()));
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
            name: name.to_owned(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Indices into the parent dataset.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Deterministic center for class `c` of `classes`: evenly spaced on a
/// circle of radius [`CLUSTER_RADIUS`] in the first two dimensions (a line
/// for one-dimensional data).
fn cluster_center(c: usize, classes: usize, dim: usize) -> Vec<f64> {
    let mut center = vec![0.0; dim];
    if dim == 1 {
        center[0] = CLUSTER_RADIUS * c as f64;
    } else {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
        center[0] = CLUSTER_RADIUS * angle.cos();
        center[1] = CLUSTER_RADIUS * angle.sin();
    }
    center
}

/// Isotropic Gaussian blobs, one per class, balanced labels.
pub fn gen_gaussian_clusters(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    if per_class == 0 || dim == 0 {
        return Err(Error::Config("per_class and dim must be at least 1".into()));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::Config(format!("spread must be non-negative, got {spread}")));
    }
    let mut rng = StdRng::seed_from_u64(seeds::derive(seed, &[seeds::STREAM_DATASET, 0]));
    let mut rows = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let center = cluster_center(c, classes, dim);
        for _ in 0..per_class {
            let row: Vec<f64> = center
                .iter()
                .map(|&mu| mu + spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            rows.push(row);
            labels.push(c);
        }
    }
    Dataset::new(
        Matrix::from_rows(&rows)?,
        labels,
        classes,
        &format!("clusters-c{classes}-n{per_class}"),
    )
}

/// Concentric rings with radial noise; class `c` sits at radius `c + 1`.
pub fn gen_rings(classes: usize, per_class: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    if per_class == 0 {
        return Err(Error::Config("per_class must be at least 1".into()));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::Config(format!("noise must be non-negative, got {noise}")));
    }
    let mut rng = StdRng::seed_from_u64(seeds::derive(seed, &[seeds::STREAM_DATASET, 1]));
    let radial = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let base = (c + 1) as f64;
        for _ in 0..per_class {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = base + noise * radial.sample(&mut rng);
            rows.push(vec![r * angle.cos(), r * angle.sin()]);
            labels.push(c);
        }
    }
    Dataset::new(
        Matrix::from_rows(&rows)?,
        labels,
        classes,
        &format!("rings-c{classes}-n{per_class}"),
    )
}

/// Loads a comma-separated dataset. `label_first` selects whether the label
/// is the first or the last column. Class count is the maximum label + 1.
pub fn load_delimited(path: &Path, label_first: bool) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_delimited(&text, label_first, &path.display().to_string())
}

pub fn parse_delimited(text: &str, label_first: bool, name: &str) -> Result<Dataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "blank line".into(),
            });
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                message: "need a label and at least one feature".into(),
            });
        }
        match width {
            Some(w) if w != cells.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("row has {} columns, expected {w}", cells.len()),
                });
            }
            None => width = Some(cells.len()),
            _ => {}
        }
        let (label_cell, feature_cells) = if label_first {
            (cells[0], &cells[1..])
        } else {
            (cells[cells.len() - 1], &cells[..cells.len() - 1])
        };
        let label: usize = label_cell.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("label {label_cell:?} is not a non-negative integer"),
        })?;
        let mut row = Vec::with_capacity(feature_cells.len());
        for cell in feature_cells {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("feature {cell:?} is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("feature {cell:?} is not finite"),
                });
            }
            row.push(value);
        }
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "file is empty".into(),
        });
    }
    let class_count = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(Matrix::from_rows(&rows)?, labels, class_count, name)
}

/// Writes a dataset in the delimited format; floats use the shortest
/// representation that parses back to the same value.
pub fn save_delimited(dataset: &Dataset, path: &Path, label_first: bool) -> Result<()> {
    std::fs::write(path, to_delimited(dataset, label_first))?;
    Ok(())
}

pub fn to_delimited(dataset: &Dataset, label_first: bool) -> String {
    let mut out = String::new();
    for i in 0..dataset.len() {
        let row = dataset.features.row(i);
        if label_first {
            let _ = write!(out, "{}", dataset.labels[i]);
            for v in row {
                let _ = write!(out, ",{v}");
            }
        } else {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            let _ = write!(out, ",{}", dataset.labels[i]);
        }
        out.push('\n');
    }
    out
}

/// Global contrast normalization: per example, subtract the feature mean
/// and divide by the centered L2 norm, floored at `epsilon`.
pub fn gcn_normalize(dataset: &Dataset, epsilon: f64) -> Result<Dataset> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut features = dataset.features.clone();
    let dim = features.cols() as f64;
    for i in 0..features.rows() {
        let row = features.row_mut(i);
        let mean: f64 = row.iter().sum::<f64>() / dim;
        for v in row.iter_mut() {
            *v -= mean;
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = norm.max(epsilon);
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    Dataset::new(
        features,
        dataset.labels.clone(),
        dataset.class_count,
        &dataset.name,
    )
}

/// Splits into train/test with a seeded shuffle. The test side receives
/// `round(N * test_fraction)` examples; both sides must end up non-empty.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = dataset.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} leaves an empty split for {n} examples"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = StdRng::seed_from_u64(seeds::derive(seed, &[STREAM_SPLIT]));
    indices.shuffle(&mut rng);
    let take = |slice: &[usize], suffix: &str| -> Result<Dataset> {
        let rows: Vec<Vec<f64>> = slice.iter().map(|&i| dataset.features.row(i).to_vec()).collect();
        let labels: Vec<usize> = slice.iter().map(|&i| dataset.labels[i]).collect();
        Dataset::new(
            Matrix::from_rows(&rows)?,
            labels,
            dataset.class_count,
            &format!("{}/{suffix}", dataset.name),
        )
    };
    let test = take(&indices[..n_test], "test")?;
    let train = take(&indices[n_test..], "train")?;
    Ok((train, test))
}

/// Seeded epoch batching: a fresh permutation per `(seed, epoch)`, every
/// example exactly once, short final batch retained.
pub fn batches(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = StdRng::seed_from_u64(seeds::derive(seed, &[STREAM_SHUFFLE, epoch]));
    order.shuffle(&mut rng);
    let mut out = Vec::with_capacity(dataset.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| dataset.features.row(i).to_vec()).collect();
        out.push(Batch {
            features: Matrix::from_rows(&rows)?,
            labels: chunk.iter().map(|&i| dataset.labels[i]).collect(),
            indices: chunk.to_vec(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clusters_are_balanced_and_seeded() {
        let a = gen_gaussian_clusters(4, 100, 2, 0.8, 11).unwrap();
        assert_eq!(a.len(), 400);
        for c in 0..4 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 100);
        }
        let b = gen_gaussian_clusters(4, 100, 2, 0.8, 11).unwrap();
        assert_eq!(a.features, b.features);
        let c = gen_gaussian_clusters(4, 100, 2, 0.8, 12).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn zero_spread_collapses_to_centers() {
        let d = gen_gaussian_clusters(3, 5, 2, 0.0, 0).unwrap();
        for i in 0..d.len() {
            let expected = cluster_center(d.labels[i], 3, 2);
            assert_eq!(d.features.row(i), expected.as_slice());
        }
    }

    #[test]
    fn rings_sit_on_exact_radii_without_noise() {
        let d = gen_rings(2, 50, 0.0, 3).unwrap();
        for i in 0..d.len() {
            let row = d.features.row(i);
            let r = (row[0] * row[0] + row[1] * row[1]).sqrt();
            let expected = (d.labels[i] + 1) as f64;
            assert!((r - expected).abs() < 1e-9, "radius {r} vs {expected}");
        }
        assert_eq!(d.labels.iter().filter(|&&l| l == 0).count(), 50);
        let again = gen_rings(2, 50, 0.0, 3).unwrap();
        assert_eq!(d.features, again.features);
    }

    #[test]
    fn delimited_parsing_and_errors() {
        let d = parse_delimited("0,1.0,2.0\n1,3.0,4.0\n", true, "inline").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.class_count, 2);
        assert_eq!(d.labels, vec![0, 1]);

        match parse_delimited("", true, "empty") {
            Err(Error::Parse { message, .. }) => assert!(message.contains("empty")),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_delimited("0,1.0\n1,2.0,3.0\n", true, "ragged") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_delimited("0,abc\n", true, "bad-cell") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn delimited_round_trip_is_identity() {
        let d = gen_gaussian_clusters(3, 7, 4, 1.3, 99).unwrap();
        let text = to_delimited(&d, true);
        let back = parse_delimited(&text, true, &d.name).unwrap();
        assert_eq!(d.features, back.features);
        assert_eq!(d.labels, back.labels);

        let text_last = to_delimited(&d, false);
        let back_last = parse_delimited(&text_last, false, &d.name).unwrap();
        assert_eq!(d.features, back_last.features);
        assert_eq!(d.labels, back_last.labels);
    }

    #[test]
    fn gcn_centers_and_normalizes() {
        let features = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![5.0, 5.0, 5.0]]).unwrap();
        let d = Dataset::new(features, vec![0, 1], 2, "t").unwrap();
        let g = gcn_normalize(&d, 1e-8).unwrap();
        // Constant row maps to zero.
        assert!(g.features.row(1).iter().all(|&v| v == 0.0));
        // Non-degenerate row: zero mean, unit norm.
        let row = g.features.row(0);
        let mean: f64 = row.iter().sum::<f64>() / 3.0;
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((norm - 1.0).abs() < 1e-12);
        // Idempotent on non-degenerate rows.
        let gg = gcn_normalize(&g, 1e-8).unwrap();
        for (a, b) in g.features.row(0).iter().zip(gg.features.row(0)) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(gcn_normalize(&d, 0.0).is_err());
    }

    #[test]
    fn batching_covers_every_index_once() {
        let d = gen_gaussian_clusters(2, 5, 2, 1.0, 5).unwrap();
        let bs = batches(&d, 3, 40, 0).unwrap();
        let sizes: Vec<usize> = bs.iter().map(Batch::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let mut seen: Vec<usize> = bs.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let again = batches(&d, 3, 40, 0).unwrap();
        for (a, b) in bs.iter().zip(&again) {
            assert_eq!(a.indices, b.indices);
        }
        let other_epoch = batches(&d, 3, 40, 1).unwrap();
        assert_ne!(
            bs.iter().flat_map(|b| b.indices.clone()).collect::<Vec<_>>(),
            other_epoch
                .iter()
                .flat_map(|b| b.indices.clone())
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn split_is_seeded_and_keeps_class_count() {
        let d = gen_gaussian_clusters(4, 125, 2, 1.0, 8).unwrap();
        let (train, test) = split(&d, 0.2, 8).unwrap();
        assert_eq!(train.len(), 400);
        assert_eq!(test.len(), 100);
        assert_eq!(train.class_count, 4);
        let (train2, _) = split(&d, 0.2, 8).unwrap();
        assert_eq!(train.features, train2.features);
        assert!(split(&d, 0.0, 8).is_err());
        assert!(split(&d, 1.0, 8).is_err());
    }

    proptest! {
        #[test]
        fn batching_partition_property(
            n in 1usize..60,
            batch_size in 1usize..20,
            seed in 0u64..500,
            epoch in 0u64..8,
        ) {
            let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, 1.0]).collect();
            let d = Dataset::new(
                Matrix::from_rows(&rows).unwrap(),
                vec![0; n],
                1,
                "prop",
            ).unwrap();
            let bs = batches(&d, batch_size, seed, epoch).unwrap();
            let mut seen: Vec<usize> = bs.iter().flat_map(|b| b.indices.clone()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            for b in &bs {
                prop_assert!(b.len() <= batch_size);
            }
        }
    }
}
