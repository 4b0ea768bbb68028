//! Datasets, train/test splits and per-agent partitions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::PartitionScheme;
use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::{Matrix, RngStream};
use crate::nn::{self, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Regression targets (`samples × outputs`); `None` for classification.
    pub targets: Option<Matrix>,
}

impl Dataset {
    pub fn classification(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return dim_err(format!("{} labels for {} samples", labels.len(), features.rows()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return invalid(format!("label {bad} outside [0, {num_classes})"));
        }
        if features.rows() < num_classes {
            return invalid(format!(
                "{} samples for {num_classes} classes",
                features.rows()
            ));
        }
        features.ensure_finite("features")?;
        Ok(Self {
            features,
            labels,
            num_classes,
            targets: None,
        })
    }

    pub fn regression(features: Matrix, targets: Matrix) -> Result<Self> {
        if targets.rows() != features.rows() {
            return dim_err(format!("{} targets for {} samples", targets.rows(), features.rows()));
        }
        if features.rows() == 0 {
            return invalid("empty regression dataset");
        }
        Ok(Self {
            labels: vec![0; features.rows()],
            features,
            num_classes: 1,
            targets: Some(targets),
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn is_regression(&self) -> bool {
        self.targets.is_some()
    }

    /// Width of the model output layer.
    pub fn output_dim(&self) -> usize {
        self.targets.as_ref().map_or(self.num_classes, Matrix::cols)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            targets: self.targets.as_ref().map(|t| t.select_rows(idx)),
        }
    }

    pub fn class_histogram(&self, idx: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &i in idx {
            h[self.labels[i]] += 1;
        }
        h
    }

    /// Indices of each class, ascending.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    /// Mean loss and gradient over the rows `idx`.
    pub fn loss_and_grad(&self, model: &ModelParams, idx: &[usize]) -> Result<(f64, nn::GradientSet)> {
        let x = self.features.select_rows(idx);
        match &self.targets {
            Some(t) => nn::mse_loss_and_grad(model, &x, &t.select_rows(idx)),
            None => {
                let y: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
                nn::loss_and_grad(model, &x, &y)
            }
        }
    }

    /// Loss over the whole set and, for classification, accuracy.
    pub fn evaluate(&self, model: &ModelParams) -> Result<(f64, Option<f64>)> {
        match &self.targets {
            Some(t) => Ok((nn::mse(model, &self.features, t)?, None)),
            None => Ok((
                nn::cross_entropy(model, &self.features, &self.labels)?,
                Some(nn::accuracy(model, &self.features, &self.labels)?),
            )),
        }
    }
}

/// Orthonormal directions (Gram–Schmidt on Gaussian draws) when
/// `classes ≤ dims`, independent random unit vectors otherwise.
fn class_means(classes: usize, dims: usize, separation: f64, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let radius = separation / std::f64::consts::SQRT_2;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut v: Vec<f64> = (0..dims).map(|_| rng.standard_normal()).collect();
        if basis.len() < dims {
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    basis
        .into_iter()
        .map(|v| v.into_iter().map(|x| radius * x).collect())
        .collect()
}

/// Unit-covariance Gaussian clusters whose means are pairwise `separation`
/// apart (exactly when `classes ≤ dims`). Samples are interleaved by class.
pub fn make_synthetic(
    num_classes: usize,
    dims: usize,
    samples_per_class: usize,
    separation: f64,
    rng: &mut RngStream,
) -> Result<Dataset> {
    if samples_per_class < 1 {
        return invalid("samples_per_class must be ≥ 1");
    }
    if num_classes < 1 || dims < 1 {
        return invalid("num_classes and dims must be ≥ 1");
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return invalid(format!("separation must be ≥ 0, got {separation}"));
    }
    let means = class_means(num_classes, dims, separation, rng);
    let rows = num_classes * samples_per_class;
    let mut data = Vec::with_capacity(rows * dims);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..samples_per_class {
        for (c, mu) in means.iter().enumerate() {
            data.extend(mu.iter().map(|m| m + rng.standard_normal()));
            labels.push(c);
        }
    }
    Dataset::classification(Matrix::from_vec(rows, dims, data)?, labels, num_classes)
}

/// `y = W*x + b* + noise` with standard normal features.
pub fn make_regression(
    samples: usize,
    dims: usize,
    outputs: usize,
    noise: f64,
    rng: &mut RngStream,
) -> Result<Dataset> {
    if samples < 1 || dims < 1 || outputs < 1 {
        return invalid("regression needs samples, dims and outputs ≥ 1");
    }
    let scale = 1.0 / (dims as f64).sqrt();
    let w = Matrix::from_vec(outputs, dims, rng.normal(outputs * dims, 0.0, scale)?)?;
    let b = rng.normal(outputs, 0.0, 1.0)?;
    let x = Matrix::from_vec(samples, dims, rng.normal(samples * dims, 0.0, 1.0)?)?;
    let mut y = x.matmul_transposed(&w)?;
    for r in 0..samples {
        for (v, bo) in y.row_mut(r).iter_mut().zip(&b) {
            *v += bo + noise * rng.standard_normal();
        }
    }
    Dataset::regression(x, y)
}

/// Header row, numeric feature columns, integer label in the last column.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        let line = row + 2;
        if record.len() < 2 {
            return invalid(format!("line {line}: need at least one feature and a label"));
        }
        if *width.get_or_insert(record.len()) != record.len() {
            return invalid(format!("line {line}: {} columns, expected {}", record.len(), width.unwrap_or(0)));
        }
        for field in record.iter().take(record.len() - 1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("line {line}: '{field}' is not a number")))?;
            data.push(v);
        }
        let label = &record[record.len() - 1];
        labels.push(
            label
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidInput(format!("line {line}: label '{label}' is not a class index")))?,
        );
    }
    let Some(width) = width else {
        return invalid(format!("{} has no data rows", path.display()));
    };
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::classification(Matrix::from_vec(labels.len(), width - 1, data)?, labels, classes)
}

/// Stratified split: `round(fraction · count)` samples of every class go to
/// the test set.
pub fn train_test_split(ds: &Dataset, test_fraction: f64, rng: &mut RngStream) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return invalid(format!("test_fraction must be in [0, 1), got {test_fraction}"));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut idx in ds.class_indices() {
        rng.shuffle(&mut idx);
        let cut = (test_fraction * idx.len() as f64).round() as usize;
        test.extend_from_slice(&idx[..cut]);
        train.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    /// Ascending training-set indices per agent.
    pub shards: Vec<Vec<usize>>,
    pub scheme: PartitionScheme,
}

impl Partition {
    pub fn n_agents(&self) -> usize {
        self.shards.len()
    }
}

/// `iid` deals every class round-robin across agents (rotating the start so
/// totals stay balanced); `class_shard` shuffles the classes and hands each
/// agent a contiguous block of `⌊C/N⌋` or `⌈C/N⌉` of them.
pub fn partition(ds: &Dataset, n_agents: usize, scheme: PartitionScheme, rng: &mut RngStream) -> Result<Partition> {
    if n_agents < 1 {
        return invalid("partition needs at least one agent");
    }
    let mut shards = vec![Vec::new(); n_agents];
    match scheme {
        PartitionScheme::Iid => {
            let mut offset = 0;
            for mut idx in ds.class_indices() {
                rng.shuffle(&mut idx);
                for (t, i) in idx.iter().enumerate() {
                    shards[(offset + t) % n_agents].push(*i);
                }
                offset = (offset + idx.len()) % n_agents;
            }
        }
        PartitionScheme::ClassShard => {
            let c = ds.num_classes;
            if c < n_agents {
                return invalid(format!("class_shard needs classes ≥ agents ({c} < {n_agents})"));
            }
            let mut order: Vec<usize> = (0..c).collect();
            rng.shuffle(&mut order);
            let by_class = ds.class_indices();
            for (a, shard) in shards.iter_mut().enumerate() {
                for &class in &order[a * c / n_agents..(a + 1) * c / n_agents] {
                    shard.extend_from_slice(&by_class[class]);
                }
            }
        }
    }
    for (a, s) in shards.iter_mut().enumerate() {
        if s.is_empty() {
            return invalid(format!("agent {a} received an empty shard"));
        }
        s.sort_unstable();
    }
    Ok(Partition { shards, scheme })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        let a = make_synthetic(4, 6, 20, 3.0, &mut RngStream::new(1, 0)).unwrap();
        let b = make_synthetic(4, 6, 20, 3.0, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 80);
    }

    #[test]
    fn means_are_separated() {
        let means = class_means(5, 8, 6.0, &mut RngStream::new(2, 0));
        for i in 0..5 {
            for j in i + 1..5 {
                let d: f64 = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b).powi(2)).sum();
                assert!((d.sqrt() - 6.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(make_synthetic(3, 4, 0, 1.0, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn iid_even_split() {
        let ds = make_synthetic(10, 4, 100, 1.0, &mut RngStream::new(3, 0)).unwrap();
        let p = partition(&ds, 5, PartitionScheme::Iid, &mut RngStream::new(3, 1)).unwrap();
        for s in &p.shards {
            assert_eq!(s.len(), 200);
            assert!(ds.class_histogram(s).iter().all(|&h| h == 20));
        }
    }

    #[test]
    fn iid_uneven_counts_stay_within_one() {
        let ds = make_synthetic(3, 2, 7, 1.0, &mut RngStream::new(4, 0)).unwrap();
        let p = partition(&ds, 4, PartitionScheme::Iid, &mut RngStream::new(4, 1)).unwrap();
        let mut all: Vec<usize> = p.shards.concat();
        all.sort_unstable();
        assert_eq!(all, (0..21).collect::<Vec<_>>());
        for s in &p.shards {
            for h in ds.class_histogram(s) {
                assert!((h as f64 - 7.0 / 4.0).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn class_shard_blocks() {
        let ds = make_synthetic(100, 4, 2, 1.0, &mut RngStream::new(5, 0)).unwrap();
        let p = partition(&ds, 5, PartitionScheme::ClassShard, &mut RngStream::new(5, 1)).unwrap();
        for s in &p.shards {
            assert_eq!(ds.class_histogram(s).iter().filter(|&&h| h > 0).count(), 20);
        }
        let ds = make_synthetic(7, 4, 2, 1.0, &mut RngStream::new(5, 0)).unwrap();
        let p = partition(&ds, 3, PartitionScheme::ClassShard, &mut RngStream::new(5, 1)).unwrap();
        for s in &p.shards {
            let c = ds.class_histogram(s).iter().filter(|&&h| h > 0).count();
            assert!(c == 2 || c == 3);
        }
    }

    #[test]
    fn single_agent_gets_everything() {
        let ds = make_synthetic(3, 2, 5, 1.0, &mut RngStream::new(6, 0)).unwrap();
        for scheme in [PartitionScheme::Iid, PartitionScheme::ClassShard] {
            let p = partition(&ds, 1, scheme, &mut RngStream::new(6, 1)).unwrap();
            assert_eq!(p.shards[0], (0..15).collect::<Vec<_>>());
        }
    }

    #[test]
    fn class_shard_needs_enough_classes() {
        let ds = make_synthetic(3, 2, 5, 1.0, &mut RngStream::new(6, 0)).unwrap();
        assert!(partition(&ds, 4, PartitionScheme::ClassShard, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn stratified_split() {
        let ds = make_synthetic(10, 4, 500, 4.0, &mut RngStream::new(7, 0)).unwrap();
        let (train, test) = train_test_split(&ds, 0.2, &mut RngStream::new(7, 1)).unwrap();
        assert_eq!(train.len(), 4000);
        assert_eq!(test.len(), 1000);
        assert!(test.class_histogram(&(0..1000).collect::<Vec<_>>()).iter().all(|&h| h == 100));
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("dimat-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.csv");
        std::fs::write(&path, "a,b,label\n1.5,2,0\n-1,0.25,1\n3,3,1\n").unwrap();
        let ds = load_csv(&path).unwrap();
        assert_eq!(ds.features.shape(), (3, 2));
        assert_eq!(ds.labels, vec![0, 1, 1]);
        assert_eq!(ds.num_classes, 2);
        std::fs::write(&path, "a,label\nx,0\n").unwrap();
        assert!(load_csv(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn regression_is_linear_plus_noise() {
        let ds = make_regression(50, 3, 2, 0.0, &mut RngStream::new(8, 0)).unwrap();
        assert!(ds.is_regression());
        assert_eq!(ds.output_dim(), 2);
        assert_eq!(ds.targets.as_ref().unwrap().shape(), (50, 2));
    }
}
