//! Synthetic 10D benchmark: five isotropic Gaussian clusters carrying four
//! class labels, plus a handful of mislabeled noise points.
//!
//! | cluster | size | label | center            |
//! |---------|------|-------|-------------------|
//! | A       | 100  | 0     | origin            |
//! | B       | 100  | 1     | 1.5 along axis 0  |
//! | C       | 100  | 2     | 10 along axis 1   |
//! | D1      | 50   | 3     | 10 along axis 2   |
//! | D2      | 50   | 3     | 10 along axis 3   |
//! | noise   | 8    | 0     | drawn like D1/D2  |
//!
//! A and B overlap heavily; every other pair of centers is at least 10 apart.
//! Rows are emitted in the table order.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::classifier::{accuracy, predict_proba, stratified_split, train, MlpConfig, MlpModel};
use crate::error::Result;
use crate::model::{ClassProbabilityMatrix, FeatureMatrix};

pub const DIM: usize = 10;
pub const NOISE_POINTS: usize = 8;
pub const N_CLASSES: usize = 4;
pub const CLOSE_CENTER_DISTANCE: f64 = 1.5;
pub const FAR_CENTER_OFFSET: f64 = 10.0;
/// Held-out share for the classifier experiment.
pub const TEST_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cluster {
    A,
    B,
    C,
    D1,
    D2,
    /// Drawn from D1 or D2 but labeled 0.
    Noise,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub features: FeatureMatrix,
    /// Ground-truth class labels.
    pub labels: Vec<usize>,
    pub clusters: Vec<Cluster>,
}

pub fn cluster_center(cluster: Cluster) -> Array1<f64> {
    let mut c = Array1::zeros(DIM);
    match cluster {
        Cluster::A | Cluster::Noise => {}
        Cluster::B => c[0] = CLOSE_CENTER_DISTANCE,
        Cluster::C => c[1] = FAR_CENTER_OFFSET,
        Cluster::D1 => c[2] = FAR_CENTER_OFFSET,
        Cluster::D2 => c[3] = FAR_CENTER_OFFSET,
    }
    c
}

pub fn generate(seed: u64) -> SyntheticDataset {
    let plan: [(Cluster, usize, usize); 5] = [
        (Cluster::A, 100, 0),
        (Cluster::B, 100, 1),
        (Cluster::C, 100, 2),
        (Cluster::D1, 50, 3),
        (Cluster::D2, 50, 3),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = plan.iter().map(|p| p.1).sum::<usize>() + NOISE_POINTS;
    let mut values = Array2::zeros((n, DIM));
    let mut labels = Vec::with_capacity(n);
    let mut clusters = Vec::with_capacity(n);

    let mut row = 0;
    let mut emit = |center: Array1<f64>, cluster: Cluster, label: usize, rng: &mut ChaCha8Rng| {
        for k in 0..DIM {
            let z: f64 = StandardNormal.sample(rng);
            values[[row, k]] = center[k] + z;
        }
        labels.push(label);
        clusters.push(cluster);
        row += 1;
    };
    for (cluster, size, label) in plan {
        for _ in 0..size {
            emit(cluster_center(cluster), cluster, label, &mut rng);
        }
    }
    for i in 0..NOISE_POINTS {
        let source = if i % 2 == 0 { Cluster::D1 } else { Cluster::D2 };
        emit(cluster_center(source), Cluster::Noise, 0, &mut rng);
    }

    SyntheticDataset {
        features: FeatureMatrix::new(values).expect("generated values are finite"),
        labels,
        clusters,
    }
}

/// The dataset plus classifier outputs used as class probabilities.
#[derive(Debug, Clone)]
pub struct ClassifiedDataset {
    pub data: SyntheticDataset,
    pub model: MlpModel,
    /// Softmax outputs for every instance, train and test alike.
    pub probabilities: ClassProbabilityMatrix,
    pub test_accuracy: f64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Generates the dataset for `seed`, trains the classifier on a stratified
/// 70% split and predicts probabilities for all rows.
pub fn generate_classified(seed: u64, config: &MlpConfig) -> Result<ClassifiedDataset> {
    let data = generate(seed);
    let (train_indices, test_indices) = stratified_split(&data.labels, TEST_FRACTION, seed);
    let x = data.features.values();
    let pick = |idx: &[usize]| (x.select(ndarray::Axis(0), idx), idx.iter().map(|&i| data.labels[i]).collect::<Vec<_>>());
    let (x_train, y_train) = pick(&train_indices);
    let (x_test, y_test) = pick(&test_indices);
    let model = train(x_train.view(), &y_train, N_CLASSES, &MlpConfig { seed, ..config.clone() }, None)?;
    let test_accuracy = accuracy(&model, x_test.view(), &y_test)?;
    let probabilities = predict_proba(&model, x)?;
    Ok(ClassifiedDataset { data, model, probabilities, test_accuracy, train_indices, test_indices })
}
