//! RBF-kernel support vector machines, one binary machine per class in a
//! one-vs-rest scheme.
//!
//! The dual problems are solved with a maximal-violating-pair strategy:
//! each step picks the two points that most disagree about where the
//! decision threshold sits and optimizes their coefficients jointly in
//! closed form. Training is deterministic given the data order. The full
//! kernel matrix is materialized once and shared by all machines, which
//! is the right trade at the data sizes this crate targets; callers with
//! six-figure row counts should subsample first.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::numerics::DenseMatrix;

/// Kernel width selection. `Scale` mirrors the common library default
/// `1 / (d * var(X))` with the variance taken over every feature entry;
/// a constant feature matrix has no scale, so it falls back to 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaPolicy {
    Scale,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub gamma: GammaPolicy,
    /// KKT tolerance the dual optimizer drives each machine to.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            gamma: GammaPolicy::Scale,
            tol: 1e-3,
            max_iter: 100_000,
        }
    }
}

/// One trained one-vs-rest machine: positive class versus everything
/// else. `coefficients[k]` is `alpha_k * y_k` for the matching support
/// vector row, so the decision value is their kernel-weighted sum plus
/// the bias.
#[derive(Debug, Clone)]
pub struct BinaryMachine {
    pub class: usize,
    pub coefficients: Vec<f64>,
    pub support_vectors: DenseMatrix,
    /// Row indices of the support vectors in the training matrix.
    pub support_indices: Vec<usize>,
    pub bias: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl BinaryMachine {
    pub fn decision(&self, x: &[f64], gamma: f64) -> f64 {
        let mut value = self.bias;
        for (k, coeff) in self.coefficients.iter().enumerate() {
            value += coeff * (-gamma * sq_dist(self.support_vectors.row(k), x)).exp();
        }
        value
    }
}

#[derive(Debug, Clone)]
pub struct SvmModel {
    pub gamma: f64,
    pub c: f64,
    pub tol: f64,
    pub dim: usize,
    /// Distinct training labels in ascending order; machine `i` is the
    /// one-vs-rest machine for `classes[i]`.
    pub classes: Vec<usize>,
    pub machines: Vec<BinaryMachine>,
}

impl SvmModel {
    pub fn converged(&self) -> bool {
        self.machines.iter().all(|m| m.converged)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn resolve_gamma(policy: GammaPolicy, x: &DenseMatrix) -> Result<f64, EvalError> {
    match policy {
        GammaPolicy::Fixed(g) => {
            if g.is_finite() && g > 0.0 {
                Ok(g)
            } else {
                Err(EvalError::InvalidParam {
                    name: "gamma",
                    value: g,
                })
            }
        }
        GammaPolicy::Scale => {
            let data = x.data();
            let mean = data.iter().sum::<f64>() / data.len() as f64;
            let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / data.len() as f64;
            if var > 0.0 {
                Ok(1.0 / (x.cols() as f64 * var))
            } else {
                Ok(1.0)
            }
        }
    }
}

fn full_gram(x: &DenseMatrix, gamma: f64) -> DenseMatrix {
    let n = x.rows();
    let mut k = DenseMatrix::zeros(n, n);
    for i in 0..n {
        k.set(i, i, 1.0);
        for j in (i + 1)..n {
            let v = (-gamma * sq_dist(x.row(i), x.row(j))).exp();
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

/// Trains one one-vs-rest machine per class present in `y`.
pub fn svm_train(x: &DenseMatrix, y: &[usize], cfg: &SvmConfig) -> Result<SvmModel, EvalError> {
    if x.rows() != y.len() || x.rows() == 0 {
        return Err(EvalError::FeatureShape {
            rows: x.rows(),
            labels: y.len(),
        });
    }
    if !x.is_finite() {
        return Err(EvalError::NonFiniteFeatures);
    }
    if !(cfg.c.is_finite() && cfg.c > 0.0) {
        return Err(EvalError::InvalidParam {
            name: "C",
            value: cfg.c,
        });
    }
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(EvalError::SingleClass);
    }

    let gamma = resolve_gamma(cfg.gamma, x)?;
    let gram = full_gram(x, gamma);
    let machines = classes
        .iter()
        .map(|&class| {
            let ybin: Vec<f64> = y
                .iter()
                .map(|&label| if label == class { 1.0 } else { -1.0 })
                .collect();
            train_binary(x, &gram, &ybin, class, cfg)
        })
        .collect();
    Ok(SvmModel {
        gamma,
        c: cfg.c,
        tol: cfg.tol,
        dim: x.cols(),
        classes,
        machines,
    })
}

/// Rounds coefficients sitting within fp noise of a box bound onto the
/// bound, so the index sets used for pair selection stay crisp.
fn snap(a: f64, c: f64) -> f64 {
    if a < 1e-12 * c {
        0.0
    } else if a > c * (1.0 - 1e-12) {
        c
    } else {
        a
    }
}

fn train_binary(
    x: &DenseMatrix,
    gram: &DenseMatrix,
    y: &[f64],
    class: usize,
    cfg: &SvmConfig,
) -> BinaryMachine {
    let n = y.len();
    let c = cfg.c;
    let mut alpha = vec![0.0f64; n];
    // f[i] is the decision value at point i minus its label, with the
    // bias left out; bias-free differences are all pair selection needs.
    let mut f: Vec<f64> = y.iter().map(|&yi| -yi).collect();
    let mut iterations = 0usize;
    let mut converged = false;

    let select = |alpha: &[f64], f: &[f64]| {
        let mut up: Option<(f64, usize)> = None;
        let mut low: Option<(f64, usize)> = None;
        for i in 0..n {
            let in_up = (y[i] > 0.0 && alpha[i] < c) || (y[i] < 0.0 && alpha[i] > 0.0);
            let in_low = (y[i] > 0.0 && alpha[i] > 0.0) || (y[i] < 0.0 && alpha[i] < c);
            if in_up && up.is_none_or(|(best, _)| f[i] < best) {
                up = Some((f[i], i));
            }
            if in_low && low.is_none_or(|(best, _)| f[i] > best) {
                low = Some((f[i], i));
            }
        }
        (up, low)
    };

    while iterations < cfg.max_iter {
        let (Some((b_up, i2)), Some((b_low, i1))) = select(&alpha, &f) else {
            break;
        };
        if b_low - b_up <= 2.0 * cfg.tol {
            converged = true;
            break;
        }

        // Joint update of the violating pair. The feasible segment is
        // never empty for a pair drawn from the up/low sets, so the
        // clipped step always moves unless fp noise has pinned it.
        let (y1, y2) = (y[i1], y[i2]);
        let (a1, a2) = (alpha[i1], alpha[i2]);
        let (lo, hi) = if y1 != y2 {
            (0f64.max(a2 - a1), c.min(c + a2 - a1))
        } else {
            (0f64.max(a1 + a2 - c), c.min(a1 + a2))
        };
        // eta is the curvature along the pair direction; it can reach
        // zero for duplicate rows, where the objective is linear and the
        // best move is straight to the clip bound.
        let eta = (gram.get(i1, i1) + gram.get(i2, i2) - 2.0 * gram.get(i1, i2)).max(1e-12);
        let a2_new = snap((a2 + y2 * (f[i1] - f[i2]) / eta).clamp(lo, hi), c);
        let a1_new = snap((a1 + y1 * y2 * (a2 - a2_new)).clamp(0.0, c), c);
        if (a2_new - a2).abs() < 1e-14 && (a1_new - a1).abs() < 1e-14 {
            break;
        }
        let (d1, d2) = (a1_new - a1, a2_new - a2);
        alpha[i1] = a1_new;
        alpha[i2] = a2_new;
        for (k, fk) in f.iter_mut().enumerate() {
            *fk += d1 * y1 * gram.get(i1, k) + d2 * y2 * gram.get(i2, k);
        }
        iterations += 1;
    }

    let (up, low) = select(&alpha, &f);
    let bias = match (up, low) {
        (Some((b_up, _)), Some((b_low, _))) => -(b_up + b_low) / 2.0,
        // Both sets are nonempty while the equality constraint holds;
        // this arm is unreachable for two-class input.
        _ => 0.0,
    };

    let support_indices: Vec<usize> = (0..n).filter(|&i| alpha[i] > 0.0).collect();
    assert!(
        !support_indices.is_empty(),
        "a trained machine always retains support vectors"
    );
    let mut support_vectors = DenseMatrix::zeros(support_indices.len(), x.cols());
    let mut coefficients = Vec::with_capacity(support_indices.len());
    for (slot, &i) in support_indices.iter().enumerate() {
        support_vectors.row_mut(slot).copy_from_slice(x.row(i));
        coefficients.push(alpha[i] * y[i]);
    }
    BinaryMachine {
        class,
        coefficients,
        support_vectors,
        support_indices,
        bias,
        converged,
        iterations,
    }
}

/// Decision value of every machine on every row, one column per machine
/// in ascending class order.
pub fn decision_values(model: &SvmModel, x: &DenseMatrix) -> Result<DenseMatrix, EvalError> {
    if x.cols() != model.dim {
        return Err(EvalError::FeatureWidth {
            expected: model.dim,
            actual: x.cols(),
        });
    }
    let mut out = DenseMatrix::zeros(x.rows(), model.machines.len());
    for r in 0..x.rows() {
        for (col, machine) in model.machines.iter().enumerate() {
            out.set(r, col, machine.decision(x.row(r), model.gamma));
        }
    }
    Ok(out)
}

/// Argmax over machine decision values; exact ties resolve to the
/// lowest label id because machines are scanned in ascending class
/// order with a strict comparison.
pub fn svm_predict(model: &SvmModel, x: &DenseMatrix) -> Result<Vec<usize>, EvalError> {
    let values = decision_values(model, x)?;
    Ok((0..x.rows())
        .map(|r| {
            let mut best = (values.get(r, 0), model.machines[0].class);
            for (col, machine) in model.machines.iter().enumerate().skip(1) {
                if values.get(r, col) > best.0 {
                    best = (values.get(r, col), machine.class);
                }
            }
            best.1
        })
        .collect())
}

/// Largest KKT violation over every machine and training point, for
/// verifying a trained model against the data it was fit on. A machine
/// converged to tolerance `tol` keeps this below `tol` (up to fp noise):
/// zero-coefficient points must sit outside the margin, box-bound points
/// inside it, and free points on it.
pub fn max_kkt_violation(
    model: &SvmModel,
    x: &DenseMatrix,
    y: &[usize],
) -> Result<f64, EvalError> {
    if x.cols() != model.dim {
        return Err(EvalError::FeatureWidth {
            expected: model.dim,
            actual: x.cols(),
        });
    }
    if x.rows() != y.len() {
        return Err(EvalError::FeatureShape {
            rows: x.rows(),
            labels: y.len(),
        });
    }
    let mut worst = 0.0f64;
    for machine in &model.machines {
        let mut alpha = vec![0.0f64; x.rows()];
        for (slot, &idx) in machine.support_indices.iter().enumerate() {
            let ybin = if y[idx] == machine.class { 1.0 } else { -1.0 };
            alpha[idx] = machine.coefficients[slot] * ybin;
        }
        for i in 0..x.rows() {
            let ybin = if y[i] == machine.class { 1.0 } else { -1.0 };
            let margin = ybin * machine.decision(x.row(i), model.gamma);
            let violation = if alpha[i] <= 0.0 {
                (1.0 - margin).max(0.0)
            } else if alpha[i] >= model.c {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            };
            worst = worst.max(violation);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn xor_data() -> (DenseMatrix, Vec<usize>) {
        let x = DenseMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ]);
        (x, vec![0, 0, 1, 1])
    }

    #[test]
    fn xor_trains_to_full_accuracy() {
        let (x, y) = xor_data();
        let model = svm_train(&x, &y, &SvmConfig::default()).unwrap();
        assert_eq!(svm_predict(&model, &x).unwrap(), y);
        assert!(model.converged());
        assert!(max_kkt_violation(&model, &x, &y).unwrap() <= 1e-3 + 1e-9);
    }

    fn blobs(
        centers: &[(f64, f64)],
        per_class: usize,
        spread: f64,
        seed: u64,
    ) -> (DenseMatrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (class, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..per_class {
                rows.push(vec![
                    cx + rng.random_range(-spread..spread),
                    cy + rng.random_range(-spread..spread),
                ]);
                labels.push(class);
            }
        }
        (DenseMatrix::from_rows(&rows), labels)
    }

    #[test]
    fn separated_blobs_generalize_perfectly() {
        let (train_x, train_y) = blobs(&[(0.0, 0.0), (3.0, 3.0)], 20, 0.3, 1);
        let (test_x, test_y) = blobs(&[(0.0, 0.0), (3.0, 3.0)], 10, 0.3, 2);
        let model = svm_train(&train_x, &train_y, &SvmConfig::default()).unwrap();
        assert_eq!(svm_predict(&model, &test_x).unwrap(), test_y);
        assert!(model.converged());
    }

    #[test]
    fn three_classes_get_three_machines() {
        let (x, y) = blobs(&[(0.0, 0.0), (4.0, 0.0), (0.0, 4.0)], 12, 0.3, 3);
        let model = svm_train(&x, &y, &SvmConfig::default()).unwrap();
        assert_eq!(model.classes, vec![0, 1, 2]);
        assert_eq!(model.machines.len(), 3);
        assert_eq!(svm_predict(&model, &x).unwrap(), y);
        assert!(max_kkt_violation(&model, &x, &y).unwrap() <= 1e-3 + 1e-9);
    }

    #[test]
    fn kkt_holds_on_overlapping_data() {
        // Overlap forces coefficients onto the C bound, so all three
        // KKT branches get exercised.
        let (x, y) = blobs(&[(0.0, 0.0), (0.8, 0.8)], 25, 0.6, 4);
        let model = svm_train(&x, &y, &SvmConfig::default()).unwrap();
        assert!(model.converged());
        assert!(max_kkt_violation(&model, &x, &y).unwrap() <= 1e-3 + 1e-9);
        for machine in &model.machines {
            assert!(!machine.coefficients.is_empty());
            for (slot, &idx) in machine.support_indices.iter().enumerate() {
                let ybin = if y[idx] == machine.class { 1.0 } else { -1.0 };
                let alpha = machine.coefficients[slot] * ybin;
                assert!((0.0..=model.c).contains(&alpha), "alpha = {alpha}");
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = blobs(&[(0.0, 0.0), (1.0, 1.0)], 15, 0.5, 5);
        let a = svm_train(&x, &y, &SvmConfig::default()).unwrap();
        let b = svm_train(&x, &y, &SvmConfig::default()).unwrap();
        assert_eq!(a.machines[0].bias.to_bits(), b.machines[0].bias.to_bits());
        assert_eq!(a.machines[0].coefficients, b.machines[0].coefficients);
        assert_eq!(
            svm_predict(&a, &x).unwrap(),
            svm_predict(&b, &x).unwrap()
        );
    }

    #[test]
    fn duplicate_rows_are_handled() {
        // Identical points with opposite labels give a zero-curvature
        // pair direction; training must still terminate and predict.
        let x = DenseMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![2.0, 2.0],
            vec![2.1, 2.0],
            vec![0.1, 0.0],
        ]);
        let y = vec![0, 1, 1, 1, 0];
        let model = svm_train(&x, &y, &SvmConfig::default()).unwrap();
        let preds = svm_predict(&model, &x).unwrap();
        assert_eq!(preds.len(), 5);
        // The clean points are still classified by the signal.
        assert_eq!(preds[2], 1);
        assert_eq!(preds[3], 1);
    }

    #[test]
    fn constant_features_predict_one_class() {
        let x = DenseMatrix::zeros(6, 2);
        let y = vec![0, 0, 0, 0, 1, 1];
        let model = svm_train(&x, &y, &SvmConfig::default()).unwrap();
        assert_eq!(model.gamma, 1.0);
        let preds = svm_predict(&model, &x).unwrap();
        assert!(preds.iter().all(|&p| p == preds[0]));
    }

    #[test]
    fn exact_ties_resolve_to_the_lowest_class() {
        let machine = |class: usize| BinaryMachine {
            class,
            coefficients: vec![1.0],
            support_vectors: DenseMatrix::from_rows(&[vec![0.0, 0.0]]),
            support_indices: vec![0],
            bias: 0.25,
            converged: true,
            iterations: 0,
        };
        let model = SvmModel {
            gamma: 1.0,
            c: 1.0,
            tol: 1e-3,
            dim: 2,
            classes: vec![3, 7],
            machines: vec![machine(3), machine(7)],
        };
        let x = DenseMatrix::from_rows(&[vec![0.5, 0.5], vec![-1.0, 2.0]]);
        assert_eq!(svm_predict(&model, &x).unwrap(), vec![3, 3]);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let x = DenseMatrix::from_rows(&[vec![0.0], vec![1.0]]);
        assert!(matches!(
            svm_train(&x, &[0, 0], &SvmConfig::default()),
            Err(EvalError::SingleClass)
        ));
        assert!(matches!(
            svm_train(&x, &[0], &SvmConfig::default()),
            Err(EvalError::FeatureShape { .. })
        ));
        let bad = DenseMatrix::from_rows(&[vec![f64::NAN], vec![1.0]]);
        assert!(matches!(
            svm_train(&bad, &[0, 1], &SvmConfig::default()),
            Err(EvalError::NonFiniteFeatures)
        ));
        let cfg = SvmConfig {
            c: 0.0,
            ..SvmConfig::default()
        };
        assert!(matches!(
            svm_train(&x, &[0, 1], &cfg),
            Err(EvalError::InvalidParam { name: "C", .. })
        ));
    }

    #[test]
    fn predict_checks_feature_width() {
        let (x, y) = xor_data();
        let model = svm_train(&x, &y, &SvmConfig::default()).unwrap();
        let narrow = DenseMatrix::from_rows(&[vec![1.0]]);
        assert!(matches!(
            svm_predict(&model, &narrow),
            Err(EvalError::FeatureWidth {
                expected: 2,
                actual: 1
            })
        ));
    }

    #[test]
    fn decision_values_follow_row_order() {
        let (x, y) = blobs(&[(0.0, 0.0), (3.0, 3.0)], 8, 0.3, 6);
        let model = svm_train(&x, &y, &SvmConfig::default()).unwrap();
        let test = DenseMatrix::from_rows(&[vec![0.1, 0.2], vec![2.9, 3.1], vec![1.5, 1.5]]);
        let flipped = DenseMatrix::from_rows(&[vec![1.5, 1.5], vec![2.9, 3.1], vec![0.1, 0.2]]);
        let a = decision_values(&model, &test).unwrap();
        let b = decision_values(&model, &flipped).unwrap();
        for col in 0..2 {
            assert_eq!(a.get(0, col).to_bits(), b.get(2, col).to_bits());
            assert_eq!(a.get(1, col).to_bits(), b.get(1, col).to_bits());
            assert_eq!(a.get(2, col).to_bits(), b.get(0, col).to_bits());
        }
    }
}
