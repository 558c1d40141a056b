//! Frozen-feature evaluation: fit a light classifier on student embeddings of
//! the training split and report top-k accuracy on the test split.
//!
//! Ties are always broken toward the lower class id.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::encoder::{ImuWindow, StudentParams};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{dot_slice, normalize_slice, UnitVec};

/// The k values reported by every evaluation.
pub const REPORT_KS: [usize; 3] = [1, 3, 5];

/// Additive guard in the inverse-distance weights of the k-NN probe.
pub const KNN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    Centroid,
    Knn,
    KernelRidge,
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Centroid => "centroid",
            ProbeKind::Knn => "knn",
            ProbeKind::KernelRidge => "kernel-ridge",
        })
    }
}

impl std::str::FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centroid" => Ok(ProbeKind::Centroid),
            "knn" => Ok(ProbeKind::Knn),
            "kernel-ridge" | "kernel_ridge" => Ok(ProbeKind::KernelRidge),
            other => Err(Error::Config(format!(
                "unknown probe {other:?} (expected centroid, knn or kernel-ridge)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeHyper {
    pub knn_k: usize,
    /// RBF bandwidth; `None` means `1 / feature_dim`.
    pub rbf_gamma: Option<f64>,
    pub ridge_lambda: f64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        Self {
            knn_k: 5,
            rbf_gamma: None,
            ridge_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeModel {
    Centroid {
        centroids: Vec<UnitVec>,
    },
    Knn {
        features: Vec<UnitVec>,
        labels: Vec<usize>,
        k: usize,
        num_classes: usize,
    },
    KernelRidge {
        features: Vec<UnitVec>,
        /// `n × num_classes`, row-major.
        alpha: Vec<f64>,
        gamma: f64,
        num_classes: usize,
    },
}

/// Per-class scores; higher is more likely.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(pub Vec<f64>);

impl ScoreVector {
    /// 1-based rank of `class` with ties going to the lower class id.
    pub fn rank_of(&self, class: usize) -> usize {
        let s = self.0[class];
        1 + self
            .0
            .iter()
            .enumerate()
            .filter(|&(c, &v)| v > s || (v == s && c < class))
            .count()
    }

    pub fn top1(&self) -> usize {
        crate::tensor::argmax(&self.0)
    }
}

pub fn extract_features(params: &StudentParams, windows: &[ImuWindow], exec: Exec) -> Result<Vec<UnitVec>> {
    exec.try_map(windows, |w| params.forward(w))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn fit_probe(
    features: &[UnitVec],
    labels: &[usize],
    num_classes: usize,
    kind: ProbeKind,
    hyper: &ProbeHyper,
) -> Result<ProbeModel> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "a probe needs at least 2 classes, got {num_classes}"
        )));
    }
    if features.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features.first().ok_or(Error::EmptyInput)?.dim();
    if let Some(f) = features.iter().find(|f| f.dim() != dim) {
        return Err(Error::DimMismatch {
            expected: dim,
            found: f.dim(),
        });
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        *counts
            .get_mut(l)
            .ok_or_else(|| Error::Malformed(format!("label {l} out of range")))? += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(missing));
    }

    match kind {
        ProbeKind::Centroid => {
            let mut sums = vec![vec![0.0; dim]; num_classes];
            for (f, &l) in features.iter().zip(labels) {
                for (s, v) in sums[l].iter_mut().zip(f.as_slice()) {
                    *s += v;
                }
            }
            let centroids = sums
                .iter()
                .zip(&counts)
                .map(|(s, &n)| {
                    let mean: Vec<f64> = s.iter().map(|v| v / n as f64).collect();
                    normalize_slice(&mean)
                })
                .collect::<Result<_>>()?;
            Ok(ProbeModel::Centroid { centroids })
        }
        ProbeKind::Knn => {
            if hyper.knn_k == 0 {
                return Err(Error::Config("knn_k must be positive".into()));
            }
            Ok(ProbeModel::Knn {
                features: features.to_vec(),
                labels: labels.to_vec(),
                k: hyper.knn_k,
                num_classes,
            })
        }
        ProbeKind::KernelRidge => {
            let gamma = hyper.rbf_gamma.unwrap_or(1.0 / dim as f64);
            if !(gamma > 0.0) || !(hyper.ridge_lambda > 0.0) {
                return Err(Error::Config(format!(
                    "kernel ridge needs gamma > 0 and lambda > 0 (got {gamma}, {})",
                    hyper.ridge_lambda
                )));
            }
            let n = features.len();
            let gram = DMatrix::from_fn(n, n, |i, j| {
                let k = (-gamma * sq_dist(features[i].as_slice(), features[j].as_slice())).exp();
                if i == j {
                    k + hyper.ridge_lambda
                } else {
                    k
                }
            });
            let targets = DMatrix::from_fn(n, num_classes, |i, c| if labels[i] == c { 1.0 } else { -1.0 });
            let chol = gram.cholesky().ok_or(Error::SingularKernel)?;
            let solved = chol.solve(&targets);
            if solved.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularKernel);
            }
            let alpha = (0..n)
                .flat_map(|i| (0..num_classes).map(move |c| (i, c)))
                .map(|(i, c)| solved[(i, c)])
                .collect();
            Ok(ProbeModel::KernelRidge {
                features: features.to_vec(),
                alpha,
                gamma,
                num_classes,
            })
        }
    }
}

impl ProbeModel {
    pub fn kind(&self) -> ProbeKind {
        match self {
            ProbeModel::Centroid { .. } => ProbeKind::Centroid,
            ProbeModel::Knn { .. } => ProbeKind::Knn,
            ProbeModel::KernelRidge { .. } => ProbeKind::KernelRidge,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ProbeModel::Centroid { centroids } => centroids.len(),
            ProbeModel::Knn { num_classes, .. } | ProbeModel::KernelRidge { num_classes, .. } => *num_classes,
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            ProbeModel::Centroid { centroids } => centroids.first().map(UnitVec::dim),
            ProbeModel::Knn { features, .. } | ProbeModel::KernelRidge { features, .. } => {
                features.first().map(UnitVec::dim)
            }
        }
    }

    pub fn predict_scores(&self, feature: &UnitVec) -> Result<ScoreVector> {
        let dim = self.dim().ok_or(Error::NotFitted)?;
        if feature.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: feature.dim(),
            });
        }
        let x = feature.as_slice();
        let scores = match self {
            ProbeModel::Centroid { centroids } => {
                centroids.iter().map(|c| dot_slice(x, c.as_slice())).collect()
            }
            ProbeModel::Knn {
                features,
                labels,
                k,
                num_classes,
            } => {
                let mut dists: Vec<(f64, usize)> = features
                    .iter()
                    .enumerate()
                    .map(|(i, f)| (sq_dist(x, f.as_slice()).sqrt(), i))
                    .collect();
                dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut scores = vec![0.0; *num_classes];
                for &(d, i) in dists.iter().take(*k) {
                    scores[labels[i]] += 1.0 / (KNN_EPS + d);
                }
                scores
            }
            ProbeModel::KernelRidge {
                features,
                alpha,
                gamma,
                num_classes,
            } => {
                let mut scores = vec![0.0; *num_classes];
                for (f, row) in features.iter().zip(alpha.chunks_exact(*num_classes)) {
                    let kv = (-gamma * sq_dist(x, f.as_slice())).exp();
                    for (s, a) in scores.iter_mut().zip(row) {
                        *s += a * kv;
                    }
                }
                scores
            }
        };
        Ok(ScoreVector(scores))
    }

    pub fn predict_all(&self, features: &[UnitVec], exec: Exec) -> Result<Vec<ScoreVector>> {
        exec.try_map(features, |f| self.predict_scores(f))
    }
}

/// Fraction of samples whose true class ranks within the top `k`.
pub fn acc_at_k(scores: &[ScoreVector], labels: &[usize], k: usize) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} score vectors but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut hits = 0usize;
    for (s, &l) in scores.iter().zip(labels) {
        if l >= s.0.len() {
            return Err(Error::Malformed(format!("label {l} out of range")));
        }
        if s.rank_of(l) <= k {
            hits += 1;
        }
    }
    Ok(hits as f64 / scores.len() as f64)
}

/// Acc@k on the test features for every k in [`REPORT_KS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe: ProbeKind,
    pub accuracies: Vec<(usize, f64)>,
    pub n_test: usize,
}

impl ProbeReport {
    pub fn acc(&self, k: usize) -> Option<f64> {
        self.accuracies.iter().find(|(kk, _)| *kk == k).map(|(_, a)| *a)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_features(
    train_features: &[UnitVec],
    train_labels: &[usize],
    test_features: &[UnitVec],
    test_labels: &[usize],
    num_classes: usize,
    kind: ProbeKind,
    hyper: &ProbeHyper,
    exec: Exec,
) -> Result<ProbeReport> {
    let model = fit_probe(train_features, train_labels, num_classes, kind, hyper)?;
    let scores = model.predict_all(test_features, exec)?;
    let accuracies = REPORT_KS
        .iter()
        .map(|&k| Ok((k, acc_at_k(&scores, test_labels, k)?)))
        .collect::<Result<_>>()?;
    Ok(ProbeReport {
        probe: kind,
        accuracies,
        n_test: test_features.len(),
    })
}

/// Solves with a dense LU instead of Cholesky; kept for cross-checking the
/// kernel-ridge weights in tests.
#[cfg(test)]
fn ridge_weights_lu(features: &[UnitVec], labels: &[usize], num_classes: usize, gamma: f64, lambda: f64) -> DMatrix<f64> {
    let n = features.len();
    let gram = DMatrix::from_fn(n, n, |i, j| {
        (-gamma * sq_dist(features[i].as_slice(), features[j].as_slice())).exp() + if i == j { lambda } else { 0.0 }
    });
    let mut out = DMatrix::zeros(n, num_classes);
    let lu = gram.lu();
    for c in 0..num_classes {
        let y = nalgebra::DVector::from_fn(n, |i, _| if labels[i] == c { 1.0 } else { -1.0 });
        out.set_column(c, &lu.solve(&y).unwrap());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn unit(v: &[f64]) -> UnitVec {
        normalize_slice(v).unwrap()
    }

    /// Three tight clusters around distinct directions in 4-D.
    fn clusters(rng: &mut ChaCha8Rng, per_class: usize, noise: f64) -> (Vec<UnitVec>, Vec<usize>) {
        let centers = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        let mut f = Vec::new();
        let mut l = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per_class {
                let v: Vec<f64> = center
                    .iter()
                    .map(|x| x + noise * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                    .collect();
                f.push(unit(&v));
                l.push(c);
            }
        }
        (f, l)
    }

    #[test]
    fn centroid_of_single_samples() {
        let f = vec![unit(&[1.0, 2.0]), unit(&[-3.0, 1.0])];
        let m = fit_probe(&f, &[0, 1], 2, ProbeKind::Centroid, &ProbeHyper::default()).unwrap();
        let ProbeModel::Centroid { centroids } = &m else { unreachable!() };
        for (c, s) in centroids.iter().zip(&f) {
            for (a, b) in c.as_slice().iter().zip(s.as_slice()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        assert_eq!(m.predict_scores(&f[1]).unwrap().top1(), 1);
    }

    #[test]
    fn knn_exact_match_wins() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (f, l) = clusters(&mut rng, 5, 0.3);
        let hyper = ProbeHyper {
            knn_k: 1,
            ..ProbeHyper::default()
        };
        let m = fit_probe(&f, &l, 3, ProbeKind::Knn, &hyper).unwrap();
        for (x, &label) in f.iter().zip(&l) {
            assert_eq!(m.predict_scores(x).unwrap().top1(), label);
        }
    }

    #[test]
    fn kernel_ridge_interpolates_training_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (f, l) = clusters(&mut rng, 8, 0.1);
        let hyper = ProbeHyper {
            ridge_lambda: 1e-10,
            rbf_gamma: Some(4.0),
            ..ProbeHyper::default()
        };
        let m = fit_probe(&f, &l, 3, ProbeKind::KernelRidge, &hyper).unwrap();
        let scores = m.predict_all(&f, Exec::Sequential).unwrap();
        assert_eq!(acc_at_k(&scores, &l, 1).unwrap(), 1.0);
    }

    #[test]
    fn kernel_ridge_weights_match_lu_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (f, l) = clusters(&mut rng, 6, 0.3);
        let hyper = ProbeHyper::default();
        let ProbeModel::KernelRidge { alpha, gamma, .. } =
            fit_probe(&f, &l, 3, ProbeKind::KernelRidge, &hyper).unwrap()
        else {
            unreachable!()
        };
        assert_eq!(gamma, 0.25);
        let lu = ridge_weights_lu(&f, &l, 3, gamma, hyper.ridge_lambda);
        for i in 0..f.len() {
            for c in 0..3 {
                let a = alpha[i * 3 + c];
                assert!((a - lu[(i, c)]).abs() <= 1e-8 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn scores_match_reevaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (f, l) = clusters(&mut rng, 6, 0.4);
        let q = unit(&[0.3, 0.5, -0.2, 0.1]);
        for kind in [ProbeKind::Centroid, ProbeKind::Knn, ProbeKind::KernelRidge] {
            let m = fit_probe(&f, &l, 3, kind, &ProbeHyper::default()).unwrap();
            let s = m.predict_scores(&q).unwrap();
            let oracle: Vec<f64> = match &m {
                ProbeModel::Centroid { centroids } => centroids
                    .iter()
                    .map(|c| (0..4).map(|i| q.as_slice()[i] * c.as_slice()[i]).sum())
                    .collect(),
                ProbeModel::Knn { .. } => {
                    let mut d: Vec<(f64, usize)> = f
                        .iter()
                        .zip(&l)
                        .map(|(x, &lab)| {
                            let dd: f64 = (0..4).map(|i| (q.as_slice()[i] - x.as_slice()[i]).powi(2)).sum();
                            (dd.sqrt(), lab)
                        })
                        .collect();
                    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                    let mut s = vec![0.0; 3];
                    for (dist, lab) in d.into_iter().take(5) {
                        s[lab] += 1.0 / (1e-9 + dist);
                    }
                    s
                }
                ProbeModel::KernelRidge { alpha, gamma, .. } => (0..3)
                    .map(|c| {
                        f.iter()
                            .enumerate()
                            .map(|(i, x)| {
                                let dd: f64 = (0..4).map(|j| (q.as_slice()[j] - x.as_slice()[j]).powi(2)).sum();
                                alpha[i * 3 + c] * (-gamma * dd).exp()
                            })
                            .sum()
                    })
                    .collect(),
            };
            for (a, b) in s.0.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-10, "{kind}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn ties_go_to_lower_class() {
        let f = vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0])];
        let m = fit_probe(&f, &[0, 1], 2, ProbeKind::Centroid, &ProbeHyper::default()).unwrap();
        let mid = unit(&[1.0, 1.0]);
        let s = m.predict_scores(&mid).unwrap();
        assert_eq!(s.0[0], s.0[1]);
        assert_eq!(s.top1(), 0);
        assert_eq!(s.rank_of(0), 1);
        assert_eq!(s.rank_of(1), 2);
    }

    #[test]
    fn acc_at_k_hand_case() {
        // True class ranks 1, 2 and 4 respectively.
        let scores = vec![
            ScoreVector(vec![0.9, 0.1, 0.0, 0.0, 0.0]),
            ScoreVector(vec![0.5, 0.4, 0.3, 0.2, 0.1]),
            ScoreVector(vec![0.4, 0.3, 0.2, 0.1, 0.0]),
        ];
        let labels = [0, 1, 3];
        assert!((acc_at_k(&scores, &labels, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((acc_at_k(&scores, &labels, 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(acc_at_k(&scores, &labels, 5).unwrap(), 1.0);
        assert!(matches!(acc_at_k(&[], &[], 1), Err(Error::EmptyInput)));
    }

    #[test]
    fn acc_is_monotone_and_saturates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<ScoreVector> = (0..50)
            .map(|_| ScoreVector((0..6).map(|_| rng.random_range(0.0..1.0)).collect()))
            .collect();
        let labels: Vec<usize> = (0..50).map(|_| rng.random_range(0..6)).collect();
        let accs: Vec<f64> = (1..=8).map(|k| acc_at_k(&scores, &labels, k).unwrap()).collect();
        for w in accs.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert_eq!(accs[5], 1.0);
        let perfect: Vec<ScoreVector> = labels
            .iter()
            .map(|&l| {
                let mut s = vec![0.0; 6];
                s[l] = 1.0;
                ScoreVector(s)
            })
            .collect();
        assert_eq!(acc_at_k(&perfect, &labels, 1).unwrap(), 1.0);
    }

    #[test]
    fn fit_errors() {
        let f = vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0])];
        let h = ProbeHyper::default();
        assert!(matches!(
            fit_probe(&f, &[0, 0], 2, ProbeKind::Centroid, &h),
            Err(Error::MissingClass(1))
        ));
        assert!(fit_probe(&f, &[0, 1], 1, ProbeKind::Centroid, &h).is_err());
        assert!(fit_probe(&f, &[0], 2, ProbeKind::Knn, &h).is_err());
        assert!(matches!(
            fit_probe(&[], &[], 2, ProbeKind::Knn, &h),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn duplicate_points_with_tiny_ridge_are_singular_or_solved() {
        let f = vec![unit(&[1.0, 0.0]); 3];
        let h = ProbeHyper {
            ridge_lambda: 1e-300,
            ..ProbeHyper::default()
        };
        let out = fit_probe(&f, &[0, 1, 0], 2, ProbeKind::KernelRidge, &h);
        assert!(matches!(out, Err(Error::SingularKernel)));
    }

    #[test]
    fn default_synthetic_teachers_are_centroid_separable() {
        let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let teachers = |d: &crate::dataio::Dataset| d.samples.iter().map(|s| s.teacher.clone()).collect::<Vec<_>>();
        let report = evaluate_features(
            &teachers(&data.train),
            &data.train.labels().unwrap(),
            &teachers(&data.test),
            &data.test.labels().unwrap(),
            5,
            ProbeKind::Centroid,
            &ProbeHyper::default(),
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(report.acc(1), Some(1.0));
    }
}
