//! Linear GIoU regressor over `[p, p ⊙ t]` and its Adam training loop.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainingPair;
use crate::error::{Error, HeadFileError, Result};
use crate::features::FeatureConfig;
use crate::par;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const GRAD_CHUNK: usize = 256;

/// Weights over the proposal descriptor followed by weights over its
/// element-wise product with the template descriptor, plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerHead {
    weights: Vec<f64>,
    bias: f64,
}

impl ScorerHead {
    pub fn zeros(descriptor_dim: usize) -> Self {
        Self {
            weights: vec![0.0; 2 * descriptor_dim],
            bias: 0.0,
        }
    }

    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.is_empty() || !weights.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "head weight count must be a positive even number, got {}",
                weights.len()
            )));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "head parameters must be finite".into(),
            ));
        }
        Ok(Self { weights, bias })
    }

    pub fn descriptor_dim(&self) -> usize {
        self.weights.len() / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    fn eval(&self, template: &[f64], proposal: &[f64]) -> f64 {
        let d = self.descriptor_dim();
        let (wp, wi) = self.weights.split_at(d);
        let mut s = self.bias;
        for i in 0..d {
            s += proposal[i] * (wp[i] + wi[i] * template[i]);
        }
        s
    }
}

/// Predicted GIoU of a proposal given the template.
pub fn score(head: &ScorerHead, template_desc: &[f64], proposal_desc: &[f64]) -> Result<f64> {
    let d = head.descriptor_dim();
    if template_desc.len() != d {
        return Err(Error::mismatch(
            "template descriptor",
            d,
            template_desc.len(),
        ));
    }
    if proposal_desc.len() != d {
        return Err(Error::mismatch(
            "proposal descriptor",
            d,
            proposal_desc.len(),
        ));
    }
    Ok(head.eval(template_desc, proposal_desc))
}

fn check_pairs(head: &ScorerHead, pairs: &[TrainingPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    for p in pairs {
        score(head, &p.template_desc, &p.proposal_desc)?;
    }
    Ok(())
}

/// Mean squared error of `head` on `pairs` and its gradient, laid out as
/// the weights followed by the bias.
pub fn loss_and_gradient(head: &ScorerHead, pairs: &[TrainingPair]) -> Result<(f64, Vec<f64>)> {
    check_pairs(head, pairs)?;
    Ok(batch_loss_and_gradient(head, pairs))
}

fn batch_loss_and_gradient(head: &ScorerHead, pairs: &[TrainingPair]) -> (f64, Vec<f64>) {
    let d = head.descriptor_dim();
    let chunks = pairs.len().div_ceil(GRAD_CHUNK);
    let partials = par::map_range(chunks, |ci| {
        let mut grad = vec![0.0; 2 * d + 1];
        let mut loss = 0.0;
        for p in &pairs[ci * GRAD_CHUNK..((ci + 1) * GRAD_CHUNK).min(pairs.len())] {
            let e = head.eval(&p.template_desc, &p.proposal_desc) - p.target;
            loss += e * e;
            let (gp, rest) = grad.split_at_mut(d);
            for i in 0..d {
                gp[i] += e * p.proposal_desc[i];
                rest[i] += e * p.proposal_desc[i] * p.template_desc[i];
            }
            grad[2 * d] += e;
        }
        (loss, grad)
    });
    let n = pairs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; 2 * d + 1];
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|g| *g *= 2.0 / n);
    (loss / n, grad)
}

/// Second moments of the interaction features `φ = [p, p ⊙ t, 1]` and the
/// targets. The loss is quadratic in the parameters θ, so
/// `mse(θ) = (θᵀGθ − 2bᵀθ + c) / N` and `∇ = 2(Gθ − b) / N`. A training
/// step then costs one matrix-vector product instead of a pass over the
/// pairs.
struct Moments {
    gram: Vec<f64>,
    cross: Vec<f64>,
    target_sq: f64,
    count: f64,
}

impl Moments {
    fn new(pairs: &[TrainingPair]) -> Self {
        let d = pairs[0].template_desc.len();
        let n = 2 * d + 1;
        let mut phi = Vec::with_capacity(pairs.len() * n);
        for p in pairs {
            phi.extend_from_slice(&p.proposal_desc);
            phi.extend(
                p.proposal_desc
                    .iter()
                    .zip(&p.template_desc)
                    .map(|(a, b)| a * b),
            );
            phi.push(1.0);
        }
        let rows = par::map_range(n, |r| {
            let mut row = vec![0.0; n];
            for f in phi.chunks_exact(n) {
                let a = f[r];
                if a != 0.0 {
                    row.iter_mut().zip(f).for_each(|(g, x)| *g += a * x);
                }
            }
            row
        });
        let mut cross = vec![0.0; n];
        for (f, p) in phi.chunks_exact(n).zip(pairs) {
            cross
                .iter_mut()
                .zip(f)
                .for_each(|(c, x)| *c += p.target * x);
        }
        Self {
            gram: rows.concat(),
            cross,
            target_sq: pairs.iter().map(|p| p.target * p.target).sum(),
            count: pairs.len() as f64,
        }
    }

    fn loss_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let n = theta.len();
        let g_theta: Vec<f64> = self
            .gram
            .chunks_exact(n)
            .map(|row| dot(row, theta))
            .collect();
        let quad = dot(theta, &g_theta);
        let lin = dot(theta, &self.cross);
        let loss = (quad - 2.0 * lin + self.target_sq) / self.count;
        let grad = g_theta
            .iter()
            .zip(&self.cross)
            .map(|(g, b)| 2.0 * (g - b) / self.count)
            .collect();
        (loss, grad)
    }
}

/// Dot product with eight independent accumulators, which lets the
/// compiler vectorize the reduction. The summation order is fixed.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Loss trace of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Full-batch loss before any step, then after each step.
    pub losses: Vec<f64>,
    pub best_loss: f64,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace holds the initial loss")
    }
}

/// Trains a head from zero by full-batch Adam and returns the parameters
/// with the lowest loss seen.
pub fn train_head(pairs: &[TrainingPair], steps: usize, step_size: f64) -> Result<ScorerHead> {
    train_head_with_report(pairs, steps, step_size).map(|(h, _)| h)
}

pub fn train_head_with_report(
    pairs: &[TrainingPair],
    steps: usize,
    step_size: f64,
) -> Result<(ScorerHead, TrainReport)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no training pairs".into()));
    }
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step_size must be positive, got {step_size}"
        )));
    }
    let d = pairs[0].template_desc.len();
    check_pairs(&ScorerHead::zeros(d), pairs)?;
    let moments = Moments::new(pairs);
    // Parameters as one vector: weights, then bias.
    let n = 2 * d + 1;
    let mut theta = vec![0.0; n];
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (mut b1t, mut b2t) = (1.0, 1.0);

    let (mut loss, mut grad) = moments.loss_and_gradient(&theta);
    let mut losses = vec![loss];
    let mut best = (loss, theta.clone());
    for _ in 0..steps {
        b1t *= BETA1;
        b2t *= BETA2;
        for i in 0..n {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            theta[i] -= step_size * (m[i] / (1.0 - b1t)) / ((v[i] / (1.0 - b2t)).sqrt() + ADAM_EPS);
        }
        (loss, grad) = moments.loss_and_gradient(&theta);
        losses.push(loss);
        if loss < best.0 {
            best = (loss, theta.clone());
        }
    }
    let (best_loss, mut theta) = best;
    let bias = theta.pop().expect("bias entry");
    let head = ScorerHead {
        weights: theta,
        bias,
    };
    Ok((head, TrainReport { losses, best_loss }))
}

/// Hex SHA-256 of the feature configuration's fingerprint.
pub fn feature_hash(config: &FeatureConfig) -> String {
    Sha256::digest(config.fingerprint().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadFile {
    descriptor_dim: usize,
    feature_hash: String,
    bias: f64,
    weights: Vec<f64>,
}

pub fn save_head(path: &Path, head: &ScorerHead, config: &FeatureConfig) -> Result<()> {
    let file = HeadFile {
        descriptor_dim: head.descriptor_dim(),
        feature_hash: feature_hash(config),
        bias: head.bias,
        weights: head.weights.clone(),
    };
    let text = serde_json::to_string_pretty(&file).expect("head serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Loads a head, refusing files trained under a different feature
/// configuration.
pub fn load_head(path: &Path, config: &FeatureConfig) -> Result<ScorerHead> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |message: String| HeadFileError::Malformed {
        path: path.to_path_buf(),
        message,
    };
    let file: HeadFile = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    let expected = feature_hash(config);
    if file.feature_hash != expected {
        return Err(HeadFileError::HashMismatch {
            path: path.to_path_buf(),
            expected,
            found: file.feature_hash,
        }
        .into());
    }
    if file.weights.len() != 2 * file.descriptor_dim {
        return Err(malformed(format!(
            "descriptor_dim {} needs {} weights, found {}",
            file.descriptor_dim,
            2 * file.descriptor_dim,
            file.weights.len()
        ))
        .into());
    }
    ScorerHead::new(file.weights, file.bias).map_err(|e| malformed(e.to_string()).into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(t: Vec<f64>, p: Vec<f64>, target: f64) -> TrainingPair {
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        TrainingPair {
            template_desc: t,
            proposal_desc: p,
            proposal: b,
            ground_truth: b,
            target,
        }
    }

    fn random_pairs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<TrainingPair> {
        (0..n)
            .map(|_| {
                let t = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let p = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                pair(t, p, rng.random_range(0.1..1.0))
            })
            .collect()
    }

    #[test]
    fn zero_head_scores_zero() {
        let h = ScorerHead::zeros(3);
        assert_eq!(score(&h, &[1.0, 2.0, 3.0], &[4.0, -5.0, 6.0]).unwrap(), 0.0);
    }

    #[test]
    fn score_uses_interaction_terms() {
        let h = ScorerHead::new(vec![1.0, 0.0, 0.0, 2.0], 0.5).unwrap();
        // 0.5 + 1·p0 + 2·p1·t1
        assert_eq!(
            score(&h, &[9.0, 3.0], &[2.0, 4.0]).unwrap(),
            0.5 + 2.0 + 24.0
        );
    }

    #[test]
    fn score_scales_with_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (t, p): (Vec<f64>, Vec<f64>) = (0..4)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .unzip();
        let h = ScorerHead::new(w.clone(), 0.0).unwrap();
        let h3 = ScorerHead::new(w.iter().map(|x| 3.0 * x).collect(), 0.0).unwrap();
        let (s, s3) = (score(&h, &t, &p).unwrap(), score(&h3, &t, &p).unwrap());
        assert!((s3 - 3.0 * s).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let h = ScorerHead::zeros(3);
        assert!(matches!(
            score(&h, &[0.0; 3], &[0.0; 4]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(score(&h, &[0.0; 2], &[0.0; 3]).is_err());
        assert!(train_head(&[], 10, 1e-3).is_err());
        assert!(train_head(&[pair(vec![0.0], vec![0.0], 0.5)], 10, 0.0).is_err());
    }

    #[test]
    fn bias_only_problem() {
        let pairs: Vec<_> = (0..10)
            .map(|_| pair(vec![0.0; 4], vec![0.0; 4], 0.7))
            .collect();
        let (h, report) = train_head_with_report(&pairs, 3000, 1e-2).unwrap();
        assert!((h.bias() - 0.7).abs() < 1e-3, "bias {}", h.bias());
        assert!(report.best_loss < 1e-6);
        assert!(h.weights().iter().all(|w| *w == 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let d = rng.random_range(2..6);
            let pairs = random_pairs(&mut rng, 7, d);
            let w: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let head = ScorerHead::new(w, rng.random_range(-1.0..1.0)).unwrap();
            let (_, g) = loss_and_gradient(&head, &pairs).unwrap();
            let h = 1e-6;
            for i in 0..=2 * d {
                let bump = |delta: f64| {
                    let mut w = head.weights().to_vec();
                    let mut b = head.bias();
                    if i < 2 * d {
                        w[i] += delta;
                    } else {
                        b += delta;
                    }
                    loss_and_gradient(&ScorerHead::new(w, b).unwrap(), &pairs)
                        .unwrap()
                        .0
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
                assert!(rel < 1e-4, "param {i}: analytic {} vs fd {fd}", g[i]);
            }
        }
    }

    #[test]
    fn moment_form_matches_direct_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let d = rng.random_range(1..8);
            let count = rng.random_range(1..30);
            let pairs = random_pairs(&mut rng, count, d);
            let w: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bias = rng.random_range(-1.0..1.0);
            let head = ScorerHead::new(w.clone(), bias).unwrap();
            let (loss, grad) = loss_and_gradient(&head, &pairs).unwrap();
            let theta: Vec<f64> = w.into_iter().chain([bias]).collect();
            let (mloss, mgrad) = Moments::new(&pairs).loss_and_gradient(&theta);
            assert!((loss - mloss).abs() < 1e-12 * loss.max(1.0));
            for (a, b) in grad.iter().zip(&mgrad) {
                assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn best_head_is_returned() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs = random_pairs(&mut rng, 50, 3);
        let (h, report) = train_head_with_report(&pairs, 200, 0.05).unwrap();
        let min = report.losses.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_loss, min);
        assert!((loss_and_gradient(&h, &pairs).unwrap().0 - min).abs() < 1e-12);
        assert!(report.best_loss < report.initial_loss());
    }

    #[test]
    fn small_steps_descend_over_windows() {
        let mut good = 0;
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pairs = random_pairs(&mut rng, 40, 4);
            let (_, report) = train_head_with_report(&pairs, 200, 1e-3).unwrap();
            let ok = report.losses.windows(11).all(|w| w[10] <= w[0]);
            good += usize::from(ok);
        }
        assert!(good * 100 >= 95 * 40, "{good}/40 fixtures descend");
    }

    #[test]
    fn persistence_round_trip_and_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.json");
        let config = FeatureConfig::default();
        let head = ScorerHead::new(vec![0.25, -1.5, 3.0e-7, 2.0], 0.125).unwrap();
        save_head(&path, &head, &config).unwrap();
        assert_eq!(load_head(&path, &config).unwrap(), head);

        let other = FeatureConfig {
            cell_size: 2,
            ..FeatureConfig::default()
        };
        assert!(matches!(
            load_head(&path, &other),
            Err(Error::HeadFile(HeadFileError::HashMismatch { .. }))
        ));
        fs::write(&path, "{\"descriptor_dim\": 1}").unwrap();
        assert!(matches!(
            load_head(&path, &config),
            Err(Error::HeadFile(HeadFileError::Malformed { .. }))
        ));
    }

    #[test]
    fn hash_is_stable_hex() {
        let h = feature_hash(&FeatureConfig::default());
        assert_eq!(h.len(), 64);
        assert_eq!(h, feature_hash(&FeatureConfig::default()));
    }
}
