//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use cftrack::localizer::{sample_pair_geometry, PairSampling, TrainingPair};
use cftrack::BoundingBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Training pairs whose targets are true GIoU values of sampled proposal
/// boxes, with random descriptors arranged so that a known head reproduces
/// every target exactly. Returns the pairs and that head's parameters
/// (weights, then bias).
pub fn linear_fixture(seed: u64, dim: usize, frame_pairs: usize) -> (Vec<TrainingPair>, Vec<f64>) {
    let track: Vec<BoundingBox> = (0..60)
        .map(|i| BoundingBox::new(40.0 + 2.0 * i as f64, 50.0 + i as f64, 30.0, 24.0).unwrap())
        .collect();
    let cfg = PairSampling {
        frame_pairs,
        ..PairSampling::default()
    };
    let geometry = sample_pair_geometry(&track, &cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth: Vec<f64> = (0..2 * dim + 1)
        .map(|_| rng.random_range(-0.5..0.5))
        .collect();
    // Keep the solved coordinate's coefficient away from zero.
    truth[0] = 1.0;
    truth[dim] = 0.0;
    let mut pairs = Vec::new();
    for g in &geometry {
        let template: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gt = track[g.search_frame];
        for (proposal, &target) in g.proposals.iter().zip(&g.targets) {
            let mut p: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rest: f64 = truth[2 * dim]
                + (1..dim)
                    .map(|i| p[i] * (truth[i] + truth[dim + i] * template[i]))
                    .sum::<f64>();
            p[0] = target - rest;
            pairs.push(TrainingPair {
                template_desc: template.clone(),
                proposal_desc: p,
                proposal: *proposal,
                ground_truth: gt,
                target,
            });
        }
    }
    (pairs, truth)
}

/// Spearman rank correlation, ties given their average rank.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let cov: f64 = ra
        .iter()
        .zip(&rb)
        .map(|(x, y)| (x - mean) * (y - mean))
        .sum();
    let va: f64 = ra.iter().map(|x| (x - mean).powi(2)).sum();
    let vb: f64 = rb.iter().map(|x| (x - mean).powi(2)).sum();
    cov / (va * vb).sqrt()
}
