use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::meshio::VertexPermutation;
use crate::network::{predict, ModelConfig, ModelParams};
use crate::objectives::pmd;
use crate::synthdata::{EvalPair, PairSample, Split};
use crate::tensor::{Real, Tensor3};

const EVAL_BATCH: usize = 8;

/// Worker count for evaluation, from `NPT_THREADS` (default 1).
pub fn eval_threads() -> usize {
    std::env::var("NPT_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub index: usize,
    pub split: Split,
    pub pmd: f64,
    /// PMD of returning the identity mesh unchanged.
    pub copy_pmd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seen_pmd: f64,
    pub unseen_pmd: f64,
    pub copy_seen_pmd: f64,
    pub copy_unseen_pmd: f64,
    pub samples: Vec<SampleScore>,
}

fn mean_of(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn stacked<T: Real>(pairs: &[&PairSample]) -> Result<[Tensor3<T>; 3]> {
    let pose: Vec<_> = pairs.iter().map(|p| p.pose_mesh.to_tensor()).collect();
    let id: Vec<_> = pairs.iter().map(|p| p.id_mesh.to_tensor()).collect();
    let gt: Vec<_> = pairs.iter().map(|p| p.gt_mesh.to_tensor()).collect();
    Ok([Tensor3::stack(&pose)?, Tensor3::stack(&id)?, Tensor3::stack(&gt)?])
}

fn in_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let threads = eval_threads();
    if threads == 1 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not start {threads} evaluation threads ({e}); running serially");
            f()
        }
    }
}

/// Mean PMD per split, with the copy-identity baseline alongside.
///
/// Samples are scored independently and reduced in index order, so the
/// result does not depend on `NPT_THREADS`.
pub fn evaluate<T: Real>(params: &ModelParams<T>, model: &ModelConfig, eval: &[EvalPair]) -> Result<EvalReport> {
    let chunks: Vec<(usize, &[EvalPair])> = eval.chunks(EVAL_BATCH).enumerate().collect();
    let scored: Vec<Result<Vec<SampleScore>>> = in_pool(|| {
        chunks
            .par_iter()
            .map(|&(c, chunk)| {
                let refs: Vec<&PairSample> = chunk.iter().map(|p| &p.sample).collect();
                let [pose, id, gt] = stacked::<T>(&refs)?;
                let pred = predict(params, model, &pose, &id)?;
                let model_pmd = pmd(&pred, &gt)?;
                let copy_pmd = pmd(&id, &gt)?;
                Ok(chunk
                    .iter()
                    .enumerate()
                    .map(|(k, p)| SampleScore {
                        index: c * EVAL_BATCH + k,
                        split: p.split,
                        pmd: model_pmd[k],
                        copy_pmd: copy_pmd[k],
                    })
                    .collect())
            })
            .collect()
    });
    let mut samples = Vec::with_capacity(eval.len());
    for s in scored {
        samples.extend(s?);
    }
    let split_mean = |split: Split, f: fn(&SampleScore) -> f64| mean_of(samples.iter().filter(|s| s.split == split).map(f));
    Ok(EvalReport {
        seen_pmd: split_mean(Split::Seen, |s| s.pmd),
        unseen_pmd: split_mean(Split::Unseen, |s| s.pmd),
        copy_seen_pmd: split_mean(Split::Seen, |s| s.copy_pmd),
        copy_unseen_pmd: split_mean(Split::Unseen, |s| s.copy_pmd),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub samples: usize,
    pub clean_pmd: f64,
    pub noisy_pmd: f64,
    /// `noisy_pmd - clean_pmd`.
    pub noise_pmd_delta: f64,
    /// `noise_pmd_delta / clean_pmd`.
    pub noise_relative: f64,
    /// Mean over samples of the largest pairwise PMD between outputs for
    /// differently shuffled pose meshes.
    pub shuffle_pmd_spread: f64,
    pub shuffle_pmd_spread_max: f64,
}

/// Noise and vertex-order sensitivity of a trained model on `samples`.
///
/// Noise is iid Gaussian with std `noise_sigma` added to the normalized pose
/// mesh. Shuffling reorders the pose mesh `n_shuffles` times.
pub fn robustness_probe<T: Real>(
    params: &ModelParams<T>,
    model: &ModelConfig,
    samples: &[&PairSample],
    noise_sigma: f64,
    n_shuffles: usize,
    seed: u64,
) -> Result<ProbeReport> {
    if samples.is_empty() {
        return Err(TrainError::Config("robustness probe needs at least one sample".into()));
    }
    if !(noise_sigma >= 0.0) {
        return Err(TrainError::Config(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let normal = Normal::new(0.0, noise_sigma).map_err(|e| TrainError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut clean, mut noisy, mut spreads) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        let [pose, id, gt] = stacked::<T>(&[*s])?;
        let out = predict(params, model, &pose, &id)?;
        clean.push(pmd(&out, &gt)?[0]);

        let mut jittered = pose.clone();
        if noise_sigma > 0.0 {
            for x in jittered.data_mut() {
                *x = *x + T::of(normal.sample(&mut rng));
            }
        }
        let out_noisy = predict(params, model, &jittered, &id)?;
        noisy.push(pmd(&out_noisy, &gt)?[0]);

        let v = pose.shape().v;
        let mut outputs = Vec::with_capacity(n_shuffles);
        for _ in 0..n_shuffles {
            let theta = VertexPermutation::random(v, &mut rng);
            let shuffled = pose.gather_vertices(theta.as_slice())?;
            outputs.push(predict(params, model, &shuffled, &id)?);
        }
        let mut spread = 0.0f64;
        for a in 0..outputs.len() {
            for b in a + 1..outputs.len() {
                spread = spread.max(pmd(&outputs[a], &outputs[b])?[0]);
            }
        }
        spreads.push(spread);
    }
    let clean_pmd = mean_of(clean.into_iter());
    let noisy_pmd = mean_of(noisy.into_iter());
    let delta = noisy_pmd - clean_pmd;
    Ok(ProbeReport {
        samples: samples.len(),
        clean_pmd,
        noisy_pmd,
        noise_pmd_delta: delta,
        noise_relative: delta / clean_pmd,
        shuffle_pmd_spread: mean_of(spreads.iter().copied()),
        shuffle_pmd_spread_max: spreads.iter().copied().fold(0.0, f64::max),
    })
}
