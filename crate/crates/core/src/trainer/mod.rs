//! Training loop, evaluation protocol, ablations and robustness probes.

mod ablation;
mod eval;
mod metrics;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::meshio::{build_edge_list, MeshError, VertexPermutation};
use crate::network::checkpoint::{save_checkpoint, CheckpointError};
use crate::network::{forward, BoundParams, ModelConfig, ModelParams, NetworkError, Variant, Widths, NORM_EPS};
use crate::objectives::{total_loss, EdgeList, LossBreakdown, LAMBDA_EDGE};
use crate::synthdata::{child_seed, Dataset, SynthError};
use crate::tensor::{AdamConfig, AdamState, Graph, Real, Tensor3, TensorError};

pub use ablation::{ablation_configs, run_ablation_suite, AblationRow, AblationTable};
pub use eval::{eval_threads, evaluate, robustness_probe, EvalReport, ProbeReport, SampleScore};
pub use metrics::{MetricsLog, MetricsRow};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: rec={} edge={} total={}", .loss.rec, .loss.edge, .loss.total)]
    NonFinite {
        epoch: usize,
        batch: usize,
        loss: LossBreakdown,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}` (expected f32 or f64)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_edge: f64,
    pub variant: Variant,
    pub widths: Widths,
    pub seed: u64,
    pub precision: Precision,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Evaluate on the held-out pairs after every epoch.
    pub eval_each_epoch: bool,
    /// Fill the `seconds` column of the metrics CSV. Off by default so that
    /// repeated runs produce identical files.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            batch_size: 8,
            epochs: 30,
            lambda_edge: LAMBDA_EDGE,
            variant: Variant::Full,
            widths: Widths::DESK,
            seed: 0,
            precision: Precision::F32,
            checkpoint_every: 0,
            eval_each_epoch: true,
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lambda_edge >= 0.0) || !self.lambda_edge.is_finite() {
            return Err(TrainError::Config(format!("lambda_edge must be >= 0, got {}", self.lambda_edge)));
        }
        self.widths.validate()?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            widths: self.widths,
            variant: self.variant,
            eps: NORM_EPS,
            seed: self.seed,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Where training writes its artifacts.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("model.npt")
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch_{epoch:04}.npt"))
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
}

/// Parameters and log of a finished run.
#[derive(Debug, Clone)]
pub struct Trained<T> {
    pub params: ModelParams<T>,
    pub model: ModelConfig,
    pub log: MetricsLog,
    pub checkpoints: Vec<PathBuf>,
}

/// Training pool as tensors, plus the template edge list.
struct TensorPool<T> {
    meshes: Vec<Vec<Tensor3<T>>>,
    edges: Vec<(u32, u32)>,
    vertices: usize,
}

impl<T: Real> TensorPool<T> {
    fn new(dataset: &Dataset) -> Result<Self> {
        let meshes: Vec<Vec<Tensor3<T>>> = dataset
            .train
            .meshes
            .iter()
            .map(|row| row.iter().map(|m| m.to_tensor()).collect())
            .collect();
        let first = dataset.train.meshes.first().and_then(|r| r.first()).ok_or(TrainError::EmptyDataset)?;
        Ok(Self {
            meshes,
            edges: build_edge_list(first).pairs().to_vec(),
            vertices: first.vertex_count(),
        })
    }
}

/// Edge list of the template after reordering vertices by `theta`.
pub(crate) fn permuted_edges(edges: &[(u32, u32)], theta: &VertexPermutation) -> EdgeList {
    let inv = theta.inverse();
    let inv = inv.as_slice();
    let mut pairs: Vec<(u32, u32)> = edges.iter().map(|&(a, b)| (inv[a as usize] as u32, inv[b as usize] as u32)).collect();
    pairs.sort_unstable();
    EdgeList::from_sorted_unchecked(pairs)
}

/// One minibatch: pose, identity and ground truth stacked along `n`.
pub struct Batch<T> {
    pub pose: Tensor3<T>,
    pub identity: Tensor3<T>,
    pub gt: Tensor3<T>,
    pub edges: Vec<EdgeList>,
}

/// Per-epoch pairing: every pool mesh serves once as the identity input,
/// paired with a random pose mesh; the target is the same identity in the
/// partner's pose. Both sides get fresh vertex shuffles.
fn epoch_batches<T: Real>(pool: &TensorPool<T>, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Batch<T>>> {
    let ids = pool.meshes.len();
    let poses = pool.meshes[0].len();
    let mut order: Vec<(usize, usize)> = (0..ids).flat_map(|i| (0..poses).map(move |k| (i, k))).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let (mut pose, mut identity, mut gt, mut edges) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for &(i, k) in chunk {
            let j = rng.random_range(0..ids);
            let l = rng.random_range(0..poses);
            let theta1 = VertexPermutation::random(pool.vertices, rng);
            let theta2 = VertexPermutation::random(pool.vertices, rng);
            identity.push(pool.meshes[i][k].gather_vertices(theta1.as_slice())?);
            gt.push(pool.meshes[i][l].gather_vertices(theta1.as_slice())?);
            pose.push(pool.meshes[j][l].gather_vertices(theta2.as_slice())?);
            edges.push(permuted_edges(&pool.edges, &theta1));
        }
        batches.push(Batch {
            pose: Tensor3::stack(&pose)?,
            identity: Tensor3::stack(&identity)?,
            gt: Tensor3::stack(&gt)?,
            edges,
        });
    }
    Ok(batches)
}

/// Forward, loss, backward and one Adam update. Returns the loss before the
/// update.
pub fn train_step<T: Real>(
    params: &mut ModelParams<T>,
    adam: &mut AdamState<T>,
    model: &ModelConfig,
    batch: &Batch<T>,
    lambda_edge: f64,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, true);
    let pose = g.constant(batch.pose.clone());
    let identity = g.constant(batch.identity.clone());
    let pred = forward(&mut g, pose, identity, &bound, model)?;
    let (loss, parts) = total_loss(&mut g, pred, &batch.gt, &batch.edges, lambda_edge)?;
    if !parts.total.is_finite() {
        return Ok(parts);
    }
    let mut grads = g.backward(loss)?;
    let grads: Vec<Tensor3<T>> = bound.vars().iter().map(|&v| grads.take(v)).collect();
    adam.step(params.tensors_mut(), &grads)?;
    Ok(parts)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Trains `cfg.variant` on `dataset`. With `output`, writes checkpoints and
/// the metrics CSV there.
pub fn train<T: Real>(dataset: &Dataset, cfg: &TrainConfig, output: Option<&TrainOutput>) -> Result<Trained<T>> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let model = cfg.model_config();
    let mut params = ModelParams::<T>::init(&model, child_seed(cfg.seed, 0x1417, 0))?;
    let mut adam = AdamState::new(cfg.adam(), params.tensors());
    let pool = TensorPool::<T>::new(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, 0x1417, 1));
    let mut log = MetricsLog::default();
    let mut checkpoints = Vec::new();
    if let Some(out) = output {
        std::fs::create_dir_all(&out.dir).map_err(io_err(&out.dir))?;
    }

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let batches = epoch_batches(&pool, cfg.batch_size, &mut rng)?;
        let mut sums = [0.0f64; 3];
        for (b, batch) in batches.iter().enumerate() {
            let parts = train_step(&mut params, &mut adam, &model, batch, cfg.lambda_edge)?;
            if !parts.total.is_finite() {
                log::error!("epoch {epoch} batch {b}: {parts:?}");
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    loss: parts,
                });
            }
            sums[0] += parts.rec;
            sums[1] += parts.edge;
            sums[2] += parts.total;
        }
        let nb = batches.len() as f64;
        let (seen, unseen) = if cfg.eval_each_epoch || epoch == cfg.epochs {
            let r = evaluate(&params, &model, &dataset.eval)?;
            (Some(r.seen_pmd), Some(r.unseen_pmd))
        } else {
            (None, None)
        };
        let seconds = start.elapsed().as_secs_f64();
        let row = MetricsRow {
            epoch,
            rec: sums[0] / nb,
            edge: sums[1] / nb,
            total: sums[2] / nb,
            seen_pmd: seen,
            unseen_pmd: unseen,
            seconds,
        };
        log::info!(
            "epoch {epoch}/{}: total {:.6} rec {:.6} edge {:.3} seen {:?} unseen {:?} ({seconds:.1}s)",
            cfg.epochs,
            row.total,
            row.rec,
            row.edge,
            seen,
            unseen
        );
        log.push(row);

        if let Some(out) = output {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs {
                let path = out.epoch_checkpoint(epoch);
                save_checkpoint(&params, &model, &path)?;
                checkpoints.push(path);
            }
            log.write_csv(out.metrics(), cfg.record_time).map_err(io_err(&out.metrics()))?;
        }
    }
    if let Some(out) = output {
        let path = out.final_checkpoint();
        save_checkpoint(&params, &model, &path)?;
        checkpoints.push(path);
        log.write_csv(out.metrics(), cfg.record_time).map_err(io_err(&out.metrics()))?;
    }
    Ok(Trained {
        params,
        model,
        log,
        checkpoints,
    })
}
