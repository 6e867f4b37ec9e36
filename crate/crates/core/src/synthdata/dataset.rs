use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::body::{sample_identity, sample_pose, IdentityParams, KinematicBody, PoseParams, PoseRanges};
use super::{Result, SynthError};
use crate::meshio::{normalize_unit_sphere, obj_string, permute_vertices, Mesh, Normalization, VertexPermutation};
use crate::util::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

const STREAM_TRAIN_IDENTITY: u64 = 1;
const STREAM_TRAIN_POSE: u64 = 2;
const STREAM_EVAL_IDENTITY: u64 = 3;
const STREAM_EVAL_PAIR: u64 = 4;
const STREAM_PAIR: u64 = 5;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for item `index` of `stream` under `master`.
pub fn child_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index)
}

/// One (identity, pose, ground truth) triplet.
///
/// `gt_mesh` is the identity body in the pose mesh's posture, in the identity
/// mesh's vertex order. All three meshes are normalized independently.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub id_mesh: Mesh,
    pub pose_mesh: Mesh,
    pub gt_mesh: Mesh,
    pub theta1: VertexPermutation,
    pub theta2: VertexPermutation,
    pub alpha1: IdentityParams,
    pub beta1: PoseParams,
    pub alpha2: IdentityParams,
    pub beta2: PoseParams,
    pub id_frame: Normalization,
    pub pose_frame: Normalization,
    pub gt_frame: Normalization,
}

fn shuffled_normalized(mesh: &Mesh, theta: &VertexPermutation) -> Result<(Mesh, Normalization)> {
    let permuted = permute_vertices(mesh, theta)?;
    Ok(normalize_unit_sphere(&permuted)?)
}

/// Assembles a pair from explicit parameters. `make_pair` and the dataset
/// generator both go through here.
pub fn build_pair(
    body: &KinematicBody,
    (alpha1, beta1): (IdentityParams, PoseParams),
    (alpha2, beta2): (IdentityParams, PoseParams),
    theta1: VertexPermutation,
    theta2: VertexPermutation,
) -> Result<PairSample> {
    let id = body.skin_mesh(&alpha1, &beta1);
    let pose = body.skin_mesh(&alpha2, &beta2);
    let gt = body.skin_mesh(&alpha1, &beta2);
    let (id_mesh, id_frame) = shuffled_normalized(&id, &theta1)?;
    let (gt_mesh, gt_frame) = shuffled_normalized(&gt, &theta1)?;
    let (pose_mesh, pose_frame) = shuffled_normalized(&pose, &theta2)?;
    Ok(PairSample {
        id_mesh,
        pose_mesh,
        gt_mesh,
        theta1,
        theta2,
        alpha1,
        beta1,
        alpha2,
        beta2,
        id_frame,
        pose_frame,
        gt_frame,
    })
}

/// Random pair: fresh α and β for both sides, fresh θ1 shared by id and gt,
/// independent θ2 for the pose mesh.
pub fn make_pair<R: Rng + ?Sized>(body: &KinematicBody, ranges: &PoseRanges, rng: &mut R) -> Result<PairSample> {
    let alpha1 = sample_identity(rng);
    let beta1 = sample_pose(rng, ranges)?;
    let alpha2 = sample_identity(rng);
    let beta2 = sample_pose(rng, ranges)?;
    let v = body.vertex_count();
    let theta1 = VertexPermutation::random(v, rng);
    let theta2 = VertexPermutation::random(v, rng);
    build_pair(body, (alpha1, beta1), (alpha2, beta2), theta1, theta2)
}

/// Exact transfer from the known parameters: the identity body skinned with
/// the pose mesh's β, shuffled by θ1 and normalized.
pub fn skeleton_oracle_transfer(sample: &PairSample, body: &KinematicBody) -> Result<Mesh> {
    let posed = body.skin_mesh(&sample.alpha1, &sample.beta2);
    Ok(shuffled_normalized(&posed, &sample.theta1)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub identities: usize,
    pub poses: usize,
    pub eval_identities: usize,
    pub seen_pairs: usize,
    pub unseen_pairs: usize,
    pub seed: u64,
    pub ranges: PoseRanges,
}

impl DatasetConfig {
    /// 8 identities × 50 poses for training; 4 held-out identities with 24
    /// seen-pose and 24 unseen-pose evaluation pairs.
    pub fn desk(seed: u64) -> Self {
        Self {
            identities: 8,
            poses: 50,
            eval_identities: 4,
            seen_pairs: 24,
            unseen_pairs: 24,
            seed,
            ranges: PoseRanges::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.identities == 0 || self.poses == 0 || self.eval_identities == 0 {
            return Err(SynthError::Config("identity and pose counts must be at least 1".into()));
        }
        self.ranges.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Seen,
    Unseen,
}

/// Regeneration record for one identity, pose or evaluation pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub split: Split,
    pub kind: String,
    pub seed: u64,
    /// Files written for this record, relative to the dataset directory.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: DatasetConfig,
    pub vertex_count: usize,
    pub samples: Vec<SampleRecord>,
}

/// Training grid: every identity skinned in every pose, each normalized in
/// canonical vertex order. Shuffling happens when pairs are drawn.
#[derive(Debug, Clone)]
pub struct TrainPool {
    pub alphas: Vec<IdentityParams>,
    pub betas: Vec<PoseParams>,
    /// `meshes[identity][pose]`.
    pub meshes: Vec<Vec<Mesh>>,
}

impl TrainPool {
    pub fn identities(&self) -> usize {
        self.alphas.len()
    }

    pub fn poses(&self) -> usize {
        self.betas.len()
    }

    pub fn len(&self) -> usize {
        self.identities() * self.poses()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct EvalPair {
    pub split: Split,
    /// Index into the evaluation identities.
    pub identity: usize,
    /// Training pose used by seen-pose pairs.
    pub train_pose: Option<usize>,
    pub sample: PairSample,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub body: KinematicBody,
    pub train: TrainPool,
    pub eval_alphas: Vec<IdentityParams>,
    pub eval: Vec<EvalPair>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &EvalPair> {
        self.eval.iter().filter(move |p| p.split == split)
    }

    pub fn manifest(&self) -> Manifest {
        let c = &self.config;
        let mut samples = Vec::new();
        for i in 0..c.identities {
            samples.push(SampleRecord {
                index: i,
                split: Split::Train,
                kind: "identity".into(),
                seed: child_seed(c.seed, STREAM_TRAIN_IDENTITY, i as u64),
                files: (0..c.poses).map(|k| train_file(i, k)).collect(),
            });
        }
        for k in 0..c.poses {
            samples.push(SampleRecord {
                index: k,
                split: Split::Train,
                kind: "pose".into(),
                seed: child_seed(c.seed, STREAM_TRAIN_POSE, k as u64),
                files: Vec::new(),
            });
        }
        for e in 0..c.eval_identities {
            samples.push(SampleRecord {
                index: e,
                split: Split::Unseen,
                kind: "eval_identity".into(),
                seed: child_seed(c.seed, STREAM_EVAL_IDENTITY, e as u64),
                files: Vec::new(),
            });
        }
        for (idx, p) in self.eval.iter().enumerate() {
            samples.push(SampleRecord {
                index: idx,
                split: p.split,
                kind: "pair".into(),
                seed: child_seed(c.seed, STREAM_EVAL_PAIR, idx as u64),
                files: ["id", "pose", "gt"].iter().map(|k| eval_file(idx, k)).collect(),
            });
        }
        Manifest {
            version: MANIFEST_VERSION,
            config: c.clone(),
            vertex_count: self.body.vertex_count(),
            samples,
        }
    }

    /// A random training pair assembled from the pool with a fresh θ1 and θ2.
    ///
    /// Vertex orders of `id` and `gt` agree.
    pub fn draw_train_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (Mesh, Mesh, Mesh) {
        let pool = &self.train;
        let i = rng.random_range(0..pool.identities());
        let k = rng.random_range(0..pool.poses());
        let j = rng.random_range(0..pool.identities());
        let l = rng.random_range(0..pool.poses());
        let v = self.body.vertex_count();
        let theta1 = VertexPermutation::random(v, rng);
        let theta2 = VertexPermutation::random(v, rng);
        let shuffle = |m: &Mesh, t: &VertexPermutation| permute_vertices(m, t).expect("pool meshes share V");
        (
            shuffle(&pool.meshes[i][k], &theta1),
            shuffle(&pool.meshes[j][l], &theta2),
            shuffle(&pool.meshes[i][l], &theta1),
        )
    }
}

fn train_file(identity: usize, pose: usize) -> String {
    format!("train/{identity}_{pose}.obj")
}

fn eval_file(idx: usize, kind: &str) -> String {
    format!("eval/{idx}_{kind}.obj")
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generates the full dataset deterministically from `config`.
///
/// Seen-pose pairs take β2 from the training pose pool; unseen-pose pairs
/// draw a fresh β2. Evaluation identities never appear in training.
pub fn make_dataset(body: &KinematicBody, config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let seed = config.seed;
    let alphas: Vec<_> = (0..config.identities)
        .map(|i| sample_identity(&mut seeded(child_seed(seed, STREAM_TRAIN_IDENTITY, i as u64))))
        .collect();
    let betas = (0..config.poses)
        .map(|k| sample_pose(&mut seeded(child_seed(seed, STREAM_TRAIN_POSE, k as u64)), &config.ranges))
        .collect::<Result<Vec<_>>>()?;
    let meshes = alphas
        .iter()
        .map(|a| {
            betas
                .iter()
                .map(|b| Ok(normalize_unit_sphere(&body.skin_mesh(a, b))?.0))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let eval_alphas: Vec<_> = (0..config.eval_identities)
        .map(|e| sample_identity(&mut seeded(child_seed(seed, STREAM_EVAL_IDENTITY, e as u64))))
        .collect();

    let v = body.vertex_count();
    let total = config.seen_pairs + config.unseen_pairs;
    let mut eval = Vec::with_capacity(total);
    for idx in 0..total {
        let split = if idx < config.seen_pairs { Split::Seen } else { Split::Unseen };
        let mut rng = seeded(child_seed(seed, STREAM_EVAL_PAIR, idx as u64));
        let identity = idx % config.eval_identities;
        let pose_identity = rng.random_range(0..config.eval_identities);
        let beta1 = sample_pose(&mut rng, &config.ranges)?;
        let (train_pose, beta2) = match split {
            Split::Seen => {
                let k = rng.random_range(0..config.poses);
                (Some(k), betas[k].clone())
            }
            _ => (None, sample_pose(&mut rng, &config.ranges)?),
        };
        let theta1 = VertexPermutation::random(v, &mut rng);
        let theta2 = VertexPermutation::random(v, &mut rng);
        let sample = build_pair(
            body,
            (eval_alphas[identity].clone(), beta1),
            (eval_alphas[pose_identity].clone(), beta2),
            theta1,
            theta2,
        )?;
        eval.push(EvalPair {
            split,
            identity,
            train_pose,
            sample,
        });
    }
    Ok(Dataset {
        config: config.clone(),
        body: body.clone(),
        train: TrainPool { alphas, betas, meshes },
        eval_alphas,
        eval,
    })
}

/// Convenience wrapper for one-off pairs outside a dataset.
pub fn pair_from_seed(body: &KinematicBody, ranges: &PoseRanges, master: u64, index: u64) -> Result<PairSample> {
    make_pair(body, ranges, &mut seeded(child_seed(master, STREAM_PAIR, index)))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `manifest.json`, the training pool and the evaluation triples.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    for sub in ["", "train", "eval"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    for (i, row) in dataset.train.meshes.iter().enumerate() {
        for (k, m) in row.iter().enumerate() {
            let path = dir.join(train_file(i, k));
            write_atomic(&path, obj_string(m).as_bytes()).map_err(io_err(&path))?;
        }
    }
    for (idx, p) in dataset.eval.iter().enumerate() {
        let s = &p.sample;
        for (kind, m) in [("id", &s.id_mesh), ("pose", &s.pose_mesh), ("gt", &s.gt_mesh)] {
            let path = dir.join(eval_file(idx, kind));
            write_atomic(&path, obj_string(m).as_bytes()).map_err(io_err(&path))?;
        }
    }
    let manifest = dataset.manifest();
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST_FILE);
    write_atomic(&path, json.as_bytes()).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Reads `manifest.json` and regenerates the dataset from its seeds.
///
/// The OBJ files are not parsed: regeneration is bit-exact, the text files
/// are rounded.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| SynthError::Manifest(e.to_string()))?;
    Dataset::from_manifest(&manifest)
}

impl Dataset {
    pub fn from_manifest(manifest: &Manifest) -> Result<Self> {
        if manifest.version != MANIFEST_VERSION {
            return Err(SynthError::Manifest(format!("unsupported version {}", manifest.version)));
        }
        let body = KinematicBody::new();
        if manifest.vertex_count != body.vertex_count() {
            return Err(SynthError::Manifest(format!(
                "manifest has {} vertices per mesh, body has {}",
                manifest.vertex_count,
                body.vertex_count()
            )));
        }
        let dataset = make_dataset(&body, &manifest.config)?;
        let regenerated = dataset.manifest();
        if regenerated.samples.len() != manifest.samples.len()
            || regenerated.samples.iter().zip(&manifest.samples).any(|(a, b)| a.seed != b.seed)
        {
            return Err(SynthError::Manifest("sample seeds do not match the config".into()));
        }
        Ok(dataset)
    }
}
