use std::collections::BTreeMap;

use npt_core::meshio::{normalize_unit_sphere, Mesh, VertexPermutation};
use npt_core::objectives::pmd;
use npt_core::synthdata::{
    build_pair, child_seed, load_dataset, make_dataset, pair_from_seed, sample_identity, sample_pose,
    skeleton_oracle_transfer, write_dataset, DatasetConfig, IdentityParams, KinematicBody, PoseParams, PoseRanges,
    Split, JOINT_COUNT, JOINT_NAMES, MANIFEST_FILE,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mesh_pmd(a: &Mesh, b: &Mesh) -> f64 {
    pmd(&a.to_tensor::<f64>(), &b.to_tensor::<f64>()).unwrap()[0]
}

fn joint(name: &str) -> usize {
    JOINT_NAMES.iter().position(|&n| n == name).unwrap()
}

/// `Rz · Ry · Rx` from degrees, written out independently of the library.
fn rotation(deg: [f64; 3]) -> [[f64; 3]; 3] {
    let [a, b, c] = deg.map(f64::to_radians);
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    [
        [cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa],
        [sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa],
        [-sb, cb * sa, cb * ca],
    ]
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Squared edge lengths per bone, over edges whose endpoints are both bound
/// to that bone alone.
fn rigid_edges(body: &KinematicBody, mesh: &Mesh) -> BTreeMap<usize, Vec<f64>> {
    let rigid = |v: u32| match body.skin_weights()[v as usize].as_slice() {
        [(j, w)] if *w == 1.0 => Some(*j),
        _ => None,
    };
    let mut out: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for f in &mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            if let (Some(ja), Some(jb)) = (rigid(a), rigid(b)) {
                if ja == jb {
                    out.entry(ja)
                        .or_default()
                        .push(dist2(mesh.vertices[a as usize], mesh.vertices[b as usize]));
                }
            }
        }
    }
    for v in out.values_mut() {
        v.sort_by(f64::total_cmp);
    }
    out
}

#[test]
fn knee_flexion_stays_in_range() {
    let ranges = PoseRanges::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let knees = [joint("l_knee"), joint("r_knee")];
    for _ in 0..10_000 {
        let pose = sample_pose(&mut rng, &ranges).unwrap();
        assert!(ranges.contains(&pose));
        for k in knees {
            let x = pose.angles[k][0];
            assert!((0.0..=100.0).contains(&x), "{x}");
        }
    }
}

#[test]
fn sampling_is_seeded() {
    let ranges = PoseRanges::default();
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..20)
            .map(|_| (sample_identity(&mut rng), sample_pose(&mut rng, &ranges).unwrap()))
            .collect::<Vec<_>>()
    };
    assert_eq!(draw(4), draw(4));
    assert_ne!(draw(4), draw(5));
    for (alpha, _) in draw(6) {
        assert!(alpha.length_scale.iter().chain(&alpha.radius_scale).all(|s| (0.7..=1.3).contains(s)));
        assert!((0.9..=1.1).contains(&alpha.height_scale));
    }
}

#[test]
fn collapsed_ranges_give_rest_pose() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert_eq!(sample_pose(&mut rng, &PoseRanges::zero()).unwrap(), PoseParams::rest());
}

#[test]
fn neutral_rest_skin_is_template() {
    let body = KinematicBody::new();
    let rest = body.skin_mesh(&IdentityParams::neutral(), &PoseParams::rest());
    assert_eq!(rest.vertices, body.template().vertices);
    assert_eq!(rest.faces, body.template().faces);
    assert_eq!(body.joint_count(), JOINT_COUNT);
    for (j, p) in body.parents().iter().enumerate() {
        assert_eq!(p.is_none(), j == 0);
        assert!(p.is_none_or(|p| p < j));
    }
    for row in body.skin_weights() {
        assert!(row.len() <= 4);
        assert!((row.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn root_rotation_is_rigid() {
    let body = KinematicBody::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let alpha = sample_identity(&mut rng);
        let deg = [0, 1, 2].map(|_| rng.random_range(-180.0..180.0));
        let mut beta = PoseParams::rest();
        beta.angles[0] = deg;
        let rest = body.skin_mesh(&alpha, &PoseParams::rest());
        let posed = body.skin_mesh(&alpha, &beta);
        let root = body.posed_joints(&alpha, &PoseParams::rest())[0];
        let r = rotation(deg);
        for (x, y) in rest.vertices.iter().zip(&posed.vertices) {
            let d = [x[0] - root[0], x[1] - root[1], x[2] - root[2]];
            let expected = [0, 1, 2].map(|i| root[i] + r[i][0] * d[0] + r[i][1] * d[1] + r[i][2] * d[2]);
            assert!(dist2(expected, *y).sqrt() < 1e-9);
        }
    }
}

#[test]
fn pose_change_keeps_rigid_bone_edges() {
    let body = KinematicBody::new();
    let ranges = PoseRanges::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = body.vertex_count();
    for _ in 0..10 {
        let alpha = sample_identity(&mut rng);
        let (b1, b2) = (sample_pose(&mut rng, &ranges).unwrap(), sample_pose(&mut rng, &ranges).unwrap());
        let s = build_pair(
            &body,
            (alpha.clone(), b1),
            (sample_identity(&mut rng), b2),
            VertexPermutation::identity(v),
            VertexPermutation::random(v, &mut rng),
        )
        .unwrap();
        let id = s.id_frame.denormalize(&s.id_mesh);
        let gt = s.gt_frame.denormalize(&s.gt_mesh);
        let (a, b) = (rigid_edges(&body, &id), rigid_edges(&body, &gt));
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        assert!(!a.is_empty());
        for (bone, lengths) in &a {
            for (x, y) in lengths.iter().zip(&b[bone]) {
                assert!((x.sqrt() - y.sqrt()).abs() < 1e-6, "bone {bone}");
            }
        }
    }
}

#[test]
fn oracle_matches_ground_truth_and_beats_copy() {
    let body = KinematicBody::new();
    let ranges = PoseRanges::default();
    for i in 0..100 {
        let s = pair_from_seed(&body, &ranges, 9, i).unwrap();
        let oracle = skeleton_oracle_transfer(&s, &body).unwrap();
        let err = mesh_pmd(&oracle, &s.gt_mesh);
        assert!(err < 1e-12);
        assert_eq!(oracle.faces, s.id_mesh.faces);
        assert_ne!(s.beta1, s.beta2);
        assert!(mesh_pmd(&s.id_mesh, &s.gt_mesh) > 10.0 * err);
        assert!(mesh_pmd(&s.id_mesh, &s.gt_mesh) > 1e-6);
    }
}

#[test]
fn oracle_ignores_pose_order() {
    let body = KinematicBody::new();
    let s = pair_from_seed(&body, &PoseRanges::default(), 1, 0).unwrap();
    let mut t = s.clone();
    t.theta2 = VertexPermutation::random(body.vertex_count(), &mut ChaCha8Rng::seed_from_u64(77));
    assert_eq!(skeleton_oracle_transfer(&s, &body).unwrap(), skeleton_oracle_transfer(&t, &body).unwrap());
}

#[test]
fn same_parameters_give_identical_id_and_gt() {
    let body = KinematicBody::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let alpha = sample_identity(&mut rng);
    let beta = sample_pose(&mut rng, &PoseRanges::default()).unwrap();
    let v = body.vertex_count();
    let s = build_pair(
        &body,
        (alpha.clone(), beta.clone()),
        (alpha, beta),
        VertexPermutation::random(v, &mut rng),
        VertexPermutation::random(v, &mut rng),
    )
    .unwrap();
    assert_eq!(mesh_pmd(&s.gt_mesh, &s.id_mesh), 0.0);
}

#[test]
fn dataset_splits_and_regeneration() {
    let body = KinematicBody::new();
    let config = DatasetConfig {
        identities: 3,
        poses: 4,
        eval_identities: 2,
        seen_pairs: 3,
        unseen_pairs: 2,
        ..DatasetConfig::desk(13)
    };
    let d = make_dataset(&body, &config).unwrap();
    assert_eq!(d.train.len(), 12);
    assert_eq!(d.eval.len(), 5);
    assert_eq!(d.split(Split::Seen).count(), 3);
    for a in &d.eval_alphas {
        assert!(!d.train.alphas.contains(a));
    }
    for p in &d.eval {
        assert!(d.eval_alphas.contains(&p.sample.alpha1));
        assert!(d.eval_alphas.contains(&p.sample.alpha2));
        match p.split {
            Split::Seen => assert_eq!(p.sample.beta2, d.train.betas[p.train_pose.unwrap()]),
            _ => assert!(!d.train.betas.contains(&p.sample.beta2)),
        }
        for m in [&p.sample.id_mesh, &p.sample.pose_mesh, &p.sample.gt_mesh] {
            m.validate().unwrap();
        }
    }
    for row in &d.train.meshes {
        for m in row {
            m.validate().unwrap();
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&d, dir.path()).unwrap();
    assert!(dir.path().join(MANIFEST_FILE).exists());
    assert!(dir.path().join("eval/4_gt.obj").exists());
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest(), manifest);
    assert_eq!(back.train.meshes, d.train.meshes);
    for (a, b) in back.eval.iter().zip(&d.eval) {
        assert_eq!(a.sample, b.sample);
    }
}

#[test]
fn child_seeds_differ_by_stream_and_index() {
    let seeds: Vec<u64> = (0..4).flat_map(|s| (0..50).map(move |i| child_seed(7, s, i))).collect();
    let mut unique = seeds.clone();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), seeds.len());
    assert_eq!(child_seed(7, 1, 2), child_seed(7, 1, 2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn normalized_skin_ignores_translation_and_scale(seed in any::<u64>(), s in 0.1f64..10.0, t in prop::array::uniform3(-5.0f64..5.0)) {
        let body = KinematicBody::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = body.skin_mesh(&sample_identity(&mut rng), &sample_pose(&mut rng, &PoseRanges::default()).unwrap());
        let moved = m.map_vertices(|p| [0, 1, 2].map(|k| s * p[k] + t[k]));
        let (a, _) = normalize_unit_sphere(&m).unwrap();
        let (b, _) = normalize_unit_sphere(&moved).unwrap();
        for (x, y) in a.vertices.iter().zip(&b.vertices) {
            prop_assert!(dist2(*x, *y).sqrt() < 1e-12);
        }
    }

    #[test]
    fn ground_truth_is_target_skin_in_identity_order(seed in any::<u64>()) {
        let body = KinematicBody::new();
        let s = pair_from_seed(&body, &PoseRanges::default(), seed, 0).unwrap();
        prop_assert_eq!(&s.gt_mesh.faces, &s.id_mesh.faces);
        let raw = body.skin_mesh(&s.alpha1, &s.beta2);
        for (i, &src) in s.theta1.as_slice().iter().enumerate() {
            prop_assert_eq!(s.gt_frame.apply(raw.vertices[src]), s.gt_mesh.vertices[i]);
        }
    }
}
