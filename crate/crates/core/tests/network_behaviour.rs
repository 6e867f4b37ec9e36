use npt_core::meshio::{normalize_unit_sphere, Mesh};
use npt_core::network::checkpoint::{decode, encode, load_checkpoint, load_checkpoint_for, save_checkpoint, CheckpointError};
use npt_core::network::{
    encode_pose, forward, forward_tapped, predict, spadain, spadain_resblock, BoundParams, ConvVars, ModelConfig,
    ModelParams, NetworkError, NormUnit, ResBlockVars, SpadainVars, Variant, Widths,
};
use npt_core::tensor::{Graph, Shape, Tensor3};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, seed: u64) -> Tensor3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor3::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
}

fn permutation(v: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..v).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

/// Straight-line instance norm: population variance over V.
fn instance_norm_oracle(h: &Tensor3<f64>, eps: f64) -> Tensor3<f64> {
    let s = h.shape();
    let mut out = h.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let row = h.row(n, c);
            let mean = row.iter().sum::<f64>() / s.v as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / s.v as f64;
            for v in 0..s.v {
                out.set(n, c, v, (row[v] - mean) / (var + eps).sqrt());
            }
        }
    }
    out
}

/// `w · m + b` per vertex.
fn conv_oracle(m: &Tensor3<f64>, w: &Tensor3<f64>, b: &Tensor3<f64>) -> Tensor3<f64> {
    let (s, c_out) = (m.shape(), w.shape().c);
    Tensor3::from_fn(Shape::new(s.n, c_out, s.v), |n, o, v| {
        b.get(0, o, 0) + (0..s.c).map(|i| w.get(0, o, i) * m.get(n, i, v)).sum::<f64>()
    })
}

struct UnitTensors {
    gw: Tensor3<f64>,
    gb: Tensor3<f64>,
    bw: Tensor3<f64>,
    bb: Tensor3<f64>,
}

fn run_spadain(h: &Tensor3<f64>, m: &Tensor3<f64>, u: &UnitTensors) -> Result<Tensor3<f64>, NetworkError> {
    let mut g = Graph::new();
    let (hv, mv) = (g.constant(h.clone()), g.constant(m.clone()));
    let vars = SpadainVars {
        gamma: ConvVars {
            weight: g.constant(u.gw.clone()),
            bias: g.constant(u.gb.clone()),
        },
        beta: ConvVars {
            weight: g.constant(u.bw.clone()),
            bias: g.constant(u.bb.clone()),
        },
    };
    let out = spadain(&mut g, hv, mv, &vars, 1e-5)?;
    Ok(g.value(out).clone())
}

fn conv_count(c_in: usize, c_out: usize) -> usize {
    c_in * c_out + c_out
}

/// Scalar count from the width chain alone.
fn param_count_oracle(w: Widths) -> usize {
    let latent = w.enc3 + 3;
    let block = |c: usize| 6 * conv_count(3, c) + 3 * conv_count(c, c);
    conv_count(3, w.enc1)
        + conv_count(w.enc1, w.enc2)
        + conv_count(w.enc2, w.enc3)
        + conv_count(latent, latent)
        + block(latent)
        + conv_count(latent, w.dec2)
        + block(w.dec2)
        + conv_count(w.dec2, w.dec3)
        + block(w.dec3)
        + conv_count(w.dec3, 3)
}

fn unit_tensors(c: usize, seed: u64) -> UnitTensors {
    UnitTensors {
        gw: random(Shape::new(1, c, 3), seed),
        gb: random(Shape::new(1, c, 1), seed ^ 1),
        bw: random(Shape::new(1, c, 3), seed ^ 2),
        bb: random(Shape::new(1, c, 1), seed ^ 3),
    }
}

#[test]
fn spadain_with_unit_gamma_is_instance_norm() {
    let h = random(Shape::new(2, 5, 7), 1);
    let m = random(Shape::new(2, 3, 7), 2);
    let u = UnitTensors {
        gw: Tensor3::zeros(Shape::new(1, 5, 3)),
        gb: Tensor3::full(Shape::new(1, 5, 1), 1.0),
        bw: Tensor3::zeros(Shape::new(1, 5, 3)),
        bb: Tensor3::zeros(Shape::new(1, 5, 1)),
    };
    let out = run_spadain(&h, &m, &u).unwrap();
    assert!(out.max_abs_diff(&instance_norm_oracle(&h, 1e-5)).unwrap() < 1e-12);
}

#[test]
fn spadain_with_zero_gamma_is_beta_bias() {
    let h = random(Shape::new(1, 4, 6), 3);
    let m = random(Shape::new(1, 3, 6), 4);
    let b = random(Shape::new(1, 4, 1), 5);
    let u = UnitTensors {
        gw: Tensor3::zeros(Shape::new(1, 4, 3)),
        gb: Tensor3::zeros(Shape::new(1, 4, 1)),
        bw: Tensor3::zeros(Shape::new(1, 4, 3)),
        bb: b.clone(),
    };
    let out = run_spadain(&h, &m, &u).unwrap();
    for c in 0..4 {
        assert!(out.row(0, c).iter().all(|&x| x == b.get(0, c, 0)));
    }
}

#[test]
fn spadain_rejects_vertex_mismatch() {
    let h = random(Shape::new(1, 4, 6), 3);
    let m = random(Shape::new(1, 3, 5), 4);
    assert!(run_spadain(&h, &m, &unit_tensors(4, 9)).is_err());
}

#[test]
fn resblock_with_zero_convs_outputs_zero() {
    let (c, v) = (4, 9);
    let mut g = Graph::<f64>::new();
    let h = g.constant(random(Shape::new(2, c, v), 1));
    let m = g.constant(random(Shape::new(2, 3, v), 2));
    let mut conv = |c_in: usize, c_out: usize| ConvVars {
        weight: g.constant(Tensor3::zeros(Shape::new(1, c_out, c_in))),
        bias: g.constant(Tensor3::zeros(Shape::new(1, c_out, 1))),
    };
    let mut unit = || NormUnit {
        normalize: true,
        affine: Some(SpadainVars {
            gamma: conv(3, c),
            beta: conv(3, c),
        }),
    };
    let units = [unit(), unit(), unit()];
    let mut conv = |c_in: usize, c_out: usize| ConvVars {
        weight: g.constant(Tensor3::zeros(Shape::new(1, c_out, c_in))),
        bias: g.constant(Tensor3::zeros(Shape::new(1, c_out, 1))),
    };
    let r = ResBlockVars {
        units,
        conv_1: conv(c, c),
        conv_2: conv(c, c),
        conv_skip: conv(c, c),
    };
    let out = spadain_resblock(&mut g, h, m, &r, 1e-5).unwrap();
    assert_eq!(g.shape(out), Shape::new(2, c, v));
    assert!(g.value(out).data().iter().all(|&x| x == 0.0));

    let narrow = g.constant(random(Shape::new(2, c + 1, v), 3));
    assert!(matches!(
        spadain_resblock(&mut g, narrow, m, &r, 1e-5),
        Err(NetworkError::WidthMismatch { .. })
    ));
}

#[test]
fn encoder_shape_zero_input_and_equivariance() {
    let cfg = ModelConfig::desk(Variant::Full, 3);
    let params = ModelParams::<f64>::init(&cfg, 3).unwrap();
    let run = |x: Tensor3<f64>| {
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params, false);
        let enc = [
            bound.conv("enc.conv1").unwrap(),
            bound.conv("enc.conv2").unwrap(),
            bound.conv("enc.conv3").unwrap(),
        ];
        let xv = g.constant(x);
        let out = encode_pose(&mut g, xv, &enc, 1e-5).unwrap();
        g.value(out).clone()
    };
    for v in [4, 17] {
        let zero = run(Tensor3::zeros(Shape::new(2, 3, v)));
        assert_eq!(zero.shape(), Shape::new(2, cfg.widths.enc3, v));
        assert!(zero.data().iter().all(|&x| x == 0.0));
    }
    let x = random(Shape::new(2, 3, 20), 4);
    let perm = permutation(20, 5);
    let expected = run(x.clone()).gather_vertices(&perm).unwrap();
    assert!(run(x.gather_vertices(&perm).unwrap()).max_abs_diff(&expected).unwrap() < 1e-6);

    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, &params, false);
    let enc = [
        bound.conv("enc.conv1").unwrap(),
        bound.conv("enc.conv2").unwrap(),
        bound.conv("enc.conv3").unwrap(),
    ];
    let four = g.constant(random(Shape::new(1, 4, 5), 6));
    assert!(matches!(
        encode_pose(&mut g, four, &enc, 1e-5),
        Err(NetworkError::InputChannels { .. })
    ));
}

#[test]
fn init_is_seeded_and_fan_in_bounded() {
    let cfg = ModelConfig::paper(Variant::Full, 11);
    let a = ModelParams::<f64>::init(&cfg, 11).unwrap();
    let b = ModelParams::<f64>::init(&cfg, 11).unwrap();
    assert_eq!(a, b);
    let bound = (1.0 / 128f64).sqrt();
    assert!(a.get("enc.conv3.weight").unwrap().data().iter().all(|x| x.abs() <= bound));
    for (name, t) in a.iter() {
        if name.ends_with(".bias") {
            assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
        }
    }
    assert_ne!(ModelParams::<f64>::init(&cfg, 12).unwrap(), a);
}

#[test]
fn parameter_count_follows_width_chain() {
    let paper = ModelParams::<f32>::init(&ModelConfig::paper(Variant::Full, 0), 0).unwrap();
    assert_eq!(paper.num_scalars(), param_count_oracle(Widths::PAPER));
    assert_eq!(paper.num_scalars(), 6_054_941);
    let desk = ModelParams::<f32>::init(&ModelConfig::desk(Variant::Full, 0), 0).unwrap();
    assert_eq!(desk.num_scalars(), param_count_oracle(Widths::DESK));
}

#[test]
fn forward_fuzz_is_finite_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for variant in Variant::ALL {
        let cfg = ModelConfig::desk(variant, 21);
        let params = ModelParams::<f32>::init(&cfg, 21).unwrap();
        // 1000 random input pairs per variant, in batches of 8
        for _ in 0..125 {
            let v = rng.random_range(3..24);
            let mut coords = || Tensor3::from_fn(Shape::new(8, 3, v), |_, _, _| rng.random_range(-1.0f32..1.0));
            let (pose, id) = (coords(), coords());
            let out = predict(&params, &cfg, &pose, &id).unwrap();
            assert_eq!(out.shape(), Shape::new(8, 3, v));
            assert!(out.data().iter().all(|x| x.is_finite() && x.abs() < 1.0), "{variant}");
        }
    }
}

#[test]
fn forward_rejects_mismatched_meshes() {
    let cfg = ModelConfig::desk(Variant::Full, 1);
    let params = ModelParams::<f64>::init(&cfg, 1).unwrap();
    let err = predict(&params, &cfg, &random(Shape::new(1, 3, 10), 1), &random(Shape::new(1, 3, 11), 2)).unwrap_err();
    assert!(matches!(err, NetworkError::MeshMismatch { .. }));
}

#[test]
fn spadain_units_see_normalized_activations() {
    for variant in [Variant::Full, Variant::Maxpool] {
        let cfg = ModelConfig::desk(variant, 4);
        let params = ModelParams::<f64>::init(&cfg, 4).unwrap();
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params, false);
        let pose = g.constant(random(Shape::new(2, 3, 30), 5));
        let id = g.constant(random(Shape::new(2, 3, 30), 6));
        let mut taps = Vec::new();
        forward_tapped(&mut g, pose, id, &bound, &cfg, &mut taps).unwrap();
        let expected_units = if variant == Variant::Maxpool { 7 } else { 9 };
        assert_eq!(taps.len(), expected_units, "{variant}");
        for (input, normed) in taps {
            let oracle = instance_norm_oracle(g.value(input), 1e-5);
            assert!(g.value(normed).max_abs_diff(&oracle).unwrap() < 1e-12);
        }
    }
}

#[test]
fn normalization_makes_forward_similarity_invariant() {
    let cfg = ModelConfig::desk(Variant::Full, 8);
    let params = ModelParams::<f64>::init(&cfg, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mesh = || {
        let vertices = (0..25).map(|_| [0, 1, 2].map(|_| rng.random_range(-2.0..2.0))).collect();
        Mesh::new(vertices, vec![]).unwrap()
    };
    let (pose, id) = (mesh(), mesh());
    let moved = |m: &Mesh| m.map_vertices(|p| [3.0 * p[0] + 1.0, 3.0 * p[1] + 2.0, 3.0 * p[2] + 3.0]);
    let run = |p: &Mesh, i: &Mesh| {
        let p = normalize_unit_sphere(p).unwrap().0.to_tensor::<f64>();
        let i = normalize_unit_sphere(i).unwrap().0.to_tensor::<f64>();
        predict(&params, &cfg, &p, &i).unwrap()
    };
    let diff = run(&pose, &id).max_abs_diff(&run(&moved(&pose), &moved(&id))).unwrap();
    assert!(diff < 1e-9, "{diff}");
}

#[test]
fn checkpoint_round_trip_and_diagnostics() {
    let cfg = ModelConfig::desk(Variant::Full, 5);
    let params = ModelParams::<f32>::init(&cfg, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.npt");
    save_checkpoint(&params, &cfg, &path).unwrap();
    let (back, back_cfg) = load_checkpoint(&path).unwrap();
    assert_eq!(back_cfg, cfg);
    for (a, b) in params.tensors().iter().zip(back.tensors()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(encode(&back, &back_cfg), std::fs::read(&path).unwrap());

    let bytes = encode(&params, &cfg);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad), Err(CheckpointError::BadMagic(_))));
    assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated { .. })));
    let key = b"\"version\":1";
    let at = bytes.windows(key.len()).position(|w| w == key).unwrap() + key.len() - 1;
    let mut newer = bytes.clone();
    newer[at] = b'2';
    assert!(matches!(decode(&newer), Err(CheckpointError::Version { found: 2 })));

    let wider = ModelConfig::new(Widths::from_array([16, 32, 64, 64, 32]).unwrap(), Variant::Full, 5);
    let err = load_checkpoint_for(&path, &wider).unwrap_err();
    assert!(matches!(err, CheckpointError::ShapeMismatch { .. }));
    assert!(err.to_string().contains("enc.conv3.weight"), "{err}");
    assert!(matches!(load_checkpoint(dir.path().join("none.npt")), Err(CheckpointError::Io { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spadain_matches_formula(n in 1usize..3, c in 1usize..8, v in 2usize..16, seed in any::<u64>()) {
        let h = random(Shape::new(n, c, v), seed).map(|x| 3.0 * x + 0.5);
        let m = random(Shape::new(n, 3, v), seed ^ 7);
        let u = unit_tensors(c, seed ^ 11);
        let gamma = conv_oracle(&m, &u.gw, &u.gb);
        let beta = conv_oracle(&m, &u.bw, &u.bb);
        let normed = instance_norm_oracle(&h, 1e-5);
        let expected = Tensor3::from_fn(h.shape(), |a, b, k| gamma.get(a, b, k) * normed.get(a, b, k) + beta.get(a, b, k));
        let out = run_spadain(&h, &m, &u).unwrap();
        prop_assert!(out.max_abs_diff(&expected).unwrap() < 1e-9);
    }

    #[test]
    fn joint_order_equivariance(variant_idx in 0usize..4, v in 3usize..40, seed in any::<u64>()) {
        let cfg = ModelConfig::desk(Variant::ALL[variant_idx], seed);
        let params = ModelParams::<f64>::init(&cfg, seed).unwrap();
        let pose = random(Shape::new(2, 3, v), seed ^ 1);
        let id = random(Shape::new(2, 3, v), seed ^ 2);
        let perm = permutation(v, seed ^ 3);
        let p = |t: &Tensor3<f64>| t.gather_vertices(&perm).unwrap();
        let expected = p(&predict(&params, &cfg, &pose, &id).unwrap());
        let got = predict(&params, &cfg, &p(&pose), &p(&id)).unwrap();
        let dev = got.max_abs_diff(&expected).unwrap();
        prop_assert!(dev < 1e-6, "{} v={} dev={}", cfg.variant, v, dev);
    }

    /// Reordering only the identity mesh is the same as reordering the pose
    /// mesh by the inverse and then the output.
    #[test]
    fn identity_reorder_is_inverse_pose_reorder(variant_idx in 0usize..4, v in 3usize..40, seed in any::<u64>()) {
        let cfg = ModelConfig::desk(Variant::ALL[variant_idx], seed);
        let params = ModelParams::<f64>::init(&cfg, seed).unwrap();
        let pose = random(Shape::new(2, 3, v), seed ^ 1);
        let id = random(Shape::new(2, 3, v), seed ^ 2);
        let perm = permutation(v, seed ^ 3);
        let mut inverse = vec![0; v];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let got = predict(&params, &cfg, &pose, &id.gather_vertices(&perm).unwrap()).unwrap();
        let expected = predict(&params, &cfg, &pose.gather_vertices(&inverse).unwrap(), &id)
            .unwrap()
            .gather_vertices(&perm)
            .unwrap();
        prop_assert!(got.max_abs_diff(&expected).unwrap() < 1e-6);
        if cfg.variant == Variant::Maxpool {
            let plain = predict(&params, &cfg, &pose, &id).unwrap().gather_vertices(&perm).unwrap();
            prop_assert!(got.max_abs_diff(&plain).unwrap() < 1e-6);
        }
    }

    #[test]
    fn maxpool_ignores_pose_order(v in 3usize..40, seed in any::<u64>()) {
        let cfg = ModelConfig::desk(Variant::Maxpool, seed);
        let params = ModelParams::<f64>::init(&cfg, seed).unwrap();
        let pose = random(Shape::new(1, 3, v), seed ^ 1);
        let id = random(Shape::new(1, 3, v), seed ^ 2);
        let perm = permutation(v, seed ^ 3);
        let a = predict(&params, &cfg, &pose, &id).unwrap();
        let b = predict(&params, &cfg, &pose.gather_vertices(&perm).unwrap(), &id).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }
}

#[test]
fn bound_forward_matches_predict() {
    let cfg = ModelConfig::desk(Variant::Concat1, 2);
    let params = ModelParams::<f64>::init(&cfg, 2).unwrap();
    let (pose, id) = (random(Shape::new(1, 3, 8), 1), random(Shape::new(1, 3, 8), 2));
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, &params, true);
    let (pv, iv) = (g.constant(pose.clone()), g.constant(id.clone()));
    let out = forward(&mut g, pv, iv, &bound, &cfg).unwrap();
    assert_eq!(g.value(out), &predict(&params, &cfg, &pose, &id).unwrap());
}
