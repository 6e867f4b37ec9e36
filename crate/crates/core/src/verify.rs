//! Finite-difference gradient checks over every differentiable operation and
//! the full network with its training loss.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::network::{
    forward, spadain, spadain_resblock, BoundParams, ConvVars, ModelConfig, ModelParams, NetworkError, NormUnit,
    ResBlockVars, SpadainVars, Variant,
};
use crate::objectives::{total_loss, EdgeList, LAMBDA_EDGE};
use crate::tensor::{finite_diff_check_inputs, CoordinateSelection, GradCheckReport, Graph, Shape, Tensor3, TensorError, Var};

/// Central-difference step used by the suite.
pub const GRAD_CHECK_STEP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor3<f64> {
    Tensor3::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
}

/// `Σ r ⊙ y` with a fixed random `r`, so every output coordinate matters.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(random(g.shape(y), &mut rng));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn check(
    name: &'static str,
    inputs: Vec<Tensor3<f64>>,
    seed: u64,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
) -> Result<GradCheckEntry, NetworkError> {
    let report = finite_diff_check_inputs(
        |g, v| {
            let y = f(g, v)?;
            if g.shape(y).len() == 1 {
                Ok(y)
            } else {
                project(g, y, seed ^ 0x5eed)
            }
        },
        &inputs,
        GRAD_CHECK_STEP,
        CoordinateSelection::All,
    )?;
    Ok(GradCheckEntry { name, report })
}

fn ring_edges(v: usize) -> EdgeList {
    let mut pairs = Vec::new();
    for i in 0..v as u32 {
        let j = (i + 1) % v as u32;
        pairs.push((i, j));
        pairs.push((j, i));
    }
    EdgeList::new(pairs).expect("ring is symmetric")
}

/// Checks every primitive and the full desk-width model (`V = 12`, `N = 2`)
/// in f64. Model parameters are checked on a seeded sample of coordinates.
pub fn grad_check_suite(seed: u64) -> Result<Vec<GradCheckEntry>, NetworkError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, v) = (2, 12);
    let x = |c: usize, rng: &mut ChaCha8Rng| random(Shape::new(n, c, v), rng);
    let mut out = Vec::new();

    let (a, w, b) = (x(4, &mut rng), random(Shape::new(1, 5, 4), &mut rng), random(Shape::new(1, 5, 1), &mut rng));
    out.push(check("linear", vec![a, w, b], seed, |g, v| g.linear(v[0], v[1], v[2]))?);
    out.push(check("instance_norm", vec![x(3, &mut rng)], seed, |g, v| g.instance_norm(v[0], 1e-5))?);
    out.push(check("relu", vec![x(3, &mut rng)], seed, |g, v| Ok(g.relu(v[0])))?);
    out.push(check("tanh", vec![x(3, &mut rng)], seed, |g, v| Ok(g.tanh(v[0])))?);
    out.push(check("add", vec![x(3, &mut rng), x(3, &mut rng)], seed, |g, v| g.add(v[0], v[1]))?);
    out.push(check("mul", vec![x(3, &mut rng), x(3, &mut rng)], seed, |g, v| g.mul(v[0], v[1]))?);
    out.push(check("concat_channels", vec![x(2, &mut rng), x(3, &mut rng)], seed, |g, v| {
        g.concat_channels(v[0], v[1])
    })?);
    out.push(check("global_max_pool", vec![x(3, &mut rng)], seed, |g, v| {
        let p = g.global_max_pool(v[0]);
        g.broadcast_vertices(p, 12)
    })?);
    out.push(check("sum_scale", vec![x(3, &mut rng)], seed, |g, v| {
        let s = g.sum(v[0]);
        Ok(g.scale(s, 0.37))
    })?);
    let target = x(3, &mut rng);
    out.push(check("squared_error", vec![x(3, &mut rng)], seed, move |g, v| g.squared_error(v[0], &target))?);
    let edges: Vec<Arc<[(u32, u32)]>> = vec![ring_edges(v).shared()];
    out.push(check("edge_squared", vec![x(3, &mut rng)], seed, move |g, v| g.edge_squared(v[0], &edges))?);

    let conv = |rng: &mut ChaCha8Rng, c_in: usize, c_out: usize| {
        vec![random(Shape::new(1, c_out, c_in), rng), random(Shape::new(1, c_out, 1), rng)]
    };
    let cv = |v: &[Var], k: usize| ConvVars {
        weight: v[k],
        bias: v[k + 1],
    };
    let mut inputs = vec![x(4, &mut rng), x(3, &mut rng)];
    inputs.extend(conv(&mut rng, 3, 4));
    inputs.extend(conv(&mut rng, 3, 4));
    out.push(check("spadain", inputs, seed, |g, v| {
        let u = SpadainVars {
            gamma: cv(v, 2),
            beta: cv(v, 4),
        };
        spadain(g, v[0], v[1], &u, 1e-5).map_err(|e| TensorError::Invalid(e.to_string()))
    })?);

    let mut inputs = vec![x(4, &mut rng), x(3, &mut rng)];
    for _ in 0..6 {
        inputs.extend(conv(&mut rng, 3, 4));
    }
    for _ in 0..3 {
        inputs.extend(conv(&mut rng, 4, 4));
    }
    out.push(check("spadain_resblock", inputs, seed, |g, v| {
        let unit = |k: usize| NormUnit {
            normalize: true,
            affine: Some(SpadainVars {
                gamma: cv(v, k),
                beta: cv(v, k + 2),
            }),
        };
        let r = ResBlockVars {
            units: [unit(2), unit(6), unit(10)],
            conv_1: cv(v, 14),
            conv_2: cv(v, 16),
            conv_skip: cv(v, 18),
        };
        spadain_resblock(g, v[0], v[1], &r, 1e-5).map_err(|e| TensorError::Invalid(e.to_string()))
    })?);

    let model = ModelConfig::desk(Variant::Full, seed);
    let params = ModelParams::<f64>::init(&model, seed)?;
    let (pose, id, gt) = (x(3, &mut rng), x(3, &mut rng), x(3, &mut rng).map(|c| 0.5 * c));
    let edge_lists = vec![ring_edges(v)];
    let names = params.names().to_vec();
    let mut inputs = vec![pose, id];
    inputs.extend(params.tensors().iter().cloned());
    let report = finite_diff_check_inputs(
        |g, vars| {
            let bound = BoundParams::from_vars(&names, vars[2..].to_vec());
            let pred = forward(g, vars[0], vars[1], &bound, &model)?;
            Ok::<_, NetworkError>(total_loss(g, pred, &gt, &edge_lists, LAMBDA_EDGE)?.0)
        },
        &inputs,
        GRAD_CHECK_STEP,
        CoordinateSelection::Sample {
            per_input: 8,
            seed,
        },
    )?;
    out.push(GradCheckEntry {
        name: "full_model_loss",
        report,
    });
    Ok(out)
}
