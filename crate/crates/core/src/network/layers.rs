use std::collections::HashMap;

use super::{ModelConfig, ModelParams, NetworkError, Result, Variant};
use crate::tensor::{Graph, Real, Tensor3, Var};

/// Graph handles for one 1×1 convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
}

/// Graph handles for the γ and β convolutions of one SPAdaIN unit.
#[derive(Debug, Clone, Copy)]
pub struct SpadainVars {
    pub gamma: ConvVars,
    pub beta: ConvVars,
}

/// One normalization slot inside a residual block.
///
/// `normalize` and `affine = Some(..)` is a SPAdaIN unit; `affine = None` is
/// plain instance norm; `normalize = false` keeps only the per-vertex
/// modulation.
#[derive(Debug, Clone, Copy)]
pub struct NormUnit {
    pub normalize: bool,
    pub affine: Option<SpadainVars>,
}

/// Graph handles for one residual block: units are `[first, second, skip]`.
#[derive(Debug, Clone, Copy)]
pub struct ResBlockVars {
    pub units: [NormUnit; 3],
    pub conv_1: ConvVars,
    pub conv_2: ConvVars,
    pub conv_skip: ConvVars,
}

/// Model parameters recorded as leaves on a graph.
pub struct BoundParams {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    /// Records every tensor of `params`; `trainable` leaves receive gradients.
    pub fn bind<T: Real>(g: &mut Graph<T>, params: &ModelParams<T>, trainable: bool) -> Self {
        let mut index = HashMap::with_capacity(params.len());
        let vars = params
            .iter()
            .enumerate()
            .map(|(i, (name, t))| {
                index.insert(name.to_owned(), i);
                if trainable {
                    g.variable(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Self { vars, index }
    }

    /// Uses existing graph nodes, one per name, as the parameters.
    pub fn from_vars(names: &[String], vars: Vec<Var>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { vars, index }
    }

    /// Leaves in the same order as [`ModelParams::tensors`].
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| NetworkError::MissingParam(name.to_owned()))
    }

    pub fn conv(&self, prefix: &str) -> Result<ConvVars> {
        Ok(ConvVars {
            weight: self.var(&format!("{prefix}.weight"))?,
            bias: self.var(&format!("{prefix}.bias"))?,
        })
    }

    pub fn spadain(&self, prefix: &str) -> Result<SpadainVars> {
        Ok(SpadainVars {
            gamma: self.conv(&format!("{prefix}.gamma"))?,
            beta: self.conv(&format!("{prefix}.beta"))?,
        })
    }

    /// Residual block handles with the normalization layout of `variant`.
    /// `first_block` matters only for the max-pool variant, whose first
    /// block does not normalize its input.
    pub fn resblock(&self, prefix: &str, variant: Variant, first_block: bool) -> Result<ResBlockVars> {
        let unit = |name: &str, normalize: bool| -> Result<NormUnit> {
            let affine = match variant {
                Variant::NoSpadain => None,
                _ => Some(self.spadain(&format!("{prefix}.{name}"))?),
            };
            Ok(NormUnit { normalize, affine })
        };
        let input_normalized = !(variant == Variant::Maxpool && first_block);
        Ok(ResBlockVars {
            units: [
                unit("spadain1", input_normalized)?,
                unit("spadain2", true)?,
                unit("spadain_skip", input_normalized)?,
            ],
            conv_1: self.conv(&format!("{prefix}.conv1"))?,
            conv_2: self.conv(&format!("{prefix}.conv2"))?,
            conv_skip: self.conv(&format!("{prefix}.conv_skip"))?,
        })
    }
}

pub fn conv<T: Real>(g: &mut Graph<T>, x: Var, c: ConvVars) -> Result<Var> {
    Ok(g.linear(x, c.weight, c.bias)?)
}

fn check_mesh<T: Real>(g: &Graph<T>, which: &'static str, m: Var) -> Result<()> {
    let shape = g.shape(m);
    if shape.c != 3 {
        return Err(NetworkError::InputChannels { which, shape });
    }
    Ok(())
}

/// Per-vertex pose features: three rounds of 1×1 conv, instance norm, relu.
pub fn encode_pose<T: Real>(g: &mut Graph<T>, pose: Var, enc: &[ConvVars; 3], eps: f64) -> Result<Var> {
    check_mesh(g, "pose", pose)?;
    let mut h = pose;
    for c in enc {
        let lin = conv(g, h, *c)?;
        let norm = g.instance_norm(lin, eps)?;
        h = g.relu(norm);
    }
    Ok(h)
}

/// Applies one normalization slot of a residual block to `h`.
pub fn norm_unit<T: Real>(g: &mut Graph<T>, h: Var, id_mesh: Var, unit: &NormUnit, eps: f64) -> Result<Var> {
    tapped_unit(g, h, id_mesh, unit, eps, &mut Vec::new())
}

fn tapped_unit<T: Real>(
    g: &mut Graph<T>,
    h: Var,
    id_mesh: Var,
    unit: &NormUnit,
    eps: f64,
    taps: &mut Vec<(Var, Var)>,
) -> Result<Var> {
    let (hs, ms) = (g.shape(h), g.shape(id_mesh));
    if hs.n != ms.n || hs.v != ms.v {
        return Err(NetworkError::MeshMismatch { pose: hs, identity: ms });
    }
    let normed = if unit.normalize { g.instance_norm(h, eps)? } else { h };
    match unit.affine {
        None => Ok(normed),
        Some(u) => {
            if unit.normalize {
                taps.push((h, normed));
            }
            let gamma = conv(g, id_mesh, u.gamma)?;
            let beta = conv(g, id_mesh, u.beta)?;
            let scaled = g.mul(gamma, normed)?;
            Ok(g.add(scaled, beta)?)
        }
    }
}

/// `γ(M) ⊙ IN(h) + β(M)` with γ, β predicted per vertex from the identity mesh.
pub fn spadain<T: Real>(g: &mut Graph<T>, h: Var, id_mesh: Var, u: &SpadainVars, eps: f64) -> Result<Var> {
    check_mesh(g, "identity", id_mesh)?;
    norm_unit(
        g,
        h,
        id_mesh,
        &NormUnit {
            normalize: true,
            affine: Some(*u),
        },
        eps,
    )
}

/// Residual block: `relu(conv2(U2(relu(conv1(U1(h)))))) + relu(conv_skip(U3(h)))`.
pub fn spadain_resblock<T: Real>(g: &mut Graph<T>, h: Var, id_mesh: Var, r: &ResBlockVars, eps: f64) -> Result<Var> {
    tapped_resblock(g, h, id_mesh, r, eps, &mut Vec::new())
}

fn tapped_resblock<T: Real>(
    g: &mut Graph<T>,
    h: Var,
    id_mesh: Var,
    r: &ResBlockVars,
    eps: f64,
    taps: &mut Vec<(Var, Var)>,
) -> Result<Var> {
    let width = g.shape(r.conv_1.weight).v;
    let input = g.shape(h).c;
    if input != width {
        return Err(NetworkError::WidthMismatch { input, block: width });
    }

    let a = tapped_unit(g, h, id_mesh, &r.units[0], eps, taps)?;
    let a = conv(g, a, r.conv_1)?;
    let a = g.relu(a);
    let a = tapped_unit(g, a, id_mesh, &r.units[1], eps, taps)?;
    let a = conv(g, a, r.conv_2)?;
    let main = g.relu(a);

    let s = tapped_unit(g, h, id_mesh, &r.units[2], eps, taps)?;
    let s = conv(g, s, r.conv_skip)?;
    let skip = g.relu(s);

    Ok(g.add(main, skip)?)
}

/// Full forward pass; the output is `[n, 3, v]` in identity-mesh order.
pub fn forward<T: Real>(
    g: &mut Graph<T>,
    pose: Var,
    id_mesh: Var,
    p: &BoundParams,
    cfg: &ModelConfig,
) -> Result<Var> {
    forward_tapped(g, pose, id_mesh, p, cfg, &mut Vec::new())
}

/// [`forward`] that also records, for every SPAdaIN unit in evaluation order,
/// its input and the instance-normalized tensor before γ/β modulation.
pub fn forward_tapped<T: Real>(
    g: &mut Graph<T>,
    pose: Var,
    id_mesh: Var,
    p: &BoundParams,
    cfg: &ModelConfig,
    taps: &mut Vec<(Var, Var)>,
) -> Result<Var> {
    check_mesh(g, "pose", pose)?;
    check_mesh(g, "identity", id_mesh)?;
    let (ps, is) = (g.shape(pose), g.shape(id_mesh));
    if ps != is {
        return Err(NetworkError::MeshMismatch { pose: ps, identity: is });
    }
    let eps = cfg.eps;
    let enc = [p.conv("enc.conv1")?, p.conv("enc.conv2")?, p.conv("enc.conv3")?];
    let mut features = encode_pose(g, pose, &enc, eps)?;
    if cfg.variant == Variant::Maxpool {
        let pooled = g.global_max_pool(features);
        features = g.broadcast_vertices(pooled, is.v)?;
    }
    let latent = g.concat_channels(features, id_mesh)?;
    let mut h = conv(g, latent, p.conv("dec.conv0")?)?;

    if cfg.variant == Variant::Concat1 {
        for name in ["dec.conv1", "dec.conv2"] {
            h = g.relu(h);
            h = conv(g, h, p.conv(name)?)?;
        }
        h = g.relu(h);
    } else {
        let blocks = [("dec.res1", Some("dec.conv1")), ("dec.res2", Some("dec.conv2")), ("dec.res3", None)];
        for (i, (block, next)) in blocks.into_iter().enumerate() {
            let r = p.resblock(block, cfg.variant, i == 0)?;
            h = tapped_resblock(g, h, id_mesh, &r, eps, taps)?;
            if let Some(c) = next {
                h = conv(g, h, p.conv(c)?)?;
            }
        }
    }
    let out = conv(g, h, p.conv("dec.conv_out")?)?;
    Ok(g.tanh(out))
}

/// Inference without gradients.
pub fn predict<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    pose: &Tensor3<T>,
    id_mesh: &Tensor3<T>,
) -> Result<Tensor3<T>> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params, false);
    let pv = g.constant(pose.clone());
    let iv = g.constant(id_mesh.clone());
    let out = forward(&mut g, pv, iv, &bound, cfg)?;
    Ok(g.value(out).clone())
}
