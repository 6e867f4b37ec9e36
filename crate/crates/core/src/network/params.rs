use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, NetworkError, Result, Variant};
use crate::tensor::{Real, Shape, Tensor3};

/// Name, shape and fan-in of one learnable tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub fan_in: usize,
}

fn push_conv(out: &mut Vec<ParamSpec>, prefix: &str, c_in: usize, c_out: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: Shape::new(1, c_out, c_in),
        fan_in: c_in,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: Shape::new(1, c_out, 1),
        fan_in: c_in,
    });
}

fn push_resblock(out: &mut Vec<ParamSpec>, prefix: &str, width: usize, modulated: bool) {
    if modulated {
        for unit in ["spadain1", "spadain2", "spadain_skip"] {
            push_conv(out, &format!("{prefix}.{unit}.gamma"), 3, width);
            push_conv(out, &format!("{prefix}.{unit}.beta"), 3, width);
        }
    }
    for c in ["conv1", "conv2", "conv_skip"] {
        push_conv(out, &format!("{prefix}.{c}"), width, width);
    }
}

/// Every learnable tensor of `cfg`'s architecture, in checkpoint order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let w = cfg.widths;
    let latent = w.latent();
    let mut out = Vec::new();
    push_conv(&mut out, "enc.conv1", 3, w.enc1);
    push_conv(&mut out, "enc.conv2", w.enc1, w.enc2);
    push_conv(&mut out, "enc.conv3", w.enc2, w.enc3);
    push_conv(&mut out, "dec.conv0", latent, latent);
    if cfg.variant == Variant::Concat1 {
        push_conv(&mut out, "dec.conv1", latent, w.dec2);
        push_conv(&mut out, "dec.conv2", w.dec2, w.dec3);
    } else {
        let modulated = cfg.variant != Variant::NoSpadain;
        push_resblock(&mut out, "dec.res1", latent, modulated);
        push_conv(&mut out, "dec.conv1", latent, w.dec2);
        push_resblock(&mut out, "dec.res2", w.dec2, modulated);
        push_conv(&mut out, "dec.conv2", w.dec2, w.dec3);
        push_resblock(&mut out, "dec.res3", w.dec3, modulated);
    }
    push_conv(&mut out, "dec.conv_out", w.dec3, 3);
    out
}

/// Learnable tensors addressed by stable dotted names.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    names: Vec<String>,
    tensors: Vec<Tensor3<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ModelParams<T> {
    /// Weights uniform in `±sqrt(1/fan_in)`, biases zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.widths.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = param_layout(cfg)
            .into_iter()
            .map(|spec| {
                let t = if spec.name.ends_with(".bias") {
                    Tensor3::zeros(spec.shape)
                } else {
                    let s = (1.0 / spec.fan_in as f64).sqrt();
                    Tensor3::from_fn(spec.shape, |_, _, _| T::of(rng.random_range(-s..s)))
                };
                (spec.name, t)
            })
            .collect();
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<(String, Tensor3<T>)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut names = Vec::with_capacity(entries.len());
        let mut tensors = Vec::with_capacity(entries.len());
        for (i, (name, t)) in entries.into_iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(NetworkError::InvalidWidths(format!("duplicate parameter `{name}`")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self { names, tensors, index })
    }

    /// Checks that names and shapes match `cfg`'s layout exactly.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        let layout = param_layout(cfg);
        for spec in &layout {
            let t = self.get(&spec.name).ok_or_else(|| NetworkError::MissingParam(spec.name.clone()))?;
            if t.shape() != spec.shape {
                return Err(NetworkError::ShapeMismatch {
                    name: spec.name.clone(),
                    expected: spec.shape,
                    found: t.shape(),
                });
            }
        }
        if layout.len() != self.names.len() {
            let extra = self
                .names
                .iter()
                .find(|n| !layout.iter().any(|s| &s.name == *n))
                .cloned()
                .unwrap_or_default();
            return Err(NetworkError::InvalidWidths(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor3<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor3<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor3<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor3<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor3::cast).collect(),
            index: self.index.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor3::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Widths;

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = ModelConfig::desk(Variant::Full, 3);
        let a = ModelParams::<f32>::init(&cfg, 11).unwrap();
        let b = ModelParams::<f32>::init(&cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::<f32>::init(&cfg, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fan_in_bounds_weights() {
        let cfg = ModelConfig::paper(Variant::Full, 0);
        let p = ModelParams::<f64>::init(&cfg, 5).unwrap();
        let bound = (1.0f64 / 128.0).sqrt();
        let w = p.get("enc.conv3.weight").unwrap();
        assert_eq!(w.shape(), Shape::new(1, 1024, 128));
        assert!(w.data().iter().all(|x| x.abs() <= bound));
        assert!(p.get("enc.conv3.bias").unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn layout_chains_widths() {
        let cfg = ModelConfig::paper(Variant::Full, 0);
        let layout = param_layout(&cfg);
        let shape = |n: &str| layout.iter().find(|s| s.name == n).unwrap().shape;
        assert_eq!(shape("dec.conv0.weight"), Shape::new(1, 1027, 1027));
        assert_eq!(shape("dec.res1.spadain1.gamma.weight"), Shape::new(1, 1027, 3));
        assert_eq!(shape("dec.conv1.weight"), Shape::new(1, 513, 1027));
        assert_eq!(shape("dec.res2.conv_skip.weight"), Shape::new(1, 513, 513));
        assert_eq!(shape("dec.conv2.weight"), Shape::new(1, 256, 513));
        assert_eq!(shape("dec.conv_out.weight"), Shape::new(1, 3, 256));
        let mut names: Vec<_> = layout.iter().map(|s| &s.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), layout.len());
    }

    #[test]
    fn paper_parameter_count_regression() {
        // conv(i,o) = o*i + o ; unit = 2*conv(3,C) ; block = 3 units + 3 conv(C,C)
        let conv = |i: usize, o: usize| o * i + o;
        let block = |c: usize| 3 * 2 * conv(3, c) + 3 * conv(c, c);
        let expected = conv(3, 64)
            + conv(64, 128)
            + conv(128, 1024)
            + conv(1027, 1027)
            + block(1027)
            + conv(1027, 513)
            + block(513)
            + conv(513, 256)
            + block(256)
            + conv(256, 3);
        let cfg = ModelConfig::paper(Variant::Full, 0);
        let total: usize = param_layout(&cfg).iter().map(|s| s.shape.len()).sum();
        assert_eq!(total, expected);
        assert_eq!(total, 6_054_941);
    }

    #[test]
    fn variants_differ_in_layout() {
        let full = param_layout(&ModelConfig::desk(Variant::Full, 0)).len();
        let plain = param_layout(&ModelConfig::desk(Variant::NoSpadain, 0)).len();
        let concat = param_layout(&ModelConfig::desk(Variant::Concat1, 0)).len();
        let pool = param_layout(&ModelConfig::desk(Variant::Maxpool, 0)).len();
        assert_eq!(full, pool);
        assert_eq!(full - plain, 3 * 3 * 2 * 2);
        assert_eq!(concat, 2 * 7);
        assert!(Widths::from_array([1, 0, 1, 1, 1]).is_err());
    }

    #[test]
    fn check_layout_names_the_layer() {
        let desk = ModelConfig::desk(Variant::Full, 0);
        let mut other = desk;
        other.widths.dec3 = 40;
        let p = ModelParams::<f32>::init(&other, 0).unwrap();
        let err = p.check_layout(&desk).unwrap_err();
        assert!(err.to_string().contains("dec.conv2.weight"), "{err}");
    }
}
