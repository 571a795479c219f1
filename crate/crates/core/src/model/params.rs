//! Parameter containers.
//!
//! Each container is generic over its leaf type `P`: `Tensor<T>` for stored
//! weights, `Var` once bound to a tape, `Tensor<T>` again for gradients.
//! `map` and `visit_mut` walk leaves in one fixed order and hand out stable
//! dotted names, which is what checkpoints, optimizers and gradient checks
//! key on.

use rand_distr::{Distribution, Normal};

use crate::model::ModelConfig;
use crate::real::Real;
use crate::rng::SeedRng;
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `E`, `E_pos` and the class token.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbed<P> {
    /// `(P^2 C) x D`
    pub projection: P,
    /// `(N + 1) x D`
    pub position: P,
    /// `D`
    pub class_token: P,
}

/// One attention module: pre-norm MSA and MLP blocks with residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionModule<P> {
    pub attn_norm_gain: P,
    pub attn_norm_bias: P,
    /// One `D x 3D_h` projection per head, columns laid out `[q | k | v]`.
    pub qkv: Vec<P>,
    /// `(k D_h) x D`
    pub msa_out: P,
    pub mlp_norm_gain: P,
    pub mlp_norm_bias: P,
    pub mlp_in: P,
    pub mlp_in_bias: P,
    pub mlp_out: P,
    pub mlp_out_bias: P,
}

/// Learned layer-position embedding and projection network of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionEncoding<P> {
    /// `L x F`, one row per possible position.
    pub embeddings: P,
    pub norm_gain: P,
    pub norm_bias: P,
    /// `(D + F) x D`
    pub projection: P,
}

/// Linear head predicting a layer's current position from its output.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionPredictor<P> {
    pub norm_gain: P,
    pub norm_bias: P,
    /// `D x L`
    pub weight: P,
}

/// An attention module together with the optional per-layer adapters. The
/// bundle moves as a unit when layers are reordered.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<P> {
    pub attention: AttentionModule<P>,
    pub position: Option<PositionEncoding<P>>,
    pub predictor: Option<PositionPredictor<P>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputHead<P> {
    /// `D x C_out`
    pub weight: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params<P> {
    pub embed: PatchEmbed<P>,
    pub layers: Vec<Layer<P>>,
    pub head: OutputHead<P>,
}

pub type PatchEmbedParams<T = f32> = PatchEmbed<Tensor<T>>;
pub type AttentionModuleParams<T = f32> = AttentionModule<Tensor<T>>;
pub type PositionEncodingParams<T = f32> = PositionEncoding<Tensor<T>>;
pub type PositionPredictorParams<T = f32> = PositionPredictor<Tensor<T>>;
pub type OutputHeadParams<T = f32> = OutputHead<Tensor<T>>;
pub type ModelParams<T = f32> = Params<Tensor<T>>;

impl<P> PatchEmbed<P> {
    pub fn map<'a, Q>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a P) -> Q) -> PatchEmbed<Q> {
        PatchEmbed {
            projection: f(&join(prefix, "projection"), &self.projection),
            position: f(&join(prefix, "position"), &self.position),
            class_token: f(&join(prefix, "class_token"), &self.class_token),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        f(&join(prefix, "projection"), &mut self.projection);
        f(&join(prefix, "position"), &mut self.position);
        f(&join(prefix, "class_token"), &mut self.class_token);
    }
}

impl<P> AttentionModule<P> {
    pub fn map<'a, Q>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a P) -> Q) -> AttentionModule<Q> {
        AttentionModule {
            attn_norm_gain: f(&join(prefix, "attn_norm.gain"), &self.attn_norm_gain),
            attn_norm_bias: f(&join(prefix, "attn_norm.bias"), &self.attn_norm_bias),
            qkv: self
                .qkv
                .iter()
                .enumerate()
                .map(|(h, p)| f(&join(prefix, &format!("qkv.{h}")), p))
                .collect(),
            msa_out: f(&join(prefix, "msa_out"), &self.msa_out),
            mlp_norm_gain: f(&join(prefix, "mlp_norm.gain"), &self.mlp_norm_gain),
            mlp_norm_bias: f(&join(prefix, "mlp_norm.bias"), &self.mlp_norm_bias),
            mlp_in: f(&join(prefix, "mlp_in.weight"), &self.mlp_in),
            mlp_in_bias: f(&join(prefix, "mlp_in.bias"), &self.mlp_in_bias),
            mlp_out: f(&join(prefix, "mlp_out.weight"), &self.mlp_out),
            mlp_out_bias: f(&join(prefix, "mlp_out.bias"), &self.mlp_out_bias),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        f(&join(prefix, "attn_norm.gain"), &mut self.attn_norm_gain);
        f(&join(prefix, "attn_norm.bias"), &mut self.attn_norm_bias);
        for (h, p) in self.qkv.iter_mut().enumerate() {
            f(&join(prefix, &format!("qkv.{h}")), p);
        }
        f(&join(prefix, "msa_out"), &mut self.msa_out);
        f(&join(prefix, "mlp_norm.gain"), &mut self.mlp_norm_gain);
        f(&join(prefix, "mlp_norm.bias"), &mut self.mlp_norm_bias);
        f(&join(prefix, "mlp_in.weight"), &mut self.mlp_in);
        f(&join(prefix, "mlp_in.bias"), &mut self.mlp_in_bias);
        f(&join(prefix, "mlp_out.weight"), &mut self.mlp_out);
        f(&join(prefix, "mlp_out.bias"), &mut self.mlp_out_bias);
    }
}

impl<P> PositionEncoding<P> {
    pub fn map<'a, Q>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a P) -> Q) -> PositionEncoding<Q> {
        PositionEncoding {
            embeddings: f(&join(prefix, "embeddings"), &self.embeddings),
            norm_gain: f(&join(prefix, "norm.gain"), &self.norm_gain),
            norm_bias: f(&join(prefix, "norm.bias"), &self.norm_bias),
            projection: f(&join(prefix, "projection"), &self.projection),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        f(&join(prefix, "embeddings"), &mut self.embeddings);
        f(&join(prefix, "norm.gain"), &mut self.norm_gain);
        f(&join(prefix, "norm.bias"), &mut self.norm_bias);
        f(&join(prefix, "projection"), &mut self.projection);
    }
}

impl<P> PositionPredictor<P> {
    pub fn map<'a, Q>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a P) -> Q) -> PositionPredictor<Q> {
        PositionPredictor {
            norm_gain: f(&join(prefix, "norm.gain"), &self.norm_gain),
            norm_bias: f(&join(prefix, "norm.bias"), &self.norm_bias),
            weight: f(&join(prefix, "weight"), &self.weight),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        f(&join(prefix, "norm.gain"), &mut self.norm_gain);
        f(&join(prefix, "norm.bias"), &mut self.norm_bias);
        f(&join(prefix, "weight"), &mut self.weight);
    }
}

impl<P> Layer<P> {
    pub fn map<'a, Q>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a P) -> Q) -> Layer<Q> {
        Layer {
            attention: self.attention.map(prefix, f),
            position: self
                .position
                .as_ref()
                .map(|p| p.map(&join(prefix, "position"), f)),
            predictor: self
                .predictor
                .as_ref()
                .map(|p| p.map(&join(prefix, "predictor"), f)),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut P)) {
        self.attention.visit_mut(prefix, f);
        if let Some(p) = self.position.as_mut() {
            p.visit_mut(&join(prefix, "position"), f);
        }
        if let Some(p) = self.predictor.as_mut() {
            p.visit_mut(&join(prefix, "predictor"), f);
        }
    }
}

impl<P> Params<P> {
    pub fn map<'a, Q>(&'a self, f: &mut impl FnMut(&str, &'a P) -> Q) -> Params<Q> {
        Params {
            embed: self.embed.map("embed", f),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("layers.{i}"), f))
                .collect(),
            head: OutputHead {
                weight: f("head.weight", &self.head.weight),
            },
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut P)) {
        self.embed.visit_mut("embed", f);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("layers.{i}"), f);
        }
        f("head.weight", &mut self.head.weight);
    }

    /// Leaves in canonical order.
    pub fn leaves(&self) -> Vec<&P> {
        let mut out = Vec::new();
        self.map(&mut |_, p| out.push(p));
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.map(&mut |n, _| out.push(n.to_string()));
        out
    }

    /// Rebuilds a container of the same structure from leaves in canonical
    /// order.
    pub fn with_leaves<Q: Clone>(&self, leaves: &[Q]) -> Params<Q> {
        let mut it = leaves.iter();
        self.map(&mut |n, _| it.next().unwrap_or_else(|| panic!("missing leaf {n}")).clone())
    }

    pub fn has_position(&self) -> bool {
        self.layers.iter().any(|l| l.position.is_some())
    }

    pub fn has_predictor(&self) -> bool {
        self.layers.iter().any(|l| l.predictor.is_some())
    }
}

impl<T: Real> Params<Tensor<T>> {
    pub fn cast<U: Real>(&self) -> Params<Tensor<U>> {
        self.map(&mut |_, t| t.cast())
    }

    pub fn parameter_count(&self) -> usize {
        self.leaves().iter().map(|t| t.len()).sum()
    }

    /// Fresh weights: linear maps truncated-normal (std 0.02 after cutting
    /// at two underlying std), class token and position table normal
    /// (std 0.02), norm gains 1, biases 0.
    pub fn init(cfg: &ModelConfig, rng: &mut SeedRng) -> Self {
        let (d, dh, k) = (cfg.latent_dim, cfg.head_dim(), cfg.heads);
        let embed = PatchEmbed {
            projection: trunc_normal(&[cfg.patch_dim(), d], rng),
            position: normal(&[cfg.tokens(), d], rng),
            class_token: normal(&[d], rng),
        };
        let layers = (0..cfg.layers)
            .map(|_| Layer {
                attention: AttentionModule {
                    attn_norm_gain: Tensor::full(&[d], T::one()),
                    attn_norm_bias: Tensor::zeros(&[d]),
                    qkv: (0..k).map(|_| trunc_normal(&[d, 3 * dh], rng)).collect(),
                    msa_out: trunc_normal(&[k * dh, d], rng),
                    mlp_norm_gain: Tensor::full(&[d], T::one()),
                    mlp_norm_bias: Tensor::zeros(&[d]),
                    mlp_in: trunc_normal(&[d, cfg.mlp_hidden], rng),
                    mlp_in_bias: Tensor::zeros(&[cfg.mlp_hidden]),
                    mlp_out: trunc_normal(&[cfg.mlp_hidden, d], rng),
                    mlp_out_bias: Tensor::zeros(&[d]),
                },
                position: None,
                predictor: None,
            })
            .collect();
        let head = OutputHead {
            weight: trunc_normal(&[d, cfg.classes], rng),
        };
        Params {
            embed,
            layers,
            head,
        }
    }

    /// Adds position-encoding adapters to layers that lack them.
    pub fn add_position_encoding(&mut self, cfg: &ModelConfig, rng: &mut SeedRng) {
        let (d, f) = (cfg.latent_dim, cfg.position_dim);
        for layer in self.layers.iter_mut().filter(|l| l.position.is_none()) {
            layer.position = Some(PositionEncoding {
                embeddings: normal(&[cfg.layers, f], rng),
                norm_gain: Tensor::full(&[d + f], T::one()),
                norm_bias: Tensor::zeros(&[d + f]),
                projection: trunc_normal(&[d + f, d], rng),
            });
        }
    }

    /// Adds position-prediction heads to layers that lack them.
    pub fn add_position_predictor(&mut self, cfg: &ModelConfig, rng: &mut SeedRng) {
        let d = cfg.latent_dim;
        for layer in self.layers.iter_mut().filter(|l| l.predictor.is_none()) {
            layer.predictor = Some(PositionPredictor {
                norm_gain: Tensor::full(&[d], T::one()),
                norm_bias: Tensor::zeros(&[d]),
                weight: trunc_normal(&[d, cfg.layers], rng),
            });
        }
    }
}

fn normal<T: Real>(shape: &[usize], rng: &mut SeedRng) -> Tensor<T> {
    let dist = Normal::new(0.0, INIT_STD).expect("valid std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("init shape")
}

/// Normal cut at two standard deviations of the underlying distribution,
/// whose scale is chosen so the truncated result has std `INIT_STD`.
fn trunc_normal<T: Real>(shape: &[usize], rng: &mut SeedRng) -> Tensor<T> {
    let density = (-2.0f64).exp() / std::f64::consts::TAU.sqrt();
    let mass = libm::erf(std::f64::consts::SQRT_2);
    let sigma = INIT_STD / (1.0 - 4.0 * density / mass).sqrt();
    let dist = Normal::new(0.0, sigma).expect("valid std");
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let x: f64 = dist.sample(rng);
            if x.abs() <= 2.0 * sigma {
                break T::of(x);
            }
        })
        .collect();
    Tensor::new(shape, data).expect("init shape")
}
