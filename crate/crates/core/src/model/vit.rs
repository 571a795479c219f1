use crate::autodiff::{Tape, Var, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::model::{
    AttentionModule, Layer, ModelConfig, OutputHead, Params, PatchEmbed, Permutation,
};
use crate::real::Real;
use crate::rng::{streams, SeedRng};
use crate::tensor::Tensor;
use crate::train::position::{position_encoding_forward, position_predict};

/// Dropout switch threaded through a forward pass.
pub struct Dropout<'r> {
    p: f64,
    rng: Option<&'r mut SeedRng>,
}

impl<'r> Dropout<'r> {
    /// Evaluation mode: every dropout is the identity.
    pub fn off() -> Self {
        Dropout { p: 0.0, rng: None }
    }

    pub fn train(p: f64, rng: &'r mut SeedRng) -> Self {
        Dropout { p, rng: Some(rng) }
    }

    pub fn training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply<T: Real>(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) => tape.dropout(x, self.p, rng, true),
            None => Ok(x),
        }
    }
}

/// Splits an `H x W x C` image into `N` flattened patches.
///
/// Patches are enumerated row-major over the patch grid. Within a patch,
/// pixels run row-major and the channels of each pixel are adjacent.
pub fn patchify<T: Real>(image: &Tensor<T>, cfg: &ModelConfig) -> Result<Tensor<T>> {
    let expected = [cfg.image_height, cfg.image_width, cfg.channels];
    if image.shape() != expected {
        return Err(Error::shape("patchify", image.shape(), &expected));
    }
    let data = patchify_slice(image.data(), cfg);
    Tensor::new(&[cfg.patches(), cfg.patch_dim()], data)
}

fn patchify_slice<T: Real, S: Real>(pixels: &[S], cfg: &ModelConfig) -> Vec<T> {
    let (p, w, c) = (cfg.patch_size, cfg.image_width, cfg.channels);
    let grid_w = w / p;
    let mut out = Vec::with_capacity(pixels.len());
    for patch in 0..cfg.patches() {
        let (py, px) = (patch / grid_w, patch % grid_w);
        for dy in 0..p {
            let row = py * p + dy;
            let start = (row * w + px * p) * c;
            out.extend(pixels[start..start + p * c].iter().map(|&v| T::of(v.as_f64())));
        }
    }
    out
}

/// Stacks the patches of several flat `H x W x C` images into one
/// `(B N) x (P^2 C)` matrix.
pub fn patch_batch<T: Real>(images: &[&[f32]], cfg: &ModelConfig) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(images.len() * cfg.image_len());
    for img in images {
        if img.len() != cfg.image_len() {
            return Err(Error::shape("patch_batch", &[img.len()], &[cfg.image_len()]));
        }
        data.extend(patchify_slice::<T, f32>(img, cfg));
    }
    Tensor::new(&[images.len() * cfg.patches(), cfg.patch_dim()], data)
}

/// `z_0 = [x_class; x_p^1 E; ...; x_p^N E] + E_pos`, for `batch` images.
pub fn embed_input<T: Real>(
    tape: &mut Tape<T>,
    patches: Var,
    embed: &PatchEmbed<Var>,
    batch: usize,
) -> Result<Var> {
    let projected = tape.matmul(patches, embed.projection)?;
    let tokens = tape.prepend_class(embed.class_token, projected, batch)?;
    let position = tape.tile_rows(embed.position, batch)?;
    tape.add(tokens, position)
}

/// Output of one attention module plus the per-head attention maps.
pub struct AttentionTrace {
    pub output: Var,
    pub attention: Vec<Var>,
}

/// `z' = MSA(LN(z)) + z`, then `MLP(LN(z')) + z'`, on `batch` stacked
/// sequences of `N + 1` tokens.
pub fn attention_module_forward<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    params: &AttentionModule<Var>,
    cfg: &ModelConfig,
    batch: usize,
    dropout: &mut Dropout<'_>,
) -> Result<Var> {
    attention_module_traced(tape, z, params, cfg, batch, dropout).map(|t| t.output)
}

pub fn attention_module_traced<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    params: &AttentionModule<Var>,
    cfg: &ModelConfig,
    batch: usize,
    dropout: &mut Dropout<'_>,
) -> Result<AttentionTrace> {
    let (d, dh, tokens) = (cfg.latent_dim, cfg.head_dim(), cfg.tokens());
    let shape = tape.value(z).shape().to_vec();
    if shape != [batch * tokens, d] {
        return Err(Error::shape("attention_module", &shape, &[batch * tokens, d]));
    }

    let x = tape.layer_norm(z, params.attn_norm_gain, params.attn_norm_bias, LAYER_NORM_EPS)?;
    let fused = tape.concat_last(&params.qkv)?;
    let qkv = tape.matmul(x, fused)?;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut attention = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let base = 3 * dh * h;
        let q = head_slice(tape, qkv, base, dh, batch, tokens)?;
        let k = head_slice(tape, qkv, base + dh, dh, batch, tokens)?;
        let v = head_slice(tape, qkv, base + 2 * dh, dh, batch, tokens)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale);
        let a = tape.softmax_rows(scores);
        let sa = tape.matmul(a, v)?;
        heads.push(tape.reshape(sa, &[batch * tokens, dh])?);
        attention.push(a);
    }
    let joined = tape.concat_last(&heads)?;
    let msa = tape.matmul(joined, params.msa_out)?;
    let msa = dropout.apply(tape, msa)?;
    let z_mid = tape.add(msa, z)?;

    let y = tape.layer_norm(z_mid, params.mlp_norm_gain, params.mlp_norm_bias, LAYER_NORM_EPS)?;
    let hidden = tape.matmul(y, params.mlp_in)?;
    let hidden = tape.add_bias(hidden, params.mlp_in_bias)?;
    let hidden = tape.gelu(hidden);
    let mlp = tape.matmul(hidden, params.mlp_out)?;
    let mlp = tape.add_bias(mlp, params.mlp_out_bias)?;
    let mlp = dropout.apply(tape, mlp)?;
    let output = tape.add(mlp, z_mid)?;
    Ok(AttentionTrace { output, attention })
}

fn head_slice<T: Real>(
    tape: &mut Tape<T>,
    qkv: Var,
    start: usize,
    dh: usize,
    batch: usize,
    tokens: usize,
) -> Result<Var> {
    let cols = tape.slice_last(qkv, start, dh)?;
    tape.reshape(cols, &[batch, tokens, dh])
}

/// Class-token rows of `batch` stacked sequences times `W_out`.
pub fn output_head<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    head: &OutputHead<Var>,
    cfg: &ModelConfig,
    batch: usize,
) -> Result<Var> {
    let rows: Vec<usize> = (0..batch).map(|b| b * cfg.tokens()).collect();
    let class = tape.gather_rows(z, &rows)?;
    tape.matmul(class, head.weight)
}

/// Runs the attention modules in the order given by `perm` (layer
/// `perm[i]` at step `i`) and applies the output head.
#[allow(clippy::too_many_arguments)]
pub fn model_forward<T: Real>(
    tape: &mut Tape<T>,
    z0: Var,
    layers: &[AttentionModule<Var>],
    perm: &Permutation,
    head: &OutputHead<Var>,
    cfg: &ModelConfig,
    batch: usize,
    dropout: &mut Dropout<'_>,
) -> Result<Var> {
    if perm.len() != layers.len() {
        return Err(Error::InvalidPermutation(perm.as_slice().to_vec()));
    }
    let mut z = z0;
    for &layer in perm.as_slice() {
        z = attention_module_forward(tape, z, &layers[layer], cfg, batch, dropout)?;
    }
    output_head(tape, z, head, cfg, batch)
}

/// What one executed layer produced during a pass.
#[derive(Clone, Debug)]
pub struct LayerRecord {
    /// Index of the layer in the stored model.
    pub layer: usize,
    /// Step at which it ran in this pass.
    pub position: usize,
    pub input: Var,
    pub output: Var,
    /// Position-prediction logits `[batch x L]`, when the layer has a
    /// predictor.
    pub position_logits: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub z0: Var,
    pub layers: Vec<LayerRecord>,
    pub logits: Var,
}

/// Checks that `order` lists distinct layer indices below `layers`.
pub fn validate_order(order: &[usize], layers: usize) -> Result<()> {
    let mut seen = vec![false; layers];
    for &i in order {
        if i >= layers || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidPermutation(order.to_vec()));
        }
    }
    Ok(())
}

/// Full forward pass through the layers listed in `order` (any subset, any
/// order), including position encodings and predictors where present.
/// An empty order applies the head directly to `z_0`.
pub fn forward_layers<T: Real>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    params: &Params<Var>,
    patches: Var,
    batch: usize,
    order: &[usize],
    dropout: &mut Dropout<'_>,
) -> Result<ForwardOutput> {
    validate_order(order, params.layers.len())?;
    let z0 = embed_input(tape, patches, &params.embed, batch)?;
    let mut z = z0;
    let mut records = Vec::with_capacity(order.len());
    for (position, &layer) in order.iter().enumerate() {
        let Layer {
            attention,
            position: encoding,
            predictor,
        } = &params.layers[layer];
        let input = z;
        if let Some(enc) = encoding {
            z = position_encoding_forward(tape, z, position, enc, cfg, batch, dropout)?;
        }
        z = attention_module_forward(tape, z, attention, cfg, batch, dropout)?;
        let position_logits = match predictor {
            Some(pred) => Some(position_predict(tape, z, pred, cfg, batch)?),
            None => None,
        };
        records.push(LayerRecord {
            layer,
            position,
            input,
            output: z,
            position_logits,
        });
    }
    let logits = output_head(tape, z, &params.head, cfg, batch)?;
    Ok(ForwardOutput {
        z0,
        layers: records,
        logits,
    })
}

/// A vision transformer: configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct VisionTransformer<T = f32> {
    pub config: ModelConfig,
    pub params: Params<Tensor<T>>,
}

impl<T: Real> VisionTransformer<T> {
    /// Fresh weights drawn from the initialization stream of `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeedRng::stream(seed, streams::INIT);
        let params = Params::init(&config, &mut rng);
        Ok(VisionTransformer { config, params })
    }

    pub fn layers(&self) -> usize {
        self.params.layers.len()
    }

    /// Registers every weight on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Params<Var> {
        self.params.map(&mut |_, t| tape.param(t.clone()))
    }

    pub fn cast<U: Real>(&self) -> VisionTransformer<U> {
        VisionTransformer {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// The same model with its layer bundles physically rearranged so that
    /// stored layer `i` is the old layer `perm[i]`.
    pub fn reordered(&self, perm: &Permutation) -> Self {
        let mut out = self.clone();
        out.params.layers = perm.apply(&self.params.layers);
        out
    }

    /// Binds the model and runs `images` through the layers in `order`.
    pub fn run(
        &self,
        images: &[&[f32]],
        order: &[usize],
        dropout: &mut Dropout<'_>,
    ) -> Result<(Tape<T>, Params<Var>, ForwardOutput)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let patches = tape.constant(patch_batch(images, &self.config)?);
        let out = forward_layers(
            &mut tape,
            &self.config,
            &bound,
            patches,
            images.len(),
            order,
            dropout,
        )?;
        Ok((tape, bound, out))
    }

    /// Logits `[B x C_out]` in evaluation mode.
    pub fn logits(&self, images: &[&[f32]], order: &[usize]) -> Result<Tensor<T>> {
        let (tape, _, out) = self.run(images, order, &mut Dropout::off())?;
        Ok(tape.value(out.logits).clone())
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
