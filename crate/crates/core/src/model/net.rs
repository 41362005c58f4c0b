use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{DecoderConfig, EncoderConfig};
use crate::autodiff::{AttentionParams, BatchNormState, ParamStore, ParamVars, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Encoder and decoder parameters plus the stem's batch-norm statistics.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar = f32> {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub params: ParamStore<T>,
    pub bn: BatchNormState,
}

/// Re-label dimension errors with the network stage they came from.
fn at(stage: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Dimension { op, detail } => Error::dim(stage, format!("{op}: {detail}")),
        other => other,
    }
}

fn kaiming<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..bound)))
}

impl Model<f32> {
    /// Kaiming-uniform weights, zero biases, unit/zero normalization affine.
    pub fn init(encoder: EncoderConfig, decoder: DecoderConfig, seed: u64) -> Result<Self> {
        encoder.validate()?;
        decoder.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let e = &encoder;
        let (s, emb) = (e.stem_channels, e.embed_dim);
        p.insert("enc.temporal.weight", kaiming(&mut rng, &[s, 1, 1, e.temporal_kernel], e.temporal_kernel));
        p.insert("enc.temporal.bias", Tensor::zeros(&[s]));
        p.insert("enc.spatial.weight", kaiming(&mut rng, &[s, s, e.spatial_kernel, 1], s * e.spatial_kernel));
        p.insert("enc.spatial.bias", Tensor::zeros(&[s]));
        p.insert("enc.bn.gamma", Tensor::ones(&[s]));
        p.insert("enc.bn.beta", Tensor::zeros(&[s]));
        p.insert("enc.proj.weight", kaiming(&mut rng, &[emb, s, 1, 1], s));
        p.insert("enc.proj.bias", Tensor::zeros(&[emb]));
        if e.positional {
            p.insert("enc.pos", Tensor::zeros(&[e.tokens(), emb]));
        }
        let hidden = emb * e.ff_multiplier;
        for l in 0..e.layers {
            let n = |s: &str| format!("enc.layer{l}.{s}");
            for ln in ["ln1", "ln2"] {
                p.insert(n(&format!("{ln}.gamma")), Tensor::ones(&[emb]));
                p.insert(n(&format!("{ln}.beta")), Tensor::zeros(&[emb]));
            }
            for w in ["q", "k", "v", "o"] {
                p.insert(n(&format!("attn.w{w}")), kaiming(&mut rng, &[emb, emb], emb));
                p.insert(n(&format!("attn.b{w}")), Tensor::zeros(&[emb]));
            }
            p.insert(n("ff.w1"), kaiming(&mut rng, &[emb, hidden], emb));
            p.insert(n("ff.b1"), Tensor::zeros(&[hidden]));
            p.insert(n("ff.w2"), kaiming(&mut rng, &[hidden, emb], hidden));
            p.insert(n("ff.b2"), Tensor::zeros(&[emb]));
        }
        let d = &decoder;
        let mut width = e.tokens() * emb;
        for (i, &out) in d.projection_widths.iter().enumerate() {
            p.insert(format!("dec.fc{i}.weight"), kaiming(&mut rng, &[width, out], width));
            p.insert(format!("dec.fc{i}.bias"), Tensor::zeros(&[out]));
            width = out;
        }
        let mut ch = d.latent_channels;
        for (i, &out) in d.upsample_channels.iter().enumerate() {
            p.insert(format!("dec.up{i}.weight"), kaiming(&mut rng, &[out, ch, 3, 3], ch * 9));
            p.insert(format!("dec.up{i}.bias"), Tensor::zeros(&[out]));
            ch = out;
        }
        for (i, &out) in d.transposed_channels.iter().enumerate() {
            p.insert(format!("dec.tconv{i}.weight"), kaiming(&mut rng, &[ch, out, 2, 2], ch));
            p.insert(format!("dec.tconv{i}.bias"), Tensor::zeros(&[out]));
            ch = out;
        }
        Ok(Self {
            bn: BatchNormState::new(s),
            encoder,
            decoder,
            params: p,
        })
    }

    /// Parameters and batch-norm statistics as checkpoint entries.
    pub fn checkpoint_entries(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out: Vec<(String, Tensor<f32>)> = self.params.iter().map(|(n, t)| (n.to_owned(), t.clone())).collect();
        let stat = |v: &[f64]| Tensor::from_fn(&[v.len()], |i| v[i] as f32);
        out.push(("bn.running_mean".into(), stat(&self.bn.running_mean)));
        out.push(("bn.running_var".into(), stat(&self.bn.running_var)));
        out
    }

    /// Replace parameters from checkpoint entries; names and shapes must match.
    pub fn load_entries(&mut self, entries: &[(String, Tensor<f32>)]) -> Result<()> {
        let mut seen = 0;
        for (name, t) in entries {
            if let Some(rest) = name.strip_prefix("bn.") {
                let dst = match rest {
                    "running_mean" => &mut self.bn.running_mean,
                    "running_var" => &mut self.bn.running_var,
                    _ => return Err(Error::Data(format!("unknown checkpoint entry {name}"))),
                };
                if t.len() != dst.len() {
                    return Err(Error::Data(format!("{name}: {} values, expected {}", t.len(), dst.len())));
                }
                *dst = t.to_f64_vec();
                continue;
            }
            let slot = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::Data(format!("checkpoint entry {name} is not a model parameter")))?;
            if slot.shape() != t.shape() {
                return Err(Error::Data(format!("{name}: shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t.clone();
            seen += 1;
        }
        if seen != self.params.len() {
            return Err(Error::Data(format!("checkpoint has {seen} of {} parameters", self.params.len())));
        }
        Ok(())
    }
}

impl<T: Scalar> Model<T> {
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            params: self.params.cast(),
            bn: self.bn.clone(),
        }
    }
}

/// `[B, 1, channels, window]` EEG batch → `[B, tokens, embed_dim]`.
#[allow(clippy::too_many_arguments)]
pub fn encoder_forward<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    cfg: &EncoderConfig,
    bn: &mut BatchNormState,
    input: Var,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let shape = tape.shape(input).to_vec();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != cfg.channels || shape[3] != cfg.window {
        return Err(Error::dim(
            "encoder input",
            format!("expected [B, 1, {}, {}], got {shape:?}", cfg.channels, cfg.window),
        ));
    }
    let b = shape[0];
    let p = |n: &str| vars.get(n);
    let x = tape
        .conv2d(input, p("enc.temporal.weight"), Some(p("enc.temporal.bias")), (1, 1))
        .map_err(at("encoder temporal conv"))?;
    let x = tape
        .conv2d(x, p("enc.spatial.weight"), Some(p("enc.spatial.bias")), (1, 1))
        .map_err(at("encoder spatial conv"))?;
    let x = tape
        .batchnorm2d(x, p("enc.bn.gamma"), p("enc.bn.beta"), bn, training)
        .map_err(at("encoder batchnorm"))?;
    let x = tape.elu(x);
    let x = tape
        .avgpool2d(x, (1, cfg.pool_kernel), (1, cfg.pool_stride))
        .map_err(at("encoder pooling"))?;
    let x = tape
        .conv2d(x, p("enc.proj.weight"), Some(p("enc.proj.bias")), (1, 1))
        .map_err(at("encoder projection"))?;
    let n = cfg.tokens();
    let x = tape.reshape(x, &[b, cfg.embed_dim, n]);
    let mut x = tape.permute(x, &[0, 2, 1]);
    if cfg.positional {
        x = add_rows(tape, x, p("enc.pos"));
    }
    for l in 0..cfg.layers {
        let n = |s: &str| vars.get(&format!("enc.layer{l}.{s}"));
        let h = tape.layer_norm(x, n("ln1.gamma"), n("ln1.beta")).map_err(at("encoder attention norm"))?;
        let attn = AttentionParams {
            wq: n("attn.wq"),
            bq: n("attn.bq"),
            wk: n("attn.wk"),
            bk: n("attn.bk"),
            wv: n("attn.wv"),
            bv: n("attn.bv"),
            wo: n("attn.wo"),
            bo: n("attn.bo"),
        };
        let h = tape.multihead_self_attention(h, cfg.heads, &attn).map_err(at("encoder attention"))?;
        let h = tape.dropout(h, cfg.dropout, training, rng)?;
        x = tape.add(x, h);
        let h = tape.layer_norm(x, n("ln2.gamma"), n("ln2.beta")).map_err(at("encoder feed-forward norm"))?;
        let h = tape.linear(h, n("ff.w1"), Some(n("ff.b1"))).map_err(at("encoder feed-forward"))?;
        let h = tape.gelu(h, cfg.gelu);
        let h = tape.dropout(h, cfg.dropout, training, rng)?;
        let h = tape.linear(h, n("ff.w2"), Some(n("ff.b2"))).map_err(at("encoder feed-forward"))?;
        let h = tape.dropout(h, cfg.dropout, training, rng)?;
        x = tape.add(x, h);
    }
    Ok(x)
}

/// Add a `[N, E]` table to every batch element of `x[B, N, E]`.
fn add_rows<T: Scalar>(tape: &mut Tape<T>, x: Var, rows: Var) -> Var {
    let table = tape.value(rows).data().to_vec();
    let mut out = tape.value(x).clone();
    for chunk in out.data_mut().chunks_exact_mut(table.len()) {
        for (o, &t) in chunk.iter_mut().zip(&table) {
            *o += t;
        }
    }
    let n = table.len();
    tape.record(
        &[x, rows],
        out,
        Box::new(move |ctx| {
            let mut dr = vec![T::zero(); n];
            for chunk in ctx.grad.data().chunks_exact(n) {
                for (d, &g) in dr.iter_mut().zip(chunk) {
                    *d += g;
                }
            }
            vec![Some(ctx.grad.clone()), Some(Tensor::new(ctx.inputs[1].shape(), dr).expect("same extent"))]
        }),
    )
}

/// `[B, tokens, embed_dim]` → `[B, 3, S, S]` with `S = cfg.output_size()`.
pub fn decoder_forward<T: Scalar>(tape: &mut Tape<T>, vars: &ParamVars, cfg: &DecoderConfig, tokens: Var) -> Result<Var> {
    let shape = tape.shape(tokens).to_vec();
    if shape.len() != 3 {
        return Err(Error::dim("decoder input", format!("expected [B, N, E], got {shape:?}")));
    }
    let b = shape[0];
    let mut x = tape.reshape(tokens, &[b, shape[1] * shape[2]]);
    for i in 0..cfg.projection_widths.len() {
        x = tape
            .dense(x, vars.get(&format!("dec.fc{i}.weight")), vars.get(&format!("dec.fc{i}.bias")))
            .map_err(at("decoder projection"))?;
        x = tape.gelu(x, cfg.gelu);
    }
    let mut x = tape.reshape(x, &[b, cfg.latent_channels, cfg.latent_size, cfg.latent_size]);
    let last_up = cfg.upsample_channels.len() - 1;
    for i in 0..=last_up {
        x = tape.upsample_bilinear2x(x).map_err(at("decoder upsampling"))?;
        x = tape.pad2d(x, 1).map_err(at("decoder upsampling"))?;
        x = tape
            .conv2d(x, vars.get(&format!("dec.up{i}.weight")), Some(vars.get(&format!("dec.up{i}.bias"))), (1, 1))
            .map_err(at("decoder upsampling conv"))?;
        if i != last_up {
            x = tape.gelu(x, cfg.gelu);
        }
    }
    let last_t = cfg.transposed_channels.len() - 1;
    for i in 0..=last_t {
        x = tape
            .transposed_conv2d(
                x,
                vars.get(&format!("dec.tconv{i}.weight")),
                Some(vars.get(&format!("dec.tconv{i}.bias"))),
                (2, 2),
            )
            .map_err(at("decoder transposed conv"))?;
        if i != last_t {
            x = tape.gelu(x, cfg.gelu);
        }
    }
    Ok(x)
}

impl<T: Scalar> Model<T> {
    /// Full network on a `[B, 1, channels, window]` batch.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<T>,
        vars: &ParamVars,
        input: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let tokens = encoder_forward(tape, vars, &self.encoder, &mut self.bn, input, training, rng)?;
        decoder_forward(tape, vars, &self.decoder, tokens)
    }

    /// Inference in eval mode; returns the `[B, 3, S, S]` prediction.
    pub fn predict(&self, input: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.register_frozen(&mut tape);
        let x = tape.constant(input);
        let mut bn = self.bn.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tokens = encoder_forward(&mut tape, &vars, &self.encoder, &mut bn, x, false, &mut rng)?;
        let y = decoder_forward(&mut tape, &vars, &self.decoder, tokens)?;
        Ok(tape.value(y).clone())
    }

    pub fn encode(&self, input: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.params.register_frozen(&mut tape);
        let x = tape.constant(input);
        let mut bn = self.bn.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tokens = encoder_forward(&mut tape, &vars, &self.encoder, &mut bn, x, false, &mut rng)?;
        Ok(tape.value(tokens).clone())
    }
}
