//! Attention-based encoder-decoder: stacked bidirectional LSTM encoder,
//! location-aware attention, stacked unidirectional LSTM decoder, and an
//! affine-plus-softmax output head.

mod lstm;

use ndarray::{Array1, Array2, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Params, Tape, Var};
use crate::error::{Error, Result};
use lstm::lstm_step;

/// Architecture hyperparameters. Defaults are desk scale; larger stacks
/// are plain config choices, not presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub vocab_size: usize,
    pub sos_id: usize,
    pub eos_id: usize,
    pub enc_layers: usize,
    pub enc_units: usize,
    pub dec_layers: usize,
    pub dec_units: usize,
    pub att_dim: usize,
    pub att_conv_channels: usize,
    pub att_conv_width: usize,
    pub emb_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 8,
            vocab_size: 4,
            sos_id: 0,
            eos_id: 1,
            enc_layers: 2,
            enc_units: 32,
            dec_layers: 1,
            dec_units: 32,
            att_dim: 32,
            att_conv_channels: 10,
            att_conv_width: 11,
            emb_dim: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size must be at least 2"));
        }
        if self.sos_id >= self.vocab_size || self.eos_id >= self.vocab_size {
            return Err(Error::config("sos/eos ids must lie inside the vocabulary"));
        }
        if self.att_conv_width % 2 == 0 {
            return Err(Error::config("att_conv_width must be odd"));
        }
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("enc_layers", self.enc_layers),
            ("enc_units", self.enc_units),
            ("dec_layers", self.dec_layers),
            ("dec_units", self.dec_units),
            ("att_dim", self.att_dim),
            ("att_conv_channels", self.att_conv_channels),
            ("emb_dim", self.emb_dim),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Encoder output width (both directions concatenated).
    pub fn enc_out_dim(&self) -> usize {
        2 * self.enc_units
    }
}

/// Encoder output: the internal representation H plus its cached attention
/// projection.
pub struct EncoderOutput {
    /// T×(2·enc_units) matrix of per-frame hidden vectors.
    pub h: Var,
    /// H projected into attention space, T×att_dim. Cached once per utterance.
    pub h_proj: Var,
    pub frames: usize,
}

/// Per-hypothesis decoder state.
#[derive(Debug, Clone)]
pub struct DecoderContext {
    /// (h, c) per decoder layer.
    pub layers: Vec<(Var, Var)>,
    /// Previous attention weights over the T frames.
    pub a_prev: Var,
    /// Previous output token id fed back to the decoder.
    pub y_prev: usize,
}

pub struct Model {
    pub config: ModelConfig,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Model { config })
    }

    /// Fresh parameters: uniform in [-0.1, 0.1] from a seeded generator,
    /// LSTM forget-gate biases at 1.0.
    pub fn init_params(&self, seed: u64) -> Params {
        self.init_params_scaled(seed, 0.1)
    }

    /// Like [`Model::init_params`] with a custom uniform half-width. Gradient
    /// checking uses a wider init so weakly coupled paths (attention at early
    /// steps) carry gradients well above finite-difference noise.
    pub fn init_params_scaled(&self, seed: u64, scale: f64) -> Params {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let mut uniform = |shape: &[usize]| -> ArrayD<f64> {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
            ArrayD::from_shape_vec(shape.to_vec(), data).unwrap()
        };
        let lstm_bias = |w: &mut dyn FnMut(&[usize]) -> ArrayD<f64>, units: usize| {
            let mut b = w(&[4 * units]);
            for i in units..2 * units {
                b[[i]] = 1.0;
            }
            b
        };

        for layer in 0..c.enc_layers {
            let in_dim = if layer == 0 { c.input_dim } else { c.enc_out_dim() };
            for dir in ["fwd", "bwd"] {
                params.push(
                    format!("enc.l{layer}.{dir}.wx"),
                    uniform(&[4 * c.enc_units, in_dim]),
                );
                params.push(
                    format!("enc.l{layer}.{dir}.wh"),
                    uniform(&[4 * c.enc_units, c.enc_units]),
                );
                params.push(
                    format!("enc.l{layer}.{dir}.b"),
                    lstm_bias(&mut uniform, c.enc_units),
                );
            }
        }
        params.push("att.wq", uniform(&[c.att_dim, c.dec_units]));
        params.push("att.wh", uniform(&[c.enc_out_dim(), c.att_dim]));
        params.push(
            "att.conv",
            uniform(&[c.att_conv_channels, c.att_conv_width]),
        );
        params.push("att.wf", uniform(&[c.att_conv_channels, c.att_dim]));
        params.push("att.b", uniform(&[c.att_dim]));
        params.push("att.v", uniform(&[c.att_dim]));
        for layer in 0..c.dec_layers {
            let in_dim = if layer == 0 {
                c.emb_dim + c.enc_out_dim()
            } else {
                c.dec_units
            };
            params.push(
                format!("dec.l{layer}.wx"),
                uniform(&[4 * c.dec_units, in_dim]),
            );
            params.push(
                format!("dec.l{layer}.wh"),
                uniform(&[4 * c.dec_units, c.dec_units]),
            );
            params.push(format!("dec.l{layer}.b"), lstm_bias(&mut uniform, c.dec_units));
        }
        params.push("emb", uniform(&[c.vocab_size, c.emb_dim]));
        params.push("out.w", uniform(&[c.vocab_size, c.dec_units]));
        params.push("out.b", uniform(&[c.vocab_size]));
        params
    }

    /// Run the bidirectional encoder over a T×input_dim feature matrix.
    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        features: &Array2<f64>,
    ) -> Result<EncoderOutput> {
        let c = &self.config;
        let t = features.nrows();
        if t == 0 {
            return Err(Error::invalid_argument("encode requires at least one frame"));
        }
        if features.ncols() != c.input_dim {
            return Err(Error::invalid_argument(format!(
                "feature dim {} does not match configured input_dim {}",
                features.ncols(),
                c.input_dim
            )));
        }

        let mut inputs: Vec<Var> = (0..t)
            .map(|i| tape.constant(features.row(i).to_owned().into_dyn()))
            .collect();

        for layer in 0..c.enc_layers {
            let mut outputs: Vec<Vec<Var>> = Vec::with_capacity(2);
            for dir in ["fwd", "bwd"] {
                let wx = params.get(&format!("enc.l{layer}.{dir}.wx"));
                let wh = params.get(&format!("enc.l{layer}.{dir}.wh"));
                let b = params.get(&format!("enc.l{layer}.{dir}.b"));
                let zeros = Array1::<f64>::zeros(c.enc_units).into_dyn();
                let mut h = tape.constant(zeros.clone());
                let mut cst = tape.constant(zeros);
                let order: Vec<usize> = if dir == "fwd" {
                    (0..t).collect()
                } else {
                    (0..t).rev().collect()
                };
                let mut hs = vec![Var(0); t];
                for &ti in &order {
                    let (nh, nc) = lstm_step(tape, wx, wh, b, inputs[ti], h, cst, c.enc_units);
                    h = nh;
                    cst = nc;
                    hs[ti] = h;
                }
                outputs.push(hs);
            }
            inputs = (0..t)
                .map(|ti| tape.concat(&[outputs[0][ti], outputs[1][ti]]))
                .collect();
        }

        let h = tape.stack_rows(&inputs);
        let h_proj = tape.matmat(h, params.get("att.wh"));
        Ok(EncoderOutput {
            h,
            h_proj,
            frames: t,
        })
    }

    /// Initial decoder context: zero states, uniform attention, <sos> feedback.
    pub fn init_context(&self, tape: &mut Tape, frames: usize) -> DecoderContext {
        let c = &self.config;
        let zeros = Array1::<f64>::zeros(c.dec_units).into_dyn();
        let layers = (0..c.dec_layers)
            .map(|_| {
                let h = tape.constant(zeros.clone());
                let cs = tape.constant(zeros.clone());
                (h, cs)
            })
            .collect();
        let a0 = Array1::from_elem(frames, 1.0 / frames as f64).into_dyn();
        DecoderContext {
            layers,
            a_prev: tape.constant(a0),
            y_prev: c.sos_id,
        }
    }

    /// Location-aware attention: weights over frames and the summary vector.
    pub fn attend(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        ctx: &DecoderContext,
        enc: &EncoderOutput,
    ) -> Result<(Var, Var)> {
        if tape.value(ctx.a_prev).len() != enc.frames {
            return Err(Error::invalid_argument(
                "previous attention length does not match encoder frames",
            ));
        }
        let q_top = ctx.layers.last().expect("decoder has layers").0;
        let q_proj = tape.matvec(params.get("att.wq"), q_top);
        let loc = tape.conv1d_same(ctx.a_prev, params.get("att.conv"));
        let loc_proj = tape.matmat(loc, params.get("att.wf"));
        let content = tape.add(enc.h_proj, loc_proj);
        let bias_row = tape.add(q_proj, params.get("att.b"));
        let pre = tape.broadcast_add_row(content, bias_row);
        let act = tape.tanh(pre);
        let scores = tape.matvec(act, params.get("att.v"));
        let a = tape.softmax(scores);
        let r = tape.vecmat(a, enc.h);
        Ok((a, r))
    }

    /// One decoder recursion given the attention summary `r`. Returns the
    /// updated context (attention weights unchanged), the raw logit vector
    /// `s`, and the normalized log-probability vector.
    pub fn decode_step(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        r: Var,
        ctx: &DecoderContext,
    ) -> Result<(DecoderContext, Var, Var)> {
        let c = &self.config;
        if ctx.y_prev >= c.vocab_size {
            return Err(Error::invalid_argument(format!(
                "feedback token {} outside vocabulary of size {}",
                ctx.y_prev, c.vocab_size
            )));
        }
        let embed = tape.row(params.get("emb"), ctx.y_prev);
        let mut x = tape.concat(&[embed, r]);
        let mut layers = Vec::with_capacity(c.dec_layers);
        for layer in 0..c.dec_layers {
            let wx = params.get(&format!("dec.l{layer}.wx"));
            let wh = params.get(&format!("dec.l{layer}.wh"));
            let b = params.get(&format!("dec.l{layer}.b"));
            let (h, cs) = ctx.layers[layer];
            let (nh, nc) = lstm_step(tape, wx, wh, b, x, h, cs, c.dec_units);
            layers.push((nh, nc));
            x = nh;
        }
        let q_top = layers.last().unwrap().0;
        let affine = tape.matvec(params.get("out.w"), q_top);
        let s = tape.add(affine, params.get("out.b"));
        let lse = tape.logsumexp(s);
        let logp = tape.sub_broadcast(s, lse);
        let new_ctx = DecoderContext {
            layers,
            a_prev: ctx.a_prev,
            y_prev: ctx.y_prev,
        };
        Ok((new_ctx, s, logp))
    }

    /// Attention plus one decoder recursion; the returned context carries the
    /// fresh attention weights and is ready for the next feedback token.
    pub fn step(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        ctx: &DecoderContext,
        enc: &EncoderOutput,
    ) -> Result<(DecoderContext, Var, Var)> {
        let (a, r) = self.attend(tape, params, ctx, enc)?;
        let (mut new_ctx, s, logp) = self.decode_step(tape, params, r, ctx)?;
        new_ctx.a_prev = a;
        Ok((new_ctx, s, logp))
    }

    /// Teacher-forced log-probability of a token sequence ending in <eos>.
    pub fn sequence_log_prob(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        features: &Array2<f64>,
        tokens: &[usize],
    ) -> Result<Var> {
        let c = &self.config;
        if tokens.is_empty() {
            return Err(Error::invalid_argument("empty token sequence"));
        }
        if *tokens.last().unwrap() != c.eos_id {
            return Err(Error::invalid_argument("sequence must terminate with <eos>"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= c.vocab_size) {
            return Err(Error::invalid_argument(format!(
                "token {bad} outside vocabulary"
            )));
        }
        let enc = self.encode(tape, params, features)?;
        let mut ctx = self.init_context(tape, enc.frames);
        let mut total: Option<Var> = None;
        for &tok in tokens {
            let (new_ctx, _s, logp) = self.step(tape, params, &ctx, &enc)?;
            let term = tape.index(logp, tok);
            total = Some(match total {
                Some(acc) => tape.add(acc, term),
                None => term,
            });
            ctx = new_ctx;
            ctx.y_prev = tok;
        }
        Ok(total.unwrap())
    }
}
