//! Source-tweet encoder: embeddings, stacked bidirectional GRU and additive
//! word attention.
//!
//! Vectors are rows, so the GRU reads
//!
//! ```text
//! z  = sigmoid(x U_z + h W_z)
//! r  = sigmoid(x U_r + h W_r)
//! h~ = tanh(x U_h + (h * r) W_h)
//! h' = (1 - z) * h + z * h~
//! ```
//!
//! Only the `true_length` real tokens are fed through the recurrence (the
//! backward direction starts at the last real token), and attention is
//! normalised over real positions only. Padding therefore never changes the
//! sentence vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ops::dropout_mask;
use crate::params::ParamStore;
use crate::rng::StreamRng;
use crate::tensor::Tensor;

pub const PREFIX: &str = "text_encoder";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextEncoderConfig {
    pub embedding_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub attention_dim: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            embedding_dim: 300,
            hidden_size: 300,
            num_layers: 2,
            attention_dim: 128,
        }
    }
}

impl TextEncoderConfig {
    pub fn output_dim(&self) -> usize {
        2 * self.hidden_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.hidden_size == 0 || self.num_layers == 0 || self.attention_dim == 0 {
            return Err(Error::Config("text encoder dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// GRU weights for one direction of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
}

const GRU_NAMES: [&str; 6] = ["U_z", "U_r", "U_h", "W_z", "W_r", "W_h"];

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let u = Tensor::zeros(&[input, hidden]);
        let w = Tensor::zeros(&[hidden, hidden]);
        GruParams {
            u_z: u.clone(),
            u_r: u.clone(),
            u_h: u,
            w_z: w.clone(),
            w_r: w.clone(),
            w_h: w,
        }
    }

    fn tensors(&self) -> [&Tensor; 6] {
        [&self.u_z, &self.u_r, &self.u_h, &self.w_z, &self.w_r, &self.w_h]
    }

    fn bind(&self, tape: &mut Tape, prefix: &str) -> GruVars {
        let v: Vec<Var> = GRU_NAMES
            .iter()
            .zip(self.tensors())
            .map(|(n, t)| tape.param(&format!("{prefix}.{n}"), t))
            .collect();
        GruVars::from_slice(&v)
    }

    fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let g = |n: &str| store.get(&format!("{prefix}.{n}")).cloned();
        Ok(GruParams {
            u_z: g("U_z")?,
            u_r: g("U_r")?,
            u_h: g("U_h")?,
            w_z: g("W_z")?,
            w_r: g("W_r")?,
            w_h: g("W_h")?,
        })
    }
}

/// GRU weights bound on a tape.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub u_z: Var,
    pub u_r: Var,
    pub u_h: Var,
    pub w_z: Var,
    pub w_r: Var,
    pub w_h: Var,
}

impl GruVars {
    fn from_slice(v: &[Var]) -> Self {
        GruVars {
            u_z: v[0],
            u_r: v[1],
            u_h: v[2],
            w_z: v[3],
            w_r: v[4],
            w_h: v[5],
        }
    }

    fn bind_store(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut v = Vec::with_capacity(6);
        for n in GRU_NAMES {
            let name = format!("{prefix}.{n}");
            v.push(tape.param(&name, store.get(&name)?));
        }
        Ok(GruVars::from_slice(&v))
    }
}

/// Word-attention weights: `W_w` maps BiGRU outputs to the attention space,
/// `u_w` scores each projected position.
#[derive(Clone, Debug, PartialEq)]
pub struct TextAttnParams {
    pub w_w: Tensor,
    pub b_w: Tensor,
    pub u_w: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct AttnVars {
    pub w_w: Var,
    pub b_w: Var,
    pub u_w: Var,
}

/// Sentence vector and per-position weights (zero on padding).
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoderOutput {
    pub sentence: Tensor,
    pub word_weights: Vec<f64>,
}

/// One recurrence step on the tape, with the input projections
/// `x U_z`, `x U_r`, `x U_h` already computed.
fn gru_step(tape: &mut Tape, xz: Var, xr: Var, xh: Var, h: Var, p: &GruVars) -> Result<Var> {
    let hz = tape.matmul(h, p.w_z)?;
    let zs = tape.add(xz, hz)?;
    let z = tape.sigmoid(zs)?;
    let hr = tape.matmul(h, p.w_r)?;
    let rs = tape.add(xr, hr)?;
    let r = tape.sigmoid(rs)?;
    let gated = tape.mul(h, r)?;
    let gw = tape.matmul(gated, p.w_h)?;
    let cs = tape.add(xh, gw)?;
    let cand = tape.tanh(cs)?;
    let diff = tape.sub(cand, h)?;
    let step = tape.mul(z, diff)?;
    tape.add(h, step)
}

/// Single GRU cell on the tape: `x` is `1 x d`, `h` is `1 x hidden`.
pub fn gru_cell_var(tape: &mut Tape, x: Var, h: Var, p: &GruVars) -> Result<Var> {
    let xz = tape.matmul(x, p.u_z)?;
    let xr = tape.matmul(x, p.u_r)?;
    let xh = tape.matmul(x, p.u_h)?;
    gru_step(tape, xz, xr, xh, h, p)
}

/// Tensor-level GRU cell.
pub fn gru_cell(x: &Tensor, h_prev: &Tensor, p: &GruParams) -> Result<Tensor> {
    let hidden = p.w_z.rows();
    if x.rows() != 1 || h_prev.shape() != [1, hidden] || x.cols() != p.u_z.rows() {
        return Err(Error::shape(
            "gru_cell",
            format!("x {:?}, h {:?}, U_z {:?}", x.shape(), h_prev.shape(), p.u_z.shape()),
        ));
    }
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape, "gru");
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h_prev.clone());
    let out = gru_cell_var(&mut tape, xv, hv, &vars)?;
    Ok(tape.value(out).clone())
}

/// Runs one direction over an `L x d` input, returning `L x hidden` in
/// position order.
fn run_direction(tape: &mut Tape, x: Var, p: &GruVars, reverse: bool) -> Result<Var> {
    let len = tape.value(x).rows();
    let hidden = tape.value(p.w_z).rows();
    let xz_all = tape.matmul(x, p.u_z)?;
    let xr_all = tape.matmul(x, p.u_r)?;
    let xh_all = tape.matmul(x, p.u_h)?;
    let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut outputs = vec![h; len];
    let steps: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    for t in steps {
        let xz = tape.slice_rows(xz_all, t, 1)?;
        let xr = tape.slice_rows(xr_all, t, 1)?;
        let xh = tape.slice_rows(xh_all, t, 1)?;
        h = gru_step(tape, xz, xr, xh, h, p)?;
        outputs[t] = h;
    }
    tape.concat_rows(&outputs)
}

/// Stacked BiGRU over an `L x d` input; each layer's output is the
/// concatenation of forward and backward states, `L x 2 hidden`.
pub fn bigru_var(tape: &mut Tape, x: Var, layers: &[(GruVars, GruVars)]) -> Result<Var> {
    let mut input = x;
    for (fwd, bwd) in layers {
        let f = run_direction(tape, input, fwd, false)?;
        let b = run_direction(tape, input, bwd, true)?;
        input = tape.concat_cols(&[f, b])?;
    }
    Ok(input)
}

/// Tensor-level BiGRU encoding of a padded index sequence; rows beyond
/// `true_length` are zero.
pub fn bigru_encode(
    seq: &[usize],
    true_length: usize,
    emb: &EmbeddingTable,
    layers: &[(GruParams, GruParams)],
) -> Result<Tensor> {
    if true_length == 0 {
        return Err(Error::InvalidArgument(
            "bigru_encode needs at least one real token".into(),
        ));
    }
    if true_length > seq.len() || layers.is_empty() {
        return Err(Error::InvalidArgument(
            "true_length exceeds sequence or no layers".into(),
        ));
    }
    let mut tape = Tape::new();
    let table = tape.constant(emb.matrix.clone());
    let x = tape.gather_rows(table, &seq[..true_length])?;
    let vars: Vec<(GruVars, GruVars)> = layers
        .iter()
        .enumerate()
        .map(|(i, (f, b))| {
            (
                f.bind(&mut tape, &format!("l{i}.fwd")),
                b.bind(&mut tape, &format!("l{i}.bwd")),
            )
        })
        .collect();
    let h = bigru_var(&mut tape, x, &vars)?;
    let hv = tape.value(h);
    let mut out = Tensor::zeros(&[seq.len(), hv.cols()]);
    out.data_mut()[..hv.len()].copy_from_slice(hv.data());
    Ok(out)
}

/// Additive attention over the `L x 2h` BiGRU output: returns the `1 x 2h`
/// sentence vector and the `1 x L` weights.
pub fn word_attention_var(tape: &mut Tape, h: Var, p: &AttnVars) -> Result<(Var, Var)> {
    let len = tape.value(h).rows();
    let proj = tape.matmul(h, p.w_w)?;
    let biased = tape.add_row(proj, p.b_w)?;
    let u = tape.tanh(biased)?;
    let scores = tape.matmul(u, p.u_w)?;
    let scores = tape.reshape(scores, vec![1, len])?;
    let weights = tape.softmax(scores)?;
    let sentence = tape.matmul(weights, h)?;
    Ok((sentence, weights))
}

/// Tensor-level word attention over the first `true_length` rows of `h`.
pub fn word_attention(h: &Tensor, true_length: usize, p: &TextAttnParams) -> Result<TextEncoderOutput> {
    if true_length == 0 || true_length > h.rows() {
        return Err(Error::InvalidArgument(format!(
            "true_length {true_length} for {} positions",
            h.rows()
        )));
    }
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let real = tape.slice_rows(hv, 0, true_length)?;
    let vars = AttnVars {
        w_w: tape.constant(p.w_w.clone()),
        b_w: tape.constant(p.b_w.clone()),
        u_w: tape.constant(p.u_w.clone()),
    };
    let (s, w) = word_attention_var(&mut tape, real, &vars)?;
    let mut word_weights = tape.value(w).data().to_vec();
    word_weights.resize(h.rows(), 0.0);
    Ok(TextEncoderOutput {
        sentence: tape.value(s).clone(),
        word_weights,
    })
}

/// Glorot-uniform matrix.
pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut StreamRng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

pub fn embedding_name() -> String {
    format!("{PREFIX}.embedding")
}

fn gru_prefix(layer: usize, dir: &str) -> String {
    format!("{PREFIX}.gru.l{layer}.{dir}")
}

fn attn_name(n: &str) -> String {
    format!("{PREFIX}.attention.{n}")
}

/// Training-mode dropout for the text encoder.
pub struct TextDropout<'a> {
    /// Rate on the embedded tokens.
    pub embedding: f64,
    /// Rate on the BiGRU outputs before attention.
    pub hidden: f64,
    pub rng: &'a mut StreamRng,
}

/// Output of one text forward pass.
pub struct TextForward {
    pub vector: Var,
    /// `1 x L` attention weights, absent when attention is disabled.
    pub weights: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoder {
    pub config: TextEncoderConfig,
    /// `false` replaces word attention with the mean of the BiGRU rows.
    pub attention: bool,
}

impl TextEncoder {
    /// Adds GRU and attention parameters (not the embedding table).
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut StreamRng) {
        let c = &self.config;
        let h = c.hidden_size;
        for layer in 0..c.num_layers {
            let input = if layer == 0 { c.embedding_dim } else { 2 * h };
            for dir in ["fwd", "bwd"] {
                let prefix = gru_prefix(layer, dir);
                for n in GRU_NAMES {
                    let t = if n.starts_with('U') {
                        glorot(input, h, rng)
                    } else {
                        glorot(h, h, rng)
                    };
                    store.insert(format!("{prefix}.{n}"), t);
                }
            }
        }
        if self.attention {
            store.insert(attn_name("W_w"), glorot(2 * h, c.attention_dim, rng));
            store.insert(attn_name("b_w"), Tensor::zeros(&[1, c.attention_dim]));
            store.insert(attn_name("u_w"), glorot(c.attention_dim, 1, rng));
        }
    }

    pub fn gru_layers(&self, store: &ParamStore) -> Result<Vec<(GruParams, GruParams)>> {
        (0..self.config.num_layers)
            .map(|l| {
                Ok((
                    GruParams::from_store(store, &gru_prefix(l, "fwd"))?,
                    GruParams::from_store(store, &gru_prefix(l, "bwd"))?,
                ))
            })
            .collect()
    }

    pub fn attention_params(&self, store: &ParamStore) -> Result<TextAttnParams> {
        Ok(TextAttnParams {
            w_w: store.get(&attn_name("W_w"))?.clone(),
            b_w: store.get(&attn_name("b_w"))?.clone(),
            u_w: store.get(&attn_name("u_w"))?.clone(),
        })
    }

    /// Encodes the real tokens `ids` (no padding); `dropout` is set in
    /// training mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ids: &[usize],
        mut dropout: Option<TextDropout<'_>>,
    ) -> Result<TextForward> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("text needs at least one real token".into()));
        }
        let emb_name = embedding_name();
        let emb_tensor = store.get(&emb_name)?;
        let table = if store.is_trainable(&emb_name) {
            tape.param(&emb_name, emb_tensor)
        } else {
            tape.constant(emb_tensor.clone())
        };
        let mut x = tape.gather_rows(table, ids)?;
        if let Some(d) = dropout.as_mut() {
            x = apply_dropout(tape, x, d.embedding, d.rng)?;
        }

        let mut layers = Vec::with_capacity(self.config.num_layers);
        for l in 0..self.config.num_layers {
            layers.push((
                GruVars::bind_store(tape, store, &gru_prefix(l, "fwd"))?,
                GruVars::bind_store(tape, store, &gru_prefix(l, "bwd"))?,
            ));
        }
        let mut h = bigru_var(tape, x, &layers)?;
        if let Some(d) = dropout.as_mut() {
            h = apply_dropout(tape, h, d.hidden, d.rng)?;
        }

        if self.attention {
            let vars = AttnVars {
                w_w: tape.param(&attn_name("W_w"), store.get(&attn_name("W_w"))?),
                b_w: tape.param(&attn_name("b_w"), store.get(&attn_name("b_w"))?),
                u_w: tape.param(&attn_name("u_w"), store.get(&attn_name("u_w"))?),
            };
            let (s, w) = word_attention_var(tape, h, &vars)?;
            Ok(TextForward {
                vector: s,
                weights: Some(w),
            })
        } else {
            Ok(TextForward {
                vector: tape.mean_rows(h)?,
                weights: None,
            })
        }
    }
}

pub(crate) fn apply_dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut StreamRng) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let mask = dropout_mask(tape.shape(x), rate, rng)?;
    let m = tape.constant(mask);
    tape.mul(x, m)
}
