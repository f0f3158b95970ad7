//! Pre-LayerNorm transformer over a flat parameter vector, with cached
//! activations for exact manual backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, N_CLASSES};
use super::ops::{
    dot, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward,
    softmax_in_place, LnCache,
};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    w_qkv: usize,
    b_qkv: usize,
    w_o: usize,
    b_o: usize,
    ln2_g: usize,
    ln2_b: usize,
    w_1: usize,
    b_1: usize,
    w_2: usize,
    b_2: usize,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Layout {
    tok_emb: usize,
    pos_emb: usize,
    seg_emb: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    head_w: usize,
    head_b: usize,
    head_out: usize,
    pub total: usize,
    pub tensors: Vec<TensorInfo>,
}

struct LayoutBuilder {
    next: usize,
    tensors: Vec<TensorInfo>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: &[usize]) -> usize {
        let off = self.next;
        self.next += shape.iter().product::<usize>();
        self.tensors.push(TensorInfo {
            name,
            offset: off,
            shape: shape.to_vec(),
        });
        off
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (h, f, v) = (cfg.hidden_dim, cfg.ffn_dim, cfg.vocab_size);
        let mut b = LayoutBuilder {
            next: 0,
            tensors: Vec::new(),
        };
        let tok_emb = b.add("tok_emb".into(), &[v, h]);
        let pos_emb = b.add("pos_emb".into(), &[cfg.max_len, h]);
        let seg_emb = b.add("seg_emb".into(), &[cfg.n_segments(), h]);
        let layers = (0..cfg.n_layers)
            .map(|l| LayerOffsets {
                ln1_g: b.add(format!("l{l}.ln1_g"), &[h]),
                ln1_b: b.add(format!("l{l}.ln1_b"), &[h]),
                w_qkv: b.add(format!("l{l}.w_qkv"), &[h, 3 * h]),
                b_qkv: b.add(format!("l{l}.b_qkv"), &[3 * h]),
                w_o: b.add(format!("l{l}.w_o"), &[h, h]),
                b_o: b.add(format!("l{l}.b_o"), &[h]),
                ln2_g: b.add(format!("l{l}.ln2_g"), &[h]),
                ln2_b: b.add(format!("l{l}.ln2_b"), &[h]),
                w_1: b.add(format!("l{l}.w_1"), &[h, f]),
                b_1: b.add(format!("l{l}.b_1"), &[f]),
                w_2: b.add(format!("l{l}.w_2"), &[f, h]),
                b_2: b.add(format!("l{l}.b_2"), &[h]),
            })
            .collect();
        let lnf_g = b.add("lnf_g".into(), &[h]);
        let lnf_b = b.add("lnf_b".into(), &[h]);
        let head_out = if cfg.causal { v } else { N_CLASSES };
        let head_w = b.add("head_w".into(), &[h, head_out]);
        let head_b = b.add("head_b".into(), &[head_out]);
        Layout {
            tok_emb,
            pos_emb,
            seg_emb,
            layers,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
            head_out,
            total: b.next,
            tensors: b.tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Largest magnitude any freshly initialized parameter can take
/// (LayerNorm gains start at exactly this value).
pub const INIT_BOUND: f64 = 1.0;
const EMBED_BOUND: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Transformer {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct LayerTrace {
    ln1: LnCache,
    a: Vec<f64>,
    qkv: Vec<f64>,
    /// Attention probabilities, `n_heads × T × T`.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2: LnCache,
    m: Vec<f64>,
    f_pre: Vec<f64>,
    f_act: Vec<f64>,
}

/// Activations of one forward pass, sufficient for exact backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    pub tokens: Vec<u32>,
    pub segments: Vec<u8>,
    layers: Vec<LayerTrace>,
    lnf: LnCache,
    /// Final LayerNorm output, `T × H`.
    pub hidden: Vec<f64>,
    /// Head outputs: `T × V` token logits for decoders, `N_CLASSES` logits for encoders.
    pub logits: Vec<f64>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Transformer {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut r = rng::stream_rng(seed, "init");
        let residual_scale = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        for t in &layout.tensors {
            let slice = &mut params[t.offset..t.offset + t.len()];
            let leaf = t.name.rsplit('.').next().unwrap_or(&t.name);
            let bound = match leaf {
                "tok_emb" | "pos_emb" | "seg_emb" => EMBED_BOUND,
                "w_qkv" | "w_1" | "head_w" => 1.0 / (t.shape[0] as f64).sqrt(),
                "w_o" | "w_2" => residual_scale / (t.shape[0] as f64).sqrt(),
                "ln1_g" | "ln2_g" | "lnf_g" => {
                    slice.fill(1.0);
                    continue;
                }
                _ => continue, // biases start at zero
            };
            for p in slice.iter_mut() {
                *p = r.gen_range(-bound..bound);
            }
        }
        // Start keys equal to queries so every head begins with a
        // token-self-similarity bias; exact-match lookups (query value vs
        // product value) otherwise sit on a long plateau.
        let h = config.hidden_dim;
        for lo in &layout.layers {
            let w = &mut params[lo.w_qkv..lo.w_qkv + h * 3 * h];
            for row in w.chunks_mut(3 * h) {
                let (q, rest) = row.split_at_mut(h);
                rest[..h].copy_from_slice(q);
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.layout.total]
    }

    fn p(&self, off: usize, len: usize) -> &[f64] {
        &self.params[off..off + len]
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_len {
            return Err(Error::Input(format!(
                "sequence length {} exceeds max_len {}",
                tokens.len(),
                self.config.max_len
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Input(format!(
                "token id {t} out of range for vocab size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn embed(&self, tokens: &[u32], segments: &[u8], x: &mut [f64]) {
        let h = self.config.hidden_dim;
        let lay = &self.layout;
        for (t, &tok) in tokens.iter().enumerate() {
            let row = &mut x[t * h..(t + 1) * h];
            let te = self.p(lay.tok_emb + tok as usize * h, h);
            let pe = self.p(lay.pos_emb + t * h, h);
            for i in 0..h {
                row[i] = te[i] + pe[i];
            }
            let se = self.p(lay.seg_emb + segments[t] as usize * h, h);
            for i in 0..h {
                row[i] += se[i];
            }
        }
    }

    /// Full forward pass with cached activations.
    pub fn forward(&self, tokens: &[u32], segments: &[u8]) -> Result<Trace> {
        self.check_tokens(tokens)?;
        if segments.len() != tokens.len() {
            return Err(Error::Shape(format!(
                "{} segment ids for {} tokens",
                segments.len(),
                tokens.len()
            )));
        }
        if segments.iter().any(|&s| s as usize >= self.config.n_segments()) {
            return Err(Error::Input("segment id out of range".into()));
        }
        let cfg = &self.config;
        let (t_len, h, f) = (tokens.len(), cfg.hidden_dim, cfg.ffn_dim);
        let (nh, dh) = (cfg.n_heads, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = vec![0.0; t_len * h];
        self.embed(tokens, segments, &mut x);

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for lo in &self.layout.layers {
            let mut lt = LayerTrace {
                a: vec![0.0; t_len * h],
                qkv: vec![0.0; t_len * 3 * h],
                probs: vec![0.0; nh * t_len * t_len],
                ctx: vec![0.0; t_len * h],
                m: vec![0.0; t_len * h],
                f_pre: vec![0.0; t_len * f],
                f_act: vec![0.0; t_len * f],
                ..Default::default()
            };
            lt.ln1 = layer_norm(&x, self.p(lo.ln1_g, h), self.p(lo.ln1_b, h), t_len, h, &mut lt.a);
            linear(&lt.a, self.p(lo.w_qkv, h * 3 * h), self.p(lo.b_qkv, 3 * h), t_len, h, 3 * h, &mut lt.qkv);
            for hd in 0..nh {
                for t in 0..t_len {
                    let q = &lt.qkv[t * 3 * h + hd * dh..t * 3 * h + (hd + 1) * dh];
                    let span = if cfg.causal { t + 1 } else { t_len };
                    let row = &mut lt.probs[(hd * t_len + t) * t_len..(hd * t_len + t + 1) * t_len];
                    for s in 0..span {
                        let k = &lt.qkv[s * 3 * h + h + hd * dh..s * 3 * h + h + (hd + 1) * dh];
                        row[s] = dot(q, k) * scale;
                    }
                    softmax_in_place(&mut row[..span]);
                    let out = &mut lt.ctx[t * h + hd * dh..t * h + (hd + 1) * dh];
                    for s in 0..span {
                        let v = &lt.qkv[s * 3 * h + 2 * h + hd * dh..s * 3 * h + 2 * h + (hd + 1) * dh];
                        let p = row[s];
                        for i in 0..dh {
                            out[i] += p * v[i];
                        }
                    }
                }
            }
            let mut proj = vec![0.0; t_len * h];
            linear(&lt.ctx, self.p(lo.w_o, h * h), self.p(lo.b_o, h), t_len, h, h, &mut proj);
            for (xi, pi) in x.iter_mut().zip(&proj) {
                *xi += pi;
            }
            lt.ln2 = layer_norm(&x, self.p(lo.ln2_g, h), self.p(lo.ln2_b, h), t_len, h, &mut lt.m);
            linear(&lt.m, self.p(lo.w_1, h * f), self.p(lo.b_1, f), t_len, h, f, &mut lt.f_pre);
            for (a, &z) in lt.f_act.iter_mut().zip(&lt.f_pre) {
                *a = gelu(z);
            }
            linear(&lt.f_act, self.p(lo.w_2, f * h), self.p(lo.b_2, h), t_len, f, h, &mut proj);
            for (xi, pi) in x.iter_mut().zip(&proj) {
                *xi += pi;
            }
            layers.push(lt);
        }
        let lay = &self.layout;
        let mut hidden = vec![0.0; t_len * h];
        let lnf = layer_norm(&x, self.p(lay.lnf_g, h), self.p(lay.lnf_b, h), t_len, h, &mut hidden);
        let n_out = lay.head_out;
        let head_rows = if cfg.causal { t_len } else { 1 };
        let mut logits = vec![0.0; head_rows * n_out];
        linear(
            &hidden[..head_rows * h],
            self.p(lay.head_w, h * n_out),
            self.p(lay.head_b, n_out),
            head_rows,
            h,
            n_out,
            &mut logits,
        );
        Ok(Trace {
            tokens: tokens.to_vec(),
            segments: segments.to_vec(),
            layers,
            lnf,
            hidden,
            logits,
        })
    }

    /// Backpropagate from gradients on the head logits and (optionally) on
    /// the final hidden states, accumulating into `grads`.
    pub fn backward(
        &self,
        trace: &Trace,
        d_logits: &[f64],
        d_hidden_extra: Option<&[f64]>,
        grads: &mut [f64],
    ) -> Result<()> {
        if grads.len() != self.layout.total {
            return Err(Error::Shape(format!(
                "gradient buffer has {} entries, model has {}",
                grads.len(),
                self.layout.total
            )));
        }
        if d_logits.len() != trace.logits.len() {
            return Err(Error::Shape("logit gradient does not match trace".into()));
        }
        let cfg = &self.config;
        let lay = &self.layout;
        let (t_len, h, f) = (trace.len(), cfg.hidden_dim, cfg.ffn_dim);
        let (nh, dh) = (cfg.n_heads, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let n_out = lay.head_out;
        let head_rows = if cfg.causal { t_len } else { 1 };

        let mut d_hidden = vec![0.0; t_len * h];
        {
            let (gw, gb) = two_mut(grads, lay.head_w, lay.head_b, 0);
            let (gw, gb) = (&mut gw[..h * n_out], &mut gb[..n_out]);
            linear_backward(
                &trace.hidden[..head_rows * h],
                self.p(lay.head_w, h * n_out),
                d_logits,
                head_rows,
                h,
                n_out,
                gw,
                gb,
                Some(&mut d_hidden[..head_rows * h]),
            );
        }
        if let Some(extra) = d_hidden_extra {
            if extra.len() > d_hidden.len() {
                return Err(Error::Shape("hidden gradient longer than trace".into()));
            }
            for (d, e) in d_hidden.iter_mut().zip(extra) {
                *d += e;
            }
        }
        let mut dx = vec![0.0; t_len * h];
        {
            let (g_lnf_g, g_lnf_b) = two_mut(grads, lay.lnf_g, lay.lnf_b, h);
            layer_norm_backward(&trace.lnf, self.p(lay.lnf_g, h), &d_hidden, t_len, h, g_lnf_g, g_lnf_b, &mut dx);
        }

        for (lo, lt) in lay.layers.iter().zip(&trace.layers).rev() {
            // feed-forward branch
            let mut d_f = vec![0.0; t_len * f];
            {
                let (gw, gb) = two_mut(grads, lo.w_2, lo.b_2, 0);
                let (gw, gb) = (&mut gw[..f * h], &mut gb[..h]);
                linear_backward(&lt.f_act, self.p(lo.w_2, f * h), &dx, t_len, f, h, gw, gb, Some(&mut d_f));
            }
            for (d, &z) in d_f.iter_mut().zip(&lt.f_pre) {
                *d *= gelu_grad(z);
            }
            let mut d_m = vec![0.0; t_len * h];
            {
                let (gw, gb) = two_mut(grads, lo.w_1, lo.b_1, 0);
                let (gw, gb) = (&mut gw[..h * f], &mut gb[..f]);
                linear_backward(&lt.m, self.p(lo.w_1, h * f), &d_f, t_len, h, f, gw, gb, Some(&mut d_m));
            }
            {
                let (gg, gb) = two_mut(grads, lo.ln2_g, lo.ln2_b, h);
                layer_norm_backward(&lt.ln2, self.p(lo.ln2_g, h), &d_m, t_len, h, gg, gb, &mut dx);
            }
            // attention branch
            let mut d_ctx = vec![0.0; t_len * h];
            {
                let (gw, gb) = two_mut(grads, lo.w_o, lo.b_o, 0);
                let (gw, gb) = (&mut gw[..h * h], &mut gb[..h]);
                linear_backward(&lt.ctx, self.p(lo.w_o, h * h), &dx, t_len, h, h, gw, gb, Some(&mut d_ctx));
            }
            let mut d_qkv = vec![0.0; t_len * 3 * h];
            let mut d_p = vec![0.0; t_len];
            for hd in 0..nh {
                for t in 0..t_len {
                    let span = if cfg.causal { t + 1 } else { t_len };
                    let row = &lt.probs[(hd * t_len + t) * t_len..(hd * t_len + t) * t_len + span];
                    let dc = &d_ctx[t * h + hd * dh..t * h + (hd + 1) * dh];
                    let mut weighted = 0.0;
                    for s in 0..span {
                        let vo = s * 3 * h + 2 * h + hd * dh;
                        d_p[s] = dot(dc, &lt.qkv[vo..vo + dh]);
                        weighted += row[s] * d_p[s];
                        let p = row[s];
                        for i in 0..dh {
                            d_qkv[vo + i] += p * dc[i];
                        }
                    }
                    let qo = t * 3 * h + hd * dh;
                    for s in 0..span {
                        let ds = row[s] * (d_p[s] - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let ko = s * 3 * h + h + hd * dh;
                        for i in 0..dh {
                            d_qkv[qo + i] += ds * lt.qkv[ko + i];
                            d_qkv[ko + i] += ds * lt.qkv[qo + i];
                        }
                    }
                }
            }
            let mut d_a = vec![0.0; t_len * h];
            {
                let (gw, gb) = two_mut(grads, lo.w_qkv, lo.b_qkv, 0);
                let (gw, gb) = (&mut gw[..h * 3 * h], &mut gb[..3 * h]);
                linear_backward(&lt.a, self.p(lo.w_qkv, h * 3 * h), &d_qkv, t_len, h, 3 * h, gw, gb, Some(&mut d_a));
            }
            {
                let (gg, gb) = two_mut(grads, lo.ln1_g, lo.ln1_b, h);
                layer_norm_backward(&lt.ln1, self.p(lo.ln1_g, h), &d_a, t_len, h, gg, gb, &mut dx);
            }
        }

        for (t, &tok) in trace.tokens.iter().enumerate() {
            let d = &dx[t * h..(t + 1) * h];
            let te = lay.tok_emb + tok as usize * h;
            let pe = lay.pos_emb + t * h;
            for i in 0..h {
                grads[te + i] += d[i];
                grads[pe + i] += d[i];
            }
            let so = lay.seg_emb + trace.segments[t] as usize * h;
            for i in 0..h {
                grads[so + i] += d[i];
            }
        }
        Ok(())
    }
}

/// Two disjoint mutable views `grads[a..]` and `grads[b..]` with `a < b`;
/// when `len > 0` both are cut to `len`.
fn two_mut(grads: &mut [f64], a: usize, b: usize, len: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a < b);
    let (lo, hi) = grads.split_at_mut(b);
    let first = &mut lo[a..];
    if len > 0 {
        (&mut first[..len], &mut hi[..len])
    } else {
        (first, hi)
    }
}

/// Key/value cache for incremental causal decoding.
#[derive(Debug, Clone)]
pub struct DecodeState {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    pub len: usize,
    /// Segment of the most recent token; decoders derive the next one from it.
    pub segment: u8,
}

impl Transformer {
    pub fn start_decode(&self) -> DecodeState {
        DecodeState {
            keys: vec![Vec::new(); self.config.n_layers],
            values: vec![Vec::new(); self.config.n_layers],
            len: 0,
            segment: 0,
        }
    }

    /// Feed one token to a causal model and return the next-token logits.
    /// Produces the same values as the last row of a full [`Self::forward`].
    pub fn decode_step(&self, state: &mut DecodeState, token: u32, segment: u8) -> Result<Vec<f64>> {
        if !self.config.causal {
            return Err(Error::Input("incremental decoding needs a causal model".into()));
        }
        if state.len >= self.config.max_len {
            return Err(Error::Input("decode state reached max_len".into()));
        }
        if token as usize >= self.config.vocab_size {
            return Err(Error::Input(format!("token id {token} out of range")));
        }
        if segment as usize >= self.config.n_segments() {
            return Err(Error::Input("segment id out of range".into()));
        }
        let cfg = &self.config;
        let (h, f) = (cfg.hidden_dim, cfg.ffn_dim);
        let (nh, dh) = (cfg.n_heads, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let t = state.len;
        let lay = &self.layout;
        let mut x = vec![0.0; h];
        {
            let te = self.p(lay.tok_emb + token as usize * h, h);
            let pe = self.p(lay.pos_emb + t * h, h);
            let se = self.p(lay.seg_emb + segment as usize * h, h);
            for i in 0..h {
                x[i] = te[i] + pe[i] + se[i];
            }
        }
        let mut a = vec![0.0; h];
        let mut qkv = vec![0.0; 3 * h];
        let mut ctx = vec![0.0; h];
        let mut proj = vec![0.0; h];
        let mut f_buf = vec![0.0; f];
        let mut scores = vec![0.0; t + 1];
        for (l, lo) in lay.layers.iter().enumerate() {
            layer_norm(&x, self.p(lo.ln1_g, h), self.p(lo.ln1_b, h), 1, h, &mut a);
            linear(&a, self.p(lo.w_qkv, h * 3 * h), self.p(lo.b_qkv, 3 * h), 1, h, 3 * h, &mut qkv);
            state.keys[l].extend_from_slice(&qkv[h..2 * h]);
            state.values[l].extend_from_slice(&qkv[2 * h..]);
            ctx.fill(0.0);
            for hd in 0..nh {
                let q = &qkv[hd * dh..(hd + 1) * dh];
                for s in 0..=t {
                    scores[s] = dot(q, &state.keys[l][s * h + hd * dh..s * h + (hd + 1) * dh]) * scale;
                }
                softmax_in_place(&mut scores[..=t]);
                for s in 0..=t {
                    let v = &state.values[l][s * h + hd * dh..s * h + (hd + 1) * dh];
                    for i in 0..dh {
                        ctx[hd * dh + i] += scores[s] * v[i];
                    }
                }
            }
            linear(&ctx, self.p(lo.w_o, h * h), self.p(lo.b_o, h), 1, h, h, &mut proj);
            for i in 0..h {
                x[i] += proj[i];
            }
            layer_norm(&x, self.p(lo.ln2_g, h), self.p(lo.ln2_b, h), 1, h, &mut a);
            linear(&a, self.p(lo.w_1, h * f), self.p(lo.b_1, f), 1, h, f, &mut f_buf);
            for z in f_buf.iter_mut() {
                *z = gelu(*z);
            }
            linear(&f_buf, self.p(lo.w_2, f * h), self.p(lo.b_2, h), 1, f, h, &mut proj);
            for i in 0..h {
                x[i] += proj[i];
            }
        }
        layer_norm(&x, self.p(lay.lnf_g, h), self.p(lay.lnf_b, h), 1, h, &mut a);
        let n_out = lay.head_out;
        let mut logits = vec![0.0; n_out];
        linear(&a, self.p(lay.head_w, h * n_out), self.p(lay.head_b, n_out), 1, h, n_out, &mut logits);
        state.len += 1;
        Ok(logits)
    }

    /// Offset and length of the output head bias, used by tests that pin
    /// the output distribution.
    pub fn head_bias_range(&self) -> std::ops::Range<usize> {
        self.layout.head_b..self.layout.head_b + self.layout.head_out
    }

    pub fn head_weight_range(&self) -> std::ops::Range<usize> {
        self.layout.head_w..self.layout.head_w + self.layout.head_out * self.config.hidden_dim
    }
}
