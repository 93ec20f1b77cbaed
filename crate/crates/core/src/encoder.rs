//! Sequence encoder: token ids → fixed-dimension embedding.
//!
//! Two architectures share one flat parameter vector:
//!
//! * `Bag`: mean of the token embedding rows.
//! * `Transformer`: token + positional embeddings through post-norm
//!   encoder layers (multi-head self-attention, GELU feed-forward, residuals,
//!   layer normalization), then mean pooling over positions.
//!
//! PAD positions are masked as attention keys and excluded from pooling.
//! Gradients are computed by hand; see the finite-difference tests.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binio;
use crate::error::{Error, Result};
use crate::text::PAD_ID;

const LN_EPS: f64 = 1e-5;
const CKPT_MAGIC: &[u8; 8] = b"KGRCKPT\0";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Bag,
    Transformer,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Bag => "bag",
            Architecture::Transformer => "transformer",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bag" => Ok(Architecture::Bag),
            "transformer" => Ok(Architecture::Transformer),
            _ => Err(Error::InvalidConfig(format!("unknown architecture `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub architecture: Architecture,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feedforward_dim: usize,
    pub max_seq_len: usize,
    pub init_seed: u64,
    /// Half-width of the uniform init; `None` means `embedding_dim^-1/2`.
    pub init_scale: Option<f64>,
}

impl EncoderConfig {
    pub fn bag(vocab_size: usize, embedding_dim: usize) -> Self {
        Self {
            architecture: Architecture::Bag,
            vocab_size,
            embedding_dim,
            num_layers: 0,
            num_heads: 1,
            feedforward_dim: 0,
            max_seq_len: crate::text::DEFAULT_MAX_SEQ_LEN,
            init_seed: 0,
            init_scale: None,
        }
    }

    pub fn transformer(vocab_size: usize, embedding_dim: usize, num_layers: usize, num_heads: usize) -> Self {
        Self {
            architecture: Architecture::Transformer,
            vocab_size,
            embedding_dim,
            num_layers,
            num_heads,
            feedforward_dim: 2 * embedding_dim,
            max_seq_len: crate::text::DEFAULT_MAX_SEQ_LEN,
            init_seed: 0,
            init_scale: None,
        }
    }

    pub fn effective_init_scale(&self) -> f64 {
        self.init_scale
            .unwrap_or_else(|| (self.embedding_dim as f64).powf(-0.5))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if self.architecture == Architecture::Transformer {
            if self.num_heads == 0 || !self.embedding_dim.is_multiple_of(self.num_heads) {
                return bad(format!(
                    "embedding_dim {} must be divisible by num_heads {}",
                    self.embedding_dim, self.num_heads
                ));
            }
            if self.feedforward_dim == 0 || self.max_seq_len == 0 {
                return bad("feedforward_dim and max_seq_len must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerLayout {
    wq: Range<usize>,
    bq: Range<usize>,
    wk: Range<usize>,
    bk: Range<usize>,
    wv: Range<usize>,
    bv: Range<usize>,
    wo: Range<usize>,
    bo: Range<usize>,
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    token: Range<usize>,
    pos: Range<usize>,
    layers: Vec<LayerLayout>,
    total: usize,
}

impl Layout {
    fn new(c: &EncoderConfig) -> Self {
        let mut next = 0usize;
        let mut take = |n: usize| {
            let r = next..next + n;
            next += n;
            r
        };
        let d = c.embedding_dim;
        let token = take(c.vocab_size * d);
        let (pos, layers) = match c.architecture {
            Architecture::Bag => (take(0), Vec::new()),
            Architecture::Transformer => {
                let pos = take(c.max_seq_len * d);
                let ff = c.feedforward_dim;
                let layers = (0..c.num_layers)
                    .map(|_| LayerLayout {
                        wq: take(d * d),
                        bq: take(d),
                        wk: take(d * d),
                        bk: take(d),
                        wv: take(d * d),
                        bv: take(d),
                        wo: take(d * d),
                        bo: take(d),
                        ln1_g: take(d),
                        ln1_b: take(d),
                        w1: take(d * ff),
                        b1: take(ff),
                        w2: take(ff * d),
                        b2: take(d),
                        ln2_g: take(d),
                        ln2_b: take(d),
                    })
                    .collect();
                (pos, layers)
            }
        };
        Self {
            token,
            pos,
            layers,
            total: next,
        }
    }
}

/// All trainable weights, flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    layout: Layout,
    values: Vec<f64>,
}

impl EncoderParams {
    /// Weight matrices and embeddings uniform in `[-s, s]`; biases zero;
    /// layer-norm gains one.
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let s = config.effective_init_scale();
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut values: Vec<f64> = (0..layout.total)
            .map(|_| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 })
            .collect();
        for l in &layout.layers {
            for r in [&l.bq, &l.bk, &l.bv, &l.bo, &l.b1, &l.b2, &l.ln1_b, &l.ln2_b] {
                values[r.clone()].fill(0.0);
            }
            for r in [&l.ln1_g, &l.ln2_g] {
                values[r.clone()].fill(1.0);
            }
        }
        Ok(Self { config, layout, values })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn token_row(&self, id: u32) -> &[f64] {
        let d = self.dim();
        let start = self.layout.token.start + id as usize * d;
        &self.values[start..start + d]
    }

    pub fn token_row_mut(&mut self, id: u32) -> &mut [f64] {
        let d = self.dim();
        let start = self.layout.token.start + id as usize * d;
        &mut self.values[start..start + d]
    }

    /// Positional embedding table (empty for `Bag`).
    pub fn positional_mut(&mut self) -> &mut [f64] {
        let r = self.layout.pos.clone();
        &mut self.values[r]
    }

    fn slice(&self, r: &Range<usize>) -> &[f64] {
        &self.values[r.clone()]
    }

    fn check_ids(&self, ids: &[u32]) -> Result<usize> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        if self.config.architecture == Architecture::Transformer && ids.len() > self.config.max_seq_len {
            return Err(Error::InvalidConfig(format!(
                "sequence length {} exceeds max_seq_len {}",
                ids.len(),
                self.config.max_seq_len
            )));
        }
        let valid = ids.iter().filter(|&&id| id != PAD_ID).count();
        if valid == 0 {
            return Err(Error::EmptySequence);
        }
        Ok(valid)
    }

    pub fn save(&self, path: &Path, config_hash: u64) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        binio::write_header(&mut w, CKPT_MAGIC, CKPT_VERSION, config_hash)?;
        let c = &self.config;
        binio::write_u8(
            &mut w,
            match c.architecture {
                Architecture::Bag => 0,
                Architecture::Transformer => 1,
            },
        )?;
        for v in [
            c.vocab_size,
            c.embedding_dim,
            c.num_layers,
            c.num_heads,
            c.feedforward_dim,
            c.max_seq_len,
        ] {
            binio::write_u32(&mut w, v as u32)?;
        }
        binio::write_u64(&mut w, c.init_seed)?;
        binio::write_f32(&mut w, c.effective_init_scale() as f32)?;
        binio::write_u64(&mut w, self.values.len() as u64)?;
        let as_f32: Vec<f32> = self.values.iter().map(|&v| v as f32).collect();
        binio::write_f32_slice(&mut w, &as_f32)?;
        w.flush()?;
        Ok(())
    }

    /// Loads a checkpoint; returns it with the config hash in its header.
    pub fn load(path: &Path) -> Result<(Self, u64)> {
        let display = path.display().to_string();
        let mut r = BufReader::new(File::open(path)?);
        let header = binio::read_header(&mut r, CKPT_MAGIC, &display)?;
        let fmt_err = |message: String| Error::Format {
            path: display.clone(),
            message,
        };
        if header.version != CKPT_VERSION {
            return Err(fmt_err(format!("unsupported checkpoint version {}", header.version)));
        }
        let architecture = match binio::read_u8(&mut r)? {
            0 => Architecture::Bag,
            1 => Architecture::Transformer,
            other => return Err(fmt_err(format!("unknown architecture tag {other}"))),
        };
        let mut dims = [0usize; 6];
        for d in dims.iter_mut() {
            *d = binio::read_u32(&mut r)? as usize;
        }
        let init_seed = binio::read_u64(&mut r)?;
        let init_scale = binio::read_f32(&mut r)? as f64;
        let config = EncoderConfig {
            architecture,
            vocab_size: dims[0],
            embedding_dim: dims[1],
            num_layers: dims[2],
            num_heads: dims[3],
            feedforward_dim: dims[4],
            max_seq_len: dims[5],
            init_seed,
            init_scale: Some(init_scale),
        };
        config.validate()?;
        let layout = Layout::new(&config);
        let n = binio::read_u64(&mut r)? as usize;
        if n != layout.total {
            return Err(fmt_err(format!("expected {} weights, found {n}", layout.total)));
        }
        let values = binio::read_f32_vec(&mut r, n)?.into_iter().map(f64::from).collect();
        Ok((Self { config, layout, values }, header.config_hash))
    }
}

// ---------------------------------------------------------------------------
// dense helpers, row-major

/// `y[rows × out] = x[rows × inp] · w[inp × out] + b`
fn linear(x: &[f64], rows: usize, inp: usize, w: &[f64], b: &[f64], out: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * out];
    for i in 0..rows {
        let yi = &mut y[i * out..(i + 1) * out];
        yi.copy_from_slice(b);
        for (k, &xv) in x[i * inp..(i + 1) * inp].iter().enumerate() {
            if xv != 0.0 {
                for (yv, &wv) in yi.iter_mut().zip(&w[k * out..(k + 1) * out]) {
                    *yv += xv * wv;
                }
            }
        }
    }
    y
}

/// Accumulates `dW += xᵀ·dy`, `db += Σ dy` into `grad` and returns `dy·Wᵀ`.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    dy: &[f64],
    rows: usize,
    inp: usize,
    out: usize,
    w: &[f64],
    grad: &mut [f64],
    w_range: &Range<usize>,
    b_range: &Range<usize>,
) -> Vec<f64> {
    {
        let dw = &mut grad[w_range.clone()];
        for i in 0..rows {
            let dyi = &dy[i * out..(i + 1) * out];
            for (k, &xv) in x[i * inp..(i + 1) * inp].iter().enumerate() {
                for (g, &d) in dw[k * out..(k + 1) * out].iter_mut().zip(dyi) {
                    *g += xv * d;
                }
            }
        }
    }
    {
        let db = &mut grad[b_range.clone()];
        for i in 0..rows {
            for (g, &d) in db.iter_mut().zip(&dy[i * out..(i + 1) * out]) {
                *g += d;
            }
        }
    }
    let mut dx = vec![0.0; rows * inp];
    for i in 0..rows {
        let dyi = &dy[i * out..(i + 1) * out];
        for k in 0..inp {
            dx[i * inp + k] = w[k * out..(k + 1) * out]
                .iter()
                .zip(dyi)
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    dx
}

struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &[f64], rows: usize, d: usize, g: &[f64], b: &[f64]) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for i in 0..rows {
        let xi = &x[i * d..(i + 1) * d];
        let mean = xi.iter().sum::<f64>() / d as f64;
        let var = xi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        for c in 0..d {
            let h = (xi[c] - mean) * is;
            xhat[i * d + c] = h;
            y[i * d + c] = g[c] * h + b[c];
        }
    }
    (y, LnCache { xhat, inv_std })
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    rows: usize,
    d: usize,
    g: &[f64],
    grad: &mut [f64],
    g_range: &Range<usize>,
    b_range: &Range<usize>,
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    for i in 0..rows {
        let dyi = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        for c in 0..d {
            grad[g_range.start + c] += dyi[c] * xh[c];
            grad[b_range.start + c] += dyi[c];
        }
        let dxhat: Vec<f64> = (0..d).map(|c| dyi[c] * g[c]).collect();
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for c in 0..d {
            dx[i * d + c] = cache.inv_std[i] * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

// ---------------------------------------------------------------------------
// forward / backward

struct LayerCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// heads × L × L attention probabilities
    probs: Vec<f64>,
    o: Vec<f64>,
    ln1: LnCache,
    h: Vec<f64>,
    z: Vec<f64>,
    gz: Vec<f64>,
    ln2: LnCache,
}

struct Cache {
    ids: Vec<u32>,
    valid: Vec<bool>,
    n_valid: usize,
    layers: Vec<LayerCache>,
}

#[allow(clippy::type_complexity)]
fn attention_forward(
    p: &EncoderParams,
    l: &LayerLayout,
    x: &[f64],
    valid: &[bool],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = valid.len();
    let d = p.dim();
    let heads = p.config.num_heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = linear(x, n, d, p.slice(&l.wq), p.slice(&l.bq), d);
    let k = linear(x, n, d, p.slice(&l.wk), p.slice(&l.bk), d);
    let v = linear(x, n, d, p.slice(&l.wv), p.slice(&l.bv), d);
    let mut probs = vec![0.0; heads * n * n];
    let mut o = vec![0.0; n * d];
    for hd in 0..heads {
        let off = hd * dh;
        for i in 0..n {
            let row = &mut probs[(hd * n + i) * n..(hd * n + i + 1) * n];
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if valid[j] {
                    let s: f64 = (0..dh).map(|c| q[i * d + off + c] * k[j * d + off + c]).sum::<f64>() * scale;
                    row[j] = s;
                    max = max.max(s);
                }
            }
            let mut sum = 0.0;
            for j in 0..n {
                if valid[j] {
                    row[j] = (row[j] - max).exp();
                    sum += row[j];
                } else {
                    row[j] = 0.0;
                }
            }
            for v in row.iter_mut().take(n) {
                *v /= sum;
            }
            for j in 0..n {
                let a = row[j];
                if a != 0.0 {
                    for c in 0..dh {
                        o[i * d + off + c] += a * v[j * d + off + c];
                    }
                }
            }
        }
    }
    (q, k, v, probs, o)
}

fn forward_cached(p: &EncoderParams, ids: &[u32]) -> Result<(Vec<f64>, Cache)> {
    let n_valid = p.check_ids(ids)?;
    let d = p.dim();
    let n = ids.len();
    let valid: Vec<bool> = ids.iter().map(|&id| id != PAD_ID).collect();
    let mut cache = Cache {
        ids: ids.to_vec(),
        valid,
        n_valid,
        layers: Vec::new(),
    };
    let mut x = vec![0.0; n * d];
    for (i, &id) in ids.iter().enumerate() {
        x[i * d..(i + 1) * d].copy_from_slice(p.token_row(id));
    }
    if p.config.architecture == Architecture::Transformer {
        let pos = p.slice(&p.layout.pos);
        for (xv, pv) in x.iter_mut().zip(pos) {
            *xv += pv;
        }
        for l in &p.layout.layers {
            let (q, k, v, probs, o) = attention_forward(p, l, &x, &cache.valid);
            let attn = linear(&o, n, d, p.slice(&l.wo), p.slice(&l.bo), d);
            let r1: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();
            let (h, ln1) = layer_norm(&r1, n, d, p.slice(&l.ln1_g), p.slice(&l.ln1_b));
            let ff = p.config.feedforward_dim;
            let z = linear(&h, n, d, p.slice(&l.w1), p.slice(&l.b1), ff);
            let gz: Vec<f64> = z.iter().map(|&v| gelu(v)).collect();
            let f = linear(&gz, n, ff, p.slice(&l.w2), p.slice(&l.b2), d);
            let r2: Vec<f64> = h.iter().zip(&f).map(|(a, b)| a + b).collect();
            let (y, ln2) = layer_norm(&r2, n, d, p.slice(&l.ln2_g), p.slice(&l.ln2_b));
            cache.layers.push(LayerCache {
                x: std::mem::replace(&mut x, y),
                q,
                k,
                v,
                probs,
                o,
                ln1,
                h,
                z,
                gz,
                ln2,
            });
        }
    }
    let mut out = vec![0.0; d];
    for i in 0..n {
        if cache.valid[i] {
            for (o, v) in out.iter_mut().zip(&x[i * d..(i + 1) * d]) {
                *o += v;
            }
        }
    }
    let inv = 1.0 / n_valid as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok((out, cache))
}

/// Accumulates `∂(d_out · f)/∂θ` into `grad`.
fn backward_cached(p: &EncoderParams, cache: &Cache, d_out: &[f64], grad: &mut [f64]) {
    let d = p.dim();
    let n = cache.ids.len();
    let inv = 1.0 / cache.n_valid as f64;
    let mut dx = vec![0.0; n * d];
    for i in 0..n {
        if cache.valid[i] {
            for c in 0..d {
                dx[i * d + c] = d_out[c] * inv;
            }
        }
    }
    if p.config.architecture == Architecture::Transformer {
        let ff = p.config.feedforward_dim;
        let heads = p.config.num_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for (l, lc) in p.layout.layers.iter().zip(&cache.layers).rev() {
            // y = LN2(h + f)
            let dr2 = layer_norm_backward(&dx, &lc.ln2, n, d, p.slice(&l.ln2_g), grad, &l.ln2_g, &l.ln2_b);
            let dgz = linear_backward(&lc.gz, &dr2, n, ff, d, p.slice(&l.w2), grad, &l.w2, &l.b2);
            let dz: Vec<f64> = dgz.iter().zip(&lc.z).map(|(g, &z)| g * gelu_grad(z)).collect();
            let dh_ff = linear_backward(&lc.h, &dz, n, d, ff, p.slice(&l.w1), grad, &l.w1, &l.b1);
            let dh_total: Vec<f64> = dr2.iter().zip(&dh_ff).map(|(a, b)| a + b).collect();
            // h = LN1(x + attn)
            let dr1 = layer_norm_backward(&dh_total, &lc.ln1, n, d, p.slice(&l.ln1_g), grad, &l.ln1_g, &l.ln1_b);
            let d_o = linear_backward(&lc.o, &dr1, n, d, d, p.slice(&l.wo), grad, &l.wo, &l.bo);
            let mut dq = vec![0.0; n * d];
            let mut dk = vec![0.0; n * d];
            let mut dv = vec![0.0; n * d];
            for hd in 0..heads {
                let off = hd * dh;
                for i in 0..n {
                    let row = &lc.probs[(hd * n + i) * n..(hd * n + i + 1) * n];
                    // dA_ij = dO_i · V_j
                    let da: Vec<f64> = (0..n)
                        .map(|j| (0..dh).map(|c| d_o[i * d + off + c] * lc.v[j * d + off + c]).sum())
                        .collect();
                    let dot: f64 = row.iter().zip(&da).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        let a = row[j];
                        if a == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            dv[j * d + off + c] += a * d_o[i * d + off + c];
                        }
                        let ds = a * (da[j] - dot) * scale;
                        for c in 0..dh {
                            dq[i * d + off + c] += ds * lc.k[j * d + off + c];
                            dk[j * d + off + c] += ds * lc.q[i * d + off + c];
                        }
                    }
                }
            }
            let dxq = linear_backward(&lc.x, &dq, n, d, d, p.slice(&l.wq), grad, &l.wq, &l.bq);
            let dxk = linear_backward(&lc.x, &dk, n, d, d, p.slice(&l.wk), grad, &l.wk, &l.bk);
            let dxv = linear_backward(&lc.x, &dv, n, d, d, p.slice(&l.wv), grad, &l.wv, &l.bv);
            for i in 0..n * d {
                dx[i] = dr1[i] + dxq[i] + dxk[i] + dxv[i];
            }
        }
        let pos = p.layout.pos.start;
        for (i, g) in dx.iter().enumerate() {
            grad[pos + i] += g;
        }
    }
    for (i, &id) in cache.ids.iter().enumerate() {
        let start = p.layout.token.start + id as usize * d;
        for c in 0..d {
            grad[start + c] += dx[i * d + c];
        }
    }
}

/// Embeds one token-id sequence.
pub fn forward(params: &EncoderParams, ids: &[u32]) -> Result<Vec<f64>> {
    forward_cached(params, ids).map(|(v, _)| v)
}

/// Embeds many sequences in parallel; output order matches input order.
pub fn forward_batch<S: AsRef<[u32]> + Sync>(params: &EncoderParams, seqs: &[S]) -> Result<Vec<Vec<f64>>> {
    seqs.par_iter().map(|s| forward(params, s.as_ref())).collect()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Triplet-loss value and the distances it was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletEval {
    pub loss: f64,
    pub d_ap: f64,
    pub d_an: f64,
}

impl TripletEval {
    pub fn active(&self) -> bool {
        self.loss > 0.0
    }
}

/// `max(0, d_ap − d_an + margin)` over true Euclidean distances.
pub fn triplet_loss_value(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

/// Loss of one (anchor, positive, negative) id triple, without gradients.
pub fn triplet_eval(params: &EncoderParams, ids: [&[u32]; 3], margin: f64) -> Result<TripletEval> {
    let ea = forward(params, ids[0])?;
    let ep = forward(params, ids[1])?;
    let en = forward(params, ids[2])?;
    let d_ap = euclidean(&ea, &ep);
    let d_an = euclidean(&ea, &en);
    Ok(TripletEval {
        loss: triplet_loss_value(d_ap, d_an, margin),
        d_ap,
        d_an,
    })
}

/// Adds `scale · ∂L/∂θ` of one triplet to `grad` and returns the loss.
///
/// The hinge and the distance use subgradient 0 at their kinks, so an
/// inactive triplet contributes nothing.
pub fn accumulate_triplet_gradient(
    params: &EncoderParams,
    ids: [&[u32]; 3],
    margin: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<TripletEval> {
    let (ea, ca) = forward_cached(params, ids[0])?;
    let (ep, cp) = forward_cached(params, ids[1])?;
    let (en, cn) = forward_cached(params, ids[2])?;
    let d_ap = euclidean(&ea, &ep);
    let d_an = euclidean(&ea, &en);
    let eval = TripletEval {
        loss: triplet_loss_value(d_ap, d_an, margin),
        d_ap,
        d_an,
    };
    if !eval.active() {
        return Ok(eval);
    }
    let d = params.dim();
    let mut ga = vec![0.0; d];
    let mut gp = vec![0.0; d];
    let mut gn = vec![0.0; d];
    if d_ap > 0.0 {
        for c in 0..d {
            let u = (ea[c] - ep[c]) / d_ap * scale;
            ga[c] += u;
            gp[c] -= u;
        }
    }
    if d_an > 0.0 {
        for c in 0..d {
            let u = (ea[c] - en[c]) / d_an * scale;
            ga[c] -= u;
            gn[c] += u;
        }
    }
    backward_cached(params, &ca, &ga, grad);
    backward_cached(params, &cp, &gp, grad);
    backward_cached(params, &cn, &gn, grad);
    Ok(eval)
}

/// Exact gradient of the triplet loss of one (anchor, positive, negative).
pub fn backward(params: &EncoderParams, ids: [&[u32]; 3], margin: f64) -> Result<(TripletEval, Vec<f64>)> {
    let mut grad = params.zeros_like();
    let eval = accumulate_triplet_gradient(params, ids, margin, 1.0, &mut grad)?;
    Ok((eval, grad))
}
