//! Embeddings, conditions and the attention kernels that turn them into a
//! latent mean.
//!
//! The toy world's mean `μ(c)` is built in three steps:
//!
//! 1. the text embedding (and the optional image embedding) are split into
//!    [`TOKENS_PER_EMBEDDING`] contiguous tokens, used as both keys and values;
//! 2. a fixed seeded query attends over them with decoupled attention,
//!    `Attn(q, K_text, V_text) + s · Attn(q, K_ip, V_ip)`;
//! 3. a fixed seeded linear projector lifts the result into `(h, w, d)`.
//!    Channels `0..d_id` only see the image term, so two conditions that
//!    share an image embedding and scale have identical identity channels.

use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

use crate::diffusion::{FrameLatent, LatentShape, MeanMap};
use crate::error::{Result, VgotError};
use crate::seed;

/// Number of tokens an embedding is split into.
pub const TOKENS_PER_EMBEDDING: usize = 4;

/// Projector gain, sized so μ entries are O(1).
const PROJECTOR_GAIN: f64 = 3.0;
/// Relative weight of the per-pixel projector term against the per-channel term.
const SPATIAL_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub data: Vec<f64>,
    pub kind: EmbeddingKind,
    /// Prompt hash or keyframe id.
    pub source: String,
}

impl Embedding {
    pub fn new(data: Vec<f64>, kind: EmbeddingKind, source: impl Into<String>) -> Self {
        Self {
            data,
            kind,
            source: source.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        cosine(&self.data, &other.data)
    }
}

/// Everything a denoiser call sees.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub text: Embedding,
    pub ip: Option<Embedding>,
    pub ip_scale: f64,
}

impl Condition {
    pub fn text_only(text: Embedding) -> Self {
        Self {
            text,
            ip: None,
            ip_scale: 0.0,
        }
    }

    pub fn with_ip(text: Embedding, ip: Embedding, ip_scale: f64) -> Result<Self> {
        if !(ip_scale >= 0.0 && ip_scale.is_finite()) {
            return Err(VgotError::Config(format!("ip_scale must be >= 0, got {ip_scale}")));
        }
        Ok(Self {
            text,
            ip: Some(ip),
            ip_scale,
        })
    }
}

/// Row-major `rows × cols` matrix of token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TokenMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(VgotError::Shape {
                expected: vec![rows, cols],
                actual: vec![data.len()],
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(VgotError::Numeric("token matrix"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(VgotError::Input("ragged token rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Split an embedding into [`TOKENS_PER_EMBEDDING`] contiguous tokens.
pub fn tokenize(e: &Embedding) -> Result<TokenMatrix> {
    if e.dim() == 0 || !e.dim().is_multiple_of(TOKENS_PER_EMBEDDING) {
        return Err(VgotError::Config(format!(
            "embedding dimension {} is not a positive multiple of {TOKENS_PER_EMBEDDING}",
            e.dim()
        )));
    }
    TokenMatrix::new(TOKENS_PER_EMBEDDING, e.dim() / TOKENS_PER_EMBEDDING, e.data.clone())
}

/// `Softmax(Q Kᵀ / √d_k) V`, row-wise.
pub fn attention(q: &TokenMatrix, k: &TokenMatrix, v: &TokenMatrix) -> Result<TokenMatrix> {
    if k.rows != v.rows || k.rows == 0 {
        return Err(VgotError::Shape {
            expected: vec![k.rows, v.cols],
            actual: vec![v.rows, v.cols],
        });
    }
    if q.cols != k.cols {
        return Err(VgotError::Shape {
            expected: vec![q.rows, k.cols],
            actual: vec![q.rows, q.cols],
        });
    }
    let scale = 1.0 / (k.cols as f64).sqrt();
    let mut out = Vec::with_capacity(q.rows * v.cols);
    for i in 0..q.rows {
        let weights = softmax(&(0..k.rows).map(|j| dot(q.row(i), k.row(j)) * scale).collect::<Vec<_>>());
        for c in 0..v.cols {
            out.push((0..v.rows).map(|j| weights[j] * v.row(j)[c]).sum());
        }
    }
    TokenMatrix::new(q.rows, v.cols, out)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// A `(keys, values)` pair.
pub type KeyValue<'a> = (&'a TokenMatrix, &'a TokenMatrix);

/// Decoupled attention for a single query: text attention plus
/// `ip_scale` times image attention.
pub fn compose_condition(
    query: &[f64],
    text: KeyValue<'_>,
    ip: Option<KeyValue<'_>>,
    ip_scale: f64,
) -> Result<Vec<f64>> {
    let (text_part, ip_part) = decoupled_parts(query, text, ip, ip_scale)?;
    Ok(match ip_part {
        Some(ip) => text_part.iter().zip(&ip).map(|(t, i)| t + ip_scale * i).collect(),
        None => text_part,
    })
}

/// Text and (unscaled) image attention outputs for one query.
fn decoupled_parts(
    query: &[f64],
    text: KeyValue<'_>,
    ip: Option<KeyValue<'_>>,
    ip_scale: f64,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if !(ip_scale >= 0.0 && ip_scale.is_finite()) {
        return Err(VgotError::Config(format!("ip_scale must be >= 0, got {ip_scale}")));
    }
    let q = TokenMatrix::new(1, query.len(), query.to_vec())?;
    let text_out = attention(&q, text.0, text.1)?.data;
    let ip_out = match ip {
        Some((k, v)) => {
            let out = attention(&q, k, v)?.data;
            if out.len() != text_out.len() {
                return Err(VgotError::Shape {
                    expected: vec![text_out.len()],
                    actual: vec![out.len()],
                });
            }
            Some(out)
        }
        None => None,
    };
    Ok((text_out, ip_out))
}

/// Deterministic text featurizer: bytes + seed → Gaussian stream → unit vector.
pub fn encode_text_mock(prompt: &str, dim: usize, seed: u64) -> Result<Embedding> {
    if prompt.trim().is_empty() {
        return Err(VgotError::Input("prompt is empty".into()));
    }
    if dim == 0 {
        return Err(VgotError::Config("embedding dimension must be positive".into()));
    }
    let mut rng = seed::keyed_stream(seed, "text-encoder", prompt.as_bytes());
    let raw = seed::gaussian_vec(&mut rng, dim);
    let source = seed::sha256_hex(prompt.as_bytes())[..16].to_string();
    Ok(Embedding::new(normalize_or_basis(raw), EmbeddingKind::Text, source))
}

/// Text encoder adapter.
pub trait TextEncoder: Send + Sync {
    fn encode(&self, prompt: &str) -> Result<Embedding>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockTextEncoder {
    pub dim: usize,
    pub seed: u64,
}

impl TextEncoder for MockTextEncoder {
    fn encode(&self, prompt: &str) -> Result<Embedding> {
        encode_text_mock(prompt, self.dim, self.seed)
    }
}

/// Replaces the rows of `block` with an orthogonal basis of their span,
/// each of norm `√cols`. Left alone when there are more rows than columns.
fn orthonormalize_rows(block: &mut [f64], cols: usize) {
    let rows = block.len() / cols;
    if rows == 0 || rows > cols {
        return;
    }
    let m = DMatrix::from_row_slice(rows, cols, block).transpose();
    let q = m.qr().q();
    let scale = (cols as f64).sqrt();
    for (r, row) in block.chunks_exact_mut(cols).enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = scale * q[(c, r)];
        }
    }
}

/// Fixed seeded query and linear map defining `μ(c)`.
#[derive(Debug, Clone)]
pub struct ConditionProjector {
    shape: LatentShape,
    identity_channels: usize,
    query: Vec<f64>,
    /// `shape.len() × token_dim`, row-major.
    weights: Vec<f64>,
    token_dim: usize,
}

impl ConditionProjector {
    pub fn new(seed: u64, shape: LatentShape, embedding_dim: usize, identity_channels: usize) -> Result<Self> {
        if identity_channels > shape.d {
            return Err(VgotError::Config(format!(
                "identity channels ({identity_channels}) exceed latent channels ({})",
                shape.d
            )));
        }
        if shape.is_empty() {
            return Err(VgotError::Config("latent shape must be non-empty".into()));
        }
        if embedding_dim == 0 || !embedding_dim.is_multiple_of(TOKENS_PER_EMBEDDING) {
            return Err(VgotError::Config(format!(
                "embedding dimension {embedding_dim} is not a positive multiple of {TOKENS_PER_EMBEDDING}"
            )));
        }
        let token_dim = embedding_dim / TOKENS_PER_EMBEDDING;
        // logits O(1) for unit-norm embeddings
        let query = seed::gaussian_vec(&mut seed::stream(seed, "projector-query", &[]), token_dim)
            .into_iter()
            .map(|q| q * (embedding_dim as f64).sqrt())
            .collect();
        let mut base = seed::gaussian_vec(&mut seed::stream(seed, "projector-channel", &[]), shape.d * token_dim);
        orthonormalize_rows(&mut base[..identity_channels * token_dim], token_dim);
        let spatial = seed::gaussian_vec(
            &mut seed::stream(seed, "projector-spatial", &[]),
            shape.len() * token_dim,
        );
        let weights = spatial
            .iter()
            .enumerate()
            .map(|(idx, s)| {
                let channel = (idx / token_dim) % shape.d;
                let v = idx % token_dim;
                PROJECTOR_GAIN * (base[channel * token_dim + v] + SPATIAL_WEIGHT * s)
            })
            .collect();
        Ok(Self {
            shape,
            identity_channels,
            query,
            weights,
            token_dim,
        })
    }

    pub fn identity_channels(&self) -> usize {
        self.identity_channels
    }

    pub fn shape(&self) -> LatentShape {
        self.shape
    }

    /// The linear map itself, `shape.len() × token_dim`, row-major.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn query(&self) -> &[f64] {
        &self.query
    }

    /// Per-channel spatial average of the projector, `d × token_dim`.
    /// Maps a composed vector to the channel means of `μ(c)`.
    pub fn channel_mean_map(&self) -> Vec<Vec<f64>> {
        let (d, k) = (self.shape.d, self.token_dim);
        let mut out = vec![vec![0.0; k]; d];
        for (row_idx, row) in self.weights.chunks_exact(k).enumerate() {
            let c = row_idx % d;
            for (o, w) in out[c].iter_mut().zip(row) {
                *o += w;
            }
        }
        let n = self.shape.pixels() as f64;
        out.iter_mut().flatten().for_each(|v| *v /= n);
        out
    }

    /// `μ(c)`.
    pub fn mean(&self, cond: &Condition) -> Result<FrameLatent> {
        let text_tokens = tokenize(&cond.text)?;
        if text_tokens.cols() != self.token_dim {
            return Err(VgotError::Shape {
                expected: vec![TOKENS_PER_EMBEDDING * self.token_dim],
                actual: vec![cond.text.dim()],
            });
        }
        let ip_tokens = cond.ip.as_ref().map(tokenize).transpose()?;
        let (text_part, ip_part) = decoupled_parts(
            &self.query,
            (&text_tokens, &text_tokens),
            ip_tokens.as_ref().map(|t| (t, t)),
            cond.ip_scale,
        )?;
        let ip_term: Vec<f64> = match ip_part {
            Some(ip) => ip.iter().map(|v| cond.ip_scale * v).collect(),
            None => vec![0.0; self.token_dim],
        };
        let composed: Vec<f64> = text_part.iter().zip(&ip_term).map(|(t, i)| t + i).collect();
        let d = self.shape.d;
        let data = self
            .weights
            .chunks_exact(self.token_dim)
            .enumerate()
            .map(|(row_idx, row)| {
                let source = if row_idx % d < self.identity_channels {
                    &ip_term
                } else {
                    &composed
                };
                dot(row, source)
            })
            .collect();
        FrameLatent::from_vec(self.shape, data)
    }
}

impl MeanMap for ConditionProjector {
    fn mean(&self, cond: &Condition) -> Result<FrameLatent> {
        ConditionProjector::mean(self, cond)
    }

    fn shape(&self) -> LatentShape {
        self.shape
    }
}

/// One-shot `μ(c)` for a projector seed.
pub fn condition_mean(
    cond: &Condition,
    projector_seed: u64,
    shape: LatentShape,
    identity_channels: usize,
) -> Result<FrameLatent> {
    ConditionProjector::new(projector_seed, shape, cond.text.dim(), identity_channels)?.mean(cond)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Unit vector, or the first basis vector for a zero input.
pub(crate) fn normalize_or_basis(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n == 0.0 || !n.is_finite() {
        v.iter_mut().for_each(|x| *x = 0.0);
        if let Some(first) = v.first_mut() {
            *first = 1.0;
        }
    } else {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tm(rows: &[&[f64]]) -> TokenMatrix {
        TokenMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn text_encoder_is_deterministic_unit_norm() {
        let a = encode_text_mock("Mary's life", 16, 0).unwrap();
        let b = encode_text_mock("Mary's life", 16, 0).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert_ne!(a, encode_text_mock("Mary's life", 16, 1).unwrap());
        assert!(matches!(encode_text_mock("   ", 16, 0), Err(VgotError::Input(_))));
    }

    #[test]
    fn single_key_returns_its_value() {
        let out = attention(
            &tm(&[&[3.0, -1.0], &[0.2, 0.4]]),
            &tm(&[&[1.0, 1.0]]),
            &tm(&[&[5.0, 7.0, 9.0]]),
        )
        .unwrap();
        for i in 0..2 {
            assert_eq!(out.row(i), &[5.0, 7.0, 9.0]);
        }
    }

    #[test]
    fn identical_keys_average_values() {
        let out = attention(
            &tm(&[&[0.3, 2.0]]),
            &tm(&[&[1.0, 0.5], &[1.0, 0.5]]),
            &tm(&[&[1.0, 0.0], &[0.0, 3.0]]),
        )
        .unwrap();
        assert!((out.row(0)[0] - 0.5).abs() < 1e-12);
        assert!((out.row(0)[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn hand_softmax_example() {
        // logits ±2/√2 → weights 1/(1+e^{−2√2}) and its complement
        let out = attention(
            &tm(&[&[2.0, 0.0]]),
            &tm(&[&[1.0, 0.0], &[-1.0, 0.0]]),
            &tm(&[&[1.0, 0.0], &[0.0, 1.0]]),
        )
        .unwrap();
        assert!((out.row(0)[0] - 0.9442).abs() < 1e-4);
        assert!((out.row(0)[1] - 0.0558).abs() < 1e-4);
    }

    #[test]
    fn attention_shape_errors() {
        let q = tm(&[&[1.0, 0.0]]);
        assert!(matches!(
            attention(&q, &tm(&[&[1.0, 0.0]]), &tm(&[&[1.0], &[2.0]])),
            Err(VgotError::Shape { .. })
        ));
        assert!(matches!(
            attention(&q, &tm(&[&[1.0, 0.0, 0.0]]), &tm(&[&[1.0]])),
            Err(VgotError::Shape { .. })
        ));
    }

    #[test]
    fn compose_condition_cases() {
        let q = [2.0, 0.0];
        let (k, v) = (tm(&[&[1.0, 0.0], &[-1.0, 0.0]]), tm(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let text_only = compose_condition(&q, (&k, &v), None, 0.0).unwrap();
        assert_eq!(compose_condition(&q, (&k, &v), Some((&k, &v)), 0.0).unwrap(), text_only);
        let doubled = compose_condition(&q, (&k, &v), Some((&k, &v)), 1.0).unwrap();
        for (d, t) in doubled.iter().zip(&text_only) {
            assert!((d - 2.0 * t).abs() < 1e-15);
        }
        // single image token [0.5, 0.5] at scale 0.5 adds 0.25 per entry
        let (ki, vi) = (tm(&[&[0.0, 1.0]]), tm(&[&[0.5, 0.5]]));
        let mixed = compose_condition(&q, (&k, &v), Some((&ki, &vi)), 0.5).unwrap();
        assert!((mixed[0] - 1.1942).abs() < 1e-4);
        assert!((mixed[1] - 0.3058).abs() < 1e-4);
        assert!(matches!(
            compose_condition(&q, (&k, &v), None, -0.1),
            Err(VgotError::Config(_))
        ));
    }

    fn sample_condition(text: &str, ip: Option<&str>, scale: f64) -> Condition {
        let t = encode_text_mock(text, 16, 0).unwrap();
        match ip {
            Some(p) => {
                let mut e = encode_text_mock(p, 16, 9).unwrap();
                e.kind = EmbeddingKind::Image;
                Condition::with_ip(t, e, scale).unwrap()
            }
            None => Condition::text_only(t),
        }
    }

    #[test]
    fn identity_channels_follow_ip_only() {
        let shape = LatentShape::default();
        let p = ConditionProjector::new(5, shape, 16, 4).unwrap();
        let none = p.mean(&sample_condition("a girl in a field", None, 0.0)).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                for c in 0..4 {
                    assert_eq!(none.get(i, j, c), 0.0);
                }
            }
        }
        let a = p
            .mean(&sample_condition("a girl in a field", Some("avatar"), 1.0))
            .unwrap();
        let b = p
            .mean(&sample_condition("an old woman at sea", Some("avatar"), 1.0))
            .unwrap();
        let mut rest_differs = false;
        for i in 0..8 {
            for j in 0..8 {
                for c in 0..8 {
                    if c < 4 {
                        assert_eq!(a.get(i, j, c), b.get(i, j, c));
                    } else {
                        rest_differs |= a.get(i, j, c) != b.get(i, j, c);
                    }
                }
            }
        }
        assert!(rest_differs);
        let again = condition_mean(&sample_condition("a girl in a field", Some("avatar"), 1.0), 5, shape, 4).unwrap();
        assert_eq!(a, again);
        assert!(ConditionProjector::new(5, shape, 16, 9).is_err());
    }

    #[test]
    fn zero_vector_normalizes_to_basis() {
        assert_eq!(normalize_or_basis(vec![0.0; 3]), vec![1.0, 0.0, 0.0]);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }
}
