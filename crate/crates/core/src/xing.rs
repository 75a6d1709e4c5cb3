//! Crossed non-local attention between the appearance and shape codes.
//!
//! The SA block refines the appearance code with attention weights computed
//! between appearance and shape embeddings; the AS block does the converse
//! and then merges the result with the freshly updated appearance code.

use crate::error::{mismatch, Result};
use crate::params::{init_conv, Binder, ParamStore};
use crate::tensor::{concat_channels, Scalar, SeedRng, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeKind {
    Appearance,
    Shape,
}

/// A `[c,h,w]` feature map tagged with the branch it belongs to.
#[derive(Clone, Copy, Debug)]
pub struct FeatureCode<'g, S> {
    pub kind: CodeKind,
    pub map: Var<'g, S>,
}

impl<'g, S: Scalar> FeatureCode<'g, S> {
    pub fn appearance(map: Var<'g, S>) -> Self {
        Self {
            kind: CodeKind::Appearance,
            map,
        }
    }

    pub fn shape(map: Var<'g, S>) -> Self {
        Self {
            kind: CodeKind::Shape,
            map,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.map.shape()
    }
}

/// Bound parameters of one SA block.
#[derive(Clone, Copy, Debug)]
pub struct SaBlockParams<'g, S> {
    pub conv_a: Var<'g, S>,
    pub conv_b: Var<'g, S>,
    pub conv_c: Var<'g, S>,
    pub alpha: Var<'g, S>,
}

impl<'g, S: Scalar> SaBlockParams<'g, S> {
    pub fn bind(b: &Binder<'g, '_, S>, prefix: &str) -> Result<Self> {
        Ok(Self {
            conv_a: b.get(&format!("{prefix}.conv_a.weight"))?,
            conv_b: b.get(&format!("{prefix}.conv_b.weight"))?,
            conv_c: b.get(&format!("{prefix}.conv_c.weight"))?,
            alpha: b.get(&format!("{prefix}.alpha"))?,
        })
    }
}

/// Bound parameters of one AS block.
#[derive(Clone, Copy, Debug)]
pub struct AsBlockParams<'g, S> {
    pub conv_d: Var<'g, S>,
    pub conv_e: Var<'g, S>,
    pub conv_h: Var<'g, S>,
    pub beta: Var<'g, S>,
    pub merge_weight: Var<'g, S>,
    pub merge_bias: Var<'g, S>,
}

impl<'g, S: Scalar> AsBlockParams<'g, S> {
    pub fn bind(b: &Binder<'g, '_, S>, prefix: &str) -> Result<Self> {
        Ok(Self {
            conv_d: b.get(&format!("{prefix}.conv_d.weight"))?,
            conv_e: b.get(&format!("{prefix}.conv_e.weight"))?,
            conv_h: b.get(&format!("{prefix}.conv_h.weight"))?,
            beta: b.get(&format!("{prefix}.beta"))?,
            merge_weight: b.get(&format!("{prefix}.merge.weight"))?,
            merge_bias: b.get(&format!("{prefix}.merge.bias"))?,
        })
    }
}

/// Bias-free 1x1 embeddings and a zero gain.
pub fn init_sa_block<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, c: usize, rng: &mut SeedRng) {
    for name in ["conv_a", "conv_b", "conv_c"] {
        init_conv(store, &format!("{prefix}.{name}"), c, c, 1, false, rng);
    }
    store.insert(format!("{prefix}.alpha"), Tensor::zeros(&[1]));
}

pub fn init_as_block<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, c: usize, rng: &mut SeedRng) {
    for name in ["conv_d", "conv_e", "conv_h"] {
        init_conv(store, &format!("{prefix}.{name}"), c, c, 1, false, rng);
    }
    store.insert(format!("{prefix}.beta"), Tensor::zeros(&[1]));
    init_conv(store, &format!("{prefix}.merge"), c, 2 * c, 3, true, rng);
}

fn flatten<'g, S: Scalar>(x: Var<'g, S>) -> Result<Var<'g, S>> {
    let s = x.shape();
    x.reshape(&[s[0], s[1] * s[2]])
}

/// Row-stochastic `[n,n]` matrix whose row `j` is the softmax over `i` of
/// `key_i . query_j`, for embedded codes `[c,h,w]` and `n = h*w`.
pub fn correlation_matrix<'g, S: Scalar>(query: Var<'g, S>, key: Var<'g, S>) -> Result<Var<'g, S>> {
    let (qs, ks) = (query.shape(), key.shape());
    if qs != ks || qs.len() != 3 {
        return Err(mismatch("correlation_matrix", &qs, &ks));
    }
    let logits = flatten(query)?.transpose()?.matmul(flatten(key)?)?;
    logits.softmax_rows()
}

/// `values` `[c,h,w]` aggregated with attention rows: position `j` receives
/// `sum_i attn[j,i] * values_i`.
fn attend<'g, S: Scalar>(values: Var<'g, S>, attn: Var<'g, S>) -> Result<Var<'g, S>> {
    let shape = values.shape();
    flatten(values)?.matmul(attn.transpose()?)?.reshape(&shape)
}

fn check_pair<S: Scalar>(op: &'static str, a: &FeatureCode<'_, S>, b: &FeatureCode<'_, S>) -> Result<()> {
    let (sa, sb) = (a.dims(), b.dims());
    if sa != sb || sa.len() != 3 {
        return Err(mismatch(op, &sa, &sb));
    }
    Ok(())
}

/// Shape-guided appearance update: `alpha * attend(A, P) + F_I`.
pub fn sa_block<'g, S: Scalar>(
    appearance: FeatureCode<'g, S>,
    shape: FeatureCode<'g, S>,
    p: &SaBlockParams<'g, S>,
) -> Result<FeatureCode<'g, S>> {
    check_pair("sa_block", &appearance, &shape)?;
    let c = appearance.map.conv2d(p.conv_c, None, 1, 0)?;
    let b = shape.map.conv2d(p.conv_b, None, 1, 0)?;
    let a = appearance.map.conv2d(p.conv_a, None, 1, 0)?;
    let corr = correlation_matrix(c, b)?;
    let out = attend(a, corr)?.scale_by(p.alpha)?.add(appearance.map)?;
    Ok(FeatureCode::appearance(out))
}

/// Result of an AS block, keeping the value before the merge convolution.
#[derive(Clone, Copy, Debug)]
pub struct AsBlockOutput<'g, S> {
    pub pre_merge: Var<'g, S>,
    pub code: FeatureCode<'g, S>,
}

/// Appearance-guided shape update. Attention is computed against the
/// previous appearance code; the merge concatenates the new one.
pub fn as_block_parts<'g, S: Scalar>(
    shape: FeatureCode<'g, S>,
    appearance_prev: FeatureCode<'g, S>,
    appearance_new: FeatureCode<'g, S>,
    p: &AsBlockParams<'g, S>,
) -> Result<AsBlockOutput<'g, S>> {
    check_pair("as_block", &shape, &appearance_prev)?;
    check_pair("as_block", &shape, &appearance_new)?;
    let h = shape.map.conv2d(p.conv_h, None, 1, 0)?;
    let e = appearance_prev.map.conv2d(p.conv_e, None, 1, 0)?;
    let d = shape.map.conv2d(p.conv_d, None, 1, 0)?;
    let corr = correlation_matrix(h, e)?;
    let pre_merge = attend(d, corr)?.scale_by(p.beta)?.add(shape.map)?;
    let merged = concat_channels(&[pre_merge, appearance_new.map])?.conv2d(
        p.merge_weight,
        Some(p.merge_bias),
        1,
        1,
    )?;
    Ok(AsBlockOutput {
        pre_merge,
        code: FeatureCode::shape(merged),
    })
}

pub fn as_block<'g, S: Scalar>(
    shape: FeatureCode<'g, S>,
    appearance_prev: FeatureCode<'g, S>,
    appearance_new: FeatureCode<'g, S>,
    p: &AsBlockParams<'g, S>,
) -> Result<FeatureCode<'g, S>> {
    Ok(as_block_parts(shape, appearance_prev, appearance_new, p)?.code)
}
