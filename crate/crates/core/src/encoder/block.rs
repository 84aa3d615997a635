//! Pre-norm residual attention block: `h = x + attn(ln_1(x))`,
//! `y = h + mlp(ln_2(h))`.

use std::borrow::Cow;

use super::math::{
    layer_norm, layer_norm_backward, linear, linear_backward, quick_gelu, quick_gelu_grad,
    softmax_in_place, LayerNormCache, Real,
};
use crate::tensorstore::{ArchiveError, TensorArchive};

#[derive(Debug, Clone)]
pub struct BlockWeights<'a, T: Real> {
    pub width: usize,
    pub heads: usize,
    pub ln_1_weight: Cow<'a, [T]>,
    pub ln_1_bias: Cow<'a, [T]>,
    pub qkv_weight: Cow<'a, [T]>,
    pub qkv_bias: Cow<'a, [T]>,
    pub out_weight: Cow<'a, [T]>,
    pub out_bias: Cow<'a, [T]>,
    pub ln_2_weight: Cow<'a, [T]>,
    pub ln_2_bias: Cow<'a, [T]>,
    pub fc_weight: Cow<'a, [T]>,
    pub fc_bias: Cow<'a, [T]>,
    pub proj_weight: Cow<'a, [T]>,
    pub proj_bias: Cow<'a, [T]>,
}

pub(crate) fn view<'a, T: Real>(
    archive: &'a TensorArchive,
    name: &str,
    shape: &[usize],
) -> Result<Cow<'a, [T]>, ArchiveError> {
    Ok(T::view(archive.tensor_with_shape(name, shape)?.data()))
}

impl<'a, T: Real> BlockWeights<'a, T> {
    /// Reads `{prefix}.ln_1.weight`, `{prefix}.attn.qkv.weight`, ... from the archive.
    pub fn from_archive(
        archive: &'a TensorArchive,
        prefix: &str,
        width: usize,
        heads: usize,
    ) -> Result<Self, ArchiveError> {
        let w = width;
        let v = |suffix: &str, shape: &[usize]| view::<T>(archive, &format!("{prefix}.{suffix}"), shape);
        Ok(Self {
            width,
            heads,
            ln_1_weight: v("ln_1.weight", &[w])?,
            ln_1_bias: v("ln_1.bias", &[w])?,
            qkv_weight: v("attn.qkv.weight", &[3 * w, w])?,
            qkv_bias: v("attn.qkv.bias", &[3 * w])?,
            out_weight: v("attn.out.weight", &[w, w])?,
            out_bias: v("attn.out.bias", &[w])?,
            ln_2_weight: v("ln_2.weight", &[w])?,
            ln_2_bias: v("ln_2.bias", &[w])?,
            fc_weight: v("mlp.fc.weight", &[4 * w, w])?,
            fc_bias: v("mlp.fc.bias", &[4 * w])?,
            proj_weight: v("mlp.proj.weight", &[w, 4 * w])?,
            proj_bias: v("mlp.proj.bias", &[w])?,
        })
    }
}

/// Activations saved by [`block_forward`] for [`block_backward`].
#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    ln_1: LayerNormCache<T>,
    qkv: Vec<T>,
    /// `[heads, rows, rows]`; entries above the diagonal stay zero when causal.
    probs: Vec<T>,
    ln_2: LayerNormCache<T>,
    fc_pre: Vec<T>,
}

/// Multi-head scaled dot-product attention over packed `qkv: [rows, 3w]`.
fn attention_core<T: Real>(
    qkv: &[T],
    rows: usize,
    width: usize,
    heads: usize,
    causal: bool,
    mut probs_out: Option<&mut Vec<T>>,
) -> Vec<T> {
    let dh = width / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let stride = 3 * width;
    let mut out = vec![T::ZERO; rows * width];
    let mut scores = vec![T::ZERO; rows];
    if let Some(p) = probs_out.as_deref_mut() {
        p.clear();
        p.resize(heads * rows * rows, T::ZERO);
    }
    for h in 0..heads {
        let qo = h * dh;
        let ko = width + h * dh;
        let vo = 2 * width + h * dh;
        for i in 0..rows {
            let visible = if causal { i + 1 } else { rows };
            let qi = &qkv[i * stride + qo..i * stride + qo + dh];
            for j in 0..visible {
                let kj = &qkv[j * stride + ko..j * stride + ko + dh];
                scores[j] = super::math::dot(qi, kj) * scale;
            }
            softmax_in_place(&mut scores[..visible]);
            let oi = &mut out[i * width + h * dh..i * width + (h + 1) * dh];
            for j in 0..visible {
                let p = scores[j];
                let vj = &qkv[j * stride + vo..j * stride + vo + dh];
                for (o, &v) in oi.iter_mut().zip(vj) {
                    *o += p * v;
                }
            }
            if let Some(pr) = probs_out.as_deref_mut() {
                pr[(h * rows + i) * rows..(h * rows + i) * rows + visible]
                    .copy_from_slice(&scores[..visible]);
            }
        }
    }
    out
}

fn attention_core_backward<T: Real>(
    g_out: &[T],
    qkv: &[T],
    probs: &[T],
    rows: usize,
    width: usize,
    heads: usize,
    causal: bool,
) -> Vec<T> {
    let dh = width / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let stride = 3 * width;
    let mut g_qkv = vec![T::ZERO; rows * stride];
    let mut g_p = vec![T::ZERO; rows];
    for h in 0..heads {
        let qo = h * dh;
        let ko = width + h * dh;
        let vo = 2 * width + h * dh;
        for i in 0..rows {
            let visible = if causal { i + 1 } else { rows };
            let p = &probs[(h * rows + i) * rows..(h * rows + i) * rows + visible];
            let go = &g_out[i * width + h * dh..i * width + (h + 1) * dh];
            let mut weighted = T::ZERO;
            for j in 0..visible {
                let vj = &qkv[j * stride + vo..j * stride + vo + dh];
                g_p[j] = super::math::dot(go, vj);
                weighted += p[j] * g_p[j];
                // dV_j += P_ij dO_i
                let gv = &mut g_qkv[j * stride + vo..j * stride + vo + dh];
                for (g, &o) in gv.iter_mut().zip(go) {
                    *g += p[j] * o;
                }
            }
            for j in 0..visible {
                let gs = p[j] * (g_p[j] - weighted) * scale;
                if gs == T::ZERO {
                    continue;
                }
                for d in 0..dh {
                    let kjd = qkv[j * stride + ko + d];
                    let qid = qkv[i * stride + qo + d];
                    g_qkv[i * stride + qo + d] += gs * kjd;
                    g_qkv[j * stride + ko + d] += gs * qid;
                }
            }
        }
    }
    g_qkv
}

/// Runs one block over `x: [rows, width]`. Fills `cache` when given.
pub fn block_forward<T: Real>(
    x: &[T],
    rows: usize,
    w: &BlockWeights<'_, T>,
    causal: bool,
    cache: Option<&mut BlockCache<T>>,
) -> Vec<T> {
    let width = w.width;
    let (ln1, ln1_cache) = layer_norm(x, width, &w.ln_1_weight, &w.ln_1_bias);
    let qkv = linear(&ln1, rows, &w.qkv_weight, Some(&w.qkv_bias), 3 * width);
    let mut probs = Vec::new();
    let attn = attention_core(&qkv, rows, width, w.heads, causal, cache.is_some().then_some(&mut probs));
    let attn_out = linear(&attn, rows, &w.out_weight, Some(&w.out_bias), width);
    let h: Vec<T> = x.iter().zip(&attn_out).map(|(&a, &b)| a + b).collect();

    let (ln2, ln2_cache) = layer_norm(&h, width, &w.ln_2_weight, &w.ln_2_bias);
    let fc_pre = linear(&ln2, rows, &w.fc_weight, Some(&w.fc_bias), 4 * width);
    let act: Vec<T> = fc_pre.iter().map(|&v| quick_gelu(v)).collect();
    let mlp = linear(&act, rows, &w.proj_weight, Some(&w.proj_bias), width);
    let y = h.iter().zip(&mlp).map(|(&a, &b)| a + b).collect();

    if let Some(c) = cache {
        *c = BlockCache {
            ln_1: ln1_cache,
            qkv,
            probs,
            ln_2: ln2_cache,
            fc_pre,
        };
    }
    y
}

/// Gradient with respect to the block input, given the gradient at its output.
pub fn block_backward<T: Real>(
    g_y: &[T],
    rows: usize,
    w: &BlockWeights<'_, T>,
    causal: bool,
    cache: &BlockCache<T>,
) -> Vec<T> {
    let width = w.width;
    // MLP branch
    let g_act = linear_backward(g_y, rows, &w.proj_weight, width);
    let g_fc: Vec<T> = g_act
        .iter()
        .zip(&cache.fc_pre)
        .map(|(&g, &a)| g * quick_gelu_grad(a))
        .collect();
    let g_ln2 = linear_backward(&g_fc, rows, &w.fc_weight, 4 * width);
    let g_h_branch = layer_norm_backward(&g_ln2, width, &w.ln_2_weight, &cache.ln_2);
    let g_h: Vec<T> = g_y.iter().zip(&g_h_branch).map(|(&a, &b)| a + b).collect();

    // attention branch
    let g_attn = linear_backward(&g_h, rows, &w.out_weight, width);
    let g_qkv = attention_core_backward(&g_attn, &cache.qkv, &cache.probs, rows, width, w.heads, causal);
    let g_ln1 = linear_backward(&g_qkv, rows, &w.qkv_weight, 3 * width);
    let g_x_branch = layer_norm_backward(&g_ln1, width, &w.ln_1_weight, &cache.ln_1);
    g_h.iter().zip(&g_x_branch).map(|(&a, &b)| a + b).collect()
}

impl<T> Default for BlockCache<T> {
    fn default() -> Self {
        Self {
            ln_1: LayerNormCache {
                xhat: Vec::new(),
                rstd: Vec::new(),
            },
            qkv: Vec::new(),
            probs: Vec::new(),
            ln_2: LayerNormCache {
                xhat: Vec::new(),
                rstd: Vec::new(),
            },
            fc_pre: Vec::new(),
        }
    }
}
