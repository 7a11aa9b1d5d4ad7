//! Sequence encoders: map a fixed-length, left-padded item window to a
//! dense user representation of shape `[1, d]` (batched: `[B, d]`).
//!
//! Item id 0 is padding everywhere. Both encoders skip padding
//! structurally rather than through mask tensors: the recurrent cell
//! treats padding steps as identity transitions, and the attention
//! block only attends over real positions. Consequence: a window is
//! encoded identically no matter how much padding precedes it.

use crate::autodiff::{BoundParams, Graph, NodeId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Which encoder a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Recurrent,
    Attention,
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EncoderKind::Recurrent => write!(f, "recurrent"),
            EncoderKind::Attention => write!(f, "attention"),
        }
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recurrent" => Ok(EncoderKind::Recurrent),
            "attention" => Ok(EncoderKind::Attention),
            other => Err(Error::Config(format!(
                "unknown encoder {other:?}, expected recurrent or attention"
            ))),
        }
    }
}

impl EncoderKind {
    /// Recover the kind from a checkpoint's parameter names.
    pub fn infer(params: &ParamSet) -> Result<EncoderKind> {
        if params.contains("enc.gru.wz") {
            Ok(EncoderKind::Recurrent)
        } else if params.contains("enc.attn.wq") {
            Ok(EncoderKind::Attention)
        } else {
            Err(Error::Incompatible("parameters contain neither encoder's weights".into()))
        }
    }
}

/// Common interface over the two encoder families.
pub trait SequenceEncoder {
    fn kind(&self) -> EncoderKind;

    /// Fresh parameters, deterministically seeded per tensor name.
    /// The embedding table has `vocab + 1` rows; row 0 is padding and
    /// initialized to zero.
    fn init_params(&self, vocab: u32, seed: u64) -> ParamSet;

    /// Encode a batch of windows into a `[B, d]` representation.
    /// Every window must have at least one non-padding item.
    fn encode(&self, g: &mut Graph, p: &BoundParams, windows: &[Vec<u32>]) -> Result<NodeId>;
}

fn embedding_bound(dim: usize) -> f64 {
    1.0 / (dim as f64).sqrt()
}

fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn insert_embedding(params: &mut ParamSet, vocab: u32, dim: usize, seed: u64) {
    params.insert_uniform("enc.emb", &[vocab as usize + 1, dim], embedding_bound(dim), seed);
    // Row 0 is padding; keep it at zero so it carries no signal.
    let emb = params.get_mut("enc.emb").expect("just inserted");
    for v in &mut emb.values_mut()[..dim] {
        *v = 0.0;
    }
}

/// Indices of the non-padding items in a window, with range checks
/// against an embedding table of `rows` rows.
fn real_items(window: &[u32], rows: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(window.len());
    for &item in window {
        if item == 0 {
            continue;
        }
        if item as usize >= rows {
            return Err(Error::ItemOutOfRange { index: item, vocab: rows as u32 - 1 });
        }
        out.push(item as usize);
    }
    if out.is_empty() {
        return Err(Error::Incompatible("window contains only padding".into()));
    }
    Ok(out)
}

// ── Recurrent encoder ───────────────────────────────────────────────

/// Gated recurrent encoder. Per real item x with state h:
///
/// ```text
/// z  = sigmoid(x Wz + h Uz + bz)
/// r  = sigmoid(x Wr + h Ur + br)
/// c  = tanh(x Wc + (r * h) Uc + bc)
/// h' = (1 - z) * h + z * c
/// ```
///
/// h starts at zero and padding steps leave it untouched. With all
/// weights zero the state stays exactly zero for any input.
#[derive(Debug, Clone, Copy)]
pub struct RecurrentEncoder {
    pub dim: usize,
}

const GRU_GATES: [(&str, &str, &str); 3] = [
    ("enc.gru.wz", "enc.gru.uz", "enc.gru.bz"),
    ("enc.gru.wr", "enc.gru.ur", "enc.gru.br"),
    ("enc.gru.wc", "enc.gru.uc", "enc.gru.bc"),
];

impl SequenceEncoder for RecurrentEncoder {
    fn kind(&self) -> EncoderKind {
        EncoderKind::Recurrent
    }

    fn init_params(&self, vocab: u32, seed: u64) -> ParamSet {
        let d = self.dim;
        let mut params = ParamSet::new();
        insert_embedding(&mut params, vocab, d, seed);
        let bound = xavier_bound(d, d);
        for (w, u, b) in GRU_GATES {
            params.insert_uniform(w, &[d, d], bound, seed);
            params.insert_uniform(u, &[d, d], bound, seed);
            params.insert(b, Tensor::zeros(&[1, d]));
        }
        params
    }

    fn encode(&self, g: &mut Graph, p: &BoundParams, windows: &[Vec<u32>]) -> Result<NodeId> {
        let emb = p.node("enc.emb")?;
        let rows = g.value(emb).shape()[0];
        let d = g.value(emb).shape()[1];
        let wz = p.node("enc.gru.wz")?;
        let uz = p.node("enc.gru.uz")?;
        let bz = p.node("enc.gru.bz")?;
        let wr = p.node("enc.gru.wr")?;
        let ur = p.node("enc.gru.ur")?;
        let br = p.node("enc.gru.br")?;
        let wc = p.node("enc.gru.wc")?;
        let uc = p.node("enc.gru.uc")?;
        let bc = p.node("enc.gru.bc")?;
        let ones = g.constant(Tensor::new(vec![1, d], vec![1.0; d])?);

        let mut reprs = Vec::with_capacity(windows.len());
        for window in windows {
            let items = real_items(window, rows)?;
            let mut h = g.constant(Tensor::zeros(&[1, d]));
            for item in items {
                let x = g.gather(emb, &[item])?;
                let z = {
                    let a = g.matmul(x, wz)?;
                    let b = g.matmul(h, uz)?;
                    let s = g.add(a, b)?;
                    let s = g.add(s, bz)?;
                    g.sigmoid(s)?
                };
                let r = {
                    let a = g.matmul(x, wr)?;
                    let b = g.matmul(h, ur)?;
                    let s = g.add(a, b)?;
                    let s = g.add(s, br)?;
                    g.sigmoid(s)?
                };
                let c = {
                    let rh = g.mul(r, h)?;
                    let a = g.matmul(x, wc)?;
                    let b = g.matmul(rh, uc)?;
                    let s = g.add(a, b)?;
                    let s = g.add(s, bc)?;
                    g.tanh(s)?
                };
                let keep = g.sub(ones, z)?;
                let kept = g.mul(keep, h)?;
                let new = g.mul(z, c)?;
                h = g.add(kept, new)?;
            }
            reprs.push(h);
        }
        if reprs.len() == 1 {
            Ok(reprs[0])
        } else {
            g.concat(&reprs, 0)
        }
    }
}

// ── Attention encoder ───────────────────────────────────────────────

/// Single-block self-attention encoder. The last real item is the only
/// query; it attends over all real positions (itself included), so the
/// block is causal by construction and needs no mask. Position
/// embeddings are indexed right-aligned: the last real item always gets
/// row `window - 1`, whatever the amount of left padding.
///
/// Output: `u + tanh(u W1 + b1) W2 + b2` where
/// `u = x_last + softmax(q K^T / sqrt(d)) V`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionEncoder {
    pub dim: usize,
    /// Window length; sizes the position-embedding table.
    pub window: usize,
}

impl AttentionEncoder {
    /// Encode one window and also return the attention row `[1, m]`
    /// over its real positions. Test hook; `encode` delegates here.
    pub fn encode_window(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        window: &[u32],
    ) -> Result<(NodeId, NodeId)> {
        let emb = p.node("enc.emb")?;
        let rows = g.value(emb).shape()[0];
        let d = g.value(emb).shape()[1];
        let pos = p.node("enc.attn.pos")?;
        let pos_rows = g.value(pos).shape()[0];

        let items = real_items(window, rows)?;
        let m = items.len();
        if m > pos_rows {
            return Err(Error::Incompatible(format!(
                "window holds {m} items but the position table covers {pos_rows}"
            )));
        }
        let e = g.gather(emb, &items)?;
        // Right-aligned rows pos_rows-m .. pos_rows-1.
        let pos_idx: Vec<usize> = (pos_rows - m..pos_rows).collect();
        let pe = g.gather(pos, &pos_idx)?;
        let x = g.add(e, pe)?;

        let wq = p.node("enc.attn.wq")?;
        let wk = p.node("enc.attn.wk")?;
        let wv = p.node("enc.attn.wv")?;
        let x_last = g.gather(x, &[m - 1])?;
        let q = g.matmul(x_last, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scaled = g.scale(scores, 1.0 / (d as f64).sqrt())?;
        let attn = g.softmax_last(scaled)?;
        let ctx = g.matmul(attn, v)?;
        let u = g.add(x_last, ctx)?;

        let w1 = p.node("enc.attn.w1")?;
        let b1 = p.node("enc.attn.b1")?;
        let w2 = p.node("enc.attn.w2")?;
        let b2 = p.node("enc.attn.b2")?;
        let hidden = {
            let a = g.matmul(u, w1)?;
            let a = g.add(a, b1)?;
            g.tanh(a)?
        };
        let f = {
            let a = g.matmul(hidden, w2)?;
            g.add(a, b2)?
        };
        let out = g.add(u, f)?;
        Ok((out, attn))
    }
}

impl SequenceEncoder for AttentionEncoder {
    fn kind(&self) -> EncoderKind {
        EncoderKind::Attention
    }

    fn init_params(&self, vocab: u32, seed: u64) -> ParamSet {
        let d = self.dim;
        let mut params = ParamSet::new();
        insert_embedding(&mut params, vocab, d, seed);
        params.insert_uniform("enc.attn.pos", &[self.window, d], embedding_bound(d), seed);
        let bound = xavier_bound(d, d);
        for name in ["enc.attn.wq", "enc.attn.wk", "enc.attn.wv", "enc.attn.w1", "enc.attn.w2"] {
            params.insert_uniform(name, &[d, d], bound, seed);
        }
        params.insert("enc.attn.b1", Tensor::zeros(&[1, d]));
        params.insert("enc.attn.b2", Tensor::zeros(&[1, d]));
        params
    }

    fn encode(&self, g: &mut Graph, p: &BoundParams, windows: &[Vec<u32>]) -> Result<NodeId> {
        let mut reprs = Vec::with_capacity(windows.len());
        for window in windows {
            let (out, _) = self.encode_window(g, p, window)?;
            reprs.push(out);
        }
        if reprs.len() == 1 {
            Ok(reprs[0])
        } else {
            g.concat(&reprs, 0)
        }
    }
}

/// Dynamic encoder selection.
#[derive(Debug, Clone, Copy)]
pub enum Encoder {
    Recurrent(RecurrentEncoder),
    Attention(AttentionEncoder),
}

impl Encoder {
    pub fn new(kind: EncoderKind, dim: usize, window: usize) -> Encoder {
        match kind {
            EncoderKind::Recurrent => Encoder::Recurrent(RecurrentEncoder { dim }),
            EncoderKind::Attention => Encoder::Attention(AttentionEncoder { dim, window }),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Encoder::Recurrent(e) => e.dim,
            Encoder::Attention(e) => e.dim,
        }
    }
}

impl SequenceEncoder for Encoder {
    fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Recurrent(e) => e.kind(),
            Encoder::Attention(e) => e.kind(),
        }
    }

    fn init_params(&self, vocab: u32, seed: u64) -> ParamSet {
        match self {
            Encoder::Recurrent(e) => e.init_params(vocab, seed),
            Encoder::Attention(e) => e.init_params(vocab, seed),
        }
    }

    fn encode(&self, g: &mut Graph, p: &BoundParams, windows: &[Vec<u32>]) -> Result<NodeId> {
        match self {
            Encoder::Recurrent(e) => e.encode(g, p, windows),
            Encoder::Attention(e) => e.encode(g, p, windows),
        }
    }
}

// ── Scoring ─────────────────────────────────────────────────────────

/// Graph-path scores for specific items: `repr [1,d]` against gathered
/// embedding rows, giving `[1, items.len()]`. Gradients flow into both
/// the representation and the embedding table.
pub fn score_items(g: &mut Graph, emb: NodeId, repr: NodeId, items: &[u32]) -> Result<NodeId> {
    let rows = g.value(emb).shape()[0];
    let mut idx = Vec::with_capacity(items.len());
    for &item in items {
        if item == 0 || item as usize >= rows {
            return Err(Error::ItemOutOfRange { index: item, vocab: rows as u32 - 1 });
        }
        idx.push(item as usize);
    }
    let picked = g.gather(emb, &idx)?;
    let pt = g.transpose(picked)?;
    g.matmul(repr, pt)
}

/// Fast scoring path for evaluation: dot products of one representation
/// row against every real item row, no graph. `out[i]` is the score of
/// item `i + 1`.
pub fn score_all(emb: &Tensor, repr: &[f64]) -> Vec<f64> {
    let d = emb.shape()[1];
    debug_assert_eq!(repr.len(), d);
    let rows = emb.shape()[0];
    let mut out = Vec::with_capacity(rows - 1);
    for row in 1..rows {
        let base = row * d;
        let mut s = 0.0;
        for j in 0..d {
            s += emb.values()[base + j] * repr[j];
        }
        out.push(s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;

    fn tiny_recurrent_params(d: usize, vocab: u32, seed: u64) -> (RecurrentEncoder, ParamSet) {
        let enc = RecurrentEncoder { dim: d };
        (enc, enc.init_params(vocab, seed))
    }

    #[test]
    fn gru_two_steps_match_hand_computation() {
        let d = 2;
        let enc = RecurrentEncoder { dim: d };
        let mut params = ParamSet::new();
        // Small fixed weights so the hand computation below is exact.
        let emb = Tensor::matrix(
            3,
            d,
            vec![
                0.0, 0.0, // padding
                0.5, -0.3, // item 1
                -0.2, 0.8, // item 2
            ],
        )
        .unwrap();
        params.insert("enc.emb", emb);
        let w = |v: f64| Tensor::matrix(d, d, vec![v, 0.0, 0.0, v]).unwrap();
        params.insert("enc.gru.wz", w(0.4));
        params.insert("enc.gru.uz", w(0.1));
        params.insert("enc.gru.bz", Tensor::row(vec![0.05, -0.05]));
        params.insert("enc.gru.wr", w(-0.3));
        params.insert("enc.gru.ur", w(0.2));
        params.insert("enc.gru.br", Tensor::row(vec![0.0, 0.1]));
        params.insert("enc.gru.wc", w(0.7));
        params.insert("enc.gru.uc", w(-0.6));
        params.insert("enc.gru.bc", Tensor::row(vec![0.02, 0.0]));

        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params);
        let repr = enc.encode(&mut g, &bound, &[vec![0, 1, 2]]).unwrap();
        let got = g.value(repr).values().to_vec();

        // Independent scalar recomputation, diagonal weights so each
        // coordinate evolves separately.
        let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut h = [0.0f64; 2];
        let xs = [[0.5, -0.3], [-0.2, 0.8]];
        let (wz, uz, bz) = (0.4, 0.1, [0.05, -0.05]);
        let (wr, ur, br) = (-0.3, 0.2, [0.0, 0.1]);
        let (wc, uc, bc) = (0.7, -0.6, [0.02, 0.0]);
        for x in xs {
            let mut next = [0.0f64; 2];
            for j in 0..2 {
                let z = sigmoid(x[j] * wz + h[j] * uz + bz[j]);
                let r = sigmoid(x[j] * wr + h[j] * ur + br[j]);
                let c = (x[j] * wc + r * h[j] * uc + bc[j]).tanh();
                next[j] = (1.0 - z) * h[j] + z * c;
            }
            h = next;
        }
        for j in 0..2 {
            assert!((got[j] - h[j]).abs() < 1e-15, "coord {j}: {} vs {}", got[j], h[j]);
        }
    }

    #[test]
    fn gru_padding_prefix_is_identity() {
        let (enc, params) = tiny_recurrent_params(3, 10, 42);
        let encode = |windows: &[Vec<u32>]| {
            let mut g = Graph::new();
            let bound = BoundParams::bind(&mut g, &params);
            let repr = enc.encode(&mut g, &bound, windows).unwrap();
            g.value(repr).values().to_vec()
        };
        let short = encode(&[vec![0, 7, 3]]);
        let long = encode(&[vec![0, 0, 0, 0, 7, 3]]);
        assert_eq!(short, long);
    }

    #[test]
    fn gru_zero_weights_give_zero_state() {
        let enc = RecurrentEncoder { dim: 3 };
        let mut params = enc.init_params(5, 1);
        let flat = vec![0.0; params.numel()];
        params.assign_flat(&flat).unwrap();
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params);
        let repr = enc.encode(&mut g, &bound, &[vec![1, 2, 3]]).unwrap();
        assert_eq!(g.value(repr).values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn all_padding_window_is_rejected() {
        let (enc, params) = tiny_recurrent_params(2, 4, 0);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params);
        assert!(enc.encode(&mut g, &bound, &[vec![0, 0, 0]]).is_err());
    }

    #[test]
    fn out_of_vocab_item_is_rejected() {
        let (enc, params) = tiny_recurrent_params(2, 4, 0);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params);
        let err = enc.encode(&mut g, &bound, &[vec![0, 9]]).unwrap_err();
        assert!(matches!(err, Error::ItemOutOfRange { index: 9, vocab: 4 }));
    }

    #[test]
    fn attention_single_item_gets_weight_one() {
        let enc = AttentionEncoder { dim: 4, window: 5 };
        let params = enc.init_params(8, 3);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params);
        let (_, attn) = enc.encode_window(&mut g, &bound, &[0, 0, 0, 0, 6]).unwrap();
        assert_eq!(g.value(attn).shape(), &[1, 1]);
        assert!((g.value(attn).item() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn attention_identical_items_zero_positions_uniform() {
        let enc = AttentionEncoder { dim: 4, window: 3 };
        let mut params = enc.init_params(8, 3);
        // Zero the position table so repeated items are indistinguishable.
        let n = params.get("enc.attn.pos").unwrap().numel();
        let pos = params.get_mut("enc.attn.pos").unwrap();
        pos.values_mut().copy_from_slice(&vec![0.0; n]);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params);
        let (_, attn) = enc.encode_window(&mut g, &bound, &[5, 5, 5]).unwrap();
        for w in g.value(attn).values() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_positions_are_right_aligned() {
        // Zero everything except one distinctive position row; the last
        // real item must pick up row window-1 regardless of how many
        // real items precede it.
        let enc = AttentionEncoder { dim: 2, window: 4 };
        let mut params = enc.init_params(6, 9);
        let flat = vec![0.0; params.numel()];
        params.assign_flat(&flat).unwrap();
        {
            let pos = params.get_mut("enc.attn.pos").unwrap();
            // Row 3 (last) distinctive.
            pos.values_mut()[6] = 1.5;
            pos.values_mut()[7] = -2.5;
        }
        let encode = |window: &[u32]| {
            let mut g = Graph::new();
            let bound = BoundParams::bind(&mut g, &params);
            let (out, _) = enc.encode_window(&mut g, &bound, window).unwrap();
            g.value(out).values().to_vec()
        };
        let one_item = encode(&[0, 0, 0, 2]);
        let three_items = encode(&[0, 1, 3, 2]);
        // All weights zero, so output = x_last = pos[window-1] in both.
        assert_eq!(one_item, vec![1.5, -2.5]);
        assert_eq!(one_item, three_items);
    }

    #[test]
    fn attention_rejects_window_longer_than_position_table() {
        let enc = AttentionEncoder { dim: 2, window: 2 };
        let params = enc.init_params(6, 0);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params);
        assert!(enc.encode_window(&mut g, &bound, &[1, 2, 3]).is_err());
    }

    #[test]
    fn gradcheck_through_recurrent_encoder() {
        let (enc, params) = tiny_recurrent_params(3, 5, 11);
        let windows = vec![vec![0, 2, 4], vec![1, 3, 5]];
        let max_rel = gradcheck(
            &params,
            |g, b| {
                let repr = enc.encode(g, b, &windows)?;
                let emb = b.node("enc.emb")?;
                let first = g.gather(repr, &[0])?;
                let scores = score_items(g, emb, first, &[1, 4])?;
                let sig = g.sigmoid(scores)?;
                g.mean_all(sig)
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(max_rel < 1e-6);
    }

    #[test]
    fn gradcheck_through_attention_encoder() {
        let enc = AttentionEncoder { dim: 3, window: 4 };
        let params = enc.init_params(5, 17);
        let windows = vec![vec![0, 2, 4, 1]];
        let max_rel = gradcheck(
            &params,
            |g, b| {
                let repr = enc.encode(g, b, &windows)?;
                let emb = b.node("enc.emb")?;
                let scores = score_items(g, emb, repr, &[3, 5])?;
                let sig = g.sigmoid(scores)?;
                g.mean_all(sig)
            },
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(max_rel < 1e-6);
    }

    #[test]
    fn score_paths_agree() {
        let enc = RecurrentEncoder { dim: 4 };
        let params = enc.init_params(12, 77);
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &params);
        let repr = enc.encode(&mut g, &bound, &[vec![3, 9, 1]]).unwrap();
        let emb_node = bound.node("enc.emb").unwrap();
        let items: Vec<u32> = (1..=12).collect();
        let graph_scores = score_items(&mut g, emb_node, repr, &items).unwrap();
        let fast = score_all(params.get("enc.emb").unwrap(), g.value(repr).values());
        assert_eq!(fast.len(), 12);
        for (a, b) in g.value(graph_scores).values().iter().zip(&fast) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kind_inference_from_params() {
        let rec = RecurrentEncoder { dim: 2 }.init_params(3, 0);
        let att = AttentionEncoder { dim: 2, window: 3 }.init_params(3, 0);
        assert_eq!(EncoderKind::infer(&rec).unwrap(), EncoderKind::Recurrent);
        assert_eq!(EncoderKind::infer(&att).unwrap(), EncoderKind::Attention);
        assert!(EncoderKind::infer(&ParamSet::new()).is_err());
    }
}
