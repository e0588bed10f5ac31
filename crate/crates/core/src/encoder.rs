//! Sub-word sentence encoder, word-level graph attention over the source
//! dependency tree, and the blend of the two.

use crate::deptree::{Direction, NeighborRelations};
use crate::error::{Error, Result};
use crate::nn::Forward;
use crate::numerics::{Real, Tensor, Var};
use crate::tokenizer::WordSpans;

/// Stack of post-norm self-attention layers over token embeddings plus
/// positions. Returns `[N_sub, d_model]`.
pub fn sentence_encode<T: Real>(f: &mut Forward<'_, T>, ids: &[usize]) -> Result<Var> {
    if ids.is_empty() {
        return Err(Error::Empty("source sequence"));
    }
    let mut x = f.embed(ids)?;
    for l in 0..f.cfg.enc_layers {
        let p = format!("encoder.layer{l}");
        let a = f.attention(x, x, &format!("{p}.self"), None)?;
        x = f.residual_norm(x, a, &format!("{p}.ln1"))?;
        let h = f.ffn(x, &p)?;
        x = f.residual_norm(x, h, &format!("{p}.ln2"))?;
    }
    Ok(x)
}

/// `[words, n_rows]` matrix averaging each word's span rows.
pub fn pooling_matrix<T: Real>(spans: &WordSpans, n_rows: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); spans.len() * n_rows];
    for (w, &(s, e)) in spans.iter().enumerate() {
        if s >= e || e > n_rows {
            return Err(Error::OutOfRange(format!("span {s}..{e} over {n_rows} rows")));
        }
        let inv = T::of(1.0 / (e - s) as f64);
        for r in s..e {
            data[w * n_rows + r] = inv;
        }
    }
    Tensor::new(vec![spans.len(), n_rows], data)
}

/// Word states as the mean of each word's sub-word rows of `h`.
pub fn word_pool<T: Real>(f: &mut Forward<'_, T>, h: Var, spans: &WordSpans) -> Result<Var> {
    let n = f.g.shape(h)[0];
    let pool = f.constant(pooling_matrix(spans, n)?);
    f.g.matmul(pool, h)
}

/// Relation rows of one layer, flattened: row `e` belongs to node `owners[e]`.
pub struct RelationRows {
    pub u: Var,
    pub owners: Vec<usize>,
}

/// `ReLU([h_head ‖ e_label ‖ h_dep] · W + b)` for every neighbor relation,
/// with separate weights for outgoing and incoming relations. Relation
/// rows are ordered outgoing first, then incoming.
pub fn relation_representations<T: Real>(
    f: &mut Forward<'_, T>,
    hw: Var,
    nr: &NeighborRelations,
    layer: usize,
) -> Result<RelationRows> {
    let table = f.p("graph.relations")?;
    let rows = f.g.shape(table)[0];
    let mut parts = Vec::with_capacity(2);
    let mut owners = Vec::with_capacity(nr.total());
    for (dir, name) in [(Direction::Out, "rel_out"), (Direction::In, "rel_in")] {
        let (mut heads, mut deps, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for (owner, list) in nr.iter().enumerate() {
            for nb in list.iter().filter(|nb| nb.direction == dir) {
                if nb.label >= rows {
                    return Err(Error::UnknownRelationId(nb.label));
                }
                let (h, d, l) = nb.triple(owner);
                heads.push(h);
                deps.push(d);
                labels.push(l);
                owners.push(owner);
            }
        }
        if heads.is_empty() {
            continue;
        }
        let hh = f.g.gather_rows(hw, &heads)?;
        let er = f.g.embedding_lookup(table, &labels)?;
        let hd = f.g.gather_rows(hw, &deps)?;
        let cat = f.g.concat_cols(&[hh, er, hd])?;
        let y = f.linear(cat, &format!("graph.layer{layer}.{name}"))?;
        parts.push(f.g.relu(y));
    }
    let u = match parts.len() {
        0 => return Err(Error::Empty("neighbor relations")),
        1 => parts[0],
        _ => f.g.concat_rows(&parts)?,
    };
    Ok(RelationRows { u, owners })
}

/// Intermediate values of one graph-attention layer.
pub struct GraphLayer {
    /// Layer output `[words, d_model]`.
    pub out: Var,
    pub relations: RelationRows,
    /// Per head: attention weight of each relation row, `[E]`.
    pub alphas: Vec<Var>,
    /// Per head: aggregated values before the output projection, `[words, d_k]`.
    pub aggregates: Vec<Var>,
}

/// Multi-head attention of each node over exactly its own neighbor
/// relations, followed by residual, norm, feed-forward, residual, norm.
/// Scores are raw dot products of projected relation rows and node states.
pub fn graph_attention_layer<T: Real>(
    f: &mut Forward<'_, T>,
    hw: Var,
    nr: &NeighborRelations,
    layer: usize,
) -> Result<GraphLayer> {
    let words = f.g.shape(hw)[0];
    if nr.len() != words {
        return Err(Error::Mismatch(format!("{} tree nodes for {words} word states", nr.len())));
    }
    let p = format!("graph.layer{layer}");
    let rel = relation_representations(f, hw, nr, layer)?;
    let wq = f.p(&format!("{p}.wq"))?;
    let wk = f.p(&format!("{p}.wk"))?;
    let wv = f.p(&format!("{p}.wv"))?;
    let q = f.g.matmul(hw, wq)?;
    let k = f.g.matmul(rel.u, wk)?;
    let v = f.g.matmul(rel.u, wv)?;
    let heads = f.cfg.graph_heads;
    let dk = f.cfg.d_model / heads;
    let (mut alphas, mut aggregates) = (Vec::with_capacity(heads), Vec::with_capacity(heads));
    for t in 0..heads {
        let (a, b) = (t * dk, (t + 1) * dk);
        let qt = f.g.slice_cols(q, a, b)?;
        let kt = f.g.slice_cols(k, a, b)?;
        let vt = f.g.slice_cols(v, a, b)?;
        let q_owner = f.g.gather_rows(qt, &rel.owners)?;
        let scores = f.g.row_dot(q_owner, kt)?;
        let alpha = f.g.segment_softmax(scores, &rel.owners)?;
        let weighted = f.g.mul_col(vt, alpha)?;
        aggregates.push(f.g.scatter_add_rows(weighted, &rel.owners, words)?);
        alphas.push(alpha);
    }
    let cat = if heads == 1 { aggregates[0] } else { f.g.concat_cols(&aggregates)? };
    let wo = f.p(&format!("{p}.wo"))?;
    let star = f.g.matmul(cat, wo)?;
    let x = f.residual_norm(hw, star, &format!("{p}.ln1"))?;
    let h = f.ffn(x, &p)?;
    let out = f.residual_norm(x, h, &format!("{p}.ln2"))?;
    Ok(GraphLayer {
        out,
        relations: rel,
        alphas,
        aggregates,
    })
}

/// `o_i = β·h_i + (1 − β)·ĥ_word(i)`, where each word row is broadcast over
/// its span; rows outside every span (BOS, EOS) keep `h_i`.
pub fn dual_aggregate<T: Real>(f: &mut Forward<'_, T>, h: Var, hw: Var, spans: &WordSpans, beta: f64) -> Result<Var> {
    let n = f.g.shape(h)[0];
    let words = spans.len();
    let mut spread = vec![T::zero(); n * words];
    let mut coef = vec![T::one(); n];
    for (w, &(s, e)) in spans.iter().enumerate() {
        if s >= e || e > n {
            return Err(Error::OutOfRange(format!("span {s}..{e} over {n} rows")));
        }
        for r in s..e {
            spread[r * words + w] = T::one();
            coef[r] = T::of(beta);
        }
    }
    let spread = f.constant(Tensor::new(vec![n, words], spread)?);
    let coef = f.constant(Tensor::new(vec![n], coef)?);
    let broadcast = f.g.matmul(spread, hw)?;
    let broadcast = f.g.scale(broadcast, T::of(1.0 - beta));
    let kept = f.g.mul_col(h, coef)?;
    f.g.add(kept, broadcast)
}

/// Everything the decoder and tests need from one source sentence.
pub struct EncoderOutput {
    /// Sentence-encoder states `[N_sub, d]`.
    pub h: Var,
    /// Syntax-guided word states `[N_word, d]`, absent when the graph
    /// encoder is disabled.
    pub words: Option<Var>,
    /// Blended output `[N_sub, d]` attended by the decoder.
    pub o: Var,
}

/// Full encoder. `relations` may be `None` only when the configuration
/// disables the graph encoder.
pub fn encode<T: Real>(
    f: &mut Forward<'_, T>,
    ids: &[usize],
    spans: &WordSpans,
    relations: Option<&NeighborRelations>,
) -> Result<EncoderOutput> {
    let h = sentence_encode(f, ids)?;
    if !f.cfg.uses_graph_encoder() {
        return Ok(EncoderOutput { h, words: None, o: h });
    }
    let nr = relations.ok_or_else(|| Error::Config("the graph encoder needs a source dependency tree".into()))?;
    let mut hw = word_pool(f, h, spans)?;
    for l in 0..f.cfg.graph_layers {
        hw = graph_attention_layer(f, hw, nr, l)?.out;
    }
    let beta = f.cfg.beta;
    let o = dual_aggregate(f, h, hw, spans, beta)?;
    Ok(EncoderOutput { h, words: Some(hw), o })
}
