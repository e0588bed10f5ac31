//! Transformer decoder and the gated generate/copy output distribution.

use crate::error::{Error, Result};
use crate::nn::{causal_mask, Forward};
use crate::numerics::{Real, Tensor, Var};

/// Decoder states for a target prefix (starting with BOS), attending
/// causally to itself and fully to the encoder output `o`.
pub fn decode_states<T: Real>(f: &mut Forward<'_, T>, prefix: &[usize], o: Var) -> Result<Var> {
    if prefix.is_empty() {
        return Err(Error::Empty("target prefix"));
    }
    let mask = causal_mask(prefix.len());
    let mut x = f.embed(prefix)?;
    for l in 0..f.cfg.dec_layers {
        let p = format!("decoder.layer{l}");
        let a = f.attention(x, x, &format!("{p}.self"), Some(&mask))?;
        x = f.residual_norm(x, a, &format!("{p}.ln1"))?;
        let c = f.attention(x, o, &format!("{p}.cross"), None)?;
        x = f.residual_norm(x, c, &format!("{p}.ln2"))?;
        let h = f.ffn(x, &p)?;
        x = f.residual_norm(x, h, &format!("{p}.ln3"))?;
    }
    Ok(x)
}

pub fn generation_logits<T: Real>(f: &mut Forward<'_, T>, states: Var) -> Result<Var> {
    f.linear(states, "decoder.out")
}

/// Softmax over the vocabulary of the output projection.
pub fn generation_distribution<T: Real>(f: &mut Forward<'_, T>, states: Var) -> Result<Var> {
    let logits = generation_logits(f, states)?;
    f.g.softmax(logits, None)
}

/// Single-head scaled dot-product weights of decoder rows over encoder
/// rows, `[M, N_src]`.
pub fn copy_attention<T: Real>(f: &mut Forward<'_, T>, states: Var, o: Var) -> Result<Var> {
    let wq = f.p("copy.wq")?;
    let wk = f.p("copy.wk")?;
    let q = f.g.matmul(states, wq)?;
    let k = f.g.matmul(o, wk)?;
    let kt = f.g.transpose(k)?;
    let s = f.g.matmul(q, kt)?;
    let s = f.g.scale(s, T::of(1.0 / (f.cfg.d_model as f64).sqrt()));
    f.g.softmax(s, None)
}

/// `[N_src, V]` indicator of each source position's token id.
pub fn source_one_hot<T: Real>(src_ids: &[usize], vocab: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); src_ids.len() * vocab];
    for (r, &id) in src_ids.iter().enumerate() {
        if id >= vocab {
            return Err(Error::OutOfRange(format!("token id {id} with vocabulary {vocab}")));
        }
        data[r * vocab + id] = T::one();
    }
    Tensor::new(vec![src_ids.len(), vocab], data)
}

/// Copy weights summed per vocabulary id.
pub fn scatter_to_vocab<T: Real>(f: &mut Forward<'_, T>, attn: Var, src_ids: &[usize]) -> Result<Var> {
    let onehot = f.constant(source_one_hot(src_ids, f.cfg.vocab_size)?);
    f.g.matmul(attn, onehot)
}

pub fn copy_distribution<T: Real>(f: &mut Forward<'_, T>, states: Var, o: Var, src_ids: &[usize]) -> Result<Var> {
    let a = copy_attention(f, states, o)?;
    scatter_to_vocab(f, a, src_ids)
}

/// Generation probability `η = sigmoid(w·h + b)`, shape `[M, 1]`.
pub fn gate<T: Real>(f: &mut Forward<'_, T>, states: Var) -> Result<Var> {
    let z = f.linear(states, "copy.gate")?;
    Ok(f.g.sigmoid(z))
}

/// Row-wise `η·p_gen + (1 − η)·p_copy`.
pub fn mix<T: Real>(f: &mut Forward<'_, T>, p_gen: Var, p_copy: Var, eta: Var) -> Result<Var> {
    let neg = f.g.scale(eta, -T::one());
    let rest = f.g.add_scalar(neg, T::one());
    let a = f.g.mul_col(p_gen, eta)?;
    let b = f.g.mul_col(p_copy, rest)?;
    f.g.add(a, b)
}

pub struct DecoderOutput {
    pub states: Var,
    pub p_gen: Var,
    pub p_copy: Var,
    pub eta: Var,
    pub p: Var,
}

/// Decoder states and every output distribution for `prefix`.
pub fn decode<T: Real>(f: &mut Forward<'_, T>, prefix: &[usize], o: Var, src_ids: &[usize]) -> Result<DecoderOutput> {
    if f.g.shape(o)[0] != src_ids.len() {
        return Err(Error::Mismatch(format!(
            "{} encoder rows for {} source ids",
            f.g.shape(o)[0],
            src_ids.len()
        )));
    }
    let states = decode_states(f, prefix, o)?;
    let p_gen = generation_distribution(f, states)?;
    let p_copy = copy_distribution(f, states, o, src_ids)?;
    let eta = gate(f, states)?;
    let p = mix(f, p_gen, p_copy, eta)?;
    Ok(DecoderOutput {
        states,
        p_gen,
        p_copy,
        eta,
        p,
    })
}
