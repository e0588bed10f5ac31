//! Parameter layout, initialization and the layer building blocks shared by
//! the encoder, decoder and tree heads.

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::Result;
use crate::numerics::{seeded_rng, Graph, Parameters, Real, SeededRng, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Xavier,
    Embedding,
    Zeros,
    Ones,
}

fn attention_block(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, d: usize) {
    for m in ["q", "k", "v", "o"] {
        out.push((format!("{prefix}.w{m}"), vec![d, d], Init::Xavier));
        out.push((format!("{prefix}.b{m}"), vec![d], Init::Zeros));
    }
}

fn norm(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, d: usize) {
    out.push((format!("{prefix}.gamma"), vec![d], Init::Ones));
    out.push((format!("{prefix}.beta"), vec![d], Init::Zeros));
}

fn linear(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, i: usize, o: usize) {
    out.push((format!("{prefix}.w"), vec![i, o], Init::Xavier));
    out.push((format!("{prefix}.b"), vec![o], Init::Zeros));
}

fn ffn(out: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, d: usize, dff: usize) {
    linear(out, &format!("{prefix}.ffn1"), d, dff);
    linear(out, &format!("{prefix}.ffn2"), dff, d);
}

/// Names of the tree-head hidden MLPs, one per task unless shared.
pub fn tree_mlp_prefix(cfg: &ModelConfig, task: &str) -> String {
    if cfg.shared_tree_mlp {
        "tree.mlp".to_string()
    } else {
        format!("tree.{task}.mlp")
    }
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, dff) = (cfg.d_model, cfg.d_ff);
    let mut out = vec![("embed.tokens".to_string(), vec![cfg.vocab_size, d], Init::Embedding)];
    for l in 0..cfg.enc_layers {
        let p = format!("encoder.layer{l}");
        attention_block(&mut out, &format!("{p}.self"), d);
        norm(&mut out, &format!("{p}.ln1"), d);
        ffn(&mut out, &p, d, dff);
        norm(&mut out, &format!("{p}.ln2"), d);
    }
    out.push(("graph.relations".to_string(), vec![cfg.num_labels + 2, d], Init::Embedding));
    for l in 0..cfg.graph_layers {
        let p = format!("graph.layer{l}");
        linear(&mut out, &format!("{p}.rel_out"), 3 * d, d);
        linear(&mut out, &format!("{p}.rel_in"), 3 * d, d);
        for m in ["wq", "wk", "wv", "wo"] {
            out.push((format!("{p}.{m}"), vec![d, d], Init::Xavier));
        }
        norm(&mut out, &format!("{p}.ln1"), d);
        ffn(&mut out, &p, d, dff);
        norm(&mut out, &format!("{p}.ln2"), d);
    }
    for l in 0..cfg.dec_layers {
        let p = format!("decoder.layer{l}");
        attention_block(&mut out, &format!("{p}.self"), d);
        norm(&mut out, &format!("{p}.ln1"), d);
        attention_block(&mut out, &format!("{p}.cross"), d);
        norm(&mut out, &format!("{p}.ln2"), d);
        ffn(&mut out, &p, d, dff);
        norm(&mut out, &format!("{p}.ln3"), d);
    }
    linear(&mut out, "decoder.out", d, cfg.vocab_size);
    out.push(("copy.wq".to_string(), vec![d, d], Init::Xavier));
    out.push(("copy.wk".to_string(), vec![d, d], Init::Xavier));
    linear(&mut out, "copy.gate", d, 1);
    let mlps: Vec<String> = if cfg.shared_tree_mlp {
        vec!["tree.mlp".into()]
    } else {
        ["rel", "dist", "anc"].iter().map(|t| format!("tree.{t}.mlp")).collect()
    };
    for m in mlps {
        linear(&mut out, &format!("{m}.l1"), 2 * d, d);
        linear(&mut out, &format!("{m}.l2"), d, d);
    }
    linear(&mut out, "tree.rel", d, cfg.num_labels + 1);
    linear(&mut out, "tree.dist", d, cfg.max_distance + 1);
    linear(&mut out, "tree.anc", d, crate::deptree::Ancestry::CLASSES);
    out
}

/// Every parameter name and shape for `cfg`, in layout order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    layout(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
}

/// Xavier-uniform matrices, zero biases, unit norm gains, unit-variance
/// uniform embeddings.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<Parameters<T>> {
    let mut rng = seeded_rng(seed);
    let mut params = Parameters::new();
    for (name, shape, init) in layout(cfg) {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Xavier => {
                let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..n).map(|_| T::of(rng.gen_range(-a..a))).collect()
            }
            Init::Embedding => {
                let a = 3f64.sqrt();
                (0..n).map(|_| T::of(rng.gen_range(-a..a))).collect()
            }
        };
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(params)
}

/// Sinusoidal position encodings for positions `0..n`.
pub fn positions<T: Real>(n: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(n * d);
    for pos in 0..n {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data.push(T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::new(vec![n, d], data).expect("consistent shape")
}

/// One forward computation: the graph being built, the parameters it reads,
/// and the dropout state.
pub struct Forward<'p, T: Real> {
    pub g: Graph<T>,
    pub params: &'p Parameters<T>,
    pub cfg: &'p ModelConfig,
    pub mode: Mode,
    pub rng: SeededRng,
}

impl<'p, T: Real> Forward<'p, T> {
    pub fn new(params: &'p Parameters<T>, cfg: &'p ModelConfig, mode: Mode, rng: SeededRng) -> Self {
        Self {
            g: Graph::new(),
            params,
            cfg,
            mode,
            rng,
        }
    }

    /// Evaluation-mode pass; the generator is never drawn from.
    pub fn eval(params: &'p Parameters<T>, cfg: &'p ModelConfig) -> Self {
        Self::new(params, cfg, Mode::Eval, seeded_rng(0))
    }

    pub fn p(&mut self, name: &str) -> Result<Var> {
        self.g.param(self.params, name)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.g.constant(t)
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let train = self.mode == Mode::Train;
        self.g.dropout(x, self.cfg.dropout, train, &mut self.rng)
    }

    /// `x · {prefix}.w + {prefix}.b`.
    pub fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        let y = self.g.matmul(x, w)?;
        self.g.add_row(y, b)
    }

    pub fn layer_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.p(&format!("{prefix}.gamma"))?;
        let beta = self.p(&format!("{prefix}.beta"))?;
        self.g.layer_norm(x, gamma, beta)
    }

    /// `LayerNorm(x + dropout(y))`.
    pub fn residual_norm(&mut self, x: Var, y: Var, prefix: &str) -> Result<Var> {
        let y = self.dropout(y)?;
        let s = self.g.add(x, y)?;
        self.layer_norm(s, prefix)
    }

    /// Position-wise ReLU feed-forward network.
    pub fn ffn(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(x, &format!("{prefix}.ffn1"))?;
        let h = self.g.relu(h);
        let h = self.dropout(h)?;
        self.linear(h, &format!("{prefix}.ffn2"))
    }

    fn proj(&mut self, x: Var, prefix: &str, m: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w{m}"))?;
        let b = self.p(&format!("{prefix}.b{m}"))?;
        let y = self.g.matmul(x, w)?;
        self.g.add_row(y, b)
    }

    /// Scaled dot-product multi-head attention of `q_in` rows over `kv_in`
    /// rows. `mask` is row-major `[q_rows * kv_rows]`, `true` = visible.
    pub fn attention(&mut self, q_in: Var, kv_in: Var, prefix: &str, mask: Option<&[bool]>) -> Result<Var> {
        let heads = self.cfg.heads;
        let dk = self.cfg.d_model / heads;
        let q = self.proj(q_in, prefix, "q")?;
        let k = self.proj(kv_in, prefix, "k")?;
        let v = self.proj(kv_in, prefix, "v")?;
        let scale = T::of(1.0 / (dk as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (a, b) = (h * dk, (h + 1) * dk);
            let qh = self.g.slice_cols(q, a, b)?;
            let kh = self.g.slice_cols(k, a, b)?;
            let vh = self.g.slice_cols(v, a, b)?;
            let kt = self.g.transpose(kh)?;
            let s = self.g.matmul(qh, kt)?;
            let s = self.g.scale(s, scale);
            let w = self.g.softmax(s, mask)?;
            let w = self.dropout(w)?;
            outs.push(self.g.matmul(w, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { self.g.concat_cols(&outs)? };
        self.proj(cat, prefix, "o")
    }

    /// Token embeddings plus sinusoidal positions.
    pub fn embed(&mut self, ids: &[usize]) -> Result<Var> {
        let table = self.p("embed.tokens")?;
        let e = self.g.embedding_lookup(table, ids)?;
        let pe = self.constant(positions(ids.len(), self.cfg.d_model));
        let x = self.g.add(e, pe)?;
        self.dropout(x)
    }
}

/// Lower-triangular visibility mask for self-attention over `n` positions.
pub fn causal_mask(n: usize) -> Vec<bool> {
    (0..n * n).map(|k| k % n <= k / n).collect()
}
