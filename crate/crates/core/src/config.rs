//! Model hyperparameters and the `key=value` text format shared by config
//! files and checkpoint headers.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses `key=value` lines. Blank lines and `#` comments are skipped;
/// whitespace around keys and values is trimmed.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: k + 1,
            msg: format!("expected key=value, found `{line}`"),
        })?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub fn render_kv(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub(crate) fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

/// Escapes backslash, newline and tab so arbitrary text fits one line.
pub fn escape_line(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_line(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match it.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            other => return Err(Error::Config(format!("bad escape `\\{}`", other.map_or(String::new(), String::from)))),
        }
    }
    Ok(out)
}

/// Every architectural and objective hyperparameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Number of real dependency labels `L`.
    pub num_labels: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub graph_heads: usize,
    pub enc_layers: usize,
    pub graph_layers: usize,
    pub dec_layers: usize,
    /// Weight of the sentence-encoder states in the blended encoder output.
    pub beta: f64,
    pub lambda_rel: f64,
    pub lambda_dist: f64,
    pub lambda_anc: f64,
    pub dropout: f64,
    pub beam: usize,
    pub max_distance: usize,
    /// Overlap sizes up to this use every ordered pair; above it pairs are sampled.
    pub pair_cap: usize,
    pub pairs_per_node: usize,
    /// One hidden MLP for all three tree heads instead of one per head.
    pub shared_tree_mlp: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8000,
            num_labels: 40,
            d_model: 512,
            d_ff: 2048,
            heads: 8,
            graph_heads: 4,
            enc_layers: 6,
            graph_layers: 3,
            dec_layers: 6,
            beta: 0.5,
            lambda_rel: 0.5,
            lambda_dist: 0.1,
            lambda_anc: 0.1,
            dropout: 0.1,
            beam: 5,
            max_distance: crate::deptree::DEFAULT_MAX_DISTANCE,
            pair_cap: 20,
            pairs_per_node: 20,
            shared_tree_mlp: true,
        }
    }
}

macro_rules! kv_fields {
    ($($field:ident),* $(,)?) => {
        impl ModelConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn to_pairs(&self) -> Vec<(String, String)> {
                vec![$((stringify!($field).to_string(), fmt_value(&self.$field))),*]
            }

            /// Sets one field; returns `Ok(false)` for a key this type does not own.
            pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
                match key {
                    $(stringify!($field) => self.$field = parse_value(key, value)?,)*
                    _ => return Ok(false),
                }
                Ok(true)
            }
        }
    };
}

fn fmt_value<V: Display>(v: &V) -> String {
    v.to_string()
}

kv_fields!(
    vocab_size,
    num_labels,
    d_model,
    d_ff,
    heads,
    graph_heads,
    enc_layers,
    graph_layers,
    dec_layers,
    beta,
    lambda_rel,
    lambda_dist,
    lambda_anc,
    dropout,
    beam,
    max_distance,
    pair_cap,
    pairs_per_node,
    shared_tree_mlp,
);

impl ModelConfig {
    /// Small architecture for desk-scale runs. `vocab_size` is the BPE
    /// target; the label count is filled in from the data.
    pub fn toy() -> Self {
        Self {
            vocab_size: 8000,
            num_labels: 0,
            d_model: 32,
            d_ff: 64,
            heads: 4,
            graph_heads: 2,
            enc_layers: 2,
            graph_layers: 1,
            dec_layers: 2,
            dropout: 0.0,
            ..Self::default()
        }
    }

    /// Builds a config from pairs, rejecting unknown keys.
    pub fn from_pairs(base: Self, pairs: &[(String, String)]) -> Result<Self> {
        let mut c = base;
        for (k, v) in pairs {
            if !c.set(k, v)? {
                return Err(Error::Config(format!("unknown config key `{k}`")));
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Whether the syntax-guided encoder contributes to the encoder output.
    pub fn uses_graph_encoder(&self) -> bool {
        self.beta < 1.0 && self.graph_layers > 0
    }

    pub fn uses_tree_heads(&self) -> bool {
        self.lambda_rel > 0.0 || self.lambda_dist > 0.0 || self.lambda_anc > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.d_ff == 0 {
            return bad("d_model and d_ff must be positive".into());
        }
        for (name, h) in [("heads", self.heads), ("graph_heads", self.graph_heads)] {
            if h == 0 || self.d_model % h != 0 {
                return bad(format!("d_model {} is not divisible by {name}={h}", self.d_model));
            }
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta {} outside [0, 1]", self.beta));
        }
        for (name, l) in [
            ("lambda_rel", self.lambda_rel),
            ("lambda_dist", self.lambda_dist),
            ("lambda_anc", self.lambda_anc),
        ] {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.beam == 0 || self.max_distance == 0 {
            return bad("beam and max_distance must be positive".into());
        }
        Ok(())
    }
}
