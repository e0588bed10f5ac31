use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use sggec::deptree::{pair_targets, parse_conllu, DepTree, RelationVocab};
use sggec::evaluation::evaluate;
use sggec::inference::{beam_search, nbest_line, r2l_rerank, Candidate, Ensemble, StepModel, Translator};
use sggec::model::Model;
use sggec::numerics::{seeded_rng, AdamConfig};
use sggec::training::{
    encode_corpus, load_training, read_corpus, relation_vocab, run_stages, save_training, split_words, synth_corpus,
    train_tokenizer, write_corpus, Corruption, Example, LogRecord, StagePlan, TrainObserver, TrainOptions, TrainState,
};

use crate::run_config::{parse_data, RunConfig};
use crate::{CorrectArgs, EvalArgs, GenDataArgs, TrainArgs, TreeTargetsArgs, Usage};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn lines(path: &Path) -> Result<Vec<String>> {
    Ok(read(path)?.lines().map(String::from).collect())
}

/// A writer on `path`, or standard output.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let corruption = Corruption::parse(&a.corruption_profile).map_err(|e| Usage(e.to_string()))?;
    if a.count == 0 {
        bail!(Usage("--count must be at least 1".into()));
    }
    let mut rng = seeded_rng(a.seed);
    let examples: Vec<Example> = synth_corpus(&corruption, &mut rng, a.count)?
        .into_iter()
        .map(Example::from)
        .collect();
    write_corpus(&a.out, &examples, &relation_vocab())
        .with_context(|| format!("writing corpus {}", a.out.display()))?;
    let changed = examples.iter().filter(|e| e.has_error()).count();
    eprintln!("wrote {} pairs ({changed} with errors) to {}.*", a.count, a.out.display());
    Ok(())
}

fn run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::preset(&a.preset)?;
    if let Some(path) = &a.config {
        cfg = RunConfig::load(path, cfg)?;
    }
    for d in &a.data {
        cfg.data.push(parse_data(d)?);
    }
    if !a.stages.is_empty() {
        cfg.stages = a.stages.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(m) = a.max_steps {
        cfg.max_steps = Some(m);
    }
    if let Some(b) = a.batch_tokens {
        cfg.batch_tokens = b;
    }
    cfg.reverse |= a.reverse;
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Usage(format!("--set `{kv}` is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.model.validate().map_err(|e| Usage(e.to_string()))?;
    Ok(cfg)
}

struct Progress {
    log: Box<dyn Write>,
    checkpoint: PathBuf,
}

impl TrainObserver for Progress {
    fn on_step(&mut self, r: &LogRecord) -> sggec::Result<()> {
        writeln!(self.log, "{r}")?;
        Ok(())
    }

    fn on_epoch_end(&mut self, model: &Model, state: &TrainState, mean_loss: f64) -> sggec::Result<()> {
        self.log.flush()?;
        save_training(&self.checkpoint, model, state)?;
        eprintln!(
            "stage {} epoch {} done: step {} mean loss {mean_loss:.6}",
            state.stage, state.epoch, state.step
        );
        Ok(())
    }
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let run = run_config(a)?;
    if run.data.is_empty() {
        bail!(Usage("no training data: pass --data NAME=PREFIX".into()));
    }
    let plan = StagePlan::parse(&run.stages).map_err(|e| Usage(e.to_string()))?;
    let needs_trees = run.model.uses_graph_encoder() || run.model.uses_tree_heads();

    let (mut model, state, mut relations) = match &a.resume {
        Some(path) => {
            let (model, state) = load_training(path)?;
            let state = state.ok_or_else(|| Usage(format!("{} holds no training state", path.display())))?;
            let relations = model.relations.clone();
            (Some(model), Some(state), relations)
        }
        None => (None, None, RelationVocab::new()),
    };
    let mut corpora: BTreeMap<String, Vec<Example>> = BTreeMap::new();
    for (name, prefix) in &run.data {
        let ex = read_corpus(prefix, &mut relations, needs_trees)
            .with_context(|| format!("reading corpus `{name}` at {}", prefix.display()))?;
        if corpora.insert(name.clone(), ex).is_some() {
            bail!(Usage(format!("dataset `{name}` given twice")));
        }
    }
    relations.freeze();
    let mut model = match model.take() {
        Some(m) => m,
        None => {
            let all: Vec<Example> = corpora.values().flatten().cloned().collect();
            let bpe = train_tokenizer(&all, run.model.vocab_size)?;
            let mut m = Model::new(run.model.clone(), bpe, relations, run.seed)?;
            m.reversed = run.reverse;
            m
        }
    };
    let mut state = state.unwrap_or_else(|| TrainState::new(run.seed, AdamConfig::default()));
    let mut datasets = BTreeMap::new();
    for (name, ex) in &corpora {
        let enc = encode_corpus(ex, &model.bpe, &model.relations, model.cfg.max_distance, model.reversed)?;
        datasets.insert(name.clone(), enc);
    }
    eprintln!(
        "training {} parameters, vocabulary {}, {} relation labels, direction {}",
        model.params.num_scalars(),
        model.cfg.vocab_size,
        model.relations.len(),
        if model.reversed { "r2l" } else { "l2r" }
    );
    let opts = TrainOptions {
        batch_tokens: run.batch_tokens,
        max_steps: run.max_steps,
    };
    let mut progress = Progress {
        log: sink(a.log.as_deref())?,
        checkpoint: a.out_checkpoint.clone(),
    };
    let done = run_stages(&mut model, &mut state, &plan, &datasets, &opts, &mut progress);
    progress.log.flush()?;
    let done = done?;
    save_training(&a.out_checkpoint, &model, &state)?;
    if !done {
        eprintln!("stopped at step {} (max steps); resume with --resume", state.step);
    }
    Ok(())
}

fn load_models(paths: &[PathBuf], reversed: bool) -> Result<Vec<Model>> {
    let models: Vec<Model> = paths
        .iter()
        .map(|p| Model::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<_>>()?;
    for (m, p) in models.iter().zip(paths) {
        if m.reversed != reversed {
            let want = if reversed { "right-to-left" } else { "left-to-right" };
            bail!(sggec::Error::Mismatch(format!("{} is not a {want} model", p.display())));
        }
    }
    Ok(models)
}

/// Best candidate and the (possibly re-ranked) n-best list of one sentence.
fn correct_one(
    words: &[String],
    tree: Option<&DepTree>,
    l2r: &[Model],
    r2l: &[Model],
    beam: usize,
    max_len: Option<usize>,
    r2l_weight: f64,
) -> sggec::Result<Vec<Candidate>> {
    if words.is_empty() {
        return Ok(vec![Candidate { tokens: Vec::new(), score: 0.0 }]);
    }
    let translators: Vec<Translator> = l2r.iter().map(|m| Translator::new(m, words, tree)).collect::<sggec::Result<_>>()?;
    let members: Vec<&dyn StepModel> = translators.iter().map(|t| t as &dyn StepModel).collect();
    let ensemble = Ensemble::new(members)?;
    let src_len = l2r[0].bpe.encode_words(words).0.len();
    let max_len = max_len.unwrap_or(2 * src_len + 10);
    let cands: Vec<Candidate> = beam_search(&ensemble, beam, max_len)?.iter().map(Candidate::from).collect();
    if r2l.is_empty() {
        return Ok(cands);
    }
    let back: Vec<Translator> = r2l.iter().map(|m| Translator::new(m, words, tree)).collect::<sggec::Result<_>>()?;
    let members: Vec<&dyn StepModel> = back.iter().map(|t| t as &dyn StepModel).collect();
    r2l_rerank(&cands, &Ensemble::new(members)?, r2l_weight)
}

pub fn correct(a: &CorrectArgs) -> Result<()> {
    let l2r = load_models(&a.checkpoints, false)?;
    let r2l = load_models(&a.rerank_r2l, true)?;
    for (m, p) in l2r.iter().chain(&r2l).zip(a.checkpoints.iter().chain(&a.rerank_r2l)) {
        if !l2r[0].compatible(m) {
            bail!(sggec::Error::Mismatch(format!(
                "{} uses a different vocabulary than {}",
                p.display(),
                a.checkpoints[0].display()
            )));
        }
    }
    if !(0.0..=1.0).contains(&a.r2l_weight) {
        bail!(Usage("--r2l-weight must lie in [0, 1]".into()));
    }
    let beam = a.beam.unwrap_or(l2r[0].cfg.beam);
    if beam == 0 {
        bail!(Usage("--beam must be at least 1".into()));
    }
    let sentences: Vec<Vec<String>> = lines(&a.input)?.iter().map(|l| split_words(l)).collect();
    let needs_trees = l2r.iter().chain(&r2l).any(|m| m.cfg.uses_graph_encoder());
    let trees: Option<Vec<DepTree>> = match &a.trees {
        Some(path) => {
            let mut vocab = l2r[0].relations.clone();
            let trees = parse_conllu(&read(path)?, &mut vocab).with_context(|| format!("parsing {}", path.display()))?;
            let non_empty = sentences.iter().filter(|s| !s.is_empty()).count();
            if trees.len() != non_empty {
                bail!(sggec::Error::Mismatch(format!(
                    "{} trees for {non_empty} non-empty input lines",
                    trees.len()
                )));
            }
            Some(trees)
        }
        None if needs_trees => bail!(Usage("these checkpoints use a graph encoder: pass --trees".into())),
        None => None,
    };
    // Trees are listed for non-empty lines only.
    let mut tree_of = Vec::with_capacity(sentences.len());
    let mut next = 0;
    for s in &sentences {
        if s.is_empty() {
            tree_of.push(None);
        } else {
            tree_of.push(trees.as_ref().map(|t| &t[next]));
            next += 1;
        }
    }
    let results: Vec<Vec<Candidate>> = sentences
        .par_iter()
        .zip(tree_of.par_iter())
        .map(|(s, t)| correct_one(s, *t, &l2r, &r2l, beam, a.max_len, a.r2l_weight))
        .collect::<sggec::Result<_>>()?;

    let text = |c: &Candidate| l2r[0].bpe.decode(&c.tokens).join(" ");
    let mut out = sink(a.output.as_deref())?;
    for cands in &results {
        writeln!(out, "{}", text(&cands[0]))?;
    }
    out.flush()?;
    if let Some(path) = &a.nbest {
        let mut nb = sink(Some(path))?;
        for (k, cands) in results.iter().enumerate() {
            for (rank, c) in cands.iter().enumerate() {
                writeln!(nb, "{}", nbest_line(k, rank + 1, c.score, &text(c)))?;
            }
        }
        nb.flush()?;
    }
    Ok(())
}

pub fn tree_targets(a: &TreeTargetsArgs) -> Result<()> {
    let mut vocab = RelationVocab::new();
    let text = read(&a.conllu)?;
    let trees = parse_conllu(&text, &mut vocab).map_err(|e| anyhow::Error::new(e).context(a.conllu.display().to_string()))?;
    if a.validate {
        println!("{} sentences valid", trees.len());
        return Ok(());
    }
    vocab.freeze();
    let mut out = sink(a.out.as_deref())?;
    writeln!(out, "# i\tj\trel\tdist\tanc")?;
    for (k, tree) in trees.iter().enumerate() {
        writeln!(out, "# sentence {}", k + 1)?;
        let t = pair_targets(tree, &vocab, a.max_distance);
        for i in 0..t.len() {
            for j in 0..t.len() {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    i + 1,
                    j + 1,
                    vocab.class_name(t.rel(i, j)),
                    t.dist(i, j),
                    t.anc(i, j).name()
                )?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let load = |p: &Path| -> Result<Vec<Vec<String>>> { Ok(lines(p)?.iter().map(|l| split_words(l)).collect()) };
    let (src, hyp, rf) = (load(&a.source)?, load(&a.hypothesis)?, load(&a.reference)?);
    let (report, per) = evaluate(&src, &hyp, &rf)?;
    println!("{report}");
    if let Some(path) = &a.per_sentence {
        let mut out = sink(Some(path))?;
        writeln!(out, "index\tmatched\thyp\tref")?;
        for (k, c) in per.iter().enumerate() {
            writeln!(out, "{k}\t{}\t{}\t{}", c.matched, c.hyp, c.reference)?;
        }
        out.flush()?;
    }
    Ok(())
}
