//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any fails. Pass criterion numbers as arguments to run a subset.

use std::collections::{HashMap, HashSet};
use std::hash::{Hash, Hasher};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use acg::corpus::io::write_sessions;
use acg::corpus::noise::{inject_noise, NoiseMode, NoiseResources};
use acg::corpus::synthetic::{copy_sessions, reformulation_sessions};
use acg::corpus::{
    build_vocabulary, derive_targets, linearize, reserved, training_examples, PairMode, Query, Session, TrainingExample,
    Vocabulary,
};
use acg::decoder::{
    attention_trace, beam_search, decoder_step, fuse, prepare_context, suggest, DecodeConfig, EncodedContext, StepModel,
};
use acg::evalkit::metrics::{extrema_embedding, mrr, per, rbo, EmbeddingTable};
use acg::evalkit::retrieval::{query_distribution, relevance_model, retrieve, rm3_expand, Index, Rm3Params};
use acg::evalkit::{build_instances, evaluate_instances, CooccurrenceTable, EvalResources, HarnessConfig, MetricSelection};
use acg::numcore::{gradient_check, Affine, Component, Eta, GruCell, ParameterStore};
use acg::trainer::{mean_nll, total_loss_graph, LossScaling, TrainConfig, Trainer};
use acg::{AcgModel, ModelConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
const NORM_TOL: f64 = 1e-6;
const NORM_DRAWS: usize = 1000;
const BEAM_MODELS: usize = 100;
const BEAM_TOL: f64 = 1e-9;
const OVERFIT_NLL: f64 = 0.1;
const OVERFIT_STEPS: usize = 2000;
const OVERFIT_BUDGET: Duration = Duration::from_secs(300);
const COPY_EXACT: f64 = 0.95;
const COPY_PCOPY: f64 = 0.9;
const ABLATION_SEEDS: u64 = 5;
const ABLATION_MIN_WINS: usize = 4;
const RBO_TOL: f64 = 1e-12;
const NOISE_SESSIONS: usize = 10_000;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn q(x: &str) -> Query {
    x.split_whitespace().map(String::from).collect()
}

fn randomize(store: &mut ParameterStore, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

fn batches(trainer: &mut Trainer, n: usize, bs: usize, order: &mut Vec<usize>, cursor: &mut usize) -> Vec<usize> {
    if *cursor + bs > order.len() {
        *order = trainer.shuffled(n);
        *cursor = 0;
    }
    let out = order[*cursor..*cursor + bs].to_vec();
    *cursor += bs;
    out
}

// 1 ---------------------------------------------------------------------------

fn toy_vocab() -> Vocabulary {
    Vocabulary::from_tokens(["bob", "dylan", "songs", "photo", "gallery", "lyrics", "tour"]).unwrap()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: Vec<(String, f64)> = Vec::new();

    let mut store = ParameterStore::new();
    let affine = Affine::new(&mut store, "affine", Component::Decoder, &[3, 2], 4, &mut rng).map_err(e2s)?;
    let gru = GruCell::new(&mut store, "gru", Component::Encoder, &[3], 4, &mut rng).map_err(e2s)?;
    let eta = Eta::new(&mut store, "eta", Component::Attention, &[4, 3], 4, &mut rng).map_err(e2s)?;
    randomize(&mut store, &mut rng, 0.8);
    let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h0: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let r = gradient_check(
        |g| {
            let (xv, yv, wv) = (g.constant(x.clone()), g.constant(y.clone()), g.constant(w.clone()));
            let out = affine.forward(g, &[xv, yv]);
            let t = g.tanh(out);
            Ok(g.dot(t, wv))
        },
        &store,
        usize::MAX,
        GRAD_TOL,
    )
    .map_err(e2s)?;
    worst.push(("affine".into(), r.max_relative_error));
    let r = gradient_check(
        |g| {
            let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
            let mut h = g.constant(h0.clone());
            for _ in 0..3 {
                h = gru.step(g, &[xv], h);
            }
            Ok(g.dot(h, wv))
        },
        &store,
        usize::MAX,
        GRAD_TOL,
    )
    .map_err(e2s)?;
    worst.push(("gru".into(), r.max_relative_error));
    let r = gradient_check(
        |g| {
            let (xv, sv) = (g.constant(x.clone()), g.constant(h0.clone()));
            Ok(eta.forward(g, &[sv, xv]))
        },
        &store,
        usize::MAX,
        GRAD_TOL,
    )
    .map_err(e2s)?;
    worst.push(("eta".into(), r.max_relative_error));

    let vocab = toy_vocab();
    let context = [q("bob dylan"), q("dylan songs")];
    let target = q("dylan zeppelin lyrics");
    for (label, query_mlp, copy) in [("pipeline", false, true), ("pipeline+mlp", true, true), ("pipeline-nocopy", false, false)] {
        let mut cfg = ModelConfig::tiny(vocab.len(), 4);
        cfg.query_mlp = query_mlp;
        cfg.copy_enabled = copy;
        cfg.init_seed = 5;
        let mut model = AcgModel::new(cfg).map_err(e2s)?;
        randomize(&mut model.store, &mut rng, 0.6);
        let ex = derive_targets(linearize(&context, &vocab).map_err(e2s)?, &target, &vocab);
        let r = gradient_check(
            |g| total_loss_graph(g, &model, &ex, LossScaling::VocabAndSource),
            &model.store,
            usize::MAX,
            GRAD_TOL,
        )
        .map_err(e2s)?;
        worst.push((label.into(), r.max_relative_error));
    }
    let elapsed = start.elapsed();
    let max = worst.iter().map(|x| x.1).fold(0.0, f64::max);
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect::<Vec<_>>().join(", ");
    ensure(max < GRAD_TOL, format!("max relative error {max:.3e} >= {GRAD_TOL:e} ({detail})"))?;
    ensure(elapsed < GRAD_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!("max rel err {max:.2e} < {GRAD_TOL:e} [{detail}] in {:.1}s", elapsed.as_secs_f64()))
}

// 2 ---------------------------------------------------------------------------

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = 0.0f64;
    let mut pc_range = (1.0f64, 0.0f64);
    let mut checked = 0usize;
    for draw in 0..NORM_DRAWS {
        let n_words = rng.gen_range(3..15);
        let words: Vec<String> = (0..n_words).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::from_tokens(words.clone()).unwrap();
        let mut cfg = ModelConfig::tiny(vocab.len(), rng.gen_range(2..8));
        cfg.embed_dim = rng.gen_range(2..8);
        cfg.eta_hidden = rng.gen_range(2..8);
        cfg.query_mlp = rng.gen_bool(0.5);
        cfg.init_seed = draw as u64;
        let mut model = AcgModel::new(cfg).map_err(e2s)?;
        let scale = rng.gen_range(0.3..1.5);
        randomize(&mut model.store, &mut rng, scale);
        let n_queries = rng.gen_range(1..4);
        let queries: Vec<Query> = (0..n_queries)
            .map(|_| {
                (0..rng.gen_range(1..5))
                    .map(|_| {
                        if rng.gen_bool(0.2) {
                            format!("rare{}", rng.gen_range(0..5))
                        } else {
                            words.choose(&mut rng).unwrap().clone()
                        }
                    })
                    .collect()
            })
            .collect();
        let ctx = linearize(&queries, &vocab).map_err(e2s)?;
        let enc = EncodedContext::new(&model, &ctx).map_err(e2s)?;
        let mut state = enc.initial_state();
        let mut prev = reserved::START;
        for _ in 0..rng.gen_range(1..4) {
            let out = decoder_step(&model, &enc, &state, prev).map_err(e2s)?;
            let sums = [
                ("gen", out.gen_dist.iter().sum::<f64>()),
                ("copy", out.copy_dist.iter().sum()),
                ("word", out.attention.word.iter().sum()),
                ("query", out.attention.query.iter().sum()),
                ("combined", out.attention.combined.iter().sum()),
                ("mixture", fuse(&out, &ctx.surface, &vocab).total()),
            ];
            for (name, s) in sums {
                let dev = (s - 1.0).abs();
                worst = worst.max(dev);
                ensure(dev <= NORM_TOL, format!("draw {draw}: {name} sums to {s}"))?;
            }
            let negative = out
                .gen_dist
                .iter()
                .chain(&out.copy_dist)
                .chain(&out.attention.combined)
                .any(|p| *p < 0.0);
            ensure(!negative, format!("draw {draw}: negative probability"))?;
            ensure(out.p_copy > 0.0 && out.p_copy < 1.0, format!("draw {draw}: p_copy {}", out.p_copy))?;
            pc_range = (pc_range.0.min(out.p_copy), pc_range.1.max(out.p_copy));
            prev = rng.gen_range(0..vocab.len());
            state = out.state;
            checked += 1;
        }
    }
    Ok(format!(
        "{NORM_DRAWS} draws, {checked} steps, max |sum-1| {worst:.1e} <= {NORM_TOL:e}, p_copy in [{:.3}, {:.3}]",
        pc_range.0, pc_range.1
    ))
}

// 3 ---------------------------------------------------------------------------

/// History-dependent random distributions over a small alphabet plus `</q>`.
struct RandomTree {
    seed: u64,
    alphabet: Vec<String>,
}

impl RandomTree {
    fn dist(&self, prefix: &[String]) -> Vec<(String, f64)> {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        prefix.hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ h.finish());
        let mut toks: Vec<String> = self.alphabet.clone();
        toks.push("</q>".into());
        let w: Vec<f64> = toks.iter().map(|_| rng.gen_range(0.01..1.0f64).powi(2)).collect();
        let z: f64 = w.iter().sum();
        let mut out: Vec<(String, f64)> = toks.into_iter().zip(w.into_iter().map(|x| x / z)).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }
}

impl StepModel for RandomTree {
    type Hidden = Vec<String>;

    fn start(&mut self) -> acg::Result<Vec<String>> {
        Ok(Vec::new())
    }

    fn step(&mut self, hidden: &Vec<String>, prev: Option<&str>, _: usize) -> acg::Result<(Vec<String>, Vec<(String, f64)>)> {
        let mut h = hidden.clone();
        h.extend(prev.map(String::from));
        let d = self.dist(&h);
        Ok((h, d))
    }

    fn token_prob(&mut self, hidden: &Vec<String>, prev: Option<&str>, token: &str) -> acg::Result<(Vec<String>, f64)> {
        let (h, d) = self.step(hidden, prev, 0)?;
        Ok((h, d.iter().find(|(t, _)| t == token).map(|x| x.1).unwrap_or(0.0)))
    }
}

/// Every complete sequence: ends at the first `</q>` or after `max_len` tokens.
fn exhaustive(model: &RandomTree, prefix: &mut Vec<String>, logp: f64, max_len: usize, best: &mut Option<(Vec<String>, f64)>) {
    for (tok, p) in model.dist(prefix) {
        let lp = logp + p.ln();
        prefix.push(tok.clone());
        if tok == "</q>" || prefix.len() >= max_len {
            let better = match best {
                None => true,
                Some((bt, bl)) => lp > *bl || (lp == *bl && *prefix < *bt),
            };
            if better {
                *best = Some((prefix.clone(), lp));
            }
        } else {
            exhaustive(model, prefix, lp, max_len, best);
        }
        prefix.pop();
    }
}

fn beam_vs_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst = 0.0f64;
    for m in 0..BEAM_MODELS {
        let a = rng.gen_range(1..=5);
        let max_len = rng.gen_range(1..=4);
        let mut model = RandomTree {
            seed: rng.gen(),
            alphabet: (0..a).map(|i| ((b'a' + i as u8) as char).to_string()).collect(),
        };
        let full = (a + 1usize).pow(max_len as u32);
        let cfg = DecodeConfig {
            beam: full,
            max_len,
            k: 1,
            length_normalize: false,
        };
        let top = beam_search(&mut model, &cfg).map_err(e2s)?.remove(0);
        let mut best = None;
        exhaustive(&model, &mut Vec::new(), 0.0, max_len, &mut best);
        let (bt, bl) = best.unwrap();
        ensure(top.tokens == bt, format!("model {m}: beam {:?} vs exhaustive {:?}", top.tokens, bt))?;
        let d = (top.log_prob - bl).abs();
        worst = worst.max(d);
        ensure(d <= BEAM_TOL, format!("model {m}: log-prob gap {d:e}"))?;
    }
    Ok(format!("{BEAM_MODELS} models, all argmax sequences equal, max |dlogp| {worst:.1e} <= {BEAM_TOL:e}"))
}

// 4 ---------------------------------------------------------------------------

fn staged_freeze() -> Outcome {
    let sessions = reformulation_sessions(40, 6, 10, 4);
    let vocab = build_vocabulary(&sessions, 30).map_err(e2s)?;
    let exs = training_examples(&sessions, &vocab, PairMode::AllPrefixes, 50).map_err(e2s)?;
    let mut cfg = ModelConfig::tiny(vocab.len(), 8);
    cfg.init_seed = 4;
    let tc = TrainConfig {
        lr: 0.05,
        batch_size: 8,
        seed: 4,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(AcgModel::new(cfg).map_err(e2s)?, tc);
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let batch: Vec<&TrainingExample> = exs.choose_multiple(&mut rng, 8).collect();
    let mut report = Vec::new();
    for round in 0..2 {
        for k in 0..trainer.schedule.stages.len() {
            let (stage, frozen) = trainer.schedule.stages[k];
            let before = trainer.model.store.clone();
            trainer.apply_stage(&batch, k).map_err(e2s)?;
            let mut moved = 0;
            for (a, b) in before.entries().iter().zip(trainer.model.store.entries()) {
                let same = a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
                if frozen.contains(a.tag) {
                    ensure(same, format!("{} changed during {stage:?}", a.name))?;
                } else if !same {
                    moved += 1;
                }
            }
            ensure(moved > 0, format!("{stage:?} updated nothing"))?;
            if round == 0 {
                let tags: Vec<&str> = frozen.iter().map(Component::as_str).collect();
                report.push(format!("{stage:?} froze {}", tags.join("+")));
            }
        }
    }
    Ok(format!("frozen tags bitwise unchanged over 2 rounds ({})", report.join("; ")))
}

// 5 ---------------------------------------------------------------------------

fn overfit() -> Outcome {
    let start = Instant::now();
    let sessions = reformulation_sessions(200, 35, 60, 1);
    let vocab = build_vocabulary(&sessions, 100).map_err(e2s)?;
    ensure(vocab.len() == 100, format!("vocabulary has {} entries", vocab.len()))?;
    let exs = training_examples(&sessions, &vocab, PairMode::AllPrefixes, 50).map_err(e2s)?;
    let mut cfg = ModelConfig::tiny(vocab.len(), 32);
    cfg.init_seed = 1;
    let tc = TrainConfig {
        lr: 3e-3,
        batch_size: 16,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(AcgModel::new(cfg).map_err(e2s)?, tc);
    let (mut order, mut cursor) = (Vec::new(), 0);
    let mut nll = f64::INFINITY;
    let mut steps = 0;
    while steps < OVERFIT_STEPS {
        let idx = batches(&mut trainer, exs.len(), 16, &mut order, &mut cursor);
        let batch: Vec<&TrainingExample> = idx.iter().map(|&i| &exs[i]).collect();
        trainer.staged_update(&batch).map_err(e2s)?;
        steps += 1;
        if steps % 50 == 0 {
            nll = mean_nll(&trainer.model, &vocab, &exs).map_err(e2s)?;
            if nll < OVERFIT_NLL {
                break;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(nll < OVERFIT_NLL, format!("NLL {nll:.4} after {steps} steps"))?;
    ensure(elapsed < OVERFIT_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} sessions, {} examples: NLL {nll:.4} < {OVERFIT_NLL} at step {steps} in {:.1}s",
        sessions.len(),
        exs.len(),
        elapsed.as_secs_f64()
    ))
}

// 6 / 7 -----------------------------------------------------------------------

const COPY_MODIFIERS: usize = 20;

fn train_copy_model(seed: u64, copy: bool, sessions: usize, steps: usize) -> Result<(AcgModel, Vocabulary), String> {
    let train = copy_sessions(sessions, COPY_MODIFIERS, "r", seed);
    let vocab = build_vocabulary(&train, reserved::COUNT + COPY_MODIFIERS).map_err(e2s)?;
    let exs = training_examples(&train, &vocab, PairMode::LastOnly, 50).map_err(e2s)?;
    let mut cfg = ModelConfig::tiny(vocab.len(), 16);
    cfg.copy_enabled = copy;
    cfg.init_seed = seed;
    let tc = TrainConfig {
        lr: 3e-3,
        batch_size: 16,
        seed,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(AcgModel::new(cfg).map_err(e2s)?, tc);
    let (mut order, mut cursor) = (Vec::new(), 0);
    for _ in 0..steps {
        let idx = batches(&mut trainer, exs.len(), 16, &mut order, &mut cursor);
        let batch: Vec<&TrainingExample> = idx.iter().map(|&i| &exs[i]).collect();
        trainer.staged_update(&batch).map_err(e2s)?;
    }
    Ok((trainer.model, vocab))
}

fn top1(model: &AcgModel, vocab: &Vocabulary, context: &[Query]) -> Result<Query, String> {
    let ctx = prepare_context(context, vocab, 50).map_err(e2s)?;
    let s = suggest(model, vocab, &ctx, &DecodeConfig::default()).map_err(e2s)?;
    Ok(s.into_iter().next().map(|s| s.tokens).unwrap_or_default())
}

fn copy_mechanism() -> Outcome {
    let start = Instant::now();
    let (model, vocab) = train_copy_model(1, true, 600, 600)?;
    let test = copy_sessions(500, COPY_MODIFIERS, "z", 99);
    let (mut exact, mut pc_sum, mut pc_n) = (0usize, 0.0, 0usize);
    for s in &test {
        let l = s.len();
        let target = &s.queries[l - 1];
        ensure(!vocab.contains(&target[0]), format!("{} is in the vocabulary", target[0]))?;
        if top1(&model, &vocab, &s.queries[..l - 1])? == *target {
            exact += 1;
        }
        let ctx = prepare_context(&s.queries[..l - 1], &vocab, 50).map_err(e2s)?;
        let trace = attention_trace(&model, &vocab, &ctx, target).map_err(e2s)?;
        for (step, tok) in trace.iter().zip(target) {
            if !vocab.contains(tok) {
                pc_sum += step.p_copy;
                pc_n += 1;
            }
        }
    }
    let rate = exact as f64 / test.len() as f64;
    let pc = pc_sum / pc_n as f64;
    ensure(rate >= COPY_EXACT, format!("exact rate {rate:.3} < {COPY_EXACT}"))?;
    ensure(pc > COPY_PCOPY, format!("mean p_copy {pc:.4} <= {COPY_PCOPY}"))?;
    Ok(format!(
        "exact {exact}/{} = {rate:.3} >= {COPY_EXACT}, mean p_copy on unseen tokens {pc:.4} > {COPY_PCOPY} ({:.1}s)",
        test.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn random_embeddings(tokens: &HashSet<String>, dim: usize, seed: u64) -> EmbeddingTable {
    let mut sorted: Vec<&String> = tokens.iter().collect();
    sorted.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = EmbeddingTable::new(dim);
    for t in sorted {
        table.insert(t, (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    }
    table
}

fn ablation() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 1..=ABLATION_SEEDS {
        let test = copy_sessions(200, COPY_MODIFIERS, "z", 1000 + seed);
        let tokens: HashSet<String> = test
            .iter()
            .flat_map(|s| s.queries.iter().flatten().cloned())
            .chain((0..COPY_MODIFIERS).map(|m| format!("c{m:02}")))
            .collect();
        let table = random_embeddings(&tokens, 16, seed);
        let mut means = Vec::new();
        for copy in [true, false] {
            let (model, vocab) = train_copy_model(seed, copy, 400, 300)?;
            let (mut emb, mut one_minus_per) = (0.0, 0.0);
            let mut emb_n = 0;
            for s in &test {
                let l = s.len();
                let g = top1(&model, &vocab, &s.queries[..l - 1])?;
                let t = &s.queries[l - 1];
                one_minus_per += 1.0 - per(&g, t).map_err(e2s)?;
                if let Some(v) = acg::evalkit::sim_emb(&g, t, &table) {
                    emb += v;
                    emb_n += 1;
                }
            }
            means.push((emb / emb_n.max(1) as f64, one_minus_per / test.len() as f64));
        }
        let (acg_m, gen_m) = (means[0], means[1]);
        let win = acg_m.0 > gen_m.0 && acg_m.1 > gen_m.1;
        wins += usize::from(win);
        rows.push(format!(
            "seed {seed}: sim_emb {:.3}/{:.3} 1-PER {:.3}/{:.3}",
            acg_m.0, gen_m.0, acg_m.1, gen_m.1
        ));
    }
    ensure(wins >= ABLATION_MIN_WINS, format!("ACG ahead on {wins}/{ABLATION_SEEDS} seeds: {}", rows.join("; ")))?;
    Ok(format!(
        "ACG > generator-only on {wins}/{ABLATION_SEEDS} seeds (>= {ABLATION_MIN_WINS}) [{}] ({:.1}s)",
        rows.join("; "),
        start.elapsed().as_secs_f64()
    ))
}

// 8 ---------------------------------------------------------------------------

fn brute_per(g: &[String], t: &[String]) -> f64 {
    let mut rest: Vec<&String> = t.iter().collect();
    let mut extra = 0;
    for w in g {
        match rest.iter().position(|x| *x == w) {
            Some(i) => {
                rest.swap_remove(i);
            }
            None => extra += 1,
        }
    }
    (extra + rest.len()) as f64 / t.len() as f64
}

fn series_rbo(a: &[u32], b: &[u32], p: f64, depth: usize) -> f64 {
    let mut sum = 0.0;
    for d in 1..=depth {
        let sa: HashSet<&u32> = a.iter().take(d).collect();
        let sb: HashSet<&u32> = b.iter().take(d).collect();
        let overlap = sa.intersection(&sb).count();
        sum += p.powi(d as i32 - 1) * overlap as f64 / d as f64;
    }
    (1.0 - p) * sum
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let words: Vec<String> = (0..6).map(|i| format!("w{i}")).collect();
    for i in 0..1000 {
        let g: Vec<String> = (0..rng.gen_range(0..7)).map(|_| words.choose(&mut rng).unwrap().clone()).collect();
        let t: Vec<String> = (0..rng.gen_range(1..7)).map(|_| words.choose(&mut rng).unwrap().clone()).collect();
        let got = per(&g, &t).map_err(e2s)?;
        ensure(got == brute_per(&g, &t), format!("PER pair {i}: {got} vs {}", brute_per(&g, &t)))?;
    }
    let mut worst = 0.0f64;
    for i in 0..500 {
        let depth = rng.gen_range(1..=100);
        let pool: Vec<u32> = (0..150).collect();
        let na = rng.gen_range(0..=depth);
        let a: Vec<u32> = pool.choose_multiple(&mut rng, na).copied().collect();
        let mut b: Vec<u32> = a.clone();
        b.shuffle(&mut rng);
        b.truncate(rng.gen_range(0..=b.len()));
        let extra: Vec<u32> = pool.choose_multiple(&mut rng, 20).copied().filter(|x| !a.contains(x)).collect();
        b.extend(extra.into_iter().take(rng.gen_range(0..20)));
        let b: Vec<u32> = {
            let mut seen = HashSet::new();
            b.into_iter().filter(|x| seen.insert(*x)).collect()
        };
        let p = rng.gen_range(0.05..0.99);
        let got = rbo(&a, &b, p, depth, false).map_err(e2s)?;
        let want = series_rbo(&a, &b, p, depth);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= RBO_TOL, format!("RBO case {i}: {got} vs {want}"))?;
    }
    let ranked = |target: &str, rank: usize| -> (Vec<String>, String) {
        let mut v: Vec<String> = (0..5).map(|i| format!("c{i}")).collect();
        if rank > 0 {
            v[rank - 1] = target.to_string();
        }
        (v, target.to_string())
    };
    for r in 1..=5 {
        ensure(mrr(&[ranked("t", r)]) == 1.0 / r as f64, format!("MRR at rank {r}"))?;
    }
    ensure(mrr(&[ranked("t", 1), ranked("t", 0)]) == 0.5, "MRR with an absent target")?;
    ensure(mrr(&[ranked("t", 2), ranked("t", 2)]) == 0.5, "MRR at rank 2")?;
    let mut table = EmbeddingTable::new(8);
    for w in &words {
        table.insert(w, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    }
    for i in 0..1000 {
        let mut query: Vec<String> = (0..rng.gen_range(1..7)).map(|_| words.choose(&mut rng).unwrap().clone()).collect();
        let base = extrema_embedding(&query, &table).unwrap();
        query.shuffle(&mut rng);
        let shuffled = extrema_embedding(&query, &table).unwrap();
        let same = base.iter().zip(&shuffled).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, format!("extrema shuffle {i} changed the vector"))?;
    }
    Ok(format!(
        "PER exact on 1000 pairs, RBO max |diff| {worst:.1e} <= {RBO_TOL:e} on 500 lists, MRR exact, extrema bitwise stable on 1000 shuffles"
    ))
}

// 9 ---------------------------------------------------------------------------

fn retrieval_sanity() -> Outcome {
    let index = Index::build([("d1", q("bob dylan songs")), ("d2", q("dylan photo gallery"))]).map_err(e2s)?;
    let list = retrieve(&index, &q("dylan photo"), 1.0, 10).map_err(e2s)?;
    let hand = |tf_dylan: f64, tf_photo: f64| {
        let denom = 3.0 + 1.0;
        ((tf_dylan + 2.0 / 6.0) / denom).ln() + ((tf_photo + 1.0 / 6.0) / denom).ln()
    };
    let (d2, d1) = (hand(1.0, 1.0), hand(1.0, 0.0));
    ensure(list.ids() == vec!["d2", "d1"], format!("ranking {:?}", list.ids()))?;
    ensure(
        (list.entries[0].1 - d2).abs() < 1e-12 && (list.entries[1].1 - d1).abs() < 1e-12,
        format!("scores {:?} vs hand {d2} {d1}", list.entries),
    )?;
    let query = q("dylan photo");
    let mut original = query_distribution(&query);
    original.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let identity = rm3_expand(&index, &query, &Rm3Params { lambda: 1.0, mu: 1.0, ..Rm3Params::default() }).map_err(e2s)?;
    ensure(identity == original, format!("lambda 1 gave {identity:?}"))?;
    let pure_params = Rm3Params {
        lambda: 0.0,
        fb_terms: 1000,
        mu: 1.0,
        ..Rm3Params::default()
    };
    let pure = rm3_expand(&index, &query, &pure_params).map_err(e2s)?;
    let rm = relevance_model(&index, &query, &pure_params).map_err(e2s)?;
    ensure(pure == rm, format!("lambda 0 gave {pure:?}, relevance model {rm:?}"))?;
    let w1 = (d1 - d2).exp() / (1.0 + (d1 - d2).exp());
    let hand_dylan = (1.0 - w1) / 3.0 + w1 / 3.0;
    let got = rm.iter().find(|(t, _)| t == "dylan").map(|x| x.1).unwrap_or(0.0);
    ensure((got - hand_dylan).abs() < 1e-12, format!("P(dylan|R) {got} vs {hand_dylan}"))?;
    Ok(format!(
        "toy ranking [d2, d1] with scores equal to hand values; lambda=1 identity and lambda=0 relevance model exact ({} terms)",
        rm.len()
    ))
}

// 10 --------------------------------------------------------------------------

fn serialized(sessions: &[Session]) -> Vec<u8> {
    let mut out = Vec::new();
    write_sessions(&mut out, sessions).unwrap();
    out
}

fn robustness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let words: Vec<String> = (0..300).map(|i| format!("k{i}")).collect();
    let sessions: Vec<Session> = (0..NOISE_SESSIONS)
        .map(|i| {
            let n = rng.gen_range(1..7);
            let queries: Vec<Query> = (0..n)
                .map(|_| (0..rng.gen_range(1..4)).map(|_| words.choose(&mut rng).unwrap().clone()).collect())
                .collect();
            Session {
                user_id: format!("u{}", i % 1500),
                timestamps: (0..n as i64).map(|t| i as i64 * 100_000 + t * 60).collect(),
                queries,
            }
        })
        .collect();
    let res = NoiseResources::from_sessions(&sessions);
    let mut counts = HashMap::new();
    for mode in [NoiseMode::Term, NoiseMode::Query, NoiseMode::Session] {
        let a = inject_noise(&sessions, mode, 7, &res).map_err(e2s)?;
        let b = inject_noise(&sessions, mode, 7, &res).map_err(e2s)?;
        ensure(serialized(&a) == serialized(&b), format!("{mode:?} output differs between runs"))?;
        ensure(a.len() == sessions.len(), format!("{mode:?} changed the session count"))?;
        let mut changed = 0;
        for (orig, noisy) in sessions.iter().zip(&a) {
            ensure(noisy.queries.len() == noisy.timestamps.len(), "timestamps out of step")?;
            ensure(noisy.user_id == orig.user_id, "user changed")?;
            if orig.len() >= 2 {
                ensure(noisy.queries.last() == orig.queries.last(), format!("{mode:?} touched a target"))?;
            }
            match mode {
                NoiseMode::Term => {
                    ensure(noisy.len() == orig.len(), "term noise changed the query count")?;
                    ensure(noisy.token_count() == orig.token_count() + 1, "term noise must add exactly one token")?;
                }
                NoiseMode::Query => {
                    ensure(noisy.len() == orig.len() + 1, "query noise must add exactly one query")?;
                    let mut it = noisy.queries.iter();
                    ensure(orig.queries.iter().all(|oq| it.any(|x| x == oq)), "query noise reordered the session")?;
                }
                NoiseMode::Session => {
                    let added = noisy.len() - orig.len();
                    ensure(noisy.queries[added..] == orig.queries[..], "session noise must prepend")?;
                    if added > 0 {
                        let donor = &noisy.queries[..added];
                        let found = sessions
                            .iter()
                            .any(|s| s.user_id == orig.user_id && s.queries == donor && !std::ptr::eq(s, orig));
                        ensure(found, "donor is not another session of the same user")?;
                    }
                }
            }
            changed += usize::from(noisy != orig);
        }
        counts.insert(mode.as_str(), changed);
    }

    let train = reformulation_sessions(120, 8, 12, 3);
    let vocab = build_vocabulary(&train, 40).map_err(e2s)?;
    let exs = training_examples(&train, &vocab, PairMode::AllPrefixes, 50).map_err(e2s)?;
    let mut cfg = ModelConfig::tiny(vocab.len(), 8);
    cfg.init_seed = 3;
    let tc = TrainConfig {
        lr: 1e-2,
        batch_size: 16,
        max_steps: 40,
        eval_every: 40,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(AcgModel::new(cfg).map_err(e2s)?, tc);
    acg::trainer::train(&mut trainer, &vocab, &exs, &exs[..10], |_, _| Ok(())).map_err(e2s)?;
    let mut eval_sessions: Vec<Session> = reformulation_sessions(60, 8, 12, 77);
    for (i, s) in eval_sessions.iter_mut().enumerate() {
        s.user_id = format!("e{}", i % 12);
    }
    let eval_res = NoiseResources::from_sessions(&train);
    let index = Index::build(
        train
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("doc{i}"), s.queries.iter().flatten().cloned().collect::<Vec<_>>())),
    )
    .map_err(e2s)?;
    let tokens: HashSet<String> = vocab.regular_tokens().iter().cloned().collect();
    let table = random_embeddings(&tokens, 8, 3);
    let mps = CooccurrenceTable::build(&train);
    let resources = EvalResources {
        embeddings: Some(&table),
        index: Some(&index),
        ..EvalResources::default()
    };
    let mut reports = Vec::new();
    for mode in [NoiseMode::Term, NoiseMode::Query, NoiseMode::Session] {
        let noisy = inject_noise(&eval_sessions, mode, 5, &eval_res).map_err(e2s)?;
        let insts = build_instances(&trainer.model, &vocab, &noisy, Some(&mps), &HarnessConfig::default()).map_err(e2s)?;
        let report = evaluate_instances(&insts, &resources, &MetricSelection::default()).map_err(e2s)?;
        let bucketed: usize = report.buckets.values().map(|b| b.count).sum();
        ensure(bucketed == report.count, format!("{mode:?}: {bucketed} bucketed of {}", report.count))?;
        ensure(report.metrics["per"].count == report.count, format!("{mode:?}: PER skipped instances"))?;
        for b in ["short", "medium", "long"] {
            ensure(report.buckets.contains_key(b), format!("{mode:?}: no {b} bucket"))?;
        }
        serde_json::to_string(&report).map_err(e2s)?;
        reports.push(format!(
            "{}: {} instances s/m/l {}/{}/{}",
            mode.as_str(),
            report.count,
            report.buckets["short"].count,
            report.buckets["medium"].count,
            report.buckets["long"].count
        ));
    }
    Ok(format!(
        "{NOISE_SESSIONS} sessions, invariants held, byte-identical reruns (changed: term {}, query {}, session {}); reports [{}] ({:.1}s)",
        counts["term"],
        counts["query"],
        counts["session"],
        reports.join("; "),
        start.elapsed().as_secs_f64()
    ))
}

// 11 --------------------------------------------------------------------------

fn train_once() -> Result<Vec<u8>, String> {
    let sessions = reformulation_sessions(80, 8, 12, 6);
    let vocab = build_vocabulary(&sessions, 40).map_err(e2s)?;
    let exs = training_examples(&sessions, &vocab, PairMode::AllPrefixes, 50).map_err(e2s)?;
    let mut cfg = ModelConfig::tiny(vocab.len(), 8);
    cfg.init_seed = 6;
    let tc = TrainConfig {
        lr: 5e-3,
        batch_size: 8,
        max_steps: 60,
        eval_every: 20,
        dropout: 0.2,
        seed: 6,
        parallel: false,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(AcgModel::new(cfg).map_err(e2s)?, tc);
    acg::trainer::train(&mut trainer, &vocab, &exs[10..], &exs[..10], |_, _| Ok(())).map_err(e2s)?;
    let mut out = Vec::new();
    trainer.model.save(&mut out).map_err(e2s)?;
    Ok(out)
}

fn determinism() -> Outcome {
    let a = train_once()?;
    let b = train_once()?;
    ensure(a == b, "checkpoints differ")?;
    Ok(format!("two seeded runs wrote identical {}-byte checkpoints", a.len()))
}

fn main() {
    let criteria: Vec<(u32, &str, fn() -> Outcome)> = vec![
        (1, "gradient correctness", gradients),
        (2, "normalization suite", normalization),
        (3, "beam vs brute force", beam_vs_brute_force),
        (4, "staged-freeze bitwise", staged_freeze),
        (5, "overfit run", overfit),
        (6, "copy mechanism", copy_mechanism),
        (7, "ablation trend", ablation),
        (8, "metric oracles", metric_oracles),
        (9, "retrieval sanity", retrieval_sanity),
        (10, "robustness harness", robustness),
        (11, "determinism", determinism),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS [{n:>2}] {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{n:>2}] {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
