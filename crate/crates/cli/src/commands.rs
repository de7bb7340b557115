use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use acg::corpus::io::{
    apply_session_meta, read_log, read_sessions, read_vocabulary, write_session_meta, write_sessions, write_vocabulary,
};
use acg::corpus::noise::{inject_noise, NoiseMode, NoiseResources};
use acg::corpus::{
    build_vocabulary, normalize_query, sessions_from_log, split_sessions, training_examples, PairMode, Query, Session,
    Vocabulary,
};
use acg::corpus::SEP_TOKEN;
use acg::decoder::{attention_trace, prepare_context, suggest as decode_suggest, DecodeConfig};
use acg::evalkit::{
    build_instances, evaluate_instances, Bucket, CooccurrenceTable, EmbeddingTable, EvalInstance, EvalResources,
    HarnessConfig, Index, MetricSelection, RetrievalConfig,
};
use acg::trainer::{parse_config, train as run_training, write_loss_csv, Trainer};
use acg::{AcgError, AcgModel};
use serde_json::json;

use crate::{CliError, DecodeArgs, EvaluateArgs, ModelArgs, PerturbArgs, PreprocessArgs, ScoreArgs, SuggestArgs, TrainArgs};

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", path.display())))
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn format_error(location: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Core(AcgError::Format {
        location: location.into(),
        message: message.into(),
    })
}

fn read_session_file(path: &Path, meta: Option<&Path>) -> CliResult<Vec<Session>> {
    let mut sessions = read_sessions(open(path)?)?;
    if let Some(m) = meta {
        apply_session_meta(&mut sessions, open(m)?)?;
    }
    Ok(sessions)
}

/// Loads a checkpoint and its vocabulary, which must agree in size.
pub fn load_model(args: &ModelArgs) -> CliResult<(AcgModel, Vocabulary)> {
    let model = AcgModel::load(open(&args.model)?)?;
    let vocab = read_vocabulary(open(&args.vocab)?)?;
    if vocab.len() != model.config.vocab_size {
        return Err(AcgError::Checkpoint(format!(
            "checkpoint expects a vocabulary of {} entries, {} has {}",
            model.config.vocab_size,
            args.vocab.display(),
            vocab.len()
        ))
        .into());
    }
    Ok((model, vocab))
}

pub fn decode_config(args: &DecodeArgs, k: usize) -> DecodeConfig {
    DecodeConfig {
        beam: args.beam,
        max_len: args.max_len,
        k,
        length_normalize: args.length_normalize,
    }
}

/// Splits a tab-separated line into normalized queries, dropping empty ones.
pub fn parse_context(line: &str) -> Vec<Query> {
    line.split('\t').map(normalize_query).filter(|q| !q.is_empty()).collect()
}

fn parse_noise(mode: &str) -> CliResult<NoiseMode> {
    NoiseMode::parse(mode).ok_or_else(|| CliError::Usage(format!("unknown noise mode {mode:?}; use term, query or session")))
}

pub fn preprocess(a: PreprocessArgs) -> CliResult {
    if !(0.0..=1.0).contains(&a.train_frac) || !(0.0..=1.0).contains(&a.l2r_frac) || a.train_frac + a.l2r_frac > 1.0 {
        return Err(CliError::Usage("split fractions must lie in [0, 1] and sum to at most 1".into()));
    }
    let records = read_log(open(&a.log)?)?;
    let sessions = sessions_from_log(records)?;
    let (train, l2r, test) = split_sessions(&sessions, a.train_frac, a.l2r_frac);
    let vocab = build_vocabulary(&train, a.vocab_size)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", a.out_dir.display())))?;
    for (name, part) in [("train", &train), ("l2r", &l2r), ("test", &test)] {
        let mut w = create(&a.out_dir.join(format!("{name}.sessions")))?;
        write_sessions(&mut w, part)?;
        w.flush().map_err(AcgError::from)?;
        let mut m = create(&a.out_dir.join(format!("{name}.meta")))?;
        write_session_meta(&mut m, part)?;
        m.flush().map_err(AcgError::from)?;
    }
    let mut v = create(&a.out_dir.join("vocab.txt"))?;
    write_vocabulary(&mut v, &vocab)?;
    v.flush().map_err(AcgError::from)?;
    eprintln!(
        "sessions {} (train {}, l2r {}, test {}), vocabulary {}",
        sessions.len(),
        train.len(),
        l2r.len(),
        test.len(),
        vocab.len()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> CliResult {
    let mut cfg = match &a.config {
        Some(p) => {
            let mut text = String::new();
            open(p)?.read_to_string(&mut text).map_err(AcgError::from)?;
            parse_config(&text)?
        }
        None => Default::default(),
    };
    if let Some(s) = a.seed {
        cfg.train.seed = s;
        cfg.model.init_seed = s;
    }
    if let Some(n) = a.max_steps {
        cfg.train.max_steps = n;
    }
    if let Some(h) = a.hidden {
        cfg.model.word_hidden = h;
        cfg.model.query_hidden = h;
        cfg.model.decoder_hidden = h;
        cfg.model.eta_hidden = h;
    }
    if a.no_copy {
        cfg.model.copy_enabled = false;
    }
    if a.parallel {
        cfg.train.parallel = true;
    }
    let vocab = read_vocabulary(open(&a.vocab)?)?;
    cfg.model.vocab_size = vocab.len();
    let mode = if a.last_only { PairMode::LastOnly } else { PairMode::AllPrefixes };
    let sessions = read_session_file(&a.sessions, None)?;
    let train_set = training_examples(&sessions, &vocab, mode, cfg.train.max_context_tokens)?;
    let valid_set = match &a.valid {
        Some(p) => training_examples(&read_session_file(p, None)?, &vocab, PairMode::LastOnly, cfg.train.max_context_tokens)?,
        None => train_set.clone(),
    };
    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", a.out_dir.display())))?;
    eprintln!(
        "seed={} examples={} valid={} vocab={}",
        cfg.train.seed,
        train_set.len(),
        valid_set.len(),
        vocab.len()
    );
    let model = AcgModel::new(cfg.model.clone())?;
    let mut trainer = Trainer::new(model, cfg.train.clone());
    let best_path = a.out_dir.join("best.ckpt");
    let mut best = f64::INFINITY;
    let report = run_training(&mut trainer, &vocab, &train_set, &valid_set, |model, point| {
        if let Some(v) = point.val_nll {
            eprintln!(
                "step {} copy {:.5} generate {:.5} switch {:.5} val_nll {v:.4}",
                point.step, point.losses.loss_copy, point.losses.loss_generate, point.losses.loss_switch
            );
            if v < best {
                best = v;
                let mut w = BufWriter::new(File::create(&best_path)?);
                model.save(&mut w)?;
                w.flush()?;
            }
        }
        Ok(())
    })?;
    let mut w = create(&a.out_dir.join("final.ckpt"))?;
    trainer.model.save(&mut w)?;
    w.flush().map_err(AcgError::from)?;
    let mut csv = create(&a.out_dir.join("loss.csv"))?;
    write_loss_csv(&mut csv, &report.curve)?;
    csv.flush().map_err(AcgError::from)?;
    eprintln!(
        "trained {} steps{}; best val_nll {}",
        report.steps,
        if report.stopped_early { " (early stop)" } else { "" },
        report.best_val_nll.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

fn input_lines(path: Option<&Path>) -> CliResult<Vec<String>> {
    let reader: Box<dyn BufRead> = match path {
        Some(p) => Box::new(open(p)?),
        None => Box::new(BufReader::new(io::stdin().lock())),
    };
    Ok(reader.lines().collect::<io::Result<Vec<_>>>().map_err(AcgError::from)?)
}

pub fn suggest(a: SuggestArgs) -> CliResult {
    let (model, vocab) = load_model(&a.model)?;
    let cfg = decode_config(&a.decode, a.k);
    let mut out = output(None)?;
    let mut trace = a.attention_trace.as_deref().map(create).transpose()?;
    for (i, line) in input_lines(a.input.as_deref())?.iter().enumerate() {
        let queries = parse_context(line);
        if queries.is_empty() {
            continue;
        }
        let ctx = prepare_context(&queries, &vocab, a.decode.max_context_tokens)?;
        let sugg = decode_suggest(&model, &vocab, &ctx, &cfg)?;
        let rendered: Vec<_> = sugg
            .iter()
            .map(|s| json!({"query": s.tokens.join(" "), "tokens": s.tokens, "log_prob": s.log_prob}))
            .collect();
        let context: Vec<String> = queries.iter().map(|q| q.join(" ")).collect();
        writeln!(out, "{}", json!({"line": i + 1, "context": context, "suggestions": rendered})).map_err(AcgError::from)?;
        if let (Some(w), Some(top)) = (trace.as_mut(), sugg.first()) {
            let mut tokens = top.tokens.clone();
            tokens.push(SEP_TOKEN.to_string());
            let steps = attention_trace(&model, &vocab, &ctx, &tokens)?;
            writeln!(w, "{}", json!({"line": i + 1, "steps": steps})).map_err(AcgError::from)?;
        }
    }
    out.flush().map_err(AcgError::from)?;
    if let Some(mut w) = trace {
        w.flush().map_err(AcgError::from)?;
    }
    Ok(())
}

pub fn score(a: ScoreArgs) -> CliResult {
    let (model, vocab) = load_model(&a.model)?;
    let mut out = output(None)?;
    for (i, line) in input_lines(Some(&a.candidates))?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let loc = format!("candidates line {}", i + 1);
        if fields.len() < 2 {
            return Err(format_error(loc, "expected context queries and a candidate separated by tabs"));
        }
        let candidate = normalize_query(fields[fields.len() - 1]);
        let context = parse_context(&fields[..fields.len() - 1].join("\t"));
        if candidate.is_empty() || context.is_empty() {
            return Err(format_error(loc, "empty context or candidate"));
        }
        let ctx = prepare_context(&context, &vocab, a.max_context_tokens)?;
        let (p, logp) = acg::decoder::score(&model, &vocab, &ctx, &candidate)?;
        writeln!(out, "{}\t{logp}\t{p}", candidate.join(" ")).map_err(AcgError::from)?;
    }
    out.flush().map_err(AcgError::from)?;
    Ok(())
}

fn read_queries(path: &Path) -> CliResult<Vec<Query>> {
    Ok(input_lines(Some(path))?.iter().map(|l| normalize_query(l)).collect())
}

pub fn evaluate(a: EvaluateArgs) -> CliResult {
    let noise = a.noise.as_deref().map(parse_noise).transpose()?;
    let bucket = match a.bucket.as_deref() {
        None => None,
        Some("short") => Some(Bucket::Short),
        Some("medium") => Some(Bucket::Medium),
        Some("long") => Some(Bucket::Long),
        Some(b) => return Err(CliError::Usage(format!("unknown bucket {b:?}; use short, medium or long"))),
    };
    let embeddings = a.embeddings.as_deref().map(|p| EmbeddingTable::read(open(p)?).map_err(CliError::from)).transpose()?;
    let index = a.corpus.as_deref().map(|p| Index::read(open(p)?).map_err(CliError::from)).transpose()?;
    let train_sessions = a
        .train_sessions
        .as_deref()
        .map(|p| read_session_file(p, a.train_meta.as_deref()))
        .transpose()?;

    let instances: Vec<EvalInstance> = if let Some(gen_path) = &a.generated {
        if noise.is_some() {
            return Err(CliError::Usage("--noise needs --model and --sessions".into()));
        }
        let generated = read_queries(gen_path)?;
        let targets = read_queries(a.targets.as_deref().expect("clap requires --targets"))?;
        if generated.len() != targets.len() {
            return Err(format_error(
                "evaluate",
                format!("{} generated queries for {} targets", generated.len(), targets.len()),
            ));
        }
        generated
            .into_iter()
            .zip(targets)
            .map(|(generated, target)| EvalInstance {
                generated,
                target,
                ..EvalInstance::default()
            })
            .collect()
    } else {
        let (Some(model), Some(vocab), Some(sessions)) = (&a.model, &a.vocab, &a.sessions) else {
            return Err(CliError::Usage("evaluate needs --model, --vocab and --sessions, or --generated and --targets".into()));
        };
        let (model, vocab) = load_model(&ModelArgs {
            model: model.clone(),
            vocab: vocab.clone(),
        })?;
        let mut sessions = read_session_file(sessions, a.meta.as_deref())?;
        if let Some(mode) = noise {
            let resources = NoiseResources::from_sessions(train_sessions.as_deref().unwrap_or(&sessions));
            sessions = inject_noise(&sessions, mode, a.seed, &resources)?;
        }
        let mps = train_sessions.as_deref().map(CooccurrenceTable::build);
        let harness = HarnessConfig {
            decode: decode_config(&a.decode, 1),
            max_context_tokens: a.decode.max_context_tokens,
            mps_k: a.mps_k,
            with_half: index.is_some(),
        };
        build_instances(&model, &vocab, &sessions, mps.as_ref(), &harness)?
    };
    let instances: Vec<EvalInstance> = match bucket {
        Some(b) => instances
            .into_iter()
            .filter(|i| i.session_len.and_then(Bucket::of) == Some(b))
            .collect(),
        None => instances,
    };

    let has_ranking = instances.iter().any(|i| i.ranked.is_some());
    let selection = if a.metrics.is_empty() {
        MetricSelection {
            per: true,
            sim_emb: embeddings.is_some(),
            sim_ret: index.is_some(),
            mrr: has_ranking,
        }
    } else {
        let sel = MetricSelection::parse(&a.metrics).map_err(|e| CliError::Usage(e.to_string()))?;
        if sel.sim_emb && embeddings.is_none() {
            return Err(CliError::Usage("sim_emb needs --embeddings".into()));
        }
        if sel.sim_ret && index.is_none() {
            return Err(CliError::Usage("sim_ret needs --corpus".into()));
        }
        if sel.mrr && !has_ranking {
            return Err(CliError::Usage("mrr needs --model and --train-sessions".into()));
        }
        sel
    };
    let resources = EvalResources {
        embeddings: embeddings.as_ref(),
        index: index.as_ref(),
        retrieval: RetrievalConfig {
            mu: a.mu,
            rbo_p: a.rbo_p,
            rbo_depth: a.rbo_depth,
            extrapolate: a.rbo_extrapolate,
            ..RetrievalConfig::default()
        },
    };
    let mut report = evaluate_instances(&instances, &resources, &selection)?;
    report.seed = Some(a.seed);
    report.noise = noise.map(|n| n.as_str().to_string());
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "{}", report.to_json()?).map_err(AcgError::from)?;
    out.flush().map_err(AcgError::from)?;
    Ok(())
}

pub fn perturb(a: PerturbArgs) -> CliResult {
    let mode = parse_noise(&a.mode)?;
    let sessions = read_session_file(&a.sessions, a.meta.as_deref())?;
    let resources = match &a.resources {
        Some(p) => NoiseResources::from_sessions(&read_session_file(p, None)?),
        None => NoiseResources::from_sessions(&sessions),
    };
    eprintln!("perturb mode={} seed={}", mode.as_str(), a.seed);
    let noisy = inject_noise(&sessions, mode, a.seed, &resources)?;
    let mut out = output(a.out.as_deref())?;
    write_sessions(&mut out, &noisy)?;
    out.flush().map_err(AcgError::from)?;
    if let Some(p) = &a.out_meta {
        let mut m = create(p)?;
        write_session_meta(&mut m, &noisy)?;
        m.flush().map_err(AcgError::from)?;
    }
    Ok(())
}
