//! Shared fixtures for the benchmarks.

use acg::corpus::synthetic::reformulation_sessions;
use acg::corpus::{build_vocabulary, training_examples, LinearizedContext, PairMode, Session, TrainingExample, Vocabulary};
use acg::decoder::prepare_context;
use acg::evalkit::Index;
use acg::{AcgModel, ModelConfig};

pub struct Fixture {
    pub sessions: Vec<Session>,
    pub vocab: Vocabulary,
    pub model: AcgModel,
    pub examples: Vec<TrainingExample>,
    pub context: LinearizedContext,
}

/// Synthetic reformulation data with a model of the given width.
pub fn fixture(hidden: usize, vocab_size: usize) -> Fixture {
    let sessions = reformulation_sessions(400, 40, 80, 7);
    let vocab = build_vocabulary(&sessions, vocab_size).unwrap();
    let mut cfg = ModelConfig::tiny(vocab.len(), hidden);
    cfg.init_seed = 7;
    let model = AcgModel::new(cfg).unwrap();
    let examples = training_examples(&sessions, &vocab, PairMode::AllPrefixes, 50).unwrap();
    let longest = sessions.iter().max_by_key(|s| s.len()).unwrap();
    let context = prepare_context(&longest.queries, &vocab, 50).unwrap();
    Fixture {
        sessions,
        vocab,
        model,
        examples,
        context,
    }
}

/// One document per session: its queries concatenated.
pub fn session_index(sessions: &[Session]) -> Index {
    Index::build(
        sessions
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("d{i}"), s.queries.concat())),
    )
    .unwrap()
}
