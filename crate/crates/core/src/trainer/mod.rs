//! Losses for the three heads and the staged, component-freezing update loop.

mod config;

pub use config::{parse_config, RunConfig};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{reserved, TrainingExample, Vocabulary};
use crate::decoder::{example_nll, teacher_forced_graph, Heads, StepVars};
use crate::error::{AcgError, Result};
use crate::model::{AcgModel, Dropout};
use crate::numcore::{adam_update, AdamState, Component, ComponentSet, Gradients, Graph, Var};

/// How the summed per-step cross entropies are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossScaling {
    /// `1/|V|` for the generator and `1/|X|` for the copier.
    VocabAndSource,
    /// Mean over the contributing target steps.
    PerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepLosses {
    pub loss_generate: f64,
    pub loss_copy: f64,
    pub loss_switch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Copy,
    Generate,
    Switch,
}

impl Stage {
    pub fn heads(self) -> Heads {
        Heads {
            generate: self == Stage::Generate,
            copy: self == Stage::Copy,
            switch: self == Stage::Switch,
        }
    }
}

/// Ordered stages with the component tags each one freezes.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSchedule {
    pub stages: Vec<(Stage, ComponentSet)>,
}

impl Default for StageSchedule {
    fn default() -> Self {
        use Component::*;
        StageSchedule {
            stages: vec![
                (Stage::Copy, ComponentSet::of(&[Switch, Generator])),
                (Stage::Generate, ComponentSet::of(&[Switch, Copier])),
                (Stage::Switch, ComponentSet::of(&[Copier, Generator])),
            ],
        }
    }
}

/// Loss nodes for one teacher-forced example; `None` when no step contributes.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossVars {
    pub generate: Option<Var>,
    pub copy: Option<Var>,
    pub switch: Option<Var>,
}

impl LossVars {
    pub fn get(&self, stage: Stage) -> Option<Var> {
        match stage {
            Stage::Copy => self.copy,
            Stage::Generate => self.generate,
            Stage::Switch => self.switch,
        }
    }
}

pub fn loss_graph(
    g: &mut Graph<'_>,
    vocab_size: usize,
    example: &TrainingExample,
    steps: &[StepVars],
    scaling: LossScaling,
) -> LossVars {
    let mut gen_terms = Vec::new();
    let mut copy_terms = Vec::new();
    let mut switch_terms = Vec::new();
    for (t, st) in steps.iter().enumerate() {
        if let Some(gen) = st.gen {
            let target = example.generator_targets[t];
            if target != reserved::OOV {
                let p = g.pick(gen, target);
                gen_terms.push(g.ln(p));
            }
        }
        if let Some(copy) = st.copy {
            let targets = &example.copier_targets[t];
            if !targets.is_empty() {
                let p = g.sum_at(copy, targets);
                copy_terms.push(g.ln(p));
            }
        }
        if let Some(pc) = st.p_copy {
            let target = g.scalar_constant(example.switch_targets[t]);
            let d = g.sub(pc, target);
            switch_terms.push(g.square(d));
        }
    }
    let mut reduce = |terms: Vec<Var>, scale: f64| {
        (!terms.is_empty()).then(|| {
            let s = g.sum(&terms);
            g.scale(s, scale)
        })
    };
    let (gen_scale, copy_scale) = match scaling {
        LossScaling::VocabAndSource => (
            -1.0 / vocab_size as f64,
            -1.0 / example.context.len() as f64,
        ),
        LossScaling::PerStep => (-1.0 / gen_terms.len().max(1) as f64, -1.0 / copy_terms.len().max(1) as f64),
    };
    let switch_scale = 1.0 / switch_terms.len().max(1) as f64;
    LossVars {
        generate: reduce(gen_terms, gen_scale),
        copy: reduce(copy_terms, copy_scale),
        switch: reduce(switch_terms, switch_scale),
    }
}

/// The three losses of one example under the current parameters.
pub fn compute_losses(model: &AcgModel, example: &TrainingExample, scaling: LossScaling) -> Result<StepLosses> {
    let mut g = Graph::new(&model.store);
    let steps = teacher_forced_graph(&mut g, model, example, Heads::ALL, None)?;
    let l = loss_graph(&mut g, model.config.vocab_size, example, &steps, scaling);
    g.status()?;
    let val = |v: Option<Var>| v.map(|v| g.scalar(v)).unwrap_or(0.0);
    let out = StepLosses {
        loss_generate: val(l.generate),
        loss_copy: val(l.copy),
        loss_switch: val(l.switch),
    };
    if !(out.loss_generate.is_finite() && out.loss_copy.is_finite() && out.loss_switch.is_finite()) {
        return Err(AcgError::NonFinite("training loss".into()));
    }
    Ok(out)
}

/// Sum of the three loss nodes, for gradient checking the whole pipeline.
pub fn total_loss_graph(g: &mut Graph<'_>, model: &AcgModel, example: &TrainingExample, scaling: LossScaling) -> Result<Var> {
    let steps = teacher_forced_graph(g, model, example, Heads::ALL, None)?;
    let l = loss_graph(g, model.config.vocab_size, example, &steps, scaling);
    let parts: Vec<Var> = [l.generate, l.copy, l.switch].into_iter().flatten().collect();
    if parts.is_empty() {
        return Ok(g.scalar_constant(0.0));
    }
    Ok(g.sum(&parts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub dropout: f64,
    pub seed: u64,
    pub scaling: LossScaling,
    pub clip_norm: f64,
    /// Steps between validation passes and curve points.
    pub eval_every: usize,
    /// Validation passes without improvement before stopping; 0 disables.
    pub patience: usize,
    /// Compute per-example gradients on the rayon pool. The reduction is
    /// ordered, so results match the sequential path.
    pub parallel: bool,
    pub max_context_tokens: usize,
    pub stage_copy: bool,
    pub stage_generate: bool,
    pub stage_switch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 128,
            max_steps: 10_000,
            dropout: 0.0,
            seed: 0,
            scaling: LossScaling::VocabAndSource,
            clip_norm: 5.0,
            eval_every: 200,
            patience: 5,
            parallel: false,
            max_context_tokens: 50,
            stage_copy: true,
            stage_generate: true,
            stage_switch: true,
        }
    }
}

impl TrainConfig {
    fn stage_enabled(&self, s: Stage, copy_enabled: bool) -> bool {
        match s {
            Stage::Copy => self.stage_copy && copy_enabled,
            Stage::Generate => self.stage_generate,
            Stage::Switch => self.stage_switch && copy_enabled,
        }
    }
}

/// Holds the model, one Adam state per stage and the batch sampler.
pub struct Trainer {
    pub model: AcgModel,
    pub config: TrainConfig,
    pub schedule: StageSchedule,
    optimizers: Vec<AdamState>,
    rng: ChaCha8Rng,
    pub step: usize,
}

impl Trainer {
    pub fn new(model: AcgModel, config: TrainConfig) -> Self {
        let schedule = StageSchedule::default();
        let optimizers = schedule.stages.iter().map(|_| AdamState::new(&model.store, config.lr)).collect();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Trainer {
            model,
            config,
            schedule,
            optimizers,
            rng,
            step: 0,
        }
    }

    pub fn optimizer(&self, stage_index: usize) -> &AdamState {
        &self.optimizers[stage_index]
    }

    /// Batch-averaged gradient and loss of one stage.
    pub fn stage_gradients(&self, batch: &[&TrainingExample], stage: Stage, seeds: &[u64]) -> Result<(Gradients, f64)> {
        let model = &self.model;
        let cfg = &self.config;
        let one = |(ex, seed): (&&TrainingExample, &u64)| -> Result<(Gradients, f64)> {
            let mut g = Graph::new(&model.store);
            let mut dropout = (cfg.dropout > 0.0).then(|| Dropout::new(cfg.dropout, *seed));
            let steps = teacher_forced_graph(&mut g, model, ex, stage.heads(), dropout.as_mut())?;
            let l = loss_graph(&mut g, model.config.vocab_size, ex, &steps, cfg.scaling);
            match l.get(stage) {
                Some(v) => {
                    let loss = g.scalar(v);
                    Ok((g.backward(v, 1.0)?, loss))
                }
                None => Ok((Gradients::zeros_like(&model.store), 0.0)),
            }
        };
        let parts: Vec<Result<(Gradients, f64)>> = if cfg.parallel {
            batch.par_iter().zip(seeds.par_iter()).map(one).collect()
        } else {
            batch.iter().zip(seeds.iter()).map(one).collect()
        };
        let mut total = Gradients::zeros_like(&model.store);
        let mut loss = 0.0;
        for p in parts {
            let (gr, l) = p?;
            total.add_assign(&gr);
            loss += l;
        }
        let scale = 1.0 / batch.len().max(1) as f64;
        total.scale(scale);
        loss *= scale;
        if !loss.is_finite() || !total.all_finite() {
            return Err(AcgError::NonFinite(format!("{stage:?} stage gradients")));
        }
        Ok((total, loss))
    }

    /// Three sequential backward/update passes, each with its own forward
    /// pass, frozen tag set and Adam state.
    pub fn staged_update(&mut self, batch: &[&TrainingExample]) -> Result<StepLosses> {
        if batch.is_empty() {
            return Err(AcgError::Empty("empty batch".into()));
        }
        let mut losses = StepLosses::default();
        for k in 0..self.schedule.stages.len() {
            let Some(loss) = self.apply_stage(batch, k)? else { continue };
            match self.schedule.stages[k].0 {
                Stage::Copy => losses.loss_copy = loss,
                Stage::Generate => losses.loss_generate = loss,
                Stage::Switch => losses.loss_switch = loss,
            }
        }
        self.step += 1;
        Ok(losses)
    }

    /// Runs stage `k` of the schedule on `batch` and returns its loss, or
    /// `None` when the stage is disabled. Dropout seeds are drawn either way.
    pub fn apply_stage(&mut self, batch: &[&TrainingExample], k: usize) -> Result<Option<f64>> {
        let (stage, frozen) = *self
            .schedule
            .stages
            .get(k)
            .ok_or_else(|| AcgError::OutOfRange(format!("stage index {k}")))?;
        let seeds: Vec<u64> = (0..batch.len()).map(|_| self.rng.gen()).collect();
        if !self.config.stage_enabled(stage, self.model.config.copy_enabled) {
            return Ok(None);
        }
        let (mut grads, loss) = self.stage_gradients(batch, stage, &seeds)?;
        if self.config.clip_norm > 0.0 {
            grads.clip_global_norm(self.config.clip_norm);
        }
        self.model.store.set_grads(&grads)?;
        adam_update(&mut self.model.store, &mut self.optimizers[k], frozen)?;
        Ok(Some(loss))
    }

    /// Draws a seeded permutation of `0..n`.
    pub fn shuffled(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order
    }
}

/// Mean per-token mixture negative log likelihood.
pub fn mean_nll(model: &AcgModel, vocab: &Vocabulary, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(AcgError::Empty("no examples to evaluate".into()));
    }
    let parts = examples
        .par_iter()
        .map(|ex| example_nll(model, vocab, ex))
        .collect::<Result<Vec<_>>>()?;
    let (nll, tokens) = parts.iter().fold((0.0, 0usize), |(a, b), (n, t)| (a + n, b + t));
    Ok(nll / tokens as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub losses: StepLosses,
    pub val_nll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub steps: usize,
    pub best_val_nll: Option<f64>,
    pub stopped_early: bool,
}

/// Seeded minibatch training with periodic validation and early stopping.
/// `on_eval` runs after every validation pass (checkpointing hook).
pub fn train<F>(
    trainer: &mut Trainer,
    vocab: &Vocabulary,
    train_set: &[TrainingExample],
    valid_set: &[TrainingExample],
    mut on_eval: F,
) -> Result<TrainReport>
where
    F: FnMut(&AcgModel, &CurvePoint) -> Result<()>,
{
    if train_set.is_empty() {
        return Err(AcgError::Empty("training corpus has no examples".into()));
    }
    let bs = trainer.config.batch_size.max(1);
    let mut report = TrainReport {
        curve: Vec::new(),
        steps: 0,
        best_val_nll: None,
        stopped_early: false,
    };
    let mut window = StepLosses::default();
    let mut window_len = 0usize;
    let mut bad_evals = 0usize;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    while trainer.step < trainer.config.max_steps {
        if cursor >= order.len() {
            order = trainer.shuffled(train_set.len());
            cursor = 0;
        }
        let end = (cursor + bs).min(order.len());
        let batch: Vec<&TrainingExample> = order[cursor..end].iter().map(|&i| &train_set[i]).collect();
        cursor = end;
        let l = trainer.staged_update(&batch)?;
        window.loss_copy += l.loss_copy;
        window.loss_generate += l.loss_generate;
        window.loss_switch += l.loss_switch;
        window_len += 1;

        let at_eval = trainer.step.is_multiple_of(trainer.config.eval_every.max(1)) || trainer.step == trainer.config.max_steps;
        if !at_eval {
            continue;
        }
        let w = window_len as f64;
        let val_nll = if valid_set.is_empty() {
            None
        } else {
            Some(mean_nll(&trainer.model, vocab, valid_set)?)
        };
        let point = CurvePoint {
            step: trainer.step,
            losses: StepLosses {
                loss_generate: window.loss_generate / w,
                loss_copy: window.loss_copy / w,
                loss_switch: window.loss_switch / w,
            },
            val_nll,
        };
        window = StepLosses::default();
        window_len = 0;
        on_eval(&trainer.model, &point)?;
        report.curve.push(point);
        if let Some(v) = val_nll {
            match report.best_val_nll {
                Some(b) if v >= b => bad_evals += 1,
                _ => {
                    report.best_val_nll = Some(v);
                    bad_evals = 0;
                }
            }
            if trainer.config.patience > 0 && bad_evals >= trainer.config.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    report.steps = trainer.step;
    Ok(report)
}

pub fn write_loss_csv<W: Write>(mut out: W, curve: &[CurvePoint]) -> Result<()> {
    writeln!(out, "step,loss_copy,loss_generate,loss_switch,val_nll")?;
    for p in curve {
        let v = p.val_nll.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            p.step, p.losses.loss_copy, p.losses.loss_generate, p.losses.loss_switch, v
        )?;
    }
    Ok(())
}
