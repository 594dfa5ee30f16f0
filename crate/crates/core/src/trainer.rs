//! Training orchestration: CE pretraining, sequence-loss fine-tuning from a
//! warm start, validation-driven learning-rate decay, evaluation, and beam
//! sweeps.
//!
//! Everything is single-threaded and seeded, so identical (config, seed,
//! datasets) reproduce metrics and parameters bitwise.

use std::io::Write as IoWrite;
use std::path::Path;
use std::time::Instant;

use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdaDeltaState, BoundParams, Params, Tape};
use crate::beam::{beam_search, default_max_len};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{
    ce_loss, combined_loss, mbr_loss, papb_loss, sm_loss, Objective, PrefixReference,
};
use crate::metrics::edit_distance;
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplied into the learning rate when dev CER stops improving.
    pub lr_decay_factor: f64,
    /// Beam size during sequence-loss training.
    pub n_tr: usize,
    /// Beam size for decoding/evaluation.
    pub n_de: usize,
    pub seed: u64,
    /// CE smoothing weight added to the sequence losses.
    pub lambda: f64,
    /// Margin scale on edit-distance terms.
    pub alpha: f64,
    pub teacher_forcing_prob: f64,
    pub prefix_reference: PrefixReference,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Record real elapsed time per epoch. Disable for byte-identical
    /// metrics files across runs.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::ce_defaults()
    }
}

impl TrainConfig {
    /// Cross-entropy pretraining phase defaults.
    pub fn ce_defaults() -> Self {
        TrainConfig {
            objective: Objective::Ce,
            epochs: 20,
            batch_size: 30,
            lr: 1.0,
            lr_decay_factor: 0.5,
            n_tr: 10,
            n_de: 10,
            seed: 0,
            lambda: 0.001,
            alpha: 1.0,
            teacher_forcing_prob: 1.0,
            prefix_reference: PrefixReference::PseudoTrue,
            grad_clip: Some(5.0),
            record_wall_time: true,
        }
    }

    /// Sequence-loss fine-tuning phase defaults.
    pub fn sequence_defaults(objective: Objective) -> Self {
        TrainConfig {
            objective,
            epochs: 10,
            batch_size: 10,
            lr: 0.01,
            ..TrainConfig::ce_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.n_tr < 1 || self.n_de < 1 {
            return Err(Error::config("beam sizes must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::config("lr_decay_factor must lie in (0, 1]; 1 disables decay"));
        }
        if self.lambda < 0.0 || self.alpha < 0.0 {
            return Err(Error::config("lambda and alpha must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing_prob) {
            return Err(Error::config("teacher_forcing_prob must lie in [0, 1]"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::config("grad_clip must be positive when set"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_cer: f64,
    pub dev_wer: f64,
    pub lr_used: f64,
    pub wall_seconds: f64,
}

/// Minimum absolute dev-CER improvement (percent) that counts as progress.
const IMPROVEMENT_THRESHOLD: f64 = 0.1;

fn validate_dataset(model: &Model, dataset: &Dataset, what: &str) -> Result<()> {
    if dataset.utterances.is_empty() {
        return Err(Error::config(format!("{what} set is empty")));
    }
    if dataset.vocab.size() != model.config.vocab_size {
        return Err(Error::config(format!(
            "{what} vocab size {} does not match model vocab {}",
            dataset.vocab.size(),
            model.config.vocab_size
        )));
    }
    if dataset.feat_dim != model.config.input_dim {
        return Err(Error::config(format!(
            "{what} feature dim {} does not match model input dim {}",
            dataset.feat_dim, model.config.input_dim
        )));
    }
    Ok(())
}

/// Loss and per-parameter gradients for one utterance.
fn utterance_loss(
    model: &Model,
    params: &Params,
    config: &TrainConfig,
    utt: &crate::data::Utterance,
    sample_rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<ArrayD<f64>>)> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let loss = match config.objective {
        Objective::Ce => ce_loss(
            model,
            &mut tape,
            &bound,
            &utt.feat,
            &utt.target,
            config.teacher_forcing_prob,
            sample_rng,
        )?,
        seq => {
            let max_len = default_max_len(utt.feat.nrows());
            let (nbest, trace) =
                beam_search(model, &mut tape, &bound, &utt.feat, config.n_tr, max_len)?;
            let seq_loss = match seq {
                Objective::Mbr => mbr_loss(&mut tape, &nbest, &utt.target)?,
                Objective::Sm => sm_loss(&mut tape, &nbest, &utt.target, config.alpha)?,
                Objective::Papb => papb_loss(
                    &mut tape,
                    &trace,
                    &nbest,
                    &utt.target,
                    config.alpha,
                    config.prefix_reference,
                    true,
                )?,
                Objective::Ce => unreachable!(),
            };
            if config.lambda > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let ce = ce_loss(model, &mut tape, &bound, &utt.feat, &utt.target, 1.0, &mut rng)?;
                combined_loss(&mut tape, seq_loss, ce, config.lambda)?
            } else {
                seq_loss
            }
        }
    };
    let value = tape.scalar_value(loss);
    if !value.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite loss {value} on utterance '{}'",
            utt.id
        )));
    }
    let grads = tape.backward(loss)?;
    Ok((value, bound.gradients(&tape, &grads)))
}

/// Mean loss and mean gradient over a batch, accumulated in the given
/// utterance order.
pub(crate) fn accumulate_batch(
    model: &Model,
    params: &Params,
    config: &TrainConfig,
    dataset: &Dataset,
    indices: &[usize],
    epoch: usize,
) -> Result<(f64, Vec<ArrayD<f64>>)> {
    let mut total_loss = 0.0;
    let mut acc: Option<Vec<ArrayD<f64>>> = None;
    for &i in indices {
        // per-utterance stream so scheduled-sampling draws are independent
        // of batch composition
        let mut sample_rng =
            ChaCha8Rng::seed_from_u64(config.seed ^ ((epoch as u64) << 32) ^ (i as u64 + 1));
        let (loss, grads) =
            utterance_loss(model, params, config, &dataset.utterances[i], &mut sample_rng)?;
        total_loss += loss;
        match &mut acc {
            None => acc = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    *a += g;
                }
            }
        }
    }
    let n = indices.len() as f64;
    let mut acc = acc.ok_or_else(|| Error::invalid_argument("empty batch"))?;
    for a in acc.iter_mut() {
        *a /= n;
    }
    Ok((total_loss / n, acc))
}

fn clip_gradients(grads: &mut [ArrayD<f64>], clip: f64) {
    let norm_sq: f64 = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum();
    let norm = norm_sq.sqrt();
    if norm > clip {
        let scale = clip / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best dev CER.
    pub best_params: Params,
    /// Parameters after the last epoch.
    pub final_params: Params,
    pub metrics: Vec<EpochMetrics>,
}

pub fn train(
    model: &Model,
    config: &TrainConfig,
    train_set: &Dataset,
    dev_set: &Dataset,
    init: Option<Params>,
) -> Result<TrainOutcome> {
    config.validate()?;
    validate_dataset(model, train_set, "training")?;
    validate_dataset(model, dev_set, "dev")?;
    if config.objective.is_sequence_level() && init.is_none() {
        return Err(Error::config(format!(
            "objective {} requires a warm-start checkpoint",
            config.objective
        )));
    }
    let mut params = match init {
        Some(p) => p,
        None => model.init_params(config.seed),
    };
    let mut optimizer = AdaDeltaState::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut lr = config.lr;
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut best_cer = f64::INFINITY;
    let mut best_params = params.clone();

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train_set.utterances.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let (loss, mut grads) =
                accumulate_batch(model, &params, config, train_set, batch, epoch)?;
            if let Some(clip) = config.grad_clip {
                clip_gradients(&mut grads, clip);
            }
            optimizer.step(&mut params, &grads, lr)?;
            epoch_loss += loss;
            batches += 1;
        }
        let train_loss = epoch_loss / batches as f64;

        let report = evaluate(model, &params, dev_set, 1)?;
        let wall_seconds = if config.record_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss,
            dev_cer: report.cer_percent,
            dev_wer: report.wer_percent,
            lr_used: lr,
            wall_seconds,
        });
        if report.cer_percent < best_cer {
            best_params = params.clone();
        }
        if best_cer - report.cer_percent < IMPROVEMENT_THRESHOLD {
            lr *= config.lr_decay_factor;
        }
        best_cer = best_cer.min(report.cer_percent);
    }
    Ok(TrainOutcome {
        best_params,
        final_params: params,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceEval {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub char_edits: usize,
    pub ref_chars: usize,
    pub word_edits: usize,
    pub ref_words: usize,
    pub logp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Total character edits over total reference characters, ×100.
    pub cer_percent: f64,
    /// Total word edits over total reference words, ×100.
    pub wer_percent: f64,
    pub utterances: Vec<UtteranceEval>,
}

fn words(text: &str) -> Vec<&str> {
    text.split(' ').filter(|w| !w.is_empty()).collect()
}

pub fn evaluate(
    model: &Model,
    params: &Params,
    dataset: &Dataset,
    n_de: usize,
) -> Result<EvalReport> {
    validate_dataset(model, dataset, "evaluation")?;
    let mut utterances = Vec::with_capacity(dataset.utterances.len());
    let mut char_edits = 0usize;
    let mut ref_chars = 0usize;
    let mut word_edits = 0usize;
    let mut ref_words = 0usize;
    for utt in &dataset.utterances {
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, params);
        let max_len = default_max_len(utt.feat.nrows());
        let (nbest, _) = beam_search(model, &mut tape, &bound, &utt.feat, n_de, max_len)?;
        let top = &nbest[0];
        let hypothesis = dataset.vocab.decode(&top.tokens);
        let rc: Vec<char> = utt.text.chars().collect();
        let hc: Vec<char> = hypothesis.chars().collect();
        let ce = edit_distance(&rc, &hc).total;
        let rw = words(&utt.text);
        let hw = words(&hypothesis);
        let we = edit_distance(&rw, &hw).total;
        // empty-reference convention: score against length 1
        let rc_len = rc.len().max(1);
        let rw_len = rw.len().max(1);
        char_edits += ce;
        ref_chars += rc_len;
        word_edits += we;
        ref_words += rw_len;
        utterances.push(UtteranceEval {
            id: utt.id.clone(),
            reference: utt.text.clone(),
            hypothesis,
            char_edits: ce,
            ref_chars: rc_len,
            word_edits: we,
            ref_words: rw_len,
            logp: top.logp_sum,
        });
    }
    Ok(EvalReport {
        cer_percent: 100.0 * char_edits as f64 / ref_chars as f64,
        wer_percent: 100.0 * word_edits as f64 / ref_words as f64,
        utterances,
    })
}

/// WER% for every (training-beam checkpoint, decoding beam) pair, in the
/// given order: `result[i][j]` uses `checkpoints[i]` with `n_de_list[j]`.
pub fn sweep_beam(
    model: &Model,
    checkpoints: &[(usize, Params)],
    dataset: &Dataset,
    n_de_list: &[usize],
) -> Result<Vec<Vec<f64>>> {
    if checkpoints.is_empty() || n_de_list.is_empty() {
        return Err(Error::config("sweep needs at least one checkpoint and one beam size"));
    }
    let mut rows = Vec::with_capacity(checkpoints.len());
    for (_n_tr, params) in checkpoints {
        let mut row = Vec::with_capacity(n_de_list.len());
        for &n_de in n_de_list {
            let report = evaluate(model, params, dataset, n_de)?;
            row.push(report.wer_percent);
        }
        rows.push(row);
    }
    Ok(rows)
}

pub const METRICS_CSV_HEADER: &str = "epoch,train_loss,dev_cer,dev_wer,lr_used,wall_seconds";

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for m in metrics {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            m.epoch, m.train_loss, m.dev_cer, m.dev_wer, m.lr_used, m.wall_seconds
        )?;
    }
    Ok(())
}
