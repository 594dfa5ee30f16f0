//! Training objectives: cross-entropy with scheduled sampling, minimum Bayes
//! risk over the N-best, softmax margin, and promising accurate prefix
//! boosting, plus their smoothed combinations with a weighted CE term.
//!
//! Discrete selections (beam pruning, argmax feedback, pseudo-true choice,
//! edit-distance terms) are constants during backward; gradients flow only
//! through scores and log-probabilities.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Tape, Var};
use crate::beam::{BeamTrace, PrefixRecord};
use crate::error::{Error, Result};
use crate::metrics::{cer_count, prefix_cer, select_pseudo_true};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Objective {
    Ce,
    Mbr,
    Sm,
    Papb,
}

impl Objective {
    pub fn is_sequence_level(self) -> bool {
        !matches!(self, Objective::Ce)
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CE" => Ok(Objective::Ce),
            "MBR" => Ok(Objective::Mbr),
            "SM" => Ok(Objective::Sm),
            "PAPB" => Ok(Objective::Papb),
            other => Err(Error::config(format!("unknown objective '{other}'"))),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Objective::Ce => "CE",
            Objective::Mbr => "MBR",
            Objective::Sm => "SM",
            Objective::Papb => "PAPB",
        };
        f.write_str(s)
    }
}

/// Which sequence the prefix margin of the boosting loss compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixReference {
    /// The N-best member with the lowest CER (the default).
    #[default]
    PseudoTrue,
    /// The ground-truth sequence, for ablation.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub objective: Objective,
    /// Margin scale on edit-distance terms.
    pub alpha: f64,
    /// CE smoothing weight for the combined objectives.
    pub lambda: f64,
    /// Probability of feeding ground truth during CE training.
    pub teacher_forcing_prob: f64,
    pub prefix_reference: PrefixReference,
    /// Whether already-finished hypotheses participate in later prefix
    /// terms (with their final frozen score).
    pub include_finished_prefixes: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            objective: Objective::Ce,
            alpha: 1.0,
            lambda: 0.001,
            teacher_forcing_prob: 1.0,
            prefix_reference: PrefixReference::PseudoTrue,
            include_finished_prefixes: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::config("alpha must be nonnegative"));
        }
        if self.lambda < 0.0 {
            return Err(Error::config("lambda must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing_prob) {
            return Err(Error::config("teacher_forcing_prob must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Cross-entropy of the reference under scheduled sampling: each step feeds
/// the ground-truth previous token with probability `teacher_forcing_prob`,
/// otherwise the model's argmax at the previous step. Draws are per-step
/// independent from the supplied generator.
pub fn ce_loss(
    model: &Model,
    tape: &mut Tape,
    params: &BoundParams,
    features: &Array2<f64>,
    reference: &[usize],
    teacher_forcing_prob: f64,
    rng: &mut impl Rng,
) -> Result<Var> {
    if reference.is_empty() {
        return Err(Error::invalid_argument("empty reference sequence"));
    }
    if *reference.last().unwrap() != model.config.eos_id {
        return Err(Error::invalid_argument("reference must terminate with <eos>"));
    }
    let enc = model.encode(tape, params, features)?;
    let mut ctx = model.init_context(tape, enc.frames);
    let mut total: Option<Var> = None;
    for &target in reference {
        let (new_ctx, _s, logp) = model.step(tape, params, &ctx, &enc)?;
        let term = tape.index(logp, target);
        total = Some(match total {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
        let lv = tape.value(logp);
        let argmax = (0..lv.len())
            .max_by(|&a, &b| lv[[a]].partial_cmp(&lv[[b]]).unwrap())
            .unwrap();
        ctx = new_ctx;
        ctx.y_prev = if rng.gen_bool(teacher_forcing_prob) {
            target
        } else {
            argmax
        };
    }
    Ok(tape.neg(total.unwrap()))
}

/// Expected edit-distance count under the model distribution renormalized
/// within the N-best via a softmax over cumulative log-probabilities.
pub fn mbr_loss(tape: &mut Tape, nbest: &[PrefixRecord], reference: &[usize]) -> Result<Var> {
    if nbest.is_empty() {
        return Err(Error::invalid_argument("MBR loss over an empty N-best list"));
    }
    if let Some(bad) = nbest.iter().position(|r| !r.finished) {
        return Err(Error::invalid_argument(format!(
            "MBR loss requires finished hypotheses; entry {bad} is live"
        )));
    }
    let logps: Vec<Var> = nbest.iter().map(|r| r.logp_var).collect();
    let stacked = tape.concat(&logps);
    let weights = tape.softmax(stacked);
    let cers = Array1::from_iter(
        nbest
            .iter()
            .map(|r| cer_count(reference, &r.tokens) as f64),
    );
    let cers = tape.constant(cers.into_dyn());
    Ok(tape.dot(weights, cers))
}

/// Softmax margin loss over completed hypotheses: the pseudo-true member's
/// raw score must exceed every competitor's score plus its scaled CER.
pub fn sm_loss(
    tape: &mut Tape,
    nbest: &[PrefixRecord],
    reference: &[usize],
    alpha: f64,
) -> Result<Var> {
    if nbest.is_empty() {
        return Err(Error::invalid_argument(
            "softmax margin loss over an empty N-best list",
        ));
    }
    if let Some(bad) = nbest.iter().position(|r| !r.finished) {
        return Err(Error::invalid_argument(format!(
            "softmax margin loss requires finished hypotheses; entry {bad} is live"
        )));
    }
    let scored: Vec<(Vec<usize>, f64)> = nbest
        .iter()
        .map(|r| (r.tokens.clone(), r.logp_sum))
        .collect();
    let pseudo = select_pseudo_true(&scored, reference)?;

    let mut terms = Vec::with_capacity(nbest.len());
    for rec in nbest {
        let full = rec.raw_prefix_score(tape, rec.tokens.len())?;
        let margin = alpha * cer_count(reference, &rec.tokens) as f64;
        let offset = tape.scalar(margin);
        terms.push(tape.add(full, offset));
    }
    let stacked = tape.concat(&terms);
    let lse = tape.logsumexp(stacked);
    let pseudo_score = nbest[pseudo].raw_prefix_score(tape, nbest[pseudo].tokens.len())?;
    Ok(tape.sub(lse, pseudo_score))
}

/// Promising accurate prefix boosting: the softmax margin loss applied at
/// every prefix length over the post-pruning beam snapshots. The pseudo-true
/// hypothesis is selected once from the completed N-best and held fixed for
/// all prefix steps of the utterance.
pub fn papb_loss(
    tape: &mut Tape,
    trace: &BeamTrace,
    nbest: &[PrefixRecord],
    reference: &[usize],
    alpha: f64,
    prefix_reference: PrefixReference,
    include_finished: bool,
) -> Result<Var> {
    if trace.snapshots.is_empty() {
        return Err(Error::invalid_argument("prefix loss over an empty trace"));
    }
    if nbest.is_empty() {
        return Err(Error::invalid_argument(
            "prefix loss over an empty N-best list",
        ));
    }
    let scored: Vec<(Vec<usize>, f64)> = nbest
        .iter()
        .map(|r| (r.tokens.clone(), r.logp_sum))
        .collect();
    let pseudo = &nbest[select_pseudo_true(&scored, reference)?];
    let margin_ref: &[usize] = match prefix_reference {
        PrefixReference::PseudoTrue => &pseudo.tokens,
        PrefixReference::GroundTruth => reference,
    };

    let mut total: Option<Var> = None;
    let steps = pseudo.tokens.len().min(trace.snapshots.len());
    for l in 1..=steps {
        let snapshot = &trace.snapshots[l - 1];
        let mut terms = Vec::with_capacity(snapshot.len());
        for member in snapshot {
            if !include_finished && member.tokens.len() < l {
                continue;
            }
            let score = member.raw_prefix_score(tape, l.min(member.tokens.len()))?;
            let margin = alpha * prefix_cer(margin_ref, &member.tokens, l) as f64;
            let offset = tape.scalar(margin);
            terms.push(tape.add(score, offset));
        }
        if terms.is_empty() {
            continue;
        }
        let stacked = tape.concat(&terms);
        let lse = tape.logsumexp(stacked);
        let pseudo_prefix = pseudo.raw_prefix_score(tape, l)?;
        let term = tape.sub(lse, pseudo_prefix);
        total = Some(match total {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    total.ok_or_else(|| Error::invalid_argument("prefix loss has no terms"))
}

/// `seq_loss + lambda * ce`; with `lambda == 0` the sequence loss alone.
pub fn combined_loss(tape: &mut Tape, seq_loss: Var, ce: Var, lambda: f64) -> Result<Var> {
    if lambda < 0.0 {
        return Err(Error::invalid_argument("lambda must be nonnegative"));
    }
    if lambda == 0.0 {
        return Ok(seq_loss);
    }
    let scaled = tape.scale(ce, lambda);
    Ok(tape.add(seq_loss, scaled))
}
