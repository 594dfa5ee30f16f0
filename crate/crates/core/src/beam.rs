//! N-best beam decoding with per-step prefix bookkeeping.
//!
//! Each hypothesis carries both its cumulative log-probability (for pruning)
//! and its cumulative selected-token raw-logit sum (for margin losses), plus
//! tape handles for every per-step quantity so gradients can flow through
//! the scores of whatever the losses select. A [`BeamTrace`] records the
//! post-pruning beam at every step; the prefix-boosting loss consumes it.

use ndarray::Array2;

use crate::autodiff::{BoundParams, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{DecoderContext, EncoderOutput, Model};

/// One beam hypothesis.
#[derive(Debug, Clone)]
pub struct PrefixRecord {
    /// Emitted token ids, excluding <sos>.
    pub tokens: Vec<usize>,
    /// Cumulative log-probability (numeric mirror of `logp_var`).
    pub logp_sum: f64,
    /// Cumulative selected-token raw logit Σ_l s_l[y_l].
    pub logit_sum: f64,
    /// Per-step selected raw logits.
    pub step_logits: Vec<Var>,
    /// Cumulative raw-logit prefix sums; entry l-1 is Σ_{i<=l} s_i[y_i].
    pub cum_logits: Vec<Var>,
    /// Cumulative log-probability as a tape node.
    pub logp_var: Var,
    pub ctx: DecoderContext,
    /// Set once <eos> is emitted; finished records are never extended.
    pub finished: bool,
}

impl PrefixRecord {
    fn root(tape: &mut Tape, ctx: DecoderContext) -> Self {
        PrefixRecord {
            tokens: Vec::new(),
            logp_sum: 0.0,
            logit_sum: 0.0,
            step_logits: Vec::new(),
            cum_logits: Vec::new(),
            logp_var: tape.scalar(0.0),
            ctx,
            finished: false,
        }
    }

    /// Σ_{i<=l} of the per-step selected logits as a tape node; l = 0 gives
    /// a constant zero.
    pub fn raw_prefix_score(&self, tape: &mut Tape, l: usize) -> Result<Var> {
        if l > self.tokens.len() {
            return Err(Error::invalid_argument(format!(
                "prefix length {} exceeds hypothesis length {}",
                l,
                self.tokens.len()
            )));
        }
        Ok(if l == 0 {
            tape.scalar(0.0)
        } else {
            self.cum_logits[l - 1]
        })
    }

    /// Numeric value of [`PrefixRecord::raw_prefix_score`].
    pub fn raw_prefix_score_value(&self, tape: &Tape, l: usize) -> Result<f64> {
        if l > self.tokens.len() {
            return Err(Error::invalid_argument(format!(
                "prefix length {} exceeds hypothesis length {}",
                l,
                self.tokens.len()
            )));
        }
        Ok(if l == 0 {
            0.0
        } else {
            tape.scalar_value(self.cum_logits[l - 1])
        })
    }
}

/// Post-pruning beam snapshots, one per decoding step.
#[derive(Debug, Clone, Default)]
pub struct BeamTrace {
    pub snapshots: Vec<Vec<PrefixRecord>>,
}

struct Candidate {
    parent: usize,
    /// Extension token, or `None` for a finished pass-through.
    token: Option<usize>,
    logp_sum: f64,
}

/// Expand every unfinished record over the full vocabulary, rank all
/// candidates by cumulative log-probability and keep the top `n`. Finished
/// records pass through with their final scores. Ties break by smaller
/// token id, then earlier parent index.
pub fn beam_step(
    model: &Model,
    tape: &mut Tape,
    params: &BoundParams,
    enc: &EncoderOutput,
    beam: &[PrefixRecord],
    n: usize,
) -> Result<Vec<PrefixRecord>> {
    if beam.is_empty() {
        return Err(Error::invalid_argument("beam_step on an empty beam"));
    }
    if n < 1 {
        return Err(Error::invalid_argument("beam size must be at least 1"));
    }
    let vocab = model.config.vocab_size;

    // Decode one step per live record, then rank candidates numerically;
    // tape nodes for selected tokens are created only for survivors.
    let mut steps: Vec<Option<(DecoderContext, Var, Var)>> = Vec::with_capacity(beam.len());
    let mut candidates: Vec<Candidate> = Vec::new();
    for (pi, rec) in beam.iter().enumerate() {
        if rec.finished {
            steps.push(None);
            candidates.push(Candidate {
                parent: pi,
                token: None,
                logp_sum: rec.logp_sum,
            });
            continue;
        }
        let (ctx, s, logp) = model.step(tape, params, &rec.ctx, enc)?;
        for tok in 0..vocab {
            candidates.push(Candidate {
                parent: pi,
                token: Some(tok),
                logp_sum: rec.logp_sum + tape.value(logp)[[tok]],
            });
        }
        steps.push(Some((ctx, s, logp)));
    }

    // pass-throughs tie-break on their own last token
    let tie_key = |c: &Candidate| {
        (
            c.token
                .or_else(|| beam[c.parent].tokens.last().copied())
                .unwrap_or(0),
            c.parent,
        )
    };
    candidates.sort_by(|a, b| {
        b.logp_sum
            .partial_cmp(&a.logp_sum)
            .expect("non-finite beam score")
            .then_with(|| tie_key(a).cmp(&tie_key(b)))
    });
    candidates.truncate(n);

    let mut out = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let parent = &beam[cand.parent];
        match cand.token {
            None => out.push(parent.clone()),
            Some(tok) => {
                let (ctx, s, logp) = steps[cand.parent].as_ref().expect("live parent");
                let logit = tape.index(*s, tok);
                let logp_tok = tape.index(*logp, tok);
                let mut tokens = parent.tokens.clone();
                tokens.push(tok);
                let cum = match parent.cum_logits.last() {
                    Some(&prev) => tape.add(prev, logit),
                    None => logit,
                };
                let logp_var = tape.add(parent.logp_var, logp_tok);
                let mut step_logits = parent.step_logits.clone();
                step_logits.push(logit);
                let mut cum_logits = parent.cum_logits.clone();
                cum_logits.push(cum);
                let mut ctx = ctx.clone();
                ctx.y_prev = tok;
                out.push(PrefixRecord {
                    tokens,
                    logp_sum: cand.logp_sum,
                    logit_sum: parent.logit_sum + tape.scalar_value(logit),
                    step_logits,
                    cum_logits,
                    logp_var,
                    ctx,
                    finished: tok == model.config.eos_id,
                });
            }
        }
    }
    Ok(out)
}

/// Full N-best beam search. Iterates [`beam_step`] until every record has
/// finished or `max_len` steps were taken; records still live at `max_len`
/// are force-terminated with <eos> (its logit and log-probability appended).
/// The N-best list is sorted by cumulative log-probability, descending.
pub fn beam_search(
    model: &Model,
    tape: &mut Tape,
    params: &BoundParams,
    features: &Array2<f64>,
    n: usize,
    max_len: usize,
) -> Result<(Vec<PrefixRecord>, BeamTrace)> {
    if max_len < 1 {
        return Err(Error::invalid_argument("max_len must be at least 1"));
    }
    if n < 1 {
        return Err(Error::invalid_argument("beam size must be at least 1"));
    }
    let enc = model.encode(tape, params, features)?;
    let ctx = model.init_context(tape, enc.frames);
    let mut beam = vec![PrefixRecord::root(tape, ctx)];
    let mut trace = BeamTrace::default();

    for _step in 0..max_len {
        beam = beam_step(model, tape, params, &enc, &beam, n)?;
        trace.snapshots.push(beam.clone());
        if beam.iter().all(|r| r.finished) {
            break;
        }
    }

    let eos = model.config.eos_id;
    for rec in beam.iter_mut() {
        if rec.finished {
            continue;
        }
        let (mut ctx, s, logp) = model.step(tape, params, &rec.ctx, &enc)?;
        let logit = tape.index(s, eos);
        let logp_tok = tape.index(logp, eos);
        rec.tokens.push(eos);
        rec.logp_sum += tape.scalar_value(logp_tok);
        rec.logit_sum += tape.scalar_value(logit);
        let cum = match rec.cum_logits.last() {
            Some(&prev) => tape.add(prev, logit),
            None => logit,
        };
        rec.step_logits.push(logit);
        rec.cum_logits.push(cum);
        rec.logp_var = tape.add(rec.logp_var, logp_tok);
        ctx.y_prev = eos;
        rec.ctx = ctx;
        rec.finished = true;
    }

    beam.sort_by(|a, b| {
        b.logp_sum
            .partial_cmp(&a.logp_sum)
            .expect("non-finite beam score")
    });
    Ok((beam, trace))
}

/// Default decode-length cap: twice the frame count, at most 200.
pub fn default_max_len(frames: usize) -> usize {
    (2 * frames).clamp(1, 200)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::BoundParams;
    use crate::model::tests::{micro_config, random_features};

    fn setup() -> (Model, crate::autodiff::Params) {
        let model = Model::new(micro_config()).unwrap();
        let params = model.init_params(77);
        (model, params)
    }

    #[test]
    fn greedy_equals_beam_one() {
        let (model, params) = setup();
        let x = random_features(5, 3, 78);

        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &params);
        let (nbest, _) = beam_search(&model, &mut tape, &bound, &x, 1, 10).unwrap();
        assert_eq!(nbest.len(), 1);

        // manual greedy
        let mut tape2 = Tape::new();
        let bound2 = BoundParams::bind(&mut tape2, &params);
        let enc = model.encode(&mut tape2, &bound2, &x).unwrap();
        let mut ctx = model.init_context(&mut tape2, enc.frames);
        let mut tokens = Vec::new();
        for _ in 0..10 {
            let (new_ctx, _s, logp) = model.step(&mut tape2, &bound2, &ctx, &enc).unwrap();
            let lv = tape2.value(logp);
            let best = (0..lv.len())
                .max_by(|&a, &b| lv[[a]].partial_cmp(&lv[[b]]).unwrap())
                .unwrap();
            tokens.push(best);
            ctx = new_ctx;
            ctx.y_prev = best;
            if best == model.config.eos_id {
                break;
            }
        }
        if *tokens.last().unwrap() != model.config.eos_id {
            tokens.push(model.config.eos_id);
        }
        assert_eq!(nbest[0].tokens, tokens);
    }

    #[test]
    fn logp_sum_matches_self_feedback_chain() {
        let (model, params) = setup();
        let x = random_features(4, 3, 79);
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &params);
        let (nbest, _) = beam_search(&model, &mut tape, &bound, &x, 3, 8).unwrap();
        for rec in &nbest {
            let mut tape2 = Tape::new();
            let bound2 = BoundParams::bind(&mut tape2, &params);
            let lp = model
                .sequence_log_prob(&mut tape2, &bound2, &x, &rec.tokens)
                .unwrap();
            assert!(
                (rec.logp_sum - tape2.scalar_value(lp)).abs() < 1e-9,
                "beam logp {} vs chain {}",
                rec.logp_sum,
                tape2.scalar_value(lp)
            );
            // logp_var mirrors logp_sum
            assert!((rec.logp_sum - tape.scalar_value(rec.logp_var)).abs() < 1e-12);
        }
    }

    #[test]
    fn record_invariants_hold() {
        let (model, params) = setup();
        let x = random_features(4, 3, 80);
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &params);
        let (nbest, trace) = beam_search(&model, &mut tape, &bound, &x, 4, 6).unwrap();
        for rec in &nbest {
            assert!(rec.finished);
            assert_eq!(rec.step_logits.len(), rec.tokens.len());
            assert!(rec.logp_sum <= 0.0);
            let sum: f64 = rec
                .step_logits
                .iter()
                .map(|&v| tape.scalar_value(v))
                .sum();
            assert!((sum - rec.logit_sum).abs() < 1e-12);
            assert!(
                (rec.raw_prefix_score_value(&tape, rec.tokens.len()).unwrap() - rec.logit_sum)
                    .abs()
                    < 1e-12
            );
        }
        for (l, snap) in trace.snapshots.iter().enumerate() {
            assert!(snap.len() <= 4);
            let mut seen = std::collections::HashSet::new();
            for rec in snap {
                assert!(rec.tokens.len() <= l + 1);
                assert!(seen.insert(rec.tokens.clone()), "duplicate prefix");
            }
        }
    }

    #[test]
    fn raw_prefix_score_examples() {
        let mut tape = Tape::new();
        let a = tape.leaf(ndarray::array![1.5].into_dyn());
        let b = tape.leaf(ndarray::array![-0.5].into_dyn());
        let cum1 = a;
        let cum2 = tape.add(a, b);
        let ctx = DecoderContext {
            layers: vec![],
            a_prev: tape.scalar(1.0),
            y_prev: 0,
        };
        let rec = PrefixRecord {
            tokens: vec![2, 1],
            logp_sum: -1.0,
            logit_sum: 1.0,
            step_logits: vec![a, b],
            cum_logits: vec![cum1, cum2],
            logp_var: tape.scalar(-1.0),
            ctx,
            finished: true,
        };
        let z = rec.raw_prefix_score(&mut tape, 0).unwrap();
        assert_eq!(tape.scalar_value(z), 0.0);
        assert_eq!(rec.raw_prefix_score_value(&tape, 2).unwrap(), 1.0);
        assert!(rec.raw_prefix_score(&mut tape, 3).is_err());
    }

    #[test]
    fn beam_counts_and_errors() {
        let (model, params) = setup();
        let x = random_features(3, 3, 81);
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, &params);
        let enc = model.encode(&mut tape, &bound, &x).unwrap();
        let ctx = model.init_context(&mut tape, enc.frames);
        let root = PrefixRecord::root(&mut tape, ctx);
        assert!(beam_step(&model, &mut tape, &bound, &enc, &[root.clone()], 0).is_err());
        assert!(beam_step(&model, &mut tape, &bound, &enc, &[], 2).is_err());
        // vocab 4: single live root expands to min(n, 4) candidates
        let out = beam_step(&model, &mut tape, &bound, &enc, &[root], 100).unwrap();
        assert_eq!(out.len(), 4);
    }

    #[test]
    fn determinism_of_traces() {
        let (model, params) = setup();
        let x = random_features(5, 3, 82);
        let run = || {
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, &params);
            let (nbest, trace) = beam_search(&model, &mut tape, &bound, &x, 3, 7).unwrap();
            let toks: Vec<Vec<usize>> = nbest.iter().map(|r| r.tokens.clone()).collect();
            let lps: Vec<f64> = nbest.iter().map(|r| r.logp_sum).collect();
            let snaps: Vec<Vec<Vec<usize>>> = trace
                .snapshots
                .iter()
                .map(|s| s.iter().map(|r| r.tokens.clone()).collect())
                .collect();
            (toks, lps, snaps)
        };
        assert_eq!(run(), run());
    }
}
