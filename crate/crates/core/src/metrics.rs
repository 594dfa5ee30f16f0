//! Edit-distance machinery: CER/WER counts, equal-length prefix CER, and
//! pseudo-true hypothesis selection.
//!
//! Losses consume raw edit-distance counts; reporting normalizes by
//! reference length times 100.

use crate::error::{Error, Result};

/// Breakdown of a minimal edit script.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditStats {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub total: usize,
}

/// Levenshtein distance with unit costs between `reference` and `hypothesis`.
///
/// Insertions are extra hypothesis tokens, deletions are missing reference
/// tokens. Backtrace tie-break prefers substitution over insertion over
/// deletion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditStats {
    let n = reference.len();
    let m = hypothesis.len();
    // cell = (cost, subs, ins, dels)
    let mut dp = vec![(0usize, 0usize, 0usize, 0usize); (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for j in 1..=m {
        dp[idx(0, j)] = (j, 0, j, 0);
    }
    for i in 1..=n {
        dp[idx(i, 0)] = (i, 0, 0, i);
    }
    for i in 1..=n {
        for j in 1..=m {
            let mat = reference[i - 1] == hypothesis[j - 1];
            let diag = dp[idx(i - 1, j - 1)];
            let sub_cost = diag.0 + if mat { 0 } else { 1 };
            let ins = dp[idx(i, j - 1)];
            let del = dp[idx(i - 1, j)];
            // preference order on ties: substitution, insertion, deletion
            let mut best = (
                sub_cost,
                diag.1 + if mat { 0 } else { 1 },
                diag.2,
                diag.3,
            );
            if ins.0 + 1 < best.0 {
                best = (ins.0 + 1, ins.1, ins.2 + 1, ins.3);
            }
            if del.0 + 1 < best.0 {
                best = (del.0 + 1, del.1, del.2, del.3 + 1);
            }
            dp[idx(i, j)] = best;
        }
    }
    let (total, substitutions, insertions, deletions) = dp[idx(n, m)];
    EditStats {
        substitutions,
        insertions,
        deletions,
        total,
    }
}

/// Raw edit-distance count between character sequences; the quantity the
/// sequence losses add to scores.
pub fn cer_count<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    edit_distance(reference, hypothesis).total
}

/// Edit distance between the first `l` tokens of each side. A side shorter
/// than `l` contributes its full sequence.
pub fn prefix_cer<T: PartialEq>(reference: &[T], hypothesis: &[T], l: usize) -> usize {
    let r = &reference[..l.min(reference.len())];
    let h = &hypothesis[..l.min(hypothesis.len())];
    edit_distance(r, h).total
}

/// Word error rate over single-space-tokenized texts, as a ratio.
///
/// With an empty reference and a nonempty hypothesis every hypothesis word
/// is an insertion and the ratio is reported against a length of 1.
pub fn wer(reference_text: &str, hypothesis_text: &str) -> f64 {
    let r: Vec<&str> = reference_text.split(' ').filter(|w| !w.is_empty()).collect();
    let h: Vec<&str> = hypothesis_text.split(' ').filter(|w| !w.is_empty()).collect();
    if r.is_empty() {
        return h.len() as f64;
    }
    edit_distance(&r, &h).total as f64 / r.len() as f64
}

/// Index of the N-best member with the lowest CER against `reference`.
/// Ties break by higher log-probability, then by lower index.
pub fn select_pseudo_true<T: PartialEq>(
    nbest: &[(Vec<T>, f64)],
    reference: &[T],
) -> Result<usize> {
    if nbest.is_empty() {
        return Err(Error::invalid_argument(
            "pseudo-true selection from an empty N-best list",
        ));
    }
    let mut best = 0usize;
    let mut best_cer = cer_count(reference, &nbest[0].0);
    for (i, (tokens, logprob)) in nbest.iter().enumerate().skip(1) {
        let c = cer_count(reference, tokens);
        if c < best_cer || (c == best_cer && *logprob > nbest[best].1) {
            best = i;
            best_cer = c;
        }
    }
    Ok(best)
}
