//! Cross-view average precision and word error rate.

use std::fmt;

use crate::error::{Error, Result};
use crate::parallel::par_map;
use crate::tensor::{dot, norm};

/// Cosine distance `1 - x·y / (|x| |y|)`, in `[0, 2]`.
pub fn cosine_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Numeric("cosine distance of a zero vector".into()));
    }
    Ok(1.0 - dot(x, y) / (nx * ny))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedPair {
    pub segment: usize,
    pub word: usize,
    pub distance: f64,
    pub is_match: bool,
}

/// Every (acoustic segment, word) pair with its distance.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedPairSet {
    pub pairs: Vec<RankedPair>,
}

impl RankedPairSet {
    /// Scores all `M × N` pairs. `segments` carry their word label; `words`
    /// are `(label, embedding)`.
    pub fn build(segments: &[(Vec<f64>, usize)], words: &[(usize, Vec<f64>)]) -> Result<Self> {
        let rows: Vec<Result<Vec<RankedPair>>> = par_map(
            &segments.iter().enumerate().collect::<Vec<_>>(),
            |&(i, (emb, label))| {
                words
                    .iter()
                    .enumerate()
                    .map(|(j, (w, g))| {
                        Ok(RankedPair {
                            segment: i,
                            word: j,
                            distance: cosine_distance(emb, g)?,
                            is_match: w == label,
                        })
                    })
                    .collect()
            },
        );
        let mut pairs = Vec::with_capacity(segments.len() * words.len());
        for r in rows {
            pairs.extend(r?);
        }
        Ok(Self { pairs })
    }

    /// Average precision of the ranking by ascending distance.
    ///
    /// Pairs at exactly equal distance form one tie group and are admitted
    /// together: every positive in the group receives the precision measured
    /// at the end of the group.
    pub fn average_precision(&self) -> Result<f64> {
        let mut scored: Vec<(f64, bool)> = self.pairs.iter().map(|p| (p.distance, p.is_match)).collect();
        average_precision(&mut scored)
    }
}

/// Average precision over `(distance, is_match)` pairs; see
/// [`RankedPairSet::average_precision`] for tie handling.
pub fn average_precision(scored: &mut [(f64, bool)]) -> Result<f64> {
    if let Some(bad) = scored.iter().find(|(d, _)| !d.is_finite()) {
        return Err(Error::Numeric(format!("non-finite distance {}", bad.0)));
    }
    let positives = scored.iter().filter(|(_, m)| *m).count();
    if positives == 0 {
        return Err(Error::data("average precision needs at least one positive pair"));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut sum = 0.0;
    let mut tp = 0usize;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        let mut group_tp = 0;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            group_tp += scored[j].1 as usize;
            j += 1;
        }
        tp += group_tp;
        sum += group_tp as f64 * tp as f64 / j as f64;
        i = j;
    }
    Ok(sum / positives as f64)
}

/// Cross-view AP of labelled acoustic embeddings against word embeddings.
pub fn cross_view_ap(segments: &[(Vec<f64>, usize)], words: &[(usize, Vec<f64>)]) -> Result<f64> {
    if segments.is_empty() || words.len() < 2 {
        return Err(Error::data("cross-view AP needs M ≥ 1 segments and N ≥ 2 words"));
    }
    RankedPairSet::build(segments, words)?.average_precision()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WerReport {
    pub wer: f64,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_words: usize,
}

impl fmt::Display for WerReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "wer={:.6} substitutions={} insertions={} deletions={} reference_words={}",
            self.wer, self.substitutions, self.insertions, self.deletions, self.reference_words
        )
    }
}

/// Minimum-edit alignment of one hypothesis against its reference, returning
/// `(substitutions, insertions, deletions)`.
fn align<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> (usize, usize, usize) {
    let (n, m) = (reference.len(), hypothesis.len());
    // (cost, subs, ins, dels)
    let mut dp = vec![vec![(0usize, 0usize, 0usize, 0usize); m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = (i, 0, 0, i);
    }
    for (j, cell) in dp[0].iter_mut().enumerate() {
        *cell = (j, 0, j, 0);
    }
    for i in 1..=n {
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            let d = dp[i - 1][j - 1];
            let diag = if same { d } else { (d.0 + 1, d.1 + 1, d.2, d.3) };
            let u = dp[i - 1][j];
            let up = (u.0 + 1, u.1, u.2, u.3 + 1);
            let l = dp[i][j - 1];
            let left = (l.0 + 1, l.1, l.2 + 1, l.3);
            dp[i][j] = [diag, up, left]
                .into_iter()
                .min_by_key(|c| c.0)
                .expect("three candidates");
        }
    }
    let (_, s, ins, del) = dp[n][m];
    (s, ins, del)
}

/// One step of a minimum-edit alignment, holding reference and hypothesis
/// indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edit {
    Match(usize, usize),
    Substitute(usize, usize),
    Insert(usize),
    Delete(usize),
}

/// Minimum-edit alignment as a list of operations in transcript order.
/// Among equal-cost alignments, matches and substitutions are preferred
/// over deletions, and deletions over insertions.
pub fn edit_alignment<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Vec<Edit> {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut cost = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in cost.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, c) in cost[0].iter_mut().enumerate() {
        *c = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            cost[i][j] = (cost[i - 1][j - 1] + sub)
                .min(cost[i - 1][j] + 1)
                .min(cost[i][j - 1] + 1);
        }
    }
    let (mut i, mut j) = (n, m);
    let mut ops = Vec::with_capacity(n.max(m));
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            if cost[i][j] == cost[i - 1][j - 1] + usize::from(!same) {
                ops.push(if same {
                    Edit::Match(i - 1, j - 1)
                } else {
                    Edit::Substitute(i - 1, j - 1)
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && cost[i][j] == cost[i - 1][j] + 1 {
            ops.push(Edit::Delete(i - 1));
            i -= 1;
        } else {
            ops.push(Edit::Insert(j - 1));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Corpus-level word error rate.
pub fn wer<S: AsRef<str>>(refs: &[Vec<S>], hyps: &[Vec<S>]) -> Result<WerReport> {
    if refs.len() != hyps.len() {
        return Err(Error::data(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let reference_words: usize = refs.iter().map(Vec::len).sum();
    if reference_words == 0 {
        return Err(Error::data("WER is undefined with zero reference words"));
    }
    let mut report = WerReport {
        reference_words,
        ..WerReport::default()
    };
    for (r, h) in refs.iter().zip(hyps) {
        let (s, i, d) = align(r, h);
        report.substitutions += s;
        report.insertions += i;
        report.deletions += d;
    }
    report.wer = (report.substitutions + report.insertions + report.deletions) as f64 / reference_words as f64;
    Ok(report)
}
