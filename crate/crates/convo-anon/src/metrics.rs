//! Evaluation protocol: trial-pair construction, EER/FAR scoring, DER
//! with optimal speaker mapping, and WER.
//!
//! Verification trials follow the three pair families of the protocol:
//! positives are duration-halved single-speaker aggregations, negatives
//! are ordered cross-speaker pairs within each conversation, and O-A
//! pairs match each original speaker with their anonymized counterpart.
//! The attacker threshold is fitted at the equal error rate on the
//! original pairs; FAR is the fraction of O-A pairs accepted there.

use std::collections::BTreeMap;

use crate::diarizer::WindowedEmbeddingStream;
use crate::embeddings::cosine_values;
use crate::error::{Error, Result};
use crate::rttm::RttmDocument;
use crate::textio::format_real;

/// Frame resolution shared by every rasterization in the crate.
pub const FRAME_SECONDS: f64 = 0.01;

/// A single-speaker span: its duration and its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Span {
    pub duration: f64,
    pub vector: Vec<f64>,
}

/// Per-speaker span embeddings of one conversation.
pub type SpeakerSpans = BTreeMap<String, Vec<Span>>;

/// Slice a stream into per-speaker span embeddings along an RTTM
/// timeline. Each segment's embedding is the overlap-weighted mean of the
/// active windows it covers; segments without active windows are skipped,
/// and speakers left without spans are omitted.
pub fn speaker_spans(doc: &RttmDocument, stream: &WindowedEmbeddingStream) -> Result<SpeakerSpans> {
    let mut out: SpeakerSpans = BTreeMap::new();
    let window_len = stream.window_length();
    for segment in doc.segments() {
        let mut weight_sum = 0.0;
        let mut vector = vec![0.0; stream.dim()];
        for (idx, window) in stream.windows().iter().enumerate() {
            if !stream.speech_mask()[idx] {
                continue;
            }
            let lo = window.onset().max(segment.onset());
            let hi = (window.onset() + window_len).min(segment.end());
            let w = hi - lo;
            if w > 0.0 {
                weight_sum += w;
                for (acc, v) in vector.iter_mut().zip(window.values()) {
                    *acc += w * v;
                }
            }
        }
        if weight_sum > 0.0 {
            for v in &mut vector {
                *v /= weight_sum;
            }
            out.entry(segment.speaker().to_string())
                .or_default()
                .push(Span {
                    duration: segment.duration(),
                    vector,
                });
        }
    }
    Ok(out)
}

/// Duration-weighted mean of span embeddings: the aggregated speaker
/// embedding used for verification trials.
pub fn pooled_embedding(spans: &[Span]) -> Result<Vec<f64>> {
    if spans.is_empty() {
        return Err(Error::EmptyCollection("spans to pool".to_string()));
    }
    let dim = spans[0].vector.len();
    let mut total = 0.0;
    let mut out = vec![0.0; dim];
    for span in spans {
        if span.vector.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: span.vector.len(),
            });
        }
        total += span.duration;
        for (acc, v) in out.iter_mut().zip(&span.vector) {
            *acc += span.duration * v;
        }
    }
    if total <= 0.0 {
        return Err(Error::EmptyCollection("spans have no duration".to_string()));
    }
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Split spans at the cumulative-duration midpoint; a straddling span is
/// cut in two, keeping its embedding on both sides.
fn half_spans(spans: &[Span]) -> (Vec<Span>, Vec<Span>) {
    let total: f64 = spans.iter().map(|s| s.duration).sum();
    let half = total / 2.0;
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut acc = 0.0;
    for span in spans {
        if acc >= half {
            second.push(span.clone());
        } else if acc + span.duration <= half {
            acc += span.duration;
            first.push(span.clone());
        } else {
            let cut = half - acc;
            first.push(Span {
                duration: cut,
                vector: span.vector.clone(),
            });
            second.push(Span {
                duration: span.duration - cut,
                vector: span.vector.clone(),
            });
            acc = half;
        }
    }
    (first, second)
}

/// The three trial-pair families used by the protocol.
#[derive(Debug, Clone, Default)]
pub struct TrialPairSet {
    pub positives: Vec<(Vec<f64>, Vec<f64>)>,
    pub negatives: Vec<(Vec<f64>, Vec<f64>)>,
    pub oa_pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl TrialPairSet {
    /// Cosine scores of every pair family.
    pub fn scores(&self) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let score = |pairs: &[(Vec<f64>, Vec<f64>)]| -> Result<Vec<f64>> {
            pairs.iter().map(|(a, b)| cosine_values(a, b)).collect()
        };
        Ok((
            score(&self.positives)?,
            score(&self.negatives)?,
            score(&self.oa_pairs)?,
        ))
    }
}

/// Build trial pairs over conversations indexed identically in
/// `originals` and `anonymized`:
///
/// - positives: the two duration halves of each speaker's original
///   aggregation, mean-pooled per half;
/// - negatives: ordered same-conversation speaker pairs (n, k != n) of
///   original aggregations (cosine is symmetric, so both directions only
///   duplicate scores and leave the EER unchanged);
/// - O-A pairs: each original aggregation against its anonymized
///   counterpart.
pub fn build_pairs(originals: &[SpeakerSpans], anonymized: &[SpeakerSpans]) -> Result<TrialPairSet> {
    if originals.is_empty() {
        return Err(Error::EmptyCollection("conversations".to_string()));
    }
    if originals.len() != anonymized.len() {
        return Err(Error::Contract(format!(
            "{} original conversations vs {} anonymized",
            originals.len(),
            anonymized.len()
        )));
    }
    let mut pairs = TrialPairSet::default();
    let mut speakers_seen = 0usize;
    for (m, (orig, anon)) in originals.iter().zip(anonymized).enumerate() {
        if orig.keys().ne(anon.keys()) {
            return Err(Error::Contract(format!(
                "conversation {m}: original and anonymized speaker sets differ"
            )));
        }
        let mut aggregates: Vec<(&String, Vec<f64>)> = Vec::with_capacity(orig.len());
        for (speaker, spans) in orig {
            if spans.is_empty() {
                return Err(Error::EmptyCollection(format!(
                    "conversation {m}: speaker {speaker} has no spans"
                )));
            }
            speakers_seen += 1;
            let (h1, h2) = half_spans(spans);
            pairs
                .positives
                .push((pooled_embedding(&h1)?, pooled_embedding(&h2)?));
            let agg_o = pooled_embedding(spans)?;
            let agg_a = pooled_embedding(&anon[speaker])?;
            pairs.oa_pairs.push((agg_o.clone(), agg_a));
            aggregates.push((speaker, agg_o));
        }
        for (n, (_, a)) in aggregates.iter().enumerate() {
            for (k, (_, b)) in aggregates.iter().enumerate() {
                if n != k {
                    pairs.negatives.push((a.clone(), b.clone()));
                }
            }
        }
    }
    if speakers_seen == 0 {
        return Err(Error::EmptyCollection("speakers".to_string()));
    }
    Ok(pairs)
}

/// Sweep candidate thresholds (midpoints of sorted unique scores plus
/// sentinels below and above) and return the equal-error operating point:
/// the threshold minimizing |FAR - FRR| (lowest such threshold on ties)
/// and EER = (FAR + FRR) / 2 there. Acceptance uses `score >= threshold`.
pub fn eer_threshold(pos_scores: &[f64], neg_scores: &[f64]) -> Result<(f64, f64)> {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(Error::EmptyCollection(
            "EER needs both positive and negative scores".to_string(),
        ));
    }
    let mut unique: Vec<f64> = pos_scores.iter().chain(neg_scores).copied().collect();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    let mut candidates = Vec::with_capacity(unique.len() + 1);
    candidates.push(unique[0] - 1.0);
    for pair in unique.windows(2) {
        candidates.push((pair[0] + pair[1]) / 2.0);
    }
    candidates.push(unique[unique.len() - 1] + 1.0);

    let mut best: Option<(f64, f64, f64)> = None; // (|far-frr|, threshold, eer)
    for &t in &candidates {
        let far = neg_scores.iter().filter(|&&s| s >= t).count() as f64 / neg_scores.len() as f64;
        let frr = pos_scores.iter().filter(|&&s| s < t).count() as f64 / pos_scores.len() as f64;
        let gap = (far - frr).abs();
        if best.is_none_or(|(g, _, _)| gap < g) {
            best = Some((gap, t, (far + frr) / 2.0));
        }
    }
    let (_, threshold, eer) = best.expect("candidate list is non-empty");
    Ok((eer, threshold))
}

/// Fraction of scores accepted at the threshold (decision `score >= t`).
pub fn far_at_threshold(scores: &[f64], threshold: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyCollection("scores for FAR".to_string()));
    }
    Ok(scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64)
}

/// DER breakdown as fractions of total reference speech time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerBreakdown {
    pub der: f64,
    pub missed: f64,
    pub false_alarm: f64,
    pub confusion: f64,
}

/// Diarization error rate at 10 ms resolution with an optimal one-to-one
/// speaker mapping (maximum total overlap) and an optional no-score
/// collar around reference boundaries.
pub fn der(reference: &RttmDocument, hypothesis: &RttmDocument, collar: f64) -> Result<DerBreakdown> {
    if reference.is_empty() {
        return Err(Error::UndefinedRate(
            "reference has no speech".to_string(),
        ));
    }
    if collar < 0.0 || !collar.is_finite() {
        return Err(Error::InvalidConfig(format!("invalid collar {collar}")));
    }

    let ref_speakers: Vec<&str> = reference.speakers().into_iter().collect();
    let hyp_speakers: Vec<&str> = hypothesis.speakers().into_iter().collect();
    let end = reference.end().max(hypothesis.end());
    let n_frames = ((end / FRAME_SECONDS) - 1e-9).ceil() as usize;

    let activity = |doc: &RttmDocument, speakers: &[&str]| -> Vec<Vec<bool>> {
        let index: BTreeMap<&str, usize> =
            speakers.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let mut rows = vec![vec![false; n_frames]; speakers.len()];
        for seg in doc.segments() {
            let spk = index[seg.speaker()];
            for (f, slot) in rows[spk].iter_mut().enumerate() {
                let t = (f as f64 + 0.5) * FRAME_SECONDS;
                if t >= seg.onset() && t < seg.end() {
                    *slot = true;
                }
            }
        }
        rows
    };
    let ref_active = activity(reference, &ref_speakers);
    let hyp_active = activity(hypothesis, &hyp_speakers);

    let mut scored = vec![true; n_frames];
    if collar > 0.0 {
        for seg in reference.segments() {
            for boundary in [seg.onset(), seg.end()] {
                let lo = ((boundary - collar) / FRAME_SECONDS).floor().max(0.0) as usize;
                let hi = (((boundary + collar) / FRAME_SECONDS).ceil() as usize).min(n_frames);
                for (f, s) in scored.iter_mut().enumerate().take(hi).skip(lo) {
                    let t = (f as f64 + 0.5) * FRAME_SECONDS;
                    if t >= boundary - collar && t <= boundary + collar {
                        *s = false;
                    }
                }
            }
        }
    }

    // Overlap matrix between reference and hypothesis speakers.
    let mut overlap = vec![vec![0i64; hyp_speakers.len().max(1)]; ref_speakers.len().max(1)];
    for f in 0..n_frames {
        if !scored[f] {
            continue;
        }
        for (i, row) in ref_active.iter().enumerate() {
            if row[f] {
                for (j, hrow) in hyp_active.iter().enumerate() {
                    if hrow[f] {
                        overlap[i][j] += 1;
                    }
                }
            }
        }
    }
    let mapping = best_mapping(&overlap, ref_speakers.len(), hyp_speakers.len());

    let mut total = 0i64;
    let mut miss = 0i64;
    let mut fa = 0i64;
    let mut conf = 0i64;
    for f in 0..n_frames {
        if !scored[f] {
            continue;
        }
        let r = ref_active.iter().filter(|row| row[f]).count() as i64;
        let h = hyp_active.iter().filter(|row| row[f]).count() as i64;
        let correct = mapping
            .iter()
            .enumerate()
            .filter(|&(i, &j)| {
                j.is_some_and(|j| ref_active[i][f] && hyp_active[j][f])
            })
            .count() as i64;
        total += r;
        miss += (r - h).max(0);
        fa += (h - r).max(0);
        conf += r.min(h) - correct;
    }
    if total == 0 {
        return Err(Error::UndefinedRate(
            "no scored reference speech (collar removed everything)".to_string(),
        ));
    }
    let t = total as f64;
    Ok(DerBreakdown {
        der: (miss + fa + conf) as f64 / t,
        missed: miss as f64 / t,
        false_alarm: fa as f64 / t,
        confusion: conf as f64 / t,
    })
}

/// Maximum-overlap one-to-one mapping from reference to hypothesis
/// speakers via a dense Hungarian assignment on the padded square matrix.
fn best_mapping(overlap: &[Vec<i64>], n_ref: usize, n_hyp: usize) -> Vec<Option<usize>> {
    if n_ref == 0 || n_hyp == 0 {
        return vec![None; n_ref];
    }
    let m = n_ref.max(n_hyp);
    let max_entry = overlap
        .iter()
        .flatten()
        .copied()
        .max()
        .unwrap_or(0)
        .max(1);
    let costs: Vec<Vec<i64>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    if i < n_ref && j < n_hyp {
                        max_entry - overlap[i][j]
                    } else {
                        max_entry
                    }
                })
                .collect()
        })
        .collect();
    let assignment = hungarian_min(&costs);
    (0..n_ref)
        .map(|i| {
            let j = assignment[i];
            if j < n_hyp && overlap[i][j] > 0 {
                Some(j)
            } else {
                None
            }
        })
        .collect()
}

/// Dense O(n^3) Hungarian algorithm over integer costs; returns the
/// column assigned to each row.
fn hungarian_min(costs: &[Vec<i64>]) -> Vec<usize> {
    let n = costs.len();
    if n == 0 {
        return Vec::new();
    }
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = costs[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// WER breakdown: minimal substitutions + deletions + insertions over the
/// reference length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WerBreakdown {
    pub wer: f64,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

/// Unit-cost edit-distance alignment. Among minimal alignments the one
/// with the fewest insertions is reported, which makes the decomposition
/// canonical and swap-dual (swapping roles exchanges insertions and
/// deletions exactly).
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<WerBreakdown> {
    if reference.is_empty() {
        return Err(Error::UndefinedRate("empty reference".to_string()));
    }
    let n = reference.len();
    let m = hypothesis.len();
    // DP over (total edits, insertions), minimized lexicographically.
    let mut prev: Vec<(usize, usize)> = (0..=m).map(|j| (j, j)).collect();
    let mut curr = vec![(0usize, 0usize); m + 1];
    for i in 1..=n {
        curr[0] = (i, 0);
        for j in 1..=m {
            let sub_cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let diag = (prev[j - 1].0 + sub_cost, prev[j - 1].1);
            let del = (prev[j].0 + 1, prev[j].1);
            let ins = (curr[j - 1].0 + 1, curr[j - 1].1 + 1);
            curr[j] = diag.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    let (total, insertions) = prev[m];
    // In any alignment, deletions = insertions + |ref| - |hyp| >= 0.
    let deletions = insertions + n - m;
    let substitutions = total - insertions - deletions;
    Ok(WerBreakdown {
        wer: total as f64 / n as f64,
        substitutions,
        deletions,
        insertions,
    })
}

/// One conversation's evaluation results. EER/FAR fields are absent when
/// the conversation offers no negative trials (single speaker).
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub eer: Option<f64>,
    pub threshold: Option<f64>,
    pub far: Option<f64>,
    pub der: DerBreakdown,
    pub wer: Option<WerBreakdown>,
}

/// Flat key-value report text; rates carry four decimals.
pub fn format_report(report: &EvalReport) -> String {
    let mut out = String::new();
    if let Some(eer) = report.eer {
        out.push_str(&format!("eer {eer:.4}\n"));
    }
    if let Some(t) = report.threshold {
        out.push_str(&format!("threshold {}\n", format_real(t)));
    }
    if let Some(far) = report.far {
        out.push_str(&format!("far {far:.4}\n"));
    }
    out.push_str(&format!("der {:.4}\n", report.der.der));
    out.push_str(&format!("der_missed {:.4}\n", report.der.missed));
    out.push_str(&format!("der_false_alarm {:.4}\n", report.der.false_alarm));
    out.push_str(&format!("der_confusion {:.4}\n", report.der.confusion));
    if let Some(w) = &report.wer {
        out.push_str(&format!("wer {:.4}\n", w.wer));
        out.push_str(&format!("wer_substitutions {}\n", w.substitutions));
        out.push_str(&format!("wer_deletions {}\n", w.deletions));
        out.push_str(&format!("wer_insertions {}\n", w.insertions));
    }
    out
}
