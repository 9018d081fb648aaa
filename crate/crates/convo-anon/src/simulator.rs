//! Synthetic multi-speaker conversations: ground-truth RTTM, windowed
//! embedding streams, per-speaker identity centroids, transcript
//! placeholders, and overlap injection/mitigation.
//!
//! Generation is fully seeded: centroids are drawn on the unit sphere
//! under a minimum pairwise-angle constraint, turns are laid out
//! round-robin with a fresh random order per cycle, and gaps are sized to
//! steer the realized speech ratio toward the configured target. Windows
//! inside a single-speaker segment are the speaker centroid plus
//! renormalized Gaussian noise; windows inside an injected overlap carry
//! a normalized convex mix of the two active centroids.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::anonymizer::AnonymizationPlan;
use crate::diarizer::{
    Window, WindowedEmbeddingStream, DEFAULT_HOP_SECONDS, DEFAULT_WINDOW_SECONDS,
};
use crate::embeddings::{Gender, SpeakerVector};
use crate::error::{Error, Result};
use crate::rttm::{find_overlaps, OverlapRegion, RttmDocument, Segment};
use crate::seeding::derive_seed;
use crate::textio::parse_flat_config;

const MAX_CENTROID_ATTEMPTS: usize = 10_000;
/// Overlapping turns start this fraction of the shorter turn early.
const OVERLAP_FRACTION_RANGE: (f64, f64) = (0.2, 0.5);
const WORDS_PER_SECOND: f64 = 2.0;
const VOCABULARY: usize = 400;

/// How simulated speakers receive gender tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GenderPattern {
    /// F, M, F, M, ... by speaker index; guarantees both subgroups are
    /// non-empty for conversations of two or more speakers.
    #[default]
    Alternating,
    AllFemale,
    AllMale,
}

impl GenderPattern {
    fn gender_of(self, index: usize) -> Gender {
        match self {
            GenderPattern::Alternating => {
                if index.is_multiple_of(2) {
                    Gender::Female
                } else {
                    Gender::Male
                }
            }
            GenderPattern::AllFemale => Gender::Female,
            GenderPattern::AllMale => Gender::Male,
        }
    }
}

/// Generator parameters. Parsed from flat `key = value` text; range keys
/// take two space-separated values.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n_speakers: usize,
    pub n_conversations: usize,
    pub duration_range: (f64, f64),
    pub turn_duration_range: (f64, f64),
    pub target_speech_ratio: f64,
    pub gap_range: (f64, f64),
    pub overlap_probability: f64,
    pub overlap_mix_weight_range: (f64, f64),
    pub embedding_dim: usize,
    pub centroid_min_angle_degrees: f64,
    pub window_noise_sigma: f64,
    pub gender_pattern: GenderPattern,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_speakers: 2,
            n_conversations: 10,
            duration_range: (20.0, 40.0),
            turn_duration_range: (3.0, 8.0),
            target_speech_ratio: 0.93,
            gap_range: (0.1, 1.0),
            overlap_probability: 0.0,
            overlap_mix_weight_range: (0.3, 0.7),
            embedding_dim: 16,
            centroid_min_angle_degrees: 75.0,
            window_noise_sigma: 0.05,
            gender_pattern: GenderPattern::Alternating,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_speakers == 0 {
            return bad("n_speakers must be at least 1".into());
        }
        if self.n_conversations == 0 {
            return bad("n_conversations must be at least 1".into());
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be at least 1".into());
        }
        for (name, (lo, hi), positive) in [
            ("duration_range", self.duration_range, true),
            ("turn_duration_range", self.turn_duration_range, true),
            ("gap_range", self.gap_range, false),
            ("overlap_mix_weight_range", self.overlap_mix_weight_range, false),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo < 0.0 {
                return bad(format!("{name} ({lo}, {hi}) is not a valid range"));
            }
            if positive && lo <= 0.0 {
                return bad(format!("{name} must be strictly positive"));
            }
        }
        if !(self.target_speech_ratio > 0.0 && self.target_speech_ratio <= 1.0) {
            return bad(format!(
                "target_speech_ratio {} must be in (0, 1]",
                self.target_speech_ratio
            ));
        }
        if !(0.0..=1.0).contains(&self.overlap_probability) {
            return bad(format!(
                "overlap_probability {} must be in [0, 1]",
                self.overlap_probability
            ));
        }
        if self.overlap_mix_weight_range.1 > 1.0 {
            return bad("overlap_mix_weight_range must stay within [0, 1]".into());
        }
        if !(0.0..180.0).contains(&self.centroid_min_angle_degrees) {
            return bad(format!(
                "centroid_min_angle_degrees {} must be in [0, 180)",
                self.centroid_min_angle_degrees
            ));
        }
        if self.window_noise_sigma < 0.0 || !self.window_noise_sigma.is_finite() {
            return bad("window_noise_sigma must be non-negative".into());
        }
        // One round of turns must fit inside the duration cap.
        if self.n_speakers as f64 * self.turn_duration_range.0 > self.duration_range.1 {
            return bad(format!(
                "{} speakers with minimum turns of {} s cannot fit in {} s",
                self.n_speakers, self.turn_duration_range.0, self.duration_range.1
            ));
        }
        Ok(())
    }

    /// Parse from flat `key = value` text with `#` comments.
    pub fn parse(text: &str) -> Result<SimulationConfig> {
        let mut cfg = SimulationConfig::default();
        for (line, key, value) in parse_flat_config(text)? {
            cfg.apply(&key, &value, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub(crate) fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        fn scalar<T: std::str::FromStr>(value: &str, key: &str, line: usize) -> Result<T> {
            value.parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid value `{value}` for {key}"),
            })
        }
        fn range(value: &str, key: &str, line: usize) -> Result<(f64, f64)> {
            let parts: Vec<&str> = value.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(Error::Parse {
                    line,
                    message: format!("{key} expects `<min> <max>`, got `{value}`"),
                });
            }
            Ok((
                scalar::<f64>(parts[0], key, line)?,
                scalar::<f64>(parts[1], key, line)?,
            ))
        }
        match key {
            "n_speakers" => self.n_speakers = scalar(value, key, line)?,
            "n_conversations" => self.n_conversations = scalar(value, key, line)?,
            "duration_range" => self.duration_range = range(value, key, line)?,
            "turn_duration_range" => self.turn_duration_range = range(value, key, line)?,
            "target_speech_ratio" => self.target_speech_ratio = scalar(value, key, line)?,
            "gap_range" => self.gap_range = range(value, key, line)?,
            "overlap_probability" => self.overlap_probability = scalar(value, key, line)?,
            "overlap_mix_weight_range" => {
                self.overlap_mix_weight_range = range(value, key, line)?
            }
            "embedding_dim" => self.embedding_dim = scalar(value, key, line)?,
            "centroid_min_angle" | "centroid_min_angle_degrees" => {
                self.centroid_min_angle_degrees = scalar(value, key, line)?
            }
            "window_noise_sigma" => self.window_noise_sigma = scalar(value, key, line)?,
            "genders" => {
                self.gender_pattern = match value {
                    "alternating" => GenderPattern::Alternating,
                    "female" => GenderPattern::AllFemale,
                    "male" => GenderPattern::AllMale,
                    other => {
                        return Err(Error::Parse {
                            line,
                            message: format!("unknown gender pattern `{other}`"),
                        })
                    }
                }
            }
            "seed" => self.seed = scalar(value, key, line)?,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown simulation key `{other}`"),
                })
            }
        }
        Ok(())
    }
}

/// An injected overlap between two consecutive turns, with the convex mix
/// weight applied to windows inside the region.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMix {
    pub onset: f64,
    pub duration: f64,
    /// Speaker whose turn is ending.
    pub earlier: String,
    /// Speaker whose turn is starting.
    pub later: String,
    /// Weight of the earlier speaker's centroid.
    pub alpha: f64,
}

impl OverlapMix {
    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.onset && t < self.end()
    }
}

/// A simulated conversation with everything needed to evaluate against it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub rttm: RttmDocument,
    /// Identity centroids, one per RTTM speaker, with genders.
    pub speaker_vectors: Vec<SpeakerVector>,
    pub stream: WindowedEmbeddingStream,
    /// Synthetic word sequences aligned with `rttm.segments()`.
    pub transcripts: Vec<Vec<String>>,
    pub overlap_mixes: Vec<OverlapMix>,
    pub sigma: f64,
    /// Base seed for noise redraws when a plan is applied.
    pub redraw_seed: u64,
}

impl GroundTruth {
    pub fn centroid(&self, speaker: &str) -> Option<&SpeakerVector> {
        self.speaker_vectors.iter().find(|v| v.id() == speaker)
    }

    /// The conversation transcript: every segment's words in timeline
    /// order.
    pub fn transcript_words(&self) -> Vec<String> {
        self.transcripts.iter().flatten().cloned().collect()
    }

    /// One line of words per segment.
    pub fn transcript_text(&self) -> String {
        let mut out = String::new();
        for words in &self.transcripts {
            out.push_str(&words.join(" "));
            out.push('\n');
        }
        out
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

fn unit_gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    normalize(v)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

fn speaker_id(i: usize) -> String {
    format!("S{}", i + 1)
}

/// Generate `n_conversations` seeded ground-truth conversations.
pub fn simulate(cfg: &SimulationConfig) -> Result<Vec<GroundTruth>> {
    cfg.validate()?;
    (0..cfg.n_conversations)
        .map(|c| simulate_conversation(cfg, c))
        .collect()
}

fn simulate_conversation(cfg: &SimulationConfig, index: usize) -> Result<GroundTruth> {
    let mut structure_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64 * 3));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64 * 3 + 1));
    let redraw_seed = derive_seed(cfg.seed, index as u64 * 3 + 2);
    let file_id = format!("conv{index:04}");

    // Identity centroids on the unit sphere with a pairwise angle floor.
    let max_cos = cfg.centroid_min_angle_degrees.to_radians().cos();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_speakers);
    let mut attempts = 0usize;
    while centroids.len() < cfg.n_speakers {
        attempts += 1;
        if attempts > MAX_CENTROID_ATTEMPTS {
            return Err(Error::InvalidConfig(format!(
                "could not place {} centroids at >= {} degrees in {} dimensions",
                cfg.n_speakers, cfg.centroid_min_angle_degrees, cfg.embedding_dim
            )));
        }
        let v = unit_gaussian(cfg.embedding_dim, &mut structure_rng);
        if centroids.iter().all(|c| dot(c, &v) <= max_cos + 1e-12) {
            centroids.push(v);
        }
    }
    let speaker_vectors: Vec<SpeakerVector> = centroids
        .iter()
        .enumerate()
        .map(|(i, c)| {
            SpeakerVector::new(speaker_id(i), cfg.gender_pattern.gender_of(i), c.clone())
        })
        .collect::<Result<_>>()?;

    // Turn-taking: round-robin with a random order per cycle. Gaps steer
    // the realized speech ratio toward the target; overlapping turns
    // start before the previous turn ends.
    let target_duration = uniform(&mut structure_rng, cfg.duration_range);
    let mut turns: Vec<(f64, f64, usize)> = Vec::new(); // (onset, duration, speaker)
    let mut mixes: Vec<OverlapMix> = Vec::new();
    let mut union_speech = 0.0;
    let mut order: Vec<usize> = (0..cfg.n_speakers).collect();
    'generate: loop {
        order.shuffle(&mut structure_rng);
        for &spk in &order {
            let last = turns.last().copied();
            if let Some((onset, dur, _)) = last {
                if turns.len() >= cfg.n_speakers && onset + dur >= target_duration {
                    break 'generate;
                }
            }
            let mut duration = uniform(&mut structure_rng, cfg.turn_duration_range);
            let onset = match last {
                None => 0.0,
                Some((prev_onset, prev_dur, prev_spk)) => {
                    let prev_end = prev_onset + prev_dur;
                    let overlap_here = prev_spk != spk
                        && cfg.overlap_probability > 0.0
                        && structure_rng.random_range(0.0..1.0) < cfg.overlap_probability;
                    if overlap_here {
                        let frac = uniform(&mut structure_rng, OVERLAP_FRACTION_RANGE);
                        let overlap = frac * prev_dur.min(duration);
                        let alpha = uniform(&mut structure_rng, cfg.overlap_mix_weight_range);
                        mixes.push(OverlapMix {
                            onset: prev_end - overlap,
                            duration: overlap,
                            earlier: speaker_id(prev_spk),
                            later: speaker_id(spk),
                            alpha,
                        });
                        union_speech -= overlap;
                        prev_end - overlap
                    } else {
                        let desired =
                            (union_speech + duration) / cfg.target_speech_ratio - prev_end - duration;
                        prev_end + desired.clamp(cfg.gap_range.0, cfg.gap_range.1)
                    }
                }
            };
            // Stay under the duration cap; the final turn may be trimmed.
            if onset + duration > cfg.duration_range.1 {
                duration = cfg.duration_range.1 - onset;
                if duration <= 0.05 {
                    if turns.len() >= cfg.n_speakers {
                        break 'generate;
                    }
                    return Err(Error::InvalidConfig(
                        "duration_range too tight to give every speaker a turn".to_string(),
                    ));
                }
            }
            union_speech += duration;
            turns.push((onset, duration, spk));
        }
    }

    let segments: Vec<Segment> = turns
        .iter()
        .map(|&(onset, duration, spk)| Segment::new(onset, duration, speaker_id(spk)))
        .collect::<Result<_>>()?;
    let rttm = RttmDocument::new(file_id.clone(), segments)?;

    // Transcripts: deterministic word-id placeholders per segment.
    let transcripts: Vec<Vec<String>> = rttm
        .segments()
        .iter()
        .map(|seg| {
            let count = ((seg.duration() * WORDS_PER_SECOND).round() as usize).max(1);
            (0..count)
                .map(|_| format!("w{:03}", structure_rng.random_range(0..VOCABULARY)))
                .collect()
        })
        .collect();

    let stream = build_stream(
        &file_id,
        &rttm,
        &speaker_vectors,
        &mixes,
        cfg.window_noise_sigma,
        &mut noise_rng,
    )?;

    Ok(GroundTruth {
        rttm,
        speaker_vectors,
        stream,
        transcripts,
        overlap_mixes: mixes,
        sigma: cfg.window_noise_sigma,
        redraw_seed,
    })
}

/// Base (noise-free) embedding at time `t`: the active speaker's
/// centroid, or the normalized convex mix inside an overlap region.
fn base_embedding(
    t: f64,
    rttm: &RttmDocument,
    centroids: &[SpeakerVector],
    mixes: &[OverlapMix],
) -> Option<Vec<f64>> {
    let active: Vec<&str> = rttm
        .segments()
        .iter()
        .filter(|s| t >= s.onset() && t < s.end())
        .map(|s| s.speaker())
        .collect();
    if active.is_empty() {
        return None;
    }
    // Centroids are unit vectors by construction; returning them as-is
    // keeps zero-noise streams bit-exact.
    let centroid = |id: &str| {
        centroids
            .iter()
            .find(|v| v.id() == id)
            .map(|v| v.values().to_vec())
    };
    if active.len() >= 2 {
        if let Some(mix) = mixes.iter().find(|m| m.contains(t)) {
            if let (Some(a), Some(b)) = (centroid(&mix.earlier), centroid(&mix.later)) {
                let mixed: Vec<f64> = a
                    .iter()
                    .zip(&b)
                    .map(|(x, y)| mix.alpha * x + (1.0 - mix.alpha) * y)
                    .collect();
                return Some(normalize(mixed));
            }
        }
        // Overlap without a recorded mix: equal-weight combination.
        let mut acc = vec![0.0; centroids.first().map_or(0, |c| c.dim())];
        let mut found = 0;
        for id in &active {
            if let Some(c) = centroid(id) {
                for (a, x) in acc.iter_mut().zip(&c) {
                    *a += x;
                }
                found += 1;
            }
        }
        if found > 0 {
            return Some(normalize(acc));
        }
        return None;
    }
    centroid(active[0])
}

fn build_stream(
    file_id: &str,
    rttm: &RttmDocument,
    centroids: &[SpeakerVector],
    mixes: &[OverlapMix],
    sigma: f64,
    noise_rng: &mut ChaCha8Rng,
) -> Result<WindowedEmbeddingStream> {
    let dim = centroids.first().map_or(1, |c| c.dim());
    let end = rttm.end();
    let mut windows = Vec::new();
    let mut mask = Vec::new();
    let mut k = 0usize;
    loop {
        let onset = k as f64 * DEFAULT_HOP_SECONDS;
        let center = onset + DEFAULT_WINDOW_SECONDS / 2.0;
        if center >= end {
            break;
        }
        match base_embedding(center, rttm, centroids, mixes) {
            Some(base) => {
                let values = noisy_embedding(&base, sigma, noise_rng);
                windows.push(Window::new(onset, values)?);
                mask.push(true);
            }
            None => {
                windows.push(Window::new(onset, vec![0.0; dim])?);
                mask.push(false);
            }
        }
        k += 1;
    }
    WindowedEmbeddingStream::new(
        file_id,
        DEFAULT_WINDOW_SECONDS,
        DEFAULT_HOP_SECONDS,
        windows,
        mask,
    )
}

/// Centroid plus Gaussian noise, renormalized. Zero sigma returns the
/// base unchanged so noise-free streams are bit-exact.
fn noisy_embedding(base: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return base.to_vec();
    }
    let noisy: Vec<f64> = base
        .iter()
        .map(|x| {
            let n: f64 = StandardNormal.sample(rng);
            x + sigma * n
        })
        .collect();
    let out = normalize(noisy);
    if out.iter().map(|x| x * x).sum::<f64>() <= 0.0 {
        base.to_vec()
    } else {
        out
    }
}

/// Anonymize a conversation along its own ground-truth timeline.
pub fn apply_plan(gt: &GroundTruth, plan: &AnonymizationPlan) -> Result<GroundTruth> {
    apply_plan_with_rttm(gt, &gt.rttm, plan)
}

/// Anonymize a conversation using a working timeline (ground-truth or
/// predicted). Every window covered by a working segment is rebuilt as
/// the owning speaker's assigned vector plus fresh noise (same sigma);
/// windows the working timeline does not cover keep their original
/// values, mirroring untouched background audio. Overlap windows are
/// re-mixed from the anonymized centroids with the original mix weights.
pub fn apply_plan_with_rttm(
    gt: &GroundTruth,
    working: &RttmDocument,
    plan: &AnonymizationPlan,
) -> Result<GroundTruth> {
    for speaker in working.speakers() {
        if plan.vector_for(speaker).is_none() {
            return Err(Error::NotFound(format!(
                "speaker `{speaker}` missing from the plan"
            )));
        }
    }
    let anon_centroids: Vec<SpeakerVector> = working
        .speakers()
        .into_iter()
        .map(|speaker| {
            let assigned = plan.vector_for(speaker).expect("checked above");
            SpeakerVector::new(
                speaker,
                assigned.gender(),
                normalize(assigned.values().to_vec()),
            )
        })
        .collect::<Result<_>>()?;

    let mut redraw_rng = ChaCha8Rng::seed_from_u64(gt.redraw_seed);
    let mut windows = Vec::with_capacity(gt.stream.len());
    for (idx, window) in gt.stream.windows().iter().enumerate() {
        let center = gt.stream.window_center(idx);
        let base = base_embedding(center, working, &anon_centroids, &gt.overlap_mixes);
        let values = match base {
            Some(base) => noisy_embedding(&base, gt.sigma, &mut redraw_rng),
            None => window.values().to_vec(),
        };
        windows.push(Window::new(window.onset(), values)?);
    }
    let stream = WindowedEmbeddingStream::new(
        gt.stream.file_id(),
        gt.stream.window_length(),
        gt.stream.hop(),
        windows,
        gt.stream.speech_mask().to_vec(),
    )?;

    // Ground-truth speakers keep their ids; those covered by the plan
    // carry the assigned vectors as their new centroids.
    let speaker_vectors: Vec<SpeakerVector> = gt
        .speaker_vectors
        .iter()
        .map(|v| match plan.vector_for(v.id()) {
            Some(assigned) => {
                SpeakerVector::new(v.id(), v.gender(), assigned.values().to_vec())
            }
            None => Ok(v.clone()),
        })
        .collect::<Result<_>>()?;

    Ok(GroundTruth {
        rttm: gt.rttm.clone(),
        speaker_vectors,
        stream,
        transcripts: gt.transcripts.clone(),
        overlap_mixes: gt.overlap_mixes.clone(),
        sigma: gt.sigma,
        redraw_seed: gt.redraw_seed,
    })
}

/// Cut every overlap region out of the timeline and stream, shifting the
/// remainder left. A conversation without overlaps is returned unchanged.
pub fn remove_overlaps(gt: &GroundTruth) -> Result<GroundTruth> {
    let regions = find_overlaps(&gt.rttm);
    if regions.is_empty() {
        return Ok(gt.clone());
    }

    let cut_before = |t: f64| -> f64 {
        regions
            .iter()
            .map(|r| (t.min(r.end()) - r.onset()).clamp(0.0, r.duration()))
            .sum()
    };
    let map_time = |t: f64| t - cut_before(t);
    let unmap_time = |t_new: f64| -> f64 {
        let mut t = t_new;
        for r in &regions {
            if t >= r.onset() {
                t += r.duration();
            }
        }
        t
    };

    // Segments lose the removed portions; survivors shift left. A
    // segment's pieces become contiguous after the cut, so each source
    // segment maps to at most one output segment.
    let mut segments = Vec::new();
    let mut transcripts = Vec::new();
    for (seg, words) in gt.rttm.segments().iter().zip(&gt.transcripts) {
        // Mapping both boundaries through the same function gives
        // segments that share a cut edge bit-identical endpoints, so the
        // output never re-overlaps by a rounding crumb.
        let new_onset = map_time(seg.onset());
        let new_end = map_time(seg.end());
        let kept = new_end - new_onset;
        if kept <= 1e-9 {
            continue;
        }
        // Words travel with the kept portions, proportionally.
        let mut kept_words = Vec::new();
        let w = words.len() as f64;
        let mut cursor = seg.onset();
        for r in &regions {
            let lo = r.onset().max(seg.onset());
            let hi = r.end().min(seg.end());
            if hi <= lo {
                continue;
            }
            push_word_slice(words, w, seg, cursor, lo, &mut kept_words);
            cursor = hi;
        }
        push_word_slice(words, w, seg, cursor, seg.end(), &mut kept_words);
        segments.push(Segment::new(new_onset, kept, seg.speaker())?);
        transcripts.push(kept_words);
    }
    let rttm = RttmDocument::new(gt.rttm.file_id(), segments)?;

    // Rebuild the window grid on the shortened timeline; each new window
    // copies the original window nearest to its pre-cut time.
    let new_end = map_time(gt.rttm.end());
    let dim = gt.stream.dim().max(1);
    let hop = gt.stream.hop();
    let window_len = gt.stream.window_length();
    let mut windows = Vec::new();
    let mut mask = Vec::new();
    let mut k = 0usize;
    loop {
        let onset = k as f64 * hop;
        let center = onset + window_len / 2.0;
        if center >= new_end {
            break;
        }
        let source_time = unmap_time(center);
        let active = rttm
            .segments()
            .iter()
            .any(|s| center >= s.onset() && center < s.end());
        let values = if active && !gt.stream.is_empty() {
            let nearest = (0..gt.stream.len())
                .min_by(|&a, &b| {
                    (gt.stream.window_center(a) - source_time)
                        .abs()
                        .total_cmp(&(gt.stream.window_center(b) - source_time).abs())
                })
                .expect("non-empty stream");
            gt.stream.windows()[nearest].values().to_vec()
        } else {
            vec![0.0; dim]
        };
        windows.push(Window::new(onset, values)?);
        mask.push(active);
        k += 1;
    }
    let stream = WindowedEmbeddingStream::new(gt.stream.file_id(), window_len, hop, windows, mask)?;

    Ok(GroundTruth {
        rttm,
        speaker_vectors: gt.speaker_vectors.clone(),
        stream,
        transcripts,
        overlap_mixes: Vec::new(),
        sigma: gt.sigma,
        redraw_seed: gt.redraw_seed,
    })
}

fn push_word_slice(
    words: &[String],
    total_words: f64,
    seg: &Segment,
    lo: f64,
    hi: f64,
    out: &mut Vec<String>,
) {
    if hi <= lo || words.is_empty() {
        return;
    }
    let idx = |t: f64| -> usize {
        ((total_words * (t - seg.onset()) / seg.duration()).round() as usize).min(words.len())
    };
    let (i0, i1) = (idx(lo), idx(hi));
    if i1 > i0 {
        out.extend(words[i0..i1].iter().cloned());
    }
}

/// Shuffle the fixed-length windows of a sample-buffer region with a
/// seeded permutation. The final partial window stays in place; samples
/// outside the region are untouched.
pub fn shuffle_overlap_windows(
    samples: &[f64],
    region: &OverlapRegion,
    window_seconds: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if window_seconds.is_nan() || window_seconds <= 0.0 || sample_rate.is_nan() || sample_rate <= 0.0
    {
        return Err(Error::InvalidConfig(
            "window and sample rate must be positive".to_string(),
        ));
    }
    let start = (region.onset() * sample_rate).round() as i64;
    let end = (region.end() * sample_rate).round() as i64;
    if start < 0 || end < start || end as usize > samples.len() {
        return Err(Error::OutOfBounds(format!(
            "region [{}, {}) outside buffer of {} samples",
            start,
            end,
            samples.len()
        )));
    }
    let (start, end) = (start as usize, end as usize);
    let window = (window_seconds * sample_rate).round() as usize;
    if window == 0 {
        return Err(Error::InvalidConfig(
            "window shorter than one sample".to_string(),
        ));
    }
    let mut out = samples.to_vec();
    let n_full = (end - start) / window;
    if n_full <= 1 {
        return Ok(out);
    }
    let mut perm: Vec<usize> = (0..n_full).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    for (i, &p) in perm.iter().enumerate() {
        let dst = start + i * window;
        let src = start + p * window;
        out[dst..dst + window].copy_from_slice(&samples[src..src + window]);
    }
    Ok(out)
}
