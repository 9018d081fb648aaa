//! End-to-end orchestration: simulate (or load) conversations, derive a
//! working timeline (ground truth or diarized), aggregate per-speaker
//! vectors, plan pseudo-speakers per configured anonymizer, rebuild the
//! anonymized streams, and score everything into per-conversation
//! reports plus an aggregate summary.
//!
//! All stage outputs are plain-text files under the output directory, so
//! runs diff cleanly and reproduce byte-for-byte under a fixed seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::anonymizer::{
    baseline_plan, identity_plan, plan_conversation, write_plan, AnonymizationPlan, PlanKind,
    SearchConfig, UtilityLoss,
};
use crate::diarizer::{diarize, parse_stream, write_stream, DEFAULT_AFFINITY_KEEP};
use crate::embeddings::{
    parse_embedding_table, protect_pool, write_embedding_table, Gender, Pool, SpeakerVector,
};
use crate::error::{Error, Result};
use crate::metrics::{
    build_pairs, der, eer_threshold, far_at_threshold, format_report, pooled_embedding,
    speaker_spans, wer, EvalReport, SpeakerSpans,
};
use crate::rttm::{parse_rttm, write_rttm, RttmDocument};
use crate::seeding::derive_seed;
use crate::simulator::{
    apply_plan_with_rttm, simulate, GroundTruth, OverlapMix, SimulationConfig,
};
use crate::textio::{format_real, format_time, parse_f64, parse_flat_config};

const POOL_SALT: u64 = 0x706f_6f6c; // "pool"
const DIARIZE_SALT: u64 = 0x6469_6172; // "diar"
const EVAL_SALT: u64 = 0x6576_616c; // "eval"
const BASELINE_SALT: u64 = 0x6261_7365; // "base"

/// Where the pseudo-speaker pool comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolSource {
    /// Load an embedding table from disk.
    Path(PathBuf),
    /// Generate a seeded synthetic pool of this size.
    Synthetic(usize),
}

/// Full pipeline configuration: simulation parameters plus search,
/// metric, and staging options. Parsed from the same flat `key = value`
/// format as [`SimulationConfig`].
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub sim: SimulationConfig,
    pub l_far: usize,
    pub l_prune: usize,
    /// Anonymizers evaluated side by side.
    pub anonymizers: Vec<PlanKind>,
    /// Aggregate along the ground-truth timeline instead of diarizing.
    pub use_real_rttm: bool,
    pub collar: f64,
    pub k_max: usize,
    pub affinity_keep: f64,
    pub pool: PoolSource,
    pub protect_pool: bool,
    pub pool_protect_neighbors: usize,
    pub baseline_k_far: usize,
    pub baseline_k_avg: usize,
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sim: SimulationConfig::default(),
            l_far: 200,
            l_prune: 10_000,
            anonymizers: vec![PlanKind::Identity, PlanKind::Baseline, PlanKind::Ds, PlanKind::As],
            use_real_rttm: true,
            collar: 0.0,
            k_max: 10,
            affinity_keep: DEFAULT_AFFINITY_KEEP,
            pool: PoolSource::Synthetic(500),
            protect_pool: true,
            pool_protect_neighbors: 10,
            baseline_k_far: 200,
            baseline_k_avg: 10,
            jobs: 1,
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        for (line, key, value) in parse_flat_config(text)? {
            match key.as_str() {
                "l_far" => cfg.l_far = parse_count(&value, &key, line)?,
                "l_prune" => cfg.l_prune = parse_count(&value, &key, line)?,
                "anonymizers" => {
                    cfg.anonymizers = value
                        .split_whitespace()
                        .map(|name| {
                            PlanKind::from_name(name).ok_or_else(|| Error::Parse {
                                line,
                                message: format!("unknown anonymizer `{name}`"),
                            })
                        })
                        .collect::<Result<_>>()?;
                }
                "use_real_rttm" => cfg.use_real_rttm = parse_bool(&value, &key, line)?,
                "collar" => cfg.collar = parse_f64(&value, line, "collar")?,
                "k_max" => cfg.k_max = parse_count(&value, &key, line)?,
                "affinity_keep" => cfg.affinity_keep = parse_f64(&value, line, "affinity_keep")?,
                "pool_path" => cfg.pool = PoolSource::Path(PathBuf::from(&value)),
                "pool_size" => cfg.pool = PoolSource::Synthetic(parse_count(&value, &key, line)?),
                "protect_pool" => cfg.protect_pool = parse_bool(&value, &key, line)?,
                "pool_protect_neighbors" => {
                    cfg.pool_protect_neighbors = parse_count(&value, &key, line)?
                }
                "baseline_k_far" => cfg.baseline_k_far = parse_count(&value, &key, line)?,
                "baseline_k_avg" => cfg.baseline_k_avg = parse_count(&value, &key, line)?,
                "jobs" => cfg.jobs = parse_count(&value, &key, line)?,
                _ => cfg.sim.apply(&key, &value, line)?,
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.anonymizers.is_empty() {
            return Err(Error::InvalidConfig("no anonymizers configured".into()));
        }
        if self.k_max == 0 || self.jobs == 0 {
            return Err(Error::InvalidConfig(
                "k_max and jobs must be at least 1".into(),
            ));
        }
        if !(self.affinity_keep > 0.0 && self.affinity_keep <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "affinity_keep {} must be in (0, 1]",
                self.affinity_keep
            )));
        }
        if self.collar < 0.0 || !self.collar.is_finite() {
            return Err(Error::InvalidConfig(format!("invalid collar {}", self.collar)));
        }
        if let PoolSource::Synthetic(size) = self.pool {
            if size == 0 {
                return Err(Error::InvalidConfig("pool_size must be at least 1".into()));
            }
        }
        Ok(())
    }
}

fn parse_count(value: &str, key: &str, line: usize) -> Result<usize> {
    value.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid value `{value}` for {key}"),
    })
}

fn parse_bool(value: &str, key: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Parse {
            line,
            message: format!("invalid boolean `{value}` for {key}"),
        }),
    }
}

/// Everything a pipeline run produced, besides the files on disk.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub conversation_ids: Vec<String>,
    pub reports: BTreeMap<PlanKind, Vec<EvalReport>>,
    /// DER of the working timeline against ground truth (predicted-RTTM
    /// runs only).
    pub working_der: Vec<Option<f64>>,
    pub summary: String,
}

struct ConversationResult {
    id: String,
    working_der: Option<f64>,
    reports: Vec<(PlanKind, EvalReport)>,
    /// Per-kind span maps for run-level pooled scoring.
    spans: Vec<(PlanKind, SpeakerSpans, SpeakerSpans)>,
}

/// Run the full pipeline. Conversations come from `input_dir` when given
/// (an empty directory is a clean no-op) and are simulated otherwise.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    input_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<PipelineOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;

    let truths: Vec<GroundTruth> = match input_dir {
        Some(dir) => {
            let loaded = load_conversations(dir, cfg.sim.window_noise_sigma, cfg.sim.seed)
                .map_err(|e| e.in_stage("load"))?;
            if loaded.is_empty() {
                log::warn!("no conversations in {}; nothing to do", dir.display());
                return Ok(PipelineOutcome {
                    conversation_ids: Vec::new(),
                    reports: BTreeMap::new(),
                    working_der: Vec::new(),
                    summary: "no conversations\n".to_string(),
                });
            }
            loaded
        }
        None => {
            let truths = simulate(&cfg.sim).map_err(|e| e.in_stage("simulate"))?;
            for gt in &truths {
                write_ground_truth_files(gt, out_dir).map_err(|e| e.in_stage("simulate"))?;
            }
            truths
        }
    };

    let pool = prepare_pool(cfg, out_dir).map_err(|e| e.in_stage("pool"))?;

    let thread_pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let mut results: Vec<ConversationResult> = thread_pool.install(|| {
        truths
            .par_iter()
            .enumerate()
            .map(|(idx, gt)| process_conversation(cfg, gt, idx, &pool, out_dir))
            .collect::<Result<Vec<_>>>()
    })?;
    results.sort_by(|a, b| a.id.cmp(&b.id));

    let mut reports: BTreeMap<PlanKind, Vec<EvalReport>> = BTreeMap::new();
    let mut pooled: BTreeMap<PlanKind, (Vec<SpeakerSpans>, Vec<SpeakerSpans>)> = BTreeMap::new();
    for result in &results {
        for (kind, report) in &result.reports {
            reports.entry(*kind).or_default().push(report.clone());
        }
        for (kind, orig, anon) in &result.spans {
            let entry = pooled.entry(*kind).or_default();
            entry.0.push(orig.clone());
            entry.1.push(anon.clone());
        }
    }

    let mut summary = format!("conversations {}\n", results.len());
    let working: Vec<f64> = results.iter().filter_map(|r| r.working_der).collect();
    if !working.is_empty() {
        let (mean, min, max) = stats(&working);
        summary.push_str(&format!(
            "working_der {mean:.4} {min:.4} {max:.4}\n"
        ));
    }
    for (kind, kind_reports) in &reports {
        summary.push_str(&format!("\n[{}]\n", kind.name()));
        summary.push_str(&summarize(kind_reports)?);
        if let Some((origs, anons)) = pooled.get(kind) {
            if let Some(far) = pooled_far(origs, anons)? {
                summary.push_str(&format!("pooled_far {far:.4}\n"));
            }
        }
    }
    fs::write(out_dir.join("summary.txt"), &summary)?;
    log::info!("pipeline finished: {} conversations", results.len());

    Ok(PipelineOutcome {
        conversation_ids: results.iter().map(|r| r.id.clone()).collect(),
        working_der: results.iter().map(|r| r.working_der).collect(),
        reports,
        summary,
    })
}

fn prepare_pool(cfg: &PipelineConfig, out_dir: &Path) -> Result<Pool> {
    let pool = match &cfg.pool {
        PoolSource::Path(path) => {
            let vectors = parse_embedding_table(&fs::read_to_string(path)?)?;
            Pool::new(vectors, path.display().to_string())?
        }
        PoolSource::Synthetic(size) => Pool::synthetic(
            *size,
            cfg.sim.embedding_dim,
            derive_seed(cfg.sim.seed, POOL_SALT),
        )?,
    };
    let pool = if cfg.protect_pool {
        protect_pool(&pool, cfg.pool_protect_neighbors)?
    } else {
        pool
    };
    fs::write(
        out_dir.join("pool.spk"),
        write_embedding_table(pool.vectors()),
    )?;
    Ok(pool)
}

fn process_conversation(
    cfg: &PipelineConfig,
    gt: &GroundTruth,
    idx: usize,
    pool: &Pool,
    out_dir: &Path,
) -> Result<ConversationResult> {
    let id = gt.rttm.file_id().to_string();
    let stage = |name: &str| format!("{name}({id})");

    // Working timeline: ground truth or a fresh diarization.
    let working = if cfg.use_real_rttm {
        gt.rttm.clone()
    } else {
        diarize(
            &gt.stream,
            cfg.affinity_keep,
            cfg.k_max,
            None,
            derive_seed(cfg.sim.seed, DIARIZE_SALT ^ idx as u64),
        )
        .map_err(|e| e.in_stage(&stage("diarize")))?
    };
    fs::write(out_dir.join(format!("{id}.work.rttm")), write_rttm(&working))?;
    let working_der = if cfg.use_real_rttm {
        None
    } else {
        Some(
            der(&gt.rttm, &working, cfg.collar)
                .map_err(|e| e.in_stage(&stage("diarize")))?
                .der,
        )
    };

    // Aggregate per-speaker vectors along the working timeline.
    let orig_spans =
        speaker_spans(&working, &gt.stream).map_err(|e| e.in_stage(&stage("aggregate")))?;
    if orig_spans.is_empty() {
        return Err(
            Error::EmptyCollection("no speech to aggregate".to_string())
                .in_stage(&stage("aggregate")),
        );
    }
    let originals: Vec<SpeakerVector> = orig_spans
        .iter()
        .map(|(speaker, spans)| {
            let values = pooled_embedding(spans)?;
            let gender = speaker_gender(speaker, &working, gt, cfg.use_real_rttm);
            SpeakerVector::new(speaker.as_str(), gender, values)
        })
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage(&stage("aggregate")))?;

    let mut reports = Vec::new();
    let mut spans_out = Vec::new();
    for &kind in &cfg.anonymizers {
        let plan = build_plan(cfg, kind, &originals, pool, idx)
            .map_err(|e| e.in_stage(&stage("plan")))?;
        let anon = apply_plan_with_rttm(gt, &working, &plan)
            .map_err(|e| e.in_stage(&stage("apply")))?;
        let anon_spans =
            speaker_spans(&working, &anon.stream).map_err(|e| e.in_stage(&stage("evaluate")))?;

        let pairs = build_pairs(
            std::slice::from_ref(&orig_spans),
            std::slice::from_ref(&anon_spans),
        )
        .map_err(|e| e.in_stage(&stage("evaluate")))?;
        let (pos, neg, oa) = pairs.scores().map_err(|e| e.in_stage(&stage("evaluate")))?;
        let (eer, threshold, far) = if neg.is_empty() {
            (None, None, None)
        } else {
            let (eer, threshold) = eer_threshold(&pos, &neg)?;
            let far = far_at_threshold(&oa, threshold)?;
            (Some(eer), Some(threshold), Some(far))
        };

        let hypothesis = diarize(
            &anon.stream,
            cfg.affinity_keep,
            cfg.k_max,
            None,
            derive_seed(cfg.sim.seed, EVAL_SALT ^ idx as u64),
        )
        .map_err(|e| e.in_stage(&stage("evaluate")))?;
        let der_breakdown =
            der(&gt.rttm, &hypothesis, cfg.collar).map_err(|e| e.in_stage(&stage("evaluate")))?;
        let ref_words = gt.transcript_words();
        let wer_breakdown = wer(&ref_words, &anon.transcript_words())
            .map_err(|e| e.in_stage(&stage("evaluate")))?;

        let report = EvalReport {
            eer,
            threshold,
            far,
            der: der_breakdown,
            wer: Some(wer_breakdown),
        };

        let prefix = format!("{id}.{}", kind.name());
        fs::write(out_dir.join(format!("{prefix}.plan")), write_plan(&plan))?;
        fs::write(
            out_dir.join(format!("{prefix}.anon.stream")),
            write_stream(&anon.stream),
        )?;
        fs::write(
            out_dir.join(format!("{prefix}.hyp.rttm")),
            write_rttm(&hypothesis),
        )?;
        fs::write(
            out_dir.join(format!("{prefix}.report")),
            format_report(&report),
        )?;
        reports.push((kind, report));
        spans_out.push((kind, orig_spans.clone(), anon_spans));
    }

    Ok(ConversationResult {
        id,
        working_der,
        reports,
        spans: spans_out,
    })
}

fn build_plan(
    cfg: &PipelineConfig,
    kind: PlanKind,
    originals: &[SpeakerVector],
    pool: &Pool,
    idx: usize,
) -> Result<AnonymizationPlan> {
    match kind {
        PlanKind::Identity => identity_plan(originals),
        PlanKind::Baseline => baseline_plan(
            originals,
            pool,
            cfg.baseline_k_far,
            cfg.baseline_k_avg,
            derive_seed(cfg.sim.seed, BASELINE_SALT ^ idx as u64),
        ),
        PlanKind::Ds | PlanKind::As => plan_conversation(
            originals,
            pool,
            &SearchConfig {
                l_far: cfg.l_far,
                l_prune: cfg.l_prune,
                loss: if kind == PlanKind::Ds {
                    UtilityLoss::Ds
                } else {
                    UtilityLoss::As
                },
                include_privacy_in_score: false,
            },
        ),
    }
}

/// Gender of a working-timeline speaker. Ground-truth labels carry their
/// own genders; predicted cluster labels inherit the gender of the
/// ground-truth speaker with the largest temporal overlap (gender labels
/// are inputs to this system, not predictions).
fn speaker_gender(
    speaker: &str,
    working: &RttmDocument,
    gt: &GroundTruth,
    use_real_rttm: bool,
) -> Gender {
    if use_real_rttm {
        if let Some(v) = gt.centroid(speaker) {
            return v.gender();
        }
    }
    let mut best: Option<(f64, Gender)> = None;
    for candidate in &gt.speaker_vectors {
        let mut overlap = 0.0;
        for seg in working.segments().iter().filter(|s| s.speaker() == speaker) {
            for gseg in gt
                .rttm
                .segments()
                .iter()
                .filter(|s| s.speaker() == candidate.id())
            {
                overlap += (seg.end().min(gseg.end()) - seg.onset().max(gseg.onset())).max(0.0);
            }
        }
        if best.is_none_or(|(b, _)| overlap > b) {
            best = Some((overlap, candidate.gender()));
        }
    }
    match best {
        Some((overlap, gender)) if overlap > 0.0 => gender,
        _ => {
            log::warn!("speaker {speaker} has no overlap with ground truth; assuming female");
            Gender::Female
        }
    }
}

/// Run-level FAR: pool every conversation's trials, fit the EER threshold
/// on the original pairs, and score the O-A pairs. `None` when no
/// negative trials exist.
fn pooled_far(originals: &[SpeakerSpans], anonymized: &[SpeakerSpans]) -> Result<Option<f64>> {
    let pairs = build_pairs(originals, anonymized)?;
    let (pos, neg, oa) = pairs.scores()?;
    if neg.is_empty() {
        return Ok(None);
    }
    let (_, threshold) = eer_threshold(&pos, &neg)?;
    Ok(Some(far_at_threshold(&oa, threshold)?))
}

fn stats(values: &[f64]) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

type MetricExtractor = Box<dyn Fn(&EvalReport) -> Option<f64>>;

/// Aggregate reports into `metric mean min max` rows with deterministic
/// ordering.
pub fn summarize(reports: &[EvalReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::EmptyCollection("reports to summarize".to_string()));
    }
    let mut out = String::new();
    let rows: [(&str, MetricExtractor); 8] = [
        ("eer", Box::new(|r: &EvalReport| r.eer)),
        ("far", Box::new(|r: &EvalReport| r.far)),
        ("der", Box::new(|r: &EvalReport| Some(r.der.der))),
        ("der_missed", Box::new(|r: &EvalReport| Some(r.der.missed))),
        (
            "der_false_alarm",
            Box::new(|r: &EvalReport| Some(r.der.false_alarm)),
        ),
        (
            "der_confusion",
            Box::new(|r: &EvalReport| Some(r.der.confusion)),
        ),
        (
            "wer",
            Box::new(|r: &EvalReport| r.wer.as_ref().map(|w| w.wer)),
        ),
        (
            "eer_threshold",
            Box::new(|r: &EvalReport| r.threshold),
        ),
    ];
    for (name, extract) in &rows {
        let values: Vec<f64> = reports.iter().filter_map(extract).collect();
        if !values.is_empty() {
            let (mean, min, max) = stats(&values);
            out.push_str(&format!("{name} {mean:.4} {min:.4} {max:.4}\n"));
        }
    }
    Ok(out)
}

/// Write one conversation's files: `<id>.rttm`, `<id>.stream`, `<id>.spk`
/// (identity centroids), `<id>.txt` (one line of words per segment), and
/// `<id>.mix` when overlaps were injected.
pub fn write_ground_truth_files(gt: &GroundTruth, out_dir: &Path) -> Result<()> {
    let id = gt.rttm.file_id();
    fs::write(out_dir.join(format!("{id}.rttm")), write_rttm(&gt.rttm))?;
    fs::write(
        out_dir.join(format!("{id}.stream")),
        write_stream(&gt.stream),
    )?;
    fs::write(
        out_dir.join(format!("{id}.spk")),
        write_embedding_table(&gt.speaker_vectors),
    )?;
    fs::write(out_dir.join(format!("{id}.txt")), gt.transcript_text())?;
    if !gt.overlap_mixes.is_empty() {
        let mut out = String::new();
        for m in &gt.overlap_mixes {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                format_time(m.onset),
                format_time(m.duration),
                m.earlier,
                m.later,
                format_real(m.alpha)
            ));
        }
        fs::write(out_dir.join(format!("{id}.mix")), out)?;
    }
    Ok(())
}

/// Load conversations previously written by `write_ground_truth_files`.
pub fn load_conversations(dir: &Path, sigma: f64, seed: u64) -> Result<Vec<GroundTruth>> {
    let mut ids: Vec<String> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "rttm")
            && !path
                .file_name()
                .is_some_and(|n| n.to_string_lossy().contains(".work.") || n.to_string_lossy().contains(".hyp."))
        {
            if let Some(stem) = path.file_stem() {
                ids.push(stem.to_string_lossy().to_string());
            }
        }
    }
    ids.sort();
    let mut out = Vec::new();
    for (idx, id) in ids.iter().enumerate() {
        let read = |ext: &str| fs::read_to_string(dir.join(format!("{id}.{ext}")));
        let rttm = parse_rttm(&read("rttm")?)?;
        let stream = parse_stream(&read("stream")?)?;
        let speaker_vectors = parse_embedding_table(&read("spk")?)?;
        let transcripts: Vec<Vec<String>> = match read("txt") {
            Ok(text) => text
                .lines()
                .map(|l| l.split_whitespace().map(String::from).collect())
                .collect(),
            Err(_) => vec![Vec::new(); rttm.segments().len()],
        };
        if transcripts.len() != rttm.segments().len() {
            return Err(Error::Contract(format!(
                "{id}.txt has {} lines for {} segments",
                transcripts.len(),
                rttm.segments().len()
            )));
        }
        let overlap_mixes = match read("mix") {
            Ok(text) => parse_mix_file(&text)?,
            Err(_) => Vec::new(),
        };
        for speaker in rttm.speakers() {
            if !speaker_vectors.iter().any(|v| v.id() == speaker) {
                return Err(Error::NotFound(format!(
                    "{id}.spk lacks a centroid for speaker {speaker}"
                )));
            }
        }
        out.push(GroundTruth {
            rttm,
            speaker_vectors,
            stream,
            transcripts,
            overlap_mixes,
            sigma,
            redraw_seed: derive_seed(seed, idx as u64 * 3 + 2),
        });
    }
    Ok(out)
}

fn parse_mix_file(text: &str) -> Result<Vec<OverlapMix>> {
    let mut out = Vec::new();
    for (line, l) in crate::textio::content_lines(text) {
        let tokens: Vec<&str> = l.split_whitespace().collect();
        if tokens.len() != 5 {
            return Err(Error::Parse {
                line,
                message: format!("expected 5 mix fields, got {}", tokens.len()),
            });
        }
        out.push(OverlapMix {
            onset: parse_f64(tokens[0], line, "mix onset")?,
            duration: parse_f64(tokens[1], line, "mix duration")?,
            earlier: tokens[2].to_string(),
            later: tokens[3].to_string(),
            alpha: parse_f64(tokens[4], line, "mix weight")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::DerBreakdown;

    fn report(der_value: f64) -> EvalReport {
        EvalReport {
            eer: Some(0.1),
            threshold: Some(0.5),
            far: Some(0.2),
            der: DerBreakdown {
                der: der_value,
                missed: der_value,
                false_alarm: 0.0,
                confusion: 0.0,
            },
            wer: None,
        }
    }

    #[test]
    fn summarize_single_report_collapses() {
        let text = summarize(&[report(0.25)]).unwrap();
        assert!(text.contains("der 0.2500 0.2500 0.2500\n"));
    }

    #[test]
    fn summarize_two_reports_means() {
        let text = summarize(&[report(0.1), report(0.3)]).unwrap();
        assert!(text.contains("der 0.2000 0.1000 0.3000\n"), "{text}");
    }

    #[test]
    fn summarize_matches_accumulation_oracle() {
        let reports: Vec<EvalReport> = (0..50).map(|i| report(i as f64 / 100.0)).collect();
        let text = summarize(&reports).unwrap();
        let mut sum = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for r in &reports {
            sum += r.der.der;
            min = min.min(r.der.der);
            max = max.max(r.der.der);
        }
        let expected = format!("der {:.4} {min:.4} {max:.4}\n", sum / 50.0);
        assert!(text.contains(&expected), "missing `{expected}` in:\n{text}");
    }

    #[test]
    fn summarize_empty_is_an_error() {
        assert!(matches!(
            summarize(&[]),
            Err(Error::EmptyCollection(_))
        ));
    }

    #[test]
    fn conversations_round_trip_through_the_filesystem() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimulationConfig {
            n_speakers: 2,
            n_conversations: 2,
            duration_range: (16.0, 24.0),
            overlap_probability: 0.5,
            seed: 31,
            ..SimulationConfig::default()
        };
        let truths = crate::simulator::simulate(&cfg).unwrap();
        for gt in &truths {
            write_ground_truth_files(gt, dir.path()).unwrap();
        }
        let loaded =
            load_conversations(dir.path(), cfg.window_noise_sigma, cfg.seed).unwrap();
        assert_eq!(loaded.len(), truths.len());
        for (orig, back) in truths.iter().zip(&loaded) {
            assert_eq!(write_rttm(&orig.rttm), write_rttm(&back.rttm));
            assert_eq!(
                crate::diarizer::write_stream(&orig.stream),
                crate::diarizer::write_stream(&back.stream)
            );
            assert_eq!(orig.transcripts, back.transcripts);
            assert_eq!(orig.overlap_mixes.len(), back.overlap_mixes.len());
            for (a, b) in orig.overlap_mixes.iter().zip(&back.overlap_mixes) {
                assert_eq!(a.earlier, b.earlier);
                assert_eq!(a.later, b.later);
                assert!((a.alpha - b.alpha).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn empty_input_directory_is_a_clean_noop() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::default();
        let outcome = run_pipeline(&cfg, Some(tmp.path()), out.path()).unwrap();
        assert!(outcome.conversation_ids.is_empty());
        assert!(outcome.reports.is_empty());
    }

    #[test]
    fn pipeline_config_parse_mixes_sim_and_pipeline_keys() {
        let cfg = PipelineConfig::parse(
            "n_speakers = 3\nl_far = 50\nanonymizers = identity as\nuse_real_rttm = false\npool_size = 100\n",
        )
        .unwrap();
        assert_eq!(cfg.sim.n_speakers, 3);
        assert_eq!(cfg.l_far, 50);
        assert_eq!(cfg.anonymizers, vec![PlanKind::Identity, PlanKind::As]);
        assert!(!cfg.use_real_rttm);
        assert_eq!(cfg.pool, PoolSource::Synthetic(100));
        assert!(matches!(
            PipelineConfig::parse("anonymizers = nonsense\n"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn small_real_rttm_run_separates_identity_from_as() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            sim: SimulationConfig {
                n_speakers: 2,
                n_conversations: 3,
                duration_range: (20.0, 30.0),
                embedding_dim: 8,
                seed: 5,
                ..SimulationConfig::default()
            },
            l_far: 20,
            l_prune: 200,
            anonymizers: vec![PlanKind::Identity, PlanKind::As],
            pool: PoolSource::Synthetic(60),
            jobs: 2,
            ..PipelineConfig::default()
        };
        let outcome = run_pipeline(&cfg, None, tmp.path()).unwrap();
        assert_eq!(outcome.conversation_ids.len(), 3);
        let identity = &outcome.reports[&PlanKind::Identity];
        let as_plans = &outcome.reports[&PlanKind::As];
        let mean = |rs: &[EvalReport]| {
            rs.iter().filter_map(|r| r.far).sum::<f64>() / rs.len() as f64
        };
        assert!(mean(identity) > 0.9, "identity FAR {}", mean(identity));
        assert!(mean(as_plans) < 0.1, "as FAR {}", mean(as_plans));
        // Output files exist.
        assert!(tmp.path().join("summary.txt").exists());
        assert!(tmp.path().join("pool.spk").exists());
        assert!(tmp.path().join("conv0000.as.report").exists());
    }
}
