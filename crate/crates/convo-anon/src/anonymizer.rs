//! Conversation-level pseudo-speaker selection.
//!
//! Each original speaker receives a vector drawn from the farthest
//! (least-similar) region of the external pool, which keeps the
//! original/pseudo pair unlinkable. Which farthest candidate each speaker
//! receives is decided jointly for the whole conversation by a greedy
//! pruned search that minimizes one of two utility objectives over
//! pseudo-speaker pairs:
//!
//! - differential similarity (DS): keep anonymized pairwise similarities
//!   close to the original conversation's,
//! - aggregated similarity (AS): push pairwise similarities among
//!   pseudo-speakers as low as possible.
//!
//! Selection runs independently per gender subgroup, so every speaker
//! keeps their gender tag and cross-gender pairs never enter the losses.
//! An exhaustive oracle ([`brute_force_plan`]) and the classic
//! farthest-K/average-K* single-speaker baseline ([`baseline_select`])
//! are provided for comparison.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embeddings::{cosine, similarity_matrix, Gender, Pool, SimilarityMatrix, SpeakerVector};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;
use crate::textio::format_real;

/// Guard for the exhaustive oracle: maximum number of candidate tuples.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Utility objective minimized by the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UtilityLoss {
    /// Differential similarity: sum of |S_aa[i,j] - S_oo[i,j]| over pairs.
    Ds,
    /// Aggregated similarity: sum of S_aa[i,j] over pairs.
    As,
}

/// Which anonymizer produced a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PlanKind {
    /// Resynthesis analogue: every speaker mapped to their own vector.
    Identity,
    /// Farthest-K selection with random averaging, per speaker.
    Baseline,
    Ds,
    As,
}

impl PlanKind {
    pub fn name(self) -> &'static str {
        match self {
            PlanKind::Identity => "identity",
            PlanKind::Baseline => "baseline",
            PlanKind::Ds => "ds",
            PlanKind::As => "as",
        }
    }

    pub fn from_name(name: &str) -> Option<PlanKind> {
        match name {
            "identity" => Some(PlanKind::Identity),
            "baseline" => Some(PlanKind::Baseline),
            "ds" => Some(PlanKind::Ds),
            "as" => Some(PlanKind::As),
            _ => None,
        }
    }
}

/// Search parameters for [`plan_conversation`] and [`brute_force_plan`].
#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Candidates per speaker: the l_far farthest pool vectors.
    pub l_far: usize,
    /// Beam width kept after each extension step.
    pub l_prune: usize,
    pub loss: UtilityLoss,
    /// When set, beam scores also accumulate the privacy term
    /// S_oa[i, i] of every assignment instead of utility alone.
    pub include_privacy_in_score: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            l_far: 200,
            l_prune: 10_000,
            loss: UtilityLoss::As,
            include_privacy_in_score: false,
        }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        if self.l_far == 0 {
            return Err(Error::InvalidConfig("l_far must be at least 1".to_string()));
        }
        if self.l_prune == 0 {
            return Err(Error::InvalidConfig(
                "l_prune must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// One speaker's assignment inside a plan.
#[derive(Debug, Clone)]
pub struct Assignment {
    pub speaker_id: String,
    pub pool_id: String,
    /// The pseudo-speaker vector assigned to this speaker.
    pub vector: SpeakerVector,
    /// Achieved privacy term S_oa[i, i] = cosine(original, assigned).
    pub privacy: f64,
}

/// Per-conversation assignment of pseudo-speaker vectors.
#[derive(Debug, Clone)]
pub struct AnonymizationPlan {
    pub kind: PlanKind,
    /// Assignments in original speaker order.
    pub assignments: Vec<Assignment>,
    /// Sum of per-speaker privacy terms.
    pub privacy_term: f64,
    /// Utility term of the configured loss, summed over same-gender pairs.
    pub utility_term: f64,
}

impl AnonymizationPlan {
    pub fn vector_for(&self, speaker_id: &str) -> Option<&SpeakerVector> {
        self.assignments
            .iter()
            .find(|a| a.speaker_id == speaker_id)
            .map(|a| &a.vector)
    }

    pub fn assigned_vectors(&self) -> Vec<SpeakerVector> {
        self.assignments.iter().map(|a| a.vector.clone()).collect()
    }
}

/// Serialize a plan: one `<speaker_id> <pool_id> <privacy>` line per
/// speaker, preceded by `#`-comment metadata.
pub fn write_plan(plan: &AnonymizationPlan) -> String {
    let mut out = String::new();
    out.push_str(&format!("# kind {}\n", plan.kind.name()));
    out.push_str(&format!("# privacy_term {}\n", format_real(plan.privacy_term)));
    out.push_str(&format!("# utility_term {}\n", format_real(plan.utility_term)));
    for a in &plan.assignments {
        out.push_str(&format!(
            "{} {} {}\n",
            a.speaker_id,
            a.pool_id,
            format_real(a.privacy)
        ));
    }
    out
}

/// Per speaker, the indices of the `l_far` pool vectors with the smallest
/// similarity, ascending by similarity with ties broken by ascending pool
/// index. `l_far` is clamped to the pool size with a warning.
pub fn farthest_candidates(s_xy: &SimilarityMatrix, l_far: usize) -> Result<Vec<Vec<usize>>> {
    if l_far == 0 {
        return Err(Error::InvalidConfig("l_far must be at least 1".to_string()));
    }
    if s_xy.cols() == 0 {
        return Err(Error::Infeasible(
            "no candidates: empty pool subgroup".to_string(),
        ));
    }
    if l_far > s_xy.cols() {
        log::warn!(
            "l_far={} exceeds pool subgroup size {}; clamping",
            l_far,
            s_xy.cols()
        );
    }
    let keep = l_far.min(s_xy.cols());
    let mut rows = Vec::with_capacity(s_xy.rows());
    for i in 0..s_xy.rows() {
        let row = s_xy.row(i);
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        idx.truncate(keep);
        rows.push(idx);
    }
    Ok(rows)
}

/// Gender subgroup of a conversation prepared for the search.
struct Subgroup {
    /// Positions of the subgroup's speakers among the originals.
    speaker_positions: Vec<usize>,
    /// Positions of the subgroup's candidates in the pool.
    pool_positions: Vec<usize>,
    s_xy: SimilarityMatrix,
    s_yy: SimilarityMatrix,
    s_xx: SimilarityMatrix,
    /// Per speaker, local candidate indices, farthest first.
    candidates: Vec<Vec<usize>>,
}

impl Subgroup {
    fn build(
        originals: &[SpeakerVector],
        pool: &Pool,
        gender: Gender,
        l_far: usize,
    ) -> Result<Option<Subgroup>> {
        let speaker_positions: Vec<usize> = (0..originals.len())
            .filter(|&i| originals[i].gender() == gender)
            .collect();
        if speaker_positions.is_empty() {
            return Ok(None);
        }
        let pool_positions = pool.gender_subgroup(gender);
        if pool_positions.is_empty() {
            return Err(Error::Infeasible(format!(
                "no candidates: pool has no {gender} vectors"
            )));
        }
        if speaker_positions.len() > pool_positions.len() {
            return Err(Error::Infeasible(format!(
                "{} speakers but only {} distinct {gender} pool vectors",
                speaker_positions.len(),
                pool_positions.len()
            )));
        }
        let x: Vec<SpeakerVector> = speaker_positions
            .iter()
            .map(|&i| originals[i].clone())
            .collect();
        let y: Vec<SpeakerVector> = pool_positions
            .iter()
            .map(|&p| pool.vectors()[p].clone())
            .collect();
        let s_xy = similarity_matrix(&x, &y)?;
        let s_yy = similarity_matrix(&y, &y)?;
        let s_xx = similarity_matrix(&x, &x)?;
        let candidates = farthest_candidates(&s_xy, l_far)?;

        let mut union: Vec<usize> = candidates.iter().flatten().copied().collect();
        union.sort_unstable();
        union.dedup();
        if union.len() < speaker_positions.len() {
            return Err(Error::Infeasible(format!(
                "{} speakers but only {} distinct candidates available",
                speaker_positions.len(),
                union.len()
            )));
        }
        Ok(Some(Subgroup {
            speaker_positions,
            pool_positions,
            s_xy,
            s_yy,
            s_xx,
            candidates,
        }))
    }

    fn speaker_count(&self) -> usize {
        self.speaker_positions.len()
    }

    /// Score increment for extending a partial assignment with candidate
    /// `local` for speaker `speaker` (subgroup-local position).
    fn increment(&self, prefix: &[usize], speaker: usize, local: usize, loss: UtilityLoss) -> f64 {
        let mut s = 0.0;
        for (k, &prev) in prefix.iter().enumerate() {
            let v = self.s_yy.get(local, prev);
            s += match loss {
                UtilityLoss::As => v,
                UtilityLoss::Ds => (v - self.s_xx.get(speaker, k)).abs(),
            };
        }
        s
    }

    /// Utility term of a complete local assignment, accumulated in the
    /// same order as the search so values match exactly.
    fn utility_of(&self, locals: &[usize], loss: UtilityLoss) -> f64 {
        let mut sum = 0.0;
        for i in 1..locals.len() {
            sum += self.increment(&locals[..i], i, locals[i], loss);
        }
        sum
    }

}

/// Greedy pruned search over one subgroup. Returns local candidate
/// indices per subgroup speaker.
///
/// The beam starts from speaker 1's candidates at score 0 (plus the
/// privacy term when configured), extends speaker by speaker skipping
/// duplicate pool picks, sorts ascending, and keeps `l_prune` entries.
/// Ties sort by the candidate-rank tuple, so a lone speaker receives the
/// farthest candidate.
fn greedy_subgroup(sub: &Subgroup, cfg: &SearchConfig) -> Result<Vec<usize>> {
    let n = sub.speaker_count();
    // Beam entries: (score, candidate ranks per speaker so far).
    let mut beam: Vec<(f64, Vec<u32>)> = sub.candidates[0]
        .iter()
        .enumerate()
        .map(|(rank, &local)| {
            let score = if cfg.include_privacy_in_score {
                sub.s_xy.get(0, local)
            } else {
                0.0
            };
            (score, vec![rank as u32])
        })
        .collect();

    let mut prefix_pool: Vec<usize> = Vec::with_capacity(n);
    for speaker in 1..n {
        // Extensions reference their parent to avoid cloning paths before
        // pruning.
        let mut extensions: Vec<(f64, u32, u32)> =
            Vec::with_capacity(beam.len() * sub.candidates[speaker].len());
        for (parent_idx, (score, ranks)) in beam.iter().enumerate() {
            prefix_pool.clear();
            prefix_pool.extend(
                ranks
                    .iter()
                    .enumerate()
                    .map(|(k, &r)| sub.candidates[k][r as usize]),
            );
            for (rank, &local) in sub.candidates[speaker].iter().enumerate() {
                if prefix_pool.contains(&local) {
                    continue;
                }
                let mut s = score + sub.increment(&prefix_pool, speaker, local, cfg.loss);
                if cfg.include_privacy_in_score {
                    s += sub.s_xy.get(speaker, local);
                }
                extensions.push((s, parent_idx as u32, rank as u32));
            }
        }
        if extensions.is_empty() {
            return Err(Error::Infeasible(format!(
                "beam dead-ends at speaker {speaker}: all candidates already assigned"
            )));
        }
        extensions.sort_unstable_by(|a, b| {
            a.0.total_cmp(&b.0).then_with(|| {
                let pa = &beam[a.1 as usize].1;
                let pb = &beam[b.1 as usize].1;
                pa.cmp(pb).then(a.2.cmp(&b.2))
            })
        });
        extensions.truncate(cfg.l_prune);
        let survivors: Vec<(f64, Vec<u32>)> = extensions
            .into_iter()
            .map(|(s, parent, rank)| {
                let mut ranks = beam[parent as usize].1.clone();
                ranks.push(rank);
                (s, ranks)
            })
            .collect();
        beam = survivors;
    }

    let best = &beam[0].1;
    Ok(best
        .iter()
        .enumerate()
        .map(|(k, &r)| sub.candidates[k][r as usize])
        .collect())
}

/// Exhaustive minimizer over all duplicate-free candidate tuples of one
/// subgroup, in candidate-rank lexicographic order so ties resolve the
/// same way as the greedy search.
fn brute_subgroup(sub: &Subgroup, cfg: &SearchConfig) -> Result<Vec<usize>> {
    let combinations: u128 = sub
        .candidates
        .iter()
        .map(|c| c.len() as u128)
        .product();
    if combinations > BRUTE_FORCE_LIMIT {
        return Err(Error::SearchSpaceTooLarge {
            combinations,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    fn descend(
        sub: &Subgroup,
        cfg: &SearchConfig,
        depth: usize,
        score: f64,
        locals: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if depth == sub.speaker_count() {
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                *best = Some((score, locals.clone()));
            }
            return;
        }
        for &local in &sub.candidates[depth] {
            if locals.contains(&local) {
                continue;
            }
            let mut s = score + sub.increment(locals, depth, local, cfg.loss);
            if cfg.include_privacy_in_score {
                s += sub.s_xy.get(depth, local);
            }
            locals.push(local);
            descend(sub, cfg, depth + 1, s, locals, best);
            locals.pop();
        }
    }

    let mut best = None;
    let mut locals = Vec::with_capacity(sub.speaker_count());
    descend(sub, cfg, 0, 0.0, &mut locals, &mut best);
    best.map(|(_, locals)| locals)
        .ok_or_else(|| Error::Infeasible("no duplicate-free assignment exists".to_string()))
}

fn assemble_plan(
    originals: &[SpeakerVector],
    pool: &Pool,
    cfg: &SearchConfig,
    solve: impl Fn(&Subgroup, &SearchConfig) -> Result<Vec<usize>>,
) -> Result<AnonymizationPlan> {
    cfg.validate()?;
    if originals.is_empty() {
        return Err(Error::EmptyCollection("original speakers".to_string()));
    }
    for v in originals {
        if v.dim() != pool.dim() {
            return Err(Error::DimensionMismatch {
                expected: pool.dim(),
                got: v.dim(),
            });
        }
    }
    let mut ids: Vec<&str> = originals.iter().map(|v| v.id()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Contract("duplicate speaker ids".to_string()));
    }

    let mut assignments: Vec<Option<Assignment>> = vec![None; originals.len()];
    let mut utility_term = 0.0;
    for gender in Gender::ALL {
        let Some(sub) = Subgroup::build(originals, pool, gender, cfg.l_far)? else {
            continue;
        };
        let locals = solve(&sub, cfg)?;
        utility_term += sub.utility_of(&locals, cfg.loss);
        for (k, &local) in locals.iter().enumerate() {
            let speaker = sub.speaker_positions[k];
            let pool_idx = sub.pool_positions[local];
            let pool_vec = &pool.vectors()[pool_idx];
            assignments[speaker] = Some(Assignment {
                speaker_id: originals[speaker].id().to_string(),
                pool_id: pool_vec.id().to_string(),
                vector: pool_vec.clone(),
                privacy: sub.s_xy.get(k, local),
            });
        }
    }
    let assignments: Vec<Assignment> = assignments
        .into_iter()
        .map(|a| a.expect("every speaker belongs to exactly one gender subgroup"))
        .collect();
    let privacy_term = assignments.iter().map(|a| a.privacy).sum();
    Ok(AnonymizationPlan {
        kind: match cfg.loss {
            UtilityLoss::Ds => PlanKind::Ds,
            UtilityLoss::As => PlanKind::As,
        },
        assignments,
        privacy_term,
        utility_term,
    })
}

/// Plan a conversation with the greedy pruned search, gender-dependent.
pub fn plan_conversation(
    originals: &[SpeakerVector],
    pool: &Pool,
    cfg: &SearchConfig,
) -> Result<AnonymizationPlan> {
    assemble_plan(originals, pool, cfg, greedy_subgroup)
}

/// Exact minimizer of the configured loss over all duplicate-free
/// candidate tuples; oracle for [`plan_conversation`]. Guarded against
/// combinatorial explosion.
pub fn brute_force_plan(
    originals: &[SpeakerVector],
    pool: &Pool,
    cfg: &SearchConfig,
) -> Result<AnonymizationPlan> {
    assemble_plan(originals, pool, cfg, brute_subgroup)
}

/// Single-speaker selection baseline: mean of `k_avg` vectors drawn
/// without replacement (seeded) from the `k_far` farthest same-gender
/// pool vectors.
pub fn baseline_select(
    original: &SpeakerVector,
    pool: &Pool,
    k_far: usize,
    k_avg: usize,
    seed: u64,
) -> Result<SpeakerVector> {
    if k_avg == 0 {
        return Err(Error::InvalidConfig("k_avg must be at least 1".to_string()));
    }
    if k_avg > k_far {
        return Err(Error::InvalidConfig(format!(
            "k_avg {k_avg} must not exceed k_far {k_far}"
        )));
    }
    let subgroup = pool.gender_subgroup(original.gender());
    if subgroup.is_empty() {
        return Err(Error::Infeasible(format!(
            "pool has no {} vectors",
            original.gender()
        )));
    }
    if subgroup.len() < k_avg {
        return Err(Error::Infeasible(format!(
            "gender subgroup of size {} is smaller than k_avg {k_avg}",
            subgroup.len()
        )));
    }
    let mut sims: Vec<(usize, f64)> = subgroup
        .iter()
        .map(|&p| Ok((p, cosine(original, &pool.vectors()[p])?)))
        .collect::<Result<_>>()?;
    sims.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let k_far_eff = k_far.min(sims.len());
    sims.truncate(k_far_eff);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, k_far_eff, k_avg).into_vec();
    // Accumulate in candidate order so equal selections sum identically
    // regardless of draw order.
    chosen.sort_unstable();
    let dim = pool.dim();
    let mut mean = vec![0.0; dim];
    for idx in chosen {
        let v = &pool.vectors()[sims[idx].0];
        for (m, x) in mean.iter_mut().zip(v.values()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= k_avg as f64;
    }
    SpeakerVector::new(format!("avg:{}", original.id()), original.gender(), mean)
}

/// Sum of pairwise cosine similarities over all speaker combinations.
pub fn distinctiveness_sums(vectors: &[SpeakerVector]) -> Result<f64> {
    if vectors.len() < 2 {
        return Err(Error::EmptyCollection(
            "need at least two vectors for pairwise sums".to_string(),
        ));
    }
    let mut sum = 0.0;
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            sum += cosine(&vectors[i], &vectors[j])?;
        }
    }
    Ok(sum)
}

/// AS-style utility of an assigned vector set restricted to same-gender
/// pairs, mirroring what the search optimizes.
fn same_gender_pair_sum(vectors: &[SpeakerVector]) -> Result<f64> {
    let mut sum = 0.0;
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            if vectors[i].gender() == vectors[j].gender() {
                sum += cosine(&vectors[i], &vectors[j])?;
            }
        }
    }
    Ok(sum)
}

/// Baseline plan: independent [`baseline_select`] per speaker, with a
/// per-speaker seed derived from the base seed.
pub fn baseline_plan(
    originals: &[SpeakerVector],
    pool: &Pool,
    k_far: usize,
    k_avg: usize,
    seed: u64,
) -> Result<AnonymizationPlan> {
    if originals.is_empty() {
        return Err(Error::EmptyCollection("original speakers".to_string()));
    }
    let mut assignments = Vec::with_capacity(originals.len());
    for (i, original) in originals.iter().enumerate() {
        let vector = baseline_select(original, pool, k_far, k_avg, derive_seed(seed, i as u64))?;
        let privacy = cosine(original, &vector)?;
        assignments.push(Assignment {
            speaker_id: original.id().to_string(),
            pool_id: vector.id().to_string(),
            vector,
            privacy,
        });
    }
    let vectors: Vec<SpeakerVector> = assignments.iter().map(|a| a.vector.clone()).collect();
    let utility_term = if vectors.len() >= 2 {
        same_gender_pair_sum(&vectors)?
    } else {
        0.0
    };
    let privacy_term = assignments.iter().map(|a| a.privacy).sum();
    Ok(AnonymizationPlan {
        kind: PlanKind::Baseline,
        assignments,
        privacy_term,
        utility_term,
    })
}

/// Resynthesis analogue: every speaker keeps their own vector. Used as
/// the no-protection reference in pipeline evaluations.
pub fn identity_plan(originals: &[SpeakerVector]) -> Result<AnonymizationPlan> {
    if originals.is_empty() {
        return Err(Error::EmptyCollection("original speakers".to_string()));
    }
    let mut assignments = Vec::with_capacity(originals.len());
    for original in originals {
        assignments.push(Assignment {
            speaker_id: original.id().to_string(),
            pool_id: original.id().to_string(),
            vector: original.clone(),
            privacy: cosine(original, original)?,
        });
    }
    let vectors: Vec<SpeakerVector> = assignments.iter().map(|a| a.vector.clone()).collect();
    let utility_term = if vectors.len() >= 2 {
        same_gender_pair_sum(&vectors)?
    } else {
        0.0
    };
    let privacy_term = assignments.iter().map(|a| a.privacy).sum();
    Ok(AnonymizationPlan {
        kind: PlanKind::Identity,
        assignments,
        privacy_term,
        utility_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::SimilarityMatrix;
    use rand_distr::Distribution;

    fn sv(id: &str, gender: Gender, values: &[f64]) -> SpeakerVector {
        SpeakerVector::new(id, gender, values.to_vec()).unwrap()
    }

    fn female_pool(values: &[&[f64]]) -> Pool {
        let vectors = values
            .iter()
            .enumerate()
            .map(|(i, v)| sv(&format!("p{i}"), Gender::Female, v))
            .collect();
        Pool::new(vectors, "test").unwrap()
    }

    fn cfg(l_far: usize, l_prune: usize, loss: UtilityLoss) -> SearchConfig {
        SearchConfig {
            l_far,
            l_prune,
            loss,
            include_privacy_in_score: false,
        }
    }

    #[test]
    fn farthest_candidates_smallest_two() {
        let s = SimilarityMatrix::from_data(1, 3, vec![0.9, -0.2, 0.3]).unwrap();
        let rows = farthest_candidates(&s, 2).unwrap();
        assert_eq!(rows[0], vec![1, 2]);
    }

    #[test]
    fn farthest_candidates_full_sort_when_l_far_is_pool_size() {
        let s = SimilarityMatrix::from_data(1, 4, vec![0.5, -0.5, 0.0, 1.0]).unwrap();
        let rows = farthest_candidates(&s, 4).unwrap();
        assert_eq!(rows[0], vec![1, 2, 0, 3]);
    }

    #[test]
    fn farthest_candidates_matches_full_sort_oracle() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..32)
            .map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0))
            .collect();
        let s = SimilarityMatrix::from_data(4, 8, data).unwrap();
        let rows = farthest_candidates(&s, 3).unwrap();
        for (i, got) in rows.iter().enumerate() {
            let row = s.row(i);
            let mut idx: Vec<usize> = (0..8).collect();
            idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            assert_eq!(got, &idx[..3], "row {i}");
        }
    }

    #[test]
    fn single_speaker_receives_farthest_candidate() {
        let pool = female_pool(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]]);
        let x = [sv("S1", Gender::Female, &[1.0, 0.0])];
        let plan = plan_conversation(&x, &pool, &cfg(2, 10, UtilityLoss::As)).unwrap();
        assert_eq!(plan.assignments[0].pool_id, "p2");
        assert_eq!(plan.assignments[0].privacy, -1.0);
        let brute = brute_force_plan(&x, &pool, &cfg(2, 10, UtilityLoss::As)).unwrap();
        assert_eq!(brute.assignments[0].pool_id, "p2");
    }

    /// Two speakers on the unit axes against the four axis-aligned pool
    /// vectors, AS loss. Expectations computed with the brute-force
    /// oracle: with utility-only scoring the optimum pairs one speaker
    /// with the other's antipode (mutual similarity -1); with the privacy
    /// term in the score the antipodal-to-self pair (0 mutual, -2
    /// privacy) wins on rank-order ties.
    #[test]
    fn two_speaker_axis_instance() {
        let pool = female_pool(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]]);
        let x = [
            sv("S1", Gender::Female, &[1.0, 0.0]),
            sv("S2", Gender::Female, &[0.0, 1.0]),
        ];

        let literal = cfg(2, 100, UtilityLoss::As);
        let brute = brute_force_plan(&x, &pool, &literal).unwrap();
        let greedy = plan_conversation(&x, &pool, &literal).unwrap();
        assert_eq!(brute.utility_term, -1.0);
        assert_eq!(greedy.utility_term, -1.0);
        assert_eq!(
            greedy
                .assignments
                .iter()
                .map(|a| a.pool_id.as_str())
                .collect::<Vec<_>>(),
            brute
                .assignments
                .iter()
                .map(|a| a.pool_id.as_str())
                .collect::<Vec<_>>()
        );

        let with_privacy = SearchConfig {
            include_privacy_in_score: true,
            ..cfg(2, 100, UtilityLoss::As)
        };
        let brute_p = brute_force_plan(&x, &pool, &with_privacy).unwrap();
        let greedy_p = plan_conversation(&x, &pool, &with_privacy).unwrap();
        for plan in [&brute_p, &greedy_p] {
            assert_eq!(plan.assignments[0].pool_id, "p2");
            assert_eq!(plan.assignments[1].pool_id, "p3");
            assert_eq!(plan.privacy_term, -2.0);
            assert_eq!(plan.utility_term, 0.0);
        }
    }

    fn random_speakers(n: usize, dim: usize, gender: Gender, seed: u64) -> Vec<SpeakerVector> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let values: Vec<f64> = (0..dim)
                    .map(|_| rand_distr::StandardNormal.sample(&mut rng))
                    .collect();
                SpeakerVector::new(format!("S{i}"), gender, values).unwrap()
            })
            .collect()
    }

    #[test]
    fn greedy_with_full_beam_matches_brute_force() {
        for seed in 0..25u64 {
            let n = 1 + (seed as usize % 3);
            let pool = Pool::synthetic(12, 6, derive_seed(100, seed)).unwrap();
            let x = random_speakers(n, 6, Gender::Female, derive_seed(200, seed));
            for loss in [UtilityLoss::As, UtilityLoss::Ds] {
                let c = cfg(5, 100_000, loss);
                let greedy = plan_conversation(&x, &pool, &c).unwrap();
                let brute = brute_force_plan(&x, &pool, &c).unwrap();
                assert_eq!(
                    greedy.utility_term, brute.utility_term,
                    "seed {seed} loss {loss:?}"
                );
            }
        }
    }

    #[test]
    fn brute_force_never_worse_than_greedy() {
        for seed in 0..100u64 {
            let n = 1 + (seed as usize % 3);
            let l_far = 2 + (seed as usize % 5);
            let pool = Pool::synthetic(10, 5, derive_seed(300, seed)).unwrap();
            let x = random_speakers(n, 5, Gender::Female, derive_seed(400, seed));
            let c = cfg(l_far, 3, UtilityLoss::As);
            let greedy = plan_conversation(&x, &pool, &c).unwrap();
            let brute = brute_force_plan(&x, &pool, &c).unwrap();
            assert!(
                brute.utility_term <= greedy.utility_term + 1e-12,
                "seed {seed}: brute {} > greedy {}",
                brute.utility_term,
                greedy.utility_term
            );
        }
    }

    #[test]
    fn assigned_vectors_stay_in_farthest_sets_and_are_distinct() {
        for seed in 0..20u64 {
            let pool = Pool::synthetic(30, 8, derive_seed(500, seed)).unwrap();
            let mut x = random_speakers(2, 8, Gender::Female, derive_seed(600, seed));
            x.extend(
                random_speakers(2, 8, Gender::Male, derive_seed(700, seed))
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        SpeakerVector::new(format!("M{i}"), Gender::Male, v.values().to_vec())
                            .unwrap()
                    }),
            );
            let c = cfg(4, 50, UtilityLoss::Ds);
            let plan = plan_conversation(&x, &pool, &c).unwrap();

            let mut seen = std::collections::BTreeSet::new();
            for (orig, a) in x.iter().zip(&plan.assignments) {
                assert!(seen.insert(a.pool_id.clone()), "duplicate pool assignment");
                assert_eq!(orig.gender(), a.vector.gender(), "gender preserved");
                // Privacy bound: assigned similarity within the l_far
                // farthest set of the speaker's subgroup row.
                let subgroup = pool.gender_subgroup(orig.gender());
                let mut sims: Vec<f64> = subgroup
                    .iter()
                    .map(|&p| cosine(orig, &pool.vectors()[p]).unwrap())
                    .collect();
                sims.sort_by(f64::total_cmp);
                let bound = sims[(c.l_far - 1).min(sims.len() - 1)];
                assert!(
                    a.privacy <= bound + 1e-12,
                    "assigned similarity {} above l_far-th smallest {}",
                    a.privacy,
                    bound
                );
            }
        }
    }

    #[test]
    fn plans_are_deterministic() {
        let pool = Pool::synthetic(40, 8, 9).unwrap();
        let x = random_speakers(3, 8, Gender::Female, 10);
        let c = cfg(6, 20, UtilityLoss::As);
        let a = plan_conversation(&x, &pool, &c).unwrap();
        let b = plan_conversation(&x, &pool, &c).unwrap();
        assert_eq!(write_plan(&a), write_plan(&b));
    }

    #[test]
    fn infeasible_when_speakers_exceed_subgroup() {
        let pool = female_pool(&[&[1.0, 0.0]]);
        let x = [
            sv("S1", Gender::Female, &[1.0, 0.0]),
            sv("S2", Gender::Female, &[0.0, 1.0]),
        ];
        assert!(matches!(
            plan_conversation(&x, &pool, &cfg(1, 10, UtilityLoss::As)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn missing_gender_subgroup_is_an_error() {
        let pool = female_pool(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let x = [sv("S1", Gender::Male, &[1.0, 0.0])];
        assert!(matches!(
            plan_conversation(&x, &pool, &cfg(1, 10, UtilityLoss::As)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn brute_force_guard_trips() {
        let pool = Pool::synthetic(64, 4, 1).unwrap();
        let x = random_speakers(8, 4, Gender::Female, 2);
        let c = cfg(32, 10, UtilityLoss::As);
        assert!(matches!(
            brute_force_plan(&x, &pool, &c),
            Err(Error::SearchSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn baseline_identical_candidates_average_to_that_vector() {
        let mut vectors = vec![sv("orig-side", Gender::Female, &[1.0, 0.0])];
        for i in 0..12 {
            vectors.push(sv(&format!("far{i}"), Gender::Female, &[-0.6, 0.8]));
        }
        let pool = Pool::new(vectors[1..].to_vec(), "test").unwrap();
        let out = baseline_select(&vectors[0], &pool, 12, 5, 7).unwrap();
        assert!(out.values().iter().zip(&[-0.6, 0.8]).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn baseline_k_avg_equals_k_far_is_seed_independent() {
        let pool = Pool::synthetic(20, 6, 4).unwrap();
        // Synthetic pools alternate genders, so the female subgroup has 10.
        let x = sv("S1", Gender::Female, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let a = baseline_select(&x, &pool, 8, 8, 1).unwrap();
        let b = baseline_select(&x, &pool, 8, 8, 999).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn baseline_is_deterministic_per_seed() {
        let pool = Pool::synthetic(30, 6, 5).unwrap();
        let x = sv("S1", Gender::Male, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let a = baseline_select(&x, &pool, 10, 4, 42).unwrap();
        let b = baseline_select(&x, &pool, 10, 4, 42).unwrap();
        assert_eq!(a.values(), b.values());
        let c = baseline_select(&x, &pool, 10, 4, 43).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn baseline_subgroup_smaller_than_k_avg_is_infeasible() {
        let pool = female_pool(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let x = sv("S1", Gender::Female, &[1.0, 0.0]);
        assert!(matches!(
            baseline_select(&x, &pool, 10, 3, 0),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn distinctiveness_sum_trivials() {
        let orthonormal = [
            sv("a", Gender::Female, &[1.0, 0.0, 0.0]),
            sv("b", Gender::Female, &[0.0, 1.0, 0.0]),
            sv("c", Gender::Female, &[0.0, 0.0, 1.0]),
        ];
        assert_eq!(distinctiveness_sums(&orthonormal).unwrap(), 0.0);

        let identical = [
            sv("a", Gender::Female, &[1.0, 1.0]),
            sv("b", Gender::Female, &[1.0, 1.0]),
        ];
        assert!((distinctiveness_sums(&identical).unwrap() - 1.0).abs() < 1e-12);

        assert!(matches!(
            distinctiveness_sums(&identical[..1]),
            Err(Error::EmptyCollection(_))
        ));
    }

    #[test]
    fn distinctiveness_sum_matches_double_loop_oracle() {
        let vs = random_speakers(4, 5, Gender::Female, 77);
        let got = distinctiveness_sums(&vs).unwrap();
        let mut expected = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i < j {
                    expected += cosine(&vs[i], &vs[j]).unwrap();
                }
            }
        }
        assert_eq!(got, expected);
    }

    #[test]
    fn plan_serialization_shape() {
        let pool = female_pool(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]]);
        let x = [sv("S1", Gender::Female, &[1.0, 0.0])];
        let plan = plan_conversation(&x, &pool, &cfg(2, 10, UtilityLoss::As)).unwrap();
        let text = write_plan(&plan);
        let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body, vec!["S1 p2 -1.00000000e0"]);
    }
}
