//! Speaker vectors, cosine similarity, similarity matrices, and the
//! external pseudo-speaker pool.
//!
//! Vectors are stored unnormalized; normalization happens inside
//! [`cosine`]. Pool protection replaces every pool vector by the mean of
//! itself and its most-similar gender-consistent neighbors so that pool
//! speakers cannot be re-identified from a published plan.

use std::fmt;

use crate::error::{Error, Result};
use crate::textio::{content_lines, format_real, parse_usize};

/// Floating-point slack allowed on cosine values.
pub const SIMILARITY_SLACK: f64 = 1e-9;

/// Gender tag of a speaker vector. `Unknown` forms a subgroup of its own
/// and never mixes with labeled genders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    Female,
    Male,
    Unknown,
}

impl Gender {
    pub const ALL: [Gender; 3] = [Gender::Female, Gender::Male, Gender::Unknown];

    pub fn code(self) -> char {
        match self {
            Gender::Female => 'F',
            Gender::Male => 'M',
            Gender::Unknown => 'U',
        }
    }

    pub fn from_code(token: &str) -> Option<Gender> {
        match token {
            "F" => Some(Gender::Female),
            "M" => Some(Gender::Male),
            "U" => Some(Gender::Unknown),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// A D-dimensional speaker embedding with identity label and gender tag.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerVector {
    id: String,
    gender: Gender,
    values: Vec<f64>,
}

impl SpeakerVector {
    /// Build a speaker vector, enforcing D >= 1, finite coordinates, a
    /// strictly positive Euclidean norm, and a whitespace-free id.
    pub fn new(id: impl Into<String>, gender: Gender, values: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(Error::Contract(format!(
                "speaker id `{id}` must be non-empty and whitespace-free"
            )));
        }
        if values.is_empty() {
            return Err(Error::EmptyCollection(format!(
                "vector `{id}` has no coordinates"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "vector `{id}` has non-finite coordinates"
            )));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return Err(Error::ZeroNorm(id));
        }
        Ok(SpeakerVector { id, gender, values })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn gender(&self) -> Gender {
        self.gender
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity between two raw coordinate slices.
pub fn cosine_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na <= 0.0 || nb <= 0.0 {
        return Err(Error::Contract(
            "cosine of a zero-norm vector is undefined".to_string(),
        ));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Cosine similarity between two speaker vectors, in [-1, 1].
pub fn cosine(a: &SpeakerVector, b: &SpeakerVector) -> Result<f64> {
    cosine_values(a.values(), b.values())
}

/// Dense pairwise cosine scores between two vector collections.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    /// Build from row-major data. Every entry must lie within
    /// [-1 - slack, 1 + slack].
    pub fn from_data(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "similarity matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        let valid = (-1.0 - SIMILARITY_SLACK)..=(1.0 + SIMILARITY_SLACK);
        for &v in &data {
            if !v.is_finite() || !valid.contains(&v) {
                return Err(Error::Contract(format!(
                    "similarity entry {v} outside [-1, 1]"
                )));
            }
        }
        Ok(SimilarityMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self.get(i, j) - self.get(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Pairwise cosine matrix: entry (i, j) = cosine(a[i], b[j]).
pub fn similarity_matrix(a: &[SpeakerVector], b: &[SpeakerVector]) -> Result<SimilarityMatrix> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCollection(
            "similarity matrix over an empty vector collection".to_string(),
        ));
    }
    let mut data = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            data.push(cosine(x, y)?);
        }
    }
    SimilarityMatrix::from_data(a.len(), b.len(), data)
}

/// An external pool of candidate pseudo-speaker vectors.
#[derive(Debug, Clone)]
pub struct Pool {
    vectors: Vec<SpeakerVector>,
    provenance: String,
}

impl Pool {
    /// Build a pool: at least one vector, unique ids, equal dimensions.
    pub fn new(vectors: Vec<SpeakerVector>, provenance: impl Into<String>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::EmptyCollection("pool".to_string()));
        }
        let dim = vectors[0].dim();
        let mut ids: Vec<&str> = Vec::with_capacity(vectors.len());
        for v in &vectors {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.dim(),
                });
            }
            ids.push(v.id());
        }
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Contract("duplicate ids in pool".to_string()));
        }
        Ok(Pool {
            vectors,
            provenance: provenance.into(),
        })
    }

    /// Seeded synthetic pool: unit-sphere vectors with alternating
    /// female/male tags. Plumbing for simulations and tests.
    pub fn synthetic(size: usize, dim: usize, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = Vec::with_capacity(size);
        for i in 0..size {
            let mut values: Vec<f64> = (0..dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 0.0 {
                values[0] = 1.0;
            } else {
                for v in &mut values {
                    *v /= norm;
                }
            }
            let gender = if i % 2 == 0 { Gender::Female } else { Gender::Male };
            vectors.push(SpeakerVector::new(format!("P{i:04}"), gender, values)?);
        }
        Pool::new(vectors, format!("synthetic(seed={seed})"))
    }

    pub fn vectors(&self) -> &[SpeakerVector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Indices of pool vectors with the given gender, in pool order.
    pub fn gender_subgroup(&self, gender: Gender) -> Vec<usize> {
        (0..self.vectors.len())
            .filter(|&i| self.vectors[i].gender() == gender)
            .collect()
    }
}

/// Replace every pool vector by the mean of itself and its `k_similar`
/// most-similar same-gender pool vectors (fewer when the subgroup is
/// smaller). Ids and genders are preserved; neighbor ranking ties break
/// by ascending pool index. All replacements are computed from the
/// original pool.
pub fn protect_pool(pool: &Pool, k_similar: usize) -> Result<Pool> {
    let mut protected = Vec::with_capacity(pool.len());
    for (i, v) in pool.vectors().iter().enumerate() {
        let mut neighbors: Vec<(usize, f64)> = Vec::new();
        for (j, w) in pool.vectors().iter().enumerate() {
            if j != i && w.gender() == v.gender() {
                neighbors.push((j, cosine(v, w)?));
            }
        }
        neighbors.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        neighbors.truncate(k_similar);

        let mut mean = v.values().to_vec();
        for &(j, _) in &neighbors {
            for (m, x) in mean.iter_mut().zip(pool.vectors()[j].values()) {
                *m += x;
            }
        }
        let count = (neighbors.len() + 1) as f64;
        for m in &mut mean {
            *m /= count;
        }
        if mean.iter().map(|v| v * v).sum::<f64>() <= 0.0 {
            return Err(Error::ZeroNorm(v.id().to_string()));
        }
        protected.push(SpeakerVector::new(v.id(), v.gender(), mean)?);
    }
    Pool::new(protected, format!("{} (protected)", pool.provenance()))
}

/// Parse an embedding-table file: one vector per line,
/// `<id> <gender:F|M|U> <D> <v1> ... <vD>`, `#` comments allowed.
pub fn parse_embedding_table(text: &str) -> Result<Vec<SpeakerVector>> {
    let mut out = Vec::new();
    for (line, l) in content_lines(text) {
        let tokens: Vec<&str> = l.split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected `<id> <gender> <D> <values...>`, got `{l}`"),
            });
        }
        let gender = Gender::from_code(tokens[1]).ok_or_else(|| Error::Parse {
            line,
            message: format!("invalid gender `{}` (expected F, M, or U)", tokens[1]),
        })?;
        let dim = parse_usize(tokens[2], line, "dimension")?;
        if tokens.len() != 3 + dim {
            return Err(Error::Parse {
                line,
                message: format!("expected {dim} coordinates, got {}", tokens.len() - 3),
            });
        }
        let values = tokens[3..]
            .iter()
            .map(|t| crate::textio::parse_f64(t, line, "coordinate"))
            .collect::<Result<Vec<f64>>>()?;
        out.push(
            SpeakerVector::new(tokens[0], gender, values).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

/// Canonical embedding-table serialization; `parse_embedding_table` of the
/// output is byte-stable.
pub fn write_embedding_table(vectors: &[SpeakerVector]) -> String {
    let mut out = String::new();
    for v in vectors {
        out.push_str(v.id());
        out.push(' ');
        out.push(v.gender().code());
        out.push(' ');
        out.push_str(&v.dim().to_string());
        for x in v.values() {
            out.push(' ');
            out.push_str(&format_real(*x));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(id: &str, values: &[f64]) -> SpeakerVector {
        SpeakerVector::new(id, Gender::Female, values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_identical_vectors() {
        let a = sv("a", &[1.0, 0.0]);
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn cosine_orthogonal_vectors() {
        let a = sv("a", &[1.0, 0.0]);
        let b = sv("b", &[0.0, 1.0]);
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn cosine_analytic_value() {
        let a = sv("a", &[1.0, 1.0]);
        let b = sv("b", &[1.0, 0.0]);
        let expected = 1.0 / 2.0_f64.sqrt();
        assert!((cosine(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let a = sv("a", &[1.0, 0.0]);
        let b = sv("b", &[1.0, 0.0, 0.0]);
        assert!(matches!(
            cosine(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_vector_rejected_at_construction() {
        assert!(matches!(
            SpeakerVector::new("z", Gender::Male, vec![0.0, 0.0]),
            Err(Error::ZeroNorm(_))
        ));
    }

    #[test]
    fn similarity_matrix_orthonormal_basis() {
        let vs = [sv("a", &[1.0, 0.0]), sv("b", &[0.0, 1.0])];
        let m = similarity_matrix(&vs, &vs).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.get(1, 1), 1.0);
    }

    #[test]
    fn similarity_matrix_antipodal() {
        let a = [sv("a", &[1.0, 0.0])];
        let b = [sv("b", &[1.0, 0.0]), sv("c", &[-1.0, 0.0])];
        let m = similarity_matrix(&a, &b).unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 2));
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(0, 1), -1.0);
    }

    #[test]
    fn similarity_matrix_empty_input() {
        let vs = [sv("a", &[1.0, 0.0])];
        assert!(matches!(
            similarity_matrix(&[], &vs),
            Err(Error::EmptyCollection(_))
        ));
    }

    fn random_unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<SpeakerVector> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let values: Vec<f64> = (0..dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                SpeakerVector::new(format!("v{i}"), Gender::Female, values).unwrap()
            })
            .collect()
    }

    #[test]
    fn self_similarity_matrix_matches_pairwise_recomputation() {
        let vs = random_unit_vectors(3, 8, 7);
        let m = similarity_matrix(&vs, &vs).unwrap();
        // Independent oracle: recompute each entry directly.
        for i in 0..3 {
            for j in 0..3 {
                let direct = cosine(&vs[i], &vs[j]).unwrap();
                assert_eq!(m.get(i, j), direct);
            }
        }
        assert!(m.is_symmetric(1e-12));
        for i in 0..3 {
            assert!((m.get(i, i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn protect_pool_identical_vectors_is_identity() {
        let vs: Vec<SpeakerVector> = (0..4)
            .map(|i| sv(&format!("p{i}"), &[0.6, 0.8]))
            .collect();
        let pool = Pool::new(vs, "test").unwrap();
        let protected = protect_pool(&pool, 10).unwrap();
        for (orig, prot) in pool.vectors().iter().zip(protected.vectors()) {
            assert_eq!(orig.values(), prot.values());
            assert_eq!(orig.id(), prot.id());
        }
        // Idempotent in the degenerate all-identical case.
        let twice = protect_pool(&protected, 10).unwrap();
        for (a, b) in protected.vectors().iter().zip(twice.vectors()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn protect_pool_singleton_subgroup_unchanged() {
        let vs = vec![
            SpeakerVector::new("f", Gender::Female, vec![1.0, 0.0]).unwrap(),
            SpeakerVector::new("m1", Gender::Male, vec![0.0, 1.0]).unwrap(),
            SpeakerVector::new("m2", Gender::Male, vec![0.0, 2.0]).unwrap(),
        ];
        let pool = Pool::new(vs, "test").unwrap();
        let protected = protect_pool(&pool, 10).unwrap();
        assert_eq!(protected.vectors()[0].values(), &[1.0, 0.0]);
        assert_eq!(protected.vectors()[1].values(), &[0.0, 1.5]);
    }

    #[test]
    fn protect_pool_matches_brute_force_neighbor_sort() {
        let vs = random_unit_vectors(12, 6, 11);
        let vs: Vec<SpeakerVector> = vs
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                SpeakerVector::new(format!("p{i}"), Gender::Female, v.values().to_vec()).unwrap()
            })
            .collect();
        let pool = Pool::new(vs.clone(), "test").unwrap();
        let protected = protect_pool(&pool, 10).unwrap();

        // Oracle: full sort of all same-gender neighbors per vector.
        for (i, v) in vs.iter().enumerate() {
            let mut sims: Vec<(usize, f64)> = (0..vs.len())
                .filter(|&j| j != i)
                .map(|j| (j, cosine(v, &vs[j]).unwrap()))
                .collect();
            sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let top: Vec<usize> = sims.iter().take(10).map(|&(j, _)| j).collect();
            let mut expected = v.values().to_vec();
            for &j in &top {
                for (e, x) in expected.iter_mut().zip(vs[j].values()) {
                    *e += x;
                }
            }
            for e in &mut expected {
                *e /= 11.0;
            }
            for (a, b) in protected.vectors()[i].values().iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12, "vector {i} differs from oracle");
            }
        }
    }

    #[test]
    fn pool_rejects_duplicate_ids() {
        let vs = vec![sv("a", &[1.0]), sv("a", &[2.0])];
        assert!(Pool::new(vs, "t").is_err());
    }

    #[test]
    fn embedding_table_round_trip() {
        let vs = vec![
            SpeakerVector::new("S1", Gender::Female, vec![0.25, -0.5]).unwrap(),
            SpeakerVector::new("S2", Gender::Unknown, vec![1.0, std::f64::consts::FRAC_1_SQRT_2]).unwrap(),
        ];
        let text = write_embedding_table(&vs);
        let parsed = parse_embedding_table(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].id(), "S1");
        assert_eq!(parsed[1].gender(), Gender::Unknown);
        // Canonical files round-trip byte-exactly.
        assert_eq!(write_embedding_table(&parsed), text);
    }

    #[test]
    fn embedding_table_parse_errors_carry_line_numbers() {
        let bad_gender = "# comment\nS1 X 2 1.0 0.0\n";
        match parse_embedding_table(bad_gender) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_count = "S1 F 3 1.0 0.0\n";
        assert!(parse_embedding_table(bad_count).is_err());
        let zero = "S1 F 2 0.0 0.0\n";
        assert!(parse_embedding_table(zero).is_err());
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric(
            a in proptest::collection::vec(-100.0f64..100.0, 4),
            b in proptest::collection::vec(-100.0f64..100.0, 4),
        ) {
            prop_assume!(a.iter().map(|v| v * v).sum::<f64>() > 1e-6);
            prop_assume!(b.iter().map(|v| v * v).sum::<f64>() > 1e-6);
            let x = sv("x", &a);
            let y = sv("y", &b);
            let ab = cosine(&x, &y).unwrap();
            let ba = cosine(&y, &x).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn cosine_is_scale_invariant(
            a in proptest::collection::vec(-100.0f64..100.0, 4),
            b in proptest::collection::vec(-100.0f64..100.0, 4),
            lambda in 1e-3f64..1e3,
        ) {
            prop_assume!(a.iter().map(|v| v * v).sum::<f64>() > 1e-6);
            prop_assume!(b.iter().map(|v| v * v).sum::<f64>() > 1e-6);
            let x = sv("x", &a);
            let scaled: Vec<f64> = a.iter().map(|v| v * lambda).collect();
            let xs = sv("xs", &scaled);
            let y = sv("y", &b);
            let base = cosine(&x, &y).unwrap();
            let scaled = cosine(&xs, &y).unwrap();
            prop_assert!((base - scaled).abs() < 1e-9);
        }
    }
}
