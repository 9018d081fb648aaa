//! Spectral-clustering speaker diarization over windowed embedding
//! streams.
//!
//! A stream holds fixed-length windows (default 1.5 s, 0.75 s hop) with a
//! per-window speech flag. Active windows are scored pairwise by cosine,
//! the affinity is sparsified row-wise and clustered through the
//! symmetric-normalized Laplacian, and the labels are rasterized back to
//! an RTTM timeline at 10 ms resolution.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embeddings::{cosine_values, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::metrics::FRAME_SECONDS;
use crate::rttm::{RttmDocument, Segment};
use crate::seeding::derive_seed;
use crate::textio::{content_lines, format_real, format_time, parse_f64, parse_usize};

pub const DEFAULT_WINDOW_SECONDS: f64 = 1.5;
pub const DEFAULT_HOP_SECONDS: f64 = 0.75;
/// Fraction of each affinity row kept during refinement.
pub const DEFAULT_AFFINITY_KEEP: f64 = 0.5;

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITERATIONS: usize = 300;
const GRID_TOLERANCE: f64 = 1e-6;

/// One embedding window.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    onset: f64,
    values: Vec<f64>,
}

impl Window {
    pub fn new(onset: f64, values: Vec<f64>) -> Result<Self> {
        if !onset.is_finite() || onset < 0.0 {
            return Err(Error::Contract(format!(
                "window onset {onset} must be finite and non-negative"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("window has non-finite values".to_string()));
        }
        Ok(Window { onset, values })
    }

    pub fn onset(&self) -> f64 {
        self.onset
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A conversation as a sequence of embedding windows on a fixed hop grid,
/// with a per-window speech flag.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedEmbeddingStream {
    file_id: String,
    window_length: f64,
    hop: f64,
    windows: Vec<Window>,
    speech_mask: Vec<bool>,
}

impl WindowedEmbeddingStream {
    pub fn new(
        file_id: impl Into<String>,
        window_length: f64,
        hop: f64,
        windows: Vec<Window>,
        speech_mask: Vec<bool>,
    ) -> Result<Self> {
        let file_id = file_id.into();
        if file_id.is_empty() || file_id.contains(char::is_whitespace) {
            return Err(Error::Contract(
                "stream file id must be non-empty and whitespace-free".to_string(),
            ));
        }
        if !hop.is_finite() || hop <= 0.0 || !window_length.is_finite() {
            return Err(Error::Contract("hop must be positive".to_string()));
        }
        if window_length < hop {
            return Err(Error::Contract(format!(
                "window length {window_length} must be at least the hop {hop}"
            )));
        }
        if windows.len() != speech_mask.len() {
            return Err(Error::Contract(format!(
                "speech mask length {} does not match window count {}",
                speech_mask.len(),
                windows.len()
            )));
        }
        if let Some(first) = windows.first() {
            let dim = first.values.len();
            for w in &windows {
                if w.values.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: w.values.len(),
                    });
                }
            }
        }
        for pair in windows.windows(2) {
            if (pair[1].onset - pair[0].onset - hop).abs() > GRID_TOLERANCE {
                return Err(Error::Contract(format!(
                    "window onsets must increase by the hop: {} then {}",
                    pair[0].onset, pair[1].onset
                )));
            }
        }
        Ok(WindowedEmbeddingStream {
            file_id,
            window_length,
            hop,
            windows,
            speech_mask,
        })
    }

    pub fn file_id(&self) -> &str {
        &self.file_id
    }

    pub fn window_length(&self) -> f64 {
        self.window_length
    }

    pub fn hop(&self) -> f64 {
        self.hop
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn speech_mask(&self) -> &[bool] {
        &self.speech_mask
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.windows.first().map_or(0, |w| w.values.len())
    }

    /// Indices of windows flagged as speech.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.windows.len())
            .filter(|&i| self.speech_mask[i])
            .collect()
    }

    pub fn window_center(&self, idx: usize) -> f64 {
        self.windows[idx].onset + self.window_length / 2.0
    }

    /// End of the last window, 0 for an empty stream.
    pub fn end(&self) -> f64 {
        self.windows
            .last()
            .map_or(0.0, |w| w.onset + self.window_length)
    }
}

/// Refined affinity over the active windows: cosine scores with only the
/// top `keep_fraction` of each row kept, max-symmetrized, unit diagonal.
pub fn affinity(stream: &WindowedEmbeddingStream, keep_fraction: f64) -> Result<SimilarityMatrix> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "affinity keep fraction {keep_fraction} must be in (0, 1]"
        )));
    }
    let active = stream.active_indices();
    if active.is_empty() {
        return Err(Error::EmptyCollection("no active windows".to_string()));
    }
    let n = active.len();
    let mut raw = vec![0.0; n * n];
    for i in 0..n {
        raw[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let s = cosine_values(
                stream.windows[active[i]].values(),
                stream.windows[active[j]].values(),
            )?;
            raw[i * n + j] = s;
            raw[j * n + i] = s;
        }
    }

    let keep = ((keep_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut refined = vec![0.0; n * n];
    for i in 0..n {
        let row = &raw[i * n..(i + 1) * n];
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in idx.iter().take(keep) {
            refined[i * n + j] = row[j];
        }
    }
    // Symmetrize by max and force the diagonal.
    for i in 0..n {
        for j in (i + 1)..n {
            let m = refined[i * n + j].max(refined[j * n + i]);
            refined[i * n + j] = m;
            refined[j * n + i] = m;
        }
        refined[i * n + i] = 1.0;
    }
    SimilarityMatrix::from_data(n, n, refined)
}

/// Output of spectral clustering over active windows.
#[derive(Debug, Clone)]
pub struct ClusteringResult {
    /// Cluster id per active window, each in [0, k).
    pub labels: Vec<usize>,
    /// Estimated (or fixed) speaker count.
    pub k: usize,
    /// Laplacian eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
}

/// Spectral clustering on a refined affinity: symmetric-normalized
/// Laplacian, eigengap estimate of k (unless `k_fixed`), and seeded
/// k-means over the row-normalized eigenvector embedding.
pub fn spectral_cluster(
    aff: &SimilarityMatrix,
    k_max: usize,
    k_fixed: Option<usize>,
    seed: u64,
) -> Result<ClusteringResult> {
    if aff.rows() != aff.cols() {
        return Err(Error::Contract(format!(
            "affinity must be square, got {}x{}",
            aff.rows(),
            aff.cols()
        )));
    }
    if !aff.is_symmetric(1e-9) {
        return Err(Error::Contract("affinity must be symmetric".to_string()));
    }
    if k_max == 0 {
        return Err(Error::InvalidConfig("k_max must be at least 1".to_string()));
    }
    let n = aff.rows();
    if let Some(k) = k_fixed {
        if k == 0 || k > n || k > k_max {
            return Err(Error::InvalidConfig(format!(
                "fixed k {k} must be in [1, min({n}, k_max {k_max})]"
            )));
        }
    }

    // Symmetric-normalized Laplacian L = I - D^{-1/2} A D^{-1/2}.
    let inv_sqrt_d: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = aff.row(i).iter().sum();
            if d > 1e-12 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let laplacian = DMatrix::from_fn(n, n, |i, j| {
        let norm = aff.get(i, j) * inv_sqrt_d[i] * inv_sqrt_d[j];
        if i == j {
            1.0 - norm
        } else {
            -norm
        }
    });
    let eigen = nalgebra::linalg::SymmetricEigen::new(laplacian);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[a].total_cmp(&eigen.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eigen.eigenvalues[i]).collect();

    let k = match k_fixed {
        Some(k) => k,
        None => {
            let upper = k_max.min(n.saturating_sub(1));
            if upper == 0 {
                1
            } else {
                let mut best_k = 1;
                let mut best_gap = f64::NEG_INFINITY;
                for k in 1..=upper {
                    let gap = eigenvalues[k] - eigenvalues[k - 1];
                    if gap > best_gap {
                        best_gap = gap;
                        best_k = k;
                    }
                }
                best_k
            }
        }
    };

    // Row-normalized embedding from the k smallest eigenvectors.
    let mut points: Vec<Vec<f64>> = vec![vec![0.0; k]; n];
    for (col, &src) in order.iter().take(k).enumerate() {
        for (row, point) in points.iter_mut().enumerate() {
            point[col] = eigen.eigenvectors[(row, src)];
        }
    }
    for p in &mut points {
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for v in p.iter_mut() {
                *v /= norm;
            }
        }
    }

    let labels = kmeans(&points, k, seed);
    Ok(ClusteringResult {
        labels,
        k,
        eigenvalues,
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded Lloyd iterations with k-means++ style seeding and restarts.
fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    debug_assert!(k >= 1 && k <= n);
    let mut best: Option<(f64, Vec<usize>)> = None;

    for restart in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, restart as u64));
        let mut centroids = plus_plus_seeding(points, k, &mut rng);
        let mut labels = vec![0usize; n];
        for _ in 0..KMEANS_MAX_ITERATIONS {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let mut best_c = 0;
                let mut best_d = f64::INFINITY;
                for (c, centroid) in centroids.iter().enumerate() {
                    let d = squared_distance(p, centroid);
                    if d < best_d {
                        best_d = d;
                        best_c = c;
                    }
                }
                if labels[i] != best_c {
                    labels[i] = best_c;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut counts = vec![0usize; k];
            let mut sums = vec![vec![0.0; points[0].len()]; k];
            for (i, p) in points.iter().enumerate() {
                counts[labels[i]] += 1;
                for (s, v) in sums[labels[i]].iter_mut().zip(p) {
                    *s += v;
                }
            }
            for c in 0..k {
                if counts[c] == 0 {
                    // Re-seed an empty cluster with the point farthest
                    // from its assigned centroid.
                    let far = (0..n)
                        .max_by(|&a, &b| {
                            squared_distance(&points[a], &centroids[labels[a]])
                                .total_cmp(&squared_distance(&points[b], &centroids[labels[b]]))
                        })
                        .expect("non-empty point set");
                    centroids[c] = points[far].clone();
                } else {
                    for (s, out) in sums[c].iter().zip(centroids[c].iter_mut()) {
                        *out = s / counts[c] as f64;
                    }
                }
            }
        }
        let inertia: f64 = points
            .iter()
            .enumerate()
            .map(|(i, p)| squared_distance(p, &centroids[labels[i]]))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.expect("at least one restart").1
}

fn plus_plus_seeding(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)].clone());
    while centroids.len() < k {
        let dists: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| squared_distance(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = dists.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, d) in dists.iter().enumerate() {
                if r < *d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            // All points coincide with a centroid; take the first index
            // not yet chosen.
            (0..n)
                .find(|i| !centroids.iter().any(|c| c == &points[*i]))
                .unwrap_or(0)
        };
        centroids.push(points[next].clone());
    }
    centroids
}

/// Rasterize cluster labels to an RTTM document. Each 10 ms frame goes to
/// the nearest covering active window's label; segments shorter than two
/// frames are dropped.
pub fn labels_to_rttm(
    stream: &WindowedEmbeddingStream,
    result: &ClusteringResult,
) -> Result<RttmDocument> {
    let active = stream.active_indices();
    if result.labels.len() != active.len() {
        return Err(Error::Contract(format!(
            "label count {} does not cover the {} active windows",
            result.labels.len(),
            active.len()
        )));
    }
    if active.is_empty() {
        return Ok(RttmDocument::empty(stream.file_id()));
    }

    let end = stream.end();
    let n_frames = ((end / FRAME_SECONDS) - 1e-9).ceil() as usize;
    let mut frame_labels: Vec<Option<usize>> = vec![None; n_frames];
    let mut start = 0usize;
    for (f, slot) in frame_labels.iter_mut().enumerate() {
        let t = (f as f64 + 0.5) * FRAME_SECONDS;
        while start < active.len()
            && stream.windows[active[start]].onset() + stream.window_length() <= t
        {
            start += 1;
        }
        let mut best: Option<(f64, usize)> = None;
        for (pos, &w) in active.iter().enumerate().skip(start) {
            if stream.windows[w].onset() > t {
                break;
            }
            let dist = (stream.window_center(w) - t).abs();
            if best.is_none_or(|(d, _)| dist < d) {
                best = Some((dist, pos));
            }
        }
        *slot = best.map(|(_, pos)| result.labels[pos]);
    }

    let mut segments = Vec::new();
    let mut run: Option<(usize, usize, usize)> = None; // (label, start frame, len)
    for (f, label) in frame_labels.iter().enumerate() {
        match (label, &mut run) {
            (Some(l), Some((rl, _, len))) if l == rl => *len += 1,
            (Some(l), _) => {
                flush_run(&mut segments, run.take())?;
                run = Some((*l, f, 1));
            }
            (None, _) => flush_run(&mut segments, run.take())?,
        }
    }
    flush_run(&mut segments, run.take())?;
    RttmDocument::new(stream.file_id(), segments)
}

fn flush_run(segments: &mut Vec<Segment>, run: Option<(usize, usize, usize)>) -> Result<()> {
    if let Some((label, start, len)) = run {
        if len >= 2 {
            segments.push(Segment::new(
                start as f64 * FRAME_SECONDS,
                len as f64 * FRAME_SECONDS,
                format!("spk{label}"),
            )?);
        }
    }
    Ok(())
}

/// Full diarization: affinity, spectral clustering, RTTM. A stream with
/// no active windows yields an empty document.
pub fn diarize(
    stream: &WindowedEmbeddingStream,
    keep_fraction: f64,
    k_max: usize,
    k_fixed: Option<usize>,
    seed: u64,
) -> Result<RttmDocument> {
    if stream.active_indices().is_empty() {
        return Ok(RttmDocument::empty(stream.file_id()));
    }
    let aff = affinity(stream, keep_fraction)?;
    let result = spectral_cluster(&aff, k_max, k_fixed, seed)?;
    labels_to_rttm(stream, &result)
}

/// Parse a stream file: header `<file_id> <window_len> <hop> <D>`, then
/// one window per line `<onset> <active:0|1> <v1> ... <vD>`.
pub fn parse_stream(text: &str) -> Result<WindowedEmbeddingStream> {
    let mut lines = content_lines(text);
    let (header_line, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing stream header".to_string(),
    })?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 4 {
        return Err(Error::Parse {
            line: header_line,
            message: format!(
                "expected header `<file_id> <window_len> <hop> <D>`, got `{header}`"
            ),
        });
    }
    let file_id = tokens[0].to_string();
    let window_length = parse_f64(tokens[1], header_line, "window length")?;
    let hop = parse_f64(tokens[2], header_line, "hop")?;
    let dim = parse_usize(tokens[3], header_line, "dimension")?;

    let mut windows = Vec::new();
    let mut mask = Vec::new();
    for (line, l) in lines {
        let tokens: Vec<&str> = l.split_whitespace().collect();
        if tokens.len() != 2 + dim {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", 2 + dim, tokens.len()),
            });
        }
        let onset = parse_f64(tokens[0], line, "onset")?;
        let active = match tokens[1] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("invalid active flag `{other}`"),
                })
            }
        };
        let values = tokens[2..]
            .iter()
            .map(|t| parse_f64(t, line, "coordinate"))
            .collect::<Result<Vec<f64>>>()?;
        windows.push(Window::new(onset, values).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?);
        mask.push(active);
    }
    WindowedEmbeddingStream::new(file_id, window_length, hop, windows, mask)
}

/// Canonical stream serialization; round-trips byte-exactly.
pub fn write_stream(stream: &WindowedEmbeddingStream) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{} {} {} {}\n",
        stream.file_id(),
        format_time(stream.window_length()),
        format_time(stream.hop()),
        stream.dim()
    ));
    for (w, &active) in stream.windows().iter().zip(stream.speech_mask()) {
        out.push_str(&format_time(w.onset()));
        out.push(' ');
        out.push(if active { '1' } else { '0' });
        for v in w.values() {
            out.push(' ');
            out.push_str(&format_real(*v));
        }
        out.push('\n');
    }
    out
}
