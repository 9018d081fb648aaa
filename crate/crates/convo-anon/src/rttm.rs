//! RTTM timelines: parsing, writing, per-speaker aggregation, overlap
//! detection, and duration-balanced splitting.
//!
//! The on-disk format is the usual ten-field RTTM line
//! `SPEAKER <file-id> 1 <onset> <dur> <NA> <NA> <speaker> <NA> <NA>`,
//! written with millisecond precision so canonical documents round-trip
//! byte-exactly.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::textio::{format_time, parse_f64};

/// One speaker turn: half-open interval [onset, onset + duration).
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    onset: f64,
    duration: f64,
    speaker: String,
}

impl Segment {
    pub fn new(onset: f64, duration: f64, speaker: impl Into<String>) -> Result<Self> {
        let speaker = speaker.into();
        if !onset.is_finite() || onset < 0.0 {
            return Err(Error::Contract(format!(
                "segment onset {onset} must be finite and non-negative"
            )));
        }
        if !duration.is_finite() || duration <= 0.0 {
            return Err(Error::Contract(format!(
                "segment duration {duration} must be strictly positive"
            )));
        }
        if speaker.is_empty() || speaker.contains(char::is_whitespace) {
            return Err(Error::Contract(format!(
                "speaker label `{speaker}` must be non-empty and whitespace-free"
            )));
        }
        Ok(Segment {
            onset,
            duration,
            speaker,
        })
    }

    pub fn onset(&self) -> f64 {
        self.onset
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    pub fn speaker(&self) -> &str {
        &self.speaker
    }
}

/// Timestamped speaker turns of one conversation, sorted by
/// (onset, speaker).
#[derive(Debug, Clone, PartialEq)]
pub struct RttmDocument {
    file_id: String,
    segments: Vec<Segment>,
}

impl RttmDocument {
    pub fn new(file_id: impl Into<String>, mut segments: Vec<Segment>) -> Result<Self> {
        let file_id = file_id.into();
        if file_id.contains(char::is_whitespace) {
            return Err(Error::Contract(format!(
                "file id `{file_id}` must be whitespace-free"
            )));
        }
        segments.sort_by(|a, b| {
            a.onset
                .total_cmp(&b.onset)
                .then_with(|| a.speaker.cmp(&b.speaker))
        });
        Ok(RttmDocument { file_id, segments })
    }

    pub fn empty(file_id: impl Into<String>) -> Self {
        RttmDocument {
            file_id: file_id.into(),
            segments: Vec::new(),
        }
    }

    pub fn file_id(&self) -> &str {
        &self.file_id
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.segments.iter().map(|s| s.speaker()).collect()
    }

    /// Sum of segment durations (overlap counted per segment).
    pub fn total_speech_time(&self) -> f64 {
        self.segments.iter().map(|s| s.duration()).sum()
    }

    /// End time of the last segment, 0 for an empty document.
    pub fn end(&self) -> f64 {
        self.segments.iter().map(|s| s.end()).fold(0.0, f64::max)
    }
}

/// Parse RTTM text. Non-SPEAKER lines are ignored; all SPEAKER lines must
/// share one file id. Errors carry the 1-based line number.
pub fn parse_rttm(text: &str) -> Result<RttmDocument> {
    let mut file_id: Option<String> = None;
    let mut segments = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.first() != Some(&"SPEAKER") {
            continue;
        }
        if fields.len() < 8 {
            return Err(Error::Parse {
                line,
                message: format!("SPEAKER line has {} fields, expected at least 8", fields.len()),
            });
        }
        let fid = fields[1];
        match &file_id {
            None => file_id = Some(fid.to_string()),
            Some(existing) if existing != fid => {
                return Err(Error::Parse {
                    line,
                    message: format!("file id `{fid}` differs from `{existing}`"),
                });
            }
            _ => {}
        }
        let onset = parse_f64(fields[3], line, "onset")?;
        let duration = parse_f64(fields[4], line, "duration")?;
        let segment = Segment::new(onset, duration, fields[7]).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        segments.push(segment);
    }
    RttmDocument::new(file_id.unwrap_or_default(), segments)
}

/// Canonical RTTM serialization: sorted segments, times with exactly
/// three decimals. An empty document writes an empty stream.
pub fn write_rttm(doc: &RttmDocument) -> String {
    let mut out = String::new();
    for s in doc.segments() {
        out.push_str(&format!(
            "SPEAKER {} 1 {} {} <NA> <NA> {} <NA> <NA>\n",
            doc.file_id(),
            format_time(s.onset()),
            format_time(s.duration()),
            s.speaker()
        ));
    }
    out
}

/// All segments of one speaker in temporal order.
pub fn aggregate_speaker(doc: &RttmDocument, speaker: &str) -> Result<Vec<Segment>> {
    let spans: Vec<Segment> = doc
        .segments()
        .iter()
        .filter(|s| s.speaker() == speaker)
        .cloned()
        .collect();
    if spans.is_empty() {
        return Err(Error::NotFound(format!(
            "speaker `{speaker}` not in document `{}`",
            doc.file_id()
        )));
    }
    Ok(spans)
}

/// A maximal interval during which two or more speakers are active.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapRegion {
    onset: f64,
    duration: f64,
    speakers: BTreeSet<String>,
}

impl OverlapRegion {
    pub fn new(onset: f64, duration: f64, speakers: BTreeSet<String>) -> Result<Self> {
        if duration <= 0.0 {
            return Err(Error::Contract(
                "overlap region duration must be positive".to_string(),
            ));
        }
        if speakers.len() < 2 {
            return Err(Error::Contract(
                "overlap region needs at least two speakers".to_string(),
            ));
        }
        Ok(OverlapRegion {
            onset,
            duration,
            speakers,
        })
    }

    pub fn onset(&self) -> f64 {
        self.onset
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    pub fn speakers(&self) -> &BTreeSet<String> {
        &self.speakers
    }
}

/// Maximal intervals where at least two speakers are simultaneously
/// active. Regions are disjoint and sorted; the speaker set is the union
/// of everyone active during the region.
pub fn find_overlaps(doc: &RttmDocument) -> Vec<OverlapRegion> {
    // Event sweep: +1 at onsets, -1 at ends. Ends sort before starts at
    // the same instant so half-open abutting segments never overlap.
    #[derive(PartialEq)]
    enum Kind {
        End,
        Start,
    }
    let mut events: Vec<(f64, Kind, &str)> = Vec::with_capacity(doc.segments().len() * 2);
    for s in doc.segments() {
        events.push((s.onset(), Kind::Start, s.speaker()));
        events.push((s.end(), Kind::End, s.speaker()));
    }
    events.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then_with(|| match (&a.1, &b.1) {
            (Kind::End, Kind::Start) => std::cmp::Ordering::Less,
            (Kind::Start, Kind::End) => std::cmp::Ordering::Greater,
            _ => a.2.cmp(b.2),
        })
    });

    let mut active: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    let mut regions: Vec<OverlapRegion> = Vec::new();
    let mut open: Option<(f64, BTreeSet<String>)> = None;
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        // Apply all events at this instant.
        while i < events.len() && events[i].0 == t {
            let (_, kind, spk) = &events[i];
            match kind {
                Kind::Start => *active.entry(spk).or_insert(0) += 1,
                Kind::End => {
                    if let Some(c) = active.get_mut(spk) {
                        *c -= 1;
                        if *c == 0 {
                            active.remove(spk);
                        }
                    }
                }
            }
            i += 1;
        }
        let overlapping = active.len() >= 2;
        match (&mut open, overlapping) {
            (None, true) => {
                let speakers: BTreeSet<String> = active.keys().map(|s| s.to_string()).collect();
                open = Some((t, speakers));
            }
            (Some((_, speakers)), true) => {
                speakers.extend(active.keys().map(|s| s.to_string()));
            }
            (Some((onset, speakers)), false) => {
                if t > *onset {
                    regions.push(
                        OverlapRegion::new(*onset, t - *onset, std::mem::take(speakers))
                            .expect("sweep produces valid regions"),
                    );
                }
                open = None;
            }
            (None, false) => {}
        }
    }
    regions
}

/// Split a span list at its cumulative-duration midpoint. A segment
/// straddling the midpoint is cut in two so the halves are
/// duration-balanced.
pub fn split_half_by_duration(spans: &[Segment]) -> Result<(Vec<Segment>, Vec<Segment>)> {
    if spans.is_empty() {
        return Err(Error::EmptyCollection("span list to split".to_string()));
    }
    let total: f64 = spans.iter().map(|s| s.duration()).sum();
    let half = total / 2.0;
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut acc = 0.0;
    for s in spans {
        if acc >= half {
            second.push(s.clone());
        } else if acc + s.duration() <= half {
            first.push(s.clone());
            acc += s.duration();
        } else {
            // Straddling segment: cut at the midpoint.
            let cut = half - acc;
            first.push(Segment::new(s.onset(), cut, s.speaker())?);
            second.push(Segment::new(s.onset() + cut, s.duration() - cut, s.speaker())?);
            acc = half;
        }
    }
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(onset: f64, duration: f64, speaker: &str) -> Segment {
        Segment::new(onset, duration, speaker).unwrap()
    }

    fn doc(segments: Vec<Segment>) -> RttmDocument {
        RttmDocument::new("f", segments).unwrap()
    }

    #[test]
    fn parse_single_line() {
        let text = "SPEAKER f 1 0.000 1.500 <NA> <NA> A <NA> <NA>\n";
        let d = parse_rttm(text).unwrap();
        assert_eq!(d.file_id(), "f");
        assert_eq!(d.segments().len(), 1);
        let s = &d.segments()[0];
        assert_eq!(s.onset(), 0.0);
        assert_eq!(s.duration(), 1.5);
        assert_eq!(s.speaker(), "A");
    }

    #[test]
    fn write_canonical_line() {
        let d = doc(vec![seg(0.0, 1.5, "A")]);
        assert_eq!(
            write_rttm(&d),
            "SPEAKER f 1 0.000 1.500 <NA> <NA> A <NA> <NA>\n"
        );
    }

    #[test]
    fn empty_document_writes_empty_stream() {
        assert_eq!(write_rttm(&RttmDocument::empty("f")), "");
    }

    #[test]
    fn round_trips_are_identities() {
        let d = doc(vec![seg(0.0, 1.5, "A"), seg(1.5, 2.25, "B"), seg(4.0, 0.5, "A")]);
        let text = write_rttm(&d);
        let parsed = parse_rttm(&text).unwrap();
        assert_eq!(parsed, d);
        assert_eq!(write_rttm(&parsed), text);
    }

    #[test]
    fn parse_rejects_negative_duration_with_line_number() {
        let text = "SPEAKER f 1 0.000 1.000 <NA> <NA> A <NA> <NA>\nSPEAKER f 1 2.000 -1.0 <NA> <NA> B <NA> <NA>\n";
        match parse_rttm(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_malformed_numeric() {
        let text = "SPEAKER f 1 abc 1.0 <NA> <NA> A <NA> <NA>\n";
        assert!(matches!(parse_rttm(text), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn parse_ignores_non_speaker_lines() {
        let text = ";; comment\nLIGHT f 1 0 1 x\nSPEAKER f 1 0.000 1.000 <NA> <NA> A <NA> <NA>\n";
        let d = parse_rttm(text).unwrap();
        assert_eq!(d.segments().len(), 1);
    }

    #[test]
    fn aggregate_filters_by_speaker_in_temporal_order() {
        let d = doc(vec![seg(0.0, 1.0, "A"), seg(1.0, 1.0, "B"), seg(2.0, 1.0, "A")]);
        let spans = aggregate_speaker(&d, "A").unwrap();
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].onset(), 0.0);
        assert_eq!(spans[1].onset(), 2.0);
        assert!(matches!(
            aggregate_speaker(&d, "Z"),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn aggregate_single_speaker_doc_returns_all() {
        let d = doc(vec![seg(0.0, 1.0, "A"), seg(2.0, 3.0, "A")]);
        assert_eq!(aggregate_speaker(&d, "A").unwrap().len(), 2);
    }

    #[test]
    fn per_speaker_durations_sum_to_total() {
        // 5-speaker document; oracle accumulates per line independently.
        let segments = vec![
            seg(0.0, 2.0, "S1"),
            seg(2.0, 1.5, "S2"),
            seg(3.5, 0.75, "S3"),
            seg(4.25, 2.5, "S4"),
            seg(6.75, 1.25, "S5"),
            seg(8.0, 2.0, "S1"),
            seg(10.0, 0.5, "S3"),
        ];
        let mut oracle_total = 0.0;
        for s in &segments {
            oracle_total += s.duration();
        }
        let d = doc(segments);
        let mut sum = 0.0;
        for spk in d.speakers() {
            sum += aggregate_speaker(&d, spk)
                .unwrap()
                .iter()
                .map(|s| s.duration())
                .sum::<f64>();
        }
        assert!((sum - oracle_total).abs() < 1e-9);
    }

    #[test]
    fn overlap_simple_intersection() {
        let d = doc(vec![seg(0.0, 2.0, "A"), seg(1.0, 2.0, "B")]);
        let regions = find_overlaps(&d);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].onset(), 1.0);
        assert_eq!(regions[0].end(), 2.0);
        let speakers: Vec<&str> = regions[0].speakers().iter().map(|s| s.as_str()).collect();
        assert_eq!(speakers, vec!["A", "B"]);
    }

    #[test]
    fn overlap_none_for_disjoint_doc() {
        let d = doc(vec![seg(0.0, 1.0, "A"), seg(1.0, 1.0, "B")]);
        assert!(find_overlaps(&d).is_empty());
    }

    #[test]
    fn overlap_matches_sweep_line_oracle() {
        let d = doc(vec![seg(0.0, 5.0, "A"), seg(1.0, 1.0, "B"), seg(3.0, 3.0, "C")]);
        let regions = find_overlaps(&d);
        assert_eq!(regions.len(), 2);
        assert_eq!((regions[0].onset(), regions[0].end()), (1.0, 2.0));
        assert!(regions[0].speakers().contains("A") && regions[0].speakers().contains("B"));
        assert_eq!((regions[1].onset(), regions[1].end()), (3.0, 5.0));
        assert!(regions[1].speakers().contains("A") && regions[1].speakers().contains("C"));
    }

    /// 10 ms frame rasterization oracle for overlap detection.
    fn overlap_frames_oracle(d: &RttmDocument) -> Vec<bool> {
        let frames = (d.end() / 0.01).ceil() as usize;
        (0..frames)
            .map(|f| {
                let t = (f as f64 + 0.5) * 0.01;
                let active = d
                    .segments()
                    .iter()
                    .filter(|s| t >= s.onset() && t < s.end())
                    .map(|s| s.speaker())
                    .collect::<BTreeSet<_>>();
                active.len() >= 2
            })
            .collect()
    }

    #[test]
    fn overlap_regions_match_frame_rasterization() {
        let d = doc(vec![
            seg(0.0, 3.0, "A"),
            seg(0.5, 1.0, "B"),
            seg(1.25, 2.5, "C"),
            seg(4.0, 1.0, "B"),
        ]);
        let regions = find_overlaps(&d);
        // Regions pairwise disjoint.
        for w in regions.windows(2) {
            assert!(w[0].end() <= w[1].onset() + 1e-12);
        }
        let frames = overlap_frames_oracle(&d);
        for (f, &overlapped) in frames.iter().enumerate() {
            let t = (f as f64 + 0.5) * 0.01;
            let in_region = regions.iter().any(|r| t >= r.onset() && t < r.end());
            assert_eq!(in_region, overlapped, "frame at {t}");
        }
    }

    #[test]
    fn split_half_midpoint_cut() {
        let (a, b) = split_half_by_duration(&[seg(0.0, 4.0, "A")]).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(b.len(), 1);
        assert_eq!((a[0].onset(), a[0].end()), (0.0, 2.0));
        assert_eq!((b[0].onset(), b[0].end()), (2.0, 4.0));
    }

    #[test]
    fn split_half_symmetric_spans() {
        let (a, b) = split_half_by_duration(&[seg(0.0, 1.0, "A"), seg(1.0, 1.0, "A")]).unwrap();
        assert_eq!(a, vec![seg(0.0, 1.0, "A")]);
        assert_eq!(b, vec![seg(1.0, 1.0, "A")]);
    }

    #[test]
    fn split_half_balances_cumulative_durations() {
        // Durations 1, 1, 2: cumulative midpoint at 2.0 falls on a span
        // boundary; both halves must total 2.0.
        let spans = [seg(0.0, 1.0, "A"), seg(2.0, 1.0, "A"), seg(4.0, 2.0, "A")];
        let (a, b) = split_half_by_duration(&spans).unwrap();
        let da: f64 = a.iter().map(|s| s.duration()).sum();
        let db: f64 = b.iter().map(|s| s.duration()).sum();
        assert!((da - 2.0).abs() < 1e-12);
        assert!((db - 2.0).abs() < 1e-12);
    }

    #[test]
    fn split_half_empty_input_errors() {
        assert!(matches!(
            split_half_by_duration(&[]),
            Err(Error::EmptyCollection(_))
        ));
    }

    proptest! {
        #[test]
        fn canonical_round_trip_random_docs(
            raw in proptest::collection::vec((0u32..2000, 1u32..1500, 0u8..4), 1..12)
        ) {
            let segments: Vec<Segment> = raw
                .iter()
                .map(|&(on, dur, spk)| {
                    seg(on as f64 / 100.0, dur as f64 / 100.0, &format!("S{spk}"))
                })
                .collect();
            let d = doc(segments);
            let text = write_rttm(&d);
            let parsed = parse_rttm(&text).unwrap();
            prop_assert_eq!(&parsed, &d);
            prop_assert_eq!(write_rttm(&parsed), text);
        }

        #[test]
        fn split_halves_differ_by_less_than_one_segment(
            raw in proptest::collection::vec(1u32..1000, 1..10)
        ) {
            let mut onset = 0.0;
            let spans: Vec<Segment> = raw
                .iter()
                .map(|&d| {
                    let s = seg(onset, d as f64 / 100.0, "A");
                    onset += d as f64 / 100.0 + 0.1;
                    s
                })
                .collect();
            let total: f64 = spans.iter().map(|s| s.duration()).sum();
            let (a, b) = split_half_by_duration(&spans).unwrap();
            let da: f64 = a.iter().map(|s| s.duration()).sum();
            let db: f64 = b.iter().map(|s| s.duration()).sum();
            prop_assert!((da - total / 2.0).abs() < 1e-9);
            prop_assert!((db - total / 2.0).abs() < 1e-9);
        }
    }
}
