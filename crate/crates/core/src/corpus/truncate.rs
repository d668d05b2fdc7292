use std::fmt::Write as _;
use std::path::Path;

use crate::ubm::FeatureSequence;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowMode {
    Five,
    Ten,
    /// 10 s windows for even-indexed parents, 5 s for odd ones.
    Mixed,
}

impl std::str::FromStr for WindowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "5" => Ok(Self::Five),
            "10" => Ok(Self::Ten),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::Precondition(format!(
                "window must be 5, 10 or mixed, got {other:?}"
            ))),
        }
    }
}

/// Sliding-window truncation with a shift of half the window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TruncationSpec {
    pub mode: WindowMode,
    pub frame_rate: usize,
}

impl TruncationSpec {
    pub fn new(mode: WindowMode, frame_rate: usize) -> Self {
        Self { mode, frame_rate }
    }

    pub fn window_seconds(&self, parent_index: usize) -> usize {
        match self.mode {
            WindowMode::Five => 5,
            WindowMode::Ten => 10,
            WindowMode::Mixed if parent_index % 2 == 0 => 10,
            WindowMode::Mixed => 5,
        }
    }

    pub fn window_frames(&self, parent_index: usize) -> usize {
        self.window_seconds(parent_index) * self.frame_rate
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncationRecord {
    pub segment_id: String,
    pub parent_id: String,
    pub start_frame: usize,
    pub num_frames: usize,
    pub window_seconds: usize,
    /// Parent shorter than one window; the segment is a full copy.
    pub degenerate: bool,
}

#[derive(Clone, Debug)]
pub struct Segment {
    pub features: FeatureSequence,
    pub record: TruncationRecord,
}

pub fn segment_id(parent: &str, k: usize) -> String {
    format!("{parent}-seg{k:03}")
}

/// Cut one utterance into windows. `parent_index` selects the window
/// length in mixed mode.
pub fn truncate(utt: &FeatureSequence, spec: &TruncationSpec, parent_index: usize) -> Vec<Segment> {
    let window = spec.window_frames(parent_index);
    let seconds = spec.window_seconds(parent_index);
    let n = utt.num_frames();
    let parent = &utt.utterance_id;
    if n < window || window == 0 {
        log::warn!("{parent}: {n} frames is shorter than a {seconds} s window; keeping a full copy");
        let id = segment_id(parent, 0);
        return vec![Segment {
            features: utt.slice(id.clone(), 0, n),
            record: TruncationRecord {
                segment_id: id,
                parent_id: parent.clone(),
                start_frame: 0,
                num_frames: n,
                window_seconds: seconds,
                degenerate: true,
            },
        }];
    }
    let shift = (window / 2).max(1);
    (0..=(n - window) / shift)
        .map(|k| {
            let id = segment_id(parent, k);
            let start = k * shift;
            Segment {
                features: utt.slice(id.clone(), start, window),
                record: TruncationRecord {
                    segment_id: id,
                    parent_id: parent.clone(),
                    start_frame: start,
                    num_frames: window,
                    window_seconds: seconds,
                    degenerate: false,
                },
            }
        })
        .collect()
}

/// Truncate every utterance, parents indexed in input order.
pub fn truncate_all(utts: &[FeatureSequence], spec: &TruncationSpec) -> Vec<Segment> {
    utts.iter()
        .enumerate()
        .flat_map(|(i, u)| truncate(u, spec, i))
        .collect()
}

/// CSV `segment_id,parent_id,start_frame,num_frames,window_seconds,degenerate`.
pub fn write_truncation_records(path: &Path, records: &[TruncationRecord]) -> Result<()> {
    let mut out = String::from("segment_id,parent_id,start_frame,num_frames,window_seconds,degenerate\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.segment_id, r.parent_id, r.start_frame, r.num_frames, r.window_seconds, r.degenerate as u8
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_truncation_records(path: &Path) -> Result<Vec<TruncationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |n: usize, what: &str| Error::Format(format!("{}:{}: {what}", path.display(), n + 1));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == "segment_id,parent_id,start_frame,num_frames,window_seconds,degenerate" => {}
        _ => return Err(bad(0, "missing truncation header")),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(bad(n, "expected six fields"));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(n, "expected an integer"));
            Ok(TruncationRecord {
                segment_id: f[0].to_string(),
                parent_id: f[1].to_string(),
                start_frame: num(f[2])?,
                num_frames: num(f[3])?,
                window_seconds: num(f[4])?,
                degenerate: match f[5] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad(n, "degenerate flag must be 0 or 1")),
                },
            })
        })
        .collect()
}
