use std::io::BufRead;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::gate::{gate_stream, ChunkStream, Mode};
use super::{Category, ChunkContext, ValidationError, Validator};

/// One labeled corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusItem {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub sources: Vec<String>,
    /// Categories this item is a positive for.
    #[serde(default)]
    pub labels: Vec<Category>,
}

impl CorpusItem {
    /// Sentence-sized chunks, in order, whose concatenation is the text.
    pub fn chunks(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut start = 0;
        for (i, _) in self.text.match_indices(". ") {
            out.push(self.text[start..i + 2].to_string());
            start = i + 2;
        }
        if start < self.text.len() {
            out.push(self.text[start..].to_string());
        }
        out
    }
}

/// Read a line-delimited corpus. Blank lines and lines starting with `#` are skipped.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusItem>, ValidationError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut items = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        items.push(
            serde_json::from_str(t).map_err(|e| ValidationError::Corpus { line: n + 1, message: e.to_string() })?,
        );
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryMetrics {
    pub category: Category,
    pub positives: usize,
    pub negatives: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    /// true positives / positives (0 without positives).
    pub detection_rate: f64,
    /// false positives / negatives (0 without negatives).
    pub false_positive_rate: f64,
}

/// Per-category detection and false-positive rates. An item counts as
/// detected for a category when any validator of that category returns a
/// non-Pass verdict on its full text.
pub fn evaluate_corpus(items: &[CorpusItem], validators: &[&dyn Validator]) -> Result<Vec<CategoryMetrics>, ValidationError> {
    if items.is_empty() {
        return Err(ValidationError::EmptyCorpus);
    }
    let mut out = Vec::new();
    for cat in Category::ALL {
        let mut m = CategoryMetrics {
            category: cat,
            positives: 0,
            negatives: 0,
            true_positives: 0,
            false_positives: 0,
            detection_rate: 0.0,
            false_positive_rate: 0.0,
        };
        for item in items {
            let ctx = ChunkContext { index: 0, prior: "", sources: &item.sources };
            let hit = validators.iter().filter(|v| v.category() == cat).any(|v| !v.check(&item.text, &ctx).is_pass());
            if item.labels.contains(&cat) {
                m.positives += 1;
                m.true_positives += hit as usize;
            } else {
                m.negatives += 1;
                m.false_positives += hit as usize;
            }
        }
        let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        m.detection_rate = rate(m.true_positives, m.positives);
        m.false_positive_rate = rate(m.false_positives, m.negatives);
        out.push(m);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ModeTotals {
    pub elapsed_secs: f64,
    pub baseline_secs: f64,
    pub overhead_secs: f64,
    pub overhead_fraction: f64,
    pub blocked_streams: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadReport {
    pub items: usize,
    pub parallel: ModeTotals,
    pub serial: ModeTotals,
    /// Both modes released the same prefixes with the same terminal status on every item.
    pub equivalent: bool,
}

/// Gate every item as a chunk stream in both modes and total the overheads.
pub fn measure_overhead(
    items: &[CorpusItem],
    validators: &[&dyn Validator],
    chunk_delay: Duration,
) -> Result<OverheadReport, ValidationError> {
    if items.is_empty() {
        return Err(ValidationError::EmptyCorpus);
    }
    let mut parallel = ModeTotals::default();
    let mut serial = ModeTotals::default();
    let mut equivalent = true;
    for item in items {
        let stream = ChunkStream::new(item.chunks(), chunk_delay).with_sources(item.sources.clone());
        let p = gate_stream(&stream, validators, Mode::Parallel);
        let s = gate_stream(&stream, validators, Mode::Serial);
        equivalent &= p.released == s.released && p.status == s.status;
        for (t, o) in [(&mut parallel, &p), (&mut serial, &s)] {
            t.elapsed_secs += o.elapsed_secs;
            t.baseline_secs += o.baseline_secs;
            t.overhead_secs += o.overhead_secs;
            t.blocked_streams += matches!(o.status, super::Terminal::Blocked { .. }) as usize;
        }
    }
    for t in [&mut parallel, &mut serial] {
        t.overhead_fraction = if t.elapsed_secs > 0.0 { t.overhead_secs / t.elapsed_secs } else { 0.0 };
    }
    Ok(OverheadReport { items: items.len(), parallel, serial, equivalent })
}
