//! De-identification evaluation against gold annotations.
//!
//! Predictions and gold labels are position-anchored spans. Matching is
//! greedy one-to-one by descending string similarity (normalized Levenshtein
//! over the surfaces), with configurable requirements on type equality and
//! positional overlap. Besides precision/recall/F1, an all-or-nothing recall
//! counts a whole document (or a document/type pair) only when every gold
//! span in it is matched — the privacy-relevant view, since one leaked
//! identifier compromises the record.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("could not parse annotations: {0}")]
    Parse(String),
    #[error("document id `{0}` appears in predictions but not in gold")]
    UnknownDocument(String),
}

/// One annotated span: character offsets into the document text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanLabel {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
    pub surface: String,
}

impl SpanLabel {
    pub fn overlaps(&self, other: &SpanLabel) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// A document's gold or predicted annotation set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DocumentLabels {
    pub doc_id: String,
    pub spans: Vec<SpanLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchCriteria {
    /// Matched spans must share an entity type (after mapping).
    pub require_type: bool,
    /// Matched spans must overlap by at least one character.
    pub require_position: bool,
    /// Minimum surface similarity for a candidate pair.
    pub similarity_threshold: f64,
}

impl Default for MatchCriteria {
    fn default() -> Self {
        MatchCriteria {
            require_type: true,
            require_position: true,
            similarity_threshold: 0.6,
        }
    }
}

/// Levenshtein distance over characters.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            curr[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Normalized similarity: `1 - d / max(|a|, |b|)`; two empty strings are
/// identical (1.0).
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    let max_len = a.chars().count().max(b.chars().count());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / max_len as f64
}

/// An accepted (gold index, prediction index) pair with its similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub gold: usize,
    pub pred: usize,
    pub similarity: f64,
}

/// Greedy one-to-one matching: among all admissible (gold, prediction)
/// pairs, repeatedly accept the highest-similarity pair, breaking ties
/// toward the leftmost (then first-listed) gold span.
pub fn match_entities(
    gold: &[SpanLabel],
    pred: &[SpanLabel],
    criteria: &MatchCriteria,
    type_map: &TypeMap,
) -> Vec<MatchedPair> {
    let mut candidates: Vec<MatchedPair> = Vec::new();
    for (gi, g) in gold.iter().enumerate() {
        for (pi, p) in pred.iter().enumerate() {
            if criteria.require_type && type_map.canonical(&g.entity_type) != type_map.canonical(&p.entity_type) {
                continue;
            }
            if criteria.require_position && !g.overlaps(p) {
                continue;
            }
            let similarity = levenshtein_similarity(&g.surface, &p.surface);
            if similarity >= criteria.similarity_threshold {
                candidates.push(MatchedPair {
                    gold: gi,
                    pred: pi,
                    similarity,
                });
            }
        }
    }
    candidates.sort_by(|x, y| {
        y.similarity
            .total_cmp(&x.similarity)
            .then(gold[x.gold].start.cmp(&gold[y.gold].start))
            .then(x.gold.cmp(&y.gold))
            .then(x.pred.cmp(&y.pred))
    });
    let mut used_gold = vec![false; gold.len()];
    let mut used_pred = vec![false; pred.len()];
    let mut accepted = Vec::new();
    for pair in candidates {
        if used_gold[pair.gold] || used_pred[pair.pred] {
            continue;
        }
        used_gold[pair.gold] = true;
        used_pred[pair.pred] = true;
        accepted.push(pair);
    }
    accepted.sort_by_key(|p| p.gold);
    accepted
}

/// Maps dataset-specific type names onto the pipeline's vocabulary so
/// corpora annotated with different tag sets can be scored.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TypeMap {
    /// source type -> canonical type; unlisted types map to themselves.
    #[serde(default)]
    pub map: BTreeMap<String, String>,
}

impl TypeMap {
    pub fn canonical<'a>(&'a self, entity_type: &'a str) -> &'a str {
        self.map.get(entity_type).map(String::as_str).unwrap_or(entity_type)
    }

    pub fn from_json(raw: &str) -> Result<Self, EvalError> {
        serde_json::from_str(raw).map_err(|e| EvalError::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when a denominator was zero and the metric defaulted to 0.
    pub degenerate: bool,
}

/// Precision/recall/F1 from match counts. Zero denominators yield 0.0 with
/// the `degenerate` flag set rather than NaN.
pub fn precision_recall_f1(matched: usize, gold_total: usize, pred_total: usize) -> Prf {
    let degenerate = gold_total == 0 || pred_total == 0;
    let precision = if pred_total == 0 {
        0.0
    } else {
        matched as f64 / pred_total as f64
    };
    let recall = if gold_total == 0 {
        0.0
    } else {
        matched as f64 / gold_total as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
        degenerate,
    }
}

/// Granularity of the all-or-nothing recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllOrNothingGranularity {
    /// A document counts only if every gold span in it is matched.
    PerDocument,
    /// A (document, type) pair counts only if every gold span of that type
    /// in that document is matched.
    PerDocumentAndType,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub criteria: MatchCriteria,
    pub micro: Prf,
    pub per_type: BTreeMap<String, Prf>,
    pub per_document: BTreeMap<String, Prf>,
    pub all_or_nothing_per_document: f64,
    pub all_or_nothing_per_document_and_type: f64,
    pub documents: usize,
    pub gold_spans: usize,
    pub predicted_spans: usize,
    pub matched_spans: usize,
}

/// Score a corpus of per-document predictions against gold annotations.
/// Every document present in `gold` is scored; a document with no
/// predictions contributes misses.
pub fn evaluate(
    gold: &[DocumentLabels],
    pred: &[DocumentLabels],
    criteria: &MatchCriteria,
    type_map: &TypeMap,
) -> Result<EvalReport, EvalError> {
    let gold_by_id: BTreeMap<&str, &DocumentLabels> =
        gold.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    for p in pred {
        if !gold_by_id.contains_key(p.doc_id.as_str()) {
            return Err(EvalError::UnknownDocument(p.doc_id.clone()));
        }
    }
    let pred_by_id: BTreeMap<&str, &DocumentLabels> =
        pred.iter().map(|d| (d.doc_id.as_str(), d)).collect();

    let empty = DocumentLabels::default();
    let mut matched_total = 0usize;
    let mut gold_total = 0usize;
    let mut pred_total = 0usize;
    let mut per_type_counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut per_document = BTreeMap::new();
    let mut complete_docs = 0usize;
    let mut doc_type_pairs = 0usize;
    let mut complete_doc_type_pairs = 0usize;

    for doc in gold {
        let predictions = pred_by_id.get(doc.doc_id.as_str()).copied().unwrap_or(&empty);
        let matches = match_entities(&doc.spans, &predictions.spans, criteria, type_map);

        matched_total += matches.len();
        gold_total += doc.spans.len();
        pred_total += predictions.spans.len();
        per_document.insert(
            doc.doc_id.clone(),
            precision_recall_f1(matches.len(), doc.spans.len(), predictions.spans.len()),
        );
        if matches.len() == doc.spans.len() {
            complete_docs += 1;
        }

        let matched_gold: Vec<bool> = {
            let mut v = vec![false; doc.spans.len()];
            for m in &matches {
                v[m.gold] = true;
            }
            v
        };
        let mut gold_types: BTreeMap<String, (usize, usize)> = BTreeMap::new(); // (total, matched)
        for (gi, g) in doc.spans.iter().enumerate() {
            let t = type_map.canonical(&g.entity_type).to_string();
            let entry = gold_types.entry(t.clone()).or_default();
            entry.0 += 1;
            if matched_gold[gi] {
                entry.1 += 1;
            }
            let counts = per_type_counts.entry(t).or_default();
            counts.1 += 1; // gold
            if matched_gold[gi] {
                counts.0 += 1; // matched
            }
        }
        for p in &predictions.spans {
            per_type_counts
                .entry(type_map.canonical(&p.entity_type).to_string())
                .or_default()
                .2 += 1; // predicted
        }
        for (total, matched) in gold_types.values() {
            doc_type_pairs += 1;
            if matched == total {
                complete_doc_type_pairs += 1;
            }
        }
    }

    let per_type = per_type_counts
        .into_iter()
        .map(|(t, (m, g, p))| (t, precision_recall_f1(m, g, p)))
        .collect();

    Ok(EvalReport {
        criteria: criteria.clone(),
        micro: precision_recall_f1(matched_total, gold_total, pred_total),
        per_type,
        per_document,
        all_or_nothing_per_document: if gold.is_empty() {
            1.0
        } else {
            complete_docs as f64 / gold.len() as f64
        },
        all_or_nothing_per_document_and_type: if doc_type_pairs == 0 {
            1.0
        } else {
            complete_doc_type_pairs as f64 / doc_type_pairs as f64
        },
        documents: gold.len(),
        gold_spans: gold_total,
        predicted_spans: pred_total,
        matched_spans: matched_total,
    })
}

/// Parse one i2b2-style XML document: gold PHI spans live under `<TAGS>` as
/// elements whose `start`/`end` attributes are character offsets and whose
/// `TYPE` attribute names the category (the element name is the coarse
/// category and is used as a fallback).
pub fn parse_i2b2_xml(doc_id: &str, xml: &str) -> Result<DocumentLabels, EvalError> {
    use quick_xml::events::Event;
    let mut reader = quick_xml::Reader::from_str(xml);
    let mut spans = Vec::new();
    let mut in_tags = false;
    let mut buf = Vec::new();
    loop {
        match reader
            .read_event_into(&mut buf)
            .map_err(|e| EvalError::Parse(format!("{doc_id}: {e}")))?
        {
            Event::Start(e) | Event::Empty(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).to_string();
                if name == "TAGS" {
                    in_tags = true;
                    continue;
                }
                if !in_tags {
                    continue;
                }
                let mut start = None;
                let mut end = None;
                let mut entity_type = None;
                let mut surface = String::new();
                for attr in e.attributes() {
                    let attr = attr.map_err(|e| EvalError::Parse(format!("{doc_id}: {e}")))?;
                    let key = String::from_utf8_lossy(attr.key.as_ref()).to_string();
                    let value = attr
                        .unescape_value()
                        .map_err(|e| EvalError::Parse(format!("{doc_id}: {e}")))?
                        .to_string();
                    match key.as_str() {
                        "start" => {
                            start = Some(value.parse::<usize>().map_err(|e| {
                                EvalError::Parse(format!("{doc_id}: bad start offset: {e}"))
                            })?)
                        }
                        "end" => {
                            end = Some(value.parse::<usize>().map_err(|e| {
                                EvalError::Parse(format!("{doc_id}: bad end offset: {e}"))
                            })?)
                        }
                        "TYPE" => entity_type = Some(value),
                        "text" => surface = value,
                        _ => {}
                    }
                }
                if let (Some(start), Some(end)) = (start, end) {
                    if end < start {
                        return Err(EvalError::Parse(format!(
                            "{doc_id}: span end precedes start"
                        )));
                    }
                    spans.push(SpanLabel {
                        start,
                        end,
                        entity_type: entity_type.unwrap_or(name),
                        surface,
                    });
                }
            }
            Event::End(e) => {
                if e.name().as_ref() == b"TAGS" {
                    in_tags = false;
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    Ok(DocumentLabels {
        doc_id: doc_id.to_string(),
        spans,
    })
}

/// Parse a JSON-lines annotation file; each line is a [`DocumentLabels`].
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<DocumentLabels>, EvalError> {
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Parse(format!("line {}: {e}", lineno + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(
            serde_json::from_str(&line)
                .map_err(|e| EvalError::Parse(format!("line {}: {e}", lineno + 1)))?,
        );
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn span(start: usize, end: usize, entity_type: &str, surface: &str) -> SpanLabel {
        SpanLabel {
            start,
            end,
            entity_type: entity_type.into(),
            surface: surface.into(),
        }
    }

    /// Textbook full-matrix dynamic program, kept as the oracle for the
    /// row-rolling implementation.
    fn levenshtein_oracle(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for (j, cell) in d[0].iter_mut().enumerate() {
            *cell = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = (d[i - 1][j] + 1)
                    .min(d[i][j - 1] + 1)
                    .min(d[i - 1][j - 1] + cost);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn levenshtein_known_values() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("flaw", "lawn"), 2);
    }

    #[test]
    fn similarity_of_title_variant_names() {
        let s = levenshtein_similarity("Mrs. Mary Smith", "Mary Smith");
        assert!((s - 2.0 / 3.0).abs() < 1e-9, "got {s}");
        assert_eq!(levenshtein_similarity("", ""), 1.0);
        assert_eq!(levenshtein_similarity("a", ""), 0.0);
    }

    proptest! {
        #[test]
        fn levenshtein_matches_full_matrix_oracle(a in ".{0,12}", b in ".{0,12}") {
            prop_assert_eq!(levenshtein(&a, &b), levenshtein_oracle(&a, &b));
        }
    }

    #[test]
    fn matching_is_one_to_one_and_greedy_by_similarity() {
        let gold = vec![
            span(0, 10, "PERSON", "Mary Smith"),
            span(20, 35, "PERSON", "Mrs. Mary Smith"),
        ];
        let pred = vec![span(20, 35, "PERSON", "Mrs. Mary Smith")];
        // Positional overlap required: only the second gold span can match.
        let matches = match_entities(&gold, &pred, &MatchCriteria::default(), &TypeMap::default());
        assert_eq!(matches.len(), 1);
        assert_eq!(matches[0].gold, 1);

        // Without position, the exact-surface pair wins over the 0.667 pair.
        let loose = MatchCriteria {
            require_position: false,
            ..MatchCriteria::default()
        };
        let matches = match_entities(&gold, &pred, &loose, &TypeMap::default());
        assert_eq!(matches.len(), 1);
        assert_eq!(matches[0].gold, 1);
        assert!((matches[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn similarity_ties_prefer_leftmost_gold() {
        let gold = vec![span(10, 12, "ID", "42"), span(0, 2, "ID", "42")];
        let pred = vec![span(0, 2, "ID", "42"), span(10, 12, "ID", "42")];
        let loose = MatchCriteria {
            require_position: false,
            ..MatchCriteria::default()
        };
        let matches = match_entities(&gold, &pred, &loose, &TypeMap::default());
        assert_eq!(matches.len(), 2);
        // gold[1] starts at 0, so it is matched first and takes pred[0].
        let by_gold: BTreeMap<usize, usize> = matches.iter().map(|m| (m.gold, m.pred)).collect();
        assert_eq!(by_gold[&1], 0);
        assert_eq!(by_gold[&0], 1);
    }

    #[test]
    fn type_requirement_and_mapping() {
        let gold = vec![span(0, 4, "NAME", "John")];
        let pred = vec![span(0, 4, "PERSON", "John")];
        let criteria = MatchCriteria::default();
        assert!(match_entities(&gold, &pred, &criteria, &TypeMap::default()).is_empty());
        let type_map: TypeMap =
            serde_json::from_value(serde_json::json!({"map": {"NAME": "PERSON"}})).unwrap();
        assert_eq!(match_entities(&gold, &pred, &criteria, &type_map).len(), 1);
    }

    #[test]
    fn prf_handles_zero_denominators() {
        let p = precision_recall_f1(0, 0, 0);
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        assert!(p.degenerate);
        let p = precision_recall_f1(2, 4, 2);
        assert!(!p.degenerate);
        assert_eq!(p.precision, 1.0);
        assert_eq!(p.recall, 0.5);
        assert!((p.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    fn doc(id: &str, spans: Vec<SpanLabel>) -> DocumentLabels {
        DocumentLabels {
            doc_id: id.into(),
            spans,
        }
    }

    #[test]
    fn corpus_evaluation_counts_micro_and_all_or_nothing() {
        let gold = vec![
            doc("d1", vec![span(0, 4, "PERSON", "John"), span(10, 12, "AGE", "45")]),
            doc("d2", vec![span(0, 4, "PERSON", "Mary")]),
        ];
        let pred = vec![
            doc("d1", vec![span(0, 4, "PERSON", "John")]), // misses the AGE
            doc("d2", vec![span(0, 4, "PERSON", "Mary"), span(20, 24, "DATE", "2020")]),
        ];
        let report =
            evaluate(&gold, &pred, &MatchCriteria::default(), &TypeMap::default()).unwrap();
        assert_eq!(report.matched_spans, 2);
        assert_eq!(report.gold_spans, 3);
        assert_eq!(report.predicted_spans, 3);
        assert!((report.micro.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.micro.recall - 2.0 / 3.0).abs() < 1e-12);
        // d1 misses a gold span, d2 is complete.
        assert_eq!(report.all_or_nothing_per_document, 0.5);
        // pairs: (d1,PERSON) ok, (d1,AGE) miss, (d2,PERSON) ok -> 2/3.
        assert!((report.all_or_nothing_per_document_and_type - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.per_type["PERSON"].recall, 1.0);
        assert_eq!(report.per_type["AGE"].recall, 0.0);
    }

    #[test]
    fn predictions_for_unknown_documents_are_an_error() {
        let gold = vec![doc("d1", vec![])];
        let pred = vec![doc("dX", vec![])];
        assert!(matches!(
            evaluate(&gold, &pred, &MatchCriteria::default(), &TypeMap::default()),
            Err(EvalError::UnknownDocument(_))
        ));
    }

    #[test]
    fn missing_prediction_documents_count_as_misses() {
        let gold = vec![doc("d1", vec![span(0, 4, "PERSON", "John")])];
        let report = evaluate(&gold, &[], &MatchCriteria::default(), &TypeMap::default()).unwrap();
        assert_eq!(report.micro.recall, 0.0);
        assert_eq!(report.all_or_nothing_per_document, 0.0);
    }

    #[test]
    fn i2b2_xml_tags_parse_into_spans() {
        let xml = r#"<?xml version="1.0" encoding="UTF-8"?>
<deIdi2b2>
  <TEXT><![CDATA[Record of John Smith, age 45.]]></TEXT>
  <TAGS>
    <NAME id="P0" start="10" end="20" text="John Smith" TYPE="PATIENT" comment=""/>
    <AGE id="P1" start="26" end="28" text="45" TYPE="AGE"/>
  </TAGS>
</deIdi2b2>"#;
        let labels = parse_i2b2_xml("doc1", xml).unwrap();
        assert_eq!(labels.spans.len(), 2);
        assert_eq!(labels.spans[0], span(10, 20, "PATIENT", "John Smith"));
        assert_eq!(labels.spans[1], span(26, 28, "AGE", "45"));
    }

    #[test]
    fn i2b2_element_name_is_the_type_fallback() {
        let xml = r#"<root><TAGS><DATE start="5" end="9" text="2020"/></TAGS></root>"#;
        let labels = parse_i2b2_xml("doc1", xml).unwrap();
        assert_eq!(labels.spans[0].entity_type, "DATE");
    }

    #[test]
    fn jsonl_round_trip() {
        let gold = vec![doc("d1", vec![span(0, 4, "PERSON", "John")])];
        let mut buf = Vec::new();
        for d in &gold {
            buf.extend(serde_json::to_vec(d).unwrap());
            buf.push(b'\n');
        }
        let parsed = parse_jsonl(&buf[..]).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].spans, gold[0].spans);
    }
}
