//! Conversion between BIO tag sequences and entity spans.

use super::{check_bio_tag, CorpusError, EntitySpan};

/// Decodes a BIO tag sequence into spans. An orphan `I-X` (one that does not
/// continue a span of label `X`) is repaired by treating it as `B-X`.
pub fn spans_from_bio(tags: &[String]) -> Result<Vec<EntitySpan>, CorpusError> {
    for tag in tags {
        check_bio_tag(tag, None)?;
    }
    let mut spans: Vec<EntitySpan> = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, tag) in tags.iter().enumerate() {
        if let Some(label) = tag.strip_prefix("I-") {
            if let Some(span) = open.as_mut() {
                if span.label == label && span.end == i {
                    span.end = i + 1;
                    continue;
                }
            }
        }
        if let Some(span) = open.take() {
            spans.push(span);
        }
        match tag.as_str() {
            "O" => {}
            _ => {
                // B-X, or an orphan I-X repaired to a span start.
                let label = &tag[2..];
                open = Some(EntitySpan::new(i, i + 1, label));
            }
        }
    }
    if let Some(span) = open {
        spans.push(span);
    }
    Ok(spans)
}

/// Encodes spans as a BIO tag sequence of length `n`. Spans must be disjoint
/// and fit within `0..n`.
pub fn bio_from_spans(spans: &[EntitySpan], n: usize) -> Result<Vec<String>, CorpusError> {
    let mut ordered: Vec<&EntitySpan> = spans.iter().collect();
    ordered.sort_by(|a, b| (a.start, a.end, &a.label).cmp(&(b.start, b.end, &b.label)));

    let mut tags = vec!["O".to_string(); n];
    let mut prev_end = 0usize;
    for span in ordered {
        if span.start >= span.end || span.end > n {
            return Err(CorpusError::SpanOutOfRange(format!(
                "{}..{} ({}) in a sentence of {} tokens",
                span.start, span.end, span.label, n
            )));
        }
        if span.start < prev_end {
            return Err(CorpusError::OverlapError(format!(
                "{}..{} ({}) overlaps an earlier span",
                span.start, span.end, span.label
            )));
        }
        tags[span.start] = format!("B-{}", span.label);
        for tag in tags.iter_mut().take(span.end).skip(span.start + 1) {
            *tag = format!("I-{}", span.label);
        }
        prev_end = span.end;
    }
    Ok(tags)
}
