//! CoNLL-style labeled data: one token per line, sentences separated by
//! blank lines, BIO tag in the last whitespace-separated column.

use std::io::BufRead;

use super::{check_bio_tag, CorpusError, LabeledSentence};

/// Parses CoNLL-style data. Lines starting with `#` are comments. A block
/// that contains only comments raises [`CorpusError::EmptySentence`]; a token
/// line without a tag column raises [`CorpusError::BadTag`].
pub fn parse_conll<R: BufRead>(reader: R) -> Result<Vec<LabeledSentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    let mut block_start: Option<usize> = None;

    let mut flush = |tokens: &mut Vec<String>,
                     tags: &mut Vec<String>,
                     block_start: &mut Option<usize>|
     -> Result<(), CorpusError> {
        if let Some(start) = block_start.take() {
            if tokens.is_empty() {
                return Err(CorpusError::EmptySentence(start));
            }
            sentences.push(LabeledSentence {
                tokens: std::mem::take(tokens),
                tags: std::mem::take(tags),
            });
        }
        Ok(())
    };

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            flush(&mut tokens, &mut tags, &mut block_start)?;
            continue;
        }
        block_start.get_or_insert(line_no);
        if trimmed.trim_start().starts_with('#') {
            continue;
        }
        let mut cols = trimmed.split_whitespace();
        let token = cols.next().expect("non-blank line has a first column");
        let tag = match cols.last() {
            Some(tag) => tag,
            None => {
                return Err(CorpusError::BadTag {
                    tag: format!("token {token:?} has no tag column"),
                    line: Some(line_no),
                })
            }
        };
        check_bio_tag(tag, Some(line_no))?;
        tokens.push(token.to_string());
        tags.push(tag.to_string());
    }
    flush(&mut tokens, &mut tags, &mut block_start)?;
    Ok(sentences)
}
