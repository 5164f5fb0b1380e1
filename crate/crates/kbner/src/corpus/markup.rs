//! Anchor markup: `<e:TITLE>SURFACE</e>` embedded in paragraph text.
//!
//! Anchors are never nested. Only the two marker sequences `<e:` and `</e>`
//! are special; any other `<` is ordinary text. A stray marker that does not
//! form a complete anchor is rejected rather than escaped, so parse and
//! render are exact inverses on valid inputs. All offsets are codepoints.

use super::{Anchor, CorpusError};

fn malformed(reason: impl Into<String>) -> CorpusError {
    CorpusError::MalformedMarkup {
        reason: reason.into(),
        line: None,
    }
}

/// Strips anchor markup, returning the plain text and the anchors with
/// codepoint offsets into it.
pub fn parse_anchor_markup(marked: &str) -> Result<(String, Vec<Anchor>), CorpusError> {
    let chars: Vec<char> = marked.chars().collect();
    let n = chars.len();
    let starts_with = |pos: usize, pat: &str| {
        pat.chars()
            .enumerate()
            .all(|(j, c)| pos + j < n && chars[pos + j] == c)
    };

    let mut plain = String::new();
    let mut plain_len = 0usize;
    let mut anchors = Vec::new();
    let mut i = 0usize;
    while i < n {
        if starts_with(i, "</e>") {
            return Err(malformed("closing marker without an open anchor"));
        }
        if !starts_with(i, "<e:") {
            plain.push(chars[i]);
            plain_len += 1;
            i += 1;
            continue;
        }

        i += 3;
        let title_start = i;
        while i < n && chars[i] != '>' {
            i += 1;
        }
        if i == n {
            return Err(malformed("anchor title is never closed by '>'"));
        }
        let target_title: String = chars[title_start..i].iter().collect();
        if target_title.is_empty() {
            return Err(malformed("anchor with empty title"));
        }
        i += 1;

        let anchor_start = plain_len;
        let mut surface = String::new();
        loop {
            if i >= n {
                return Err(malformed("anchor surface is never closed by '</e>'"));
            }
            if starts_with(i, "<e:") {
                return Err(malformed("nested anchor"));
            }
            if starts_with(i, "</e>") {
                i += 4;
                break;
            }
            surface.push(chars[i]);
            plain_len += 1;
            i += 1;
        }
        if surface.is_empty() {
            return Err(malformed("anchor with empty surface"));
        }
        plain.push_str(&surface);
        anchors.push(Anchor {
            surface,
            target_title,
            start: anchor_start,
            end: plain_len,
        });
    }
    Ok((plain, anchors))
}

/// Re-inserts anchor markup into plain text, the inverse of
/// [`parse_anchor_markup`].
pub fn render_anchor_markup(plain: &str, anchors: &[Anchor]) -> Result<String, CorpusError> {
    if plain.contains("<e:") || plain.contains("</e>") {
        return Err(CorpusError::InconsistentAnchor(
            "plain text contains a reserved marker".into(),
        ));
    }
    let chars: Vec<char> = plain.chars().collect();

    let mut ordered: Vec<&Anchor> = anchors.iter().collect();
    ordered.sort_by_key(|a| (a.start, a.end));
    let mut prev_end = 0usize;
    for a in &ordered {
        if a.start >= a.end || a.end > chars.len() {
            return Err(CorpusError::InconsistentAnchor(format!(
                "span {}..{} does not fit text of length {}",
                a.start,
                a.end,
                chars.len()
            )));
        }
        if a.start < prev_end {
            return Err(CorpusError::InconsistentAnchor(format!(
                "anchor at {}..{} overlaps the previous one",
                a.start, a.end
            )));
        }
        let covered: String = chars[a.start..a.end].iter().collect();
        if covered != a.surface {
            return Err(CorpusError::InconsistentAnchor(format!(
                "surface {:?} does not match covered text {:?}",
                a.surface, covered
            )));
        }
        if a.target_title.is_empty() || a.target_title.contains('>') {
            return Err(CorpusError::InconsistentAnchor(format!(
                "title {:?} cannot round-trip through markup",
                a.target_title
            )));
        }
        prev_end = a.end;
    }

    let mut out = String::new();
    let mut pos = 0usize;
    for a in &ordered {
        out.extend(&chars[pos..a.start]);
        out.push_str("<e:");
        out.push_str(&a.target_title);
        out.push('>');
        out.push_str(&a.surface);
        out.push_str("</e>");
        pos = a.end;
    }
    out.extend(&chars[pos..]);
    Ok(out)
}
