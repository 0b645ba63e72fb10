//! Lenient parsing helpers for `[Key]: value` agent output.

/// Splits text into `(key, raw value)` pairs on `[Key]:` markers.
///
/// A value runs until the next marker or the end of input; surrounding
/// whitespace and a trailing `;` are stripped. Text before the first marker is
/// ignored.
pub fn split_bracketed(text: &str) -> Vec<(String, String)> {
    let markers = find_markers(text);
    let mut out = Vec::with_capacity(markers.len());
    for (i, m) in markers.iter().enumerate() {
        let end = markers.get(i + 1).map_or(text.len(), |next| next.start);
        let value = text[m.value_start..end].trim();
        let value = value.strip_suffix(';').unwrap_or(value).trim();
        out.push((m.key.clone(), value.to_string()));
    }
    out
}

struct Marker {
    start: usize,
    value_start: usize,
    key: String,
}

fn find_markers(text: &str) -> Vec<Marker> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'[' {
            i += 1;
            continue;
        }
        let Some(close) = text[i + 1..].find(']').map(|c| i + 1 + c) else {
            break;
        };
        let key = &text[i + 1..close];
        let after = text[close + 1..].trim_start_matches([' ', '\t']);
        let colon_at = close + 1 + (text[close + 1..].len() - after.len());
        if after.starts_with(':') && !key.contains('[') && !key.trim().is_empty() && !key.contains('\n') {
            out.push(Marker {
                start: i,
                value_start: colon_at + 1,
                key: key.trim().to_string(),
            });
            i = colon_at + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Lower-cases and collapses internal whitespace so keys compare loosely.
pub fn normalize_key(key: &str) -> String {
    key.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_ascii_lowercase()
}

/// Truncates to at most `max` characters on a char boundary.
pub fn truncate_chars(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((idx, _)) => s[..idx].to_string(),
        None => s.to_string(),
    }
}

/// Clip ids mentioned in `line`.
///
/// `Clip 12`, `Clip-12`, `Clip #12` and `clip12` are recognised; when
/// `allow_bare` is set, standalone integers count too.
pub fn clip_ids(line: &str, allow_bare: bool) -> Vec<u32> {
    let lower = line.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if lower[i..].starts_with("clip") && (i == 0 || !bytes[i - 1].is_ascii_alphanumeric()) {
            let mut j = i + 4;
            while j < bytes.len() && matches!(bytes[j], b' ' | b'-' | b'#' | b'_' | b':') {
                j += 1;
            }
            let digits_start = j;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j > digits_start && (j == bytes.len() || !bytes[j].is_ascii_alphanumeric()) {
                if let Ok(id) = lower[digits_start..j].parse() {
                    out.push(id);
                }
                i = j;
                continue;
            }
            i += 4;
            continue;
        }
        if allow_bare && bytes[i].is_ascii_digit() && (i == 0 || !is_word_or_dot(bytes[i - 1])) {
            let mut j = i;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            let followed_ok = j == bytes.len()
                || !(bytes[j].is_ascii_alphanumeric()
                    || (bytes[j] == b'.' && j + 1 < bytes.len() && bytes[j + 1].is_ascii_digit()));
            if followed_ok {
                if let Ok(id) = lower[i..j].parse() {
                    out.push(id);
                }
            }
            i = j;
            continue;
        }
        i += 1;
    }
    out
}

fn is_word_or_dot(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'.' || b == b'_'
}

/// Keeps the first occurrence of every element.
pub fn dedup_preserving<T: Copy + Eq + std::hash::Hash>(items: impl IntoIterator<Item = T>) -> Vec<T> {
    let mut seen = std::collections::HashSet::new();
    items.into_iter().filter(|x| seen.insert(*x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_pairs() {
        let pairs = split_bracketed("[A]: 0.8; [B] : hello world; [C]:x");
        assert_eq!(
            pairs,
            vec![
                ("A".into(), "0.8".into()),
                ("B".into(), "hello world".into()),
                ("C".into(), "x".into())
            ]
        );
    }

    #[test]
    fn ignores_brackets_without_colon() {
        let pairs = split_bracketed("[Raw Caption]: a man [smiling] waves\n[Who]: a man");
        assert_eq!(pairs[0].1, "a man [smiling] waves");
        assert_eq!(pairs[1], ("Who".into(), "a man".into()));
    }

    #[test]
    fn ids() {
        assert_eq!(clip_ids("Beginning: Clip 2 then clip-7 and Clip #9", false), vec![2, 7, 9]);
        assert_eq!(clip_ids("3, 1, 8", true), vec![3, 1, 8]);
        assert_eq!(clip_ids("score 0.90 at 3s", true), Vec::<u32>::new());
        assert_eq!(clip_ids("clipboard 4", false), Vec::<u32>::new());
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_chars("héllo", 2), "hé");
        assert_eq!(truncate_chars("hi", 5), "hi");
    }
}
