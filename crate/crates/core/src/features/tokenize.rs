//! Tweet-aware tokenizer.
//!
//! Whitespace chunks are kept whole when they are hashtags, mentions,
//! emoticons or URLs; otherwise leading and trailing punctuation is split off
//! one character per token.

pub const URL_TOKEN: &str = "<url>";

const EDGE_PUNCT: &[char] = &[
    '!', '?', '.', ',', ';', ':', '"', '\'', '(', ')', '[', ']', '{', '}', '…', '“', '”', '‘', '’',
];

/// Lowercased tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_cased(text)
        .into_iter()
        .map(|t| if t == URL_TOKEN { t } else { t.to_lowercase() })
        .collect()
}

/// Same segmentation as [`tokenize`] but keeps the original case; the
/// valence scorer needs it to detect shouting.
pub fn tokenize_cased(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if is_url(chunk) {
            out.push(URL_TOKEN.to_string());
            continue;
        }
        if is_emoticon(chunk) {
            out.push(chunk.to_string());
            continue;
        }
        let mut leading = Vec::new();
        let mut rest = chunk;
        while let Some(c) = rest.chars().next() {
            // a leading '#' or '@' belongs to the token
            if EDGE_PUNCT.contains(&c) && !is_emoticon(rest) {
                leading.push(c.to_string());
                rest = &rest[c.len_utf8()..];
            } else {
                break;
            }
        }
        let mut trailing = Vec::new();
        while let Some(c) = rest.chars().next_back() {
            if EDGE_PUNCT.contains(&c) && !is_emoticon(rest) {
                trailing.push(c.to_string());
                rest = &rest[..rest.len() - c.len_utf8()];
            } else {
                break;
            }
        }
        out.extend(leading);
        if !rest.is_empty() {
            if is_url(rest) {
                out.push(URL_TOKEN.to_string());
            } else {
                out.push(rest.to_string());
            }
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

fn is_url(s: &str) -> bool {
    let lower = s.to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

/// Western-style emoticons such as `:)`, `;-D`, `:'(`, `=P`, `<3`.
pub fn is_emoticon(s: &str) -> bool {
    if s == "<3" || s == "</3" {
        return true;
    }
    let chars: Vec<char> = s.chars().collect();
    if chars.len() < 2 || chars.len() > 5 {
        return false;
    }
    let eyes = [':', ';', '=', '8', 'x', 'X'];
    let noses = ['-', '\'', 'o', '^', '*'];
    let mouths = [
        ')', '(', ']', '[', 'D', 'd', 'P', 'p', '/', '\\', '|', 'O', 'o', '3', '*', '@', '$', '}',
        '{',
    ];
    let mut i = 0;
    if !eyes.contains(&chars[i]) {
        return false;
    }
    i += 1;
    if i < chars.len() - 1 && noses.contains(&chars[i]) {
        i += 1;
    }
    // "x" or "8" followed by letters is a word, not a face
    if (chars[0] == 'x' || chars[0] == 'X' || chars[0] == '8')
        && !chars[i..].iter().all(|c| ")(D]P[".contains(*c))
    {
        return false;
    }
    i < chars.len() && chars[i..].iter().all(|c| mouths.contains(c))
}
