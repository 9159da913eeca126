/// Characters removed from the end of an answer before comparison.
const TRAILING_PUNCT: &[char] = &[
    '.', ',', ';', ':', '!', '?', '。', '，', '；', '：', '！', '？', '、',
];

/// Canonical form used by every string metric: lowercase, whitespace runs
/// collapsed to one space, outer whitespace and trailing sentence
/// punctuation removed.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for c in word.chars() {
            out.extend(c.to_lowercase());
        }
    }
    loop {
        let trimmed = out.trim_end_matches(TRAILING_PUNCT).trim_end();
        if trimmed.len() == out.len() {
            break;
        }
        out.truncate(trimmed.len());
    }
    out
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // CJK extension A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0x20000..=0x2FFFF)
}

/// Splits normalized text into word tokens. Punctuation and whitespace are
/// separators; each CJK character is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let norm = normalize(text);
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in norm.chars() {
        if is_cjk(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}
