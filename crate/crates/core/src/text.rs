//! Small text helpers shared by the generator and the post-processor.

/// A regex compiled once per call site.
macro_rules! static_regex {
    ($re:expr) => {{
        static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
        RE.get_or_init(|| regex::Regex::new($re).expect("static regex"))
    }};
}
pub(crate) use static_regex;

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Byte offset of the first occurrence of `needle` in `haystack` that is not
/// part of a longer word. Both sides are compared as given, so lowercase them
/// first for a case-insensitive search.
pub fn find_word(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    haystack.match_indices(needle).map(|(i, _)| i).find(|&i| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + needle.len()..].chars().next();
        let edge_ok = |c: Option<char>, inner: Option<char>| match (c, inner) {
            (Some(c), Some(n)) => !(is_word_char(c) && is_word_char(n)),
            _ => true,
        };
        edge_ok(before, needle.chars().next()) && edge_ok(after, needle.chars().next_back())
    })
}

/// `46` → `"46th"`, `1` → `"1st"`, `12` → `"12th"`.
pub fn ordinal(n: i64) -> String {
    let suffix = match (n.rem_euclid(100), n.rem_euclid(10)) {
        (11..=13, _) => "th",
        (_, 1) => "st",
        (_, 2) => "nd",
        (_, 3) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

/// Formats a JSON number the way it should read in prose: integers without
/// a fractional part, everything else as serde_json prints it.
pub fn number_text(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Words that start with an uppercase letter.
pub fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase)
}

/// Truncates to at most `limit` characters, cutting after the last sentence
/// end (`.`, `!`, `?`) that fits. Falls back to the last word boundary when
/// no sentence end fits.
pub fn truncate_at_sentence(text: &str, limit: usize) -> String {
    if text.chars().count() <= limit {
        return text.to_string();
    }
    let cut = text.char_indices().nth(limit).map(|(i, _)| i).unwrap_or(text.len());
    let head = &text[..cut];
    if let Some(i) = head.rfind(['.', '!', '?']) {
        return head[..=i].trim_end().to_string();
    }
    // `head` ends mid-word unless the next char is whitespace.
    let next_is_space = text[cut..].starts_with(char::is_whitespace);
    if next_is_space {
        return head.trim_end().to_string();
    }
    match head.rfind(char::is_whitespace) {
        Some(i) => head[..i].trim_end().to_string(),
        None => head.to_string(),
    }
}
