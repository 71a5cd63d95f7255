//! String normalization and matching helpers shared across modules.

/// Casefold and collapse internal whitespace runs to a single space.
///
/// This is the key used for deduplication, term/type overlap and exact-match
/// scoring.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Casefold only (no whitespace handling).
pub fn casefold(s: &str) -> String {
    s.chars().flat_map(char::to_lowercase).collect()
}

/// True if `needle` occurs in `haystack` with a word boundary on both sides.
///
/// Both arguments must already be casefolded. A boundary is the start or end
/// of the haystack or any non-alphanumeric character.
pub fn contains_bounded(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    // Overlapping search: "ab ab" must still be found in "xab ab ab".
    let mut from = 0;
    while let Some(offset) = haystack[from..].find(needle) {
        let start = from + offset;
        let end = start + needle.len();
        let before_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// Deduplicate by normalized key, keeping the first casing seen.
/// Empty (after trimming) entries are dropped; survivors are trimmed.
pub fn dedup_first_casing<I, S>(items: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for item in items {
        let trimmed = item.as_ref().trim();
        if trimmed.is_empty() {
            continue;
        }
        if seen.insert(normalize(trimmed)) {
            out.push(trimmed.to_string());
        }
    }
    out
}
