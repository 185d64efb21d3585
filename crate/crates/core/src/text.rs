//! Text helpers shared by the retriever, the Jaccard kernel and the engine.

/// Lowercases `text` and splits it on every run of non-alphanumeric
/// characters, dropping empty pieces. No stemming, no stop words.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Returns the first sentence of `text`: the shortest prefix ending in `.`,
/// `?` or `!` that is followed by whitespace or the end of the text.
///
/// Leading whitespace is skipped. Text without a terminator is returned whole
/// (trimmed). Abbreviations such as "Dr." are not special-cased.
pub fn first_sentence(text: &str) -> &str {
    let text = text.trim_start();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '?' | '!') {
            match chars.peek() {
                None => return text,
                Some((_, next)) if next.is_whitespace() => return &text[..i + c.len_utf8()],
                _ => {}
            }
        }
    }
    text.trim_end()
}

/// Finds the byte offset just past the last case-insensitive occurrence of
/// `needle` in `haystack`.
pub(crate) fn rfind_ignore_case(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let needle: Vec<char> = needle.chars().flat_map(char::to_lowercase).collect();
    let starts: Vec<usize> = haystack.char_indices().map(|(i, _)| i).collect();
    for &start in starts.iter().rev() {
        let mut rest = haystack[start..].chars().flat_map(char::to_lowercase);
        let mut consumed = 0usize;
        let mut ok = true;
        for want in &needle {
            match rest.next() {
                Some(got) if got == *want => consumed += 1,
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && consumed == needle.len() {
            // Walk forward in original chars until the lowercase expansion covers the needle.
            let mut covered = 0usize;
            for (off, c) in haystack[start..].char_indices() {
                covered += c.to_lowercase().count();
                if covered >= needle.len() {
                    return Some(start + off + c.len_utf8());
                }
            }
        }
    }
    None
}
