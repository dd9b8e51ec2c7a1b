//! Lenient parsing of role outputs.

use serde_json::Value;

use crate::playbook::BulletId;

/// First JSON object embedded in `text` (code fences and chatter allowed).
pub fn first_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

/// Ids in a citation list such as `pb-00001, pb-00003` or `none`.
/// Malformed entries are dropped; duplicates keep their first position.
pub fn citation_ids(list: &str) -> Vec<BulletId> {
    let mut out: Vec<BulletId> = Vec::new();
    for tok in list.split(|c: char| c == ',' || c == ';' || c.is_whitespace()) {
        let tok = tok.trim_matches(|c: char| matches!(c, '[' | ']' | '(' | ')' | '`' | '.' | '"'));
        if let Ok(id) = tok.parse::<BulletId>() {
            if !out.contains(&id) {
                out.push(id);
            }
        }
    }
    out
}

/// Value after a case-insensitive `label:` prefix.
pub fn labelled<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let t = line.trim_start().trim_start_matches(['*', '#', '-', ' ']);
    let head = t.get(..label.len())?;
    if head.eq_ignore_ascii_case(label) {
        t[label.len()..].trim_start().strip_prefix(':').map(|v| v.trim().trim_matches('*').trim())
    } else {
        None
    }
}

pub fn is_done(text: &str) -> bool {
    let t = text.trim().trim_matches(|c: char| c == '.' || c == '`' || c == '*');
    t.eq_ignore_ascii_case("done")
}
