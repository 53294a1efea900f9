//! Parsing of model output: fenced JSON blocks, Python functions, boxed answers.

use serde_json::Value;

/// Contents of the last fenced code block, preferring one tagged `lang`.
pub fn fenced_block<'a>(text: &'a str, lang: &str) -> Option<&'a str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let header_end = after.find('\n')?;
        let tag = after[..header_end].trim();
        let body = &after[header_end + 1..];
        let end = body.find("```")?;
        blocks.push((tag, &body[..end]));
        rest = &body[end + 3..];
    }
    blocks
        .iter()
        .rev()
        .find(|(tag, _)| tag.eq_ignore_ascii_case(lang))
        .or(blocks.last())
        .map(|(_, body)| *body)
}

/// The JSON value in a ```json fence, or the whole text when it is bare JSON.
pub fn json_payload(text: &str) -> Option<Value> {
    if let Some(block) = fenced_block(text, "json") {
        if let Ok(v) = serde_json::from_str(block.trim()) {
            return Some(v);
        }
    }
    serde_json::from_str(text.trim()).ok()
}

/// A JSON array of non-empty strings, or of objects with a `content` field.
pub fn string_list(text: &str) -> Option<Vec<String>> {
    let items = match json_payload(text)? {
        Value::Array(items) => items,
        Value::Object(mut map) => match map.remove("items") {
            Some(Value::Array(items)) => items,
            _ => return None,
        },
        _ => return None,
    };
    items
        .into_iter()
        .map(|item| match item {
            Value::String(s) => Some(s),
            Value::Object(mut o) => match o.remove("content") {
                Some(Value::String(s)) => Some(s),
                _ => None,
            },
            _ => None,
        })
        .filter(|s| s.as_ref().is_none_or(|s| !s.trim().is_empty()))
        .collect()
}

/// Top-level Python function definitions (with decorators) copied verbatim.
pub fn python_functions(program: &str) -> Vec<String> {
    let code = fenced_block(program, "python").unwrap_or(program);
    let lines: Vec<&str> = code.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let start = i;
        while i < lines.len() && lines[i].starts_with('@') {
            i += 1;
        }
        let is_def = i < lines.len() && (lines[i].starts_with("def ") || lines[i].starts_with("async def "));
        if !is_def {
            i = start + 1;
            continue;
        }
        i += 1;
        while i < lines.len() {
            let l = lines[i];
            if l.trim().is_empty() || l.starts_with(' ') || l.starts_with('\t') {
                i += 1;
            } else {
                break;
            }
        }
        let mut end = i;
        while end > start && lines[end - 1].trim().is_empty() {
            end -= 1;
        }
        out.push(lines[start..end].join("\n"));
    }
    out
}

/// Contents of the last `\boxed{...}` with balanced braces.
pub fn boxed_answer(text: &str) -> Option<String> {
    let start = text.rfind("\\boxed{")? + "\\boxed{".len();
    let mut depth = 1;
    for (i, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(text[start..start + i].to_owned());
                }
            }
            _ => {}
        }
    }
    None
}

/// Canonical form used for answer equality: whitespace, `$`, `\left`/`\right`,
/// `\!`, `\,` and a trailing period are dropped, `\dfrac`/`\tfrac` become
/// `\frac`, and plain numbers are re-printed so `1,000`, `1000.0` and `1e3` agree.
pub fn normalize_answer(raw: &str) -> String {
    let mut s: String = raw.chars().filter(|c| !c.is_whitespace() && *c != '$').collect();
    for (from, to) in [
        ("\\left", ""),
        ("\\right", ""),
        ("\\!", ""),
        ("\\,", ""),
        ("\\dfrac", "\\frac"),
        ("\\tfrac", "\\frac"),
        ("\\text{", "{"),
    ] {
        s = s.replace(from, to);
    }
    let s = s.trim_end_matches('.').to_owned();
    let numeric = if thousands_grouped(&s) { s.replace(',', "") } else { s.clone() };
    match numeric.parse::<f64>() {
        Ok(v) if v.is_finite() => format!("{v}"),
        _ => s,
    }
}

/// `1,234,567` style grouping, optionally signed and with a fraction.
fn thousands_grouped(s: &str) -> bool {
    let s = s.strip_prefix('-').unwrap_or(s);
    let int = s.split('.').next().unwrap_or("");
    let groups: Vec<&str> = int.split(',').collect();
    groups.len() > 1
        && (1..=3).contains(&groups[0].len())
        && groups[1..].iter().all(|g| g.len() == 3)
        && groups.iter().all(|g| g.chars().all(|c| c.is_ascii_digit()))
}
