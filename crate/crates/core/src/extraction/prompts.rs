//! Prompt templates with `{name}` placeholders.
//!
//! The built-in templates live under `assets/prompts/`. A directory holding
//! files with the same names can override any subset of them.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    pub solve: String,
    pub synthetic_tests: String,
    pub subgoal_judge: String,
    pub tiebreak_judge: String,
    pub extract_skills: String,
    pub extract_insights: String,
    pub merge: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Prompts {
            solve: include_str!("../../assets/prompts/solve.txt").into(),
            synthetic_tests: include_str!("../../assets/prompts/synthetic_tests.txt").into(),
            subgoal_judge: include_str!("../../assets/prompts/subgoal_judge.txt").into(),
            tiebreak_judge: include_str!("../../assets/prompts/tiebreak_judge.txt").into(),
            extract_skills: include_str!("../../assets/prompts/extract_skills.txt").into(),
            extract_insights: include_str!("../../assets/prompts/extract_insights.txt").into(),
            merge: include_str!("../../assets/prompts/merge.txt").into(),
        }
    }
}

impl Prompts {
    /// Built-in templates, replaced by `<dir>/<name>.txt` wherever such a file exists.
    pub fn with_overrides(dir: &Path) -> io::Result<Self> {
        let mut prompts = Prompts::default();
        for (name, slot) in [
            ("solve", &mut prompts.solve),
            ("synthetic_tests", &mut prompts.synthetic_tests),
            ("subgoal_judge", &mut prompts.subgoal_judge),
            ("tiebreak_judge", &mut prompts.tiebreak_judge),
            ("extract_skills", &mut prompts.extract_skills),
            ("extract_insights", &mut prompts.extract_insights),
            ("merge", &mut prompts.merge),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = fs::read_to_string(&path)?;
            }
        }
        Ok(prompts)
    }
}

/// Substitutes `{name}` for each provided name in a single left-to-right pass,
/// so substituted text is never re-scanned. Unknown braces are left alone.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let values: HashMap<&str, &str> = values.iter().copied().collect();
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}').map(|close| (&after[..close], close)) {
            Some((name, close)) if values.contains_key(name) => {
                out.push_str(values[name]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
