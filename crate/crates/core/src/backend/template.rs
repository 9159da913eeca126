//! Prompt templates and their rendering.
//!
//! A bundle holds one body per [`TemplateName`] plus an optional system
//! message. Bodies use `{question}`, `{prev_answer}`, `{memory}`, `{plan}`
//! and `{answer_marker}` placeholders. The built-in bundle is versioned
//! through its content hash, which runs record in their metadata.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::Message;

pub const ANSWER_MARKER: &str = "ANSWER:";
pub const COT_MARKER: &str = "Let's think step by step.";
pub const NO_MEMORY_PLACEHOLDER: &str = "No prior reflections.";
pub const NO_PLAN_SENTINEL: &str = "No feasible corrective actions were identified.";

const PLACEHOLDERS: &[&str] = &["question", "prev_answer", "memory", "plan", "answer_marker"];

const BUILTIN_ID: &str = "default";
const BUILTIN_SYSTEM: &str = include_str!("../../assets/templates/default/system.txt");
const BUILTIN: &[(TemplateName, &str)] = &[
    (TemplateName::ZeroShot, include_str!("../../assets/templates/default/zero_shot.txt")),
    (TemplateName::ZeroShotCot, include_str!("../../assets/templates/default/zero_shot_cot.txt")),
    (TemplateName::Reflection, include_str!("../../assets/templates/default/reflection.txt")),
    (TemplateName::Refinement, include_str!("../../assets/templates/default/refinement.txt")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemplateName {
    ZeroShot,
    ZeroShotCot,
    Reflection,
    Refinement,
}

impl TemplateName {
    pub const ALL: [TemplateName; 4] = [
        TemplateName::ZeroShot,
        TemplateName::ZeroShotCot,
        TemplateName::Reflection,
        TemplateName::Refinement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::ZeroShot => "zero_shot",
            TemplateName::ZeroShotCot => "zero_shot_cot",
            TemplateName::Reflection => "reflection",
            TemplateName::Refinement => "refinement",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.as_str())
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("unknown template set {0:?} (expected \"default\" or a template directory)")]
    UnknownSet(String),
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template set {set:?} has no {name} template")]
    Missing { set: String, name: TemplateName },
    #[error("template {template} uses unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: TemplateName, name: String },
    #[error("template {template}: placeholder {{{name}}} is unbound")]
    Unbound { template: TemplateName, name: String },
}

/// One memory record as shown to the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryEntry {
    pub iteration: u32,
    pub text: String,
}

/// Values for template placeholders. `None` means unbound.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    pub question: Option<String>,
    pub prev_answer: Option<String>,
    pub memory: Option<Vec<MemoryEntry>>,
    pub plan: Option<Vec<String>>,
    /// Character budget for the expanded memory section.
    pub memory_budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub messages: Vec<Message>,
    /// Older reflections were cut to their first sentence to fit the budget.
    pub memory_truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateBundle {
    id: String,
    system: Option<String>,
    bodies: BTreeMap<TemplateName, String>,
}

/// Placeholder names appearing in `body`, in order.
fn placeholders(body: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                j += 1;
            }
            if j > start && j < bytes.len() && bytes[j] == b'}' {
                out.push((i, j + 1, &body[start..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn first_sentence(text: &str) -> &str {
    let t = text.trim();
    let mut chars = t.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c == '\n' {
            return t[..i].trim_end();
        }
        if matches!(c, '.' | '!' | '?' | '。' | '！' | '？') {
            let next_is_break = chars.peek().is_none_or(|&(_, n)| n.is_whitespace());
            if next_is_break {
                return &t[..i + c.len_utf8()];
            }
        }
    }
    t
}

fn format_memory(entries: &[(u32, &str)]) -> String {
    entries
        .iter()
        .map(|(i, text)| format!("Reflection {i}: {text}"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Expands the memory placeholder, summarizing the oldest records to their
/// first sentence until the section fits `budget`. The newest record is
/// never shortened.
fn render_memory(entries: &[MemoryEntry], budget: Option<usize>) -> (String, bool) {
    if entries.is_empty() {
        return (NO_MEMORY_PLACEHOLDER.to_string(), false);
    }
    let mut view: Vec<(u32, &str)> = entries.iter().map(|e| (e.iteration, e.text.as_str())).collect();
    let mut text = format_memory(&view);
    let Some(budget) = budget else {
        return (text, false);
    };
    let mut truncated = false;
    for k in 0..view.len().saturating_sub(1) {
        if text.chars().count() <= budget {
            break;
        }
        let short = first_sentence(view[k].1);
        if short != view[k].1 {
            view[k].1 = short;
            truncated = true;
            text = format_memory(&view);
        }
    }
    (text, truncated)
}

fn render_plan(plan: &[String]) -> String {
    if plan.is_empty() {
        return NO_PLAN_SENTINEL.to_string();
    }
    plan.iter().map(|a| format!("- {a}")).collect::<Vec<_>>().join("\n")
}

impl TemplateBundle {
    pub fn builtin() -> Self {
        Self {
            id: BUILTIN_ID.to_string(),
            system: Some(BUILTIN_SYSTEM.trim_end().to_string()),
            bodies: BUILTIN.iter().map(|(n, b)| (*n, b.trim_end().to_string())).collect(),
        }
    }

    /// Resolves a template-set identifier: `default`, or a directory holding
    /// one `<name>.txt` per template and an optional `system.txt`.
    pub fn resolve(set: &str) -> Result<Self, TemplateError> {
        if set == BUILTIN_ID {
            return Ok(Self::builtin());
        }
        let path = Path::new(set);
        if path.is_dir() {
            return Self::from_dir(path);
        }
        Err(TemplateError::UnknownSet(set.to_string()))
    }

    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| TemplateError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        let id = dir.display().to_string();
        let mut bodies = BTreeMap::new();
        for name in TemplateName::ALL {
            let p = dir.join(name.file_name());
            if !p.exists() {
                return Err(TemplateError::Missing { set: id, name });
            }
            bodies.insert(name, read(&p)?.trim_end().to_string());
        }
        let sys = dir.join("system.txt");
        let system = if sys.exists() { Some(read(&sys)?.trim_end().to_string()) } else { None };
        let bundle = Self { id, system, bodies };
        bundle.check_placeholders()?;
        Ok(bundle)
    }

    fn check_placeholders(&self) -> Result<(), TemplateError> {
        for (name, body) in &self.bodies {
            if let Some((_, _, bad)) = placeholders(body).into_iter().find(|(_, _, p)| !PLACEHOLDERS.contains(p)) {
                return Err(TemplateError::UnknownPlaceholder { template: *name, name: bad.to_string() });
            }
        }
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn body(&self, name: TemplateName) -> &str {
        &self.bodies[&name]
    }

    /// Content hash over every template body and the system message.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        if let Some(s) = &self.system {
            h.update(b"system\0");
            h.update(s.as_bytes());
            h.update([0]);
        }
        for (name, body) in &self.bodies {
            h.update(name.as_str().as_bytes());
            h.update([0]);
            h.update(body.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    pub fn template_hashes(&self) -> BTreeMap<String, String> {
        self.bodies
            .iter()
            .map(|(n, b)| (n.as_str().to_string(), hex::encode(Sha256::digest(b.as_bytes()))))
            .collect()
    }

    pub fn render(&self, name: TemplateName, bindings: &Bindings) -> Result<Rendered, TemplateError> {
        let body = self.body(name);
        let mut out = String::with_capacity(body.len() + 256);
        let mut memory_truncated = false;
        let mut last = 0;
        for (start, end, ph) in placeholders(body) {
            out.push_str(&body[last..start]);
            let unbound = || TemplateError::Unbound { template: name, name: ph.to_string() };
            match ph {
                "question" => out.push_str(bindings.question.as_deref().ok_or_else(unbound)?),
                "prev_answer" => out.push_str(bindings.prev_answer.as_deref().ok_or_else(unbound)?),
                "memory" => {
                    let entries = bindings.memory.as_deref().ok_or_else(unbound)?;
                    let (text, truncated) = render_memory(entries, bindings.memory_budget);
                    memory_truncated |= truncated;
                    out.push_str(&text);
                }
                "plan" => out.push_str(&render_plan(bindings.plan.as_deref().ok_or_else(unbound)?)),
                "answer_marker" => out.push_str(ANSWER_MARKER),
                other => {
                    return Err(TemplateError::UnknownPlaceholder { template: name, name: other.to_string() })
                }
            }
            last = end;
        }
        out.push_str(&body[last..]);

        let mut messages = Vec::with_capacity(2);
        if let Some(sys) = &self.system {
            messages.push(Message::system(sys.clone()));
        }
        messages.push(Message::user(out));
        Ok(Rendered { messages, memory_truncated })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mem(texts: &[&str]) -> Vec<MemoryEntry> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| MemoryEntry { iteration: i as u32 + 1, text: t.to_string() })
            .collect()
    }

    fn user_text(r: &Rendered) -> &str {
        &r.messages.last().unwrap().text
    }

    fn full_bindings() -> Bindings {
        Bindings {
            question: Some("What is the total?".into()),
            prev_answer: Some("12".into()),
            memory: Some(mem(&["first look", "second look"])),
            plan: Some(vec!["recount the rows".into()]),
            memory_budget: None,
        }
    }

    #[test]
    fn builtin_renders_without_residual_placeholders() {
        let b = TemplateBundle::builtin();
        for name in TemplateName::ALL {
            let r = b.render(name, &full_bindings()).unwrap();
            assert!(placeholders(user_text(&r)).is_empty(), "{name}");
            assert_eq!(r.messages[0].role, super::super::Role::System);
        }
    }

    #[test]
    fn reflection_memory_is_numbered_in_order() {
        let r = TemplateBundle::builtin().render(TemplateName::Reflection, &full_bindings()).unwrap();
        let text = user_text(&r);
        let one = text.find("Reflection 1: first look").unwrap();
        let two = text.find("Reflection 2: second look").unwrap();
        assert!(one < two);
        assert!(text.contains("What is the total?"));
        assert!(text.contains("12"));
    }

    #[test]
    fn empty_memory_and_plan_use_sentinels() {
        let mut b = full_bindings();
        b.memory = Some(vec![]);
        b.plan = Some(vec![]);
        let bundle = TemplateBundle::builtin();
        let r = bundle.render(TemplateName::Reflection, &b).unwrap();
        assert!(user_text(&r).contains(NO_MEMORY_PLACEHOLDER));
        let r = bundle.render(TemplateName::Refinement, &b).unwrap();
        assert!(user_text(&r).contains(NO_PLAN_SENTINEL));
    }

    #[test]
    fn unbound_placeholder_is_named() {
        let mut b = full_bindings();
        b.question = None;
        let err = TemplateBundle::builtin().render(TemplateName::ZeroShot, &b).unwrap_err();
        assert!(matches!(&err, TemplateError::Unbound { name, .. } if name == "question"), "{err}");
        assert!(err.to_string().contains("{question}"));
    }

    #[test]
    fn cot_template_carries_marker_and_plain_does_not() {
        let bundle = TemplateBundle::builtin();
        assert!(bundle.body(TemplateName::ZeroShotCot).contains(COT_MARKER));
        assert!(!bundle.body(TemplateName::ZeroShot).contains(COT_MARKER));
    }

    #[test]
    fn distinct_memory_orders_render_differently() {
        let bundle = TemplateBundle::builtin();
        let mut a = full_bindings();
        let mut b = full_bindings();
        a.memory = Some(mem(&["alpha", "beta"]));
        b.memory = Some(mem(&["beta", "alpha"]));
        let ra = bundle.render(TemplateName::Refinement, &a).unwrap();
        let rb = bundle.render(TemplateName::Refinement, &b).unwrap();
        assert_ne!(ra, rb);
    }

    #[test]
    fn budget_summarizes_oldest_first() {
        let entries = mem(&[
            "The header is blurry. I misread the 8 as a 3 and the total is off.",
            "Second pass. Row three was skipped entirely in the sum.",
            "Latest. Still unsure about the currency symbol.",
        ]);
        let (full, t) = render_memory(&entries, None);
        assert!(!t);
        let (short, t) = render_memory(&entries, Some(full.chars().count() - 10));
        assert!(t);
        assert!(short.contains("Reflection 1: The header is blurry.\n"));
        assert!(short.contains("Row three was skipped"));
        // even a tiny budget keeps every record present and the newest whole
        let (tiny, t) = render_memory(&entries, Some(10));
        assert!(t);
        assert!(tiny.contains("Reflection 2: Second pass."));
        assert!(tiny.contains("Latest. Still unsure about the currency symbol."));
    }

    #[test]
    fn first_sentence_rules() {
        assert_eq!(first_sentence("One. Two."), "One.");
        assert_eq!(first_sentence("v1.2 is fine. Next"), "v1.2 is fine.");
        assert_eq!(first_sentence("line one\nline two"), "line one");
        assert_eq!(first_sentence("no terminator"), "no terminator");
    }

    #[test]
    fn directory_bundles_load_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        for name in TemplateName::ALL {
            std::fs::write(dir.path().join(name.file_name()), format!("{name}: {{question}}")).unwrap();
        }
        let b = TemplateBundle::resolve(dir.path().to_str().unwrap()).unwrap();
        assert_ne!(b.hash(), TemplateBundle::builtin().hash());
        assert_eq!(b.render(TemplateName::ZeroShot, &full_bindings()).unwrap().messages.len(), 1);

        std::fs::write(dir.path().join("reflection.txt"), "{bogus}").unwrap();
        assert!(matches!(
            TemplateBundle::from_dir(dir.path()),
            Err(TemplateError::UnknownPlaceholder { .. })
        ));
        std::fs::remove_file(dir.path().join("refinement.txt")).unwrap();
        assert!(matches!(TemplateBundle::from_dir(dir.path()), Err(TemplateError::Missing { .. })));
        assert!(matches!(TemplateBundle::resolve("nope-not-a-set"), Err(TemplateError::UnknownSet(_))));
    }

    #[test]
    fn literal_braces_pass_through() {
        let p = placeholders("json {\"a\": 1} and {Question} and {x1}");
        assert!(p.is_empty());
    }
}
