//! Command templates with `{name}` placeholders.
//!
//! `{{` and `}}` are literal braces. Without `shell: true` the template is
//! split into arguments with POSIX word rules *before* substitution, so a
//! substituted value can never introduce new arguments or shell syntax. A
//! placeholder that is a whole argument and resolves to a list is spliced as
//! one argument per element.

use thiserror::Error;

/// Reserved placeholder naming the instance output directory.
pub const OUTDIR: &str = "outdir";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unbalanced brace at byte {0}")]
    UnbalancedBrace(usize),
    #[error("invalid placeholder name `{0}`")]
    InvalidName(String),
    #[error("cannot split command into arguments: {0}")]
    Split(String),
    #[error("placeholder `{0}` has no value")]
    Unresolved(String),
    #[error("command is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    Placeholder(String),
}

pub fn segments(text: &str) -> Result<Vec<Segment>, TemplateError> {
    let mut out = Vec::new();
    let mut literal = String::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < text.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                literal.push('{');
                i += 2;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                literal.push('}');
                i += 2;
            }
            b'{' => {
                let end = text[i + 1..]
                    .find('}')
                    .map(|off| i + 1 + off)
                    .ok_or(TemplateError::UnbalancedBrace(i))?;
                let name = &text[i + 1..end];
                if !super::is_identifier(name) {
                    return Err(TemplateError::InvalidName(name.to_string()));
                }
                if !literal.is_empty() {
                    out.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                out.push(Segment::Placeholder(name.to_string()));
                i = end + 1;
            }
            b'}' => return Err(TemplateError::UnbalancedBrace(i)),
            _ => {
                let ch = text[i..].chars().next().unwrap_or_default();
                literal.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    if !literal.is_empty() {
        out.push(Segment::Literal(literal));
    }
    Ok(out)
}

/// Placeholder names in order of first appearance.
pub fn placeholders(text: &str) -> Result<Vec<String>, TemplateError> {
    let mut names: Vec<String> = Vec::new();
    for seg in segments(text)? {
        if let Segment::Placeholder(name) = seg {
            if !names.contains(&name) {
                names.push(name);
            }
        }
    }
    Ok(names)
}

/// A placeholder value after payload resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rendered {
    Scalar(String),
    List(Vec<Rendered>),
}

impl Rendered {
    /// Text used when the value is embedded inside a larger argument.
    fn inline(&self) -> String {
        match self {
            Rendered::Scalar(s) => s.clone(),
            Rendered::List(_) => serde_json::to_string(&self.to_json()).unwrap_or_default(),
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            Rendered::Scalar(s) => serde_json::Value::String(s.clone()),
            Rendered::List(items) => items.iter().map(Rendered::to_json).collect(),
        }
    }

    fn splice(&self) -> Vec<String> {
        match self {
            Rendered::Scalar(s) => vec![s.clone()],
            Rendered::List(items) => items.iter().map(Rendered::inline).collect(),
        }
    }
}

/// Builds the argv for a command. With `shell` set the result is
/// `["sh", "-c", script]` where every substituted value is single-quoted.
pub fn render_argv<F>(text: &str, shell: bool, lookup: F) -> Result<Vec<String>, TemplateError>
where
    F: Fn(&str) -> Option<Rendered>,
{
    let resolve = |name: &str| lookup(name).ok_or_else(|| TemplateError::Unresolved(name.into()));
    if shell {
        let mut script = String::new();
        for seg in segments(text)? {
            match seg {
                Segment::Literal(s) => script.push_str(&s),
                Segment::Placeholder(name) => {
                    let quoted: Vec<String> = resolve(&name)?
                        .splice()
                        .iter()
                        .map(|s| shell_words::quote(s).into_owned())
                        .collect();
                    script.push_str(&quoted.join(" "));
                }
            }
        }
        return Ok(vec!["sh".into(), "-c".into(), script]);
    }

    let words = shell_words::split(text).map_err(|e| TemplateError::Split(e.to_string()))?;
    let mut argv = Vec::new();
    for word in words {
        let segs = segments(&word)?;
        if let [Segment::Placeholder(name)] = segs.as_slice() {
            argv.extend(resolve(name)?.splice());
            continue;
        }
        let mut arg = String::new();
        for seg in segs {
            match seg {
                Segment::Literal(s) => arg.push_str(&s),
                Segment::Placeholder(name) => arg.push_str(&resolve(&name)?.inline()),
            }
        }
        argv.push(arg);
    }
    if argv.is_empty() {
        return Err(TemplateError::Empty);
    }
    Ok(argv)
}
