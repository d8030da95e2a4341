use std::fmt;

use serde_json::Value;

/// Scatter-index path, outermost level first. The empty tag is the root.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tag(pub Vec<usize>);

impl Tag {
    pub fn root() -> Self {
        Tag(Vec::new())
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn child(&self, index: usize) -> Tag {
        let mut path = self.0.clone();
        path.push(index);
        Tag(path)
    }

    pub fn prefix(&self, len: usize) -> Tag {
        Tag(self.0[..len.min(self.0.len())].to_vec())
    }

    pub fn is_prefix_of(&self, other: &Tag) -> bool {
        other.0.starts_with(&self.0)
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

impl From<Vec<usize>> for Tag {
    fn from(path: Vec<usize>) -> Self {
        Tag(path)
    }
}

/// Runtime datum carried by a token.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Inline JSON value.
    Value(Value),
    /// Reference into the data-manager registry.
    File(String),
    List(Vec<Payload>),
}

impl Payload {
    pub fn as_list(&self) -> Option<&[Payload]> {
        match self {
            Payload::List(items) => Some(items),
            _ => None,
        }
    }

    /// Every file reference contained in the payload, depth first.
    pub fn file_refs(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Payload::Value(_) => {}
            Payload::File(id) => out.push(id),
            Payload::List(items) => items.iter().for_each(|p| p.collect_refs(out)),
        }
    }

    /// Lifts a JSON value into a payload of the given list depth.
    pub fn from_json(value: &Value, list_depth: usize) -> Option<Payload> {
        if list_depth == 0 {
            return Some(Payload::Value(value.clone()));
        }
        let items = value.as_array()?;
        items
            .iter()
            .map(|v| Payload::from_json(v, list_depth - 1))
            .collect::<Option<Vec<_>>>()
            .map(Payload::List)
    }
}

/// Identifies a token stream: a step output port or a workflow input.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PortKey {
    /// Step id, or `inputs` for workflow inputs.
    pub step: String,
    pub port: String,
}

impl PortKey {
    pub fn new(step: impl Into<String>, port: impl Into<String>) -> Self {
        PortKey { step: step.into(), port: port.into() }
    }
}

impl fmt::Display for PortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.step, self.port)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub port: PortKey,
    pub payload: Payload,
    pub tag: Tag,
    /// Size of the scatter at each level of `tag`, outermost first.
    pub list_size_at_level: Vec<usize>,
}

impl Token {
    pub fn root(port: PortKey, payload: Payload) -> Self {
        Token { port, payload, tag: Tag::root(), list_size_at_level: Vec::new() }
    }

    /// `tag` and `list_size_at_level` agree in length and every index is in range.
    pub fn is_well_formed(&self) -> bool {
        self.tag.0.len() == self.list_size_at_level.len()
            && self.tag.0.iter().zip(&self.list_size_at_level).all(|(i, n)| i < n)
    }
}
