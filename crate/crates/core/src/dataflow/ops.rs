//! Scatter, gather and the dot/cross combination of scattered ports.

use super::token::{Payload, Tag, Token};
use super::DataflowError;
use crate::workflow::ScatterMethod;

/// Result of splitting one list token.
///
/// An empty list yields no tokens but still records `size == 0` under
/// `prefix`, which is what lets downstream gathers fire with `[]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub prefix: Tag,
    pub size: usize,
    pub tokens: Vec<Token>,
}

impl Expansion {
    pub fn is_empty_marker(&self) -> bool {
        self.size == 0
    }
}

pub fn scatter_expand(token: &Token) -> Result<Expansion, DataflowError> {
    let items = token.payload.as_list().ok_or_else(|| DataflowError::NotAList {
        port: token.port.to_string(),
        tag: token.tag.to_string(),
    })?;
    let size = items.len();
    let tokens = items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let mut sizes = token.list_size_at_level.clone();
            sizes.push(size);
            Token {
                port: token.port.clone(),
                payload: item.clone(),
                tag: token.tag.child(i),
                list_size_at_level: sizes,
            }
        })
        .collect();
    Ok(Expansion { prefix: token.tag.clone(), size, tokens })
}

/// Collapses one level: all siblings under `prefix` become a single token
/// whose list is ordered by the last tag index, never by arrival order.
pub fn gather_collect(prefix: &Tag, expected: usize, siblings: Vec<Token>) -> Result<Token, DataflowError> {
    let mut slots: Vec<Option<Token>> = vec![None; expected];
    let mut port = None;
    for token in siblings {
        let index = match token.tag.last() {
            Some(i) if token.tag.depth() == prefix.depth() + 1 && prefix.is_prefix_of(&token.tag) => i,
            _ => {
                return Err(DataflowError::Gather(format!(
                    "token {} does not belong under {prefix}",
                    token.tag
                )))
            }
        };
        let slot = slots.get_mut(index).ok_or_else(|| {
            DataflowError::Gather(format!("sibling index {index} out of range (size {expected})"))
        })?;
        if slot.is_some() {
            return Err(DataflowError::Gather(format!("duplicate sibling index {index} under {prefix}")));
        }
        port.get_or_insert_with(|| token.port.clone());
        *slot = Some(token);
    }
    let mut items = Vec::with_capacity(expected);
    let mut outer_sizes = None;
    for (i, slot) in slots.into_iter().enumerate() {
        let token = slot.ok_or_else(|| {
            DataflowError::Gather(format!("sibling {i} under {prefix} has not arrived"))
        })?;
        outer_sizes.get_or_insert_with(|| token.list_size_at_level[..prefix.depth()].to_vec());
        items.push(token.payload);
    }
    Ok(Token {
        port: port.unwrap_or_else(|| super::token::PortKey::new("", "")),
        payload: Payload::List(items),
        tag: prefix.clone(),
        list_size_at_level: outer_sizes.unwrap_or_default(),
    })
}

/// Input assignment for each instance of a scattered step. `lists` holds one
/// list per scattered port in declaration order.
pub fn dot_cross_product(
    lists: &[Vec<Payload>],
    method: ScatterMethod,
) -> Result<Vec<Vec<Payload>>, DataflowError> {
    if lists.is_empty() {
        return Ok(vec![Vec::new()]);
    }
    match method {
        ScatterMethod::Dot => {
            let n = lists[0].len();
            if let Some(other) = lists.iter().find(|l| l.len() != n) {
                return Err(DataflowError::DotLengthMismatch { left: n, right: other.len() });
            }
            Ok((0..n).map(|i| lists.iter().map(|l| l[i].clone()).collect()).collect())
        }
        ScatterMethod::Cross => {
            let mut out: Vec<Vec<Payload>> = vec![Vec::new()];
            for list in lists {
                let mut next = Vec::with_capacity(out.len() * list.len());
                for prefix in &out {
                    for item in list {
                        let mut row = prefix.clone();
                        row.push(item.clone());
                        next.push(row);
                    }
                }
                out = next;
            }
            Ok(out)
        }
    }
}
