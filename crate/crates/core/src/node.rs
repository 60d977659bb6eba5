use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// Identifier of a node in the federation hierarchy.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(Arc<str>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid node id `{0}`: use 1-64 characters from [A-Za-z0-9_.-]")]
pub struct InvalidNodeId(pub String);

impl NodeId {
    pub fn new(id: &str) -> Result<Self, InvalidNodeId> {
        let ok = !id.is_empty()
            && id.len() <= 64
            && id.bytes().all(|b| b.is_ascii_alphanumeric() || b"_.-".contains(&b));
        if ok {
            Ok(NodeId(id.into()))
        } else {
            Err(InvalidNodeId(id.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for NodeId {
    type Err = InvalidNodeId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeId::new(s)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_and_rejects() {
        assert_eq!(NodeId::new("us-parks_1.a").unwrap().as_str(), "us-parks_1.a");
        for bad in ["", "a b", "x/y", &"n".repeat(65)] {
            assert!(NodeId::new(bad).is_err(), "{bad}");
        }
    }
}
