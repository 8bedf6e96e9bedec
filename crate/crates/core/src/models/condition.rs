use serde::{Deserialize, Serialize};

/// Conditioning signal: a small class label, or unconditional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Condition {
    pub class_id: Option<usize>,
}

impl Condition {
    pub fn class(id: usize) -> Self {
        Condition { class_id: Some(id) }
    }

    pub fn none() -> Self {
        Condition { class_id: None }
    }

    pub fn is_none(&self) -> bool {
        self.class_id.is_none()
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.class_id {
            Some(id) => write!(f, "class{id}"),
            None => write!(f, "uncond"),
        }
    }
}
