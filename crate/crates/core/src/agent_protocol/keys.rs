use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Maps whole-string escape tokens such as `C-c` to the bytes they stand for.
///
/// A token is only recognized when it is the entire keystroke string, so
/// `echo C-c` is sent literally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEncoder {
    tokens: BTreeMap<String, Vec<u8>>,
}

impl Default for KeyEncoder {
    fn default() -> Self {
        Self {
            tokens: BTreeMap::from([("C-c".to_string(), vec![0x03]), ("C-d".to_string(), vec![0x04])]),
        }
    }
}

impl KeyEncoder {
    pub fn with_token(mut self, token: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        self.tokens.insert(token.into(), bytes.into());
        self
    }

    pub fn is_token(&self, keystrokes: &str) -> bool {
        self.tokens.contains_key(keystrokes)
    }

    pub fn encode(&self, keystrokes: &str) -> Vec<u8> {
        match self.tokens.get(keystrokes) {
            Some(bytes) => bytes.clone(),
            None => keystrokes.as_bytes().to_vec(),
        }
    }
}

/// Encodes with the default token set (`C-c`, `C-d`).
pub fn encode_keystrokes(keystrokes: &str) -> Vec<u8> {
    KeyEncoder::default().encode(keystrokes)
}
