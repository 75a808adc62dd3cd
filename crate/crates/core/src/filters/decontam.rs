use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub const DEFAULT_NGRAM: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecontamConfig {
    pub n: usize,
    pub lowercase: bool,
    /// Treat any run of whitespace as one separator. When off, every single
    /// whitespace character separates tokens and empty tokens are kept.
    pub collapse_whitespace: bool,
}

impl Default for DecontamConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_NGRAM,
            lowercase: true,
            collapse_whitespace: true,
        }
    }
}

impl DecontamConfig {
    pub fn with_n(n: usize) -> Self {
        Self {
            n,
            ..Self::default()
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let text = if self.lowercase {
            text.to_lowercase()
        } else {
            text.to_string()
        };
        if self.collapse_whitespace {
            text.split_whitespace().map(str::to_string).collect()
        } else {
            text.split(char::is_whitespace).map(str::to_string).collect()
        }
    }
}

/// Windows are keyed by their tokens joined with NUL, which never occurs
/// inside a token, so lookups are exact.
fn window_key(tokens: &[String]) -> String {
    tokens.join("\0")
}

/// Every n-token window of a benchmark corpus.
#[derive(Debug, Clone)]
pub struct NGramIndex {
    config: DecontamConfig,
    windows: HashSet<String>,
}

impl NGramIndex {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn config(&self) -> &DecontamConfig {
        &self.config
    }

    /// First window of `text` present in the index, as space-joined tokens.
    pub fn witness(&self, text: &str) -> Option<String> {
        let n = self.config.n;
        let tokens = self.config.tokenize(text);
        if n == 0 || tokens.len() < n {
            return None;
        }
        tokens
            .windows(n)
            .find(|w| self.windows.contains(&window_key(w)))
            .map(|w| w.join(" "))
    }
}

pub fn ngram_index<S: AsRef<str>>(benchmark_texts: &[S], config: &DecontamConfig) -> NGramIndex {
    let mut windows = HashSet::new();
    if config.n > 0 {
        for text in benchmark_texts {
            let tokens = config.tokenize(text.as_ref());
            for w in tokens.windows(config.n) {
                windows.insert(window_key(w));
            }
        }
    }
    NGramIndex {
        config: config.clone(),
        windows,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub id: String,
    pub witness_window: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecontamResult<T> {
    pub kept: Vec<T>,
    pub removed: Vec<T>,
    pub report: Vec<Removal>,
}

/// Splits `items` into kept and removed, in input order. An item is removed
/// iff one of its n-token windows occurs in the index.
pub fn decontaminate<T>(
    items: impl IntoIterator<Item = T>,
    index: &NGramIndex,
    id_of: impl Fn(&T) -> String,
    text_of: impl Fn(&T) -> String,
) -> DecontamResult<T> {
    let mut out = DecontamResult {
        kept: Vec::new(),
        removed: Vec::new(),
        report: Vec::new(),
    };
    for item in items {
        match index.witness(&text_of(&item)) {
            Some(witness_window) => {
                out.report.push(Removal {
                    id: id_of(&item),
                    witness_window,
                });
                out.removed.push(item);
            }
            None => out.kept.push(item),
        }
    }
    out
}
