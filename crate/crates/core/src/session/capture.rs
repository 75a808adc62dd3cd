use std::sync::OnceLock;

use regex::Regex;

/// Rolling tail of terminal output bounded by a character count.
#[derive(Debug, Clone)]
pub(crate) struct CaptureBuffer {
    text: String,
    chars: usize,
    window: usize,
    truncated: bool,
}

impl CaptureBuffer {
    pub(crate) fn new(window: usize) -> Self {
        Self {
            text: String::new(),
            chars: 0,
            window,
            truncated: false,
        }
    }

    pub(crate) fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
        if self.chars > self.window {
            let excess = self.chars - self.window;
            let cut = self
                .text
                .char_indices()
                .nth(excess)
                .map(|(i, _)| i)
                .unwrap_or(self.text.len());
            self.text.drain(..cut);
            self.chars = self.window;
            self.truncated = true;
        }
    }

    pub(crate) fn text(&self) -> &str {
        &self.text
    }

    pub(crate) fn truncated(&self) -> bool {
        self.truncated
    }
}

/// Last `window` characters of `text`, and whether anything was cut.
pub(crate) fn tail_chars(text: &str, window: usize) -> (String, bool) {
    let count = text.chars().count();
    if count <= window {
        return (text.to_string(), false);
    }
    let cut = text
        .char_indices()
        .nth(count - window)
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    (text[cut..].to_string(), true)
}

/// Incremental UTF-8 decoding that holds back a split trailing sequence.
#[derive(Debug, Default)]
pub(crate) struct Utf8Stream {
    carry: Vec<u8>,
}

impl Utf8Stream {
    pub(crate) fn decode(&mut self, bytes: &[u8]) -> String {
        self.carry.extend_from_slice(bytes);
        let mut out = String::new();
        let mut rest: &[u8] = &self.carry;
        loop {
            match std::str::from_utf8(rest) {
                Ok(s) => {
                    out.push_str(s);
                    rest = &[];
                    break;
                }
                Err(e) => {
                    let valid = e.valid_up_to();
                    out.push_str(std::str::from_utf8(&rest[..valid]).expect("validated prefix"));
                    match e.error_len() {
                        Some(bad) => {
                            out.push(char::REPLACEMENT_CHARACTER);
                            rest = &rest[valid + bad..];
                        }
                        None => {
                            rest = &rest[valid..];
                            break;
                        }
                    }
                }
            }
        }
        self.carry = rest.to_vec();
        out
    }
}

fn ansi_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\x1b\[[0-?]*[ -/]*[@-~]|\x1b\][^\x07\x1b]*(?:\x07|\x1b\\)|\x1b[@-Z\\-_]")
            .expect("static regex")
    })
}

/// Removes CSI/OSC and two-byte escape sequences.
pub fn strip_ansi(text: &str) -> String {
    ansi_regex().replace_all(text, "").into_owned()
}

/// What a terminal would show for raw output: escapes removed, `\r` moves
/// to column 0 and overwrites, backspace steps left, other controls dropped.
pub fn render_screen(raw: &str) -> String {
    let clean = strip_ansi(raw);
    let mut out = String::with_capacity(clean.len());
    for (i, line) in clean.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let mut cells: Vec<char> = Vec::new();
        let mut col: usize = 0;
        for ch in line.chars() {
            match ch {
                '\r' => col = 0,
                '\x08' => col = col.saturating_sub(1),
                '\t' => {
                    cells.resize(cells.len().max(col), ' ');
                    if col < cells.len() {
                        cells[col] = ch;
                    } else {
                        cells.push(ch);
                    }
                    col += 1;
                }
                c if c.is_control() => {}
                c => {
                    if col < cells.len() {
                        cells[col] = c;
                    } else {
                        cells.push(c);
                    }
                    col += 1;
                }
            }
        }
        out.extend(cells);
    }
    out
}
