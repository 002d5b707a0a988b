//! Lowercasing, punctuation normalization and tokenization.
//!
//! Normalization table, applied after lowercasing:
//!
//! | input                                   | output |
//! |-----------------------------------------|--------|
//! | `‘ ’ ‚ ‛ ′`                             | `'`    |
//! | `“ ” „ ‟ « » ″`                         | `"`    |
//! | U+2010..=U+2015 (hyphens, dashes), `−`  | `-`    |
//! | `…`                                     | `...`  |
//! | no-break and narrow no-break space      | space  |
//!
//! Tokens are maximal runs of alphanumeric characters, maximal runs of `.`,
//! and single characters of any other non-space kind.

fn normalize_char(c: char, out: &mut String) {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{201a}' | '\u{201b}' | '\u{2032}' => out.push('\''),
        '\u{201c}' | '\u{201d}' | '\u{201e}' | '\u{201f}' | '\u{00ab}' | '\u{00bb}' | '\u{2033}' => out.push('"'),
        '\u{2010}'..='\u{2015}' | '\u{2212}' => out.push('-'),
        '\u{2026}' => out.push_str("..."),
        '\u{00a0}' | '\u{202f}' => out.push(' '),
        c => out.push(c),
    }
}

/// Lowercases `line` and applies the punctuation table.
pub fn normalize(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    for c in line.chars().flat_map(char::to_lowercase) {
        normalize_char(c, &mut out);
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Word,
    Dots,
    Other,
}

fn class(c: char) -> Class {
    if c.is_alphanumeric() {
        Class::Word
    } else if c == '.' {
        Class::Dots
    } else {
        Class::Other
    }
}

/// Normalizes and tokenizes one line.
pub fn preprocess_text(line: &str) -> Vec<String> {
    let text = normalize(line);
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut current = String::new();
        let mut current_class = None;
        for c in chunk.chars() {
            let k = class(c);
            let extend = current_class == Some(k) && k != Class::Other;
            if !extend && !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            current.push(c);
            current_class = Some(k);
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}
