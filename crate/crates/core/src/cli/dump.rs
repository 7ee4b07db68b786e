//! Memory dump text formats.

use std::fmt::Write as _;

use clap::ValueEnum;
use thiserror::Error;

const LISTING_WORDS_PER_LINE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum DumpFormat {
    /// One zero-padded lowercase word per line.
    #[default]
    Plain,
    /// Space separated, eight words per line, zero words printed as `00`.
    Listing,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DumpError {
    #[error("token {index} ({token:?}) is not a 32-bit hex word")]
    BadWord { index: usize, token: String },
}

/// Formats a memory. `pad` selects 8-digit words in listing mode; plain mode
/// is always padded.
pub fn format_dump(words: &[u32], format: DumpFormat, pad: bool) -> String {
    let mut out = String::new();
    match format {
        DumpFormat::Plain => {
            for w in words {
                let _ = writeln!(out, "{w:08x}");
            }
        }
        DumpFormat::Listing => {
            for line in words.chunks(LISTING_WORDS_PER_LINE) {
                let tokens: Vec<String> = line
                    .iter()
                    .map(|&w| match (w, pad) {
                        (0, _) => "00".to_string(),
                        (w, true) => format!("{w:08x}"),
                        (w, false) => format!("{w:x}"),
                    })
                    .collect();
                let _ = writeln!(out, "{}", tokens.join(" "));
            }
        }
    }
    out
}

/// Reads an instrumented-data dump: whitespace separated hex words, stopping
/// at the first zero word (unwritten memory).
pub fn parse_dump(text: &str) -> Result<Vec<u32>, DumpError> {
    let mut words = Vec::new();
    for (index, token) in text.split_whitespace().enumerate() {
        let digits = token.strip_prefix("0x").unwrap_or(token);
        let word = if digits.len() <= 8 {
            u32::from_str_radix(digits, 16).ok()
        } else {
            None
        };
        match word {
            Some(0) => break,
            Some(w) => words.push(w),
            None => {
                return Err(DumpError::BadWord {
                    index,
                    token: token.to_string(),
                })
            }
        }
    }
    Ok(words)
}
