//! PTM configuration files.
//!
//! The format is one `key=value` per line using the names of the CoreSight
//! sysfs attributes, plus `ctxid_size`:
//!
//! ```text
//! mode=0x30
//! addr_idx=1
//! addr_acctype=0
//! addr_range=0x106a0,0x10700
//! enable_source=1
//! ctxid_size=4
//! ```
//!
//! Blank lines and `#` comments are ignored. Omitted keys keep their
//! defaults; `ctxid_size` defaults to 4 when the mode enables context ID
//! tracing and to 0 otherwise.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::protocol::{AddressRange, ContextIdSize, DecoderConfig, ProtocolError};

pub const MODE_BRANCH_BROADCAST: u8 = 1 << 4;
pub const MODE_CONTEXT_ID: u8 = 1 << 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("line {line}: bad value for {key}: {message}")]
    Value {
        line: usize,
        key: &'static str,
        message: String,
    },
    #[error("ctxid_size={0} but mode does not enable context ID tracing (bit 5)")]
    ContextIdDisabled(usize),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolConfig {
    pub mode: u8,
    /// Address comparator index. Echoed only.
    pub addr_idx: u32,
    /// Comparator access type. Echoed only.
    pub addr_acctype: u32,
    pub addr_range: AddressRange,
    pub enable_source: bool,
    pub ctxid_size: ContextIdSize,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            mode: MODE_BRANCH_BROADCAST | MODE_CONTEXT_ID,
            addr_idx: 1,
            addr_acctype: 0,
            addr_range: AddressRange::default(),
            enable_source: true,
            ctxid_size: ContextIdSize::Four,
        }
    }
}

impl ToolConfig {
    pub fn branch_broadcast(&self) -> bool {
        self.mode & MODE_BRANCH_BROADCAST != 0
    }

    pub fn context_id_tracing(&self) -> bool {
        self.mode & MODE_CONTEXT_ID != 0
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            ctxid_size: self.ctxid_size,
            branch_broadcast: self.branch_broadcast(),
            trace_range: self.addr_range,
            clock_mhz: DecoderConfig::DEFAULT_CLOCK_MHZ,
        }
    }
}

fn parse_u32(text: &str) -> Result<u32, String> {
    let text = text.trim();
    let parsed = match text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(hex, 16),
        None => text.parse(),
    };
    parsed.map_err(|e| format!("{text:?}: {e}"))
}

pub fn parse_config(text: &str) -> Result<ToolConfig, ConfigError> {
    let mut cfg = ToolConfig::default();
    let mut mode_seen = false;
    let mut ctxid_explicit = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |key: &'static str| move |message: String| ConfigError::Value { line, key, message };
        match key {
            "mode" => {
                let mode = parse_u32(value).map_err(bad("mode"))?;
                cfg.mode = u8::try_from(mode).map_err(|_| bad("mode")(format!("{mode:#x} exceeds 8 bits")))?;
                mode_seen = true;
            }
            "addr_idx" => cfg.addr_idx = parse_u32(value).map_err(bad("addr_idx"))?,
            "addr_acctype" => cfg.addr_acctype = parse_u32(value).map_err(bad("addr_acctype"))?,
            "addr_range" => {
                let parts: Vec<&str> = value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .collect();
                let [start, end] = parts[..] else {
                    return Err(bad("addr_range")("expected two addresses".into()));
                };
                let start = parse_u32(start).map_err(bad("addr_range"))?;
                let end = parse_u32(end).map_err(bad("addr_range"))?;
                cfg.addr_range = AddressRange::new(start, end)?;
            }
            "enable_source" => {
                cfg.enable_source = match parse_u32(value).map_err(bad("enable_source"))? {
                    0 => false,
                    1 => true,
                    n => return Err(bad("enable_source")(format!("{n} is not 0 or 1"))),
                }
            }
            "ctxid_size" => {
                let n = parse_u32(value).map_err(bad("ctxid_size"))?;
                ctxid_explicit = Some(ContextIdSize::from_bytes(n)?);
            }
            other => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: other.to_string(),
                })
            }
        }
    }
    cfg.ctxid_size = match ctxid_explicit {
        Some(size) => size,
        None if mode_seen && !cfg.context_id_tracing() => ContextIdSize::None,
        None => ContextIdSize::Four,
    };
    if !cfg.context_id_tracing() && cfg.ctxid_size.bytes() > 0 {
        return Err(ConfigError::ContextIdDisabled(cfg.ctxid_size.bytes()));
    }
    Ok(cfg)
}

impl FromStr for ToolConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_config(s)
    }
}

impl fmt::Display for ToolConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode={:#x}", self.mode)?;
        writeln!(f, "addr_idx={}", self.addr_idx)?;
        writeln!(f, "addr_acctype={}", self.addr_acctype)?;
        writeln!(f, "addr_range={:#x},{:#x}", self.addr_range.start, self.addr_range.end)?;
        writeln!(f, "enable_source={}", u8::from(self.enable_source))?;
        writeln!(f, "ctxid_size={}", self.ctxid_size.bytes())
    }
}
