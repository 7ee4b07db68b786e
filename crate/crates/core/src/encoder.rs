//! PTM model: turns a program-run script into a PFT byte stream plus the
//! decoder output that stream must produce.
//!
//! Context ID writes are the instrumentation channel. Only the last value
//! written during a syscall reaches the trace, and it is emitted as an i-sync
//! carrying the new context ID at the current program counter.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    ContextIdSize, DecoderConfig, ExceptionInfo, PartialAddress, PftPacket, ProtocolError,
    ASYNC_MIN_ZEROS, ASYNC_TERMINATOR, CONTEXT_ID_HEADER, EXCEPTION_RETURN_HEADER,
    IGNORE_HEADER, ISYNC_HEADER, MAX_EMIT_E_ATOMS, MAX_TIMESTAMP_BYTES, TIMESTAMP_HEADER,
    TRIGGER_HEADER, VMID_HEADER, WAYPOINT_HEADER,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("atom with {e_count} E and {n_count} N outcomes cannot be emitted")]
    AtomRange { e_count: u8, n_count: u8 },
    #[error("a-sync needs at least {ASYNC_MIN_ZEROS} zeros, got {0}")]
    AsyncTooShort(u32),
    #[error("address {0:#010x} has bit 0 set")]
    UnalignedAddress(u32),
    #[error("context ID {value:?} does not match a {size}-byte context ID configuration")]
    ContextId { value: Option<u32>, size: usize },
    #[error("timestamp {0:#x} needs more than 9 bytes")]
    TimestampRange(u64),
    #[error("exception information requires the 5-byte address form")]
    ShortExceptionBranch,
    #[error("syscall wrote no values")]
    EmptySyscall,
    #[error("script ctxid_size {script} does not match config ctxid_size {config}")]
    ContextSizeMismatch { script: usize, config: usize },
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("script is empty")]
    Empty,
    #[error("script must begin with a trace start")]
    MissingTraceStart,
    #[error("syscall event at position {0} has no values")]
    EmptySyscall(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AtomOutcome {
    Executed,
    NotExecuted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptEvent {
    TraceStart { address: u32 },
    Branch { target: u32, exception: Option<u16> },
    AtomRun { pattern: Vec<AtomOutcome> },
    SyscallWrite { values: Vec<u32> },
    AsyncMark,
}

/// Ordered model of a traced program run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventScript {
    events: Vec<ScriptEvent>,
    /// Context ID size the script was written for, checked against the
    /// encoder configuration when present.
    pub ctxid_size: Option<ContextIdSize>,
}

impl EventScript {
    pub fn new(events: Vec<ScriptEvent>) -> Result<Self, ScriptError> {
        match events.first() {
            None => return Err(ScriptError::Empty),
            Some(ScriptEvent::TraceStart { .. }) => {}
            Some(_) => return Err(ScriptError::MissingTraceStart),
        }
        for (i, ev) in events.iter().enumerate() {
            if let ScriptEvent::SyscallWrite { values } = ev {
                if values.is_empty() {
                    return Err(ScriptError::EmptySyscall(i));
                }
            }
        }
        Ok(Self {
            events,
            ctxid_size: None,
        })
    }

    pub fn events(&self) -> &[ScriptEvent] {
        &self.events
    }
}

fn parse_hex32(tok: &str) -> Result<u32, String> {
    let digits = tok
        .strip_prefix("0x")
        .or_else(|| tok.strip_prefix("0X"))
        .unwrap_or(tok);
    u32::from_str_radix(digits, 16).map_err(|e| format!("bad hex value {tok:?}: {e}"))
}

impl FromStr for EventScript {
    type Err = ScriptError;

    /// Line-based format, `#` starts a comment:
    ///
    /// ```text
    /// start <hexaddr>
    /// branch <hexaddr> [exc <dec>]
    /// atoms <E/N string>
    /// syscall <hex32> [<hex32> ...]
    /// async
    /// ```
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut events = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| ScriptError::Parse { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut toks = content.split_whitespace();
            let keyword = toks.next().expect("non-empty line");
            let args: Vec<&str> = toks.collect();
            let event = match (keyword, args.as_slice()) {
                ("start", [addr]) => ScriptEvent::TraceStart {
                    address: parse_hex32(addr).map_err(err)?,
                },
                ("branch", [addr]) => ScriptEvent::Branch {
                    target: parse_hex32(addr).map_err(err)?,
                    exception: None,
                },
                ("branch", [addr, "exc", code]) => ScriptEvent::Branch {
                    target: parse_hex32(addr).map_err(err)?,
                    exception: Some(
                        code.parse()
                            .map_err(|e| err(format!("bad exception number {code:?}: {e}")))?,
                    ),
                },
                ("atoms", [pattern]) => ScriptEvent::AtomRun {
                    pattern: pattern
                        .chars()
                        .map(|c| match c {
                            'E' | 'e' => Ok(AtomOutcome::Executed),
                            'N' | 'n' => Ok(AtomOutcome::NotExecuted),
                            other => Err(err(format!("bad atom outcome {other:?}"))),
                        })
                        .collect::<Result<_, _>>()?,
                },
                ("syscall", values) if !values.is_empty() => ScriptEvent::SyscallWrite {
                    values: values
                        .iter()
                        .map(|v| parse_hex32(v))
                        .collect::<Result<_, _>>()
                        .map_err(err)?,
                },
                ("async", []) => ScriptEvent::AsyncMark,
                _ => return Err(err(format!("unrecognised line {content:?}"))),
            };
            events.push(event);
        }
        EventScript::new(events)
    }
}

impl fmt::Display for EventScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for ev in &self.events {
            match ev {
                ScriptEvent::TraceStart { address } => writeln!(f, "start {address:x}")?,
                ScriptEvent::Branch {
                    target,
                    exception: None,
                } => writeln!(f, "branch {target:x}")?,
                ScriptEvent::Branch {
                    target,
                    exception: Some(code),
                } => writeln!(f, "branch {target:x} exc {code}")?,
                ScriptEvent::AtomRun { pattern } => {
                    let s: String = pattern
                        .iter()
                        .map(|o| match o {
                            AtomOutcome::Executed => 'E',
                            AtomOutcome::NotExecuted => 'N',
                        })
                        .collect();
                    writeln!(f, "atoms {s}")?
                }
                ScriptEvent::SyscallWrite { values } => {
                    f.write_str("syscall")?;
                    for v in values {
                        write!(f, " {v:08x}")?;
                    }
                    writeln!(f)?
                }
                ScriptEvent::AsyncMark => writeln!(f, "async")?,
            }
        }
        Ok(())
    }
}

/// Address and instrumented-value sequences a correct decoder must produce.
#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedOutput {
    pub addresses: Vec<u32>,
    pub instrumented: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderOptions {
    /// Insert an a-sync once this many bytes have been emitted since the
    /// last one. `None` disables periodic a-syncs.
    pub async_interval: Option<usize>,
    /// Information byte carried by every i-sync.
    pub isync_info: u8,
}

impl EncoderOptions {
    pub const DEFAULT_ASYNC_INTERVAL: usize = 1024;
    pub const DEFAULT_ISYNC_INFO: u8 = 0x21;
}

impl Default for EncoderOptions {
    fn default() -> Self {
        Self {
            async_interval: Some(Self::DEFAULT_ASYNC_INTERVAL),
            isync_info: Self::DEFAULT_ISYNC_INFO,
        }
    }
}

/// A packet placed in the output stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmittedPacket {
    pub offset: usize,
    pub len: usize,
    pub packet: PftPacket,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedTrace {
    pub bytes: Vec<u8>,
    pub expected: ExpectedOutput,
    pub packets: Vec<EmittedPacket>,
}

pub fn encode_packet(packet: &PftPacket, config: &DecoderConfig) -> Result<Vec<u8>, EncodeError> {
    let ctx_bytes = config.ctxid_size.bytes();
    let check_ctx = |value: Option<u32>| -> Result<(), EncodeError> {
        let ok = match value {
            None => ctx_bytes == 0,
            Some(v) => ctx_bytes > 0 && v & !config.ctxid_size.mask() == 0,
        };
        if ok {
            Ok(())
        } else {
            Err(EncodeError::ContextId {
                value,
                size: ctx_bytes,
            })
        }
    };
    let mut out = Vec::new();
    match packet {
        PftPacket::ASync { zero_count } => {
            if *zero_count < ASYNC_MIN_ZEROS {
                return Err(EncodeError::AsyncTooShort(*zero_count));
            }
            out.resize(*zero_count as usize, 0);
            out.push(ASYNC_TERMINATOR);
        }
        PftPacket::ISync {
            address,
            info_byte,
            context_id,
        } => {
            if address & 1 != 0 {
                return Err(EncodeError::UnalignedAddress(*address));
            }
            check_ctx(*context_id)?;
            out.push(ISYNC_HEADER);
            out.extend(address.to_le_bytes());
            out.push(*info_byte);
            if let Some(ctx) = context_id {
                out.extend(&ctx.to_le_bytes()[..ctx_bytes]);
            }
        }
        PftPacket::BranchAddress { address, exception } => {
            if exception.is_some() && address.len() != 5 {
                return Err(EncodeError::ShortExceptionBranch);
            }
            out.extend(address.to_wire(exception.is_some()));
            if let Some(exc) = exception {
                out.extend(exc.raw_bytes());
            }
        }
        PftPacket::Atom { e_count, n_count } => {
            let (e, n) = (*e_count, *n_count);
            if e > MAX_EMIT_E_ATOMS || n > 1 || (e == 0 && n == 0) {
                return Err(EncodeError::AtomRange {
                    e_count: e,
                    n_count: n,
                });
            }
            out.push(0x80 | e << 2 | n << 1);
        }
        PftPacket::WaypointUpdate { address } => {
            out.push(WAYPOINT_HEADER);
            out.extend(address.to_wire(false));
        }
        PftPacket::Trigger => out.push(TRIGGER_HEADER),
        PftPacket::ContextId { value } => {
            if value & !config.ctxid_size.mask() != 0 {
                return Err(EncodeError::ContextId {
                    value: Some(*value),
                    size: ctx_bytes,
                });
            }
            out.push(CONTEXT_ID_HEADER);
            out.extend(&value.to_le_bytes()[..ctx_bytes]);
        }
        PftPacket::Vmid { value } => out.extend([VMID_HEADER, *value]),
        PftPacket::Timestamp { value } => {
            if *value >> (7 * MAX_TIMESTAMP_BYTES) != 0 {
                return Err(EncodeError::TimestampRange(*value));
            }
            out.push(TIMESTAMP_HEADER);
            let mut rest = *value;
            loop {
                let group = (rest & 0x7f) as u8;
                rest >>= 7;
                if rest == 0 {
                    out.push(group);
                    break;
                }
                out.push(group | 0x80);
            }
        }
        PftPacket::ExceptionReturn => out.push(EXCEPTION_RETURN_HEADER),
        PftPacket::Ignore => out.push(IGNORE_HEADER),
    }
    Ok(out)
}

/// Value a syscall leaves in the context ID register: the last one written.
pub fn coalesce_syscall_values(values: &[u32]) -> Result<u32, EncodeError> {
    values.last().copied().ok_or(EncodeError::EmptySyscall)
}

/// Splits E/N outcomes into atom packets: up to 15 E followed by at most one N.
pub fn pack_atoms(pattern: &[AtomOutcome]) -> Vec<PftPacket> {
    let mut packets = Vec::new();
    let mut e_count = 0u8;
    for outcome in pattern {
        match outcome {
            AtomOutcome::Executed => {
                if e_count == MAX_EMIT_E_ATOMS {
                    packets.push(PftPacket::Atom { e_count, n_count: 0 });
                    e_count = 0;
                }
                e_count += 1;
            }
            AtomOutcome::NotExecuted => {
                packets.push(PftPacket::Atom { e_count, n_count: 1 });
                e_count = 0;
            }
        }
    }
    if e_count > 0 {
        packets.push(PftPacket::Atom { e_count, n_count: 0 });
    }
    packets
}

struct Ptm<'a> {
    config: &'a DecoderConfig,
    options: &'a EncoderOptions,
    trace: EncodedTrace,
    since_sync: usize,
    /// Compression reference; cleared by a-sync, set by i-sync and branches.
    reference: Option<u32>,
    pc: u32,
    tracing: bool,
    context: u32,
}

impl Ptm<'_> {
    fn push(&mut self, packet: PftPacket) -> Result<(), EncodeError> {
        let bytes = encode_packet(&packet, self.config)?;
        self.trace.packets.push(EmittedPacket {
            offset: self.trace.bytes.len(),
            len: bytes.len(),
            packet,
        });
        self.since_sync += bytes.len();
        self.trace.bytes.extend(bytes);
        Ok(())
    }

    fn async_packet(&mut self) -> Result<(), EncodeError> {
        self.push(PftPacket::ASync {
            zero_count: ASYNC_MIN_ZEROS,
        })?;
        self.since_sync = 0;
        self.reference = None;
        Ok(())
    }

    fn periodic_sync(&mut self) -> Result<(), EncodeError> {
        if let Some(interval) = self.options.async_interval {
            if self.since_sync >= interval {
                self.async_packet()?;
            }
        }
        Ok(())
    }

    fn traced_context(&self) -> Option<u32> {
        (self.config.ctxid_size.bytes() > 0).then(|| self.context & self.config.ctxid_size.mask())
    }

    fn isync(&mut self, address: u32) -> Result<(), EncodeError> {
        self.periodic_sync()?;
        let context_id = self.traced_context();
        self.push(PftPacket::ISync {
            address,
            info_byte: self.options.isync_info,
            context_id,
        })?;
        self.reference = Some(address);
        self.trace.expected.addresses.push(address);
        if let Some(ctx) = context_id.filter(|&c| c != 0) {
            self.trace.expected.instrumented.push(ctx);
        }
        Ok(())
    }

    fn branch(&mut self, target: u32, exception: Option<u16>) -> Result<(), EncodeError> {
        self.periodic_sync()?;
        let packet = match exception {
            Some(code) => PftPacket::BranchAddress {
                address: PartialAddress::full(target),
                exception: Some(ExceptionInfo::from_code(code)?),
            },
            None => PftPacket::BranchAddress {
                address: PartialAddress::compress(target, self.reference),
                exception: None,
            },
        };
        self.push(packet)?;
        self.reference = Some(target);
        self.trace.expected.addresses.push(target);
        Ok(())
    }

    fn run(&mut self, event: &ScriptEvent) -> Result<(), EncodeError> {
        match event {
            ScriptEvent::TraceStart { address } => {
                check_aligned(*address)?;
                self.pc = *address;
                self.tracing = self.config.trace_range.contains(*address);
                if self.tracing {
                    self.isync(*address)?;
                }
            }
            ScriptEvent::Branch { target, exception } => {
                check_aligned(*target)?;
                if let Some(code) = exception {
                    ExceptionInfo::from_code(*code)?;
                }
                self.pc = *target;
                let in_range = self.config.trace_range.contains(*target);
                match (self.tracing, in_range) {
                    (true, true) => self.branch(*target, *exception)?,
                    (false, true) => self.isync(*target)?,
                    _ => {}
                }
                self.tracing = in_range;
            }
            ScriptEvent::AtomRun { pattern } => {
                if self.tracing {
                    for packet in pack_atoms(pattern) {
                        self.periodic_sync()?;
                        self.push(packet)?;
                    }
                }
            }
            ScriptEvent::SyscallWrite { values } => {
                self.context = coalesce_syscall_values(values)?;
                if self.tracing && self.config.ctxid_size.bytes() > 0 {
                    self.isync(self.pc)?;
                }
            }
            ScriptEvent::AsyncMark => self.async_packet()?,
        }
        Ok(())
    }
}

fn check_aligned(address: u32) -> Result<(), EncodeError> {
    if address & 1 != 0 {
        Err(EncodeError::UnalignedAddress(address))
    } else {
        Ok(())
    }
}

/// Encodes a script with default options.
pub fn encode_script(
    script: &EventScript,
    config: &DecoderConfig,
) -> Result<(Vec<u8>, ExpectedOutput), EncodeError> {
    let trace = encode_script_with(script, config, &EncoderOptions::default())?;
    Ok((trace.bytes, trace.expected))
}

pub fn encode_script_with(
    script: &EventScript,
    config: &DecoderConfig,
    options: &EncoderOptions,
) -> Result<EncodedTrace, EncodeError> {
    if let Some(size) = script.ctxid_size {
        if size != config.ctxid_size {
            return Err(EncodeError::ContextSizeMismatch {
                script: size.bytes(),
                config: config.ctxid_size.bytes(),
            });
        }
    }
    let mut ptm = Ptm {
        config,
        options,
        trace: EncodedTrace {
            bytes: Vec::new(),
            expected: ExpectedOutput::default(),
            packets: Vec::new(),
        },
        since_sync: 0,
        reference: None,
        pc: 0,
        tracing: false,
        context: 0,
    };
    ptm.async_packet()?;
    for event in script.events() {
        ptm.run(event)?;
    }
    Ok(ptm.trace)
}
