//! Streaming PFT decoder.
//!
//! The decoder is organised like the hardware it models: a global FSM looks
//! at one byte per cycle, classifies headers and hands the following bytes to
//! a packet FSM (i-sync, branch address or waypoint; the remaining short
//! packets are handled by the global FSM itself). When the packet FSM signals
//! completion the global FSM dispatches on the next byte.
//!
//! Outputs are registered, so every event produced by a packet whose last
//! byte arrives at cycle `c` is stamped `c + 1`. A packet with `n` payload
//! bytes whose header arrives at cycle `h` therefore reports at `h + n + 1`.
//!
//! A fresh decoder is unsynchronised and discards input until it has seen an
//! a-sync (at least five `0x00` followed by `0x80`). Unknown headers and
//! malformed packets emit a diagnostic and drop the decoder back into that
//! state; the stream is never aborted.

use std::fmt;
use std::io::{self, Read};
use std::sync::mpsc;

use thiserror::Error;

use crate::protocol::{
    classify_header, payload_length, DecoderConfig, ExceptionInfo, LengthSpec, PacketClass,
    PartialAddress, PftPacket, ASYNC_MIN_ZEROS, ASYNC_TERMINATOR, MAX_ADDRESS_BYTES,
    MAX_TIMESTAMP_BYTES,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("i-sync payload must be {expected} bytes, got {actual}")]
    ISyncLength { expected: usize, actual: usize },
    #[error("branch address packet must start with bit 0 set, got {0:#04x}")]
    NotBranchHeader(u8),
    #[error("malformed compressed address {0:02x?}")]
    MalformedAddress(Vec<u8>),
    #[error("malformed exception information {0:02x?}")]
    MalformedException(Vec<u8>),
    #[error("malformed timestamp {0:02x?}")]
    MalformedTimestamp(Vec<u8>),
}

/// Reason attached to a diagnostic event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Diagnostic {
    /// Header byte outside the header table.
    UnknownHeader(u8),
    /// A zero run ended with something other than a valid terminator.
    MalformedAsync { zeros: u32, byte: u8 },
    MalformedBranch,
    MalformedWaypoint,
    MalformedTimestamp,
    /// `0x80` outside an a-sync run: an atom with no outcomes.
    EmptyAtom,
    /// Address with bit 0 set; bit 0 was cleared.
    ThumbAddress(u32),
    /// Synchronisation regained after discarding bytes.
    Resynchronized { discarded: u64 },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownHeader(b) => write!(f, "unknown header {b:#04x}"),
            Self::MalformedAsync { zeros, byte } => {
                write!(f, "malformed a-sync: {zeros} zeros then {byte:#04x}")
            }
            Self::MalformedBranch => f.write_str("malformed branch address packet"),
            Self::MalformedWaypoint => f.write_str("malformed waypoint update packet"),
            Self::MalformedTimestamp => f.write_str("malformed timestamp packet"),
            Self::EmptyAtom => f.write_str("atom header 0x80 outside a-sync run"),
            Self::ThumbAddress(a) => write!(f, "address {a:#010x} has bit 0 set, ignored"),
            Self::Resynchronized { discarded } => {
                write!(f, "resynchronized after discarding {discarded} bytes")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    AddressUpdate,
    InstrumentedData,
    AtomRun { executed: u8, not_executed: u8 },
    /// Exception on a branch (`value` holds the exception number) or an
    /// exception return (`value` is `None`).
    Exception,
    Diagnostic(Diagnostic),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DecodeEvent {
    pub kind: EventKind,
    pub address: Option<u32>,
    pub value: Option<u32>,
    pub cycle: u64,
}

impl DecodeEvent {
    fn address_update(address: u32, cycle: u64) -> Self {
        Self {
            kind: EventKind::AddressUpdate,
            address: Some(address),
            value: None,
            cycle,
        }
    }

    fn instrumented(value: u32, cycle: u64) -> Self {
        Self {
            kind: EventKind::InstrumentedData,
            address: None,
            value: Some(value),
            cycle,
        }
    }

    fn diagnostic(diag: Diagnostic, cycle: u64) -> Self {
        Self {
            kind: EventKind::Diagnostic(diag),
            address: None,
            value: None,
            cycle,
        }
    }

    /// Valid decoded trace is available.
    pub fn trace_en(&self) -> bool {
        self.kind == EventKind::AddressUpdate
    }

    /// Valid instrumented data is available.
    pub fn instrument_en(&self) -> bool {
        self.kind == EventKind::InstrumentedData
    }

    pub fn diagnostic_reason(&self) -> Option<Diagnostic> {
        match self.kind {
            EventKind::Diagnostic(d) => Some(d),
            _ => None,
        }
    }
}

/// State of the global FSM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalState {
    /// Scanning for an a-sync; all other input is discarded.
    Resync,
    /// Idle: the next byte is a header.
    Dispatch,
    /// A packet is being collected.
    InPacket,
}

/// Packet FSM currently enabled by the global FSM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubFsm {
    ISync,
    BranchAddress,
    Waypoint,
    /// Short packets collected by the global FSM itself.
    Global,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Phase {
    Resync {
        zeros: u32,
        discarded: u64,
        after_error: bool,
    },
    Dispatch,
    InPacket(PacketFsm),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PacketFsm {
    ASync { zeros: u32 },
    ISync { payload: Vec<u8>, need: usize },
    /// `bytes` starts with the header, which is address byte 0.
    Branch { bytes: Vec<u8>, exception_bytes: usize },
    Waypoint { bytes: Vec<u8> },
    Fixed { class: PacketClass, payload: Vec<u8>, need: usize },
    Timestamp { payload: Vec<u8> },
}

enum Progress {
    More(PacketFsm),
    Done(PacketFsm),
    Malformed(Diagnostic),
}

impl PacketFsm {
    fn sub_fsm(&self) -> SubFsm {
        match self {
            Self::ISync { .. } => SubFsm::ISync,
            Self::Branch { .. } => SubFsm::BranchAddress,
            Self::Waypoint { .. } => SubFsm::Waypoint,
            _ => SubFsm::Global,
        }
    }

    fn payload_count(&self) -> usize {
        match self {
            Self::ASync { zeros } => *zeros as usize - 1,
            Self::ISync { payload, .. } | Self::Fixed { payload, .. } => payload.len(),
            Self::Branch { bytes, .. } => bytes.len() - 1,
            Self::Waypoint { bytes } => bytes.len(),
            Self::Timestamp { payload } => payload.len(),
        }
    }

    fn push(self, byte: u8) -> Progress {
        match self {
            Self::ASync { zeros } => match (classify_header(byte, true), byte) {
                (PacketClass::ASync, 0x00) => Progress::More(Self::ASync {
                    zeros: zeros.saturating_add(1),
                }),
                (PacketClass::ASync, _) if zeros >= ASYNC_MIN_ZEROS => {
                    Progress::Done(Self::ASync { zeros })
                }
                _ => Progress::Malformed(Diagnostic::MalformedAsync { zeros, byte }),
            },
            Self::ISync { mut payload, need } => {
                payload.push(byte);
                if payload.len() == need {
                    Progress::Done(Self::ISync { payload, need })
                } else {
                    Progress::More(Self::ISync { payload, need })
                }
            }
            Self::Fixed {
                class,
                mut payload,
                need,
            } => {
                payload.push(byte);
                let fsm = Self::Fixed {
                    class,
                    payload,
                    need,
                };
                if fsm.payload_count() == need {
                    Progress::Done(fsm)
                } else {
                    Progress::More(fsm)
                }
            }
            Self::Branch {
                mut bytes,
                mut exception_bytes,
            } => {
                let address_len = bytes.len() - exception_bytes;
                let expecting_exception =
                    address_len == MAX_ADDRESS_BYTES && bytes[MAX_ADDRESS_BYTES - 1] & 0x40 != 0;
                bytes.push(byte);
                if expecting_exception {
                    exception_bytes += 1;
                    if byte & 0x80 == 0 {
                        return Progress::Done(Self::Branch {
                            bytes,
                            exception_bytes,
                        });
                    }
                    if exception_bytes == 2 {
                        return Progress::Malformed(Diagnostic::MalformedBranch);
                    }
                    return Progress::More(Self::Branch {
                        bytes,
                        exception_bytes,
                    });
                }
                let address_len = address_len + 1;
                let fsm = |bytes| Self::Branch {
                    bytes,
                    exception_bytes,
                };
                if address_len == MAX_ADDRESS_BYTES {
                    if byte & 0x80 != 0 {
                        Progress::Malformed(Diagnostic::MalformedBranch)
                    } else if byte & 0x40 != 0 {
                        Progress::More(fsm(bytes))
                    } else {
                        Progress::Done(fsm(bytes))
                    }
                } else if byte & 0x80 == 0 {
                    Progress::Done(fsm(bytes))
                } else {
                    Progress::More(fsm(bytes))
                }
            }
            Self::Waypoint { mut bytes } => {
                bytes.push(byte);
                if bytes.len() == MAX_ADDRESS_BYTES {
                    if byte & 0xc0 != 0 {
                        Progress::Malformed(Diagnostic::MalformedWaypoint)
                    } else {
                        Progress::Done(Self::Waypoint { bytes })
                    }
                } else if byte & 0x80 == 0 {
                    Progress::Done(Self::Waypoint { bytes })
                } else {
                    Progress::More(Self::Waypoint { bytes })
                }
            }
            Self::Timestamp { mut payload } => {
                payload.push(byte);
                if byte & 0x80 == 0 {
                    Progress::Done(Self::Timestamp { payload })
                } else if payload.len() == MAX_TIMESTAMP_BYTES {
                    Progress::Malformed(Diagnostic::MalformedTimestamp)
                } else {
                    Progress::More(Self::Timestamp { payload })
                }
            }
        }
    }
}

/// A packet recognised by the decoder together with the cycles of its first
/// and last byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedPacket {
    pub packet: PftPacket,
    pub header_cycle: u64,
    pub end_cycle: u64,
}

impl DecodedPacket {
    /// Cycles from header to registered output, i.e. payload bytes + 1.
    pub fn latency(&self) -> u64 {
        self.end_cycle + 1 - self.header_cycle
    }
}

/// Result of consuming one byte.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Step {
    pub events: Vec<DecodeEvent>,
    /// Packet completed on this byte, if any.
    pub packet: Option<DecodedPacket>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderState {
    phase: Phase,
    current_address: u32,
    current_context: Option<u32>,
    cycle: u64,
    header_cycle: u64,
}

impl Default for DecoderState {
    fn default() -> Self {
        Self::new()
    }
}

impl DecoderState {
    /// Unsynchronised decoder: input is discarded until the first a-sync.
    pub fn new() -> Self {
        Self {
            phase: Phase::Resync {
                zeros: 0,
                discarded: 0,
                after_error: false,
            },
            current_address: 0,
            current_context: None,
            cycle: 0,
            header_cycle: 0,
        }
    }

    /// Decoder that assumes the stream starts on a packet boundary, as the
    /// hardware does.
    pub fn synchronized() -> Self {
        Self {
            phase: Phase::Dispatch,
            ..Self::new()
        }
    }

    pub fn global_state(&self) -> GlobalState {
        match self.phase {
            Phase::Resync { .. } => GlobalState::Resync,
            Phase::Dispatch => GlobalState::Dispatch,
            Phase::InPacket(_) => GlobalState::InPacket,
        }
    }

    pub fn active_sub_fsm(&self) -> Option<SubFsm> {
        match &self.phase {
            Phase::InPacket(fsm) => Some(fsm.sub_fsm()),
            _ => None,
        }
    }

    /// Payload bytes consumed by the active packet FSM.
    pub fn byte_counter(&self) -> usize {
        match &self.phase {
            Phase::InPacket(fsm) => fsm.payload_count(),
            _ => 0,
        }
    }

    pub fn current_address(&self) -> u32 {
        self.current_address
    }

    pub fn current_context(&self) -> Option<u32> {
        self.current_context
    }

    /// Number of bytes consumed so far.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn step(&mut self, byte: u8, config: &DecoderConfig) -> Step {
        let mut out = Step::default();
        let phase = std::mem::replace(&mut self.phase, Phase::Dispatch);
        self.phase = match phase {
            Phase::Resync {
                zeros,
                discarded,
                after_error,
            } => self.scan_for_async(byte, zeros, discarded, after_error, &mut out),
            Phase::Dispatch => self.dispatch(byte, config, &mut out),
            Phase::InPacket(fsm) => self.advance(fsm, byte, config, &mut out),
        };
        self.cycle += 1;
        out
    }

    fn scan_for_async(
        &mut self,
        byte: u8,
        zeros: u32,
        discarded: u64,
        after_error: bool,
        out: &mut Step,
    ) -> Phase {
        match byte {
            0x00 => Phase::Resync {
                zeros: zeros.saturating_add(1),
                discarded,
                after_error,
            },
            ASYNC_TERMINATOR if zeros >= ASYNC_MIN_ZEROS => {
                if discarded > 0 || after_error {
                    out.events.push(DecodeEvent::diagnostic(
                        Diagnostic::Resynchronized { discarded },
                        self.cycle + 1,
                    ));
                }
                self.current_address = 0;
                out.packet = Some(DecodedPacket {
                    packet: PftPacket::ASync { zero_count: zeros },
                    header_cycle: self.cycle - u64::from(zeros),
                    end_cycle: self.cycle,
                });
                Phase::Dispatch
            }
            _ => Phase::Resync {
                zeros: 0,
                discarded: discarded + u64::from(zeros) + 1,
                after_error,
            },
        }
    }

    fn enter_resync(&mut self, diag: Diagnostic, out: &mut Step) -> Phase {
        out.events
            .push(DecodeEvent::diagnostic(diag, self.cycle + 1));
        Phase::Resync {
            zeros: 0,
            discarded: 0,
            after_error: true,
        }
    }

    fn dispatch(&mut self, byte: u8, config: &DecoderConfig, out: &mut Step) -> Phase {
        self.header_cycle = self.cycle;
        let class = classify_header(byte, false);
        let fsm = match class {
            PacketClass::Unknown => {
                return self.enter_resync(Diagnostic::UnknownHeader(byte), out);
            }
            PacketClass::ASync => PacketFsm::ASync { zeros: 1 },
            PacketClass::BranchAddress => {
                // The header is the first address byte.
                return match (PacketFsm::Branch {
                    bytes: Vec::with_capacity(MAX_ADDRESS_BYTES + 2),
                    exception_bytes: 0,
                })
                .push(byte)
                {
                    Progress::More(fsm) => Phase::InPacket(fsm),
                    Progress::Done(fsm) => self.complete(fsm, byte, config, out),
                    Progress::Malformed(d) => self.enter_resync(d, out),
                };
            }
            PacketClass::WaypointUpdate => PacketFsm::Waypoint {
                bytes: Vec::with_capacity(MAX_ADDRESS_BYTES),
            },
            PacketClass::Timestamp => PacketFsm::Timestamp {
                payload: Vec::with_capacity(MAX_TIMESTAMP_BYTES),
            },
            PacketClass::ISync => {
                let need = 4 + 1 + config.ctxid_size.bytes();
                PacketFsm::ISync {
                    payload: Vec::with_capacity(need),
                    need,
                }
            }
            _ => {
                let need = match payload_length(class, config) {
                    Ok(LengthSpec::Fixed(n)) => n,
                    _ => unreachable!("remaining classes have fixed payloads"),
                };
                PacketFsm::Fixed {
                    class,
                    payload: Vec::with_capacity(need),
                    need,
                }
            }
        };
        if let PacketFsm::Fixed { need: 0, .. } = fsm {
            return self.complete(fsm, byte, config, out);
        }
        Phase::InPacket(fsm)
    }

    fn advance(&mut self, fsm: PacketFsm, byte: u8, config: &DecoderConfig, out: &mut Step) -> Phase {
        match fsm.push(byte) {
            Progress::More(fsm) => Phase::InPacket(fsm),
            Progress::Done(fsm) => self.complete(fsm, byte, config, out),
            Progress::Malformed(d) => self.enter_resync(d, out),
        }
    }

    /// Finishes the active packet on the current cycle. `last` is the byte
    /// that completed it (the header itself for one-byte packets).
    fn complete(&mut self, fsm: PacketFsm, last: u8, config: &DecoderConfig, out: &mut Step) -> Phase {
        let stamp = self.cycle + 1;
        let packet = match fsm {
            PacketFsm::ASync { zeros } => {
                self.current_address = 0;
                PftPacket::ASync { zero_count: zeros }
            }
            PacketFsm::ISync { payload, .. } => {
                let packet = match decode_isync(&payload, config) {
                    Ok(p) => p,
                    Err(_) => unreachable!("i-sync FSM collects exactly the configured length"),
                };
                let raw = u32::from_le_bytes([payload[0], payload[1], payload[2], payload[3]]);
                if raw & 1 != 0 {
                    out.events
                        .push(DecodeEvent::diagnostic(Diagnostic::ThumbAddress(raw), stamp));
                }
                if let PftPacket::ISync {
                    address,
                    context_id,
                    ..
                } = packet
                {
                    self.current_address = address;
                    out.events.push(DecodeEvent::address_update(address, stamp));
                    if let Some(ctx) = context_id {
                        self.current_context = Some(ctx);
                        if ctx != 0 {
                            out.events.push(DecodeEvent::instrumented(ctx, stamp));
                        }
                    }
                }
                packet
            }
            PacketFsm::Branch { bytes, .. } => {
                match decode_branch_address(&bytes, self.current_address) {
                    Ok((address, exception)) => {
                        self.current_address = address;
                        out.events.push(DecodeEvent::address_update(address, stamp));
                        if let Some(exc) = exception {
                            out.events.push(DecodeEvent {
                                kind: EventKind::Exception,
                                address: Some(address),
                                value: Some(u32::from(exc.code())),
                                cycle: stamp,
                            });
                        }
                        let address_len = bytes.len() - exception.map_or(0, |e| e.raw_bytes().len());
                        let partial = PartialAddress::from_wire(&bytes[..address_len])
                            .expect("validated by decode_branch_address");
                        PftPacket::BranchAddress {
                            address: partial,
                            exception,
                        }
                    }
                    Err(_) => return self.enter_resync(Diagnostic::MalformedBranch, out),
                }
            }
            PacketFsm::Waypoint { bytes } => match PartialAddress::from_wire(&bytes) {
                Ok(partial) => {
                    let address = partial.apply(self.current_address);
                    self.current_address = address;
                    out.events.push(DecodeEvent::address_update(address, stamp));
                    PftPacket::WaypointUpdate { address: partial }
                }
                Err(_) => return self.enter_resync(Diagnostic::MalformedWaypoint, out),
            },
            PacketFsm::Timestamp { payload } => match decode_timestamp(&payload) {
                Ok(value) => PftPacket::Timestamp { value },
                Err(_) => return self.enter_resync(Diagnostic::MalformedTimestamp, out),
            },
            PacketFsm::Fixed { class, payload, .. } => match class {
                PacketClass::Atom => {
                    let e_count = (last >> 2) & 0x1f;
                    let n_count = (last >> 1) & 0x01;
                    if e_count == 0 && n_count == 0 {
                        out.events
                            .push(DecodeEvent::diagnostic(Diagnostic::EmptyAtom, stamp));
                    } else {
                        out.events.push(DecodeEvent {
                            kind: EventKind::AtomRun {
                                executed: e_count,
                                not_executed: n_count,
                            },
                            address: None,
                            value: None,
                            cycle: stamp,
                        });
                    }
                    PftPacket::Atom { e_count, n_count }
                }
                PacketClass::ContextId => {
                    let value = le_word(&payload);
                    self.current_context = Some(value);
                    if value != 0 {
                        out.events.push(DecodeEvent::instrumented(value, stamp));
                    }
                    PftPacket::ContextId { value }
                }
                PacketClass::Vmid => PftPacket::Vmid { value: payload[0] },
                PacketClass::Trigger => PftPacket::Trigger,
                PacketClass::Ignore => PftPacket::Ignore,
                PacketClass::ExceptionReturn => {
                    out.events.push(DecodeEvent {
                        kind: EventKind::Exception,
                        address: None,
                        value: None,
                        cycle: stamp,
                    });
                    PftPacket::ExceptionReturn
                }
                other => unreachable!("{other:?} is not collected as a fixed packet"),
            },
        };
        out.packet = Some(DecodedPacket {
            packet,
            header_cycle: self.header_cycle,
            end_cycle: self.cycle,
        });
        Phase::Dispatch
    }
}

fn le_word(bytes: &[u8]) -> u32 {
    bytes
        .iter()
        .enumerate()
        .fold(0u32, |acc, (i, &b)| acc | u32::from(b) << (8 * i))
}

/// Decodes an i-sync payload (everything after the `0x08` header).
pub fn decode_isync(payload: &[u8], config: &DecoderConfig) -> Result<PftPacket, DecodeError> {
    let ctx = config.ctxid_size.bytes();
    let expected = 4 + 1 + ctx;
    if payload.len() != expected {
        return Err(DecodeError::ISyncLength {
            expected,
            actual: payload.len(),
        });
    }
    let address = le_word(&payload[..4]) & !1;
    let context_id = (ctx > 0).then(|| le_word(&payload[5..]));
    Ok(PftPacket::ISync {
        address,
        info_byte: payload[4],
        context_id,
    })
}

/// Decodes a branch address packet (header byte included) relative to the
/// previous address.
pub fn decode_branch_address(
    bytes: &[u8],
    prev_address: u32,
) -> Result<(u32, Option<ExceptionInfo>), DecodeError> {
    let Some(&first) = bytes.first() else {
        return Err(DecodeError::MalformedAddress(Vec::new()));
    };
    if first & 0x01 == 0 {
        return Err(DecodeError::NotBranchHeader(first));
    }
    let malformed = || DecodeError::MalformedAddress(bytes.to_vec());
    let mut address_len = 0;
    for (i, &b) in bytes.iter().enumerate().take(MAX_ADDRESS_BYTES) {
        address_len = i + 1;
        if i == MAX_ADDRESS_BYTES - 1 {
            if b & 0x80 != 0 {
                return Err(malformed());
            }
        } else if b & 0x80 == 0 {
            break;
        }
    }
    if address_len < MAX_ADDRESS_BYTES && bytes[address_len - 1] & 0x80 != 0 {
        // Ran out of bytes with the continuation bit still set.
        return Err(malformed());
    }
    let partial = PartialAddress::from_wire(&bytes[..address_len]).map_err(|_| malformed())?;
    let rest = &bytes[address_len..];
    let has_exception = address_len == MAX_ADDRESS_BYTES && bytes[MAX_ADDRESS_BYTES - 1] & 0x40 != 0;
    let exception = match (has_exception, rest.is_empty()) {
        (false, true) => None,
        (true, false) => Some(
            ExceptionInfo::from_bytes(rest)
                .map_err(|_| DecodeError::MalformedException(rest.to_vec()))?,
        ),
        _ => return Err(malformed()),
    };
    Ok((partial.apply(prev_address), exception))
}

/// Decodes a timestamp payload: 7 value bits per byte, least significant
/// group first, bit 7 set on every byte but the last.
pub fn decode_timestamp(payload: &[u8]) -> Result<u64, DecodeError> {
    let malformed = || DecodeError::MalformedTimestamp(payload.to_vec());
    if payload.is_empty() || payload.len() > MAX_TIMESTAMP_BYTES {
        return Err(malformed());
    }
    let (last, body) = payload.split_last().expect("non-empty");
    if last & 0x80 != 0 || body.iter().any(|b| b & 0x80 == 0) {
        return Err(malformed());
    }
    Ok(payload
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, &b)| acc | u64::from(b & 0x7f) << (7 * i)))
}

/// Decoded trace and instrumented data memories.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct MemoryModel {
    pub decoded_trace: Vec<u32>,
    pub instrumented_data: Vec<u32>,
}

impl MemoryModel {
    pub fn record(&mut self, event: &DecodeEvent) {
        match event.kind {
            EventKind::AddressUpdate => self.decoded_trace.extend(event.address),
            EventKind::InstrumentedData => self.instrumented_data.extend(event.value),
            _ => {}
        }
    }

    pub fn trace_write_pointer(&self) -> usize {
        self.decoded_trace.len()
    }

    pub fn instrument_write_pointer(&self) -> usize {
        self.instrumented_data.len()
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct DecodeOutput {
    pub events: Vec<DecodeEvent>,
    pub memory: MemoryModel,
    pub packets: Vec<DecodedPacket>,
}

impl DecodeOutput {
    pub fn diagnostics(&self) -> impl Iterator<Item = &DecodeEvent> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Diagnostic(_)))
    }

    pub fn addresses(&self) -> &[u32] {
        &self.memory.decoded_trace
    }

    pub fn instrumented(&self) -> &[u32] {
        &self.memory.instrumented_data
    }
}

/// Incremental decoder accepting input in arbitrary chunks.
#[derive(Debug, Clone)]
pub struct StreamDecoder {
    config: DecoderConfig,
    state: DecoderState,
    output: DecodeOutput,
}

impl StreamDecoder {
    pub fn new(config: DecoderConfig) -> Self {
        Self::with_state(config, DecoderState::new())
    }

    pub fn with_state(config: DecoderConfig, state: DecoderState) -> Self {
        Self {
            config,
            state,
            output: DecodeOutput::default(),
        }
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        for &b in bytes {
            let step = self.state.step(b, &self.config);
            for ev in &step.events {
                self.output.memory.record(ev);
            }
            self.output.events.extend(step.events);
            self.output.packets.extend(step.packet);
        }
    }

    pub fn state(&self) -> &DecoderState {
        &self.state
    }

    pub fn output(&self) -> &DecodeOutput {
        &self.output
    }

    pub fn into_output(self) -> DecodeOutput {
        self.output
    }
}

pub fn decode_stream(bytes: &[u8], config: &DecoderConfig) -> DecodeOutput {
    let mut dec = StreamDecoder::new(config.clone());
    dec.feed(bytes);
    dec.into_output()
}

/// Decodes a byte source with reading and decoding on separate threads,
/// connected by a queue of at most `queue_depth` chunks.
pub fn decode_reader<R: Read + Send>(
    mut reader: R,
    config: &DecoderConfig,
    queue_depth: usize,
) -> io::Result<DecodeOutput> {
    const CHUNK: usize = 4096;
    let (tx, rx) = mpsc::sync_channel::<Vec<u8>>(queue_depth.max(1));
    std::thread::scope(|s| {
        let producer = s.spawn(move || -> io::Result<()> {
            loop {
                let mut buf = vec![0u8; CHUNK];
                let n = match reader.read(&mut buf) {
                    Ok(0) => return Ok(()),
                    Ok(n) => n,
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                    Err(e) => return Err(e),
                };
                buf.truncate(n);
                if tx.send(buf).is_err() {
                    return Ok(());
                }
            }
        });
        let mut dec = StreamDecoder::new(config.clone());
        for chunk in rx {
            dec.feed(&chunk);
        }
        producer.join().expect("reader thread panicked")?;
        Ok(dec.into_output())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ContextIdSize;

    fn cfg(ctx: ContextIdSize) -> DecoderConfig {
        DecoderConfig::with_ctxid_size(ctx)
    }

    fn hex(s: &str) -> Vec<u8> {
        s.split_whitespace()
            .map(|t| u8::from_str_radix(t, 16).unwrap())
            .collect()
    }

    #[test]
    fn isync_header_activates_isync_fsm() {
        let mut st = DecoderState::synchronized();
        let step = st.step(0x08, &cfg(ContextIdSize::Four));
        assert!(step.events.is_empty());
        assert_eq!(st.global_state(), GlobalState::InPacket);
        assert_eq!(st.active_sub_fsm(), Some(SubFsm::ISync));
        assert_eq!(st.byte_counter(), 0);
    }

    #[test]
    fn full_isync_reports_address_and_context() {
        let c = cfg(ContextIdSize::Four);
        let mut st = DecoderState::synchronized();
        let mut events = Vec::new();
        for (i, b) in hex("08 8c 04 01 00 21 f4 ee 03 00").into_iter().enumerate() {
            let step = st.step(b, &c);
            if i < 9 {
                assert!(step.events.is_empty());
                assert!(st.byte_counter() <= 9);
            }
            events.extend(step.events);
        }
        assert_eq!(st.global_state(), GlobalState::Dispatch);
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].kind, EventKind::AddressUpdate);
        assert_eq!(events[0].address, Some(0x0001_048c));
        assert!(events[0].trace_en());
        assert_eq!(events[1].value, Some(0x0003_eef4));
        assert!(events[1].instrument_en());
        // header at cycle 0, nine payload bytes, registered output
        assert_eq!(events[0].cycle, 10);
    }

    #[test]
    fn resync_exit_on_async() {
        let c = cfg(ContextIdSize::Four);
        let mut st = DecoderState::synchronized();
        let step = st.step(0x10, &c);
        assert_eq!(
            step.events[0].diagnostic_reason(),
            Some(Diagnostic::UnknownHeader(0x10))
        );
        assert_eq!(st.global_state(), GlobalState::Resync);
        let mut events = Vec::new();
        for b in hex("00 00 00 00 00 80") {
            events.extend(st.step(b, &c).events);
        }
        assert_eq!(st.global_state(), GlobalState::Dispatch);
        assert_eq!(events.len(), 1);
        assert_eq!(
            events[0].diagnostic_reason(),
            Some(Diagnostic::Resynchronized { discarded: 0 })
        );
    }

    #[test]
    fn decode_isync_examples() {
        let c4 = cfg(ContextIdSize::Four);
        assert_eq!(
            decode_isync(&hex("78 04 01 00 21 f4 ee 03 00"), &c4),
            Ok(PftPacket::ISync {
                address: 0x0001_0478,
                info_byte: 0x21,
                context_id: Some(0x0003_eef4)
            })
        );
        assert_eq!(
            decode_isync(&[0; 9], &c4),
            Ok(PftPacket::ISync {
                address: 0,
                info_byte: 0,
                context_id: Some(0)
            })
        );
        assert_eq!(
            decode_isync(&hex("a0 06 01 00 21 7f"), &cfg(ContextIdSize::One)),
            Ok(PftPacket::ISync {
                address: 0x0001_06a0,
                info_byte: 0x21,
                context_id: Some(0x7f)
            })
        );
        assert_eq!(
            decode_isync(&[0; 5], &c4),
            Err(DecodeError::ISyncLength {
                expected: 9,
                actual: 5
            })
        );
        let odd = decode_isync(&hex("79 04 01 00 21"), &cfg(ContextIdSize::None)).unwrap();
        assert!(matches!(odd, PftPacket::ISync { address: 0x0001_0478, context_id: None, .. }));
    }

    #[test]
    fn decode_branch_examples() {
        assert_eq!(decode_branch_address(&[0x8b, 0x03], 0x0001_0478), Ok((0x0001_018a, None)));
        assert_eq!(decode_branch_address(&[0x01], 0xabcd_ef7e), Ok((0xabcd_ef00, None)));
        // six address bytes
        assert!(decode_branch_address(&[0x81, 0x80, 0x80, 0x80, 0x80, 0x00], 0).is_err());
        // continuation never terminates
        assert!(decode_branch_address(&[0x81, 0x80], 0).is_err());
        assert_eq!(
            decode_branch_address(&[0x02], 0),
            Err(DecodeError::NotBranchHeader(0x02))
        );
        let (addr, exc) = decode_branch_address(&[0x81, 0x80, 0x80, 0x80, 0x4f, 0x06], 0).unwrap();
        assert_eq!(addr, 0xf000_0000);
        assert_eq!(exc.unwrap().code(), 6);
        // exception flag without exception bytes
        assert!(decode_branch_address(&[0x81, 0x80, 0x80, 0x80, 0x4f], 0).is_err());
    }

    #[test]
    fn empty_atom_is_a_diagnostic_only() {
        let c = cfg(ContextIdSize::Four);
        let mut st = DecoderState::synchronized();
        let step = st.step(0x80, &c);
        assert_eq!(step.events.len(), 1);
        assert_eq!(step.events[0].diagnostic_reason(), Some(Diagnostic::EmptyAtom));
        assert_eq!(st.global_state(), GlobalState::Dispatch);
        let step = st.step(0x84, &c);
        assert_eq!(
            step.events[0].kind,
            EventKind::AtomRun {
                executed: 1,
                not_executed: 0
            }
        );
    }

    #[test]
    fn zeros_only_stay_quiet() {
        let out = decode_stream(&[0; 64], &cfg(ContextIdSize::Four));
        assert!(out.events.is_empty());
        assert!(decode_stream(&[], &cfg(ContextIdSize::Four)).events.is_empty());
    }

    #[test]
    fn short_async_is_malformed() {
        let c = cfg(ContextIdSize::Four);
        let mut dec = StreamDecoder::with_state(c, DecoderState::synchronized());
        dec.feed(&hex("00 00 00 80 08"));
        let diags: Vec<_> = dec.output().diagnostics().collect();
        assert_eq!(
            diags[0].diagnostic_reason(),
            Some(Diagnostic::MalformedAsync { zeros: 3, byte: 0x80 })
        );
        assert_eq!(dec.state().global_state(), GlobalState::Resync);
    }

    #[test]
    fn garbage_prefix_gives_one_diagnostic() {
        let c = cfg(ContextIdSize::Four);
        let stream = hex("de ad be ef 00 00 00 00 00 80 08 78 04 01 00 21 f4 ee 03 00");
        let out = decode_stream(&stream, &c);
        let diags: Vec<_> = out.diagnostics().collect();
        assert_eq!(diags.len(), 1);
        assert_eq!(
            diags[0].diagnostic_reason(),
            Some(Diagnostic::Resynchronized { discarded: 4 })
        );
        assert_eq!(out.addresses(), &[0x0001_0478]);
        assert_eq!(out.instrumented(), &[0x0003_eef4]);
    }

    #[test]
    fn timestamp_and_waypoint() {
        let c = cfg(ContextIdSize::None);
        let mut dec = StreamDecoder::with_state(c, DecoderState::synchronized());
        dec.feed(&hex("42 ff 01 72 81 80 80 80 01"));
        let out = dec.output();
        assert_eq!(out.packets[0].packet, PftPacket::Timestamp { value: 0xff });
        assert_eq!(out.addresses(), &[0x1000_0000]);
        assert!(decode_timestamp(&[0x80]).is_err());
        assert!(decode_timestamp(&[0x80; 10]).is_err());
    }

    #[test]
    fn thumb_bit_is_flagged() {
        let c = cfg(ContextIdSize::None);
        let mut dec = StreamDecoder::with_state(c, DecoderState::synchronized());
        dec.feed(&hex("08 79 04 01 00 21"));
        let out = dec.output();
        assert_eq!(
            out.diagnostics().next().unwrap().diagnostic_reason(),
            Some(Diagnostic::ThumbAddress(0x0001_0479))
        );
        assert_eq!(out.addresses(), &[0x0001_0478]);
    }

    #[test]
    fn zero_context_is_not_instrumented_data() {
        let c = cfg(ContextIdSize::Four);
        let mut dec = StreamDecoder::with_state(c, DecoderState::synchronized());
        dec.feed(&hex("08 00 10 00 00 21 00 00 00 00 6e 05 00 00 00"));
        assert_eq!(dec.output().instrumented(), &[5]);
        assert_eq!(dec.state().current_context(), Some(5));
    }

    #[test]
    fn pipelined_reader_matches_batch() {
        let c = cfg(ContextIdSize::Four);
        let mut stream = hex("00 00 00 00 00 80");
        for i in 0..3000u32 {
            stream.extend([0x08, 0x00, 0x10, 0x00, 0x00, 0x21]);
            stream.extend((i + 1).to_le_bytes());
            stream.extend([0x8b, 0x03]);
        }
        let batch = decode_stream(&stream, &c);
        let piped = decode_reader(std::io::Cursor::new(stream), &c, 2).unwrap();
        assert_eq!(batch, piped);
        assert_eq!(piped.instrumented().len(), 3000);
    }
}
