//! PFT packet model, header classification and byte layouts.
//!
//! Both the streaming decoder and the PTM model encoder are built on the
//! tables in this module, so a byte produced by one is always classified the
//! same way by the other.
//!
//! Header table (first byte of a packet):
//!
//! | byte            | packet            | payload                       |
//! |-----------------|-------------------|-------------------------------|
//! | `xxxx_xxx1`     | branch address    | header is address byte 0      |
//! | `1xxx_xxx0`     | atom              | none                          |
//! | `0000_0000`     | a-sync            | more zeros, then `0x80`       |
//! | `0x08`          | i-sync            | 4 address, 1 info, context ID |
//! | `0x0c`          | trigger           | none                          |
//! | `0x3c`          | VMID              | 1                             |
//! | `0x42`, `0x46`  | timestamp         | up to 9, continuation bit 7   |
//! | `0x66`          | ignore            | none                          |
//! | `0x6e`          | context ID        | context ID                    |
//! | `0x72`          | waypoint update   | 1 to 5 address bytes          |
//! | `0x76`          | exception return  | none                          |

use std::fmt;

use thiserror::Error;

pub const ASYNC_TERMINATOR: u8 = 0x80;
pub const ISYNC_HEADER: u8 = 0x08;
pub const TRIGGER_HEADER: u8 = 0x0c;
pub const VMID_HEADER: u8 = 0x3c;
pub const TIMESTAMP_HEADER: u8 = 0x42;
/// Timestamp header with the cycle-count bit set. Decoded like `0x42`.
pub const TIMESTAMP_CC_HEADER: u8 = 0x46;
pub const IGNORE_HEADER: u8 = 0x66;
pub const CONTEXT_ID_HEADER: u8 = 0x6e;
pub const WAYPOINT_HEADER: u8 = 0x72;
pub const EXCEPTION_RETURN_HEADER: u8 = 0x76;

/// Minimum number of zero bytes before the `0x80` terminator of an a-sync.
pub const ASYNC_MIN_ZEROS: u32 = 5;
/// Maximum number of address bytes in a compressed branch or waypoint address.
pub const MAX_ADDRESS_BYTES: usize = 5;
/// Maximum number of bytes in a timestamp payload.
pub const MAX_TIMESTAMP_BYTES: usize = 9;
/// Largest exception number carried by an exception information field.
pub const MAX_EXCEPTION_CODE: u16 = 0x1ff;
/// Largest executed-atom count the encoder emits in one atom packet.
pub const MAX_EMIT_E_ATOMS: u8 = 15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("invalid context ID size {0} (expected 0, 1, 2 or 4 bytes)")]
    InvalidContextIdSize(u32),
    #[error("invalid ctxtid generic {0:#04b}")]
    InvalidCtxtidGeneric(u8),
    #[error("trace range start {start:#x} is not below end {end:#x}")]
    UnorderedRange { start: u32, end: u32 },
    #[error("clock frequency must be positive, got {0}")]
    InvalidClock(f64),
    #[error("packet class {0:?} has no payload length")]
    NoPayloadLength(PacketClass),
    #[error("exception code {0} exceeds 9 bits")]
    ExceptionCodeRange(u16),
    #[error("malformed exception information bytes {0:02x?}")]
    MalformedException(Vec<u8>),
    #[error("invalid compressed address length {0}")]
    AddressLength(usize),
    #[error("address bits {bits:#x} do not fit in a {len}-byte compressed address")]
    AddressBits { bits: u32, len: u8 },
}

/// Number of context ID bytes traced per context-bearing packet.
///
/// Mirrors the decoder's two-bit `ctxtid` generic: `00` → 0, `01` → 1,
/// `10` → 2, `11` → 4 bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ContextIdSize {
    None,
    One,
    Two,
    #[default]
    Four,
}

impl ContextIdSize {
    pub const ALL: [ContextIdSize; 4] = [Self::None, Self::One, Self::Two, Self::Four];

    pub fn bytes(self) -> usize {
        match self {
            Self::None => 0,
            Self::One => 1,
            Self::Two => 2,
            Self::Four => 4,
        }
    }

    pub fn from_bytes(bytes: u32) -> Result<Self, ProtocolError> {
        match bytes {
            0 => Ok(Self::None),
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            4 => Ok(Self::Four),
            n => Err(ProtocolError::InvalidContextIdSize(n)),
        }
    }

    pub fn from_generic(bits: u8) -> Result<Self, ProtocolError> {
        match bits {
            0b00 => Ok(Self::None),
            0b01 => Ok(Self::One),
            0b10 => Ok(Self::Two),
            0b11 => Ok(Self::Four),
            b => Err(ProtocolError::InvalidCtxtidGeneric(b)),
        }
    }

    pub fn generic(self) -> u8 {
        match self {
            Self::None => 0b00,
            Self::One => 0b01,
            Self::Two => 0b10,
            Self::Four => 0b11,
        }
    }

    /// Mask of the context ID bits that survive tracing.
    pub fn mask(self) -> u32 {
        match self {
            Self::None => 0,
            Self::One => 0xff,
            Self::Two => 0xffff,
            Self::Four => u32::MAX,
        }
    }
}

/// Half-open code address range `[start, end)` inside which the PTM traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressRange {
    pub start: u32,
    pub end: u32,
}

impl AddressRange {
    pub fn new(start: u32, end: u32) -> Result<Self, ProtocolError> {
        if start >= end {
            return Err(ProtocolError::UnorderedRange { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, address: u32) -> bool {
        self.start <= address && address < self.end
    }
}

impl Default for AddressRange {
    fn default() -> Self {
        Self {
            start: 0,
            end: u32::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub ctxid_size: ContextIdSize,
    pub branch_broadcast: bool,
    pub trace_range: AddressRange,
    /// Decoder clock in MHz. One trace byte is consumed per cycle.
    pub clock_mhz: f64,
}

impl DecoderConfig {
    pub const DEFAULT_CLOCK_MHZ: f64 = 250.0;

    pub fn with_ctxid_size(ctxid_size: ContextIdSize) -> Self {
        Self {
            ctxid_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.trace_range.start >= self.trace_range.end {
            return Err(ProtocolError::UnorderedRange {
                start: self.trace_range.start,
                end: self.trace_range.end,
            });
        }
        if self.clock_mhz.is_nan() || self.clock_mhz <= 0.0 {
            return Err(ProtocolError::InvalidClock(self.clock_mhz));
        }
        Ok(())
    }
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            ctxid_size: ContextIdSize::Four,
            branch_broadcast: true,
            trace_range: AddressRange::default(),
            clock_mhz: Self::DEFAULT_CLOCK_MHZ,
        }
    }
}

/// Packet kind selected by the global FSM from a header byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketClass {
    ASync,
    ISync,
    BranchAddress,
    Atom,
    WaypointUpdate,
    Trigger,
    ContextId,
    Vmid,
    Timestamp,
    ExceptionReturn,
    Ignore,
    Unknown,
}

/// Classifies the first byte of a packet.
///
/// Inside an a-sync run only `0x00` (more zeros) and `0x80` (terminator) are
/// meaningful; every other byte is `Unknown` there.
pub fn classify_header(byte: u8, in_async_run: bool) -> PacketClass {
    if in_async_run {
        return match byte {
            0x00 | ASYNC_TERMINATOR => PacketClass::ASync,
            _ => PacketClass::Unknown,
        };
    }
    if byte & 0x01 == 0x01 {
        return PacketClass::BranchAddress;
    }
    if byte & 0x80 == 0x80 {
        return PacketClass::Atom;
    }
    match byte {
        0x00 => PacketClass::ASync,
        ISYNC_HEADER => PacketClass::ISync,
        TRIGGER_HEADER => PacketClass::Trigger,
        VMID_HEADER => PacketClass::Vmid,
        TIMESTAMP_HEADER | TIMESTAMP_CC_HEADER => PacketClass::Timestamp,
        IGNORE_HEADER => PacketClass::Ignore,
        CONTEXT_ID_HEADER => PacketClass::ContextId,
        WAYPOINT_HEADER => PacketClass::WaypointUpdate,
        EXCEPTION_RETURN_HEADER => PacketClass::ExceptionReturn,
        _ => PacketClass::Unknown,
    }
}

/// Payload length after the header byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthSpec {
    Fixed(usize),
    /// Terminated by a byte with the continuation bit (bit 7) clear.
    Variable,
}

pub fn payload_length(class: PacketClass, config: &DecoderConfig) -> Result<LengthSpec, ProtocolError> {
    let ctx = config.ctxid_size.bytes();
    Ok(match class {
        PacketClass::ISync => LengthSpec::Fixed(4 + 1 + ctx),
        PacketClass::ContextId => LengthSpec::Fixed(ctx),
        PacketClass::Vmid => LengthSpec::Fixed(1),
        PacketClass::Atom
        | PacketClass::Trigger
        | PacketClass::Ignore
        | PacketClass::ExceptionReturn => LengthSpec::Fixed(0),
        PacketClass::ASync
        | PacketClass::BranchAddress
        | PacketClass::WaypointUpdate
        | PacketClass::Timestamp => LengthSpec::Variable,
        PacketClass::Unknown => return Err(ProtocolError::NoPayloadLength(class)),
    })
}

/// Exception information following a branch address.
///
/// Byte 0 carries code bits `[6:0]`, byte 1 carries bits `[8:7]`. Bit 7 of
/// each byte is the continuation flag.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExceptionInfo {
    raw: [u8; 2],
    len: u8,
    code: u16,
}

impl ExceptionInfo {
    /// Shortest encoding of `code`.
    pub fn from_code(code: u16) -> Result<Self, ProtocolError> {
        if code > MAX_EXCEPTION_CODE {
            return Err(ProtocolError::ExceptionCodeRange(code));
        }
        let low = (code & 0x7f) as u8;
        if code < 0x80 {
            Ok(Self {
                raw: [low, 0],
                len: 1,
                code,
            })
        } else {
            Ok(Self {
                raw: [low | 0x80, (code >> 7) as u8],
                len: 2,
                code,
            })
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let malformed = || ProtocolError::MalformedException(bytes.to_vec());
        match *bytes {
            [b0] if b0 & 0x80 == 0 => Ok(Self {
                raw: [b0, 0],
                len: 1,
                code: u16::from(b0),
            }),
            [b0, b1] if b0 & 0x80 != 0 && b1 & 0x80 == 0 => {
                if b1 & !0x03 != 0 {
                    return Err(malformed());
                }
                Ok(Self {
                    raw: [b0, b1],
                    len: 2,
                    code: u16::from(b0 & 0x7f) | u16::from(b1) << 7,
                })
            }
            _ => Err(malformed()),
        }
    }

    pub fn code(&self) -> u16 {
        self.code
    }

    pub fn raw_bytes(&self) -> &[u8] {
        &self.raw[..usize::from(self.len)]
    }
}

impl fmt::Debug for ExceptionInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExceptionInfo")
            .field("code", &self.code)
            .field("raw", &self.raw_bytes())
            .finish()
    }
}

/// Compressed partial address update, as carried by branch and waypoint
/// packets.
///
/// Byte 0 supplies address bits `[6:1]`, bytes 1 to 3 supply 7-bit groups
/// `[13:7]`, `[20:14]`, `[27:21]` and byte 4 supplies `[31:28]`. Bits not
/// supplied are inherited from the previous address; bit 0 is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PartialAddress {
    bits: u32,
    len: u8,
}

impl PartialAddress {
    pub fn new(bits: u32, len: usize) -> Result<Self, ProtocolError> {
        if !(1..=MAX_ADDRESS_BYTES).contains(&len) {
            return Err(ProtocolError::AddressLength(len));
        }
        let len = len as u8;
        if bits & !Self::mask_for(len) != 0 || bits & 1 != 0 {
            return Err(ProtocolError::AddressBits { bits, len });
        }
        Ok(Self { bits, len })
    }

    /// Full-width update that ignores the previous address.
    pub fn full(address: u32) -> Self {
        Self {
            bits: address & !1,
            len: MAX_ADDRESS_BYTES as u8,
        }
    }

    /// Shortest update that turns `prev` into `target`. Without a reference
    /// address the full-width form is used.
    pub fn compress(target: u32, prev: Option<u32>) -> Self {
        let target = target & !1;
        let Some(prev) = prev else {
            return Self::full(target);
        };
        for len in 1..=MAX_ADDRESS_BYTES as u8 {
            let mask = Self::mask_for(len);
            if prev & !mask == target & !mask {
                return Self {
                    bits: target & mask,
                    len,
                };
            }
        }
        unreachable!("the 5-byte mask covers every bit")
    }

    fn mask_for(len: u8) -> u32 {
        match len {
            1 => 0x0000_007f,
            2 => 0x0000_3fff,
            3 => 0x001f_ffff,
            4 => 0x0fff_ffff,
            _ => u32::MAX,
        }
    }

    pub fn mask(&self) -> u32 {
        Self::mask_for(self.len)
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Number of address bytes on the wire.
    pub fn len(&self) -> usize {
        usize::from(self.len)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn apply(&self, prev: u32) -> u32 {
        ((prev & !self.mask()) | self.bits) & !1
    }

    /// Reassembles an update from its wire bytes. Continuation bits are not
    /// checked here; framing is the caller's job.
    pub fn from_wire(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.is_empty() || bytes.len() > MAX_ADDRESS_BYTES {
            return Err(ProtocolError::AddressLength(bytes.len()));
        }
        let mut bits = u32::from((bytes[0] >> 1) & 0x3f) << 1;
        for (i, &b) in bytes.iter().enumerate().skip(1) {
            if i < 4 {
                bits |= u32::from(b & 0x7f) << (7 * i);
            } else {
                bits |= u32::from(b & 0x0f) << 28;
            }
        }
        Ok(Self {
            bits,
            len: bytes.len() as u8,
        })
    }

    /// Wire bytes, with bit 0 of byte 0 set and continuation bits filled in.
    /// `exception` sets bit 6 of byte 4 and is only valid for the 5-byte form.
    pub fn to_wire(&self, exception: bool) -> Vec<u8> {
        let len = self.len();
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let more = if i + 1 < len { 0x80 } else { 0 };
            let b = match i {
                0 => (((self.bits >> 1) & 0x3f) as u8) << 1 | 0x01,
                4 => ((self.bits >> 28) & 0x0f) as u8 | if exception { 0x40 } else { 0 },
                _ => ((self.bits >> (7 * i)) & 0x7f) as u8,
            };
            out.push(b | more);
        }
        out
    }
}

/// One of the eleven PFT packet kinds.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PftPacket {
    ASync {
        zero_count: u32,
    },
    ISync {
        address: u32,
        info_byte: u8,
        context_id: Option<u32>,
    },
    BranchAddress {
        address: PartialAddress,
        exception: Option<ExceptionInfo>,
    },
    Atom {
        e_count: u8,
        n_count: u8,
    },
    WaypointUpdate {
        address: PartialAddress,
    },
    Trigger,
    ContextId {
        value: u32,
    },
    Vmid {
        value: u8,
    },
    Timestamp {
        value: u64,
    },
    ExceptionReturn,
    Ignore,
}

impl PftPacket {
    pub fn class(&self) -> PacketClass {
        match self {
            Self::ASync { .. } => PacketClass::ASync,
            Self::ISync { .. } => PacketClass::ISync,
            Self::BranchAddress { .. } => PacketClass::BranchAddress,
            Self::Atom { .. } => PacketClass::Atom,
            Self::WaypointUpdate { .. } => PacketClass::WaypointUpdate,
            Self::Trigger => PacketClass::Trigger,
            Self::ContextId { .. } => PacketClass::ContextId,
            Self::Vmid { .. } => PacketClass::Vmid,
            Self::Timestamp { .. } => PacketClass::Timestamp,
            Self::ExceptionReturn => PacketClass::ExceptionReturn,
            Self::Ignore => PacketClass::Ignore,
        }
    }

    /// Bytes following the header byte on the wire.
    ///
    /// For branch packets the header doubles as address byte 0, and for an
    /// a-sync the header is the first zero, so the payload is the remaining
    /// zeros plus the terminator.
    pub fn payload_len(&self, config: &DecoderConfig) -> usize {
        match self {
            Self::ASync { zero_count } => *zero_count as usize,
            Self::ISync { .. } => 4 + 1 + config.ctxid_size.bytes(),
            Self::BranchAddress { address, exception } => {
                address.len() - 1 + exception.map_or(0, |e| e.raw_bytes().len())
            }
            Self::WaypointUpdate { address } => address.len(),
            Self::ContextId { .. } => config.ctxid_size.bytes(),
            Self::Vmid { .. } => 1,
            Self::Timestamp { value } => timestamp_len(*value),
            Self::Atom { .. } | Self::Trigger | Self::ExceptionReturn | Self::Ignore => 0,
        }
    }
}

/// Number of 7-bit groups needed for a timestamp value (at least one).
pub fn timestamp_len(value: u64) -> usize {
    let bits = 64 - value.leading_zeros() as usize;
    bits.div_ceil(7).max(1)
}
