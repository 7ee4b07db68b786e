//! Software model of an FPGA-side CoreSight PFT trace pipeline.
//!
//! A PTM writes context ID values into its trace stream whenever the context
//! ID register changes. Instrumented programs abuse that register as a 32-bit
//! data channel: every value written through a small syscall shows up in the
//! trace and can be recovered by a streaming PFT decoder.
//!
//! The crate is split the same way as the hardware pipeline:
//!
//! - [`protocol`]: packet model, header table, byte layouts.
//! - [`decoder`]: byte-per-cycle decoder with decoded-trace and
//!   instrumented-data memories.
//! - [`encoder`]: PTM model producing PFT streams and the expected decoder
//!   output, used as a test oracle.
//! - [`instrument`]: tag/region instrumentation words and a double-free
//!   checker.
//! - [`perfmodel`]: latency, bandwidth and runtime overhead figures.
//! - [`cli`]: configuration files, memory dumps and the `pftrace` commands.

pub mod cli;
pub mod decoder;
pub mod encoder;
pub mod instrument;
pub mod perfmodel;
pub mod protocol;

pub use decoder::{decode_stream, DecodeEvent, DecodeOutput, DecoderState, EventKind, StreamDecoder};
pub use encoder::{encode_packet, encode_script, EventScript, ExpectedOutput};
pub use instrument::{check_double_free, HeapVerdict, InstrumentEvent};
pub use protocol::{ContextIdSize, DecoderConfig, PftPacket};
