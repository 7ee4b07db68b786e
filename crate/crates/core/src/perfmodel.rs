//! Latency, bandwidth and runtime overhead of the instrumentation channel.

use std::fmt;

use crate::protocol::{DecoderConfig, PftPacket, MAX_ADDRESS_BYTES, MAX_TIMESTAMP_BYTES};

/// Measured cost of a dedicated instrumentation syscall on the Zynq target.
pub const NEW_SYSCALL_OVERHEAD_US: f64 = 30.0;
/// Measured cost of a write to a memory-mapped instrumentation register.
pub const MEMORY_MAPPED_OVERHEAD_US: f64 = 0.150;
/// Average cycles before instrumented data is valid with a memory-mapped
/// register (AXI handshake delays).
pub const MEMORY_MAPPED_LATENCY_CYCLES: u32 = 30;
pub const DEFAULT_CPU_MHZ: f64 = 667.0;
/// Coprocessor busy-wait cycles when the coprocessor is available.
pub const DEFAULT_X_CYCLES: u32 = 5;
/// `mcr` base cost; the busy-wait cycles come on top.
pub const MCR_CYCLES: u32 = 1;
pub const ISB_CYCLES: u32 = 4;
pub const EMIO_WIDTH_BITS: u32 = 8;
pub const TRACE_PORT_WIDTH_BITS: u32 = 32;
pub const AXI_CLOCK_MHZ: f64 = 200.0;
pub const AXI_WIDTH_BITS: u32 = 32;

/// Decoder cycles from header to registered output: payload bytes + 1.
pub fn packet_latency_cycles(packet: &PftPacket, config: &DecoderConfig) -> u32 {
    packet.payload_len(config) as u32 + 1
}

/// Largest decode latency over packets the encoder can produce under
/// `config` (a-syncs of the minimal length).
pub fn max_packet_latency(config: &DecoderConfig) -> u32 {
    let isync = 4 + 1 + config.ctxid_size.bytes();
    let exception_branch = MAX_ADDRESS_BYTES - 1 + 2;
    let waypoint = MAX_ADDRESS_BYTES;
    let async_packet = 5;
    [
        isync,
        MAX_TIMESTAMP_BYTES,
        exception_branch,
        waypoint,
        config.ctxid_size.bytes(),
        1,
        async_packet,
    ]
    .into_iter()
    .max()
    .unwrap() as u32
        + 1
}

pub fn bandwidth_mbits(clock_mhz: f64, bus_width_bits: u32) -> f64 {
    clock_mhz * f64::from(bus_width_bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverheadMode {
    /// A new syscall that writes the context ID register.
    NewSyscall,
    /// `mcr` + `isb` added to a syscall the program already makes.
    OptimizedExisting,
    /// Store to a memory-mapped instrumentation register.
    MemoryMapped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadParams {
    pub mode: OverheadMode,
    pub x_cycles: u32,
    pub cpu_mhz: f64,
}

impl OverheadParams {
    pub fn new(mode: OverheadMode) -> Self {
        Self {
            mode,
            x_cycles: DEFAULT_X_CYCLES,
            cpu_mhz: DEFAULT_CPU_MHZ,
        }
    }

    /// Cycles spent in `mcr` + `isb`.
    pub fn instruction_cycles(&self) -> u32 {
        MCR_CYCLES + self.x_cycles + ISB_CYCLES
    }
}

pub fn instrumentation_overhead_us(params: &OverheadParams) -> f64 {
    match params.mode {
        OverheadMode::NewSyscall => NEW_SYSCALL_OVERHEAD_US,
        OverheadMode::MemoryMapped => MEMORY_MAPPED_OVERHEAD_US,
        OverheadMode::OptimizedExisting => f64::from(params.instruction_cycles()) / params.cpu_mhz,
    }
}

/// Side-by-side comparison of the two context-ID approaches and a
/// memory-mapped register.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub decoder_clock_mhz: f64,
    pub trace_bandwidth_mbits: f64,
    pub trace_port_bandwidth_mbits: f64,
    pub axi_bandwidth_mbits: f64,
    pub max_latency_cycles: u32,
    pub memory_mapped_latency_cycles: u32,
    pub new_syscall_us: f64,
    pub optimized_us: f64,
    pub optimized_cycles: u32,
    pub memory_mapped_us: f64,
}

impl ComparisonReport {
    pub fn new(config: &DecoderConfig, x_cycles: u32, cpu_mhz: f64) -> Self {
        let params = |mode| OverheadParams {
            mode,
            x_cycles,
            cpu_mhz,
        };
        let optimized = params(OverheadMode::OptimizedExisting);
        Self {
            decoder_clock_mhz: config.clock_mhz,
            trace_bandwidth_mbits: bandwidth_mbits(config.clock_mhz, EMIO_WIDTH_BITS),
            trace_port_bandwidth_mbits: bandwidth_mbits(config.clock_mhz, TRACE_PORT_WIDTH_BITS),
            axi_bandwidth_mbits: bandwidth_mbits(AXI_CLOCK_MHZ, AXI_WIDTH_BITS),
            max_latency_cycles: max_packet_latency(config),
            memory_mapped_latency_cycles: MEMORY_MAPPED_LATENCY_CYCLES,
            new_syscall_us: instrumentation_overhead_us(&params(OverheadMode::NewSyscall)),
            optimized_us: instrumentation_overhead_us(&optimized),
            optimized_cycles: optimized.instruction_cycles(),
            memory_mapped_us: instrumentation_overhead_us(&params(OverheadMode::MemoryMapped)),
        }
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let latency = format!("(n+1) <= {}", self.max_latency_cycles);
        writeln!(
            f,
            "{:<28} {:>16} {:>16} {:>16}",
            "metric", "new syscall", "existing syscall", "memory-mapped"
        )?;
        writeln!(f, "{:<28} {:>16} {:>16} {:>16}", "software modifications", "low", "low", "moderate")?;
        writeln!(
            f,
            "{:<28} {:>16} {:>16} {:>16}",
            "latency (cycles)", latency, latency, self.memory_mapped_latency_cycles
        )?;
        writeln!(
            f,
            "{:<28} {:>16} {:>16} {:>16}",
            "max bandwidth (Mbit/s)",
            self.trace_port_bandwidth_mbits,
            self.trace_port_bandwidth_mbits,
            self.axi_bandwidth_mbits
        )?;
        writeln!(
            f,
            "{:<28} {:>16.3} {:>16.3} {:>16.3}",
            "runtime overhead (us)", self.new_syscall_us, self.optimized_us, self.memory_mapped_us
        )?;
        writeln!(f)?;
        writeln!(
            f,
            "trace bandwidth at {} MHz x {} bit: {} Mbit/s",
            self.decoder_clock_mhz, EMIO_WIDTH_BITS, self.trace_bandwidth_mbits
        )?;
        writeln!(
            f,
            "optimized overhead: {} cycles at cpu clock = {:.5} us",
            self.optimized_cycles, self.optimized_us
        )
    }
}
