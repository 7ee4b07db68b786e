//! Latency, bandwidth and overhead of the instrumentation approaches.

use coresight_pft::perfmodel::{packet_latency_cycles, ComparisonReport, DEFAULT_CPU_MHZ, DEFAULT_X_CYCLES};
use coresight_pft::protocol::{ContextIdSize, DecoderConfig, PartialAddress, PftPacket};

fn main() {
    let config = DecoderConfig::default();
    print!("{}", ComparisonReport::new(&config, DEFAULT_X_CYCLES, DEFAULT_CPU_MHZ));

    println!("\nper-packet decode latency (cycles):");
    let packets = [
        PftPacket::Atom { e_count: 3, n_count: 1 },
        PftPacket::BranchAddress {
            address: PartialAddress::from_wire(&[0x8b, 0x03]).unwrap(),
            exception: None,
        },
        PftPacket::ContextId { value: 0x3eef4 },
        PftPacket::ISync {
            address: 0x10478,
            info_byte: 0x21,
            context_id: Some(0x3eef4),
        },
    ];
    for ctx in [ContextIdSize::One, ContextIdSize::Four] {
        let config = DecoderConfig::with_ctxid_size(ctx);
        for p in &packets {
            let p = match p {
                PftPacket::ContextId { value } => PftPacket::ContextId { value: value & ctx.mask() },
                PftPacket::ISync { address, info_byte, context_id } => PftPacket::ISync {
                    address: *address,
                    info_byte: *info_byte,
                    context_id: context_id.map(|v| v & ctx.mask()),
                },
                other => other.clone(),
            };
            println!("  ctxid_size {}  {:>2}  {:?}", ctx.bytes(), packet_latency_cycles(&p, &config), p.class());
        }
    }
}
