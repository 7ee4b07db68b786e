//! Encode a run script, decode the bytes and compare with the encoder's
//! expected output for every context ID size.

use coresight_pft::encoder::{encode_script_with, EncoderOptions};
use coresight_pft::protocol::{ContextIdSize, DecoderConfig};
use coresight_pft::{decode_stream, EventScript};

const SCRIPT: &str = "
start 10478
syscall fff00001
branch 1018a
atoms EEEN
syscall 1234 ffe00001
branch 2000 exc 300
async
branch 10600
atoms EEEEEEEEEEEEEEEEEEN
syscall 0003eef4
";

fn main() {
    let script: EventScript = SCRIPT.parse().unwrap();
    for ctx in ContextIdSize::ALL {
        let config = DecoderConfig::with_ctxid_size(ctx);
        let trace = encode_script_with(&script, &config, &EncoderOptions::default()).unwrap();
        let out = decode_stream(&trace.bytes, &config);
        let ok = out.addresses() == trace.expected.addresses && out.instrumented() == trace.expected.instrumented;
        println!(
            "ctxid_size {}: {:3} bytes, {:2} packets, addresses {:x?}, instrumented {:x?}, match {ok}",
            ctx.bytes(),
            trace.bytes.len(),
            trace.packets.len(),
            out.addresses(),
            out.instrumented(),
        );
    }
    let config = DecoderConfig::default();
    let trace = encode_script_with(&script, &config, &EncoderOptions::default()).unwrap();
    println!("\npackets at ctxid_size 4:");
    for p in &trace.packets {
        let bytes: Vec<String> = trace.bytes[p.offset..p.offset + p.len]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        println!("  {:3}  {:<30} {:?}", p.offset, bytes.join(" "), p.packet);
    }
}
