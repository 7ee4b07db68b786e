//! Decode a raw trace captured on a Zedboard and print both memories.

use coresight_pft::cli::{format_dump, DumpFormat};
use coresight_pft::protocol::{ContextIdSize, DecoderConfig};
use coresight_pft::{decode_stream, EventKind};

const TRACE: &str = "
    00 00 00 00 00 80 08 78 04 01 00 21 f4 ee 03 00
    8b 03 08 8c 04 01 00 21 f4 ee 03 00 9d 03 08 98
    04 01 00 21 ff ff ff ff 9d 03 08 a8 04 01 00 21
    dd dd dd dd 85 03 08 b4 04 01 00 21 dd dd dd dd
    9d 03 08 c4 04 01 00 21 aa aa aa aa 9d 03 08 d4
    04 01 00 21 11 11 11 11 fd bc cf db 0d 01";

fn main() {
    let bytes: Vec<u8> = TRACE
        .split_whitespace()
        .map(|b| u8::from_str_radix(b, 16).unwrap())
        .collect();
    let config = DecoderConfig::with_ctxid_size(ContextIdSize::Four);
    let out = decode_stream(&bytes, &config);

    for ev in &out.events {
        match ev.kind {
            EventKind::AddressUpdate => println!("cycle {:3}: pc      {:08x}", ev.cycle, ev.address.unwrap_or(0)),
            EventKind::InstrumentedData => println!("cycle {:3}: context {:08x}", ev.cycle, ev.value.unwrap_or(0)),
            _ => println!("cycle {:3}: {:?}", ev.cycle, ev.kind),
        }
    }
    println!("\nDECODE TRACE");
    print!("{}", format_dump(out.addresses(), DumpFormat::Listing, false));
    println!("INSTRUMENTED DATA");
    print!("{}", format_dump(out.instrumented(), DumpFormat::Listing, true));
}
