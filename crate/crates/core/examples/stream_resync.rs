//! Feed a trace in arbitrary chunks, starting mid-stream, and watch the
//! decoder resynchronise on the next a-sync.

use coresight_pft::decoder::{decode_reader, GlobalState};
use coresight_pft::encoder::{encode_script_with, EncoderOptions};
use coresight_pft::protocol::DecoderConfig;
use coresight_pft::{decode_stream, EventScript, StreamDecoder};

fn main() {
    let script: EventScript = "
        start 10478
        syscall fff00001
        branch 1018a
        atoms EEN
        syscall fff00002
        branch 10600
        syscall ffe00001
        branch 10478
        syscall ffe00002
    "
    .parse()
    .unwrap();
    let config = DecoderConfig::default();
    let options = EncoderOptions {
        async_interval: Some(24),
        ..EncoderOptions::default()
    };
    let trace = encode_script_with(&script, &config, &options).unwrap();
    let full = decode_stream(&trace.bytes, &config);
    println!("full stream: {} bytes, instrumented {:x?}", trace.bytes.len(), full.instrumented());

    // Start 9 bytes in, as if the capture began mid-packet.
    let mut dec = StreamDecoder::new(config.clone());
    for chunk in trace.bytes[9..].chunks(5) {
        dec.feed(chunk);
        if dec.state().global_state() == GlobalState::Resync {
            println!("  after {:3} bytes: still searching for a-sync", dec.state().cycle());
        }
    }
    let out = dec.into_output();
    for d in out.diagnostics() {
        println!("  cycle {}: {}", d.cycle, d.diagnostic_reason().unwrap());
    }
    println!("from offset 9: instrumented {:x?}", out.instrumented());

    // Same thing through the threaded reader pipeline.
    let piped = decode_reader(&trace.bytes[..], &config, 4).unwrap();
    assert_eq!(piped, full);
    println!("reader pipeline matches batch decode");
}
