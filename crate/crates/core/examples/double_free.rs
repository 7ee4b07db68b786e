//! Tag heap calls with context-ID writes and catch a double free.

use coresight_pft::encoder::{EventScript, ScriptEvent};
use coresight_pft::instrument::{encode_event_word, events_from_words, TAG_ALLOC, TAG_FREE};
use coresight_pft::protocol::DecoderConfig;
use coresight_pft::{check_double_free, decode_stream, encode_script};

fn syscall(tag: u16, region: u32) -> ScriptEvent {
    ScriptEvent::SyscallWrite {
        values: vec![encode_event_word(tag, region).unwrap()],
    }
}

fn main() {
    // malloc(1) malloc(2) free(1) malloc(3) free(1)
    let script = EventScript::new(vec![
        ScriptEvent::TraceStart { address: 0x10478 },
        syscall(TAG_ALLOC, 1),
        ScriptEvent::Branch { target: 0x1018a, exception: None },
        syscall(TAG_ALLOC, 2),
        syscall(TAG_FREE, 1),
        ScriptEvent::Branch { target: 0x10600, exception: None },
        syscall(TAG_ALLOC, 3),
        syscall(TAG_FREE, 1),
    ])
    .unwrap();

    let config = DecoderConfig::default();
    let (trace, _) = encode_script(&script, &config).unwrap();
    let out = decode_stream(&trace, &config);
    println!("{} trace bytes, instrumented words:", trace.len());
    for w in out.instrumented() {
        println!("  {w:08x}");
    }

    let verdict = check_double_free(&events_from_words(out.instrumented()));
    for v in &verdict.violations {
        println!("{v}");
    }
    println!("clean: {}", verdict.is_clean());
}
