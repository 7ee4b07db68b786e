#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use coresight_pft::decoder::{DecodeEvent, EventKind};
use coresight_pft::encoder::{AtomOutcome, EventScript, ScriptEvent};
use coresight_pft::protocol::{AddressRange, ContextIdSize, DecoderConfig};

/// Raw trace captured from the TPIU on a Zedboard, context ID tracing with
/// four bytes. 0x60 bytes; the last two are the start of an a-sync that was
/// cut off by the capture.
pub const CAPTURED_TRACE: &str = "
    00 00 00 00 00 80 08 78 04 01 00 21 f4 ee 03 00
    8b 03 08 8c 04 01 00 21 f4 ee 03 00 9d 03 08 98
    04 01 00 21 ff ff ff ff 9d 03 08 a8 04 01 00 21
    dd dd dd dd 85 03 08 b4 04 01 00 21 dd dd dd dd
    9d 03 08 c4 04 01 00 21 aa aa aa aa 9d 03 08 d4
    04 01 00 21 11 11 11 11 fd bc cf db 0d 01 00 00";

pub fn hex_bytes(s: &str) -> Vec<u8> {
    s.split_whitespace()
        .map(|t| u8::from_str_radix(t, 16).unwrap())
        .collect()
}

pub fn captured_trace() -> Vec<u8> {
    hex_bytes(CAPTURED_TRACE)
}

pub const CAPTURED_INSTRUMENTED: [u32; 7] = [
    0x0003_eef4,
    0x0003_eef4,
    0xffff_ffff,
    0xdddd_dddd,
    0xdddd_dddd,
    0xaaaa_aaaa,
    0x1111_1111,
];

/// Instrumented data memory of the double free run.
pub const DOUBLE_FREE_WORDS: [u32; 5] = [0xfff0_0001, 0xfff0_0002, 0xffe0_0001, 0xfff0_0003, 0xffe0_0001];

fn aligned(rng: &mut impl Rng, lo: u32, hi: u32) -> u32 {
    rng.gen_range(lo..hi) & !1
}

/// Random program run. Addresses cluster in a small code window with
/// occasional far jumps so every compressed address length shows up, and
/// part of the traffic leaves the trace range when one is configured.
pub fn random_script(rng: &mut impl Rng, window: AddressRange) -> EventScript {
    let near = |rng: &mut dyn rand::RngCore, pc: u32| -> u32 {
        let span: u32 = *[0x40u32, 0x2000, 0x10_0000, 0x0800_0000].choose(rng).unwrap();
        let off = rng.gen_range(0..span);
        (if rng.gen_bool(0.5) { pc.wrapping_add(off) } else { pc.wrapping_sub(off) }) & !1
    };
    let start = aligned(rng, window.start, window.end);
    let mut events = vec![ScriptEvent::TraceStart { address: start }];
    let mut pc = start;
    let n = rng.gen_range(0..60);
    for _ in 0..n {
        let ev = match rng.gen_range(0..100) {
            0..=39 => {
                let target = match rng.gen_range(0..10) {
                    0 => rng.gen::<u32>() & !1,
                    1..=6 => aligned(rng, window.start, window.end),
                    _ => near(rng, pc),
                };
                pc = target;
                ScriptEvent::Branch {
                    target,
                    exception: rng.gen_bool(0.1).then(|| rng.gen_range(0..=0x1ff)),
                }
            }
            40..=59 => ScriptEvent::AtomRun {
                pattern: (0..rng.gen_range(1..40))
                    .map(|_| {
                        if rng.gen_bool(0.7) {
                            AtomOutcome::Executed
                        } else {
                            AtomOutcome::NotExecuted
                        }
                    })
                    .collect(),
            },
            60..=89 => ScriptEvent::SyscallWrite {
                values: (0..rng.gen_range(1..4))
                    .map(|_| match rng.gen_range(0..10) {
                        0 => 0,
                        1 => rng.gen_range(0..0x100),
                        _ => rng.gen(),
                    })
                    .collect(),
            },
            90..=94 => ScriptEvent::AsyncMark,
            _ => {
                pc = aligned(rng, window.start, window.end);
                ScriptEvent::TraceStart { address: pc }
            }
        };
        events.push(ev);
    }
    EventScript::new(events).unwrap()
}

/// Config with the given context size and, half the time, a trace range
/// covering only part of the code window.
pub fn random_config(rng: &mut impl Rng, ctx: ContextIdSize, window: AddressRange) -> DecoderConfig {
    let trace_range = if rng.gen_bool(0.5) {
        let mid = window.start + (window.end - window.start) / 2;
        AddressRange::new(window.start, mid).unwrap()
    } else {
        AddressRange::default()
    };
    DecoderConfig {
        ctxid_size: ctx,
        trace_range,
        ..DecoderConfig::default()
    }
}

pub fn code_window() -> AddressRange {
    AddressRange::new(0x0001_0000, 0x0002_0000).unwrap()
}

pub fn is_diagnostic(ev: &DecodeEvent) -> bool {
    matches!(ev.kind, EventKind::Diagnostic(_))
}

pub fn shifted(events: &[DecodeEvent], by: i64) -> Vec<DecodeEvent> {
    events
        .iter()
        .map(|e| DecodeEvent {
            cycle: (e.cycle as i64 + by) as u64,
            ..*e
        })
        .collect()
}
