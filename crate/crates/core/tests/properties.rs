mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use coresight_pft::decoder::{decode_branch_address, decode_stream, DecoderState, StreamDecoder};
use coresight_pft::encoder::{encode_packet, encode_script_with, EncoderOptions};
use coresight_pft::instrument::{
    check_double_free, decode_event_word, encode_event_word, events_from_words, ViolationKind,
    TAG_ALLOC, TAG_FREE,
};
use coresight_pft::perfmodel::packet_latency_cycles;
use coresight_pft::protocol::{
    classify_header, ContextIdSize, DecoderConfig, ExceptionInfo, PartialAddress, PftPacket,
};

use common::*;

fn ctx_strategy() -> impl Strategy<Value = ContextIdSize> {
    prop::sample::select(ContextIdSize::ALL.to_vec())
}

fn partial_address() -> impl Strategy<Value = PartialAddress> {
    (1usize..=5, any::<u32>()).prop_map(|(len, bits)| {
        let mask = PartialAddress::full(0xffff_fffe).mask();
        let mask = match len {
            1 => 0x7f,
            2 => 0x3fff,
            3 => 0x1f_ffff,
            4 => 0x0fff_ffff,
            _ => mask,
        };
        PartialAddress::new(bits & mask & !1, len).unwrap()
    })
}

fn packet_strategy(ctx: ContextIdSize) -> BoxedStrategy<PftPacket> {
    let ctx_value = any::<u32>().prop_map(move |v| v & ctx.mask());
    let isync_ctx = if ctx.bytes() > 0 {
        ctx_value.clone().prop_map(Some).boxed()
    } else {
        Just(None).boxed()
    };
    prop_oneof![
        (5u32..12).prop_map(|zero_count| PftPacket::ASync { zero_count }),
        (any::<u32>(), any::<u8>(), isync_ctx).prop_map(|(a, info_byte, context_id)| PftPacket::ISync {
            address: a & !1,
            info_byte,
            context_id
        }),
        partial_address().prop_map(|address| PftPacket::BranchAddress {
            address,
            exception: None
        }),
        (any::<u32>(), 0u16..=0x1ff).prop_map(|(a, code)| PftPacket::BranchAddress {
            address: PartialAddress::full(a),
            exception: Some(ExceptionInfo::from_code(code).unwrap())
        }),
        (0u8..=15, 0u8..=1)
            .prop_filter("empty atom", |(e, n)| e + n > 0)
            .prop_map(|(e_count, n_count)| PftPacket::Atom { e_count, n_count }),
        partial_address().prop_map(|address| PftPacket::WaypointUpdate { address }),
        Just(PftPacket::Trigger),
        ctx_value.prop_map(|value| PftPacket::ContextId { value }),
        any::<u8>().prop_map(|value| PftPacket::Vmid { value }),
        (0u64..(1 << 63)).prop_map(|value| PftPacket::Timestamp { value }),
        Just(PftPacket::ExceptionReturn),
        Just(PftPacket::Ignore),
    ]
    .boxed()
}

/// Bit-by-bit reassembly of a compressed address, written independently of
/// the library's mask arithmetic.
fn oracle_branch_address(address_bytes: &[u8], prev: u32) -> u32 {
    let mut out = 0u32;
    for bit in 1..32u32 {
        let (byte, pos) = match bit {
            1..=6 => (0, bit),
            7..=13 => (1, bit - 7),
            14..=20 => (2, bit - 14),
            21..=27 => (3, bit - 21),
            _ => (4, bit - 28),
        };
        let value = if byte < address_bytes.len() {
            (address_bytes[byte] >> pos) & 1
        } else {
            ((prev >> bit) & 1) as u8
        };
        out |= u32::from(value) << bit;
    }
    out
}

#[test]
fn captured_branch_matches_bitwise_oracle_and_reencoding() {
    let prev = 0x0001_0478;
    let (addr, exc) = decode_branch_address(&[0x8b, 0x03], prev).unwrap();
    assert_eq!(addr, oracle_branch_address(&[0x8b, 0x03], prev));
    assert_eq!(addr, 0x0001_018a);
    assert!(exc.is_none());
    // Brute force: among all wire forms of this target, the shortest one that
    // decodes back is exactly the captured pair.
    let shortest = (1..=5)
        .map(|len| {
            let mask = if len == 5 { u32::MAX } else { (1u32 << (7 * len)) - 1 };
            PartialAddress::new(addr & mask, len).unwrap().to_wire(false)
        })
        .find(|wire| decode_branch_address(wire, prev).unwrap().0 == addr)
        .unwrap();
    assert_eq!(shortest, vec![0x8b, 0x03]);
    assert_eq!(PartialAddress::compress(addr, Some(prev)).to_wire(false), shortest);

    // Single zero-bit byte keeps the prefix, clears bits [6:1].
    for prev in [0u32, 0xffff_fffe, 0x1234_5678] {
        assert_eq!(decode_branch_address(&[0x01], prev).unwrap().0, prev & !0x7f);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn packet_round_trip((ctx, packet) in ctx_strategy().prop_flat_map(|c| (Just(c), packet_strategy(c)))) {
        let config = DecoderConfig::with_ctxid_size(ctx);
        let bytes = encode_packet(&packet, &config).unwrap();
        prop_assert_eq!(classify_header(bytes[0], false), packet.class());
        prop_assert_eq!(bytes.len(), packet.payload_len(&config) + 1);
        let mut dec = StreamDecoder::with_state(config.clone(), DecoderState::synchronized());
        dec.feed(&bytes);
        let out = dec.into_output();
        prop_assert_eq!(out.packets.len(), 1);
        prop_assert_eq!(&out.packets[0].packet, &packet);
        prop_assert_eq!(out.packets[0].latency(), u64::from(packet_latency_cycles(&packet, &config)));
    }

    #[test]
    fn branch_decode_matches_oracle(len in 1usize..=5, raw in prop::array::uniform5(any::<u8>()), prev in any::<u32>()) {
        let mut bytes = raw[..len].to_vec();
        bytes[0] |= 1;
        for (i, b) in bytes.iter_mut().enumerate() {
            if i + 1 < len { *b |= 0x80 } else { *b &= 0x7f }
            if i == 4 { *b &= 0x3f }
        }
        let (addr, exc) = decode_branch_address(&bytes, prev).unwrap();
        prop_assert!(exc.is_none());
        prop_assert_eq!(addr, oracle_branch_address(&bytes, prev));
    }

    #[test]
    fn full_width_branch_ignores_prev(target in any::<u32>(), prev in any::<u32>()) {
        let wire = PartialAddress::full(target).to_wire(false);
        prop_assert_eq!(wire.len(), 5);
        prop_assert_eq!(decode_branch_address(&wire, prev).unwrap().0, target & !1);
    }

    #[test]
    fn compression_round_trips(target in any::<u32>(), prev in any::<u32>()) {
        let target = target & !1;
        let wire = PartialAddress::compress(target, Some(prev)).to_wire(false);
        prop_assert_eq!(decode_branch_address(&wire, prev).unwrap().0, target);
    }

    #[test]
    fn streaming_equals_batch(seed in any::<u64>(), splits in prop::collection::vec(any::<prop::sample::Index>(), 0..6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = random_config(&mut rng, ContextIdSize::Four, code_window());
        let script = random_script(&mut rng, code_window());
        let trace = encode_script_with(&script, &config, &EncoderOptions::default()).unwrap();
        let batch = decode_stream(&trace.bytes, &config);
        let mut cuts: Vec<usize> = splits.iter().map(|i| i.index(trace.bytes.len() + 1)).collect();
        cuts.sort_unstable();
        let mut dec = StreamDecoder::new(config.clone());
        let mut at = 0;
        for cut in cuts.into_iter().chain([trace.bytes.len()]) {
            dec.feed(&trace.bytes[at..cut]);
            at = cut;
        }
        prop_assert_eq!(dec.into_output(), batch);
    }

    #[test]
    fn oracle_soundness(seed in any::<u64>(), ctx in ctx_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = random_config(&mut rng, ctx, code_window());
        let script = random_script(&mut rng, code_window());
        let trace = encode_script_with(&script, &config, &EncoderOptions { async_interval: Some(64), ..Default::default() }).unwrap();
        let out = decode_stream(&trace.bytes, &config);
        prop_assert_eq!(out.diagnostics().count(), 0);
        prop_assert_eq!(out.addresses(), trace.expected.addresses.as_slice());
        prop_assert_eq!(out.instrumented(), trace.expected.instrumented.as_slice());
        for p in &trace.packets {
            let bytes = encode_packet(&p.packet, &config).unwrap();
            prop_assert_eq!(classify_header(bytes[0], false), p.packet.class());
        }
    }

    #[test]
    fn suffix_decode_matches_full_decode(seed in any::<u64>(), start in any::<prop::sample::Index>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = random_config(&mut rng, ContextIdSize::Four, code_window());
        let script = random_script(&mut rng, code_window());
        let trace = encode_script_with(&script, &config, &EncoderOptions { async_interval: Some(48), ..Default::default() }).unwrap();
        let k = start.index(trace.bytes.len());
        let full = decode_stream(&trace.bytes, &config);
        let suffix = decode_stream(&trace.bytes[k..], &config);
        let sync = trace.packets.iter().find(|p| p.offset >= k && matches!(p.packet, PftPacket::ASync { .. }));
        match sync {
            None => prop_assert!(suffix.events.iter().all(is_diagnostic)),
            Some(sync) => {
                let sync_end = (sync.offset + sync.len) as u64;
                let expected: Vec<_> = full.events.iter().filter(|e| e.cycle > sync_end).cloned().collect();
                let got: Vec<_> = suffix.events.iter().filter(|e| !is_diagnostic(e)).cloned().collect();
                prop_assert_eq!(shifted(&got, k as i64), expected);
            }
        }
    }

    #[test]
    fn word_round_trip(word in any::<u32>()) {
        let ev = decode_event_word(word);
        prop_assert_eq!(encode_event_word(ev.tag, ev.region).unwrap(), word);
    }

    #[test]
    fn checker_matches_counting_oracle(ops in prop::collection::vec((any::<bool>(), 0u32..4, any::<bool>()), 0..40)) {
        let words: Vec<u32> = ops
            .iter()
            .map(|&(alloc, region, other)| {
                let tag = if other && region == 3 { 0x123 } else if alloc { TAG_ALLOC } else { TAG_FREE };
                encode_event_word(tag, region).unwrap()
            })
            .collect();
        let verdict = check_double_free(&events_from_words(&words));

        let mut allocs: BTreeMap<u32, u32> = BTreeMap::new();
        let mut frees: BTreeMap<u32, u32> = BTreeMap::new();
        let mut expected = BTreeSet::new();
        for (i, &w) in words.iter().enumerate() {
            let (tag, region) = ((w >> 20) as u16, w & 0xfffff);
            if tag == TAG_ALLOC {
                *allocs.entry(region).or_default() += 1;
            } else if tag == TAG_FREE {
                let a = allocs.get(&region).copied().unwrap_or(0);
                let f = frees.entry(region).or_default();
                if a <= *f {
                    expected.insert((region, i));
                }
                *f += 1;
            }
        }
        let got: BTreeSet<_> = verdict
            .violations
            .iter()
            .filter(|v| v.kind.is_violation())
            .map(|v| (v.region, v.index))
            .collect();
        prop_assert_eq!(&got, &expected);
        prop_assert_eq!(verdict.is_clean(), expected.is_empty());
        for v in verdict.violations.iter().filter(|v| v.kind == ViolationKind::DoubleFree) {
            let upto = &words[..=v.index];
            let a = upto.iter().filter(|&&w| w == encode_event_word(TAG_ALLOC, v.region).unwrap()).count();
            let f = upto.iter().filter(|&&w| w == encode_event_word(TAG_FREE, v.region).unwrap()).count();
            prop_assert!(f > a);
        }
    }

    #[test]
    fn swapping_a_matched_pair_breaks_it(regions in prop::collection::vec(0u32..6, 1..30), pick in any::<prop::sample::Index>()) {
        // Each entry becomes an adjacent alloc/free pair: always clean.
        let mut words = Vec::new();
        for &r in &regions {
            words.push(encode_event_word(TAG_ALLOC, r).unwrap());
            words.push(encode_event_word(TAG_FREE, r).unwrap());
        }
        prop_assert!(check_double_free(&events_from_words(&words)).violations.is_empty());
        let i = pick.index(regions.len()) * 2;
        words.swap(i, i + 1);
        let verdict = check_double_free(&events_from_words(&words));
        prop_assert!(!verdict.is_clean());
        prop_assert_eq!(verdict.violations.iter().filter(|v| v.kind.is_violation()).count(), 1);
        let v = verdict.violations.iter().find(|v| v.kind.is_violation()).unwrap();
        prop_assert_eq!((v.region, v.index), (regions[i / 2], i));
    }
}
