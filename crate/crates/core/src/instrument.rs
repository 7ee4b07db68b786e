//! Instrumentation words and the heap double-free checker.
//!
//! An instrumentation word is a 12-bit tag in the top bits and a 20-bit
//! region number below it. `0xfff` marks an allocation and `0xffe` a free;
//! other tags are user-defined and ignored by the checker.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub const TAG_ALLOC: u16 = 0xfff;
pub const TAG_FREE: u16 = 0xffe;
pub const MAX_TAG: u16 = 0xfff;
pub const MAX_REGION: u32 = 0xf_ffff;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstrumentError {
    #[error("tag {0:#x} does not fit in 12 bits")]
    TagRange(u16),
    #[error("region {0:#x} does not fit in 20 bits")]
    RegionRange(u32),
}

pub fn encode_event_word(tag: u16, region: u32) -> Result<u32, InstrumentError> {
    if tag > MAX_TAG {
        return Err(InstrumentError::TagRange(tag));
    }
    if region > MAX_REGION {
        return Err(InstrumentError::RegionRange(region));
    }
    Ok(u32::from(tag) << 20 | region)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InstrumentEvent {
    pub tag: u16,
    pub region: u32,
    /// Position in the instrumented-data stream.
    pub index: usize,
}

impl InstrumentEvent {
    pub fn word(&self) -> u32 {
        u32::from(self.tag) << 20 | self.region
    }

    pub fn is_alloc(&self) -> bool {
        self.tag == TAG_ALLOC
    }

    pub fn is_free(&self) -> bool {
        self.tag == TAG_FREE
    }
}

pub fn decode_event_word(word: u32) -> InstrumentEvent {
    decode_event_word_at(word, 0)
}

pub fn decode_event_word_at(word: u32, index: usize) -> InstrumentEvent {
    InstrumentEvent {
        tag: (word >> 20) as u16,
        region: word & MAX_REGION,
        index,
    }
}

/// Decodes an instrumented-data memory into indexed events.
pub fn events_from_words(words: &[u32]) -> Vec<InstrumentEvent> {
    words
        .iter()
        .enumerate()
        .map(|(i, &w)| decode_event_word_at(w, i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationKind {
    /// Free of a region whose allocations have all been freed already.
    DoubleFree,
    /// Free of a region that was never allocated.
    FreeUnallocated,
    /// Allocation of a region that is still live. Reported, but not treated
    /// as a heap violation.
    DoubleAlloc,
}

impl ViolationKind {
    pub fn is_violation(self) -> bool {
        !matches!(self, Self::DoubleAlloc)
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DoubleFree => "DoubleFree",
            Self::FreeUnallocated => "FreeUnallocated",
            Self::DoubleAlloc => "DoubleAlloc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Violation {
    pub kind: ViolationKind,
    pub region: u32,
    pub index: usize,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} region {:#07x} at event {}", self.kind, self.region, self.index)
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct HeapVerdict {
    pub violations: Vec<Violation>,
    /// Allocations minus frees per region after the last event. Positive
    /// means the region is live.
    pub balances: BTreeMap<u32, i64>,
}

impl HeapVerdict {
    /// No double free and no free of an unallocated region.
    pub fn is_clean(&self) -> bool {
        !self.violations.iter().any(|v| v.kind.is_violation())
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn is_allocated(&self, region: u32) -> bool {
        self.balances.get(&region).is_some_and(|&b| b > 0)
    }
}

/// Replays alloc/free events per region.
///
/// A free is legal only while the region has more allocations than frees so
/// far. Failed frees still count, so once a region is over-freed it needs as
/// many new allocations before its next free is legal again.
pub fn check_double_free(events: &[InstrumentEvent]) -> HeapVerdict {
    let mut verdict = HeapVerdict::default();
    let mut ever_allocated: BTreeMap<u32, bool> = BTreeMap::new();
    for ev in events {
        if !(ev.is_alloc() || ev.is_free()) {
            continue;
        }
        let balance = verdict.balances.entry(ev.region).or_insert(0);
        if ev.is_alloc() {
            if *balance > 0 {
                verdict.violations.push(Violation {
                    kind: ViolationKind::DoubleAlloc,
                    region: ev.region,
                    index: ev.index,
                });
            }
            *balance += 1;
            ever_allocated.insert(ev.region, true);
        } else {
            if *balance <= 0 {
                let kind = if ever_allocated.contains_key(&ev.region) {
                    ViolationKind::DoubleFree
                } else {
                    ViolationKind::FreeUnallocated
                };
                verdict.violations.push(Violation {
                    kind,
                    region: ev.region,
                    index: ev.index,
                });
            }
            *balance -= 1;
        }
    }
    verdict
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_examples() {
        assert_eq!(encode_event_word(0xfff, 1), Ok(0xfff0_0001));
        assert_eq!(encode_event_word(0xffe, 1), Ok(0xffe0_0001));
        assert_eq!(encode_event_word(0, 0), Ok(0));
        assert_eq!(encode_event_word(0x1000, 0), Err(InstrumentError::TagRange(0x1000)));
        assert_eq!(
            encode_event_word(1, 0x10_0000),
            Err(InstrumentError::RegionRange(0x10_0000))
        );
        let ev = decode_event_word(0xfff0_0003);
        assert_eq!((ev.tag, ev.region), (0xfff, 3));
        assert!(ev.is_alloc());
        let ev = decode_event_word(0xffe0_0001);
        assert_eq!((ev.tag, ev.region), (0xffe, 1));
        assert!(ev.is_free());
    }

    #[test]
    fn exhaustive_small_regions() {
        for tag in [TAG_ALLOC, TAG_FREE] {
            for region in 0..16 {
                let w = encode_event_word(tag, region).unwrap();
                let ev = decode_event_word(w);
                assert_eq!((ev.tag, ev.region, ev.word()), (tag, region, w));
            }
        }
    }

    #[test]
    fn captured_double_free() {
        let words = [0xfff0_0001, 0xfff0_0002, 0xffe0_0001, 0xfff0_0003, 0xffe0_0001];
        let verdict = check_double_free(&events_from_words(&words));
        assert_eq!(
            verdict.violations,
            vec![Violation {
                kind: ViolationKind::DoubleFree,
                region: 1,
                index: 4
            }]
        );
        assert!(!verdict.is_clean());
        assert!(verdict.is_allocated(2));
        assert!(!verdict.is_allocated(1));
        assert_eq!(verdict.violations[0].to_string(), "DoubleFree region 0x00001 at event 4");
    }

    #[test]
    fn matched_pair_is_clean() {
        let verdict = check_double_free(&events_from_words(&[0xfff0_0001, 0xffe0_0001]));
        assert!(verdict.violations.is_empty());
        assert!(check_double_free(&[]).violations.is_empty());
    }

    #[test]
    fn swapped_pair_frees_unallocated() {
        let verdict = check_double_free(&events_from_words(&[0xffe0_0001, 0xfff0_0001]));
        assert_eq!(verdict.count(ViolationKind::FreeUnallocated), 1);
    }

    #[test]
    fn double_alloc_is_not_a_violation() {
        let verdict = check_double_free(&events_from_words(&[
            0xfff0_0007,
            0xfff0_0007,
            0xffe0_0007,
            0xffe0_0007,
        ]));
        assert_eq!(verdict.count(ViolationKind::DoubleAlloc), 1);
        assert!(verdict.is_clean());
    }

    #[test]
    fn other_tags_are_ignored() {
        let verdict = check_double_free(&events_from_words(&[0x1234_abcd, 0x0003_eef4]));
        assert!(verdict.violations.is_empty());
        assert!(verdict.balances.is_empty());
    }
}
