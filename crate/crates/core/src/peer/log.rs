use std::collections::VecDeque;

use crate::wire::{encode_log, LogRecord, WireError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedSegment {
    pub index: u64,
    pub records: Vec<LogRecord>,
}

impl SealedSegment {
    pub fn to_bytes(&self) -> Result<Vec<u8>, WireError> {
        encode_log(&self.records)
    }
}

/// Append-only event log split into sealed segments with consecutive indices.
///
/// A segment never holds a timestamp smaller than one before it: a backwards
/// clock step seals the active segment first.
#[derive(Debug, Clone)]
pub struct RotatingLog {
    active: Vec<LogRecord>,
    next_index: u64,
    opened_at: u64,
    sealed: VecDeque<SealedSegment>,
}

impl RotatingLog {
    pub fn new(opened_at: u64) -> Self {
        RotatingLog { active: Vec::new(), next_index: 0, opened_at, sealed: VecDeque::new() }
    }

    pub fn active(&self) -> &[LogRecord] {
        &self.active
    }

    pub fn opened_at(&self) -> u64 {
        self.opened_at
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    /// Makes the next seal use at least `index`.
    pub fn skip_to(&mut self, index: u64) {
        self.next_index = self.next_index.max(index);
    }

    pub fn sealed(&self) -> impl Iterator<Item = &SealedSegment> {
        self.sealed.iter()
    }

    pub fn append(&mut self, rec: LogRecord) {
        if let Some(last) = self.active.last() {
            if rec.timestamp_ms < last.timestamp_ms {
                self.seal(rec.timestamp_ms);
            }
        }
        self.active.push(rec);
    }

    pub fn seal(&mut self, now: u64) -> u64 {
        let index = self.next_index;
        self.next_index += 1;
        let records = std::mem::take(&mut self.active);
        self.sealed.push_back(SealedSegment { index, records });
        self.opened_at = now;
        index
    }

    pub fn pop_sealed(&mut self) -> Option<SealedSegment> {
        self.sealed.pop_front()
    }
}
