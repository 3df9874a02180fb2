//! Multi-banked L1 with per-bank round-robin arbitration.
//!
//! Addresses are word-interleaved (4-byte words). Each bank grants at most
//! one word per cycle. Requesters occupy fixed slots (IMA, DMA channels,
//! remote-write port) and each bank remembers the slot it served last.

use crate::config::L1_WORD_BYTES;

const WORD: u64 = L1_WORD_BYTES as u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequesterClass {
    Ima,
    Dma,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct L1Stats {
    pub ima_conflicts: u64,
    pub dma_conflicts: u64,
    pub granted_words: u64,
}

impl L1Stats {
    pub fn conflicts(&self) -> u64 {
        self.ima_conflicts + self.dma_conflicts
    }
}

#[derive(Debug, Clone)]
pub struct L1Banks {
    banks: u32,
    last_slot: Vec<Option<usize>>,
    pub stats: L1Stats,
}

impl L1Banks {
    pub fn new(banks: u32) -> Self {
        assert!(banks.is_power_of_two() && banks <= 64);
        Self {
            banks,
            last_slot: vec![None; banks as usize],
            stats: L1Stats::default(),
        }
    }

    pub fn banks(&self) -> u32 {
        self.banks
    }

    pub fn bank_of(&self, addr: u64) -> u32 {
        ((addr / WORD) % u64::from(self.banks)) as u32
    }

    /// One cycle of arbitration. `requests[slot]` is the class of the slot
    /// and the mask of banks it wants; returns the granted mask per slot.
    pub fn arbitrate(&mut self, requests: &[(RequesterClass, u64)]) -> Vec<u64> {
        let n = requests.len();
        let mut granted = vec![0u64; n];
        let mut any = 0u64;
        for &(_, m) in requests {
            any |= m;
        }
        while any != 0 {
            let bank = any.trailing_zeros() as usize;
            any &= any - 1;
            let bit = 1u64 << bank;
            let start = self.last_slot[bank].map_or(0, |s| s + 1);
            let winner = (0..n)
                .map(|k| (start + k) % n)
                .find(|&s| requests[s].1 & bit != 0)
                .expect("some slot asked for this bank");
            granted[winner] |= bit;
            self.stats.granted_words += 1;
            self.last_slot[bank] = Some(winner);
            for (s, &(class, m)) in requests.iter().enumerate() {
                if s != winner && m & bit != 0 {
                    match class {
                        RequesterClass::Ima => self.stats.ima_conflicts += 1,
                        RequesterClass::Dma => self.stats.dma_conflicts += 1,
                    }
                }
            }
        }
        granted
    }
}

/// A contiguous L1 byte range moved word by word, possibly out of order
/// within a sliding window.
#[derive(Debug, Clone)]
pub struct WordStream {
    base: u64,
    total_bytes: u64,
    /// Bytes that may be moved so far (data arrived, or FIFO room).
    avail_bytes: u64,
    /// Words below `cursor` are all done.
    cursor: u64,
    /// Done flags for words `cursor..cursor + 64`.
    done: u64,
    window: u32,
    moved_bytes: u64,
}

impl WordStream {
    /// `window` is the most words requested in one cycle; must not exceed
    /// the bank count so that a window never asks one bank twice.
    pub fn new(base: u64, total_bytes: u64, window: u32) -> Self {
        debug_assert!(base.is_multiple_of(WORD));
        Self {
            base,
            total_bytes,
            avail_bytes: 0,
            cursor: 0,
            done: 0,
            window: window.clamp(1, 64),
            moved_bytes: 0,
        }
    }

    pub fn fully_available(mut self) -> Self {
        self.avail_bytes = self.total_bytes;
        self
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    pub fn moved_bytes(&self) -> u64 {
        self.moved_bytes
    }

    pub fn make_available(&mut self, bytes: u64) {
        self.avail_bytes = (self.avail_bytes + bytes).min(self.total_bytes);
    }

    pub fn set_available(&mut self, bytes: u64) {
        self.avail_bytes = bytes.min(self.total_bytes);
    }

    fn total_words(&self) -> u64 {
        self.total_bytes.div_ceil(WORD)
    }

    fn avail_words(&self) -> u64 {
        if self.avail_bytes >= self.total_bytes {
            self.total_words()
        } else {
            self.avail_bytes / WORD
        }
    }

    pub fn is_complete(&self) -> bool {
        self.cursor >= self.total_words()
    }

    /// Whether there is a word that could be requested this cycle.
    pub fn has_requests(&self) -> bool {
        self.cursor < self.avail_words()
    }

    fn word_bytes(&self, w: u64) -> u64 {
        let start = w * WORD;
        (self.total_bytes - start).min(WORD)
    }

    /// Bank mask this stream asks for this cycle.
    pub fn request_mask(&self, banks: u32) -> u64 {
        let hi = self.avail_words().min(self.cursor + u64::from(self.window));
        let mut mask = 0u64;
        for w in self.cursor..hi {
            if self.done & (1 << (w - self.cursor)) == 0 {
                let bank = ((self.base / WORD + w) % u64::from(banks)) as u32;
                mask |= 1 << bank;
            }
        }
        mask
    }

    /// Applies a grant mask; returns the bytes moved this cycle.
    pub fn apply_grant(&mut self, granted: u64, banks: u32) -> u64 {
        if granted == 0 {
            return 0;
        }
        let hi = self.avail_words().min(self.cursor + u64::from(self.window));
        let mut moved = 0;
        for w in self.cursor..hi {
            let bit = 1u64 << (w - self.cursor);
            let bank = ((self.base / WORD + w) % u64::from(banks)) as u32;
            if self.done & bit == 0 && granted & (1 << bank) != 0 {
                self.done |= bit;
                moved += self.word_bytes(w);
            }
        }
        while self.done & 1 == 1 {
            self.done >>= 1;
            self.cursor += 1;
        }
        self.moved_bytes += moved;
        moved
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lone_stream_moves_window_per_cycle() {
        let mut l1 = L1Banks::new(16);
        let mut s = WordStream::new(0, 256, 16).fully_available();
        let mut cycles = 0;
        while !s.is_complete() {
            let g = l1.arbitrate(&[(RequesterClass::Ima, s.request_mask(16))]);
            s.apply_grant(g[0], 16);
            cycles += 1;
        }
        assert_eq!(cycles, 4);
        assert_eq!(s.moved_bytes(), 256);
        assert_eq!(l1.stats.conflicts(), 0);
    }

    #[test]
    fn partial_last_word() {
        let mut s = WordStream::new(64, 10, 16).fully_available();
        assert_eq!(s.request_mask(16), 0b111);
        assert_eq!(s.apply_grant(u64::MAX, 16), 10);
        assert!(s.is_complete());
    }

    #[test]
    fn unavailable_bytes_are_not_requested() {
        let mut s = WordStream::new(0, 64, 16);
        assert!(!s.has_requests());
        s.make_available(9);
        assert_eq!(s.request_mask(16), 0b11);
        s.apply_grant(0b01, 16);
        assert_eq!(s.request_mask(16), 0b10);
    }

    /// Brute-force oracle: two requesters that want every bank every cycle
    /// under alternating priority. Returns (cycles for the first to finish
    /// `beats` full sweeps, denied requests of that requester).
    fn alternating_oracle(beats: u32, first_wins: bool) -> (u32, u32) {
        let mut done = 0;
        let mut denied = 0;
        let mut cycle = 0;
        let mut ima_turn = first_wins;
        while done < beats {
            if ima_turn {
                done += 1;
            } else {
                denied += 16;
            }
            ima_turn = !ima_turn;
            cycle += 1;
        }
        (cycle, denied)
    }

    #[test]
    fn full_collision_with_dma_burst() {
        let mut l1 = L1Banks::new(16);
        // The DMA slot won every bank last, so the IMA (slot 0) wins first.
        let mut ima = WordStream::new(0, 256, 16).fully_available();
        let mut dma = WordStream::new(4096, 4096, 16).fully_available();
        let mut cycles = 0;
        while !ima.is_complete() {
            let g = l1.arbitrate(&[
                (RequesterClass::Ima, ima.request_mask(16)),
                (RequesterClass::Dma, dma.request_mask(16)),
            ]);
            ima.apply_grant(g[0], 16);
            dma.apply_grant(g[1], 16);
            cycles += 1;
        }
        let (oc, od) = alternating_oracle(4, true);
        assert_eq!(cycles, oc);
        assert_eq!(l1.stats.ima_conflicts, u64::from(od));
        assert!(cycles >= 7);
        assert!(l1.stats.ima_conflicts >= 3 * 16);
    }

    #[test]
    fn dma_first_costs_eight_cycles() {
        let mut ima = WordStream::new(0, 256, 16).fully_available();
        let mut cycles = 0;
        let mut dma2 = WordStream::new(8192, 4096, 16).fully_available();
        let mut l1b = L1Banks::new(16);
        // The IMA slot served every bank last, so the DMA goes first.
        l1b.arbitrate(&[(RequesterClass::Dma, 0), (RequesterClass::Ima, 0xffff)]);
        l1b.stats = L1Stats::default();
        while !ima.is_complete() {
            let g = l1b.arbitrate(&[
                (RequesterClass::Dma, dma2.request_mask(16)),
                (RequesterClass::Ima, ima.request_mask(16)),
            ]);
            dma2.apply_grant(g[0], 16);
            ima.apply_grant(g[1], 16);
            cycles += 1;
        }
        let (oc, od) = alternating_oracle(4, false);
        assert_eq!((cycles, l1b.stats.ima_conflicts), (oc, u64::from(od)));
        assert_eq!(cycles, 8);
        assert!(l1b.stats.ima_conflicts >= 4);
    }

    #[test]
    fn distinct_banks_progress_together() {
        let mut l1 = L1Banks::new(16);
        let g = l1.arbitrate(&[
            (RequesterClass::Dma, 0x00ff),
            (RequesterClass::Dma, 0xff00),
        ]);
        assert_eq!(g, vec![0x00ff, 0xff00]);
        assert_eq!(l1.stats.conflicts(), 0);
    }
}
