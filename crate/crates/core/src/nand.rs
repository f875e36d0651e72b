//! NAND flash model: geometry, physical pages with out-of-band metadata,
//! program/read/erase semantics, and sequential free-space allocation.
//!
//! This layer knows nothing about files or retention policies. It enforces
//! the physical rules (program once per erase cycle, erase whole blocks,
//! legal state transitions) and charges every operation to the simulated
//! clock. Everything above it goes through the flash translation layer.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::{SimDuration, SimTime};

/// Logical page address, the host-visible namespace.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Lpa(pub u32);

/// Physical page address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Ppa(pub u32);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct BlockId(pub u32);

/// Address of one stored version record. Pages in the valid zone hold a
/// single record (slot 0); old-version zone pages pack several compressed
/// records, addressed by slot.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct RecordLoc {
    pub ppa: Ppa,
    pub slot: u16,
}

impl RecordLoc {
    pub fn page(ppa: Ppa) -> Self {
        RecordLoc { ppa, slot: 0 }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Zone {
    Valid,
    Ov,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum PageState {
    Free,
    Valid,
    Invalid,
    OldVersion,
}

/// Per-page policy hint carried from the host on versioned writes.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct PMeta {
    pub policy_id: u32,
    pub file_id: u32,
    /// Page-aligned byte offset within the file.
    pub file_offset: u64,
}

/// Out-of-band record attached to a host-written page.
///
/// `pmeta` is `Some` exactly when the write was versioned; the three hint
/// fields travel together.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct OobRecord {
    pub lpa: Lpa,
    /// Write time.
    pub wt: SimTime,
    /// Back pointer to the previous version of the same logical page.
    pub bp: Option<RecordLoc>,
    pub pmeta: Option<PMeta>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Codec {
    Raw,
    Rle,
}

/// Directory entry for one packed record in an old-version zone page.
///
/// The record payload lives in the page's data area; the directory rides in
/// the page's spare area so packing never costs data capacity.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct OvRecordHeader {
    pub oob: OobRecord,
    /// Time the version was superseded, fixed when it was preserved.
    pub dead_at: SimTime,
    pub payload_offset: u32,
    pub payload_len: u32,
    pub codec: Codec,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum PageOob {
    /// One host write, one record.
    Host(OobRecord),
    /// Packed old-version records.
    OvDirectory(Vec<OvRecordHeader>),
}

/// Expiration bucket: old-version blocks are grouped by the calendar day
/// their contents stop being needed.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct BucketLabel(pub u64);

impl BucketLabel {
    /// First instant after which the bucket's contents are all expired.
    pub fn deadline(self) -> SimTime {
        SimTime::from_dhms(self.0 + 1, 0, 0, 0)
    }
}

/// Write frontiers. Host traffic and garbage-collection copies fill separate
/// valid-zone blocks; each expiration bucket fills its own old-version block.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Frontier {
    Host,
    GcCopy,
    Ov(BucketLabel),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct NandGeometry {
    pub page_size_bytes: u32,
    pub pages_per_block: u32,
    pub blocks_total: u32,
    /// Backup-space size: blocks reserved for preserved old versions.
    pub ov_zone_blocks: u32,
}

impl NandGeometry {
    /// Desk-scale default: 4 KiB pages, 128 pages per block, 2048 blocks,
    /// a quarter of them reserved as backup space.
    pub fn small_default() -> Self {
        NandGeometry {
            page_size_bytes: 4096,
            pages_per_block: 128,
            blocks_total: 2048,
            ov_zone_blocks: 512,
        }
    }

    /// Tiny geometry for brute-force tests.
    pub fn tiny(blocks_total: u32, ov_zone_blocks: u32, pages_per_block: u32) -> Self {
        NandGeometry {
            page_size_bytes: 4096,
            pages_per_block,
            blocks_total,
            ov_zone_blocks,
        }
    }

    pub fn validate(&self) -> Result<(), NandError> {
        let ok = self.page_size_bytes >= 1
            && self.page_size_bytes.is_power_of_two()
            && self.pages_per_block >= 1
            && self.blocks_total >= 1
            && self.ov_zone_blocks >= 1
            && self.ov_zone_blocks < self.blocks_total;
        if ok {
            Ok(())
        } else {
            Err(NandError::BadGeometry)
        }
    }

    pub fn valid_zone_blocks(&self) -> u32 {
        self.blocks_total - self.ov_zone_blocks
    }

    pub fn pages_total(&self) -> u32 {
        self.blocks_total * self.pages_per_block
    }

    pub fn block_of(&self, ppa: Ppa) -> BlockId {
        BlockId(ppa.0 / self.pages_per_block)
    }

    pub fn first_ppa(&self, block: BlockId) -> Ppa {
        Ppa(block.0 * self.pages_per_block)
    }

    pub fn zone_of_block(&self, block: BlockId) -> Zone {
        if block.0 < self.valid_zone_blocks() {
            Zone::Valid
        } else {
            Zone::Ov
        }
    }

    pub fn zone_of(&self, ppa: Ppa) -> Zone {
        self.zone_of_block(self.block_of(ppa))
    }
}

/// Simulated latencies charged per physical operation.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct CostModel {
    pub read: SimDuration,
    pub program: SimDuration,
    pub erase: SimDuration,
}

impl Default for CostModel {
    fn default() -> Self {
        // SLC-class placeholders; they shape reported throughput only.
        CostModel {
            read: SimDuration::from_micros(50),
            program: SimDuration::from_micros(200),
            erase: SimDuration::from_micros(2_000),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NandError {
    #[error("invalid NAND geometry")]
    BadGeometry,
    #[error("program issued to non-free page {0:?}")]
    ProgramOnNonFreePage(Ppa),
    #[error("bad data length {got}, page size is {expected}")]
    BadLength { expected: u32, got: usize },
    #[error("read of free page {0:?}")]
    ReadFreePage(Ppa),
    #[error("no free page available in {0:?} zone")]
    ZoneFull(Zone),
    #[error("illegal state transition {from:?} -> {to:?} at {ppa:?}")]
    IllegalTransition {
        ppa: Ppa,
        from: PageState,
        to: PageState,
    },
    #[error("address {0:?} out of range")]
    OutOfRange(Ppa),
    #[error("clock regression")]
    ClockRegression,
}

struct PageSlot {
    state: PageState,
    data: Option<Box<[u8]>>,
    oob: Option<PageOob>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlockCounts {
    pub free: u32,
    pub valid: u32,
    pub invalid: u32,
    pub old_version: u32,
}

pub struct BlockMeta {
    pub zone: Zone,
    pub erase_count: u32,
    /// Next page offset to program; `pages_per_block` once full.
    pub cursor: u32,
    pub bucket: Option<BucketLabel>,
    pub counts: BlockCounts,
}

/// Raw physical operation counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NandCounters {
    pub programs: u64,
    pub reads: u64,
    pub erases: u64,
}

pub struct NandArray {
    geometry: NandGeometry,
    costs: CostModel,
    pages: Vec<PageSlot>,
    blocks: Vec<BlockMeta>,
    free_valid: VecDeque<BlockId>,
    free_ov: VecDeque<BlockId>,
    host_open: Option<BlockId>,
    gc_open: Option<BlockId>,
    ov_open: BTreeMap<BucketLabel, BlockId>,
    clock: SimTime,
    counters: NandCounters,
}

impl NandArray {
    pub fn new(geometry: NandGeometry, costs: CostModel) -> Result<Self, NandError> {
        geometry.validate()?;
        let pages = (0..geometry.pages_total())
            .map(|_| PageSlot {
                state: PageState::Free,
                data: None,
                oob: None,
            })
            .collect();
        let blocks = (0..geometry.blocks_total)
            .map(|b| BlockMeta {
                zone: geometry.zone_of_block(BlockId(b)),
                erase_count: 0,
                cursor: 0,
                bucket: None,
                counts: BlockCounts {
                    free: geometry.pages_per_block,
                    ..BlockCounts::default()
                },
            })
            .collect();
        let valid_blocks = geometry.valid_zone_blocks();
        Ok(NandArray {
            geometry,
            costs,
            pages,
            blocks,
            free_valid: (0..valid_blocks).map(BlockId).collect(),
            free_ov: (valid_blocks..geometry.blocks_total).map(BlockId).collect(),
            host_open: None,
            gc_open: None,
            ov_open: BTreeMap::new(),
            clock: SimTime::ZERO,
            counters: NandCounters::default(),
        })
    }

    pub fn geometry(&self) -> &NandGeometry {
        &self.geometry
    }

    pub fn costs(&self) -> &CostModel {
        &self.costs
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn counters(&self) -> NandCounters {
        self.counters
    }

    /// Jumps the clock forward. Time never runs backwards.
    pub fn advance_clock_to(&mut self, t: SimTime) -> Result<(), NandError> {
        if t < self.clock {
            return Err(NandError::ClockRegression);
        }
        self.clock = t;
        Ok(())
    }

    fn charge(&mut self, d: SimDuration) {
        self.clock = self.clock.saturating_add(d);
    }

    fn slot(&self, ppa: Ppa) -> Result<&PageSlot, NandError> {
        self.pages.get(ppa.0 as usize).ok_or(NandError::OutOfRange(ppa))
    }

    pub fn state(&self, ppa: Ppa) -> Result<PageState, NandError> {
        Ok(self.slot(ppa)?.state)
    }

    /// OOB access without touching the clock (firmware-side metadata lookups).
    pub fn oob(&self, ppa: Ppa) -> Result<&PageOob, NandError> {
        let slot = self.slot(ppa)?;
        slot.oob.as_ref().ok_or(NandError::ReadFreePage(ppa))
    }

    pub fn block_meta(&self, block: BlockId) -> &BlockMeta {
        &self.blocks[block.0 as usize]
    }

    pub fn blocks_total(&self) -> u32 {
        self.geometry.blocks_total
    }

    pub fn free_valid_blocks(&self) -> usize {
        self.free_valid.len()
    }

    pub fn free_ov_blocks(&self) -> usize {
        self.free_ov.len()
    }

    /// Free pages still open for appends in the given bucket's block.
    pub fn ov_open_remaining(&self, bucket: BucketLabel) -> u32 {
        match self.ov_open.get(&bucket) {
            Some(b) => self.geometry.pages_per_block - self.blocks[b.0 as usize].cursor,
            None => 0,
        }
    }

    pub fn host_open_block(&self) -> Option<BlockId> {
        self.host_open
    }

    pub fn gc_open_block(&self) -> Option<BlockId> {
        self.gc_open
    }

    pub fn ov_open_blocks(&self) -> impl Iterator<Item = (BucketLabel, BlockId)> + '_ {
        self.ov_open.iter().map(|(k, v)| (*k, *v))
    }

    /// Fully-programmed valid-zone blocks, candidates for garbage collection.
    pub fn closed_valid_blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        let ppb = self.geometry.pages_per_block;
        (0..self.geometry.valid_zone_blocks())
            .map(BlockId)
            .filter(move |b| self.blocks[b.0 as usize].cursor == ppb)
    }

    /// Programmed (label-carrying) old-version blocks.
    pub fn labeled_ov_blocks(&self) -> impl Iterator<Item = (BlockId, BucketLabel)> + '_ {
        (self.geometry.valid_zone_blocks()..self.geometry.blocks_total)
            .map(BlockId)
            .filter_map(move |b| self.blocks[b.0 as usize].bucket.map(|label| (b, label)))
    }

    /// Reserves the next sequential free page on the frontier's open block,
    /// opening a fresh block from the zone's free pool when needed. The
    /// caller must program the returned page.
    pub fn allocate_free_page(&mut self, frontier: Frontier) -> Result<Ppa, NandError> {
        let ppb = self.geometry.pages_per_block;
        let full = |blocks: &[BlockMeta], b: BlockId| blocks[b.0 as usize].cursor >= ppb;
        let block = match frontier {
            Frontier::Host | Frontier::GcCopy => {
                let open = if matches!(frontier, Frontier::Host) {
                    self.host_open
                } else {
                    self.gc_open
                };
                match open {
                    Some(b) if !full(&self.blocks, b) => b,
                    _ => {
                        let fresh = self
                            .free_valid
                            .pop_front()
                            .ok_or(NandError::ZoneFull(Zone::Valid))?;
                        if matches!(frontier, Frontier::Host) {
                            self.host_open = Some(fresh);
                        } else {
                            self.gc_open = Some(fresh);
                        }
                        fresh
                    }
                }
            }
            Frontier::Ov(label) => match self.ov_open.get(&label).copied() {
                Some(b) if !full(&self.blocks, b) => b,
                _ => {
                    let fresh = self
                        .free_ov
                        .pop_front()
                        .ok_or(NandError::ZoneFull(Zone::Ov))?;
                    self.blocks[fresh.0 as usize].bucket = Some(label);
                    self.ov_open.insert(label, fresh);
                    fresh
                }
            },
        };
        let meta = &mut self.blocks[block.0 as usize];
        let ppa = Ppa(block.0 * ppb + meta.cursor);
        meta.cursor += 1;
        Ok(ppa)
    }

    /// Programs a reserved page. The zone decides the resulting state: valid
    /// zone pages come up `Valid`, old-version zone pages come up
    /// `OldVersion`.
    pub fn program_page(&mut self, ppa: Ppa, data: &[u8], oob: PageOob) -> Result<(), NandError> {
        let page_size = self.geometry.page_size_bytes;
        if data.len() != page_size as usize {
            return Err(NandError::BadLength {
                expected: page_size,
                got: data.len(),
            });
        }
        let zone = self.geometry.zone_of(ppa);
        let block = self.geometry.block_of(ppa);
        let slot = self
            .pages
            .get_mut(ppa.0 as usize)
            .ok_or(NandError::OutOfRange(ppa))?;
        if slot.state != PageState::Free {
            return Err(NandError::ProgramOnNonFreePage(ppa));
        }
        let new_state = match zone {
            Zone::Valid => PageState::Valid,
            Zone::Ov => PageState::OldVersion,
        };
        slot.state = new_state;
        slot.data = Some(data.to_vec().into_boxed_slice());
        slot.oob = Some(oob);
        let counts = &mut self.blocks[block.0 as usize].counts;
        counts.free -= 1;
        match new_state {
            PageState::Valid => counts.valid += 1,
            PageState::OldVersion => counts.old_version += 1,
            _ => unreachable!(),
        }
        self.counters.programs += 1;
        self.charge(self.costs.program);
        Ok(())
    }

    pub fn read_page(&mut self, ppa: Ppa) -> Result<(&[u8], &PageOob), NandError> {
        self.counters.reads += 1;
        self.charge(self.costs.read);
        let slot = self.slot(ppa)?;
        match (&slot.data, &slot.oob) {
            (Some(d), Some(o)) => Ok((d, o)),
            _ => Err(NandError::ReadFreePage(ppa)),
        }
    }

    /// Marks a superseded page. Plain overwrites invalidate; versioned
    /// overwrites keep the page around as an old version.
    pub fn retire_page(&mut self, ppa: Ppa, to: PageState) -> Result<(), NandError> {
        debug_assert!(matches!(to, PageState::Invalid | PageState::OldVersion));
        let block = self.geometry.block_of(ppa);
        let slot = self
            .pages
            .get_mut(ppa.0 as usize)
            .ok_or(NandError::OutOfRange(ppa))?;
        if slot.state != PageState::Valid {
            return Err(NandError::IllegalTransition {
                ppa,
                from: slot.state,
                to,
            });
        }
        slot.state = to;
        let counts = &mut self.blocks[block.0 as usize].counts;
        counts.valid -= 1;
        match to {
            PageState::Invalid => counts.invalid += 1,
            PageState::OldVersion => counts.old_version += 1,
            _ => unreachable!(),
        }
        Ok(())
    }

    /// Erases a whole block. The caller is responsible for having relocated
    /// or released every page it needs to keep.
    pub fn erase_block(&mut self, block: BlockId) -> Result<(), NandError> {
        let ppb = self.geometry.pages_per_block;
        let start = block.0 as usize * ppb as usize;
        for slot in &mut self.pages[start..start + ppb as usize] {
            slot.state = PageState::Free;
            slot.data = None;
            slot.oob = None;
        }
        let zone;
        {
            let meta = &mut self.blocks[block.0 as usize];
            zone = meta.zone;
            meta.erase_count += 1;
            meta.cursor = 0;
            meta.counts = BlockCounts {
                free: ppb,
                ..BlockCounts::default()
            };
            if let Some(label) = meta.bucket.take() {
                if self.ov_open.get(&label) == Some(&block) {
                    self.ov_open.remove(&label);
                }
            }
        }
        if self.host_open == Some(block) {
            self.host_open = None;
        }
        if self.gc_open == Some(block) {
            self.gc_open = None;
        }
        match zone {
            Zone::Valid => self.free_valid.push_back(block),
            Zone::Ov => self.free_ov.push_back(block),
        }
        self.counters.erases += 1;
        self.charge(self.costs.erase);
        Ok(())
    }

    /// Metadata fix-up when a chain neighbor is relocated: rewrites the back
    /// pointer of the record at `loc` without reprogramming the page.
    pub fn patch_back_pointer(
        &mut self,
        loc: RecordLoc,
        new_bp: Option<RecordLoc>,
    ) -> Result<(), NandError> {
        let slot = self
            .pages
            .get_mut(loc.ppa.0 as usize)
            .ok_or(NandError::OutOfRange(loc.ppa))?;
        match slot.oob.as_mut() {
            Some(PageOob::Host(rec)) => {
                rec.bp = new_bp;
                Ok(())
            }
            Some(PageOob::OvDirectory(dir)) => {
                let rec = dir
                    .get_mut(loc.slot as usize)
                    .ok_or(NandError::OutOfRange(loc.ppa))?;
                rec.oob.bp = new_bp;
                Ok(())
            }
            None => Err(NandError::ReadFreePage(loc.ppa)),
        }
    }

    /// Device-wide state census; the four states always sum to the geometry
    /// total.
    pub fn state_census(&self) -> BlockCounts {
        let mut total = BlockCounts::default();
        for b in &self.blocks {
            total.free += b.counts.free;
            total.valid += b.counts.valid;
            total.invalid += b.counts.invalid;
            total.old_version += b.counts.old_version;
        }
        total
    }

    #[cfg(test)]
    pub(crate) fn recount(&self) -> BlockCounts {
        let mut total = BlockCounts::default();
        for p in &self.pages {
            match p.state {
                PageState::Free => total.free += 1,
                PageState::Valid => total.valid += 1,
                PageState::Invalid => total.invalid += 1,
                PageState::OldVersion => total.old_version += 1,
            }
        }
        total
    }

    pub(crate) fn restore_allocation(
        &mut self,
        host_open: Option<BlockId>,
        gc_open: Option<BlockId>,
        ov_open: BTreeMap<BucketLabel, BlockId>,
        free_valid: VecDeque<BlockId>,
        free_ov: VecDeque<BlockId>,
    ) {
        self.host_open = host_open;
        self.gc_open = gc_open;
        self.ov_open = ov_open;
        self.free_valid = free_valid;
        self.free_ov = free_ov;
    }

    pub(crate) fn allocation_state(
        &self,
    ) -> (
        Option<BlockId>,
        Option<BlockId>,
        &BTreeMap<BucketLabel, BlockId>,
        &VecDeque<BlockId>,
        &VecDeque<BlockId>,
    ) {
        (
            self.host_open,
            self.gc_open,
            &self.ov_open,
            &self.free_valid,
            &self.free_ov,
        )
    }

    pub(crate) fn restore_page(
        &mut self,
        ppa: Ppa,
        state: PageState,
        data: Option<Box<[u8]>>,
        oob: Option<PageOob>,
    ) {
        let block = self.geometry.block_of(ppa);
        let slot = &mut self.pages[ppa.0 as usize];
        slot.state = state;
        slot.data = data;
        slot.oob = oob;
        let counts = &mut self.blocks[block.0 as usize].counts;
        if state != PageState::Free {
            counts.free -= 1;
            let meta_cursor = ppa.0 % self.geometry.pages_per_block + 1;
            let cur = &mut self.blocks[block.0 as usize];
            if cur.cursor < meta_cursor {
                cur.cursor = meta_cursor;
            }
        }
        let counts = &mut self.blocks[block.0 as usize].counts;
        match state {
            PageState::Free => {}
            PageState::Valid => counts.valid += 1,
            PageState::Invalid => counts.invalid += 1,
            PageState::OldVersion => counts.old_version += 1,
        }
    }

    pub(crate) fn restore_block_meta(
        &mut self,
        block: BlockId,
        erase_count: u32,
        bucket: Option<BucketLabel>,
    ) {
        let meta = &mut self.blocks[block.0 as usize];
        meta.erase_count = erase_count;
        meta.bucket = bucket;
    }

    pub(crate) fn restore_clock(&mut self, t: SimTime, counters: NandCounters) {
        self.clock = t;
        self.counters = counters;
    }

    pub(crate) fn page_raw(&self, ppa: Ppa) -> (PageState, Option<&[u8]>, Option<&PageOob>) {
        let slot = &self.pages[ppa.0 as usize];
        (slot.state, slot.data.as_deref(), slot.oob.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oob(lpa: u32) -> PageOob {
        PageOob::Host(OobRecord {
            lpa: Lpa(lpa),
            wt: SimTime::from_secs(1),
            bp: None,
            pmeta: None,
        })
    }

    fn tiny() -> NandArray {
        NandArray::new(NandGeometry::tiny(8, 2, 4), CostModel::default()).unwrap()
    }

    #[test]
    fn program_then_read_roundtrips() {
        let mut nand = tiny();
        let ppa = nand.allocate_free_page(Frontier::Host).unwrap();
        assert_eq!(ppa, Ppa(0));
        let data = vec![0xA5u8; 4096];
        nand.program_page(ppa, &data, oob(3)).unwrap();
        assert_eq!(nand.state(ppa).unwrap(), PageState::Valid);
        let (got, got_oob) = nand.read_page(ppa).unwrap();
        assert_eq!(got, &data[..]);
        match got_oob {
            PageOob::Host(rec) => assert_eq!(rec.lpa, Lpa(3)),
            _ => panic!("expected host record"),
        }
    }

    #[test]
    fn double_program_rejected() {
        let mut nand = tiny();
        let ppa = nand.allocate_free_page(Frontier::Host).unwrap();
        let data = vec![0u8; 4096];
        nand.program_page(ppa, &data, oob(1)).unwrap();
        assert_eq!(
            nand.program_page(ppa, &data, oob(1)),
            Err(NandError::ProgramOnNonFreePage(ppa))
        );
    }

    #[test]
    fn bad_length_rejected() {
        let mut nand = tiny();
        let ppa = nand.allocate_free_page(Frontier::Host).unwrap();
        let data = vec![0u8; 4097];
        assert_eq!(
            nand.program_page(ppa, &data, oob(1)),
            Err(NandError::BadLength {
                expected: 4096,
                got: 4097
            })
        );
    }

    #[test]
    fn read_of_erased_page_fails() {
        let mut nand = tiny();
        let ppa = nand.allocate_free_page(Frontier::Host).unwrap();
        nand.program_page(ppa, &vec![1u8; 4096], oob(1)).unwrap();
        nand.erase_block(BlockId(0)).unwrap();
        assert_eq!(nand.read_page(ppa).unwrap_err(), NandError::ReadFreePage(ppa));
    }

    #[test]
    fn erase_frees_whole_block_and_counts() {
        let mut nand = tiny();
        for _ in 0..4 {
            let ppa = nand.allocate_free_page(Frontier::Host).unwrap();
            nand.program_page(ppa, &vec![2u8; 4096], oob(1)).unwrap();
            nand.retire_page(ppa, PageState::Invalid).unwrap();
        }
        assert_eq!(nand.block_meta(BlockId(0)).counts.invalid, 4);
        nand.erase_block(BlockId(0)).unwrap();
        let meta = nand.block_meta(BlockId(0));
        assert_eq!(meta.erase_count, 1);
        assert_eq!(meta.counts.free, 4);
        // The erased block is programmable again.
        let _ = nand.allocate_free_page(Frontier::Host).unwrap();
    }

    #[test]
    fn ov_bucket_allocations_share_a_block() {
        let mut nand = tiny();
        let label = BucketLabel(12);
        let a = nand.allocate_free_page(Frontier::Ov(label)).unwrap();
        let b = nand.allocate_free_page(Frontier::Ov(label)).unwrap();
        assert_eq!(nand.geometry().block_of(a), nand.geometry().block_of(b));
        assert_eq!(nand.geometry().zone_of(a), Zone::Ov);
    }

    #[test]
    fn ov_zone_exhaustion_reported() {
        let mut nand = tiny();
        // 2 OV blocks x 4 pages; two buckets claim one block each.
        for bucket in [BucketLabel(1), BucketLabel(2)] {
            for _ in 0..4 {
                let ppa = nand.allocate_free_page(Frontier::Ov(bucket)).unwrap();
                nand.program_page(ppa, &vec![0u8; 4096], PageOob::OvDirectory(vec![]))
                    .unwrap();
            }
        }
        assert_eq!(
            nand.allocate_free_page(Frontier::Ov(BucketLabel(3))).unwrap_err(),
            NandError::ZoneFull(Zone::Ov)
        );
    }

    #[test]
    fn census_is_conserved() {
        let mut nand = tiny();
        let total = nand.geometry().pages_total();
        for _ in 0..6 {
            let ppa = nand.allocate_free_page(Frontier::Host).unwrap();
            nand.program_page(ppa, &vec![3u8; 4096], oob(7)).unwrap();
        }
        nand.retire_page(Ppa(0), PageState::Invalid).unwrap();
        nand.retire_page(Ppa(1), PageState::OldVersion).unwrap();
        let census = nand.state_census();
        assert_eq!(census.free + census.valid + census.invalid + census.old_version, total);
        assert_eq!(census, nand.recount());
    }

    #[test]
    fn clock_is_monotone() {
        let mut nand = tiny();
        let mut last = nand.now();
        for _ in 0..4 {
            let ppa = nand.allocate_free_page(Frontier::Host).unwrap();
            nand.program_page(ppa, &vec![0u8; 4096], oob(1)).unwrap();
            assert!(nand.now() > last);
            last = nand.now();
        }
        assert_eq!(
            nand.advance_clock_to(SimTime::ZERO).unwrap_err(),
            NandError::ClockRegression
        );
    }
}
