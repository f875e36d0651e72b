//! The flash translation layer and versioning firmware.
//!
//! [`Device`] owns the NAND array, the logical-to-physical table, the policy
//! store and the simulated clock, and applies every command in order. The
//! interesting machinery is the versioned write path (superseded pages of
//! policy-tagged files become old versions instead of garbage), garbage
//! collection (which decides per old version whether to compress it into the
//! old-version zone or drop it), and reclamation of expired old-version
//! blocks.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compress::{rle_compress, rle_decompress};
use crate::nand::{
    BlockId, BucketLabel, Codec, CostModel, Frontier, Lpa, NandArray, NandCounters, NandError,
    NandGeometry, OobRecord, OvRecordHeader, PMeta, PageOob, PageState, Ppa, RecordLoc, Zone,
};
use crate::policy::{
    FileId, FileRegistryEntry, Policy, PolicyError, PolicyLookup, PolicyResult, PolicyStore,
};
use crate::recovery::RecoveredPage;
use crate::retention::{bucket_for, is_expired, pv_decide, PvDecision};
use crate::seal::{DeviceKey, SealedRequest};
use crate::time::{SimDuration, SimTime};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeviceError {
    #[error("I/O stopped: old-version space exhausted")]
    OvZoneFullStop,
    #[error("logical address {0:?} outside exported capacity")]
    CapacityExceeded(Lpa),
    #[error("logical address {0:?} was never written")]
    UnmappedLpa(Lpa),
    #[error("version chain of {lpa:?} broken at {at:?}")]
    BrokenChain { lpa: Lpa, at: RecordLoc },
    #[error("no garbage-collection victim available")]
    NoVictim,
    #[error("clock regression")]
    ClockRegression,
    #[error("recovery found nothing alive at the requested time")]
    NothingAtTime,
    #[error(transparent)]
    Nand(#[from] NandError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// One link of a logical page's version chain, newest first.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct VersionChainEntry {
    pub loc: RecordLoc,
    pub wt: SimTime,
    /// Write time of the next-newer surviving version; the head never dies.
    pub dead_at: SimTime,
    pub oob: OobRecord,
    pub zone: Zone,
    pub state: PageState,
}

/// Accounting for one garbage-collection pass.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct GcReport {
    pub victim_block: u32,
    pub valid_copied: u32,
    pub invalid_dropped: u32,
    pub ov_preserved: u32,
    pub ov_discarded: u32,
    pub bytes_compressed_in: u64,
    pub bytes_compressed_out: u64,
    pub elapsed_sim_time: SimDuration,
}

impl GcReport {
    /// The four buckets partition the victim's pages.
    pub fn pages_examined(&self) -> u32 {
        self.valid_copied + self.invalid_dropped + self.ov_preserved + self.ov_discarded
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct DeviceStats {
    pub host_pages_written: u64,
    pub host_bytes_written: u64,
    pub host_pages_read: u64,
    pub gc_runs: u64,
    pub gc_valid_copied: u64,
    pub gc_invalid_dropped: u64,
    pub gc_ov_preserved: u64,
    pub gc_ov_discarded: u64,
    pub ov_pages_programmed: u64,
    pub bytes_compressed_in: u64,
    pub bytes_compressed_out: u64,
    pub ov_blocks_reclaimed: u64,
    pub unknown_policy_writes: u64,
}

/// Point-in-time device census for the stats command.
#[derive(Clone, Copy, PartialEq, Eq, Debug, serde::Serialize, serde::Deserialize)]
pub struct DeviceStatsSnapshot {
    pub now_micros: u64,
    pub stats: DeviceStats,
    pub nand: NandCounters,
    pub pages_free: u32,
    pub pages_valid: u32,
    pub pages_invalid: u32,
    pub pages_old_version: u32,
    pub ov_pages_live: u32,
    pub free_valid_blocks: u32,
    pub free_ov_blocks: u32,
    pub halted: bool,
}

#[derive(Clone, Debug)]
pub struct DeviceConfig {
    pub geometry: NandGeometry,
    pub costs: CostModel,
    pub key: DeviceKey,
    /// With versioning off the device degrades to a plain log-structured FTL.
    pub versioning_enabled: bool,
    /// Garbage collection keeps at least this many valid-zone blocks free.
    pub gc_free_block_threshold: usize,
}

impl DeviceConfig {
    pub fn new(geometry: NandGeometry, key: DeviceKey) -> Self {
        DeviceConfig {
            geometry,
            costs: CostModel::default(),
            key,
            versioning_enabled: true,
            gc_free_block_threshold: 2,
        }
    }
}

/// The in-process device command set; mirrors what a wire protocol would
/// carry.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Command {
    Write {
        lpa: Lpa,
        data: Vec<u8>,
        pmeta: Option<PMeta>,
    },
    Read {
        lpa: Lpa,
    },
    PolicyReq {
        sealed: SealedRequest,
    },
    FileRegister {
        policy_id: u32,
        file_id: u32,
        name_digest: [u8; 32],
    },
    RecoverFast {
        file_id: FileId,
        at: SimTime,
        lbas: Vec<Lpa>,
    },
    RecoverRobust {
        file_id: FileId,
        at: SimTime,
    },
    TimeSet {
        t: SimTime,
    },
    Stats,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Response {
    Ack,
    Data(Vec<u8>),
    Policy(PolicyResult),
    Recovered(Vec<RecoveredPage>),
    Stats(Box<DeviceStatsSnapshot>),
}

/// One old-version block and its surviving records.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct OvBlockView {
    pub block: BlockId,
    pub bucket: BucketLabel,
    pub records: Vec<OvRecordHeader>,
}

enum LinkResult {
    Entry(VersionChainEntry),
    End,
}

#[derive(Clone, Copy, Debug)]
enum Disposition {
    Moved(RecordLoc),
    Preserved(RecordLoc),
    Dropped(Option<RecordLoc>),
}

struct PreservePlan {
    victim_loc: RecordLoc,
    oob: OobRecord,
    dead_at: SimTime,
    bucket: BucketLabel,
    payload: Vec<u8>,
    codec: Codec,
}

pub struct Device {
    nand: NandArray,
    ftl: Vec<Option<Ppa>>,
    store: PolicyStore,
    key: DeviceKey,
    versioning_enabled: bool,
    gc_free_block_threshold: usize,
    halted: bool,
    stats: DeviceStats,
}

impl Device {
    pub fn new(config: DeviceConfig) -> Result<Self, DeviceError> {
        let nand = NandArray::new(config.geometry, config.costs)?;
        let logical = Self::logical_pages_for(&config.geometry);
        Ok(Device {
            nand,
            ftl: vec![None; logical as usize],
            store: PolicyStore::new(),
            key: config.key,
            versioning_enabled: config.versioning_enabled,
            gc_free_block_threshold: config.gc_free_block_threshold,
            halted: false,
            stats: DeviceStats::default(),
        })
    }

    /// Exported capacity: valid-zone pages minus 10% over-provisioning.
    fn logical_pages_for(geometry: &NandGeometry) -> u32 {
        let valid_pages = geometry.valid_zone_blocks() as u64 * geometry.pages_per_block as u64;
        (valid_pages * 9 / 10) as u32
    }

    pub fn logical_pages(&self) -> u32 {
        Self::logical_pages_for(self.nand.geometry())
    }

    pub fn page_size(&self) -> usize {
        self.nand.geometry().page_size_bytes as usize
    }

    pub fn geometry(&self) -> &NandGeometry {
        self.nand.geometry()
    }

    pub fn now(&self) -> SimTime {
        self.nand.now()
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    pub fn stats(&self) -> &DeviceStats {
        &self.stats
    }

    pub fn nand_counters(&self) -> NandCounters {
        self.nand.counters()
    }

    pub fn ftl_target(&self, lpa: Lpa) -> Option<Ppa> {
        self.ftl.get(lpa.0 as usize).copied().flatten()
    }

    /// Physical page state, for inspection and audits.
    pub fn page_state(&self, ppa: Ppa) -> Option<PageState> {
        self.nand.state(ppa).ok()
    }

    pub fn versioning_enabled(&self) -> bool {
        self.versioning_enabled
    }

    pub(crate) fn nand(&self) -> &NandArray {
        &self.nand
    }

    pub(crate) fn nand_mut(&mut self) -> &mut NandArray {
        &mut self.nand
    }

    pub(crate) fn store(&self) -> &PolicyStore {
        &self.store
    }

    pub(crate) fn store_mut(&mut self) -> &mut PolicyStore {
        &mut self.store
    }

    pub(crate) fn set_halted(&mut self, halted: bool) {
        self.halted = halted;
    }

    pub(crate) fn stats_mut(&mut self) -> &mut DeviceStats {
        &mut self.stats
    }

    pub(crate) fn config_tuple(&self) -> (bool, usize) {
        (self.versioning_enabled, self.gc_free_block_threshold)
    }

    pub(crate) fn rebuild_ftl(&mut self) {
        let logical = self.logical_pages();
        self.ftl = vec![None; logical as usize];
        for raw in 0..self.nand.geometry().pages_total() {
            let ppa = Ppa(raw);
            let (state, _, oob) = self.nand.page_raw(ppa);
            if state == PageState::Valid {
                if let Some(PageOob::Host(rec)) = oob {
                    if (rec.lpa.0 as usize) < self.ftl.len() {
                        self.ftl[rec.lpa.0 as usize] = Some(ppa);
                    }
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // Host I/O path
    // ------------------------------------------------------------------

    /// Drops hints that refer to policies the device has never heard of;
    /// the preservation algorithm could not evaluate them later.
    fn sanitize_pmeta(&mut self, pmeta: Option<PMeta>) -> Option<PMeta> {
        if !self.versioning_enabled {
            return None;
        }
        let pm = pmeta?;
        match self.store.lookup(pm.policy_id) {
            PolicyLookup::Unknown => {
                log::warn!(
                    "write tagged with unknown policy {}; storing unversioned",
                    pm.policy_id
                );
                self.stats.unknown_policy_writes += 1;
                None
            }
            _ => Some(pm),
        }
    }

    pub fn host_write(
        &mut self,
        lpa: Lpa,
        data: &[u8],
        pmeta: Option<PMeta>,
    ) -> Result<(), DeviceError> {
        if self.halted {
            return Err(DeviceError::OvZoneFullStop);
        }
        if lpa.0 >= self.logical_pages() {
            return Err(DeviceError::CapacityExceeded(lpa));
        }
        let page_size = self.nand.geometry().page_size_bytes;
        if data.len() != page_size as usize {
            return Err(NandError::BadLength {
                expected: page_size,
                got: data.len(),
            }
            .into());
        }
        let pmeta = self.sanitize_pmeta(pmeta);
        self.ensure_gc_headroom()?;

        let prev = self.ftl[lpa.0 as usize];
        let oob = OobRecord {
            lpa,
            wt: self.nand.now(),
            bp: prev.map(RecordLoc::page),
            pmeta,
        };
        let ppa = self.nand.allocate_free_page(Frontier::Host)?;
        self.nand.program_page(ppa, data, PageOob::Host(oob))?;
        if let Some(prev_ppa) = prev {
            // The superseded page's own hint decides its fate: versioned
            // pages age into old versions, plain pages rot to invalid.
            let prev_versioned = matches!(
                self.nand.oob(prev_ppa)?,
                PageOob::Host(rec) if rec.pmeta.is_some()
            );
            let to = if prev_versioned {
                PageState::OldVersion
            } else {
                PageState::Invalid
            };
            self.nand.retire_page(prev_ppa, to)?;
        }
        self.ftl[lpa.0 as usize] = Some(ppa);
        self.stats.host_pages_written += 1;
        self.stats.host_bytes_written += data.len() as u64;
        Ok(())
    }

    pub fn host_read(&mut self, lpa: Lpa) -> Result<Vec<u8>, DeviceError> {
        let ppa = self
            .ftl
            .get(lpa.0 as usize)
            .copied()
            .flatten()
            .ok_or(DeviceError::UnmappedLpa(lpa))?;
        debug_assert_eq!(self.nand.geometry().zone_of(ppa), Zone::Valid);
        let (data, _) = self.nand.read_page(ppa)?;
        let out = data.to_vec();
        self.stats.host_pages_read += 1;
        Ok(out)
    }

    // ------------------------------------------------------------------
    // Version chains
    // ------------------------------------------------------------------

    /// Walks the version chain of `lpa` from the mapped head along back
    /// pointers, crossing into the old-version zone transparently. Entries
    /// come back newest first; each entry's `dead_at` is the write time of
    /// the entry before it.
    pub fn chain_walk(&mut self, lpa: Lpa) -> Result<Vec<VersionChainEntry>, DeviceError> {
        let head = self
            .ftl
            .get(lpa.0 as usize)
            .copied()
            .flatten()
            .ok_or(DeviceError::UnmappedLpa(lpa))?;
        let (_, oob) = self.nand.read_page(head)?;
        let rec = match oob {
            PageOob::Host(r) => *r,
            PageOob::OvDirectory(_) => unreachable!("mapped head in old-version zone"),
        };
        let mut entries = vec![VersionChainEntry {
            loc: RecordLoc::page(head),
            wt: rec.wt,
            dead_at: SimTime::INFINITY,
            oob: rec,
            zone: Zone::Valid,
            state: PageState::Valid,
        }];
        loop {
            let last = *entries.last().unwrap();
            let Some(target) = last.oob.bp else { break };
            match self.resolve_link(lpa, &last, target)? {
                LinkResult::Entry(e) => entries.push(e),
                LinkResult::End => break,
            }
        }
        Ok(entries)
    }

    /// Follows one back-pointer hop. Links may legitimately dangle after an
    /// old-version block was reclaimed; the stop rule distinguishes that
    /// from a preservation bug by zone and by whether the vanished version
    /// could still be unexpired.
    fn resolve_link(
        &mut self,
        lpa: Lpa,
        pointer: &VersionChainEntry,
        target: RecordLoc,
    ) -> Result<LinkResult, DeviceError> {
        if target.ppa.0 >= self.nand.geometry().pages_total() {
            return Ok(LinkResult::End);
        }
        let zone = self.nand.geometry().zone_of(target.ppa);
        if self.nand.state(target.ppa)? == PageState::Free {
            return match zone {
                // Reclaimed old-version block: the chain is terminated here.
                Zone::Ov => Ok(LinkResult::End),
                Zone::Valid => self.judge_dangling(lpa, pointer, target),
            };
        }
        let state = self.nand.state(target.ppa)?;
        let (_, oob) = self.nand.read_page(target.ppa)?;
        match oob {
            PageOob::Host(rec) => {
                let rec = *rec;
                if target.slot == 0 && rec.lpa == lpa && rec.wt < pointer.wt {
                    Ok(LinkResult::Entry(VersionChainEntry {
                        loc: RecordLoc::page(target.ppa),
                        wt: rec.wt,
                        dead_at: pointer.wt,
                        oob: rec,
                        zone,
                        state,
                    }))
                } else {
                    // The page was erased and reused for something else.
                    Ok(LinkResult::End)
                }
            }
            PageOob::OvDirectory(dir) => {
                let matches = |r: &OvRecordHeader| r.oob.lpa == lpa && r.oob.wt < pointer.wt;
                let exact = dir
                    .get(target.slot as usize)
                    .filter(|r| matches(r))
                    .map(|r| (target.slot, *r));
                let found = exact.or_else(|| {
                    dir.iter()
                        .enumerate()
                        .filter(|(_, r)| matches(r))
                        .max_by_key(|(_, r)| r.oob.wt)
                        .map(|(i, r)| (i as u16, *r))
                });
                match found {
                    Some((slot, rec)) => Ok(LinkResult::Entry(VersionChainEntry {
                        loc: RecordLoc {
                            ppa: target.ppa,
                            slot,
                        },
                        wt: rec.oob.wt,
                        dead_at: pointer.wt,
                        oob: rec.oob,
                        zone,
                        state,
                    })),
                    None => Ok(LinkResult::End),
                }
            }
        }
    }

    /// A dangling pointer into the valid zone is only legal if the vanished
    /// version could have been dropped; garbage collection re-links every
    /// chain it touches, so an unexpired versioned target signals a bug.
    fn judge_dangling(
        &mut self,
        lpa: Lpa,
        pointer: &VersionChainEntry,
        target: RecordLoc,
    ) -> Result<LinkResult, DeviceError> {
        let Some(pm) = pointer.oob.pmeta else {
            return Ok(LinkResult::End);
        };
        if let PolicyLookup::Policy(p) = self.store.lookup(pm.policy_id) {
            if let Some(rt) = p.rt {
                // The vanished version died when the pointer was written.
                if pointer.wt.saturating_add(rt) > self.nand.now() {
                    return Err(DeviceError::BrokenChain { lpa, at: target });
                }
            }
        }
        Ok(LinkResult::End)
    }

    /// Reads the stored bytes of one version record, decompressing packed
    /// old-version payloads.
    pub fn read_version(&mut self, loc: RecordLoc) -> Result<Vec<u8>, DeviceError> {
        let (data, oob) = self.nand.read_page(loc.ppa)?;
        match oob {
            PageOob::Host(_) => Ok(data.to_vec()),
            PageOob::OvDirectory(dir) => {
                let rec = dir
                    .get(loc.slot as usize)
                    .ok_or(NandError::OutOfRange(loc.ppa))?;
                let start = rec.payload_offset as usize;
                let end = start + rec.payload_len as usize;
                let payload = &data[start..end];
                // Records always hold one full page.
                let expected = data.len();
                match rec.codec {
                    Codec::Raw => Ok(payload.to_vec()),
                    Codec::Rle => rle_decompress(payload, expected)
                        .ok_or_else(|| NandError::OutOfRange(loc.ppa).into()),
                }
            }
        }
    }

    // ------------------------------------------------------------------
    // Garbage collection
    // ------------------------------------------------------------------

    fn ensure_gc_headroom(&mut self) -> Result<(), DeviceError> {
        let mut guard = 0u32;
        while self.nand.free_valid_blocks() < self.gc_free_block_threshold {
            match self.gc_run() {
                Ok(_) => {}
                Err(DeviceError::NoVictim) => {
                    if self.nand.free_valid_blocks() == 0 {
                        return Err(DeviceError::CapacityExceeded(Lpa(0)));
                    }
                    break;
                }
                Err(e) => return Err(e),
            }
            guard += 1;
            if guard > self.nand.blocks_total() * 2 {
                return Err(DeviceError::CapacityExceeded(Lpa(0)));
            }
        }
        Ok(())
    }

    fn select_victim(&self) -> Option<BlockId> {
        // Greedy: fewest live pages wins, lowest block id breaks ties.
        self.nand
            .closed_valid_blocks()
            .min_by_key(|b| (self.nand.block_meta(*b).counts.valid, b.0))
    }

    /// One garbage-collection pass: pick the victim, relocate what must
    /// live, judge every old version against its policy, erase the block.
    pub fn gc_run(&mut self) -> Result<GcReport, DeviceError> {
        let victim = self.select_victim().ok_or(DeviceError::NoVictim)?;
        let t0 = self.nand.now();
        let ppb = self.nand.geometry().pages_per_block;
        let page_size = self.nand.geometry().page_size_bytes as usize;
        let first = self.nand.geometry().first_ppa(victim);

        // Classify the victim's pages and collect the logical addresses
        // whose chains touch it.
        let mut valid_pages = Vec::new();
        let mut invalid_pages = Vec::new();
        let mut ov_pages = Vec::new();
        let mut lpas = Vec::new();
        let mut seen = BTreeSet::new();
        for off in 0..ppb {
            let ppa = Ppa(first.0 + off);
            let (state, _, oob) = self.nand.page_raw(ppa);
            let rec = match oob {
                Some(PageOob::Host(rec)) => *rec,
                Some(PageOob::OvDirectory(_)) => unreachable!("packed page in valid zone"),
                None => unreachable!("victim block is fully programmed"),
            };
            if seen.insert(rec.lpa) {
                lpas.push(rec.lpa);
            }
            match state {
                PageState::Valid => valid_pages.push((ppa, rec)),
                PageState::Invalid => invalid_pages.push((ppa, rec)),
                PageState::OldVersion => ov_pages.push((ppa, rec)),
                PageState::Free => unreachable!(),
            }
        }

        // Walk each touched chain once; the walk supplies every victim
        // entry's successor context.
        let mut walked: BTreeMap<Lpa, Vec<VersionChainEntry>> = BTreeMap::new();
        for lpa in &lpas {
            match self.chain_walk(*lpa) {
                Ok(seq) => {
                    walked.insert(*lpa, seq);
                }
                Err(DeviceError::UnmappedLpa(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let entry_of = |walked: &BTreeMap<Lpa, Vec<VersionChainEntry>>, lpa: Lpa, ppa: Ppa| {
            walked
                .get(&lpa)
                .and_then(|seq| seq.iter().find(|e| e.loc == RecordLoc::page(ppa)).copied())
        };

        // Judge every old version and lay out the preserved ones.
        let mut plans: Vec<PreservePlan> = Vec::new();
        let mut dropped: Vec<(RecordLoc, Option<RecordLoc>)> = Vec::new();
        let mut report = GcReport {
            victim_block: victim.0,
            ..GcReport::default()
        };
        for (ppa, rec) in &ov_pages {
            let ctx = entry_of(&walked, rec.lpa, *ppa);
            let decision = match (&ctx, rec.pmeta) {
                (Some(entry), Some(pm)) => match self.store.lookup(pm.policy_id) {
                    PolicyLookup::Policy(p) => {
                        match pv_decide(entry.wt, entry.dead_at, p, self.nand.now()) {
                            PvDecision::Preserve => Some((entry.dead_at, p.clone())),
                            PvDecision::Discard => None,
                        }
                    }
                    // Deleted or never-known policy: its pages go too.
                    PolicyLookup::Tombstone | PolicyLookup::Unknown => None,
                },
                // Unreachable from its head: already orphaned and expired.
                _ => None,
            };
            match decision {
                Some((dead_at, policy)) => {
                    let bucket = bucket_for(rec.wt, dead_at, &policy)
                        .expect("preserved pages have a retention horizon");
                    let (raw, _) = self.nand.read_page(*ppa)?;
                    let raw = raw.to_vec();
                    let packed = rle_compress(&raw);
                    let (payload, codec) = if packed.len() < raw.len() {
                        (packed, Codec::Rle)
                    } else {
                        (raw.clone(), Codec::Raw)
                    };
                    report.bytes_compressed_in += raw.len() as u64;
                    report.bytes_compressed_out += payload.len() as u64;
                    plans.push(PreservePlan {
                        victim_loc: RecordLoc::page(*ppa),
                        oob: *rec,
                        dead_at,
                        bucket,
                        payload,
                        codec,
                    });
                }
                None => {
                    report.ov_discarded += 1;
                    dropped.push((RecordLoc::page(*ppa), rec.bp));
                }
            }
        }
        report.ov_preserved = plans.len() as u32;
        report.invalid_dropped = invalid_pages.len() as u32;
        report.valid_copied = valid_pages.len() as u32;

        // Group preserved records into per-bucket page loads.
        let mut by_bucket: BTreeMap<BucketLabel, Vec<usize>> = BTreeMap::new();
        for (i, p) in plans.iter().enumerate() {
            by_bucket.entry(p.bucket).or_default().push(i);
        }
        let mut page_groups: BTreeMap<BucketLabel, Vec<Vec<usize>>> = BTreeMap::new();
        for (bucket, idxs) in &by_bucket {
            let mut groups: Vec<Vec<usize>> = Vec::new();
            let mut used = 0usize;
            for &i in idxs {
                let len = plans[i].payload.len();
                if groups.is_empty() || used + len > page_size {
                    groups.push(Vec::new());
                    used = 0;
                }
                groups.last_mut().unwrap().push(i);
                used += len;
            }
            page_groups.insert(*bucket, groups);
        }

        // Backup space must fit the whole preserved set before anything is
        // moved; a reclaim pass may free expired buckets first. If space
        // still runs short the device halts I/O rather than lose versions.
        if !self.ov_plan_fits(&page_groups) {
            let now = self.nand.now();
            self.ov_reclaim(now)?;
            if !self.ov_plan_fits(&page_groups) {
                self.halted = true;
                return Err(DeviceError::OvZoneFullStop);
            }
        }

        // Reserve destinations, then resolve every pointer through the
        // relocation map before a single byte is programmed.
        let mut loc_map: HashMap<RecordLoc, Disposition> = HashMap::new();
        for (loc, bp) in &dropped {
            loc_map.insert(*loc, Disposition::Dropped(*bp));
        }
        for (ppa, rec) in &invalid_pages {
            loc_map.insert(RecordLoc::page(*ppa), Disposition::Dropped(rec.bp));
        }
        let mut valid_moves = Vec::with_capacity(valid_pages.len());
        for (old, rec) in &valid_pages {
            let new = self.nand.allocate_free_page(Frontier::GcCopy)?;
            valid_moves.push((*old, new, *rec));
            loc_map.insert(RecordLoc::page(*old), Disposition::Moved(RecordLoc::page(new)));
        }
        let mut ov_placements: Vec<(Ppa, Vec<usize>)> = Vec::new();
        for (bucket, groups) in &page_groups {
            for group in groups {
                let ppa = self.nand.allocate_free_page(Frontier::Ov(*bucket))?;
                for (slot, &plan_idx) in group.iter().enumerate() {
                    loc_map.insert(
                        plans[plan_idx].victim_loc,
                        Disposition::Preserved(RecordLoc {
                            ppa,
                            slot: slot as u16,
                        }),
                    );
                }
                ov_placements.push((ppa, group.clone()));
            }
        }

        let resolve = |loc_map: &HashMap<RecordLoc, Disposition>,
                       mut target: Option<RecordLoc>|
         -> Option<RecordLoc> {
            loop {
                match target {
                    None => return None,
                    Some(l) => match loc_map.get(&l) {
                        None => return Some(l),
                        Some(Disposition::Moved(n)) | Some(Disposition::Preserved(n)) => {
                            return Some(*n)
                        }
                        Some(Disposition::Dropped(bp)) => target = *bp,
                    },
                }
            }
        };

        // Relocate live pages and rebind the mapping table.
        for (old, new, rec) in &valid_moves {
            let (data, _) = self.nand.read_page(*old)?;
            let data = data.to_vec();
            let mut oob = *rec;
            oob.bp = resolve(&loc_map, oob.bp);
            self.nand.program_page(*new, &data, PageOob::Host(oob))?;
            debug_assert_eq!(self.ftl[rec.lpa.0 as usize], Some(*old));
            self.ftl[rec.lpa.0 as usize] = Some(*new);
        }
        self.stats.gc_valid_copied += valid_moves.len() as u64;

        // Pack and program the preserved old versions.
        for (ppa, group) in &ov_placements {
            let mut data = vec![0u8; page_size];
            let mut dir = Vec::with_capacity(group.len());
            let mut used = 0usize;
            for &plan_idx in group {
                let plan = &plans[plan_idx];
                let len = plan.payload.len();
                data[used..used + len].copy_from_slice(&plan.payload);
                let mut oob = plan.oob;
                oob.bp = resolve(&loc_map, oob.bp);
                dir.push(OvRecordHeader {
                    oob,
                    dead_at: plan.dead_at,
                    payload_offset: used as u32,
                    payload_len: len as u32,
                    codec: plan.codec,
                });
                used += len;
            }
            self.nand.program_page(*ppa, &data, PageOob::OvDirectory(dir))?;
            self.stats.ov_pages_programmed += 1;
        }

        // Re-link every walked chain across the relocation: kept entries
        // point at their next kept neighbor's final home.
        for seq in walked.values() {
            let mut kept: Vec<(RecordLoc, VersionChainEntry)> = Vec::new();
            for entry in seq {
                match loc_map.get(&entry.loc) {
                    None => kept.push((entry.loc, *entry)),
                    Some(Disposition::Moved(n)) | Some(Disposition::Preserved(n)) => {
                        kept.push((*n, *entry))
                    }
                    Some(Disposition::Dropped(_)) => {}
                }
            }
            for i in 0..kept.len() {
                let desired = if i + 1 < kept.len() {
                    Some(kept[i + 1].0)
                } else {
                    resolve(&loc_map, kept[i].1.oob.bp)
                };
                self.nand.patch_back_pointer(kept[i].0, desired)?;
            }
        }

        self.nand.erase_block(victim)?;
        debug_assert_eq!(report.pages_examined(), ppb);
        self.stats.gc_runs += 1;
        self.stats.gc_invalid_dropped += report.invalid_dropped as u64;
        self.stats.gc_ov_preserved += report.ov_preserved as u64;
        self.stats.gc_ov_discarded += report.ov_discarded as u64;
        self.stats.bytes_compressed_in += report.bytes_compressed_in;
        self.stats.bytes_compressed_out += report.bytes_compressed_out;
        report.elapsed_sim_time = SimDuration(self.nand.now().0 - t0.0);
        Ok(report)
    }

    fn ov_plan_fits(&self, page_groups: &BTreeMap<BucketLabel, Vec<Vec<usize>>>) -> bool {
        let ppb = self.nand.geometry().pages_per_block as u64;
        let mut fresh_blocks_needed = 0u64;
        for (bucket, groups) in page_groups {
            let needed = groups.len() as u64;
            let open = self.nand.ov_open_remaining(*bucket) as u64;
            let overflow = needed.saturating_sub(open);
            fresh_blocks_needed += overflow.div_ceil(ppb);
        }
        fresh_blocks_needed <= self.nand.free_ov_blocks() as u64
    }

    /// Runs garbage collection until no closed block holds reclaimable
    /// (invalid or old-version) pages. Background maintenance for scenarios
    /// and tests.
    pub fn gc_sweep(&mut self) -> Result<Vec<GcReport>, DeviceError> {
        let mut reports = Vec::new();
        loop {
            let Some(victim) = self.select_victim() else { break };
            let counts = self.nand.block_meta(victim).counts;
            if counts.invalid == 0 && counts.old_version == 0 {
                break;
            }
            reports.push(self.gc_run()?);
        }
        Ok(reports)
    }

    // ------------------------------------------------------------------
    // Old-version zone reclamation
    // ------------------------------------------------------------------

    /// Erases every old-version block whose bucket deadline has passed,
    /// whose records are all expired under current policy, and whose
    /// erasure cannot orphan a surviving older version. Returns the number
    /// of blocks reclaimed.
    pub fn ov_reclaim(&mut self, cur_time: SimTime) -> Result<usize, DeviceError> {
        let cur = cur_time.max(self.nand.now());
        let mut candidates: Vec<(BlockId, BucketLabel)> = self.nand.labeled_ov_blocks().collect();
        candidates.sort_by_key(|(b, label)| (label.deadline(), b.0));
        let mut reclaimed = 0usize;
        'blocks: for (block, label) in candidates {
            if label.deadline() >= cur {
                continue;
            }
            let records = self.block_records(block);
            for rec in &records {
                if !self.record_expired(rec, cur) {
                    continue 'blocks;
                }
            }
            for rec in &records {
                if self.tail_has_survivor(block, rec, cur)? {
                    continue 'blocks;
                }
            }
            self.nand.erase_block(block)?;
            reclaimed += 1;
        }
        if reclaimed > 0 {
            self.stats.ov_blocks_reclaimed += reclaimed as u64;
            // Freed backup space lifts a full-stop.
            self.halted = false;
        }
        Ok(reclaimed)
    }

    /// Snapshot of the old-version zone: every labeled block with its packed
    /// records. Inspection only; recovery and tests use it to audit what
    /// survived.
    pub fn ov_inventory(&self) -> Vec<OvBlockView> {
        self.nand
            .labeled_ov_blocks()
            .map(|(block, bucket)| OvBlockView {
                block,
                bucket,
                records: self.block_records(block),
            })
            .collect()
    }

    fn block_records(&self, block: BlockId) -> Vec<OvRecordHeader> {
        let first = self.nand.geometry().first_ppa(block);
        let ppb = self.nand.geometry().pages_per_block;
        let mut out = Vec::new();
        for off in 0..ppb {
            let ppa = Ppa(first.0 + off);
            if let (PageState::OldVersion, _, Some(PageOob::OvDirectory(dir))) =
                self.nand.page_raw(ppa)
            {
                out.extend(dir.iter().copied());
            }
        }
        out
    }

    fn record_expired(&self, rec: &OvRecordHeader, cur: SimTime) -> bool {
        let Some(pm) = rec.oob.pmeta else { return true };
        match self.store.lookup(pm.policy_id) {
            PolicyLookup::Policy(p) => is_expired(rec.oob.wt, rec.dead_at, p, cur),
            PolicyLookup::Tombstone | PolicyLookup::Unknown => true,
        }
    }

    /// Walks the chain tail below `rec`. Erasing the block would cut every
    /// older version off from its head, so any unexpired one vetoes the
    /// erase.
    fn tail_has_survivor(
        &mut self,
        block: BlockId,
        rec: &OvRecordHeader,
        cur: SimTime,
    ) -> Result<bool, DeviceError> {
        let lpa = rec.oob.lpa;
        let mut pointer_wt = rec.oob.wt;
        let mut target = rec.oob.bp;
        let mut hops = 0u32;
        while let Some(loc) = target {
            hops += 1;
            if hops > 100_000 {
                break;
            }
            if loc.ppa.0 >= self.nand.geometry().pages_total() {
                break;
            }
            if self.nand.geometry().block_of(loc.ppa) == block {
                // Same block: those records are already known expired.
                match self.nand.page_raw(loc.ppa) {
                    (_, _, Some(PageOob::OvDirectory(dir))) => {
                        match dir.get(loc.slot as usize) {
                            Some(r) if r.oob.lpa == lpa && r.oob.wt < pointer_wt => {
                                pointer_wt = r.oob.wt;
                                target = r.oob.bp;
                                continue;
                            }
                            _ => break,
                        }
                    }
                    _ => break,
                }
            }
            if self.nand.state(loc.ppa)? == PageState::Free {
                break;
            }
            let (_, oob) = self.nand.read_page(loc.ppa)?;
            match oob {
                PageOob::Host(r) => {
                    let r = *r;
                    if r.lpa != lpa || r.wt >= pointer_wt {
                        break;
                    }
                    if let Some(pm) = r.pmeta {
                        if let PolicyLookup::Policy(p) = self.store.lookup(pm.policy_id) {
                            // Its successor is the pointer we came from.
                            if !is_expired(r.wt, pointer_wt, p, cur) {
                                return Ok(true);
                            }
                        }
                    }
                    pointer_wt = r.wt;
                    target = r.bp;
                }
                PageOob::OvDirectory(dir) => {
                    let found = dir
                        .get(loc.slot as usize)
                        .filter(|r| r.oob.lpa == lpa && r.oob.wt < pointer_wt)
                        .copied();
                    match found {
                        Some(r) => {
                            if let Some(pm) = r.oob.pmeta {
                                if let PolicyLookup::Policy(p) = self.store.lookup(pm.policy_id) {
                                    if !is_expired(r.oob.wt, r.dead_at, p, cur) {
                                        return Ok(true);
                                    }
                                }
                            }
                            pointer_wt = r.oob.wt;
                            target = r.oob.bp;
                        }
                        None => break,
                    }
                }
            }
        }
        Ok(false)
    }

    // ------------------------------------------------------------------
    // Clock, policy plumbing, commands
    // ------------------------------------------------------------------

    /// Jumps the clock forward and lets expired backup space age out.
    pub fn set_time(&mut self, t: SimTime) -> Result<(), DeviceError> {
        if t < self.nand.now() {
            return Err(DeviceError::ClockRegression);
        }
        self.nand.advance_clock_to(t)?;
        self.ov_reclaim(t)?;
        Ok(())
    }

    pub fn apply_policy_request(
        &mut self,
        sealed: &SealedRequest,
    ) -> Result<PolicyResult, DeviceError> {
        let now = self.nand.now();
        let key = self.key;
        Ok(self.store.apply_sealed_request(sealed, &key, now)?)
    }

    pub fn register_file(
        &mut self,
        policy_id: u32,
        file_id: u32,
        name_digest: [u8; 32],
    ) -> Result<(), DeviceError> {
        let now = self.nand.now();
        Ok(self.store.register_file(policy_id, file_id, name_digest, now)?)
    }

    pub fn lookup_policy(&self, id: u32) -> PolicyLookup<'_> {
        self.store.lookup(id)
    }

    pub fn export_metadata(&self) -> (Vec<Policy>, Vec<FileRegistryEntry>) {
        self.store.export_metadata()
    }

    pub fn registry_len(&self) -> usize {
        self.store.registry_len()
    }

    pub fn snapshot_stats(&self) -> DeviceStatsSnapshot {
        let census = self.nand.state_census();
        let mut ov_live = 0u32;
        for (block, _) in self.nand.labeled_ov_blocks() {
            ov_live += self.nand.block_meta(block).counts.old_version;
        }
        DeviceStatsSnapshot {
            now_micros: self.nand.now().as_micros(),
            stats: self.stats,
            nand: self.nand.counters(),
            pages_free: census.free,
            pages_valid: census.valid,
            pages_invalid: census.invalid,
            pages_old_version: census.old_version,
            ov_pages_live: ov_live,
            free_valid_blocks: self.nand.free_valid_blocks() as u32,
            free_ov_blocks: self.nand.free_ov_blocks() as u32,
            halted: self.halted,
        }
    }

    /// Digest over page states and GC accounting; two runs that agree here
    /// at every checkpoint went through identical state histories.
    pub fn state_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for raw in 0..self.nand.geometry().pages_total() {
            let (state, _, _) = self.nand.page_raw(Ppa(raw));
            h.update([state as u8]);
        }
        h.update(self.stats.host_pages_written.to_le_bytes());
        h.update(self.stats.gc_runs.to_le_bytes());
        h.update(self.stats.gc_valid_copied.to_le_bytes());
        h.update(self.stats.gc_invalid_dropped.to_le_bytes());
        h.update(self.stats.gc_ov_preserved.to_le_bytes());
        h.update(self.stats.gc_ov_discarded.to_le_bytes());
        h.update(self.stats.ov_pages_programmed.to_le_bytes());
        h.update(self.nand.counters().erases.to_le_bytes());
        h.finalize().into()
    }

    /// Applies one device command.
    pub fn execute(&mut self, cmd: Command) -> Result<Response, DeviceError> {
        match cmd {
            Command::Write { lpa, data, pmeta } => {
                self.host_write(lpa, &data, pmeta)?;
                Ok(Response::Ack)
            }
            Command::Read { lpa } => Ok(Response::Data(self.host_read(lpa)?)),
            Command::PolicyReq { sealed } => {
                Ok(Response::Policy(self.apply_policy_request(&sealed)?))
            }
            Command::FileRegister {
                policy_id,
                file_id,
                name_digest,
            } => {
                self.register_file(policy_id, file_id, name_digest)?;
                Ok(Response::Ack)
            }
            Command::RecoverFast { file_id, at, lbas } => Ok(Response::Recovered(
                crate::recovery::fast_recover(self, file_id, at, &lbas)?,
            )),
            Command::RecoverRobust { file_id, at } => Ok(Response::Recovered(
                crate::recovery::robust_recover(self, file_id, at)?,
            )),
            Command::TimeSet { t } => {
                self.set_time(t)?;
                Ok(Response::Ack)
            }
            Command::Stats => Ok(Response::Stats(Box::new(self.snapshot_stats()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{encode_policy_request, PolicyRequest};
    use crate::seal::Sealer;

    pub(crate) const TEST_KEY: DeviceKey = DeviceKey([0x11; 32]);

    fn tiny_device() -> Device {
        let config = DeviceConfig::new(NandGeometry::tiny(16, 4, 8), TEST_KEY);
        Device::new(config).unwrap()
    }

    fn page(byte: u8, size: usize) -> Vec<u8> {
        vec![byte; size]
    }

    fn install_policy(dev: &mut Device, rule: &str, rt_hours: u64, bc_hours: u64) -> u32 {
        let mut sealer = Sealer::new(TEST_KEY, dev.store.last_counter());
        let req = PolicyRequest::Create {
            requested_id: 0,
            rt: (rt_hours != 0).then(|| SimDuration::from_hours(rt_hours)),
            bc: (bc_hours != 0).then(|| SimDuration::from_hours(bc_hours)),
            rule: rule.to_string(),
        };
        let sealed = sealer.seal_next(&encode_policy_request(&req));
        match dev.apply_policy_request(&sealed).unwrap() {
            PolicyResult::Created { id } => id,
            other => panic!("unexpected {other:?}"),
        }
    }

    fn pm(policy_id: u32, file_id: u32, offset: u64) -> Option<PMeta> {
        Some(PMeta {
            policy_id,
            file_id,
            file_offset: offset,
        })
    }

    #[test]
    fn plain_overwrite_invalidates() {
        let mut dev = tiny_device();
        let size = dev.page_size();
        dev.host_write(Lpa(3), &page(1, size), None).unwrap();
        let first = dev.ftl_target(Lpa(3)).unwrap();
        dev.host_write(Lpa(3), &page(2, size), None).unwrap();
        let second = dev.ftl_target(Lpa(3)).unwrap();
        assert_ne!(first, second);
        assert_eq!(dev.nand.state(first).unwrap(), PageState::Invalid);
        assert_eq!(dev.nand.state(second).unwrap(), PageState::Valid);
        assert_eq!(dev.host_read(Lpa(3)).unwrap(), page(2, size));
    }

    #[test]
    fn versioned_overwrite_keeps_old_version() {
        let mut dev = tiny_device();
        let size = dev.page_size();
        let pid = install_policy(&mut dev, "*", 24, 0);
        dev.host_write(Lpa(0), &page(1, size), pm(pid, 1, 0)).unwrap();
        let first = dev.ftl_target(Lpa(0)).unwrap();
        dev.host_write(Lpa(0), &page(2, size), pm(pid, 1, 0)).unwrap();
        assert_eq!(dev.nand.state(first).unwrap(), PageState::OldVersion);
        let chain = dev.chain_walk(Lpa(0)).unwrap();
        assert_eq!(chain.len(), 2);
        assert_eq!(chain[0].dead_at, SimTime::INFINITY);
        assert_eq!(chain[1].dead_at, chain[0].wt);
        assert_eq!(chain[1].oob.bp, None);
        assert_eq!(chain[0].oob.bp, Some(chain[1].loc));
    }

    #[test]
    fn first_write_has_no_back_pointer() {
        let mut dev = tiny_device();
        let size = dev.page_size();
        dev.host_write(Lpa(7), &page(9, size), None).unwrap();
        let chain = dev.chain_walk(Lpa(7)).unwrap();
        assert_eq!(chain.len(), 1);
        assert_eq!(chain[0].oob.bp, None);
    }

    #[test]
    fn read_of_unwritten_lpa_fails() {
        let mut dev = tiny_device();
        assert_eq!(dev.host_read(Lpa(5)).unwrap_err(), DeviceError::UnmappedLpa(Lpa(5)));
        assert_eq!(dev.chain_walk(Lpa(5)).unwrap_err(), DeviceError::UnmappedLpa(Lpa(5)));
    }

    #[test]
    fn capacity_bound_enforced() {
        let mut dev = tiny_device();
        let size = dev.page_size();
        let lpa = Lpa(dev.logical_pages());
        assert_eq!(
            dev.host_write(lpa, &page(0, size), None).unwrap_err(),
            DeviceError::CapacityExceeded(lpa)
        );
    }

    #[test]
    fn mixed_victim_gc_accounting() {
        let mut dev = tiny_device();
        let size = dev.page_size();
        // Fill one block: 4 pages that get invalidated, 4 that stay live.
        for i in 0..4 {
            dev.host_write(Lpa(i), &page(i as u8, size), None).unwrap();
        }
        for i in 4..8 {
            dev.host_write(Lpa(i), &page(i as u8, size), None).unwrap();
        }
        // Invalidate the first four; the overwrites land in block 1.
        for i in 0..4 {
            dev.host_write(Lpa(i), &page(0xF0 + i as u8, size), None).unwrap();
        }
        let report = dev.gc_run().unwrap();
        assert_eq!(report.victim_block, 0);
        assert_eq!(report.valid_copied, 4);
        assert_eq!(report.invalid_dropped, 4);
        assert_eq!(report.pages_examined(), 8);
        // Live data still reads back.
        for i in 4..8 {
            assert_eq!(dev.host_read(Lpa(i)).unwrap(), page(i as u8, size));
        }
    }

    #[test]
    fn all_invalid_victim_is_pure_erase() {
        let mut dev = tiny_device();
        let size = dev.page_size();
        for i in 0..8 {
            dev.host_write(Lpa(i), &page(1, size), None).unwrap();
        }
        for i in 0..8 {
            dev.host_write(Lpa(i), &page(2, size), None).unwrap();
        }
        let report = dev.gc_run().unwrap();
        assert_eq!(report.valid_copied, 0);
        assert_eq!(report.invalid_dropped, 8);
        assert_eq!(report.ov_preserved, 0);
    }

    #[test]
    fn no_victim_without_closed_blocks() {
        let mut dev = tiny_device();
        assert_eq!(dev.gc_run().unwrap_err(), DeviceError::NoVictim);
    }

    #[test]
    fn gc_preserves_unexpired_versions_across_zones() {
        let mut dev = tiny_device();
        let size = dev.page_size();
        let pid = install_policy(&mut dev, "*", 24, 0);
        // Three versions of the same page fill block 0 alongside junk.
        dev.host_write(Lpa(0), &page(0xA1, size), pm(pid, 1, 0)).unwrap();
        dev.host_write(Lpa(0), &page(0xA2, size), pm(pid, 1, 0)).unwrap();
        dev.host_write(Lpa(0), &page(0xA3, size), pm(pid, 1, 0)).unwrap();
        for i in 1..6 {
            dev.host_write(Lpa(i), &page(i as u8, size), None).unwrap();
        }
        let report = dev.gc_run().unwrap();
        assert_eq!(report.ov_preserved, 2);
        assert_eq!(report.valid_copied, 6);
        let chain = dev.chain_walk(Lpa(0)).unwrap();
        assert_eq!(chain.len(), 3);
        assert_eq!(chain[1].zone, Zone::Ov);
        assert_eq!(chain[2].zone, Zone::Ov);
        // Bytes survive the compress/copy round trip.
        assert_eq!(dev.read_version(chain[1].loc).unwrap(), page(0xA2, size));
        assert_eq!(dev.read_version(chain[2].loc).unwrap(), page(0xA1, size));
        // Old versions are not host readable: mapping still points at head.
        assert_eq!(dev.host_read(Lpa(0)).unwrap(), page(0xA3, size));
    }

    #[test]
    fn gc_discards_expired_versions() {
        let mut dev = tiny_device();
        let size = dev.page_size();
        let pid = install_policy(&mut dev, "*", 24, 0);
        dev.host_write(Lpa(0), &page(1, size), pm(pid, 1, 0)).unwrap();
        dev.host_write(Lpa(0), &page(2, size), pm(pid, 1, 0)).unwrap();
        for i in 1..7 {
            dev.host_write(Lpa(i), &page(i as u8, size), None).unwrap();
        }
        // Two days later the superseded version is far past its retention.
        dev.set_time(SimTime::from_dhms(2, 0, 0, 0)).unwrap();
        let report = dev.gc_run().unwrap();
        assert_eq!(report.ov_preserved, 0);
        assert_eq!(report.ov_discarded, 1);
        let chain = dev.chain_walk(Lpa(0)).unwrap();
        assert_eq!(chain.len(), 1);
    }

    #[test]
    fn deleted_policy_pages_are_discarded_at_gc() {
        let mut dev = tiny_device();
        let size = dev.page_size();
        let pid = install_policy(&mut dev, "*", 1000, 0);
        dev.host_write(Lpa(0), &page(1, size), pm(pid, 1, 0)).unwrap();
        dev.host_write(Lpa(0), &page(2, size), pm(pid, 1, 0)).unwrap();
        for i in 1..7 {
            dev.host_write(Lpa(i), &page(0, size), None).unwrap();
        }
        let mut sealer = Sealer::new(TEST_KEY, dev.store.last_counter());
        let sealed = sealer.seal_next(&encode_policy_request(&PolicyRequest::Delete { id: pid }));
        dev.apply_policy_request(&sealed).unwrap();
        let report = dev.gc_run().unwrap();
        assert_eq!(report.ov_preserved, 0);
        assert_eq!(report.ov_discarded, 1);
    }

    #[test]
    fn unknown_policy_hint_degrades_to_plain_write() {
        let mut dev = tiny_device();
        let size = dev.page_size();
        dev.host_write(Lpa(0), &page(1, size), pm(99, 1, 0)).unwrap();
        dev.host_write(Lpa(0), &page(2, size), pm(99, 1, 0)).unwrap();
        let first_chain = dev.chain_walk(Lpa(0)).unwrap();
        assert_eq!(first_chain[1].state, PageState::Invalid);
        assert_eq!(dev.stats.unknown_policy_writes, 2);
    }

    #[test]
    fn ov_reclaim_frees_expired_buckets_only() {
        let mut dev = tiny_device();
        let size = dev.page_size();
        let pid = install_policy(&mut dev, "*", 24, 0);
        dev.host_write(Lpa(0), &page(1, size), pm(pid, 1, 0)).unwrap();
        dev.host_write(Lpa(0), &page(2, size), pm(pid, 1, 0)).unwrap();
        for i in 1..7 {
            dev.host_write(Lpa(i), &page(0, size), None).unwrap();
        }
        dev.gc_run().unwrap();
        assert_eq!(dev.snapshot_stats().ov_pages_live, 1);
        // Still within retention: nothing to reclaim.
        assert_eq!(dev.ov_reclaim(dev.now()).unwrap(), 0);
        // Day 3: the preserved version (horizon about day 1) is gone.
        let reclaimed_at = SimTime::from_dhms(3, 0, 0, 1);
        dev.nand.advance_clock_to(reclaimed_at).unwrap();
        assert_eq!(dev.ov_reclaim(reclaimed_at).unwrap(), 1);
        assert_eq!(dev.snapshot_stats().ov_pages_live, 0);
        assert_eq!(dev.ov_reclaim(reclaimed_at).unwrap(), 0);
        // The chain terminates cleanly at the reclaimed boundary.
        let chain = dev.chain_walk(Lpa(0)).unwrap();
        assert_eq!(chain.len(), 1);
    }

    #[test]
    fn ov_exhaustion_halts_io_until_space_returns() {
        // One backup block of 4 pages; five unexpired incompressible
        // versions cannot fit.
        let config = DeviceConfig::new(NandGeometry::tiny(8, 1, 4), TEST_KEY);
        let mut dev = Device::new(config).unwrap();
        let size = dev.page_size();
        // No byte run ever reaches length 3, so pages store raw.
        let noisy = |tag: u8| -> Vec<u8> {
            (0..size).map(|j| (j as u8).wrapping_mul(31) ^ tag).collect()
        };
        let pid = install_policy(&mut dev, "*", 24, 0);
        for round in 0..6u8 {
            dev.host_write(Lpa(0), &noisy(round), pm(pid, 1, 0)).unwrap();
        }
        for i in 1..3 {
            dev.host_write(Lpa(i), &noisy(0xF0 + i as u8), None).unwrap();
        }
        // Collection must preserve 5 old versions into 4 pages of backup
        // space: it aborts without erasing and the device stops I/O.
        let mut halted = false;
        loop {
            match dev.gc_run() {
                Ok(_) => continue,
                Err(DeviceError::OvZoneFullStop) => {
                    halted = true;
                    break;
                }
                Err(DeviceError::NoVictim) => break,
                Err(e) => panic!("{e}"),
            }
        }
        assert!(halted);
        assert!(dev.is_halted());
        assert_eq!(
            dev.host_write(Lpa(5), &page(1, size), None).unwrap_err(),
            DeviceError::OvZoneFullStop
        );
        // Reads still work while writes are refused.
        assert_eq!(dev.host_read(Lpa(0)).unwrap(), noisy(5));
        // Retention runs out; reclaiming the expired bucket lifts the stop.
        dev.set_time(SimTime::from_dhms(3, 0, 0, 1)).unwrap();
        assert!(!dev.is_halted());
        dev.host_write(Lpa(5), &page(1, size), None).unwrap();
    }

    #[test]
    fn reclaim_on_empty_ov_zone_is_zero() {
        let mut dev = tiny_device();
        assert_eq!(dev.ov_reclaim(SimTime::from_dhms(9, 0, 0, 0)).unwrap(), 0);
    }

    #[test]
    fn broken_chain_detected_when_preservation_is_bypassed() {
        let mut dev = tiny_device();
        let size = dev.page_size();
        let pid = install_policy(&mut dev, "*", 1000, 0);
        // Old version in block 0, head in block 1.
        dev.host_write(Lpa(0), &page(1, size), pm(pid, 1, 0)).unwrap();
        for i in 1..8 {
            dev.host_write(Lpa(i), &page(0, size), None).unwrap();
        }
        dev.host_write(Lpa(0), &page(2, size), pm(pid, 1, 0)).unwrap();
        // Simulate a firmware bug: the block vanishes without relocation.
        dev.nand.erase_block(BlockId(0)).unwrap();
        // Remap survivors so only the dangling back pointer is at fault.
        dev.ftl[1..8].iter_mut().for_each(|e| *e = None);
        let err = dev.chain_walk(Lpa(0)).unwrap_err();
        assert!(matches!(err, DeviceError::BrokenChain { lpa: Lpa(0), .. }));
    }

    #[test]
    fn clock_never_regresses() {
        let mut dev = tiny_device();
        dev.set_time(SimTime::from_secs(100)).unwrap();
        assert_eq!(
            dev.set_time(SimTime::from_secs(50)).unwrap_err(),
            DeviceError::ClockRegression
        );
        // Advancing to "now" is a no-op.
        let now = dev.now();
        dev.set_time(now).unwrap();
    }

    #[test]
    fn census_conserved_through_gc() {
        let mut dev = tiny_device();
        let size = dev.page_size();
        let pid = install_policy(&mut dev, "*", 24, 0);
        let total = dev.nand.geometry().pages_total();
        for round in 0..3u8 {
            for i in 0..8 {
                let meta = (i % 2 == 0).then(|| PMeta {
                    policy_id: pid,
                    file_id: i,
                    file_offset: 0,
                });
                dev.host_write(Lpa(i), &page(round, size), meta).unwrap();
            }
        }
        dev.gc_sweep().unwrap();
        let census = dev.nand.state_census();
        assert_eq!(
            census.free + census.valid + census.invalid + census.old_version,
            total
        );
        assert_eq!(census, dev.nand.recount());
    }
}
