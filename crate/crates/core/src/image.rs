//! Device image persistence.
//!
//! The on-disk format is little-endian and fully deterministic: header magic
//! `SGXSSDIM`, format version, geometry and cost records, device state
//! (clock, counters, policy store, allocation frontiers), per-block
//! metadata, then per-page records carrying state byte, OOB fields in a
//! fixed layout, and raw page data for programmed pages. Round-trips are
//! bit-exact.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::ftl::{Device, DeviceConfig, DeviceStats};
use crate::nand::{
    BlockId, BucketLabel, Codec, CostModel, NandCounters, NandGeometry, Lpa, OobRecord,
    OvRecordHeader, PMeta, PageOob, PageState, Ppa, RecordLoc,
};
use crate::policy::{FileRegistryEntry, Policy, PolicyStore, PolicyStoreState};
use crate::seal::DeviceKey;
use crate::time::{SimDuration, SimTime};

pub const MAGIC: &[u8; 8] = b"SGXSSDIM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("not a device image (bad magic)")]
    Magic,
    #[error("unsupported image format version {0}")]
    Version(u16),
    #[error("corrupt image: {0}")]
    Corrupt(&'static str),
    #[error(transparent)]
    Nand(#[from] crate::nand::NandError),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.0.extend_from_slice(v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ImageError> {
        if self.pos + n > self.buf.len() {
            return Err(ImageError::Corrupt("truncated"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, ImageError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ImageError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ImageError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ImageError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn put_opt_loc(w: &mut Writer, loc: Option<RecordLoc>) {
    match loc {
        Some(l) => {
            w.u8(1);
            w.u32(l.ppa.0);
            w.u16(l.slot);
        }
        None => {
            w.u8(0);
            w.u32(0);
            w.u16(0);
        }
    }
}

fn get_opt_loc(r: &mut Reader) -> Result<Option<RecordLoc>, ImageError> {
    let present = r.u8()?;
    let ppa = r.u32()?;
    let slot = r.u16()?;
    Ok((present != 0).then_some(RecordLoc { ppa: Ppa(ppa), slot }))
}

fn put_oob(w: &mut Writer, rec: &OobRecord) {
    w.u32(rec.lpa.0);
    w.u64(rec.wt.0);
    put_opt_loc(w, rec.bp);
    match rec.pmeta {
        Some(pm) => {
            w.u8(1);
            w.u32(pm.policy_id);
            w.u32(pm.file_id);
            w.u64(pm.file_offset);
        }
        None => {
            w.u8(0);
            w.u32(0);
            w.u32(0);
            w.u64(0);
        }
    }
}

fn get_oob(r: &mut Reader) -> Result<OobRecord, ImageError> {
    let lpa = Lpa(r.u32()?);
    let wt = SimTime(r.u64()?);
    let bp = get_opt_loc(r)?;
    let present = r.u8()?;
    let policy_id = r.u32()?;
    let file_id = r.u32()?;
    let file_offset = r.u64()?;
    let pmeta = (present != 0).then_some(PMeta {
        policy_id,
        file_id,
        file_offset,
    });
    Ok(OobRecord { lpa, wt, bp, pmeta })
}

fn put_duration_opt(w: &mut Writer, d: Option<SimDuration>) {
    w.u64(d.map_or(0, |d| d.as_micros()));
}

fn get_duration_opt(r: &mut Reader) -> Result<Option<SimDuration>, ImageError> {
    let v = r.u64()?;
    Ok((v != 0).then_some(SimDuration(v)))
}

/// Serializes the full device state.
pub fn to_bytes(dev: &Device) -> Vec<u8> {
    let nand = dev.nand();
    let geo = *nand.geometry();
    let costs = *nand.costs();
    let mut w = Writer(Vec::with_capacity(1024));
    w.bytes(MAGIC);
    w.u16(FORMAT_VERSION);
    w.u32(geo.page_size_bytes);
    w.u32(geo.pages_per_block);
    w.u32(geo.blocks_total);
    w.u32(geo.ov_zone_blocks);
    w.u64(costs.read.as_micros());
    w.u64(costs.program.as_micros());
    w.u64(costs.erase.as_micros());
    w.u64(nand.now().as_micros());
    let counters = nand.counters();
    w.u64(counters.programs);
    w.u64(counters.reads);
    w.u64(counters.erases);
    let (versioning, threshold) = dev.config_tuple();
    w.u8(dev.is_halted() as u8);
    w.u8(versioning as u8);
    w.u32(threshold as u32);

    let s = dev.stats();
    for v in [
        s.host_pages_written,
        s.host_bytes_written,
        s.host_pages_read,
        s.gc_runs,
        s.gc_valid_copied,
        s.gc_invalid_dropped,
        s.gc_ov_preserved,
        s.gc_ov_discarded,
        s.ov_pages_programmed,
        s.bytes_compressed_in,
        s.bytes_compressed_out,
        s.ov_blocks_reclaimed,
        s.unknown_policy_writes,
    ] {
        w.u64(v);
    }

    let store = dev.store().snapshot();
    w.u32(store.policies.len() as u32);
    for p in &store.policies {
        w.u32(p.id);
        put_duration_opt(&mut w, p.rt);
        put_duration_opt(&mut w, p.bc);
        w.u64(p.created_at.0);
        w.u16(p.rule.len() as u16);
        w.bytes(p.rule.as_bytes());
    }
    w.u32(store.tombstones.len() as u32);
    for t in &store.tombstones {
        w.u32(*t);
    }
    w.u32(store.next_id);
    w.u32(store.registry.len() as u32);
    for e in &store.registry {
        w.u32(e.file_id);
        w.u32(e.policy_id);
        w.bytes(&e.name_digest);
        w.u64(e.registered_at.0);
    }
    w.u64(store.last_counter);

    let (host_open, gc_open, ov_open, free_valid, free_ov) = nand.allocation_state();
    w.u32(host_open.map_or(u32::MAX, |b| b.0));
    w.u32(gc_open.map_or(u32::MAX, |b| b.0));
    w.u32(ov_open.len() as u32);
    for (label, block) in ov_open {
        w.u64(label.0);
        w.u32(block.0);
    }
    w.u32(free_valid.len() as u32);
    for b in free_valid {
        w.u32(b.0);
    }
    w.u32(free_ov.len() as u32);
    for b in free_ov {
        w.u32(b.0);
    }

    for b in 0..geo.blocks_total {
        let meta = nand.block_meta(BlockId(b));
        w.u32(meta.erase_count);
        match meta.bucket {
            Some(label) => {
                w.u8(1);
                w.u64(label.0);
            }
            None => {
                w.u8(0);
                w.u64(0);
            }
        }
    }

    for raw in 0..geo.pages_total() {
        let (state, data, oob) = nand.page_raw(Ppa(raw));
        w.u8(state as u8);
        if state == PageState::Free {
            continue;
        }
        let (data, oob) = (data.expect("programmed"), oob.expect("programmed"));
        match oob {
            PageOob::Host(rec) => {
                w.u8(1);
                put_oob(&mut w, rec);
            }
            PageOob::OvDirectory(dir) => {
                w.u8(2);
                w.u16(dir.len() as u16);
                for rec in dir {
                    put_oob(&mut w, &rec.oob);
                    w.u64(rec.dead_at.0);
                    w.u32(rec.payload_offset);
                    w.u32(rec.payload_len);
                    w.u8(match rec.codec {
                        Codec::Raw => 0,
                        Codec::Rle => 1,
                    });
                }
            }
        }
        w.bytes(data);
    }
    w.0
}

/// Rebuilds a device from an image. The device key is vendor-installed, not
/// part of the image.
pub fn from_bytes(bytes: &[u8], key: DeviceKey) -> Result<Device, ImageError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(ImageError::Magic);
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(ImageError::Version(version));
    }
    let geometry = NandGeometry {
        page_size_bytes: r.u32()?,
        pages_per_block: r.u32()?,
        blocks_total: r.u32()?,
        ov_zone_blocks: r.u32()?,
    };
    let costs = CostModel {
        read: SimDuration(r.u64()?),
        program: SimDuration(r.u64()?),
        erase: SimDuration(r.u64()?),
    };
    let now = SimTime(r.u64()?);
    let counters = NandCounters {
        programs: r.u64()?,
        reads: r.u64()?,
        erases: r.u64()?,
    };
    let halted = r.u8()? != 0;
    let versioning = r.u8()? != 0;
    let threshold = r.u32()? as usize;

    let mut stat_vals = [0u64; 13];
    for v in &mut stat_vals {
        *v = r.u64()?;
    }
    let stats = DeviceStats {
        host_pages_written: stat_vals[0],
        host_bytes_written: stat_vals[1],
        host_pages_read: stat_vals[2],
        gc_runs: stat_vals[3],
        gc_valid_copied: stat_vals[4],
        gc_invalid_dropped: stat_vals[5],
        gc_ov_preserved: stat_vals[6],
        gc_ov_discarded: stat_vals[7],
        ov_pages_programmed: stat_vals[8],
        bytes_compressed_in: stat_vals[9],
        bytes_compressed_out: stat_vals[10],
        ov_blocks_reclaimed: stat_vals[11],
        unknown_policy_writes: stat_vals[12],
    };

    let n_policies = r.u32()? as usize;
    let mut policies = Vec::with_capacity(n_policies);
    for _ in 0..n_policies {
        let id = r.u32()?;
        let rt = get_duration_opt(&mut r)?;
        let bc = get_duration_opt(&mut r)?;
        let created_at = SimTime(r.u64()?);
        let rule_len = r.u16()? as usize;
        let rule = std::str::from_utf8(r.take(rule_len)?)
            .map_err(|_| ImageError::Corrupt("rule not utf-8"))?
            .to_string();
        policies.push(Policy {
            id,
            rt,
            bc,
            rule,
            created_at,
        });
    }
    let n_tomb = r.u32()? as usize;
    let mut tombstones = Vec::with_capacity(n_tomb);
    for _ in 0..n_tomb {
        tombstones.push(r.u32()?);
    }
    let next_id = r.u32()?;
    let n_reg = r.u32()? as usize;
    let mut registry = Vec::with_capacity(n_reg);
    for _ in 0..n_reg {
        let file_id = r.u32()?;
        let policy_id = r.u32()?;
        let mut digest = [0u8; 32];
        digest.copy_from_slice(r.take(32)?);
        let registered_at = SimTime(r.u64()?);
        registry.push(FileRegistryEntry {
            file_id,
            policy_id,
            name_digest: digest,
            registered_at,
        });
    }
    let last_counter = r.u64()?;

    let read_opt_block = |r: &mut Reader| -> Result<Option<BlockId>, ImageError> {
        let v = r.u32()?;
        Ok((v != u32::MAX).then_some(BlockId(v)))
    };
    let host_open = read_opt_block(&mut r)?;
    let gc_open = read_opt_block(&mut r)?;
    let n_ov_open = r.u32()? as usize;
    let mut ov_open = BTreeMap::new();
    for _ in 0..n_ov_open {
        let label = BucketLabel(r.u64()?);
        let block = BlockId(r.u32()?);
        ov_open.insert(label, block);
    }
    let n_fv = r.u32()? as usize;
    let mut free_valid = VecDeque::with_capacity(n_fv);
    for _ in 0..n_fv {
        free_valid.push_back(BlockId(r.u32()?));
    }
    let n_fo = r.u32()? as usize;
    let mut free_ov = VecDeque::with_capacity(n_fo);
    for _ in 0..n_fo {
        free_ov.push_back(BlockId(r.u32()?));
    }

    let mut config = DeviceConfig::new(geometry, key);
    config.costs = costs;
    config.versioning_enabled = versioning;
    config.gc_free_block_threshold = threshold;
    let mut dev = Device::new(config).map_err(|_| ImageError::Corrupt("bad geometry"))?;

    for b in 0..geometry.blocks_total {
        let erase_count = r.u32()?;
        let present = r.u8()?;
        let label = r.u64()?;
        dev.nand_mut().restore_block_meta(
            BlockId(b),
            erase_count,
            (present != 0).then_some(BucketLabel(label)),
        );
    }

    let page_size = geometry.page_size_bytes as usize;
    for raw in 0..geometry.pages_total() {
        let state = match r.u8()? {
            0 => PageState::Free,
            1 => PageState::Valid,
            2 => PageState::Invalid,
            3 => PageState::OldVersion,
            _ => return Err(ImageError::Corrupt("bad page state")),
        };
        if state == PageState::Free {
            continue;
        }
        let oob = match r.u8()? {
            1 => PageOob::Host(get_oob(&mut r)?),
            2 => {
                let n = r.u16()? as usize;
                let mut dir = Vec::with_capacity(n);
                for _ in 0..n {
                    let oob = get_oob(&mut r)?;
                    let dead_at = SimTime(r.u64()?);
                    let payload_offset = r.u32()?;
                    let payload_len = r.u32()?;
                    let codec = match r.u8()? {
                        0 => Codec::Raw,
                        1 => Codec::Rle,
                        _ => return Err(ImageError::Corrupt("bad codec")),
                    };
                    dir.push(OvRecordHeader {
                        oob,
                        dead_at,
                        payload_offset,
                        payload_len,
                        codec,
                    });
                }
                PageOob::OvDirectory(dir)
            }
            _ => return Err(ImageError::Corrupt("bad oob tag")),
        };
        let data = r.take(page_size)?.to_vec().into_boxed_slice();
        dev.nand_mut().restore_page(Ppa(raw), state, Some(data), Some(oob));
    }
    if !r.done() {
        return Err(ImageError::Corrupt("trailing bytes"));
    }

    dev.nand_mut()
        .restore_allocation(host_open, gc_open, ov_open, free_valid, free_ov);
    dev.nand_mut().restore_clock(now, counters);
    *dev.store_mut() = PolicyStore::restore(PolicyStoreState {
        policies,
        tombstones,
        registry,
        next_id,
        last_counter,
    });
    *dev.stats_mut() = stats;
    dev.set_halted(halted);
    dev.rebuild_ftl();
    Ok(dev)
}
