//! File restoration from preserved versions.
//!
//! Fast recovery walks the version chains of the file's block list and picks
//! the version alive at the requested instant. Robust recovery trusts
//! nothing host-side: it scans every programmed page in both zones and
//! rebuilds the file from per-page metadata alone, so it still works when
//! the file system (and with it the block list) has been destroyed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::rle_decompress;
use crate::ftl::{Device, DeviceError};
use crate::nand::{Codec, Lpa, PageOob, PageState, Ppa, RecordLoc, Zone};
use crate::policy::FileId;
use crate::time::SimTime;

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct RecoveredPage {
    pub file_offset: u64,
    pub data: Vec<u8>,
    pub wt: SimTime,
    pub source: Zone,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReconstructError {
    #[error("two recovered pages claim file offset {0}")]
    OverlappingOffsets(u64),
    #[error("recovered page offset {0} is not page-aligned")]
    UnalignedOffset(u64),
}

/// A hole left where no page version survived.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct GapWarning {
    pub file_offset: u64,
}

/// Version selection shared by both recovery modes: alive at `t` means
/// written no later than `t` and superseded only after it.
fn live_at(wt: SimTime, dead_at: SimTime, t: SimTime) -> bool {
    wt <= t && t < dead_at
}

/// Chain-guided restoration. For each block address, walk the chain and take
/// the version of this file that was alive at `t`.
pub fn fast_recover(
    dev: &mut Device,
    file_id: FileId,
    t: SimTime,
    lbas: &[Lpa],
) -> Result<Vec<RecoveredPage>, DeviceError> {
    // Offset -> best (wt, loc, zone); a rewritten file can surface the same
    // offset under two block addresses, newest version wins.
    let mut picks: BTreeMap<u64, (SimTime, RecordLoc, Zone)> = BTreeMap::new();
    for lba in lbas {
        let chain = match dev.chain_walk(*lba) {
            Ok(chain) => chain,
            Err(DeviceError::UnmappedLpa(_)) => continue,
            Err(e) => return Err(e),
        };
        let best = chain
            .iter()
            .filter(|e| e.oob.pmeta.map(|pm| pm.file_id) == Some(file_id))
            .filter(|e| live_at(e.wt, e.dead_at, t))
            .max_by_key(|e| e.wt);
        if let Some(entry) = best {
            let offset = entry.oob.pmeta.unwrap().file_offset;
            let candidate = (entry.wt, entry.loc, entry.zone);
            picks
                .entry(offset)
                .and_modify(|cur| {
                    if candidate.0 > cur.0 {
                        *cur = candidate;
                    }
                })
                .or_insert(candidate);
        }
    }
    if picks.is_empty() {
        return Err(DeviceError::NothingAtTime);
    }
    let mut out = Vec::with_capacity(picks.len());
    for (offset, (wt, loc, zone)) in picks {
        out.push(RecoveredPage {
            file_offset: offset,
            data: dev.read_version(loc)?,
            wt,
            source: zone,
        });
    }
    Ok(out)
}

struct ScanCandidate {
    wt: SimTime,
    payload: Vec<u8>,
    codec: Codec,
    zone: Zone,
}

/// Full-scan restoration: reads every programmed page exactly once, keeps
/// the records tagged with the file, and per offset takes the most recent
/// version written at or before `t`. Neither the mapping table nor any host
/// state is consulted.
pub fn robust_recover(
    dev: &mut Device,
    file_id: FileId,
    t: SimTime,
) -> Result<Vec<RecoveredPage>, DeviceError> {
    let total = dev.geometry().pages_total();
    let page_size = dev.page_size();
    let mut by_offset: BTreeMap<u64, Vec<ScanCandidate>> = BTreeMap::new();
    for raw in 0..total {
        let ppa = Ppa(raw);
        if dev.nand().state(ppa)? == PageState::Free {
            continue;
        }
        let zone = dev.geometry().zone_of(ppa);
        let (data, oob) = dev.nand_mut().read_page(ppa)?;
        match oob {
            PageOob::Host(rec) => {
                if rec.pmeta.map(|pm| pm.file_id) == Some(file_id) {
                    by_offset
                        .entry(rec.pmeta.unwrap().file_offset)
                        .or_default()
                        .push(ScanCandidate {
                            wt: rec.wt,
                            payload: data.to_vec(),
                            codec: Codec::Raw,
                            zone,
                        });
                }
            }
            PageOob::OvDirectory(dir) => {
                for rec in dir {
                    if rec.oob.pmeta.map(|pm| pm.file_id) == Some(file_id) {
                        let start = rec.payload_offset as usize;
                        let end = start + rec.payload_len as usize;
                        by_offset
                            .entry(rec.oob.pmeta.unwrap().file_offset)
                            .or_default()
                            .push(ScanCandidate {
                                wt: rec.oob.wt,
                                payload: data[start..end].to_vec(),
                                codec: rec.codec,
                                zone,
                            });
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for (offset, candidates) in by_offset {
        // Most recent surviving version at or before t. The next-newer
        // version's write time bounds each candidate's life; a candidate
        // whose successor was itself written after t is the live one.
        let best = candidates
            .into_iter()
            .filter(|c| c.wt <= t)
            .max_by_key(|c| c.wt);
        if let Some(c) = best {
            let data = match c.codec {
                Codec::Raw => c.payload,
                Codec::Rle => rle_decompress(&c.payload, page_size)
                    .expect("stored payload decompresses"),
            };
            out.push(RecoveredPage {
                file_offset: offset,
                data,
                wt: c.wt,
                source: c.zone,
            });
        }
    }
    if out.is_empty() {
        return Err(DeviceError::NothingAtTime);
    }
    Ok(out)
}

/// Lays recovered pages out at their offsets. Gaps are zero-filled and
/// reported; `size_hint` trims the tail when the caller knows the file size.
pub fn reconstruct(
    pages: &[RecoveredPage],
    size_hint: Option<u64>,
) -> Result<(Vec<u8>, Vec<GapWarning>), ReconstructError> {
    if pages.is_empty() {
        let size = size_hint.unwrap_or(0) as usize;
        let warnings = if size > 0 {
            vec![GapWarning { file_offset: 0 }]
        } else {
            Vec::new()
        };
        return Ok((vec![0; size], warnings));
    }
    let page_size = pages[0].data.len() as u64;
    let mut seen = BTreeMap::new();
    for p in pages {
        if p.file_offset % page_size != 0 {
            return Err(ReconstructError::UnalignedOffset(p.file_offset));
        }
        if seen.insert(p.file_offset, p).is_some() {
            return Err(ReconstructError::OverlappingOffsets(p.file_offset));
        }
    }
    let extent = size_hint.unwrap_or_else(|| {
        pages
            .iter()
            .map(|p| p.file_offset + p.data.len() as u64)
            .max()
            .unwrap()
    });
    let mut out = vec![0u8; extent as usize];
    let mut warnings = Vec::new();
    let mut offset = 0u64;
    while offset < extent {
        match seen.get(&offset) {
            Some(p) => {
                let take = (extent - offset).min(p.data.len() as u64) as usize;
                out[offset as usize..offset as usize + take].copy_from_slice(&p.data[..take]);
            }
            None => {
                log::warn!("recovery hole at offset {offset}; zero-filled");
                warnings.push(GapWarning {
                    file_offset: offset,
                });
            }
        }
        offset += page_size;
    }
    Ok((out, warnings))
}
