//! Piggyback metadata page framing.
//!
//! Versioned write requests carry one trailing metadata page describing the
//! policy hints for every data page in the request. Layout, little-endian:
//! magic `PGBK`, entry count u16, then per entry lpa u32, policy id u32,
//! file id u32, file offset u64. The page is zero-padded to the device page
//! size. Requests without hints carry no metadata page at all.

use crate::nand::{Lpa, PMeta};

pub const MAGIC: &[u8; 4] = b"PGBK";
const HEADER_LEN: usize = 6;
const ENTRY_LEN: usize = 20;

/// Hints one request can carry in a single metadata page.
pub fn max_entries(page_size: usize) -> usize {
    (page_size - HEADER_LEN) / ENTRY_LEN
}

pub fn encode_meta_page(entries: &[(Lpa, PMeta)], page_size: usize) -> Option<Vec<u8>> {
    if entries.len() > max_entries(page_size) || entries.len() > u16::MAX as usize {
        return None;
    }
    let mut out = Vec::with_capacity(page_size);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for (lpa, pm) in entries {
        out.extend_from_slice(&lpa.0.to_le_bytes());
        out.extend_from_slice(&pm.policy_id.to_le_bytes());
        out.extend_from_slice(&pm.file_id.to_le_bytes());
        out.extend_from_slice(&pm.file_offset.to_le_bytes());
    }
    out.resize(page_size, 0);
    Some(out)
}

pub fn decode_meta_page(page: &[u8]) -> Option<Vec<(Lpa, PMeta)>> {
    if page.len() < HEADER_LEN || &page[..4] != MAGIC {
        return None;
    }
    let count = u16::from_le_bytes(page[4..6].try_into().unwrap()) as usize;
    if HEADER_LEN + count * ENTRY_LEN > page.len() {
        return None;
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let base = HEADER_LEN + i * ENTRY_LEN;
        let e = &page[base..base + ENTRY_LEN];
        out.push((
            Lpa(u32::from_le_bytes(e[0..4].try_into().unwrap())),
            PMeta {
                policy_id: u32::from_le_bytes(e[4..8].try_into().unwrap()),
                file_id: u32::from_le_bytes(e[8..12].try_into().unwrap()),
                file_offset: u64::from_le_bytes(e[12..20].try_into().unwrap()),
            },
        ));
    }
    Some(out)
}
