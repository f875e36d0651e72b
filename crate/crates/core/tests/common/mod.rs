//! Shared oracles for the integration suites: a shadow write log with a
//! brute-force preservation filter, shadow files for recovery checks, and a
//! channel recorder for command-stream comparisons.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};
use vssd_core::ftl::{Command, Response};
use vssd_core::policy::{encode_policy_request, FileRegistryEntry, Policy, PolicyRequest};
use vssd_core::seal::Sealer;
use vssd_core::shim::{DeviceChannel, WriteRequest};
use vssd_core::{Device, DeviceError, DeviceKey, Lpa, PMeta, SimDuration, SimTime};

pub const TEST_KEY: DeviceKey = DeviceKey([0x77; 32]);

// ---------------------------------------------------------------------
// Shadow write log + brute-force preservation oracle
// ---------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ShadowVersion {
    pub wt: SimTime,
    pub bytes: Vec<u8>,
    pub pmeta: Option<PMeta>,
}

/// Records every host write; the device is never consulted for the
/// expected answers.
#[derive(Default)]
pub struct ShadowLog {
    pub versions: BTreeMap<u32, Vec<ShadowVersion>>,
}

impl ShadowLog {
    pub fn record(&mut self, lpa: Lpa, wt: SimTime, bytes: &[u8], pmeta: Option<PMeta>) {
        self.versions.entry(lpa.0).or_default().push(ShadowVersion {
            wt,
            bytes: bytes.to_vec(),
            pmeta,
        });
    }

    /// Brute force: every version ever written, filtered by the retention
    /// inequality and an enumerated backup grid with its one-cycle-past-
    /// last-point horizon. Heads always survive.
    pub fn oracle_preserved(
        &self,
        policies: &BTreeMap<u32, Policy>,
        now: SimTime,
    ) -> BTreeSet<(u32, u64)> {
        let mut keep = BTreeSet::new();
        for (lpa, versions) in &self.versions {
            for (i, v) in versions.iter().enumerate() {
                let dead_at = versions
                    .get(i + 1)
                    .map(|next| next.wt)
                    .unwrap_or(SimTime::INFINITY);
                let is_head = i + 1 == versions.len();
                if is_head {
                    keep.insert((*lpa, v.wt.as_micros()));
                    continue;
                }
                let Some(pm) = v.pmeta else { continue };
                let Some(policy) = policies.get(&pm.policy_id) else { continue };
                let rt_keeps = policy
                    .rt
                    .is_some_and(|rt| dead_at.saturating_add(rt) > now);
                let bc_keeps = policy.bc.is_some_and(|bc| {
                    match last_covered_grid_bruteforce(v.wt, dead_at, bc) {
                        None => false,
                        Some(last) => {
                            // Covered pages are held one further cycle past
                            // the last witnessed grid point; a retention
                            // time extends that to its own horizon.
                            let horizon = match policy.rt {
                                Some(rt) => {
                                    dead_at.saturating_add(if rt > bc { rt } else { bc })
                                }
                                None => SimTime(last).saturating_add(bc),
                            };
                            now < horizon
                        }
                    }
                });
                if rt_keeps || bc_keeps {
                    keep.insert((*lpa, v.wt.as_micros()));
                }
            }
        }
        keep
    }

    pub fn bytes_of(&self, lpa: u32, wt: SimTime) -> Option<&[u8]> {
        self.versions
            .get(&lpa)?
            .iter()
            .find(|v| v.wt == wt)
            .map(|v| v.bytes.as_slice())
    }
}

/// Grid coverage by exhaustive enumeration, independent of the closed-form
/// check inside the device.
pub fn bc_covered_bruteforce(wt: SimTime, dead_at: SimTime, bc: SimDuration) -> bool {
    last_covered_grid_bruteforce(wt, dead_at, bc).is_some()
        || dead_at == SimTime::INFINITY
}

/// The last grid point inside `[wt, dead_at]`, found by walking the grid.
pub fn last_covered_grid_bruteforce(
    wt: SimTime,
    dead_at: SimTime,
    bc: SimDuration,
) -> Option<u64> {
    if dead_at == SimTime::INFINITY {
        return Some(u64::MAX);
    }
    let period = bc.as_micros();
    let mut k = wt.as_micros() / period;
    let mut last = None;
    loop {
        let t = k.saturating_mul(period);
        if t > dead_at.as_micros() {
            return last;
        }
        if t >= wt.as_micros() {
            last = Some(t);
        }
        k += 1;
    }
}

// ---------------------------------------------------------------------
// Policy helpers
// ---------------------------------------------------------------------

pub struct PolicyDesk {
    pub sealer: Sealer,
    pub table: BTreeMap<u32, Policy>,
}

impl PolicyDesk {
    pub fn new(key: DeviceKey) -> Self {
        PolicyDesk {
            sealer: Sealer::new(key, 0),
            table: BTreeMap::new(),
        }
    }

    pub fn create(
        &mut self,
        dev: &mut Device,
        rule: &str,
        rt: Option<SimDuration>,
        bc: Option<SimDuration>,
    ) -> u32 {
        let req = PolicyRequest::Create {
            requested_id: 0,
            rt,
            bc,
            rule: rule.to_string(),
        };
        let sealed = self.sealer.seal_next(&encode_policy_request(&req));
        let id = match dev.apply_policy_request(&sealed).unwrap() {
            vssd_core::PolicyResult::Created { id } => id,
            other => panic!("unexpected {other:?}"),
        };
        self.table.insert(
            id,
            Policy {
                id,
                rt,
                bc,
                rule: rule.to_string(),
                created_at: dev.now(),
            },
        );
        id
    }
}

// ---------------------------------------------------------------------
// Command-stream recorder
// ---------------------------------------------------------------------

/// Wraps a device and hashes a canonical encoding of everything the host
/// sends; two hosts producing the same digest sent byte-identical streams.
pub struct Recording<'a> {
    pub dev: &'a mut Device,
    hasher: Sha256,
    pub commands: u64,
}

impl<'a> Recording<'a> {
    pub fn new(dev: &'a mut Device) -> Self {
        Recording {
            dev,
            hasher: Sha256::new(),
            commands: 0,
        }
    }

    pub fn digest(self) -> [u8; 32] {
        self.hasher.finalize().into()
    }

    fn hash_command(&mut self, cmd: &Command) {
        self.commands += 1;
        match cmd {
            Command::Write { lpa, data, pmeta } => {
                self.hasher.update([1u8]);
                self.hasher.update(lpa.0.to_le_bytes());
                self.hasher.update((data.len() as u64).to_le_bytes());
                self.hasher.update(data);
                match pmeta {
                    Some(pm) => {
                        self.hasher.update([1u8]);
                        self.hasher.update(pm.policy_id.to_le_bytes());
                        self.hasher.update(pm.file_id.to_le_bytes());
                        self.hasher.update(pm.file_offset.to_le_bytes());
                    }
                    None => self.hasher.update([0u8]),
                }
            }
            Command::Read { lpa } => {
                self.hasher.update([2u8]);
                self.hasher.update(lpa.0.to_le_bytes());
            }
            Command::PolicyReq { sealed } => {
                self.hasher.update([3u8]);
                self.hasher.update(sealed.counter.to_le_bytes());
                self.hasher.update(&sealed.payload);
                self.hasher.update(sealed.tag);
            }
            Command::FileRegister {
                policy_id,
                file_id,
                name_digest,
            } => {
                self.hasher.update([4u8]);
                self.hasher.update(policy_id.to_le_bytes());
                self.hasher.update(file_id.to_le_bytes());
                self.hasher.update(name_digest);
            }
            Command::RecoverFast { file_id, at, lbas } => {
                self.hasher.update([5u8]);
                self.hasher.update(file_id.to_le_bytes());
                self.hasher.update(at.as_micros().to_le_bytes());
                for l in lbas {
                    self.hasher.update(l.0.to_le_bytes());
                }
            }
            Command::RecoverRobust { file_id, at } => {
                self.hasher.update([6u8]);
                self.hasher.update(file_id.to_le_bytes());
                self.hasher.update(at.as_micros().to_le_bytes());
            }
            Command::TimeSet { t } => {
                self.hasher.update([7u8]);
                self.hasher.update(t.as_micros().to_le_bytes());
            }
            Command::Stats => self.hasher.update([8u8]),
        }
    }
}

impl DeviceChannel for Recording<'_> {
    fn execute(&mut self, cmd: Command) -> Result<Response, DeviceError> {
        self.hash_command(&cmd);
        self.dev.execute(cmd)
    }

    fn export_metadata(&mut self) -> (Vec<Policy>, Vec<FileRegistryEntry>) {
        Device::export_metadata(self.dev)
    }

    fn now(&self) -> SimTime {
        self.dev.now()
    }

    fn page_size(&self) -> usize {
        self.dev.page_size()
    }

    fn submit_write_request(&mut self, req: WriteRequest) -> Result<(), DeviceError> {
        // Hash the request boundary itself: page payload plus the presence
        // and bytes of the piggybacked metadata page.
        self.hasher.update(b"REQ");
        self.hasher.update((req.pages.len() as u32).to_le_bytes());
        for (lpa, data) in &req.pages {
            self.hasher.update(lpa.0.to_le_bytes());
            self.hasher.update(data);
        }
        match &req.meta_page {
            Some(m) => {
                self.hasher.update([1u8]);
                self.hasher.update(m);
            }
            None => self.hasher.update([0u8]),
        }
        self.commands += 1;
        self.dev.submit_write_request(req)
    }
}

// ---------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------

pub fn splitmix64(x: &mut u64) -> u64 {
    *x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded_page(seed: u64, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    let mut x = seed;
    for chunk in out.chunks_mut(8) {
        let v = splitmix64(&mut x).to_le_bytes();
        chunk.copy_from_slice(&v[..chunk.len()]);
    }
    out
}

/// Write-and-observe: issues the write, then reads back the head's actual
/// write timestamp for the shadow log.
pub fn shadow_write(
    dev: &mut Device,
    shadow: &mut ShadowLog,
    lpa: Lpa,
    data: &[u8],
    pmeta: Option<PMeta>,
) -> Result<(), DeviceError> {
    dev.host_write(lpa, data, pmeta)?;
    let head = dev.chain_walk(lpa)?[0];
    shadow.record(lpa, head.wt, data, head.oob.pmeta);
    Ok(())
}
