//! Emulated host stack: a flat file table standing in for the file system,
//! the policy manager that maps file names to policies, the piggyback module
//! that tags page writes with policy hints, and the secure policy front-end
//! that seals management commands with the device key.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ftl::{Command, Device, DeviceError, Response};
use crate::glob::glob_match;
use crate::nand::{Lpa, PMeta};
use crate::pgbk;
use crate::policy::{
    encode_policy_request, name_digest, FileId, FileRegistryEntry, Policy, PolicyId,
    PolicyRequest, PolicyResult,
};
use crate::seal::{DeviceKey, SealError, Sealer};
use crate::time::{parse_duration, SimDuration, SimTime};

/// Vendor-installed shared key for the demo build.
pub const DEMO_DEVICE_KEY: DeviceKey = DeviceKey(*b"demo-device-key:not-a-secret!!!!");

#[derive(Debug, Error)]
pub enum ShimError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown file {0:?}")]
    UnknownFile(String),
    #[error("device unreachable during registration: {0}")]
    DeviceUnreachable(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Seal(#[from] SealError),
}

/// One versioned write request on its way to the device: the data pages plus
/// an optional trailing metadata page carrying the policy hints.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct WriteRequest {
    pub pages: Vec<(Lpa, Vec<u8>)>,
    pub meta_page: Option<Vec<u8>>,
}

/// The host's view of the device: a command channel. Tests interpose on
/// this to record or replay traffic.
pub trait DeviceChannel {
    fn execute(&mut self, cmd: Command) -> Result<Response, DeviceError>;
    fn export_metadata(&mut self) -> (Vec<Policy>, Vec<FileRegistryEntry>);
    fn now(&self) -> SimTime;
    fn page_size(&self) -> usize;

    /// Device-side ingestion of one write request: hints are untunneled
    /// from the metadata page and attached to the matching data pages.
    fn submit_write_request(&mut self, req: WriteRequest) -> Result<(), DeviceError> {
        let hints: BTreeMap<u32, PMeta> = match &req.meta_page {
            Some(page) => pgbk::decode_meta_page(page)
                .map(|v| v.into_iter().map(|(lpa, pm)| (lpa.0, pm)).collect())
                .unwrap_or_default(),
            None => BTreeMap::new(),
        };
        for (lpa, data) in req.pages {
            let pmeta = hints.get(&lpa.0).copied();
            self.execute(Command::Write { lpa, data, pmeta })?;
        }
        Ok(())
    }
}

impl DeviceChannel for Device {
    fn execute(&mut self, cmd: Command) -> Result<Response, DeviceError> {
        Device::execute(self, cmd)
    }

    fn export_metadata(&mut self) -> (Vec<Policy>, Vec<FileRegistryEntry>) {
        Device::export_metadata(self)
    }

    fn now(&self) -> SimTime {
        Device::now(self)
    }

    fn page_size(&self) -> usize {
        Device::page_size(self)
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct FileEntry {
    pub file_id: Option<FileId>,
    pub policy_id: Option<PolicyId>,
    pub lbas: Vec<u32>,
    pub size: u64,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct OpenHandle {
    pub name: String,
    /// Policy hint cached at open, cleared when the handle is dropped.
    pub cached: Option<(PolicyId, FileId)>,
}

#[derive(Clone, Serialize, Deserialize)]
pub struct HostState {
    files: BTreeMap<String, FileEntry>,
    /// Name to (policy, file id) assignments already registered on the
    /// device; replaying this log reproduces identical matches.
    assignments: BTreeMap<String, (PolicyId, FileId)>,
    next_lba: u32,
    free_lbas: BTreeSet<u32>,
    next_file_id: FileId,
    spm_counter: u64,
}

impl Default for HostState {
    fn default() -> Self {
        HostState {
            files: BTreeMap::new(),
            assignments: BTreeMap::new(),
            next_lba: 0,
            free_lbas: BTreeSet::new(),
            next_file_id: 1,
            spm_counter: 0,
        }
    }
}

pub struct HostShim {
    key: DeviceKey,
    state: HostState,
    /// Policy manager cache, refreshed from the device.
    policies: Vec<Policy>,
    /// Injected latency emulating the trusted input path.
    pub spm_latency: SimDuration,
    /// When false the write path never attaches hints; the stand-in for a
    /// host without the piggyback module.
    pub piggyback_enabled: bool,
}

impl HostShim {
    pub fn new(key: DeviceKey) -> Self {
        HostShim {
            key,
            state: HostState::default(),
            policies: Vec::new(),
            spm_latency: SimDuration::from_micros(5_000),
            piggyback_enabled: true,
        }
    }

    pub fn without_piggyback(key: DeviceKey) -> Self {
        let mut shim = Self::new(key);
        shim.piggyback_enabled = false;
        shim
    }

    /// Fetches policy metadata and the file registry from the device, as the
    /// policy manager does on startup.
    pub fn bootstrap<C: DeviceChannel>(&mut self, dev: &mut C) {
        let (policies, registry) = dev.export_metadata();
        self.policies = policies;
        let max_seen = registry.iter().map(|e| e.file_id).max().unwrap_or(0);
        if self.state.next_file_id <= max_seen {
            self.state.next_file_id = max_seen + 1;
        }
    }

    pub fn state(&self) -> &HostState {
        &self.state
    }

    pub fn files(&self) -> impl Iterator<Item = (&String, &FileEntry)> {
        self.state.files.iter()
    }

    pub fn file_entry(&self, name: &str) -> Option<&FileEntry> {
        self.state.files.get(name)
    }

    // ------------------------------------------------------------------
    // Policy manager
    // ------------------------------------------------------------------

    /// First-match lookup of the file's policy. A fresh match registers the
    /// file on the device before the result is handed out; if registration
    /// fails the match is withheld.
    pub fn pm_match<C: DeviceChannel>(
        &mut self,
        dev: &mut C,
        name: &str,
    ) -> Result<Option<(PolicyId, FileId)>, ShimError> {
        if !self.piggyback_enabled {
            return Ok(None);
        }
        // Creation order is id order; the earliest matching rule wins.
        let matched = self
            .policies
            .iter()
            .find(|p| glob_match(&p.rule, name))
            .map(|p| p.id);
        let Some(policy_id) = matched else {
            return Ok(None);
        };
        let file_id = match self.state.assignments.get(name) {
            Some((assigned_policy, file_id)) if *assigned_policy == policy_id => {
                return Ok(Some((policy_id, *file_id)));
            }
            Some((_, file_id)) => *file_id,
            None => {
                let id = self.state.next_file_id;
                self.state.next_file_id += 1;
                id
            }
        };
        dev.execute(Command::FileRegister {
            policy_id,
            file_id,
            name_digest: name_digest(name),
        })
        .map_err(|e| ShimError::DeviceUnreachable(e.to_string()))?;
        self.state
            .assignments
            .insert(name.to_string(), (policy_id, file_id));
        Ok(Some((policy_id, file_id)))
    }

    // ------------------------------------------------------------------
    // File I/O
    // ------------------------------------------------------------------

    pub fn open_file<C: DeviceChannel>(
        &mut self,
        dev: &mut C,
        name: &str,
    ) -> Result<OpenHandle, ShimError> {
        let cached = self.pm_match(dev, name)?;
        let entry = self.state.files.entry(name.to_string()).or_insert(FileEntry {
            file_id: None,
            policy_id: None,
            lbas: Vec::new(),
            size: 0,
        });
        if let Some((pid, fid)) = cached {
            entry.policy_id = Some(pid);
            entry.file_id = Some(fid);
        }
        Ok(OpenHandle {
            name: name.to_string(),
            cached,
        })
    }

    fn alloc_lba(&mut self) -> Lpa {
        if let Some(&lba) = self.state.free_lbas.iter().next() {
            self.state.free_lbas.remove(&lba);
            return Lpa(lba);
        }
        let lba = self.state.next_lba;
        self.state.next_lba += 1;
        Lpa(lba)
    }

    /// Splits the byte range on page boundaries and ships it to the device,
    /// hints piggybacked per page for policy-matched handles. Partial head
    /// and tail pages are read-modify-write.
    pub fn write_file<C: DeviceChannel>(
        &mut self,
        dev: &mut C,
        handle: &OpenHandle,
        offset: u64,
        bytes: &[u8],
    ) -> Result<(), ShimError> {
        if bytes.is_empty() {
            return Ok(());
        }
        let page_size = dev.page_size();
        let psz = page_size as u64;
        if !self.state.files.contains_key(&handle.name) {
            return Err(ShimError::UnknownFile(handle.name.clone()));
        }

        // Size grows before any page hits the device, so every hint's
        // offset is inside the file.
        {
            let entry = self.state.files.get_mut(&handle.name).unwrap();
            entry.size = entry.size.max(offset + bytes.len() as u64);
        }

        let first_page = offset / psz;
        let last_page = (offset + bytes.len() as u64 - 1) / psz;

        // Ensure the block list covers the written range.
        let needed = (last_page + 1) as usize;
        let mut fresh = Vec::new();
        {
            let have = self.state.files.get(&handle.name).unwrap().lbas.len();
            for _ in have..needed {
                fresh.push(self.alloc_lba().0);
            }
            let entry = self.state.files.get_mut(&handle.name).unwrap();
            entry.lbas.extend(fresh);
        }

        let mut page_writes: Vec<(Lpa, Vec<u8>)> = Vec::new();
        for page_idx in first_page..=last_page {
            let lba = Lpa(self.state.files[&handle.name].lbas[page_idx as usize]);
            let page_start = page_idx * psz;
            let copy_from = offset.max(page_start);
            let copy_to = (offset + bytes.len() as u64).min(page_start + psz);
            let mut page = if copy_from == page_start && copy_to == page_start + psz {
                Vec::with_capacity(page_size)
            } else {
                // Partial page: merge with what is already stored.
                match dev.execute(Command::Read { lpa: lba }) {
                    Ok(Response::Data(d)) => d,
                    Ok(_) => unreachable!(),
                    Err(DeviceError::UnmappedLpa(_)) => vec![0u8; page_size],
                    Err(e) => return Err(e.into()),
                }
            };
            page.resize(page_size, 0);
            let dst = (copy_from - page_start) as usize;
            let src = (copy_from - offset) as usize;
            let n = (copy_to - copy_from) as usize;
            page[dst..dst + n].copy_from_slice(&bytes[src..src + n]);
            page_writes.push((lba, page));
        }

        match handle.cached {
            Some((policy_id, file_id)) if self.piggyback_enabled => {
                // One metadata page rides along per request; oversized
                // writes are split into as many requests as needed.
                let chunk = pgbk::max_entries(page_size);
                let mut base = first_page;
                for batch in page_writes.chunks(chunk) {
                    let hints: Vec<(Lpa, PMeta)> = batch
                        .iter()
                        .enumerate()
                        .map(|(i, (lba, _))| {
                            (
                                *lba,
                                PMeta {
                                    policy_id,
                                    file_id,
                                    file_offset: (base + i as u64) * psz,
                                },
                            )
                        })
                        .collect();
                    let meta_page = pgbk::encode_meta_page(&hints, page_size)
                        .expect("chunked to the metadata page capacity");
                    dev.submit_write_request(WriteRequest {
                        pages: batch.to_vec(),
                        meta_page: Some(meta_page),
                    })?;
                    base += batch.len() as u64;
                }
            }
            _ => {
                dev.submit_write_request(WriteRequest {
                    pages: page_writes,
                    meta_page: None,
                })?;
            }
        }
        Ok(())
    }

    /// Byte-range read; stops short where pages were never written.
    pub fn read_file<C: DeviceChannel>(
        &mut self,
        dev: &mut C,
        handle: &OpenHandle,
        offset: u64,
        len: u64,
    ) -> Result<Vec<u8>, ShimError> {
        let page_size = dev.page_size() as u64;
        let entry = self
            .state
            .files
            .get(&handle.name)
            .ok_or_else(|| ShimError::UnknownFile(handle.name.clone()))?
            .clone();
        let end = (offset + len).min(entry.size);
        if offset >= end {
            return Ok(Vec::new());
        }
        let mut out = Vec::with_capacity((end - offset) as usize);
        let mut pos = offset;
        while pos < end {
            let page_idx = (pos / page_size) as usize;
            let Some(&lba) = entry.lbas.get(page_idx) else { break };
            let page = match dev.execute(Command::Read { lpa: Lpa(lba) }) {
                Ok(Response::Data(d)) => d,
                Ok(_) => unreachable!(),
                Err(DeviceError::UnmappedLpa(_)) => break,
                Err(e) => return Err(e.into()),
            };
            let page_start = page_idx as u64 * page_size;
            let take_from = (pos - page_start) as usize;
            let take_to = ((end - page_start).min(page_size)) as usize;
            out.extend_from_slice(&page[take_from..take_to]);
            pos = page_start + take_to as u64;
        }
        Ok(out)
    }

    /// Current block list of a file, as fast recovery wants it.
    pub fn lba_list(&self, name: &str) -> Result<Vec<Lpa>, ShimError> {
        self.state
            .files
            .get(name)
            .map(|e| e.lbas.iter().map(|&l| Lpa(l)).collect())
            .ok_or_else(|| ShimError::UnknownFile(name.to_string()))
    }

    /// Rewrites a file in place so a policy created after the fact covers
    /// its existing pages.
    pub fn adopt_file<C: DeviceChannel>(
        &mut self,
        dev: &mut C,
        name: &str,
    ) -> Result<bool, ShimError> {
        if self.file_entry(name).is_none() {
            return Err(ShimError::UnknownFile(name.to_string()));
        }
        let handle = self.open_file(dev, name)?;
        if handle.cached.is_none() {
            return Ok(false);
        }
        let size = self.file_entry(name).unwrap().size;
        let content = self.read_file(dev, &handle, 0, size)?;
        self.write_file(dev, &handle, 0, &content)?;
        Ok(true)
    }

    pub fn remove_file(&mut self, name: &str) -> Result<(), ShimError> {
        let entry = self
            .state
            .files
            .remove(name)
            .ok_or_else(|| ShimError::UnknownFile(name.to_string()))?;
        self.state.free_lbas.extend(entry.lbas);
        Ok(())
    }

    // ------------------------------------------------------------------
    // Secure policy management front-end
    // ------------------------------------------------------------------

    /// Parses a policy management command, seals it with the device key and
    /// submits it. The trusted input path is emulated by a fixed injected
    /// latency.
    pub fn spm_submit<C: DeviceChannel>(
        &mut self,
        dev: &mut C,
        command: &str,
    ) -> Result<PolicyResult, ShimError> {
        let request = parse_spm_command(command)?;
        if !self.spm_latency.is_zero() {
            let t = dev.now().saturating_add(self.spm_latency);
            dev.execute(Command::TimeSet { t })?;
        }
        let mut sealer = Sealer::new(self.key, self.state.spm_counter);
        let sealed = sealer.seal_next(&encode_policy_request(&request));
        self.state.spm_counter = sealer.last_counter();
        let result = match dev.execute(Command::PolicyReq { sealed })? {
            Response::Policy(r) => r,
            _ => unreachable!(),
        };
        self.bootstrap(dev);
        Ok(result)
    }

    /// Restores host-side state persisted in a sidecar file.
    pub fn with_state(key: DeviceKey, state: HostState) -> Self {
        let mut shim = Self::new(key);
        shim.state = state;
        shim
    }
}

/// Splits `Verb {K=V} {K=V}` into its verb and key-value groups.
fn split_spm_groups(text: &str) -> Result<(String, Vec<(String, String)>), ShimError> {
    let text = text.trim().trim_start_matches('$');
    let verb_end = text.find('{').unwrap_or(text.len());
    let verb = text[..verb_end].trim().trim_matches('}').to_string();
    let mut groups = Vec::new();
    let mut rest = &text[verb_end..];
    while let Some(open) = rest.find('{') {
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| ShimError::Parse("unbalanced braces".into()))?
            + open;
        let inner = &rest[open + 1..close];
        match inner.split_once('=') {
            Some((k, v)) => groups.push((k.trim().to_string(), v.trim().to_string())),
            None => return Err(ShimError::Parse(format!("expected key=value in {{{inner}}}"))),
        }
        rest = &rest[close + 1..];
    }
    Ok((verb, groups))
}

/// Grammar: `PolicyCreate {FileRule=...} {RT=...} {BC=...}`,
/// `PolicyChange {Id=...} {RT=...} {BC=...}`, `PolicyDelete {Id=...}`.
pub fn parse_spm_command(text: &str) -> Result<PolicyRequest, ShimError> {
    let (verb, groups) = split_spm_groups(text)?;
    let mut rule = None;
    let mut id = None;
    let mut rt = None;
    let mut bc = None;
    for (k, v) in &groups {
        match k.to_ascii_lowercase().as_str() {
            "filerule" => rule = Some(v.clone()),
            "id" => {
                id = Some(v.parse::<u32>().map_err(|_| {
                    ShimError::Parse(format!("bad policy id {v:?}"))
                })?)
            }
            "rt" => {
                rt = Some(parse_duration(v).ok_or_else(|| {
                    ShimError::Parse(format!("bad duration {v:?}"))
                })?)
            }
            "bc" => {
                bc = Some(parse_duration(v).ok_or_else(|| {
                    ShimError::Parse(format!("bad duration {v:?}"))
                })?)
            }
            other => return Err(ShimError::Parse(format!("unknown field {other:?}"))),
        }
    }
    match verb.as_str() {
        "PolicyCreate" => Ok(PolicyRequest::Create {
            requested_id: id.unwrap_or(0),
            rt,
            bc,
            rule: rule.ok_or_else(|| ShimError::Parse("PolicyCreate needs FileRule".into()))?,
        }),
        "PolicyChange" => Ok(PolicyRequest::Change {
            id: id.ok_or_else(|| ShimError::Parse("PolicyChange needs Id".into()))?,
            rt,
            bc,
        }),
        "PolicyDelete" => Ok(PolicyRequest::Delete {
            id: id.ok_or_else(|| ShimError::Parse("PolicyDelete needs Id".into()))?,
        }),
        other => Err(ShimError::Parse(format!("unknown command {other:?}"))),
    }
}

pub fn save_host_state(state: &HostState, path: &Path) -> std::io::Result<()> {
    let json = serde_json::to_string_pretty(state)?;
    std::fs::write(path, json)
}

pub fn load_host_state(path: &Path) -> std::io::Result<HostState> {
    let json = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&json)?)
}
