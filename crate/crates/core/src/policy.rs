//! In-device policy store and the append-only versioned-file registry.
//!
//! Policy mutations arrive sealed; the store verifies them against the
//! device key before touching anything. Deleted policies leave tombstones so
//! ids are never reused and the garbage collector can drop their pages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seal::{verify, DeviceKey, SealedRequest, VerifyError};
use crate::time::{SimDuration, SimTime};

pub type PolicyId = u32;
pub type FileId = u32;

pub const DIGEST_LEN: usize = 32;

/// A versioning policy: how long superseded versions of matching files stay
/// recoverable.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Policy {
    pub id: PolicyId,
    /// Retention time: versions stay recoverable this long after they are
    /// superseded.
    pub rt: Option<SimDuration>,
    /// Backup cycle: the version alive at each cycle boundary is kept.
    pub bc: Option<SimDuration>,
    /// Glob matched against full file paths.
    pub rule: String,
    pub created_at: SimTime,
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct FileRegistryEntry {
    pub file_id: FileId,
    pub policy_id: PolicyId,
    pub name_digest: [u8; DIGEST_LEN],
    pub registered_at: SimTime,
}

pub fn name_digest(name: &str) -> [u8; DIGEST_LEN] {
    Sha256::digest(name.as_bytes()).into()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("authentication failed")]
    AuthFailed,
    #[error("replayed request counter")]
    ReplayDetected,
    #[error("unknown policy {0}")]
    UnknownPolicy(PolicyId),
    #[error("duplicate policy")]
    DuplicatePolicy,
    #[error("malformed policy request")]
    InvalidRequest,
}

impl From<VerifyError> for PolicyError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::AuthFailed => PolicyError::AuthFailed,
            VerifyError::ReplayDetected { .. } => PolicyError::ReplayDetected,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RequestOp {
    Create = 1,
    Change = 2,
    Delete = 3,
}

/// Decoded policy request. The configuration parameters always travel as a
/// complete pair; zero seconds on the wire means "not set".
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum PolicyRequest {
    Create {
        /// 0 asks the device to assign the id.
        requested_id: PolicyId,
        rt: Option<SimDuration>,
        bc: Option<SimDuration>,
        rule: String,
    },
    Change {
        id: PolicyId,
        rt: Option<SimDuration>,
        bc: Option<SimDuration>,
    },
    Delete {
        id: PolicyId,
    },
}

/// Payload layout, little-endian: op u8, policy id u32, RT seconds u64,
/// BC seconds u64, rule length u16, rule bytes.
pub fn encode_policy_request(req: &PolicyRequest) -> Vec<u8> {
    let (op, id, rt, bc, rule) = match req {
        PolicyRequest::Create {
            requested_id,
            rt,
            bc,
            rule,
        } => (1u8, *requested_id, *rt, *bc, rule.as_str()),
        PolicyRequest::Change { id, rt, bc } => (2, *id, *rt, *bc, ""),
        PolicyRequest::Delete { id } => (3, *id, None, None, ""),
    };
    let mut out = Vec::with_capacity(23 + rule.len());
    out.push(op);
    out.extend_from_slice(&id.to_le_bytes());
    out.extend_from_slice(&rt.map_or(0, |d| d.as_secs()).to_le_bytes());
    out.extend_from_slice(&bc.map_or(0, |d| d.as_secs()).to_le_bytes());
    out.extend_from_slice(&(rule.len() as u16).to_le_bytes());
    out.extend_from_slice(rule.as_bytes());
    out
}

pub fn parse_policy_request(bytes: &[u8]) -> Result<PolicyRequest, PolicyError> {
    if bytes.len() < 23 {
        return Err(PolicyError::InvalidRequest);
    }
    let op = bytes[0];
    let id = u32::from_le_bytes(bytes[1..5].try_into().unwrap());
    let rt_secs = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let bc_secs = u64::from_le_bytes(bytes[13..21].try_into().unwrap());
    let rule_len = u16::from_le_bytes(bytes[21..23].try_into().unwrap()) as usize;
    if bytes.len() != 23 + rule_len {
        return Err(PolicyError::InvalidRequest);
    }
    let rule = std::str::from_utf8(&bytes[23..])
        .map_err(|_| PolicyError::InvalidRequest)?
        .to_string();
    let rt = (rt_secs != 0).then(|| SimDuration::from_secs(rt_secs));
    let bc = (bc_secs != 0).then(|| SimDuration::from_secs(bc_secs));
    match op {
        1 => Ok(PolicyRequest::Create {
            requested_id: id,
            rt,
            bc,
            rule,
        }),
        2 => Ok(PolicyRequest::Change { id, rt, bc }),
        3 => Ok(PolicyRequest::Delete { id }),
        _ => Err(PolicyError::InvalidRequest),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PolicyResult {
    Created { id: PolicyId },
    Changed { id: PolicyId },
    Deleted { id: PolicyId },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PolicyLookup<'a> {
    Policy(&'a Policy),
    Tombstone,
    Unknown,
}

#[derive(Default)]
pub struct PolicyStore {
    policies: BTreeMap<PolicyId, Policy>,
    tombstones: Vec<PolicyId>,
    registry: Vec<FileRegistryEntry>,
    /// Index over (policy, file) pairs for duplicate suppression.
    registered: std::collections::BTreeSet<(PolicyId, FileId)>,
    next_id: PolicyId,
    last_counter: u64,
}

impl PolicyStore {
    pub fn new() -> Self {
        PolicyStore {
            next_id: 1,
            ..Default::default()
        }
    }

    pub fn last_counter(&self) -> u64 {
        self.last_counter
    }

    /// Verifies the seal, then applies the request.
    pub fn apply_sealed_request(
        &mut self,
        sealed: &SealedRequest,
        key: &DeviceKey,
        now: SimTime,
    ) -> Result<PolicyResult, PolicyError> {
        let (payload, new_counter) = verify(sealed, key, self.last_counter)?;
        let req = parse_policy_request(payload)?;
        // The counter advances only for authenticated requests; malformed or
        // semantically invalid ones do not burn it either.
        let result = self.apply_request(&req, now)?;
        self.last_counter = new_counter;
        Ok(result)
    }

    fn apply_request(&mut self, req: &PolicyRequest, now: SimTime) -> Result<PolicyResult, PolicyError> {
        match req {
            PolicyRequest::Create {
                requested_id,
                rt,
                bc,
                rule,
            } => {
                if rule.is_empty() || (rt.is_none() && bc.is_none()) {
                    return Err(PolicyError::InvalidRequest);
                }
                if self.policies.values().any(|p| p.rule == *rule) {
                    return Err(PolicyError::DuplicatePolicy);
                }
                let id = if *requested_id == 0 {
                    let id = self.next_id;
                    self.next_id += 1;
                    id
                } else {
                    if self.policies.contains_key(requested_id)
                        || self.tombstones.contains(requested_id)
                    {
                        return Err(PolicyError::DuplicatePolicy);
                    }
                    self.next_id = self.next_id.max(requested_id + 1);
                    *requested_id
                };
                self.policies.insert(
                    id,
                    Policy {
                        id,
                        rt: *rt,
                        bc: *bc,
                        rule: rule.clone(),
                        created_at: now,
                    },
                );
                Ok(PolicyResult::Created { id })
            }
            PolicyRequest::Change { id, rt, bc } => {
                if rt.is_none() && bc.is_none() {
                    return Err(PolicyError::InvalidRequest);
                }
                let policy = self
                    .policies
                    .get_mut(id)
                    .ok_or(PolicyError::UnknownPolicy(*id))?;
                // Only the configuration parameters change; the rule is fixed.
                policy.rt = *rt;
                policy.bc = *bc;
                Ok(PolicyResult::Changed { id: *id })
            }
            PolicyRequest::Delete { id } => {
                if self.policies.remove(id).is_none() {
                    return Err(PolicyError::UnknownPolicy(*id));
                }
                self.tombstones.push(*id);
                Ok(PolicyResult::Deleted { id: *id })
            }
        }
    }

    pub fn lookup(&self, id: PolicyId) -> PolicyLookup<'_> {
        if let Some(p) = self.policies.get(&id) {
            PolicyLookup::Policy(p)
        } else if self.tombstones.contains(&id) {
            PolicyLookup::Tombstone
        } else {
            PolicyLookup::Unknown
        }
    }

    /// Registers a file under a policy. Re-registration of the same pair is
    /// a no-op; nothing is ever removed.
    pub fn register_file(
        &mut self,
        policy_id: PolicyId,
        file_id: FileId,
        name_digest: [u8; DIGEST_LEN],
        now: SimTime,
    ) -> Result<(), PolicyError> {
        if !self.policies.contains_key(&policy_id) {
            return Err(PolicyError::UnknownPolicy(policy_id));
        }
        if !self.registered.insert((policy_id, file_id)) {
            return Ok(());
        }
        self.registry.push(FileRegistryEntry {
            file_id,
            policy_id,
            name_digest,
            registered_at: now,
        });
        Ok(())
    }

    /// Read-only snapshot for host bootstrap.
    pub fn export_metadata(&self) -> (Vec<Policy>, Vec<FileRegistryEntry>) {
        (
            self.policies.values().cloned().collect(),
            self.registry.clone(),
        )
    }

    /// Live policies in creation (id) order.
    pub fn policies(&self) -> impl Iterator<Item = &Policy> {
        self.policies.values()
    }

    pub fn registry_len(&self) -> usize {
        self.registry.len()
    }

    pub(crate) fn snapshot(&self) -> PolicyStoreState {
        PolicyStoreState {
            policies: self.policies.values().cloned().collect(),
            tombstones: self.tombstones.clone(),
            registry: self.registry.clone(),
            next_id: self.next_id,
            last_counter: self.last_counter,
        }
    }

    pub(crate) fn restore(state: PolicyStoreState) -> Self {
        let registered = state
            .registry
            .iter()
            .map(|e| (e.policy_id, e.file_id))
            .collect();
        PolicyStore {
            policies: state.policies.into_iter().map(|p| (p.id, p)).collect(),
            tombstones: state.tombstones,
            registry: state.registry,
            registered,
            next_id: state.next_id,
            last_counter: state.last_counter,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub(crate) struct PolicyStoreState {
    pub policies: Vec<Policy>,
    pub tombstones: Vec<PolicyId>,
    pub registry: Vec<FileRegistryEntry>,
    pub next_id: PolicyId,
    pub last_counter: u64,
}
