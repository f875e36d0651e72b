//! Deterministic simulator of a policy-based per-file versioning SSD.
//!
//! The device keeps superseded pages of policy-covered files as recoverable
//! old versions inside a host-inaccessible zone, decides at garbage
//! collection time which versions to preserve (per-file retention time and
//! backup cycle), authenticates policy management against a vendor key, and
//! restores tampered files either through version chains or by scanning raw
//! flash.
//!
//! Modules, bottom up:
//!
//! * [`nand`]: flash geometry, pages, out-of-band records, allocation.
//! * [`ftl`]: the device itself: mapping, versioned writes, garbage
//!   collection, old-version reclamation, the command interface.
//! * [`retention`]: the preserve-or-discard decision.
//! * [`policy`] and [`seal`]: the in-device policy store behind an
//!   authenticated anti-replay channel.
//! * [`shim`]: emulated host stack (file table, policy manager, piggyback).
//! * [`recovery`]: chain-guided and full-scan restoration.
//! * [`workload`]: benchmarks, the delayed-attack scenario, trace replay.
//! * [`image`]: bit-exact device image persistence.

pub mod compress;
pub mod ftl;
pub mod glob;
pub mod image;
pub mod nand;
pub mod pgbk;
pub mod policy;
pub mod recovery;
pub mod retention;
pub mod seal;
pub mod shim;
pub mod time;
pub mod workload;

pub use ftl::{Command, Device, DeviceConfig, DeviceError, DeviceStats, GcReport, Response,
    VersionChainEntry};
pub use nand::{
    BlockId, BucketLabel, CostModel, Lpa, NandGeometry, OobRecord, PMeta, PageState, Ppa,
    RecordLoc, Zone,
};
pub use policy::{FileRegistryEntry, Policy, PolicyId, PolicyResult};
pub use recovery::{fast_recover, reconstruct, robust_recover, RecoveredPage};
pub use retention::{pv_decide, PvDecision};
pub use seal::{DeviceKey, SealedRequest};
pub use shim::{DeviceChannel, HostShim, OpenHandle, ShimError, DEMO_DEVICE_KEY};
pub use time::{SimDuration, SimTime};
pub use workload::{
    run_workload, scenario_delayed_attack, ScenarioReport, ThroughputReport, WorkloadKind,
    WorkloadSpec,
};
