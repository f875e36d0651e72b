//! Synthetic workloads, scenario scripts, trace replay and CSV reporting.
//!
//! Workloads run entirely on the simulated clock: throughput numbers are
//! megabytes per simulated second, comparable across runs but deliberately
//! not against any real hardware. A fixed seed pins the whole run: file
//! schedule, contents, shuffle order, and therefore the final device image.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ftl::{Device, DeviceConfig, DeviceError, DeviceStats};
use crate::nand::{Lpa, NandGeometry};
use crate::seal::DeviceKey;
use crate::shim::{HostShim, ShimError, DEMO_DEVICE_KEY};
use crate::time::{SimDuration, SimTime};

/// 1 GiB desk-scale partition, in 4 KiB pages.
pub const PARTITION_PAGES: u64 = 262_144;

/// Geometry backing the desk-scale partition: 2 GiB raw, 1792 of 4096
/// blocks reserved as backup space so a full versioned overwrite pass fits.
pub fn bench_geometry() -> NandGeometry {
    NandGeometry {
        page_size_bytes: 4096,
        pages_per_block: 128,
        blocks_total: 4096,
        ov_zone_blocks: 1792,
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum WorkloadKind {
    /// 20 MiB files.
    Big,
    /// 32 KiB files.
    Small,
    /// 4 KiB single-page files.
    SmallMany,
}

impl WorkloadKind {
    pub fn file_pages(self) -> u64 {
        match self {
            WorkloadKind::Big => 5120,
            WorkloadKind::Small => 8,
            WorkloadKind::SmallMany => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            WorkloadKind::Big => "big",
            WorkloadKind::Small => "small",
            WorkloadKind::SmallMany => "small-many",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    /// Fraction of the partition holding unique data.
    pub capacity_ratio: f64,
    /// Fraction of files under the versioning policy.
    pub versioning_ratio: f64,
    /// Retention time of the installed policy.
    pub rt: SimDuration,
    /// Overwrite passes measured after the initial fill.
    pub rounds: u32,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, capacity_ratio: f64, versioning_ratio: f64, seed: u64) -> Self {
        WorkloadSpec {
            kind,
            capacity_ratio,
            versioning_ratio,
            rt: SimDuration::from_days(3),
            rounds: 1,
            seed,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub capacity_ratio: f64,
    pub versioning_ratio: f64,
    pub workload: WorkloadKind,
    pub bytes_written: u64,
    pub elapsed_micros: u64,
    pub mb_per_s: f64,
    pub gc_runs: u64,
    pub gc_copies: u64,
    /// (host pages + relocation copies + preserved-version pages) over
    /// host pages, for the measured phase.
    pub write_amplification: f64,
    pub ov_pages_live: u32,
    pub halted: bool,
}

fn report_from_deltas(
    spec_cap: f64,
    spec_ver: f64,
    kind: WorkloadKind,
    before: (DeviceStats, SimTime),
    dev: &Device,
) -> ThroughputReport {
    let (s0, t0) = before;
    let s1 = *dev.stats();
    let host_pages = s1.host_pages_written - s0.host_pages_written;
    let copies = (s1.gc_valid_copied - s0.gc_valid_copied)
        + (s1.ov_pages_programmed - s0.ov_pages_programmed);
    let bytes = s1.host_bytes_written - s0.host_bytes_written;
    let elapsed = dev.now().as_micros() - t0.as_micros();
    let mb_per_s = if elapsed == 0 {
        0.0
    } else {
        bytes as f64 / (1024.0 * 1024.0) / (elapsed as f64 / 1e6)
    };
    let write_amplification = if host_pages == 0 {
        1.0
    } else {
        (host_pages + copies) as f64 / host_pages as f64
    };
    ThroughputReport {
        capacity_ratio: spec_cap,
        versioning_ratio: spec_ver,
        workload: kind,
        bytes_written: bytes,
        elapsed_micros: elapsed,
        mb_per_s,
        gc_runs: s1.gc_runs - s0.gc_runs,
        gc_copies: copies,
        write_amplification,
        ov_pages_live: dev.snapshot_stats().ov_pages_live,
        halted: dev.is_halted(),
    }
}

// ---------------------------------------------------------------------
// Deterministic content
// ---------------------------------------------------------------------

fn splitmix64(x: &mut u64) -> u64 {
    *x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(parts: &[u64]) -> u64 {
    let mut x = 0x243F_6A88_85A3_08D3;
    for p in parts {
        x ^= *p;
        splitmix64(&mut x);
    }
    splitmix64(&mut x)
}

/// Seeded pseudo-random bytes; the whole byte stream is a pure function of
/// the seed.
pub fn gen_bytes(seed: u64, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    let mut x = seed;
    for chunk in out.chunks_mut(8) {
        let v = splitmix64(&mut x).to_le_bytes();
        chunk.copy_from_slice(&v[..chunk.len()]);
    }
    out
}

/// Fills every partition address once with stale junk, the way the
/// evaluation primes the disk so garbage collection has standing work. The
/// junk is written below the file system, so later file writes overwrite
/// and invalidate it in place.
pub fn prefill_partition(
    dev: &mut Device,
    partition_pages: u64,
    seed: u64,
) -> Result<(), DeviceError> {
    let psz = dev.page_size();
    let mut buf = vec![0u8; psz];
    for lpa in 0..partition_pages {
        let mut x = derive_seed(&[seed, 0xF111, lpa]);
        for chunk in buf.chunks_mut(8) {
            let v = splitmix64(&mut x).to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
        dev.host_write(Lpa(lpa as u32), &buf, None)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Trace format
// ---------------------------------------------------------------------

/// Line-delimited JSON trace record. `t` is microseconds of simulated time.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub offset: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub len: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub seed: u64,
    /// Policy command text for `op == "policy"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cmd: Option<String>,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl TraceRecord {
    fn simple(t: SimTime, op: &str) -> Self {
        TraceRecord {
            t: t.as_micros(),
            op: op.to_string(),
            file: None,
            offset: 0,
            len: 0,
            seed: 0,
            cmd: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("trace timestamps out of order at line {line}")]
    OutOfOrder { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Shim(#[from] ShimError),
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut out = Vec::new();
    let mut last_t = 0u64;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(line).map_err(|e| TraceError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if rec.t < last_t {
            return Err(TraceError::OutOfOrder { line: i + 1 });
        }
        last_t = rec.t;
        out.push(rec);
    }
    Ok(out)
}

pub fn format_trace(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------
// Workload runner
// ---------------------------------------------------------------------

pub struct RunOutcome {
    pub report: ThroughputReport,
    pub device: Device,
    pub shim: HostShim,
    pub trace: Vec<TraceRecord>,
}

fn file_name(versioned: bool, idx: u64) -> String {
    if versioned {
        format!("vault/f{idx:06}.dat")
    } else {
        format!("data/f{idx:06}.dat")
    }
}

/// Runs the workload on the standard desk-scale partition.
pub fn run_workload(spec: &WorkloadSpec) -> Result<RunOutcome, ShimError> {
    run_workload_with(spec, bench_geometry(), PARTITION_PAGES, DEMO_DEVICE_KEY)
}

/// Runs the workload on an explicit geometry; `partition_pages` bounds the
/// data set the way a partition bounds a real disk.
pub fn run_workload_with(
    spec: &WorkloadSpec,
    geometry: NandGeometry,
    partition_pages: u64,
    key: DeviceKey,
) -> Result<RunOutcome, ShimError> {
    let mut dev = Device::new(DeviceConfig::new(geometry, key))?;
    let mut shim = HostShim::new(key);
    shim.bootstrap(&mut dev);
    let mut trace: Vec<TraceRecord> = Vec::new();
    let psz = dev.page_size() as u64;

    // Prime the partition with stale data before anything else.
    trace.push(TraceRecord {
        t: dev.now().as_micros(),
        op: "prefill".into(),
        file: None,
        offset: 0,
        len: partition_pages,
        seed: spec.seed,
        cmd: None,
    });
    prefill_partition(&mut dev, partition_pages, spec.seed).map_err(ShimError::Device)?;

    let file_pages = spec.kind.file_pages();
    let n_files = ((partition_pages as f64 * spec.capacity_ratio) / file_pages as f64) as u64;
    let n_files = if spec.capacity_ratio > 0.0 { n_files.max(1) } else { 0 };
    let n_versioned = (n_files as f64 * spec.versioning_ratio).round() as u64;

    // Spread the versioned subset over the file population so versioned and
    // plain pages share blocks the way mixed real workloads do.
    let mut order: Vec<u64> = (0..n_files).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, 0xFACE]));
    order.shuffle(&mut rng);
    let versioned: std::collections::BTreeSet<u64> =
        order.iter().take(n_versioned as usize).copied().collect();

    if n_versioned > 0 {
        let cmd = format!(
            "PolicyCreate {{FileRule=vault/*}} {{RT={}sec}}",
            spec.rt.as_secs()
        );
        trace.push(TraceRecord {
            t: dev.now().as_micros(),
            op: "policy".into(),
            file: None,
            offset: 0,
            len: 0,
            seed: 0,
            cmd: Some(cmd.clone()),
        });
        shim.spm_submit(&mut dev, &cmd)?;
    }

    let file_bytes = (file_pages * psz) as usize;
    let names: Vec<String> = (0..n_files)
        .map(|i| file_name(versioned.contains(&i), i))
        .collect();

    // Initial fill: every file written once, in creation order.
    let mut halted = false;
    'fill: for (i, name) in names.iter().enumerate() {
        let seed = derive_seed(&[spec.seed, 0, i as u64]);
        trace.push(TraceRecord {
            t: dev.now().as_micros(),
            op: "write".into(),
            file: Some(name.clone()),
            offset: 0,
            len: file_bytes as u64,
            seed,
            cmd: None,
        });
        let handle = shim.open_file(&mut dev, name)?;
        match shim.write_file(&mut dev, &handle, 0, &gen_bytes(seed, file_bytes)) {
            Ok(()) => {}
            Err(ShimError::Device(DeviceError::OvZoneFullStop)) => {
                halted = true;
                break 'fill;
            }
            Err(e) => return Err(e),
        }
    }

    // Measured overwrite passes, shuffled per round.
    trace.push(TraceRecord::simple(dev.now(), "mark"));
    let before = (*dev.stats(), dev.now());
    if !halted {
        'rounds: for round in 1..=spec.rounds {
            let mut sched: Vec<usize> = (0..names.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, round as u64, 0xD00D]));
            sched.shuffle(&mut rng);
            for i in sched {
                let name = &names[i];
                let seed = derive_seed(&[spec.seed, round as u64, i as u64]);
                trace.push(TraceRecord {
                    t: dev.now().as_micros(),
                    op: "write".into(),
                    file: Some(name.clone()),
                    offset: 0,
                    len: file_bytes as u64,
                    seed,
                    cmd: None,
                });
                let handle = shim.open_file(&mut dev, name)?;
                match shim.write_file(&mut dev, &handle, 0, &gen_bytes(seed, file_bytes)) {
                    Ok(()) => {}
                    Err(ShimError::Device(DeviceError::OvZoneFullStop)) => {
                        halted = true;
                        break 'rounds;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }

    // Settle the collection debt the overwrites left behind, so reports
    // compare like for like instead of depending on how much relocation
    // happened to still be pending at the cut-off.
    if !halted {
        trace.push(TraceRecord::simple(dev.now(), "drain"));
        match dev.gc_sweep() {
            Ok(_) => {}
            Err(DeviceError::OvZoneFullStop) => halted = true,
            Err(e) => return Err(e.into()),
        }
    }

    let mut report = report_from_deltas(
        spec.capacity_ratio,
        spec.versioning_ratio,
        spec.kind,
        before,
        &dev,
    );
    report.halted = report.halted || halted;
    Ok(RunOutcome {
        report,
        device: dev,
        shim,
        trace,
    })
}

/// Replays a trace against a fresh device. The report covers everything
/// after the last `mark` record (the whole trace when there is none).
pub fn replay_trace(
    records: &[TraceRecord],
    geometry: NandGeometry,
    key: DeviceKey,
) -> Result<RunOutcome, TraceError> {
    let mut dev = Device::new(DeviceConfig::new(geometry, key)).map_err(ShimError::Device)?;
    let mut shim = HostShim::new(key);
    shim.bootstrap(&mut dev);
    let mut before = (*dev.stats(), dev.now());
    let mut kind = WorkloadKind::Big;
    let mut halted = false;

    for (i, rec) in records.iter().enumerate() {
        let line = i + 1;
        let t = SimTime(rec.t);
        if t > dev.now() {
            dev.set_time(t).map_err(ShimError::Device)?;
        }
        match rec.op.as_str() {
            "mark" => before = (*dev.stats(), dev.now()),
            "time_set" => {}
            "prefill" => {
                prefill_partition(&mut dev, rec.len, rec.seed).map_err(ShimError::Device)?;
            }
            "drain" => match dev.gc_sweep() {
                Ok(_) => {}
                Err(DeviceError::OvZoneFullStop) => halted = true,
                Err(e) => return Err(ShimError::Device(e).into()),
            },
            "policy" => {
                let cmd = rec.cmd.as_deref().ok_or_else(|| TraceError::Parse {
                    line,
                    msg: "policy record without cmd".into(),
                })?;
                shim.spm_submit(&mut dev, cmd)?;
            }
            "write" => {
                let name = rec.file.as_deref().ok_or_else(|| TraceError::Parse {
                    line,
                    msg: "write record without file".into(),
                })?;
                if rec.len >= 8 * 4096 * 64 {
                    kind = WorkloadKind::Big;
                } else if rec.len > 4096 {
                    kind = WorkloadKind::Small;
                } else {
                    kind = WorkloadKind::SmallMany;
                }
                let handle = shim.open_file(&mut dev, name)?;
                let data = gen_bytes(rec.seed, rec.len as usize);
                match shim.write_file(&mut dev, &handle, rec.offset, &data) {
                    Ok(()) => {}
                    Err(ShimError::Device(DeviceError::OvZoneFullStop)) => halted = true,
                    Err(e) => return Err(e.into()),
                }
            }
            "read" => {
                let name = rec.file.as_deref().ok_or_else(|| TraceError::Parse {
                    line,
                    msg: "read record without file".into(),
                })?;
                let handle = shim.open_file(&mut dev, name)?;
                shim.read_file(&mut dev, &handle, rec.offset, rec.len)?;
            }
            "adopt" => {
                let name = rec.file.as_deref().ok_or_else(|| TraceError::Parse {
                    line,
                    msg: "adopt record without file".into(),
                })?;
                shim.adopt_file(&mut dev, name)?;
            }
            other => {
                return Err(TraceError::Parse {
                    line,
                    msg: format!("unknown op {other:?}"),
                })
            }
        }
    }
    let mut report = report_from_deltas(0.0, 0.0, kind, before, &dev);
    report.halted = report.halted || halted;
    Ok(RunOutcome {
        report,
        device: dev,
        shim,
        trace: records.to_vec(),
    })
}

// ---------------------------------------------------------------------
// Delayed-attack scenario
// ---------------------------------------------------------------------

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ScenarioReport {
    pub secure_recovered: bool,
    pub temp_recovered: bool,
    /// Live superseded versions per file right after the attack.
    pub ov_at_attack: (u32, u32),
    /// Live superseded versions per file at detection time.
    pub ov_at_detect: (u32, u32),
}

/// Superseded versions of the file that the policy still guarantees at the
/// current time. Physically-present but expired pages awaiting collection do
/// not count; they are no longer promised to anyone.
fn ov_count(dev: &mut Device, shim: &HostShim, name: &str) -> u32 {
    let Ok(lbas) = shim.lba_list(name) else { return 0 };
    let Some(file_id) = shim.file_entry(name).and_then(|e| e.file_id) else {
        return 0;
    };
    let now = dev.now();
    let mut count = 0;
    for lba in lbas {
        let Ok(chain) = dev.chain_walk(lba) else { continue };
        for entry in chain.iter().skip(1) {
            let Some(pm) = entry.oob.pmeta else { continue };
            if pm.file_id != file_id {
                continue;
            }
            if let crate::policy::PolicyLookup::Policy(p) = dev.lookup_policy(pm.policy_id) {
                if crate::retention::pv_decide(entry.wt, entry.dead_at, p, now)
                    == crate::retention::PvDecision::Preserve
                {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Scripts the delayed attack: two files created on day 1 and updated on
/// day 2; malware encrypts both on day 4 and is detected `dwell` later; the
/// user then asks for the day-3 state of each file.
///
/// `rt_secure` protects `secure.txt` only. In full-disk mode both files are
/// covered by one uniform 3-day policy instead, mimicking a whole-disk
/// versioning device under retention pressure.
pub fn scenario_delayed_attack(
    rt_secure: SimDuration,
    dwell: SimDuration,
    full_disk: bool,
) -> Result<ScenarioReport, ShimError> {
    let geometry = NandGeometry::tiny(64, 16, 32);
    let mut dev = Device::new(DeviceConfig::new(geometry, DEMO_DEVICE_KEY))?;
    let mut shim = HostShim::new(DEMO_DEVICE_KEY);
    shim.bootstrap(&mut dev);

    let day = |d: u64, h: u64| SimTime::from_dhms(d, h, 0, 0);
    // Single-page files keep the version count per file equal to the
    // number of preserved updates.
    let file_bytes = 4096usize;

    dev.set_time(day(1, 9))?;
    if full_disk {
        shim.spm_submit(&mut dev, "PolicyCreate {FileRule=*} {RT=3day}")?;
    } else if !rt_secure.is_zero() {
        let cmd = format!(
            "PolicyCreate {{FileRule=secure.txt}} {{RT={}sec}}",
            rt_secure.as_secs()
        );
        shim.spm_submit(&mut dev, &cmd)?;
    }

    // Day 1: create. Day 2: honest update.
    let v_seed = |name: &str, version: u64| derive_seed(&[name.len() as u64, version, 0xA77AC]);
    for name in ["secure.txt", "temp.txt"] {
        let h = shim.open_file(&mut dev, name)?;
        shim.write_file(&mut dev, &h, 0, &gen_bytes(v_seed(name, 1), file_bytes))?;
    }
    dev.set_time(day(2, 9))?;
    let mut v2_content = std::collections::BTreeMap::new();
    for name in ["secure.txt", "temp.txt"] {
        let h = shim.open_file(&mut dev, name)?;
        let content = gen_bytes(v_seed(name, 2), file_bytes);
        shim.write_file(&mut dev, &h, 0, &content)?;
        v2_content.insert(name.to_string(), content);
    }

    // Day 4: the malware overwrites both files with ciphertext.
    dev.set_time(day(4, 9))?;
    for name in ["secure.txt", "temp.txt"] {
        let h = shim.open_file(&mut dev, name)?;
        shim.write_file(&mut dev, &h, 0, &gen_bytes(v_seed(name, 666), file_bytes))?;
    }
    // Background churn closes the blocks holding the superseded versions;
    // collection cannot touch a block that is still filling.
    {
        let churn_bytes = 2 * geometry.pages_per_block as usize * file_bytes;
        let h = shim.open_file(&mut dev, "churn/fill.bin")?;
        shim.write_file(&mut dev, &h, 0, &gen_bytes(v_seed("churn", 1), churn_bytes))?;
    }
    dev.gc_sweep()?;
    dev.ov_reclaim(dev.now())?;
    let ov_at_attack = (
        ov_count(&mut dev, &shim, "secure.txt"),
        ov_count(&mut dev, &shim, "temp.txt"),
    );

    // Detection, `dwell` after the attack.
    let detect = day(4, 9).saturating_add(dwell);
    dev.set_time(detect)?;
    dev.gc_sweep()?;
    dev.ov_reclaim(detect)?;
    let ov_at_detect = (
        ov_count(&mut dev, &shim, "secure.txt"),
        ov_count(&mut dev, &shim, "temp.txt"),
    );

    // Recover both files to their day-3 state.
    let recover_at = day(3, 12);
    let mut recovered = std::collections::BTreeMap::new();
    for name in ["secure.txt", "temp.txt"] {
        let entry = shim.file_entry(name).expect("file exists");
        let ok = match entry.file_id {
            None => false,
            Some(file_id) => {
                let lbas = shim.lba_list(name)?;
                match crate::recovery::fast_recover(&mut dev, file_id, recover_at, &lbas) {
                    Ok(pages) => {
                        let (bytes, gaps) =
                            crate::recovery::reconstruct(&pages, Some(entry.size)).expect("layout");
                        gaps.is_empty() && &bytes == v2_content.get(name).unwrap()
                    }
                    Err(DeviceError::NothingAtTime) => false,
                    Err(e) => return Err(e.into()),
                }
            }
        };
        recovered.insert(name.to_string(), ok);
    }

    Ok(ScenarioReport {
        secure_recovered: recovered["secure.txt"],
        temp_recovered: recovered["temp.txt"],
        ov_at_attack,
        ov_at_detect,
    })
}

// ---------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------

pub const CSV_HEADER: &str = "capacity_ratio,versioning_ratio,workload,mb_per_s,write_amp,gc_runs,ov_pages";

pub fn csv_row(r: &ThroughputReport) -> String {
    format!(
        "{:.2},{:.2},{},{:.3},{:.4},{},{}",
        r.capacity_ratio,
        r.versioning_ratio,
        r.workload.label(),
        r.mb_per_s,
        r.write_amplification,
        r.gc_runs,
        r.ov_pages_live
    )
}

/// Writes reports as CSV; emitting the same reports twice produces
/// byte-identical files.
pub fn emit_report(reports: &[ThroughputReport], path: &Path) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(f, "{}", csv_row(r))?;
    }
    Ok(())
}
