//! `sim`: command-line front end for the versioning SSD simulator.
//!
//! The device lives in an image file (`--image`, `$SIM_IMAGE`, or
//! `./sim.img`); host-side state (file table, policy manager cache,
//! front-end counter) rides in a JSON sidecar next to it. Benchmarks and
//! scenarios run on fresh in-memory devices unless told to persist.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vssd_core::ftl::{Command as DevCommand, Response};
use vssd_core::image;
use vssd_core::shim::{load_host_state, save_host_state, HostShim, DEMO_DEVICE_KEY};
use vssd_core::time::{parse_duration, parse_sim_time};
use vssd_core::workload::{
    self, emit_report, format_trace, parse_trace, replay_trace, run_workload,
    scenario_delayed_attack, WorkloadKind, WorkloadSpec,
};
use vssd_core::{
    fast_recover, reconstruct, robust_recover, Device, DeviceConfig, DeviceError, NandGeometry,
    SimDuration,
};

#[derive(Parser)]
#[command(name = "sim", version, about = "Policy-based versioning SSD simulator")]
struct Cli {
    /// Device image path; falls back to $SIM_IMAGE, then ./sim.img.
    #[arg(long, global = true)]
    image: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a fresh device image.
    Init(InitArgs),
    /// Policy management through the secure front end.
    Policy {
        #[command(subcommand)]
        cmd: PolicyCmd,
    },
    /// File operations through the emulated host stack.
    Fs {
        #[command(subcommand)]
        cmd: FsCmd,
    },
    /// Restore a file to an earlier point in time.
    Recover(RecoverArgs),
    /// Run a synthetic overwrite workload on a fresh desk-scale device.
    Bench(BenchArgs),
    /// Scripted end-to-end scenarios.
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
    /// Replay a recorded trace against a fresh device.
    Replay(ReplayArgs),
    /// Advance the simulated clock.
    Time {
        #[command(subcommand)]
        cmd: TimeCmd,
    },
    /// Print device statistics.
    Stats,
    /// Write the canonical image bytes.
    DumpImage {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct InitArgs {
    #[arg(long, default_value_t = 4096)]
    page_size: u32,
    #[arg(long, default_value_t = 128)]
    pages_per_block: u32,
    #[arg(long, default_value_t = 2048)]
    blocks: u32,
    /// Backup-space size in blocks.
    #[arg(long, default_value_t = 512)]
    ov_blocks: u32,
    /// Build without the versioning module (plain FTL baseline).
    #[arg(long)]
    plain: bool,
}

#[derive(Subcommand)]
enum PolicyCmd {
    /// Install a policy, e.g. --rule '*.pdf' --rt 1year --bc 1day.
    Create {
        #[arg(long)]
        rule: String,
        #[arg(long)]
        rt: Option<String>,
        #[arg(long)]
        bc: Option<String>,
    },
    /// Replace a policy's retention parameters.
    Change {
        #[arg(long)]
        id: u32,
        #[arg(long)]
        rt: Option<String>,
        #[arg(long)]
        bc: Option<String>,
    },
    Delete {
        #[arg(long)]
        id: u32,
    },
    /// List installed policies and registered files.
    List,
}

#[derive(Subcommand)]
enum FsCmd {
    /// Write seeded bytes: fs write <file> <offset> <len> [--pattern N].
    Write {
        file: String,
        offset: u64,
        len: u64,
        #[arg(long, default_value_t = 0)]
        pattern: u64,
    },
    /// Read a byte range; hex to stdout unless --out is given.
    Read {
        file: String,
        offset: u64,
        len: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List files in the host table.
    Ls,
    /// Rewrite a file so a newly created policy covers it.
    Adopt { file: String },
    /// Drop a file from the host table (device pages stay until reclaimed).
    Rm { file: String },
}

#[derive(Args)]
struct RecoverArgs {
    /// File name in the host table, or a numeric file id.
    #[arg(long)]
    file: String,
    /// Restoration point, e.g. `3d12:00` or seconds since epoch.
    #[arg(long)]
    at: String,
    /// Scan all of flash instead of walking the file's chains.
    #[arg(long)]
    robust: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "big")]
    workload: String,
    #[arg(long, default_value_t = 0.5)]
    capacity_ratio: f64,
    #[arg(long, default_value_t = 0.5)]
    versioning_ratio: f64,
    #[arg(long, default_value = "3day")]
    rt: String,
    #[arg(long, default_value_t = 1)]
    rounds: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Append the report to a CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Record the run as a line-delimited JSON trace.
    #[arg(long)]
    record_trace: Option<PathBuf>,
    /// Persist the resulting device to the image path.
    #[arg(long)]
    save_image: bool,
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Malware waits out the retention window before asking for ransom.
    DelayedAttack {
        #[arg(long, default_value = "5day")]
        rt_secure: String,
        #[arg(long, default_value = "4day")]
        dwell: String,
        /// Uniform 3-day policy on everything instead of per-file rules.
        #[arg(long)]
        full_disk: bool,
    },
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum TimeCmd {
    /// Jump to an absolute instant, e.g. `8d09:00`.
    Set { t: String },
    /// Advance by a duration, e.g. `3day`.
    Advance { d: String },
}

fn image_path(cli: &Cli) -> PathBuf {
    cli.image
        .clone()
        .or_else(|| std::env::var_os("SIM_IMAGE").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("sim.img"))
}

fn host_path(image: &Path) -> PathBuf {
    let mut p = image.as_os_str().to_owned();
    p.push(".host.json");
    PathBuf::from(p)
}

fn load_device(path: &Path) -> Result<Device> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("no device image at {}; run `sim init`", path.display()))?;
    Ok(image::from_bytes(&bytes, DEMO_DEVICE_KEY)?)
}

fn save_device(dev: &Device, path: &Path) -> Result<()> {
    std::fs::write(path, image::to_bytes(dev))
        .with_context(|| format!("writing image {}", path.display()))
}

fn load_shim(image: &Path) -> Result<HostShim> {
    let hp = host_path(image);
    if hp.exists() {
        let state = load_host_state(&hp)?;
        Ok(HostShim::with_state(DEMO_DEVICE_KEY, state))
    } else {
        Ok(HostShim::new(DEMO_DEVICE_KEY))
    }
}

fn save_shim(shim: &HostShim, image: &Path) -> Result<()> {
    Ok(save_host_state(shim.state(), &host_path(image))?)
}

fn parse_workload(s: &str) -> Result<WorkloadKind> {
    match s {
        "big" => Ok(WorkloadKind::Big),
        "small" => Ok(WorkloadKind::Small),
        "small-many" => Ok(WorkloadKind::SmallMany),
        other => bail!("unknown workload {other:?} (big, small, small-many)"),
    }
}

fn duration_arg(s: &str) -> Result<SimDuration> {
    parse_duration(s).ok_or_else(|| anyhow!("bad duration {s:?} (e.g. 3day, 12h, 30min)"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let image = image_path(cli);
    match &cli.cmd {
        Cmd::Init(args) => {
            let geometry = NandGeometry {
                page_size_bytes: args.page_size,
                pages_per_block: args.pages_per_block,
                blocks_total: args.blocks,
                ov_zone_blocks: args.ov_blocks,
            };
            let mut config = DeviceConfig::new(geometry, DEMO_DEVICE_KEY);
            config.versioning_enabled = !args.plain;
            let dev = Device::new(config)?;
            save_device(&dev, &image)?;
            let _ = std::fs::remove_file(host_path(&image));
            println!(
                "initialized {}: {} blocks x {} pages x {} B ({} backup blocks, {} logical pages)",
                image.display(),
                geometry.blocks_total,
                geometry.pages_per_block,
                geometry.page_size_bytes,
                geometry.ov_zone_blocks,
                dev.logical_pages()
            );
            Ok(ExitCode::SUCCESS)
        }

        Cmd::Policy { cmd } => {
            let mut dev = load_device(&image)?;
            let mut shim = load_shim(&image)?;
            shim.bootstrap(&mut dev);
            match cmd {
                PolicyCmd::Create { rule, rt, bc } => {
                    let mut text = format!("PolicyCreate {{FileRule={rule}}}");
                    if let Some(rt) = rt {
                        text.push_str(&format!(" {{RT={rt}}}"));
                    }
                    if let Some(bc) = bc {
                        text.push_str(&format!(" {{BC={bc}}}"));
                    }
                    let result = shim.spm_submit(&mut dev, &text)?;
                    println!("{result:?}");
                }
                PolicyCmd::Change { id, rt, bc } => {
                    let mut text = format!("PolicyChange {{Id={id}}}");
                    if let Some(rt) = rt {
                        text.push_str(&format!(" {{RT={rt}}}"));
                    }
                    if let Some(bc) = bc {
                        text.push_str(&format!(" {{BC={bc}}}"));
                    }
                    let result = shim.spm_submit(&mut dev, &text)?;
                    println!("{result:?}");
                }
                PolicyCmd::Delete { id } => {
                    let result = shim.spm_submit(&mut dev, &format!("PolicyDelete {{Id={id}}}"))?;
                    println!("{result:?}");
                }
                PolicyCmd::List => {
                    let (policies, registry) = dev.export_metadata();
                    for p in &policies {
                        println!(
                            "policy {}: rule {:?} rt={} bc={}",
                            p.id,
                            p.rule,
                            p.rt.map_or("-".into(), |d| format!("{}s", d.as_secs())),
                            p.bc.map_or("-".into(), |d| format!("{}s", d.as_secs())),
                        );
                    }
                    println!("{} registered file(s)", registry.len());
                }
            }
            save_device(&dev, &image)?;
            save_shim(&shim, &image)?;
            Ok(ExitCode::SUCCESS)
        }

        Cmd::Fs { cmd } => {
            let mut dev = load_device(&image)?;
            let mut shim = load_shim(&image)?;
            shim.bootstrap(&mut dev);
            match cmd {
                FsCmd::Write {
                    file,
                    offset,
                    len,
                    pattern,
                } => {
                    let data = workload::gen_bytes(*pattern, *len as usize);
                    let handle = shim.open_file(&mut dev, file)?;
                    shim.write_file(&mut dev, &handle, *offset, &data)?;
                    println!("wrote {len} B at {offset} to {file}");
                }
                FsCmd::Read {
                    file,
                    offset,
                    len,
                    out,
                } => {
                    let handle = shim.open_file(&mut dev, file)?;
                    let data = shim.read_file(&mut dev, &handle, *offset, *len)?;
                    match out {
                        Some(path) => {
                            std::fs::write(path, &data)?;
                            println!("read {} B to {}", data.len(), path.display());
                        }
                        None => {
                            for chunk in data.chunks(32) {
                                for b in chunk {
                                    print!("{b:02x}");
                                }
                                println!();
                            }
                        }
                    }
                }
                FsCmd::Ls => {
                    for (name, entry) in shim.files() {
                        println!(
                            "{name}: {} B, {} page(s), policy {:?}, file id {:?}",
                            entry.size,
                            entry.lbas.len(),
                            entry.policy_id,
                            entry.file_id
                        );
                    }
                }
                FsCmd::Adopt { file } => {
                    let rewritten = shim.adopt_file(&mut dev, file)?;
                    println!(
                        "{}",
                        if rewritten {
                            "rewritten under matching policy"
                        } else {
                            "no policy matches; nothing to do"
                        }
                    );
                }
                FsCmd::Rm { file } => {
                    shim.remove_file(file)?;
                    println!("removed {file} from the host table");
                }
            }
            save_device(&dev, &image)?;
            save_shim(&shim, &image)?;
            Ok(ExitCode::SUCCESS)
        }

        Cmd::Recover(args) => {
            let mut dev = load_device(&image)?;
            let shim = load_shim(&image)?;
            let at = parse_sim_time(&args.at)
                .ok_or_else(|| anyhow!("bad timestamp {:?} (e.g. 3d12:00)", args.at))?;
            let entry = shim.file_entry(&args.file).cloned();
            let (file_id, size_hint, lbas) = match &entry {
                Some(e) => {
                    let id = e
                        .file_id
                        .ok_or_else(|| anyhow!("{} was never under a policy", args.file))?;
                    (id, Some(e.size), shim.lba_list(&args.file)?)
                }
                None => {
                    let id: u32 = args.file.parse().map_err(|_| {
                        anyhow!("unknown file {:?} and not a numeric file id", args.file)
                    })?;
                    (id, None, Vec::new())
                }
            };
            let result = if args.robust || entry.is_none() {
                robust_recover(&mut dev, file_id, at)
            } else {
                fast_recover(&mut dev, file_id, at, &lbas)
            };
            match result {
                Ok(pages) => {
                    let (bytes, gaps) = reconstruct(&pages, size_hint)?;
                    std::fs::write(&args.out, &bytes)?;
                    save_device(&dev, &image)?;
                    if gaps.is_empty() {
                        println!(
                            "recovered {} B ({} pages) to {}",
                            bytes.len(),
                            pages.len(),
                            args.out.display()
                        );
                        Ok(ExitCode::SUCCESS)
                    } else {
                        println!(
                            "recovered with {} hole(s); zero-filled; first at offset {}",
                            gaps.len(),
                            gaps[0].file_offset
                        );
                        Ok(ExitCode::from(2))
                    }
                }
                Err(DeviceError::NothingAtTime) => {
                    eprintln!("nothing recoverable at {at}");
                    Ok(ExitCode::from(3))
                }
                Err(e) => Err(e.into()),
            }
        }

        Cmd::Bench(args) => {
            let spec = WorkloadSpec {
                kind: parse_workload(&args.workload)?,
                capacity_ratio: args.capacity_ratio,
                versioning_ratio: args.versioning_ratio,
                rt: duration_arg(&args.rt)?,
                rounds: args.rounds,
                seed: args.seed,
            };
            let out = run_workload(&spec)?;
            println!("{}", workload::CSV_HEADER);
            println!("{}", workload::csv_row(&out.report));
            if out.report.halted {
                println!("note: run ended early, backup space exhausted");
            }
            if let Some(csv) = &args.csv {
                emit_report(&[out.report], csv)?;
            }
            if let Some(path) = &args.record_trace {
                std::fs::write(path, format_trace(&out.trace))?;
            }
            if args.save_image {
                save_device(&out.device, &image)?;
                save_shim(&out.shim, &image)?;
            }
            Ok(ExitCode::SUCCESS)
        }

        Cmd::Scenario { cmd } => match cmd {
            ScenarioCmd::DelayedAttack {
                rt_secure,
                dwell,
                full_disk,
            } => {
                let report = scenario_delayed_attack(
                    duration_arg(rt_secure)?,
                    duration_arg(dwell)?,
                    *full_disk,
                )?;
                println!(
                    "secure.txt: {} (versions after attack: {}, at detection: {})",
                    if report.secure_recovered { "recovered" } else { "LOST" },
                    report.ov_at_attack.0,
                    report.ov_at_detect.0
                );
                println!(
                    "temp.txt:   {} (versions after attack: {}, at detection: {})",
                    if report.temp_recovered { "recovered" } else { "LOST" },
                    report.ov_at_attack.1,
                    report.ov_at_detect.1
                );
                Ok(ExitCode::SUCCESS)
            }
        },

        Cmd::Replay(args) => {
            let text = std::fs::read_to_string(&args.trace)
                .with_context(|| format!("reading {}", args.trace.display()))?;
            let records = parse_trace(&text)?;
            let out = replay_trace(&records, workload::bench_geometry(), DEMO_DEVICE_KEY)?;
            println!("{}", workload::CSV_HEADER);
            println!("{}", workload::csv_row(&out.report));
            if let Some(csv) = &args.csv {
                emit_report(&[out.report], csv)?;
            }
            Ok(ExitCode::SUCCESS)
        }

        Cmd::Time { cmd } => {
            let mut dev = load_device(&image)?;
            let t = match cmd {
                TimeCmd::Set { t } => {
                    parse_sim_time(t).ok_or_else(|| anyhow!("bad timestamp {t:?}"))?
                }
                TimeCmd::Advance { d } => dev.now().saturating_add(duration_arg(d)?),
            };
            dev.execute(DevCommand::TimeSet { t })?;
            println!("clock now {}", dev.now());
            save_device(&dev, &image)?;
            Ok(ExitCode::SUCCESS)
        }

        Cmd::Stats => {
            let mut dev = load_device(&image)?;
            match dev.execute(DevCommand::Stats)? {
                Response::Stats(snap) => {
                    println!("{}", serde_json::to_string_pretty(&snap)?);
                }
                _ => unreachable!(),
            }
            Ok(ExitCode::SUCCESS)
        }

        Cmd::DumpImage { out } => {
            let dev = load_device(&image)?;
            let bytes = image::to_bytes(&dev);
            match out {
                Some(path) => {
                    std::fs::write(path, &bytes)?;
                    println!("dumped {} B to {}", bytes.len(), path.display());
                }
                None => std::io::stdout().write_all(&bytes)?,
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
