//! Benchmark fixtures: small prebuilt devices in interesting states.

use vssd_core::policy::{encode_policy_request, PolicyRequest};
use vssd_core::seal::Sealer;
use vssd_core::shim::DEMO_DEVICE_KEY;
use vssd_core::{Device, DeviceConfig, Lpa, NandGeometry, PMeta, SimDuration};

/// A device with one retention policy installed and every logical page of a
/// small region written `rounds` times, leaving plenty of garbage and old
/// versions for collection-path benchmarks.
pub fn churned_device(rounds: u32) -> Device {
    let geometry = NandGeometry::tiny(64, 16, 32);
    let mut dev = Device::new(DeviceConfig::new(geometry, DEMO_DEVICE_KEY)).unwrap();
    let mut sealer = Sealer::new(DEMO_DEVICE_KEY, 0);
    let req = PolicyRequest::Create {
        requested_id: 0,
        rt: Some(SimDuration::from_days(3)),
        bc: None,
        rule: "*".into(),
    };
    let sealed = sealer.seal_next(&encode_policy_request(&req));
    dev.apply_policy_request(&sealed).unwrap();

    let page = vec![0xA5u8; dev.page_size()];
    for round in 0..rounds {
        for lpa in 0..256u32 {
            let pmeta = (lpa % 2 == 0).then_some(PMeta {
                policy_id: 1,
                file_id: lpa,
                file_offset: 0,
            });
            let mut data = page.clone();
            data[0] = round as u8;
            dev.host_write(Lpa(lpa), &data, pmeta).unwrap();
        }
    }
    dev
}
