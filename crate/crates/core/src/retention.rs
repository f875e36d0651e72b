//! Page preservation decisions.
//!
//! A superseded page is kept when either rule of its policy holds:
//!
//! * retention time: the page's expiry, `dead_at + RT`, is still ahead of
//!   the current time. `dead_at` is the write time of the next-newer
//!   version; chain heads never die and so never expire.
//! * backup cycle: some grid point `k * BC` (anchored at the epoch
//!   midnight) falls inside the page's lifetime `[wt, dead_at]`.
//!
//! Either rule alone preserves; only a page failing both is dropped.

use crate::nand::BucketLabel;
use crate::policy::Policy;
use crate::time::{SimDuration, SimTime};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PvDecision {
    Preserve,
    Discard,
}

/// Smallest backup grid point at or after `t`, on a grid of period `bc`.
fn next_grid_point(t: SimTime, bc: SimDuration) -> SimTime {
    let period = bc.as_micros();
    debug_assert!(period > 0);
    let k = t.as_micros().div_ceil(period);
    SimTime(k.saturating_mul(period))
}

/// Largest backup grid point at or before `t`.
fn prev_grid_point(t: SimTime, bc: SimDuration) -> SimTime {
    if t == SimTime::INFINITY {
        return SimTime::INFINITY;
    }
    let period = bc.as_micros();
    SimTime(t.as_micros() / period * period)
}

/// True when a backup grid point falls inside `[wt, dead_at]`.
pub fn covers_backup_point(wt: SimTime, dead_at: SimTime, bc: SimDuration) -> bool {
    if dead_at == SimTime::INFINITY {
        return true;
    }
    next_grid_point(wt, bc) <= dead_at
}

/// The preservation decision for one version with lifetime `[wt, dead_at]`.
pub fn pv_decide(wt: SimTime, dead_at: SimTime, policy: &Policy, cur_time: SimTime) -> PvDecision {
    if let Some(rt) = policy.rt {
        if dead_at.saturating_add(rt) > cur_time {
            return PvDecision::Preserve;
        }
    }
    if let Some(bc) = policy.bc {
        if covers_backup_point(wt, dead_at, bc) {
            return PvDecision::Preserve;
        }
    }
    PvDecision::Discard
}

/// The moment after which this version no longer needs to be retained, used
/// to group preserved pages into expiration buckets and to reclaim them.
///
/// Retention-time pages expire at `dead_at + RT`. Backup-cycle pages are
/// held one further cycle past the last grid point they witnessed; when both
/// parameters are set, the longer horizon wins. `None` means the policy
/// never preserved this lifetime in the first place.
pub fn retention_horizon(wt: SimTime, dead_at: SimTime, policy: &Policy) -> Option<SimTime> {
    let rt_part = policy
        .rt
        .map(|rt| dead_at.saturating_add(rt));
    let bc_part = policy.bc.and_then(|bc| {
        if !covers_backup_point(wt, dead_at, bc) {
            return None;
        }
        Some(match policy.rt {
            Some(rt) => dead_at.saturating_add(if rt > bc { rt } else { bc }),
            None => prev_grid_point(dead_at, bc).saturating_add(bc),
        })
    });
    match (rt_part, bc_part) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    }
}

/// True when the version is past every retention obligation at `cur_time`.
pub fn is_expired(wt: SimTime, dead_at: SimTime, policy: &Policy, cur_time: SimTime) -> bool {
    match retention_horizon(wt, dead_at, policy) {
        Some(h) => h <= cur_time,
        None => true,
    }
}

/// Expiration bucket: preserved pages are grouped per calendar day of their
/// horizon so whole blocks age out together.
pub fn bucket_for(wt: SimTime, dead_at: SimTime, policy: &Policy) -> Option<BucketLabel> {
    retention_horizon(wt, dead_at, policy).map(|h| BucketLabel(h.day()))
}
