//! Authenticated command channel between the policy front-end and the device.
//!
//! Both ends share a device key installed by the vendor. Requests carry a
//! monotone counter and a keyed-hash tag over (counter, payload); the device
//! rejects bad tags and any counter it has already seen, so captured requests
//! cannot be replayed. Requests are authenticated, not encrypted.

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const TAG_LEN: usize = 32;
pub const KEY_LEN: usize = 32;

/// Domain-separation prefix so these tags verify nothing else.
const TAG_DOMAIN: u8 = 0x53;

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct DeviceKey(pub [u8; KEY_LEN]);

impl DeviceKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        DeviceKey(bytes)
    }
}

impl std::fmt::Debug for DeviceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // Never print key material.
        write!(f, "DeviceKey(..)")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SealError {
    #[error("counter {0} was already used by this sealer")]
    CounterReuse(u64),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("authentication failed")]
    AuthFailed,
    #[error("replayed counter {counter}, last accepted {last}")]
    ReplayDetected { counter: u64, last: u64 },
}

/// A sealed request as it travels to the device.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SealedRequest {
    pub payload: Vec<u8>,
    pub counter: u64,
    pub tag: [u8; TAG_LEN],
}

fn compute_tag(key: &DeviceKey, counter: u64, payload: &[u8]) -> [u8; TAG_LEN] {
    let mut h = Sha256::new();
    h.update([TAG_DOMAIN]);
    h.update(key.0);
    h.update(counter.to_le_bytes());
    h.update((payload.len() as u32).to_le_bytes());
    h.update(payload);
    h.finalize().into()
}

/// Deterministic tag over payload and counter.
pub fn seal(payload: &[u8], key: &DeviceKey, counter: u64) -> SealedRequest {
    SealedRequest {
        payload: payload.to_vec(),
        counter,
        tag: compute_tag(key, counter, payload),
    }
}

/// Checks the tag and the anti-replay counter. On success returns the
/// payload and the counter the device must record as its new floor.
pub fn verify<'a>(
    sealed: &'a SealedRequest,
    key: &DeviceKey,
    last_counter: u64,
) -> Result<(&'a [u8], u64), VerifyError> {
    let expected = compute_tag(key, sealed.counter, &sealed.payload);
    // Constant-time-ish comparison; good enough for a simulator.
    let mut diff = 0u8;
    for (a, b) in expected.iter().zip(sealed.tag.iter()) {
        diff |= a ^ b;
    }
    if diff != 0 {
        return Err(VerifyError::AuthFailed);
    }
    if sealed.counter <= last_counter {
        return Err(VerifyError::ReplayDetected {
            counter: sealed.counter,
            last: last_counter,
        });
    }
    Ok((&sealed.payload, sealed.counter))
}

/// Host-side sealer that refuses to reuse counters.
#[derive(Clone, Debug)]
pub struct Sealer {
    key: DeviceKey,
    last_counter: u64,
}

impl Sealer {
    pub fn new(key: DeviceKey, last_counter: u64) -> Self {
        Sealer { key, last_counter }
    }

    pub fn last_counter(&self) -> u64 {
        self.last_counter
    }

    pub fn seal_with(&mut self, payload: &[u8], counter: u64) -> Result<SealedRequest, SealError> {
        if counter <= self.last_counter {
            return Err(SealError::CounterReuse(counter));
        }
        self.last_counter = counter;
        Ok(seal(payload, &self.key, counter))
    }

    pub fn seal_next(&mut self, payload: &[u8]) -> SealedRequest {
        let counter = self.last_counter + 1;
        self.seal_with(payload, counter).expect("monotone counter")
    }
}

/// Wire layout: counter u64 LE, payload length u32 LE, payload, 32-byte tag.
pub fn encode_wire(sealed: &SealedRequest) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + sealed.payload.len() + TAG_LEN);
    out.extend_from_slice(&sealed.counter.to_le_bytes());
    out.extend_from_slice(&(sealed.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&sealed.payload);
    out.extend_from_slice(&sealed.tag);
    out
}

pub fn decode_wire(bytes: &[u8]) -> Option<SealedRequest> {
    if bytes.len() < 12 + TAG_LEN {
        return None;
    }
    let counter = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + len + TAG_LEN {
        return None;
    }
    let payload = bytes[12..12 + len].to_vec();
    let tag = bytes[12 + len..].try_into().unwrap();
    Some(SealedRequest {
        payload,
        counter,
        tag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key(b: u8) -> DeviceKey {
        DeviceKey([b; KEY_LEN])
    }

    #[test]
    fn seal_verify_roundtrip() {
        let k = key(7);
        let sealed = seal(b"hello", &k, 5);
        let (payload, new_last) = verify(&sealed, &k, 4).unwrap();
        assert_eq!(payload, b"hello");
        assert_eq!(new_last, 5);
    }

    #[test]
    fn wrong_key_fails() {
        let sealed = seal(b"hello", &key(7), 5);
        assert_eq!(verify(&sealed, &key(8), 4).unwrap_err(), VerifyError::AuthFailed);
    }

    #[test]
    fn bit_flip_fails() {
        let k = key(7);
        let mut sealed = seal(b"hello", &k, 5);
        sealed.payload[0] ^= 1;
        assert_eq!(verify(&sealed, &k, 4).unwrap_err(), VerifyError::AuthFailed);
    }

    #[test]
    fn replay_detected() {
        let k = key(7);
        let sealed = seal(b"hello", &k, 5);
        let (_, last) = verify(&sealed, &k, 0).unwrap();
        assert_eq!(
            verify(&sealed, &k, last).unwrap_err(),
            VerifyError::ReplayDetected { counter: 5, last: 5 }
        );
    }

    #[test]
    fn distinct_counters_distinct_tags() {
        let k = key(7);
        // Reference construction: recompute both tags by hand and confirm the
        // counter feeds the hash.
        let a = seal(b"same", &k, 1);
        let b = seal(b"same", &k, 2);
        assert_ne!(a.tag, b.tag);
        let mut h = Sha256::new();
        h.update([0x53]);
        h.update([7u8; 32]);
        h.update(1u64.to_le_bytes());
        h.update(4u32.to_le_bytes());
        h.update(b"same");
        let manual: [u8; 32] = h.finalize().into();
        assert_eq!(a.tag, manual);
    }

    #[test]
    fn sealer_refuses_counter_reuse() {
        let mut sealer = Sealer::new(key(1), 0);
        sealer.seal_with(b"a", 3).unwrap();
        assert_eq!(sealer.seal_with(b"b", 3).unwrap_err(), SealError::CounterReuse(3));
        assert_eq!(sealer.seal_with(b"b", 2).unwrap_err(), SealError::CounterReuse(2));
        sealer.seal_with(b"c", 4).unwrap();
    }

    proptest! {
        #[test]
        fn verify_accepts_exactly_sealed(payload in proptest::collection::vec(any::<u8>(), 0..256), c in 1u64..1_000_000) {
            let k = key(9);
            let sealed = seal(&payload, &k, c);
            let (got, _) = verify(&sealed, &k, c - 1).unwrap();
            prop_assert_eq!(got, &payload[..]);
        }

        #[test]
        fn wire_roundtrip(payload in proptest::collection::vec(any::<u8>(), 0..256), c in any::<u64>()) {
            let sealed = seal(&payload, &key(3), c);
            let decoded = decode_wire(&encode_wire(&sealed)).unwrap();
            prop_assert_eq!(decoded, sealed);
        }
    }
}
