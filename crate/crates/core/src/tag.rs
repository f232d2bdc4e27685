//! Unforgeable request tags: a 32-bit request id bound to the serving set's
//! addresses by a keyed MAC, carried in a 40-byte timestamp-option block.

use std::fmt;
use std::net::Ipv4Addr;

use hmac::{Hmac, Mac};
use rand::RngCore;
use sha2::Sha256;

type HmacSha256 = Hmac<Sha256>;

pub const KEY_LEN: usize = 32;
pub const MAC_LEN: usize = 32;
/// Encoded block size: 4 header bytes plus the 36-byte payload.
pub const OPTION_LEN: usize = 40;

const OPTION_TYPE_TIMESTAMP: u8 = 68;
const OPTION_POINTER_FULL: u8 = 41;

/// Symmetric key shared by the scheduling and verification proxies.
/// Deliberately not serializable; Debug output is redacted.
#[derive(Clone, PartialEq, Eq)]
pub struct TagKey([u8; KEY_LEN]);

impl TagKey {
    pub fn new(bytes: [u8; KEY_LEN]) -> TagKey {
        TagKey(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<TagKey, TagError> {
        let arr: [u8; KEY_LEN] = bytes
            .try_into()
            .map_err(|_| TagError::BadKeyLength(bytes.len()))?;
        Ok(TagKey(arr))
    }

    pub fn from_rng(rng: &mut impl RngCore) -> TagKey {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        TagKey(bytes)
    }
}

impl fmt::Debug for TagKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("TagKey(<redacted>)")
    }
}

/// The 36-byte tag payload: request id plus MAC over id and addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestTag {
    pub id: u32,
    pub mac: [u8; MAC_LEN],
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TagError {
    #[error("tag key must be {KEY_LEN} bytes, got {0}")]
    BadKeyLength(usize),
    #[error("tag must bind at least one address")]
    NoAddresses,
    #[error("encoded tag must be {OPTION_LEN} bytes, got {0}")]
    BadLength(usize),
    #[error("malformed option header at byte {offset}: expected {expected:#04x}, got {got:#04x}")]
    BadHeader { offset: usize, expected: u8, got: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagCheck {
    Accept,
    /// MAC mismatch: tampered payload or a tag bound to different addresses.
    RejectForged,
    /// Valid MAC but the id fell outside the accept window: a replay.
    RejectStale,
}

fn compute_mac(key: &TagKey, id: u32, addresses: &[Ipv4Addr]) -> HmacSha256 {
    let mut mac = HmacSha256::new_from_slice(&key.0).expect("HMAC accepts any key length");
    mac.update(&id.to_be_bytes());
    for address in addresses {
        mac.update(&address.octets());
    }
    mac
}

/// Builds the tag binding `id` to the serving addresses, which must be given
/// in pool order. Deterministic.
pub fn make_tag(key: &TagKey, id: u32, addresses: &[Ipv4Addr]) -> Result<RequestTag, TagError> {
    if addresses.is_empty() {
        return Err(TagError::NoAddresses);
    }
    let mac = compute_mac(key, id, addresses).finalize().into_bytes();
    Ok(RequestTag { id, mac: mac.into() })
}

/// Encodes as an IP timestamp option block: type 68, length 40, pointer 41
/// (exhausted), zero flags, then the id big-endian and the MAC.
pub fn encode_option(tag: &RequestTag) -> [u8; OPTION_LEN] {
    let mut block = [0u8; OPTION_LEN];
    block[0] = OPTION_TYPE_TIMESTAMP;
    block[1] = OPTION_LEN as u8;
    block[2] = OPTION_POINTER_FULL;
    block[3] = 0;
    block[4..8].copy_from_slice(&tag.id.to_be_bytes());
    block[8..40].copy_from_slice(&tag.mac);
    block
}

pub fn decode_option(block: &[u8]) -> Result<RequestTag, TagError> {
    if block.len() != OPTION_LEN {
        return Err(TagError::BadLength(block.len()));
    }
    let expected_header = [OPTION_TYPE_TIMESTAMP, OPTION_LEN as u8, OPTION_POINTER_FULL, 0];
    for (offset, (&got, &expected)) in block[..4].iter().zip(&expected_header).enumerate() {
        if got != expected {
            return Err(TagError::BadHeader { offset, expected, got });
        }
    }
    let id = u32::from_be_bytes(block[4..8].try_into().unwrap());
    let mac: [u8; MAC_LEN] = block[8..40].try_into().unwrap();
    Ok(RequestTag { id, mac })
}

/// True when `id` lies in the window of `window` ids ending at `counter`,
/// with wrapping arithmetic so the check survives the 2^32 rollover.
pub fn id_in_window(id: u32, counter: u32, window: u32) -> bool {
    counter.wrapping_sub(id) < window
}

/// Checks the MAC (constant-time) against the observed addresses, then the
/// id window. MAC failure wins when both would fail: a bad MAC says nothing
/// trustworthy about the id.
pub fn verify_tag(
    tag: &RequestTag,
    observed_addresses: &[Ipv4Addr],
    key: &TagKey,
    current_counter: u32,
    window: u32,
) -> TagCheck {
    if observed_addresses.is_empty() {
        return TagCheck::RejectForged;
    }
    let mac = compute_mac(key, tag.id, observed_addresses);
    if mac.verify_slice(&tag.mac).is_err() {
        return TagCheck::RejectForged;
    }
    if !id_in_window(tag.id, current_counter, window) {
        return TagCheck::RejectStale;
    }
    TagCheck::Accept
}
