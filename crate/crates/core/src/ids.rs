//! Identifier newtypes shared by every layer of the simulator.

use std::fmt;

use sha2::{Digest, Sha256};

/// Round index of the synchronous model.
pub type Round = u32;

/// Globally fresh node identifier. Ids are handed out in increasing order and
/// never reused, so an id maps to exactly one membership interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Content address of a data item: SHA-256 of its payload.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId(pub [u8; 32]);

impl ItemId {
    pub fn of_payload(payload: &[u8]) -> Self {
        let digest = Sha256::digest(payload);
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        ItemId(out)
    }

    pub fn matches(&self, payload: &[u8]) -> bool {
        *self == ItemId::of_payload(payload)
    }

    /// Short hex prefix for logs and CSV output.
    pub fn short(&self) -> String {
        self.0[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ItemId({})", self.short())
    }
}

/// Opaque identifier of the task a committee is entrusted with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskTag(pub u32);

/// `⌈ln n⌉`, the integer "log n" used for all counts in the protocol.
pub fn ceil_ln(n: usize) -> usize {
    (n as f64).ln().ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_ln_values() {
        assert_eq!(ceil_ln(1024), 7);
        assert_eq!(ceil_ln(64), 5);
        assert_eq!(ceil_ln(16), 3);
    }

    #[test]
    fn item_id_is_content_address() {
        let id = ItemId::of_payload(b"hello");
        assert!(id.matches(b"hello"));
        assert!(!id.matches(b"hellp"));
    }
}
