use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const TAG_STR: u8 = 0x01;
const TAG_INT: u8 = 0x02;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ComponentValue {
    Str(String),
    Int(i64),
}

impl From<&str> for ComponentValue {
    fn from(s: &str) -> Self {
        ComponentValue::Str(s.to_owned())
    }
}

impl From<String> for ComponentValue {
    fn from(s: String) -> Self {
        ComponentValue::Str(s)
    }
}

impl From<i64> for ComponentValue {
    fn from(v: i64) -> Self {
        ComponentValue::Int(v)
    }
}

impl fmt::Display for ComponentValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComponentValue::Str(s) => f.write_str(s),
            ComponentValue::Int(v) => write!(f, "{v}"),
        }
    }
}

/// Canonical identity of an environment state.
///
/// Equality is byte equality of the canonical encoding. The digest only
/// short-circuits comparisons and feeds `Hash`; a digest collision still
/// falls through to the byte comparison. Cloning is a reference-count bump.
#[derive(Clone)]
pub struct StateKey {
    bytes: Arc<[u8]>,
    digest: u64,
}

impl StateKey {
    /// Wraps raw canonical bytes, e.g. as read back from a rollout file.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let hash = Sha256::digest(bytes);
        let mut head = [0u8; 8];
        head.copy_from_slice(&hash[..8]);
        StateKey {
            bytes: Arc::from(bytes),
            digest: u64::from_be_bytes(head),
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn to_base64(&self) -> String {
        BASE64.encode(&self.bytes)
    }

    pub fn from_base64(text: &str) -> Result<Self> {
        let bytes = BASE64
            .decode(text)
            .map_err(|e| Error::StateKey(format!("invalid base64: {e}")))?;
        Ok(StateKey::from_bytes(&bytes))
    }

    /// Decodes the canonical encoding back into labeled components.
    /// Returns `None` for bytes that were not produced by
    /// [`canonical_state_key`].
    pub fn components(&self) -> Option<Vec<(String, ComponentValue)>> {
        let mut out = Vec::new();
        let mut rest: &[u8] = &self.bytes;
        while !rest.is_empty() {
            let label = take_len_prefixed(&mut rest)?;
            let label = String::from_utf8(label.to_vec()).ok()?;
            let (&tag, tail) = rest.split_first()?;
            rest = tail;
            let value = match tag {
                TAG_STR => {
                    ComponentValue::Str(String::from_utf8(take_len_prefixed(&mut rest)?.to_vec()).ok()?)
                }
                TAG_INT => {
                    if rest.len() < 8 {
                        return None;
                    }
                    let (head, tail) = rest.split_at(8);
                    rest = tail;
                    ComponentValue::Int(i64::from_be_bytes(head.try_into().ok()?))
                }
                _ => return None,
            };
            out.push((label, value));
        }
        Some(out)
    }

    /// Human-readable rendering: `label=value,...` when decodable, base64
    /// otherwise.
    pub fn describe(&self) -> String {
        match self.components() {
            Some(parts) if !parts.is_empty() => parts
                .iter()
                .map(|(l, v)| format!("{l}={v}"))
                .collect::<Vec<_>>()
                .join(","),
            _ => self.to_base64(),
        }
    }
}

fn take_len_prefixed<'a>(rest: &mut &'a [u8]) -> Option<&'a [u8]> {
    if rest.len() < 4 {
        return None;
    }
    let (len, tail) = rest.split_at(4);
    let len = u32::from_be_bytes(len.try_into().ok()?) as usize;
    if tail.len() < len {
        return None;
    }
    let (body, tail) = tail.split_at(len);
    *rest = tail;
    Some(body)
}

fn put_len_prefixed(out: &mut Vec<u8>, body: &[u8]) {
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
}

impl PartialEq for StateKey {
    fn eq(&self, other: &Self) -> bool {
        self.digest == other.digest && self.bytes == other.bytes
    }
}

impl Eq for StateKey {}

impl Hash for StateKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.digest);
    }
}

impl PartialOrd for StateKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Orders by canonical bytes, which is stable across runs and platforms.
impl Ord for StateKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bytes.cmp(&other.bytes)
    }
}

impl fmt::Debug for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateKey({} #{:016x})", self.describe(), self.digest)
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

/// Builds the canonical key for a state from its labeled components.
///
/// Components are sorted by label, so the caller's ordering does not matter.
/// Every label and string value is length-prefixed and every value carries a
/// type tag, so distinct component sets never encode to the same bytes.
pub fn canonical_state_key(components: &[(&str, ComponentValue)]) -> Result<StateKey> {
    if components.is_empty() {
        return Err(Error::StateKey("no components".into()));
    }
    let mut sorted: Vec<&(&str, ComponentValue)> = components.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    if let Some(pair) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::StateKey(format!("duplicate label {:?}", pair[0].0)));
    }
    let mut bytes = Vec::with_capacity(16 * sorted.len());
    for (label, value) in sorted {
        put_len_prefixed(&mut bytes, label.as_bytes());
        match value {
            ComponentValue::Str(s) => {
                bytes.push(TAG_STR);
                put_len_prefixed(&mut bytes, s.as_bytes());
            }
            ComponentValue::Int(v) => {
                bytes.push(TAG_INT);
                bytes.extend_from_slice(&v.to_be_bytes());
            }
        }
    }
    Ok(StateKey::from_bytes(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn label_order_does_not_matter() {
        let a = canonical_state_key(&[("pos", "3,2".into()), ("holding", "none".into())]).unwrap();
        let b = canonical_state_key(&[("holding", "none".into()), ("pos", "3,2".into())]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.as_bytes(), b.as_bytes());
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn duplicate_label_is_an_error() {
        let err = canonical_state_key(&[("pos", 1.into()), ("pos", 2.into())]).unwrap_err();
        assert!(matches!(err, Error::StateKey(_)));
        assert!(canonical_state_key(&[]).is_err());
    }

    #[test]
    fn string_and_int_with_same_text_differ() {
        let a = canonical_state_key(&[("x", "1".into())]).unwrap();
        let b = canonical_state_key(&[("x", 1.into())]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn components_decode_back() {
        let k = canonical_state_key(&[("pos", 4.into()), ("key", "yes".into())]).unwrap();
        assert_eq!(k.describe(), "key=yes,pos=4");
        assert_eq!(StateKey::from_base64(&k.to_base64()).unwrap(), k);
    }

    #[test]
    fn random_component_sets_never_falsely_merge() {
        // Pairwise oracle: two sets are the same state iff their sorted
        // (label, value) lists are equal.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let labels = ["pos", "box", "key", "door", "x", "xy"];
        let mut by_bytes: HashMap<Vec<u8>, Vec<(String, ComponentValue)>> = HashMap::new();
        for _ in 0..10_000 {
            let n = rng.random_range(1..=labels.len());
            let mut chosen: Vec<&str> = labels.to_vec();
            for i in (1..chosen.len()).rev() {
                chosen.swap(i, rng.random_range(0..=i));
            }
            chosen.truncate(n);
            let comps: Vec<(&str, ComponentValue)> = chosen
                .iter()
                .map(|l| {
                    let v = if rng.random_bool(0.5) {
                        ComponentValue::Int(rng.random_range(-3..4))
                    } else {
                        ComponentValue::Str(["", "a", "ab", "1", "b,a"][rng.random_range(0..5)].into())
                    };
                    (*l, v)
                })
                .collect();
            let key = canonical_state_key(&comps).unwrap();
            let mut canon: Vec<(String, ComponentValue)> =
                comps.iter().map(|(l, v)| (l.to_string(), v.clone())).collect();
            canon.sort_by(|a, b| a.0.cmp(&b.0));
            if let Some(prev) = by_bytes.get(key.as_bytes()) {
                assert_eq!(prev, &canon, "false merge");
            } else {
                by_bytes.insert(key.as_bytes().to_vec(), canon);
            }
        }
    }

    proptest! {
        #[test]
        fn key_formation_is_pure(a in -100i64..100, s in "[a-z]{0,6}") {
            let k1 = canonical_state_key(&[("a", a.into()), ("s", s.clone().into())]).unwrap();
            let k2 = canonical_state_key(&[("s", s.into()), ("a", a.into())]).unwrap();
            prop_assert_eq!(k1.as_bytes(), k2.as_bytes());
            prop_assert_eq!(k1.digest(), k2.digest());
        }
    }
}
