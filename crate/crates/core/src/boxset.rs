use serde::{Deserialize, Serialize};

use crate::grid::BoxId;

/// A set of boxes of one grid: a sorted member list plus a membership bitmap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<BoxId>", from = "Vec<BoxId>")]
pub struct BoxSet {
    members: Vec<BoxId>,
    bits: Vec<u64>,
}

impl BoxSet {
    pub fn empty() -> Self {
        BoxSet {
            members: Vec::new(),
            bits: Vec::new(),
        }
    }

    /// Builds a set from arbitrary ids (sorted and deduplicated here).
    pub fn from_ids<I: IntoIterator<Item = BoxId>>(ids: I) -> Self {
        let mut members: Vec<BoxId> = ids.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        let words = members.last().map_or(0, |&m| m as usize / 64 + 1);
        let mut bits = vec![0u64; words];
        for &m in &members {
            bits[m as usize / 64] |= 1 << (m % 64);
        }
        BoxSet { members, bits }
    }

    /// Builds a set from a dense membership mask.
    pub fn from_mask(mask: &[bool]) -> Self {
        BoxSet::from_ids(mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i as BoxId))
    }

    pub fn all(n: usize) -> Self {
        BoxSet::from_ids(0..n as BoxId)
    }

    pub fn contains(&self, b: BoxId) -> bool {
        self.bits.get(b as usize / 64).is_some_and(|w| w >> (b % 64) & 1 == 1)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = BoxId> + '_ {
        self.members.iter().copied()
    }

    pub fn as_slice(&self) -> &[BoxId] {
        &self.members
    }

    pub fn is_subset(&self, other: &BoxSet) -> bool {
        self.iter().all(|b| other.contains(b))
    }

    pub fn difference(&self, other: &BoxSet) -> BoxSet {
        BoxSet::from_ids(self.iter().filter(|&b| !other.contains(b)))
    }

    pub fn union(&self, other: &BoxSet) -> BoxSet {
        BoxSet::from_ids(self.iter().chain(other.iter()))
    }
}

impl From<Vec<BoxId>> for BoxSet {
    fn from(v: Vec<BoxId>) -> Self {
        BoxSet::from_ids(v)
    }
}

impl From<BoxSet> for Vec<BoxId> {
    fn from(s: BoxSet) -> Self {
        s.members
    }
}

impl FromIterator<BoxId> for BoxSet {
    fn from_iter<I: IntoIterator<Item = BoxId>>(iter: I) -> Self {
        BoxSet::from_ids(iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_ops() {
        let a = BoxSet::from_ids([5, 1, 3, 3, 130]);
        assert_eq!(a.as_slice(), &[1, 3, 5, 130]);
        assert!(a.contains(130) && !a.contains(129) && !a.contains(10_000));
        let b = BoxSet::from_ids([3, 5]);
        assert!(b.is_subset(&a));
        assert_eq!(a.difference(&b).as_slice(), &[1, 130]);
        assert_eq!(b.union(&BoxSet::from_ids([0])).as_slice(), &[0, 3, 5]);
        assert!(BoxSet::empty().is_subset(&b));
        assert_eq!(BoxSet::from_mask(&[false, true, true]).as_slice(), &[1, 2]);
    }
}
