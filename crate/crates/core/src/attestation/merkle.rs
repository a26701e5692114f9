use crate::digest::Digest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MerkleError {
    #[error("a component tree needs at least one leaf")]
    Empty,
    #[error("leaf index {index} out of range for {len} leaves")]
    IndexOutOfRange { index: usize, len: usize },
}

fn node(left: &Digest, right: &Digest) -> Digest {
    Digest::of_parts([&left.0[..], &right.0[..]])
}

/// Merkle tree over named component digests. Odd levels duplicate their last node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentTree {
    names: Vec<String>,
    /// `levels[0]` are the leaves, the last level holds the root alone.
    levels: Vec<Vec<Digest>>,
}

/// Sibling path from a leaf to the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleProof {
    pub index: usize,
    /// `(sibling, sibling_is_left)` from the leaf level up.
    pub siblings: Vec<(Digest, bool)>,
}

impl MerkleProof {
    pub fn root_for(&self, leaf: Digest) -> Digest {
        self.siblings.iter().fold(leaf, |acc, (sib, left)| if *left { node(sib, &acc) } else { node(&acc, sib) })
    }
}

impl ComponentTree {
    pub fn new(leaves: Vec<(String, Digest)>) -> Result<Self, MerkleError> {
        if leaves.is_empty() {
            return Err(MerkleError::Empty);
        }
        let (names, digests): (Vec<_>, Vec<_>) = leaves.into_iter().unzip();
        let mut levels = vec![digests];
        while levels.last().unwrap().len() > 1 {
            let below = levels.last().unwrap();
            let up = below
                .chunks(2)
                .map(|pair| node(&pair[0], pair.get(1).unwrap_or(&pair[0])))
                .collect();
            levels.push(up);
        }
        Ok(ComponentTree { names, levels })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().unwrap()[0]
    }

    pub fn len(&self) -> usize {
        self.levels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn leaves(&self) -> impl Iterator<Item = (&str, Digest)> + '_ {
        self.names.iter().map(String::as_str).zip(self.levels[0].iter().copied())
    }

    pub fn leaf(&self, index: usize) -> Option<Digest> {
        self.levels[0].get(index).copied()
    }

    /// Replace one leaf, recomputing only its path. Returns the number of internal nodes recomputed.
    pub fn update(&mut self, index: usize, digest: Digest) -> Result<usize, MerkleError> {
        let len = self.len();
        if index >= len {
            return Err(MerkleError::IndexOutOfRange { index, len });
        }
        self.levels[0][index] = digest;
        let mut i = index;
        let mut recomputed = 0;
        for lvl in 1..self.levels.len() {
            let below = &self.levels[lvl - 1];
            let left = i & !1;
            let h = node(&below[left], below.get(left + 1).unwrap_or(&below[left]));
            i /= 2;
            self.levels[lvl][i] = h;
            recomputed += 1;
        }
        Ok(recomputed)
    }

    /// Copying form of [`update`](Self::update).
    pub fn updated(&self, index: usize, digest: Digest) -> Result<Self, MerkleError> {
        let mut t = self.clone();
        t.update(index, digest)?;
        Ok(t)
    }

    pub fn proof(&self, index: usize) -> Result<MerkleProof, MerkleError> {
        let len = self.len();
        if index >= len {
            return Err(MerkleError::IndexOutOfRange { index, len });
        }
        let mut i = index;
        let mut siblings = Vec::new();
        for level in &self.levels[..self.levels.len() - 1] {
            let sib = i ^ 1;
            let d = *level.get(sib).unwrap_or(&level[i]);
            siblings.push((d, sib < i));
            i /= 2;
        }
        Ok(MerkleProof { index, siblings })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaves(n: usize) -> Vec<(String, Digest)> {
        (0..n).map(|i| (format!("layer{i}"), Digest::of(format!("w{i}").as_bytes()))).collect()
    }

    #[test]
    fn single_leaf_root_is_leaf() {
        let t = ComponentTree::new(leaves(1)).unwrap();
        assert_eq!(t.root(), leaves(1)[0].1);
    }

    #[test]
    fn three_leaves_duplicate_last() {
        let l = leaves(3);
        let want = node(&node(&l[0].1, &l[1].1), &node(&l[2].1, &l[2].1));
        assert_eq!(ComponentTree::new(l).unwrap().root(), want);
    }

    #[test]
    fn proofs_verify() {
        let t = ComponentTree::new(leaves(7)).unwrap();
        for i in 0..7 {
            assert_eq!(t.proof(i).unwrap().root_for(t.leaf(i).unwrap()), t.root());
        }
        assert_eq!(t.proof(7), Err(MerkleError::IndexOutOfRange { index: 7, len: 7 }));
    }
}
