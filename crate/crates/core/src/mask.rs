use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Packed sparsity mask: one bit per weight element, LSB-first within each
/// byte, 1 = kept, 0 = pruned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityMask {
    bits: Vec<u8>,
    len: usize,
    nnz: usize,
}

impl SparsityMask {
    /// All-ones mask over `len` elements.
    pub fn ones(len: usize) -> Self {
        let mut bits = vec![0xffu8; len.div_ceil(8)];
        // clear padding bits past `len`
        if len % 8 != 0 {
            let last = bits.len() - 1;
            bits[last] = (1u8 << (len % 8)) - 1;
        }
        SparsityMask { bits, len, nnz: len }
    }

    /// All-zeros mask over `len` elements.
    pub fn zeros(len: usize) -> Self {
        SparsityMask { bits: vec![0u8; len.div_ceil(8)], len, nnz: 0 }
    }

    /// Build from a packed byte array. Padding bits past `len` must be 0.
    pub fn from_bytes(bits: Vec<u8>, len: usize) -> Option<Self> {
        if bits.len() != len.div_ceil(8) {
            return None;
        }
        if len % 8 != 0 {
            let pad_mask = !((1u8 << (len % 8)) - 1);
            if bits[bits.len() - 1] & pad_mask != 0 {
                return None;
            }
        }
        let nnz = bits.iter().map(|b| b.count_ones() as usize).sum();
        Some(SparsityMask { bits, len, nnz })
    }

    pub fn from_fn(len: usize, mut kept: impl FnMut(usize) -> bool) -> Self {
        let mut m = SparsityMask::zeros(len);
        for i in 0..len {
            if kept(i) {
                m.set(i, true);
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Count of kept (set) bits.
    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.bits[i / 8] & (1 << (i % 8)) != 0
    }

    pub fn set(&mut self, i: usize, kept: bool) {
        debug_assert!(i < self.len);
        let byte = &mut self.bits[i / 8];
        let bit = 1u8 << (i % 8);
        let was = *byte & bit != 0;
        if kept && !was {
            *byte |= bit;
            self.nnz += 1;
        } else if !kept && was {
            *byte &= !bit;
            self.nnz -= 1;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    /// True iff the cached nnz equals the popcount of the bit array.
    pub fn nnz_consistent(&self) -> bool {
        self.nnz == self.bits.iter().map(|b| b.count_ones() as usize).sum::<usize>()
    }

    /// Keep only the first `new_len` elements.
    pub fn truncated(&self, new_len: usize) -> Self {
        debug_assert!(new_len <= self.len);
        SparsityMask::from_fn(new_len, |i| self.get(i))
    }

    /// Gather the bits at `indices` into a new mask.
    pub fn gather(&self, indices: &[usize]) -> Self {
        SparsityMask::from_fn(indices.len(), |i| self.get(indices[i]))
    }
}
