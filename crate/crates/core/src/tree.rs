use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernel::{Accumulator, Sign};

/// Complete binary tree of accumulators, stored in level order.
///
/// Node `i` has children `2i + 1` (taken on `+1`) and `2i + 2` (taken on `-1`).
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatorTree {
    depth: usize,
    dim: usize,
    nodes: Vec<Accumulator>,
}

impl AccumulatorTree {
    pub fn new(depth: usize, dim: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("tree depth must be at least 1".into()));
        }
        if depth >= usize::BITS as usize - 1 {
            return Err(Error::Config(alloc::format!("tree depth {depth} too large")));
        }
        let count = Self::node_count_for(depth);
        Ok(Self {
            depth,
            dim,
            nodes: (0..count).map(|_| Accumulator::new(dim)).collect(),
        })
    }

    /// `2^(depth+1) - 1`.
    pub const fn node_count_for(depth: usize) -> usize {
        (1usize << (depth + 1)) - 1
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        1 << self.depth
    }

    pub fn nodes(&self) -> &[Accumulator] {
        &self.nodes
    }

    pub fn node(&self, index: usize) -> &Accumulator {
        &self.nodes[index]
    }

    pub fn node_mut(&mut self, index: usize) -> &mut Accumulator {
        &mut self.nodes[index]
    }

    #[inline]
    pub fn child(index: usize, sign: Sign) -> usize {
        match sign {
            Sign::Plus => 2 * index + 1,
            Sign::Minus => 2 * index + 2,
        }
    }

    /// Level of a node (root is level 0).
    #[inline]
    pub fn level_of(index: usize) -> usize {
        (usize::BITS - 1 - (index + 1).leading_zeros()) as usize
    }

    /// Position of a node within its level.
    #[inline]
    pub fn offset_in_level(index: usize) -> usize {
        index + 1 - (1 << Self::level_of(index))
    }

    pub fn reset(&mut self) {
        self.nodes.iter_mut().for_each(Accumulator::reset);
    }
}
