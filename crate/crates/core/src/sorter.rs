//! Example orderers.
//!
//! A [`Sorter`] is fed the per-sample gradients of every example once per
//! epoch (in the order the examples were visited) and emits the visit order
//! for the next epoch. Signs chosen by the balancing kernel decide where each
//! example lands: `+1` fills the next order from the front, `-1` from the back.
//! The recursive variants route each example down an [`AccumulatorTree`] and
//! lay the leaves out left to right.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{Accumulator, Balancer, KernelConfig, Sign};
use crate::permutation::Permutation;
use crate::tree::AccumulatorTree;
use crate::util::{norm_sq, shuffled};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    RandomReshuffle,
    MeanBalance,
    PairBalance,
    BatchBalance,
    RecursiveBalance,
    RecursivePairBalance,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::RandomReshuffle,
        Variant::MeanBalance,
        Variant::PairBalance,
        Variant::BatchBalance,
        Variant::RecursiveBalance,
        Variant::RecursivePairBalance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::RandomReshuffle => "RandomReshuffle",
            Variant::MeanBalance => "MeanBalance",
            Variant::PairBalance => "PairBalance",
            Variant::BatchBalance => "BatchBalance",
            Variant::RecursiveBalance => "RecursiveBalance",
            Variant::RecursivePairBalance => "RecursivePairBalance",
        }
    }

    pub fn is_recursive(self) -> bool {
        matches!(self, Variant::RecursiveBalance | Variant::RecursivePairBalance)
    }

    pub fn is_pair(self) -> bool {
        matches!(self, Variant::PairBalance | Variant::RecursivePairBalance)
    }

    /// Whether gradients are centered by the previous epoch's mean.
    pub fn uses_stale_mean(self) -> bool {
        matches!(
            self,
            Variant::MeanBalance | Variant::BatchBalance | Variant::RecursiveBalance
        )
    }

    /// Accumulator vectors held by a sorter of this variant.
    pub fn accumulator_slots(self, depth: Option<usize>) -> usize {
        match self {
            Variant::RandomReshuffle => 0,
            Variant::MeanBalance | Variant::PairBalance | Variant::BatchBalance => 1,
            Variant::RecursiveBalance | Variant::RecursivePairBalance => {
                AccumulatorTree::node_count_for(depth.unwrap_or(0))
            }
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: alloc::string::String = s
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .map(|c| c.to_ascii_lowercase())
            .collect();
        let v = match key.as_str() {
            "randomreshuffle" | "randomreshuffling" | "rr" => Variant::RandomReshuffle,
            "meanbalance" | "mean" => Variant::MeanBalance,
            "pairbalance" | "pair" => Variant::PairBalance,
            "batchbalance" | "batch" => Variant::BatchBalance,
            "recursivebalance" | "recursive" => Variant::RecursiveBalance,
            "recursivepairbalance" | "recursivepair" => Variant::RecursivePairBalance,
            _ => return Err(Error::Config(alloc::format!("unknown variant {s:?}"))),
        };
        Ok(v)
    }
}

/// Per-sample gradients of one batch, row-major, with the global id of the
/// example each row belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    dim: usize,
    ids: Vec<usize>,
    data: Vec<f64>,
}

impl GradientMatrix {
    pub fn new(dim: usize, ids: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if dim == 0 {
            return Err(Error::Config("gradient dimension must be at least 1".into()));
        }
        check_dim(ids.len() * dim, data.len())?;
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicateExample { id: w[0] });
        }
        Ok(Self { dim, ids, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(ids: Vec<usize>, rows: &[R]) -> Result<Self> {
        check_dim(ids.len(), rows.len())?;
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or(Error::EmptyBatch)?;
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            check_dim(dim, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Self::new(dim, ids, data)
    }

    /// Widens 32-bit gradients; all balancing arithmetic is 64-bit.
    pub fn from_f32_rows<R: AsRef<[f32]>>(ids: Vec<usize>, rows: &[R]) -> Result<Self> {
        let wide: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|&x| f64::from(x)).collect())
            .collect();
        Self::from_rows(ids, &wide)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> core::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Column mean, summed in row order.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            m.iter_mut().zip(r).for_each(|(a, x)| *a += x);
        }
        let b = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= b);
        m
    }

    /// Sub-batch made of the given row positions, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let ids = rows.iter().map(|&r| self.ids[r]).collect();
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self::new(self.dim, ids, data)
    }
}

/// Read-only diagnostics of a sorter's balancing state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HerdingStats {
    pub epoch: u64,
    /// L2 norm of the flat accumulator, or of the tree root.
    pub acc_l2: f64,
    pub acc_linf: f64,
    /// Largest L2 norm over all tree nodes (equals `acc_l2` for flat variants).
    pub max_node_l2: f64,
    /// Probabilistic-kernel clamps this epoch.
    pub overflow_count: u64,
    pub kernel_calls: u64,
    /// Signs handed out this epoch; a pair decision assigns one of each.
    pub plus_count: u64,
    pub minus_count: u64,
    pub front_placements: u64,
    pub back_placements: u64,
    /// Sum of squared norms of every vector passed to the kernel this epoch.
    pub balanced_energy: f64,
    pub accumulator_slots: usize,
}

#[derive(Debug, Clone)]
enum Store {
    None,
    Flat(Accumulator),
    Tree(AccumulatorTree),
}

#[derive(Debug, Clone)]
struct TwoCursor {
    order: Vec<usize>,
    front: usize,
    /// Number of back placements so far.
    back: usize,
}

impl TwoCursor {
    fn new(n: usize) -> Self {
        Self {
            order: vec![usize::MAX; n],
            front: 0,
            back: 0,
        }
    }

    fn place(&mut self, id: usize, sign: Sign) {
        match sign {
            Sign::Plus => {
                self.order[self.front] = id;
                self.front += 1;
            }
            Sign::Minus => {
                let n = self.order.len();
                self.order[n - 1 - self.back] = id;
                self.back += 1;
            }
        }
    }
}

/// Per-leaf slices of the next order: arrivals signed `+1` at the deepest
/// level keep arrival order, `-1` arrivals are reversed, as with two cursors.
#[derive(Debug, Clone)]
struct Leaves {
    front: Vec<Vec<usize>>,
    back: Vec<Vec<usize>>,
}

impl Leaves {
    fn new(count: usize) -> Self {
        Self {
            front: vec![Vec::new(); count],
            back: vec![Vec::new(); count],
        }
    }

    fn place(&mut self, leaf: usize, id: usize, sign: Sign) {
        match sign {
            Sign::Plus => self.front[leaf].push(id),
            Sign::Minus => self.back[leaf].push(id),
        }
    }

    fn assemble(&self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        for (f, b) in self.front.iter().zip(&self.back) {
            out.extend_from_slice(f);
            out.extend(b.iter().rev());
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Placement {
    None,
    Cursor(TwoCursor),
    Leaves(Leaves),
}

/// Ordering state for one training run. Single owner; not shared across threads.
#[derive(Debug, Clone)]
pub struct Sorter {
    variant: Variant,
    n: usize,
    d: usize,
    depth: Option<usize>,
    seed: u64,
    balancer: Balancer,
    store: Store,
    stale_mean: Vec<f64>,
    running_sum: Vec<f64>,
    seen: Vec<bool>,
    stepped: usize,
    placement: Placement,
    current: Permutation,
    epoch: u64,
    pending: Option<(usize, Vec<f64>)>,
    placed: Vec<Option<Sign>>,
    counters: EpochCounters,
    last_stats: Option<HerdingStats>,
}

#[derive(Debug, Clone, Default)]
struct EpochCounters {
    plus: u64,
    minus: u64,
    front: u64,
    back: u64,
    energy: f64,
    overflow_base: u64,
    calls_base: u64,
}

impl Sorter {
    /// `depth` is required for the recursive variants and rejected otherwise.
    /// Epoch 0 is a seeded uniform shuffle for every variant.
    pub fn new(
        variant: Variant,
        n: usize,
        d: usize,
        kernel: KernelConfig,
        depth: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("example count n must be at least 1".into()));
        }
        if d == 0 {
            return Err(Error::Config("gradient dimension d must be at least 1".into()));
        }
        match (variant.is_recursive(), depth) {
            (true, None) => {
                return Err(Error::Config(alloc::format!("{variant} requires a tree depth")))
            }
            (true, Some(0)) => return Err(Error::Config("tree depth must be at least 1".into())),
            (false, Some(_)) => {
                return Err(Error::Config(alloc::format!(
                    "{variant} does not take a tree depth"
                )))
            }
            _ => {}
        }
        let balancer = Balancer::new(kernel)?;
        let store = match variant {
            Variant::RandomReshuffle => Store::None,
            v if v.is_recursive() => Store::Tree(AccumulatorTree::new(depth.unwrap_or(1), d)?),
            _ => Store::Flat(Accumulator::new(d)),
        };
        let current = Permutation::from_vec_unchecked(shuffled(n, seed, 0));
        let mut s = Self {
            variant,
            n,
            d,
            depth,
            seed,
            balancer,
            store,
            stale_mean: vec![0.0; d],
            running_sum: vec![0.0; d],
            seen: vec![false; n],
            stepped: 0,
            placement: Placement::None,
            current,
            epoch: 0,
            pending: None,
            placed: vec![None; n],
            counters: EpochCounters::default(),
            last_stats: None,
        };
        s.placement = s.fresh_placement();
        Ok(s)
    }

    fn fresh_placement(&self) -> Placement {
        match (&self.store, self.variant) {
            (_, Variant::RandomReshuffle) => Placement::None,
            (Store::Tree(t), _) => Placement::Leaves(Leaves::new(t.leaf_count())),
            _ => Placement::Cursor(TwoCursor::new(self.n)),
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn depth(&self) -> Option<usize> {
        self.depth
    }

    /// Completed epochs.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Order in which the current epoch should visit the examples.
    pub fn current_order(&self) -> &Permutation {
        &self.current
    }

    pub fn stale_mean(&self) -> &[f64] {
        &self.stale_mean
    }

    pub fn running_sum(&self) -> &[f64] {
        &self.running_sum
    }

    pub fn stepped(&self) -> usize {
        self.stepped
    }

    pub fn tree(&self) -> Option<&AccumulatorTree> {
        match &self.store {
            Store::Tree(t) => Some(t),
            _ => None,
        }
    }

    pub fn accumulator(&self) -> Option<&Accumulator> {
        match &self.store {
            Store::Flat(a) => Some(a),
            _ => None,
        }
    }

    pub fn accumulator_slots(&self) -> usize {
        match &self.store {
            Store::None => 0,
            Store::Flat(_) => 1,
            Store::Tree(t) => t.node_count(),
        }
    }

    /// Sign that decided each example's placement this epoch (the deepest
    /// level's sign for the recursive variants), indexed by example id.
    pub fn placement_signs(&self) -> &[Option<Sign>] {
        &self.placed
    }

    /// `(front_cursor, back_cursor)` for the two-cursor variants: the next
    /// `+1` goes to `order[front]`, the next `-1` to `order[back]`.
    pub fn cursors(&self) -> Option<(usize, isize)> {
        match &self.placement {
            Placement::Cursor(c) => Some((c.front, self.n as isize - 1 - c.back as isize)),
            _ => None,
        }
    }

    /// Feeds one batch of per-sample gradients, in visit order.
    pub fn step(&mut self, grads: &GradientMatrix) -> Result<()> {
        check_dim(self.d, grads.dim())?;
        for &id in grads.ids() {
            if id >= self.n {
                return Err(Error::ExampleOutOfRange { id, n: self.n });
            }
            if self.seen[id] {
                return Err(Error::DuplicateExample { id });
            }
        }
        if self.variant == Variant::RecursivePairBalance && !grads.len().is_power_of_two() {
            return Err(Error::BatchNotPowerOfTwo { batch: grads.len() });
        }
        for &id in grads.ids() {
            self.seen[id] = true;
        }
        self.stepped += grads.len();

        // reduce in id order so the sum does not depend on row order
        let by_id = rows_by_id(grads);
        for &r in &by_id {
            self.running_sum
                .iter_mut()
                .zip(grads.row(r))
                .for_each(|(s, x)| *s += x);
        }

        match self.variant {
            Variant::RandomReshuffle => {}
            Variant::MeanBalance => self.step_mean(grads),
            Variant::PairBalance => self.step_pair(grads),
            Variant::BatchBalance => self.step_batch(grads, &by_id),
            Variant::RecursiveBalance => self.step_recursive(grads),
            Variant::RecursivePairBalance => self.step_recursive_pair(grads),
        }
        Ok(())
    }

    fn center(&self, g: &[f64], out: &mut [f64]) {
        for ((o, x), m) in out.iter_mut().zip(g).zip(&self.stale_mean) {
            *o = x - m;
        }
    }

    fn record(&mut self, sign: Sign, v: &[f64]) {
        self.counters.energy += norm_sq(v);
        match sign {
            Sign::Plus => self.counters.plus += 1,
            Sign::Minus => self.counters.minus += 1,
        }
    }

    fn place(&mut self, id: usize, sign: Sign) {
        self.placed[id] = Some(sign);
        if let Placement::Cursor(c) = &mut self.placement {
            c.place(id, sign);
        }
        match sign {
            Sign::Plus => self.counters.front += 1,
            Sign::Minus => self.counters.back += 1,
        }
    }

    fn place_leaf(&mut self, leaf: usize, id: usize, sign: Sign) {
        self.placed[id] = Some(sign);
        if let Placement::Leaves(l) = &mut self.placement {
            l.place(leaf, id, sign);
        }
        match sign {
            Sign::Plus => self.counters.front += 1,
            Sign::Minus => self.counters.back += 1,
        }
    }

    fn flat_sign_and_update(&mut self, v: &[f64]) -> Sign {
        let Store::Flat(acc) = &mut self.store else {
            unreachable!("flat variant without flat accumulator")
        };
        let ip = crate::util::dot(acc.values(), v);
        let s = self.balancer.sign_for_dot(ip, v);
        acc.add_scaled(v, s.as_f64()).expect("dimension checked in step");
        s
    }

    fn step_mean(&mut self, grads: &GradientMatrix) {
        let mut v = vec![0.0; self.d];
        for (r, &id) in grads.rows().zip(grads.ids()) {
            self.center(r, &mut v);
            let s = self.flat_sign_and_update(&v);
            self.record(s, &v);
            self.place(id, s);
        }
    }

    fn step_pair(&mut self, grads: &GradientMatrix) {
        let mut diff = vec![0.0; self.d];
        for (r, &id) in grads.rows().zip(grads.ids()) {
            match self.pending.take() {
                None => self.pending = Some((id, r.to_vec())),
                Some((first, g)) => {
                    diff.iter_mut()
                        .zip(g.iter().zip(r))
                        .for_each(|(o, (a, b))| *o = a - b);
                    let s = self.flat_sign_and_update(&diff);
                    self.record(s, &diff);
                    self.record(-s, &[]);
                    self.place(first, s);
                    self.place(id, -s);
                }
            }
        }
    }

    fn step_batch(&mut self, grads: &GradientMatrix, by_id: &[usize]) {
        let b = grads.len();
        let mut centered = vec![0.0; b * self.d];
        for (r, row) in grads.rows().enumerate() {
            let (d, sm) = (self.d, &self.stale_mean);
            centered[r * d..(r + 1) * d]
                .iter_mut()
                .zip(row.iter().zip(sm))
                .for_each(|(o, (x, m))| *o = x - m);
        }
        let Store::Flat(acc) = &self.store else {
            unreachable!("flat variant without flat accumulator")
        };
        // every sign sees the accumulator as it was at batch start
        let dots: Vec<f64> = centered
            .chunks_exact(self.d)
            .map(|v| crate::util::dot(acc.values(), v))
            .collect();
        let mut signs = vec![Sign::Plus; b];
        for &r in by_id {
            let v = &centered[r * self.d..(r + 1) * self.d];
            signs[r] = self.balancer.sign_for_dot(dots[r], v);
        }
        let Store::Flat(acc) = &mut self.store else { unreachable!() };
        for &r in by_id {
            let v = &centered[r * self.d..(r + 1) * self.d];
            acc.add_scaled(v, signs[r].as_f64()).expect("dimension checked in step");
        }
        for r in 0..b {
            let v = &centered[r * self.d..(r + 1) * self.d];
            self.counters.energy += norm_sq(v);
            match signs[r] {
                Sign::Plus => self.counters.plus += 1,
                Sign::Minus => self.counters.minus += 1,
            }
            self.place(grads.ids()[r], signs[r]);
        }
    }

    fn step_recursive(&mut self, grads: &GradientMatrix) {
        let depth = self.depth.unwrap_or(1);
        let mut v = vec![0.0; self.d];
        for (r, &id) in grads.rows().zip(grads.ids()) {
            self.center(r, &mut v);
            let mut node = 0usize;
            let mut last = Sign::Plus;
            for _ in 0..depth {
                let Store::Tree(tree) = &mut self.store else {
                    unreachable!("recursive variant without tree")
                };
                let acc = tree.node_mut(node);
                let ip = crate::util::dot(acc.values(), &v);
                let s = self.balancer.sign_for_dot(ip, &v);
                acc.add_scaled(&v, s.as_f64()).expect("dimension checked in step");
                self.record(s, &v);
                last = s;
                node = AccumulatorTree::child(node, s);
            }
            let leaf = AccumulatorTree::offset_in_level(node);
            self.place_leaf(leaf, id, last);
        }
    }

    fn step_recursive_pair(&mut self, grads: &GradientMatrix) {
        let depth = self.depth.unwrap_or(1);
        let b = grads.len();
        let levels = depth.min(b.trailing_zeros() as usize);
        let mut groups: Vec<(usize, Vec<usize>)> = vec![(0, (0..b).collect())];
        let mut last: Vec<Sign> = vec![Sign::Plus; b];
        let mut diff = vec![0.0; self.d];

        for _ in 0..levels {
            let mut next = Vec::with_capacity(groups.len() * 2);
            for (node, members) in &groups {
                let mut left = Vec::with_capacity(members.len() / 2);
                let mut right = Vec::with_capacity(members.len() / 2);
                // signs against the node as frozen at the start of this level
                let mut decided: Vec<(usize, usize, Sign)> = Vec::with_capacity(members.len() / 2);
                for pair in members.chunks_exact(2) {
                    let (a, c) = (pair[0], pair[1]);
                    diff.iter_mut()
                        .zip(grads.row(a).iter().zip(grads.row(c)))
                        .for_each(|(o, (x, y))| *o = x - y);
                    let Store::Tree(tree) = &self.store else {
                        unreachable!("recursive variant without tree")
                    };
                    let ip = crate::util::dot(tree.node(*node).values(), &diff);
                    let s = self.balancer.sign_for_dot(ip, &diff);
                    self.record(s, &diff);
                    self.record(-s, &[]);
                    decided.push((a, c, s));
                    last[a] = s;
                    last[c] = -s;
                    if s.is_plus() {
                        left.push(a);
                        right.push(c);
                    } else {
                        left.push(c);
                        right.push(a);
                    }
                }
                let Store::Tree(tree) = &mut self.store else { unreachable!() };
                let acc = tree.node_mut(*node);
                for (a, c, s) in decided {
                    diff.iter_mut()
                        .zip(grads.row(a).iter().zip(grads.row(c)))
                        .for_each(|(o, (x, y))| *o = x - y);
                    acc.add_scaled(&diff, s.as_f64()).expect("dimension checked in step");
                }
                next.push((AccumulatorTree::child(*node, Sign::Plus), left));
                next.push((AccumulatorTree::child(*node, Sign::Minus), right));
            }
            groups = next;
        }

        let shift = depth - levels;
        for (node, members) in groups {
            let leaf = AccumulatorTree::offset_in_level(node) << shift;
            for r in members {
                self.place_leaf(leaf, grads.ids()[r], last[r]);
            }
        }
    }

    /// Finishes the epoch and returns the order for the next one.
    pub fn next_epoch(&mut self) -> Result<Permutation> {
        if self.stepped < self.n {
            return Err(Error::IncompleteEpoch {
                missing: self.n - self.stepped,
                n: self.n,
            });
        }
        if let Some((id, g)) = self.pending.take() {
            // odd example out: balanced alone, uncentered
            let s = self.flat_sign_and_update(&g);
            self.record(s, &g);
            self.place(id, s);
        }
        self.last_stats = Some(self.herding_stats());

        let order = match &self.placement {
            Placement::None => shuffled(self.n, self.seed, self.epoch + 1),
            Placement::Cursor(c) => {
                debug_assert_eq!(c.front + c.back, self.n);
                c.order.clone()
            }
            Placement::Leaves(l) => l.assemble(self.n),
        };
        let order = Permutation::new(order)?;

        if self.variant.uses_stale_mean() {
            let n = self.n as f64;
            for (m, s) in self.stale_mean.iter_mut().zip(&self.running_sum) {
                *m = s / n;
            }
        }
        self.running_sum.iter_mut().for_each(|s| *s = 0.0);
        match &mut self.store {
            Store::None => {}
            Store::Flat(a) => a.reset(),
            Store::Tree(t) => t.reset(),
        }
        self.seen.iter_mut().for_each(|s| *s = false);
        self.placed.iter_mut().for_each(|s| *s = None);
        self.stepped = 0;
        self.placement = self.fresh_placement();
        self.counters = EpochCounters {
            overflow_base: self.balancer.overflow_count(),
            calls_base: self.balancer.calls(),
            ..EpochCounters::default()
        };
        self.balancer.new_epoch();
        self.epoch += 1;
        self.current = order.clone();
        Ok(order)
    }

    /// Diagnostics for the epoch in progress.
    pub fn herding_stats(&self) -> HerdingStats {
        let (acc_l2, acc_linf, max_node_l2) = match &self.store {
            Store::None => (0.0, 0.0, 0.0),
            Store::Flat(a) => (a.norm_l2(), a.norm_inf(), a.norm_l2()),
            Store::Tree(t) => {
                let root = t.node(0);
                let max = t.nodes().iter().map(Accumulator::norm_l2).fold(0.0, f64::max);
                (root.norm_l2(), root.norm_inf(), max)
            }
        };
        HerdingStats {
            epoch: self.epoch,
            acc_l2,
            acc_linf,
            max_node_l2,
            overflow_count: self.balancer.overflow_count() - self.counters.overflow_base,
            kernel_calls: self.balancer.calls() - self.counters.calls_base,
            plus_count: self.counters.plus,
            minus_count: self.counters.minus,
            front_placements: self.counters.front,
            back_placements: self.counters.back,
            balanced_energy: self.counters.energy,
            accumulator_slots: self.accumulator_slots(),
        }
    }

    /// Diagnostics captured at the end of the most recent completed epoch.
    pub fn last_epoch_stats(&self) -> Option<&HerdingStats> {
        self.last_stats.as_ref()
    }
}

fn rows_by_id(grads: &GradientMatrix) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..grads.len()).collect();
    idx.sort_unstable_by_key(|&r| grads.ids()[r]);
    idx
}
