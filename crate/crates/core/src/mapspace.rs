//! Enumeration of the mapspace: dataplacements, dataflows (pruned to
//! helpful loops, and the unpruned reference space), and tile shapes.

use num_bigint::BigUint;
use num_traits::{One, Zero};

use crate::arch::ArchSpec;
use crate::looptree::{assemble, disassemble, Dataplacement, LoopNode, LoopTree, StorageNode};
use crate::workload::{Relevance, VarId, Workload};

/// A partial mapping: a dataplacement plus ordered loops per slot. Loop
/// bounds are symbolic until tile shapes are chosen.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PMapping {
    pub dataplacement: Dataplacement,
    pub slots: Vec<Vec<LoopNode>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Dataplacement,
    Dataflow,
    Full,
}

impl PMapping {
    /// Builds a mapping from per-slot `(var, spatial)` lists, numbering each
    /// variable's loops from the innermost (index 0) upward.
    pub fn from_order(dp: Dataplacement, order: &[Vec<(VarId, bool)>], num_vars: usize) -> PMapping {
        let mut seen = vec![0u32; num_vars];
        let mut slots: Vec<Vec<LoopNode>> = vec![Vec::new(); order.len()];
        for (slot, vars) in order.iter().enumerate().rev() {
            let mut loops = Vec::with_capacity(vars.len());
            for &(var, spatial) in vars.iter().rev() {
                loops.push(LoopNode {
                    var,
                    index: seen[var],
                    bound: None,
                    spatial,
                });
                seen[var] += 1;
            }
            loops.reverse();
            slots[slot] = loops;
        }
        PMapping {
            dataplacement: dp,
            slots,
        }
    }

    /// The symbolic mapping underlying `tree`; bounds are dropped.
    pub fn from_tree(tree: &LoopTree) -> PMapping {
        let (dataplacement, slots) = disassemble(tree);
        let slots = slots
            .into_iter()
            .map(|ls| ls.into_iter().map(|l| LoopNode { bound: None, ..l }).collect())
            .collect();
        PMapping { dataplacement, slots }
    }

    pub fn stage(&self) -> Stage {
        let loops: Vec<&LoopNode> = self.slots.iter().flatten().collect();
        if loops.is_empty() && self.slots.is_empty() {
            Stage::Dataplacement
        } else if loops.iter().all(|l| l.bound.is_some()) {
            Stage::Full
        } else {
            Stage::Dataflow
        }
    }

    pub fn tree(&self) -> LoopTree {
        assemble(&self.dataplacement, &self.slots)
    }

    /// Number of loops over each variable.
    pub fn loop_counts(&self, num_vars: usize) -> Vec<usize> {
        let mut counts = vec![0; num_vars];
        for l in self.slots.iter().flatten() {
            counts[l.var] += 1;
        }
        counts
    }

    /// Binds every loop; `bounds[v][i]` is the bound of the loop over `v`
    /// with tiling index `i`.
    pub fn bind(&self, bounds: &[Vec<u64>]) -> LoopTree {
        let slots: Vec<Vec<LoopNode>> = self
            .slots
            .iter()
            .map(|loops| {
                loops
                    .iter()
                    .map(|l| LoopNode {
                        bound: Some(bounds[l.var][l.index as usize]),
                        ..*l
                    })
                    .collect()
            })
            .collect();
        assemble(&self.dataplacement, &slots)
    }
}

/// Every dataplacement: backing-store nodes in tensor order, then any
/// sequence of allowed inner nodes in which each tensor's levels descend the
/// hierarchy.
pub fn enumerate_dataplacements(w: &Workload, a: &ArchSpec) -> Vec<Dataplacement> {
    let backing: Vec<StorageNode> = (0..w.num_tensors())
        .map(|tensor| StorageNode { level: 0, tensor })
        .collect();
    let mut candidates = Vec::new();
    for level in 1..a.num_levels() {
        for tensor in 0..w.num_tensors() {
            if a.level(level).may_keep(tensor) {
                candidates.push(StorageNode { level, tensor });
            }
        }
    }
    let mut out = Vec::new();
    let mut current = backing;
    let mut used = vec![false; candidates.len()];
    extend_placements(&candidates, &mut used, &mut current, &mut out);
    out
}

fn extend_placements(
    candidates: &[StorageNode],
    used: &mut [bool],
    current: &mut Vec<StorageNode>,
    out: &mut Vec<Dataplacement>,
) {
    out.push(Dataplacement {
        nodes: current.clone(),
    });
    for (i, c) in candidates.iter().enumerate() {
        if used[i] {
            continue;
        }
        let deepest = current
            .iter()
            .filter(|s| s.tensor == c.tensor)
            .map(|s| s.level)
            .max()
            .unwrap_or(0);
        if c.level <= deepest {
            continue;
        }
        used[i] = true;
        current.push(*c);
        extend_placements(candidates, used, current, out);
        current.pop();
        used[i] = false;
    }
}

/// Variables whose loops can help in `slot`, alphabetical.
///
/// A variable helps if it indexes the tensor stored directly below the slot
/// (so the loop shrinks that tile) and does not fully index the tensor
/// directly above (so the loop does not refetch it). The below check is
/// skipped above compute and the above check under the backing store.
/// Partially relevant variables of the tensor above still pass: they slide
/// its window, and their order is what distinguishes the dataflow variants.
/// With line buffering on, such variables also skip the below check, since a
/// loop directly under the tensor above shrinks its resident window.
pub fn helpful_vars(dp: &Dataplacement, slot: usize, w: &Workload, line_buffer: bool) -> Vec<VarId> {
    helpful_vars_with(dp, slot, w, line_buffer, None)
}

/// Deliberately wrong variants of the helpful-loop rules, used to show that
/// the pruning checks catch unsound pruning.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Also apply the above check under the backing store, treating every
    /// tensor there as the tensor above. Removes loops that do help.
    AboveCheckUnderBackingStore,
    /// Skip the below check everywhere. Only adds loops, so it stays sound.
    SkipBelowCheck,
}

pub fn helpful_vars_with(
    dp: &Dataplacement,
    slot: usize,
    w: &Workload,
    line_buffer: bool,
    fault: Option<Fault>,
) -> Vec<VarId> {
    let above = dp.above_slot(slot);
    let below = dp.below_slot(slot);
    w.vars_alphabetical()
        .into_iter()
        .filter(|&v| {
            if above.is_none() && fault == Some(Fault::AboveCheckUnderBackingStore) {
                let backing = &dp.nodes[..dp.nodes.len() - dp.inner().len()];
                if backing.iter().any(|s| w.relevance(s.tensor, v) == Relevance::Fully) {
                    return false;
                }
            }
            let above_rel = above.map(|s| w.relevance(s.tensor, v));
            if above_rel == Some(Relevance::Fully) {
                return false;
            }
            if line_buffer && above_rel == Some(Relevance::Partially) {
                return true;
            }
            fault == Some(Fault::SkipBelowCheck) || below.is_none_or(|s| w.relevance(s.tensor, v).is_relevant())
        })
        .collect()
}

/// Helpful variables of `slot` that share a multi-term dimension of the
/// tensor above; when there are two or more, each may be placed highest.
pub fn window_vars(dp: &Dataplacement, slot: usize, w: &Workload, helpful: &[VarId]) -> Vec<VarId> {
    let Some(above) = dp.above_slot(slot) else {
        return Vec::new();
    };
    let dims = &w.tensor(above.tensor).dims;
    let vars: Vec<VarId> = helpful
        .iter()
        .copied()
        .filter(|&v| dims.iter().any(|d| d.is_multi_term() && d.contains(v)))
        .collect();
    if vars.len() >= 2 {
        vars
    } else {
        Vec::new()
    }
}

fn spatial_vars(w: &Workload, a: &ArchSpec) -> Vec<VarId> {
    if a.compute().parallel_units > 1 {
        w.vars_alphabetical()
    } else {
        Vec::new()
    }
}

/// Pruned dataflows for `dp`: one loop per helpful variable per slot in
/// alphabetical order, with one variant per choice of highest window
/// variable where that choice exists. With more than one compute unit, one
/// spatial loop per variable sits directly above compute.
pub fn generate_dataflows(dp: &Dataplacement, w: &Workload, a: &ArchSpec, line_buffer: bool) -> Vec<PMapping> {
    generate_dataflows_with(dp, w, a, line_buffer, None)
}

pub fn generate_dataflows_with(
    dp: &Dataplacement,
    w: &Workload,
    a: &ArchSpec,
    line_buffer: bool,
    fault: Option<Fault>,
) -> Vec<PMapping> {
    let mut per_slot: Vec<Vec<Vec<VarId>>> = Vec::new();
    for slot in 0..dp.num_slots() {
        let helpful = helpful_vars_with(dp, slot, w, line_buffer, fault);
        let window = window_vars(dp, slot, w, &helpful);
        if window.is_empty() {
            per_slot.push(vec![helpful]);
        } else {
            per_slot.push(
                window
                    .iter()
                    .map(|&first| {
                        let mut order = vec![first];
                        order.extend(helpful.iter().copied().filter(|&v| v != first));
                        order
                    })
                    .collect(),
            );
        }
    }
    let spatial = spatial_vars(w, a);
    cross_product(&per_slot)
        .into_iter()
        .map(|choice| {
            let mut order: Vec<Vec<(VarId, bool)>> = choice
                .into_iter()
                .map(|vars| vars.into_iter().map(|v| (v, false)).collect())
                .collect();
            order.last_mut().unwrap().extend(spatial.iter().map(|&v| (v, true)));
            PMapping::from_order(dp.clone(), &order, w.num_vars())
        })
        .collect()
}

fn cross_product<T: Clone>(options: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = vec![Vec::new()];
    for opts in options {
        let mut next = Vec::with_capacity(out.len() * opts.len());
        for prefix in &out {
            for o in opts {
                let mut p = prefix.clone();
                p.push(o.clone());
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Unpruned dataflows of `dp`: every variable has one temporal loop in every
/// slot, in every order. Calls `f` for each; returns early if `f` returns
/// `false`.
pub fn for_each_unpruned_dataflow(
    dp: &Dataplacement,
    w: &Workload,
    a: &ArchSpec,
    mut f: impl FnMut(PMapping) -> bool,
) {
    let vars = w.vars_alphabetical();
    let perms = permutations(&vars);
    let spatial = spatial_vars(w, a);
    let slots = dp.num_slots();
    let mut choice = vec![0usize; slots];
    loop {
        let mut order: Vec<Vec<(VarId, bool)>> = choice
            .iter()
            .map(|&c| perms[c].iter().map(|&v| (v, false)).collect())
            .collect();
        order.last_mut().unwrap().extend(spatial.iter().map(|&v| (v, true)));
        if !f(PMapping::from_order(dp.clone(), &order, w.num_vars())) {
            return;
        }
        // Odometer with the last slot fastest.
        let mut i = slots;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            choice[i] += 1;
            if choice[i] < perms.len() {
                break;
            }
            choice[i] = 0;
        }
    }
}

/// All orderings of `items`, lexicographic by position.
pub fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let first = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, first.clone());
            out.push(tail);
        }
    }
    out
}

pub fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n.is_multiple_of(d) {
            small.push(d);
            if d * d != n {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Ordered factorizations of `n` into `parts` positive factors.
pub fn ordered_factorizations(n: u64, parts: usize) -> Vec<Vec<u64>> {
    if parts == 0 {
        return if n == 1 { vec![Vec::new()] } else { Vec::new() };
    }
    if parts == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for d in divisors(n) {
        for mut rest in ordered_factorizations(n / d, parts - 1) {
            rest.insert(0, d);
            out.push(rest);
        }
    }
    out
}

/// Number of ordered factorizations of `n` into `parts` factors: for each
/// prime power p^e of n, the ways to split e among the parts.
pub fn count_factorizations(n: u64, parts: usize) -> BigUint {
    if parts == 0 {
        return if n == 1 { BigUint::one() } else { BigUint::zero() };
    }
    let mut count = BigUint::one();
    let mut rest = n;
    let mut p = 2;
    while p * p <= rest {
        let mut e = 0u64;
        while rest.is_multiple_of(p) {
            rest /= p;
            e += 1;
        }
        if e > 0 {
            count *= binomial(e + parts as u64 - 1, parts as u64 - 1);
        }
        p += 1;
    }
    if rest > 1 {
        count *= BigUint::from(parts);
    }
    count
}

fn binomial(n: u64, k: u64) -> BigUint {
    let mut out = BigUint::one();
    for i in 0..k {
        out = out * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    out
}

/// Per-variable domains of tile shapes for a mapping's loops.
#[derive(Clone, Debug)]
pub struct TileShapeSpace {
    /// `choices[v]` lists bound vectors for `v`, innermost loop first.
    pub choices: Vec<Vec<Vec<u64>>>,
    pub count: BigUint,
}

impl TileShapeSpace {
    pub fn new(pm: &PMapping, w: &Workload) -> TileShapeSpace {
        let counts = pm.loop_counts(w.num_vars());
        let choices: Vec<Vec<Vec<u64>>> = counts
            .iter()
            .enumerate()
            .map(|(v, &j)| ordered_factorizations(w.shape(v), j))
            .collect();
        let count = counts
            .iter()
            .enumerate()
            .map(|(v, &j)| count_factorizations(w.shape(v), j))
            .product();
        TileShapeSpace { choices, count }
    }

    /// Calls `f` with every combination of per-variable bound vectors.
    pub fn for_each(&self, mut f: impl FnMut(&[Vec<u64>])) {
        let n = self.choices.len();
        if self.choices.iter().any(Vec::is_empty) {
            return;
        }
        let mut idx = vec![0usize; n];
        let mut current: Vec<Vec<u64>> = self.choices.iter().map(|c| c[0].clone()).collect();
        loop {
            f(&current);
            let mut i = n;
            loop {
                if i == 0 {
                    return;
                }
                i -= 1;
                idx[i] += 1;
                if idx[i] < self.choices[i].len() {
                    current[i] = self.choices[i][idx[i]].clone();
                    break;
                }
                idx[i] = 0;
                current[i] = self.choices[i][0].clone();
            }
        }
    }
}

/// Sizes of the mapspace before and after pruning. `df` and `ts` counts
/// are summed over dataplacements; `product` counts full mappings.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MapspaceStats {
    pub num_dp: BigUint,
    pub num_df_raw: BigUint,
    pub num_df_pruned: BigUint,
    pub num_ts_raw: BigUint,
    pub num_ts_pruned: BigUint,
    pub product_raw: BigUint,
    pub product_pruned: BigUint,
    pub num_evaluated: BigUint,
}

pub fn count_mapspace(w: &Workload, a: &ArchSpec, line_buffer: bool) -> MapspaceStats {
    let mut stats = MapspaceStats::default();
    let n = w.num_vars();
    let perms_per_slot: BigUint = (1..=n as u64).map(BigUint::from).product();
    let spatial = usize::from(a.compute().parallel_units > 1);
    for dp in enumerate_dataplacements(w, a) {
        stats.num_dp += 1u32;
        let slots = dp.num_slots();
        let df_raw = num_traits::pow(perms_per_slot.clone(), slots);
        let ts_raw: BigUint = (0..n)
            .map(|v| count_factorizations(w.shape(v), slots + spatial))
            .product();
        stats.product_raw += &df_raw * &ts_raw;
        stats.num_df_raw += df_raw;
        stats.num_ts_raw += ts_raw;

        let dfs = generate_dataflows(&dp, w, a, line_buffer);
        stats.num_df_pruned += dfs.len();
        let mut ts_dp = BigUint::zero();
        for pm in &dfs {
            let ts = TileShapeSpace::new(pm, w).count;
            stats.product_pruned += &ts;
            if ts_dp.is_zero() {
                ts_dp = ts;
            }
        }
        stats.num_ts_pruned += ts_dp;
    }
    stats
}
