//! The mapping IR: an ordered list of storage nodes and loop nodes above an
//! implicit compute node.
//!
//! Storage nodes say which memory level keeps a tile of which tensor; the
//! storage-node subsequence is the dataplacement. Loop nodes iterate rank
//! variables; their order is the dataflow and their bounds are the tile
//! shapes. A storage node's tile is determined by the loops below it and is
//! refetched once per iteration of the temporal loops above it.

use std::collections::HashSet;
use std::fmt;

use crate::arch::{ArchSpec, LevelId};
use crate::error::{Error, Result};
use crate::workload::{TensorId, VarId, Workload};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StorageNode {
    pub level: LevelId,
    pub tensor: TensorId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LoopNode {
    pub var: VarId,
    /// Tiling level of this loop among the loops of `var`; 0 is innermost.
    pub index: u32,
    /// `None` until tile shapes are chosen.
    pub bound: Option<u64>,
    pub spatial: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Storage(StorageNode),
    Loop(LoopNode),
}

/// Storage nodes of a mapping in order. The backing-store nodes (one per
/// tensor) come first; every other node opens a slot below it, and one more
/// slot sits above compute.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Dataplacement {
    pub nodes: Vec<StorageNode>,
}

impl Dataplacement {
    /// Storage nodes below the backing store.
    pub fn inner(&self) -> &[StorageNode] {
        let first = self.nodes.iter().position(|s| s.level != 0).unwrap_or(self.nodes.len());
        &self.nodes[first..]
    }

    pub fn num_slots(&self) -> usize {
        self.inner().len() + 1
    }

    /// Storage node directly above slot `slot`; `None` for slot 0, which sits
    /// under the backing store.
    pub fn above_slot(&self, slot: usize) -> Option<StorageNode> {
        slot.checked_sub(1).map(|i| self.inner()[i])
    }

    /// Storage node directly below slot `slot`; `None` for the slot above
    /// compute.
    pub fn below_slot(&self, slot: usize) -> Option<StorageNode> {
        self.inner().get(slot).copied()
    }

    pub fn label(&self, w: &Workload, a: &ArchSpec) -> String {
        let inner = self.inner();
        if inner.is_empty() {
            return "(backing store only)".to_string();
        }
        inner
            .iter()
            .map(|s| format!("{}:{}", a.level(s.level).name, w.tensor(s.tensor).name))
            .collect::<Vec<_>>()
            .join(" / ")
    }
}

/// Per-dimension extents of a tile and their product.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileShape {
    pub dims: Vec<u64>,
    pub words: u128,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LoopTree {
    pub nodes: Vec<Node>,
}

impl LoopTree {
    pub fn new(nodes: Vec<Node>) -> LoopTree {
        LoopTree { nodes }
    }

    pub fn loops(&self) -> impl Iterator<Item = &LoopNode> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Loop(l) => Some(l),
            Node::Storage(_) => None,
        })
    }

    pub fn storage(&self) -> impl Iterator<Item = (usize, StorageNode)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n {
            Node::Storage(s) => Some((i, *s)),
            Node::Loop(_) => None,
        })
    }

    pub fn dataplacement(&self) -> Dataplacement {
        Dataplacement {
            nodes: self.storage().map(|(_, s)| s).collect(),
        }
    }

    pub fn is_fully_bound(&self) -> bool {
        self.loops().all(|l| l.bound.is_some())
    }

    pub fn position_of(&self, s: StorageNode) -> Option<usize> {
        self.storage().find(|&(_, n)| n == s).map(|(i, _)| i)
    }

    /// Next storage node above `pos` holding the same tensor.
    pub fn parent_of(&self, pos: usize) -> Option<usize> {
        let Node::Storage(s) = self.nodes[pos] else {
            return None;
        };
        (0..pos).rev().find(|&i| matches!(self.nodes[i], Node::Storage(p) if p.tensor == s.tensor))
    }

    fn require_position(&self, s: StorageNode) -> Result<usize> {
        self.position_of(s).ok_or(Error::InvalidMapping(vec![format!(
            "storage node (level {}, tensor {}) is not in the mapping",
            s.level, s.tensor
        )]))
    }

    fn bound_of(l: &LoopNode) -> Result<u64> {
        l.bound.ok_or_else(|| Error::UnboundSymbol(format!("loop {}{}", l.var, l.index)))
    }

    /// Product of bounds of all loops (temporal and spatial) of each variable
    /// strictly below `pos`.
    pub fn extents_below(&self, pos: usize, num_vars: usize) -> Result<Vec<u64>> {
        let mut ext = vec![1u64; num_vars];
        for n in &self.nodes[pos + 1..] {
            if let Node::Loop(l) = n {
                ext[l.var] *= Self::bound_of(l)?;
            }
        }
        Ok(ext)
    }

    /// Tile of the storage node `s`: every dimension's extent over the loops
    /// below it.
    pub fn tile_shape_at(&self, w: &Workload, s: StorageNode) -> Result<TileShape> {
        let pos = self.require_position(s)?;
        let ext = self.extents_below(pos, w.num_vars())?;
        let dims: Vec<u64> = w.tensor(s.tensor).dims.iter().map(|d| d.extent(&ext)).collect();
        let words = dims.iter().map(|&d| d as u128).product();
        Ok(TileShape { dims, words })
    }

    /// Number of tiles fetched into `s`: the product of temporal loop bounds
    /// above it. Backing-store nodes are filled exactly once.
    pub fn tiles_fetched(&self, s: StorageNode) -> Result<u128> {
        let pos = self.require_position(s)?;
        if s.level == 0 {
            return Ok(1);
        }
        self.fetches_above(pos)
    }

    fn fetches_above(&self, pos: usize) -> Result<u128> {
        let mut fetched = 1u128;
        for n in &self.nodes[..pos] {
            if let Node::Loop(l) = n {
                if !l.spatial {
                    fetched *= Self::bound_of(l)? as u128;
                }
            }
        }
        Ok(fetched)
    }

    /// Structural violations; empty iff the mapping is well formed.
    pub fn validate(&self, w: &Workload, a: &ArchSpec) -> Vec<String> {
        let mut v = Vec::new();
        let tname = |t: TensorId| w.tensor(t).name.as_str();
        let lname = |l: LevelId| a.level(l).name.as_str();

        let mut seen = HashSet::new();
        let mut backing_seen = vec![0usize; w.num_tensors()];
        let mut in_backing_block = true;
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                Node::Storage(s) => {
                    if s.level >= a.num_levels() || s.tensor >= w.num_tensors() {
                        v.push(format!("node {i} references an unknown level or tensor"));
                        continue;
                    }
                    if !seen.insert(*s) {
                        v.push(format!("duplicate storage node {}:{}", lname(s.level), tname(s.tensor)));
                    }
                    if s.level == 0 {
                        backing_seen[s.tensor] += 1;
                        if !in_backing_block {
                            v.push(format!(
                                "backing-store node for {} must sit above all loops and other storage nodes",
                                tname(s.tensor)
                            ));
                        }
                    } else {
                        in_backing_block = false;
                        if !a.level(s.level).may_keep(s.tensor) {
                            v.push(format!(
                                "{} may not keep tensor {}",
                                lname(s.level),
                                tname(s.tensor)
                            ));
                        }
                    }
                }
                Node::Loop(l) => {
                    in_backing_block = false;
                    if l.var >= w.num_vars() {
                        v.push(format!("node {i} references an unknown rank variable"));
                    }
                    if l.bound == Some(0) {
                        v.push(format!("loop {}{} has bound 0", w.var(l.var).name, l.index));
                    }
                }
            }
        }
        if v.iter().any(|m| m.contains("unknown")) {
            return v;
        }
        for (t, &count) in backing_seen.iter().enumerate() {
            if count != 1 {
                v.push(format!(
                    "tensor {} needs exactly one backing-store node, found {count}",
                    tname(t)
                ));
            }
        }

        // Per-tensor hierarchy order: outer levels above inner ones.
        for t in 0..w.num_tensors() {
            let levels: Vec<LevelId> = self
                .storage()
                .filter(|(_, s)| s.tensor == t)
                .map(|(_, s)| s.level)
                .collect();
            if levels.windows(2).any(|p| p[0] >= p[1]) {
                v.push(format!("hierarchy order violated for {}", tname(t)));
            }
        }

        // Spatial loops form one contiguous block directly above compute.
        if let Some(first_spatial) = self
            .nodes
            .iter()
            .position(|n| matches!(n, Node::Loop(l) if l.spatial))
        {
            if !self.nodes[first_spatial..]
                .iter()
                .all(|n| matches!(n, Node::Loop(l) if l.spatial))
            {
                v.push("spatial loops must be contiguous and directly above compute".to_string());
            }
        }

        for var in 0..w.num_vars() {
            let loops: Vec<&LoopNode> = self.loops().filter(|l| l.var == var).collect();
            let name = &w.var(var).name;
            let expected: Vec<u32> = (0..loops.len() as u32).rev().collect();
            let got: Vec<u32> = loops.iter().map(|l| l.index).collect();
            if got != expected {
                v.push(format!(
                    "loops over {name} must be indexed {expected:?} from outermost to innermost, found {got:?}"
                ));
            }
            if loops.iter().all(|l| l.bound.is_some()) {
                let product: u128 = loops.iter().map(|l| l.bound.unwrap() as u128).product();
                if product != w.shape(var) as u128 {
                    v.push(format!(
                        "bounds for {name} do not multiply to {}",
                        w.shape(var)
                    ));
                }
            }
        }
        v
    }

    /// Lifetime and shape invariants between every pair of storage nodes.
    ///
    /// A higher node must be refetched no more often than a lower one (its
    /// fetch count divides the lower node's), and along every rank variable
    /// both tensors index, its extent must be at least the lower node's.
    pub fn check_dataplacement_invariants(&self, w: &Workload) -> Result<Vec<String>> {
        let nodes: Vec<(usize, StorageNode)> = self.storage().collect();
        let mut info = Vec::with_capacity(nodes.len());
        for &(pos, s) in &nodes {
            let fetched = if s.level == 0 { 1 } else { self.fetches_above(pos)? };
            info.push((fetched, self.extents_below(pos, w.num_vars())?));
        }
        let mut v = Vec::new();
        for hi in 0..nodes.len() {
            for lo in hi + 1..nodes.len() {
                let (s_hi, s_lo) = (nodes[hi].1, nodes[lo].1);
                let (f_hi, e_hi) = &info[hi];
                let (f_lo, e_lo) = &info[lo];
                let pair = || {
                    format!(
                        "{} above {}",
                        w.tensor(s_hi.tensor).name,
                        w.tensor(s_lo.tensor).name
                    )
                };
                if f_hi > f_lo || f_lo % f_hi != 0 {
                    v.push(format!(
                        "lifetime: {}: fetched {f_hi} times vs {f_lo}",
                        pair()
                    ));
                }
                for var in 0..w.num_vars() {
                    if w.relevance(s_hi.tensor, var).is_relevant()
                        && w.relevance(s_lo.tensor, var).is_relevant()
                        && e_hi[var] < e_lo[var]
                    {
                        v.push(format!(
                            "shape: {}: extent of {} is {} vs {}",
                            pair(),
                            w.var(var).name,
                            e_hi[var],
                            e_lo[var]
                        ));
                    }
                }
            }
        }
        Ok(v)
    }

    /// Text form: one node per line, the backing-store block on one line.
    pub fn serialize(&self, w: &Workload, a: &ArchSpec) -> String {
        let mut out = String::new();
        let mut i = 0;
        while i < self.nodes.len() {
            match self.nodes[i] {
                Node::Storage(s) => {
                    let mut tensors = vec![w.tensor(s.tensor).name.as_str()];
                    let mut j = i + 1;
                    if s.level == 0 {
                        while let Some(Node::Storage(n)) = self.nodes.get(j) {
                            if n.level != 0 {
                                break;
                            }
                            tensors.push(w.tensor(n.tensor).name.as_str());
                            j += 1;
                        }
                    }
                    out.push_str(&format!("[{}: {}]\n", a.level(s.level).name, tensors.join(", ")));
                    i = j;
                    continue;
                }
                Node::Loop(l) => {
                    let kw = if l.spatial { "par-for" } else { "for" };
                    let name = &w.var(l.var).name;
                    let bound = match l.bound {
                        Some(b) => b.to_string(),
                        None => symbol_name(name, l.index),
                    };
                    out.push_str(&format!("{kw} {name}{} in {bound}\n", l.index));
                }
            }
            i += 1;
        }
        out.push_str("compute\n");
        out
    }

    pub fn parse(text: &str, w: &Workload, a: &ArchSpec) -> Result<LoopTree> {
        let mut nodes = Vec::new();
        let mut saw_compute = false;
        let err = |line: usize, message: String| Error::TreeSyntax { line, message };
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if saw_compute {
                return Err(err(line_no, "content after `compute`".into()));
            }
            if line == "compute" {
                saw_compute = true;
            } else if let Some(body) = line.strip_prefix('[') {
                let body = body
                    .strip_suffix(']')
                    .ok_or_else(|| err(line_no, format!("unterminated storage node `{line}`")))?;
                let (level, tensors) = body
                    .split_once(':')
                    .ok_or_else(|| err(line_no, format!("expected `[<level>: <tensor>]`, got `{line}`")))?;
                let level = level.trim();
                let level_id = a
                    .level_id(level)
                    .ok_or_else(|| err(line_no, format!("unknown memory level `{level}`")))?;
                for t in tensors.split(',') {
                    let t = t.trim();
                    let tensor = w
                        .tensor_id(t)
                        .ok_or_else(|| err(line_no, format!("unknown tensor `{t}`")))?;
                    nodes.push(Node::Storage(StorageNode {
                        level: level_id,
                        tensor,
                    }));
                }
            } else {
                let (spatial, rest) = if let Some(r) = line.strip_prefix("par-for ") {
                    (true, r)
                } else if let Some(r) = line.strip_prefix("for ") {
                    (false, r)
                } else {
                    return Err(err(line_no, format!("unrecognized line `{line}`")));
                };
                let mut parts = rest.split_whitespace();
                let (Some(name), Some("in"), Some(bound), None) =
                    (parts.next(), parts.next(), parts.next(), parts.next())
                else {
                    return Err(err(line_no, format!("expected `for <var><index> in <bound>`, got `{line}`")));
                };
                let split = name.trim_end_matches(|c: char| c.is_ascii_digit()).len();
                let (var_name, index_text) = name.split_at(split);
                let var = w
                    .var_id(var_name)
                    .ok_or_else(|| err(line_no, format!("unknown rank variable in `{name}`")))?;
                let index: u32 = index_text
                    .parse()
                    .map_err(|_| err(line_no, format!("missing tiling index in `{name}`")))?;
                let bound = if bound.bytes().all(|b| b.is_ascii_digit()) {
                    let b: u64 = bound
                        .parse()
                        .map_err(|_| err(line_no, format!("bound `{bound}` out of range")))?;
                    if b == 0 {
                        return Err(err(line_no, "loop bound must be positive".into()));
                    }
                    Some(b)
                } else if bound == symbol_name(var_name, index) {
                    None
                } else {
                    return Err(err(
                        line_no,
                        format!(
                            "bound must be an integer or `{}`, got `{bound}`",
                            symbol_name(var_name, index)
                        ),
                    ));
                };
                nodes.push(Node::Loop(LoopNode {
                    var,
                    index,
                    bound,
                    spatial,
                }));
            }
        }
        if !saw_compute {
            return Err(err(text.lines().count() + 1, "missing terminal `compute`".into()));
        }
        Ok(LoopTree { nodes })
    }

    /// Per-variable loop bounds by tiling index (innermost first).
    pub fn bounds_by_var(&self, num_vars: usize) -> Vec<Vec<Option<u64>>> {
        let mut out = vec![Vec::new(); num_vars];
        for l in self.loops() {
            let slot = &mut out[l.var];
            let idx = l.index as usize;
            if slot.len() <= idx {
                slot.resize(idx + 1, None);
            }
            slot[idx] = l.bound;
        }
        out
    }
}

/// Name of the loop-bound symbol for `var` at tiling `index`, e.g. `M1`.
pub fn symbol_name(var: &str, index: u32) -> String {
    format!("{}{index}", var.to_ascii_uppercase())
}

/// Display adapter: `LoopTree::display(&w, &a)`.
pub struct TreeDisplay<'a> {
    tree: &'a LoopTree,
    w: &'a Workload,
    a: &'a ArchSpec,
}

impl LoopTree {
    pub fn display<'a>(&'a self, w: &'a Workload, a: &'a ArchSpec) -> TreeDisplay<'a> {
        TreeDisplay { tree: self, w, a }
    }
}

impl fmt::Display for TreeDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tree.serialize(self.w, self.a))
    }
}

/// Builds nodes for the storage skeleton plus per-slot loops.
pub fn assemble(dp: &Dataplacement, slots: &[Vec<LoopNode>]) -> LoopTree {
    assert_eq!(slots.len(), dp.num_slots(), "one loop list per slot");
    let backing = dp.nodes.len() - dp.inner().len();
    let mut nodes: Vec<Node> = dp.nodes[..backing].iter().map(|&s| Node::Storage(s)).collect();
    for (slot, loops) in slots.iter().enumerate() {
        if let Some(s) = dp.above_slot(slot) {
            nodes.push(Node::Storage(s));
        }
        nodes.extend(loops.iter().map(|&l| Node::Loop(l)));
    }
    LoopTree { nodes }
}

/// Splits a tree into its dataplacement and per-slot loop lists.
pub fn disassemble(tree: &LoopTree) -> (Dataplacement, Vec<Vec<LoopNode>>) {
    let dp = tree.dataplacement();
    let mut slots = vec![Vec::new()];
    let mut started = false;
    for n in &tree.nodes {
        match n {
            Node::Storage(s) if s.level == 0 && !started => {}
            Node::Storage(_) => {
                if started {
                    slots.push(Vec::new());
                } else {
                    started = true;
                    slots.push(Vec::new());
                }
            }
            Node::Loop(l) => {
                started = true;
                slots.last_mut().unwrap().push(*l);
            }
        }
    }
    (dp, slots)
}


#[cfg(test)]
mod tests {
    use super::fixtures::reference_tree;
    use super::*;
    use crate::arch::fixtures::two_level;
    use crate::workload::fixtures::{conv1d, matmul};

    fn node(tree: &LoopTree, w: &Workload, level: LevelId, t: &str) -> StorageNode {
        let s = StorageNode {
            level,
            tensor: w.tensor_id(t).unwrap(),
        };
        assert!(tree.position_of(s).is_some());
        s
    }

    #[test]
    fn reference_tree_is_valid_and_serializes_to_ten_lines() {
        let w = matmul(4, 4, 4);
        let a = two_level(16);
        let tree = reference_tree(&w, Some([2, 2, 4, 2, 2]));
        assert_eq!(tree.validate(&w, &a), Vec::<String>::new());
        let text = tree.serialize(&w, &a);
        assert_eq!(text.lines().count(), 10);
        assert_eq!(
            text,
            "[DRAM: A, B, Z]\nfor k1 in 2\nfor m1 in 2\n[GLB: A]\nfor n0 in 4\n[GLB: B]\nfor m0 in 2\n[GLB: Z]\nfor k0 in 2\ncompute\n"
        );
        assert_eq!(LoopTree::parse(&text, &w, &a).unwrap(), tree);
        let symbolic = reference_tree(&w, None);
        let text = symbolic.serialize(&w, &a);
        assert!(text.contains("for k1 in K1"));
        assert_eq!(LoopTree::parse(&text, &w, &a).unwrap(), symbolic);
    }

    #[test]
    fn inverted_hierarchy_is_reported() {
        let w = matmul(4, 4, 4);
        let a = two_level(16);
        let mut tree = reference_tree(&w, Some([2, 2, 4, 2, 2]));
        // Move DRAM:A below GLB:A.
        let dram_a = tree.nodes.remove(0);
        let glb_a = tree.position_of(StorageNode { level: 1, tensor: 0 }).unwrap();
        tree.nodes.insert(glb_a + 1, dram_a);
        let v = tree.validate(&w, &a);
        assert!(v.contains(&"hierarchy order violated for A".to_string()), "{v:?}");
    }

    #[test]
    fn bound_products_must_match_shapes() {
        let w = matmul(4, 4, 4);
        let a = two_level(16);
        let tree = reference_tree(&w, Some([2, 3, 4, 2, 2]));
        let v = tree.validate(&w, &a);
        assert_eq!(v, vec!["bounds for m do not multiply to 4".to_string()]);
    }

    #[test]
    fn keep_constraint_and_spatial_placement() {
        let w = matmul(2, 2, 2);
        let mut a = two_level(16);
        let text = "[DRAM: A, B, Z]\nfor k0 in 2\n[GLB: B]\npar-for m0 in 2\nfor n0 in 2\ncompute\n";
        let tree = LoopTree::parse(text, &w, &a).unwrap();
        let v = tree.validate(&w, &a);
        assert_eq!(v, vec!["spatial loops must be contiguous and directly above compute".to_string()]);

        a = crate::arch::fixtures::two_level_keeping(16, &[w.tensor_id("A").unwrap()]);
        let tree = LoopTree::parse("[DRAM: A, B, Z]\n[GLB: B]\nfor k0 in 2\nfor m0 in 2\nfor n0 in 2\ncompute", &w, &a).unwrap();
        assert_eq!(tree.validate(&w, &a), vec!["GLB may not keep tensor B".to_string()]);
    }

    #[test]
    fn tile_shapes_and_fetch_counts() {
        let w = matmul(4, 4, 4);
        // K1, M1, N0, M0, K0
        let tree = reference_tree(&w, Some([2, 2, 4, 2, 2]));
        let glb_a = node(&tree, &w, 1, "A");
        let glb_b = node(&tree, &w, 1, "B");
        let glb_z = node(&tree, &w, 1, "Z");
        // A[m,k] keeps M0 x K0.
        assert_eq!(tree.tile_shape_at(&w, glb_a).unwrap(), TileShape { dims: vec![2, 2], words: 4 });
        assert_eq!(tree.tiles_fetched(glb_a).unwrap(), 4); // M1 * K1
        assert_eq!(tree.tiles_fetched(glb_b).unwrap(), 16); // K1 * M1 * N0
        // Z[m,n]: nothing of m or n below it.
        assert_eq!(tree.tile_shape_at(&w, glb_z).unwrap().words, 1);
        // Backing store: fetched once, whole tensor.
        let dram_a = node(&tree, &w, 0, "A");
        assert_eq!(tree.tiles_fetched(dram_a).unwrap(), 1);
        assert_eq!(tree.tile_shape_at(&w, dram_a).unwrap().words, 16);

        let tiny = matmul(2, 2, 2);
        let tree = reference_tree(&tiny, Some([2, 2, 2, 1, 1]));
        assert_eq!(tree.tiles_fetched(node(&tree, &tiny, 1, "B")).unwrap(), 8);
    }

    #[test]
    fn empty_product_below() {
        let w = matmul(2, 2, 2);
        let a = two_level(16);
        let tree = LoopTree::parse("[DRAM: A, B, Z]\nfor k0 in 2\nfor m0 in 2\nfor n0 in 2\n[GLB: A]\ncompute", &w, &a).unwrap();
        let glb_a = node(&tree, &w, 1, "A");
        assert_eq!(tree.tile_shape_at(&w, glb_a).unwrap().words, 1);
        assert_eq!(tree.tiles_fetched(glb_a).unwrap(), 8);
    }

    #[test]
    fn halo_tiles() {
        let w = conv1d(6, 3);
        let a = two_level(16);
        let tree = LoopTree::parse("[DRAM: W, A, Z]\nfor p1 in 3\n[GLB: A]\nfor p0 in 2\nfor r0 in 3\ncompute", &w, &a).unwrap();
        assert!(tree.validate(&w, &a).is_empty());
        let glb_a = node(&tree, &w, 1, "A");
        assert_eq!(tree.tile_shape_at(&w, glb_a).unwrap().words, 4);
        assert_eq!(tree.tiles_fetched(glb_a).unwrap(), 3);
    }

    #[test]
    fn invariants_hold_on_reference_tree() {
        let w = matmul(4, 4, 4);
        let tree = reference_tree(&w, Some([2, 2, 4, 2, 2]));
        assert!(tree.check_dataplacement_invariants(&w).unwrap().is_empty());
        let glb_a = node(&tree, &w, 1, "A");
        let glb_z = node(&tree, &w, 1, "Z");
        let m = w.var_id("m").unwrap();
        let ext_a = tree.extents_below(tree.position_of(glb_a).unwrap(), 3).unwrap();
        let ext_z = tree.extents_below(tree.position_of(glb_z).unwrap(), 3).unwrap();
        assert!(ext_a[m] >= ext_z[m]);
        let single = LoopTree::parse(
            "[DRAM: A, B, Z]\nfor k0 in 4\nfor m0 in 4\nfor n0 in 4\ncompute",
            &w,
            &two_level(16),
        )
        .unwrap();
        assert!(single.check_dataplacement_invariants(&w).unwrap().is_empty());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let w = matmul(2, 2, 2);
        let a = two_level(16);
        let cases = [
            ("[DRAM: A, B, Z]\nfor q0 in 2\ncompute", 2),
            ("[DRAM: A, B, Z]\nwhile m0\ncompute", 2),
            ("[DRAM: A, B, Z]\n[L9: A]\ncompute", 2),
            ("[DRAM: A, B, Z]\nfor m0 in X\ncompute", 2),
            ("[DRAM: A, B, Z]\nfor m0 in 2\n", 3),
            ("[DRAM: A, B, Z]\ncompute\nfor m0 in 2", 3),
            ("[DRAM: A, B, Z\ncompute", 1),
        ];
        for (text, line) in cases {
            match LoopTree::parse(text, &w, &a) {
                Err(Error::TreeSyntax { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn assemble_round_trip() {
        let w = matmul(4, 4, 4);
        let tree = reference_tree(&w, Some([2, 2, 4, 2, 2]));
        let (dp, slots) = disassemble(&tree);
        assert_eq!(dp.num_slots(), 4);
        assert_eq!(slots.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 1, 1, 1]);
        assert_eq!(assemble(&dp, &slots), tree);
    }
}
