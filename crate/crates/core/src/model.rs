//! Analytical cost model.
//!
//! `curry` compiles a (dataplacement, dataflow) mapping into symbolic
//! expressions over its loop bounds; `CurriedModel::evaluate` substitutes
//! numbers. `DirectEvaluator` computes the same metrics straight from a bound
//! tree with integer arithmetic, and `trace_check` counts fills and words by
//! literally running the loop nest.
//!
//! Per storage node s with parent p (the next node above holding the same
//! tensor), `tile(s) * fetched(s)` words move over the link p-s. Inputs are
//! read at p and written at s; outputs are read at s and written at p. Both
//! endpoints count the words against their bandwidth.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::arch::{ArchSpec, LevelId};
use crate::error::{Error, Result};
use crate::looptree::{symbol_name, LoopTree, Node, StorageNode};
use crate::mapspace::PMapping;
use crate::rational::{common_denominator, Rational};
use crate::symexpr::{Poly, SymExpr, SymId, SymbolTable};
use crate::workload::{Relevance, TensorRole, VarId, Workload};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Objective {
    Edp,
    Energy,
    Latency,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Edp, Objective::Energy, Objective::Latency];

    pub fn combine(self, energy: Rational, latency: Rational) -> Rational {
        match self {
            Objective::Edp => energy * latency,
            Objective::Energy => energy,
            Objective::Latency => latency,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Edp => "edp",
            Objective::Energy => "energy",
            Objective::Latency => "latency",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Objective, String> {
        match s {
            "edp" => Ok(Objective::Edp),
            "energy" => Ok(Objective::Energy),
            "latency" => Ok(Objective::Latency),
            other => Err(format!("unknown objective `{other}` (expected edp, energy or latency)")),
        }
    }
}

/// Model switches, all off by default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ModelOptions {
    /// A temporal loop directly below a storage node that slides a
    /// multi-term window keeps only one window resident.
    pub line_buffer: bool,
    /// Charge every compute one operand access per tensor at the tensor's
    /// innermost storage level.
    pub operand_reads: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Metrics {
    pub energy: Rational,
    pub latency: Rational,
    /// Per memory level, outermost first.
    pub usage: Vec<Rational>,
    pub accesses: Vec<Rational>,
    pub spatial_product: Rational,
    pub valid: bool,
    pub objective: Rational,
}

impl Metrics {
    pub fn value_of(&self, objective: Objective) -> Rational {
        objective.combine(self.energy, self.latency)
    }
}

fn check_validity(a: &ArchSpec, usage: &[Rational], spatial: Rational) -> bool {
    a.levels()
        .iter()
        .zip(usage)
        .all(|(l, u)| l.capacity.is_none_or(|c| *u <= Rational::from(c)))
        && spatial <= Rational::from(a.compute().parallel_units)
}

/// The loop directly below storage node `pos` if it is a temporal loop over
/// a variable partially relevant to the node's tensor.
fn line_buffer_loop(tree: &LoopTree, pos: usize, w: &Workload) -> Option<usize> {
    let Node::Storage(s) = tree.nodes[pos] else {
        return None;
    };
    if s.level == 0 {
        return None;
    }
    match tree.nodes.get(pos + 1) {
        Some(Node::Loop(l)) if !l.spatial && w.relevance(s.tensor, l.var) == Relevance::Partially => {
            Some(pos + 1)
        }
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct StorageExprs {
    pub node: StorageNode,
    pub tile_size: SymExpr,
    /// Resident words; differs from `tile_size` only under line buffering.
    pub usage: SymExpr,
    pub tiles_fetched: SymExpr,
    pub accesses_to_above: SymExpr,
}

#[derive(Clone, Debug)]
pub struct LevelExprs {
    pub usage: SymExpr,
    /// `usage` before folding loop-bound products into shapes: monotone in
    /// every symbol, so evaluating it with unknown bounds at 1 gives a lower
    /// bound over all completions.
    pub usage_bound: SymExpr,
    pub accesses: SymExpr,
    pub energy: SymExpr,
    pub latency: SymExpr,
}

/// Symbolic metrics of one (dataplacement, dataflow) pair over its loop
/// bounds. Symbol `i` is the bound of the `i`-th loop from the top.
#[derive(Clone, Debug)]
pub struct CurriedModel {
    pub pmapping: PMapping,
    pub objective_kind: Objective,
    pub symbols: SymbolTable,
    /// `(var, tiling index, spatial)` per symbol.
    pub loops: Vec<(VarId, u32, bool)>,
    pub per_storage: Vec<StorageExprs>,
    pub per_level: Vec<LevelExprs>,
    pub compute_energy: SymExpr,
    pub compute_latency: SymExpr,
    pub spatial_product: SymExpr,
    pub total_energy: SymExpr,
    pub total_latency: SymExpr,
    pub objective: SymExpr,
    shapes: Vec<u64>,
}

pub fn curry(
    pm: &PMapping,
    w: &Workload,
    a: &ArchSpec,
    objective: Objective,
    opts: ModelOptions,
) -> Result<CurriedModel> {
    let tree = pm.tree();
    let violations: Vec<String> = tree
        .validate(w, a)
        .into_iter()
        .filter(|m| !m.starts_with("bounds for"))
        .collect();
    if !violations.is_empty() {
        return Err(Error::InvalidMapping(violations));
    }

    let mut symbols = SymbolTable::new();
    let mut loops = Vec::new();
    let mut sym_at = vec![None; tree.nodes.len()];
    for (i, n) in tree.nodes.iter().enumerate() {
        if let Node::Loop(l) = n {
            sym_at[i] = Some(symbols.push(symbol_name(&w.var(l.var).name, l.index)));
            loops.push((l.var, l.index, l.spatial));
        }
    }
    let groups: Vec<(Vec<SymId>, Rational)> = (0..w.num_vars())
        .map(|v| {
            let syms = loops
                .iter()
                .enumerate()
                .filter(|(_, l)| l.0 == v)
                .map(|(s, _)| s)
                .collect();
            (syms, Rational::from(w.shape(v)))
        })
        .collect();
    let fold = |p: Poly| {
        groups
            .iter()
            .fold(p, |p, (g, value)| p.fold_identity(g, *value))
    };

    // Per-variable symbolic extent below `pos`, optionally skipping one loop.
    let extents_below = |pos: usize, skip: Option<usize>| -> Vec<Poly> {
        let mut ext = vec![Poly::one(); w.num_vars()];
        for (i, n) in tree.nodes.iter().enumerate().skip(pos + 1) {
            if let (Node::Loop(l), Some(s)) = (n, sym_at[i]) {
                if Some(i) != skip {
                    ext[l.var] = ext[l.var].mul(&Poly::sym(s));
                }
            }
        }
        ext
    };
    let tile_poly = |tensor, ext: &[Poly], skip_ext: Option<(&[Poly], VarId)>| -> Poly {
        let mut tile = Poly::one();
        for d in &w.tensor(tensor).dims {
            let use_skip = skip_ext.filter(|&(_, v)| d.is_multi_term() && d.contains(v));
            let e = use_skip.map_or(ext, |(e, _)| e);
            let mut extent = Poly::constant(Rational::ONE);
            for &v in &d.terms {
                extent = extent.add(&e[v]).add(&Poly::constant(-Rational::ONE));
            }
            tile = tile.mul(&extent);
        }
        tile
    };

    let mut per_storage = Vec::new();
    let mut level_usage = vec![Poly::zero(); a.num_levels()];
    let mut level_usage_bound = vec![Poly::zero(); a.num_levels()];
    let mut level_accesses = vec![Poly::zero(); a.num_levels()];
    let mut energy = Poly::zero();
    let mut level_energy = vec![Poly::zero(); a.num_levels()];
    let mut innermost: Vec<Option<LevelId>> = vec![None; w.num_tensors()];
    for (pos, s) in tree.storage() {
        let ext = extents_below(pos, None);
        let raw_tile = tile_poly(s.tensor, &ext, None);
        let raw_usage = match (opts.line_buffer, line_buffer_loop(&tree, pos, w)) {
            (true, Some(lb)) => {
                let var = match tree.nodes[lb] {
                    Node::Loop(l) => l.var,
                    Node::Storage(_) => unreachable!(),
                };
                let skipped = extents_below(pos, Some(lb));
                tile_poly(s.tensor, &ext, Some((&skipped, var)))
            }
            _ => raw_tile.clone(),
        };
        let tile = fold(raw_tile);
        let usage = fold(raw_usage.clone());
        level_usage_bound[s.level] = level_usage_bound[s.level].add(&raw_usage);
        innermost[s.tensor] = Some(s.level);
        level_usage[s.level] = level_usage[s.level].add(&usage);
        let (fetched, accesses) = if s.level == 0 {
            (Poly::one(), Poly::zero())
        } else {
            let mut fetched = Poly::one();
            for (i, n) in tree.nodes[..pos].iter().enumerate() {
                if let (Node::Loop(l), Some(sym)) = (n, sym_at[i]) {
                    if !l.spatial {
                        fetched = fetched.mul(&Poly::sym(sym));
                    }
                }
            }
            let accesses = fold(tile.mul(&fetched));
            let parent = match tree.parent_of(pos).map(|p| tree.nodes[p]) {
                Some(Node::Storage(p)) => p,
                _ => unreachable!("validated trees give every node a parent"),
            };
            level_accesses[parent.level] = level_accesses[parent.level].add(&accesses);
            level_accesses[s.level] = level_accesses[s.level].add(&accesses);
            let (pl, sl) = (a.level(parent.level), a.level(s.level));
            let (parent_e, child_e) = match w.tensor(s.tensor).role {
                TensorRole::Input => (pl.read_energy, sl.write_energy),
                TensorRole::Output => (pl.write_energy, sl.read_energy),
            };
            level_energy[parent.level] = level_energy[parent.level].add(&accesses.scale(parent_e));
            level_energy[s.level] = level_energy[s.level].add(&accesses.scale(child_e));
            energy = energy.add(&accesses.scale(parent_e + child_e));
            (fetched, accesses)
        };
        per_storage.push(StorageExprs {
            node: s,
            tile_size: tile.to_expr(),
            usage: usage.to_expr(),
            tiles_fetched: fetched.to_expr(),
            accesses_to_above: accesses.to_expr(),
        });
    }

    let computes = Rational::from(w.computes());
    if opts.operand_reads {
        for (t, level) in innermost.iter().enumerate() {
            let level = level.expect("every tensor has a backing node");
            let ml = a.level(level);
            level_accesses[level] = level_accesses[level].add(&Poly::constant(computes));
            let e = match w.tensor(t).role {
                TensorRole::Input => ml.read_energy,
                TensorRole::Output => ml.write_energy,
            };
            energy = energy.add(&Poly::constant(computes * e));
            level_energy[level] = level_energy[level].add(&Poly::constant(computes * e));
        }
    }

    let per_level: Vec<LevelExprs> = (0..a.num_levels())
        .map(|m| {
            let ml = a.level(m);
            LevelExprs {
                usage: level_usage[m].to_expr(),
                usage_bound: level_usage_bound[m].to_expr(),
                accesses: level_accesses[m].to_expr(),
                energy: level_energy[m].to_expr(),
                latency: level_accesses[m].scale(ml.bandwidth.recip()).to_expr(),
            }
        })
        .collect();

    let spatial_syms: Vec<SymExpr> = loops
        .iter()
        .enumerate()
        .filter(|(_, l)| l.2)
        .map(|(s, _)| SymExpr::Sym(s))
        .collect();
    let spatial_product = SymExpr::Product(spatial_syms).simplify();
    let compute_energy = SymExpr::Const(computes * a.compute().energy_per_compute);
    let compute_latency = SymExpr::Quotient(
        Box::new(SymExpr::Const(computes)),
        Box::new(spatial_product.clone()),
    )
    .simplify();
    let total_energy = energy
        .add(&Poly::constant(computes * a.compute().energy_per_compute))
        .to_expr();
    let mut latencies = vec![compute_latency.clone()];
    latencies.extend(per_level.iter().map(|l| l.latency.clone()));
    let total_latency = SymExpr::Max(latencies).simplify();
    let objective_expr = match objective {
        Objective::Edp => SymExpr::Product(vec![total_energy.clone(), total_latency.clone()]).simplify(),
        Objective::Energy => total_energy.clone(),
        Objective::Latency => total_latency.clone(),
    };

    Ok(CurriedModel {
        pmapping: pm.clone(),
        objective_kind: objective,
        symbols,
        loops,
        per_storage,
        per_level,
        compute_energy,
        compute_latency,
        spatial_product,
        total_energy,
        total_latency,
        objective: objective_expr,
        shapes: (0..w.num_vars()).map(|v| w.shape(v)).collect(),
    })
}

impl CurriedModel {
    pub fn shape(&self, v: VarId) -> u64 {
        self.shapes[v]
    }

    /// Symbol bindings from per-variable bounds (innermost first).
    pub fn bindings(&self, bounds: &[Vec<u64>]) -> Vec<u64> {
        self.loops
            .iter()
            .map(|&(v, i, _)| bounds[v][i as usize])
            .collect()
    }

    pub fn evaluate(&self, env: &[u64], a: &ArchSpec) -> Result<Metrics> {
        if env.len() < self.symbols.len() {
            return Err(Error::UnboundSymbol(self.symbols.name(env.len()).to_string()));
        }
        let mut products = vec![1u128; self.shapes.len()];
        for (s, &(v, _, _)) in self.loops.iter().enumerate() {
            products[v] *= env[s] as u128;
        }
        for (v, (&p, &shape)) in products.iter().zip(&self.shapes).enumerate() {
            if p != shape as u128 {
                let var = self
                    .loops
                    .iter()
                    .position(|l| l.0 == v)
                    .map(|s| self.symbols.name(s).trim_end_matches(|c: char| c.is_ascii_digit()).to_lowercase())
                    .unwrap_or_else(|| format!("#{v}"));
                return Err(Error::Divisibility {
                    var,
                    product: p as u64,
                    shape,
                });
            }
        }
        let ev = |e: &SymExpr| e.evaluate_named(env, &self.symbols);
        let usage = self.per_level.iter().map(|l| ev(&l.usage)).collect::<Result<Vec<_>>>()?;
        let accesses = self.per_level.iter().map(|l| ev(&l.accesses)).collect::<Result<Vec<_>>>()?;
        let energy = ev(&self.total_energy)?;
        let latency = ev(&self.total_latency)?;
        let spatial_product = ev(&self.spatial_product)?;
        Ok(Metrics {
            energy,
            latency,
            valid: check_validity(a, &usage, spatial_product),
            usage,
            accesses,
            spatial_product,
            objective: self.objective_kind.combine(energy, latency),
        })
    }

    /// Every expression, one per line, for `explain`.
    pub fn dump(&self, w: &Workload, a: &ArchSpec) -> String {
        let t = &self.symbols;
        let mut out = String::new();
        out.push_str(&format!("symbols: {}\n", t.names().join(", ")));
        for s in &self.per_storage {
            let name = format!("{}:{}", a.level(s.node.level).name, w.tensor(s.node.tensor).name);
            out.push_str(&format!("tile_size({name}) = {}\n", s.tile_size.display(t)));
            if s.usage != s.tile_size {
                out.push_str(&format!("resident({name}) = {}\n", s.usage.display(t)));
            }
            out.push_str(&format!("tiles_fetched({name}) = {}\n", s.tiles_fetched.display(t)));
            out.push_str(&format!("accesses_to_above({name}) = {}\n", s.accesses_to_above.display(t)));
        }
        for (m, l) in self.per_level.iter().enumerate() {
            let name = &a.level(m).name;
            out.push_str(&format!("usage({name}) = {}\n", l.usage.display(t)));
            out.push_str(&format!("accesses({name}) = {}\n", l.accesses.display(t)));
            out.push_str(&format!("energy({name}) = {}\n", l.energy.display(t)));
            out.push_str(&format!("latency({name}) = {}\n", l.latency.display(t)));
        }
        out.push_str(&format!("compute_energy = {}\n", self.compute_energy.display(t)));
        out.push_str(&format!("compute_latency = {}\n", self.compute_latency.display(t)));
        out.push_str(&format!("total_energy = {}\n", self.total_energy.display(t)));
        out.push_str(&format!("total_latency = {}\n", self.total_latency.display(t)));
        out.push_str(&format!("objective ({}) = {}\n", self.objective_kind, self.objective.display(t)));
        out
    }
}

/// Integer results of a direct evaluation. Energy is scaled by
/// `DirectEvaluator::energy_scale` and latency by `latency_scale`, so
/// comparisons between mappings need no division.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawMetrics {
    pub energy: u128,
    pub latency: u128,
    pub usage: Vec<u128>,
    pub accesses: Vec<u128>,
    pub spatial_product: u128,
    pub valid: bool,
}

impl RawMetrics {
    /// Objective value in scaled units; order-preserving across mappings.
    pub fn scaled_objective(&self, objective: Objective) -> u128 {
        match objective {
            Objective::Edp => self.energy.checked_mul(self.latency).expect("scaled EDP overflowed u128"),
            Objective::Energy => self.energy,
            Objective::Latency => self.latency,
        }
    }
}

/// Evaluates bound trees numerically with the model's semantics.
pub struct DirectEvaluator<'a> {
    w: &'a Workload,
    a: &'a ArchSpec,
    opts: ModelOptions,
    energy_scale: u128,
    read: Vec<u128>,
    write: Vec<u128>,
    compute_energy: u128,
    latency_scale: u128,
    /// Cycles per word at each level, times `latency_scale`.
    cycles_per_word: Vec<u128>,
    computes: u128,
    // Scratch buffers reused across calls.
    tile: Vec<u128>,
    resident: Vec<u128>,
    ext: Vec<u64>,
    skip_ext: Vec<u64>,
    /// Innermost level seen so far per tensor.
    last: Vec<Option<LevelId>>,
}

fn to_u128(r: Rational) -> u128 {
    r.to_u128().expect("scaled value is a nonnegative integer")
}

impl<'a> DirectEvaluator<'a> {
    pub fn new(w: &'a Workload, a: &'a ArchSpec, opts: ModelOptions) -> DirectEvaluator<'a> {
        let mut energies: Vec<Rational> = Vec::new();
        for l in a.levels() {
            energies.push(l.read_energy);
            energies.push(l.write_energy);
        }
        energies.push(a.compute().energy_per_compute);
        let scale = common_denominator(&energies);
        let scaled = |r: Rational| to_u128(r * Rational::from_int(scale));
        let latency_scale = a
            .levels()
            .iter()
            .fold(1i128, |acc, l| num_integer::lcm(acc, l.bandwidth.numer()));
        let cycles_per_word = a
            .levels()
            .iter()
            .map(|l| to_u128(Rational::from_int(latency_scale) / l.bandwidth))
            .collect();
        DirectEvaluator {
            w,
            a,
            opts,
            energy_scale: scale as u128,
            read: a.levels().iter().map(|l| scaled(l.read_energy)).collect(),
            write: a.levels().iter().map(|l| scaled(l.write_energy)).collect(),
            compute_energy: scaled(a.compute().energy_per_compute),
            latency_scale: latency_scale as u128,
            cycles_per_word,
            computes: w.computes(),
            tile: Vec::new(),
            resident: Vec::new(),
            ext: Vec::new(),
            skip_ext: Vec::new(),
            last: Vec::new(),
        }
    }

    pub fn energy_scale(&self) -> u128 {
        self.energy_scale
    }

    pub fn latency_scale(&self) -> u128 {
        self.latency_scale
    }

    /// Validates `tree` and evaluates it.
    pub fn evaluate(&mut self, tree: &LoopTree, objective: Objective) -> Result<Metrics> {
        let violations = tree.validate(self.w, self.a);
        if !violations.is_empty() {
            return Err(Error::InvalidMapping(violations));
        }
        if !tree.is_fully_bound() {
            return Err(Error::InvalidMapping(vec!["tree has symbolic loop bounds".into()]));
        }
        let mut raw = RawMetrics::default();
        self.evaluate_raw(tree, &mut raw);
        Ok(self.to_metrics(&raw, objective))
    }

    pub fn to_metrics(&self, raw: &RawMetrics, objective: Objective) -> Metrics {
        let energy = Rational::new(raw.energy as i128, self.energy_scale as i128);
        let latency = Rational::new(raw.latency as i128, self.latency_scale as i128);
        Metrics {
            energy,
            latency,
            usage: raw.usage.iter().map(|&u| Rational::from(u)).collect(),
            accesses: raw.accesses.iter().map(|&u| Rational::from(u)).collect(),
            spatial_product: Rational::from(raw.spatial_product),
            valid: raw.valid,
            objective: objective.combine(energy, latency),
        }
    }

    /// Evaluates a valid, fully bound tree without checking it.
    pub fn evaluate_raw(&mut self, tree: &LoopTree, out: &mut RawMetrics) {
        let (w, a) = (self.w, self.a);
        let n = tree.nodes.len();
        let levels = a.num_levels();
        out.usage.clear();
        out.usage.resize(levels, 0);
        out.accesses.clear();
        out.accesses.resize(levels, 0);
        self.tile.clear();
        self.tile.resize(n, 0);
        self.resident.clear();
        self.resident.resize(n, 0);
        self.ext.clear();
        self.ext.resize(w.num_vars(), 1);

        // Bottom-up: tile extents.
        let mut spatial = 1u128;
        let mut temporal = 1u128;
        for i in (0..n).rev() {
            match tree.nodes[i] {
                Node::Loop(l) => {
                    let b = l.bound.expect("bound tree");
                    self.ext[l.var] *= b;
                    if l.spatial {
                        spatial *= b as u128;
                    } else {
                        temporal *= b as u128;
                    }
                }
                Node::Storage(s) => {
                    let dims = &w.tensor(s.tensor).dims;
                    let tile: u128 = dims.iter().map(|d| d.extent(&self.ext) as u128).product();
                    self.tile[i] = tile;
                    self.resident[i] = tile;
                    if self.opts.line_buffer {
                        if let Some(Node::Loop(l)) = line_buffer_loop(tree, i, w).map(|j| tree.nodes[j]) {
                            self.skip_ext.clone_from(&self.ext);
                            self.skip_ext[l.var] /= l.bound.unwrap();
                            self.resident[i] = dims
                                .iter()
                                .map(|d| {
                                    let e = if d.is_multi_term() && d.contains(l.var) { &self.skip_ext } else { &self.ext };
                                    d.extent(e) as u128
                                })
                                .product();
                        }
                    }
                }
            }
        }

        // Top-down: fetch counts and link traffic.
        let mut energy = 0u128;
        let mut fetched = 1u128;
        let last = &mut self.last;
        last.clear();
        last.resize(w.num_tensors(), None);
        for i in 0..n {
            match tree.nodes[i] {
                Node::Loop(l) => {
                    if !l.spatial {
                        fetched *= l.bound.unwrap() as u128;
                    }
                }
                Node::Storage(s) => {
                    out.usage[s.level] += self.resident[i];
                    if let Some(parent) = last[s.tensor] {
                        let words = self.tile[i] * fetched;
                        out.accesses[parent] += words;
                        out.accesses[s.level] += words;
                        let per_word = match w.tensor(s.tensor).role {
                            TensorRole::Input => self.read[parent] + self.write[s.level],
                            TensorRole::Output => self.read[s.level] + self.write[parent],
                        };
                        energy += words * per_word;
                    }
                    last[s.tensor] = Some(s.level);
                }
            }
        }
        if self.opts.operand_reads {
            for (t, level) in last.iter().enumerate() {
                let level = level.expect("backing node");
                out.accesses[level] += self.computes;
                energy += self.computes
                    * match w.tensor(t).role {
                        TensorRole::Input => self.read[level],
                        TensorRole::Output => self.write[level],
                    };
            }
        }
        energy += self.computes * self.compute_energy;
        let mut latency = temporal * self.latency_scale;
        for (acc, cpw) in out.accesses.iter().zip(&self.cycles_per_word) {
            latency = latency.max(acc * cpw);
        }
        out.energy = energy;
        out.latency = latency;
        out.spatial_product = spatial;
        out.valid = spatial <= a.compute().parallel_units as u128
            && a
                .levels()
                .iter()
                .zip(&out.usage)
                .all(|(l, &u)| l.capacity.is_none_or(|c| u <= c as u128));
    }
}

/// Convenience wrapper over `DirectEvaluator`.
pub fn direct_evaluate(
    tree: &LoopTree,
    w: &Workload,
    a: &ArchSpec,
    objective: Objective,
    opts: ModelOptions,
) -> Result<Metrics> {
    DirectEvaluator::new(w, a, opts).evaluate(tree, objective)
}

/// Observed traffic of one storage node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceStat {
    pub node: StorageNode,
    pub fills: u128,
    pub words: u128,
    /// Largest number of distinct coordinates resident at once.
    pub peak: u128,
}

pub const DEFAULT_TRACE_CAP: u128 = 65536;

/// Runs the temporal loop nest and, for every storage node, counts a fill
/// whenever the indices of the temporal loops above it change, adding the
/// distinct coordinates its sub-nest touches. With `line_buffer`, the
/// resident set is measured per iteration of the sliding loop instead of per
/// fill.
pub fn trace_check(tree: &LoopTree, w: &Workload, a: &ArchSpec, line_buffer: bool, cap: u128) -> Result<Vec<TraceStat>> {
    let violations = tree.validate(w, a);
    if !violations.is_empty() {
        return Err(Error::InvalidMapping(violations));
    }
    if w.computes() > cap {
        return Err(Error::TraceCap {
            computes: w.computes(),
            cap,
        });
    }
    let loops: Vec<(usize, VarId, u64, bool)> = tree
        .nodes
        .iter()
        .enumerate()
        .filter_map(|(i, n)| match n {
            Node::Loop(l) => Some((i, l.var, l.bound.unwrap(), l.spatial)),
            Node::Storage(_) => None,
        })
        .collect();
    // Stride of each loop's index in its variable's coordinate: the product
    // of bounds of that variable's loops below it.
    let strides: Vec<u64> = loops
        .iter()
        .enumerate()
        .map(|(k, &(_, v, _, _))| {
            loops[k + 1..]
                .iter()
                .filter(|l| l.1 == v)
                .map(|l| l.2)
                .product()
        })
        .collect();
    let temporal: Vec<usize> = (0..loops.len()).filter(|&k| !loops[k].3).collect();

    struct Tracked {
        node: StorageNode,
        above: Vec<usize>,
        below: Vec<usize>,
        sliding: Option<usize>,
        key: Option<Vec<u64>>,
        fills: u128,
        words: u128,
        peak: u128,
    }
    let mut tracked: Vec<Tracked> = tree
        .storage()
        .map(|(pos, s)| {
            let sliding = if line_buffer {
                line_buffer_loop(tree, pos, w).map(|j| loops.iter().position(|l| l.0 == j).unwrap())
            } else {
                None
            };
            Tracked {
                node: s,
                above: temporal.iter().copied().filter(|&k| loops[k].0 < pos).collect(),
                below: (0..loops.len()).filter(|&k| loops[k].0 > pos).collect(),
                sliding,
                key: None,
                fills: 0,
                words: 0,
                peak: 0,
            }
        })
        .collect();

    let coords_of = |tensor, idx: &[u64], sub: &[usize], fixed: Option<(usize, u64)>| -> HashSet<Vec<u64>> {
        let mut set = HashSet::new();
        let mut local = idx.to_vec();
        let free: Vec<usize> = sub.iter().copied().filter(|&k| fixed.is_none_or(|(f, _)| f != k)).collect();
        if let Some((f, val)) = fixed {
            local[f] = val;
        }
        for &k in &free {
            local[k] = 0;
        }
        loop {
            let mut var_val = vec![0u64; w.num_vars()];
            for (k, &(_, v, _, _)) in loops.iter().enumerate() {
                var_val[v] += local[k] * strides[k];
            }
            let coord: Vec<u64> = w
                .tensor(tensor)
                .dims
                .iter()
                .map(|d| d.terms.iter().map(|&v| var_val[v]).sum())
                .collect();
            set.insert(coord);
            let mut j = free.len();
            loop {
                if j == 0 {
                    return set;
                }
                j -= 1;
                let k = free[j];
                local[k] += 1;
                if local[k] < loops[k].2 {
                    break;
                }
                local[k] = 0;
            }
        }
    };

    let mut idx = vec![0u64; loops.len()];
    loop {
        for t in tracked.iter_mut() {
            if t.node.level == 0 {
                continue;
            }
            let key: Vec<u64> = t.above.iter().map(|&k| idx[k]).collect();
            if t.key.as_ref() != Some(&key) {
                t.key = Some(key);
                t.fills += 1;
                let tile = coords_of(t.node.tensor, &idx, &t.below, None);
                t.words += tile.len() as u128;
                let resident = match t.sliding {
                    Some(k) => (0..loops[k].2)
                        .map(|val| coords_of(t.node.tensor, &idx, &t.below, Some((k, val))).len() as u128)
                        .max()
                        .unwrap_or(0),
                    None => tile.len() as u128,
                };
                t.peak = t.peak.max(resident);
            }
        }
        // Advance the temporal odometer, innermost fastest.
        let mut j = temporal.len();
        loop {
            if j == 0 {
                return Ok(tracked
                    .into_iter()
                    .map(|t| {
                        if t.node.level == 0 {
                            TraceStat {
                                node: t.node,
                                fills: 1,
                                words: 0,
                                peak: w.tensor_size(t.node.tensor),
                            }
                        } else {
                            TraceStat {
                                node: t.node,
                                fills: t.fills,
                                words: t.words,
                                peak: t.peak,
                            }
                        }
                    })
                    .collect());
            }
            j -= 1;
            let k = temporal[j];
            idx[k] += 1;
            if idx[k] < loops[k].2 {
                break;
            }
            idx[k] = 0;
        }
    }
}
