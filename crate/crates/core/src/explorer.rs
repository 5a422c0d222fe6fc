//! Tile-shape search with partial-shape pruning.
//!
//! Loop bounds are chosen one loop at a time. After each step the frontier
//! of partial shapes is filtered: a partial is dropped when every completion
//! overflows some buffer, or when another partial with the same residual
//! shapes is at least as good on every criterion derived from the curried
//! model. Both partials then admit exactly the same completions, and the
//! criteria guarantee the survivor's completion is no worse and valid
//! whenever the dropped one's is.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rayon::prelude::*;

use crate::arch::ArchSpec;
use crate::looptree::LoopTree;
use crate::mapspace::{count_mapspace, divisors, enumerate_dataplacements, generate_dataflows, ordered_factorizations, MapspaceStats, PMapping};
use crate::model::{curry, CurriedModel, Metrics, ModelOptions, Objective};
use crate::rational::Rational;
use crate::symexpr::{SymExpr, SymId};
use crate::workload::{VarId, Workload};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CriterionKind {
    Minimize,
    Maximize,
    CannotCompare,
}

impl CriterionKind {
    fn flip(self) -> CriterionKind {
        match self {
            CriterionKind::Minimize => CriterionKind::Maximize,
            CriterionKind::Maximize => CriterionKind::Minimize,
            CriterionKind::CannotCompare => CriterionKind::CannotCompare,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Criterion {
    pub expr: SymExpr,
    pub kind: CriterionKind,
}

/// Pruning criteria for partial shapes in which exactly the symbols in
/// `known` are bound.
///
/// Starts from the objective, the usage of every bounded level, total
/// latency, total energy and (with parallel units) the spatial product, and
/// splits each into parts over known symbols only. Parts over unknown
/// symbols only are identical for any two partials under the same
/// completion and are dropped. Residual shapes of variables with unbound
/// loops become cannot-compare criteria.
pub fn derive_criteria(cm: &CurriedModel, known: &BTreeSet<SymId>, a: &ArchSpec) -> Vec<Criterion> {
    let mut start = vec![cm.objective.clone()];
    for (m, l) in cm.per_level.iter().enumerate() {
        if a.level(m).capacity.is_some() {
            start.push(l.usage.clone());
        }
    }
    start.push(cm.total_latency.clone());
    start.push(cm.total_energy.clone());
    if a.compute().parallel_units > 1 {
        start.push(cm.spatial_product.clone());
    }
    let mut out = Vec::new();
    for e in &start {
        partition(e, known, CriterionKind::Minimize, &mut out);
    }

    let num_vars = cm.loops.iter().map(|l| l.0 + 1).max().unwrap_or(0);
    for v in 0..num_vars {
        let syms: Vec<SymId> = (0..cm.loops.len()).filter(|&s| cm.loops[s].0 == v).collect();
        if syms.iter().any(|s| !known.contains(s)) {
            let known_syms: Vec<SymExpr> = syms.iter().filter(|s| known.contains(s)).map(|&s| SymExpr::Sym(s)).collect();
            let shape = cm.shape(v);
            out.push(Criterion {
                expr: SymExpr::Quotient(Box::new(SymExpr::Const(Rational::from(shape))), Box::new(SymExpr::Product(known_syms))).simplify(),
                kind: CriterionKind::CannotCompare,
            });
        }
    }
    let mut seen = BTreeSet::new();
    out.retain(|c| seen.insert(c.clone()));
    out
}

fn partition(e: &SymExpr, known: &BTreeSet<SymId>, dir: CriterionKind, out: &mut Vec<Criterion>) {
    let syms = e.symbols();
    if syms.iter().all(|s| known.contains(s)) {
        push_known(e.clone(), dir, out);
        return;
    }
    if !syms.iter().any(|s| known.contains(s)) {
        return;
    }
    let all_known = |x: &SymExpr| x.symbols().iter().all(|s| known.contains(s));
    match e {
        SymExpr::Sum(xs) | SymExpr::Max(xs) | SymExpr::Min(xs) => {
            let (k, mixed): (Vec<SymExpr>, Vec<SymExpr>) = xs.iter().cloned().partition(all_known);
            let group = match e {
                SymExpr::Sum(_) => SymExpr::Sum(k),
                SymExpr::Max(_) => SymExpr::Max(k),
                _ => SymExpr::Min(k),
            };
            push_known(group, dir, out);
            for x in &mixed {
                partition(x, known, dir, out);
            }
        }
        SymExpr::Product(xs) => {
            // Non-constant factors are positive; a negative coefficient
            // reverses the direction.
            let coef: Rational = xs.iter().filter_map(SymExpr::as_const).product();
            let dir = if coef.is_negative() { dir.flip() } else { dir };
            let (k, mixed): (Vec<SymExpr>, Vec<SymExpr>) =
                xs.iter().filter(|x| x.as_const().is_none()).cloned().partition(all_known);
            push_known(SymExpr::Product(k), dir, out);
            for x in &mixed {
                partition(x, known, dir, out);
            }
        }
        SymExpr::DivConst(x, _) | SymExpr::CeilDiv(x, _) => partition(x, known, dir, out),
        SymExpr::Quotient(n, d) => {
            partition(n, known, dir, out);
            partition(d, known, dir.flip(), out);
        }
        SymExpr::Const(_) | SymExpr::Sym(_) => unreachable!("leaves are all known or all unknown"),
    }
}

/// Adds an all-known criterion after dropping constant offsets and scales.
fn push_known(e: SymExpr, dir: CriterionKind, out: &mut Vec<Criterion>) {
    let mut e = e.simplify();
    let mut dir = dir;
    if let SymExpr::Sum(xs) = &e {
        let rest: Vec<SymExpr> = xs.iter().filter(|x| x.as_const().is_none()).cloned().collect();
        e = SymExpr::Sum(rest).simplify();
    }
    if let SymExpr::Product(xs) = &e {
        if let Some(c) = xs.first().and_then(SymExpr::as_const) {
            if c.is_negative() {
                dir = dir.flip();
            }
            e = SymExpr::Product(xs[1..].to_vec()).simplify();
        }
    }
    if e.as_const().is_some() {
        return;
    }
    out.push(Criterion { expr: e, kind: dir });
}

/// Bounds chosen so far (by symbol) and the residual shape of each variable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialShape {
    pub known: Vec<Option<u64>>,
    pub residual: Vec<u64>,
    pub values: Vec<Rational>,
}

/// Whether `a` is at least as good as `b` on every criterion, with equal
/// cannot-compare keys.
pub fn dominates(a: &PartialShape, b: &PartialShape, criteria: &[Criterion]) -> bool {
    assert_eq!(
        a.known.iter().map(Option::is_some).collect::<Vec<_>>(),
        b.known.iter().map(Option::is_some).collect::<Vec<_>>(),
        "partials bind different symbols"
    );
    criteria.iter().zip(a.values.iter().zip(&b.values)).all(|(c, (x, y))| match c.kind {
        CriterionKind::Minimize => x <= y,
        CriterionKind::Maximize => x >= y,
        CriterionKind::CannotCompare => x == y,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct ExploreOptions {
    /// Dominance pruning of partial shapes; capacity pruning always runs.
    pub prune: bool,
    /// Record every pruned partial and what justified it.
    pub audit: bool,
}

impl Default for ExploreOptions {
    fn default() -> ExploreOptions {
        ExploreOptions { prune: true, audit: false }
    }
}

#[derive(Clone, Debug)]
pub struct PruneRecord {
    pub pruned: Vec<Option<u64>>,
    /// The retained dominator, or `None` when every completion overflows.
    pub by: Option<Vec<Option<u64>>>,
}

#[derive(Clone, Debug)]
pub struct Candidate {
    pub env: Vec<u64>,
    pub tree: LoopTree,
    pub serialization: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Default)]
pub struct ExploreResult {
    pub best: Option<Candidate>,
    pub evaluated: u64,
    pub frontier_peak: usize,
    pub audit: Vec<PruneRecord>,
}

/// Order in which loops get bounds: the variable of the innermost loop
/// first, then the rest alphabetically; each variable's loops innermost
/// first.
pub fn visit_order(cm: &CurriedModel, w: &Workload) -> Vec<SymId> {
    let innermost_var = cm.loops.last().map(|l| l.0);
    let mut vars: Vec<VarId> = innermost_var.into_iter().collect();
    vars.extend(w.vars_alphabetical().into_iter().filter(|&v| Some(v) != innermost_var));
    let mut order = Vec::new();
    for v in vars {
        let mut syms: Vec<SymId> = (0..cm.loops.len()).filter(|&s| cm.loops[s].0 == v).collect();
        syms.sort_by_key(|&s| cm.loops[s].1);
        order.extend(syms);
    }
    order
}

fn env_with_ones(known: &[Option<u64>]) -> Vec<u64> {
    known.iter().map(|k| k.unwrap_or(1)).collect()
}

/// Whether some completion of `known` could fit every bounded level and the
/// compute array. Uses the unfolded usage, which is monotone in every
/// symbol, at unknown bounds of 1.
fn may_fit(cm: &CurriedModel, known: &[Option<u64>], a: &ArchSpec) -> bool {
    let env = env_with_ones(known);
    for (m, l) in cm.per_level.iter().enumerate() {
        if let Some(cap) = a.level(m).capacity {
            let low = l.usage_bound.evaluate(&env[..]).expect("all symbols bound");
            if low > Rational::from(cap) {
                return false;
            }
        }
    }
    let spatial = cm.spatial_product.evaluate(&env[..]).expect("all symbols bound");
    spatial <= Rational::from(a.compute().parallel_units)
}

pub fn explore_tile_shapes(cm: &CurriedModel, w: &Workload, a: &ArchSpec, opts: ExploreOptions) -> ExploreResult {
    let order = visit_order(cm, w);
    let n = cm.loops.len();
    let mut result = ExploreResult::default();
    let mut frontier = vec![PartialShape {
        known: vec![None; n],
        residual: (0..w.num_vars()).map(|v| w.shape(v)).collect(),
        values: Vec::new(),
    }];
    let mut remaining: Vec<usize> = (0..w.num_vars())
        .map(|v| cm.loops.iter().filter(|l| l.0 == v).count())
        .collect();
    let mut known_set = BTreeSet::new();
    for &sym in &order {
        let var = cm.loops[sym].0;
        remaining[var] -= 1;
        let last = remaining[var] == 0;
        known_set.insert(sym);
        let criteria = if opts.prune { derive_criteria(cm, &known_set, a) } else { Vec::new() };

        let mut next = Vec::new();
        for p in &frontier {
            let choices = if last { vec![p.residual[var]] } else { divisors(p.residual[var]) };
            for d in choices {
                let mut q = p.clone();
                q.known[sym] = Some(d);
                q.residual[var] /= d;
                if !may_fit(cm, &q.known, a) {
                    if opts.audit {
                        result.audit.push(PruneRecord { pruned: q.known, by: None });
                    }
                    continue;
                }
                q.values = criteria
                    .iter()
                    .map(|c| c.expr.evaluate(&q.known).expect("criteria use known symbols only"))
                    .collect();
                next.push(q);
            }
        }
        if opts.prune {
            next = prune_dominated(next, &criteria, opts.audit.then_some(&mut result.audit));
        }
        result.frontier_peak = result.frontier_peak.max(next.len());
        frontier = next;
    }

    for p in frontier {
        let env: Vec<u64> = p.known.iter().map(|k| k.expect("all loops bound")).collect();
        let metrics = cm.evaluate(&env, a).expect("complete shapes evaluate");
        result.evaluated += 1;
        if !metrics.valid {
            continue;
        }
        let better = match &result.best {
            None => true,
            Some(b) => match metrics.objective.cmp(&b.metrics.objective) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => serialize_env(cm, &env, w, a) < b.serialization,
            },
        };
        if better {
            let tree = bind_env(cm, &env, w);
            let serialization = tree.serialize(w, a);
            result.best = Some(Candidate { env, tree, serialization, metrics });
        }
    }
    result
}

fn bounds_by_var(cm: &CurriedModel, env: &[u64], num_vars: usize) -> Vec<Vec<u64>> {
    let mut bounds = vec![Vec::new(); num_vars];
    for (s, &(v, i, _)) in cm.loops.iter().enumerate() {
        let slot = &mut bounds[v];
        if slot.len() <= i as usize {
            slot.resize(i as usize + 1, 1);
        }
        slot[i as usize] = env[s];
    }
    bounds
}

pub fn bind_env(cm: &CurriedModel, env: &[u64], w: &Workload) -> LoopTree {
    cm.pmapping.bind(&bounds_by_var(cm, env, w.num_vars()))
}

fn serialize_env(cm: &CurriedModel, env: &[u64], w: &Workload, a: &ArchSpec) -> String {
    bind_env(cm, env, w).serialize(w, a)
}

/// Drops every partial dominated by another one in the same cannot-compare
/// group; among equal partials the earliest survives.
fn prune_dominated(
    partials: Vec<PartialShape>,
    criteria: &[Criterion],
    mut audit: Option<&mut Vec<PruneRecord>>,
) -> Vec<PartialShape> {
    let keys: Vec<usize> = (0..criteria.len()).filter(|&i| criteria[i].kind == CriterionKind::CannotCompare).collect();
    let mut groups: HashMap<Vec<Rational>, Vec<usize>> = HashMap::new();
    let mut group_order = Vec::new();
    for (i, p) in partials.iter().enumerate() {
        let key: Vec<Rational> = keys.iter().map(|&k| p.values[k]).chain(p.residual.iter().map(|&r| Rational::from(r))).collect();
        let entry = groups.entry(key.clone()).or_default();
        if entry.is_empty() {
            group_order.push(key);
        }
        entry.push(i);
    }
    let mut keep = vec![true; partials.len()];
    for key in &group_order {
        let members = &groups[key];
        for &i in members {
            for &j in members {
                if i == j || !keep[j] {
                    continue;
                }
                // j removes i if it dominates i and either is strictly
                // better somewhere or is an earlier equal.
                if dominates(&partials[j], &partials[i], criteria)
                    && (partials[j].values != partials[i].values || j < i)
                {
                    keep[i] = false;
                    if let Some(log) = audit.as_deref_mut() {
                        log.push(PruneRecord {
                            pruned: partials[i].known.clone(),
                            by: Some(partials[j].known.clone()),
                        });
                    }
                    break;
                }
            }
        }
    }
    partials.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p).collect()
}

/// Checks audit records: every completion of a dropped partial is matched
/// by the same completion of its dominator, which must be valid whenever
/// the dropped one is and no worse in objective; capacity-dropped partials
/// must have no valid completion. Returns violations.
pub fn check_audit(cm: &CurriedModel, w: &Workload, a: &ArchSpec, records: &[PruneRecord]) -> Vec<String> {
    let mut violations = Vec::new();
    for r in records {
        for_each_completion(cm, w, &r.pruned, |env_p| {
            let mp = cm.evaluate(env_p, a).expect("complete");
            match &r.by {
                None => {
                    if mp.valid {
                        violations.push(format!("capacity-pruned partial {:?} has a valid completion {env_p:?}", r.pruned));
                    }
                }
                Some(q) => {
                    let env_q: Vec<u64> = (0..env_p.len()).map(|s| q[s].unwrap_or(env_p[s])).collect();
                    let mq = cm.evaluate(&env_q, a).expect("complete");
                    if mp.valid && (!mq.valid || mq.objective > mp.objective) {
                        violations.push(format!("{env_q:?} does not cover {env_p:?}"));
                    }
                }
            }
        });
    }
    violations
}

/// Calls `f` with every full binding extending `known`.
pub fn for_each_completion(cm: &CurriedModel, w: &Workload, known: &[Option<u64>], mut f: impl FnMut(&[u64])) {
    let mut per_var: Vec<(Vec<SymId>, Vec<Vec<u64>>)> = Vec::new();
    for v in 0..w.num_vars() {
        let syms: Vec<SymId> = (0..cm.loops.len()).filter(|&s| cm.loops[s].0 == v && known[s].is_none()).collect();
        let fixed: u64 = (0..cm.loops.len()).filter(|&s| cm.loops[s].0 == v).filter_map(|s| known[s]).product();
        let residual = w.shape(v) / fixed;
        per_var.push((syms.clone(), ordered_factorizations(residual, syms.len())));
    }
    let mut env: Vec<u64> = known.iter().map(|k| k.unwrap_or(0)).collect();
    fn rec(i: usize, per_var: &[(Vec<SymId>, Vec<Vec<u64>>)], env: &mut Vec<u64>, f: &mut dyn FnMut(&[u64])) {
        if i == per_var.len() {
            f(env);
            return;
        }
        let (syms, choices) = &per_var[i];
        for c in choices {
            for (s, &b) in syms.iter().zip(c) {
                env[*s] = b;
            }
            rec(i + 1, per_var, env, f);
        }
    }
    rec(0, &per_var, &mut env, &mut f);
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SearchOptions {
    pub model: ModelOptions,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub explore: Option<ExploreOptions>,
}

#[derive(Clone, Debug, Default)]
pub struct StageTiming {
    pub enumerate: Duration,
    pub search: Duration,
    pub count: Duration,
}

#[derive(Clone, Debug)]
pub struct SearchReport {
    pub best: Option<Candidate>,
    pub stats: MapspaceStats,
    pub timing: StageTiming,
    /// (dataplacement, dataflow) pairs explored.
    pub pairs: usize,
}

/// Pruned dataflows the search explores: without line buffering, window
/// variants that differ only by intra-slot order give identical metrics, so
/// only the first of each is kept.
pub fn search_dataflows(w: &Workload, a: &ArchSpec, line_buffer: bool) -> Vec<PMapping> {
    let mut out = Vec::new();
    for dp in enumerate_dataplacements(w, a) {
        let mut seen = Vec::new();
        for pm in generate_dataflows(&dp, w, a, line_buffer) {
            let key: Vec<Vec<VarId>> = pm
                .slots
                .iter()
                .map(|ls| {
                    let mut v: Vec<VarId> = ls.iter().map(|l| l.var).collect();
                    v.sort_unstable();
                    v
                })
                .collect();
            if line_buffer || !seen.contains(&key) {
                seen.push(key);
                out.push(pm);
            }
        }
    }
    out
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    (a.metrics.objective, &a.serialization) < (b.metrics.objective, &b.serialization)
}

pub fn search_all(w: &Workload, a: &ArchSpec, objective: Objective, opts: SearchOptions) -> SearchReport {
    let t0 = Instant::now();
    let pairs = search_dataflows(w, a, opts.model.line_buffer);
    let enumerate = t0.elapsed();

    let t1 = Instant::now();
    let explore_opts = opts.explore.unwrap_or_default();
    let run = || {
        pairs
            .par_iter()
            .map(|pm| {
                let cm = curry(pm, w, a, objective, opts.model).expect("generated mappings are valid");
                let r = explore_tile_shapes(&cm, w, a, explore_opts);
                (r.best, r.evaluated)
            })
            .reduce(
                || (None, 0),
                |(ba, ea), (bb, eb)| {
                    let best = match (ba, bb) {
                        (Some(x), Some(y)) => Some(if better(&y, &x) { y } else { x }),
                        (x, y) => x.or(y),
                    };
                    (best, ea + eb)
                },
            )
    };
    let (best, evaluated) = if opts.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.threads)
            .build()
            .expect("thread pool")
            .install(run)
    } else {
        run()
    };
    let search = t1.elapsed();

    let t2 = Instant::now();
    let mut stats = count_mapspace(w, a, opts.model.line_buffer);
    stats.num_evaluated = BigUint::from(evaluated);
    let count = t2.elapsed();
    SearchReport {
        best,
        stats,
        timing: StageTiming { enumerate, search, count },
        pairs: pairs.len(),
    }
}
