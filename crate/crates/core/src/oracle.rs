//! Exhaustive ground truth for small instances: every mapping of the
//! unpruned mapspace, evaluated directly.

use std::collections::HashMap;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rayon::prelude::*;

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::looptree::{disassemble, LoopTree, Node};
use crate::mapspace::{
    count_mapspace, enumerate_dataplacements, for_each_unpruned_dataflow, generate_dataflows_with, helpful_vars_with,
    Fault, PMapping, TileShapeSpace,
};
use crate::model::{DirectEvaluator, Metrics, ModelOptions, Objective, RawMetrics};
use crate::rational::Rational;
use crate::workload::{Relevance, VarId, Workload};

pub const DEFAULT_ORACLE_CAP: u64 = 10_000_000;

/// Fails with `OracleCap` when the unpruned mapspace exceeds `cap`.
pub fn check_cap(w: &Workload, a: &ArchSpec, cap: u64) -> Result<BigUint> {
    let total = count_mapspace(w, a, false).product_raw;
    if total > BigUint::from(cap) {
        return Err(Error::OracleCap {
            count: total.to_string(),
            cap,
        });
    }
    Ok(total)
}

/// A tree whose loop bounds can be rewritten in place.
struct Binder {
    tree: LoopTree,
    loops: Vec<(usize, VarId, usize)>,
}

impl Binder {
    fn new(pm: &PMapping) -> Binder {
        let tree = pm.tree();
        let loops = tree
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n {
                Node::Loop(l) => Some((i, l.var, l.index as usize)),
                Node::Storage(_) => None,
            })
            .collect();
        Binder { tree, loops }
    }

    fn bind(&mut self, bounds: &[Vec<u64>]) -> &LoopTree {
        for &(pos, var, index) in &self.loops {
            if let Node::Loop(l) = &mut self.tree.nodes[pos] {
                l.bound = Some(bounds[var][index]);
            }
        }
        &self.tree
    }
}

/// Unpruned (dataplacement index, dataflow) pairs in enumeration order.
fn unpruned_pairs(w: &Workload, a: &ArchSpec) -> Vec<(usize, PMapping)> {
    let mut pairs = Vec::new();
    for (i, dp) in enumerate_dataplacements(w, a).into_iter().enumerate() {
        for_each_unpruned_dataflow(&dp, w, a, |pm| {
            pairs.push((i, pm));
            true
        });
    }
    pairs
}

/// Streams every mapping of the unpruned mapspace with its dataplacement
/// index, after checking the size against `cap`.
pub fn enumerate_unpruned_mapspace(
    w: &Workload,
    a: &ArchSpec,
    cap: u64,
    mut f: impl FnMut(usize, &LoopTree),
) -> Result<()> {
    check_cap(w, a, cap)?;
    for (dp, pm) in unpruned_pairs(w, a) {
        let mut binder = Binder::new(&pm);
        TileShapeSpace::new(&pm, w).for_each(|b| f(dp, binder.bind(b)));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleBest {
    pub objective: Rational,
    pub mapping: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleReport {
    pub objective: Objective,
    pub total_mappings: BigUint,
    pub valid_mappings: BigUint,
    pub best: Option<OracleBest>,
    /// `(dataplacement label, total, valid)` in enumeration order.
    pub histogram: Vec<(String, u64, u64)>,
}

#[derive(Clone, Debug, Default)]
struct Partial {
    total: u64,
    valid: u64,
    /// Per objective: scaled value and serialization of the best so far.
    best: Vec<Option<(u128, String, RawMetrics)>>,
    per_dp: Vec<(u64, u64)>,
}

impl Partial {
    fn new(objectives: usize, dps: usize) -> Partial {
        Partial {
            best: vec![None; objectives],
            per_dp: vec![(0, 0); dps],
            ..Default::default()
        }
    }

    fn merge(mut self, other: Partial) -> Partial {
        self.total += other.total;
        self.valid += other.valid;
        for (a, b) in self.per_dp.iter_mut().zip(other.per_dp) {
            a.0 += b.0;
            a.1 += b.1;
        }
        for (mine, theirs) in self.best.iter_mut().zip(other.best) {
            if let Some(t) = theirs {
                let replace = match mine {
                    None => true,
                    Some(m) => (t.0, &t.1) < (m.0, &m.1),
                };
                if replace {
                    *mine = Some(t);
                }
            }
        }
        self
    }
}

/// Exact minimum of each objective over every valid mapping of the
/// unpruned mapspace; ties go to the smallest serialization.
pub fn oracle_search(
    w: &Workload,
    a: &ArchSpec,
    objectives: &[Objective],
    opts: ModelOptions,
    cap: u64,
) -> Result<Vec<OracleReport>> {
    let total = check_cap(w, a, cap)?;
    let dps = enumerate_dataplacements(w, a);
    let pairs = unpruned_pairs(w, a);
    let merged = pairs
        .par_iter()
        .map(|(dp, pm)| {
            let mut eval = DirectEvaluator::new(w, a, opts);
            let mut binder = Binder::new(pm);
            let mut part = Partial::new(objectives.len(), dps.len());
            let mut raw = RawMetrics::default();
            TileShapeSpace::new(pm, w).for_each(|b| {
                let tree = binder.bind(b);
                eval.evaluate_raw(tree, &mut raw);
                part.total += 1;
                part.per_dp[*dp].0 += 1;
                if !raw.valid {
                    return;
                }
                part.valid += 1;
                part.per_dp[*dp].1 += 1;
                for (k, &obj) in objectives.iter().enumerate() {
                    let value = raw.scaled_objective(obj);
                    let replace = match &part.best[k] {
                        None => true,
                        Some((v, s, _)) => value < *v || (value == *v && tree.serialize(w, a) < *s),
                    };
                    if replace {
                        part.best[k] = Some((value, tree.serialize(w, a), raw.clone()));
                    }
                }
            });
            part
        })
        .reduce(|| Partial::new(objectives.len(), dps.len()), Partial::merge);
    debug_assert_eq!(BigUint::from(merged.total), total);

    let eval = DirectEvaluator::new(w, a, opts);
    Ok(objectives
        .iter()
        .enumerate()
        .map(|(k, &obj)| OracleReport {
            objective: obj,
            total_mappings: BigUint::from(merged.total),
            valid_mappings: BigUint::from(merged.valid),
            best: merged.best[k].as_ref().map(|(_, s, raw)| {
                let metrics = eval.to_metrics(raw, obj);
                OracleBest {
                    objective: metrics.objective,
                    mapping: s.clone(),
                    metrics,
                }
            }),
            histogram: dps
                .iter()
                .zip(&merged.per_dp)
                .map(|(dp, &(t, v))| (dp.label(w, a), t, v))
                .collect(),
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PruningReport {
    pub checked: u64,
    /// Mappings that needed at least one factor moved.
    pub reduced: u64,
    pub violation_count: u64,
    /// The first few violations, for diagnostics.
    pub violations: Vec<String>,
}

const MAX_LISTED: usize = 20;

/// Moves every factor of a non-helpful loop to a helpful slot of the same
/// variable: up when the variable fully indexes the tensor above (the loop
/// only refetches it), down otherwise. Returns `None` if some factor finds
/// no helpful slot.
fn reduce(bounds: &mut [Vec<u64>], helpful: &[Vec<bool>], dp_above_fully: &[Vec<bool>]) -> Option<bool> {
    let slots = bounds.len();
    let mut moved = false;
    let limit = slots * slots + 1;
    for j in 0..slots {
        for v in 0..bounds[j].len() {
            if bounds[j][v] == 1 || helpful[j][v] {
                continue;
            }
            let factor = bounds[j][v];
            bounds[j][v] = 1;
            let mut k = j;
            let mut steps = 0;
            while !helpful[k][v] {
                let up = k >= 1 && dp_above_fully[k][v];
                k = if up {
                    k - 1
                } else if k + 1 < slots {
                    k + 1
                } else if k >= 1 {
                    k - 1
                } else {
                    return None;
                };
                steps += 1;
                if steps > limit {
                    return None;
                }
            }
            bounds[k][v] *= factor;
            moved = true;
        }
    }
    Some(moved)
}

/// Checks that every unpruned mapping is matched by a generated one that is
/// no worse in energy, latency and usage at every level.
pub fn verify_pruning(
    w: &Workload,
    a: &ArchSpec,
    opts: ModelOptions,
    fault: Option<Fault>,
    cap: u64,
) -> Result<PruningReport> {
    check_cap(w, a, cap)?;
    let dps = enumerate_dataplacements(w, a);
    let reports: Vec<PruningReport> = dps
        .par_iter()
        .map(|dp| {
            let slots = dp.num_slots();
            let nv = w.num_vars();
            let helpful: Vec<Vec<bool>> = (0..slots)
                .map(|s| {
                    let h = helpful_vars_with(dp, s, w, opts.line_buffer, fault);
                    (0..nv).map(|v| h.contains(&v)).collect()
                })
                .collect();
            let above_fully: Vec<Vec<bool>> = (0..slots)
                .map(|s| {
                    (0..nv)
                        .map(|v| dp.above_slot(s).is_some_and(|n| w.relevance(n.tensor, v) == Relevance::Fully))
                        .collect()
                })
                .collect();
            let generated = generate_dataflows_with(dp, w, a, opts.line_buffer, fault);
            let mut binders: Vec<Binder> = generated.iter().map(Binder::new).collect();
            let mut eval = DirectEvaluator::new(w, a, opts);
            let mut cache: HashMap<Vec<u64>, Vec<RawMetrics>> = HashMap::new();
            let mut report = PruningReport::default();
            let mut raw = RawMetrics::default();
            let fail = |report: &mut PruningReport, msg: String| {
                report.violation_count += 1;
                if report.violations.len() < MAX_LISTED {
                    report.violations.push(msg);
                }
            };

            for_each_unpruned_dataflow(dp, w, a, |pm| {
                let mut binder = Binder::new(&pm);
                TileShapeSpace::new(&pm, w).for_each(|b| {
                    let tree = binder.bind(b);
                    report.checked += 1;
                    eval.evaluate_raw(tree, &mut raw);
                    let (_, tree_slots) = disassemble(tree);
                    let mut temporal = vec![vec![1u64; nv]; slots];
                    let mut spatial = vec![1u64; nv];
                    for (s, ls) in tree_slots.iter().enumerate() {
                        for l in ls {
                            if l.spatial {
                                spatial[l.var] = l.bound.unwrap();
                            } else {
                                temporal[s][l.var] *= l.bound.unwrap();
                            }
                        }
                    }
                    match reduce(&mut temporal, &helpful, &above_fully) {
                        None => {
                            fail(&mut report, format!("no helpful slot to absorb a factor of:\n{}", tree.serialize(w, a)));
                            return;
                        }
                        Some(true) => report.reduced += 1,
                        Some(false) => {}
                    }
                    let key: Vec<u64> = temporal.iter().flatten().chain(&spatial).copied().collect();
                    let variants = cache.entry(key).or_insert_with(|| {
                        // Every generated variant carrying the reduced bounds.
                        generated
                            .iter()
                            .zip(binders.iter_mut())
                            .map(|(pm, binder)| {
                                let mut bounds = vec![Vec::new(); nv];
                                for (s, ls) in pm.slots.iter().enumerate() {
                                    for l in ls {
                                        let b = if l.spatial { spatial[l.var] } else { temporal[s][l.var] };
                                        let idx = l.index as usize;
                                        if bounds[l.var].len() <= idx {
                                            bounds[l.var].resize(idx + 1, 1);
                                        }
                                        bounds[l.var][idx] = b;
                                    }
                                }
                                let mut r = RawMetrics::default();
                                eval.evaluate_raw(binder.bind(&bounds), &mut r);
                                r
                            })
                            .collect::<Vec<_>>()
                    });
                    let no_worse = |r: &RawMetrics| {
                        r.energy <= raw.energy
                            && r.latency <= raw.latency
                            && r.usage.iter().zip(&raw.usage).all(|(x, y)| x <= y)
                            && r.spatial_product <= raw.spatial_product
                    };
                    if !variants.iter().any(no_worse) {
                        let r = &variants[0];
                        fail(
                            &mut report,
                            format!(
                                "no reduced variant is as good (energy {} vs {}, latency {} vs {}, usage {:?} vs {:?}) for:\n{}",
                                r.energy, raw.energy, r.latency, raw.latency, r.usage, raw.usage,
                                tree.serialize(w, a)
                            ),
                        );
                    }
                });
                true
            });
            report
        })
        .collect();

    let mut total = PruningReport::default();
    for r in reports {
        total.checked += r.checked;
        total.reduced += r.reduced;
        total.violation_count += r.violation_count;
        for v in r.violations {
            if total.violations.len() < MAX_LISTED {
                total.violations.push(v);
            }
        }
    }
    Ok(total)
}

/// Number of mappings in the unpruned mapspace as a `u64`, if it fits.
pub fn unpruned_size(w: &Workload, a: &ArchSpec) -> Option<u64> {
    count_mapspace(w, a, false).product_raw.to_u64()
}
