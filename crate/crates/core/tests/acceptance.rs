//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always print; exits nonzero if any fails.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use num_bigint::BigUint;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};

use tcmap::arch::ArchSpec;
use tcmap::config::RunConfig;
use tcmap::explorer::{check_audit, explore_tile_shapes, search_all, search_dataflows, ExploreOptions, SearchOptions};
use tcmap::looptree::{assemble, disassemble, Dataplacement, LoopTree, StorageNode};
use tcmap::mapspace::{
    count_mapspace, enumerate_dataplacements, for_each_unpruned_dataflow, generate_dataflows, helpful_vars, Fault,
    PMapping, TileShapeSpace,
};
use tcmap::model::{curry, direct_evaluate, trace_check, ModelOptions, Objective, DEFAULT_TRACE_CAP};
use tcmap::oracle::{oracle_search, verify_pruning, DEFAULT_ORACLE_CAP};
use tcmap::symexpr::SymExpr;
use tcmap::workload::{TensorRole, Workload};

const BUNDLED: [&str; 4] = ["matmul-tiny", "matmul-re1", "conv-tiny", "conv-re2"];

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

fn load(name: &str) -> RunConfig {
    RunConfig::load(&config_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Both cost-model variants: the default, and one that charges operand
/// reads so that staging data on chip matters.
const MODELS: [ModelOptions; 2] = [
    ModelOptions { line_buffer: false, operand_reads: false },
    ModelOptions { line_buffer: false, operand_reads: true },
];

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn optimality() -> Outcome {
    let mut checked = 0;
    for name in BUNDLED {
        let c = load(name);
        for model in MODELS {
            let oracle = oracle_search(&c.workload, &c.arch, &Objective::ALL, model, DEFAULT_ORACLE_CAP)
                .map_err(|e| format!("{name}: {e}"))?;
            for r in oracle {
                let s = search_all(&c.workload, &c.arch, r.objective, SearchOptions { model, ..Default::default() });
                let found = s.best.map(|b| b.metrics.objective);
                let truth = r.best.map(|b| b.objective);
                ensure(found == truth, || {
                    format!("{name} {} operand_reads={}: search {found:?} vs oracle {truth:?}", r.objective, model.operand_reads)
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (instance, objective, model) triples match exactly"))
}

fn currying_identity() -> Outcome {
    let mut n = 0u64;
    for name in ["matmul-tiny", "conv-tiny"] {
        let c = load(name);
        let (w, a) = (&c.workload, &c.arch);
        let mut failure = None;
        for dp in enumerate_dataplacements(w, a) {
            for_each_unpruned_dataflow(&dp, w, a, |pm| {
                let cm = match curry(&pm, w, a, Objective::Edp, ModelOptions::default()) {
                    Ok(cm) => cm,
                    Err(e) => {
                        failure = Some(format!("{name}: curry failed: {e}"));
                        return false;
                    }
                };
                TileShapeSpace::new(&pm, w).for_each(|b| {
                    if failure.is_some() {
                        return;
                    }
                    let tree = pm.bind(b);
                    let direct = direct_evaluate(&tree, w, a, Objective::Edp, ModelOptions::default());
                    let curried = cm.evaluate(&cm.bindings(b), a);
                    if direct != curried {
                        failure = Some(format!("{name}: {direct:?} vs {curried:?} on\n{}", tree.serialize(w, a)));
                    }
                    n += 1;
                });
                failure.is_none()
            });
        }
        if let Some(f) = failure {
            return Err(f);
        }
    }
    Ok(format!("{n} mappings, curried == direct"))
}

fn trace_identity() -> Outcome {
    let c = load("matmul-tiny");
    let (w, a) = (&c.workload, &c.arch);
    let mut n = 0u64;
    let mut failure = None;
    for dp in enumerate_dataplacements(w, a) {
        for_each_unpruned_dataflow(&dp, w, a, |pm| {
            let cm = curry(&pm, w, a, Objective::Edp, ModelOptions::default()).expect("curry");
            TileShapeSpace::new(&pm, w).for_each(|b| {
                if failure.is_some() {
                    return;
                }
                let tree = pm.bind(b);
                let env = cm.bindings(b);
                let trace = trace_check(&tree, w, a, false, DEFAULT_TRACE_CAP).expect("trace");
                for t in &trace {
                    let s = cm.per_storage.iter().find(|s| s.node == t.node).expect("node");
                    let fetched = s.tiles_fetched.evaluate(&env[..]).expect("eval");
                    let words = s.accesses_to_above.evaluate(&env[..]).expect("eval");
                    if fetched != t.fills.into() || words != t.words.into() {
                        failure = Some(format!(
                            "{:?}: trace fills {} words {} vs model {fetched} {words} on\n{}",
                            t.node,
                            t.fills,
                            t.words,
                            tree.serialize(w, a)
                        ));
                    }
                }
                n += 1;
            });
            failure.is_none()
        });
    }
    match failure {
        Some(f) => Err(f),
        None => Ok(format!("{n} mappings, trace == tilesFetched/accessesToAbove")),
    }
}

/// A random unpruned mapping: random dataplacement, a random loop order in
/// every slot, and random factorizations.
fn random_tree(w: &Workload, a: &ArchSpec, rng: &mut StdRng) -> LoopTree {
    let dps = enumerate_dataplacements(w, a);
    let dp = dps[rng.random_range(0..dps.len())].clone();
    let order: Vec<Vec<(usize, bool)>> = (0..dp.num_slots())
        .map(|_| {
            let mut vars: Vec<(usize, bool)> = (0..w.num_vars()).map(|v| (v, false)).collect();
            vars.shuffle(rng);
            vars
        })
        .collect();
    let pm = PMapping::from_order(dp, &order, w.num_vars());
    let space = TileShapeSpace::new(&pm, w);
    let bounds: Vec<Vec<u64>> = space.choices.iter().map(|c| c[rng.random_range(0..c.len())].clone()).collect();
    pm.bind(&bounds)
}

fn permutation_invariance() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let configs: Vec<RunConfig> = BUNDLED.iter().map(|n| load(n)).collect();
    let mut changed = 0;
    for i in 0..1000 {
        let c = &configs[i % configs.len()];
        let (w, a) = (&c.workload, &c.arch);
        let tree = random_tree(w, a, &mut rng);
        let (dp, mut slots) = disassemble(&tree);
        for s in &mut slots {
            s.shuffle(&mut rng);
        }
        let permuted = assemble(&dp, &slots);
        if permuted != tree {
            changed += 1;
        }
        for model in MODELS {
            let x = direct_evaluate(&tree, w, a, Objective::Edp, model).map_err(|e| e.to_string())?;
            let y = direct_evaluate(&permuted, w, a, Objective::Edp, model).map_err(|e| e.to_string())?;
            ensure(x == y, || {
                format!("metrics differ:\n{}\nvs\n{}", tree.serialize(w, a), permuted.serialize(w, a))
            })?;
        }
    }
    Ok(format!("1000 random mappings ({changed} reordered), metrics identical"))
}

fn loop_pruning_soundness() -> Outcome {
    let mut parts = Vec::new();
    for name in ["matmul-tiny", "matmul-re1", "conv-tiny"] {
        let c = load(name);
        let r = verify_pruning(&c.workload, &c.arch, ModelOptions::default(), None, DEFAULT_ORACLE_CAP)
            .map_err(|e| e.to_string())?;
        ensure(r.violation_count == 0, || format!("{name}: {} violations, e.g. {:?}", r.violation_count, r.violations.first()))?;
        parts.push(format!("{name} {} checked", r.checked));
    }
    let c = load("matmul-tiny");
    let bad = verify_pruning(
        &c.workload,
        &c.arch,
        ModelOptions::default(),
        Some(Fault::AboveCheckUnderBackingStore),
        DEFAULT_ORACLE_CAP,
    )
    .map_err(|e| e.to_string())?;
    ensure(bad.violation_count >= 1, || "injected fault went unnoticed".into())?;
    parts.push(format!("fault: {} violations", bad.violation_count));
    Ok(parts.join(", "))
}

fn closed_form_counts() -> Outcome {
    let mm = load("matmul-re1");
    let (w, a) = (&mm.workload, &mm.arch);
    let dps = enumerate_dataplacements(w, a);
    // (c)
    ensure(dps.len() == 16, || format!("{} dataplacements", dps.len()))?;
    // (b)
    for dp in &dps {
        let n = generate_dataflows(dp, w, a, false).len();
        ensure(n == 1, || format!("{n} dataflows for {}", dp.label(w, a)))?;
    }
    // (a) per-tensor GLB nodes: every slot below a GLB node has one helpful
    // loop. The slot under the backing store has nothing above to reuse
    // and keeps every variable relevant to the first GLB tensor.
    let mut nodes: Vec<StorageNode> = (0..3).map(|t| StorageNode { level: 0, tensor: t }).collect();
    nodes.extend((0..3).map(|t| StorageNode { level: 1, tensor: t }));
    let dp = Dataplacement { nodes };
    let counts: Vec<usize> = (0..dp.num_slots()).map(|s| helpful_vars(&dp, s, w, false).len()).collect();
    ensure(counts[1..].iter().all(|&c| c == 1), || format!("helpful per slot {counts:?}"))?;
    ensure(counts[0] == 2, || format!("helpful per slot {counts:?}"))?;
    // (d)
    let cv = load("conv-tiny");
    let (w, a) = (&cv.workload, &cv.arch);
    let glb_a = StorageNode { level: 1, tensor: w.tensor_id("A").unwrap() };
    let mut nodes: Vec<StorageNode> = (0..3).map(|t| StorageNode { level: 0, tensor: t }).collect();
    nodes.push(glb_a);
    let n = generate_dataflows(&Dataplacement { nodes }, w, a, false).len();
    ensure(n == 2, || format!("{n} conv variants with GLB:A"))?;
    Ok(format!("helpful per slot {counts:?}, 1 dataflow per dp, 16 dps, 2 conv variants"))
}

fn example_expressions() -> Outcome {
    let c = load("matmul-re1");
    let (w, a) = (&c.workload, &c.arch);
    let text = "[DRAM: A, B, Z]\nfor k1 in K1\nfor m1 in M1\n[GLB: A]\nfor n0 in N0\n[GLB: B]\nfor m0 in M0\n[GLB: Z]\nfor k0 in K0\ncompute\n";
    let tree = LoopTree::parse(text, w, a).map_err(|e| e.to_string())?;
    let cm = curry(&PMapping::from_tree(&tree), w, a, Objective::Edp, ModelOptions::default()).map_err(|e| e.to_string())?;
    let glb_b = cm
        .per_storage
        .iter()
        .find(|s| s.node == StorageNode { level: 1, tensor: w.tensor_id("B").unwrap() })
        .ok_or("no GLB:B")?;
    let m1 = cm.symbols.id("M1").ok_or("no M1")?;
    // K·N folds to 16.
    let expected = SymExpr::Product(vec![SymExpr::int(16), SymExpr::Sym(m1)]).simplify();
    ensure(glb_b.accesses_to_above.simplify() == expected, || {
        format!("accessesToAbove(GLB:B) = {}", glb_b.accesses_to_above.display(&cm.symbols))
    })?;
    let (m0, k0) = (cm.symbols.id("M0").ok_or("no M0")?, cm.symbols.id("K0").ok_or("no K0")?);
    let mk = SymExpr::Product(vec![SymExpr::Sym(m0), SymExpr::Sym(k0)]).simplify();
    let usage = &cm.per_level[1].usage;
    ensure(usage.partition_terms().contains(&mk), || format!("usage(GLB) = {}", usage.display(&cm.symbols)))?;
    Ok(format!(
        "accessesToAbove(GLB:B) = {}, usage(GLB) = {}",
        glb_b.accesses_to_above.display(&cm.symbols),
        usage.display(&cm.symbols)
    ))
}

fn emitted_invariants() -> Outcome {
    let mut n = 0u64;
    for name in BUNDLED {
        let c = load(name);
        let (w, a) = (&c.workload, &c.arch);
        for line_buffer in [false, true] {
            for dp in enumerate_dataplacements(w, a) {
                for pm in generate_dataflows(&dp, w, a, line_buffer) {
                    let mut failure = None;
                    TileShapeSpace::new(&pm, w).for_each(|b| {
                        let tree = pm.bind(b);
                        let mut v = tree.check_dataplacement_invariants(w).unwrap_or_else(|e| vec![e.to_string()]);
                        v.extend(tree.validate(w, a));
                        if !v.is_empty() && failure.is_none() {
                            failure = Some(format!("{name}: {v:?} on\n{}", tree.serialize(w, a)));
                        }
                        n += 1;
                    });
                    if let Some(f) = failure {
                        return Err(f);
                    }
                }
            }
        }
    }
    Ok(format!("{n} emitted mappings, no violations"))
}

fn partial_pruning_completeness() -> Outcome {
    let c = load("matmul-re1");
    let (w, a) = (&c.workload, &c.arch);
    let mut records = 0;
    for model in MODELS {
        for objective in Objective::ALL {
            let mut pruned_best = None;
            let mut full_best = None;
            for pm in search_dataflows(w, a, false) {
                let cm = curry(&pm, w, a, objective, model).map_err(|e| e.to_string())?;
                let p = explore_tile_shapes(&cm, w, a, ExploreOptions { prune: true, audit: true });
                let bad = check_audit(&cm, w, a, &p.audit);
                ensure(bad.is_empty(), || format!("{objective}: {}", bad[0]))?;
                records += p.audit.len();
                let f = explore_tile_shapes(&cm, w, a, ExploreOptions { prune: false, audit: false });
                let (po, fo) = (p.best.map(|b| b.metrics.objective), f.best.map(|b| b.metrics.objective));
                ensure(po == fo, || format!("{objective}: pruned {po:?} vs unpruned {fo:?}"))?;
                pruned_best = pruned_best.into_iter().chain(po).min();
                full_best = full_best.into_iter().chain(fo).min();
            }
            ensure(pruned_best == full_best, || format!("{objective}: overall best differs"))?;
        }
    }
    Ok(format!("{records} pruned partials audited, zero counterexamples"))
}

fn strip_wall_time(out: &str) -> String {
    out.lines().filter(|l| !l.contains("\"wall_time_ms\"")).collect::<Vec<_>>().join("\n")
}

fn determinism() -> Outcome {
    for name in BUNDLED {
        let mut outs = Vec::new();
        for threads in ["1", "4"] {
            let o = Command::new(env!("CARGO_BIN_EXE_tcmap"))
                .args(["map", config_path(name).to_str().unwrap(), "--threads", threads, "--output", "json"])
                .output()
                .map_err(|e| e.to_string())?;
            ensure(o.status.success(), || format!("{name}: exit {:?}", o.status))?;
            outs.push(strip_wall_time(&String::from_utf8_lossy(&o.stdout)));
        }
        ensure(outs[0] == outs[1], || format!("{name}: outputs differ"))?;
    }
    Ok("map JSON identical for 1 and 4 threads on all bundled configs".into())
}

fn pruning_rate_trend() -> Outcome {
    let arch = load("matmul-tiny").arch;
    let mut ratios: Vec<(u64, BigUint, BigUint)> = Vec::new();
    for n in [4, 8, 16] {
        let w = Workload::new(
            &[("m", n), ("n", n), ("k", n)],
            &[
                ("A", TensorRole::Input, &["m", "k"]),
                ("B", TensorRole::Input, &["k", "n"]),
                ("Z", TensorRole::Output, &["m", "n"]),
            ],
        )
        .map_err(|e| e.to_string())?;
        let s = count_mapspace(&w, &arch, false);
        ratios.push((n, s.product_pruned, s.product_raw));
    }
    for pair in ratios.windows(2) {
        let ((n0, p0, r0), (n1, p1, r1)) = (&pair[0], &pair[1]);
        // p1/r1 < p0/r0
        ensure(p1 * r0 < p0 * r1, || format!("ratio did not drop from {n0} to {n1}"))?;
    }
    Ok(ratios.iter().map(|(n, p, r)| format!("{n}: {p}/{r}")).collect::<Vec<_>>().join(", "))
}

fn main() -> std::process::ExitCode {
    let criteria: [Check; 11] = [
        ("optimality: search equals oracle", optimality),
        ("currying identity", currying_identity),
        ("trace identity", trace_identity),
        ("intra-slot permutation invariance", permutation_invariance),
        ("loop pruning soundness", loop_pruning_soundness),
        ("closed-form counts", closed_form_counts),
        ("example expressions", example_expressions),
        ("emitted mappings satisfy invariants", emitted_invariants),
        ("partial pruning completeness", partial_pruning_completeness),
        ("determinism across thread counts", determinism),
        ("pruning rate trend", pruning_rate_trend),
    ];
    let mut failed = BTreeSet::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = check();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                println!("FAIL {:>2} {name} ({secs:.1}s): {why}", i + 1);
                failed.insert(i + 1);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", criteria.len());
        std::process::ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::ExitCode::FAILURE
    }
}
