//! JSON and text renderings of search, count and oracle results.
//!
//! JSON numbers are exact: integers print as decimal strings, other values as
//! `{"exact": "p/q", "approx": <float>}`. Keys keep insertion order.

use std::fmt::Write;
use std::time::Duration;

use num_bigint::BigUint;
use serde_json::{json, Map, Value};

use crate::arch::ArchSpec;
use crate::explorer::SearchReport;
use crate::mapspace::MapspaceStats;
use crate::model::Metrics;
use crate::oracle::OracleReport;
use crate::rational::Rational;

pub fn rational_json(r: Rational) -> Value {
    if r.is_integer() {
        Value::String(r.numer().to_string())
    } else {
        json!({ "exact": r.to_string(), "approx": r.to_f64() })
    }
}

fn big(n: &BigUint) -> Value {
    Value::String(n.to_string())
}

fn per_level(m: &Metrics, a: &ArchSpec) -> Value {
    let mut levels = Map::new();
    for (i, l) in a.levels().iter().enumerate() {
        levels.insert(
            l.name.clone(),
            json!({
                "usage_words": rational_json(m.usage[i]),
                "accesses_words": rational_json(m.accesses[i]),
            }),
        );
    }
    Value::Object(levels)
}

/// The `map` report. Returns `None` when no mapping is valid.
pub fn search_json(r: &SearchReport, a: &ArchSpec, wall: Duration) -> Option<Value> {
    let best = r.best.as_ref()?;
    let m = &best.metrics;
    Some(json!({
        "best_mapping": best.serialization,
        "energy_pj": rational_json(m.energy),
        "latency_cycles": rational_json(m.latency),
        "edp": rational_json(m.energy * m.latency),
        "per_level": per_level(m, a),
        "stats": {
            "num_dp": big(&r.stats.num_dp),
            "num_df_pruned": big(&r.stats.num_df_pruned),
            "num_ts_evaluated": big(&r.stats.num_evaluated),
            "wall_time_ms": wall.as_millis().to_string(),
        },
    }))
}

fn metrics_text(out: &mut String, m: &Metrics, a: &ArchSpec) {
    let _ = writeln!(out, "energy_pj:      {}", m.energy);
    let _ = writeln!(out, "latency_cycles: {}", m.latency);
    let _ = writeln!(out, "edp:            {}", m.energy * m.latency);
    for (i, l) in a.levels().iter().enumerate() {
        let _ = writeln!(out, "{}: usage {} words, accesses {} words", l.name, m.usage[i], m.accesses[i]);
    }
}

pub fn search_text(r: &SearchReport, a: &ArchSpec, wall: Duration) -> Option<String> {
    let best = r.best.as_ref()?;
    let mut out = best.serialization.clone();
    out.push('\n');
    metrics_text(&mut out, &best.metrics, a);
    let _ = writeln!(
        out,
        "dataplacements {}, dataflows {}, tile shapes evaluated {}, {} ms",
        r.stats.num_dp,
        r.stats.num_df_pruned,
        r.stats.num_evaluated,
        wall.as_millis()
    );
    Some(out)
}

pub fn count_json(s: &MapspaceStats) -> Value {
    json!({
        "num_dp": big(&s.num_dp),
        "num_df_raw": big(&s.num_df_raw),
        "num_df_pruned": big(&s.num_df_pruned),
        "num_ts_raw": big(&s.num_ts_raw),
        "num_ts_pruned": big(&s.num_ts_pruned),
        "num_mappings_raw": big(&s.product_raw),
        "num_mappings_pruned": big(&s.product_pruned),
    })
}

pub fn count_text(s: &MapspaceStats) -> String {
    format!(
        "dataplacements: {}\ndataflows:      {} raw, {} pruned\ntile shapes:    {} raw, {} pruned\nmappings:       {} raw, {} pruned\n",
        s.num_dp, s.num_df_raw, s.num_df_pruned, s.num_ts_raw, s.num_ts_pruned, s.product_raw, s.product_pruned
    )
}

pub fn oracle_json(r: &OracleReport, a: &ArchSpec) -> Value {
    let mut hist = Map::new();
    for (label, total, valid) in &r.histogram {
        hist.insert(label.clone(), json!({ "total": total.to_string(), "valid": valid.to_string() }));
    }
    let mut obj = Map::new();
    obj.insert("objective".into(), Value::String(r.objective.name().into()));
    obj.insert("total_mappings".into(), big(&r.total_mappings));
    obj.insert("valid_mappings".into(), big(&r.valid_mappings));
    match &r.best {
        Some(b) => {
            obj.insert("best_objective".into(), rational_json(b.objective));
            obj.insert("best_mapping".into(), Value::String(b.mapping.clone()));
            obj.insert("energy_pj".into(), rational_json(b.metrics.energy));
            obj.insert("latency_cycles".into(), rational_json(b.metrics.latency));
            obj.insert("per_level".into(), per_level(&b.metrics, a));
        }
        None => {
            obj.insert("best_objective".into(), Value::Null);
            obj.insert("best_mapping".into(), Value::Null);
        }
    }
    obj.insert("histogram_by_dataplacement".into(), Value::Object(hist));
    Value::Object(obj)
}

pub fn oracle_text(r: &OracleReport, a: &ArchSpec) -> String {
    let mut out = format!(
        "objective {}: {} mappings, {} valid\n",
        r.objective, r.total_mappings, r.valid_mappings
    );
    match &r.best {
        Some(b) => {
            let _ = writeln!(out, "best {} = {}", r.objective, b.objective);
            out.push_str(&b.mapping);
            out.push('\n');
            metrics_text(&mut out, &b.metrics, a);
        }
        None => out.push_str("no valid mapping\n"),
    }
    for (label, total, valid) in &r.histogram {
        let _ = writeln!(out, "  {label}: {total} mappings, {valid} valid");
    }
    out
}
