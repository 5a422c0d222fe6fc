//! Single-Einsum workloads: rank variables with shapes, and tensors indexed by
//! sums of rank variables.

use std::collections::{HashMap, HashSet};
use std::fmt;

use toml::Value;

use crate::doc::{is_identifier, Located};
use crate::error::{Error, Result};

pub type VarId = usize;
pub type TensorId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankVar {
    pub name: String,
    /// Exclusive upper bound of the coordinate range; coordinates start at 0.
    pub shape: u64,
}

/// Unit-coefficient, unit-stride sum of distinct rank variables.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IndexExpr {
    pub terms: Vec<VarId>,
}

impl IndexExpr {
    pub fn single(var: VarId) -> IndexExpr {
        IndexExpr { terms: vec![var] }
    }

    pub fn is_multi_term(&self) -> bool {
        self.terms.len() > 1
    }

    pub fn contains(&self, var: VarId) -> bool {
        self.terms.contains(&var)
    }

    /// Number of distinct coordinates the expression takes when each term
    /// ranges over `[0, extent)`: the sum of `extent - 1` plus one.
    pub fn extent_of(&self, extents: &HashMap<VarId, u64>) -> Result<u64> {
        let mut total = 1u64;
        for &v in &self.terms {
            let e = extents.get(&v).copied().ok_or(Error::OutOfRange {
                what: "per-variable extents",
                index: v,
                len: extents.len(),
            })?;
            total += e - 1;
        }
        Ok(total)
    }

    /// Same as [`IndexExpr::extent_of`] over a dense per-variable table.
    #[inline]
    pub fn extent(&self, extents: &[u64]) -> u64 {
        1 + self.terms.iter().map(|&v| extents[v] - 1).sum::<u64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TensorRole {
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorDecl {
    pub name: String,
    pub role: TensorRole,
    pub dims: Vec<IndexExpr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relevance {
    Irrelevant,
    /// The variable is the sole term of at least one dimension.
    Fully,
    /// The variable only appears inside multi-term dimensions.
    Partially,
}

impl Relevance {
    pub fn is_relevant(self) -> bool {
        self != Relevance::Irrelevant
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Workload {
    rank_vars: Vec<RankVar>,
    tensors: Vec<TensorDecl>,
    output: TensorId,
    relevance: Vec<Vec<Relevance>>,
}

impl Workload {
    /// Builds a workload from `(name, shape)` pairs and tensors whose dims
    /// are written as strings such as `"m"` or `"p+r"`.
    pub fn new(ranks: &[(&str, u64)], tensors: &[(&str, TensorRole, &[&str])]) -> Result<Workload> {
        let rank_vars = ranks
            .iter()
            .map(|&(name, shape)| RankVar {
                name: name.to_string(),
                shape,
            })
            .collect::<Vec<_>>();
        let mut decls = Vec::new();
        for (ti, &(name, role, dims)) in tensors.iter().enumerate() {
            let dims = dims
                .iter()
                .enumerate()
                .map(|(di, d)| {
                    parse_index_expr(d, &rank_vars)
                        .map_err(|m| Error::config(format!("workload.tensors[{ti}].dims[{di}]"), m))
                })
                .collect::<Result<Vec<_>>>()?;
            decls.push(TensorDecl {
                name: name.to_string(),
                role,
                dims,
            });
        }
        Workload::from_parts(rank_vars, decls)
    }

    pub fn from_parts(rank_vars: Vec<RankVar>, tensors: Vec<TensorDecl>) -> Result<Workload> {
        validate_rank_vars(&rank_vars)?;
        let mut tensor_names = HashSet::new();
        let mut outputs = Vec::new();
        for (i, t) in tensors.iter().enumerate() {
            let path = format!("workload.tensors[{i}]");
            if !is_identifier(&t.name) {
                return Err(Error::config(
                    format!("{path}.name"),
                    format!("`{}` is not a valid identifier", t.name),
                ));
            }
            if !tensor_names.insert(t.name.clone()) {
                return Err(Error::config(
                    format!("{path}.name"),
                    format!("duplicate tensor `{}`", t.name),
                ));
            }
            if t.dims.is_empty() {
                return Err(Error::config(format!("{path}.dims"), "a tensor needs at least one dimension"));
            }
            for (di, d) in t.dims.iter().enumerate() {
                let mut terms = HashSet::new();
                if d.terms.is_empty() {
                    return Err(Error::config(format!("{path}.dims[{di}]"), "empty index expression"));
                }
                for &v in &d.terms {
                    if v >= rank_vars.len() {
                        return Err(Error::config(
                            format!("{path}.dims[{di}]"),
                            format!("unknown rank variable id {v}"),
                        ));
                    }
                    if !terms.insert(v) {
                        return Err(Error::config(
                            format!("{path}.dims[{di}]"),
                            format!("rank variable `{}` repeated in one index expression", rank_vars[v].name),
                        ));
                    }
                }
            }
            if t.role == TensorRole::Output {
                outputs.push(i);
            }
        }
        let output = match outputs.as_slice() {
            [o] => *o,
            [] => return Err(Error::config("workload.tensors", "no tensor has role `output`")),
            _ => {
                return Err(Error::config(
                    "workload.tensors",
                    "exactly one tensor may have role `output`",
                ))
            }
        };
        for (vi, v) in rank_vars.iter().enumerate() {
            if !tensors.iter().any(|t| t.dims.iter().any(|d| d.contains(vi))) {
                return Err(Error::config(
                    format!("workload.ranks[{vi}]"),
                    format!("rank variable `{}` is not used by any tensor", v.name),
                ));
            }
        }
        let relevance = tensors
            .iter()
            .map(|t| {
                (0..rank_vars.len())
                    .map(|v| compute_relevance(t, v))
                    .collect()
            })
            .collect();
        Ok(Workload {
            rank_vars,
            tensors,
            output,
            relevance,
        })
    }

    pub fn rank_vars(&self) -> &[RankVar] {
        &self.rank_vars
    }

    pub fn tensors(&self) -> &[TensorDecl] {
        &self.tensors
    }

    pub fn num_vars(&self) -> usize {
        self.rank_vars.len()
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors.len()
    }

    pub fn var(&self, v: VarId) -> &RankVar {
        &self.rank_vars[v]
    }

    pub fn tensor(&self, t: TensorId) -> &TensorDecl {
        &self.tensors[t]
    }

    pub fn shape(&self, v: VarId) -> u64 {
        self.rank_vars[v].shape
    }

    pub fn output(&self) -> TensorId {
        self.output
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.rank_vars.iter().position(|v| v.name == name)
    }

    pub fn tensor_id(&self, name: &str) -> Option<TensorId> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn relevance(&self, t: TensorId, v: VarId) -> Relevance {
        self.relevance[t][v]
    }

    /// Variables summed over: those absent from the output tensor.
    pub fn contraction_vars(&self) -> Vec<VarId> {
        (0..self.num_vars())
            .filter(|&v| !self.relevance(self.output, v).is_relevant())
            .collect()
    }

    /// Total multiply-accumulates: product of all rank shapes.
    pub fn computes(&self) -> u128 {
        self.rank_vars.iter().map(|v| v.shape as u128).product()
    }

    /// Words in the full tensor.
    pub fn tensor_size(&self, t: TensorId) -> u128 {
        let shapes: Vec<u64> = self.rank_vars.iter().map(|v| v.shape).collect();
        self.tensors[t]
            .dims
            .iter()
            .map(|d| d.extent(&shapes) as u128)
            .product()
    }

    /// Variable ids sorted by name; the canonical intra-slot loop order.
    pub fn vars_alphabetical(&self) -> Vec<VarId> {
        let mut ids: Vec<VarId> = (0..self.num_vars()).collect();
        ids.sort_by(|&a, &b| self.rank_vars[a].name.cmp(&self.rank_vars[b].name));
        ids
    }

    pub fn format_index_expr(&self, e: &IndexExpr) -> String {
        e.terms
            .iter()
            .map(|&v| self.rank_vars[v].name.as_str())
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn to_toml(&self) -> Value {
        let ranks = self
            .rank_vars
            .iter()
            .map(|v| {
                let mut t = toml::Table::new();
                t.insert("name".into(), Value::String(v.name.clone()));
                t.insert("shape".into(), Value::Integer(v.shape as i64));
                Value::Table(t)
            })
            .collect();
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let mut tab = toml::Table::new();
                tab.insert("name".into(), Value::String(t.name.clone()));
                tab.insert(
                    "role".into(),
                    Value::String(match t.role {
                        TensorRole::Input => "input".into(),
                        TensorRole::Output => "output".into(),
                    }),
                );
                tab.insert(
                    "dims".into(),
                    Value::Array(
                        t.dims
                            .iter()
                            .map(|d| Value::String(self.format_index_expr(d)))
                            .collect(),
                    ),
                );
                Value::Table(tab)
            })
            .collect();
        let mut root = toml::Table::new();
        root.insert("ranks".into(), Value::Array(ranks));
        root.insert("tensors".into(), Value::Array(tensors));
        Value::Table(root)
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fmt_tensor = |t: &TensorDecl| {
            let dims: Vec<String> = t.dims.iter().map(|d| self.format_index_expr(d)).collect();
            format!("{}[{}]", t.name, dims.join(","))
        };
        let out = fmt_tensor(&self.tensors[self.output]);
        let ins: Vec<String> = self
            .tensors
            .iter()
            .filter(|t| t.role == TensorRole::Input)
            .map(fmt_tensor)
            .collect();
        write!(f, "{} = {}", out, ins.join(" x "))
    }
}

fn validate_rank_vars(rank_vars: &[RankVar]) -> Result<()> {
    let mut seen = HashSet::new();
    for (i, v) in rank_vars.iter().enumerate() {
        let path = format!("workload.ranks[{i}]");
        if !is_rank_var_name(&v.name) {
            return Err(Error::config(
                format!("{path}.name"),
                format!(
                    "`{}` is not a valid rank variable name (identifier not ending in a digit)",
                    v.name
                ),
            ));
        }
        if !seen.insert(v.name.to_ascii_lowercase()) {
            return Err(Error::config(
                format!("{path}.name"),
                format!("duplicate rank variable `{}` (names are compared case-insensitively)", v.name),
            ));
        }
        if v.shape == 0 {
            return Err(Error::config(format!("{path}.shape"), "shape must be at least 1"));
        }
    }
    Ok(())
}

fn compute_relevance(t: &TensorDecl, v: VarId) -> Relevance {
    let mut found = false;
    for d in &t.dims {
        if d.contains(v) {
            if !d.is_multi_term() {
                return Relevance::Fully;
            }
            found = true;
        }
    }
    if found {
        Relevance::Partially
    } else {
        Relevance::Irrelevant
    }
}

/// Rank-variable names may not end in a digit: loop names append the tiling
/// index (`m1`, `k0`) and must split back unambiguously.
fn is_rank_var_name(s: &str) -> bool {
    is_identifier(s) && !s.ends_with(|c: char| c.is_ascii_digit())
}

fn parse_index_expr(text: &str, vars: &[RankVar]) -> std::result::Result<IndexExpr, String> {
    let mut terms = Vec::new();
    for raw in text.split('+') {
        let name = raw.trim();
        if name.is_empty() {
            return Err(format!("malformed index expression `{text}`"));
        }
        if !is_identifier(name) {
            return Err(format!(
                "unsupported index term `{name}` in `{text}` (only sums of rank variables are allowed)"
            ));
        }
        match vars.iter().position(|v| v.name == name) {
            Some(id) => terms.push(id),
            None => return Err(format!("unknown rank variable `{name}`")),
        }
    }
    Ok(IndexExpr { terms })
}

/// Reads the `workload:` section.
pub fn parse_workload(section: &Located<'_>) -> Result<Workload> {
    section.check_keys(&["ranks", "tensors"])?;
    let mut rank_vars = Vec::new();
    for item in section.require("ranks")?.items()? {
        item.check_keys(&["name", "shape"])?;
        let name = item.require("name")?.as_str()?.to_string();
        let shape_node = item.require("shape")?;
        let shape = shape_node.as_positive_int()?;
        rank_vars.push(RankVar { name, shape });
    }
    validate_rank_vars(&rank_vars)?;
    let mut tensors = Vec::new();
    for item in section.require("tensors")?.items()? {
        item.check_keys(&["name", "role", "dims"])?;
        let name = item.require("name")?.as_str()?.to_string();
        let role_node = item.require("role")?;
        let role = match role_node.as_str()? {
            "input" => TensorRole::Input,
            "output" => TensorRole::Output,
            other => {
                return Err(role_node.err(format!("expected `input` or `output`, got `{other}`")))
            }
        };
        let mut dims = Vec::new();
        for d in item.require("dims")?.items()? {
            let text = d.as_str()?;
            dims.push(parse_index_expr(text, &rank_vars).map_err(|m| d.err(m))?);
        }
        tensors.push(TensorDecl { name, role, dims });
    }
    Workload::from_parts(rank_vars, tensors)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn matmul(m: u64, n: u64, k: u64) -> Workload {
        Workload::new(
            &[("m", m), ("n", n), ("k", k)],
            &[
                ("A", TensorRole::Input, &["m", "k"]),
                ("B", TensorRole::Input, &["k", "n"]),
                ("Z", TensorRole::Output, &["m", "n"]),
            ],
        )
        .unwrap()
    }

    pub fn conv1d(p: u64, r: u64) -> Workload {
        Workload::new(
            &[("p", p), ("r", r)],
            &[
                ("W", TensorRole::Input, &["r"]),
                ("A", TensorRole::Input, &["p+r"]),
                ("Z", TensorRole::Output, &["p"]),
            ],
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Workload> {
        let value: Value = toml::from_str(text).unwrap();
        let root = Located::root(&value);
        parse_workload(&root.require("workload")?)
    }

    #[test]
    fn parses_matmul() {
        let w = parse(
            r#"
            [workload]
            ranks = [{ name = "m", shape = 4 }, { name = "n", shape = 4 }, { name = "k", shape = 4 }]
            tensors = [
              { name = "A", role = "input", dims = ["m", "k"] },
              { name = "B", role = "input", dims = ["k", "n"] },
              { name = "Z", role = "output", dims = ["m", "n"] },
            ]
            "#,
        )
        .unwrap();
        assert_eq!(w.num_vars(), 3);
        assert_eq!(w.num_tensors(), 3);
        assert_eq!(w.contraction_vars(), vec![w.var_id("k").unwrap()]);
        assert_eq!(w, matmul(4, 4, 4));
        assert_eq!(w.to_string(), "Z[m,n] = A[m,k] x B[k,n]");
    }

    #[test]
    fn degenerate_single_op() {
        let w = Workload::new(
            &[("m", 1)],
            &[("Z", TensorRole::Output, &["m"]), ("A", TensorRole::Input, &["m"])],
        )
        .unwrap();
        assert_eq!(w.computes(), 1);
    }

    #[test]
    fn conv_halo_extent() {
        let w = conv1d(6, 3);
        let a = w.tensor_id("A").unwrap();
        assert_eq!(w.tensor_size(a), 8);
    }

    #[test]
    fn relevance_classes() {
        let mm = matmul(4, 4, 4);
        let a = mm.tensor_id("A").unwrap();
        let z = mm.tensor_id("Z").unwrap();
        assert_eq!(mm.relevance(a, mm.var_id("n").unwrap()), Relevance::Irrelevant);
        assert_eq!(mm.relevance(z, mm.var_id("m").unwrap()), Relevance::Fully);
        let cv = conv1d(6, 3);
        let ca = cv.tensor_id("A").unwrap();
        assert_eq!(cv.relevance(ca, cv.var_id("p").unwrap()), Relevance::Partially);
        assert_eq!(cv.relevance(ca, cv.var_id("r").unwrap()), Relevance::Partially);
    }

    #[test]
    fn extent_of_examples() {
        let cv = conv1d(6, 3);
        let p = cv.var_id("p").unwrap();
        let r = cv.var_id("r").unwrap();
        let pr = IndexExpr { terms: vec![p, r] };
        let ext = |pairs: &[(VarId, u64)]| pr.extent_of(&pairs.iter().copied().collect()).unwrap();
        assert_eq!(ext(&[(p, 6), (r, 3)]), 8);
        assert_eq!(ext(&[(p, 1), (r, 1)]), 1);
        assert_eq!(IndexExpr::single(p).extent_of(&[(p, 4)].into_iter().collect()).unwrap(), 4);
        assert!(pr.extent_of(&[(p, 2)].into_iter().collect()).is_err());
    }

    #[test]
    fn rejects_bad_documents() {
        let head = r#"[workload]
            ranks = [{ name = "m", shape = 4 }, { name = "k", shape = 2 }]
        "#;
        let cases = [
            (r#"tensors = [{ name = "A", role = "input", dims = ["m", "q"] }, { name = "Z", role = "output", dims = ["m", "k"] }]"#,
             "workload.tensors[0].dims[1]"),
            (r#"tensors = [{ name = "A", role = "input", dims = ["m", "k"] }]"#, "workload.tensors"),
            (r#"tensors = [{ name = "A", role = "input", dims = ["2*m", "k"] }, { name = "Z", role = "output", dims = ["m"] }]"#,
             "workload.tensors[0].dims[0]"),
            (r#"tensors = [{ name = "A", role = "output", dims = ["m", "k"] }, { name = "A", role = "input", dims = ["m"] }]"#,
             "workload.tensors[1].name"),
            (r#"tensors = [{ name = "Z", role = "output", dims = ["m+m", "k"] }]"#, "workload.tensors[0].dims[0]"),
        ];
        for (tail, path) in cases {
            let err = parse(&format!("{head}{tail}")).unwrap_err();
            match err {
                Error::Config { path: p, .. } => assert_eq!(p, path, "{tail}"),
                other => panic!("unexpected {other:?}"),
            }
        }
        let zero = parse(
            r#"[workload]
            ranks = [{ name = "m", shape = 0 }]
            tensors = [{ name = "Z", role = "output", dims = ["m"] }]"#,
        )
        .unwrap_err();
        assert!(matches!(zero, Error::Config { ref path, .. } if path == "workload.ranks[0].shape"));
        let dup = parse(
            r#"[workload]
            ranks = [{ name = "m", shape = 2 }, { name = "m", shape = 3 }]
            tensors = [{ name = "Z", role = "output", dims = ["m"] }]"#,
        )
        .unwrap_err();
        assert!(matches!(dup, Error::Config { ref path, .. } if path == "workload.ranks[1].name"));
        let digit = parse(
            r#"[workload]
            ranks = [{ name = "m1", shape = 2 }]
            tensors = [{ name = "Z", role = "output", dims = ["m1"] }]"#,
        )
        .unwrap_err();
        assert!(matches!(digit, Error::Config { ref path, .. } if path == "workload.ranks[0].name"));
    }

    proptest! {
        // The closed-form halo extent equals the number of distinct sums over
        // every combination of sub-ranges with shapes up to 8.
        #[test]
        fn extent_matches_distinct_sums(a in 1u64..=8, b in 1u64..=8, c in 1u64..=8) {
            let expr = IndexExpr { terms: vec![0, 1, 2] };
            let mut sums = HashSet::new();
            for x in 0..a { for y in 0..b { for z in 0..c { sums.insert(x + y + z); } } }
            prop_assert_eq!(expr.extent(&[a, b, c]), sums.len() as u64);
            let two = IndexExpr { terms: vec![0, 1] };
            let pairs: HashSet<u64> = (0..a).flat_map(|x| (0..b).map(move |y| x + y)).collect();
            prop_assert_eq!(two.extent(&[a, b, c]), pairs.len() as u64);
        }
    }

    #[test]
    fn extent_exhaustive_small() {
        for a in 1..=8u64 {
            for b in 1..=8u64 {
                let distinct: HashSet<u64> = (0..a).flat_map(|x| (0..b).map(move |y| x + y)).collect();
                let e = IndexExpr { terms: vec![0, 1] };
                assert_eq!(e.extent(&[a, b]), distinct.len() as u64);
            }
        }
    }
}
