//! Expression IR over loop-bound symbols.
//!
//! Symbols always denote positive integers. Expressions are immutable
//! values; `simplify` rewrites them into a canonical form so that two
//! expressions built along different routes compare equal when they are the
//! same polynomial up to term order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};
use crate::rational::Rational;

pub type SymId = usize;

/// Names for symbol ids, in creation order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymbolTable {
    names: Vec<String>,
}

impl SymbolTable {
    pub fn new() -> SymbolTable {
        SymbolTable::default()
    }

    pub fn push(&mut self, name: impl Into<String>) -> SymId {
        self.names.push(name.into());
        self.names.len() - 1
    }

    pub fn name(&self, id: SymId) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<SymId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SymExpr {
    Const(Rational),
    Sym(SymId),
    Sum(Vec<SymExpr>),
    Product(Vec<SymExpr>),
    Max(Vec<SymExpr>),
    Min(Vec<SymExpr>),
    /// Division by a positive constant.
    DivConst(Box<SymExpr>, Rational),
    /// Ceiling of division by a positive constant.
    CeilDiv(Box<SymExpr>, Rational),
    /// Division by an expression; only produced for ratios the model needs
    /// and cancelled away by `simplify` where factors allow.
    Quotient(Box<SymExpr>, Box<SymExpr>),
}

/// Symbol bindings.
pub trait Env {
    fn lookup(&self, s: SymId) -> Option<u64>;
}

impl Env for HashMap<SymId, u64> {
    fn lookup(&self, s: SymId) -> Option<u64> {
        self.get(&s).copied()
    }
}

impl Env for [Option<u64>] {
    fn lookup(&self, s: SymId) -> Option<u64> {
        self.get(s).copied().flatten()
    }
}

impl Env for Vec<Option<u64>> {
    fn lookup(&self, s: SymId) -> Option<u64> {
        self.as_slice().lookup(s)
    }
}

impl Env for [u64] {
    fn lookup(&self, s: SymId) -> Option<u64> {
        self.get(s).copied()
    }
}

impl SymExpr {
    pub fn int(v: i128) -> SymExpr {
        SymExpr::Const(Rational::from_int(v))
    }

    pub fn zero() -> SymExpr {
        SymExpr::Const(Rational::ZERO)
    }

    pub fn one() -> SymExpr {
        SymExpr::Const(Rational::ONE)
    }

    pub fn sym(s: SymId) -> SymExpr {
        SymExpr::Sym(s)
    }

    pub fn as_const(&self) -> Option<Rational> {
        match self {
            SymExpr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn evaluate<E: Env + ?Sized>(&self, env: &E) -> Result<Rational> {
        Ok(match self {
            SymExpr::Const(c) => *c,
            SymExpr::Sym(s) => Rational::from(
                env.lookup(*s)
                    .ok_or_else(|| Error::UnboundSymbol(format!("#{s}")))?,
            ),
            SymExpr::Sum(xs) => {
                let mut acc = Rational::ZERO;
                for x in xs {
                    acc = acc + x.evaluate(env)?;
                }
                acc
            }
            SymExpr::Product(xs) => {
                let mut acc = Rational::ONE;
                for x in xs {
                    acc = acc * x.evaluate(env)?;
                }
                acc
            }
            SymExpr::Max(xs) | SymExpr::Min(xs) => {
                let is_max = matches!(self, SymExpr::Max(_));
                let mut best: Option<Rational> = None;
                for x in xs {
                    let v = x.evaluate(env)?;
                    best = Some(match best {
                        None => v,
                        Some(b) if is_max => b.max(v),
                        Some(b) => b.min(v),
                    });
                }
                best.unwrap_or(Rational::ZERO)
            }
            SymExpr::DivConst(e, c) => e.evaluate(env)? / *c,
            SymExpr::CeilDiv(e, c) => (e.evaluate(env)? / *c).ceil(),
            SymExpr::Quotient(n, d) => n.evaluate(env)? / d.evaluate(env)?,
        })
    }

    pub fn evaluate_named<E: Env + ?Sized>(&self, env: &E, table: &SymbolTable) -> Result<Rational> {
        self.evaluate(env).map_err(|e| match e {
            Error::UnboundSymbol(id) => {
                let name = id
                    .strip_prefix('#')
                    .and_then(|n| n.parse::<SymId>().ok())
                    .filter(|&n| n < table.len())
                    .map_or(id.clone(), |n| table.name(n).to_string());
                Error::UnboundSymbol(name)
            }
            other => other,
        })
    }

    pub fn symbols(&self) -> BTreeSet<SymId> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<SymId>) {
        match self {
            SymExpr::Const(_) => {}
            SymExpr::Sym(s) => {
                out.insert(*s);
            }
            SymExpr::Sum(xs) | SymExpr::Product(xs) | SymExpr::Max(xs) | SymExpr::Min(xs) => {
                xs.iter().for_each(|x| x.collect_symbols(out))
            }
            SymExpr::DivConst(e, _) | SymExpr::CeilDiv(e, _) => e.collect_symbols(out),
            SymExpr::Quotient(n, d) => {
                n.collect_symbols(out);
                d.collect_symbols(out);
            }
        }
    }

    /// Replaces bound symbols by constants and simplifies.
    pub fn substitute<E: Env + ?Sized>(&self, env: &E) -> SymExpr {
        self.replace(env).simplify()
    }

    fn replace<E: Env + ?Sized>(&self, env: &E) -> SymExpr {
        let all = |xs: &[SymExpr]| xs.iter().map(|x| x.replace(env)).collect();
        match self {
            SymExpr::Const(_) => self.clone(),
            SymExpr::Sym(s) => match env.lookup(*s) {
                Some(v) => SymExpr::Const(Rational::from(v)),
                None => self.clone(),
            },
            SymExpr::Sum(xs) => SymExpr::Sum(all(xs)),
            SymExpr::Product(xs) => SymExpr::Product(all(xs)),
            SymExpr::Max(xs) => SymExpr::Max(all(xs)),
            SymExpr::Min(xs) => SymExpr::Min(all(xs)),
            SymExpr::DivConst(e, c) => SymExpr::DivConst(Box::new(e.replace(env)), *c),
            SymExpr::CeilDiv(e, c) => SymExpr::CeilDiv(Box::new(e.replace(env)), *c),
            SymExpr::Quotient(n, d) => {
                SymExpr::Quotient(Box::new(n.replace(env)), Box::new(d.replace(env)))
            }
        }
    }

    /// Top-level terms of a sum, product, max or min; otherwise the
    /// expression itself.
    pub fn partition_terms(&self) -> Vec<SymExpr> {
        match self {
            SymExpr::Sum(xs) | SymExpr::Product(xs) | SymExpr::Max(xs) | SymExpr::Min(xs) => {
                xs.clone()
            }
            _ => vec![self.clone()],
        }
    }

    pub fn simplify(&self) -> SymExpr {
        match self {
            SymExpr::Const(_) | SymExpr::Sym(_) => self.clone(),
            SymExpr::Sum(xs) => simplify_sum(xs.iter().map(SymExpr::simplify).collect()),
            SymExpr::Product(xs) => simplify_product(xs.iter().map(SymExpr::simplify).collect()),
            SymExpr::Max(xs) => simplify_extremum(xs.iter().map(SymExpr::simplify).collect(), true),
            SymExpr::Min(xs) => simplify_extremum(xs.iter().map(SymExpr::simplify).collect(), false),
            SymExpr::DivConst(e, c) => {
                simplify_product(vec![SymExpr::Const(c.recip()), e.simplify()])
            }
            SymExpr::CeilDiv(e, c) => {
                let e = e.simplify();
                match e {
                    SymExpr::Const(v) => SymExpr::Const((v / *c).ceil()),
                    e => SymExpr::CeilDiv(Box::new(e), *c),
                }
            }
            SymExpr::Quotient(n, d) => simplify_quotient(n.simplify(), d.simplify()),
        }
    }

    pub fn display<'a>(&'a self, table: &'a SymbolTable) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, table }
    }
}

/// Splits a simplified term into a constant coefficient and the rest.
fn split_coefficient(e: SymExpr) -> (Rational, Option<SymExpr>) {
    match e {
        SymExpr::Const(c) => (c, None),
        SymExpr::Product(mut xs) => {
            if let Some(c) = xs.first().and_then(SymExpr::as_const) {
                xs.remove(0);
                let rest = if xs.len() == 1 { xs.pop().unwrap() } else { SymExpr::Product(xs) };
                (c, Some(rest))
            } else {
                (Rational::ONE, Some(SymExpr::Product(xs)))
            }
        }
        other => (Rational::ONE, Some(other)),
    }
}

fn with_coefficient(c: Rational, rest: SymExpr) -> SymExpr {
    if c == Rational::ONE {
        return rest;
    }
    let mut factors = vec![SymExpr::Const(c)];
    match rest {
        SymExpr::Product(xs) => factors.extend(xs),
        other => factors.push(other),
    }
    SymExpr::Product(factors)
}

fn simplify_sum(children: Vec<SymExpr>) -> SymExpr {
    let mut flat = Vec::new();
    for c in children {
        match c {
            SymExpr::Sum(xs) => flat.extend(xs),
            other => flat.push(other),
        }
    }
    let mut constant = Rational::ZERO;
    let mut terms: BTreeMap<SymExpr, Rational> = BTreeMap::new();
    for t in flat {
        match split_coefficient(t) {
            (c, None) => constant = constant + c,
            (c, Some(rest)) => {
                let entry = terms.entry(rest).or_insert(Rational::ZERO);
                *entry = *entry + c;
            }
        }
    }
    let mut out: Vec<SymExpr> = terms
        .into_iter()
        .filter(|(_, c)| !c.is_zero())
        .map(|(rest, c)| with_coefficient(c, rest))
        .collect();
    if !constant.is_zero() {
        out.push(SymExpr::Const(constant));
    }
    match out.len() {
        0 => SymExpr::zero(),
        1 => out.pop().unwrap(),
        _ => SymExpr::Sum(out),
    }
}

fn simplify_product(children: Vec<SymExpr>) -> SymExpr {
    let mut constant = Rational::ONE;
    let mut factors = Vec::new();
    for c in children {
        match c {
            SymExpr::Const(v) => constant = constant * v,
            SymExpr::Product(xs) => {
                for x in xs {
                    match x {
                        SymExpr::Const(v) => constant = constant * v,
                        other => factors.push(other),
                    }
                }
            }
            other => factors.push(other),
        }
    }
    if constant.is_zero() {
        return SymExpr::zero();
    }
    factors.sort();
    if factors.is_empty() {
        return SymExpr::Const(constant);
    }
    if factors.len() == 1 && constant == Rational::ONE {
        return factors.pop().unwrap();
    }
    let rest = if factors.len() == 1 { factors.pop().unwrap() } else { SymExpr::Product(factors) };
    with_coefficient(constant, rest)
}

fn simplify_extremum(children: Vec<SymExpr>, is_max: bool) -> SymExpr {
    let mut constant: Option<Rational> = None;
    let mut rest = Vec::new();
    for c in children {
        let items = match c {
            SymExpr::Max(xs) if is_max => xs,
            SymExpr::Min(xs) if !is_max => xs,
            other => vec![other],
        };
        for x in items {
            match x {
                SymExpr::Const(v) => {
                    constant = Some(match constant {
                        None => v,
                        Some(b) if is_max => b.max(v),
                        Some(b) => b.min(v),
                    })
                }
                other => rest.push(other),
            }
        }
    }
    rest.sort();
    rest.dedup();
    if let Some(c) = constant {
        rest.push(SymExpr::Const(c));
    }
    match rest.len() {
        0 => SymExpr::zero(),
        1 => rest.pop().unwrap(),
        _ if is_max => SymExpr::Max(rest),
        _ => SymExpr::Min(rest),
    }
}

fn factors_of(e: SymExpr) -> (Rational, Vec<SymExpr>) {
    match split_coefficient(e) {
        (c, None) => (c, Vec::new()),
        (c, Some(SymExpr::Product(xs))) => (c, xs),
        (c, Some(x)) => (c, vec![x]),
    }
}

fn simplify_quotient(n: SymExpr, d: SymExpr) -> SymExpr {
    if let SymExpr::Const(c) = d {
        return simplify_product(vec![SymExpr::Const(c.recip()), n]);
    }
    let (nc, mut nf) = factors_of(n);
    let (dc, df) = factors_of(d);
    let mut rest_d = Vec::new();
    for f in df {
        if let Some(i) = nf.iter().position(|x| *x == f) {
            nf.remove(i);
        } else {
            rest_d.push(f);
        }
    }
    let mut num = vec![SymExpr::Const(nc / dc)];
    num.extend(nf);
    let num = simplify_product(num);
    if rest_d.is_empty() {
        num
    } else {
        SymExpr::Quotient(Box::new(num), Box::new(simplify_product(rest_d)))
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a SymExpr,
    table: &'a SymbolTable,
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.table;
        let list = |f: &mut fmt::Formatter<'_>, xs: &[SymExpr], sep: &str| -> fmt::Result {
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    f.write_str(sep)?;
                }
                write!(f, "{}", x.display(t))?;
            }
            Ok(())
        };
        match self.expr {
            SymExpr::Const(c) => write!(f, "{c}"),
            SymExpr::Sym(s) => f.write_str(t.name(*s)),
            SymExpr::Sum(xs) => {
                f.write_str("(")?;
                list(f, xs, " + ")?;
                f.write_str(")")
            }
            SymExpr::Product(xs) => {
                f.write_str("(")?;
                list(f, xs, " * ")?;
                f.write_str(")")
            }
            SymExpr::Max(xs) => {
                f.write_str("max(")?;
                list(f, xs, ", ")?;
                f.write_str(")")
            }
            SymExpr::Min(xs) => {
                f.write_str("min(")?;
                list(f, xs, ", ")?;
                f.write_str(")")
            }
            SymExpr::DivConst(e, c) => write!(f, "({} / {c})", e.display(t)),
            SymExpr::CeilDiv(e, c) => write!(f, "ceil({} / {c})", e.display(t)),
            SymExpr::Quotient(n, d) => write!(f, "({} / {})", n.display(t), d.display(t)),
        }
    }
}

/// A polynomial in the symbols, kept as monomial -> coefficient. Monomials
/// are sorted symbol lists with repetition for powers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Poly {
    terms: BTreeMap<Vec<SymId>, Rational>,
}

impl Poly {
    pub fn zero() -> Poly {
        Poly::default()
    }

    pub fn constant(c: Rational) -> Poly {
        let mut p = Poly::zero();
        if !c.is_zero() {
            p.terms.insert(Vec::new(), c);
        }
        p
    }

    pub fn one() -> Poly {
        Poly::constant(Rational::ONE)
    }

    pub fn sym(s: SymId) -> Poly {
        let mut p = Poly::zero();
        p.terms.insert(vec![s], Rational::ONE);
        p
    }

    pub fn monomial(c: Rational, syms: &[SymId]) -> Poly {
        let mut m = syms.to_vec();
        m.sort_unstable();
        let mut p = Poly::zero();
        if !c.is_zero() {
            p.terms.insert(m, c);
        }
        p
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[SymId], Rational)> {
        self.terms.iter().map(|(m, c)| (m.as_slice(), *c))
    }

    fn add_term(&mut self, m: Vec<SymId>, c: Rational) {
        let entry = self.terms.entry(m).or_insert(Rational::ZERO);
        *entry = *entry + c;
        if entry.is_zero() {
            self.terms.retain(|_, c| !c.is_zero());
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), *c);
        }
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let mut m = ma.clone();
                m.extend_from_slice(mb);
                m.sort_unstable();
                out.add_term(m, *ca * *cb);
            }
        }
        out
    }

    pub fn scale(&self, c: Rational) -> Poly {
        self.mul(&Poly::constant(c))
    }

    /// Rewrites every monomial containing all of `group` by removing one
    /// occurrence of each and multiplying by `value`, for as long as any
    /// monomial still contains the whole group.
    pub fn fold_identity(&self, group: &[SymId], value: Rational) -> Poly {
        if group.is_empty() {
            return self.clone();
        }
        let mut out = Poly::zero();
        for (m, c) in &self.terms {
            let mut m = m.clone();
            let mut c = *c;
            loop {
                let mut rest = m.clone();
                let mut all = true;
                for s in group {
                    match rest.iter().position(|x| x == s) {
                        Some(i) => {
                            rest.remove(i);
                        }
                        None => {
                            all = false;
                            break;
                        }
                    }
                }
                if !all {
                    break;
                }
                m = rest;
                c = c * value;
            }
            out.add_term(m, c);
        }
        out
    }

    pub fn to_expr(&self) -> SymExpr {
        let terms = self
            .terms
            .iter()
            .map(|(m, c)| {
                let mut factors = vec![SymExpr::Const(*c)];
                factors.extend(m.iter().map(|&s| SymExpr::Sym(s)));
                SymExpr::Product(factors)
            })
            .collect();
        SymExpr::Sum(terms).simplify()
    }
}

#[cfg(test)]
pub(crate) mod strategies {
    use super::*;
    use proptest::prelude::*;

    /// Random trees over `nsyms` symbols using only the monotone operators
    /// and nonnegative constants.
    pub fn monotone_expr(nsyms: usize) -> impl Strategy<Value = SymExpr> {
        let leaf = prop_oneof![
            (0i128..5, 1i128..4).prop_map(|(n, d)| SymExpr::Const(Rational::new(n, d))),
            (0..nsyms).prop_map(SymExpr::Sym),
        ];
        leaf.prop_recursive(4, 24, 4, |inner| {
            let c = (1i128..5, 1i128..4).prop_map(|(n, d)| Rational::new(n, d));
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..4).prop_map(SymExpr::Sum),
                prop::collection::vec(inner.clone(), 1..4).prop_map(SymExpr::Product),
                prop::collection::vec(inner.clone(), 1..4).prop_map(SymExpr::Max),
                prop::collection::vec(inner.clone(), 1..4).prop_map(SymExpr::Min),
                (inner.clone(), c.clone()).prop_map(|(e, c)| SymExpr::DivConst(Box::new(e), c)),
                (inner, c).prop_map(|(e, c)| SymExpr::CeilDiv(Box::new(e), c)),
            ]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::strategies::monotone_expr;
    use super::*;
    use proptest::prelude::*;

    fn table(names: &[&str]) -> SymbolTable {
        let mut t = SymbolTable::new();
        for n in names {
            t.push(*n);
        }
        t
    }

    fn s(i: SymId) -> SymExpr {
        SymExpr::Sym(i)
    }

    fn prod(xs: Vec<SymExpr>) -> SymExpr {
        SymExpr::Product(xs)
    }

    #[test]
    fn evaluates_examples() {
        // M1 * K * N with K = N = 4 folded.
        let e = prod(vec![s(0), SymExpr::int(4), SymExpr::int(4)]);
        let env: HashMap<SymId, u64> = [(0, 2)].into();
        assert_eq!(e.evaluate(&env).unwrap(), Rational::from_int(32));
        let e = prod(vec![s(0), s(1)]);
        assert_eq!(e.evaluate(&[2u64, 2][..]).unwrap(), Rational::from_int(4));
        let e = SymExpr::Max(vec![SymExpr::int(3), s(0)]);
        assert_eq!(e.evaluate(&[1u64][..]).unwrap(), Rational::from_int(3));
        assert_eq!(
            s(1).evaluate_named(&[1u64][..], &table(&["a", "b"])),
            Err(Error::UnboundSymbol("b".into()))
        );
    }

    #[test]
    fn simplification_examples() {
        let k1 = s(0);
        let k2 = s(1);
        let q = SymExpr::Quotient(Box::new(prod(vec![k1.clone(), k2.clone()])), Box::new(k1.clone()));
        assert_eq!(q.simplify(), k2);
        let e = prod(vec![SymExpr::int(2), prod(vec![SymExpr::int(3), s(0)])]);
        assert_eq!(e.simplify(), prod(vec![SymExpr::int(6), s(0)]));
        assert_eq!(SymExpr::Sum(vec![s(0), SymExpr::zero()]).simplify(), s(0));
        assert_eq!(prod(vec![s(0), SymExpr::one()]).simplify(), s(0));
        // Like terms merge.
        let e = SymExpr::Sum(vec![s(0), prod(vec![SymExpr::int(2), s(0)]), SymExpr::int(1), SymExpr::int(-1)]);
        assert_eq!(e.simplify(), prod(vec![SymExpr::int(3), s(0)]));
        // Term order does not matter.
        let a = SymExpr::Sum(vec![prod(vec![s(1), s(0)]), s(2)]).simplify();
        let b = SymExpr::Sum(vec![s(2), prod(vec![s(0), s(1)])]).simplify();
        assert_eq!(a, b);
        assert_eq!(SymExpr::Max(vec![SymExpr::Max(vec![s(0), SymExpr::int(2)]), s(0), SymExpr::int(5)]).simplify(),
            SymExpr::Max(vec![s(0), SymExpr::int(5)]));
        assert_eq!(SymExpr::DivConst(Box::new(s(0)), Rational::from_int(4)).simplify(),
            prod(vec![SymExpr::Const(Rational::new(1, 4)), s(0)]));
        assert_eq!(SymExpr::CeilDiv(Box::new(SymExpr::int(7)), Rational::from_int(2)).simplify(), SymExpr::int(4));
    }

    #[test]
    fn substitution_and_partition() {
        let t = table(&["k0", "u0", "u1"]);
        let e = SymExpr::Sum(vec![s(0), prod(vec![s(1), s(2)])]);
        let env: HashMap<SymId, u64> = [(0, 4)].into();
        let sub = e.substitute(&env);
        assert_eq!(sub, SymExpr::Sum(vec![prod(vec![s(1), s(2)]), SymExpr::int(4)]));
        assert_eq!(sub.display(&t).to_string(), "((u0 * u1) + 4)");
        let env: HashMap<SymId, u64> = [(0, 1)].into();
        assert_eq!(s(0).substitute(&env), SymExpr::one());
        assert_eq!(e.partition_terms(), vec![s(0), prod(vec![s(1), s(2)])]);
        assert_eq!(SymExpr::Max(vec![s(0), s(1), s(2)]).partition_terms().len(), 3);
        assert_eq!(s(0).partition_terms(), vec![s(0)]);
        let m1kn = prod(vec![s(0), SymExpr::int(16)]);
        assert_eq!(m1kn.symbols(), BTreeSet::from([0]));
    }

    #[test]
    fn poly_fold() {
        // K0 * K1 * M1 * N0 with K = 4 from {K0, K1} and N = 4 from {N0}.
        let p = Poly::monomial(Rational::ONE, &[0, 1, 2, 3]);
        let p = p.fold_identity(&[0, 1], Rational::from_int(4));
        let p = p.fold_identity(&[3], Rational::from_int(4));
        assert_eq!(p.to_expr(), prod(vec![SymExpr::int(16), s(2)]));
        // (P0 + R0 - 1) * P1 * R1 with R = R0 * R1 = 3.
        let ext = Poly::sym(0).add(&Poly::sym(1)).add(&Poly::constant(Rational::from_int(-1)));
        let acc = ext.mul(&Poly::monomial(Rational::ONE, &[2, 3]));
        let folded = acc.fold_identity(&[1, 3], Rational::from_int(3));
        let env = [2u64, 3, 3, 1];
        assert_eq!(
            folded.to_expr().evaluate(&env[..]).unwrap(),
            acc.to_expr().evaluate(&env[..]).unwrap()
        );
        assert_eq!(folded.terms().count(), 3);
    }

    proptest! {
        #[test]
        fn simplify_preserves_value(e in monotone_expr(3)) {
            let simple = e.simplify();
            for a in 1..4u64 {
                for b in 1..4u64 {
                    for c in 1..4u64 {
                        let env = [a, b, c];
                        prop_assert_eq!(e.evaluate(&env[..]).unwrap(), simple.evaluate(&env[..]).unwrap());
                    }
                }
            }
            prop_assert_eq!(simple.simplify(), simple.clone());
        }

        #[test]
        fn expressions_are_monotone(e in monotone_expr(3), env in prop::collection::vec(1u64..6, 3), which in 0usize..3, bump in 1u64..4) {
            let mut up = env.clone();
            up[which] += bump;
            prop_assert!(e.evaluate(&env[..]).unwrap() <= e.evaluate(&up[..]).unwrap());
        }

        #[test]
        fn substitution_commutes_with_evaluation(e in monotone_expr(3), env in prop::collection::vec(1u64..6, 3)) {
            let partial: HashMap<SymId, u64> = [(0, env[0])].into();
            let sub = e.substitute(&partial);
            prop_assert!(!sub.symbols().contains(&0));
            prop_assert_eq!(sub.evaluate(&env[..]).unwrap(), e.evaluate(&env[..]).unwrap());
        }

        #[test]
        fn poly_round_trip(a in prop::collection::vec((-3i128..4, prop::collection::vec(0usize..3, 0..3)), 0..5),
                           b in prop::collection::vec((-3i128..4, prop::collection::vec(0usize..3, 0..3)), 0..5),
                           env in prop::collection::vec(1u64..5, 3)) {
            let build = |ts: &[(i128, Vec<SymId>)]| ts.iter().fold(Poly::zero(), |p, (c, m)| p.add(&Poly::monomial(Rational::from_int(*c), m)));
            let (pa, pb) = (build(&a), build(&b));
            let ev = |p: &Poly| p.to_expr().evaluate(&env[..]).unwrap();
            prop_assert_eq!(ev(&pa.mul(&pb)), ev(&pa) * ev(&pb));
            prop_assert_eq!(ev(&pa.add(&pb)), ev(&pa) + ev(&pb));
        }
    }
}
