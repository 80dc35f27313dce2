//! Coordinate charts, scalar fields, and exact jets.
//!
//! A [`Chart`] is a single coordinate patch with a rectangular sampling box;
//! coordinates are always named `x1..xn`. A [`ScalarField`] pairs a chart
//! with an expression tree and differentiates symbolically, so every jet is
//! exact up to f64 rounding. [`fd_oracle`] provides the independent nested
//! central-difference path used to cross-check the symbolic kernel; it never
//! shares code with [`eval_jet`].

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{parse_with_names, DisplayExpr, EvalError, Expr, ParseError, Rational};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("chart dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("domain interval {index} is empty or degenerate")]
    EmptyInterval { index: usize },
    #[error("domain box has {got} intervals for dimension {dim}")]
    DomainMismatch { dim: usize, got: usize },
    #[error("point lies outside the chart domain (margin {margin})")]
    OutsideDomain { margin: f64 },
    #[error("jet order {got} exceeds supported maximum {max}")]
    OrderTooHigh { got: usize, max: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("charts differ")]
    ChartMismatch,
}

#[derive(Debug, PartialEq)]
struct ChartInner {
    dim: usize,
    names: Vec<String>,
    domain: Vec<(f64, f64)>,
}

/// A coordinate patch of dimension `n >= 2` with coordinates `x1..xn` and a
/// closed box used for sampling. Cheap to clone.
#[derive(Clone, Debug)]
pub struct Chart(Arc<ChartInner>);

impl PartialEq for Chart {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || *self.0 == *other.0
    }
}

impl Chart {
    pub fn new(dim: usize, domain: Vec<(f64, f64)>) -> Result<Chart, FieldError> {
        if dim < 2 {
            return Err(FieldError::DimensionTooSmall(dim));
        }
        if domain.len() != dim {
            return Err(FieldError::DomainMismatch {
                dim,
                got: domain.len(),
            });
        }
        for (i, (lo, hi)) in domain.iter().enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(FieldError::EmptyInterval { index: i });
            }
        }
        Ok(Chart(Arc::new(ChartInner {
            dim,
            names: (1..=dim).map(|i| format!("x{i}")).collect(),
            domain,
        })))
    }

    /// Box `[lo, hi]^n`.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Chart, FieldError> {
        Chart::new(dim, vec![(lo, hi); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn names(&self) -> &[String] {
        &self.0.names
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.0.domain
    }

    pub fn contains(&self, point: &[f64], margin: f64) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.0.domain.iter())
                .all(|(x, (lo, hi))| *x >= lo + margin && *x <= hi - margin)
    }

    /// Deterministic uniform sample points, shrunk away from the box faces by
    /// `margin_frac` of each edge length. All residual reports are
    /// reproducible because everything is derived from the seed.
    pub fn sample_points(&self, seed: u64, count: usize, margin_frac: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                self.0
                    .domain
                    .iter()
                    .map(|(lo, hi)| {
                        let m = margin_frac * (hi - lo);
                        rng.gen_range(lo + m..hi - m)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Smooth function on a chart, represented as an expression tree.
#[derive(Clone, Debug)]
pub struct ScalarField {
    chart: Chart,
    expr: Arc<Expr>,
}

impl PartialEq for ScalarField {
    fn eq(&self, other: &Self) -> bool {
        self.chart == other.chart && *self.expr == *other.expr
    }
}

impl ScalarField {
    pub fn new(chart: Chart, expr: Expr) -> ScalarField {
        let mut vars = Vec::new();
        expr.free_vars(&mut vars);
        assert!(
            vars.iter().all(|v| *v < chart.dim()),
            "expression references a coordinate outside the chart"
        );
        ScalarField {
            chart,
            expr: Arc::new(expr),
        }
    }

    pub fn from_str(chart: &Chart, source: &str) -> Result<ScalarField, FieldError> {
        let expr = parse_with_names(source, chart.names())?;
        Ok(ScalarField::new(chart.clone(), expr))
    }

    pub fn constant(chart: &Chart, r: Rational) -> ScalarField {
        ScalarField::new(chart.clone(), Expr::num(r))
    }

    pub fn zero(chart: &Chart) -> ScalarField {
        ScalarField::constant(chart, Rational::zero())
    }

    pub fn one(chart: &Chart) -> ScalarField {
        ScalarField::constant(chart, Rational::one())
    }

    pub fn coordinate(chart: &Chart, i: usize) -> ScalarField {
        assert!(i < chart.dim());
        ScalarField::new(chart.clone(), Expr::var(i))
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn expr_arc(&self) -> &Arc<Expr> {
        &self.expr
    }

    pub fn is_zero_expr(&self) -> bool {
        self.expr.is_zero()
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        self.expr.eval(point)
    }

    /// Exact symbolic partial derivative along coordinate `i`.
    pub fn partial(&self, i: usize) -> ScalarField {
        assert!(i < self.chart.dim());
        ScalarField::new(self.chart.clone(), self.expr.differentiate(i))
    }

    pub fn to_source(&self) -> String {
        DisplayExpr {
            expr: &self.expr,
            names: self.chart.names(),
        }
        .to_string()
    }

    fn binary(&self, other: &ScalarField, f: impl Fn(Expr, Expr) -> Expr) -> ScalarField {
        assert!(self.chart == other.chart, "scalar fields on different charts");
        ScalarField::new(self.chart.clone(), f((*self.expr).clone(), (*other.expr).clone()))
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        self.binary(other, Expr::add)
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        self.binary(other, Expr::sub)
    }

    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        self.binary(other, Expr::mul)
    }

    pub fn div(&self, other: &ScalarField) -> ScalarField {
        self.binary(other, Expr::div)
    }

    pub fn neg(&self) -> ScalarField {
        ScalarField::new(self.chart.clone(), Expr::neg((*self.expr).clone()))
    }

    pub fn scale(&self, r: Rational) -> ScalarField {
        ScalarField::new(
            self.chart.clone(),
            Expr::mul(Expr::num(r), (*self.expr).clone()),
        )
    }

    pub fn pow(&self, k: i32) -> ScalarField {
        ScalarField::new(self.chart.clone(), Expr::pow((*self.expr).clone(), k))
    }

    pub fn exp(&self) -> ScalarField {
        ScalarField::new(self.chart.clone(), Expr::exp((*self.expr).clone()))
    }

    pub fn ln(&self) -> ScalarField {
        ScalarField::new(self.chart.clone(), Expr::ln((*self.expr).clone()))
    }

    pub fn sqrt(&self) -> ScalarField {
        ScalarField::new(self.chart.clone(), Expr::sqrt((*self.expr).clone()))
    }
}

/// Multi-index as per-coordinate derivative counts.
pub type MultiIndex = Vec<u8>;

fn multi_indices(dim: usize, order: usize) -> Vec<MultiIndex> {
    // All multi-indices with 1 <= |alpha| <= order, canonical (counts) form.
    let mut out = Vec::new();
    let mut stack = vec![vec![0u8; dim]];
    for _ in 0..order {
        let mut next = Vec::new();
        for base in &stack {
            let last_nonzero = base.iter().rposition(|&c| c > 0).unwrap_or(0);
            for i in last_nonzero..dim {
                let mut m = base.clone();
                m[i] += 1;
                if !out.contains(&m) {
                    out.push(m.clone());
                }
                next.push(m);
            }
        }
        stack = next;
    }
    out
}

/// Value and mixed partials of a scalar field at a point, up to a requested
/// order. Partials are stored once per multi-index, which makes the
/// permutation symmetry structural.
#[derive(Clone, Debug)]
pub struct JetValue {
    pub order: usize,
    pub value: f64,
    pub partials: BTreeMap<MultiIndex, f64>,
}

impl JetValue {
    pub fn partial(&self, directions: &[usize]) -> f64 {
        if directions.is_empty() {
            return self.value;
        }
        let dim = self.partials.keys().next().map(|k| k.len()).unwrap_or(0);
        let mut idx = vec![0u8; dim];
        for &d in directions {
            idx[d] += 1;
        }
        self.partials[&idx]
    }
}

pub const MAX_JET_ORDER: usize = 4;

/// Evaluate `f` and all mixed partials up to order `k <= 4` by exact symbolic
/// differentiation followed by evaluation.
pub fn eval_jet(f: &ScalarField, point: &[f64], k: usize) -> Result<JetValue, FieldError> {
    if k > MAX_JET_ORDER {
        return Err(FieldError::OrderTooHigh {
            got: k,
            max: MAX_JET_ORDER,
        });
    }
    let dim = f.chart().dim();
    let value = f.eval(point)?;
    let mut exprs: BTreeMap<MultiIndex, ScalarField> = BTreeMap::new();
    let mut partials = BTreeMap::new();
    for idx in multi_indices(dim, k) {
        // Differentiate from the nearest already-computed parent.
        let i = idx.iter().rposition(|&c| c > 0).unwrap();
        let mut parent = idx.clone();
        parent[i] -= 1;
        let d = if parent.iter().all(|&c| c == 0) {
            f.partial(i)
        } else {
            exprs[&parent].partial(i)
        };
        partials.insert(idx.clone(), d.eval(point)?);
        exprs.insert(idx, d);
    }
    Ok(JetValue {
        order: k,
        value,
        partials,
    })
}

pub const FD_MAX_ORDER: usize = 3;

/// Default per-level steps for the finite-difference oracle. The third level
/// uses a wider step: with h = 1e-4 the f64 roundoff amplification eps/h^3
/// (~1e-4 per unit of |f|) would drown the derivative; 2e-4 balances
/// truncation O(h^2) against roundoff.
pub fn fd_default_step(order: usize) -> f64 {
    match order {
        3 => 2e-4,
        _ => 1e-4,
    }
}

/// Independent derivative oracle: nested central differences, one recursion
/// level per derivative. Shares nothing with the symbolic path.
pub fn fd_oracle(
    f: &ScalarField,
    point: &[f64],
    order: usize,
    step: Option<f64>,
) -> Result<JetValue, FieldError> {
    if order > FD_MAX_ORDER {
        return Err(FieldError::OrderTooHigh {
            got: order,
            max: FD_MAX_ORDER,
        });
    }
    let h = step.unwrap_or_else(|| fd_default_step(order));
    if !f.chart().contains(point, h * order as f64) {
        return Err(FieldError::OutsideDomain {
            margin: h * order as f64,
        });
    }
    let dim = f.chart().dim();
    let value = f.eval(point)?;

    fn nested(
        f: &ScalarField,
        point: &mut Vec<f64>,
        idx: &MultiIndex,
        h: f64,
    ) -> Result<f64, FieldError> {
        match idx.iter().position(|&c| c > 0) {
            None => Ok(f.eval(point)?),
            Some(i) => {
                let mut rest = idx.clone();
                rest[i] -= 1;
                point[i] += h;
                let plus = nested(f, point, &rest, h)?;
                point[i] -= 2.0 * h;
                let minus = nested(f, point, &rest, h)?;
                point[i] += h;
                Ok((plus - minus) / (2.0 * h))
            }
        }
    }

    let mut partials = BTreeMap::new();
    let mut work = point.to_vec();
    for idx in multi_indices(dim, order) {
        partials.insert(idx.clone(), nested(f, &mut work, &idx, h)?);
    }
    Ok(JetValue {
        order,
        value,
        partials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart2() -> Chart {
        Chart::uniform(2, -2.0, 2.0).unwrap()
    }

    #[test]
    fn chart_rejects_dimension_one() {
        assert!(Chart::uniform(1, 0.0, 1.0).is_err());
    }

    #[test]
    fn chart_rejects_empty_interval() {
        assert!(Chart::new(2, vec![(0.0, 1.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn jet_of_product() {
        let c = chart2();
        let f = ScalarField::from_str(&c, "x1*x2").unwrap();
        let jet = eval_jet(&f, &[2.0, 3.0], 2).unwrap();
        assert_eq!(jet.value, 6.0);
        assert_eq!(jet.partial(&[0]), 3.0);
        assert_eq!(jet.partial(&[1]), 2.0);
        assert_eq!(jet.partial(&[0, 1]), 1.0);
        assert_eq!(jet.partial(&[0, 0]), 0.0);
    }

    #[test]
    fn jet_of_log_to_third_order() {
        let c = Chart::new(2, vec![(0.5, 3.0), (0.5, 3.0)]).unwrap();
        let f = ScalarField::from_str(&c, "ln(x1)").unwrap();
        let jet = eval_jet(&f, &[1.0, 1.0], 3).unwrap();
        assert_eq!(jet.value, 0.0);
        assert_eq!(jet.partial(&[0]), 1.0);
        assert_eq!(jet.partial(&[0, 0]), -1.0);
        assert_eq!(jet.partial(&[0, 0, 0]), 2.0);
    }

    #[test]
    fn jet_order_five_rejected() {
        let c = chart2();
        let f = ScalarField::from_str(&c, "x1").unwrap();
        assert!(matches!(
            eval_jet(&f, &[0.0, 0.0], 5),
            Err(FieldError::OrderTooHigh { .. })
        ));
    }

    #[test]
    fn fd_second_derivative_of_cubic() {
        let c = chart2();
        let f = ScalarField::from_str(&c, "x1^3").unwrap();
        let jet = fd_oracle(&f, &[1.0, 0.0], 2, None).unwrap();
        assert!((jet.partial(&[0, 0]) - 6.0).abs() < 1e-5);
    }

    #[test]
    fn fd_first_derivative_of_exp() {
        let c = chart2();
        let f = ScalarField::from_str(&c, "exp(x1)").unwrap();
        let jet = fd_oracle(&f, &[0.0, 0.0], 1, None).unwrap();
        assert!((jet.partial(&[0]) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn fd_requires_interior_point() {
        let c = chart2();
        let f = ScalarField::from_str(&c, "x1").unwrap();
        assert!(matches!(
            fd_oracle(&f, &[2.0, 0.0], 2, None),
            Err(FieldError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn symbolic_jets_match_oracle_on_mixed_field() {
        let c = Chart::new(2, vec![(0.5, 3.0), (0.5, 3.0)]).unwrap();
        let f = ScalarField::from_str(&c, "exp(x1*x2)/x1 + ln(x2)").unwrap();
        for pt in c.sample_points(7, 25, 0.05) {
            for order in 1..=3 {
                let sym = eval_jet(&f, &pt, order).unwrap();
                let fd = fd_oracle(&f, &pt, order, None).unwrap();
                for (idx, fd_v) in &fd.partials {
                    let sv = sym.partials[idx];
                    assert!(
                        (sv - fd_v).abs() <= 1e-5 * (1.0 + sv.abs()),
                        "mismatch at {idx:?}: sym {sv} fd {fd_v}"
                    );
                }
            }
        }
    }

    #[test]
    fn mixed_partial_order_is_irrelevant() {
        let c = chart2();
        let f = ScalarField::from_str(&c, "exp(x1*x2)*x2^2").unwrap();
        let d12 = f.partial(0).partial(1);
        let d21 = f.partial(1).partial(0);
        for pt in c.sample_points(3, 20, 0.05) {
            let a = d12.eval(&pt).unwrap();
            let b = d21.eval(&pt).unwrap();
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs())));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let c = chart2();
        assert_eq!(c.sample_points(42, 5, 0.0), c.sample_points(42, 5, 0.0));
    }
}
