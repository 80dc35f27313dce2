//! Tensor calculus on a single coordinate chart.
//!
//! Components are scalar fields, so every curvature quantity is assembled
//! symbolically and only evaluated at sample points. Conventions, fixed once
//! and pinned by the unit-sphere tests:
//!
//! * Connection coefficients are stored as `Γ^k_{ij}` with the upper slot
//!   first.
//! * `riemann` returns `R^i_{jkl}` with
//!   `[R(X,Y)Z]^i = R^i_{jkl} Z^j X^k Y^l`, i.e.
//!   `R^i_{jkl} = ∂_k Γ^i_{lj} - ∂_l Γ^i_{kj} + Γ^i_{ka}Γ^a_{lj} - Γ^i_{la}Γ^a_{kj}`.
//! * `ricci` contracts `Ric_{ij} = R^a_{jai}`, which makes the unit sphere
//!   come out as `Ric = (n-1) g`.
//! * Covariant derivatives append the derivative slot last.
//! * The Kulkarni-Nomizu product is
//!   `(h ⩕ k)_{abcd} = h_{ad}k_{bc} + h_{bc}k_{ad} - h_{ac}k_{bd} - h_{bd}k_{ac}`,
//!   matching the lowered curvature `Riem_{abcd} = g(R(e_a,e_b)e_c, e_d)`.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::expr::{EvalError, Expr, Rational};
use crate::field::{Chart, ScalarField};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum IndexKind {
    Lower,
    Upper,
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("operation needs dimension >= 3, chart has n = 2")]
    NeedsDimensionAtLeast3,
    #[error("metric is singular or not positive definite at sample point {0:?}")]
    DegenerateMetric(Vec<f64>),
    #[error("metric inverse residual {residual} exceeds 1e-12 at {point:?}")]
    InverseResidual { point: Vec<f64>, residual: f64 },
    #[error("connection must be torsion-free for curvature operations")]
    TorsionNotSupported,
    #[error("tensor shapes are incompatible: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Dense tensor field. Symmetric construction goes through [`TensorField::from_fn_sym`],
/// which computes one component per symmetry orbit and shares it across the
/// orbit (the shared `Arc` also makes later differentiation hit the
/// per-derivative cache once per distinct component).
#[derive(Clone, Debug)]
pub struct TensorField {
    chart: Chart,
    kinds: Vec<IndexKind>,
    comps: Vec<ScalarField>,
}

fn strides(dim: usize, rank: usize) -> Vec<usize> {
    (0..rank).map(|s| dim.pow((rank - 1 - s) as u32)).collect()
}

fn flat(idx: &[usize], dim: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * dim + i)
}

/// Iterate all index tuples of the given rank.
pub fn index_tuples(dim: usize, rank: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..rank {
        let mut next = Vec::with_capacity(out.len() * dim);
        for base in &out {
            for i in 0..dim {
                let mut b = base.clone();
                b.push(i);
                next.push(b);
            }
        }
        out = next;
    }
    out
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

impl TensorField {
    pub fn from_fn(
        chart: &Chart,
        kinds: Vec<IndexKind>,
        mut f: impl FnMut(&[usize]) -> ScalarField,
    ) -> TensorField {
        let comps = index_tuples(chart.dim(), kinds.len())
            .iter()
            .map(|idx| f(idx))
            .collect();
        TensorField {
            chart: chart.clone(),
            kinds,
            comps,
        }
    }

    /// Construct with declared symmetry groups (disjoint slot sets, totally
    /// symmetric within each). `f` is invoked only on canonical (sorted)
    /// representatives.
    pub fn from_fn_sym(
        chart: &Chart,
        kinds: Vec<IndexKind>,
        groups: &[Vec<usize>],
        mut f: impl FnMut(&[usize]) -> ScalarField,
    ) -> TensorField {
        let dim = chart.dim();
        let rank = kinds.len();
        let canon = |idx: &[usize]| -> Vec<usize> {
            let mut c = idx.to_vec();
            for g in groups {
                let mut vals: Vec<usize> = g.iter().map(|&s| idx[s]).collect();
                vals.sort_unstable();
                for (slot, v) in g.iter().zip(vals) {
                    c[*slot] = v;
                }
            }
            c
        };
        let mut cache: HashMap<Vec<usize>, ScalarField> = HashMap::new();
        let comps = index_tuples(dim, rank)
            .iter()
            .map(|idx| {
                let c = canon(idx);
                cache.entry(c.clone()).or_insert_with(|| f(&c)).clone()
            })
            .collect();
        TensorField {
            chart: chart.clone(),
            kinds,
            comps,
        }
    }

    pub fn zeros(chart: &Chart, kinds: Vec<IndexKind>) -> TensorField {
        let z = ScalarField::zero(chart);
        TensorField::from_fn(chart, kinds, |_| z.clone())
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn rank(&self) -> usize {
        self.kinds.len()
    }

    pub fn kinds(&self) -> &[IndexKind] {
        &self.kinds
    }

    pub fn get(&self, idx: &[usize]) -> &ScalarField {
        &self.comps[flat(idx, self.chart.dim())]
    }

    pub fn map(&self, mut f: impl FnMut(&ScalarField) -> ScalarField) -> TensorField {
        TensorField {
            chart: self.chart.clone(),
            kinds: self.kinds.clone(),
            comps: self.comps.iter().map(|c| f(c)).collect(),
        }
    }

    fn zip(&self, other: &TensorField, f: impl Fn(&ScalarField, &ScalarField) -> ScalarField) -> TensorField {
        assert_eq!(self.kinds, other.kinds, "tensor shapes differ");
        assert!(self.chart == other.chart, "tensors on different charts");
        TensorField {
            chart: self.chart.clone(),
            kinds: self.kinds.clone(),
            comps: self
                .comps
                .iter()
                .zip(other.comps.iter())
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &TensorField) -> TensorField {
        self.zip(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &TensorField) -> TensorField {
        self.zip(other, |a, b| a.sub(b))
    }

    pub fn neg(&self) -> TensorField {
        self.map(|c| c.neg())
    }

    pub fn scale(&self, r: Rational) -> TensorField {
        self.map(|c| c.scale(r))
    }

    pub fn scale_field(&self, s: &ScalarField) -> TensorField {
        self.map(|c| c.mul(s))
    }

    pub fn tensor_product(&self, other: &TensorField) -> TensorField {
        assert!(self.chart == other.chart);
        let dim = self.chart.dim();
        let mut kinds = self.kinds.clone();
        kinds.extend_from_slice(&other.kinds);
        let ra = self.rank();
        TensorField::from_fn(&self.chart, kinds, |idx| {
            let a = self.get(&idx[..ra]);
            let b = other.get(&idx[ra..]);
            let _ = dim;
            a.mul(b)
        })
    }

    /// Contract an upper slot with a lower slot.
    pub fn contract(&self, up: usize, low: usize) -> TensorField {
        assert_ne!(up, low);
        assert_eq!(self.kinds[up], IndexKind::Upper, "slot {up} is not upper");
        assert_eq!(self.kinds[low], IndexKind::Lower, "slot {low} is not lower");
        let dim = self.chart.dim();
        let keep: Vec<usize> = (0..self.rank()).filter(|&s| s != up && s != low).collect();
        let kinds: Vec<IndexKind> = keep.iter().map(|&s| self.kinds[s]).collect();
        TensorField::from_fn(&self.chart, kinds, |idx| {
            let mut full = vec![0usize; self.rank()];
            for (pos, &slot) in keep.iter().enumerate() {
                full[slot] = idx[pos];
            }
            let mut acc = Expr::zero();
            for a in 0..dim {
                full[up] = a;
                full[low] = a;
                acc = Expr::add(acc, self.get(&full).expr().clone());
            }
            ScalarField::new(self.chart.clone(), acc)
        })
    }

    pub fn permute(&self, perm: &[usize]) -> TensorField {
        assert_eq!(perm.len(), self.rank());
        let kinds: Vec<IndexKind> = perm.iter().map(|&s| self.kinds[s]).collect();
        TensorField::from_fn(&self.chart, kinds, |idx| {
            // idx is in output slot order; map back to source order.
            let mut src = vec![0usize; perm.len()];
            for (out_slot, &src_slot) in perm.iter().enumerate() {
                src[src_slot] = idx[out_slot];
            }
            self.get(&src).clone()
        })
    }

    /// Average over all permutations of the listed slots (must share kind).
    pub fn symmetrize(&self, slots: &[usize]) -> TensorField {
        let kind = self.kinds[slots[0]];
        assert!(slots.iter().all(|&s| self.kinds[s] == kind));
        let perms = permutations(slots);
        let weight = Rational::new(1, perms.len() as i64);
        TensorField::from_fn(&self.chart, self.kinds.clone(), |idx| {
            let mut acc = Expr::zero();
            for p in &perms {
                let mut src = idx.to_vec();
                for (pos, &slot) in slots.iter().enumerate() {
                    src[slot] = idx[p[pos]];
                }
                acc = Expr::add(acc, self.get(&src).expr().clone());
            }
            ScalarField::new(self.chart.clone(), Expr::mul(Expr::num(weight), acc))
        })
    }

    /// Partial derivative, slot appended last (lower). Components shared
    /// through a symmetry orbit are differentiated once.
    pub fn partial_derivative(&self) -> TensorField {
        let mut kinds = self.kinds.clone();
        kinds.push(IndexKind::Lower);
        let mut cache: HashMap<(usize, usize), ScalarField> = HashMap::new();
        TensorField::from_fn(&self.chart, kinds, |idx| {
            let base = &idx[..idx.len() - 1];
            let l = idx[idx.len() - 1];
            let comp = self.get(base);
            let key = (Arc::as_ptr(comp.expr_arc()) as usize, l);
            cache
                .entry(key)
                .or_insert_with(|| comp.partial(l))
                .clone()
        })
    }

    pub fn eval_dense(&self, point: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.comps.iter().map(|c| c.eval(point)).collect()
    }

    pub fn max_abs(&self, point: &[f64]) -> Result<f64, EvalError> {
        let mut m = 0.0f64;
        for c in &self.comps {
            m = m.max(c.eval(point)?.abs());
        }
        Ok(m)
    }
}

/// Scaled residual `max|L-R| / max(1, |L|, |R|)` at one point; the
/// normalisation keeps large-coordinate points comparable.
pub fn residual_at(lhs: &TensorField, rhs: &TensorField, point: &[f64]) -> Result<f64, EvalError> {
    assert_eq!(lhs.kinds, rhs.kinds);
    let a = lhs.eval_dense(point)?;
    let b = rhs.eval_dense(point)?;
    let mut diff = 0.0f64;
    let mut scale = 1.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        diff = diff.max((x - y).abs());
        scale = scale.max(x.abs()).max(y.abs());
    }
    Ok(diff / scale)
}

/// Riemannian metric with its symbolically inverted components.
#[derive(Clone, Debug)]
pub struct MetricField {
    g: TensorField,
    inv: TensorField,
    det: ScalarField,
}

fn minor_det(entries: &[Vec<ScalarField>], rows: &[usize], cols: &[usize], chart: &Chart) -> Expr {
    if rows.len() == 1 {
        return entries[rows[0]][cols[0]].expr().clone();
    }
    let mut acc = Expr::zero();
    for (pos, &c) in cols.iter().enumerate() {
        let sub_rows = &rows[1..];
        let sub_cols: Vec<usize> = cols.iter().copied().filter(|&x| x != c).collect();
        let m = minor_det(entries, sub_rows, &sub_cols, chart);
        let term = Expr::mul(entries[rows[0]][c].expr().clone(), m);
        acc = if pos % 2 == 0 {
            Expr::add(acc, term)
        } else {
            Expr::sub(acc, term)
        };
    }
    acc
}

impl MetricField {
    /// Build from a symmetric `(0,2)` tensor; computes determinant and
    /// inverse by cofactor expansion (exact, n <= 5 in practice).
    pub fn new(g: TensorField) -> Result<MetricField, TensorError> {
        if g.kinds() != [IndexKind::Lower, IndexKind::Lower] {
            return Err(TensorError::ShapeMismatch(
                "metric must be a (0,2) tensor".into(),
            ));
        }
        let chart = g.chart().clone();
        let n = chart.dim();
        let entries: Vec<Vec<ScalarField>> = (0..n)
            .map(|i| (0..n).map(|j| g.get(&[i, j]).clone()).collect())
            .collect();
        let all: Vec<usize> = (0..n).collect();
        let det_expr = minor_det(&entries, &all, &all, &chart);
        let det = ScalarField::new(chart.clone(), det_expr);
        let inv = TensorField::from_fn_sym(
            &chart,
            vec![IndexKind::Upper, IndexKind::Upper],
            &[vec![0, 1]],
            |idx| {
                let (i, j) = (idx[0], idx[1]);
                let rows: Vec<usize> = (0..n).filter(|&r| r != j).collect();
                let cols: Vec<usize> = (0..n).filter(|&c| c != i).collect();
                let cof = minor_det(&entries, &rows, &cols, &chart);
                let signed = if (i + j) % 2 == 0 {
                    cof
                } else {
                    Expr::neg(cof)
                };
                ScalarField::new(chart.clone(), Expr::div(signed, det.expr().clone()))
            },
        );
        Ok(MetricField { g, inv, det })
    }

    /// Conformal multiple of the flat metric, `g = ω² δ`.
    pub fn conformally_flat(chart: &Chart, omega: &ScalarField) -> MetricField {
        let om2 = omega.mul(omega);
        let g = TensorField::from_fn_sym(
            chart,
            vec![IndexKind::Lower, IndexKind::Lower],
            &[vec![0, 1]],
            |idx| {
                if idx[0] == idx[1] {
                    om2.clone()
                } else {
                    ScalarField::zero(chart)
                }
            },
        );
        MetricField::new(g).expect("conformally flat metric is well-formed")
    }

    pub fn euclidean(chart: &Chart) -> MetricField {
        MetricField::conformally_flat(chart, &ScalarField::one(chart))
    }

    pub fn chart(&self) -> &Chart {
        self.g.chart()
    }

    pub fn dim(&self) -> usize {
        self.chart().dim()
    }

    pub fn g(&self) -> &TensorField {
        &self.g
    }

    pub fn inv(&self) -> &TensorField {
        &self.inv
    }

    pub fn det(&self) -> &ScalarField {
        &self.det
    }

    /// Positive definiteness (leading principal minors) and `g g⁻¹ = id`
    /// to 1e-12 at each point.
    pub fn validate(&self, points: &[Vec<f64>]) -> Result<(), TensorError> {
        let n = self.dim();
        for pt in points {
            let gv = self.g.eval_dense(pt)?;
            let iv = self.inv.eval_dense(pt)?;
            for k in 1..=n {
                let rows: Vec<usize> = (0..k).collect();
                let mut m: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|&i| rows.iter().map(|&j| gv[i * n + j]).collect())
                    .collect();
                // Gaussian elimination determinant of the leading minor.
                let mut det = 1.0;
                for c in 0..k {
                    let piv = (c..k).max_by(|&a, &b| {
                        m[a][c].abs().partial_cmp(&m[b][c].abs()).unwrap()
                    });
                    let piv = piv.unwrap();
                    if m[piv][c].abs() < 1e-14 {
                        det = 0.0;
                        break;
                    }
                    if piv != c {
                        m.swap(piv, c);
                        det = -det;
                    }
                    det *= m[c][c];
                    for r in c + 1..k {
                        let f = m[r][c] / m[c][c];
                        for cc in c..k {
                            m[r][cc] -= f * m[c][cc];
                        }
                    }
                }
                if det <= 0.0 {
                    return Err(TensorError::DegenerateMetric(pt.clone()));
                }
            }
            let mut scale = 1.0f64;
            for v in gv.iter().chain(iv.iter()) {
                scale = scale.max(v.abs());
            }
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for a in 0..n {
                        s += gv[i * n + a] * iv[a * n + j];
                    }
                    let target = if i == j { 1.0 } else { 0.0 };
                    let resid = (s - target).abs() / scale;
                    if resid > 1e-12 {
                        return Err(TensorError::InverseResidual {
                            point: pt.clone(),
                            residual: resid,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Raise the (lower) slot of a tensor with `g⁻¹`.
    pub fn raise(&self, t: &TensorField, slot: usize) -> TensorField {
        assert_eq!(t.kinds()[slot], IndexKind::Lower);
        let dim = self.dim();
        let mut kinds = t.kinds().to_vec();
        kinds[slot] = IndexKind::Upper;
        TensorField::from_fn(t.chart(), kinds, |idx| {
            let mut src = idx.to_vec();
            let mut acc = Expr::zero();
            for a in 0..dim {
                src[slot] = a;
                acc = Expr::add(
                    acc,
                    Expr::mul(
                        self.inv.get(&[idx[slot], a]).expr().clone(),
                        t.get(&src).expr().clone(),
                    ),
                );
            }
            ScalarField::new(t.chart().clone(), acc)
        })
    }

    /// Lower the (upper) slot of a tensor with `g`.
    pub fn lower(&self, t: &TensorField, slot: usize) -> TensorField {
        assert_eq!(t.kinds()[slot], IndexKind::Upper);
        let dim = self.dim();
        let mut kinds = t.kinds().to_vec();
        kinds[slot] = IndexKind::Lower;
        TensorField::from_fn(t.chart(), kinds, |idx| {
            let mut src = idx.to_vec();
            let mut acc = Expr::zero();
            for a in 0..dim {
                src[slot] = a;
                acc = Expr::add(
                    acc,
                    Expr::mul(
                        self.g.get(&[idx[slot], a]).expr().clone(),
                        t.get(&src).expr().clone(),
                    ),
                );
            }
            ScalarField::new(t.chart().clone(), acc)
        })
    }

    /// Trace of two lower slots with `g⁻¹`.
    pub fn trace(&self, t: &TensorField, s1: usize, s2: usize) -> TensorField {
        let raised = self.raise(t, s1);
        raised.contract(s1, s2)
    }
}

/// `|T|² = T^{i...} T_{i...}`: full contraction of a tensor with itself.
pub fn tensor_norm2(t: &TensorField, g: &MetricField) -> ScalarField {
    let mut flipped = t.clone();
    for s in 0..t.rank() {
        flipped = match t.kinds()[s] {
            IndexKind::Lower => g.raise(&flipped, s),
            IndexKind::Upper => g.lower(&flipped, s),
        };
    }
    let chart = t.chart();
    let mut acc = Expr::zero();
    for idx in index_tuples(chart.dim(), t.rank()) {
        acc = Expr::add(
            acc,
            Expr::mul(t.get(&idx).expr().clone(), flipped.get(&idx).expr().clone()),
        );
    }
    ScalarField::new(chart.clone(), acc)
}

/// Affine connection in coordinates, `Γ^k_{ij}` stored upper-first.
#[derive(Clone, Debug)]
pub struct Connection {
    coeffs: TensorField,
    pub torsion_free: bool,
}

impl Connection {
    pub fn new(coeffs: TensorField, torsion_free: bool) -> Connection {
        assert_eq!(
            coeffs.kinds(),
            [IndexKind::Upper, IndexKind::Lower, IndexKind::Lower]
        );
        Connection {
            coeffs,
            torsion_free,
        }
    }

    pub fn flat(chart: &Chart) -> Connection {
        Connection::new(
            TensorField::zeros(
                chart,
                vec![IndexKind::Upper, IndexKind::Lower, IndexKind::Lower],
            ),
            true,
        )
    }

    pub fn chart(&self) -> &Chart {
        self.coeffs.chart()
    }

    pub fn gamma(&self, k: usize, i: usize, j: usize) -> &ScalarField {
        self.coeffs.get(&[k, i, j])
    }

    pub fn coeffs(&self) -> &TensorField {
        &self.coeffs
    }

    /// `∇ + A` for a (1,2) coefficient tensor `A^k_{ij}` (symmetric `A`
    /// preserves torsion-freeness).
    pub fn offset(&self, a: &TensorField, symmetric: bool) -> Connection {
        Connection::new(self.coeffs.add(a), self.torsion_free && symmetric)
    }
}

/// Levi-Civita connection of `g`.
pub fn levi_civita(g: &MetricField) -> Connection {
    let chart = g.chart().clone();
    let n = chart.dim();
    let dg = g.g().partial_derivative(); // ∂_a g_{ij} at slots [i, j, a]
    let coeffs = TensorField::from_fn_sym(
        &chart,
        vec![IndexKind::Upper, IndexKind::Lower, IndexKind::Lower],
        &[vec![1, 2]],
        |idx| {
            let (k, i, j) = (idx[0], idx[1], idx[2]);
            let mut acc = Expr::zero();
            for a in 0..n {
                let sum = Expr::sub(
                    Expr::add(
                        dg.get(&[a, j, i]).expr().clone(),
                        dg.get(&[a, i, j]).expr().clone(),
                    ),
                    dg.get(&[i, j, a]).expr().clone(),
                );
                acc = Expr::add(acc, Expr::mul(g.inv().get(&[k, a]).expr().clone(), sum));
            }
            ScalarField::new(chart.clone(), Expr::mul(Expr::rational(1, 2), acc))
        },
    );
    Connection::new(coeffs, true)
}

/// Covariant derivative; the derivative slot is appended last.
pub fn covariant_derivative(t: &TensorField, conn: &Connection) -> TensorField {
    assert!(t.chart() == conn.chart());
    let dim = t.chart().dim();
    let rank = t.rank();
    let dt = t.partial_derivative();
    let mut kinds = t.kinds().to_vec();
    kinds.push(IndexKind::Lower);
    TensorField::from_fn(t.chart(), kinds, |idx| {
        let base = &idx[..rank];
        let l = idx[rank];
        let mut acc = dt.get(idx).expr().clone();
        for s in 0..rank {
            for a in 0..dim {
                let mut src = base.to_vec();
                src[s] = a;
                let term = match t.kinds()[s] {
                    IndexKind::Upper => Expr::mul(
                        conn.gamma(base[s], l, a).expr().clone(),
                        t.get(&src).expr().clone(),
                    ),
                    IndexKind::Lower => Expr::neg(Expr::mul(
                        conn.gamma(a, l, base[s]).expr().clone(),
                        t.get(&src).expr().clone(),
                    )),
                };
                acc = Expr::add(acc, term);
            }
        }
        ScalarField::new(t.chart().clone(), acc)
    })
}

/// Gradient of a scalar as a 1-form (just the coordinate differential).
pub fn differential(f: &ScalarField) -> TensorField {
    let chart = f.chart().clone();
    TensorField::from_fn(&chart, vec![IndexKind::Lower], |idx| f.partial(idx[0]))
}

/// Hessian `∇²f` with respect to a connection (symmetric for torsion-free).
pub fn hessian(f: &ScalarField, conn: &Connection) -> TensorField {
    covariant_derivative(&differential(f), conn)
}

/// Laplace-Beltrami operator `Δf = g^{ij} ∇²_{ij} f`.
pub fn laplacian(f: &ScalarField, g: &MetricField, conn: &Connection) -> ScalarField {
    let h = hessian(f, conn);
    let traced = g.trace(&h, 0, 1);
    traced.get(&[]).clone()
}

/// Curvature `R^i_{jkl}` of a torsion-free connection.
pub fn riemann(conn: &Connection) -> Result<TensorField, TensorError> {
    if !conn.torsion_free {
        return Err(TensorError::TorsionNotSupported);
    }
    let chart = conn.chart().clone();
    let n = chart.dim();
    let dgamma = conn.coeffs().partial_derivative(); // ∂_m Γ^k_{ij} at [k,i,j,m]
    Ok(TensorField::from_fn(
        &chart,
        vec![
            IndexKind::Upper,
            IndexKind::Lower,
            IndexKind::Lower,
            IndexKind::Lower,
        ],
        |idx| {
            let (i, j, k, l) = (idx[0], idx[1], idx[2], idx[3]);
            let mut acc = Expr::sub(
                dgamma.get(&[i, l, j, k]).expr().clone(),
                dgamma.get(&[i, k, j, l]).expr().clone(),
            );
            for a in 0..n {
                acc = Expr::add(
                    acc,
                    Expr::sub(
                        Expr::mul(
                            conn.gamma(i, k, a).expr().clone(),
                            conn.gamma(a, l, j).expr().clone(),
                        ),
                        Expr::mul(
                            conn.gamma(i, l, a).expr().clone(),
                            conn.gamma(a, k, j).expr().clone(),
                        ),
                    ),
                );
            }
            ScalarField::new(chart.clone(), acc)
        },
    ))
}

/// `Ric(X,Y) = tr(R(·,X)Y)`, i.e. `Ric_{ij} = R^a_{jai}`. Not symmetrised:
/// general torsion-free connections may have a non-symmetric Ricci tensor.
pub fn ricci(conn: &Connection) -> Result<TensorField, TensorError> {
    let r = riemann(conn)?;
    let chart = conn.chart().clone();
    let n = chart.dim();
    Ok(TensorField::from_fn(
        &chart,
        vec![IndexKind::Lower, IndexKind::Lower],
        |idx| {
            let (i, j) = (idx[0], idx[1]);
            let mut acc = Expr::zero();
            for a in 0..n {
                acc = Expr::add(acc, r.get(&[a, j, a, i]).expr().clone());
            }
            ScalarField::new(chart.clone(), acc)
        },
    ))
}

pub fn scalar_curvature(conn: &Connection, g: &MetricField) -> Result<ScalarField, TensorError> {
    let ric = ricci(conn)?;
    Ok(g.trace(&ric, 0, 1).get(&[]).clone())
}

/// Schouten tensor `P = (Ric - R g / (2(n-1))) / (n-2)` of the Levi-Civita
/// connection; rejects n = 2.
pub fn schouten(g: &MetricField) -> Result<TensorField, TensorError> {
    let n = g.dim();
    if n < 3 {
        return Err(TensorError::NeedsDimensionAtLeast3);
    }
    let conn = levi_civita(g);
    let ric = ricci(&conn)?;
    let scal = g.trace(&ric, 0, 1).get(&[]).clone();
    let correction = g
        .g()
        .scale_field(&scal)
        .scale(Rational::new(1, 2 * (n as i64 - 1)));
    Ok(ric.sub(&correction).scale(Rational::new(1, n as i64 - 2)))
}

/// Trace-free part of the Schouten tensor. Uses `tr_g P = R / (2(n-1))`.
pub fn schouten_tracefree(g: &MetricField) -> Result<TensorField, TensorError> {
    let p = schouten(g)?;
    Ok(sym_tracefree2(&p, g, (0, 1)))
}

/// Projector onto the symmetric trace-free part over two lower slots; other
/// slots ride along.
pub fn sym_tracefree2(t: &TensorField, g: &MetricField, slots: (usize, usize)) -> TensorField {
    let n = t.chart().dim() as i64;
    let sym = t.symmetrize(&[slots.0, slots.1]);
    let tr = g.trace(&sym, slots.0, slots.1); // slots removed
    TensorField::from_fn(t.chart(), t.kinds().to_vec(), |idx| {
        let mut rest = Vec::with_capacity(idx.len() - 2);
        for (s, &v) in idx.iter().enumerate() {
            if s != slots.0 && s != slots.1 {
                rest.push(v);
            }
        }
        let correction = Expr::mul(
            g.g().get(&[idx[slots.0], idx[slots.1]]).expr().clone(),
            tr.get(&rest).expr().clone(),
        );
        ScalarField::new(
            t.chart().clone(),
            Expr::sub(
                sym.get(idx).expr().clone(),
                Expr::mul(Expr::rational(1, n), correction),
            ),
        )
    })
}

/// Projector onto the totally symmetric trace-free part over three lower
/// slots: symmetrise, then subtract `(g_{ij} v_k + g_{jk} v_i + g_{ik} v_j)/(n+2)`
/// with `v_k = g^{ab} Tsym_{abk}`.
pub fn sym_tracefree3(
    t: &TensorField,
    g: &MetricField,
    slots: (usize, usize, usize),
) -> TensorField {
    let n = t.chart().dim() as i64;
    let sym = t.symmetrize(&[slots.0, slots.1, slots.2]);
    let v = g.trace(&sym, slots.0, slots.1); // remaining: slots.2 (shifted) + extras
    // Position of a former slot in the contracted tensor's slot list.
    let pos_after = |slot: usize| -> usize {
        let mut pos = slot;
        for &removed in &[slots.0, slots.1] {
            if removed < slot {
                pos -= 1;
            }
        }
        pos
    };
    let vpos = pos_after(slots.2);
    TensorField::from_fn(t.chart(), t.kinds().to_vec(), |idx| {
        let mut rest = Vec::with_capacity(idx.len() - 2);
        for (s, &val) in idx.iter().enumerate() {
            if s != slots.0 && s != slots.1 {
                rest.push(val);
            }
        }
        let (i, j, k) = (idx[slots.0], idx[slots.1], idx[slots.2]);
        let mut corr = Expr::zero();
        for (gi, gj, free) in [(i, j, k), (j, k, i), (i, k, j)] {
            let mut vidx = rest.clone();
            vidx[vpos] = free;
            corr = Expr::add(
                corr,
                Expr::mul(
                    g.g().get(&[gi, gj]).expr().clone(),
                    v.get(&vidx).expr().clone(),
                ),
            );
        }
        ScalarField::new(
            t.chart().clone(),
            Expr::sub(
                sym.get(idx).expr().clone(),
                Expr::mul(Expr::rational(1, n + 2), corr),
            ),
        )
    })
}

/// Kulkarni-Nomizu product
/// `(h ⩕ k)_{abcd} = h_{ad}k_{bc} + h_{bc}k_{ad} - h_{ac}k_{bd} - h_{bd}k_{ac}`.
pub fn kulkarni_nomizu(h: &TensorField, k: &TensorField) -> TensorField {
    assert!(h.chart() == k.chart());
    TensorField::from_fn(h.chart(), vec![IndexKind::Lower; 4], |idx| {
        let (a, b, c, d) = (idx[0], idx[1], idx[2], idx[3]);
        let term = |h1: &TensorField, i1: [usize; 2], k1: &TensorField, i2: [usize; 2]| {
            Expr::mul(h1.get(&i1).expr().clone(), k1.get(&i2).expr().clone())
        };
        let e = Expr::sub(
            Expr::add(term(h, [a, d], k, [b, c]), term(h, [b, c], k, [a, d])),
            Expr::add(term(h, [a, c], k, [b, d]), term(h, [b, d], k, [a, c])),
        );
        ScalarField::new(h.chart().clone(), e)
    })
}

/// Remove all metric traces from an algebraic curvature tensor (antisymmetric
/// in (0,1) and (2,3), symmetric under pair swap): subtract the Ricci-type
/// and scalar parts of the standard decomposition. The result annihilates
/// every contraction pair.
pub fn curvature_tracefree(b: &TensorField, g: &MetricField) -> TensorField {
    let n = g.dim() as i64;
    let chart = b.chart().clone();
    let dim = g.dim();
    // ric_{bc} = g^{ad} B_{abcd}
    let ric = TensorField::from_fn(
        &chart,
        vec![IndexKind::Lower, IndexKind::Lower],
        |idx| {
            let (i, j) = (idx[0], idx[1]);
            let mut acc = Expr::zero();
            for a in 0..dim {
                for d in 0..dim {
                    acc = Expr::add(
                        acc,
                        Expr::mul(
                            g.inv().get(&[a, d]).expr().clone(),
                            b.get(&[a, i, j, d]).expr().clone(),
                        ),
                    );
                }
            }
            ScalarField::new(chart.clone(), acc)
        },
    );
    let scal = g.trace(&ric, 0, 1).get(&[]).clone();
    let z = ric.sub(&g.g().scale_field(&scal).scale(Rational::new(1, n)));
    let zg = kulkarni_nomizu(&z, g.g()).scale(Rational::new(1, n - 2));
    let gg = kulkarni_nomizu(g.g(), g.g())
        .scale_field(&scal)
        .scale(Rational::new(1, 2 * n * (n - 1)));
    b.sub(&zg).sub(&gg)
}

/// Normalisation of the Schouten-type tensor entering the Weyl tensor of a
/// general torsion-free connection: `Printed` divides the trace term by
/// `2n(n-1)`, `Standard` by `2(n-1)`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SchoutenVariant {
    Printed,
    Standard,
}

impl SchoutenVariant {
    pub fn label(self) -> &'static str {
        match self {
            SchoutenVariant::Printed => "printed",
            SchoutenVariant::Standard => "standard",
        }
    }
}

/// Weyl tensor of a torsion-free connection with respect to `g`:
/// `Weyl(X,Y,Z,W) = g(R(X,Y)Z, W) - (P ⩕ g)(X,Y,Z,W)` with
/// `P = (Ric - tr_g Ric · g / norm) / (n-2)`.
pub fn weyl_tensor_of_connection(
    conn: &Connection,
    g: &MetricField,
    variant: SchoutenVariant,
) -> Result<TensorField, TensorError> {
    let n = g.dim() as i64;
    if n < 3 {
        return Err(TensorError::NeedsDimensionAtLeast3);
    }
    let chart = conn.chart().clone();
    let dim = g.dim();
    let r = riemann(conn)?;
    // Lowered curvature Riem_{abcd} = g_{di} R^i_{cab}.
    let riem4 = TensorField::from_fn(&chart, vec![IndexKind::Lower; 4], |idx| {
        let (a, b, c, d) = (idx[0], idx[1], idx[2], idx[3]);
        let mut acc = Expr::zero();
        for i in 0..dim {
            acc = Expr::add(
                acc,
                Expr::mul(
                    g.g().get(&[d, i]).expr().clone(),
                    r.get(&[i, c, a, b]).expr().clone(),
                ),
            );
        }
        ScalarField::new(chart.clone(), acc)
    });
    let ric = ricci(conn)?;
    let tr = g.trace(&ric, 0, 1).get(&[]).clone();
    let denom = match variant {
        SchoutenVariant::Printed => 2 * n * (n - 1),
        SchoutenVariant::Standard => 2 * (n - 1),
    };
    let p = ric
        .sub(&g.g().scale_field(&tr).scale(Rational::new(1, denom)))
        .scale(Rational::new(1, n - 2));
    Ok(riem4.sub(&kulkarni_nomizu(&p, g.g())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::eval_jet;

    fn flat_chart(n: usize) -> Chart {
        Chart::uniform(n, -2.0, 2.0).unwrap()
    }

    /// Unit n-sphere in stereographic coordinates: g = 4 δ / (1 + |x|²)².
    fn stereographic_sphere(n: usize) -> MetricField {
        let chart = flat_chart(n);
        let mut sum = Expr::one();
        for i in 0..n {
            sum = Expr::add(sum, Expr::pow(Expr::var(i), 2));
        }
        let omega = ScalarField::new(
            chart.clone(),
            Expr::div(Expr::int(2), sum),
        );
        MetricField::conformally_flat(&chart, &omega)
    }

    #[test]
    fn euclidean_christoffels_vanish() {
        let g = MetricField::euclidean(&flat_chart(3));
        let conn = levi_civita(&g);
        for idx in index_tuples(3, 3) {
            assert!(conn.coeffs().get(&idx).is_zero_expr());
        }
    }

    #[test]
    fn exponential_metric_christoffels() {
        // g = e^{2 x1} δ on R²: Γ¹₁₁ = 1, Γ¹₂₂ = -1, Γ²₁₂ = 1.
        let chart = flat_chart(2);
        let omega = ScalarField::new(chart.clone(), Expr::exp(Expr::var(0)));
        let g = MetricField::conformally_flat(&chart, &omega);
        let conn = levi_civita(&g);
        let pt = [0.3, -0.7];
        assert!((conn.gamma(0, 0, 0).eval(&pt).unwrap() - 1.0).abs() < 1e-12);
        assert!((conn.gamma(0, 1, 1).eval(&pt).unwrap() + 1.0).abs() < 1e-12);
        assert!((conn.gamma(1, 0, 1).eval(&pt).unwrap() - 1.0).abs() < 1e-12);
        assert!(conn.gamma(1, 0, 0).eval(&pt).unwrap().abs() < 1e-14);
    }

    #[test]
    fn levi_civita_is_metric() {
        let g = stereographic_sphere(3);
        let conn = levi_civita(&g);
        let nabla_g = covariant_derivative(g.g(), &conn);
        for pt in g.chart().sample_points(11, 20, 0.05) {
            assert!(nabla_g.max_abs(&pt).unwrap() < 1e-10);
        }
    }

    #[test]
    fn covariant_derivative_of_scalar_is_gradient() {
        let chart = flat_chart(2);
        let g = stereographic_sphere(2);
        let conn = levi_civita(&g);
        let f = ScalarField::from_str(&chart, "x1^2*x2").unwrap();
        let grad = covariant_derivative(
            &TensorField::from_fn(&chart, vec![], |_| f.clone()),
            &conn,
        );
        for pt in chart.sample_points(5, 10, 0.05) {
            let jet = eval_jet(&f, &pt, 1).unwrap();
            assert!((grad.get(&[0]).eval(&pt).unwrap() - jet.partial(&[0])).abs() < 1e-13);
            assert!((grad.get(&[1]).eval(&pt).unwrap() - jet.partial(&[1])).abs() < 1e-13);
        }
    }

    #[test]
    fn leibniz_rule_for_scalar_times_metric() {
        let chart = flat_chart(2);
        let g = stereographic_sphere(2);
        let conn = levi_civita(&g);
        let f = ScalarField::from_str(&chart, "exp(x1) + x2^2").unwrap();
        let fg = g.g().scale_field(&f);
        let lhs = covariant_derivative(&fg, &conn);
        // ∇(f g) = df ⊗ g since ∇g = 0; derivative slot is last.
        let df = differential(&f);
        let rhs = g.g().tensor_product(&df);
        for pt in chart.sample_points(9, 10, 0.05) {
            assert!(residual_at(&lhs, &rhs, &pt).unwrap() < 1e-10);
        }
    }

    #[test]
    fn flat_curvature_vanishes() {
        let g = MetricField::euclidean(&flat_chart(3));
        let conn = levi_civita(&g);
        let r = riemann(&conn).unwrap();
        for idx in index_tuples(3, 4) {
            assert!(r.get(&idx).is_zero_expr());
        }
    }

    #[test]
    fn unit_sphere_ricci_pins_sign_convention() {
        for n in [2usize, 3] {
            let g = stereographic_sphere(n);
            let conn = levi_civita(&g);
            let ric = ricci(&conn).unwrap();
            let target = g.g().scale(Rational::from_int(n as i64 - 1));
            for pt in g.chart().sample_points(13, 15, 0.05) {
                assert!(
                    residual_at(&ric, &target, &pt).unwrap() < 1e-9,
                    "Ric != (n-1) g on the unit {n}-sphere"
                );
            }
        }
    }

    #[test]
    fn unit_two_sphere_scalar_curvature() {
        let g = stereographic_sphere(2);
        let conn = levi_civita(&g);
        let r = scalar_curvature(&conn, &g).unwrap();
        for pt in g.chart().sample_points(17, 10, 0.05) {
            assert!((r.eval(&pt).unwrap() - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn first_bianchi_identity() {
        let g = stereographic_sphere(3);
        let conn = levi_civita(&g);
        let r = riemann(&conn).unwrap();
        // R^i_{jkl} + R^i_{klj} + R^i_{ljk} = 0.
        let sum = r
            .add(&r.permute(&[0, 2, 3, 1]))
            .add(&r.permute(&[0, 3, 1, 2]));
        for pt in g.chart().sample_points(19, 10, 0.05) {
            let scale = r.max_abs(&pt).unwrap().max(1.0);
            assert!(sum.max_abs(&pt).unwrap() / scale < 1e-9);
        }
    }

    #[test]
    fn schouten_rejects_n2_and_matches_sphere() {
        let g2 = stereographic_sphere(2);
        assert!(matches!(
            schouten(&g2),
            Err(TensorError::NeedsDimensionAtLeast3)
        ));
        let g3 = stereographic_sphere(3);
        let p = schouten(&g3).unwrap();
        let target = g3.g().scale(Rational::new(1, 2));
        for pt in g3.chart().sample_points(23, 10, 0.05) {
            assert!(residual_at(&p, &target, &pt).unwrap() < 1e-9);
        }
    }

    #[test]
    fn schouten_of_flat_metric_vanishes() {
        let g = MetricField::euclidean(&flat_chart(3));
        let p = schouten(&g).unwrap();
        for idx in index_tuples(3, 2) {
            assert!(p.get(&idx).is_zero_expr());
        }
    }

    #[test]
    fn schouten_conformal_transformation_law() {
        // For g' = e^{2σ} δ: P' = -∇²σ + dσ⊗dσ - ½|dσ|² δ, with σ-derivatives
        // cross-checked through the finite-difference oracle.
        let chart = flat_chart(3);
        let sigma = ScalarField::from_str(&chart, "0.3*x1 + 0.1*x1*x2 - 0.2*x3^2").unwrap();
        let g = MetricField::conformally_flat(&chart, &sigma.exp());
        let p = schouten(&g).unwrap();
        for pt in chart.sample_points(29, 8, 0.1) {
            let jet = crate::field::fd_oracle(&sigma, &pt, 2, None).unwrap();
            let mut grad = [0.0; 3];
            for i in 0..3 {
                grad[i] = jet.partial(&[i]);
            }
            let norm2: f64 = grad.iter().map(|v| v * v).sum();
            for i in 0..3 {
                for j in 0..3 {
                    let expected = -jet.partial(&[i, j]) + grad[i] * grad[j]
                        - if i == j { 0.5 * norm2 } else { 0.0 };
                    let got = p.get(&[i, j]).eval(&pt).unwrap();
                    assert!(
                        (got - expected).abs() < 1e-5 * (1.0 + expected.abs()),
                        "P[{i}{j}] {got} vs {expected}"
                    );
                }
            }
        }
    }

    #[test]
    fn sym3_projector_idempotent_and_tracefree() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let chart = flat_chart(4);
        let g = MetricField::euclidean(&chart);
        let t = TensorField::from_fn(&chart, vec![IndexKind::Lower; 3], |_| {
            ScalarField::constant(&chart, Rational::new(rng.gen_range(-20i64..20), 7))
        });
        let once = sym_tracefree3(&t, &g, (0, 1, 2));
        let twice = sym_tracefree3(&once, &g, (0, 1, 2));
        let pt = vec![0.0; 4];
        for idx in index_tuples(4, 3) {
            let a = once.get(&idx).eval(&pt).unwrap();
            let b = twice.get(&idx).eval(&pt).unwrap();
            assert!((a - b).abs() < 1e-12, "projector not idempotent");
        }
        let tr = g.trace(&once, 0, 1);
        for k in 0..4 {
            assert!(tr.get(&[k]).eval(&pt).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn sym2_projector_annihilates_metric() {
        let chart = flat_chart(3);
        let g = stereographic_sphere(3);
        let proj = sym_tracefree2(g.g(), &g, (0, 1));
        for pt in chart.sample_points(31, 5, 0.05) {
            assert!(proj.max_abs(&pt).unwrap() < 1e-12);
        }
    }

    #[test]
    fn sym2_projector_fixes_tracefree_input() {
        let chart = flat_chart(2);
        let g = MetricField::euclidean(&chart);
        // diag(1, -1) is symmetric trace-free for δ.
        let t = TensorField::from_fn(&chart, vec![IndexKind::Lower; 2], |idx| {
            match (idx[0], idx[1]) {
                (0, 0) => ScalarField::one(&chart),
                (1, 1) => ScalarField::one(&chart).neg(),
                _ => ScalarField::zero(&chart),
            }
        });
        let p = sym_tracefree2(&t, &g, (0, 1));
        let pt = [0.1, 0.2];
        for idx in index_tuples(2, 2) {
            let a = t.get(&idx).eval(&pt).unwrap();
            let b = p.get(&idx).eval(&pt).unwrap();
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn metric_norm_is_dimension() {
        let g = stereographic_sphere(3);
        let n2 = tensor_norm2(g.g(), &g);
        for pt in g.chart().sample_points(37, 5, 0.05) {
            assert!((n2.eval(&pt).unwrap() - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weyl_of_conformally_flat_metric_vanishes_standard() {
        let chart = flat_chart(4);
        let omega = ScalarField::from_str(&chart, "exp(0.2*x1 - 0.1*x2)").unwrap();
        let g = MetricField::conformally_flat(&chart, &omega);
        let conn = levi_civita(&g);
        let w = weyl_tensor_of_connection(&conn, &g, SchoutenVariant::Standard).unwrap();
        for pt in chart.sample_points(41, 8, 0.05) {
            let scale = 1.0f64.max(g.g().max_abs(&pt).unwrap());
            assert!(w.max_abs(&pt).unwrap() / scale < 1e-8);
        }
    }

    #[test]
    fn weyl_rejects_n2() {
        let g = stereographic_sphere(2);
        let conn = levi_civita(&g);
        assert!(weyl_tensor_of_connection(&conn, &g, SchoutenVariant::Standard).is_err());
    }

    #[test]
    fn metric_validate_detects_indefinite() {
        let chart = flat_chart(2);
        // diag(1, x1) is indefinite on [-2,2].
        let t = TensorField::from_fn(&chart, vec![IndexKind::Lower; 2], |idx| {
            match (idx[0], idx[1]) {
                (0, 0) => ScalarField::one(&chart),
                (1, 1) => ScalarField::coordinate(&chart, 0),
                _ => ScalarField::zero(&chart),
            }
        });
        let g = MetricField::new(t).unwrap();
        assert!(g.validate(&[vec![-1.0, 0.0]]).is_err());
    }
}
