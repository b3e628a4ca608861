//! Affine symmetric matrix functions of structured decision variables.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VarKind {
    Scalar,
    Full { rows: usize, cols: usize },
    Symmetric { dim: usize },
}

#[derive(Clone, Debug)]
pub struct DecisionVar {
    pub name: String,
    pub kind: VarKind,
    /// First coordinate of this variable in the flattened decision vector.
    pub offset: usize,
}

impl DecisionVar {
    pub fn len(&self) -> usize {
        match self.kind {
            VarKind::Scalar => 1,
            VarKind::Full { rows, cols } => rows * cols,
            VarKind::Symmetric { dim } => dim * (dim + 1) / 2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        match self.kind {
            VarKind::Scalar => (1, 1),
            VarKind::Full { rows, cols } => (rows, cols),
            VarKind::Symmetric { dim } => (dim, dim),
        }
    }

    /// Flattened coordinate of entry (i, j) relative to `offset`.
    fn local_coord(&self, i: usize, j: usize) -> usize {
        match self.kind {
            VarKind::Scalar => 0,
            VarKind::Full { cols, .. } => i * cols + j,
            VarKind::Symmetric { dim } => {
                let (i, j) = if i <= j { (i, j) } else { (j, i) };
                // row-major upper triangle: sum_{r<i} (dim - r) = i*dim - i*(i-1)/2
                i * dim - i * i.saturating_sub(1) / 2 + j - i
            }
        }
    }
}

enum Term {
    Const {
        bi: usize,
        bj: usize,
        m: DMatrix<f64>,
    },
    Scalar {
        bi: usize,
        bj: usize,
        var: VarId,
        m: DMatrix<f64>,
    },
    Product {
        bi: usize,
        bj: usize,
        left: Option<DMatrix<f64>>,
        var: VarId,
        right: Option<DMatrix<f64>>,
        coef: f64,
    },
}

/// Block-structured description of one strict LMI `F(x) < 0`.
///
/// Off-diagonal contributions are mirrored automatically; contributions to a
/// diagonal block are symmetrized.
pub struct LmiBuilder {
    name: String,
    blocks: Vec<usize>,
    terms: Vec<Term>,
    margin: Option<f64>,
}

impl LmiBuilder {
    pub fn new(name: impl Into<String>, blocks: &[usize]) -> Self {
        LmiBuilder {
            name: name.into(),
            blocks: blocks.to_vec(),
            terms: Vec::new(),
            margin: None,
        }
    }

    /// Adds a constant matrix at block (bi, bj).
    pub fn constant(&mut self, bi: usize, bj: usize, m: DMatrix<f64>) -> &mut Self {
        self.terms.push(Term::Const { bi, bj, m });
        self
    }

    /// Adds `x * m` for a scalar variable `x`.
    pub fn scalar(&mut self, bi: usize, bj: usize, var: VarId, m: DMatrix<f64>) -> &mut Self {
        self.terms.push(Term::Scalar { bi, bj, var, m });
        self
    }

    /// Adds `coef * X` for a matrix variable `X`.
    pub fn var(&mut self, bi: usize, bj: usize, var: VarId, coef: f64) -> &mut Self {
        self.product(bi, bj, None, var, None, coef)
    }

    /// Adds `coef * left * X * right`; `None` stands for an identity factor.
    pub fn product(
        &mut self,
        bi: usize,
        bj: usize,
        left: Option<&DMatrix<f64>>,
        var: VarId,
        right: Option<&DMatrix<f64>>,
        coef: f64,
    ) -> &mut Self {
        self.terms.push(Term::Product {
            bi,
            bj,
            left: left.cloned(),
            var,
            right: right.cloned(),
            coef,
        });
        self
    }

    /// Overrides the default strictness margin.
    pub fn margin(&mut self, margin: f64) -> &mut Self {
        self.margin = Some(margin);
        self
    }
}

/// Nonzero upper-triangle entries of one coefficient matrix `F_c`, plus the
/// same matrix expanded by rows for Hessian assembly.
#[derive(Clone, Debug)]
pub struct CoordTerm {
    pub coord: usize,
    /// (row, col, value) with row <= col.
    pub entries: Vec<(usize, usize, f64)>,
    pub(crate) rows: Vec<(usize, Vec<(usize, f64)>)>,
}

/// `F(x) = F0 + sum_c x_c F_c`, required to satisfy `F(x) <= -margin I`.
#[derive(Clone, Debug)]
pub struct AffineLmi {
    pub name: String,
    pub dim: usize,
    pub blocks: Vec<usize>,
    pub f0: DMatrix<f64>,
    pub terms: Vec<CoordTerm>,
    pub margin: f64,
}

impl AffineLmi {
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut f = self.f0.clone();
        for t in &self.terms {
            let xc = x[t.coord];
            if xc == 0.0 {
                continue;
            }
            for &(r, c, v) in &t.entries {
                f[(r, c)] += xc * v;
                if r != c {
                    f[(c, r)] += xc * v;
                }
            }
        }
        f
    }
}

/// Default strictness margin for an LMI with constant part `f0`.
pub fn strict_margin(f0: &DMatrix<f64>) -> f64 {
    1e-8 * (1.0 + f0.norm())
}

/// A semidefinite program: minimize a linear objective subject to strict LMIs.
#[derive(Clone, Debug, Default)]
pub struct LmiProblem {
    pub vars: Vec<DecisionVar>,
    pub n_coords: usize,
    pub objective: Vec<f64>,
    pub constraints: Vec<AffineLmi>,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn add_var(&mut self, name: &str, kind: VarKind) -> VarId {
        let v = DecisionVar {
            name: name.to_string(),
            kind,
            offset: self.n_coords,
        };
        self.n_coords += v.len();
        self.objective.resize(self.n_coords, 0.0);
        self.vars.push(v);
        VarId(self.vars.len() - 1)
    }

    pub fn scalar(&mut self, name: &str) -> VarId {
        self.add_var(name, VarKind::Scalar)
    }

    pub fn full(&mut self, name: &str, rows: usize, cols: usize) -> VarId {
        self.add_var(name, VarKind::Full { rows, cols })
    }

    pub fn symmetric(&mut self, name: &str, dim: usize) -> VarId {
        self.add_var(name, VarKind::Symmetric { dim })
    }

    pub fn var(&self, id: VarId) -> &DecisionVar {
        &self.vars[id.0]
    }

    pub fn coord(&self, id: VarId, i: usize, j: usize) -> usize {
        let v = &self.vars[id.0];
        v.offset + v.local_coord(i, j)
    }

    /// Adds `weight * trace(X)` (or `weight * x` for scalars) to the objective.
    pub fn minimize_trace(&mut self, id: VarId, weight: f64) {
        let (r, c) = self.vars[id.0].shape();
        assert_eq!(r, c, "trace of a non-square variable");
        for i in 0..r {
            let k = self.coord(id, i, i);
            self.objective[k] += weight;
        }
    }

    pub fn has_objective(&self) -> bool {
        self.objective.iter().any(|&c| c != 0.0)
    }

    /// Value of variable `id` at the flattened point `x`.
    pub fn value(&self, x: &[f64], id: VarId) -> DMatrix<f64> {
        let v = &self.vars[id.0];
        let (r, c) = v.shape();
        DMatrix::from_fn(r, c, |i, j| x[v.offset + v.local_coord(i, j)])
    }

    pub fn scalar_value(&self, x: &[f64], id: VarId) -> f64 {
        x[self.vars[id.0].offset]
    }

    /// Writes a matrix value of variable `id` into `x` (symmetric part for
    /// symmetric variables).
    pub fn set_value(&self, x: &mut [f64], id: VarId, m: &DMatrix<f64>) {
        let v = &self.vars[id.0];
        let (r, c) = v.shape();
        assert_eq!(m.shape(), (r, c), "value shape for {}", v.name);
        for i in 0..r {
            for j in 0..c {
                if matches!(v.kind, VarKind::Symmetric { .. }) && j < i {
                    continue;
                }
                let val = if matches!(v.kind, VarKind::Symmetric { .. }) {
                    0.5 * (m[(i, j)] + m[(j, i)])
                } else {
                    m[(i, j)]
                };
                x[v.offset + v.local_coord(i, j)] = val;
            }
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Compiles a builder into an affine LMI and appends it.
    pub fn add_lmi(&mut self, b: &LmiBuilder) -> Result<usize> {
        let offsets: Vec<usize> = b
            .blocks
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let dim: usize = b.blocks.iter().sum();
        let mut f0 = DMatrix::zeros(dim, dim);
        let mut acc: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        let nb = b.blocks.len();
        let what = |k: &str| format!("LMI '{}' {}", b.name, k);

        for term in &b.terms {
            let (bi, bj) = match term {
                Term::Const { bi, bj, .. }
                | Term::Scalar { bi, bj, .. }
                | Term::Product { bi, bj, .. } => (*bi, *bj),
            };
            if bi >= nb || bj >= nb {
                return Err(Error::Config(format!(
                    "{} references block ({bi},{bj}) of {nb}",
                    what("term")
                )));
            }
            let (rb, cb) = (b.blocks[bi], b.blocks[bj]);
            let (oi, oj) = (offsets[bi], offsets[bj]);
            let diag_block = bi == bj;
            // Places value v of the block-local (r, c) entry for coordinate k
            // (None for the constant part).
            let mut place = |k: Option<usize>, r: usize, c: usize, v: f64| {
                if v == 0.0 {
                    return;
                }
                let (gr, gc) = (oi + r, oj + c);
                let (lo, hi) = if gr <= gc { (gr, gc) } else { (gc, gr) };
                let v = if diag_block && gr != gc { 0.5 * v } else { v };
                match k {
                    None => {
                        f0[(lo, hi)] += v;
                        if lo != hi {
                            f0[(hi, lo)] += v;
                        }
                    }
                    Some(k) => *acc.entry((k, lo, hi)).or_insert(0.0) += v,
                }
            };
            match term {
                Term::Const { m, .. } => {
                    if m.shape() != (rb, cb) {
                        return Err(Error::dim(what("constant rows"), rb, m.nrows()));
                    }
                    for r in 0..rb {
                        for c in 0..cb {
                            place(None, r, c, m[(r, c)]);
                        }
                    }
                }
                Term::Scalar { var, m, .. } => {
                    if self.vars[var.0].kind != VarKind::Scalar {
                        return Err(Error::Config(what("scalar term on matrix variable")));
                    }
                    if m.shape() != (rb, cb) {
                        return Err(Error::dim(what("scalar term rows"), rb, m.nrows()));
                    }
                    let k = self.vars[var.0].offset;
                    for r in 0..rb {
                        for c in 0..cb {
                            place(Some(k), r, c, m[(r, c)]);
                        }
                    }
                }
                Term::Product {
                    left,
                    var,
                    right,
                    coef,
                    ..
                } => {
                    let v = &self.vars[var.0];
                    let (vr, vc) = v.shape();
                    let l = left.clone().unwrap_or_else(|| DMatrix::identity(vr, vr));
                    let rt = right.clone().unwrap_or_else(|| DMatrix::identity(vc, vc));
                    if l.ncols() != vr {
                        return Err(Error::dim(what(&format!("left factor of {}", v.name)), vr, l.ncols()));
                    }
                    if rt.nrows() != vc {
                        return Err(Error::dim(what(&format!("right factor of {}", v.name)), vc, rt.nrows()));
                    }
                    if l.nrows() != rb {
                        return Err(Error::dim(what(&format!("rows of term in {}", v.name)), rb, l.nrows()));
                    }
                    if rt.ncols() != cb {
                        return Err(Error::dim(what(&format!("cols of term in {}", v.name)), cb, rt.ncols()));
                    }
                    let symmetric = matches!(v.kind, VarKind::Symmetric { .. });
                    for p in 0..vr {
                        for q in 0..vc {
                            if symmetric && q < p {
                                continue;
                            }
                            let k = v.offset + v.local_coord(p, q);
                            for r in 0..rb {
                                let lp = l[(r, p)];
                                let lq = if symmetric && p != q { l[(r, q)] } else { 0.0 };
                                if lp == 0.0 && lq == 0.0 {
                                    continue;
                                }
                                for c in 0..cb {
                                    let mut val = lp * rt[(q, c)];
                                    if lq != 0.0 {
                                        val += lq * rt[(p, c)];
                                    }
                                    place(Some(k), r, c, coef * val);
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut terms: Vec<CoordTerm> = Vec::new();
        for ((k, r, c), v) in acc {
            if v == 0.0 {
                continue;
            }
            match terms.last_mut() {
                Some(t) if t.coord == k => t.entries.push((r, c, v)),
                _ => terms.push(CoordTerm {
                    coord: k,
                    entries: vec![(r, c, v)],
                    rows: Vec::new(),
                }),
            }
        }
        for t in &mut terms {
            let mut rows: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
            for &(r, c, v) in &t.entries {
                rows.entry(r).or_default().push((c, v));
                if r != c {
                    rows.entry(c).or_default().push((r, v));
                }
            }
            t.rows = rows.into_iter().collect();
        }
        let margin = b.margin.unwrap_or_else(|| strict_margin(&f0));
        self.constraints.push(AffineLmi {
            name: b.name.clone(),
            dim,
            blocks: b.blocks.clone(),
            f0,
            terms,
            margin,
        });
        Ok(self.constraints.len() - 1)
    }

    /// Largest eigenvalue of each constraint at `x` (all must be <= -margin).
    pub fn constraint_maxeigs(&self, x: &[f64]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|l| crate::linalg::lambda_max(&l.eval(x)))
            .collect()
    }

    /// True when every constraint satisfies `lambda_max(F_j(x)) <= -margin_j`
    /// up to a rounding allowance.
    pub fn is_strictly_feasible(&self, x: &[f64]) -> bool {
        self.constraints.iter().all(|l| {
            let f = l.eval(x);
            let slack = 1e-12 * (1.0 + f.norm());
            crate::linalg::lambda_max(&f) <= -l.margin + slack
        })
    }
}
