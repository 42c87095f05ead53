//! Reverse-mode differentiation over dense matrices.
//!
//! Every node of a [`Tape`] holds a matrix value and the operation that
//! produced it. [`Tape::gradients`] walks the nodes backwards from a `1x1`
//! output and accumulates adjoints for every ancestor. Operations are
//! infallible; a failed Cholesky factorization poisons its output with NaN
//! and is reported by [`Tape::check`].

use std::cell::{Cell, Ref, RefCell};

use nalgebra::DMatrix;

use super::linalg::{cholesky_unchecked, DEFAULT_JITTER_LADDER};
use crate::error::{Error, Result};

type M = DMatrix<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    MulScalar(usize, usize),
    Broadcast(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    ClampMin(usize, f64),
    Sum(usize),
    ColSums(usize),
    RowSums(usize),
    Chol(usize),
    SolveLower(usize, usize),
    SolveLowerT(usize, usize),
    Diag(usize),
    Columns(usize, usize),
    HCat(Vec<usize>),
    SeCov { a: usize, b: usize, log_ls: usize, log_var: usize },
}

struct Node {
    value: M,
    op: Op,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    ladder: Vec<f64>,
    max_jitter: Cell<f64>,
    failure: RefCell<Option<Error>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::gradients`].
pub struct Grads {
    adj: Vec<Option<M>>,
    shapes: Vec<(usize, usize)>,
}

impl Grads {
    pub fn get(&self, v: Var) -> M {
        match &self.adj[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                M::zeros(r, c)
            }
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.adj[v.0].as_ref().map_or(0.0, |g| g[(0, 0)])
    }
}

fn lower_part(m: &M) -> M {
    let mut out = m.clone();
    for j in 0..m.ncols() {
        for i in 0..j.min(m.nrows()) {
            out[(i, j)] = 0.0;
        }
    }
    out
}

fn solve_lower(l: &M, b: &M) -> M {
    l.solve_lower_triangular(b)
        .unwrap_or_else(|| M::from_element(b.nrows(), b.ncols(), f64::NAN))
}

fn solve_lower_t(l: &M, b: &M) -> M {
    l.tr_solve_lower_triangular(b)
        .unwrap_or_else(|| M::from_element(b.nrows(), b.ncols(), f64::NAN))
}

impl Tape {
    pub fn new() -> Self {
        Self::with_ladder(DEFAULT_JITTER_LADDER.to_vec())
    }

    pub fn with_ladder(ladder: Vec<f64>) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(256)),
            ladder,
            max_jitter: Cell::new(0.0),
            failure: RefCell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest ladder jitter any Cholesky on this tape needed.
    pub fn max_jitter(&self) -> f64 {
        self.max_jitter.get()
    }

    /// First numerical failure recorded while building, if any.
    pub fn check(&self) -> Result<()> {
        match self.failure.borrow().as_ref() {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    fn push(&self, value: M, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Ref<'_, M> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn leaf(&self, value: M) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, x: f64) -> Var {
        self.leaf(M::from_element(1, 1, x))
    }

    fn unary(&self, a: Var, f: impl FnOnce(&M) -> M, op: Op) -> Var {
        let v = f(&self.value(a));
        self.push(v, op)
    }

    fn binary(&self, a: Var, b: Var, f: impl FnOnce(&M, &M) -> M, op: Op) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.0].value, &nodes[b.0].value)
        };
        self.push(v, op)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x.component_mul(y), Op::Mul(a.0, b.0))
    }

    /// Elementwise quotient.
    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x.component_div(y), Op::Div(a.0, b.0))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a.0, c))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `a + c` for a constant matrix `c`.
    pub fn add_const(&self, a: Var, c: &M) -> Var {
        self.unary(a, |x| x + c, Op::AddConst(a.0))
    }

    pub fn add_scalar_const(&self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x.add_scalar(c), Op::AddConst(a.0))
    }

    /// `a + c I`.
    pub fn add_diag_const(&self, a: Var, c: f64) -> Var {
        self.unary(
            a,
            |x| {
                let mut y = x.clone();
                for i in 0..y.nrows().min(y.ncols()) {
                    y[(i, i)] += c;
                }
                y
            },
            Op::AddConst(a.0),
        )
    }

    /// `a * s` with `s` a `1x1` node.
    pub fn mul_scalar(&self, a: Var, s: Var) -> Var {
        self.binary(a, s, |x, y| x * y[(0, 0)], Op::MulScalar(a.0, s.0))
    }

    /// Repeats a `1x1` node into an `r x c` matrix.
    pub fn broadcast(&self, s: Var, r: usize, c: usize) -> Var {
        self.unary(s, |x| M::from_element(r, c, x[(0, 0)]), Op::Broadcast(s.0))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&self, a: Var) -> Var {
        self.unary(a, |x| x.transpose(), Op::Transpose(a.0))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(f64::exp), Op::Exp(a.0))
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(f64::ln), Op::Log(a.0))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(f64::sqrt), Op::Sqrt(a.0))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x.map(|v| v * v), Op::Square(a.0))
    }

    /// `max(a, lo)`; no gradient flows through clamped entries.
    pub fn clamp_min(&self, a: Var, lo: f64) -> Var {
        self.unary(a, |x| x.map(|v| v.max(lo)), Op::ClampMin(a.0, lo))
    }

    pub fn sum(&self, a: Var) -> Var {
        self.unary(a, |x| M::from_element(1, 1, x.sum()), Op::Sum(a.0))
    }

    /// Column sums as a `1 x c` row.
    pub fn col_sums(&self, a: Var) -> Var {
        self.unary(a, |x| M::from_fn(1, x.ncols(), |_, j| x.column(j).sum()), Op::ColSums(a.0))
    }

    /// Row sums as an `r x 1` column.
    pub fn row_sums(&self, a: Var) -> Var {
        self.unary(a, |x| M::from_fn(x.nrows(), 1, |i, _| x.row(i).sum()), Op::RowSums(a.0))
    }

    /// Lower Cholesky factor of a symmetric matrix, trying the jitter ladder.
    pub fn cholesky(&self, a: Var) -> Var {
        let res = cholesky_unchecked(&self.value(a), &self.ladder);
        let value = match res {
            Ok(c) => {
                if c.jitter > self.max_jitter.get() {
                    self.max_jitter.set(c.jitter);
                }
                c.lower
            }
            Err(e) => {
                let (r, c) = self.shape(a);
                self.failure.borrow_mut().get_or_insert(e);
                M::from_element(r, c, f64::NAN)
            }
        };
        self.push(value, Op::Chol(a.0))
    }

    /// `L⁻¹ B`.
    pub fn solve_lower(&self, l: Var, b: Var) -> Var {
        self.binary(l, b, solve_lower, Op::SolveLower(l.0, b.0))
    }

    /// `L⁻ᵀ B`.
    pub fn solve_lower_t(&self, l: Var, b: Var) -> Var {
        self.binary(l, b, solve_lower_t, Op::SolveLowerT(l.0, b.0))
    }

    /// Diagonal as an `n x 1` column.
    pub fn diag(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| {
                let n = x.nrows().min(x.ncols());
                M::from_fn(n, 1, |i, _| x[(i, i)])
            },
            Op::Diag(a.0),
        )
    }

    /// Columns `start..start + len`.
    pub fn columns(&self, a: Var, start: usize, len: usize) -> Var {
        self.unary(a, |x| x.columns(start, len).into_owned(), Op::Columns(a.0, start))
    }

    pub fn column(&self, a: Var, j: usize) -> Var {
        self.columns(a, j, 1)
    }

    /// Horizontal concatenation.
    pub fn hcat(&self, parts: &[Var]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].0].value.nrows();
            let cols: usize = parts.iter().map(|p| nodes[p.0].value.ncols()).sum();
            let mut out = M::zeros(rows, cols);
            let mut off = 0;
            for p in parts {
                let v = &nodes[p.0].value;
                assert_eq!(v.nrows(), rows, "hcat row mismatch");
                out.columns_mut(off, v.ncols()).copy_from(v);
                off += v.ncols();
            }
            out
        };
        self.push(value, Op::HCat(parts.iter().map(|p| p.0).collect()))
    }

    /// Squared-exponential ARD cross-covariance between the rows of `a` and
    /// `b`, with `log_ls` a `1 x d` row of log-lengthscales and `log_var` the
    /// `1x1` log signal variance.
    pub fn se_cov(&self, a: Var, b: Var, log_ls: Var, log_var: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            se_forward(
                &nodes[a.0].value,
                &nodes[b.0].value,
                &nodes[log_ls.0].value,
                nodes[log_var.0].value[(0, 0)],
            )
        };
        self.push(
            value,
            Op::SeCov {
                a: a.0,
                b: b.0,
                log_ls: log_ls.0,
                log_var: log_var.0,
            },
        )
    }

    /// Reverse sweep from a `1x1` output.
    pub fn gradients(&self, out: Var) -> Grads {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[out.0].value.shape(), (1, 1), "gradient of non-scalar output");
        let mut adj: Vec<Option<M>> = vec![None; nodes.len()];
        adj[out.0] = Some(M::from_element(1, 1, 1.0));

        fn acc(adj: &mut [Option<M>], i: usize, g: M) {
            match &mut adj[i] {
                Some(a) => *a += g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            let val = |k: usize| &nodes[k].value;
            match &node.op {
                Op::Leaf => {
                    adj[i] = Some(g);
                    continue;
                }
                &Op::Add(a, b) => {
                    acc(&mut adj, a, g.clone());
                    acc(&mut adj, b, g);
                }
                &Op::Sub(a, b) => {
                    acc(&mut adj, a, g.clone());
                    acc(&mut adj, b, -g);
                }
                &Op::Mul(a, b) => {
                    acc(&mut adj, a, g.component_mul(val(b)));
                    acc(&mut adj, b, g.component_mul(val(a)));
                }
                &Op::Div(a, b) => {
                    let gb = -g.component_mul(&node.value).component_div(val(b));
                    acc(&mut adj, a, g.component_div(val(b)));
                    acc(&mut adj, b, gb);
                }
                &Op::Scale(a, c) => acc(&mut adj, a, g * c),
                &Op::AddConst(a) => acc(&mut adj, a, g),
                &Op::MulScalar(a, s) => {
                    let gs = g.dot(val(a));
                    acc(&mut adj, a, &g * val(s)[(0, 0)]);
                    acc(&mut adj, s, M::from_element(1, 1, gs));
                }
                &Op::Broadcast(s) => acc(&mut adj, s, M::from_element(1, 1, g.sum())),
                &Op::MatMul(a, b) => {
                    acc(&mut adj, a, &g * val(b).transpose());
                    acc(&mut adj, b, val(a).transpose() * &g);
                }
                &Op::Transpose(a) => acc(&mut adj, a, g.transpose()),
                &Op::Exp(a) => acc(&mut adj, a, g.component_mul(&node.value)),
                &Op::Log(a) => acc(&mut adj, a, g.component_div(val(a))),
                &Op::Sqrt(a) => {
                    let d = node.value.map(|v| 0.5 / v);
                    acc(&mut adj, a, g.component_mul(&d));
                }
                &Op::Square(a) => acc(&mut adj, a, g.component_mul(val(a)) * 2.0),
                &Op::ClampMin(a, lo) => {
                    let mask = val(a).map(|v| if v > lo { 1.0 } else { 0.0 });
                    acc(&mut adj, a, g.component_mul(&mask));
                }
                &Op::Sum(a) => {
                    let (r, c) = val(a).shape();
                    acc(&mut adj, a, M::from_element(r, c, g[(0, 0)]));
                }
                &Op::ColSums(a) => {
                    let r = val(a).nrows();
                    acc(&mut adj, a, M::from_fn(r, g.ncols(), |_, j| g[(0, j)]));
                }
                &Op::RowSums(a) => {
                    let c = val(a).ncols();
                    acc(&mut adj, a, M::from_fn(g.nrows(), c, |i, _| g[(i, 0)]));
                }
                &Op::Chol(a) => {
                    let l = &node.value;
                    let lbar = lower_part(&g);
                    let mut p = l.transpose() * lbar;
                    for j in 0..p.ncols() {
                        for r in 0..j {
                            p[(r, j)] = 0.0;
                        }
                        p[(j, j)] *= 0.5;
                    }
                    let psym = (&p + p.transpose()) * 0.5;
                    let t = solve_lower_t(l, &psym);
                    let abar = solve_lower_t(l, &t.transpose()).transpose();
                    acc(&mut adj, a, abar);
                }
                &Op::SolveLower(l, b) => {
                    let gb = solve_lower_t(val(l), &g);
                    let gl = -lower_part(&(&gb * node.value.transpose()));
                    acc(&mut adj, l, gl);
                    acc(&mut adj, b, gb);
                }
                &Op::SolveLowerT(l, b) => {
                    let gb = solve_lower(val(l), &g);
                    let gl = -lower_part(&(&node.value * gb.transpose()));
                    acc(&mut adj, l, gl);
                    acc(&mut adj, b, gb);
                }
                &Op::Diag(a) => {
                    let (r, c) = val(a).shape();
                    let mut m = M::zeros(r, c);
                    for k in 0..g.nrows() {
                        m[(k, k)] = g[(k, 0)];
                    }
                    acc(&mut adj, a, m);
                }
                &Op::Columns(a, start) => {
                    let (r, c) = val(a).shape();
                    let mut m = M::zeros(r, c);
                    m.columns_mut(start, g.ncols()).copy_from(&g);
                    acc(&mut adj, a, m);
                }
                Op::HCat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = val(p).ncols();
                        acc(&mut adj, p, g.columns(off, w).into_owned());
                        off += w;
                    }
                }
                &Op::SeCov { a, b, log_ls, log_var } => {
                    let (ga, gb, gls, gv) =
                        se_backward(&g, &node.value, val(a), val(b), val(log_ls));
                    acc(&mut adj, a, ga);
                    acc(&mut adj, b, gb);
                    acc(&mut adj, log_ls, gls);
                    acc(&mut adj, log_var, M::from_element(1, 1, gv));
                }
            }
        }
        Grads {
            adj,
            shapes: nodes.iter().map(|n| n.value.shape()).collect(),
        }
    }
}

pub(crate) fn se_forward(a: &M, b: &M, log_ls: &M, log_var: f64) -> M {
    let d = a.ncols();
    assert_eq!(b.ncols(), d, "se_cov dimension mismatch");
    assert_eq!(log_ls.len(), d, "se_cov lengthscale count mismatch");
    let inv: Vec<f64> = log_ls.iter().map(|l| (-l).exp()).collect();
    let var = log_var.exp();
    let sa = M::from_fn(a.nrows(), d, |i, k| a[(i, k)] * inv[k]);
    let sb = M::from_fn(b.nrows(), d, |i, k| b[(i, k)] * inv[k]);
    M::from_fn(a.nrows(), b.nrows(), |i, j| {
        let mut s = 0.0;
        for k in 0..d {
            let t = sa[(i, k)] - sb[(j, k)];
            s += t * t;
        }
        var * (-0.5 * s).exp()
    })
}

fn se_backward(g: &M, k: &M, a: &M, b: &M, log_ls: &M) -> (M, M, M, f64) {
    let d = a.ncols();
    let inv2: Vec<f64> = log_ls.iter().map(|l| (-2.0 * l).exp()).collect();
    let w = g.component_mul(k);
    let gv = w.sum();
    let mut ga = M::zeros(a.nrows(), d);
    let mut gb = M::zeros(b.nrows(), d);
    let mut gls = M::zeros(1, d);
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            let wij = w[(i, j)];
            if wij == 0.0 {
                continue;
            }
            for q in 0..d {
                let diff = a[(i, q)] - b[(j, q)];
                let t = wij * diff * inv2[q];
                ga[(i, q)] -= t;
                gb[(j, q)] += t;
                gls[(0, q)] += t * diff;
            }
        }
    }
    (ga, gb, gls, gv)
}
