//! Real-valued conic program IR with linear, second-order-cone and
//! exponential-cone blocks, and the solver backend behind it.
//!
//! Programs are stated as maximization problems. Every constraint is built
//! from [`AffineExpr`]s over the program variables, so a program is fully
//! self-describing and can be dumped with its `Display` impl (one block per
//! line) for cross-checking against another solver.

use std::fmt;
use std::ops::Range;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// `sum coef_i x_i + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(i: usize) -> Self {
        Self::term(i, 1.0)
    }

    pub fn term(i: usize, coef: f64) -> Self {
        Self { terms: vec![(i, coef)], constant: 0.0 }
    }

    /// Builder form of [`AffineExpr::push`].
    pub fn plus(mut self, i: usize, coef: f64) -> Self {
        self.push(i, coef);
        self
    }

    pub fn plus_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn push(&mut self, i: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((i, coef));
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(i, c)| (i, c * factor)).collect(),
            constant: self.constant * factor,
        }
    }

    pub fn add(&self, other: &AffineExpr) -> Self {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Self { terms, constant: self.constant + other.constant }
    }

    pub fn sub(&self, other: &AffineExpr) -> Self {
        self.add(&other.scaled(-1.0))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|&(i, _)| i).max()
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for &(i, c) in &self.terms {
            if first {
                write!(f, "{c:e}*x{i}")?;
            } else {
                write!(f, " {} {:e}*x{i}", if c < 0.0 { '-' } else { '+' }, c.abs())?;
            }
            first = false;
        }
        if first {
            write!(f, "{:e}", self.constant)
        } else if self.constant != 0.0 {
            write!(f, " {} {:e}", if self.constant < 0.0 { '-' } else { '+' }, self.constant.abs())
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Linear,
    Soc,
    Exp,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    /// `expr <= rhs` or `expr == rhs`.
    Linear { expr: AffineExpr, sense: Sense, rhs: f64 },
    /// `||rows||_2 <= bound`.
    Soc { rows: Vec<AffineExpr>, bound: AffineExpr },
    /// `(p, q, r)` in the closure of `{q > 0, q exp(p/q) <= r}`.
    Exp { p: AffineExpr, q: AffineExpr, r: AffineExpr },
}

impl Block {
    pub fn kind(&self) -> BlockKind {
        match self {
            Block::Linear { .. } => BlockKind::Linear,
            Block::Soc { .. } => BlockKind::Soc,
            Block::Exp { .. } => BlockKind::Exp,
        }
    }

    /// Amount by which `x` violates this block (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        match self {
            Block::Linear { expr, sense: Sense::Le, rhs } => (expr.eval(x) - rhs).max(0.0),
            Block::Linear { expr, sense: Sense::Eq, rhs } => (expr.eval(x) - rhs).abs(),
            Block::Soc { rows, bound } => {
                let norm = rows.iter().map(|r| r.eval(x).powi(2)).sum::<f64>().sqrt();
                (norm - bound.eval(x)).max(0.0)
            }
            Block::Exp { p, q, r } => exp_cone_violation(p.eval(x), q.eval(x), r.eval(x)),
        }
    }
}

fn exp_cone_violation(p: f64, q: f64, r: f64) -> f64 {
    if q > 0.0 {
        let lhs = q * (p / q).exp();
        (lhs - r).max(0.0)
    } else {
        // closure: q = 0, p <= 0, r >= 0
        (-q).max(0.0) + p.max(0.0) + (-r).max(0.0)
    }
}

/// Identifier of a constraint block inside its program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockId(pub usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    names: Vec<String>,
    objective: Vec<f64>,
    objective_constant: f64,
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
    blocks: Vec<Block>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn count(&self, kind: BlockKind) -> usize {
        self.blocks.iter().filter(|b| b.kind() == kind).count()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn add_variable(&mut self, name: impl Into<String>) -> usize {
        self.names.push(name.into());
        self.objective.push(0.0);
        self.lower.push(None);
        self.upper.push(None);
        self.names.len() - 1
    }

    pub fn add_variables(&mut self, prefix: &str, n: usize) -> Range<usize> {
        let start = self.num_vars();
        for i in 0..n {
            self.add_variable(format!("{prefix}[{i}]"));
        }
        start..start + n
    }

    fn check_var(&self, i: usize) -> Result<()> {
        if i < self.num_vars() {
            Ok(())
        } else {
            Err(Error::Program(format!("variable index {i} out of range (n = {})", self.num_vars())))
        }
    }

    fn check_expr(&self, e: &AffineExpr) -> Result<()> {
        match e.max_index() {
            Some(i) => self.check_var(i),
            None => Ok(()),
        }
    }

    pub fn set_bounds(&mut self, i: usize, lower: Option<f64>, upper: Option<f64>) -> Result<()> {
        self.check_var(i)?;
        self.lower[i] = lower;
        self.upper[i] = upper;
        Ok(())
    }

    pub fn bounds(&self, i: usize) -> (Option<f64>, Option<f64>) {
        (self.lower[i], self.upper[i])
    }

    /// Coefficient of `x_i` in the maximized objective.
    pub fn set_objective(&mut self, i: usize, coef: f64) -> Result<()> {
        self.check_var(i)?;
        self.objective[i] = coef;
        Ok(())
    }

    pub fn objective_coefficients(&self) -> &[f64] {
        &self.objective
    }

    pub fn set_objective_constant(&mut self, c: f64) {
        self.objective_constant = c;
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + self.objective_constant
    }

    fn push(&mut self, block: Block) -> BlockId {
        self.blocks.push(block);
        BlockId(self.blocks.len() - 1)
    }

    pub fn add_linear(&mut self, expr: AffineExpr, sense: Sense, rhs: f64) -> Result<BlockId> {
        self.check_expr(&expr)?;
        Ok(self.push(Block::Linear { expr, sense, rhs }))
    }

    pub fn add_soc(&mut self, rows: Vec<AffineExpr>, bound: AffineExpr) -> Result<BlockId> {
        for r in &rows {
            self.check_expr(r)?;
        }
        self.check_expr(&bound)?;
        Ok(self.push(Block::Soc { rows, bound }))
    }

    /// `||rows||^2 <= a * b` with `a, b >= 0`, stored as the SOC
    /// `||(2 rows, a - b)|| <= a + b`.
    pub fn add_rotated_soc(&mut self, rows: Vec<AffineExpr>, a: AffineExpr, b: AffineExpr) -> Result<BlockId> {
        let mut soc_rows: Vec<AffineExpr> = rows.iter().map(|r| r.scaled(2.0)).collect();
        soc_rows.push(a.sub(&b));
        self.add_soc(soc_rows, a.add(&b))
    }

    /// `||rows||^2 <= a`, stored as `||(2 rows, a - 1)|| <= a + 1`.
    pub fn add_quadratic_le(&mut self, rows: Vec<AffineExpr>, a: AffineExpr) -> Result<BlockId> {
        self.add_rotated_soc(rows, a, AffineExpr::constant(1.0))
    }

    pub fn add_exp(&mut self, p: AffineExpr, q: AffineExpr, r: AffineExpr) -> Result<BlockId> {
        self.check_expr(&p)?;
        self.check_expr(&q)?;
        self.check_expr(&r)?;
        Ok(self.push(Block::Exp { p, q, r }))
    }

    /// Largest violation of any block or variable bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = (0..self.num_vars()).map(|i| {
            let lo = self.lower[i].map_or(0.0, |l| (l - x[i]).max(0.0));
            let hi = self.upper[i].map_or(0.0, |h| (x[i] - h).max(0.0));
            lo.max(hi)
        });
        self.blocks.iter().map(|b| b.violation(x)).chain(bounds).fold(0.0, f64::max)
    }

    pub fn solve(&self, tolerance: f64) -> ConicSolution {
        ClarabelBackend::default().solve(self, tolerance)
    }
}

impl fmt::Display for ConicProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "vars {}", self.num_vars())?;
        let obj = AffineExpr {
            terms: self.objective.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(i, c)| (i, *c)).collect(),
            constant: self.objective_constant,
        };
        writeln!(f, "maximize {obj}")?;
        for i in 0..self.num_vars() {
            if self.lower[i].is_some() || self.upper[i].is_some() {
                let lo = self.lower[i].map_or("-inf".to_string(), |v| format!("{v:e}"));
                let hi = self.upper[i].map_or("inf".to_string(), |v| format!("{v:e}"));
                writeln!(f, "bound x{i} {} [{lo}, {hi}]", self.names[i])?;
            }
        }
        for b in &self.blocks {
            match b {
                Block::Linear { expr, sense, rhs } => {
                    let op = if *sense == Sense::Le { "<=" } else { "==" };
                    writeln!(f, "lin {expr} {op} {rhs:e}")?
                }
                Block::Soc { rows, bound } => {
                    let rows: Vec<String> = rows.iter().map(|r| r.to_string()).collect();
                    writeln!(f, "soc ||[{}]|| <= {bound}", rows.join("; "))?
                }
                Block::Exp { p, q, r } => writeln!(f, "exp ({p}; {q}; {r})")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
    IterationLimit,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical-failure",
            SolveStatus::IterationLimit => "iteration-limit",
        }
    }
}

/// `x` and `objective` are present iff `status == Optimal`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub iterations: u32,
}

impl ConicSolution {
    fn failed(status: SolveStatus, iterations: u32) -> Self {
        Self { status, x: None, objective: None, iterations }
    }
}

/// A conic solver able to handle every block kind of [`ConicProgram`].
pub trait ConicBackend {
    fn solve(&self, program: &ConicProgram, tolerance: f64) -> ConicSolution;
}

/// Interior-point backend on top of the `clarabel` crate.
#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    pub max_iter: u32,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self { max_iter: 200 }
    }
}

struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    /// Append the slack row `s = e(x)`, i.e. `A row = -coef`, `b = constant`.
    fn slack(&mut self, e: &AffineExpr) {
        let r = self.b.len();
        for &(col, c) in &e.terms {
            self.i.push(r);
            self.j.push(col);
            self.v.push(-c);
        }
        self.b.push(e.constant);
    }
}

impl ConicBackend for ClarabelBackend {
    fn solve(&self, program: &ConicProgram, tolerance: f64) -> ConicSolution {
        let n = program.num_vars();
        let mut rows = Rows { i: vec![], j: vec![], v: vec![], b: vec![] };
        let mut cones = Vec::new();

        // zero cone: equalities and fixed variables
        let mut zero = 0;
        for blk in program.blocks() {
            if let Block::Linear { expr, sense: Sense::Eq, rhs } = blk {
                rows.slack(&AffineExpr::constant(*rhs).sub(expr));
                zero += 1;
            }
        }
        for i in 0..n {
            if let (Some(lo), Some(hi)) = program.bounds(i) {
                if lo == hi {
                    rows.slack(&AffineExpr::constant(lo).sub(&AffineExpr::var(i)));
                    zero += 1;
                }
            }
        }
        if zero > 0 {
            cones.push(SupportedConeT::ZeroConeT(zero));
        }

        let mut nonneg = 0;
        for blk in program.blocks() {
            if let Block::Linear { expr, sense: Sense::Le, rhs } = blk {
                rows.slack(&AffineExpr::constant(*rhs).sub(expr));
                nonneg += 1;
            }
        }
        for i in 0..n {
            let (lo, hi) = program.bounds(i);
            if lo.is_some() && lo == hi {
                continue;
            }
            if let Some(lo) = lo {
                rows.slack(&AffineExpr::var(i).plus_constant(-lo));
                nonneg += 1;
            }
            if let Some(hi) = hi {
                rows.slack(&AffineExpr::constant(hi).plus(i, -1.0));
                nonneg += 1;
            }
        }
        if nonneg > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(nonneg));
        }

        for blk in program.blocks() {
            match blk {
                Block::Soc { rows: r, bound } => {
                    rows.slack(bound);
                    for e in r {
                        rows.slack(e);
                    }
                    cones.push(SupportedConeT::SecondOrderConeT(r.len() + 1));
                }
                Block::Exp { p, q, r } => {
                    rows.slack(p);
                    rows.slack(q);
                    rows.slack(r);
                    cones.push(SupportedConeT::ExponentialConeT());
                }
                Block::Linear { .. } => {}
            }
        }

        let m = rows.b.len();
        let a = CscMatrix::new_from_triplets(m, n, rows.i, rows.j, rows.v);
        let p = CscMatrix::zeros((n, n));
        let q: Vec<f64> = program.objective_coefficients().iter().map(|c| -c).collect();

        let settings = match DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(self.max_iter)
            .tol_gap_abs(tolerance)
            .tol_gap_rel(tolerance)
            .tol_feas(tolerance)
            .presolve_enable(false)
            .build()
        {
            Ok(s) => s,
            Err(_) => return ConicSolution::failed(SolveStatus::NumericalFailure, 0),
        };
        let mut solver = match DefaultSolver::new(&p, &q, &a, &rows.b, &cones, settings) {
            Ok(s) => s,
            Err(_) => return ConicSolution::failed(SolveStatus::NumericalFailure, 0),
        };
        solver.solve();
        let sol = &solver.solution;
        let iterations = sol.iterations;
        let accept = |x: &[f64]| {
            let scale = 1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            program.max_violation(x) <= 10.0 * tolerance * scale
        };
        let status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved | SolverStatus::InsufficientProgress => {
                let gap = (sol.obj_val - sol.obj_val_dual).abs() / (1.0 + sol.obj_val.abs());
                if gap <= 100.0 * tolerance && accept(&sol.x) {
                    SolveStatus::Optimal
                } else {
                    SolveStatus::NumericalFailure
                }
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::IterationLimit,
            _ => SolveStatus::NumericalFailure,
        };
        if status != SolveStatus::Optimal || sol.x.iter().any(|v| !v.is_finite()) {
            let status = if status == SolveStatus::Optimal { SolveStatus::NumericalFailure } else { status };
            return ConicSolution::failed(status, iterations);
        }
        let x = sol.x.clone();
        ConicSolution {
            status,
            objective: Some(program.objective_value(&x)),
            x: Some(x),
            iterations,
        }
    }
}
