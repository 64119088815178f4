//! Dense convex QP solver:
//!
//! ```text
//! minimize    1/2 z' H z + g' z
//! subject to  A z  = b
//!             G z <= h
//! ```
//!
//! Primal-dual interior point with Mehrotra predictor-corrector steps. The
//! Newton system is reduced to the `(d + p)` quasi-definite KKT matrix,
//! factorized once per iteration with a small primal/dual regularization and
//! polished by iterative refinement against the unregularized matrix.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("inconsistent QP dimensions: {0}")]
    Dimension(String),
    #[error("hessian is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("malformed QP dump: {0}")]
    Dump(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    /// Optional per-variable labels used in dumps and diagnostics.
    pub variable_names: Vec<String>,
}

impl QpProblem {
    /// Unconstrained problem.
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let d = linear.len();
        QpProblem {
            hessian,
            linear,
            eq_matrix: DMatrix::zeros(0, d),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, d),
            ineq_rhs: DVector::zeros(0),
            variable_names: Vec::new(),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq_matrix = a;
        self.eq_rhs = b;
        self
    }

    pub fn with_inequalities(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.ineq_matrix = g;
        self.ineq_rhs = h;
        self
    }

    pub fn num_variables(&self) -> usize {
        self.linear.len()
    }

    pub fn num_equalities(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_inequalities(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let d = self.num_variables();
        let shape = |name: &str, m: &DMatrix<f64>, rows: usize| {
            if m.nrows() != rows || m.ncols() != d {
                Err(QpError::Dimension(format!(
                    "{name} is {}x{}, expected {rows}x{d}",
                    m.nrows(),
                    m.ncols()
                )))
            } else {
                Ok(())
            }
        };
        shape("H", &self.hessian, d)?;
        shape("A_eq", &self.eq_matrix, self.num_equalities())?;
        shape("A_in", &self.ineq_matrix, self.num_inequalities())?;
        if !self.variable_names.is_empty() && self.variable_names.len() != d {
            return Err(QpError::Dimension(format!(
                "{} variable names for {d} variables",
                self.variable_names.len()
            )));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|x| x.is_finite());
        let finite_v = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        if !finite(&self.hessian) {
            return Err(QpError::NonFinite("H"));
        }
        if !finite_v(&self.linear) {
            return Err(QpError::NonFinite("g"));
        }
        if !finite(&self.eq_matrix) || !finite_v(&self.eq_rhs) {
            return Err(QpError::NonFinite("equality constraints"));
        }
        if !finite(&self.ineq_matrix) || !finite_v(&self.ineq_rhs) {
            return Err(QpError::NonFinite("inequality constraints"));
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        let scale = self.hessian.amax().max(1.0);
        if asym > 1e-10 * scale {
            return Err(QpError::Asymmetric(asym));
        }
        Ok(())
    }

    /// Writes the problem in the plain-text dump format:
    ///
    /// ```text
    /// taskff-qp 1
    /// dims <d> <p> <m>
    /// names <name_1> ... <name_d>      (or "names -" when unnamed)
    /// H            followed by d rows of d numbers
    /// g            followed by one row of d numbers
    /// A            followed by p rows of d numbers
    /// b            followed by one row of p numbers
    /// G            followed by m rows of d numbers
    /// h            followed by one row of m numbers
    /// ```
    ///
    /// Numbers use the shortest representation that parses back exactly.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let row = |w: &mut W, values: &mut dyn Iterator<Item = f64>| -> std::io::Result<()> {
            let line: Vec<String> = values.map(|x| format!("{x:?}")).collect();
            writeln!(w, "{}", line.join(" "))
        };
        writeln!(w, "taskff-qp 1")?;
        writeln!(
            w,
            "dims {} {} {}",
            self.num_variables(),
            self.num_equalities(),
            self.num_inequalities()
        )?;
        if self.variable_names.is_empty() {
            writeln!(w, "names -")?;
        } else {
            writeln!(w, "names {}", self.variable_names.join(" "))?;
        }
        writeln!(w, "H")?;
        for r in self.hessian.row_iter() {
            row(&mut w, &mut r.iter().copied())?;
        }
        writeln!(w, "g")?;
        row(&mut w, &mut self.linear.iter().copied())?;
        writeln!(w, "A")?;
        for r in self.eq_matrix.row_iter() {
            row(&mut w, &mut r.iter().copied())?;
        }
        writeln!(w, "b")?;
        row(&mut w, &mut self.eq_rhs.iter().copied())?;
        writeln!(w, "G")?;
        for r in self.ineq_matrix.row_iter() {
            row(&mut w, &mut r.iter().copied())?;
        }
        writeln!(w, "h")?;
        row(&mut w, &mut self.ineq_rhs.iter().copied())?;
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self, QpError> {
        let mut reader = DumpReader {
            lines: r.lines(),
        };
        if reader.line()?.trim() != "taskff-qp 1" {
            return Err(dump_error("missing `taskff-qp 1` header"));
        }
        let dims_line = reader.tagged("dims")?;
        let dims: Vec<usize> = dims_line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| dump_error("bad dims")))
            .collect::<Result<_, _>>()?;
        let [d, p, m] = dims[..] else {
            return Err(dump_error("dims needs three values"));
        };
        let names: Vec<String> = reader
            .tagged("names")?
            .split_whitespace()
            .map(String::from)
            .collect();
        let names = if names == ["-"] { Vec::new() } else { names };
        reader.expect("H")?;
        let hessian = reader.matrix(d, d)?;
        reader.expect("g")?;
        let linear = DVector::from_vec(reader.numbers(d)?);
        reader.expect("A")?;
        let eq_matrix = reader.matrix(p, d)?;
        reader.expect("b")?;
        let eq_rhs = DVector::from_vec(reader.numbers(p)?);
        reader.expect("G")?;
        let ineq_matrix = reader.matrix(m, d)?;
        reader.expect("h")?;
        let ineq_rhs = DVector::from_vec(reader.numbers(m)?);
        let problem = QpProblem {
            hessian,
            linear,
            eq_matrix,
            eq_rhs,
            ineq_matrix,
            ineq_rhs,
            variable_names: names,
        };
        problem.validate()?;
        Ok(problem)
    }
}

fn dump_error(msg: &str) -> QpError {
    QpError::Dump(msg.to_string())
}

struct DumpReader<L> {
    lines: L,
}

impl<L: Iterator<Item = std::io::Result<String>>> DumpReader<L> {
    fn line(&mut self) -> Result<String, QpError> {
        self.lines
            .next()
            .ok_or_else(|| dump_error("unexpected end of dump"))?
            .map_err(|e| QpError::Dump(e.to_string()))
    }

    fn tagged(&mut self, tag: &str) -> Result<String, QpError> {
        let line = self.line()?;
        let rest = line
            .strip_prefix(tag)
            .ok_or_else(|| QpError::Dump(format!("expected `{tag}` line")))?;
        Ok(rest.trim().to_string())
    }

    fn expect(&mut self, tag: &str) -> Result<(), QpError> {
        if self.tagged(tag)?.is_empty() {
            Ok(())
        } else {
            Err(QpError::Dump(format!("unexpected content after `{tag}`")))
        }
    }

    fn numbers(&mut self, count: usize) -> Result<Vec<f64>, QpError> {
        let line = self.line()?;
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| QpError::Dump(format!("bad number `{t}`"))))
            .collect::<Result<_, _>>()?;
        if v.len() != count {
            return Err(QpError::Dump(format!(
                "expected {count} entries, found {}",
                v.len()
            )));
        }
        Ok(v)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>, QpError> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.numbers(cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    /// Relative constraint violation accepted when deciding that no
    /// further constraint must enter the active set.
    pub feasibility_tolerance: f64,
    /// Residual level required to report [`QpStatus::Optimal`].
    pub certify_tolerance: f64,
    /// Cap on active-set changes.
    pub max_iterations: usize,
    /// Added to the Hessian diagonal before factorization.
    pub regularization: f64,
    /// Iterative refinement sweeps of the final KKT solve against the
    /// unregularized Hessian.
    pub refinement_steps: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            feasibility_tolerance: 1e-12,
            certify_tolerance: 1e-6,
            max_iterations: 1000,
            regularization: 1e-9,
            refinement_steps: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::MaxIterations => "max_iterations",
            QpStatus::Infeasible => "infeasible",
        }
    }
}

/// Infinity norms of the KKT conditions at a candidate point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `H z + g + A' y + G' lambda`
    pub stationarity: f64,
    /// `A z - b`
    pub primal_equality: f64,
    /// positive part of `G z - h`
    pub primal_inequality: f64,
    /// `lambda_i (h - G z)_i` together with any negative multiplier.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_equality)
            .max(self.primal_inequality)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub eq_duals: DVector<f64>,
    pub ineq_duals: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
    /// For [`QpStatus::Infeasible`]: the smallest constraint violation found,
    /// attained at `z`.
    pub min_violation: Option<f64>,
}

pub fn kkt_residuals(
    problem: &QpProblem,
    z: &DVector<f64>,
    eq_duals: &DVector<f64>,
    ineq_duals: &DVector<f64>,
) -> KktResiduals {
    let stationarity = &problem.hessian * z
        + &problem.linear
        + problem.eq_matrix.tr_mul(eq_duals)
        + problem.ineq_matrix.tr_mul(ineq_duals);
    let eq = &problem.eq_matrix * z - &problem.eq_rhs;
    let slack = &problem.ineq_rhs - &problem.ineq_matrix * z;
    let primal_inequality = slack.iter().fold(0.0f64, |acc, s| acc.max(-s));
    let complementarity = slack
        .iter()
        .zip(ineq_duals.iter())
        .fold(0.0f64, |acc, (s, l)| acc.max((s * l).abs()).max(-l));
    KktResiduals {
        stationarity: norm_inf(&stationarity),
        primal_equality: norm_inf(&eq),
        primal_inequality,
        complementarity,
    }
}

fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Solves the QP. Only malformed problems produce `Err`; infeasibility and
/// iteration exhaustion are reported through [`QpSolution::status`].
pub fn solve(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let outcome = dual_active_set(problem, settings);
    if outcome.end == End::Infeasible {
        // Report the least-violating point; the phase-1 problem is always
        // feasible.
        let (z, violation) = min_violation_point(problem, settings);
        let eq_duals = DVector::zeros(problem.num_equalities());
        let ineq_duals = DVector::zeros(problem.num_inequalities());
        return Ok(QpSolution {
            objective: problem.objective(&z),
            residuals: kkt_residuals(problem, &z, &eq_duals, &ineq_duals),
            z,
            eq_duals,
            ineq_duals,
            status: QpStatus::Infeasible,
            iterations: outcome.iterations,
            min_violation: Some(violation),
        });
    }
    let mut solution = outcome.solution(problem);
    if outcome.end == End::Solved {
        if let Some(p) = polish(problem, &outcome.active, &solution, settings) {
            solution = p;
        }
        if solution.residuals.max() <= settings.certify_tolerance {
            solution.status = QpStatus::Optimal;
        }
    }
    Ok(solution)
}

fn min_violation_point(problem: &QpProblem, settings: &QpSettings) -> (DVector<f64>, f64) {
    let d = problem.num_variables();
    let m = problem.num_inequalities();
    let n = d + m;
    // Variables (z, t): 1/2 |A z - b|^2 + 1/2 |t|^2 + eps/2 |z|^2,
    // subject to G z - t <= h and t >= 0.
    let a = &problem.eq_matrix;
    let mut hessian = DMatrix::zeros(n, n);
    hessian.view_mut((0, 0), (d, d)).copy_from(&(a.tr_mul(a)));
    for i in 0..d {
        hessian[(i, i)] += 1e-8;
    }
    for i in d..n {
        hessian[(i, i)] = 1.0;
    }
    let mut linear = DVector::zeros(n);
    linear.rows_mut(0, d).copy_from(&(-a.tr_mul(&problem.eq_rhs)));
    let mut g = DMatrix::zeros(2 * m, n);
    g.view_mut((0, 0), (m, d)).copy_from(&problem.ineq_matrix);
    for i in 0..m {
        g[(i, d + i)] = -1.0;
        g[(m + i, d + i)] = -1.0;
    }
    let mut h = DVector::zeros(2 * m);
    h.rows_mut(0, m).copy_from(&problem.ineq_rhs);
    let phase1 = QpProblem::new(hessian, linear).with_inequalities(g, h);
    let z = dual_active_set(&phase1, settings).z.rows(0, d).into_owned();
    let eq_violation = norm_inf(&(a * &z - &problem.eq_rhs));
    let in_violation = (&problem.ineq_matrix * &z - &problem.ineq_rhs)
        .iter()
        .fold(0.0f64, |acc, v| acc.max(*v));
    (z, eq_violation.max(in_violation))
}

/// Re-solves the KKT system of the final active set against the exact
/// Hessian, removing the bias of the factorization ridge. Kept only when it
/// improves the residuals.
fn polish(
    problem: &QpProblem,
    active: &[Constraint],
    current: &QpSolution,
    settings: &QpSettings,
) -> Option<QpSolution> {
    let d = problem.num_variables();
    let n = d + active.len();
    let mut exact = DMatrix::zeros(n, n);
    exact.view_mut((0, 0), (d, d)).copy_from(&problem.hessian);
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, d).copy_from(&-&problem.linear);
    for (k, c) in active.iter().enumerate() {
        let (row, value) = match *c {
            Constraint::Equality(i) => (problem.eq_matrix.row(i), problem.eq_rhs[i]),
            Constraint::Inequality(i) => (problem.ineq_matrix.row(i), problem.ineq_rhs[i]),
        };
        for j in 0..d {
            exact[(d + k, j)] = row[j];
            exact[(j, d + k)] = row[j];
        }
        rhs[d + k] = value;
    }
    let mut regularized = exact.clone();
    for i in 0..d {
        regularized[(i, i)] += settings.regularization;
    }
    for i in d..n {
        regularized[(i, i)] -= settings.regularization;
    }
    let lu = regularized.lu();
    let mut x = lu.solve(&rhs)?;
    for _ in 0..settings.refinement_steps {
        let r = &rhs - &exact * &x;
        x += lu.solve(&r)?;
    }
    if !x.iter().all(|v| v.is_finite()) {
        return None;
    }
    let z = x.rows(0, d).into_owned();
    let mut y = DVector::zeros(problem.num_equalities());
    let mut lambda = DVector::zeros(problem.num_inequalities());
    for (k, c) in active.iter().enumerate() {
        match *c {
            Constraint::Equality(i) => y[i] = x[d + k],
            Constraint::Inequality(i) => lambda[i] = x[d + k],
        }
    }
    let residuals = kkt_residuals(problem, &z, &y, &lambda);
    (residuals.max() < current.residuals.max()).then(|| QpSolution {
        objective: problem.objective(&z),
        z,
        eq_duals: y,
        ineq_duals: lambda,
        status: current.status,
        iterations: current.iterations,
        residuals,
        min_violation: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Constraint {
    Equality(usize),
    Inequality(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum End {
    Solved,
    Exhausted,
    Infeasible,
}

struct Outcome {
    z: DVector<f64>,
    active: Vec<Constraint>,
    /// Multipliers of `active` for constraints written as `n' z >= c`.
    multipliers: Vec<f64>,
    iterations: usize,
    end: End,
}

impl Outcome {
    fn solution(&self, problem: &QpProblem) -> QpSolution {
        let mut y = DVector::zeros(problem.num_equalities());
        let mut lambda = DVector::zeros(problem.num_inequalities());
        for (c, u) in self.active.iter().zip(&self.multipliers) {
            match *c {
                // Enters with normal a: H z + g - u a = 0, so y = -u.
                Constraint::Equality(i) => y[i] = -u,
                // Enters with normal -g: lambda = u.
                Constraint::Inequality(i) => lambda[i] = *u,
            }
        }
        QpSolution {
            objective: problem.objective(&self.z),
            residuals: kkt_residuals(problem, &self.z, &y, &lambda),
            z: self.z.clone(),
            eq_duals: y,
            ineq_duals: lambda,
            status: QpStatus::MaxIterations,
            iterations: self.iterations,
            min_violation: None,
        }
    }
}

/// Factorization state of the dual active-set method: `J = L^-T Q` with
/// `H = L L'`, and `R` the upper triangle of the active normals expressed
/// in the `J` basis.
struct Basis {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    /// Number of active constraints (columns of `R` in use).
    q: usize,
    r_norm: f64,
}

impl Basis {
    /// `J' n`
    fn project(&self, normal: &DVector<f64>) -> DVector<f64> {
        self.j.tr_mul(normal)
    }

    /// Whether `n` has a component outside the span of the active normals.
    fn is_free(&self, d: &DVector<f64>) -> bool {
        let n = d.len();
        d.rows(self.q, n - self.q).norm() > 1e-12 * d.norm()
    }

    /// Primal step direction `J2 d2`.
    fn primal_direction(&self, d: &DVector<f64>) -> DVector<f64> {
        let n = d.len();
        self.j.columns(self.q, n - self.q) * d.rows(self.q, n - self.q)
    }

    /// Dual step direction `R^-1 d1`.
    fn dual_direction(&self, d: &DVector<f64>) -> DVector<f64> {
        let mut r = DVector::zeros(self.q);
        for i in (0..self.q).rev() {
            let mut sum = d[i];
            for k in i + 1..self.q {
                sum -= self.r[(i, k)] * r[k];
            }
            r[i] = sum / self.r[(i, i)];
        }
        r
    }

    /// Appends a constraint with projected normal `d`. Returns `false` and
    /// leaves the active count unchanged when the normal is dependent.
    fn add(&mut self, mut d: DVector<f64>) -> bool {
        let n = d.len();
        for j in (self.q + 1..n).rev() {
            let (mut cc, mut ss) = (d[j - 1], d[j]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[j] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[j - 1] = -h;
            } else {
                d[j - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, j - 1)];
                let t2 = self.j[(k, j)];
                self.j[(k, j - 1)] = t1 * cc + t2 * ss;
                self.j[(k, j)] = xny * (t1 + self.j[(k, j - 1)]) - t2;
            }
        }
        let pivot = d[self.q].abs();
        if pivot <= f64::EPSILON * self.r_norm {
            return false;
        }
        for i in 0..=self.q {
            self.r[(i, self.q)] = d[i];
        }
        self.q += 1;
        self.r_norm = self.r_norm.max(pivot);
        true
    }

    /// Drops the active constraint at position `pos` and retriangularizes.
    fn remove(&mut self, pos: usize) {
        let n = self.j.nrows();
        for col in pos..self.q - 1 {
            for row in 0..n {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..n {
            self.r[(row, self.q - 1)] = 0.0;
        }
        self.q -= 1;
        for j in pos..self.q {
            let (mut cc, mut ss) = (self.r[(j, j)], self.r[(j + 1, j)]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(j + 1, j)] = 0.0;
            if cc < 0.0 {
                self.r[(j, j)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(j, j)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in j + 1..self.q {
                let t1 = self.r[(j, k)];
                let t2 = self.r[(j + 1, k)];
                self.r[(j, k)] = t1 * cc + t2 * ss;
                self.r[(j + 1, k)] = xny * (t1 + self.r[(j, k)]) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, j)];
                let t2 = self.j[(k, j + 1)];
                self.j[(k, j)] = t1 * cc + t2 * ss;
                self.j[(k, j + 1)] = xny * (self.j[(k, j)] + t1) - t2;
            }
        }
    }
}

/// Goldfarb-Idnani dual active-set method on `H + ridge I`.
///
/// Every constraint is read as `n' z >= c`: equalities `a' z = b` as
/// `(a, b)`, held from the start and never dropped, inequalities
/// `g' z <= h` as `(-g, -h)`. Starting from the unconstrained minimizer the
/// most violated inequality is added at each round; dual feasibility is
/// kept throughout, so the first primal feasible point is optimal.
fn dual_active_set(problem: &QpProblem, settings: &QpSettings) -> Outcome {
    dual_active_set_excluding(problem, settings, &vec![false; problem.num_inequalities()], 0)
}

fn dual_active_set_excluding(
    problem: &QpProblem,
    settings: &QpSettings,
    skip: &[bool],
    spent: usize,
) -> Outcome {
    let d = problem.num_variables();
    let m = problem.num_inequalities();
    let mut hessian = problem.hessian.clone();
    let mut ridge = settings.regularization;
    let chol = loop {
        for i in 0..d {
            hessian[(i, i)] = problem.hessian[(i, i)] + ridge;
        }
        match hessian.clone().cholesky() {
            Some(c) => break c,
            None => {
                // Hessians that are PSD only up to rounding at a scale the
                // fixed ridge cannot cover.
                ridge = (ridge * 10.0).max(1e-12);
                log::debug!("qp: raising Hessian ridge to {ridge:e}");
            }
        }
    };
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .expect("Cholesky factor is nonsingular");
    let mut basis = Basis {
        j: l_inv.transpose(),
        r: DMatrix::zeros(d, d),
        q: 0,
        r_norm: 1.0,
    };
    let mut out = Outcome {
        z: -chol.solve(&problem.linear),
        active: Vec::new(),
        multipliers: Vec::new(),
        iterations: spent,
        end: End::Solved,
    };
    let slack = |i: usize, z: &DVector<f64>| {
        problem.ineq_rhs[i] - problem.ineq_matrix.row(i).transpose().dot(z)
    };
    let tolerance = |scale: f64, z: &DVector<f64>, normal: &DVector<f64>| {
        settings.feasibility_tolerance * (1.0 + scale.abs() + normal.amax() * norm_inf(z))
    };

    for i in 0..problem.num_equalities() {
        let normal = problem.eq_matrix.row(i).transpose();
        let violation = problem.eq_rhs[i] - normal.dot(&out.z);
        let dvec = basis.project(&normal);
        if !basis.is_free(&dvec) {
            // Dependent row: redundant when consistent, otherwise infeasible.
            if violation.abs() <= 1e3 * tolerance(problem.eq_rhs[i], &out.z, &normal) {
                continue;
            }
            out.end = End::Infeasible;
            return out;
        }
        let step_dir = basis.primal_direction(&dvec);
        let r = basis.dual_direction(&dvec);
        let t = violation / step_dir.dot(&normal);
        if !basis.add(dvec) {
            continue;
        }
        out.z += &step_dir * t;
        for (k, uk) in out.multipliers.iter_mut().enumerate() {
            *uk -= t * r[k];
        }
        out.multipliers.push(t);
        out.active.push(Constraint::Equality(i));
    }
    let num_eq = out.active.len();

    loop {
        out.iterations += 1;
        if out.iterations > settings.max_iterations {
            out.end = End::Exhausted;
            return out;
        }
        let mut pick: Option<(usize, f64)> = None;
        for (i, &skipped) in skip.iter().enumerate().take(m) {
            if skipped || out.active.contains(&Constraint::Inequality(i)) {
                continue;
            }
            let s = slack(i, &out.z);
            let normal = problem.ineq_matrix.row(i).transpose();
            if s < -tolerance(problem.ineq_rhs[i], &out.z, &normal)
                && pick.is_none_or(|(_, best)| s < best)
            {
                pick = Some((i, s));
            }
        }
        let Some((p, _)) = pick else {
            out.end = End::Solved;
            return out;
        };
        let normal = -problem.ineq_matrix.row(p).transpose();
        let mut u_plus = 0.0;
        loop {
            let dvec = basis.project(&normal);
            let step_dir = basis.primal_direction(&dvec);
            let r = basis.dual_direction(&dvec);
            // Partial step: the first active inequality whose multiplier
            // reaches zero leaves the set.
            let mut t1 = f64::INFINITY;
            let mut leaving = None;
            for k in num_eq..out.active.len() {
                if r[k] > 0.0 && out.multipliers[k] / r[k] < t1 {
                    t1 = out.multipliers[k] / r[k];
                    leaving = Some(k);
                }
            }
            // Full step: constraint p becomes active.
            let t2 = if basis.is_free(&dvec) {
                (-slack(p, &out.z)).max(0.0) / step_dir.dot(&normal)
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                out.end = End::Infeasible;
                return out;
            }
            for (k, uk) in out.multipliers.iter_mut().enumerate() {
                *uk -= t * r[k];
            }
            u_plus += t;
            if t2.is_finite() {
                out.z += &step_dir * t;
            }
            if t2 <= t1 {
                if !basis.add(dvec) {
                    // Numerically dependent despite the free-direction test:
                    // restart without this constraint and check it afterwards.
                    let mut skip = skip.to_vec();
                    skip[p] = true;
                    let mut again = dual_active_set_excluding(problem, settings, &skip, out.iterations);
                    if again.end == End::Solved
                        && slack(p, &again.z) < -1e3 * tolerance(problem.ineq_rhs[p], &again.z, &normal)
                    {
                        again.end = End::Exhausted;
                    }
                    return again;
                }
                out.active.push(Constraint::Inequality(p));
                out.multipliers.push(u_plus);
                break;
            }
            let k = leaving.expect("finite partial step has a leaving constraint");
            out.active.remove(k);
            out.multipliers.remove(k);
            basis.remove(k);
            out.iterations += 1;
            if out.iterations > settings.max_iterations {
                out.end = End::Exhausted;
                return out;
            }
        }
    }
}
