//! Linear inequality systems `l <= Lambda xi <= u` on knot values.
//!
//! Because the emulator is piecewise multilinear, bounds, monotonicity and
//! (in 1D) convexity of the whole function reduce to finitely many linear
//! inequalities on the knot values. This module builds those systems,
//! stacks them, and checks candidate knot vectors against them.

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{KnotGrid, SparseMatrix, SparseRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Nondecreasing,
    Nonincreasing,
}

/// Where a constraint row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RowTag {
    Bound,
    Monotone { dim: usize, direction: Direction },
    Convex { dim: usize },
    Custom,
}

/// How [`LinearConstraintSystem::compose`] treats redundant bound rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComposeForm {
    /// Keep every row of every system.
    #[default]
    Stacked,
    /// Drop the bound sides implied by monotonicity: a lower bound is kept
    /// only at knots with no monotone predecessor and an upper bound only at
    /// knots with no monotone successor. In 1D with bounds and a
    /// nondecreasing constraint this yields `q = m + 1` rows.
    Minimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraintSystem {
    pub lambda: SparseMatrix,
    #[serde(with = "extended_reals")]
    pub lower: Vec<f64>,
    #[serde(with = "extended_reals")]
    pub upper: Vec<f64>,
    pub tags: Vec<RowTag>,
}

/// Bounds as JSON numbers, with `"inf"` and `"-inf"` for the infinities.
mod extended_reals {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Value {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| match *x {
                f64::INFINITY => Value::Text("inf".into()),
                f64::NEG_INFINITY => Value::Text("-inf".into()),
                x => Value::Number(x),
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Value>::deserialize(d)?
            .into_iter()
            .map(|v| match v {
                Value::Number(x) if x.is_finite() => Ok(x),
                Value::Text(t) if t == "inf" => Ok(f64::INFINITY),
                Value::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(D::Error::custom("bound must be a finite number, \"inf\" or \"-inf\"")),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub row: usize,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn rows(&self) -> Vec<usize> {
        self.violations.iter().map(|v| v.row).collect()
    }
}

impl LinearConstraintSystem {
    pub fn new(
        lambda: SparseMatrix,
        lower: Vec<f64>,
        upper: Vec<f64>,
        tags: Vec<RowTag>,
    ) -> Result<Self> {
        let q = lambda.nrows();
        if lower.len() != q || upper.len() != q || tags.len() != q {
            return Err(Error::Dimension(format!(
                "constraint system with {q} rows has {} lower, {} upper bounds and {} tags",
                lower.len(),
                upper.len(),
                tags.len()
            )));
        }
        for (k, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::InvalidArgument(format!(
                    "row {k}: lower bound {l} exceeds upper bound {u}"
                )));
            }
            if l.is_infinite() && u.is_infinite() {
                return Err(Error::InvalidArgument(format!(
                    "row {k}: at least one bound must be finite"
                )));
            }
            if *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!(
                    "row {k}: bounds [{l}, {u}] are empty"
                )));
            }
        }
        for row in &lambda.rows {
            if let Some((j, _)) = row.entries.iter().find(|(j, _)| *j >= lambda.ncols) {
                return Err(Error::Dimension(format!(
                    "constraint column {j} outside {} knots",
                    lambda.ncols
                )));
            }
        }
        Ok(Self {
            lambda,
            lower,
            upper,
            tags,
        })
    }

    /// Custom system from a dense coefficient matrix.
    pub fn from_dense(lambda: &DMatrix<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let rows = (0..lambda.nrows())
            .map(|i| SparseRow {
                entries: (0..lambda.ncols())
                    .filter(|j| lambda[(i, *j)] != 0.0)
                    .map(|j| (j, lambda[(i, j)]))
                    .collect(),
            })
            .collect();
        let q = lambda.nrows();
        Self::new(
            SparseMatrix {
                ncols: lambda.ncols(),
                rows,
            },
            lower,
            upper,
            vec![RowTag::Custom; q],
        )
    }

    /// `l <= xi_j <= u` for every knot. Either bound may be infinite.
    pub fn bounds(grid: &KnotGrid, lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(Error::InvalidArgument(format!(
                "bounds need l < u, got [{lower}, {upper}]"
            )));
        }
        let m = grid.total_knots();
        let rows = (0..m)
            .map(|j| SparseRow {
                entries: vec![(j, 1.0)],
            })
            .collect();
        Self::new(
            SparseMatrix { ncols: m, rows },
            vec![lower; m],
            vec![upper; m],
            vec![RowTag::Bound; m],
        )
    }

    /// One difference row per pair of knots adjacent along `dim`.
    pub fn monotone(grid: &KnotGrid, dim: usize, direction: Direction) -> Result<Self> {
        check_dim(grid, dim)?;
        let sign = match direction {
            Direction::Nondecreasing => 1.0,
            Direction::Nonincreasing => -1.0,
        };
        let stride = grid.stride(dim);
        let m = grid.total_knots();
        let mut rows = Vec::new();
        for f in 0..m {
            let j = grid.multi_index(f)[dim];
            if j + 1 < grid.dims()[dim] {
                rows.push(SparseRow {
                    entries: vec![(f, -sign), (f + stride, sign)],
                });
            }
        }
        let q = rows.len();
        Self::new(
            SparseMatrix { ncols: m, rows },
            vec![0.0; q],
            vec![f64::INFINITY; q],
            vec![RowTag::Monotone { dim, direction }; q],
        )
    }

    /// Nonnegative second differences along `dim` (equispaced knots).
    pub fn convex(grid: &KnotGrid, dim: usize) -> Result<Self> {
        check_dim(grid, dim)?;
        if grid.dims()[dim] < 3 {
            return Err(Error::InvalidArgument(format!(
                "convexity along dimension {} needs at least 3 knots",
                dim + 1
            )));
        }
        let stride = grid.stride(dim);
        let m = grid.total_knots();
        let mut rows = Vec::new();
        for f in 0..m {
            let j = grid.multi_index(f)[dim];
            if j >= 1 && j + 1 < grid.dims()[dim] {
                rows.push(SparseRow {
                    entries: vec![(f - stride, 1.0), (f, -2.0), (f + stride, 1.0)],
                });
            }
        }
        let q = rows.len();
        Self::new(
            SparseMatrix { ncols: m, rows },
            vec![0.0; q],
            vec![f64::INFINITY; q],
            vec![RowTag::Convex { dim }; q],
        )
    }

    pub fn nrows(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.lambda.ncols
    }

    pub fn dense_lambda(&self) -> DMatrix<f64> {
        self.lambda.to_dense()
    }

    /// Row-stacks systems over the same knots. Rows with identical
    /// coefficients are merged into one row carrying the intersection of
    /// their bounds.
    pub fn compose(systems: &[LinearConstraintSystem], form: ComposeForm) -> Result<Self> {
        let first = systems.first().ok_or_else(|| {
            Error::InvalidArgument("compose needs at least one constraint system".into())
        })?;
        let m = first.ncols();
        if let Some(s) = systems.iter().find(|s| s.ncols() != m) {
            return Err(Error::Dimension(format!(
                "cannot compose systems over {m} and {} knots",
                s.ncols()
            )));
        }

        let mut rows: Vec<SparseRow> = Vec::new();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut tags = Vec::new();
        let mut seen: HashMap<Vec<(usize, u64)>, usize> = HashMap::new();
        for sys in systems {
            for k in 0..sys.nrows() {
                let row = &sys.lambda.rows[k];
                let key: Vec<(usize, u64)> = row
                    .entries
                    .iter()
                    .map(|(j, a)| (*j, (a + 0.0).to_bits()))
                    .collect();
                if let Some(&idx) = seen.get(&key) {
                    lower[idx] = f64::max(lower[idx], sys.lower[k]);
                    upper[idx] = f64::min(upper[idx], sys.upper[k]);
                    if lower[idx] > upper[idx] {
                        return Err(Error::Infeasible(format!(
                            "merged row {idx} has empty bounds [{}, {}]",
                            lower[idx], upper[idx]
                        )));
                    }
                } else {
                    seen.insert(key, rows.len());
                    rows.push(row.clone());
                    lower.push(sys.lower[k]);
                    upper.push(sys.upper[k]);
                    tags.push(sys.tags[k]);
                }
            }
        }

        let stacked = Self::new(SparseMatrix { ncols: m, rows }, lower, upper, tags)?;
        match form {
            ComposeForm::Stacked => Ok(stacked),
            ComposeForm::Minimal => stacked.minimal_form(),
        }
    }

    /// See [`ComposeForm::Minimal`]. Identity rows tagged as bounds are the
    /// only candidates for removal.
    fn minimal_form(self) -> Result<Self> {
        let monotone: Vec<(Vec<(usize, f64)>, Direction)> = self
            .tags
            .iter()
            .zip(&self.lambda.rows)
            .filter_map(|(t, r)| match t {
                RowTag::Monotone { direction, .. } => Some((r.entries.clone(), *direction)),
                _ => None,
            })
            .collect();
        if monotone.is_empty() {
            return Ok(self);
        }
        // A knot has a monotone predecessor if some difference row pushes it
        // up from another knot (coefficient +1), and a successor if it appears
        // with coefficient -1.
        let m = self.ncols();
        let mut has_pred = vec![false; m];
        let mut has_succ = vec![false; m];
        for (entries, _) in &monotone {
            for (j, a) in entries {
                if *a > 0.0 {
                    has_pred[*j] = true;
                } else {
                    has_succ[*j] = true;
                }
            }
        }
        let mut rows = Vec::new();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut tags = Vec::new();
        for k in 0..self.nrows() {
            let row = &self.lambda.rows[k];
            let (mut l, mut u) = (self.lower[k], self.upper[k]);
            if self.tags[k] == RowTag::Bound && row.entries.len() == 1 && row.entries[0].1 == 1.0 {
                let j = row.entries[0].0;
                if has_pred[j] {
                    l = f64::NEG_INFINITY;
                }
                if has_succ[j] {
                    u = f64::INFINITY;
                }
                if l.is_infinite() && u.is_infinite() {
                    continue;
                }
            }
            rows.push(row.clone());
            lower.push(l);
            upper.push(u);
            tags.push(self.tags[k]);
        }
        Self::new(SparseMatrix { ncols: m, rows }, lower, upper, tags)
    }

    /// `Lambda xi`.
    pub fn apply(&self, xi: &[f64]) -> Vec<f64> {
        self.lambda.rows.iter().map(|r| r.dot(xi)).collect()
    }

    pub fn check_feasible(&self, xi: &[f64], tol: f64) -> Result<FeasibilityReport> {
        if xi.len() != self.ncols() {
            return Err(Error::Dimension(format!(
                "knot vector of length {} against a system over {} knots",
                xi.len(),
                self.ncols()
            )));
        }
        let violations = self
            .apply(xi)
            .into_iter()
            .enumerate()
            .filter(|(k, v)| self.lower[*k] - tol > *v || *v > self.upper[*k] + tol)
            .map(|(k, v)| Violation {
                row: k,
                value: v,
                lower: self.lower[k],
                upper: self.upper[k],
            })
            .collect();
        Ok(FeasibilityReport { violations })
    }

    /// Numerical rank of `Lambda`.
    pub fn rank(&self) -> usize {
        numerical_rank(&self.dense_lambda())
    }

    /// Subsystem made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            lambda: SparseMatrix {
                ncols: self.ncols(),
                rows: rows.iter().map(|k| self.lambda.rows[*k].clone()).collect(),
            },
            lower: rows.iter().map(|k| self.lower[*k]).collect(),
            upper: rows.iter().map(|k| self.upper[*k]).collect(),
            tags: rows.iter().map(|k| self.tags[*k]).collect(),
        }
    }
}

pub(crate) fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let tol = max * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    sv.iter().filter(|s| **s > tol).count()
}

fn check_dim(grid: &KnotGrid, dim: usize) -> Result<()> {
    if dim >= grid.ndim() {
        return Err(Error::InvalidArgument(format!(
            "dimension {} outside a {}-dimensional grid",
            dim + 1,
            grid.ndim()
        )));
    }
    Ok(())
}

/// A constraint as written on the command line or in a config file:
/// `bounds(0,1)`, `bounds(-inf,0)`, `monotone(dim=1,up)`, `convex(dim=2)`.
/// Dimensions are 1-based in the text form and 0-based in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ConstraintSpec {
    Bounds { lower: f64, upper: f64 },
    Monotone { dim: usize, direction: Direction },
    Convex { dim: usize },
}

impl ConstraintSpec {
    pub fn build(&self, grid: &KnotGrid) -> Result<LinearConstraintSystem> {
        match self {
            ConstraintSpec::Bounds { lower, upper } => {
                LinearConstraintSystem::bounds(grid, *lower, *upper)
            }
            ConstraintSpec::Monotone { dim, direction } => {
                LinearConstraintSystem::monotone(grid, *dim, *direction)
            }
            ConstraintSpec::Convex { dim } => LinearConstraintSystem::convex(grid, *dim),
        }
    }

    /// Builds and composes a list of constraints, left to right.
    pub fn build_all(
        specs: &[ConstraintSpec],
        grid: &KnotGrid,
        form: ComposeForm,
    ) -> Result<Option<LinearConstraintSystem>> {
        if specs.is_empty() {
            return Ok(None);
        }
        let systems = specs
            .iter()
            .map(|s| s.build(grid))
            .collect::<Result<Vec<_>>>()?;
        LinearConstraintSystem::compose(&systems, form).map(Some)
    }
}

impl fmt::Display for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintSpec::Bounds { lower, upper } => {
                write!(f, "bounds({},{})", fmt_bound(*lower), fmt_bound(*upper))
            }
            ConstraintSpec::Monotone { dim, direction } => {
                let d = match direction {
                    Direction::Nondecreasing => "up",
                    Direction::Nonincreasing => "down",
                };
                write!(f, "monotone(dim={},{d})", dim + 1)
            }
            ConstraintSpec::Convex { dim } => write!(f, "convex(dim={})", dim + 1),
        }
    }
}

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

impl From<ConstraintSpec> for String {
    fn from(c: ConstraintSpec) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for ConstraintSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        parse_constraint(&s)
    }
}

impl std::str::FromStr for ConstraintSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_constraint(s)
    }
}

fn grammar_error(text: &str, message: impl Into<String>) -> Error {
    Error::InvalidArgument(format!("constraint '{text}': {}", message.into()))
}

/// Parses one constraint expression.
pub fn parse_constraint(text: &str) -> Result<ConstraintSpec> {
    let trimmed = text.trim();
    let open = trimmed
        .find('(')
        .ok_or_else(|| grammar_error(text, "expected '('"))?;
    if !trimmed.ends_with(')') {
        return Err(grammar_error(text, "expected closing ')'"));
    }
    let name = trimmed[..open].trim().to_ascii_lowercase();
    let inner = &trimmed[open + 1..trimmed.len() - 1];
    if inner.contains('(') || inner.contains(')') {
        return Err(grammar_error(text, "nested parentheses"));
    }
    let args: Vec<&str> = if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner.split(',').map(str::trim).collect()
    };

    match name.as_str() {
        "bounds" => {
            if args.len() != 2 {
                return Err(grammar_error(text, "bounds takes two arguments (l, u)"));
            }
            let lower = parse_bound(args[0]).ok_or_else(|| grammar_error(text, "bad lower bound"))?;
            let upper = parse_bound(args[1]).ok_or_else(|| grammar_error(text, "bad upper bound"))?;
            if lower >= upper {
                return Err(grammar_error(text, "lower bound must be below upper bound"));
            }
            if lower.is_infinite() && upper.is_infinite() {
                return Err(grammar_error(text, "at least one bound must be finite"));
            }
            Ok(ConstraintSpec::Bounds { lower, upper })
        }
        "monotone" => {
            let mut dim = None;
            let mut direction = None;
            for a in &args {
                if let Some(d) = parse_dim_arg(a) {
                    if dim.replace(d?).is_some() {
                        return Err(grammar_error(text, "dimension given twice"));
                    }
                } else if let Some(dir) = parse_direction(a) {
                    if direction.replace(dir).is_some() {
                        return Err(grammar_error(text, "direction given twice"));
                    }
                } else {
                    return Err(grammar_error(text, format!("unexpected argument '{a}'")));
                }
            }
            let dim = dim.map_or(Ok(0), |d| to_zero_based(text, d))?;
            Ok(ConstraintSpec::Monotone {
                dim,
                direction: direction.unwrap_or(Direction::Nondecreasing),
            })
        }
        "convex" => {
            let dim = match args.as_slice() {
                [] => 0,
                [a] => {
                    let d = parse_dim_arg(a)
                        .ok_or_else(|| grammar_error(text, format!("unexpected argument '{a}'")))??;
                    to_zero_based(text, d)?
                }
                _ => return Err(grammar_error(text, "convex takes at most one argument")),
            };
            Ok(ConstraintSpec::Convex { dim })
        }
        other => Err(grammar_error(
            text,
            format!("unknown constraint '{other}' (expected bounds, monotone or convex)"),
        )),
    }
}

fn to_zero_based(text: &str, d: usize) -> Result<usize> {
    d.checked_sub(1)
        .ok_or_else(|| grammar_error(text, "dimensions are numbered from 1"))
}

fn parse_bound(s: &str) -> Option<f64> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        other => other.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

/// `Some(Ok(d))` for `dim=d` or a bare integer, `Some(Err)` for a malformed
/// `dim=` argument, `None` for anything else.
fn parse_dim_arg(s: &str) -> Option<Result<usize>> {
    let value = match s.split_once('=') {
        Some((key, value)) if key.trim().eq_ignore_ascii_case("dim") => value.trim(),
        Some(_) => return None,
        None if s.chars().all(|c| c.is_ascii_digit()) && !s.is_empty() => s,
        None => return None,
    };
    Some(
        value
            .parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("bad dimension '{value}'"))),
    )
}

fn parse_direction(s: &str) -> Option<Direction> {
    match s.to_ascii_lowercase().as_str() {
        "up" | "increasing" | "nondecreasing" => Some(Direction::Nondecreasing),
        "down" | "decreasing" | "nonincreasing" => Some(Direction::Nonincreasing),
        _ => None,
    }
}
