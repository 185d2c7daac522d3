//! Sparse nonlinear least-squares over manifold-valued variables.
//!
//! A [`FactorGraph`] holds declared variables and [`Factor`]s. The objective
//! is `sum_i ||W_i r_i(X)||^2` where `W_i^T W_i = Sigma_i^{-1}`. States are
//! updated through `⊞`, controls additively. [`solve_lm`] runs a damped
//! Gauss-Newton loop on the time-ordered normal equations.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::linalg::SkylineMatrix;
use crate::manifold::{State, Tangent, STATE_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VariableKind {
    State,
    Control,
}

/// Variable identifier. Ordering is by time step first, state before control,
/// which is the elimination order used by the solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VariableKey {
    pub index: usize,
    pub kind: VariableKind,
}

impl VariableKey {
    pub const fn state(index: usize) -> Self {
        VariableKey { index, kind: VariableKind::State }
    }

    pub const fn control(index: usize) -> Self {
        VariableKey { index, kind: VariableKind::Control }
    }
}

impl fmt::Display for VariableKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            VariableKind::State => write!(f, "x{}", self.index),
            VariableKind::Control => write!(f, "u{}", self.index),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Variable {
    State(State),
    Control(DVector<f64>),
}

impl Variable {
    pub fn tangent_dim(&self) -> usize {
        match self {
            Variable::State(_) => STATE_DIM,
            Variable::Control(u) => u.len(),
        }
    }

    pub fn retract(&self, delta: &[f64]) -> Variable {
        match self {
            Variable::State(x) => Variable::State(x.boxplus(&Tangent::from_column_slice(delta))),
            Variable::Control(u) => Variable::Control(u + DVector::from_column_slice(delta)),
        }
    }

    pub fn as_state(&self) -> Option<&State> {
        match self {
            Variable::State(x) => Some(x),
            Variable::Control(_) => None,
        }
    }

    pub fn as_control(&self) -> Option<&DVector<f64>> {
        match self {
            Variable::Control(u) => Some(u),
            Variable::State(_) => None,
        }
    }
}

/// Assignment of a value to every variable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Values {
    map: BTreeMap<VariableKey, Variable>,
}

impl Values {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: VariableKey, value: Variable) -> Option<Variable> {
        self.map.insert(key, value)
    }

    pub fn insert_state(&mut self, index: usize, x: State) {
        self.map.insert(VariableKey::state(index), Variable::State(x));
    }

    pub fn insert_control(&mut self, index: usize, u: DVector<f64>) {
        self.map.insert(VariableKey::control(index), Variable::Control(u));
    }

    pub fn get(&self, key: &VariableKey) -> Option<&Variable> {
        self.map.get(key)
    }

    pub fn state(&self, index: usize) -> Option<&State> {
        self.map.get(&VariableKey::state(index)).and_then(Variable::as_state)
    }

    pub fn control(&self, index: usize) -> Option<&DVector<f64>> {
        self.map.get(&VariableKey::control(index)).and_then(Variable::as_control)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VariableKey, &Variable)> {
        self.map.iter()
    }
}

/// Gaussian noise model stored as a square-root information matrix `W`,
/// `W^T W = Sigma^{-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    sqrt_info: DMatrix<f64>,
    diagonal: bool,
}

impl NoiseModel {
    pub fn unit(dim: usize) -> Self {
        NoiseModel { sqrt_info: DMatrix::identity(dim, dim), diagonal: true }
    }

    /// Scalar information weight `w` on every component (`Sigma = I / w`).
    pub fn weighted(dim: usize, weight: f64) -> Result<Self> {
        if !(weight > 0.0) {
            return Err(Error::InvalidParameter { name: "noise weight", reason: "must be positive" });
        }
        Ok(NoiseModel { sqrt_info: DMatrix::identity(dim, dim) * weight.sqrt(), diagonal: true })
    }

    pub fn from_sigmas(sigmas: &[f64]) -> Result<Self> {
        if sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter { name: "noise sigma", reason: "must be positive" });
        }
        let d = DVector::from_iterator(sigmas.len(), sigmas.iter().map(|s| 1.0 / s));
        Ok(NoiseModel { sqrt_info: DMatrix::from_diagonal(&d), diagonal: true })
    }

    /// Diagonal information weights (`Sigma = diag(1 / w)`).
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidParameter { name: "noise weight", reason: "must be positive" });
        }
        let d = DVector::from_iterator(weights.len(), weights.iter().map(|w| w.sqrt()));
        Ok(NoiseModel { sqrt_info: DMatrix::from_diagonal(&d), diagonal: true })
    }

    pub fn from_covariance(cov: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(cov)?;
        let chol = cov.clone().cholesky().ok_or(Error::InvalidParameter { name: "covariance", reason: "not positive definite" })?;
        // Sigma = L L^T  =>  Sigma^{-1} = L^{-T} L^{-1}, so W = L^{-1}.
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(cov.nrows(), cov.nrows()))
            .ok_or(Error::InvalidParameter { name: "covariance", reason: "singular" })?;
        Ok(NoiseModel { sqrt_info: l_inv, diagonal: false })
    }

    pub fn from_information(info: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(info)?;
        let chol = info.clone().cholesky().ok_or(Error::InvalidParameter { name: "information", reason: "not positive definite" })?;
        Ok(NoiseModel { sqrt_info: chol.l().transpose(), diagonal: false })
    }

    pub fn dim(&self) -> usize {
        self.sqrt_info.nrows()
    }

    pub fn sqrt_information(&self) -> &DMatrix<f64> {
        &self.sqrt_info
    }

    pub fn information(&self) -> DMatrix<f64> {
        self.sqrt_info.transpose() * &self.sqrt_info
    }

    pub fn whiten(&self, r: &DVector<f64>) -> DVector<f64> {
        if self.diagonal {
            r.component_mul(&self.sqrt_info.diagonal())
        } else {
            &self.sqrt_info * r
        }
    }

    pub fn whiten_jacobian(&self, j: &DMatrix<f64>) -> DMatrix<f64> {
        if self.diagonal {
            let mut out = j.clone();
            for (mut row, w) in out.row_iter_mut().zip(self.sqrt_info.diagonal().iter()) {
                row *= *w;
            }
            out
        } else {
            &self.sqrt_info * j
        }
    }

    /// `||W r||^2`.
    pub fn mahalanobis_sq(&self, r: &DVector<f64>) -> f64 {
        self.whiten(r).norm_squared()
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::InvalidParameter { name: "noise matrix", reason: "not square" });
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidParameter { name: "noise matrix", reason: "not symmetric" });
    }
    Ok(())
}

/// A residual term over an ordered list of variables.
///
/// Jacobian blocks are taken with respect to the tangent space of each
/// variable (9 columns for a state, `m` for a control of dimension `m`).
pub trait Factor: Send + Sync + fmt::Debug {
    fn keys(&self) -> &[VariableKey];

    fn dim(&self) -> usize;

    fn noise(&self) -> &NoiseModel;

    /// Short label used in error messages and per-family residual reports.
    fn family(&self) -> &'static str {
        "generic"
    }

    /// Residual at `vars` (ordered like [`Factor::keys`]). When `jacobians`
    /// is given it is filled with one block per key.
    fn evaluate(&self, vars: &[&Variable], jacobians: Option<&mut Vec<DMatrix<f64>>>) -> Result<DVector<f64>>;
}

/// Reads a state argument or reports which factor received the wrong kind.
pub fn expect_state<'a>(factor: &dyn Factor, vars: &[&'a Variable], slot: usize) -> Result<&'a State> {
    vars[slot]
        .as_state()
        .ok_or_else(|| Error::VariableMismatch { factor: factor.family().to_string(), key: factor.keys()[slot].to_string() })
}

pub fn expect_control<'a>(factor: &dyn Factor, vars: &[&'a Variable], slot: usize, dim: usize) -> Result<&'a DVector<f64>> {
    match vars[slot].as_control() {
        Some(u) if u.len() == dim => Ok(u),
        _ => Err(Error::VariableMismatch { factor: factor.family().to_string(), key: factor.keys()[slot].to_string() }),
    }
}

/// `r = sum_i A_i u_i - b` over control-type variables.
#[derive(Clone, Debug)]
pub struct LinearFactor {
    keys: Vec<VariableKey>,
    blocks: Vec<DMatrix<f64>>,
    rhs: DVector<f64>,
    noise: NoiseModel,
}

impl LinearFactor {
    pub fn new(terms: Vec<(VariableKey, DMatrix<f64>)>, rhs: DVector<f64>, noise: NoiseModel) -> Result<Self> {
        if terms.iter().any(|(_, a)| a.nrows() != rhs.len()) || noise.dim() != rhs.len() {
            return Err(Error::InvalidParameter { name: "linear factor", reason: "row count mismatch" });
        }
        let (keys, blocks) = terms.into_iter().unzip();
        Ok(LinearFactor { keys, blocks, rhs, noise })
    }
}

impl Factor for LinearFactor {
    fn keys(&self) -> &[VariableKey] {
        &self.keys
    }

    fn dim(&self) -> usize {
        self.rhs.len()
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn family(&self) -> &'static str {
        "linear"
    }

    fn evaluate(&self, vars: &[&Variable], jacobians: Option<&mut Vec<DMatrix<f64>>>) -> Result<DVector<f64>> {
        let mut r = -self.rhs.clone();
        for (slot, a) in self.blocks.iter().enumerate() {
            let u = expect_control(self, vars, slot, a.ncols())?;
            r += a * u;
        }
        if let Some(jac) = jacobians {
            jac.clear();
            jac.extend(self.blocks.iter().cloned());
        }
        Ok(r)
    }
}

/// Column layout of the tangent-space unknowns.
#[derive(Clone, Debug, Default)]
pub struct Ordering {
    offsets: BTreeMap<VariableKey, (usize, usize)>,
    total: usize,
}

impl Ordering {
    pub fn offset(&self, key: &VariableKey) -> Option<(usize, usize)> {
        self.offsets.get(key).copied()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VariableKey, &(usize, usize))> {
        self.offsets.iter()
    }
}

/// One factor's whitened rows: `J_block = W * dr/dx`, `b = -W r`.
#[derive(Clone, Debug)]
pub struct LinearBlock {
    pub factor: usize,
    pub row_offset: usize,
    pub b: DVector<f64>,
    /// `(column offset, whitened Jacobian)` per free variable.
    pub columns: Vec<(usize, DMatrix<f64>)>,
}

/// Sparse whitened linear system `J dx ≈ b`.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub blocks: Vec<LinearBlock>,
    pub ordering: Ordering,
    pub rows: usize,
}

impl LinearSystem {
    pub fn cost(&self) -> f64 {
        self.blocks.iter().map(|b| b.b.norm_squared()).sum()
    }

    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut j = DMatrix::zeros(self.rows, self.ordering.total());
        let mut b = DVector::zeros(self.rows);
        for blk in &self.blocks {
            b.rows_mut(blk.row_offset, blk.b.len()).copy_from(&blk.b);
            for (col, m) in &blk.columns {
                j.view_mut((blk.row_offset, *col), m.shape()).copy_from(m);
            }
        }
        (j, b)
    }

    /// Envelope for the normal equations implied by factor connectivity.
    pub fn envelope(&self) -> Vec<usize> {
        let n = self.ordering.total();
        let mut first: Vec<usize> = (0..n).collect();
        for blk in &self.blocks {
            let lo = match blk.columns.iter().map(|(c, _)| *c).min() {
                Some(c) => c,
                None => continue,
            };
            for (c, m) in &blk.columns {
                for f in &mut first[*c..*c + m.ncols()] {
                    *f = (*f).min(lo);
                }
            }
        }
        first
    }

    /// `(J^T J, J^T b)` with `J^T J` in envelope storage.
    pub fn normal_equations(&self) -> (SkylineMatrix, DVector<f64>) {
        let mut h = SkylineMatrix::with_envelope(self.envelope());
        let mut g = DVector::zeros(self.ordering.total());
        for blk in &self.blocks {
            for (ci, ji) in &blk.columns {
                let gi = ji.transpose() * &blk.b;
                g.rows_mut(*ci, gi.len()).add_assign(&gi);
                for (cj, jj) in &blk.columns {
                    if cj > ci {
                        continue;
                    }
                    let hij = ji.transpose() * jj;
                    for r in 0..hij.nrows() {
                        for c in 0..hij.ncols() {
                            let (row, col) = (ci + r, cj + c);
                            if col <= row {
                                h.add_lower(row, col, hij[(r, c)]);
                            }
                        }
                    }
                }
            }
        }
        (h, g)
    }
}

use core::ops::AddAssign;

#[derive(Clone, Debug, Default)]
pub struct FactorGraph {
    factors: Vec<Arc<dyn Factor>>,
    declared: BTreeMap<VariableKey, usize>,
    fixed: BTreeSet<VariableKey>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a variable with the given tangent dimension.
    pub fn declare(&mut self, key: VariableKey, dim: usize) {
        self.declared.insert(key, dim);
    }

    pub fn declare_state(&mut self, index: usize) {
        self.declare(VariableKey::state(index), STATE_DIM);
    }

    pub fn declare_control(&mut self, index: usize, dim: usize) {
        self.declare(VariableKey::control(index), dim);
    }

    /// Holds a declared variable constant during optimization.
    pub fn fix(&mut self, key: VariableKey) -> Result<()> {
        if !self.declared.contains_key(&key) {
            return Err(Error::UnknownKey { key: key.to_string() });
        }
        self.fixed.insert(key);
        Ok(())
    }

    pub fn insert(&mut self, factor: Arc<dyn Factor>) -> Result<()> {
        for key in factor.keys() {
            if !self.declared.contains_key(key) {
                return Err(Error::UnknownKey { key: key.to_string() });
            }
        }
        if factor.noise().dim() != factor.dim() {
            return Err(Error::NoiseDimension { factor: factor.family().to_string(), residual: factor.dim(), noise: factor.noise().dim() });
        }
        self.factors.push(factor);
        Ok(())
    }

    pub fn add<F: Factor + 'static>(&mut self, factor: F) -> Result<()> {
        self.insert(Arc::new(factor))
    }

    pub fn factors(&self) -> &[Arc<dyn Factor>] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn ordering(&self) -> Ordering {
        let mut offsets = BTreeMap::new();
        let mut total = 0;
        for (key, dim) in &self.declared {
            if self.fixed.contains(key) {
                continue;
            }
            offsets.insert(*key, (total, *dim));
            total += dim;
        }
        Ordering { offsets, total }
    }

    fn gather<'a>(&self, factor: &dyn Factor, values: &'a Values) -> Result<Vec<&'a Variable>> {
        factor.keys().iter().map(|k| values.get(k).ok_or_else(|| Error::UnknownKey { key: k.to_string() })).collect()
    }

    /// Raw (unwhitened) residual of factor `i`.
    pub fn residual(&self, i: usize, values: &Values) -> Result<DVector<f64>> {
        let f = &*self.factors[i];
        let vars = self.gather(f, values)?;
        f.evaluate(&vars, None)
    }

    /// `||r_i||^2_{Sigma_i}` for factor `i`.
    pub fn factor_cost(&self, i: usize, values: &Values) -> Result<f64> {
        let f = &*self.factors[i];
        let r = self.residual(i, values)?;
        if r.len() != f.noise().dim() {
            return Err(Error::NoiseDimension { factor: f.family().to_string(), residual: r.len(), noise: f.noise().dim() });
        }
        Ok(f.noise().mahalanobis_sq(&r))
    }

    pub fn cost(&self, values: &Values) -> Result<f64> {
        (0..self.factors.len()).map(|i| self.factor_cost(i, values)).sum()
    }

    /// Summed squared whitened residuals grouped by [`Factor::family`].
    pub fn family_costs(&self, values: &Values) -> Result<BTreeMap<&'static str, f64>> {
        let mut out = BTreeMap::new();
        for (i, f) in self.factors.iter().enumerate() {
            *out.entry(f.family()).or_insert(0.0) += self.factor_cost(i, values)?;
        }
        Ok(out)
    }

    pub fn linearize(&self, values: &Values) -> Result<LinearSystem> {
        self.linearize_at(values, 0)
    }

    fn linearize_at(&self, values: &Values, iteration: usize) -> Result<LinearSystem> {
        let ordering = self.ordering();
        let mut blocks = Vec::with_capacity(self.factors.len());
        let mut rows = 0;
        let mut jac = Vec::new();
        for (index, f) in self.factors.iter().enumerate() {
            let vars = self.gather(&**f, values)?;
            let r = f.evaluate(&vars, Some(&mut jac))?;
            let name = || format!("#{index} ({})", f.family());
            if r.len() != f.noise().dim() {
                return Err(Error::NoiseDimension { factor: name(), residual: r.len(), noise: f.noise().dim() });
            }
            if r.iter().any(|v| !v.is_finite()) || jac.iter().any(|j| j.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite { factor: name(), iteration });
            }
            let mut columns = Vec::with_capacity(f.keys().len());
            for (key, j) in f.keys().iter().zip(jac.iter()) {
                if let Some((offset, dim)) = ordering.offset(key) {
                    if j.ncols() != dim || j.nrows() != r.len() {
                        return Err(Error::VariableMismatch { factor: name(), key: key.to_string() });
                    }
                    columns.push((offset, f.noise().whiten_jacobian(j)));
                }
            }
            let b = -f.noise().whiten(&r);
            let len = b.len();
            blocks.push(LinearBlock { factor: index, row_offset: rows, b, columns });
            rows += len;
        }
        Ok(LinearSystem { blocks, ordering, rows })
    }
}

/// Applies a stacked tangent increment to every free variable.
pub fn retract_all(values: &Values, ordering: &Ordering, delta: &DVector<f64>) -> Values {
    let mut out = values.clone();
    for (key, (offset, dim)) in ordering.iter() {
        if let Some(v) = values.get(key) {
            out.insert(*key, v.retract(delta.rows(*offset, *dim).as_slice()));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverParams {
    pub lambda_initial: f64,
    /// Multiplier applied to lambda after a rejected step.
    pub lambda_up: f64,
    /// Divisor applied to lambda after an accepted step.
    pub lambda_down: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub max_iterations: usize,
    pub relative_cost_tol: f64,
    pub gradient_tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            lambda_initial: 1e-4,
            lambda_up: 10.0,
            lambda_down: 2.0,
            lambda_min: 1e-9,
            lambda_max: 1e9,
            max_iterations: 50,
            relative_cost_tol: 1e-6,
            gradient_tol: 1e-9,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason| Err(Error::InvalidParameter { name: "solver params", reason });
        if !(self.lambda_initial > 0.0) {
            return bad("initial damping must be positive");
        }
        if !(self.lambda_up > 1.0) || !(self.lambda_down > 1.0) {
            return bad("damping factors must exceed 1");
        }
        if !(self.relative_cost_tol > 0.0) || !(self.gradient_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.lambda_min > 0.0) || !(self.lambda_max >= self.lambda_min) {
            return bad("damping clamp range is empty");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// Cost was already exactly zero.
    ZeroCost,
    Gradient,
    RelativeDecrease,
    /// The damped linear model promised less than `relative_cost_tol`.
    PredictedDecrease,
    MaxIterations,
    /// Damping reached its upper clamp without finding a decrease.
    DampingLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveStats {
    /// Linear solves performed (accepted plus rejected).
    pub iterations: usize,
    pub accepted: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub final_lambda: f64,
    pub termination: Termination,
    /// Cost before the first step and after every accepted step.
    pub cost_history: Vec<f64>,
    pub wall_time_s: f64,
}

/// Damped Gauss-Newton increment `-(J^T J + lambda I)^{-1} J^T r`.
///
/// `b = -W r`, so the right-hand side is `J^T b`.
pub fn lm_increment(system: &LinearSystem, lambda: f64) -> Result<DVector<f64>> {
    let (mut h, g) = system.normal_equations();
    h.add_diagonal(lambda);
    Ok(h.cholesky()?.solve(&g))
}

/// Levenberg-Marquardt with `lambda I` damping.
///
/// Steps are accepted iff the cost strictly decreases; lambda is divided by
/// `lambda_down` on acceptance and multiplied by `lambda_up` on rejection,
/// clamped to `[lambda_min, lambda_max]`.
pub fn solve_lm(graph: &FactorGraph, initial: &Values, params: &SolverParams, clock: &dyn Clock) -> Result<(Values, SolveStats)> {
    params.validate()?;
    let started = clock.now();
    let mut values = initial.clone();
    let mut lambda = params.lambda_initial.clamp(params.lambda_min, params.lambda_max);
    let mut system = graph.linearize_at(&values, 0)?;
    let mut cost = system.cost();
    let initial_cost = cost;
    let mut cost_history = vec![cost];
    let mut iterations = 0;
    let mut accepted = 0;
    let mut normal: Option<(SkylineMatrix, DVector<f64>)> = None;

    let termination = loop {
        if cost == 0.0 {
            break Termination::ZeroCost;
        }
        if iterations >= params.max_iterations {
            break Termination::MaxIterations;
        }
        let (h0, g) = normal.get_or_insert_with(|| system.normal_equations());
        if g.amax() < params.gradient_tol {
            break Termination::Gradient;
        }
        iterations += 1;
        let mut h = h0.clone();
        h.add_diagonal(lambda);
        let step = match h.cholesky() {
            Ok(chol) => Some(chol.solve(g)),
            Err(_) => None,
        };
        if let Some(d) = &step {
            // cost - ||b - J d||^2 = 2 d.g - d.(J^T J) d = d.g + lambda |d|^2
            let predicted = d.dot(g) + lambda * d.norm_squared();
            if predicted < params.relative_cost_tol * cost {
                break Termination::PredictedDecrease;
            }
        }
        let candidate = step.map(|d| retract_all(&values, &system.ordering, &d));
        let candidate_cost = candidate.as_ref().map(|c| graph.cost(c));
        match (candidate, candidate_cost) {
            (Some(next), Some(Ok(next_cost))) if next_cost.is_finite() && next_cost < cost => {
                let decrease = (cost - next_cost) / cost;
                values = next;
                cost = next_cost;
                accepted += 1;
                cost_history.push(cost);
                lambda = (lambda / params.lambda_down).max(params.lambda_min);
                if decrease < params.relative_cost_tol {
                    break Termination::RelativeDecrease;
                }
                system = graph.linearize_at(&values, iterations)?;
                normal = None;
            }
            _ => {
                if lambda >= params.lambda_max {
                    break Termination::DampingLimit;
                }
                lambda = (lambda * params.lambda_up).min(params.lambda_max);
            }
        }
    };

    let stats = SolveStats {
        iterations,
        accepted,
        initial_cost,
        final_cost: cost,
        final_lambda: lambda,
        termination,
        cost_history,
        wall_time_s: clock.now() - started,
    };
    Ok((values, stats))
}

/// Location and size of the worst Jacobian mismatch.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianCheck {
    pub max_error: f64,
    pub slot: usize,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Magnitude below which Jacobian entries are compared absolutely. With a
/// relative tolerance of 1e-5 this gives an absolute tolerance of 1e-7 near
/// zero.
pub const JACOBIAN_ABS_FLOOR: f64 = 1e-2;

/// Compares analytic Jacobians against fourth-order central differences.
///
/// States are perturbed through `⊞`, controls additively. The error of an
/// entry is `|a - n| / max(|a|, |n|, JACOBIAN_ABS_FLOOR)`.
pub fn check_jacobians(factor: &dyn Factor, values: &Values, step: f64) -> Result<JacobianCheck> {
    let vars: Vec<Variable> = factor
        .keys()
        .iter()
        .map(|k| values.get(k).cloned().ok_or_else(|| Error::UnknownKey { key: k.to_string() }))
        .collect::<Result<_>>()?;
    let refs: Vec<&Variable> = vars.iter().collect();
    let mut analytic = Vec::new();
    factor.evaluate(&refs, Some(&mut analytic))?;

    let mut worst = JacobianCheck { max_error: 0.0, slot: 0, row: 0, col: 0, analytic: 0.0, numeric: 0.0 };
    for slot in 0..vars.len() {
        let dim = vars[slot].tangent_dim();
        for col in 0..dim {
            let eval = |h: f64| -> Result<DVector<f64>> {
                let mut d = vec![0.0; dim];
                d[col] = h;
                let moved = vars[slot].retract(&d);
                let mut args: Vec<&Variable> = refs.clone();
                args[slot] = &moved;
                factor.evaluate(&args, None)
            };
            let numeric = (eval(-2.0 * step)? - eval(2.0 * step)? + (eval(step)? - eval(-step)?) * 8.0) / (12.0 * step);
            for row in 0..numeric.len() {
                let a = analytic[slot][(row, col)];
                let n = numeric[row];
                let err = (a - n).abs() / a.abs().max(n.abs()).max(JACOBIAN_ABS_FLOOR);
                if err > worst.max_error || !err.is_finite() {
                    worst = JacobianCheck { max_error: err, slot, row, col, analytic: a, numeric: n };
                }
            }
        }
    }
    Ok(worst)
}

/// Factor wrapper that perturbs one Jacobian entry; used to exercise the
/// Jacobian checker's failure path.
#[derive(Debug)]
pub struct CorruptedJacobian {
    pub inner: Box<dyn Factor>,
    pub slot: usize,
    pub row: usize,
    pub col: usize,
    pub offset: f64,
}

impl Factor for CorruptedJacobian {
    fn keys(&self) -> &[VariableKey] {
        self.inner.keys()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn noise(&self) -> &NoiseModel {
        self.inner.noise()
    }

    fn family(&self) -> &'static str {
        self.inner.family()
    }

    fn evaluate(&self, vars: &[&Variable], jacobians: Option<&mut Vec<DMatrix<f64>>>) -> Result<DVector<f64>> {
        match jacobians {
            Some(jac) => {
                let r = self.inner.evaluate(vars, Some(jac))?;
                jac[self.slot][(self.row, self.col)] += self.offset;
                Ok(r)
            }
            None => self.inner.evaluate(vars, None),
        }
    }
}
