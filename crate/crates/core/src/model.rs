//! Problem data: Hamiltonians, coupling law, switching costs, penalty family,
//! and the validator for the standing structural assumptions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{grad, GridField, GridVectorField, PeriodicGrid};

/// Form of the Hamiltonian. Only the quadratic-plus-potential form is
/// implemented; other convex forms would add variants here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HamiltonianKind {
    /// `H^i(p, x) = |p|^2 / 2 + V^i(x)`.
    #[default]
    QuadraticPlusPotential,
}

/// Per-mode Hamiltonians `H^i(p, x) = |p|^2/2 + V^i(x)`, evaluated along the
/// homotopy `H_lambda = lambda H + (1 - lambda) |p|^2 / 2`.
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    kind: HamiltonianKind,
    potentials: Vec<GridField>,
    potential_grads: Vec<GridVectorField>,
}

impl HamiltonianSpec {
    pub fn quadratic(potentials: Vec<GridField>) -> Result<Self> {
        let Some(first) = potentials.first() else {
            return Err(Error::InvalidModel("at least one potential is required".into()));
        };
        let grid = *first.grid();
        if potentials.iter().any(|v| *v.grid() != grid) {
            return Err(Error::InvalidModel("potentials live on different grids".into()));
        }
        let potential_grads = potentials.iter().map(grad).collect();
        Ok(Self {
            kind: HamiltonianKind::QuadraticPlusPotential,
            potentials,
            potential_grads,
        })
    }

    pub fn kind(&self) -> HamiltonianKind {
        self.kind
    }

    pub fn modes(&self) -> usize {
        self.potentials.len()
    }

    pub fn potential(&self, mode: usize) -> &GridField {
        &self.potentials[mode]
    }

    pub fn potentials(&self) -> &[GridField] {
        &self.potentials
    }

    pub fn eval_h(&self, lambda: f64, mode: usize, point: usize, p: &[f64]) -> f64 {
        0.5 * p.iter().map(|v| v * v).sum::<f64>() + lambda * self.potentials[mode][point]
    }

    pub fn eval_dp_h(&self, _lambda: f64, _mode: usize, _point: usize, p: &[f64]) -> Vec<f64> {
        p.to_vec()
    }

    pub fn eval_dpp_h(&self, _lambda: f64, _mode: usize, _point: usize, p: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(p.len(), p.len())
    }

    pub fn eval_dx_h(&self, lambda: f64, mode: usize, point: usize) -> Vec<f64> {
        self.potential_grads[mode]
            .at(point)
            .into_iter()
            .map(|g| lambda * g)
            .collect()
    }

    pub fn eval_dpx_h(&self, _lambda: f64, _mode: usize, _point: usize, p: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(p.len(), p.len())
    }

    /// `max_x H^i(0, x)` over all modes.
    pub fn max_at_rest(&self) -> f64 {
        self.potentials
            .iter()
            .map(GridField::max)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Coupling nonlinearity `g(theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CouplingLaw {
    /// `g = ln theta`.
    Log,
    /// `g = theta^alpha`.
    Power { alpha: f64 },
}

impl CouplingLaw {
    fn check(theta: f64, function: &'static str) -> Result<()> {
        if theta > 0.0 && theta.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain {
                function,
                value: theta,
            })
        }
    }

    pub fn g(&self, theta: f64) -> Result<f64> {
        Self::check(theta, "g")?;
        Ok(match *self {
            CouplingLaw::Log => theta.ln(),
            CouplingLaw::Power { alpha } => theta.powf(alpha),
        })
    }

    pub fn g_prime(&self, theta: f64) -> Result<f64> {
        Self::check(theta, "g'")?;
        Ok(match *self {
            CouplingLaw::Log => 1.0 / theta,
            CouplingLaw::Power { alpha } => alpha * theta.powf(alpha - 1.0),
        })
    }

    pub fn g_inv(&self, s: f64) -> Result<f64> {
        match *self {
            CouplingLaw::Log => Ok(s.exp()),
            CouplingLaw::Power { alpha } => {
                if s > 0.0 {
                    Ok(s.powf(1.0 / alpha))
                } else {
                    Err(Error::Domain {
                        function: "g^-1",
                        value: s,
                    })
                }
            }
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            CouplingLaw::Log => None,
            CouplingLaw::Power { alpha } => Some(alpha),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyFamily {
    Quadratic,
    #[default]
    Cubic,
    Exponential,
}

/// A penalty `beta_eps` vanishing on `s <= 0`, nondecreasing and convex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    pub eps: f64,
}

/// Exponent beyond which the exponential penalty is continued by its tangent.
const EXP_CLAMP: f64 = 40.0;

impl PenaltySpec {
    pub fn new(family: PenaltyFamily, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidModel(format!("penalty eps must be positive, got {eps}")));
        }
        Ok(Self { family, eps })
    }

    /// `(beta, beta', beta'')` at `s`.
    pub fn eval(&self, s: f64) -> (f64, f64, f64) {
        if s <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let eps = self.eps;
        match self.family {
            PenaltyFamily::Quadratic => (s * s / (2.0 * eps), s / eps, 1.0 / eps),
            PenaltyFamily::Cubic => (s * s * s / (3.0 * eps), s * s / eps, 2.0 * s / eps),
            PenaltyFamily::Exponential => {
                let t = s / eps;
                if t <= EXP_CLAMP {
                    let e = t.exp();
                    (eps * (e - 1.0 - t), e - 1.0, e / eps)
                } else {
                    let e0 = EXP_CLAMP.exp();
                    let r = t - EXP_CLAMP;
                    let value = eps * (e0 - 1.0 - EXP_CLAMP + e0 * (r + 0.5 * r * r) - r);
                    (value, e0 * (1.0 + r) - 1.0, e0 / eps)
                }
            }
        }
    }

    pub fn beta(&self, s: f64) -> f64 {
        self.eval(s).0
    }

    pub fn beta_prime(&self, s: f64) -> f64 {
        self.eval(s).1
    }

    pub fn beta_second(&self, s: f64) -> f64 {
        self.eval(s).2
    }
}

/// Switching costs `psi^{ij}`; the diagonal is unused and stored as zero.
#[derive(Debug, Clone)]
pub struct SwitchingCosts {
    modes: usize,
    costs: Vec<GridField>,
}

impl SwitchingCosts {
    /// Builds costs from a `d x d` closure; the closure is not called on the diagonal.
    pub fn from_fn(
        grid: &PeriodicGrid,
        modes: usize,
        mut f: impl FnMut(usize, usize) -> GridField,
    ) -> Result<Self> {
        let mut costs = Vec::with_capacity(modes * modes);
        for i in 0..modes {
            for j in 0..modes {
                if i == j {
                    costs.push(grid.zeros());
                } else {
                    let c = f(i, j);
                    if c.grid() != grid {
                        return Err(Error::InvalidModel(format!(
                            "cost psi^{}{} lives on a different grid",
                            i + 1,
                            j + 1
                        )));
                    }
                    costs.push(c);
                }
            }
        }
        Ok(Self { modes, costs })
    }

    pub fn uniform(grid: &PeriodicGrid, modes: usize, value: f64) -> Result<Self> {
        Self::from_fn(grid, modes, |_, _| grid.constant(value))
    }

    pub fn get(&self, i: usize, j: usize) -> &GridField {
        &self.costs[i * self.modes + j]
    }

    pub fn modes(&self) -> usize {
        self.modes
    }
}

/// Everything needed to pose a weakly coupled switching problem.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub grid: PeriodicGrid,
    pub hamiltonian: HamiltonianSpec,
    pub coupling: CouplingLaw,
    pub costs: SwitchingCosts,
    pub penalty: PenaltyFamily,
    /// Right-hand side of the transport equations.
    pub source: f64,
    /// Largest admissible number of unknowns `2 d n^N`.
    pub max_unknowns: usize,
}

impl ModelSpec {
    pub const DEFAULT_MAX_UNKNOWNS: usize = 2_000_000;

    pub fn new(
        hamiltonian: HamiltonianSpec,
        coupling: CouplingLaw,
        costs: SwitchingCosts,
        penalty: PenaltyFamily,
        source: f64,
    ) -> Result<Self> {
        let grid = *hamiltonian.potential(0).grid();
        if costs.modes() != hamiltonian.modes() {
            return Err(Error::InvalidModel(format!(
                "{} potentials but {}x{} switching costs",
                hamiltonian.modes(),
                costs.modes(),
                costs.modes()
            )));
        }
        if costs.modes() > 1 && *costs.get(0, 1).grid() != grid {
            return Err(Error::InvalidModel("costs and potentials use different grids".into()));
        }
        Ok(Self {
            grid,
            hamiltonian,
            coupling,
            costs,
            penalty,
            source,
            max_unknowns: Self::DEFAULT_MAX_UNKNOWNS,
        })
    }

    pub fn modes(&self) -> usize {
        self.hamiltonian.modes()
    }

    pub fn unknowns(&self) -> usize {
        2 * self.modes() * self.grid.len()
    }

    pub fn penalty_at(&self, eps: f64) -> Result<PenaltySpec> {
        PenaltySpec::new(self.penalty, eps)
    }
}

/// Threshold exponent for the Lipschitz estimate: infinite for `N <= 2`,
/// otherwise the positive root of `2 a = (a + 1) b (b - 1)` with
/// `b = sqrt(N / (N - 2))`.
pub fn compute_alpha0(dim: usize) -> f64 {
    if dim <= 2 {
        return f64::INFINITY;
    }
    let n = dim as f64;
    let b = (n / (n - 2.0)).sqrt();
    let q = b * (b - 1.0);
    q / (2.0 - q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Condition is reported but not required for a run.
    NotEnforced,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub mode: Option<usize>,
    pub point: usize,
    pub position: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub check: String,
    pub status: CheckStatus,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub entries: Vec<ValidationEntry>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationEntry> {
        self.entries.iter().filter(|e| e.status == CheckStatus::Fail)
    }

    pub fn get(&self, check: &str) -> Option<&ValidationEntry> {
        self.entries.iter().find(|e| e.check == check)
    }

    fn push(&mut self, check: &str, status: CheckStatus, detail: String, witness: Option<Witness>) {
        self.entries.push(ValidationEntry {
            check: check.to_string(),
            status,
            detail,
            witness,
        });
    }
}

pub mod checks {
    pub const HAMILTONIAN_NONNEGATIVE: &str = "hamiltonian-nonnegative";
    pub const UNIFORM_CONVEXITY: &str = "uniform-convexity";
    pub const LAGRANGIAN_LOWER_BOUND: &str = "lagrangian-lower-bound";
    pub const COUPLING_INCREASING: &str = "coupling-strictly-increasing";
    pub const COUPLING_EXPONENT: &str = "coupling-exponent-range";
    pub const P_2_N: &str = "P-2/N";
    pub const ALPHA0: &str = "alpha-below-alpha0";
    pub const OSCILLATION: &str = "oscillation-bound";
    pub const MIXED_DERIVATIVE: &str = "mixed-derivative-at-rest";
    pub const DRIFT_PRODUCT: &str = "drift-product-at-rest";
    pub const POTENTIAL_GRADIENT: &str = "potential-gradient-at-rest";
    pub const COST_POSITIVE: &str = "switching-cost-positive";
    pub const SOURCE_POSITIVE: &str = "source-positive";
    pub const PENALTY_PROFILE: &str = "penalty-profile";
    pub const PROBLEM_SIZE: &str = "problem-size";
}

fn witness(grid: &PeriodicGrid, mode: Option<usize>, point: usize, value: f64) -> Witness {
    Witness {
        mode,
        point,
        position: grid.position(point),
        value,
    }
}

/// Checks the standing structural assumptions on a model. Failures are
/// report entries, never errors.
pub fn validate(model: &ModelSpec) -> ValidationReport {
    use checks::*;
    use CheckStatus::*;

    let grid = &model.grid;
    let d = model.modes();
    let mut report = ValidationReport::default();

    // H(0, x) = V(x) must be nonnegative.
    let mut worst: Option<Witness> = None;
    for (i, v) in model.hamiltonian.potentials().iter().enumerate() {
        let k = v.argmin();
        if v[k] < 0.0 && worst.as_ref().is_none_or(|w| v[k] < w.value) {
            worst = Some(witness(grid, Some(i), k, v[k]));
        }
    }
    match worst {
        None => report.push(HAMILTONIAN_NONNEGATIVE, Pass, "V^i >= 0 on the grid".into(), None),
        Some(w) => report.push(
            HAMILTONIAN_NONNEGATIVE,
            Fail,
            format!("V^{} = {} < 0", w.mode.unwrap_or(0) + 1, w.value),
            Some(w),
        ),
    }

    report.push(
        UNIFORM_CONVEXITY,
        Pass,
        "D_pp H = identity, gamma = 1".into(),
        None,
    );
    let max_v = model.hamiltonian.max_at_rest();
    report.push(
        LAGRANGIAN_LOWER_BOUND,
        Pass,
        format!(
            "H - D_pH.p <= -c H + C holds with c = 1, C = 2 max V = {}",
            2.0 * max_v.max(0.0)
        ),
        None,
    );

    match model.coupling {
        CouplingLaw::Log => {
            report.push(COUPLING_INCREASING, Pass, "g = ln(theta), g' = 1/theta > 0".into(), None);
            report.push(COUPLING_EXPONENT, NotApplicable, "logarithmic coupling".into(), None);
            report.push(P_2_N, NotApplicable, "logarithmic coupling".into(), None);
            report.push(ALPHA0, NotApplicable, "logarithmic coupling".into(), None);
            report.push(
                OSCILLATION,
                NotApplicable,
                format!("logarithmic coupling; max H(0,x) = {max_v}"),
                None,
            );
        }
        CouplingLaw::Power { alpha } => {
            if alpha > 0.0 && alpha.is_finite() {
                report.push(COUPLING_INCREASING, Pass, format!("alpha = {alpha} > 0"), None);
            } else {
                report.push(
                    COUPLING_INCREASING,
                    Fail,
                    format!("alpha = {alpha}: g is not strictly increasing"),
                    None,
                );
            }
            if alpha > 0.0 && alpha <= 1.0 {
                report.push(COUPLING_EXPONENT, Pass, format!("0 < alpha = {alpha} <= 1"), None);
            } else {
                report.push(COUPLING_EXPONENT, Fail, format!("alpha = {alpha} outside (0, 1]"), None);
            }
            let two_over_n = 2.0 / grid.dim() as f64;
            if alpha < two_over_n {
                report.push(P_2_N, Pass, format!("alpha = {alpha} < 2/N = {two_over_n:.3}"), None);
            } else {
                report.push(
                    P_2_N,
                    Fail,
                    format!("P-2/N violated: alpha={alpha} >= 2/N={two_over_n:.3}"),
                    None,
                );
            }
            let alpha0 = compute_alpha0(grid.dim());
            if alpha < alpha0 {
                report.push(ALPHA0, Pass, format!("alpha = {alpha} < alpha0 = {alpha0}"), None);
            } else {
                report.push(
                    ALPHA0,
                    Fail,
                    format!("alpha = {alpha} >= alpha0(N={}) = {alpha0}", grid.dim()),
                    None,
                );
            }
            let mut worst: Option<Witness> = None;
            for (i, v) in model.hamiltonian.potentials().iter().enumerate() {
                let k = v.argmax();
                if worst.as_ref().is_none_or(|w| v[k] > w.value) {
                    worst = Some(witness(grid, Some(i), k, v[k]));
                }
            }
            let w = worst.expect("at least one mode");
            if w.value < model.source {
                report.push(
                    OSCILLATION,
                    Pass,
                    format!("max H(0,x) = {} < source = {}", w.value, model.source),
                    None,
                );
            } else {
                report.push(
                    OSCILLATION,
                    Fail,
                    format!(
                        "oscillation bound violated: max H(0,x) = {} >= source = {}",
                        w.value, model.source
                    ),
                    Some(w),
                );
            }
        }
    }

    report.push(
        MIXED_DERIVATIVE,
        Pass,
        "D_px H(0,x) = 0 for the quadratic Hamiltonian".into(),
        None,
    );
    report.push(
        DRIFT_PRODUCT,
        Pass,
        "D_xH(0,x) D_pH(0,x) = 0 since D_pH(0,x) = 0".into(),
        None,
    );
    let mut grad_max = 0.0_f64;
    let mut grad_witness = None;
    for i in 0..d {
        for k in 0..grid.len() {
            let g = model.hamiltonian.eval_dx_h(1.0, i, k);
            let m = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if m > grad_max {
                grad_max = m;
                grad_witness = Some(witness(grid, Some(i), k, m));
            }
        }
    }
    report.push(
        POTENTIAL_GRADIENT,
        NotEnforced,
        format!("separate vanishing of D_xH(0,x) not required; max |DV| = {grad_max}"),
        grad_witness,
    );

    let mut worst: Option<(usize, usize, usize, f64)> = None;
    for i in 0..d {
        for j in (0..d).filter(|&j| j != i) {
            let c = model.costs.get(i, j);
            let k = c.argmin();
            if c[k] <= 0.0 && worst.is_none_or(|w| c[k] < w.3) {
                worst = Some((i, j, k, c[k]));
            }
        }
    }
    match worst {
        None => report.push(COST_POSITIVE, Pass, "psi^ij > 0 for all i != j".into(), None),
        Some((i, j, k, value)) => report.push(
            COST_POSITIVE,
            Fail,
            format!(
                "switching-cost positivity violated: psi^{}{} = {value}",
                i + 1,
                j + 1
            ),
            Some(witness(grid, Some(i), k, value)),
        ),
    }

    if model.source > 0.0 && model.source.is_finite() {
        report.push(SOURCE_POSITIVE, Pass, format!("source = {}", model.source), None);
    } else {
        report.push(SOURCE_POSITIVE, Fail, format!("source = {} must be > 0", model.source), None);
    }

    let profile = match model.penalty {
        PenaltyFamily::Exponential => "beta' <= C beta'' with C = eps, uniform in s",
        PenaltyFamily::Cubic => "beta'/beta'' = s/2: C grows with s, not uniform",
        PenaltyFamily::Quadratic => "beta'/beta'' = s: C grows with s, not uniform; beta'' jumps at 0",
    };
    report.push(PENALTY_PROFILE, NotEnforced, profile.into(), None);

    if model.unknowns() <= model.max_unknowns {
        report.push(
            PROBLEM_SIZE,
            Pass,
            format!("{} unknowns <= budget {}", model.unknowns(), model.max_unknowns),
            None,
        );
    } else {
        report.push(
            PROBLEM_SIZE,
            Fail,
            format!("{} unknowns exceed budget {}", model.unknowns(), model.max_unknowns),
            None,
        );
    }

    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn flat_model(dim: usize, n: usize, coupling: CouplingLaw, vmax: f64) -> ModelSpec {
        let grid = PeriodicGrid::new(dim, n).unwrap();
        let v = grid.from_fn(|x| 0.5 * vmax * (1.0 + (2.0 * PI * x[0]).cos()));
        let h = HamiltonianSpec::quadratic(vec![v.clone(), v]).unwrap();
        let c = SwitchingCosts::uniform(&grid, 2, 1.0).unwrap();
        ModelSpec::new(h, coupling, c, PenaltyFamily::Cubic, 1.0).unwrap()
    }

    #[test]
    fn hamiltonian_values() {
        let grid = PeriodicGrid::new(2, 4).unwrap();
        let h = HamiltonianSpec::quadratic(vec![grid.constant(0.5)]).unwrap();
        assert_eq!(h.eval_h(0.0, 0, 3, &[0.0, 0.0]), 0.0);
        assert_eq!(h.eval_h(1.0, 0, 3, &[3.0, 4.0]), 13.0);
        let h = HamiltonianSpec::quadratic(vec![grid.constant(0.36)]).unwrap();
        assert!((h.eval_h(0.5, 0, 0, &[0.0, 0.0]) - 0.18).abs() < 1e-15);
        assert_eq!(h.eval_dp_h(1.0, 0, 0, &[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(h.eval_dpp_h(1.0, 0, 0, &[1.0, -2.0]), DMatrix::identity(2, 2));
        let grid = PeriodicGrid::new(1, 16).unwrap();
        let v = grid.from_fn(|x| (2.0 * PI * x[0]).sin());
        let h = HamiltonianSpec::quadratic(vec![v]).unwrap();
        assert_eq!(h.eval_dx_h(0.0, 0, 0), vec![0.0]);
        assert!(h.eval_dx_h(1.0, 0, 0)[0] > 0.0);
    }

    #[test]
    fn lambda_zero_is_space_independent() {
        let grid = PeriodicGrid::new(1, 16).unwrap();
        let v = grid.from_fn(|x| 0.3 + (2.0 * PI * x[0]).cos() * 0.2);
        let h = HamiltonianSpec::quadratic(vec![v]).unwrap();
        let p = [0.7];
        let first = h.eval_h(0.0, 0, 0, &p);
        assert!((0..16).all(|k| h.eval_h(0.0, 0, k, &p) == first));
    }

    #[test]
    fn coupling_values() {
        let log = CouplingLaw::Log;
        assert_eq!(log.g(1.0).unwrap(), 0.0);
        assert_eq!(log.g_prime(1.0).unwrap(), 1.0);
        assert_eq!(log.g_inv(0.0).unwrap(), 1.0);
        let p = CouplingLaw::Power { alpha: 0.5 };
        assert!((p.g(0.4096).unwrap() - 0.64).abs() < 1e-15);
        for law in [log, p] {
            for t in [0.1, 1.0, 7.3] {
                let back = law.g_inv(law.g(t).unwrap()).unwrap();
                assert!((back - t).abs() <= 1e-12 * t);
            }
            assert!(matches!(law.g(0.0), Err(Error::Domain { .. })));
            assert!(law.g_prime(-1.0).is_err());
        }
    }

    #[test]
    fn penalty_examples() {
        for family in [PenaltyFamily::Quadratic, PenaltyFamily::Cubic, PenaltyFamily::Exponential] {
            let p = PenaltySpec::new(family, 0.3).unwrap();
            assert_eq!(p.eval(-1.0), (0.0, 0.0, 0.0));
        }
        let p = PenaltySpec::new(PenaltyFamily::Cubic, 0.1).unwrap();
        let (b, b1, b2) = p.eval(0.2);
        assert!((b - 0.008 / 0.3).abs() < 1e-15);
        assert!((b1 - 0.4).abs() < 1e-15);
        assert!((b2 - 4.0).abs() < 1e-14);
        assert!(PenaltySpec::new(PenaltyFamily::Cubic, 0.0).is_err());
    }

    #[test]
    fn exponential_tail_is_continuous() {
        let p = PenaltySpec::new(PenaltyFamily::Exponential, 0.01).unwrap();
        let s0 = 0.4;
        let below = p.eval(s0 * (1.0 - 1e-12));
        let above = p.eval(s0 * (1.0 + 1e-12));
        for (a, b) in [(below.0, above.0), (below.1, above.1), (below.2, above.2)] {
            assert!((a - b).abs() <= 1e-9 * a.abs());
        }
        assert!(p.eval(10.0).0.is_finite());
    }

    #[test]
    fn penalty_derivatives_match_differences() {
        for family in [PenaltyFamily::Quadratic, PenaltyFamily::Cubic, PenaltyFamily::Exponential] {
            let p = PenaltySpec::new(family, 0.2).unwrap();
            for s in [0.05, 0.3, 1.1, 9.5] {
                let t = 1e-6 * s;
                let d1 = (p.beta(s + t) - p.beta(s - t)) / (2.0 * t);
                let d2 = (p.beta_prime(s + t) - p.beta_prime(s - t)) / (2.0 * t);
                assert!((d1 - p.beta_prime(s)).abs() <= 1e-6 * d1.abs().max(1.0), "{family:?} {s}");
                assert!((d2 - p.beta_second(s)).abs() <= 1e-6 * d2.abs().max(1.0), "{family:?} {s}");
            }
        }
    }

    proptest! {
        #[test]
        fn penalty_structure(s in -2.0f64..2.0, ds in 1e-6f64..0.5, eps in 0.001f64..1.0, f in 0usize..3) {
            let family = [PenaltyFamily::Quadratic, PenaltyFamily::Cubic, PenaltyFamily::Exponential][f];
            let p = PenaltySpec::new(family, eps).unwrap();
            let (b, b1, b2) = p.eval(s);
            prop_assert!(b >= 0.0 && b1 >= 0.0 && b2 >= 0.0);
            if s <= 0.0 { prop_assert_eq!(b, 0.0); }
            prop_assert!(b - s * b1 <= 1e-12 * b.abs().max(1.0));
            let t = s + ds;
            let (bt, b1t, _) = p.eval(t);
            prop_assert!(bt >= b);
            prop_assert!(b1t >= b1);
            // Convexity: chord lies above the function at the midpoint.
            let mid = p.beta(0.5 * (s + t));
            prop_assert!(mid <= 0.5 * (b + bt) + 1e-12 * bt.abs().max(1.0));
        }

        #[test]
        fn coupling_strictly_increasing(a in 1e-3f64..50.0, b in 1e-3f64..50.0, alpha in 0.05f64..1.0) {
            prop_assume!((a - b).abs() > 1e-9);
            for law in [CouplingLaw::Log, CouplingLaw::Power { alpha }] {
                let ga = law.g(a).unwrap();
                let gb = law.g(b).unwrap();
                prop_assert!((ga - gb) * (a - b) > 0.0);
            }
        }

        #[test]
        fn lagrangian_lower_bound(p0 in -5.0f64..5.0, p1 in -5.0f64..5.0, vmax in 0.0f64..2.0, k in 0usize..8) {
            let grid = PeriodicGrid::new(2, 4).unwrap();
            let v = grid.from_fn(|x| vmax * x[0]);
            let h = HamiltonianSpec::quadratic(vec![v.clone()]).unwrap();
            let p = [p0, p1];
            let hv = h.eval_h(1.0, 0, k, &p);
            let dp = h.eval_dp_h(1.0, 0, k, &p);
            let lhs = hv - dp[0] * p0 - dp[1] * p1;
            prop_assert!(lhs <= -hv + 2.0 * v.max() + 1e-12);
        }
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn alpha0_matches_root_finder() {
        assert!(compute_alpha0(1).is_infinite());
        assert!(compute_alpha0(2).is_infinite());
        for n in 3..=6usize {
            let nf = n as f64;
            let b = (nf / (nf - 2.0)).sqrt();
            let root = bisect(|a| 2.0 * a - (a + 1.0) * b * (b - 1.0), 0.0, 100.0);
            assert!((compute_alpha0(n) - root).abs() < 1e-12, "N={n}");
        }
        assert!((compute_alpha0(3) - 3f64.sqrt()).abs() < 1e-12);
        assert!((compute_alpha0(4) - (2f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn validation_examples() {
        let m = flat_model(1, 16, CouplingLaw::Log, 0.0);
        let r = validate(&m);
        assert!(r.passed(), "{r:?}");

        let m = flat_model(3, 4, CouplingLaw::Power { alpha: 0.9 }, 0.0);
        let r = validate(&m);
        assert!(!r.passed());
        assert_eq!(r.get(checks::P_2_N).unwrap().status, CheckStatus::Fail);

        let m = flat_model(1, 16, CouplingLaw::Power { alpha: 0.5 }, 1.2);
        let r = validate(&m);
        let osc = r.get(checks::OSCILLATION).unwrap();
        assert_eq!(osc.status, CheckStatus::Fail);
        assert!((osc.witness.as_ref().unwrap().value - 1.2).abs() < 1e-12);
        assert_eq!(r.get(checks::POTENTIAL_GRADIENT).unwrap().status, CheckStatus::NotEnforced);

        let m = flat_model(1, 16, CouplingLaw::Power { alpha: 0.0 }, 0.1);
        assert_eq!(validate(&m).get(checks::COUPLING_INCREASING).unwrap().status, CheckStatus::Fail);
    }

    #[test]
    fn validation_flags_nonpositive_cost_and_negative_potential() {
        let grid = PeriodicGrid::new(1, 8).unwrap();
        let v = grid.from_fn(|x| (2.0 * PI * x[0]).cos());
        let h = HamiltonianSpec::quadratic(vec![v, grid.zeros()]).unwrap();
        let c = SwitchingCosts::from_fn(&grid, 2, |i, _| grid.constant(if i == 0 { 0.0 } else { 1.0 }))
            .unwrap();
        let m = ModelSpec::new(h, CouplingLaw::Log, c, PenaltyFamily::Cubic, 1.0).unwrap();
        let r = validate(&m);
        let neg = r.get(checks::HAMILTONIAN_NONNEGATIVE).unwrap();
        assert_eq!(neg.status, CheckStatus::Fail);
        assert_eq!(neg.witness.as_ref().unwrap().point, 4);
        let cost = r.get(checks::COST_POSITIVE).unwrap();
        assert_eq!(cost.status, CheckStatus::Fail);
        assert!(cost.detail.contains("psi^12"), "{}", cost.detail);
    }
}
