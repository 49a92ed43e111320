//! Relativistic continuation of the truncated Schwinger functions.
//!
//! The truncated Wightman distributions are never represented as functions.
//! A [`WightmanTermList`] stores the on-shell structure of every term and is
//! evaluated on parametrized configurations: spatial momenta are free,
//! energies sit on the mass shells and one momentum is fixed by
//! conservation. Smeared values on Hermite test functions use a regrouping
//! of adjacent terms in which the pole of every single term cancels, so the
//! shell integrands are smooth and need no pole prescription.
//!
//! Momenta have the time component at index 0; the Minkowski square is
//! `k² = (k⁰)² − |k⃗|²` and test functions are transformed with
//! `f̃(k) = ∫ f(x) e^{−i(k⁰t − k⃗·x⃗)} dx`. Every momentum integral carries
//! the measure `d^{d−1}k/(2π)^{d−1}`; with it the constant in front of the
//! `n ≥ 3` terms is `Π_r b_{l_r}` and the two-point term carries
//! `b_l/Π_l m_l²`.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::levy::cumulant_tensor;
use crate::model::ValidatedModel;
use crate::polynomial::{unflatten, CovariantPolynomial};
use crate::propagator::partial_fractions;
use crate::quadrature::hermite_function_table;
use crate::schwinger::{integrate_line, schwinger2_truncated, schwinger_n_truncated, vertex_polynomial, VertexLattice};
use crate::truncation::partitions;

/// Minimum distance `|k_j² − m_j²|` of a pole momentum from its mass shell.
pub const POLE_WINDOW: f64 = 1e-6;

/// Default order of the Schwartz-type test-function norm.
pub const DEFAULT_NORM_ORDER: usize = 4;

/// Below this `|A_r|` a divided difference of the regrouped integrand is
/// replaced by a central difference of the same step.
const DIVIDED_DIFFERENCE_STEP: f64 = 1e-5;

/// Largest number of quadrature nodes in one shell integral.
const MAX_SHELL_NODES: usize = 1 << 23;

/// `Q^M(k) = Q^E((ik⁰, k⃗))` in every argument.
pub fn continue_qm(q_e: &CovariantPolynomial) -> CovariantPolynomial {
    q_e.continue_to_minkowski()
}

/// `k² = (k⁰)² − |k⃗|²`.
pub fn minkowski_square(k: &[f64]) -> f64 {
    k[0] * k[0] - k[1..].iter().map(|x| x * x).sum::<f64>()
}

fn spatial_norm2(k: &[f64]) -> f64 {
    k.iter().map(|x| x * x).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShellSign {
    Plus,
    Minus,
}

/// A momentum on the mass shell `k⁰ = ±ω(k⃗)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShellMomentum {
    pub mass: f64,
    pub sign: ShellSign,
    pub spatial: Vec<f64>,
    pub energy: f64,
    norm2: f64,
}

impl ShellMomentum {
    pub fn new(mass: f64, sign: ShellSign, spatial: Vec<f64>) -> Self {
        let norm2 = spatial_norm2(&spatial);
        let omega = (norm2 + mass * mass).sqrt();
        let energy = match sign {
            ShellSign::Plus => omega,
            ShellSign::Minus => -omega,
        };
        ShellMomentum {
            mass,
            sign,
            spatial,
            energy,
            norm2,
        }
    }

    /// `ω(k⃗) = √(|k⃗|² + m²)`.
    pub fn omega(&self) -> f64 {
        self.energy.abs()
    }

    pub fn four_vector(&self) -> Vec<f64> {
        let mut k = Vec::with_capacity(self.spatial.len() + 1);
        k.push(self.energy);
        k.extend_from_slice(&self.spatial);
        k
    }

    pub fn invariant_mass_squared(&self) -> f64 {
        minkowski_square(&self.four_vector())
    }

    /// Plus shells in the closed forward cone, minus shells in the backward
    /// one. Exact: the energy is the root of `|k⃗|² + m²` with the same `|k⃗|²`.
    pub fn in_closed_cone(&self) -> bool {
        let spatial = self.norm2.sqrt();
        match self.sign {
            ShellSign::Plus => self.energy >= spatial,
            ShellSign::Minus => -self.energy >= spatial,
        }
    }
}

/// Role of one argument inside a term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    /// Negative-energy shell `δ⁻_m`.
    Minus,
    /// Off-shell argument fixed by conservation, with factor `−1/(k² − m²)`.
    Pole,
    /// Positive-energy shell `δ⁺_m`.
    Plus,
    /// Two-point partner fixed by conservation, no extra factor.
    Conserved,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WightmanTerm {
    pub slots: Vec<Slot>,
}

impl WightmanTerm {
    pub fn pole(&self) -> Option<usize> {
        self.slots.iter().position(|s| *s == Slot::Pole)
    }

    /// Slots whose spatial momentum is a free parameter.
    pub fn free_slots(&self) -> Vec<usize> {
        (0..self.slots.len())
            .filter(|&l| matches!(self.slots[l], Slot::Minus | Slot::Plus))
            .collect()
    }
}

/// `Ŵ^T_n` for one mass assignment: the sum of its terms times
/// `couplings · Q^M_n`, with the conservation delta stripped.
#[derive(Clone, Debug)]
pub struct WightmanTermList {
    pub order: usize,
    pub dim: usize,
    /// Spectrum entry of every argument.
    pub assignment: Vec<usize>,
    pub masses: Vec<f64>,
    pub terms: Vec<WightmanTerm>,
    pub couplings: f64,
    pub q_m: CovariantPolynomial,
}

/// Spatial momenta of the free slots of every term, and the field indices.
#[derive(Clone, Debug, PartialEq)]
pub struct OnshellConfig {
    pub indices: Vec<usize>,
    /// `spatial[term][i]` belongs to the `i`-th free slot of that term.
    pub spatial: Vec<Vec<Vec<f64>>>,
}

/// Momenta of one term at one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TermMomenta {
    pub momenta: Vec<Vec<f64>>,
    pub shells: Vec<Option<ShellMomentum>>,
    /// Pole slot and its distance `k_j² − m_j²` from the shell.
    pub pole: Option<(usize, f64)>,
}

fn check_assignment(n: usize, assignment: &[usize], model: &ValidatedModel) -> Result<()> {
    if assignment.len() != n {
        return Err(Error::Domain(format!(
            "mass assignment has {} entries, expected {n}",
            assignment.len()
        )));
    }
    let p = model.spectrum().len();
    if let Some(l) = assignment.iter().find(|&&l| l >= p) {
        return Err(Error::Domain(format!("mass index {l} out of range for {p} masses")));
    }
    Ok(())
}

/// Constant in front of the terms of one mass assignment: `Π_r b_{l_r}` for
/// `n ≥ 3` and `b_l / Π m_l²` for the two-point function, which requires
/// both arguments on the same mass.
pub fn coupling_prefactor(model: &ValidatedModel, assignment: &[usize]) -> Result<f64> {
    model.require_no_dipole()?;
    let n = assignment.len();
    if n < 2 {
        return Err(Error::Domain(format!("Wightman terms need n >= 2, got {n}")));
    }
    check_assignment(n, assignment, model)?;
    let b = partial_fractions(model.spectrum())?.coefficients;
    if n == 2 {
        if assignment[0] != assignment[1] {
            return Ok(0.0);
        }
        return Ok(b[assignment[0]] / model.spectrum().mass_normalization());
    }
    Ok(assignment.iter().map(|&l| b[l]).product())
}

/// `Q^M_n` built from the cumulant vertex polynomial.
pub fn minkowski_vertex(n: usize, model: &ValidatedModel) -> Result<CovariantPolynomial> {
    Ok(continue_qm(&vertex_polynomial(n, model)?))
}

pub fn build_wightman_terms(n: usize, assignment: &[usize], model: &ValidatedModel) -> Result<WightmanTermList> {
    if n < 2 {
        return Err(Error::Domain(format!("Wightman terms need n >= 2, got {n}")));
    }
    model.require_no_dipole()?;
    build_wightman_terms_with(n, assignment, model, minkowski_vertex(n, model)?)
}

/// Term list with a supplied `Q^M_n` in place of the cumulant-built one.
pub fn build_wightman_terms_with(
    n: usize,
    assignment: &[usize],
    model: &ValidatedModel,
    q_m: CovariantPolynomial,
) -> Result<WightmanTermList> {
    if n < 2 {
        return Err(Error::Domain(format!("Wightman terms need n >= 2, got {n}")));
    }
    if q_m.n_args() != n || q_m.field_rank() != n || q_m.dim() != model.d() {
        return Err(Error::Domain(format!(
            "polynomial has {} arguments, {} field slots and dimension {}; expected {n}, {n}, {}",
            q_m.n_args(),
            q_m.field_rank(),
            q_m.dim(),
            model.d()
        )));
    }
    let couplings = coupling_prefactor(model, assignment)?;
    let masses = model.spectrum().masses();
    let terms = if n == 2 {
        vec![WightmanTerm {
            slots: vec![Slot::Minus, Slot::Conserved],
        }]
    } else {
        (0..n)
            .map(|j| WightmanTerm {
                slots: (0..n)
                    .map(|l| match l.cmp(&j) {
                        std::cmp::Ordering::Less => Slot::Minus,
                        std::cmp::Ordering::Equal => Slot::Pole,
                        std::cmp::Ordering::Greater => Slot::Plus,
                    })
                    .collect(),
            })
            .collect()
    };
    Ok(WightmanTermList {
        order: n,
        dim: model.d(),
        assignment: assignment.to_vec(),
        masses: assignment.iter().map(|&l| masses[l]).collect(),
        terms,
        couplings,
        q_m,
    })
}

impl WightmanTermList {
    /// True when `Q^M_n` or the couplings vanish, so every value is zero.
    pub fn is_trivial(&self) -> bool {
        self.q_m.is_empty() || self.couplings == 0.0
    }

    pub fn term_momenta(&self, term: usize, spatial: &[Vec<f64>]) -> Result<TermMomenta> {
        let t = self
            .terms
            .get(term)
            .ok_or_else(|| Error::Domain(format!("term {term} out of range")))?;
        let free = t.free_slots();
        if spatial.len() != free.len() {
            return Err(Error::Domain(format!(
                "term {term} takes {} spatial momenta, got {}",
                free.len(),
                spatial.len()
            )));
        }
        let sd = self.dim - 1;
        if let Some(p) = spatial.iter().find(|p| p.len() != sd) {
            return Err(Error::Domain(format!(
                "spatial momentum has {} components, expected {sd}",
                p.len()
            )));
        }
        if spatial.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Domain("spatial momenta must be finite".into()));
        }
        let n = self.order;
        let mut shells: Vec<Option<ShellMomentum>> = vec![None; n];
        for (p, &l) in spatial.iter().zip(&free) {
            let sign = if t.slots[l] == Slot::Minus {
                ShellSign::Minus
            } else {
                ShellSign::Plus
            };
            shells[l] = Some(ShellMomentum::new(self.masses[l], sign, p.clone()));
        }
        let mut total = vec![0.0; self.dim];
        for s in shells.iter().flatten() {
            for (acc, v) in total.iter_mut().zip(s.four_vector()) {
                *acc += v;
            }
        }
        let fixed: Vec<f64> = total.iter().map(|v| -v).collect();
        let mut momenta = vec![Vec::new(); n];
        let mut pole = None;
        for l in 0..n {
            momenta[l] = match (&shells[l], t.slots[l]) {
                (Some(s), _) => s.four_vector(),
                (None, Slot::Pole) => {
                    pole = Some((l, minkowski_square(&fixed) - self.masses[l] * self.masses[l]));
                    fixed.clone()
                }
                (None, _) => fixed.clone(),
            };
        }
        Ok(TermMomenta { momenta, shells, pole })
    }

    /// Counts shell momenta outside their closed cone (plus shells forward,
    /// minus shells backward).
    pub fn spectral_violations(&self, term: usize, spatial: &[Vec<f64>]) -> Result<usize> {
        let tm = self.term_momenta(term, spatial)?;
        Ok(tm.shells.iter().flatten().filter(|s| !s.in_closed_cone()).count())
    }

    /// Density of one term: `Π(2ω)⁻¹ · (−1)/(k_j² − m_j²) · couplings · Q^M_n`.
    pub fn term_value(&self, term: usize, indices: &[usize], spatial: &[Vec<f64>]) -> Result<Complex64> {
        if indices.len() != self.order {
            return Err(Error::Domain(format!(
                "expected {} field indices, got {}",
                self.order,
                indices.len()
            )));
        }
        let tm = self.term_momenta(term, spatial)?;
        let mut factor = self.couplings;
        for s in tm.shells.iter().flatten() {
            factor /= 2.0 * s.omega();
        }
        if let Some((_, distance)) = tm.pole {
            if distance.abs() <= POLE_WINDOW {
                return Err(Error::NearPole { term, distance });
            }
            factor *= -1.0 / distance;
        }
        if self.is_trivial() {
            return Ok(Complex64::default());
        }
        Ok(self.q_m.evaluate_real(indices, &tm.momenta) * factor)
    }
}

/// Result of [`spectral_scan`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SpectralScan {
    pub configurations: usize,
    pub shells: usize,
    pub violations: usize,
}

/// Checks the cone condition of every shell momentum of every term on
/// `configurations` random spatial configurations with components uniform
/// in `[−scale, scale]`.
pub fn spectral_scan(terms: &WightmanTermList, configurations: usize, seed: u64, scale: f64) -> Result<SpectralScan> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Config(format!("scan scale must be positive, got {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = terms.dim - 1;
    let mut scan = SpectralScan {
        configurations,
        shells: 0,
        violations: 0,
    };
    for _ in 0..configurations {
        for (t, term) in terms.terms.iter().enumerate() {
            let spatial: Vec<Vec<f64>> = (0..term.free_slots().len())
                .map(|_| (0..sd).map(|_| rng.random_range(-scale..=scale)).collect())
                .collect();
            let tm = terms.term_momenta(t, &spatial)?;
            for s in tm.shells.iter().flatten() {
                scan.shells += 1;
                if !s.in_closed_cone() {
                    scan.violations += 1;
                }
            }
        }
    }
    Ok(scan)
}

/// Sum over terms of the term densities, each at its own configuration.
pub fn evaluate_onshell(terms: &WightmanTermList, config: &OnshellConfig) -> Result<Complex64> {
    if config.spatial.len() != terms.terms.len() {
        return Err(Error::Domain(format!(
            "configuration has {} terms, the list has {}",
            config.spatial.len(),
            terms.terms.len()
        )));
    }
    let mut acc = Complex64::default();
    for (t, spatial) in config.spatial.iter().enumerate() {
        acc += terms.term_value(t, &config.indices, spatial)?;
    }
    Ok(acc)
}

/// The configuration obtained by reversing the argument order and
/// negating every momentum, `k'_{n+1−l} = −k_l`, with the mass assignment
/// and field indices reversed.
pub fn conjugate_reversed(terms: &WightmanTermList, config: &OnshellConfig) -> Result<(Vec<usize>, OnshellConfig)> {
    let n = terms.order;
    let mut assignment = terms.assignment.clone();
    assignment.reverse();
    let mut indices = config.indices.clone();
    indices.reverse();
    let mut spatial = vec![Vec::new(); terms.terms.len()];
    for (t, given) in config.spatial.iter().enumerate() {
        let tm = terms.term_momenta(t, given)?;
        let target = if n == 2 { 0 } else { n - 1 - t };
        let free = terms.terms[target].free_slots();
        spatial[target] = free.iter().map(|&l| tm.momenta[n - 1 - l][1..].iter().map(|v| -v).collect()).collect();
    }
    Ok((assignment, OnshellConfig { indices, spatial }))
}

/// `|value(conjugate-reversed) − conj(value)|`, which vanishes for real
/// cumulants and a real, parity-even `Q^M_n`.
pub fn hermiticity_gap(model: &ValidatedModel, terms: &WightmanTermList, config: &OnshellConfig) -> Result<f64> {
    let value = evaluate_onshell(terms, config)?;
    let (assignment, reversed) = conjugate_reversed(terms, config)?;
    let mirror = build_wightman_terms_with(terms.order, &assignment, model, terms.q_m.clone())?;
    Ok((evaluate_onshell(&mirror, &reversed)? - value.conj()).norm())
}

// ---------------------------------------------------------------------------
// Fourier–Laplace representation.

/// Euclidean value, its shell-integral representation and their relative gap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FourierLaplaceCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

impl FourierLaplaceCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        let gap = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        FourierLaplaceCheck { lhs, rhs, gap }
    }
}

fn require_scalar_single_mass(model: &ValidatedModel) -> Result<f64> {
    model.require_no_dipole()?;
    if model.n_fields() != 1 || model.spectrum().len() != 1 {
        return Err(Error::Domain(
            "the closed-form shell path needs a scalar model with a single mass".into(),
        ));
    }
    Ok(model.spectrum().entries[0].m)
}

/// `∫ d^dims k f(k)` by the tensor trapezoid rule in `k_i = a sinh u_i`,
/// `|u_i| ≤ 7`, refining the step until two levels agree to `rel_tol`.
fn sinh_trapezoid(dims: usize, a: f64, f: &dyn Fn(&[f64]) -> f64, rel_tol: f64) -> Result<f64> {
    const TOP: f64 = 7.0;
    let mut previous: Option<f64> = None;
    let mut nodes = 29;
    loop {
        let rule = sinh_rule(nodes, a, a * TOP.sinh());
        let value = integrate_nodes(&rule, dims, |k| Complex64::new(f(k), 0.0))?.re;
        if let Some(p) = previous {
            if (value - p).abs() <= rel_tol * value.abs() {
                return Ok(value);
            }
        }
        previous = Some(value);
        nodes += nodes / 2;
    }
}

/// `S₂^T(τ, x⃗)` against `b/m² ∫ e^{−ω|τ| + ik⃗·x⃗} Q^M_2(k, −k)/(2ω)` with
/// `k = (ω sgn τ, k⃗)`.
pub fn fourier_laplace_check(model: &ValidatedModel, x: &[f64]) -> Result<FourierLaplaceCheck> {
    let m = require_scalar_single_mass(model)?;
    let d = model.d();
    if x.len() != d {
        return Err(Error::Domain(format!("separation has {} components, expected {d}", x.len())));
    }
    let tau = x[0];
    if tau == 0.0 || !tau.is_finite() {
        return Err(Error::Domain("the shell representation needs a finite τ ≠ 0".into()));
    }
    let lhs = schwinger2_truncated(x, 0, 0, model)?;
    let q_m = minkowski_vertex(2, model)?;
    let couplings = coupling_prefactor(model, &[0, 0])?;
    let sign = tau.signum();
    let shell = |spatial: &[f64]| -> f64 {
        let omega = (spatial_norm2(spatial) + m * m).sqrt();
        let mut k = vec![sign * omega];
        k.extend_from_slice(spatial);
        let neg: Vec<f64> = k.iter().map(|v| -v).collect();
        let phase: f64 = spatial.iter().zip(&x[1..]).map(|(a, b)| a * b).sum();
        let q = q_m.evaluate_real(&[0, 0], &[k, neg]);
        (Complex64::from_polar(1.0, phase) * q).re * (-omega * tau.abs()).exp()
    };
    let rhs = if d == 2 {
        // k = m sinh u absorbs the 1/(2ω) Jacobian
        integrate_line(|u| shell(&[m * u.sinh()]) / (4.0 * PI), 0.0, 1e-12)?
    } else {
        let norm = (2.0 * PI).powi(d as i32 - 1);
        sinh_trapezoid(
            d - 1,
            m,
            &|k: &[f64]| shell(k) / (2.0 * (spatial_norm2(k) + m * m).sqrt() * norm),
            1e-10,
        )?
    };
    Ok(FourierLaplaceCheck::new(lhs, couplings * rhs))
}

/// `∫dτ Π_l e^{−ω_l|τ_l − τ|}` as the sum over time intervals, with every
/// interval written as a stable divided difference.
fn euclidean_time_integral(times: &[f64], omegas: &[f64]) -> f64 {
    let n = times.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| times[*a].total_cmp(&times[*b]));
    let tau: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    let w: Vec<f64> = order.iter().map(|&i| omegas[i]).collect();
    let total: f64 = w.iter().sum();
    let log_u = |r: usize| -(0..n).map(|l| w[l] * (tau[l] - tau[r]).abs()).sum::<f64>();
    let mut a = -total;
    let mut acc = log_u(0).exp() / total;
    for r in 0..n - 1 {
        a += 2.0 * w[r];
        let gap = tau[r + 1] - tau[r];
        // scale by whichever end of the interval carries the larger weight
        acc += if a == 0.0 {
            log_u(r).exp() * gap
        } else if a > 0.0 {
            log_u(r).exp() * -(-a * gap).exp_m1() / a
        } else {
            (log_u(r) - a * gap).exp() * -(a * gap).exp_m1() / -a
        };
    }
    acc + log_u(n - 1).exp() / total
}

/// `S_n^T` for `n ≥ 3` from the vertex lattice against its shell-integral
/// representation, for a scalar single-mass model with constant `Q_E`.
pub fn fourier_laplace_vertex(model: &ValidatedModel, points: &[Vec<f64>]) -> Result<FourierLaplaceCheck> {
    let m = require_scalar_single_mass(model)?;
    let n = points.len();
    let d = model.d();
    if n < 3 {
        return Err(Error::Domain(format!("the vertex check needs n >= 3, got {n}")));
    }
    if (n - 1) * (d - 1) > 3 {
        return Err(Error::Config(format!(
            "shell integral of dimension {} exceeds the supported 3",
            (n - 1) * (d - 1)
        )));
    }
    let q_m = minkowski_vertex(n, model)?;
    if q_m.max_degree_per_arg() > 0 {
        return Err(Error::Domain("the vertex check needs a constant vertex polynomial".into()));
    }
    let zeros = vec![vec![0.0; d]; n];
    let constant = q_m.evaluate_real(&vec![0; n], &zeros).re;
    let indices = vec![0; n];
    let lhs = schwinger_n_truncated(points, &indices, model, &VertexLattice::for_points(model, points))?;
    let couplings = coupling_prefactor(model, &indices)?;
    let sd = d - 1;
    let times: Vec<f64> = points.iter().map(|p| p[0]).collect();
    let norm = (2.0 * PI).powi(((n - 1) * sd) as i32);
    let integrand = |free: &[f64]| -> f64 {
        let mut spatial: Vec<Vec<f64>> = free.chunks(sd).map(<[f64]>::to_vec).collect();
        let last: Vec<f64> = (0..sd).map(|mu| -spatial.iter().map(|k| k[mu]).sum::<f64>()).collect();
        spatial.push(last);
        let omegas: Vec<f64> = spatial.iter().map(|k| (spatial_norm2(k) + m * m).sqrt()).collect();
        let phase: f64 = spatial
            .iter()
            .zip(points)
            .map(|(k, p)| k.iter().zip(&p[1..]).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let jac: f64 = omegas.iter().map(|w| 1.0 / (2.0 * w)).product();
        phase.cos() * jac * euclidean_time_integral(&times, &omegas) / norm
    };
    let rhs = sinh_trapezoid((n - 1) * sd, m, &integrand, 1e-6)?;
    Ok(FourierLaplaceCheck::new(lhs, couplings * constant * rhs))
}

// ---------------------------------------------------------------------------
// Test functions.

/// Product of scaled Hermite functions `Π_μ ψ_{n_μ}((x_μ − c_μ)/w_μ)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HermiteFunction {
    pub orders: Vec<u32>,
    pub center: Vec<f64>,
    pub width: Vec<f64>,
}

fn hermite_fn(n: u32, u: f64) -> f64 {
    hermite_function_table(n as usize, u)[n as usize]
}

impl HermiteFunction {
    pub fn new(orders: Vec<u32>, center: Vec<f64>, width: Vec<f64>) -> Result<Self> {
        if orders.is_empty() || orders.len() != center.len() || orders.len() != width.len() {
            return Err(Error::Domain("orders, center and width need one entry per dimension".into()));
        }
        if width.iter().any(|w| !(w.is_finite() && *w > 0.0)) || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("widths must be positive and centers finite".into()));
        }
        Ok(HermiteFunction { orders, center, width })
    }

    pub fn gaussian(center: Vec<f64>, width: f64) -> Self {
        let d = center.len();
        HermiteFunction {
            orders: vec![0; d],
            center,
            width: vec![width; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.orders.len()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (0..self.dim())
            .map(|mu| hermite_fn(self.orders[mu], (x[mu] - self.center[mu]) / self.width[mu]))
            .product()
    }

    /// `∫ ψ_n((y − c)/w) e^{−iqy} dy = w √(2π) (−i)^n ψ_n(wq) e^{−iqc}`.
    fn factor(&self, mu: usize, q: f64) -> Complex64 {
        let (n, w, c) = (self.orders[mu], self.width[mu], self.center[mu]);
        let phase = match n % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, -1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, 1.0),
        };
        phase * Complex64::from_polar(w * (2.0 * PI).sqrt() * hermite_fn(n, w * q), -q * c)
    }

    /// `f̃(k) = ∫ f(x) e^{−i(k⁰t − k⃗·x⃗)} dx`.
    pub fn transform(&self, k: &[f64]) -> Complex64 {
        let mut v = self.factor(0, k[0]);
        for mu in 1..self.dim() {
            v *= self.factor(mu, -k[mu]);
        }
        v
    }

    fn spatial_transform(&self, k: &[f64]) -> Complex64 {
        let mut v = Complex64::new(1.0, 0.0);
        for mu in 1..self.dim() {
            v *= self.factor(mu, -k[mu - 1]);
        }
        v
    }

    pub fn translated(&self, shift: &[f64]) -> Self {
        let mut out = self.clone();
        for (c, s) in out.center.iter_mut().zip(shift) {
            *c += s;
        }
        out
    }

    /// `max_{|α|≤K, |β|≤K} sup_x |x^α ∂^β f(x)|`, the supremum taken on a
    /// fine grid. The product form factorizes the supremum per coordinate.
    pub fn schwartz_norm(&self, order: usize) -> f64 {
        let d = self.dim();
        // sups[mu][a][b] = sup |x^a ∂^b φ_μ|
        let sups: Vec<Vec<Vec<f64>>> = (0..d).map(|mu| self.coordinate_sups(mu, order)).collect();
        let multi = multi_indices(d, order);
        let mut best = 0.0f64;
        for alpha in &multi {
            for beta in &multi {
                let v: f64 = (0..d).map(|mu| sups[mu][alpha[mu]][beta[mu]]).product();
                best = best.max(v);
            }
        }
        best
    }

    fn coordinate_sups(&self, mu: usize, order: usize) -> Vec<Vec<f64>> {
        let (n, w, c) = (self.orders[mu] as usize, self.width[mu], self.center[mu]);
        // ∂^b ψ_n as coefficients over ψ_0..ψ_{n+b}:  ψ_j' = √(j/2) ψ_{j−1} − √((j+1)/2) ψ_{j+1}
        let top = n + order;
        let mut derivs = vec![vec![0.0; top + 2]];
        derivs[0][n] = 1.0;
        for b in 1..=order {
            let prev = &derivs[b - 1];
            let mut next = vec![0.0; top + 2];
            for (j, &cj) in prev.iter().enumerate() {
                if cj == 0.0 {
                    continue;
                }
                if j > 0 {
                    next[j - 1] += cj * (j as f64 / 2.0).sqrt();
                }
                if j < top {
                    next[j + 1] -= cj * ((j + 1) as f64 / 2.0).sqrt();
                }
            }
            derivs.push(next);
        }
        let mut sups = vec![vec![0.0f64; order + 1]; order + 1];
        let half = (2.0 * top as f64 + 1.0).sqrt() + 14.0;
        let steps = 12_000;
        for i in 0..=steps {
            let u = -half + 2.0 * half * i as f64 / steps as f64;
            let table = hermite_function_table(top + 1, u);
            let x = c + w * u;
            for (b, coeffs) in derivs.iter().enumerate() {
                let db: f64 = coeffs.iter().zip(&table).map(|(a, t)| a * t).sum::<f64>() / w.powi(b as i32);
                for (a, row) in sups.iter_mut().enumerate() {
                    row[b] = row[b].max((x.powi(a as i32) * db).abs());
                }
            }
        }
        sups
    }
}

/// All multi-indices in `d` variables of total order at most `order`.
fn multi_indices(d: usize, order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; d];
    fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == cur.len() {
            out.push(cur.clone());
            return;
        }
        for v in 0..=left {
            cur[pos] = v;
            rec(pos + 1, left - v, cur, out);
        }
        cur[pos] = 0;
    }
    rec(0, order, &mut cur, &mut out);
    out
}

/// Finite basis of test functions with its norm order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestFunctionFamily {
    pub functions: Vec<HermiteFunction>,
    pub norm_order: usize,
}

impl TestFunctionFamily {
    /// Centered Hermite products of total order at most `max_order`.
    pub fn hermite(d: usize, max_order: usize, width: f64) -> Self {
        let functions = multi_indices(d, max_order)
            .into_iter()
            .map(|orders| HermiteFunction {
                orders: orders.into_iter().map(|o| o as u32).collect(),
                center: vec![0.0; d],
                width: vec![width; d],
            })
            .collect();
        TestFunctionFamily {
            functions,
            norm_order: DEFAULT_NORM_ORDER,
        }
    }

    pub fn norms(&self) -> Vec<f64> {
        self.functions.iter().map(|f| f.schwartz_norm(self.norm_order)).collect()
    }
}

// ---------------------------------------------------------------------------
// Smeared truncated Wightman functions.

/// One argument of a smeared Wightman function: a field component and a
/// test function.
#[derive(Clone, Debug, PartialEq)]
pub struct SmearedSlot {
    pub field: usize,
    pub function: HermiteFunction,
}

/// Tensor-product trapezoid rule in `k = a sinh u` per spatial component,
/// applied at `nodes` and at the refined count; the two must agree to
/// `abs_tol`. The substitution keeps the branch points of `ω(k⃗)` at
/// `|Im u| ≥ π/2`, so the rule converges geometrically.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShellQuadrature {
    pub nodes: usize,
    pub abs_tol: f64,
}

impl Default for ShellQuadrature {
    fn default() -> Self {
        ShellQuadrature {
            nodes: 32,
            abs_tol: 1e-8,
        }
    }
}

impl ShellQuadrature {
    pub fn refined_nodes(&self) -> usize {
        self.nodes + self.nodes / 2
    }
}

/// Model data shared by all smeared evaluations.
pub struct Smearing<'a> {
    model: &'a ValidatedModel,
    b: Vec<f64>,
    masses: Vec<f64>,
    /// `Q^M_n` by order, index `n − 2`.
    q_m: Vec<CovariantPolynomial>,
    mean: Vec<f64>,
}

impl<'a> Smearing<'a> {
    pub fn new(model: &'a ValidatedModel, max_order: usize) -> Result<Self> {
        model.require_no_dipole()?;
        let b = partial_fractions(model.spectrum())?.coefficients;
        let q_m = (2..=max_order.max(2))
            .map(|n| minkowski_vertex(n, model))
            .collect::<Result<Vec<_>>>()?;
        let nf = model.n_fields();
        let c1 = cumulant_tensor(1, model.levy())?.raised(model.metric_inverse());
        let zero = vec![vec![0.0; model.d()]];
        let norm = model.spectrum().mass_normalization();
        let mean = (0..nf)
            .map(|a| {
                (0..nf)
                    .map(|beta| c1.entries[beta] * model.q_e().evaluate_real(&[beta, a], &zero).re)
                    .sum::<f64>()
                    / norm
            })
            .collect();
        Ok(Smearing {
            model,
            b,
            masses: model.spectrum().masses(),
            q_m,
            mean,
        })
    }

    /// Replaces `Q^M_n` for one order.
    pub fn with_polynomial(mut self, n: usize, q_m: CovariantPolynomial) -> Result<Self> {
        if n < 2 || n > self.q_m.len() + 1 || q_m.n_args() != n || q_m.field_rank() != n {
            return Err(Error::Domain(format!("no polynomial slot of order {n}")));
        }
        self.q_m[n - 2] = q_m;
        Ok(self)
    }

    /// `⟨φ_α⟩`: the constant one-point function.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    fn check_slots(&self, slots: &[SmearedSlot]) -> Result<()> {
        let n = slots.len();
        if n == 0 || n > self.q_m.len() + 1 {
            return Err(Error::Domain(format!(
                "smeared order {n} outside 1..={}",
                self.q_m.len() + 1
            )));
        }
        for s in slots {
            if s.field >= self.model.n_fields() {
                return Err(Error::Domain(format!("field index {} out of range", s.field)));
            }
            if s.function.dim() != self.model.d() {
                return Err(Error::Domain(format!(
                    "test function of dimension {} for a model in d = {}",
                    s.function.dim(),
                    self.model.d()
                )));
            }
        }
        Ok(())
    }

    /// `W^T_n(f₁ ⊗ … ⊗ fₙ)` at one node count.
    pub fn truncated_at(&self, slots: &[SmearedSlot], nodes: usize) -> Result<Complex64> {
        self.check_slots(slots)?;
        let n = slots.len();
        if n == 1 {
            let zero = vec![0.0; self.model.d()];
            return Ok(self.mean[slots[0].field] * slots[0].function.transform(&zero));
        }
        let q = &self.q_m[n - 2];
        if q.is_empty() {
            return Ok(Complex64::default());
        }
        let fields: Vec<usize> = slots.iter().map(|s| s.field).collect();
        let width = slots
            .iter()
            .flat_map(|s| s.function.width.iter().copied())
            .fold(f64::INFINITY, f64::min);
        let top = slots
            .iter()
            .flat_map(|s| s.function.orders.iter().copied())
            .max()
            .unwrap_or(0);
        let reach = ((2.0 * top as f64 + 1.0).sqrt() + 9.0) / width;
        let min_mass = self.masses.iter().copied().fold(f64::INFINITY, f64::min);
        // displaced centers make the integrand oscillate on the scale 1/spread
        let spread = slots
            .iter()
            .flat_map(|a| slots.iter().map(move |b| (a, b)))
            .map(|(a, b)| {
                a.function
                    .center
                    .iter()
                    .zip(&b.function.center)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let nodes = (nodes as f64 * (1.0 + spread / width)).ceil() as usize;
        let rule = sinh_rule(nodes, min_mass, reach);
        let sd = self.model.d() - 1;
        let p = self.masses.len();
        let constant = (q.max_degree_per_arg() == 0).then(|| {
            let zeros = vec![vec![0.0; sd + 1]; n];
            q.evaluate_real(&fields, &zeros)
        });
        let mut total = Complex64::default();
        if n == 2 {
            let norm = self.model.spectrum().mass_normalization();
            for l in 0..p {
                let couplings = self.b[l] / norm;
                let m = self.masses[l];
                total += couplings
                    * integrate_nodes(&rule, sd, |k| {
                        let omega = (spatial_norm2(k) + m * m).sqrt();
                        let mut k1 = vec![-omega];
                        k1.extend_from_slice(k);
                        let k2: Vec<f64> = k1.iter().map(|v| -v).collect();
                        let qv = constant.unwrap_or_else(|| q.evaluate_real(&fields, &[k1.clone(), k2.clone()]));
                        qv * slots[0].function.transform(&k1) * slots[1].function.transform(&k2) / (2.0 * omega)
                    })?;
            }
            return Ok(total / (2.0 * PI).powi(sd as i32));
        }
        for flat in 0..p.pow(n as u32) {
            let assignment = unflatten(flat, p, n);
            let couplings: f64 = assignment.iter().map(|&l| self.b[l]).product();
            let masses: Vec<f64> = assignment.iter().map(|&l| self.masses[l]).collect();
            let mut integrand = RegroupedIntegrand::new(slots, &fields, q, constant, masses);
            total += couplings * integrate_nodes(&rule, (n - 1) * sd, |k| integrand.evaluate(k))?;
        }
        Ok(total / (2.0 * PI).powi(((n - 1) * sd) as i32))
    }

    /// `W^T_n` with the node-refinement check.
    pub fn truncated(&self, slots: &[SmearedSlot], quad: ShellQuadrature) -> Result<Complex64> {
        let coarse = self.truncated_at(slots, quad.nodes)?;
        let fine = self.truncated_at(slots, quad.refined_nodes())?;
        if (fine - coarse).norm() > quad.abs_tol {
            return Err(Error::Tolerance(format!(
                "smeared order-{} value moved by {:e} under node refinement",
                slots.len(),
                (fine - coarse).norm()
            )));
        }
        Ok(fine)
    }

    /// Full `W_n` from its truncated parts, summed over set partitions of
    /// the arguments with the argument order kept inside every block.
    pub fn wightman(&self, slots: &[SmearedSlot], quad: ShellQuadrature) -> Result<Complex64> {
        let mut cache: HashMap<Vec<usize>, Complex64> = HashMap::new();
        let mut acc = Complex64::default();
        for partition in partitions(slots.len())?.partitions {
            let mut term = Complex64::new(1.0, 0.0);
            for block in &partition {
                let value = match cache.get(block) {
                    Some(v) => *v,
                    None => {
                        let sub: Vec<SmearedSlot> = block.iter().map(|&i| slots[i].clone()).collect();
                        let v = self.truncated(&sub, quad)?;
                        cache.insert(block.clone(), v);
                        v
                    }
                };
                term *= value;
            }
            acc += term;
        }
        Ok(acc)
    }
}

/// Trapezoid nodes and weights for `∫ dk` after `k = a sinh u`, covering
/// `|k| ≤ reach`.
fn sinh_rule(nodes: usize, a: f64, reach: f64) -> Vec<(f64, f64)> {
    let nodes = nodes.max(2);
    let top = (reach / a).asinh();
    let h = 2.0 * top / (nodes - 1) as f64;
    (0..nodes)
        .map(|i| {
            let u = -top + h * i as f64;
            (a * u.sinh(), h * a * u.cosh())
        })
        .collect()
}

/// Tensor-product rule over `dims` variables.
fn integrate_nodes(rule: &[(f64, f64)], dims: usize, mut f: impl FnMut(&[f64]) -> Complex64) -> Result<Complex64> {
    let total = rule.len().checked_pow(dims as u32).filter(|&t| t <= MAX_SHELL_NODES);
    if total.is_none() {
        return Err(Error::Config(format!(
            "{} nodes in {dims} dimensions exceed the shell quadrature budget",
            rule.len()
        )));
    }
    let mut idx = vec![0usize; dims];
    let mut point = vec![0.0; dims];
    let mut acc = Complex64::default();
    loop {
        let mut w = 1.0;
        for (i, &j) in idx.iter().enumerate() {
            point[i] = rule[j].0;
            w *= rule[j].1;
        }
        acc += f(&point) * w;
        let mut pos = 0;
        while pos < dims {
            idx[pos] += 1;
            if idx[pos] < rule.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
        if pos == dims {
            return Ok(acc);
        }
    }
}

/// Integrand of the `n ≥ 3` smeared term sum after regrouping:
/// `Π_l(2ω_l)⁻¹ [U_n/A_n − U_1/A_0 + Σ_{r=1}^{n−1} (U_r − U_{r+1})/A_r]`
/// with `A_r = Σ_{l≤r} ω_l − Σ_{l>r} ω_l` and `U_r` the value of
/// `Q^M_n · f̃` on the momenta of term `r`. Adjacent `U` coincide where
/// `A_r = 0`, so the difference quotients are smooth.
struct RegroupedIntegrand<'s> {
    slots: &'s [SmearedSlot],
    fields: &'s [usize],
    q: &'s CovariantPolynomial,
    constant: Option<Complex64>,
    masses: Vec<f64>,
    spatial: Vec<Vec<f64>>,
    omega: Vec<f64>,
    space_factor: Vec<Complex64>,
    energies: Vec<f64>,
}

impl<'s> RegroupedIntegrand<'s> {
    fn new(
        slots: &'s [SmearedSlot],
        fields: &'s [usize],
        q: &'s CovariantPolynomial,
        constant: Option<Complex64>,
        masses: Vec<f64>,
    ) -> Self {
        let n = slots.len();
        let sd = slots[0].function.dim() - 1;
        RegroupedIntegrand {
            slots,
            fields,
            q,
            constant,
            masses,
            spatial: vec![vec![0.0; sd]; n],
            omega: vec![0.0; n],
            space_factor: vec![Complex64::default(); n],
            energies: vec![0.0; n],
        }
    }

    fn value(&self) -> Complex64 {
        let q = self.constant.unwrap_or_else(|| {
            let momenta: Vec<Vec<f64>> = (0..self.slots.len())
                .map(|l| {
                    let mut k = vec![self.energies[l]];
                    k.extend_from_slice(&self.spatial[l]);
                    k
                })
                .collect();
            self.q.evaluate_real(self.fields, &momenta)
        });
        let mut v = q;
        for (l, s) in self.slots.iter().enumerate() {
            v *= s.function.factor(0, self.energies[l]) * self.space_factor[l];
        }
        v
    }

    /// Energies of term `s` (0-based pole slot) with the pole energy `B_s`.
    fn set_term(&mut self, s: usize, pole_energy: f64) {
        for l in 0..self.energies.len() {
            self.energies[l] = match l.cmp(&s) {
                std::cmp::Ordering::Less => -self.omega[l],
                std::cmp::Ordering::Equal => pole_energy,
                std::cmp::Ordering::Greater => self.omega[l],
            };
        }
    }

    /// `F(a)`: slot `s` at `−ω_s + a`, slot `s+1` at `ω_{s+1} + A − a`.
    fn interpolated(&mut self, s: usize, a_total: f64, a: f64) -> Complex64 {
        self.set_term(s, -self.omega[s] + a);
        self.energies[s + 1] = self.omega[s + 1] + a_total - a;
        self.value()
    }

    fn evaluate(&mut self, free: &[f64]) -> Complex64 {
        let n = self.slots.len();
        let sd = self.spatial[0].len();
        for mu in 0..sd {
            self.spatial[n - 1][mu] = 0.0;
        }
        for l in 0..n - 1 {
            for mu in 0..sd {
                let v = free[l * sd + mu];
                self.spatial[l][mu] = v;
                self.spatial[n - 1][mu] -= v;
            }
        }
        for l in 0..n {
            self.omega[l] = (spatial_norm2(&self.spatial[l]) + self.masses[l] * self.masses[l]).sqrt();
            self.space_factor[l] = self.slots[l].function.spatial_transform(&self.spatial[l]);
        }
        let total: f64 = self.omega.iter().sum();
        // A_0 = −Σω, A_n = Σω; term s has pole energy −ω_s + A_{s+1}
        self.set_term(0, -self.omega[0] + (-total + 2.0 * self.omega[0]));
        let mut bracket = self.value() / total;
        self.set_term(n - 1, -self.omega[n - 1] + total);
        bracket += self.value() / total;
        let mut a = -total;
        for s in 0..n - 1 {
            a += 2.0 * self.omega[s];
            let h = DIVIDED_DIFFERENCE_STEP;
            let quotient = if a.abs() < h {
                (self.interpolated(s, a, 0.5 * a + h) - self.interpolated(s, a, 0.5 * a - h)) / (2.0 * h)
            } else {
                (self.interpolated(s, a, a) - self.interpolated(s, a, 0.0)) / a
            };
            bracket += quotient;
        }
        let jac: f64 = self.omega.iter().map(|w| 1.0 / (2.0 * w)).product();
        bracket * jac
    }
}

// ---------------------------------------------------------------------------
// Hilbert space structure witness.

/// Ratio statistics of one `(n, m)` pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HsscStatistics {
    pub n: usize,
    pub m: usize,
    pub draws: usize,
    /// Draws whose ratio moved by more than the tolerance under node refinement.
    pub failures: usize,
    pub max: f64,
    pub mean: f64,
    /// Ratio maximized over every extreme point.
    pub sup: f64,
    pub bin_width: f64,
    pub histogram: Vec<usize>,
    pub ratios: Vec<f64>,
}

/// Smeared `W_N` on every `N`-tuple of basis elements, at two node counts.
pub struct WightmanTensors {
    /// Basis element `i` is field `i / F`, function `i % F`.
    n_functions: usize,
    n_basis: usize,
    norms: Vec<f64>,
    abs_tol: f64,
    coarse: HashMap<Vec<usize>, Complex64>,
    fine: HashMap<Vec<usize>, Complex64>,
}

impl WightmanTensors {
    pub fn new(
        model: &ValidatedModel,
        family: &TestFunctionFamily,
        max_order: usize,
        quad: ShellQuadrature,
    ) -> Result<Self> {
        if max_order == 0 || max_order > 4 {
            return Err(Error::Config(format!("witness order {max_order} outside 1..=4")));
        }
        if family.functions.is_empty() {
            return Err(Error::Config("empty test-function family".into()));
        }
        let smearing = Smearing::new(model, max_order)?;
        let nf = model.n_fields();
        let n_functions = family.functions.len();
        let n_basis = nf * n_functions;
        let slot = |i: usize| SmearedSlot {
            field: i / n_functions,
            function: family.functions[i % n_functions].clone(),
        };
        let tuples: Vec<Vec<usize>> = (1..=max_order)
            .flat_map(|k| (0..n_basis.pow(k as u32)).map(move |f| unflatten(f, n_basis, k)))
            .collect();
        let truncated: Vec<(Complex64, Complex64)> = tuples
            .par_iter()
            .map(|t| {
                let slots: Vec<SmearedSlot> = t.iter().map(|&i| slot(i)).collect();
                Ok((
                    smearing.truncated_at(&slots, quad.nodes)?,
                    smearing.truncated_at(&slots, quad.refined_nodes())?,
                ))
            })
            .collect::<Result<_>>()?;
        let table: HashMap<Vec<usize>, (Complex64, Complex64)> = tuples.iter().cloned().zip(truncated).collect();
        let mut coarse = HashMap::new();
        let mut fine = HashMap::new();
        for k in 1..=max_order {
            let family_k = partitions(k)?;
            for f in 0..n_basis.pow(k as u32) {
                let t = unflatten(f, n_basis, k);
                let (mut c, mut w) = (Complex64::default(), Complex64::default());
                for partition in &family_k.partitions {
                    let (mut pc, mut pw) = (Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0));
                    for block in partition {
                        let key: Vec<usize> = block.iter().map(|&i| t[i]).collect();
                        let (bc, bw) = table[&key];
                        pc *= bc;
                        pw *= bw;
                    }
                    c += pc;
                    w += pw;
                }
                coarse.insert(t.clone(), c);
                fine.insert(t, w);
            }
        }
        let function_norms = family.norms();
        Ok(WightmanTensors {
            n_functions,
            n_basis,
            norms: (0..n_basis).map(|i| function_norms[i % n_functions]).collect(),
            abs_tol: quad.abs_tol,
            coarse,
            fine,
        })
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn n_functions(&self) -> usize {
        self.n_functions
    }

    /// `W_N` on one basis tuple (refined rule).
    pub fn value(&self, tuple: &[usize]) -> Option<Complex64> {
        self.fine.get(tuple).copied()
    }

    /// `|W_{n+m}(f ⊗ h)| / (‖f‖ ‖h‖)` over random extreme points of the
    /// projective unit ball, `f = ⊗_l e_{i_l}/‖e_{i_l}‖`. The supremum of the
    /// ratio over the whole span is attained at such a point. Slot elements
    /// are drawn independently with probability `∝ 1/‖e_i‖`; each draw uses
    /// its own random stream.
    pub fn witness(&self, n: usize, m: usize, draws: usize, seed: u64, bins: usize) -> Result<HsscStatistics> {
        if n == 0 || m == 0 || !self.fine.keys().any(|k| k.len() == n + m) {
            return Err(Error::Config(format!("no tensors for n = {n}, m = {m}")));
        }
        if draws == 0 || bins == 0 {
            return Err(Error::Config("draws and bins must be positive".into()));
        }
        let k = n + m;
        let inverse: Vec<f64> = self.norms.iter().map(|w| 1.0 / w).collect();
        let weights = WeightedIndex::new(&inverse).map_err(|e| Error::Domain(format!("basis norms: {e}")))?;
        let ratio_of = |t: &[usize]| -> (f64, bool) {
            let scale: f64 = t.iter().map(|&i| self.norms[i]).product();
            let (coarse, fine) = (self.coarse[t], self.fine[t]);
            let ratio = fine.norm() / scale;
            (ratio, !ratio.is_finite() || (fine.norm() - coarse.norm()).abs() / scale > self.abs_tol)
        };
        let sup = (0..self.n_basis.pow(k as u32))
            .map(|f| ratio_of(&unflatten(f, self.n_basis, k)).0)
            .fold(0.0, f64::max);
        let results: Vec<(f64, bool)> = (0..draws)
            .into_par_iter()
            .map(|draw| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(draw as u64);
                let t: Vec<usize> = (0..k).map(|_| weights.sample(&mut rng)).collect();
                ratio_of(&t)
            })
            .collect();
        let ratios: Vec<f64> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
        let failures = draws - ratios.len();
        let max = ratios.iter().copied().fold(0.0, f64::max);
        let mean = if ratios.is_empty() {
            0.0
        } else {
            ratios.iter().sum::<f64>() / ratios.len() as f64
        };
        let bin_width = if max > 0.0 { max / bins as f64 } else { 1.0 };
        let mut histogram = vec![0usize; bins];
        for r in &ratios {
            histogram[((r / bin_width) as usize).min(bins - 1)] += 1;
        }
        Ok(HsscStatistics {
            n,
            m,
            draws,
            failures,
            max,
            mean,
            sup,
            bin_width,
            histogram,
            ratios,
        })
    }
}

/// Witness statistics for one `(n, m)` pair with `n + m ≤ 4`.
pub fn hssc_witness(
    model: &ValidatedModel,
    n: usize,
    m: usize,
    family: &TestFunctionFamily,
    draws: usize,
    seed: u64,
    quad: ShellQuadrature,
) -> Result<HsscStatistics> {
    if n == 0 || m == 0 || n + m > 4 {
        return Err(Error::Config(format!("witness needs n, m >= 1 and n + m <= 4, got {n} + {m}")));
    }
    WightmanTensors::new(model, family, n + m, quad)?.witness(n, m, draws, seed, 10)
}

// ---------------------------------------------------------------------------
// Clustering.

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClusterRow {
    pub shift: f64,
    pub joint: Complex64,
    pub product: Complex64,
    pub gap: Complex64,
}

/// `W_n(f ⊗ h_{ta}) − W_{n₁}(f) W_{n₂}(h)` for a spatial direction `a` and
/// each shift `t`.
pub fn clustering_check(
    model: &ValidatedModel,
    f: &[SmearedSlot],
    h: &[SmearedSlot],
    direction: &[f64],
    shifts: &[f64],
    quad: ShellQuadrature,
) -> Result<Vec<ClusterRow>> {
    let d = model.d();
    if direction.len() != d - 1 {
        return Err(Error::Domain(format!(
            "direction has {} components, expected {}",
            direction.len(),
            d - 1
        )));
    }
    let n = f.len() + h.len();
    let smearing = Smearing::new(model, n)?;
    let product = smearing.wightman(f, quad)? * smearing.wightman(h, quad)?;
    shifts
        .iter()
        .map(|&t| {
            let mut shift = vec![0.0];
            shift.extend(direction.iter().map(|a| a * t));
            let mut slots = f.to_vec();
            slots.extend(h.iter().map(|s| SmearedSlot {
                field: s.field,
                function: s.function.translated(&shift),
            }));
            let joint = smearing.wightman(&slots, quad)?;
            Ok(ClusterRow {
                shift: t,
                joint,
                product,
                gap: joint - product,
            })
        })
        .collect()
}
