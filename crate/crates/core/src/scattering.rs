//! Truncated scattering amplitudes and two-body decay kinematics.
//!
//! External particles carry positive-energy on-shell momenta. An amplitude
//! is reported with the conservation delta and the shell deltas stripped:
//! `−2πi · Π_r b_{l_r} · Q^M_n(−k₁, …, −k_r, k_{r+1}, …, k_n)` with the
//! incoming momenta first. The coupling prefactor is the one used by the
//! Wightman term lists.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::cumulant_tensor;
use crate::model::ValidatedModel;
use crate::polynomial::CovariantPolynomial;
use crate::wightman::{build_wightman_terms_with, coupling_prefactor, minkowski_vertex, WightmanTermList};

/// Default absolute tolerance on each component of `K_in − K_out`.
pub const CONSERVATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    In,
    Out,
}

/// `k = (ω(k⃗), k⃗)` with `ω = √(|k⃗|² + m²)`.
pub fn onshell(mass: f64, spatial: &[f64]) -> Result<Vec<f64>> {
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::Domain(format!("mass must be positive, got {mass}")));
    }
    let mut k = Vec::with_capacity(spatial.len() + 1);
    k.push((spatial.iter().map(|x| x * x).sum::<f64>() + mass * mass).sqrt());
    k.extend_from_slice(spatial);
    Ok(k)
}

/// An external particle: spectrum entry `l`, field component `alpha` and
/// spatial momentum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub direction: Direction,
    pub l: usize,
    pub alpha: usize,
    pub k: Vec<f64>,
}

impl ParticleState {
    pub fn incoming(l: usize, alpha: usize, k: Vec<f64>) -> Self {
        ParticleState {
            direction: Direction::In,
            l,
            alpha,
            k,
        }
    }

    pub fn outgoing(l: usize, alpha: usize, k: Vec<f64>) -> Self {
        ParticleState {
            direction: Direction::Out,
            l,
            alpha,
            k,
        }
    }

    pub fn momentum(&self, model: &ValidatedModel) -> Result<Vec<f64>> {
        let spectrum = model.spectrum();
        if self.l >= spectrum.len() {
            return Err(Error::Domain(format!(
                "mass index {} out of range for {} masses",
                self.l,
                spectrum.len()
            )));
        }
        if self.alpha >= model.n_fields() {
            return Err(Error::Domain(format!("field index {} out of range", self.alpha)));
        }
        if self.k.len() + 1 != model.d() {
            return Err(Error::Domain(format!(
                "spatial momentum has {} components, expected {}",
                self.k.len(),
                model.d() - 1
            )));
        }
        if self.k.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("momenta must be finite".into()));
        }
        onshell(spectrum.entries[self.l].m, &self.k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AmplitudeResult {
    /// Conservation-stripped value, zero unless `conserved`.
    pub value: Complex64,
    pub conserved: bool,
    /// Euclidean norm of `K_in − K_out`.
    pub gap: f64,
}

/// A model whose `Q^M_n` may be replaced order by order.
#[derive(Clone, Debug)]
pub struct PolynomialModel {
    model: ValidatedModel,
    custom: BTreeMap<usize, CovariantPolynomial>,
    tolerance: f64,
}

impl PolynomialModel {
    pub fn new(model: ValidatedModel) -> Self {
        PolynomialModel {
            model,
            custom: BTreeMap::new(),
            tolerance: CONSERVATION_TOLERANCE,
        }
    }

    pub fn model(&self) -> &ValidatedModel {
        &self.model
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Result<Self> {
        if !(tolerance.is_finite() && tolerance > 0.0) {
            return Err(Error::Config(format!("conservation tolerance must be positive, got {tolerance}")));
        }
        self.tolerance = tolerance;
        Ok(self)
    }

    pub fn is_custom(&self, n: usize) -> bool {
        self.custom.contains_key(&n)
    }

    /// `Q^M_n`: the supplied polynomial, else the cumulant-built one.
    pub fn q_m(&self, n: usize) -> Result<CovariantPolynomial> {
        match self.custom.get(&n) {
            Some(q) => Ok(q.clone()),
            None => minkowski_vertex(n, &self.model),
        }
    }

    pub fn wightman_terms(&self, n: usize, assignment: &[usize]) -> Result<WightmanTermList> {
        self.model.require_no_dipole()?;
        build_wightman_terms_with(n, assignment, &self.model, self.q_m(n)?)
    }
}

/// Replaces `Q^M_n` by the supplied polynomials, each symmetric under
/// simultaneous permutation of arguments and field indices and of degree at
/// most `degree_bound` in every argument.
pub fn with_custom_qm(
    model: &ValidatedModel,
    polynomials: Vec<CovariantPolynomial>,
    degree_bound: u32,
) -> Result<PolynomialModel> {
    let mut out = PolynomialModel::new(model.clone());
    for q in polynomials {
        let n = q.n_args();
        if n < 2 || q.field_rank() != n || q.dim() != model.d() {
            return Err(Error::Domain(format!(
                "polynomial with {} arguments, {} field slots and dimension {} does not fit the model",
                n,
                q.field_rank(),
                q.dim()
            )));
        }
        if !q.is_symmetric(1e-12) {
            return Err(Error::Domain(format!("order-{n} polynomial is not symmetric")));
        }
        let q = q.with_degree_bound(degree_bound)?;
        if out.custom.insert(n, q).is_some() {
            return Err(Error::Domain(format!("two polynomials supplied for order {n}")));
        }
    }
    Ok(out)
}

/// Truncated amplitude of `ins → outs` for the cumulant-built `Q^M`.
pub fn amplitude(ins: &[ParticleState], outs: &[ParticleState], model: &ValidatedModel) -> Result<AmplitudeResult> {
    amplitude_with(ins, outs, &PolynomialModel::new(model.clone()))
}

pub fn amplitude_with(ins: &[ParticleState], outs: &[ParticleState], variant: &PolynomialModel) -> Result<AmplitudeResult> {
    let model = variant.model();
    model.require_no_dipole()?;
    if ins.iter().any(|p| p.direction != Direction::In) || outs.iter().any(|p| p.direction != Direction::Out) {
        return Err(Error::Domain("particle directions do not match their lists".into()));
    }
    let n = ins.len() + outs.len();
    if n == 0 {
        return Err(Error::Domain("no external particles".into()));
    }
    let mut arguments = Vec::with_capacity(n);
    let mut balance = vec![0.0; model.d()];
    for (p, sign) in ins.iter().map(|p| (p, -1.0)).chain(outs.iter().map(|p| (p, 1.0))) {
        let k = p.momentum(model)?;
        for (b, v) in balance.iter_mut().zip(&k) {
            *b += sign * v;
        }
        arguments.push(k.iter().map(|v| sign * v).collect::<Vec<f64>>());
    }
    let conserved = balance.iter().all(|b| b.abs() <= variant.tolerance);
    let gap = balance.iter().map(|b| b * b).sum::<f64>().sqrt();
    if !conserved || n < 3 {
        return Ok(AmplitudeResult {
            value: Complex64::default(),
            conserved,
            gap,
        });
    }
    let assignment: Vec<usize> = ins.iter().chain(outs).map(|p| p.l).collect();
    let indices: Vec<usize> = ins.iter().chain(outs).map(|p| p.alpha).collect();
    let q = variant.q_m(n)?;
    let prefactor = coupling_prefactor(model, &assignment)?;
    let value = Complex64::new(0.0, -2.0 * PI) * prefactor * q.evaluate_real(&indices, &arguments);
    Ok(AmplitudeResult { value, conserved, gap })
}

/// Kinematics and amplitude of the decay of mass `m` into two of mass `mu`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayReport {
    pub m: f64,
    pub mu: f64,
    pub feasible: bool,
    /// `m − 2μ`.
    pub threshold_gap: f64,
    /// `|k⃗| = √(m²/4 − μ²)` of the back-to-back products.
    pub momentum: Option<f64>,
    pub witness: Option<DecayWitness>,
    pub amplitude: Option<AmplitudeResult>,
    pub nonzero: bool,
    pub third_cumulant: f64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayWitness {
    pub ins: Vec<ParticleState>,
    pub outs: Vec<ParticleState>,
}

/// Whether `m → μμ` is kinematically open (iff `m ≥ 2μ`), a rest-frame
/// witness configuration, and its amplitude when both masses belong to
/// the spectrum.
pub fn decay_scan(m: f64, mu: f64, model: &ValidatedModel) -> Result<DecayReport> {
    decay_scan_with(m, mu, &PolynomialModel::new(model.clone()))
}

pub fn decay_scan_with(m: f64, mu: f64, variant: &PolynomialModel) -> Result<DecayReport> {
    if !(m.is_finite() && m > 0.0 && mu.is_finite() && mu > 0.0) {
        return Err(Error::Domain(format!("masses must be positive, got m = {m}, mu = {mu}")));
    }
    let model = variant.model();
    let c3 = cumulant_tensor(3, model.levy())?;
    let third_cumulant = c3.max_abs();
    let threshold_gap = m - 2.0 * mu;
    let feasible = m >= 2.0 * mu;
    let mut report = DecayReport {
        m,
        mu,
        feasible,
        threshold_gap,
        momentum: None,
        witness: None,
        amplitude: None,
        nonzero: false,
        third_cumulant,
        note: String::new(),
    };
    if !feasible {
        report.note = "below threshold: m < 2 mu".into();
        return Ok(report);
    }
    // (m/2 − μ)(m/2 + μ) avoids cancellation near threshold
    let p = ((0.5 * m - mu) * (0.5 * m + mu)).max(0.0).sqrt();
    report.momentum = Some(p);
    let spectrum = model.spectrum();
    let (Some(heavy), Some(light)) = (spectrum.index_of(m, 1e-12), spectrum.index_of(mu, 1e-12)) else {
        report.note = "kinematically open; a mass is not in the spectrum, no amplitude".into();
        return Ok(report);
    };
    let sd = model.d() - 1;
    let mut forward = vec![0.0; sd];
    if sd > 0 {
        forward[0] = p;
    }
    let backward: Vec<f64> = forward.iter().map(|v| -v).collect();
    let ins = vec![ParticleState::incoming(heavy, 0, vec![0.0; sd])];
    let outs = vec![ParticleState::outgoing(light, 0, forward), ParticleState::outgoing(light, 0, backward)];
    let amp = amplitude_with(&ins, &outs, variant)?;
    report.nonzero = amp.value.norm() > 0.0;
    report.note = if report.nonzero {
        "kinematically open with a nonvanishing amplitude".into()
    } else if third_cumulant == 0.0 {
        "kinematically open; the third cumulant vanishes".into()
    } else {
        "kinematically open; the amplitude vanishes".into()
    };
    report.amplitude = Some(amp);
    report.witness = Some(DecayWitness { ins, outs });
    Ok(report)
}
