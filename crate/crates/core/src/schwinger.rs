//! Analytic truncated Schwinger functions.
//!
//! The two-point function is a single momentum integral, done here in
//! proper time (`x ≠ 0`) or radially (`x = 0`). For `n ≥ 3` the vertex
//! integral `∫ Π_j K(x_j − x) dx` is evaluated on a periodic lattice: every
//! leg kernel is synthesized from the continuum symbol by one FFT, and the
//! result is checked against a lattice of twice the resolution.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{signed_mode, FftNd};
use crate::levy::cumulant_tensor;
use crate::model::ValidatedModel;
use crate::polynomial::{unflatten, CovariantPolynomial};
use crate::propagator::{general_partial_fractions, partial_fractions};
use crate::quadrature::trapezoid_real_line;

/// `Q^E_n(k₁,…,kₙ)_{α} = C^{β₁…βₙ} Π_l Q_{E,β_l α_l}(k_l)` with raised cumulant.
pub fn vertex_polynomial(n: usize, model: &ValidatedModel) -> Result<CovariantPolynomial> {
    let c = cumulant_tensor(n, model.levy())?.raised(model.metric_inverse());
    Ok(CovariantPolynomial::vertex(n, &c.entries, model.n_fields(), model.q_e()))
}

/// `Q^E_2(k, −k)` as a one-argument polynomial.
pub fn two_point_polynomial(model: &ValidatedModel) -> CovariantPolynomial {
    vertex_polynomial(2, model)
        .expect("order 2 is always admissible")
        .restrict_two_point()
}

/// Physicists' Hermite polynomial `H_n(u)`.
pub(crate) fn hermite_phys(n: u32, u: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 2.0 * u);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = 2.0 * u * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `Γ(n/2)` for positive integers `n`.
pub(crate) fn gamma_half(n: u32) -> f64 {
    assert!(n > 0);
    let mut x = if n.is_multiple_of(2) { 1.0 } else { PI.sqrt() };
    let mut arg = if n.is_multiple_of(2) { 1.0 } else { 0.5 };
    while arg < n as f64 / 2.0 - 0.25 {
        x *= arg;
        arg += 1.0;
    }
    x
}

pub(crate) fn i_pow(a: u32) -> Complex64 {
    match a % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// Trapezoidal integration with an absolute floor tied to `∫|f|`.
pub(crate) fn integrate_line(f: impl Fn(f64) -> f64, center: f64, rel_tol: f64) -> Result<f64> {
    let scale = trapezoid_real_line(|u| f(u).abs(), center, 1e-300, 1e-6)?.value;
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(trapezoid_real_line(&f, center, 1e-14 * scale, rel_tol)?.value)
}

fn check_indices(indices: &[usize], model: &ValidatedModel) -> Result<()> {
    if let Some(a) = indices.iter().find(|&&a| a >= model.n_fields()) {
        return Err(Error::Domain(format!(
            "component index {a} out of range for {} fields",
            model.n_fields()
        )));
    }
    Ok(())
}

fn check_point(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::Domain(format!("point has {} components, expected {d}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("point coordinates must be finite".into()));
    }
    Ok(())
}

/// `S₂^T_{α₁α₂}(x) = ∫ d^dk/(2π)^d e^{ik·x} Q^E_2(k,−k)_{α₁α₂} / (Π m^{2ν} Π(k²+m²)^ν)`.
pub fn schwinger2_truncated(x: &[f64], alpha1: usize, alpha2: usize, model: &ValidatedModel) -> Result<f64> {
    let d = model.d();
    check_point(x, d)?;
    check_indices(&[alpha1, alpha2], model)?;
    let q2 = two_point_polynomial(model);
    let terms: Vec<(Vec<u32>, Complex64)> = q2
        .terms()
        .filter(|(m, c)| m.fields == [alpha1, alpha2] && c.norm() > 0.0)
        .map(|(m, c)| (m.powers.clone(), *c))
        .collect();
    if terms.is_empty() {
        return Ok(0.0);
    }
    let norm = model.spectrum().mass_normalization();
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let value = if r < 1e-12 {
        two_point_at_origin(&terms, model)?
    } else {
        two_point_proper_time(x, &terms, model)?
    };
    Ok(value / norm)
}

fn two_point_proper_time(x: &[f64], terms: &[(Vec<u32>, Complex64)], model: &ValidatedModel) -> Result<f64> {
    let d = model.d();
    let poles = general_partial_fractions(model.spectrum());
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let m_min = model.spectrum().min_mass();
    let factorial = |r: u32| (1..r).map(|k| k as f64).product::<f64>();
    let integrand = |u: f64| {
        let s = u.exp();
        let radial: f64 = poles
            .iter()
            .map(|p| p.coefficient * (p.power as f64 * u - s * p.mass * p.mass - r2 / (4.0 * s)).exp() / factorial(p.power))
            .sum();
        let root = 2.0 * s.sqrt();
        let mut angular = Complex64::new(0.0, 0.0);
        for (powers, coeff) in terms {
            let mut v = *coeff;
            for mu in 0..d {
                let a = powers[mu];
                if a > 0 {
                    v *= i_pow(a) * hermite_phys(a, x[mu] / root) / root.powi(a as i32);
                }
            }
            angular += v;
        }
        radial * angular.re * (4.0 * PI * s).powf(-(d as f64) / 2.0)
    };
    let center = (r2.sqrt() / (2.0 * m_min)).ln();
    integrate_line(integrand, center, 1e-11)
}

fn two_point_at_origin(terms: &[(Vec<u32>, Complex64)], model: &ValidatedModel) -> Result<f64> {
    let d = model.d();
    let total_nu: u32 = model.spectrum().entries.iter().map(|e| e.nu).sum();
    let spectrum = model.spectrum();
    let mut acc = 0.0;
    for (powers, coeff) in terms {
        if powers.iter().any(|a| a % 2 == 1) {
            continue;
        }
        let deg: u32 = powers.iter().sum();
        if deg + d as u32 >= 2 * total_nu {
            return Err(Error::Singularity(format!(
                "two-point kernel diverges at coincident points (momentum degree {deg} in d = {d})"
            )));
        }
        // ∫ d^dk k^a f(|k|) = 2 Π Γ((a_μ+1)/2) / Γ((|a|+d)/2) · ∫ ρ^{|a|+d−1} f(ρ) dρ
        let angular = 2.0 * powers.iter().map(|&a| gamma_half(a + 1)).product::<f64>() / gamma_half(deg + d as u32);
        let p = (deg + d as u32) as f64;
        let radial = integrate_line(|u| (p * u).exp() / spectrum.denominator((2.0 * u).exp()), spectrum.min_mass().ln(), 1e-12)?;
        acc += coeff.re * angular * radial;
    }
    Ok(acc / (2.0 * PI).powi(d as i32))
}

// ---------------------------------------------------------------------------
// n ≥ 3

/// Periodic lattice used for the vertex integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VertexLattice {
    /// Sites per axis of the coarser lattice; the check lattice has twice as many.
    pub sites: usize,
    pub spacing: f64,
    /// Admissible relative gap between the two resolutions.
    pub check_tolerance: f64,
}

impl VertexLattice {
    pub fn new(sites: usize, spacing: f64, check_tolerance: f64) -> Self {
        VertexLattice {
            sites,
            spacing,
            check_tolerance,
        }
    }

    /// A lattice covering the points plus a margin of `20/m_min`, with the
    /// finest spacing the per-dimension site budget allows.
    pub fn for_points(model: &ValidatedModel, points: &[Vec<f64>]) -> Self {
        let d = model.d();
        let mut spread = 0.0f64;
        for p in points {
            for q in points {
                for mu in 0..d {
                    spread = spread.max((p[mu] - q[mu]).abs());
                }
            }
        }
        let budget = match d {
            2 => 128,
            3 => 32,
            _ => 16,
        };
        let extent = spread + 20.0 / model.spectrum().min_mass();
        VertexLattice {
            sites: budget,
            spacing: extent / budget as f64,
            check_tolerance: 1e-2,
        }
    }

    pub fn extent(&self) -> f64 {
        self.sites as f64 * self.spacing
    }

    pub fn refined(&self) -> Self {
        VertexLattice {
            sites: 2 * self.sites,
            spacing: 0.5 * self.spacing,
            check_tolerance: self.check_tolerance,
        }
    }
}

/// Value of the vertex integral at both resolutions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VertexEvaluation {
    pub value: f64,
    pub coarse: f64,
    pub relative_gap: f64,
}

/// A truncated Schwinger function of fixed order bound to a model.
#[derive(Clone, Debug)]
pub struct TruncatedKernel<'a> {
    pub order: usize,
    model: &'a ValidatedModel,
    lattice: Option<VertexLattice>,
}

impl<'a> TruncatedKernel<'a> {
    pub fn new(order: usize, model: &'a ValidatedModel) -> Result<Self> {
        if order < 2 {
            return Err(Error::Domain("truncated kernels start at order 2".into()));
        }
        Ok(TruncatedKernel {
            order,
            model,
            lattice: None,
        })
    }

    pub fn with_lattice(mut self, lattice: VertexLattice) -> Self {
        self.lattice = Some(lattice);
        self
    }

    pub fn evaluate(&self, points: &[Vec<f64>], indices: &[usize]) -> Result<f64> {
        if points.len() != self.order || indices.len() != self.order {
            return Err(Error::Domain(format!("kernel of order {} needs {} points", self.order, self.order)));
        }
        if self.order == 2 {
            let x: Vec<f64> = points[0].iter().zip(&points[1]).map(|(a, b)| a - b).collect();
            return schwinger2_truncated(&x, indices[0], indices[1], self.model);
        }
        let lattice = self
            .lattice
            .unwrap_or_else(|| VertexLattice::for_points(self.model, points));
        schwinger_n_truncated(points, indices, self.model, &lattice)
    }
}

/// `S_n^T` for `n ≥ 3`, from the vertex integral on `lattice` and its refinement.
pub fn schwinger_n_truncated(
    points: &[Vec<f64>],
    indices: &[usize],
    model: &ValidatedModel,
    lattice: &VertexLattice,
) -> Result<f64> {
    Ok(schwinger_n_evaluate(points, indices, model, lattice)?.value)
}

pub fn schwinger_n_evaluate(
    points: &[Vec<f64>],
    indices: &[usize],
    model: &ValidatedModel,
    lattice: &VertexLattice,
) -> Result<VertexEvaluation> {
    let route = if model.spectrum().no_dipole() {
        LegSymbol::PartialFractions
    } else {
        LegSymbol::Product
    };
    vertex_evaluate(points, indices, model, lattice, route)
}

/// How the leg kernel symbol `1/Π(k² + m²)^ν` is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum LegSymbol {
    /// `Σ_l b_l/(k² + m_l²)`, simple poles only.
    PartialFractions,
    /// The product form, any dipole degrees.
    Product,
}

pub(crate) fn vertex_evaluate(
    points: &[Vec<f64>],
    indices: &[usize],
    model: &ValidatedModel,
    lattice: &VertexLattice,
    route: LegSymbol,
) -> Result<VertexEvaluation> {
    let n = points.len();
    let d = model.d();
    if n < 3 {
        return Err(Error::Domain("vertex integrals need at least three points".into()));
    }
    if indices.len() != n {
        return Err(Error::Domain("one component index per point is required".into()));
    }
    for p in points {
        check_point(p, d)?;
    }
    check_indices(indices, model)?;
    if lattice.sites < 4 || !lattice.sites.is_power_of_two() || lattice.spacing.is_nan() || lattice.spacing <= 0.0 {
        return Err(Error::Config("vertex lattice needs a power-of-two size ≥ 4 and positive spacing".into()));
    }
    let cumulant = cumulant_tensor(n, model.levy())?.raised(model.metric_inverse());
    if cumulant.is_zero() {
        return Ok(VertexEvaluation {
            value: 0.0,
            coarse: 0.0,
            relative_gap: 0.0,
        });
    }
    let symbol = leg_symbol(model, route)?;
    let coarse = vertex_on_lattice(points, indices, model, &cumulant.entries, lattice, &symbol);
    let fine = vertex_on_lattice(points, indices, model, &cumulant.entries, &lattice.refined(), &symbol);
    let gap = (fine.value - coarse.value).abs();
    let allowed = lattice.check_tolerance * fine.value.abs() + 1e-13 * fine.scale;
    let relative_gap = if fine.value != 0.0 { gap / fine.value.abs() } else { gap };
    if gap > allowed {
        return Err(Error::Resolution(format!(
            "vertex integral changed by {relative_gap:.3e} (relative) between {} and {} sites per axis \
             at spacing {} → {}; coarse {:.6e}, fine {:.6e}; refine the lattice or enlarge the box",
            lattice.sites,
            2 * lattice.sites,
            lattice.spacing,
            lattice.spacing / 2.0,
            coarse.value,
            fine.value
        )));
    }
    Ok(VertexEvaluation {
        value: fine.value,
        coarse: coarse.value,
        relative_gap,
    })
}

type Symbol = Box<dyn Fn(f64) -> f64 + Sync>;

fn leg_symbol(model: &ValidatedModel, route: LegSymbol) -> Result<Symbol> {
    match route {
        LegSymbol::PartialFractions => {
            let pf = partial_fractions(model.spectrum())?;
            Ok(Box::new(move |t| {
                pf.coefficients
                    .iter()
                    .zip(&pf.masses)
                    .map(|(b, m)| b / (t + m * m))
                    .sum()
            }))
        }
        LegSymbol::Product => {
            let spectrum = model.spectrum().clone();
            Ok(Box::new(move |t| 1.0 / spectrum.denominator(t)))
        }
    }
}

struct LatticeValue {
    value: f64,
    scale: f64,
}

fn vertex_on_lattice(
    points: &[Vec<f64>],
    indices: &[usize],
    model: &ValidatedModel,
    cumulant: &[f64],
    lattice: &VertexLattice,
    symbol: &Symbol,
) -> LatticeValue {
    let n = points.len();
    let d = model.d();
    let nf = model.n_fields();
    let l = lattice.sites;
    let a = lattice.spacing;
    let volume_sites = l.pow(d as u32);
    let box_volume = lattice.extent().powi(d as i32);
    let centroid: Vec<f64> = (0..d)
        .map(|mu| points.iter().map(|p| p[mu]).sum::<f64>() / n as f64)
        .collect();
    let mut fft = FftNd::new(l, d);

    // momentum of every site, Nyquist modes flagged
    let dk = 2.0 * PI / lattice.extent();
    let mut momenta = Vec::with_capacity(volume_sites);
    let mut active = Vec::with_capacity(volume_sites);
    for flat in 0..volume_sites {
        let idx = unflatten(flat, l, d);
        let mut k = vec![0.0; d];
        let mut nyquist = false;
        for mu in 0..d {
            let (m, is_nyq) = signed_mode(idx[mu], l);
            k[mu] = m as f64 * dk;
            nyquist |= is_nyq;
        }
        momenta.push(k);
        active.push(!nyquist);
    }

    // kernels[j][β] on the position grid x = centroid + a·n
    let mut kernels: Vec<Vec<Option<Vec<f64>>>> = Vec::with_capacity(n);
    for j in 0..n {
        let shift: Vec<f64> = (0..d).map(|mu| points[j][mu] - centroid[mu]).collect();
        let mut per_beta = Vec::with_capacity(nf);
        for beta in 0..nf {
            let entry = [beta, indices[j]];
            let has_entry = model.q_e().terms().any(|(m, _)| m.fields == entry);
            if !has_entry {
                per_beta.push(None);
                continue;
            }
            let mut buf: Vec<Complex64> = (0..volume_sites)
                .map(|f| {
                    if !active[f] {
                        return Complex64::default();
                    }
                    let k = &momenta[f];
                    let t: f64 = k.iter().map(|v| v * v).sum();
                    let q = model.q_e().evaluate_real(&entry, std::slice::from_ref(k));
                    let phase: f64 = k.iter().zip(&shift).map(|(a, b)| a * b).sum();
                    q * symbol(t) * Complex64::new(0.0, phase).exp()
                })
                .collect();
            fft.forward(&mut buf);
            per_beta.push(Some(buf.iter().map(|c| c.re / box_volume).collect()));
        }
        kernels.push(per_beta);
    }

    let cell = a.powi(d as i32);
    let mut value = 0.0;
    let mut scale = 0.0;
    for (beta_flat, &c) in cumulant.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let beta = unflatten(beta_flat, nf, n);
        let legs: Option<Vec<&Vec<f64>>> = (0..n).map(|j| kernels[j][beta[j]].as_ref()).collect();
        let Some(legs) = legs else { continue };
        for site in 0..volume_sites {
            let prod: f64 = legs.iter().map(|k| k[site]).product();
            value += c * prod;
            scale += (c * prod).abs();
        }
    }
    LatticeValue {
        value: value * cell,
        scale: scale * cell,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_model, Atom, LevySpec, MassEntry, MassSpectrum, ModelSpec};
    use crate::oracles::vertex_integral_direct_2d;
    use crate::propagator::green_kernel;
    use nalgebra::DMatrix;

    fn scalar(d: usize, masses: &[f64], levy: LevySpec) -> ValidatedModel {
        validate_model(ModelSpec::scalar(d, MassSpectrum::simple(masses), levy)).unwrap()
    }

    fn unit_gaussian(d: usize, masses: &[f64]) -> ValidatedModel {
        scalar(d, masses, LevySpec::gaussian(DMatrix::from_element(1, 1, 1.0)))
    }

    #[test]
    fn helpers() {
        assert_eq!(hermite_phys(3, 0.5), 8.0 * 0.125 - 12.0 * 0.5);
        assert_eq!(gamma_half(1), PI.sqrt());
        assert_eq!(gamma_half(4), 1.0);
        assert!((gamma_half(5) - 0.75 * PI.sqrt()).abs() < 1e-15);
        assert_eq!(gamma_half(8), 6.0);
    }

    #[test]
    fn two_point_is_scaled_green_kernel() {
        for d in [2usize, 3] {
            for m in [0.6, 1.0, 2.0] {
                let model = unit_gaussian(d, &[m]);
                for r in [0.3, 1.0, 2.5] {
                    let mut x = vec![0.0; d];
                    x[0] = 0.6 * r;
                    x[1] = 0.8 * r;
                    let s2 = schwinger2_truncated(&x, 0, 0, &model).unwrap();
                    let g = green_kernel(&x, m, d).unwrap() / (m * m);
                    assert!((s2 - g).abs() < 1e-10 * g, "d={d} m={m} r={r}: {s2} vs {g}");
                }
            }
        }
    }

    #[test]
    fn two_point_vanishes_without_noise() {
        let model = scalar(2, &[1.0], LevySpec::gaussian(DMatrix::zeros(1, 1)));
        assert_eq!(schwinger2_truncated(&[0.5, 0.1], 0, 0, &model).unwrap(), 0.0);
    }

    #[test]
    fn two_point_even_in_separation() {
        let model = scalar(3, &[1.0, 1.7], LevySpec::scalar_poisson(0.7, 1.3));
        let x = [0.4, -0.2, 0.9];
        let neg = [-0.4, 0.2, -0.9];
        let a = schwinger2_truncated(&x, 0, 0, &model).unwrap();
        let b = schwinger2_truncated(&neg, 0, 0, &model).unwrap();
        assert!((a - b).abs() < 1e-14 * a.abs());
    }

    #[test]
    fn two_point_with_two_masses_is_residue_sum() {
        let model = unit_gaussian(3, &[1.0, 2.0]);
        let x = [0.7, 0.0, 0.3];
        let s2 = schwinger2_truncated(&x, 0, 0, &model).unwrap();
        let pf = partial_fractions(model.spectrum()).unwrap();
        let want: f64 = pf
            .coefficients
            .iter()
            .zip([1.0, 2.0])
            .map(|(b, m)| b * green_kernel(&x, m, 3).unwrap())
            .sum::<f64>()
            / 4.0;
        assert!((s2 - want).abs() < 1e-10 * want, "{s2} vs {want}");
    }

    #[test]
    fn derivative_polynomial_matches_differentiated_kernel() {
        // Q_E(k) = 1 + c k₀ gives Q₂(k) = 1 − c² k₀², i.e. (1 + c²∂₀²) G / m²
        let c = 0.4;
        let m: f64 = 1.3;
        let mut spec = ModelSpec::scalar(3, MassSpectrum::simple(&[m]), LevySpec::gaussian(DMatrix::from_element(1, 1, 1.0)));
        spec.q_e.add_term(vec![0, 0], vec![1, 0, 0], Complex64::new(c, 0.0));
        let model = validate_model(spec).unwrap();
        let g = |t: f64| {
            let r = (t * t + 0.25f64 + 0.09).sqrt();
            (-m * r).exp() / (4.0 * PI * r)
        };
        let t = 0.8;
        let h = 1e-3;
        let d2 = (g(t + h) - 2.0 * g(t) + g(t - h)) / (h * h);
        let want = (g(t) + c * c * d2) / (m * m);
        let got = schwinger2_truncated(&[t, 0.5, 0.3], 0, 0, &model).unwrap();
        assert!((got - want).abs() < 1e-6 * want.abs(), "{got} vs {want}");
    }

    #[test]
    fn two_point_at_coincident_points() {
        // d = 2, masses 1 and 2: ∫ d²k/(2π)² 1/((k²+1)(k²+4)) = ln 4 / (12π), divided by Π m² = 4
        let model = unit_gaussian(2, &[1.0, 2.0]);
        let v = schwinger2_truncated(&[0.0, 0.0], 0, 0, &model).unwrap();
        let want = 4f64.ln() / (12.0 * PI) / 4.0;
        assert!((v - want).abs() < 1e-11 * want, "{v} vs {want}");
        // the limit from nearby points agrees
        let near = schwinger2_truncated(&[1e-4, 0.0], 0, 0, &model).unwrap();
        assert!((near - want).abs() < 1e-5);
        let single = unit_gaussian(2, &[1.0]);
        assert!(matches!(schwinger2_truncated(&[0.0, 0.0], 0, 0, &single), Err(Error::Singularity(_))));
    }

    #[test]
    fn lattice_vertex_matches_direct_quadrature_in_two_dimensions() {
        let model = scalar(2, &[1.0], LevySpec::scalar_poisson(1.0, 1.0));
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.3, 0.8]];
        let points: Vec<Vec<f64>> = pts.iter().map(|p| p.to_vec()).collect();
        let lattice = VertexLattice::new(256, 0.1, 2e-2);
        let v = schwinger_n_truncated(&points, &[0, 0, 0], &model, &lattice).unwrap();
        let oracle = vertex_integral_direct_2d(&pts, 1.0, 12.0, 0.0125);
        assert!((v - oracle).abs() < 1e-2 * oracle, "{v} vs {oracle}");
    }

    #[test]
    fn gaussian_noise_has_no_vertex() {
        let model = unit_gaussian(2, &[1.0]);
        let points = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]];
        let lattice = VertexLattice::new(32, 0.5, 1e-2);
        assert_eq!(schwinger_n_truncated(&points[..3], &[0, 0, 0], &model, &lattice).unwrap(), 0.0);
        assert_eq!(schwinger_n_truncated(&points, &[0, 0, 0, 0], &model, &lattice).unwrap(), 0.0);
    }

    fn two_field_model() -> ValidatedModel {
        let levy = LevySpec::compound_poisson(
            1.0,
            vec![
                Atom { w: 0.5, s: vec![1.0, 0.5] },
                Atom { w: 0.5, s: vec![-0.3, 1.2] },
            ],
        );
        let mut spec = ModelSpec::scalar(2, MassSpectrum::simple(&[1.0, 1.6]), levy);
        spec.n_fields = 2;
        let mut q = CovariantPolynomial::identity(2, 2);
        q.add_term(vec![0, 1], vec![0, 0], Complex64::new(0.3, 0.0));
        q.add_term(vec![1, 0], vec![0, 0], Complex64::new(0.3, 0.0));
        spec.q_e = q;
        spec.metric = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        validate_model(spec).unwrap()
    }

    #[test]
    fn permutation_symmetry() {
        let model = two_field_model();
        let points = vec![vec![0.1, 0.0], vec![1.1, 0.3], vec![-0.4, 0.9]];
        let idx = [0usize, 1, 1];
        let lattice = VertexLattice::new(64, 0.25, 5e-2);
        let base = schwinger_n_truncated(&points, &idx, &model, &lattice).unwrap();
        for perm in [[1, 0, 2], [2, 1, 0], [1, 2, 0]] {
            let p: Vec<Vec<f64>> = perm.iter().map(|&i| points[i].clone()).collect();
            let ix: Vec<usize> = perm.iter().map(|&i| idx[i]).collect();
            let v = schwinger_n_truncated(&p, &ix, &model, &lattice).unwrap();
            assert!((v - base).abs() < 1e-12 * base.abs(), "{v} vs {base}");
        }
    }

    #[test]
    fn rotation_and_translation_invariance() {
        let model = scalar(2, &[1.0, 1.5], LevySpec::scalar_poisson(1.0, 1.0));
        let points = vec![vec![0.0, 0.0], vec![1.2, 0.1], vec![0.35, 0.9]];
        let lattice = VertexLattice::new(64, 0.25, 5e-2);
        let base = schwinger_n_truncated(&points, &[0, 0, 0], &model, &lattice).unwrap();
        let rotated: Vec<Vec<f64>> = points.iter().map(|p| vec![-p[1], p[0]]).collect();
        let rv = schwinger_n_truncated(&rotated, &[0, 0, 0], &model, &lattice).unwrap();
        assert!((rv - base).abs() < 1e-10 * base.abs(), "{rv} vs {base}");
        let shifted: Vec<Vec<f64>> = points.iter().map(|p| vec![p[0] + 0.75, p[1] - 2.5]).collect();
        let sv = schwinger_n_truncated(&shifted, &[0, 0, 0], &model, &lattice).unwrap();
        assert!((sv - base).abs() < 1e-12 * base.abs());
        // generic angle: agreement at the interpolation level
        let (s, c) = 0.6f64.sin_cos();
        let generic: Vec<Vec<f64>> = points.iter().map(|p| vec![c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect();
        let gv = schwinger_n_truncated(&generic, &[0, 0, 0], &model, &lattice).unwrap();
        assert!((gv - base).abs() < 1e-3 * base.abs(), "{gv} vs {base}");
    }

    #[test]
    fn partial_fraction_and_product_routes_agree() {
        let model = scalar(2, &[1.0, 1.4, 2.0], LevySpec::scalar_poisson(0.5, 1.5));
        let points = vec![vec![0.0, 0.0], vec![0.8, 0.2], vec![0.1, 0.7], vec![-0.5, -0.3]];
        let lattice = VertexLattice::new(64, 0.25, 5e-2);
        let a = vertex_evaluate(&points, &[0; 4], &model, &lattice, LegSymbol::PartialFractions).unwrap();
        let b = vertex_evaluate(&points, &[0; 4], &model, &lattice, LegSymbol::Product).unwrap();
        assert!((a.value - b.value).abs() < 1e-9 * b.value.abs(), "{} vs {}", a.value, b.value);
    }

    #[test]
    fn dipole_vertex_matches_direct_quadrature() {
        // ν = 2 leg kernel in d = 2: ∫ d²k/(2π)² e^{ikx}/(k²+m²)² = r K₁(m r)/(4π m)
        let m = 1.0;
        let spec = ModelSpec::scalar(2, MassSpectrum::new(vec![MassEntry { m, nu: 2 }]), LevySpec::scalar_poisson(1.0, 1.0));
        let model = validate_model(spec).unwrap();
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let points: Vec<Vec<f64>> = pts.iter().map(|p| p.to_vec()).collect();
        let v = schwinger_n_truncated(&points, &[0, 0, 0], &model, &VertexLattice::new(64, 0.375, 1e-2)).unwrap();
        let kernel = |r: f64| if r < 1e-12 { 1.0 / (4.0 * PI * m * m) } else { r * crate::propagator::bessel_k(1.0, m * r) / (4.0 * PI * m) };
        let h = 0.02;
        let half = 12.0;
        let cells = (2.0 * half / h) as i64;
        let mut oracle = 0.0;
        for i in 0..cells {
            for j in 0..cells {
                let x = -half + (i as f64 + 0.5) * h;
                let y = -half + (j as f64 + 0.5) * h;
                oracle += pts.iter().map(|p| kernel(((x - p[0]).powi(2) + (y - p[1]).powi(2)).sqrt())).product::<f64>();
            }
        }
        oracle *= h * h;
        assert!((v - oracle).abs() < 1e-3 * oracle, "{v} vs {oracle}");
    }

    #[test]
    fn clustering_follows_mass_envelope() {
        let model = scalar(2, &[1.0], LevySpec::scalar_poisson(1.0, 1.0));
        let lattice = VertexLattice::new(256, 0.125, 5e-2);
        let eval = |r: f64| {
            let points = vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![0.25 + r, 0.0]];
            schwinger_n_truncated(&points, &[0, 0, 0], &model, &lattice).unwrap()
        };
        let r0 = 2.0;
        let v0 = eval(r0);
        let mut prev = v0;
        for r in [3.0, 4.0, 6.0, 8.0] {
            let v = eval(r);
            assert!(v > 0.0 && v < prev);
            let envelope = v0 * (-(r - r0)).exp();
            let ratio = v / envelope;
            assert!((0.2..5.0).contains(&ratio), "r={r}: ratio {ratio}");
            prev = v;
        }
    }

    #[test]
    fn coarse_lattice_is_refused() {
        let model = scalar(2, &[1.0], LevySpec::scalar_poisson(1.0, 1.0));
        let points = vec![vec![0.0, 0.0], vec![0.3, 0.0], vec![0.0, 0.3]];
        let err = schwinger_n_truncated(&points, &[0, 0, 0], &model, &VertexLattice::new(8, 1.0, 1e-3)).unwrap_err();
        assert!(matches!(err, Error::Resolution(_)), "{err}");
    }

    #[test]
    fn kernel_wrapper_dispatches_by_order() {
        let model = scalar(2, &[1.0], LevySpec::scalar_poisson(1.0, 1.0));
        let k2 = TruncatedKernel::new(2, &model).unwrap();
        let direct = schwinger2_truncated(&[1.0, -0.5], 0, 0, &model).unwrap();
        assert_eq!(k2.evaluate(&[vec![1.5, 0.0], vec![0.5, 0.5]], &[0, 0]).unwrap(), direct);
        assert!(TruncatedKernel::new(1, &model).is_err());
    }
}
