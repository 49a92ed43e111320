//! Covariant operator data: the polynomial `p(t)`, the inverse symbol
//! `D̂⁻¹(k)`, the partial-fraction decomposition of the mass denominator
//! and the Euclidean Green kernels of `−Δ + m²`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{MassSpectrum, ValidatedModel};
use crate::quadrature::trapezoid_real_line;

/// `p(t) = Π_l (t + m_l²)^{ν_l} / Π_l m_l^{2ν_l}`, so that `p(0) = 1`.
pub fn p_polynomial(t: f64, spectrum: &MassSpectrum) -> f64 {
    debug_assert!(t >= 0.0, "p(t) is defined for t >= 0");
    spectrum
        .entries
        .iter()
        .map(|e| ((t + e.m * e.m) / (e.m * e.m)).powi(e.nu as i32))
        .product()
}

/// `D̂⁻¹(k) = Q_E(k) / Π_l (|k|² + m_l²)^{ν_l}`, indexed `(β, α)` like `Q_E`.
pub fn dhat_inverse(k: &[f64], model: &ValidatedModel) -> DMatrix<Complex64> {
    let n = model.n_fields();
    let k2: f64 = k.iter().map(|x| x * x).sum();
    let den = model.spectrum().denominator(k2);
    let arg = vec![k.to_vec()];
    DMatrix::from_fn(n, n, |b, a| model.q_e().evaluate_real(&[b, a], &arg) / den)
}

// ---------------------------------------------------------------------------
// Double-double arithmetic for the partial-fraction identity.

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

impl DoubleDouble {
    pub fn from_f64(x: f64) -> Self {
        DoubleDouble { hi: x, lo: 0.0 }
    }

    fn quick_two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        DoubleDouble { hi: s, lo: b - (s - a) }
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    pub fn add(self, o: Self) -> Self {
        let (s, e) = Self::two_sum(self.hi, o.hi);
        Self::quick_two_sum(s, e + self.lo + o.lo)
    }

    pub fn sub(self, o: Self) -> Self {
        self.add(DoubleDouble { hi: -o.hi, lo: -o.lo })
    }

    pub fn mul(self, o: Self) -> Self {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Self::quick_two_sum(p, e + self.hi * o.lo + self.lo * o.hi)
    }

    pub fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Self::from_f64(q1)));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul(Self::from_f64(q2)));
        let q3 = r.hi / o.hi;
        Self::quick_two_sum(q1, q2).add(Self::from_f64(q3))
    }

    pub fn square(x: f64) -> Self {
        let p = x * x;
        DoubleDouble { hi: p, lo: x.mul_add(x, -p) }
    }
}

/// Coefficients `b_l` with `1/Π_l(t + m_l²) = Σ_l b_l/(t + m_l²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialFractions {
    /// One coefficient per spectrum entry, rounded to `f64`.
    pub coefficients: Vec<f64>,
    /// Rounding residual of each coefficient (`b_l ≈ coefficients + residuals`).
    pub residuals: Vec<f64>,
    pub masses: Vec<f64>,
}

impl PartialFractions {
    /// `Σ_l b_l/(t + m_l²)` in plain `f64`.
    pub fn reconstruct(&self, t: f64) -> f64 {
        self.coefficients
            .iter()
            .zip(&self.masses)
            .map(|(b, m)| b / (t + m * m))
            .sum()
    }

    /// Relative error of the identity at `t`, evaluated in double-double
    /// arithmetic on both sides.
    pub fn identity_error(&self, t: f64) -> f64 {
        let t = DoubleDouble::from_f64(t);
        let one = DoubleDouble::from_f64(1.0);
        let mut exact = one;
        let mut sum = DoubleDouble::from_f64(0.0);
        for ((b, r), m) in self.coefficients.iter().zip(&self.residuals).zip(&self.masses) {
            let den = t.add(DoubleDouble::square(*m));
            exact = exact.div(den);
            let b = DoubleDouble { hi: *b, lo: *r };
            sum = sum.add(b.div(den));
        }
        (sum.sub(exact).hi / exact.hi).abs()
    }
}

/// Residue formula `b_l = Π_{j≠l} (m_j² − m_l²)⁻¹`.
pub fn partial_fractions(spectrum: &MassSpectrum) -> Result<PartialFractions> {
    if !spectrum.no_dipole() {
        return Err(Error::UnsupportedSpectrum(
            "partial fractions of simple poles require all nu = 1".into(),
        ));
    }
    let masses = spectrum.masses();
    for (i, a) in masses.iter().enumerate() {
        if masses[i + 1..].contains(a) {
            return Err(Error::UnsupportedSpectrum(format!("duplicate mass {a}")));
        }
    }
    let mut coefficients = Vec::with_capacity(masses.len());
    let mut residuals = Vec::with_capacity(masses.len());
    for (l, ml) in masses.iter().enumerate() {
        let ml2 = DoubleDouble::square(*ml);
        let mut prod = DoubleDouble::from_f64(1.0);
        for (j, mj) in masses.iter().enumerate() {
            if j != l {
                prod = prod.mul(DoubleDouble::square(*mj).sub(ml2));
            }
        }
        let b = DoubleDouble::from_f64(1.0).div(prod);
        coefficients.push(b.hi);
        residuals.push(b.lo);
    }
    Ok(PartialFractions {
        coefficients,
        residuals,
        masses,
    })
}

/// One term `c / (t + m²)^power` of a general partial-fraction expansion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoleTerm {
    pub mass: f64,
    pub power: u32,
    pub coefficient: f64,
}

/// Partial fractions of `1/Π_l (t + m_l²)^{ν_l}` including higher-order poles.
///
/// The coefficient of `(t + μ_l)^{−r}` is the Taylor coefficient of order
/// `ν_l − r` of `Π_{j≠l} (μ_j − μ_l + h)^{−ν_j}` in `h`.
pub fn general_partial_fractions(spectrum: &MassSpectrum) -> Vec<PoleTerm> {
    let mut out = Vec::new();
    for (l, el) in spectrum.entries.iter().enumerate() {
        let mu_l = el.m * el.m;
        let order = el.nu as usize;
        let mut series = vec![0.0; order];
        series[0] = 1.0;
        for (j, ej) in spectrum.entries.iter().enumerate() {
            if j == l {
                continue;
            }
            let c = ej.m * ej.m - mu_l;
            // (c + h)^{-ν} = c^{-ν} Σ_k binom(-ν, k) (h/c)^k
            let nu = ej.nu as f64;
            let mut factor = vec![0.0; order];
            let mut coeff = c.powf(-nu);
            for (k, f) in factor.iter_mut().enumerate() {
                *f = coeff;
                coeff *= (-nu - k as f64) / ((k + 1) as f64 * c);
            }
            let mut next = vec![0.0; order];
            for a in 0..order {
                for b in 0..order - a {
                    next[a + b] += series[a] * factor[b];
                }
            }
            series = next;
        }
        for r in 1..=el.nu {
            out.push(PoleTerm {
                mass: el.m,
                power: r,
                coefficient: series[(el.nu - r) as usize],
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Green kernels

/// `K₀(x) = ∫₀^∞ e^{−x cosh t} dt`.
pub fn bessel_k0(x: f64) -> f64 {
    bessel_k(0.0, x)
}

/// `K_ν(x) = ∫₀^∞ e^{−x cosh t} cosh(νt) dt` for real `ν` and `x > 0`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0);
    // the integrand is even in t; integrate over the whole line and halve
    let r = trapezoid_real_line(
        |t| (-x * (t.cosh() - 1.0)).exp() * (nu * t).cosh(),
        0.0,
        1e-300,
        1e-15,
    )
    .expect("K_nu integrand decays double exponentially");
    0.5 * r.value * (-x).exp()
}

/// Fundamental solution of `−Δ + m²` in `d` dimensions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreenKernel {
    pub m: f64,
    pub d: usize,
}

impl GreenKernel {
    pub fn new(m: f64, d: usize) -> Self {
        GreenKernel { m, d }
    }

    /// Value at radius `r > 0`; closed forms for `d ≤ 3`.
    pub fn radial(&self, r: f64) -> f64 {
        let m = self.m;
        match self.d {
            1 => (-m * r).exp() / (2.0 * m),
            2 => bessel_k0(m * r) / (2.0 * PI),
            3 => (-m * r).exp() / (4.0 * PI * r),
            d => proper_time_green(m, d, r),
        }
    }
}

/// `∫₀^∞ (4πs)^{−d/2} e^{−r²/4s − m²s} ds`, integrated in `u = ln s`.
pub fn proper_time_green(m: f64, d: usize, r: f64) -> f64 {
    let dh = d as f64 / 2.0;
    let center = (r / (2.0 * m)).max(1e-12).ln();
    let f = |u: f64| {
        let s = u.exp();
        ((1.0 - dh) * u - r * r / (4.0 * s) - m * m * s).exp()
    };
    let v = trapezoid_real_line(f, center, 1e-300, 1e-13)
        .expect("proper-time integrand decays double exponentially")
        .value;
    v * (4.0 * PI).powf(-dh)
}

/// `G_m(x)`, the kernel of `(−Δ + m²)⁻¹` at `x ∈ ℝ^d`.
pub fn green_kernel(x: &[f64], m: f64, d: usize) -> Result<f64> {
    if x.len() != d {
        return Err(Error::Domain(format!("point has {} components, expected {d}", x.len())));
    }
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r < 1e-12 {
        return Err(Error::Singularity(format!("Green kernel evaluated at |x| = {r:e}")));
    }
    Ok(GreenKernel::new(m, d).radial(r))
}
