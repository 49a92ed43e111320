//! Independent reference computations used by the test suites.
//!
//! Nothing here shares a code path with the production routines it checks:
//! cumulants come from finite differences of `ψ`, Bessel values from
//! polynomial approximations, Green functions from explicit lattice Fourier
//! sums and vertex integrals from brute-force midpoint quadrature.

use std::f64::consts::PI;

use crate::levy::{levy_psi, CumulantTensor};
use crate::model::LevySpec;
use crate::polynomial::unflatten;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Mixed central finite difference of `ψ` with multiplicities `counts`,
/// step `h` along every axis.
fn mixed_difference(levy: &LevySpec, counts: &[usize], h: f64) -> num_complex::Complex64 {
    let nf = counts.len();
    let total: usize = counts.iter().sum();
    let mut acc = num_complex::Complex64::new(0.0, 0.0);
    let mut k = vec![0usize; nf];
    loop {
        let mut weight = 1.0;
        let mut t = vec![0.0; nf];
        for b in 0..nf {
            weight *= binomial(counts[b], k[b]) * if k[b].is_multiple_of(2) { 1.0 } else { -1.0 };
            t[b] = (counts[b] as f64 / 2.0 - k[b] as f64) * h;
        }
        acc += weight * levy_psi(&t, levy);
        let mut pos = 0;
        while pos < nf {
            k[pos] += 1;
            if k[pos] <= counts[pos] {
                break;
            }
            k[pos] = 0;
            pos += 1;
        }
        if pos == nf {
            break;
        }
    }
    acc / h.powi(total as i32)
}

/// `(−i)ⁿ ∂ⁿψ` at the origin by Richardson-extrapolated central differences.
pub fn cumulant_by_finite_differences(n: usize, levy: &LevySpec) -> CumulantTensor {
    let nf = levy.n_fields();
    let scale = levy
        .atoms
        .iter()
        .flat_map(|a| a.s.iter())
        .fold(1.0f64, |m, s| m.max(s.abs()));
    let h0 = 0.8 / scale;
    let levels = 5;
    let phase = num_complex::Complex64::new(0.0, -1.0).powu(n as u32);
    let mut entries = vec![0.0; nf.pow(n as u32)];
    for (flat, entry) in entries.iter_mut().enumerate() {
        let idx = unflatten(flat, nf, n);
        let mut counts = vec![0usize; nf];
        for &b in &idx {
            counts[b] += 1;
        }
        let mut table: Vec<Vec<num_complex::Complex64>> = Vec::new();
        for j in 0..levels {
            let h = h0 / 2f64.powi(j as i32);
            let mut row = vec![mixed_difference(levy, &counts, h)];
            for i in 1..=j {
                let factor = 4f64.powi(i as i32) - 1.0;
                let improved = row[i - 1] + (row[i - 1] - table[j - 1][i - 1]) / factor;
                row.push(improved);
            }
            table.push(row);
        }
        *entry = (phase * table[levels - 1][levels - 1]).re;
    }
    CumulantTensor {
        order: n,
        n_fields: nf,
        entries,
    }
}

/// Modified Bessel `I₀` by the classic polynomial approximation (|x| ≤ 3.75).
fn bessel_i0_small(x: f64) -> f64 {
    let u = (x / 3.75).powi(2);
    1.0 + u * (3.5156229 + u * (3.0899424 + u * (1.2067492 + u * (0.2659732 + u * (0.0360768 + u * 0.0045813)))))
}

/// Modified Bessel `K₀` by the classic polynomial approximations,
/// absolute error below about 2e-7 relative to the leading asymptotics.
pub fn bessel_k0_polynomial(x: f64) -> f64 {
    assert!(x > 0.0);
    if x <= 2.0 {
        let t = (x / 2.0).powi(2);
        -(x / 2.0).ln() * bessel_i0_small(x) - 0.57721566
            + t * (0.42278420 + t * (0.23069756 + t * (0.03488590 + t * (0.00262698 + t * (0.00010750 + t * 0.00000740)))))
    } else {
        let y = 2.0 / x;
        let poly = 1.25331414
            + y * (-0.07832358 + y * (0.02189568 + y * (-0.01062446 + y * (0.00587872 + y * (-0.00251540 + y * 0.00053208)))));
        poly * (-x).exp() / x.sqrt()
    }
}

/// Lattice Green function of `−Δ_lat + m²` at a lattice site, by explicit
/// summation of the discrete inverse Fourier transform.
pub fn lattice_green_direct(site: &[i64], m: f64, sites: usize, spacing: f64) -> f64 {
    let d = site.len();
    let volume = (sites as f64 * spacing).powi(d as i32);
    let total = sites.pow(d as u32);
    let mut acc = 0.0;
    for flat in 0..total {
        let idx = unflatten(flat, sites, d);
        let mut lambda = 0.0;
        let mut phase = 0.0;
        for mu in 0..d {
            let k = 2.0 * PI * idx[mu] as f64 / (sites as f64 * spacing);
            lambda += 4.0 / (spacing * spacing) * (0.5 * k * spacing).sin().powi(2);
            phase += k * site[mu] as f64 * spacing;
        }
        acc += phase.cos() / (lambda + m * m);
    }
    acc / volume
}

/// `∫ Π_j K₀(m|x − x_j|)/(2π) d²x` by midpoint quadrature on `[−half, half]²`
/// around the centroid with cell size `h`.
pub fn vertex_integral_direct_2d(points: &[[f64; 2]], m: f64, half: f64, h: f64) -> f64 {
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / points.len() as f64;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / points.len() as f64;
    let cells = (2.0 * half / h).round() as i64;
    let mut acc = 0.0;
    for i in 0..cells {
        let x = cx - half + (i as f64 + 0.5) * h;
        for j in 0..cells {
            let y = cy - half + (j as f64 + 0.5) * h;
            let mut prod = 1.0;
            for p in points {
                let r = ((x - p[0]).powi(2) + (y - p[1]).powi(2)).sqrt();
                prod *= bessel_k0_polynomial(m * r) / (2.0 * PI);
            }
            acc += prod;
        }
    }
    acc * h * h
}
