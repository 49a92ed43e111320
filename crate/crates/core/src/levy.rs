//! The Lévy exponent of the noise and its cumulant tensors.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::LevySpec;
use crate::polynomial::unflatten;

/// Orders above this are refused by [`cumulant_tensor`].
pub const DEFAULT_MAX_ORDER: usize = 8;

/// Dense symmetric tensor `C_{β₁…βₙ}` of shape `Nⁿ`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CumulantTensor {
    pub order: usize,
    pub n_fields: usize,
    pub entries: Vec<f64>,
}

impl CumulantTensor {
    pub fn get(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.order);
        self.entries[crate::polynomial::flatten(idx, self.n_fields)]
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&x| x == 0.0)
    }

    /// Raises every index with `g⁻¹`: `C^{β…} = g^{ββ'}… C_{β'…}`.
    pub fn raised(&self, metric_inverse: &DMatrix<f64>) -> CumulantTensor {
        let n = self.n_fields;
        let mut current = self.entries.clone();
        // contract one slot at a time
        for slot in 0..self.order {
            let mut next = vec![0.0; current.len()];
            for (flat, out) in next.iter_mut().enumerate() {
                let mut idx = unflatten(flat, n, self.order);
                let target = idx[slot];
                let mut acc = 0.0;
                for b in 0..n {
                    idx[slot] = b;
                    acc += metric_inverse[(target, b)] * current[crate::polynomial::flatten(&idx, n)];
                }
                *out = acc;
            }
            current = next;
        }
        CumulantTensor {
            order: self.order,
            n_fields: n,
            entries: current,
        }
    }
}

/// `ψ(t) = i a·t − t·σ²t/2 + z Σ_i w_i (e^{i t·s_i} − 1)`.
pub fn levy_psi(t: &[f64], levy: &LevySpec) -> Complex64 {
    let n = levy.n_fields();
    assert_eq!(t.len(), n, "argument dimension mismatch");
    let drift: f64 = levy.a.iter().zip(t).map(|(a, t)| a * t).sum();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += t[i] * levy.sigma2[(i, j)] * t[j];
        }
    }
    let mut jumps = Complex64::new(0.0, 0.0);
    for atom in &levy.atoms {
        let phase: f64 = atom.s.iter().zip(t).map(|(s, t)| s * t).sum();
        jumps += atom.w * (Complex64::new(0.0, phase).exp() - 1.0);
    }
    Complex64::new(-0.5 * quad, drift) + levy.z * jumps
}

/// Closed-form `(−i)ⁿ ∂ⁿψ/∂t_{β₁}…∂t_{βₙ}` at `t = 0`.
pub fn cumulant_tensor(n: usize, levy: &LevySpec) -> Result<CumulantTensor> {
    cumulant_tensor_capped(n, levy, DEFAULT_MAX_ORDER)
}

pub fn cumulant_tensor_capped(n: usize, levy: &LevySpec, max_order: usize) -> Result<CumulantTensor> {
    if n == 0 {
        return Err(Error::Domain("cumulant order must be at least 1".into()));
    }
    if n > max_order {
        return Err(Error::Domain(format!("cumulant order {n} exceeds the configured cap {max_order}")));
    }
    let nf = levy.n_fields();
    let size = nf.pow(n as u32);
    let mut entries = vec![0.0; size];
    for (flat, entry) in entries.iter_mut().enumerate() {
        let idx = unflatten(flat, nf, n);
        let jumps: f64 = levy
            .atoms
            .iter()
            .map(|atom| atom.w * idx.iter().map(|&b| atom.s[b]).product::<f64>())
            .sum();
        *entry = levy.z * jumps
            + match n {
                1 => levy.a[idx[0]],
                2 => levy.sigma2[(idx[0], idx[1])],
                _ => 0.0,
            };
    }
    Ok(CumulantTensor {
        order: n,
        n_fields: nf,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Atom;
    use crate::oracles::cumulant_by_finite_differences;

    #[test]
    fn psi_vanishes_at_origin() {
        let levy = LevySpec::scalar_poisson(2.0, 3.0);
        assert_eq!(levy_psi(&[0.0], &levy), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn psi_single_atom_substitution() {
        let levy = LevySpec::scalar_poisson(2.0, 3.0);
        for t in [0.1, -0.7, 1.3] {
            let expected = 2.0 * (Complex64::new(0.0, 3.0 * t).exp() - 1.0);
            assert!((levy_psi(&[t], &levy) - expected).norm() < 1e-15);
        }
    }

    #[test]
    fn psi_pure_gaussian() {
        let levy = LevySpec::gaussian(DMatrix::from_element(1, 1, 1.0));
        assert_eq!(levy_psi(&[1.0], &levy), Complex64::new(-0.5, 0.0));
    }

    #[test]
    fn third_cumulant_of_single_atom() {
        let levy = LevySpec::scalar_poisson(2.0, 3.0);
        let c3 = cumulant_tensor(3, &levy).unwrap();
        assert_eq!(c3.entries, vec![54.0]);
        let fd = cumulant_by_finite_differences(3, &levy);
        assert!((fd.entries[0] - 54.0).abs() / 54.0 < 1e-6, "{}", fd.entries[0]);
    }

    #[test]
    fn gaussian_cumulants_vanish_beyond_two() {
        let levy = LevySpec::gaussian(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]));
        for n in 3..=8 {
            assert!(cumulant_tensor(n, &levy).unwrap().is_zero());
        }
    }

    #[test]
    fn unit_atom_has_unit_cumulants() {
        let levy = LevySpec::scalar_poisson(1.0, 1.0);
        for n in 2..=6 {
            assert_eq!(cumulant_tensor(n, &levy).unwrap().entries, vec![1.0]);
            let fd = cumulant_by_finite_differences(n, &levy);
            assert!((fd.entries[0] - 1.0).abs() < 1e-6, "order {n}: {}", fd.entries[0]);
        }
    }

    #[test]
    fn order_zero_and_above_cap_rejected() {
        let levy = LevySpec::scalar_poisson(1.0, 1.0);
        assert!(matches!(cumulant_tensor(0, &levy), Err(Error::Domain(_))));
        assert!(cumulant_tensor(9, &levy).is_err());
        assert!(cumulant_tensor_capped(9, &levy, 12).is_ok());
    }

    #[test]
    fn second_cumulant_is_sigma_bar_squared() {
        let levy = LevySpec {
            a: vec![0.2, -0.1],
            sigma2: DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 0.5]),
            z: 1.5,
            atoms: vec![
                Atom { w: 0.3, s: vec![1.0, -0.5] },
                Atom { w: 0.7, s: vec![0.2, 0.9] },
            ],
        };
        let c2 = cumulant_tensor(2, &levy).unwrap();
        let sb = levy.sigma_bar2();
        for i in 0..2 {
            for j in 0..2 {
                assert!((c2.get(&[i, j]) - sb[(i, j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn entries_are_permutation_symmetric() {
        let levy = LevySpec::compound_poisson(
            0.8,
            vec![
                Atom { w: 0.5, s: vec![1.0, 2.0, -0.5] },
                Atom { w: 0.5, s: vec![-0.3, 0.4, 1.1] },
            ],
        );
        let c4 = cumulant_tensor(4, &levy).unwrap();
        for flat in 0..81 {
            let idx = unflatten(flat, 3, 4);
            let mut rev = idx.clone();
            rev.reverse();
            let mut rot = idx.clone();
            rot.rotate_left(1);
            assert!((c4.get(&idx) - c4.get(&rev)).abs() < 1e-15);
            assert!((c4.get(&idx) - c4.get(&rot)).abs() < 1e-15);
        }
    }

    #[test]
    fn raising_with_identity_is_identity() {
        let levy = LevySpec::scalar_poisson(1.0, 2.0);
        let c3 = cumulant_tensor(3, &levy).unwrap();
        assert_eq!(c3.raised(&DMatrix::identity(1, 1)), c3);
        let scaled = c3.raised(&DMatrix::from_element(1, 1, 0.5));
        assert!((scaled.entries[0] - 8.0 * 0.125).abs() < 1e-15);
    }
}
