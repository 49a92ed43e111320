//! Set partitions and the conversion between full and truncated
//! correlation families.
//!
//! Full values `M` and truncated values `T` are related by
//! `M(A) = Σ_{π ∈ 𝒫(A)} Π_{B ∈ π} T(B)`. Both directions are available on
//! subset functions (indexed by bit masks over a fixed tuple of points) and
//! on dense tensors.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::polynomial::{flatten, unflatten};

/// Largest order accepted by [`partitions`].
pub const MAX_PARTITION_ORDER: usize = 10;

/// A partition of `{0, …, n−1}`; each block is ascending and blocks are
/// ordered by their smallest element.
pub type Partition = Vec<Vec<usize>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionFamily {
    pub order: usize,
    pub partitions: Vec<Partition>,
}

impl PartitionFamily {
    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }
}

/// All set partitions of `{0, …, n−1}`, enumerated by restricted growth
/// strings.
pub fn partitions(n: usize) -> Result<PartitionFamily> {
    if n == 0 || n > MAX_PARTITION_ORDER {
        return Err(Error::Domain(format!(
            "partition order must lie in 1..={MAX_PARTITION_ORDER}, got {n}"
        )));
    }
    Ok(PartitionFamily {
        order: n,
        partitions: partitions_unchecked(n),
    })
}

fn partitions_unchecked(n: usize) -> Vec<Partition> {
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
        return out;
    }
    // a[i] = block of element i, with a[i] ≤ 1 + max(a[..i])
    let mut a = vec![0usize; n];
    loop {
        let blocks = a.iter().max().unwrap() + 1;
        let mut p: Partition = vec![Vec::new(); blocks];
        for (i, &b) in a.iter().enumerate() {
            p[b].push(i);
        }
        out.push(p);
        // next restricted growth string
        let mut i = n - 1;
        loop {
            if i == 0 {
                return out;
            }
            let cap = a[..i].iter().max().unwrap() + 1;
            if a[i] < cap {
                a[i] += 1;
                for x in &mut a[i + 1..] {
                    *x = 0;
                }
                break;
            }
            i -= 1;
        }
    }
}

/// Bell number `B_n` by the triangle recurrence.
pub fn bell_number(n: usize) -> u64 {
    let mut row = vec![1u64];
    for _ in 0..n {
        let mut next = vec![*row.last().unwrap()];
        for v in &row {
            let last = *next.last().unwrap();
            next.push(last + v);
        }
        row = next;
    }
    row[0]
}

fn check_subset_len(len: usize) -> Result<usize> {
    let n = len.trailing_zeros() as usize;
    if len != 1 << n || n > 16 {
        return Err(Error::Domain(format!(
            "subset function needs 2^n entries, got {len}"
        )));
    }
    Ok(n)
}

fn mask_elements(mask: usize) -> Vec<usize> {
    (0..usize::BITS as usize).filter(|b| mask >> b & 1 == 1).collect()
}

/// Full values from truncated ones: `M(A) = Σ_π Π_B T(B)`, a literal sum
/// over the partitions of every subset. Entry `0` (the empty set) is ignored
/// on input and set to `1` on output.
pub fn untruncate_subsets(truncated: &[f64]) -> Result<Vec<f64>> {
    let n = check_subset_len(truncated.len())?;
    let mut out = vec![0.0; truncated.len()];
    out[0] = 1.0;
    let families: Vec<Vec<Partition>> = (0..=n).map(partitions_unchecked).collect();
    for (mask, slot) in out.iter_mut().enumerate().skip(1) {
        let elems = mask_elements(mask);
        let mut total = 0.0;
        for p in &families[elems.len()] {
            let mut prod = 1.0;
            for block in p {
                let sub: usize = block.iter().map(|&i| 1 << elems[i]).sum();
                prod *= truncated[sub];
            }
            total += prod;
        }
        *slot = total;
    }
    Ok(out)
}

/// Truncated values from full ones via the Möbius recursion
/// `T(A) = M(A) − Σ_{min A ∈ B ⊊ A} T(B) M(A∖B)`.
pub fn truncate_subsets(full: &[f64]) -> Result<Vec<f64>> {
    check_subset_len(full.len())?;
    let mut t = vec![0.0; full.len()];
    for mask in 1..full.len() {
        let low = mask & mask.wrapping_neg();
        let rest = mask ^ low;
        let mut value = full[mask];
        // B = low ∪ S for every proper subset S of rest
        let mut s = rest;
        loop {
            s = s.wrapping_sub(1) & rest;
            if s == rest {
                break;
            }
            let b = low | s;
            value -= t[b] * full[mask ^ b];
            if s == 0 {
                break;
            }
        }
        t[mask] = value;
    }
    Ok(t)
}

/// Dense tensor of shape `dimᵒʳᵈᵉʳ`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub order: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(order: usize, dim: usize) -> Self {
        Tensor {
            order,
            dim,
            data: vec![0.0; dim.pow(order as u32)],
        }
    }

    pub fn from_fn(order: usize, dim: usize, f: impl Fn(&[usize]) -> f64) -> Self {
        let data = (0..dim.pow(order as u32))
            .map(|flat| f(&unflatten(flat, dim, order)))
            .collect();
        Tensor { order, dim, data }
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[flatten(idx, self.dim)]
    }

    pub fn max_abs_difference(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

fn family_dim(values: &BTreeMap<usize, Tensor>, n: usize) -> Result<usize> {
    let mut dim = None;
    for k in 1..=n {
        let t = values
            .get(&k)
            .ok_or_else(|| Error::MissingInput(format!("order {k} missing from the family")))?;
        if t.order != k || t.data.len() != t.dim.pow(k as u32) {
            return Err(Error::Domain(format!("tensor stored under order {k} is malformed")));
        }
        match dim {
            None => dim = Some(t.dim),
            Some(d) if d != t.dim => {
                return Err(Error::Domain("tensors in a family must share one index range".into()))
            }
            _ => {}
        }
    }
    dim.ok_or_else(|| Error::Domain("order must be at least 1".into()))
}

fn convert_tensor(
    values: &BTreeMap<usize, Tensor>,
    n: usize,
    convert: fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<Tensor> {
    let dim = family_dim(values, n)?;
    let mut out = Tensor::zeros(n, dim);
    let mut subset = vec![0.0; 1 << n];
    for (flat, slot) in out.data.iter_mut().enumerate() {
        let idx = unflatten(flat, dim, n);
        for (mask, v) in subset.iter_mut().enumerate().skip(1) {
            let sub: Vec<usize> = mask_elements(mask).iter().map(|&i| idx[i]).collect();
            *v = values[&sub.len()].get(&sub);
        }
        *slot = convert(&subset)?[(1 << n) - 1];
    }
    Ok(out)
}

/// `W_n = Σ_π Π_B W^T_{|B|}` on every index tuple.
pub fn untruncate_tensor(truncated: &BTreeMap<usize, Tensor>, n: usize) -> Result<Tensor> {
    convert_tensor(truncated, n, untruncate_subsets)
}

/// Inverse of [`untruncate_tensor`].
pub fn truncate_tensor(full: &BTreeMap<usize, Tensor>, n: usize) -> Result<Tensor> {
    convert_tensor(full, n, truncate_subsets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bell_counts() {
        let bell = [1u64, 2, 5, 15, 52, 203, 877, 4140, 21147, 115975];
        for (n, b) in (1..=10).zip(bell) {
            assert_eq!(partitions(n).unwrap().len() as u64, b);
            assert_eq!(bell_number(n), b);
        }
        assert!(matches!(partitions(0), Err(Error::Domain(_))));
        assert!(matches!(partitions(11), Err(Error::Domain(_))));
    }

    #[test]
    fn blocks_cover_disjointly_and_ascend() {
        for n in 1..=7 {
            let fam = partitions(n).unwrap();
            let mut seen = std::collections::HashSet::new();
            for p in &fam.partitions {
                let mut all: Vec<usize> = p.iter().flatten().copied().collect();
                all.sort();
                assert_eq!(all, (0..n).collect::<Vec<_>>());
                for b in p {
                    assert!(!b.is_empty() && b.windows(2).all(|w| w[0] < w[1]));
                }
                assert!(p.windows(2).all(|w| w[0][0] < w[1][0]));
                assert!(seen.insert(p.clone()));
            }
        }
    }

    fn scalar_family(values: &[f64]) -> BTreeMap<usize, Tensor> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (i + 1, Tensor { order: i + 1, dim: 1, data: vec![v] }))
            .collect()
    }

    #[test]
    fn pair_counting() {
        let c = 1.7;
        let w4 = untruncate_tensor(&scalar_family(&[0.0, c, 0.0, 0.0]), 4).unwrap();
        assert!((w4.data[0] - 3.0 * c * c).abs() < 1e-14);
        let w3 = untruncate_tensor(&scalar_family(&[0.0, 0.0, 2.5]), 3).unwrap();
        assert_eq!(w3.data[0], 2.5);
    }

    #[test]
    fn gaussian_moments_have_no_higher_cumulants() {
        // centered Gaussian, variance v: M_{2k} = (2k−1)!! v^k
        let v: f64 = 0.8;
        let moments: Vec<f64> = (1..=8)
            .map(|n| {
                if n % 2 == 1 {
                    0.0
                } else {
                    (1..n).step_by(2).map(|j| j as f64).product::<f64>() * v.powi(n / 2)
                }
            })
            .collect();
        let fam = scalar_family(&moments);
        assert!((truncate_tensor(&fam, 2).unwrap().data[0] - v).abs() < 1e-14);
        for n in 3..=8 {
            assert!(truncate_tensor(&fam, n).unwrap().data[0].abs() < 1e-12, "order {n}");
        }
    }

    #[test]
    fn covariance_formula() {
        let s1 = Tensor { order: 1, dim: 2, data: vec![0.3, -1.1] };
        let s2 = Tensor { order: 2, dim: 2, data: vec![2.0, 0.5, 0.7, 1.5] };
        let fam: BTreeMap<_, _> = [(1, s1.clone()), (2, s2.clone())].into();
        let t2 = truncate_tensor(&fam, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = s2.get(&[i, j]) - s1.data[i] * s1.data[j];
                assert!((t2.get(&[i, j]) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn poisson_moments_truncate_to_intensity() {
        // Poisson(λ): every cumulant equals λ; moments are Touchard polynomials
        let lambda: f64 = 1.3;
        let stirling = |n: usize, k: usize| -> f64 {
            let mut s = vec![vec![0.0f64; n + 1]; n + 1];
            s[0][0] = 1.0;
            for i in 1..=n {
                for j in 1..=i {
                    s[i][j] = j as f64 * s[i - 1][j] + s[i - 1][j - 1];
                }
            }
            s[n][k]
        };
        let moments: Vec<f64> = (1..=6).map(|n| (1..=n).map(|k| stirling(n, k) * lambda.powi(k as i32)).sum()).collect();
        let fam = scalar_family(&moments);
        for n in 1..=6 {
            assert!((truncate_tensor(&fam, n).unwrap().data[0] - lambda).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_order_is_reported() {
        let mut fam = scalar_family(&[1.0, 2.0, 3.0]);
        fam.remove(&2);
        assert!(matches!(untruncate_tensor(&fam, 3), Err(Error::MissingInput(_))));
        assert!(matches!(truncate_tensor(&fam, 3), Err(Error::MissingInput(_))));
    }

    fn arb_family(n: usize, dim: usize) -> impl Strategy<Value = BTreeMap<usize, Tensor>> {
        let sizes: Vec<usize> = (1..=n).map(|k| dim.pow(k as u32)).collect();
        sizes
            .into_iter()
            .map(|s| prop::collection::vec(-2.0f64..2.0, s))
            .collect::<Vec<_>>()
            .prop_map(move |vs| {
                vs.into_iter()
                    .enumerate()
                    .map(|(i, data)| (i + 1, Tensor { order: i + 1, dim, data }))
                    .collect()
            })
    }

    fn roundtrip_family(n: usize, dim: usize) -> impl Strategy<Value = (usize, BTreeMap<usize, Tensor>)> {
        arb_family(n, dim).prop_map(move |f| (n, f))
    }

    fn any_family() -> impl Strategy<Value = (usize, BTreeMap<usize, Tensor>)> {
        prop_oneof![
            roundtrip_family(1, 3),
            roundtrip_family(2, 3),
            roundtrip_family(3, 2),
            roundtrip_family(4, 2),
            roundtrip_family(5, 1),
            roundtrip_family(6, 1),
            roundtrip_family(5, 2),
        ]
    }

    fn lift(family: &BTreeMap<usize, Tensor>, n: usize, f: fn(&BTreeMap<usize, Tensor>, usize) -> Result<Tensor>) -> BTreeMap<usize, Tensor> {
        (1..=n).map(|k| (k, f(family, k).unwrap())).collect()
    }

    proptest! {
        #[test]
        fn truncate_inverts_untruncate((n, fam) in any_family()) {
            let full = lift(&fam, n, untruncate_tensor);
            let back = truncate_tensor(&full, n).unwrap();
            prop_assert!(back.max_abs_difference(&fam[&n]) < 1e-10);
        }

        #[test]
        fn untruncate_inverts_truncate((n, fam) in any_family()) {
            let trunc = lift(&fam, n, truncate_tensor);
            let back = untruncate_tensor(&trunc, n).unwrap();
            prop_assert!(back.max_abs_difference(&fam[&n]) < 1e-10);
        }

        #[test]
        fn subset_roundtrip(values in prop::collection::vec(-3.0f64..3.0, 64)) {
            let full = untruncate_subsets(&values).unwrap();
            let back = truncate_subsets(&full).unwrap();
            for mask in 1..64 {
                prop_assert!((back[mask] - values[mask]).abs() < 1e-10);
            }
        }
    }
}
