//! Matrix-valued polynomials in one or several momentum arguments.
//!
//! A [`CovariantPolynomial`] stores monomials keyed by a tuple of field
//! indices and a power vector. The single-argument operator polynomial
//! `Q_E(k)` carries two field indices `(β, α)`; the n-point vertex
//! polynomial carries one field index per argument. Component 0 of every
//! momentum argument is the (Euclidean or Minkowski) time component.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent pattern of one monomial together with its field indices.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial {
    pub fields: Vec<usize>,
    /// Argument-major powers: `powers[arg * dim + mu]`.
    pub powers: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovariantPolynomial {
    n_args: usize,
    dim: usize,
    field_rank: usize,
    degree_bound: Option<u32>,
    terms: BTreeMap<Monomial, Complex64>,
}

/// Serializable form of one polynomial term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermRecord {
    pub fields: Vec<usize>,
    /// One power vector per argument.
    pub powers: Vec<Vec<u32>>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl CovariantPolynomial {
    pub fn zero(n_args: usize, dim: usize, field_rank: usize) -> Self {
        CovariantPolynomial {
            n_args,
            dim,
            field_rank,
            degree_bound: None,
            terms: BTreeMap::new(),
        }
    }

    /// The constant identity matrix `Q_E(k) = 1` for `n_fields` components.
    pub fn identity(dim: usize, n_fields: usize) -> Self {
        let mut p = Self::zero(1, dim, 2);
        for a in 0..n_fields {
            p.add_term(vec![a, a], vec![0; dim], Complex64::new(1.0, 0.0));
        }
        p
    }

    /// A field-independent polynomial (`field_rank` zero slots all equal 0).
    pub fn scalar_constant(n_args: usize, dim: usize, value: Complex64) -> Self {
        let mut p = Self::zero(n_args, dim, n_args);
        p.add_term(vec![0; n_args], vec![0; n_args * dim], value);
        p
    }

    pub fn n_args(&self) -> usize {
        self.n_args
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn field_rank(&self) -> usize {
        self.field_rank
    }

    pub fn degree_bound(&self) -> Option<u32> {
        self.degree_bound
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Complex64)> {
        self.terms.iter()
    }

    /// Adds `coeff` to the coefficient of the given monomial; exact zeros are dropped.
    pub fn add_term(&mut self, fields: Vec<usize>, powers: Vec<u32>, coeff: Complex64) {
        assert_eq!(fields.len(), self.field_rank, "field rank mismatch");
        assert_eq!(powers.len(), self.n_args * self.dim, "power vector length mismatch");
        let key = Monomial { fields, powers };
        let entry = self.terms.entry(key.clone()).or_insert(Complex64::new(0.0, 0.0));
        *entry += coeff;
        if *entry == Complex64::new(0.0, 0.0) {
            self.terms.remove(&key);
        }
    }

    pub fn coefficient(&self, fields: &[usize], powers: &[u32]) -> Complex64 {
        let key = Monomial {
            fields: fields.to_vec(),
            powers: powers.to_vec(),
        };
        self.terms.get(&key).copied().unwrap_or_default()
    }

    /// Largest total degree of any monomial in argument `arg`.
    pub fn degree_in_arg(&self, arg: usize) -> u32 {
        self.terms
            .keys()
            .map(|m| m.powers[arg * self.dim..(arg + 1) * self.dim].iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn max_degree_per_arg(&self) -> u32 {
        (0..self.n_args).map(|a| self.degree_in_arg(a)).max().unwrap_or(0)
    }

    /// Attaches a per-argument degree bound, rejecting polynomials that exceed it.
    pub fn with_degree_bound(mut self, bound: u32) -> Result<Self> {
        let actual = self.max_degree_per_arg();
        if actual > bound {
            return Err(Error::Domain(format!(
                "polynomial degree {actual} in some argument exceeds declared bound {bound}"
            )));
        }
        self.degree_bound = Some(bound);
        Ok(self)
    }

    /// Evaluates the entry with the given field indices at complex momenta.
    pub fn evaluate(&self, fields: &[usize], momenta: &[Vec<Complex64>]) -> Complex64 {
        debug_assert_eq!(momenta.len(), self.n_args);
        let mut acc = Complex64::new(0.0, 0.0);
        for (mono, coeff) in &self.terms {
            if mono.fields != fields {
                continue;
            }
            let mut value = *coeff;
            for (arg, k) in momenta.iter().enumerate() {
                for mu in 0..self.dim {
                    let p = mono.powers[arg * self.dim + mu];
                    if p > 0 {
                        value *= k[mu].powu(p);
                    }
                }
            }
            acc += value;
        }
        acc
    }

    pub fn evaluate_real(&self, fields: &[usize], momenta: &[Vec<f64>]) -> Complex64 {
        let complex: Vec<Vec<Complex64>> = momenta
            .iter()
            .map(|k| k.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .collect();
        self.evaluate(fields, &complex)
    }

    /// Substitutes `k⁰ → i k⁰` in every argument: a monomial with total
    /// time-component degree `r` picks up a factor `iʳ`.
    pub fn continue_to_minkowski(&self) -> Self {
        let mut out = Self::zero(self.n_args, self.dim, self.field_rank);
        out.degree_bound = self.degree_bound;
        for (mono, coeff) in &self.terms {
            let r: u32 = (0..self.n_args).map(|a| mono.powers[a * self.dim]).sum();
            let phase = match r % 4 {
                0 => Complex64::new(1.0, 0.0),
                1 => Complex64::new(0.0, 1.0),
                2 => Complex64::new(-1.0, 0.0),
                _ => Complex64::new(0.0, -1.0),
            };
            out.add_term(mono.fields.clone(), mono.powers.clone(), coeff * phase);
        }
        out
    }

    /// Builds the n-point vertex polynomial
    /// `Σ_β C^{β₁…βₙ} Π_l Q_{β_l α_l}(k_l)` from a single-argument matrix
    /// polynomial and a dense order-n tensor with raised indices.
    pub fn vertex(n: usize, cumulant: &[f64], n_fields: usize, q_e: &CovariantPolynomial) -> Self {
        assert_eq!(q_e.n_args, 1);
        assert_eq!(q_e.field_rank, 2);
        assert_eq!(cumulant.len(), n_fields.pow(n as u32));
        let dim = q_e.dim;
        // entries[β][α] = list of (powers, coeff)
        type Terms<'a> = Vec<(&'a [u32], Complex64)>;
        let mut entries: Vec<Vec<Terms>> = vec![vec![Vec::new(); n_fields]; n_fields];
        for (mono, coeff) in &q_e.terms {
            entries[mono.fields[0]][mono.fields[1]].push((&mono.powers, *coeff));
        }
        let mut out = Self::zero(n, dim, n);
        for (beta_flat, &c) in cumulant.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let beta = unflatten(beta_flat, n_fields, n);
            for alpha_flat in 0..n_fields.pow(n as u32) {
                let alpha = unflatten(alpha_flat, n_fields, n);
                let lists: Vec<&Vec<(&[u32], Complex64)>> =
                    (0..n).map(|l| &entries[beta[l]][alpha[l]]).collect();
                if lists.iter().any(|l| l.is_empty()) {
                    continue;
                }
                let mut choice = vec![0usize; n];
                loop {
                    let mut powers = Vec::with_capacity(n * dim);
                    let mut coeff = Complex64::new(c, 0.0);
                    for l in 0..n {
                        let (p, q) = lists[l][choice[l]];
                        powers.extend_from_slice(p);
                        coeff *= q;
                    }
                    out.add_term(alpha.clone(), powers, coeff);
                    // odometer over the monomial choices
                    let mut pos = 0;
                    loop {
                        if pos == n {
                            break;
                        }
                        choice[pos] += 1;
                        if choice[pos] < lists[pos].len() {
                            break;
                        }
                        choice[pos] = 0;
                        pos += 1;
                    }
                    if pos == n {
                        break;
                    }
                }
            }
        }
        out
    }

    /// Restricts a two-argument polynomial to `k₂ = −k₁`, giving a
    /// one-argument polynomial with the same two field slots.
    pub fn restrict_two_point(&self) -> Self {
        assert_eq!(self.n_args, 2);
        let dim = self.dim;
        let mut out = Self::zero(1, dim, self.field_rank);
        for (mono, coeff) in &self.terms {
            let second: u32 = mono.powers[dim..].iter().sum();
            let sign = if second.is_multiple_of(2) { 1.0 } else { -1.0 };
            let powers: Vec<u32> = (0..dim).map(|mu| mono.powers[mu] + mono.powers[dim + mu]).collect();
            out.add_term(mono.fields.clone(), powers, coeff * sign);
        }
        out
    }

    /// Reorders arguments (and their field slots): argument `i` of the result
    /// is argument `perm[i]` of `self`. Requires one field slot per argument.
    pub fn permute_args(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n_args);
        assert_eq!(self.field_rank, self.n_args);
        let dim = self.dim;
        let mut out = Self::zero(self.n_args, dim, self.field_rank);
        out.degree_bound = self.degree_bound;
        for (mono, coeff) in &self.terms {
            let fields = perm.iter().map(|&p| mono.fields[p]).collect();
            let powers = perm
                .iter()
                .flat_map(|&p| mono.powers[p * dim..(p + 1) * dim].iter().copied())
                .collect();
            out.add_term(fields, powers, *coeff);
        }
        out
    }

    /// Symmetry under simultaneous permutation of (argument, field index) pairs.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.field_rank != self.n_args {
            return false;
        }
        (0..self.n_args.saturating_sub(1)).all(|i| {
            let mut perm: Vec<usize> = (0..self.n_args).collect();
            perm.swap(i, i + 1);
            self.max_abs_difference(&self.permute_args(&perm)) <= tol
        })
    }

    pub fn max_abs_difference(&self, other: &Self) -> f64 {
        let mut worst = 0.0f64;
        for (m, c) in &self.terms {
            let o = other.terms.get(m).copied().unwrap_or_default();
            worst = worst.max((c - o).norm());
        }
        for (m, c) in &other.terms {
            if !self.terms.contains_key(m) {
                worst = worst.max(c.norm());
            }
        }
        worst
    }

    pub fn to_records(&self) -> Vec<TermRecord> {
        self.terms
            .iter()
            .map(|(m, c)| TermRecord {
                fields: m.fields.clone(),
                powers: m.powers.chunks(self.dim).map(<[u32]>::to_vec).collect(),
                re: c.re,
                im: c.im,
            })
            .collect()
    }

    pub fn from_records(n_args: usize, dim: usize, field_rank: usize, records: &[TermRecord]) -> Result<Self> {
        let mut p = Self::zero(n_args, dim, field_rank);
        for (i, r) in records.iter().enumerate() {
            if r.fields.len() != field_rank {
                return Err(Error::Parse(format!(
                    "term {i}: expected {field_rank} field indices, found {}",
                    r.fields.len()
                )));
            }
            if r.powers.len() != n_args || r.powers.iter().any(|p| p.len() != dim) {
                return Err(Error::Parse(format!(
                    "term {i}: expected {n_args} power vectors of length {dim}"
                )));
            }
            p.add_term(r.fields.clone(), r.powers.concat(), Complex64::new(r.re, r.im));
        }
        Ok(p)
    }
}

/// Row-major multi-index of a flat tensor offset (first index slowest).
pub(crate) fn unflatten(mut flat: usize, base: usize, order: usize) -> Vec<usize> {
    let mut idx = vec![0; order];
    for slot in (0..order).rev() {
        idx[slot] = flat % base;
        flat /= base;
    }
    idx
}

pub(crate) fn flatten(idx: &[usize], base: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * base + i)
}
