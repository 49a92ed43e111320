//! Lattice Monte Carlo for `Dφ = η` on a periodic cubic lattice.
//!
//! The noise is the sum of white Gauss–Poisson noise with Lévy exponent `ψ`
//! and an independent Gaussian field whose spectral density is
//! `σ̄²(p(λ) − 1)`, so that the total two-point spectrum is `σ̄² p(λ)`. The
//! field is obtained spectrally with the lattice Laplacian eigenvalue
//! `λ(k) = (4/a²) Σ sin²(k_μ a/2)` in the denominator and `Q_E` evaluated at
//! `sin(k_μ a)/a`. [`lattice_analytic_kernel`] evaluates the truncated
//! kernels with the same symbol, so both sides share discretization error.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Geometric, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{signed_mode, FftNd};
use crate::levy::cumulant_tensor;
use crate::model::ValidatedModel;
use crate::polynomial::unflatten;
use crate::propagator::p_polynomial;
use crate::truncation::truncate_subsets;

/// Largest admissible number of stored values, `L^d · N`.
pub const MAX_LATTICE_VALUES: usize = 1 << 24;

/// Samples per jackknife block.
pub const BLOCK_SIZE: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub d: usize,
    pub sites: usize,
    pub spacing: f64,
}

impl LatticeSpec {
    pub fn new(d: usize, sites: usize, spacing: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("lattice dimension must be positive".into()));
        }
        if sites < 2 || !sites.is_power_of_two() {
            return Err(Error::Config(format!("sites per axis must be a power of two ≥ 2, got {sites}")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::Config(format!("lattice spacing must be positive, got {spacing}")));
        }
        if sites.checked_pow(d as u32).is_none_or(|v| v > MAX_LATTICE_VALUES) {
            return Err(Error::Config(format!("lattice {sites}^{d} exceeds the memory budget")));
        }
        Ok(LatticeSpec { d, sites, spacing })
    }

    pub fn volume(&self) -> usize {
        self.sites.pow(self.d as u32)
    }

    pub fn extent(&self) -> f64 {
        self.sites as f64 * self.spacing
    }

    /// Row-major index of the site with (periodically wrapped) coordinates.
    pub fn flat_index(&self, coords: &[i64]) -> usize {
        let l = self.sites as i64;
        coords.iter().fold(0usize, |acc, &c| acc * self.sites + c.rem_euclid(l) as usize)
    }

    pub fn coords(&self, flat: usize) -> Vec<i64> {
        unflatten(flat, self.sites, self.d).into_iter().map(|c| c as i64).collect()
    }

    /// Checks compatibility with a model; returns non-fatal warnings.
    pub fn check_model(&self, model: &ValidatedModel) -> Result<Vec<String>> {
        if self.d != model.d() {
            return Err(Error::Config(format!(
                "lattice dimension {} does not match model dimension {}",
                self.d,
                model.d()
            )));
        }
        if self.volume() * model.n_fields() > MAX_LATTICE_VALUES {
            return Err(Error::Config("lattice with all field components exceeds the memory budget".into()));
        }
        let mut warnings = Vec::new();
        let needed = 6.0 / model.spectrum().min_mass();
        if self.extent() <= needed {
            warnings.push(format!(
                "box extent {} is below 6/m_min = {needed}; periodic images will be visible",
                self.extent()
            ));
        }
        Ok(warnings)
    }
}

/// A seeded random stream. Streams with equal `(seed, stream)` reproduce
/// each other exactly.
#[derive(Clone, Debug)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }
}

/// Hands out each stream of one seed at most once.
#[derive(Clone, Debug)]
pub struct StreamAllocator {
    seed: u64,
    claimed: BTreeSet<u64>,
}

impl StreamAllocator {
    pub fn new(seed: u64) -> Self {
        StreamAllocator {
            seed,
            claimed: BTreeSet::new(),
        }
    }

    pub fn claim(&mut self, stream: u64) -> Result<RngStream> {
        if !self.claimed.insert(stream) {
            return Err(Error::Config(format!(
                "random stream {stream} of seed {} is already in use",
                self.seed
            )));
        }
        Ok(RngStream::new(self.seed, stream))
    }
}

/// Field values on every site, `values[site · N + α]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub values: Vec<f64>,
    pub n_fields: usize,
    pub seed: u64,
    pub stream: u64,
}

impl FieldSample {
    pub fn get(&self, site: usize, alpha: usize) -> f64 {
        self.values[site * self.n_fields + alpha]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseOptions {
    /// Adds the Gaussian component with spectrum `σ̄²(p(λ) − 1)`.
    pub include_p_filter: bool,
}

impl Default for NoiseOptions {
    fn default() -> Self {
        NoiseOptions { include_p_filter: true }
    }
}

/// `U·diag(√max(λ,0))` for a symmetric PSD matrix, so that `F Fᵀ = A`.
fn psd_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let mut f = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        for i in 0..f.nrows() {
            f[(i, j)] *= s;
        }
    }
    f
}

/// Per-site Poisson jump counts. At low rates only the occupied sites are
/// visited: gaps are geometric and counts zero-truncated Poisson, which is
/// the same joint law as independent per-site draws.
enum JumpSampler {
    PerSite(Poisson<f64>),
    Sparse { gap: Geometric, rate: f64, first: f64, occupied: f64 },
}

impl JumpSampler {
    fn new(rate: f64) -> Result<Self> {
        let err = |e: String| Error::Config(format!("jump rate {rate}: {e}"));
        if rate <= 1.0 {
            let occupied = -(-rate).exp_m1();
            let gap = Geometric::new(occupied).map_err(|e| err(e.to_string()))?;
            Ok(JumpSampler::Sparse {
                gap,
                rate,
                first: (-rate).exp() * rate,
                occupied,
            })
        } else {
            Ok(JumpSampler::PerSite(Poisson::new(rate).map_err(|e| err(e.to_string()))?))
        }
    }

    fn for_each_site(&self, volume: usize, rng: &mut ChaCha8Rng, mut visit: impl FnMut(usize, u64, &mut ChaCha8Rng)) {
        match self {
            JumpSampler::PerSite(p) => {
                for site in 0..volume {
                    let count = p.sample(rng) as u64;
                    if count > 0 {
                        visit(site, count, rng);
                    }
                }
            }
            JumpSampler::Sparse { gap, rate, first, occupied } => {
                let mut site = gap.sample(rng);
                while site < volume as u64 {
                    let count = zero_truncated_poisson(*rate, *first, *occupied, rng);
                    visit(site as usize, count, rng);
                    site = site.saturating_add(1 + gap.sample(rng));
                }
            }
        }
    }
}

/// Poisson(`rate`) conditioned on at least one event, by inversion;
/// `first = rate·e^{−rate}` and `occupied = 1 − e^{−rate}`.
fn zero_truncated_poisson(rate: f64, first: f64, occupied: f64, rng: &mut ChaCha8Rng) -> u64 {
    let target = rng.random::<f64>() * occupied;
    let mut k = 1u64;
    let mut term = first;
    let mut cumulative = term;
    while cumulative < target && k < 10_000 {
        k += 1;
        term *= rate / k as f64;
        cumulative += term;
    }
    k
}

/// Precomputed spectral data and scratch space for one lattice and model.
struct Workspace {
    lattice: LatticeSpec,
    n_fields: usize,
    /// `M(k)_{αβ} = (Q_E(k̃)ᵀ g⁻¹)_{αβ} / Π(λ + m²)^ν`, row-major per mode.
    response: Vec<Complex64>,
    /// `√(p(λ) − 1)` per mode.
    filter: Vec<f64>,
    /// `p(λ)` per mode.
    p_values: Vec<f64>,
    /// Flat index of `−k`.
    negated: Vec<usize>,
    drift: Vec<f64>,
    gauss_factor: Option<DMatrix<f64>>,
    filter_factor: Option<DMatrix<f64>>,
    jumps: Option<JumpSampler>,
    atom_choice: Option<WeightedIndex<f64>>,
    atoms: Vec<Vec<f64>>,
    fft: FftNd,
    buffers: Vec<Vec<Complex64>>,
    spectra: Vec<Vec<Complex64>>,
    field: Vec<f64>,
    psi_noise: Vec<f64>,
    white: Vec<f64>,
}

impl Workspace {
    fn new(lattice: &LatticeSpec, model: &ValidatedModel) -> Result<Self> {
        lattice.check_model(model)?;
        let d = lattice.d;
        let nf = model.n_fields();
        let volume = lattice.volume();
        let a = lattice.spacing;
        let dk = 2.0 * PI / lattice.extent();
        let cell = a.powi(d as i32);
        let ginv = model.metric_inverse();
        let mut response = vec![Complex64::default(); volume * nf * nf];
        let mut filter = vec![0.0; volume];
        let mut p_values = vec![0.0; volume];
        let mut negated = vec![0usize; volume];
        for flat in 0..volume {
            let idx = unflatten(flat, lattice.sites, d);
            let mut lambda = 0.0;
            let mut ktilde = vec![0.0; d];
            let mut neg = vec![0i64; d];
            for mu in 0..d {
                let (m, _) = signed_mode(idx[mu], lattice.sites);
                let k = m as f64 * dk;
                lambda += 4.0 / (a * a) * (0.5 * k * a).sin().powi(2);
                ktilde[mu] = (k * a).sin() / a;
                neg[mu] = -(idx[mu] as i64);
            }
            negated[flat] = lattice.flat_index(&neg);
            let den = model.spectrum().denominator(lambda);
            let p = p_polynomial(lambda, model.spectrum());
            p_values[flat] = p;
            filter[flat] = (p - 1.0).max(0.0).sqrt();
            let arg = [ktilde];
            for alpha in 0..nf {
                for beta in 0..nf {
                    let mut acc = Complex64::default();
                    for bp in 0..nf {
                        let g = ginv[(bp, beta)];
                        if g != 0.0 {
                            acc += model.q_e().evaluate_real(&[bp, alpha], &arg) * g;
                        }
                    }
                    response[(flat * nf + alpha) * nf + beta] = acc / den;
                }
            }
        }
        let scale = response.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        for flat in 0..volume {
            let nk = negated[flat];
            for i in 0..nf * nf {
                if (response[flat * nf * nf + i] - response[nk * nf * nf + i].conj()).norm() > 1e-12 * scale {
                    return Err(Error::Domain(
                        "Q_E does not define a real operator (Q_E(-k) must equal conj Q_E(k)); \
                         the lattice field would not be real"
                            .into(),
                    ));
                }
            }
        }
        let levy = model.levy();
        let gauss_factor = if levy.sigma2.iter().any(|&v| v != 0.0) {
            Some(psd_factor(&levy.sigma2) / cell.sqrt())
        } else {
            None
        };
        let sb = model.sigma_bar2();
        let filter_factor = if sb.iter().any(|&v| v != 0.0) {
            Some(psd_factor(sb) / cell.sqrt())
        } else {
            None
        };
        let total_weight: f64 = levy.atoms.iter().map(|a| a.w).sum();
        let (poisson, atom_choice) = if levy.z > 0.0 && !levy.atoms.is_empty() && total_weight > 0.0 {
            let rate = levy.z * total_weight * cell;
            let poisson = JumpSampler::new(rate)?;
            let choice = if levy.atoms.len() > 1 {
                Some(
                    WeightedIndex::new(levy.atoms.iter().map(|a| a.w))
                        .map_err(|e| Error::Config(format!("atom weights: {e}")))?,
                )
            } else {
                None
            };
            (Some(poisson), choice)
        } else {
            (None, None)
        };
        Ok(Workspace {
            lattice: *lattice,
            n_fields: nf,
            response,
            filter,
            p_values,
            negated,
            drift: levy.a.clone(),
            gauss_factor,
            filter_factor,
            jumps: poisson,
            atom_choice,
            atoms: levy.atoms.iter().map(|a| a.s.iter().map(|s| s / cell).collect()).collect(),
            fft: FftNd::new(lattice.sites, d),
            buffers: vec![vec![Complex64::default(); volume]; nf],
            spectra: vec![vec![Complex64::default(); volume]; nf],
            field: vec![0.0; volume * nf],
            psi_noise: vec![0.0; volume * nf],
            white: vec![0.0; volume * nf],
        })
    }

    /// Fixed draw order: Gaussian part of the ψ-noise site by site, then the
    /// jumps, then white normals for the filtered Gaussian (already
    /// multiplied by the `σ̄²` factor).
    fn draw(&mut self, rng: &mut ChaCha8Rng, include_filter: bool) {
        let nf = self.n_fields;
        let volume = self.lattice.volume();
        let mut z = vec![0.0; nf];
        for (i, v) in self.psi_noise.iter_mut().enumerate() {
            *v = self.drift[i % nf];
        }
        if let Some(f) = &self.gauss_factor {
            for site in 0..volume {
                for v in z.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                for i in 0..nf {
                    self.psi_noise[site * nf + i] += (0..nf).map(|j| f[(i, j)] * z[j]).sum::<f64>();
                }
            }
        }
        if let Some(jumps) = &self.jumps {
            let atoms = &self.atoms;
            let choice = &self.atom_choice;
            let out = &mut self.psi_noise;
            jumps.for_each_site(volume, rng, |site, count, rng| {
                for _ in 0..count {
                    let atom = match choice {
                        Some(c) => c.sample(rng),
                        None => 0,
                    };
                    for (o, s) in out[site * nf..(site + 1) * nf].iter_mut().zip(&atoms[atom]) {
                        *o += s;
                    }
                }
            });
        }
        match (&self.filter_factor, include_filter) {
            (Some(f), true) if nf == 1 => {
                let f = f[(0, 0)];
                for w in self.white.iter_mut() {
                    *w = f * rng.sample::<f64, _>(StandardNormal);
                }
            }
            (Some(f), true) => {
                for site in 0..volume {
                    for v in z.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    for i in 0..nf {
                        self.white[site * nf + i] = (0..nf).map(|j| f[(i, j)] * z[j]).sum();
                    }
                }
            }
            _ => self.white.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    /// Noise `v = ψ-noise + ξ`, with `ξ̂ = √(p−1) · (white noise)^`.
    fn assemble_noise(&mut self) -> Vec<f64> {
        let nf = self.n_fields;
        let volume = self.lattice.volume();
        let mut out = self.psi_noise.clone();
        if self.white.iter().all(|&v| v == 0.0) {
            return out;
        }
        for beta in 0..nf {
            let buf = &mut self.buffers[beta];
            for site in 0..volume {
                buf[site] = Complex64::new(self.white[site * nf + beta], 0.0);
            }
            self.fft.forward(buf);
            for (k, v) in buf.iter_mut().enumerate() {
                *v *= self.filter[k];
            }
            self.fft.inverse(buf);
            for site in 0..volume {
                out[site * nf + beta] += buf[site].re / volume as f64;
            }
        }
        out
    }

    /// `φ̂_α(k) = Σ_β M(k)_{αβ} v̂_β(k)`, then back to position space.
    fn solve_from_spectra(&mut self) -> &[f64] {
        let nf = self.n_fields;
        let volume = self.lattice.volume();
        let scale = 1.0 / volume as f64;
        if nf == 1 {
            let buf = &mut self.buffers[0];
            for (v, m) in buf.iter_mut().zip(&self.response) {
                *v *= m;
            }
            self.fft.inverse(buf);
            for (out, v) in self.field.iter_mut().zip(buf.iter()) {
                *out = v.re * scale;
            }
            return &self.field;
        }
        for k in 0..volume {
            for (alpha, row) in self.spectra.iter_mut().enumerate() {
                let mut acc = Complex64::default();
                for beta in 0..nf {
                    acc += self.response[(k * nf + alpha) * nf + beta] * self.buffers[beta][k];
                }
                row[k] = acc;
            }
        }
        for alpha in 0..nf {
            let row = &mut self.spectra[alpha];
            self.fft.inverse(row);
            for site in 0..volume {
                self.field[site * nf + alpha] = row[site].re * scale;
            }
        }
        &self.field
    }

    fn solve(&mut self, noise: &[f64]) -> &[f64] {
        let nf = self.n_fields;
        let volume = self.lattice.volume();
        for beta in 0..nf {
            let buf = &mut self.buffers[beta];
            for site in 0..volume {
                buf[site] = Complex64::new(noise[site * nf + beta], 0.0);
            }
            self.fft.forward(buf);
        }
        self.solve_from_spectra()
    }

    /// Draws one field: ψ-noise and filter noise are packed as real and
    /// imaginary part of a single transform per component.
    fn sample_field(&mut self, rng: &mut ChaCha8Rng, include_filter: bool) -> &[f64] {
        self.draw(rng, include_filter);
        let nf = self.n_fields;
        let volume = self.lattice.volume();
        for beta in 0..nf {
            let buf = &mut self.buffers[beta];
            for site in 0..volume {
                buf[site] = Complex64::new(self.psi_noise[site * nf + beta], self.white[site * nf + beta]);
            }
            self.fft.forward(buf);
            // V(k) = (Z(k) + Z(−k)*)/2, W(k) = (Z(k) − Z(−k)*)/2i; pairs in place
            for k in 0..volume {
                let nk = self.negated[k];
                if nk < k {
                    continue;
                }
                let (zk, zn) = (buf[k], buf[nk]);
                let vk = 0.5 * (zk + zn.conj());
                let wk = Complex64::new(0.0, -0.5) * (zk - zn.conj());
                buf[k] = vk + wk * self.filter[k];
                if nk != k {
                    buf[nk] = vk.conj() + wk.conj() * self.filter[nk];
                }
            }
        }
        self.solve_from_spectra()
    }
}

/// Draws the noise field `v` (lower field index; the solver raises it with the metric).
pub fn sample_noise(
    lattice: &LatticeSpec,
    model: &ValidatedModel,
    stream: &mut RngStream,
    options: NoiseOptions,
) -> Result<FieldSample> {
    let mut ws = Workspace::new(lattice, model)?;
    ws.draw(&mut stream.rng, options.include_p_filter);
    Ok(FieldSample {
        values: ws.assemble_noise(),
        n_fields: model.n_fields(),
        seed: stream.seed,
        stream: stream.stream,
    })
}

/// Solves `Dφ = η` spectrally on the lattice.
pub fn solve_spde(noise: &FieldSample, model: &ValidatedModel, lattice: &LatticeSpec) -> Result<FieldSample> {
    let mut ws = Workspace::new(lattice, model)?;
    if noise.values.len() != lattice.volume() * model.n_fields() {
        return Err(Error::Domain("noise sample does not fit the lattice".into()));
    }
    Ok(FieldSample {
        values: ws.solve(&noise.values).to_vec(),
        n_fields: noise.n_fields,
        seed: noise.seed,
        stream: noise.stream,
    })
}

/// Draws a field sample directly, consuming the stream exactly as
/// [`sample_noise`] followed by [`solve_spde`] would.
pub fn sample_field(
    lattice: &LatticeSpec,
    model: &ValidatedModel,
    stream: &mut RngStream,
    options: NoiseOptions,
) -> Result<FieldSample> {
    let mut ws = Workspace::new(lattice, model)?;
    Ok(FieldSample {
        values: ws.sample_field(&mut stream.rng, options.include_p_filter).to_vec(),
        n_fields: model.n_fields(),
        seed: stream.seed,
        stream: stream.stream,
    })
}

/// Applies the lattice operator `D` to a field, the inverse of [`solve_spde`].
pub fn apply_operator(field: &FieldSample, model: &ValidatedModel, lattice: &LatticeSpec) -> Result<FieldSample> {
    let ws = Workspace::new(lattice, model)?;
    let nf = model.n_fields();
    let volume = lattice.volume();
    let mut fft = FftNd::new(lattice.sites, lattice.d);
    let mut spectra: Vec<Vec<Complex64>> = (0..nf)
        .map(|alpha| {
            let mut buf: Vec<Complex64> = (0..volume).map(|s| Complex64::new(field.get(s, alpha), 0.0)).collect();
            fft.forward(&mut buf);
            buf
        })
        .collect();
    for k in 0..volume {
        let m = DMatrix::from_fn(nf, nf, |a, b| ws.response[(k * nf + a) * nf + b]);
        let inv = m
            .try_inverse()
            .ok_or_else(|| Error::Domain(format!("operator symbol is singular at mode {k}")))?;
        let phi: Vec<Complex64> = (0..nf).map(|a| spectra[a][k]).collect();
        for (b, spec) in spectra.iter_mut().enumerate() {
            spec[k] = (0..nf).map(|a| inv[(b, a)] * phi[a]).sum();
        }
    }
    let mut values = vec![0.0; volume * nf];
    for (beta, mut spec) in spectra.into_iter().enumerate() {
        fft.inverse(&mut spec);
        for s in 0..volume {
            values[s * nf + beta] = spec[s].re / volume as f64;
        }
    }
    Ok(FieldSample {
        values,
        n_fields: nf,
        seed: field.seed,
        stream: field.stream,
    })
}

// ---------------------------------------------------------------------------
// Moments

/// A tuple of lattice sites (integer coordinates) and field components.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub sites: Vec<Vec<i64>>,
    pub indices: Vec<usize>,
}

impl Probe {
    pub fn scalar(sites: Vec<Vec<i64>>) -> Self {
        let n = sites.len();
        Probe { sites, indices: vec![0; n] }
    }

    pub fn order(&self) -> usize {
        self.sites.len()
    }

    /// Physical coordinates `a · sites`.
    pub fn points(&self, spacing: f64) -> Vec<Vec<f64>> {
        self.sites
            .iter()
            .map(|s| s.iter().map(|&c| c as f64 * spacing).collect())
            .collect()
    }
}

/// A fixed set of scalar probe tuples of order `n` in `d ≥ 2` dimensions:
/// short separations along the first two axes, including coincident legs.
pub fn standard_probes(d: usize, n: usize) -> Result<Vec<Probe>> {
    if d < 2 {
        return Err(Error::Domain(format!("probe layouts need d >= 2, got {d}")));
    }
    let layouts: &[&[[i64; 2]]] = match n {
        1 => &[&[[0, 0]]],
        2 => &[
            &[[0, 0], [0, 0]],
            &[[0, 0], [1, 0]],
            &[[0, 0], [2, 0]],
            &[[0, 0], [1, 1]],
            &[[0, 0], [4, 0]],
            &[[0, 0], [2, 3]],
        ],
        3 => &[
            &[[0, 0], [0, 0], [0, 0]],
            &[[0, 0], [1, 0], [0, 1]],
            &[[0, 0], [0, 0], [1, 0]],
            &[[0, 0], [2, 0], [4, 0]],
            &[[0, 0], [1, 1], [2, 2]],
            &[[0, 0], [3, 0], [0, 3]],
        ],
        4 => &[
            &[[0, 0], [0, 0], [0, 0], [0, 0]],
            &[[0, 0], [1, 0], [0, 1], [1, 1]],
            &[[0, 0], [0, 0], [1, 0], [1, 0]],
            &[[0, 0], [1, 0], [2, 0], [3, 0]],
            &[[0, 0], [2, 0], [0, 2], [2, 2]],
        ],
        _ => return Err(Error::Domain(format!("standard probes exist for orders 1..=4, got {n}"))),
    };
    Ok(layouts
        .iter()
        .map(|sites| {
            Probe::scalar(
                sites
                    .iter()
                    .map(|s| {
                        let mut c = vec![0i64; d];
                        c[..2].copy_from_slice(s);
                        c
                    })
                    .collect(),
            )
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub order: usize,
    pub probe: Probe,
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MonteCarloConfig {
    pub samples: usize,
    pub seed: u64,
    /// Averages every probe over the translations of each sample that lie on
    /// the sub-lattice of this stride; `Some(1)` uses every translation and
    /// `None` only the probe as given.
    pub translation_stride: Option<usize>,
    pub include_p_filter: bool,
}

impl MonteCarloConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        MonteCarloConfig {
            samples,
            seed,
            translation_stride: Some(1),
            include_p_filter: true,
        }
    }
}

/// Per-probe site tables: for every translation, the flat site of each leg.
struct ProbeTable {
    n: usize,
    indices: Vec<usize>,
    /// `legs[j][t]`
    legs: Vec<Vec<u32>>,
}

fn probe_tables(lattice: &LatticeSpec, probes: &[Probe], stride: Option<usize>) -> Vec<ProbeTable> {
    let translations: Vec<Vec<i64>> = match stride {
        Some(stride) => (0..lattice.volume())
            .map(|t| lattice.coords(t))
            .filter(|c| c.iter().all(|&x| (x as usize).is_multiple_of(stride)))
            .collect(),
        None => vec![vec![0; lattice.d]],
    };
    probes
        .iter()
        .map(|p| ProbeTable {
            n: p.order(),
            indices: p.indices.clone(),
            legs: p
                .sites
                .iter()
                .map(|s| {
                    translations
                        .iter()
                        .map(|t| {
                            let c: Vec<i64> = s.iter().zip(t).map(|(a, b)| a + b).collect();
                            lattice.flat_index(&c) as u32
                        })
                        .collect()
                })
                .collect(),
        })
        .collect()
}

/// Raw subset-moment sums of one block.
struct BlockSums {
    sums: Vec<Vec<f64>>,
    count: f64,
}

fn accumulate(field: &[f64], nf: usize, tables: &[ProbeTable], sums: &mut [Vec<f64>]) {
    let mut prod = [0.0f64; 64];
    let mut vals = [0.0f64; 6];
    for (table, acc) in tables.iter().zip(sums.iter_mut()) {
        let n = table.n;
        let steps = table.legs[0].len();
        for t in 0..steps {
            for j in 0..n {
                vals[j] = field[table.legs[j][t] as usize * nf + table.indices[j]];
            }
            prod[0] = 1.0;
            for mask in 1..(1usize << n) {
                let low = mask.trailing_zeros() as usize;
                prod[mask] = prod[mask & (mask - 1)] * vals[low];
                acc[mask] += prod[mask];
            }
        }
    }
}

fn truncated_from_sums(sums: &[f64], count: f64) -> f64 {
    let mut means: Vec<f64> = sums.iter().map(|s| s / count).collect();
    means[0] = 1.0;
    let t = truncate_subsets(&means).expect("subset table has 2^n entries");
    t[t.len() - 1]
}

fn check_probes(lattice: &LatticeSpec, model: &ValidatedModel, orders: &[usize], probes: &[Probe]) -> Result<()> {
    for &o in orders {
        if !(1..=6).contains(&o) {
            return Err(Error::Domain(format!("moment orders must lie in 1..=6, got {o}")));
        }
    }
    for (i, p) in probes.iter().enumerate() {
        let n = p.order();
        if !orders.contains(&n) {
            return Err(Error::Domain(format!("probe {i} has order {n}, which was not requested")));
        }
        if p.indices.len() != n {
            return Err(Error::Domain(format!("probe {i}: one component index per site is required")));
        }
        if p.sites.iter().any(|s| s.len() != lattice.d) {
            return Err(Error::Domain(format!("probe {i}: site coordinates must have {} components", lattice.d)));
        }
        if p.indices.iter().any(|&a| a >= model.n_fields()) {
            return Err(Error::Domain(format!("probe {i}: component index out of range")));
        }
    }
    Ok(())
}

/// Monte Carlo estimates of truncated moments with delete-one-block
/// jackknife errors. Blocks are independent random streams and are reduced
/// in index order, so results do not depend on the thread count.
pub fn estimate_truncated_moments(
    model: &ValidatedModel,
    lattice: &LatticeSpec,
    orders: &[usize],
    probes: &[Probe],
    config: &MonteCarloConfig,
) -> Result<Vec<MomentEstimate>> {
    if config.samples < BLOCK_SIZE {
        return Err(Error::InsufficientSamples(format!(
            "at least {BLOCK_SIZE} samples are required, got {}",
            config.samples
        )));
    }
    check_probes(lattice, model, orders, probes)?;
    Workspace::new(lattice, model)?;
    if config.translation_stride == Some(0) {
        return Err(Error::Config("translation stride must be positive".into()));
    }
    let tables = probe_tables(lattice, probes, config.translation_stride);
    let blocks = (config.samples / BLOCK_SIZE).max(2);
    let nf = model.n_fields();
    let translations = tables.first().map_or(1, |t| t.legs[0].len()) as f64;

    let mut allocator = StreamAllocator::new(config.seed);
    let streams: Vec<RngStream> = (0..blocks as u64).map(|b| allocator.claim(b)).collect::<Result<_>>()?;

    let results: Vec<BlockSums> = streams
        .into_par_iter()
        .enumerate()
        .map_init(
            || Workspace::new(lattice, model).expect("workspace was validated"),
            |ws, (b, mut stream)| {
                let start = config.samples * b / blocks;
                let end = config.samples * (b + 1) / blocks;
                let mut sums: Vec<Vec<f64>> = tables.iter().map(|t| vec![0.0; 1 << t.n]).collect();
                for _ in start..end {
                    let field = ws.sample_field(&mut stream.rng, config.include_p_filter);
                    accumulate(field, nf, &tables, &mut sums);
                }
                BlockSums {
                    sums,
                    count: (end - start) as f64 * translations,
                }
            },
        )
        .collect();

    let mut estimates = Vec::with_capacity(probes.len());
    for (pi, probe) in probes.iter().enumerate() {
        let width = 1usize << probe.order();
        let mut total = vec![0.0; width];
        let mut count = 0.0;
        for r in &results {
            for (t, s) in total.iter_mut().zip(&r.sums[pi]) {
                *t += s;
            }
            count += r.count;
        }
        let mean = truncated_from_sums(&total, count);
        let leave_out: Vec<f64> = results
            .iter()
            .map(|r| {
                let rest: Vec<f64> = total.iter().zip(&r.sums[pi]).map(|(t, s)| t - s).collect();
                truncated_from_sums(&rest, count - r.count)
            })
            .collect();
        let bar = leave_out.iter().sum::<f64>() / blocks as f64;
        let var = leave_out.iter().map(|v| (v - bar).powi(2)).sum::<f64>() * (blocks as f64 - 1.0) / blocks as f64;
        estimates.push(MomentEstimate {
            order: probe.order(),
            probe: probe.clone(),
            mean,
            stderr: var.sqrt(),
            samples: config.samples,
        });
    }
    Ok(estimates)
}

/// Truncated kernels of order `n` at the probes, computed with the lattice
/// symbol used by the Monte Carlo.
pub fn lattice_analytic_kernel(
    model: &ValidatedModel,
    lattice: &LatticeSpec,
    n: usize,
    probes: &[Probe],
) -> Result<Vec<f64>> {
    check_probes(lattice, model, &[n], probes)?;
    let ws = Workspace::new(lattice, model)?;
    let nf = model.n_fields();
    let volume = lattice.volume();
    let box_volume = lattice.extent().powi(lattice.d as i32);
    let mut fft = FftNd::new(lattice.sites, lattice.d);
    let mode = |k: usize, a: usize, b: usize| ws.response[(k * nf + a) * nf + b];

    match n {
        1 => {
            // zero mode applied to the mean noise density
            let c1 = cumulant_tensor(1, model.levy())?;
            Ok(probes
                .iter()
                .map(|p| (0..nf).map(|b| (mode(0, p.indices[0], b) * c1.entries[b]).re).sum())
                .collect())
        }
        2 => {
            let sb = model.sigma_bar2();
            let mut kernels = vec![vec![Vec::new(); nf]; nf];
            for (a1, row) in kernels.iter_mut().enumerate() {
                for (a2, slot) in row.iter_mut().enumerate() {
                    let mut buf: Vec<Complex64> = (0..volume)
                        .map(|k| {
                            let nk = ws.negated[k];
                            let mut acc = Complex64::default();
                            for b1 in 0..nf {
                                for b2 in 0..nf {
                                    acc += mode(k, a1, b1) * sb[(b1, b2)] * mode(nk, a2, b2);
                                }
                            }
                            acc * ws.p_values[k]
                        })
                        .collect();
                    fft.inverse(&mut buf);
                    *slot = buf.iter().map(|c| c.re / box_volume).collect::<Vec<f64>>();
                }
            }
            Ok(probes
                .iter()
                .map(|p| {
                    let sep: Vec<i64> = p.sites[0].iter().zip(&p.sites[1]).map(|(a, b)| a - b).collect();
                    kernels[p.indices[0]][p.indices[1]][lattice.flat_index(&sep)]
                })
                .collect())
        }
        _ => {
            let c = cumulant_tensor(n, model.levy())?;
            if c.is_zero() {
                return Ok(vec![0.0; probes.len()]);
            }
            // K_{αβ}(x) = (1/V) Σ_k e^{ikx} M(k)_{αβ}
            let mut kernels = vec![vec![Vec::new(); nf]; nf];
            for (a, row) in kernels.iter_mut().enumerate() {
                for (b, slot) in row.iter_mut().enumerate() {
                    let mut buf: Vec<Complex64> = (0..volume).map(|k| mode(k, a, b)).collect();
                    fft.inverse(&mut buf);
                    *slot = buf.iter().map(|c| c.re / box_volume).collect::<Vec<f64>>();
                }
            }
            let cell = lattice.spacing.powi(lattice.d as i32);
            let translations: Vec<Vec<i64>> = (0..volume).map(|t| lattice.coords(t)).collect();
            Ok(probes
                .iter()
                .map(|p| {
                    let mut total = 0.0;
                    for (flat, &cv) in c.entries.iter().enumerate() {
                        if cv == 0.0 {
                            continue;
                        }
                        let beta = unflatten(flat, nf, n);
                        let mut sum = 0.0;
                        for y in &translations {
                            let mut prod = 1.0;
                            for j in 0..n {
                                let sep: Vec<i64> = p.sites[j].iter().zip(y).map(|(s, y)| s - y).collect();
                                prod *= kernels[p.indices[j]][beta[j]][lattice.flat_index(&sep)];
                            }
                            sum += prod;
                        }
                        total += cv * sum;
                    }
                    total * cell
                })
                .collect())
        }
    }
}
