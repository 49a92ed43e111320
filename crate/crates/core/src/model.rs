//! Model data types, JSON configuration and validation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationIssue};
use crate::polynomial::CovariantPolynomial;

/// One spectrum entry: a mass `m > 0` with dipole degree `nu ≥ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassEntry {
    pub m: f64,
    #[serde(default = "one")]
    pub nu: u32,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq)]
pub struct MassSpectrum {
    pub entries: Vec<MassEntry>,
}

impl MassSpectrum {
    pub fn new(entries: Vec<MassEntry>) -> Self {
        MassSpectrum { entries }
    }

    /// Spectrum of simple poles (all `nu = 1`).
    pub fn simple(masses: &[f64]) -> Self {
        MassSpectrum {
            entries: masses.iter().map(|&m| MassEntry { m, nu: 1 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn no_dipole(&self) -> bool {
        self.entries.iter().all(|e| e.nu == 1)
    }

    pub fn masses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.m).collect()
    }

    pub fn min_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.m).fold(f64::INFINITY, f64::min)
    }

    /// `Π_l m_l^{2ν_l}`, the value of the denominator at `k = 0`.
    pub fn mass_normalization(&self) -> f64 {
        self.entries.iter().map(|e| e.m.powi(2 * e.nu as i32)).product()
    }

    /// `Π_l (t + m_l²)^{ν_l}`.
    pub fn denominator(&self, t: f64) -> f64 {
        self.entries
            .iter()
            .map(|e| (t + e.m * e.m).powi(e.nu as i32))
            .product()
    }

    /// Index of the entry whose mass equals `m` within `tol`.
    pub fn index_of(&self, m: f64, tol: f64) -> Option<usize> {
        self.entries.iter().position(|e| (e.m - m).abs() <= tol)
    }
}

/// A weighted atom of the jump measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub w: f64,
    pub s: Vec<f64>,
}

/// Drift, Gaussian covariance and compound-Poisson part of the noise.
#[derive(Clone, Debug, PartialEq)]
pub struct LevySpec {
    pub a: Vec<f64>,
    pub sigma2: DMatrix<f64>,
    pub z: f64,
    pub atoms: Vec<Atom>,
}

impl LevySpec {
    pub fn n_fields(&self) -> usize {
        self.a.len()
    }

    pub fn gaussian(sigma2: DMatrix<f64>) -> Self {
        let n = sigma2.nrows();
        LevySpec {
            a: vec![0.0; n],
            sigma2,
            z: 0.0,
            atoms: Vec::new(),
        }
    }

    pub fn compound_poisson(z: f64, atoms: Vec<Atom>) -> Self {
        let n = atoms.first().map_or(1, |a| a.s.len());
        LevySpec {
            a: vec![0.0; n],
            sigma2: DMatrix::zeros(n, n),
            z,
            atoms,
        }
    }

    /// Scalar compound Poisson noise with a single atom of weight 1 at `s`.
    pub fn scalar_poisson(z: f64, s: f64) -> Self {
        Self::compound_poisson(z, vec![Atom { w: 1.0, s: vec![s] }])
    }

    /// `σ̄²_{αβ} = σ²_{αβ} + z Σ_i w_i s_{i,α} s_{i,β}`.
    pub fn sigma_bar2(&self) -> DMatrix<f64> {
        let n = self.n_fields();
        let mut out = self.sigma2.clone();
        for atom in &self.atoms {
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] += self.z * atom.w * atom.s[i] * atom.s[j];
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub d: usize,
    pub n_fields: usize,
    pub spectrum: MassSpectrum,
    pub levy: LevySpec,
    /// `Q_E(k)`: one argument, field slots `(β, α)`.
    pub q_e: CovariantPolynomial,
    /// Invariant product on the field components.
    pub metric: DMatrix<f64>,
}

impl ModelSpec {
    /// Scalar model with `Q_E ≡ 1` and the Euclidean metric.
    pub fn scalar(d: usize, spectrum: MassSpectrum, levy: LevySpec) -> Self {
        ModelSpec {
            d,
            n_fields: 1,
            spectrum,
            levy,
            q_e: CovariantPolynomial::identity(d, 1),
            metric: DMatrix::identity(1, 1),
        }
    }
}

// ---------------------------------------------------------------------------
// JSON schema

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfig {
    d: usize,
    #[serde(rename = "N")]
    n: usize,
    masses: Vec<MassEntry>,
    levy: LevyConfig,
    #[serde(rename = "qE", default, skip_serializing_if = "Option::is_none")]
    q_e: Option<Vec<QeTerm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metric: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma2: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    z: f64,
    #[serde(default)]
    atoms: Vec<Atom>,
}

/// One entry of the `Q_E` coefficient table.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QeTerm {
    row: usize,
    col: usize,
    powers: Vec<u32>,
    re: f64,
    #[serde(default)]
    im: f64,
}

fn matrix_from_rows(key: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Parse(format!("`{key}` must be a {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Parses a JSON model document, applies defaults and validates it.
pub fn parse_model_config(text: &str) -> Result<ModelSpec> {
    let cfg: ModelConfig = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let n = cfg.n;
    let a = match cfg.levy.a {
        Some(a) if a.len() != n => {
            return Err(Error::Parse(format!("`levy.a` must have length {n}")));
        }
        Some(a) => a,
        None => vec![0.0; n],
    };
    let sigma2 = match &cfg.levy.sigma2 {
        Some(rows) => matrix_from_rows("levy.sigma2", rows, n)?,
        None => DMatrix::zeros(n, n),
    };
    let metric = match &cfg.metric {
        Some(rows) => matrix_from_rows("metric", rows, n)?,
        None => DMatrix::identity(n, n),
    };
    let q_e = match &cfg.q_e {
        None => CovariantPolynomial::identity(cfg.d, n),
        Some(terms) => {
            let mut p = CovariantPolynomial::zero(1, cfg.d, 2);
            for (i, t) in terms.iter().enumerate() {
                if t.powers.len() != cfg.d {
                    return Err(Error::Parse(format!("`qE[{i}].powers` must have length {}", cfg.d)));
                }
                if t.row >= n || t.col >= n {
                    return Err(Error::Parse(format!("`qE[{i}]` field index out of range")));
                }
                p.add_term(vec![t.row, t.col], t.powers.clone(), num_complex::Complex64::new(t.re, t.im));
            }
            p
        }
    };
    let spec = ModelSpec {
        d: cfg.d,
        n_fields: n,
        spectrum: MassSpectrum::new(cfg.masses),
        levy: LevySpec {
            a,
            sigma2,
            z: cfg.levy.z,
            atoms: cfg.levy.atoms,
        },
        q_e,
        metric,
    };
    let issues = check_invariants(&spec);
    if issues.is_empty() {
        Ok(spec)
    } else {
        Err(Error::Validation(issues))
    }
}

/// Serializes a model to the JSON schema accepted by [`parse_model_config`].
pub fn emit_model_config(spec: &ModelSpec) -> String {
    let q_e = spec
        .q_e
        .terms()
        .map(|(m, c)| QeTerm {
            row: m.fields[0],
            col: m.fields[1],
            powers: m.powers.clone(),
            re: c.re,
            im: c.im,
        })
        .collect();
    let cfg = ModelConfig {
        d: spec.d,
        n: spec.n_fields,
        masses: spec.spectrum.entries.clone(),
        levy: LevyConfig {
            a: Some(spec.levy.a.clone()),
            sigma2: Some(matrix_to_rows(&spec.levy.sigma2)),
            z: spec.levy.z,
            atoms: spec.levy.atoms.clone(),
        },
        q_e: Some(q_e),
        metric: Some(matrix_to_rows(&spec.metric)),
    };
    serde_json::to_string_pretty(&cfg).expect("model config serializes")
}

// ---------------------------------------------------------------------------
// Validation

/// A model whose invariants have all been checked.
#[derive(Clone, Debug)]
pub struct ValidatedModel {
    spec: ModelSpec,
    metric_inverse: DMatrix<f64>,
    sigma_bar2: DMatrix<f64>,
}

impl ValidatedModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn n_fields(&self) -> usize {
        self.spec.n_fields
    }

    pub fn spectrum(&self) -> &MassSpectrum {
        &self.spec.spectrum
    }

    pub fn levy(&self) -> &LevySpec {
        &self.spec.levy
    }

    pub fn q_e(&self) -> &CovariantPolynomial {
        &self.spec.q_e
    }

    pub fn metric_inverse(&self) -> &DMatrix<f64> {
        &self.metric_inverse
    }

    pub fn sigma_bar2(&self) -> &DMatrix<f64> {
        &self.sigma_bar2
    }

    pub fn require_no_dipole(&self) -> Result<()> {
        if self.spec.spectrum.no_dipole() {
            Ok(())
        } else {
            Err(Error::UnsupportedSpectrum(
                "relativistic operations require all dipole degrees nu = 1".into(),
            ))
        }
    }

    /// Returns a copy with a different Lévy specification, re-validated.
    pub fn with_levy(&self, levy: LevySpec) -> Result<ValidatedModel> {
        let mut spec = self.spec.clone();
        spec.levy = levy;
        validate_model(spec)
    }
}

/// Checks every model invariant and returns either a validated model or
/// the full list of violations.
pub fn validate_model(spec: ModelSpec) -> Result<ValidatedModel> {
    let issues = check_invariants(&spec);
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    let metric_inverse = spec
        .metric
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Validation(vec![ValidationIssue::new("metric", "metric must be nonsingular")]))?;
    let sigma_bar2 = spec.levy.sigma_bar2();
    Ok(ValidatedModel {
        spec,
        metric_inverse,
        sigma_bar2,
    })
}

fn check_invariants(spec: &ModelSpec) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    let n = spec.n_fields;
    if spec.d < 2 {
        issues.push(ValidationIssue::new("d", "spacetime dimension must be at least 2"));
    }
    if n < 1 {
        issues.push(ValidationIssue::new("N", "at least one field component is required"));
    }
    if spec.spectrum.is_empty() {
        issues.push(ValidationIssue::new("masses", "mass spectrum must not be empty"));
    }
    for (i, e) in spec.spectrum.entries.iter().enumerate() {
        if !(e.m.is_finite() && e.m > 0.0) {
            issues.push(ValidationIssue::new(format!("masses[{i}].m"), "mass must be positive"));
        }
        if e.nu < 1 {
            issues.push(ValidationIssue::new(format!("masses[{i}].nu"), "dipole degree must be at least 1"));
        }
        for (j, f) in spec.spectrum.entries.iter().enumerate().skip(i + 1) {
            if e.m == f.m {
                issues.push(ValidationIssue::new(
                    format!("masses[{j}].m"),
                    format!("mass duplicates masses[{i}]; masses must be pairwise distinct"),
                ));
            }
        }
    }

    let levy = &spec.levy;
    if levy.a.len() != n {
        issues.push(ValidationIssue::new("levy.a", format!("drift must have length {n}")));
    }
    if levy.a.iter().any(|x| !x.is_finite()) {
        issues.push(ValidationIssue::new("levy.a", "drift must be finite"));
    }
    if levy.sigma2.nrows() != n || levy.sigma2.ncols() != n {
        issues.push(ValidationIssue::new("levy.sigma2", format!("must be {n}x{n}")));
    } else {
        let s = &levy.sigma2;
        if s.iter().any(|x| !x.is_finite()) {
            issues.push(ValidationIssue::new("levy.sigma2", "entries must be finite"));
        } else if (s - s.transpose()).amax() > 1e-12 {
            issues.push(ValidationIssue::new("levy.sigma2", "matrix must be symmetric"));
        } else {
            let min_eig = s.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-12 {
                issues.push(ValidationIssue::new(
                    "levy.sigma2",
                    format!("matrix must be positive semidefinite (eigenvalue {min_eig:e})"),
                ));
            }
        }
    }
    if !(levy.z.is_finite() && levy.z >= 0.0) {
        issues.push(ValidationIssue::new("levy.z", "jump intensity must be nonnegative"));
    }
    if levy.z > 0.0 && levy.atoms.is_empty() {
        issues.push(ValidationIssue::new("levy.atoms", "positive intensity requires a jump measure"));
    }
    for (i, atom) in levy.atoms.iter().enumerate() {
        if !(atom.w.is_finite() && atom.w > 0.0) {
            issues.push(ValidationIssue::new(format!("levy.atoms[{i}].w"), "atom weight must be positive"));
        }
        if atom.s.len() != n {
            issues.push(ValidationIssue::new(
                format!("levy.atoms[{i}].s"),
                format!("atom location must have length {n}"),
            ));
        } else if atom.s.iter().all(|&x| x == 0.0) {
            issues.push(ValidationIssue::new(
                format!("levy.atoms[{i}].s"),
                "atom location must not be the zero vector",
            ));
        } else if atom.s.iter().any(|x| !x.is_finite()) {
            issues.push(ValidationIssue::new(format!("levy.atoms[{i}].s"), "atom location must be finite"));
        }
    }
    if !levy.atoms.is_empty() {
        let total: f64 = levy.atoms.iter().map(|a| a.w).sum();
        if (total - 1.0).abs() > 1e-12 {
            issues.push(ValidationIssue::new(
                "levy.atoms",
                format!("jump measure not normalized (total weight {total})"),
            ));
        }
    }

    if spec.q_e.n_args() != 1 || spec.q_e.field_rank() != 2 || spec.q_e.dim() != spec.d {
        issues.push(ValidationIssue::new("qE", "must be a one-argument matrix polynomial in d components"));
    } else if spec.q_e.terms().any(|(m, _)| m.fields.iter().any(|&f| f >= n)) {
        issues.push(ValidationIssue::new("qE", "field index out of range"));
    } else if spec.q_e.terms().any(|(_, c)| !(c.re.is_finite() && c.im.is_finite())) {
        issues.push(ValidationIssue::new("qE", "coefficients must be finite"));
    }

    if spec.metric.nrows() != n || spec.metric.ncols() != n {
        issues.push(ValidationIssue::new("metric", format!("must be {n}x{n}")));
    } else if (&spec.metric - spec.metric.transpose()).amax() > 1e-12 {
        issues.push(ValidationIssue::new("metric", "matrix must be symmetric"));
    } else if spec.metric.clone().try_inverse().is_none() {
        issues.push(ValidationIssue::new("metric", "metric must be nonsingular"));
    }
    issues
}
