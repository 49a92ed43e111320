//! Acceptance suite: one pass/fail line per criterion on stderr.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use imqft_core::lattice::{
    estimate_truncated_moments, lattice_analytic_kernel, standard_probes, LatticeSpec, MonteCarloConfig, Probe,
};
use imqft_core::levy::cumulant_tensor;
use imqft_core::model::{validate_model, Atom, LevySpec, MassSpectrum, ModelSpec, ValidatedModel};
use imqft_core::oracles::cumulant_by_finite_differences;
use imqft_core::propagator::partial_fractions;
use imqft_core::scattering::{amplitude, decay_scan, ParticleState};
use imqft_core::truncation::{partitions, truncate_tensor, untruncate_tensor, Tensor};
use imqft_core::wightman::{
    build_wightman_terms, fourier_laplace_check, spectral_scan, ShellQuadrature, TestFunctionFamily, WightmanTensors,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: usize, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {criterion:>2}: {verdict} {detail}");
}

fn scalar_model(d: usize, masses: &[f64], levy: LevySpec) -> ValidatedModel {
    validate_model(ModelSpec::scalar(d, MassSpectrum::simple(masses), levy)).unwrap()
}

fn headline() -> ValidatedModel {
    scalar_model(2, &[1.0], LevySpec::scalar_poisson(1.0, 1.0))
}

fn within(elapsed: Duration, seconds: u64) -> bool {
    elapsed < Duration::from_secs(seconds)
}

fn random_levy(rng: &mut ChaCha8Rng) -> LevySpec {
    let nf = rng.random_range(1..=3);
    let l = DMatrix::from_fn(nf, nf, |_, _| rng.random_range(-1.0..1.0));
    let atoms = (0..rng.random_range(1..=3))
        .map(|_| Atom {
            w: rng.random_range(0.1..1.0),
            s: (0..nf).map(|_| rng.random_range(-1.5..1.5)).collect(),
        })
        .collect();
    LevySpec {
        a: (0..nf).map(|_| rng.random_range(-1.0..1.0)).collect(),
        sigma2: &l * l.transpose(),
        z: rng.random_range(0.1..2.0),
        atoms,
    }
}

#[test]
fn criterion_01_cumulant_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let levy = random_levy(&mut rng);
        for n in 1..=5 {
            let closed = cumulant_tensor(n, &levy).unwrap();
            let fd = cumulant_by_finite_differences(n, &levy);
            let scale = closed.max_abs().max(f64::MIN_POSITIVE);
            let gap = closed
                .entries
                .iter()
                .zip(&fd.entries)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(gap / scale);
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-6 && within(elapsed, 10);
    report(1, pass, &format!("cumulant oracle: worst relative error {worst:.2e} over 20 specs, orders 1-5, {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_02_partial_fractions() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = rng.random_range(1..=5);
        let mut masses: Vec<f64> = Vec::with_capacity(p);
        while masses.len() < p {
            let m: f64 = rng.random_range(0.2..4.0);
            if masses.iter().all(|x| (x - m).abs() > 0.05) {
                masses.push(m);
            }
        }
        let pf = partial_fractions(&MassSpectrum::simple(&masses)).unwrap();
        for i in 0..1000 {
            // log-spaced in t = |k|² from 1e-4 to 1e4, plus t = 0
            let t = if i == 0 { 0.0 } else { 10f64.powf(-4.0 + 8.0 * (i - 1) as f64 / 998.0) };
            worst = worst.max(pf.identity_error(t));
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-12 && within(elapsed, 1);
    report(2, pass, &format!("partial fractions: worst identity error {worst:.2e} on 20 spectra x 1000 points, {elapsed:.2?}"));
    assert!(pass);
}

fn random_family(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> BTreeMap<usize, Tensor> {
    (1..=n)
        .map(|k| {
            let data = (0..dim.pow(k as u32)).map(|_| rng.random_range(-1.0..1.0)).collect();
            (k, Tensor { order: k, dim, data })
        })
        .collect()
}

fn lift(family: &BTreeMap<usize, Tensor>, n: usize, f: fn(&BTreeMap<usize, Tensor>, usize) -> imqft_core::Result<Tensor>) -> BTreeMap<usize, Tensor> {
    (1..=n).map(|k| (k, f(family, k).unwrap())).collect()
}

#[test]
fn criterion_03_truncation_lattice() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for n in 1..=6 {
        for dim in [1, 2] {
            for _ in 0..5 {
                let fam = random_family(&mut rng, n, dim);
                let there = lift(&lift(&fam, n, untruncate_tensor), n, truncate_tensor);
                let back = lift(&lift(&fam, n, truncate_tensor), n, untruncate_tensor);
                for k in 1..=n {
                    worst = worst.max(there[&k].max_abs_difference(&fam[&k]));
                    worst = worst.max(back[&k].max_abs_difference(&fam[&k]));
                }
            }
        }
    }
    let bell = [1usize, 2, 5, 15, 52, 203, 877, 4140];
    let counts: Vec<usize> = (1..=8).map(|n| partitions(n).unwrap().partitions.len()).collect();
    let elapsed = start.elapsed();
    let pass = worst < 1e-12 && counts == bell && within(elapsed, 5);
    report(3, pass, &format!("truncation lattice: round-trip error {worst:.2e} up to n = 6, partition counts {counts:?}, {elapsed:.2?}"));
    assert!(pass);
}

/// Pooled `(within 3 SE, total, worst |z|)` over ten seeded repetitions.
fn lattice_oracle(model: &ValidatedModel, orders: &[usize]) -> (usize, usize, f64) {
    let lattice = LatticeSpec::new(2, 64, 0.25).unwrap();
    let probes: Vec<Probe> = orders.iter().flat_map(|&n| standard_probes(2, n).unwrap()).collect();
    let mut analytic = Vec::new();
    for &n in orders {
        let sub: Vec<Probe> = probes.iter().filter(|p| p.order() == n).cloned().collect();
        analytic.extend(lattice_analytic_kernel(model, &lattice, n, &sub).unwrap());
    }
    let (mut inside, mut total, mut worst) = (0, 0, 0.0f64);
    for rep in 0..10u64 {
        let mut config = MonteCarloConfig::new(100_000, 1000 + rep);
        config.translation_stride = Some(4);
        let estimates = estimate_truncated_moments(model, &lattice, orders, &probes, &config).unwrap();
        for (e, exact) in estimates.iter().zip(&analytic) {
            let dev = (e.mean - exact).abs();
            let z = if e.stderr > 0.0 { dev / e.stderr } else if dev == 0.0 { 0.0 } else { f64::INFINITY };
            worst = worst.max(z);
            inside += usize::from(z <= 3.0);
            total += 1;
        }
    }
    (inside, total, worst)
}

#[test]
fn criterion_04_two_sided_lattice_oracle() {
    let start = Instant::now();
    let model = headline();
    let per_order: Vec<usize> = (2..=4).map(|n| standard_probes(2, n).unwrap().len()).collect();
    let (inside, total, worst) = lattice_oracle(&model, &[2, 3, 4]);
    let elapsed = start.elapsed();
    let fraction = inside as f64 / total as f64;
    let pass = fraction >= 0.95 && per_order.iter().all(|&c| c >= 5) && within(elapsed, 15 * 60);
    report(
        4,
        pass,
        &format!(
            "two-sided lattice oracle: {inside}/{total} ({:.1}%) within 3 SE, probes per order {per_order:?}, worst |z| {worst:.2}, {elapsed:.2?}",
            100.0 * fraction
        ),
    );
    assert!(pass);
}

fn amplitudes_vanish(model: &ValidatedModel) -> bool {
    let p = 0.6f64;
    let e = (p * p + 1.0).sqrt();
    // 2 → 2 elastic, 1 → 3 and 2 → 3 configurations, all conserved
    let q = (e * e - 1.0).sqrt();
    let cases: Vec<(Vec<ParticleState>, Vec<ParticleState>)> = vec![
        (
            vec![ParticleState::incoming(0, 0, vec![p]), ParticleState::incoming(0, 0, vec![-p])],
            vec![ParticleState::outgoing(0, 0, vec![q]), ParticleState::outgoing(0, 0, vec![-q])],
        ),
        (
            vec![ParticleState::incoming(0, 0, vec![0.0])],
            vec![ParticleState::outgoing(0, 0, vec![0.0]), ParticleState::outgoing(0, 0, vec![0.0])],
        ),
        (
            vec![ParticleState::incoming(0, 0, vec![p]), ParticleState::incoming(0, 0, vec![-p])],
            vec![ParticleState::outgoing(0, 0, vec![0.0]), ParticleState::outgoing(0, 0, vec![0.0]), ParticleState::outgoing(0, 0, vec![0.0])],
        ),
    ];
    cases.iter().all(|(ins, outs)| amplitude(ins, outs, model).unwrap().value.norm() == 0.0)
        && (3..=6).all(|n| build_wightman_terms(n, &vec![0; n], model).unwrap().is_trivial())
}

#[test]
fn criterion_05_gaussian_triviality() {
    let start = Instant::now();
    // literal z = 0 (no noise at all) and the nondegenerate σ² = 1 variant
    let silent = headline().with_levy(LevySpec::compound_poisson(0.0, vec![Atom { w: 1.0, s: vec![1.0] }]));
    let gaussian = scalar_model(2, &[1.0], LevySpec::gaussian(DMatrix::from_element(1, 1, 1.0)));
    let mut detail = Vec::new();
    let mut pass = true;
    for (name, model) in [("z = 0", silent), ("sigma2 = 1", Ok(gaussian))] {
        let model = match model {
            Ok(m) => m,
            Err(e) => {
                detail.push(format!("{name}: rejected ({e})"));
                continue;
            }
        };
        let (inside, total, worst) = lattice_oracle(&model, &[3, 4]);
        let zero = amplitudes_vanish(&model);
        pass &= inside == total && zero;
        detail.push(format!("{name}: {inside}/{total} within 3 SE of 0, worst |z| {worst:.2}, amplitudes exactly 0: {zero}"));
    }
    let elapsed = start.elapsed();
    report(5, pass, &format!("Gaussian triviality: {}, {elapsed:.2?}", detail.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_06_fourier_laplace() {
    let start = Instant::now();
    let model = headline();
    let mut worst = 0.0f64;
    let mut count = 0;
    for tau in [0.5, 1.0, 1.5, 2.0, 3.0] {
        for x in [0.0, 0.7] {
            let c = fourier_laplace_check(&model, &[tau, x]).unwrap();
            worst = worst.max(c.gap);
            count += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = count == 10 && worst < 1e-3 && within(elapsed, 30);
    report(6, pass, &format!("Fourier-Laplace: worst relative gap {worst:.2e} at {count} separations, {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_07_spectral_condition() {
    let start = Instant::now();
    let models = [
        headline(),
        scalar_model(3, &[1.0, 2.5], LevySpec::scalar_poisson(1.0, 1.0)),
        scalar_model(4, &[0.5, 1.0, 3.0], LevySpec::scalar_poisson(0.5, 2.0)),
    ];
    let (mut configurations, mut shells, mut violations) = (0, 0, 0);
    let mut seed = 0;
    for model in &models {
        let p = model.spectrum().len();
        for n in 2..=5 {
            for a in 0..p {
                let assignment: Vec<usize> = (0..n).map(|i| (a + i) % p).collect();
                let terms = build_wightman_terms(n, &assignment, model).unwrap();
                seed += 1;
                let scan = spectral_scan(&terms, 1000, seed, 10.0).unwrap();
                configurations += scan.configurations;
                shells += scan.shells;
                violations += scan.violations;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = violations == 0 && shells > 0;
    report(7, pass, &format!("spectral condition: {violations} violations in {shells} shell momenta over {configurations} configurations, {elapsed:.2?}"));
    assert!(pass);
}

#[test]
fn criterion_08_decay_kinematics() {
    let start = Instant::now();
    let model = scalar_model(2, &[1.0, 3.0], LevySpec::scalar_poisson(1.0, 1.0));
    let mut mismatches = 0;
    let mut boundary = 0;
    let mut worst_momentum = 0.0f64;
    for i in 1..=10 {
        for j in 1..=10 {
            // m = 2μ exactly on the diagonal
            let (m, mu) = (0.5 * i as f64, 0.25 * j as f64);
            let r = decay_scan(m, mu, &model).unwrap();
            let open = m * m >= 4.0 * mu * mu;
            mismatches += usize::from(r.feasible != open);
            if open {
                let exact = (m * m / 4.0 - mu * mu).sqrt();
                worst_momentum = worst_momentum.max((r.momentum.unwrap() - exact).abs());
            }
            if i == j {
                boundary += usize::from(r.feasible && r.momentum.unwrap().abs() < 1e-12);
            }
        }
    }
    let heavy = decay_scan(3.0, 1.0, &model).unwrap();
    let silent = model.with_levy(LevySpec::gaussian(DMatrix::from_element(1, 1, 1.0))).unwrap();
    let quiet = decay_scan(3.0, 1.0, &silent).unwrap();
    let value = |r: &imqft_core::scattering::DecayReport| r.amplitude.as_ref().map_or(f64::NAN, |a| a.value.norm());
    let elapsed = start.elapsed();
    let pass = mismatches == 0
        && boundary == 10
        && worst_momentum < 1e-12
        && heavy.nonzero
        && value(&heavy) > 0.0
        && !quiet.nonzero
        && value(&quiet) == 0.0;
    report(
        8,
        pass,
        &format!(
            "decay kinematics: {mismatches} feasibility mismatches on 100 points, {boundary}/10 thresholds exact, momentum error {worst_momentum:.1e}, |A(z=1)| = {:.4e}, |A(z=0)| = {:e}, {elapsed:.2?}",
            value(&heavy),
            value(&quiet)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_hssc_witness() {
    let start = Instant::now();
    let model = headline();
    let family = TestFunctionFamily::hermite(2, 1, 1.0);
    let tensors = WightmanTensors::new(&model, &family, 4, ShellQuadrature::default()).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for (n, m) in [(1, 1), (1, 2), (2, 1), (1, 3), (2, 2), (3, 1)] {
        let maxima: Vec<f64> = (1..=3u64)
            .map(|seed| {
                let s = tensors.witness(n, m, 100, seed, 10).unwrap();
                pass &= s.failures == 0 && s.ratios.len() == 100 && s.ratios.iter().all(|r| r.is_finite());
                s.max
            })
            .collect();
        let hi = maxima.iter().copied().fold(f64::MIN, f64::max);
        let lo = maxima.iter().copied().fold(f64::MAX, f64::min);
        let variation = (hi - lo) / lo;
        pass &= lo > 0.0 && variation < 0.2;
        detail.push(format!("({n},{m}) max {hi:.3e} var {:.1}%", 100.0 * variation));
    }
    let elapsed = start.elapsed();
    report(9, pass, &format!("HSSC witness: {}, {elapsed:.2?}", detail.join(", ")));
    assert!(pass);
}

fn models_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

/// Runs one command into a fresh directory and returns its files by name.
fn run_cli(args: &[String], threads: usize) -> BTreeMap<String, Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_imqft"))
        .args(args)
        .arg("--out")
        .arg(dir.path())
        .arg("--threads")
        .arg(threads.to_string())
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .unwrap();
    assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
    std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let dir = models_dir();
    let model = |name: &str| dir.join(name).display().to_string();
    let commands: Vec<Vec<String>> = [
        vec!["validate".into(), model("headline.json")],
        vec!["cumulants".into(), model("decay.json")],
        vec!["schwinger".into(), model("headline.json"), "--points".into(), "0,0;1,0;0,1".into()],
        vec!["simulate".into(), model("headline.json"), "--lattice".into(), "16".into(), "--samples".into(), "2000".into()],
        vec!["wightman".into(), model("headline.json"), "--order".into(), "3".into()],
        vec!["scatter".into(), model("decay.json"), model("process.json")],
        vec!["decay".into(), model("decay.json"), "--m".into(), "3".into(), "--mu".into(), "1".into()],
        vec!["hssc".into(), model("headline.json"), "--n".into(), "1".into(), "--m".into(), "2".into()],
        vec!["cluster".into(), model("headline.json")],
    ]
    .into_iter()
    .map(|mut c: Vec<String>| {
        c.extend(["--seed".to_string(), "7".to_string()]);
        c
    })
    .collect();
    let mut differing = Vec::new();
    let mut files = 0;
    for args in &commands {
        let first = run_cli(args, 1);
        let again = run_cli(args, 1);
        let threaded = run_cli(args, 4);
        files += first.len();
        if first != again || first != threaded || first.is_empty() {
            differing.push(args[0].clone());
        }
    }
    let elapsed = start.elapsed();
    let pass = differing.is_empty();
    report(
        10,
        pass,
        &format!("determinism: {} commands, {files} files byte-identical across runs and 1/4 threads, differing {differing:?}, {elapsed:.2?}", commands.len()),
    );
    assert!(pass);
}
