//! One function per subcommand. Each returns the artifacts it emits.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use imqft_core::error::Error;
use imqft_core::lattice::{
    estimate_truncated_moments, lattice_analytic_kernel, standard_probes, LatticeSpec, MonteCarloConfig, Probe,
};
use imqft_core::levy::cumulant_tensor;
use imqft_core::model::{emit_model_config, parse_model_config, validate_model, ValidatedModel};
use imqft_core::scattering::{amplitude_with, decay_scan, ParticleState, PolynomialModel};
use imqft_core::schwinger::{schwinger2_truncated, schwinger_n_evaluate, VertexLattice};
use imqft_core::wightman::{
    build_wightman_terms, clustering_check, fourier_laplace_check, spectral_scan, HermiteFunction, ShellQuadrature,
    SmearedSlot, Smearing, TestFunctionFamily, WightmanTensors,
};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::output::{emit, Artifact, Cell, RunRecord, Table};
use crate::{CliError, Command, Global};

const DEFAULT_SEED: u64 = 0;
const DEFAULT_LATTICE: usize = 64;
const DEFAULT_SPACING: f64 = 0.25;

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ValidatedModel, CliError> {
    Ok(validate_model(parse_model_config(&read(path)?)?)?)
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Usage(format!("--{flag}: cannot parse `{s}`"))))
        .collect()
}

fn join<T: ToString>(items: &[T], sep: &str) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(sep)
}

/// Flags that were set, in a stable order.
fn overrides(global: &Global) -> BTreeMap<String, Value> {
    let mut p = BTreeMap::new();
    if let Some(v) = global.lattice {
        p.insert("lattice".into(), json!(v));
    }
    if let Some(v) = global.spacing {
        p.insert("spacing".into(), json!(v));
    }
    if let Some(v) = global.samples {
        p.insert("samples".into(), json!(v));
    }
    if let Some(v) = global.tolerance {
        p.insert("tolerance".into(), json!(v));
    }
    p
}

pub fn dispatch(command: &Command, global: &Global) -> Result<(), CliError> {
    let mut parameters = overrides(global);
    let (name, model_path, seed, artifacts) = match command {
        Command::Validate { model } => ("validate", model, None, validate(model)?),
        Command::Cumulants { model, max_order } => {
            parameters.insert("max_order".into(), json!(max_order));
            ("cumulants", model, None, cumulants(model, *max_order)?)
        }
        Command::Schwinger { model, points, indices } => {
            parameters.insert("points".into(), json!(points));
            if let Some(i) = indices {
                parameters.insert("indices".into(), json!(i));
            }
            ("schwinger", model, None, schwinger(model, points, indices.as_deref(), global)?)
        }
        Command::Simulate { model, orders, stride } => {
            parameters.insert("orders".into(), json!(orders));
            parameters.insert("stride".into(), json!(stride));
            let seed = global.seed.unwrap_or(DEFAULT_SEED);
            ("simulate", model, Some(seed), simulate(model, orders, *stride, seed, global)?)
        }
        Command::Wightman { model, order, assignment } => {
            parameters.insert("order".into(), json!(order));
            if let Some(a) = assignment {
                parameters.insert("assignment".into(), json!(a));
            }
            let seed = global.seed.unwrap_or(DEFAULT_SEED);
            ("wightman", model, Some(seed), wightman(model, *order, assignment.as_deref(), seed, global)?)
        }
        Command::Scatter { model, process } => {
            parameters.insert("process".into(), json!(process.display().to_string()));
            ("scatter", model, None, scatter(model, process, global)?)
        }
        Command::Decay { model, m, mu } => {
            parameters.insert("m".into(), json!(m));
            parameters.insert("mu".into(), json!(mu));
            ("decay", model, None, decay(model, *m, *mu)?)
        }
        Command::Hssc { model, n, m, nodes } => {
            parameters.insert("n".into(), json!(n));
            parameters.insert("m".into(), json!(m));
            parameters.insert("nodes".into(), json!(nodes));
            let seed = global.seed.unwrap_or(DEFAULT_SEED);
            ("hssc", model, Some(seed), hssc(model, *n, *m, *nodes, seed, global)?)
        }
        Command::Cluster {
            model,
            order,
            split,
            shifts,
            nodes,
        } => {
            parameters.insert("order".into(), json!(order));
            parameters.insert("split".into(), json!(split));
            parameters.insert("shifts".into(), json!(shifts));
            parameters.insert("nodes".into(), json!(nodes));
            ("cluster", model, None, cluster(model, *order, *split, shifts, *nodes, global)?)
        }
    };
    let record = RunRecord {
        command: name,
        model: Some(model_path.as_path()),
        parameters,
        seed,
    };
    let dir = if global.stdout {
        None
    } else {
        Some(global.out.clone().unwrap_or_else(|| ".".into()))
    };
    for path in emit(&record, &artifacts, dir.as_deref())? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn validate(path: &Path) -> Result<Vec<Artifact>, CliError> {
    let model = load_model(path)?;
    let normalized: Value = serde_json::from_str(&emit_model_config(model.spec())).map_err(|e| CliError::Io(e.to_string()))?;
    let summary = json!({
        "valid": true,
        "d": model.d(),
        "N": model.n_fields(),
        "masses": model.spectrum().masses(),
        "no_dipole": model.spectrum().no_dipole(),
        "model": normalized,
    });
    Ok(vec![Artifact::json("validate.json", &summary)?])
}

fn multi_index(flat: usize, base: usize, order: usize) -> Vec<usize> {
    let mut idx = vec![0; order];
    let mut rest = flat;
    for slot in idx.iter_mut().rev() {
        *slot = rest % base;
        rest /= base;
    }
    idx
}

fn cumulants(path: &Path, max_order: usize) -> Result<Vec<Artifact>, CliError> {
    let model = load_model(path)?;
    if max_order == 0 {
        return Err(CliError::Usage("--max-order must be positive".into()));
    }
    let nf = model.n_fields();
    let mut table = Table::new(&["order", "indices", "lower", "raised"]);
    for n in 1..=max_order {
        let lower = cumulant_tensor(n, model.levy())?;
        let raised = lower.raised(model.metric_inverse());
        for flat in 0..nf.pow(n as u32) {
            let idx = multi_index(flat, nf, n);
            table.row(vec![n.into(), join(&idx, " ").into(), lower.get(&idx).into(), raised.get(&idx).into()]);
        }
    }
    Ok(vec![Artifact::csv("cumulants.csv", table)])
}

fn parse_points(text: &str, d: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let points: Vec<Vec<f64>> = text
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|p| parse_list("points", p))
        .collect::<Result<_, _>>()?;
    if points.is_empty() || points.iter().any(|p| p.len() != d) {
        return Err(CliError::Usage(format!("--points needs `;`-separated points with {d} coordinates each")));
    }
    Ok(points)
}

fn schwinger(path: &Path, points: &str, indices: Option<&str>, global: &Global) -> Result<Vec<Artifact>, CliError> {
    let model = load_model(path)?;
    let d = model.d();
    let points = parse_points(points, d)?;
    let n = points.len();
    let indices: Vec<usize> = match indices {
        Some(text) => parse_list("indices", text)?,
        None => vec![0; n],
    };
    if indices.len() != n {
        return Err(CliError::Usage(format!("--indices needs {n} entries")));
    }
    let mut header: Vec<String> = (0..n).flat_map(|j| (0..d).map(move |mu| format!("x{j}_{mu}"))).collect();
    header.extend((0..n).map(|j| format!("alpha{j}")));
    header.extend(["value".to_string(), "coarse".to_string(), "relative_gap".to_string()]);
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::new(&header_refs);
    let (value, coarse, gap) = match n {
        1 => {
            let mean = Smearing::new(&model, 2)?.mean()[indices[0]];
            (mean, mean, 0.0)
        }
        2 => {
            let x: Vec<f64> = points[0].iter().zip(&points[1]).map(|(a, b)| a - b).collect();
            let v = schwinger2_truncated(&x, indices[0], indices[1], &model)?;
            (v, v, 0.0)
        }
        _ => {
            let mut lattice = VertexLattice::for_points(&model, &points);
            if let Some(sites) = global.lattice {
                lattice.sites = sites;
            }
            if let Some(spacing) = global.spacing {
                lattice.spacing = spacing;
            }
            if let Some(tol) = global.tolerance {
                lattice.check_tolerance = tol;
            }
            let e = schwinger_n_evaluate(&points, &indices, &model, &lattice)?;
            (e.value, e.coarse, e.relative_gap)
        }
    };
    let mut row: Vec<Cell> = points.iter().flatten().map(|&v| v.into()).collect();
    row.extend(indices.iter().map(|&i| i.into()));
    row.extend([value.into(), coarse.into(), gap.into()]);
    table.row(row);
    Ok(vec![Artifact::csv("schwinger.csv", table)])
}

fn probe_label(p: &Probe) -> String {
    p.sites.iter().map(|s| join(s, ":")).collect::<Vec<_>>().join(" ")
}

fn simulate(path: &Path, orders: &str, stride: usize, seed: u64, global: &Global) -> Result<Vec<Artifact>, CliError> {
    let model = load_model(path)?;
    let orders: Vec<usize> = parse_list("orders", orders)?;
    let lattice = LatticeSpec::new(
        model.d(),
        global.lattice.unwrap_or(DEFAULT_LATTICE),
        global.spacing.unwrap_or(DEFAULT_SPACING),
    )?;
    for w in lattice.check_model(&model)? {
        eprintln!("warning: {w}");
    }
    let mut probes = Vec::new();
    for &n in &orders {
        probes.extend(standard_probes(model.d(), n)?);
    }
    let mut config = MonteCarloConfig::new(global.samples.unwrap_or(1000), seed);
    config.translation_stride = (stride > 0).then_some(stride);
    let estimates = estimate_truncated_moments(&model, &lattice, &orders, &probes, &config)?;
    let mut analytic = Vec::with_capacity(probes.len());
    for &n in &orders {
        let sub: Vec<Probe> = probes.iter().filter(|p| p.order() == n).cloned().collect();
        analytic.extend(lattice_analytic_kernel(&model, &lattice, n, &sub)?);
    }
    let mut table = Table::new(&["order", "probe", "sites", "mc_mean", "mc_stderr", "analytic_value", "z_score"]);
    let mut id = 0usize;
    let mut last_order = 0;
    for (e, exact) in estimates.iter().zip(analytic) {
        if e.order != last_order {
            id = 0;
            last_order = e.order;
        }
        let z = if e.stderr > 0.0 { (e.mean - exact) / e.stderr } else { 0.0 };
        table.row(vec![
            e.order.into(),
            id.into(),
            probe_label(&e.probe).into(),
            e.mean.into(),
            e.stderr.into(),
            exact.into(),
            z.into(),
        ]);
        id += 1;
    }
    Ok(vec![Artifact::csv("simulate.csv", table)])
}

fn wightman(path: &Path, order: usize, assignment: Option<&str>, seed: u64, global: &Global) -> Result<Vec<Artifact>, CliError> {
    let model = load_model(path)?;
    let assignment: Vec<usize> = match assignment {
        Some(text) => parse_list("assignment", text)?,
        None => vec![0; order],
    };
    let terms = build_wightman_terms(order, &assignment, &model)?;
    let scan = spectral_scan(&terms, global.samples.unwrap_or(1000), seed, 10.0)?;
    let records = terms.q_m.to_records();
    let list = json!({
        "order": terms.order,
        "d": terms.dim,
        "assignment": terms.assignment,
        "masses": terms.masses,
        "couplings": terms.couplings,
        "terms": terms.terms,
        "q_m": records,
        "spectral_scan": scan,
    });
    let mut artifacts = vec![Artifact::json("wightman.json", &list)?];
    if model.n_fields() == 1 && model.spectrum().len() == 1 {
        let mut table = Table::new(&["tau", "x", "lhs", "rhs", "relative_gap"]);
        for tau in [0.5, 1.0, 1.5, 2.0, 3.0] {
            for x in [0.0, 0.7] {
                let mut sep = vec![0.0; model.d()];
                sep[0] = tau;
                sep[1] = x;
                let c = fourier_laplace_check(&model, &sep)?;
                table.row(vec![tau.into(), x.into(), c.lhs.into(), c.rhs.into(), c.gap.into()]);
            }
        }
        artifacts.push(Artifact::csv("wightman_fourier_laplace.csv", table));
    }
    Ok(artifacts)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Leg {
    l: usize,
    #[serde(default)]
    alpha: usize,
    k: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Process {
    ins: Vec<Leg>,
    outs: Vec<Leg>,
}

fn scatter(path: &Path, process: &Path, global: &Global) -> Result<Vec<Artifact>, CliError> {
    let model = load_model(path)?;
    let process: Process = serde_json::from_str(&read(process)?).map_err(|e| Error::Parse(e.to_string()))?;
    let ins: Vec<ParticleState> = process.ins.into_iter().map(|p| ParticleState::incoming(p.l, p.alpha, p.k)).collect();
    let outs: Vec<ParticleState> = process.outs.into_iter().map(|p| ParticleState::outgoing(p.l, p.alpha, p.k)).collect();
    let mut variant = PolynomialModel::new(model);
    if let Some(tol) = global.tolerance {
        variant = variant.with_tolerance(tol)?;
    }
    let result = amplitude_with(&ins, &outs, &variant)?;
    Ok(vec![Artifact::json("scatter.json", &result)?])
}

fn decay(path: &Path, m: f64, mu: f64) -> Result<Vec<Artifact>, CliError> {
    let model = load_model(path)?;
    Ok(vec![Artifact::json("decay.json", &decay_scan(m, mu, &model)?)?])
}

fn quadrature(nodes: usize, global: &Global) -> Result<ShellQuadrature, CliError> {
    let abs_tol = global.tolerance.unwrap_or(ShellQuadrature::default().abs_tol);
    if nodes < 2 || abs_tol.is_nan() || abs_tol <= 0.0 {
        return Err(CliError::Usage("--nodes must be at least 2 and --tolerance positive".into()));
    }
    Ok(ShellQuadrature { nodes, abs_tol })
}

fn hssc(path: &Path, n: usize, m: usize, nodes: usize, seed: u64, global: &Global) -> Result<Vec<Artifact>, CliError> {
    let model = load_model(path)?;
    if n == 0 || m == 0 || n + m > 4 {
        return Err(CliError::Usage("--n and --m must be positive with n + m <= 4".into()));
    }
    let family = TestFunctionFamily::hermite(model.d(), 1, 1.0);
    let tensors = WightmanTensors::new(&model, &family, n + m, quadrature(nodes, global)?)?;
    let stats = tensors.witness(n, m, global.samples.unwrap_or(100), seed, 10)?;
    let mut ratios = Table::new(&["draw", "ratio"]);
    for (i, r) in stats.ratios.iter().enumerate() {
        ratios.row(vec![i.into(), (*r).into()]);
    }
    let mut histogram = Table::new(&["bin", "lower", "upper", "count"]);
    for (i, c) in stats.histogram.iter().enumerate() {
        histogram.row(vec![
            i.into(),
            (i as f64 * stats.bin_width).into(),
            ((i + 1) as f64 * stats.bin_width).into(),
            (*c).into(),
        ]);
    }
    let summary = json!({
        "n": stats.n,
        "m": stats.m,
        "draws": stats.draws,
        "failures": stats.failures,
        "max": stats.max,
        "mean": stats.mean,
        "sup": stats.sup,
        "basis": tensors.n_basis(),
        "norm_order": family.norm_order,
    });
    Ok(vec![
        Artifact::json("hssc.json", &summary)?,
        Artifact::csv("hssc_ratios.csv", ratios),
        Artifact::csv("hssc_histogram.csv", histogram),
    ])
}

fn cluster(
    path: &Path,
    order: usize,
    split: usize,
    shifts: &str,
    nodes: usize,
    global: &Global,
) -> Result<Vec<Artifact>, CliError> {
    let model = load_model(path)?;
    if split == 0 || split >= order {
        return Err(CliError::Usage("--split must lie strictly between 0 and --order".into()));
    }
    let shifts: Vec<f64> = parse_list("shifts", shifts)?;
    let d = model.d();
    let gaussian = |field: usize| SmearedSlot {
        field,
        function: HermiteFunction::gaussian(vec![0.0; d], 1.0),
    };
    let f: Vec<SmearedSlot> = (0..split).map(|_| gaussian(0)).collect();
    let h: Vec<SmearedSlot> = (split..order).map(|_| gaussian(0)).collect();
    let mut direction = vec![0.0; d - 1];
    direction[0] = 1.0;
    let rows = clustering_check(&model, &f, &h, &direction, &shifts, quadrature(nodes, global)?)?;
    let mut table = Table::new(&["shift", "joint_re", "joint_im", "product_re", "product_im", "gap_abs"]);
    for r in rows {
        table.row(vec![
            r.shift.into(),
            r.joint.re.into(),
            r.joint.im.into(),
            r.product.re.into(),
            r.product.im.into(),
            r.gap.norm().into(),
        ]);
    }
    Ok(vec![Artifact::csv("cluster.csv", table)])
}
