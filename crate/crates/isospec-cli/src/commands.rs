use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;

use isospec::angular_coeffs::{clebsch_gordan_exact, wigner3j_exact, wigner6j_exact, CoefficientValue};
use isospec::cg_compress::{build_replicates, mc_estimate_cg, precompute_h, HTable, ReplicateStore};
use isospec::coupling::{
    cg_matrix, delta_exact, delta_of_g, delta_pair, direct_sum_rotation, generalized_cg_matrix,
};
use isospec::io::{
    htable_from_matrix, htable_to_matrix, read_matrix, replicates_from_matrix, replicates_to_matrix, spectrum_from_csv,
    write_matrix,
};
use isospec::random_fields::{haar_rotation, realize_field, FieldModel, ModelVariant, PowerSpectrum, SeedSpec};
use isospec::sht::{analyze, synthesize, HarmonicCoefficients, SphericalGrid};
use isospec::spectra::{
    bispectrum_sachs_wolfe, chi1_bispectrum_h, chi2_trispectrum_p4, cumulant_from_moments, extract_reduced,
    mc_moment_polyspectra, quadratic_power_spectrum, reduced_basis, MomentTable,
};
use isospec::Error;

use crate::table::{ints, num, sig15, Format, Table};
use crate::{CoeffKind, Suite};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Lib(Error::Io(_)) => 2,
            CliError::Lib(Error::Cap { .. }) => 4,
            CliError::Lib(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(s) => write!(f, "{s}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(Error::Io(e.to_string()))
    }
}

type Outcome = Result<(Table, bool), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn coeff(kind: CoeffKind, idx: &[i32]) -> Outcome {
    if idx.len() != 6 {
        return Err(usage(format!("expected 6 integer indices, got {}", idx.len())));
    }
    let (name, value): (&str, CoefficientValue) = match kind {
        CoeffKind::ThreeJ => ("3j", wigner3j_exact(idx[0], idx[1], idx[2], idx[3], idx[4], idx[5])?),
        CoeffKind::SixJ => ("6j", wigner6j_exact(idx[0], idx[1], idx[2], idx[3], idx[4], idx[5])?),
        CoeffKind::Cg => ("cg", clebsch_gordan_exact(idx[0], idx[1], idx[2], idx[3], idx[4], idx[5])?),
    };
    let mut t = Table::new(&["kind", "indices", "value", "exact"]);
    t.push(vec![name.into(), ints(idx), sig15(value.float), value.to_string()]);
    Ok((t, true))
}

pub fn parse_spectrum(arg: &str, lmax: usize) -> Result<PowerSpectrum, CliError> {
    let path = Path::new(arg);
    if path.exists() {
        let s = spectrum_from_csv(&std::fs::read_to_string(path)?)?;
        if s.lmax() < lmax {
            return Err(CliError::Lib(Error::Invalid(format!(
                "spectrum file covers l <= {}, need {lmax}",
                s.lmax()
            ))));
        }
        return Ok(s.truncate(lmax));
    }
    let parts: Vec<&str> = arg.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, alpha] => {
            let a: f64 = a.parse().map_err(|_| usage(format!("bad spectrum amplitude '{a}'")))?;
            let alpha: f64 = alpha.parse().map_err(|_| usage(format!("bad spectrum exponent '{alpha}'")))?;
            Ok(PowerSpectrum::parametric(a, alpha, lmax)?)
        }
        _ => Err(usage(format!("spectrum must be a file or 'A,alpha', got '{arg}'"))),
    }
}

/// Parse a model; `sw:0` is the Gaussian model itself.
pub fn parse_model(arg: &str, spectrum: PowerSpectrum) -> Result<FieldModel, CliError> {
    let (name, param) = arg.split_once(':').unwrap_or((arg, ""));
    let bad = |what: &str| usage(format!("bad {what} in model '{arg}'"));
    let variant = match name {
        "gaussian" if param.is_empty() => ModelVariant::Gaussian,
        "sw" | "sachs-wolfe" => {
            let f: f64 = param.parse().map_err(|_| bad("f_NL"))?;
            if f == 0.0 {
                ModelVariant::Gaussian
            } else {
                ModelVariant::SachsWolfe(f)
            }
        }
        "chi2" => ModelVariant::ChiSquare(param.parse().map_err(|_| bad("degrees of freedom"))?),
        "hermite" => ModelVariant::HermiteSubordinated(
            param
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad("Hermite coefficients"))?,
        ),
        _ => return Err(usage(format!("unknown model '{arg}'"))),
    };
    Ok(FieldModel::new(variant, spectrum)?)
}

fn model_label(m: &FieldModel) -> String {
    match &m.variant {
        ModelVariant::Gaussian => "gaussian".into(),
        ModelVariant::SachsWolfe(f) => format!("sw:{f}"),
        ModelVariant::ChiSquare(nu) => format!("chi2:{nu}"),
        ModelVariant::HermiteSubordinated(fs) => {
            format!("hermite:{}", fs.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(";"))
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    model: &str,
    lmax: usize,
    replicates: u64,
    seed: u64,
    spectrum: &str,
    grid_band: Option<usize>,
    field: Option<&Path>,
    format: Format,
) -> Outcome {
    let spec = parse_spectrum(spectrum, lmax)?;
    let model = parse_model(model, spec)?;
    let band = grid_band.unwrap_or(if model.degree() >= 2 { 2 * lmax } else { lmax });
    if band < lmax {
        return Err(CliError::Lib(Error::Invalid(format!("grid band {band} is below L = {lmax}"))));
    }
    let grid = SphericalGrid::for_band(band);
    let seeds = SeedSpec::new(seed);
    let mut t = Table::new(&["replicate", "l", "m", "re", "im"]);
    t.meta("command", "simulate")
        .meta("model", model_label(&model))
        .meta("lmax", lmax)
        .meta("replicates", replicates)
        .meta("seed", seed)
        .meta("spectrum", spectrum)
        .meta("grid_band", band);
    let mut ft = Table::new(&["replicate", "theta_index", "phi_index", "value"]);
    ft.header = t.header.clone();
    ft.meta("grid", grid.to_json());
    for i in 0..replicates {
        let (samples, a) = realize_field(&model, lmax, &seeds, i, &grid)?;
        for l in 0..=a.lmax() {
            for m in -(l as i32)..=l as i32 {
                let z = a.get(l, m);
                t.push(vec![i.to_string(), l.to_string(), m.to_string(), num(z.re), num(z.im)]);
            }
        }
        if field.is_some() {
            for it in 0..grid.cos_theta.len() {
                for k in 0..grid.phi_count {
                    ft.push(vec![i.to_string(), it.to_string(), k.to_string(), num(samples.get(it, k).re)]);
                }
            }
        }
    }
    if let Some(path) = field {
        std::fs::write(path, ft.render(format))?;
    }
    Ok((t, true))
}

/// Reduced cumulant from the closed forms, where one exists.
fn analytic_reduced(model: &FieldModel, ls: &[i32], lambda: &[i32], lmax: usize) -> Result<Option<f64>, CliError> {
    let spec = model.spectrum.truncate(lmax);
    let s2 = spec.variance();
    let n = ls.len();
    let v = match (&model.variant, n) {
        (ModelVariant::Gaussian, 2) => Some(spec.get(ls[0] as usize)),
        (ModelVariant::Gaussian, _) if n >= 3 => Some(0.0),
        (ModelVariant::SachsWolfe(f), 2) => Some(spec.get(ls[0] as usize) + f * f * quadratic_power_spectrum(ls[0], &spec)),
        (ModelVariant::SachsWolfe(f), 3) => Some(bispectrum_sachs_wolfe(ls[0], ls[1], ls[2], &spec, *f)),
        (ModelVariant::ChiSquare(nu), 2) => Some(f64::from(*nu) * quadratic_power_spectrum(ls[0], &spec) / (s2 * s2)),
        (ModelVariant::ChiSquare(nu), 3) => Some(f64::from(*nu) * chi1_bispectrum_h(ls[0], ls[1], ls[2], &spec) / s2.powi(3)),
        (ModelVariant::ChiSquare(nu), 4) => {
            Some(chi2_trispectrum_p4([ls[0], ls[1], ls[2], ls[3]], lambda[0], &spec, *nu)? / s2.powi(4))
        }
        _ => None,
    };
    Ok(v)
}

pub fn spectrum(ls: &[i32], model: &str, lmax: usize, replicates: usize, seed: u64, spectrum: &str) -> Outcome {
    if ls.len() < 2 {
        return Err(usage("spectrum needs at least two multipoles"));
    }
    let spec = parse_spectrum(spectrum, lmax)?;
    let model = parse_model(model, spec)?;
    let (paths, _) = reduced_basis(ls)?;
    let n = ls.len();
    // sub-tuples for the moment-to-cumulant conversion
    let subsets: Vec<Vec<usize>> = if n >= 4 {
        (1..(1usize << n))
            .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).collect())
            .collect()
    } else {
        vec![(1..=n).collect()]
    };
    let tuples: Vec<Vec<i32>> = subsets.iter().map(|s| s.iter().map(|&i| ls[i - 1]).collect()).collect();
    let est = mc_moment_polyspectra(&model, &tuples, lmax, replicates, &SeedSpec::new(seed))?;
    let full = est.last().expect("full tuple is last");

    let mut t = Table::new(&["kind", "ls", "lambda", "value", "std_err", "residual", "residual_se"]);
    t.meta("command", "spectrum")
        .meta("model", model_label(&model))
        .meta("ls", ints(ls))
        .meta("lmax", lmax)
        .meta("replicates", replicates)
        .meta("seed", seed)
        .meta("spectrum", spectrum);
    let iso = full.isotropy.expect("n >= 2");
    if let Some(r) = &full.reduced {
        for (k, p) in r.paths.iter().enumerate() {
            t.push(vec![
                "mc_moment".into(),
                ints(ls),
                ints(p),
                num(r.values[k]),
                num(r.std_err[k]),
                num(iso.residual),
                num(iso.propagated_se),
            ]);
        }
    }
    if paths.is_empty() {
        t.push(vec![
            "mc_moment".into(),
            ints(ls),
            String::new(),
            String::new(),
            String::new(),
            num(iso.residual),
            num(iso.propagated_se),
        ]);
    }
    if n >= 4 {
        let table: MomentTable = subsets
            .iter()
            .cloned()
            .zip(est.iter().map(|e| e.moment.entries.clone()))
            .collect();
        let cum = extract_reduced(&cumulant_from_moments(ls, &table)?)?;
        for (p, v) in cum.paths.iter().zip(&cum.values) {
            t.push(vec!["mc_cumulant".into(), ints(ls), ints(p), num(*v), String::new(), String::new(), String::new()]);
        }
    }
    for p in &paths {
        if let Some(v) = analytic_reduced(&model, ls, p, lmax)? {
            t.push(vec!["analytic_cumulant".into(), ints(ls), ints(p), num(v), String::new(), String::new(), String::new()]);
        }
    }
    Ok((t, true))
}

pub struct McCgArgs {
    pub targets: Option<PathBuf>,
    pub lmax: usize,
    pub replicates: usize,
    pub seed: u64,
    pub spectrum: String,
    pub h_table: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub write_h: Option<PathBuf>,
    pub write_store: Option<PathBuf>,
}

fn read_targets(path: &Path) -> Result<Vec<[i32; 6]>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Result<Vec<i32>, _> = line.split(',').map(|x| x.trim().parse::<i32>()).collect();
        match f {
            Ok(v) if v.len() == 6 => out.push([v[0], v[1], v[2], v[3], v[4], v[5]]),
            // a header row is allowed
            Err(_) if out.is_empty() && i == 0 => continue,
            _ => return Err(usage(format!("{}:{}: expected l1,m1,l2,m2,l3,m3", path.display(), i + 1))),
        }
    }
    Ok(out)
}

pub fn mc_cg(a: McCgArgs) -> Outcome {
    let targets = match &a.targets {
        Some(p) => read_targets(p)?,
        None => vec![[1, 0, 1, 0, 2, 0], [1, 1, 1, 0, 2, 1], [2, 1, 2, -1, 2, 0]],
    };
    let spec = parse_spectrum(&a.spectrum, a.lmax)?;
    let h: HTable = match &a.h_table {
        Some(p) => htable_from_matrix(&read_matrix(&mut std::fs::File::open(p)?)?)?,
        None => precompute_h(a.lmax, &spec)?,
    };
    let store: ReplicateStore = match &a.store {
        Some(p) => replicates_from_matrix(&read_matrix(&mut std::fs::File::open(p)?)?)?,
        None => build_replicates(a.lmax, &spec, a.replicates, &SeedSpec::new(a.seed))?,
    };
    if let Some(p) = &a.write_h {
        write_matrix(&mut std::fs::File::create(p)?, &htable_to_matrix(&h))?;
    }
    if let Some(p) = &a.write_store {
        write_matrix(&mut std::fs::File::create(p)?, &replicates_to_matrix(&store))?;
    }
    let mut t = Table::new(&[
        "l1", "m1", "l2", "m2", "l3", "m3", "estimate", "exact", "std_err", "z", "imag", "selection_zero",
    ]);
    t.meta("command", "mc-cg")
        .meta("lmax", a.lmax)
        .meta("replicates", store.len())
        .meta("seed", a.seed)
        .meta("spectrum", &a.spectrum);
    for [l1, m1, l2, m2, l3, m3] in targets {
        let e = mc_estimate_cg(l1, m1, l2, m2, l3, m3, &store, &h)?;
        let exact = clebsch_gordan_exact(l1, m1, l2, m2, l3, m3)?.float;
        let z = if e.exact { 0.0 } else { (e.estimate - exact) / e.std_err };
        let mut row: Vec<String> = [l1, m1, l2, m2, l3, m3].iter().map(|x| x.to_string()).collect();
        row.extend([num(e.estimate), num(exact), num(e.std_err), num(z), num(e.imag), e.exact.to_string()]);
        t.push(row);
    }
    Ok((t, true))
}

fn cmax(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn verify(suite: Suite, lmax: i32, seed: u64, perturb: f64) -> Outcome {
    if lmax < 0 {
        return Err(CliError::Lib(Error::Domain("lmax must be nonnegative".into())));
    }
    let mut checks: Vec<(&str, f64, f64)> = Vec::new();
    match suite {
        Suite::Orthogonality => {
            let mut worst = 0.0f64;
            for l1 in 0..=lmax {
                for l2 in 0..=lmax {
                    let mut c = cg_matrix(l1, l2)?;
                    c[(0, 0)] += perturb;
                    let n = c.nrows();
                    let eye = DMatrix::<f64>::identity(n, n);
                    worst = worst.max((c.transpose() * &c - &eye).abs().max());
                    worst = worst.max((&c * c.transpose() - eye).abs().max());
                }
            }
            checks.push(("cg_unitarity", worst, 1e-10));
        }
        Suite::Clebun => {
            let seeds = SeedSpec::new(seed);
            let mut worst = 0.0f64;
            for i in 0..20 {
                let g = haar_rotation(&seeds, i);
                for l1 in 0..=lmax {
                    for l2 in 0..=lmax {
                        let c = cg_matrix(l1, l2)?.map(|x| Complex64::new(x, 0.0));
                        let mut lhs = delta_of_g(&[l1, l2], &g)?;
                        lhs[(0, 0)] += perturb;
                        let rhs = &c * direct_sum_rotation(&[l1, l2], &g)? * c.transpose();
                        worst = worst.max(cmax(&lhs, &rhs));
                    }
                }
            }
            checks.push(("d_product_equivalence", worst, 1e-9));
        }
        Suite::Projector => {
            let mut pair = 0.0f64;
            for l1 in 0..=lmax {
                for l2 in 0..=lmax {
                    let mut d = delta_exact(&[l1, l2])?;
                    d[(0, 0)] += perturb;
                    pair = pair.max((d - delta_pair(l1, l2)?).abs().max());
                }
            }
            checks.push(("pair_closed_form", pair, 1e-10));
            let mut idem = 0.0f64;
            let top = lmax.min(2);
            for l1 in 0..=top {
                for l2 in 0..=top {
                    for l3 in 0..=top {
                        let ls = [l1, l2, l3];
                        let c = generalized_cg_matrix(&ls)?;
                        let n = c.nrows();
                        let d = delta_exact(&ls)?;
                        idem = idem.max((&d * &d - &d).abs().max());
                        idem = idem.max((c.transpose() * &c - DMatrix::<f64>::identity(n, n)).abs().max());
                    }
                }
            }
            checks.push(("idempotence", idem, 1e-9));
        }
        Suite::Sht => {
            let l = lmax as usize;
            let grid = SphericalGrid::for_band(l);
            let seeds = SeedSpec::new(seed);
            let spec = PowerSpectrum::flat(l);
            let a: HarmonicCoefficients = isospec::random_fields::sample_gaussian_alm(&spec, l, &seeds, 0)?;
            let mut samples = synthesize(&a, &grid)?;
            samples.values[0] += Complex64::new(perturb, 0.0);
            let back = analyze(&samples, l)?;
            let mut worst = 0.0f64;
            for ll in 0..=l {
                for m in -(ll as i32)..=ll as i32 {
                    worst = worst.max((back.get(ll, m) - a.get(ll, m)).norm());
                }
            }
            checks.push(("round_trip", worst, 1e-10));
        }
    }
    let mut t = Table::new(&["suite", "check", "max_residual", "tolerance", "status"]);
    let name = format!("{suite:?}").to_lowercase();
    t.meta("command", "verify").meta("suite", &name).meta("lmax", lmax).meta("seed", seed);
    let mut ok = true;
    for (check, r, tol) in checks {
        let pass = r < tol;
        ok &= pass;
        t.push(vec![
            name.clone(),
            check.into(),
            format!("{r:.3e}"),
            format!("{tol:e}"),
            if pass { "pass" } else { "fail" }.into(),
        ]);
    }
    Ok((t, ok))
}
