//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use num_rational::BigRational;

use isospec::angular_coeffs::{
    cg, euler_to_rotation, wigner3j, wigner6j, wigner6j_exact,
};
use isospec::cg_compress::{build_replicates, mc_estimate_cg, precompute_h};
use isospec::coupling::{
    cg_matrix, coupling_paths, delta_exact, delta_numeric, delta_of_g, delta_pair, direct_sum_rotation, e_matrix,
    generalized_cg_matrix,
};
use isospec::random_fields::{
    haar_rotation, realize_field, rotate_coefficients, FieldModel, ModelVariant, PowerSpectrum, SeedSpec,
};
use isospec::sht::{analyze, synthesize, ylm, FieldSamples, HarmonicCoefficients, SphericalGrid};
use isospec::spectra::{
    bispectrum_sachs_wolfe, chi1_bispectrum_h, chi2_trispectrum_p4, diagram_cumulant_mixed, diagram_cumulant_oracle,
    extract_reduced, mc_moment_polyspectra, partition_permutation, partitions, reduced_basis, synthesize_reduced,
    PolyspectrumVector, RowKind, SetPartition,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cmax(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

fn decay(band: usize) -> PowerSpectrum {
    PowerSpectrum::new((0..=band).map(|l| 1.0 / ((l + 1) * (l + 1)) as f64).collect()).unwrap()
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    for l1 in 0..=10 {
        for l2 in 0..=10 {
            let c = cg_matrix(l1, l2).unwrap();
            let n = c.nrows();
            let eye = DMatrix::<f64>::identity(n, n);
            worst = worst.max((c.transpose() * &c - &eye).abs().max());
            worst = worst.max((&c * c.transpose() - &eye).abs().max());
        }
    }
    outcome(worst < 1e-10, format!("max orthogonality residual {worst:.2e}"))
}

fn criterion_2() -> Outcome {
    let seed = SeedSpec::new(2002);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let g = haar_rotation(&seed, i);
        for l1 in 0..=4 {
            for l2 in 0..=4 {
                let c = to_complex(&cg_matrix(l1, l2).unwrap());
                let lhs = delta_of_g(&[l1, l2], &g).unwrap();
                let rhs = &c * direct_sum_rotation(&[l1, l2], &g).unwrap() * c.transpose();
                worst = worst.max(cmax(&lhs, &rhs));
            }
        }
    }
    let mut worst3 = 0.0f64;
    for i in 0..50 {
        let g = haar_rotation(&seed, 100 + i);
        for l1 in 0..=2 {
            for l2 in 0..=2 {
                for l3 in 0..=2 {
                    let ls = [l1, l2, l3];
                    let c = to_complex(&generalized_cg_matrix(&ls).unwrap());
                    let lhs = delta_of_g(&ls, &g).unwrap();
                    let rhs = &c * direct_sum_rotation(&ls, &g).unwrap() * c.transpose();
                    worst3 = worst3.max(cmax(&lhs, &rhs));
                }
            }
        }
    }
    outcome(
        worst < 1e-9 && worst3 < 1e-9,
        format!("pair max error {worst:.2e}, triple max error {worst3:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut pair_err = 0.0f64;
    for l1 in 0..=5 {
        for l2 in 0..=5 {
            let d = delta_exact(&[l1, l2]).unwrap();
            pair_err = pair_err.max((d - delta_pair(l1, l2).unwrap()).abs().max());
        }
    }
    let seed = SeedSpec::new(3003);
    let (mut idem, mut inv) = (0.0f64, 0.0f64);
    let mut worst_z = 0.0f64;
    let mut mc_ok = true;
    for ls in [[1, 1, 1], [1, 1, 2], [1, 2, 2]] {
        let d = delta_exact(&ls).unwrap();
        idem = idem.max((&d * &d - &d).abs().max());
        let dc = to_complex(&d);
        for i in 0..10 {
            let dg = delta_of_g(&ls, &haar_rotation(&seed, i)).unwrap();
            inv = inv.max(cmax(&(&dg * &dc), &dc));
        }
        let num = delta_numeric(&ls, 100_000, &seed).unwrap();
        let max_se = num.std_err.max();
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                let diff = (num.mean[(i, j)].re - d[(i, j)]).abs();
                let se = num.std_err[(i, j)];
                if se > 0.0 {
                    worst_z = worst_z.max(diff / se);
                }
                if diff > 5.0 * se + 1e-12 || num.mean[(i, j)].im.abs() > 5.0 * max_se + 1e-12 {
                    mc_ok = false;
                }
            }
        }
    }
    outcome(
        pair_err < 1e-10 && idem < 1e-9 && inv < 1e-9 && mc_ok,
        format!(
            "pair closed form {pair_err:.2e}, idempotence {idem:.2e}, invariance {inv:.2e}, Haar MC max |z| {worst_z:.2}"
        ),
    )
}

fn sixj_brute(a: i32, b: i32, e: i32, c: i32, d: i32, f: i32) -> f64 {
    let tj = |l1: i32, l2: i32, l3: i32, m1: i32, m2: i32, m3: i32| -> f64 {
        if m1.abs() > l1 || m2.abs() > l2 || m3.abs() > l3 {
            0.0
        } else {
            wigner3j(l1, l2, l3, m1, m2, m3).unwrap()
        }
    };
    let mut s = 0.0;
    for al in -a..=a {
        for be in -b..=b {
            let ep = -al - be;
            if ep.abs() > e {
                continue;
            }
            for ga in -c..=c {
                let de = ep - ga;
                if de.abs() > d {
                    continue;
                }
                let ph = al + de;
                if ph.abs() > f || ga + be + ph != 0 {
                    continue;
                }
                let sign = if (e + f + ep + ph).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                s += sign
                    * tj(a, b, e, al, be, ep)
                    * tj(c, d, e, ga, de, -ep)
                    * tj(a, d, f, al, de, -ph)
                    * tj(c, b, f, ga, be, ph);
            }
        }
    }
    s
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    for a in 0..=3 {
        for b in 0..=3 {
            for e in 0..=3 {
                for c in 0..=3 {
                    for d in 0..=3 {
                        for f in 0..=3 {
                            let v = wigner6j(a, b, e, c, d, f).unwrap();
                            worst = worst.max((v - sixj_brute(a, b, e, c, d, f)).abs());
                        }
                    }
                }
            }
        }
    }
    let x = wigner6j_exact(1, 1, 1, 1, 1, 1).unwrap();
    let sixth = BigRational::new(1.into(), 6.into());
    let exact = x.sign > 0 && x.square == &sixth * &sixth;
    outcome(
        worst < 1e-12 && exact,
        format!("max |Racah - quadruple 3j| {worst:.2e}, {{1 1 1; 1 1 1}} = {x}"),
    )
}

fn random_coefficients(lmax: usize, seed: u64) -> HarmonicCoefficients {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut a = HarmonicCoefficients::zeros(lmax, true);
    for l in 0..=lmax {
        a.set(l, 0, Complex64::new(rng.gen_range(-1.0..1.0), 0.0));
        for m in 1..=l as i32 {
            a.set(l, m, Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        }
    }
    a
}

fn coefficient_error(a: &HarmonicCoefficients, b: &HarmonicCoefficients) -> f64 {
    let mut e = 0.0f64;
    for l in 0..=a.lmax() {
        for m in -(l as i32)..=l as i32 {
            e = e.max((a.get(l, m) - b.get(l, m)).norm());
        }
    }
    e
}

fn criterion_5() -> Outcome {
    let lmax = 32;
    let grid = SphericalGrid::for_band(lmax);
    let a = random_coefficients(lmax, 5);
    let round = coefficient_error(&a, &analyze(&synthesize(&a, &grid).unwrap(), lmax).unwrap());

    // Gram matrix column by column: analyze(Y_lm) must be the unit vector.
    let mut ortho = 0.0f64;
    for l in 0..=lmax {
        for m in -(l as i32)..=l as i32 {
            let mut e = HarmonicCoefficients::zeros(lmax, false);
            e.set(l, m, Complex64::new(1.0, 0.0));
            let back = analyze(&synthesize(&e, &grid).unwrap(), lmax).unwrap();
            ortho = ortho.max(coefficient_error(&e, &back));
        }
    }

    let lr = 8;
    let grid = SphericalGrid::for_band(lr);
    let a = random_coefficients(lr, 55);
    let mut rot = 0.0f64;
    for i in 0..5 {
        let g = haar_rotation(&SeedSpec::new(505), i);
        let r = euler_to_rotation(&g);
        let mut values = Vec::with_capacity(grid.len());
        for t in 0..grid.cos_theta.len() {
            for k in 0..grid.phi_count {
                let (th, ph) = (grid.theta(t), grid.phi(k));
                let x = Vector3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos());
                let y = r.transpose() * x;
                let (ty, py) = (y.z.clamp(-1.0, 1.0).acos(), y.y.atan2(y.x));
                let mut v = Complex64::new(0.0, 0.0);
                for l in 0..=lr {
                    for m in -(l as i32)..=l as i32 {
                        v += a.get(l, m) * ylm(l as i32, m, ty, py).unwrap();
                    }
                }
                values.push(v);
            }
        }
        let samples = FieldSamples {
            grid: grid.clone(),
            values,
        };
        let pointwise = analyze(&samples, lr).unwrap();
        rot = rot.max(coefficient_error(&pointwise, &rotate_coefficients(&a, &g).unwrap()));
    }
    outcome(
        round < 1e-10 && ortho < 1e-11 && rot < 1e-8,
        format!("round trip {round:.2e}, orthonormality {ortho:.2e}, rotation {rot:.2e}"),
    )
}

fn within(est: &PolyspectrumVector, want: &[Complex64], k: f64) -> (bool, f64) {
    let se = est.std_err.as_ref().unwrap();
    let mut ok = true;
    let mut worst = 0.0f64;
    for ((z, s), w) in est.entries.iter().zip(se.iter()).zip(want) {
        let (dr, di) = ((z.re - w.re).abs(), (z.im - w.im).abs());
        ok &= dr <= k * s.re + 1e-12 && di <= k * s.im + 1e-12;
        if s.re > 0.0 {
            worst = worst.max(dr / s.re);
        }
        if s.im > 0.0 {
            worst = worst.max(di / s.im);
        }
    }
    (ok, worst)
}

fn criterion_6() -> Outcome {
    let lmax = 16;
    let b = 2000;
    let spec = decay(lmax);
    let model = FieldModel::new(ModelVariant::Gaussian, spec.clone()).unwrap();
    let grid = SphericalGrid::for_band(lmax);
    let seed = SeedSpec::new(606);
    let mut sums = vec![0.0; lmax + 1];
    let mut sqs = vec![0.0; lmax + 1];
    for i in 0..b {
        let (t, _) = realize_field(&model, lmax, &seed, i, &grid).unwrap();
        let a = analyze(&t, lmax).unwrap();
        for l in 0..=lmax {
            let c = a.power(l);
            sums[l] += c;
            sqs[l] += c * c;
        }
    }
    let n = b as f64;
    let mut cl_ok = true;
    let mut worst = 0.0f64;
    for l in 0..=lmax {
        let mean = sums[l] / n;
        let var = (sqs[l] / n - mean * mean) * n / (n - 1.0);
        let z = (mean - spec.get(l)).abs() / (var / n).sqrt();
        worst = worst.max(z);
        cl_ok &= z <= 5.0;
    }
    let est = mc_moment_polyspectra(&model, &[vec![2, 2], vec![2, 3]], lmax, b as usize, &seed).unwrap();
    let mut pattern_ok = true;
    let mut worst_p = 0.0f64;
    for e in &est {
        let (l1, l2) = (e.moment.ls[0], e.moment.ls[1]);
        let want: Vec<Complex64> = (0..e.moment.entries.len())
            .map(|i| {
                let (m1, m2) = ((i as i32) / (2 * l2 + 1) - l1, (i as i32) % (2 * l2 + 1) - l2);
                if l1 == l2 && m1 == -m2 {
                    let sign = if m2.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    Complex64::new(sign * spec.get(l1 as usize), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let (ok, w) = within(&e.moment, &want, 5.0);
        pattern_ok &= ok;
        worst_p = worst_p.max(w);
    }
    outcome(
        cl_ok && pattern_ok,
        format!("C_l max |z| {worst:.2}, second-moment pattern max |z| {worst_p:.2}"),
    )
}

fn criterion_7() -> Outcome {
    let spec = decay(3);
    let mut bi = 0.0f64;
    for l1 in 0..=3 {
        for l2 in 0..=3 {
            for l3 in 0..=3 {
                let ls = [l1, l2, l3];
                let oracle = diagram_cumulant_oracle(&ls, &spec).unwrap();
                let h = chi1_bispectrum_h(l1, l2, l3, &spec);
                let (_, cols) = reduced_basis(&ls).unwrap();
                let model = if cols.is_empty() {
                    PolyspectrumVector::from_real(ls.to_vec(), &nalgebra::DVector::zeros(oracle.entries.len())).unwrap()
                } else {
                    synthesize_reduced(&ls, &[h]).unwrap()
                };
                bi = bi.max((&oracle.entries - &model.entries).iter().map(|z| z.norm()).fold(0.0, f64::max));
            }
        }
    }
    let mut tri = 0.0f64;
    let mut scaling = true;
    for l1 in 0..=3 {
        for l2 in 0..=3 {
            for l3 in 0..=3 {
                for l4 in 0..=3 {
                    let ls = [l1, l2, l3, l4];
                    let oracle = diagram_cumulant_oracle(&ls, &spec).unwrap();
                    let (paths, _) = reduced_basis(&ls).unwrap();
                    let mut values = Vec::with_capacity(paths.len());
                    for p in &paths {
                        let v1 = chi2_trispectrum_p4(ls, p[0], &spec, 1).unwrap();
                        let v2 = chi2_trispectrum_p4(ls, p[0], &spec, 2).unwrap();
                        scaling &= v2 == 2.0 * v1;
                        values.push(v1);
                    }
                    let model = synthesize_reduced(&ls, &values).unwrap();
                    tri = tri.max((&oracle.entries - &model.entries).iter().map(|z| z.norm()).fold(0.0, f64::max));
                }
            }
        }
    }
    outcome(
        bi < 1e-9 && tri < 1e-9 && scaling,
        format!("bispectrum max error {bi:.2e}, trispectrum max error {tri:.2e}, nu-scaling exact: {scaling}"),
    )
}

fn sachs_wolfe_oracle(ls: [i32; 3], spec: &PowerSpectrum, f: f64) -> f64 {
    let mut total = diagram_cumulant_oracle(&ls, spec).unwrap().entries * Complex64::new(f.powi(3), 0.0);
    for q in 0..3 {
        let mut kinds = [RowKind::Linear; 3];
        kinds[q] = RowKind::Quadratic;
        total += diagram_cumulant_mixed(&kinds, &ls, spec).unwrap().entries * Complex64::new(f, 0.0);
    }
    extract_reduced(&PolyspectrumVector::new(ls.to_vec(), total).unwrap()).unwrap().values[0]
}

fn criterion_8() -> Outcome {
    let band = 8;
    let f = 0.1;
    let spec = decay(band);
    let model = FieldModel::new(ModelVariant::SachsWolfe(f), spec.clone()).unwrap();
    let targets = [[2, 2, 2], [2, 3, 3]];
    let est = mc_moment_polyspectra(
        &model,
        &targets.iter().map(|t| t.to_vec()).collect::<Vec<_>>(),
        band,
        100_000,
        &SeedSpec::new(808),
    )
    .unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (t, e) in targets.iter().zip(&est) {
        let analytic = bispectrum_sachs_wolfe(t[0], t[1], t[2], &spec, f);
        let oracle = sachs_wolfe_oracle(*t, &spec, f);
        let r = e.reduced.as_ref().unwrap();
        let z = (r.values[0] - analytic) / r.std_err[0];
        ok &= z.abs() <= 5.0 && (oracle - analytic).abs() < 1e-9;
        parts.push(format!(
            "{t:?}: analytic {analytic:.6e}, MC {:.6e} (z {z:.2}), oracle diff {:.1e}",
            r.values[0],
            (oracle - analytic).abs()
        ));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_9() -> Outcome {
    let spec = decay(3);
    let model = FieldModel::new(ModelVariant::ChiSquare(1), spec).unwrap();
    let mut triples = Vec::new();
    for l1 in 0..=3 {
        for l2 in l1..=3 {
            for l3 in l2..=3 {
                triples.push(vec![l1, l2, l3]);
            }
        }
    }
    let est = mc_moment_polyspectra(&model, &triples, 3, 100_000, &SeedSpec::new(909)).unwrap();
    let mut ok = true;
    let mut worst = 0.0f64;
    for e in &est {
        let d = e.isotropy.unwrap();
        ok &= d.residual <= 5.0 * d.propagated_se;
        if d.propagated_se > 0.0 {
            worst = worst.max(d.residual / d.propagated_se);
        }
    }
    outcome(
        ok,
        format!("{} triples, max residual / propagated SE {worst:.2}", triples.len()),
    )
}

fn criterion_10() -> Outcome {
    let lmax = 2;
    let spec = PowerSpectrum::flat(lmax);
    let h = precompute_h(lmax, &spec).unwrap();
    let probes = [(1, 0, 1, 0, 2, 0), (1, 1, 1, 0, 2, 1), (2, 1, 2, -1, 2, 0)];
    let b = 100_000;
    let mut hits = [0usize; 3];
    let mut worst_imag = 0.0f64;
    let base = SeedSpec::new(1010);
    for run in 0..100 {
        let store = build_replicates(lmax, &spec, b, &base.child(run)).unwrap();
        for (k, &(l1, m1, l2, m2, l3, m3)) in probes.iter().enumerate() {
            let e = mc_estimate_cg(l1, m1, l2, m2, l3, m3, &store, &h).unwrap();
            if (e.estimate - cg(l1, m1, l2, m2, l3, m3)).abs() < 4.0 * e.std_err {
                hits[k] += 1;
            }
            worst_imag = worst_imag.max(e.imag.abs() / e.std_err);
        }
    }
    let seed = base.child(1000);
    let small = build_replicates(lmax, &spec, b, &seed).unwrap();
    let large = build_replicates(lmax, &spec, 4 * b, &seed.child(1)).unwrap();
    let se1 = mc_estimate_cg(1, 0, 1, 0, 2, 0, &small, &h).unwrap().std_err;
    let se4 = mc_estimate_cg(1, 0, 1, 0, 2, 0, &large, &h).unwrap().std_err;
    let ratio = se4 / se1;
    outcome(
        hits.iter().all(|&c| c >= 95) && (0.4..=0.6).contains(&ratio),
        format!("runs within 4 SE per probe {hits:?} of 100, SE(4B)/SE(B) = {ratio:.3}, max imaginary |z| {worst_imag:.2}"),
    )
}

fn criterion_11() -> Outcome {
    let paths: Vec<Vec<i32>> = coupling_paths(&[1, 1, 1]).unwrap().into_iter().map(|p| p.lambdas).collect();
    let want = vec![
        vec![0, 1],
        vec![1, 0],
        vec![1, 1],
        vec![1, 2],
        vec![2, 1],
        vec![2, 2],
        vec![2, 3],
    ];
    let e = e_matrix(&[1, 1, 1]).unwrap();
    let diag_ok = (0..e.nrows()).all(|i| (0..e.ncols()).all(|j| e[(i, j)] == if i == 3 && j == 3 { 1.0 } else { 0.0 }));
    let bell = [1, 2, 5, 15, 52, 203, 877, 4140];
    let bell_ok = (1..=8).all(|n| partitions(n).unwrap().len() == bell[n - 1]);
    let p = SetPartition::new(vec![vec![1, 3], vec![2, 5], vec![4, 6]]).unwrap();
    let perm_ok = partition_permutation(&p) == vec![1, 3, 2, 5, 4, 6];
    outcome(
        paths == want && diag_ok && bell_ok && perm_ok,
        format!("paths {}, E diagonal {diag_ok}, Bell {bell_ok}, v^pi {perm_ok}", paths == want),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("CG unitarity", criterion_1),
        ("unitary equivalence of D products", criterion_2),
        ("isotropy projector", criterion_3),
        ("6j definition", criterion_4),
        ("spherical harmonic transform", criterion_5),
        ("Gaussian simulation", criterion_6),
        ("chi-square oracle equivalence", criterion_7),
        ("Sachs-Wolfe bispectrum", criterion_8),
        ("isotropy diagnostic", criterion_9),
        ("Monte Carlo CG compression", criterion_10),
        ("combinatorics", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {status}: {name} ({}; {:.1}s)",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
