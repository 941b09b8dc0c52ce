use std::collections::HashMap;

use isospec::angular_coeffs::cg;
use isospec::coupling::{dimension, invariant_columns, linear_index, multi_index};
use isospec::random_fields::{FieldModel, ModelVariant, PowerSpectrum, SeedSpec};
use isospec::spectra::*;
use nalgebra::DVector;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inverse_square(band: usize) -> PowerSpectrum {
    PowerSpectrum::new((0..=band).map(|l| 1.0 / ((l + 1) * (l + 1)) as f64).collect()).unwrap()
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn parity(k: i32) -> f64 {
    if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 }
}

#[test]
fn partition_examples() {
    let bell = [1, 2, 5, 15, 52, 203, 877, 4140];
    for (n, b) in (1..=8).zip(bell) {
        let ps = partitions(n).unwrap();
        assert_eq!(ps.len(), b);
        let mut seen = std::collections::HashSet::new();
        for p in &ps {
            assert_eq!(p.size(), n);
            assert!(seen.insert(p.clone()));
        }
    }
    assert!(partitions(0).is_err());
    assert!(partitions(9).is_err());

    let p = SetPartition::new(vec![vec![1, 3], vec![5, 4], vec![2]]).unwrap();
    assert_eq!(p.blocks(), &[vec![1, 3], vec![2], vec![4, 5]]);
    assert!(SetPartition::new(vec![vec![1, 2], vec![2, 3]]).is_err());
    assert!(SetPartition::new(vec![vec![1, 4]]).is_err());

    let p = SetPartition::new(vec![vec![1, 3], vec![2, 5], vec![4, 6]]).unwrap();
    assert_eq!(partition_permutation(&p), vec![1, 3, 2, 5, 4, 6]);
    let singles = SetPartition::new((1..=4).map(|i| vec![i]).collect()).unwrap();
    assert_eq!(partition_permutation(&singles), vec![1, 2, 3, 4]);
    let whole = SetPartition::new(vec![vec![1, 2, 3, 4]]).unwrap();
    assert_eq!(partition_permutation(&whole), vec![1, 2, 3, 4]);
}

#[test]
fn gaussian_moment_polyspectra() {
    let s = PowerSpectrum::parametric(1.0, 1.0, 3).unwrap();
    let model = FieldModel::new(ModelVariant::Gaussian, s.clone()).unwrap();
    let ls_list = vec![vec![1, 2, 3], vec![2, 2], vec![3, 3], vec![1, 2]];
    let est = mc_moment_polyspectra(&model, &ls_list, 3, 8000, &SeedSpec::new(17)).unwrap();
    for e in &est {
        let se = e.moment.std_err.as_ref().unwrap();
        let ls = &e.moment.ls;
        for (i, (z, sd)) in e.moment.entries.iter().zip(se.iter()).enumerate() {
            let ms = multi_index(ls, i);
            let want = if ls.len() == 2 && ls[0] == ls[1] && ms[0] == -ms[1] {
                parity(ms[0]) * s.get(ls[0] as usize)
            } else {
                0.0
            };
            assert!((z.re - want).abs() <= 5.0 * sd.re + 1e-14, "{ls:?} {ms:?}: {} vs {want}", z.re);
            assert!(z.im.abs() <= 5.0 * sd.im + 1e-14, "{ls:?} {ms:?}");
        }
    }
    // reduced power spectrum of a Gaussian pair is C_l
    for e in &est[1..3] {
        let r = e.reduced.as_ref().unwrap();
        let l = e.moment.ls[0] as usize;
        assert!((r.values[0] - s.get(l)).abs() <= 5.0 * r.std_err[0]);
    }
}

#[test]
fn moment_estimates_ignore_thread_count() {
    let model = FieldModel::new(ModelVariant::SachsWolfe(0.3), inverse_square(3)).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            mc_moment_polyspectrum(&model, &[1, 2, 2], 3, 3000, &SeedSpec::new(5)).unwrap()
        })
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.moment, b.moment);
    assert_eq!(a.reduced, b.reduced);
}

/// Scalar moments of a table keyed by block, every block of size k mapped
/// to `m[k]`.
fn scalar_table(n: usize, m: &[f64]) -> MomentTable {
    let mut t = MomentTable::new();
    for p in partitions(n).unwrap() {
        for b in p.blocks() {
            t.insert(b.clone(), DVector::from_element(1, c(m[b.len()])));
        }
    }
    t
}

#[test]
fn scalar_cumulants() {
    // centered law with m2 = 2, m3 = 0.5, m4 = 13
    let m = [1.0, 0.0, 2.0, 0.5, 13.0];
    let k4 = cumulant_from_moments(&[0, 0, 0, 0], &scalar_table(4, &m)).unwrap();
    assert!((k4.entries[0].re - (13.0 - 3.0 * 4.0)).abs() < 1e-12);
    let k3 = cumulant_from_moments(&[0, 0, 0], &scalar_table(3, &m)).unwrap();
    assert!((k3.entries[0].re - 0.5).abs() < 1e-12);
    let k2 = cumulant_from_moments(&[0, 0], &scalar_table(2, &m)).unwrap();
    assert!((k2.entries[0].re - 2.0).abs() < 1e-12);

    // exponential law: moments k!, cumulants (k-1)!
    let fact = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0];
    for (n, want) in [(2, 1.0), (3, 2.0), (4, 6.0), (5, 24.0), (6, 120.0)] {
        let k = cumulant_from_moments(&vec![0; n], &scalar_table(n, &fact)).unwrap();
        assert!((k.entries[0].re - want).abs() < 1e-9, "n = {n}");
    }
    // Gaussian: every cumulant above the second vanishes
    let gauss = [1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0];
    for n in 3..=6 {
        let k = cumulant_from_moments(&vec![0; n], &scalar_table(n, &gauss)).unwrap();
        assert!(k.entries[0].norm() < 1e-12);
    }
    let mut missing = scalar_table(3, &m);
    missing.remove(&vec![1, 2]);
    assert!(cumulant_from_moments(&[0, 0, 0], &missing).is_err());
}

#[test]
fn centered_low_order_cumulants_equal_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ls = [1, 2, 1];
    let mut t = MomentTable::new();
    for p in partitions(3).unwrap() {
        for b in p.blocks() {
            let bl: Vec<i32> = b.iter().map(|&i| ls[i - 1]).collect();
            let v = if b.len() == 1 {
                DVector::zeros(dimension(&bl))
            } else {
                DVector::from_fn(dimension(&bl), |_, _| Complex64::new(rng.gen(), rng.gen()))
            };
            t.insert(b.clone(), v);
        }
    }
    let k = cumulant_from_moments(&ls, &t).unwrap();
    assert!(k.entries.iter().zip(t[&vec![1, 2, 3]].iter()).all(|(a, b)| (a - b).norm() < 1e-14));
}

/// Joint moments that factor over `{1, 2}` and `{3, 4}` must give a zero
/// fourth cumulant.
#[test]
fn independent_blocks_have_zero_cumulant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ls = [1, 2, 1, 1];
    let group_a = [1usize, 2];
    let mut own: HashMap<Vec<usize>, Vec<Complex64>> = HashMap::new();
    own.insert(vec![], vec![c(1.0)]);
    for sub in [vec![1], vec![2], vec![1, 2], vec![3], vec![4], vec![3, 4]] {
        let bl: Vec<i32> = sub.iter().map(|&i| ls[i - 1]).collect();
        own.insert(sub, (0..dimension(&bl)).map(|_| Complex64::new(rng.gen(), rng.gen())).collect());
    }
    let mut t = MomentTable::new();
    for p in partitions(4).unwrap() {
        for b in p.blocks() {
            let bl: Vec<i32> = b.iter().map(|&i| ls[i - 1]).collect();
            let (ia, ib): (Vec<usize>, Vec<usize>) = b.iter().partition(|i| group_a.contains(i));
            let v = DVector::from_fn(dimension(&bl), |idx, _| {
                let ms = multi_index(&bl, idx);
                let pick = |sub: &[usize]| {
                    let sl: Vec<i32> = sub.iter().map(|&i| ls[i - 1]).collect();
                    let sm: Vec<i32> = sub.iter().map(|&i| ms[b.iter().position(|&x| x == i).unwrap()]).collect();
                    own[sub][if sub.is_empty() { 0 } else { linear_index(&sl, &sm) }]
                };
                pick(&ia) * pick(&ib)
            });
            t.insert(b.clone(), v);
        }
    }
    let k = cumulant_from_moments(&ls, &t).unwrap();
    assert!(k.norm() < 1e-12, "{}", k.norm());
}

#[test]
fn eigenvector_residual_examples() {
    let ls = [1, 2, 1];
    let (_, q) = invariant_columns(&ls).unwrap();
    let v = PolyspectrumVector::from_real(ls.to_vec(), &q.column(0).into_owned()).unwrap();
    assert!(eigenvector_residual(&v).unwrap() < 1e-10);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut x = DVector::from_fn(dimension(&ls), |_, _| rng.gen::<f64>() - 0.5);
    for k in 0..q.ncols() {
        let col = q.column(k);
        let p = col.dot(&x);
        x -= col * p;
    }
    let v = PolyspectrumVector::from_real(ls.to_vec(), &x).unwrap();
    assert!((eigenvector_residual(&v).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn chi_square_moments_are_isotropic() {
    let model = FieldModel::new(ModelVariant::ChiSquare(1), PowerSpectrum::flat(2)).unwrap();
    let mut ls_list = Vec::new();
    for l1 in 0..=3 {
        for l2 in l1..=3 {
            for l3 in l2..=3 {
                ls_list.push(vec![l1, l2, l3]);
            }
        }
    }
    let est = mc_moment_polyspectra(&model, &ls_list, 2, 4000, &SeedSpec::new(23)).unwrap();
    for e in est {
        let iso = e.isotropy.unwrap();
        assert!(iso.residual <= 5.0 * iso.propagated_se, "{:?}: {iso:?}", e.moment.ls);
    }
}

#[test]
fn extract_reduced_examples() {
    let ls = [2, 1, 2];
    let v = DVector::from_fn(dimension(&ls), |i, _| {
        let ms = multi_index(&ls, i);
        parity(ms[2]) * 2.5 * cg(2, ms[0], 1, ms[1], 2, -ms[2])
    });
    let r = extract_reduced(&PolyspectrumVector::from_real(ls.to_vec(), &v).unwrap()).unwrap();
    assert_eq!(r.paths, vec![Vec::<i32>::new()]);
    assert!((r.values[0] - 2.5).abs() < 1e-12);
    assert!(r.residual < 1e-12);

    let ls = [1, 2, 2, 1];
    let (labels, _) = reduced_basis(&ls).unwrap();
    let want: Vec<f64> = (0..labels.len()).map(|k| 0.5 - k as f64).collect();
    let s = synthesize_reduced(&ls, &want).unwrap();
    let r = extract_reduced(&s).unwrap();
    assert_eq!(r.paths, labels);
    for (a, b) in r.values.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(r.residual < 1e-12);
    assert!(synthesize_reduced(&ls, &[1.0]).is_err());
}

#[test]
fn reduced_basis_norms() {
    for ls in [vec![2, 2], vec![1, 1, 2], vec![2, 2, 2], vec![1, 2, 2, 1], vec![1, 1, 1, 1, 2]] {
        let (_, cols) = reduced_basis(&ls).unwrap();
        let ln = *ls.last().unwrap();
        for (i, a) in cols.iter().enumerate() {
            for (j, b) in cols.iter().enumerate() {
                let want = if i == j { (2 * ln + 1) as f64 } else { 0.0 };
                assert!((a.dot(b) - want).abs() < 1e-12, "{ls:?}");
            }
        }
    }
    assert!(reduced_basis(&[1, 2]).unwrap().1.is_empty());
}

#[test]
fn sachs_wolfe_examples() {
    let s = inverse_square(8);
    assert_eq!(bispectrum_sachs_wolfe(2, 2, 2, &s, 0.0), 0.0);
    assert_eq!(bispectrum_sachs_wolfe(1, 2, 2, &s, 0.1), 0.0);
    assert_eq!(bispectrum_sachs_wolfe(1, 1, 3, &s, 0.1), 0.0);

    // third cumulant of a + f a(2), expanded multilinearly over row kinds
    let f: f64 = 0.1;
    let ls = [2, 2, 2];
    let mut total = diagram_cumulant_oracle(&ls, &s).unwrap().entries * c(f.powi(3));
    for q in 0..3 {
        let mut kinds = [RowKind::Linear; 3];
        kinds[q] = RowKind::Quadratic;
        total += diagram_cumulant_mixed(&kinds, &ls, &s).unwrap().entries * c(f);
    }
    let r = extract_reduced(&PolyspectrumVector::new(ls.to_vec(), total).unwrap()).unwrap();
    let want = bispectrum_sachs_wolfe(2, 2, 2, &s, f);
    assert!((r.values[0] - want).abs() < 1e-10, "{} vs {want}", r.values[0]);
    assert!(r.residual < 1e-12);
}

#[test]
fn sachs_wolfe_monte_carlo() {
    let s = inverse_square(4);
    let f = 0.5;
    let model = FieldModel::new(ModelVariant::SachsWolfe(f), s.clone()).unwrap();
    let e = mc_moment_polyspectrum(&model, &[2, 2, 2], 4, 20_000, &SeedSpec::new(42)).unwrap();
    let r = e.reduced.unwrap();
    let want = bispectrum_sachs_wolfe(2, 2, 2, &s, f);
    assert!((r.values[0] - want).abs() <= 5.0 * r.std_err[0], "{} vs {want} (se {})", r.values[0], r.std_err[0]);
}

#[test]
fn analytic_parity_and_scaling() {
    let s = inverse_square(3);
    let s2 = s.scale(2.0);
    for l1 in 0..=4 {
        for l2 in 0..=4 {
            for l3 in 0..=4 {
                let h = chi1_bispectrum_h(l1, l2, l3, &s);
                if (l1 + l2 + l3) % 2 == 1 {
                    assert_eq!(h, 0.0);
                    assert_eq!(bispectrum_sachs_wolfe(l1, l2, l3, &s, 0.3), 0.0);
                }
                assert!((chi1_bispectrum_h(l1, l2, l3, &s2) - 8.0 * h).abs() <= 1e-12 * h.abs().max(1.0));
            }
        }
    }
    for ls in [[1i32, 1, 1, 2], [2, 1, 1, 1], [0, 1, 2, 2]] {
        let lo = (ls[0] - ls[1]).abs().max((ls[2] - ls[3]).abs());
        for lambda in lo..=(ls[0] + ls[1]).min(ls[2] + ls[3]) {
            assert_eq!(chi2_trispectrum_p4(ls, lambda, &s, 1).unwrap(), 0.0);
        }
        assert!(chi2_trispectrum_p4(ls, 7, &s, 1).is_err());
    }
    for l in 0..=6 {
        assert!(quadratic_power_spectrum(l, &s) >= 0.0);
    }
}

#[test]
fn trispectrum_scales_with_nu() {
    let s = inverse_square(2);
    let base = chi2_trispectrum_p4([1, 1, 2, 2], 0, &s, 1).unwrap();
    assert!(base != 0.0);
    for nu in 2..5 {
        let v = chi2_trispectrum_p4([1, 1, 2, 2], 0, &s, nu).unwrap();
        assert!((v - nu as f64 * base).abs() < 1e-14 * v.abs().max(1.0));
    }
    assert!(chi2_trispectrum_p4([1, 1, 2, 2], 0, &s, 0).is_err());
}

#[test]
fn permutation_consistency_at_three() {
    for (ls, swapped) in [([1, 2, 2], [2, 1, 2]), ([1, 2, 3], [2, 1, 3]), ([2, 2, 2], [2, 2, 2])] {
        let s = synthesize_reduced(&ls, &[2.5]).unwrap();
        // entries with the first two multipoles exchanged
        let t = DVector::from_fn(dimension(&swapped), |i, _| {
            let ms = multi_index(&swapped, i);
            s.entries[linear_index(&ls, &[ms[1], ms[0], ms[2]])]
        });
        let r = extract_reduced(&PolyspectrumVector::new(swapped.to_vec(), t).unwrap()).unwrap();
        let sign = parity(ls[0] + ls[1] - ls[2]);
        assert!((r.values[0] - sign * 2.5).abs() < 1e-12, "{ls:?}");
        assert!(r.residual < 1e-12);
    }

    // a model bispectrum is symmetric under any permutation of equal-parity sums
    let s = inverse_square(3);
    let k = diagram_cumulant_oracle(&[1, 2, 3], &s).unwrap();
    let t = DVector::from_fn(dimension(&[2, 1, 3]), |i, _| {
        let ms = multi_index(&[2, 1, 3], i);
        k.entries[linear_index(&[1, 2, 3], &[ms[1], ms[0], ms[2]])]
    });
    let a = extract_reduced(&k).unwrap().values[0];
    let b = extract_reduced(&PolyspectrumVector::new(vec![2, 1, 3], t).unwrap()).unwrap().values[0];
    assert!((a - b).abs() < 1e-14 && a != 0.0);
}

#[test]
fn diagram_counts() {
    assert_eq!(gaussian_diagram_count(3, 2).unwrap(), 8);
    assert_eq!(gaussian_diagram_count(2, 3).unwrap(), 6);
    assert_eq!(gaussian_diagram_count(4, 2).unwrap(), 60);
    assert_eq!(gaussian_diagram_count(3, 1).unwrap(), 0);
    for (p, dfact) in [(2, 1), (4, 3), (6, 15), (8, 105)] {
        assert_eq!(gaussian_diagram_count(p, 1).unwrap(), dfact);
    }
    for q in 1..=4 {
        let fact: u128 = (1..=q as u128).product();
        assert_eq!(gaussian_diagram_count(2, q).unwrap(), fact);
    }
    assert_eq!(connected_diagram_count(6).unwrap(), 3840);
    for n in 2..=6 {
        // 2^{n-1} (n-1)! connected cycles through n quadratic rows
        let want = (1usize << (n - 1)) * (1..n).product::<usize>();
        assert_eq!(connected_diagram_count(n).unwrap(), want);
    }
}

#[test]
fn moment_identity_examples() {
    let s = PowerSpectrum::parametric(1.0, 1.5, 6).unwrap();
    let seed = SeedSpec::new(99);
    let gauss = FieldModel::new(ModelVariant::Gaussian, s.clone()).unwrap();
    let h2 = FieldModel::new(ModelVariant::HermiteSubordinated(vec![0.0, 1.0]), s.clone()).unwrap();
    for p in 2..=4 {
        let r = moment_identity_check(p, &gauss, 6, 50_000, &seed).unwrap();
        assert!(r.z_score().unwrap().abs() < 5.0, "{r:?}");
        let r = moment_identity_check(p, &h2, 6, 50_000, &seed).unwrap();
        assert!(r.z_score().unwrap().abs() < 5.0, "{r:?}");
    }
    let r = moment_identity_check(4, &h2, 6, 10, &seed).unwrap();
    assert_eq!(r.closed_form, Some(60.0));
    let mixed = FieldModel::new(ModelVariant::HermiteSubordinated(vec![1.0, 1.0]), s.clone()).unwrap();
    assert_eq!(moment_identity_check(3, &mixed, 6, 10, &seed).unwrap().closed_form, None);
    let chi = FieldModel::new(ModelVariant::ChiSquare(1), s).unwrap();
    assert!(moment_identity_check(3, &chi, 6, 10, &seed).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reduced_round_trip(ls in prop::collection::vec(0..3i32, 3..5), seed in any::<u64>()) {
        let (labels, _) = reduced_basis(&ls).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..labels.len()).map(|_| rng.gen::<f64>() - 0.5).collect();
        let s = synthesize_reduced(&ls, &vals).unwrap();
        let r = extract_reduced(&s).unwrap();
        prop_assert!(r.residual < 1e-12);
        for (a, b) in r.values.iter().zip(&vals) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let again = synthesize_reduced(&ls, &r.values).unwrap();
        prop_assert!((&again.entries - &s.entries).norm() < 1e-12);
        if !vals.is_empty() {
            prop_assert!(eigenvector_residual(&s).unwrap() < 1e-10);
        }
    }

    #[test]
    fn canonical_partitions(blocks in Just((1..=6usize).collect::<Vec<_>>()).prop_shuffle(), cuts in prop::collection::vec(any::<bool>(), 5)) {
        let mut parts = vec![Vec::new()];
        for (i, x) in blocks.iter().enumerate() {
            parts.last_mut().unwrap().push(*x);
            if i < 5 && cuts[i] {
                parts.push(Vec::new());
            }
        }
        let p = SetPartition::new(parts).unwrap();
        prop_assert!(partitions(6).unwrap().contains(&p));
        let perm = partition_permutation(&p);
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (1..=6).collect::<Vec<_>>());
        prop_assert_eq!(perm[0], 1);
    }
}
