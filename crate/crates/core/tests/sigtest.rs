use pcsig::numlin::{standard_normal, Matrix, RngStream};
use pcsig::sigtest::{
    estimate_w, normalize_eigenvalues, sample_null_spectra, spectrum_of, test_reconstruction,
    SigTestConfig, Spectrum,
};
use pcsig::vbpca::PosteriorReconstruction;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn recon(mean: Matrix, var: Matrix) -> PosteriorReconstruction {
    PosteriorReconstruction {
        x_mean: mean,
        x_var: var,
    }
}

/// Three well separated components over a full-rank floor, plus a uniform variance.
fn structured(n: usize, p: usize, var: f64, seed: u64) -> PosteriorReconstruction {
    let u = standard_normal(RngStream::new(seed, 0), n * 3);
    let v = standard_normal(RngStream::new(seed, 1), p * 3);
    let floor = standard_normal(RngStream::new(seed, 2), n * p);
    let scales = [6.0, 3.0, 1.5];
    let mean = Matrix::from_fn(n, p, |i, j| {
        0.3 * floor[i * p + j] + (0..3).map(|k| scales[k] * u[i * 3 + k] * v[j * 3 + k]).sum::<f64>()
    });
    recon(mean, Matrix::from_fn(n, p, |_, _| var))
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
fn jacobi_eigvals(s: &Matrix) -> Vec<f64> {
    let n = s.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| s.row(i).to_vec()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - sn * akq;
                    a[k][q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - sn * aqk;
                    a[q][k] = sn * apk + c * aqk;
                }
            }
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    d.sort_by(|x, y| y.total_cmp(x));
    d
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn zero_variance_null_is_degenerate() {
    let r = structured(12, 8, 0.0, 3);
    let cfg = SigTestConfig {
        n_null_samples: 100,
        ..SigTestConfig::new(1)
    };
    let observed = spectrum_of(&r.x_mean, 6).unwrap();
    for s in sample_null_spectra(&r, 6, &cfg).unwrap() {
        assert_eq!(s, observed);
    }
}

#[test]
fn null_sampling_is_deterministic() {
    let r = structured(15, 10, 0.3, 4);
    let cfg = SigTestConfig {
        n_null_samples: 50,
        ..SigTestConfig::new(12)
    };
    let a = sample_null_spectra(&r, 5, &cfg).unwrap();
    assert_eq!(a.len(), 50);
    assert_eq!(a, sample_null_spectra(&r, 5, &cfg).unwrap());
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    assert_eq!(a, one.install(|| sample_null_spectra(&r, 5, &cfg)).unwrap());
    assert_eq!(a, three.install(|| sample_null_spectra(&r, 5, &cfg)).unwrap());
}

#[test]
fn null_median_matches_independent_simulation() {
    let (n, q, draws) = (20, 20, 2000);
    let r = recon(Matrix::zeros(n, n), Matrix::from_fn(n, n, |_, _| 1.0));
    let cfg = SigTestConfig::new(31);
    let ours = median(sample_null_spectra(&r, q, &cfg).unwrap().iter().map(|s| s.normalized[0]).collect());

    // Box-Muller on a different generator, Jacobi eigenvalues, normalization written out.
    let mut rng = StdRng::seed_from_u64(0xC0FFEE);
    let mut firsts = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut z = Vec::with_capacity(n * n);
        while z.len() < n * n {
            let u1: f64 = 1.0 - rng.random::<f64>();
            let u2: f64 = rng.random::<f64>();
            let r = (-2.0 * u1.ln()).sqrt();
            z.push(r * (2.0 * std::f64::consts::PI * u2).cos());
            z.push(r * (2.0 * std::f64::consts::PI * u2).sin());
        }
        let x = Matrix::from_vec(n, n, z).unwrap();
        let lam = jacobi_eigvals(&x.gram_rows());
        let tail: f64 = lam[..q - 1].iter().sum();
        firsts.push((q - 1) as f64 * lam[0] / tail);
    }
    let oracle = median(firsts);
    assert!((ours - oracle).abs() <= 0.02 * oracle, "ours {ours} oracle {oracle}");
}

#[test]
fn scale_invariance() {
    let r = structured(20, 12, 0.5, 8);
    let cfg = SigTestConfig {
        n_null_samples: 300,
        ..SigTestConfig::new(5)
    };
    let base = test_reconstruction(&r, 8, &cfg).unwrap();
    for c in [1e-3, 0.37, 4.0, 2.5e4] {
        let scaled = recon(r.x_mean.scaled(c), r.x_var.scaled(c * c));
        let res = test_reconstruction(&scaled, 8, &cfg).unwrap();
        for (a, b) in res.spectrum.normalized.iter().zip(&base.spectrum.normalized) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "c={c}: {a} vs {b}");
        }
        assert_eq!(res.w, base.w, "c={c}");
        assert_eq!(res.raw_p, base.raw_p, "c={c}");
    }
}

#[test]
fn row_permutation_keeps_w() {
    let r = structured(25, 10, 9.0, 9);
    let cfg = SigTestConfig {
        n_null_samples: 400,
        ..SigTestConfig::new(6)
    };
    let base = test_reconstruction(&r, 8, &cfg).unwrap();
    assert!(base.w >= 1);
    let rows: Vec<usize> = (0..25).map(|i| (i * 7 + 3) % 25).collect();
    let cols: Vec<usize> = (0..10).collect();
    let perm = recon(r.x_mean.permuted(&rows, &cols), r.x_var.permuted(&rows, &cols));
    let res = test_reconstruction(&perm, 8, &cfg).unwrap();
    for (a, b) in res.spectrum.lambdas.iter().zip(&base.spectrum.lambdas) {
        assert!((a - b).abs() <= 1e-9 * b.max(1.0));
    }
    assert_eq!(res.w, base.w);
}

fn spectrum_strategy() -> impl Strategy<Value = (Spectrum, Vec<Spectrum>)> {
    (4usize..9, 100usize..160).prop_flat_map(|(q, n)| {
        let one = prop::collection::vec(0.01f64..10.0, q).prop_map(|mut l| {
            l.sort_by(|a, b| b.total_cmp(a));
            Spectrum::from_lambdas(l)
        });
        (one.clone(), prop::collection::vec(one, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimate_w_postconditions((observed, nulls) in spectrum_strategy(), alpha in 0.01f64..0.3) {
        let cfg = SigTestConfig { n_null_samples: nulls.len(), alpha, seed: 0 };
        let res = estimate_w(&observed, &nulls, &cfg).unwrap();
        let n = nulls.len() as f64;
        prop_assert_eq!(res.raw_p.len(), res.adjusted_p.len());
        for (raw, adj) in res.raw_p.iter().zip(&res.adjusted_p) {
            prop_assert!(adj >= raw);
            let k = raw * n;
            prop_assert!((k - k.round()).abs() < 1e-9);
        }
        prop_assert!(res.adjusted_p.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(res.adjusted_p[..res.w].iter().all(|&p| p < alpha));
        if res.adjusted_p.len() > res.w {
            prop_assert!(res.adjusted_p[res.w] >= alpha);
            prop_assert_eq!(res.adjusted_p.len(), res.w + 1);
        }
        prop_assert!(res.raw_p.len() <= observed.q() - 2);
    }

    #[test]
    fn normalization_scale_invariant(l in prop::collection::vec(0.001f64..100.0, 2..12), c in 1e-6f64..1e6) {
        let mut l = l;
        l.sort_by(|a, b| b.total_cmp(a));
        let base = normalize_eigenvalues(&l);
        let scaled: Vec<f64> = l.iter().map(|v| v * c).collect();
        for (a, b) in normalize_eigenvalues(&scaled).iter().zip(&base) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        prop_assert_eq!(*base.last().unwrap(), 0.0);
    }
}
