//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails. Runs under `cargo test`; expect it to take minutes.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use pcsig::numlin::{fill_standard_normal, mix_seed, standard_normal, MaskedMatrix, Matrix, RngStream};
use pcsig::pipeline::{analyze_synthetic, AnalysisConfig};
use pcsig::report::AnalysisReport;
use pcsig::sigtest::{
    estimate_w, holm_bonferroni, normalize_eigenvalues, sample_null_spectra,
    test_reconstruction, SigTestConfig,
};
use pcsig::synthgen::{generate, scenario_grid_replicates, Scenario, SyntheticSpec};
use pcsig::vbpca::{fit, reconstruct, VbpcaConfig, VbpcaModel};
use rand::Rng;

const GRID_SEED: u64 = 2024;
const GRID_NULL_SAMPLES: usize = 500;
const GRID_REPLICATES: usize = 5;
const W8_REPLICATES: usize = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Synthetic runs keyed by data seed, shared between the grid criteria.
struct GridRuns {
    cfg: AnalysisConfig,
    done: HashMap<u64, usize>,
}

impl GridRuns {
    fn new() -> Self {
        GridRuns {
            cfg: AnalysisConfig {
                null_samples: GRID_NULL_SAMPLES,
                seed: 7,
                ..AnalysisConfig::default()
            },
            done: HashMap::new(),
        }
    }

    fn estimate(&mut self, spec: &SyntheticSpec) -> usize {
        if let Some(&w) = self.done.get(&spec.seed) {
            return w;
        }
        let w = analyze_synthetic(spec, &self.cfg).expect("grid analysis").w;
        self.done.insert(spec.seed, w);
        w
    }
}

fn grid(scenario: Scenario, replicates: usize) -> Vec<SyntheticSpec> {
    scenario_grid_replicates(scenario, GRID_SEED, replicates)
}

fn criterion_1(runs: &mut GridRuns) -> Outcome {
    let mut total = 0;
    let mut over = Vec::new();
    let mut hist: HashMap<(usize, usize), usize> = HashMap::new();
    for scenario in [Scenario::I, Scenario::II] {
        for spec in grid(scenario, GRID_REPLICATES) {
            let w = runs.estimate(&spec);
            total += 1;
            *hist.entry((spec.n_significant, w)).or_default() += 1;
            if w > spec.n_significant {
                over.push(format!("{scenario} {}x{} w={} -> {w}", spec.n_rows, spec.n_cols, spec.n_significant));
            }
        }
    }
    let mut hist: Vec<_> = hist.into_iter().collect();
    hist.sort();
    let hist: Vec<String> = hist.iter().map(|((w, e), c)| format!("w{w}->{e}:{c}")).collect();
    outcome(
        over.is_empty() && total == 280,
        format!("{} of {total} runs overestimate; estimates [{}]", over.len(), hist.join(" ")),
    )
}

fn criterion_2(runs: &mut GridRuns) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for scenario in [Scenario::I, Scenario::II] {
        let specs: Vec<_> = grid(scenario, GRID_REPLICATES).into_iter().filter(|s| s.n_significant == 2).collect();
        let misses = specs.iter().filter(|s| runs.estimate(s) != 2).count();
        pass &= misses <= 1;
        parts.push(format!("scenario {scenario}: {misses} misses in {}", specs.len()));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_3(runs: &mut GridRuns) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (p, lo, hi) in [(30, 4.5, 6.5), (55, 7.0, 8.0)] {
        let specs: Vec<_> = grid(Scenario::I, W8_REPLICATES)
            .into_iter()
            .filter(|s| s.n_cols == p && s.n_significant == 8)
            .collect();
        let ests: Vec<usize> = specs.iter().map(|s| runs.estimate(s)).collect();
        let mean = ests.iter().sum::<usize>() as f64 / ests.len() as f64;
        pass &= ests.len() == W8_REPLICATES && (lo..=hi).contains(&mean);
        parts.push(format!("150x{p}: mean {mean} (want [{lo}, {hi}]) from {ests:?}"));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_4() -> Outcome {
    let cfg = AnalysisConfig {
        seed: 11,
        ..AnalysisConfig::default()
    };
    let mut good = 0;
    let mut seen = Vec::new();
    for k in 0..10 {
        let spec = SyntheticSpec::new(414, 9, 1, mix_seed(414, k));
        let r: AnalysisReport = analyze_synthetic(&spec, &cfg).expect("seshat analog");
        let p1 = r.ranks[0].raw_p_display.clone().unwrap_or_default();
        let p2 = r.ranks.get(1).and_then(|row| row.adjusted_p);
        let ok = r.w == 1 && p1 == format!("< {}", 1.0 / cfg.null_samples as f64) && p2.is_some_and(|p| p >= 0.05);
        good += usize::from(ok);
        seen.push(format!("q={} w={} p1={p1} p2={}", r.q, r.w, p2.map_or("-".into(), |p| p.to_string())));
    }
    outcome(good >= 9, format!("{good}/10 runs match; [{}]", seen.join(", ")))
}

fn random_spd(rng: &mut impl Rng, q: usize, scale: f64) -> Matrix {
    let b = Matrix::from_fn(q, q, |_, _| rng.random_range(-1.0..1.0));
    let mut s = b.matmul(&b.transpose()).unwrap().scaled(scale);
    for k in 0..q {
        s[(k, k)] += 0.05 * scale;
    }
    s
}

/// Lower Cholesky factor, written out independently of the crate's solver.
fn chol(s: &Matrix) -> Matrix {
    let q = s.rows();
    let mut l = Matrix::zeros(q, q);
    for i in 0..q {
        for j in 0..=i {
            let sum: f64 = (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum();
            l[(i, j)] = if i == j { (s[(i, i)] - sum).sqrt() } else { (s[(i, j)] - sum) / l[(j, j)] };
        }
    }
    l
}

fn gaussian(mean: &[f64], l: &Matrix, z: &[f64]) -> Vec<f64> {
    (0..mean.len())
        .map(|i| mean[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>())
        .collect()
}

fn criterion_5() -> Outcome {
    const DRAWS: usize = 100_000;
    let mut worst: f64 = 0.0;
    for model_id in 0..20u64 {
        let mut rng = RngStream::new(5, model_id).rng();
        let q = rng.random_range(1..=3);
        let n = rng.random_range(2..=5);
        let p = rng.random_range(2..=5);
        let model = VbpcaModel {
            a_mean: Matrix::from_fn(p, q, |_, _| rng.random_range(-1.5..1.5)),
            a_cov: (0..p).map(|_| random_spd(&mut rng, q, 0.2)).collect(),
            y_mean: Matrix::from_fn(q, n, |_, _| rng.random_range(-1.5..1.5)),
            y_cov: (0..n).map(|_| random_spd(&mut rng, q, 0.2)).collect(),
            m_mean: (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
            m_var: (0..p).map(|_| rng.random_range(0.0..0.1)).collect(),
            noise_var: 0.1,
            a_prior_var: vec![1.0; q],
            m_prior_var: 1.0,
            cost_trace: vec![0.0],
        };
        let analytic = reconstruct(&model).expect("reconstruct").x_var;

        let la: Vec<Matrix> = model.a_cov.iter().map(chol).collect();
        let ly: Vec<Matrix> = model.y_cov.iter().map(chol).collect();
        let yt = model.y_mean.transpose();
        let mut sum = vec![0.0; n * p];
        let mut sum_sq = vec![0.0; n * p];
        let mut z = vec![0.0; (n + p) * q + p];
        for _ in 0..DRAWS {
            fill_standard_normal(&mut rng, &mut z);
            let a: Vec<Vec<f64>> = (0..p).map(|j| gaussian(model.a_mean.row(j), &la[j], &z[j * q..])).collect();
            let y: Vec<Vec<f64>> =
                (0..n).map(|i| gaussian(yt.row(i), &ly[i], &z[(p + i) * q..])).collect();
            for j in 0..p {
                let m = model.m_mean[j] + model.m_var[j].sqrt() * z[(n + p) * q + j];
                for i in 0..n {
                    let x = m + a[j].iter().zip(&y[i]).map(|(u, v)| u * v).sum::<f64>();
                    sum[i * p + j] += x;
                    sum_sq[i * p + j] += x * x;
                }
            }
        }
        for i in 0..n {
            for j in 0..p {
                let mean = sum[i * p + j] / DRAWS as f64;
                let var = (sum_sq[i * p + j] - DRAWS as f64 * mean * mean) / (DRAWS - 1) as f64;
                worst = worst.max((analytic[(i, j)] - var).abs() / var);
            }
        }
    }
    outcome(worst <= 0.05, format!("worst relative deviation {worst:.4} over 20 models"))
}

/// Holm adjustment in the style of R's `p.adjust(p, "holm")`: order, scale,
/// running maximum, cap at one, restore the input order.
fn reference_holm(p: &[f64]) -> Vec<f64> {
    let n = p.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut out = vec![0.0; n];
    let mut running = f64::NEG_INFINITY;
    for (i, &o) in order.iter().enumerate() {
        running = running.max((n - i) as f64 * p[o]);
        out[o] = running.min(1.0);
    }
    out
}

fn criterion_6() -> Outcome {
    // Scale invariance of the normalized eigenvalues.
    let mut rng = RngStream::new(6, 0).rng();
    let mut scale_err: f64 = 0.0;
    for _ in 0..200 {
        let len = rng.random_range(2..=20);
        let mut l: Vec<f64> = (0..len).map(|_| rng.random_range(1e-3..1e3)).collect();
        l.sort_by(|a, b| b.total_cmp(a));
        let base = normalize_eigenvalues(&l);
        let c = 10f64.powf(rng.random_range(-8.0..8.0));
        let scaled: Vec<f64> = l.iter().map(|v| v * c).collect();
        for (a, b) in normalize_eigenvalues(&scaled).iter().zip(&base) {
            scale_err = scale_err.max((a - b).abs() / b.abs().max(1.0));
        }
    }

    // Permutation invariance of w on a structured reconstruction.
    let (n, p) = (40, 15);
    let u = standard_normal(RngStream::new(6, 1), n * 2);
    let v = standard_normal(RngStream::new(6, 2), p * 2);
    let floor = standard_normal(RngStream::new(6, 3), n * p);
    let mean = Matrix::from_fn(n, p, |i, j| {
        0.3 * floor[i * p + j] + 4.0 * u[2 * i] * v[2 * j] + 2.0 * u[2 * i + 1] * v[2 * j + 1]
    });
    let recon = pcsig::PosteriorReconstruction {
        x_mean: mean,
        x_var: Matrix::from_fn(n, p, |_, _| 1.0),
    };
    let cfg = SigTestConfig {
        n_null_samples: 500,
        ..SigTestConfig::new(66)
    };
    let base = test_reconstruction(&recon, 10, &cfg).unwrap();
    let mut perm_ok = true;
    for k in 0..3 {
        let rows: Vec<usize> = (0..n).map(|i| (i * [3, 7, 9][k] + k) % n).collect();
        let cols: Vec<usize> = (0..p).map(|j| (j * 7 + k) % p).collect();
        let permuted = pcsig::PosteriorReconstruction {
            x_mean: recon.x_mean.permuted(&rows, &cols),
            x_var: recon.x_var.permuted(&rows, &cols),
        };
        perm_ok &= base.w >= 1 && test_reconstruction(&permuted, 10, &cfg).unwrap().w == base.w;
    }

    // Holm against the reference, family size equal to the vector length.
    let mut holm_mismatch = 0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=30);
        let mut raw: Vec<f64> = (0..len)
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>().powi(3) })
            .collect();
        let reference = reference_holm(&raw);
        raw.sort_by(f64::total_cmp);
        let mut expected = reference.clone();
        expected.sort_by(f64::total_cmp);
        if holm_bonferroni(&raw, len).unwrap() != expected {
            holm_mismatch += 1;
        }
    }

    outcome(
        scale_err <= 1e-12 && perm_ok && holm_mismatch == 0,
        format!(
            "scale error {scale_err:.1e}; permutation keeps w={} {perm_ok}; holm mismatches {holm_mismatch}/1000",
            base.w
        ),
    )
}

fn criterion_7() -> Outcome {
    let x = generate(&SyntheticSpec::new(150, 30, 2, 77)).unwrap();
    let model = fit(&x, &VbpcaConfig::new(12, 77)).unwrap();
    let recon = reconstruct(&model).unwrap();
    let mut positives = 0;
    for trial in 0..50 {
        let cfg = SigTestConfig {
            n_null_samples: GRID_NULL_SAMPLES,
            ..SigTestConfig::new(1000 + trial)
        };
        let mut nulls = sample_null_spectra(&recon, 12, &cfg).unwrap();
        let observed = nulls.remove(0);
        let res = estimate_w(&observed, &nulls, &cfg).unwrap();
        positives += usize::from(res.w >= 1);
    }
    let rate = positives as f64 / 50.0;
    outcome(rate <= 0.10, format!("false-positive rate {rate} ({positives}/50)"))
}

fn criterion_8() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for k in 1..=3 {
        let (n, p) = (50, 12);
        let a = Matrix::from_vec(p, k, standard_normal(RngStream::new(8, 2 * k as u64), p * k)).unwrap();
        let y = Matrix::from_vec(k, n, standard_normal(RngStream::new(8, 2 * k as u64 + 1), k * n)).unwrap();
        let truth = a.matmul(&y).unwrap().transpose();
        let x = MaskedMatrix::fully_observed(truth).unwrap();
        let model = fit(&x, &VbpcaConfig::new(k, 8)).unwrap();
        let mse = pcsig::numlin::frobenius_sq_masked(&x, &reconstruct(&model).unwrap().x_mean).unwrap()
            / x.observed_count() as f64;
        let trace_ok = model.final_cost() <= model.cost_trace[0];
        pass &= mse < 1e-4 && trace_ok && model.iterations() <= 80;
        parts.push(format!("k={k}: mse {mse:.1e}, {} iters", model.iterations()));
    }
    // The cost trace ends at or below its start on noisy data too.
    let mut traces = 0;
    for seed in 0..5 {
        let x = generate(&SyntheticSpec::new(60, 20, 3, seed)).unwrap();
        for q in [1, 3, 8, 20] {
            let model = fit(&x, &VbpcaConfig::new(q, seed)).unwrap();
            pass &= model.final_cost() <= model.cost_trace[0];
            traces += 1;
        }
    }
    parts.push(format!("{traces} noisy fits checked"));
    outcome(pass, parts.join("; "))
}

fn criterion_9() -> Outcome {
    let spec = SyntheticSpec::new(80, 20, 3, 99);
    let cfg = AnalysisConfig {
        null_samples: 300,
        seed: 99,
        ..AnalysisConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| analyze_synthetic(&spec, &cfg)).unwrap()
    };
    let a = run(1);
    let outputs = [a.to_json(), run(1).to_json(), run(2).to_json(), run(4).to_json()];
    let csv_same = a.to_csv() == run(3).to_csv();
    let same = outputs.iter().all(|o| o.as_bytes() == outputs[0].as_bytes());
    outcome(same && csv_same, format!("4 JSON reports identical: {same}; CSV identical: {csv_same}"))
}

fn main() -> ExitCode {
    // Listing requests from the test runner get an empty list.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut runs = GridRuns::new();
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        failed += usize::from(!o.pass);
        println!(
            "criterion {id} {name}: {} ({}) [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    };
    report(1, "non-overestimation", &mut || criterion_1(&mut runs));
    report(2, "low-w accuracy", &mut || criterion_2(&mut runs));
    report(3, "w=8 underestimation pattern", &mut || criterion_3(&mut runs));
    report(4, "seshat-analog baseline", &mut criterion_4);
    report(5, "posterior variance oracle", &mut criterion_5);
    report(6, "invariances", &mut criterion_6);
    report(7, "size control", &mut criterion_7);
    report(8, "vbpca recovery", &mut criterion_8);
    report(9, "determinism", &mut criterion_9);
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
