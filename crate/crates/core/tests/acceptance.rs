//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::sync::Arc;
use std::time::Instant;

use npksd_core::experiment::{
    run_sweep, sweep_csv, ExperimentConfig, Method, ModelConfig, ObservedConfig, SweepAxis, SweepGrid, SweepRow,
};
use npksd_core::generators::{exact_conditional, exact_score, sample, GaussianMixture, GeneratorSpec};
use npksd_core::kernels::{kernel_partials, GaussianKernel, KernelConfig};
use npksd_core::probe::{convergence_probe, ProbeSettings};
use npksd_core::rng::{stream, Rng};
use npksd_core::score::{fit_score_matching, score_component, ScoreBasis, ScoreField, SummaryStatistic};
use npksd_core::stein::{joint_stein_kernel, ksd_u, ksd_v, stein_kernel, CoordinateWeights, QuadraticForm};
use npksd_core::testing::{npksd_test, AggregateConfig, TestConfig};
use npksd_core::SampleMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rate(rows: &[SweepRow], method: Method, axis: f64) -> f64 {
    rows.iter()
        .find(|r| r.method == method && r.axis == axis)
        .map(|r| r.rate_mean)
        .expect("sweep row present")
}

fn gvd_sweep(values: Vec<f64>, methods: Vec<Method>, seed: u64) -> ExperimentConfig {
    let mut test = TestConfig::new(100, 500, 20, 200);
    test.seed = seed;
    ExperimentConfig {
        id: "gvd".into(),
        model: ModelConfig::Gvd { dim: 3 },
        observed: ObservedConfig::Perturbed,
        perturbation: 0.0,
        methods,
        test,
        aggregate: AggregateConfig::default(),
        sweep: SweepGrid {
            axis: SweepAxis::Perturbation,
            values,
        },
        trials: 100,
        rounds: 1,
        output_dir: None,
    }
}

fn criterion_1() -> Outcome {
    let rows = run_sweep(&gvd_sweep(vec![0.0], vec![Method::Npksd, Method::NpksdMean], 101)).unwrap();
    let a = rate(&rows, Method::Npksd, 0.0);
    let b = rate(&rows, Method::NpksdMean, 0.0);
    let ok = |r: f64| (0.01..=0.10).contains(&r);
    check(ok(a) && ok(b), format!("npksd {a:.2}, npksd_mean {b:.2}; required in [0.01, 0.10]"))
}

fn criterion_2() -> Outcome {
    let grid = vec![0.0, 0.1, 0.2, 0.3, 0.4];
    let rows = run_sweep(&gvd_sweep(grid.clone(), vec![Method::Npksd], 202)).unwrap();
    let rates: Vec<f64> = grid.iter().map(|&v| rate(&rows, Method::Npksd, v)).collect();
    let monotone = rates.windows(2).all(|w| w[1] >= w[0] - 0.08);
    let lift = rates[4] - rates[1];
    check(
        monotone && lift >= 0.2,
        format!("rates {rates:?}; non-decreasing within 0.08: {monotone}; rate(0.4) - rate(0.1) = {lift:.2} (need >= 0.2)"),
    )
}

fn criterion_3() -> Outcome {
    let mut test = TestConfig::new(50, 20, 1, 200);
    test.seed = 303;
    let cfg = ExperimentConfig {
        id: "sample-size".into(),
        model: ModelConfig::Gvd { dim: 3 },
        observed: ObservedConfig::Perturbed,
        perturbation: 0.0,
        methods: vec![Method::Mmd, Method::Mmdagg, Method::Ksd],
        test,
        aggregate: AggregateConfig::default(),
        sweep: SweepGrid {
            axis: SweepAxis::GeneratorSize,
            values: vec![20.0, 1000.0],
        },
        trials: 100,
        rounds: 1,
        output_dir: None,
    };
    let rows = run_sweep(&cfg).unwrap();
    let mmd_small = rate(&rows, Method::Mmd, 20.0);
    let mmd_large = rate(&rows, Method::Mmd, 1000.0);
    let agg = [rate(&rows, Method::Mmdagg, 20.0), rate(&rows, Method::Mmdagg, 1000.0)];
    let ksd = [rate(&rows, Method::Ksd, 20.0), rate(&rows, Method::Ksd, 1000.0)];
    let parts = [
        ("mmd@20 <= 0.10", mmd_small <= 0.10),
        ("mmd@1000 >= 0.80", mmd_large >= 0.80),
        ("mmdagg <= 0.10", agg.iter().all(|&r| r <= 0.10)),
        ("ksd <= 0.12", ksd.iter().all(|&r| r <= 0.12)),
    ];
    let failed: Vec<&str> = parts.iter().filter(|p| !p.1).map(|p| p.0).collect();
    check(
        failed.is_empty(),
        format!(
            "mmd {mmd_small:.2} -> {mmd_large:.2}, mmdagg {:.2} / {:.2}, ksd {:.2} / {:.2}; failed: {failed:?}",
            agg[0], agg[1], ksd[0], ksd[1]
        ),
    )
}

fn random_point(rng: &mut Rng, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.sample::<f64, _>(StandardNormal) * 1.5).collect()
}

fn criterion_4() -> Outcome {
    let target = Arc::new(GaussianMixture::gaussian(vec![0.0, 0.0], vec![1.0, 0.5, 0.5, 1.0]).unwrap());
    let spec = GeneratorSpec::Mixture(target);
    let joint = exact_score(&spec).unwrap();
    let cond = exact_conditional(&spec, SummaryStatistic::Identity).unwrap();
    let kernel = GaussianKernel::new(1.0).unwrap();
    let w = CoordinateWeights::uniform(2);
    let mut rng = stream(404, "acceptance", &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x = random_point(&mut rng, 2);
        let y = random_point(&mut rng, 2);
        for form in [QuadraticForm::Scalar, QuadraticForm::Diagonal] {
            let averaged = stein_kernel(&x, &y, &cond, &w, &kernel, form).unwrap();
            let full = joint_stein_kernel(&x, &y, &joint, &kernel, form).unwrap();
            worst = worst.max((averaged - full / 4.0).abs());
        }
    }
    check(worst <= 1e-10, format!("max |averaged - joint/4| = {worst:.2e} over 100 pairs (tol 1e-10)"))
}

fn probe_settings(ns: Vec<usize>, bs: Vec<usize>, inject_exact: bool) -> ProbeSettings {
    ProbeSettings {
        observed_size: 100,
        generator_sizes: ns,
        resample_sizes: bs,
        repetitions: 20,
        seed: 505,
        statistic: SummaryStatistic::Identity,
        basis: ScoreBasis::default(),
        ridge: 1e-4,
        form: QuadraticForm::Scalar,
        kernel: KernelConfig::median_heuristic(),
        inject_exact,
    }
}

fn criterion_5() -> Outcome {
    let target = GeneratorSpec::gvd(3, 0.0).unwrap();
    let by_b = convergence_probe(&target, &probe_settings(vec![100_000], vec![25, 100, 400], true)).unwrap();
    let gaps_b: Vec<f64> = by_b.iter().map(|r| r.mean_gap).collect();
    let ratios = [gaps_b[0] / gaps_b[1], gaps_b[1] / gaps_b[2]];
    let by_n = convergence_probe(&target, &probe_settings(vec![1_000, 10_000, 100_000], vec![10_000], false)).unwrap();
    let gaps_n: Vec<f64> = by_n.iter().map(|r| r.mean_gap).collect();
    let b_ok = ratios.iter().all(|&r| r >= 1.5);
    let n_ok = gaps_n.windows(2).all(|w| w[1] <= w[0]);
    check(
        b_ok && n_ok,
        format!(
            "B gaps {:?} (ratios {:.2}, {:.2}, need >= 1.5); N gaps {:?} (non-increasing: {n_ok})",
            gaps_b.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>(),
            ratios[0],
            ratios[1],
            gaps_n.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>(),
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = stream(606, "acceptance", &[]);
    let n = 100_000;
    let one_d = SampleMatrix::new(n, 1, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let basis = ScoreBasis::new(1).unwrap();
    let m1 = fit_score_matching(&one_d, SummaryStatistic::Identity, basis, 1e-6).unwrap();
    let t1 = &m1.coefficients[0];
    let ok1 = (t1[0] - 0.0).abs() <= 0.05 && (t1[1] + 1.0).abs() <= 0.05;

    let spec = GeneratorSpec::Mixture(Arc::new(
        GaussianMixture::gaussian(vec![0.0, 0.0], vec![1.0, 0.5, 0.5, 1.0]).unwrap(),
    ));
    let bi = sample(&spec, n, &mut rng).unwrap();
    let m2 = fit_score_matching(&bi, SummaryStatistic::Identity, basis, 1e-6).unwrap();
    let t2 = &m2.coefficients[0];
    let want = [0.0, -4.0 / 3.0, 2.0 / 3.0];
    let ok2 = t2.iter().zip(want).all(|(a, b)| (a - b).abs() <= 0.05);
    check(ok1 && ok2, format!("1-D theta {t1:.4?}; bivariate theta {t2:.4?}; tolerance 0.05"))
}

fn brute_stein(x: &[f64], y: &[f64], field: &ScoreField, sigma: f64) -> f64 {
    let cfg = KernelConfig::gaussian(sigma);
    let mut total = 0.0;
    for i in 0..x.len() {
        let p = kernel_partials(x, y, i, i, &cfg).unwrap();
        let sx = score_component(field, x, i).unwrap();
        let sy = score_component(field, y, i).unwrap();
        total += p.dxi_dyj + sx * p.dyj + sy * p.dxi + sx * sy * p.k;
    }
    total
}

fn criterion_7() -> Outcome {
    let spec = GeneratorSpec::mog(3, 0.3).unwrap();
    let field = exact_score(&spec).unwrap();
    let mut rng = stream(707, "acceptance", &[]);
    let pts: Vec<Vec<f64>> = (0..5).map(|_| random_point(&mut rng, 3)).collect();
    let s = SampleMatrix::from_rows(&pts).unwrap();
    let sigma = 1.2;
    let kernel = GaussianKernel::new(sigma).unwrap();
    let (mut v, mut u) = (0.0, 0.0);
    for a in 0..5 {
        for b in 0..5 {
            let h = brute_stein(&pts[a], &pts[b], &field, sigma);
            v += h;
            if a != b {
                u += h;
            }
        }
    }
    let dv = (ksd_v(&s, &field, &kernel).unwrap() - v / 25.0).abs();
    let du = (ksd_u(&s, &field, &kernel).unwrap() - u / 20.0).abs();

    let mut worst_rel: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..100 {
        let m = rng.random_range(1..5);
        let sigma = rng.random_range(0.5..2.0);
        let cfg = KernelConfig::gaussian(sigma);
        let k = GaussianKernel::new(sigma).unwrap();
        let x = random_point(&mut rng, m);
        let y = random_point(&mut rng, m);
        let (i, j) = (rng.random_range(0..m), rng.random_range(0..m));
        let p = kernel_partials(&x, &y, i, j, &cfg).unwrap();
        let bump = |v: &[f64], idx: usize, d: f64| {
            let mut v = v.to_vec();
            v[idx] += d;
            v
        };
        let fd_x = (k.eval(&bump(&x, i, h), &y).unwrap() - k.eval(&bump(&x, i, -h), &y).unwrap()) / (2.0 * h);
        let fd_y = (k.eval(&x, &bump(&y, j, h)).unwrap() - k.eval(&x, &bump(&y, j, -h)).unwrap()) / (2.0 * h);
        let dx_at = |y: &[f64]| kernel_partials(&x, y, i, j, &cfg).unwrap().dxi;
        let fd_xy = (dx_at(&bump(&y, j, h)) - dx_at(&bump(&y, j, -h))) / (2.0 * h);
        for (a, b) in [(p.dxi, fd_x), (p.dyj, fd_y), (p.dxi_dyj, fd_xy)] {
            worst_rel = worst_rel.max((a - b).abs() / a.abs().max(1e-3));
        }
    }
    check(
        dv <= 1e-10 && du <= 1e-10 && worst_rel <= 1e-5,
        format!("|ksd_v - oracle| {dv:.1e}, |ksd_u - oracle| {du:.1e} (tol 1e-10); worst partial rel err {worst_rel:.1e} (tol 1e-5)"),
    )
}

fn criterion_8() -> Outcome {
    let mut test = TestConfig::new(100, 500, 20, 200);
    test.seed = 808;
    let cfg = ExperimentConfig {
        id: "mog-resample".into(),
        model: ModelConfig::Mog { dim: 40, means: None },
        observed: ObservedConfig::Perturbed,
        perturbation: 0.5,
        methods: vec![Method::NpksdMean],
        test,
        aggregate: AggregateConfig::default(),
        sweep: SweepGrid {
            axis: SweepAxis::ResampleSize,
            values: vec![20.0, 40.0],
        },
        trials: 100,
        rounds: 1,
        output_dir: None,
    };
    let rows = run_sweep(&cfg).unwrap();
    let (a, b) = (rate(&rows, Method::NpksdMean, 20.0), rate(&rows, Method::NpksdMean, 40.0));
    check((a - b).abs() <= 0.1, format!("B=20 {a:.2}, B=40 {b:.2}; |difference| <= 0.1"))
}

fn criterion_9() -> Outcome {
    let mut test = TestConfig::new(100, 500, 2, 200);
    test.seed = 909;
    let cfg = ExperimentConfig {
        id: "sgld".into(),
        model: ModelConfig::Sgld {
            target: Box::new(ModelConfig::Gvd { dim: 2 }),
            step: Some(0.01),
            burn_in: Some(1000),
            thinning: Some(100),
        },
        observed: ObservedConfig::Model {
            model: ModelConfig::Gvd { dim: 2 },
        },
        perturbation: 0.0,
        methods: vec![Method::NpksdMean],
        test,
        aggregate: AggregateConfig::default(),
        sweep: SweepGrid {
            axis: SweepAxis::Perturbation,
            values: vec![0.0],
        },
        trials: 100,
        rounds: 1,
        output_dir: None,
    };
    let r = rate(&run_sweep(&cfg).unwrap(), Method::NpksdMean, 0.0);
    check(r <= 0.15, format!("rejection rate {r:.2} (need <= 0.15)"))
}

fn criterion_10() -> Outcome {
    let mut cfg = gvd_sweep(vec![0.0, 0.3], vec![Method::Npksd, Method::Ksd, Method::Mmdagg], 1010);
    cfg.trials = 10;
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let first = single.install(|| sweep_csv(&run_sweep(&cfg).unwrap()));
    let second = sweep_csv(&run_sweep(&cfg).unwrap());

    let generator = GeneratorSpec::mog(3, 0.0).unwrap();
    let observed = sample(&GeneratorSpec::mog(3, 0.3).unwrap(), 100, &mut stream(1010, "observed", &[])).unwrap();
    let mut test = TestConfig::new(100, 500, 20, 200);
    test.seed = 1010;
    let a = single.install(|| npksd_test(&observed, &generator, &test).unwrap());
    let b = npksd_test(&observed, &generator, &test).unwrap();
    let same_report = a.statistic.to_bits() == b.statistic.to_bits()
        && a.null_draws == b.null_draws
        && a.reject == b.reject
        && a.p_value == b.p_value;
    check(
        first == second && same_report,
        format!("sweep CSV identical: {}; report identical: {same_report}", first == second),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 type-I control of NP-KSD variants", criterion_1),
        ("2 power grows with variance perturbation", criterion_2),
        ("3 sample-size behaviour of MMD, MMDAgg, KSD", criterion_3),
        ("4 averaged vs joint Stein kernel", criterion_4),
        ("5 convergence rate in B and N", criterion_5),
        ("6 score-matching oracle", criterion_6),
        ("7 brute-force statistics and partials", criterion_7),
        ("8 re-sample size economy", criterion_8),
        ("9 Langevin sampler near level", criterion_9),
        ("10 determinism", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.split(' ').next() == Some(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let out = run();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        if !out.pass {
            failures += 1;
        }
        println!("{verdict} criterion {name}: {} [{:.1}s]", out.detail, started.elapsed().as_secs_f64());
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
