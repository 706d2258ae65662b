//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! hard criterion fails.
//!
//! Criterion 7 reads `yacht.csv` and `energy.csv` (inputs then target as the
//! last column) from `$LATNKM_UCI_DIR`, default `<workspace>/data/uci`.

use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use latnkm::als::{fit_map_features, loss, TrainConfig};
use latnkm::cpd::{
    build_features, dense_weights, model_response, partial_response, CpdModel, FeatureMapSpec, FeatureSet,
};
use latnkm::data::gen_cubic;
use latnkm::experiment::{cmd_cv, cmd_eval, evaluate_posterior, fit_dataset, CvGrid, ExperimentConfig, RELATIVE_THRESHOLD_GRID};
use latnkm::hessian::{build_hessian, full_hessian, ggn_hessian, HessianVariant, DENSE_HESSIAN_CAP};
use latnkm::inference::{fit_map_stage, BayesConfig, GammaPosterior, Precision};
use latnkm::metrics::{coverage, default_levels, nll, rce, rce_from_table, rmse, wcpi};
use latnkm::oracle::{dense_features, finite_diff_gradient, finite_diff_hessian, FdConfig};
use latnkm::predictive::{grad_f, IntervalOptions, PredictiveDist, PredictiveMode};

enum Outcome {
    Pass(String),
    Fail(String),
    /// Soft criterion that did not hold; reported, not fatal.
    Note(String),
    /// Inputs unavailable in this environment.
    Blocked(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within_budget(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

fn random_instance(
    rng: &mut ChaCha8Rng,
    d: usize,
    i: usize,
    r: usize,
    n: usize,
) -> (CpdModel, FeatureSet, DVector<f64>) {
    let spec = FeatureMapSpec::unit_norm_polynomial(i);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let fs = build_features(&x, &spec).unwrap();
    let model = CpdModel::random(d, r, spec, 1.0, rng).unwrap();
    let y = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
    (model, fs, y)
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

fn c1_exact_hessian() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = pick(&mut rng, &[2, 3, 4]);
        let i = pick(&mut rng, &[1, 2, 3]);
        let r = pick(&mut rng, &[1, 2]);
        let n = rng.random_range(5..=15);
        let beta = pick(&mut rng, &[0.1, 1.0, 10.0]);
        let gamma = pick(&mut rng, &[0.1, 1.0, 10.0]);
        let (model, fs, y) = random_instance(&mut rng, d, i, r, n);
        let h = full_hessian(&model, &fs, &y, beta, gamma).unwrap().to_dense();
        let j = |v: &DVector<f64>| loss(&model.with_vector(v).unwrap(), &fs, &y, beta, gamma).unwrap();
        let fd = finite_diff_hessian(j, &model.to_vector(), FdConfig::HESSIAN).unwrap();
        worst = worst.max((&h - &fd).norm() / fd.norm());
    }
    let t = start.elapsed();
    check(
        worst <= 1e-5 && within_budget(t, 30.0),
        format!("max ||H_full - H_fd||_F / ||H_fd||_F = {worst:.2e} (<= 1e-5), {:.1}s (< 30s)", t.as_secs_f64()),
    )
}

fn c2_response_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=4);
        let i = rng.random_range(1..=3);
        let r = rng.random_range(1..=3);
        let n = rng.random_range(3..=12);
        let (model, fs, _) = random_instance(&mut rng, d, i, r, n);
        let f = model_response(&model, &fs).unwrap();
        let dense = dense_features(&fs).unwrap() * dense_weights(&model).unwrap();
        worst = worst.max((&f - &dense).amax());
        for k in 0..d {
            let (_, a) = partial_response(&model, &fs, k).unwrap();
            let v = DVector::from_column_slice(model.cores[k].as_slice());
            worst = worst.max((a * v - &f).amax());
        }
    }
    check(worst <= 1e-10, format!("max |A_d v_d - Z1|, |Z1 - Phi w| = {worst:.2e} (<= 1e-10) over 100 instances"))
}

fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn c3_ggn_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut min_gap, mut resid_free, mut extract) = (f64::INFINITY, 0.0f64, 0.0f64);
    for _ in 0..40 {
        let d = rng.random_range(1..=4);
        let i = rng.random_range(1..=3);
        let r = rng.random_range(1..=3);
        let n = rng.random_range(4..=15);
        let beta = pick(&mut rng, &[0.1, 1.0, 10.0]);
        let gamma = pick(&mut rng, &[0.1, 1.0, 10.0]);
        let (model, fs, y) = random_instance(&mut rng, d, i, r, n);
        let ggn = ggn_hessian(&model, &fs, &y, beta, gamma).unwrap().to_dense();
        let eig = SymmetricEigen::new(ggn.clone());
        min_gap = min_gap.min(eig.eigenvalues.min() - (gamma - 1e-9));

        let exact_y = model_response(&model, &fs).unwrap();
        let full0 = full_hessian(&model, &fs, &exact_y, beta, gamma).unwrap().to_dense();
        let ggn0 = ggn_hessian(&model, &fs, &exact_y, beta, gamma).unwrap().to_dense();
        resid_free = resid_free.max(rel_frob(&full0, &ggn0));

        let scale = ggn.amax().max(1.0);
        let cl = model.core_len();
        let mut expected_block = DMatrix::zeros(ggn.nrows(), ggn.ncols());
        for k in 0..d {
            let o = k * cl;
            expected_block.view_mut((o, o), (cl, cl)).copy_from(&ggn.view((o, o), (cl, cl)));
        }
        let expected_diag = DMatrix::from_diagonal(&ggn.diagonal());
        let o = (d - 1) * cl;
        let expected_last = ggn.view((o, o), (cl, cl)).into_owned();
        for (variant, expected) in [
            (HessianVariant::Block, &expected_block),
            (HessianVariant::Diag, &expected_diag),
            (HessianVariant::LastCore, &expected_last),
        ] {
            let h = build_hessian(variant, &model, &fs, &y, beta, gamma, DENSE_HESSIAN_CAP).unwrap().to_dense();
            extract = extract.max((h - expected).amax() / scale);
        }
    }
    check(
        min_gap >= 0.0 && resid_free <= 1e-8 && extract <= 1e-12,
        format!(
            "min(lambda_min - gamma + 1e-9) = {min_gap:.2e} (>= 0); residual-free |Full-GGN| rel = {resid_free:.2e} (<= 1e-8); \
             sub-extraction max rel = {extract:.2e} (<= 1e-12)"
        ),
    )
}

fn non_increasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs()))
}

fn c4_als_descent() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut fits = 0;
    let mut violations = 0;
    for k in 0..30 {
        let d = rng.random_range(1..=4);
        let i = rng.random_range(2..=4);
        let r = rng.random_range(1..=3);
        let n = rng.random_range(10..=40);
        let (_, fs, y) = random_instance(&mut rng, d, i, r, n);
        let cfg = TrainConfig {
            epochs: 30,
            beta: pick(&mut rng, &[0.1, 1.0, 10.0]),
            gamma: pick(&mut rng, &[1e-3, 0.1, 1.0]),
            seed: k,
            tol: 0.0,
            ..TrainConfig::default()
        };
        let est = fit_map_features(&fs, &y, &cfg, &FeatureMapSpec::unit_norm_polynomial(i), r).unwrap();
        fits += 1;
        violations += usize::from(!non_increasing(&est.loss_trace));
    }
    for seed in 0..20 {
        let (train, _) = gen_cubic(seed);
        let spec = FeatureMapSpec::polynomial(4);
        let fs = build_features(&train.x, &spec).unwrap();
        let cfg = TrainConfig {
            epochs: 25,
            beta: 1.0 / 9.0,
            gamma: 1.0,
            seed,
            ..TrainConfig::default()
        };
        let est = fit_map_features(&fs, &train.y, &cfg, &spec, 2).unwrap();
        fits += 1;
        violations += usize::from(!non_increasing(&est.loss_trace));
    }

    // Noiseless data from a rank-2 model, refit at rank 2.
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let spec = FeatureMapSpec::unit_norm_polynomial(3);
    let x = DMatrix::from_fn(200, 3, |_, _| rng.random_range(-2.0..2.0));
    let fs = build_features(&x, &spec).unwrap();
    let truth = CpdModel::random(3, 2, spec, 1.0, &mut rng).unwrap();
    let y = model_response(&truth, &fs).unwrap();
    let cfg = TrainConfig {
        epochs: 500,
        beta: 1.0,
        gamma: 1e-10,
        seed: 41,
        tol: 0.0,
        ..TrainConfig::default()
    };
    let est = fit_map_features(&fs, &y, &cfg, &spec, 2).unwrap();
    fits += 1;
    violations += usize::from(!non_increasing(&est.loss_trace));
    let f = model_response(&est.model, &fs).unwrap();
    let train_rmse = rmse(y.as_slice(), f.as_slice()).unwrap();
    check(
        violations == 0 && train_rmse < 1e-3,
        format!("{violations}/{fits} traces increase beyond slack; noiseless rank-2 recovery train RMSE = {train_rmse:.2e} (< 1e-3)"),
    )
}

fn c5_cubic() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::synthetic_cubic();
    let r = cmd_eval(&cfg, None).unwrap();
    let t = start.elapsed();
    let ok = (2.5..=6.0).contains(&r.rmse.mean)
        && (2.3..=3.4).contains(&r.nll.mean)
        && (0.88..=1.0).contains(&r.ecp95.mean)
        && r.rce.mean <= 0.10
        && within_budget(t, 60.0);
    check(
        ok,
        format!(
            "{} seeds: RMSE {:.3} [2.5, 6.0], NLL {:.3} [2.3, 3.4], ECP-95 {:.3} [0.88, 1], RCE {:.3} (<= 0.10), \
             WCPI-95 {:.3}; {:.1}s (< 60s)",
            r.rows.len(),
            r.rmse.mean,
            r.nll.mean,
            r.ecp95.mean,
            r.rce.mean,
            r.wcpi95.mean,
            t.as_secs_f64()
        ),
    )
}

/// Mean LLA and LA (S = 500) test NLL at the threshold chosen by
/// cross-validation of the linearized predictive, over `seeds`.
fn lla_vs_la(base: &ExperimentConfig, seeds: u64) -> (f64, f64) {
    let (mut lla, mut la) = (0.0, 0.0);
    for seed in 0..seeds {
        let cfg = ExperimentConfig {
            seed,
            mode: PredictiveMode::Lla,
            ..base.clone()
        };
        let cv = cmd_cv(&cfg).unwrap();
        let best = cv.best.expect("at least one feasible cell");
        let chosen = ExperimentConfig {
            rank: best.rank,
            local_dim: best.local_dim,
            threshold: best.threshold,
            ..cfg
        };
        let (train, test) = chosen.prepare(seed).unwrap();
        let post = fit_dataset(&train, &chosen.bayes_config(seed)).unwrap();
        lla += evaluate_posterior(&post, &test, &chosen, seed).unwrap().nll;
        let la_cfg = ExperimentConfig {
            mode: PredictiveMode::La,
            samples: 500,
            ..chosen
        };
        la += evaluate_posterior(&post, &test, &la_cfg, seed).unwrap().nll;
    }
    (lla / seeds as f64, la / seeds as f64)
}

fn c6_linearization() -> Outcome {
    let cubic = ExperimentConfig {
        cv: CvGrid {
            ranks: vec![2],
            local_dims: vec![4],
            thresholds: RELATIVE_THRESHOLD_GRID.to_vec(),
            folds: 5,
        },
        ..ExperimentConfig::synthetic_cubic()
    };
    let (lla, la) = lla_vs_la(&cubic, 10);
    let mut detail = format!("cubic: mean NLL LLA {lla:.3} vs LA {la:.3}");
    let mut held = lla <= la;
    match uci_file("yacht") {
        Some(path) => {
            let yacht = ExperimentConfig {
                dataset: path.to_string_lossy().into_owned(),
                cv: CvGrid {
                    ranks: vec![2, 4],
                    local_dims: vec![3, 5],
                    thresholds: RELATIVE_THRESHOLD_GRID.to_vec(),
                    folds: 5,
                },
                ..ExperimentConfig::default()
            };
            let (lla_y, la_y) = lla_vs_la(&yacht, 10);
            held &= lla_y <= la_y;
            detail.push_str(&format!("; yacht: LLA {lla_y:.3} vs LA {la_y:.3}"));
        }
        None => detail.push_str("; yacht: data not present, half not run"),
    }
    if held {
        Outcome::Pass(detail)
    } else {
        Outcome::Note(detail)
    }
}

fn uci_dir() -> PathBuf {
    std::env::var_os("LATNKM_UCI_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/uci"))
}

fn uci_file(name: &str) -> Option<PathBuf> {
    let p = uci_dir().join(format!("{name}.csv"));
    p.exists().then_some(p)
}

fn c7_uci() -> Outcome {
    let (Some(yacht), Some(energy)) = (uci_file("yacht"), uci_file("energy")) else {
        return Outcome::Blocked(format!(
            "yacht.csv / energy.csv not found in {}; set LATNKM_UCI_DIR to run",
            uci_dir().display()
        ));
    };
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, path, bound) in [("yacht", yacht, 0.2), ("energy", energy, -0.8)] {
        let base = ExperimentConfig {
            dataset: path.to_string_lossy().into_owned(),
            repeats: 10,
            ..ExperimentConfig::default()
        };
        let cv = cmd_cv(&base).unwrap();
        let best = cv.best.expect("at least one feasible cell");
        let cfg = ExperimentConfig {
            rank: best.rank,
            local_dim: best.local_dim,
            threshold: best.threshold,
            ..base
        };
        let r = cmd_eval(&cfg, None).unwrap();
        ok &= r.nll.mean <= bound;
        parts.push(format!(
            "{name}: NLL {:.3}±{:.3} (<= {bound}) at R={} I={} t={:e}",
            r.nll.mean, r.nll.std, best.rank, best.local_dim, best.threshold
        ));
    }
    let t = start.elapsed();
    ok &= within_budget(t, 900.0);
    check(ok, format!("{}; {:.0}s (< 900s)", parts.join("; "), t.as_secs_f64()))
}

fn gauss(mean: f64, variance: f64) -> PredictiveDist {
    PredictiveDist::Gaussian { mean, variance }
}

fn c8_metrics() -> Outcome {
    let opts = IntervalOptions::default();
    let mut fails = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            fails.push(name.to_string());
        }
    };
    expect("rmse exact", rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() == 0.0);
    expect("rmse [0,0] vs [1,-1]", rmse(&[0.0, 0.0], &[1.0, -1.0]).unwrap() == 1.0);
    expect("rmse empty", rmse(&[], &[]).is_err());

    let y = [0.4, -1.2, 3.3, 0.0];
    let unit: Vec<_> = y.iter().map(|&t| gauss(t, 1.0)).collect();
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    expect("nll unit variance", (nll(&unit, &y).unwrap() - half_log_2pi).abs() < 1e-12);
    expect("nll value", (nll(&unit, &y).unwrap() - 0.91894).abs() < 1e-5);
    let wide: Vec<_> = y.iter().map(|&t| gauss(t, 2.7)).collect();
    expect(
        "nll sigma^2",
        (nll(&wide, &y).unwrap() - 0.5 * (2.0 * std::f64::consts::PI * 2.7).ln()).abs() < 1e-12,
    );
    expect("nll nonpositive variance", nll(&[gauss(0.0, 0.0)], &[0.0]).is_err());
    let mix1 = PredictiveDist::Mixture {
        means: vec![0.3],
        variance: 1.7,
    };
    expect(
        "mixture S=1 equals Gaussian",
        (mix1.log_pdf(1.1).unwrap() - gauss(0.3, 1.7).log_pdf(1.1).unwrap()).abs() < 1e-12,
    );

    let huge = vec![gauss(0.0, 1e14); 4];
    expect("ecp everything covered", coverage(&huge, &y, 0.95, opts).unwrap() == 1.0);
    let std_normal = vec![gauss(0.0, 1.0); 5];
    let zeros = [0.0; 5];
    expect("ecp targets at mean", coverage(&std_normal, &zeros, 0.95, opts).unwrap() == 1.0);
    expect(
        "wcpi standard normal",
        (wcpi(&std_normal, 0.95, opts).unwrap() - 2.0 * 1.95996).abs() < 1e-4,
    );
    let (lo, hi) = gauss(0.0, 1.0).interval(0.95, opts, 0).unwrap();
    expect("interval quantiles", (lo + 1.95996).abs() < 1e-5 && (hi - 1.95996).abs() < 1e-5);

    let levels = default_levels();
    let calibrated: Vec<(f64, f64)> = levels.iter().map(|&a| (a, a)).collect();
    expect("rce calibrated", rce_from_table(&calibrated).unwrap() == 0.0);
    let all = rce(&huge, &y, &levels, opts).unwrap();
    expect("rce all-covering", (all - 0.275).abs() < 1e-12);
    // independent arithmetic: mean(1 - alpha_k) over the grid
    let arith = (0..10).map(|k| 1.0 - (0.50 + 0.05 * k as f64)).sum::<f64>() / 10.0;
    expect("rce arithmetic", (all - arith).abs() < 1e-12);

    if fails.is_empty() {
        Outcome::Pass(format!("all metric examples hold; RCE(all-covering) = {all}"))
    } else {
        Outcome::Fail(format!("failed: {}", fails.join(", ")))
    }
}

fn c9_variational_bookkeeping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for t in [1usize, 2, 3, 5, 8] {
        let (d, i, r, n) = (rng.random_range(1..=3), rng.random_range(2..=4), rng.random_range(1..=3), rng.random_range(10..=30));
        let (_, fs, y) = random_instance(&mut rng, d, i, r, n);
        let prior = GammaPosterior::DEFAULT_PRIOR;
        let cfg = BayesConfig {
            rank: r,
            feature_spec: FeatureMapSpec::unit_norm_polynomial(i),
            vi_rounds: t,
            epochs: 10,
            ..BayesConfig::default()
        };
        let fit = fit_map_stage(&fs, &y, &cfg).unwrap();
        let (Precision::Learned { q: qb }, Precision::Learned { q: qg }) = (fit.beta, fit.gamma) else {
            return Outcome::Fail("precisions were not learned".into());
        };
        let want_b = prior.a + (t * n) as f64 / 2.0;
        let want_g = prior.a + (t * d * i * r) as f64 / 2.0;
        worst = worst.max((qb.a - want_b).abs()).max((qg.a - want_g).abs());
        cases += 1;
    }
    check(
        worst == 0.0,
        format!("max |a - (a0 + T*count/2)| = {worst:e} over {cases} fits (exact)"),
    )
}

fn c10_gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=4);
        let i = rng.random_range(1..=4);
        let r = rng.random_range(1..=3);
        let spec = FeatureMapSpec::unit_norm_polynomial(i);
        let model = CpdModel::random(d, r, spec, 1.0, &mut rng).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let point = spec.map_point(&x).unwrap();
        let g = grad_f(&model, &x, HessianVariant::Full).unwrap();
        let f = |v: &DVector<f64>| model.with_vector(v).unwrap().response_at(&point);
        let fd = finite_diff_gradient(f, &model.to_vector(), FdConfig::GRADIENT).unwrap();
        worst = worst.max((&g - &fd).norm() / fd.norm().max(1e-300));
    }
    check(worst <= 1e-6, format!("max ||grad_f - fd|| / ||fd|| = {worst:.2e} (<= 1e-6) over 100 pairs"))
}

fn c11_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_latnkm");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "rank = 2\nlocal_dim = 4\nbeta = 0.1111111111111111\nrepeats = 3\nmode = \"la\"\nsamples = 100\n").unwrap();
    let run = |args: &[&str]| {
        let status = Command::new(bin).args(args).arg("--config").arg(&cfg).arg("--out").arg(&out).output().unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    };
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        run(&["fit"]);
        let model = out.join("model.json");
        run(&["eval", "--artifact", model.to_str().unwrap()]);
        let files: Vec<Vec<u8>> = ["model.json", "metrics.txt", "metrics.json"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).unwrap())
            .collect();
        snapshots.push(files);
        std::fs::remove_dir_all(&out).unwrap();
    }
    check(
        snapshots[0] == snapshots[1],
        "two fit + eval runs give byte-identical model.json, metrics.txt, metrics.json".into(),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1 exact Hessian vs finite differences", c1_exact_hessian),
        ("2 response identities", c2_response_identities),
        ("3 GGN properties", c3_ggn_properties),
        ("4 ALS descent and recovery", c4_als_descent),
        ("5 synthetic cubic", c5_cubic),
        ("6 linearized vs sampled predictive (soft)", c6_linearization),
        ("7 UCI spot checks", c7_uci),
        ("8 metric correctness", c8_metrics),
        ("9 variational bookkeeping", c9_variational_bookkeeping),
        ("10 gradient oracle", c10_gradient_oracle),
        ("11 end-to-end determinism", c11_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    println!("acceptance criteria");
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Note(d) => ("SOFT-FAIL", d),
            Outcome::Blocked(d) => ("BLOCKED", d),
        };
        println!("[{tag}] criterion {name}: {detail} [{secs:.1}s]");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
