//! End-to-end acceptance checks, one test per criterion. Each prints a
//! single PASS/FAIL line straight to stdout before asserting.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use common::{check_golden, random_params, random_steps, random_system, rng, seeded_pipeline};
use driftscope::alerts::{evaluate_alert_rule, AlertRule};
use driftscope::attribution::{
    discrete_time_derivatives, integrated_gradients, integrated_gradients_target, time_restrict, Method,
};
use driftscope::events::{fit_feature_stats, EventSequence, FeatureCatalog, Split, StepSeries};
use driftscope::explain::ExplainContext;
use driftscope::pipeline::{encode_corpus, examples, steps_by_episode};
use driftscope::seqmodel::{
    backward, forward, objective, replay, train, DropoutSpec, Mode, ModelConfig, ModelParams, TrainingExample,
};
use driftscope::synth::{
    aki_windows, expected_random_precision, generate_corpus, run_benchmark, ScenarioConfig, TruthWindow, WindowConfig,
};
use nalgebra::DVector;
use rand::Rng;

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {criterion} ({name}): {verdict} - {detail}").unwrap();
}

/// Benchmark-scale corpus and the model trained on it.
struct Fixture {
    config: ScenarioConfig,
    corpus: Vec<EventSequence>,
    catalog: FeatureCatalog,
    steps: BTreeMap<String, StepSeries>,
    train_set: Vec<TrainingExample>,
    validation: Vec<TrainingExample>,
    model_config: ModelConfig,
    params: ModelParams,
    test_windows: Vec<TruthWindow>,
}

fn model_config(seed: u64, eta: f64) -> ModelConfig {
    ModelConfig { hidden_size: 16, learning_rate: 0.003, max_epochs: 8, eta, seed, ..Default::default() }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let config = ScenarioConfig {
            n_episodes: 2000,
            seed: 1,
            train_fraction: 0.6,
            validation_fraction: 0.1,
            ..Default::default()
        };
        let corpus = generate_corpus(&config).unwrap();
        let catalog = config.catalog().unwrap();
        let stats = fit_feature_stats(&corpus, &catalog).unwrap();
        let encoded = encode_corpus(&corpus, &catalog, &stats).unwrap();
        let train_set = examples(&corpus, &encoded, Split::Train);
        let validation = examples(&corpus, &encoded, Split::Validation);
        let model_config = model_config(3, 0.0);
        let (params, _) = train(&train_set, &validation, &model_config).unwrap();
        let test: Vec<EventSequence> = corpus.iter().filter(|s| s.split == Split::Test).cloned().collect();
        let test_windows = aki_windows(&test, &catalog, &WindowConfig::default())
            .unwrap()
            .into_iter()
            .filter(|w| !w.truth.is_empty())
            .collect();
        Fixture {
            steps: steps_by_episode(&corpus, encoded),
            config,
            corpus,
            catalog,
            train_set,
            validation,
            model_config,
            params,
            test_windows,
        }
    })
}

fn rows(x: &[DVector<f64>]) -> Vec<DVector<f64>> {
    x.to_vec()
}

#[test]
fn criterion_1_lds_oracle_fidelity() {
    let start = Instant::now();
    let h = 1e-6;
    let (mut worst_grad, mut worst_ig) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let (sys, x) = random_system(seed);
        let t1 = x.len();
        let trace = sys.run(&x).unwrap();
        let risk_at = |x: &[DVector<f64>]| *sys.run(x).unwrap().risk.last().unwrap();
        for t in 1..=t1 {
            let g = sys.input_gradient(&trace, t, t1).unwrap();
            let mut fd = DVector::zeros(g.len());
            for i in 0..g.len() {
                let (mut xp, mut xm) = (rows(&x), rows(&x));
                xp[t - 1][i] += h;
                xm[t - 1][i] -= h;
                fd[i] = (risk_at(&xp) - risk_at(&xm)) / (2.0 * h);
            }
            worst_grad = worst_grad.max((&g - &fd).norm() / g.norm().max(fd.norm()).max(1e-3));
        }
        let mut r = rng(seed + 7);
        let b: Vec<DVector<f64>> =
            x.iter().map(|v| DVector::from_fn(v.len(), |_, _| r.random_range(-1.0..1.0))).collect();
        let attr = sys.integrated_gradient(&b, &x, t1).unwrap();
        let total: f64 = attr.iter().map(|a| a.sum()).sum();
        worst_ig = worst_ig.max((total - (risk_at(&x) - risk_at(&b))).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst_grad < 1e-6 && worst_ig < 1e-9 && elapsed < 10.0;
    report(
        1,
        "LDS oracle fidelity",
        pass,
        &format!(
            "100 systems, max gradient rel err {worst_grad:.2e}, max completeness gap {worst_ig:.2e}, {elapsed:.2}s"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_bptt_correctness() {
    let start = Instant::now();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut configs = 0;
    for seed in 0..24u64 {
        let hidden = 2 + (seed % 3) as usize * 2;
        let attention = seed % 2 == 1;
        let eta = if seed % 4 >= 2 { 0.2 } else { 0.0 };
        let dropout = seed % 8 >= 4;
        let outcome = seed % 3 == 0;
        let steps = random_steps(3, 8, seed + 500);
        let params = random_params(hidden, steps.dim(), seed + 500, attention);
        let mode = if dropout {
            Mode::Train(DropoutSpec { input: 0.25, output: 0.25, recurrent: 0.25, seed })
        } else {
            Mode::Eval
        };
        let (_, cache) = forward(&params, &steps, mode).unwrap();
        let (grads, dx) = backward(&params, &cache, &steps, outcome, eta).unwrap();
        let f = |p: &ModelParams, s: &StepSeries| {
            let (risk, again) = replay(p, s, &cache).unwrap();
            objective(&risk, &again, outcome, eta)
        };
        let flat = params.flat();
        let mut probe = params.clone();
        let mut fd = Vec::with_capacity(flat.len());
        for i in 0..flat.len() {
            let mut v = flat.clone();
            v[i] += h;
            probe.set_flat(&v);
            let up = f(&probe, &steps);
            v[i] -= 2.0 * h;
            probe.set_flat(&v);
            fd.push((up - f(&probe, &steps)) / (2.0 * h));
        }
        let mut fd_x = Vec::with_capacity(dx.len());
        for i in 0..dx.len() {
            let mut x = steps.inputs().to_vec();
            x[i] += h;
            let up = f(&params, &steps.with_inputs(x.clone()));
            x[i] -= 2.0 * h;
            fd_x.push((up - f(&params, &steps.with_inputs(x))) / (2.0 * h));
        }
        let rel = |a: &[f64], b: &[f64]| {
            let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
            diff / scale.max(1e-8)
        };
        worst = worst.max(rel(&grads.flat(), &fd)).max(rel(&dx, &fd_x));
        configs += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = configs >= 20 && worst < 1e-4 && elapsed < 60.0;
    report(2, "BPTT correctness", pass, &format!("{configs} configurations, max rel err {worst:.2e}, {elapsed:.2}s"));
    assert!(pass);
}

#[test]
fn criterion_3_telescoping() {
    let fx = fixture();
    let config = ScenarioConfig { n_episodes: 200, seed: 77, ..fx.config.clone() };
    let corpus = generate_corpus(&config).unwrap();
    let stats = fit_feature_stats(&fx.corpus, &fx.catalog).unwrap();
    let encoded = encode_corpus(&corpus, &fx.catalog, &stats).unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for s in encoded.iter().filter(|s| s.len() >= 2) {
        let (risk, _) = forward(&fx.params, s, Mode::Eval).unwrap();
        let a = discrete_time_derivatives(&risk, s).unwrap();
        let n = s.len();
        for (t0, t1) in [(0, n), (n / 3, n), (1, n / 2), (n / 2, n / 2 + 1)] {
            let w = time_restrict(&a, t0, t1).unwrap();
            let p = |t: usize| if t == 0 { risk.p_base } else { risk.p[t - 1] };
            worst = worst.max((w.total() - (p(t1) - p(t0))).abs());
        }
        checked += 1;
    }
    let pass = checked == 200 && worst <= 1e-12;
    report(3, "telescoping", pass, &format!("{checked} episodes, max |sum - (p_t1 - p_t0)| {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_4_ig_completeness_on_trained_model() {
    let fx = fixture();
    let ms = [8, 32, 128, 512];
    let mut worst_128 = 0.0f64;
    let mut monotone = true;
    let mut good = 0;
    let windows: Vec<&TruthWindow> = fx.test_windows.iter().take(20).collect();
    for w in &windows {
        let s = &fx.steps[&w.episode];
        let target = integrated_gradients_target(&fx.params, s, w.t0, w.t1).unwrap();
        let gaps: Vec<f64> = ms
            .iter()
            .map(|&m| (integrated_gradients(&fx.params, s, w.t0, w.t1, m).unwrap().total() - target).abs())
            .collect();
        let shrinking = gaps.windows(2).all(|g| g[1] <= g[0] + 1e-12);
        worst_128 = worst_128.max(gaps[2]);
        monotone &= shrinking;
        good += (gaps[2] < 1e-3 && shrinking) as usize;
    }
    let pass = windows.len() == 20 && worst_128 < 1e-3 && monotone;
    report(
        4,
        "IG completeness on trained model",
        pass,
        &format!(
            "{good}/{} windows meet gap < 1e-3 at m=128 with a non-increasing ladder; max gap at m=128 {worst_128:.2e}",
            windows.len()
        ),
    );
    assert!(pass);
}

fn mean_squared_difference(params: &ModelParams, data: &[TrainingExample]) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for ex in data {
        let p = forward(params, &ex.steps, Mode::Eval).unwrap().0.p;
        for w in p.windows(2) {
            sum += (w[1] - w[0]).powi(2);
            count += 1;
        }
    }
    sum / count as f64
}

/// Paired over five training seeds; the fixture supplies the first
/// unsmoothed model.
#[test]
fn criterion_5_smoothing_effect() {
    let fx = fixture();
    let mut plain = Vec::new();
    let mut smooth = Vec::new();
    for seed in 3..=7 {
        let base = if seed == fx.model_config.seed {
            fx.params.clone()
        } else {
            train(&fx.train_set, &fx.validation, &model_config(seed, 0.0)).unwrap().0
        };
        let smoothed = train(&fx.train_set, &fx.validation, &model_config(seed, 0.005)).unwrap().0;
        plain.push(mean_squared_difference(&base, &fx.validation));
        smooth.push(mean_squared_difference(&smoothed, &fx.validation));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(&plain), mean(&smooth));
    let per_seed: Vec<String> = plain.iter().zip(&smooth).map(|(p, s)| format!("{p:.3e}->{s:.3e}")).collect();
    let wins = plain.iter().zip(&smooth).filter(|(p, s)| s < p).count();
    let pass = b < a;
    report(
        5,
        "smoothing effect",
        pass,
        &format!(
            "mean squared first difference {a:.3e} (eta 0) vs {b:.3e} (eta 0.005) over seeds 3-7; lower in {wins}/5 seeds [{}]",
            per_seed.join(", ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_synthetic_benchmark() {
    let fx = fixture();
    let windows = &fx.test_windows;
    let distractors = fx.catalog.len() - 2;
    let expected = windows.iter().map(|w| expected_random_precision(&fx.steps[&w.episode], w, 1).unwrap()).sum::<f64>()
        / windows.len() as f64;
    let ctx = ExplainContext {
        params: &fx.params,
        bins: None,
        stat_config: Default::default(),
        m: 64,
        seed: 5,
        reference: Default::default(),
    };
    let rows = run_benchmark(&fx.steps, windows, &ctx, &[Method::Random, Method::TemporalIg], &[1]).unwrap();
    let (random, tig) = (&rows[0], &rows[1]);
    let pass = windows.len() >= 100
        && distractors >= 8
        && (random.mean_precision - expected).abs() <= 0.05
        && tig.mean_precision >= 2.0 * random.mean_precision
        && tig.ci_lo > random.ci_hi;
    report(
        6,
        "synthetic benchmark",
        pass,
        &format!(
            "{} windows, {distractors} distractors; random p@1 {:.3} [{:.3}, {:.3}] (expected {expected:.3}); temporal IG p@1 {:.3} [{:.3}, {:.3}]",
            windows.len(),
            random.mean_precision,
            random.ci_lo,
            random.ci_hi,
            tig.mean_precision,
            tig.ci_lo,
            tig.ci_hi
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_alert_rule_suite() {
    let rule = AlertRule::default();
    let h = 3600.0;
    let series = |p0: f64, checks: &[f64]| {
        let mut p = vec![0.5, p0];
        p.extend_from_slice(checks);
        let step_time = (0..p.len()).map(|i| if i == 0 { 0.0 } else { (12.0 + 2.0 * (i - 1) as f64) * h }).collect();
        driftscope::seqmodel::RiskSeries { logits: vec![0.0; p.len()], p, step_time, p_base: 0.5 }
    };
    let fires = |p0: f64, checks: &[f64]| evaluate_alert_rule("e", &series(p0, checks), &rule).unwrap().is_some();
    let examples = fires(0.10, &[0.20]) && !fires(0.15, &[0.18, 0.21]) && !fires(0.05, &[0.12, 0.19]);

    let stricter = [AlertRule { ratio_threshold: 1.8, ..rule }, AlertRule { floor: 0.35, ..rule }];
    let mut grid_ok = true;
    let mut cells = 0;
    for i in 1..=99u32 {
        let p0 = i as f64 / 100.0;
        let mut previous = false;
        for j in 1..=99u32 {
            let p1 = j as f64 / 100.0;
            let fired = fires(p0, &[p1]);
            grid_ok &= fired == (j >= 20 && 2 * j >= 3 * i);
            grid_ok &= !previous || fired;
            grid_ok &= !fired || p1 >= rule.floor;
            for s in &stricter {
                let strict = evaluate_alert_rule("e", &series(p0, &[p1]), s).unwrap().is_some();
                grid_ok &= !strict || fired;
            }
            previous = fired;
            cells += 1;
        }
    }
    let pass = examples && grid_ok;
    report(
        7,
        "alert rule suite",
        pass,
        &format!("boundary examples {examples}; {cells} grid cells match the integer oracle and are monotone/antitone: {grid_ok}"),
    );
    assert!(pass);
}

#[test]
fn criterion_8_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = seeded_pipeline(a.path());
    let second = seeded_pipeline(b.path());
    let repeat = first == second;
    let golden = check_golden(&first);
    let pass = repeat && golden;
    report(
        8,
        "determinism",
        pass,
        &format!("repeated results byte-identical: {repeat}; matches golden file: {golden}"),
    );
    assert!(pass);
}
