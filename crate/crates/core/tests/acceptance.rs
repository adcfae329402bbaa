//! Acceptance suite. Every test prints one `PASS` or `FAIL` line with the
//! measured quantities, then asserts. Tests hold a shared lock so that the
//! wall-clock limits are measured one criterion at a time.
//!
//! The training criteria (6-8) run in `f32`; see the README for the
//! desk-scale configuration.

use std::io::Write;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use statrs::distribution::{ContinuousCDF, StudentsT};

use modunwrap::autodiff::write_checkpoint;
use modunwrap::baselines::{itoh_unwrap, mrf_recover, mrf_traced, sparse_opt_recover, MrfInit};
use modunwrap::data::{synth_generate, write_dataset, Dataset, SynthConfig};
use modunwrap::graph::{build_topology, node_features, GraphTopology, Montage, WindowGraph};
use modunwrap::model::{ModelConfig, UnwrapNet};
use modunwrap::rng::derive_seed;
use modunwrap::signal::{fold, fold_value, Recording, SignalWindow};
use modunwrap::train::{
    evaluate, fit, gradcheck, mean_objective, offset_corrected, paired_ttest, pearson_r, recover_baseline,
    run_ablation, score, train, BaselineOptions, GradcheckConfig, Method, Prepared, SplitConfig, SplitPlan,
    TrainConfig,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, pass: bool, elapsed: Duration, limit: Option<Duration>, detail: &str) {
    let in_time = limit.is_none_or(|l| elapsed < l);
    let ok = pass && in_time;
    let limit = limit.map_or(String::new(), |l| format!(" (limit {:.0?})", l));
    // Written to the stdout handle rather than through `println!`, which the
    // test harness captures, so the line shows up in plain `cargo test` runs.
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "{} criterion {id} [{name}]: {detail}; runtime {:.2?}{limit}",
        if ok { "PASS" } else { "FAIL" },
        elapsed
    )
    .unwrap();
    drop(out);
    assert!(pass, "criterion {id} failed: {detail}");
    assert!(in_time, "criterion {id} exceeded its runtime limit");
}

fn to_f32(recordings: &[Recording<f64>]) -> Vec<Recording<f32>> {
    recordings
        .iter()
        .map(|r| {
            Recording::new(
                r.samples.mapv(|v| v as f32),
                r.subject_id.clone(),
                r.sample_rate_hz as f32,
            )
            .unwrap()
        })
        .collect()
}

// Desk-scale setup shared by criteria 7 and 8.

const DESK_LAMBDA: f64 = 0.6;
const DESK_SYNTH_SEED: u64 = 7;

fn desk_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lambda: DESK_LAMBDA,
        epochs: 30,
        seed,
        model: ModelConfig {
            hidden_dim: 32,
            num_layers: 2,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

struct Desk {
    data: Dataset<f32>,
    plan: SplitPlan,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let synth = SynthConfig {
            num_subjects: 8,
            duration_s: 60.0,
            seed: DESK_SYNTH_SEED,
            ..SynthConfig::default()
        };
        let recs = to_f32(&synth_generate(&synth).unwrap());
        let data = Dataset::from_recordings(&recs, 200)
            .unwrap()
            .fold(DESK_LAMBDA as f32)
            .unwrap();
        let plan = SplitConfig {
            test: 2,
            val: 1,
            folds: 5,
        }
        .plan(&data.subjects())
        .unwrap();
        Desk { data, plan }
    })
}

#[test]
fn criterion_01_folding_roundtrip() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
    let (mut max_err, mut range_ok) = (0.0f64, true);
    for _ in 0..10_000 {
        let lambda: f64 = rng.gen_range(0.01..10.0);
        let x: f64 = rng.gen_range(-100.0..100.0);
        let (p, z) = fold_value(x, lambda);
        range_ok &= (0.0..lambda).contains(&p);
        max_err = max_err.max((lambda * f64::from(z) + p - x).abs());
    }
    let pass = range_ok && max_err < 1e-12;
    verdict(
        1,
        "folding algebra",
        pass,
        start.elapsed(),
        Some(Duration::from_secs(1)),
        &format!("10000 pairs, max roundtrip error {max_err:.3e}, residues in [0, λ): {range_ok}"),
    );
}

#[test]
fn criterion_02_graph_size() {
    let _g = serial();
    let start = Instant::now();
    let topo = build_topology(200, &Montage::<f64>::emotiv_epoc(), 3).unwrap();
    let (nodes, edges) = (topo.num_nodes(), topo.num_edges());
    let pass = nodes == 2800 && (10_000..=12_000).contains(&edges);
    verdict(
        2,
        "graph size",
        pass,
        start.elapsed(),
        Some(Duration::from_secs(1)),
        &format!(
            "{nodes} nodes, {edges} undirected edges ({} temporal + {} spatial), expected 2800 and [10000, 12000]",
            topo.temporal_edges(),
            topo.spatial_edges()
        ),
    );
}

#[test]
fn criterion_03_gradcheck() {
    let _g = serial();
    let start = Instant::now();
    let cfg = GradcheckConfig::default();
    assert_eq!(
        (
            cfg.model.hidden_dim,
            cfg.model.num_layers,
            cfg.model.num_heads,
            cfg.model.z_max
        ),
        (8, 1, 2, 2)
    );
    assert_eq!((cfg.t_len, cfg.channels, cfg.eps), (6, 3, 1e-4));
    let report = gradcheck(&cfg).unwrap();
    verdict(
        3,
        "gradient correctness",
        report.max_rel_error < 1e-4,
        start.elapsed(),
        Some(Duration::from_secs(30)),
        &format!(
            "{} entries, max relative error {:.3e} at {}[{}]",
            report.checked, report.max_rel_error, report.worst.0, report.worst.1
        ),
    );
}

#[test]
fn criterion_04_itoh_exact_under_step_bound() {
    let _g = serial();
    let start = Instant::now();
    let lambda = 0.6;
    // With the full default spectrum and noise floor every window steps past
    // λ/2 somewhere, so this cohort keeps only the two lowest bands.
    let mut synth = SynthConfig {
        num_subjects: 4,
        seed: 11,
        ..SynthConfig::default()
    };
    synth.bands.truncate(2);
    synth.pink_amplitude = 0.0;
    let ds = Dataset::from_recordings(&synth_generate(&synth).unwrap(), 200).unwrap();
    // Sequential unwrapping is independent per channel, so the filter keeps
    // single-channel windows whose every step is below λ/2.
    let columns: Vec<Array2<f64>> = ds
        .windows
        .iter()
        .flat_map(|w| {
            w.x.columns()
                .into_iter()
                .map(|c| c.to_owned().insert_axis(ndarray::Axis(1)))
                .collect::<Vec<_>>()
        })
        .collect();
    let within_bound = |x: &Array2<f64>| {
        x.column(0)
            .windows(2)
            .into_iter()
            .all(|w| (w[1] - w[0]).abs() < lambda / 2.0)
    };
    let (mut kept, mut worst) = (0usize, 0.0f64);
    for x in columns.iter().filter(|x| within_bound(x)) {
        kept += 1;
        let folded = fold(&SignalWindow::from_matrix(x.clone()), lambda).unwrap();
        let r = itoh_unwrap(&folded).unwrap();
        let corrected = offset_corrected(x, &r.x_hat, lambda);
        let mse = (&corrected - x).mapv(|d| d * d).mean().unwrap();
        worst = worst.max(mse);
    }
    verdict(
        4,
        "Itoh exactness",
        kept > 0 && worst < 1e-20,
        start.elapsed(),
        Some(Duration::from_secs(5)),
        &format!(
            "{kept} of {} channel windows satisfy the step bound, worst offset-corrected MSE {worst:.3e}",
            columns.len()
        ),
    );
}

/// Shared energy on a single-channel chain, written out independently.
fn chain_energy(p: &[f64], z: &[i32], lambda: f64) -> f64 {
    (1..p.len())
        .map(|t| (lambda * f64::from(z[t] - z[t - 1]) + p[t] - p[t - 1]).abs())
        .sum()
}

fn exhaustive_minimum(p: &[f64], lambda: f64) -> f64 {
    let n = p.len();
    let mut z = vec![-1i32; n];
    let mut best = f64::INFINITY;
    loop {
        best = best.min(chain_energy(p, &z, lambda));
        // Odometer over {-1, 0, 1}^n.
        let mut i = 0;
        while i < n && z[i] == 1 {
            z[i] = -1;
            i += 1;
        }
        if i == n {
            return best;
        }
        z[i] += 1;
    }
}

#[test]
fn criterion_05_small_instance_oracle() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
    let (mut mrf_hits, mut sparse_hits, mut sweeps, mut bad_sweeps) = (0, 0, 0usize, 0usize);
    for _ in 0..100 {
        let t_len = rng.gen_range(2..=8);
        let lambda: f64 = rng.gen_range(0.2..2.0);
        let z: Vec<i32> = (0..t_len).map(|_| rng.gen_range(-1..=1)).collect();
        let p: Vec<f64> = (0..t_len).map(|_| rng.gen_range(0.0..lambda)).collect();
        let p_mat = Array2::from_shape_vec((t_len, 1), p.clone()).unwrap();
        let z_mat = Array2::from_shape_vec((t_len, 1), z).unwrap();
        let folded = modunwrap::signal::FoldedWindow::new(p_mat, lambda, Some(z_mat)).unwrap();
        let topo = Arc::new(GraphTopology::spatio_temporal(t_len, 1, &[]).unwrap());
        let graph = WindowGraph::from_parts(topo, node_features(&folded).unwrap()).unwrap();
        let best = exhaustive_minimum(&p, lambda);

        let mrf = mrf_recover(&folded, &graph, 100, MrfInit::Itoh, 8).unwrap();
        let sparse = sparse_opt_recover(&folded, &graph, 100, 8).unwrap();
        let e = |r: &Array2<i32>| chain_energy(&p, r.as_slice().unwrap(), lambda);
        mrf_hits += usize::from(e(&mrf.z_hat) <= best + 1e-9);
        sparse_hits += usize::from(e(&sparse.z_hat) <= best + 1e-9);

        let starts = [
            itoh_unwrap(&folded).unwrap().z_hat,
            Array2::zeros((t_len, 1)),
            Array2::from_shape_fn((t_len, 1), |_| rng.gen_range(-3..=3)),
        ];
        for z0 in starts {
            let (_, trace) = mrf_traced(&folded, &graph, z0, 100, 8).unwrap();
            for w in trace.windows(2) {
                sweeps += 1;
                bad_sweeps += usize::from(w[1] > w[0] + 1e-12);
            }
        }
    }
    let pass = mrf_hits >= 95 && sparse_hits >= 95 && bad_sweeps == 0;
    verdict(
        5,
        "small-instance oracle",
        pass,
        start.elapsed(),
        Some(Duration::from_secs(60)),
        &format!(
            "mrf matches {mrf_hits}/100, sparse matches {sparse_hits}/100, ICM energy increased in {bad_sweeps} of {sweeps} sweeps"
        ),
    );
}

#[test]
fn criterion_06_overfit_sanity() {
    let _g = serial();
    let start = Instant::now();
    let synth = SynthConfig {
        num_subjects: 1,
        duration_s: 10.0,
        ..SynthConfig::default()
    };
    let mut ds = Dataset::from_recordings(&to_f32(&synth_generate(&synth).unwrap()), 200)
        .unwrap()
        .fold(0.5)
        .unwrap();
    ds.windows.truncate(4);
    // Four windows fit in one batch of 16, so an epoch is one step.
    let cfg = TrainConfig {
        lambda: 0.5,
        epochs: 500,
        ..TrainConfig::default()
    };
    let windows: Vec<_> = ds.windows.iter().collect();
    let topo = modunwrap::train::dataset_topology(&ds, cfg.k).unwrap();
    let prepared: Vec<_> = windows.iter().map(|w| Prepared::new(w, &cfg).unwrap()).collect();
    let net = UnwrapNet::<f32>::init(cfg.model.clone(), derive_seed(cfg.seed, 1)).unwrap();
    let initial = mean_objective(&net, &prepared, &topo, &cfg, 1).unwrap();
    let out = fit(net, topo.clone(), &windows, &[], &cfg, 1).unwrap();
    let last = mean_objective(&out.net, &prepared, &topo, &cfg, 1).unwrap();
    let acc = evaluate(&out.net, &windows, &topo, 1).unwrap().accuracy;
    let ratio = last / initial;
    verdict(
        6,
        "overfit sanity",
        ratio < 0.05 && acc > 95.0,
        start.elapsed(),
        Some(Duration::from_secs(600)),
        &format!("loss {initial:.4} -> {last:.4} (ratio {ratio:.3}, need < 0.05), accuracy {acc:.2}% (need > 95%)"),
    );
}

#[test]
fn criterion_07_desk_scale_ordering() {
    let _g = serial();
    let start = Instant::now();
    let Desk { data, plan } = desk();
    let outcome = train(data, plan, None, &desk_train_config(0), 1).unwrap();
    let test = data.windows_of(&plan.test);
    let topo = &outcome.topology;
    let model = evaluate(&outcome.net, &test, topo, 1).unwrap();
    let opts = BaselineOptions::default();
    let mut detail = format!(
        "{} test windows; model acc {:.2}% mse {:.4}",
        test.len(),
        model.accuracy,
        model.mse
    );
    let mut pass = true;
    for method in [Method::Mrf, Method::Sparse] {
        let recs = recover_baseline(&test, topo, method, opts, 1).unwrap();
        let base = score(&test, &recs).unwrap();
        let tt = paired_ttest(&model.window_mse(), &base.window_mse()).unwrap();
        let ok = model.accuracy > base.accuracy && tt.mean_diff < 0.0 && tt.p_value < 0.01;
        pass &= ok;
        detail += &format!(
            "; {method:?} acc {:.2}% mse {:.4}, paired t {:.2} p {:.2e}",
            base.accuracy, base.mse, tt.t, tt.p_value
        );
    }
    verdict(
        7,
        "desk-scale ordering",
        pass,
        start.elapsed(),
        Some(Duration::from_secs(2 * 3600)),
        &detail,
    );
}

#[test]
fn criterion_08_ablation_direction() {
    let _g = serial();
    let start = Instant::now();
    let Desk { data, plan } = desk();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..10 {
        let ab = run_ablation(data, plan, None, &desk_train_config(seed), 1).unwrap();
        let (on, off) = (ab.with_pgfi.test.mse, ab.without_pgfi.test.mse);
        wins += usize::from(on <= off);
        rows.push(format!("{seed}:{on:.4}/{off:.4}"));
    }
    verdict(
        8,
        "ablation direction",
        wins >= 7,
        start.elapsed(),
        None,
        &format!(
            "PGFI-on MSE <= PGFI-off in {wins}/10 seeds (need >= 7); seed:on/off {}",
            rows.join(" ")
        ),
    );
}

#[test]
fn criterion_09_determinism() {
    let _g = serial();
    let start = Instant::now();
    let run = || {
        let synth = SynthConfig {
            num_subjects: 3,
            duration_s: 2.0,
            channels: 4,
            seed: 3,
            ..SynthConfig::default()
        };
        let ds = Dataset::from_recordings(&synth_generate(&synth).unwrap(), 32)
            .unwrap()
            .fold(0.5)
            .unwrap();
        let mut container = Vec::new();
        write_dataset(&ds, &mut container).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            k: 2,
            model: ModelConfig {
                hidden_dim: 8,
                num_layers: 1,
                num_heads: 2,
                pre_hidden: 4,
                z_max: 3,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        let plan = SplitPlan::fixed(&ds.subjects(), 1, 1, 1).unwrap();
        let out = train(&ds, &plan, None, &cfg, 2).unwrap();
        let mut checkpoint = Vec::new();
        write_checkpoint(out.net.params(), &mut checkpoint).unwrap();
        let test = ds.windows_of(&plan.test);
        let metrics = evaluate(&out.net, &test, &out.topology, 2).unwrap();
        (container, checkpoint, out.history.to_tsv(), format!("{metrics:?}"))
    };
    let (a, b) = (run(), run());
    let same = [a.0 == b.0, a.1 == b.1, a.2 == b.2, a.3 == b.3];
    verdict(
        9,
        "determinism",
        same.iter().all(|&s| s),
        start.elapsed(),
        None,
        &format!("identical container/checkpoint/history/metrics: {same:?}"),
    );
}

/// Two-sided paired t-test p-value through an independent Student-t CDF.
fn reference_p(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
    2.0 * (1.0 - dist.cdf(t.abs()))
}

#[test]
fn criterion_10_metrics() {
    let _g = serial();
    let start = Instant::now();
    let mut failures = Vec::new();
    let r = pearson_r(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
    if (r - 0.5).abs() > 1e-12 {
        failures.push(format!("r([1,2,3],[1,3,2]) = {r}"));
    }
    let r = pearson_r(&[1.0, 2.0, 3.0, 4.0], &[8.0, 6.0, 4.0, 2.0]).unwrap();
    if (r + 1.0).abs() > 1e-12 {
        failures.push(format!("perfect anticorrelation gave {r}"));
    }
    if pearson_r(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_ok() {
        failures.push("constant input accepted".into());
    }

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(10);
    let a: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
    let base = pearson_r(&a, &b).unwrap();
    let scaled: Vec<f64> = b.iter().map(|v| 3.5 * v - 7.0).collect();
    let r_aff = pearson_r(&a, &scaled).unwrap();
    if (r_aff - base).abs() > 1e-12 {
        failures.push(format!("affine invariance: {base} vs {r_aff}"));
    }

    let mut worst = 0.0f64;
    for case in 0..20 {
        let n = 3 + case * 4;
        let shift = rng.gen_range(-0.5..0.5);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| v + shift + rng.gen_range(-1.0..1.0)).collect();
        let ours = paired_ttest(&a, &b).unwrap().p_value;
        worst = worst.max((ours - reference_p(&a, &b)).abs());
    }
    if worst >= 1e-9 {
        failures.push(format!("t-test p differs from reference by {worst:.3e}"));
    }
    verdict(
        10,
        "metrics",
        failures.is_empty(),
        start.elapsed(),
        None,
        &format!(
            "pearson hand cases and affine invariance, 20 t-tests max |Δp| {worst:.3e}{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failures: {}", failures.join(", "))
            }
        ),
    );
}
