//! Classical recovery methods: sequential per-channel unwrapping, iterated
//! conditional modes on a first-difference energy, and a real relaxation of
//! the same energy solved by coordinate descent.
//!
//! All methods share the energy
//! `E(z) = Σ_{(u,v)} |(λ z_u + p_u) − (λ z_v + p_v)|` over graph edges and
//! return integer fold counts, so `x̂ − p` is always a multiple of `λ`.

use ndarray::Array2;
use thiserror::Error;

use crate::graph::{GraphTopology, WindowGraph};
use crate::scalar::Scalar;
use crate::signal::{unfold_with, FoldedWindow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("graph of shape {graph:?} does not match window of shape {window:?}")]
    GraphMismatch {
        graph: Option<(usize, usize)>,
        window: (usize, usize),
    },
    #[error("window has {0} samples; at least 2 are needed")]
    TooShort(usize),
    #[error("z_max must be positive, got {0}")]
    BadRange(i32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult<T> {
    pub x_hat: Array2<T>,
    pub z_hat: Array2<i32>,
    /// Sweeps (or coordinate-descent rounds plus the polish sweep).
    pub iterations_used: usize,
    pub converged: bool,
}

impl<T: Scalar> BaselineResult<T> {
    fn new(folded: &FoldedWindow<T>, z_hat: Array2<i32>, iterations_used: usize, converged: bool) -> Self {
        let x_hat = unfold_with(folded.p(), &z_hat, folded.lambda());
        Self {
            x_hat,
            z_hat,
            iterations_used,
            converged,
        }
    }
}

/// How ICM picks its starting fold counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MrfInit {
    Itoh,
    Zero,
}

impl std::str::FromStr for MrfInit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "itoh" => Ok(Self::Itoh),
            "zero" => Ok(Self::Zero),
            other => Err(format!("unknown initialization `{other}` (expected itoh or zero)")),
        }
    }
}

/// Sequential unwrapping per channel with `z = 0` at the first sample.
pub fn itoh_unwrap<T: Scalar>(folded: &FoldedWindow<T>) -> Result<BaselineResult<T>, BaselineError> {
    let t_len = folded.len();
    if t_len < 2 {
        return Err(BaselineError::TooShort(t_len));
    }
    Ok(BaselineResult::new(folded, itoh_counts(folded), 1, true))
}

fn itoh_counts<T: Scalar>(folded: &FoldedWindow<T>) -> Array2<i32> {
    let p = folded.p();
    let lambda = folded.lambda().as_f64();
    let (t_len, channels) = p.dim();
    let mut z = Array2::zeros((t_len, channels));
    for c in 0..channels {
        for t in 1..t_len {
            let step = (p[[t, c]] - p[[t - 1, c]]).as_f64() / lambda;
            z[[t, c]] = z[[t - 1, c]] - step.round() as i32;
        }
    }
    z
}

fn check_graph<T: Scalar>(folded: &FoldedWindow<T>, topology: &GraphTopology) -> Result<(), BaselineError> {
    let window = folded.p().dim();
    if topology.shape() != Some(window) {
        return Err(BaselineError::GraphMismatch {
            graph: topology.shape(),
            window,
        });
    }
    Ok(())
}

/// Shared first-difference energy of integer fold counts.
pub fn energy<T: Scalar>(p: &Array2<T>, z: &Array2<i32>, lambda: T, topology: &GraphTopology) -> f64 {
    let lambda = lambda.as_f64();
    let p = p.as_slice().expect("standard layout");
    let z = z.as_slice().expect("standard layout");
    topology
        .edges()
        .iter()
        .map(|&(u, v)| (lambda * f64::from(z[u] - z[v]) + (p[u] - p[v]).as_f64()).abs())
        .sum()
}

/// Energy of real-valued fold counts.
fn relaxed_energy(p: &[f64], z: &[f64], lambda: f64, topology: &GraphTopology) -> f64 {
    topology
        .edges()
        .iter()
        .map(|&(u, v)| (lambda * (z[u] - z[v]) + p[u] - p[v]).abs())
        .sum()
}

/// Energy terms touching node `u` with fold count `zu`.
fn local_energy(u: usize, zu: i32, p: &[f64], z: &[i32], lambda: f64, topology: &GraphTopology) -> f64 {
    let xu = lambda * f64::from(zu) + p[u];
    topology
        .neighbors()
        .row(u)
        .iter()
        .map(|&v| (xu - lambda * f64::from(z[v]) - p[v]).abs())
        .sum()
}

/// One ICM sweep in node order. A node moves only when a neighbouring count
/// is strictly better. Returns the number of changed nodes.
fn icm_sweep(p: &[f64], z: &mut [i32], lambda: f64, z_max: i32, topology: &GraphTopology) -> usize {
    let mut changed = 0;
    for u in 0..z.len() {
        let current = z[u];
        let mut best = (local_energy(u, current, p, z, lambda, topology), current);
        for cand in [current - 1, current + 1] {
            if cand.abs() > z_max {
                continue;
            }
            let e = local_energy(u, cand, p, z, lambda, topology);
            if e < best.0 {
                best = (e, cand);
            }
        }
        if best.1 != current {
            z[u] = best.1;
            changed += 1;
        }
    }
    changed
}

fn as_f64_vec<T: Scalar>(p: &Array2<T>) -> Vec<f64> {
    p.iter().map(|v| v.as_f64()).collect()
}

/// Iterated conditional modes on the shared energy with candidate moves
/// `{z − 1, z, z + 1}` inside `±z_max`, sweeping until nothing changes or
/// `max_iters` sweeps have run.
pub fn mrf_recover<T: Scalar>(
    folded: &FoldedWindow<T>,
    graph: &WindowGraph<T>,
    max_iters: usize,
    init: MrfInit,
    z_max: i32,
) -> Result<BaselineResult<T>, BaselineError> {
    let z0 = match init {
        MrfInit::Itoh => itoh_counts(folded),
        MrfInit::Zero => Array2::zeros(folded.p().dim()),
    };
    mrf_from(folded, graph, z0, max_iters, z_max)
}

/// ICM from explicit starting fold counts.
pub fn mrf_from<T: Scalar>(
    folded: &FoldedWindow<T>,
    graph: &WindowGraph<T>,
    z: Array2<i32>,
    max_iters: usize,
    z_max: i32,
) -> Result<BaselineResult<T>, BaselineError> {
    mrf_traced(folded, graph, z, max_iters, z_max).map(|(r, _)| r)
}

/// As [`mrf_from`], also returning the energy before the first sweep and
/// after every sweep.
pub fn mrf_traced<T: Scalar>(
    folded: &FoldedWindow<T>,
    graph: &WindowGraph<T>,
    mut z: Array2<i32>,
    max_iters: usize,
    z_max: i32,
) -> Result<(BaselineResult<T>, Vec<f64>), BaselineError> {
    check_graph(folded, graph.topology())?;
    if z_max < 1 {
        return Err(BaselineError::BadRange(z_max));
    }
    let p = as_f64_vec(folded.p());
    let lambda = folded.lambda().as_f64();
    let zs = z.as_slice_mut().expect("standard layout");
    let topology = graph.topology();
    let z_energy = |z: &[i32]| -> f64 {
        topology
            .edges()
            .iter()
            .map(|&(u, v)| (lambda * f64::from(z[u] - z[v]) + p[u] - p[v]).abs())
            .sum()
    };
    let mut trace = vec![z_energy(zs)];
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_iters {
        sweeps += 1;
        let changed = icm_sweep(&p, zs, lambda, z_max, topology);
        trace.push(z_energy(zs));
        if changed == 0 {
            converged = true;
            break;
        }
    }
    Ok((BaselineResult::new(folded, z, sweeps, converged), trace))
}

/// Objective values along the relaxation pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseTrace {
    pub relaxed: f64,
    pub rounded: f64,
    pub polished: f64,
}

/// Median-interval point closest to `current`. Equal weights, so any point
/// between the two middle order statistics is optimal.
fn median_step(targets: &mut [f64], current: f64) -> f64 {
    targets.sort_by(|a, b| a.total_cmp(b));
    let n = targets.len();
    let (lo, hi) = if n % 2 == 1 {
        (targets[n / 2], targets[n / 2])
    } else {
        (targets[n / 2 - 1], targets[n / 2])
    };
    current.clamp(lo, hi)
}

/// Coordinate descent on real fold counts (started from sequential
/// unwrapping), rounding, then one ICM polish sweep.
pub fn sparse_opt_recover<T: Scalar>(
    folded: &FoldedWindow<T>,
    graph: &WindowGraph<T>,
    rounds: usize,
    z_max: i32,
) -> Result<BaselineResult<T>, BaselineError> {
    sparse_opt_traced(folded, graph, rounds, z_max).map(|(r, _)| r)
}

pub fn sparse_opt_traced<T: Scalar>(
    folded: &FoldedWindow<T>,
    graph: &WindowGraph<T>,
    rounds: usize,
    z_max: i32,
) -> Result<(BaselineResult<T>, SparseTrace), BaselineError> {
    check_graph(folded, graph.topology())?;
    if z_max < 1 {
        return Err(BaselineError::BadRange(z_max));
    }
    let topology = graph.topology();
    let p = as_f64_vec(folded.p());
    let lambda = folded.lambda().as_f64();
    let bound = f64::from(z_max);
    let mut z: Vec<f64> = itoh_counts(folded)
        .iter()
        .map(|&v| f64::from(v.clamp(-z_max, z_max)))
        .collect();

    let mut targets = Vec::new();
    let mut used = 0;
    let mut converged = false;
    while used < rounds {
        used += 1;
        let mut moved = 0.0f64;
        for u in 0..z.len() {
            let nbrs = topology.neighbors().row(u);
            if nbrs.is_empty() {
                continue;
            }
            targets.clear();
            targets.extend(nbrs.iter().map(|&v| z[v] + (p[v] - p[u]) / lambda));
            let next = median_step(&mut targets, z[u]).clamp(-bound, bound);
            moved = moved.max((next - z[u]).abs());
            z[u] = next;
        }
        if moved < 1e-12 {
            converged = true;
            break;
        }
    }
    let relaxed = relaxed_energy(&p, &z, lambda, topology);

    let (t_len, channels) = folded.p().dim();
    let mut zi: Vec<i32> = z.iter().map(|v| v.round() as i32).collect();
    let rounded = relaxed_energy(
        &p,
        &zi.iter().map(|&v| f64::from(v)).collect::<Vec<_>>(),
        lambda,
        topology,
    );
    icm_sweep(&p, &mut zi, lambda, z_max, topology);
    let z_hat = Array2::from_shape_vec((t_len, channels), zi).expect("one count per node");
    let polished = energy(folded.p(), &z_hat, folded.lambda(), topology);
    let result = BaselineResult::new(folded, z_hat, used + 1, converged);
    Ok((
        result,
        SparseTrace {
            relaxed,
            rounded,
            polished,
        },
    ))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::graph::{build_graph, Montage};
    use crate::signal::{fold, SignalWindow};
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn folded(x: Array2<f64>, lambda: f64) -> FoldedWindow<f64> {
        fold(&SignalWindow::from_matrix(x), lambda).unwrap()
    }

    /// Temporal chains only.
    fn chain(f: &FoldedWindow<f64>) -> WindowGraph<f64> {
        let topo = GraphTopology::spatio_temporal(f.len(), f.channels(), &[]).unwrap();
        WindowGraph::with_topology(f, Arc::new(topo)).unwrap()
    }

    fn graph(f: &FoldedWindow<f64>) -> WindowGraph<f64> {
        if f.channels() < 2 {
            return chain(f);
        }
        let k = 2.min(f.channels() - 1);
        build_graph(f, &Montage::linear(f.channels()).unwrap(), k).unwrap()
    }

    fn multiple_of_lambda(r: &BaselineResult<f64>, f: &FoldedWindow<f64>) {
        for ((x, p), z) in r.x_hat.iter().zip(f.p()).zip(&r.z_hat) {
            assert_eq!(*x, f.lambda() * f64::from(*z) + p);
        }
    }

    /// Minimum energy over all `z ∈ {−1, 0, 1}^T` of a one-channel window.
    fn exhaustive_min(f: &FoldedWindow<f64>, g: &WindowGraph<f64>) -> f64 {
        let t = f.len();
        let mut best = f64::INFINITY;
        for code in 0..3usize.pow(t as u32) {
            let mut c = code;
            let z = Array2::from_shape_fn((t, 1), |_| {
                let v = (c % 3) as i32 - 1;
                c /= 3;
                v
            });
            best = best.min(energy(f.p(), &z, f.lambda(), g.topology()));
        }
        best
    }

    #[test]
    fn constant_signal() {
        let f = folded(Array2::from_elem((5, 2), 0.2), 0.5);
        let r = itoh_unwrap(&f).unwrap();
        assert!(r.z_hat.iter().all(|&z| z == 0));
        assert_eq!(&r.x_hat, f.p());
    }

    #[test]
    fn slow_ramp_is_exact() {
        let lambda = 0.5;
        let x = Array2::from_shape_fn((40, 2), |(t, c)| 0.1 + 0.1 * c as f64 + 0.2 * lambda * t as f64);
        let f = folded(x.clone(), lambda);
        let r = itoh_unwrap(&f).unwrap();
        let mse = (&r.x_hat - &x).mapv(|d| d * d).mean().unwrap();
        assert!(mse < 1e-20, "{mse}");
    }

    #[test]
    fn large_jump_loses_one_period() {
        let lambda = 0.5;
        let x = array![[0.1], [0.1 + 0.9 * lambda], [0.1 + 0.9 * lambda]];
        let f = folded(x.clone(), lambda);
        let r = itoh_unwrap(&f).unwrap();
        assert_eq!(r.x_hat[[0, 0]], x[[0, 0]]);
        for t in 1..3 {
            assert!((x[[t, 0]] - r.x_hat[[t, 0]] - lambda).abs() < 1e-12);
        }
        assert!(matches!(
            itoh_unwrap(&folded(array![[0.1]], 0.5)),
            Err(BaselineError::TooShort(1))
        ));
    }

    #[test]
    fn ground_truth_is_icm_fixed_point_on_smooth_signal() {
        let x = Array2::from_shape_fn((30, 3), |(t, c)| (t as f64 * 0.1 + c as f64 * 0.05).sin() * 1.5);
        let f = folded(x.clone(), 0.4);
        let g = graph(&f);
        let r = mrf_from(&f, &g, f.z().unwrap().clone(), 10, 8).unwrap();
        assert_eq!(r.iterations_used, 1);
        assert!(r.converged);
        assert_eq!(&r.z_hat, f.z().unwrap());
    }

    #[test]
    fn toy_chain_reaches_exhaustive_minimum() {
        let f = folded(array![[0.3], [0.6], [0.9]], 0.5);
        let g = chain(&f);
        let best = exhaustive_min(&f, &g);
        let m = mrf_recover(&f, &g, 50, MrfInit::Itoh, 8).unwrap();
        assert!((energy(f.p(), &m.z_hat, 0.5, g.topology()) - best).abs() < 1e-12);
        assert_eq!(m.z_hat, array![[0], [0], [-1]]);
        let s = sparse_opt_recover(&f, &g, 50, 8).unwrap();
        assert!((energy(f.p(), &s.z_hat, 0.5, g.topology()) - best).abs() < 1e-12);
        multiple_of_lambda(&m, &f);
        multiple_of_lambda(&s, &f);
    }

    #[test]
    fn unfolded_input_stays_put() {
        let x = Array2::from_shape_fn((10, 3), |(t, c)| 0.1 + 0.01 * (t + c) as f64);
        let f = folded(x, 0.5);
        let s = sparse_opt_recover(&f, &graph(&f), 20, 8).unwrap();
        assert!(s.z_hat.iter().all(|&z| z == 0));
    }

    #[test]
    fn graph_mismatch() {
        let f = folded(Array2::zeros((4, 2)), 0.5);
        let other = folded(Array2::zeros((5, 2)), 0.5);
        let g = chain(&other);
        assert!(matches!(
            mrf_recover(&f, &g, 5, MrfInit::Zero, 8),
            Err(BaselineError::GraphMismatch { .. })
        ));
        assert!(sparse_opt_recover(&f, &g, 5, 8).is_err());
    }

    fn window() -> impl Strategy<Value = (Array2<f64>, f64)> {
        (2usize..7, 1usize..4, 0.3f64..0.7).prop_flat_map(|(t, c, lambda)| {
            proptest::collection::vec(-1.5f64..1.5, t * c)
                .prop_map(move |v| (Array2::from_shape_vec((t, c), v).unwrap(), lambda))
        })
    }

    proptest! {
        #[test]
        fn icm_energy_never_increases((x, lambda) in window()) {
            let f = folded(x, lambda);
            let g = graph(&f);
            let (r, trace) = mrf_traced(&f, &g, Array2::zeros(f.p().dim()), 20, 8).unwrap();
            prop_assert_eq!(trace.len(), r.iterations_used + 1);
            prop_assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", trace);
            let last = *trace.last().unwrap();
            prop_assert!((energy(f.p(), &r.z_hat, lambda, g.topology()) - last).abs() < 1e-12);
        }

        #[test]
        fn polish_never_hurts((x, lambda) in window()) {
            let f = folded(x, lambda);
            let g = graph(&f);
            let (r, trace) = sparse_opt_traced(&f, &g, 30, 8).unwrap();
            prop_assert!(trace.polished <= trace.rounded + 1e-12);
            multiple_of_lambda(&r, &f);
        }

        #[test]
        fn single_channel_matches_exhaustive(
            steps in proptest::collection::vec(-0.2f64..0.2, 1..8),
            start in 0.0f64..0.5,
        ) {
            // Smooth one-channel signals with |x| ≤ λ so z stays in {−1, 0, 1}.
            let lambda = 0.5;
            let mut x = vec![start];
            for s in &steps {
                let next = (x.last().unwrap() + s).clamp(-0.45, 0.95);
                x.push(next);
            }
            let f = folded(Array2::from_shape_vec((x.len(), 1), x).unwrap(), lambda);
            let g = chain(&f);
            let best = exhaustive_min(&f, &g);
            let m = mrf_recover(&f, &g, 100, MrfInit::Itoh, 8).unwrap();
            let s = sparse_opt_recover(&f, &g, 100, 8).unwrap();
            prop_assert!(energy(f.p(), &m.z_hat, lambda, g.topology()) <= best + 1e-9);
            prop_assert!(energy(f.p(), &s.z_hat, lambda, g.topology()) <= best + 1e-9);
        }
    }
}
