//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each, and exits nonzero if any failed.
//!
//! The full-scale benchmark runs are shared between criteria; expect this
//! target to take tens of minutes on a single core.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bdcm::diffusion::{decode, make_schedule, sample_bdcm, sample_dcm, train_bdcm, train_dcm, NoisePredictor, TrainConfig};
use bdcm::graph::{satisfies_backdoor, Dag, NodeSet};
use bdcm::harness::{generate_outcome, run_experiment_detailed, ExperimentConfig, ExperimentRun, Method};
use bdcm::metrics::{median_heuristic, mmd, KernelSpec};
use bdcm::neural::{Mlp, NetSpec, NeuralError};
use bdcm::scm::{sample_interventional, sample_observational, Intervention};
use bdcm::BuiltinScm;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pop_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn check(ok: bool, details: String) -> Outcome {
    if ok {
        Ok(details)
    } else {
        Err(details)
    }
}

struct FullRuns {
    runs: BTreeMap<BuiltinScm, (ExperimentConfig, ExperimentRun, Duration)>,
    _dir: tempfile::TempDir,
    dir: std::path::PathBuf,
}

fn full_runs() -> FullRuns {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().to_path_buf();
    let mut runs = BTreeMap::new();
    for scm in BuiltinScm::ALL {
        let mut cfg = ExperimentConfig::new(scm);
        cfg.out_dir = Some(path.join("first"));
        let start = Instant::now();
        let run = run_experiment_detailed(&cfg).expect("full run");
        let took = start.elapsed();
        eprintln!("  full run {scm}: {:.0}s", took.as_secs_f64());
        runs.insert(scm, (cfg, run, took));
    }
    FullRuns { runs, _dir: dir, dir: path }
}

fn row(run: &ExperimentRun, method: Method) -> (f64, f64) {
    let r = run.rows.iter().find(|r| r.method == method).expect("row");
    (r.mmd_mean, r.mmd_std)
}

fn criterion_1(full: &FullRuns) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut total = Duration::ZERO;
    for (scm, (_, run, took)) in &full.runs {
        total += *took;
        let (dm, ds) = row(run, Method::Dcm);
        let (bm, bs) = row(run, Method::Bdcm);
        let pass = if *scm == BuiltinScm::M2Simple {
            let pooled = ((ds * ds + bs * bs) / 2.0).sqrt();
            (dm - bm).abs() < pooled
        } else {
            bm < dm
        };
        ok &= pass;
        parts.push(format!("{scm} dcm {dm:.3e}±{ds:.2e} bdcm {bm:.3e}±{bs:.2e} [{}]", if pass { "ok" } else { "X" }));
    }
    parts.push(format!("full scale {:.0}s", total.as_secs_f64()));
    ok &= total < Duration::from_secs(2 * 3600);

    let start = Instant::now();
    for scm in [BuiltinScm::M1Complex, BuiltinScm::M2Complex] {
        let run = run_experiment_detailed(&ExperimentConfig::reduced(scm)).expect("reduced run");
        let (dm, _) = row(&run, Method::Dcm);
        let (bm, _) = row(&run, Method::Bdcm);
        ok &= bm < dm;
        parts.push(format!("reduced {scm} dcm {dm:.3e} bdcm {bm:.3e} [{}]", if bm < dm { "ok" } else { "X" }));
    }
    let reduced = start.elapsed();
    ok &= reduced < Duration::from_secs(15 * 60);
    parts.push(format!("reduced {:.0}s", reduced.as_secs_f64()));
    check(ok, parts.join("; "))
}

fn criterion_2(full: &FullRuns) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (scm, (cfg, run, _)) in &full.runs {
        assert_eq!(cfg.n_generate, 500);
        assert_eq!(cfg.kernel, KernelSpec::median_heuristic());
        for method in Method::ALL {
            let (m, _) = row(run, method);
            let pass = m > 1e-4 && m < 1e-1;
            ok &= pass;
            parts.push(format!("{scm}/{method} {m:.3e}{}", if pass { "" } else { " [X]" }));
        }
    }
    check(ok, parts.join(", "))
}

/// Upper-triangular DAGs on `d` nodes, one per edge bitmask; every DAG is
/// isomorphic to one of them.
fn dag_from_bits(d: usize, bits: u32) -> (Dag, Vec<u32>) {
    let mut edges = Vec::new();
    let mut parents = vec![0u32; d];
    let mut k = 0;
    for i in 0..d {
        for j in i + 1..d {
            if bits >> k & 1 == 1 {
                edges.push((i + 1, j + 1));
                parents[j] |= 1 << i;
            }
            k += 1;
        }
    }
    (Dag::new(d, edges).expect("acyclic"), parents)
}

/// `x` and `y` are d-separated by `z` in the graph with `x`'s outgoing edges
/// removed, via the moralized ancestral graph; `z` must also avoid `x`'s
/// descendants.
fn backdoor_oracle(d: usize, parents: &[u32], x: usize, y: usize, z: u32) -> bool {
    let mut children = vec![0u32; d];
    for (j, &p) in parents.iter().enumerate() {
        for i in 0..d {
            if p >> i & 1 == 1 {
                children[i] |= 1 << j;
            }
        }
    }
    let mut de = 0u32;
    let mut stack = vec![x];
    while let Some(n) = stack.pop() {
        for c in 0..d {
            if children[n] >> c & 1 == 1 && de >> c & 1 == 0 {
                de |= 1 << c;
                stack.push(c);
            }
        }
    }
    if de & z != 0 {
        return false;
    }
    // cut x's outgoing edges
    let cut: Vec<u32> = (0..d).map(|j| parents[j] & !(1 << x)).collect();
    let mut anc = (1u32 << x) | (1 << y) | z;
    loop {
        let mut next = anc;
        for j in 0..d {
            if anc >> j & 1 == 1 {
                next |= cut[j];
            }
        }
        if next == anc {
            break;
        }
        anc = next;
    }
    let mut adj = vec![0u32; d];
    for j in 0..d {
        if anc >> j & 1 == 0 {
            continue;
        }
        let p = cut[j] & anc;
        for i in 0..d {
            if p >> i & 1 == 1 {
                adj[i] |= 1 << j;
                adj[j] |= 1 << i;
                adj[i] |= p & !(1 << i);
            }
        }
    }
    let mut seen = 1u32 << x;
    let mut stack = vec![x];
    while let Some(n) = stack.pop() {
        let nbrs = adj[n] & !z & !seen;
        for m in 0..d {
            if nbrs >> m & 1 == 1 {
                if m == y {
                    return false;
                }
                seen |= 1 << m;
                stack.push(m);
            }
        }
    }
    true
}

fn criterion_3() -> Outcome {
    let mut checked = 0u64;
    let mut disagreements = Vec::new();
    for d in 2..=6usize {
        for bits in 0..1u32 << (d * (d - 1) / 2) {
            let (dag, parents) = dag_from_bits(d, bits);
            for x in 0..d {
                for y in 0..d {
                    if x == y {
                        continue;
                    }
                    let rest: Vec<usize> = (0..d).filter(|&n| n != x && n != y).collect();
                    for mask in 0..1u32 << rest.len() {
                        let z: u32 = rest.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &n)| 1 << n).sum();
                        let set: NodeSet = (0..d).filter(|&n| z >> n & 1 == 1).map(|n| n + 1).collect();
                        let got = satisfies_backdoor(&dag, x + 1, y + 1, &set).expect("valid query");
                        checked += 1;
                        if got != backdoor_oracle(d, &parents, x, y, z) && disagreements.len() < 5 {
                            disagreements.push(format!("{:?} x={} y={} z={set:?}", dag.edges(), x + 1, y + 1));
                        }
                    }
                }
            }
        }
    }
    check(
        disagreements.is_empty(),
        format!("{checked} (dag, x, y, Z) cases, {} disagreements {disagreements:?}", disagreements.len()),
    )
}

fn naive_mmd(x: &[f64], y: &[f64], h: f64) -> f64 {
    let k = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * h * h)).exp();
    let avg = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for &u in a {
            for &v in b {
                s += k(u, v);
            }
        }
        s / (a.len() * b.len()) as f64
    };
    avg(x, x) + avg(y, y) - 2.0 * avg(x, y)
}

fn criterion_4() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut self_zero = true;
    for n in 2..=50 {
        for _ in 0..4 {
            let m = r.random_range(2..=50);
            let x: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let y: Vec<f64> = (0..m).map(|_| r.sample::<f64, _>(StandardNormal) * 1.5 + 0.7).collect();
            let h = median_heuristic(&x, &y);
            let got = mmd(&x, &y, &KernelSpec::median_heuristic()).unwrap();
            worst = worst.max((got - naive_mmd(&x, &y, h).max(0.0)).abs());
            let fixed = KernelSpec::fixed(0.8).unwrap();
            worst = worst.max((mmd(&x, &y, &fixed).unwrap() - naive_mmd(&x, &y, 0.8).max(0.0)).abs());
            self_zero &= mmd(&x, &x, &KernelSpec::median_heuristic()).unwrap() == 0.0;
        }
    }
    check(worst < 1e-12 && self_zero, format!("max |mmd - oracle| = {worst:.2e}, mmd(x, x) == 0: {self_zero}"))
}

fn criterion_5() -> Outcome {
    let mut worst = 0.0f64;
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..5u64 {
        let input_dim = 2 + seed as usize % 3;
        let spec = NetSpec::new(input_dim, &[5, 7, 6], seed).unwrap();
        let mut net = Mlp::new(spec);
        let rows = 6;
        let inputs = Array2::from_shape_fn((rows, input_dim), |_| r.sample::<f64, _>(StandardNormal));
        let targets = Array2::from_shape_fn((rows, 1), |_| r.sample::<f64, _>(StandardNormal));
        let (_, grad) = net.mse_and_gradient(inputs.view(), targets.view()).unwrap();
        let h = 1e-5;
        let n = net.params().len();
        for _ in 0..40 {
            let k = r.random_range(0..n);
            let orig = net.params()[k];
            net.params_mut()[k] = orig + h;
            let (up, _) = net.mse_and_gradient(inputs.view(), targets.view()).unwrap();
            net.params_mut()[k] = orig - h;
            let (down, _) = net.mse_and_gradient(inputs.view(), targets.view()).unwrap();
            net.params_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    check(worst < 1e-4, format!("max relative error {worst:.2e} over 5 networks x 40 coordinates"))
}

struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn conditioning_width(&self) -> usize {
        0
    }

    fn predict(&self, noised: &[f64], _: ArrayView2<'_, f64>, _: usize) -> Result<Vec<f64>, NeuralError> {
        Ok(vec![0.0; noised.len()])
    }
}

fn criterion_6() -> Outcome {
    let s = make_schedule(100).unwrap();
    let mut worst = 0.0f64;
    for z in [-3.0, -1.2, -0.01, 0.0, 0.4, 1.0, 2.7] {
        let out = decode(&ZeroPredictor, z, &[], &s).unwrap();
        worst = worst.max((out - z / s.alpha(100).sqrt()).abs());
    }
    let endpoints = s.beta(1) == 1e-4 && s.beta(100) == 0.1;
    check(
        worst < 1e-9 && endpoints,
        format!("max |decode - z/sqrt(alpha_T)| = {worst:.2e}; beta_1 = {}, beta_T = {}", s.beta(1), s.beta(100)),
    )
}

fn criterion_7(full: &FullRuns) -> Outcome {
    let scm = BuiltinScm::M1Simple.scm();
    let n = 100_000;
    let xs = [-2.0, -1.0, 1.0, 2.0];
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, &x) in xs.iter().enumerate() {
        let ys = sample_interventional(&scm, Intervention::new(2, x), 5, n, 70 + k as u64).unwrap();
        let se = pop_std(&ys) / (n as f64).sqrt();
        let pass = (mean(&ys) - x).abs() < 3.0 * se;
        ok &= pass;
        parts.push(format!("oracle E[X5|do({x})] = {:.4} (3se {:.4})", mean(&ys), 3.0 * se));
    }
    let (cfg, run, _) = &full.runs[&BuiltinScm::M1Simple];
    for &x in &xs {
        let mut err = BTreeMap::new();
        for models in &run.models {
            let norm = models.dcm.normalization();
            let (t2, t5) = (norm[1].unwrap(), norm[4].unwrap());
            for method in Method::ALL {
                let out = generate_outcome(cfg, models, method, t2.apply(x), 2000, 7_000 + models.seed).unwrap();
                let raw_mean = t5.invert(mean(&out));
                *err.entry(method).or_insert(0.0) += (raw_mean - x).abs() / run.models.len() as f64;
            }
        }
        let pass = err[&Method::Bdcm] < err[&Method::Dcm];
        ok &= pass;
        parts.push(format!(
            "x={x}: |mean err| bdcm {:.3} dcm {:.3}{}",
            err[&Method::Bdcm],
            err[&Method::Dcm],
            if pass { "" } else { " [X]" }
        ));
    }
    check(ok, parts.join("; "))
}

fn criterion_8(full: &FullRuns) -> Outcome {
    let mut total = 0;
    for (_, run, _) in full.runs.values() {
        total += run.models.iter().map(|m| m.masked_reads).sum::<usize>();
    }
    let sched = make_schedule(100).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        hidden: vec![8, 8, 8],
        ..TrainConfig::default()
    };
    let mut refused_probe = true;
    for which in BuiltinScm::ALL {
        let data = sample_observational(&which.scm(), 200, 8).unwrap().normalize().unwrap();
        let dag = which.dag();
        let (cause, _) = which.query();
        let dcm = train_dcm(&data, &dag, &sched, &cfg).unwrap();
        let bdcm = train_bdcm(&data, &dag, Intervention::new(cause, 0.5), &sched, &cfg).unwrap();
        let out_a = sample_dcm(&dcm, Intervention::new(cause, 0.5), 100, 1).unwrap();
        let out_b = sample_bdcm(&bdcm, 100, 1).unwrap();
        total += data.masked_reads() + out_a.masked_reads() + out_b.masked_reads();
        // the counters do see a deliberate read
        let hidden = dag.unobserved()[0];
        refused_probe &= data.column(hidden).is_err() && data.masked_reads() == 1;
    }
    check(
        total == 0 && refused_probe,
        format!("masked-column reads during training and sampling: {total}; probe read refused and counted: {refused_probe}"),
    )
}

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap().to_string_lossy().starts_with("raw_") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_9(full: &FullRuns) -> Outcome {
    let (cfg, _, _) = &full.runs[&BuiltinScm::M1Simple];
    let mut again = cfg.clone();
    again.out_dir = Some(full.dir.join("second"));
    run_experiment_detailed(&again).expect("rerun");
    let first = full.dir.join("first").join("m1_simple");
    let second = full.dir.join("second").join("m1_simple");
    let files = files_under(&first);
    let same = files.len() == cfg.seeds.len() * 2
        && files_under(&second) == files
        && files.iter().all(|f| fs::read(first.join(f)).unwrap() == fs::read(second.join(f)).unwrap());
    check(same, format!("m1_simple full rerun, {} raw files compared byte-for-byte", files.len()))
}

fn report(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(d) => println!("criterion {id} ({name}): PASS [{secs:.0}s] {d}"),
        Err(d) => println!("criterion {id} ({name}): FAIL [{secs:.0}s] {d}"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    results.push(report(3, "backdoor vs d-separation oracle, d <= 6", criterion_3));
    results.push(report(4, "MMD vs double-loop oracle", criterion_4));
    results.push(report(5, "analytic vs finite-difference gradients", criterion_5));
    results.push(report(6, "DDIM zero-predictor identity and schedule endpoints", criterion_6));

    let start = Instant::now();
    let full = full_runs();
    println!("full-scale runs finished in {:.0}s", start.elapsed().as_secs_f64());
    results.push(report(1, "method ordering, full and reduced protocol", || criterion_1(&full)));
    results.push(report(2, "MMD scale in (1e-4, 1e-1)", || criterion_2(&full)));
    results.push(report(7, "interventional mean oracle and BDCM vs DCM", || criterion_7(&full)));
    results.push(report(8, "no reads of unobserved columns", || criterion_8(&full)));
    results.push(report(9, "byte-identical reruns", || criterion_9(&full)));

    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
