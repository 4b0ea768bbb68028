//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p dimat-cli --test acceptance`.

use std::time::{Duration, Instant};

use dimat::align::{activation_match, apply_permutation, weight_match, LayerPermutation};
use dimat::config::ExperimentConfig;
use dimat::linalg::{second_largest_magnitude, solve_lap_max, Matrix, RngStream};
use dimat::merge::{charge_communication, consensus_error, merge_round};
use dimat::nn::{self, Activation, ModelParams, ParamSet};
use dimat::optim::{local_step, HyperParams, OptimizerKind, OptimizerState};
use dimat::sim::{run_repeat, streams, Experiment};
use dimat::topology::{build_mixing, verify_rho_prime, Topology};

type Outcome = Result<String, String>;

fn config(overrides: &[&str]) -> ExperimentConfig {
    ExperimentConfig::load(None, overrides).expect("valid acceptance config")
}

fn within(elapsed: Duration, limit_s: u64, detail: String, ok: bool) -> Outcome {
    let detail = format!("{detail}; {:.2}s (limit {limit_s}s)", elapsed.as_secs_f64());
    if ok && elapsed.as_secs() < limit_s {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.standard_normal())
}

fn random_model(dims: &[usize], act: Activation, rng: &mut RngStream) -> ModelParams {
    let mut m = ModelParams::init(dims, act, rng);
    for layer in m.params.layers_mut() {
        for b in layer.bias.iter_mut() {
            *b = 0.1 * rng.standard_normal();
        }
    }
    m
}

fn random_unit_permutation(widths: &[usize], rng: &mut RngStream) -> LayerPermutation {
    LayerPermutation::new(widths.iter().map(|&w| rng.permutation(w)).collect()).unwrap()
}

/// All permutations of `0..d` (Heap's algorithm).
fn all_permutations(d: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..d).collect();
    let mut c = vec![0; d];
    let mut out = vec![a.clone()];
    let mut i = 0;
    while i < d {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

fn lap_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for d in 2..=7 {
        let perms = all_permutations(d);
        let mut rng = RngStream::new(d as u64, 11);
        for _ in 0..100 {
            let s = random_matrix(d, d, &mut rng);
            let best = perms
                .iter()
                .map(|p| p.iter().enumerate().map(|(r, &c)| s[(r, c)]).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            let got = solve_lap_max(&s).map_err(|e| e.to_string())?;
            let achieved: f64 = got.perm.iter().enumerate().map(|(r, &c)| s[(r, c)]).sum();
            worst = worst.max((best - achieved).abs());
            checked += 1;
        }
    }
    within(
        start.elapsed(),
        10,
        format!("{checked} matrices, max objective gap {worst:.2e}"),
        worst <= 1e-12,
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let dims = [5, 8, 6, 3];
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut coords = 0;
    for seed in 0..5u64 {
        let mut rng = RngStream::new(seed, 12);
        let model = random_model(&dims, Activation::Relu, &mut rng);
        let x = random_matrix(7, dims[0], &mut rng);
        let labels: Vec<usize> = (0..7).map(|_| rng.below(3)).collect();
        let targets = random_matrix(7, 3, &mut rng);
        let (_, g_ce) = nn::loss_and_grad(&model, &x, &labels).map_err(|e| e.to_string())?;
        let (_, g_mse) = nn::mse_loss_and_grad(&model, &x, &targets).map_err(|e| e.to_string())?;
        let flat = model.flatten();
        let analytic = [g_ce.flatten(), g_mse.flatten()];
        for (i, _) in flat.iter().enumerate() {
            let at = |delta: f64| {
                let mut v = flat.clone();
                v[i] += delta;
                let m = ModelParams::unflatten(&v, &dims, Activation::Relu).unwrap();
                (
                    nn::cross_entropy(&m, &x, &labels).unwrap(),
                    nn::mse(&m, &x, &targets).unwrap(),
                )
            };
            let (ce_p, mse_p) = at(h);
            let (ce_m, mse_m) = at(-h);
            let numeric = [(ce_p - ce_m) / (2.0 * h), (mse_p - mse_m) / (2.0 * h)];
            for (a, n) in analytic.iter().map(|g| g[i]).zip(numeric) {
                let scale = a.abs().max(n.abs());
                let rel = if scale < 1e-9 { (a - n).abs() } else { (a - n).abs() / scale };
                worst = worst.max(rel);
                coords += 1;
            }
        }
    }
    within(
        start.elapsed(),
        30,
        format!("{coords} coordinates (cross-entropy and MSE), max relative error {worst:.2e}"),
        worst < 1e-5,
    )
}

fn permutation_invariance() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(3, 13);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let hidden = 1 + rng.below(3);
        let mut dims = vec![2 + rng.below(7)];
        dims.extend((0..hidden).map(|_| 1 + rng.below(16)));
        dims.push(1 + rng.below(5));
        let model = random_model(&dims, Activation::Relu, &mut rng);
        let p = random_unit_permutation(&model.hidden_widths(), &mut rng);
        let x = random_matrix(6, dims[0], &mut rng);
        let before = nn::logits(&model, &x).map_err(|e| e.to_string())?;
        let permuted = apply_permutation(&model, &p).map_err(|e| e.to_string())?;
        let after = nn::logits(&permuted, &x).map_err(|e| e.to_string())?;
        worst = worst.max(before.sub(&after).unwrap().max_abs());
    }
    within(start.elapsed(), 10, format!("100 triples, max output change {worst:.2e}"), worst <= 1e-10)
}

fn planted_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(4, 14);
    let (mut am_ok, mut wm_ok) = (0, 0);
    for _ in 0..20 {
        let dims = [10, 8 + rng.below(25), 8 + rng.below(25), 5];
        let a = random_model(&dims, Activation::Relu, &mut rng);
        let sigma = random_unit_permutation(&a.hidden_widths(), &mut rng);
        let b = apply_permutation(&a, &sigma).unwrap();
        let expected = sigma.inverse();

        let batch = random_matrix(4 * dims[1].max(dims[2]), dims[0], &mut rng);
        let (_, ta) = nn::forward(&a, &batch).unwrap();
        let (_, tb) = nn::forward(&b, &batch).unwrap();
        if activation_match(&ta, &tb).map_err(|e| e.to_string())? == expected {
            am_ok += 1;
        }
        if weight_match(&a, &b, 50).map_err(|e| e.to_string())? == expected {
            wm_ok += 1;
        }
    }
    within(
        start.elapsed(),
        60,
        format!("activation matching {am_ok}/20, weight matching {wm_ok}/20"),
        am_ok == 20 && wm_ok == 20,
    )
}

fn mixing_matrices() -> Outcome {
    let fc = build_mixing(&Topology::fully_connected(5).unwrap()).map_err(|e| e.to_string())?;
    let ring = build_mixing(&Topology::ring(5).unwrap()).map_err(|e| e.to_string())?;
    let fc_exact = (0..5).all(|i| (0..5).all(|j| fc.weight(i, j) == 0.2));
    let third = 1.0 / 3.0;
    let ring_exact = (0..5).all(|i| {
        (0..5).all(|j| {
            let circulant = j == i || j == (i + 1) % 5 || j == (i + 4) % 5;
            ring.weight(i, j) == if circulant { third } else { 0.0 }
        })
    });
    let rho_fc = second_largest_magnitude(fc.matrix()).map_err(|e| e.to_string())?.powi(2);
    let sqrt_rho_ring = second_largest_magnitude(ring.matrix()).map_err(|e| e.to_string())?;
    let closed_form = (1.0 + 2.0 * (2.0 * std::f64::consts::PI / 5.0).cos()) / 3.0;
    let gap = (sqrt_rho_ring - closed_form).abs();
    let detail = format!(
        "FC-5 all 0.2: {fc_exact}; ring-5 circulant thirds: {ring_exact}; rho(FC-5) = {rho_fc}; \
         sqrt_rho(ring-5) = {sqrt_rho_ring:.12} vs {closed_form:.12} (gap {gap:.1e})"
    );
    if fc_exact && ring_exact && rho_fc == 0.0 && gap <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rho_prime() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, topo) in [("FC-5", Topology::fully_connected(5)), ("ring-5", Topology::ring(5))] {
        let pi = build_mixing(&topo.unwrap()).map_err(|e| e.to_string())?;
        let mut rng = RngStream::derive(0, streams::SPECTRAL, 0);
        let report = verify_rho_prime(&pi, 4, 100, &mut rng).map_err(|e| e.to_string())?;
        ok &= report.holds() && report.samples == 100;
        parts.push(format!(
            "{name}: sqrt_rho {:.6}, max sqrt_rho' {:.6}, {} violations",
            report.sqrt_rho,
            report.sqrt_rho_prime_max.unwrap_or(f64::NAN),
            report.violations
        ));
    }
    within(start.elapsed(), 60, parts.join("; "), ok)
}

fn amsgrad_invariants() -> Outcome {
    let dims = [4, 3, 2];
    let clip = 0.5;
    let mut monotone = true;
    let mut bounded = true;
    let mut min_u = f64::INFINITY;
    for seed in 0..5u64 {
        for clipped in [false, true] {
            let hp = HyperParams {
                clip: clipped.then_some(clip),
                alpha: 1e-3,
                ..HyperParams::default()
            };
            let mut rng = RngStream::new(seed, 17 + u64::from(clipped));
            let mut x = ModelParams::zeros(&dims, Activation::Relu);
            let mut state = OptimizerState::new(OptimizerKind::Amsgrad, &dims);
            for _ in 0..1000 {
                // Heavy-tailed stream: Gaussian times a log-normal scale.
                let scale = (2.0 * rng.standard_normal()).exp();
                let values: Vec<f64> = (0..x.num_params()).map(|_| scale * rng.standard_normal()).collect();
                let g = ParamSet::unflatten(&values, &dims).unwrap();
                let v_before = state.v.clone().unwrap();
                let u_used: Vec<f64> = state.u_hat.as_ref().unwrap().iter().map(|u| u.max(hp.epsilon)).collect();
                let (nx, ns) = local_step(&x, &state, &g, &hp).map_err(|e| e.to_string())?;
                let v_after = ns.v.as_ref().unwrap();
                monotone &= v_after.iter().zip(v_before.iter()).all(|(a, b)| a >= b);
                if clipped {
                    bounded &= v_after.iter().all(|&v| v <= clip * clip);
                }
                // u applied at the next step is max(û, ε).
                min_u = ns.u_hat.as_ref().unwrap().iter().map(|u| u.max(hp.epsilon)).fold(min_u, f64::min);
                min_u = u_used.into_iter().fold(min_u, f64::min);
                x = nx;
                state = ns;
            }
        }
    }
    let detail = format!(
        "v nondecreasing: {monotone}; v <= G^2 under clip: {bounded}; min u = {min_u:.1e} (epsilon 1e-8)"
    );
    if monotone && bounded && min_u >= 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bits(m: &ModelParams) -> Vec<u64> {
    m.flatten().into_iter().map(f64::to_bits).collect()
}

fn degenerate_network() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in ["sgd", "msgd", "amsgrad"] {
        let cfg = config(&[
            "agents=1",
            "K=200",
            "full_batch=true",
            "eval_every=1",
            &format!("optimizer={kind}"),
            "alpha=0.01",
        ]);
        let run = run_repeat(&cfg, 0).map_err(|e| e.to_string())?;
        let exp = Experiment::prepare(&cfg, cfg.seed).map_err(|e| e.to_string())?;
        let hp = cfg.hyper_params().map_err(|e| e.to_string())?;
        let shard = &exp.partition.shards[0];
        let mut x = ModelParams::init(&exp.dims, cfg.activation, &mut RngStream::derive(cfg.seed, streams::INIT, 0));
        let mut state = OptimizerState::new(cfg.optimizer, &exp.dims);
        let mut same_losses = true;
        for k in 1..=200 {
            let (loss, g) = exp.train.loss_and_grad(&x, shard).map_err(|e| e.to_string())?;
            same_losses &= run.records[k].train_loss == [loss];
            let (nx, ns) = local_step(&x, &state, &g, &hp).map_err(|e| e.to_string())?;
            x = nx;
            state = ns;
        }
        let same_final = bits(&run.final_models[0]) == bits(&x);
        ok &= same_losses && same_final;
        parts.push(format!("{kind}: losses {same_losses}, final iterate {same_final}"));
    }
    let detail = format!("bitwise over 200 iterations: {}", parts.join("; "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Linear least-squares gradient of `mean ½‖Wx + b − y‖²` over `rows`.
fn linear_grad(w: &[Vec<f64>], b: &[f64], x: &Matrix, y: &Matrix, rows: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut gw = vec![vec![0.0; x.cols()]; w.len()];
    let mut gb = vec![0.0; w.len()];
    for &r in rows {
        for o in 0..w.len() {
            let pred: f64 = b[o] + (0..x.cols()).map(|c| w[o][c] * x[(r, c)]).sum::<f64>();
            let res = pred - y[(r, o)];
            gb[o] += res;
            for c in 0..x.cols() {
                gw[o][c] += res * x[(r, c)];
            }
        }
    }
    let m = rows.len() as f64;
    gw.iter_mut().flatten().for_each(|v| *v /= m);
    gb.iter_mut().for_each(|v| *v /= m);
    (gw, gb)
}

fn consensus_contraction() -> Outcome {
    // Part 1: one identity-mode merge of random models.
    let mut worst_excess = f64::NEG_INFINITY;
    for (t, topo) in [Topology::fully_connected(5).unwrap(), Topology::ring(5).unwrap()].into_iter().enumerate() {
        let pi = build_mixing(&topo).map_err(|e| e.to_string())?;
        let rho = second_largest_magnitude(pi.matrix()).map_err(|e| e.to_string())?.powi(2);
        let cfg = config(&["merge=identity"]);
        let plan = cfg.merge_plan();
        for trial in 0..20u64 {
            let mut rng = RngStream::new(trial, 19 + t as u64);
            let models: Vec<ModelParams> =
                (0..5).map(|_| random_model(&[6, 9, 4], Activation::Relu, &mut rng)).collect();
            let states = vec![OptimizerState::new(OptimizerKind::Sgd, &[6, 9, 4]); 5];
            let batches = vec![Matrix::zeros(0, 6); 5];
            let out = merge_round(&models, &states, &pi, &topo, &plan, &batches, 1, 1).map_err(|e| e.to_string())?;
            let pre = consensus_error(&models).unwrap();
            let post = consensus_error(&out.models).unwrap();
            worst_excess = worst_excess.max(post - rho * pre);
        }
    }

    // Part 2: linear consensus benchmark against a dense reference.
    let cfg = config(&[
        "dataset=regression",
        "regression_outputs=2",
        "hidden=none",
        "activation=identity",
        "merge=identity",
        "full_batch=true",
        "agents=5",
        "topology=ring",
        "init=independent",
        "K=100",
        "eval_every=1",
        "alpha=0.05",
    ]);
    let run = run_repeat(&cfg, 0).map_err(|e| e.to_string())?;
    let exp = Experiment::prepare(&cfg, cfg.seed).map_err(|e| e.to_string())?;
    let y = exp.train.targets.clone().unwrap();
    let x = &exp.train.features;
    let mut agents: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (0..5)
        .map(|i| {
            let m = ModelParams::init(&exp.dims, Activation::Identity, &mut RngStream::derive(cfg.seed, streams::INIT, i));
            let l = &m.layers()[0];
            ((0..l.outputs()).map(|o| l.weight.row(o).to_vec()).collect(), l.bias.clone())
        })
        .collect();
    let flat = |a: &[(Vec<Vec<f64>>, Vec<f64>)]| -> Vec<Vec<f64>> {
        a.iter().map(|(w, b)| w.iter().flatten().chain(b).copied().collect()).collect()
    };
    let consensus = |a: &[(Vec<Vec<f64>>, Vec<f64>)]| {
        let v = flat(a);
        let mean: Vec<f64> = (0..v[0].len()).map(|c| v.iter().map(|r| r[c]).sum::<f64>() / 5.0).collect();
        v.iter().map(|r| r.iter().zip(&mean).map(|(p, q)| (p - q).powi(2)).sum::<f64>()).sum::<f64>() / 5.0
    };
    let third = 1.0 / 3.0;
    let mut worst_gap = 0.0f64;
    for k in 1..=100 {
        let grads: Vec<_> = (0..5)
            .map(|i| linear_grad(&agents[i].0, &agents[i].1, x, &y, &exp.partition.shards[i]))
            .collect();
        let next: Vec<_> = (0..5)
            .map(|i| {
                let nb = [(i + 4) % 5, i, (i + 1) % 5];
                let (gw, gb) = &grads[i];
                let w = (0..gw.len())
                    .map(|o| {
                        (0..gw[o].len())
                            .map(|c| nb.iter().map(|&j| third * agents[j].0[o][c]).sum::<f64>() - cfg.alpha * gw[o][c])
                            .collect()
                    })
                    .collect();
                let b = (0..gb.len())
                    .map(|o| nb.iter().map(|&j| third * agents[j].1[o]).sum::<f64>() - cfg.alpha * gb[o])
                    .collect();
                (w, b)
            })
            .collect();
        agents = next;
        let reference = consensus(&agents);
        worst_gap = worst_gap.max((run.records[k].consensus_error - reference).abs() / reference.max(1.0));
    }
    let reference_final = flat(&agents);
    for (m, r) in run.final_models.iter().zip(&reference_final) {
        let gap = m.flatten().iter().zip(r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_gap = worst_gap.max(gap);
    }
    let detail = format!(
        "max(post − rho·pre) = {worst_excess:.2e} over 40 merges; reference gap {worst_gap:.2e} over 100 steps"
    );
    if worst_excess <= 1e-9 && worst_gap <= 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn communication() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (topo, expected) in [("fc", 2.0), ("ring", 1.0)] {
        let probe = config(&[&format!("topology={topo}")]);
        let ipe = Experiment::prepare(&probe, 0).map_err(|e| e.to_string())?.iters_per_epoch(&probe);
        let cfg = config(&[
            &format!("topology={topo}"),
            &format!("n={}", 2 * ipe),
            &format!("K={}", 8 * ipe),
            &format!("eval_every={}", 8 * ipe),
        ]);
        let run = run_repeat(&cfg, 0).map_err(|e| e.to_string())?;
        let charged: f64 = run.merges.iter().map(|m| m.comm_rounds).sum();
        let per_epoch = charged / 8.0;
        let formula = charge_communication(&cfg.topology().unwrap(), 1.0, &cfg.merge_plan(), ipe);
        ok &= per_epoch == expected && formula == expected;
        parts.push(format!(
            "{topo}-5: {} merges charged {charged} rounds over 8 epochs = {per_epoch}/epoch (formula {formula})",
            run.merges.len()
        ));
    }
    let detail = parts.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let base = [
        "classes=10",
        "dims=16",
        "separation=4",
        "samples_per_class=500",
        "agents=5",
        "topology=fc",
        "partition=class_shard",
        "optimizer=sgd",
        "alpha=0.1",
        "n=50",
        "K=600",
        "eval_every=600",
    ];
    let mut am = Vec::new();
    let mut wa = Vec::new();
    for mode in ["activation_match", "identity"] {
        let merge = format!("merge={mode}");
        let mut overrides = base.to_vec();
        overrides.push(&merge);
        let cfg = config(&overrides);
        for r in 0..5 {
            let acc = run_repeat(&cfg, r).map_err(|e| e.to_string())?.final_accuracy.unwrap();
            if mode == "identity" { wa.push(acc) } else { am.push(acc) }
        }
    }
    let mean = am.iter().sum::<f64>() / 5.0;
    let wins = am.iter().zip(&wa).filter(|(a, w)| a >= w).count();
    let gaps: Vec<String> = am.iter().zip(&wa).map(|(a, w)| format!("{:+.4}", a - w)).collect();
    within(
        start.elapsed(),
        300,
        format!(
            "mean accuracy of x̄_K {mean:.4}; activation matching ≥ identity on {wins}/5 seeds (gaps {})",
            gaps.join(", ")
        ),
        mean >= 0.80 && wins >= 3,
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn speed_up() -> Outcome {
    let mut medians = Vec::new();
    for agents in [2, 4, 8] {
        let a = format!("agents={agents}");
        let cfg = config(&[
            "dataset=regression",
            "hidden=none",
            "activation=identity",
            "partition=iid",
            "topology=fc",
            "alpha_schedule=sqrt_n_over_k",
            "alpha_c=0.1",
            "batch_size=8",
            "K=200",
            "eval_every=200",
            &a,
        ]);
        let finals = (0..10)
            .map(|r| run_repeat(&cfg, r).map(|run| run.records.last().unwrap().grad_norm_sq))
            .collect::<dimat::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        medians.push(median(finals));
    }
    let detail = format!(
        "median final ‖∇f(x̄)‖² for N = 2, 4, 8: {:.3e}, {:.3e}, {:.3e}",
        medians[0], medians[1], medians[2]
    );
    if medians[1] <= medians[0] && medians[2] <= medians[1] {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (tag, workers) in [("a", 4), ("b", 4), ("c", 1)] {
        let out = dir.path().join(tag);
        let cfg = config(&[
            "agents=4",
            "topology=ring",
            "optimizer=amsgrad",
            "n=5",
            "K=60",
            "eval_every=10",
            "repeats=2",
            &format!("workers={workers}"),
            &format!("out={}", out.display()),
        ]);
        dimat_cli::cmd_run(&cfg).map_err(|e| e.to_string())?;
        outputs.push(std::fs::read(out.join("metrics.csv")).map_err(|e| e.to_string())?);
    }
    let detail = format!(
        "metrics.csv sizes {:?}; runs with 4, 4 and 1 workers",
        outputs.iter().map(Vec::len).collect::<Vec<_>>()
    );
    if outputs[0] == outputs[1] && outputs[0] == outputs[2] {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("LAP oracle equivalence", lap_oracle),
        ("gradient correctness", gradient_check),
        ("permutation functional invariance", permutation_invariance),
        ("planted-permutation recovery", planted_recovery),
        ("mixing matrices", mixing_matrices),
        ("rho' <= rho verification", rho_prime),
        ("AMSGrad invariants", amsgrad_invariants),
        ("degenerate-network equivalence", degenerate_network),
        ("consensus contraction", consensus_contraction),
        ("communication accounting", communication),
        ("end-to-end desk-scale learning", end_to_end),
        ("speed-up trend", speed_up),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
