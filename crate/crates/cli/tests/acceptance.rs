//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use boltzmann::crbm::{self, CrbmOptions, CrbmParams, History, SequenceDataset, Window};
use boltzmann::dbn::{self, Activation, DbnSpec, DenseLayer, Mlp, Propagation};
use boltzmann::gibbs;
use boltzmann::hopfield::{Convention, HopfieldNet};
use boltzmann::oracle::{self, binary_config, config_index, total_variation};
use boltzmann::trainer::{self, cd_gradients, negative_stats, positive_stats, INIT_STREAM};
use boltzmann::{init_params, units, Dataset, RbmParams, RngStream, TrainConfig, UnitFamily};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

/// Name, time budget in seconds, check.
type Criterion = (&'static str, f64, fn() -> Outcome);

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn random_rbm(d: usize, p: usize, scale: f64, rng: &mut impl Rng) -> RbmParams {
    let mut rbm = init_params(d, p, UnitFamily::Binary, UnitFamily::Binary, scale, rng).unwrap();
    rbm.visible_bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    rbm.hidden_bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    rbm
}

fn max_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn factorization() -> Outcome {
    let mut rng = RngStream::new(1, 0).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=9);
        let p = rng.random_range(1..=10 - d);
        let rbm = random_rbm(d, p, 1.0, &mut rng);
        let joint = oracle::joint_table(&rbm).unwrap();
        for vi in 0..1usize << d {
            let mut num = Array1::<f64>::zeros(p);
            let mut den = 0.0;
            for hi in 0..1usize << p {
                num.scaled_add(joint[vi + (hi << d)], &binary_config(hi, p));
                den += joint[vi + (hi << d)];
            }
            let formula = units::cond_mean_hidden(&rbm, binary_config(vi, d).view()).unwrap();
            worst = worst.max(max_diff(&formula, &(num / den)));
        }
        for hi in 0..1usize << p {
            let mut num = Array1::<f64>::zeros(d);
            let mut den = 0.0;
            for vi in 0..1usize << d {
                num.scaled_add(joint[vi + (hi << d)], &binary_config(vi, d));
                den += joint[vi + (hi << d)];
            }
            let formula = units::cond_mean_visible(&rbm, binary_config(hi, p).view()).unwrap();
            worst = worst.max(max_diff(&formula, &(num / den)));
        }
    }
    outcome(worst < 1e-10, format!("max |factorized - enumerated| = {worst:.2e} (tol 1e-10)"))
}

fn exact_gradient() -> Outcome {
    let mut rng = RngStream::new(2, 0).rng();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let rbm = random_rbm(3, 2, 1.0, &mut rng);
        let rows = Array2::from_shape_simple_fn((6, 3), || f64::from(u8::from(rng.random::<bool>())));
        let data = Dataset::new(rows, UnitFamily::Binary).unwrap();
        let grad = oracle::exact_loglik_grad(&rbm, &data).unwrap();
        let ll = |q: &RbmParams| oracle::exact_loglik(q, &data).unwrap();
        let fd = |f: &dyn Fn(&mut RbmParams, f64)| {
            let (mut plus, mut minus) = (rbm.clone(), rbm.clone());
            f(&mut plus, eps);
            f(&mut minus, -eps);
            (ll(&plus) - ll(&minus)) / (2.0 * eps)
        };
        for ((i, j), g) in grad.dw.indexed_iter() {
            worst = worst.max((fd(&|q, e| q.weights[[i, j]] += e) - g).abs());
        }
        for (i, g) in grad.db.indexed_iter() {
            worst = worst.max((fd(&|q, e| q.visible_bias[i] += e) - g).abs());
        }
        for (j, g) in grad.dc.indexed_iter() {
            worst = worst.max((fd(&|q, e| q.hidden_bias[j] += e) - g).abs());
        }
    }
    outcome(worst < 1e-6, format!("max |analytic - finite difference| = {worst:.2e} (tol 1e-6)"))
}

fn cd_convergence() -> Outcome {
    let rbm = random_rbm(3, 2, 1.0, &mut RngStream::new(3, 0).rng());
    let data = Array2::from_shape_fn((8 * 250, 3), |(r, c)| (((r % 8) >> c) & 1) as f64);
    let n = data.nrows() as f64;
    let exact = oracle::exact_loglik_grad_weighted(&rbm, data.view(), &vec![1.0; data.nrows()]).unwrap().scaled(1.0 / n);
    let positive = positive_stats(&rbm, data.view()).unwrap();
    let ks = [1usize, 10, 100, 500];
    let means: Vec<f64> = ks
        .iter()
        .map(|&k| {
            (0..10u64)
                .map(|seed| {
                    let negative = negative_stats(&rbm, data.view(), k, &mut RngStream::new(seed, 1).rng()).unwrap();
                    cd_gradients(&positive, &negative).unwrap().cosine_similarity(&exact)
                })
                .sum::<f64>()
                / 10.0
        })
        .collect();
    let xs: Vec<f64> = ks.iter().map(|&k| (k as f64).log10()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, means.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&means).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let passed = means[3] > 0.95 && slope >= 0.0 && means[3] >= means[0];
    outcome(passed, format!("mean cosine over k=1,10,100,500: {means:.4?}, trend slope {slope:.4} (need last > 0.95, slope >= 0)"))
}

fn gibbs_stationarity() -> Outcome {
    let mut rng = RngStream::new(4, 0).rng();
    let mut worst: f64 = 0.0;
    for (d, p) in [(3, 2), (4, 4), (2, 5), (5, 3), (4, 3)] {
        let rbm = random_rbm(d, p, 1.0, &mut rng);
        let exact = oracle::joint_table(&rbm).unwrap();
        let mut counts = vec![0.0; exact.len()];
        let mut v = gibbs::initial_visible(UnitFamily::Binary, d, &mut rng);
        for _ in 0..1000 {
            v = gibbs::gibbs_sweep_rbm(&rbm, v.view(), &mut rng).unwrap().1;
        }
        let sweeps = 200_000;
        for _ in 0..sweeps {
            let (h, next) = gibbs::gibbs_sweep_rbm(&rbm, v.view(), &mut rng).unwrap();
            counts[config_index(v.view()).unwrap() + (config_index(h.view()).unwrap() << d)] += 1.0;
            v = next;
        }
        let empirical: Vec<f64> = counts.iter().map(|c| c / sweeps as f64).collect();
        worst = worst.max(total_variation(&empirical, &exact));
    }
    outcome(worst < 0.05, format!("max TV distance {worst:.4} over 5 models (tol 0.05)"))
}

fn training_improves_likelihood() -> Outcome {
    let rows: Vec<Vec<f64>> = (0..10).map(|i| if i % 2 == 0 { vec![1.0, 1.0, 0.0] } else { vec![0.0, 0.0, 1.0] }).collect();
    let data = Dataset::from_rows(&rows, UnitFamily::Binary).unwrap();
    let mut gains = vec![];
    for seed in 0..5 {
        let config = TrainConfig { learning_rate: 0.1, cd_steps: 1, max_epochs: 500, batch_size: 10, seed, ..Default::default() };
        let init = init_params(3, 2, UnitFamily::Binary, UnitFamily::Binary, config.init_scale, &mut RngStream::new(seed, INIT_STREAM).rng()).unwrap();
        let before = oracle::exact_loglik(&init, &data).unwrap();
        let (trained, _) = trainer::train_rbm_from(&config, init, &data).unwrap();
        gains.push(oracle::exact_loglik(&trained, &data).unwrap() - before);
    }
    let improved = gains.iter().filter(|&&g| g > 0.0).count();
    outcome(improved == 5, format!("{improved}/5 seeds improved; log-likelihood gains {gains:.3?}"))
}

fn thermodynamic_identity() -> Outcome {
    let mut rng = RngStream::new(6, 0).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let energies: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
        for beta in [0.1, 1.0, 10.0] {
            let t = oracle::boltzmann_quantities(&energies, beta).unwrap();
            let f = t.free_energy.unwrap();
            worst = worst.max((t.entropy - (-beta * f + beta * t.internal_energy)).abs());
        }
    }
    outcome(worst < 1e-10, format!("max |H - (-bF + bU)| = {worst:.2e} (tol 1e-10)"))
}

fn hopfield_descent() -> Outcome {
    let mut rng = RngStream::new(7, 0).rng();
    let (mut increases, mut unconverged, mut not_fixed) = (0, 0, 0);
    for net_idx in 0..1000 {
        let d = rng.random_range(1..=10);
        let mut w = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..i {
                let x = rng.random_range(-1.0..1.0);
                w[[i, j]] = x;
                w[[j, i]] = x;
            }
        }
        let convention = if net_idx % 2 == 0 { Convention::PlusMinusOne } else { Convention::ZeroOne };
        let (lo, hi) = if convention == Convention::PlusMinusOne { (-1.0, 1.0) } else { (0.0, 1.0) };
        let net = HopfieldNet::new(w, 0.0, convention).unwrap();
        let probe = Array1::from_shape_simple_fn(d, || if rng.random::<bool>() { hi } else { lo });
        let mut state = probe.clone();
        for _ in 0..3 * d {
            let i = rng.random_range(0..d);
            let next = net.update_unit(state.view(), i).unwrap();
            if net.energy(next.view()).unwrap() > net.energy(state.view()).unwrap() + 1e-12 {
                increases += 1;
            }
            state = next;
        }
        let recall = net.recall(probe.view(), d * (1 << d)).unwrap();
        if !recall.converged {
            unconverged += 1;
        }
        if (0..d).any(|i| net.update_unit(recall.state.view(), i).unwrap() != recall.state) {
            not_fixed += 1;
        }
    }
    outcome(
        increases == 0 && unconverged == 0 && not_fixed == 0,
        format!("energy increases {increases}, unconverged recalls {unconverged}, non-fixed end states {not_fixed} over 1000 nets"),
    )
}

fn random_windows(d: usize, t: usize, n: usize, rng: &mut impl Rng) -> Vec<Window> {
    let bits = |rng: &mut _| Array1::from_shape_simple_fn(d, || f64::from(u8::from(Rng::random::<bool>(rng))));
    (0..n)
        .map(|_| Window { history: History::new((0..t).map(|_| bits(rng)).collect()).unwrap(), target: bits(rng) })
        .collect()
}

fn crbm_checks() -> Outcome {
    let mut rng = RngStream::new(8, 0).rng();
    let base = random_rbm(3, 2, 1.0, &mut rng);
    let zero_links = CrbmParams::from_rbm(base.clone(), 2).unwrap();
    let windows = random_windows(3, 2, 40, &mut rng);
    let targets = Array2::from_shape_fn((windows.len(), 3), |(r, c)| windows[r].target[c]);

    let mut bitwise = true;
    for w in &windows {
        let (b_hat, c_hat) = crbm::effective_biases(&zero_links, &w.history).unwrap();
        bitwise &= b_hat == base.visible_bias && c_hat == base.hidden_bias;
        bitwise &= crbm::conditioned(&zero_links, &w.history).unwrap() == base;
    }
    let g = crbm::crbm_gradients(&zero_links, &windows, 3, &mut RngStream::new(9, 1).rng()).unwrap();
    let pos = positive_stats(&base, targets.view()).unwrap();
    let neg = negative_stats(&base, targets.view(), 3, &mut RngStream::new(9, 1).rng()).unwrap();
    bitwise &= g.base == cd_gradients(&pos, &neg).unwrap();

    let seq_rows: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect()).collect();
    let sequences = SequenceDataset::new(vec![Dataset::from_rows(&seq_rows, UnitFamily::Binary).unwrap()]).unwrap();
    let config = TrainConfig { batch_size: 7, max_epochs: 20, seed: 10, ..Default::default() };
    let options = CrbmOptions { history_len: 2, learn_history: false };
    let (trained, _) = crbm::train_crbm(&config, 2, UnitFamily::Binary, &sequences, &options).unwrap();
    let target_rows: Vec<Vec<f64>> = sequences.windows(2).iter().map(|w| w.target.to_vec()).collect();
    let (rbm, _) = trainer::train_rbm(&config, 2, UnitFamily::Binary, &Dataset::from_rows(&target_rows, UnitFamily::Binary).unwrap()).unwrap();
    bitwise &= trained.base == rbm;

    let frames = crbm::generate_sequence(&zero_links, &windows[0].history, 10, 2, &mut RngStream::new(11, 0).rng()).unwrap();
    let mut chain_rng = RngStream::new(11, 0).rng();
    let mut v = windows[0].history.frames()[0].clone();
    for frame in &frames {
        v = gibbs::gibbs_chain(&base, v.view(), 2, &mut chain_rng).unwrap().v;
        bitwise &= *frame == v;
    }

    let params = {
        let mut p = CrbmParams::from_rbm(random_rbm(2, 2, 1.0, &mut rng), 1).unwrap();
        p.history_visible[0].mapv_inplace(|_| rng.random_range(-1.0..1.0));
        p.history_hidden[0].mapv_inplace(|_| rng.random_range(-1.0..1.0));
        p
    };
    let windows = random_windows(2, 1, 2000, &mut rng);
    let estimate = crbm::crbm_gradients(&params, &windows, 300, &mut RngStream::new(12, 1).rng()).unwrap();
    let mut exact = Array2::<f64>::zeros((2, 2));
    for w in &windows {
        let cond = crbm::conditioned(&params, &w.history).unwrap();
        let row = w.target.view().insert_axis(Axis(0));
        let grad = oracle::exact_loglik_grad_weighted(&cond, row, &[1.0]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                exact[[i, j]] += w.history.frames()[0][i] * grad.db[j];
            }
        }
    }
    exact /= windows.len() as f64;
    let worst = max_diff(&estimate.history_visible[0], &exact);
    outcome(bitwise && worst < 0.05, format!("zero-link reduction bitwise: {bitwise}; max |dG - enumerated| = {worst:.4} (tol 0.05)"))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn dbn_benefit() -> Outcome {
    let spec = DbnSpec::binary(vec![8, 4, 2]).unwrap();
    let (mut pre, mut rnd) = (vec![], vec![]);
    for seed in 0..5u64 {
        let (data, _) = dbn::two_cluster_dataset(8, 200, 0.05, 100 + seed).unwrap();
        let pretrain_config = TrainConfig { learning_rate: 0.1, batch_size: 10, max_epochs: 50, seed, ..Default::default() };
        let finetune_config = TrainConfig { learning_rate: 0.5, batch_size: 10, max_epochs: 30, seed, ..Default::default() };
        let stack = dbn::pretrain(&spec, &data, &pretrain_config, Propagation::Mean).unwrap();
        let (tuned, _) = dbn::finetune(&dbn::unroll_autoencoder(&stack).unwrap(), &data, &finetune_config).unwrap();
        pre.push(tuned.mse(data.rows()).unwrap());
        let random = dbn::random_autoencoder(&spec, UnitFamily::Binary, &pretrain_config).unwrap();
        let (tuned, _) = dbn::finetune(&random, &data, &finetune_config).unwrap();
        rnd.push(tuned.mse(data.rows()).unwrap());
    }
    let (mp, mr) = (median(pre), median(rnd));
    outcome(mp < mr, format!("median reconstruction MSE: pre-trained {mp:.4}, random {mr:.4}"))
}

fn backprop() -> Outcome {
    let mut rng = RngStream::new(13, 0).rng();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for net_idx in 0..10 {
        let sizes = [6, 5, 3, 5, 6];
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, pair)| DenseLayer {
                weights: Array2::from_shape_simple_fn((pair[0], pair[1]), || rng.random_range(-1.0..1.0)),
                bias: Array1::from_shape_simple_fn(pair[1], || rng.random_range(-1.0..1.0)),
                activation: if (l + net_idx) % 4 == 3 { Activation::Identity } else { Activation::Sigmoid },
            })
            .collect();
        let net = Mlp::new(layers, 2).unwrap();
        let x = Array2::from_shape_simple_fn((5, 6), || rng.random_range(0.0..1.0));
        let grads = net.gradients(x.view()).unwrap();
        for l in 0..net.layers.len() {
            for ((i, j), g) in grads[l].weights.indexed_iter() {
                let (mut plus, mut minus) = (net.clone(), net.clone());
                plus.layers[l].weights[[i, j]] += eps;
                minus.layers[l].weights[[i, j]] -= eps;
                let fd = (plus.mse(x.view()).unwrap() - minus.mse(x.view()).unwrap()) / (2.0 * eps);
                worst = worst.max((fd - g).abs());
            }
            for (j, g) in grads[l].bias.indexed_iter() {
                let (mut plus, mut minus) = (net.clone(), net.clone());
                plus.layers[l].bias[j] += eps;
                minus.layers[l].bias[j] -= eps;
                let fd = (plus.mse(x.view()).unwrap() - minus.mse(x.view()).unwrap()) / (2.0 * eps);
                worst = worst.max((fd - g).abs());
            }
        }
    }
    outcome(worst < 1e-6, format!("max |backprop - finite difference| = {worst:.2e} over 10 nets (tol 1e-6)"))
}

fn ebm(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ebm")).current_dir(dir).args(args).output().expect("ebm runs")
}

fn cli_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path();
    let (data, _) = dbn::two_cluster_dataset(6, 40, 0.1, 14).unwrap();
    let mut csv = String::from("a,b,c,d,e,f\n");
    let mut seq = String::from("seq,a,b,c,d,e,f\n");
    for (r, row) in data.rows().rows().into_iter().enumerate() {
        let line = row.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        csv.push_str(&line);
        csv.push('\n');
        seq.push_str(&format!("s{},{line}\n", r % 3));
    }
    std::fs::write(path.join("data.csv"), csv).unwrap();
    std::fs::write(path.join("seq.csv"), seq).unwrap();
    let runs: [(&str, Vec<&str>); 5] = [
        ("rbm", vec!["train", "rbm", "data.csv", "--hidden", "3", "--epochs", "5", "--seed", "3", "--k", "2"]),
        ("bm", vec!["train", "bm", "data.csv", "--hidden", "2", "--epochs", "3", "--seed", "4"]),
        ("crbm", vec!["train", "crbm", "seq.csv", "--hidden", "3", "--history", "2", "--epochs", "5", "--batch", "5"]),
        ("dbn", vec!["pretrain-dbn", "data.csv", "--layers", "6,4,2", "--epochs", "5", "--propagation", "sample"]),
        ("mlp", vec!["finetune-dbn", "data.csv", "--layers", "6,3", "--epochs", "5", "--lr", "0.5"]),
    ];
    let mut failures = vec![];
    for (name, args) in runs {
        let out = format!("{name}.json");
        let mut full = args.clone();
        full.extend(["--out", &out, "--threads", "2"]);
        let first = ebm(path, &full);
        let replay_out = format!("{name}.replay.json");
        let second = ebm(path, &["replay", &format!("{out}.manifest.json"), "--out", &replay_out]);
        let same = first.status.success()
            && second.status.success()
            && std::fs::read(path.join(&out)).ok() == std::fs::read(path.join(&replay_out)).ok();
        if !same {
            failures.push(name);
        }
    }
    outcome(failures.is_empty(), format!("5 training commands replayed from manifests; mismatches: {failures:?}"))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("conditional factorization", 10.0, factorization),
        ("exact gradient", 5.0, exact_gradient),
        ("CD to MLE convergence", 60.0, cd_convergence),
        ("Gibbs stationarity", 60.0, gibbs_stationarity),
        ("training improves likelihood", 30.0, training_improves_likelihood),
        ("thermodynamic identity", 1.0, thermodynamic_identity),
        ("Hopfield energy descent", 10.0, hopfield_descent),
        ("CRBM reduction and gradient", 60.0, crbm_checks),
        ("DBN pre-training benefit", 120.0, dbn_benefit),
        ("backprop correctness", 5.0, backprop),
        ("CLI reproducibility", f64::INFINITY, cli_reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = run();
        let secs = started.elapsed().as_secs_f64();
        let passed = result.passed && secs < *budget;
        failed += usize::from(!passed);
        let limit = if budget.is_finite() { format!(" (limit {budget} s)") } else { String::new() };
        println!(
            "criterion {:>2} {:<30} {}  {}; {secs:.2} s{limit}",
            i + 1,
            name,
            if passed { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!("acceptance: {}/11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
