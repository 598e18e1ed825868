//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use bnn_skeleton::activation::ActivationKind;
use bnn_skeleton::addnn::{
    additive_components, anova_component, extract_clusters, interaction_strengths, model_clusters, AddNnConfig, AdditiveView, InputCluster,
    InteractionConfig, Threshold, Variant,
};
use bnn_skeleton::bench::{generate_train_test, metrics, top_rank_recall, Dataset};
use bnn_skeleton::blocks::{build_network, BayesNet, BiasMode, BuildPolicy, NodeRecipe};
use bnn_skeleton::kernels::{
    arc_cosine_closed_form, concentration_experiment, equivalence_check, expected_kernel, inducing_point_posterior, random_feature_posterior,
    sample_pairs, ConcentrationConfig, EquivalenceConfig,
};
use bnn_skeleton::rng;
use bnn_skeleton::skeleton::{Preset, Skeleton};
use bnn_skeleton::tensor::{Matrix, Tape};
use bnn_skeleton::vi::{
    elbo_estimate, kl_term, Covariance, FamilyKind, GroupPosterior, GroupSpec, Likelihood, ModelLeaves, PosteriorPlan, Prior, Scaling, TrainConfig,
    TrainedModel, VariationalState,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

// 1 -----------------------------------------------------------------------

fn tiny_network(k: u64) -> (BayesNet, PosteriorPlan, Matrix, Matrix) {
    let p = 2 + (k % 2) as usize;
    let sk = Skeleton::parse(&format!(
        "layers = [1, 2, 1]\nwidths = [{p}, 2, 1]\nactivations = [\"none\", \"tanh\", \"identity\"]\n"
    ))
    .unwrap();
    let mut policy = BuildPolicy::uniform(NodeRecipe::plain(), k).with_node(1, 0, NodeRecipe::random(3, ActivationKind::Tanh));
    if k % 2 == 0 {
        policy = policy.with_layer(2, NodeRecipe::random(2, ActivationKind::Erf));
    }
    if k % 3 != 1 {
        policy = policy.with_bias(BiasMode::TrainableInFb);
    }
    let gaussian = FamilyKind::Gaussian {
        covariance: if k == 3 { Covariance::Full } else { Covariance::Diagonal },
        init_std: 0.3,
    };
    let upper = if k % 2 == 0 { FamilyKind::Mixture { keep: 0.7 } } else { gaussian };
    let first = if k == 4 {
        GroupSpec::new(FamilyKind::PointMass, Prior::GroupLassoLaplace { lambda: 0.5 })
    } else {
        GroupSpec::new(gaussian, Prior::StandardNormal)
    };
    let plan = PosteriorPlan::uniform(first).with_layer(2, GroupSpec::new(upper, Prior::StandardNormal));
    let mut r = rng::stream(k, 7);
    let x = Matrix::from_fn(5, p, |_, _| r.gen_range(-1.0..1.0));
    let y = Matrix::from_fn(5, 1, |_, _| r.gen_range(-1.0..1.0));
    let net = build_network(&sk, &policy, None).unwrap();
    (net, plan, x, y)
}

fn elbo_value(net: &BayesNet, q: &VariationalState, lik: &Likelihood, x: &Matrix, y: &Matrix, seed: u64) -> f64 {
    let tape = Tape::new();
    let leaves = ModelLeaves::new(&tape, q, lik);
    let mut r = rng::stream(seed, 99);
    elbo_estimate(net, q, &leaves, lik, x, y, 2, 5, &mut r).unwrap().elbo.item()
}

fn criterion_1() -> Outcome {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut sizes = Vec::new();
    for k in 0..5u64 {
        let (net, plan, x, y) = tiny_network(k);
        if net.parameter_count() > 50 {
            return Err(format!("network {k} has {} weights", net.parameter_count()));
        }
        sizes.push(net.parameter_count());
        let mut q = VariationalState::init(&net, &plan).unwrap();
        // Move away from the deterministic initialization.
        let mut r = rng::stream(k, 8);
        for p in q.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v += 0.2 * r.sample::<f64, _>(StandardNormal));
        }
        let lik = Likelihood::Gaussian {
            log_noise: -0.5,
            trainable: true,
        };
        let tape = Tape::new();
        let leaves = ModelLeaves::new(&tape, &q, &lik);
        let mut rr = rng::stream(k, 99);
        let terms = elbo_estimate(&net, &q, &leaves, &lik, &x, &y, 2, 5, &mut rr).unwrap();
        let all = leaves.all();
        let grads = tape.gradient(terms.elbo, &all).unwrap();
        let ad: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();

        let mut fd = Vec::with_capacity(ad.len());
        let n_params = q.params().len();
        for pi in 0..n_params {
            let len = q.params()[pi].len();
            for e in 0..len {
                let mut up = q.clone();
                up.params_mut()[pi].data_mut()[e] += h;
                let mut dn = q.clone();
                dn.params_mut()[pi].data_mut()[e] -= h;
                fd.push((elbo_value(&net, &up, &lik, &x, &y, k) - elbo_value(&net, &dn, &lik, &x, &y, k)) / (2.0 * h));
            }
        }
        if let Likelihood::Gaussian { log_noise, .. } = lik {
            let at = |v: f64| Likelihood::Gaussian { log_noise: v, trainable: true };
            fd.push((elbo_value(&net, &q, &at(log_noise + h), &x, &y, k) - elbo_value(&net, &q, &at(log_noise - h), &x, &y, k)) / (2.0 * h));
        }
        if fd.len() != ad.len() {
            return Err(format!("network {k}: {} tape gradients vs {} parameters", ad.len(), fd.len()));
        }
        let num: f64 = ad.iter().zip(&fd).map(|(a, f)| (a - f).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|f| f * f).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    check(worst <= 1e-4, format!("weights per net {sizes:?}, max relative error {worst:.2e}"))
}

// 2 -----------------------------------------------------------------------

fn mc_kernel(activation: ActivationKind, a: &[f64], b: &[f64], n: usize, seed: u64) -> f64 {
    let mut r = rng::stream(seed, 5);
    let mut s = 0.0;
    for _ in 0..n {
        let (mut u, mut v) = (0.0, 0.0);
        for (ai, bi) in a.iter().zip(b) {
            let w: f64 = r.sample(StandardNormal);
            u += ai * w;
            v += bi * w;
        }
        s += activation.apply(u) * activation.apply(v);
    }
    s / n as f64
}

fn criterion_2() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for act in [ActivationKind::Relu, ActivationKind::Tanh] {
        let cfg = ConcentrationConfig {
            activation: act,
            dim: 10,
            r_grid: vec![64, 256, 1024, 4096, 16384],
            n_pairs: 50,
            ..ConcentrationConfig::default()
        };
        // The expectation used by the experiment must agree with a Monte
        // Carlo estimate on the same pairs.
        let pairs = sample_pairs(cfg.pair_seed, cfg.dim, cfg.n_pairs);
        let oracle_gap = pairs
            .par_iter()
            .enumerate()
            .map(|(i, (a, b))| (expected_kernel(act, a, b).unwrap() - mc_kernel(act, a, b, 400_000, i as u64)).abs())
            .reduce(|| 0.0, f64::max);
        let table = concentration_experiment(&cfg).map_err(|e| e.to_string())?;
        let at_4096 = table.rows.iter().filter(|r| r.r == 4096).map(|r| r.sup_error).fold(0.0, f64::max);
        let slope = table.log_log_slope();
        let pass = oracle_gap < 5e-3 && at_4096 <= 0.05 && (-0.65..=-0.35).contains(&slope);
        ok &= pass;
        details.push(format!("{act}: sup err @4096 {at_4096:.4}, slope {slope:.3}, |K - MC| {oracle_gap:.1e}"));
    }
    check(ok, details.join("; "))
}

// 3 -----------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let n = 10_000_000usize;
    let dim = 4;
    let mut r = rng::stream(3, 0);
    let unit = |r: &mut rng::Rng64| {
        let v: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / nv).collect::<Vec<f64>>()
    };
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let e0 = vec![1.0, 0.0, 0.0, 0.0];
    pairs.push((e0.clone(), e0.clone()));
    pairs.push((e0.clone(), vec![0.0, 1.0, 0.0, 0.0]));
    while pairs.len() < 20 {
        let a: Vec<f64> = unit(&mut r).iter().map(|x| x * r.gen_range(0.5..2.0)).collect();
        pairs.push((a, unit(&mut r)));
    }
    let forced = (arc_cosine_closed_form(&e0, &e0).unwrap() - 0.5).abs() < 1e-15
        && (arc_cosine_closed_form(&e0, &pairs[1].1).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15;
    let z: Vec<f64> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (a, b))| {
            let mut rr = rng::stream(1000 + i as u64, 1);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let (mut u, mut v) = (0.0f64, 0.0f64);
                for k in 0..dim {
                    let w: f64 = rr.sample(StandardNormal);
                    u += a[k] * w;
                    v += b[k] * w;
                }
                let f = u.max(0.0) * v.max(0.0);
                s += f;
                s2 += f * f;
            }
            let mean = s / n as f64;
            let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
            (arc_cosine_closed_form(a, b).unwrap() - mean).abs() / se
        })
        .collect();
    let worst = z.iter().cloned().fold(0.0, f64::max);
    check(forced && worst <= 3.0, format!("forced values exact: {forced}, max |closed - MC| / SE = {worst:.2} over 20 pairs"))
}

// 4 -----------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let rows = equivalence_check(&EquivalenceConfig {
        n: 8,
        r: 4,
        instances: 10,
        ..EquivalenceConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let worst = rows.iter().map(|r| r.max_abs_discrepancy).fold(0.0, f64::max);
    let cases = rows.len();

    // The posterior formulas themselves, against dense linear algebra.
    let mut r = rng::stream(4, 0);
    let mut gauss = |a: usize, b: usize| DMatrix::from_fn(a, b, |_, _| r.sample::<f64, _>(StandardNormal));
    let (n, m) = (8, 4);
    let phi_f = gauss(n, m);
    let phi_z = gauss(m, m);
    let mu = gauss(m, 1);
    let a = gauss(m, m);
    let sigma = &a * a.transpose() / m as f64 + DMatrix::identity(m, m) * 0.1;
    let from_na = |d: &DMatrix<f64>| Matrix::from_fn(d.nrows(), d.ncols(), |i, j| d[(i, j)]);
    let rf = random_feature_posterior(&from_na(&phi_f), &from_na(&mu), &from_na(&sigma)).map_err(|e| e.to_string())?;
    let rf_gap = max_abs_diff(&to_na(&rf.mean), &(&phi_f * &mu)).max(max_abs_diff(&to_na(&rf.cov), &(&phi_f * &sigma * phi_f.transpose())));

    let k_ff = &phi_f * phi_f.transpose();
    let k_fz = &phi_f * phi_z.transpose();
    let k_zz = &phi_z * phi_z.transpose();
    let mz = &phi_z * &mu;
    let sz = &phi_z * &sigma * phi_z.transpose();
    let ip = inducing_point_posterior(&from_na(&k_ff), &from_na(&k_fz), &from_na(&k_zz), &from_na(&mz), &from_na(&sz)).map_err(|e| e.to_string())?;
    let kinv = k_zz.clone().try_inverse().ok_or("singular K_zz")?;
    let want_mean = &k_fz * &kinv * &mz;
    let want_cov = &k_ff - &k_fz * &kinv * k_fz.transpose() + &k_fz * &kinv * &sz * &kinv * k_fz.transpose();
    let scale = want_cov.abs().max().max(1.0);
    let ip_gap = max_abs_diff(&to_na(&ip.mean), &want_mean).max(max_abs_diff(&to_na(&ip.cov), &want_cov)) / scale;
    let cross = max_abs_diff(&to_na(&ip.mean), &to_na(&rf.mean)).max(max_abs_diff(&to_na(&ip.cov), &to_na(&rf.cov))) / scale;
    check(
        worst <= 1e-8 && rf_gap <= 1e-8 && ip_gap <= 1e-8 && cross <= 1e-8,
        format!("{cases} cases (RB and RBF IPB), max discrepancy {worst:.1e}; dense oracle gaps {rf_gap:.1e}, {ip_gap:.1e}, {cross:.1e}"),
    )
}

// 5 -----------------------------------------------------------------------

fn additive_net(p: usize, groups: Vec<Vec<usize>>, seed: u64) -> (BayesNet, Vec<Matrix>) {
    let sk = Preset::Additive {
        input_dim: p,
        groups,
        hidden: vec![3],
        activation: ActivationKind::Tanh,
    }
    .build()
    .unwrap();
    let net = build_network(&sk, &BuildPolicy::uniform(NodeRecipe::plain(), seed).with_bias(BiasMode::TrainableInFb), None).unwrap();
    let mut r = rng::stream(seed, 1);
    let w = net.weight_shapes().iter().map(|&(a, b)| rng::normal_matrix(&mut r, a, b)).collect();
    (net, w)
}

fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::stream(seed, 2);
    Matrix::from_fn(rows, cols, |_, _| r.gen_range(-2.0..2.0))
}

fn subsets(items: &[usize]) -> Vec<Vec<usize>> {
    (0u32..1 << items.len())
        .map(|mask| items.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &v)| v).collect())
        .collect()
}

/// Alternating sum over `A ⊆ T` of the network output averaged over every
/// combination of background values for the features outside `A`.
fn brute_force(net: &BayesNet, w: &[Matrix], t: &[usize], eval: &Matrix, bg: &Matrix) -> Vec<f64> {
    let p = eval.cols();
    let nb = bg.rows();
    (0..eval.rows())
        .map(|r| {
            let mut total = 0.0;
            for a in subsets(t) {
                let rest: Vec<usize> = (0..p).filter(|j| !a.contains(j)).collect();
                let combos = nb.pow(rest.len() as u32);
                let mut x = Matrix::zeros(combos, p);
                for c in 0..combos {
                    let mut code = c;
                    for j in 0..p {
                        let v = if a.contains(&j) {
                            eval.get(r, j)
                        } else {
                            let v = bg.get(code % nb, j);
                            code /= nb;
                            v
                        };
                        x.set(c, j, v);
                    }
                }
                let mean = net.forward(&x, w).unwrap().output().data().iter().sum::<f64>() / combos as f64;
                total += if (t.len() - a.len()) % 2 == 0 { mean } else { -mean };
            }
            total
        })
        .collect()
}

fn criterion_5() -> Outcome {
    let mut worst_oracle: f64 = 0.0;
    let mut worst_zero: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for inst in 0..20u64 {
        let mut r = rng::stream(inst, 3);
        let p = r.gen_range(2..=4usize);
        let n = r.gen_range(10..=30usize);
        let nb = r.gen_range(3..=5usize);
        let groups: Vec<Vec<usize>> = (0..r.gen_range(1..=3))
            .map(|_| {
                let g: Vec<usize> = (0..p).filter(|_| r.gen_bool(0.6)).collect();
                if g.is_empty() {
                    vec![r.gen_range(0..p)]
                } else {
                    g
                }
            })
            .collect();
        let (net, w) = additive_net(p, groups, inst);
        let clusters = extract_clusters(&net, &w, Threshold::Absolute(0.0)).unwrap();
        let eval = uniform_matrix(n, p, inst + 100);
        let bg = uniform_matrix(nb, p, inst + 200);
        let all: Vec<usize> = (0..p).collect();
        for t in subsets(&all) {
            let got = anova_component(&net, &w, &clusters, &t, &eval, &bg, true).unwrap();
            let want = brute_force(&net, &w, &t, &eval, &bg);
            worst_oracle = got.iter().zip(&want).map(|(g, e)| (g - e).abs()).fold(worst_oracle, f64::max);
        }

        // Telescoping: the components of a branch over all subsets of its
        // cluster add back up to the branch.
        let view = AdditiveView::new(&net).unwrap();
        let parts = view.parts(&w, &clusters);
        for (b, c) in clusters.iter().enumerate() {
            let comps = additive_components(&parts[b..=b], &subsets(&c.features), &eval, &bg).unwrap();
            let direct = view.branch_values(&w, b, &eval).unwrap();
            for (row, d) in direct.iter().enumerate() {
                let s: f64 = comps.iter().map(|v| v[row]).sum();
                worst_sum = worst_sum.max((s - d).abs());
            }
        }

        // Features split across separate subnets never interact.
        let (net2, w2) = additive_net(p, (0..p).map(|j| vec![j]).collect(), inst + 50);
        let cl2: Vec<InputCluster> = extract_clusters(&net2, &w2, Threshold::Absolute(0.0)).unwrap();
        let pair = anova_component(&net2, &w2, &cl2, &[0, 1], &eval, &bg, true).unwrap();
        worst_zero = pair.iter().map(|v| v.abs()).fold(worst_zero, f64::max);
    }
    check(
        worst_oracle <= 1e-10 && worst_zero == 0.0 && worst_sum <= 1e-8,
        format!("20 instances: max |I_T - brute force| {worst_oracle:.1e}, additive pair max {worst_zero:e}, telescoping gap {worst_sum:.1e}"),
    )
}

// 6-8 ---------------------------------------------------------------------

struct Fit {
    variant: Variant,
    seed: u64,
    train: Dataset,
    model: TrainedModel,
    rmse: f64,
    mll: f64,
}

fn fit_f1(variant: Variant, seed: u64) -> Fit {
    let (train, test, _) = generate_train_test(1, 5000, 5000, 1.0, seed).unwrap();
    let cfg = AddNnConfig {
        variant,
        seed,
        ..AddNnConfig::default()
    };
    let (model, _) = cfg.fit(&train, &cfg.training()).unwrap();
    let pred = model.predict(&test.raw_x(), 50, seed).unwrap();
    let m = metrics(&pred.mean_vec(), &pred.predictive_variance(), &test.y, None, None).unwrap();
    Fit {
        variant,
        seed,
        train,
        model,
        rmse: m.rmse,
        mll: m.mll,
    }
}

fn strengths(fit: &Fit) -> bnn_skeleton::addnn::InteractionReport {
    let clusters = model_clusters(&fit.model, Threshold::default()).unwrap();
    let cfg = InteractionConfig {
        mc_draws: 10,
        heatmap_grid: 0,
        seed: fit.seed,
        ..InteractionConfig::default()
    };
    interaction_strengths(&fit.model, &fit.train, &clusters, &cfg).unwrap()
}

fn criterion_6(fits: &[Fit]) -> Outcome {
    let rmses: Vec<String> = fits.iter().map(|f| format!("{:.3}", f.rmse)).collect();
    let good = fits.iter().filter(|f| f.rmse <= 1.15).count();
    check(good >= 4, format!("mcdropout test RMSE over seeds 0-4: [{}], {good}/5 within 1.15", rmses.join(", ")))
}

fn criterion_7(fits: &[Fit]) -> Outcome {
    let truth = vec![vec![0usize, 1]];
    let mut good = 0;
    let mut per_seed = Vec::new();
    for f in fits {
        let rep = strengths(f);
        let recall = top_rank_recall(&truth, &rep.ranking());
        let target = rep.strength(&[0, 1]);
        let rival = rep
            .entries
            .iter()
            .filter(|e| e.subset.len() == 2 && e.subset != [0, 1])
            .map(|e| e.strength)
            .fold(0.0, f64::max);
        if recall == 1.0 && target > rival {
            good += 1;
        }
        per_seed.push(format!("seed {}: recall {recall}, x1:x2 {target:.2} vs next pair {rival:.2}", f.seed));
    }
    check(good >= 4, format!("{good}/5 seeds; {}", per_seed.join("; ")))
}

fn criterion_8(fits: &[&Fit]) -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for f in fits {
        let rep = strengths(f);
        let main: Vec<f64> = (0..10).map(|j| rep.strength(&[j])).collect();
        let top = main.iter().cloned().fold(f64::MIN, f64::max);
        let x4_top = main[3] == top;
        let noise = main[5..].iter().cloned().fold(0.0, f64::max);
        let pass = x4_top && noise < 0.2 * main[3] && f.mll.is_finite() && f.mll > -3.0;
        ok &= pass;
        details.push(format!(
            "{}: x4 {:.2} (largest: {x4_top}), max x6-x10 {:.2}, mll {:.3}",
            f.variant, main[3], noise, f.mll
        ));
    }
    check(ok, details.join("; "))
}

// 9 -----------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let mut worst: f64 = 0.0;
    for case in 0..10u64 {
        let mut r = rng::stream(case, 9);
        let (rows, cols) = (r.gen_range(1..=4usize), r.gen_range(1..=3usize));
        let mean = Matrix::from_fn(rows, cols, |_, _| r.gen_range(-1.5..1.5));
        let log_std = Matrix::from_fn(rows, cols, |_, _| r.gen_range(-1.0..0.5));
        let q = VariationalState {
            groups: vec![GroupPosterior::Gaussian {
                mean: mean.clone(),
                log_std: log_std.clone(),
            }],
            priors: vec![Prior::StandardNormal],
            bias_rows: vec![false],
        };
        let closed = kl_term(&q).map_err(|e| e.to_string())?;
        let n = 1_000_000;
        let mc: f64 = (0..n)
            .map(|_| {
                mean.data()
                    .iter()
                    .zip(log_std.data())
                    .map(|(&m, &s)| {
                        let e: f64 = r.sample(StandardNormal);
                        let w = m + s.exp() * e;
                        // log q(w) - log p(w)
                        -s - 0.5 * e * e + 0.5 * w * w
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64;
        worst = worst.max((closed - mc).abs() / closed.abs());
    }
    let at_prior = VariationalState {
        groups: vec![GroupPosterior::Gaussian {
            mean: Matrix::zeros(3, 2),
            log_std: Matrix::zeros(3, 2),
        }],
        priors: vec![Prior::StandardNormal],
        bias_rows: vec![false],
    };
    let zero = kl_term(&at_prior).map_err(|e| e.to_string())?;
    check(worst <= 0.01 && zero == 0.0, format!("max relative gap to MC {worst:.2e} over 10 cases, KL(prior || prior) = {zero}"))
}

// 10 ----------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let noise: f64 = 0.5;
    let mut r = rng::stream(10, 0);
    let x = Matrix::from_fn(20, 3, |_, _| r.sample(StandardNormal));
    let w_true = [0.8, -1.2, 0.3];
    let y: Vec<f64> = (0..20)
        .map(|i| x.row(i).iter().zip(w_true).map(|(a, b)| a * b).sum::<f64>() + noise.sqrt() * r.sample::<f64, _>(StandardNormal))
        .collect();

    let xn = to_na(&x);
    let yn = DVector::from_vec(y.clone());
    let precision = xn.transpose() * &xn / noise + DMatrix::identity(3, 3);
    let exact = precision.cholesky().ok_or("not SPD")?.solve(&(xn.transpose() * yn / noise));

    let sk = Skeleton::parse("layers = [1, 1]\nwidths = [3, 1]\nactivations = [\"none\", \"identity\"]\n").map_err(|e| e.to_string())?;
    let plan = PosteriorPlan::uniform(GroupSpec::new(FamilyKind::gaussian(), Prior::StandardNormal));
    let data = Dataset::new(x, y, vec!["a".into(), "b".into(), "c".into()], "y").map_err(|e| e.to_string())?;
    let config = TrainConfig {
        steps: 12_000,
        batch_size: 20,
        lr: 0.02,
        decay_steps: 2000,
        mc_samples: 32,
        ..TrainConfig::default()
    };
    let lik = Likelihood::gaussian(noise, false).map_err(|e| e.to_string())?;
    let scaling = Scaling { inputs: false, target: false };
    let (model, _) = TrainedModel::fit(&sk, &BuildPolicy::default(), &plan, lik, &data, &config, scaling).map_err(|e| e.to_string())?;
    let vi = model.q.means().remove(0);
    let gap = (0..3).map(|k| (vi.get(k, 0) - exact[k]).abs()).fold(0.0, f64::max);
    check(gap <= 1e-2, format!("max |VI mean - posterior mean| = {gap:.2e}"))
}

fn main() {
    let start = Instant::now();
    let mut failed = 0;
    let mut report = |id: usize, name: &str, t: Instant, outcome: Outcome| {
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id:>2} PASS  {name} ({secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} ({secs:.1}s): {d}");
            }
        }
    };

    let t = Instant::now();
    report(1, "ELBO gradients vs central differences", t, criterion_1());
    let t = Instant::now();
    report(2, "random-feature kernel concentration", t, criterion_2());
    let t = Instant::now();
    report(3, "arc-cosine closed form vs Monte Carlo", t, criterion_3());
    let t = Instant::now();
    report(4, "random-feature / inducing-point equivalence", t, criterion_4());
    let t = Instant::now();
    report(5, "ANOVA components vs brute force", t, criterion_5());

    let t = Instant::now();
    let jobs: Vec<(Variant, u64)> = (0..5).map(|s| (Variant::McDropout, s)).chain([Variant::Rf, Variant::Dkl, Variant::Drf].map(|v| (v, 0))).collect();
    let fits: Vec<Fit> = jobs.into_par_iter().map(|(v, s)| fit_f1(v, s)).collect();
    let (dropout, others) = fits.split_at(5);
    report(6, "f1 test RMSE, mcdropout", t, criterion_6(dropout));
    let t = Instant::now();
    report(7, "f1 interaction detection", t, criterion_7(dropout));
    let t = Instant::now();
    let variants: Vec<&Fit> = std::iter::once(&dropout[0]).chain(others).collect();
    report(8, "main-effect ordering across variants", t, criterion_8(&variants));

    let t = Instant::now();
    report(9, "Gaussian KL vs Monte Carlo", t, criterion_9());
    let t = Instant::now();
    report(10, "Bayesian linear regression posterior mean", t, criterion_10());

    println!("{} of 10 criteria passed in {:.0}s", 10 - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
