//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 6 and 7 train CNN-5 models on the default-size synthetic dataset and take
//! well over an hour on one core. `LEVEMB_ACCEPTANCE_ONLY=1,2,8` restricts the run to
//! the listed criteria.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use levemb_core::datagen::PairSample;
use levemb_core::esd::{detect_esd, Spectrum, DEFAULT_SLACK, DEFAULT_TAU, EsdOutcome};
use levemb_core::eval::{chi2_fit, variance_profile};
use levemb_core::ndnet::{
    avgpool1d_backward, avgpool1d_forward, batchnorm1d_backward, batchnorm1d_forward, conv1d_backward, conv1d_forward,
    grad_check, linear_backward, linear_forward, relu_backward, relu_forward, BatchNormState, GradCheckReport, Mode,
    Tensor,
};
use levemb_core::rng::{Rng, Streams};
use levemb_core::seqcore::{levenshtein, Sequence};
use levemb_core::siamese::{
    accumulate_gradients, init_scale, predict_distance, ArchKind, ArchitectureSpec, EmbeddingModel, LossKind,
};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(label: &str, idx: u64) -> Rng {
    Streams::new(2024).rng(label, idx)
}

// ---------------------------------------------------------------- 1: oracle

/// Plain memoised recursion on prefix lengths.
fn recursion(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut [[Option<usize>; 7]; 7]) -> usize {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if i == 0 {
            j
        } else if j == 0 {
            i
        } else {
            let sub = go(a, b, i - 1, j - 1, memo) + usize::from(a[i - 1] != b[j - 1]);
            sub.min(go(a, b, i - 1, j, memo) + 1).min(go(a, b, i, j - 1, memo) + 1)
        };
        memo[i][j] = Some(v);
        v
    }
    go(a, b, a.len(), b.len(), &mut [[None; 7]; 7])
}

fn random_seq(g: &mut Rng, min_len: usize, max_len: usize, symbols: u8) -> Sequence {
    let len = g.random_range(min_len..=max_len);
    Sequence::from_codes((0..len).map(|_| g.random_range(0..symbols)).collect())
}

fn criterion_1() -> Outcome {
    let mut g = rng("oracle", 0);
    let mut mismatches = 0;
    for _ in 0..100_000 {
        let (s, t) = (random_seq(&mut g, 0, 6, 4), random_seq(&mut g, 0, 6, 4));
        if levenshtein(&s, &t) != recursion(s.content(), t.content()) {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches in 10^5 pairs"))?;
    let mut violations = 0;
    for _ in 0..10_000 {
        let x = random_seq(&mut g, 0, 12, 4);
        let y = random_seq(&mut g, 0, 12, 4);
        let z = random_seq(&mut g, 0, 12, 4);
        let (xy, yz, xz) = (levenshtein(&x, &y), levenshtein(&y, &z), levenshtein(&x, &z));
        let ok = levenshtein(&x, &x) == 0
            && (xy == 0) == (x == y)
            && xy == levenshtein(&y, &x)
            && xz <= xy + yz;
        violations += usize::from(!ok);
    }
    ensure(violations == 0, || format!("{violations} metric-axiom violations in 10^4 triples"))?;
    Ok("10^5 pairs match the recursion; 10^4 triples satisfy the metric axioms".into())
}

// ---------------------------------------------------------------- 2: gradients

const REPS: u64 = 20;
const TOL: f64 = 1e-4;
const BN_TOL: f64 = 1e-3;
const H: f64 = 1e-6;

fn normal(shape: &[usize], g: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| StandardNormal.sample(g)).collect()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn with(t: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(t.shape(), data.to_vec()).unwrap()
}

struct Worst(f64, String);

impl Worst {
    fn add(&mut self, what: &str, r: GradCheckReport, tol: f64) -> Result<(), String> {
        if r.max_rel_err > self.0 {
            *self = Worst(r.max_rel_err, what.to_string());
        }
        ensure(r.passed() && r.max_rel_err < tol, || format!("{what}: rel err {:.3e}", r.max_rel_err))
    }
}

fn layer_gradients(worst: &mut Worst) -> Result<(), String> {
    for rep in 0..REPS {
        let mut g = rng("conv", rep);
        let (b, ci, co, l) = (g.random_range(1..4), g.random_range(1..5), g.random_range(1..5), g.random_range(1..9));
        let (x, w, bias) = (normal(&[b, ci, l], &mut g), normal(&[co, ci, 3], &mut g), normal(&[co], &mut g));
        let probe = normal(&[b, co, l], &mut g);
        let gr = conv1d_backward(&x, &w, &bias, &probe).unwrap();
        let obj = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(conv1d_forward(x, w, b).unwrap().data(), probe.data());
        let r = grad_check(|v| obj(&with(&x, v), &w, &bias), x.data(), gr.input.unwrap().data(), H, TOL, None, &mut g);
        worst.add("conv input", r, TOL)?;
        let r = grad_check(|v| obj(&x, &with(&w, v), &bias), w.data(), gr.weight.data(), H, TOL, None, &mut g);
        worst.add("conv weight", r, TOL)?;
        let r = grad_check(|v| obj(&x, &w, &with(&bias, v)), bias.data(), gr.bias.data(), H, TOL, None, &mut g);
        worst.add("conv bias", r, TOL)?;

        let mut g = rng("pool", rep);
        let (b, c, l) = (g.random_range(1..4), g.random_range(1..4), g.random_range(2..11));
        let x = normal(&[b, c, l], &mut g);
        let probe = normal(&[b, c, l / 2], &mut g);
        let dx = avgpool1d_backward(&probe, l).unwrap();
        let r = grad_check(|v| dot(avgpool1d_forward(&with(&x, v)).unwrap().data(), probe.data()), x.data(), dx.data(), H, TOL, None, &mut g);
        worst.add("avgpool", r, TOL)?;

        let mut g = rng("relu", rep);
        let (b, f) = (g.random_range(1..5), g.random_range(1..8));
        let mut x = normal(&[b, f], &mut g);
        x.data_mut().iter_mut().for_each(|v| *v += 0.1f64.copysign(*v));
        let probe = normal(&[b, f], &mut g);
        let dx = relu_backward(&relu_forward(&x), &probe).unwrap();
        let r = grad_check(|v| dot(relu_forward(&with(&x, v)).data(), probe.data()), x.data(), dx.data(), H, TOL, None, &mut g);
        worst.add("relu", r, TOL)?;

        let mut g = rng("linear", rep);
        let (b, fi, fo) = (g.random_range(1..5), g.random_range(1..7), g.random_range(1..7));
        let (x, w, bias) = (normal(&[b, fi], &mut g), normal(&[fo, fi], &mut g), normal(&[fo], &mut g));
        let probe = normal(&[b, fo], &mut g);
        let gr = linear_backward(&x, &w, &bias, &probe).unwrap();
        let obj = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(linear_forward(x, w, b).unwrap().data(), probe.data());
        let r = grad_check(|v| obj(&with(&x, v), &w, &bias), x.data(), gr.input.data(), H, TOL, None, &mut g);
        worst.add("linear input", r, TOL)?;
        let r = grad_check(|v| obj(&x, &with(&w, v), &bias), w.data(), gr.weight.data(), H, TOL, None, &mut g);
        worst.add("linear weight", r, TOL)?;
        let r = grad_check(|v| obj(&x, &w, &with(&bias, v)), bias.data(), gr.bias.data(), H, TOL, None, &mut g);
        worst.add("linear bias", r, TOL)?;

        let mut g = rng("bn", rep);
        let (b, f) = (g.random_range(2..7), g.random_range(1..6));
        let x = normal(&[b, f], &mut g);
        let mut state = BatchNormState::<f64>::new("bn", f, [1e-9, 1e-5, 1e-2][rep as usize % 3], 0.1).unwrap();
        state.gamma.value = normal(&[f], &mut g);
        state.beta.value = normal(&[f], &mut g);
        let probe = normal(&[b, f], &mut g);
        let obj = |x: &Tensor<f64>, st: &BatchNormState<f64>| {
            let mut st = st.clone();
            dot(batchnorm1d_forward(x, &mut st, Mode::Train).unwrap().0.data(), probe.data())
        };
        let mut st = state.clone();
        let (_, cache) = batchnorm1d_forward(&x, &mut st, Mode::Train).unwrap();
        let dx = batchnorm1d_backward(&cache.unwrap(), &mut st, &probe).unwrap();
        let r = grad_check(|v| obj(&with(&x, v), &state), x.data(), dx.data(), H, BN_TOL, None, &mut g);
        worst.add("batchnorm input", r, BN_TOL)?;
        let set_gamma = |v: &[f64]| {
            let mut s = state.clone();
            s.gamma.value = with(&state.gamma.value, v);
            obj(&x, &s)
        };
        let r = grad_check(set_gamma, state.gamma.value.data(), st.gamma.grad.data(), H, BN_TOL, None, &mut g);
        worst.add("batchnorm gamma", r, BN_TOL)?;
        let set_beta = |v: &[f64]| {
            let mut s = state.clone();
            s.beta.value = with(&state.beta.value, v);
            obj(&x, &s)
        };
        let r = grad_check(set_beta, state.beta.value.data(), st.beta.grad.data(), H, BN_TOL, None, &mut g);
        worst.add("batchnorm beta", r, BN_TOL)?;
    }
    Ok(())
}

fn all_losses() -> Vec<LossKind> {
    let mut kinds = LossKind::TABLE.to_vec();
    kinds.extend([0.5, 1.0, 10.0, 100.0].map(|k| LossKind::gnll(k).unwrap()));
    kinds
}

fn loss_gradients(worst: &mut Worst) -> Result<(), String> {
    for kind in all_losses() {
        for rep in 0..REPS {
            let mut g = rng(&kind.to_string(), rep);
            let d = f64::from(g.random_range(0..31u32));
            let mut dhat: f64 = g.random_range(0.05..50.0);
            if (dhat - d).abs() < 1e-2 {
                dhat += 0.5;
            }
            let (_, grad) = kind.eval(dhat, d).unwrap();
            let r = grad_check(|v| kind.value(v[0], d).unwrap(), &[dhat], &[grad], H, TOL, None, &mut g);
            worst.add(&format!("{kind} loss"), r, TOL)?;
        }
    }
    Ok(())
}

fn model_loss(model: &EmbeddingModel<f64>, batch: &[PairSample], kind: LossKind) -> f64 {
    let seqs: Vec<&Sequence> = batch.iter().map(|p| &p.s).chain(batch.iter().map(|p| &p.t)).collect();
    let emb = model.forward(&model.encode_batch(&seqs).unwrap(), Mode::Train).unwrap();
    let n = model.spec.embedding_dim;
    let (u, v) = emb.data().split_at(batch.len() * n);
    let total: f64 = batch
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let dhat = predict_distance(model.scale(), &u[i * n..(i + 1) * n], &v[i * n..(i + 1) * n]).unwrap();
            kind.value(dhat, f64::from(p.d)).unwrap()
        })
        .sum();
    total / batch.len() as f64
}

fn set_values(model: &mut EmbeddingModel<f64>, v: &[f64]) {
    let mut off = 0;
    for p in model.parameters_mut() {
        let n = p.len();
        p.value.data_mut().copy_from_slice(&v[off..off + n]);
        off += n;
    }
}

/// Central differences on 150 random coordinates plus `log r`, relative to at least
/// 1e-4 of the largest gradient.
fn model_check(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], g: &mut Rng) -> f64 {
    let floor = analytic.iter().fold(0.0f64, |m, a| m.max(a.abs())) * 1e-4;
    let mut coords = rand::seq::index::sample(g, x.len() - 1, 150).into_vec();
    coords.push(x.len() - 1);
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        probe[i] = x[i] + H;
        let fp = f(&probe);
        probe[i] = x[i] - H;
        let fm = f(&probe);
        probe[i] = x[i];
        let numeric = (fp - fm) / (2.0 * H);
        worst = worst.max((numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(floor));
    }
    worst
}

fn model_gradients(worst: &mut Worst) -> Result<(), String> {
    for (rep, kind) in [ArchKind::Cnn5, ArchKind::Cnn10, ArchKind::Cnn5].into_iter().enumerate() {
        let mut g = rng("model", rep as u64);
        let spec = ArchitectureSpec { kind, embedding_dim: 3 + rep, input_len: 32, alphabet_size: 6 };
        let mut model = EmbeddingModel::<f64>::new(spec, init_scale(20.0, 3).unwrap(), &mut g).unwrap();
        for p in model.parameters_mut() {
            if p.name != "log_r" && !p.name.starts_with("bn.") {
                let fan = p.value.shape().iter().skip(1).product::<usize>().max(1) as f64;
                let t = normal(p.value.shape(), &mut g);
                p.value.data_mut().iter_mut().zip(t.data()).for_each(|(v, z)| *v = z * (2.0 / fan).sqrt());
            }
        }
        let batch: Vec<PairSample> = (0..3)
            .map(|_| {
                let (s, t) = (random_seq(&mut g, 4, 32, 5), random_seq(&mut g, 4, 32, 5));
                let d = levenshtein(&s, &t) as u32;
                PairSample { s, t, d, homologous: false }
            })
            .collect();
        let x: Vec<f64> = model.parameters().iter().flat_map(|p| p.value.data().to_vec()).collect();
        for loss in [LossKind::Pnll, LossKind::Mse, LossKind::ReChi2] {
            let mut m = model.clone();
            m.zero_grad();
            accumulate_gradients(&mut m, &batch.iter().collect::<Vec<_>>(), loss).unwrap();
            let analytic: Vec<f64> = m.parameters().iter().flat_map(|p| p.grad.data().to_vec()).collect();
            let mut probe = model.clone();
            let err = model_check(
                |v| {
                    set_values(&mut probe, v);
                    model_loss(&probe, &batch, loss)
                },
                &x,
                &analytic,
                &mut g,
            );
            let what = format!("{kind} model under {loss}");
            if err > worst.0 {
                *worst = Worst(err, what.clone());
            }
            ensure(err < BN_TOL, || format!("{what}: rel err {err:.3e}"))?;
        }
    }
    Ok(())
}

fn criterion_2() -> Outcome {
    let mut worst = Worst(0.0, String::new());
    layer_gradients(&mut worst)?;
    loss_gradients(&mut worst)?;
    model_gradients(&mut worst)?;
    Ok(format!("5 layers, 8 losses and 3 full models; worst rel err {:.2e} ({})", worst.0, worst.1))
}

// ---------------------------------------------------------------- 3: stationarity

fn numeric_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let steps = 5000;
    let h = (hi - lo) / steps as f64;
    let best = (0..=steps).map(|i| lo + i as f64 * h).min_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-9 {
        let (c, d) = (b - phi * (b - a), a + phi * (b - a));
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    let mut check = |kind: LossKind, d: f64, want: f64| {
        let x = numeric_argmin(|x| kind.value(x, d).unwrap(), 1e-9, 50.0);
        worst = worst.max((x - want).abs());
        ensure((x - want).abs() < 1e-3, || format!("{kind} argmin at d={d} is {x:.6}, expected {want}"))
    };
    for d in 1..=30 {
        let d = f64::from(d);
        check(LossKind::Pnll, d, d)?;
        if d >= 3.0 {
            check(LossKind::ReChi2, d, d - 2.0)?;
        }
        for k in [1.0, 10.0, 100.0] {
            if d >= 2.0 / k {
                check(LossKind::gnll(k).unwrap(), d, d - 2.0 / k)?;
            }
        }
    }
    let (g, mut sup) = (LossKind::gnll(1e6).unwrap(), 0.0f64);
    for d in 0..=30 {
        for i in 0..=500 {
            let (x, d) = (1e-6 + 50.0 * f64::from(i) / 500.0, f64::from(d));
            sup = sup.max((g.value(x, d).unwrap() - LossKind::Pnll.value(x, d).unwrap()).abs());
        }
    }
    ensure(sup < 1e-4, || format!("sup |GNLL(1e6) - PNLL| = {sup:.2e}"))?;
    Ok(format!("max argmin error {worst:.1e}; sup |GNLL(1e6) - PNLL| = {sup:.1e}"))
}

// ---------------------------------------------------------------- 4: distribution law

fn gaussian(n: usize, g: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(g)).collect()
}

fn orthogonal(n: usize, g: &mut Rng) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v = gaussian(n, g);
        for _ in 0..2 {
            for row in &q {
                let c = dot(row, &v);
                v.iter_mut().zip(row).for_each(|(x, r)| *x -= c * r);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q
}

fn criterion_4() -> Outcome {
    const SAMPLES: usize = 100_000;
    let mut notes = Vec::new();
    for (n, m_dist, d) in [(80usize, 80.0, 5u32), (120, 80.0, 2), (120, 80.0, 10)] {
        let mut g = rng("harness", u64::from(d) * 1000 + n as u64);
        let r = (m_dist / (2.0 * n as f64)).sqrt();
        let indep: f64 = (0..SAMPLES)
            .map(|_| predict_distance(r, &gaussian(n, &mut g), &gaussian(n, &mut g)).unwrap())
            .sum::<f64>()
            / SAMPLES as f64;
        let mean_err = indep / (2.0 * n as f64 * r * r) - 1.0;
        ensure(mean_err.abs() < 0.01, || format!("(n,M)=({n},{m_dist}): independent mean off by {:.2}%", 100.0 * mean_err))?;

        // ũ − ṽ confined to m = nd/M orthonormal directions, each with variance M/n
        let p = orthogonal(n, &mut g);
        let m = (n as f64 * f64::from(d) / m_dist).round() as usize;
        let c = (m_dist / n as f64).sqrt();
        let dhat: Vec<f64> = (0..SAMPLES)
            .map(|_| {
                let u: Vec<f64> = gaussian(n, &mut g).into_iter().map(|x| r * x).collect();
                let mut v = u.clone();
                for row in p.iter().take(m) {
                    let y: f64 = StandardNormal.sample(&mut g);
                    v.iter_mut().zip(row).for_each(|(vi, ri)| *vi -= c * y * ri);
                }
                predict_distance(1.0, &u, &v).unwrap()
            })
            .collect();
        let stub = Sequence::from_codes(vec![]);
        let samples: Vec<PairSample> =
            (0..SAMPLES).map(|_| PairSample { s: stub.clone(), t: stub.clone(), d, homologous: true }).collect();
        let row = variance_profile(&dhat, &samples, m_dist, n, 30).map_err(|e| e.to_string())?.rows[0].clone();
        ensure((row.ratio - 1.0).abs() < 0.05, || format!("(n,M,d)=({n},{m_dist},{d}): Var ratio {:.4}", row.ratio))?;
        let fit = chi2_fit(&dhat, f64::from(d), n as f64 / m_dist, 0.01).map_err(|e| e.to_string())?;
        ensure(fit.passed, || format!("(n,M,d)=({n},{m_dist},{d}): KS {:.4} >= {:.4}", fit.ks, fit.critical))?;
        notes.push(format!("({n},{m_dist},{d}) mean {:+.2}% var {:.3} KS p {:.2}", 100.0 * mean_err, row.ratio, fit.p_value));
    }
    Ok(notes.join("; "))
}

// ---------------------------------------------------------------- 5: ESD oracle

fn criterion_5() -> Outcome {
    // enough rows that sampling spread does not blur the cliff at r
    let (r, rows) = (50usize, 40_000usize);
    let mut g = rng("esd", 0);
    let spectra: Vec<Spectrum> = [40usize, 60, 80, 100]
        .iter()
        .map(|&n| {
            let data = if r >= n {
                gaussian(rows * n, &mut g)
            } else {
                let basis = orthogonal(n, &mut g);
                (0..rows)
                    .flat_map(|_| {
                        let z = gaussian(r, &mut g);
                        (0..n).map(|j| (0..r).map(|k| z[k] * basis[k][j]).sum::<f64>()).collect::<Vec<_>>()
                    })
                    .collect()
            };
            Spectrum::from_embeddings(&Tensor::from_vec(&[rows, n], data).unwrap(), rows, &mut g).unwrap()
        })
        .collect();
    let report = detect_esd(&spectra, DEFAULT_TAU, DEFAULT_SLACK).map_err(|e| e.to_string())?;
    let ranks: Vec<String> = report.ranks.iter().map(|x| format!("{}:{} c{:.2}", x.dim, x.effective_rank, x.contrast)).collect();
    ensure(report.outcome == EsdOutcome::Detected { n0: r }, || format!("outcome {:?}, ranks {}", report.outcome, ranks.join(" ")))?;
    Ok(format!("n0 = {r}; ranks {}", ranks.join(" ")))
}

// ---------------------------------------------------------------- CLI helpers

fn levemb(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_levemb"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("levemb {} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()))?;
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `(loss, dim) → [(ae_g, ae_h)]` from an errors.csv.
fn read_errors(path: &Path) -> Result<BTreeMap<(String, usize), Vec<(f64, f64)>>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut out: BTreeMap<(String, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| f[i].parse::<f64>().map_err(|e| format!("{line}: {e}"));
        let dim = f[1].parse::<usize>().map_err(|e| e.to_string())?;
        out.entry((f[2].to_string(), dim)).or_default().push((num(4)?, num(5)?));
    }
    Ok(out)
}

// ---------------------------------------------------------------- 6, 7: desk scale

const DESK_EPOCHS: &str = "20";
const SCAN_DIMS: [usize; 5] = [10, 20, 40, 80, 160];

fn desk_data(root: &Path) -> Result<PathBuf, String> {
    let data = root.join("desk_data");
    if !data.join("manifest.json").exists() {
        levemb(&[
            "gen-data", "--out", s(&data), "--test-fraction", "0.5", "--train-homologous", "4000", "--train-nonhomologous",
            "4000", "--test-homologous", "1000", "--test-nonhomologous", "1000", "--seed", "0", "--force",
        ])?;
    }
    Ok(data)
}

fn criterion_6(root: &Path, n0_out: &mut Option<usize>) -> Outcome {
    let data = desk_data(root)?;
    let out = root.join("desk_esd");
    let dims = SCAN_DIMS.map(|d| d.to_string()).join(",");
    levemb(&["esd-scan", "--data", s(&data), "--out", s(&out), "--dims", &dims, "--seeds", "0,1", "--epochs", DESK_EPOCHS, "--force"])?;
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("esd_report.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut n0s = Vec::new();
    let mut notes = Vec::new();
    for seed in [0u64, 1] {
        let entry = report.as_array().and_then(|a| a.iter().find(|e| e["seed"] == seed)).ok_or("seed missing from report")?;
        let outcome = &entry["report"]["outcome"];
        let ranks: Vec<String> = entry["report"]["ranks"]
            .as_array()
            .ok_or("ranks missing")?
            .iter()
            .map(|r| format!("{}:{}", r["dim"], r["effective_rank"]))
            .collect();
        ensure(outcome["kind"] == "detected", || format!("seed {seed}: outcome {outcome}, ranks {}", ranks.join(" ")))?;
        let n0 = outcome["n0"].as_u64().ok_or("n0 missing")? as usize;
        notes.push(format!("seed {seed} n0 {n0} (ranks {})", ranks.join(" ")));
        n0s.push(n0);

        let mut by_dim: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let spectrum = fs::read_to_string(out.join(format!("spectrum_seed{seed}.csv"))).map_err(|e| e.to_string())?;
        for line in spectrum.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            by_dim.entry(f[0].parse().unwrap()).or_default().push(f[2].parse().unwrap());
        }
        let (&small, ev) = by_dim.iter().next().unwrap();
        let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
        ensure(min >= 0.5, || format!("seed {seed}: smallest eigenvalue at dim {small} is {min:.3}"))?;
        let large: Vec<(&usize, &Vec<f64>)> = by_dim.iter().filter(|(&d, _)| 2 * d >= 3 * n0).collect();
        ensure(!large.is_empty(), || format!("seed {seed}: no scanned dim at or above 1.5 n0 = {n0}"))?;
        for (d, ev) in large {
            let frac = ev.iter().filter(|&&l| l < 0.1).count() as f64 / ev.len() as f64;
            ensure(frac >= 0.2, || format!("seed {seed}: only {:.0}% eigenvalues < 0.1 at dim {d}", 100.0 * frac))?;
            notes.push(format!("{:.0}% < 0.1 at {d}", 100.0 * frac));
        }
    }
    let step = SCAN_DIMS.windows(2).map(|w| w[1] - w[0]).min().unwrap();
    ensure(n0s[0].abs_diff(n0s[1]) <= step, || format!("n0 {} vs {} differ by more than one grid step ({step})", n0s[0], n0s[1]))?;
    *n0_out = Some((n0s[0] + n0s[1]) / 2);
    Ok(notes.join("; "))
}

fn criterion_7(root: &Path, n0: Option<usize>) -> Outcome {
    let n0 = n0.ok_or("no n0 from criterion 6")?;
    let data = desk_data(root)?;
    let at = root.join("desk_grid_n0");
    let half = root.join("desk_grid_half");
    let (dim, half_dim) = (n0.to_string(), (n0 / 2).to_string());
    let common = ["--seeds", "0,1,2", "--epochs", DESK_EPOCHS, "--force"];
    let mut args = vec!["grid", "--data", s(&data), "--out", s(&at), "--dims", &dim, "--losses", "pnll,mae,rechi2,mse"];
    args.extend(common);
    levemb(&args)?;
    let mut args = vec!["grid", "--data", s(&data), "--out", s(&half), "--dims", &half_dim, "--losses", "pnll"];
    args.extend(common);
    levemb(&args)?;

    let errors = read_errors(&at.join("errors.csv"))?;
    let med = |loss: &str, pick: fn(&(f64, f64)) -> f64| -> Result<f64, String> {
        let runs = errors.get(&(loss.to_string(), n0)).ok_or(format!("{loss} missing"))?;
        Ok(median(runs.iter().map(pick).collect()))
    };
    let pnll = med("pnll", |r| r.1)?;
    let mut notes = vec![format!("n = {n0}: median AE_h pnll {pnll:.3}")];
    let mut failures = Vec::new();
    for other in ["mae", "rechi2", "mse"] {
        let v = med(other, |r| r.1)?;
        notes.push(format!("{other} {v:.3}"));
        if pnll >= v {
            failures.push(format!("pnll {pnll:.3} >= {other} {v:.3}"));
        }
    }
    let g_full = med("pnll", |r| r.0)?;
    let half_errors = read_errors(&half.join("errors.csv"))?;
    let runs = half_errors.get(&("pnll".to_string(), n0 / 2)).ok_or("half-dim pnll missing")?;
    let g_half = median(runs.iter().map(|r| r.0).collect());
    notes.push(format!("median AE_g {g_full:.3} at {n0} vs {g_half:.3} at {}", n0 / 2));
    if g_full >= g_half {
        failures.push(format!("AE_g {g_full:.3} at n0 is not below {g_half:.3} at n0/2"));
    }
    if failures.is_empty() {
        Ok(notes.join(", "))
    } else {
        Err(format!("{} ({})", failures.join("; "), notes.join(", ")))
    }
}

/// Median trained PNLL AE_h at n0 against the untrained model of the same shape.
fn pnll_beats_untrained(root: &Path, n0: Option<usize>) -> Outcome {
    let n0 = n0.ok_or("no n0 from criterion 6")?;
    let data = desk_data(root)?;
    let errors = read_errors(&root.join("desk_grid_n0").join("errors.csv"))?;
    let runs = errors.get(&("pnll".to_string(), n0)).ok_or("criterion 7 grid missing")?;
    let trained = median(runs.iter().map(|r| r.1).collect());
    let (init, ev) = (root.join("untrained"), root.join("untrained_eval"));
    levemb(&["train", "--data", s(&data), "--out", s(&init), "--dim", &n0.to_string(), "--epochs", "0", "--force"])?;
    let ck = init.join("checkpoint.bin");
    levemb(&["eval", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&ev), "--outlier-sequences", "0", "--force"])?;
    let base = read_errors(&ev.join("errors.csv"))?.into_values().next().ok_or("empty errors.csv")?[0].1;
    let factor = base / trained;
    let note = format!("untrained AE_h {base:.3}, trained {trained:.3}, factor {factor:.2}");
    ensure(factor >= 5.0, || note.clone())?;
    Ok(note)
}

// ---------------------------------------------------------------- 8: determinism

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_8(root: &Path) -> Outcome {
    let dir = root.join("determinism");
    let data = dir.join("data");
    let run = dir.join("run");
    let ck = run.join("checkpoint.bin");
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("gen-data", vec!["--out", s(&data), "--clusters", "80", "--ref-len", "80", "--train-homologous", "150", "--train-nonhomologous", "150", "--test-homologous", "60", "--test-nonhomologous", "60", "--m-samples", "300", "--seed", "11"]),
        ("train", vec!["--data", s(&data), "--out", s(&run), "--dim", "12", "--epochs", "2", "--batch-size", "32", "--seed", "4", "--validation-pairs", "30"]),
        ("eval", vec!["--checkpoint", s(&ck), "--data", s(&data), "--out", s(&dir.join("eval")), "--outlier-sequences", "5"]),
        ("eval", vec!["--oracle", "--data", s(&data), "--out", s(&dir.join("oracle")), "--outlier-sequences", "5"]),
        ("esd-scan", vec!["--data", s(&data), "--out", s(&dir.join("esd")), "--dims", "4,8,16", "--seeds", "0,1", "--epochs", "1", "--sample-pairs", "500"]),
        ("grid", vec!["--data", s(&data), "--out", s(&dir.join("grid")), "--dims", "6", "--losses", "pnll,mse", "--seeds", "0,1", "--epochs", "1", "--validation-pairs", "30"]),
    ]
    .into_iter()
    .map(|(cmd, args)| (cmd, args.into_iter().map(String::from).collect()))
    .collect();
    let mut files = 0;
    for (cmd, args) in &commands {
        let out = PathBuf::from(&args[args.iter().position(|a| a == "--out").unwrap() + 1]);
        let mut argv: Vec<&str> = vec![cmd];
        argv.extend(args.iter().map(String::as_str));
        argv.push("--force");
        levemb(&argv)?;
        let first = snapshot(&out);
        levemb(&argv)?;
        let second = snapshot(&out);
        let differing: Vec<String> = first
            .iter()
            .zip(&second)
            .filter(|(a, b)| a != b)
            .map(|(a, _)| a.0.display().to_string())
            .collect();
        ensure(first.len() == second.len() && differing.is_empty(), || format!("{cmd} rerun differs in {differing:?}"))?;
        files += first.len();
    }
    Ok(format!("{} commands rerun, {files} output files byte-identical", commands.len()))
}

// ---------------------------------------------------------------- runner

fn main() {
    let only: Option<Vec<u32>> = std::env::var("LEVEMB_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |c: u32| only.as_ref().is_none_or(|o| o.contains(&c));
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let mut n0 = None;
    let titles = [
        "Levenshtein oracle and metric axioms",
        "finite-difference gradient suite",
        "loss stationarity",
        "distribution law under the Gaussian harness",
        "ESD synthetic oracle",
        "desk-scale ESD scan",
        "desk-scale loss ordering",
        "determinism",
    ];
    let mut failed = 0;
    for c in 1..=8u32 {
        if !wanted(c) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = match c {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(root, &mut n0),
            7 => criterion_7(root, n0),
            _ => criterion_8(root),
        };
        let secs = t0.elapsed().as_secs_f64();
        let title = titles[c as usize - 1];
        match outcome {
            Ok(detail) => println!("criterion {c} PASS [{secs:.1}s] {title}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {c} FAIL [{secs:.1}s] {title}: {detail}");
            }
        }
    }
    if wanted(7) {
        let t0 = Instant::now();
        match pnll_beats_untrained(root, n0) {
            Ok(d) => println!("example PASS [{:.1}s] PNLL at n0 beats untrained AE_h by >= 5x: {d}", t0.elapsed().as_secs_f64()),
            Err(d) => {
                failed += 1;
                println!("example FAIL [{:.1}s] PNLL at n0 beats untrained AE_h by >= 5x: {d}", t0.elapsed().as_secs_f64());
            }
        }
    }
    drop(tmp);
    if failed > 0 {
        println!("{failed} acceptance checks failed");
        std::process::exit(1);
    }
}
