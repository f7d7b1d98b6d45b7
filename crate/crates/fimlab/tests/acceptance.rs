//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the process exits non-zero if any fails.
//!
//! Positional arguments select criteria by number (`cargo test --test
//! acceptance -- 3 4`); with none, everything runs.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use fimlab::{run_and_save, RECORD_DIR, REPORTS_DIR};
use fimlab_core::approximator::{Activation, ParamFn, Tape};
use fimlab_core::dynamics::{make_oracle_model, DynamicsModel, DynamicsNet, TransitionRef};
use fimlab_core::entropy::{self, ema_update, plugin_entropy, required_horizon, weights_from_entropy};
use fimlab_core::env::{GridConfig, JointAction, PushBox, PushBoxState};
use fimlab_core::harness::{compose_reward, run_training, Mode, RunConfig};
use fimlab_core::influence::{afi_reward, counterfactual_influence, TraceVector};
use fimlab_core::learner::{MixerKind, MixingNet};
use fimlab_core::rng::{self, Rng};
use rand::Rng as _;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_action(r: &mut Rng) -> JointAction {
    (0..2).map(|_| r.gen_range(0..8)).collect()
}

/// Uniform-random rollouts, `(state, action, next)` per step.
fn random_transitions(env: &PushBox, n: usize, r: &mut Rng) -> Vec<(PushBoxState, JointAction, PushBoxState)> {
    let mut out = Vec::with_capacity(n);
    let mut ep = 0;
    while out.len() < n {
        let (mut s, _) = env.reset(ep).unwrap();
        ep += 1;
        while out.len() < n {
            let a = random_action(r);
            let res = env.step(&s, &a).unwrap();
            out.push((s.clone(), a, res.next_state.clone()));
            if res.done {
                break;
            }
            s = res.next_state;
        }
    }
    out
}

fn c1_push_box_separation() -> Outcome {
    let seeds = [0u64, 1, 2];
    let mut means = HashMap::new();
    let mut detail = Vec::new();
    for mode in [Mode::Fim, Mode::Baseline, Mode::AfiOnly, Mode::SfiOnly] {
        let mut rates = Vec::new();
        for &seed in &seeds {
            let cfg = RunConfig {
                mode,
                seed,
                ..RunConfig::default()
            };
            ensure(cfg.total_steps <= 500_000, || format!("budget {} exceeds 500k", cfg.total_steps))?;
            let rec = run_training(&cfg).map_err(|e| format!("{mode} seed {seed}: {e}"))?;
            let rate = rec.final_success_rate().unwrap_or(0.0);
            eprintln!("  criterion 1: {mode} seed {seed} final success {rate:.3}");
            rates.push(rate);
        }
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        detail.push(format!("{mode} {mean:.3} {rates:.2?}"));
        means.insert(mode, mean);
    }
    let detail = detail.join("; ");
    let fim = means[&Mode::Fim];
    ensure(fim >= 0.8, || format!("fim mean {fim:.3} < 0.8 ({detail})"))?;
    ensure(means[&Mode::Baseline] <= 0.1, || format!("baseline above 0.1 ({detail})"))?;
    for m in [Mode::AfiOnly, Mode::SfiOnly] {
        ensure(fim - means[&m] >= 0.3, || format!("fim not 0.3 above {m} ({detail})"))?;
    }
    Ok(detail)
}

fn c2_entropy_ordering() -> Outcome {
    let env = PushBox::new(GridConfig::default()).unwrap();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = random_transitions(&env, 20_000, &mut rng::stream(2, 0))
        .iter()
        .map(|(s, _, n)| (env.flatten_state(s), env.flatten_state(n)))
        .collect();
    let p = entropy::profile(&pairs, entropy::DEFAULT_EPSILON, 0.1).map_err(|e| e.to_string())?;
    let boxes = env.box_dimensions();
    let agent_min = (0..p.dim()).filter(|d| !boxes.contains(d)).map(|d| p.raw_entropy[d]).fold(f64::INFINITY, f64::min);
    let box_max = boxes.iter().map(|&d| p.raw_entropy[d]).fold(f64::NEG_INFINITY, f64::max);
    let box_weight: f64 = boxes.iter().map(|&d| p.weight[d]).sum();
    ensure(agent_min > box_max, || format!("agent min H {agent_min:.4} <= box max H {box_max:.4}"))?;
    ensure(box_weight >= 0.8, || format!("box weight {box_weight:.4} < 0.8"))?;
    Ok(format!("agent min H {agent_min:.3} > box max H {box_max:.3}; box weight {box_weight:.4}"))
}

/// Per-dimension influence written as three nested loops straight over the
/// simulator.
fn brute_force_influence(env: &PushBox, s: &PushBoxState, a: &[usize]) -> Vec<f64> {
    let x = env.flatten_state(s);
    let actual = env.oracle_next(s, a).unwrap();
    let d = x.len();
    let mut inf = vec![0.0; d];
    for i in 0..a.len() {
        let n = env.action_space_sizes()[i];
        let alts: Vec<Vec<f64>> = (0..n)
            .map(|b| {
                let mut alt = a.to_vec();
                alt[i] = b;
                env.oracle_next(s, &alt).unwrap()
            })
            .collect();
        for k in 0..d {
            let mut gap = 0.0;
            for alt in &alts {
                gap += (actual[k] - x[k]).abs() - (alt[k] - x[k]).abs();
            }
            inf[k] += gap / n as f64;
        }
    }
    inf
}

fn c3_oracle_equivalence() -> Outcome {
    let env = PushBox::new(GridConfig::default()).unwrap();
    let model = make_oracle_model(&env);
    let mut r = rng::stream(3, 0);
    let mut cases = 0;
    let mut nonzero = 0;
    // Mostly states where a push happens so the influence is not trivially zero.
    for (s, a, next) in random_transitions(&env, 200_000, &mut r) {
        if cases >= 100 {
            break;
        }
        let pushes = s.boxes != next.boxes;
        if !pushes && cases % 4 != 0 {
            continue;
        }
        let x = env.flatten_state(&s);
        let got = counterfactual_influence(&model, &x, &a).map_err(|e| e.to_string())?;
        let want = brute_force_influence(&env, &s, &a);
        for k in 0..want.len() {
            ensure(got[k].to_bits() == want[k].to_bits(), || {
                format!("case {cases} dim {k}: {} vs {}", got[k], want[k])
            })?;
        }
        nonzero += want.iter().any(|&v| v != 0.0) as usize;
        cases += 1;
    }
    ensure(cases == 100, || format!("only {cases} cases generated"))?;
    ensure(model.state_dim() == 8, || "state dimension".into())?;
    Ok(format!("{cases} cases bitwise equal, {nonzero} with non-zero influence"))
}

fn c4_arithmetic() -> Outcome {
    let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol;
    let e = |x: fimlab_core::error::Error| x.to_string();

    let mut t = TraceVector::new(1, 0.99).map_err(e)?;
    t.update(&[0.0]).map_err(e)?;
    ensure(t[0] == 0.0, || "zero trace fixed point".into())?;
    t.update(&[2.0]).map_err(e)?;
    t.update(&[1.0]).map_err(e)?;
    // 0.99 * 2.0 + 1.0
    ensure(close(t[0], 2.98, 1e-15), || format!("trace {} != 2.98", t[0]))?;

    let mut c = TraceVector::new(1, 0.99).map_err(e)?;
    for _ in 0..3000 {
        c.update(&[0.5]).map_err(e)?;
    }
    ensure(close(c[0], 0.5 / 0.01, 1e-9), || format!("trace limit {}", c[0]))?;

    let w = weights_from_entropy(&[0.0, 1.0], 0.1).map_err(e)?;
    ensure(close(w[0], 0.9999546, 5e-8) && close(w[1], 0.0000454, 5e-8), || format!("softmax {w:?}"))?;
    let u = weights_from_entropy(&[0.3; 5], 0.1).map_err(e)?;
    ensure(u.iter().all(|&x| close(x, 0.2, 1e-15)), || format!("uniform softmax {u:?}"))?;

    let m = ema_update(&[0.5, 0.5], &[1.0, 0.0], 0.05).map_err(e)?;
    ensure(close(m[0], 0.525, 1e-15) && close(m[1], 0.475, 1e-15), || format!("ema {m:?}"))?;
    ensure(ema_update(&[0.3, 0.7], &[1.0, 0.0], 0.0).map_err(e)? == vec![0.3, 0.7], || "ema phi=0".into())?;

    ensure(required_horizon(10.0, 1.0, 0.5).map_err(e)? == 18, || "horizon 18".into())?;
    ensure(required_horizon(1.0, 2.0, 0.5).map_err(e)? == 0, || "horizon met".into())?;
    let (t1, t2) = (required_horizon(10.0, 1.0, 0.5).map_err(e)?, required_horizon(10.0, 1.0, 0.25).map_err(e)?);
    ensure(t2 >= 2 * t1, || format!("halved rate {t2} < 2 * {t1}"))?;

    ensure(afi_reward(&[2.0, 0.0], &[3.0, 100.0]).map_err(e)? == 6.0, || "afi 6".into())?;
    ensure(afi_reward(&[0.7, 1.3], &[0.2, 1.0]).map_err(e)? == 0.7 + 1.3, || "afi clamp".into())?;
    ensure(afi_reward(&[0.0, 0.0], &[5.0, 9.0]).map_err(e)? == 0.0, || "afi zero".into())?;

    let mut wv = vec![0.0; 8];
    wv[0] = 1.0;
    let mut inf = vec![0.0; 8];
    inf[0] = 2.0;
    let mut tr = vec![0.0; 8];
    tr[0] = 3.0;
    ensure(compose_reward(Mode::Fim, 5.0, 0.0, &inf, &tr, &wv).map_err(e)? == 30.0, || "composed 30".into())?;
    ensure(compose_reward(Mode::Fim, 0.0, -1.0, &inf, &tr, &wv).map_err(e)? == -1.0, || "alpha 0".into())?;
    ensure(compose_reward(Mode::Baseline, 5.0, 100.0, &inf, &tr, &wv).map_err(e)? == 100.0, || "baseline".into())?;

    let mut g = TraceVector::new(3, 0.99).map_err(e)?;
    let start = [1.0, 4.5, 0.25];
    g.update(&start).map_err(e)?;
    let mut worst = 0.0f64;
    for n in 1..=500 {
        g.update(&[0.0; 3]).map_err(e)?;
        for k in 0..3 {
            worst = worst.max((g[k] - start[k] * 0.99f64.powi(n)).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("decay deviates by {worst:e}"))?;
    Ok(format!("examples exact; 500-step decay max deviation {worst:.1e}"))
}

fn sample_index(p: &[f64], r: &mut Rng) -> usize {
    let u: f64 = r.gen();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn random_distribution(r: &mut Rng) -> [f64; 3] {
    let raw: [f64; 3] = [r.gen_range(0.05..1.0), r.gen_range(0.05..1.0), r.gen_range(0.05..1.0)];
    let z: f64 = raw.iter().sum();
    raw.map(|x| x / z)
}

fn c5_chain_entropy_bound() -> Outcome {
    const LEN: usize = 10;
    const N: usize = 100_000;
    let t_steps = (LEN - 1) as f64;
    let mut r = rng::stream(5, 0);
    let mut min_slack = f64::INFINITY;
    for chain in 0..20 {
        let init = random_distribution(&mut r);
        let kernel = [random_distribution(&mut r), random_distribution(&mut r), random_distribution(&mut r)];
        let mut joint: HashMap<u32, u64> = HashMap::new();
        let mut first = [0u64; 3];
        // pair counts per time step
        let mut pairs = vec![[[0u64; 3]; 3]; LEN - 1];
        for _ in 0..N {
            let mut s = sample_index(&init, &mut r);
            first[s] += 1;
            let mut code = s as u32;
            for step in 0..LEN - 1 {
                let next = sample_index(&kernel[s], &mut r);
                pairs[step][s][next] += 1;
                code = code * 3 + next as u32;
                s = next;
            }
            *joint.entry(code).or_default() += 1;
        }
        let h_joint = plugin_entropy(joint.values().copied());
        let h0 = plugin_entropy(first);
        let mut max_cond = 0.0f64;
        for p in &pairs {
            let h_pair = plugin_entropy(p.iter().flatten().copied());
            let h_prev = plugin_entropy(p.iter().map(|row| row.iter().sum::<u64>()));
            max_cond = max_cond.max(h_pair - h_prev);
        }
        let bound = h0 + t_steps * max_cond + 0.05;
        ensure(h_joint <= bound, || format!("chain {chain}: H {h_joint:.4} > bound {bound:.4}"))?;
        min_slack = min_slack.min(bound - h_joint);

        let need = required_horizon(h_joint, h0, max_cond).map_err(|e| e.to_string())?;
        ensure(h0 + need as f64 * max_cond >= h_joint, || format!("chain {chain}: horizon {need} too short"))?;
        ensure(need == 0 || h0 + (need - 1) as f64 * max_cond < h_joint, || {
            format!("chain {chain}: horizon {need} not minimal")
        })?;
        ensure(need as f64 <= t_steps + (0.05 / max_cond).ceil(), || format!("chain {chain}: horizon {need} exceeds T"))?;
    }
    Ok(format!("20 chains within bound, min slack {min_slack:.3} nats"))
}

fn c6_gradient_fidelity() -> Outcome {
    let sizes = [6, 12, 10, 4];
    let h = 1e-5;
    let mut r = rng::stream(6, 0);
    let objective = |f: &ParamFn, x: &[f64], c: &[f64]| -> f64 { f.forward(x).unwrap().iter().zip(c).map(|(y, c)| y * c).sum() };
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-4);
    let mut probes = 0;
    let mut worst = 0.0f64;
    let combos: Vec<(Activation, Activation)> =
        Activation::ALL.iter().flat_map(|&a| Activation::ALL.iter().map(move |&b| (a, b))).collect();
    while probes < 54 {
        let (hidden, output) = combos[probes % combos.len()];
        let mut f = ParamFn::mlp(&sizes, hidden, output, &mut r).map_err(|e| e.to_string())?;
        ensure(f.n_params() <= 500, || format!("{} parameters", f.n_params()))?;
        let x: Vec<f64> = (0..sizes[0]).map(|_| r.gen_range(-2.0..2.0)).collect();
        // Skip points whose difference stencil straddles a kink.
        let mut hcur = x.clone();
        let mut margin = f64::INFINITY;
        for l in 0..f.n_layers() {
            let (w, b) = f.layer(l);
            let pre: Vec<f64> =
                w.chunks_exact(hcur.len()).zip(b).map(|(row, bi)| row.iter().zip(&hcur).map(|(a, b)| a * b).sum::<f64>() + bi).collect();
            let act = f.activations()[l];
            if act != Activation::Identity {
                margin = pre.iter().fold(margin, |m, z| m.min(z.abs()));
            }
            hcur = pre
                .iter()
                .map(|&z| match act {
                    Activation::Identity => z,
                    Activation::Relu => z.max(0.0),
                    Activation::Abs => z.abs(),
                })
                .collect();
        }
        if margin < 1e-3 {
            continue;
        }
        let c: Vec<f64> = (0..sizes[3]).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        f.forward_tape(&x, &mut tape).map_err(|e| e.to_string())?;
        f.zero_grad();
        let dx = f.backward(&tape, &c).map_err(|e| e.to_string())?;
        let grads = f.grads().to_vec();
        for k in 0..f.n_params() {
            let p = f.params()[k];
            f.params_mut()[k] = p + h;
            let up = objective(&f, &x, &c);
            f.params_mut()[k] = p - h;
            let down = objective(&f, &x, &c);
            f.params_mut()[k] = p;
            worst = worst.max(rel(grads[k], (up - down) / (2.0 * h)));
        }
        for i in 0..x.len() {
            let (mut hi, mut lo) = (x.clone(), x.clone());
            hi[i] += h;
            lo[i] -= h;
            worst = worst.max(rel(dx[i], (objective(&f, &hi, &c) - objective(&f, &lo, &c)) / (2.0 * h)));
        }
        probes += 1;
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!("{probes} probes over all activation pairs, max relative error {worst:.1e}"))
}

fn c7_mixer_monotonicity() -> Outcome {
    let mut r = rng::stream(7, 0);
    let extents = vec![7.0; 8];
    let h = 1e-6;
    let mut worst = f64::INFINITY;
    for probe in 0..1000 {
        // a fresh random mixer every 50 probes
        let m = MixingNet::new(MixerKind::Qmix, extents.clone(), 2, 32, 64, &mut rng::stream(7, 1 + probe / 50))
            .map_err(|e| e.to_string())?;
        let s: Vec<f64> = (0..8).map(|_| r.gen_range(0..8) as f64).collect();
        let q: Vec<f64> = (0..2).map(|_| r.gen_range(-20.0..20.0)).collect();
        let base = m.q_tot(&q, &s).map_err(|e| e.to_string())?;
        for i in 0..2 {
            let mut up = q.clone();
            up[i] += h;
            let d = (m.q_tot(&up, &s).map_err(|e| e.to_string())? - base) / h;
            worst = worst.min(d);
        }
    }
    ensure(worst >= -1e-9, || format!("negative slope {worst:e}"))?;

    let mut fixture = MixingNet::new(MixerKind::Qmix, extents.clone(), 2, 1, 8, &mut r).map_err(|e| e.to_string())?;
    for (f, b) in [(&mut fixture.hyper_w1, 1.0), (&mut fixture.hyper_b1, 0.0), (&mut fixture.hyper_w2, 1.0), (&mut fixture.hyper_v, 0.0)] {
        let last = f.n_layers() - 1;
        f.weights_mut(last).iter_mut().for_each(|w| *w = 0.0);
        f.bias_mut(last).iter_mut().for_each(|x| *x = b);
    }
    let vdn = MixingNet::new(MixerKind::Vdn, extents, 2, 32, 64, &mut r).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        let s: Vec<f64> = (0..8).map(|_| r.gen_range(0..8) as f64).collect();
        let q = [r.gen_range(0.0..10.0), r.gen_range(0.0..10.0)];
        ensure(fixture.q_tot(&q, &s).unwrap() == q[0] + q[1], || format!("fixture at {q:?}"))?;
        let q = [r.gen_range(-10.0..10.0), r.gen_range(-10.0..10.0)];
        ensure(vdn.q_tot(&q, &s).unwrap() == q[0] + q[1], || format!("vdn at {q:?}"))?;
    }
    Ok(format!("1000 probes, smallest slope {worst:.3e}; additive fixture exact"))
}

fn c8_dynamics_learnability() -> Outcome {
    let env = PushBox::new(GridConfig::default()).unwrap();
    let data: Vec<(Vec<f64>, JointAction, Vec<f64>)> = random_transitions(&env, 55_000, &mut rng::stream(8, 0))
        .into_iter()
        .map(|(s, a, n)| (env.flatten_state(&s), a, env.flatten_state(&n)))
        .collect();
    let (train, held) = data.split_at(50_000);
    let mut model = DynamicsNet::for_env(&env, 128, 1e-3, &mut rng::stream(8, 1)).map_err(|e| e.to_string())?;
    let mut r = rng::stream(8, 2);
    let mut losses = Vec::with_capacity(5000);
    for _ in 0..5000 {
        let batch: Vec<TransitionRef<'_>> = (0..256)
            .map(|_| {
                let (s, a, n) = &train[r.gen_range(0..train.len())];
                (s.as_slice(), a.as_slice(), n.as_slice())
            })
            .collect();
        losses.push(model.train_step(&batch).map_err(|e| e.to_string())?);
    }
    let smooth = |i: usize| losses[i - 100..i].iter().sum::<f64>() / 100.0;
    let (early, late) = (smooth(100), smooth(5000));
    ensure(late < early, || format!("smoothed loss {early:.4} -> {late:.4}"))?;
    let mut abs_err = 0.0;
    let mut count = 0;
    for (s, a, n) in held {
        let p = model.predict(s, a).map_err(|e| e.to_string())?;
        abs_err += p.iter().zip(n).map(|(x, y)| (x - y).abs()).sum::<f64>();
        count += n.len();
    }
    let mae = abs_err / count as f64;
    ensure(mae < 0.5, || format!("held-out MAE {mae:.3}"))?;
    Ok(format!("held-out MAE {mae:.4} cells; smoothed loss {early:.4} -> {late:.4}"))
}

fn c9_reproducibility() -> Outcome {
    let cfg = RunConfig {
        mode: Mode::Fim,
        seed: 11,
        total_steps: 6_000,
        reestimate_interval: 2_000,
        estimation_steps: 1_000,
        eval_interval: 2_000,
        eval_episodes: 4,
        dynamics_warmup: 200,
        ..RunConfig::default()
    };
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    let mut records = Vec::new();
    for d in &dirs {
        records.push(run_and_save(&cfg, d.path(), |_| {}).map_err(|e| e.to_string())?.0);
    }
    ensure(records[0] == records[1], || "records differ".into())?;
    let mut n = 0;
    for sub in [RECORD_DIR, REPORTS_DIR] {
        let list = |root: &std::path::Path| {
            let mut v: Vec<(std::ffi::OsString, Vec<u8>)> = std::fs::read_dir(root.join(sub))
                .unwrap()
                .map(|e| {
                    let p = e.unwrap().path();
                    (p.file_name().unwrap().to_owned(), std::fs::read(&p).unwrap())
                })
                .collect();
            v.sort();
            v
        };
        let (a, b) = (list(dirs[0].path()), list(dirs[1].path()));
        ensure(a == b, || format!("{sub} differs"))?;
        n += a.len();
    }
    Ok(format!("records equal, {n} exported files byte-identical"))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "push-2-box separation", c1_push_box_separation),
        (2, "entropy ordering", c2_entropy_ordering),
        (3, "counterfactual oracle equivalence", c3_oracle_equivalence),
        (4, "trace/softmax/EMA/horizon arithmetic", c4_arithmetic),
        (5, "chain entropy bound", c5_chain_entropy_bound),
        (6, "gradient fidelity", c6_gradient_fidelity),
        (7, "mixer monotonicity", c7_mixer_monotonicity),
        (8, "dynamics learnability", c8_dynamics_learnability),
        (9, "reproducibility", c9_reproducibility),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS {id} {name} ({secs:.1}s): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {id} {name} ({secs:.1}s): {msg}");
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
