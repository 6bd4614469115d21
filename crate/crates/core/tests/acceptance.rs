//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line to stderr
//! (written directly so the harness's output capture does not hide it) and
//! then asserts.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use pamrl::cli::{self, RunConfig, Variant, SWEEP_FILE};
use pamrl::encoder::{alignment_loss, AdapterConfig, AdapterNet, AdapterRole, EncoderConfig, FusedState};
use pamrl::env::{
    compute_reward, project_action, raw_action_dim, Allocation, CellConfig, EnvConfig, Environment,
    QosVector, RewardConfig, SliceEnv, SliceKind, SliceSpec, SliceTarget,
};
use pamrl::marl::{
    run_training, AgentPool, ContextStates, EnvSpec, PoolConfig, TrainLoopConfig, METRICS_FILE,
    UE_RATES_FILE,
};
use pamrl::nn::{finite_diff_check, Adam, AdamConfig, Graph, Tensor};
use pamrl::prompt::{PromptTemplate, DEFAULT_TEMPLATE};
use pamrl::rng;
use pamrl::sac::{
    actor_loss, actor_update, critic_loss, critic_update, td_targets, ActionMode, Actor, Critic,
    SacConfig, StateSource, StoredStates, Transition, LOG_STD_MIN,
};

fn verdict(n: usize, name: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[{tag}] criterion {n:>2}: {name} ({detail})");
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

/// Trailing mean over the last `w` values.
fn tail_mean(xs: &[f64], w: usize) -> f64 {
    let t = &xs[xs.len().saturating_sub(w)..];
    t.iter().sum::<f64>() / t.len() as f64
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn metrics_column(dir: &Path, name: &str) -> Vec<Option<f64>> {
    let mut r = csv::Reader::from_path(dir.join(METRICS_FILE)).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            let s = &rec[idx];
            (!s.is_empty()).then(|| s.parse().unwrap())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// 1. finite-difference gradient checks

fn tiny_pool(seed: u64) -> (AgentPool, Vec<Arc<Transition>>) {
    let env = EnvSpec::SemanticToy(pamrl::env::SemanticToyConfig {
        agents: 1,
        num_slices: 2,
        num_rbs: 2,
        demand_mbps: 50.0,
        idle_mbps: 5.0,
    });
    let sac = SacConfig {
        hidden: vec![6, 5],
        batch_size: 6,
        ..SacConfig::default()
    };
    let adapter = AdapterConfig {
        fused_dim: 3,
        hidden: 5,
        epochs: 2,
        batch_size: 8,
        pretrain_steps: 16,
        ..AdapterConfig::default()
    };
    let encoder = EncoderConfig {
        d_model: 8,
        blocks: 1,
        ff_dim: 16,
        ..EncoderConfig::default()
    };
    let mut pool = AgentPool::new(PoolConfig {
        env: &env,
        sac: &sac,
        encoder: &encoder,
        adapter: &adapter,
        template: PromptTemplate::parse(DEFAULT_TEMPLATE).unwrap(),
        n_ctx: 2,
        static_text: false,
        seed,
    })
    .unwrap();
    pool.pretrain_adapters(&adapter).unwrap();
    let mut r = rng::stream(seed, &[99]);
    let mut obs = pool.envs[0].reset(1);
    let mut batch = Vec::new();
    for _ in 0..6 {
        let rep = pool.srm.represent(&obs).unwrap();
        let a = pool.actors[0]
            .act(&rep.fused.concat(), ActionMode::Stochastic, &mut r)
            .unwrap();
        let s = pool.envs[0].step(&a.action).unwrap();
        let next = pool.srm.represent(&s.observation).unwrap();
        batch.push(Arc::new(Transition {
            state: rep.fused,
            action: a.action,
            reward: s.reward.total,
            next_state: next.fused,
            terminal: false,
            prompt_ids: rep.prompt_ids,
            external_hit: rep.external_hit,
            actor: 0,
        }));
        obs = s.observation;
    }
    (pool, batch)
}

#[test]
fn criterion_01_gradient_integrity() {
    let start = Instant::now();
    let (pool, batch) = tiny_pool(3);
    let beta = 0.2;
    let noise = pool.actors[0].sample_noise(batch.len(), &mut rng::stream(4, &[]));
    let h = 1e-5;
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();

    // actor loss wrt actor weights and wrt the context tokens, one graph
    let mut g = Graph::new();
    let states = ContextStates { srm: &pool.srm }.states(&mut g, &batch).unwrap();
    let state_values = g.value(states).clone();
    let l = actor_loss(&mut g, &pool.actors[0], &pool.critic, states, &noise, beta);
    let grads = g.backward(l.loss).unwrap();

    let actor_value = |a: &Actor| {
        let mut g = Graph::new();
        let s = g.constant(state_values.clone());
        let l = actor_loss(&mut g, a, &pool.critic, s, &noise, beta);
        g.value(l.loss).item()
    };
    let n_layers = pool.actors[0].mlp.layers().len();
    for li in 0..n_layers {
        for which in 0..2 {
            let layer = &pool.actors[0].mlp.layers()[li];
            let p = if which == 0 { &layer.weight } else { &layer.bias };
            let mut f = |x: &Tensor| {
                let mut a = pool.actors[0].clone();
                let l = &mut a.mlp.layers_mut()[li];
                if which == 0 {
                    l.weight.value = x.clone();
                } else {
                    l.bias.value = x.clone();
                }
                actor_value(&a)
            };
            let e = finite_diff_check(&mut f, &p.value, grads.param(p), h).unwrap();
            let w = worst.entry("actor").or_insert(0.0);
            *w = w.max(e);
        }
    }

    let ctx_grad = grads.param(&pool.srm.context.param).cloned();
    let ctx_nonzero = ctx_grad.as_ref().is_some_and(|t| t.data().iter().any(|v| *v != 0.0));
    // the critic sees the state detached, so the tokens act only through the
    // policy input: hold the critic's state at its current value
    let mut f = |x: &Tensor| {
        let mut srm = pool.srm.clone();
        srm.context.param.value = x.clone();
        let mut g = Graph::new();
        let s = ContextStates { srm: &srm }.states(&mut g, &batch).unwrap();
        let fixed = g.constant(state_values.clone());
        let (act, log_prob, _) = pool.actors[0].rsample(&mut g, s, &noise, true);
        let q = pool.critic.q(&mut g, fixed, act, true);
        let ent = g.scale(log_prob, beta);
        let obj = g.sub(ent, q);
        let l = g.mean(obj);
        g.value(l).item()
    };
    let e = finite_diff_check(&mut f, pool.srm.context.values(), ctx_grad.as_ref(), h).unwrap();
    worst.insert("context", e);

    // critic loss wrt critic weights at fixed targets
    let cfg = SacConfig {
        gamma: 0.9,
        beta,
        ..SacConfig::default()
    };
    let y = td_targets(&batch, &pool.actors, &pool.critic, &cfg, &mut rng::stream(5, &[])).unwrap();
    let s = Tensor::from_rows(&batch.iter().map(|t| t.state.concat()).collect::<Vec<_>>()).unwrap();
    let a = Tensor::from_rows(&batch.iter().map(|t| t.action.clone()).collect::<Vec<_>>()).unwrap();
    let mut g = Graph::new();
    let (loss, _) = critic_loss(&mut g, &pool.critic, &s, &a, &y).unwrap();
    let cg = g.backward(loss).unwrap();
    for li in 0..pool.critic.mlp.layers().len() {
        for which in 0..2 {
            let layer = &pool.critic.mlp.layers()[li];
            let p = if which == 0 { &layer.weight } else { &layer.bias };
            let mut f = |x: &Tensor| {
                let mut c = pool.critic.clone();
                let l = &mut c.mlp.layers_mut()[li];
                if which == 0 {
                    l.weight.value = x.clone();
                } else {
                    l.bias.value = x.clone();
                }
                let mut g = Graph::new();
                let (l, _) = critic_loss(&mut g, &c, &s, &a, &y).unwrap();
                g.value(l).item()
            };
            let e = finite_diff_check(&mut f, &p.value, cg.param(p), h).unwrap();
            let w = worst.entry("critic").or_insert(0.0);
            *w = w.max(e);
        }
    }

    // adapter alignment loss wrt both adapters
    let adapter_cfg = AdapterConfig {
        fused_dim: 3,
        hidden: 5,
        ..AdapterConfig::default()
    };
    let mut r = rng::stream(6, &[]);
    let mut m = |rows: usize, cols: usize| {
        let v: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        Tensor::from_rows(&v).unwrap()
    };
    // fresh adapters: the pool's are frozen after pretraining
    let numeric = &AdapterNet::new(AdapterRole::Numeric, pool.srm.numeric.input_dim(), &adapter_cfg, 8).unwrap();
    let text = &AdapterNet::new(AdapterRole::Text, pool.srm.text.input_dim(), &adapter_cfg, 8).unwrap();
    let xs = m(7, numeric.input_dim());
    let hs = m(7, text.input_dim());
    let mut g = Graph::new();
    let (loss, _) = alignment_loss(&mut g, numeric, text, &xs, &hs, &adapter_cfg);
    let ag = g.backward(loss).unwrap();
    for side in 0..2 {
        let net = if side == 0 { numeric } else { text };
        for li in 0..net.mlp.layers().len() {
            for which in 0..2 {
                let layer = &net.mlp.layers()[li];
                let p = if which == 0 { &layer.weight } else { &layer.bias };
                let mut f = |x: &Tensor| {
                    let (mut na, mut nb) = (numeric.clone(), text.clone());
                    let target = if side == 0 { &mut na } else { &mut nb };
                    let l = &mut target.mlp.layers_mut()[li];
                    if which == 0 {
                        l.weight.value = x.clone();
                    } else {
                        l.bias.value = x.clone();
                    }
                    let mut g = Graph::new();
                    let (l, _) = alignment_loss(&mut g, &na, &nb, &xs, &hs, &adapter_cfg);
                    g.value(l).item()
                };
                let e = finite_diff_check(&mut f, &p.value, ag.param(p), h).unwrap();
                let w = worst.entry("adapter").or_insert(0.0);
                *w = w.max(e);
            }
        }
    }

    let secs = start.elapsed().as_secs_f64();
    let max = worst.values().cloned().fold(0.0, f64::max);
    let ok = max < 1e-4 && ctx_nonzero && worst.len() == 4 && secs < 120.0;
    verdict(1, "gradient integrity", ok, &format!("max rel err {worst:?}, {secs:.1}s"));
}

// ---------------------------------------------------------------------------
// 2. projection feasibility

/// Independent feasibility predicate on raw matrices.
fn feasible(b: &[bool], e: &[bool], l: usize, k: usize, ue_slices: &[usize]) -> bool {
    let owned_pairs: usize = (0..k)
        .map(|rb| {
            (0..ue_slices.len())
                .filter(|&u| e[u * k + rb])
                .map(|_| (0..l).filter(|&s| b[s * k + rb]).count())
                .sum::<usize>()
        })
        .sum();
    let one_slice = (0..k).all(|rb| (0..l).filter(|&s| b[s * k + rb]).count() <= 1);
    let own = (0..k).all(|rb| (0..ue_slices.len()).all(|u| !e[u * k + rb] || b[ue_slices[u] * k + rb]));
    owned_pairs <= k && one_slice && own
}

fn to_alloc(b: &[bool], e: &[bool], l: usize, k: usize, n: usize) -> Allocation {
    let mut a = Allocation::empty(l, k, n);
    for s in 0..l {
        for rb in 0..k {
            a.set_b(s, rb, b[s * k + rb]);
        }
    }
    for u in 0..n {
        for rb in 0..k {
            a.set_e(u, rb, e[u * k + rb]);
        }
    }
    a
}

#[test]
fn criterion_02_projection_feasibility() {
    let mut r = rng::stream(2024, &[]);
    let mut capacity_violations = 0;
    let mut multi_slice = 0;
    let mut foreign_rb = 0;
    for trial in 0..10_000 {
        let l = r.random_range(1..=4);
        let k = r.random_range(1..=12);
        let ue_slices: Vec<usize> = (0..r.random_range(1..=8)).map(|_| r.random_range(0..l)).collect();
        let dim = raw_action_dim(l, k, ue_slices.len());
        let raw: Vec<f64> = (0..dim)
            .map(|_| {
                let x: f64 = r.random_range(-1.0..=1.0);
                // every third trial quantized so ties occur
                if trial % 3 == 0 { (x * 2.0).round() / 2.0 } else { x }
            })
            .collect();
        let p = project_action(&raw, l, k, &ue_slices, 1.0).unwrap().allocation;
        let pairs: usize = (0..ue_slices.len())
            .map(|u| (0..k).filter(|&rb| p.e(u, rb)).count())
            .sum();
        if pairs > k {
            capacity_violations += 1;
        }
        for rb in 0..k {
            if (0..l).filter(|&s| p.b(s, rb)).count() > 1 {
                multi_slice += 1;
            }
            for (u, &s) in ue_slices.iter().enumerate() {
                if p.e(u, rb) && !p.b(s, rb) {
                    foreign_rb += 1;
                }
            }
        }
    }

    // exhaustive instance: 2 slices, 3 RBs, one UE per slice
    let (l, k, ues) = (2usize, 3usize, [0usize, 1]);
    let bits = (l + ues.len()) * k;
    let mut feasible_set: HashSet<(Vec<bool>, Vec<bool>)> = HashSet::new();
    let mut validate_disagrees = 0;
    for mask in 0u32..(1 << bits) {
        let v: Vec<bool> = (0..bits).map(|i| mask >> i & 1 == 1).collect();
        let (b, e) = v.split_at(l * k);
        let f = feasible(b, e, l, k, &ues);
        let a = to_alloc(b, e, l, k, ues.len());
        if f != a.validate(&ues).is_ok() {
            validate_disagrees += 1;
        }
        if f {
            feasible_set.insert((b.to_vec(), e.to_vec()));
        }
    }
    // each RB: unowned, or owned by one slice with its UE on or off
    let expected = 5usize.pow(k as u32);

    let dim = raw_action_dim(l, k, ues.len());
    let levels = [-1.0, 0.0, 1.0];
    let mut outside = 0;
    let mut reached: HashSet<Vec<bool>> = HashSet::new();
    let total = levels.len().pow(dim as u32);
    for idx in 0..total {
        let mut rem = idx;
        let raw: Vec<f64> = (0..dim)
            .map(|_| {
                let v = levels[rem % levels.len()];
                rem /= levels.len();
                v
            })
            .collect();
        let a = project_action(&raw, l, k, &ues, 0.0).unwrap().allocation;
        let key = (a.b_matrix().to_vec(), a.e_matrix().to_vec());
        if !feasible_set.contains(&key) {
            outside += 1;
        }
        reached.insert(a.flatten().iter().map(|x| *x > 0.5).collect());
    }
    // every RB owned and served: 2^3 allocations, each a fixed point of the
    // projection when fed back as a ±1 action
    let mut fixed_points = 0;
    for (b, e) in &feasible_set {
        let full = (0..k).all(|rb| (0..l).any(|s| b[s * k + rb]) && (0..ues.len()).any(|u| e[u * k + rb]));
        if !full {
            continue;
        }
        let raw: Vec<f64> = b.iter().chain(e).map(|&x| if x { 1.0 } else { -1.0 }).collect();
        let a = project_action(&raw, l, k, &ues, 0.0).unwrap().allocation;
        if a.b_matrix() == b.as_slice() && a.e_matrix() == e.as_slice() {
            fixed_points += 1;
        }
    }

    let ok = capacity_violations == 0
        && multi_slice == 0
        && foreign_rb == 0
        && feasible_set.len() == expected
        && validate_disagrees == 0
        && outside == 0
        && fixed_points == 8
        && reached.len() == 8;
    verdict(
        2,
        "constraint satisfaction",
        ok,
        &format!(
            "10^4 random: {capacity_violations} capacity, {multi_slice} multi-slice, {foreign_rb} foreign-RB violations; \
             enumerator {} feasible (expect {expected}), validator disagreements {validate_disagrees}, \
             {total} grid actions with {outside} outside the feasible set, {fixed_points}/8 fixed points",
            feasible_set.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. reward closed forms

fn kind_of(i: usize) -> SliceKind {
    [SliceKind::Embb, SliceKind::Mmtc, SliceKind::Urllc][i % 3]
}

#[test]
fn criterion_03_reward_closed_forms() {
    let mut r = rng::stream(33, &[]);
    let base = RewardConfig::default();

    let mut half_exact = true;
    for i in 0..300 {
        let thr = r.random_range(1e-3..1e8);
        let t = SliceTarget {
            kind: kind_of(i),
            threshold: thr,
            weight: 1.0,
            margin: base.margin,
        };
        let cfg = RewardConfig {
            alpha: r.random_range(0.1..20.0),
            ..base
        };
        let out = compute_reward(&QosVector(vec![thr]), &[t], &cfg).unwrap();
        half_exact &= out.per_slice[0] == 0.5 && out.penalty == 0.0;
    }

    let mut max_err = 0.0f64;
    let mut fired = 0;
    for i in 0..1000 {
        let kind = kind_of(i);
        let thr: f64 = r.random_range(0.01..10.0);
        let q: f64 = thr * r.random_range(0.0..2.5);
        let cfg = RewardConfig {
            alpha: 5.0,
            delta: r.random_range(0.1..5.0),
            margin: r.random_range(0.0..0.9),
        };
        let t = SliceTarget {
            kind,
            threshold: thr,
            weight: 1.0,
            margin: cfg.margin,
        };
        let got = compute_reward(&QosVector(vec![q]), &[t], &cfg).unwrap().penalty;
        let dev = match kind {
            SliceKind::Urllc => (thr - q) / thr,
            _ => (q - thr) / thr,
        };
        let direct = if dev < -cfg.margin { (-cfg.delta * dev).exp() } else { 0.0 };
        fired += usize::from(direct > 0.0);
        max_err = max_err.max((got - direct).abs());
    }

    // no breach anywhere: penalty exactly zero, total equals the weighted sum
    let mut zero_ok = true;
    let mut total_err = 0.0f64;
    for _ in 0..500 {
        let n = r.random_range(1..=4);
        let margin = r.random_range(0.0..0.5);
        let cfg = RewardConfig { margin, ..base };
        let raw_w: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
        let sw: f64 = raw_w.iter().sum();
        let mut targets = Vec::new();
        let mut qs = Vec::new();
        for (i, w) in raw_w.iter().enumerate() {
            let kind = kind_of(i + n);
            let thr = r.random_range(0.5..5.0);
            // within the margin or better
            let rel: f64 = r.random_range(-margin..1.0);
            let q = match kind {
                SliceKind::Urllc => thr * (1.0 - rel),
                _ => thr * (1.0 + rel),
            };
            qs.push(q.max(0.0));
            targets.push(SliceTarget {
                kind,
                threshold: thr,
                weight: w / sw,
                margin,
            });
        }
        let out = compute_reward(&QosVector(qs.clone()), &targets, &cfg).unwrap();
        zero_ok &= out.penalty == 0.0;
        let r0: Vec<f64> = targets
            .iter()
            .zip(&qs)
            .map(|(t, q)| {
                let dev = match t.kind {
                    SliceKind::Urllc => (t.threshold - q) / t.threshold,
                    _ => (q - t.threshold) / t.threshold,
                };
                1.0 / (1.0 + (-cfg.alpha * dev).exp())
            })
            .collect();
        // the reward sums the slice scores; weights only enter the logged utility
        let utility: f64 = targets.iter().zip(&r0).map(|(t, r)| t.weight * r).sum();
        total_err = total_err
            .max((out.total - r0.iter().sum::<f64>()).abs())
            .max((out.utility - utility).abs());
    }

    let ok = half_exact && max_err <= 1e-12 && fired > 100 && zero_ok && total_err <= 1e-12;
    verdict(
        3,
        "reward closed forms",
        ok,
        &format!(
            "r0(Q=thr)=0.5 exact: {half_exact}; penalty max |err| {max_err:.1e} over 1000 tuples ({fired} breaching); \
             zero penalty without breach: {zero_ok}; total/utility max |err| {total_err:.1e}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. SAC sanity on a stationary one-slice cell

fn sanity_env(threshold: f64) -> EnvConfig {
    EnvConfig {
        cell: CellConfig {
            num_dus: 1,
            bandwidth_hz: 800e3,
            stationary: true,
            ..CellConfig::default()
        },
        slices: vec![SliceSpec {
            kind: SliceKind::Embb,
            weight: 1.0,
            threshold,
            users: 3,
            rate_threshold_bps: 0.0,
            min_qos: None,
            slack: None,
        }],
        reward: RewardConfig::default(),
    }
}

/// `(QoS, reward)` of every feasible allocation, RBs possibly left idle.
fn enumerate_allocations(cfg: &EnvConfig) -> Vec<(f64, f64)> {
    let probe = SliceEnv::new(cfg.clone(), 0).unwrap();
    let k = probe.num_rbs();
    let n = probe.ue_slices().len();
    let choices = n + 1;
    let mut out = Vec::new();
    for code in 0..choices.pow(k as u32) {
        let mut a = Allocation::empty(1, k, n);
        let mut rem = code;
        for rb in 0..k {
            let c = rem % choices;
            rem /= choices;
            if c < n {
                a.set_b(0, rb, true);
                a.set_e(c, rb, true);
            }
        }
        let mut env = SliceEnv::new(cfg.clone(), 0).unwrap();
        env.reset(0);
        let s = env.step_allocation(&a).unwrap();
        out.push((s.qos.get(0), s.reward.total));
    }
    out
}

fn sanity_run(cfg: &EnvConfig, seed: u64) -> (f64, Vec<f64>) {
    let env = EnvSpec::Slicing(cfg.clone());
    let sac = SacConfig {
        gamma: 0.0,
        beta: 0.005,
        batch_size: 64,
        hidden: vec![64, 64],
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        context_lr: 1e-3,
        ..SacConfig::default()
    };
    let adapter = AdapterConfig {
        fused_dim: 8,
        hidden: 16,
        epochs: 20,
        batch_size: 32,
        pretrain_steps: 128,
        ..AdapterConfig::default()
    };
    let encoder = EncoderConfig {
        d_model: 8,
        blocks: 1,
        ff_dim: 16,
        ..EncoderConfig::default()
    };
    let mut pool = AgentPool::new(PoolConfig {
        env: &env,
        sac: &sac,
        encoder: &encoder,
        adapter: &adapter,
        template: PromptTemplate::parse(DEFAULT_TEMPLATE).unwrap(),
        n_ctx: 0,
        static_text: true,
        seed,
    })
    .unwrap();
    pool.pretrain_adapters(&adapter).unwrap();
    let train = TrainLoopConfig {
        iterations: 5000,
        horizon: 50,
        eval_interval: 0,
        early_stop: false,
        sequential: true,
        seed,
        ..TrainLoopConfig::default()
    };
    let rep = run_training(&mut pool, &train, None).unwrap();
    (rep.final_smoothed_reward(), rep.reward_history)
}

#[test]
fn criterion_04_sac_sanity() {
    let start = Instant::now();
    let best_q = enumerate_allocations(&sanity_env(1e6))
        .iter()
        .map(|p| p.0)
        .fold(f64::MIN, f64::max);
    let cfg = sanity_env(best_q);
    let table = enumerate_allocations(&cfg);
    let r_star = table.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let random_mean = table.iter().map(|p| p.1).sum::<f64>() / table.len() as f64;

    let mut finals = Vec::new();
    let mut steps = 0;
    for seed in 1..=5 {
        let (reported, history) = sanity_run(&cfg, seed);
        // recompute the smoothed tail from the raw per-iteration rewards
        let own = tail_mean(&history, 50);
        assert!((own - reported).abs() < 1e-12, "smoothing mismatch {own} vs {reported}");
        steps = steps.max(history.len());
        finals.push(own);
    }
    let med = median(&finals);
    let secs = start.elapsed().as_secs_f64();
    let ok = med >= 0.9 * r_star && steps <= 5000 && secs <= 600.0;
    verdict(
        4,
        "SAC sanity",
        ok,
        &format!(
            "R* {r_star:.4} over {} allocations (uniform mean {random_mean:.4}), finals {finals:.3?}, median {med:.4} = {:.3} R*, {steps} env steps, {secs:.0}s",
            table.len(),
            med / r_star
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. prompt path helps on the semantic toy

/// Independent plateau test: first prefix length whose last two windows
/// have means within `tol` relative to the earlier one.
fn first_plateau(xs: &[f64], w: usize, tol: f64) -> Option<usize> {
    (2 * w..=xs.len()).find(|&n| {
        let a: f64 = xs[n - 2 * w..n - w].iter().sum::<f64>() / w as f64;
        let b: f64 = xs[n - w..n].iter().sum::<f64>() / w as f64;
        (b - a).abs() <= tol * a.abs().max(f64::MIN_POSITIVE)
    })
}

#[test]
fn criterion_05_prompt_path_on_semantic_toy() {
    let base = RunConfig::load(&configs_dir().join("toy.toml")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let mut results: BTreeMap<Variant, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for variant in [Variant::PaMrl, Variant::MarlNoPrompt] {
        let mut cfg = base.clone();
        cfg.variant = variant;
        for seed in 1..=5u64 {
            let dir = tmp.path().join(variant.as_str()).join(seed.to_string());
            let rep = cli::train_run(&cfg, seed, &dir).unwrap();
            let reward: Vec<f64> = metrics_column(&dir, "reward_mean").into_iter().map(Option::unwrap).collect();
            let eval: Vec<(usize, f64)> = metrics_column(&dir, "eval_mean")
                .into_iter()
                .enumerate()
                .filter_map(|(i, v)| v.map(|v| (i, v)))
                .collect();
            let final_reward = tail_mean(&reward, cfg.train.smoothing_window);
            let values: Vec<f64> = eval.iter().map(|e| e.1).collect();
            let itc = first_plateau(&values, cfg.train.convergence_window, cfg.train.convergence_tol)
                .map_or(reward.len(), |n| eval[n - 1].0 + 1);
            assert!((final_reward - rep.final_smoothed_reward()).abs() < 1e-9);
            assert_eq!(itc, rep.iterations_to_converge());
            let e = results.entry(variant).or_default();
            e.0.push(final_reward);
            e.1.push(itc as f64);
        }
    }
    let (pa_r, pa_i) = &results[&Variant::PaMrl];
    let (np_r, np_i) = &results[&Variant::MarlNoPrompt];
    let (mr, mi) = (median(pa_r), median(pa_i));
    let (br, bi) = (median(np_r), median(np_i));
    let ok = mr >= br && mi <= bi;
    verdict(
        5,
        "prompt path trend on semantic toy",
        ok,
        &format!(
            "pa-mrl final {pa_r:.3?} median {mr:.3}, iters {pa_i:?} median {mi}; \
             marl-noprompt final {np_r:.3?} median {br:.3}, iters {np_i:?} median {bi}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 6. context-length sweep harness

const TINY_TOY: &str = r#"
variant = "pa-mrl"
seeds = [1]

[env]
kind = "semantic-toy"

[toy]
num_slices = 2
num_rbs = 2
demand_mbps = 50.0
idle_mbps = 5.0

[sac]
batch_size = 8
hidden = [8]

[train]
iterations = 40
horizon = 5
eval_interval = 0
smoothing_window = 10

[encoder]
d_model = 8
blocks = 1
ff_dim = 16

[adapter]
fused_dim = 4
hidden = 8
epochs = 2
batch_size = 8
pretrain_steps = 16
"#;

#[test]
fn criterion_06_sweep_emits_argmax() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::parse(TINY_TOY).unwrap();
    cfg.out = tmp.path().to_path_buf();
    let values = [0usize, 2, 4, 8, 16];
    let rows = cli::sweep(&cfg, &values).unwrap();

    let mut r = csv::Reader::from_path(tmp.path().join("sweep").join(SWEEP_FILE)).unwrap();
    let mut table: Vec<(usize, f64, bool, String)> = Vec::new();
    for rec in r.records() {
        let rec = rec.unwrap();
        table.push((
            rec[0].parse().unwrap(),
            rec[2].parse().unwrap_or(f64::NAN),
            &rec[4] == "1",
            rec[5].to_string(),
        ));
    }
    // recompute each value from that run's metrics.csv
    let mut value_err = 0.0f64;
    for (n_ctx, v, _, _) in &table {
        let dir = tmp.path().join("sweep").join(format!("n_ctx{n_ctx}")).join("seed1");
        let reward: Vec<f64> = metrics_column(&dir, "reward_mean").into_iter().map(Option::unwrap).collect();
        let best = (1..=reward.len())
            .map(|i| tail_mean(&reward[..i], 10))
            .fold(f64::MIN, f64::max);
        value_err = value_err.max((best - v).abs());
    }
    let mut expect = 0;
    for (i, row) in table.iter().enumerate() {
        if row.1 > table[expect].1 {
            expect = i;
        }
    }
    let flagged: Vec<usize> = table.iter().enumerate().filter(|r| r.1 .2).map(|r| r.0).collect();
    let seen: Vec<usize> = table.iter().map(|r| r.0).collect();
    let ok = rows.len() == values.len()
        && seen == values
        && table.iter().all(|r| r.3.is_empty() && r.1.is_finite())
        && flagged == vec![expect]
        && value_err < 1e-9;
    verdict(
        6,
        "context-length sweep",
        ok,
        &format!(
            "n_ctx {seen:?}, values {:.4?}, argmax row {flagged:?} (recomputed {expect}), value err {value_err:.1e}",
            table.iter().map(|r| r.1).collect::<Vec<_>>()
        ),
    );
}

// ---------------------------------------------------------------------------
// 7 and 8 share a small slicing configuration

fn tiny_slicing(out: &Path) -> RunConfig {
    let text = fs::read_to_string(configs_dir().join("reference.toml")).unwrap();
    let mut cfg = RunConfig::parse(&text).unwrap();
    let cell = cfg.cell.as_mut().unwrap();
    cell.num_dus = 2;
    cell.bandwidth_hz = 1e6;
    cfg.sac.hidden = vec![16, 16];
    cfg.sac.batch_size = 16;
    cfg.sac.actor_lr = 1e-3;
    cfg.sac.critic_lr = 1e-3;
    cfg.train.iterations = 60;
    cfg.train.horizon = 20;
    cfg.train.smoothing_window = 10;
    cfg.train.convergence_window = 10;
    cfg.train.sequential = true;
    cfg.encoder.d_model = 8;
    cfg.encoder.blocks = 1;
    cfg.encoder.ff_dim = 16;
    cfg.adapter.fused_dim = 4;
    cfg.adapter.hidden = 8;
    cfg.adapter.epochs = 5;
    cfg.adapter.pretrain_steps = 32;
    cfg.out = out.to_path_buf();
    cfg
}

#[test]
fn criterion_07_throughput_cdfs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_slicing(tmp.path());
    let mut dirs = Vec::new();
    for seed in [1u64, 2] {
        let dir = cli::run_dir(&cfg.out, cfg.variant, seed);
        cli::train_run(&cfg, seed, &dir).unwrap();
        dirs.push(dir);
    }
    let window = 20;
    let out = tmp.path().join("export");
    cli::export(&dirs, &out, window).unwrap();

    let mut exported: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    let mut r = csv::Reader::from_path(out.join("throughput_cdf.csv")).unwrap();
    for rec in r.deserialize::<(String, usize, f64, f64)>() {
        let (_, slice, x, p) = rec.unwrap();
        exported.entry(slice).or_default().push((x, p));
    }

    // oracle: pool the last `window` iterations of every run's raw dump
    let mut pooled: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for dir in &dirs {
        let iterations = metrics_column(dir, "reward_mean").len();
        let from = iterations.saturating_sub(window);
        let mut r = csv::Reader::from_path(dir.join(UE_RATES_FILE)).unwrap();
        for rec in r.deserialize::<(usize, usize, usize, usize, usize, f64)>() {
            let (it, _, _, _, slice, rate) = rec.unwrap();
            if it >= from {
                pooled.entry(slice).or_default().push(rate);
            }
        }
    }
    let mut monotone = true;
    let mut ends_at_one = true;
    let mut max_err = 0.0f64;
    let mut shapes_match = exported.keys().eq(pooled.keys());
    for (slice, pts) in &exported {
        monotone &= pts.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1);
        ends_at_one &= pts.last().is_some_and(|p| p.1 == 1.0);
        let raw = &pooled[slice];
        let mut distinct: Vec<f64> = raw.clone();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        shapes_match &= distinct.len() == pts.len();
        for (x, p) in pts {
            let frac = raw.iter().filter(|&&v| v <= *x).count() as f64 / raw.len() as f64;
            max_err = max_err.max((frac - p).abs());
        }
    }
    let ok = !exported.is_empty() && monotone && ends_at_one && shapes_match && max_err <= 1e-12;
    verdict(
        7,
        "throughput CDFs",
        ok,
        &format!(
            "{} slices, points {:?}, monotone {monotone}, ends at 1 {ends_at_one}, recompute max |err| {max_err:.1e}",
            exported.len(),
            exported.values().map(Vec::len).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_08_sequential_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let cfg = tiny_slicing(&tmp.path().join(run));
        let dir = cli::run_dir(&cfg.out, cfg.variant, 7);
        cli::train_run(&cfg, 7, &dir).unwrap();
        bytes.push(fs::read(dir.join(METRICS_FILE)).unwrap());
    }
    let rows = bytes[0].iter().filter(|&&b| b == b'\n').count();
    let ok = bytes[0] == bytes[1] && rows > 1;
    verdict(
        8,
        "sequential determinism",
        ok,
        &format!("metrics.csv {} bytes, {rows} lines, identical {}", bytes[0].len(), bytes[0] == bytes[1]),
    );
}

// ---------------------------------------------------------------------------
// 9. entropy weight raises the policy spread

fn random_batch(n: usize, s_dim: usize, a_dim: usize, seed: u64) -> Vec<Arc<Transition>> {
    let mut r = rng::stream(seed, &[]);
    let mut v = |k: usize| (0..k).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    (0..n)
        .map(|_| {
            let (s, a, s2, rew) = (v(s_dim), v(a_dim), v(s_dim), v(1)[0]);
            let split = |x: &[f64]| FusedState {
                text: x[..s_dim / 2].to_vec(),
                numeric: x[s_dim / 2..].to_vec(),
            };
            Arc::new(Transition {
                state: split(&s),
                action: a,
                reward: rew,
                next_state: split(&s2),
                terminal: false,
                prompt_ids: vec![],
                external_hit: false,
                actor: 0,
            })
        })
        .collect()
}

#[test]
fn criterion_09_entropy_weight_raises_log_std() {
    let base = SacConfig::default();
    let mut holds = 0;
    let mut gaps = Vec::new();
    let trials = 20;
    for seed in 0..trials {
        let mut r = rng::stream(seed, &[1]);
        let actor = Actor::new("actor", 6, 3, &[16, 16], &mut r).unwrap();
        let critic = Critic::new(6, 3, &[16, 16], false, &mut r).unwrap();
        let batch = random_batch(32, 6, 3, seed + 100);
        let states = Tensor::from_rows(&batch.iter().map(|t| t.state.concat()).collect::<Vec<_>>()).unwrap();
        let after = |beta: f64| {
            let mut a = actor.clone();
            let cfg = SacConfig { beta, ..base.clone() };
            let mut adam = Adam::new(AdamConfig::with_lr(cfg.actor_lr));
            // same update noise for both runs
            let mut nr = rng::stream(seed, &[2]);
            actor_update(&mut a, &mut adam, &critic, &batch, &StoredStates, &cfg, &mut nr).unwrap();
            let mut g = Graph::new();
            let s = g.constant(states.clone());
            let (_, ls) = a.heads(&mut g, s, true);
            let t = g.value(ls);
            t.data().iter().sum::<f64>() / t.len() as f64
        };
        let (lo, hi) = (after(base.beta), after(10.0 * base.beta));
        gaps.push(hi - lo);
        holds += usize::from(hi >= lo);
    }
    let ok = holds == trials as usize;
    verdict(
        9,
        "entropy weight property",
        ok,
        &format!(
            "beta {} vs {}: held {holds}/{trials}, min gap {:.2e}",
            base.beta,
            10.0 * base.beta,
            gaps.iter().cloned().fold(f64::MAX, f64::min)
        ),
    );
}

// ---------------------------------------------------------------------------
// 10. TD fixed point

#[test]
fn criterion_10_td_fixed_point() {
    let gamma = 0.9;
    let reward = 1.0;
    let mut r = rng::stream(1, &[]);
    let mut actor = Actor::new("actor", 2, 1, &[8], &mut r).unwrap();
    // a near-deterministic policy so the next action matches the stored one
    let head = actor.mlp.layers_mut().last_mut().unwrap();
    head.weight.value.data_mut().fill(0.0);
    head.bias.value.data_mut().copy_from_slice(&[0.0, LOG_STD_MIN]);
    let mut critic = Critic::new(2, 1, &[16], false, &mut r).unwrap();
    let s = FusedState {
        text: vec![0.5],
        numeric: vec![-0.5],
    };
    let t = Arc::new(Transition {
        state: s.clone(),
        action: vec![0.0],
        reward,
        next_state: s,
        terminal: false,
        prompt_ids: vec![],
        external_hit: false,
        actor: 0,
    });
    let batch = vec![t; 8];
    let cfg = SacConfig {
        gamma,
        beta: 0.0,
        ..SacConfig::default()
    };
    let mut adam = Adam::new(AdamConfig::with_lr(3e-3));
    for _ in 0..3000 {
        critic_update(&mut critic, &mut adam, std::slice::from_ref(&actor), &batch, &cfg, &mut r).unwrap();
    }
    let q = critic.predict(&Tensor::row(vec![0.5, -0.5]), &Tensor::row(vec![0.0]))[0];
    let target = reward / (1.0 - gamma);
    let ok = (q - target).abs() < 1e-2;
    verdict(10, "TD fixed point", ok, &format!("Q {q:.5} vs r/(1-gamma) {target}"));
}
