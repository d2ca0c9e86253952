#![allow(dead_code)]

use mopref_core::{parse_and_validate, Momdp64, Policy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One decision state, horizon 1, `a0` doing nothing and `a1..` paying `rewards`.
pub fn bandit(rewards: &[Vec<f64>]) -> Momdp64 {
    let k = rewards[0].len();
    let mut actions = vec!["a0".to_string()];
    let mut trans = Map::new();
    let mut rew = Map::new();
    trans.insert("a0".into(), json!({"s0": 1.0}));
    rew.insert("a0".into(), json!(vec![0.0; k]));
    for (i, r) in rewards.iter().enumerate() {
        let a = format!("a{}", i + 1);
        trans.insert(a.clone(), json!({"s0": 1.0}));
        rew.insert(a.clone(), json!(r));
        actions.push(a);
    }
    let doc = json!({
        "k": k, "horizon": 1, "states": ["s0"], "actions": actions,
        "initial_state": "s0", "do_nothing": {"state": "s0", "action": "a0"},
        "transitions": {"s0": trans}, "rewards": {"s0": rew},
    });
    parse_and_validate(&doc.to_string()).unwrap()
}

/// The four-arm fixture: the third reward lies in the span of the first two.
pub fn bandit4() -> Momdp64 {
    bandit(&[
        vec![1.0, 0.5, 0.25],
        vec![1.0 / 8.0, 1.0 / 4.0, 3.0 / 8.0],
        vec![85.0 / 96.0, 25.0 / 48.0, 35.0 / 96.0],
        vec![1.0 / 8.0, 3.0 / 8.0, 1.0 / 4.0],
    ])
}

/// `s0` flips a fair coin to `sA` or `sB` under `a1`; both then loop.
pub fn coin_flip() -> Momdp64 {
    let doc = json!({
        "k": 2, "horizon": 2, "states": ["s0", "sA", "sB"], "actions": ["a0", "a1"],
        "initial_state": "s0", "do_nothing": {"state": "s0", "action": "a0"},
        "transitions": {
            "s0": {"a0": {"s0": 1.0}, "a1": {"sA": 0.5, "sB": 0.5}},
            "sA": {"a1": {"sA": 1.0}},
            "sB": {"a1": {"sB": 1.0}},
        },
        "rewards": {
            "s0": {"a0": [0.0, 0.0], "a1": [0.1, 0.1]},
            "sA": {"a1": [1.0, 0.0]},
            "sB": {"a1": [0.0, 1.0]},
        },
    });
    parse_and_validate(&doc.to_string()).unwrap()
}

/// Random instance document with `states` states, `actions` actions besides
/// `a0`, sparse random transitions and uniform rewards.
pub fn random_document(rng: &mut impl Rng, states: usize, actions: usize, horizon: usize, k: usize) -> Value {
    let snames: Vec<String> = (0..states).map(|i| format!("s{i}")).collect();
    let anames: Vec<String> = (0..=actions).map(|i| format!("a{i}")).collect();
    let mut trans = Map::new();
    let mut rew = Map::new();
    for (s, sname) in snames.iter().enumerate() {
        let mut trow = Map::new();
        let mut rrow = Map::new();
        if s == 0 {
            trow.insert("a0".into(), json!({"s0": 1.0}));
            rrow.insert("a0".into(), json!(vec![0.0; k]));
        }
        for aname in &anames[1..] {
            let mut weights: Vec<f64> =
                (0..states).map(|_| if rng.random_bool(0.6) { rng.random::<f64>() + 0.05 } else { 0.0 }).collect();
            if weights.iter().all(|&w| w == 0.0) {
                weights[rng.random_range(0..states)] = 1.0;
            }
            let total: f64 = weights.iter().sum();
            let mut dist = Map::new();
            for (t, w) in weights.iter().enumerate() {
                if *w > 0.0 {
                    dist.insert(snames[t].clone(), json!(w / total));
                }
            }
            trow.insert(aname.clone(), Value::Object(dist));
            rrow.insert(aname.clone(), json!((0..k).map(|_| rng.random::<f64>()).collect::<Vec<_>>()));
        }
        trans.insert(sname.clone(), Value::Object(trow));
        rew.insert(sname.clone(), Value::Object(rrow));
    }
    json!({
        "k": k, "horizon": horizon, "states": snames, "actions": anames,
        "initial_state": "s0", "do_nothing": {"state": "s0", "action": "a0"},
        "transitions": trans, "rewards": rew,
    })
}

pub fn random_instance(rng: &mut impl Rng, states: usize, actions: usize, horizon: usize, k: usize) -> Momdp64 {
    parse_and_validate(&random_document(rng, states, actions, horizon, k).to_string()).unwrap()
}

/// Random instance with every size drawn uniformly from `1..=max`.
pub fn random_small(rng: &mut impl Rng, max_s: usize, max_a: usize, max_h: usize, max_k: usize) -> Momdp64 {
    let s = rng.random_range(1..=max_s);
    let a = rng.random_range(1..=max_a);
    let h = rng.random_range(1..=max_h);
    let k = rng.random_range(1..=max_k);
    random_instance(rng, s, a, h, k)
}

/// Expected return by explicit recursion over every reachable trajectory.
pub fn brute_value(mdp: &Momdp64, policy: &Policy) -> Vec<f64> {
    fn go(mdp: &Momdp64, policy: &Policy, t: usize, s: usize, p: f64, acc: &mut [f64], ret: &mut Vec<f64>) {
        if t == mdp.horizon() {
            for (a, r) in acc.iter_mut().zip(ret.iter()) {
                *a += p * r;
            }
            return;
        }
        let a = policy.action(t, s);
        let o = mdp.outcome(s, a).unwrap();
        for (i, r) in o.reward.iter().enumerate() {
            ret[i] += r;
        }
        for &(next, q) in &o.next {
            go(mdp, policy, t + 1, next, p * q, acc, ret);
        }
        for (i, r) in o.reward.iter().enumerate() {
            ret[i] -= r;
        }
    }
    let mut acc = vec![0.0; mdp.objectives()];
    let mut ret = vec![0.0; mdp.objectives()];
    go(mdp, policy, 0, mdp.initial_state(), 1.0, &mut acc, &mut ret);
    acc
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
