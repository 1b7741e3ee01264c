//! Plaintext reference implementations of the four protocols, written from
//! their definitions without any MPC machinery.

use std::collections::BTreeSet;

pub fn addition(inputs: &[Vec<u64>], p: u64) -> Vec<u64> {
    let r = inputs.first().map_or(0, Vec::len);
    (0..r).map(|k| (inputs.iter().map(|v| v[k] as u128).sum::<u128>() % p as u128) as u64).collect()
}

/// `(S, σ, H_q)` with `H_q = (1 − Σ_k (s_k / S)^q) / (q − 1)`.
pub fn entropy(inputs: &[Vec<u64>], q: u32) -> (u64, u64, f64) {
    let r = inputs.first().map_or(0, Vec::len);
    let counts: Vec<u64> = (0..r).map(|k| inputs.iter().map(|v| v[k]).sum()).collect();
    let total: u64 = counts.iter().sum();
    let sigma: u128 = counts.iter().map(|&c| (c as u128).pow(q)).sum();
    let h = (1.0 - counts.iter().map(|&c| (c as f64 / total as f64).powi(q as i32)).sum::<f64>()) / (q as f64 - 1.0);
    (total, sigma as u64, h)
}

/// Items seen by at least one peer.
pub fn distinct(seen: &[Vec<u64>]) -> u64 {
    let r = seen.first().map_or(0, Vec::len);
    (0..r).filter(|&k| seen.iter().any(|v| v[k] == 1)).count() as u64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Found {
    pub key: u64,
    pub count: u64,
    pub weight_sum: u64,
    pub reporters: Vec<usize>,
}

pub struct Params {
    pub t_c: u64,
    pub t_w: u64,
    pub w_max: u64,
    pub verify_weights: bool,
    pub verify_keys: bool,
}

/// Events whose key is reported by at least `t_c` other qualified peers with
/// aggregated weight at least `t_w`, tested for the first
/// `|qualified| − t_c + 1` qualified peers. Sorted by key.
pub fn correlate(events: &[Vec<(u64, u64)>], prm: &Params) -> (Vec<Found>, Vec<usize>) {
    let n = events.len();
    let mut bad = BTreeSet::new();
    for (i, ev) in events.iter().enumerate() {
        if prm.verify_weights && ev.iter().any(|&(_, w)| w >= prm.w_max) {
            bad.insert(i);
        }
        if prm.verify_keys {
            let keys: BTreeSet<u64> = ev.iter().map(|&(k, _)| k).collect();
            if keys.len() != ev.len() {
                bad.insert(i);
            }
        }
    }
    let qualified: Vec<usize> = (0..n).filter(|i| !bad.contains(i)).collect();
    let owners = (qualified.len() as i64 - prm.t_c as i64 + 1).clamp(0, qualified.len() as i64) as usize;
    let mut found: Vec<Found> = Vec::new();
    for &i in &qualified[..owners] {
        for &(key, _) in &events[i] {
            let mut count = 0;
            let mut weight = 0;
            let mut reporters = BTreeSet::from([i]);
            for &o in qualified.iter().filter(|&&o| o != i) {
                for &(k2, w2) in &events[o] {
                    if k2 == key {
                        count += 1;
                        weight += w2;
                        reporters.insert(o);
                    }
                }
            }
            let qualifies = count >= prm.t_c && count <= n as u64 && (prm.t_w == 0 || weight >= prm.t_w);
            if !qualifies {
                continue;
            }
            match found.iter_mut().find(|f| f.key == key) {
                Some(f) => {
                    let all: BTreeSet<usize> = f.reporters.iter().copied().chain(reporters).collect();
                    f.reporters = all.into_iter().collect();
                }
                None => {
                    found.push(Found { key, count, weight_sum: weight, reporters: reporters.into_iter().collect() })
                }
            }
        }
    }
    found.sort_by_key(|f| f.key);
    (found, bad.into_iter().collect())
}
