//! Oracles shared by the integration tests.
#![allow(dead_code)]

use modeseq::metrics::EvalRecord;

/// Match by direct arithmetic: linear threshold at 10 Hz index `t * dt / 0.1`.
pub fn matches_directly(r: &EvalRecord, k: usize, dt: f64) -> bool {
    r.trajectories[k].iter().zip(&r.truth).enumerate().all(|(i, (p, y))| {
        let limit = (i + 1) as f64 * dt / 0.1 / 30.0;
        ((p[0] - y[0]).powi(2) + (p[1] - y[1]).powi(2)).sqrt() <= limit
    })
}

/// Precision/recall at every cut of the confidence ranking, then the mean of
/// the best precision reachable at each recall level 1/P, 2/P, ..., 1.
pub fn brute_force_ap(records: &[EvalRecord], soft: bool, dt: f64) -> f64 {
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for (r, rec) in records.iter().enumerate() {
        for k in 0..rec.confidences.len() {
            pool.push((r, k));
        }
    }
    // Descending confidence, ties by record then mode.
    pool.sort_by(|a, b| {
        let (ca, cb) = (records[a.0].confidences[a.1], records[b.0].confidences[b.1]);
        cb.partial_cmp(&ca).unwrap().then(a.cmp(b))
    });
    let mut kept: Vec<bool> = Vec::new();
    let mut detected = vec![false; records.len()];
    for &(r, k) in &pool {
        let m = matches_directly(&records[r], k, dt);
        if m && detected[r] {
            if !soft {
                kept.push(false);
            }
        } else {
            if m {
                detected[r] = true;
            }
            kept.push(m);
        }
    }
    let p = records.len();
    let mut curve = Vec::new();
    for cut in 1..=kept.len() {
        let tp = kept[..cut].iter().filter(|&&x| x).count();
        curve.push((tp as f64 / p as f64, tp as f64 / cut as f64));
    }
    let mut total = 0.0;
    for j in 1..=p {
        let level = j as f64 / p as f64;
        let best = curve
            .iter()
            .filter(|(recall, _)| *recall >= level - 1e-12)
            .map(|&(_, precision)| precision)
            .fold(0.0, f64::max);
        total += best;
    }
    total / p as f64
}
