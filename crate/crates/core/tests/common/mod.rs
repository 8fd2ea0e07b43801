//! Plain reference implementations and random instances shared by the
//! integration tests. Everything here is written loop by loop without the
//! library's binning or prefix-sum helpers.
#![allow(dead_code)]

use hcal::dataset::{softmax_rows, ProbMatrix};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random softmax probabilities with labels; some instances are sharpened so
/// confidences spread over the whole unit interval.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, l: usize) -> (ProbMatrix, Vec<usize>) {
    let scale = rng.random_range(0.5..4.0);
    let logits = Array2::from_shape_fn((n, l), |_| rng.random_range(-1.0..1.0) * scale);
    let labels = (0..n).map(|_| rng.random_range(0..l)).collect();
    (softmax_rows(logits.view()), labels)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..row.len() {
        if row[k] > row[best] {
            best = k;
        }
    }
    best
}

/// `(confidence, correct)` per row.
pub fn top_label(p: &ProbMatrix, y: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut conf = Vec::new();
    let mut correct = Vec::new();
    for i in 0..p.n_samples() {
        let row: Vec<f64> = p.row(i).to_vec();
        let k = argmax(&row);
        conf.push(row[k]);
        correct.push(if k == y[i] { 1.0 } else { 0.0 });
    }
    (conf, correct)
}

fn sorted_positions(conf: &[f64]) -> Vec<usize> {
    // insertion sort keeps equal confidences in index order
    let mut idx: Vec<usize> = Vec::new();
    for i in 0..conf.len() {
        let mut at = idx.len();
        while at > 0 && conf[idx[at - 1]] > conf[i] {
            at -= 1;
        }
        idx.insert(at, i);
    }
    idx
}

/// Groups of item indices per bin.
pub fn width_bins(conf: &[f64], bins: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); bins];
    for (i, &c) in conf.iter().enumerate() {
        let mut k = 0;
        while k + 1 < bins && c >= (k + 1) as f64 / bins as f64 {
            k += 1;
        }
        out[k].push(i);
    }
    out
}

pub fn mass_bins(conf: &[f64], bins: usize) -> Vec<Vec<usize>> {
    let order = sorted_positions(conf);
    let n = conf.len();
    (0..bins)
        .map(|k| order[k * n / bins..(k + 1) * n / bins].to_vec())
        .collect()
}

fn mean(xs: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64
}

pub fn binned_error(conf: &[f64], hit: &[f64], groups: &[Vec<usize>], r2: bool) -> f64 {
    let n = conf.len() as f64;
    let mut s = 0.0;
    for g in groups.iter().filter(|g| !g.is_empty()) {
        let d = (mean(hit, g) - mean(conf, g)).abs();
        s += g.len() as f64 / n * if r2 { d * d } else { d };
    }
    if r2 {
        s.sqrt()
    } else {
        s
    }
}

pub fn ece(p: &ProbMatrix, y: &[usize], bins: usize, equal_mass: bool, r2: bool) -> f64 {
    let (c, h) = top_label(p, y);
    let groups = if equal_mass { mass_bins(&c, bins) } else { width_bins(&c, bins) };
    binned_error(&c, &h, &groups, r2)
}

pub fn ace(p: &ProbMatrix, y: &[usize], bins: usize) -> f64 {
    let (c, h) = top_label(p, y);
    let groups: Vec<Vec<usize>> = width_bins(&c, bins).into_iter().filter(|g| !g.is_empty()).collect();
    groups
        .iter()
        .map(|g| (mean(&h, g) - mean(&c, g)).abs())
        .sum::<f64>()
        / groups.len() as f64
}

pub fn dece(p: &ProbMatrix, y: &[usize], bins: usize) -> f64 {
    let (c, h) = top_label(p, y);
    let n = c.len() as f64;
    let mut s = 0.0;
    for g in mass_bins(&c, bins) {
        let a = mean(&h, &g);
        let k = g.len() as f64;
        s += k / n * ((mean(&c, &g) - a).powi(2) - a * (1.0 - a) / (k - 1.0));
    }
    s.max(0.0).sqrt()
}

/// Grow the bin count from 1 until accuracies stop being monotone.
pub fn sweep_bins(p: &ProbMatrix, y: &[usize]) -> usize {
    let (c, h) = top_label(p, y);
    let n = c.len();
    let monotone = |b: usize| {
        let accs: Vec<f64> = mass_bins(&c, b).iter().map(|g| mean(&h, g)).collect();
        accs.windows(2).all(|w| w[0] <= w[1])
    };
    let mut best = 1;
    for b in 2..=n {
        if !monotone(b) {
            break;
        }
        best = b;
    }
    best
}

pub fn sweep_ece(p: &ProbMatrix, y: &[usize], r2: bool) -> f64 {
    let b = sweep_bins(p, y);
    ece(p, y, b, true, r2)
}

/// Gap of cumulative sums at every distinct confidence value.
pub fn ks(p: &ProbMatrix, y: &[usize]) -> f64 {
    let (c, h) = top_label(p, y);
    let n = c.len() as f64;
    let mut best = 0.0f64;
    for &t in &c {
        let mut hs = 0.0;
        let mut gs = 0.0;
        for i in 0..c.len() {
            if c[i] <= t {
                hs += h[i];
                gs += c[i];
            }
        }
        best = best.max((hs - gs).abs() / n);
    }
    best
}

pub fn mmce(p: &ProbMatrix, y: &[usize], bw: f64) -> f64 {
    let (c, h) = top_label(p, y);
    let n = c.len() as f64;
    let mut s = 0.0;
    for i in 0..c.len() {
        for j in 0..c.len() {
            s += (h[i] - c[i]) * (h[j] - c[j]) * (-(c[i] - c[j]).abs() / bw).exp();
        }
    }
    (s / (n * n)).max(0.0).sqrt()
}

/// Classwise ECE: `scale_by_l` divides by the class count.
pub fn cwece(p: &ProbMatrix, y: &[usize], bins: usize, scale_by_l: bool) -> f64 {
    let l = p.n_classes();
    let mut total = 0.0;
    for k in 0..l {
        let c: Vec<f64> = (0..p.n_samples()).map(|i| p.row(i)[k]).collect();
        let h: Vec<f64> = y.iter().map(|&t| if t == k { 1.0 } else { 0.0 }).collect();
        total += binned_error(&c, &h, &width_bins(&c, bins), false);
    }
    if scale_by_l {
        total / l as f64
    } else {
        total
    }
}

pub fn skce(p: &ProbMatrix, y: &[usize], bw: f64) -> f64 {
    let n = p.n_samples();
    let l = p.n_classes();
    let mut s = 0.0;
    let mut pairs = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let mut dist = 0.0;
            let mut dot = 0.0;
            for k in 0..l {
                let (a, b) = (p.row(i)[k], p.row(j)[k]);
                dist += (a - b).abs();
                let ei = if y[i] == k { 1.0 } else { 0.0 };
                let ej = if y[j] == k { 1.0 } else { 0.0 };
                dot += (ei - a) * (ej - b);
            }
            s += (-dist / bw).exp() * dot;
            pairs += 1.0;
        }
    }
    s / pairs
}

/// Textbook Lloyd with the library's documented initialisation and tie rule.
pub fn lloyd(values: &[f64], k: usize, iters: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut centers: Vec<f64> = if k == 1 {
        vec![sorted[(n - 1) / 2]]
    } else {
        (0..k)
            .map(|j| sorted[(j as f64 * (n - 1) as f64 / (k - 1) as f64).round() as usize])
            .collect()
    };
    let mut assign = vec![usize::MAX; n];
    for _ in 0..iters {
        let next: Vec<usize> = values
            .iter()
            .map(|&x| {
                let mut b = 0;
                for c in 1..k {
                    if (x - centers[c]).abs() < (x - centers[b]).abs() {
                        b = c;
                    }
                }
                b
            })
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        for c in 0..k {
            let members: Vec<f64> = values.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(&v, _)| v).collect();
            if !members.is_empty() {
                // compensated sum, as the library's prefix sums are
                let (mut s, mut comp) = (0.0f64, 0.0f64);
                for v in &members {
                    let t = s + v;
                    comp += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
                    s = t;
                }
                centers[c] = (s + comp) / members.len() as f64;
            }
        }
    }
    assign
}

/// Pooled k-means classwise error over entries above the threshold.
pub fn tcwece_k(p: &ProbMatrix, y: &[usize], k: usize, threshold: f64) -> f64 {
    let mut vals = Vec::new();
    let mut keys = Vec::new();
    for i in 0..p.n_samples() {
        for c in 0..p.n_classes() {
            if p.row(i)[c] > threshold {
                vals.push(p.row(i)[c]);
                keys.push((c, y[i] == c));
            }
        }
    }
    let assign = lloyd(&vals, k, 100);
    let mut err = 0.0;
    for c in 0..p.n_classes() {
        for b in 0..k {
            let mut cs = 0.0;
            let mut hs = 0.0;
            for j in 0..vals.len() {
                if keys[j].0 == c && assign[j] == b {
                    cs += vals[j];
                    hs += if keys[j].1 { 1.0 } else { 0.0 };
                }
            }
            err += (hs - cs).abs();
        }
    }
    err / vals.len() as f64
}

/// Windowed loss evaluated directly: sort, then sum every window by hand.
pub fn hcal_value(p: &ProbMatrix, y: &[usize], m: usize, eps: f64, r: f64, weights: &[f64], squared: bool) -> f64 {
    let l = p.n_classes();
    let mut events: Vec<(f64, usize, bool)> = Vec::new();
    for i in 0..p.n_samples() {
        for c in 0..l {
            events.push((p.row(i)[c], i * l + c, y[i] == c));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut total = 0.0;
    for (j, w) in events.windows(m).enumerate() {
        let v1: f64 = w.iter().map(|e| if e.2 { 1.0 - e.0 } else { 0.0 }).sum();
        let v2: f64 = w.iter().map(|e| if e.2 { 0.0 } else { e.0 }).sum();
        let d = (v1 - v2) / m as f64;
        total += weights[j] * if squared { d * d } else { (d.abs() - eps).max(0.0) };
    }
    r * total
}

/// `max |mean indicator - mean probability|` over every window.
pub fn worst_window_gap(p: &ProbMatrix, y: &[usize], m: usize) -> f64 {
    let l = p.n_classes();
    let mut events: Vec<(f64, usize, bool)> = Vec::new();
    for i in 0..p.n_samples() {
        for c in 0..l {
            events.push((p.row(i)[c], i * l + c, y[i] == c));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    events
        .windows(m)
        .map(|w| {
            let freq = w.iter().filter(|e| e.2).count() as f64 / m as f64;
            let mp = w.iter().map(|e| e.0).sum::<f64>() / m as f64;
            (freq - mp).abs()
        })
        .fold(0.0, f64::max)
}
