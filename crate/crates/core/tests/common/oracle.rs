//! Brute-force reference implementations used to check the library.

use std::collections::{BTreeSet, HashMap, HashSet};

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        acc += d * d;
    }
    acc.sqrt()
}

/// Farthest unused pair by exhaustive search. Ties go to the smallest
/// (min id, max id) pair.
pub fn farthest_unused_pair(
    members: &[(String, Vec<f64>)],
    used: &HashSet<(String, String)>,
) -> Option<(String, String, f64)> {
    let position: HashMap<&str, usize> = members.iter().enumerate().map(|(i, (id, _))| (id.as_str(), i)).collect();
    let used: HashSet<(usize, usize)> = used
        .iter()
        .map(|(a, b)| {
            let (i, j) = (position[a.as_str()], position[b.as_str()]);
            (i.min(j), i.max(j))
        })
        .collect();
    let key = |i: usize, j: usize| {
        let (a, b) = (members[i].0.as_str(), members[j].0.as_str());
        if a < b {
            (a, b)
        } else {
            (b, a)
        }
    };
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            let d = distance(&members[i].1, &members[j].1);
            let better = match best {
                None => true,
                Some((bi, bj, bd)) => d > bd || (d == bd && key(i, j) < key(bi, bj)),
            };
            if better && !used.contains(&(i, j)) {
                best = Some((i, j, d));
            }
        }
    }
    best.map(|(i, j, d)| {
        let (a, b) = key(i, j);
        (a.to_string(), b.to_string(), d)
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for k in 0..a.len() {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// (count, sum) of cosines over ordered pairs i != j accepted by `keep`.
pub fn ordered_pair_cosines(
    entries: &[(String, Vec<f64>)],
    keep: impl Fn(&str, &str) -> bool,
) -> (u64, f64) {
    let (mut count, mut sum) = (0u64, 0.0);
    for i in 0..entries.len() {
        for j in 0..entries.len() {
            if i != j && keep(&entries[i].0, &entries[j].0) {
                count += 1;
                sum += cosine(&entries[i].1, &entries[j].1);
            }
        }
    }
    (count, sum)
}

pub fn aps(entries: &[(String, Vec<f64>)]) -> f64 {
    let n = entries.len() as f64;
    let (_, sum) = ordered_pair_cosines(entries, |_, _| true);
    sum / (n * (n - 1.0))
}

fn moment(column: &[f64], center: f64, k: u32) -> f64 {
    let mut acc = 0.0;
    for &x in column {
        let mut p = 1.0;
        for _ in 0..k {
            p *= x - center;
        }
        acc += p;
    }
    acc / column.len() as f64
}

/// Mean and central moments recomputed one dimension at a time.
pub fn cmd(x: &[Vec<f64>], y: &[Vec<f64>], order: u32) -> f64 {
    let dim = x[0].len();
    let mut total = 0.0;
    for k in 1..=order {
        let mut sq = 0.0;
        for d in 0..dim {
            let cx: Vec<f64> = x.iter().map(|v| v[d]).collect();
            let cy: Vec<f64> = y.iter().map(|v| v[d]).collect();
            let mx = cx.iter().sum::<f64>() / cx.len() as f64;
            let my = cy.iter().sum::<f64>() / cy.len() as f64;
            let diff = if k == 1 { mx - my } else { moment(&cx, mx, k) - moment(&cy, my, k) };
            sq += diff * diff;
        }
        total += sq.sqrt() / 2f64.powi(k as i32);
    }
    total
}

pub fn vocabulary(texts: &[String]) -> usize {
    const EXTRA: &str = "“”‘’«»…–—‹›„¿¡·";
    let is_punct = |c: char| c.is_ascii_punctuation() || EXTRA.contains(c);
    let mut words = BTreeSet::new();
    for text in texts {
        for raw in text.to_lowercase().split_whitespace() {
            let chars: Vec<char> = raw.chars().collect();
            let mut lo = 0;
            let mut hi = chars.len();
            while lo < hi && is_punct(chars[lo]) {
                lo += 1;
            }
            while hi > lo && is_punct(chars[hi - 1]) {
                hi -= 1;
            }
            if lo < hi {
                words.insert(chars[lo..hi].iter().collect::<String>());
            }
        }
    }
    words.len()
}
