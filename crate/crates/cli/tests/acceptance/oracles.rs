//! Slow reference implementations written straight from the metric
//! definitions. They share no code with the library.

use std::collections::BTreeMap;

/// Every length-`n` window of `s`.
fn grams<T: Clone>(s: &[T], n: usize) -> Vec<Vec<T>> {
    if s.len() < n {
        return Vec::new();
    }
    (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
}

fn occurrences<T: PartialEq>(s: &[T], g: &[T]) -> usize {
    if s.len() < g.len() {
        return 0;
    }
    (0..=s.len() - g.len())
        .filter(|&i| &s[i..i + g.len()] == g)
        .count()
}

fn distinct<T: PartialEq + Clone>(all: Vec<Vec<T>>) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = Vec::new();
    for g in all {
        if !out.contains(&g) {
            out.push(g);
        }
    }
    out
}

/// Attribute-match reward by enumerating every n-gram of the generated
/// sentence and testing it against the phrase list. Returns the matched
/// counts per order and the reward.
pub fn als(
    generated: &[String],
    reference: &[String],
    phrases: &[Vec<String>],
) -> ([usize; 2], f64) {
    let single: Vec<&String> = phrases
        .iter()
        .filter(|p| p.len() == 1)
        .map(|p| &p[0])
        .collect();
    let double: Vec<&[String]> = phrases
        .iter()
        .filter(|p| p.len() == 2)
        .map(Vec::as_slice)
        .collect();
    let is_tuple = |g: &[String]| {
        g.iter().any(|w| single.contains(&w)) || (g.len() == 2 && double.contains(&g))
    };

    let m = generated.len();
    let mut matched = [0usize; 2];
    let mut precision = [0.0f64; 2];
    for n in 1..=2 {
        let total = (m + 1).saturating_sub(n);
        for g in distinct(grams(generated, n)) {
            if is_tuple(&g) {
                matched[n - 1] += occurrences(generated, &g).min(occurrences(reference, &g));
            }
        }
        if total > 0 {
            precision[n - 1] = matched[n - 1] as f64 / total as f64;
        }
    }
    let (l, big_l) = (m as f64, reference.len() as f64);
    let brevity = if l < big_l {
        (1.0 - big_l / l).exp()
    } else {
        1.0
    };
    let reward = if precision[0] > 0.0 && precision[1] > 0.0 {
        brevity * (precision[0] * precision[1]).sqrt()
    } else {
        0.0
    };
    (matched, reward)
}

pub fn bleu4<T: PartialEq + Clone>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    for (h, r) in hyps.iter().zip(refs) {
        for n in 1..=4 {
            let all = grams(h, n);
            total[n - 1] += all.len();
            for g in distinct(all) {
                matched[n - 1] += occurrences(h, &g).min(occurrences(r, &g));
            }
        }
    }
    if matched.contains(&0) {
        return 0.0;
    }
    let product: f64 = (0..4)
        .map(|i| matched[i] as f64 / total[i] as f64)
        .product();
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let bp = if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    bp * product.powf(0.25)
}

fn is_subsequence<T: PartialEq>(needle: &[&T], hay: &[T]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|y| y == *x))
}

/// Longest common subsequence by trying every subsequence of `a`.
fn lcs<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    assert!(a.len() <= 16, "exhaustive LCS only for short sentences");
    (0u32..1 << a.len())
        .filter(|mask| {
            let pick: Vec<&T> = (0..a.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| &a[i])
                .collect();
            is_subsequence(&pick, b)
        })
        .map(|mask| mask.count_ones() as usize)
        .max()
        .unwrap_or(0)
}

pub fn rouge_l<T: PartialEq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> f64 {
    let beta: f64 = 1.2;
    let f: f64 = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| {
            let l = lcs(h, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let (p, rc) = (l / h.len() as f64, l / r.len() as f64);
            (1.0 + beta * beta) * p * rc / (rc + beta * beta * p)
        })
        .sum();
    f / hyps.len() as f64
}

/// CIDEr with dense TF-IDF vectors over every n-gram seen in the corpus.
pub fn cider<T: Ord + Clone>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> f64 {
    let docs = refs.len() as f64;
    let mut score = 0.0;
    for n in 1..=4 {
        let mut index: BTreeMap<Vec<T>, usize> = BTreeMap::new();
        for s in hyps.iter().chain(refs) {
            for g in grams(s, n) {
                let next = index.len();
                index.entry(g).or_insert(next);
            }
        }
        let mut idf = vec![0.0; index.len()];
        for (g, &k) in &index {
            let df = refs.iter().filter(|r| occurrences(r, g) > 0).count().max(1);
            idf[k] = (docs / df as f64).ln();
        }
        let vector = |s: &[T]| {
            let all = grams(s, n);
            let mut v = vec![0.0; index.len()];
            for g in &all {
                v[index[g]] += 1.0 / all.len() as f64;
            }
            v.iter()
                .zip(&idf)
                .map(|(tf, w)| tf * w)
                .collect::<Vec<f64>>()
        };
        for (h, r) in hyps.iter().zip(refs) {
            let (hv, rv) = (vector(h), vector(r));
            let dot: f64 = hv.iter().zip(&rv).map(|(a, b)| a * b).sum();
            let hn = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
            let rn = rv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if hn > 0.0 && rn > 0.0 {
                score += dot / (hn * rn);
            }
        }
    }
    score / (4.0 * hyps.len() as f64)
}

/// Items ranked with detections first (ties in item order); precision is
/// accumulated at every detected relevant item.
pub fn attribute_map<T: PartialEq + Clone>(
    captions: &[Vec<T>],
    truth: &[Vec<usize>],
    phrases: &[Vec<T>],
) -> f64 {
    let mut aps = Vec::new();
    for (a, phrase) in phrases.iter().enumerate() {
        let relevant = truth.iter().filter(|t| t.contains(&a)).count();
        if relevant == 0 {
            continue;
        }
        let detected = |i: usize| !phrase.is_empty() && occurrences(&captions[i], phrase) > 0;
        let mut order: Vec<usize> = (0..captions.len()).collect();
        order.sort_by_key(|&i| (!detected(i), i));
        let mut ap = 0.0;
        for (k, &i) in order.iter().enumerate() {
            if detected(i) && truth[i].contains(&a) {
                let hits = order[..=k]
                    .iter()
                    .filter(|&&j| detected(j) && truth[j].contains(&a))
                    .count();
                ap += hits as f64 / (k + 1) as f64;
            }
        }
        aps.push(ap / relevant as f64);
    }
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}
