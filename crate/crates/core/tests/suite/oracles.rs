//! Randomized comparisons against brute-force reimplementations.

use seda_core::losses::{self, BoundaryMap, ProbMap, Shape3};
use seda_core::metrics::{boundary_f1, compute_iou, squared_distance_transform, ConfusionMatrix};
use seda_core::rng::{self, Rng};
use seda_core::scene::labels_to_boundary;

use super::runner::Case;

pub fn cases() -> Vec<Case> {
    vec![
        ("labels_to_boundary matches neighbourhood scan", boundary_scan),
        ("iou matches set counting", iou_sets),
        ("lovasz matches the permutation maximum", lovasz_permutations),
        ("distance transform matches exhaustive search", distance_transform),
        ("boundary f1 matches pairwise matching", boundary_matching),
    ]
}

fn random_labels(r: &mut Rng, h: usize, w: usize, classes: usize) -> Vec<u8> {
    // blocky maps so boundaries are not everywhere
    let bs = rng::int_range(r, 1, 5);
    let blocks: Vec<u8> =
        (0..h.div_ceil(bs) * w.div_ceil(bs)).map(|_| rng::int_range(r, 0, classes - 1) as u8).collect();
    (0..h * w).map(|i| blocks[(i / w / bs) * w.div_ceil(bs) + (i % w) / bs]).collect()
}

fn boundary_scan() {
    let mut r = rng::stream(11, 0);
    let (h, w) = (16, 16);
    for _ in 0..100 {
        let k = rng::int_range(&mut r, 1, 3);
        let classes = rng::int_range(&mut r, 2, 5);
        let l = random_labels(&mut r, h, w, classes);
        let got = labels_to_boundary(&l, h, w, k).unwrap();
        for y in 0..h {
            for x in 0..w {
                let mut differs = false;
                for yy in y.saturating_sub(k)..(y + k + 1).min(h) {
                    for xx in x.saturating_sub(k)..(x + k + 1).min(w) {
                        differs |= l[yy * w + xx] != l[y * w + x];
                    }
                }
                assert_eq!(got[y * w + x] == 1, differs, "k {k} at ({y}, {x})");
            }
        }
    }
}

fn iou_sets() {
    let mut r = rng::stream(12, 0);
    for _ in 0..50 {
        let c = rng::int_range(&mut r, 2, 6);
        let n = rng::int_range(&mut r, 1, 200);
        let gt: Vec<u8> = (0..n).map(|_| rng::int_range(&mut r, 0, c - 1) as u8).collect();
        let pred: Vec<u8> = (0..n).map(|_| rng::int_range(&mut r, 0, c - 1) as u8).collect();
        let mut cm = ConfusionMatrix::new(c);
        cm.accumulate(&gt, &pred).unwrap();
        let rep = compute_iou(&cm).unwrap();
        let mut sum = 0.0;
        let mut present = 0;
        for k in 0..c as u8 {
            let a: Vec<usize> = (0..n).filter(|i| gt[*i] == k).collect();
            let b: Vec<usize> = (0..n).filter(|i| pred[*i] == k).collect();
            let inter = a.iter().filter(|i| b.contains(i)).count();
            let union = a.len() + b.len() - inter;
            if union == 0 {
                assert_eq!(rep.per_class[k as usize], None);
            } else {
                let iou = inter as f64 / union as f64;
                assert!((rep.per_class[k as usize].unwrap() - iou).abs() < 1e-12);
                sum += iou;
                present += 1;
            }
        }
        assert!((rep.miou - sum / present as f64).abs() < 1e-12);
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// The Jaccard loss is submodular, so its Lovász extension is the largest
/// value of `Σ e_π(i) (F(π_1..i) - F(π_1..i-1))` over all orderings `π`.
fn lovasz_brute(p: &ProbMap, labels: &[u8]) -> f64 {
    let s = p.shape();
    let n = s.pixels();
    let perms = permutations(n);
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..s.c {
        let fg: Vec<bool> = labels.iter().map(|l| *l as usize == c).collect();
        if !fg.contains(&true) {
            continue;
        }
        present += 1;
        let err: Vec<f64> = (0..n).map(|q| (f64::from(u8::from(fg[q])) - p.data()[c * n + q]).abs()).collect();
        let jaccard = |wrong: &[bool]| {
            let inter = (0..n).filter(|&q| fg[q] && !wrong[q]).count() as f64;
            let union = (0..n).filter(|&q| fg[q] || wrong[q]).count() as f64;
            1.0 - inter / union
        };
        let best = perms
            .iter()
            .map(|perm| {
                let mut wrong = vec![false; n];
                let mut prev = 0.0;
                let mut acc = 0.0;
                for &q in perm {
                    wrong[q] = true;
                    let cur = jaccard(&wrong);
                    acc += err[q] * (cur - prev);
                    prev = cur;
                }
                acc
            })
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    total / present as f64
}

fn lovasz_permutations() {
    let mut r = rng::stream(13, 0);
    for _ in 0..40 {
        let c = rng::int_range(&mut r, 2, 4);
        let n = rng::int_range(&mut r, 1, 6);
        let mut data = vec![0.0; c * n];
        for q in 0..n {
            let raw: Vec<f64> = (0..c).map(|_| rng::uniform(&mut r) + 1e-3).collect();
            let z: f64 = raw.iter().sum();
            for k in 0..c {
                data[k * n + q] = raw[k] / z;
            }
        }
        let labels: Vec<u8> = (0..n).map(|_| rng::int_range(&mut r, 0, c - 1) as u8).collect();
        let p = ProbMap::new(Shape3::new(c, 1, n), data).unwrap();
        let got = losses::lovasz_softmax(&p, &labels).unwrap().value;
        let want = lovasz_brute(&p, &labels);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

fn distance_transform() {
    let mut r = rng::stream(14, 0);
    for _ in 0..30 {
        let (h, w) = (rng::int_range(&mut r, 1, 12), rng::int_range(&mut r, 1, 12));
        let density = rng::uniform(&mut r) * 0.3;
        let set: Vec<bool> = (0..h * w).map(|_| rng::uniform(&mut r) < density).collect();
        let got = squared_distance_transform(&set, h, w);
        for (i, g) in got.iter().enumerate() {
            let want = (0..h * w)
                .filter(|j| set[*j])
                .map(|j| ((i / w) as f64 - (j / w) as f64).powi(2) + ((i % w) as f64 - (j % w) as f64).powi(2))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(*g, want);
        }
    }
}

fn boundary_matching() {
    let mut r = rng::stream(15, 0);
    let (h, w) = (16, 16);
    for _ in 0..40 {
        let tol = rng::int_range(&mut r, 0, 3);
        let gt = labels_to_boundary(&random_labels(&mut r, h, w, 3), h, w, 1).unwrap();
        let pred: Vec<f64> = (0..h * w).map(|_| rng::uniform(&mut r)).collect();
        let map = BoundaryMap::new(h, w, pred.clone()).unwrap();
        let got = boundary_f1(&map, &gt, tol).unwrap();
        let p: Vec<usize> = (0..h * w).filter(|i| pred[*i] > 0.5).collect();
        let g: Vec<usize> = (0..h * w).filter(|i| gt[*i] == 1).collect();
        let near = |a: usize, b: usize| {
            let dy = (a / w) as f64 - (b / w) as f64;
            let dx = (a % w) as f64 - (b % w) as f64;
            (dy * dy + dx * dx).sqrt() <= tol as f64
        };
        let ratio = |from: &[usize], to: &[usize]| match (from.len(), to.len()) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (n, _) => from.iter().filter(|a| to.iter().any(|b| near(**a, *b))).count() as f64 / n as f64,
        };
        let (pr, rc) = (ratio(&p, &g), ratio(&g, &p));
        let f1 = if pr + rc > 0.0 { 2.0 * pr * rc / (pr + rc) } else { 0.0 };
        assert!((got.precision - pr).abs() < 1e-12);
        assert!((got.recall - rc).abs() < 1e-12);
        assert!((got.f1 - f1).abs() < 1e-12);
    }
}
