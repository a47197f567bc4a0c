//! Worked examples of every loss, map, network contract and metric, each
//! checked exactly or against an independent arithmetic oracle.

use seda_core::adist::{a_distance, ADistanceReport, FeatureTag};
use seda_core::graph::Graph;
use seda_core::losses::{self, AdvMode, BoundaryMap, LossComponents, LossWeights, NPlus, ProbMap, Shape3, TermMask};
use seda_core::metrics::{boundary_f1, compute_iou, ConfusionMatrix};
use seda_core::nets::{DiscKind, Discriminator, EdgeNet, NetConfig, SemanticNet};
use seda_core::optim::poly_lr;
use seda_core::rng;
use seda_core::scene::{labels_to_boundary, render_scene, DatasetSpec};
use seda_core::Tensor;

use super::runner::Case;

pub const TOL: f64 = 1e-6;

pub fn cases() -> Vec<Case> {
    vec![
        ("softmax: equal logits give 1/C", softmax_uniform),
        ("softmax: a dominant logit", softmax_dominant),
        ("softmax: shift invariance", softmax_shift),
        ("cross-entropy: perfect prediction is 0", ce_perfect),
        ("cross-entropy: uniform P gives ln 5", ce_uniform),
        ("cross-entropy: 1e-8 on one of two pixels", ce_one_bad_pixel),
        ("lovasz: one-hot labels give 0", lovasz_perfect),
        ("lovasz: 1x2 instance against brute force", lovasz_two_pixels),
        ("lovasz: pixel order does not matter", lovasz_permutation),
        ("self-information: one-hot pixel is 0", info_one_hot),
        ("self-information: uniform C=5", info_uniform),
        ("self-information: (0.5, 0.5)", info_half),
        ("entropy: uniform map is 1", entropy_uniform),
        ("entropy: one-hot map is 0", entropy_one_hot),
        ("entropy: (0.7, 0.1, 0.1, 0.1)", entropy_c4),
        ("adv_sem: alpha 0 is the standard loss", adv_alpha_zero),
        ("adv_sem: zero scores, eps 0.5, alpha 10", adv_sem_27_ln2),
        ("adv_sem: confident discriminator", adv_confident),
        ("adv_edge: zero scores give 2 ln 2", adv_edge_zero),
        ("adv_edge: equals adv_sem at alpha 0", adv_edge_reduction),
        ("adv_edge: generator ignores source scores", adv_edge_gen_src_grad),
        ("edge_bce: exact prediction", bce_exact),
        ("edge_bce: 0.5 on a balanced map", bce_half),
        ("edge_bce: complement symmetry", bce_symmetry),
        ("pred_to_boundary: constant field", boundary_constant),
        ("pred_to_boundary: split field against hand oracle", boundary_split),
        ("edge_consistency: identical maps", con_identical),
        ("edge_consistency: empty active set", con_empty),
        ("edge_consistency: two disjoint pixels", con_disjoint),
        ("uasl: E = 0 is cross-entropy", uasl_zero),
        ("uasl: E = 1 is 0", uasl_one),
        ("uasl: E = 0.5 is a quarter", uasl_half),
        ("total: zeros", total_zero),
        ("total: unit components", total_units),
        ("total: linearity", total_linear),
        ("poly_lr: endpoints and midpoint", poly_points),
        ("labels_to_boundary: constant map", l2b_constant),
        ("labels_to_boundary: 2x2", l2b_two_by_two),
        ("labels_to_boundary: isolated pixel", l2b_center),
        ("scenes: every class in 90% of maps", scene_class_presence),
        ("scenes: deterministic and seed dependent", scene_determinism),
        ("semantic: shapes, determinism, zero image", semantic_contract),
        ("edge: range, shapes, forced gates", edge_contract),
        ("gated conv: forced gates and range", gated_conv_contract),
        ("fusion: live boundary input", fusion_contract),
        ("discriminators: stride arithmetic", disc_contract),
        ("iou: diagonal, disjoint, 2x2 example", iou_examples),
        ("a-distance: endpoints", adist_examples),
        ("boundary f1: identical, empty, shifted line", bf1_examples),
    ]
}

fn close(a: f64, b: f64, what: &str) {
    assert!((a - b).abs() <= TOL, "{what}: {a} vs {b}");
}

fn pm(c: usize, h: usize, w: usize, data: Vec<f64>) -> ProbMap {
    ProbMap::new(Shape3::new(c, h, w), data).unwrap()
}

/// `[C, H, W]` one-hot layout of `labels`.
fn onehot(labels: &[u8], c: usize) -> Vec<f64> {
    let hw = labels.len();
    let mut y = vec![0.0; c * hw];
    for (q, &l) in labels.iter().enumerate() {
        y[l as usize * hw + q] = 1.0;
    }
    y
}

fn softmax_uniform() {
    let p = losses::softmax_prob(&[3.0; 10], Shape3::new(5, 1, 2)).unwrap();
    assert!(p.data().iter().all(|v| *v == 0.2));
}

fn softmax_dominant() {
    let p = losses::softmax_prob(&[10.0, 0.0, 0.0, 0.0, 0.0], Shape3::new(5, 1, 1)).unwrap();
    close(p.data()[0], 1.0 / (1.0 + 4.0 * (-10f64).exp()), "first channel");
    assert!(p.data()[0] > 0.9998);
}

fn softmax_shift() {
    let s = Shape3::new(3, 1, 2);
    let a = losses::softmax_prob(&[1.0, -2.0, 0.5, 4.0, 3.0, 0.0], s).unwrap();
    let b = losses::softmax_prob(&[101.0, -2.0 - 7.0, 100.5, 4.0 - 7.0, 103.0, -7.0], s).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        close(*x, *y, "shifted softmax");
    }
}

fn ce_perfect() {
    let labels = [0u8, 2, 1, 1];
    let y = onehot(&labels, 3);
    let p = pm(3, 2, 2, y.clone());
    assert_eq!(losses::cross_entropy_seg(&p, &y).unwrap().value, 0.0);
}

fn ce_uniform() {
    let y = onehot(&[4, 0, 1], 5);
    let p = ProbMap::uniform(Shape3::new(5, 1, 3));
    close(losses::cross_entropy_seg(&p, &y).unwrap().value, 5f64.ln(), "uniform CE");
}

fn ce_one_bad_pixel() {
    // labels [0, 0]; pixel 1 puts 1e-8 on class 0
    let p = pm(2, 1, 2, vec![1.0, 1e-8, 0.0, 1.0 - 1e-8]);
    let y = onehot(&[0, 0], 2);
    close(losses::cross_entropy_seg(&p, &y).unwrap().value, 0.5 * 1e8f64.ln(), "CE");
}

fn lovasz_perfect() {
    let labels = [1u8, 0, 2, 2];
    let p = pm(3, 2, 2, onehot(&labels, 3));
    assert_eq!(losses::lovasz_softmax(&p, &labels).unwrap().value, 0.0);
}

/// Lovász extension of the Jaccard loss by definition: sort errors
/// decreasingly and weight each by the increment of the set function.
fn lovasz_oracle(p: &ProbMap, labels: &[u8]) -> f64 {
    let s = p.shape();
    let hw = s.pixels();
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..s.c {
        let fg: Vec<bool> = labels.iter().map(|l| *l as usize == c).collect();
        if !fg.contains(&true) {
            continue;
        }
        present += 1;
        let err: Vec<f64> = (0..hw).map(|q| ((fg[q] as u8 as f64) - p.data()[c * hw + q]).abs()).collect();
        let mut idx: Vec<usize> = (0..hw).collect();
        idx.sort_by(|a, b| err[*b].partial_cmp(&err[*a]).unwrap());
        let jaccard_loss = |set: &[usize]| {
            // mispredicted set: the pixels in `set` are counted as errors
            let inter = (0..hw).filter(|q| fg[*q] && !set.contains(q)).count() as f64;
            let union = (0..hw).filter(|q| fg[*q] || set.contains(q)).count() as f64;
            1.0 - inter / union
        };
        let mut prev = 0.0;
        for k in 0..hw {
            let cur = jaccard_loss(&idx[..=k]);
            total += err[idx[k]] * (cur - prev);
            prev = cur;
        }
    }
    total / present as f64
}

fn lovasz_two_pixels() {
    let p = pm(2, 1, 2, vec![0.6, 0.4, 0.4, 0.6]);
    let labels = [0u8, 1];
    let got = losses::lovasz_softmax(&p, &labels).unwrap().value;
    close(got, lovasz_oracle(&p, &labels), "lovasz");
    // both classes: errors (0.4, 0.4); J(first) = 1/2, J(both) = 1
    close(got, 0.4, "lovasz by hand");
}

fn lovasz_permutation() {
    let mut r = rng::stream(5, 0);
    let (c, n) = (3, 6);
    let mut data = vec![0.0; c * n];
    for q in 0..n {
        let raw: Vec<f64> = (0..c).map(|_| rng::uniform(&mut r) + 0.05).collect();
        let s: f64 = raw.iter().sum();
        for k in 0..c {
            data[k * n + q] = raw[k] / s;
        }
    }
    let labels: Vec<u8> = (0..n).map(|q| (q % c) as u8).collect();
    let perm = [4usize, 0, 5, 2, 1, 3];
    let mut pdata = vec![0.0; c * n];
    for (new, &old) in perm.iter().enumerate() {
        for k in 0..c {
            pdata[k * n + new] = data[k * n + old];
        }
    }
    let plabels: Vec<u8> = perm.iter().map(|&o| labels[o]).collect();
    let a = losses::lovasz_softmax(&pm(c, 1, n, data), &labels).unwrap().value;
    let b = losses::lovasz_softmax(&pm(c, 1, n, pdata), &plabels).unwrap().value;
    close(a, b, "permuted lovasz");
}

fn info_one_hot() {
    let i = losses::self_information(&pm(3, 1, 1, vec![0.0, 1.0, 0.0]));
    assert_eq!(i.data(), &[0.0, 0.0, 0.0]);
}

fn info_uniform() {
    let i = losses::self_information(&ProbMap::uniform(Shape3::new(5, 1, 1)));
    for v in i.data() {
        close(*v, 5f64.ln() / 5.0, "uniform self-information");
    }
    close(i.data()[0], 0.321_887_582, "numeric");
}

fn info_half() {
    let i = losses::self_information(&pm(2, 1, 1, vec![0.5, 0.5]));
    for v in i.data() {
        close(*v, 0.5 * 2f64.ln(), "two-class self-information");
    }
}

fn entropy_uniform() {
    let e = losses::entropy(&ProbMap::uniform(Shape3::new(4, 2, 3)));
    assert!(e.data().iter().all(|v| (*v - 1.0).abs() < 1e-15));
    close(e.mean(), 1.0, "mean");
}

fn entropy_one_hot() {
    let e = losses::entropy(&pm(3, 1, 3, onehot(&[0, 2, 1], 3)));
    assert!(e.data().iter().all(|v| *v == 0.0));
    assert_eq!(e.mean(), 0.0);
}

fn entropy_c4() {
    let e = losses::entropy(&pm(4, 1, 1, vec![0.7, 0.1, 0.1, 0.1]));
    let oracle = -(0.7 * 0.7f64.ln() + 3.0 * 0.1 * 0.1f64.ln()) / 4f64.ln();
    close(e.data()[0], oracle, "entropy");
    assert!((e.data()[0] - 0.6784).abs() < 5e-5);
}

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

fn adv_alpha_zero() {
    let src = [0.3, -1.2, 2.0];
    let tgt = [0.7, -0.1];
    for mode in [AdvMode::Disc, AdvMode::Gen] {
        let o = losses::adv_sem(&src, &tgt, 0.8, 0.0, mode).unwrap();
        assert_eq!(o.weight, 1.0);
        let standard = match mode {
            AdvMode::Disc => {
                src.iter().map(|s| softplus(*s)).sum::<f64>() / 3.0
                    + tgt.iter().map(|t| softplus(-t)).sum::<f64>() / 2.0
            }
            AdvMode::Gen => tgt.iter().map(|t| softplus(*t)).sum::<f64>() / 2.0,
        };
        close(o.value, standard, "standard adversarial loss");
    }
}

fn adv_sem_27_ln2() {
    let o = losses::adv_sem(&[0.0; 4], &[0.0; 4], 0.5, 10.0, AdvMode::Disc).unwrap();
    assert_eq!(o.weight, 26.0);
    close(o.value, 27.0 * 2f64.ln(), "27 ln 2");
    assert!((o.value - 18.71).abs() < 5e-3);
}

fn adv_confident() {
    let o = losses::adv_sem(&[-60.0; 3], &[60.0; 3], 0.3, 10.0, AdvMode::Disc).unwrap();
    assert!(o.value < 1e-20, "{}", o.value);
}

fn adv_edge_zero() {
    close(losses::adv_edge(&[0.0; 9], &[0.0; 9], AdvMode::Disc).unwrap().value, 2.0 * 2f64.ln(), "2 ln 2");
}

fn adv_edge_reduction() {
    let src = [1.5, -0.5, 0.0, 3.0];
    let tgt = [-2.0, 0.25, 1.0, 0.0];
    for mode in [AdvMode::Disc, AdvMode::Gen] {
        let a = losses::adv_edge(&src, &tgt, mode).unwrap();
        let b = losses::adv_sem(&src, &tgt, 0.9, 0.0, mode).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.grad_tgt, b.grad_tgt);
        assert_eq!(a.grad_src, b.grad_src);
    }
}

fn adv_edge_gen_src_grad() {
    let o = losses::adv_edge(&[0.4, -3.0], &[1.0, 2.0], AdvMode::Gen).unwrap();
    assert!(o.grad_src.iter().all(|g| *g == 0.0));
}

fn bce_exact() {
    let gt = [1u8, 0, 0, 1, 0, 0];
    let pred = BoundaryMap::new(2, 3, gt.iter().map(|b| (*b as f64).clamp(1e-7, 1.0 - 1e-7)).collect()).unwrap();
    let v = losses::edge_bce(&pred, &gt, true).unwrap().value;
    assert!((0.0..1e-6).contains(&v), "{v}");
}

fn bce_half() {
    let gt = [1u8, 0, 1, 0];
    let pred = BoundaryMap::new(2, 2, vec![0.5; 4]).unwrap();
    close(losses::edge_bce(&pred, &gt, false).unwrap().value, 2f64.ln(), "ln 2");
}

fn bce_symmetry() {
    let gt = [1u8, 0, 0, 1, 1, 0];
    let p = [0.9, 0.2, 0.35, 0.6, 0.05, 0.7];
    let a = losses::edge_bce(&BoundaryMap::new(2, 3, p.to_vec()).unwrap(), &gt, false).unwrap().value;
    let flipped: Vec<u8> = gt.iter().map(|b| 1 - b).collect();
    let b = losses::edge_bce(&BoundaryMap::new(2, 3, p.iter().map(|v| 1.0 - v).collect()).unwrap(), &flipped, false)
        .unwrap()
        .value;
    close(a, b, "complement");
}

fn boundary_constant() {
    let s = Shape3::new(3, 6, 6);
    let mut logits = vec![0.0; s.len()];
    for q in 0..36 {
        logits[36 + q] = 30.0;
    }
    let noise = losses::gumbel_noise(&mut rng::stream(1, 0), s.len());
    let d = losses::pred_to_boundary(&logits, s, 1e-3, 1.0, &noise).unwrap();
    assert!(d.map().data().iter().all(|v| *v == 0.0));
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Blur with the full 5×5 outer-product kernel and take central
/// differences, both with mirrored borders, straight from the definition.
fn boundary_oracle(onehot: &[f64], c: usize, h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k1: Vec<f64> = (0..5).map(|i| (-((i as f64 - 2.0).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = k1.iter().sum();
    let k1: Vec<f64> = k1.iter().map(|v| v / z).collect();
    let mut out = vec![0.0; h * w];
    for ch in 0..c {
        let f = |y: usize, x: usize| onehot[ch * h * w + y * w + x];
        let mut blurred = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in 0..5 {
                    for dx in 0..5 {
                        let yy = reflect(y as isize + dy as isize - 2, h);
                        let xx = reflect(x as isize + dx as isize - 2, w);
                        acc += k1[dy] * k1[dx] * f(yy, xx);
                    }
                }
                blurred[y * w + x] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let b = |yy: usize, xx: usize| blurred[yy * w + xx];
                let gx = 0.5 * (b(y, reflect(x as isize + 1, w)) - b(y, reflect(x as isize - 1, w)));
                let gy = 0.5 * (b(reflect(y as isize + 1, h), x) - b(reflect(y as isize - 1, h), x));
                out[y * w + x] += (gx * gx + gy * gy).sqrt() / 2f64.sqrt();
            }
        }
    }
    out.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

fn boundary_split() {
    let (h, w) = (8, 8);
    let s = Shape3::new(2, h, w);
    let labels: Vec<u8> = (0..h * w).map(|i| u8::from(i % w >= 4)).collect();
    let mut logits = vec![0.0; s.len()];
    for (q, &l) in labels.iter().enumerate() {
        logits[l as usize * h * w + q] = 40.0;
    }
    let noise = losses::gumbel_noise(&mut rng::stream(2, 0), s.len());
    let d = losses::pred_to_boundary(&logits, s, 1e-3, 1.0, &noise).unwrap();
    let oracle = boundary_oracle(&onehot(&labels, 2), 2, h, w, 1.0);
    for (a, b) in d.map().data().iter().zip(&oracle) {
        close(*a, *b, "boundary map");
    }
    let col = |x: usize| (0..h).map(|y| d.map().get(y, x)).sum::<f64>();
    let total: f64 = (0..w).map(col).sum();
    let near: f64 = (2..=5).map(col).sum();
    assert!(near >= 0.9 * total, "ridge not concentrated: {near} of {total}");
    assert!(col(3) > 0.0 && col(4) > 0.0);
    assert_eq!(col(0), 0.0);
    assert_eq!(col(7), 0.0);
}

fn con_identical() {
    let m = BoundaryMap::new(2, 2, vec![0.9, 0.1, 0.7, 0.0]).unwrap();
    assert_eq!(losses::edge_consistency(&m, &m, 0.5, NPlus::Union).unwrap().value, 0.0);
}

fn con_empty() {
    let z = BoundaryMap::zeros(3, 3);
    let r = losses::edge_consistency(&z, &z, 0.5, NPlus::Union).unwrap();
    assert_eq!((r.value, r.active), (0.0, 0));
}

fn con_disjoint() {
    let mut a = vec![0.0; 16];
    let mut b = vec![0.0; 16];
    a[5] = 0.9;
    b[10] = 0.8;
    let pa = BoundaryMap::new(4, 4, a).unwrap();
    let pb = BoundaryMap::new(4, 4, b).unwrap();
    let r = losses::edge_consistency(&pa, &pb, 0.5, NPlus::Union).unwrap();
    assert_eq!(r.active, 2);
    close(r.value, 0.85, "consistency");
    close(losses::edge_consistency(&pb, &pa, 0.5, NPlus::Union).unwrap().value, 0.85, "symmetric");
}

fn uasl_fixture() -> (ProbMap, Vec<f64>) {
    let p = pm(3, 1, 3, vec![0.5, 0.2, 0.1, 0.3, 0.7, 0.2, 0.2, 0.1, 0.7]);
    (p, onehot(&[0, 1, 2], 3))
}

fn uasl_zero() {
    let (p, y) = uasl_fixture();
    let ce = losses::cross_entropy_seg(&p, &y).unwrap().value;
    assert_eq!(losses::uasl(&p, &y, &[0.0; 3]).unwrap().value, ce);
}

fn uasl_one() {
    let (p, y) = uasl_fixture();
    assert_eq!(losses::uasl(&p, &y, &[1.0; 3]).unwrap().value, 0.0);
}

fn uasl_half() {
    let (p, y) = uasl_fixture();
    let ce = losses::cross_entropy_seg(&p, &y).unwrap().value;
    assert_eq!(losses::uasl(&p, &y, &[0.5; 3]).unwrap().value, 0.25 * ce);
}

const SIX: TermMask =
    TermMask { lovasz: false, sem_adv: true, edge_seg: true, edge_adv: true, edge_con: true, uasl: true };

fn unit() -> LossComponents {
    LossComponents { sem_seg: 1.0, lovasz: 0.0, sem_adv: 1.0, edge_seg: 1.0, edge_adv: 1.0, edge_con: 1.0, uasl: 1.0 }
}

fn total_zero() {
    assert_eq!(losses::total_loss(&LossComponents::default(), &LossWeights::default(), &SIX).unwrap(), 0.0);
}

fn total_units() {
    close(losses::total_loss(&unit(), &LossWeights::default(), &SIX).unwrap(), 23.002, "total");
}

fn total_linear() {
    let c = LossComponents {
        sem_seg: 0.3,
        lovasz: 0.2,
        sem_adv: 4.0,
        edge_seg: 0.01,
        edge_adv: 1.5,
        edge_con: 0.25,
        uasl: 0.6,
    };
    let d = LossComponents {
        sem_seg: 0.6,
        lovasz: 0.4,
        sem_adv: 8.0,
        edge_seg: 0.02,
        edge_adv: 3.0,
        edge_con: 0.5,
        uasl: 1.2,
    };
    let mask = TermMask { lovasz: true, ..SIX };
    let w = LossWeights::default();
    assert_eq!(losses::total_loss(&d, &w, &mask).unwrap(), 2.0 * losses::total_loss(&c, &w, &mask).unwrap());
}

fn poly_points() {
    assert_eq!(poly_lr(2.5e-4, 0, 1000, 0.9), 2.5e-4);
    assert_eq!(poly_lr(2.5e-4, 1000, 1000, 0.9), 0.0);
    close(poly_lr(1.0, 500, 1000, 0.9), 0.5f64.powf(0.9), "midpoint");
    assert!((poly_lr(1.0, 500, 1000, 0.9) - 0.5359).abs() < 1e-4);
}

fn l2b_constant() {
    assert!(labels_to_boundary(&[3; 36], 6, 6, 1).unwrap().iter().all(|b| *b == 0));
}

fn l2b_two_by_two() {
    assert_eq!(labels_to_boundary(&[0, 1, 0, 1], 2, 2, 1).unwrap(), vec![1, 1, 1, 1]);
}

fn l2b_center() {
    let mut l = [0u8; 25];
    l[12] = 1;
    let b = labels_to_boundary(&l, 5, 5, 1).unwrap();
    assert_eq!(b.iter().filter(|v| **v == 1).count(), 9);
    for y in 0..5usize {
        for x in 0..5usize {
            let inside = y.abs_diff(2) <= 1 && x.abs_diff(2) <= 1;
            assert_eq!(b[y * 5 + x] == 1, inside);
        }
    }
}

fn scene_class_presence() {
    let spec = DatasetSpec::default();
    let mut counts = [0usize; 5];
    for i in 0..spec.num_images_per_domain {
        let s = render_scene(&spec, i).unwrap();
        for (c, n) in counts.iter_mut().enumerate() {
            if s.label.contains(&(c as u8)) {
                *n += 1;
            }
        }
    }
    for (c, n) in counts.iter().enumerate() {
        assert!(*n * 10 >= 9 * spec.num_images_per_domain, "class {c} present in {n} maps");
    }
}

fn scene_determinism() {
    let spec = DatasetSpec::default();
    let other = DatasetSpec { seed: 8, ..spec.clone() };
    for i in [0, 17, 199] {
        let a = render_scene(&spec, i).unwrap();
        let b = render_scene(&spec, i).unwrap();
        assert_eq!(a.label, b.label);
        assert_eq!(a.source, b.source);
        assert_eq!(a.target, b.target);
        assert_ne!(render_scene(&other, i).unwrap().source, a.source);
    }
}

fn image(seed: u64) -> Tensor {
    let mut r = rng::stream(seed, 99);
    Tensor::from_vec(&[3, 64, 64], (0..3 * 64 * 64).map(|_| rng::uniform(&mut r) as f32).collect()).unwrap()
}

fn semantic_contract() {
    let cfg = NetConfig::default();
    let net = SemanticNet::new(&cfg, &mut rng::stream(0, 1)).unwrap();
    let img = image(1);
    let run = |x: &Tensor| {
        let mut g = Graph::new();
        let v = g.input_ref(x);
        let out = net.forward(&mut g, v, false).unwrap();
        g.value(out.logits).clone()
    };
    let a = run(&img);
    assert_eq!(a.dims(), &[5, 64, 64]);
    assert_eq!(a, run(&img));
    assert!(run(&Tensor::zeros(&[3, 64, 64])).is_finite());
    let odd = NetConfig { resolution: (60, 64), ..cfg };
    assert!(SemanticNet::new(&odd, &mut rng::stream(0, 1)).is_err());
}

fn edge_contract() {
    let cfg = NetConfig::default();
    let sem = SemanticNet::new(&cfg, &mut rng::stream(0, 1)).unwrap();
    let edge = EdgeNet::new(&cfg, &mut rng::stream(0, 2)).unwrap();
    let run = |x: &Tensor, force: Option<f32>| {
        let mut g = Graph::new();
        let v = g.input_ref(x);
        let out = sem.forward(&mut g, v, false).unwrap();
        let e = edge.forward(&mut g, out.features.first_conv, &out.features.stage_feats, false, force).unwrap();
        (g.value(e.boundary).clone(), g.value(e.edge_feat).clone())
    };
    let (b, f) = run(&image(1), None);
    assert_eq!(b.dims(), &[1, 64, 64]);
    assert_eq!(f.dims(), &[cfg.edge_width, 64, 64]);
    assert!(b.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!((b.clone(), f), run(&image(1), None));
    let (z1, _) = run(&image(1), Some(0.0));
    let (z2, _) = run(&image(2), Some(0.0));
    assert_eq!(z1, z2);
    assert_ne!(b, z1);
}

fn gated_conv_contract() {
    let cfg = NetConfig::default();
    let edge = EdgeNet::new(&cfg, &mut rng::stream(3, 2)).unwrap();
    let gc = edge.gated_conv(0);
    let ps = edge.params();
    let mut r = rng::stream(4, 0);
    let mut rand =
        |c: usize| Tensor::from_vec(&[c, 8, 8], (0..c * 64).map(|_| rng::normal(&mut r) as f32).collect()).unwrap();
    let feat = rand(cfg.edge_width);
    let tap = rand(cfg.encoder_widths[0]);
    let eval = |force: Option<f32>, input: &Tensor| {
        let mut g = Graph::new();
        let p = ps.bind(&mut g, false);
        let x = g.input_ref(input);
        let t = g.input_ref(&tap);
        let out = gc.forward(&mut g, &p, x, t, force).unwrap();
        (g.value(out.out).clone(), g.value(out.alpha).clone())
    };
    // the output layer alone, applied to a given map
    let plain = |input: &Tensor| {
        let mut g = Graph::new();
        let p = ps.bind(&mut g, false);
        let x = g.input_ref(input);
        let names = ps.names();
        let wi = names.iter().position(|n| n == "gate0.out.weight").unwrap();
        let bi = names.iter().position(|n| n == "gate0.out.bias").unwrap();
        let y = g.conv2d(x, p[wi], Some(p[bi]), 1, 0).unwrap();
        g.value(y).clone()
    };
    assert_eq!(eval(Some(1.0), &feat).0, plain(&feat));
    assert_eq!(eval(Some(0.0), &feat).0, plain(&Tensor::zeros(&[cfg.edge_width, 8, 8])));
    let (_, alpha) = eval(None, &feat);
    assert_eq!(alpha.dims(), &[1, 8, 8]);
    assert!(alpha.data().iter().all(|a| (0.0..=1.0).contains(a)));
}

fn fusion_contract() {
    let cfg = NetConfig::default();
    let net = SemanticNet::new(&cfg, &mut rng::stream(0, 1)).unwrap();
    let img = image(3);
    let ps = net.params();
    let logits_with = |b: &Tensor| {
        let mut g = Graph::new();
        let p = ps.bind(&mut g, false);
        let x = g.input_ref(&img);
        let f = net.features_with(&mut g, &p, x).unwrap();
        let e = g.input_ref(b);
        let l = net.head(&mut g, &p, f.decoder_feat, Some(e)).unwrap();
        g.value(l).clone()
    };
    let zero = logits_with(&Tensor::zeros(&[1, 64, 64]));
    let one = logits_with(&Tensor::full(&[1, 64, 64], 1.0));
    assert_eq!(zero.dims(), &[5, 64, 64]);
    assert_ne!(zero, one);
    // analytic d logit / d boundary at one pixel against a central difference
    let (py, px, ch) = (20usize, 33usize, 2usize);
    let base = Tensor::full(&[1, 64, 64], 0.3);
    let mut g = Graph::new();
    let p = ps.bind(&mut g, false);
    let x = g.input_ref(&img);
    let f = net.features_with(&mut g, &p, x).unwrap();
    let e = g.variable(base.clone());
    let l = net.head(&mut g, &p, f.decoder_feat, Some(e)).unwrap();
    let mut seed = Tensor::zeros(&[5, 64, 64]);
    seed.data_mut()[ch * 4096 + py * 64 + px] = 1.0;
    let root = g.loss(g.value(l).data()[ch * 4096 + py * 64 + px] as f64, vec![(l, seed)]).unwrap();
    let grads = g.backward(root);
    let analytic = grads.wrt(e).unwrap().data()[py * 64 + px] as f64;
    let h = 1e-2f32;
    let mut up = base.clone();
    up.data_mut()[py * 64 + px] += h;
    let mut dn = base;
    dn.data_mut()[py * 64 + px] -= h;
    let at = |t: &Tensor| logits_with(t).data()[ch * 4096 + py * 64 + px] as f64;
    let numeric = (at(&up) - at(&dn)) / (2.0 * h as f64);
    assert!(analytic != 0.0);
    assert!((analytic - numeric).abs() <= 1e-3 * analytic.abs().max(1e-3), "{analytic} vs {numeric}");
}

fn disc_contract() {
    let cfg = NetConfig::default();
    let ds = Discriminator::new(&cfg, DiscKind::Semantic, &mut rng::stream(0, 3)).unwrap();
    let de = Discriminator::new(&cfg, DiscKind::Edge, &mut rng::stream(0, 4)).unwrap();
    let mut r = rng::stream(6, 0);
    let info = Tensor::from_vec(&[5, 64, 64], (0..5 * 4096).map(|_| rng::uniform(&mut r) as f32).collect()).unwrap();
    let feat = Tensor::from_vec(
        &[cfg.edge_width, 64, 64],
        (0..cfg.edge_width * 4096).map(|_| rng::normal(&mut r) as f32).collect(),
    )
    .unwrap();
    let score = |d: &Discriminator, t: &Tensor| {
        let mut g = Graph::new();
        let x = g.input_ref(t);
        let s = d.forward(&mut g, x, false).unwrap();
        g.value(s).clone()
    };
    let a = score(&ds, &info);
    assert_eq!(a.dims(), &[1, 4, 4]);
    assert_eq!(a, score(&ds, &info));
    let b = score(&de, &feat);
    assert_eq!(b.dims(), &[1, 8, 8]);
    assert_eq!(b, score(&de, &feat));
    let mut g = Graph::new();
    let x = g.input_ref(&feat);
    assert!(ds.forward(&mut g, x, false).is_err());
}

fn iou_examples() {
    let mut cm = ConfusionMatrix::new(3);
    cm.accumulate(&[0, 1, 2, 2, 1], &[0, 1, 2, 2, 1]).unwrap();
    let r = compute_iou(&cm).unwrap();
    assert_eq!(r.miou, 1.0);
    assert!(r.per_class.iter().all(|v| *v == Some(1.0)));
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&[0; 6], &[1; 6]).unwrap();
    let r = compute_iou(&cm).unwrap();
    assert_eq!(r.per_class, vec![Some(0.0), Some(0.0)]);
    assert_eq!(r.miou, 0.0);
    let r = compute_iou(&ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3]).unwrap()).unwrap();
    close(r.miou, 3.0 / 5.0, "mIoU");
    close(r.per_class[0].unwrap(), 0.6, "IoU_0");
}

fn adist_examples() {
    let mut r = rng::stream(8, 0);
    let src: Vec<Vec<f64>> = (0..60).map(|_| (0..4).map(|_| rng::normal(&mut r)).collect()).collect();
    let mut tgt = src.clone();
    rng::shuffle(&mut r, &mut tgt);
    let d = a_distance(&src, &tgt, FeatureTag::Semantic, 0).unwrap();
    assert!(d.a_distance.abs() <= 0.5, "shuffled copies: {}", d.a_distance);
    let far: Vec<Vec<f64>> = src.iter().map(|v| v.iter().map(|x| x + 50.0).collect()).collect();
    assert_eq!(a_distance(&src, &far, FeatureTag::Edge, 0).unwrap().a_distance, 2.0);
    assert_eq!(ADistanceReport::from_error(0.25), 1.0);
}

fn bf1_examples() {
    let (h, w) = (16, 16);
    let line = |col: usize| -> Vec<u8> { (0..h * w).map(|i| u8::from(i % w == col)).collect() };
    let gt = line(7);
    let as_map = |b: &[u8]| BoundaryMap::from_binary(h, w, b).unwrap();
    assert_eq!(boundary_f1(&as_map(&gt), &gt, 1).unwrap().f1, 1.0);
    let s = boundary_f1(&BoundaryMap::zeros(h, w), &gt, 1).unwrap();
    assert_eq!((s.recall, s.f1), (0.0, 0.0));
    let shifted = as_map(&line(8));
    // brute-force matching of the shifted line
    let brute = |tol: f64| {
        let pts = |b: &[u8]| -> Vec<(f64, f64)> {
            (0..h * w).filter(|i| b[*i] == 1).map(|i| ((i / w) as f64, (i % w) as f64)).collect()
        };
        let (p, g) = (pts(&line(8)), pts(&gt));
        let hit = |a: &[(f64, f64)], b: &[(f64, f64)]| {
            a.iter().filter(|x| b.iter().any(|y| ((x.0 - y.0).powi(2) + (x.1 - y.1).powi(2)).sqrt() <= tol)).count()
                as f64
                / a.len() as f64
        };
        let (pr, rc) = (hit(&p, &g), hit(&g, &p));
        if pr + rc == 0.0 {
            0.0
        } else {
            2.0 * pr * rc / (pr + rc)
        }
    };
    assert_eq!(boundary_f1(&shifted, &gt, 1).unwrap().f1, brute(1.0));
    assert_eq!(brute(1.0), 1.0);
    assert_eq!(boundary_f1(&shifted, &gt, 0).unwrap().f1, brute(0.0));
    assert_eq!(brute(0.0), 0.0);
}
