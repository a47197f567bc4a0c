//! Central finite differences against every analytic loss gradient.
//!
//! Losses over probability maps are differentiated through a softmax whose
//! Jacobian is written out here, so the probe can move logits freely.

use seda_core::losses::{self, AdvMode, BoundaryMap, NPlus, ProbMap, Shape3};
use seda_core::rng::{self, Rng};

use super::runner::Case;

const H: f64 = 1e-6;
pub const REL: f64 = 1e-3;

pub fn cases() -> Vec<Case> {
    vec![
        ("cross-entropy", ce),
        ("lovasz-softmax", lovasz),
        ("self-information", self_information),
        ("normalized entropy", entropy),
        ("weighted adversarial, discriminator side", adv_sem_disc),
        ("weighted adversarial, generator side", adv_sem_gen),
        ("edge adversarial", adv_edge),
        ("balanced edge BCE", edge_bce),
        ("uncertainty-adaptive self-training loss", uasl),
        ("edge consistency", edge_consistency),
        ("relaxed boundary derivation", boundary),
    ]
}

fn check(analytic: &[f64], numeric: &[f64], what: &str) {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().chain(analytic).fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-3 * scale).max(1e-12);
        assert!(err <= REL, "{what}[{i}]: analytic {a}, numeric {n}, relative error {err:.2e}");
    }
}

fn numeric(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + H;
            let up = f(&probe);
            probe[i] = x[i] - H;
            let dn = f(&probe);
            probe[i] = x[i];
            (up - dn) / (2.0 * H)
        })
        .collect()
}

fn normals(r: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng::normal(r)).collect()
}

fn softmax(z: &[f64], s: Shape3) -> ProbMap {
    let hw = s.pixels();
    let mut p = vec![0.0; s.len()];
    for q in 0..hw {
        let m = (0..s.c).map(|c| z[c * hw + q]).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = (0..s.c).map(|c| (z[c * hw + q] - m).exp()).collect();
        let sum: f64 = e.iter().sum();
        for c in 0..s.c {
            p[c * hw + q] = e[c] / sum;
        }
    }
    ProbMap::new(s, p).unwrap()
}

/// `J^T g` for the per-pixel softmax.
fn softmax_vjp(p: &ProbMap, g: &[f64]) -> Vec<f64> {
    let s = p.shape();
    let hw = s.pixels();
    let pd = p.data();
    let mut out = vec![0.0; s.len()];
    for q in 0..hw {
        let dot: f64 = (0..s.c).map(|c| pd[c * hw + q] * g[c * hw + q]).sum();
        for c in 0..s.c {
            out[c * hw + q] = pd[c * hw + q] * (g[c * hw + q] - dot);
        }
    }
    out
}

/// Checks `d f(softmax(z)) / dz` where `f` returns value and gradient in `P`.
fn through_softmax(s: Shape3, seed: u64, what: &str, f: impl Fn(&ProbMap) -> (f64, Vec<f64>)) {
    let mut r = rng::stream(seed, 0);
    let z = normals(&mut r, s.len(), 1.0);
    let p = softmax(&z, s);
    let analytic = softmax_vjp(&p, &f(&p).1);
    check(&analytic, &numeric(&z, |z| f(&softmax(z, s)).0), what);
}

fn labels(r: &mut Rng, s: Shape3) -> Vec<u8> {
    (0..s.pixels()).map(|_| rng::int_range(r, 0, s.c - 1) as u8).collect()
}

fn ce() {
    for seed in 0..4 {
        let s = Shape3::new(3, 3, 4);
        let y = losses::labels_to_onehot(&labels(&mut rng::stream(seed, 1), s), 3).unwrap();
        through_softmax(s, seed, "cross-entropy", |p| {
            let o = losses::cross_entropy_seg(p, &y).unwrap();
            (o.value, o.grad)
        });
    }
}

fn lovasz() {
    for seed in 0..6 {
        let s = Shape3::new(3, 2, 3);
        let l = labels(&mut rng::stream(seed, 1), s);
        through_softmax(s, seed + 10, "lovasz", |p| {
            let o = losses::lovasz_softmax(p, &l).unwrap();
            (o.value, o.grad)
        });
    }
}

fn self_information() {
    let s = Shape3::new(4, 2, 2);
    let weights = normals(&mut rng::stream(3, 2), s.len(), 1.0);
    through_softmax(s, 3, "self-information", |p| {
        let i = losses::self_information(p);
        let v = i.data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        (v, losses::self_information_vjp(p, &weights).unwrap())
    });
}

fn entropy() {
    let s = Shape3::new(3, 4, 4);
    let weights = normals(&mut rng::stream(4, 2), s.pixels(), 1.0);
    through_softmax(s, 4, "entropy", |p| {
        let e = losses::entropy(p);
        let v = e.data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        (v, losses::entropy_vjp(p, &weights).unwrap())
    });
}

fn adversarial(mode: AdvMode, f: impl Fn(&[f64], &[f64], AdvMode) -> losses::AdvObjective) {
    let mut r = rng::stream(5, 0);
    let src = normals(&mut r, 16, 2.0);
    let tgt = normals(&mut r, 16, 2.0);
    let o = f(&src, &tgt, mode);
    check(&o.grad_src, &numeric(&src, |x| f(x, &tgt, mode).value), "source scores");
    check(&o.grad_tgt, &numeric(&tgt, |x| f(&src, x, mode).value), "target scores");
}

fn adv_sem_disc() {
    adversarial(AdvMode::Disc, |s, t, m| losses::adv_sem(s, t, 0.37, 10.0, m).unwrap());
}

fn adv_sem_gen() {
    adversarial(AdvMode::Gen, |s, t, m| losses::adv_sem(s, t, 0.37, 10.0, m).unwrap());
}

fn adv_edge() {
    for mode in [AdvMode::Disc, AdvMode::Gen] {
        adversarial(mode, |s, t, m| losses::adv_edge(s, t, m).unwrap());
    }
}

fn edge_bce() {
    let mut r = rng::stream(6, 0);
    let gt: Vec<u8> = (0..16).map(|i| u8::from(i % 5 == 0)).collect();
    let pred: Vec<f64> = (0..16).map(|_| rng::range(&mut r, 0.05, 0.95)).collect();
    for balanced in [false, true] {
        let f = |x: &[f64]| losses::edge_bce(&BoundaryMap::new(4, 4, x.to_vec()).unwrap(), &gt, balanced).unwrap();
        check(&f(&pred).grad, &numeric(&pred, |x| f(x).value), "edge BCE");
    }
}

fn uasl() {
    let s = Shape3::new(3, 3, 3);
    let mut r = rng::stream(7, 1);
    let y = losses::labels_to_onehot(&labels(&mut r, s), 3).unwrap();
    let e: Vec<f64> = (0..s.pixels()).map(|_| rng::uniform(&mut r)).collect();
    through_softmax(s, 7, "uasl", |p| {
        let o = losses::uasl(p, &y, &e).unwrap();
        (o.value, o.grad)
    });
}

fn edge_consistency() {
    let mut r = rng::stream(8, 0);
    // keep values away from the threshold so the active set is stable
    let away = |r: &mut Rng| {
        let v = rng::range(r, 0.0, 0.4);
        if rng::uniform(r) < 0.5 {
            v
        } else {
            1.0 - v
        }
    };
    let a: Vec<f64> = (0..16).map(|_| away(&mut r)).collect();
    let b: Vec<f64> = (0..16).map(|_| away(&mut r)).collect();
    let f = |x: &[f64], y: &[f64]| {
        losses::edge_consistency(
            &BoundaryMap::new(4, 4, x.to_vec()).unwrap(),
            &BoundaryMap::new(4, 4, y.to_vec()).unwrap(),
            0.5,
            NPlus::Union,
        )
        .unwrap()
    };
    let o = f(&a, &b);
    assert!(o.active > 0);
    // the pixels at exactly 0 or 1 sit on a kink of |a - b|; nudge inward
    let inner = |v: &[f64]| v.iter().map(|x| x.clamp(1e-3, 1.0 - 1e-3)).collect::<Vec<_>>();
    let (a, b) = (inner(&a), inner(&b));
    let o2 = f(&a, &b);
    assert_eq!(o.active, o2.active);
    check(&o2.grad_pred, &numeric(&a, |x| f(x, &b).value), "prediction side");
    check(&o2.grad_target, &numeric(&b, |y| f(&a, y).value), "target side");
}

fn boundary() {
    let s = Shape3::new(3, 4, 4);
    for seed in 0..3 {
        let mut r = rng::stream(9 + seed, 0);
        let z = normals(&mut r, s.len(), 1.0);
        let noise = losses::gumbel_noise(&mut r, s.len());
        let weights = normals(&mut r, s.pixels(), 1.0);
        let f = |z: &[f64]| {
            let d = losses::pred_to_boundary(z, s, 1.0, 1.0, &noise).unwrap();
            d.soft_map().data().iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let d = losses::pred_to_boundary(&z, s, 1.0, 1.0, &noise).unwrap();
        assert!(d.soft_map().data().iter().all(|v| *v < 1.0));
        check(&d.backward(&weights).unwrap(), &numeric(&z, f), "boundary");
    }
}
