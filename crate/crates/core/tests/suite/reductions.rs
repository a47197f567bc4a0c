//! Limiting cases where a loss must collapse onto a simpler one.

use seda_core::losses::{self, AdvMode, ProbMap, Shape3};
use seda_core::rng;

use super::runner::Case;

pub const TOL: f64 = 1e-7;

pub fn cases() -> Vec<Case> {
    vec![
        ("alpha = 0 gives the unweighted adversarial loss", alpha_zero),
        ("zero entropy turns the weight off", entropy_zero),
        ("uasl with zero entropy is cross-entropy", uasl_is_ce),
    ]
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn standard(src: &[f64], tgt: &[f64], mode: AdvMode) -> f64 {
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|x| f(*x)).sum::<f64>() / v.len() as f64;
    match mode {
        AdvMode::Disc => mean(src, &softplus) + mean(tgt, &|s| softplus(-s)),
        AdvMode::Gen => mean(tgt, &softplus),
    }
}

fn scores(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng::stream(seed, 0);
    let n = rng::int_range(&mut r, 1, 40);
    let m = rng::int_range(&mut r, 1, 40);
    ((0..n).map(|_| 4.0 * rng::normal(&mut r)).collect(), (0..m).map(|_| 4.0 * rng::normal(&mut r)).collect())
}

fn alpha_zero() {
    for seed in 0..50 {
        let (src, tgt) = scores(seed);
        let eps = rng::uniform(&mut rng::stream(seed, 1));
        for mode in [AdvMode::Disc, AdvMode::Gen] {
            let got = losses::adv_sem(&src, &tgt, eps, 0.0, mode).unwrap().value;
            let want = standard(&src, &tgt, mode);
            assert!((got - want).abs() <= TOL, "seed {seed}: {got} vs {want}");
        }
    }
}

fn entropy_zero() {
    for seed in 0..20 {
        let (src, tgt) = scores(100 + seed);
        for mode in [AdvMode::Disc, AdvMode::Gen] {
            let got = losses::adv_sem(&src, &tgt, 0.0, 10.0, mode).unwrap().value;
            assert!((got - standard(&src, &tgt, mode)).abs() <= TOL);
        }
    }
}

fn uasl_is_ce() {
    for seed in 0..50 {
        let mut r = rng::stream(seed, 2);
        let s = Shape3::new(rng::int_range(&mut r, 2, 5), rng::int_range(&mut r, 1, 6), rng::int_range(&mut r, 1, 6));
        let hw = s.pixels();
        let mut p = vec![0.0; s.len()];
        for q in 0..hw {
            let raw: Vec<f64> = (0..s.c).map(|_| rng::uniform(&mut r) + 1e-3).collect();
            let z: f64 = raw.iter().sum();
            for c in 0..s.c {
                p[c * hw + q] = raw[c] / z;
            }
        }
        let labels: Vec<u8> = (0..hw).map(|_| rng::int_range(&mut r, 0, s.c - 1) as u8).collect();
        let y = losses::labels_to_onehot(&labels, s.c).unwrap();
        let p = ProbMap::new(s, p).unwrap();
        let ce: f64 = -(0..hw).map(|q| p.data()[labels[q] as usize * hw + q].ln()).sum::<f64>() / hw as f64;
        let got = losses::uasl(&p, &y, &vec![0.0; hw]).unwrap().value;
        assert!((got - ce).abs() <= TOL, "seed {seed}: {got} vs {ce}");
    }
}
