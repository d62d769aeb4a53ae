use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_map(r: &mut ChaCha8Rng, h: usize, w: usize) -> SaliencyMap {
    SaliencyMap::new(h, w, (0..h * w).map(|_| r.gen_range(0.05..0.95)).collect()).unwrap()
}

fn random_rgb(r: &mut ChaCha8Rng, h: usize, w: usize) -> ImageGrid {
    ImageGrid::new(h, w, 3, (0..3 * h * w).map(|_| r.gen::<f64>()).collect()).unwrap()
}

/// Central difference of `f` at coordinate `i` of `m`.
fn numeric(m: &SaliencyMap, i: usize, f: &dyn Fn(&SaliencyMap) -> f64) -> f64 {
    let step = 1e-4;
    let mut plus = m.values().to_vec();
    let mut minus = m.values().to_vec();
    plus[i] += step;
    minus[i] -= step;
    let p = SaliencyMap::new(m.height(), m.width(), plus).unwrap();
    let q = SaliencyMap::new(m.height(), m.width(), minus).unwrap();
    (f(&p) - f(&q)) / (2.0 * step)
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

#[test]
fn pce_perfect_and_hand_case() {
    let mut s = ScribbleMap::unknown(2, 2);
    s.set(0, FOREGROUND);
    s.set(3, BACKGROUND);
    let p = SaliencyMap::new(2, 2, vec![1.0 - EPS, 0.5, 0.5, EPS]).unwrap();
    assert!(l_pce(&p, &s).unwrap().value < 1e-5);

    let p = SaliencyMap::new(2, 2, vec![0.9, 0.5, 0.5, 0.2]).unwrap();
    let v = l_pce(&p, &s).unwrap().value;
    assert!((v - 0.16425).abs() < 1e-5, "{v}");
    assert!((v - (-(0.9f64.ln()) - 0.8f64.ln()) / 2.0).abs() < 1e-12);

    let none = l_pce(&p, &ScribbleMap::unknown(2, 2)).unwrap();
    assert_eq!(none.value, 0.0);
    assert!(none.grad.iter().all(|&g| g == 0.0));
}

#[test]
fn lsc_constant_and_pair() {
    let rgb = ImageGrid::filled(1, 2, 3, 0.3).unwrap();
    let c = SaliencyMap::filled(1, 2, 0.4).unwrap();
    assert_eq!(l_lsc(&c, &rgb, 3, 1.0, 0.1).unwrap().value, 0.0);
    let p = SaliencyMap::new(1, 2, vec![1.0, 0.0]).unwrap();
    let v = l_lsc(&p, &rgb, 3, 1.0, 0.1).unwrap().value;
    assert!((v - 0.60653).abs() < 1e-5, "{v}");
    assert!(matches!(l_lsc(&p, &rgb, 4, 1.0, 0.1), Err(Error::Parameter(_))));
}

#[test]
fn smooth_floor_and_edge_aware() {
    let rgb = ImageGrid::filled(4, 4, 3, 0.5).unwrap();
    let c = SaliencyMap::filled(4, 4, 0.3).unwrap();
    let l = l_smooth(&c, &rgb, 10.0).unwrap();
    assert!((l.value - 2e-3).abs() < 1e-6);
    assert!(l.grad.iter().all(|&g| g == 0.0));

    // prediction step between columns 1 and 2
    let step: Vec<f64> = (0..16).map(|i| if i % 4 >= 2 { 1.0 } else { 0.0 }).collect();
    let pred = SaliencyMap::new(4, 4, step.clone()).unwrap();
    let edge_img = ImageGrid::new(4, 4, 3, step.repeat(3)).unwrap();
    let on_edge = l_smooth(&pred, &edge_img, 10.0).unwrap().value;
    let on_flat = l_smooth(&pred, &rgb, 10.0).unwrap().value;
    assert!(on_edge < on_flat);
}

#[test]
fn ssc_identity_and_constants() {
    let mut r = rng(3);
    let full = random_map(&mut r, 16, 16);
    let scaled = SaliencyMap::new(8, 8, crate::grid::resize_plane(full.values(), 16, 16, 8, 8)).unwrap();
    let l = l_ssc(&full, &scaled, 0.5, 11, 0.85).unwrap();
    assert!(l.value.abs() < 1e-6, "{}", l.value);

    let one = SaliencyMap::filled(16, 16, 1.0).unwrap();
    let zero = SaliencyMap::filled(8, 8, 0.0).unwrap();
    let l = l_ssc(&one, &zero, 0.5, 11, 0.85).unwrap();
    let c1 = 1e-4;
    let ssim = c1 / (1.0 + c1);
    let expect = 0.85 * (1.0 - ssim) + 0.15;
    assert!((l.value - expect).abs() < 1e-12, "{} vs {expect}", l.value);

    let wrong = SaliencyMap::filled(7, 8, 0.0).unwrap();
    assert!(matches!(l_ssc(&one, &wrong, 0.5, 11, 0.85), Err(Error::Dimension(_))));
}

#[test]
fn ce_expanded_cases() {
    let target = SaliencyMap::new(1, 4, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let e = ExpandedLabel::from_binary_map(target.clone()).unwrap();
    assert!(l_ce_expanded(&target, &e).unwrap().value < 1e-5);
    let half = SaliencyMap::filled(1, 4, 0.5).unwrap();
    let l = l_ce_expanded(&half, &e).unwrap();
    assert!((l.value - std::f64::consts::LN_2).abs() < 1e-12);
    // (p - y) / (p (1 - p)) / N
    assert!((l.grad[0] - (-0.5 / 0.25 / 4.0)).abs() < 1e-12);
    assert!((l.grad[1] - (0.5 / 0.25 / 4.0)).abs() < 1e-12);
    let other = ExpandedLabel::from_binary_map(SaliencyMap::filled(2, 2, 0.0).unwrap()).unwrap();
    assert!(l_ce_expanded(&half, &other).is_err());
}

#[test]
fn ppa_identical_and_empty() {
    let t = SaliencyMap::new(3, 3, vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let l = l_ppa(&t, &t).unwrap();
    assert!(l.wbce < 1e-4);
    assert_eq!(l.wiou, 0.0);
    let z = SaliencyMap::filled(3, 3, 0.0).unwrap();
    assert_eq!(l_ppa(&z, &z).unwrap().wiou, 0.0);
}

#[test]
fn scribble_and_total_are_plain_sums() {
    let mut r = rng(9);
    let pred = random_map(&mut r, 8, 8);
    let scaled = random_map(&mut r, 4, 4);
    let rgb = random_rgb(&mut r, 8, 8);
    let mut s = ScribbleMap::unknown(8, 8);
    s.set(10, FOREGROUND);
    s.set(50, BACKGROUND);
    let p = ScribbleParams::default();
    let sc = l_scribble(&pred, &s, &rgb, &scaled, &p).unwrap();
    let pce = l_pce(&pred, &s).unwrap();
    let lsc = l_lsc(&pred, &rgb, 5, 3.0, 0.1).unwrap();
    let sl = l_smooth(&pred, &rgb, 10.0).unwrap();
    let ssc = l_ssc(&pred, &scaled, 0.5, 11, 0.85).unwrap();
    assert_eq!(sc.value, pce.value + lsc.value + sl.value + ssc.value);
    for i in 0..64 {
        assert_eq!(sc.grad[i], pce.grad[i] + lsc.grad[i] + sl.grad[i] + ssc.grad_full[i]);
    }

    let e = ExpandedLabel::from_binary_map(pred.binarize(0.5)).unwrap();
    let cx = l_ce_expanded(&pred, &e).unwrap();
    let ppa = l_ppa(&pred, &random_map(&mut r, 8, 8)).unwrap();
    let full = l_total(TotalParts {
        scribble: &sc,
        ce_x: Some(&cx),
        ce_t: Some(&cx),
        ppa: Some(&ppa),
    });
    assert_eq!(full.value, sc.value + ppa.value + cx.value + cx.value);
    let base = l_total(TotalParts {
        scribble: &sc,
        ce_x: None,
        ce_t: None,
        ppa: None,
    });
    assert_eq!(base.value, sc.value);
    assert_eq!(base.grad_r, sc.grad);
    assert!(base.grad_px.is_none() && base.parts.ppa.is_none());
}

#[test]
fn finite_at_exact_extremes() {
    let p = SaliencyMap::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    let t = SaliencyMap::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let mut s = ScribbleMap::unknown(2, 2);
    s.set(0, FOREGROUND);
    s.set(1, BACKGROUND);
    let checks = [
        l_pce(&p, &s).unwrap(),
        l_ce_expanded(&p, &ExpandedLabel::from_binary_map(t.clone()).unwrap()).unwrap(),
    ];
    for l in checks {
        assert!(l.value.is_finite() && l.grad.iter().all(|g| g.is_finite()));
    }
    let pp = l_ppa(&p, &t).unwrap();
    assert!(pp.value.is_finite() && pp.grad.iter().all(|g| g.is_finite()));
}

#[test]
fn permutation_invariance_of_pointwise_losses() {
    let mut r = rng(5);
    let pred = random_map(&mut r, 1, 12);
    let labels: Vec<u8> = (0..12).map(|i| (i % 3) as u8).collect();
    let s = ScribbleMap::new(1, 12, labels.clone()).unwrap();
    let perm: Vec<usize> = vec![5, 2, 11, 0, 7, 3, 9, 1, 10, 4, 8, 6];
    let pp = SaliencyMap::new(1, 12, perm.iter().map(|&i| pred.values()[i]).collect()).unwrap();
    let ps = ScribbleMap::new(1, 12, perm.iter().map(|&i| labels[i]).collect()).unwrap();
    let a = l_pce(&pred, &s).unwrap().value;
    let b = l_pce(&pp, &ps).unwrap().value;
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn gradients_match_finite_differences() {
    let mut r = rng(42);
    let (h, w) = (8, 8);
    for probe in 0..20 {
        let pred = random_map(&mut r, h, w);
        let scaled = random_map(&mut r, h / 2, w / 2);
        let pseudo = random_map(&mut r, h, w);
        let rgb = random_rgb(&mut r, h, w);
        let mut s = ScribbleMap::unknown(h, w);
        for _ in 0..10 {
            s.set(r.gen_range(0..h * w), r.gen_range(1..=2));
        }
        let exp = ExpandedLabel::from_binary_map(pseudo.binarize(0.5)).unwrap();
        let i = r.gen_range(0..h * w);

        let checks: Vec<(&str, f64, f64)> = vec![
            ("pce", l_pce(&pred, &s).unwrap().grad[i], numeric(&pred, i, &|m| l_pce(m, &s).unwrap().value)),
            ("smooth", l_smooth(&pred, &rgb, 10.0).unwrap().grad[i], numeric(&pred, i, &|m| l_smooth(m, &rgb, 10.0).unwrap().value)),
            ("ce", l_ce_expanded(&pred, &exp).unwrap().grad[i], numeric(&pred, i, &|m| l_ce_expanded(m, &exp).unwrap().value)),
            ("ppa", l_ppa(&pred, &pseudo).unwrap().grad[i], numeric(&pred, i, &|m| l_ppa(m, &pseudo).unwrap().value)),
            ("ssc_full", l_ssc(&pred, &scaled, 0.5, 11, 0.85).unwrap().grad_full[i], numeric(&pred, i, &|m| l_ssc(m, &scaled, 0.5, 11, 0.85).unwrap().value)),
        ];
        for (name, a, n) in checks {
            assert!(rel_err(a, n) < 1e-4, "{name} probe {probe}: {a} vs {n}");
        }
        let j = r.gen_range(0..h * w / 4);
        let a = l_ssc(&pred, &scaled, 0.5, 11, 0.85).unwrap().grad_scaled[j];
        let n = numeric(&scaled, j, &|m| l_ssc(&pred, m, 0.5, 11, 0.85).unwrap().value);
        assert!(rel_err(a, n) < 1e-4, "ssc_scaled {a} vs {n}");
    }
}
