use proptest::prelude::*;
use proptest::sample::subsequence;

use rgbt_scribble::expand::{expand_scribble, extract_foreground, ExpandedLabel};
use rgbt_scribble::grid::{resize_bilinear, ImageGrid, SaliencyMap, ScribbleMap, BACKGROUND, FOREGROUND};
use rgbt_scribble::loss::{l_ce_expanded, l_lsc, l_pce, l_ppa, l_smooth, l_ssc};
use rgbt_scribble::metrics::{e_measure, f_beta, mae};
use rgbt_scribble::refine::{aggregate_pseudo_label, build_par_kernel, par_refine, ParParams};
use rgbt_scribble::superpixel::{slic_segment, SuperpixelMap};
use rgbt_scribble::synth::{generate_sample, Profile};

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (4usize..14, 4usize..14)
}

fn image(h: usize, w: usize) -> impl Strategy<Value = ImageGrid> {
    prop::collection::vec(0.0f64..=1.0, h * w * 3)
        .prop_map(move |d| ImageGrid::new(h, w, 3, d).unwrap())
}

fn map(h: usize, w: usize) -> impl Strategy<Value = SaliencyMap> {
    prop::collection::vec(0.0f64..=1.0, h * w).prop_map(move |v| SaliencyMap::new(h, w, v).unwrap())
}

fn binary(h: usize, w: usize) -> impl Strategy<Value = SaliencyMap> {
    prop::collection::vec(prop::bool::ANY, h * w).prop_map(move |v| {
        SaliencyMap::new(h, w, v.into_iter().map(|b| b as u8 as f64).collect()).unwrap()
    })
}

fn scribble(h: usize, w: usize) -> impl Strategy<Value = ScribbleMap> {
    prop::collection::vec(prop_oneof![6 => Just(0u8), 1 => Just(FOREGROUND), 1 => Just(BACKGROUND)], h * w)
        .prop_map(move |v| ScribbleMap::new(h, w, v).unwrap())
}

/// Random segmentation built by labelling vertical and horizontal strips.
fn segmentation(h: usize, w: usize) -> impl Strategy<Value = SuperpixelMap> {
    (1usize..=h, 1usize..=w).prop_map(move |(by, bx)| {
        let cols = w.div_ceil(bx);
        let labels = (0..h * w)
            .map(|i| ((i / w) / by * cols + (i % w) / bx) as u32)
            .collect();
        SuperpixelMap::from_labels(h, w, labels).unwrap()
    })
}

fn with_dims<T: std::fmt::Debug, S: Strategy<Value = T>>(
    f: impl Fn(usize, usize) -> S,
) -> impl Strategy<Value = T> {
    dims().prop_flat_map(move |(h, w)| f(h, w))
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bilinear_resize_stays_in_range(
        img in with_dims(image),
        nh in 1usize..20,
        nw in 1usize..20,
    ) {
        let out = resize_bilinear(&img, nh, nw).unwrap();
        let (lo, hi) = range(img.data());
        for &v in out.data() {
            prop_assert!(v >= lo && v <= hi);
        }
    }

    #[test]
    fn slic_partitions_into_connected_bounded_regions(
        img in with_dims(image),
        k in 1usize..20,
    ) {
        let k = k.min(img.pixels());
        let seg = slic_segment(&img, k, 10.0, 5).unwrap();
        let t = seg.count();
        prop_assert!(t >= 1 && t <= 2 * k, "T={} k={}", t, k);
        prop_assert!(seg.is_connected());
        prop_assert_eq!(seg.sizes().iter().sum::<usize>(), img.pixels());
        prop_assert!(seg.sizes().iter().all(|&s| s > 0));
    }

    #[test]
    fn expansion_covers_scribble_whole_superpixels(
        (seg, scr) in dims().prop_flat_map(|(h, w)| (segmentation(h, w), scribble(h, w))),
    ) {
        let exp = expand_scribble(&seg, &scr).unwrap();
        let fg = extract_foreground(&scr);
        for (&f, &e) in fg.values().iter().zip(exp.map().values()) {
            prop_assert!(f <= e);
        }
        let mut seen = vec![None; seg.count()];
        for (&l, &e) in seg.labels().iter().zip(exp.map().values()) {
            let slot = &mut seen[l as usize];
            prop_assert!(slot.is_none_or(|s| s == e));
            *slot = Some(e);
        }
    }

    #[test]
    fn expansion_is_monotone_in_foreground_strokes(
        (seg, scr, extra) in dims().prop_flat_map(|(h, w)| {
            (segmentation(h, w), scribble(h, w), subsequence((0..h * w).collect::<Vec<_>>(), 0..=h * w))
        }),
    ) {
        let before = expand_scribble(&seg, &scr).unwrap();
        let mut more = scr.clone();
        for i in extra {
            more.set(i, FOREGROUND);
        }
        let after = expand_scribble(&seg, &more).unwrap();
        for (&a, &b) in before.map().values().iter().zip(after.map().values()) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn par_kernel_rows_are_stochastic(img in with_dims(image)) {
        let k = build_par_kernel(&img, 0.1, 6.0, &[1, 2, 4]).unwrap();
        for i in 0..img.pixels() {
            prop_assert!((k.row_sum(i) - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn par_refine_preserves_range(
        (img, m) in dims().prop_flat_map(|(h, w)| (image(h, w), map(h, w))),
        iters in 0usize..6,
    ) {
        let k = build_par_kernel(&img, 0.1, 6.0, &[1, 2]).unwrap();
        let out = par_refine(&m, &k, iters).unwrap();
        let (lo, hi) = range(m.values());
        for &v in out.values() {
            prop_assert!(v >= lo && v <= hi);
        }
    }

    #[test]
    fn aggregation_commutes_with_mirroring(
        (img, a, b) in dims().prop_flat_map(|(h, w)| (image(h, w), map(h, w), map(h, w))),
    ) {
        let params = ParParams { iters: 3, ..ParParams::default() };
        let y = aggregate_pseudo_label(&a, &b, &img, &params).unwrap();
        let ym = aggregate_pseudo_label(
            &a.flip_horizontal(),
            &b.flip_horizontal(),
            &img.flip_horizontal(),
            &params,
        )
        .unwrap();
        prop_assert_eq!(y.flip_horizontal(), ym);
    }

    #[test]
    fn losses_are_finite_and_nonnegative(
        (p, img, scr, pseudo, exp) in dims().prop_flat_map(|(h, w)| {
            let edge = prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0], h * w)
                .prop_map(move |v| SaliencyMap::new(h, w, v).unwrap());
            (edge, image(h, w), scribble(h, w), map(h, w), binary(h, w))
        }),
    ) {
        let exp = ExpandedLabel::from_binary_map(exp).unwrap();
        let (h, w) = (p.height(), p.width());
        let scaled = SaliencyMap::filled(h.div_ceil(2), w.div_ceil(2), 0.5).unwrap();
        let vals = [
            l_pce(&p, &scr).unwrap().value,
            l_lsc(&p, &img, 5, 3.0, 0.1).unwrap().value,
            l_smooth(&p, &img, 10.0).unwrap().value,
            l_ssc(&p, &scaled, 0.5, 3, 0.85).unwrap().value,
            l_ce_expanded(&p, &exp).unwrap().value,
            l_ppa(&p, &pseudo).unwrap().value,
        ];
        for v in vals {
            prop_assert!(v.is_finite() && v >= 0.0, "{:?}", vals);
        }
    }

    #[test]
    fn pixelwise_losses_ignore_pixel_order(
        (p, scr, exp, perm) in dims().prop_flat_map(|(h, w)| {
            (map(h, w), scribble(h, w), binary(h, w), Just((0..h * w).collect::<Vec<_>>()).prop_shuffle())
        }),
    ) {
        let (h, w) = (p.height(), p.width());
        let pp = SaliencyMap::new(h, w, perm.iter().map(|&i| p.values()[i]).collect()).unwrap();
        let sp = ScribbleMap::new(h, w, perm.iter().map(|&i| scr.labels()[i]).collect()).unwrap();
        let ep = SaliencyMap::new(h, w, perm.iter().map(|&i| exp.values()[i]).collect()).unwrap();
        let exp = ExpandedLabel::from_binary_map(exp).unwrap();
        let ep = ExpandedLabel::from_binary_map(ep).unwrap();

        let a = l_pce(&p, &scr).unwrap().value;
        let b = l_pce(&pp, &sp).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        let a = l_ce_expanded(&p, &exp).unwrap().value;
        let b = l_ce_expanded(&pp, &ep).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn pixel_and_alignment_metrics_are_mirror_invariant(
        (p, g) in dims().prop_flat_map(|(h, w)| (map(h, w), binary(h, w))),
    ) {
        let (pm, gm) = (p.flip_horizontal(), g.flip_horizontal());
        let pairs = [
            (mae(&p, &g).unwrap(), mae(&pm, &gm).unwrap()),
            (f_beta(&p, &g).unwrap(), f_beta(&pm, &gm).unwrap()),
            (e_measure(&p, &g).unwrap(), e_measure(&pm, &gm).unwrap()),
        ];
        for (a, b) in pairs {
            prop_assert!((a - b).abs() < 1e-12, "{:?}", pairs);
        }
    }

    #[test]
    fn mae_of_complement_on_binary_gt(
        (p, g) in dims().prop_flat_map(|(h, w)| (map(h, w), binary(h, w))),
    ) {
        let inv = SaliencyMap::new(p.height(), p.width(), p.values().iter().map(|v| 1.0 - v).collect()).unwrap();
        let a = mae(&p, &g).unwrap();
        let b = mae(&inv, &g).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthetic_scribbles_respect_ground_truth(seed in any::<u64>(), index in 0usize..50) {
        let s = generate_sample(seed, index, 48, Profile::Mixed).unwrap();
        let again = generate_sample(seed, index, 48, Profile::Mixed).unwrap();
        prop_assert_eq!(&s.scribble, &again.scribble);
        prop_assert_eq!(&s.scene.gt, &again.scene.gt);
        for (&l, &g) in s.scribble.labels().iter().zip(s.scene.gt.values()) {
            if l == FOREGROUND {
                prop_assert_eq!(g, 1.0);
            }
            if l == BACKGROUND {
                prop_assert_eq!(g, 0.0);
            }
        }
    }
}
