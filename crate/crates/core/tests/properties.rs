//! Randomized invariants of I/O, labeling, metrics and box expansion.

use motionseg_core::eval::{dice, mae};
use motionseg_core::inference::{expand_bbox, InferenceConfig};
use motionseg_core::io::{
    decode_flow, decode_pgm, encode_flow, encode_pgm, read_frame, read_mask, write_frame,
    write_mask,
};
use motionseg_core::labeling::{mask_to_bbox, remove_small_components, threshold_flow};
use motionseg_core::{clamp_box, BoundingBox, FlowField, Frame, Mask};
use proptest::prelude::*;

fn flow_strategy() -> impl Strategy<Value = FlowField> {
    (1usize..20, 1usize..20).prop_flat_map(|(w, h)| {
        let n = w * h;
        (
            prop::collection::vec(-1e6f32..1e6, n),
            prop::collection::vec(
                prop::num::f32::NORMAL | prop::num::f32::ZERO | prop::num::f32::SUBNORMAL,
                n,
            ),
        )
            .prop_map(move |(u, v)| FlowField::new(w, h, u, v).unwrap())
    })
}

fn mask_strategy(w: usize, h: usize) -> impl Strategy<Value = Mask> {
    prop::collection::vec(any::<bool>(), w * h)
        .prop_map(move |bits| Mask::from_fn(w, h, |x, y| bits[y * w + x]))
}

fn mask_pair() -> impl Strategy<Value = (Mask, Mask)> {
    (1usize..16, 1usize..16).prop_flat_map(|(w, h)| (mask_strategy(w, h), mask_strategy(w, h)))
}

fn box_strategy(w: i32, h: i32) -> impl Strategy<Value = BoundingBox> {
    (0..w, 0..h).prop_flat_map(move |(x0, y0)| {
        (x0 + 1..=w, y0 + 1..=h).prop_map(move |(x1, y1)| BoundingBox { x0, y0, x1, y1 })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn flo_round_trip_is_bitwise(flow in flow_strategy()) {
        let bytes = encode_flow(&flow);
        prop_assert_eq!(bytes.len(), 12 + 8 * flow.width() * flow.height());
        let back = decode_flow(&bytes).unwrap();
        let bits = |f: &FlowField| f.u().iter().chain(f.v()).map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&flow));
        prop_assert_eq!((back.width(), back.height()), (flow.width(), flow.height()));
    }

    #[test]
    fn pgm_round_trip_is_exact(
        (w, h, samples, wide) in (1usize..24, 1usize..24, any::<bool>())
            .prop_flat_map(|(w, h, wide)| {
                let max = if wide { 65535u32 } else { 255 };
                (Just(w), Just(h), prop::collection::vec(0..=max, w * h), Just(wide))
            })
    ) {
        let maxval = if wide { 65535 } else { 255 };
        let data: Vec<f32> = samples.iter().map(|&s| (s as f64 / maxval as f64) as f32).collect();
        let bytes = encode_pgm(w, h, &data, maxval);
        let raster = decode_pgm(&bytes).unwrap();
        prop_assert_eq!(raster.maxval, maxval);
        prop_assert_eq!(&raster.data, &data);
        prop_assert_eq!(encode_pgm(w, h, &raster.data, maxval), bytes);
    }

    #[test]
    fn foreground_area_is_a_count(m in (1usize..30, 1usize..30).prop_flat_map(|(w, h)| mask_strategy(w, h))) {
        prop_assert_eq!(m.foreground_area(), m.data().iter().filter(|&&b| b == 1).count());
    }

    #[test]
    fn threshold_is_monotone(flow in flow_strategy(), t1 in 0.01f32..5.0, dt in 0.0f32..5.0) {
        let loose = threshold_flow(&flow, t1).unwrap();
        let strict = threshold_flow(&flow, t1 + dt).unwrap();
        prop_assert!(strict.is_subset_of(&loose));
    }

    #[test]
    fn component_filter_is_idempotent(
        m in (1usize..24, 1usize..24).prop_flat_map(|(w, h)| mask_strategy(w, h)),
        min_area in 0usize..12,
    ) {
        let once = remove_small_components(&m, min_area);
        prop_assert!(once.is_subset_of(&m));
        prop_assert_eq!(remove_small_components(&once, min_area), once.clone());
        prop_assert_eq!(remove_small_components(&m, 0), m);
    }

    #[test]
    fn bbox_is_tight(m in (1usize..24, 1usize..24).prop_flat_map(|(w, h)| mask_strategy(w, h))) {
        match mask_to_bbox(&m) {
            None => prop_assert!(m.is_empty()),
            Some(b) => {
                let pts: Vec<_> = m.iter_foreground().map(|(x, y)| (x as i32, y as i32)).collect();
                prop_assert!(pts.iter().all(|&(x, y)| b.contains(x, y)));
                prop_assert!(pts.iter().any(|&(x, _)| x == b.x0));
                prop_assert!(pts.iter().any(|&(x, _)| x == b.x1 - 1));
                prop_assert!(pts.iter().any(|&(_, y)| y == b.y0));
                prop_assert!(pts.iter().any(|&(_, y)| y == b.y1 - 1));
            }
        }
    }

    #[test]
    fn metrics_are_symmetric((p, g) in mask_pair()) {
        prop_assert_eq!(dice(&p, &g).unwrap(), dice(&g, &p).unwrap());
        prop_assert_eq!(mae(&p, &g).unwrap(), mae(&g, &p).unwrap());
        let d = dice(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(mae(&p, &g).unwrap() == 0.0, p == g);
        if !p.is_empty() && !g.is_empty() {
            prop_assert_eq!(d == 1.0, p == g);
        }
    }

    #[test]
    fn metrics_ignore_a_shared_permutation((p, g) in mask_pair(), seed in any::<u64>()) {
        let n = p.data().len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let w = p.width();
        let perm = |m: &Mask| Mask::from_fn(w, m.height(), |x, y| m.data()[order[y * w + x]] == 1);
        prop_assert_eq!(dice(&perm(&p), &perm(&g)).unwrap(), dice(&p, &g).unwrap());
        prop_assert_eq!(mae(&perm(&p), &perm(&g)).unwrap(), mae(&p, &g).unwrap());
    }

    #[test]
    fn expansion_is_monotone_and_saturates(b in box_strategy(120, 90), base in 0.05f64..1.0) {
        let cfg = InferenceConfig { expansion_base: base, ..InferenceConfig::default() };
        let mut prev = b;
        for s in 1..=12 {
            let next = expand_bbox(b, s, &cfg, 120, 90);
            prop_assert!(next.contains_box(&prev), "s {}: {:?} does not contain {:?}", s, next, prev);
            prop_assert!(BoundingBox::full(120, 90).contains_box(&next));
            prev = next;
        }
        let huge = expand_bbox(b, 10_000, &cfg, 120, 90);
        prop_assert_eq!(huge, BoundingBox::full(120, 90));
    }

    #[test]
    fn clamped_boxes_stay_inside(x0 in -50i32..50, y0 in -50i32..50, w in 1i32..60, h in 1i32..60) {
        let b = clamp_box(BoundingBox { x0, y0, x1: x0 + w, y1: y0 + h }, 32, 24).unwrap();
        prop_assert!(BoundingBox::full(32, 24).contains_box(&b));
        prop_assert!(b.area() >= 1);
    }
}

#[test]
fn frame_and_mask_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let frame = Frame::from_fn(12, 9, |x, y| ((x * 7 + y * 13) % 256) as f32 / 255.0).unwrap();
    for name in ["f.pgm", "f.png"] {
        let p = dir.path().join(name);
        write_frame(&frame, &p).unwrap();
        let back = read_frame(&p).unwrap();
        assert_eq!(back, frame);
        write_frame(&back, &p).unwrap();
        assert_eq!(read_frame(&p).unwrap(), frame);
    }
    let mask = Mask::from_fn(12, 9, |x, y| (x + y) % 3 == 0);
    let p = dir.path().join("m.png");
    write_mask(&mask, &p).unwrap();
    assert_eq!(read_mask(&p).unwrap(), mask);
}

#[test]
fn tiny_pgm_rescales_linearly() {
    let raster = decode_pgm(b"P5\n2 2\n255\n\x00\xff\x80\x40").unwrap();
    assert_eq!(raster.data, vec![0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
}

#[test]
fn flo_zero_flow_and_bad_magic() {
    let bytes = encode_flow(&FlowField::zeros(1, 1));
    assert_eq!(bytes.len(), 20);
    assert_eq!(&bytes[..4], b"PIEH");
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    assert!(decode_flow(&bad).is_err());
    assert!(decode_flow(&bytes[..16]).is_err());
}

#[test]
fn clamp_box_examples() {
    let b = |x0, y0, x1, y1| BoundingBox { x0, y0, x1, y1 };
    assert_eq!(clamp_box(b(-5, -5, 10, 10), 8, 8).unwrap(), b(0, 0, 8, 8));
    assert_eq!(clamp_box(b(1, 1, 4, 4), 8, 8).unwrap(), b(1, 1, 4, 4));
    assert_eq!(clamp_box(b(20, 20, 30, 30), 8, 8).unwrap(), b(0, 0, 8, 8));
    assert!(clamp_box(b(3, 3, 3, 5), 8, 8).is_err());
}
