//! Library results checked against independent, naive re-implementations.

use motionseg_core::eval::{dice, endpoint_error, mae};
use motionseg_core::flow::correlate;
use motionseg_core::labeling::{remove_small_components, threshold_flow};
use motionseg_core::synth::{random_texture, shift_frame};
use motionseg_core::{FlowField, Frame, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL_TOL: f64 = 1e-12;

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Frame {
    Frame::from_fn(w, h, |_, _| rng.gen::<f32>()).unwrap()
}

fn random_flow(rng: &mut ChaCha8Rng, w: usize, h: usize, scale: f32) -> FlowField {
    let n = w * h;
    let u = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    let v = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    FlowField::new(w, h, u, v).unwrap()
}

fn brute_correlate(
    f1: &Frame,
    f2: &Frame,
    x1: (usize, usize),
    x2: (usize, usize),
    k: usize,
) -> f64 {
    let k = k as isize;
    let mut sum = 0.0f64;
    for oy in -k..=k {
        for ox in -k..=k {
            let a = f1.get((x1.0 as isize + ox) as usize, (x1.1 as isize + oy) as usize) as f64;
            let b = f2.get((x2.0 as isize + ox) as usize, (x2.1 as isize + oy) as usize) as f64;
            sum += a * b;
        }
    }
    sum
}

#[test]
fn correlate_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let k = rng.gen_range(1..=3usize);
        let f1 = random_frame(&mut rng, 16, 16);
        let f2 = random_frame(&mut rng, 16, 16);
        let x1 = (rng.gen_range(k..16 - k), rng.gen_range(k..16 - k));
        let x2 = (rng.gen_range(k..16 - k), rng.gen_range(k..16 - k));
        let got = correlate(
            &f1,
            &f2,
            (x1.0 as isize, x1.1 as isize),
            (x2.0 as isize, x2.1 as isize),
            k,
        )
        .unwrap();
        let want = brute_correlate(&f1, &f2, x1, x2, k);
        assert!(rel_err(got, want) < REL_TOL, "{got} vs {want}");
    }
}

#[test]
fn correlate_constant_and_zero_patches() {
    let ones = Frame::constant(8, 8, 1.0).unwrap();
    let zeros = Frame::constant(8, 8, 0.0).unwrap();
    assert_eq!(correlate(&ones, &ones, (3, 3), (4, 4), 1).unwrap(), 9.0);
    assert_eq!(correlate(&ones, &zeros, (3, 3), (4, 4), 2).unwrap(), 0.0);
}

#[test]
fn correlate_rejects_patch_outside_frame() {
    let f = Frame::constant(8, 8, 0.5).unwrap();
    let err = correlate(&f, &f, (0, 3), (3, 3), 1).unwrap_err();
    assert!(err.to_string().contains("(0, 3)"), "{err}");
    assert!(correlate(&f, &f, (3, 3), (7, 3), 1).is_err());
}

#[test]
fn correlate_symmetric_and_bilinear() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let f1 = random_frame(&mut rng, 12, 12);
        let f2 = random_frame(&mut rng, 12, 12);
        let doubled = Frame::from_fn(12, 12, |x, y| f1.get(x, y) / 2.0).unwrap();
        let x1 = (rng.gen_range(2..10), rng.gen_range(2..10));
        let x2 = (rng.gen_range(2..10), rng.gen_range(2..10));
        let a = correlate(&f1, &f2, x1, x2, 2).unwrap();
        let b = correlate(&f2, &f1, x2, x1, 2).unwrap();
        assert!(rel_err(a, b) < REL_TOL);
        // halving f1 halves the score (f32 halving is exact)
        let half = correlate(&doubled, &f2, x1, x2, 2).unwrap();
        assert!(rel_err(2.0 * half, a) < REL_TOL);
    }
}

#[test]
fn threshold_matches_per_pixel_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for t in [0.2f32, 1.0] {
        for _ in 0..50 {
            let flow = random_flow(&mut rng, 16, 16, 2.0);
            let mask = threshold_flow(&flow, t).unwrap();
            for y in 0..16 {
                for x in 0..16 {
                    let (u, v) = flow.at(x, y);
                    assert_eq!(mask.get(x, y), u.abs() > t || v.abs() > t);
                }
            }
        }
    }
}

#[test]
fn threshold_boundary_is_strict() {
    let mut u = vec![0.0f32; 64];
    u[9] = 0.2;
    u[10] = 0.5;
    let flow = FlowField::new(8, 8, u, vec![0.0; 64]).unwrap();
    let mask = threshold_flow(&flow, 0.2).unwrap();
    assert!(!mask.get(1, 1));
    assert!(mask.get(2, 1));
    assert_eq!(mask.foreground_area(), 1);
}

/// Component sizes by stack flood fill with 8-connectivity.
fn flood_fill_keep(mask: &Mask, min_area: usize) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut keep = vec![false; w * h];
    for start in 0..w * h {
        if seen[start] || mask.data()[start] == 0 {
            continue;
        }
        let mut comp = vec![];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(p) = stack.pop() {
            comp.push(p);
            let (x, y) = ((p % w) as isize, (p / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if !seen[q] && mask.data()[q] == 1 {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        if comp.len() >= min_area {
            for p in comp {
                keep[p] = true;
            }
        }
    }
    Mask::from_fn(w, h, |x, y| keep[y * w + x])
}

#[test]
fn small_components_match_flood_fill() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let density = rng.gen_range(0.05..0.6);
        let mask = Mask::from_fn(24, 24, |_, _| rng.gen_bool(density));
        let min_area = rng.gen_range(0..20);
        assert_eq!(
            remove_small_components(&mask, min_area),
            flood_fill_keep(&mask, min_area)
        );
    }
}

#[test]
fn components_of_five_and_fifty() {
    let mask = Mask::from_fn(32, 32, |x, y| {
        (x < 5 && y == 0) || ((10..20).contains(&x) && (10..15).contains(&y))
    });
    let kept = remove_small_components(&mask, 10);
    assert_eq!(kept.foreground_area(), 50);
    assert_eq!(kept, flood_fill_keep(&mask, 10));
    assert!(!kept.get(0, 0));
}

fn bilinear(f: &Frame, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (ax, ay) = (x - x0, y - y0);
    let p = |xx: f64, yy: f64| f.get(xx as usize, yy as usize) as f64;
    (1.0 - ay) * ((1.0 - ax) * p(x0, y0) + ax * p(x0 + 1.0, y0))
        + ay * ((1.0 - ax) * p(x0, y0 + 1.0) + ax * p(x0 + 1.0, y0 + 1.0))
}

#[test]
fn half_pixel_shift_is_bilinear() {
    let src = random_texture(5, 32, 32).unwrap();
    let shifted = shift_frame(&src, 1.5, -0.5);
    for y in 4..28 {
        for x in 4..28 {
            let want = bilinear(&src, x as f64 - 1.5, y as f64 + 0.5);
            assert!((shifted.get(x, y) as f64 - want).abs() < 1e-6);
        }
    }
}

#[test]
fn endpoint_error_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for margin in [0usize, 3] {
        for _ in 0..20 {
            let a = random_flow(&mut rng, 20, 18, 4.0);
            let b = random_flow(&mut rng, 20, 18, 4.0);
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for y in margin..18 - margin {
                for x in margin..20 - margin {
                    let (u, v) = a.at(x, y);
                    let (us, vs) = b.at(x, y);
                    sum += ((u as f64 - us as f64).powi(2) + (v as f64 - vs as f64).powi(2)).sqrt();
                    n += 1;
                }
            }
            let got = endpoint_error(&a, &b, margin).unwrap();
            assert!(rel_err(got, sum / n as f64) < REL_TOL);
        }
    }
}

#[test]
fn endpoint_error_three_four_five() {
    let a = FlowField::constant(8, 8, 3.0, 4.0).unwrap();
    let z = FlowField::zeros(8, 8);
    assert_eq!(endpoint_error(&a, &z, 0).unwrap(), 5.0);
    assert_eq!(endpoint_error(&a, &a, 0).unwrap(), 0.0);
}

#[test]
fn dice_and_mae_against_set_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..200 {
        let p = Mask::from_fn(10, 10, |_, _| rng.gen_bool(0.3));
        let g = Mask::from_fn(10, 10, |_, _| rng.gen_bool(0.3));
        let (mut both, mut only_p, mut only_g) = (0usize, 0usize, 0usize);
        for (&a, &b) in p.data().iter().zip(g.data()) {
            match (a, b) {
                (1, 1) => both += 1,
                (1, 0) => only_p += 1,
                (0, 1) => only_g += 1,
                _ => {}
            }
        }
        let sizes = p.foreground_area() + g.foreground_area();
        let want_dice = if sizes == 0 {
            1.0
        } else {
            2.0 * both as f64 / sizes as f64
        };
        assert_eq!(dice(&p, &g).unwrap(), want_dice);
        assert_eq!(mae(&p, &g).unwrap(), (only_p + only_g) as f64 / 100.0);
    }
}
