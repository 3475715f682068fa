//! Flow estimators on textures with known constant motion.

use motionseg_core::eval::endpoint_error;
use motionseg_core::flow::{
    block_matching_flow, build_cost_volume, correlate, farneback_flow, flow_sequence,
    normalized_cost_volume, pad_reflect, CorrelationParams, FlowBackend, FlowParams,
};
use motionseg_core::synth::{
    constant_shift_pair, random_texture, random_texture_with_grain, shift_frame,
};
use motionseg_core::{Frame, Sequence, SequenceKind};

/// Pixels this close to the border are excluded from flow scores.
const MARGIN: usize = 8;

#[test]
fn farneback_recovers_constant_shifts() {
    let shifts = [
        (1.0, 0.0),
        (0.5, -0.5),
        (-2.0, 1.5),
        (3.0, -3.0),
        (-1.5, 2.5),
    ];
    for seed in 0..8u64 {
        let (dx, dy) = shifts[seed as usize % shifts.len()];
        let (a, b, gt) = constant_shift_pair(seed, 96, 96, dx, dy).unwrap();
        let flow = farneback_flow(&a, &b, &FlowParams::default()).unwrap();
        let epe = endpoint_error(&flow, &gt, MARGIN).unwrap();
        assert!(epe < 0.3, "seed {seed} shift ({dx}, {dy}): EPE {epe}");
    }
}

#[test]
fn pyramid_is_needed_for_large_motion_on_fine_texture() {
    let single = FlowParams {
        pyramid_levels: 1,
        ..FlowParams::default()
    };
    for seed in 0..3u64 {
        let a = random_texture_with_grain(seed, 128, 128, 0.4).unwrap();
        let b = shift_frame(&a, 3.0, 0.0);
        let gt = motionseg_core::FlowField::constant(128, 128, 3.0, 0.0).unwrap();
        let coarse = endpoint_error(
            &farneback_flow(&a, &b, &FlowParams::default()).unwrap(),
            &gt,
            MARGIN,
        )
        .unwrap();
        let flat = endpoint_error(&farneback_flow(&a, &b, &single).unwrap(), &gt, MARGIN).unwrap();
        assert!(coarse < 0.3, "three levels: {coarse}");
        assert!(flat > 0.5, "one level: {flat}");
    }
}

#[test]
fn block_matching_exact_on_integer_shifts() {
    let params = CorrelationParams {
        k: 2,
        d: 3,
        subpixel: false,
    };
    for (seed, (dx, dy)) in [(2.0, -1.0), (0.0, 3.0), (-3.0, -3.0), (1.0, 1.0)]
        .into_iter()
        .enumerate()
    {
        let (a, b, gt) = constant_shift_pair(seed as u64, 48, 48, dx, dy).unwrap();
        let flow = block_matching_flow(&a, &b, &params).unwrap();
        assert_eq!(
            endpoint_error(&flow, &gt, MARGIN).unwrap(),
            0.0,
            "shift ({dx}, {dy})"
        );
    }
}

#[test]
fn block_matching_self_match() {
    let f = random_texture(3, 32, 32).unwrap();
    let off = CorrelationParams {
        k: 2,
        d: 2,
        subpixel: false,
    };
    let flow = block_matching_flow(&f, &f, &off).unwrap();
    assert!(flow.u().iter().chain(flow.v()).all(|&x| x == 0.0));
    let on = CorrelationParams {
        subpixel: true,
        ..off
    };
    let flow = block_matching_flow(&f, &f, &on).unwrap();
    assert!(flow.u().iter().chain(flow.v()).all(|&x| x.abs() <= 0.5));
}

#[test]
fn block_matching_constant_frames_give_zero_flow() {
    let f = Frame::constant(16, 16, 0.4).unwrap();
    let flow = block_matching_flow(&f, &f, &CorrelationParams::default()).unwrap();
    assert!(flow.u().iter().chain(flow.v()).all(|&x| x == 0.0));
}

#[test]
fn cost_volume_matches_correlate_on_padded_frames() {
    let params = CorrelationParams {
        k: 2,
        d: 2,
        subpixel: false,
    };
    let f1 = random_texture(8, 20, 20).unwrap();
    let f2 = random_texture(9, 20, 20).unwrap();
    let vol = build_cost_volume(&f1, &f2, &params).unwrap();
    assert_eq!(vol.scores_at(0, 0).len(), 25);
    let r = params.k + params.d;
    let (p1, p2) = (pad_reflect(&f1, r), pad_reflect(&f2, r));
    for y in 0..20 {
        for x in 0..20 {
            for dy in -2..=2isize {
                for dx in -2..=2isize {
                    let c = (x as isize + r as isize, y as isize + r as isize);
                    let want = correlate(&p1, &p2, c, (c.0 + dx, c.1 + dy), params.k).unwrap();
                    assert_eq!(vol.score(x, y, dx, dy), want);
                }
            }
        }
    }
}

#[test]
fn self_correlation_dominates_normalized_volume() {
    let params = CorrelationParams {
        k: 2,
        d: 2,
        subpixel: false,
    };
    let f = random_texture(4, 32, 32).unwrap();
    let vol = normalized_cost_volume(&f, &f, &params).unwrap();
    for y in 0..32 {
        for x in 0..32 {
            let zero = vol.score(x, y, 0, 0);
            assert!(vol.scores_at(x, y).iter().all(|&s| s <= zero));
        }
    }
}

#[test]
fn shifted_volume_argmax_is_the_shift() {
    let params = CorrelationParams {
        k: 2,
        d: 3,
        subpixel: false,
    };
    let (a, b, _) = constant_shift_pair(6, 40, 40, -2.0, 1.0).unwrap();
    let vol = normalized_cost_volume(&a, &b, &params).unwrap();
    for y in MARGIN..40 - MARGIN {
        for x in MARGIN..40 - MARGIN {
            let best = (-3..=3isize)
                .flat_map(|dy| (-3..=3isize).map(move |dx| (dx, dy)))
                .max_by(|p, q| {
                    vol.score(x, y, p.0, p.1)
                        .total_cmp(&vol.score(x, y, q.0, q.1))
                })
                .unwrap();
            assert_eq!(best, (-2, 1));
        }
    }
}

#[test]
fn estimators_are_translation_equivariant() {
    let f = random_texture(10, 96, 96).unwrap();
    let g = shift_frame(&f, 2.0, 1.0);
    let h = shift_frame(&g, 2.0, 1.0);
    let backends = [
        FlowBackend::Farneback(FlowParams::default()),
        FlowBackend::BlockMatching(CorrelationParams::default()),
    ];
    for backend in backends {
        let first = backend.estimate(&f, &g).unwrap();
        let second = backend.estimate(&g, &h).unwrap();
        let diff = endpoint_error(&first, &second, 2 * MARGIN).unwrap();
        assert!(diff < 0.1, "{backend:?}: {diff}");
    }
}

#[test]
fn estimators_are_deterministic() {
    let (a, b, _) = constant_shift_pair(12, 64, 64, 1.5, -0.5).unwrap();
    for backend in [
        FlowBackend::Farneback(FlowParams::default()),
        FlowBackend::BlockMatching(CorrelationParams {
            subpixel: true,
            ..Default::default()
        }),
    ] {
        let x = backend.estimate(&a, &b).unwrap();
        let y = backend.estimate(&a, &b).unwrap();
        assert_eq!(x, y);
    }
}

#[test]
fn static_sequence_has_no_flow() {
    let f = random_texture(1, 32, 32).unwrap();
    let seq = Sequence::new("static", SequenceKind::Synthetic, vec![f; 10], None).unwrap();
    let flows = flow_sequence(&seq, &FlowBackend::default()).unwrap();
    assert_eq!(flows.len(), 9);
    for flow in &flows {
        let (mu, mv) = flow.mean_abs();
        assert!(mu < 1e-6 && mv < 1e-6);
    }
    let two = Sequence::new(
        "two",
        SequenceKind::Synthetic,
        seq.frames()[..2].to_vec(),
        None,
    )
    .unwrap();
    assert_eq!(
        flow_sequence(&two, &FlowBackend::default()).unwrap().len(),
        1
    );
}
