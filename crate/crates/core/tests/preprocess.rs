mod common;

use std::path::Path;

use common::rng;
use neuroscatter::preprocess::*;
use neuroscatter::sim::{generate_sample, Edge, Event, EventStream, SimConfig, Trigger};
use neuroscatter::Error;
use proptest::prelude::*;
use rand::Rng;

fn ev(t: u64, x: u16, y: u16, p: i8) -> Event {
    Event { t, x, y, p }
}

fn stream(w: u16, h: u16, end: u64, events: Vec<Event>) -> EventStream {
    EventStream {
        triggers: vec![Trigger { t: 0, edge: Edge::Rising }, Trigger { t: end, edge: Edge::Falling }],
        ..EventStream::new(w, h)
    }
    .with_events(events)
}

/// True iff `sub` is an order-preserving subsequence of `sup`.
fn is_subsequence(sub: &[Event], sup: &[Event]) -> bool {
    let mut it = sup.iter();
    sub.iter().all(|e| it.any(|s| s == e))
}

fn random_events(seed: u64, n: usize, w: u16, h: u16, t_max: u64) -> Vec<Event> {
    let mut r = rng(seed);
    let mut v: Vec<Event> = (0..n)
        .map(|_| {
            ev(
                r.random_range(0..t_max),
                r.random_range(0..w),
                r.random_range(0..h),
                if r.random_bool(0.5) { 1 } else { -1 },
            )
        })
        .collect();
    v.sort_by_key(|e| e.t);
    v
}

fn all_filters() -> PreprocessConfig {
    PreprocessConfig {
        roi: Some(Roi { x0: 2, y0: 1, x1: 30, y1: 31 }),
        activity: Some(ActivityFilterConfig { window_us: 3_000, neighborhood: 3 }),
        stc: Some(StcFilterConfig { window_us: 8_000 }),
        antiflicker: Some(AntiflickerConfig::default()),
        insect_eye: InsectEyeConfig { field: 2, threshold: 2, window_us: 5_000 },
        bin_count: 6,
        bin_mode: BinMode::Count,
        out_h: 16,
        out_w: 16,
    }
}

#[test]
fn roi_keeps_inside_and_rebases() {
    let evs = vec![ev(0, 0, 0, 1), ev(1, 3, 4, -1), ev(2, 5, 4, 1), ev(3, 4, 6, 1)];
    let out = roi_filter(&evs, Roi { x0: 3, y0: 4, x1: 5, y1: 6 });
    assert_eq!(out, vec![ev(1, 0, 0, -1)]);
    assert!(Roi { x0: 3, y0: 4, x1: 3, y1: 6 }.validate(10, 10).is_err());
    assert!(Roi { x0: 0, y0: 0, x1: 11, y1: 6 }.validate(10, 10).is_err());
}

#[test]
fn activity_filter_hand_trace() {
    let mut f = ActivityFilter::new(ActivityFilterConfig { window_us: 5_000, neighborhood: 3 }, 8, 8).unwrap();
    let evs = vec![
        ev(0, 1, 1, 1),      // isolated, dropped
        ev(100, 2, 1, -1),   // neighbour fired 100 us ago
        ev(200, 5, 5, 1),    // isolated
        ev(10_000, 1, 1, 1), // neighbours are stale
        ev(10_400, 1, 1, 1), // own pixel counts
    ];
    assert_eq!(f.process(&evs), vec![evs[1], evs[4]]);
    assert!(ActivityFilter::new(ActivityFilterConfig { window_us: 1, neighborhood: 2 }, 8, 8).is_err());
}

#[test]
fn stc_filter_hand_trace() {
    let cfg = StcFilterConfig { window_us: 1_000 };
    let alternating: Vec<Event> = (0..6).map(|i| ev(i * 100, 0, 0, if i % 2 == 0 { 1 } else { -1 })).collect();
    assert!(StcFilter::new(cfg, 2, 2).unwrap().process(&alternating).is_empty());
    let pair = vec![ev(0, 1, 1, -1), ev(500, 1, 1, -1), ev(2_000, 1, 1, -1)];
    assert_eq!(StcFilter::new(cfg, 2, 2).unwrap().process(&pair), vec![pair[1]]);
}

#[test]
fn antiflicker_mutes_in_band_alternation() {
    let cfg = AntiflickerConfig { low_hz: 50.0, high_hz: 500.0 };
    // 100 Hz flicker: polarity flips every 5 ms.
    let flicker: Vec<Event> = (0..8).map(|i| ev(i * 5_000, 3, 3, if i % 2 == 0 { 1 } else { -1 })).collect();
    let kept = AntiflickerFilter::new(cfg, 8, 8).unwrap().process(&flicker);
    assert_eq!(kept, flicker[..FLICKER_RUN as usize].to_vec());
    // 2 kHz alternation is above the band.
    let fast: Vec<Event> = (0..8).map(|i| ev(i * 250, 3, 3, if i % 2 == 0 { 1 } else { -1 })).collect();
    assert_eq!(AntiflickerFilter::new(cfg, 8, 8).unwrap().process(&fast), fast);
    // Silence clears the run.
    let mut gap = flicker.clone();
    gap.extend((0..3).map(|i| ev(200_000 + i * 5_000, 3, 3, if i % 2 == 0 { 1 } else { -1 })));
    let kept = AntiflickerFilter::new(cfg, 8, 8).unwrap().process(&gap);
    assert_eq!(kept.len(), FLICKER_RUN as usize + 3);
}

#[test]
fn insect_eye_counter_traces() {
    let id = InsectEyeConfig { field: 1, threshold: 1, window_us: 10 };
    let evs = random_events(1, 50, 6, 6, 1_000);
    assert_eq!(InsectEye::new(id, 6, 6).unwrap().process(&evs), evs);

    let k3 = InsectEyeConfig { field: 2, threshold: 3, window_us: 1_000 };
    let five: Vec<Event> = (0..5).map(|i| ev(i * 10, (i % 2) as u16, (i / 2 % 2) as u16, 1)).collect();
    let out = InsectEye::new(k3, 4, 4).unwrap().process(&five);
    assert_eq!(out, vec![ev(20, 0, 0, 1)], "⌊5/3⌋ = 1 output at the triggering time");

    let stale = vec![ev(0, 2, 2, -1), ev(10, 3, 3, -1), ev(5_000, 2, 3, -1)];
    assert!(InsectEye::new(k3, 4, 4).unwrap().process(&stale).is_empty());
    assert_eq!(k3.out_dims(5, 4), (3, 2));
    let out = InsectEye::new(InsectEyeConfig { field: 2, ..id }, 5, 5).unwrap().process(&random_events(2, 100, 5, 5, 1_000));
    assert!(out.iter().all(|e| e.x < 3 && e.y < 3));
}

#[test]
fn binning_index_arithmetic() {
    let s = stream(4, 4, 18_000, vec![ev(9_000, 1, 2, 1)]);
    let t = bin_to_tensor(&s, 18, BinMode::Binary, 4, 4).unwrap();
    let nz: Vec<usize> = t.data.data().iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect();
    assert_eq!(nz, vec![((9 * 2) * 4 + 2) * 4 + 1]);

    let empty = bin_to_tensor(&stream(4, 4, 100, vec![]), 3, BinMode::Count, 4, 4).unwrap();
    assert!(empty.data.data().iter().all(|&v| v == 0.0));

    let b = Binner::new(4, BinMode::Count, 1, 1, (100, 500)).unwrap();
    assert_eq!(b.bin_of(99), None);
    assert_eq!(b.bin_of(100), Some(0));
    assert_eq!(b.bin_of(199), Some(0));
    assert_eq!(b.bin_of(200), Some(1));
    assert_eq!(b.bin_of(499), Some(3));
    assert_eq!(b.bin_of(500), None);

    let twice = stream(2, 2, 10, vec![ev(1, 0, 0, -1), ev(2, 0, 0, -1)]);
    assert_eq!(bin_to_tensor(&twice, 1, BinMode::Binary, 2, 2).unwrap().data.sum(), 1.0);
    assert_eq!(bin_to_tensor(&twice, 1, BinMode::Count, 2, 2).unwrap().data.data()[4], 2.0);

    let no_trigger = EventStream::new(2, 2);
    assert!(matches!(bin_to_tensor(&no_trigger, 1, BinMode::Binary, 2, 2), Err(Error::Format { .. })));
    assert!(bin_to_tensor(&twice, 1, BinMode::Binary, 1, 1).is_err());
}

#[test]
fn passthrough_equals_roi_then_bin() {
    let s = stream(20, 20, 50_000, random_events(3, 800, 20, 20, 50_000));
    let roi = Roi { x0: 4, y0: 2, x1: 16, y1: 18 };
    let cfg = PreprocessConfig { roi: Some(roi), ..PreprocessConfig::passthrough(5, 16, 16) };
    let (got, report) = preprocess(&s, &cfg).unwrap();
    let cropped = EventStream { width: 12, height: 16, ..s.with_events(roi_filter(&s.events, roi)) };
    let want = bin_to_tensor(&cropped, 5, BinMode::Count, 16, 16).unwrap();
    assert_eq!(got.data, want.data);
    assert_eq!(report.binned, report.roi);
}

#[test]
fn filters_compose_in_order_and_only_remove() {
    let sample = generate_sample(&SimConfig { sensor_width: 32, sensor_height: 32, glyph_size: 12, n_frames: 30, step_max: 0.05, ..SimConfig::default() }, &[], 6).unwrap();
    let cfg = all_filters();
    let st = stage_outputs(&sample.stream, &cfg).unwrap();
    assert!(is_subsequence(&st.activity, &st.roi));
    assert!(is_subsequence(&st.stc, &st.activity));
    assert!(is_subsequence(&st.antiflicker, &st.stc));
    let (t, report) = preprocess(&sample.stream, &cfg).unwrap();
    assert_eq!(
        report.as_array()[1..6],
        [st.roi.len(), st.activity.len(), st.stc.len(), st.antiflicker.len(), st.insect_eye.len()]
    );
    assert!(report.as_array().windows(2).all(|w| w[0] >= w[1]), "{report:?}");
    assert_eq!(t.data.sum() as usize, report.binned);
    assert_eq!(report.binned, st.insect_eye.len());
    assert!(report.binned > 0, "{report:?}");
}

#[test]
fn config_validation() {
    let cfg = PreprocessConfig::passthrough(4, 8, 8);
    assert!(cfg.validate(8, 8).is_ok());
    assert!(cfg.validate(9, 8).is_err(), "output too small");
    assert!(PreprocessConfig { bin_count: 0, ..cfg.clone() }.validate(8, 8).is_err());
    let eye = InsectEyeConfig { field: 0, ..cfg.insect_eye };
    assert!(PreprocessConfig { insect_eye: eye, ..cfg }.validate(8, 8).is_err());
}

#[test]
fn spt_round_trip() {
    let s = stream(16, 16, 30_000, random_events(4, 300, 16, 16, 30_000));
    let (mut t, _) = preprocess(&s, &PreprocessConfig::passthrough(3, 16, 16)).unwrap();
    t.id = "s00001".into();
    t.config_hash = 0xfeed;
    let bytes = t.to_bytes();
    let back = SpikeTensor::from_bytes(&bytes, Path::new("x.spt")).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.step(1).unwrap().shape(), &[2, 16, 16]);
    assert!(SpikeTensor::from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
    let mut bad = bytes;
    bad[..8].copy_from_slice(b"NOTSPIKE");
    assert!(matches!(SpikeTensor::from_bytes(&bad, Path::new("x")), Err(Error::Format { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_filters_are_ordered_subsets(seed in 0u64..10_000, n in 0usize..400) {
        let evs = random_events(seed, n, 12, 12, 40_000);
        let outs = [
            ActivityFilter::new(ActivityFilterConfig::default(), 12, 12).unwrap().process(&evs),
            StcFilter::new(StcFilterConfig::default(), 12, 12).unwrap().process(&evs),
            AntiflickerFilter::new(AntiflickerConfig::default(), 12, 12).unwrap().process(&evs),
        ];
        for out in &outs {
            prop_assert!(is_subsequence(out, &evs));
        }
        let eye = InsectEye::new(InsectEyeConfig { field: 3, threshold: 2, window_us: 4_000 }, 12, 12).unwrap().process(&evs);
        prop_assert!(eye.len() <= evs.len());
        prop_assert!(eye.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn prop_binning_partitions_events(seed in 0u64..10_000, n in 0usize..500, t in 1usize..20) {
        let end = 37_001;
        let evs = random_events(seed, n, 9, 7, end);
        let s = stream(9, 7, end, evs.clone());
        let b = Binner::new(t, BinMode::Count, 7, 9, (0, end)).unwrap();
        let mut hits = vec![0usize; t * 2 * 7 * 9];
        for e in &evs {
            hits[b.cell_of(e).expect("every in-interval event has a cell")] += 1;
        }
        let tensor = bin_to_tensor(&s, t, BinMode::Count, 7, 9).unwrap();
        prop_assert_eq!(tensor.data.sum() as usize, n);
        for (h, v) in hits.iter().zip(tensor.data.data()) {
            prop_assert_eq!(*h as f32, *v);
        }
    }

    #[test]
    fn prop_chunked_equals_whole(seed in 0u64..10_000, cuts in prop::collection::vec(0usize..600, 0..6)) {
        let s = stream(32, 32, 60_000, random_events(seed, 600, 32, 32, 60_000));
        let cfg = all_filters();
        let whole = preprocess(&s, &cfg).unwrap();
        let mut cuts = cuts;
        cuts.sort();
        let mut p = Pipeline::new(&cfg, &s).unwrap();
        let mut start = 0;
        for c in cuts.into_iter().chain([s.events.len()]) {
            p.push(&s.events[start..c.max(start)]);
            start = c.max(start);
        }
        prop_assert_eq!(p.finish(""), whole);
    }
}
