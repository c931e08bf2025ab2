use peoplecount_core::background::{mode_of, BackgroundModel, ForegroundParams};
use peoplecount_core::dataset::{decode_rgbp, encode_rgbp};
use peoplecount_core::frame::*;
use proptest::prelude::*;

fn reference_bilinear(src: &RawFrame, w: usize, h: usize) -> Vec<f64> {
    let sample = |n: usize, m: usize, d: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * n as f64 / m as f64 - 0.5)
            .max(0.0)
            .min((n - 1) as f64);
        let i = s.floor() as usize;
        (i, (i + 1).min(n - 1), s - i as f64)
    };
    let mut out = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let (y0, y1, fy) = sample(src.height, h, y);
        for x in 0..w {
            let (x0, x1, fx) = sample(src.width, w, x);
            for c in 0..3 {
                let at = |xx: usize, yy: usize| src.pixels[(yy * src.width + xx) * 3 + c] as f64;
                let v = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x1, y0))
                    + fy * ((1.0 - fx) * at(x0, y1) + fx * at(x1, y1));
                out.push(v);
            }
        }
    }
    out
}

#[test]
fn checkerboard_matches_reference_bilinear() {
    let (w, h) = (1280, 720);
    let mut px = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let on = ((x / 7) + (y / 5)) % 2 == 0;
            px.extend_from_slice(&if on { [250, 30, 120] } else { [10, 200, 60] });
        }
    }
    let src = RawFrame::new(w, h, px, 0, 0).unwrap();
    let out = resample(&src).unwrap();
    assert_eq!(out.dims(), (FRAME_WIDTH, FRAME_HEIGHT));
    let want = reference_bilinear(&src, FRAME_WIDTH, FRAME_HEIGHT);
    let worst = out
        .pixels
        .iter()
        .zip(&want)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1.0, "max deviation {worst}");
}

#[test]
fn quantize_examples() {
    assert_eq!(quantize_pixel([0, 0, 0], 4), 0);
    assert_eq!(quantize_pixel([255, 255, 255], 4), 63);
    assert_eq!(quantize_pixel([128, 64, 200], 4), 39);
    let [r, g, b] = dequantize_code(39, 4).unwrap();
    assert_eq!((r, g, b), (2.0 / 3.0, 1.0 / 3.0, 1.0));
    assert!(dequantize_code(64, 4).is_err());
}

#[test]
fn window_examples() {
    let frames: Vec<RgbpFrame> = (0..50u64)
        .map(|i| {
            let rgb = RawFrame::filled(4, 3, [1, 2, 3]).with_position(i, i * 50);
            assemble_rgbp(rgb, PChannel::empty(4, 3)).unwrap()
        })
        .collect();
    let seqs = peoplecount_core::window::window(&frames, 9, 5).unwrap();
    let ends: Vec<u64> = seqs.iter().map(|s| s.last().index()).collect();
    assert_eq!(ends, vec![40, 45]);
    let singles = peoplecount_core::window::window(&frames, 1, 1).unwrap();
    assert_eq!(singles.len(), 50);
}

#[test]
fn foreground_rule_examples() {
    let p = ForegroundParams::default();
    assert!(p.is_foreground(63, 0, 4).unwrap());
    assert!(!p.is_foreground(17, 17, 4).unwrap());
    let mut m = BackgroundModel::new(2, 2, 4, 3, 0.8).unwrap();
    let q = quantize(&RawFrame::filled(2, 2, [9, 99, 199]), 4).unwrap();
    assert!(m.foreground(&q, &p).is_err());
    let before = m.snapshot();
    for _ in 0..3 {
        m.ingest(q.clone()).unwrap();
    }
    assert!(!before.initialized());
    assert_eq!(m.snapshot().background.as_ref(), Some(&q));
    assert_eq!(m.foreground(&q, &p).unwrap().count_ones(), 0);
}

proptest! {
    #[test]
    fn code_map_is_idempotent(r: u8, g: u8, b: u8, lc in 2u8..=16) {
        let code = quantize_pixel([r, g, b], lc);
        prop_assert!((code as usize) < levels(lc));
        let back = code_to_rgb(code, lc);
        prop_assert_eq!(quantize_pixel(back, lc), code);
        let bins = code_bins(code, lc);
        for (bin, v) in bins.iter().zip([r, g, b]) {
            prop_assert_eq!(*bin as u32, v as u32 * lc as u32 / 256);
        }
    }

    #[test]
    fn constant_images_stay_constant(w in 1usize..60, h in 1usize..60, ow in 1usize..60, oh in 1usize..60, c: [u8; 3]) {
        let out = resample_to(&RawFrame::filled(w, h, c), ow, oh).unwrap();
        prop_assert!(out.pixels.chunks_exact(3).all(|p| p == c));
    }

    #[test]
    fn rgbp_files_round_trip(w in 1usize..40, h in 1usize..40, seed: u64) {
        let n = w * h;
        let rgb: Vec<u8> = (0..n * 3).map(|i| (seed.wrapping_mul(i as u64 + 7) >> 13) as u8).collect();
        let bits: Vec<u8> = (0..n).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
        let f = assemble_rgbp(RawFrame::new(w, h, rgb, 0, 0).unwrap(), PChannel::from_bits(w, h, bits).unwrap()).unwrap();
        let bytes = encode_rgbp(&f).unwrap();
        prop_assert_eq!(bytes.len(), 10 + n * 4);
        let back = decode_rgbp(&bytes, 0, 0).unwrap();
        prop_assert_eq!(encode_rgbp(&back).unwrap(), bytes);
        prop_assert_eq!(back, f);
    }

    #[test]
    fn mode_matches_scan(counts in proptest::collection::vec(0u16..20, 1..70)) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let best = *counts.iter().max().unwrap();
        let want = counts.iter().position(|&c| c == best).unwrap() as u16;
        prop_assert_eq!(mode_of(&counts).unwrap(), want);
    }

    #[test]
    fn histograms_hold_the_ring(codes in proptest::collection::vec(0u16..8, 4 * 12), eta in 1usize..6) {
        let mut m = BackgroundModel::new(2, 2, 2, eta, 0.8).unwrap();
        for (k, f) in codes.chunks(4).enumerate() {
            m.ingest(QuantizedFrame { width: 2, height: 2, lambda_c: 2, codes: f.to_vec() }).unwrap();
            let held = (k + 1).min(eta);
            for y in 0..2 {
                for x in 0..2 {
                    let sum: u32 = m.histogram(x, y).iter().map(|&v| v as u32).sum();
                    prop_assert_eq!(sum as usize, held);
                }
            }
            prop_assert_eq!(m.is_initialized(), k + 1 >= eta);
        }
    }

    #[test]
    fn short_standstills_never_overwrite(stay in 1usize..80) {
        // A code held for fewer than 80 of the last 100 samples cannot replace the background.
        let mut m = BackgroundModel::new(1, 1, 4, 100, 0.8).unwrap();
        let q = |c: u16| QuantizedFrame { width: 1, height: 1, lambda_c: 4, codes: vec![c] };
        for _ in 0..100 {
            m.ingest(q(5)).unwrap();
        }
        for _ in 0..stay {
            m.ingest(q(40)).unwrap();
        }
        for _ in 0..20 {
            m.ingest(q(5)).unwrap();
        }
        prop_assert_eq!(m.background().unwrap().codes[0], 5);
    }
}
