#![allow(dead_code)]

use peoplecount_core::dataset::InMemoryDataset;
use peoplecount_core::frame::{assemble_rgbp, PChannel, RawFrame, RgbpSequence};
use peoplecount_core::label::PeopleLabel;
use peoplecount_core::model::LrcnConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(seq_len: usize) -> LrcnConfig {
    LrcnConfig {
        conv_layers: 2,
        filters: 2,
        kernel: 3,
        lstm_units: vec![6],
        seq_len,
        input_width: 24,
        input_height: 16,
        ..LrcnConfig::default()
    }
}

/// Random frames with a count-dependent foreground blob, so labels are learnable.
pub fn random_dataset(w: usize, h: usize, seq_len: usize, labels: &[u32], seed: u64) -> InMemoryDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stride = 5;
    let sequences = labels
        .iter()
        .map(|&count| {
            let frames = (0..seq_len)
                .map(|k| {
                    let px: Vec<u8> = (0..w * h * 3).map(|_| rng.gen()).collect();
                    let bits: Vec<u8> = (0..w * h).map(|i| u8::from(i % 17 < count as usize)).collect();
                    let idx = (k * stride) as u64;
                    let rgb = RawFrame::new(w, h, px, idx * 50, idx).unwrap();
                    assemble_rgbp(rgb, PChannel::from_bits(w, h, bits).unwrap()).unwrap()
                })
                .collect();
            RgbpSequence::new(frames, stride, Some(PeopleLabel::total(count))).unwrap()
        })
        .collect();
    InMemoryDataset::new(sequences).unwrap()
}
