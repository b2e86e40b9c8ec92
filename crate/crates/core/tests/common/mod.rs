#![allow(dead_code)]

use std::path::PathBuf;

use dbdh_core::datakit::{synthetic_embed_in, synthetic_host, EmbeddedSample, RegionRect, Scheme, Split};
use dbdh_core::distortion::sample_rng;
use dbdh_core::trainer::Dataset;

/// `n` synthetic `side×side` hosts with a centred `side/2` region embedded at 40 dB.
pub fn synthetic_dataset(n: usize, side: usize, seed: u64, split: Split) -> Dataset {
    let mut samples = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = sample_rng(seed, 7, i as u64);
        let host = synthetic_host(side, side, &mut rng);
        let rect = RegionRect::centered(side, side, side / 2).unwrap();
        let e = synthetic_embed_in(&host, rect, 40.0, &mut rng).unwrap();
        samples.push(EmbeddedSample {
            id: format!("s{seed}_{i}"),
            image_path: PathBuf::from(format!("s{seed}_{i}.png")),
            host_path: PathBuf::from(format!("s{seed}_{i}_host.png")),
            vertices: e.vertices,
            region_rect: e.region_rect,
            scheme: Scheme::Synth,
            psnr_db: e.psnr_db,
            split: Some(split),
        });
        images.push(e.image);
    }
    Dataset::from_images(samples, images).unwrap()
}
