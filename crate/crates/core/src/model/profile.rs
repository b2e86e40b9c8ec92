//! Closed-form multiply-add count of the inference graph.

use serde::Serialize;

use super::{ModelConfig, PadPlan};
use crate::error::Result;
use crate::filterbank::{BANK_INPUTS, BANK_SIZE, PAD_SIZE};

pub const REFERENCE_MULT_ADDS: f64 = 30.71e9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    pub name: String,
    pub out_hw: (usize, usize),
    pub mult_adds: u64,
}

/// `H_out·W_out·C_out·C_in·k²`.
pub fn conv_mult_adds(h_out: usize, w_out: usize, cin: usize, cout: usize, k: usize) -> u64 {
    (h_out * w_out) as u64 * (cout * cin * k * k) as u64
}

/// Per-layer counts on the padded input. The segmentation head is excluded
/// because it is not part of the deployed graph.
pub fn profile_layers(config: &ModelConfig, input_hw: (usize, usize)) -> Result<Vec<LayerCount>> {
    config.validate()?;
    let plan = PadPlan::new(input_hw.0, input_hw.1)?;
    let (h, w) = (plan.padded_h, plan.padded_w);
    let mut layers = Vec::new();
    let mut conv = |name: &str, s: usize, cin: usize, cout: usize, k: usize| {
        let (ho, wo) = (h / s, w / s);
        layers.push(LayerCount {
            name: name.to_string(),
            out_hw: (ho, wo),
            mult_adds: conv_mult_adds(ho, wo, cin, cout, k),
        });
    };
    let ct = config.texture_channels;
    if config.use_texture_branch {
        // Each of the 62 kernels runs on each input channel separately.
        conv("texture.filter_bank", 1, 1, BANK_SIZE * BANK_INPUTS, PAD_SIZE);
        conv("texture.compress", 1, BANK_SIZE * BANK_INPUTS, ct, 1);
        conv("texture.down", 2, ct, ct, 3);
    } else {
        conv("plain.0", 1, 3, ct, 3);
        conv("plain.1", 2, ct, ct, 3);
        conv("plain.2", 2, ct, ct, 3);
    }
    let cs = config.context_stem_channels;
    conv("context.stem", 2, 3, cs, 7);
    let mut cin = cs;
    for (i, &c) in config.context_stage_channels.iter().enumerate() {
        let s = 4 << i;
        conv(&format!("context.stage{}.0.conv1", i + 1), s, cin, c, 3);
        conv(&format!("context.stage{}.0.conv2", i + 1), s, c, c, 3);
        if i > 0 || cin != c {
            conv(&format!("context.stage{}.0.down", i + 1), s, cin, c, 1);
        }
        conv(&format!("context.stage{}.1.conv1", i + 1), s, c, c, 3);
        conv(&format!("context.stage{}.1.conv2", i + 1), s, c, c, 3);
        cin = c;
    }
    let r = config.ase_reduction;
    let c3 = config.context_stage_channels[2];
    let c4 = config.context_stage_channels[3];
    let fc = |name: &str, a: usize, b: usize| LayerCount {
        name: name.to_string(),
        out_hw: (1, 1),
        mult_adds: (a * b) as u64,
    };
    let co = config.context_out_channels;
    let ch = config.head_channels;
    conv("context.proj", 32, c4, co, 1);
    conv("det.conv", 2, ct + co, ch, 3);
    conv("det.out", 2, ch, 4, 3);
    layers.push(fc("context.ase3.fc1", c3, c3 / r));
    layers.push(fc("context.ase3.fc2", c3 / r, c3));
    layers.push(fc("context.ase4.fc1", c4, c4 / r));
    layers.push(fc("context.ase4.fc2", c4 / r, c4));
    layers.push(fc("context.global", c4, c4));
    layers.push(fc("det.ase.fc1", ch, ch / r));
    layers.push(fc("det.ase.fc2", ch / r, ch));
    Ok(layers)
}

/// Total multiply-adds of convolution and fully connected layers; inputs
/// that are not multiples of 32 are counted at their padded size.
pub fn count_mult_adds(config: &ModelConfig, input_hw: (usize, usize)) -> Result<u64> {
    Ok(profile_layers(config, input_hw)?.iter().map(|l| l.mult_adds).sum())
}
