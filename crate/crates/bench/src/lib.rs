//! Shared fixtures for the benchmarks.

use dmgnn_core::data::{stack, SynthDatasetSpec};
use dmgnn_core::{Batch, ModelConfig};

/// The default architecture with widths divided by four.
pub fn reduced_config() -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.encoder.channels = vec![8, 16, 32, 64];
    cfg.encoder.csfb_hidden = 64;
    cfg.decoder.hidden = 64;
    cfg.decoder.head_hidden = 64;
    cfg.resolve().expect("reduced config is valid")
}

/// One batch of synthetic windows matching the default frame counts.
pub fn synthetic_batch(batch: usize, seed: u64) -> Batch {
    let spec = SynthDatasetSpec {
        seed,
        train_sequences: batch,
        ..SynthDatasetSpec::default()
    };
    let data = spec.generate().expect("synthetic spec is valid");
    let windows = data.train_windows(49, 10, 1).expect("windows fit");
    let refs: Vec<_> = windows.iter().take(batch).collect();
    stack(&refs).expect("windows share a shape")
}
