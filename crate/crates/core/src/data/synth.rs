//! Seeded synthetic motion: every joint-axis channel is a short sum of
//! sinusoids plus Gaussian noise.
//!
//! By default the motion is coordinated: a sequence draws one set of
//! frequencies shared by all channels, consecutive joints form parts with
//! a common phase per frequency, and channels within a part deviate from
//! it by a small jitter. Independent mode draws every channel separately.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::MotionSequence;
use crate::tensor::Rng64;

/// Largest per-component amplitude, in radians.
pub const MAX_AMPLITUDE: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub joints: usize,
    pub frames: usize,
    pub frame_interval_ms: f64,
    /// Each channel draws between 1 and this many components (at most 3).
    pub max_components: usize,
    /// Frequency range in Hz.
    pub freq_hz: [f64; 2],
    /// Per-component amplitude range in radians.
    pub amplitude: [f64; 2],
    /// Standard deviation of the additive noise in radians.
    pub noise_std: f64,
    /// Share frequencies across the body and phases within parts.
    pub coordinated: bool,
    /// Consecutive joints per part in coordinated mode.
    pub part_size: usize,
    /// Largest deviation of a channel's phase from its part's, in radians.
    pub phase_jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            joints: 20,
            frames: 59,
            frame_interval_ms: 40.0,
            max_components: 3,
            freq_hz: [0.25, 1.5],
            amplitude: [0.05, 0.5],
            noise_std: 0.002,
            coordinated: true,
            part_size: 4,
            phase_jitter: 0.3,
        }
    }
}

/// One sinusoid `amplitude * sin(2 pi freq t + phase)`, `t` in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Component {
    pub freq_hz: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("synth.{field}"), msg));
        if self.joints == 0 {
            return bad("joints", "must be positive".into());
        }
        if self.frames == 0 {
            return bad("frames", "must be positive".into());
        }
        if !(self.frame_interval_ms > 0.0) {
            return bad("frame_interval_ms", format!("{} must be positive", self.frame_interval_ms));
        }
        if !(1..=3).contains(&self.max_components) {
            return bad("max_components", format!("{} not in 1..=3", self.max_components));
        }
        let [f0, f1] = self.freq_hz;
        if !(f0 >= 0.0 && f0 <= f1 && f1.is_finite()) {
            return bad("freq_hz", format!("invalid range [{f0}, {f1}]"));
        }
        let [a0, a1] = self.amplitude;
        if !(a0 >= 0.0 && a0 <= a1 && a1 <= MAX_AMPLITUDE) {
            return bad("amplitude", format!("range [{a0}, {a1}] must lie in [0, {MAX_AMPLITUDE}]"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std", format!("{} must be non-negative", self.noise_std));
        }
        if self.part_size == 0 {
            return bad("part_size", "must be positive".into());
        }
        if !(self.phase_jitter >= 0.0 && self.phase_jitter.is_finite()) {
            return bad("phase_jitter", format!("{} must be non-negative", self.phase_jitter));
        }
        Ok(())
    }

    fn channels(&self) -> usize {
        self.joints * 3
    }
}

fn draw(rng: &mut Rng64, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Components per channel followed by the noise stream, both from `seed`.
fn generate(spec: &SynthSpec, seed: u64) -> Result<(Vec<Vec<Component>>, Rng64)> {
    spec.validate()?;
    let mut rng = Rng64::seed_from_u64(seed);
    if spec.coordinated {
        let n = rng.gen_range(1..=spec.max_components);
        let freqs: Vec<f64> = (0..n).map(|_| draw(&mut rng, spec.freq_hz)).collect();
        let parts = spec.joints.div_ceil(spec.part_size);
        let phases: Vec<Vec<f64>> = (0..parts).map(|_| (0..n).map(|_| rng.gen_range(0.0..TAU)).collect()).collect();
        let comps = (0..spec.channels())
            .map(|ch| {
                let part = &phases[ch / 3 / spec.part_size];
                freqs
                    .iter()
                    .zip(part)
                    .map(|(&freq_hz, &phase)| Component {
                        freq_hz,
                        amplitude: draw(&mut rng, spec.amplitude),
                        phase: phase + draw(&mut rng, [-spec.phase_jitter, spec.phase_jitter]),
                    })
                    .collect()
            })
            .collect();
        return Ok((comps, rng));
    }
    let comps = (0..spec.channels())
        .map(|_| {
            let n = rng.gen_range(1..=spec.max_components);
            (0..n)
                .map(|_| Component {
                    freq_hz: draw(&mut rng, spec.freq_hz),
                    amplitude: draw(&mut rng, spec.amplitude),
                    phase: rng.gen_range(0.0..TAU),
                })
                .collect()
        })
        .collect();
    Ok((comps, rng))
}

/// The sinusoids drawn for each of the `3M` channels.
pub fn synth_components(spec: &SynthSpec, seed: u64) -> Result<Vec<Vec<Component>>> {
    Ok(generate(spec, seed)?.0)
}

pub fn synth_motion(spec: &SynthSpec, seed: u64) -> Result<MotionSequence> {
    let (comps, mut rng) = generate(spec, seed)?;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::config("synth.noise_std", e.to_string()))?;
    let dt = spec.frame_interval_ms / 1000.0;
    let width = spec.channels();
    let mut values = Vec::with_capacity(spec.frames * width);
    for t in 0..spec.frames {
        let time = t as f64 * dt;
        for channel in &comps {
            let clean: f64 = channel
                .iter()
                .map(|c| c.amplitude * (TAU * c.freq_hz * time + c.phase).sin())
                .sum();
            let eps = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            values.push(clean + eps);
        }
    }
    MotionSequence::new(values, spec.frames, spec.joints, spec.frame_interval_ms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let spec = SynthSpec::default();
        assert_eq!(synth_motion(&spec, 7).unwrap().values, synth_motion(&spec, 7).unwrap().values);
        assert_ne!(synth_motion(&spec, 7).unwrap().values, synth_motion(&spec, 8).unwrap().values);
    }

    #[test]
    fn zero_amplitude_is_constant() {
        let spec = SynthSpec {
            amplitude: [0.0, 0.0],
            noise_std: 0.0,
            ..SynthSpec::default()
        };
        let seq = synth_motion(&spec, 1).unwrap();
        assert!(seq.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn amplitudes_respect_the_bound() {
        let spec = SynthSpec {
            amplitude: [0.0, MAX_AMPLITUDE],
            ..SynthSpec::default()
        };
        for channel in synth_components(&spec, 3).unwrap() {
            assert!(!channel.is_empty() && channel.len() <= 3);
            assert!(channel.iter().all(|c| c.amplitude <= MAX_AMPLITUDE));
        }
        let too_big = SynthSpec {
            amplitude: [0.0, 0.9],
            ..SynthSpec::default()
        };
        assert!(synth_motion(&too_big, 0).is_err());
    }

    #[test]
    fn coordinated_channels_share_frequencies_and_part_phases() {
        let spec = SynthSpec {
            joints: 6,
            part_size: 2,
            ..SynthSpec::default()
        };
        let comps = synth_components(&spec, 5).unwrap();
        let freqs: Vec<f64> = comps[0].iter().map(|c| c.freq_hz).collect();
        for (ch, channel) in comps.iter().enumerate() {
            assert_eq!(channel.iter().map(|c| c.freq_hz).collect::<Vec<_>>(), freqs);
            // Channels 0..6 belong to part 0; phases stay within twice the jitter.
            let first = &comps[ch / 6 * 6];
            for (a, b) in channel.iter().zip(first) {
                assert!((a.phase - b.phase).abs() <= 2.0 * spec.phase_jitter);
            }
        }
    }

    /// Magnitude of DFT bin `k` of `x`, computed directly.
    fn dft_mag(x: &[f64], k: usize) -> f64 {
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            let w = TAU * k as f64 * t as f64 / n;
            re += v * w.cos();
            im -= v * w.sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn dominant_dft_bins_match_seeded_frequencies() {
        // 200 frames at 40 ms span 8 s, so bins are 0.125 Hz apart; a
        // single-component range narrower than one bin pins the peak.
        let frames = 200;
        let spec = SynthSpec {
            joints: 2,
            frames,
            max_components: 1,
            freq_hz: [0.5, 2.0],
            amplitude: [0.3, 0.6],
            noise_std: 0.001,
            coordinated: false,
            ..SynthSpec::default()
        };
        let seq = synth_motion(&spec, 11).unwrap();
        let comps = synth_components(&spec, 11).unwrap();
        let span_s = frames as f64 * spec.frame_interval_ms / 1000.0;
        for (ch, comp) in comps.iter().enumerate() {
            let x: Vec<f64> = (0..frames).map(|t| seq.values[t * 6 + ch]).collect();
            let peak = (1..frames / 2)
                .max_by(|&a, &b| dft_mag(&x, a).total_cmp(&dft_mag(&x, b)))
                .unwrap();
            let expected = comp[0].freq_hz * span_s;
            assert!(
                (peak as f64 - expected).abs() <= 1.0,
                "channel {ch}: peak bin {peak}, seeded {expected:.2}"
            );
        }
    }
}
