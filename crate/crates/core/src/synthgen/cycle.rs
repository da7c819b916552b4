//! Urban drive-cycle current surrogate and user profile resampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Fixed seed of the bundled template, so the template itself never changes.
const TEMPLATE_SEED: u64 = 0x46_55_44_53;
/// Samples per zero-mean block.
const BLOCK: usize = 100;
/// Target peak-to-RMS ratio.
pub const TARGET_CREST: f64 = 3.0;

/// Bundled urban-cycle current template with `samples` points and largest
/// magnitude `peak` (A).
///
/// Piecewise-constant levels of 1 to 8 samples, alternating between charge
/// and discharge, with every 100-sample block shifted to zero mean and the
/// whole profile shaped to a crest factor close to 3.
pub fn urban_cycle(samples: usize, peak: f64) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::domain("a drive cycle needs at least one sample"));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::domain(format!("peak current must be positive, got {peak}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(TEMPLATE_SEED);
    let mut raw = Vec::with_capacity(samples);
    let mut sign = 1.0;
    while raw.len() < samples {
        let hold = rng.random_range(1..=8);
        // exponential magnitudes give occasional spikes well above the RMS
        let u: f64 = rng.random();
        let level = sign * (0.1 - (1.0 - u).ln());
        raw.extend(std::iter::repeat_n(level, hold));
        sign = -sign;
    }
    raw.truncate(samples);
    // clipping lowers the RMS and moves block means, so alternate the two
    for _ in 0..8 {
        zero_block_means(&mut raw);
        let rms = (raw.iter().map(|x| x * x).sum::<f64>() / samples as f64).sqrt();
        if rms == 0.0 {
            break;
        }
        let cap = TARGET_CREST * rms;
        raw.iter_mut().for_each(|x| *x = x.clamp(-cap, cap));
    }
    zero_block_means(&mut raw);
    let max = raw.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if max > 0.0 {
        raw.iter_mut().for_each(|x| *x *= peak / max);
    }
    Ok(raw)
}

fn zero_block_means(x: &mut [f64]) {
    for block in x.chunks_mut(BLOCK) {
        let mean = block.iter().sum::<f64>() / block.len() as f64;
        block.iter_mut().for_each(|v| *v -= mean);
    }
}

/// Peak magnitude over RMS.
pub fn crest_factor(i: &[f64]) -> f64 {
    let rms = (i.iter().map(|x| x * x).sum::<f64>() / i.len() as f64).sqrt();
    i.iter().fold(0.0_f64, |m, x| m.max(x.abs())) / rms
}

/// Samples a `(t, i)` template at `period` with zero-order hold, repeating
/// it end to end until `samples` values are produced. Template times are
/// relative to its first point; the last point marks the template length.
pub fn resample_profile(profile: &[(f64, f64)], period: f64, samples: usize) -> Result<Vec<f64>> {
    if profile.len() < 2 {
        return Err(Error::Data("a drive-cycle template needs at least two points".into()));
    }
    if profile.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::Data("drive-cycle template times must be strictly increasing".into()));
    }
    let t0 = profile[0].0;
    let span = profile[profile.len() - 1].0 - t0;
    let out = (0..samples)
        .map(|k| {
            let t = (k as f64 * period) % span;
            let idx = profile.partition_point(|p| p.0 - t0 <= t).max(1) - 1;
            profile[idx].1
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_shape() {
        let i = urban_cycle(2000, 120.0).unwrap();
        assert_eq!(i.len(), 2000);
        let peak = i.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        assert!((peak - 120.0).abs() < 1e-9);
        let crest = crest_factor(&i);
        assert!((2.5..=3.5).contains(&crest), "crest {crest}");
        for block in i.chunks(BLOCK) {
            let mean = block.iter().sum::<f64>() / block.len() as f64;
            assert!(mean.abs() < 1e-12 * peak, "block mean {mean}");
        }
        let flips = i.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
        assert!(flips > 300, "{flips} sign changes");
    }

    #[test]
    fn template_is_fixed() {
        assert_eq!(urban_cycle(500, 50.0).unwrap(), urban_cycle(500, 50.0).unwrap());
    }

    #[test]
    fn resampling_holds_and_repeats() {
        let p = [(0.0, 1.0), (2.0, -1.0), (3.0, 0.0), (4.0, 0.0)];
        let i = resample_profile(&p, 1.0, 10).unwrap();
        assert_eq!(i, vec![1.0, 1.0, -1.0, 0.0, 1.0, 1.0, -1.0, 0.0, 1.0, 1.0]);
        let half = resample_profile(&p, 0.5, 6).unwrap();
        assert_eq!(half, vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn bad_templates() {
        assert!(resample_profile(&[(0.0, 1.0)], 1.0, 4).is_err());
        assert!(resample_profile(&[(0.0, 1.0), (0.0, 2.0)], 1.0, 4).is_err());
        assert!(urban_cycle(0, 10.0).is_err());
    }
}
