use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::FeatureMap;
use crate::error::{Error, Result};

pub const ORACLE_CHANNELS: usize = 8;
pub const ORACLE_NOISE_STD: f64 = 0.01;

/// Unit prototype for class `id`; 0 is the background.
///
/// Classes 1..=7 take the remaining axes and are mutually orthogonal. Larger
/// ids reuse an axis with a second one mixed in so they stay orthogonal to
/// the background.
fn prototype(id: u16) -> [f64; ORACLE_CHANNELS] {
    let mut v = [0.0; ORACLE_CHANNELS];
    if id == 0 {
        v[0] = 1.0;
        return v;
    }
    let k = (id as usize - 1) % 7;
    v[1 + k] = 1.0;
    let round = (id as usize - 1) / 7;
    if round > 0 {
        let j = 1 + (k + round) % 7;
        v[j] += 0.5;
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Synthetic features with perfect distractor separation: each pixel gets its
/// class prototype plus isotropic Gaussian noise. Pixels outside the mask are
/// background regardless of their class id.
pub fn oracle_features(width: usize, height: usize, mask: &[bool], class_ids: &[u16], seed: u64) -> Result<FeatureMap> {
    let n = width * height;
    if mask.len() != n || class_ids.len() != n {
        return Err(Error::Dimension(format!(
            "mask {} and class ids {} for a {width}x{height} map",
            mask.len(),
            class_ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, ORACLE_NOISE_STD).expect("valid std");
    let mut data = Vec::with_capacity(n * ORACLE_CHANNELS);
    for i in 0..n {
        let id = if mask[i] { class_ids[i].max(1) } else { 0 };
        let p = prototype(id);
        data.extend(p.iter().map(|&v| (v + noise.sample(&mut rng)) as f32));
    }
    FeatureMap::new(height, width, ORACLE_CHANNELS, data)
}
