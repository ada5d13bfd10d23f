//! Emission-absorption compositing along one ray.
//!
//! `alpha_i = 1 - exp(-sigma_i * delta_i)`, `T_i = prod_{j<i} (1 - alpha_j)`,
//! `C = sum_i T_i alpha_i c_i + T_{N+1} * background`, with
//! `delta_i = t_{i+1} - t_i` and the last interval ending at `far`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RaySampleSet {
    /// Strictly increasing sample depths.
    pub t: Vec<f64>,
    /// End of the last interval, `> t.last()`.
    pub far: f64,
    pub sigma: Vec<f64>,
    pub color: Vec<[f64; 3]>,
}

impl RaySampleSet {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn deltas(&self) -> Vec<f64> {
        let n = self.t.len();
        (0..n)
            .map(|i| if i + 1 < n { self.t[i + 1] - self.t[i] } else { self.far - self.t[i] })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        if self.sigma.len() != n || self.color.len() != n {
            return Err(Error::Dimension(format!(
                "{n} depths but {} densities and {} colors",
                self.sigma.len(),
                self.color.len()
            )));
        }
        if self.t.windows(2).any(|w| !(w[1] > w[0])) || self.t.last().is_some_and(|&t| !(self.far > t)) {
            return Err(Error::InvalidInput("sample depths must be strictly increasing and below far".into()));
        }
        if let Some(s) = self.sigma.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::InvalidInput(format!("negative or NaN density {s}")));
        }
        Ok(())
    }
}

/// Per-sample quantities kept for the backward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompositeCache {
    pub delta: Vec<f64>,
    /// `T_i alpha_i`.
    pub weights: Vec<f64>,
    /// `T_{i+1}`, transmittance after sample `i`.
    pub trans_after: Vec<f64>,
    /// Transmittance past the last sample.
    pub trans_final: f64,
}

pub fn composite(samples: &RaySampleSet, background: [f64; 3]) -> Result<([f64; 3], CompositeCache)> {
    samples.validate()?;
    let delta = samples.deltas();
    let n = samples.len();
    let mut weights = Vec::with_capacity(n);
    let mut trans_after = Vec::with_capacity(n);
    let mut trans = 1.0;
    let mut color = [0.0; 3];
    for i in 0..n {
        let keep = (-samples.sigma[i] * delta[i]).exp();
        let w = trans * (1.0 - keep);
        for c in 0..3 {
            color[c] += w * samples.color[i][c];
        }
        weights.push(w);
        trans *= keep;
        trans_after.push(trans);
    }
    for c in 0..3 {
        color[c] += trans * background[c];
    }
    Ok((
        color,
        CompositeCache {
            delta,
            weights,
            trans_after,
            trans_final: trans,
        },
    ))
}

/// Gradients of a scalar loss with respect to each sample's density and colour,
/// given `dL/dC`.
pub fn composite_backward(
    samples: &RaySampleSet,
    cache: &CompositeCache,
    background: [f64; 3],
    dcolor: [f64; 3],
) -> (Vec<f64>, Vec<[f64; 3]>) {
    let n = samples.len();
    let mut dsigma = vec![0.0; n];
    let mut dc = vec![[0.0; 3]; n];
    // Running sum over samples after i of w_j c_j, plus the background term.
    let mut tail = [0.0; 3];
    for c in 0..3 {
        tail[c] = cache.trans_final * background[c];
    }
    for i in (0..n).rev() {
        let mut g = 0.0;
        for c in 0..3 {
            dc[i][c] = cache.weights[i] * dcolor[c];
            g += dcolor[c] * (cache.trans_after[i] * samples.color[i][c] - tail[c]);
        }
        dsigma[i] = cache.delta[i] * g;
        for c in 0..3 {
            tail[c] += cache.weights[i] * samples.color[i][c];
        }
    }
    (dsigma, dc)
}
