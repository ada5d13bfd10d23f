use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of `log beta` in the uncertainty loss.
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 100.0,
            lambda2: 0.5,
            lambda3: 0.5,
            lambda4: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0) {
            return Err(Error::Config(format!("lambda1 must be positive, got {}", self.lambda1)));
        }
        for (name, v) in [("lambda2", self.lambda2), ("lambda3", self.lambda3), ("lambda4", self.lambda4)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

fn check_betas(beta: &[f64]) -> Result<()> {
    match beta.iter().position(|b| !(*b > 0.0) || !b.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!("beta[{i}] = {} is not positive", beta[i]))),
        None => Ok(()),
    }
}

/// Value and gradient of one of the mean losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub per_ray: Vec<f64>,
    pub grad: Vec<f64>,
}

/// `mean_r err_r / (2 beta_r^2) + lambda1 log beta_r`. Gradient with respect to beta.
pub fn loss_uncer(err: &[f64], beta: &[f64], lambda1: f64) -> Result<LossGrad> {
    if err.len() != beta.len() {
        return Err(Error::Dimension(format!("{} errors for {} betas", err.len(), beta.len())));
    }
    check_betas(beta)?;
    let n = beta.len().max(1) as f64;
    let per_ray: Vec<f64> = err.iter().zip(beta).map(|(e, b)| e / (2.0 * b * b) + lambda1 * b.ln()).collect();
    let grad = err.iter().zip(beta).map(|(e, b)| (-e / (b * b * b) + lambda1 / b) / n).collect();
    Ok(LossGrad {
        value: per_ray.iter().sum::<f64>() / n,
        per_ray,
        grad,
    })
}

/// Gradient of [`loss_uncer`] with respect to the per-ray errors.
pub fn loss_uncer_grad_err(beta: &[f64]) -> Vec<f64> {
    let n = beta.len().max(1) as f64;
    beta.iter().map(|b| 1.0 / (2.0 * b * b * n)).collect()
}

/// `mean_r |C_r - C^_r|^2 / (2 beta_r^2)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NerfLoss {
    pub value: f64,
    pub per_ray: Vec<f64>,
    /// With respect to the rendered colours.
    pub grad_color: Vec<[f64; 3]>,
    /// With respect to beta; only consumed when the loss is coupled into G.
    pub grad_beta: Vec<f64>,
}

pub fn loss_nerf(observed: &[[f64; 3]], rendered: &[[f64; 3]], beta: &[f64]) -> Result<NerfLoss> {
    if observed.len() != rendered.len() || observed.len() != beta.len() {
        return Err(Error::Dimension(format!(
            "{} observed, {} rendered and {} betas",
            observed.len(),
            rendered.len(),
            beta.len()
        )));
    }
    check_betas(beta)?;
    let n = beta.len().max(1) as f64;
    let mut out = NerfLoss {
        per_ray: Vec::with_capacity(beta.len()),
        grad_color: Vec::with_capacity(beta.len()),
        grad_beta: Vec::with_capacity(beta.len()),
        value: 0.0,
    };
    for ((c, r), &b) in observed.iter().zip(rendered).zip(beta) {
        let d = [r[0] - c[0], r[1] - c[1], r[2] - c[2]];
        let sq = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let inv = 1.0 / (b * b);
        out.per_ray.push(0.5 * sq * inv);
        out.grad_color.push([d[0] * inv / n, d[1] * inv / n, d[2] * inv / n]);
        out.grad_beta.push(-sq * inv / b / n);
    }
    out.value = out.per_ray.iter().sum::<f64>() / n;
    Ok(out)
}

/// Minimiser over beta of `err_sq / (2 beta^2) + lambda1 log beta`.
pub fn optimal_beta(err_sq: f64, lambda1: f64) -> f64 {
    (err_sq / lambda1).sqrt()
}

/// Per-ray neighbour lists within a batch, each sorted and containing the ray itself.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NeighborSets {
    pub sets: Vec<Vec<u32>>,
}

impl NeighborSets {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Trivial sets `{r}`; the regulariser is then identically zero.
    pub fn singletons(n: usize) -> Self {
        Self {
            sets: (0..n as u32).map(|i| vec![i]).collect(),
        }
    }

    pub fn total_members(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}

/// `N(r) = { r' : cos(f_r, f_r') > eta }` over the batch, optionally restricted
/// to rays sharing a group id (for example the source view).
pub fn neighbor_sets(features: &[f32], channels: usize, eta: f64, groups: Option<&[usize]>) -> Result<NeighborSets> {
    if !(eta < 1.0) {
        return Err(Error::Config(format!("eta must be below 1, got {eta}")));
    }
    if channels == 0 || !features.len().is_multiple_of(channels) {
        return Err(Error::Dimension(format!("{} feature values with {channels} channels", features.len())));
    }
    let n = features.len() / channels;
    if let Some(g) = groups {
        if g.len() != n {
            return Err(Error::Dimension(format!("{} group ids for {n} rays", g.len())));
        }
    }
    let mut unit = Vec::with_capacity(features.len());
    for (i, f) in features.chunks_exact(channels).enumerate() {
        let norm = f.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidInput(format!("feature vector of ray {i} is zero or non-finite")));
        }
        unit.extend(f.iter().map(|&v| f64::from(v) / norm));
    }
    let sets = (0..n)
        .into_par_iter()
        .map(|i| {
            let fi = &unit[i * channels..(i + 1) * channels];
            (0..n)
                .filter(|&j| {
                    if j == i {
                        return true;
                    }
                    if groups.is_some_and(|g| g[i] != g[j]) {
                        return false;
                    }
                    let fj = &unit[j * channels..(j + 1) * channels];
                    let dot: f64 = fi.iter().zip(fj).map(|(a, b)| a * b).sum();
                    dot > eta
                })
                .map(|j| j as u32)
                .collect()
        })
        .collect();
    Ok(NeighborSets { sets })
}

/// Mean beta over each neighbour set.
pub fn refined_beta(beta: &[f64], sets: &NeighborSets) -> Vec<f64> {
    sets.sets
        .iter()
        .map(|s| s.iter().map(|&j| beta[j as usize]).sum::<f64>() / s.len() as f64)
        .collect()
}

/// Mean over rays of the beta variance inside each neighbour set.
pub fn loss_reg(beta: &[f64], sets: &NeighborSets) -> Result<LossGrad> {
    if sets.len() != beta.len() {
        return Err(Error::Dimension(format!("{} neighbour sets for {} betas", sets.len(), beta.len())));
    }
    let n = beta.len().max(1) as f64;
    let mean = refined_beta(beta, sets);
    let mut per_ray = Vec::with_capacity(beta.len());
    let mut grad = vec![0.0; beta.len()];
    for (r, s) in sets.sets.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::InvalidInput(format!("neighbour set of ray {r} is empty")));
        }
        let m = s.len() as f64;
        let mut var = 0.0;
        for &j in s {
            let d = beta[j as usize] - mean[r];
            var += d * d;
            grad[j as usize] += 2.0 * d / (m * n);
        }
        per_ray.push(var / m);
    }
    Ok(LossGrad {
        value: per_ray.iter().sum::<f64>() / n,
        per_ray,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{oracle_features, ORACLE_CHANNELS};
    use crate::numkit::rel_err;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Golden-section search for the minimiser of a unimodal function.
    fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        for _ in 0..300 {
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - g * (b - a);
            d = a + g * (b - a);
            if (b - a).abs() <= 1e-15 * (a.abs() + b.abs()) {
                break;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn uncer_examples() {
        let l = loss_uncer(&[0.0], &[1.0], 100.0).unwrap();
        assert_eq!(l.value, 0.0);
        let l = loss_uncer(&[0.343], &[0.1], 100.0).unwrap();
        assert!((l.value - (17.15 - 100.0 * 10f64.ln())).abs() < 1e-12);
        assert!((l.value + 213.11).abs() < 0.01);
        assert!(loss_uncer(&[0.1], &[0.0], 1.0).is_err());
        assert!(loss_uncer(&[0.1], &[-1.0], 1.0).is_err());
    }

    #[test]
    fn uncer_stationary_at_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let err: f64 = rng.gen_range(1e-4..2.0);
            let lambda1 = [1.0, 10.0, 100.0][rng.gen_range(0..3)];
            let b = optimal_beta(err, lambda1);
            let g = loss_uncer(&[err], &[b], lambda1).unwrap().grad[0];
            assert!(g.abs() < 1e-9 * (lambda1 / b), "{g}");
            let num = golden_min(|x| err / (2.0 * x * x) + lambda1 * x.ln(), 1e-6, 10.0);
            assert!(rel_err(num, b, 0.0) < 1e-6);
        }
    }

    #[test]
    fn optimal_beta_examples() {
        assert_eq!(optimal_beta(0.0, 3.0), 0.0);
        assert_eq!(optimal_beta(0.25, 1.0), 0.5);
    }

    #[test]
    fn optimal_beta_matches_numeric_minimiser() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for lambda1 in [0.1, 1.0, 10.0, 100.0] {
            for _ in 0..100 {
                let err: f64 = rng.gen_range(1e-6..3.0);
                let b = golden_min(|x| err / (2.0 * x * x) + lambda1 * x.ln(), 1e-8, 100.0);
                assert!(rel_err(b, optimal_beta(err, lambda1), 0.0) < 1e-5);
            }
        }
    }

    #[test]
    fn nerf_examples() {
        let obs = [[0.1, 0.2, 0.3], [0.5, 0.5, 0.5]];
        let ren = [[0.2, 0.2, 0.1], [0.4, 0.9, 0.5]];
        let l = loss_nerf(&obs, &ren, &[1.0, 1.0]).unwrap();
        let mse: f64 = obs.iter().zip(&ren).map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>()).sum::<f64>() / 2.0;
        assert!((l.value - 0.5 * mse).abs() < 1e-15);
        let same = loss_nerf(&obs, &obs, &[1.0, 1.0]).unwrap();
        assert_eq!(same.value, 0.0);
        assert!(same.grad_color.iter().flatten().all(|&g| g == 0.0));
        let doubled = loss_nerf(&obs, &ren, &[2.0, 1.0]).unwrap();
        assert!((doubled.per_ray[0] - l.per_ray[0] / 4.0).abs() < 1e-15);
        assert_eq!(doubled.per_ray[1], l.per_ray[1]);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-5;
        for _ in 0..20 {
            let n = 6;
            let err: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let beta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..2.0)).collect();
            let obs: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            let ren: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            let feats: Vec<f32> = (0..n * 3).map(|_| rng.gen_range(0.1f32..1.0)).collect();
            let sets = neighbor_sets(&feats, 3, 0.9, None).unwrap();

            let gu = loss_uncer(&err, &beta, 7.0).unwrap().grad;
            let ge = loss_uncer_grad_err(&beta);
            let gr = loss_reg(&beta, &sets).unwrap().grad;
            let gn = loss_nerf(&obs, &ren, &beta).unwrap();
            for i in 0..n {
                let bump = |d: f64| {
                    let mut b = beta.clone();
                    b[i] += d;
                    b
                };
                let fd = |f: &dyn Fn(&[f64]) -> f64| (f(&bump(h)) - f(&bump(-h))) / (2.0 * h);
                let num_u = fd(&|b| loss_uncer(&err, b, 7.0).unwrap().value);
                let num_r = fd(&|b| loss_reg(b, &sets).unwrap().value);
                let num_nb = fd(&|b| loss_nerf(&obs, &ren, b).unwrap().value);
                assert!(rel_err(gu[i], num_u, 1e-4) < 1e-6);
                assert!(rel_err(gr[i], num_r, 1e-4) < 1e-6);
                assert!(rel_err(gn.grad_beta[i], num_nb, 1e-4) < 1e-6);

                let mut ep = err.clone();
                ep[i] += h;
                let mut em = err.clone();
                em[i] -= h;
                let num_e = (loss_uncer(&ep, &beta, 7.0).unwrap().value - loss_uncer(&em, &beta, 7.0).unwrap().value) / (2.0 * h);
                assert!(rel_err(ge[i], num_e, 1e-4) < 1e-6);

                for k in 0..3 {
                    let mut rp = ren.clone();
                    rp[i][k] += h;
                    let mut rm = ren.clone();
                    rm[i][k] -= h;
                    let num = (loss_nerf(&obs, &rp, &beta).unwrap().value - loss_nerf(&obs, &rm, &beta).unwrap().value) / (2.0 * h);
                    assert!(rel_err(gn.grad_color[i][k], num, 1e-4) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn reg_examples() {
        let sets = NeighborSets {
            sets: vec![vec![0, 1], vec![0, 1]],
        };
        let l = loss_reg(&[0.0, 1.0], &sets).unwrap();
        assert_eq!(l.per_ray, vec![0.25, 0.25]);
        let flat = loss_reg(&[0.3, 0.3], &sets).unwrap();
        assert_eq!(flat.value, 0.0);
        assert!(flat.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn neighbor_sets_basic_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let feats: Vec<f32> = (0..40 * 4).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let mut f2 = feats.clone();
        f2[4..8].copy_from_slice(&feats[0..4]);
        let sets = neighbor_sets(&f2, 4, 0.95, None).unwrap();
        for (i, s) in sets.sets.iter().enumerate() {
            assert!(s.contains(&(i as u32)));
            for &j in s {
                assert!(sets.sets[j as usize].contains(&(i as u32)));
            }
        }
        assert_eq!(sets.sets[0], sets.sets[1]);
        assert!(neighbor_sets(&feats, 4, 1.0, None).is_err());
        let groups: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let g = neighbor_sets(&feats, 4, -2.0, Some(&groups)).unwrap();
        assert!(g.sets.iter().all(|s| s.len() == 20));
    }

    #[test]
    fn oracle_classes_do_not_mix() {
        let (w, h) = (32, 32);
        let mask: Vec<bool> = (0..w * h).map(|i| (i % w) < 10 && (i / w) < 10).collect();
        let ids: Vec<u16> = mask.iter().map(|&m| u16::from(m)).collect();
        let fm = oracle_features(w, h, &mask, &ids, 5).unwrap();
        let sets = neighbor_sets(&fm.data, ORACLE_CHANNELS, 0.9, None).unwrap();
        let mut cross = 0usize;
        for (i, s) in sets.sets.iter().enumerate() {
            cross += s.iter().filter(|&&j| mask[j as usize] != mask[i]).count();
        }
        assert!((cross as f64) < 0.01 * sets.total_members() as f64, "{cross}");
    }

    proptest! {
        #[test]
        fn reg_shift_invariant(betas in proptest::collection::vec(0.01f64..3.0, 2..20), shift in -0.005f64..5.0, eta in -0.5f64..0.99, seed in 0u64..100) {
            let n = betas.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let feats: Vec<f32> = (0..n * 3).map(|_| rng.gen_range(0.01f32..1.0)).collect();
            let sets = neighbor_sets(&feats, 3, eta, None).unwrap();
            let shifted: Vec<f64> = betas.iter().map(|b| b + shift).collect();
            let a = loss_reg(&betas, &sets).unwrap().value;
            let b = loss_reg(&shifted, &sets).unwrap().value;
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn modified_ratio_dominates(l1 in 0.0f64..1.0, dl in 0.0f64..1.0, c1 in 0.0f64..1.0, dc in 0.0f64..1.0, s1 in 0.0f64..1.0, ds in 0.0f64..1.0) {
            use crate::robustloss::{conventional_error, modified_error};
            let (l2, c2, s2) = (l1 + (1.0 - l1) * dl, c1 + (1.0 - c1) * dc, s1 + (1.0 - s1) * ds);
            prop_assume!(l1 > 0.0 && c1 > 0.0 && s1 > 0.0 && l1 < l2 && c1 < c2 && s1 < s2 && l2 < 1.0 && c2 < 1.0 && s2 < 1.0);
            let lhs = modified_error(l1, c1, s1) / modified_error(l2, c2, s2);
            let rhs = conventional_error(l1, c1, s1) / conventional_error(l2, c2, s2);
            prop_assert!(lhs > rhs);
        }
    }
}
