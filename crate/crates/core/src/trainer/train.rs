use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::plot::{save_beta_heatmap, save_convergence_plot};
use super::report::{EvalRow, RunReport};
use super::{auroc, FeatureScaling, NeighborScope, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{standardized, FeatureMap};
use crate::fieldrender::{draw_jitter, render_pixels, Camera, Field, ImageField2D, RenderTape, VoxelField3D};
use crate::numkit::{adam_step, load_checkpoint, save_checkpoint, AdamConfig, AdamState, Mlp, MlpSpec, ParamStore, Tensor};
use crate::raster::Image;
use crate::robustloss::{neighbor_sets, total_step_loss, NeighborSets, PatchColors};
use crate::sampling::{gather_patch, sample_batch, SamplerConfig};
use crate::scenegen::{psnr, ssim_metric, Dataset, SceneMode, VOXEL_BOUNDS};

pub const CHECKPOINT_FILE: &str = "checkpoint.rfck";

const SAMPLER_SALT: u64 = 0x5DEE_CE66_D1CE_5EED;
const JITTER_SALT: u64 = 0xA076_1D64_78BD_642F;
/// Training pixels per view scored at each evaluation.
const EVAL_PIXELS_PER_VIEW: usize = 4096;
const FIELD_PREFIX: &str = "field.";
const G_PREFIX: &str = "g.";
const INIT_RAW_DENSITY: f64 = -2.0;

struct Uncertainty {
    mlp: Mlp,
    store: ParamStore,
    adam: AdamState,
}

#[derive(Clone, Copy, Debug, Default)]
struct LossAccum {
    sums: [f64; 4],
    steps: usize,
}

impl LossAccum {
    fn mean(&self, k: usize) -> f64 {
        if self.steps == 0 {
            f64::NAN
        } else {
            self.sums[k] / self.steps as f64
        }
    }
}

/// Where [`train_with_output`] writes its artifacts.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputOptions {
    pub dir: PathBuf,
    /// Training views exported as beta heatmaps at each evaluation.
    pub heatmap_views: usize,
    pub plot: bool,
    pub checkpoint: bool,
}

impl OutputOptions {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            heatmap_views: 2,
            plot: true,
            checkpoint: true,
        }
    }
}

/// State of one training run over a borrowed dataset.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    cfg: TrainConfig,
    sampler: SamplerConfig,
    view_sizes: Vec<(usize, usize)>,
    features: Vec<FeatureMap>,
    field: Field,
    field_store: ParamStore,
    field_adam: AdamState,
    g: Option<Uncertainty>,
    iter: usize,
    rows: Vec<EvalRow>,
    accum: LossAccum,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        dataset.validate()?;
        let view_sizes = dataset.view_sizes();
        let sampler = SamplerConfig {
            seed: cfg.seed ^ SAMPLER_SALT,
            ..cfg.sampler.clone()
        };
        let min_w = view_sizes.iter().map(|v| v.0).min().unwrap_or(0);
        let min_h = view_sizes.iter().map(|v| v.1).min().unwrap_or(0);
        sampler.validate(min_w, min_h)?;

        let raw: Vec<FeatureMap> = dataset.train.iter().map(|v| v.features.clone()).collect();
        let features = match cfg.feature_scaling {
            FeatureScaling::None => raw,
            FeatureScaling::UnitLength => raw.iter().map(FeatureMap::l2_normalized).collect(),
            FeatureScaling::Standardize => standardized(&raw)?,
        };

        let mut field_store = ParamStore::new();
        let field = match dataset.config.mode {
            SceneMode::Flat2d => {
                let [w, h] = cfg.flat_resolution.unwrap_or([view_sizes[0].0, view_sizes[0].1]);
                Field::Flat(ImageField2D::build(&mut field_store, w, h, [0.5; 3])?)
            }
            SceneMode::Voxel3d => {
                let (lo, hi) = VOXEL_BOUNDS;
                Field::Voxel(VoxelField3D::build(
                    &mut field_store,
                    [cfg.voxel_grid; 3],
                    lo,
                    hi,
                    INIT_RAW_DENSITY,
                    0.0,
                )?)
            }
        };
        let field_adam = AdamState::for_params(&field_store, AdamConfig::with_lr(cfg.lr_field));

        let g = if cfg.uncertainty {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut store = ParamStore::new();
            let spec = MlpSpec {
                hidden: cfg.g_hidden.clone(),
                ..MlpSpec::uncertainty_head(dataset.feature_channels(), cfg.beta_min)
            };
            let last = spec.hidden.len();
            let mlp = Mlp::build(spec, &mut store, "", &mut rng)?;
            // Inverse of the shifted softplus.
            let y = cfg.g_init_beta - cfg.beta_min;
            let bias = y + (-(-y).exp_m1()).ln();
            store
                .segment_values_mut(&format!("{last}.bias"))
                .ok_or_else(|| Error::Segment {
                    name: format!("{last}.bias"),
                    message: "missing output bias".into(),
                })?
                .fill(bias);
            let adam = AdamState::for_params(&store, AdamConfig::with_lr(cfg.lr_g));
            Some(Uncertainty { mlp, store, adam })
        } else {
            None
        };

        Ok(Self {
            dataset,
            cfg,
            sampler,
            view_sizes,
            features,
            field,
            field_store,
            field_adam,
            g,
            iter: 0,
            rows: Vec::new(),
            accum: LossAccum::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn is_done(&self) -> bool {
        self.iter >= self.cfg.iterations
    }

    pub fn field_params(&self) -> &ParamStore {
        &self.field_store
    }

    pub fn g_params(&self) -> Option<&ParamStore> {
        self.g.as_ref().map(|g| &g.store)
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            rows: self.rows.clone(),
            heatmap_range: [self.cfg.beta_min, self.cfg.heatmap_beta_max],
            checkpoint: None,
        }
    }

    /// One optimisation step. Returns the evaluation row when this step
    /// completed an evaluation interval or the run.
    pub fn step(&mut self) -> Result<Option<EvalRow>> {
        if self.is_done() {
            return Err(Error::InvalidInput(format!("run already finished at iteration {}", self.iter)));
        }
        let it = self.iter;
        let ds = self.dataset;
        let c = ds.feature_channels();
        let batch = sample_batch(&self.sampler, &self.view_sizes, it as u64)?;

        let mut observed = Vec::with_capacity(batch.len());
        let mut feats: Vec<f32> = Vec::new();
        let mut groups = Vec::new();
        let mut offsets = Vec::with_capacity(batch.len());
        let mut n_rays = 0;
        for (pi, p) in batch.iter().enumerate() {
            let (col, f) = gather_patch(&ds.train[p.view_id].image, &self.features[p.view_id], p);
            offsets.push(n_rays);
            n_rays += p.len();
            groups.extend(std::iter::repeat_n(pi, p.len()));
            observed.push(col);
            feats.extend(f);
        }

        let settings = &self.cfg.render;
        let ns = settings.n_samples;
        let jitter = self.field.is_voxel().then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ JITTER_SALT);
            rng.set_stream(it as u64);
            draw_jitter(&mut rng, n_rays, ns)
        });
        let renders: Vec<(Vec<[f64; 3]>, RenderTape)> = batch
            .par_iter()
            .enumerate()
            .map(|(pi, p)| {
                let pixels: Vec<(f64, f64)> = p.coords.iter().map(|&(x, y)| (x as f64 + 0.5, y as f64 + 0.5)).collect();
                let j = jitter.as_ref().map(|j| &j[offsets[pi] * ns..(offsets[pi] + p.len()) * ns]);
                render_pixels(&self.field, &self.field_store, &ds.train[p.view_id].camera, &pixels, settings, j)
            })
            .collect::<Result<_>>()?;

        let (beta, g_cache) = match &self.g {
            Some(g) => {
                let x: Vec<f64> = feats.iter().map(|&v| f64::from(v)).collect();
                let (b, cache) = g.mlp.forward_batch(g.store.values(), &x)?;
                (b, Some(cache))
            }
            None => (vec![1.0; n_rays], None),
        };
        let w = self.cfg.objective.weights;
        let sets = if self.g.is_some() && w.lambda4 > 0.0 {
            let scope = match self.cfg.neighbor_scope {
                NeighborScope::Batch => None,
                NeighborScope::Patch => Some(groups.as_slice()),
            };
            neighbor_sets(&feats, c, self.cfg.eta, scope)?
        } else {
            NeighborSets::singletons(n_rays)
        };

        let patches: Vec<PatchColors> = batch
            .iter()
            .zip(observed)
            .zip(&renders)
            .map(|((p, o), (r, _))| PatchColors {
                patch_size: p.patch_size,
                observed: o,
                rendered: r.clone(),
            })
            .collect();
        let bundle = total_step_loss(&self.cfg.objective, &patches, &beta, &sets)?;
        if let Some(component) = bundle.non_finite_component() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                component: component.to_string(),
            });
        }

        let scale = self.cfg.lr_scale(it);
        if bundle.routing.field_receives() {
            let len = self.field_store.len();
            let field = &self.field;
            let per_patch = |pi: usize| -> Result<Vec<f64>> {
                let mut g = vec![0.0; len];
                let n = batch[pi].len();
                renders[pi].1.backward(field, settings, &bundle.grad_rendered[offsets[pi]..offsets[pi] + n], &mut g)?;
                Ok(g)
            };
            let total = if self.cfg.deterministic {
                let parts: Vec<Vec<f64>> = (0..batch.len()).into_par_iter().map(per_patch).collect::<Result<_>>()?;
                let mut acc = vec![0.0; len];
                for p in &parts {
                    acc.iter_mut().zip(p).for_each(|(a, b)| *a += b);
                }
                acc
            } else {
                (0..batch.len()).into_par_iter().map(per_patch).try_reduce(
                    || vec![0.0; len],
                    |mut a, b| {
                        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                        Ok(a)
                    },
                )?
            };
            self.field_store.accumulate_grads(&total)?;
            self.field_adam.set_lr(self.cfg.lr_field * scale);
            adam_step(&mut self.field_store, &mut self.field_adam)?;
        }

        if let (Some(g), Some(cache)) = (self.g.as_mut(), g_cache) {
            if bundle.routing.g_receives() && it >= self.cfg.warmup_iters {
                let grads = g.mlp.backward_batch(g.store.values(), &cache, &bundle.grad_beta)?;
                g.store.accumulate_grads(&grads)?;
                g.adam.set_lr(self.cfg.lr_g * scale);
                adam_step(&mut g.store, &mut g.adam)?;
            }
        }

        for (s, v) in self.accum.sums.iter_mut().zip([bundle.value, bundle.l_nerf, bundle.l_uncer, bundle.l_reg]) {
            *s += v;
        }
        self.accum.steps += 1;
        self.iter += 1;

        if self.iter.is_multiple_of(self.cfg.eval_every) || self.iter == self.cfg.iterations {
            let row = self.evaluate()?;
            self.rows.push(row);
            self.accum = LossAccum::default();
            return Ok(Some(row));
        }
        Ok(None)
    }

    /// Steps until iteration `target` (capped at the configured total).
    pub fn run_until(&mut self, target: usize) -> Result<()> {
        while self.iter < target.min(self.cfg.iterations) {
            self.step()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<RunReport> {
        self.run_until(self.cfg.iterations)?;
        Ok(self.report())
    }

    /// Renders a full view, clamped to `[0, 1]`.
    pub fn render_image(&self, camera: &Camera) -> Result<Image> {
        let (w, h) = (camera.width, camera.height);
        let rows: Vec<Vec<[f64; 3]>> = (0..h)
            .into_par_iter()
            .map(|y| {
                let pixels: Vec<(f64, f64)> = (0..w).map(|x| (x as f64 + 0.5, y as f64 + 0.5)).collect();
                render_pixels(&self.field, &self.field_store, camera, &pixels, &self.cfg.render, None).map(|(c, _)| c)
            })
            .collect::<Result<_>>()?;
        Ok(Image::from_fn(w, h, |x, y| rows[y][x].map(|v| v.clamp(0.0, 1.0))))
    }

    /// Beta at the listed pixel indices of training view `view`.
    fn beta_at(&self, view: usize, pixels: &[usize]) -> Result<Vec<f64>> {
        let Some(g) = &self.g else {
            return Ok(vec![1.0; pixels.len()]);
        };
        let f = &self.features[view];
        let c = f.channels;
        let mut x = Vec::with_capacity(pixels.len() * c);
        for &p in pixels {
            x.extend(f.data[p * c..(p + 1) * c].iter().map(|&v| f64::from(v)));
        }
        Ok(g.mlp.forward_batch(g.store.values(), &x)?.0)
    }

    /// Beta for every pixel of training view `view`, row-major.
    pub fn beta_map(&self, view: usize) -> Result<Vec<f64>> {
        let v = self
            .dataset
            .train
            .get(view)
            .ok_or_else(|| Error::InvalidInput(format!("no training view {view}")))?;
        let all: Vec<usize> = (0..v.mask.len()).collect();
        self.beta_at(view, &all)
    }

    /// Mean test PSNR and SSIM; NaN without test views.
    pub fn test_metrics(&self) -> Result<(f64, f64)> {
        let test = &self.dataset.test;
        if test.is_empty() {
            return Ok((f64::NAN, f64::NAN));
        }
        let (mut p, mut s) = (0.0, 0.0);
        for t in test {
            let img = self.render_image(&t.camera)?;
            p += psnr(&img, &t.image)?;
            s += ssim_metric(&img, &t.image)?;
        }
        Ok((p / test.len() as f64, s / test.len() as f64))
    }

    /// Mean beta on distractor and static training pixels, and the AUROC of
    /// beta against the masks.
    pub fn beta_stats(&self) -> Result<(f64, f64, f64)> {
        let per_view: Vec<(Vec<f64>, Vec<bool>)> = (0..self.dataset.train.len())
            .into_par_iter()
            .map(|v| {
                let mask = &self.dataset.train[v].mask;
                let stride = mask.len().div_ceil(EVAL_PIXELS_PER_VIEW).max(1);
                let pixels: Vec<usize> = (0..mask.len()).step_by(stride).collect();
                let beta = self.beta_at(v, &pixels)?;
                Ok((beta, pixels.iter().map(|&p| mask[p]).collect()))
            })
            .collect::<Result<_>>()?;
        let scores: Vec<f64> = per_view.iter().flat_map(|v| v.0.iter().copied()).collect();
        let labels: Vec<bool> = per_view.iter().flat_map(|v| v.1.iter().copied()).collect();
        let mean_where = |want: bool| {
            let (s, n) = scores
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == want)
                .fold((0.0, 0usize), |(s, n), (b, _)| (s + b, n + 1));
            if n == 0 {
                f64::NAN
            } else {
                s / n as f64
            }
        };
        Ok((mean_where(true), mean_where(false), auroc(&scores, &labels).unwrap_or(f64::NAN)))
    }

    pub fn evaluate(&self) -> Result<EvalRow> {
        let (test_psnr, test_ssim) = self.test_metrics()?;
        let (beta_distractor, beta_static, beta_auroc) = self.beta_stats()?;
        Ok(EvalRow {
            iter: self.iter,
            loss: self.accum.mean(0),
            l_nerf: self.accum.mean(1),
            l_uncer: self.accum.mean(2),
            l_reg: self.accum.mean(3),
            test_psnr,
            test_ssim,
            beta_distractor,
            beta_static,
            beta_auroc,
        })
    }

    fn checkpoint_tensors(&self) -> Vec<Tensor> {
        let mut t = self.field_store.to_tensors(FIELD_PREFIX);
        let adam = |t: &mut Vec<Tensor>, name: &str, a: &AdamState| {
            t.push(Tensor::new(format!("adam.{name}.m"), vec![a.m.len()], a.m.clone()));
            t.push(Tensor::new(format!("adam.{name}.v"), vec![a.v.len()], a.v.clone()));
            t.push(Tensor::scalar(format!("adam.{name}.t"), a.t as f64));
        };
        adam(&mut t, "field", &self.field_adam);
        if let Some(g) = &self.g {
            t.extend(g.store.to_tensors(G_PREFIX));
            adam(&mut t, "g", &g.adam);
        }
        t.push(Tensor::scalar("state.iter", self.iter as f64));
        let mut acc = self.accum.sums.to_vec();
        acc.push(self.accum.steps as f64);
        t.push(Tensor::new("state.accum", vec![acc.len()], acc));
        let rows: Vec<f64> = self.rows.iter().flat_map(|r| r.to_array()).collect();
        t.push(Tensor::new("state.rows", vec![self.rows.len(), EvalRow::WIDTH], rows));
        t
    }

    /// Saves parameters, optimiser moments, the iteration counter and the
    /// evaluation rows so far.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.checkpoint_tensors())
    }

    /// Rebuilds a trainer for `cfg` and restores the state saved at `path`.
    pub fn resume(dataset: &'a Dataset, cfg: TrainConfig, path: &Path) -> Result<Self> {
        let tensors = load_checkpoint(path)?;
        let mut tr = Self::new(dataset, cfg)?;
        let find = |name: &str| -> Result<&Tensor> {
            tensors.iter().find(|t| t.name == name).ok_or_else(|| Error::Segment {
                name: name.to_string(),
                message: "missing from checkpoint".into(),
            })
        };
        let restore_adam = |a: &mut AdamState, name: &str| -> Result<()> {
            for (field, dst) in [("m", &mut a.m), ("v", &mut a.v)] {
                let key = format!("adam.{name}.{field}");
                let t = find(&key)?;
                if t.data.len() != dst.len() {
                    return Err(Error::Segment {
                        name: key,
                        message: format!("holds {} values, expected {}", t.data.len(), dst.len()),
                    });
                }
                dst.copy_from_slice(&t.data);
            }
            a.t = scalar(find(&format!("adam.{name}.t"))?)? as u64;
            Ok(())
        };
        tr.field_store.load_tensors(FIELD_PREFIX, &tensors)?;
        restore_adam(&mut tr.field_adam, "field")?;
        match tr.g.as_mut() {
            Some(g) => {
                g.store.load_tensors(G_PREFIX, &tensors)?;
                restore_adam(&mut g.adam, "g")?;
            }
            None => {
                if let Some(t) = tensors.iter().find(|t| t.name.starts_with(G_PREFIX)) {
                    return Err(Error::Segment {
                        name: t.name.clone(),
                        message: "checkpoint has an uncertainty network but the config disables it".into(),
                    });
                }
            }
        }
        tr.iter = scalar(find("state.iter")?)? as usize;
        let acc = &find("state.accum")?.data;
        if acc.len() != 5 {
            return Err(Error::Segment {
                name: "state.accum".into(),
                message: format!("expected 5 values, found {}", acc.len()),
            });
        }
        tr.accum = LossAccum {
            sums: [acc[0], acc[1], acc[2], acc[3]],
            steps: acc[4] as usize,
        };
        let rows = find("state.rows")?;
        if rows.shape.len() != 2 || rows.shape[1] != EvalRow::WIDTH {
            return Err(Error::Segment {
                name: "state.rows".into(),
                message: format!("unexpected shape {:?}", rows.shape),
            });
        }
        tr.rows = rows.data.chunks_exact(EvalRow::WIDTH).map(EvalRow::from_slice).collect();
        if tr.iter > tr.cfg.iterations {
            return Err(Error::Config(format!(
                "checkpoint is at iteration {} beyond the configured {}",
                tr.iter, tr.cfg.iterations
            )));
        }
        Ok(tr)
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    match t.data[..] {
        [v] => Ok(v),
        _ => Err(Error::Segment {
            name: t.name.clone(),
            message: "expected a scalar".into(),
        }),
    }
}

/// Trains to completion without writing anything.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<RunReport> {
    Trainer::new(dataset, cfg.clone())?.run()
}

/// The same run with beta fixed to 1: plain l2 reconstruction.
pub fn run_baseline(dataset: &Dataset, cfg: &TrainConfig) -> Result<RunReport> {
    let cfg = TrainConfig {
        uncertainty: false,
        ..cfg.clone()
    };
    train(dataset, &cfg)
}

fn write_heatmaps(tr: &Trainer, out: &OutputOptions) -> Result<()> {
    if out.heatmap_views == 0 || tr.g.is_none() {
        return Ok(());
    }
    let dir = out.dir.join("heatmaps");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let range = [tr.cfg.beta_min, tr.cfg.heatmap_beta_max];
    for v in 0..out.heatmap_views.min(tr.dataset.train.len()) {
        let img = &tr.dataset.train[v].image;
        let beta = tr.beta_map(v)?;
        save_beta_heatmap(
            &dir.join(format!("beta_iter{:06}_view{v:03}.png", tr.iter)),
            img.width,
            img.height,
            &beta,
            range,
        )?;
    }
    Ok(())
}

/// Trains to completion, writing `report.csv`, heatmaps, the convergence plot
/// and the final checkpoint under `out.dir`.
pub fn train_with_output(dataset: &Dataset, cfg: &TrainConfig, out: &OutputOptions) -> Result<RunReport> {
    std::fs::create_dir_all(&out.dir).map_err(|e| Error::io(&out.dir, e))?;
    let mut tr = Trainer::new(dataset, cfg.clone())?;
    while !tr.is_done() {
        if tr.step()?.is_some() {
            write_heatmaps(&tr, out)?;
        }
    }
    let mut report = tr.report();
    if out.checkpoint {
        let path = out.dir.join(CHECKPOINT_FILE);
        tr.save_checkpoint(&path)?;
        report.checkpoint = Some(path);
    }
    report.write_csv(&out.dir.join("report.csv"))?;
    if out.plot {
        save_convergence_plot(&report, &out.dir.join("convergence.png"))?;
    }
    Ok(report)
}
