use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::iterations_to_reach;
use super::report::RunReport;
use super::train::train;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::robustloss::SsimMode;
use crate::sampling::SamplingStrategy;
use crate::scenegen::Dataset;

/// Loss-suite variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// (a) without the variance regulariser.
    NoReg,
    /// (b) squared colour error in the uncertainty loss instead of SSIM.
    L2Uncer,
    /// (c) the uncertainty loss also trains the field.
    UncerToField,
    Ours,
}

impl LossVariant {
    pub fn label(self) -> &'static str {
        match self {
            LossVariant::NoReg => "a_no_reg",
            LossVariant::L2Uncer => "b_l2_uncer",
            LossVariant::UncerToField => "c_uncer_to_field",
            LossVariant::Ours => "ours",
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            LossVariant::NoReg => cfg.objective.weights.lambda4 = 0.0,
            LossVariant::L2Uncer => cfg.objective.ssim_mode = SsimMode::L2,
            LossVariant::UncerToField => cfg.objective.coupling.uncer_to_field = true,
            LossVariant::Ours => {}
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSuite {
    Dilation(Vec<usize>),
    Loss(Vec<LossVariant>),
    Sampler(Vec<SamplingStrategy>),
}

impl AblationSuite {
    pub fn dilation_default() -> Self {
        AblationSuite::Dilation(vec![1, 2, 4, 8])
    }

    pub fn loss_default() -> Self {
        AblationSuite::Loss(vec![LossVariant::NoReg, LossVariant::L2Uncer, LossVariant::UncerToField, LossVariant::Ours])
    }

    pub fn sampler_default() -> Self {
        AblationSuite::Sampler(vec![
            SamplingStrategy::Random,
            SamplingStrategy::ContiguousPatch,
            SamplingStrategy::DilatedPatch,
        ])
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationSuite::Dilation(_) => "dilation",
            AblationSuite::Loss(_) => "loss",
            AblationSuite::Sampler(_) => "sampler",
        }
    }

    /// Labelled configs, one per variant, all sharing `base`'s seed.
    pub fn variants(&self, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
        match self {
            AblationSuite::Dilation(ds) => ds
                .iter()
                .map(|&d| {
                    let mut c = base.clone();
                    c.sampler.strategy = SamplingStrategy::DilatedPatch;
                    c.sampler.dilation = d;
                    (format!("d{d}"), c)
                })
                .collect(),
            AblationSuite::Loss(vs) => vs.iter().map(|v| (v.label().to_string(), v.apply(base))).collect(),
            AblationSuite::Sampler(ss) => ss
                .iter()
                .map(|&s| {
                    let mut c = base.clone();
                    c.sampler.strategy = s;
                    let label = match s {
                        SamplingStrategy::Random => "random",
                        SamplingStrategy::ContiguousPatch => "patch",
                        SamplingStrategy::DilatedPatch => "dilated",
                    };
                    (label.to_string(), c)
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub report: RunReport,
    /// First evaluated iteration reaching the first variant's final PSNR.
    pub iters_to_reference: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub suite: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const CSV_HEADER: &'static str =
        "variant,final_iter,test_psnr,test_ssim,beta_auroc,beta_distractor,beta_static,iters_to_reference";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let f = r.report.final_row();
            let g = |k: fn(&super::EvalRow) -> f64| f.map_or(f64::NAN, k);
            writeln!(
                s,
                "{},{},{:?},{:?},{:?},{:?},{:?},{}",
                r.variant,
                f.map_or(0, |f| f.iter),
                g(|f| f.test_psnr),
                g(|f| f.test_ssim),
                g(|f| f.beta_auroc),
                g(|f| f.beta_distractor),
                g(|f| f.beta_static),
                r.iters_to_reference.map_or_else(|| "never".to_string(), |i| i.to_string())
            )
            .expect("string write");
        }
        s
    }

    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// One training run per variant of `suite` on `dataset`.
///
/// Variants run in parallel; each run is itself deterministic, so the table
/// does not depend on scheduling.
pub fn run_ablation(dataset: &Dataset, base: &TrainConfig, suite: &AblationSuite) -> Result<AblationTable> {
    let variants = suite.variants(base);
    if variants.is_empty() {
        return Err(Error::Config(format!("{} suite has no variants", suite.name())));
    }
    let reports: Vec<RunReport> = variants
        .par_iter()
        .map(|(_, cfg)| train(dataset, cfg))
        .collect::<Result<_>>()?;
    let reference = reports[0].final_row().map(|r| r.test_psnr);
    let rows = variants
        .into_iter()
        .zip(reports)
        .map(|((variant, _), report)| AblationRow {
            iters_to_reference: reference.and_then(|t| iterations_to_reach(&report, t)),
            variant,
            report,
        })
        .collect();
    Ok(AblationTable {
        suite: suite.name().to_string(),
        rows,
    })
}
