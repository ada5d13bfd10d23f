use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Column order of [`RunReport::to_csv`].
pub const CSV_HEADER: &str =
    "iter,loss,l_nerf,l_uncer,l_reg,test_psnr,test_ssim,beta_distractor,beta_static,beta_auroc";

/// Metrics at one evaluation point. Loss components are averaged over the
/// iterations since the previous row; beta statistics are over training
/// pixels and are NaN when the corresponding pixel class is absent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRow {
    pub iter: usize,
    pub loss: f64,
    pub l_nerf: f64,
    pub l_uncer: f64,
    pub l_reg: f64,
    pub test_psnr: f64,
    pub test_ssim: f64,
    pub beta_distractor: f64,
    pub beta_static: f64,
    pub beta_auroc: f64,
}

impl EvalRow {
    pub(crate) const WIDTH: usize = 10;

    pub(crate) fn to_array(self) -> [f64; Self::WIDTH] {
        [
            self.iter as f64,
            self.loss,
            self.l_nerf,
            self.l_uncer,
            self.l_reg,
            self.test_psnr,
            self.test_ssim,
            self.beta_distractor,
            self.beta_static,
            self.beta_auroc,
        ]
    }

    pub(crate) fn from_slice(v: &[f64]) -> Self {
        Self {
            iter: v[0] as usize,
            loss: v[1],
            l_nerf: v[2],
            l_uncer: v[3],
            l_reg: v[4],
            test_psnr: v[5],
            test_ssim: v[6],
            beta_distractor: v[7],
            beta_static: v[8],
            beta_auroc: v[9],
        }
    }

    /// Bitwise equality, treating NaN payloads as values.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.to_array().iter().zip(other.to_array()).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub rows: Vec<EvalRow>,
    /// Fixed `[lo, hi]` beta range used to normalise heatmaps.
    pub heatmap_range: [f64; 2],
    pub checkpoint: Option<PathBuf>,
}

impl RunReport {
    pub fn final_row(&self) -> Option<&EvalRow> {
        self.rows.last()
    }

    /// Same rows, bit for bit.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.rows.len() == other.rows.len() && self.rows.iter().zip(&other.rows).all(|(a, b)| a.bit_eq(b))
    }

    /// Values are written in shortest round-trip form, so parsing is lossless.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let a = r.to_array();
            write!(s, "{}", r.iter).expect("string write");
            for v in &a[1..] {
                write!(s, ",{v:?}").expect("string write");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parses rows written by [`RunReport::to_csv`].
    pub fn rows_from_csv(text: &str) -> Result<Vec<EvalRow>> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(Error::InvalidInput("report CSV header mismatch".into()));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                let v: Vec<f64> = l
                    .split(',')
                    .map(|f| f.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::InvalidInput(format!("report row {}: {e}", i + 1)))?;
                if v.len() != EvalRow::WIDTH {
                    return Err(Error::InvalidInput(format!("report row {} has {} fields", i + 1, v.len())));
                }
                Ok(EvalRow::from_slice(&v))
            })
            .collect()
    }
}
