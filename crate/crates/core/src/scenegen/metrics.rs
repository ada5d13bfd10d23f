use crate::error::{Error, Result};
use crate::raster::Image;
use crate::robustloss::{ssim_components, SsimConstants, METRIC_WINDOW};

/// Reported when the images are (numerically) identical.
pub const PSNR_CAP_DB: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "images {}x{} and {}x{} differ in shape",
            a.width, a.height, b.width, b.height
        )))
    }
}

/// Peak signal-to-noise ratio in dB for peak value 1.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64;
    if mse < MSE_FLOOR {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Mean of `L * C * S` over pixels, 11x11 uniform window, standard constants.
pub fn ssim_metric(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let maps = ssim_components(&a.data, &b.data, a.width, a.height, METRIC_WINDOW, SsimConstants::default())?;
    let n = maps.l.len() as f64;
    Ok(maps.l.iter().zip(&maps.c).zip(&maps.s).map(|((l, c), s)| l * c * s).sum::<f64>() / n)
}
