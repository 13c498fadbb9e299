//! Error norms, convergence orders and window statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    /// All cell centers at all time levels.
    #[default]
    SpaceTime,
    /// Cell centers at `t = T` only.
    FinalTime,
}

/// `||numeric - reference||_p / ||reference||_p` with optional per-point
/// measure weights (uniform weights cancel in the ratio).
pub fn rel_error(numeric: &[f64], reference: &[f64], p: u32, weights: Option<&[f64]>) -> Result<f64> {
    if numeric.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: numeric.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != reference.len() {
            return Err(Error::DimensionMismatch {
                expected: reference.len(),
                got: w.len(),
            });
        }
    }
    let pow = |v: f64| match p {
        1 => v.abs(),
        2 => v * v,
        _ => unreachable!(),
    };
    if !(p == 1 || p == 2) {
        return Err(Error::InvalidArgument(format!("p = {p} not in {{1, 2}}")));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (k, (a, b)) in numeric.iter().zip(reference).enumerate() {
        let w = weights.map_or(1.0, |w| w[k]);
        num += w * pow(a - b);
        den += w * pow(*b);
    }
    if den <= 0.0 {
        return Err(Error::InvalidArgument("reference norm is zero".into()));
    }
    Ok(if p == 2 { (num / den).sqrt() } else { num / den })
}

/// Observed order `log(e_coarse / e_fine) / log(ratio)`.
pub fn convergence_order(e_coarse: f64, e_fine: f64, ratio: f64) -> Result<f64> {
    if !(e_coarse > 0.0 && e_fine > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "errors must be positive, got {e_coarse} and {e_fine}"
        )));
    }
    Ok((e_coarse / e_fine).ln() / ratio.ln())
}

/// Mean of the last `w` entries.
pub fn window_average(series: &[f64], w: usize) -> Result<f64> {
    if w == 0 || series.len() < w {
        return Err(Error::InvalidArgument(format!(
            "window {w} exceeds series length {}",
            series.len()
        )));
    }
    Ok(series[series.len() - w..].iter().sum::<f64>() / w as f64)
}

/// Errors of one run. Moment fields are set for stochastic problems only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rel_l2: f64,
    pub rel_l1: f64,
    pub final_time_rel_l2: f64,
    pub expectation_l2: Option<f64>,
    pub expectation_l1: Option<f64>,
    pub variance_l2: Option<f64>,
    pub variance_l1: Option<f64>,
    pub surface: Surface,
    /// Mean of the headline error over the last optimizer iterations.
    pub windowed: f64,
    pub window: usize,
}
