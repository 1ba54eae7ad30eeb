use serde::{Deserialize, Serialize};

use super::{Metric, MetricProfile};
use crate::error::{Error, Result};

pub const DEFAULT_RADAR_ALPHA: f64 = 1.2;

/// Proximity of one candidate profile to the reference, per metric.
///
/// `s_m = 1 − |v_m − r_m| / (α·d_m)` where `d_m` is the larger of the two
/// candidates' distances to the reference. Scores lie in `[1 − 1/α, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarScores {
    pub alpha: f64,
    pub scores: Vec<(Metric, f64)>,
}

impl RadarScores {
    pub fn get(&self, m: Metric) -> Option<f64> {
        self.scores.iter().find(|(k, _)| *k == m).map(|&(_, s)| s)
    }
}

/// Scores the two candidates against `reference`. Metrics missing from any of
/// the three profiles are skipped; metrics where both candidates sit exactly
/// on the reference score 1.
pub fn radar_scores(
    reference: &MetricProfile,
    vae: &MetricProfile,
    gan: &MetricProfile,
    alpha: f64,
) -> Result<(RadarScores, RadarScores)> {
    if !(alpha > 1.0) {
        return Err(Error::invalid(format!("radar alpha must exceed 1, got {alpha}")));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for m in Metric::ALL {
        let (Some(r), Some(v), Some(g)) = (reference.get(m), vae.get(m), gan.get(m)) else {
            continue;
        };
        let (dv, dg) = ((v - r).abs(), (g - r).abs());
        let d = dv.max(dg);
        if d > 0.0 {
            a.push((m, 1.0 - dv / (alpha * d)));
            b.push((m, 1.0 - dg / (alpha * d)));
        } else {
            a.push((m, 1.0));
            b.push((m, 1.0));
        }
    }
    Ok((
        RadarScores { alpha, scores: a },
        RadarScores { alpha, scores: b },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(mse: f64, hf: f64) -> MetricProfile {
        MetricProfile {
            mse: Some(mse),
            psnr: None,
            hf_ratio: hf,
            sharpness: 0.0,
            saturation: 0.0,
            tex_entropy: 0.0,
            edge_skew: 0.0,
            dct_blockiness: 0.0,
        }
    }

    #[test]
    fn table_mse_row() {
        let (v, g) =
            radar_scores(&profile(0.0, 0.0217), &profile(0.0043, 0.0160), &profile(0.0085, 0.0149), 1.2)
                .unwrap();
        let sv = v.get(Metric::Mse).unwrap();
        let sg = g.get(Metric::Mse).unwrap();
        assert!((sv - (1.0 - 0.0043 / (1.2 * 0.0085))).abs() < 1e-12);
        assert!((sv - 0.5784).abs() < 1e-3);
        assert!((sg - (1.0 - 1.0 / 1.2)).abs() < 1e-12);
        assert!(v.get(Metric::Psnr).is_none());
    }

    #[test]
    fn equal_to_reference_scores_one() {
        let r = profile(0.0, 0.5);
        let (v, g) = radar_scores(&r, &r, &profile(0.1, 0.2), 1.2).unwrap();
        assert_eq!(v.get(Metric::HfRatio), Some(1.0));
        assert!((g.get(Metric::HfRatio).unwrap() - (1.0 - 1.0 / 1.2)).abs() < 1e-12);
        // zero spread on a metric: both defined as 1
        assert_eq!(g.get(Metric::Sharpness), Some(1.0));
    }

    #[test]
    fn alpha_must_exceed_one() {
        let r = profile(0.0, 0.5);
        assert!(radar_scores(&r, &r, &r, 1.0).is_err());
        assert!(radar_scores(&r, &r, &r, f64::NAN).is_err());
    }
}
