//! Latent-dimension sweep with knee detection.

use super::train::{fit, TrainingConfig};
use crate::auxdata::AuxiliarySpec;
use crate::dataset::SpatioTemporalDataset;
use crate::error::invalid;
use crate::Result;

/// Index of the knee of `values`: the interior point with the largest
/// absolute discrete second difference. `None` for fewer than three points
/// or a (numerically) straight line.
pub fn knee_index(values: &[f64]) -> Option<usize> {
    if values.len() < 3 {
        return None;
    }
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut best: Option<(usize, f64)> = None;
    for i in 1..values.len() - 1 {
        let d2 = (values[i + 1] - 2.0 * values[i] + values[i - 1]).abs();
        if best.is_none_or(|(_, b)| d2 > b) {
            best = Some((i, d2));
        }
    }
    let (i, d2) = best?;
    (d2 > 1e-9 * (1.0 + scale)).then_some(i)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub latent_dims: Vec<usize>,
    /// Final-epoch mean ELBO per latent dimension.
    pub elbo: Vec<f64>,
    /// Latent dimension at the knee, if any.
    pub knee: Option<usize>,
}

/// Train one model per latent dimension and locate the knee of the
/// resulting ELBO curve.
pub fn dimension_sweep(
    dataset: &SpatioTemporalDataset,
    aux: &AuxiliarySpec,
    latent_dims: &[usize],
    config: &TrainingConfig,
) -> Result<SweepResult> {
    if latent_dims.len() < 3 {
        return Err(invalid("a sweep needs at least three latent dimensions"));
    }
    if latent_dims.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("latent dimensions must be strictly increasing"));
    }
    let mut elbo = Vec::with_capacity(latent_dims.len());
    for &p in latent_dims {
        let cfg = TrainingConfig {
            latent_dim: p,
            ..config.clone()
        };
        let out = fit(dataset, aux, &cfg)?;
        let last = *out.trace.last().expect("at least one epoch");
        log::info!("P = {p}: final ELBO {last:.6}");
        elbo.push(last);
    }
    let knee = knee_index(&elbo).map(|i| latent_dims[i]);
    Ok(SweepResult {
        latent_dims: latent_dims.to_vec(),
        elbo,
        knee,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knee_examples() {
        assert_eq!(knee_index(&[0.0, 10.0, 14.0, 15.0, 15.2]), Some(1));
        assert_eq!(knee_index(&[1.0, 2.0, 3.0, 4.0]), None);
        assert_eq!(knee_index(&[1.0, 2.0]), None);
        let mut bend = vec![];
        for p in 5..=14 {
            bend.push(if p <= 9 { 10.0 * p as f64 } else { 90.0 + 0.5 * (p - 9) as f64 });
        }
        assert_eq!(knee_index(&bend).map(|i| i + 5), Some(9));
    }

    #[test]
    fn sweep_needs_three_dims() {
        let ds = SpatioTemporalDataset::new(vec![], vec![], ndarray::Array2::zeros((0, 2)), None).unwrap();
        let aux = AuxiliarySpec::Rbf {
            spatial_levels: vec![1],
            temporal_levels: vec![1],
        };
        assert!(dimension_sweep(&ds, &aux, &[1, 2], &TrainingConfig::default()).is_err());
        assert!(dimension_sweep(&ds, &aux, &[1, 3, 2], &TrainingConfig::default()).is_err());
    }
}
