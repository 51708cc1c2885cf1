//! Auxiliary variables built from space-time coordinates.
//!
//! Three encodings are available: Gaussian radial basis functions on regular
//! spatial and temporal node grids, one-hot spatio-temporal segments, and a
//! seasonal variant whose temporal RBFs run over the position within a
//! period, followed by a one-hot year factor.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{invalid, shape};
use crate::stfield::Location;
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub enum AuxiliarySpec {
    Rbf {
        spatial_levels: Vec<usize>,
        temporal_levels: Vec<usize>,
    },
    Segmentation {
        grid: usize,
        segment_len: usize,
    },
    Seasonal {
        spatial_levels: Vec<usize>,
        temporal_levels: Vec<usize>,
        period: usize,
        /// First time point of each year.
        year_breaks: Vec<i64>,
    },
}

impl AuxiliarySpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Rbf { .. } => "rbf",
            Self::Segmentation { .. } => "segmentation",
            Self::Seasonal { .. } => "seasonal",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let levels = |name: &str, v: &[usize]| {
            if v.is_empty() || v.contains(&0) {
                Err(invalid(format!("{name} levels must be non-empty and positive, got {v:?}")))
            } else {
                Ok(())
            }
        };
        match self {
            Self::Rbf {
                spatial_levels,
                temporal_levels,
            } => {
                levels("spatial", spatial_levels)?;
                levels("temporal", temporal_levels)
            }
            Self::Segmentation { grid, segment_len } => {
                if *grid == 0 || *segment_len == 0 {
                    Err(invalid("segmentation grid and segment length must be at least 1"))
                } else {
                    Ok(())
                }
            }
            Self::Seasonal {
                spatial_levels,
                temporal_levels,
                period,
                year_breaks,
            } => {
                levels("spatial", spatial_levels)?;
                levels("temporal", temporal_levels)?;
                if *period == 0 {
                    return Err(invalid("period must be at least 1"));
                }
                if year_breaks.is_empty() || year_breaks.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid("year breaks must be non-empty and increasing"));
                }
                Ok(())
            }
        }
    }

    /// Number of auxiliary columns; segmentation depends on the time span.
    pub fn dim(&self, n_times: usize) -> usize {
        let sq: fn(&Vec<usize>) -> usize = |v| v.iter().map(|h| h * h).sum();
        match self {
            Self::Rbf {
                spatial_levels,
                temporal_levels,
            } => sq(spatial_levels) + temporal_levels.iter().sum::<usize>(),
            Self::Segmentation { grid, segment_len } => grid * grid + n_times.div_ceil(*segment_len),
            Self::Seasonal {
                spatial_levels,
                temporal_levels,
                year_breaks,
                ..
            } => sq(spatial_levels) + temporal_levels.iter().sum::<usize>() + year_breaks.len(),
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|k| lo + step * k as f64).collect()
}

fn gaussian(d2: f64, width: f64) -> f64 {
    (-d2 / (2.0 * width * width)).exp()
}

/// Spatial RBF block: for each level `h`, an `h × h` node grid over the unit
/// square with kernel width `1/h`.
pub fn spatial_rbf(locations: &[Location], levels: &[usize]) -> Array2<f64> {
    let cols: usize = levels.iter().map(|h| h * h).sum();
    let mut out = Array2::zeros((locations.len(), cols));
    let mut c = 0;
    for &h in levels {
        let nodes = linspace(0.0, 1.0, h);
        let width = 1.0 / h as f64;
        for &a in &nodes {
            for &b in &nodes {
                for (r, s) in locations.iter().enumerate() {
                    out[[r, c]] = gaussian((s[0] - a).powi(2) + (s[1] - b).powi(2), width);
                }
                c += 1;
            }
        }
    }
    out
}

/// Temporal RBF block: for each level `g`, `g` equally spaced nodes over
/// `range` with kernel width equal to the node spacing.
pub fn temporal_rbf(times: &[f64], levels: &[usize], range: (f64, f64)) -> Array2<f64> {
    let cols: usize = levels.iter().sum();
    let mut out = Array2::zeros((times.len(), cols));
    let mut c = 0;
    for &g in levels {
        let nodes = linspace(range.0, range.1, g);
        let width = if g > 1 {
            (range.1 - range.0) / (g - 1) as f64
        } else {
            range.1 - range.0
        }
        .max(1.0);
        for &node in &nodes {
            for (r, &t) in times.iter().enumerate() {
                out[[r, c]] = gaussian((t - node).powi(2), width);
            }
            c += 1;
        }
    }
    out
}

fn concat(blocks: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<ArrayView2<f64>> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("blocks share row count")
}

fn check_rows(locations: &[Location], times: &[i64]) -> Result<()> {
    if locations.len() != times.len() {
        return Err(shape(format!(
            "{} locations but {} times",
            locations.len(),
            times.len()
        )));
    }
    Ok(())
}

/// RBF auxiliary matrix; columns are spatial levels then temporal levels.
pub fn build_rbf(
    locations: &[Location],
    times: &[i64],
    spatial_levels: &[usize],
    temporal_levels: &[usize],
    time_range: (i64, i64),
) -> Result<Array2<f64>> {
    check_rows(locations, times)?;
    AuxiliarySpec::Rbf {
        spatial_levels: spatial_levels.to_vec(),
        temporal_levels: temporal_levels.to_vec(),
    }
    .validate()?;
    let t: Vec<f64> = times.iter().map(|&t| t as f64).collect();
    Ok(concat(&[
        spatial_rbf(locations, spatial_levels),
        temporal_rbf(&t, temporal_levels, (time_range.0 as f64, time_range.1 as f64)),
    ]))
}

/// One-hot spatial (`grid²`) and temporal (`⌈n_t/segment_len⌉`) segments.
/// Points outside the unit square or the time span are clamped into the
/// boundary segment; the number of clamped rows is returned.
pub fn build_segmentation(
    locations: &[Location],
    times: &[i64],
    grid: usize,
    segment_len: usize,
    time_range: (i64, i64),
) -> Result<(Array2<f64>, usize)> {
    check_rows(locations, times)?;
    AuxiliarySpec::Segmentation { grid, segment_len }.validate()?;
    let n_t = (time_range.1 - time_range.0 + 1).max(1) as usize;
    let n_seg = n_t.div_ceil(segment_len);
    let mut out = Array2::zeros((locations.len(), grid * grid + n_seg));
    let mut clamped = 0;
    let cell = |v: f64, clamped: &mut bool| -> usize {
        if !(0.0..=1.0).contains(&v) {
            *clamped = true;
        }
        ((v.clamp(0.0, 1.0) * grid as f64).floor() as usize).min(grid - 1)
    };
    for (r, (s, &t)) in locations.iter().zip(times).enumerate() {
        let mut was_clamped = false;
        let a = cell(s[0], &mut was_clamped);
        let b = cell(s[1], &mut was_clamped);
        out[[r, a * grid + b]] = 1.0;
        let offset = t - time_range.0;
        if offset < 0 || offset as usize >= n_seg * segment_len {
            was_clamped = true;
        }
        let seg = ((offset.max(0) as usize) / segment_len).min(n_seg - 1);
        out[[r, grid * grid + seg]] = 1.0;
        clamped += usize::from(was_clamped);
    }
    if clamped > 0 {
        log::warn!("{clamped} rows clamped into boundary segments");
    }
    Ok((out, clamped))
}

/// Position within the period, `((t − 1) mod period) + 1`.
pub fn seasonal_time(t: i64, period: usize) -> i64 {
    (t - 1).rem_euclid(period as i64) + 1
}

/// Spatial RBFs, temporal RBFs over the position within `period`, and a
/// one-hot year factor with one column per entry of `year_breaks`.
pub fn build_seasonal(
    locations: &[Location],
    times: &[i64],
    period: usize,
    year_breaks: &[i64],
    spatial_levels: &[usize],
    temporal_levels: &[usize],
) -> Result<Array2<f64>> {
    check_rows(locations, times)?;
    AuxiliarySpec::Seasonal {
        spatial_levels: spatial_levels.to_vec(),
        temporal_levels: temporal_levels.to_vec(),
        period,
        year_breaks: year_breaks.to_vec(),
    }
    .validate()?;
    if let Some(t) = times.iter().find(|&&t| t <= 0) {
        return Err(invalid(format!("seasonal encoding needs t ≥ 1, got {t}")));
    }
    let ts: Vec<f64> = times.iter().map(|&t| seasonal_time(t, period) as f64).collect();
    let mut years = Array2::zeros((times.len(), year_breaks.len()));
    for (r, &t) in times.iter().enumerate() {
        let k = year_breaks.iter().rposition(|&b| b <= t).unwrap_or(0);
        years[[r, k]] = 1.0;
    }
    Ok(concat(&[
        spatial_rbf(locations, spatial_levels),
        temporal_rbf(&ts, temporal_levels, (1.0, period as f64)),
        years,
    ]))
}

/// Build the raw auxiliary matrix for `spec`; `time_range` is the training
/// span that fixes temporal node placement and segment count.
pub fn build_aux(
    spec: &AuxiliarySpec,
    locations: &[Location],
    times: &[i64],
    time_range: (i64, i64),
) -> Result<Array2<f64>> {
    match spec {
        AuxiliarySpec::Rbf {
            spatial_levels,
            temporal_levels,
        } => build_rbf(locations, times, spatial_levels, temporal_levels, time_range),
        AuxiliarySpec::Segmentation { grid, segment_len } => {
            build_segmentation(locations, times, *grid, *segment_len, time_range).map(|(m, _)| m)
        }
        AuxiliarySpec::Seasonal {
            spatial_levels,
            temporal_levels,
            period,
            year_breaks,
        } => build_seasonal(locations, times, *period, year_breaks, spatial_levels, temporal_levels),
    }
}

/// Per-column centering and scaling fitted on training data.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Column means and population standard deviations; near-constant
    /// columns (sd < 1e-12) keep scale 1.
    pub fn fit(data: ArrayView2<f64>) -> Result<Self> {
        let n = data.nrows();
        if n == 0 {
            return Err(invalid("cannot standardize an empty matrix"));
        }
        let mut mean = Vec::with_capacity(data.ncols());
        let mut scale = Vec::with_capacity(data.ncols());
        for col in data.axis_iter(Axis(1)) {
            let m = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            mean.push(m);
            scale.push(if sd < 1e-12 { 1.0 } else { sd });
        }
        Ok(Self { mean, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, data: &ArrayView2<f64>) -> Result<()> {
        if data.ncols() != self.dim() {
            return Err(shape(format!(
                "standardizer has {} columns, data has {}",
                self.dim(),
                data.ncols()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&data)?;
        let mut out = data.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.scale[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn invert(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&data)?;
        let mut out = data.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.scale[j]);
            col.mapv_inplace(|v| v * s + m);
        }
        Ok(out)
    }
}

/// An auxiliary spec fitted to a training set: node placement from the
/// training time span plus column standardization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxiliaryEncoder {
    pub spec: AuxiliarySpec,
    pub time_range: (i64, i64),
    pub standardizer: Standardizer,
}

impl AuxiliaryEncoder {
    pub fn fit(spec: &AuxiliarySpec, locations: &[Location], times: &[i64]) -> Result<Self> {
        spec.validate()?;
        let lo = *times.iter().min().ok_or_else(|| invalid("no time points"))?;
        let hi = *times.iter().max().unwrap();
        let raw = build_aux(spec, locations, times, (lo, hi))?;
        Ok(Self {
            spec: spec.clone(),
            time_range: (lo, hi),
            standardizer: Standardizer::fit(raw.view())?,
        })
    }

    pub fn dim(&self) -> usize {
        self.standardizer.dim()
    }

    /// Standardized auxiliary rows for arbitrary (s, t), including times
    /// outside the training span.
    pub fn encode(&self, locations: &[Location], times: &[i64]) -> Result<Array2<f64>> {
        let raw = build_aux(&self.spec, locations, times, self.time_range)?;
        self.standardizer.apply(raw.view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::stfield::sample_locations;

    fn grid_points(n_s: usize, n_t: usize) -> (Vec<Location>, Vec<i64>) {
        let locs = sample_locations(n_s, &mut rng::from_seed(3)).unwrap();
        let mut l = Vec::new();
        let mut t = Vec::new();
        for time in 1..=n_t as i64 {
            for s in &locs {
                l.push(*s);
                t.push(time);
            }
        }
        (l, t)
    }

    #[test]
    fn rbf_column_count_and_range() {
        let (l, t) = grid_points(7, 20);
        let m = build_rbf(&l, &t, &[2, 9], &[9, 17, 37], (1, 20)).unwrap();
        assert_eq!(m.ncols(), 148);
        assert!(m.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!(build_rbf(&l, &t, &[], &[9], (1, 20)).is_err());
    }

    #[test]
    fn rbf_is_one_at_a_node() {
        let m = build_rbf(&[[0.0, 0.0]], &[1], &[2], &[3], (1, 11)).unwrap();
        assert_eq!(m[[0, 0]], 1.0);
        // temporal nodes at 1, 6, 11
        assert_eq!(m[[0, 4]], 1.0);
    }

    #[test]
    fn segmentation_blocks_are_one_hot() {
        let (l, t) = grid_points(10, 500);
        let (m, clamped) = build_segmentation(&l, &t, 10, 5, (1, 500)).unwrap();
        assert_eq!(m.ncols(), 200);
        assert_eq!(clamped, 0);
        for row in m.axis_iter(Axis(0)) {
            assert_eq!(row.slice(ndarray::s![..100]).sum(), 1.0);
            assert_eq!(row.slice(ndarray::s![100..]).sum(), 1.0);
        }
        let (corner, _) = build_segmentation(&[[0.0, 0.0]], &[1], 10, 5, (1, 500)).unwrap();
        assert_eq!(corner[[0, 0]], 1.0);
        assert_eq!(corner[[0, 100]], 1.0);
    }

    #[test]
    fn segmentation_clamps_outside_points() {
        let (m, clamped) = build_segmentation(&[[1.2, -0.1], [0.5, 0.5]], &[3, 1], 2, 1, (1, 2)).unwrap();
        assert_eq!(clamped, 1);
        assert_eq!(m[[0, 2]], 1.0);
        assert_eq!(m[[0, 4 + 1]], 1.0);
    }

    #[test]
    fn seasonal_wraps_and_encodes_years() {
        assert_eq!(seasonal_time(366, 365), 1);
        assert_eq!(seasonal_time(365, 365), 365);
        let times = [1, 400, 800, 1200, 1500];
        let locs = vec![[0.5, 0.5]; 5];
        let m = build_seasonal(&locs, &times, 365, &[1, 366, 731, 1096], &[2], &[9]).unwrap();
        assert_eq!(m.ncols(), 4 + 9 + 4);
        for (r, k) in [0, 1, 2, 3, 3].iter().enumerate() {
            let years = m.slice(ndarray::s![r, 13..]);
            assert_eq!(years.sum(), 1.0);
            assert_eq!(years[*k], 1.0);
        }
        assert!(build_seasonal(&locs[..1], &[0], 365, &[1], &[2], &[9]).is_err());
    }

    #[test]
    fn seasonal_future_stays_in_training_hull() {
        let locs = vec![[0.3, 0.3]; 2];
        let m = build_seasonal(&locs, &[730, 740], 365, &[1, 366], &[1], &[5]).unwrap();
        let train = build_seasonal(&locs, &[365, 10], 365, &[1, 366], &[1], &[5]).unwrap();
        // seasonal positions 365 → 365 and 740 → 10 reproduce training rows
        assert_eq!(m.slice(ndarray::s![.., ..6]), train.slice(ndarray::s![.., ..6]));
    }

    #[test]
    fn standardizer_round_trip() {
        let data = Array2::from_shape_fn((10, 3), |(i, j)| if j == 2 { 4.0 } else { (i * (j + 1)) as f64 });
        let st = Standardizer::fit(data.view()).unwrap();
        assert_eq!(st.scale[2], 1.0);
        let z = st.apply(data.view()).unwrap();
        assert!(z.column(0).sum().abs() < 1e-12);
        let back = st.invert(z.view()).unwrap();
        assert!((&back - &data).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn encoder_rows_do_not_depend_on_batch() {
        let (l, t) = grid_points(5, 30);
        let spec = AuxiliarySpec::Rbf {
            spatial_levels: vec![2, 3],
            temporal_levels: vec![4],
        };
        let enc = AuxiliaryEncoder::fit(&spec, &l, &t).unwrap();
        let all = enc.encode(&l, &t).unwrap();
        let one = enc.encode(&l[17..18], &t[17..18]).unwrap();
        assert_eq!(all.row(17), one.row(0));
    }
}
