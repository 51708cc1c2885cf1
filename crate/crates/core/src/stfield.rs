//! Simulation of nonstationary spatio-temporal latent fields and the MLP
//! mixing functions that turn them into observations.
//!
//! Each latent component follows a spatially correlated vector AR process
//!
//! ```text
//! δ(t) = Σ_r K_r(t) δ(t − r) + ε(t),   ε(t) ~ N(0, D_t R D_t)
//! ```
//!
//! with diagonal `K_r(t) = diag(γ_r(s, t))`, a Matérn correlation `R` and
//! `D_t = diag(σ(s, t))`. Settings 1–6 choose which of γ, σ and an additive
//! trend μ vary over space and time.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, shape};
use crate::linalg;
use crate::neuralnet::network::Activation;
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Matérn (range φ, smoothness ν) of the innovation noise, one row per
/// latent component (cycled when P > 6).
pub const NOISE_MATERN: [(f64, f64); 6] = [
    (0.20, 0.50),
    (0.15, 1.00),
    (0.10, 0.25),
    (0.30, 2.00),
    (0.05, 0.75),
    (0.25, 1.50),
];

/// Matérn parameters of the AR shift field c(s); the sixth row reuses the
/// sixth noise row.
pub const SHIFT_MATERN: [(f64, f64); 6] = [
    (0.25, 5.0),
    (0.15, 2.0),
    (0.10, 3.0),
    (0.30, 4.0),
    (0.20, 1.0),
    (0.25, 1.5),
];

/// Variance of the Gaussian shift field c(s).
pub const SHIFT_VARIANCE: f64 = 0.3;

/// Number of spatial clusters and temporal segments of the variance field.
pub const VARIANCE_CLUSTERS: usize = 5;
pub const VARIANCE_SEGMENTS: usize = 10;

/// Range of the per-segment standard deviations σ_k.
pub const SEGMENT_SD_RANGE: (f64, f64) = (0.1, 3.0);

/// Any |δ| beyond this aborts the simulation.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

pub type Location = [f64; 2];

// ---------------------------------------------------------------------------
// Matérn covariance
// ---------------------------------------------------------------------------

fn ln_cosh(y: f64) -> f64 {
    let a = y.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `ln K_ν(x)` for x > 0, from `K_ν(x) = ∫₀^∞ exp(−x cosh t) cosh(νt) dt`
/// evaluated by the trapezoidal rule in log space. The integrand is analytic
/// and decays double-exponentially, so the rule converges geometrically.
pub fn ln_bessel_k(nu: f64, x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let h = 0.02f64.min(0.5 / x.sqrt());
    let g = |t: f64| -x * t.cosh() + ln_cosh(nu * t);
    let mut terms = Vec::with_capacity(1024);
    let mut best = f64::NEG_INFINITY;
    let mut prev = f64::NEG_INFINITY;
    let mut k = 0usize;
    loop {
        let t = k as f64 * h;
        let v = g(t);
        let w = if k == 0 { v - std::f64::consts::LN_2 } else { v };
        terms.push(w);
        best = best.max(v);
        if v < prev && v < best - 45.0 {
            break;
        }
        prev = v;
        k += 1;
    }
    let sum: f64 = terms.iter().map(|&w| (w - best).exp()).sum();
    best + sum.ln() + h.ln()
}

/// Matérn correlation `(1/(2^{ν−1}Γ(ν))) (h/φ)^ν K_ν(h/φ)`, equal to 1 at
/// `h = 0`.
pub fn matern(h: f64, range: f64, smoothness: f64) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(invalid(format!("negative distance {h}")));
    }
    if !(range > 0.0) || !(smoothness > 0.0) {
        return Err(invalid(format!(
            "Matérn needs φ > 0 and ν > 0 (got φ={range}, ν={smoothness})"
        )));
    }
    if h == 0.0 {
        return Ok(1.0);
    }
    let x = h / range;
    let nu = smoothness;
    let ln = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * x.ln() + ln_bessel_k(nu, x);
    Ok(ln.exp().min(1.0))
}

fn distance(a: &Location, b: &Location) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Matérn correlation matrix between all pairs of locations.
pub fn matern_correlation(locations: &[Location], range: f64, smoothness: f64) -> Result<Array2<f64>> {
    let n = locations.len();
    let mut c = Array2::<f64>::eye(n);
    for i in 0..n {
        for j in 0..i {
            let v = matern(distance(&locations[i], &locations[j]), range, smoothness)?;
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
    Ok(c)
}

/// Variance-modulated Matérn covariance `σ_i σ_j ρ(‖s_i − s_j‖)`.
pub fn build_covariance(
    locations: &[Location],
    range: f64,
    smoothness: f64,
    sigma: &[f64],
) -> Result<Array2<f64>> {
    if sigma.len() != locations.len() {
        return Err(shape(format!(
            "{} σ values for {} locations",
            sigma.len(),
            locations.len()
        )));
    }
    if let Some(bad) = sigma.iter().find(|&&s| !(s > 0.0)) {
        return Err(invalid(format!("σ must be positive, got {bad}")));
    }
    let mut c = matern_correlation(locations, range, smoothness)?;
    let n = locations.len();
    for i in 0..n {
        for j in 0..n {
            c[[i, j]] *= sigma[i] * sigma[j];
        }
    }
    Ok(c)
}

/// Lower Cholesky factor with jitter escalation from 1e-8 up to 1e-4.
pub fn factorize_covariance(cov: ArrayView2<f64>) -> Result<(Array2<f64>, f64)> {
    linalg::cholesky_jittered(cov).ok_or(Error::DegenerateCovariance {
        jitter: *linalg::JITTER_LADDER.last().unwrap(),
    })
}

/// `L ξ` with ξ standard normal, for a precomputed lower factor `L`.
pub fn sample_with_factor(factor: &Array2<f64>, rng: &mut Rng) -> Array1<f64> {
    let xi: Array1<f64> = (0..factor.nrows())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    factor.dot(&xi)
}

/// One draw from `N(0, cov)`.
pub fn sample_gaussian_field(cov: ArrayView2<f64>, rng: &mut Rng) -> Result<Array1<f64>> {
    let (l, _) = factorize_covariance(cov)?;
    Ok(sample_with_factor(&l, rng))
}

// ---------------------------------------------------------------------------
// Locations, AR coefficients, variance and trend fields
// ---------------------------------------------------------------------------

/// `n_s` i.i.d. uniform points in the unit square.
pub fn sample_locations(n_s: usize, rng: &mut Rng) -> Result<Vec<Location>> {
    if n_s == 0 {
        return Err(invalid("need at least one location"));
    }
    let u = Uniform::new(0.0, 1.0).unwrap();
    Ok((0..n_s)
        .map(|_| [u.sample(rng), u.sample(rng)])
        .collect())
}

/// `γ(s, t) = ρ · cos(2π t b / n_t − c(s))` with c a Gaussian shift field.
#[derive(Clone, Debug, PartialEq)]
pub struct ArCoefficientField {
    pub shift: Vec<f64>,
    pub scale: f64,
    pub baseline: f64,
    pub n_times: usize,
}

impl ArCoefficientField {
    pub fn value(&self, location: usize, t: i64) -> f64 {
        let phase = 2.0 * PI * t as f64 * self.scale / self.n_times as f64;
        self.baseline * (phase - self.shift[location]).cos()
    }

    /// Values for `t ∈ t_start..t_start + len`, as a `len × n_s` matrix.
    pub fn to_matrix(&self, t_start: i64, len: usize) -> Array2<f64> {
        Array2::from_shape_fn((len, self.shift.len()), |(k, i)| {
            self.value(i, t_start + k as i64)
        })
    }
}

pub fn gen_ar_coefficient_field(
    locations: &[Location],
    n_times: usize,
    scale: f64,
    shift_matern: (f64, f64),
    baseline: f64,
    rng: &mut Rng,
) -> Result<ArCoefficientField> {
    if !(scale > 0.0) {
        return Err(invalid(format!("AR scale b must be positive, got {scale}")));
    }
    let sd = vec![SHIFT_VARIANCE.sqrt(); locations.len()];
    let cov = build_covariance(locations, shift_matern.0, shift_matern.1, &sd)?;
    let shift = sample_gaussian_field(cov.view(), rng)?.to_vec();
    Ok(ArCoefficientField {
        shift,
        scale,
        baseline,
        n_times,
    })
}

/// Divide every lag's coefficients by `max_{s,t} Σ_r |γ_r(s,t)| + 0.01`, so
/// that the sum of absolute coefficients stays below one everywhere.
pub fn scale_ar_coefficients(lags: &mut [Array2<f64>]) -> Result<()> {
    let Some(first) = lags.first() else {
        return Err(invalid("need at least one AR lag"));
    };
    let dim = first.dim();
    if lags.iter().any(|g| g.dim() != dim) {
        return Err(shape("AR coefficient fields differ in shape"));
    }
    let mut total = Array2::<f64>::zeros(dim);
    for g in lags.iter() {
        total.zip_mut_with(g, |acc, &v| *acc += v.abs());
    }
    let denom = total.iter().cloned().fold(0.0, f64::max) + 0.01;
    for g in lags.iter_mut() {
        g.mapv_inplace(|v| v / denom);
    }
    Ok(())
}

/// Piecewise-constant σ(s, t): Voronoi clusters in space crossed with equal
/// time segments.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceField {
    pub centers: Vec<Location>,
    /// Cluster of each location.
    pub cluster: Vec<usize>,
    /// `clusters × segments` standard deviations.
    pub sigmas: Array2<f64>,
    pub n_times: usize,
}

impl VarianceField {
    /// Constant σ ≡ `value` at every location.
    pub fn constant(n_locations: usize, n_times: usize, value: f64) -> Self {
        Self {
            centers: vec![[0.5, 0.5]],
            cluster: vec![0; n_locations],
            sigmas: Array2::from_elem((1, 1), value),
            n_times,
        }
    }

    /// Time segment of `t`; times before 1 fall in the first segment and the
    /// last segment absorbs any remainder.
    pub fn segment(&self, t: i64) -> usize {
        let segments = self.sigmas.ncols();
        if t < 1 {
            return 0;
        }
        let len = self.n_times.div_ceil(segments).max(1);
        (((t - 1) as usize) / len).min(segments - 1)
    }

    /// Flat index of the space-time cell containing `(location, t)`.
    pub fn cell(&self, location: usize, t: i64) -> usize {
        self.cluster[location] * self.sigmas.ncols() + self.segment(t)
    }

    pub fn sigma(&self, location: usize, t: i64) -> f64 {
        self.sigmas[[self.cluster[location], self.segment(t)]]
    }

    pub fn to_matrix(&self, t_start: i64, len: usize) -> Array2<f64> {
        Array2::from_shape_fn((len, self.cluster.len()), |(k, i)| {
            self.sigma(i, t_start + k as i64)
        })
    }
}

pub fn gen_variance_field(locations: &[Location], n_times: usize, rng: &mut Rng) -> VarianceField {
    let u = Uniform::new(0.0, 1.0).unwrap();
    let centers: Vec<Location> = (0..VARIANCE_CLUSTERS)
        .map(|_| [u.sample(rng), u.sample(rng)])
        .collect();
    let cluster = locations
        .iter()
        .map(|s| {
            let mut best = 0;
            for (k, c) in centers.iter().enumerate() {
                if distance(s, c) < distance(s, &centers[best]) {
                    best = k;
                }
            }
            best
        })
        .collect();
    let sd = Uniform::new(SEGMENT_SD_RANGE.0, SEGMENT_SD_RANGE.1).unwrap();
    let sigmas = Array2::from_shape_fn((VARIANCE_CLUSTERS, VARIANCE_SEGMENTS), |_| sd.sample(rng));
    VarianceField {
        centers,
        cluster,
        sigmas,
        n_times,
    }
}

/// `μ(s1,s2,t) = θ1 s1 + θ2 s2 + θt t + α sin(ω1 s1 + ω2 s2 + ωt t + ωc)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrendParams {
    pub theta_s1: f64,
    pub theta_s2: f64,
    pub theta_t: f64,
    pub omega_s1: f64,
    pub omega_s2: f64,
    pub omega_t: f64,
    pub omega_c: f64,
    pub alpha: f64,
}

impl TrendParams {
    pub fn value(&self, s: &Location, t: i64) -> f64 {
        let t = t as f64;
        self.theta_s1 * s[0]
            + self.theta_s2 * s[1]
            + self.theta_t * t
            + self.alpha
                * (self.omega_s1 * s[0] + self.omega_s2 * s[1] + self.omega_t * t + self.omega_c).sin()
    }

    pub fn to_matrix(&self, locations: &[Location], n_times: usize) -> Array2<f64> {
        Array2::from_shape_fn((n_times, locations.len()), |(k, i)| {
            self.value(&locations[i], k as i64 + 1)
        })
    }
}

pub fn gen_trend(rng: &mut Rng) -> TrendParams {
    let mut draw = |lo: f64, hi: f64| rng.random_range(lo..hi);
    TrendParams {
        theta_s1: draw(-3.0, 3.0),
        theta_s2: draw(-3.0, 3.0),
        theta_t: draw(-0.01, 0.01),
        omega_s1: draw(0.2, 4.0),
        omega_s2: draw(0.2, 4.0),
        omega_t: draw(0.01, 0.1),
        omega_c: draw(0.0, 2.0 * PI),
        alpha: draw(-2.0, 2.0),
    }
}

// ---------------------------------------------------------------------------
// Vector AR recursion
// ---------------------------------------------------------------------------

/// Inputs for one component's AR recursion over `burn_in + n_t` steps.
///
/// Row `k` of every matrix refers to time `t = k + 1 − burn_in`.
#[derive(Clone, Debug)]
pub struct ArRecursion<'a> {
    /// Lower Cholesky factor of the spatial correlation.
    pub correlation_factor: &'a Array2<f64>,
    /// One `(burn_in + n_t) × n_s` matrix per lag.
    pub coefficients: &'a [Array2<f64>],
    /// `(burn_in + n_t) × n_s` innovation standard deviations.
    pub sigma: &'a Array2<f64>,
    pub burn_in: usize,
}

/// Run the recursion and return the post-burn-in part as `n_t × n_s`.
pub fn run_ar_recursion(spec: &ArRecursion<'_>, rng: &mut Rng) -> Result<Array2<f64>> {
    let n_s = spec.correlation_factor.nrows();
    let total = spec.sigma.nrows();
    if spec.sigma.ncols() != n_s
        || spec
            .coefficients
            .iter()
            .any(|g| g.dim() != (total, n_s))
    {
        return Err(shape("AR recursion inputs disagree in shape"));
    }
    if total <= spec.burn_in {
        return Err(invalid("burn-in leaves no time points"));
    }
    let mut delta = Array2::<f64>::zeros((total, n_s));
    for k in 0..total {
        let eps = sample_with_factor(spec.correlation_factor, rng);
        for i in 0..n_s {
            let mut v = spec.sigma[[k, i]] * eps[i];
            for (r, g) in spec.coefficients.iter().enumerate() {
                let lag = r + 1;
                if k >= lag {
                    v += g[[k, i]] * delta[[k - lag, i]];
                }
            }
            if !(v.abs() <= DIVERGENCE_LIMIT) {
                return Err(Error::SimulationDiverged {
                    time: k as i64 + 1 - spec.burn_in as i64,
                    magnitude: v.abs(),
                });
            }
            delta[[k, i]] = v;
        }
    }
    Ok(delta.slice_move(ndarray::s![spec.burn_in.., ..]))
}

// ---------------------------------------------------------------------------
// Simulation settings
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationSpec {
    /// 1–6.
    pub setting: u8,
    pub latent_dim: usize,
    pub observed_dim: usize,
    pub n_locations: usize,
    pub n_times: usize,
    /// True AR order R.
    pub ar_order: usize,
    /// Number of mixing layers L.
    pub mixing_layers: usize,
    pub seed: u64,
    /// Per-component (φ, ν) of the innovation noise.
    pub noise_matern: Vec<(f64, f64)>,
    /// Per-component (φ_c, ν_c) of the AR shift field.
    pub shift_matern: Vec<(f64, f64)>,
    pub burn_in: usize,
}

impl SimulationSpec {
    /// Defaults for `setting` with P = S = `dim`.
    pub fn new(setting: u8, dim: usize, n_locations: usize, n_times: usize, seed: u64) -> Self {
        Self {
            setting,
            latent_dim: dim,
            observed_dim: dim,
            n_locations,
            n_times,
            ar_order: 1,
            mixing_layers: 1,
            seed,
            noise_matern: (0..dim).map(|j| NOISE_MATERN[j % 6]).collect(),
            shift_matern: (0..dim).map(|j| SHIFT_MATERN[j % 6]).collect(),
            burn_in: 100,
        }
    }

    pub fn with_trend(&self) -> bool {
        matches!(self.setting, 2 | 4 | 6)
    }

    pub fn nonstationary_ar(&self) -> bool {
        matches!(self.setting, 1 | 2 | 5 | 6)
    }

    pub fn nonstationary_variance(&self) -> bool {
        matches!(self.setting, 3..=6)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.setting) {
            return Err(invalid(format!("setting must be 1–6, got {}", self.setting)));
        }
        if self.latent_dim == 0 || self.observed_dim < self.latent_dim {
            return Err(invalid(format!(
                "need 0 < P ≤ S (P={}, S={})",
                self.latent_dim, self.observed_dim
            )));
        }
        if self.n_locations == 0 || self.n_times == 0 {
            return Err(invalid("need at least one location and one time point"));
        }
        if self.ar_order == 0 || self.mixing_layers == 0 {
            return Err(invalid("AR order and mixing layers must be at least 1"));
        }
        for (name, params) in [("noise", &self.noise_matern), ("shift", &self.shift_matern)] {
            if params.len() != self.latent_dim {
                return Err(invalid(format!(
                    "{name} Matérn parameters given for {} of {} components",
                    params.len(),
                    self.latent_dim
                )));
            }
            if params.iter().any(|&(p, v)| !(p > 0.0) || !(v > 0.0)) {
                return Err(invalid(format!("{name} Matérn parameters must be positive")));
            }
        }
        Ok(())
    }
}

/// Per-component random draws, kept for the metadata record.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentDraws {
    /// Baseline ρ_r per lag.
    pub baselines: Vec<f64>,
    /// Cosine scale b_r per lag (nonstationary AR only).
    pub scales: Vec<f64>,
    /// Magnitude multipliers d_r (R > 1 only).
    pub magnitudes: Vec<f64>,
    pub trend: Option<TrendParams>,
    /// Jitter needed to factorize the noise correlation.
    pub jitter: f64,
}

/// Latent values plus the fields that generated them.
///
/// `values` is `(n_t · n_s) × P`, row `(t − 1)·n_s + i` for location `i` at
/// time `t`. All per-component fields are `n_t × n_s`.
#[derive(Clone, Debug)]
pub struct LatentField {
    pub values: Array2<f64>,
    pub ar_coeffs: Vec<Vec<Array2<f64>>>,
    pub variance_field: Vec<Array2<f64>>,
    pub trend_field: Option<Vec<Array2<f64>>>,
    pub draws: Vec<ComponentDraws>,
}

pub fn simulate_latents(spec: &SimulationSpec, locations: &[Location]) -> Result<LatentField> {
    spec.validate()?;
    if locations.len() != spec.n_locations {
        return Err(shape("location count differs from the spec"));
    }
    let n_s = spec.n_locations;
    let n_t = spec.n_times;
    let total = spec.burn_in + n_t;
    let t_start = 1 - spec.burn_in as i64;
    let big_r = spec.ar_order;

    let mut values = Array2::<f64>::zeros((n_s * n_t, spec.latent_dim));
    let mut ar_coeffs = Vec::with_capacity(spec.latent_dim);
    let mut variance_field = Vec::with_capacity(spec.latent_dim);
    let mut trend_field = spec.with_trend().then(Vec::new);
    let mut draws = Vec::with_capacity(spec.latent_dim);

    for j in 0..spec.latent_dim {
        let mut rng = rng::stream(spec.seed, &format!("latent/{j}"));

        // AR coefficients, including the burn-in range
        let mut baselines = Vec::with_capacity(big_r);
        let mut scales = Vec::new();
        let mut magnitudes = Vec::new();
        let mut lags = Vec::with_capacity(big_r);
        for _ in 0..big_r {
            let rho = if big_r > 1 {
                1.0
            } else if spec.nonstationary_ar() {
                rng.random_range(0.6..0.99)
            } else {
                rng.random_range(0.1..0.9)
            };
            baselines.push(rho);
            let mut field = if spec.nonstationary_ar() {
                let b = rng.random_range(1.0..10.0);
                scales.push(b);
                gen_ar_coefficient_field(locations, n_t, b, spec.shift_matern[j], rho, &mut rng)?
                    .to_matrix(t_start, total)
            } else {
                Array2::from_elem((total, n_s), rho)
            };
            if big_r > 1 {
                let d = rng.random_range(0.0..1.0);
                magnitudes.push(d);
                field.mapv_inplace(|v| v * d);
            }
            lags.push(field);
        }
        if big_r > 1 {
            scale_ar_coefficients(&mut lags)?;
        }

        let sigma = if spec.nonstationary_variance() {
            gen_variance_field(locations, n_t, &mut rng).to_matrix(t_start, total)
        } else {
            Array2::ones((total, n_s))
        };

        let (range, smooth) = spec.noise_matern[j];
        let corr = matern_correlation(locations, range, smooth)?;
        let (factor, jitter) = factorize_covariance(corr.view())?;

        let delta = run_ar_recursion(
            &ArRecursion {
                correlation_factor: &factor,
                coefficients: &lags,
                sigma: &sigma,
                burn_in: spec.burn_in,
            },
            &mut rng,
        )?;

        let trend = spec.with_trend().then(|| gen_trend(&mut rng));
        let mut latent = delta;
        if let (Some(p), Some(fields)) = (trend, trend_field.as_mut()) {
            let mu = p.to_matrix(locations, n_t);
            latent += &mu;
            fields.push(mu);
        }
        for (k, row) in latent.axis_iter(Axis(0)).enumerate() {
            for (i, &v) in row.iter().enumerate() {
                values[[k * n_s + i, j]] = v;
            }
        }

        let keep = ndarray::s![spec.burn_in.., ..];
        ar_coeffs.push(lags.into_iter().map(|g| g.slice_move(keep)).collect());
        variance_field.push(sigma.slice_move(keep));
        draws.push(ComponentDraws {
            baselines,
            scales,
            magnitudes,
            trend,
            jitter,
        });
    }

    Ok(LatentField {
        values,
        ar_coeffs,
        variance_field,
        trend_field,
        draws,
    })
}

// ---------------------------------------------------------------------------
// Mixing
// ---------------------------------------------------------------------------

/// Tolerance on row/column norms after normalization.
pub const MIXING_NORM_TOL: f64 = 0.05;

/// `f_L(z) = ψ_L(B_L f_{L−1}(z))`, ψ_1 linear and ELU afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingFunction {
    pub layers: Vec<Array2<f64>>,
    pub activations: Vec<Activation>,
}

fn row_col_norms(b: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let rows = b.axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).collect();
    let cols = b.axis_iter(Axis(1)).map(|c| c.dot(&c).sqrt()).collect();
    (rows, cols)
}

fn within_tol(norms: &[f64]) -> bool {
    norms.iter().all(|n| (n - 1.0).abs() <= MIXING_NORM_TOL)
}

/// Alternate row and column normalization: at least 10 sweeps, then until
/// both norms are within tolerance. Returns `false` if that never happens.
pub fn normalize_rows_cols(b: &mut Array2<f64>) -> bool {
    let square = b.nrows() == b.ncols();
    for sweep in 0..1000 {
        if square {
            for mut r in b.axis_iter_mut(Axis(0)) {
                let n = r.dot(&r).sqrt();
                r.mapv_inplace(|v| v / n);
            }
        }
        for mut c in b.axis_iter_mut(Axis(1)) {
            let n = c.dot(&c).sqrt();
            c.mapv_inplace(|v| v / n);
        }
        if sweep + 1 >= 10 {
            let (rows, cols) = row_col_norms(b);
            if within_tol(&cols) && (!square || within_tol(&rows)) {
                return true;
            }
        }
    }
    false
}

/// Draw `L` normalized mixing matrices. The first is `S × P`, the rest
/// `S × S`; non-square layers only get unit columns.
pub fn gen_mixing(latent_dim: usize, observed_dim: usize, layers: usize, rng: &mut Rng) -> Result<MixingFunction> {
    if layers == 0 {
        return Err(invalid("mixing needs at least one layer"));
    }
    if latent_dim == 0 || observed_dim < latent_dim {
        return Err(invalid("mixing needs 0 < P ≤ S"));
    }
    let mut mats = Vec::with_capacity(layers);
    let mut acts = Vec::with_capacity(layers);
    for l in 0..layers {
        let cols = if l == 0 { latent_dim } else { observed_dim };
        let b = loop {
            let mut b = Array2::from_shape_fn((observed_dim, cols), |_| StandardNormal.sample(rng));
            if normalize_rows_cols(&mut b) {
                break b;
            }
        };
        mats.push(b);
        acts.push(if l == 0 { Activation::Linear } else { Activation::Elu });
    }
    Ok(MixingFunction {
        layers: mats,
        activations: acts,
    })
}

pub fn apply_mixing(f: &MixingFunction, z: ArrayView2<f64>) -> Result<Array2<f64>> {
    let Some(first) = f.layers.first() else {
        return Err(invalid("empty mixing function"));
    };
    if z.ncols() != first.ncols() {
        return Err(shape(format!(
            "mixing expects {} latent columns, got {}",
            first.ncols(),
            z.ncols()
        )));
    }
    let mut h = z.to_owned();
    for (b, act) in f.layers.iter().zip(&f.activations) {
        h = h.dot(&b.t());
        if *act == Activation::Elu {
            h.mapv_inplace(crate::neuralnet::tape::elu);
        }
    }
    Ok(h)
}

/// Everything produced by one simulated replicate.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub spec: SimulationSpec,
    pub locations: Vec<Location>,
    pub latent: LatentField,
    pub mixing: MixingFunction,
    /// `(n_t · n_s) × S`, same row order as the latents.
    pub observed: Array2<f64>,
}

/// Full protocol: locations, latent fields, mixing, observations.
pub fn simulate(spec: &SimulationSpec) -> Result<Simulation> {
    spec.validate()?;
    let locations = sample_locations(spec.n_locations, &mut rng::stream(spec.seed, "locations"))?;
    let latent = simulate_latents(spec, &locations)?;
    let mixing = gen_mixing(
        spec.latent_dim,
        spec.observed_dim,
        spec.mixing_layers,
        &mut rng::stream(spec.seed, "mixing"),
    )?;
    let observed = apply_mixing(&mixing, latent.values.view())?;
    Ok(Simulation {
        spec: spec.clone(),
        locations,
        latent,
        mixing,
        observed,
    })
}

impl Simulation {
    pub fn to_dataset(&self) -> crate::dataset::SpatioTemporalDataset {
        let n_s = self.spec.n_locations;
        let rows = self.observed.nrows();
        let coords = (0..rows).map(|r| self.locations[r % n_s]).collect();
        let times = (0..rows).map(|r| (r / n_s) as i64 + 1).collect();
        crate::dataset::SpatioTemporalDataset {
            coords,
            times,
            x: self.observed.clone(),
            z: Some(self.latent.values.clone()),
        }
    }
}
