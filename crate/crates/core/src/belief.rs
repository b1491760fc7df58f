//! Exact spatio-temporal Gaussian-process belief over the monitored field.
//!
//! The kernel is Matérn 3/2 over the scaled space-time distance
//! `r = sqrt(|dxy|^2 / l_s^2 + dt^2 / l_t^2)`. The prior mean is zero.
//! Metrics are evaluated on a fixed `R x R` spatial lattice at the belief's
//! current time, laid out like [`GroundTruthField`](crate::firesim::GroundTruthField).

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::firesim::GroundTruthField;

pub const DEFAULT_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub space_lengthscale: f64,
    pub time_lengthscale: f64,
    pub noise_variance: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            signal_variance: 1.0,
            space_lengthscale: 0.2,
            time_lengthscale: 10.0,
            noise_variance: 1e-4,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("signal_variance", self.signal_variance),
            ("space_lengthscale", self.space_lengthscale),
            ("time_lengthscale", self.time_lengthscale),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(invalid("noise_variance", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(location: [f64; 2], t: f64) -> Self {
        Self { x: location[0], y: location[1], t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub location: [f64; 2],
    pub time: f64,
    pub value: f64,
}

impl Observation {
    pub fn point(&self) -> SpaceTimePoint {
        SpaceTimePoint::new(self.location, self.time)
    }
}

pub fn matern32(a: &SpaceTimePoint, b: &SpaceTimePoint, params: &KernelParams) -> f64 {
    let dx = (a.x - b.x) / params.space_lengthscale;
    let dy = (a.y - b.y) / params.space_lengthscale;
    let dt = (a.t - b.t) / params.time_lengthscale;
    let s = 3.0_f64.sqrt() * (dx * dx + dy * dy + dt * dt).sqrt();
    params.signal_variance * (1.0 + s) * (-s).exp()
}

/// Nodes of the `resolution`² lattice at time `t`, row-major with rows along y.
pub fn lattice(resolution: usize, t: f64) -> Vec<SpaceTimePoint> {
    let step = 1.0 / (resolution - 1) as f64;
    (0..resolution)
        .flat_map(|row| (0..resolution).map(move |col| SpaceTimePoint { x: col as f64 * step, y: row as f64 * step, t }))
        .collect()
}

/// GP posterior with cached Cholesky factor of `K(X,X) + sigma_n^2 I`.
#[derive(Debug, Clone)]
pub struct BeliefState {
    observations: Vec<Observation>,
    params: KernelParams,
    jitter: f64,
    resolution: usize,
    time: f64,
    factor: DMatrix<f64>,
    alpha: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Mean and marginal-variance images of the belief at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefGrid {
    pub resolution: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl BeliefGrid {
    /// Channels stacked as `[mean; variance]`, `2 * R * R` values.
    pub fn channels(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.mean.len());
        out.extend_from_slice(&self.mean);
        out.extend_from_slice(&self.variance);
        out
    }
}

impl BeliefState {
    /// Prior belief with the query lattice at time 0.
    pub fn new(params: KernelParams, resolution: usize) -> Result<Self> {
        params.validate()?;
        if resolution < 2 {
            return Err(invalid("resolution", "must be >= 2"));
        }
        Ok(Self {
            observations: Vec::new(),
            params,
            jitter: DEFAULT_JITTER,
            resolution,
            time: 0.0,
            factor: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
        })
    }

    /// Diagonal jitter used only when the noise variance is zero.
    pub fn with_jitter(mut self, jitter: f64) -> Result<Self> {
        self.jitter = jitter;
        self.refactor()?;
        Ok(self)
    }

    pub fn fit(params: KernelParams, resolution: usize, observations: Vec<Observation>) -> Result<Self> {
        let mut belief = Self::new(params, resolution)?;
        belief.observations = observations;
        belief.refactor()?;
        Ok(belief)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Same belief with the query lattice moved to time `t`.
    pub fn at_time(&self, t: f64) -> Self {
        let mut out = self.clone();
        out.time = t;
        out
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn query_lattice(&self) -> Vec<SpaceTimePoint> {
        lattice(self.resolution, self.time)
    }

    fn diagonal_addition(&self) -> f64 {
        if self.params.noise_variance == 0.0 {
            self.jitter
        } else {
            self.params.noise_variance
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.observations.len();
        let points: Vec<_> = self.observations.iter().map(Observation::point).collect();
        let add = self.diagonal_addition();
        let gram = DMatrix::from_fn(m, m, |i, j| {
            matern32(&points[i], &points[j], &self.params) + if i == j { add } else { 0.0 }
        });
        let chol = Cholesky::new(gram).ok_or(Error::SingularGram { observations: m })?;
        let y = DVector::from_iterator(m, self.observations.iter().map(|o| o.value));
        self.alpha = chol.solve(&y);
        self.factor = chol.unpack();
        Ok(())
    }

    /// New belief with `obs` appended; the factorization is recomputed.
    pub fn update(&self, obs: Observation) -> Result<Self> {
        self.update_many(std::slice::from_ref(&obs))
    }

    pub fn update_many(&self, obs: &[Observation]) -> Result<Self> {
        let mut next = self.clone();
        next.observations.extend_from_slice(obs);
        next.refactor()?;
        Ok(next)
    }

    fn cross_kernel(&self, queries: &[SpaceTimePoint]) -> DMatrix<f64> {
        let points: Vec<_> = self.observations.iter().map(Observation::point).collect();
        DMatrix::from_fn(points.len(), queries.len(), |i, q| matern32(&points[i], &queries[q], &self.params))
    }

    /// `L^{-1} K(X, X*)`, observations along rows.
    fn whitened(&self, cross: &DMatrix<f64>) -> DMatrix<f64> {
        let mut v = cross.clone();
        if !v.is_empty() {
            // factor is lower triangular with positive diagonal
            let ok = self.factor.solve_lower_triangular_mut(&mut v);
            debug_assert!(ok);
        }
        v
    }

    /// Posterior mean vector and full covariance (symmetrized).
    pub fn posterior(&self, queries: &[SpaceTimePoint]) -> Posterior {
        let cross = self.cross_kernel(queries);
        let mean = cross.tr_mul(&self.alpha);
        let v = self.whitened(&cross);
        let n = queries.len();
        let prior = DMatrix::from_fn(n, n, |i, j| matern32(&queries[i], &queries[j], &self.params));
        let cov = prior - v.tr_mul(&v);
        let covariance = (&cov + cov.transpose()) * 0.5;
        Posterior { mean, covariance }
    }

    /// Posterior means and marginal variances (clamped at zero).
    pub fn marginals(&self, queries: &[SpaceTimePoint]) -> (Vec<f64>, Vec<f64>) {
        let cross = self.cross_kernel(queries);
        let mean = cross.tr_mul(&self.alpha);
        let v = self.whitened(&cross);
        let var = (0..queries.len())
            .map(|q| (self.params.signal_variance - v.column(q).norm_squared()).max(0.0))
            .collect();
        (mean.iter().copied().collect(), var)
    }

    pub fn variances(&self, queries: &[SpaceTimePoint]) -> Vec<f64> {
        let v = self.whitened(&self.cross_kernel(queries));
        (0..queries.len())
            .map(|q| (self.params.signal_variance - v.column(q).norm_squared()).max(0.0))
            .collect()
    }

    /// `Tr(P)` over the query lattice.
    pub fn covariance_trace(&self) -> f64 {
        self.variances(&self.query_lattice()).iter().sum()
    }

    /// Lattice traces of the belief restricted to its first `prefix`
    /// observations and of the full belief. The Cholesky factor of a leading
    /// block is the leading block of the factor, so one solve serves both.
    pub fn trace_with_prefix(&self, prefix: usize) -> (f64, f64) {
        let prefix = prefix.min(self.observations.len());
        let v = self.whitened(&self.cross_kernel(&self.query_lattice()));
        let sf = self.params.signal_variance;
        let (mut before, mut after) = (0.0, 0.0);
        for col in v.column_iter() {
            let head: f64 = col.rows(0, prefix).norm_squared();
            let tail: f64 = col.rows(prefix, col.len() - prefix).norm_squared();
            before += (sf - head).max(0.0);
            after += (sf - head - tail).max(0.0);
        }
        (before, after)
    }

    /// Root-mean-squared error of the posterior mean against frame `t`.
    pub fn rmse(&self, field: &GroundTruthField, t: usize) -> Result<f64> {
        if field.resolution != self.resolution {
            return Err(Error::MisalignedLattice { lattice: self.resolution, field: field.resolution });
        }
        let truth = field.frame(t)?;
        let queries = lattice(self.resolution, t as f64);
        let mean = self.cross_kernel(&queries).tr_mul(&self.alpha);
        let sq: f64 = mean.iter().zip(truth).map(|(m, y)| (m - y) * (m - y)).sum();
        Ok((sq / truth.len() as f64).sqrt())
    }

    pub fn belief_grid(&self, resolution: usize, t: f64) -> Result<BeliefGrid> {
        if resolution < 2 {
            return Err(invalid("resolution", "must be >= 2"));
        }
        let (mean, variance) = self.marginals(&lattice(resolution, t));
        Ok(BeliefGrid { resolution, mean, variance })
    }
}
