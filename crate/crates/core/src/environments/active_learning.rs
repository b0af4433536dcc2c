//! Pool-based active learning with a Gaussian-process surrogate and a
//! synthetic feasibility constraint along the first principal component.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_beta, CalSample, CalibrationConfig, CalibrationData};
use crate::error::{invalid, CpcError, Result};
use crate::numeric::{trial_rng, MeanSe};
use crate::policies::{tilted_acquisition, Categorical, ClippedPolicy, MixturePolicy, Policy};
use crate::samplers::rejection_sample;

/// Covariates (one row per record) and regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularData {
    pub covariates: DMatrix<f64>,
    pub targets: Vec<f64>,
}

impl TabularData {
    pub fn new(covariates: DMatrix<f64>, targets: Vec<f64>) -> Result<Self> {
        if covariates.nrows() != targets.len() || covariates.ncols() == 0 {
            return Err(invalid("need one target per covariate row and at least one column"));
        }
        if covariates.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(CpcError::Numerical("non-finite value in tabular data".into()));
        }
        Ok(Self { covariates, targets })
    }

    /// CSV with a header row and numeric columns; the last column is the target.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| invalid(format!("row {i}: {e}")))?;
            if row.len() < 2 || rows.first().is_some_and(|r| r.len() != row.len()) {
                return Err(invalid(format!("row {i}: expected a consistent column count >= 2")));
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(CpcError::Empty("csv rows"));
        }
        let d = rows[0].len() - 1;
        let covariates = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(covariates, rows.iter().map(|r| r[d]).collect())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Columns centered and scaled to unit variance; constant columns are
    /// only centered.
    pub fn standardized(&self) -> Self {
        let n = self.covariates.nrows() as f64;
        let mut x = self.covariates.clone();
        for mut col in x.column_iter_mut() {
            let mean = col.sum() / n;
            col.add_scalar_mut(-mean);
            let sd = (col.norm_squared() / (n - 1.0).max(1.0)).sqrt();
            if sd > 0.0 {
                col /= sd;
            }
        }
        Self {
            covariates: x,
            targets: self.targets.clone(),
        }
    }
}

/// Records concentrated along one random direction, with a target linear in
/// that direction plus a nonlinear term in the orthogonal noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTabular {
    pub records: usize,
    pub dim: usize,
    /// Standard deviation of the position along the dominant direction.
    pub axis_std: f64,
    /// Standard deviation of the isotropic off-axis noise.
    pub off_axis_std: f64,
    /// Amplitude of the off-axis nonlinearity in the target.
    pub nonlinearity: f64,
}

impl Default for SyntheticTabular {
    fn default() -> Self {
        Self {
            records: 500,
            dim: 5,
            axis_std: 2.0,
            off_axis_std: 0.6,
            nonlinearity: 1.0,
        }
    }
}

impl SyntheticTabular {
    /// Standardized covariates and targets.
    pub fn generate(&self, rng: &mut dyn RngCore) -> Result<TabularData> {
        if self.records < 2 || self.dim == 0 || !(self.axis_std > 0.0) || !(self.off_axis_std >= 0.0) {
            return Err(invalid("synthetic tabular data needs >= 2 records, dim >= 1 and positive spreads"));
        }
        let mut gauss = || -> f64 { StandardNormal.sample(&mut *rng) };
        let mut axis = DVector::from_fn(self.dim, |_, _| gauss());
        axis /= axis.norm();
        let mut x = DMatrix::zeros(self.records, self.dim);
        let mut y = Vec::with_capacity(self.records);
        for i in 0..self.records {
            let t = self.axis_std * gauss();
            let noise = DVector::from_fn(self.dim, |_, _| self.off_axis_std * gauss());
            let off = &noise - &axis * axis.dot(&noise);
            let row = &axis * t + &noise;
            x.row_mut(i).copy_from(&row.transpose());
            y.push(t + self.nonlinearity * (2.0 * off.norm()).sin());
        }
        Ok(TabularData::new(x, y)?.standardized())
    }
}

/// Leading principal direction of the centered covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalComponent {
    pub direction: Vec<f64>,
    /// Centered records projected on `direction`.
    pub projections: Vec<f64>,
}

const POWER_TOLERANCE: f64 = 1e-10;
const POWER_MAX_ITERATIONS: usize = 1_000_000;

/// Power iteration on the sample covariance. The sign is fixed so that the
/// largest-magnitude entry is positive.
pub fn pca_first_component(covariates: &DMatrix<f64>) -> Result<PrincipalComponent> {
    let (n, d) = covariates.shape();
    if n < 2 || d == 0 {
        return Err(invalid("PCA needs at least 2 rows and 1 column"));
    }
    let means = covariates.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| covariates[(i, j)] - means[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    if cov.norm() == 0.0 {
        return Err(CpcError::Numerical("covariates have zero variance".into()));
    }
    let mut v = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    if (&cov * &v).norm() <= 1e-300 {
        v = DVector::from_fn(d, |i, _| (i + 1) as f64);
        v /= v.norm();
    }
    let mut converged = false;
    for _ in 0..POWER_MAX_ITERATIONS {
        let mut next = &cov * &v;
        let norm = next.norm();
        if norm == 0.0 {
            return Err(CpcError::Numerical("power iteration collapsed".into()));
        }
        next /= norm;
        let delta = (&next - &v).norm().min((&next + &v).norm());
        v = next;
        if delta <= POWER_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(CpcError::Numerical("power iteration did not converge".into()));
    }
    let pivot = v.iamax();
    if v[pivot] < 0.0 {
        v = -v;
    }
    let projections = (&centered * &v).iter().copied().collect();
    Ok(PrincipalComponent {
        direction: v.iter().copied().collect(),
        projections,
    })
}

/// Logistic CDF with location `location` and scale `scale`.
pub fn logistic_cdf(x: f64, location: f64, scale: f64) -> f64 {
    1.0 / (1.0 + (-(x - location) / scale).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeasibilityParams {
    /// Tilt `γ` applied to min-max normalized projections.
    pub bias: f64,
    /// Logistic location; `min(2.5·α, 0.98)` when absent.
    pub location: Option<f64>,
    pub scale: f64,
}

impl Default for FeasibilityParams {
    fn default() -> Self {
        Self {
            bias: 1.0,
            location: None,
            scale: 0.1,
        }
    }
}

/// Records with a high first principal component are likely feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityModel {
    pub component: PrincipalComponent,
    pub location: f64,
    pub scale: f64,
    /// Feasibility probability per record.
    pub probabilities: Vec<f64>,
    pub feasible: Vec<bool>,
}

impl FeasibilityModel {
    pub fn infeasible_fraction(&self) -> f64 {
        self.feasible.iter().filter(|f| !**f).count() as f64 / self.feasible.len() as f64
    }
}

pub fn default_location(alpha: f64) -> f64 {
    (2.5 * alpha).min(0.98)
}

/// Project on PC1, min-max normalize, tilt by `exp(γ·z)`, rank (1 = lowest),
/// map `rank / n` through the logistic CDF and draw Bernoulli indicators.
pub fn build_feasibility(
    covariates: &DMatrix<f64>,
    alpha: f64,
    params: &FeasibilityParams,
    rng: &mut dyn RngCore,
) -> Result<FeasibilityModel> {
    if covariates.nrows() < 2 {
        return Err(invalid("feasibility ranks need at least 2 records"));
    }
    if !(params.scale > 0.0) || !(params.bias > 0.0) {
        return Err(invalid("feasibility scale and bias must be positive"));
    }
    let component = pca_first_component(covariates)?;
    let z = &component.projections;
    let lo = z.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let tilted: Vec<f64> = z.iter().map(|v| (params.bias * (v - lo) / span).exp()).collect();
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| tilted[a].total_cmp(&tilted[b]));
    let n = z.len() as f64;
    let location = params.location.unwrap_or_else(|| default_location(alpha));
    let mut probabilities = vec![0.0; z.len()];
    for (r, &i) in order.iter().enumerate() {
        probabilities[i] = logistic_cdf((r + 1) as f64 / n, location, params.scale);
    }
    let feasible = probabilities.iter().map(|&p| rng.random_bool(p)).collect();
    Ok(FeasibilityModel {
        component,
        location,
        scale: params.scale,
        probabilities,
        feasible,
    })
}

/// GP regression with kernel `σ0² + xᵀx'` and white noise `σn²`.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: DMatrix<f64>,
    signal_variance: f64,
    noise_variance: f64,
    factor: Cholesky<f64, Dyn>,
    dual: DVector<f64>,
}

fn gram(a: &DMatrix<f64>, b: &DMatrix<f64>, signal_variance: f64) -> DMatrix<f64> {
    (a * b.transpose()).add_scalar(signal_variance)
}

/// Fit the GP, escalating a diagonal jitter if the factorization fails.
pub fn gp_fit(inputs: &DMatrix<f64>, targets: &[f64], signal_variance: f64, noise_variance: f64) -> Result<GpModel> {
    if inputs.nrows() == 0 {
        return Err(CpcError::Empty("GP training points"));
    }
    if inputs.nrows() != targets.len() {
        return Err(invalid("one target per training input is required"));
    }
    if !(noise_variance > 0.0) || !(signal_variance >= 0.0) {
        return Err(invalid("GP needs noise variance > 0 and signal variance >= 0"));
    }
    let n = inputs.nrows();
    let k = gram(inputs, inputs, signal_variance);
    let scale = k.diagonal().mean().max(1.0);
    for jitter in [0.0, 1e-10, 1e-8, 1e-6] {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += noise_variance + jitter * scale;
        }
        if let Some(factor) = Cholesky::new(m) {
            let dual = factor.solve(&DVector::from_column_slice(targets));
            return Ok(GpModel {
                inputs: inputs.clone(),
                signal_variance,
                noise_variance,
                factor,
                dual,
            });
        }
    }
    Err(CpcError::Numerical("kernel matrix is not positive definite after jitter".into()))
}

impl GpModel {
    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn predict_mean(&self, queries: &DMatrix<f64>) -> Vec<f64> {
        (gram(queries, &self.inputs, self.signal_variance) * &self.dual)
            .iter()
            .copied()
            .collect()
    }

    /// Posterior variance of the latent function (no observation noise).
    pub fn posterior_variance(&self, queries: &DMatrix<f64>) -> Vec<f64> {
        let cross = gram(&self.inputs, queries, self.signal_variance);
        let solved = self
            .factor
            .l()
            .solve_lower_triangular(&cross)
            .expect("cholesky factor has a positive diagonal");
        (0..queries.nrows())
            .map(|j| {
                let q = queries.row(j);
                let prior = self.signal_variance + q.dot(&q);
                (prior - solved.column(j).norm_squared()).max(0.0)
            })
            .collect()
    }
}

pub fn gp_posterior_variance(model: &GpModel, queries: &DMatrix<f64>) -> Vec<f64> {
    model.posterior_variance(queries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActiveLearningConfig {
    pub alpha: f64,
    pub iterations: usize,
    pub n_initial: usize,
    pub initial_train_fraction: f64,
    pub test_fraction: f64,
    pub feasibility: FeasibilityParams,
    /// Tilt of the source policy on raw PC1 projections.
    pub source_bias: f64,
    pub acquisition_temperature: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub observation_noise: f64,
    pub new_point_train_probability: f64,
    /// Draws from the acquisition policy used to estimate `ψ`.
    pub n_proposals: usize,
    pub budget: usize,
    pub calibration: CalibrationConfig,
}

impl Default for ActiveLearningConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            iterations: 10,
            n_initial: 48,
            initial_train_fraction: 0.8,
            test_fraction: 0.2,
            feasibility: FeasibilityParams::default(),
            source_bias: 1.0,
            acquisition_temperature: 10.0,
            signal_variance: 1.0,
            noise_variance: 1.0,
            observation_noise: 0.05,
            new_point_train_probability: 0.5,
            n_proposals: 200,
            budget: 1_000_000,
            calibration: CalibrationConfig::default(),
        }
    }
}

impl ActiveLearningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.n_initial < 2 || self.n_proposals == 0 || self.budget == 0 {
            return Err(invalid("n_initial >= 2, n_proposals >= 1 and budget >= 1 are required"));
        }
        for (name, p) in [
            ("initial_train_fraction", self.initial_train_fraction),
            ("test_fraction", self.test_fraction),
            ("new_point_train_probability", self.new_point_train_probability),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1), got {p}")));
            }
        }
        if !(self.observation_noise >= 0.0 && self.acquisition_temperature >= 0.0 && self.source_bias >= 0.0) {
            return Err(invalid("noise, temperature and source bias must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionArm {
    Cpc,
    Uncontrolled,
}

impl AcquisitionArm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cpc => "cpc",
            Self::Uncontrolled => "uncontrolled",
        }
    }
}

/// One acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionStep {
    pub iteration: usize,
    #[serde(with = "crate::numeric::ext_float")]
    pub beta_hat: f64,
    /// Pool position of the chosen record.
    pub chosen: usize,
    pub infeasible: bool,
    /// Posterior variance of the chosen record before acquisition.
    pub variance: f64,
    pub acceptance_rate: f64,
    /// Test MSE after refitting with the new point.
    pub test_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trial: usize,
    pub arm: AcquisitionArm,
    pub initial_mse: f64,
    /// Infeasible fraction of the initial source draws.
    pub initial_infeasible: f64,
    pub steps: Vec<AcquisitionStep>,
}

impl Trajectory {
    pub fn violation_rate(&self) -> f64 {
        self.steps.iter().filter(|s| s.infeasible).count() as f64 / self.steps.len().max(1) as f64
    }

    pub fn final_mse(&self) -> f64 {
        self.steps.last().map_or(self.initial_mse, |s| s.test_mse)
    }
}

struct Split {
    pool: Vec<usize>,
    test: Vec<usize>,
}

fn rows(data: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), data.ncols(), |i, j| data[(idx[i], j)])
}

struct Learner<'a> {
    data: &'a TabularData,
    pool_x: DMatrix<f64>,
    test_x: DMatrix<f64>,
    test_y: Vec<f64>,
    train: Vec<(usize, f64)>,
}

impl Learner<'_> {
    fn fit(&self, config: &ActiveLearningConfig) -> Result<GpModel> {
        let idx: Vec<usize> = self.train.iter().map(|t| t.0).collect();
        let y: Vec<f64> = self.train.iter().map(|t| t.1).collect();
        gp_fit(&rows(&self.pool_x, &idx), &y, config.signal_variance, config.noise_variance)
    }

    fn test_mse(&self, gp: &GpModel) -> f64 {
        let pred = gp.predict_mean(&self.test_x);
        pred.iter().zip(&self.test_y).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / pred.len() as f64
    }

    fn observe(&self, pool_pos: usize, global: &[usize], noise: f64, rng: &mut dyn RngCore) -> f64 {
        let y = self.data.targets[global[pool_pos]];
        if noise > 0.0 {
            y + Normal::new(0.0, noise).expect("positive noise").sample(rng)
        } else {
            y
        }
    }
}

/// Exact law of `min(π_t, β·π_0)` on a finite support.
fn clipped_categorical(source: &Categorical, acquisition: &Categorical, beta: f64) -> Result<Categorical> {
    let lb = beta.ln();
    Categorical::from_log_weights(
        source
            .log_probs()
            .iter()
            .zip(acquisition.log_probs())
            .map(|(s, a)| a.min(lb + s))
            .collect(),
    )
}

#[allow(clippy::too_many_arguments)]
fn run_arm(
    arm: AcquisitionArm,
    learner: &mut Learner<'_>,
    source: &Categorical,
    initial_cal: &[CalSample<usize>],
    losses: &[f64],
    pool_global: &[usize],
    config: &ActiveLearningConfig,
    trial: usize,
    initial: (f64, f64),
    rng: &mut dyn RngCore,
) -> Result<Trajectory> {
    let pool_len = learner.pool_x.nrows();
    let support: Vec<usize> = (0..pool_len).collect();
    let mut cal = initial_cal.to_vec();
    let mut deployed: Vec<Categorical> = vec![source.clone()];
    let mut gp = learner.fit(config)?;
    let mut steps = Vec::with_capacity(config.iterations);
    for it in 1..=config.iterations {
        let variances = gp.posterior_variance(&learner.pool_x);
        let acquisition = tilted_acquisition(&variances, config.acquisition_temperature)?;
        let (chosen, beta_hat, rate, law) = match arm {
            AcquisitionArm::Uncontrolled => (acquisition.sample(rng), f64::INFINITY, 1.0, acquisition.clone()),
            AcquisitionArm::Cpc => {
                let mut counts = vec![0usize; deployed.len()];
                for s in &cal {
                    counts[s.round] += 1;
                }
                let mixture = MixturePolicy::from_counts(deployed.clone(), &counts)?;
                let proposals: Vec<usize> = (0..config.n_proposals).map(|_| acquisition.sample(rng)).collect();
                let data = CalibrationData {
                    cal: &cal,
                    proposals: &proposals,
                    extra_probes: &support,
                };
                let report = calibrate_beta(source, &acquisition, &mixture, &data, config.alpha, 1.0, &config.calibration)?;
                let policy = ClippedPolicy::new(source.clone(), acquisition.clone(), report.log_beta_hat())?;
                let batch = rejection_sample(&policy, 1, config.budget, rng)?;
                let chosen = *batch
                    .accepted
                    .first()
                    .ok_or_else(|| CpcError::Numerical("acceptance budget exhausted".into()))?;
                let law = clipped_categorical(source, &acquisition, report.beta_hat)?;
                (chosen, report.beta_hat, batch.acceptance_rate, law)
            }
        };
        let y = learner.observe(chosen, pool_global, config.observation_noise, rng);
        if rng.random_bool(config.new_point_train_probability) {
            learner.train.push((chosen, y));
            gp = learner.fit(config)?;
        } else {
            deployed.push(law);
            cal.push(CalSample {
                point: chosen,
                loss: losses[chosen],
                round: deployed.len() - 1,
            });
        }
        steps.push(AcquisitionStep {
            iteration: it,
            beta_hat,
            chosen,
            infeasible: losses[chosen] > 0.0,
            variance: variances[chosen],
            acceptance_rate: rate,
            test_mse: learner.test_mse(&gp),
        });
    }
    Ok(Trajectory {
        trial,
        arm,
        initial_mse: initial.0,
        initial_infeasible: initial.1,
        steps,
    })
}

/// One trial: feasibility draw, test split, biased initial data, then both
/// arms from identical starting data with independent randomness.
pub fn active_learning_trial(
    data: &TabularData,
    config: &ActiveLearningConfig,
    seed: u64,
    trial: usize,
) -> Result<[Trajectory; 2]> {
    config.validate()?;
    let mut rng = trial_rng(seed, trial as u64);
    let feas = build_feasibility(&data.covariates, config.alpha, &config.feasibility, &mut rng)?;
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let n_test = ((n as f64) * config.test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(invalid(format!("degenerate test split of {n} records")));
    }
    let split = Split {
        test: order[..n_test].to_vec(),
        pool: order[n_test..].to_vec(),
    };
    let losses: Vec<f64> = split.pool.iter().map(|&g| if feas.feasible[g] { 0.0 } else { 1.0 }).collect();
    let source = Categorical::from_log_weights(
        split
            .pool
            .iter()
            .map(|&g| config.source_bias * feas.component.projections[g])
            .collect(),
    )?;

    let mut learner = Learner {
        data,
        pool_x: rows(&data.covariates, &split.pool),
        test_x: rows(&data.covariates, &split.test),
        test_y: split.test.iter().map(|&g| data.targets[g]).collect(),
        train: Vec::new(),
    };
    assert!(!split.pool.is_empty(), "pool is never exhausted: draws are with replacement");
    let draws: Vec<usize> = (0..config.n_initial).map(|_| source.sample(&mut rng)).collect();
    let n_train = ((config.n_initial as f64) * config.initial_train_fraction).round() as usize;
    let n_train = n_train.clamp(1, config.n_initial - 1);
    for &d in &draws[..n_train] {
        let y = learner.observe(d, &split.pool, config.observation_noise, &mut rng);
        learner.train.push((d, y));
    }
    let initial_cal: Vec<CalSample<usize>> = draws[n_train..]
        .iter()
        .map(|&d| CalSample {
            point: d,
            loss: losses[d],
            round: 0,
        })
        .collect();
    let initial_infeasible = draws.iter().map(|&d| losses[d]).sum::<f64>() / draws.len() as f64;
    let initial_mse = learner.test_mse(&learner.fit(config)?);
    let train0 = learner.train.clone();

    let mut cpc_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let mut free_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let initial = (initial_mse, initial_infeasible);
    let cpc = run_arm(
        AcquisitionArm::Cpc,
        &mut learner,
        &source,
        &initial_cal,
        &losses,
        &split.pool,
        config,
        trial,
        initial,
        &mut cpc_rng,
    )?;
    learner.train = train0;
    let free = run_arm(
        AcquisitionArm::Uncontrolled,
        &mut learner,
        &source,
        &initial_cal,
        &losses,
        &split.pool,
        config,
        trial,
        initial,
        &mut free_rng,
    )?;
    Ok([cpc, free])
}

/// All trials in parallel, ordered by trial then arm.
pub fn active_learning_run(
    data: &TabularData,
    config: &ActiveLearningConfig,
    seed: u64,
    trials: usize,
) -> Result<Vec<Trajectory>> {
    let per: Vec<[Trajectory; 2]> = (0..trials)
        .into_par_iter()
        .map(|t| active_learning_trial(data, config, seed, t))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Violation rate and final test MSE across trials for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: AcquisitionArm,
    pub violation: MeanSe,
    pub final_mse: MeanSe,
}

pub fn summarize_arms(trajectories: &[Trajectory]) -> Vec<ArmSummary> {
    [AcquisitionArm::Cpc, AcquisitionArm::Uncontrolled]
        .into_iter()
        .map(|arm| {
            let sel: Vec<&Trajectory> = trajectories.iter().filter(|t| t.arm == arm).collect();
            ArmSummary {
                arm,
                violation: MeanSe::from_slice(&sel.iter().map(|t| t.violation_rate()).collect::<Vec<_>>()),
                final_mse: MeanSe::from_slice(&sel.iter().map(|t| t.final_mse()).collect::<Vec<_>>()),
            }
        })
        .collect()
}
