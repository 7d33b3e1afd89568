//! Correlated noise: Brownian mode paths, exact Ornstein-Uhlenbeck
//! (stochastic convolution) increments and resolution coupling.
//!
//! The mode coefficients `β^k` of the Q-Wiener process are correlated
//! Brownian motions with `E[β^k(t) β^l(t)] = Σ_{kl}·t`. Per fine step of
//! size `δ` the pair (Brownian increment `Δβ`, convolution increment `I`)
//! is jointly Gaussian with blocks derived from the Itô isometry:
//!
//! ```text
//! Cov(Δβ)        = Σ·δ
//! Cov(I)_{kl}    = Σ_{kl}·(1 - e^{-(λ_k+λ_l)δ})/(λ_k+λ_l)        (the "M" matrix)
//! Cov(I, Δβ)_{kl} = Σ_{kl}·(1 - e^{-λ_k δ})/λ_k
//! ```
//!
//! Sampling draws `Δβ = Lv·z₁` and `I = K·z₁ + Lr·z₂` where `Lv Lvᵀ = Σ·δ`,
//! `K = Cov(I,Δβ)·Lv⁻ᵀ` and `Lr Lrᵀ = M - K·Kᵀ` (the conditional covariance
//! of `I` given `Δβ`). Both consumers pull `z₁, z₂` from the same
//! counter-based per-step block, so the Brownian path and the convolution
//! path belong to one realization, and coarse resolutions are exact
//! restrictions (sums of fine increments, truncation of modes, subsampling
//! of convolution states); nothing is ever resampled.

use std::sync::Arc;

use crate::covariance::CovarianceFactor;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, forward_solve, Matrix};
use crate::real::Real;
use crate::rng::GaussianStream;
use crate::spectral::{CollocationGrid, Eigenbasis, SineTable, SpectralField};

/// `(1 - e^{-x})/x`, continuous at 0 (series below 1e-6).
fn phi1<T: Real>(x: T) -> T {
    if x.abs() < T::lit(1e-6) {
        // 1 - x/2 + x²/6 - x³/24, truncation error < x⁴/120.
        T::one() - x / T::lit(2.0) + x * x / T::lit(6.0) - x * x * x / T::lit(24.0)
    } else {
        (T::one() - (-x).exp()) / x
    }
}

fn fnv_mix(h: &mut u64, bits: u64) {
    *h ^= bits;
    *h = h.wrapping_mul(0x100000001b3);
}

/// Identity of one noise realization: everything needed to regenerate any
/// part of it, without materialized increments.
#[derive(Debug, Clone)]
pub struct NoiseRealization<T> {
    factor: Arc<CovarianceFactor<T>>,
    steps: usize,
    t_final: T,
    seed: u64,
    hash: u64,
}

impl<T: Real> NoiseRealization<T> {
    pub fn new(
        factor: Arc<CovarianceFactor<T>>,
        steps: usize,
        t_final: T,
        seed: u64,
    ) -> Result<Self> {
        if steps < 1 {
            return Err(Error::config("a realization needs at least one step"));
        }
        if t_final <= T::zero() {
            return Err(Error::config("final time must be positive"));
        }
        let mut hash = 0xcbf29ce484222325u64;
        fnv_mix(&mut hash, factor.sigma_hash());
        fnv_mix(&mut hash, factor.dim() as u64);
        fnv_mix(&mut hash, steps as u64);
        fnv_mix(&mut hash, t_final.to_f64().unwrap_or(f64::NAN).to_bits());
        fnv_mix(&mut hash, seed);
        Ok(NoiseRealization {
            factor,
            steps,
            t_final,
            seed,
            hash,
        })
    }

    pub fn modes(&self) -> usize {
        self.factor.dim()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn t_final(&self) -> T {
        self.t_final
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn factor(&self) -> &Arc<CovarianceFactor<T>> {
        &self.factor
    }

    pub fn dt(&self) -> T {
        self.t_final / T::from_index(self.steps)
    }

    pub fn noise_hash(&self) -> u64 {
        self.hash
    }

    pub fn stream(&self) -> GaussianStream {
        GaussianStream::new(self.seed)
    }

    /// Restrict to fewer modes and coarser steps (`m_coarse` must divide the
    /// fine step count).
    pub fn view(&self, modes: usize, steps: usize) -> Result<NoiseView<'_, T>> {
        check_view(self.modes(), self.steps, modes, steps)?;
        Ok(NoiseView {
            realization: self,
            increments: None,
            modes,
            steps,
        })
    }
}

fn check_view(fine_modes: usize, fine_steps: usize, modes: usize, steps: usize) -> Result<()> {
    if modes < 1 || modes > fine_modes {
        return Err(Error::config(format!(
            "requested {modes} modes from a realization with {fine_modes}"
        )));
    }
    if steps < 1 || fine_steps % steps != 0 {
        return Err(Error::config(format!(
            "coarse step count {steps} must divide the fine step count {fine_steps}"
        )));
    }
    Ok(())
}

/// Correlated Brownian increments on the fine grid, materialized.
#[derive(Debug, Clone)]
pub struct BrownianHierarchy<T> {
    realization: NoiseRealization<T>,
    increments: Matrix<T>, // steps × modes
}

/// Restriction of a hierarchy (or bare realization) to coarser resolution.
#[derive(Debug, Clone, Copy)]
pub struct NoiseView<'a, T> {
    realization: &'a NoiseRealization<T>,
    increments: Option<&'a Matrix<T>>,
    modes: usize,
    steps: usize,
}

/// Sample a Brownian hierarchy: row `m` is `sqrt(δ)·L·z_m` with `z_m` the
/// first `N` normals of the counter block keyed by `(seed, m)`.
pub fn sample_brownian<T: Real>(
    factor: Arc<CovarianceFactor<T>>,
    steps: usize,
    t_final: T,
    seed: u64,
) -> Result<BrownianHierarchy<T>> {
    let realization = NoiseRealization::new(factor, steps, t_final, seed)?;
    let n = realization.modes();
    let stream = realization.stream();
    let sqrt_dt = realization.dt().sqrt();
    let lower = realization.factor.lower();

    let mut increments = Matrix::zeros(steps, n);
    let mut z = vec![T::zero(); 2 * n];
    for m in 0..steps {
        stream.fill_normals(m as u64, &mut z);
        let row = increments.row_mut(m);
        for i in 0..n {
            let mut acc = T::zero();
            for (l, zv) in lower.row(i)[..=i].iter().zip(z.iter()) {
                acc += *l * *zv;
            }
            row[i] = sqrt_dt * acc;
        }
    }
    Ok(BrownianHierarchy {
        realization,
        increments,
    })
}

impl<T: Real> BrownianHierarchy<T> {
    pub fn realization(&self) -> &NoiseRealization<T> {
        &self.realization
    }

    pub fn modes(&self) -> usize {
        self.realization.modes()
    }

    pub fn steps(&self) -> usize {
        self.realization.steps()
    }

    pub fn t_final(&self) -> T {
        self.realization.t_final()
    }

    pub fn seed(&self) -> u64 {
        self.realization.seed()
    }

    pub fn noise_hash(&self) -> u64 {
        self.realization.noise_hash()
    }

    pub fn increments(&self) -> &Matrix<T> {
        &self.increments
    }

    /// Identity view of the full hierarchy.
    pub fn full_view(&self) -> NoiseView<'_, T> {
        NoiseView {
            realization: &self.realization,
            increments: Some(&self.increments),
            modes: self.modes(),
            steps: self.steps(),
        }
    }

    /// Exact restriction: coarse increments are sums of fine increments,
    /// truncated to the first `modes` coordinates. Nothing is resampled.
    pub fn couple_restrict(&self, modes: usize, steps: usize) -> Result<NoiseView<'_, T>> {
        check_view(self.modes(), self.steps(), modes, steps)?;
        Ok(NoiseView {
            realization: &self.realization,
            increments: Some(&self.increments),
            modes,
            steps,
        })
    }

    /// Endpoint `β(T)` per mode (sum of all increments).
    pub fn endpoint(&self) -> Vec<T> {
        let n = self.modes();
        let mut acc = vec![T::zero(); n];
        for m in 0..self.steps() {
            for (a, &v) in acc.iter_mut().zip(self.increments.row(m)) {
                *a += v;
            }
        }
        acc
    }
}

impl<'a, T: Real> NoiseView<'a, T> {
    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn realization(&self) -> &'a NoiseRealization<T> {
        self.realization
    }

    pub fn dt(&self) -> T {
        self.realization.t_final() / T::from_index(self.steps)
    }

    /// Fine steps per coarse step.
    pub fn stride(&self) -> usize {
        self.realization.steps() / self.steps
    }

    /// Coarse increment `m`: the sum of its fine increments (bitwise
    /// reproducible: fixed summation order). Requires materialized
    /// increments.
    pub fn increment(&self, m: usize) -> Result<Vec<T>> {
        let fine = self
            .increments
            .ok_or_else(|| Error::config("this view has no materialized Brownian increments"))?;
        if m >= self.steps {
            return Err(Error::config(format!(
                "step {m} out of range for {} coarse steps",
                self.steps
            )));
        }
        let stride = self.stride();
        let mut acc = vec![T::zero(); self.modes];
        for f in (m * stride)..((m + 1) * stride) {
            for (a, &v) in acc.iter_mut().zip(&fine.row(f)[..self.modes]) {
                *a += v;
            }
        }
        Ok(acc)
    }

    /// Path `β` at the coarse grid times (β(0) = 0).
    pub fn brownian_path(&self) -> Result<Vec<Vec<T>>> {
        let mut path = Vec::with_capacity(self.steps + 1);
        let mut acc = vec![T::zero(); self.modes];
        path.push(acc.clone());
        for m in 0..self.steps {
            for (a, v) in acc.iter_mut().zip(self.increment(m)?) {
                *a += v;
            }
            path.push(acc.clone());
        }
        Ok(path)
    }
}

/// `M_{kl} = Σ_{kl}·(1 - e^{-(λ_k+λ_l)·dt})/(λ_k+λ_l)`: the exact covariance
/// of the per-step stochastic convolution increment.
pub fn ou_increment_cov<T: Real>(dt: T, eigenvalues: &[T], sigma: &Matrix<T>) -> Matrix<T> {
    let n = sigma.rows();
    debug_assert!(eigenvalues.len() >= n);
    Matrix::from_fn(n, n, |k, l| {
        let s = eigenvalues[k] + eigenvalues[l];
        sigma[(k, l)] * dt * phi1(s * dt)
    })
}

/// Per-step exact sampler for the pair (Brownian increment, convolution
/// increment) at the fine step size.
#[derive(Debug, Clone)]
pub struct OuIncrementSampler<T> {
    dt: T,
    eigenvalues: Vec<T>,
    m_matrix: Matrix<T>,
    m_factor: Matrix<T>,
    brownian_factor: Matrix<T>, // Lv = sqrt(dt)·L
    cross: Matrix<T>,           // K = Cov(I,Δβ)·Lv⁻ᵀ
    resid_factor: Matrix<T>,    // Lr with Lr·Lrᵀ = M - K·Kᵀ
}

impl<T: Real> OuIncrementSampler<T> {
    pub fn new(dt: T, eigenvalues: &[T], factor: &CovarianceFactor<T>) -> Result<Self> {
        if dt <= T::zero() {
            return Err(Error::domain("step size must be positive"));
        }
        let n = factor.dim();
        if eigenvalues.len() < n {
            return Err(Error::config(format!(
                "need {n} eigenvalues, got {}",
                eigenvalues.len()
            )));
        }
        let eigenvalues = eigenvalues[..n].to_vec();
        let sigma = factor.sigma();

        let m_matrix = ou_increment_cov(dt, &eigenvalues, sigma);
        let (m_factor, _) = cholesky_with_jitter(&m_matrix)?;

        let sqrt_dt = dt.sqrt();
        let brownian_factor = Matrix::from_fn(n, n, |i, j| factor.lower()[(i, j)] * sqrt_dt);

        // Cov(I, Δβ)_{kl} = Σ_{kl}·dt·φ₁(λ_k·dt): damping depends on the
        // convolution index k only.
        let damp: Vec<T> = eigenvalues.iter().map(|&l| dt * phi1(l * dt)).collect();
        let zero_noise = sigma.max_abs() == T::zero();

        let mut cross = Matrix::zeros(n, n);
        if !zero_noise {
            for k in 0..n {
                let mut row: Vec<T> = (0..n).map(|l| sigma[(k, l)] * damp[k]).collect();
                // Row k of K solves K·Lvᵀ = C, i.e. Lv·(row of K) = (row of C).
                forward_solve(&brownian_factor, &mut row);
                cross.row_mut(k).copy_from_slice(&row);
            }
        }

        let mut schur = m_matrix.clone();
        for k in 0..n {
            for l in 0..n {
                let mut acc = T::zero();
                for j in 0..n {
                    acc += cross[(k, j)] * cross[(l, j)];
                }
                schur[(k, l)] = schur[(k, l)] - acc;
            }
        }
        schur.symmetrize();
        let (resid_factor, _) = cholesky_with_jitter(&schur)?;

        Ok(OuIncrementSampler {
            dt,
            eigenvalues,
            m_matrix,
            m_factor,
            brownian_factor,
            cross,
            resid_factor,
        })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn modes(&self) -> usize {
        self.m_matrix.rows()
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    /// The increment covariance `M`.
    pub fn m_matrix(&self) -> &Matrix<T> {
        &self.m_matrix
    }

    /// Lower-triangular factor of `M` (used when increments are drawn
    /// unconditionally, e.g. in distribution tests).
    pub fn m_factor(&self) -> &Matrix<T> {
        &self.m_factor
    }

    /// Draw the step's convolution increment (first `rows` coordinates) from
    /// the counter block `(seed, step)`, coupled to the Brownian increment
    /// drawn from the same block. `z` is scratch of length `2·modes`.
    pub fn increment_from_stream(
        &self,
        stream: &GaussianStream,
        step: u64,
        rows: usize,
        out: &mut [T],
        z: &mut Vec<T>,
    ) {
        let n = self.modes();
        z.resize(2 * n, T::zero());
        stream.fill_normals(step, z);
        let (z1, z2) = z.split_at(n);
        self.cross.matvec_rows(z1, out, rows);
        self.resid_factor.lower_matvec_add_rows(z2, out, rows);
    }

    /// Draw an unconditioned increment `I ~ N(0, M)` from fresh normals
    /// (distribution tests only; not coupled to a Brownian path).
    pub fn increment_unconditional(&self, z2: &[T], out: &mut [T]) {
        let n = self.modes();
        debug_assert_eq!(z2.len(), n);
        out.iter_mut().for_each(|v| *v = T::zero());
        self.m_factor.lower_matvec_add_rows(z2, out, n);
    }

    /// Draw the coupled pair `(Δβ, I)` of one step from its counter block.
    pub fn pair_from_stream(
        &self,
        stream: &GaussianStream,
        step: u64,
        d_beta: &mut [T],
        inc: &mut [T],
        z: &mut Vec<T>,
    ) {
        let n = self.modes();
        z.resize(2 * n, T::zero());
        stream.fill_normals(step, z);
        let (z1, z2) = z.split_at(n);
        d_beta.iter_mut().for_each(|v| *v = T::zero());
        self.brownian_factor.lower_matvec_add_rows(z1, d_beta, n);
        self.cross.matvec_rows(z1, inc, n);
        self.resid_factor.lower_matvec_add_rows(z2, inc, n);
    }
}

/// How an Ornstein-Uhlenbeck path was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuGeneration {
    Exact,
    EulerReference,
    External,
}

/// Stochastic convolution path `O_t` sampled on a uniform time grid.
#[derive(Debug, Clone)]
pub struct OuPath<T> {
    times: Vec<T>,
    states: Vec<SpectralField<T>>,
    mode: OuGeneration,
    noise_hash: u64,
}

impl<T: Real> OuPath<T> {
    pub fn from_states(
        times: Vec<T>,
        states: Vec<SpectralField<T>>,
        mode: OuGeneration,
        noise_hash: u64,
    ) -> Result<Self> {
        if times.len() != states.len() || times.is_empty() {
            return Err(Error::config("times and states must match and be nonempty"));
        }
        Ok(OuPath {
            times,
            states,
            mode,
            noise_hash,
        })
    }

    /// The noise-off path: identically zero, tagged so that deterministic
    /// runs still carry a consistent realization hash.
    pub fn zeros(n_modes: usize, m_steps: usize, t_final: T, basis: &Arc<Eigenbasis<T>>) -> Self {
        let dt = t_final / T::from_index(m_steps);
        let times = (0..=m_steps).map(|m| dt * T::from_index(m)).collect();
        let states = (0..=m_steps)
            .map(|_| SpectralField::zeros(n_modes, Arc::clone(basis)))
            .collect();
        let mut hash = 0xcbf29ce484222325u64;
        fnv_mix(&mut hash, 0x5a45524f); // "ZERO"
        fnv_mix(&mut hash, n_modes as u64);
        fnv_mix(&mut hash, t_final.to_f64().unwrap_or(f64::NAN).to_bits());
        OuPath {
            times,
            states,
            mode: OuGeneration::External,
            noise_hash: hash,
        }
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn state(&self, m: usize) -> &SpectralField<T> {
        &self.states[m]
    }

    pub fn states(&self) -> &[SpectralField<T>] {
        &self.states
    }

    pub fn generation(&self) -> OuGeneration {
        self.mode
    }

    pub fn noise_hash(&self) -> u64 {
        self.noise_hash
    }

    pub fn modes(&self) -> usize {
        self.states[0].modes()
    }

    /// Truncate to `modes` coordinates and subsample every `stride`-th time.
    /// The result is the same realization (hash preserved): the per-mode
    /// recursion is diagonal, so truncation and subsampling commute with
    /// generation.
    pub fn restrict(&self, modes: usize, stride: usize) -> Result<OuPath<T>> {
        if modes > self.modes() || modes == 0 {
            return Err(Error::config(format!(
                "cannot restrict path with {} modes to {modes}",
                self.modes()
            )));
        }
        if stride == 0 || self.steps() % stride != 0 {
            return Err(Error::config(format!(
                "stride {stride} must divide the step count {}",
                self.steps()
            )));
        }
        let times = self.times.iter().step_by(stride).copied().collect();
        let states = self
            .states
            .iter()
            .step_by(stride)
            .map(|s| s.project(modes))
            .collect();
        Ok(OuPath {
            times,
            states,
            mode: self.mode,
            noise_hash: self.noise_hash,
        })
    }
}

/// Exactly sampled convolution path on the view's grid.
///
/// The recursion always runs at the realization's fine step:
/// `O_{m+1} = e^{-λδ}∘O_m + I_m` with `I_m` drawn by [`OuIncrementSampler`],
/// and states are stored at the view's (coarser) grid times.
pub fn ou_path_exact<T: Real>(
    view: &NoiseView<'_, T>,
    basis: &Arc<Eigenbasis<T>>,
) -> Result<OuPath<T>> {
    let sampler = OuIncrementSampler::new(
        view.realization().dt(),
        basis.eigenvalues(),
        view.realization().factor(),
    )?;
    ou_path_exact_with(view, basis, &sampler)
}

/// [`ou_path_exact`] with a caller-provided sampler (so studies can reuse the
/// factorizations across seeds).
pub fn ou_path_exact_with<T: Real>(
    view: &NoiseView<'_, T>,
    basis: &Arc<Eigenbasis<T>>,
    sampler: &OuIncrementSampler<T>,
) -> Result<OuPath<T>> {
    let real = view.realization();
    if sampler.modes() != real.modes() || sampler.dt() != real.dt() {
        return Err(Error::config("sampler does not match the realization"));
    }
    if basis.max_modes() < view.modes() {
        return Err(Error::config("basis too small for the requested view"));
    }
    let n = view.modes();
    let fine_steps = real.steps();
    let stride = view.stride();
    let delta = real.dt();
    let stream = real.stream();

    let decay: Vec<T> = basis.eigenvalues()[..n]
        .iter()
        .map(|&l| (-l * delta).exp())
        .collect();

    let mut o = vec![T::zero(); n];
    let mut inc = vec![T::zero(); n];
    let mut z = Vec::new();
    let mut times = Vec::with_capacity(view.steps() + 1);
    let mut states = Vec::with_capacity(view.steps() + 1);
    times.push(T::zero());
    states.push(SpectralField::zeros(n, Arc::clone(basis)));

    for m in 0..fine_steps {
        sampler.increment_from_stream(&stream, m as u64, n, &mut inc, &mut z);
        for ((ov, &d), &iv) in o.iter_mut().zip(decay.iter()).zip(inc.iter()) {
            *ov = d * *ov + iv;
        }
        if (m + 1) % stride == 0 {
            times.push(delta * T::from_index(m + 1));
            states.push(SpectralField::new(o.clone(), Arc::clone(basis))?);
        }
    }
    OuPath::from_states(times, states, OuGeneration::Exact, real.noise_hash())
}

/// Riemann-sum reference for the convolution path, used only as an oracle
/// for [`ou_path_exact`].
///
/// Evaluates the integration-by-parts form `O_t = β(t) - λ∫₀ᵗ e^{-λ(t-s)}β(s) ds`
/// with a left-point Riemann sum over the hierarchy's fine grid, and reports
/// states every `substeps` fine steps. For a fixed coupled realization the
/// gap to the exact path shrinks like the square root of the fine resolution
/// (the Riemann sum cannot see intra-cell Brownian fluctuation).
pub fn ou_path_euler_reference<T: Real>(
    h: &BrownianHierarchy<T>,
    eigenvalues: &[T],
    substeps: usize,
    basis: &Arc<Eigenbasis<T>>,
) -> Result<OuPath<T>> {
    let fine_steps = h.steps();
    if substeps == 0 || fine_steps % substeps != 0 {
        return Err(Error::config(format!(
            "substeps {substeps} must divide the fine step count {fine_steps}"
        )));
    }
    let n = h.modes();
    if eigenvalues.len() < n || basis.max_modes() < n {
        return Err(Error::config(
            "eigenvalues/basis too small for the hierarchy",
        ));
    }
    let delta = h.realization().dt();
    let decay: Vec<T> = eigenvalues[..n]
        .iter()
        .map(|&l| (-l * delta).exp())
        .collect();

    let mut beta = vec![T::zero(); n];
    let mut conv = vec![T::zero(); n]; // J(t) = ∫₀ᵗ e^{-λ(t-s)} β(s) ds
    let mut times = Vec::with_capacity(fine_steps / substeps + 1);
    let mut states = Vec::with_capacity(fine_steps / substeps + 1);
    times.push(T::zero());
    states.push(SpectralField::zeros(n, Arc::clone(basis)));

    for m in 0..fine_steps {
        // Left-point rule: J(t_{m+1}) = e^{-λδ}(J(t_m) + δ·β(t_m)).
        for ((j, &d), &b) in conv.iter_mut().zip(decay.iter()).zip(beta.iter()) {
            *j = d * (*j + delta * b);
        }
        for (b, &db) in beta.iter_mut().zip(h.increments().row(m)) {
            *b += db;
        }
        if (m + 1) % substeps == 0 {
            let coeffs: Vec<T> = (0..n).map(|k| beta[k] - eigenvalues[k] * conv[k]).collect();
            times.push(delta * T::from_index(m + 1));
            states.push(SpectralField::new(coeffs, Arc::clone(basis))?);
        }
    }
    OuPath::from_states(times, states, OuGeneration::EulerReference, h.noise_hash())
}

/// Largest Hölder quotient `‖O_{t₂} - O_{t₁}‖_V / (t₂-t₁)^θ` over grid pairs.
///
/// All pairs are scanned up to 10⁴ grid points; beyond that, pairs are
/// strided dyadically (every separation `2^j`, offsets stepped by
/// `max(1, 2^j/8)`), which preserves near-diagonal pairs at every scale.
pub fn holder_quotient<T: Real>(path: &OuPath<T>, theta: T) -> Result<T> {
    if theta <= T::zero() || theta >= T::lit(0.5) {
        return Err(Error::domain("theta must lie in (0, 1/2)"));
    }
    let n_times = path.times().len();
    if n_times < 2 {
        return Ok(T::zero());
    }
    let n = path.modes();
    let grid = CollocationGrid::new(4 * n + 1);
    let table = SineTable::new(&grid, n);

    // Evaluate every state once.
    let g = grid.len();
    let mut values = vec![T::zero(); n_times * g];
    for (idx, st) in path.states().iter().enumerate() {
        table.eval_into(st.coeffs(), &mut values[idx * g..(idx + 1) * g]);
    }
    let sup_diff = |a: usize, b: usize| -> T {
        let ra = &values[a * g..(a + 1) * g];
        let rb = &values[b * g..(b + 1) * g];
        ra.iter()
            .zip(rb.iter())
            .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
    };

    let mut best = T::zero();
    if n_times <= 10_000 {
        for a in 0..n_times {
            for b in (a + 1)..n_times {
                let dt = path.times()[b] - path.times()[a];
                best = best.max(sup_diff(a, b) / dt.powf(theta));
            }
        }
    } else {
        let mut sep = 1usize;
        while sep < n_times {
            let stride_a = (sep / 8).max(1);
            let mut a = 0usize;
            while a + sep < n_times {
                let b = a + sep;
                let dt = path.times()[b] - path.times()[a];
                best = best.max(sup_diff(a, b) / dt.powf(theta));
                a += stride_a;
            }
            sep *= 2;
        }
    }
    Ok(best)
}
