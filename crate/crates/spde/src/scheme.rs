//! Exponential Euler time stepping on the Galerkin space.
//!
//! One step of size `Δt` maps the state `Y_m` to
//!
//! ```text
//! Y_{m+1} = S_Δt(Y_m + Δt·P_N F(Y_m)) + P_N(O_{(m+1)Δt} - S_Δt O_{mΔt}),
//! ```
//!
//! where the semigroup acts diagonally as `e^{-k²Δt}` and the convolution
//! increment is supplied by the caller from an [`crate::noise::OuPath`].
//! With `F = 0` the recursion telescopes to `Y_m = P_N O_{mΔt}` exactly,
//! which is the structural test anchoring the implementation.
//!
//! `P_N F` is evaluated pseudospectrally: transform to a collocation grid of
//! `G_F ≥ 2N` points, apply `f` pointwise, transform back and truncate. For
//! a cubic `f` the first `N` returned modes are then alias-free; the
//! non-polynomial nonlinearity defaults to `G_F ≈ 4N`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::noise::OuPath;
use crate::real::Real;
use crate::spectral::{Eigenbasis, SpectralField};
use crate::transforms::DstPlan;

/// Pointwise drift nonlinearity `f` with its Nemytskii lift metadata.
#[derive(Clone)]
pub enum Nonlinearity<T> {
    Zero,
    /// `f(y) = c·y`; the Nemytskii lift is diagonal in coefficient space.
    Linear(T),
    /// `f(y) = 5(1-y)/(1+y²)`, globally Lipschitz (growth exponent 0).
    Rational5,
    /// `f(y) = -y³`, locally Lipschitz with growth exponent 2.
    Cubic,
    /// Arbitrary pointwise map with caller-declared metadata.
    Custom {
        f: Arc<dyn Fn(T) -> T + Send + Sync>,
        lipschitz: T,
        growth_p: u32,
        polynomial_degree: Option<u32>,
    },
}

impl<T: Real> Nonlinearity<T> {
    pub fn eval(&self, y: T) -> T {
        match self {
            Nonlinearity::Zero => T::zero(),
            Nonlinearity::Linear(c) => *c * y,
            Nonlinearity::Rational5 => T::lit(5.0) * (T::one() - y) / (T::one() + y * y),
            Nonlinearity::Cubic => -(y * y * y),
            Nonlinearity::Custom { f, .. } => f(y),
        }
    }

    /// Lipschitz constant `L` in `‖F(u)-F(v)‖ ≤ L‖u-v‖(1+‖u‖^p+‖v‖^p)`.
    pub fn lipschitz(&self) -> T {
        match self {
            Nonlinearity::Zero => T::zero(),
            Nonlinearity::Linear(c) => c.abs(),
            Nonlinearity::Rational5 => T::lit(5.0),
            Nonlinearity::Cubic => T::lit(3.0),
            Nonlinearity::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    /// Growth exponent `p` of the local Lipschitz bound.
    pub fn growth_p(&self) -> u32 {
        match self {
            Nonlinearity::Zero | Nonlinearity::Linear(_) | Nonlinearity::Rational5 => 0,
            Nonlinearity::Cubic => 2,
            Nonlinearity::Custom { growth_p, .. } => *growth_p,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Zero => "zero",
            Nonlinearity::Linear(_) => "linear",
            Nonlinearity::Rational5 => "rational5",
            Nonlinearity::Cubic => "cubic",
            Nonlinearity::Custom { .. } => "custom",
        }
    }

    /// Grid points needed for an alias-free (or well-resolved) Nemytskii
    /// evaluation of `n` retained modes, rounded up so the fast sine
    /// transform applies. Polynomials of degree `d` are exact at `d·n`
    /// collocation points minus aliasing headroom; `2n` suffices for cubics.
    /// Non-polynomial maps get `4n` by default.
    pub fn default_dealias_grid(&self, n: usize) -> usize {
        let base = match self {
            Nonlinearity::Zero | Nonlinearity::Linear(_) => 2 * n,
            Nonlinearity::Cubic => 2 * n,
            Nonlinearity::Rational5 => 4 * n,
            Nonlinearity::Custom {
                polynomial_degree, ..
            } => match polynomial_degree {
                Some(d) => (*d as usize).max(2) * n / 2 * 2,
                None => 4 * n,
            },
        };
        (base + 1).next_power_of_two() - 1
    }
}

impl<T> std::fmt::Debug for Nonlinearity<T>
where
    T: std::fmt::Debug,
{
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Nonlinearity::Zero => write!(f, "Zero"),
            Nonlinearity::Linear(c) => write!(f, "Linear({c:?})"),
            Nonlinearity::Rational5 => write!(f, "Rational5"),
            Nonlinearity::Cubic => write!(f, "Cubic"),
            Nonlinearity::Custom { .. } => write!(f, "Custom"),
        }
    }
}

/// Discretization parameters of one run.
#[derive(Debug, Clone)]
pub struct SchemeConfig<T> {
    pub n_modes: usize,
    pub m_steps: usize,
    pub t_final: T,
    /// Collocation size for the Nemytskii evaluation (`>= 2·n_modes`).
    pub dealias_grid: usize,
    /// Collocation size for norm evaluation and exports.
    pub eval_grid: usize,
}

impl<T: Real> SchemeConfig<T> {
    pub fn new(n_modes: usize, m_steps: usize, t_final: T, f: &Nonlinearity<T>) -> Self {
        SchemeConfig {
            n_modes,
            m_steps,
            t_final,
            dealias_grid: f.default_dealias_grid(n_modes),
            eval_grid: 4 * n_modes + 1,
        }
    }

    pub fn dt(&self) -> T {
        self.t_final / T::from_index(self.m_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modes < 1 || self.m_steps < 1 {
            return Err(Error::config("need at least one mode and one step"));
        }
        if self.t_final <= T::zero() {
            return Err(Error::config("final time must be positive"));
        }
        if self.dealias_grid < 2 * self.n_modes {
            return Err(Error::config(format!(
                "dealias grid {} violates the G >= 2N rule (N = {})",
                self.dealias_grid, self.n_modes
            )));
        }
        Ok(())
    }
}

/// How a simulated trajectory ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrajectoryStatus {
    Completed,
    /// Non-finite values or a sup norm past the hard abort threshold; the
    /// trajectory holds the data up to and including the last finite state.
    Diverged {
        step: usize,
        reason: String,
    },
}

/// Time-discrete solution path with its sup-norm history.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    times: Vec<T>,
    states: Vec<SpectralField<T>>,
    keep_every: usize,
    sup_history: Vec<T>,
    bounded: bool,
    cap: T,
    status: TrajectoryStatus,
    noise_hash: u64,
    n_modes: usize,
    m_steps: usize,
    t_final: T,
}

impl<T: Real> Trajectory<T> {
    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn states(&self) -> &[SpectralField<T>] {
        &self.states
    }

    pub fn state(&self, idx: usize) -> &SpectralField<T> {
        &self.states[idx]
    }

    /// Stored state at a given step index, if that step was kept.
    pub fn state_at_step(&self, step: usize) -> Option<&SpectralField<T>> {
        if step % self.keep_every == 0 {
            self.states.get(step / self.keep_every)
        } else if step == self.m_steps {
            self.states.last()
        } else {
            None
        }
    }

    pub fn keep_every(&self) -> usize {
        self.keep_every
    }

    /// Sup norms of every step's state on the dealias grid, length `M+1`
    /// (up to divergence).
    pub fn sup_history(&self) -> &[T] {
        &self.sup_history
    }

    pub fn bounded(&self) -> bool {
        self.bounded
    }

    pub fn cap(&self) -> T {
        self.cap
    }

    pub fn status(&self) -> &TrajectoryStatus {
        &self.status
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, TrajectoryStatus::Diverged { .. })
    }

    pub fn noise_hash(&self) -> u64 {
        self.noise_hash
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn m_steps(&self) -> usize {
        self.m_steps
    }

    pub fn t_final(&self) -> T {
        self.t_final
    }
}

/// Reusable stepper: plans, semigroup factors and scratch for one `(N, Δt)`.
pub struct ExponentialEuler<T> {
    n: usize,
    dt: T,
    decay: Vec<T>,
    f: Nonlinearity<T>,
    plan: DstPlan<T>,
    g_f: usize,
    grid_vals: Vec<T>,
    raw: Vec<T>,
    fy: Vec<T>,
    synth_norm: T,
    analysis_scale: T,
}

impl<T: Real> ExponentialEuler<T> {
    pub fn new(
        basis: &Arc<Eigenbasis<T>>,
        n: usize,
        dt: T,
        f: Nonlinearity<T>,
        g_f: usize,
    ) -> Result<Self> {
        if n > basis.max_modes() {
            return Err(Error::config("more modes than the basis carries"));
        }
        if g_f < 2 * n {
            return Err(Error::config(format!(
                "dealias grid {g_f} violates the G >= 2N rule (N = {n})"
            )));
        }
        if dt <= T::zero() {
            return Err(Error::domain("step size must be positive"));
        }
        let decay = basis.eigenvalues()[..n]
            .iter()
            .map(|&l| (-l * dt).exp())
            .collect();
        Ok(ExponentialEuler {
            n,
            dt,
            decay,
            f,
            plan: DstPlan::new(g_f),
            g_f,
            grid_vals: vec![T::zero(); g_f],
            raw: vec![T::zero(); g_f],
            fy: vec![T::zero(); n],
            synth_norm: T::basis_norm(),
            analysis_scale: (T::PI() / T::lit(2.0)).sqrt() * T::lit(2.0) / T::from_index(g_f + 1),
        })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn modes(&self) -> usize {
        self.n
    }

    pub fn decay_factors(&self) -> &[T] {
        &self.decay
    }

    pub fn dealias_grid(&self) -> usize {
        self.g_f
    }

    /// Evaluate the current state on the dealias grid; returns its sup norm.
    fn synthesize(&mut self, coeffs: &[T]) -> T {
        self.plan.apply(coeffs, &mut self.grid_vals);
        let mut sup = T::zero();
        for v in self.grid_vals.iter_mut() {
            *v *= self.synth_norm;
            sup = sup.max(v.abs());
        }
        sup
    }

    /// `P_N F(y)` into `self.fy`. Assumes `synthesize` ran for `y` when the
    /// nonlinearity needs grid values.
    fn nemytskii_into(&mut self, y: &[T], step: usize) -> Result<()> {
        match &self.f {
            Nonlinearity::Zero => self.fy.iter_mut().for_each(|v| *v = T::zero()),
            Nonlinearity::Linear(c) => {
                let c = *c;
                for (slot, &v) in self.fy.iter_mut().zip(y.iter()) {
                    *slot = c * v;
                }
            }
            _ => {
                for v in self.grid_vals.iter_mut() {
                    *v = self.f.eval(*v);
                    if !v.is_finite() {
                        return Err(Error::Divergence {
                            step,
                            reason: "nonlinearity produced a non-finite value".into(),
                        });
                    }
                }
                let (grid_vals, raw) = (&self.grid_vals, &mut self.raw);
                self.plan.apply(grid_vals, raw);
                for (slot, &r) in self.fy.iter_mut().zip(self.raw.iter()) {
                    *slot = r * self.analysis_scale;
                }
            }
        }
        Ok(())
    }

    /// One scheme step in place; `d_o` is `P_N(O_{m+1} - S_Δt O_m)` in
    /// coefficients. Returns the sup norm of the state *before* the step.
    pub fn step_in_place(&mut self, y: &mut [T], d_o: &[T], step: usize) -> Result<T> {
        debug_assert_eq!(y.len(), self.n);
        debug_assert_eq!(d_o.len(), self.n);
        let needs_grid = !matches!(self.f, Nonlinearity::Zero | Nonlinearity::Linear(_));
        let sup = if needs_grid {
            self.synthesize(y)
        } else {
            // Cheap monitor for diagonal nonlinearities: still evaluated on
            // the dealias grid so histories are comparable.
            self.synthesize(y)
        };
        if !sup.is_finite() {
            return Err(Error::Divergence {
                step,
                reason: "state has non-finite sup norm".into(),
            });
        }
        self.nemytskii_into(y, step)?;
        for k in 0..self.n {
            y[k] = self.decay[k] * (y[k] + self.dt * self.fy[k]) + d_o[k];
        }
        Ok(sup)
    }

    /// Sup norm of a coefficient vector on the dealias grid.
    pub fn sup_on_grid(&mut self, coeffs: &[T]) -> T {
        self.synthesize(coeffs)
    }
}

/// Pointwise Nemytskii lift `P_N F(u)` by collocation on `g_f` points.
pub fn nemytskii_apply<T: Real>(
    f: &Nonlinearity<T>,
    u: &SpectralField<T>,
    g_f: usize,
) -> Result<SpectralField<T>> {
    let n = u.modes();
    if g_f < 2 * n {
        return Err(Error::config(format!(
            "dealias grid {g_f} violates the G >= 2N rule (N = {n})"
        )));
    }
    match f {
        Nonlinearity::Zero => Ok(SpectralField::zeros(n, Arc::clone(u.basis()))),
        Nonlinearity::Linear(c) => {
            let coeffs = u.coeffs().iter().map(|&v| *c * v).collect();
            SpectralField::new(coeffs, Arc::clone(u.basis()))
        }
        _ => {
            let mut stepper = ExponentialEuler::new(u.basis(), n, T::one(), f.clone(), g_f)?;
            stepper.synthesize(u.coeffs());
            stepper.nemytskii_into(u.coeffs(), 0)?;
            SpectralField::new(stepper.fy.clone(), Arc::clone(u.basis()))
        }
    }
}

/// One exponential Euler step as a standalone operation.
pub fn step<T: Real>(
    y: &SpectralField<T>,
    f: &Nonlinearity<T>,
    dt: T,
    d_o: &SpectralField<T>,
    g_f: usize,
) -> Result<SpectralField<T>> {
    if d_o.modes() != y.modes() {
        return Err(Error::config(format!(
            "noise increment has {} modes, state has {}",
            d_o.modes(),
            y.modes()
        )));
    }
    let mut stepper = ExponentialEuler::new(y.basis(), y.modes(), dt, f.clone(), g_f)?;
    let mut coeffs = y.coeffs().to_vec();
    stepper.step_in_place(&mut coeffs, d_o.coeffs(), 0)?;
    SpectralField::new(coeffs, Arc::clone(y.basis()))
}

/// Extended options for [`simulate_with`].
#[derive(Debug, Clone, Copy)]
pub struct SimulateOptions<T> {
    /// Store states only every this many steps (the final state is always
    /// kept). Sup-norm history is always complete.
    pub keep_every: usize,
    /// Boundedness cap; the run aborts past `10×` this value.
    pub cap: T,
}

impl<T: Real> SimulateOptions<T> {
    pub fn with_cap(cap: T) -> Self {
        SimulateOptions { keep_every: 1, cap }
    }
}

/// Core simulation loop with a caller-supplied per-step noise increment.
///
/// `next_do(m, buf)` must fill `buf` with `P_N(O_{(m+1)Δt} - S_Δt O_{mΔt})`.
pub fn simulate_with<T: Real>(
    config: &SchemeConfig<T>,
    f: &Nonlinearity<T>,
    xi: &SpectralField<T>,
    basis: &Arc<Eigenbasis<T>>,
    mut next_do: impl FnMut(usize, &[T], &mut [T]),
    opts: SimulateOptions<T>,
    noise_hash: u64,
) -> Result<Trajectory<T>> {
    config.validate()?;
    let n = config.n_modes;
    if basis.max_modes() < n {
        return Err(Error::config("basis too small for the configured modes"));
    }
    let dt = config.dt();
    let mut stepper = ExponentialEuler::new(basis, n, dt, f.clone(), config.dealias_grid)?;
    let keep = opts.keep_every.max(1);
    let hard_abort = opts.cap * T::lit(10.0);

    // Y_0 = P_N ξ (truncate, zero-padding shorter initial data).
    let mut y = vec![T::zero(); n];
    for (slot, &c) in y.iter_mut().zip(xi.coeffs().iter()) {
        *slot = c;
    }

    let mut d_o = vec![T::zero(); n];
    let mut times = Vec::with_capacity(config.m_steps / keep + 2);
    let mut states = Vec::with_capacity(config.m_steps / keep + 2);
    let mut sup_history = Vec::with_capacity(config.m_steps + 1);
    times.push(T::zero());
    states.push(SpectralField::new(y.clone(), Arc::clone(basis))?);

    let mut status = TrajectoryStatus::Completed;
    let mut max_sup = T::zero();
    for m in 0..config.m_steps {
        next_do(m, stepper.decay_factors(), &mut d_o);
        let sup = match stepper.step_in_place(&mut y, &d_o, m) {
            Ok(sup) => sup,
            Err(Error::Divergence { step, reason }) => {
                status = TrajectoryStatus::Diverged { step, reason };
                break;
            }
            Err(other) => return Err(other),
        };
        sup_history.push(sup);
        max_sup = max_sup.max(sup);
        if sup > hard_abort {
            status = TrajectoryStatus::Diverged {
                step: m,
                reason: format!("sup norm {sup} exceeded 10x cap {}", opts.cap),
            };
            break;
        }
        let done = m + 1 == config.m_steps;
        if (m + 1) % keep == 0 || done {
            times.push(dt * T::from_index(m + 1));
            states.push(SpectralField::new(y.clone(), Arc::clone(basis))?);
        }
    }
    if status == TrajectoryStatus::Completed {
        // Sup norm of the final state completes the history.
        let sup = stepper.sup_on_grid(&y);
        sup_history.push(sup);
        max_sup = max_sup.max(sup);
    }

    Ok(Trajectory {
        times,
        states,
        keep_every: keep,
        sup_history,
        bounded: max_sup <= opts.cap && status == TrajectoryStatus::Completed,
        cap: opts.cap,
        status,
        noise_hash,
        n_modes: n,
        m_steps: config.m_steps,
        t_final: config.t_final,
    })
}

/// Run the scheme against a sampled convolution path.
///
/// The path must live on exactly the configured time grid and carry at least
/// `N` modes; divergence aborts the run and is reported in the trajectory
/// status, never silently continued past.
pub fn simulate<T: Real>(
    config: &SchemeConfig<T>,
    f: &Nonlinearity<T>,
    xi: &SpectralField<T>,
    ou: &OuPath<T>,
    cap: T,
) -> Result<Trajectory<T>> {
    simulate_opts(config, f, xi, ou, SimulateOptions::with_cap(cap))
}

/// [`simulate`] with storage options.
pub fn simulate_opts<T: Real>(
    config: &SchemeConfig<T>,
    f: &Nonlinearity<T>,
    xi: &SpectralField<T>,
    ou: &OuPath<T>,
    opts: SimulateOptions<T>,
) -> Result<Trajectory<T>> {
    config.validate()?;
    if ou.steps() != config.m_steps {
        return Err(Error::config(format!(
            "convolution path has {} steps, scheme needs {}",
            ou.steps(),
            config.m_steps
        )));
    }
    if ou.modes() < config.n_modes {
        return Err(Error::config(format!(
            "convolution path has {} modes, scheme needs {}",
            ou.modes(),
            config.n_modes
        )));
    }
    let dt = config.dt();
    let grid_dt = ou.times()[1] - ou.times()[0];
    if (grid_dt - dt).abs() > T::lit(1e-12) * dt {
        return Err(Error::config(
            "convolution path grid spacing does not match the scheme step",
        ));
    }
    let basis = Arc::clone(ou.state(0).basis());
    let n = config.n_modes;
    simulate_with(
        config,
        f,
        xi,
        &basis,
        |m, decay, buf| {
            let curr = ou.state(m).coeffs();
            let next = ou.state(m + 1).coeffs();
            for k in 0..n {
                buf[k] = next[k] - decay[k] * curr[k];
            }
        },
        opts,
        ou.noise_hash(),
    )
}

/// Summary of the uniform-bound monitor for one trajectory.
#[derive(Debug, Clone)]
pub struct BoundednessReport<T> {
    pub max_sup: T,
    pub argmax_step: usize,
    pub bounded: bool,
    pub cap: T,
    pub diverged: bool,
}

pub fn boundedness_report<T: Real>(traj: &Trajectory<T>) -> BoundednessReport<T> {
    let mut max_sup = T::zero();
    let mut argmax = 0usize;
    for (m, &s) in traj.sup_history().iter().enumerate() {
        if s > max_sup {
            max_sup = s;
            argmax = m;
        }
    }
    BoundednessReport {
        max_sup,
        argmax_step: argmax,
        bounded: traj.bounded(),
        cap: traj.cap(),
        diverged: traj.diverged(),
    }
}

impl<T: Real> BoundednessReport<T> {
    /// Relative gap of the max sup norms of two runs (used to check the
    /// monitor is stable when the same realization is run at a doubled
    /// resolution).
    pub fn relative_gap(&self, other: &BoundednessReport<T>) -> T {
        let denom = self.max_sup.max(other.max_sup).max(T::min_positive_value());
        (self.max_sup - other.max_sup).abs() / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{assemble_covariance, factorize, Kernel};
    use crate::noise::{ou_path_exact, NoiseRealization, OuGeneration};
    use crate::spectral::CollocationGrid;

    fn basis(n: usize) -> Arc<Eigenbasis<f64>> {
        Eigenbasis::new(n)
    }

    fn q2_path(
        n: usize,
        m: usize,
        t: f64,
        seed: u64,
        b: &Arc<Eigenbasis<f64>>,
    ) -> crate::noise::OuPath<f64> {
        let cov = assemble_covariance(&Kernel::triangular(0.1f64).unwrap(), n, 128).unwrap();
        let f = Arc::new(factorize(&cov).unwrap());
        let real = NoiseRealization::new(f, m, t, seed).unwrap();
        ou_path_exact(&real.view(n, m).unwrap(), b).unwrap()
    }

    #[test]
    fn nonlinearity_pointwise_values() {
        let r5 = Nonlinearity::<f64>::Rational5;
        assert_eq!(r5.eval(0.0), 5.0);
        assert_eq!(r5.eval(1.0), 0.0);
        assert_eq!(r5.eval(-1.0), 5.0);
        assert_eq!(r5.growth_p(), 0);
        assert_eq!(r5.lipschitz(), 5.0);

        let cubic = Nonlinearity::<f64>::Cubic;
        assert_eq!(cubic.eval(2.0), -8.0);
        assert_eq!(cubic.growth_p(), 2);
        assert_eq!(cubic.lipschitz(), 3.0);

        let lin = Nonlinearity::Linear(3.0f64);
        assert_eq!(lin.eval(-0.5), -1.5);
        assert_eq!(Nonlinearity::<f64>::Zero.eval(7.0), 0.0);
    }

    #[test]
    fn nemytskii_zero_and_linear_are_exact() {
        let b = basis(4);
        let u = SpectralField::new(vec![0.4, -0.3, 0.2, 0.1], Arc::clone(&b)).unwrap();
        let z = nemytskii_apply(&Nonlinearity::Zero, &u, 16).unwrap();
        assert!(z.coeffs().iter().all(|&c| c == 0.0));

        let l = nemytskii_apply(&Nonlinearity::Linear(2.5), &u, 16).unwrap();
        for (a, &c) in l.coeffs().iter().zip(u.coeffs()) {
            assert_eq!(*a, 2.5 * c);
        }
    }

    #[test]
    fn nemytskii_cubic_matches_quadrature_oracle() {
        // u = a·e₁ ⇒ F(u) = -u³ has coefficients
        // c₁ = -(3/4)·a³·(2/π), c₃ = (1/4)·a³·(2/π).
        let b = basis(4);
        let a = 1.3f64;
        let u = SpectralField::new(vec![a, 0.0, 0.0, 0.0], Arc::clone(&b)).unwrap();
        let fu = nemytskii_apply(&Nonlinearity::Cubic, &u, 15).unwrap();
        let two_over_pi = 2.0 / std::f64::consts::PI;
        let want = [
            -0.75 * a.powi(3) * two_over_pi,
            0.0,
            0.25 * a.powi(3) * two_over_pi,
            0.0,
        ];
        for (got, w) in fu.coeffs().iter().zip(want.iter()) {
            assert!((got - w).abs() < 1e-12, "{got} vs {w}");
        }

        // Brute-force quadrature of -u(x)³·e_k(x) as an independent oracle.
        let m = 8192;
        let h = std::f64::consts::PI / m as f64;
        for k in 1..=4usize {
            let mut acc = 0.0;
            for j in 0..m {
                let x = (j as f64 + 0.5) * h;
                let ux = a * (2.0 / std::f64::consts::PI).sqrt() * x.sin();
                acc += -ux.powi(3) * b.eigenfunction_eval(k, x).unwrap();
            }
            acc *= h;
            assert!(
                (acc - fu.coeffs()[k - 1]).abs() < 1e-7,
                "mode {k}: quadrature {acc} vs {}",
                fu.coeffs()[k - 1]
            );
        }
    }

    #[test]
    fn nemytskii_rejects_undersized_grid() {
        let b = basis(8);
        let u = SpectralField::zeros(8, Arc::clone(&b));
        assert!(nemytskii_apply(&Nonlinearity::Cubic, &u, 15).is_err());
    }

    #[test]
    fn dealias_grid_sizes() {
        assert_eq!(Nonlinearity::<f64>::Cubic.default_dealias_grid(32), 127);
        assert_eq!(
            Nonlinearity::<f64>::Rational5.default_dealias_grid(256),
            2047
        );
    }

    #[test]
    fn cubic_dealiasing_is_grid_independent() {
        let b = basis(16);
        let coeffs: Vec<f64> = (0..16)
            .map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.5)
            .collect();
        let u = SpectralField::new(coeffs, Arc::clone(&b)).unwrap();
        let lo = nemytskii_apply(&Nonlinearity::Cubic, &u, 32).unwrap();
        let hi = nemytskii_apply(&Nonlinearity::Cubic, &u, 64).unwrap();
        for (a, c) in lo.coeffs().iter().zip(hi.coeffs()) {
            assert!((a - c).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_drift_telescopes_to_convolution_path() {
        let n = 8;
        let m = 64;
        let b = basis(n);
        let ou = q2_path(n, m, 1.0, 5, &b);
        let cfg = SchemeConfig::new(n, m, 1.0, &Nonlinearity::Zero);
        let xi = SpectralField::zeros(n, Arc::clone(&b));
        let traj = simulate(&cfg, &Nonlinearity::Zero, &xi, &ou, 1e6).unwrap();
        assert!(!traj.diverged());
        for (idx, st) in traj.states().iter().enumerate() {
            let o = ou.state(idx);
            for k in 0..n {
                assert!(
                    (st.coeffs()[k] - o.coeffs()[k]).abs() <= 1e-13,
                    "step {idx}, mode {k}"
                );
            }
        }
    }

    #[test]
    fn pure_decay_without_noise() {
        let n = 2;
        let m = 32;
        let b = basis(n);
        let ou = OuPath::zeros(n, m, 1.0, &b);
        let cfg = SchemeConfig::new(n, m, 1.0, &Nonlinearity::Zero);
        let xi = SpectralField::new(vec![1.0, 0.0], Arc::clone(&b)).unwrap();
        let traj = simulate(&cfg, &Nonlinearity::Zero, &xi, &ou, 10.0).unwrap();
        let dt = 1.0 / m as f64;
        for (idx, st) in traj.states().iter().enumerate() {
            let want = (-dt).exp().powi(idx as i32);
            assert!((st.coeffs()[0] - want).abs() < 1e-13);
            assert_eq!(st.coeffs()[1], 0.0);
        }
    }

    #[test]
    fn linear_drift_single_mode_recursion() {
        // Y_m = (e^{-Δt}(1+cΔt))^m·Y₀ for mode 1 with f = c·y.
        let n = 1;
        let m = 16;
        let c = 1.0f64;
        let b = basis(n);
        let ou = OuPath::zeros(n, m, 1.0, &b);
        let cfg = SchemeConfig::new(n, m, 1.0, &Nonlinearity::Linear(c));
        let xi = SpectralField::new(vec![0.7], Arc::clone(&b)).unwrap();
        let traj = simulate(&cfg, &Nonlinearity::Linear(c), &xi, &ou, 100.0).unwrap();
        let dt = 1.0 / m as f64;
        let factor = (-dt).exp() * (1.0 + c * dt);
        let last = traj.states().last().unwrap().coeffs()[0];
        assert!((last - 0.7 * factor.powi(m as i32)).abs() < 1e-13);
    }

    #[test]
    fn linear_drift_first_order_in_time() {
        // Quick slope check against the exact factor e^{(c-1)T}; the full
        // ladder lives in the acceptance suite.
        let c = 1.0f64;
        let b = basis(1);
        let exact = ((c - 1.0) * 1.0f64).exp() * 0.7;
        let mut errors = Vec::new();
        for m in [64usize, 256, 1024] {
            let ou = OuPath::zeros(1, m, 1.0, &b);
            let cfg = SchemeConfig::new(1, m, 1.0, &Nonlinearity::Linear(c));
            let xi = SpectralField::new(vec![0.7], Arc::clone(&b)).unwrap();
            let traj = simulate(&cfg, &Nonlinearity::Linear(c), &xi, &ou, 100.0).unwrap();
            errors.push((traj.states().last().unwrap().coeffs()[0] - exact).abs());
        }
        let slope = (errors[0] / errors[2]).ln() / (1024f64 / 64.0).ln();
        assert!(
            (0.9..=1.1).contains(&slope),
            "slope {slope}, errors {errors:?}"
        );
    }

    #[test]
    fn superposition_holds_for_zero_drift() {
        let n = 4;
        let m = 32;
        let b = basis(n);
        let ou = q2_path(n, m, 0.5, 9, &b);
        let zeros = OuPath::zeros(n, m, 0.5, &b);
        let cfg = SchemeConfig::new(n, m, 0.5, &Nonlinearity::Zero);
        let xi = SpectralField::new(vec![0.3, -0.2, 0.5, 0.0], Arc::clone(&b)).unwrap();
        let zero_xi = SpectralField::zeros(n, Arc::clone(&b));

        let full = simulate(&cfg, &Nonlinearity::Zero, &xi, &ou, 1e6).unwrap();
        let noise_only = simulate(&cfg, &Nonlinearity::Zero, &zero_xi, &ou, 1e6).unwrap();
        let data_only = simulate(&cfg, &Nonlinearity::Zero, &xi, &zeros, 1e6).unwrap();
        let last = full.states().last().unwrap();
        let a = noise_only.states().last().unwrap();
        let c = data_only.states().last().unwrap();
        for k in 0..n {
            assert!(
                (last.coeffs()[k] - a.coeffs()[k] - c.coeffs()[k]).abs() < 1e-12,
                "mode {k}"
            );
        }
    }

    #[test]
    fn stiff_modes_do_not_blow_up() {
        // Δt·λ_N ≈ 400: the exponential factor is evaluated, never expanded,
        // so stiff modes just decay.
        let n = 20;
        let m = 4;
        let b = basis(n);
        let ou = OuPath::zeros(n, m, 4.0, &b);
        let cfg = SchemeConfig::new(n, m, 4.0, &Nonlinearity::Zero);
        let xi = SpectralField::new(vec![1.0; n], Arc::clone(&b)).unwrap();
        let traj = simulate(&cfg, &Nonlinearity::Zero, &xi, &ou, 100.0).unwrap();
        assert!(!traj.diverged());
        for st in traj.states() {
            for &cf in st.coeffs() {
                assert!(cf.abs() <= 1.0);
            }
        }
    }

    #[test]
    fn cubic_divergence_is_detected_and_partial_returned() {
        let n = 2;
        let m = 50;
        let b = basis(n);
        let ou = OuPath::zeros(n, m, 5.0, &b);
        let cfg = SchemeConfig::new(n, m, 5.0, &Nonlinearity::Cubic);
        // Positive-feedback custom map with huge growth: guaranteed blow-up.
        let explode = Nonlinearity::Custom {
            f: Arc::new(|y: f64| y * y * y),
            lipschitz: 3.0,
            growth_p: 2,
            polynomial_degree: Some(3),
        };
        let xi = SpectralField::new(vec![40.0, 1.0], Arc::clone(&b)).unwrap();
        let traj = simulate(&cfg, &explode, &xi, &ou, 50.0).unwrap();
        assert!(traj.diverged());
        assert!(!traj.bounded());
        match traj.status() {
            TrajectoryStatus::Diverged { step, .. } => assert!(*step < m),
            other => panic!("unexpected status {other:?}"),
        }
        // Every stored state is still finite.
        for st in traj.states() {
            assert!(st.coeffs().iter().all(|c| c.is_finite()));
        }
    }

    #[test]
    fn boundedness_report_basics() {
        let n = 4;
        let m = 32;
        let b = basis(n);
        let zeros = OuPath::zeros(n, m, 1.0, &b);
        let cfg = SchemeConfig::new(n, m, 1.0, &Nonlinearity::Zero);
        let xi = SpectralField::zeros(n, Arc::clone(&b));
        let traj = simulate(&cfg, &Nonlinearity::Zero, &xi, &zeros, 1.0).unwrap();
        let rep = boundedness_report(&traj);
        assert_eq!(rep.max_sup, 0.0);
        assert!(rep.bounded);

        // With F = 0 the max sup equals the max sup of P_N O on the grid.
        let ou = q2_path(n, m, 1.0, 3, &b);
        let traj = simulate(&cfg, &Nonlinearity::Zero, &xi, &ou, 1e6).unwrap();
        let rep = boundedness_report(&traj);
        let mut want = 0.0f64;
        let mut stepper = ExponentialEuler::new(
            &b,
            n,
            traj.t_final() / m as f64,
            Nonlinearity::Zero,
            cfg.dealias_grid,
        )
        .unwrap();
        for o in ou.states() {
            want = want.max(stepper.sup_on_grid(&o.coeffs()[..n]));
        }
        assert!((rep.max_sup - want).abs() < 1e-12);
    }

    #[test]
    fn standalone_step_matches_simulate() {
        let n = 4;
        let b = basis(n);
        let ou = q2_path(n, 1, 0.25, 23, &b);
        let cfg = SchemeConfig::new(n, 1, 0.25, &Nonlinearity::Rational5);
        let xi = SpectralField::new(vec![0.5, -0.1, 0.2, 0.0], Arc::clone(&b)).unwrap();
        let traj = simulate(&cfg, &Nonlinearity::Rational5, &xi, &ou, 100.0).unwrap();

        // dO = O_1 - S_Δt O_0 assembled by hand.
        let decayed = ou.state(0).semigroup_apply(0.25).unwrap();
        let d_o = ou.state(1).sub(&decayed);
        let stepped = step(&xi, &Nonlinearity::Rational5, 0.25, &d_o, cfg.dealias_grid).unwrap();
        for k in 0..n {
            assert!(
                (stepped.coeffs()[k] - traj.states().last().unwrap().coeffs()[k]).abs() < 1e-15
            );
        }

        // Mode-count mismatch in the increment is rejected.
        let short = SpectralField::zeros(2, Arc::clone(&b));
        assert!(step(
            &xi,
            &Nonlinearity::Rational5,
            0.25,
            &short,
            cfg.dealias_grid
        )
        .is_err());
    }

    #[test]
    fn boundedness_monitor_is_stable_under_coupled_doubling() {
        // Same realization at N = 16 and N = 32 (time steps following the
        // Δt = T/N² rule): the max sup norm moves by well under 10%.
        let cov = assemble_covariance(&Kernel::triangular(0.1f64).unwrap(), 32, 128).unwrap();
        let factor = Arc::new(factorize(&cov).unwrap());
        let basis32 = basis(32);
        let real = crate::noise::NoiseRealization::new(factor, 32 * 32, 1.0, 6).unwrap();
        let ou32 = ou_path_exact(&real.view(32, 32 * 32).unwrap(), &basis32).unwrap();
        let ou16 = ou32.restrict(16, 4).unwrap();
        let xi =
            crate::harness::initial_condition(crate::harness::InitialData::TwoModeSine, &basis32);

        let run = |n: usize, ou: &crate::noise::OuPath<f64>| {
            let cfg = SchemeConfig::new(n, n * n, 1.0, &Nonlinearity::Rational5);
            let traj = simulate(&cfg, &Nonlinearity::Rational5, &xi.project(n), ou, 50.0).unwrap();
            boundedness_report(&traj)
        };
        let lo = run(16, &ou16);
        let hi = run(32, &ou32);
        assert!(lo.bounded && hi.bounded);
        let gap = lo.relative_gap(&hi);
        assert!(
            gap < 0.10,
            "max sup {} vs {} (gap {gap})",
            lo.max_sup,
            hi.max_sup
        );
    }

    #[test]
    fn keep_every_stores_subset_with_full_history() {
        let n = 4;
        let m = 64;
        let b = basis(n);
        let ou = q2_path(n, m, 1.0, 13, &b);
        let cfg = SchemeConfig::new(n, m, 1.0, &Nonlinearity::Rational5);
        let xi = SpectralField::zeros(n, Arc::clone(&b));
        let full = simulate(&cfg, &Nonlinearity::Rational5, &xi, &ou, 100.0).unwrap();
        let strided = simulate_opts(
            &cfg,
            &Nonlinearity::Rational5,
            &xi,
            &ou,
            SimulateOptions {
                keep_every: 8,
                cap: 100.0,
            },
        )
        .unwrap();
        assert_eq!(strided.states().len(), m / 8 + 1);
        assert_eq!(strided.sup_history().len(), m + 1);
        for (idx, st) in strided.states().iter().enumerate() {
            let fullst = full.state(8 * idx);
            for k in 0..n {
                assert_eq!(st.coeffs()[k], fullst.coeffs()[k]);
            }
        }
        assert_eq!(full.sup_history(), strided.sup_history());
    }

    #[test]
    fn sup_history_is_recomputable_from_states() {
        let n = 4;
        let m = 16;
        let b = basis(n);
        let ou = q2_path(n, m, 1.0, 17, &b);
        let cfg = SchemeConfig::new(n, m, 1.0, &Nonlinearity::Rational5);
        let xi = SpectralField::zeros(n, Arc::clone(&b));
        let traj = simulate(&cfg, &Nonlinearity::Rational5, &xi, &ou, 100.0).unwrap();
        let grid = CollocationGrid::new(cfg.dealias_grid);
        for (idx, st) in traj.states().iter().enumerate() {
            assert!((traj.sup_history()[idx] - st.sup_norm(&grid)).abs() < 1e-12);
        }
        assert_eq!(traj.states().len(), m + 1);
        assert_eq!(ou.generation(), OuGeneration::Exact);
    }

    #[test]
    fn simulate_validates_grid_compatibility() {
        let b = basis(4);
        let ou = OuPath::zeros(4, 16, 1.0, &b);
        let cfg = SchemeConfig::new(4, 32, 1.0, &Nonlinearity::Zero);
        let xi = SpectralField::zeros(4, Arc::clone(&b));
        assert!(simulate(&cfg, &Nonlinearity::Zero, &xi, &ou, 1.0).is_err());

        let cfg = SchemeConfig::new(8, 16, 1.0, &Nonlinearity::Zero);
        let xi8 = SpectralField::zeros(8, Arc::clone(&basis(8)));
        assert!(simulate(&cfg, &Nonlinearity::Zero, &xi8, &ou, 1.0).is_err());
    }
}
