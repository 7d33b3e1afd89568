//! Dirichlet sine eigenbasis on `(0, π)`, spectral fields, Galerkin
//! projections, the heat semigroup and transforms to collocation grids.
//!
//! The basis functions are `e_k(x) = sqrt(2/π)·sin(kx)` with eigenvalues
//! `λ_k = k²` of `-Δ`, so the semigroup acts diagonally as `e^{-k² t}` on
//! mode `k`. All fields vanish at `x = 0` and `x = π` by construction.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::transforms::{dst_direct, fast_path_available, DstPlan};

/// The sine eigenbasis of the Dirichlet Laplacian on `(0, π)`.
#[derive(Debug, Clone)]
pub struct Eigenbasis<T> {
    domain_length: T,
    max_modes: usize,
    eigenvalues: Vec<T>,
}

impl<T: Real> Eigenbasis<T> {
    pub fn new(max_modes: usize) -> Arc<Self> {
        assert!(max_modes >= 1, "basis needs at least one mode");
        let eigenvalues = (1..=max_modes).map(|k| T::from_index(k * k)).collect();
        Arc::new(Eigenbasis {
            domain_length: T::PI(),
            max_modes,
            eigenvalues,
        })
    }

    pub fn domain_length(&self) -> T {
        self.domain_length
    }

    pub fn max_modes(&self) -> usize {
        self.max_modes
    }

    /// `λ_k = k²` for `k = 1..=max_modes`.
    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, k: usize) -> T {
        self.eigenvalues[k - 1]
    }

    /// Evaluate `e_k(x) = sqrt(2/π)·sin(kx)`.
    pub fn eigenfunction_eval(&self, k: usize, x: T) -> Result<T> {
        if k < 1 {
            return Err(Error::domain(format!("mode index k = {k} must be >= 1")));
        }
        if x < T::zero() || x > T::PI() {
            return Err(Error::domain(format!("x = {x} outside [0, π]")));
        }
        Ok(T::basis_norm() * (T::from_index(k) * x).sin())
    }
}

/// Uniform interior collocation grid `x_j = jπ/(G+1)`, `j = 1..G`.
#[derive(Debug, Clone)]
pub struct CollocationGrid<T> {
    points: Vec<T>,
}

impl<T: Real> CollocationGrid<T> {
    pub fn new(num_points: usize) -> Self {
        assert!(num_points >= 1, "grid needs at least one point");
        let gp1 = T::from_index(num_points + 1);
        let points = (1..=num_points)
            .map(|j| T::PI() * T::from_index(j) / gp1)
            .collect();
        CollocationGrid { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }
}

/// A function on `(0, π)` represented by its leading sine coefficients.
#[derive(Debug, Clone)]
pub struct SpectralField<T> {
    coeffs: Vec<T>,
    basis: Arc<Eigenbasis<T>>,
}

impl<T: Real> SpectralField<T> {
    pub fn new(coeffs: Vec<T>, basis: Arc<Eigenbasis<T>>) -> Result<Self> {
        if coeffs.len() > basis.max_modes() {
            return Err(Error::config(format!(
                "field with {} coefficients exceeds basis max_modes = {}",
                coeffs.len(),
                basis.max_modes()
            )));
        }
        Ok(SpectralField { coeffs, basis })
    }

    pub fn zeros(n: usize, basis: Arc<Eigenbasis<T>>) -> Self {
        Self::new(vec![T::zero(); n], basis).expect("zero field within basis")
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [T] {
        &mut self.coeffs
    }

    pub fn basis(&self) -> &Arc<Eigenbasis<T>> {
        &self.basis
    }

    pub fn modes(&self) -> usize {
        self.coeffs.len()
    }

    /// Galerkin projection `P_N`: truncate to the first `N` coefficients.
    /// A field with fewer than `N` modes is returned unchanged.
    pub fn project(&self, n: usize) -> Self {
        assert!(n >= 1, "projection needs N >= 1");
        let keep = self.coeffs.len().min(n);
        SpectralField {
            coeffs: self.coeffs[..keep].to_vec(),
            basis: Arc::clone(&self.basis),
        }
    }

    /// Apply the heat semigroup `S_t`: coefficient `k` is damped by `e^{-k²t}`.
    pub fn semigroup_apply(&self, t: T) -> Result<Self> {
        if t < T::zero() {
            return Err(Error::domain(format!("semigroup time t = {t} < 0")));
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| c * (-self.basis.eigenvalue(i + 1) * t).exp())
            .collect();
        Ok(SpectralField {
            coeffs,
            basis: Arc::clone(&self.basis),
        })
    }

    /// Pointwise evaluation `v(x) = Σ c_k e_k(x)`.
    pub fn eval_at(&self, x: T) -> T {
        let norm = T::basis_norm();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| c * norm * (T::from_index(i + 1) * x).sin())
            .sum()
    }

    /// Evaluate on a collocation grid. Uses the fast sine transform when the
    /// grid size allows it and the direct sum otherwise; both agree to
    /// rounding (the direct sum is the reference implementation).
    pub fn eval_on_grid(&self, grid: &CollocationGrid<T>) -> Vec<T> {
        let g = grid.len();
        let mut out = vec![T::zero(); g];
        if self.coeffs.len() > g || !fast_path_available(g) {
            // Modes above G alias on the grid; fall back to the direct sum
            // over the true points.
            self.eval_on_points(grid.points(), &mut out);
        } else {
            let mut plan = DstPlan::new(g);
            plan.apply(&self.coeffs, &mut out);
            let norm = T::basis_norm();
            out.iter_mut().for_each(|v| *v *= norm);
        }
        out
    }

    /// Direct-summation evaluation at arbitrary points.
    pub fn eval_on_points(&self, points: &[T], out: &mut [T]) {
        let norm = T::basis_norm();
        for (slot, &x) in out.iter_mut().zip(points.iter()) {
            let mut acc = T::zero();
            for (i, &c) in self.coeffs.iter().enumerate() {
                acc += c * (T::from_index(i + 1) * x).sin();
            }
            *slot = acc * norm;
        }
    }

    /// Grid sup norm `max_j |v(x_j)|`.
    pub fn sup_norm(&self, grid: &CollocationGrid<T>) -> T {
        self.eval_on_grid(grid)
            .into_iter()
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// In-place `self += s·other` (other may be shorter).
    pub fn add_scaled(&mut self, other: &SpectralField<T>, s: T) {
        assert!(other.coeffs.len() <= self.coeffs.len());
        for (a, &b) in self.coeffs.iter_mut().zip(other.coeffs.iter()) {
            *a += s * b;
        }
    }

    /// Difference `self - other`, padded to the longer mode count.
    pub fn sub(&self, other: &SpectralField<T>) -> SpectralField<T> {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = vec![T::zero(); n];
        for (slot, &c) in coeffs.iter_mut().zip(self.coeffs.iter()) {
            *slot = c;
        }
        for (slot, &c) in coeffs.iter_mut().zip(other.coeffs.iter()) {
            *slot = *slot - c;
        }
        SpectralField {
            coeffs,
            basis: Arc::clone(&self.basis),
        }
    }

    /// Zero-pad or truncate to exactly `n` coefficients.
    pub fn resized(&self, n: usize) -> Result<SpectralField<T>> {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(n, T::zero());
        SpectralField::new(coeffs, Arc::clone(&self.basis))
    }
}

/// Recover the first `n` sine coefficients from grid samples. Inverse of
/// [`SpectralField::eval_on_grid`] for fields with at most `G` modes.
pub fn grid_to_coeffs<T: Real>(
    values: &[T],
    grid: &CollocationGrid<T>,
    n: usize,
    basis: &Arc<Eigenbasis<T>>,
) -> Result<SpectralField<T>> {
    let g = grid.len();
    if values.len() != g {
        return Err(Error::config(format!(
            "expected {} samples matching the grid, got {}",
            g,
            values.len()
        )));
    }
    if g < n {
        return Err(Error::config(format!(
            "grid with {g} points cannot resolve {n} modes (need G >= N)"
        )));
    }
    let mut raw = vec![T::zero(); g];
    if fast_path_available(g) {
        let mut plan = DstPlan::new(g);
        plan.apply(values, &mut raw);
    } else {
        dst_direct(g, values, &mut raw);
    }
    // c_k = sqrt(π/2) · 2/(G+1) · Σ_j v_j sin(jkπ/(G+1)).
    let scale = (T::PI() / T::lit(2.0)).sqrt() * T::lit(2.0) / T::from_index(g + 1);
    let coeffs = raw[..n].iter().map(|&v| v * scale).collect();
    SpectralField::new(coeffs, Arc::clone(basis))
}

/// Precomputed `e_k(x_j)` table for repeated evaluations on a fixed grid.
#[derive(Debug, Clone)]
pub struct SineTable<T> {
    n_modes: usize,
    g: usize,
    table: Vec<T>, // row-major by grid point: table[j*n + k] = e_{k+1}(x_j)
}

impl<T: Real> SineTable<T> {
    pub fn new(grid: &CollocationGrid<T>, n_modes: usize) -> Self {
        let norm = T::basis_norm();
        let g = grid.len();
        let mut table = Vec::with_capacity(g * n_modes);
        for &x in grid.points() {
            for k in 1..=n_modes {
                table.push(norm * (T::from_index(k) * x).sin());
            }
        }
        SineTable { n_modes, g, table }
    }

    /// Max of `|Σ_k c_k e_k(x_j)|` over the grid.
    pub fn sup_norm(&self, coeffs: &[T]) -> T {
        debug_assert!(coeffs.len() <= self.n_modes);
        let mut worst = T::zero();
        for j in 0..self.g {
            let row = &self.table[j * self.n_modes..j * self.n_modes + coeffs.len()];
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(coeffs.iter()) {
                acc += *a * *b;
            }
            worst = worst.max(acc.abs());
        }
        worst
    }

    /// Evaluate into `out` (one value per grid point).
    pub fn eval_into(&self, coeffs: &[T], out: &mut [T]) {
        debug_assert!(coeffs.len() <= self.n_modes);
        debug_assert_eq!(out.len(), self.g);
        for (j, slot) in out.iter_mut().enumerate() {
            let row = &self.table[j * self.n_modes..j * self.n_modes + coeffs.len()];
            let mut acc = T::zero();
            for (a, b) in row.iter().zip(coeffs.iter()) {
                acc += *a * *b;
            }
            *slot = acc;
        }
    }
}
