//! Mode-space covariance of the noise: `Σ_{kl} = ⟨Q e_k, e_l⟩` for a
//! convolution operator `Q` with translation-invariant kernel `q`,
//!
//! ```text
//! Σ_{kl} = ∫₀^π ∫₀^π e_k(x) e_l(y) q(x-y) dy dx.
//! ```
//!
//! The triangular kernels are only piecewise smooth, so the double integral
//! is evaluated with composite Gauss-Legendre panels whose boundaries are
//! placed exactly on the kink lines `|x-y| ∈ {0, support}`: for each outer
//! node `x` the inner integral over `y` is split at `x` and `x ± support`,
//! and the outer axis is split where a kink enters or leaves the domain.
//! Doubling the node budget is used as a convergence check and disagreements
//! are attached to the matrix as warnings rather than silently accepted.

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, Matrix};
use crate::real::Real;

/// Translation-invariant, even correlation kernel `q(r)`.
#[derive(Debug, Clone)]
pub enum Kernel<T> {
    /// `q1(r) = (1/h)·max{0, 1 - |r|/h²}`: support `h²`, height `1/h`.
    TriangularScaled { h: T },
    /// `q2(r) = max{0, 1 - |r|/h}`: support `h`, height `1`.
    Triangular { h: T },
    /// `q ≡ 1`.
    Constant,
    /// Even piecewise-linear interpolation of `(radius, value)` samples with
    /// `radii[0] = 0` and radii strictly increasing.
    Tabulated { radii: Vec<T>, values: Vec<T> },
}

impl<T: Real> Kernel<T> {
    pub fn triangular_scaled(h: T) -> Result<Self> {
        if h <= T::zero() {
            return Err(Error::domain("kernel bandwidth h must be positive"));
        }
        Ok(Kernel::TriangularScaled { h })
    }

    pub fn triangular(h: T) -> Result<Self> {
        if h <= T::zero() {
            return Err(Error::domain("kernel bandwidth h must be positive"));
        }
        Ok(Kernel::Triangular { h })
    }

    pub fn tabulated(radii: Vec<T>, values: Vec<T>) -> Result<Self> {
        if radii.len() < 2 || radii.len() != values.len() {
            return Err(Error::config(
                "tabulated kernel needs matching radii/values with >= 2 samples",
            ));
        }
        if radii[0] != T::zero() {
            return Err(Error::config("tabulated kernel radii must start at 0"));
        }
        if radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("tabulated kernel radii must increase"));
        }
        Ok(Kernel::Tabulated { radii, values })
    }

    /// Evaluate `q(r)`; the kernel is even, the formula value is 0 outside
    /// the support. The tabulated variant rejects `|r|` beyond its table.
    pub fn eval(&self, r: T) -> Result<T> {
        let r = r.abs();
        match self {
            Kernel::TriangularScaled { h } => Ok((T::one() - r / (*h * *h)).max(T::zero()) / *h),
            Kernel::Triangular { h } => Ok((T::one() - r / *h).max(T::zero())),
            Kernel::Constant => Ok(T::one()),
            Kernel::Tabulated { radii, values } => {
                let last = *radii.last().unwrap();
                if r > last {
                    return Err(Error::domain(format!(
                        "tabulated kernel evaluated at |r| = {r} beyond table end {last}"
                    )));
                }
                let idx = radii.partition_point(|&p| p < r).max(1) - 1;
                let idx = idx.min(radii.len() - 2);
                let (r0, r1) = (radii[idx], radii[idx + 1]);
                let (v0, v1) = (values[idx], values[idx + 1]);
                let w = (r - r0) / (r1 - r0);
                Ok(v0 + w * (v1 - v0))
            }
        }
    }

    /// Radius beyond which `q` vanishes (or stops being defined, for the
    /// tabulated variant); `None` for globally supported kernels.
    pub fn support_radius(&self) -> Option<T> {
        match self {
            Kernel::TriangularScaled { h } => Some(*h * *h),
            Kernel::Triangular { h } => Some(*h),
            Kernel::Constant => None,
            Kernel::Tabulated { radii, .. } => Some(*radii.last().unwrap()),
        }
    }

    /// Derivative kinks of `r ↦ q(|r|)` at nonnegative radii, including 0.
    fn kink_radii(&self) -> Vec<T> {
        match self {
            Kernel::TriangularScaled { h } => vec![T::zero(), *h * *h],
            Kernel::Triangular { h } => vec![T::zero(), *h],
            Kernel::Constant => vec![],
            Kernel::Tabulated { radii, .. } => radii.clone(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Kernel::TriangularScaled { h } => format!("q1 (triangular_scaled, h = {h})"),
            Kernel::Triangular { h } => format!("q2 (triangular, h = {h})"),
            Kernel::Constant => "constant".to_string(),
            Kernel::Tabulated { radii, .. } => {
                format!("tabulated ({} samples)", radii.len())
            }
        }
    }

    /// For a tabulated kernel used over `(0, π)` the table must reach the
    /// largest separation the domain can produce.
    fn check_domain_coverage(&self) -> Result<()> {
        if let Kernel::Tabulated { radii, .. } = self {
            let last = *radii.last().unwrap();
            if last < T::PI() {
                return Err(Error::config(format!(
                    "tabulated kernel covers |r| <= {last} but separations up to π occur"
                )));
            }
        }
        Ok(())
    }
}

/// One entry that failed the quadrature-doubling convergence check.
#[derive(Debug, Clone)]
pub struct QuadratureWarning<T> {
    pub k: usize,
    pub l: usize,
    pub relative_change: T,
}

/// Assembled symmetric covariance matrix with provenance.
#[derive(Debug, Clone)]
pub struct CovarianceMatrix<T> {
    dim: usize,
    entries: Matrix<T>,
    kernel: Kernel<T>,
    quad_order: usize,
    warnings: Vec<QuadratureWarning<T>>,
}

impl<T: Real> CovarianceMatrix<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &Matrix<T> {
        &self.entries
    }

    /// `Σ_{kl}` with 1-based mode indices.
    pub fn get(&self, k: usize, l: usize) -> T {
        self.entries[(k - 1, l - 1)]
    }

    pub fn kernel(&self) -> &Kernel<T> {
        &self.kernel
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn warnings(&self) -> &[QuadratureWarning<T>] {
        &self.warnings
    }

    /// Build directly from entries (tests, identity covariances, ...).
    pub fn from_entries(entries: Matrix<T>, kernel: Kernel<T>) -> Result<Self> {
        if entries.rows() != entries.cols() || entries.rows() == 0 {
            return Err(Error::config(
                "covariance matrix must be square and nonempty",
            ));
        }
        let mut entries = entries;
        entries.symmetrize();
        Ok(CovarianceMatrix {
            dim: entries.rows(),
            entries,
            kernel,
            quad_order: 0,
            warnings: Vec::new(),
        })
    }

    /// Stable hash of the entries, used to tag noise realizations.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut mix = |bits: u64| {
            h ^= bits;
            h = h.wrapping_mul(0x100000001b3);
        };
        mix(self.dim as u64);
        for &v in self.entries.data() {
            mix(v.to_f64().unwrap_or(f64::NAN).to_bits());
        }
        h
    }

    /// Smallest and largest eigenvalue (diagnostic; the PSD invariant allows
    /// a small negative quadrature residue).
    pub fn psd_margin(&self) -> (T, T) {
        let ev = crate::linalg::symmetric_eigenvalues(&self.entries);
        let max = ev.iter().fold(T::zero(), |m, &v| m.max(v));
        let min = ev.iter().fold(T::infinity(), |m, &v| m.min(v));
        (min, max)
    }
}

/// Cholesky-type factor `L·Lᵀ = Σ + jitter·I`, carrying its source matrix
/// so noise samplers can derive increment covariances from it.
#[derive(Debug, Clone)]
pub struct CovarianceFactor<T> {
    dim: usize,
    lower: Matrix<T>,
    jitter_used: T,
    sigma: Matrix<T>,
    sigma_hash: u64,
}

impl<T: Real> CovarianceFactor<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    pub fn jitter_used(&self) -> T {
        self.jitter_used
    }

    /// The factored `Σ` (without jitter).
    pub fn sigma(&self) -> &Matrix<T> {
        &self.sigma
    }

    pub fn sigma_hash(&self) -> u64 {
        self.sigma_hash
    }
}

/// Factor a covariance matrix, escalating the diagonal jitter from 0 through
/// `1e-14·max|Σ|` up to `1e-8·max|Σ|` until the Cholesky succeeds.
pub fn factorize<T: Real>(cov: &CovarianceMatrix<T>) -> Result<CovarianceFactor<T>> {
    if cov.entries.asymmetry() > T::zero() {
        return Err(Error::config("covariance must be exactly symmetric"));
    }
    let (lower, jitter_used) = cholesky_with_jitter(&cov.entries)?;
    Ok(CovarianceFactor {
        dim: cov.dim,
        lower,
        jitter_used,
        sigma: cov.entries.clone(),
        sigma_hash: cov.content_hash(),
    })
}

/// Partial sum `Σ_{i,j <= cutoff} i^{ρ-1} j^{ρ-1} |Σ_{ij}|`, the regularity
/// diagnostic. Stabilization of this sum as `cutoff` grows is the practical
/// check that the covariance admits Hölder-regular convolution paths.
pub fn regularity_sum<T: Real>(cov: &CovarianceMatrix<T>, rho: T, cutoff: usize) -> Result<T> {
    if cutoff > cov.dim {
        return Err(Error::config(format!(
            "cutoff {cutoff} exceeds covariance dimension {}",
            cov.dim
        )));
    }
    let e = rho - T::one();
    let weights: Vec<T> = (1..=cutoff).map(|i| T::from_index(i).powf(e)).collect();
    let mut acc = T::zero();
    for i in 1..=cutoff {
        for j in 1..=cutoff {
            acc += weights[i - 1] * weights[j - 1] * cov.get(i, j).abs();
        }
    }
    Ok(acc)
}

// 8-point Gauss-Legendre nodes/weights on [-1, 1].
const GL8_NODES: [f64; 8] = [
    -0.9602898564975363,
    -0.7966664774136267,
    -0.525532409916329,
    -0.18343464249564978,
    0.18343464249564978,
    0.525532409916329,
    0.7966664774136267,
    0.9602898564975363,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.10122853629037626,
    0.22238103445337448,
    0.31370664587788727,
    0.36268378337836193,
    0.36268378337836193,
    0.31370664587788727,
    0.22238103445337448,
    0.10122853629037626,
];

/// Composite GL8 nodes over `[a, b]` split at the sorted interior
/// breakpoints, with enough panels per segment for both the node budget and
/// the oscillation of modes up to `max_mode`.
fn panelize<T: Real>(
    a: T,
    b: T,
    breakpoints: &[T],
    node_budget: usize,
    max_mode: usize,
) -> Vec<(T, T)> {
    let mut cuts = vec![a];
    for &p in breakpoints {
        if p > a && p < b && *cuts.last().unwrap() < p {
            cuts.push(p);
        }
    }
    cuts.push(b);

    let total = b - a;
    let mut nodes = Vec::new();
    let budget_panels = (node_budget / 8).max(1);
    for seg in cuts.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        let len = hi - lo;
        if len <= T::zero() {
            continue;
        }
        let frac = (len / total).to_f64().unwrap_or(1.0);
        let by_budget = (budget_panels as f64 * frac).ceil() as usize;
        // Keep GL8 panels short enough that the fastest retained mode
        // oscillates at most ~half a period per panel.
        let by_mode = (len.to_f64().unwrap_or(0.0) * max_mode as f64 / 3.0).ceil() as usize;
        let panels = by_budget.max(by_mode).max(1);
        let w = len / T::from_index(panels);
        for p in 0..panels {
            let lo_p = lo + w * T::from_index(p);
            let half = w * T::lit(0.5);
            let mid = lo_p + half;
            for (node, weight) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
                nodes.push((mid + half * T::lit(*node), half * T::lit(*weight)));
            }
        }
    }
    nodes
}

fn assemble_pass<T: Real>(kernel: &Kernel<T>, n: usize, quad_order: usize) -> Result<Matrix<T>> {
    let pi = T::PI();
    // Outer breakpoints: positions where a kernel kink enters or leaves the
    // inner integration domain.
    let mut outer_breaks: Vec<T> = Vec::new();
    for r in kernel.kink_radii() {
        if r > T::zero() && r < pi {
            outer_breaks.push(r);
            outer_breaks.push(pi - r);
        }
    }
    outer_breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let outer = panelize(T::zero(), pi, &outer_breaks, quad_order, n);
    let kinks = kernel.kink_radii();

    let two_over_pi = T::FRAC_2_PI();
    let mut sigma = Matrix::zeros(n, n);
    let mut inner_integrals = vec![T::zero(); n];
    let mut sin_kx = vec![T::zero(); n];

    for &(x, wx) in &outer {
        // Inner breakpoints: kink lines |x - y| = r cross y = x ± r.
        let mut inner_breaks: Vec<T> = Vec::new();
        for &r in &kinks {
            if r == T::zero() {
                inner_breaks.push(x);
            } else {
                inner_breaks.push(x - r);
                inner_breaks.push(x + r);
            }
        }
        inner_breaks.retain(|&p| p > T::zero() && p < pi);
        inner_breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let inner = panelize(T::zero(), pi, &inner_breaks, quad_order, n);
        inner_integrals.iter_mut().for_each(|v| *v = T::zero());
        for &(y, wy) in &inner {
            let q = kernel.eval(x - y)?;
            if q == T::zero() {
                continue;
            }
            let scale = wy * q;
            // sin(l·y) by recurrence.
            let (sin_y, cos_y) = (y.sin(), y.cos());
            let two_cos = cos_y + cos_y;
            let mut s_prev = T::zero();
            let mut s_curr = sin_y;
            for slot in inner_integrals.iter_mut() {
                *slot += scale * s_curr;
                let s_next = two_cos * s_curr - s_prev;
                s_prev = s_curr;
                s_curr = s_next;
            }
        }

        let (sin_x, cos_x) = (x.sin(), x.cos());
        let two_cos = cos_x + cos_x;
        let mut s_prev = T::zero();
        let mut s_curr = sin_x;
        for slot in sin_kx.iter_mut() {
            *slot = s_curr;
            let s_next = two_cos * s_curr - s_prev;
            s_prev = s_curr;
            s_curr = s_next;
        }

        for k in 0..n {
            let row_scale = wx * sin_kx[k] * two_over_pi;
            if row_scale == T::zero() {
                continue;
            }
            let row = sigma.row_mut(k);
            for (slot, &il) in row.iter_mut().zip(inner_integrals.iter()) {
                *slot += row_scale * il;
            }
        }
    }
    Ok(sigma)
}

/// Assemble `Σ_{kl} = ⟨Q e_k, e_l⟩` for modes `1..=n`.
///
/// `quad_order` is the per-axis node budget (at least 64); the effective
/// number of nodes grows automatically with the retained mode count so that
/// oscillatory integrands stay resolved. Every entry is re-evaluated at twice
/// the budget and entries moving by more than `1e-6` relative are recorded as
/// warnings on the returned matrix.
pub fn assemble_covariance<T: Real>(
    kernel: &Kernel<T>,
    n: usize,
    quad_order: usize,
) -> Result<CovarianceMatrix<T>> {
    if n < 1 {
        return Err(Error::config("need at least one mode"));
    }
    if quad_order < 64 {
        return Err(Error::config("quad_order must be at least 64"));
    }
    kernel.check_domain_coverage()?;

    let mut coarse = assemble_pass(kernel, n, quad_order)?;
    let mut fine = assemble_pass(kernel, n, quad_order * 2)?;
    coarse.symmetrize();
    fine.symmetrize();

    let scale = fine.max_abs().max(T::min_positive_value());
    // Entries this far below the matrix scale are numerically zero; their
    // relative wobble says nothing about quadrature convergence.
    let floor = T::lit(1e-9) * scale;
    let tol = T::lit(1e-6);
    let mut warnings = Vec::new();
    for k in 0..n {
        for l in k..n {
            let a = coarse[(k, l)];
            let b = fine[(k, l)];
            let rel = (a - b).abs() / b.abs().max(floor);
            if rel > tol {
                warnings.push(QuadratureWarning {
                    k: k + 1,
                    l: l + 1,
                    relative_change: rel,
                });
            }
        }
    }

    Ok(CovarianceMatrix {
        dim: n,
        entries: coarse,
        kernel: kernel.clone(),
        quad_order,
        warnings,
    })
}
