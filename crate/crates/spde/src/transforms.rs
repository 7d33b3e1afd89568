//! Discrete sine transform (DST-I) on the interior grid `x_j = jπ/(G+1)`.
//!
//! The raw kernel is `S_k = Σ_{j=1..G} v_j sin(jkπ/(G+1))`, which is its own
//! inverse up to the factor `(G+1)/2`. Two evaluation paths are provided:
//! direct `O(G²)` summation (the reference) and an `O(G log G)` path through
//! a radix-2 complex FFT of length `2(G+1)` when `G+1` is a power of two.

use crate::real::Real;

/// True when the fast FFT-backed path applies to a grid of `g` interior points.
pub fn fast_path_available(g: usize) -> bool {
    (g + 1).is_power_of_two() && g >= 3
}

/// Plan for repeated DST-I applications on a fixed grid size.
#[derive(Debug, Clone)]
pub struct DstPlan<T> {
    g: usize,
    // Twiddle tables and scratch for the FFT path; empty for the direct path.
    cos_table: Vec<T>,
    sin_table: Vec<T>,
    scratch_re: Vec<T>,
    scratch_im: Vec<T>,
    // Direct-path kernel sin(jkπ/(G+1)) for j,k = 1..G, row-major by k.
    direct_kernel: Vec<T>,
    fast: bool,
}

impl<T: Real> DstPlan<T> {
    pub fn new(g: usize) -> Self {
        let fast = fast_path_available(g);
        if fast {
            let n = 2 * (g + 1);
            let half = n / 2;
            let mut cos_table = Vec::with_capacity(half);
            let mut sin_table = Vec::with_capacity(half);
            let step = T::lit(2.0) * T::PI() / T::from_index(n);
            for i in 0..half {
                let a = step * T::from_index(i);
                cos_table.push(a.cos());
                sin_table.push(a.sin());
            }
            DstPlan {
                g,
                cos_table,
                sin_table,
                scratch_re: vec![T::zero(); n],
                scratch_im: vec![T::zero(); n],
                direct_kernel: Vec::new(),
                fast: true,
            }
        } else {
            let gp1 = T::from_index(g + 1);
            let mut kernel = Vec::with_capacity(g * g);
            for k in 1..=g {
                for j in 1..=g {
                    let angle = T::PI() * T::from_index(j * k) / gp1;
                    kernel.push(angle.sin());
                }
            }
            DstPlan {
                g,
                cos_table: Vec::new(),
                sin_table: Vec::new(),
                scratch_re: Vec::new(),
                scratch_im: Vec::new(),
                direct_kernel: kernel,
                fast: false,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.g
    }

    pub fn is_fast(&self) -> bool {
        self.fast
    }

    /// Apply the raw DST-I kernel: `out_k = Σ_j input_j sin(jkπ/(G+1))`.
    ///
    /// `input` may be shorter than `G`; missing entries are zero.
    pub fn apply(&mut self, input: &[T], out: &mut [T]) {
        debug_assert!(input.len() <= self.g);
        debug_assert_eq!(out.len(), self.g);
        if self.fast {
            self.apply_fft(input, out);
        } else {
            apply_direct(self.g, &self.direct_kernel, input, out);
        }
    }

    fn apply_fft(&mut self, input: &[T], out: &mut [T]) {
        let g = self.g;
        let n = 2 * (g + 1);
        let re = &mut self.scratch_re;
        let im = &mut self.scratch_im;
        re.iter_mut().for_each(|v| *v = T::zero());
        im.iter_mut().for_each(|v| *v = T::zero());
        // Odd extension: y_j = v_j, y_{n-j} = -v_j, y_0 = y_{g+1} = 0.
        for (j, &v) in input.iter().enumerate() {
            re[j + 1] = v;
            re[n - (j + 1)] = -v;
        }
        fft_in_place(re, im, &self.cos_table, &self.sin_table);
        // FFT of the odd extension gives X_k = -2i·S_k.
        let minus_half = T::lit(-0.5);
        for k in 1..=g {
            out[k - 1] = minus_half * im[k];
        }
    }
}

/// Direct `O(G²)` DST-I, independent of the FFT path. Used as the reference
/// implementation and for grids whose size has no radix-2 structure.
pub fn dst_direct<T: Real>(g: usize, input: &[T], out: &mut [T]) {
    debug_assert!(input.len() <= g);
    debug_assert_eq!(out.len(), g);
    let gp1 = T::from_index(g + 1);
    for k in 1..=g {
        let mut acc = T::zero();
        for (j, &v) in input.iter().enumerate() {
            let angle = T::PI() * T::from_index((j + 1) * k) / gp1;
            acc += v * angle.sin();
        }
        out[k - 1] = acc;
    }
}

fn apply_direct<T: Real>(g: usize, kernel: &[T], input: &[T], out: &mut [T]) {
    for k in 0..g {
        let row = &kernel[k * g..(k + 1) * g];
        let mut acc = T::zero();
        for (a, b) in row.iter().zip(input.iter()) {
            acc += *a * *b;
        }
        out[k] = acc;
    }
}

/// Iterative radix-2 Cooley-Tukey FFT. `re.len()` must be a power of two and
/// the twiddle tables must hold `len/2` entries of `cos/sin(2πi/len)`.
fn fft_in_place<T: Real>(re: &mut [T], im: &mut [T], cos_table: &[T], sin_table: &[T]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    debug_assert_eq!(cos_table.len(), n / 2);

    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let table_step = n / size;
        let mut start = 0;
        while start < n {
            for k in 0..half {
                let idx = k * table_step;
                // Forward transform: twiddle e^{-2πi k/size}.
                let wr = cos_table[idx];
                let wi = -sin_table[idx];
                let a = start + k;
                let b = a + half;
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
            start += size;
        }
        size *= 2;
    }
}
