//! Uniform periodic grid in d ∈ {1,2,3} with spectral calculus.
//!
//! Conventions, fixed here and nowhere else: points x_j = -L/2 + j·h with
//! h = L/n; frequencies ξ_k = 2π·k̃/L with the signed alias k̃ ∈ [-n/2, n/2);
//! the forward transform is unscaled and the inverse carries 1/n^d. Every
//! physical integral goes through [`GridSpec::integrate_real`] (the
//! trapezoid-equals-spectral rule h^d·Σ), so callers never see the
//! normalization.

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, LazyLock, Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("dimension {0} unsupported, expected 1, 2 or 3")]
    BadDimension(usize),
    #[error("points per axis must be even and at least 8, got {0}")]
    BadResolution(usize),
    #[error("box length must be positive and finite, got {0}")]
    BadLength(f64),
    #[error("buffer length {got} does not match grid size {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("operands live on different grids")]
    GridMismatch,
    #[error("convolution output has imaginary residue {0:.3e} relative to its input scale")]
    ImagResidue(f64),
}

/// Geometry of the computational box. Cheap to copy; all fields validated
/// at construction so downstream code can index without checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    n: usize,
    len: f64,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, len: f64) -> Result<Self, GridError> {
        if !(1..=3).contains(&dim) {
            return Err(GridError::BadDimension(dim));
        }
        if n < 8 || n % 2 != 0 {
            return Err(GridError::BadResolution(n));
        }
        if !(len.is_finite() && len > 0.0) {
            return Err(GridError::BadLength(len));
        }
        Ok(GridSpec { dim, n, len })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn box_length(&self) -> f64 {
        self.len
    }

    pub fn spacing(&self) -> f64 {
        self.len / self.n as f64
    }

    pub fn total_points(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Coordinate of index j along any axis.
    pub fn coord(&self, j: usize) -> f64 {
        -0.5 * self.len + j as f64 * self.spacing()
    }

    /// Frequency of index k along any axis (signed alias).
    pub fn freq(&self, k: usize) -> f64 {
        let signed = if k < self.n / 2 {
            k as f64
        } else {
            k as f64 - self.n as f64
        };
        2.0 * PI * signed / self.len
    }

    /// Frequency for component-odd multipliers. The Nyquist row is shared
    /// between ±ξ on an even lattice, so its odd part is zero; keeping it
    /// would break the conjugation equivariance of odd derivatives.
    pub fn odd_freq(&self, k: usize) -> f64 {
        if k == self.n / 2 {
            0.0
        } else {
            self.freq(k)
        }
    }

    /// Per-axis indices of a flat index; unused axes read 0.
    pub fn axes(&self, mut flat: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        for axis in (0..self.dim).rev() {
            out[axis] = flat % self.n;
            flat /= self.n;
        }
        out
    }

    pub fn flat(&self, axes: [usize; 3]) -> usize {
        let mut flat = 0usize;
        for &ix in axes.iter().take(self.dim) {
            flat = flat * self.n + ix;
        }
        flat
    }

    /// Position of a flat index; unused components read 0.
    pub fn position(&self, flat: usize) -> [f64; 3] {
        let ax = self.axes(flat);
        let mut out = [0.0f64; 3];
        for axis in 0..self.dim {
            out[axis] = self.coord(ax[axis]);
        }
        out
    }

    pub fn radius_sq(&self, flat: usize) -> f64 {
        let p = self.position(flat);
        p[0] * p[0] + p[1] * p[1] + p[2] * p[2]
    }

    /// Flat index of the origin (coordinate 0 on every axis).
    pub fn center_index(&self) -> usize {
        self.flat([self.n / 2; 3])
    }

    /// Flat index of the point -x for a given x (periodic reflection).
    pub fn reflected(&self, flat: usize) -> usize {
        let ax = self.axes(flat);
        let mut out = [0usize; 3];
        for axis in 0..self.dim {
            out[axis] = (self.n - ax[axis]) % self.n;
        }
        self.flat(out)
    }

    pub fn integrate_real(&self, vals: &[f64]) -> f64 {
        debug_assert_eq!(vals.len(), self.total_points());
        self.cell_volume() * vals.iter().sum::<f64>()
    }

    pub fn integrate(&self, vals: &[Complex64]) -> Complex64 {
        debug_assert_eq!(vals.len(), self.total_points());
        let sum: Complex64 = vals.iter().sum();
        sum * self.cell_volume()
    }
}

// Planning is cheap but not free; plans are immutable once built, so a
// process-wide read-mostly registry keyed by (n, direction) is safe.
static PLAN_CACHE: LazyLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> =
    LazyLock::new(|| Mutex::new(HashMap::new()));

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = PLAN_CACHE.lock().unwrap();
    cache
        .entry((n, forward))
        .or_insert_with(|| {
            let dir = if forward {
                FftDirection::Forward
            } else {
                FftDirection::Inverse
            };
            FftPlanner::new().plan_fft(n, dir)
        })
        .clone()
}

/// In-place d-dimensional transform, one strided pass per axis.
/// Axis `dim-1` is contiguous (row-major layout, axis 0 slowest).
fn transform(values: &mut [Complex64], grid: &GridSpec, forward: bool) {
    let n = grid.n;
    let fft = plan(n, forward);
    let mut scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
    let mut line = vec![Complex64::ZERO; n];
    for axis in 0..grid.dim {
        let stride = n.pow((grid.dim - 1 - axis) as u32);
        if stride == 1 {
            for chunk in values.chunks_exact_mut(n) {
                fft.process_with_scratch(chunk, &mut scratch);
            }
        } else {
            let block = n * stride;
            for base in (0..values.len()).step_by(block) {
                for off in 0..stride {
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = values[base + off + j * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (j, slot) in line.iter().enumerate() {
                        values[base + off + j * stride] = *slot;
                    }
                }
            }
        }
    }
    if !forward {
        let scale = 1.0 / grid.total_points() as f64;
        for v in values.iter_mut() {
            *v *= scale;
        }
    }
}

/// A complex grid function carrying both its point values and its spectrum,
/// each materialized on first use. A field is immutable after construction,
/// so the two representations can never disagree.
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: GridSpec,
    values: OnceLock<Vec<Complex64>>,
    spectrum: OnceLock<Vec<Complex64>>,
}

impl SpectralField {
    pub fn from_values(grid: GridSpec, values: Vec<Complex64>) -> Result<Self, GridError> {
        if values.len() != grid.total_points() {
            return Err(GridError::LengthMismatch {
                got: values.len(),
                want: grid.total_points(),
            });
        }
        let cell = OnceLock::new();
        cell.set(values).unwrap();
        Ok(SpectralField {
            grid,
            values: cell,
            spectrum: OnceLock::new(),
        })
    }

    pub fn from_spectrum(grid: GridSpec, spectrum: Vec<Complex64>) -> Result<Self, GridError> {
        if spectrum.len() != grid.total_points() {
            return Err(GridError::LengthMismatch {
                got: spectrum.len(),
                want: grid.total_points(),
            });
        }
        let cell = OnceLock::new();
        cell.set(spectrum).unwrap();
        Ok(SpectralField {
            grid,
            values: OnceLock::new(),
            spectrum: cell,
        })
    }

    /// Sample a closure on the grid. Positions are zero-padded to length 3.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut([f64; 3]) -> Complex64) -> Self {
        let values = (0..grid.total_points())
            .map(|i| f(grid.position(i)))
            .collect();
        SpectralField::from_values(grid, values).expect("length matches by construction")
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        self.values.get_or_init(|| {
            let mut v = self.spectrum.get().expect("one representation set").clone();
            transform(&mut v, &self.grid, false);
            v
        })
    }

    pub fn spectrum(&self) -> &[Complex64] {
        self.spectrum.get_or_init(|| {
            let mut v = self.values.get().expect("one representation set").clone();
            transform(&mut v, &self.grid, true);
            v
        })
    }

    pub fn norm_sq(&self) -> f64 {
        let vals = self.values();
        self.grid.cell_volume() * vals.iter().map(|v| v.norm_sqr()).sum::<f64>()
    }

    pub fn density(&self) -> Vec<f64> {
        self.values().iter().map(|v| v.norm_sqr()).collect()
    }

    /// Apply a spectral multiplier m(k) (index-wise) and return the result.
    pub fn multiplier(&self, m: impl Fn(&GridSpec, [usize; 3]) -> Complex64) -> SpectralField {
        let hat = self.spectrum();
        let out = (0..self.grid.total_points())
            .map(|i| m(&self.grid, self.grid.axes(i)) * hat[i])
            .collect();
        SpectralField::from_spectrum(self.grid, out).expect("length matches")
    }

    pub fn derivative(&self, axis: usize) -> SpectralField {
        assert!(axis < self.grid.dim, "axis out of range");
        self.multiplier(|g, ax| Complex64::new(0.0, g.odd_freq(ax[axis])))
    }

    pub fn gradient(&self) -> Vec<SpectralField> {
        (0..self.grid.dim).map(|a| self.derivative(a)).collect()
    }

    pub fn laplacian(&self) -> SpectralField {
        self.multiplier(|g, ax| {
            let mut k2 = 0.0;
            for &ix in ax.iter().take(g.dim) {
                let f = g.freq(ix);
                k2 += f * f;
            }
            Complex64::new(-k2, 0.0)
        })
    }

    pub fn second_derivative(&self, a: usize, b: usize) -> SpectralField {
        assert!(a < self.grid.dim && b < self.grid.dim, "axis out of range");
        if a == b {
            // even multiplier: the Nyquist square is its own conjugate alias
            self.multiplier(|g, ax| Complex64::new(-g.freq(ax[a]).powi(2), 0.0))
        } else {
            self.multiplier(|g, ax| Complex64::new(-g.odd_freq(ax[a]) * g.odd_freq(ax[b]), 0.0))
        }
    }

    /// ∫|∇φ|² by Parseval, without leaving spectrum space.
    pub fn gradient_norm_sq(&self) -> f64 {
        let hat = self.spectrum();
        let mut acc = 0.0;
        for (i, v) in hat.iter().enumerate() {
            let ax = self.grid.axes(i);
            let mut k2 = 0.0;
            for &ix in ax.iter().take(self.grid.dim) {
                let f = self.grid.freq(ix);
                k2 += f * f;
            }
            acc += k2 * v.norm_sqr();
        }
        acc * self.grid.cell_volume() / self.grid.total_points() as f64
    }

    pub fn conjugated(&self) -> SpectralField {
        let vals = self.values().iter().map(|v| v.conj()).collect();
        SpectralField::from_values(self.grid, vals).expect("length matches")
    }
}

/// A convolution kernel prepared from box-centered samples. Construction
/// reindexes the samples to wrapped (origin-first) order and stores their
/// spectrum; with even n the half-period shift is an involution.
#[derive(Debug, Clone)]
pub struct ConvKernel {
    grid: GridSpec,
    hat: Vec<Complex64>,
    // Natural magnitude of a convolution output, ‖kernel‖_L¹·max|density|
    // up to the density factor; used to scale the imaginary-residue check so
    // that legitimately tiny outputs are not flagged.
    l1: f64,
}

impl ConvKernel {
    pub fn from_box_samples(grid: GridSpec, samples: &[f64]) -> Result<Self, GridError> {
        if samples.len() != grid.total_points() {
            return Err(GridError::LengthMismatch {
                got: samples.len(),
                want: grid.total_points(),
            });
        }
        let half = grid.n / 2;
        let mut wrapped = vec![Complex64::ZERO; samples.len()];
        for (w, slot) in wrapped.iter_mut().enumerate() {
            let ax = grid.axes(w);
            let mut src = [0usize; 3];
            for axis in 0..grid.dim {
                src[axis] = (ax[axis] + half) % grid.n;
            }
            *slot = Complex64::new(samples[grid.flat(src)], 0.0);
        }
        transform(&mut wrapped, &grid, true);
        let l1 = grid.cell_volume() * samples.iter().map(|s| s.abs()).sum::<f64>();
        Ok(ConvKernel {
            grid,
            hat: wrapped,
            l1,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// (kernel ⊛ density)(x) = h^d·Σ_y kernel(x-y)·density(y), via FFT.
    pub fn convolve(&self, density: &[f64]) -> Result<Vec<f64>, GridError> {
        if density.len() != self.grid.total_points() {
            return Err(GridError::LengthMismatch {
                got: density.len(),
                want: self.grid.total_points(),
            });
        }
        let mut buf: Vec<Complex64> = density
            .iter()
            .map(|&d| Complex64::new(d, 0.0))
            .collect();
        transform(&mut buf, &self.grid, true);
        let cell = self.grid.cell_volume();
        for (b, k) in buf.iter_mut().zip(self.hat.iter()) {
            *b *= k * cell;
        }
        transform(&mut buf, &self.grid, false);
        let scale = self.l1 * density.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let max_im = buf.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
        if max_im > 1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(GridError::ImagResidue(max_im / scale.max(f64::MIN_POSITIVE)));
        }
        Ok(buf.into_iter().map(|v| v.re).collect())
    }

    /// Kernels whose convolution is the spectral gradient of this kernel's
    /// convolution: hat_a = i·ξ_a·hat, with the Nyquist mode zeroed. The odd
    /// multiplier has no self-conjugate alias at n/2, so keeping it would
    /// leak an imaginary part proportional to the kernel's Nyquist content.
    pub fn gradient_kernels(&self) -> Vec<ConvKernel> {
        (0..self.grid.dim)
            .map(|axis| {
                let hat = (0..self.grid.total_points())
                    .map(|i| {
                        let ax = self.grid.axes(i);
                        Complex64::new(0.0, self.grid.odd_freq(ax[axis])) * self.hat[i]
                    })
                    .collect();
                ConvKernel {
                    grid: self.grid,
                    // |z·ξ|-type magnitude bound: ‖∂kernel‖_L¹ is not known from
                    // the spectrum alone; reuse the parent scale times the top
                    // frequency, a generous but safe residue scale.
                    l1: self.l1 * PI * self.grid.n as f64 / self.grid.len,
                    hat,
                }
            })
            .collect()
    }
}
