//! Periodic-box spectral discretization.
//!
//! Fields are stored in real space on an `n × n × n` uniform grid covering a
//! cube of side `L`. Node `(i, j, l)` sits at `(i h, j h, l h)` folded into
//! `[-L/2, L/2)` (see [`SpectralGrid::coord`]), with `h = L / n`. Spectral
//! coefficients use angular wavenumbers `k = 2π f / L` with the signed integer
//! frequency `f ∈ [-n/2, n/2)` and are normalized so that
//!
//! ```text
//! u(x) = V^{-1/2} Σ_k c_k e^{i k·x},     Σ_k |c_k|² = h³ Σ_x |u(x)|² = ‖u‖₂².
//! ```
//!
//! With this normalization every diagonal operator `s(k)` has the quadratic
//! form `⟨u, S u⟩ = Σ_k s(k) |c_k|²`, which is the continuum value for
//! band-limited `u`.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Uniform periodic grid with cached wavenumber tables and FFT plans.
pub struct SpectralGrid {
    n: usize,
    box_length: f64,
    k_axis: Vec<f64>,
    k_norm: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Shared handle to a grid. Fields hold one of these.
pub type Grid = Arc<SpectralGrid>;

impl fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("n", &self.n)
            .field("box_length", &self.box_length)
            .finish()
    }
}

/// Builds a grid with `n` points per axis on a box of side `box_length`.
pub fn make_grid(n: usize, box_length: f64) -> Result<Grid> {
    if n < 8 || n % 2 != 0 {
        return Err(Error::InvalidGrid(format!(
            "points per axis must be even and at least 8, got {n}"
        )));
    }
    if !(box_length.is_finite() && box_length > 0.0) {
        return Err(Error::InvalidGrid(format!(
            "box length must be positive, got {box_length}"
        )));
    }
    let dk = 2.0 * std::f64::consts::PI / box_length;
    let k_axis: Vec<f64> = (0..n).map(|i| signed_frequency(i, n) as f64 * dk).collect();
    let mut k_norm = Vec::with_capacity(n * n * n);
    for &kx in &k_axis {
        for &ky in &k_axis {
            for &kz in &k_axis {
                k_norm.push((kx * kx + ky * ky + kz * kz).sqrt());
            }
        }
    }
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    Ok(Arc::new(SpectralGrid {
        n,
        box_length,
        k_axis,
        k_norm,
        forward,
        inverse,
    }))
}

/// Signed frequency of FFT index `i` on an axis of length `n`: `[0, n/2) ∪ [-n/2, 0)`.
pub fn signed_frequency(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

fn index_of_frequency(f: i64, n: usize) -> usize {
    if f >= 0 {
        f as usize
    } else {
        (f + n as i64) as usize
    }
}

impl SpectralGrid {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn spacing(&self) -> f64 {
        self.box_length / self.n as f64
    }

    pub fn volume(&self) -> f64 {
        self.box_length.powi(3)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    /// Per-axis angular wavenumbers in FFT order.
    pub fn k_axis(&self) -> &[f64] {
        &self.k_axis
    }

    /// `|k|` for every spectral index (row-major, same layout as the fields).
    pub fn k_norm(&self) -> &[f64] {
        &self.k_norm
    }

    /// Smallest nonzero wavenumber magnitude.
    pub fn k_min(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.box_length
    }

    /// Per-axis Nyquist magnitude `π n / L`.
    pub fn k_nyquist(&self) -> f64 {
        std::f64::consts::PI * self.n as f64 / self.box_length
    }

    /// Physical coordinate of axis index `i`, folded into `[-L/2, L/2)`.
    pub fn coord(&self, i: usize) -> f64 {
        signed_frequency(i, self.n) as f64 * self.spacing()
    }

    /// Splits a flat index into `(ix, iy, iz)`.
    pub fn unflatten(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    pub fn flatten(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n + iy) * self.n + iz
    }

    /// Position of a flat index in the folded box.
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let [ix, iy, iz] = self.unflatten(idx);
        [self.coord(ix), self.coord(iy), self.coord(iz)]
    }

    /// Wavevector of a flat spectral index.
    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let [ix, iy, iz] = self.unflatten(idx);
        [self.k_axis[ix], self.k_axis[iy], self.k_axis[iz]]
    }

    /// Two grids are the same when they share `n` and `L` exactly.
    pub fn same_as(&self, other: &SpectralGrid) -> bool {
        self.n == other.n && self.box_length.to_bits() == other.box_length.to_bits()
    }

    fn fft3(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.inverse } else { &self.forward };
        let mut scratch = vec![ZERO; plan.get_inplace_scratch_len()];
        // z is contiguous: the plan processes every length-n chunk.
        plan.process_with_scratch(data, &mut scratch);
        let mut lines = vec![ZERO; n * n];
        // y lines, one x-plane at a time
        for ix in 0..n {
            let plane = &mut data[ix * n * n..(ix + 1) * n * n];
            for iy in 0..n {
                for iz in 0..n {
                    lines[iz * n + iy] = plane[iy * n + iz];
                }
            }
            plan.process_with_scratch(&mut lines, &mut scratch);
            for iy in 0..n {
                for iz in 0..n {
                    plane[iy * n + iz] = lines[iz * n + iy];
                }
            }
        }
        // x lines, one y-row at a time
        for iy in 0..n {
            for ix in 0..n {
                let base = (ix * n + iy) * n;
                for iz in 0..n {
                    lines[iz * n + ix] = data[base + iz];
                }
            }
            plan.process_with_scratch(&mut lines, &mut scratch);
            for ix in 0..n {
                let base = (ix * n + iy) * n;
                for iz in 0..n {
                    data[base + iz] = lines[iz * n + ix];
                }
            }
        }
    }

    /// Real-space values to normalized spectral coefficients.
    pub fn forward(&self, values: &[Complex64]) -> Vec<Complex64> {
        let mut data = values.to_vec();
        self.fft3(&mut data, false);
        let scale = self.box_length.powf(1.5) / (self.len() as f64);
        data.iter_mut().for_each(|c| *c *= scale);
        data
    }

    /// Normalized spectral coefficients to real-space values.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut data = coeffs.to_vec();
        self.fft3(&mut data, true);
        let scale = self.box_length.powf(-1.5);
        data.iter_mut().for_each(|c| *c *= scale);
        data
    }
}

/// One complex-valued function on a grid, stored in real space.
#[derive(Clone)]
pub struct ComplexField {
    grid: Grid,
    values: Vec<Complex64>,
}

impl fmt::Debug for ComplexField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComplexField")
            .field("grid", &self.grid)
            .field("norm", &self.norm())
            .finish()
    }
}

impl ComplexField {
    pub fn zeros(grid: &Grid) -> Self {
        ComplexField {
            grid: grid.clone(),
            values: vec![ZERO; grid.len()],
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(ComplexField {
            grid: grid.clone(),
            values,
        })
    }

    /// Samples `f(x)` at every node, with `x` in the folded box.
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 3]) -> Complex64) -> Self {
        let values = (0..grid.len()).map(|idx| f(grid.position(idx))).collect();
        ComplexField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn from_spectrum(grid: &Grid, coeffs: &[Complex64]) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        Ok(ComplexField {
            grid: grid.clone(),
            values: grid.inverse(coeffs),
        })
    }

    /// Normalized plane wave `V^{-1/2} e^{i k·x}` at integer frequency `f`.
    pub fn plane_wave(grid: &Grid, freq: [i64; 3]) -> Self {
        let dk = grid.k_min();
        let amp = grid.volume().powf(-0.5);
        ComplexField::from_fn(grid, |x| {
            let phase = dk * (freq[0] as f64 * x[0] + freq[1] as f64 * x[1] + freq[2] as f64 * x[2]);
            Complex64::from_polar(amp, phase)
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        self.grid.forward(&self.values)
    }

    pub fn check_same_grid(&self, other: &ComplexField) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Discrete L² product `⟨self, other⟩ = h³ Σ conj(self)·other`.
    pub fn inner(&self, other: &ComplexField) -> Result<Complex64> {
        self.check_same_grid(other)?;
        let s: Complex64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(s * self.grid.cell_volume())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&mut self, s: Complex64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: Complex64) -> ComplexField {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: Complex64, other: &ComplexField) -> Result<()> {
        self.check_same_grid(other)?;
        self.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a += alpha * b);
        Ok(())
    }

    /// Average value over the box; the zero-mode coefficient is `mean · V^{1/2}`.
    pub fn mean(&self) -> Complex64 {
        self.values.iter().sum::<Complex64>() / self.values.len() as f64
    }

    /// The field with its zero mode removed.
    pub fn without_mean(&self) -> ComplexField {
        let mean = self.mean();
        ComplexField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v - mean).collect(),
        }
    }

    /// Pointwise multiplication by a real field.
    pub fn mul_real(&self, weights: &[f64]) -> ComplexField {
        let values = self
            .values
            .iter()
            .zip(weights)
            .map(|(v, w)| v * w)
            .collect();
        ComplexField {
            grid: self.grid.clone(),
            values,
        }
    }

    /// Translation `u(x - shift)` realized as a Fourier phase shift.
    pub fn translated(&self, shift: [f64; 3]) -> ComplexField {
        let mut coeffs = self.spectrum();
        for (idx, c) in coeffs.iter_mut().enumerate() {
            let k = self.grid.wavevector(idx);
            let phase = -(k[0] * shift[0] + k[1] * shift[1] + k[2] * shift[2]);
            *c *= Complex64::from_polar(1.0, phase);
        }
        ComplexField {
            grid: self.grid.clone(),
            values: self.grid.inverse(&coeffs),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MultiplierKind {
    /// `√(|k|² + m²)`
    Relativistic(f64),
    /// `|k|`
    Massless,
    /// `1/|k|` with the `k = 0` entry dropped.
    InverseMassless,
}

/// Diagonal Fourier multiplier sampled on a grid's spectral layout.
#[derive(Clone, Debug)]
pub struct MultiplierSpectrum {
    kind: MultiplierKind,
    grid: Grid,
    values: Vec<f64>,
}

impl MultiplierSpectrum {
    pub fn new(grid: &Grid, kind: MultiplierKind) -> Result<Self> {
        let k = grid.k_norm();
        let values = match kind {
            MultiplierKind::Relativistic(m) => {
                if !(m.is_finite() && m >= 0.0) {
                    return Err(Error::InvalidArgument(format!("mass must be >= 0, got {m}")));
                }
                k.iter().map(|&k| (k * k + m * m).sqrt()).collect()
            }
            MultiplierKind::Massless => k.to_vec(),
            // DC policy: the zero mode is dropped from 1/|k|.
            MultiplierKind::InverseMassless => {
                k.iter().map(|&k| if k > 0.0 { 1.0 / k } else { 0.0 }).collect()
            }
        };
        Ok(MultiplierSpectrum {
            kind,
            grid: grid.clone(),
            values,
        })
    }

    /// Symbol of the shifted kinetic operator `√(-Δ+m²) - m`, evaluated without cancellation.
    pub fn kinetic(grid: &Grid, m: f64) -> Result<Self> {
        if !(m.is_finite() && m >= 0.0) {
            return Err(Error::InvalidArgument(format!("mass must be >= 0, got {m}")));
        }
        let values = grid
            .k_norm()
            .iter()
            .map(|&k| {
                let k2 = k * k;
                if k2 == 0.0 {
                    0.0
                } else {
                    k2 / ((k2 + m * m).sqrt() + m)
                }
            })
            .collect();
        Ok(MultiplierSpectrum {
            kind: MultiplierKind::Relativistic(m),
            grid: grid.clone(),
            values,
        })
    }

    /// Arbitrary nonnegative symbol; used for preconditioners.
    pub fn from_fn(grid: &Grid, kind: MultiplierKind, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.k_norm().iter().map(|&k| f(k)).collect();
        MultiplierSpectrum {
            kind,
            grid: grid.clone(),
            values,
        }
    }

    pub fn kind(&self) -> MultiplierKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn check_grid(&self, u: &ComplexField) -> Result<()> {
        if self.grid.same_as(u.grid()) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// `Σ_k s(k) |c_k|²` from precomputed spectral coefficients.
    pub fn form_from_spectrum(&self, coeffs: &[Complex64]) -> f64 {
        self.values
            .iter()
            .zip(coeffs)
            .map(|(s, c)| s * c.norm_sqr())
            .sum()
    }
}

/// `⟨u, S u⟩` for a diagonal multiplier `S`.
pub fn quadratic_form(u: &ComplexField, s: &MultiplierSpectrum) -> Result<f64> {
    s.check_grid(u)?;
    Ok(s.form_from_spectrum(&u.spectrum()))
}

/// `⟨u, (√(-Δ+m²) - m) u⟩`.
pub fn kinetic_form(u: &ComplexField, m: f64) -> Result<f64> {
    let s = MultiplierSpectrum::kinetic(u.grid(), m)?;
    quadratic_form(u, &s)
}

/// `S u` for a diagonal multiplier `S`.
pub fn apply_multiplier(u: &ComplexField, s: &MultiplierSpectrum) -> Result<ComplexField> {
    s.check_grid(u)?;
    let mut coeffs = u.spectrum();
    coeffs
        .iter_mut()
        .zip(&s.values)
        .for_each(|(c, v)| *c *= v);
    ComplexField::from_spectrum(u.grid(), &coeffs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DilationDirection {
    /// `t = 1/2`: spread out onto a grid with `2n` points and box `2L`.
    Up,
    /// `t = 2`: concentrate onto a grid with `n/2` points and box `L/2`.
    Down,
}

/// Energy fraction tolerated outside the half spectrum when dilating down.
pub const BAND_LIMIT_TOL: f64 = 1e-10;

/// Mass-preserving dilation `u_t(x) = t^{3/2} u(t x)` with `t ∈ {1/2, 2}`.
///
/// The grid spacing is kept; the number of points and the box both change by
/// the factor `1/t`, so the map is an exact copy of spectral coefficients
/// between frequency indices.
pub fn dilate_pow2(u: &ComplexField, direction: DilationDirection) -> Result<ComplexField> {
    let grid = u.grid();
    let n = grid.n();
    let coeffs = u.spectrum();
    let (new_n, new_l) = match direction {
        DilationDirection::Up => (2 * n, 2.0 * grid.box_length()),
        DilationDirection::Down => (n / 2, 0.5 * grid.box_length()),
    };
    let target = make_grid(new_n, new_l)?;
    let mut out = vec![ZERO; target.len()];
    match direction {
        DilationDirection::Up => {
            for (idx, c) in coeffs.iter().enumerate() {
                let [ix, iy, iz] = grid.unflatten(idx);
                let f = [ix, iy, iz].map(|i| signed_frequency(i, n));
                let j = f.map(|f| index_of_frequency(f, new_n));
                out[target.flatten(j[0], j[1], j[2])] = *c;
            }
        }
        DilationDirection::Down => {
            let half = (new_n / 2) as i64;
            let total: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
            let mut outside = 0.0;
            for (idx, c) in coeffs.iter().enumerate() {
                let [ix, iy, iz] = grid.unflatten(idx);
                let f = [ix, iy, iz].map(|i| signed_frequency(i, n));
                if f.iter().all(|&f| -half <= f && f < half) {
                    let j = f.map(|f| index_of_frequency(f, new_n));
                    out[target.flatten(j[0], j[1], j[2])] = *c;
                } else {
                    outside += c.norm_sqr();
                }
            }
            let excess = if total > 0.0 { outside / total } else { 0.0 };
            if excess > BAND_LIMIT_TOL {
                return Err(Error::BandLimit { excess });
            }
        }
    }
    ComplexField::from_spectrum(&target, &out)
}

/// Mass-preserving dilation by an arbitrary factor `t > 0` that keeps the
/// node values and relabels the box: the result lives on `(n, L/t)` with
/// values multiplied by `t^{3/2}`. Every wavenumber scales by exactly `t`.
pub fn dilate_box(u: &ComplexField, t: f64) -> Result<ComplexField> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidArgument(format!("dilation factor must be positive, got {t}")));
    }
    let grid = u.grid();
    let target = make_grid(grid.n(), grid.box_length() / t)?;
    let amp = t.powf(1.5);
    let values = u.values().iter().map(|v| v * amp).collect();
    ComplexField::from_values(&target, values)
}

/// Embeds `u` in a box of twice the side with the same spacing: node values
/// are kept at their coordinates and the new nodes are set to zero.
pub fn pad_box(u: &ComplexField) -> Result<ComplexField> {
    let grid = u.grid();
    let n = grid.n();
    let target = make_grid(2 * n, 2.0 * grid.box_length())?;
    let mut out = vec![ZERO; target.len()];
    let wrap = |i: usize| index_of_frequency(signed_frequency(i, n), 2 * n);
    for (idx, v) in u.values().iter().enumerate() {
        let [ix, iy, iz] = grid.unflatten(idx);
        out[target.flatten(wrap(ix), wrap(iy), wrap(iz))] = *v;
    }
    ComplexField::from_values(&target, out)
}

/// Orbitals are confined to the band `0 < |k| ≤ f · k_Nyquist`, optionally
/// with `k = 0` added back.
#[derive(Clone, Debug)]
pub struct SpectralBand {
    mask: Vec<bool>,
}

impl SpectralBand {
    pub fn new(grid: &Grid, fraction: f64) -> Self {
        let cutoff = fraction * grid.k_nyquist() * (1.0 + 1e-12);
        SpectralBand {
            mask: grid.k_norm().iter().map(|&k| k > 0.0 && k <= cutoff).collect(),
        }
    }

    /// Admits or drops the `k = 0` mode.
    pub fn with_zero_mode(mut self, keep: bool) -> Self {
        self.mask[0] = keep;
        self
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    /// Spectral coefficients restricted to the band.
    pub fn restrict(&self, coeffs: &mut [Complex64]) {
        coeffs
            .iter_mut()
            .zip(&self.mask)
            .filter(|(_, &keep)| !keep)
            .for_each(|(c, _)| *c = Complex64::new(0.0, 0.0));
    }

    pub fn project(&self, u: &ComplexField) -> ComplexField {
        let mut c = u.spectrum();
        self.restrict(&mut c);
        ComplexField::from_spectrum(u.grid(), &c).expect("same grid")
    }

    /// `‖P u‖₂` for the band projection `P`.
    pub fn projected_norm(&self, u: &ComplexField) -> f64 {
        let mut c = u.spectrum();
        self.restrict(&mut c);
        c.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Grid, seed: u64) -> ComplexField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexField::from_values(grid, values).unwrap()
    }

    fn gaussian(grid: &Grid, width: f64) -> ComplexField {
        let amp = (std::f64::consts::PI * width * width).powf(-0.75);
        ComplexField::from_fn(grid, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            Complex64::new(amp * (-r2 / (2.0 * width * width)).exp(), 0.0)
        })
    }

    #[test]
    fn integer_wavenumbers_for_two_pi_box() {
        let g = make_grid(8, 2.0 * std::f64::consts::PI).unwrap();
        let expected = [0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0];
        for (k, e) in g.k_axis().iter().zip(expected) {
            assert!((k - e).abs() < 1e-14);
        }
    }

    #[test]
    fn nyquist_magnitude() {
        let g = make_grid(16, 32.0).unwrap();
        let kmax = g.k_axis().iter().fold(0.0f64, |m, k| m.max(k.abs()));
        assert!((kmax - std::f64::consts::FRAC_PI_2).abs() < 1e-14);
        assert!((g.k_nyquist() - kmax).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(make_grid(7, 1.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(make_grid(6, 1.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(make_grid(8, 0.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(make_grid(8, -2.0), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn wavenumbers_symmetric_except_nyquist() {
        let g = make_grid(10, 3.0).unwrap();
        let k = g.k_axis();
        for &ki in k {
            let has_neg = k.iter().any(|&kj| (kj + ki).abs() < 1e-12);
            let nyquist = (ki.abs() - g.k_nyquist()).abs() < 1e-12;
            assert!(has_neg || nyquist);
        }
    }

    #[test]
    fn parseval_and_round_trip() {
        let g = make_grid(12, 5.0).unwrap();
        let u = random_field(&g, 1);
        let c = u.spectrum();
        let spec: f64 = c.iter().map(|c| c.norm_sqr()).sum();
        assert!((spec - u.norm_sqr()).abs() <= 1e-12 * u.norm_sqr());
        let back = ComplexField::from_spectrum(&g, &c).unwrap();
        let err: f64 = back
            .values()
            .iter()
            .zip(u.values())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let scale: f64 = u.values().iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(err <= 1e-12 * scale);
    }

    #[test]
    fn plane_wave_eigenvalues() {
        let g = make_grid(8, 4.0).unwrap();
        let freq = [1, -2, 3];
        let u = ComplexField::plane_wave(&g, freq);
        assert!((u.norm_sqr() - 1.0).abs() < 1e-12);
        let k0 = g.k_min() * ((1 + 4 + 9) as f64).sqrt();
        let m = 2.0;
        let rel = MultiplierSpectrum::new(&g, MultiplierKind::Relativistic(m)).unwrap();
        let q = quadratic_form(&u, &rel).unwrap();
        assert!((q - (k0 * k0 + m * m).sqrt()).abs() < 1e-12);
        let kin = kinetic_form(&u, m).unwrap();
        assert!((kin - ((k0 * k0 + 4.0).sqrt() - 2.0)).abs() < 1e-12);

        let applied = apply_multiplier(&u, &rel).unwrap();
        let expected = u.scaled(Complex64::new((k0 * k0 + m * m).sqrt(), 0.0));
        for (a, b) in applied.values().iter().zip(expected.values()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_mode_is_massless_kernel() {
        let g = make_grid(8, 3.0).unwrap();
        let u = ComplexField::plane_wave(&g, [0, 0, 0]);
        let s = MultiplierSpectrum::new(&g, MultiplierKind::Massless).unwrap();
        assert!(quadratic_form(&u, &s).unwrap().abs() < 1e-14);
        let inv = MultiplierSpectrum::new(&g, MultiplierKind::InverseMassless).unwrap();
        assert_eq!(inv.values()[0], 0.0);
    }

    #[test]
    fn massless_kinetic_is_m_zero_limit() {
        let g = make_grid(8, 3.0).unwrap();
        let u = random_field(&g, 7);
        let s = MultiplierSpectrum::new(&g, MultiplierKind::Massless).unwrap();
        let a = kinetic_form(&u, 0.0).unwrap();
        let b = quadratic_form(&u, &s).unwrap();
        assert!((a - b).abs() <= 1e-12 * b);
    }

    #[test]
    fn multiplier_self_adjoint_and_consistent() {
        let g = make_grid(8, 2.5).unwrap();
        let s = MultiplierSpectrum::new(&g, MultiplierKind::Relativistic(1.3)).unwrap();
        for seed in 0..5 {
            let u = random_field(&g, 2 * seed);
            let v = random_field(&g, 2 * seed + 1);
            let su = apply_multiplier(&u, &s).unwrap();
            let sv = apply_multiplier(&v, &s).unwrap();
            let lhs = v.inner(&su).unwrap();
            let rhs = u.inner(&sv).unwrap().conj();
            assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm());
            let q = quadratic_form(&u, &s).unwrap();
            let direct = u.inner(&su).unwrap();
            assert!((direct.re - q).abs() <= 1e-12 * q);
            assert!(direct.im.abs() <= 1e-12 * q);
        }
    }

    #[test]
    fn multipliers_commute() {
        let g = make_grid(8, 2.5).unwrap();
        let a = MultiplierSpectrum::new(&g, MultiplierKind::Relativistic(0.7)).unwrap();
        let b = MultiplierSpectrum::new(&g, MultiplierKind::InverseMassless).unwrap();
        let u = random_field(&g, 3);
        let ab = apply_multiplier(&apply_multiplier(&u, &b).unwrap(), &a).unwrap();
        let ba = apply_multiplier(&apply_multiplier(&u, &a).unwrap(), &b).unwrap();
        let scale = ab.norm();
        let mut diff = ab.clone();
        diff.axpy(Complex64::new(-1.0, 0.0), &ba).unwrap();
        assert!(diff.norm() <= 1e-12 * scale);
    }

    #[test]
    fn relativistic_kinetic_below_nonrelativistic() {
        let g = make_grid(8, 4.0).unwrap();
        let m = 0.8;
        let k2 = MultiplierSpectrum::from_fn(&g, MultiplierKind::Massless, |k| k * k);
        for seed in 0..100 {
            let u = random_field(&g, 100 + seed);
            let kin = kinetic_form(&u, m).unwrap();
            let nonrel = quadratic_form(&u, &k2).unwrap() / (2.0 * m);
            assert!(kin <= nonrel * (1.0 + 1e-14));
        }
    }

    #[test]
    fn grid_mismatch_rejected() {
        let g1 = make_grid(8, 1.0).unwrap();
        let g2 = make_grid(8, 2.0).unwrap();
        let u = random_field(&g1, 0);
        let s = MultiplierSpectrum::new(&g2, MultiplierKind::Massless).unwrap();
        assert!(matches!(quadratic_form(&u, &s), Err(Error::GridMismatch)));
        assert!(matches!(apply_multiplier(&u, &s), Err(Error::GridMismatch)));
        let v = random_field(&g2, 1);
        assert!(matches!(u.inner(&v), Err(Error::GridMismatch)));
    }

    #[test]
    fn dilation_down_doubles_frequency() {
        let g = make_grid(16, 8.0).unwrap();
        let u = ComplexField::plane_wave(&g, [1, 2, -3]);
        let d = dilate_pow2(&u, DilationDirection::Down).unwrap();
        assert_eq!(d.grid().n(), 8);
        assert!((d.grid().box_length() - 4.0).abs() < 1e-15);
        assert!((d.norm() - 1.0).abs() < 1e-12);
        let expected = ComplexField::plane_wave(d.grid(), [1, 2, -3]);
        let ov = expected.inner(&d).unwrap();
        assert!((ov.norm() - 1.0).abs() < 1e-12);
        // the physical wavenumber doubled
        let s = MultiplierSpectrum::new(d.grid(), MultiplierKind::Massless).unwrap();
        let k_old = quadratic_form(&u, &MultiplierSpectrum::new(&g, MultiplierKind::Massless).unwrap()).unwrap();
        assert!((quadratic_form(&d, &s).unwrap() - 2.0 * k_old).abs() < 1e-12);
    }

    #[test]
    fn dilation_down_rejects_broadband_field() {
        let g = make_grid(16, 2.0).unwrap();
        let u = random_field(&g, 5);
        assert!(matches!(
            dilate_pow2(&u, DilationDirection::Down),
            Err(Error::BandLimit { .. })
        ));
    }

    #[test]
    fn dilation_up_down_round_trip() {
        let g = make_grid(8, 3.0).unwrap();
        let u = random_field(&g, 11);
        let up = dilate_pow2(&u, DilationDirection::Up).unwrap();
        assert!((up.norm() - u.norm()).abs() <= 1e-12 * u.norm());
        let back = dilate_pow2(&up, DilationDirection::Down).unwrap();
        for (a, b) in back.values().iter().zip(u.values()) {
            assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn massless_form_homogeneous_under_dilation() {
        let g = make_grid(16, 12.0).unwrap();
        let u = gaussian(&g, 1.0);
        let s = MultiplierSpectrum::new(&g, MultiplierKind::Massless).unwrap();
        let q = quadratic_form(&u, &s).unwrap();
        let up = dilate_pow2(&u, DilationDirection::Up).unwrap();
        let s_up = MultiplierSpectrum::new(up.grid(), MultiplierKind::Massless).unwrap();
        assert!((quadratic_form(&up, &s_up).unwrap() - 0.5 * q).abs() <= 1e-10 * q);
        let db = dilate_box(&u, 3.0).unwrap();
        let s_db = MultiplierSpectrum::new(db.grid(), MultiplierKind::Massless).unwrap();
        assert!((quadratic_form(&db, &s_db).unwrap() - 3.0 * q).abs() <= 1e-10 * q);
        assert!((db.norm() - u.norm()).abs() <= 1e-12);
    }

    #[test]
    fn lp_integral_scales_linearly_under_dilation() {
        let g = make_grid(24, 12.0).unwrap();
        let u = gaussian(&g, 1.1);
        let lp = |f: &ComplexField| -> f64 {
            f.values().iter().map(|v| v.norm_sqr().powf(4.0 / 3.0)).sum::<f64>()
                * f.grid().cell_volume()
        };
        let base = lp(&u);
        let up = dilate_pow2(&u, DilationDirection::Up).unwrap();
        assert!((lp(&up) - 0.5 * base).abs() <= 1e-8 * base);
    }

    #[test]
    fn translation_is_unitary_and_moves_center() {
        let g = make_grid(16, 10.0).unwrap();
        let u = gaussian(&g, 1.0);
        let t = u.translated([2.5, 0.0, 0.0]);
        assert!((t.norm() - u.norm()).abs() < 1e-12);
        let idx = g.flatten(4, 0, 0);
        assert!((g.position(idx)[0] - 2.5).abs() < 1e-12);
        assert!((t.values()[idx] - u.values()[0]).norm() < 1e-12);
    }

    #[test]
    fn pad_box_keeps_values_and_spacing() {
        let g = make_grid(8, 4.0).unwrap();
        let u = random_field(&g, 3);
        let p = pad_box(&u).unwrap();
        assert_eq!(p.grid().n(), 16);
        assert!((p.grid().spacing() - g.spacing()).abs() < 1e-15);
        assert!((p.norm() - u.norm()).abs() <= 1e-12 * u.norm());
        // node at coordinate -h lands at -h in the larger box
        let src = u.values()[g.flatten(7, 0, 1)];
        assert_eq!(p.values()[p.grid().flatten(15, 0, 1)], src);
    }

    #[test]
    fn band_excludes_the_mean_and_caps_at_nyquist() {
        let g = make_grid(8, 5.0).unwrap();
        let full = SpectralBand::new(&g, 1.0);
        assert!(!full.contains(0));
        assert!((1..g.len()).filter(|&i| g.k_norm()[i] <= g.k_nyquist()).all(|i| full.contains(i)));
        let u = random_field(&g, 8);
        let proj = full.project(&u);
        assert!(proj.mean().norm() < 1e-14);
        assert!((full.projected_norm(&u) - proj.norm()).abs() < 1e-12);
        let half = SpectralBand::new(&g, 0.5);
        assert!(half.projected_norm(&u) < full.projected_norm(&u));
    }
}
