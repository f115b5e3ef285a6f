//! Generalized energy eigenstates of the linear gravitational potential and
//! the spectral decomposition machinery built on them.
//!
//! A particle of mass m in the potential U(x) = −mgx (x increasing downward)
//! has a purely continuous spectrum. For every energy E there is one bounded
//! solution
//!
//! ψ_E(x) = 𝒩 · Ai(−(x + E/mg)/l),   l = (ħ²/2gm²)^{1/3},  𝒩 = 1/(l√(mg)),
//!
//! which decays above the classical turning point x_t = −E/mg and oscillates
//! below it. These states are δ-normalized, ⟨ψ_E|ψ_E'⟩ = δ(E − E'), and form
//! a complete basis: any field φ(x) is represented by its spectrum
//! f(E) = ⟨ψ_E|φ⟩ with ∫dE |f(E)|² = ‖φ‖².
//!
//! All quantities are SI; the Airy argument is dimensionless by
//! construction, so no internal unit rescaling is needed.

use crate::airy::{self, AiryError};
use crate::physconfig::{AtomSpecies, PhysicalConstants, TrapConfig};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

/// Default half-span of the energy grid in units of the overlap width mgσ.
pub const ENERGY_SPAN_WIDTHS: f64 = 8.0;
/// Default number of energy-grid points.
pub const ENERGY_GRID_POINTS: usize = 4096;
/// Minimum samples per local Airy oscillation period before quadrature is
/// rejected as unconverged.
pub const MIN_SAMPLES_PER_PERIOD: f64 = 4.0;
/// |φ| threshold (relative to max) below which samples are ignored by the
/// oscillation-resolution guard.
const NEGLIGIBLE_AMPLITUDE: f64 = 1e-8;
/// Spectrum boundary amplitudes above this fraction of the peak indicate the
/// energy grid truncates the spectrum.
const TRUNCATION_RATIO: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error(
        "quadrature unconverged: local Airy period {period:.3e} m < {MIN_SAMPLES_PER_PERIOD} \
         grid spacings (dx = {dx:.3e} m) where the field is non-negligible"
    )]
    UnconvergedQuadrature { period: f64, dx: f64 },
    #[error(
        "energy grid truncates the spectrum: boundary amplitude is {ratio:.2e} of the peak \
         (limit {TRUNCATION_RATIO:.0e}); widen the grid"
    )]
    TruncatedSpectrum { ratio: f64 },
    #[error("energy grid must be strictly increasing and uniform, got spacing {got:.3e} vs {expected:.3e} at index {index}")]
    NonUniformGrid { index: usize, got: f64, expected: f64 },
    #[error("field grids do not match: {0}")]
    GridMismatch(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error(transparent)]
    Airy(#[from] AiryError),
}

/// One δ-normalized eigenstate of the linear potential at energy `energy_e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedEigenstate {
    /// Eigenenergy E (J).
    pub energy_e: f64,
    /// Gravitational length scale l = (ħ²/2gm²)^{1/3} (m).
    pub length_l: f64,
    /// Potential slope mg (N).
    pub slope_mg: f64,
}

impl GeneralizedEigenstate {
    pub fn new(energy_e: f64, species: &AtomSpecies, constants: &PhysicalConstants) -> Self {
        let m = species.mass;
        let slope_mg = m * constants.g_earth;
        let length_l = (constants.hbar * constants.hbar / (2.0 * constants.g_earth * m * m))
            .powf(1.0 / 3.0);
        Self {
            energy_e,
            length_l,
            slope_mg,
        }
    }

    /// Normalization 𝒩 = 1/(l√(mg)), units (energy·length)^{−1/2}.
    pub fn normalization_n(&self) -> f64 {
        1.0 / (self.length_l * self.slope_mg.sqrt())
    }

    /// Classical turning point x_t = −E/mg; the state oscillates for
    /// x > x_t and decays for x < x_t.
    pub fn turning_point(&self) -> f64 {
        -self.energy_e / self.slope_mg
    }

    /// ψ_E(x) = 𝒩·Ai(−(x + E/mg)/l).
    pub fn eval(&self, x: f64) -> Result<f64, AiryError> {
        let arg = -(x + self.energy_e / self.slope_mg) / self.length_l;
        Ok(self.normalization_n() * airy::airy_ai(arg)?)
    }

    /// Local oscillation period (m) in the classically allowed region, or
    /// `None` above the turning point. From the asymptotic phase
    /// ζ = (2/3)z^{3/2}: period = πl/√z with z = (x − x_t)/l.
    pub fn local_period(&self, x: f64) -> Option<f64> {
        let z = (x - self.turning_point()) / self.length_l;
        if z > 0.0 {
            Some(std::f64::consts::PI * self.length_l / z.sqrt())
        } else {
            None
        }
    }
}

/// Spectrum f(E) (or c_E) on a uniform energy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySpectrum {
    /// Strictly increasing, uniformly spaced energies (J).
    pub energies: Vec<f64>,
    /// Complex amplitude per grid point, units energy^{−1/2}.
    pub amplitudes: Vec<Complex64>,
    /// Grid spacing ΔE (J).
    pub grid_spacing: f64,
}

impl EnergySpectrum {
    pub fn new(energies: Vec<f64>, amplitudes: Vec<Complex64>) -> Result<Self, BasisError> {
        if energies.len() < 2 || energies.len() != amplitudes.len() {
            return Err(BasisError::InvalidField(format!(
                "spectrum needs >= 2 matched points, got {} energies / {} amplitudes",
                energies.len(),
                amplitudes.len()
            )));
        }
        let spacing = energies[1] - energies[0];
        check_uniform(&energies, spacing)?;
        Ok(Self {
            energies,
            amplitudes,
            grid_spacing: spacing,
        })
    }

    /// ‖f‖² = Σ|f(E)|²·ΔE with trapezoid end weights.
    pub fn norm_sq(&self) -> f64 {
        trapezoid_weighted_sum(&self.amplitudes, self.grid_spacing, |a| a.norm_sqr())
    }
}

fn check_uniform(energies: &[f64], spacing: f64) -> Result<(), BasisError> {
    if !(spacing > 0.0) {
        return Err(BasisError::NonUniformGrid {
            index: 1,
            got: spacing,
            expected: f64::NAN,
        });
    }
    for (i, w) in energies.windows(2).enumerate() {
        let d = w[1] - w[0];
        if (d - spacing).abs() > 1e-9 * spacing {
            return Err(BasisError::NonUniformGrid {
                index: i + 1,
                got: d,
                expected: spacing,
            });
        }
    }
    Ok(())
}

fn trapezoid_weighted_sum<T, F: Fn(&T) -> f64>(vals: &[T], h: f64, f: F) -> f64 {
    let n = vals.len();
    let mut s = 0.0;
    for (i, v) in vals.iter().enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        s += w * f(v);
    }
    s * h
}

/// A complex field sampled on a uniform spatial grid at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub x_min: f64,
    pub x_max: f64,
    pub samples: Vec<Complex64>,
    /// Time the field refers to (s).
    pub timestamp: f64,
}

impl ComplexField {
    pub fn new(
        x_min: f64,
        x_max: f64,
        samples: Vec<Complex64>,
        timestamp: f64,
    ) -> Result<Self, BasisError> {
        if !(x_max > x_min) {
            return Err(BasisError::InvalidField(format!(
                "x_max ({x_max}) must exceed x_min ({x_min})"
            )));
        }
        if samples.len() < 2 {
            return Err(BasisError::InvalidField(format!(
                "need >= 2 samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(BasisError::InvalidField("non-finite sample".into()));
        }
        Ok(Self {
            x_min,
            x_max,
            samples,
            timestamp,
        })
    }

    /// Grid spacing; the samples span [x_min, x_max] inclusive.
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.samples.len() - 1) as f64
    }

    pub fn x_at(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    /// L² norm squared by the trapezoid rule.
    pub fn norm_sq(&self) -> f64 {
        trapezoid_weighted_sum(&self.samples, self.dx(), |a| a.norm_sqr())
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    /// Relative L² distance ‖a − b‖/‖a‖.
    pub fn relative_l2_distance(&self, other: &Self) -> Result<f64, BasisError> {
        self.check_same_grid(other)?;
        let dx = self.dx();
        let diff: Vec<Complex64> = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a - b)
            .collect();
        let d2 = trapezoid_weighted_sum(&diff, dx, |a| a.norm_sqr());
        Ok((d2 / self.norm_sq()).sqrt())
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<(), BasisError> {
        if self.samples.len() != other.samples.len()
            || (self.x_min - other.x_min).abs() > 1e-12 * self.dx()
            || (self.x_max - other.x_max).abs() > 1e-12 * self.dx()
        {
            return Err(BasisError::GridMismatch(format!(
                "[{:.3e}, {:.3e}] x {} vs [{:.3e}, {:.3e}] x {}",
                self.x_min,
                self.x_max,
                self.samples.len(),
                other.x_min,
                other.x_max,
                other.samples.len()
            )));
        }
        Ok(())
    }
}

/// Reject quadrature when the eigenstate oscillation is unresolved anywhere
/// the field is above `NEGLIGIBLE_AMPLITUDE` of its maximum.
fn guard_resolution(phi: &ComplexField, state: &GeneralizedEigenstate) -> Result<(), BasisError> {
    let dx = phi.dx();
    let threshold = NEGLIGIBLE_AMPLITUDE * phi.max_abs();
    // The period shrinks monotonically with distance below the turning
    // point, so only the deepest non-negligible sample needs checking.
    let mut deepest: Option<f64> = None;
    for (i, s) in phi.samples.iter().enumerate() {
        if s.norm() > threshold {
            let x = phi.x_at(i);
            deepest = Some(deepest.map_or(x, |d: f64| d.max(x)));
        }
    }
    if let Some(x) = deepest {
        if let Some(period) = state.local_period(x) {
            if period < MIN_SAMPLES_PER_PERIOD * dx {
                return Err(BasisError::UnconvergedQuadrature { period, dx });
            }
        }
    }
    Ok(())
}

/// ⟨ψ_E|φ⟩ = ∫ψ_E(x)φ(x)dx by the trapezoid rule (ψ_E is real). With the
/// oscillation resolved and φ decaying at both grid ends the trapezoid rule
/// is superalgebraically accurate (Euler–Maclaurin boundary terms vanish).
pub fn overlap_numeric(
    phi: &ComplexField,
    state: &GeneralizedEigenstate,
) -> Result<Complex64, BasisError> {
    guard_resolution(phi, state)?;
    let dx = phi.dx();
    let n = phi.samples.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, s) in phi.samples.iter().enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        acc += w * state.eval(phi.x_at(i))? * s;
    }
    Ok(acc * dx)
}

/// Closed-form Gaussian approximation to the overlap of ψ_E with a Gaussian
/// of width σ centered at x₀:
///
/// ⟨ψ_E|φ₀⟩ ≈ [π(mgσ)²]^{−1/4} exp[−(E + mgx₀)²/2(mgσ)²].
///
/// Valid for σ ≫ l; returns a warning string alongside the value when
/// σ < 5l.
pub fn overlap_gaussian_approx(
    sigma: f64,
    x0: f64,
    energy: f64,
    species: &AtomSpecies,
    constants: &PhysicalConstants,
) -> (f64, Option<String>) {
    let mg = species.mass * constants.g_earth;
    let width = mg * sigma;
    let d = energy + mg * x0;
    let value = (std::f64::consts::PI * width * width).powf(-0.25)
        * (-d * d / (2.0 * width * width)).exp();
    let l = GeneralizedEigenstate::new(0.0, species, constants).length_l;
    let warning = (sigma < 5.0 * l).then(|| {
        format!(
            "Gaussian overlap approximation degraded: sigma = {sigma:.3e} m < 5 l = {:.3e} m",
            5.0 * l
        )
    });
    (value, warning)
}

/// Uniform energy grid of `n` points spanning ±`ENERGY_SPAN_WIDTHS`·mgσ₀
/// around the overlap peak −mg·x₀ of the trap ground state.
pub fn default_energy_grid(
    species: &AtomSpecies,
    trap: &TrapConfig,
    constants: &PhysicalConstants,
    n: usize,
) -> Vec<f64> {
    let mg = species.mass * constants.g_earth;
    let center = -mg * trap.sag(constants);
    let half_span = ENERGY_SPAN_WIDTHS * mg * trap.ground_width(species, constants);
    (0..n)
        .map(|i| center - half_span + 2.0 * half_span * i as f64 / (n - 1) as f64)
        .collect()
}

/// f(E) = ⟨ψ_E|φ⟩ on the given energy grid.
pub fn spectral_transform(
    phi: &ComplexField,
    energies: &[f64],
    species: &AtomSpecies,
    constants: &PhysicalConstants,
) -> Result<EnergySpectrum, BasisError> {
    if energies.len() < 2 {
        return Err(BasisError::InvalidField(
            "energy grid needs >= 2 points".into(),
        ));
    }
    let amplitudes: Vec<Complex64> = energies
        .par_iter()
        .map(|&e| overlap_numeric(phi, &GeneralizedEigenstate::new(e, species, constants)))
        .collect::<Result<_, _>>()?;
    let peak = amplitudes.iter().map(|a| a.norm()).fold(0.0, f64::max);
    if peak > 0.0 {
        let boundary = amplitudes[0]
            .norm()
            .max(amplitudes[amplitudes.len() - 1].norm());
        let ratio = boundary / peak;
        if ratio > TRUNCATION_RATIO {
            return Err(BasisError::TruncatedSpectrum { ratio });
        }
    }
    EnergySpectrum::new(energies.to_vec(), amplitudes)
}

/// φ(x) = ∫dE f(E)ψ_E(x), reconstructed on a uniform x grid of `n` points.
pub fn inverse_transform(
    spectrum: &EnergySpectrum,
    x_min: f64,
    x_max: f64,
    n: usize,
    timestamp: f64,
    species: &AtomSpecies,
    constants: &PhysicalConstants,
) -> Result<ComplexField, BasisError> {
    let states: Vec<GeneralizedEigenstate> = spectrum
        .energies
        .iter()
        .map(|&e| GeneralizedEigenstate::new(e, species, constants))
        .collect();
    let de = spectrum.grid_spacing;
    let ne = states.len();
    let samples: Vec<Complex64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = x_min + (x_max - x_min) * i as f64 / (n - 1) as f64;
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, (state, amp)) in states.iter().zip(&spectrum.amplitudes).enumerate() {
                let w = if j == 0 || j == ne - 1 { 0.5 } else { 1.0 };
                acc += w * state.eval(x)? * amp;
            }
            Ok(acc * de)
        })
        .collect::<Result<_, BasisError>>()?;
    ComplexField::new(x_min, x_max, samples, timestamp)
}
