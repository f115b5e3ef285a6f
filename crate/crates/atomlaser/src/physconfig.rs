//! Physical constants, experiment parameters, natural units, and derived
//! quantities shared by both engines.
//!
//! All public interfaces are SI. Internally the engines convert to the
//! natural units of the linear gravitational potential (length `l`, energy
//! `m g l`, time `hbar / m g l`) to keep Airy arguments in a sane exponent
//! range; see [`NaturalUnits`].

use serde::Deserialize;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysError {
    #[error("invalid parameter {name}: {reason}")]
    Invalid { name: &'static str, reason: String },
    #[error("F = 0 supports no M_F = ±1 sublevel; no rf transition exists")]
    NoSublevel,
}

fn require_positive(name: &'static str, v: f64) -> Result<(), PhysError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(PhysError::Invalid {
            name,
            reason: format!("must be strictly positive and finite, got {v}"),
        })
    }
}

/// Fundamental constants in SI units.
///
/// `bohr_radius` defaults to 5.5e-11 m, the value quoted with the reference
/// parameter set this crate reproduces (CODATA gives 5.29e-11 m; keeping the
/// quoted value makes the reference interaction strength come out exactly).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConstants {
    /// Reduced Planck constant, J·s.
    pub hbar: f64,
    /// Gravitational acceleration, m/s².
    pub g_earth: f64,
    /// Bohr magneton, J/T.
    pub bohr_magneton: f64,
    /// Atomic mass unit, kg.
    pub atomic_mass_unit: f64,
    /// Bohr radius, m.
    pub bohr_radius: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            hbar: 1.054_571_817e-34,
            g_earth: 9.81,
            bohr_magneton: 9.274_010_078_3e-24,
            atomic_mass_unit: 1.660_539_066_60e-27,
            bohr_radius: 5.5e-11,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<(), PhysError> {
        require_positive("hbar", self.hbar)?;
        require_positive("g_earth", self.g_earth)?;
        require_positive("bohr_magneton", self.bohr_magneton)?;
        require_positive("atomic_mass_unit", self.atomic_mass_unit)?;
        require_positive("bohr_radius", self.bohr_radius)
    }

    /// Planck constant h = 2π ħ, J·s.
    pub fn h(&self) -> f64 {
        2.0 * PI * self.hbar
    }
}

/// Atomic species: mass and hyperfine structure of the relevant manifold.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpecies {
    /// Atomic mass, kg.
    pub mass: f64,
    /// Total angular momentum quantum number of the manifold.
    pub f_total: u32,
    /// Landé factor g_F (signed; its sign selects which M_F is trapped).
    pub g_f: f64,
    /// s-wave scattering length, m.
    pub scattering_length: f64,
}

impl AtomSpecies {
    /// ⁸⁷Rb in its F = 1 hyperfine ground state with the reference
    /// scattering length a = 103 a₀.
    pub fn rb87(constants: &PhysicalConstants) -> Self {
        Self {
            mass: 86.909_180_527 * constants.atomic_mass_unit,
            f_total: 1,
            g_f: -0.5,
            scattering_length: 103.0 * constants.bohr_radius,
        }
    }

    pub fn validate(&self) -> Result<(), PhysError> {
        require_positive("mass", self.mass)?;
        if self.f_total < 1 {
            return Err(PhysError::Invalid {
                name: "f_total",
                reason: "F >= 1 required".into(),
            });
        }
        if self.g_f == 0.0 || !self.g_f.is_finite() {
            return Err(PhysError::Invalid {
                name: "g_f",
                reason: "g_F must be nonzero and finite".into(),
            });
        }
        if !self.scattering_length.is_finite() || self.scattering_length < 0.0 {
            return Err(PhysError::Invalid {
                name: "scattering_length",
                reason: "must be finite and >= 0".into(),
            });
        }
        Ok(())
    }
}

/// Magnetic trap parameters (angular frequencies, rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapConfig {
    pub omega_x: f64,
    pub omega_y: f64,
    pub omega_z: f64,
    /// Zeeman splitting from the bias field, as an angular frequency.
    pub omega_bias: f64,
}

impl TrapConfig {
    /// Reference trap: ω_{x,z}/2π = 160 Hz, ω_y/2π = 6.7 Hz,
    /// ω_bias/2π = 900 kHz.
    pub fn reference() -> Self {
        Self {
            omega_x: 2.0 * PI * 160.0,
            omega_y: 2.0 * PI * 6.7,
            omega_z: 2.0 * PI * 160.0,
            omega_bias: 2.0 * PI * 900e3,
        }
    }

    pub fn validate(&self) -> Result<(), PhysError> {
        require_positive("omega_x", self.omega_x)?;
        require_positive("omega_y", self.omega_y)?;
        require_positive("omega_z", self.omega_z)?;
        require_positive("omega_bias", self.omega_bias)?;
        if self.omega_bias < 10.0 * self.omega_x {
            return Err(PhysError::Invalid {
                name: "omega_bias",
                reason: "weak-field Zeeman regime requires omega_bias >> omega_x".into(),
            });
        }
        Ok(())
    }

    /// Gravitational sag of the trap minimum along the fall axis,
    /// x₀ = g/ω_x².
    pub fn sag(&self, constants: &PhysicalConstants) -> f64 {
        constants.g_earth / (self.omega_x * self.omega_x)
    }

    /// Harmonic-oscillator ground-state width σ₀ = sqrt(ħ/mω_x) along the
    /// fall axis.
    pub fn ground_width(&self, species: &AtomSpecies, constants: &PhysicalConstants) -> f64 {
        (constants.hbar / (species.mass * self.omega_x)).sqrt()
    }
}

/// Pulse envelope of one rf tone. Dimensionless, in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum Envelope {
    /// Unit box: 1 on [start, start + duration), 0 elsewhere.
    Box { start: f64, duration: f64 },
}

impl Envelope {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Envelope::Box { start, duration } => {
                if t >= start && t < start + duration {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn start(&self) -> f64 {
        match *self {
            Envelope::Box { start, .. } => start,
        }
    }

    pub fn end(&self) -> f64 {
        match *self {
            Envelope::Box { start, duration } => start + duration,
        }
    }

    pub fn validate(&self) -> Result<(), PhysError> {
        match *self {
            Envelope::Box { start, duration } => {
                if !start.is_finite() {
                    return Err(PhysError::Invalid {
                        name: "envelope.start",
                        reason: "must be finite".into(),
                    });
                }
                require_positive("envelope.duration", duration)
            }
        }
    }
}

/// One rf drive tone.
///
/// `peak_rabi` is the on-resonance two-level Rabi frequency of the
/// trapped↔untrapped transition for a circularly polarized drive; the chain
/// from the field amplitude B₀ through the magnetic moment and the F±
/// matrix element is collapsed into this single parameter, so the
/// angular-momentum factor √(F(F+1)) is already included in the quoted
/// value. Linear polarization is expressed through `polarization_factor`
/// (1/√2), which suppresses the circular component actually driving the
/// transition.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfComponent {
    /// Peak outcoupling Rabi frequency before polarization suppression, rad/s.
    pub peak_rabi: f64,
    /// Carrier angular frequency, rad/s.
    pub omega_rf: f64,
    /// Drive phase, rad.
    pub theta: f64,
    /// In (0, 1]: 1 for pure circular, 1/√2 for linear polarization.
    pub polarization_factor: f64,
    pub envelope: Envelope,
}

impl RfComponent {
    /// Reference tone: |Ω|/2π = 50 Hz, linear polarization, 5 ms box pulse.
    pub fn reference(omega_rf: f64, theta: f64) -> Self {
        Self {
            peak_rabi: 2.0 * PI * 50.0,
            omega_rf,
            theta,
            polarization_factor: std::f64::consts::FRAC_1_SQRT_2,
            envelope: Envelope::Box {
                start: 0.0,
                duration: 5e-3,
            },
        }
    }

    pub fn validate(&self) -> Result<(), PhysError> {
        require_positive("peak_rabi", self.peak_rabi)?;
        require_positive("omega_rf", self.omega_rf)?;
        if !self.theta.is_finite() {
            return Err(PhysError::Invalid {
                name: "theta",
                reason: "must be finite".into(),
            });
        }
        if !(self.polarization_factor > 0.0 && self.polarization_factor <= 1.0) {
            return Err(PhysError::Invalid {
                name: "polarization_factor",
                reason: format!("must lie in (0, 1], got {}", self.polarization_factor),
            });
        }
        self.envelope.validate()
    }
}

/// Natural units of the linear gravitational potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaturalUnits {
    /// Characteristic length l = (ħ²/2gm²)^{1/3}, m.
    pub length_l: f64,
    /// Energy unit m·g·l, J.
    pub energy_unit: f64,
    /// Time unit ħ/(m·g·l), s.
    pub time_unit: f64,
}

impl NaturalUnits {
    pub fn to_natural_length(&self, x_si: f64) -> f64 {
        x_si / self.length_l
    }
    pub fn from_natural_length(&self, x_nat: f64) -> f64 {
        x_nat * self.length_l
    }
    pub fn to_natural_energy(&self, e_si: f64) -> f64 {
        e_si / self.energy_unit
    }
    pub fn from_natural_energy(&self, e_nat: f64) -> f64 {
        e_nat * self.energy_unit
    }
    pub fn to_natural_time(&self, t_si: f64) -> f64 {
        t_si / self.time_unit
    }
    pub fn from_natural_time(&self, t_nat: f64) -> f64 {
        t_nat * self.time_unit
    }
}

/// Natural units from the species mass and the gravitational slope.
pub fn derive_natural_units(species: &AtomSpecies, constants: &PhysicalConstants) -> NaturalUnits {
    let m = species.mass;
    let g = constants.g_earth;
    let hbar = constants.hbar;
    let length_l = (hbar * hbar / (2.0 * g * m * m)).cbrt();
    let energy_unit = m * g * length_l;
    let time_unit = hbar / energy_unit;
    NaturalUnits {
        length_l,
        energy_unit,
        time_unit,
    }
}

/// Effective coupling rate (rad/s) of one rf tone on the
/// |F, M_F = sgn(g_F)⟩ → |F, M_F = 0⟩ transition.
///
/// Convention: `peak_rabi` already includes the √(F(F+1)) matrix element
/// for this transition (the quoted Rabi frequency is what a circular drive
/// realizes), so the only remaining factor is the polarization suppression.
pub fn effective_coupling(rf: &RfComponent, species: &AtomSpecies) -> Result<f64, PhysError> {
    if species.f_total == 0 {
        return Err(PhysError::NoSublevel);
    }
    Ok(rf.peak_rabi * rf.polarization_factor)
}

/// Non-interacting ground-state energy of the trapped sublevel:
/// E₀ = ħω_bias + ħω_x/2 − ½ m g x₀ (displaced-oscillator ground state).
pub fn trapped_ground_energy(
    trap: &TrapConfig,
    species: &AtomSpecies,
    constants: &PhysicalConstants,
) -> f64 {
    let x0 = trap.sag(constants);
    constants.hbar * trap.omega_bias + 0.5 * constants.hbar * trap.omega_x
        - 0.5 * species.mass * constants.g_earth * x0
}

/// rf frequency (rad/s) maximizing the overlap with the non-interacting
/// Gaussian ground state: ω_res = ω_bias + ω_x/2 + m g x₀ / 2ħ.
pub fn predict_resonance(
    trap: &TrapConfig,
    species: &AtomSpecies,
    constants: &PhysicalConstants,
) -> f64 {
    let x0 = trap.sag(constants);
    trap.omega_bias
        + 0.5 * trap.omega_x
        + species.mass * constants.g_earth * x0 / (2.0 * constants.hbar)
}
