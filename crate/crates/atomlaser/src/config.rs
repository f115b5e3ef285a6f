//! TOML run configuration.
//!
//! Sections mirror the physical types: `[species]`, `[trap]`,
//! `[constants]`, `[rf.N]` (N = 1, 2, …), plus `[grid]`, `[evolution]`,
//! `[run]` and an `[[output]]` list. Every key matches the corresponding
//! field name; all values are SI (angular frequencies in rad/s). Omitted
//! sections fall back to the reference rubidium-87 parameter set.
//!
//! Unknown keys are rejected so typos fail loudly instead of silently
//! running defaults.

use crate::gpe::{Absorber, Grid1D};
use crate::physconfig::{
    AtomSpecies, Envelope, PhysicalConstants, RfComponent, TrapConfig,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config invalid: {key}: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Analytic,
    Numeric,
    Both,
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Engine::Analytic => write!(f, "analytic"),
            Engine::Numeric => write!(f, "numeric"),
            Engine::Both => write!(f, "both"),
        }
    }
}

impl std::str::FromStr for Engine {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "analytic" => Ok(Engine::Analytic),
            "numeric" => Ok(Engine::Numeric),
            "both" => Ok(Engine::Both),
            other => Err(invalid(
                "run.engine",
                format!("expected analytic|numeric|both, got {other:?}"),
            )),
        }
    }
}

/// One requested artifact of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutputRequest {
    /// Outcoupled density profile at a time (s).
    Profile { time: f64 },
    /// Detector time trace at a position (m).
    Trace { x: f64 },
    /// Visibility report at a position over (window_start, window_end) s.
    Visibility {
        x: f64,
        window_start: f64,
        window_end: f64,
    },
    /// Energy spectrum |c_E|² of the outcoupled beam at a time (s).
    Spectrum { time: f64 },
    /// Ground-state ↔ continuum overlap amplitude vs rf frequency (Hz).
    OverlapSweep {
        f_min: f64,
        f_max: f64,
        points: usize,
    },
}

impl OutputRequest {
    /// Stable file stem for the emitted CSV.
    pub fn file_stem(&self, index: usize) -> String {
        match self {
            OutputRequest::Profile { .. } => format!("{index:02}_profile"),
            OutputRequest::Trace { .. } => format!("{index:02}_trace"),
            OutputRequest::Visibility { .. } => format!("{index:02}_visibility"),
            OutputRequest::Spectrum { .. } => format!("{index:02}_spectrum"),
            OutputRequest::OverlapSweep { .. } => format!("{index:02}_overlap_sweep"),
        }
    }
}

/// Numerical-evolution controls shared by both engines (the analytic
/// engine uses `t_final` and `snapshot_interval`; the split-step engine
/// uses all of them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    /// Rotating-frame carrier (rad/s); default = mean rf frequency, or
    /// ω_bias when no tones are present.
    #[serde(default)]
    pub rotating_frame_omega: Option<f64>,
    /// Atom number for the mean-field coefficient; 0 = non-interacting.
    #[serde(default)]
    pub n_atoms: f64,
    #[serde(default = "default_snapshot")]
    pub snapshot_interval: f64,
    #[serde(default)]
    pub absorber_width: Option<f64>,
    #[serde(default)]
    pub absorber_strength: Option<f64>,
}

fn default_dt() -> f64 {
    crate::gpe::DEFAULT_DT
}
fn default_t_final() -> f64 {
    8e-3
}
fn default_snapshot() -> f64 {
    crate::gpe::DEFAULT_SNAPSHOT_INTERVAL
}

impl Default for EvolutionSection {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            t_final: default_t_final(),
            rotating_frame_omega: None,
            n_atoms: 0.0,
            snapshot_interval: default_snapshot(),
            absorber_width: None,
            absorber_strength: None,
        }
    }
}

impl EvolutionSection {
    pub fn absorber(&self) -> Option<Absorber> {
        match (self.absorber_width, self.absorber_strength) {
            (Some(width), Some(strength)) => Some(Absorber { width, strength }),
            _ => None,
        }
    }
}

/// Fully resolved, validated run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub engine: Engine,
    pub species: AtomSpecies,
    pub trap: TrapConfig,
    pub constants: PhysicalConstants,
    pub rf: Vec<RfComponent>,
    pub grid: Grid1D,
    pub evolution: EvolutionSection,
    pub outputs: Vec<OutputRequest>,
}

impl RunSpec {
    /// Rotating-frame carrier: explicit value, else the mean rf frequency,
    /// else the bias frequency.
    pub fn rotating_frame_omega(&self) -> f64 {
        self.evolution.rotating_frame_omega.unwrap_or_else(|| {
            if self.rf.is_empty() {
                self.trap.omega_bias
            } else {
                self.rf.iter().map(|c| c.omega_rf).sum::<f64>() / self.rf.len() as f64
            }
        })
    }

    /// g₁D for the configured atom number.
    pub fn g1d(&self) -> f64 {
        crate::gpe::g1d_coefficient(
            &self.species,
            self.trap.omega_y,
            self.trap.omega_z,
            self.evolution.n_atoms,
            &self.constants,
        )
    }

    /// Canonical text form; hashing this pins a run for the manifest.
    pub fn canonical_string(&self) -> String {
        let raw = RawConfig::from(self);
        toml::to_string(&raw).expect("resolved config serializes")
    }
}

// ---------------------------------------------------------------------
// raw (serde) layer

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpeciesSection {
    mass: Option<f64>,
    #[serde(rename = "F")]
    f: Option<u32>,
    g_f: Option<f64>,
    scattering_length: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrapSection {
    omega_x: Option<f64>,
    omega_y: Option<f64>,
    omega_z: Option<f64>,
    omega_bias: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantsSection {
    hbar: Option<f64>,
    g_earth: Option<f64>,
    bohr_magneton: Option<f64>,
    atomic_mass_unit: Option<f64>,
    bohr_radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvelopeSection {
    shape: String,
    #[serde(default)]
    start: f64,
    duration: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RfSection {
    peak_rabi: f64,
    omega_rf: f64,
    #[serde(default)]
    theta: f64,
    #[serde(default = "default_polarization")]
    polarization_factor: f64,
    envelope: EnvelopeSection,
}

fn default_polarization() -> f64 {
    std::f64::consts::FRAC_1_SQRT_2
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    x_min: Option<f64>,
    x_max: Option<f64>,
    n_points: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    engine: Option<Engine>,
}

/// One-axis parameter sweep: one run per value, with a summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Dotted parameter path, e.g. `rf.1.omega_rf` or `evolution.n_atoms`.
    pub axis: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    species: Option<SpeciesSection>,
    #[serde(default)]
    trap: Option<TrapSection>,
    #[serde(default)]
    constants: Option<ConstantsSection>,
    #[serde(default)]
    rf: Option<BTreeMap<String, RfSection>>,
    #[serde(default)]
    grid: Option<GridSection>,
    #[serde(default)]
    evolution: Option<EvolutionSection>,
    #[serde(default)]
    run: Option<RunSection>,
    #[serde(default)]
    output: Option<Vec<OutputRequest>>,
    #[serde(default)]
    sweep: Option<SweepSection>,
}

impl From<&RunSpec> for RawConfig {
    fn from(spec: &RunSpec) -> Self {
        let rf = spec
            .rf
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (start, duration) = match c.envelope {
                    Envelope::Box { start, duration } => (start, duration),
                };
                (
                    format!("{}", i + 1),
                    RfSection {
                        peak_rabi: c.peak_rabi,
                        omega_rf: c.omega_rf,
                        theta: c.theta,
                        polarization_factor: c.polarization_factor,
                        envelope: EnvelopeSection {
                            shape: "box".into(),
                            start,
                            duration,
                        },
                    },
                )
            })
            .collect();
        RawConfig {
            species: Some(SpeciesSection {
                mass: Some(spec.species.mass),
                f: Some(spec.species.f_total),
                g_f: Some(spec.species.g_f),
                scattering_length: Some(spec.species.scattering_length),
            }),
            trap: Some(TrapSection {
                omega_x: Some(spec.trap.omega_x),
                omega_y: Some(spec.trap.omega_y),
                omega_z: Some(spec.trap.omega_z),
                omega_bias: Some(spec.trap.omega_bias),
            }),
            constants: Some(ConstantsSection {
                hbar: Some(spec.constants.hbar),
                g_earth: Some(spec.constants.g_earth),
                bohr_magneton: Some(spec.constants.bohr_magneton),
                atomic_mass_unit: Some(spec.constants.atomic_mass_unit),
                bohr_radius: Some(spec.constants.bohr_radius),
            }),
            rf: Some(rf),
            grid: Some(GridSection {
                x_min: Some(spec.grid.x_min),
                x_max: Some(spec.grid.x_max),
                n_points: Some(spec.grid.n_points),
            }),
            evolution: Some(spec.evolution.clone()),
            run: Some(RunSection {
                engine: Some(spec.engine),
            }),
            output: Some(spec.outputs.clone()),
            sweep: None,
        }
    }
}

/// Parse and resolve a TOML run configuration; missing physical sections
/// default to the reference rubidium parameter set. At least one output
/// must be requested.
pub fn parse_config(text: &str) -> Result<RunSpec, ConfigError> {
    parse_config_full(text).map(|(spec, _)| spec)
}

/// [`parse_config`] plus the optional `[sweep]` section.
pub fn parse_config_full(text: &str) -> Result<(RunSpec, Option<SweepSection>), ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let sweep = raw.sweep.clone();
    if let Some(sw) = &sweep {
        if sw.values.is_empty() {
            return Err(invalid("sweep.values", "must list at least one value"));
        }
        if sw.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sweep.values", "must be finite"));
        }
    }
    Ok((resolve(raw)?, sweep))
}

fn resolve(raw: RawConfig) -> Result<RunSpec, ConfigError> {
    let cs = raw.constants.unwrap_or_default();
    let mut constants = PhysicalConstants::default();
    if let Some(v) = cs.hbar {
        constants.hbar = v;
    }
    if let Some(v) = cs.g_earth {
        constants.g_earth = v;
    }
    if let Some(v) = cs.bohr_magneton {
        constants.bohr_magneton = v;
    }
    if let Some(v) = cs.atomic_mass_unit {
        constants.atomic_mass_unit = v;
    }
    if let Some(v) = cs.bohr_radius {
        constants.bohr_radius = v;
    }
    for (key, v) in [
        ("constants.hbar", constants.hbar),
        ("constants.g_earth", constants.g_earth),
        ("constants.bohr_magneton", constants.bohr_magneton),
        ("constants.atomic_mass_unit", constants.atomic_mass_unit),
        ("constants.bohr_radius", constants.bohr_radius),
    ] {
        if !(v > 0.0) {
            return Err(invalid(key, "must be strictly positive"));
        }
    }

    let sp = raw.species.unwrap_or_default();
    let mut species = AtomSpecies::rb87(&constants);
    if let Some(v) = sp.mass {
        species.mass = v;
    }
    if let Some(v) = sp.f {
        species.f_total = v;
    }
    if let Some(v) = sp.g_f {
        species.g_f = v;
    }
    if let Some(v) = sp.scattering_length {
        species.scattering_length = v;
    }
    if !(species.mass > 0.0) {
        return Err(invalid("species.mass", "must be strictly positive"));
    }
    if species.f_total < 1 {
        return Err(invalid("species.F", "needs F >= 1 for rf output coupling"));
    }
    if species.g_f == 0.0 {
        return Err(invalid("species.g_f", "must be nonzero"));
    }
    if species.scattering_length < 0.0 {
        return Err(invalid("species.scattering_length", "must be >= 0"));
    }

    let tr = raw.trap.unwrap_or_default();
    let mut trap = TrapConfig::reference();
    if let Some(v) = tr.omega_x {
        trap.omega_x = v;
    }
    if let Some(v) = tr.omega_y {
        trap.omega_y = v;
    }
    if let Some(v) = tr.omega_z {
        trap.omega_z = v;
    }
    if let Some(v) = tr.omega_bias {
        trap.omega_bias = v;
    }
    for (key, v) in [
        ("trap.omega_x", trap.omega_x),
        ("trap.omega_y", trap.omega_y),
        ("trap.omega_z", trap.omega_z),
        ("trap.omega_bias", trap.omega_bias),
    ] {
        if !(v > 0.0) {
            return Err(invalid(key, "must be strictly positive"));
        }
    }

    let mut rf = Vec::new();
    for (name, section) in raw.rf.unwrap_or_default() {
        let key = format!("rf.{name}");
        if !(section.peak_rabi > 0.0) {
            return Err(invalid(&format!("{key}.peak_rabi"), "must be > 0"));
        }
        if !(section.polarization_factor > 0.0 && section.polarization_factor <= 1.0) {
            return Err(invalid(
                &format!("{key}.polarization_factor"),
                "must lie in (0, 1]",
            ));
        }
        if section.envelope.shape != "box" {
            return Err(invalid(
                &format!("{key}.envelope.shape"),
                format!("unknown shape {:?}; supported: box", section.envelope.shape),
            ));
        }
        if !(section.envelope.duration > 0.0) {
            return Err(invalid(&format!("{key}.envelope.duration"), "must be > 0"));
        }
        rf.push(RfComponent {
            peak_rabi: section.peak_rabi,
            omega_rf: section.omega_rf,
            theta: section.theta,
            polarization_factor: section.polarization_factor,
            envelope: Envelope::Box {
                start: section.envelope.start,
                duration: section.envelope.duration,
            },
        });
    }

    let gr = raw.grid.unwrap_or_default();
    let default_grid = Grid1D::default_for(&trap, &constants);
    let grid = Grid1D::new(
        gr.x_min.unwrap_or(default_grid.x_min),
        gr.x_max.unwrap_or(default_grid.x_max),
        gr.n_points.unwrap_or(default_grid.n_points),
    )
    .map_err(|e| invalid("grid", e.to_string()))?;

    let evolution = raw.evolution.unwrap_or_default();
    if !(evolution.dt > 0.0) {
        return Err(invalid("evolution.dt", "must be > 0"));
    }
    if !(evolution.t_final > 0.0) {
        return Err(invalid("evolution.t_final", "must be > 0"));
    }
    if evolution.n_atoms < 0.0 {
        return Err(invalid("evolution.n_atoms", "must be >= 0"));
    }
    if evolution.absorber_width.is_some() != evolution.absorber_strength.is_some() {
        return Err(invalid(
            "evolution.absorber_width",
            "absorber_width and absorber_strength must be set together",
        ));
    }

    let outputs = raw.output.unwrap_or_default();
    if outputs.is_empty() {
        return Err(invalid("output", "at least one output must be requested"));
    }
    for (i, out) in outputs.iter().enumerate() {
        let key = format!("output[{i}]");
        match out {
            OutputRequest::Profile { time } | OutputRequest::Spectrum { time } => {
                if *time < 0.0 || *time > evolution.t_final + 1e-12 {
                    return Err(invalid(
                        &format!("{key}.time"),
                        "must lie in [0, evolution.t_final]",
                    ));
                }
            }
            OutputRequest::Trace { x } => {
                if *x < grid.x_min || *x > grid.x_max {
                    return Err(invalid(&format!("{key}.x"), "must lie inside the grid"));
                }
            }
            OutputRequest::Visibility {
                x,
                window_start,
                window_end,
            } => {
                if *x < grid.x_min || *x > grid.x_max {
                    return Err(invalid(&format!("{key}.x"), "must lie inside the grid"));
                }
                if !(window_end > window_start) {
                    return Err(invalid(
                        &format!("{key}.window_end"),
                        "must exceed window_start",
                    ));
                }
            }
            OutputRequest::OverlapSweep {
                f_min,
                f_max,
                points,
            } => {
                if !(f_max > f_min) || *points < 2 {
                    return Err(invalid(
                        &format!("{key}"),
                        "needs f_max > f_min and points >= 2",
                    ));
                }
            }
        }
    }

    let engine = raw.run.unwrap_or_default().engine.unwrap_or(Engine::Analytic);
    Ok(RunSpec {
        engine,
        species,
        trap,
        constants,
        rf,
        grid,
        evolution,
        outputs,
    })
}
