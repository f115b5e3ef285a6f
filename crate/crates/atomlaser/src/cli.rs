//! Run orchestration: config files, figure presets, parameter sweeps,
//! per-run manifests.
//!
//! Every run writes into its own directory under `--out`: the resolved
//! `config.toml`, one CSV (or report) per requested output, and a
//! `manifest.txt` pinning the tool version, the config hash, the derived
//! physical scales and the checksums of every artifact. All files are
//! written atomically (temp file + rename) and contain no timestamps, so
//! identical invocations produce byte-identical trees.
//!
//! Exit codes: 0 success; 2 invalid configuration or arguments; 3
//! numerical failure (non-convergence, grid overflow, instability); 4
//! tolerance failure (cross-engine comparison outside budget).

use crate::analysis::{
    self, compare_profiles, visibility, AnalysisError, DensityProfile, DetectorTrace,
};
use crate::analytic::{
    detector_series, outcoupled_spectral, AnalyticError, FreeFallGaussian, RateFunction,
};
use crate::basis::{self, BasisError, ComplexField, EnergySpectrum, GeneralizedEigenstate};
use crate::config::{parse_config_full, ConfigError, Engine, EvolutionSection, OutputRequest, RunSpec};
use crate::gpe::{
    self, evolve, ground_state_imaginary_time, EvolutionParams, EvolutionResult,
    GpeError, Grid1D, SpinorField,
};
use crate::physconfig::{
    effective_coupling, predict_resonance, trapped_ground_energy, AtomSpecies, Envelope,
    PhysError, PhysicalConstants, RfComponent, TrapConfig,
};
use clap::Parser;
use num_complex::Complex64;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

const TWO_PI: f64 = 2.0 * PI;
/// Emitted profile resolution (density is smooth on this scale; the
/// spatial beat wavelength of interfering streams is tens of µm).
const PROFILE_POINTS: usize = 4096;
/// Energy-grid resolution of the initial-state spectral decomposition.
const ENERGY_POINTS: usize = 4096;
/// Spatial sampling of the trapped ground state for overlap integrals.
const INITIAL_FIELD_POINTS: usize = 4096;
/// Baseline number of detector-trace samples over a run.
const TRACE_POINTS: usize = 800;
/// Minimum trace samples per beat period.
const BEAT_OVERSAMPLING: f64 = 20.0;
/// Relative L² budget for cross-engine profile comparisons.
const COMPARE_TOLERANCE: f64 = 0.05;

/// 1D rf output-coupling atom-laser simulator.
#[derive(Debug, Parser)]
#[command(name = "atomlaser", version, about)]
pub struct Cli {
    /// TOML run configuration (see the config module docs).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Built-in scenario: fig2..fig9.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    /// Output directory (one subdirectory per run).
    #[arg(long, default_value = "out", value_name = "DIR")]
    pub out: PathBuf,
    /// Engine override: analytic | numeric | both.
    #[arg(long)]
    pub engine: Option<Engine>,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Promote physics warnings (RWA validity, overlap-approximation
    /// range) to configuration errors.
    #[arg(long)]
    pub strict: bool,
}

/// Failure classes mapped onto process exit codes.
#[derive(Debug)]
pub enum RunError {
    /// Invalid configuration or arguments (exit 2).
    Config(String),
    /// Numerical failure: non-convergence, overflow, instability, I/O
    /// (exit 3).
    Numerical(String),
    /// Result outside an accepted tolerance (exit 4).
    Tolerance(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Tolerance(_) => 4,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "configuration: {m}"),
            RunError::Numerical(m) => write!(f, "numerical: {m}"),
            RunError::Tolerance(m) => write!(f, "tolerance: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.to_string())
    }
}
impl From<PhysError> for RunError {
    fn from(e: PhysError) -> Self {
        RunError::Config(e.to_string())
    }
}
impl From<GpeError> for RunError {
    fn from(e: GpeError) -> Self {
        match e {
            GpeError::InvalidParams(m) => RunError::Config(m),
            other => RunError::Numerical(other.to_string()),
        }
    }
}
impl From<AnalyticError> for RunError {
    fn from(e: AnalyticError) -> Self {
        RunError::Numerical(e.to_string())
    }
}
impl From<BasisError> for RunError {
    fn from(e: BasisError) -> Self {
        RunError::Numerical(e.to_string())
    }
}
impl From<AnalysisError> for RunError {
    fn from(e: AnalysisError) -> Self {
        RunError::Numerical(e.to_string())
    }
}
impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Numerical(format!("io: {e}"))
    }
}

/// One run with a stable directory name and an optional sweep value for
/// the summary table.
#[derive(Debug, Clone)]
pub struct NamedRun {
    pub name: String,
    pub value: Option<f64>,
    pub spec: RunSpec,
}

/// What a completed run reported back for the summary table.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub name: String,
    pub value: Option<f64>,
    pub peak_density: Option<f64>,
    pub outcoupled_norm: Option<f64>,
    pub visibility: Option<f64>,
    /// (file name, sha256) of every artifact in the run directory.
    pub files: Vec<(String, String)>,
}

/// Top-level entry; returns the process exit code.
pub fn run_cli(cli: &Cli) -> i32 {
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let runs = build_runs(cli)?;
    fs::create_dir_all(&cli.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
        .map_err(|e| RunError::Numerical(e.to_string()))?;
    let artifacts: Vec<RunArtifacts> = pool.install(|| {
        runs.par_iter()
            .map(|r| run_one(r, &cli.out, cli.strict))
            .collect::<Result<_, _>>()
    })?;

    let mut csv = String::from("name,value,peak_density_per_m,outcoupled_norm,visibility\n");
    for a in &artifacts {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            a.name,
            fmt_opt(a.value),
            fmt_opt(a.peak_density),
            fmt_opt(a.outcoupled_norm),
            fmt_opt(a.visibility),
        ));
    }
    write_atomic(&cli.out.join("summary.csv"), csv.as_bytes())?;

    for a in &artifacts {
        println!("run {}: {} artifacts", a.name, a.files.len());
    }
    println!("summary: {}", cli.out.join("summary.csv").display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9e}")).unwrap_or_default()
}

// ---------------------------------------------------------------------
// run construction

/// Expand CLI arguments into the list of runs to execute.
pub fn build_runs(cli: &Cli) -> Result<Vec<NamedRun>, RunError> {
    let mut runs = match (&cli.config, &cli.preset) {
        (Some(_), Some(_)) => {
            return Err(RunError::Config(
                "--config and --preset are mutually exclusive".into(),
            ))
        }
        (None, None) => {
            return Err(RunError::Config(
                "one of --config or --preset is required".into(),
            ))
        }
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| {
                RunError::Config(format!("cannot read {}: {e}", path.display()))
            })?;
            let (spec, sweep) = parse_config_full(&text)?;
            match sweep {
                None => vec![NamedRun {
                    name: "run".into(),
                    value: None,
                    spec,
                }],
                Some(sw) => sw
                    .values
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let mut s = spec.clone();
                        apply_axis(&mut s, &sw.axis, v)?;
                        Ok(NamedRun {
                            name: format!("sweep_{i:02}"),
                            value: Some(v),
                            spec: s,
                        })
                    })
                    .collect::<Result<_, RunError>>()?,
            }
        }
        (None, Some(p)) => preset_runs(p).ok_or_else(|| {
            RunError::Config(format!(
                "unknown preset {p:?}; available: {}",
                PRESET_NAMES.join(", ")
            ))
        })?,
    };
    if let Some(engine) = cli.engine {
        for r in &mut runs {
            r.spec.engine = engine;
        }
    }
    Ok(runs)
}

/// Set one swept parameter by its dotted path.
fn apply_axis(spec: &mut RunSpec, axis: &str, v: f64) -> Result<(), RunError> {
    if !v.is_finite() {
        return Err(RunError::Config(format!("sweep value for {axis} not finite")));
    }
    let parts: Vec<&str> = axis.split('.').collect();
    let bad = || RunError::Config(format!("unknown sweep axis {axis:?}"));
    match parts.as_slice() {
        ["rf", idx, field] => {
            let i: usize = idx
                .parse::<usize>()
                .ok()
                .filter(|i| *i >= 1)
                .ok_or_else(bad)?;
            let c = spec.rf.get_mut(i - 1).ok_or_else(|| {
                RunError::Config(format!("sweep axis {axis:?}: no rf component {idx}"))
            })?;
            match *field {
                "omega_rf" => c.omega_rf = v,
                "theta" => c.theta = v,
                "peak_rabi" => c.peak_rabi = v,
                "polarization_factor" => c.polarization_factor = v,
                _ => return Err(bad()),
            }
        }
        ["evolution", field] => match *field {
            "n_atoms" => spec.evolution.n_atoms = v,
            "t_final" => spec.evolution.t_final = v,
            "dt" => spec.evolution.dt = v,
            "rotating_frame_omega" => spec.evolution.rotating_frame_omega = Some(v),
            _ => return Err(bad()),
        },
        ["trap", field] => match *field {
            "omega_x" => spec.trap.omega_x = v,
            "omega_y" => spec.trap.omega_y = v,
            "omega_z" => spec.trap.omega_z = v,
            "omega_bias" => spec.trap.omega_bias = v,
            _ => return Err(bad()),
        },
        _ => return Err(bad()),
    }
    Ok(())
}

// ---------------------------------------------------------------------
// presets

pub const PRESET_NAMES: [&str; 8] = [
    "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9",
];

/// Built-in scenarios on the reference rubidium trap. Detector positions
/// are quoted below the trap center at x₀ = g/ω_x² ≈ 9.7 µm.
pub fn preset_runs(name: &str) -> Option<Vec<NamedRun>> {
    let constants = PhysicalConstants::default();
    let species = AtomSpecies::rb87(&constants);
    let trap = TrapConfig::reference();
    let x0 = trap.sag(&constants);
    let grid = Grid1D::default_for(&trap, &constants);

    let base = |engine: Engine| RunSpec {
        engine,
        species: species.clone(),
        trap: trap.clone(),
        constants: constants.clone(),
        rf: Vec::new(),
        grid,
        evolution: EvolutionSection::default(),
        outputs: Vec::new(),
    };
    let single = |name: &str, value: Option<f64>, spec: RunSpec| NamedRun {
        name: name.into(),
        value,
        spec,
    };

    Some(match name {
        // Resonance curve: ground-state ↔ continuum overlap vs rf
        // frequency, Gaussian of width mgσ₀/h around ~910 kHz.
        "fig2" => {
            let mut spec = base(Engine::Analytic);
            spec.outputs = vec![OutputRequest::OverlapSweep {
                f_min: 900e3,
                f_max: 920e3,
                points: 401,
            }];
            vec![single("overlap", None, spec)]
        }
        // Short resonant pulse; falling wave packet at four times.
        "fig3" => {
            let mut spec = base(Engine::Analytic);
            let omega_res = predict_resonance(&trap, &species, &constants);
            spec.rf = vec![RfComponent {
                envelope: Envelope::Box {
                    start: 0.0,
                    duration: 2e-4,
                },
                ..RfComponent::reference(omega_res, 0.0)
            }];
            spec.outputs = [2e-3, 4e-3, 6e-3, 8e-3]
                .iter()
                .map(|&t| OutputRequest::Profile { time: t })
                .collect();
            vec![single("pulse", None, spec)]
        }
        // Single 5 ms tone: continuous beam profile and detector trace.
        "fig4" => {
            let mut spec = base(Engine::Analytic);
            spec.rf = vec![RfComponent::reference(TWO_PI * 910e3, 0.0)];
            spec.outputs = vec![
                OutputRequest::Profile { time: 8e-3 },
                OutputRequest::Trace { x: x0 + 1e-4 },
            ];
            vec![single("beam", None, spec)]
        }
        // Frequency sweep across the resonance: peak beam density grows
        // as the tone approaches resonance from below.
        "fig5" => (0..8)
            .map(|i| {
                let f = 907e3 + 500.0 * i as f64;
                let mut spec = base(Engine::Analytic);
                spec.rf = vec![RfComponent::reference(TWO_PI * f, 0.0)];
                spec.outputs = vec![OutputRequest::Profile { time: 8e-3 }];
                single(&format!("tone_{}hz", f as u64), Some(f), spec)
            })
            .collect(),
        // Two tones 1 kHz apart, antiphased: beat at the detector.
        "fig6" => {
            let mut spec = base(Engine::Analytic);
            spec.rf = vec![
                RfComponent::reference(TWO_PI * 910e3, 0.0),
                RfComponent::reference(TWO_PI * 911e3, PI),
            ];
            spec.evolution.t_final = 10e-3;
            spec.outputs = vec![
                OutputRequest::Trace { x: x0 + 1e-4 },
                OutputRequest::Visibility {
                    x: x0 + 1e-4,
                    window_start: 5e-3,
                    window_end: 9.5e-3,
                },
            ];
            vec![single("beat", None, spec)]
        }
        // Cross-engine check: both engines on the same two-tone drive,
        // profiles compared within the shape tolerance.
        "fig7" => {
            let mut spec = base(Engine::Both);
            spec.rf = vec![
                RfComponent::reference(TWO_PI * 909e3, 0.0),
                RfComponent::reference(TWO_PI * 908e3, PI),
            ];
            spec.evolution.dt = 2e-7;
            spec.evolution.absorber_width = Some(5e-5);
            spec.evolution.absorber_strength = Some(0.01);
            spec.outputs = vec![OutputRequest::Profile { time: 8e-3 }];
            vec![single("crosscheck", None, spec)]
        }
        // Interacting cloud (N = 1e5): tones just inside / outside the
        // Thomas–Fermi resonance band, separately and together.
        "fig8" => {
            let n_atoms = 1e5;
            let g1 = gpe::g1d_coefficient(
                &species,
                trap.omega_y,
                trap.omega_z,
                n_atoms,
                &constants,
            );
            let m = species.mass;
            let w2 = trap.omega_x * trap.omega_x;
            let mu = (0.75 * g1 * (m * w2 / 2.0).sqrt()).powf(2.0 / 3.0);
            let r_tf = (2.0 * mu / (m * w2)).sqrt();
            let mg = m * constants.g_earth;
            // resonance at the shallow (upper) cloud edge x₀ − R
            let f_low =
                (constants.hbar * trap.omega_bias + 0.5 * mg * x0 + mu - mg * r_tf)
                    / constants.h();
            let f_out = f_low - 3e3; // below the band: off-resonant everywhere
            let f_in = f_low + 3e3; // inside the band: resonant in the bulk
            let x_d = x0 + 6e-5;
            let make = |rf: Vec<RfComponent>, extra_vis: bool, value: f64, name: &str| {
                let mut spec = base(Engine::Numeric);
                spec.rf = rf;
                spec.grid = Grid1D::new(x0 - 5e-5, x0 + 3e-4, 16384)
                    .expect("preset grid is valid");
                spec.evolution.dt = 2e-7;
                spec.evolution.t_final = 6e-3;
                spec.evolution.n_atoms = n_atoms;
                spec.evolution.absorber_width = Some(5e-5);
                spec.evolution.absorber_strength = Some(0.01);
                spec.outputs = vec![
                    OutputRequest::Profile { time: 6e-3 },
                    OutputRequest::Trace { x: x_d },
                ];
                if extra_vis {
                    spec.outputs.push(OutputRequest::Visibility {
                        x: x_d,
                        window_start: 4e-3,
                        window_end: 6e-3,
                    });
                }
                single(name, Some(value), spec)
            };
            vec![
                make(
                    vec![RfComponent::reference(TWO_PI * f_out, 0.0)],
                    false,
                    f_out,
                    "outside_band",
                ),
                make(
                    vec![RfComponent::reference(TWO_PI * f_in, 0.0)],
                    false,
                    f_in,
                    "inside_band",
                ),
                make(
                    vec![
                        RfComponent::reference(TWO_PI * f_in, 0.0),
                        RfComponent::reference(TWO_PI * f_out, PI),
                    ],
                    true,
                    f_in - f_out,
                    "dual",
                ),
            ]
        }
        // Visibility vs tone separation: wider separations smooth out.
        "fig9" => [(906e3, "df5khz"), (908e3, "df3khz"), (910e3, "df1khz")]
            .iter()
            .map(|&(f2, name)| {
                let mut spec = base(Engine::Analytic);
                spec.rf = vec![
                    RfComponent::reference(TWO_PI * 911e3, 0.0),
                    RfComponent::reference(TWO_PI * f2, PI),
                ];
                spec.evolution.t_final = 10e-3;
                spec.outputs = vec![
                    OutputRequest::Trace { x: x0 + 1e-4 },
                    OutputRequest::Visibility {
                        x: x0 + 1e-4,
                        window_start: 5e-3,
                        window_end: 9.5e-3,
                    },
                ];
                single(name, Some(911e3 - f2), spec)
            })
            .collect(),
        _ => return None,
    })
}

// ---------------------------------------------------------------------
// execution

struct AnalyticCtx {
    rate: RateFunction,
    wp: FreeFallGaussian,
    e0: f64,
    spectrum0: Option<EnergySpectrum>,
}

impl AnalyticCtx {
    fn new(spec: &RunSpec) -> Result<Self, RunError> {
        let e0 = trapped_ground_energy(&spec.trap, &spec.species, &spec.constants);
        let rate = RateFunction::new(&spec.rf, e0, &spec.species, &spec.constants)?;
        let sigma0 = spec.trap.ground_width(&spec.species, &spec.constants);
        let x0 = spec.trap.sag(&spec.constants);
        let wp = FreeFallGaussian::new(sigma0, x0, &spec.species, &spec.constants);
        Ok(Self {
            rate,
            wp,
            e0,
            spectrum0: None,
        })
    }

    /// Spectral decomposition of the trapped ground state, computed once.
    fn spectrum0(&mut self, spec: &RunSpec) -> Result<&EnergySpectrum, RunError> {
        if self.spectrum0.is_none() {
            let sigma0 = spec.trap.ground_width(&spec.species, &spec.constants);
            let x0 = spec.trap.sag(&spec.constants);
            let phi = gaussian_field(sigma0, x0, INITIAL_FIELD_POINTS)?;
            let energies = basis::default_energy_grid(
                &spec.species,
                &spec.trap,
                &spec.constants,
                ENERGY_POINTS,
            );
            self.spectrum0 = Some(basis::spectral_transform(
                &phi,
                &energies,
                &spec.species,
                &spec.constants,
            )?);
        }
        Ok(self.spectrum0.as_ref().expect("just set"))
    }
}

/// Execute one run into `out_dir/<name>/` and report its artifacts.
pub fn run_one(run: &NamedRun, out_dir: &Path, strict: bool) -> Result<RunArtifacts, RunError> {
    let spec = &run.spec;
    spec.constants.validate()?;
    spec.species.validate()?;
    spec.trap.validate()?;
    for c in &spec.rf {
        c.validate()?;
    }

    // derived scales, reported in the manifest
    let sigma0 = spec.trap.ground_width(&spec.species, &spec.constants);
    let x0 = spec.trap.sag(&spec.constants);
    let length_l = GeneralizedEigenstate::new(0.0, &spec.species, &spec.constants).length_l;
    let tau_s = crate::analytic::smoothing_time(sigma0, &spec.species, &spec.constants);
    let g1d = spec.g1d();
    let resonance = predict_resonance(&spec.trap, &spec.species, &spec.constants);
    let omega_f = spec.rotating_frame_omega();

    let mut warnings = Vec::new();
    if spec.engine != Engine::Analytic {
        if let Some(w) = gpe::rwa_warning(&spec.rf, omega_f) {
            warnings.push(w);
        }
    }
    if sigma0 < 5.0 * length_l {
        warnings.push(format!(
            "trap ground width sigma0 = {sigma0:.3e} m < 5 l = {:.3e} m; the Gaussian \
             overlap picture is marginal at this width",
            5.0 * length_l
        ));
    }
    if strict && !warnings.is_empty() {
        return Err(RunError::Config(format!(
            "strict mode: {}",
            warnings.join("; ")
        )));
    }
    for w in &warnings {
        eprintln!("warning [{}]: {w}", run.name);
    }

    let dir = out_dir.join(&run.name);
    fs::create_dir_all(&dir)?;
    let canonical = spec.canonical_string();
    let config_hash = sha256_hex(canonical.as_bytes());
    let mut files: Vec<(String, String)> = Vec::new();
    let emit = |dir: &Path,
                    files: &mut Vec<(String, String)>,
                    name: String,
                    content: &str|
     -> Result<(), RunError> {
        write_atomic(&dir.join(&name), content.as_bytes())?;
        files.push((name, sha256_hex(content.as_bytes())));
        Ok(())
    };
    emit(&dir, &mut files, "config.toml".into(), &canonical)?;

    let needs_analytic = spec.engine != Engine::Numeric;
    let needs_numeric = spec.engine != Engine::Analytic;

    let mut actx = if needs_analytic {
        Some(AnalyticCtx::new(spec)?)
    } else {
        None
    };
    let numeric: Option<EvolutionResult> = if needs_numeric {
        Some(run_numeric(spec, g1d, omega_f)?)
    } else {
        None
    };

    let beat = shortest_beat(&spec.rf);
    let t_final = spec.evolution.t_final;
    let mut peak_density: Option<f64> = None;
    let mut outcoupled_norm: Option<f64> = None;
    let mut vis_value: Option<f64> = None;

    if let Some(result) = &numeric {
        if let Some(last) = result.snapshots.last() {
            outcoupled_norm = Some(1.0 - last.population(-1)?);
        }
    }

    for (i, out) in spec.outputs.iter().enumerate() {
        let stem = out.file_stem(i);
        match out {
            OutputRequest::Profile { time } => match (&numeric, &mut actx) {
                (Some(result), None) => {
                    let prof = numeric_profile(spec, result, *time)?;
                    track_peak(&mut peak_density, prof.peak());
                    emit(&dir, &mut files, format!("{stem}.csv"), &analysis::profile_csv(&prof))?;
                }
                (None, Some(ctx)) => {
                    let (x_min, x_max, n) = decimated_extent(&spec.grid);
                    let prof = analytic_profile(spec, ctx, *time, x_min, x_max, n)?;
                    track_peak(&mut peak_density, prof.peak());
                    if outcoupled_norm.is_none() {
                        outcoupled_norm = Some(prof.integral());
                    }
                    emit(&dir, &mut files, format!("{stem}.csv"), &analysis::profile_csv(&prof))?;
                }
                (Some(result), Some(ctx)) => {
                    let num = numeric_profile(spec, result, *time)?;
                    let ana = analytic_profile(
                        spec,
                        ctx,
                        *time,
                        num.x_min,
                        num.x_max,
                        num.density.len(),
                    )?;
                    track_peak(&mut peak_density, num.peak());
                    let err = compare_profiles(&num, &ana, true)?;
                    emit(
                        &dir,
                        &mut files,
                        format!("{stem}_numeric.csv"),
                        &analysis::profile_csv(&num),
                    )?;
                    emit(
                        &dir,
                        &mut files,
                        format!("{stem}_analytic.csv"),
                        &analysis::profile_csv(&ana),
                    )?;
                    emit(
                        &dir,
                        &mut files,
                        format!("{stem}_compare.txt"),
                        &format!(
                            "time_s = {time:.9e}\nrelative_l2_rescaled = {err:.9e}\n\
                             tolerance = {COMPARE_TOLERANCE:.9e}\n"
                        ),
                    )?;
                    if err > COMPARE_TOLERANCE {
                        return Err(RunError::Tolerance(format!(
                            "engines disagree on the {time:.3e} s profile: relative L2 \
                             {err:.3e} > {COMPARE_TOLERANCE:.2e}"
                        )));
                    }
                }
                (None, None) => unreachable!("some engine is always active"),
            },
            OutputRequest::Trace { x } => {
                let trace = make_trace(&numeric, &actx, *x, beat, t_final)?;
                let drive = drive_series(&spec.rf, &spec.species, &trace.times)?;
                emit(
                    &dir,
                    &mut files,
                    format!("{stem}.csv"),
                    &analysis::trace_csv(&trace, Some(&drive)),
                )?;
            }
            OutputRequest::Visibility {
                x,
                window_start,
                window_end,
            } => {
                let trace = make_trace(&numeric, &actx, *x, beat, t_final)?;
                let report = visibility(&trace, (*window_start, *window_end))?;
                vis_value = Some(report.v);
                let drive_vis = two_tone_drive_visibility(&spec.rf, &spec.species)?;
                let mut text = format!(
                    "detector_x_m = {:.9e}\nwindow_s = [{:.9e}, {:.9e}]\n\
                     visibility = {:.9}\nbeat_hz = {:.6}\nenvelope_phase_rad = {:.9}\n",
                    report.detector_x,
                    report.window.0,
                    report.window.1,
                    report.v,
                    report.beat_frequency_measured / TWO_PI,
                    report.envelope_phase,
                );
                if let Some(dv) = drive_vis {
                    text.push_str(&format!("drive_visibility = {dv:.9}\n"));
                }
                emit(&dir, &mut files, format!("{stem}.txt"), &text)?;
            }
            OutputRequest::Spectrum { time } => {
                let ctx = actx.as_mut().ok_or_else(|| {
                    RunError::Config(
                        "spectrum output requires the analytic engine".into(),
                    )
                })?;
                let spectrum0 = ctx.spectrum0(spec)?.clone();
                let c_e = crate::analytic::spectral_coefficients(
                    &ctx.rate, &spectrum0, *time, false,
                )?;
                let mut csv = String::from("energy_j,re,im,abs_sq\n");
                for (e, a) in c_e.energies.iter().zip(&c_e.amplitudes) {
                    csv.push_str(&format!(
                        "{e:.9e},{:.9e},{:.9e},{:.9e}\n",
                        a.re,
                        a.im,
                        a.norm_sqr()
                    ));
                }
                emit(&dir, &mut files, format!("{stem}.csv"), &csv)?;
            }
            OutputRequest::OverlapSweep {
                f_min,
                f_max,
                points,
            } => {
                let ctx = actx.as_ref().ok_or_else(|| {
                    RunError::Config(
                        "overlap_sweep output requires the analytic engine".into(),
                    )
                })?;
                let phi = gaussian_field(sigma0, x0, INITIAL_FIELD_POINTS)?;
                let mut csv = String::from("f_hz,overlap_amp\n");
                for k in 0..*points {
                    let f = f_min + (f_max - f_min) * k as f64 / (*points - 1) as f64;
                    let e = ctx.e0 - spec.constants.h() * f;
                    let state = GeneralizedEigenstate::new(e, &spec.species, &spec.constants);
                    let amp = basis::overlap_numeric(&phi, &state)?;
                    csv.push_str(&format!("{f:.9e},{:.9e}\n", amp.re));
                }
                emit(&dir, &mut files, format!("{stem}.csv"), &csv)?;
            }
        }
    }

    files.sort();
    let mut manifest = format!(
        "tool = atomlaser {}\nengine = {}\nconfig_sha256 = {}\n\n[derived]\n",
        env!("CARGO_PKG_VERSION"),
        spec.engine,
        config_hash
    );
    for (key, v) in [
        ("sigma0_m", sigma0),
        ("sag_x0_m", x0),
        ("airy_length_l_m", length_l),
        ("smoothing_tau_s_s", tau_s),
        ("g1d_j_m", g1d),
        ("resonance_hz", resonance / TWO_PI),
        ("rotating_frame_rad_s", omega_f),
    ] {
        manifest.push_str(&format!("{key} = {v:.12e}\n"));
    }
    manifest.push_str("\n[files]\n");
    for (name, hash) in &files {
        manifest.push_str(&format!("{name} sha256={hash}\n"));
    }
    write_atomic(&dir.join("manifest.txt"), manifest.as_bytes())?;

    Ok(RunArtifacts {
        name: run.name.clone(),
        value: run.value,
        peak_density,
        outcoupled_norm,
        visibility: vis_value,
        files,
    })
}

fn track_peak(acc: &mut Option<f64>, peak: f64) {
    *acc = Some(acc.map_or(peak, |p: f64| p.max(peak)));
}

/// Ground state preparation + split-step evolution for a run.
fn run_numeric(spec: &RunSpec, g1d: f64, omega_f: f64) -> Result<EvolutionResult, RunError> {
    let ground = ground_state_imaginary_time(
        &spec.trap,
        &spec.species,
        g1d,
        &spec.grid,
        &spec.constants,
    )?;
    let initial = SpinorField::single(spec.grid, -1, ground.samples)?;

    let mut detectors: Vec<f64> = Vec::new();
    for out in &spec.outputs {
        let x = match out {
            OutputRequest::Trace { x } => *x,
            OutputRequest::Visibility { x, .. } => *x,
            _ => continue,
        };
        if !detectors.iter().any(|d| (d - x).abs() < 1e-12) {
            detectors.push(x);
        }
    }

    let dt = spec.evolution.dt;
    let sample_dt = shortest_beat(&spec.rf)
        .map(|b| b / BEAT_OVERSAMPLING)
        .unwrap_or(spec.evolution.t_final / 1000.0);
    let params = EvolutionParams {
        dt,
        t_final: spec.evolution.t_final,
        rotating_frame_omega: omega_f,
        interaction_g1d: g1d,
        absorber: spec.evolution.absorber(),
        snapshot_interval: spec.evolution.snapshot_interval,
        zero_anti_coupling: false,
        detectors,
        detector_stride: ((sample_dt / dt).floor() as usize).max(1),
    };
    Ok(evolve(
        &initial,
        &spec.rf,
        &params,
        &spec.trap,
        &spec.species,
        &spec.constants,
    )?)
}

/// Untrapped-component density at the snapshot nearest `time`, decimated
/// to the emitted profile resolution.
fn numeric_profile(
    spec: &RunSpec,
    result: &EvolutionResult,
    time: f64,
) -> Result<DensityProfile, RunError> {
    let tol = spec.evolution.snapshot_interval / 2.0 + spec.evolution.dt;
    let snap = result
        .snapshots
        .iter()
        .min_by(|a, b| {
            (a.time - time)
                .abs()
                .partial_cmp(&(b.time - time).abs())
                .expect("finite times")
        })
        .ok_or_else(|| RunError::Numerical("evolution produced no snapshots".into()))?;
    if (snap.time - time).abs() > tol {
        return Err(RunError::Config(format!(
            "profile time {time:.3e} s not on the snapshot cadence \
             (nearest snapshot at {:.3e} s)",
            snap.time
        )));
    }
    let field = decimate_field(&snap.component_field(0)?, PROFILE_POINTS);
    Ok(analysis::density(&field))
}

/// Beam profile from the spectral route on the requested grid.
fn analytic_profile(
    spec: &RunSpec,
    ctx: &mut AnalyticCtx,
    time: f64,
    x_min: f64,
    x_max: f64,
    n: usize,
) -> Result<DensityProfile, RunError> {
    let spectrum0 = ctx.spectrum0(spec)?.clone();
    let field = outcoupled_spectral(
        &ctx.rate,
        &spectrum0,
        time,
        x_min,
        x_max,
        n,
        false,
        &spec.species,
        &spec.constants,
    )?;
    Ok(analysis::density(&field))
}

/// Detector trace from whichever engine ran (numeric preferred when both
/// are active, since its records already live on the step cadence).
fn make_trace(
    numeric: &Option<EvolutionResult>,
    actx: &Option<AnalyticCtx>,
    x: f64,
    beat: Option<f64>,
    t_final: f64,
) -> Result<DetectorTrace, RunError> {
    if let Some(result) = numeric {
        let record = result
            .detector_traces
            .iter()
            .min_by(|a, b| {
                (a.x - x)
                    .abs()
                    .partial_cmp(&(b.x - x).abs())
                    .expect("finite positions")
            })
            .ok_or_else(|| RunError::Numerical("no detector was recorded".into()))?;
        return Ok(DetectorTrace {
            detector_x: record.x,
            times: record.times.clone(),
            density: record.density.clone(),
        });
    }
    let ctx = actx
        .as_ref()
        .expect("analytic context exists when numeric does not");
    let times = trace_times(t_final, beat);
    let amps = detector_series(&ctx.rate, &ctx.wp, x, &times, None)?;
    Ok(DetectorTrace {
        detector_x: x,
        times,
        density: amps.iter().map(|a| a.norm_sqr()).collect(),
    })
}

/// |Σᵢ Ω_eff,i·envᵢ(t)·e^{−i(ωᵢt+θᵢ)}|² — the drive interference pattern
/// written alongside detector traces.
fn drive_series(
    rf: &[RfComponent],
    species: &AtomSpecies,
    times: &[f64],
) -> Result<Vec<f64>, RunError> {
    let amps: Vec<f64> = rf
        .iter()
        .map(|c| effective_coupling(c, species))
        .collect::<Result<_, _>>()?;
    Ok(times
        .iter()
        .map(|&t| {
            let sum: Complex64 = rf
                .iter()
                .zip(&amps)
                .map(|(c, &a)| {
                    a * c.envelope.eval(t)
                        * Complex64::from_polar(1.0, -(c.omega_rf * t + c.theta))
                })
                .sum();
            sum.norm_sqr()
        })
        .collect())
}

/// Phasor visibility 2A₁A₂/(A₁²+A₂²) of a two-tone drive; None otherwise.
fn two_tone_drive_visibility(
    rf: &[RfComponent],
    species: &AtomSpecies,
) -> Result<Option<f64>, RunError> {
    if rf.len() != 2 {
        return Ok(None);
    }
    let a1 = effective_coupling(&rf[0], species)?;
    let a2 = effective_coupling(&rf[1], species)?;
    Ok(Some(2.0 * a1 * a2 / (a1 * a1 + a2 * a2)))
}

// ---------------------------------------------------------------------
// small helpers

/// Shortest beat period 2π/min|ωᵢ−ωⱼ| among the drive tones.
fn shortest_beat(rf: &[RfComponent]) -> Option<f64> {
    let mut min_delta = f64::INFINITY;
    for i in 0..rf.len() {
        for j in i + 1..rf.len() {
            let d = (rf[i].omega_rf - rf[j].omega_rf).abs();
            if d > 0.0 {
                min_delta = min_delta.min(d);
            }
        }
    }
    min_delta.is_finite().then(|| TWO_PI / min_delta)
}

/// Uniform trace times in (0, t_final] resolving the beat.
fn trace_times(t_final: f64, beat: Option<f64>) -> Vec<f64> {
    let mut step = t_final / TRACE_POINTS as f64;
    if let Some(b) = beat {
        step = step.min(b / BEAT_OVERSAMPLING);
    }
    let n = (t_final / step).round() as usize;
    (1..=n).map(|i| i as f64 * t_final / n as f64).collect()
}

/// Normalized Gaussian trap ground state sampled over ±8σ.
fn gaussian_field(sigma: f64, x0: f64, n: usize) -> Result<ComplexField, RunError> {
    let (x_min, x_max) = (x0 - 8.0 * sigma, x0 + 8.0 * sigma);
    let norm = (PI * sigma * sigma).powf(-0.25);
    let samples: Vec<Complex64> = (0..n)
        .map(|i| {
            let x = x_min + (x_max - x_min) * i as f64 / (n - 1) as f64;
            Complex64::new(norm * (-(x - x0).powi(2) / (2.0 * sigma * sigma)).exp(), 0.0)
        })
        .collect();
    Ok(ComplexField::new(x_min, x_max, samples, 0.0)?)
}

/// Every `stride`-th sample so at most ~`target` points are emitted; the
/// grid stays uniform by moving x_max onto the last kept sample.
fn decimate_field(f: &ComplexField, target: usize) -> ComplexField {
    let n = f.samples.len();
    if n <= target {
        return f.clone();
    }
    let stride = ((n - 1) / (target - 1)).max(1);
    let last = ((n - 1) / stride) * stride;
    let samples: Vec<Complex64> = (0..=last / stride).map(|k| f.samples[k * stride]).collect();
    ComplexField::new(f.x_min, f.x_at(last), samples, f.timestamp)
        .expect("decimated field is valid")
}

/// The (x_min, x_max, n) a profile on `grid` decimates to.
fn decimated_extent(grid: &Grid1D) -> (f64, f64, usize) {
    let n = grid.n_points;
    if n <= PROFILE_POINTS {
        return (grid.x_min, grid.x_max, n);
    }
    let stride = ((n - 1) / (PROFILE_POINTS - 1)).max(1);
    let last = ((n - 1) / stride) * stride;
    (grid.x_min, grid.x_at(last), last / stride + 1)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write via a temp file in the same directory, then rename into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
