//! Split-step Fourier engine for the three Zeeman components.
//!
//! The spinor (ψ₋₁, ψ₀, ψ₊₁) evolves under
//!
//! iħ∂ₜψ = [p²/2m + V_M(x) + g₁D n(x)]ψ + H_rf(t)ψ,
//!
//! with V_M(x) = sgn(g_F)·M_F·(½mω_x²x² + ħω_bias) − mgx, n the total
//! density, and the rf coupling connecting adjacent sublevels. Everything is
//! integrated in a frame rotating at `rotating_frame_omega` (≈ the rf
//! carrier), which shifts the sublevel potentials by ∓ħω_f and leaves only
//! kHz-scale phases in the coupling, so a 10⁻⁷ s step resolves the physics
//! instead of the 900 kHz carrier.
//!
//! One step is the symmetric splitting V/2 → C/2 → K → C/2 → V/2, where V
//! is the diagonal potential (+ mean field) phase, K the kinetic phase in
//! momentum space, and C the 3×3 coupling exponential evaluated in closed
//! form at the step midpoint. Each factor is exactly unitary, so the total
//! norm is conserved to rounding.

use crate::analytic::{EngineTag, StreamResult};
use crate::basis::{BasisError, ComplexField};
use crate::physconfig::{
    effective_coupling, AtomSpecies, PhysError, PhysicalConstants, RfComponent, TrapConfig,
};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;
use thiserror::Error;

/// Default number of grid points; chosen so the momentum a packet gains in
/// an 8 ms fall (mgt/ħ ≈ 1.1e8 m⁻¹) stays below the grid Nyquist limit.
pub const DEFAULT_GRID_POINTS: usize = 32_768;
/// Default rotating-frame time step (s).
pub const DEFAULT_DT: f64 = 1e-7;
/// Default snapshot cadence (s).
pub const DEFAULT_SNAPSHOT_INTERVAL: f64 = 1e-4;
/// Edge-amplitude fraction that flags a grid overflow (absorber off).
const EDGE_RATIO: f64 = 1e-6;
/// Per-step norm drift that flags an unstable linear run.
const DRIFT_LIMIT: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GpeError {
    #[error("unsupported sublevel M_F = {m_f}; this engine models F = 1 with M_F in -1..=1")]
    UnsupportedSublevel { m_f: i32 },
    #[error("imaginary-time relaxation did not converge after {iterations} iterations (last relative energy change {last_change:.3e})")]
    NonConvergence { iterations: usize, last_change: f64 },
    #[error(
        "wave packet reached the grid edge at t = {t:.4e} s: edge amplitude {ratio:.2e} of max; \
         extend the grid or enable the absorber"
    )]
    GridOverflow { t: f64, ratio: f64 },
    #[error("unstable evolution: norm drifted by {drift:.3e} in one step at t = {t:.4e} s")]
    Instability { t: f64, drift: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Phys(#[from] PhysError),
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Uniform spatial grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self, GpeError> {
        if !(x_max > x_min) || n_points < 256 {
            return Err(GpeError::InvalidParams(format!(
                "grid needs x_max > x_min and >= 256 points, got [{x_min}, {x_max}] x {n_points}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
        })
    }

    /// Default production grid: [x₀ − 50 µm, x₀ + 450 µm].
    pub fn default_for(trap: &TrapConfig, constants: &PhysicalConstants) -> Self {
        let x0 = trap.sag(constants);
        Self {
            x_min: x0 - 50e-6,
            x_max: x0 + 450e-6,
            n_points: DEFAULT_GRID_POINTS,
        }
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    pub fn x_at(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }
}

/// Three-component field (index 0 ↔ M_F = −1, 1 ↔ 0, 2 ↔ +1).
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorField {
    pub grid: Grid1D,
    pub components: [Vec<Complex64>; 3],
    pub time: f64,
}

impl SpinorField {
    pub fn new(
        grid: Grid1D,
        components: [Vec<Complex64>; 3],
        time: f64,
    ) -> Result<Self, GpeError> {
        if components.iter().any(|c| c.len() != grid.n_points) {
            return Err(GpeError::InvalidParams(
                "component length does not match grid".into(),
            ));
        }
        Ok(Self {
            grid,
            components,
            time,
        })
    }

    /// All population in one sublevel, given as samples on `grid`.
    pub fn single(grid: Grid1D, m_f: i32, samples: Vec<Complex64>) -> Result<Self, GpeError> {
        let idx = sublevel_index(m_f)?;
        let mut components = [
            vec![Complex64::new(0.0, 0.0); grid.n_points],
            vec![Complex64::new(0.0, 0.0); grid.n_points],
            vec![Complex64::new(0.0, 0.0); grid.n_points],
        ];
        components[idx] = samples;
        Self::new(grid, components, 0.0)
    }

    pub fn population(&self, m_f: i32) -> Result<f64, GpeError> {
        let idx = sublevel_index(m_f)?;
        Ok(norm_sq(&self.components[idx], self.grid.dx()))
    }

    pub fn total_norm(&self) -> f64 {
        self.components
            .iter()
            .map(|c| norm_sq(c, self.grid.dx()))
            .sum()
    }

    pub fn component_field(&self, m_f: i32) -> Result<ComplexField, GpeError> {
        let idx = sublevel_index(m_f)?;
        Ok(ComplexField::new(
            self.grid.x_min,
            self.grid.x_max,
            self.components[idx].clone(),
            self.time,
        )?)
    }
}

fn sublevel_index(m_f: i32) -> Result<usize, GpeError> {
    match m_f {
        -1 => Ok(0),
        0 => Ok(1),
        1 => Ok(2),
        _ => Err(GpeError::UnsupportedSublevel { m_f }),
    }
}

fn norm_sq(samples: &[Complex64], dx: f64) -> f64 {
    let n = samples.len();
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            w * s.norm_sqr()
        })
        .sum::<f64>()
        * dx
}

/// Optional cosine-ramp absorbing boundary at the lower (x_max) grid edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Absorber {
    /// Width of the absorbing region (m).
    pub width: f64,
    /// Amplitude damping per step at the very edge, in (0, 1].
    pub strength: f64,
}

/// Evolution controls; see module docs for the integrator layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionParams {
    pub dt: f64,
    pub t_final: f64,
    /// Rotating-frame angular frequency ω_f (rad/s).
    pub rotating_frame_omega: f64,
    /// Mean-field coefficient g₁D (J·m); 0 for linear runs.
    pub interaction_g1d: f64,
    pub absorber: Option<Absorber>,
    pub snapshot_interval: f64,
    /// Zero the (0 ↔ +1) coupling entries — isolates the sublevel ladder
    /// for the selection-rule property.
    pub zero_anti_coupling: bool,
    /// Record |ψ₀(x_d)|² at these detector positions.
    pub detectors: Vec<f64>,
    /// Steps between detector samples.
    pub detector_stride: usize,
}

impl EvolutionParams {
    pub fn new(t_final: f64, rotating_frame_omega: f64) -> Self {
        Self {
            dt: DEFAULT_DT,
            t_final,
            rotating_frame_omega,
            interaction_g1d: 0.0,
            absorber: None,
            snapshot_interval: DEFAULT_SNAPSHOT_INTERVAL,
            zero_anti_coupling: false,
            detectors: Vec::new(),
            detector_stride: 10,
        }
    }

    fn validate(&self, rf: &[RfComponent]) -> Result<(), GpeError> {
        if !(self.dt > 0.0 && self.t_final > 0.0) {
            return Err(GpeError::InvalidParams("dt and t_final must be > 0".into()));
        }
        // the step must resolve the largest residual frequency in the
        // rotating frame
        let max_residual = rf
            .iter()
            .map(|c| (c.omega_rf - self.rotating_frame_omega).abs())
            .fold(0.0, f64::max);
        if max_residual > 0.0 {
            let limit = 2.0 * std::f64::consts::PI / (20.0 * max_residual);
            if self.dt >= limit {
                return Err(GpeError::InvalidParams(format!(
                    "dt = {:.3e} s does not resolve the residual detuning {:.3e} rad/s \
                     (need dt < {:.3e} s)",
                    self.dt, max_residual, limit
                )));
            }
        }
        Ok(())
    }
}

/// Sublevel potential V_M(x) = sgn(g_F)·M_F·(½mω_x²x² + ħω_bias) − mgx.
/// For g_F < 0 the M_F = −1 state is trapped, M_F = 0 feels only gravity,
/// and M_F = +1 rides an inverted harmonic potential.
pub fn potentials(
    m_f: i32,
    x: f64,
    trap: &TrapConfig,
    species: &AtomSpecies,
    constants: &PhysicalConstants,
) -> Result<f64, GpeError> {
    sublevel_index(m_f)?;
    let m = species.mass;
    let harmonic = 0.5 * m * trap.omega_x * trap.omega_x * x * x
        + constants.hbar * trap.omega_bias;
    Ok(species.g_f.signum() * m_f as f64 * harmonic - m * constants.g_earth * x)
}

/// Hermitian 3×3 rf coupling (J) in the rotating frame: the ladder entries
/// ⟨0|H|−1⟩ and ⟨+1|H|0⟩ are Σᵢ ħΩ_eff,i·envᵢ(t)·e^{i[(ωᵢ−ω_f)t − θᵢ]}.
/// The lab-frame phase convention matches the analytic engine's rate
/// function: Ω(t) = −(i/ħ)·⟨0|H_lab|−1⟩·e^{−iE₀t/ħ}.
pub fn coupling_matrix(
    rf: &[RfComponent],
    t: f64,
    rotating_frame_omega: f64,
    species: &AtomSpecies,
    constants: &PhysicalConstants,
) -> Result<[[Complex64; 3]; 3], GpeError> {
    let mut ladder = Complex64::new(0.0, 0.0);
    for c in rf {
        let env = c.envelope.eval(t);
        if env == 0.0 {
            continue;
        }
        let omega_eff = effective_coupling(c, species)?;
        let phase = (c.omega_rf - rotating_frame_omega) * t - c.theta;
        ladder += constants.hbar * omega_eff * env * Complex64::from_polar(1.0, phase);
    }
    let z = Complex64::new(0.0, 0.0);
    Ok([
        [z, ladder.conj(), z],
        [ladder, z, ladder.conj()],
        [z, ladder, z],
    ])
}

/// Warns when a tone violates the rotating-wave assumption of the frame
/// (residual detuning not small against the carrier).
pub fn rwa_warning(rf: &[RfComponent], rotating_frame_omega: f64) -> Option<String> {
    let worst = rf
        .iter()
        .map(|c| (c.omega_rf - rotating_frame_omega).abs())
        .fold(0.0, f64::max);
    (worst > 0.1 * rotating_frame_omega).then(|| {
        format!(
            "RWA strained: residual detuning {worst:.3e} rad/s exceeds 10% of the \
             rotating-frame carrier {rotating_frame_omega:.3e} rad/s"
        )
    })
}

/// g₁D = (√(ω_t1·ω_t2)·m/2πħ)·(4πħ²aN/m) = 2ħ·√(ω_t1·ω_t2)·a·N.
pub fn g1d_coefficient(
    species: &AtomSpecies,
    omega_t1: f64,
    omega_t2: f64,
    n_atoms: f64,
    constants: &PhysicalConstants,
) -> f64 {
    2.0 * constants.hbar * (omega_t1 * omega_t2).sqrt() * species.scattering_length * n_atoms
}

/// exp(−iα·C)·ψ for the ladder coupling C (closed form). With
/// r² = 2|c|² the matrix satisfies C³ = r²C, so
/// exp(−iαC) = I − i·sin(αr)/r·C + (cos(αr) − 1)/r²·C².
fn apply_coupling_exp(psi: &mut [Vec<Complex64>; 3], c: Complex64, alpha: f64) {
    let r = (2.0 * c.norm_sqr()).sqrt();
    if r == 0.0 {
        return;
    }
    let (s, co) = (alpha * r).sin_cos();
    let a = Complex64::new(0.0, -s / r);
    let b = (co - 1.0) / (r * r);
    let cc = c.norm_sqr();
    let c2 = c * c;
    let n = psi[0].len();
    for i in 0..n {
        let (p0, p1, p2) = (psi[0][i], psi[1][i], psi[2][i]);
        // C·ψ and C²·ψ for the tridiagonal ladder
        let c_p0 = c.conj() * p1;
        let c_p1 = c * p0 + c.conj() * p2;
        let c_p2 = c * p1;
        let q0 = cc * p0 + c2.conj() * p2;
        let q1 = 2.0 * cc * p1;
        let q2 = c2 * p0 + cc * p2;
        psi[0][i] = p0 + a * c_p0 + b * q0;
        psi[1][i] = p1 + a * c_p1 + b * q1;
        psi[2][i] = p2 + a * c_p2 + b * q2;
    }
}

/// Result of one evolution run.
#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub snapshots: Vec<SpinorField>,
    /// (t, total norm) at every snapshot.
    pub norm_history: Vec<(f64, f64)>,
    /// One recorded density series per requested detector position.
    pub detector_traces: Vec<DetectorRecord>,
}

/// |ψ₀(x, t)|² sampled every `detector_stride` steps at one position.
#[derive(Debug, Clone)]
pub struct DetectorRecord {
    pub x: f64,
    pub times: Vec<f64>,
    pub density: Vec<f64>,
}

impl EvolutionResult {
    /// Untrapped-component snapshots as a stream for the analysis module.
    pub fn to_stream(&self, rf: &[RfComponent]) -> Result<StreamResult, GpeError> {
        let times: Vec<f64> = self.snapshots.iter().map(|s| s.time).collect();
        let fields = self
            .snapshots
            .iter()
            .map(|s| s.component_field(0))
            .collect::<Result<Vec<_>, _>>()?;
        StreamResult::new(times, fields, EngineTag::Numeric, rf.to_vec())
            .map_err(|e| GpeError::InvalidParams(e.to_string()))
    }
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    n: usize,
}

impl FftPair {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            n,
        }
    }

    fn apply_kinetic(&self, psi: &mut Vec<Complex64>, phase: &[Complex64]) {
        self.forward.process(psi);
        for (p, ph) in psi.iter_mut().zip(phase) {
            *p *= ph;
        }
        self.inverse.process(psi);
        let scale = 1.0 / self.n as f64;
        for p in psi.iter_mut() {
            *p *= scale;
        }
    }
}

/// Propagate `initial` under trap + gravity + rf coupling (+ mean field).
pub fn evolve(
    initial: &SpinorField,
    rf: &[RfComponent],
    params: &EvolutionParams,
    trap: &TrapConfig,
    species: &AtomSpecies,
    constants: &PhysicalConstants,
) -> Result<EvolutionResult, GpeError> {
    params.validate(rf)?;
    let grid = initial.grid;
    let n = grid.n_points;
    let dt = params.dt;
    let hbar = constants.hbar;
    let omega_f = params.rotating_frame_omega;

    // rotating-frame potentials: V' = V + M_F·ħω_f·sgn(g_F)·(−1)... the
    // frame diag(e^{iω_f t}, 1, e^{−iω_f t}) shifts the trapped (M_F = −1)
    // level by −ħω_f and the anti-trapped by +ħω_f
    let mut v_frame = [vec![0.0f64; n], vec![0.0f64; n], vec![0.0f64; n]];
    for (idx, m_f) in [(0usize, -1i32), (1, 0), (2, 1)] {
        let shift = m_f as f64 * hbar * omega_f;
        for i in 0..n {
            v_frame[idx][i] = potentials(m_f, grid.x_at(i), trap, species, constants)? + shift;
        }
    }

    // kinetic phase exp(−iħk²dt/2m) on the DFT frequency layout; the FFT
    // period is n·dx for samples spaced dx
    let dx = grid.dx();
    let mut kin = vec![Complex64::new(0.0, 0.0); n];
    for (j, k_slot) in kin.iter_mut().enumerate() {
        let jj = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        let k = 2.0 * std::f64::consts::PI * jj / (n as f64 * dx);
        *k_slot = Complex64::from_polar(1.0, -hbar * k * k * dt / (2.0 * species.mass));
    }
    let fft = FftPair::new(n);

    // absorber amplitude mask (1 outside the ramp)
    let mask: Option<Vec<f64>> = params.absorber.map(|ab| {
        (0..n)
            .map(|i| {
                let x = grid.x_at(i);
                let start = grid.x_max - ab.width;
                if x <= start {
                    1.0
                } else {
                    let u = (x - start) / ab.width;
                    1.0 - ab.strength * (0.5 * std::f64::consts::PI * u).sin().powi(2)
                }
            })
            .collect()
    });

    let n_steps = (params.t_final / dt).round() as usize;
    let snap_every = (params.snapshot_interval / dt).round().max(1.0) as usize;
    let mut psi = initial.components.clone();
    let mut snapshots = vec![initial.clone()];
    let mut norm_history = vec![(initial.time, initial.total_norm())];
    let mut detector_traces: Vec<DetectorRecord> = params
        .detectors
        .iter()
        .map(|&x| DetectorRecord {
            x,
            times: Vec::new(),
            density: Vec::new(),
        })
        .collect();
    let detector_indices: Vec<usize> = params
        .detectors
        .iter()
        .map(|&x_d| {
            let f = (x_d - grid.x_min) / grid.dx();
            (f.floor() as usize).min(n - 2)
        })
        .collect();
    let det_every = params.detector_stride.max(1);
    let linear_run = params.interaction_g1d == 0.0 && mask.is_none();
    let mut prev_norm = initial.total_norm();

    for step in 0..n_steps {
        let t = initial.time + step as f64 * dt;
        // V/2 (+ mean field on the total density)
        half_potential(&mut psi, &v_frame, params.interaction_g1d, dt, hbar, grid.dx());
        // C/2 at the step midpoint
        let mut h = coupling_matrix(rf, t + 0.5 * dt, omega_f, species, constants)?;
        if params.zero_anti_coupling {
            h[1][2] = Complex64::new(0.0, 0.0);
            h[2][1] = Complex64::new(0.0, 0.0);
        }
        debug_assert!(hermitian(&h));
        let ladder = h[1][0];
        let anti = h[2][1];
        let alpha = 0.5 * dt / hbar;
        if anti == ladder {
            apply_coupling_exp(&mut psi, ladder, alpha);
        } else {
            // decoupled ladder (selection-rule mode): only −1 ↔ 0 mix as a
            // two-level rotation
            apply_two_level(&mut psi, ladder, alpha);
        }
        // K
        for comp in psi.iter_mut() {
            fft.apply_kinetic(comp, &kin);
        }
        // C/2, V/2
        if anti == ladder {
            apply_coupling_exp(&mut psi, ladder, alpha);
        } else {
            apply_two_level(&mut psi, ladder, alpha);
        }
        half_potential(&mut psi, &v_frame, params.interaction_g1d, dt, hbar, grid.dx());
        if let Some(m) = &mask {
            for comp in psi.iter_mut() {
                for (p, &f) in comp.iter_mut().zip(m) {
                    *p *= f;
                }
            }
        }

        let t_next = t + dt;
        if !detector_indices.is_empty() && (step + 1) % det_every == 0 {
            for (record, &di) in detector_traces.iter_mut().zip(&detector_indices) {
                let frac = (record.x - grid.x_at(di)) / grid.dx();
                let amp = psi[1][di] * (1.0 - frac) + psi[1][di + 1] * frac;
                record.times.push(t_next);
                record.density.push(amp.norm_sqr());
            }
        }
        if linear_run {
            let norm: f64 = psi.iter().map(|c| norm_sq(c, grid.dx())).sum();
            let drift = (norm - prev_norm).abs();
            if drift > DRIFT_LIMIT * prev_norm.max(1e-300) {
                return Err(GpeError::Instability { t: t_next, drift });
            }
            prev_norm = norm;
        }
        if (step + 1) % snap_every == 0 || step + 1 == n_steps {
            let field = SpinorField::new(grid, psi.clone(), t_next)?;
            if mask.is_none() {
                check_overflow(&field, t_next)?;
            }
            norm_history.push((t_next, field.total_norm()));
            snapshots.push(field);
        }
    }
    Ok(EvolutionResult {
        snapshots,
        norm_history,
        detector_traces,
    })
}

fn half_potential(
    psi: &mut [Vec<Complex64>; 3],
    v_frame: &[Vec<f64>; 3],
    g1d: f64,
    dt: f64,
    hbar: f64,
    _dx: f64,
) {
    let n = psi[0].len();
    for i in 0..n {
        let density = if g1d != 0.0 {
            psi[0][i].norm_sqr() + psi[1][i].norm_sqr() + psi[2][i].norm_sqr()
        } else {
            0.0
        };
        for c in 0..3 {
            let v = v_frame[c][i] + g1d * density;
            psi[c][i] *= Complex64::from_polar(1.0, -v * 0.5 * dt / hbar);
        }
    }
}

/// Two-level rotation of (ψ₋₁, ψ₀) by exp(−iα·[[0, c̄],[c, 0]]).
fn apply_two_level(psi: &mut [Vec<Complex64>; 3], c: Complex64, alpha: f64) {
    let r = c.norm();
    if r == 0.0 {
        return;
    }
    let (s, co) = (alpha * r).sin_cos();
    let n = psi[0].len();
    for i in 0..n {
        let (p0, p1) = (psi[0][i], psi[1][i]);
        psi[0][i] = co * p0 - Complex64::new(0.0, s / r) * c.conj() * p1;
        psi[1][i] = co * p1 - Complex64::new(0.0, s / r) * c * p0;
    }
}

fn hermitian(h: &[[Complex64; 3]; 3]) -> bool {
    for i in 0..3 {
        for j in 0..3 {
            if (h[i][j] - h[j][i].conj()).norm() > 1e-12 * (h[i][j].norm() + 1e-300) {
                return false;
            }
        }
    }
    true
}

fn check_overflow(field: &SpinorField, t: f64) -> Result<(), GpeError> {
    for comp in &field.components {
        let max = comp.iter().map(|s| s.norm()).fold(0.0, f64::max);
        if max == 0.0 {
            continue;
        }
        let edge = comp[0].norm().max(comp[comp.len() - 1].norm());
        let ratio = edge / max;
        if ratio > EDGE_RATIO {
            return Err(GpeError::GridOverflow { t, ratio });
        }
    }
    Ok(())
}

/// Ground state of the trapped sublevel by imaginary-time split-step
/// relaxation (g₁D = 0 gives the displaced-oscillator Gaussian; g₁D > 0
/// relaxes toward the Thomas–Fermi profile).
pub fn ground_state_imaginary_time(
    trap: &TrapConfig,
    species: &AtomSpecies,
    g1d: f64,
    grid: &Grid1D,
    constants: &PhysicalConstants,
) -> Result<ComplexField, GpeError> {
    let n = grid.n_points;
    let hbar = constants.hbar;
    let m = species.mass;
    let dtau = 1e-5;
    let max_iters = 200_000usize;
    let v: Vec<f64> = (0..n)
        .map(|i| potentials(-1, grid.x_at(i), trap, species, constants))
        .collect::<Result<_, _>>()?;

    let dx = grid.dx();
    let k2: Vec<f64> = (0..n)
        .map(|j| {
            let jj = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            let k = 2.0 * std::f64::consts::PI * jj / (n as f64 * dx);
            k * k
        })
        .collect();
    let kin_decay: Vec<Complex64> = k2
        .iter()
        .map(|&kk| Complex64::new((-hbar * kk * dtau / (2.0 * m)).exp(), 0.0))
        .collect();
    let fft = FftPair::new(n);

    // Gaussian seed at the sagged center
    let x0 = trap.sag(constants);
    let sigma0 = trap.ground_width(species, constants);
    let mut psi: Vec<Complex64> = (0..n)
        .map(|i| {
            let x = grid.x_at(i);
            Complex64::new((-(x - x0).powi(2) / (2.0 * sigma0 * sigma0)).exp(), 0.0)
        })
        .collect();
    normalize(&mut psi, grid.dx());

    let energy = |psi: &[Complex64], fft: &FftPair| -> f64 {
        let mut spec = psi.to_vec();
        fft.forward.process(&mut spec);
        let nf = n as f64;
        let kinetic: f64 = spec
            .iter()
            .zip(&k2)
            .map(|(c, &kk)| hbar * hbar * kk / (2.0 * m) * c.norm_sqr())
            .sum::<f64>()
            * grid.dx()
            / (nf * nf);
        let potential: f64 = psi
            .iter()
            .zip(&v)
            .map(|(p, &vv)| (vv + 0.5 * g1d * p.norm_sqr()) * p.norm_sqr())
            .sum::<f64>()
            * grid.dx();
        kinetic + potential
    };

    let mut e_prev = energy(&psi, &fft);
    let mut last_change = f64::INFINITY;
    for it in 0..max_iters {
        // V/2, K, V/2 in imaginary time, then renormalize. The norm decays
        // by e^{−E·dτ/ħ} inside a step, so the mean-field density must be
        // read off the *renormalized* amplitude or the second half-step
        // would see a vanishing nonlinearity.
        for half in 0..2 {
            if half == 1 {
                fft.forward.process(&mut psi);
                for (p, d) in psi.iter_mut().zip(&kin_decay) {
                    *p *= d;
                }
                fft.inverse.process(&mut psi);
                let scale = 1.0 / n as f64;
                for p in psi.iter_mut() {
                    *p *= scale;
                }
            }
            let nrm = norm_sq(&psi, grid.dx());
            for (p, &vv) in psi.iter_mut().zip(&v) {
                let veff = vv + g1d * p.norm_sqr() / nrm;
                *p *= (-veff * 0.5 * dtau / hbar).exp();
            }
        }
        normalize(&mut psi, grid.dx());
        if it % 20 == 19 {
            let e = energy(&psi, &fft);
            last_change = ((e - e_prev) / e.abs().max(1e-300)).abs();
            e_prev = e;
            if last_change < 1e-12 {
                // strip rounding-level imaginary parts; the ground state is
                // real and positive
                for p in psi.iter_mut() {
                    *p = Complex64::new(p.norm(), 0.0);
                }
                return Ok(ComplexField::new(grid.x_min, grid.x_max, psi, 0.0)?);
            }
        }
    }
    Err(GpeError::NonConvergence {
        iterations: max_iters,
        last_change,
    })
}

fn normalize(psi: &mut [Complex64], dx: f64) {
    let norm = norm_sq(psi, dx).sqrt();
    for p in psi.iter_mut() {
        *p /= norm;
    }
}
