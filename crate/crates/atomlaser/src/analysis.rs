//! Observables extracted from outcoupled streams: density profiles,
//! detector-point time traces, beat visibility, and cross-engine profile
//! comparisons.
//!
//! "Intensity of the stream" means the density |Ψ(x_d, t)|² at a fixed
//! detector point; the probability flux j = (ħ/m)·Im(ψ*∂ₓψ) is available
//! as an optional alternative observable. Visibility is extrema-based,
//! V = (I_max − I_min)/(I_max + I_min), which stays robust on slowly
//! enveloped beats where a Fourier-sideband ratio would smear.

use crate::analytic::StreamResult;
use crate::basis::ComplexField;
use crate::physconfig::{effective_coupling, AtomSpecies, PhysError, PhysicalConstants};
use num_complex::Complex64;
use thiserror::Error;

/// Minimum snapshots per beat period for a usable detector trace.
const MIN_SAMPLES_PER_BEAT: f64 = 10.0;
/// Extrema below this fraction of the trace maximum are noise.
const NOISE_FLOOR: f64 = 1e-12;
/// Relative variation below which a trace counts as constant.
const FLAT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(
        "beat undersampled: {samples_per_period:.1} snapshots per beat period, need >= {MIN_SAMPLES_PER_BEAT}"
    )]
    UndersampledBeat { samples_per_period: f64 },
    #[error("window holds {found} identified oscillation maxima; need >= 3 full beat periods")]
    TooFewPeriods { found: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("{0}")]
    OutOfRange(String),
    #[error(transparent)]
    Phys(#[from] PhysError),
}

/// |ψ|² on the field's grid at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    pub x_min: f64,
    pub x_max: f64,
    /// Density samples (1/m).
    pub density: Vec<f64>,
    pub time: f64,
}

impl DensityProfile {
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.density.len() - 1) as f64
    }

    pub fn x_at(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    /// Trapezoid integral; equals the outcoupled norm of the source field.
    pub fn integral(&self) -> f64 {
        let n = self.density.len();
        self.density
            .iter()
            .enumerate()
            .map(|(i, d)| if i == 0 || i == n - 1 { 0.5 * d } else { *d })
            .sum::<f64>()
            * self.dx()
    }

    pub fn peak(&self) -> f64 {
        self.density.iter().copied().fold(0.0, f64::max)
    }
}

/// Pointwise |ψ|².
pub fn density(field: &ComplexField) -> DensityProfile {
    DensityProfile {
        x_min: field.x_min,
        x_max: field.x_max,
        density: field.samples.iter().map(|s| s.norm_sqr()).collect(),
        time: field.timestamp,
    }
}

/// Density at a fixed point as a function of time.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorTrace {
    pub detector_x: f64,
    pub times: Vec<f64>,
    /// |Ψ(x_d, t)|² (1/m).
    pub density: Vec<f64>,
}

/// Interpolated |Ψ(x_d, t)|² across a stream's snapshots. Fails when the
/// snapshot cadence cannot resolve the fastest beat among the stream's rf
/// tones.
pub fn detector_trace(stream: &StreamResult, x_d: f64) -> Result<DetectorTrace, AnalysisError> {
    let grid = &stream.fields[0];
    if x_d < grid.x_min || x_d > grid.x_max {
        return Err(AnalysisError::OutOfRange(format!(
            "detector at {x_d:.4e} m outside grid [{:.4e}, {:.4e}]",
            grid.x_min, grid.x_max
        )));
    }
    if let Some(beat) = shortest_beat(stream) {
        let cadence = stream
            .times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max);
        let samples_per_period = beat / cadence;
        // rounding tolerance so an exact 10-per-period cadence passes
        if samples_per_period < MIN_SAMPLES_PER_BEAT * (1.0 - 1e-9) {
            return Err(AnalysisError::UndersampledBeat { samples_per_period });
        }
    }
    let density = stream
        .fields
        .iter()
        .map(|f| interpolate(f, x_d).norm_sqr())
        .collect();
    Ok(DetectorTrace {
        detector_x: x_d,
        times: stream.times.clone(),
        density,
    })
}

fn shortest_beat(stream: &StreamResult) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (i, a) in stream.rf.iter().enumerate() {
        for b in stream.rf.iter().skip(i + 1) {
            let d = (a.omega_rf - b.omega_rf).abs();
            if d > 0.0 {
                let period = 2.0 * std::f64::consts::PI / d;
                best = Some(best.map_or(period, |p: f64| p.min(period)));
            }
        }
    }
    best
}

fn interpolate(field: &ComplexField, x: f64) -> Complex64 {
    let dx = field.dx();
    let f = ((x - field.x_min) / dx).clamp(0.0, (field.samples.len() - 2) as f64);
    let i = f.floor() as usize;
    let w = f - i as f64;
    field.samples[i] * (1.0 - w) + field.samples[i + 1] * w
}

/// Beat contrast at a detector point.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityReport {
    pub detector_x: f64,
    /// (t_start, t_end) of the analyzed window (s).
    pub window: (f64, f64),
    /// (I_max − I_min)/(I_max + I_min) over identified extrema, in [0, 1].
    pub v: f64,
    /// Beat angular frequency from the mean maxima spacing (rad/s).
    pub beat_frequency_measured: f64,
    /// Phase φ of I(t) ≈ Ī·[1 + V·cos(ω_b t + φ)] over the window (rad).
    pub envelope_phase: f64,
}

impl std::fmt::Display for VisibilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{{detector_x: {:.9e}, V: {:.9}, beat_hz: {:.6}, phase_rad: {:.9}}}",
            self.detector_x,
            self.v,
            self.beat_frequency_measured / (2.0 * std::f64::consts::PI),
            self.envelope_phase
        )
    }
}

/// Parabolically refined local extremum.
#[derive(Debug, Clone, Copy)]
struct Extremum {
    t: f64,
    value: f64,
}

fn refined_extrema(times: &[f64], values: &[f64], maxima: bool) -> Vec<Extremum> {
    let mut out = Vec::new();
    for i in 1..values.len() - 1 {
        let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
        let hit = if maxima {
            b > a && b >= c
        } else {
            b < a && b <= c
        };
        if !hit {
            continue;
        }
        // parabola through the three samples
        let denom = a - 2.0 * b + c;
        let (dt, dv) = if denom.abs() > 0.0 {
            let s = 0.5 * (a - c) / denom;
            (s * (times[i + 1] - times[i]), -0.25 * (a - c) * s)
        } else {
            (0.0, 0.0)
        };
        out.push(Extremum {
            t: times[i] + dt,
            value: b + dv,
        });
    }
    out
}

/// Extrema-based visibility over `window` = (t_start, t_end). A constant
/// trace reports V = 0; a clean beat needs at least three identified
/// maxima in the window.
pub fn visibility(
    trace: &DetectorTrace,
    window: (f64, f64),
) -> Result<VisibilityReport, AnalysisError> {
    let (t0, t1) = window;
    let idx: Vec<usize> = trace
        .times
        .iter()
        .enumerate()
        .filter(|(_, t)| **t >= t0 && **t <= t1)
        .map(|(i, _)| i)
        .collect();
    if idx.len() < 4 {
        return Err(AnalysisError::OutOfRange(format!(
            "window [{t0:.4e}, {t1:.4e}] s holds only {} trace samples",
            idx.len()
        )));
    }
    let times: Vec<f64> = idx.iter().map(|&i| trace.times[i]).collect();
    let values: Vec<f64> = idx.iter().map(|&i| trace.density[i]).collect();
    let vmax = values.iter().copied().fold(f64::MIN, f64::max);
    let vmin = values.iter().copied().fold(f64::MAX, f64::min);
    if vmax - vmin <= FLAT_TOLERANCE * vmax.abs().max(1e-300) {
        return Ok(VisibilityReport {
            detector_x: trace.detector_x,
            window,
            v: 0.0,
            beat_frequency_measured: 0.0,
            envelope_phase: 0.0,
        });
    }
    let floor = NOISE_FLOOR * vmax;
    let maxima: Vec<Extremum> = refined_extrema(&times, &values, true)
        .into_iter()
        .filter(|e| e.value.abs() > floor)
        .collect();
    let minima = refined_extrema(&times, &values, false);
    if maxima.len() < 3 {
        return Err(AnalysisError::TooFewPeriods {
            found: maxima.len(),
        });
    }
    let i_max = maxima.iter().map(|e| e.value).sum::<f64>() / maxima.len() as f64;
    let i_min = if minima.is_empty() {
        vmin
    } else {
        minima.iter().map(|e| e.value).sum::<f64>() / minima.len() as f64
    };
    let v = ((i_max - i_min) / (i_max + i_min)).clamp(0.0, 1.0);
    let spacing = (maxima.last().unwrap().t - maxima[0].t) / (maxima.len() - 1) as f64;
    let beat = 2.0 * std::f64::consts::PI / spacing;
    // quadrature least-squares phase of the beat component
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut cs = 0.0;
    let mut sn = 0.0;
    for (t, val) in times.iter().zip(&values) {
        let d = val - mean;
        cs += d * (beat * t).cos();
        sn += d * (beat * t).sin();
    }
    let envelope_phase = (-sn).atan2(cs);
    Ok(VisibilityReport {
        detector_x: trace.detector_x,
        window,
        v,
        beat_frequency_measured: beat,
        envelope_phase,
    })
}

/// Time shift that best aligns `b` onto `a` (positive = `b` lags), from
/// the cross-correlation of the mean-removed traces, parabolically
/// refined. The search spans ±`max_lag` seconds.
pub fn envelope_shift(
    a: &DetectorTrace,
    b: &DetectorTrace,
    max_lag: f64,
) -> Result<f64, AnalysisError> {
    if a.times.len() != b.times.len()
        || a.times
            .iter()
            .zip(&b.times)
            .any(|(x, y)| (x - y).abs() > 1e-12 * x.abs().max(1.0))
    {
        return Err(AnalysisError::GridMismatch(
            "traces must share the same time samples".into(),
        ));
    }
    let n = a.times.len();
    if n < 8 {
        return Err(AnalysisError::OutOfRange("trace too short".into()));
    }
    let dt = (a.times[n - 1] - a.times[0]) / (n - 1) as f64;
    let lag_max = ((max_lag / dt).round() as i64).clamp(1, n as i64 / 2);
    let mean_a = a.density.iter().sum::<f64>() / n as f64;
    let mean_b = b.density.iter().sum::<f64>() / n as f64;
    let da: Vec<f64> = a.density.iter().map(|v| v - mean_a).collect();
    let db: Vec<f64> = b.density.iter().map(|v| v - mean_b).collect();
    let corr = |lag: i64| -> f64 {
        let mut s = 0.0;
        let mut cnt = 0.0;
        for i in 0..n as i64 {
            let j = i - lag;
            if j >= 0 && j < n as i64 {
                s += da[j as usize] * db[i as usize];
                cnt += 1.0;
            }
        }
        s / cnt
    };
    let mut best = (0i64, f64::MIN);
    for lag in -lag_max..=lag_max {
        let c = corr(lag);
        if c > best.1 {
            best = (lag, c);
        }
    }
    // parabolic refinement around the best integer lag
    let (l, c0) = best;
    let (cm, cp) = (corr(l - 1), corr(l + 1));
    let denom = cm - 2.0 * c0 + cp;
    let frac = if denom.abs() > 0.0 {
        (0.5 * (cm - cp) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Ok((l as f64 + frac) * dt)
}

/// Relative L² distance ‖a − c·b‖/‖a‖, with c = ⟨a,b⟩/⟨b,b⟩ when
/// `rescale` is set (shape comparison) and c = 1 otherwise. Two zero
/// profiles compare as 0.
pub fn compare_profiles(
    a: &DensityProfile,
    b: &DensityProfile,
    rescale: bool,
) -> Result<f64, AnalysisError> {
    if a.density.len() != b.density.len()
        || (a.x_min - b.x_min).abs() > 1e-9
        || (a.x_max - b.x_max).abs() > 1e-9
    {
        return Err(AnalysisError::GridMismatch(format!(
            "profile grids differ: [{:.4e}, {:.4e}] x {} vs [{:.4e}, {:.4e}] x {}",
            a.x_min,
            a.x_max,
            a.density.len(),
            b.x_min,
            b.x_max,
            b.density.len()
        )));
    }
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let na = dot(&a.density, &a.density);
    let nb = dot(&b.density, &b.density);
    if na == 0.0 && nb == 0.0 {
        return Ok(0.0);
    }
    let c = if rescale && nb > 0.0 {
        dot(&a.density, &b.density) / nb
    } else {
        1.0
    };
    let diff2: f64 = a
        .density
        .iter()
        .zip(&b.density)
        .map(|(x, y)| (x - c * y).powi(2))
        .sum();
    if na == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((diff2 / na).sqrt())
}

/// Side-by-side drive intensity and stream density at one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct RfStreamReport {
    pub times: Vec<f64>,
    /// |Σᵢ Ω_eff,i·envᵢ(t)·e^{−i(ωᵢt+θᵢ)}|² (rad²/s²).
    pub drive_intensity: Vec<f64>,
    pub stream_density: Vec<f64>,
    pub drive_visibility: f64,
    pub stream_visibility: f64,
}

/// Aligns the drive interference pattern with the smoothed pattern in the
/// stream. For a two-tone drive the drive visibility is the phasor value
/// 2A₁A₂/(A₁² + A₂²); otherwise it is measured from the intensity series
/// like the stream's.
pub fn rf_vs_stream_report(
    stream: &StreamResult,
    x_d: f64,
    window: (f64, f64),
    species: &AtomSpecies,
) -> Result<RfStreamReport, AnalysisError> {
    let trace = detector_trace(stream, x_d)?;
    let amps: Vec<f64> = stream
        .rf
        .iter()
        .map(|c| effective_coupling(c, species))
        .collect::<Result<_, _>>()?;
    let drive_intensity: Vec<f64> = trace
        .times
        .iter()
        .map(|&t| {
            let sum: Complex64 = stream
                .rf
                .iter()
                .zip(&amps)
                .map(|(c, &a)| {
                    a * c.envelope.eval(t) * Complex64::from_polar(1.0, -(c.omega_rf * t + c.theta))
                })
                .sum();
            sum.norm_sqr()
        })
        .collect();
    let drive_visibility = if amps.len() == 2 {
        2.0 * amps[0] * amps[1] / (amps[0] * amps[0] + amps[1] * amps[1])
    } else {
        let drive_trace = DetectorTrace {
            detector_x: x_d,
            times: trace.times.clone(),
            density: drive_intensity.clone(),
        };
        visibility(&drive_trace, window)?.v
    };
    let stream_visibility = visibility(&trace, window)?.v;
    Ok(RfStreamReport {
        times: trace.times,
        drive_intensity,
        stream_density: trace.density,
        drive_visibility,
        stream_visibility,
    })
}

/// Probability flux j = (ħ/m)·Im(ψ*∂ₓψ) by central differences (one-sided
/// at the ends).
pub fn flux(
    field: &ComplexField,
    species: &AtomSpecies,
    constants: &PhysicalConstants,
) -> Vec<f64> {
    let n = field.samples.len();
    let dx = field.dx();
    let scale = constants.hbar / species.mass;
    (0..n)
        .map(|i| {
            let deriv = if i == 0 {
                (field.samples[1] - field.samples[0]) / dx
            } else if i == n - 1 {
                (field.samples[n - 1] - field.samples[n - 2]) / dx
            } else {
                (field.samples[i + 1] - field.samples[i - 1]) / (2.0 * dx)
            };
            scale * (field.samples[i].conj() * deriv).im
        })
        .collect()
}

/// CSV with header `x_m,density_per_m`.
pub fn profile_csv(profile: &DensityProfile) -> String {
    let mut out = String::from("x_m,density_per_m\n");
    for (i, d) in profile.density.iter().enumerate() {
        out.push_str(&format!("{:.9e},{:.9e}\n", profile.x_at(i), d));
    }
    out
}

/// CSV with header `t_s,density_per_m,drive_intensity`; the drive column
/// is 0 when no drive series is supplied.
pub fn trace_csv(trace: &DetectorTrace, drive: Option<&[f64]>) -> String {
    let mut out = String::from("t_s,density_per_m,drive_intensity\n");
    for (i, (t, d)) in trace.times.iter().zip(&trace.density).enumerate() {
        let dr = drive.map_or(0.0, |dv| dv[i]);
        out.push_str(&format!("{t:.9e},{d:.9e},{dr:.9e}\n"));
    }
    out
}
