//! One-dimensional simulator of rf-driven atom-laser output coupling from a
//! magnetic trap into gravity.
//!
//! Two independent engines produce the outcoupled beam:
//!
//! * [`analytic`] — weak-coupling wave-packet solution: the beam is the
//!   convolution of an outcoupling rate function with the free-falling
//!   instantaneous outcoupled state, or equivalently a continuous loading of
//!   the Airy continuum ([`basis`]).
//! * [`gpe`] — split-step Fourier evolution of the three Zeeman components
//!   (trapped, untrapped, anti-trapped) with time-dependent rf coupling and
//!   an optional mean-field interaction term.
//!
//! [`analysis`] turns stream results from either engine into density
//! profiles, detector time traces, and interference-visibility reports.
//! [`cli`] orchestrates runs, sweeps, and cross-engine comparisons from
//! config files or built-in figure presets.

pub mod airy;
pub mod analysis;
pub mod analytic;
pub mod basis;
pub mod cli;
pub mod config;
pub mod gpe;
pub mod physconfig;
