//! Continuous ego-motion estimation from dense flow and inverse depth.
//!
//! The camera motion over a small frame interval is modelled as an
//! instantaneous twist `T = (tau, omega)`. Given per-pixel inverse depth
//! `rho`, the image-plane motion field is linear in the twist,
//! `v(x) = rho(x) A(x) tau + B(x) omega`, so fitting a twist to a dense
//! flow field is a 6-unknown weighted least-squares problem and the
//! composition of fit and resynthesis is a linear projection of flow onto
//! the 6-dimensional subspace of ego-motion fields.
//!
//! This crate holds the numerical core: camera geometry and motion-field
//! synthesis ([`geometry`]), the weighted/robust solve and projection
//! ([`egomotion`]), static/dynamic two-layer decomposition ([`layers`]),
//! bilinear warping, a classical variational flow estimator and the
//! photometric/projection losses ([`flow`]), trajectory error metrics
//! ([`eval`]) and a synthetic scene oracle ([`synth`]). Dataset ingestion,
//! file formats and the command-line pipeline live in the companion
//! `egoflow` crate.
//!
//! The crate is `no_std`-compatible (requires `alloc`); the default `std`
//! feature only toggles the standard library in dependencies.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod egomotion;
pub mod eval;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod layers;
pub mod synth;

pub use egomotion::{fit_egomotion, irls_fit, project_flow, EgoFit, PixelWeights};
pub use geometry::{CameraIntrinsics, CameraVelocity, Pose};
pub use grid::{FlowField, Grid, Image, InverseDepthMap, Mask, MotionField};
