//! Numerical toolkit for simple pp-wave spacetimes built from curves of flat
//! metrics on a torus.
//!
//! The pipeline: gauge a curve of spatial metrics to divergence- and
//! trace-free motion, solve the scale ODE for the leafwise volume root,
//! solve leafwise Poisson equations for the lapse, assemble the Lorentzian
//! block metric with a prescribed null Ricci profile, and verify the claimed
//! identities (curvature blocks, gauge invariance, parallel spinor transport,
//! mapping-torus rigidity) against independent oracles.

pub mod elliptic;
pub mod gauge;
pub mod grid;
pub mod interp;
pub mod linalg;
pub mod moduli;
pub mod oracle;
pub mod report;
pub mod riemann;
pub mod runner;
pub mod scale;
pub mod scenario;
pub mod spectral;
pub mod spinor;
pub mod split;
pub mod wave;
