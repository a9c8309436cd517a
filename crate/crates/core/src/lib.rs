//! Numerical experiments on Fredholm and Witten indices: Toeplitz operators
//! on half-integer Fourier lattices, heat-trace Witten indices of 1D Dirac
//! pairs, and Levinson's theorem for 1D Schrödinger scattering.

pub mod cli;
pub mod conventions;
pub mod grid;
pub mod linalg;
pub mod quadrature;
pub mod scattering;
pub mod toeplitz;
pub mod witten;
