//! Self-checks: finite-difference gradients and brute-force oracles.

pub mod gradcheck;
pub mod oracles;
pub mod suite;
