//! Analysis toolkit for weighted nonbinary repeat multiple-accumulate (WNRMA)
//! code ensembles: exact weight enumerators, asymptotic minimum-distance
//! growth rates, binary-image spectra, channel bounds, and EXIT-chart
//! convergence analysis on the q-ary symmetric channel.
//!
//! The crate is organized around the analysis pipeline:
//!
//! * [`galois`] — GF(q) arithmetic (prime powers), used by the brute-force
//!   enumeration oracles and the EXIT simulator.
//! * [`enumerators`] — exact input-output weight enumerators of the
//!   constituent encoders and their uniform-interleaver / random-weighter
//!   concatenations, in arbitrary-precision rational arithmetic.
//! * [`spectra`] — asymptotic spectral shape function r(rho) and the growth
//!   rate coefficient rho0.
//! * [`binary_image`] — binary weight enumerators and binary spectral shape
//!   of the random binary image, with the growth rate coefficient delta0.
//! * [`bounds`] — Gilbert-Varshamov bounds, q-ary symmetric channel
//!   capacity, Divsalar's ML-threshold bound, and the binary-input AWGN
//!   Shannon limit.
//! * [`exitsim`] — Monte-Carlo EXIT analysis of iterative decoding on the
//!   q-ary symmetric channel.

pub mod binary_image;
pub mod bounds;
pub mod enumerators;
pub mod exitsim;
pub mod galois;
pub mod spectra;
pub mod util;

pub use enumerators::{EnsembleParams, WeightTable};
pub use galois::{FieldElement, FieldSpec};
pub use spectra::{GrowthRate, SpectralConfig, SpectralPoint};
