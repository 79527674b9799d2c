//! Benchmarking of continuous-variable quantum channels through the
//! entanglement that survives them.
//!
//! A binary coherent-state alphabet `{|α⟩, |−α⟩}` is sent through a lossy,
//! noisy bosonic channel and measured by heterodyne detection. The recorded
//! first and second quadrature moments, together with the known overlap of
//! the input states, constrain the effective bipartite state shared between
//! the sender's qubit degree of freedom and the receiver's mode. Minimizing
//! the negativity over all states consistent with those constraints yields a
//! device-independent certificate: if even the worst-case state is entangled,
//! the channel preserves quantum correlations at that working point.
//!
//! The crate is organized along the pipeline:
//!
//! * [`fock`] — truncated Fock-space primitives: coherent states, quadrature
//!   operators, partial transposition, negativity.
//! * [`channel`] — channel models (loss + excess noise, measure-and-prepare,
//!   phase diffusion) and a deterministic heterodyne sampler.
//! * [`moments`] — streaming moment estimation from heterodyne records.
//! * [`quant`] — the constrained negativity minimization itself, built on an
//!   internal first-order operator-splitting semidefinite solver.
//! * [`bench`] — working-point sweeps over modulation amplitude and phase
//!   noise, and entanglement-rate bookkeeping.
//! * [`io`] — CSV/JSON serialization of sample batches, moment records and
//!   sweep reports.
//! * [`oracle`] — slow, independent reference constructions used by the test
//!   suite to validate the fast paths.

pub mod bench;
pub mod channel;
pub mod error;
pub mod fock;
pub mod io;
pub mod moments;
pub mod oracle;
pub mod quant;

pub use error::{EntError, EntResult};
