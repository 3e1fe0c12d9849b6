//! Simulation of the quantum kicked rotor driven by periodic amplitude and
//! phase modulations, which thread its synthetic momentum-space nanotube with
//! an artificial gauge flux.
//!
//! * [`modulation`] builds driving sequences and decides their symmetry class.
//! * [`engine`] propagates states and runs seeded ensembles.
//! * [`observables`] extracts CBS/CFS contrasts, fits and the scaling function.
//! * [`lattice_map`] constructs the equivalent tight-binding nanotube and
//!   checks gauge reducibility independently of the kick sequence.

pub mod engine;
pub mod lattice_map;
pub mod modulation;
pub mod observables;
pub mod rng;
