//! Morse graphs and homology Conley indices of maps from rigorous box enclosures.
//!
//! A map is given through a [`oracles::MapOracle`] that encloses the image of
//! any box. On a uniform cubical grid the enclosures define a multivalued
//! box map ([`outer_approx`]); its recurrent strongly connected components
//! ordered by reachability form the Morse graph ([`graph_dynamics`]); each
//! node gets a Conley index computed from cubical relative homology over a
//! prime field ([`homology`], [`conley`]). [`compare`] checks that a fine
//! Morse graph projects onto a coarse one.

pub mod analysis;
pub mod boxset;
pub mod cli;
pub mod compare;
pub mod conley;
pub mod field;
pub mod graph_dynamics;
pub mod grid;
pub mod homology;
pub mod oracles;
pub mod outer_approx;
