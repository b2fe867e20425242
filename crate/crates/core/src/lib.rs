//! Deterministic symbolic backbone for compositional song generation.
//!
//! The pipeline runs from a vocal score and lyrics through harmonization,
//! register matching, condition derivation and window planning to a stub
//! accompaniment renderer, a mixer and objective metrics. The accompaniment
//! generator sits behind [`render::AccompanimentGenerator`] so neural
//! implementations can replace the stub.

pub mod audio;
pub mod beats;
pub mod chords;
pub mod conditioning;
pub mod lyrics;
pub mod score;
pub mod score_io;
pub mod harmonizer;
pub mod metrics;
pub mod planner;
pub mod prep;
pub mod render;
pub mod pipeline;
