//! Coupled piezo-elastodynamic finite elements for a clamped steel strip
//! carrying a piezoceramic disc sensor.
//!
//! The crate covers the whole chain from geometry to inverse problem:
//!
//! * [`mesh`] builds tagged tetrahedral meshes of the beam and disc,
//! * [`fem`] assembles mass, stiffness, coupling, dielectric and electrode
//!   operators (the floating top electrode is imposed weakly),
//! * [`solve`] provides the static preload, modal analysis and the Newmark
//!   transient with an RC load on the electrode,
//! * [`sensitivity`] propagates parameter derivatives through the time loop,
//! * [`ident`] fits damping, beam modulus and circuit parameters to
//!   measured (or synthetic) velocity and voltage records.
//!
//! ```
//! use piezobeam::model::{bernoulli_first_frequency, BeamGeometry, ElasticMaterial};
//!
//! let f1 = bernoulli_first_frequency(&BeamGeometry::reference_strip(), &ElasticMaterial::beam_steel());
//! assert!((f1 - 143.62).abs() < 0.05);
//! ```

pub mod error;
pub mod fem;
pub mod ident;
pub mod io;
pub mod mesh;
pub mod model;
pub mod sensitivity;
pub mod signal;
pub mod solve;
pub mod sparse;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/materials.md")]
    mod materials {}
    #[doc = include_str!("../../../book/src/meshing.md")]
    mod meshing {}
    #[doc = include_str!("../../../book/src/assembly.md")]
    mod assembly {}
    #[doc = include_str!("../../../book/src/modal.md")]
    mod modal {}
    #[doc = include_str!("../../../book/src/transient.md")]
    mod transient {}
    #[doc = include_str!("../../../book/src/sensitivities.md")]
    mod sensitivities {}
    #[doc = include_str!("../../../book/src/identification.md")]
    mod identification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
