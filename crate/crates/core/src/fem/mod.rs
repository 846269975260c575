//! Lagrange finite elements on tetrahedra and assembly of the coupled operators.

mod assembly;
mod postprocess;
pub mod quadrature;
pub mod shape;
mod space;

pub use assembly::{assemble, AssembledSystem, AssemblyOptions, Materials, ReducedSystem};
pub use postprocess::{electrode_charge, energy_audit, nodal_von_mises, von_mises, EnergyAudit};
pub use space::{FieldKind, FieldSpace};
