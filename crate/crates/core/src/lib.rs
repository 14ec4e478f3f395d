//! Quasiclassical electron orbits on periodic Fermi surfaces in a magnetic
//! field: tracing, taxonomy, deviation exponents, and transport estimates.
//!
//! Everything is generic over the scalar type through [`num::Real`];
//! concrete `f64` aliases for the main types live at the crate root.

pub mod angular;
pub mod classifier;
pub mod contour;
pub mod dispersion;
pub mod exponents;
pub mod field;
pub mod fitting;
pub mod geom;
pub mod lattice;
pub mod num;
pub mod quasi;
pub mod rng;
pub mod singular;
pub mod strip;
pub mod tracer;
pub mod transport;

pub use num::Real;

/// `f64` instantiations of the main types.
pub type Vec3 = geom::V3<f64>;
pub type Vec2 = geom::V2<f64>;
pub type Mat3 = geom::M33<f64>;
pub type DirectLattice = lattice::DirectLattice<f64>;
pub type ReciprocalLattice = lattice::ReciprocalLattice<f64>;
pub type Harmonic = dispersion::Harmonic<f64>;
pub type FourierDispersion = dispersion::FourierDispersion<f64>;
pub type FieldSetup = field::FieldSetup<f64>;
pub type PlaneSlice = field::PlaneSlice<f64>;
pub type StepControl = tracer::StepControl<f64>;
pub type Trajectory = tracer::Trajectory<f64>;
pub type TrajectoryClass = classifier::TrajectoryClass<f64>;
pub type ClassifyThresholds = classifier::ClassifyThresholds<f64>;
