//! Phase-field brittle fracture on structured quadrilateral meshes, coupled to a
//! Metropolis–Hastings engine that identifies shear modulus, bulk modulus and
//! critical energy release rate from load-displacement curves.

pub mod bayes;
pub mod constitutive;
pub mod experiments;
pub mod homogeneous1d;
pub mod mesh;
pub mod randomfield;
pub mod solver;
