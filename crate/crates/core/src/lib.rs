//! Geodesics, optimal synthesis, conjugate points and Hausdorff volume for
//! 2-step nilpotent sub-Riemannian groups of corank one and two.

pub mod conjugate;
pub mod error;
pub mod expmap;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod quaternion;
pub mod sampling;
pub mod skew;
pub mod special;
pub mod synthesis;
pub mod volume;

pub use error::{Error, Result};
pub use expmap::{geodesic_closed_form, geodesic_ode, GeodesicPoint};
pub use model::{normalize, reduce_frame, Covector, MetricSpec, ReducedFrame};
pub use quaternion::{classify_pair, PairClassification, PairKind, QuatDecomp, SigmaClass};
pub use skew::{block_diagonalize, BlockDiagForm, SkewMatrix};
pub use conjugate::{cut_equals_conjugate, factor_at_cut, first_conjugate_time, jacobian_full, jacobian_reduced, CutFactorization, CutConjugateVerdict, JacobianValue};
pub use oracle::{brute_force_distance, brute_force_distance_with, OracleConfig, OracleResult};
pub use quaternion::{decompose, eig_moduli_quat};
pub use synthesis::{cut_time, distance_in_cut_domain, maxwell_partner, recover_covector, MaxwellPair};
pub use volume::{density, family_sweep, nilpotent_ball_volume, unit_ball_volume, QuadratureConfig, QuadratureMode, SweepTable, VolumeResult};
