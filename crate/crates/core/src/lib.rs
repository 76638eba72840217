//! Numerical laboratory for partially hyperbolic skew products
//! `F(x, y) = (A x, f_x(y))` over Anosov automorphisms of the 2-torus with
//! circle fibers: certificates, attractor estimates, invariant leaves and
//! the suites that check them against each other.

pub mod circle;
pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod limitsets;
pub mod manifolds;
pub mod presets;
pub mod seed;
pub mod skew;
pub mod torus;

pub use circle::{CircleMap, Harmonic, Lift, OrbitClass};
pub use config::{parse_config, parse_config_str, RunConfig};
pub use error::{Error, Result, ViolatedSide};
pub use experiments::{Branch, Entry, Status, SuiteReport};
pub use limitsets::{AttractorKind, CellSet, Grid3, VisitHistogram};
pub use manifolds::{FiberPeriodicPoint, LeafGraph};
pub use skew::{Certificate, FiberFamily, Inverse, Invertible, PointX, SkewProduct, SkewSystem};
pub use torus::{LeafKind, ToralAutomorphism, TorusPoint};
