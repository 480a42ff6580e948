//! Uncoded cache placement optimization for coded multicast delivery.
//!
//! The crate models a server with `N` files serving `K` users that each own a
//! cache of `M` files. A placement splits every file into subfiles indexed by
//! the user subset caching them; delivery sends XORs of subfiles and exploits
//! repeated requests. On top of that model it provides:
//!
//! * [`combinatorics`]: exact coefficients and request statistics;
//! * [`model`]: instances and the three placement parameterizations;
//! * [`scheme`]: a delivery simulator with exact and sampled average loads;
//! * [`lp`]: a dense two-phase simplex solver;
//! * [`avg_opt`]: average-load optimization and reference schemes;
//! * [`subpack`]: optimization under a per-file subpacketization budget.

pub mod avg_opt;
pub mod combinatorics;
pub mod error;
pub mod lp;
pub mod model;
pub mod scheme;
pub mod subpack;

pub use combinatorics::{enumeration_limit, zipf, DemandStats, Popularity};
pub use error::{Error, Result};
pub use model::{Instance, PartitionParam, SubsetOrder, SymmetricParam, UniformParam};
