//! Fair association of cache-related user traffic among cache-equipped base
//! stations.
//!
//! The crate is `no_std` (it needs `alloc`) and holds the whole algorithmic
//! side of the project:
//!
//! - [`netgen`]: Poisson station placement, Boolean disc coverage and grid
//!   quadrature of coverage regions.
//! - [`crp`]: the routing problem itself (region-files, demands, routing and
//!   price vectors, objective and Augmented Lagrangian).
//! - [`bucket`]: the exact per-station subproblem solver (bucket filling).
//! - [`solver`]: Jacobi decomposition inner loop and dual ascent outer loop.
//! - [`agents`]: the same method run as round-synchronous message passing
//!   between stations.
//! - [`policies`] and [`metrics`]: the fair policy, two baselines, and load
//!   shares for comparing them.
//!
//! File formats, the CLI and the experiment drivers live in the `cachefair`
//! crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod agents;
pub mod bucket;
pub mod crp;
pub mod error;
pub mod metrics;
pub mod netgen;
pub mod policies;
pub mod solver;
pub mod utility;

pub use agents::{build_topology, run_distributed, DistributedReport, Message, MessageKind, MessageStats, Topology};
pub use bucket::{bucket_fill, local_coefficients, water_level_root, Bucket, BucketFillResult, FillEvent};
pub use crp::{CrpInstance, DualVector, RegionFile, RoutingVector, StationSpec};
pub use error::{Error, Result};
pub use metrics::{aggregate_share, load_shares, share_extremes};
pub use netgen::{
    extract_regions, mean_coverage, radius_for_mean_coverage, sample_ppp, Catalog, FileId,
    NetworkInstance, Point, Region, RegionMap, Station, StationId, Tier, Window,
};
pub use policies::{closest_available, closest_available_per_cell, fair, unsplittable, FairOutcome, PolicyKind};
pub use solver::{
    dqa_solve_primal, dual_step, solve_crp, stationarity, InitialPrices, InnerOutcome, Penalty, Relaxation, Resolved, SolveReport,
    SolverConfig, WarmStart,
};
pub use utility::{Utility, UtilitySpec};
