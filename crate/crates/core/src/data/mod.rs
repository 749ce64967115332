//! Data sources: IDX image files, interpolated image time series, and the
//! Lorenz system simulator.

pub mod idx;
pub mod interp;
pub mod lorenz;

pub use idx::{load_idx, write_idx, ImageDataset};
pub use interp::{anchor_positions, interpolation_series, InterpSeries, ANCHOR_COUNT, DEFAULT_FRAMES};
pub use lorenz::{
    attractor_assignment, lorenz_simulate, make_lorenz_corpus, LorenzCorpus, LorenzParams, Trajectory,
};
