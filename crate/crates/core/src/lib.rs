//! Collocation ETL: extract granules from a geostationary imager store and a
//! polar profiler store, normalize them into a common granule model, match
//! profiles to fixed-grid pixels in time and space, and load the merged
//! records into a catalogued product store.

pub mod colloc;
pub mod geodesy;
pub mod granule;
pub mod loader;
pub mod pipeline;
pub mod sources;
pub mod synthgen;
pub mod time;

pub use time::UtcMicros;
