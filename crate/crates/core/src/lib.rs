pub mod cluster;
pub mod features;
pub mod geo;
pub mod ingest;
pub mod mapmatch;
pub mod network;
pub mod norms;
pub mod signal;
pub mod stats;
pub mod synth;
