pub mod committee;
pub mod datastore;
pub mod erasure;
pub mod harness;
pub mod ids;
pub mod landmarks;
pub mod net;
pub mod netgen;
pub mod rng;
pub mod walks;
