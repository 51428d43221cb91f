pub mod collection;
pub mod consistency;
pub mod dataset;
pub mod embedding;
pub mod retry;
pub mod textmetrics;
#[cfg(feature = "test-support")]
pub mod testing;
