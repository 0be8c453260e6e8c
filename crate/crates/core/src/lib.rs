//! Capability discovery for agent ecosystems.
//!
//! Agents announce structured capability profiles ([`profile`]); profiles are
//! embedded into a shared vector space ([`embed`]) and compressed into short
//! product-quantized codes ([`codebook`]). Task queries are answered by an
//! asymmetric-distance scan over the codes followed by multi-criteria ranking
//! ([`index`]), optionally through a query adapter that is trained
//! continually with experience replay ([`continual`]). [`registry`] ties the
//! pipeline together behind an append-only event log, and [`bench`] holds the
//! evaluation harness and baselines.

mod binio;

pub mod bench;
pub mod codebook;
pub mod continual;
pub mod embed;
pub mod index;
pub mod kmeans;
pub mod profile;
pub mod registry;

pub use binio::FormatError;
