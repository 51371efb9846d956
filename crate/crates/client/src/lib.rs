//! Thin async client for the mixdr HTTP service.
//!
//! The [`api`] module holds the wire types and is always available; the
//! client itself sits behind the default `http` feature.

pub mod api;

#[cfg(feature = "http")]
mod http;

#[cfg(feature = "http")]
pub use http::{Client, ClientError};
