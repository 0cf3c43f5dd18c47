//! Broker and provider services, their HTTP surface and a client.

pub mod archive;
pub mod broker;
pub mod client;
pub mod clock;
pub mod config;
mod error;
pub mod fixture;
pub mod http;
pub mod provider;
pub mod transport;

pub use error::{ErrorBody, ServiceError};
