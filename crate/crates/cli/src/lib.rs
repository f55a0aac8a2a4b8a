//! HTTP review service over a precision run.

pub mod service;
