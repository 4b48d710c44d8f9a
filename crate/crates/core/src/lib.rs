//! Interval observers with a family of output-injection gains.
//!
//! The upper and lower frames are driven by the row-wise minimum (resp.
//! maximum) over several gains, which keeps the true state framed while
//! tightening the interval relative to any single gain.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod exprlang;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod observer;
pub mod sim;
