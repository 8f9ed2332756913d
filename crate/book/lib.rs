//! The chapters of the guide, compiled as documentation so that every Rust
//! listing in the book runs as a doctest (`cargo test -p fracap-book`).
//! Each chapter gets its own module, so a failing listing is easy to place.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/shapes.md")]
pub mod shapes {}
#[doc = include_str!("src/constants.md")]
pub mod constants {}
#[doc = include_str!("src/capacity.md")]
pub mod capacity {}
#[doc = include_str!("src/stability.md")]
pub mod stability {}
#[doc = include_str!("src/limit.md")]
pub mod limit {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
#[doc = include_str!("src/accuracy.md")]
pub mod accuracy {}
#[doc = include_str!("../README.md")]
pub mod readme {}
