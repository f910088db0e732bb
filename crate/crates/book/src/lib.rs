//! The guide in `book/src`, compiled so that its listings run as doctests.

#![doc = include_str!("../../../book/src/introduction.md")]

#[doc = include_str!("../../../book/src/weights.md")]
pub mod weights {}

#[doc = include_str!("../../../book/src/solving.md")]
pub mod solving {}

#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}

#[doc = include_str!("../../../book/src/distortion.md")]
pub mod distortion {}

#[doc = include_str!("../../../book/src/catalog.md")]
pub mod catalog {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
