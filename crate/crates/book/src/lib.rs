//! The guide under `book/`, compiled so that `cargo test` runs its code
//! snippets as doctests. One module per chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("../../../book/src/topics.md")]
pub mod topics {}
#[doc = include_str!("../../../book/src/raster.md")]
pub mod raster {}
#[doc = include_str!("../../../book/src/matching.md")]
pub mod matching {}
#[doc = include_str!("../../../book/src/protocol.md")]
pub mod protocol {}
#[doc = include_str!("../../../book/src/loadgen.md")]
pub mod loadgen {}
