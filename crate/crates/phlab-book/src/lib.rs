//! Keeps the guide honest: every chapter under `book/src/` is included here
//! as module documentation, so `cargo test --doc` compiles and runs each of
//! its code blocks against the current `phlab` API. One module per chapter,
//! so a failing snippet names its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/torus-and-maps.md")]
pub mod torus_and_maps {}

#[doc = include_str!("../../../book/src/pasts.md")]
pub mod pasts {}

#[doc = include_str!("../../../book/src/splittings.md")]
pub mod splittings {}

#[doc = include_str!("../../../book/src/lyapunov.md")]
pub mod lyapunov {}

#[doc = include_str!("../../../book/src/leaves.md")]
pub mod leaves {}

#[doc = include_str!("../../../book/src/normal-forms.md")]
pub mod normal_forms {}

#[doc = include_str!("../../../book/src/measures.md")]
pub mod measures {}

#[doc = include_str!("../../../book/src/drift.md")]
pub mod drift {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
