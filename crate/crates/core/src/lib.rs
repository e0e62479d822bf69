//! Layout-graph driven book cover synthesis.
//!
//! A [`graph::LayoutGraph`] describes the objects of a cover (scene objects,
//! solid regions and the title) and their spatial relations. The graph is
//! embedded by a graph convolution network, each object gets a bounding box,
//! a soft mask and an appearance vector, the pieces are composed into a
//! layout feature map and a residual encoder-decoder renders the final
//! 128x128 image. The placeholder title is then restyled with the user's
//! text.

pub mod checkpoint;
pub mod config;
pub mod cover;
pub mod data;
pub mod disc;
pub mod encoder;
pub mod error;
pub mod generate;
pub mod graph;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod perception;
pub mod service;
pub mod synthesis;
pub mod title;
pub mod train;

pub use error::{Error, Result};
