//! Attention-guided encoder–decoder image matting.
//!
//! The crate covers the whole pipeline on a small, CPU-friendly scale:
//!
//! * [`tensor`], [`ops`], [`graph`] and [`gradcheck`]: a dense `H × W × C`
//!   tensor type, the operators the network needs with hand-written backward
//!   passes, a reverse-mode tape, and a central-difference checker
//!   ([`selfcheck`] runs it over every operator);
//! * [`trimap`]: mask → bounding box → erosion/dilation → trimap;
//! * [`attention`]: attention blocks and attention-guided pooling/unpooling;
//! * [`net`] and [`checkpoint`]: the matting network and its file format;
//! * [`loss`] and [`metrics`]: compositing, training losses and the four
//!   evaluation metrics;
//! * [`data`]: synthetic foreground/background generation, augmentation and
//!   dataset manifests;
//! * [`train`]: Adam, the training loop and dataset evaluation.
//!
//! ```
//! use matting::tensor::{Shape, Tensor};
//! use matting::trimap::{generate_trimap, TrimapConfig};
//!
//! let mask = Tensor::from_fn(Shape::new(32, 32, 1), |y, x, _| {
//!     if (8..24).contains(&y) && (8..24).contains(&x) { 1.0 } else { 0.0 }
//! });
//! let trimap = generate_trimap(&mask, &TrimapConfig::default()).unwrap();
//! assert!(trimap.count(0.5) > 0);
//! ```

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod params;
pub mod selfcheck;
pub mod tensor;
pub mod train;
pub mod trimap;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/trimaps.md")]
    mod trimaps {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/losses-and-metrics.md")]
    mod losses_and_metrics {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
}
