//! Georeferencing and heading estimation for ships seen by a fixed harbour
//! camera, with the supporting detection-evaluation and feature-extraction
//! machinery.
//!
//! * [`homography`]: image-to-map plane fitting and mapping.
//! * [`geodesy`]: spherical distances, bearings, UTM.
//! * [`maskops`]: instance masks, rasterization, run lengths.
//! * [`slicemerge`]: tiled inference planning and non-maximum suppression.
//! * [`evalmetrics`]: COCO-style mAP and georeferencing error statistics.
//! * [`motionheading`]: heading from dense optical flow.
//! * [`scatter2d`]: first-order wavelet scattering.
//! * [`pipeline`]: file formats and the command layer.

pub mod evalmetrics;
pub mod geodesy;
pub mod homography;
pub mod maskops;
pub mod motionheading;
pub mod pipeline;
pub mod scatter2d;
pub mod slicemerge;

pub use evalmetrics::{BBox, EvalConfig, EvalMode, GtInstance};
pub use geodesy::{EarthModel, GeoPos};
pub use homography::{Correspondence, Homography, PlanarPoint};
pub use maskops::{BinaryMask, PixelCoord, PolygonMask};
pub use slicemerge::{Prediction, SlicePlan};
