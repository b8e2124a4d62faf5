//! Geometric multi-resolution analysis of point clouds.
//!
//! The pipeline: a multiscale binary partition of the data ([`tree`]), local
//! PCA planes and inter-scale wavelet bases on every cell ([`wavelets`]),
//! fast forward/inverse wavelet transforms ([`transforms`]), an orthogonal
//! variant with mutually orthogonal bases along tree paths ([`ortho`]),
//! encoding-cost-driven tree pruning and SVD baselines ([`prune`]),
//! out-of-sample expansion ([`oos`]) and a per-scale generative model
//! ([`genmodel`]).

pub mod cloud;
pub mod error;
pub mod genmodel;
pub mod linalg;
pub mod oos;
pub mod ortho;
pub mod prune;
pub mod storage;
pub mod synth;
pub mod transforms;
pub mod tree;
pub mod wavelets;

pub use cloud::{load_cloud, CloudFormat, PointCloud};
pub use error::{Error, Result};
pub use linalg::{Spectrum, SubspaceBasis};
pub use synth::{generate, GeneratorKind, GeneratorSpec};
pub use tree::{build_tree, NodeKey, PartitionTree, SplitMethod, StoppingRule};
pub use transforms::{fgwt, fgwt_batch, igwt, GwtCoefficients};
pub use wavelets::{construct_gmra, DimensionPolicy, GmraModel, GmraVariants, PrecisionMode};
pub use ortho::{construct_ortho, ortho_fgwt, ortho_igwt, OrthoGmraModel};
pub use prune::{prune, PrunedForest};
pub use genmodel::{fit_scale_model, hausdorff, HausdorffMode};
pub use oos::{assign_leaf, expand_oos};
