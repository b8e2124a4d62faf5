//! Fast forward and inverse geometric wavelet transforms, plus coefficient
//! thresholding.
//!
//! The forward pass starts from the leaf scaling coefficients
//! `p_leaf = Φ_leafᵀ(x - c_leaf)` and walks to the root using only the small
//! cached matrices: wavelet blocks `q_j = (Ψ_jᵀ Φ_j) p_j` and scaling
//! recursions `p_j = (Φ_jᵀ Φ_leaf) p_leaf + Φ_jᵀ(c_leaf - c_j)`. A point off
//! the model is first replaced by its leaf projection, with the residual
//! recorded.
//!
//! The inverse pass rebuilds `x̂ = Ψ_0 q_0 + w_0 + Σ_{j>0} Q_j` where
//! `Q_j = Ψ_j q_j + w_j - Φ_{j-1} Φ_{j-1}ᵀ Σ_{l>j} Q_l`; without tangential
//! corrections the sum is plain. Truncating blocks below a scale reproduces
//! the fine-to-coarse approximations of that scale.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::tree::NodeKey;
use crate::wavelets::GmraModel;

/// The discrete geometric wavelet transform of one point: blocks
/// `(q_J; ...; q_1; p_0)` along the root-to-leaf path.
#[derive(Debug, Clone, PartialEq)]
pub struct GwtCoefficients {
    model_id: u64,
    ambient_dim: usize,
    /// Root-to-leaf cell path.
    path: Vec<NodeKey>,
    /// Fine-to-coarse blocks: `blocks[i]` belongs to `path[path.len()-1-i]`;
    /// the last block is the root scaling block `p_0`.
    blocks: Vec<DVector<f64>>,
    /// `‖x - x_J‖` for inputs not on the model.
    projection_residual: f64,
}

impl GwtCoefficients {
    pub(crate) fn from_parts(
        model_id: u64,
        ambient_dim: usize,
        path: Vec<NodeKey>,
        blocks: Vec<DVector<f64>>,
        projection_residual: f64,
    ) -> Self {
        Self {
            model_id,
            ambient_dim,
            path,
            blocks,
            projection_residual,
        }
    }

    pub fn model_id(&self) -> u64 {
        self.model_id
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn path(&self) -> &[NodeKey] {
        &self.path
    }

    pub fn leaf(&self) -> NodeKey {
        *self.path.last().expect("path never empty")
    }

    pub fn blocks(&self) -> &[DVector<f64>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.blocks
    }

    pub fn projection_residual(&self) -> f64 {
        self.projection_residual
    }

    /// The block at a given scale, if the path reaches it.
    pub fn block_for_scale(&self, scale: usize) -> Option<&DVector<f64>> {
        let leaf_scale = self.leaf().scale;
        if scale > leaf_scale {
            return None;
        }
        Some(&self.blocks[leaf_scale - scale])
    }

    /// Total number of coefficient slots.
    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(DVector::len).sum()
    }

    /// Number of nonzero coefficient slots.
    pub fn nonzero_len(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.iter().filter(|&&v| v != 0.0).count())
            .sum()
    }

    /// (scale, block) pairs fine to coarse.
    pub fn scale_blocks(&self) -> impl Iterator<Item = (usize, &DVector<f64>)> {
        let leaf_scale = self.leaf().scale;
        self.blocks
            .iter()
            .enumerate()
            .map(move |(i, b)| (leaf_scale - i, b))
    }
}

/// Forward transform of a training point through its own leaf cell.
pub fn fgwt_training(model: &GmraModel, cloud: &PointCloud, index: usize) -> Result<GwtCoefficients> {
    let leaf = model.tree().leaf_of_point(index);
    fgwt_at_leaf(model, &cloud.point(index).into_owned(), leaf)
}

/// Forward transform of an arbitrary point, assigned to the nearest leaf
/// center (ties broken by smaller key).
pub fn fgwt(model: &GmraModel, x: &DVector<f64>) -> Result<GwtCoefficients> {
    let leaf = nearest_leaf(model, x)?;
    fgwt_at_leaf(model, x, leaf)
}

/// Nearest leaf center; exact linear scan.
pub fn nearest_leaf(model: &GmraModel, x: &DVector<f64>) -> Result<NodeKey> {
    model.tree().nearest_leaf(x)
}

/// Forward transform through an explicit leaf cell.
pub fn fgwt_at_leaf(model: &GmraModel, x: &DVector<f64>, leaf: NodeKey) -> Result<GwtCoefficients> {
    if x.len() != model.ambient_dim() {
        return Err(Error::DimMismatch {
            expected: model.ambient_dim(),
            got: x.len(),
        });
    }
    let leaf_node = model.node(leaf)?;
    let path = model.tree().path_from_root(leaf)?;
    let p_leaf = leaf_node.basis.coefficients(&(x - &leaf_node.center));
    let x_proj = leaf_node.basis.matrix() * &p_leaf + &leaf_node.center;
    let projection_residual = (x - &x_proj).norm();

    let mut blocks = Vec::with_capacity(path.len());
    if path.len() == 1 {
        blocks.push(p_leaf);
        return Ok(GwtCoefficients {
            model_id: model.model_id(),
            ambient_dim: model.ambient_dim(),
            path,
            blocks,
            projection_residual,
        });
    }

    if model.variants().tangential_corrections {
        // q at the leaf, then each strict ancestor from the cached products
        // against the leaf basis.
        blocks.push(&leaf_node.psi_t_phi * &p_leaf);
        let steps = model.leaf_path(leaf)?;
        for step in steps.iter().rev() {
            let p = &step.phi_product * &p_leaf + &step.center_offset;
            if step.node.scale == 0 {
                blocks.push(p);
            } else {
                let node = model.node(step.node)?;
                blocks.push(&node.psi_t_phi * &p);
            }
        }
    } else {
        // Fine-to-coarse recursion through parent-child products; the
        // coarser approximations re-project the finer ones.
        let mut p = p_leaf;
        let mut node = leaf_node;
        loop {
            blocks.push(&node.psi_t_phi * &p);
            let product = node
                .parent_phi_product
                .as_ref()
                .expect("non-root node has parent products");
            let offset = node
                .parent_center_offset
                .as_ref()
                .expect("non-root node has parent products");
            p = product * &p + offset;
            let parent_key = model
                .tree()
                .node(node.key)?
                .parent
                .expect("non-root node has parent");
            node = model.node(parent_key)?;
            if parent_key.scale == 0 {
                blocks.push(p);
                break;
            }
        }
    }

    Ok(GwtCoefficients {
        model_id: model.model_id(),
        ambient_dim: model.ambient_dim(),
        path,
        blocks,
        projection_residual,
    })
}

/// Inverse transform to the finest scale of the coefficient path.
pub fn igwt(model: &GmraModel, coeffs: &GwtCoefficients) -> Result<DVector<f64>> {
    igwt_at_scale(model, coeffs, coeffs.leaf().scale)
}

/// Inverse transform truncated at scale `j`: reconstructs the scale-`j`
/// approximation of the encoded point.
pub fn igwt_at_scale(
    model: &GmraModel,
    coeffs: &GwtCoefficients,
    j: usize,
) -> Result<DVector<f64>> {
    if coeffs.model_id != model.model_id() {
        return Err(Error::ModelMismatch {
            coeffs: coeffs.model_id,
            model: model.model_id(),
        });
    }
    let path = &coeffs.path;
    let leaf_scale = coeffs.leaf().scale;
    let root_node = model.node(path[0])?;
    let root_block = coeffs.blocks.last().expect("blocks never empty");
    let mut x_hat = root_node.wavelet.matrix() * root_block + &root_node.translation;
    if path.len() == 1 {
        return Ok(x_hat);
    }

    if model.variants().tangential_corrections {
        // Fine-to-coarse accumulation of the detail vectors, each corrected
        // by the projection of all finer details onto the parent plane.
        let mut details: Vec<DVector<f64>> = Vec::with_capacity(leaf_scale);
        let mut finer_sum = DVector::zeros(model.ambient_dim());
        for s in (1..=leaf_scale).rev() {
            let node = model.node(path[s])?;
            let parent = model.node(path[s - 1])?;
            let q = coeffs
                .block_for_scale(s)
                .expect("block exists for path scale");
            let mut detail = node.wavelet.matrix() * q + &node.translation;
            if s < leaf_scale {
                detail -= parent.basis.project(&finer_sum);
            }
            finer_sum += &detail;
            details.push(detail);
        }
        details.reverse(); // now indexed by scale-1
        for (idx, detail) in details.iter().enumerate() {
            if idx + 1 <= j {
                x_hat += detail;
            }
        }
    } else {
        for s in 1..=leaf_scale.min(j) {
            let node = model.node(path[s])?;
            let q = coeffs
                .block_for_scale(s)
                .expect("block exists for path scale");
            x_hat += node.wavelet.matrix() * q + &node.translation;
        }
    }
    Ok(x_hat)
}

/// Batch forward transform of every training point, in point order.
pub fn fgwt_batch(model: &GmraModel, cloud: &PointCloud) -> Result<Vec<GwtCoefficients>> {
    (0..cloud.n())
        .into_par_iter()
        .map(|i| fgwt_training(model, cloud, i))
        .collect()
}

/// Batch inverse transform, in coefficient order.
pub fn igwt_batch(model: &GmraModel, coeffs: &[GwtCoefficients]) -> Result<Vec<DVector<f64>>> {
    coeffs.par_iter().map(|c| igwt(model, c)).collect()
}

/// Thresholding granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Zero individual entries below the threshold.
    Entrywise,
    /// Zero whole blocks whose Euclidean norm is below the threshold.
    BlockNorm,
}

/// Outcome of a thresholding pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub mode: ThresholdMode,
    pub kept: usize,
    pub total: usize,
    pub compression_ratio: f64,
    pub per_point_errors: Vec<f64>,
    pub rms_error: f64,
    pub max_error: f64,
}

/// Zeroes small wavelet coefficients (the root scaling block is exempt) and
/// reports compression and the post-truncation reconstruction errors.
pub fn threshold_coefficients(
    model: &GmraModel,
    cloud: &PointCloud,
    coeffs: &[GwtCoefficients],
    delta: f64,
    mode: ThresholdMode,
) -> Result<(Vec<GwtCoefficients>, ThresholdReport)> {
    let mut sparse = coeffs.to_vec();
    let mut total = 0usize;
    let mut kept = 0usize;
    for c in &mut sparse {
        let n_blocks = c.blocks.len();
        for (i, block) in c.blocks.iter_mut().enumerate() {
            total += block.len();
            let is_root_block = i + 1 == n_blocks;
            if is_root_block {
                kept += block.len();
                continue;
            }
            match mode {
                ThresholdMode::Entrywise => {
                    for v in block.iter_mut() {
                        if v.abs() < delta {
                            *v = 0.0;
                        }
                    }
                }
                ThresholdMode::BlockNorm => {
                    if block.norm() < delta {
                        block.fill(0.0);
                    }
                }
            }
            kept += block.iter().filter(|&&v| v != 0.0).count();
        }
    }
    let reconstructed = igwt_batch(model, &sparse)?;
    let per_point_errors: Vec<f64> = reconstructed
        .iter()
        .enumerate()
        .map(|(i, r)| (cloud.point(i) - r).norm())
        .collect();
    let rms_error =
        (per_point_errors.iter().map(|e| e * e).sum::<f64>() / per_point_errors.len() as f64).sqrt();
    let max_error = per_point_errors.iter().cloned().fold(0.0, f64::max);
    let report = ThresholdReport {
        threshold: delta,
        mode,
        kept,
        total,
        compression_ratio: kept as f64 / total as f64,
        per_point_errors,
        rms_error,
        max_error,
    };
    Ok((sparse, report))
}

/// Per-scale coefficient magnitude summary over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMagnitude {
    pub scale: usize,
    /// Mean Euclidean norm of the blocks at this scale.
    pub mean_block_norm: f64,
    /// Mean absolute entry over all entries at this scale.
    pub mean_abs_entry: f64,
    /// Number of points whose path reaches this scale.
    pub points: usize,
}

/// Aggregates `|q_j|` per scale; scale 0 rows describe the root scaling
/// block rather than a wavelet block.
pub fn per_scale_magnitudes(model: &GmraModel, coeffs: &[GwtCoefficients]) -> Vec<ScaleMagnitude> {
    let max_scale = model.max_scale();
    let mut norm_sum = vec![0.0f64; max_scale + 1];
    let mut entry_sum = vec![0.0f64; max_scale + 1];
    let mut entry_count = vec![0usize; max_scale + 1];
    let mut point_count = vec![0usize; max_scale + 1];
    for c in coeffs {
        for (scale, block) in c.scale_blocks() {
            norm_sum[scale] += block.norm();
            entry_sum[scale] += block.iter().map(|v| v.abs()).sum::<f64>();
            entry_count[scale] += block.len();
            point_count[scale] += 1;
        }
    }
    (0..=max_scale)
        .filter(|&s| point_count[s] > 0)
        .map(|s| ScaleMagnitude {
            scale: s,
            mean_block_norm: norm_sum[s] / point_count[s] as f64,
            mean_abs_entry: if entry_count[s] > 0 {
                entry_sum[s] / entry_count[s] as f64
            } else {
                0.0
            },
            points: point_count[s],
        })
        .collect()
}
