//! Geometric wavelet expansion of points outside the training set.
//!
//! A query is assigned to the nearest finest-scale center; the part of it
//! living on the model is transformed as usual, and the leftover
//! `e = x - P_leaf(x)` is greedily projected onto the wavelet subspaces
//! `W_J, ..., W_1` and finally the root plane `V_0` along the assigned
//! leaf's ancestor chain. Each projection is orthogonal, so the residual
//! norm never increases.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::transforms::{fgwt_at_leaf, GwtCoefficients};
use crate::tree::NodeKey;
use crate::wavelets::GmraModel;

/// Expansion of an out-of-sample point.
#[derive(Debug, Clone, PartialEq)]
pub struct OosExpansion {
    /// Assigned leaf (nearest finest-scale center).
    pub leaf: NodeKey,
    /// Transform of the on-model part `P_leaf(x)`.
    pub in_model: GwtCoefficients,
    /// Normal-component blocks, finest to coarsest, in the bases
    /// `Ψ_J, ..., Ψ_1, Φ_0` of the leaf's ancestor chain.
    pub normal_blocks: Vec<(NodeKey, DVector<f64>)>,
    /// `‖x - P_leaf(x)‖` before the greedy sweep.
    pub initial_residual: f64,
    /// Residual norm after every greedy step (same order as the blocks).
    pub residual_norms: Vec<f64>,
    /// Norm left after all projections.
    pub final_residual: f64,
}

impl OosExpansion {
    /// Reconstruction including the normal components.
    pub fn reconstruct(&self, model: &GmraModel) -> Result<DVector<f64>> {
        let mut x = crate::transforms::igwt(model, &self.in_model)?;
        for (key, block) in &self.normal_blocks {
            let node = model.node(*key)?;
            if key.scale == 0 {
                x += node.basis.matrix() * block;
            } else {
                x += node.wavelet.matrix() * block;
            }
        }
        Ok(x)
    }
}

/// Nearest finest-scale center; ties go to the smaller key.
pub fn assign_leaf(model: &GmraModel, x: &DVector<f64>) -> Result<NodeKey> {
    model.tree().nearest_leaf(x)
}

/// Greedy multiscale expansion of an arbitrary point in `R^D`.
pub fn expand_oos(model: &GmraModel, x: &DVector<f64>) -> Result<OosExpansion> {
    if x.len() != model.ambient_dim() {
        return Err(Error::DimMismatch {
            expected: model.ambient_dim(),
            got: x.len(),
        });
    }
    let leaf = assign_leaf(model, x)?;
    let x_model = model.scaling_projection(leaf, x)?;
    let in_model = fgwt_at_leaf(model, &x_model, leaf)?;

    let path = model.tree().path_from_root(leaf)?;
    let mut residual = x - &x_model;
    let initial_residual = residual.norm();
    let mut normal_blocks = Vec::with_capacity(path.len());
    let mut residual_norms = Vec::with_capacity(path.len());
    for &key in path.iter().rev() {
        let node = model.node(key)?;
        let block = if key.scale == 0 {
            let b = node.basis.coefficients(&residual);
            residual -= node.basis.matrix() * &b;
            b
        } else {
            let b = node.wavelet.coefficients(&residual);
            residual -= node.wavelet.matrix() * &b;
            b
        };
        normal_blocks.push((key, block));
        residual_norms.push(residual.norm());
    }
    Ok(OosExpansion {
        leaf,
        in_model,
        normal_blocks,
        initial_residual,
        residual_norms,
        final_residual: residual.norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use crate::synth::{generate, GeneratorKind, GeneratorSpec};
    use crate::tree::{build_tree, SplitMethod, StoppingRule};
    use crate::wavelets::{construct_gmra, DimensionPolicy, GmraVariants};
    use nalgebra::DMatrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn model_fixture(noise: f64, seed: u64) -> (PointCloud, GmraModel) {
        let cloud = generate(&GeneratorSpec {
            kind: GeneratorKind::SwissRoll,
            n: 1500,
            ambient_dim: 15,
            noise_sigma: noise,
            seed,
        })
        .unwrap();
        let tree = build_tree(
            &cloud,
            SplitMethod::IteratedPca,
            &StoppingRule::for_dimension(2),
            seed,
        )
        .unwrap();
        let model = construct_gmra(
            &cloud,
            &tree,
            &DimensionPolicy::fixed(2),
            1e-3,
            GmraVariants::default(),
        )
        .unwrap();
        (cloud, model)
    }

    #[test]
    fn assign_leaf_matches_linear_scan_oracle() {
        let (cloud, model) = model_fixture(0.0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let leaves: Vec<_> = model.tree().leaves().map(|l| (l.key, l.center.clone())).collect();
        for _ in 0..1000 {
            let x = DVector::from_fn(cloud.ambient_dim(), |_, _| rng.random_range(-12.0..12.0));
            let got = assign_leaf(&model, &x).unwrap();
            let oracle = leaves
                .iter()
                .map(|(k, c)| ((x.clone() - c).norm(), *k))
                .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
                .unwrap()
                .1;
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn exact_center_resolves_to_its_leaf() {
        let (_, model) = model_fixture(0.0, 3);
        for leaf in model.tree().leaves().step_by(7) {
            assert_eq!(assign_leaf(&model, &leaf.center).unwrap(), leaf.key);
        }
    }

    #[test]
    fn midpoint_tie_takes_smaller_key() {
        // Two well-separated pairs give a two-leaf tree whose centers tie
        // exactly at the midpoint.
        let data = DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 9.0, 10.0, 0.0, 0.0, 0.0, 0.0]);
        let cloud = PointCloud::from_columns(data, "pairs").unwrap();
        let tree = crate::tree::build_tree(
            &cloud,
            SplitMethod::IteratedPca,
            &StoppingRule {
                min_cell_size: 2,
                max_scale: 4,
                homogeneity: None,
                working_dim: 1,
            },
            0,
        )
        .unwrap();
        let model = construct_gmra(
            &cloud,
            &tree,
            &DimensionPolicy::fixed(1),
            1e-9,
            GmraVariants::default(),
        )
        .unwrap();
        let leaves: Vec<_> = model.tree().leaves().collect();
        assert_eq!(leaves.len(), 2);
        let mid = (&leaves[0].center + &leaves[1].center) * 0.5;
        let got = assign_leaf(&model, &mid).unwrap();
        assert_eq!(got, leaves[0].key.min(leaves[1].key));
    }

    #[test]
    fn on_model_points_have_zero_normal_blocks() {
        let (cloud, model) = model_fixture(0.0, 3);
        // Points already on their assigned leaf's plane carry no normal
        // mass. The nearest-center rule may reassign a projected point to a
        // sibling plane, so only genuinely stable cases are asserted.
        let mut tested = 0;
        for i in (0..cloud.n()).step_by(29) {
            let leaf = model.tree().leaf_of_point(i);
            let x_model = model
                .scaling_projection(leaf, &cloud.point(i).into_owned())
                .unwrap();
            if assign_leaf(&model, &x_model).unwrap() != leaf {
                continue;
            }
            tested += 1;
            let expansion = expand_oos(&model, &x_model).unwrap();
            for (_, block) in &expansion.normal_blocks {
                assert!(block.norm() <= 1e-8);
            }
            assert!(expansion.final_residual <= 1e-8);
        }
        assert!(tested > 10, "too few stable on-model cases: {tested}");
    }

    #[test]
    fn constructed_wavelet_perturbation_is_recovered() {
        // A perturbation along a leaf wavelet direction; the greedy first
        // step projects the off-plane part of the perturbation back onto
        // the wavelet subspace. The closed form of that step is
        // Ψ Ψᵀ (I - Φ Φᵀ) ν; the recovery error relative to ν itself is
        // bounded by the plane-wavelet coupling ‖ΨᵀΦ‖, which vanishes only
        // as the cells flatten.
        let (cloud, model) = model_fixture(0.0, 3);
        let mut tested = 0;
        for i in 0..cloud.n() {
            let leaf = model.tree().leaf_of_point(i);
            let node = model.node(leaf).unwrap();
            if node.wavelet_dim() == 0 {
                continue;
            }
            let x_model = model
                .scaling_projection(leaf, &cloud.point(i).into_owned())
                .unwrap();
            let psi = node.wavelet.matrix().column(0).into_owned();
            let nu = psi * 0.05;
            let x = &x_model + &nu;
            // The perturbed point must still resolve to the same leaf for
            // the constructed recovery to apply.
            if assign_leaf(&model, &x).unwrap() != leaf {
                continue;
            }
            tested += 1;
            let expansion = expand_oos(&model, &x).unwrap();
            let (first_key, first_block) = &expansion.normal_blocks[0];
            assert_eq!(*first_key, leaf);
            let recovered = node.wavelet.matrix() * first_block;
            // Exact algebra oracle for the first greedy step.
            let off_plane = node.basis.reject(&nu);
            let oracle = node.wavelet.matrix() * node.wavelet.coefficients(&off_plane);
            assert!(
                (&recovered - oracle).norm() < 1e-12,
                "greedy step disagrees with its closed form at point {i}"
            );
            // Recovery of ν itself, up to the measured coupling.
            let coupling = node.psi_t_phi.norm();
            assert!(
                (&recovered - &nu).norm() <= coupling * nu.norm() + 1e-12,
                "recovery error beyond the coupling bound at point {i}"
            );
            if tested >= 20 {
                break;
            }
        }
        assert!(tested >= 5, "too few testable perturbation cases: {tested}");
    }

    #[test]
    fn residuals_are_monotone_and_reconstruction_improves() {
        let (cloud, model) = model_fixture(0.0, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for i in (0..cloud.n()).step_by(111) {
            // Noisy query off the model.
            let x = cloud.point(i).into_owned()
                + DVector::from_fn(cloud.ambient_dim(), |_, _| {
                    0.05 * rng.sample::<f64, _>(StandardNormal)
                });
            let expansion = expand_oos(&model, &x).unwrap();
            let mut last = expansion.initial_residual;
            for &r in &expansion.residual_norms {
                assert!(r <= last + 1e-12, "residual grew: {r} > {last}");
                last = r;
            }
            // Reconstruction with normal blocks is at least as close as the
            // in-model part alone, pointwise.
            let with_normals = expansion.reconstruct(&model).unwrap();
            let in_model_only = crate::transforms::igwt(&model, &expansion.in_model).unwrap();
            assert!((&x - with_normals).norm() <= (&x - in_model_only).norm() + 1e-9);
        }
    }

}
