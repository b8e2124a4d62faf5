//! Orthogonal variant of the analysis: each cell contributes only the
//! directions `U_{j,k}` genuinely new relative to everything its ancestors
//! already span, so the bases along any root-to-leaf path are mutually
//! orthogonal and the inverse transform is a plain sum.
//!
//! Construction is coarse to fine. A node whose cumulative span already
//! approximates its cell within the precision loses all offspring; otherwise
//! each child stores the complement of its scaling span relative to the
//! cumulative basis, plus the cumulative-orthogonal component of the
//! center offset.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::{self, SubspaceBasis};
use crate::tree::{CellNode, NodeKey, PartitionTree};
use crate::wavelets::{select_dimension, DimensionPolicy, PolicyKind, PrecisionMode};

/// Per-cell content of the orthogonal model.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoNode {
    pub key: NodeKey,
    pub center: DVector<f64>,
    /// New directions `U_{j,k}`; the root keeps its full scaling basis.
    pub u_basis: SubspaceBasis,
    /// Translation `w_{j,k}`; the root keeps its center.
    pub translation: DVector<f64>,
    /// Dimension of the cumulative span through this node.
    pub cum_dim: usize,
}

/// Orthogonal geometric multi-resolution analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoGmraModel {
    tree: PartitionTree,
    nodes: BTreeMap<NodeKey, OrthoNode>,
    policy: DimensionPolicy,
    epsilon: f64,
    criterion: PrecisionMode,
    model_id: u64,
}

/// Coefficient blocks `q_{j,x} = U_{j,x}ᵀ (r - c_{j,x})` along a path,
/// aligned root-to-leaf, plus the residual after the coarsest subtraction.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoCoefficients {
    model_id: u64,
    path: Vec<NodeKey>,
    /// `blocks[s]` belongs to `path[s]` (scale `s`).
    blocks: Vec<DVector<f64>>,
    residual_norm: f64,
}

impl OrthoCoefficients {
    pub fn model_id(&self) -> u64 {
        self.model_id
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

    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }

    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(DVector::len).sum()
    }

    pub fn nonzero_len(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.iter().filter(|&&v| v != 0.0).count())
            .sum()
    }
}

impl OrthoGmraModel {
    pub fn tree(&self) -> &PartitionTree {
        &self.tree
    }

    pub fn node(&self, key: NodeKey) -> Result<&OrthoNode> {
        self.nodes.get(&key).ok_or(Error::NodeNotFound(key))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &OrthoNode> {
        self.nodes.values()
    }

    pub fn policy(&self) -> &DimensionPolicy {
        &self.policy
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn criterion(&self) -> PrecisionMode {
        self.criterion
    }

    pub fn model_id(&self) -> u64 {
        self.model_id
    }

    pub fn ambient_dim(&self) -> usize {
        self.tree.ambient_dim()
    }

    pub fn max_scale(&self) -> usize {
        self.tree.max_scale()
    }

    /// The cumulative basis `[U_0 | ... | U_j]` along the path to `key`.
    /// The blocks are mutually orthogonal by construction, so the
    /// concatenation is orthonormal.
    pub fn cumulative_basis(&self, key: NodeKey) -> Result<SubspaceBasis> {
        let path = self.tree.path_from_root(key)?;
        let total: usize = path.iter().map(|k| self.nodes[k].u_basis.dim()).sum();
        let mut m = DMatrix::zeros(self.ambient_dim(), total);
        let mut col = 0;
        for k in path {
            let u = self.nodes[&k].u_basis.matrix();
            m.columns_mut(col, u.ncols()).copy_from(u);
            col += u.ncols();
        }
        SubspaceBasis::new(m)
    }

    /// Direct nested projection `s_{j,x} = P_{S_j}(x - c_j) + c_j` through
    /// the cell at scale `j` on the path to `leaf`.
    pub fn nested_projection(
        &self,
        leaf: NodeKey,
        scale: usize,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let path = self.tree.path_from_root(leaf)?;
        let key = *path.get(scale).ok_or(Error::NodeNotFound(leaf))?;
        let cum = self.cumulative_basis(key)?;
        let c = &self.nodes[&key].center;
        Ok(cum.project(&(x - c)) + c)
    }
}

/// Builds the orthogonal model over a partition tree, pruning subtrees as
/// soon as the cumulative span reaches the precision on their cells.
pub fn construct_ortho(
    cloud: &PointCloud,
    tree: &PartitionTree,
    policy: &DimensionPolicy,
    epsilon: f64,
    criterion: PrecisionMode,
) -> Result<OrthoGmraModel> {
    let mut nodes: BTreeMap<NodeKey, OrthoNode> = BTreeMap::new();
    let mut kept_cells: BTreeMap<NodeKey, CellNode> = BTreeMap::new();

    // Root: plain scaling basis.
    let root_cell = tree.root().clone();
    let root_points = cloud.gather(&root_cell.point_indices);
    let (vectors, spectrum) = linalg::principal_components(&root_points, &root_cell.center)?;
    let d0 = select_dimension(&spectrum, policy_kind(policy, root_cell.is_leaf()), 0)
        .min(vectors.ncols());
    let root_basis = SubspaceBasis::from_orthonormal(vectors.columns(0, d0).into_owned());
    nodes.insert(
        NodeKey::ROOT,
        OrthoNode {
            key: NodeKey::ROOT,
            center: root_cell.center.clone(),
            u_basis: root_basis.clone(),
            translation: root_cell.center.clone(),
            cum_dim: root_basis.dim(),
        },
    );

    // Depth-first descent carrying the cumulative basis; children of a node
    // satisfying the precision test are dropped entirely.
    let mut stack: Vec<(NodeKey, DMatrix<f64>)> =
        vec![(NodeKey::ROOT, root_basis.matrix().clone())];
    while let Some((key, cum)) = stack.pop() {
        let cell = tree.node(key)?;
        let cum_basis = SubspaceBasis::from_orthonormal(cum.clone());
        let mut kept = cell.clone();
        if cell.is_leaf() || cell_meets_precision(cloud, cell, &cum_basis, epsilon, criterion) {
            kept.children.clear();
            kept_cells.insert(key, kept);
            continue;
        }
        kept_cells.insert(key, kept);
        for &child_key in &cell.children {
            let child = tree.node(child_key)?;
            let points = cloud.gather(&child.point_indices);
            let (vectors, spectrum) = linalg::principal_components(&points, &child.center)?;
            let d = select_dimension(
                &spectrum,
                policy_kind(policy, child.is_leaf()),
                child_key.scale,
            )
            .min(vectors.ncols());
            let child_basis = vectors.columns(0, d).into_owned();
            let u = linalg::orthonormal_complement_projection(
                &cum_basis,
                &child_basis,
                linalg::DEFAULT_RANK_TOL,
            )?;
            let offset = &child.center - &cell.center;
            let translation = &offset - cum_basis.project(&offset);
            let mut child_cum = DMatrix::zeros(cloud.ambient_dim(), cum.ncols() + u.dim());
            child_cum.columns_mut(0, cum.ncols()).copy_from(&cum);
            child_cum
                .columns_mut(cum.ncols(), u.dim())
                .copy_from(u.matrix());
            nodes.insert(
                child_key,
                OrthoNode {
                    key: child_key,
                    center: child.center.clone(),
                    u_basis: u,
                    translation,
                    cum_dim: child_cum.ncols(),
                },
            );
            stack.push((child_key, child_cum));
        }
    }

    let pruned_tree = tree.with_nodes(kept_cells);
    let model_id = hash_identity(&pruned_tree, policy, epsilon, criterion);
    Ok(OrthoGmraModel {
        tree: pruned_tree,
        nodes,
        policy: policy.clone(),
        epsilon,
        criterion,
        model_id,
    })
}

/// Assembles a model from parts (used when loading from storage).
pub(crate) fn assemble_ortho(
    tree: PartitionTree,
    nodes: BTreeMap<NodeKey, OrthoNode>,
    policy: DimensionPolicy,
    epsilon: f64,
    criterion: PrecisionMode,
    model_id: u64,
) -> OrthoGmraModel {
    OrthoGmraModel {
        tree,
        nodes,
        policy,
        epsilon,
        criterion,
        model_id,
    }
}

fn policy_kind(policy: &DimensionPolicy, is_leaf: bool) -> &PolicyKind {
    match (&policy.leaf_override, is_leaf) {
        (Some(k), true) => k,
        _ => &policy.interior,
    }
}

fn cell_meets_precision(
    cloud: &PointCloud,
    cell: &CellNode,
    cum: &SubspaceBasis,
    epsilon: f64,
    criterion: PrecisionMode,
) -> bool {
    let mut residual_sq = 0.0;
    let mut norm_sq = 0.0;
    for &i in &cell.point_indices {
        let x = cloud.point(i).into_owned();
        let centered = &x - &cell.center;
        residual_sq += cum.reject(&centered).norm_squared();
        norm_sq += x.norm_squared();
    }
    let m = cell.point_indices.len() as f64;
    match criterion {
        PrecisionMode::Absolute => residual_sq / m <= epsilon * epsilon,
        PrecisionMode::Relative => residual_sq <= epsilon * epsilon * norm_sq,
    }
}

fn hash_identity(
    tree: &PartitionTree,
    policy: &DimensionPolicy,
    epsilon: f64,
    criterion: PrecisionMode,
) -> u64 {
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    "ortho".hash(&mut hasher);
    tree.n_points().hash(&mut hasher);
    tree.ambient_dim().hash(&mut hasher);
    tree.node_count().hash(&mut hasher);
    tree.rng_seed().hash(&mut hasher);
    format!("{policy:?}").hash(&mut hasher);
    epsilon.to_bits().hash(&mut hasher);
    format!("{criterion:?}").hash(&mut hasher);
    hasher.finish()
}

/// Forward orthogonal transform: nearest-leaf assignment, then the residual
/// recursion fine to coarse.
pub fn ortho_fgwt(model: &OrthoGmraModel, x: &DVector<f64>) -> Result<OrthoCoefficients> {
    let leaf = model.tree().nearest_leaf(x)?;
    ortho_fgwt_at_leaf(model, x, leaf)
}

/// Forward transform of a training point through its own leaf.
pub fn ortho_fgwt_training(
    model: &OrthoGmraModel,
    cloud: &PointCloud,
    index: usize,
) -> Result<OrthoCoefficients> {
    let leaf = model.tree().leaf_of_point(index);
    ortho_fgwt_at_leaf(model, &cloud.point(index).into_owned(), leaf)
}

/// Forward transform through an explicit leaf.
pub fn ortho_fgwt_at_leaf(
    model: &OrthoGmraModel,
    x: &DVector<f64>,
    leaf: NodeKey,
) -> Result<OrthoCoefficients> {
    if x.len() != model.ambient_dim() {
        return Err(Error::DimMismatch {
            expected: model.ambient_dim(),
            got: x.len(),
        });
    }
    let path = model.tree().path_from_root(leaf)?;
    let mut blocks = vec![DVector::zeros(0); path.len()];
    let mut r = x.clone();
    for s in (0..path.len()).rev() {
        let node = model.node(path[s])?;
        let q = node.u_basis.coefficients(&(&r - &node.center));
        r -= node.u_basis.matrix() * &q + &node.translation;
        blocks[s] = q;
    }
    Ok(OrthoCoefficients {
        model_id: model.model_id(),
        path,
        blocks,
        residual_norm: r.norm(),
    })
}

/// Inverse orthogonal transform: plain accumulation coarse to fine.
pub fn ortho_igwt(model: &OrthoGmraModel, coeffs: &OrthoCoefficients) -> Result<DVector<f64>> {
    ortho_igwt_at_scale(model, coeffs, coeffs.leaf().scale)
}

/// Partial sum through scale `j`.
pub fn ortho_igwt_at_scale(
    model: &OrthoGmraModel,
    coeffs: &OrthoCoefficients,
    j: usize,
) -> Result<DVector<f64>> {
    if coeffs.model_id != model.model_id() {
        return Err(Error::ModelMismatch {
            coeffs: coeffs.model_id,
            model: model.model_id(),
        });
    }
    let mut x_hat = DVector::zeros(model.ambient_dim());
    for (s, key) in coeffs.path.iter().enumerate() {
        if s > j {
            break;
        }
        let node = model.node(*key)?;
        x_hat += node.u_basis.matrix() * &coeffs.blocks[s] + &node.translation;
    }
    Ok(x_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, GeneratorKind, GeneratorSpec};
    use crate::tree::{build_tree, SplitMethod, StoppingRule};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn swissroll_ortho(eps: f64) -> (PointCloud, OrthoGmraModel) {
        let cloud = generate(&GeneratorSpec {
            kind: GeneratorKind::SwissRoll,
            n: 2000,
            ambient_dim: 20,
            noise_sigma: 0.0,
            seed: 31,
        })
        .unwrap();
        let tree = build_tree(
            &cloud,
            SplitMethod::IteratedPca,
            &StoppingRule::for_dimension(2),
            31,
        )
        .unwrap();
        let model = construct_ortho(
            &cloud,
            &tree,
            &DimensionPolicy::fixed(2),
            eps,
            PrecisionMode::Absolute,
        )
        .unwrap();
        (cloud, model)
    }

    #[test]
    fn flat_data_truncates_to_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let basis = crate::synth::random_embedding(3, 10, 2);
        let mut data = DMatrix::zeros(10, 300);
        for p in 0..300 {
            let params = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            data.set_column(p, &(&basis * params));
        }
        let cloud = PointCloud::from_columns(data, "flat").unwrap();
        let tree = build_tree(
            &cloud,
            SplitMethod::IteratedPca,
            &StoppingRule::for_dimension(3),
            2,
        )
        .unwrap();
        assert!(tree.max_scale() > 0);
        let model = construct_ortho(
            &cloud,
            &tree,
            &DimensionPolicy::fixed(3),
            1e-8,
            PrecisionMode::Absolute,
        )
        .unwrap();
        assert_eq!(model.tree().node_count(), 1, "flat data needs only the root");
        assert_eq!(model.node(NodeKey::ROOT).unwrap().u_basis.dim(), 3);
    }

    #[test]
    fn cumulative_dimension_bounded_by_ambient() {
        // A curve with a single bend spans two directions; cumulative bases
        // along any path can never exceed the ambient dimension.
        let n = 400;
        let data = DMatrix::from_fn(3, n, |i, p| {
            let t = -1.0 + 2.0 * p as f64 / (n - 1) as f64;
            match i {
                0 => t,
                1 => t.abs(),
                _ => 0.0,
            }
        });
        let cloud = PointCloud::from_columns(data, "bend").unwrap();
        let tree = build_tree(
            &cloud,
            SplitMethod::IteratedPca,
            &StoppingRule::for_dimension(1),
            7,
        )
        .unwrap();
        let model = construct_ortho(
            &cloud,
            &tree,
            &DimensionPolicy::fixed(1),
            1e-12,
            PrecisionMode::Absolute,
        )
        .unwrap();
        for leaf in model.tree().leaves() {
            let path = model.tree().path_from_root(leaf.key).unwrap();
            let total: usize = path
                .iter()
                .map(|k| model.node(*k).unwrap().u_basis.dim())
                .sum();
            assert!(total <= 3, "cumulative dim {total} exceeds ambient");
            assert_eq!(total, model.node(leaf.key).unwrap().cum_dim);
        }
    }

    #[test]
    fn path_bases_are_mutually_orthogonal() {
        let (_, model) = swissroll_ortho(1e-6);
        for leaf in model.tree().leaves() {
            let path = model.tree().path_from_root(leaf.key).unwrap();
            for a in 0..path.len() {
                for b in (a + 1)..path.len() {
                    let ua = &model.node(path[a]).unwrap().u_basis;
                    let ub = &model.node(path[b]).unwrap().u_basis;
                    if ua.dim() == 0 || ub.dim() == 0 {
                        continue;
                    }
                    let cross = ua.matrix().tr_mul(ub.matrix());
                    assert!(
                        cross.norm() < 1e-8,
                        "bases at {} and {} not orthogonal: {:.3e}",
                        path[a],
                        path[b],
                        cross.norm()
                    );
                }
            }
        }
    }

    #[test]
    fn nestedness_dims_nondecreasing() {
        let (_, model) = swissroll_ortho(1e-6);
        for leaf in model.tree().leaves() {
            let path = model.tree().path_from_root(leaf.key).unwrap();
            let mut last = 0;
            for key in path {
                let d = model.node(key).unwrap().cum_dim;
                assert!(d >= last);
                last = d;
            }
        }
    }

    #[test]
    fn round_trip_and_residual_identity() {
        let (cloud, model) = swissroll_ortho(1e-6);
        for &i in &[0usize, 501, 1999] {
            let x = cloud.point(i).into_owned();
            let coeffs = ortho_fgwt_training(&model, &cloud, i).unwrap();
            let rec = ortho_igwt(&model, &coeffs).unwrap();
            // Definitional identity: reconstruction error equals the
            // residual left by the forward pass.
            assert!(((&x - &rec).norm() - coeffs.residual_norm()).abs() < 1e-10);
        }
        // Aggregate precision promise at the construction epsilon.
        let mut rss = 0.0;
        for i in 0..cloud.n() {
            let coeffs = ortho_fgwt_training(&model, &cloud, i).unwrap();
            rss += coeffs.residual_norm().powi(2);
        }
        let rms = (rss / cloud.n() as f64).sqrt();
        assert!(
            rms <= 1e-6 * (1.0 + 21.0),
            "rms residual {rms} beyond construction precision"
        );
    }

    #[test]
    fn coefficient_round_trip_is_exact() {
        let (cloud, model) = swissroll_ortho(1e-6);
        let coeffs = ortho_fgwt_training(&model, &cloud, 77).unwrap();
        let x_hat = ortho_igwt(&model, &coeffs).unwrap();
        let again = ortho_fgwt_at_leaf(&model, &x_hat, coeffs.leaf()).unwrap();
        for (a, b) in coeffs.blocks().iter().zip(again.blocks()) {
            assert!((a - b).norm() < 1e-10);
        }
        assert!(again.residual_norm() < 1e-10);
    }

    #[test]
    fn zero_blocks_give_translation_chain() {
        let (cloud, model) = swissroll_ortho(1e-6);
        let mut coeffs = ortho_fgwt_training(&model, &cloud, 5).unwrap();
        for b in coeffs.blocks_mut() {
            b.fill(0.0);
        }
        let rec = ortho_igwt(&model, &coeffs).unwrap();
        let mut chain = DVector::zeros(model.ambient_dim());
        for key in coeffs.path() {
            chain += &model.node(*key).unwrap().translation;
        }
        assert!((rec - chain).norm() < 1e-12);
    }

    #[test]
    fn nested_projection_error_nonincreasing() {
        let (cloud, model) = swissroll_ortho(1e-6);
        for &i in &[10usize, 800, 1500] {
            let x = cloud.point(i).into_owned();
            let leaf = model.tree().leaf_of_point(i);
            let path = model.tree().path_from_root(leaf).unwrap();
            let mut last = f64::INFINITY;
            for s in 0..path.len() {
                let proj = model.nested_projection(leaf, s, &x).unwrap();
                let err = (&x - proj).norm();
                assert!(
                    err <= last + 1e-9,
                    "nested error grew at scale {s}: {err} > {last}"
                );
                last = err;
            }
        }
    }

    #[test]
    fn partial_sums_improve_through_scales() {
        let (cloud, model) = swissroll_ortho(1e-6);
        for &i in &[3usize, 444, 1211] {
            let x = cloud.point(i).into_owned();
            let coeffs = ortho_fgwt_training(&model, &cloud, i).unwrap();
            let leaf_scale = coeffs.leaf().scale;
            let first = (ortho_igwt_at_scale(&model, &coeffs, 0).unwrap() - &x).norm();
            let last = (ortho_igwt_at_scale(&model, &coeffs, leaf_scale).unwrap() - &x).norm();
            assert!(last <= first + 1e-9, "finest {last} worse than coarsest {first}");
        }
    }
}
