//! Construction of the geometric multi-resolution analysis: per-cell scaling
//! bases (local PCA planes), inter-scale wavelet bases and translations, and
//! the small cached matrices the fast transforms run on.
//!
//! For a cell `(j, k)` with mean `c` and covariance spectrum `λ`, the scaling
//! basis `Φ` spans the top principal directions (count chosen by the
//! dimension policy). For each child, the wavelet basis `Ψ` spans the part
//! of the child's plane invisible to the parent, `(I - Φ Φᵀ) span(Φ_child)`,
//! and the translation `w` is the parent-orthogonal component of the
//! child-center offset. The root keeps `Ψ = Φ` and `w = c`.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::{self, Spectrum, SubspaceBasis};
use crate::tree::{NodeKey, PartitionTree};

/// Per-scale threshold sequence `ε_j`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant(f64),
    /// Indexed by scale; scales beyond the end reuse the last entry.
    PerScale(Vec<f64>),
}

impl Schedule {
    pub fn at(&self, scale: usize) -> f64 {
        match self {
            Schedule::Constant(e) => *e,
            Schedule::PerScale(v) => v[scale.min(v.len().saturating_sub(1))],
        }
    }
}

/// How many principal directions a cell keeps.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Always `d` (clamped to the cell's numerical rank).
    Fixed(usize),
    /// Smallest `d` with eigenvalue tail at most `ε_j` times the total.
    RelativeThreshold(Schedule),
    /// Smallest `d` with eigenvalue tail at most `ε_j` (variance units).
    AbsoluteThreshold(Schedule),
}

/// Dimension-selection policy, with an optional separate rule for leaves.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DimensionPolicy {
    pub interior: PolicyKind,
    pub leaf_override: Option<PolicyKind>,
}

impl DimensionPolicy {
    pub fn fixed(d: usize) -> Self {
        Self {
            interior: PolicyKind::Fixed(d),
            leaf_override: None,
        }
    }

    /// Relative thresholding with an explicit constant `ε` at every node.
    pub fn relative(eps: f64) -> Self {
        Self {
            interior: PolicyKind::RelativeThreshold(Schedule::Constant(eps)),
            leaf_override: None,
        }
    }

    /// Relative thresholding without an explicit schedule: keep 50% of the
    /// variance at interior nodes and 95% at leaves.
    pub fn relative_default() -> Self {
        Self {
            interior: PolicyKind::RelativeThreshold(Schedule::Constant(0.5)),
            leaf_override: Some(PolicyKind::RelativeThreshold(Schedule::Constant(0.05))),
        }
    }

    pub fn absolute(eps: f64) -> Self {
        Self {
            interior: PolicyKind::AbsoluteThreshold(Schedule::Constant(eps)),
            leaf_override: None,
        }
    }

    fn kind_for(&self, is_leaf: bool) -> &PolicyKind {
        match (&self.leaf_override, is_leaf) {
            (Some(k), true) => k,
            _ => &self.interior,
        }
    }
}

/// Applies the policy rule to a spectrum at the given scale.
///
/// Thresholding floors the answer at one so every cell keeps a
/// center-plus-line model; cells with no variance at all report zero. The
/// achieved dimension is additionally capped by the available numerical rank
/// when the basis is materialized.
pub fn select_dimension(spectrum: &Spectrum, kind: &PolicyKind, scale: usize) -> usize {
    match kind {
        PolicyKind::Fixed(d) => (*d).min(spectrum.numerical_rank(linalg::DEFAULT_RANK_TOL)),
        PolicyKind::RelativeThreshold(sched) => {
            let total = spectrum.total();
            if total <= 0.0 {
                return 0;
            }
            let eps = sched.at(scale);
            let mut d = 0;
            while spectrum.tail_sum(d) > eps * total {
                d += 1;
            }
            d.max(1)
        }
        PolicyKind::AbsoluteThreshold(sched) => {
            if spectrum.total() <= 0.0 {
                return 0;
            }
            let eps = sched.at(scale);
            let mut d = 0;
            while spectrum.tail_sum(d) > eps {
                d += 1;
            }
            d.max(1)
        }
    }
}

/// Which construction/transform variants the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GmraVariants {
    /// When true (the default), the inverse transform applies the
    /// cross-scale tangential correction terms; when false, both transforms
    /// use the fine-to-coarse recursion that needs no scaling functions.
    pub tangential_corrections: bool,
    /// Report shared wavelet directions across siblings (used by the
    /// pruning cost model).
    pub split_shared_wavelets: bool,
}

impl Default for GmraVariants {
    fn default() -> Self {
        Self {
            tangential_corrections: true,
            split_shared_wavelets: false,
        }
    }
}

/// Everything attached to one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GmraNode {
    pub key: NodeKey,
    pub center: DVector<f64>,
    /// Scaling basis `Φ` (top principal directions).
    pub basis: SubspaceBasis,
    /// Full covariance spectrum (all computed eigenvalues).
    pub spectrum: Spectrum,
    /// Wavelet basis `Ψ`; equals `Φ` at the root.
    pub wavelet: SubspaceBasis,
    /// Translation `w`; equals the center at the root.
    pub translation: DVector<f64>,
    /// Cached `Ψᵀ Φ`.
    pub psi_t_phi: DMatrix<f64>,
    /// Cached `Φ_parentᵀ Φ` (absent at the root).
    pub parent_phi_product: Option<DMatrix<f64>>,
    /// Cached `Φ_parentᵀ (c - c_parent)` (absent at the root).
    pub parent_center_offset: Option<DVector<f64>>,
}

impl GmraNode {
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn wavelet_dim(&self) -> usize {
        self.wavelet.dim()
    }
}

/// One cached step of a root-to-leaf path: the products needed to run the
/// fast forward transform against this ancestor.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStep {
    pub node: NodeKey,
    /// `Φ_ancestorᵀ Φ_leaf`.
    pub phi_product: DMatrix<f64>,
    /// `Φ_ancestorᵀ (c_leaf - c_ancestor)`.
    pub center_offset: DVector<f64>,
}

/// The geometric multi-resolution analysis of one point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct GmraModel {
    tree: PartitionTree,
    nodes: BTreeMap<NodeKey, GmraNode>,
    policy: DimensionPolicy,
    variants: GmraVariants,
    epsilon: f64,
    /// For each leaf, cached products for its strict ancestors, root first.
    leaf_paths: BTreeMap<NodeKey, Vec<PathStep>>,
    model_id: u64,
}

/// Which error aggregate to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorNorm {
    L2Absolute,
    L2Relative,
}

/// How a precision `ε` is compared with a mean-squared residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMode {
    /// Mean squared residual at most `ε²`.
    Absolute,
    /// Mean squared residual at most `ε²` times the mean squared point norm.
    Relative,
}

impl GmraModel {
    pub fn tree(&self) -> &PartitionTree {
        &self.tree
    }

    pub fn node(&self, key: NodeKey) -> Result<&GmraNode> {
        self.nodes.get(&key).ok_or(Error::NodeNotFound(key))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &GmraNode> {
        self.nodes.values()
    }

    pub fn policy(&self) -> &DimensionPolicy {
        &self.policy
    }

    pub fn variants(&self) -> GmraVariants {
        self.variants
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
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

    pub(crate) fn leaf_path(&self, leaf: NodeKey) -> Result<&[PathStep]> {
        self.leaf_paths
            .get(&leaf)
            .map(Vec::as_slice)
            .ok_or(Error::NodeNotFound(leaf))
    }

    /// Affine projection of `x` onto the cell's plane: `Φ Φᵀ (x - c) + c`.
    pub fn scaling_projection(&self, key: NodeKey, x: &DVector<f64>) -> Result<DVector<f64>> {
        let node = self.node(key)?;
        if x.len() != self.ambient_dim() {
            return Err(Error::DimMismatch {
                expected: self.ambient_dim(),
                got: x.len(),
            });
        }
        let centered = x - &node.center;
        Ok(node.basis.project(&centered) + &node.center)
    }

    /// Projection of training point `i` at scale `j` (through its own cell).
    pub fn project_point_at_scale(
        &self,
        cloud: &PointCloud,
        i: usize,
        j: usize,
    ) -> Result<DVector<f64>> {
        let key = self.tree.cell_of_point_at_scale(i, j);
        self.scaling_projection(key, &cloud.point(i).into_owned())
    }

    /// The inter-scale difference `Q(x) = P_child(x) - P_parent(x)`,
    /// computed directly from the two affine projections. This is the slow
    /// reference route the fast transform is tested against.
    pub fn wavelet_detail(&self, key: NodeKey, x: &DVector<f64>) -> Result<DVector<f64>> {
        let parent = self
            .tree
            .node(key)?
            .parent
            .ok_or_else(|| Error::NotApplicable("wavelet detail of the root".into()))?;
        Ok(self.scaling_projection(key, x)? - self.scaling_projection(parent, x)?)
    }

    /// Splits the children's wavelet subspaces into the shared intersection
    /// and child-specific complements.
    pub fn split_shared_wavelets(
        &self,
        key: NodeKey,
    ) -> Result<(SubspaceBasis, Vec<(NodeKey, SubspaceBasis)>)> {
        let cell = self.tree.node(key)?;
        if cell.children.len() < 2 {
            return Err(Error::NotApplicable(format!(
                "node {key} has fewer than two children"
            )));
        }
        let child_wavelets: Vec<(NodeKey, SubspaceBasis)> = cell
            .children
            .iter()
            .map(|&c| Ok((c, self.node(c)?.wavelet.clone())))
            .collect::<Result<_>>()?;
        split_wavelet_family(self.ambient_dim(), &child_wavelets)
    }

    /// Approximation error of the scale-`j` planes over the training cloud.
    pub fn approximation_error(&self, cloud: &PointCloud, j: usize, norm: ErrorNorm) -> f64 {
        let cells = self.tree.partition_at_scale(j);
        let mut acc = 0.0;
        for key in cells {
            let cell = self.tree.node(key).expect("partition node exists");
            let node = &self.nodes[&key];
            for &i in &cell.point_indices {
                let x = cloud.point(i).into_owned();
                let centered = &x - &node.center;
                let residual = (&centered - node.basis.project(&centered)).norm();
                acc += match norm {
                    ErrorNorm::L2Absolute => residual * residual,
                    ErrorNorm::L2Relative => {
                        let nx = x.norm().max(f64::MIN_POSITIVE);
                        (residual / nx) * (residual / nx)
                    }
                };
            }
        }
        (acc / cloud.n() as f64).sqrt()
    }

    /// The same absolute error through the spectral identity
    /// `E_j² = Σ_k μ(C_{j,k}) Σ_{l>d} λ_l`; exact up to round-off.
    pub fn approximation_error_spectral(&self, j: usize) -> f64 {
        let n = self.tree.n_points() as f64;
        let mut acc = 0.0;
        for key in self.tree.partition_at_scale(j) {
            let node = &self.nodes[&key];
            let weight = self.tree.node(key).expect("node exists").size() as f64 / n;
            acc += weight * node.spectrum.tail_sum(node.dim());
        }
        acc.max(0.0).sqrt()
    }

    /// Smallest scale whose absolute error reaches the model precision, if
    /// any scale does.
    pub fn effective_scale(&self) -> Option<usize> {
        (0..=self.max_scale()).find(|&j| self.approximation_error_spectral(j) <= self.epsilon)
    }
}

/// Intersection/complement split of a family of sibling wavelet bases.
///
/// Sharing is only exploited when the split is numerically clean: if the
/// complement dimensions do not add up exactly (`d^∩ + d^⊥ = d^w` for every
/// child, which near-parallel but unequal subspaces can break at tolerance
/// level), the family falls back to an empty intersection.
pub(crate) fn split_wavelet_family(
    ambient: usize,
    children: &[(NodeKey, SubspaceBasis)],
) -> Result<(SubspaceBasis, Vec<(NodeKey, SubspaceBasis)>)> {
    let originals = || {
        children
            .iter()
            .map(|(k, w)| (*k, w.clone()))
            .collect::<Vec<_>>()
    };
    let shared = if children.iter().any(|(_, w)| w.dim() == 0) {
        SubspaceBasis::empty(ambient)
    } else {
        let owned: Vec<SubspaceBasis> = children.iter().map(|(_, w)| w.clone()).collect();
        linalg::subspace_intersection(&owned, linalg::DEFAULT_RANK_TOL)?
    };
    if shared.dim() == 0 {
        return Ok((SubspaceBasis::empty(ambient), originals()));
    }
    let mut specific = Vec::with_capacity(children.len());
    for (child_key, wavelet) in children {
        let perp = linalg::orthonormal_complement_projection(
            &shared,
            wavelet.matrix(),
            linalg::DEFAULT_RANK_TOL,
        )?;
        if shared.dim() + perp.dim() != wavelet.dim() {
            return Ok((SubspaceBasis::empty(ambient), originals()));
        }
        specific.push((*child_key, perp));
    }
    Ok((shared, specific))
}

/// Builds the GMRA over a partition tree.
pub fn construct_gmra(
    cloud: &PointCloud,
    tree: &PartitionTree,
    policy: &DimensionPolicy,
    epsilon: f64,
    variants: GmraVariants,
) -> Result<GmraModel> {
    let keys: Vec<NodeKey> = tree.keys().collect();

    // Per-cell PCA: independent across nodes.
    let scaled: Vec<(NodeKey, SubspaceBasis, Spectrum)> = keys
        .par_iter()
        .map(|&key| {
            let cell = tree.node(key)?;
            let points = cloud.gather(&cell.point_indices);
            let (vectors, spectrum) = linalg::principal_components(&points, &cell.center)?;
            let kind = policy.kind_for(cell.is_leaf());
            // A fixed demand beyond the guaranteed cell size is a
            // configuration error; incidental smaller cells produced by
            // lopsided splits fall back to their achieved rank.
            if let PolicyKind::Fixed(d) = kind {
                if *d > cell.size() && *d > tree.stopping_rule().min_cell_size {
                    return Err(Error::DimensionExceedsCell {
                        node: key,
                        requested: *d,
                        cell_size: cell.size(),
                    });
                }
            }
            let d = select_dimension(&spectrum, kind, key.scale).min(vectors.ncols());
            let basis = SubspaceBasis::from_orthonormal(vectors.columns(0, d).into_owned());
            Ok((key, basis, spectrum))
        })
        .collect::<Result<_>>()?;
    let mut bases: BTreeMap<NodeKey, (SubspaceBasis, Spectrum)> =
        scaled.into_iter().map(|(k, b, s)| (k, (b, s))).collect();

    // Wavelet bases and translations against each parent. Key order puts
    // parents before children, so the parent entry always exists.
    let mut nodes: BTreeMap<NodeKey, GmraNode> = BTreeMap::new();
    for &key in &keys {
        let cell = tree.node(key)?;
        let (basis, spectrum) = bases.remove(&key).expect("basis computed");
        let (wavelet, translation, parent_products) = match cell.parent {
            None => (basis.clone(), cell.center.clone(), None),
            Some(parent_key) => {
                let parent_cell = tree.node(parent_key)?;
                let parent_basis = &nodes
                    .get(&parent_key)
                    .expect("parents precede children")
                    .basis;
                let wavelet = linalg::orthonormal_complement_projection(
                    parent_basis,
                    basis.matrix(),
                    linalg::DEFAULT_RANK_TOL,
                )?;
                let offset = &cell.center - &parent_cell.center;
                let translation = &offset - parent_basis.project(&offset);
                let phi_product = parent_basis.matrix().tr_mul(basis.matrix());
                let center_offset = parent_basis.coefficients(&offset);
                (wavelet, translation, Some((phi_product, center_offset)))
            }
        };
        let psi_t_phi = wavelet.matrix().tr_mul(basis.matrix());
        let (parent_phi_product, parent_center_offset) = match parent_products {
            Some((p, c)) => (Some(p), Some(c)),
            None => (None, None),
        };
        nodes.insert(
            key,
            GmraNode {
                key,
                center: cell.center.clone(),
                basis,
                spectrum,
                wavelet,
                translation,
                psi_t_phi,
                parent_phi_product,
                parent_center_offset,
            },
        );
    }

    // Fast-transform caches: for each leaf, the products of every strict
    // ancestor against the leaf basis.
    let leaf_keys: Vec<NodeKey> = tree.leaves().map(|l| l.key).collect();
    let paths: Vec<(NodeKey, Vec<PathStep>)> = leaf_keys
        .par_iter()
        .map(|&leaf| {
            let path = tree.path_from_root(leaf)?;
            let leaf_node = &nodes[&leaf];
            let steps = path[..path.len() - 1]
                .iter()
                .map(|&ancestor| {
                    let anc = &nodes[&ancestor];
                    PathStep {
                        node: ancestor,
                        phi_product: anc.basis.matrix().tr_mul(leaf_node.basis.matrix()),
                        center_offset: anc.basis.coefficients(&(&leaf_node.center - &anc.center)),
                    }
                })
                .collect();
            Ok((leaf, steps))
        })
        .collect::<Result<_>>()?;

    let model_id = hash_model_identity(tree, policy, epsilon, variants);
    Ok(GmraModel {
        tree: tree.clone(),
        nodes,
        policy: policy.clone(),
        variants,
        epsilon,
        leaf_paths: paths.into_iter().collect(),
        model_id,
    })
}

/// Assembles a model from parts (used when loading from storage).
pub(crate) fn assemble_model(
    tree: PartitionTree,
    nodes: BTreeMap<NodeKey, GmraNode>,
    policy: DimensionPolicy,
    variants: GmraVariants,
    epsilon: f64,
    model_id: u64,
) -> Result<GmraModel> {
    let leaf_keys: Vec<NodeKey> = tree.leaves().map(|l| l.key).collect();
    let mut leaf_paths = BTreeMap::new();
    for leaf in leaf_keys {
        let path = tree.path_from_root(leaf)?;
        let leaf_node = nodes.get(&leaf).ok_or(Error::NodeNotFound(leaf))?;
        let steps = path[..path.len() - 1]
            .iter()
            .map(|&ancestor| {
                let anc = nodes.get(&ancestor).ok_or(Error::NodeNotFound(ancestor))?;
                Ok(PathStep {
                    node: ancestor,
                    phi_product: anc.basis.matrix().tr_mul(leaf_node.basis.matrix()),
                    center_offset: anc.basis.coefficients(&(&leaf_node.center - &anc.center)),
                })
            })
            .collect::<Result<_>>()?;
        leaf_paths.insert(leaf, steps);
    }
    Ok(GmraModel {
        tree,
        nodes,
        policy,
        variants,
        epsilon,
        leaf_paths,
        model_id,
    })
}

fn hash_model_identity(
    tree: &PartitionTree,
    policy: &DimensionPolicy,
    epsilon: f64,
    variants: GmraVariants,
) -> u64 {
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    tree.n_points().hash(&mut hasher);
    tree.ambient_dim().hash(&mut hasher);
    tree.node_count().hash(&mut hasher);
    tree.max_scale().hash(&mut hasher);
    tree.rng_seed().hash(&mut hasher);
    format!("{policy:?}").hash(&mut hasher);
    epsilon.to_bits().hash(&mut hasher);
    variants.tangential_corrections.hash(&mut hasher);
    variants.split_shared_wavelets.hash(&mut hasher);
    hasher.finish()
}

/// Numerical check of the relative-threshold error bound
/// `E_j² <= ε_j |||M|||²_F` for every scale; returns the largest ratio
/// observed (at most 1 when the bound holds). `None` when the interior
/// policy is not relative thresholding.
pub fn relative_bound_ratio(model: &GmraModel, cloud: &PointCloud) -> Option<f64> {
    let sched = match &model.policy.interior {
        PolicyKind::RelativeThreshold(s) => s.clone(),
        _ => return None,
    };
    let frob_weighted: f64 =
        (0..cloud.n()).map(|i| cloud.point(i).norm_squared()).sum::<f64>() / cloud.n() as f64;
    let mut worst: f64 = 0.0;
    for j in 0..=model.max_scale() {
        let e = model.approximation_error_spectral(j);
        let bound = sched.at(j) * frob_weighted;
        if bound > 0.0 {
            worst = worst.max(e * e / bound);
        }
    }
    Some(worst)
}
