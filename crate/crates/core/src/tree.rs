//! Multiscale binary partition trees over point clouds.
//!
//! Cells are split either by the sign of the projection onto the cell's top
//! principal direction (iterated PCA) or by seeded 2-means. Children of
//! `(j, k)` are keyed `(j+1, 2k)` and `(j+1, 2k+1)`, so identical inputs
//! yield identical trees regardless of traversal or thread schedule.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::linalg;

/// Identifier `(j, k)` of a dyadic cell: scale and within-scale index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeKey {
    pub scale: usize,
    pub index: usize,
}

impl NodeKey {
    pub const ROOT: NodeKey = NodeKey { scale: 0, index: 0 };

    pub fn left_child(self) -> NodeKey {
        NodeKey {
            scale: self.scale + 1,
            index: 2 * self.index,
        }
    }

    pub fn right_child(self) -> NodeKey {
        NodeKey {
            scale: self.scale + 1,
            index: 2 * self.index + 1,
        }
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.scale, self.index)
    }
}

impl FromStr for NodeKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (j, k) = s.split_once(',').ok_or_else(|| Error::ParseError {
            line: 0,
            message: format!("bad node key '{s}'"),
        })?;
        let parse = |t: &str| {
            t.trim().parse::<usize>().map_err(|_| Error::ParseError {
                line: 0,
                message: format!("bad node key '{s}'"),
            })
        };
        Ok(NodeKey {
            scale: parse(j)?,
            index: parse(k)?,
        })
    }
}

/// How a cell is split into its two children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    IteratedPca,
    IteratedKMeans,
}

/// When a cell stops splitting.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StoppingRule {
    /// Cells at or below this size become leaves.
    pub min_cell_size: usize,
    /// No cell is created beyond this scale.
    pub max_scale: usize,
    /// Stop splitting once the PCA residual beyond `working_dim`
    /// (variance units) falls to this level or below. `None` disables.
    pub homogeneity: Option<f64>,
    /// Working dimension used by the homogeneity rule.
    pub working_dim: usize,
}

impl StoppingRule {
    /// Default rule for a target local dimension: cells keep at least
    /// `max(10, 2 d)` points so local covariances stay estimable.
    pub fn for_dimension(working_dim: usize) -> Self {
        Self {
            min_cell_size: 10usize.max(2 * working_dim),
            max_scale: 24,
            homogeneity: None,
            working_dim,
        }
    }
}

/// A dyadic cell: its points, empirical center and tree links.
#[derive(Debug, Clone, PartialEq)]
pub struct CellNode {
    pub key: NodeKey,
    pub parent: Option<NodeKey>,
    pub children: Vec<NodeKey>,
    pub point_indices: Vec<usize>,
    pub center: DVector<f64>,
}

impl CellNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn size(&self) -> usize {
        self.point_indices.len()
    }
}

/// The full multiscale partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTree {
    nodes: BTreeMap<NodeKey, CellNode>,
    max_scale: usize,
    n_points: usize,
    ambient_dim: usize,
    split_method: SplitMethod,
    stop: StoppingRule,
    rng_seed: u64,
    leaf_of_point: Vec<NodeKey>,
}

impl PartitionTree {
    pub fn root(&self) -> &CellNode {
        &self.nodes[&NodeKey::ROOT]
    }

    pub fn node(&self, key: NodeKey) -> Result<&CellNode> {
        self.nodes.get(&key).ok_or(Error::NodeNotFound(key))
    }

    pub fn contains(&self, key: NodeKey) -> bool {
        self.nodes.contains_key(&key)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &CellNode> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn keys(&self) -> impl Iterator<Item = NodeKey> + '_ {
        self.nodes.keys().copied()
    }

    /// Deepest scale present in the tree.
    pub fn max_scale(&self) -> usize {
        self.max_scale
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn split_method(&self) -> SplitMethod {
        self.split_method
    }

    pub fn stopping_rule(&self) -> &StoppingRule {
        &self.stop
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// Leaf cell containing training point `i`.
    pub fn leaf_of_point(&self, i: usize) -> NodeKey {
        self.leaf_of_point[i]
    }

    /// Leaf with the nearest center to `x` (exact linear scan; ties go to
    /// the smaller key).
    pub fn nearest_leaf(&self, x: &DVector<f64>) -> Result<NodeKey> {
        if x.len() != self.ambient_dim {
            return Err(Error::DimMismatch {
                expected: self.ambient_dim,
                got: x.len(),
            });
        }
        let mut best: Option<(f64, NodeKey)> = None;
        for leaf in self.leaves() {
            let d = (x - &leaf.center).norm_squared();
            let better = match best {
                None => true,
                Some((bd, bk)) => d < bd || (d == bd && leaf.key < bk),
            };
            if better {
                best = Some((d, leaf.key));
            }
        }
        Ok(best.expect("tree has at least one leaf").1)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &CellNode> {
        self.nodes.values().filter(|n| n.is_leaf())
    }

    /// Path from the root to `key`, inclusive.
    pub fn path_from_root(&self, key: NodeKey) -> Result<Vec<NodeKey>> {
        let mut path = vec![key];
        let mut cur = self.node(key)?;
        while let Some(parent) = cur.parent {
            path.push(parent);
            cur = self.node(parent)?;
        }
        path.reverse();
        Ok(path)
    }

    /// Cells forming the partition at scale `j`: nodes at scale `j` plus
    /// leaves at coarser scales. Their point sets tile the cloud.
    pub fn partition_at_scale(&self, j: usize) -> Vec<NodeKey> {
        self.nodes
            .values()
            .filter(|n| n.key.scale == j || (n.is_leaf() && n.key.scale < j))
            .map(|n| n.key)
            .collect()
    }

    /// Ancestor of the leaf of point `i` at scale `j` (the leaf itself when
    /// it sits above `j`).
    pub fn cell_of_point_at_scale(&self, i: usize, j: usize) -> NodeKey {
        let mut key = self.leaf_of_point[i];
        while key.scale > j {
            key = self.nodes[&key].parent.expect("non-root has parent");
        }
        key
    }

    /// Per-scale radius diagnostics (radius = max distance from center).
    pub fn cell_diameter_stats(&self, cloud: &PointCloud) -> Vec<ScaleDiameterStats> {
        let mut out = Vec::new();
        for j in 0..=self.max_scale {
            let cells: Vec<&CellNode> = self
                .nodes
                .values()
                .filter(|n| n.key.scale == j)
                .collect();
            if cells.is_empty() {
                continue;
            }
            let radii: Vec<f64> = cells
                .iter()
                .map(|cell| {
                    cell.point_indices
                        .iter()
                        .map(|&i| (cloud.point(i) - &cell.center).norm())
                        .fold(0.0, f64::max)
                })
                .collect();
            out.push(ScaleDiameterStats {
                scale: j,
                cell_count: cells.len(),
                mean_radius: radii.iter().sum::<f64>() / radii.len() as f64,
                max_radius: radii.iter().cloned().fold(0.0, f64::max),
            });
        }
        out
    }

    /// Checks the structural invariants against the source cloud.
    pub fn validate(&self, cloud: &PointCloud) -> Result<()> {
        let root = self.root();
        if root.size() != cloud.n() {
            return Err(Error::Config("root does not hold all points".into()));
        }
        for node in self.nodes.values() {
            if !(node.children.is_empty() || node.children.len() == 2) {
                return Err(Error::Config(format!("node {} has {} children", node.key, node.children.len())));
            }
            let mean = cloud.mean_of(&node.point_indices);
            let drift = (&mean - &node.center).norm();
            if drift >= 1e-10 * (1.0 + mean.norm()) {
                return Err(Error::Config(format!("center drift {drift:.3e} at {}", node.key)));
            }
            if !node.children.is_empty() {
                let mut merged: Vec<usize> = node
                    .children
                    .iter()
                    .flat_map(|c| self.nodes[c].point_indices.iter().copied())
                    .collect();
                merged.sort_unstable();
                let mut parent_sorted = node.point_indices.clone();
                parent_sorted.sort_unstable();
                if merged != parent_sorted {
                    return Err(Error::Config(format!("children of {} do not partition it", node.key)));
                }
            }
        }
        for j in 0..=self.max_scale {
            let mut covered: Vec<usize> = self
                .partition_at_scale(j)
                .iter()
                .flat_map(|k| self.nodes[k].point_indices.iter().copied())
                .collect();
            covered.sort_unstable();
            if covered != (0..cloud.n()).collect::<Vec<_>>() {
                return Err(Error::Config(format!("partition at scale {j} does not tile the cloud")));
            }
        }
        Ok(())
    }

    /// JSON form: nodes keyed `"j,k"` with parent, children, point indices
    /// and center.
    pub fn to_json_string(&self) -> Result<String> {
        let repr = TreeRepr {
            version: 1,
            split_method: self.split_method,
            stop: self.stop.clone(),
            rng_seed: self.rng_seed,
            n_points: self.n_points,
            ambient_dim: self.ambient_dim,
            max_scale: self.max_scale,
            nodes: self
                .nodes
                .values()
                .map(|n| {
                    (
                        n.key.to_string(),
                        NodeRepr {
                            parent: n.parent.map(|p| p.to_string()),
                            children: n.children.iter().map(|c| c.to_string()).collect(),
                            point_indices: n.point_indices.clone(),
                            center: n.center.iter().copied().collect(),
                        },
                    )
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&repr)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let repr: TreeRepr = serde_json::from_str(s)?;
        let mut nodes = BTreeMap::new();
        for (key_str, node) in &repr.nodes {
            let key: NodeKey = key_str.parse()?;
            let parent = node.parent.as_deref().map(str::parse).transpose()?;
            let children = node
                .children
                .iter()
                .map(|c| c.parse())
                .collect::<Result<Vec<NodeKey>>>()?;
            nodes.insert(
                key,
                CellNode {
                    key,
                    parent,
                    children,
                    point_indices: node.point_indices.clone(),
                    center: DVector::from_vec(node.center.clone()),
                },
            );
        }
        let mut leaf_of_point = vec![NodeKey::ROOT; repr.n_points];
        for node in nodes.values().filter(|n| n.is_leaf()) {
            for &i in &node.point_indices {
                leaf_of_point[i] = node.key;
            }
        }
        Ok(Self {
            nodes,
            max_scale: repr.max_scale,
            n_points: repr.n_points,
            ambient_dim: repr.ambient_dim,
            split_method: repr.split_method,
            stop: repr.stop,
            rng_seed: repr.rng_seed,
            leaf_of_point,
        })
    }

    /// Replaces the node map (used by construction passes that prune the
    /// tree, e.g. the orthogonal build). Point-leaf assignments are rebuilt.
    pub(crate) fn with_nodes(&self, nodes: BTreeMap<NodeKey, CellNode>) -> Self {
        let max_scale = nodes.keys().map(|k| k.scale).max().unwrap_or(0);
        let mut leaf_of_point = vec![NodeKey::ROOT; self.n_points];
        for node in nodes.values().filter(|n| n.is_leaf()) {
            for &i in &node.point_indices {
                leaf_of_point[i] = node.key;
            }
        }
        Self {
            nodes,
            max_scale,
            leaf_of_point,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct TreeRepr {
    version: u32,
    split_method: SplitMethod,
    stop: StoppingRule,
    rng_seed: u64,
    n_points: usize,
    ambient_dim: usize,
    max_scale: usize,
    nodes: BTreeMap<String, NodeRepr>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct NodeRepr {
    parent: Option<String>,
    children: Vec<String>,
    point_indices: Vec<usize>,
    center: Vec<f64>,
}

/// Per-scale cell radius summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleDiameterStats {
    pub scale: usize,
    pub cell_count: usize,
    pub mean_radius: f64,
    pub max_radius: f64,
}

/// Builds the multiscale binary partition of a cloud.
pub fn build_tree(
    cloud: &PointCloud,
    method: SplitMethod,
    stop: &StoppingRule,
    seed: u64,
) -> Result<PartitionTree> {
    if cloud.n() == 0 {
        return Err(Error::EmptyInput);
    }
    let mut nodes: BTreeMap<NodeKey, CellNode> = BTreeMap::new();
    let root_indices: Vec<usize> = (0..cloud.n()).collect();
    let root_center = cloud.mean_of(&root_indices);
    nodes.insert(
        NodeKey::ROOT,
        CellNode {
            key: NodeKey::ROOT,
            parent: None,
            children: Vec::new(),
            point_indices: root_indices,
            center: root_center,
        },
    );

    let mut frontier = vec![NodeKey::ROOT];
    let mut max_scale = 0;
    while let Some(key) = frontier.pop() {
        let (indices, center) = {
            let node = &nodes[&key];
            (node.point_indices.clone(), node.center.clone())
        };
        if indices.len() <= stop.min_cell_size || key.scale >= stop.max_scale {
            continue;
        }
        if let Some(eps_stop) = stop.homogeneity {
            let cell = cloud.gather(&indices);
            let (_, spectrum) = linalg::principal_components(&cell, &center)?;
            if spectrum.tail_sum(stop.working_dim) <= eps_stop {
                continue;
            }
        }
        let split = match method {
            SplitMethod::IteratedPca => split_by_top_direction(cloud, &indices, &center)?,
            SplitMethod::IteratedKMeans => split_by_two_means(cloud, &indices, seed, key),
        };
        let Some((left, right)) = split else {
            continue; // degenerate cell: keep as leaf
        };
        for (child_key, child_indices) in [(key.left_child(), left), (key.right_child(), right)] {
            let center = cloud.mean_of(&child_indices);
            nodes.insert(
                child_key,
                CellNode {
                    key: child_key,
                    parent: Some(key),
                    children: Vec::new(),
                    point_indices: child_indices,
                    center,
                },
            );
            max_scale = max_scale.max(child_key.scale);
            frontier.push(child_key);
        }
        let node = nodes.get_mut(&key).expect("node exists");
        node.children = vec![key.left_child(), key.right_child()];
    }

    let mut leaf_of_point = vec![NodeKey::ROOT; cloud.n()];
    for node in nodes.values().filter(|n| n.is_leaf()) {
        for &i in &node.point_indices {
            leaf_of_point[i] = node.key;
        }
    }
    Ok(PartitionTree {
        nodes,
        max_scale,
        n_points: cloud.n(),
        ambient_dim: cloud.ambient_dim(),
        split_method: method,
        stop: stop.clone(),
        rng_seed: seed,
        leaf_of_point,
    })
}

/// Splits by the sign of the coordinate along the cell's top principal
/// direction; exact zeros go left. Returns `None` when one side is empty.
fn split_by_top_direction(
    cloud: &PointCloud,
    indices: &[usize],
    center: &DVector<f64>,
) -> Result<Option<(Vec<usize>, Vec<usize>)>> {
    let cell = cloud.gather(indices);
    let (vectors, spectrum) = linalg::principal_components(&cell, center)?;
    if spectrum.values().first().copied().unwrap_or(0.0) <= 0.0 {
        return Ok(None);
    }
    let direction = vectors.column(0);
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &i in indices {
        let coord = direction.dot(&(cloud.point(i) - center));
        if coord > 0.0 {
            right.push(i);
        } else {
            left.push(i);
        }
    }
    if left.is_empty() || right.is_empty() {
        return Ok(None);
    }
    Ok(Some((left, right)))
}

const KMEANS_MAX_ITERS: usize = 100;

/// Seeded 2-means with farthest-point initialization. Assignment ties go to
/// the first center; center updates are sequential sums, so the result is
/// independent of thread count.
fn split_by_two_means(
    cloud: &PointCloud,
    indices: &[usize],
    seed: u64,
    key: NodeKey,
) -> Option<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((key.scale as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ key.index as u64);
    let first = indices[rng.random_range(0..indices.len())];
    let mut c0 = cloud.point(first).into_owned();
    let (mut far_idx, mut far_dist) = (first, -1.0f64);
    for &i in indices {
        let d = (cloud.point(i) - &c0).norm_squared();
        if d > far_dist {
            far_dist = d;
            far_idx = i;
        }
    }
    if far_dist <= 0.0 {
        return None; // all points identical
    }
    let mut c1 = cloud.point(far_idx).into_owned();

    let mut assignment = vec![0u8; indices.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (slot, &i) in indices.iter().enumerate() {
            let d0 = (cloud.point(i) - &c0).norm_squared();
            let d1 = (cloud.point(i) - &c1).norm_squared();
            let a = u8::from(d1 < d0);
            if assignment[slot] != a {
                assignment[slot] = a;
                changed = true;
            }
        }
        let mut sum0 = DVector::zeros(cloud.ambient_dim());
        let mut sum1 = DVector::zeros(cloud.ambient_dim());
        let mut n0 = 0usize;
        let mut n1 = 0usize;
        for (slot, &i) in indices.iter().enumerate() {
            if assignment[slot] == 0 {
                sum0 += cloud.point(i);
                n0 += 1;
            } else {
                sum1 += cloud.point(i);
                n1 += 1;
            }
        }
        if n0 == 0 || n1 == 0 {
            return None;
        }
        c0 = sum0 / n0 as f64;
        c1 = sum1 / n1 as f64;
        if !changed {
            break;
        }
    }
    let left: Vec<usize> = indices
        .iter()
        .zip(&assignment)
        .filter(|(_, &a)| a == 0)
        .map(|(&i, _)| i)
        .collect();
    let right: Vec<usize> = indices
        .iter()
        .zip(&assignment)
        .filter(|(_, &a)| a == 1)
        .map(|(&i, _)| i)
        .collect();
    if left.is_empty() || right.is_empty() {
        return None;
    }
    Some((left, right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn cloud_from_rows(rows: &[&[f64]]) -> PointCloud {
        let d = rows[0].len();
        let mut data = DMatrix::zeros(d, rows.len());
        for (p, row) in rows.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                data[(i, p)] = v;
            }
        }
        PointCloud::from_columns(data, "test").unwrap()
    }

    fn grid_cloud_1d(n: usize) -> PointCloud {
        let data = DMatrix::from_fn(1, n, |_, p| p as f64 / (n - 1) as f64);
        PointCloud::from_columns(data, "segment").unwrap()
    }

    #[test]
    fn identical_points_stay_in_one_leaf() {
        let cloud = cloud_from_rows(&[&[2.0, 3.0], &[2.0, 3.0]]);
        let stop = StoppingRule {
            min_cell_size: 1,
            max_scale: 8,
            homogeneity: None,
            working_dim: 1,
        };
        for method in [SplitMethod::IteratedPca, SplitMethod::IteratedKMeans] {
            let tree = build_tree(&cloud, method, &stop, 1).unwrap();
            assert_eq!(tree.node_count(), 1);
            assert!(tree.root().is_leaf());
        }
    }

    #[test]
    fn pca_split_follows_top_singular_direction() {
        let z = 1e-3;
        let cloud = cloud_from_rows(&[&[-1.0, 0.0], &[-1.0, z], &[1.0, 0.0], &[1.0, z]]);
        let stop = StoppingRule {
            min_cell_size: 1,
            max_scale: 1,
            homogeneity: None,
            working_dim: 1,
        };
        let tree = build_tree(&cloud, SplitMethod::IteratedPca, &stop, 0).unwrap();
        let root = tree.root();
        assert_eq!(root.children.len(), 2);
        // Enumerate the two sign partitions of the top direction: the split
        // must separate x < 0 from x > 0, never 0 from z.
        let mut sides: Vec<Vec<usize>> = root
            .children
            .iter()
            .map(|c| {
                let mut v = tree.node(*c).unwrap().point_indices.clone();
                v.sort_unstable();
                v
            })
            .collect();
        sides.sort();
        assert_eq!(sides, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn segment_radius_halves_per_scale() {
        let cloud = grid_cloud_1d(256);
        let stop = StoppingRule::for_dimension(1);
        let tree = build_tree(&cloud, SplitMethod::IteratedPca, &stop, 0).unwrap();
        let stats = tree.cell_diameter_stats(&cloud);
        assert!(stats.len() >= 4);
        for w in stats.windows(2).take(4) {
            let ratio = w[1].mean_radius / w[0].mean_radius;
            assert!(
                (0.375..=0.625).contains(&ratio),
                "radius ratio {ratio} at scale {}",
                w[1].scale
            );
        }
    }

    #[test]
    fn one_point_cloud_has_zero_radius() {
        let cloud = cloud_from_rows(&[&[1.0, 2.0, 3.0]]);
        let tree = build_tree(
            &cloud,
            SplitMethod::IteratedPca,
            &StoppingRule::for_dimension(1),
            0,
        )
        .unwrap();
        let stats = tree.cell_diameter_stats(&cloud);
        assert!(stats.iter().all(|s| s.max_radius == 0.0));
    }

    #[test]
    fn invariants_hold_on_random_cloud() {
        let data = DMatrix::from_fn(3, 300, |i, p| ((p * 31 + i * 7) % 101) as f64 / 101.0);
        let cloud = PointCloud::from_columns(data, "rand").unwrap();
        for method in [SplitMethod::IteratedPca, SplitMethod::IteratedKMeans] {
            let tree = build_tree(&cloud, method, &StoppingRule::for_dimension(2), 3).unwrap();
            tree.validate(&cloud).unwrap();
            assert!(tree.max_scale() >= 2);
        }
    }

    #[test]
    fn builds_are_deterministic_byte_for_byte() {
        let data = DMatrix::from_fn(4, 200, |i, p| ((p * 17 + i * 3) % 97) as f64 / 97.0);
        let cloud = PointCloud::from_columns(data, "rand").unwrap();
        for method in [SplitMethod::IteratedPca, SplitMethod::IteratedKMeans] {
            let stop = StoppingRule::for_dimension(2);
            let a = build_tree(&cloud, method, &stop, 11).unwrap();
            let b = build_tree(&cloud, method, &stop, 11).unwrap();
            assert_eq!(a.to_json_string().unwrap(), b.to_json_string().unwrap());
        }
    }

    #[test]
    fn json_round_trip_preserves_tree() {
        let data = DMatrix::from_fn(2, 64, |i, p| ((p * 13 + i) % 29) as f64);
        let cloud = PointCloud::from_columns(data, "rand").unwrap();
        let tree = build_tree(
            &cloud,
            SplitMethod::IteratedKMeans,
            &StoppingRule::for_dimension(1),
            5,
        )
        .unwrap();
        let json = tree.to_json_string().unwrap();
        let back = PartitionTree::from_json_str(&json).unwrap();
        assert_eq!(tree, back);
    }

    #[test]
    fn homogeneity_rule_stops_flat_cells() {
        // Points exactly on a line: residual beyond working_dim 1 is zero.
        let cloud = grid_cloud_1d(64);
        let stop = StoppingRule {
            min_cell_size: 1,
            max_scale: 10,
            homogeneity: Some(0.0),
            working_dim: 1,
        };
        let tree = build_tree(&cloud, SplitMethod::IteratedPca, &stop, 0).unwrap();
        assert_eq!(tree.node_count(), 1);
    }
}
