//! Per-scale generative model: on each cell of a scale's partition, a
//! diagonal Gaussian in the local PCA frame, weighted by the empirical cell
//! measure. Samples land exactly on the scale's approximating planes.
//! Hausdorff distances (max and median flavors) evaluate the generated
//! clouds against held-out data.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::tree::NodeKey;
use crate::wavelets::GmraModel;

/// Gaussian factor on one cell's plane.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFactor {
    pub key: NodeKey,
    /// Empirical cell weight `n_cell / n`.
    pub weight: f64,
    pub center: DVector<f64>,
    /// Local plane directions (columns).
    pub basis: DMatrix<f64>,
    /// Mean of the local coordinates (near zero by construction).
    pub local_mean: DVector<f64>,
    /// Per-axis standard deviations in the PCA frame.
    pub local_std: DVector<f64>,
    /// Lower-triangular covariance factor when the model is fitted with a
    /// full local covariance instead of a diagonal one.
    pub local_chol: Option<DMatrix<f64>>,
}

/// The scale-`j` mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleModel {
    pub scale: usize,
    pub cells: Vec<CellFactor>,
}

/// Covariance structure of the per-cell factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorShape {
    Diagonal,
    Full,
}

/// Fits the scale-`j` mixture from the training cloud.
pub fn fit_scale_model(
    model: &GmraModel,
    cloud: &PointCloud,
    scale: usize,
    shape: FactorShape,
) -> Result<ScaleModel> {
    if scale > model.max_scale() {
        return Err(Error::NotApplicable(format!(
            "scale {scale} beyond the model's maximum {}",
            model.max_scale()
        )));
    }
    let n = cloud.n() as f64;
    let mut cells = Vec::new();
    for key in model.tree().partition_at_scale(scale) {
        let cell = model.tree().node(key)?;
        let node = model.node(key)?;
        let d = node.dim();
        let m = cell.size();
        // Local coordinates of the cell's points.
        let mut coords = DMatrix::zeros(d, m);
        for (slot, &i) in cell.point_indices.iter().enumerate() {
            let centered = cloud.point(i) - &node.center;
            coords.set_column(slot, &node.basis.coefficients(&centered.clone_owned()));
        }
        let local_mean = DVector::from_fn(d, |l, _| coords.row(l).sum() / m as f64);
        let mut local_std = DVector::zeros(d);
        for l in 0..d {
            let var = coords
                .row(l)
                .iter()
                .map(|&v| (v - local_mean[l]) * (v - local_mean[l]))
                .sum::<f64>()
                / m as f64;
            local_std[l] = var.max(0.0).sqrt();
        }
        let local_chol = match shape {
            FactorShape::Diagonal => None,
            FactorShape::Full => {
                let mut centered = coords.clone();
                for mut col in centered.column_iter_mut() {
                    col -= &local_mean;
                }
                let cov = &centered * centered.transpose() / m as f64;
                // Tiny ridge keeps degenerate cells factorizable.
                let ridge = DMatrix::identity(d, d) * 1e-12;
                (cov + ridge).cholesky().map(|c| c.l())
            }
        };
        cells.push(CellFactor {
            key,
            weight: m as f64 / n,
            center: node.center.clone(),
            basis: node.basis.matrix().clone(),
            local_mean,
            local_std,
            local_chol,
        });
    }
    Ok(ScaleModel { scale, cells })
}

/// Draws `m` points from the mixture; every sample lies exactly on its
/// cell's plane.
pub fn sample(scale_model: &ScaleModel, m: usize, seed: u64) -> Result<PointCloud> {
    sample_with_cells(scale_model, m, seed).map(|(cloud, _)| cloud)
}

/// As [`sample`], additionally reporting which mixture cell generated each
/// point.
pub fn sample_with_cells(
    scale_model: &ScaleModel,
    m: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    if m == 0 {
        return Err(Error::SpecError("sample count must be at least 1".into()));
    }
    let ambient = scale_model
        .cells
        .first()
        .map(|c| c.center.len())
        .ok_or(Error::EmptyInput)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cumulative = Vec::with_capacity(scale_model.cells.len());
    let mut acc = 0.0;
    for c in &scale_model.cells {
        acc += c.weight;
        cumulative.push(acc);
    }
    let mut data = DMatrix::zeros(ambient, m);
    let mut labels = Vec::with_capacity(m);
    for p in 0..m {
        let u: f64 = rng.random_range(0.0..1.0);
        let idx = cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(scale_model.cells.len() - 1);
        let cell = &scale_model.cells[idx];
        let d = cell.local_std.len();
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let local = match &cell.local_chol {
            Some(l) => &cell.local_mean + l * g,
            None => &cell.local_mean + DVector::from_fn(d, |l, _| cell.local_std[l] * g[l]),
        };
        data.set_column(p, &(&cell.basis * local + &cell.center));
        labels.push(idx);
    }
    let cloud =
        PointCloud::from_columns(data, format!("sampled_scale{}", scale_model.scale))?;
    Ok((cloud, labels))
}

/// Distance aggregation for Hausdorff evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HausdorffMode {
    /// Classic symmetric Hausdorff distance.
    Max,
    /// Max over both directions of the median nearest-neighbor distance.
    Median,
}

/// Hausdorff distance between two clouds under the chosen aggregation.
pub fn hausdorff(a: &PointCloud, b: &PointCloud, mode: HausdorffMode) -> f64 {
    let d_ab = directed_nn_distances(a, b);
    let d_ba = directed_nn_distances(b, a);
    match mode {
        HausdorffMode::Max => {
            let m_ab = d_ab.iter().cloned().fold(0.0, f64::max);
            let m_ba = d_ba.iter().cloned().fold(0.0, f64::max);
            m_ab.max(m_ba)
        }
        HausdorffMode::Median => median(d_ab).max(median(d_ba)),
    }
}

fn directed_nn_distances(from: &PointCloud, to: &PointCloud) -> Vec<f64> {
    (0..from.n())
        .into_par_iter()
        .map(|i| {
            let x = from.point(i);
            (0..to.n())
                .map(|j| (&x - to.point(j)).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_tree, SplitMethod, StoppingRule};
    use crate::wavelets::{construct_gmra, DimensionPolicy, GmraVariants};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn square_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
        PointCloud::from_columns(data, "square").unwrap()
    }

    fn model_over(cloud: &PointCloud, d: usize, seed: u64) -> GmraModel {
        let tree = build_tree(
            cloud,
            SplitMethod::IteratedPca,
            &StoppingRule::for_dimension(d),
            seed,
        )
        .unwrap();
        construct_gmra(
            cloud,
            &tree,
            &DimensionPolicy::fixed(d),
            1e-3,
            GmraVariants::default(),
        )
        .unwrap()
    }

    #[test]
    fn uniform_square_std_matches_population() {
        let cloud = square_cloud(10_000, 1);
        let model = model_over(&cloud, 2, 1);
        let sm = fit_scale_model(&model, &cloud, 0, FactorShape::Diagonal).unwrap();
        assert_eq!(sm.cells.len(), 1);
        let expected = (4.0f64 / 12.0).sqrt(); // uniform on [-1, 1]
        for l in 0..2 {
            let got = sm.cells[0].local_std[l];
            assert!(
                (got / expected - 1.0).abs() < 0.05,
                "std {got} vs population {expected}"
            );
        }
        // Weight normalization.
        let total: f64 = sm.cells.iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_cell_is_a_delta() {
        let data = DMatrix::from_column_slice(2, 1, &[3.0, -1.0]);
        let cloud = PointCloud::from_columns(data, "one").unwrap();
        let model = model_over(&cloud, 1, 0);
        let sm = fit_scale_model(&model, &cloud, 0, FactorShape::Diagonal).unwrap();
        let samples = sample(&sm, 20, 9).unwrap();
        for p in 0..samples.n() {
            assert!((samples.point(p) - cloud.point(0)).norm() < 1e-12);
        }
    }

    #[test]
    fn weights_follow_cell_counts() {
        // Two clusters of 300 and 700 points force a 0.3/0.7 split at the
        // first scale.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut data = DMatrix::zeros(2, 1000);
        for p in 0..300 {
            data[(0, p)] = rng.random_range(-0.5..0.5);
            data[(1, p)] = rng.random_range(-0.5..0.5);
        }
        for p in 300..1000 {
            data[(0, p)] = 50.0 + rng.random_range(-0.5..0.5);
            data[(1, p)] = rng.random_range(-0.5..0.5);
        }
        let cloud = PointCloud::from_columns(data, "two").unwrap();
        let model = model_over(&cloud, 2, 5);
        let sm = fit_scale_model(&model, &cloud, 1, FactorShape::Diagonal).unwrap();
        let mut weights: Vec<f64> = sm.cells.iter().map(|c| c.weight).collect();
        weights.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((weights[0] - 0.3).abs() < 1e-12);
        assert!((weights[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn samples_lie_on_their_planes_and_follow_weights() {
        let cloud = square_cloud(4000, 7);
        let model = model_over(&cloud, 2, 7);
        let scale = 2.min(model.max_scale());
        let sm = fit_scale_model(&model, &cloud, scale, FactorShape::Diagonal).unwrap();
        let m = 4000;
        let (samples, labels) = sample_with_cells(&sm, m, 11).unwrap();
        // On-plane check against the actual generating plane.
        let mut histogram = vec![0usize; sm.cells.len()];
        for p in 0..samples.n() {
            let x = samples.point(p).into_owned();
            let c = &sm.cells[labels[p]];
            let centered = &x - &c.center;
            let proj = &c.basis * (c.basis.tr_mul(&centered)) + &c.center;
            let dist = (&x - proj).norm();
            assert!(dist < 1e-10, "sample off its generating plane by {dist}");
            histogram[labels[p]] += 1;
        }
        // Multinomial concentration: observed counts within 3 sigma.
        for (idx, c) in sm.cells.iter().enumerate() {
            let expected = c.weight * m as f64;
            let sigma = (m as f64 * c.weight * (1.0 - c.weight)).sqrt();
            let got = histogram[idx] as f64;
            assert!(
                (got - expected).abs() <= 3.0 * sigma + 1e-9,
                "cell {idx}: got {got}, expected {expected} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn hausdorff_examples_and_oracle() {
        let a = PointCloud::from_columns(DMatrix::from_column_slice(1, 1, &[0.0]), "a").unwrap();
        let b = PointCloud::from_columns(DMatrix::from_column_slice(1, 1, &[3.0]), "b").unwrap();
        assert_eq!(hausdorff(&a, &a, HausdorffMode::Max), 0.0);
        assert_eq!(hausdorff(&a, &b, HausdorffMode::Max), 3.0);
        assert_eq!(hausdorff(&a, &b, HausdorffMode::Median), 3.0);

        // Random pair against a quadratic-scan oracle.
        let x = square_cloud(50, 21);
        let y = square_cloud(50, 22);
        let got = hausdorff(&x, &y, HausdorffMode::Max);
        let mut oracle: f64 = 0.0;
        for i in 0..x.n() {
            let mut nn = f64::INFINITY;
            for j in 0..y.n() {
                nn = nn.min((x.point(i) - y.point(j)).norm());
            }
            oracle = oracle.max(nn);
        }
        for j in 0..y.n() {
            let mut nn = f64::INFINITY;
            for i in 0..x.n() {
                nn = nn.min((x.point(i) - y.point(j)).norm());
            }
            oracle = oracle.max(nn);
        }
        assert_eq!(got, oracle);
    }
}
