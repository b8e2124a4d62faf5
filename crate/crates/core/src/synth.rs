//! Synthetic dataset generators: canonical low-dimensional manifolds embedded
//! in `R^D` by a seeded random isometry, plus a band-limited function
//! ensemble sampled on a fixed grid.
//!
//! All generators are deterministic under the spec seed (ChaCha8 streams:
//! 1 = parameters, 2 = embedding, 3 = ambient noise). Ambient noise is
//! isotropic Gaussian with per-coordinate deviation `sigma / sqrt(D)`.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Oscillating2DWave constants: surface `(u, v, A sin(w u))`,
/// `u in [0,2]`, `v in [0,1]`.
pub const OSC_AMPLITUDE: f64 = 0.4;
pub const OSC_FREQUENCY: f64 = 2.0 * std::f64::consts::PI;

/// Which synthetic set to draw.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GeneratorKind {
    /// `(t cos t, h, t sin t)`, `t in [3pi/2, 9pi/2]`, `h in [0, 21]`.
    SwissRoll,
    /// `(sin t, h, sign(t)(cos t - 1))`, `t in [-3pi/2, 3pi/2]`, `h in [0, 2]`.
    SManifold,
    /// `(u, v, A sin(w u))` with the constants above.
    Oscillating2DWave,
    /// Unit sphere `S^d` in `R^(d+1)`.
    NoisySphere { intrinsic_dim: usize },
    /// Random band-limited functions sampled on a `D`-point grid:
    /// `f(x) = sum_j a_j cos(j x)` for `j = 0..=max_freq`, with `a_j`
    /// Gaussian of mean `2^(-band(j) * alpha)` and deviation one fifth of
    /// the mean, where `band(j) = floor(log2(max(j, 1)))` groups the
    /// frequencies into dyadic bands.
    BandLimited { max_freq: usize, alpha: f64 },
}

impl GeneratorKind {
    /// Dimension of the canonical (pre-embedding) representation.
    pub fn canonical_dim(&self) -> usize {
        match self {
            GeneratorKind::SwissRoll
            | GeneratorKind::SManifold
            | GeneratorKind::Oscillating2DWave => 3,
            GeneratorKind::NoisySphere { intrinsic_dim } => intrinsic_dim + 1,
            GeneratorKind::BandLimited { .. } => 0, // sampled directly on the grid
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorKind::SwissRoll => "swissroll",
            GeneratorKind::SManifold => "s_manifold",
            GeneratorKind::Oscillating2DWave => "oscillating2dwave",
            GeneratorKind::NoisySphere { .. } => "noisy_sphere",
            GeneratorKind::BandLimited { .. } => "band_limited",
        }
    }
}

/// Full description of a synthetic draw.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub n: usize,
    pub ambient_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::SpecError("n must be at least 1".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::SpecError("noise sigma must be nonnegative".into()));
        }
        match self.kind {
            GeneratorKind::BandLimited { max_freq, alpha } => {
                if self.ambient_dim < 2 {
                    return Err(Error::SpecError("band-limited grid needs D >= 2".into()));
                }
                if max_freq == 0 || !alpha.is_finite() {
                    return Err(Error::SpecError("band-limited needs max_freq >= 1".into()));
                }
            }
            GeneratorKind::NoisySphere { intrinsic_dim } => {
                if intrinsic_dim == 0 {
                    return Err(Error::SpecError("sphere intrinsic dim must be >= 1".into()));
                }
                if self.ambient_dim < self.kind.canonical_dim() {
                    return Err(Error::SpecError(format!(
                        "ambient dim {} below canonical dim {}",
                        self.ambient_dim,
                        self.kind.canonical_dim()
                    )));
                }
            }
            _ => {
                if self.ambient_dim < self.kind.canonical_dim() {
                    return Err(Error::SpecError(format!(
                        "ambient dim {} below canonical dim {}",
                        self.ambient_dim,
                        self.kind.canonical_dim()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Canonical (pre-embedding) sample of a manifold kind.
pub fn canonical_points(kind: GeneratorKind, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = stream_rng(seed, 1);
    let dim = kind.canonical_dim();
    let mut data = DMatrix::zeros(dim, n);
    match kind {
        GeneratorKind::SwissRoll => {
            for p in 0..n {
                let t = rng.random_range(1.5 * std::f64::consts::PI..4.5 * std::f64::consts::PI);
                let h = rng.random_range(0.0..21.0);
                data[(0, p)] = t * t.cos();
                data[(1, p)] = h;
                data[(2, p)] = t * t.sin();
            }
        }
        GeneratorKind::SManifold => {
            for p in 0..n {
                let t = rng.random_range(-1.5 * std::f64::consts::PI..1.5 * std::f64::consts::PI);
                let h = rng.random_range(0.0..2.0);
                data[(0, p)] = t.sin();
                data[(1, p)] = h;
                data[(2, p)] = t.signum() * (t.cos() - 1.0);
            }
        }
        GeneratorKind::Oscillating2DWave => {
            for p in 0..n {
                let u = rng.random_range(0.0..2.0);
                let v = rng.random_range(0.0..1.0);
                data[(0, p)] = u;
                data[(1, p)] = v;
                data[(2, p)] = OSC_AMPLITUDE * (OSC_FREQUENCY * u).sin();
            }
        }
        GeneratorKind::NoisySphere { .. } => {
            for p in 0..n {
                let mut v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                while v.norm() < 1e-9 {
                    v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                }
                v /= v.norm();
                data.set_column(p, &v);
            }
        }
        GeneratorKind::BandLimited { .. } => {
            return Err(Error::SpecError(
                "band-limited ensemble has no canonical manifold form".into(),
            ))
        }
    }
    Ok(data)
}

/// Seeded random isometric embedding `R^k -> R^D` (orthonormal columns,
/// deterministic sign convention).
pub fn random_embedding(k: usize, ambient_dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 2);
    let g = DMatrix::from_fn(ambient_dim, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q().columns(0, k).into_owned();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            for i in 0..ambient_dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Draws a synthetic point cloud per the spec.
pub fn generate(spec: &GeneratorSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut data = match spec.kind {
        GeneratorKind::BandLimited { max_freq, alpha } => {
            band_limited_samples(spec.n, spec.ambient_dim, max_freq, alpha, spec.seed)
        }
        kind => {
            let canonical = canonical_points(kind, spec.n, spec.seed)?;
            let q = random_embedding(kind.canonical_dim(), spec.ambient_dim, spec.seed);
            &q * canonical
        }
    };
    if spec.noise_sigma > 0.0 {
        let mut rng = stream_rng(spec.seed, 3);
        let per_coord = spec.noise_sigma / (spec.ambient_dim as f64).sqrt();
        for v in data.iter_mut() {
            *v += per_coord * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let label = format!("{}_n{}_d{}_s{}", spec.kind.name(), spec.n, spec.ambient_dim, spec.seed);
    PointCloud::from_columns(data, label)
}

/// Dyadic frequency band of frequency index `j`.
pub fn frequency_band(j: usize) -> u32 {
    (j.max(1) as f64).log2().floor() as u32
}

fn band_limited_samples(
    n: usize,
    grid_points: usize,
    max_freq: usize,
    alpha: f64,
    seed: u64,
) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, 1);
    let mut data = DMatrix::zeros(grid_points, n);
    for p in 0..n {
        let mut coeffs = Vec::with_capacity(max_freq + 1);
        for j in 0..=max_freq {
            let mean = 2f64.powf(-(frequency_band(j) as f64) * alpha);
            let dev = mean / 5.0;
            let a: f64 = mean + dev * rng.sample::<f64, _>(StandardNormal);
            coeffs.push(a);
        }
        for i in 0..grid_points {
            let x = 2.0 * std::f64::consts::PI * i as f64 / grid_points as f64;
            let mut value = 0.0;
            for (j, &a) in coeffs.iter().enumerate() {
                value += a * (j as f64 * x).cos();
            }
            data[(i, p)] = value;
        }
    }
    data
}
