//! Dense linear-algebra kernels shared by every stage of the pipeline:
//! cell covariances, truncated eigendecompositions, orthonormal complements
//! and numerical subspace intersections.
//!
//! All routines are deterministic: no randomized sketching, no
//! thread-order-dependent reductions. Eigenvalues are reported in
//! nonincreasing order. Bases with degenerate spectra are not unique, so
//! callers compare projectors `B Bᵀ`, never raw basis columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative cutoff (against the largest singular value) used for
/// numerical-rank decisions throughout the crate.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Maximum allowed deviation of `BᵀB` from the identity, in max-norm.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

/// Absolute floor below which a projected direction is considered numerical
/// noise. Sound for unit-scale inputs such as orthonormal basis columns.
const NOISE_FLOOR: f64 = 1e-12;

/// An orthonormal basis of a linear subspace of `R^ambient`.
///
/// Columns are orthonormal to [`ORTHONORMALITY_TOL`]; `dim` may be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    ambient_dim: usize,
    basis: DMatrix<f64>,
}

impl SubspaceBasis {
    /// Wraps a matrix whose columns must already be orthonormal.
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let dev = gram_deviation(&basis);
        if dev >= ORTHONORMALITY_TOL {
            return Err(Error::SpecError(format!(
                "basis columns not orthonormal (Gram deviation {dev:.3e})"
            )));
        }
        Ok(Self {
            ambient_dim: basis.nrows(),
            basis,
        })
    }

    /// Wraps without the orthonormality check; used on internally produced
    /// factors that are orthonormal by construction.
    pub(crate) fn from_orthonormal(basis: DMatrix<f64>) -> Self {
        debug_assert!(gram_deviation(&basis) < ORTHONORMALITY_TOL);
        Self {
            ambient_dim: basis.nrows(),
            basis,
        }
    }

    /// The trivial (zero-dimensional) subspace of `R^ambient`.
    pub fn empty(ambient_dim: usize) -> Self {
        Self {
            ambient_dim,
            basis: DMatrix::zeros(ambient_dim, 0),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// The orthogonal projector `B Bᵀ` onto the subspace.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// Coefficients `Bᵀ v` of a vector in this basis.
    pub fn coefficients(&self, v: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(v)
    }

    /// Orthogonal projection `B Bᵀ v`.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.dim() == 0 {
            return DVector::zeros(self.ambient_dim);
        }
        &self.basis * self.basis.tr_mul(v)
    }

    /// Residual `(I - B Bᵀ) v`.
    pub fn reject(&self, v: &DVector<f64>) -> DVector<f64> {
        v - self.project(v)
    }

    /// Keeps the first `dim` columns.
    pub fn truncated(&self, dim: usize) -> Self {
        let d = dim.min(self.dim());
        Self {
            ambient_dim: self.ambient_dim,
            basis: self.basis.columns(0, d).into_owned(),
        }
    }
}

fn gram_deviation(basis: &DMatrix<f64>) -> f64 {
    let gram = basis.tr_mul(basis);
    let mut dev = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    dev
}

/// Nonincreasing, nonnegative eigenvalue (variance) sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    /// Sorts nonincreasing and clamps small negative round-off to zero.
    pub fn new(mut values: Vec<f64>) -> Self {
        for v in &mut values {
            debug_assert!(*v >= -1e-12, "eigenvalue {v} below clamp tolerance");
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        values.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Sum of the eigenvalues strictly beyond the leading `dim`.
    pub fn tail_sum(&self, dim: usize) -> f64 {
        self.values.iter().skip(dim).sum()
    }

    /// Number of values exceeding `tol_factor` times the largest.
    pub fn numerical_rank(&self, tol_factor: f64) -> usize {
        match self.values.first() {
            None => 0,
            Some(&max) if max <= 0.0 => 0,
            Some(&max) => self.values.iter().take_while(|&&v| v > tol_factor * max).count(),
        }
    }

    pub fn truncated(&self, dim: usize) -> Self {
        Self {
            values: self.values.iter().copied().take(dim).collect(),
        }
    }
}

/// Empirical covariance `(1/m) Σ (x - mean)(x - mean)ᵀ` of the column
/// vectors of `points`.
pub fn covariance(points: &DMatrix<f64>, mean: &DVector<f64>) -> Result<DMatrix<f64>> {
    let m = points.ncols();
    if m == 0 {
        return Err(Error::EmptyCell);
    }
    if points.nrows() != mean.len() {
        return Err(Error::DimMismatch {
            expected: points.nrows(),
            got: mean.len(),
        });
    }
    let mut centered = points.clone();
    for mut col in centered.column_iter_mut() {
        col -= mean;
    }
    let mut cov = &centered * centered.transpose();
    cov /= m as f64;
    Ok(cov)
}

/// Full eigendecomposition of a symmetric PSD matrix, eigenpairs sorted by
/// nonincreasing eigenvalue.
pub fn symmetric_eig(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, Spectrum)> {
    let asymmetry = (cov - cov.transpose()).abs().max();
    if asymmetry > 1e-8 {
        return Err(Error::AsymmetricInput { asymmetry });
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        values.push(eig.eigenvalues[src].max(0.0));
    }
    Ok((vectors, Spectrum::new(values)))
}

/// Top-`rank` eigenpairs of a symmetric PSD matrix.
///
/// The returned basis spans the dominant invariant subspace; with repeated
/// eigenvalues the basis is not unique but the projector is.
pub fn truncated_eig(cov: &DMatrix<f64>, rank: usize) -> Result<(SubspaceBasis, Spectrum)> {
    let (vectors, spectrum) = symmetric_eig(cov)?;
    let d = rank.min(vectors.ncols());
    let basis = SubspaceBasis::from_orthonormal(vectors.columns(0, d).into_owned());
    Ok((basis, spectrum.truncated(d)))
}

/// Principal directions and full variance spectrum of a cell of points
/// (columns of `points`), centered at `mean`.
///
/// Routes through the `D x D` covariance eigendecomposition when the cell is
/// large relative to the ambient dimension, and through the eigendecomposition
/// of the `m x m` Gram matrix of the centered data otherwise. Both give
/// identical spectra; the Gram route avoids the `D x D` covariance for small
/// deep cells.
pub fn principal_components(
    points: &DMatrix<f64>,
    mean: &DVector<f64>,
) -> Result<(DMatrix<f64>, Spectrum)> {
    let m = points.ncols();
    let dim = points.nrows();
    if m == 0 {
        return Err(Error::EmptyCell);
    }
    if dim <= 2 * m {
        let cov = covariance(points, mean)?;
        return symmetric_eig(&cov);
    }
    let mut centered = points.clone();
    for mut col in centered.column_iter_mut() {
        col -= mean;
    }
    centered /= (m as f64).sqrt();
    let gram = centered.tr_mul(&centered);
    let (right, spectrum) = symmetric_eig(&gram)?;
    let lambda_max = spectrum.values().first().copied().unwrap_or(0.0);
    // Left directions u_l = C v_l / s_l exist only for nonnegligible
    // eigenvalues; the spectrum keeps every value regardless.
    let emit = spectrum
        .values()
        .iter()
        .take_while(|&&l| l > (1e-16 * lambda_max).max(f64::MIN_POSITIVE))
        .count();
    let mut vectors = DMatrix::zeros(dim, emit);
    for l in 0..emit {
        let s = spectrum.values()[l].sqrt();
        let u = &centered * right.column(l) / s;
        vectors.set_column(l, &u);
    }
    Ok((vectors, spectrum))
}

/// Orthonormal basis for the span of `(I - B Bᵀ) vectors`.
///
/// Directions whose singular value falls at or below `rank_tol` times the
/// largest singular value of the projected matrix are dropped, so the result
/// may have dimension zero. `vectors` is expected at unit scale (e.g.
/// orthonormal basis columns of another subspace).
pub fn orthonormal_complement_projection(
    basis: &SubspaceBasis,
    vectors: &DMatrix<f64>,
    rank_tol: f64,
) -> Result<SubspaceBasis> {
    if basis.ambient_dim() != vectors.nrows() {
        return Err(Error::DimMismatch {
            expected: basis.ambient_dim(),
            got: vectors.nrows(),
        });
    }
    let ambient = basis.ambient_dim();
    if vectors.ncols() == 0 {
        return Ok(SubspaceBasis::empty(ambient));
    }
    // Project twice: classical reorthogonalization keeps the residual
    // orthogonal to the parent span at machine precision.
    let mut projected = vectors.clone();
    for _ in 0..2 {
        if basis.dim() > 0 {
            projected -= basis.matrix() * basis.matrix().tr_mul(&projected);
        }
    }
    orthonormal_column_span(&projected, rank_tol)
}

/// Orthonormal basis of the numerical column span of a matrix, dropping
/// directions whose scale falls at or below `rank_tol` relative to the
/// largest. Rank decisions come from a column-pivoted QR, whose ordered
/// `|R_ii|` track the singular values closely enough for the tolerances
/// used here.
pub fn orthonormal_column_span(matrix: &DMatrix<f64>, rank_tol: f64) -> Result<SubspaceBasis> {
    let ambient = matrix.nrows();
    if matrix.ncols() == 0 {
        return Ok(SubspaceBasis::empty(ambient));
    }
    let qr = matrix.clone().col_piv_qr();
    let q = qr.q();
    let r = qr.r();
    let k = r.nrows().min(r.ncols());
    let lead = r[(0, 0)].abs();
    if lead <= NOISE_FLOOR {
        return Ok(SubspaceBasis::empty(ambient));
    }
    let cutoff = (rank_tol * lead).max(NOISE_FLOOR);
    let rank = (0..k).take_while(|&i| r[(i, i)].abs() > cutoff).count();
    Ok(SubspaceBasis::from_orthonormal(
        q.columns(0, rank).into_owned(),
    ))
}

/// Orthonormal basis of the numerical intersection of several subspaces.
///
/// A direction belongs to the intersection when its principal-angle cosine
/// against every input subspace is at least `1 - angle_tol`. Selected
/// directions are refined by alternating projections so that the result is
/// contained in each input to well below the selection tolerance.
pub fn subspace_intersection(
    bases: &[SubspaceBasis],
    angle_tol: f64,
) -> Result<SubspaceBasis> {
    let first = bases
        .first()
        .ok_or_else(|| Error::NotApplicable("intersection needs at least one subspace".into()))?;
    let ambient = first.ambient_dim();
    for b in bases {
        if b.ambient_dim() != ambient {
            return Err(Error::DimMismatch {
                expected: ambient,
                got: b.ambient_dim(),
            });
        }
    }
    let mut current = first.matrix().clone();
    for other in &bases[1..] {
        if current.ncols() == 0 || other.dim() == 0 {
            return Ok(SubspaceBasis::empty(ambient));
        }
        // Principal vectors between span(current) and span(other): the
        // singular structure of the cross-Gram M picks out directions of
        // near-unit cosine. Computed through the eigendecomposition of
        // MᵀM, which is accurate precisely where it matters (cosines
        // near one).
        let cross = current.tr_mul(other.matrix());
        let normal = cross.tr_mul(&cross);
        let (right, cos_sq) = symmetric_eig(&normal)?;
        let threshold = (1.0 - angle_tol) * (1.0 - angle_tol);
        let kept = cos_sq
            .values()
            .iter()
            .take_while(|&&c| c >= threshold)
            .count();
        if kept == 0 {
            return Ok(SubspaceBasis::empty(ambient));
        }
        let mut next = DMatrix::zeros(ambient, kept);
        for dst in 0..kept {
            let u = &cross * right.column(dst) / cos_sq.values()[dst].sqrt();
            next.set_column(dst, &(&current * u));
        }
        current = orthonormal_column_span(&next, DEFAULT_RANK_TOL)?
            .matrix()
            .clone();
    }
    if current.ncols() == 0 {
        return Ok(SubspaceBasis::empty(ambient));
    }
    // Alternating-projection refinement; converges at the rate of the
    // squared principal-angle cosines, so two sweeps reach machine level
    // for genuinely shared directions.
    for _ in 0..2 {
        for b in bases {
            current = b.matrix() * b.matrix().tr_mul(&current);
        }
        current = match orthonormal_column_span(&current, DEFAULT_RANK_TOL) {
            Ok(s) if s.dim() == current.ncols() => s.matrix().clone(),
            _ => return Ok(SubspaceBasis::empty(ambient)),
        };
    }
    Ok(SubspaceBasis::from_orthonormal(current))
}

/// Principal angles (radians, nondecreasing) between two subspaces, from the
/// singular values of the cross-Gram matrix.
pub fn principal_angles(a: &SubspaceBasis, b: &SubspaceBasis) -> Vec<f64> {
    if a.dim() == 0 || b.dim() == 0 {
        return Vec::new();
    }
    let cross = a.matrix().tr_mul(b.matrix());
    let normal = cross.tr_mul(&cross);
    let (_, cos_sq) = symmetric_eig(&normal).expect("normal matrix is symmetric");
    let mut angles: Vec<f64> = cos_sq
        .values()
        .iter()
        .map(|&c| c.sqrt().clamp(0.0, 1.0).acos())
        .collect();
    angles.sort_by(|x, y| x.partial_cmp(y).expect("finite angles"));
    angles
}
