//! Kronecker-product algebra.
//!
//! Conventions used throughout the crate:
//!
//! * `vec` stacks columns: entry `(i, j)` of an `m×n` matrix lands at
//!   position `j·m + i`.
//! * `kron(A, B)[r·i + i′, s·j + j′] = A[i, j]·B[i′, j′]` for `B` of shape `r×s`.
//! * A curvature matrix `H` over an `m×n` weight has index
//!   `((i, j), (i′, j′)) ↦ (m·j + i, m·j′ + i′)`, so `H = E[vec(G) vec(G)ᵀ]`.
//! * A factor pair `(L, R)` with `L` of size `m×m` and `R` of size `n×n`
//!   stands for the operator `vec(G) ↦ vec(L·G·Rᵀ)`, whose dense form is
//!   `kron(R, L)`. The rearrangement maps it to `vec(L)·vec(R)ᵀ`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::{dot, norm, symmetric_eigen, DenseMatrix};

/// Column-stacking vectorization.
pub fn vec(m: &DenseMatrix) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for j in 0..cols {
        for i in 0..rows {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vec`] for an `rows×cols` matrix.
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<DenseMatrix> {
    if v.len() != rows * cols {
        return Err(dim_mismatch("unvec", rows * cols, v.len()));
    }
    Ok(DenseMatrix::from_fn(rows, cols, |i, j| v[j * rows + i]))
}

pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let (p, q) = a.shape();
    let (r, s) = b.shape();
    let mut out = DenseMatrix::zeros(p * r, q * s);
    for i in 0..p {
        for j in 0..q {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for ii in 0..r {
                for jj in 0..s {
                    out[(r * i + ii, s * j + jj)] = aij * b[(ii, jj)];
                }
            }
        }
    }
    out
}

/// `kron(A, B) · g` computed as `vec(B · unvec(g) · Aᵀ)`.
pub fn kron_matvec(a: &DenseMatrix, b: &DenseMatrix, g: &[f64]) -> Result<Vec<f64>> {
    let expected = b.cols() * a.cols();
    if g.len() != expected {
        return Err(dim_mismatch("kron_matvec", expected, g.len()));
    }
    let gm = unvec(g, b.cols(), a.cols())?;
    let out = b.matmul(&gm)?.matmul(&a.transpose())?;
    Ok(vec(&out))
}

/// `H` rearranged into an `m²×n²` matrix so that Kronecker structure becomes
/// rank-one structure.
#[derive(Debug, Clone, PartialEq)]
pub struct RearrangedMatrix {
    m: usize,
    n: usize,
    mat: DenseMatrix,
}

impl RearrangedMatrix {
    pub fn from_matrix(m: usize, n: usize, mat: DenseMatrix) -> Result<Self> {
        if mat.shape() != (m * m, n * n) {
            return Err(dim_mismatch(
                "RearrangedMatrix",
                format!("({}, {})", m * m, n * n),
                format!("{:?}", mat.shape()),
            ));
        }
        Ok(Self { m, n, mat })
    }

    pub fn base_rows(&self) -> usize {
        self.m
    }

    pub fn base_cols(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.mat
    }

    /// `vec(L)ᵀ · Ĥ · vec(R)`, which equals `⟨kron(R, L), H⟩`.
    pub fn bilinear(&self, left: &DenseMatrix, right: &DenseMatrix) -> Result<f64> {
        let r = self.mat.matvec(&vec(right))?;
        let l = vec(left);
        if l.len() != r.len() {
            return Err(dim_mismatch("bilinear", r.len(), l.len()));
        }
        Ok(dot(&l, &r))
    }
}

/// `Ĥ[m·i′ + i, n·j′ + j] = H[m·j + i, m·j′ + i′]`.
///
/// For symmetric `H` this coincides entrywise with the transposed-pair
/// indexing `Ĥ[m·i + i′, n·j + j′]`; the form used here makes
/// `rearrange(kron(B, A)) = vec(A)·vec(B)ᵀ` hold for arbitrary `A`, `B`.
pub fn rearrange(h: &DenseMatrix, m: usize, n: usize) -> Result<RearrangedMatrix> {
    let side = m * n;
    if m == 0 || n == 0 || h.shape() != (side, side) {
        return Err(dim_mismatch(
            "rearrange",
            format!("square of side {m}·{n} = {side}"),
            format!("{:?}", h.shape()),
        ));
    }
    let mut mat = DenseMatrix::zeros(m * m, n * n);
    for j in 0..n {
        for i in 0..m {
            let row = h.row(m * j + i);
            for jp in 0..n {
                for ip in 0..m {
                    mat[(m * ip + i, n * jp + j)] = row[m * jp + ip];
                }
            }
        }
    }
    Ok(RearrangedMatrix { m, n, mat })
}

pub fn inverse_rearrange(x: &RearrangedMatrix) -> DenseMatrix {
    let (m, n) = (x.m, x.n);
    let mut h = DenseMatrix::zeros(m * n, m * n);
    for j in 0..n {
        for i in 0..m {
            for jp in 0..n {
                for ip in 0..m {
                    h[(m * j + i, m * jp + ip)] = x.mat[(m * ip + i, n * jp + j)];
                }
            }
        }
    }
    h
}

/// Which estimator produced a factor pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Shampoo,
    ShampooSquared,
    OptKron(usize),
    Kfac,
    Custom,
}

impl Provenance {
    pub fn is_curvature_estimator(self) -> bool {
        !matches!(self, Provenance::Custom)
    }

    pub fn label(self) -> String {
        match self {
            Provenance::Shampoo => "shampoo".into(),
            Provenance::ShampooSquared => "shampoo_sq".into(),
            Provenance::OptKron(k) => format!("opt_kron_{k}"),
            Provenance::Kfac => "kfac".into(),
            Provenance::Custom => "custom".into(),
        }
    }
}

/// A left factor `L` (m×m) and right factor `R` (n×n); see the module docs
/// for how the pair acts on `vec(G)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KronFactors {
    pub left: DenseMatrix,
    pub right: DenseMatrix,
    pub provenance: Provenance,
}

impl KronFactors {
    pub fn new(left: DenseMatrix, right: DenseMatrix, provenance: Provenance) -> Result<Self> {
        if !left.is_square() || !right.is_square() {
            return Err(dim_mismatch(
                "KronFactors",
                "square factors",
                format!("{:?} and {:?}", left.shape(), right.shape()),
            ));
        }
        if !left.is_finite() || !right.is_finite() {
            return Err(Error::NonFinite("KronFactors"));
        }
        Ok(Self {
            left,
            right,
            provenance,
        })
    }

    pub fn identity(m: usize, n: usize) -> Self {
        Self {
            left: DenseMatrix::identity(m),
            right: DenseMatrix::identity(n),
            provenance: Provenance::Custom,
        }
    }

    /// `(m, n)` of the weight matrix the pair acts on.
    pub fn dims(&self) -> (usize, usize) {
        (self.left.rows(), self.right.rows())
    }

    /// Dense `mn×mn` form, `kron(R, L)`.
    pub fn to_dense(&self) -> DenseMatrix {
        kron(&self.right, &self.left)
    }

    /// `vec(L · unvec(g) · Rᵀ)`
    pub fn apply(&self, g: &[f64]) -> Result<Vec<f64>> {
        kron_matvec(&self.right, &self.left, g)
    }

    /// `‖L ⊗ R‖_F = ‖L‖_F · ‖R‖_F`
    pub fn frobenius_norm(&self) -> f64 {
        self.left.frobenius_norm() * self.right.frobenius_norm()
    }

    /// Checks the symmetry and PSD invariants expected of curvature factors.
    pub fn check_curvature(&self) -> Result<()> {
        for f in [&self.left, &self.right] {
            let asym = f.asymmetry();
            if asym > 1e-10 {
                return Err(Error::NotSymmetric(asym));
            }
            let dim = f.rows() as f64;
            let tol = -1e-8 * f.trace().abs() / dim;
            let lmin = symmetric_eigen(f)?.min_eigenvalue();
            if lmin < tol {
                return Err(Error::NegativeSpectrum {
                    eigenvalue: lmin,
                    tolerance: tol,
                });
            }
        }
        Ok(())
    }
}

/// Nearest-Kronecker-product power iteration on `Ĥ = rearrange(H)`.
///
/// The first round updates both sides from `init`,
/// `L₁ = E[G R₀ Gᵀ]` and `R₁ = E[Gᵀ L₀ G]` (as `Ĥ·vec(R₀)` and `Ĥᵀ·vec(L₀)`),
/// and is returned unscaled, so with identity initialization it is exactly
/// the Shampoo² pair. Every later round is an alternating least-squares
/// sweep, `L ← Ĥ·r̂` then `R ← Ĥᵀ·ℓ̂`, which never increases
/// `min_c ‖H − c·L⊗R‖_F`. For `steps ≥ 2` the result is scaled so that
/// `L⊗R` is the least-squares multiple of its direction.
pub fn nkp_power_iteration(
    h: &DenseMatrix,
    m: usize,
    n: usize,
    steps: usize,
    init: &KronFactors,
) -> Result<KronFactors> {
    let hat = rearrange(h, m, n)?;
    nkp_power_iteration_rearranged(&hat, steps, init)
}

pub fn nkp_power_iteration_rearranged(
    hat: &RearrangedMatrix,
    steps: usize,
    init: &KronFactors,
) -> Result<KronFactors> {
    let (m, n) = (hat.m, hat.n);
    if steps == 0 {
        return Err(Error::InvalidArgument("power iteration needs at least one step".into()));
    }
    if init.dims() != (m, n) {
        return Err(dim_mismatch(
            "nkp_power_iteration init",
            format!("({m}, {n})"),
            format!("{:?}", init.dims()),
        ));
    }
    let mat = hat.matrix();
    if mat.max_abs() == 0.0 {
        return Err(Error::Degenerate("curvature matrix is identically zero"));
    }

    let mut ell = mat.matvec(&vec(&init.right))?;
    let mut r = mat.matvec_t(&vec(&init.left))?;
    if norm(&ell) == 0.0 || norm(&r) == 0.0 {
        return Err(Error::Degenerate("initialization is orthogonal to the curvature"));
    }
    let provenance = if steps == 1 {
        Provenance::ShampooSquared
    } else {
        Provenance::OptKron(steps)
    };

    if steps > 1 {
        for _ in 1..steps {
            let r_hat = normalized(&r, "right iterate")?;
            ell = mat.matvec(&r_hat)?;
            let ell_hat = normalized(&ell, "left iterate")?;
            r = mat.matvec_t(&ell_hat)?;
        }
        // Least-squares scale for the final direction pair.
        let ell_hat = normalized(&ell, "left iterate")?;
        let r_hat = normalized(&r, "right iterate")?;
        let scale = dot(&ell_hat, &mat.matvec(&r_hat)?);
        ell = ell_hat.iter().map(|x| x * scale).collect();
        r = r_hat;
    }

    let left = unvec(&ell, m, m)?.ensure_finite("nkp_power_iteration")?;
    let right = unvec(&r, n, n)?.ensure_finite("nkp_power_iteration")?;
    Ok(KronFactors {
        left,
        right,
        provenance,
    })
}

fn normalized(v: &[f64], what: &'static str) -> Result<Vec<f64>> {
    let nv = norm(v);
    if nv == 0.0 || !nv.is_finite() {
        return Err(Error::Degenerate(what));
    }
    Ok(v.iter().map(|x| x / nv).collect())
}

/// Eigenvalue shift applied before raising to a power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Damping {
    Fixed(f64),
    /// `1e-10 · trace(M)/dim + 1e-30`
    Auto,
}

impl Damping {
    pub fn resolve(self, m: &DenseMatrix) -> f64 {
        match self {
            Damping::Fixed(eps) => eps,
            Damping::Auto => 1e-10 * (m.trace().max(0.0) / m.rows().max(1) as f64) + 1e-30,
        }
    }
}

impl Default for Damping {
    fn default() -> Self {
        Damping::Auto
    }
}

/// `Q·(Λ + εI)^p·Qᵀ` for a symmetric PSD `M = QΛQᵀ`.
///
/// Eigenvalues below `−1e-8·trace/dim` are rejected; smaller negative
/// values are clamped to zero before damping.
pub fn sym_power(m: &DenseMatrix, exponent: f64, damping: Damping) -> Result<DenseMatrix> {
    if !m.is_square() {
        return Err(dim_mismatch("sym_power", "square matrix", format!("{:?}", m.shape())));
    }
    let asym = m.asymmetry();
    if asym > 1e-8 {
        return Err(Error::NotSymmetric(asym));
    }
    let eps = damping.resolve(m);
    if eps < 0.0 || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("damping must be non-negative, got {eps}")));
    }
    let dim = m.rows().max(1) as f64;
    let tol = -1e-8 * m.trace().abs() / dim;
    let eig = symmetric_eigen(m)?;
    if let Some(&lmin) = eig.values.first() {
        if lmin < tol {
            return Err(Error::NegativeSpectrum {
                eigenvalue: lmin,
                tolerance: tol,
            });
        }
    }
    if exponent < 0.0 {
        if let Some(&lmin) = eig.values.first() {
            if lmin.max(0.0) + eps <= 0.0 {
                return Err(Error::Singular(lmin));
            }
        }
    }
    eig.reconstruct_with(|l| (l.max(0.0) + eps).powf(exponent))
        .ensure_finite("sym_power")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_examples() {
        assert_eq!(vec(&DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])), [1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec(&DenseMatrix::identity(2)), [1.0, 0.0, 0.0, 1.0]);
        assert_eq!(vec(&DenseMatrix::from_rows(&[&[5.0, 6.0, 7.0]])), [5.0, 6.0, 7.0]);
    }

    #[test]
    fn unvec_inverts_vec() {
        let m = DenseMatrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        assert_eq!(unvec(&vec(&m), 2, 3).unwrap(), m);
        assert!(unvec(&[1.0, 2.0], 3, 1).is_err());
    }

    #[test]
    fn kron_examples() {
        let i2 = DenseMatrix::identity(2);
        assert_eq!(kron(&i2, &i2), DenseMatrix::identity(4));
        let six = kron(&DenseMatrix::from_rows(&[&[2.0]]), &DenseMatrix::from_rows(&[&[3.0]]));
        assert_eq!(six, DenseMatrix::from_rows(&[&[6.0]]));
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let expect = DenseMatrix::from_rows(&[
            &[0.0, 1.0, 0.0, 2.0],
            &[1.0, 0.0, 2.0, 0.0],
            &[0.0, 3.0, 0.0, 4.0],
            &[3.0, 0.0, 4.0, 0.0],
        ]);
        assert_eq!(kron(&a, &b), expect);
    }

    #[test]
    fn kron_of_rectangular_shapes() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0, 3.0]]);
        let b = DenseMatrix::from_rows(&[&[1.0], &[10.0]]);
        let k = kron(&a, &b);
        assert_eq!(k, DenseMatrix::from_rows(&[&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]]));
    }

    #[test]
    fn kron_matvec_scalars_and_identity() {
        let two = DenseMatrix::from_rows(&[&[2.0]]);
        let three = DenseMatrix::from_rows(&[&[3.0]]);
        assert_eq!(kron_matvec(&two, &three, &[1.0]).unwrap(), vec![6.0]);
        let g = [1.0, -2.0, 3.0, 4.0, 0.5, 0.25];
        let out = kron_matvec(&DenseMatrix::identity(2), &DenseMatrix::identity(3), &g).unwrap();
        assert_eq!(out, g);
        assert!(kron_matvec(&two, &three, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rearrange_examples() {
        let i2 = DenseMatrix::identity(2);
        let hat = rearrange(&kron(&i2, &i2), 2, 2).unwrap();
        let e = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(hat.matrix(), &DenseMatrix::outer(&e, &e));
        let six = DenseMatrix::from_rows(&[&[6.0]]);
        assert_eq!(rearrange(&six, 1, 1).unwrap().into_matrix(), six);
        assert!(rearrange(&DenseMatrix::identity(5), 2, 2).is_err());
    }

    #[test]
    fn inverse_rearrange_examples() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = DenseMatrix::from_rows(&[&[0.0, 5.0, 1.0], &[6.0, 7.0, 2.0], &[1.0, 1.0, 1.0]]);
        let x = RearrangedMatrix::from_matrix(2, 3, DenseMatrix::outer(&vec(&a), &vec(&b))).unwrap();
        assert_eq!(inverse_rearrange(&x), kron(&b, &a));
        let z = RearrangedMatrix::from_matrix(2, 3, DenseMatrix::zeros(4, 9)).unwrap();
        assert_eq!(inverse_rearrange(&z), DenseMatrix::zeros(6, 6));
    }

    #[test]
    fn sym_power_examples() {
        let i3 = DenseMatrix::identity(3);
        let out = sym_power(&i3, -0.25, Damping::Fixed(0.0)).unwrap();
        assert!(out.sub(&i3).unwrap().max_abs() < 1e-15);
        let d = DenseMatrix::from_diag(&[16.0, 81.0]);
        let out = sym_power(&d, -0.25, Damping::Fixed(0.0)).unwrap();
        assert!((out[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((out[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(out[(0, 1)], 0.0);
    }

    #[test]
    fn sym_power_errors() {
        let asym = DenseMatrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]);
        assert!(matches!(sym_power(&asym, 0.5, Damping::Auto), Err(Error::NotSymmetric(_))));
        let neg = DenseMatrix::from_diag(&[1.0, -0.5]);
        assert!(matches!(
            sym_power(&neg, 0.5, Damping::Fixed(0.0)),
            Err(Error::NegativeSpectrum { .. })
        ));
        // Tiny negatives are clamped.
        let nearly = DenseMatrix::from_diag(&[1.0, -1e-12]);
        let root = sym_power(&nearly, 0.5, Damping::Fixed(0.0)).unwrap();
        assert_eq!(root[(1, 1)], 0.0);
        let singular = DenseMatrix::from_diag(&[1.0, 0.0]);
        assert!(matches!(
            sym_power(&singular, -0.25, Damping::Fixed(0.0)),
            Err(Error::Singular(_))
        ));
        assert!(sym_power(&singular, -0.25, Damping::Auto).is_ok());
    }

    #[test]
    fn power_iteration_rejects_zero() {
        let h = DenseMatrix::zeros(4, 4);
        let err = nkp_power_iteration(&h, 2, 2, 1, &KronFactors::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
        let h = DenseMatrix::identity(4);
        assert!(nkp_power_iteration(&h, 2, 2, 0, &KronFactors::identity(2, 2)).is_err());
        assert!(nkp_power_iteration(&h, 2, 2, 1, &KronFactors::identity(1, 4)).is_err());
    }

    #[test]
    fn kron_factor_dense_form_matches_apply() {
        let l = DenseMatrix::from_rows(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let r = DenseMatrix::from_rows(&[&[1.0, 0.5, 0.0], &[0.5, 2.0, 0.0], &[0.0, 0.0, 1.0]]);
        let k = KronFactors::new(l, r, Provenance::Custom).unwrap();
        let g: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let dense = k.to_dense().matvec(&g).unwrap();
        let fast = k.apply(&g).unwrap();
        for (a, b) in dense.iter().zip(&fast) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((k.frobenius_norm() - k.to_dense().frobenius_norm()).abs() < 1e-12);
        k.check_curvature().unwrap();
    }
}
