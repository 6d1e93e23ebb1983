//! Dense operator algebra on truncated spin (x) Fock spaces.
//!
//! Conventions used throughout the crate:
//!
//! * The qubit basis is (|0>, |1>) with |0> the donor state, so
//!   sigma_z = diag(1, -1) and sigma_z|0> = +|0>.
//! * Tensor slots are ordered spin first, then modes in declaration order:
//!   slot 0 is the spin, slot k >= 1 is mode k-1.  A basis index of the full
//!   space factors as i = ((s * d_1 + n_1) * d_2 + n_2) * ... with s the spin
//!   index.  Every operator that lives on the full space must be built with
//!   [`embed`] so this ordering is applied uniformly.
//! * Fock spaces are truncated at `fock_dim` levels; constructors renormalize
//!   after truncation and the `*_tail_mass` helpers report what was cut.
//!
//! All matrices are dense `nalgebra` matrices over `Complex64`.  The target
//! sizes (a spin and up to three modes of dimension <= 15) stay comfortably
//! dense.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = num_complex::Complex64;
/// Dense complex matrix; the working representation of every operator.
pub type Operator = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Tensor factorization of the state space: one spin slot plus a Fock slot
/// per oscillator mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertLayout {
    fock_dims: Vec<usize>,
}

impl HilbertLayout {
    /// Layout with the given per-mode Fock dimensions (each >= 2).
    pub fn new(fock_dims: Vec<usize>) -> Result<Self> {
        if fock_dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidDimension(
                "every Fock dimension must be at least 2".into(),
            ));
        }
        Ok(Self { fock_dims })
    }

    /// Spin-only layout (no modes).
    pub fn spin_only() -> Self {
        Self { fock_dims: Vec::new() }
    }

    pub fn n_modes(&self) -> usize {
        self.fock_dims.len()
    }

    /// Number of tensor slots (spin plus modes).
    pub fn n_slots(&self) -> usize {
        1 + self.fock_dims.len()
    }

    pub fn fock_dims(&self) -> &[usize] {
        &self.fock_dims
    }

    /// Dimension of a slot: 2 for slot 0, the Fock dimension otherwise.
    pub fn slot_dim(&self, slot: usize) -> Result<usize> {
        match slot {
            0 => Ok(2),
            k if k <= self.fock_dims.len() => Ok(self.fock_dims[k - 1]),
            _ => Err(Error::SlotOutOfRange { slot, n_slots: self.n_slots() }),
        }
    }

    /// Total dimension 2 * prod(fock_dims).
    pub fn total_dim(&self) -> usize {
        2 * self.fock_dims.iter().product::<usize>()
    }
}

/// Annihilation, creation and number operators on a `d`-level Fock space.
///
/// `annihilate[(n-1, n)] = sqrt(n)`; the rest follow by adjoint and product.
pub fn fock_operators(d: usize) -> Result<(Operator, Operator, Operator)> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!(
            "Fock space needs at least 2 levels, got {d}"
        )));
    }
    let mut a = Operator::zeros(d, d);
    for n in 1..d {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    let adag = a.adjoint();
    let number = &adag * &a;
    Ok((a, adag, number))
}

pub fn sigma_x() -> Operator {
    Operator::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])
}

pub fn sigma_y() -> Operator {
    Operator::from_row_slice(
        2,
        2,
        &[C64::new(0.0, 0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), C64::new(0.0, 0.0)],
    )
}

pub fn sigma_z() -> Operator {
    Operator::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)])
}

/// Raising operator |1><0|.
pub fn sigma_plus() -> Operator {
    Operator::from_row_slice(2, 2, &[c(0.0), c(0.0), c(1.0), c(0.0)])
}

/// Lowering operator |0><1|.
pub fn sigma_minus() -> Operator {
    Operator::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)])
}

/// Projector |0><0| onto the donor state.
pub fn donor_projector() -> Operator {
    Operator::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(0.0)])
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Lift `op` from a single tensor slot to the full space, acting as the
/// identity everywhere else.  Slot 0 is the spin; slot k >= 1 is mode k-1.
pub fn embed(op: &Operator, slot: usize, layout: &HilbertLayout) -> Result<Operator> {
    let d_slot = layout.slot_dim(slot)?;
    if op.nrows() != d_slot || op.ncols() != d_slot {
        return Err(Error::DimensionMismatch(format!(
            "operator is {}x{} but slot {slot} has dimension {d_slot}",
            op.nrows(),
            op.ncols()
        )));
    }
    let mut out = Operator::identity(1, 1);
    for s in 0..layout.n_slots() {
        let d = layout.slot_dim(s)?;
        if s == slot {
            out = out.kronecker(op);
        } else {
            out = out.kronecker(&Operator::identity(d, d));
        }
    }
    Ok(out)
}

/// Max absolute deviation from hermiticity.
pub fn hermiticity_defect(m: &Operator) -> f64 {
    let diff = m - m.adjoint();
    diff.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors in columns, so
/// `m = V diag(w) V^dagger`.
pub fn hermitian_eigen(m: &Operator) -> (DVector<f64>, Operator) {
    let se = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..se.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let n = order.len();
    let mut vals = DVector::zeros(n);
    let mut vecs = Operator::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vals[k] = se.eigenvalues[i];
        vecs.set_column(k, &se.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Square root of a positive semidefinite Hermitian matrix; small negative
/// eigenvalues from floating-point noise are clamped to zero.
pub fn sqrt_psd(m: &Operator) -> Operator {
    let (vals, vecs) = hermitian_eigen(m);
    let n = vals.len();
    let mut s = Operator::zeros(n, n);
    for k in 0..n {
        let r = vals[k].max(0.0).sqrt();
        let col = vecs.column(k);
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] += col[i] * col[j].conj() * c(r);
            }
        }
    }
    s
}

/// Trace distance (1/2) ||a - b||_1 between Hermitian matrices.
pub fn trace_distance(a: &Operator, b: &Operator) -> f64 {
    let diff = a - b;
    let (vals, _) = hermitian_eigen(&diff);
    0.5 * vals.iter().map(|v| v.abs()).sum::<f64>()
}

/// A validated density matrix: Hermitian, unit trace, positive semidefinite
/// (within the documented tolerances).
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    mat: Operator,
}

impl DensityMatrix {
    pub const HERMITICITY_TOL: f64 = 1e-10;
    pub const TRACE_TOL: f64 = 1e-10;
    pub const EIGENVALUE_FLOOR: f64 = -1e-10;

    /// Validate and wrap a matrix as a state.
    pub fn try_new(mat: Operator) -> Result<Self> {
        Self::try_new_with_tol(mat, Self::HERMITICITY_TOL, Self::TRACE_TOL, Self::EIGENVALUE_FLOOR)
    }

    /// Validation with caller-chosen tolerances; integrators use slightly
    /// looser bounds for states that accumulated roundoff over many steps.
    pub fn try_new_with_tol(
        mat: Operator,
        herm_tol: f64,
        trace_tol: f64,
        eig_floor: f64,
    ) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::InvalidState("density matrix must be square".into()));
        }
        let h = hermiticity_defect(&mat);
        if h > herm_tol {
            return Err(Error::InvalidState(format!("hermiticity defect {h:.3e}")));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > trace_tol || tr.im.abs() > trace_tol {
            return Err(Error::InvalidState(format!("trace {tr} deviates from 1")));
        }
        let (vals, _) = hermitian_eigen(&mat);
        if let Some(min) = vals.iter().cloned().reduce(f64::min) {
            if min < eig_floor {
                return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
            }
        }
        Ok(Self { mat })
    }

    /// Pure state |psi><psi|.
    pub fn from_pure(psi: &StateVector) -> Self {
        let v = psi.vector();
        Self { mat: v * v.adjoint() }
    }

    pub fn matrix(&self) -> &Operator {
        &self.mat
    }

    pub fn into_matrix(self) -> Operator {
        self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    /// tr(rho^2).
    pub fn purity(&self) -> f64 {
        (&self.mat * &self.mat).trace().re
    }
}

/// A normalized pure state.
#[derive(Debug, Clone)]
pub struct StateVector {
    vec: CVector,
}

impl StateVector {
    pub const NORM_TOL: f64 = 1e-10;

    pub fn try_new(vec: CVector) -> Result<Self> {
        let n = vec.norm();
        if (n - 1.0).abs() > Self::NORM_TOL {
            return Err(Error::InvalidState(format!("norm {n} deviates from 1")));
        }
        Ok(Self { vec })
    }

    /// Normalize and wrap; errors on a zero vector.
    pub fn normalized(vec: CVector) -> Result<Self> {
        let n = vec.norm();
        if n == 0.0 {
            return Err(Error::InvalidState("cannot normalize the zero vector".into()));
        }
        Ok(Self { vec: vec / c(n) })
    }

    /// Basis state |i> of an `dim`-dimensional space.
    pub fn basis(dim: usize, i: usize) -> Result<Self> {
        if i >= dim {
            return Err(Error::InvalidDimension(format!("basis index {i} >= dim {dim}")));
        }
        let mut v = CVector::zeros(dim);
        v[i] = c(1.0);
        Ok(Self { vec: v })
    }

    pub fn vector(&self) -> &CVector {
        &self.vec
    }

    pub fn into_vector(self) -> CVector {
        self.vec
    }

    pub fn dim(&self) -> usize {
        self.vec.len()
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix::from_pure(self)
    }

    /// Tensor product self (x) other.
    pub fn kron(&self, other: &StateVector) -> StateVector {
        let mut v = CVector::zeros(self.dim() * other.dim());
        for i in 0..self.dim() {
            for j in 0..other.dim() {
                v[i * other.dim() + j] = self.vec[i] * other.vec[j];
            }
        }
        StateVector { vec: v }
    }
}

/// Thermal (geometric) state of a truncated oscillator with mean occupation
/// `nbar`, renormalized over the kept levels.
pub fn thermal_state(nbar: f64, d: usize) -> Result<DensityMatrix> {
    if !(nbar >= 0.0) {
        return Err(Error::InvalidParameter(format!("nbar must be >= 0, got {nbar}")));
    }
    if d < 1 {
        return Err(Error::InvalidDimension("thermal state needs d >= 1".into()));
    }
    let r = nbar / (1.0 + nbar);
    let mut p: Vec<f64> = (0..d).map(|n| r.powi(n as i32)).collect();
    let z: f64 = p.iter().sum();
    for q in &mut p {
        *q /= z;
    }
    let mut m = Operator::zeros(d, d);
    for n in 0..d {
        m[(n, n)] = c(p[n]);
    }
    Ok(DensityMatrix { mat: m })
}

/// Probability weight of the levels n >= d that `thermal_state(nbar, d)` cuts.
/// Callers should keep this below 1e-6 for quantitative work.
pub fn thermal_tail_mass(nbar: f64, d: usize) -> f64 {
    let r = nbar / (1.0 + nbar);
    r.powi(d as i32)
}

/// Truncated coherent state |alpha>, renormalized over the kept levels.
pub fn coherent_state(alpha: C64, d: usize) -> Result<StateVector> {
    if d < 1 {
        return Err(Error::InvalidDimension("coherent state needs d >= 1".into()));
    }
    let mut v = CVector::zeros(d);
    // c_{n+1} = c_n * alpha / sqrt(n+1), stable well past the dims used here.
    let mut amp = c(1.0);
    v[0] = amp;
    for n in 1..d {
        amp *= alpha / c((n as f64).sqrt());
        v[n] = amp;
    }
    StateVector::normalized(v)
}

/// Probability weight of the levels n >= d cut from |alpha>.
pub fn coherent_tail_mass(alpha: C64, d: usize) -> f64 {
    let x = alpha.norm_sqr();
    let mut kept = 0.0;
    let mut term = (-x).exp();
    for n in 0..d {
        kept += term;
        term *= x / (n as f64 + 1.0);
    }
    (1.0 - kept).max(0.0)
}

/// Largest total population found in any single mode's highest Fock level.
/// Truncation is trustworthy only while this stays small.
pub fn top_level_occupancy(rho: &Operator, layout: &HilbertLayout) -> f64 {
    per_mode_top_level(layout, |i| rho[(i, i)].re)
}

/// [`top_level_occupancy`] for a pure state.
pub fn top_level_occupancy_pure(psi: &CVector, layout: &HilbertLayout) -> f64 {
    per_mode_top_level(layout, |i| psi[i].norm_sqr())
}

fn per_mode_top_level(layout: &HilbertLayout, weight: impl Fn(usize) -> f64) -> f64 {
    let n_slots = layout.n_slots();
    let dims: Vec<usize> = (0..n_slots).map(|s| layout.slot_dim(s).unwrap()).collect();
    let total: usize = dims.iter().product();
    let mut per_mode = vec![0.0; layout.n_modes()];
    for i in 0..total {
        let mut rem = i;
        for s in (1..n_slots).rev() {
            let n = rem % dims[s];
            rem /= dims[s];
            if n == dims[s] - 1 {
                per_mode[s - 1] += weight(i);
            }
        }
    }
    per_mode.into_iter().fold(0.0, f64::max)
}

/// Uhlmann fidelity (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch(format!(
            "fidelity between dims {} and {}",
            rho.dim(),
            sigma.dim()
        )));
    }
    let s = sqrt_psd(rho.matrix());
    let inner = &s * sigma.matrix() * &s;
    let (vals, _) = hermitian_eigen(&inner);
    let tr: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((tr * tr).min(1.0 + 1e-12))
}

/// Trace out every slot not listed in `keep` (slot 0 = spin).  `keep` must be
/// nonempty, sorted and duplicate-free; the result keeps the listed slots in
/// layout order.
pub fn partial_trace(
    rho: &DensityMatrix,
    layout: &HilbertLayout,
    keep: &[usize],
) -> Result<DensityMatrix> {
    let m = partial_trace_matrix(rho.matrix(), layout, keep)?;
    Ok(DensityMatrix { mat: m })
}

/// [`partial_trace`] on a raw matrix; used internally on states mid-evolution.
pub fn partial_trace_matrix(
    rho: &Operator,
    layout: &HilbertLayout,
    keep: &[usize],
) -> Result<Operator> {
    let n_slots = layout.n_slots();
    if keep.is_empty() {
        return Err(Error::InvalidParameter("keep set must be nonempty".into()));
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("keep set must be strictly increasing".into()));
    }
    if *keep.last().unwrap() >= n_slots {
        return Err(Error::SlotOutOfRange { slot: *keep.last().unwrap(), n_slots });
    }
    if rho.nrows() != layout.total_dim() {
        return Err(Error::DimensionMismatch(format!(
            "state dim {} does not match layout dim {}",
            rho.nrows(),
            layout.total_dim()
        )));
    }

    let dims: Vec<usize> = (0..n_slots).map(|s| layout.slot_dim(s).unwrap()).collect();
    let kept: Vec<usize> = keep.to_vec();
    let traced: Vec<usize> = (0..n_slots).filter(|s| !kept.contains(s)).collect();
    let d_keep: usize = kept.iter().map(|&s| dims[s]).product();
    let d_trace: usize = traced.iter().map(|&s| dims[s]).product();

    // Full-space index from a (kept, traced) pair of multi-indices.
    let full_index = |ik: usize, it: usize| -> usize {
        let mut sub = vec![0usize; n_slots];
        let mut rem = ik;
        for &s in kept.iter().rev() {
            sub[s] = rem % dims[s];
            rem /= dims[s];
        }
        let mut rem = it;
        for &s in traced.iter().rev() {
            sub[s] = rem % dims[s];
            rem /= dims[s];
        }
        let mut idx = 0usize;
        for s in 0..n_slots {
            idx = idx * dims[s] + sub[s];
        }
        idx
    };

    let mut out = Operator::zeros(d_keep, d_keep);
    for ik in 0..d_keep {
        for jk in 0..d_keep {
            let mut acc = C64::new(0.0, 0.0);
            for it in 0..d_trace {
                acc += rho[(full_index(ik, it), full_index(jk, it))];
            }
            out[(ik, jk)] = acc;
        }
    }
    Ok(out)
}
