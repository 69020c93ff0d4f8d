use serde::{Deserialize, Serialize};

use crate::{CMat, Complex64, Result, SimError};

const ONE: Complex64 = Complex64::new(1.0, 0.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Qubits ⊗ one truncated bosonic mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertSpace {
    qubit_count: usize,
    resonator_dim: usize,
}

impl HilbertSpace {
    pub fn new(qubit_count: usize, resonator_dim: usize) -> Result<Self> {
        if qubit_count == 0 || qubit_count > 8 {
            return Err(SimError::invalid("qubit_count", "must be in 1..=8"));
        }
        if resonator_dim < 2 {
            return Err(SimError::invalid("resonator_dim", "must be at least 2"));
        }
        Ok(Self {
            qubit_count,
            resonator_dim,
        })
    }

    /// Three qubits and a resonator truncated at `resonator_dim` Fock levels.
    pub fn network(resonator_dim: usize) -> Result<Self> {
        Self::new(3, resonator_dim)
    }

    pub fn qubit_count(&self) -> usize {
        self.qubit_count
    }

    pub fn resonator_dim(&self) -> usize {
        self.resonator_dim
    }

    pub fn dim(&self) -> usize {
        (1usize << self.qubit_count) * self.resonator_dim
    }

    /// Index of the product state with the given qubit bits (bit i = qubit i+1
    /// excited) and Fock number `n`.
    pub fn index(&self, qubits_excited: &[usize], n: usize) -> usize {
        let mut q = 0usize;
        for &site in qubits_excited {
            q |= 1 << (self.qubit_count - site);
        }
        q * self.resonator_dim + n
    }

    pub fn identity(&self) -> OperatorMatrix {
        OperatorMatrix::new(CMat::identity(self.dim(), self.dim()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisTag {
    Lab,
    BrightDark,
}

/// Dense operator on a `HilbertSpace`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub entries: CMat,
    pub basis: BasisTag,
}

impl OperatorMatrix {
    pub fn new(entries: CMat) -> Self {
        Self {
            entries,
            basis: BasisTag::Lab,
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn dagger(&self) -> Self {
        Self {
            entries: self.entries.adjoint(),
            basis: self.basis,
        }
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    /// ‖H − H†‖ / max(‖H‖, 1), Frobenius.
    pub fn hermiticity_error(&self) -> f64 {
        let d = (&self.entries - self.entries.adjoint()).norm();
        d / self.entries.norm().max(1.0)
    }

    pub fn commutator(&self, other: &Self) -> CMat {
        &self.entries * &other.entries - &other.entries * &self.entries
    }
}

impl std::ops::Mul for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn mul(self, rhs: Self) -> OperatorMatrix {
        OperatorMatrix {
            entries: &self.entries * &rhs.entries,
            basis: self.basis,
        }
    }
}

impl std::ops::Add for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn add(self, rhs: Self) -> OperatorMatrix {
        OperatorMatrix {
            entries: &self.entries + &rhs.entries,
            basis: self.basis,
        }
    }
}

impl std::ops::Sub for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn sub(self, rhs: Self) -> OperatorMatrix {
        OperatorMatrix {
            entries: &self.entries - &rhs.entries,
            basis: self.basis,
        }
    }
}

/// Single-qubit matrices in the {|g⟩, |e⟩} basis.
pub mod pauli {
    use super::{CMat, Complex64, ONE, ZERO};

    pub fn identity() -> CMat {
        CMat::identity(2, 2)
    }

    /// |g⟩⟨e|
    pub fn sigma_minus() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO])
    }

    /// |e⟩⟨g|
    pub fn sigma_plus() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO])
    }

    pub fn sigma_x() -> CMat {
        CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    pub fn sigma_y() -> CMat {
        let i = Complex64::new(0.0, 1.0);
        // σ+ − σ− times −i, consistent with σx = σ+ + σ−.
        CMat::from_row_slice(2, 2, &[ZERO, i, -i, ZERO])
    }

    /// diag(−1, +1) = σ+σ− − σ−σ+
    pub fn sigma_z() -> CMat {
        CMat::from_row_slice(2, 2, &[-ONE, ZERO, ZERO, ONE])
    }
}

/// Kronecker product, `a` as the more significant factor.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn embed_qubit_operator(space: &HilbertSpace, local_op: &CMat, site: usize) -> Result<OperatorMatrix> {
    if local_op.nrows() != 2 || local_op.ncols() != 2 {
        return Err(SimError::invalid("local_op", "must be a 2x2 matrix"));
    }
    if site == 0 || site > space.qubit_count() {
        return Err(SimError::invalid(
            "site",
            format!("must be in 1..={}", space.qubit_count()),
        ));
    }
    let left = CMat::identity(1 << (site - 1), 1 << (site - 1));
    let right_q = 1usize << (space.qubit_count() - site);
    let right = CMat::identity(right_q * space.resonator_dim(), right_q * space.resonator_dim());
    Ok(OperatorMatrix::new(kron(&kron(&left, local_op), &right)))
}

pub fn resonator_annihilation(space: &HilbertSpace) -> OperatorMatrix {
    let n = space.resonator_dim();
    let mut a = CMat::zeros(n, n);
    for k in 1..n {
        a[(k - 1, k)] = Complex64::new((k as f64).sqrt(), 0.0);
    }
    let q = 1usize << space.qubit_count();
    OperatorMatrix::new(kron(&CMat::identity(q, q), &a))
}

#[derive(Debug, Clone)]
pub struct BrightDark {
    pub sb_minus: OperatorMatrix,
    pub sb_plus: OperatorMatrix,
    pub sd_minus: OperatorMatrix,
    pub sd_plus: OperatorMatrix,
}

/// σb± = (σ1± + σ2±)/√2, σd± = (σ1± − σ2±)/√2.
pub fn bright_dark_operators(space: &HilbertSpace) -> Result<BrightDark> {
    if space.qubit_count() < 2 {
        return Err(SimError::invalid("qubit_count", "bright/dark states need two qubits"));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let m1 = embed_qubit_operator(space, &pauli::sigma_minus(), 1)?.entries;
    let m2 = embed_qubit_operator(space, &pauli::sigma_minus(), 2)?.entries;
    let sb_minus = OperatorMatrix::new((&m1 + &m2).scale(s));
    let sd_minus = OperatorMatrix::new((&m1 - &m2).scale(s));
    Ok(BrightDark {
        sb_plus: sb_minus.dagger(),
        sd_plus: sd_minus.dagger(),
        sb_minus,
        sd_minus,
    })
}

/// Unitary taking lab-basis (q1, q2) amplitudes to {|gg⟩, |b⟩, |d⟩, |ee⟩},
/// embedded on the full space.
pub fn bright_dark_unitary(space: &HilbertSpace) -> Result<CMat> {
    if space.qubit_count() < 2 {
        return Err(SimError::invalid("qubit_count", "bright/dark states need two qubits"));
    }
    let s = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    // rows: gg, b, d, ee; columns: gg, ge, eg, ee (q1 most significant)
    let u2 = CMat::from_row_slice(
        4,
        4,
        &[
            ONE, ZERO, ZERO, ZERO, //
            ZERO, s, s, ZERO, //
            ZERO, -s, s, ZERO, //
            ZERO, ZERO, ZERO, ONE,
        ],
    );
    let rest = (1usize << (space.qubit_count() - 2)) * space.resonator_dim();
    Ok(kron(&u2, &CMat::identity(rest, rest)))
}

/// Express a lab-basis operator in the bright/dark basis.
pub fn to_bright_dark(space: &HilbertSpace, op: &OperatorMatrix) -> Result<OperatorMatrix> {
    if op.basis == BasisTag::BrightDark {
        return Ok(op.clone());
    }
    let u = bright_dark_unitary(space)?;
    Ok(OperatorMatrix {
        entries: &u * &op.entries * u.adjoint(),
        basis: BasisTag::BrightDark,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sp(r: usize) -> HilbertSpace {
        HilbertSpace::network(r).unwrap()
    }

    fn basis_vec(d: usize, i: usize) -> nalgebra::DVector<Complex64> {
        let mut v = nalgebra::DVector::zeros(d);
        v[i] = ONE;
        v
    }

    #[test]
    fn dimension_and_validation() {
        assert_eq!(sp(3).dim(), 24);
        assert_eq!(sp(5).dim(), 40);
        assert!(HilbertSpace::network(1).is_err());
        let s = sp(3);
        assert!(embed_qubit_operator(&s, &pauli::sigma_z(), 0).is_err());
        assert!(embed_qubit_operator(&s, &pauli::sigma_z(), 4).is_err());
        assert!(embed_qubit_operator(&s, &CMat::identity(3, 3), 1).is_err());
    }

    #[test]
    fn identity_embedding_and_traceless_z() {
        let s = sp(3);
        let id = embed_qubit_operator(&s, &pauli::identity(), 1).unwrap();
        assert_eq!(id.entries, CMat::identity(24, 24));
        let z2 = embed_qubit_operator(&s, &pauli::sigma_z(), 2).unwrap();
        assert!(z2.trace().norm() < 1e-15);
    }

    #[test]
    fn number_projector_matches_loop_construction() {
        let s = sp(3);
        let p = embed_qubit_operator(&s, &pauli::sigma_plus(), 1).unwrap();
        let m = embed_qubit_operator(&s, &pauli::sigma_minus(), 1).unwrap();
        let n1 = &p * &m;
        assert!((n1.trace().re - 12.0).abs() < 1e-14);
        // Element-wise oracle: diagonal is 1 exactly where the q1 bit is set.
        for i in 0..24 {
            for j in 0..24 {
                let q1_excited = (i / 3) & 0b100 != 0;
                let want = if i == j && q1_excited { 1.0 } else { 0.0 };
                assert_eq!(n1.entries[(i, j)], Complex64::new(want, 0.0));
            }
        }
    }

    #[test]
    fn ladder_operator_elements() {
        let a2 = resonator_annihilation(&sp(2));
        assert!((&a2.entries * &a2.entries).norm() < 1e-15);
        let s = sp(3);
        let a = resonator_annihilation(&s);
        let i1 = s.index(&[], 1);
        let i2 = s.index(&[], 2);
        assert!((a.entries[(i1, i2)].re - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn canonical_commutator_below_truncation() {
        for r in 2..6 {
            let s = sp(r);
            let a = resonator_annihilation(&s);
            let c = a.commutator(&a.dagger());
            let kept: Vec<usize> = (0..s.dim()).filter(|i| i % r < r - 1).collect();
            for &i in &kept {
                for &j in &kept {
                    let want = if i == j { ONE } else { ZERO };
                    assert!((c[(i, j)] - want).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn bright_state_from_ground() {
        let s = sp(3);
        let bd = bright_dark_operators(&s).unwrap();
        let g = basis_vec(24, 0);
        let b = &bd.sb_plus.entries * &g;
        assert!((b.norm() - 1.0).abs() < 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b[s.index(&[1], 0)].re - h).abs() < 1e-15);
        assert!((b[s.index(&[2], 0)].re - h).abs() < 1e-15);
        let back = (g.adjoint() * &bd.sb_minus.entries * &bd.sb_plus.entries * &g)[(0, 0)];
        assert!((back.re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bright_dark_exchange_identity() {
        let s = sp(3);
        let bd = bright_dark_operators(&s).unwrap();
        let lhs = &(&bd.sb_plus * &bd.sd_minus) + &(&bd.sd_plus * &bd.sb_minus);
        let n = |k| {
            let p = embed_qubit_operator(&s, &pauli::sigma_plus(), k).unwrap();
            let m = embed_qubit_operator(&s, &pauli::sigma_minus(), k).unwrap();
            &p * &m
        };
        let rhs = &n(1) - &n(2);
        assert!((lhs.entries - rhs.entries).norm() < 1e-14);
        let total = &(&bd.sb_plus * &bd.sb_minus) + &(&bd.sd_plus * &bd.sd_minus);
        assert!((total.entries - (&n(1) + &n(2)).entries).norm() < 1e-14);
    }

    #[test]
    fn unitary_maps_bright_operator() {
        let s = sp(2);
        let u = bright_dark_unitary(&s).unwrap();
        assert!((&u * u.adjoint() - CMat::identity(s.dim(), s.dim())).norm() < 1e-14);
        let bd = bright_dark_operators(&s).unwrap();
        let nb = to_bright_dark(&s, &(&bd.sb_plus * &bd.sb_minus)).unwrap();
        // single excitation in |b⟩ sits at qubit index 1 of the {gg,b,d,ee} ordering
        let ib = s.dim() / 4;
        assert!((nb.entries[(ib, ib)].re - 1.0).abs() < 1e-14);
        assert!(nb.entries[(2 * ib, 2 * ib)].norm() < 1e-14);
    }

    fn local() -> impl Strategy<Value = CMat> {
        proptest::collection::vec(-1.0f64..1.0, 8).prop_map(|v| {
            CMat::from_fn(2, 2, |i, j| Complex64::new(v[2 * (2 * i + j)], v[2 * (2 * i + j) + 1]))
        })
    }

    proptest! {
        #[test]
        fn distinct_sites_commute(a in local(), b in local(), i in 1usize..4, j in 1usize..4) {
            prop_assume!(i != j);
            let s = sp(2);
            let ea = embed_qubit_operator(&s, &a, i).unwrap();
            let eb = embed_qubit_operator(&s, &b, j).unwrap();
            prop_assert!(ea.commutator(&eb).norm() < 1e-12);
        }

        #[test]
        fn paulis_are_involutive(site in 1usize..4, which in 0usize..3) {
            let s = sp(3);
            let p = [pauli::sigma_x(), pauli::sigma_y(), pauli::sigma_z()][which].clone();
            let e = embed_qubit_operator(&s, &p, site).unwrap();
            prop_assert!(((&e * &e).entries - CMat::identity(24, 24)).norm() < 1e-12);
        }
    }
}
