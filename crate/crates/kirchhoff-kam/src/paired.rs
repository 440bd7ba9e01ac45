//! Operators on the doubled space `(h, conj h)`.
//!
//! [`PairedOperator`] stores the upper row `(P1, P2)` of
//! `[[P1, P2], [conj P2, conj P1]]`; the lower row is never materialized. A
//! Hamiltonian vector field in complex coordinates is `i` times a pair with
//! self-adjoint `(1,1)` part and symmetric `(1,2)` part, which in this storage
//! reads: `P1` skew-adjoint and `P2` symmetric.
//!
//! [`Matrix2Op`] is the general real 2x2 matrix of Töplitz operators used to
//! verify the conjugation identities of the regularization stages.

use num_complex::Complex64;


use crate::context::{FrequencyContext, LGrid};
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::toeplitz::{BlockDiagonal, ToeplitzOperator};

type C = Complex64;

#[derive(Debug, Clone)]
pub struct PairedOperator {
    pub p1: ToeplitzOperator,
    pub p2: ToeplitzOperator,
}

impl PairedOperator {
    pub fn zero(grid: LGrid, j_max: i32) -> Self {
        PairedOperator {
            p1: ToeplitzOperator::zero(grid, j_max),
            p2: ToeplitzOperator::zero(grid, j_max),
        }
    }

    pub fn identity(grid: LGrid, j_max: i32) -> Self {
        PairedOperator {
            p1: ToeplitzOperator::identity(grid, j_max),
            p2: ToeplitzOperator::zero(grid, j_max),
        }
    }

    pub fn grid(&self) -> LGrid {
        self.p1.grid()
    }

    pub fn j_max(&self) -> i32 {
        self.p1.j_max()
    }

    /// `max(|P1|_s, |P2|_s)`.
    pub fn decay_norm(&self, s: f64) -> f64 {
        self.p1.decay_norm(s).max(self.p2.decay_norm(s))
    }

    /// `max(|P1 |D||_s, |P2 |D||_s)`, the one-smoothing weighted size.
    pub fn decay_norm_d(&self, s: f64) -> f64 {
        let w1 = self.p1.scale_rows_cols(|_| 1.0, |jp| jp as f64);
        let w2 = self.p2.scale_rows_cols(|_| 1.0, |jp| jp as f64);
        w1.decay_norm(s).max(w2.decay_norm(s))
    }

    pub fn max_abs(&self) -> f64 {
        self.p1.max_abs().max(self.p2.max_abs())
    }

    pub fn add(&self, o: &PairedOperator) -> PairedOperator {
        PairedOperator { p1: self.p1.add(&o.p1), p2: self.p2.add(&o.p2) }
    }

    pub fn sub(&self, o: &PairedOperator) -> PairedOperator {
        PairedOperator { p1: self.p1.sub(&o.p1), p2: self.p2.sub(&o.p2) }
    }

    /// Scaling by a real factor (a complex factor would break the pairing).
    pub fn scale(&self, k: f64) -> PairedOperator {
        let c = C::new(k, 0.0);
        PairedOperator { p1: self.p1.scale(c), p2: self.p2.scale(c) }
    }

    /// `(h, conj h) -> P1 h + P2 conj h` (first component; the second follows
    /// by conjugation and is not stored).
    pub fn apply(&self, h: &SpaceTimeField) -> SpaceTimeField {
        let hc = h.conj_field();
        self.p1.apply_raw(h).add(&self.p2.apply_raw(&hc))
    }

    /// Composition respecting the conjugate pairing:
    /// `C1 = A1 B1 + A2 conj(B2)`, `C2 = A1 B2 + A2 conj(B1)`.
    pub fn compose(&self, o: &PairedOperator) -> PairedOperator {
        let b1c = o.p1.conj_op();
        let b2c = o.p2.conj_op();
        PairedOperator {
            p1: self.p1.compose(&o.p1).add(&self.p2.compose(&b2c)),
            p2: self.p1.compose(&o.p2).add(&self.p2.compose(&b1c)),
        }
    }

    pub fn omega_dphi(&self, ctx: &FrequencyContext) -> PairedOperator {
        PairedOperator { p1: self.p1.omega_dphi(ctx), p2: self.p2.omega_dphi(ctx) }
    }

    pub fn truncate_time(&self, n: i32) -> PairedOperator {
        PairedOperator { p1: self.p1.truncate_time(n), p2: self.p2.truncate_time(n) }
    }

    pub fn inner_truncation(&self, l_cut: i32, j_cut: i32) -> PairedOperator {
        PairedOperator {
            p1: self.p1.inner_truncation(l_cut, j_cut),
            p2: self.p2.inner_truncation(l_cut, j_cut),
        }
    }

    /// `[R]`: the 2x2 block-diagonal part, which keeps only the `(1,1)`
    /// component (the `(1,2)` part of a block-diagonal paired operator
    /// vanishes by the pairing structure of the scheme).
    pub fn block_diag_op(&self) -> PairedOperator {
        PairedOperator {
            p1: self.p1.block_diag_op(),
            p2: ToeplitzOperator::zero(self.grid(), self.j_max()),
        }
    }

    /// Hamiltonian predicate in this storage: `P1^* = -P1`, `P2^T = P2`.
    pub fn is_hamiltonian(&self, tol: f64) -> bool {
        self.p1.is_skew_adjoint(tol) && self.p2.is_symmetric(tol)
    }

    /// Symmetrizes to the closest Hamiltonian pair (used to build test data).
    pub fn hamiltonian_part(&self) -> PairedOperator {
        let skew = self.p1.sub(&self.p1.adjoint_op()).scale(C::new(0.5, 0.0));
        let sym = self.p2.add(&self.p2.transpose_op()).scale(C::new(0.5, 0.0));
        PairedOperator { p1: skew, p2: sym }
    }

    /// Commutator with the diagonal operator `D = i diag(D^{(1)}, -conj D^{(1)})`,
    /// `D^{(1)} = diag_j D_j`:
    /// `[D, X] = (i (D_j X1 - X1 D_j'), i (D_j X2 + X2 conj D_j'))` blockwise.
    pub fn diag_commutator(&self, d: &BlockDiagonal) -> PairedOperator {
        let i = C::new(0.0, 1.0);
        let dc = BlockDiagonal::new(d.blocks().iter().map(|b| b.conj_paired()).collect());
        let p1 = self.p1.diag_left(d).sub(&self.p1.diag_right(d)).scale(i);
        let p2 = self.p2.diag_left(d).add(&self.p2.diag_right(&dc)).scale(i);
        PairedOperator { p1, p2 }
    }

    /// Applies the diagonal operator `D = i diag(D^{(1)}, -conj D^{(1)})` to a
    /// field: first component `i D_j` blockwise.
    pub fn diag_apply(d: &BlockDiagonal, h: &SpaceTimeField) -> SpaceTimeField {
        let mut out = h.clone();
        let i = C::new(0.0, 1.0);
        for li in 0..h.grid().len() {
            for j in 1..=h.j_max().min(d.j_max()) {
                let v = d.block(j).apply([h.get(li, j), h.get(li, -j)]);
                out.set(li, j, i * v[0]);
                out.set(li, -j, i * v[1]);
            }
            out.set(li, 0, C::ZERO);
        }
        out
    }

    pub fn embedded(&self, grid: LGrid, j_max: i32) -> PairedOperator {
        PairedOperator { p1: self.p1.embedded(grid, j_max), p2: self.p2.embedded(grid, j_max) }
    }

    pub fn random_hamiltonian(
        grid: LGrid,
        j_max: i32,
        l_decay: f64,
        j_decay: f64,
        rng: &mut impl rand::Rng,
    ) -> PairedOperator {
        let raw = PairedOperator {
            p1: ToeplitzOperator::random(grid, j_max, l_decay, j_decay, rng),
            p2: ToeplitzOperator::random(grid, j_max, l_decay, j_decay, rng),
        };
        raw.hamiltonian_part()
    }
}

/// Exponential `Phi = exp(Psi)` with its inverse `exp(-Psi)`, by the shared
/// power series. `tol` is the relative cutoff on the decay norm of a term;
/// the series aborts after `max_terms`.
pub struct PairedExp {
    pub forward: PairedOperator,
    pub inverse: PairedOperator,
    pub terms: usize,
}

pub fn paired_exp(psi: &PairedOperator, tol: f64, max_terms: usize) -> Result<PairedExp> {
    let n0 = psi.decay_norm(0.0);
    if n0 > 1.0 {
        eprintln!("warning: exponential generator has |Psi|_0 = {n0:.3e} > 1");
    }
    let grid = psi.grid();
    let jm = psi.j_max();
    let mut fwd = PairedOperator::identity(grid, jm).add(psi);
    let mut inv = PairedOperator::identity(grid, jm).sub(psi);
    let mut power = psi.clone();
    let mut factorial = 1.0f64;
    for k in 2..=max_terms {
        power = power.compose(psi);
        factorial *= k as f64;
        let term = power.scale(1.0 / factorial);
        let tn = term.decay_norm(0.0);
        fwd = fwd.add(&term);
        if k % 2 == 0 {
            inv = inv.add(&term);
        } else {
            inv = inv.sub(&term);
        }
        if tn <= tol * (1.0 + n0) {
            return Ok(PairedExp { forward: fwd, inverse: inv, terms: k });
        }
    }
    Err(Error::ExpDivergence(max_terms))
}

/// Real pair field `(u, psi)`, the two components of the first-order system.
#[derive(Debug, Clone)]
pub struct PairField {
    pub u: SpaceTimeField,
    pub psi: SpaceTimeField,
}

impl PairField {
    pub fn zero(grid: LGrid, j_max: i32) -> Self {
        PairField { u: SpaceTimeField::zero(grid, j_max), psi: SpaceTimeField::zero(grid, j_max) }
    }

    pub fn add(&self, o: &PairField) -> PairField {
        PairField { u: self.u.add(&o.u), psi: self.psi.add(&o.psi) }
    }

    pub fn sub(&self, o: &PairField) -> PairField {
        PairField { u: self.u.sub(&o.u), psi: self.psi.sub(&o.psi) }
    }

    pub fn scale(&self, k: f64) -> PairField {
        PairField { u: self.u.scale(k), psi: self.psi.scale(k) }
    }

    /// `max(||u||_s, ||psi||_s)`, the product-space norm.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.u.sobolev_norm(s).max(self.psi.sobolev_norm(s))
    }

    pub fn max_abs(&self) -> f64 {
        self.u.max_abs().max(self.psi.max_abs())
    }

    pub fn inner_truncation(&self, l_cut: i32, j_cut: i32) -> PairField {
        PairField {
            u: self.u.inner_truncation(l_cut, j_cut),
            psi: self.psi.inner_truncation(l_cut, j_cut),
        }
    }

    /// Complexification `z = (u + i psi)/sqrt2`.
    pub fn to_complex(&self) -> SpaceTimeField {
        self.u.add(&self.psi.scale_complex(C::new(0.0, 1.0))).scale(1.0 / 2f64.sqrt())
    }

    /// Inverse of [`Self::to_complex`]: `u = (z + conj z)/sqrt2`,
    /// `psi = (z - conj z)/(i sqrt2)`.
    pub fn from_complex(z: &SpaceTimeField) -> PairField {
        let zc = z.conj_field();
        let s = 1.0 / 2f64.sqrt();
        PairField {
            u: z.add(&zc).scale(s),
            psi: z.sub(&zc).scale_complex(C::new(0.0, -s)),
        }
    }
}

/// General real 2x2 matrix of Töplitz operators, used to express and verify
/// the real-coordinate stages of the regularization.
#[derive(Debug, Clone)]
pub struct Matrix2Op {
    pub a11: ToeplitzOperator,
    pub a12: ToeplitzOperator,
    pub a21: ToeplitzOperator,
    pub a22: ToeplitzOperator,
}

impl Matrix2Op {
    pub fn zero(grid: LGrid, j_max: i32) -> Self {
        let z = ToeplitzOperator::zero(grid, j_max);
        Matrix2Op { a11: z.clone(), a12: z.clone(), a21: z.clone(), a22: z }
    }

    pub fn diagonal(a: ToeplitzOperator, d: ToeplitzOperator) -> Self {
        let z = ToeplitzOperator::zero(a.grid(), a.j_max());
        Matrix2Op { a11: a, a12: z.clone(), a21: z, a22: d }
    }

    /// The symplectic form `J = [[0, Id], [-Id, 0]]`.
    pub fn symplectic_j(grid: LGrid, j_max: i32) -> Self {
        let id = ToeplitzOperator::identity(grid, j_max);
        let z = ToeplitzOperator::zero(grid, j_max);
        Matrix2Op { a11: z.clone(), a12: id.clone(), a21: id.scale(C::new(-1.0, 0.0)), a22: z }
    }

    pub fn compose(&self, o: &Matrix2Op) -> Matrix2Op {
        Matrix2Op {
            a11: self.a11.compose(&o.a11).add(&self.a12.compose(&o.a21)),
            a12: self.a11.compose(&o.a12).add(&self.a12.compose(&o.a22)),
            a21: self.a21.compose(&o.a11).add(&self.a22.compose(&o.a21)),
            a22: self.a21.compose(&o.a12).add(&self.a22.compose(&o.a22)),
        }
    }

    pub fn add(&self, o: &Matrix2Op) -> Matrix2Op {
        Matrix2Op {
            a11: self.a11.add(&o.a11),
            a12: self.a12.add(&o.a12),
            a21: self.a21.add(&o.a21),
            a22: self.a22.add(&o.a22),
        }
    }

    pub fn sub(&self, o: &Matrix2Op) -> Matrix2Op {
        Matrix2Op {
            a11: self.a11.sub(&o.a11),
            a12: self.a12.sub(&o.a12),
            a21: self.a21.sub(&o.a21),
            a22: self.a22.sub(&o.a22),
        }
    }

    /// Componentwise transpose with the 2x2 swap, the transpose w.r.t. the
    /// real pairing on pair fields.
    pub fn transpose(&self) -> Matrix2Op {
        Matrix2Op {
            a11: self.a11.transpose_op(),
            a12: self.a21.transpose_op(),
            a21: self.a12.transpose_op(),
            a22: self.a22.transpose_op(),
        }
    }

    pub fn apply(&self, f: &PairField) -> PairField {
        PairField {
            u: self.a11.apply_raw(&f.u).add(&self.a12.apply_raw(&f.psi)),
            psi: self.a21.apply_raw(&f.u).add(&self.a22.apply_raw(&f.psi)),
        }
    }

    /// `max` of the four component decay norms.
    pub fn decay_norm(&self, s: f64) -> f64 {
        self.a11
            .decay_norm(s)
            .max(self.a12.decay_norm(s))
            .max(self.a21.decay_norm(s))
            .max(self.a22.decay_norm(s))
    }

    pub fn inner_truncation(&self, l_cut: i32, j_cut: i32) -> Matrix2Op {
        Matrix2Op {
            a11: self.a11.inner_truncation(l_cut, j_cut),
            a12: self.a12.inner_truncation(l_cut, j_cut),
            a21: self.a21.inner_truncation(l_cut, j_cut),
            a22: self.a22.inner_truncation(l_cut, j_cut),
        }
    }

    /// Symplecticity defect `|M^T J M - J|` in the decay norm at `s = 0`,
    /// restricted to the inner band where the banded products are exact.
    pub fn symplectic_defect(&self, l_cut: i32, j_cut: i32) -> f64 {
        let j = Matrix2Op::symplectic_j(self.a11.grid(), self.a11.j_max());
        let m = self.transpose().compose(&j).compose(self).sub(&j);
        m.inner_truncation(l_cut, j_cut).decay_norm(0.0)
    }
}
