//! 2x2 blocks on the paired mode space `E_j = span{e^{ijx}, e^{-ijx}}` and the
//! induced 4x4 linear maps `X -> w X + A X ± X B` used by the homological
//! equations.
//!
//! A block is stored row-major as `[m00, m01, m10, m11]` with rows indexed by
//! `(+j, -j)` and columns by `(+j', -j')`. The transpose and conjugate follow
//! the paired-index convention: `(M^T)_k^{k'} = M_{-k'}^{-k}` and
//! `(conj M)_k^{k'} = conj(M_{-k}^{-k'})`, so the adjoint `M^* = (conj M)^T`
//! is the ordinary conjugate transpose.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type C = Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block2x2(pub [C; 4]);

impl Block2x2 {
    pub const ZERO: Block2x2 = Block2x2([C::ZERO; 4]);

    pub fn identity() -> Self {
        Block2x2([C::ONE, C::ZERO, C::ZERO, C::ONE])
    }

    pub fn scalar(c: C) -> Self {
        Block2x2([c, C::ZERO, C::ZERO, c])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|c| c.norm_sqr() == 0.0)
    }

    pub fn add(&self, o: &Block2x2) -> Block2x2 {
        let mut r = *self;
        for k in 0..4 {
            r.0[k] += o.0[k];
        }
        r
    }

    pub fn sub(&self, o: &Block2x2) -> Block2x2 {
        let mut r = *self;
        for k in 0..4 {
            r.0[k] -= o.0[k];
        }
        r
    }

    pub fn scale(&self, c: C) -> Block2x2 {
        let mut r = *self;
        for k in 0..4 {
            r.0[k] *= c;
        }
        r
    }

    #[inline]
    pub fn mul(&self, o: &Block2x2) -> Block2x2 {
        let a = &self.0;
        let b = &o.0;
        Block2x2([
            a[0] * b[0] + a[1] * b[2],
            a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3],
        ])
    }

    /// `M v` for `v = (v_{+j'}, v_{-j'})`.
    #[inline]
    pub fn apply(&self, v: [C; 2]) -> [C; 2] {
        [self.0[0] * v[0] + self.0[1] * v[1], self.0[2] * v[0] + self.0[3] * v[1]]
    }

    /// Frobenius norm, the `L^2` block norm `sqrt(Tr(M M^*))`.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    pub fn trace(&self) -> C {
        self.0[0] + self.0[3]
    }

    /// Paired-index transpose `(M^T)_k^{k'} = M_{-k'}^{-k}`: the reflection
    /// about the anti-diagonal.
    pub fn transpose_paired(&self) -> Block2x2 {
        Block2x2([self.0[3], self.0[1], self.0[2], self.0[0]])
    }

    /// Paired-index conjugate `(conj M)_k^{k'} = conj(M_{-k}^{-k'})`.
    pub fn conj_paired(&self) -> Block2x2 {
        Block2x2([self.0[3].conj(), self.0[2].conj(), self.0[1].conj(), self.0[0].conj()])
    }

    /// Adjoint `M^* = (conj M)^T`; equals the usual conjugate transpose.
    pub fn adjoint(&self) -> Block2x2 {
        Block2x2([self.0[0].conj(), self.0[2].conj(), self.0[1].conj(), self.0[3].conj()])
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.sub(&self.adjoint()).norm() <= tol
    }

    /// Eigenvalues of a Hermitian block, ascending.
    pub fn hermitian_eigenvalues(&self) -> [f64; 2] {
        let a = self.0[0].re;
        let d = self.0[3].re;
        let mean = 0.5 * (a + d);
        let r = (0.25 * (a - d) * (a - d) + self.0[1].norm_sqr()).sqrt();
        [mean - r, mean + r]
    }

    /// `exp(-i t M)` for Hermitian `M`, by the closed form
    /// `M = mean I + S`, `S^2 = r^2 I`:
    /// `exp(-itM) = e^{-it mean} (cos(rt) I - i sin(rt) S / r)`.
    pub fn exp_minus_i_t_hermitian(&self, t: f64) -> Block2x2 {
        let mean = 0.5 * (self.0[0].re + self.0[3].re);
        let s = Block2x2([
            self.0[0] - C::new(mean, 0.0),
            self.0[1],
            self.0[2],
            self.0[3] - C::new(mean, 0.0),
        ]);
        let r = (0.25 * (self.0[0].re - self.0[3].re).powi(2) + self.0[1].norm_sqr()).sqrt();
        let phase = C::from_polar(1.0, -t * mean);
        if r == 0.0 {
            return Block2x2::scalar(phase);
        }
        let cosr = (r * t).cos();
        let sincr = (r * t).sin() / r;
        let mut out = Block2x2::scalar(C::new(cosr, 0.0));
        out = out.add(&s.scale(C::new(0.0, -sincr)));
        out.scale(phase)
    }

    pub fn det(&self) -> C {
        self.0[0] * self.0[3] - self.0[1] * self.0[2]
    }

    pub fn inverse(&self) -> Option<Block2x2> {
        let d = self.det();
        if d.norm() == 0.0 {
            return None;
        }
        let inv = C::ONE / d;
        Some(Block2x2([self.0[3] * inv, -self.0[1] * inv, -self.0[2] * inv, self.0[0] * inv]))
    }
}

/// Serialized block: four `[re, im]` pairs, row-major.
#[derive(Debug, Serialize, Deserialize)]
pub struct BlockJson(pub [[f64; 2]; 4]);

impl From<&Block2x2> for BlockJson {
    fn from(b: &Block2x2) -> Self {
        BlockJson([
            [b.0[0].re, b.0[0].im],
            [b.0[1].re, b.0[1].im],
            [b.0[2].re, b.0[2].im],
            [b.0[3].re, b.0[3].im],
        ])
    }
}

impl From<&BlockJson> for Block2x2 {
    fn from(b: &BlockJson) -> Self {
        Block2x2([
            C::new(b.0[0][0], b.0[0][1]),
            C::new(b.0[1][0], b.0[1][1]),
            C::new(b.0[2][0], b.0[2][1]),
            C::new(b.0[3][0], b.0[3][1]),
        ])
    }
}

/// 4x4 complex matrix, row-major; the vectorization convention is row-major
/// `vec(X) = (x00, x01, x10, x11)`.
#[derive(Debug, Clone, Copy)]
pub struct Mat4(pub [C; 16]);

impl Mat4 {
    pub fn zero() -> Self {
        Mat4([C::ZERO; 16])
    }

    pub fn identity_scaled(c: C) -> Self {
        let mut m = Self::zero();
        for k in 0..4 {
            m.0[k * 4 + k] = c;
        }
        m
    }

    /// `M_L(A): X -> A X` on 2x2 blocks.
    pub fn left_mul(a: &Block2x2) -> Self {
        let mut m = Self::zero();
        // (AX)_{rc} = sum_k A_{rk} X_{kc}
        for r in 0..2 {
            for c in 0..2 {
                for k in 0..2 {
                    m.0[(2 * r + c) * 4 + (2 * k + c)] += a.0[2 * r + k];
                }
            }
        }
        m
    }

    /// `M_R(B): X -> X B` on 2x2 blocks.
    pub fn right_mul(b: &Block2x2) -> Self {
        let mut m = Self::zero();
        // (XB)_{rc} = sum_k X_{rk} B_{kc}
        for r in 0..2 {
            for c in 0..2 {
                for k in 0..2 {
                    m.0[(2 * r + c) * 4 + (2 * r + k)] += b.0[2 * k + c];
                }
            }
        }
        m
    }

    pub fn add(&self, o: &Mat4) -> Mat4 {
        let mut m = *self;
        for k in 0..16 {
            m.0[k] += o.0[k];
        }
        m
    }

    pub fn sub(&self, o: &Mat4) -> Mat4 {
        let mut m = *self;
        for k in 0..16 {
            m.0[k] -= o.0[k];
        }
        m
    }

    pub fn apply_vec(&self, x: &[C; 4]) -> [C; 4] {
        let mut y = [C::ZERO; 4];
        for (r, yr) in y.iter_mut().enumerate() {
            for (c, xc) in x.iter().enumerate() {
                *yr += self.0[r * 4 + c] * xc;
            }
        }
        y
    }

    pub fn apply_block(&self, x: &Block2x2) -> Block2x2 {
        Block2x2(self.apply_vec(&x.0))
    }

    /// Solves `M vec(X) = vec(RHS)` by partial-pivot LU. Returns `None` when a
    /// pivot vanishes to machine precision.
    pub fn solve(&self, rhs: &Block2x2) -> Option<Block2x2> {
        let mut a = self.0;
        let mut b = rhs.0;
        for col in 0..4 {
            let (piv, mag) = (col..4)
                .map(|r| (r, a[r * 4 + col].norm()))
                .max_by(|x, y| x.1.total_cmp(&y.1))
                .unwrap();
            if mag < 1e-300 {
                return None;
            }
            if piv != col {
                for k in 0..4 {
                    a.swap(piv * 4 + k, col * 4 + k);
                }
                b.swap(piv, col);
            }
            let inv = C::ONE / a[col * 4 + col];
            for r in (col + 1)..4 {
                let f = a[r * 4 + col] * inv;
                if f.norm_sqr() == 0.0 {
                    continue;
                }
                for k in col..4 {
                    let v = a[col * 4 + k];
                    a[r * 4 + k] -= f * v;
                }
                b[r] -= f * b[col];
            }
        }
        for col in (0..4).rev() {
            let mut acc = b[col];
            for k in (col + 1)..4 {
                acc -= a[col * 4 + k] * b[k];
            }
            b[col] = acc / a[col * 4 + col];
        }
        Some(Block2x2(b))
    }

    /// Smallest singular value by one-sided Jacobi; independent of any
    /// eigenvalue shortcut, used as the generic margin oracle.
    #[allow(clippy::needless_range_loop)]
    pub fn sigma_min(&self) -> f64 {
        // columns of A, rotated in place
        let mut col = [[C::ZERO; 4]; 4];
        for (r, row) in self.0.chunks_exact(4).enumerate() {
            for (c, v) in row.iter().enumerate() {
                col[c][r] = *v;
            }
        }
        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..4 {
                for q in (p + 1)..4 {
                    let app: f64 = col[p].iter().map(|z| z.norm_sqr()).sum();
                    let aqq: f64 = col[q].iter().map(|z| z.norm_sqr()).sum();
                    let apq: C = col[p].iter().zip(&col[q]).map(|(a, b)| a.conj() * b).sum();
                    let mag = apq.norm();
                    if mag <= 1e-300 {
                        continue;
                    }
                    off = off.max(mag / (app.max(aqq) + 1e-300));
                    // rotation diagonalizing [[app, apq], [conj(apq), aqq]]
                    let tau = (aqq - app) / (2.0 * mag);
                    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                    let cs = 1.0 / (1.0 + t * t).sqrt();
                    let sn = (apq / mag) * (cs * t);
                    for r in 0..4 {
                        let (vp, vq) = (col[p][r], col[q][r]);
                        col[p][r] = vp * cs - vq * sn.conj();
                        col[q][r] = vp * sn + vq * cs;
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        (0..4)
            .map(|c| col[c].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min)
    }
}

/// `A^{±}(w, Dj, Djp) = w I + M_L(Dj) ∓ M_R(Djp)` with the minus variant using
/// `Djp` itself and the plus variant using the paired conjugate of `Djp`.
pub fn homological_matrix(w: f64, dj: &Block2x2, djp: &Block2x2, plus: bool) -> Mat4 {
    let base = Mat4::identity_scaled(C::new(w, 0.0)).add(&Mat4::left_mul(dj));
    if plus {
        base.add(&Mat4::right_mul(&djp.conj_paired()))
    } else {
        base.sub(&Mat4::right_mul(djp))
    }
}

/// Divisors `w + lam_k(Dj) ∓ lam_{k'}(Djp)` for self-adjoint blocks; by the
/// spectral splitting of `M_L ± M_R` these are exactly the eigenvalues of
/// [`homological_matrix`].
pub fn hermitian_divisors(w: f64, dj: &Block2x2, djp: &Block2x2, plus: bool) -> [f64; 4] {
    let a = dj.hermitian_eigenvalues();
    // conj_paired of a Hermitian block is Hermitian with the same eigenvalues
    let b = djp.hermitian_eigenvalues();
    let mut out = [0.0; 4];
    let mut k = 0;
    for la in a {
        for lb in b {
            out[k] = if plus { w + la + lb } else { w + la - lb };
            k += 1;
        }
    }
    out
}
