//! Töplitz-in-time operators on zero-mean functions of `x`, stored as 2x2
//! blocks `B_j^{j'}(l)` coupling the paired spaces `E_{j'} -> E_j`,
//! `j, j' >= 1`.
//!
//! The block-decay norm
//! `|R|_s = sup_{j'} ( sum_{l,j} <l, j-j'>^{2s} ||B_j^{j'}(l)||^2 )^{1/2}`
//! controls composition, the action on fields, and smoothing tails; those
//! closure properties carry the reducibility scheme and are exercised by the
//! tests below.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::{Block2x2, BlockJson};
use crate::context::{angle_lk, FrequencyContext, LBuf, LGrid, MAX_NU};
use crate::error::{Error, Result};
use crate::field::{SpaceTimeField, ToroidalFunction, TWO_PI};

type C = Complex64;

/// Collection `{D_j : 1 <= j <= j_max}` of 2x2 blocks, the diagonal part of a
/// reducible operator.
#[derive(Debug, Clone)]
pub struct BlockDiagonal {
    blocks: Vec<Block2x2>,
}

impl BlockDiagonal {
    pub fn new(blocks: Vec<Block2x2>) -> Self {
        BlockDiagonal { blocks }
    }

    pub fn zeros(j_max: i32) -> Self {
        BlockDiagonal { blocks: vec![Block2x2::ZERO; j_max as usize] }
    }

    /// `D_j = m j I_j`, the unperturbed dispersion.
    pub fn dispersion(m: f64, j_max: i32) -> Self {
        BlockDiagonal {
            blocks: (1..=j_max).map(|j| Block2x2::scalar(C::new(m * j as f64, 0.0))).collect(),
        }
    }

    pub fn j_max(&self) -> i32 {
        self.blocks.len() as i32
    }

    pub fn block(&self, j: i32) -> &Block2x2 {
        &self.blocks[(j - 1) as usize]
    }

    pub fn block_mut(&mut self, j: i32) -> &mut Block2x2 {
        &mut self.blocks[(j - 1) as usize]
    }

    pub fn blocks(&self) -> &[Block2x2] {
        &self.blocks
    }

    pub fn is_selfadjoint(&self, tol: f64) -> bool {
        self.blocks.iter().all(|b| b.is_hermitian(tol))
    }

    /// `sup_j j ||D_j - m j I_j||`, the deviation from the pure dispersion.
    pub fn dispersion_deviation(&self, m: f64) -> f64 {
        self.blocks
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let j = (k + 1) as f64;
                j * b.sub(&Block2x2::scalar(C::new(m * j, 0.0))).norm()
            })
            .fold(0.0, f64::max)
    }
}

/// A Töplitz-in-time operator by its 2x2 blocks, dense over
/// `(l, j, j')` with `|l|_inf <= grid.half()`, `1 <= j, j' <= j_max`.
#[derive(Debug, Clone)]
pub struct ToeplitzOperator {
    grid: LGrid,
    j_max: i32,
    blocks: Vec<Block2x2>,
}

impl ToeplitzOperator {
    pub fn zero(grid: LGrid, j_max: i32) -> Self {
        assert!(j_max >= 1);
        let n = grid.len() * (j_max as usize) * (j_max as usize);
        ToeplitzOperator { grid, j_max, blocks: vec![Block2x2::ZERO; n] }
    }

    pub fn identity(grid: LGrid, j_max: i32) -> Self {
        let mut op = Self::zero(grid, j_max);
        let zero = vec![0i32; grid.nu()];
        let l0 = grid.index(&zero).unwrap();
        for j in 1..=j_max {
            *op.block_mut(l0, j, j) = Block2x2::identity();
        }
        op
    }

    /// Multiplication operator by a function of `phi`: blocks `a(l) I_j`.
    pub fn mult(a: &ToroidalFunction, grid: LGrid, j_max: i32) -> Self {
        let mut op = Self::zero(grid, j_max);
        let mut buf: LBuf = [0; MAX_NU];
        for li in 0..a.grid().len() {
            let c = a.coeff(li);
            if c.norm_sqr() == 0.0 {
                continue;
            }
            let l = a.grid().decode(li, &mut buf);
            let Some(lo) = grid.index(l) else { continue };
            for j in 1..=j_max {
                *op.block_mut(lo, j, j) = Block2x2::scalar(c);
            }
        }
        op
    }

    /// `|D|^m`: diagonal blocks `j^m I_j` at `l = 0`.
    pub fn abs_d_pow(m: f64, grid: LGrid, j_max: i32) -> Self {
        let mut op = Self::zero(grid, j_max);
        let zero = vec![0i32; grid.nu()];
        let l0 = grid.index(&zero).unwrap();
        for j in 1..=j_max {
            *op.block_mut(l0, j, j) = Block2x2::scalar(C::new((j as f64).powf(m), 0.0));
        }
        op
    }

    /// The operator `h -> q int_T g h dx`, the rank-style remainder shape of
    /// the linearization; scalar coefficients
    /// `R_k^{k'}(l) = 2 pi sum_{l'} q_k(l - l') g_{-k'}(l')`.
    pub fn projection(q: &SpaceTimeField, g: &SpaceTimeField, grid: LGrid, j_max: i32) -> Self {
        let mut op = Self::zero(grid, j_max);
        let mut la: LBuf = [0; MAX_NU];
        let mut lb: LBuf = [0; MAX_NU];
        for iq in 0..q.grid().len() {
            q.grid().decode(iq, &mut la);
            for ig in 0..g.grid().len() {
                g.grid().decode(ig, &mut lb);
                let mut lc: LBuf = [0; MAX_NU];
                for k in 0..grid.nu() {
                    lc[k] = la[k] + lb[k];
                }
                let Some(lo) = grid.index(&lc[..grid.nu()]) else { continue };
                let jm = j_max.min(q.j_max()).min(g.j_max());
                for j in 1..=jm {
                    let qp = q.get(iq, j);
                    let qm = q.get(iq, -j);
                    if qp.norm_sqr() == 0.0 && qm.norm_sqr() == 0.0 {
                        continue;
                    }
                    for jp in 1..=jm {
                        let gp = g.get(ig, -jp);
                        let gm = g.get(ig, jp);
                        if gp.norm_sqr() == 0.0 && gm.norm_sqr() == 0.0 {
                            continue;
                        }
                        let b = op.block_mut(lo, j, jp);
                        b.0[0] += TWO_PI * qp * gp;
                        b.0[1] += TWO_PI * qp * gm;
                        b.0[2] += TWO_PI * qm * gp;
                        b.0[3] += TWO_PI * qm * gm;
                    }
                }
            }
        }
        op
    }

    pub fn grid(&self) -> LGrid {
        self.grid
    }

    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    #[inline]
    fn idx(&self, l_idx: usize, j: i32, jp: i32) -> usize {
        let jm = self.j_max as usize;
        (l_idx * jm + (j - 1) as usize) * jm + (jp - 1) as usize
    }

    #[inline]
    pub fn block(&self, l_idx: usize, j: i32, jp: i32) -> &Block2x2 {
        &self.blocks[self.idx(l_idx, j, jp)]
    }

    #[inline]
    pub fn block_mut(&mut self, l_idx: usize, j: i32, jp: i32) -> &mut Block2x2 {
        let i = self.idx(l_idx, j, jp);
        &mut self.blocks[i]
    }

    pub fn block_at(&self, l: &[i32], j: i32, jp: i32) -> Block2x2 {
        match self.grid.index(l) {
            Some(li) if j >= 1 && jp >= 1 && j <= self.j_max && jp <= self.j_max => {
                *self.block(li, j, jp)
            }
            _ => Block2x2::ZERO,
        }
    }

    /// Scalar matrix coefficient `R_k^{k'}(l)` for signed `k, k'`.
    pub fn scalar_coeff(&self, l: &[i32], k: i32, kp: i32) -> C {
        let b = self.block_at(l, k.abs(), kp.abs());
        let r = if k > 0 { 0 } else { 1 };
        let c = if kp > 0 { 0 } else { 1 };
        b.0[2 * r + c]
    }

    /// Linear indices of the time modes carrying any nonzero block.
    pub fn nonzero_l(&self) -> Vec<usize> {
        let jm2 = (self.j_max as usize).pow(2);
        (0..self.grid.len())
            .filter(|&li| self.blocks[li * jm2..(li + 1) * jm2].iter().any(|b| !b.is_zero()))
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm()).fold(0.0, f64::max)
    }

    pub fn add(&self, o: &ToeplitzOperator) -> ToeplitzOperator {
        self.add_scaled(o, C::ONE)
    }

    pub fn sub(&self, o: &ToeplitzOperator) -> ToeplitzOperator {
        self.add_scaled(o, -C::ONE)
    }

    pub fn add_scaled(&self, o: &ToeplitzOperator, k: C) -> ToeplitzOperator {
        assert_eq!(self.grid, o.grid);
        assert_eq!(self.j_max, o.j_max);
        let mut out = self.clone();
        for (b, ob) in out.blocks.iter_mut().zip(&o.blocks) {
            *b = b.add(&ob.scale(k));
        }
        out
    }

    pub fn scale(&self, k: C) -> ToeplitzOperator {
        let mut out = self.clone();
        for b in out.blocks.iter_mut() {
            *b = b.scale(k);
        }
        out
    }

    /// Block-decay norm `|R|_s`. The sup over `j'` runs over the stored
    /// columns only, so reported values are truncated norms.
    pub fn decay_norm(&self, s: f64) -> f64 {
        let mut buf: LBuf = [0; MAX_NU];
        let mut sup = 0.0f64;
        for jp in 1..=self.j_max {
            let mut acc = 0.0;
            for li in 0..self.grid.len() {
                let l = self.grid.decode(li, &mut buf).to_vec();
                for j in 1..=self.j_max {
                    let b = self.block(li, j, jp);
                    if !b.is_zero() {
                        acc += angle_lk(&l, j - jp).powf(2.0 * s) * b.norm_sqr();
                    }
                }
            }
            sup = sup.max(acc.sqrt());
        }
        sup
    }

    /// Space-restricted norm `|R(phi)|_{s,x}` at a fixed `phi`.
    pub fn space_norm_at(&self, phi: &[f64], s: f64) -> f64 {
        let mut buf: LBuf = [0; MAX_NU];
        let mut sup = 0.0f64;
        for jp in 1..=self.j_max {
            let mut acc = 0.0;
            for j in 1..=self.j_max {
                let mut b = Block2x2::ZERO;
                for li in 0..self.grid.len() {
                    let blk = self.block(li, j, jp);
                    if blk.is_zero() {
                        continue;
                    }
                    let l = self.grid.decode(li, &mut buf);
                    let phase: f64 = l.iter().zip(phi).map(|(&q, &p)| q as f64 * p).sum();
                    b = b.add(&blk.scale(C::from_polar(1.0, phase)));
                }
                acc += ((j - jp).abs().max(1) as f64).powf(2.0 * s) * b.norm_sqr();
            }
            sup = sup.max(acc.sqrt());
        }
        sup
    }

    /// Composition `self . other`, truncated back to `self`'s band.
    pub fn compose(&self, other: &ToeplitzOperator) -> ToeplitzOperator {
        assert_eq!(self.grid.nu(), other.grid.nu());
        assert_eq!(self.j_max, other.j_max);
        let jm = self.j_max as usize;
        let jm2 = jm * jm;
        let a_nz = self.nonzero_l();
        let mut a_mask = vec![false; self.grid.len()];
        for &i in &a_nz {
            a_mask[i] = true;
        }
        let b_nz = other.nonzero_l();
        let grid = self.grid;
        let other_grid = other.grid;

        let mut out = ToeplitzOperator::zero(grid, self.j_max);
        out.blocks
            .par_chunks_mut(jm2)
            .enumerate()
            .for_each(|(lo, chunk)| {
                let mut buf: LBuf = [0; MAX_NU];
                let mut bbuf: LBuf = [0; MAX_NU];
                let lvec = grid.decode(lo, &mut buf).to_vec();
                for &lb in &b_nz {
                    // la = lo - lb on self's grid
                    other_grid.decode(lb, &mut bbuf);
                    let mut la_arr: LBuf = [0; MAX_NU];
                    for k in 0..grid.nu() {
                        la_arr[k] = lvec[k] - bbuf[k];
                    }
                    let Some(la) = grid.index(&la_arr[..grid.nu()]) else { continue };
                    if !a_mask[la] {
                        continue;
                    }
                    let a_panel = &self.blocks[la * jm2..(la + 1) * jm2];
                    let b_panel = &other.blocks[lb * jm2..(lb + 1) * jm2];
                    // C_lo += A_la * B_lb as (jm x jm) block matrices
                    for j in 0..jm {
                        for k in 0..jm {
                            let a = &a_panel[j * jm + k];
                            if a.is_zero() {
                                continue;
                            }
                            let brow = &b_panel[k * jm..(k + 1) * jm];
                            let crow = &mut chunk[j * jm..(j + 1) * jm];
                            for (cb, bb) in crow.iter_mut().zip(brow) {
                                if !bb.is_zero() {
                                    *cb = cb.add(&a.mul(bb));
                                }
                            }
                        }
                    }
                }
            });
        out
    }

    /// Left multiplication by a block diagonal: `B_j^{j'}(l) -> D_j B_j^{j'}(l)`.
    pub fn diag_left(&self, d: &BlockDiagonal) -> ToeplitzOperator {
        assert_eq!(d.j_max(), self.j_max);
        let mut out = self.clone();
        let jm = self.j_max as usize;
        for li in 0..self.grid.len() {
            for j in 1..=self.j_max {
                for jp in 1..=self.j_max {
                    let i = (li * jm + (j - 1) as usize) * jm + (jp - 1) as usize;
                    if !out.blocks[i].is_zero() {
                        out.blocks[i] = d.block(j).mul(&out.blocks[i]);
                    }
                }
            }
        }
        out
    }

    /// Right multiplication by a block diagonal: `B_j^{j'}(l) -> B_j^{j'}(l) D_{j'}`.
    pub fn diag_right(&self, d: &BlockDiagonal) -> ToeplitzOperator {
        assert_eq!(d.j_max(), self.j_max);
        let mut out = self.clone();
        let jm = self.j_max as usize;
        for li in 0..self.grid.len() {
            for j in 1..=self.j_max {
                for jp in 1..=self.j_max {
                    let i = (li * jm + (j - 1) as usize) * jm + (jp - 1) as usize;
                    if !out.blocks[i].is_zero() {
                        out.blocks[i] = out.blocks[i].mul(d.block(jp));
                    }
                }
            }
        }
        out
    }

    /// Scales columns by `w(j')` and rows by `v(j)` (e.g. `|D|^m` factors).
    pub fn scale_rows_cols(&self, v: impl Fn(i32) -> f64, w: impl Fn(i32) -> f64) -> ToeplitzOperator {
        let mut out = self.clone();
        let jm = self.j_max as usize;
        for li in 0..self.grid.len() {
            for j in 1..=self.j_max {
                for jp in 1..=self.j_max {
                    let i = (li * jm + (j - 1) as usize) * jm + (jp - 1) as usize;
                    let f = v(j) * w(jp);
                    if f != 1.0 {
                        out.blocks[i] = out.blocks[i].scale(C::new(f, 0.0));
                    }
                }
            }
        }
        out
    }

    /// The action on a zero-x-mean field; validates the mean condition.
    pub fn apply(&self, h: &SpaceTimeField) -> Result<SpaceTimeField> {
        if !h.has_zero_x_mean(1e-12 * (1.0 + h.max_abs())) {
            return Err(Error::MeanCondition(
                "operator acts on zero x-average fields only".into(),
            ));
        }
        Ok(self.apply_raw(h))
    }

    /// The block action `(R h)_j(l) = sum_{l', j'} B_j^{j'}(l - l') h_{j'}(l')`
    /// on the paired coefficients; the `j = 0` slice of the input is ignored
    /// and the output has zero `x`-mean by construction.
    pub fn apply_raw(&self, h: &SpaceTimeField) -> SpaceTimeField {
        let fgrid = h.grid();
        let jh = h.j_max().min(self.j_max);
        let mut out = SpaceTimeField::zero(fgrid, h.j_max());
        let nz = self.nonzero_l();
        let mut obuf: LBuf = [0; MAX_NU];
        let mut dbuf: LBuf = [0; MAX_NU];
        for lo in 0..fgrid.len() {
            let lvec = fgrid.decode(lo, &mut obuf).to_vec();
            for &ld in &nz {
                // l' = lo - ld must be on the field grid
                self.grid.decode(ld, &mut dbuf);
                let mut lp: LBuf = [0; MAX_NU];
                for k in 0..fgrid.nu() {
                    lp[k] = lvec[k] - dbuf[k];
                }
                let Some(lpi) = fgrid.index(&lp[..fgrid.nu()]) else { continue };
                for j in 1..=jh {
                    let mut acc = [C::ZERO; 2];
                    for jp in 1..=jh {
                        let b = self.block(ld, j, jp);
                        if b.is_zero() {
                            continue;
                        }
                        let v = [h.get(lpi, jp), h.get(lpi, -jp)];
                        let r = b.apply(v);
                        acc[0] += r[0];
                        acc[1] += r[1];
                    }
                    let cur_p = out.get(lo, j);
                    let cur_m = out.get(lo, -j);
                    out.set(lo, j, cur_p + acc[0]);
                    out.set(lo, -j, cur_m + acc[1]);
                }
            }
        }
        out
    }

    /// `(omega . d_phi) R`: multiply blocks at `l` by `i (omega . l)`.
    pub fn omega_dphi(&self, ctx: &FrequencyContext) -> ToeplitzOperator {
        let mut out = self.clone();
        let mut buf: LBuf = [0; MAX_NU];
        let jm2 = (self.j_max as usize).pow(2);
        for li in 0..self.grid.len() {
            let l = self.grid.decode(li, &mut buf);
            let f = C::new(0.0, ctx.omega_dot(l));
            for b in out.blocks[li * jm2..(li + 1) * jm2].iter_mut() {
                *b = b.scale(f);
            }
        }
        out
    }

    /// Time smoothing `Pi_N`: zero blocks with `|l|_inf > n`.
    pub fn truncate_time(&self, n: i32) -> ToeplitzOperator {
        let mut out = self.clone();
        let jm2 = (self.j_max as usize).pow(2);
        for li in 0..self.grid.len() {
            if self.grid.sup_norm(li) > n {
                for b in out.blocks[li * jm2..(li + 1) * jm2].iter_mut() {
                    *b = Block2x2::ZERO;
                }
            }
        }
        out
    }

    /// Restricts to the inner band `|l| <= l_cut` and `j, j' <= j_cut`.
    pub fn inner_truncation(&self, l_cut: i32, j_cut: i32) -> ToeplitzOperator {
        let mut out = self.clone();
        let jm2 = (self.j_max as usize).pow(2);
        for li in 0..self.grid.len() {
            let drop_l = self.grid.sup_norm(li) > l_cut;
            for j in 1..=self.j_max {
                for jp in 1..=self.j_max {
                    if drop_l || j > j_cut || jp > j_cut {
                        out.blocks[li * jm2 + ((j - 1) as usize) * self.j_max as usize
                            + (jp - 1) as usize] = Block2x2::ZERO;
                    }
                }
            }
        }
        out
    }

    /// `[R] = diag_j B_j^j(0)`, the 2x2 block-diagonal part.
    pub fn block_diag_part(&self) -> BlockDiagonal {
        let zero = vec![0i32; self.grid.nu()];
        let l0 = self.grid.index(&zero).unwrap();
        BlockDiagonal::new((1..=self.j_max).map(|j| *self.block(l0, j, j)).collect())
    }

    /// `[R]` as an operator.
    pub fn block_diag_op(&self) -> ToeplitzOperator {
        let mut out = ToeplitzOperator::zero(self.grid, self.j_max);
        let zero = vec![0i32; self.grid.nu()];
        let l0 = self.grid.index(&zero).unwrap();
        for j in 1..=self.j_max {
            *out.block_mut(l0, j, j) = *self.block(l0, j, j);
        }
        out
    }

    pub fn from_block_diagonal(d: &BlockDiagonal, grid: LGrid) -> ToeplitzOperator {
        let mut out = ToeplitzOperator::zero(grid, d.j_max());
        let zero = vec![0i32; grid.nu()];
        let l0 = grid.index(&zero).unwrap();
        for j in 1..=d.j_max() {
            *out.block_mut(l0, j, j) = *d.block(j);
        }
        out
    }

    /// Transpose: block of `R^T` at `(l, j, j')` is the anti-transpose of the
    /// block of `R` at `(l, j', j)`.
    pub fn transpose_op(&self) -> ToeplitzOperator {
        let mut out = ToeplitzOperator::zero(self.grid, self.j_max);
        for li in 0..self.grid.len() {
            for j in 1..=self.j_max {
                for jp in 1..=self.j_max {
                    *out.block_mut(li, j, jp) = self.block(li, jp, j).transpose_paired();
                }
            }
        }
        out
    }

    /// Conjugate: block of `conj R` at `(l, j, j')` is the paired conjugate of
    /// the block of `R` at `(-l, j, j')`.
    pub fn conj_op(&self) -> ToeplitzOperator {
        let mut out = ToeplitzOperator::zero(self.grid, self.j_max);
        for li in 0..self.grid.len() {
            let ln = self.grid.neg(li);
            for j in 1..=self.j_max {
                for jp in 1..=self.j_max {
                    *out.block_mut(li, j, jp) = self.block(ln, j, jp).conj_paired();
                }
            }
        }
        out
    }

    /// Adjoint: block of `R^*` at `(l, j, j')` is the Hermitian adjoint of the
    /// block of `R` at `(-l, j', j)`.
    pub fn adjoint_op(&self) -> ToeplitzOperator {
        let mut out = ToeplitzOperator::zero(self.grid, self.j_max);
        for li in 0..self.grid.len() {
            let ln = self.grid.neg(li);
            for j in 1..=self.j_max {
                for jp in 1..=self.j_max {
                    *out.block_mut(li, j, jp) = self.block(ln, jp, j).adjoint();
                }
            }
        }
        out
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.sub(&self.conj_op()).max_abs() <= tol
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.sub(&self.transpose_op()).max_abs() <= tol
    }

    pub fn is_selfadjoint(&self, tol: f64) -> bool {
        self.sub(&self.adjoint_op()).max_abs() <= tol
    }

    pub fn is_skew_adjoint(&self, tol: f64) -> bool {
        self.add(&self.adjoint_op()).max_abs() <= tol
    }

    pub fn embedded(&self, grid: LGrid, j_max: i32) -> ToeplitzOperator {
        let mut out = ToeplitzOperator::zero(grid, j_max);
        let mut buf: LBuf = [0; MAX_NU];
        let jm = self.j_max.min(j_max);
        for li in 0..self.grid.len() {
            let l = self.grid.decode(li, &mut buf);
            let Some(lo) = grid.index(l) else { continue };
            for j in 1..=jm {
                for jp in 1..=jm {
                    *out.block_mut(lo, j, jp) = *self.block(li, j, jp);
                }
            }
        }
        out
    }

    pub fn random(
        grid: LGrid,
        j_max: i32,
        l_decay: f64,
        j_decay: f64,
        rng: &mut impl rand::Rng,
    ) -> ToeplitzOperator {
        let mut out = ToeplitzOperator::zero(grid, j_max);
        let mut buf: LBuf = [0; MAX_NU];
        for li in 0..grid.len() {
            let l = grid.decode(li, &mut buf);
            let lsup = l.iter().map(|c| c.abs()).max().unwrap_or(0) as f64;
            for j in 1..=j_max {
                for jp in 1..=j_max {
                    let amp = (-l_decay * lsup - j_decay * (j - jp).abs() as f64).exp();
                    let mut b = Block2x2::ZERO;
                    for k in 0..4 {
                        b.0[k] = C::new(
                            amp * (rng.gen::<f64>() - 0.5),
                            amp * (rng.gen::<f64>() - 0.5),
                        );
                    }
                    *out.block_mut(li, j, jp) = b;
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> OperatorJson {
        let mut blocks = Vec::new();
        let mut buf: LBuf = [0; MAX_NU];
        for li in 0..self.grid.len() {
            let l = self.grid.decode(li, &mut buf).to_vec();
            for j in 1..=self.j_max {
                for jp in 1..=self.j_max {
                    let b = self.block(li, j, jp);
                    if !b.is_zero() {
                        blocks.push(OperatorBlockJson { l: l.clone(), j, jp, m: BlockJson::from(b) });
                    }
                }
            }
        }
        OperatorJson { l_max: self.grid.half(), j_max: self.j_max, blocks }
    }

    pub fn from_json(json: &OperatorJson, nu: usize) -> Result<ToeplitzOperator> {
        let grid = LGrid::new(nu, json.l_max);
        let mut out = ToeplitzOperator::zero(grid, json.j_max);
        for b in &json.blocks {
            let Some(li) = grid.index(&b.l) else {
                return Err(Error::Shape(format!("block index {:?} off grid", b.l)));
            };
            if b.j < 1 || b.jp < 1 || b.j > json.j_max || b.jp > json.j_max {
                return Err(Error::Shape(format!("block (j, j') = ({}, {}) off grid", b.j, b.jp)));
            }
            *out.block_mut(li, b.j, b.jp) = Block2x2::from(&b.m);
        }
        Ok(out)
    }
}

/// Operator dump format, for debugging and cross-implementation diffing.
#[derive(Debug, Serialize, Deserialize)]
pub struct OperatorJson {
    pub l_max: i32,
    pub j_max: i32,
    pub blocks: Vec<OperatorBlockJson>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OperatorBlockJson {
    pub l: Vec<i32>,
    pub j: i32,
    pub jp: i32,
    pub m: BlockJson,
}
