//! Linear stability verification.
//!
//! In diagonalized coordinates the linearized flow is
//! `d_t h_j = -i D_j^inf h_j` per 2x2 block: the propagators
//! `exp(-i t D_j^inf)` are unitary, so every space Sobolev norm is constant in
//! time. In the original coordinates the flow
//!
//! `d_t v = p, d_t p = a(w t) d_xx v - 2 eps u_xx(w t) int u_xx(w t) v dx`
//!
//! is integrated with an 8th-order explicit Runge-Kutta scheme
//! (Cooper-Verner tableau) and compared: norms must stay bounded, and the
//! trajectory conjugated through the regularization maps must match the
//! reduced flow. The spatial zero mode obeys `v_0(t) = v0 + p0 t` exactly.

use num_complex::Complex64;
use serde::Serialize;

use crate::context::{FrequencyContext, LBuf, MAX_NU};
use crate::error::Result;
use crate::field::{SpaceTimeField, TWO_PI};
use crate::kam::FinalBlocks;
use crate::linearize::LinearizedOperator;
use crate::regularize::RegularizationResult;
use crate::toeplitz::{BlockDiagonal, ToeplitzOperator};

type C = Complex64;

/// A function of `x` alone, on `|j| <= j_max` (`j = 0` included so the zero
/// mode can ride along where needed).
#[derive(Debug, Clone)]
pub struct SpaceField {
    j_max: i32,
    coeffs: Vec<C>,
}

impl SpaceField {
    pub fn zero(j_max: i32) -> Self {
        SpaceField { j_max, coeffs: vec![C::ZERO; (2 * j_max + 1) as usize] }
    }

    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    #[inline]
    pub fn get(&self, j: i32) -> C {
        if j.abs() > self.j_max {
            C::ZERO
        } else {
            self.coeffs[(j + self.j_max) as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, j: i32, v: C) {
        self.coeffs[(j + self.j_max) as usize] = v;
    }

    pub fn norm_hs(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for j in -self.j_max..=self.j_max {
            let w = (j.abs().max(1)) as f64;
            acc += w.powf(2.0 * s) * self.get(j).norm_sqr();
        }
        acc.sqrt()
    }

    pub fn random(j_max: i32, decay: f64, rng: &mut impl rand::Rng, zero_mean: bool) -> SpaceField {
        let mut out = SpaceField::zero(j_max);
        for j in -j_max..=j_max {
            if zero_mean && j == 0 {
                continue;
            }
            let amp = (-decay * j.abs() as f64).exp();
            out.set(j, C::new(amp * (rng.gen::<f64>() - 0.5), amp * (rng.gen::<f64>() - 0.5)));
        }
        out
    }

    /// Makes the function real-valued: `c_{-j} = conj(c_j)`.
    pub fn realified(&self) -> SpaceField {
        let mut out = self.clone();
        for j in 0..=self.j_max {
            let avg = 0.5 * (self.get(j) + self.get(-j).conj());
            out.set(j, avg);
            out.set(-j, avg.conj());
        }
        out
    }

    pub fn conj_field(&self) -> SpaceField {
        let mut out = SpaceField::zero(self.j_max);
        for j in -self.j_max..=self.j_max {
            out.set(j, self.get(-j).conj());
        }
        out
    }

    pub fn sub(&self, o: &SpaceField) -> SpaceField {
        let mut out = self.clone();
        for j in -self.j_max..=self.j_max {
            out.set(j, self.get(j) - o.get(j));
        }
        out
    }
}

/// One snapshot of a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct FlowSnapshot {
    pub t: f64,
    pub h_norm_s: f64,
    pub u_norm: f64,
    pub psi_norm: f64,
}

pub fn snapshots_csv(snaps: &[FlowSnapshot]) -> String {
    let mut out = String::from("t,h_norm_s,u_norm,psi_norm\n");
    for s in snaps {
        out.push_str(&format!("{},{:e},{:e},{:e}\n", s.t, s.h_norm_s, s.u_norm, s.psi_norm));
    }
    out
}

/// Exact blockwise propagation `h_j(t) = exp(-i t D_j^inf) h_j(0)` of the
/// reduced flow; `h0` must have zero x-mean.
pub fn integrate_reduced(
    d_inf: &BlockDiagonal,
    h0: &SpaceField,
    t_grid: &[f64],
    s: f64,
) -> Vec<FlowSnapshot> {
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mut ht = SpaceField::zero(h0.j_max());
        for j in 1..=h0.j_max().min(d_inf.j_max()) {
            let u = d_inf.block(j).exp_minus_i_t_hermitian(t);
            let v = u.apply([h0.get(j), h0.get(-j)]);
            ht.set(j, v[0]);
            ht.set(-j, v[1]);
        }
        out.push(FlowSnapshot { t, h_norm_s: ht.norm_hs(s), u_norm: f64::NAN, psi_norm: f64::NAN });
    }
    out
}

/// Reduced-flow state at one time (for conjugation comparisons).
pub fn reduced_state_at(d_inf: &BlockDiagonal, h0: &SpaceField, t: f64) -> SpaceField {
    let mut ht = SpaceField::zero(h0.j_max());
    for j in 1..=h0.j_max().min(d_inf.j_max()) {
        let u = d_inf.block(j).exp_minus_i_t_hermitian(t);
        let v = u.apply([h0.get(j), h0.get(-j)]);
        ht.set(j, v[0]);
        ht.set(-j, v[1]);
    }
    ht
}

/// Cooper-Verner 8th-order explicit Runge-Kutta step for
/// `y' = f(t, y)` on complex state vectors (11 stages).
pub fn rk8_step(f: &impl Fn(f64, &[C]) -> Vec<C>, t: f64, y: &[C], dt: f64) -> Vec<C> {
    let s = 21f64.sqrt();
    let c: [f64; 11] = [
        0.0,
        0.5,
        0.5,
        (7.0 + s) / 14.0,
        (7.0 + s) / 14.0,
        0.5,
        (7.0 - s) / 14.0,
        (7.0 - s) / 14.0,
        0.5,
        (7.0 + s) / 14.0,
        1.0,
    ];
    let mut a = [[0.0f64; 10]; 11];
    a[1][0] = 0.5;
    a[2][0] = 0.25;
    a[2][1] = 0.25;
    a[3][0] = 1.0 / 7.0;
    a[3][1] = (-7.0 - 3.0 * s) / 98.0;
    a[3][2] = (21.0 + 5.0 * s) / 49.0;
    a[4][0] = (11.0 + s) / 84.0;
    a[4][2] = (18.0 + 4.0 * s) / 63.0;
    a[4][3] = (21.0 - s) / 252.0;
    a[5][0] = (5.0 + s) / 48.0;
    a[5][2] = (9.0 + s) / 36.0;
    a[5][3] = (-231.0 + 14.0 * s) / 360.0;
    a[5][4] = (63.0 - 7.0 * s) / 80.0;
    a[6][0] = (10.0 - s) / 42.0;
    a[6][2] = (-432.0 + 92.0 * s) / 315.0;
    a[6][3] = (633.0 - 145.0 * s) / 90.0;
    a[6][4] = (-504.0 + 115.0 * s) / 70.0;
    a[6][5] = (63.0 - 13.0 * s) / 35.0;
    a[7][0] = 1.0 / 14.0;
    a[7][4] = (14.0 - 3.0 * s) / 126.0;
    a[7][5] = (13.0 - 3.0 * s) / 63.0;
    a[7][6] = 1.0 / 9.0;
    a[8][0] = 1.0 / 32.0;
    a[8][4] = (91.0 - 21.0 * s) / 576.0;
    a[8][5] = 11.0 / 72.0;
    a[8][6] = (-385.0 - 75.0 * s) / 1152.0;
    a[8][7] = (63.0 + 13.0 * s) / 128.0;
    a[9][0] = 1.0 / 14.0;
    a[9][4] = 1.0 / 9.0;
    a[9][5] = (-733.0 - 147.0 * s) / 2205.0;
    a[9][6] = (515.0 + 111.0 * s) / 504.0;
    a[9][7] = (-51.0 - 11.0 * s) / 56.0;
    a[9][8] = (132.0 + 28.0 * s) / 245.0;
    a[10][4] = (-42.0 + 7.0 * s) / 18.0;
    a[10][5] = (-18.0 + 28.0 * s) / 45.0;
    a[10][6] = (-273.0 - 53.0 * s) / 72.0;
    a[10][7] = (301.0 + 53.0 * s) / 72.0;
    a[10][8] = (28.0 - 28.0 * s) / 45.0;
    a[10][9] = (49.0 - 7.0 * s) / 18.0;
    let b: [f64; 11] =
        [1.0 / 20.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 49.0 / 180.0, 16.0 / 45.0, 49.0 / 180.0, 1.0 / 20.0];

    let n = y.len();
    let mut k: Vec<Vec<C>> = Vec::with_capacity(11);
    for stage in 0..11 {
        let mut ys = y.to_vec();
        for (p, kp) in k.iter().enumerate() {
            let w = a[stage][p];
            if w != 0.0 {
                for i in 0..n {
                    ys[i] += dt * w * kp[i];
                }
            }
        }
        k.push(f(t + c[stage] * dt, &ys));
    }
    let mut out = y.to_vec();
    for (stage, kp) in k.iter().enumerate() {
        if b[stage] != 0.0 {
            for i in 0..n {
                out[i] += dt * b[stage] * kp[i];
            }
        }
    }
    out
}

/// Coefficients of `u_xx(phi, .)` at a fixed `phi`.
fn space_slice_xx(u: &SpaceTimeField, phi: &[f64]) -> SpaceField {
    let mut out = SpaceField::zero(u.j_max());
    let grid = u.grid();
    let mut buf: LBuf = [0; MAX_NU];
    for li in 0..grid.len() {
        let l = grid.decode(li, &mut buf);
        let phase: f64 = l.iter().zip(phi).map(|(&q, &p)| q as f64 * p).sum();
        let tw = C::from_polar(1.0, phase);
        for j in -u.j_max()..=u.j_max() {
            let c = u.get(li, j);
            if c.norm_sqr() > 0.0 {
                let cur = out.get(j);
                out.set(j, cur - (j as f64) * (j as f64) * c * tw);
            }
        }
    }
    out
}

/// Integrates the original-coordinates linearized flow
/// `d_t v = p`, `d_t p = a(w t) d_xx v - 2 eps u_xx(w t) <u_xx(w t), v>`
/// from `(v0, p0)` (zero-x-mean `p0`), sampling the mixed norm
/// `||v||_{H^s} + ||p||_{H^{s-1}}` on `t_grid`. Fails when the norm blows up
/// beyond 1e3 times its initial value (step-size instability).
#[allow(clippy::too_many_arguments)]
pub fn integrate_original(
    lin: &LinearizedOperator,
    eps: f64,
    state_u: &SpaceTimeField,
    v0: &SpaceField,
    p0: &SpaceField,
    t_grid: &[f64],
    dt: f64,
    s: f64,
) -> Result<Vec<FlowSnapshot>> {
    let ctx = &lin.ctx;
    let jm = v0.j_max();
    let n = (2 * jm + 1) as usize;
    let pack = |u: &SpaceField, p: &SpaceField| -> Vec<C> {
        let mut y = Vec::with_capacity(2 * n);
        for j in -jm..=jm {
            y.push(u.get(j));
        }
        for j in -jm..=jm {
            y.push(p.get(j));
        }
        y
    };
    let unpack = |y: &[C]| -> (SpaceField, SpaceField) {
        let mut u = SpaceField::zero(jm);
        let mut p = SpaceField::zero(jm);
        for (idx, j) in (-jm..=jm).enumerate() {
            u.set(j, y[idx]);
            p.set(j, y[n + idx]);
        }
        (u, p)
    };
    let omega = ctx.omega.clone();
    let a_fn = lin.a.clone();
    let state = state_u.clone();
    let force = move |t: f64, y: &[C]| -> Vec<C> {
        let phi: Vec<f64> = omega.iter().map(|w| w * t).collect();
        let a_val = a_fn.value_at(&phi).re;
        let uxx = space_slice_xx(&state, &phi);
        // <u_xx, v> = 2 pi sum_j uxx_j v_{-j}
        let mut bracket = C::ZERO;
        for (idx, j) in (-jm..=jm).enumerate() {
            bracket += uxx.get(-j) * y[idx];
        }
        bracket *= TWO_PI;
        let mut dy = vec![C::ZERO; 2 * n];
        for (idx, j) in (-jm..=jm).enumerate() {
            // d_t v = p
            dy[idx] = y[n + idx];
            // d_t p = a d_xx v + R_dyn v, zero mode excluded from the force
            if j != 0 {
                dy[n + idx] = -a_val * (j as f64) * (j as f64) * y[idx]
                    - 2.0 * eps * uxx.get(j) * bracket;
            } else {
                dy[n + idx] = C::ZERO;
            }
        }
        dy
    };
    let mut snaps = Vec::with_capacity(t_grid.len());
    let mut t = t_grid[0];
    let mut y = pack(v0, p0);
    let initial = {
        let (u, p) = unpack(&y);
        u.norm_hs(s) + p.norm_hs(s - 1.0)
    };
    for &target in t_grid {
        while t < target - 1e-13 {
            let step = dt.min(target - t);
            y = rk8_step(&force, t, &y, step);
            t += step;
        }
        let (u, p) = unpack(&y);
        let nu_ = u.norm_hs(s);
        let np = p.norm_hs(s - 1.0);
        if nu_ + np > 1e3 * initial.max(1e-300) {
            return Err(crate::error::Error::Divergence { step: snaps.len(), residual: nu_ + np });
        }
        snaps.push(FlowSnapshot { t, h_norm_s: f64::NAN, u_norm: nu_, psi_norm: np });
    }
    Ok(snaps)
}

/// Zero-mode flow `v_0(t) = v0 + p0 t`, `p_0(t) = p0` (closed form).
pub fn zero_mode_flow(v0: f64, p0: f64, t: f64) -> (f64, f64) {
    (v0 + p0 * t, p0)
}

/// Applies a Töplitz operator frozen at `phi` to a space function.
pub fn apply_at_phi(op: &ToeplitzOperator, phi: &[f64], h: &SpaceField) -> SpaceField {
    let mut out = SpaceField::zero(h.j_max());
    let grid = op.grid();
    let mut buf: LBuf = [0; MAX_NU];
    for li in 0..grid.len() {
        let l = grid.decode(li, &mut buf);
        let phase: f64 = l.iter().zip(phi).map(|(&q, &p)| q as f64 * p).sum();
        let tw = C::from_polar(1.0, phase);
        for j in 1..=h.j_max().min(op.j_max()) {
            let mut acc = [C::ZERO; 2];
            for jp in 1..=h.j_max().min(op.j_max()) {
                let b = op.block(li, j, jp);
                if b.is_zero() {
                    continue;
                }
                let v = b.apply([h.get(jp), h.get(-jp)]);
                acc[0] += v[0];
                acc[1] += v[1];
            }
            if acc[0].norm_sqr() + acc[1].norm_sqr() > 0.0 {
                out.set(j, out.get(j) + tw * acc[0]);
                out.set(-j, out.get(-j) + tw * acc[1]);
            }
        }
    }
    out
}

/// Paired operator at a frozen `phi`: `h -> P1(phi) h + P2(phi) conj(h)`.
pub fn apply_paired_at_phi(
    p1: &ToeplitzOperator,
    p2: &ToeplitzOperator,
    phi: &[f64],
    h: &SpaceField,
) -> SpaceField {
    let a = apply_at_phi(p1, phi, h);
    let b = apply_at_phi(p2, phi, &h.conj_field());
    let mut out = SpaceField::zero(h.j_max());
    for j in -h.j_max()..=h.j_max() {
        out.set(j, a.get(j) + b.get(j));
    }
    out
}

/// Maps a reduced-flow state to original coordinates at time `t`:
/// `(v, p)(t) = S(w t) B [ V(w s) Phi_inf(w s) h(s) ]` with the reparametrized
/// time `s = t + alpha(w t)`.
pub fn conjugate_reduced_state(
    reg: &RegularizationResult,
    fin: &FinalBlocks,
    h0: &SpaceField,
    t: f64,
    ctx: &FrequencyContext,
) -> (SpaceField, SpaceField) {
    let phi_t: Vec<f64> = ctx.omega.iter().map(|w| w * t).collect();
    let alpha_t = reg.trep.alpha.value_at(&phi_t).re;
    let s_time = t + alpha_t;
    let phi_s: Vec<f64> = ctx.omega.iter().map(|w| w * s_time).collect();
    // reduced state at the reparametrized time
    let hs = reduced_state_at(&fin.d_inf, h0, s_time);
    // Phi_inf(phi_s), factors applied right to left
    let mut z = hs;
    for f in fin.factors.iter().rev() {
        z = apply_paired_at_phi(&f.p1, &f.p2, &phi_s, &z);
    }
    // V(phi_s)
    z = apply_paired_at_phi(&reg.desc.v_fwd.p1, &reg.desc.v_fwd.p2, &phi_s, &z);
    // B: (z, conj z) -> (u, psi) = (sqrt2 Re z, sqrt2 Im z)
    let mut u = SpaceField::zero(z.j_max());
    let mut p = SpaceField::zero(z.j_max());
    let zc = z.conj_field();
    let s2 = 2f64.sqrt();
    for j in -z.j_max()..=z.j_max() {
        u.set(j, (z.get(j) + zc.get(j)) * (s2 / 2.0));
        p.set(j, (z.get(j) - zc.get(j)) * C::new(0.0, -s2 / 2.0));
    }
    // S(phi_t): u -> beta |D|^{-1/2} u, psi -> beta^{-1} |D|^{1/2} psi
    let beta_t = reg.sym.beta.value_at(&phi_t).re;
    for j in -u.j_max()..=u.j_max() {
        if j == 0 {
            u.set(0, C::ZERO);
            p.set(0, C::ZERO);
            continue;
        }
        let w = (j.abs() as f64).sqrt();
        u.set(j, u.get(j) * (beta_t / w));
        p.set(j, p.get(j) * (w / beta_t));
    }
    (u, p)
}



#[cfg(test)]
mod conjugation_tests {
    use super::*;
    use crate::kam::{reduce, KamParams};
    use crate::linearize::linearize;
    use crate::regularize::regularize;
    use num_complex::Complex64 as C;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn original_flow_matches_conjugated_reduced_flow() {
        // at a converged state, the trajectory predicted by pushing the exact
        // reduced flow through S B A V Phi_inf (with the reparametrized time
        // s = t + alpha(w t)) must agree with direct integration of the
        // original-coordinates flow from the same initial data
        let ctx = FrequencyContext::new(vec![1.465571], 5e-3, 0.5, 6, 8).unwrap();
        // a sizeable state, so the coefficient a - 1, the reparametrization
        // alpha and the descent generator are all far above roundoff and the
        // chain is genuinely exercised
        let eps = 0.02;
        let mut rng0 = ChaCha8Rng::seed_from_u64(77);
        let u = SpaceTimeField::random(ctx.field_grid(), ctx.j_max, 1.5, &mut rng0, true, true)
            .scale(1.2);
        let psi = SpaceTimeField::random(ctx.field_grid(), ctx.j_max, 1.5, &mut rng0, true, true)
            .scale(1.2);
        let state = crate::linearize::StatePair { u, psi, eps };
        let lin = linearize(&state, &ctx);
        let reg = regularize(&lin).unwrap();
        let (fin, _, _) = reduce(reg.m(), reg.r4(), &KamParams::new(ctx.gamma), &ctx).unwrap();
        // the chain must move things: the reparametrization is nontrivial
        assert!(reg.trep.alpha.c1_norm() > 1e-4, "state too small to exercise the chain");

        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let h0 = SpaceField::random(ctx.j_max / 2, 0.8, &mut rng, true);
        let mut h0w = SpaceField::zero(ctx.j_max);
        for j in -ctx.j_max / 2..=ctx.j_max / 2 {
            h0w.set(j, h0.get(j));
        }
        let t_grid: Vec<f64> = (0..=8).map(|k| k as f64 * 0.4).collect();
        // predicted trajectory through the conjugation
        let predicted: Vec<(SpaceField, SpaceField)> = t_grid
            .iter()
            .map(|&t| conjugate_reduced_state(&reg, &fin, &h0w, t, &ctx))
            .collect();
        // numeric integration from the predicted initial data
        let snaps = integrate_original(
            &lin,
            eps,
            &state.u,
            &predicted[0].0,
            &predicted[0].1,
            &t_grid,
            0.002,
            2.0,
        )
        .unwrap();
        let _ = snaps;
        // re-integrate keeping the states to compare mode by mode
        let mut worst = 0.0f64;
        {
            // manual re-run of the stepper to extract states at grid times
            let jm = ctx.j_max;
            let n = (2 * jm + 1) as usize;
            let mut y: Vec<C> = Vec::with_capacity(2 * n);
            for j in -jm..=jm {
                y.push(predicted[0].0.get(j));
            }
            for j in -jm..=jm {
                y.push(predicted[0].1.get(j));
            }
            let omega = ctx.omega.clone();
            let a_fn = lin.a.clone();
            let state_u = state.u.clone();
            let force = move |t: f64, y: &[C]| -> Vec<C> {
                let phi: Vec<f64> = omega.iter().map(|w| w * t).collect();
                let a_val = a_fn.value_at(&phi).re;
                let uxx = super::space_slice_xx(&state_u, &phi);
                let mut bracket = C::ZERO;
                for (idx, j) in (-jm..=jm).enumerate() {
                    bracket += uxx.get(-j) * y[idx];
                }
                bracket *= TWO_PI;
                let mut dy = vec![C::ZERO; 2 * n];
                for (idx, j) in (-jm..=jm).enumerate() {
                    dy[idx] = y[n + idx];
                    dy[n + idx] = if j != 0 {
                        -a_val * (j as f64) * (j as f64) * y[idx] - 2.0 * eps * uxx.get(j) * bracket
                    } else {
                        C::ZERO
                    };
                }
                dy
            };
            let dt = 0.002f64;
            let mut t = t_grid[0];
            for (k, &target) in t_grid.iter().enumerate() {
                while t < target - 1e-13 {
                    let step = dt.min(target - t);
                    y = rk8_step(&force, t, &y, step);
                    t += step;
                }
                // compare low modes against the prediction
                let (pu, pp) = &predicted[k];
                let mut num = 0.0f64;
                let mut den = 0.0f64;
                for (idx, j) in (-jm..=jm).enumerate() {
                    if j.abs() <= jm / 2 && j != 0 {
                        num += (y[idx] - pu.get(j)).norm_sqr() + (y[n + idx] - pp.get(j)).norm_sqr();
                        den += pu.get(j).norm_sqr() + pp.get(j).norm_sqr();
                    }
                }
                worst = worst.max((num / den.max(1e-300)).sqrt());
            }
        }
        println!("flow conjugation mismatch {worst:.3e}");
        assert!(worst < 1e-4, "flow conjugation mismatch {worst:.3e}");
    }
}
