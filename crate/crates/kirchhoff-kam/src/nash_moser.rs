//! Outer Newton iteration with smoothing projectors, the explicit zero-mode
//! solve, and the two inversion routes for the linearized operator: through
//! the reducibility conjugation (`W1 L_inf^{-1} W2^{-1}`) and through a dense
//! Galerkin factorization used as a cross-validation oracle.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::context::{FrequencyContext, LBuf, MAX_NU};
use crate::dense::{DenseLu, DenseMatrix};
use crate::diffeo::compose_field;
use crate::error::{Error, Result};
use crate::field::{SpaceTimeField, ToroidalFunction, TWO_PI};
use crate::kam::{check_cantor_membership, reduce, FinalBlocks, KamParams, StepReport};
use crate::linearize::{eval_f, kirchhoff_coefficient, linearize, LinearizedOperator, StatePair};
use crate::paired::PairField;
use crate::regularize::{regularize, RegularizationResult};

type C = Complex64;

/// Solves the zero-mode system `w.dphi v0 = p0`, `w.dphi p0 = eps f0`
/// explicitly: `p0 = eps (w.dphi)^{-1} f0`, `v0 = eps (w.dphi)^{-2} f0`.
/// Requires the space-time average of `f` to vanish.
pub fn solve_zero_mode(
    f: &SpaceTimeField,
    eps: f64,
    ctx: &FrequencyContext,
) -> Result<(ToroidalFunction, ToroidalFunction)> {
    let f0 = f.x_mean();
    let total_mean = f0.phi_average().norm();
    if total_mean > 1e-12 * (1.0 + f.max_abs()) {
        return Err(Error::MeanCondition(format!(
            "forcing must have zero space-time average; got {total_mean:.3e}"
        )));
    }
    let p0 = f0.scale(eps).inverse_omega_dphi(ctx, 1e-14)?;
    let v0 = p0.inverse_omega_dphi(ctx, 1e-14)?;
    Ok((v0, p0))
}

/// Residual of the zero-mode system for a candidate `(v0, p0)`.
pub fn zero_mode_residual(
    v0: &ToroidalFunction,
    p0: &ToroidalFunction,
    f: &SpaceTimeField,
    eps: f64,
    ctx: &FrequencyContext,
) -> f64 {
    let f0 = f.x_mean();
    let r1 = v0.omega_dphi(ctx).add(&p0.scale(-1.0));
    let r2 = p0.omega_dphi(ctx).add(&f0.scale(-eps));
    r1.sobolev_norm(0.0).max(r2.sobolev_norm(0.0))
}

/// Dense Galerkin factorization of the linearized operator on the field
/// truncation. The first block row (`w.dphi u - psi = r1`) is eliminated
/// exactly (it is diagonal), leaving the Schur system
/// `((w.dphi)^2 - a d_xx + R) u = r2 + w.dphi r1` of half the dimension; the
/// factorization of the full system and this elimination are the same direct
/// solve.
pub struct DenseOracle {
    lin: LinearizedOperator,
    lu: DenseLu,
    n: usize,
}

fn col_of(li: usize, j: i32, jm: i32) -> usize {
    let ncols = 2 * jm as usize;
    let jc = if j < 0 { (j + jm) as usize } else { (jm + j - 1) as usize };
    li * ncols + jc
}

impl DenseOracle {
    pub fn new(lin: &LinearizedOperator, cap: usize) -> Result<DenseOracle> {
        let ctx = &lin.ctx;
        let fg = ctx.field_grid();
        let jm = ctx.j_max;
        let n = fg.len() * 2 * jm as usize;
        if 2 * n > cap {
            return Err(Error::DimensionCap { dim: 2 * n, cap });
        }

        // remainder coefficients R_k^{k'}(dl) = 2 pi sum_mu q_k(dl - mu) g_{-k'}(mu)
        let og = ctx.op_grid();
        let nsigned = 2 * jm as usize;
        let sig = |k: i32| -> usize {
            if k < 0 {
                (k + jm) as usize
            } else {
                (jm + k - 1) as usize
            }
        };
        let mut rmat = vec![C::ZERO; og.len() * nsigned * nsigned];
        let qg = lin.q.grid();
        let gg = lin.g.grid();
        let mut bq: LBuf = [0; MAX_NU];
        let mut bg: LBuf = [0; MAX_NU];
        for lq in 0..qg.len() {
            qg.decode(lq, &mut bq);
            for lg in 0..gg.len() {
                gg.decode(lg, &mut bg);
                let mut d: LBuf = [0; MAX_NU];
                for k in 0..ctx.nu {
                    d[k] = bq[k] + bg[k];
                }
                let Some(dl) = og.index(&d[..ctx.nu]) else { continue };
                for k in (-jm..=jm).filter(|&k| k != 0) {
                    let qv = lin.q.get(lq, k);
                    if qv.norm_sqr() == 0.0 {
                        continue;
                    }
                    for kp in (-jm..=jm).filter(|&k| k != 0) {
                        let gv = lin.g.get(lg, -kp);
                        if gv.norm_sqr() == 0.0 {
                            continue;
                        }
                        rmat[(dl * nsigned + sig(k)) * nsigned + sig(kp)] += TWO_PI * qv * gv;
                    }
                }
            }
        }

        let mut m = DenseMatrix::zeros(n);
        let mut bo: LBuf = [0; MAX_NU];
        let mut bi: LBuf = [0; MAX_NU];
        for lo in 0..fg.len() {
            let lov = fg.decode(lo, &mut bo).to_vec();
            let wdot = ctx.omega_dot(&lov);
            for li in 0..fg.len() {
                fg.decode(li, &mut bi);
                let mut d: LBuf = [0; MAX_NU];
                for k in 0..ctx.nu {
                    d[k] = lov[k] - bi[k];
                }
                let dl = og.index(&d[..ctx.nu]).expect("difference stays on the operator grid");
                let a_c = lin.a.coeff(dl);
                for j in (-jm..=jm).filter(|&j| j != 0) {
                    let row = col_of(lo, j, jm);
                    // -a d_xx: +j^2 a(dl) on the same j
                    if a_c.norm_sqr() > 0.0 {
                        *m.at_mut(row, col_of(li, j, jm)) += (j as f64) * (j as f64) * a_c;
                    }
                    for jp in (-jm..=jm).filter(|&j| j != 0) {
                        let rv = rmat[(dl * nsigned + sig(j)) * nsigned + sig(jp)];
                        if rv.norm_sqr() > 0.0 {
                            *m.at_mut(row, col_of(li, jp, jm)) += rv;
                        }
                    }
                }
            }
            // (w.dphi)^2 diagonal
            for j in (-jm..=jm).filter(|&j| j != 0) {
                let row = col_of(lo, j, jm);
                *m.at_mut(row, row) += C::new(-wdot * wdot, 0.0);
            }
        }
        let lu = DenseLu::factor(m)?;
        Ok(DenseOracle { lin: lin.clone(), lu, n })
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    /// Solves `L h = rhs`; returns the solution and the verified relative
    /// residual of the full two-component system.
    pub fn solve(&self, rhs: &PairField) -> Result<(PairField, f64)> {
        let ctx = &self.lin.ctx;
        let fg = ctx.field_grid();
        let jm = ctx.j_max;
        // Schur right-hand side r2 + w.dphi r1
        let r2 = rhs.psi.add(&rhs.u.omega_dphi(ctx));
        let mut b = vec![C::ZERO; self.n];
        for li in 0..fg.len() {
            for j in (-jm..=jm).filter(|&j| j != 0) {
                b[col_of(li, j, jm)] = r2.get(li, j);
            }
        }
        let x = self.lu.solve(&b);
        let mut u = SpaceTimeField::zero(fg, jm);
        for li in 0..fg.len() {
            for j in (-jm..=jm).filter(|&j| j != 0) {
                u.set(li, j, x[col_of(li, j, jm)]);
            }
        }
        let psi = u.omega_dphi(ctx).sub(&rhs.u);
        let h = PairField { u, psi };
        let back = self.lin.apply(&h);
        let resid = back.sub(rhs).sobolev_norm(0.0);
        let denom = rhs.sobolev_norm(0.0).max(1e-300);
        let rel = resid / denom;
        if rel > 1e-10 {
            return Err(Error::Singular(rel));
        }
        Ok((h, rel))
    }
}

/// One-shot dense inversion.
pub fn invert_l_dense(
    lin: &LinearizedOperator,
    rhs: &PairField,
    cap: usize,
) -> Result<(PairField, f64)> {
    DenseOracle::new(lin, cap)?.solve(rhs)
}

/// Diagnostics of a reduced-path inversion.
#[derive(Debug, Clone, Serialize)]
pub struct InversionReport {
    /// `||L h - rhs||_{s0}` on the inner truncation over `||rhs||_{s0+2}`.
    pub relative_residual: f64,
    /// `gamma ||h||_{s0} / ||rhs||_{s0 + 2 tau + 1}`, the tame-estimate ratio.
    pub tame_ratio: f64,
    pub min_margin: f64,
    pub kam_steps: usize,
}

/// The conjugation route `h = W1 L_inf^{-1} W2^{-1} rhs`, built from one
/// regularization plus one reducibility run at a state.
pub struct ReducedInverter {
    pub lin: LinearizedOperator,
    pub reg: RegularizationResult,
    pub fin: FinalBlocks,
    pub kam_reports: Vec<StepReport>,
    pub min_margin: f64,
}

impl ReducedInverter {
    pub fn new(lin: &LinearizedOperator, kamp: &KamParams) -> Result<ReducedInverter> {
        let ctx = &lin.ctx;
        let (dm, dl) = ctx.diophantine_margin(2 * ctx.l_max);
        if dm < 1.0 {
            return Err(Error::NearResonant { value: ctx.omega_dot(&dl).abs(), l: dl });
        }
        let reg = regularize(lin)?;
        let (fin, kam_reports, _) = reduce(reg.m(), reg.r4(), kamp, ctx)?;
        // membership in the limiting non-resonance set, at the doubled gamma
        let worst = check_cantor_membership(&fin.d_inf, fin.m, ctx, 2 * ctx.l_max, 2.0 * kamp.gamma);
        if worst.value < 1.0 {
            return Err(worst.to_error());
        }
        Ok(ReducedInverter { lin: lin.clone(), reg, fin, kam_reports, min_margin: worst.value })
    }

    /// `L_inf^{-1}`: blockwise `h_j(l) = -i B(l,j)^{-1} r_j(l)` with
    /// `B = w.l I + D_j^inf`.
    fn l_inf_inverse(&self, r: &SpaceTimeField, ctx: &FrequencyContext) -> Result<SpaceTimeField> {
        let mut out = r.clone();
        let grid = r.grid();
        let mut buf: LBuf = [0; MAX_NU];
        for li in 0..grid.len() {
            let l = grid.decode(li, &mut buf).to_vec();
            let wl = ctx.omega_dot(&l);
            for j in 1..=r.j_max().min(self.fin.d_inf.j_max()) {
                let b = self.fin.d_inf.block(j).add(&crate::block::Block2x2::scalar(C::new(wl, 0.0)));
                let inv = b.inverse().ok_or_else(|| Error::NonResonance {
                    l: l.clone(),
                    j,
                    jp: 0,
                    margin: 0.0,
                })?;
                let v = inv.apply([r.get(li, j), r.get(li, -j)]);
                out.set(li, j, -C::new(0.0, 1.0) * v[0]);
                out.set(li, -j, -C::new(0.0, 1.0) * v[1]);
            }
            out.set(li, 0, C::ZERO);
        }
        Ok(out)
    }

    pub fn solve(&self, rhs: &PairField) -> Result<(PairField, InversionReport)> {
        let ctx = &self.lin.ctx;
        let og = ctx.op_grid();
        let jm = ctx.j_max;
        // W2^{-1} = Phi^{-1} V^{-1} rho^{-1} A^{-1} B^{-1} S^{-1}
        let wide = PairField {
            u: rhs.u.embedded(og, jm),
            psi: rhs.psi.embedded(og, jm),
        };
        let s_inv = self.reg.sym.apply_s_inv(&wide);
        let z = s_inv.to_complex();
        let az = compose_field(&z, &self.reg.trep.alpha_tilde, ctx)?;
        let rz = az.scale_by_toroidal(&self.reg.trep.rho_inv.embedded(og));
        let vz = self.reg.desc.v_inv.apply(&rz);
        let pz = self.fin.apply_phi_inf_inv(&vz);
        // L_inf^{-1}
        let sol = self.l_inf_inverse(&pz, ctx)?;
        // W1 = S B A V Phi
        let p1 = self.fin.apply_phi_inf(&sol);
        let v1 = self.reg.desc.v_fwd.apply(&p1);
        let a1 = compose_field(&v1, &self.reg.trep.alpha, ctx)?;
        let pair = PairField::from_complex(&a1);
        let h_wide = self.reg.sym.apply_s(&pair);
        let h = PairField {
            u: h_wide.u.embedded(ctx.field_grid(), jm),
            psi: h_wide.psi.embedded(ctx.field_grid(), jm),
        };
        // verification on the inner truncation
        let back = self.lin.apply(&h);
        let s0 = ctx.s0();
        let resid = back
            .sub(rhs)
            .inner_truncation(ctx.l_max / 2, ctx.j_max / 2)
            .sobolev_norm(s0);
        let denom = rhs.sobolev_norm(s0 + 2.0).max(1e-300);
        let report = InversionReport {
            relative_residual: resid / denom,
            tame_ratio: ctx.gamma * h.sobolev_norm(s0)
                / rhs.sobolev_norm(s0 + 2.0 * ctx.tau + 1.0).max(1e-300),
            min_margin: self.min_margin,
            kam_steps: self.kam_reports.len(),
        };
        Ok((h, report))
    }
}

/// One-shot reduced inversion.
pub fn invert_l_reduced(
    lin: &LinearizedOperator,
    rhs: &PairField,
    kamp: &KamParams,
) -> Result<(PairField, InversionReport)> {
    ReducedInverter::new(lin, kamp)?.solve(rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionPath {
    Reduced,
    DenseOracle,
}

/// Configuration of the Newton iteration. The schedule constants
/// `kappa = 6 mu1 + 19`, `b1 = 2 mu1 + 4 + kappa (1 + 1/chi) + 1` and
/// `a1 = kappa / chi - 2 mu1` are recomputed from `mu1`, never stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NashMoserConfig {
    pub n0: i32,
    pub chi: f64,
    /// Loss-of-derivatives proxy; enters only the diagnostic constants.
    pub mu1: f64,
    pub eps: f64,
    pub gamma: f64,
    pub max_steps: usize,
    pub residual_tol: f64,
    pub inversion: InversionPath,
    pub dense_cap: usize,
    /// Backtracking fallback when a full Newton step would increase the
    /// residual. Off by default: the plain scheme takes pure Newton steps,
    /// and enabling this changes the iterate sequence.
    pub line_search: bool,
}

impl NashMoserConfig {
    pub fn new(eps: f64, gamma: f64, tau: f64) -> Self {
        NashMoserConfig {
            n0: 8,
            chi: 1.5,
            mu1: 2.0 * tau + 4.0,
            eps,
            gamma,
            max_steps: 10,
            residual_tol: 1e-11,
            inversion: InversionPath::DenseOracle,
            dense_cap: 3000,
            line_search: false,
        }
    }

    pub fn kappa(&self) -> f64 {
        6.0 * self.mu1 + 19.0
    }

    pub fn b1(&self) -> f64 {
        2.0 * self.mu1 + 4.0 + self.kappa() * (1.0 + 1.0 / self.chi) + 1.0
    }

    pub fn a1(&self) -> f64 {
        self.kappa() / self.chi - 2.0 * self.mu1
    }

    pub fn n_schedule(&self, step: usize) -> i32 {
        (self.n0 as f64).powf(self.chi.powi(step as i32)).round() as i32
    }

    pub fn kam_params(&self) -> KamParams {
        KamParams::new(self.gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxSteps,
    Excluded,
    Diverged,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterateRecord {
    pub n: usize,
    pub residual_s0: f64,
    pub residual_high: f64,
    pub step_norm: f64,
    /// `||u_n||_{s0 + mu1}`, the smallness ansatz monitor (warned when > 1).
    pub ansatz_norm: f64,
    pub omega_excluded: bool,
    pub inversion_path: InversionPath,
}

pub fn iterate_records_csv(records: &[IterateRecord]) -> String {
    let mut out =
        String::from("n,residual_s0,residual_high,step_norm,ansatz_norm,omega_excluded,inversion_path\n");
    for r in records {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{},{}\n",
            r.n,
            r.residual_s0,
            r.residual_high,
            r.step_norm,
            r.ansatz_norm,
            r.omega_excluded,
            match r.inversion_path {
                InversionPath::Reduced => "reduced",
                InversionPath::DenseOracle => "dense_oracle",
            }
        ));
    }
    out
}

#[derive(Debug)]
pub struct NashMoserRun {
    pub records: Vec<IterateRecord>,
    pub state: StatePair,
    pub status: RunStatus,
    pub exclusion: Option<Error>,
}

/// The Newton loop `u_{n+1} = u_n - Pi_{n+1} L_n^{-1} Pi_{n+1} F(u_n)` with
/// `u_0 = 0`. Exclusions and divergence are reported in the run status with
/// the partial history retained.
pub fn nash_moser_iterate(
    f: &SpaceTimeField,
    cfg: &NashMoserConfig,
    ctx: &FrequencyContext,
) -> Result<NashMoserRun> {
    let f_perp = f.project_zero_x_mean();
    let s0 = ctx.s0();
    let mut state = StatePair::zero(ctx.field_grid(), ctx.j_max, cfg.eps);
    let mut records: Vec<IterateRecord> = Vec::new();
    let mut prev_residual = f64::INFINITY;
    for n in 0..=cfg.max_steps {
        let res = eval_f(&state, &f_perp, ctx);
        let r_s0 = res.sobolev_norm(s0);
        let ansatz_norm = state.u.sobolev_norm(s0 + cfg.mu1).max(state.psi.sobolev_norm(s0 + cfg.mu1));
        if ansatz_norm > 1.0 {
            eprintln!("warning: smallness ansatz violated at step {n}: ||u||_(s0+mu1) = {ansatz_norm:.3e}");
        }
        if r_s0 < cfg.residual_tol {
            records.push(IterateRecord {
                n,
                residual_s0: r_s0,
                residual_high: res.sobolev_norm(s0 + 2.0),
                step_norm: 0.0,
                ansatz_norm,
                omega_excluded: false,
                inversion_path: cfg.inversion,
            });
            return Ok(NashMoserRun { records, state, status: RunStatus::Converged, exclusion: None });
        }
        if r_s0 > 1.5 * prev_residual {
            return Ok(NashMoserRun { records, state, status: RunStatus::Diverged, exclusion: None });
        }
        if n == cfg.max_steps {
            return Ok(NashMoserRun { records, state, status: RunStatus::MaxSteps, exclusion: None });
        }
        prev_residual = r_s0;
        let lin = linearize(&state, ctx);
        let nn = cfg.n_schedule(n + 1);
        let rhs = PairField {
            u: res.u.smoothing_projector(nn),
            psi: res.psi.smoothing_projector(nn),
        };
        let solved = match cfg.inversion {
            InversionPath::DenseOracle => invert_l_dense(&lin, &rhs, cfg.dense_cap).map(|(h, _)| h),
            InversionPath::Reduced => {
                invert_l_reduced(&lin, &rhs, &cfg.kam_params()).map(|(h, _)| h)
            }
        };
        let h = match solved {
            Ok(h) => h,
            Err(e) if e.is_exclusion() => {
                records.push(IterateRecord {
                    n,
                    residual_s0: r_s0,
                    residual_high: res.sobolev_norm(s0 + 2.0),
                    step_norm: f64::NAN,
                    ansatz_norm,
                    omega_excluded: true,
                    inversion_path: cfg.inversion,
                });
                return Ok(NashMoserRun {
                    records,
                    state,
                    status: RunStatus::Excluded,
                    exclusion: Some(e),
                });
            }
            Err(e) => return Err(e),
        };
        let mut step = PairField {
            u: h.u.smoothing_projector(nn).scale(-1.0).real_part().project_zero_x_mean(),
            psi: h.psi.smoothing_projector(nn).scale(-1.0).real_part().project_zero_x_mean(),
        };
        if cfg.line_search {
            // backtracking halving, capped; leaves the pure Newton step alone
            // whenever it already decreases the residual
            let mut lambda = 1.0f64;
            for _ in 0..5 {
                let trial = StatePair {
                    u: state.u.add(&step.u.scale(lambda)),
                    psi: state.psi.add(&step.psi.scale(lambda)),
                    eps: cfg.eps,
                };
                if eval_f(&trial, &f_perp, ctx).sobolev_norm(s0) < r_s0 {
                    break;
                }
                lambda *= 0.5;
            }
            if lambda < 1.0 {
                step = step.scale(lambda);
            }
        }
        records.push(IterateRecord {
            n,
            residual_s0: r_s0,
            residual_high: res.sobolev_norm(s0 + 2.0),
            step_norm: step.sobolev_norm(s0),
            ansatz_norm,
            omega_excluded: false,
            inversion_path: cfg.inversion,
        });
        state = StatePair { u: state.u.add(&step.u), psi: state.psi.add(&step.psi), eps: cfg.eps };
    }
    unreachable!("loop returns from inside");
}

/// `(v, p) = (v0, p0) + (u, psi)`: the zero mode rides on the `j = 0` slice.
pub fn assemble_full_solution(
    state: &StatePair,
    v0: &ToroidalFunction,
    p0: &ToroidalFunction,
) -> PairField {
    PairField {
        u: state.u.add_toroidal_as_mean(v0),
        psi: state.psi.add_toroidal_as_mean(p0),
    }
}

/// Residual of the full first-order system
/// `(w.dphi v - p, w.dphi p - (1 + eps int |v_x|^2 dx) v_xx - eps f)`.
pub fn full_system_residual(
    vp: &PairField,
    f: &SpaceTimeField,
    eps: f64,
    ctx: &FrequencyContext,
) -> f64 {
    let a = kirchhoff_coefficient(&vp.u, eps, ctx);
    let r1 = vp.u.omega_dphi(ctx).sub(&vp.psi);
    let r2 = vp
        .psi
        .omega_dphi(ctx)
        .sub(&vp.u.xx_derivative().scale_by_toroidal(&a))
        .sub(&f.scale(eps));
    let s0 = ctx.s0();
    r1.sobolev_norm(s0).max(r2.sobolev_norm(s0))
}

/// Space-time averages of the assembled solution (must vanish exactly).
pub fn solution_means(vp: &PairField) -> (f64, f64) {
    (vp.u.x_mean().phi_average().norm(), vp.psi.x_mean().phi_average().norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::LGrid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx1() -> FrequencyContext {
        FrequencyContext::new(vec![1.465571], 5e-3, 0.5, 6, 8).unwrap()
    }

    fn cos_phi_cos_x(grid: LGrid, jm: i32) -> SpaceTimeField {
        let mut f = SpaceTimeField::zero(grid, jm);
        for (l, j) in [([1], 1), ([1], -1), ([-1], 1), ([-1], -1)] {
            f.set_at(&l, j, C::new(0.25, 0.0));
        }
        f
    }

    #[test]
    fn zero_mode_explicit_solution() {
        let c = ctx1();
        // f0 = cos(l.phi) on the j = 0 slice
        let mut f = SpaceTimeField::zero(c.field_grid(), c.j_max);
        f.set_at(&[2], 0, C::new(0.5, 0.0));
        f.set_at(&[-2], 0, C::new(0.5, 0.0));
        let eps = 1e-3;
        let (v0, p0) = solve_zero_mode(&f, eps, &c).unwrap();
        let wl = 2.0 * c.omega[0];
        for t in 0..7 {
            let phi = [0.543 * t as f64];
            let expect_p = eps * (2.0 * phi[0]).sin() / wl;
            let expect_v = -eps * (2.0 * phi[0]).cos() / (wl * wl);
            assert!((p0.value_at(&phi).re - expect_p).abs() < 1e-15);
            assert!((v0.value_at(&phi).re - expect_v).abs() < 1e-15);
        }
        assert!(zero_mode_residual(&v0, &p0, &f, eps, &c) < 1e-13);
        // zero phi-averages
        assert!(v0.phi_average().norm() == 0.0);
        assert!(p0.phi_average().norm() == 0.0);
        // zero f0 -> zero solution
        let z = cos_phi_cos_x(c.field_grid(), c.j_max);
        let (v0z, p0z) = solve_zero_mode(&z, eps, &c).unwrap();
        assert!(v0z.sobolev_norm(0.0) == 0.0 && p0z.sobolev_norm(0.0) == 0.0);
        // violated mean condition
        let mut bad = f.clone();
        bad.set_at(&[0], 0, C::new(1.0, 0.0));
        assert!(solve_zero_mode(&bad, eps, &c).is_err());
    }

    #[test]
    fn zero_mode_random_residual() {
        let c = ctx1();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut f = SpaceTimeField::random(c.field_grid(), c.j_max, 0.5, &mut rng, true, false);
        f.set_at(&[0], 0, C::ZERO);
        let (v0, p0) = solve_zero_mode(&f, 0.1, &c).unwrap();
        assert!(zero_mode_residual(&v0, &p0, &f, 0.1, &c) < 1e-12);
    }

    #[test]
    fn dense_constant_coefficient_closed_form() {
        // eps-free state: L has constant coefficients and the inverse divides
        // by (j^2 - (w.l)^2) after elimination
        let c = ctx1();
        let st = StatePair::zero(c.field_grid(), c.j_max, 1e-3);
        let lin = linearize(&st, &c);
        let oracle = DenseOracle::new(&lin, 3000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rhs = PairField {
            u: SpaceTimeField::random(c.field_grid(), c.j_max, 0.6, &mut rng, true, true),
            psi: SpaceTimeField::random(c.field_grid(), c.j_max, 0.6, &mut rng, true, true),
        };
        let (h, rel) = oracle.solve(&rhs).unwrap();
        assert!(rel < 1e-10, "dense residual {rel}");
        let fg = c.field_grid();
        let mut buf: LBuf = [0; MAX_NU];
        for li in 0..fg.len() {
            let l = fg.decode(li, &mut buf).to_vec();
            let wl = c.omega_dot(&l);
            for j in (-c.j_max..=c.j_max).filter(|&j| j != 0) {
                let expect_u = (rhs.psi.get(li, j) + C::new(0.0, wl) * rhs.u.get(li, j))
                    / C::new((j * j) as f64 - wl * wl, 0.0);
                assert!((h.u.get(li, j) - expect_u).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn dense_inverse_roundtrip_on_random_state() {
        let c = ctx1();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = SpaceTimeField::random(c.field_grid(), c.j_max, 0.8, &mut rng, true, true);
        let psi = SpaceTimeField::random(c.field_grid(), c.j_max, 0.8, &mut rng, true, true);
        let st = StatePair { u, psi, eps: 1e-3 };
        let lin = linearize(&st, &c);
        let oracle = DenseOracle::new(&lin, 3000).unwrap();
        let rhs = PairField {
            u: SpaceTimeField::random(c.field_grid(), c.j_max, 0.6, &mut rng, true, true),
            psi: SpaceTimeField::random(c.field_grid(), c.j_max, 0.6, &mut rng, true, true),
        };
        let (_, rel) = oracle.solve(&rhs).unwrap();
        assert!(rel < 1e-10, "residual {rel}");
        // dimension cap is enforced
        assert!(matches!(DenseOracle::new(&lin, 10), Err(Error::DimensionCap { .. })));
    }

    #[test]
    fn reduced_and_dense_inversions_agree() {
        let c = ctx1();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = SpaceTimeField::random(c.field_grid(), c.j_max, 1.0, &mut rng, true, true);
        let psi = SpaceTimeField::random(c.field_grid(), c.j_max, 1.0, &mut rng, true, true);
        let st = StatePair { u, psi, eps: 1e-5 };
        let lin = linearize(&st, &c);
        let mut kamp = KamParams::new(c.gamma);
        kamp.n0 = 4;
        kamp.stop_tol = 1e-13;
        let inverter = ReducedInverter::new(&lin, &kamp).unwrap();
        let oracle = DenseOracle::new(&lin, 3000).unwrap();
        // right-hand side well inside the truncation
        let rhs_u = SpaceTimeField::random(c.field_grid(), c.j_max, 1.0, &mut rng, true, true)
            .inner_truncation(c.l_max / 2, c.j_max / 2);
        let rhs_psi = SpaceTimeField::random(c.field_grid(), c.j_max, 1.0, &mut rng, true, true)
            .inner_truncation(c.l_max / 2, c.j_max / 2);
        let rhs = PairField { u: rhs_u, psi: rhs_psi };
        let (h_red, report) = inverter.solve(&rhs).unwrap();
        let (h_den, _) = oracle.solve(&rhs).unwrap();
        let diff = h_red.sub(&h_den).sobolev_norm(0.0) / h_den.sobolev_norm(0.0);
        assert!(diff < 1e-6, "reduced/dense disagreement {diff:.3e}");
        assert!(report.relative_residual < 1e-6, "residual {:.3e}", report.relative_residual);
    }

    #[test]
    fn reduced_inversion_constant_coefficient_oracle() {
        // eps = 0: the regularization is trivial and the reduced inverse has
        // the coefficient-wise divisor form u = (r2 + i w.l r1)/(j^2 - (w.l)^2)
        let c = ctx1();
        let st = StatePair::zero(c.field_grid(), c.j_max, 0.0);
        let lin = linearize(&st, &c);
        let mut kamp = KamParams::new(c.gamma);
        kamp.n0 = 4;
        let inverter = ReducedInverter::new(&lin, &kamp).unwrap();
        // zero right-hand side maps to zero
        let zero = PairField::zero(c.field_grid(), c.j_max);
        let (h0, _) = inverter.solve(&zero).unwrap();
        assert!(h0.max_abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let rhs = PairField {
            u: SpaceTimeField::random(c.field_grid(), c.j_max, 0.8, &mut rng, true, true),
            psi: SpaceTimeField::random(c.field_grid(), c.j_max, 0.8, &mut rng, true, true),
        };
        let (h, _) = inverter.solve(&rhs).unwrap();
        let fg = c.field_grid();
        let mut buf: LBuf = [0; MAX_NU];
        for li in 0..fg.len() {
            let l = fg.decode(li, &mut buf).to_vec();
            let wl = c.omega_dot(&l);
            for j in (-c.j_max..=c.j_max).filter(|&j| j != 0) {
                let expect = (rhs.psi.get(li, j) + C::new(0.0, wl) * rhs.u.get(li, j))
                    / C::new((j * j) as f64 - wl * wl, 0.0);
                assert!(
                    (h.u.get(li, j) - expect).norm() < 1e-9 * (1.0 + expect.norm()),
                    "l={l:?} j={j}: {} vs {expect}",
                    h.u.get(li, j)
                );
            }
        }
    }

    #[test]
    fn newton_zero_forcing_stays_zero() {
        let c = ctx1();
        let f = SpaceTimeField::zero(c.field_grid(), c.j_max);
        let cfg = NashMoserConfig::new(1e-3, 0.1, c.tau);
        let run = nash_moser_iterate(&f, &cfg, &c).unwrap();
        assert_eq!(run.status, RunStatus::Converged);
        assert!(run.state.u.max_abs() == 0.0);
        assert_eq!(run.records.len(), 1);
    }

    #[test]
    fn newton_converges_quadratically_on_single_mode() {
        let c = ctx1();
        let f = cos_phi_cos_x(c.field_grid(), c.j_max);
        let mut cfg = NashMoserConfig::new(1e-3, 1e-1, c.tau);
        cfg.residual_tol = 1e-11;
        cfg.max_steps = 8;
        let run = nash_moser_iterate(&f, &cfg, &c).unwrap();
        assert_eq!(run.status, RunStatus::Converged, "records: {:?}", run.records);
        let final_res = run.records.last().unwrap().residual_s0;
        assert!(final_res < 1e-11);
        assert!(run.records.len() <= 6, "too many steps: {}", run.records.len());
        // quadratic signature: residual roughly squares once small
        let rs: Vec<f64> = run.records.iter().map(|r| r.residual_s0).collect();
        for w in rs.windows(2) {
            if w[0] < 1e-3 && w[1] > 1e-14 {
                assert!(w[1] <= 20.0 * w[0] * w[0] / rs[0], "not quadratic: {rs:?}");
            }
        }
        // amplitude scale O(eps)
        let amp = run.state.u.sobolev_norm(c.s0());
        assert!(amp < 10.0 * cfg.eps && amp > 1e-2 * cfg.eps, "amplitude {amp}");
        // assembled solution: here f has zero x-mean so (v,p) = (u,psi)
        let (v0, p0) = solve_zero_mode(&f, cfg.eps, &c).unwrap();
        let vp = assemble_full_solution(&run.state, &v0, &p0);
        let full = full_system_residual(&vp, &f, cfg.eps, &c);
        assert!(full < 1e-8, "full residual {full}");
        let (mv, mp) = solution_means(&vp);
        assert!(mv == 0.0 && mp == 0.0);
    }

    #[test]
    fn three_frequency_solve_converges() {
        // smoke coverage of the multi-index paths at nu = 3
        let c = FrequencyContext::new(vec![1.465571, 2.236068, 3.302776], 1e-3, 0.5, 2, 3).unwrap();
        let mut f = SpaceTimeField::zero(c.field_grid(), c.j_max);
        for l1 in [-1i32, 1] {
            for j in [-1i32, 1] {
                f.set_at(&[l1, 0, 0], j, C::new(0.25, 0.0));
            }
        }
        let mut cfg = NashMoserConfig::new(1e-3, c.gamma, c.tau);
        cfg.residual_tol = 1e-11;
        cfg.dense_cap = 4000;
        let run = nash_moser_iterate(&f, &cfg, &c).unwrap();
        assert_eq!(run.status, RunStatus::Converged, "{:?}", run.records);
        assert!(run.state.u.sobolev_norm(c.s0()) > 0.0);
    }

    #[test]
    fn zero_mode_and_zero_mean_decouple_exactly() {
        // forcing with both a space-mean part and a zero-mean part: the
        // assembled residual is exactly the max of the two subproblem
        // residuals (no cross terms)
        let c = ctx1();
        let eps = 1e-3;
        let mut f = cos_phi_cos_x(c.field_grid(), c.j_max);
        // add a mean component with zero space-time average
        f.set_at(&[2], 0, C::new(0.35, 0.0));
        f.set_at(&[-2], 0, C::new(0.35, 0.0));
        let mut cfg = NashMoserConfig::new(eps, 0.1, c.tau);
        cfg.residual_tol = 1e-12;
        let run = nash_moser_iterate(&f, &cfg, &c).unwrap();
        assert_eq!(run.status, RunStatus::Converged);
        let (v0, p0) = solve_zero_mode(&f, eps, &c).unwrap();
        assert!(v0.sobolev_norm(0.0) > 0.0);
        let vp = assemble_full_solution(&run.state, &v0, &p0);
        let full = full_system_residual(&vp, &f, eps, &c);
        let perp = run.records.last().unwrap().residual_s0;
        let zm = zero_mode_residual(&v0, &p0, &f, eps, &c);
        assert!(full <= perp.max(zm) + 1e-14, "cross-residual appeared: {full} vs {perp}, {zm}");
        let (mv, mp) = solution_means(&vp);
        assert!(mv == 0.0 && mp == 0.0);
    }

    #[test]
    fn line_search_flag_still_converges() {
        let c = ctx1();
        let f = cos_phi_cos_x(c.field_grid(), c.j_max);
        let mut cfg = NashMoserConfig::new(1e-3, 1e-1, c.tau);
        cfg.line_search = true;
        let run = nash_moser_iterate(&f, &cfg, &c).unwrap();
        assert_eq!(run.status, RunStatus::Converged);
    }

    #[test]
    fn config_constants_identities() {
        let cfg = NashMoserConfig::new(1e-3, 0.1, 2.5);
        let mu1 = cfg.mu1;
        assert_eq!(cfg.kappa(), 6.0 * mu1 + 19.0);
        assert_eq!(cfg.b1(), 2.0 * mu1 + 4.0 + cfg.kappa() * (1.0 + 2.0 / 3.0) + 1.0);
        assert_eq!(cfg.a1(), cfg.kappa() * 2.0 / 3.0 - 2.0 * mu1);
    }
}
