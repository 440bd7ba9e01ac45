//! Quadratic reducibility of `L0 = w.dphi I2 + i m T |D| + R0` to a
//! time-independent 2x2 block-diagonal operator `L_inf = w.dphi I2 + D_inf`.
//!
//! Each step solves the homological equation
//!
//! `w.dphi Psi + [D, Psi] + Pi_N R = [R]`
//!
//! blockwise through the 4x4 systems `A^-(l,j,j') = w.l I + M_L(D_j) - M_R(D_j')`
//! and `A^+(l,j,j') = w.l I + M_L(D_j) + M_R(conj D_j')`, conjugates by
//! `Phi = exp(Psi)`, absorbs `[R]` into the new diagonal blocks, and keeps the
//! quadratically smaller remainder
//!
//! `R_+ = (Phi^{-1} - I)[R] + Phi^{-1}(Pi_N^bot R + w.dphi Psi_{>=2}
//!        + [D, Psi_{>=2}] + R (Phi - I))`.
//!
//! Non-resonance margins are normalized so that admissibility means
//! `margin >= 1`; a violated margin aborts the step and surfaces the offending
//! index as structured data for the measure estimation.

use num_complex::Complex64;
use serde::Serialize;

use crate::block::{hermitian_divisors, homological_matrix, Block2x2};
use crate::context::{angle_l, FrequencyContext, LBuf, LGrid, MAX_NU};
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::paired::{paired_exp, PairedOperator};
use crate::toeplitz::{BlockDiagonal, ToeplitzOperator};

type C = Complex64;

const I: C = C::new(0.0, 1.0);

/// Diagonal block at `j`, extrapolated as the pure dispersion `m j I_j` beyond
/// the stored truncation.
pub fn block_or_dispersion(d: &BlockDiagonal, m: f64, j: i32) -> Block2x2 {
    if j >= 1 && j <= d.j_max() {
        *d.block(j)
    } else {
        Block2x2::scalar(C::new(m * j as f64, 0.0))
    }
}

/// Normalized second-Melnikov margin at one index:
/// `sigma_min(A^±) <l>^tau / (gamma <j -+ j'>)`, computed through the exact
/// eigenvalue splitting of `M_L ± M_R` for self-adjoint blocks.
#[allow(clippy::too_many_arguments)]
pub fn second_melnikov_margin(
    w_dot_l: f64,
    l_angle: f64,
    dj: &Block2x2,
    djp: &Block2x2,
    j: i32,
    jp: i32,
    gamma: f64,
    tau: f64,
    plus: bool,
) -> f64 {
    let divisors = hermitian_divisors(w_dot_l, dj, djp, plus);
    let sigma = divisors.iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min);
    let denom = if plus { (j + jp).max(1) } else { (j - jp).abs().max(1) } as f64;
    sigma * l_angle.powf(tau) / (gamma * denom)
}

/// Normalized first-Melnikov margin `sigma_min(w.l I_j + D_j) <l>^tau / (2 gamma j)`.
pub fn first_melnikov_margin(
    w_dot_l: f64,
    l_angle: f64,
    dj: &Block2x2,
    j: i32,
    gamma: f64,
    tau: f64,
) -> f64 {
    let eigs = dj.hermitian_eigenvalues();
    let sigma = eigs.iter().map(|e| (w_dot_l + e).abs()).fold(f64::INFINITY, f64::min);
    sigma * l_angle.powf(tau) / (2.0 * gamma * j.max(1) as f64)
}

/// Worst margin found by a scan, with its index.
#[derive(Debug, Clone, Serialize)]
pub struct WorstMargin {
    pub value: f64,
    pub l: Vec<i32>,
    pub j: i32,
    pub jp: i32,
    pub kind: String,
}

impl WorstMargin {
    fn trivial() -> Self {
        WorstMargin { value: f64::INFINITY, l: vec![], j: 0, jp: 0, kind: "none".into() }
    }

    fn update(&mut self, value: f64, l: &[i32], j: i32, jp: i32, kind: &str) {
        if value < self.value {
            *self = WorstMargin { value, l: l.to_vec(), j, jp, kind: kind.into() };
        }
    }

    pub fn to_error(&self) -> Error {
        Error::NonResonance { l: self.l.clone(), j: self.j, jp: self.jp, margin: self.value }
    }
}

/// Scans all second-order conditions `|l| <= n_scan`, `j, j' <= j_max` (with
/// `(0, j, j)` excluded from the difference family) and the first-order
/// conditions on `B(l, j) = w.l I_j + D_j`, returning the worst margin.
pub fn check_cantor_membership(
    d: &BlockDiagonal,
    m: f64,
    ctx: &FrequencyContext,
    n_scan: i32,
    gamma: f64,
) -> WorstMargin {
    let grid = LGrid::new(ctx.nu, n_scan);
    let mut worst = WorstMargin::trivial();
    let mut buf: LBuf = [0; MAX_NU];
    for li in 0..grid.len() {
        let l = grid.decode(li, &mut buf).to_vec();
        let wl = ctx.omega_dot(&l);
        let la = angle_l(&l);
        let l_is_zero = l.iter().all(|&c| c == 0);
        for j in 1..=d.j_max() {
            let dj = block_or_dispersion(d, m, j);
            worst.update(
                first_melnikov_margin(wl, la, &dj, j, gamma, ctx.tau),
                &l,
                j,
                0,
                "first",
            );
            for jp in 1..=d.j_max() {
                let djp = block_or_dispersion(d, m, jp);
                if !(l_is_zero && j == jp) {
                    worst.update(
                        second_melnikov_margin(wl, la, &dj, &djp, j, jp, gamma, ctx.tau, false),
                        &l,
                        j,
                        jp,
                        "second-",
                    );
                }
                worst.update(
                    second_melnikov_margin(wl, la, &dj, &djp, j, jp, gamma, ctx.tau, true),
                    &l,
                    j,
                    jp,
                    "second+",
                );
            }
        }
    }
    worst
}

/// Parameters of the reducibility iteration.
#[derive(Debug, Clone, Serialize)]
pub struct KamParams {
    pub n0: i32,
    pub chi: f64,
    pub gamma: f64,
    pub max_steps: usize,
    /// Stop once `|R_nu |D||_{s0}` falls below this.
    pub stop_tol: f64,
    pub exp_tol: f64,
    /// Verify the homological residual after each solve (costs one pass).
    pub verify: bool,
    /// Compose the full transformation `Phi_inf` as an operator (needed only
    /// for operator-level conjugation checks; applications use the factors).
    pub assemble_transform: bool,
}

impl KamParams {
    pub fn new(gamma: f64) -> Self {
        KamParams {
            n0: 8,
            chi: 1.5,
            gamma,
            max_steps: 12,
            stop_tol: 1e-12,
            exp_tol: 1e-14,
            verify: true,
            assemble_transform: false,
        }
    }

    /// `N_nu = round(N0^{chi^nu})`, the super-exponential truncation schedule.
    pub fn n_schedule(&self, step: usize) -> i32 {
        (self.n0 as f64).powf(self.chi.powi(step as i32)).round() as i32
    }

    /// Remainder decay exponents `a = 6 tau + 4`, `b = a + 1` (diagnostic).
    pub fn decay_exponents(&self, tau: f64) -> (f64, f64) {
        let a = 6.0 * tau + 4.0;
        (a, a + 1.0)
    }
}

/// State of the iteration after `step` conjugations.
#[derive(Debug, Clone)]
pub struct ReducibilityState {
    pub step: usize,
    pub m: f64,
    pub d_blocks: BlockDiagonal,
    pub remainder: PairedOperator,
    pub omega_ok: bool,
}

/// Per-step convergence record (one CSV row).
#[derive(Debug, Clone, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub n_nu: i32,
    pub r_norm_s0: f64,
    pub r_d_norm_s0: f64,
    pub psi_d_norm_s0: f64,
    pub min_margin: f64,
    pub hom_residual: f64,
    pub wall_ms: f64,
}

pub fn step_reports_csv(reports: &[StepReport]) -> String {
    step_reports_csv_opts(reports, true)
}

/// CSV without the wall-time column; reruns with the same seed produce
/// byte-identical output.
pub fn step_reports_csv_deterministic(reports: &[StepReport]) -> String {
    step_reports_csv_opts(reports, false)
}

fn step_reports_csv_opts(reports: &[StepReport], timing: bool) -> String {
    let mut out =
        String::from("step,n_nu,r_norm_s0,r_d_norm_s0,psi_d_norm_s0,min_margin,hom_residual");
    out.push_str(if timing { ",wall_ms\n" } else { "\n" });
    for r in reports {
        out.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e},{:e}",
            r.step, r.n_nu, r.r_norm_s0, r.r_d_norm_s0, r.psi_d_norm_s0, r.min_margin,
            r.hom_residual
        ));
        if timing {
            out.push_str(&format!(",{:.3}", r.wall_ms));
        }
        out.push('\n');
    }
    out
}

/// Solves the homological equation blockwise for `|l| <= n`. Fails with the
/// offending index when a margin drops below 1.
pub fn solve_homological(
    d: &BlockDiagonal,
    r: &PairedOperator,
    n: i32,
    ctx: &FrequencyContext,
    gamma: f64,
) -> Result<PairedOperator> {
    let grid = r.grid();
    let jm = r.j_max();
    debug_assert!(d.is_selfadjoint(1e-10));
    let mut psi = PairedOperator::zero(grid, jm);
    let mut buf: LBuf = [0; MAX_NU];
    for li in 0..grid.len() {
        if grid.sup_norm(li) > n {
            continue;
        }
        let l = grid.decode(li, &mut buf).to_vec();
        let wl = ctx.omega_dot(&l);
        let la = angle_l(&l);
        let l_is_zero = l.iter().all(|&c| c == 0);
        for j in 1..=jm {
            let dj = *d.block(j);
            for jp in 1..=jm {
                let djp = *d.block(jp);
                // difference family, skipping the normalized (0, j, j) block
                if !(l_is_zero && j == jp) {
                    let b1 = r.p1.block(li, j, jp);
                    if !b1.is_zero() {
                        let margin =
                            second_melnikov_margin(wl, la, &dj, &djp, j, jp, gamma, ctx.tau, false);
                        if margin < 1.0 {
                            return Err(Error::NonResonance { l, j, jp, margin });
                        }
                        let mat = homological_matrix(wl, &dj, &djp, false);
                        let rhs = b1.scale(I);
                        let x = mat.solve(&rhs).ok_or(Error::Singular(0.0))?;
                        *psi.p1.block_mut(li, j, jp) = x;
                    }
                }
                // sum family
                let b2 = r.p2.block(li, j, jp);
                if !b2.is_zero() {
                    let margin =
                        second_melnikov_margin(wl, la, &dj, &djp, j, jp, gamma, ctx.tau, true);
                    if margin < 1.0 {
                        return Err(Error::NonResonance { l, j, jp, margin });
                    }
                    let mat = homological_matrix(wl, &dj, &djp, true);
                    let rhs = b2.scale(I);
                    let x = mat.solve(&rhs).ok_or(Error::Singular(0.0))?;
                    *psi.p2.block_mut(li, j, jp) = x;
                }
            }
        }
    }
    // the solution of a Hamiltonian right-hand side is Hamiltonian; the paired
    // blockwise solves only match to roundoff, so restore the structure exactly
    Ok(psi.hamiltonian_part())
}

/// Max block norm of `w.dphi Psi + [D, Psi] + Pi_N R - [R]` (restricted to
/// `|l| <= n`, where the equation is posed).
pub fn homological_residual(
    d: &BlockDiagonal,
    r: &PairedOperator,
    psi: &PairedOperator,
    n: i32,
    ctx: &FrequencyContext,
) -> f64 {
    let lhs = psi
        .omega_dphi(ctx)
        .add(&psi.diag_commutator(d))
        .add(&r.truncate_time(n))
        .sub(&r.block_diag_op());
    lhs.truncate_time(n).max_abs()
}

/// One reducibility step.
pub fn kam_step(
    state: &ReducibilityState,
    params: &KamParams,
    ctx: &FrequencyContext,
) -> Result<(ReducibilityState, StepReport, PairedOperator, PairedOperator)> {
    let t0 = std::time::Instant::now();
    let n = params.n_schedule(state.step);
    let r = &state.remainder;
    let psi = solve_homological(&state.d_blocks, r, n, ctx, params.gamma)?;
    let hom_residual = if params.verify {
        homological_residual(&state.d_blocks, r, &psi, n, ctx)
    } else {
        f64::NAN
    };
    let e = paired_exp(&psi, params.exp_tol, 60)?;
    let id = PairedOperator::identity(r.grid(), r.j_max());

    // new diagonal: D_j^+ = D_j + R^{(1)}_j^j(0) with R^{(1)} = -i p1
    let mut d_next = state.d_blocks.clone();
    let corr = r.p1.block_diag_part();
    for j in 1..=d_next.j_max() {
        let add = corr.block(j).scale(-I);
        *d_next.block_mut(j) = d_next.block(j).add(&add);
        // the correction of a Hamiltonian remainder is self-adjoint; keep the
        // stored blocks exactly Hermitian against roundoff drift
        let b = *d_next.block(j);
        *d_next.block_mut(j) = b.add(&b.adjoint()).scale(C::new(0.5, 0.0));
    }

    // remainder update
    let diag_part = corr; // blocks of [R] in stored (p1) form
    let diag_conj = BlockDiagonal::new(diag_part.blocks().iter().map(|b| b.conj_paired()).collect());
    let phi_inv_minus = e.inverse.sub(&id);
    let first_term = PairedOperator {
        p1: phi_inv_minus.p1.diag_right(&diag_part),
        p2: phi_inv_minus.p2.diag_right(&diag_conj),
    };
    let psi_ge2 = e.forward.sub(&id).sub(&psi);
    let tail = r.sub(&r.truncate_time(n));
    let bracket = tail
        .add(&psi_ge2.omega_dphi(ctx))
        .add(&psi_ge2.diag_commutator(&state.d_blocks))
        .add(&r.compose(&e.forward.sub(&id)));
    let r_next = first_term.add(&e.inverse.compose(&bracket));

    let s0 = ctx.s0();
    let report = StepReport {
        step: state.step,
        n_nu: n,
        r_norm_s0: r.decay_norm(s0),
        r_d_norm_s0: r.decay_norm_d(s0),
        psi_d_norm_s0: psi.decay_norm_d(s0),
        min_margin: f64::NAN,
        hom_residual,
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
    };
    let next = ReducibilityState {
        step: state.step + 1,
        m: state.m,
        d_blocks: d_next,
        remainder: r_next,
        omega_ok: true,
    };
    Ok((next, report, e.forward, e.inverse))
}

/// The limit objects of a completed reduction.
#[derive(Debug, Clone)]
pub struct FinalBlocks {
    pub m: f64,
    pub d_inf: BlockDiagonal,
    /// Conjugation factors `Phi_0, Phi_1, ...`; `Phi_inf = Phi_0 . Phi_1 ...`.
    pub factors: Vec<PairedOperator>,
    pub factors_inv: Vec<PairedOperator>,
    /// Assembled `Phi_inf` (and inverse) when requested.
    pub phi_inf: Option<PairedOperator>,
    pub phi_inf_inv: Option<PairedOperator>,
}

impl FinalBlocks {
    /// `Phi_inf h = Phi_0 (Phi_1 (... h))`: factors applied right to left.
    pub fn apply_phi_inf(&self, h: &SpaceTimeField) -> SpaceTimeField {
        let mut out = h.clone();
        for f in self.factors.iter().rev() {
            out = f.apply(&out);
        }
        out
    }

    /// `Phi_inf^{-1} h = ... (Phi_1^{-1} (Phi_0^{-1} h))`.
    pub fn apply_phi_inf_inv(&self, h: &SpaceTimeField) -> SpaceTimeField {
        let mut out = h.clone();
        for f in &self.factors_inv {
            out = f.apply(&out);
        }
        out
    }

    /// `sup_j j ||D_j^inf - m j I_j||`.
    pub fn dispersion_deviation(&self) -> f64 {
        self.d_inf.dispersion_deviation(self.m)
    }
}

/// Runs the iteration until the weighted remainder norm drops below
/// `params.stop_tol`, the schedule is exhausted, or the remainder grows twice
/// in a row (divergence). A non-resonance violation aborts with the offending
/// index.
pub fn reduce(
    m: f64,
    r0: &PairedOperator,
    params: &KamParams,
    ctx: &FrequencyContext,
) -> Result<(FinalBlocks, Vec<StepReport>, ReducibilityState)> {
    let jm = r0.j_max();
    let mut state = ReducibilityState {
        step: 0,
        m,
        d_blocks: BlockDiagonal::dispersion(m, jm),
        remainder: r0.clone(),
        omega_ok: true,
    };
    let mut reports = Vec::new();
    let mut factors = Vec::new();
    let mut factors_inv = Vec::new();
    let mut phi_inf = params.assemble_transform.then(|| PairedOperator::identity(r0.grid(), jm));
    let mut phi_inf_inv = params.assemble_transform.then(|| PairedOperator::identity(r0.grid(), jm));
    let s0 = ctx.s0();
    let mut grows = 0usize;
    let mut last = state.remainder.decay_norm_d(s0);
    while state.step < params.max_steps && state.remainder.decay_norm_d(s0) > params.stop_tol {
        let (next, report, phi, phi_inv) = kam_step(&state, params, ctx)?;
        if let Some(acc) = phi_inf.as_mut() {
            *acc = acc.compose(&phi);
        }
        if let Some(acc) = phi_inf_inv.as_mut() {
            *acc = phi_inv.compose(acc);
        }
        factors.push(phi);
        factors_inv.push(phi_inv);
        reports.push(report);
        let now = next.remainder.decay_norm_d(s0);
        if now > last {
            grows += 1;
            if grows >= 2 {
                return Err(Error::Divergence { step: next.step, residual: now });
            }
        } else {
            grows = 0;
        }
        last = now;
        state = next;
    }
    let fin = FinalBlocks {
        m,
        d_inf: state.d_blocks.clone(),
        factors,
        factors_inv,
        phi_inf,
        phi_inf_inv,
    };
    Ok((fin, reports, state))
}

/// Applies `L0 = w.dphi + i m |D| + R0` (first component) to a field.
pub fn l0_apply(
    m: f64,
    r0: &PairedOperator,
    h: &SpaceTimeField,
    ctx: &FrequencyContext,
) -> SpaceTimeField {
    h.omega_dphi(ctx).add(&h.abs_d_pow(1.0).scale_complex(I * m)).add(&r0.apply(h))
}

/// Applies `L_inf = w.dphi + i D_inf^{(1)}` to a field.
pub fn l_inf_apply(fin: &FinalBlocks, h: &SpaceTimeField, ctx: &FrequencyContext) -> SpaceTimeField {
    h.omega_dphi(ctx).add(&PairedOperator::diag_apply(&fin.d_inf, h))
}

/// Builds a synthetic one-smoothing Hamiltonian remainder of weighted size
/// `eps` with exponential decay in `l` (test/bench input).
pub fn synthetic_remainder(
    grid: LGrid,
    j_max: i32,
    eps: f64,
    l_decay: f64,
    rng: &mut impl rand::Rng,
) -> PairedOperator {
    let raw = PairedOperator::random_hamiltonian(grid, j_max, l_decay, 0.7, rng);
    // one-smoothing decay; the symmetric row/column weight keeps the
    // Hamiltonian structure intact
    let w = |j: i32| 1.0 / (j as f64).sqrt();
    let sm = PairedOperator {
        p1: raw.p1.scale_rows_cols(w, w),
        p2: raw.p2.scale_rows_cols(w, w),
    };
    let s0 = 2.0;
    let norm = sm.decay_norm_d(s0);
    sm.scale(eps / norm.max(1e-300))
}

/// Synthetic remainder with power-law decay `<l>^{-p}` in time (a fixed
/// finite-smoothness profile, so smoothing tails shrink like `N^{-b}`).
pub fn synthetic_remainder_power(
    grid: LGrid,
    j_max: i32,
    eps: f64,
    p: f64,
    rng: &mut impl rand::Rng,
) -> PairedOperator {
    let mut raw = PairedOperator::random_hamiltonian(grid, j_max, 0.0, 0.7, rng);
    let mut buf: LBuf = [0; MAX_NU];
    for op in [&mut raw.p1, &mut raw.p2] {
        for li in 0..grid.len() {
            let l = grid.decode(li, &mut buf).to_vec();
            let f = angle_l(&l).powf(-p);
            for j in 1..=j_max {
                for jp in 1..=j_max {
                    let b = op.block(li, j, jp).scale(C::new(f, 0.0));
                    *op.block_mut(li, j, jp) = b;
                }
            }
        }
    }
    let w = |j: i32| 1.0 / (j as f64).sqrt();
    let sm = PairedOperator { p1: raw.p1.scale_rows_cols(w, w), p2: raw.p2.scale_rows_cols(w, w) };
    let s0 = 2.0;
    let norm = sm.decay_norm_d(s0);
    sm.scale(eps / norm.max(1e-300))
}

/// Operator-level conjugation defect `|Phi_inf^{-1} L0 Phi_inf - L_inf|_{s0}`
/// on the inner truncation, using the assembled transformation:
/// `Phi^{-1} L0 Phi - L_inf = Phi^{-1}[(w.dphi Phi) + (D0 + R0) Phi] - D_inf`
/// as coefficient operators (the `w.dphi I2` parts cancel structurally).
pub fn conjugation_defect(
    m: f64,
    r0: &PairedOperator,
    fin: &FinalBlocks,
    ctx: &FrequencyContext,
) -> f64 {
    let phi = fin.phi_inf.as_ref().expect("reduce() must run with assemble_transform");
    let phi_inv = fin.phi_inf_inv.as_ref().expect("assembled inverse transform");
    let d0 = BlockDiagonal::dispersion(m, r0.j_max());
    let dphi_phi = phi.omega_dphi(ctx);
    let d0_phi = PairedOperator {
        p1: phi.p1.diag_left(&d0).scale(I),
        p2: phi.p2.diag_left(&d0).scale(I),
    };
    let inner = dphi_phi.add(&d0_phi).add(&r0.compose(phi));
    let conj = phi_inv.compose(&inner);
    let d_inf_op = PairedOperator {
        p1: ToeplitzOperator::from_block_diagonal(&fin.d_inf, r0.grid()).scale(I),
        p2: ToeplitzOperator::zero(r0.grid(), r0.j_max()),
    };
    conj.sub(&d_inf_op)
        .inner_truncation(ctx.l_max / 2, ctx.j_max / 2)
        .decay_norm(ctx.s0())
}
