//! The Kirchhoff first-order system on zero-x-mean functions,
//!
//! `F(u, psi) = (w.d_phi u - psi,
//!               w.d_phi psi - (1 + eps int |d_x u|^2 dx) d_xx u - eps f_perp)`,
//!
//! its quadratic Hamiltonian, and the linearized operator
//! `L [v, p] = (w.d_phi v - p, w.d_phi p - a(phi) d_xx v + R v)` with
//! `a = 1 + eps int |d_x u|^2 dx` and `R v = 2 eps d_xx u int d_xx u . v dx`.

use num_complex::Complex64;

use crate::context::{FrequencyContext, LGrid};
use crate::error::{Error, Result};
use crate::field::{SpaceTimeField, ToroidalFunction};
use crate::paired::{Matrix2Op, PairField};
use crate::toeplitz::ToeplitzOperator;

/// A state `(u, psi)` of the zero-mean system together with the forcing size.
#[derive(Debug, Clone)]
pub struct StatePair {
    pub u: SpaceTimeField,
    pub psi: SpaceTimeField,
    pub eps: f64,
}

impl StatePair {
    pub fn zero(grid: LGrid, j_max: i32, eps: f64) -> Self {
        StatePair {
            u: SpaceTimeField::zero(grid, j_max),
            psi: SpaceTimeField::zero(grid, j_max),
            eps,
        }
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if !self.u.is_real(tol) || !self.psi.is_real(tol) {
            return Err(Error::Shape("state components must be real".into()));
        }
        if !self.u.has_zero_x_mean(tol) || !self.psi.has_zero_x_mean(tol) {
            return Err(Error::MeanCondition("state components must have zero x-average".into()));
        }
        Ok(())
    }

    pub fn as_pair(&self) -> PairField {
        PairField { u: self.u.clone(), psi: self.psi.clone() }
    }
}

/// `a(phi) = 1 + eps int_T |d_x u|^2 dx`, exact on the doubled band.
pub fn kirchhoff_coefficient(
    u: &SpaceTimeField,
    eps: f64,
    ctx: &FrequencyContext,
) -> ToroidalFunction {
    let ux = u.x_derivative();
    let quad = ux.x_integral_product(&ux);
    quad.embedded(ctx.op_grid()).scale(eps).add_constant(1.0)
}

/// Evaluates `F` at a state; `f` must have zero x-average (`f_perp`).
pub fn eval_f(state: &StatePair, f_perp: &SpaceTimeField, ctx: &FrequencyContext) -> PairField {
    let a = kirchhoff_coefficient(&state.u, state.eps, ctx);
    let first = state.u.omega_dphi(ctx).sub(&state.psi);
    let second = state
        .psi
        .omega_dphi(ctx)
        .sub(&state.u.xx_derivative().scale_by_toroidal(&a))
        .sub(&f_perp.scale(state.eps));
    PairField { u: first, psi: second }
}

/// The Hamiltonian density in time,
/// `H(phi) = 1/2 int (psi^2 + |d_x u|^2) dx + eps (1/2 int |d_x u|^2 dx)^2
///           - eps int f_perp u dx`,
/// with all quadratures done by Parseval on the truncation.
pub fn eval_hamiltonian(
    state: &StatePair,
    f_perp: &SpaceTimeField,
    _ctx: &FrequencyContext,
) -> ToroidalFunction {
    let ux = state.u.x_derivative();
    let kin = state.psi.x_integral_product(&state.psi);
    let pot = ux.x_integral_product(&ux);
    let fu = f_perp.x_integral_product(&state.u);
    // common wide band for the quartic term
    let wide = LGrid::new(kin.grid().nu(), 2 * pot.grid().half());
    let half_pot = pot.scale(0.5).embedded(wide);
    let quartic = half_pot.product(&half_pot).scale(state.eps);
    kin.add(&pot)
        .scale(0.5)
        .embedded(wide)
        .add(&quartic)
        .add(&fu.embedded(wide).scale(-state.eps))
}

/// The linearized operator at a state, kept in split form: the multiplication
/// coefficient `a(phi)` and the projection-shaped remainder `R = q . <g, .>`.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub a: ToroidalFunction,
    pub q: SpaceTimeField,
    pub g: SpaceTimeField,
    pub ctx: FrequencyContext,
}

/// Builds the linearization `L` at a state: `a` as above,
/// `q = 2 eps d_xx u`, `g = d_xx u`.
pub fn linearize(state: &StatePair, ctx: &FrequencyContext) -> LinearizedOperator {
    let uxx = state.u.xx_derivative();
    LinearizedOperator {
        a: kirchhoff_coefficient(&state.u, state.eps, ctx),
        q: uxx.scale(2.0 * state.eps),
        g: uxx,
        ctx: ctx.clone(),
    }
}

impl LinearizedOperator {
    /// `R v = q int g v dx`, on `v`'s truncation.
    pub fn remainder_apply(&self, v: &SpaceTimeField) -> SpaceTimeField {
        let c = self.g.x_integral_product(v);
        self.q.embedded(v.grid(), v.j_max()).scale_by_toroidal(&c)
    }

    /// `L [v, p]` on the truncation.
    pub fn apply(&self, h: &PairField) -> PairField {
        let first = h.u.omega_dphi(&self.ctx).sub(&h.psi);
        let second = h
            .psi
            .omega_dphi(&self.ctx)
            .sub(&h.u.xx_derivative().scale_by_toroidal(&self.a))
            .add(&self.remainder_apply(&h.u));
        PairField { u: first, psi: second }
    }

    /// The remainder as a Töplitz operator on the operator band.
    pub fn remainder_op(&self) -> ToeplitzOperator {
        ToeplitzOperator::projection(&self.q, &self.g, self.ctx.op_grid(), self.ctx.j_max)
    }

    /// The coefficient part `L - w.d_phi I_2 = [[0, -Id], [-a d_xx + R, 0]]`
    /// as a matrix of Töplitz operators (for structural checks).
    pub fn coefficient_matrix(&self) -> Matrix2Op {
        let grid = self.ctx.op_grid();
        let jm = self.ctx.j_max;
        let z = ToeplitzOperator::zero(grid, jm);
        let minus_a_dxx = ToeplitzOperator::mult(&self.a, grid, jm)
            .scale_rows_cols(|_| 1.0, |jp| (jp as f64) * (jp as f64));
        Matrix2Op {
            a11: z.clone(),
            a12: ToeplitzOperator::identity(grid, jm).scale(Complex64::new(-1.0, 0.0)),
            a21: minus_a_dxx.add(&self.remainder_op()),
            a22: z,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> FrequencyContext {
        FrequencyContext::new(vec![1.0, (1.0 + 5.0f64.sqrt()) / 2.0], 0.1, 1.5, 3, 5).unwrap()
    }

    fn random_state(ctx: &FrequencyContext, eps: f64, size: f64, seed: u64) -> StatePair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = SpaceTimeField::random(ctx.field_grid(), ctx.j_max, 0.8, &mut rng, true, true)
            .scale(size);
        let psi = SpaceTimeField::random(ctx.field_grid(), ctx.j_max, 0.8, &mut rng, true, true)
            .scale(size);
        StatePair { u, psi, eps }
    }

    fn random_forcing(ctx: &FrequencyContext, seed: u64) -> SpaceTimeField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpaceTimeField::random(ctx.field_grid(), ctx.j_max, 0.6, &mut rng, true, true)
    }

    #[test]
    fn f_at_zero_state() {
        let c = ctx();
        let f = random_forcing(&c, 1);
        let zero = StatePair::zero(c.field_grid(), c.j_max, 1e-3);
        let out = eval_f(&zero, &f, &c);
        assert!(out.u.max_abs() == 0.0);
        assert!(out.psi.add(&f.scale(zero.eps)).max_abs() < 1e-15);
        // and F(0) = 0 with no forcing
        let z = SpaceTimeField::zero(c.field_grid(), c.j_max);
        let out0 = eval_f(&zero, &z, &c);
        assert!(out0.max_abs() == 0.0);
    }

    #[test]
    fn coefficient_for_cosine_state() {
        // u = cos(x) cos(l.phi): a(phi) = 1 + eps pi cos^2(l.phi)
        let c = ctx();
        let eps = 0.37;
        let mut u = SpaceTimeField::zero(c.field_grid(), c.j_max);
        for (l, j) in [([1, 0], 1), ([1, 0], -1), ([-1, 0], 1), ([-1, 0], -1)] {
            u.set_at(&l, j, Complex64::new(0.25, 0.0));
        }
        let a = kirchhoff_coefficient(&u, eps, &c);
        for t in 0..10 {
            let phi = [0.63 * t as f64, 0.0];
            let expect = 1.0 + eps * std::f64::consts::PI * phi[0].cos().powi(2);
            let got = a.value_at(&phi).re;
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn coefficient_estimate() {
        // || a - 1 ||_s <= C(s) eps || u ||_{s+1}
        let c = ctx();
        let s0 = c.s0();
        for seed in 0..5 {
            let st = random_state(&c, 1e-2, 1.0, seed);
            let a = kirchhoff_coefficient(&st.u, st.eps, &c);
            let am1 = a.add_constant(-1.0);
            for s in [s0, s0 + 2.0] {
                let ratio = am1.sobolev_norm(s) / (st.eps * st.u.sobolev_norm(s + 1.0));
                assert!(ratio.is_finite() && ratio < 100.0, "C(s) = {ratio}");
            }
        }
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let c = ctx();
        let f = random_forcing(&c, 5);
        let st = random_state(&c, 1e-2, 0.5, 6);
        let lin = linearize(&st, &c);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = PairField {
            u: SpaceTimeField::random(c.field_grid(), c.j_max, 0.8, &mut rng, true, true),
            psi: SpaceTimeField::random(c.field_grid(), c.j_max, 0.8, &mut rng, true, true),
        };
        let t = 1e-6;
        let plus =
            StatePair { u: st.u.add(&h.u.scale(t)), psi: st.psi.add(&h.psi.scale(t)), eps: st.eps };
        let minus =
            StatePair { u: st.u.sub(&h.u.scale(t)), psi: st.psi.sub(&h.psi.scale(t)), eps: st.eps };
        let fd = eval_f(&plus, &f, &c).sub(&eval_f(&minus, &f, &c)).scale(0.5 / t);
        let lh = lin.apply(&h);
        let err = fd.sub(&lh).sobolev_norm(0.0) / (1.0 + lh.sobolev_norm(0.0));
        assert!(err < 1e-5, "directional derivative error {err}");
    }

    #[test]
    fn linearization_at_zero_state() {
        let c = ctx();
        let zero = StatePair::zero(c.field_grid(), c.j_max, 1e-3);
        let lin = linearize(&zero, &c);
        let one = ToroidalFunction::constant(c.op_grid(), 1.0);
        assert!(lin.a.add(&one.scale(-1.0)).sobolev_norm(0.0) < 1e-15);
        assert!(lin.remainder_op().max_abs() == 0.0);
    }

    #[test]
    fn hamiltonian_values_and_gradient() {
        let c = ctx();
        // u = 0, psi = cos x: H = pi/2 pointwise
        let mut psi = SpaceTimeField::zero(c.field_grid(), c.j_max);
        psi.set_at(&[0, 0], 1, Complex64::new(0.5, 0.0));
        psi.set_at(&[0, 0], -1, Complex64::new(0.5, 0.0));
        let st = StatePair { u: SpaceTimeField::zero(c.field_grid(), c.j_max), psi, eps: 0.2 };
        let z = SpaceTimeField::zero(c.field_grid(), c.j_max);
        let h = eval_hamiltonian(&st, &z, &c);
        for t in 0..5 {
            let phi = [0.41 * t as f64, 1.7];
            assert!((h.value_at(&phi).re - std::f64::consts::PI / 2.0).abs() < 1e-12);
        }
        // zero state: H = 0
        let zst = StatePair::zero(c.field_grid(), c.j_max, 0.2);
        assert!(eval_hamiltonian(&zst, &z, &c).sobolev_norm(0.0) < 1e-15);
        // gradient check: the vector field satisfies F = w.dphi - J grad H, so
        // grad H = -J (w.dphi (u,psi) - F(u,psi)); compare with central
        // differences of H through the L2_x pairing
        let st2 = random_state(&c, 1e-2, 0.4, 11);
        let f = random_forcing(&c, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h_dir = PairField {
            u: SpaceTimeField::random(c.field_grid(), c.j_max, 1.0, &mut rng, true, true),
            psi: SpaceTimeField::random(c.field_grid(), c.j_max, 1.0, &mut rng, true, true),
        };
        let t = 1e-6;
        let hp = eval_hamiltonian(
            &StatePair {
                u: st2.u.add(&h_dir.u.scale(t)),
                psi: st2.psi.add(&h_dir.psi.scale(t)),
                eps: st2.eps,
            },
            &f,
            &c,
        );
        let hm = eval_hamiltonian(
            &StatePair {
                u: st2.u.sub(&h_dir.u.scale(t)),
                psi: st2.psi.sub(&h_dir.psi.scale(t)),
                eps: st2.eps,
            },
            &f,
            &c,
        );
        let fd = hp.add(&hm.scale(-1.0)).scale(0.5 / t);
        // analytic gradient on a band large enough to carry the products:
        // grad_u H = -(1 + eps int |u_x|^2) u_xx - eps f_perp, grad_psi H = psi
        let wide = LGrid::new(c.nu, 4 * c.l_max);
        let a = kirchhoff_coefficient(&st2.u, st2.eps, &c);
        let grad_u = st2
            .u
            .xx_derivative()
            .embedded(wide, c.j_max)
            .scale_by_toroidal(&a)
            .scale(-1.0)
            .sub(&f.embedded(wide, c.j_max).scale(st2.eps));
        let grad_psi = st2.psi.embedded(wide, c.j_max);
        let pairing = grad_u
            .x_integral_product(&h_dir.u.embedded(wide, c.j_max))
            .add(&grad_psi.x_integral_product(&h_dir.psi.embedded(wide, c.j_max)));
        for t in 0..8 {
            let phi = [0.29 * t as f64, 0.53 * t as f64];
            let lhs = fd.value_at(&phi).re;
            let rhs = pairing.value_at(&phi).re;
            assert!((lhs - rhs).abs() < 1e-5 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn hamiltonian_structure_of_linearization() {
        // L = w.dphi I2 - J G with symmetric G
        let c = ctx();
        let st = random_state(&c, 1e-2, 0.6, 21);
        let lin = linearize(&st, &c);
        let m = lin.coefficient_matrix();
        let j = Matrix2Op::symplectic_j(c.op_grid(), c.j_max);
        let jm = j.compose(&m);
        let g = Matrix2Op {
            a11: jm.a11.scale(Complex64::new(-1.0, 0.0)),
            a12: jm.a12.scale(Complex64::new(-1.0, 0.0)),
            a21: jm.a21.scale(Complex64::new(-1.0, 0.0)),
            a22: jm.a22.scale(Complex64::new(-1.0, 0.0)),
        };
        let defect = g.sub(&g.transpose()).decay_norm(0.0);
        assert!(defect < 1e-12, "G symmetry defect {defect}");
        // the remainder is exactly the projection with q = 2 eps u_xx, g = u_xx
        let r = lin.remainder_op();
        let q2 = st.u.xx_derivative().scale(2.0 * st.eps);
        let g2 = st.u.xx_derivative();
        let r2 = ToeplitzOperator::projection(&q2, &g2, c.op_grid(), c.j_max);
        assert!(r.sub(&r2).max_abs() == 0.0);
    }

    #[test]
    fn matrix_form_matches_split_apply() {
        let c = ctx();
        let st = random_state(&c, 1e-2, 0.6, 31);
        let lin = linearize(&st, &c);
        let m = lin.coefficient_matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let h = PairField {
            u: SpaceTimeField::random(c.field_grid(), c.j_max, 0.7, &mut rng, true, true),
            psi: SpaceTimeField::random(c.field_grid(), c.j_max, 0.7, &mut rng, true, true),
        };
        let lhs = lin.apply(&h);
        let mh = m.apply(&h);
        let rhs = PairField {
            u: h.u.omega_dphi(&c).add(&mh.u),
            psi: h.psi.omega_dphi(&c).add(&mh.psi),
        };
        let err = lhs.sub(&rhs).sobolev_norm(0.0);
        assert!(err < 1e-11, "matrix/split mismatch {err}");
    }
}
