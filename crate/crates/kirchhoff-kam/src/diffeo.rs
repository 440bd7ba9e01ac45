//! Composition with torus diffeomorphisms `phi -> phi + omega alpha(phi)`.
//!
//! The composition `(A h)(phi, x) = h(phi + omega alpha(phi), x)` is evaluated
//! by direct Fourier summation at shifted uniform nodes followed by a forward
//! transform; the inverse diffeomorphism is found by a pointwise fixed-point
//! iteration on the sample grid.

use num_complex::Complex64;

use crate::context::{FrequencyContext, LGrid};
use crate::error::{Error, Result};
use crate::field::{GridSampler, SpaceTimeField, ToroidalFunction};

const FIXED_POINT_MAX_ITERS: usize = 200;
const FIXED_POINT_TOL: f64 = 1e-12;

fn omega_norm(omega: &[f64]) -> f64 {
    omega.iter().map(|w| w * w).sum::<f64>().sqrt()
}

/// Checks the diffeomorphism condition `||alpha||_C1 |omega| < 1`.
pub fn check_diffeo_condition(alpha: &ToroidalFunction, ctx: &FrequencyContext) -> Result<f64> {
    let c1 = alpha.c1_norm() * omega_norm(&ctx.omega);
    if c1 >= 1.0 {
        return Err(Error::DiffeoCondition(c1));
    }
    Ok(c1)
}

fn sampler_for(alpha: &ToroidalFunction, out_half: i32) -> GridSampler {
    let nu = alpha.grid().nu();
    let side = (2 * out_half.max(alpha.grid().half()) + 1) as usize;
    GridSampler::new(nu, 2 * side + 1)
}

/// `(A h)(phi) = h(phi + omega alpha(phi))` for a function of `phi` only.
pub fn compose_toroidal(
    h: &ToroidalFunction,
    alpha: &ToroidalFunction,
    ctx: &FrequencyContext,
) -> Result<ToroidalFunction> {
    check_diffeo_condition(alpha, ctx)?;
    let sampler = sampler_for(alpha, h.grid().half());
    let mut values = Vec::with_capacity(sampler.len());
    for node in sampler.nodes() {
        let a = alpha.value_at(&node).re;
        let shifted: Vec<f64> = node.iter().zip(&ctx.omega).map(|(p, w)| p + w * a).collect();
        values.push(h.value_at(&shifted));
    }
    Ok(sampler.project(&values, h.grid()))
}

/// `(A h)(phi, x) = h(phi + omega alpha(phi), x)`, slice by slice in `j`.
pub fn compose_field(
    h: &SpaceTimeField,
    alpha: &ToroidalFunction,
    ctx: &FrequencyContext,
) -> Result<SpaceTimeField> {
    check_diffeo_condition(alpha, ctx)?;
    let sampler = sampler_for(alpha, h.grid().half());
    let nodes: Vec<Vec<f64>> = sampler
        .nodes()
        .map(|node| {
            let a = alpha.value_at(&node).re;
            node.iter().zip(&ctx.omega).map(|(p, w)| p + w * a).collect()
        })
        .collect();
    let mut out = SpaceTimeField::zero(h.grid(), h.j_max());
    let mut slice = ToroidalFunction::zero(h.grid());
    let mut values = vec![Complex64::ZERO; sampler.len()];
    for j in -h.j_max()..=h.j_max() {
        for li in 0..h.grid().len() {
            slice.coeffs_mut()[li] = h.get(li, j);
        }
        if slice.coeffs().iter().all(|c| c.norm_sqr() == 0.0) {
            continue;
        }
        for (v, node) in values.iter_mut().zip(&nodes) {
            *v = slice.value_at(node);
        }
        let proj = sampler.project(&values, h.grid());
        for li in 0..h.grid().len() {
            out.set(li, j, proj.coeff(li));
        }
    }
    Ok(out)
}

/// Solves `alpha_tilde(theta) + alpha(theta + omega alpha_tilde(theta)) = 0`
/// by the damped-1 fixed point `alpha_tilde <- -alpha(theta + omega alpha_tilde)`
/// at every sample node. The result is projected onto the full Nyquist band of
/// the sample grid, so it interpolates the converged node values exactly and
/// the composition residual at the nodes stays at the fixed-point tolerance.
pub fn invert_diffeo(alpha: &ToroidalFunction, ctx: &FrequencyContext) -> Result<ToroidalFunction> {
    check_diffeo_condition(alpha, ctx)?;
    let sampler = sampler_for(alpha, alpha.grid().half());
    let nodes: Vec<Vec<f64>> = sampler.nodes().collect();
    let mut vals: Vec<f64> = nodes.iter().map(|n| -alpha.value_at(n).re).collect();
    let mut residual = f64::INFINITY;
    for _ in 0..FIXED_POINT_MAX_ITERS {
        residual = 0.0f64;
        for (v, node) in vals.iter_mut().zip(&nodes) {
            let shifted: Vec<f64> =
                node.iter().zip(&ctx.omega).map(|(p, w)| p + w * *v).collect();
            let next = -alpha.value_at(&shifted).re;
            residual = residual.max((next - *v).abs());
            *v = next;
        }
        if residual < FIXED_POINT_TOL * 0.1 {
            let cvals: Vec<Complex64> = vals.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            let nyquist = LGrid::new(alpha.grid().nu(), 2 * alpha.grid().half() + 1);
            return Ok(sampler.project(&cvals, nyquist));
        }
    }
    Err(Error::FixedPoint(FIXED_POINT_MAX_ITERS, residual))
}

/// Max pointwise residual `|alpha_tilde(theta) + alpha(theta + omega alpha_tilde(theta))|`
/// over the sample grid.
pub fn inversion_residual(
    alpha: &ToroidalFunction,
    alpha_tilde: &ToroidalFunction,
    ctx: &FrequencyContext,
) -> f64 {
    let sampler = sampler_for(alpha, alpha.grid().half());
    let mut worst = 0.0f64;
    for node in sampler.nodes() {
        let at = alpha_tilde.value_at(&node).re;
        let shifted: Vec<f64> = node.iter().zip(&ctx.omega).map(|(p, w)| p + w * at).collect();
        worst = worst.max((at + alpha.value_at(&shifted).re).abs());
    }
    worst
}
