//! Run configuration, pipeline orchestration, artifact emission, and a
//! self-contained JSON schema validator for the emitted files.
//!
//! Derived constants (`s0`, the default `tau` from `tau*`, the Newton schedule
//! constants from `mu1`, the `gamma_n` sequence) are always recomputed from
//! the primitive fields, never read from disk.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::context::FrequencyContext;
use crate::error::{Error, Result};
use crate::field::{SpaceTimeField, ToroidalFunction};
use crate::kam::{check_cantor_membership, reduce, step_reports_csv_deterministic, KamParams};
use crate::linearize::linearize;
use crate::measure::{
    fit_power_law, sample_exclusions, stats_csv, ExclusionStats, MeasureConfig,
};
use crate::nash_moser::{
    assemble_full_solution, full_system_residual, iterate_records_csv, nash_moser_iterate,
    solution_means, solve_zero_mode, zero_mode_residual, InversionPath, NashMoserConfig,
    RunStatus,
};
use crate::regularize::regularize;
use crate::stability::{integrate_original, integrate_reduced, SpaceField};
use crate::toeplitz::BlockDiagonal;

/// On-disk run configuration. Optional fields fall back to the defaults of
/// the underlying modules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub nu: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_box: Option<Vec<Vec<f64>>>,
    pub eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// `gamma = eps^a` when `gamma` is absent; default `a = 1/3`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub l_max: i32,
    pub j_max: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inversion_path: Option<InversionPath>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_gammas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max_periods: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_cap: Option<usize>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let value: Value = serde_json::from_str(&text)?;
        validate_schema(&schema_config(), &value)
            .map_err(|e| Error::Config(format!("config schema: {e}")))?;
        Ok(serde_json::from_value(value)?)
    }

    pub fn resolved_gamma(&self) -> f64 {
        match self.gamma {
            Some(g) => g,
            None => self.eps.powf(self.gamma_exponent.unwrap_or(1.0 / 3.0)),
        }
    }

    pub fn resolved_tau(&self) -> f64 {
        // the measure-estimate exponents: tau* = nu + 2, tau = 2 tau* + nu + 1
        self.tau.unwrap_or(2.0 * (self.nu as f64 + 2.0) + self.nu as f64 + 1.0)
    }

    /// Midpoint of the box when no explicit frequency is given.
    pub fn resolved_omega(&self) -> Result<Vec<f64>> {
        if let Some(w) = &self.omega {
            if w.len() != self.nu {
                return Err(Error::Config("omega length must equal nu".into()));
            }
            return Ok(w.clone());
        }
        match &self.omega_box {
            Some(b) if b.len() == self.nu && b.iter().all(|p| p.len() == 2) => {
                Ok(b.iter().map(|p| 0.5 * (p[0] + p[1])).collect())
            }
            _ => Err(Error::Config("need omega or omega_box with nu [lo, hi] pairs".into())),
        }
    }

    pub fn context(&self) -> Result<FrequencyContext> {
        FrequencyContext::new(
            self.resolved_omega()?,
            self.resolved_gamma(),
            self.resolved_tau(),
            self.l_max,
            self.j_max,
        )
    }

    pub fn newton_config(&self) -> Result<NashMoserConfig> {
        let ctx = self.context()?;
        let mut nm = NashMoserConfig::new(self.eps, ctx.gamma, ctx.tau);
        if let Some(n0) = self.n0 {
            nm.n0 = n0;
        }
        if let Some(ms) = self.max_steps {
            nm.max_steps = ms;
        }
        if let Some(rt) = self.residual_tol {
            nm.residual_tol = rt;
        }
        if let Some(path) = self.inversion_path {
            nm.inversion = path;
        }
        if let Some(cap) = self.dense_cap {
            nm.dense_cap = cap;
        }
        Ok(nm)
    }

    pub fn stages(&self) -> Vec<String> {
        self.stages.clone().unwrap_or_else(|| {
            ["solve", "reduce", "measure", "stability"].iter().map(|s| s.to_string()).collect()
        })
    }

    /// Loads the forcing field, or builds the default `cos(phi_1) cos(x)`.
    pub fn load_forcing(&self, base: Option<&Path>) -> Result<SpaceTimeField> {
        let ctx = self.context()?;
        match &self.forcing_path {
            Some(p) => {
                let path = match base {
                    Some(b) => b.join(p),
                    None => Path::new(p).to_path_buf(),
                };
                let f = SpaceTimeField::read_json(&path)?;
                if f.grid().nu() != self.nu {
                    return Err(Error::Config("forcing nu mismatch".into()));
                }
                Ok(f.embedded(ctx.field_grid(), ctx.j_max))
            }
            None => {
                let mut f = SpaceTimeField::zero(ctx.field_grid(), ctx.j_max);
                let mut l = vec![0i32; self.nu];
                for s1 in [-1i32, 1] {
                    l[0] = s1;
                    for j in [-1i32, 1] {
                        f.set_at(&l, j, num_complex::Complex64::new(0.25, 0.0));
                    }
                }
                Ok(f)
            }
        }
    }
}

/// Everything the run reports, one JSON file.
#[derive(Debug, Serialize)]
pub struct PipelineSummary {
    pub config: RunConfig,
    pub constants: SummaryConstants,
    pub stages: serde_json::Map<String, Value>,
}

#[derive(Debug, Serialize)]
pub struct SummaryConstants {
    pub s0: f64,
    pub tau: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub b1: f64,
    pub a1: f64,
    pub decay_a: f64,
    pub decay_b: f64,
}

/// Serialized final blocks (`D_j^inf`) with `m`.
#[derive(Debug, Serialize, Deserialize)]
pub struct BlocksFile {
    pub m: f64,
    pub j_max: i32,
    pub blocks: Vec<BlockEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BlockEntry {
    pub j: i32,
    pub m: crate::block::BlockJson,
}

pub fn blocks_to_file(d: &BlockDiagonal, m: f64) -> BlocksFile {
    BlocksFile {
        m,
        j_max: d.j_max(),
        blocks: (1..=d.j_max())
            .map(|j| BlockEntry { j, m: crate::block::BlockJson::from(d.block(j)) })
            .collect(),
    }
}

pub fn blocks_from_file(f: &BlocksFile) -> BlockDiagonal {
    let mut d = BlockDiagonal::zeros(f.j_max);
    for e in &f.blocks {
        *d.block_mut(e.j) = crate::block::Block2x2::from(&e.m);
    }
    d
}

fn write_artifact(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_json_checked(dir: &Path, name: &str, value: &Value, schema: &Value) -> Result<()> {
    validate_schema(schema, value)
        .map_err(|e| Error::Config(format!("{name} fails its schema: {e}")))?;
    write_artifact(dir, name, &serde_json::to_string_pretty(value)?)
}

/// Runs the enabled stages in order and writes every artifact under `out`.
/// Deterministic for a fixed config and seed.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineSummary> {
    let ctx = cfg.context()?;
    let nm = cfg.newton_config()?;
    let forcing = cfg.load_forcing(None)?;
    let stages = cfg.stages();
    let mut stage_out = serde_json::Map::new();

    std::fs::create_dir_all(out)?;
    write_json_checked(out, "config.json", &serde_json::to_value(cfg)?, &schema_config())?;

    let mut final_state = None;
    if stages.iter().any(|s| s == "solve") {
        let (v0, p0) = solve_zero_mode(&forcing, cfg.eps, &ctx)?;
        let zm_residual = zero_mode_residual(&v0, &p0, &forcing, cfg.eps, &ctx);
        let run = nash_moser_iterate(&forcing, &nm, &ctx)?;
        write_artifact(out, "iterates.csv", &iterate_records_csv(&run.records))?;
        match run.status {
            RunStatus::Converged | RunStatus::MaxSteps => {}
            RunStatus::Excluded => {
                return Err(run.exclusion.unwrap_or(Error::Config("excluded".into())))
            }
            RunStatus::Diverged => {
                return Err(Error::Divergence {
                    step: run.records.len(),
                    residual: run.records.last().map(|r| r.residual_s0).unwrap_or(f64::NAN),
                })
            }
        }
        let vp = assemble_full_solution(&run.state, &v0, &p0);
        let full_res = full_system_residual(&vp, &forcing, cfg.eps, &ctx);
        let (mean_v, mean_p) = solution_means(&vp);
        write_json_checked(
            out,
            "solution_v.json",
            &serde_json::to_value(vp.u.to_file())?,
            &schema_field(),
        )?;
        write_json_checked(
            out,
            "solution_p.json",
            &serde_json::to_value(vp.psi.to_file())?,
            &schema_field(),
        )?;
        stage_out.insert(
            "solve".into(),
            serde_json::json!({
                "status": run.status,
                "steps": run.records.len(),
                "final_residual_s0": run.records.last().map(|r| r.residual_s0),
                "amplitude_s0": run.state.u.sobolev_norm(ctx.s0()),
                "zero_mode_residual": zm_residual,
                "full_system_residual": full_res,
                "solution_means": [mean_v, mean_p],
            }),
        );
        final_state = Some(run.state);
    }

    let mut blocks_for_measure = None;
    if stages.iter().any(|s| s == "reduce") {
        let state = match &final_state {
            Some(s) => s.clone(),
            None => crate::linearize::StatePair::zero(ctx.field_grid(), ctx.j_max, cfg.eps),
        };
        let lin = linearize(&state, &ctx);
        let reg = regularize(&lin)?;
        let kamp = KamParams::new(ctx.gamma);
        let (fin, reports, kam_state) = reduce(reg.m(), reg.r4(), &kamp, &ctx)?;
        write_artifact(out, "reduce.csv", &step_reports_csv_deterministic(&reports))?;
        let worst = check_cantor_membership(&fin.d_inf, fin.m, &ctx, 2 * ctx.l_max, 2.0 * ctx.gamma);
        let bf = blocks_to_file(&fin.d_inf, fin.m);
        write_json_checked(out, "blocks.json", &serde_json::to_value(&bf)?, &schema_blocks())?;
        stage_out.insert(
            "reduce".into(),
            serde_json::json!({
                "m": fin.m,
                "eps_over_gamma": cfg.eps / ctx.gamma,
                "kam_steps": reports.len(),
                "final_remainder_d_s0": kam_state.remainder.decay_norm_d(ctx.s0()),
                "dispersion_deviation": fin.dispersion_deviation(),
                "min_margin": worst,
                "regularization": reg.diagnostics,
            }),
        );
        blocks_for_measure = Some((fin.d_inf.clone(), fin.m));
    }

    if stages.iter().any(|s| s == "measure") {
        let (d, m) = blocks_for_measure
            .clone()
            .unwrap_or_else(|| (BlockDiagonal::dispersion(1.0, ctx.j_max), 1.0));
        let boxes: Vec<(f64, f64)> = match &cfg.omega_box {
            Some(b) => b.iter().map(|p| (p[0], p[1])).collect(),
            None => ctx.omega.iter().map(|w| (w - 0.25, w + 0.25)).collect(),
        };
        let mut mcfg = MeasureConfig::defaults(ctx.nu, ctx.l_max, ctx.j_max);
        if let Some(n) = cfg.measure_samples {
            mcfg.samples = n;
        }
        mcfg.seed = cfg.seed.unwrap_or(0);
        let gammas = cfg.measure_gammas.clone().unwrap_or_else(|| vec![0.1, 0.05, 0.025]);
        let mut stats: Vec<ExclusionStats> = Vec::new();
        for g in &gammas {
            stats.push(sample_exclusions(&d, m, &boxes, *g, &mcfg)?);
        }
        write_artifact(out, "measure.csv", &stats_csv(&stats))?;
        let fractions: Vec<f64> = stats.iter().map(|s| s.excluded_fraction).collect();
        let exponent =
            if gammas.len() >= 2 { fit_power_law(&gammas, &fractions) } else { f64::NAN };
        stage_out.insert(
            "measure".into(),
            serde_json::json!({
                "gammas": gammas,
                "fractions": fractions,
                "fitted_exponent": exponent,
                "stats": stats,
            }),
        );
    }

    if stages.iter().any(|s| s == "stability") {
        let state = match &final_state {
            Some(s) => s.clone(),
            None => crate::linearize::StatePair::zero(ctx.field_grid(), ctx.j_max, cfg.eps),
        };
        let lin = linearize(&state, &ctx);
        let (d, _m) = blocks_for_measure
            .clone()
            .unwrap_or_else(|| (BlockDiagonal::dispersion(1.0, ctx.j_max), 1.0));
        let s = cfg.stability_s.unwrap_or(3.0);
        let periods = cfg.t_max_periods.unwrap_or(10.0);
        let min_w = ctx.omega.iter().map(|w| w.abs()).fold(f64::INFINITY, f64::min);
        let t_max = periods * crate::field::TWO_PI / min_w;
        let t_grid: Vec<f64> = (0..=50).map(|k| k as f64 * t_max / 50.0).collect();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(
            cfg.seed.unwrap_or(0) ^ 0x5741_424c,
        );
        let h0 = SpaceField::random(ctx.j_max, 0.5, &mut rng, true);
        let reduced = integrate_reduced(&d, &h0, &t_grid, s);
        let v0 = SpaceField::random(ctx.j_max, 0.5, &mut rng, true).realified();
        let p0 = SpaceField::random(ctx.j_max, 0.5, &mut rng, true).realified();
        let dt = 0.02 / min_w.max(1.0);
        let original = integrate_original(&lin, cfg.eps, &state.u, &v0, &p0, &t_grid, dt, s)?;
        let mut csv = String::from("flow,t,h_norm_s,u_norm,psi_norm\n");
        for sn in &reduced {
            csv.push_str(&format!("reduced,{},{:e},,\n", sn.t, sn.h_norm_s));
        }
        for sn in &original {
            csv.push_str(&format!("original,{},,{:e},{:e}\n", sn.t, sn.u_norm, sn.psi_norm));
        }
        write_artifact(out, "stability.csv", &csv)?;
        let n0 = reduced[0].h_norm_s;
        let drift = reduced
            .iter()
            .map(|sn| (sn.h_norm_s - n0).abs() / n0.max(1e-300))
            .fold(0.0f64, f64::max);
        let init = original[0].u_norm + original[0].psi_norm;
        let amplification = original
            .iter()
            .map(|sn| (sn.u_norm + sn.psi_norm) / init.max(1e-300))
            .fold(0.0f64, f64::max);
        stage_out.insert(
            "stability".into(),
            serde_json::json!({
                "sobolev_index": s,
                "t_max": t_max,
                "reduced_norm_drift": drift,
                "original_amplification": amplification,
            }),
        );
    }

    let summary = PipelineSummary {
        config: cfg.clone(),
        constants: SummaryConstants {
            s0: ctx.s0(),
            tau: ctx.tau,
            gamma: ctx.gamma,
            kappa: nm.kappa(),
            b1: nm.b1(),
            a1: nm.a1(),
            decay_a: 6.0 * ctx.tau + 4.0,
            decay_b: 6.0 * ctx.tau + 5.0,
        },
        stages: stage_out,
    };
    write_json_checked(out, "summary.json", &serde_json::to_value(&summary)?, &schema_summary())?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Minimal JSON-schema validator (types, required, properties, items), enough
// for the shipped schemas.

pub fn validate_schema(schema: &Value, instance: &Value) -> std::result::Result<(), String> {
    validate_at(schema, instance, "$")
}

fn validate_at(schema: &Value, instance: &Value, path: &str) -> std::result::Result<(), String> {
    if let Some(ty) = schema.get("type").and_then(|t| t.as_str()) {
        let ok = match ty {
            "object" => instance.is_object(),
            "array" => instance.is_array(),
            "number" => instance.is_number(),
            "integer" => instance.is_i64() || instance.is_u64(),
            "string" => instance.is_string(),
            "boolean" => instance.is_boolean(),
            "null" => instance.is_null(),
            other => return Err(format!("unknown schema type {other} at {path}")),
        };
        if !ok {
            return Err(format!("{path}: expected {ty}"));
        }
    }
    if let Some(req) = schema.get("required").and_then(|r| r.as_array()) {
        for key in req {
            let k = key.as_str().unwrap_or_default();
            if instance.get(k).is_none() {
                return Err(format!("{path}: missing required key {k}"));
            }
        }
    }
    if let (Some(props), Some(obj)) =
        (schema.get("properties").and_then(|p| p.as_object()), instance.as_object())
    {
        for (k, sub) in props {
            if let Some(v) = obj.get(k) {
                validate_at(sub, v, &format!("{path}.{k}"))?;
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), instance.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            validate_at(items, v, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}

pub fn schema_field() -> Value {
    serde_json::from_str(include_str!("../../../schemas/field.schema.json")).unwrap()
}

pub fn schema_blocks() -> Value {
    serde_json::from_str(include_str!("../../../schemas/blocks.schema.json")).unwrap()
}

pub fn schema_summary() -> Value {
    serde_json::from_str(include_str!("../../../schemas/summary.schema.json")).unwrap()
}

pub fn schema_config() -> Value {
    serde_json::from_str(include_str!("../../../schemas/config.schema.json")).unwrap()
}

// ---------------------------------------------------------------------------
// Invariant self-test suite (the `verify` subcommand).

#[derive(Debug, Serialize)]
pub struct VerifyCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Runs a fixed battery of module invariants at desk scale; deterministic.
pub fn run_verify() -> Vec<VerifyCheck> {
    use num_complex::Complex64 as C;
    use rand::SeedableRng;
    let mut checks = Vec::new();
    let mut push = |name: &str, value: f64, threshold: f64| {
        checks.push(VerifyCheck {
            name: name.to_string(),
            value,
            threshold,
            pass: value <= threshold,
        });
    };
    let ctx = FrequencyContext::new(vec![1.16315, 1.76943], 1e-3, 0.5, 3, 6).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20_26);

    // Sobolev norm on a single mode
    let mut h = SpaceTimeField::zero(ctx.field_grid(), ctx.j_max);
    h.set_at(&[3, 0], 2, C::new(2.0, 0.0));
    push("sobolev_norm_single_mode", (h.sobolev_norm(2.0) - 18.0).abs(), 1e-12);

    // (w.dphi) o (w.dphi)^{-1} identity on a zero-average field
    let f = SpaceTimeField::random(ctx.field_grid(), ctx.j_max, 0.4, &mut rng, false, false);
    let mut favg = f.clone();
    let zero_idx = ctx.field_grid().index(&[0, 0]).unwrap();
    for j in -ctx.j_max..=ctx.j_max {
        favg.set(zero_idx, j, C::ZERO);
    }
    let round = favg.inverse_omega_dphi(&ctx, 1e-14).unwrap().omega_dphi(&ctx);
    push("inverse_omega_dphi_identity", round.sub(&favg).max_abs(), 1e-12);

    // torus diffeomorphism roundtrip
    let alpha = ToroidalFunction::random(ctx.field_grid(), 0.9, &mut rng, true);
    let alpha = alpha.scale(0.05 / alpha.c1_norm().max(1e-300));
    let at = crate::diffeo::invert_diffeo(&alpha, &ctx).unwrap();
    push(
        "diffeo_inversion_residual",
        crate::diffeo::inversion_residual(&alpha, &at, &ctx),
        1e-12,
    );

    // operator exponential inverse
    let psi = crate::paired::PairedOperator::random_hamiltonian(
        ctx.op_grid(),
        ctx.j_max,
        2.5,
        0.8,
        &mut rng,
    )
    .scale(0.1);
    let e = crate::paired::paired_exp(&psi, 1e-14, 60).unwrap();
    let prod = e.forward.compose(&e.inverse);
    let id = crate::paired::PairedOperator::identity(ctx.op_grid(), ctx.j_max);
    push(
        "exp_inverse_identity",
        prod.sub(&id).inner_truncation(ctx.l_max, ctx.j_max).decay_norm(0.0),
        1e-10,
    );

    // homological equation residual
    let r = crate::kam::synthetic_remainder(ctx.op_grid(), ctx.j_max, 1e-3, 1.0, &mut rng);
    let d = BlockDiagonal::dispersion(1.0, ctx.j_max);
    let n = 2 * ctx.l_max;
    let psi_h = crate::kam::solve_homological(&d, &r, n, &ctx, ctx.gamma).unwrap();
    push(
        "homological_residual",
        crate::kam::homological_residual(&d, &r, &psi_h, n, &ctx),
        1e-10,
    );

    // zero-mode solve residual
    let ctx1 = FrequencyContext::new(vec![1.465571], 5e-3, 0.5, 6, 8).unwrap();
    let mut f0 = SpaceTimeField::zero(ctx1.field_grid(), ctx1.j_max);
    f0.set_at(&[2], 0, C::new(0.5, 0.0));
    f0.set_at(&[-2], 0, C::new(0.5, 0.0));
    let (v0, p0) = solve_zero_mode(&f0, 1e-3, &ctx1).unwrap();
    push("zero_mode_residual", zero_mode_residual(&v0, &p0, &f0, 1e-3, &ctx1), 1e-12);

    // eigenvalue/sigma-margin duality
    let dperp = crate::measure::perturbed_blocks(1.0, 8, 1e-2, 5);
    let (div, sigma) = crate::measure::eigenvalue_margins(&dperp, 1.0, &[1.37], &[2], 3, 5, false);
    let min_div = div.iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min);
    push("margin_duality", (min_div - sigma).abs(), 1e-10);

    // reduced flow norm conservation
    let h0 = SpaceField::random(8, 0.4, &mut rng, true);
    let t_grid: Vec<f64> = (0..=20).map(|k| k as f64).collect();
    let snaps = integrate_reduced(&dperp, &h0, &t_grid, 2.0);
    let n0 = snaps[0].h_norm_s;
    let drift =
        snaps.iter().map(|s| (s.h_norm_s - n0).abs() / n0.max(1e-300)).fold(0.0f64, f64::max);
    push("reduced_flow_norm_drift", drift, 1e-10);

    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_validator_accepts_and_rejects() {
        let schema = schema_field();
        let good = serde_json::json!({
            "nu": 2, "l_max": 3, "j_max": 4,
            "entries": [ { "l": [1, 0], "j": 2, "re": 0.5, "im": -0.25 } ]
        });
        assert!(validate_schema(&schema, &good).is_ok());
        let bad = serde_json::json!({ "nu": 2, "l_max": 3, "entries": [] });
        assert!(validate_schema(&schema, &bad).is_err());
        let bad2 = serde_json::json!({
            "nu": 2, "l_max": 3, "j_max": 4,
            "entries": [ { "l": [1, 0], "j": "x", "re": 0.5, "im": 0.0 } ]
        });
        assert!(validate_schema(&schema, &bad2).is_err());
    }

    #[test]
    fn verify_suite_passes() {
        for check in run_verify() {
            assert!(check.pass, "{} = {:.3e} > {:.3e}", check.name, check.value, check.threshold);
        }
    }

    #[test]
    fn trivial_pipeline_run_is_deterministic() {
        let cfg = RunConfig {
            nu: 1,
            omega: Some(vec![1.465571]),
            omega_box: None,
            eps: 1e-3,
            gamma: Some(0.01),
            gamma_exponent: None,
            tau: Some(0.5),
            l_max: 4,
            j_max: 6,
            n0: Some(8),
            max_steps: Some(8),
            residual_tol: Some(1e-11),
            inversion_path: Some(InversionPath::DenseOracle),
            seed: Some(7),
            forcing_path: None,
            stages: Some(vec!["solve".into(), "reduce".into(), "stability".into()]),
            measure_gammas: None,
            measure_samples: Some(200),
            t_max_periods: Some(2.0),
            stability_s: Some(3.0),
            dense_cap: Some(4000),
        };
        let dir1 = std::env::temp_dir().join("kirchhoff_test_run1");
        let dir2 = std::env::temp_dir().join("kirchhoff_test_run2");
        let _ = std::fs::remove_dir_all(&dir1);
        let _ = std::fs::remove_dir_all(&dir2);
        let s1 = run_pipeline(&cfg, &dir1).unwrap();
        let _s2 = run_pipeline(&cfg, &dir2).unwrap();
        assert!(s1.stages.contains_key("solve"));
        for name in ["iterates.csv", "reduce.csv", "stability.csv", "summary.json"] {
            let a = std::fs::read(dir1.join(name)).unwrap();
            let b = std::fs::read(dir2.join(name)).unwrap();
            assert_eq!(a, b, "artifact {name} not byte-identical");
        }
        // converged with a small residual
        let solve = s1.stages.get("solve").unwrap();
        assert_eq!(solve.get("status").unwrap(), "converged");
        assert!(solve.get("final_residual_s0").unwrap().as_f64().unwrap() < 1e-11);
    }
}
