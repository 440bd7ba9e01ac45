//! Monte Carlo estimation of the measure of excluded frequencies.
//!
//! A frequency is excluded when any of four normalized non-resonance margins
//! drops below 1: the Diophantine condition on `w.l`, the first-order
//! conditions on `w.l + m j` (both the `(gamma*, tau*)` form and the
//! block form on `B(l,j) = w.l I + D_j`), and the second-order conditions on
//! the 4x4 operators `A^±(l,j,j')`. Index scans are pruned by the resonance
//! localization bounds (`j <~ <l>`, `j, j' <~ <l>^{tau*}` for differences),
//! with the implied constant exposed as a configuration multiplier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::{homological_matrix, Block2x2};
use crate::context::{angle_l, LBuf, LGrid, MAX_NU};
use crate::error::{Error, Result};
use crate::kam::{block_or_dispersion, first_melnikov_margin, second_melnikov_margin};
use crate::toeplitz::BlockDiagonal;

/// Scan configuration. Defaults follow the final exponent choices
/// `tau* = nu + 2`, `tau = 2 tau* + nu + 1` and `gamma* = 5 gamma`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureConfig {
    pub tau_star: f64,
    pub tau: f64,
    pub gamma_star_factor: f64,
    pub l_scan: i32,
    pub j_scan: i32,
    /// Implied constant of the index-localization pruning.
    pub index_multiplier: f64,
    pub samples: usize,
    pub seed: u64,
}

impl MeasureConfig {
    pub fn defaults(nu: usize, l_max: i32, j_max: i32) -> Self {
        let tau_star = nu as f64 + 2.0;
        MeasureConfig {
            tau_star,
            tau: 2.0 * tau_star + nu as f64 + 1.0,
            gamma_star_factor: 5.0,
            l_scan: 2 * l_max,
            j_scan: j_max,
            index_multiplier: 1.0,
            samples: 10_000,
            seed: 0,
        }
    }
}

/// Margins of one sampled frequency.
#[derive(Debug, Clone, Serialize)]
pub struct CantorSample {
    pub omega: Vec<f64>,
    pub diophantine_margin: f64,
    pub first_melnikov_margin: f64,
    pub second_melnikov_minus_margin: f64,
    pub second_melnikov_plus_margin: f64,
    pub worst_l: Vec<i32>,
    pub worst_j: i32,
    pub worst_jp: i32,
    pub worst_kind: String,
    pub excluded: bool,
}

impl CantorSample {
    pub fn min_margin(&self) -> f64 {
        self.diophantine_margin
            .min(self.first_melnikov_margin)
            .min(self.second_melnikov_minus_margin)
            .min(self.second_melnikov_plus_margin)
    }
}

fn omega_dot(omega: &[f64], l: &[i32]) -> f64 {
    omega.iter().zip(l).map(|(w, &c)| w * c as f64).sum()
}

/// Evaluates the four margin families for one frequency.
pub fn sample_margins(
    omega: &[f64],
    d_inf: &BlockDiagonal,
    m: f64,
    gamma: f64,
    cfg: &MeasureConfig,
) -> CantorSample {
    let nu = omega.len();
    let grid = LGrid::new(nu, cfg.l_scan);
    let gamma_star = cfg.gamma_star_factor * gamma;
    let mut dio = f64::INFINITY;
    let mut first = f64::INFINITY;
    let mut minus = f64::INFINITY;
    let mut plus = f64::INFINITY;
    let mut worst = (f64::INFINITY, vec![0i32; nu], 0i32, 0i32, "none");
    let track = |value: f64,
                     slot: &mut f64,
                     l: &[i32],
                     j: i32,
                     jp: i32,
                     kind: &'static str,
                     worst: &mut (f64, Vec<i32>, i32, i32, &'static str)| {
        if value < *slot {
            *slot = value;
        }
        if value < worst.0 {
            *worst = (value, l.to_vec(), j, jp, kind);
        }
    };
    let mut buf: LBuf = [0; MAX_NU];
    for li in 0..grid.len() {
        let l = grid.decode(li, &mut buf).to_vec();
        let sup = l.iter().map(|c| c.abs()).max().unwrap_or(0);
        if sup == 0 {
            continue;
        }
        let wl = omega_dot(omega, &l);
        let la = angle_l(&l);
        // Diophantine: |w.l| |l|^tau / gamma
        track(
            wl.abs() * (sup as f64).powf(cfg.tau) / gamma,
            &mut dio,
            &l,
            0,
            0,
            "diophantine",
            &mut worst,
        );
        // first order, (gamma*, tau*) form on m j including j = 0
        track(
            wl.abs() * la.powf(cfg.tau_star) / gamma_star,
            &mut first,
            &l,
            0,
            0,
            "first",
            &mut worst,
        );
        let j_first = ((cfg.index_multiplier * la).floor() as i32).min(cfg.j_scan);
        for j in 1..=j_first {
            let v = (wl + m * j as f64).abs() * la.powf(cfg.tau_star) / (gamma_star * j as f64);
            track(v, &mut first, &l, j, 0, "first", &mut worst);
            // block form on B(l, j) with threshold 2 gamma <j> / <l>^tau
            let dj = block_or_dispersion(d_inf, m, j);
            let vb = first_melnikov_margin(wl, la, &dj, j, gamma, cfg.tau);
            track(vb, &mut first, &l, j, 0, "first-block", &mut worst);
        }
        // second order: differences pruned by |j - j'| <= mult <l>,
        // j, j' <= mult <l>^{tau*}
        let d_cap = (cfg.index_multiplier * la).floor() as i32;
        let jj_cap = ((cfg.index_multiplier * la.powf(cfg.tau_star)).floor() as i32).min(cfg.j_scan);
        for j in 1..=jj_cap {
            let dj = block_or_dispersion(d_inf, m, j);
            for jp in 1..=jj_cap {
                if (j - jp).abs() > d_cap {
                    continue;
                }
                let djp = block_or_dispersion(d_inf, m, jp);
                let v =
                    second_melnikov_margin(wl, la, &dj, &djp, j, jp, 2.0 * gamma, cfg.tau, false);
                track(v, &mut minus, &l, j, jp, "second-", &mut worst);
            }
        }
        // sums pruned by j, j' <= mult <l>
        let s_cap = ((cfg.index_multiplier * la).floor() as i32).min(cfg.j_scan);
        for j in 1..=s_cap {
            let dj = block_or_dispersion(d_inf, m, j);
            for jp in 1..=s_cap {
                let djp = block_or_dispersion(d_inf, m, jp);
                let v =
                    second_melnikov_margin(wl, la, &dj, &djp, j, jp, 2.0 * gamma, cfg.tau, true);
                track(v, &mut plus, &l, j, jp, "second+", &mut worst);
            }
        }
    }
    let excluded = dio.min(first).min(minus).min(plus) < 1.0;
    CantorSample {
        omega: omega.to_vec(),
        diophantine_margin: dio,
        first_melnikov_margin: first,
        second_melnikov_minus_margin: minus,
        second_melnikov_plus_margin: plus,
        worst_l: worst.1,
        worst_j: worst.2,
        worst_jp: worst.3,
        worst_kind: worst.4.to_string(),
        excluded,
    }
}

/// Aggregate exclusion statistics at one `gamma`.
#[derive(Debug, Clone, Serialize)]
pub struct ExclusionStats {
    pub gamma: f64,
    pub samples: usize,
    pub excluded: usize,
    pub excluded_fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub worst_margin: f64,
    pub worst_l: Vec<i32>,
    pub worst_j: i32,
    pub worst_jp: i32,
    pub worst_kind: String,
}

/// Wilson score interval at 95%.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    let z = 1.959963984540054f64;
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Uniform Monte Carlo over the box; deterministic given the seed regardless
/// of parallelism (per-sample counter-based randomness via RNG streams).
pub fn sample_exclusions(
    d_inf: &BlockDiagonal,
    m: f64,
    boxes: &[(f64, f64)],
    gamma: f64,
    cfg: &MeasureConfig,
) -> Result<ExclusionStats> {
    if cfg.samples == 0 {
        return Err(Error::Config("zero Monte Carlo samples".into()));
    }
    if boxes.is_empty() || boxes.iter().any(|(a, b)| b <= a) {
        return Err(Error::Config("empty frequency box".into()));
    }
    let results: Vec<(bool, f64, Vec<i32>, i32, i32, String)> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            let omega: Vec<f64> =
                boxes.iter().map(|(a, b)| a + (b - a) * rng.gen::<f64>()).collect();
            let s = sample_margins(&omega, d_inf, m, gamma, cfg);
            (s.excluded, s.min_margin(), s.worst_l, s.worst_j, s.worst_jp, s.worst_kind)
        })
        .collect();
    let excluded = results.iter().filter(|r| r.0).count();
    let worst = results
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    let (ci_low, ci_high) = wilson_interval(excluded, cfg.samples);
    Ok(ExclusionStats {
        gamma,
        samples: cfg.samples,
        excluded,
        excluded_fraction: excluded as f64 / cfg.samples as f64,
        ci_low,
        ci_high,
        worst_margin: worst.1,
        worst_l: worst.2,
        worst_j: worst.3,
        worst_jp: worst.4,
        worst_kind: worst.5,
    })
}

pub fn stats_csv(stats: &[ExclusionStats]) -> String {
    let mut out = String::from("gamma,excluded_fraction,ci_low,ci_high,worst_margin_index\n");
    for s in stats {
        out.push_str(&format!(
            "{:e},{},{},{},{}",
            s.gamma, s.excluded_fraction, s.ci_low, s.ci_high, s.worst_kind
        ));
        out.push_str(&format!(
            ":l={:?}:j={}:jp={}\n",
            s.worst_l, s.worst_j, s.worst_jp
        ));
    }
    out
}

/// Least-squares exponent of `fraction ~ C gamma^p` on a log-log fit.
pub fn fit_power_law(gammas: &[f64], fractions: &[f64]) -> f64 {
    assert_eq!(gammas.len(), fractions.len());
    let xs: Vec<f64> = gammas.iter().map(|g| g.ln()).collect();
    let ys: Vec<f64> = fractions.iter().map(|f| f.max(1e-300).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResonantKind {
    First,
    SecondMinus,
    SecondPlus,
}

/// Margin of a single family at a single index for a given frequency.
#[allow(clippy::too_many_arguments)]
fn margin_at(
    omega: &[f64],
    l: &[i32],
    j: i32,
    jp: i32,
    kind: ResonantKind,
    d_inf: &BlockDiagonal,
    m: f64,
    gamma: f64,
    tau: f64,
) -> f64 {
    let wl = omega_dot(omega, l);
    let la = angle_l(l);
    let dj = block_or_dispersion(d_inf, m, j);
    match kind {
        ResonantKind::First => first_melnikov_margin(wl, la, &dj, j, gamma, tau),
        ResonantKind::SecondMinus => {
            let djp = block_or_dispersion(d_inf, m, jp);
            second_melnikov_margin(wl, la, &dj, &djp, j, jp, 2.0 * gamma, tau, false)
        }
        ResonantKind::SecondPlus => {
            let djp = block_or_dispersion(d_inf, m, jp);
            second_melnikov_margin(wl, la, &dj, &djp, j, jp, 2.0 * gamma, tau, true)
        }
    }
}

/// Measures the width of the resonant set of one index along the line
/// `omega(s) = (l/|l|) s + v`, restricted to the box. With
/// `apply_first_filter` the first-order conditions (the `(gamma*, tau*)`
/// family) are required to hold, as in the nested-set analysis.
#[allow(clippy::too_many_arguments)]
pub fn resonant_set_width(
    l: &[i32],
    j: i32,
    jp: i32,
    kind: ResonantKind,
    d_inf: &BlockDiagonal,
    m: f64,
    gamma: f64,
    tau: f64,
    boxes: &[(f64, f64)],
    cfg: &MeasureConfig,
    apply_first_filter: bool,
) -> Result<f64> {
    let nu = l.len();
    if l.iter().all(|&c| c == 0) {
        return Err(Error::Config("resonant-set scan needs l != 0".into()));
    }
    let norm = (l.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>()).sqrt();
    let e: Vec<f64> = l.iter().map(|&c| c as f64 / norm).collect();
    // box center projected orthogonally to e as the offset v
    let center: Vec<f64> = boxes.iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let ce: f64 = center.iter().zip(&e).map(|(c, e)| c * e).sum();
    let v: Vec<f64> = center.iter().zip(&e).map(|(c, e)| c - ce * e).collect();
    // s-range keeping omega(s) inside the box
    let mut s_min = f64::NEG_INFINITY;
    let mut s_max = f64::INFINITY;
    for k in 0..nu {
        if e[k].abs() < 1e-15 {
            if v[k] < boxes[k].0 || v[k] > boxes[k].1 {
                return Ok(0.0);
            }
            continue;
        }
        let lo = (boxes[k].0 - v[k]) / e[k];
        let hi = (boxes[k].1 - v[k]) / e[k];
        s_min = s_min.max(lo.min(hi));
        s_max = s_max.min(lo.max(hi));
    }
    if s_max <= s_min {
        return Ok(0.0);
    }
    let omega_of = |s: f64| -> Vec<f64> { e.iter().zip(&v).map(|(e, v)| e * s + v).collect() };
    let gamma_star = cfg.gamma_star_factor * gamma;
    let in_set = |s: f64| -> bool {
        let om = omega_of(s);
        let fails = margin_at(&om, l, j, jp, kind, d_inf, m, gamma, tau) < 1.0;
        if !fails {
            return false;
        }
        if apply_first_filter {
            // require the (gamma*, tau*) first-order conditions at all scanned
            // indices; points outside that set are not counted
            let grid = LGrid::new(nu, cfg.l_scan);
            let mut buf: LBuf = [0; MAX_NU];
            for li in 0..grid.len() {
                let ll = grid.decode(li, &mut buf).to_vec();
                if ll.iter().all(|&c| c == 0) {
                    continue;
                }
                let wl = omega_dot(&om, &ll);
                let la = angle_l(&ll);
                let cap = ((cfg.index_multiplier * la).floor() as i32).min(cfg.j_scan);
                for jj in 0..=cap {
                    let div = (wl + m * jj as f64).abs();
                    if div * la.powf(cfg.tau_star) / (gamma_star * jj.max(1) as f64) < 1.0 {
                        return false;
                    }
                }
            }
            true
        } else {
            true
        }
    };
    // dense scan with bisection refinement at the crossings
    let n_grid = 4096usize;
    let ds = (s_max - s_min) / n_grid as f64;
    let mut width = 0.0f64;
    let mut prev_s = s_min;
    let mut prev_in = in_set(s_min);
    for k in 1..=n_grid {
        let s = s_min + k as f64 * ds;
        let now_in = in_set(s);
        if now_in == prev_in {
            if now_in {
                width += s - prev_s;
            }
        } else {
            // bisect the crossing
            let (mut a, mut b) = (prev_s, s);
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                if in_set(mid) == prev_in {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            let cross = 0.5 * (a + b);
            if prev_in {
                width += cross - prev_s;
            } else {
                width += s - cross;
            }
        }
        prev_s = s;
        prev_in = now_in;
    }
    Ok(width)
}

/// Eigenvalue route to the divisors of one second-order index: the four
/// numbers `w.l + lam_k(D_j) -+ lam_{k'}(D_j')` plus the cross-checked
/// smallest singular value of the 4x4 operator.
pub fn eigenvalue_margins(
    d_inf: &BlockDiagonal,
    m: f64,
    omega: &[f64],
    l: &[i32],
    j: i32,
    jp: i32,
    plus: bool,
) -> ([f64; 4], f64) {
    let wl = omega_dot(omega, l);
    let dj = block_or_dispersion(d_inf, m, j);
    let djp = block_or_dispersion(d_inf, m, jp);
    let la = dj.hermitian_eigenvalues();
    let lb = djp.hermitian_eigenvalues();
    let mut divisors = [0.0f64; 4];
    let mut idx = 0;
    for a in la {
        for b in lb {
            divisors[idx] = if plus { wl + a + b } else { wl + a - b };
            idx += 1;
        }
    }
    let sigma = homological_matrix(wl, &dj, &djp, plus).sigma_min();
    (divisors, sigma)
}

/// Random self-adjoint perturbation `D_j = m j I + O(eps/j)` for tests.
pub fn perturbed_blocks(m: f64, j_max: i32, eps: f64, seed: u64) -> BlockDiagonal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = BlockDiagonal::dispersion(m, j_max);
    for j in 1..=j_max {
        let mut b = Block2x2::ZERO;
        for k in 0..4 {
            b.0[k] = num_complex::Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        }
        let h = b.add(&b.adjoint()).scale(num_complex::Complex64::new(eps / j as f64, 0.0));
        *d.block_mut(j) = d.block(j).add(&h);
    }
    d
}
