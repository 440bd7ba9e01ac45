//! Frequency context and multi-index grids.
//!
//! Everything in this crate lives on truncated Fourier grids: time indices
//! `l` range over the box `|l|_inf <= half` in `Z^nu`, space indices `j` over
//! `|j| <= j_max`. [`LGrid`] linearizes the time box; [`FrequencyContext`]
//! carries the frequency vector `omega`, the non-resonance constants
//! `(gamma, tau)` and the truncation sizes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on the number of base frequencies; keeps index buffers on the stack.
pub const MAX_NU: usize = 8;

/// Scratch buffer for a decoded time index.
pub type LBuf = [i32; MAX_NU];

/// Rectangular grid of time-Fourier indices `l ∈ Z^nu`, `|l|_inf <= half`,
/// linearized in row-major order with component range `-half ..= half`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LGrid {
    nu: usize,
    half: i32,
}

impl LGrid {
    pub fn new(nu: usize, half: i32) -> Self {
        assert!((1..=MAX_NU).contains(&nu), "nu out of range");
        assert!(half >= 0, "negative grid half-width");
        LGrid { nu, half }
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn half(&self) -> i32 {
        self.half
    }

    /// Number of points per component.
    pub fn side(&self) -> usize {
        (2 * self.half + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.nu as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, l: &[i32]) -> bool {
        l.len() == self.nu && l.iter().all(|&c| c.abs() <= self.half)
    }

    pub fn index(&self, l: &[i32]) -> Option<usize> {
        if !self.contains(l) {
            return None;
        }
        let side = self.side();
        let mut idx = 0usize;
        for &c in l.iter() {
            idx = idx * side + (c + self.half) as usize;
        }
        Some(idx)
    }

    /// Decodes a linear index into `buf[..nu]` and returns that slice.
    pub fn decode<'a>(&self, mut idx: usize, buf: &'a mut LBuf) -> &'a [i32] {
        let side = self.side();
        for k in (0..self.nu).rev() {
            buf[k] = (idx % side) as i32 - self.half;
            idx /= side;
        }
        &buf[..self.nu]
    }

    /// Linear index of `l_a - l_b`, if it stays on the grid.
    pub fn sub(&self, a: usize, b: usize) -> Option<usize> {
        let mut ba = [0i32; MAX_NU];
        let mut bb = [0i32; MAX_NU];
        self.decode(a, &mut ba);
        self.decode(b, &mut bb);
        for k in 0..self.nu {
            ba[k] -= bb[k];
        }
        self.index(&ba[..self.nu])
    }

    /// Linear index of `-l`; always on the grid.
    pub fn neg(&self, a: usize) -> usize {
        let mut b = [0i32; MAX_NU];
        self.decode(a, &mut b);
        for c in b[..self.nu].iter_mut() {
            *c = -*c;
        }
        self.index(&b[..self.nu]).expect("negation stays on grid")
    }

    /// Sup norm `|l|_inf` of the decoded index.
    pub fn sup_norm(&self, a: usize) -> i32 {
        let mut b = [0i32; MAX_NU];
        self.decode(a, &mut b);
        b[..self.nu].iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    /// Iterates over (linear index, decoded components).
    pub fn iter(&self) -> impl Iterator<Item = (usize, LBuf)> + '_ {
        (0..self.len()).map(move |i| {
            let mut b = [0i32; MAX_NU];
            self.decode(i, &mut b);
            (i, b)
        })
    }

    /// Embeds a linear index of `self` into a (possibly wider) grid `other`.
    pub fn embed(&self, a: usize, other: &LGrid) -> Option<usize> {
        let mut b = [0i32; MAX_NU];
        self.decode(a, &mut b);
        other.index(&b[..self.nu])
    }
}

/// `<l> = max(1, |l|_inf)`.
pub fn angle_l(l: &[i32]) -> f64 {
    l.iter().map(|c| c.abs()).max().unwrap_or(0).max(1) as f64
}

/// `<l, k> = max(1, |l|_inf, |k|)`.
pub fn angle_lk(l: &[i32], k: i32) -> f64 {
    let m = l.iter().map(|c| c.abs()).max().unwrap_or(0).max(k.abs()).max(1);
    m as f64
}

/// Frequency vector with its non-resonance bookkeeping and truncation sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyContext {
    pub nu: usize,
    pub omega: Vec<f64>,
    pub gamma: f64,
    pub tau: f64,
    pub l_max: i32,
    pub j_max: i32,
}

impl FrequencyContext {
    pub fn new(omega: Vec<f64>, gamma: f64, tau: f64, l_max: i32, j_max: i32) -> Result<Self> {
        let nu = omega.len();
        if nu == 0 || nu > MAX_NU {
            return Err(Error::Config(format!("nu = {nu} out of range 1..={MAX_NU}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!("gamma = {gamma} must lie in (0,1)")));
        }
        if tau <= 0.0 {
            return Err(Error::Config(format!("tau = {tau} must be positive")));
        }
        if l_max < 1 || j_max < 1 {
            return Err(Error::Config("l_max and j_max must be >= 1".into()));
        }
        Ok(FrequencyContext { nu, omega, gamma, tau, l_max, j_max })
    }

    /// `s0 = floor((nu+1)/2) + 1`, the low Sobolev index of the scheme.
    #[allow(clippy::manual_div_ceil)]
    pub fn s0(&self) -> f64 {
        ((self.nu + 1) / 2 + 1) as f64
    }

    /// Grid for fields: `|l|_inf <= l_max`.
    pub fn field_grid(&self) -> LGrid {
        LGrid::new(self.nu, self.l_max)
    }

    /// Grid for operators: `|l|_inf <= 2 l_max`, so that one product of two
    /// band-`l_max` operators is exactly representable.
    pub fn op_grid(&self) -> LGrid {
        LGrid::new(self.nu, 2 * self.l_max)
    }

    pub fn omega_dot(&self, l: &[i32]) -> f64 {
        self.omega.iter().zip(l).map(|(w, &c)| w * c as f64).sum()
    }

    /// Minimum of `|omega . l| |l|_inf^tau / gamma` over `0 < |l|_inf <= l_scan`,
    /// together with the minimizing index. Membership in the truncated
    /// Diophantine set means margin >= 1.
    pub fn diophantine_margin(&self, l_scan: i32) -> (f64, Vec<i32>) {
        let grid = LGrid::new(self.nu, l_scan);
        let mut best = f64::INFINITY;
        let mut best_l = vec![0i32; self.nu];
        for (_, buf) in grid.iter() {
            let l = &buf[..self.nu];
            let sup = l.iter().map(|c| c.abs()).max().unwrap_or(0);
            if sup == 0 {
                continue;
            }
            let margin = self.omega_dot(l).abs() * (sup as f64).powf(self.tau) / self.gamma;
            if margin < best {
                best = margin;
                best_l.copy_from_slice(l);
            }
        }
        (best, best_l)
    }

    /// Truncated membership test for the Diophantine set, scanned over
    /// `|l| <= 2 l_max` (the largest index any truncated computation touches).
    pub fn is_diophantine(&self) -> bool {
        self.diophantine_margin(2 * self.l_max).0 >= 1.0
    }
}
