//! Per-pair achievable rates from Monte Carlo channel statistics.
//!
//! After the relay filters, the signal of pair `k` on each hop is a mean gain
//! times the wanted symbol plus an effective noise that is treated as
//! Gaussian. The statistics entering the two SINRs are estimated over small-
//! scale fading and estimation error with the large-scale gains and powers
//! held fixed:
//!
//! | hop | coefficient | definition |
//! |-----|-------------|------------|
//! | SR  | `mv`  | `|E{b_k g_k}|^2`, `b_k` row `k` of `W_zf F_rx`, `g_k` true column |
//! | SR  | `v`   | `Var{b_k g_k}` |
//! | SR  | `mp`  | `E{|b_k g_j|^2}` for `j != k` |
//! | SR  | `li`  | `E{||b_k H_LI F_tx A_zf||^2}` |
//! | SR  | `an`  | `sigma_nr2 E{||b_k||^2}` |
//! | RD  | `mv`  | `|E{g_k^T a_k}|^2`, `a_k` column `k` of `F_tx A_zf` |
//! | RD  | `v`   | `Var{g_k^T a_k}` |
//! | RD  | `mp`  | `sum_{j != k} E{|g_k^T a_j|^2}` |
//! | RD  | `an`  | `sigma_nd2` |

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{stream_rng, ChannelSet, SystemConfig};
use crate::error::{Error, Result};
use crate::filters::{build_filters, FilterMode};
use crate::scalar::{norm_sqr, row_norm_sqr, Complex, RVector, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCoefficients<T: Real> {
    pub mv_sr: RVector<T>,
    pub v_sr: RVector<T>,
    /// `mp_sr[(k, j)]`; the diagonal is zero.
    pub mp_sr: DMatrix<T>,
    pub li_sr: RVector<T>,
    pub an_sr: RVector<T>,
    pub mv_rd: RVector<T>,
    pub v_rd: RVector<T>,
    pub mp_rd: RVector<T>,
    pub an_rd: RVector<T>,
    pub samples: usize,
    pub singular: usize,
}

impl<T: Real> RateCoefficients<T> {
    pub fn pairs(&self) -> usize {
        self.mv_sr.len()
    }

    /// Coefficients of `k` pairs that share the same statistics; handy for
    /// building synthetic problems.
    pub fn uniform(k: usize, sr: [T; 5], rd: [T; 4]) -> Self {
        let [mv, v, mp, li, an] = sr;
        let [mv_rd, v_rd, mp_rd, an_rd] = rd;
        let mut mp_sr = DMatrix::from_element(k, k, mp);
        mp_sr.fill_diagonal(T::zero());
        Self {
            mv_sr: DVector::from_element(k, mv),
            v_sr: DVector::from_element(k, v),
            mp_sr,
            li_sr: DVector::from_element(k, li),
            an_sr: DVector::from_element(k, an),
            mv_rd: DVector::from_element(k, mv_rd),
            v_rd: DVector::from_element(k, v_rd),
            mp_rd: DVector::from_element(k, mp_rd),
            an_rd: DVector::from_element(k, an_rd),
            samples: 0,
            singular: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mv_sr
            .iter()
            .chain(self.v_sr.iter())
            .chain(self.mp_sr.iter())
            .chain(self.li_sr.iter())
            .chain(self.an_sr.iter())
            .chain(self.mv_rd.iter())
            .chain(self.v_rd.iter())
            .chain(self.mp_rd.iter())
            .chain(self.an_rd.iter())
            .all(|v| v.is_finite())
    }
}

/// Instantaneous quantities of one realization.
struct Snapshot<T: Real> {
    sr: DMatrix<Complex<T>>,
    li: Vec<T>,
    comb_norm: Vec<T>,
    rd: DMatrix<Complex<T>>,
}

/// Estimates the rate coefficients over `n_it` realizations with fixed
/// large-scale gains, filters built for `mode` at powers `(p_s, p_r)`.
///
/// Realization `r` uses the RNG stream `(cfg.master_seed, stream, r)`.
/// Singular realizations are skipped and counted.
#[allow(clippy::too_many_arguments)]
pub fn estimate_coefficients<T: Real>(
    cfg: &SystemConfig,
    beta_sr: &RVector<T>,
    beta_rd: &RVector<T>,
    mode: FilterMode,
    p_s: &[f64],
    p_r: f64,
    n_it: usize,
    stream: u64,
) -> Result<RateCoefficients<T>> {
    if n_it == 0 {
        return Err(Error::InvalidInput("at least one realization is required".into()));
    }
    let k = cfg.pairs;
    if p_s.len() != k {
        return Err(Error::Shape(format!("{} source powers for K = {k}", p_s.len())));
    }
    let snapshots: Vec<Option<Snapshot<T>>> = (0..n_it as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(cfg.master_seed, stream, r);
            let ch = ChannelSet::<T>::draw_small_scale(cfg, beta_sr.clone(), beta_rd.clone(), &mut rng);
            let f = match build_filters(&ch, cfg, mode, p_s, p_r, false) {
                Ok(f) => f,
                Err(Error::Singular { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let sr = &f.combiner * ch.g_sr();
            let li = if mode == FilterMode::Hd {
                vec![T::zero(); k]
            } else {
                let m = &f.combiner * &ch.h_li * &f.precoder;
                (0..k).map(|i| row_norm_sqr(&m, i)).collect()
            };
            let comb_norm = (0..k).map(|i| row_norm_sqr(&f.combiner, i)).collect();
            let rd = ch.g_rd() * &f.precoder;
            Ok(Some(Snapshot { sr, li, comb_norm, rd }))
        })
        .collect::<Result<_>>()?;

    let zero_c = Complex::new(T::zero(), T::zero());
    let mut mean_sr = vec![zero_c; k];
    let mut pow_sr = vec![T::zero(); k];
    let mut mp_sr = DMatrix::<T>::zeros(k, k);
    let mut li = vec![T::zero(); k];
    let mut comb = vec![T::zero(); k];
    let mut mean_rd = vec![zero_c; k];
    let mut pow_rd = vec![T::zero(); k];
    let mut mp_rd = vec![T::zero(); k];
    let mut used = 0usize;

    // Sequential accumulation keeps the sums independent of thread scheduling.
    for s in snapshots.iter().flatten() {
        used += 1;
        for i in 0..k {
            mean_sr[i] += s.sr[(i, i)];
            pow_sr[i] += norm_sqr(s.sr[(i, i)]);
            mean_rd[i] += s.rd[(i, i)];
            pow_rd[i] += norm_sqr(s.rd[(i, i)]);
            li[i] += s.li[i];
            comb[i] += s.comb_norm[i];
            for j in 0..k {
                if j != i {
                    mp_sr[(i, j)] += norm_sqr(s.sr[(i, j)]);
                    mp_rd[i] += norm_sqr(s.rd[(i, j)]);
                }
            }
        }
    }
    if used == 0 {
        return Err(Error::Singular { what: "every realization", rcond: 0.0 });
    }
    let n = T::lit(used as f64);
    let sigma_nr2 = T::lit(cfg.sigma_nr2);
    let stats = |mean: Complex<T>, pow: T| -> (T, T) {
        let m = norm_sqr(mean / Complex::new(n, T::zero()));
        let v = pow / n - m;
        (m, if v > T::zero() { v } else { T::zero() })
    };

    let mut out = RateCoefficients::uniform(k, [T::zero(); 5], [T::zero(); 4]);
    for i in 0..k {
        let (mv, v) = stats(mean_sr[i], pow_sr[i]);
        out.mv_sr[i] = mv;
        out.v_sr[i] = v;
        out.li_sr[i] = li[i] / n;
        out.an_sr[i] = sigma_nr2 * comb[i] / n;
        let (mv, v) = stats(mean_rd[i], pow_rd[i]);
        out.mv_rd[i] = mv;
        out.v_rd[i] = v;
        out.mp_rd[i] = mp_rd[i] / n;
        out.an_rd[i] = T::lit(cfg.sigma_nd2);
    }
    out.mp_sr = mp_sr / n;
    out.samples = used;
    out.singular = n_it - used;
    Ok(out)
}

fn log2_1p<T: Real>(sinr: T) -> T {
    (T::one() + sinr).log2()
}

fn checked_rate<T: Real>(num: T, den: T, what: &str, k: usize) -> T {
    if num == T::zero() {
        if den == T::zero() {
            log::debug!("{what} rate of pair {k}: 0/0 treated as zero");
        }
        return T::zero();
    }
    log2_1p(num / den)
}

/// SINR terms of the source-relay hop of pair `k`.
pub fn sinr_sr_terms<T: Real>(k: usize, c: &RateCoefficients<T>, p_s: &[T], p_r: T) -> (T, T) {
    let interpair = (0..c.pairs())
        .filter(|&j| j != k)
        .fold(T::zero(), |acc, j| acc + p_s[j] * c.mp_sr[(k, j)]);
    let num = p_s[k] * c.mv_sr[k];
    let den = p_s[k] * c.v_sr[k] + interpair + p_r * c.li_sr[k] + c.an_sr[k];
    (num, den)
}

/// SINR terms of the relay-destination hop of pair `k`.
pub fn sinr_rd_terms<T: Real>(k: usize, c: &RateCoefficients<T>, p_r: T) -> (T, T) {
    let num = p_r * c.mv_rd[k];
    let den = p_r * c.v_rd[k] + p_r * c.mp_rd[k] + c.an_rd[k];
    (num, den)
}

/// Source-relay rate of pair `k` in bit/s/Hz.
pub fn rate_sr<T: Real>(k: usize, c: &RateCoefficients<T>, p_s: &[T], p_r: T) -> T {
    let (num, den) = sinr_sr_terms(k, c, p_s, p_r);
    checked_rate(num, den, "source-relay", k)
}

/// Relay-destination rate of pair `k` in bit/s/Hz.
pub fn rate_rd<T: Real>(k: usize, c: &RateCoefficients<T>, p_r: T) -> T {
    let (num, den) = sinr_rd_terms(k, c, p_r);
    checked_rate(num, den, "relay-destination", k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport<T: Real> {
    pub r_sr: Vec<T>,
    pub r_rd: Vec<T>,
    /// `min(r_sr, r_rd)` per pair.
    pub r: Vec<T>,
    pub sum_rate: T,
}

pub fn rate_report<T: Real>(c: &RateCoefficients<T>, p_s: &[T], p_r: T) -> RateReport<T> {
    let k = c.pairs();
    let r_sr: Vec<T> = (0..k).map(|i| rate_sr(i, c, p_s, p_r)).collect();
    let r_rd: Vec<T> = (0..k).map(|i| rate_rd(i, c, p_r)).collect();
    let r: Vec<T> = r_sr.iter().zip(&r_rd).map(|(a, b)| a.min(*b)).collect();
    let sum_rate = r.iter().fold(T::zero(), |acc, x| acc + *x);
    RateReport { r_sr, r_rd, r, sum_rate }
}

/// `sum_k R_k / (p_R + sum_k p_S,k)`.
pub fn energy_efficiency<T: Real>(report: &RateReport<T>, p_s: &[T], p_r: T) -> Result<T> {
    let total = p_s.iter().fold(p_r, |acc, p| acc + *p);
    if !(total > T::zero()) {
        return Err(Error::Domain("energy efficiency needs positive total power".into()));
    }
    Ok(report.sum_rate / total)
}
