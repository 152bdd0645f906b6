//! System parameters, block-fading channel realizations, channel estimation
//! error and relay transmit impairment.
//!
//! Every realization keeps the true matrices, their estimates and the error
//! draws side by side so `H = H_est + E` holds exactly. The truth is drawn
//! first (`H ~ CN(0, 1)`, `H_LI ~ CN(0, sigma_li2)`), the error second
//! (`E ~ CN(0, eps_h2)`), and the estimate is `H - E`; the estimate then has
//! per-entry variance `1 + eps_h2`, which is what the precoder normalization
//! assumes.
//!
//! Large-scale gains are log-normal with linear mean 1: with `s = sigma_db *
//! ln(10) / 10`, `beta = exp(-s^2 / 2 + s * z)` for standard normal `z`. A zero
//! `shadowing_sigma_db` disables shadowing and pins every gain to 1.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modem::Constellation;
use crate::scalar::{cplx, CMatrix, CVector, Complex, RVector, Real};

pub type SimRng = ChaCha8Rng;

/// Independent, reproducible RNG stream for `(master_seed, stream, index)`.
///
/// `stream` separates unrelated consumers (channel draws, shadowing, ...);
/// `index` is typically a trial or realization number.
pub fn stream_rng(master_seed: u64, stream: u64, index: u64) -> SimRng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&stream.to_le_bytes());
    seed[16..24].copy_from_slice(b"fdrelay\0");
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// Number of source/destination pairs `K`.
    pub pairs: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    /// Square QAM order.
    pub mod_order: usize,
    /// Per-source transmit powers, linear.
    pub p_s: Vec<f64>,
    /// Relay transmit power, linear.
    pub p_r: f64,
    pub sigma_li2: f64,
    pub sigma_nr2: f64,
    pub sigma_nd2: f64,
    pub eps_h2: f64,
    pub eps_t2: f64,
    /// Relay processing delay in symbol slots.
    pub delay: usize,
    pub shadowing_sigma_db: f64,
    pub master_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let pairs = 5;
        Self {
            pairs,
            n_rx: 64,
            n_tx: 64,
            mod_order: 16,
            p_s: vec![1.0; pairs],
            p_r: 1.0,
            sigma_li2: 1.0,
            sigma_nr2: noise_for_snr_db(8.0, pairs as f64),
            sigma_nd2: 1.0,
            eps_h2: 1e-3,
            eps_t2: 1e-3,
            delay: 1,
            shadowing_sigma_db: 0.0,
            master_seed: 1,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.pairs;
        if k == 0 {
            return Err(Error::Config("at least one pair is required".into()));
        }
        if k >= self.n_rx.min(self.n_tx) {
            return Err(Error::Config(format!(
                "K = {k} must be smaller than both N_rx = {} and N_tx = {}",
                self.n_rx, self.n_tx
            )));
        }
        if self.p_s.len() != k {
            return Err(Error::Config(format!(
                "p_s has {} entries for K = {k} pairs",
                self.p_s.len()
            )));
        }
        if self.delay == 0 {
            return Err(Error::Config("processing delay must be at least one slot".into()));
        }
        Constellation::<f64>::new(self.mod_order).map_err(|e| Error::Config(e.to_string()))?;
        let scalars = [
            ("p_r", self.p_r),
            ("sigma_li2", self.sigma_li2),
            ("sigma_nr2", self.sigma_nr2),
            ("sigma_nd2", self.sigma_nd2),
            ("eps_h2", self.eps_h2),
            ("eps_t2", self.eps_t2),
            ("shadowing_sigma_db", self.shadowing_sigma_db),
        ];
        for (name, v) in scalars.into_iter().chain(self.p_s.iter().map(|&p| ("p_s", p))) {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Square array with `n` antennas on each side.
    pub fn with_antennas(mut self, n: usize) -> Self {
        self.n_rx = n;
        self.n_tx = n;
        self
    }

    /// Sets `sigma_nr2` so the nominal relay SNR (mean gains, current `p_s`)
    /// equals `snr_db`.
    pub fn with_relay_snr_db(mut self, snr_db: f64) -> Self {
        self.sigma_nr2 = noise_for_snr_db(snr_db, self.p_s.iter().sum());
        self
    }

    pub fn with_pairs(mut self, k: usize) -> Self {
        self.pairs = k;
        self.p_s = vec![1.0; k];
        self
    }
}

/// Noise variance giving `snr_db` for a total received source power.
pub fn noise_for_snr_db(snr_db: f64, total_source_power: f64) -> f64 {
    total_source_power / 10f64.powf(snr_db / 10.0)
}

/// Nominal relay SNR `10 log10(sum_k beta_k p_k / sigma_nr2)`.
///
/// Uses the mean large-scale gain (1) for every pair, so the value does not
/// depend on a particular shadowing draw.
pub fn snr_relay_db(cfg: &SystemConfig) -> Result<f64> {
    if cfg.sigma_nr2 <= 0.0 {
        return Err(Error::Domain("relay SNR needs sigma_nr2 > 0".into()));
    }
    let received: f64 = cfg.p_s.iter().sum();
    Ok(10.0 * (received / cfg.sigma_nr2).log10())
}

/// Relay SNR for a realized set of large-scale gains.
pub fn snr_relay_db_realized(p_s: &[f64], beta_sr: &[f64], sigma_nr2: f64) -> Result<f64> {
    if sigma_nr2 <= 0.0 {
        return Err(Error::Domain("relay SNR needs sigma_nr2 > 0".into()));
    }
    let received: f64 = p_s.iter().zip(beta_sr).map(|(p, b)| p * b).sum();
    Ok(10.0 * (received / sigma_nr2).log10())
}

/// One draw of `CN(0, var)`.
#[inline]
pub fn complex_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex<T> {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    cplx(T::lit(s * re), T::lit(s * im))
}

/// Matrix with i.i.d. `CN(0, var)` entries, filled column by column.
pub fn complex_normal_matrix<T: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    var: f64,
    rng: &mut R,
) -> CMatrix<T> {
    if var == 0.0 {
        return DMatrix::zeros(rows, cols);
    }
    DMatrix::from_fn(rows, cols, |_, _| complex_normal(rng, var))
}

/// Log-normal large-scale gains with linear mean 1 and the given dB spread.
pub fn draw_large_scale<T: Real, R: Rng + ?Sized>(k: usize, sigma_db: f64, rng: &mut R) -> RVector<T> {
    if sigma_db == 0.0 {
        return DVector::from_element(k, T::one());
    }
    let s = sigma_db * std::f64::consts::LN_10 / 10.0;
    DVector::from_fn(k, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        T::lit((-0.5 * s * s + s * z).exp())
    })
}

/// One block-fading realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet<T: Real> {
    /// `N_rx x K`
    pub h_sr: CMatrix<T>,
    /// `K x N_tx`
    pub h_rd: CMatrix<T>,
    /// `N_rx x N_tx`
    pub h_li: CMatrix<T>,
    pub h_sr_est: CMatrix<T>,
    pub h_rd_est: CMatrix<T>,
    pub h_li_est: CMatrix<T>,
    pub err_sr: CMatrix<T>,
    pub err_rd: CMatrix<T>,
    pub err_li: CMatrix<T>,
    pub beta_sr: RVector<T>,
    pub beta_rd: RVector<T>,
}

fn scale_cols<T: Real>(m: &CMatrix<T>, beta: &RVector<T>) -> CMatrix<T> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= Complex::new(beta[j].sqrt(), T::zero());
    }
    out
}

fn scale_rows<T: Real>(m: &CMatrix<T>, beta: &RVector<T>) -> CMatrix<T> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= Complex::new(beta[i].sqrt(), T::zero());
    }
    out
}

impl<T: Real> ChannelSet<T> {
    /// Draws large-scale gains and small-scale fading.
    pub fn draw<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Self {
        let beta_sr = draw_large_scale(cfg.pairs, cfg.shadowing_sigma_db, rng);
        let beta_rd = draw_large_scale(cfg.pairs, cfg.shadowing_sigma_db, rng);
        Self::draw_small_scale(cfg, beta_sr, beta_rd, rng)
    }

    /// Draws small-scale fading for fixed large-scale gains.
    pub fn draw_small_scale<R: Rng + ?Sized>(
        cfg: &SystemConfig,
        beta_sr: RVector<T>,
        beta_rd: RVector<T>,
        rng: &mut R,
    ) -> Self {
        let (k, nr, nt) = (cfg.pairs, cfg.n_rx, cfg.n_tx);
        let h_sr = complex_normal_matrix(nr, k, 1.0, rng);
        let h_rd = complex_normal_matrix(k, nt, 1.0, rng);
        let h_li = complex_normal_matrix(nr, nt, cfg.sigma_li2, rng);
        let err_sr = complex_normal_matrix(nr, k, cfg.eps_h2, rng);
        let err_rd = complex_normal_matrix(k, nt, cfg.eps_h2, rng);
        let err_li = complex_normal_matrix(nr, nt, cfg.eps_h2, rng);
        Self {
            h_sr_est: &h_sr - &err_sr,
            h_rd_est: &h_rd - &err_rd,
            h_li_est: &h_li - &err_li,
            h_sr,
            h_rd,
            h_li,
            err_sr,
            err_rd,
            err_li,
            beta_sr,
            beta_rd,
        }
    }

    pub fn pairs(&self) -> usize {
        self.h_sr.ncols()
    }

    /// True `G_SR = H_SR D_SR^{1/2}`.
    pub fn g_sr(&self) -> CMatrix<T> {
        scale_cols(&self.h_sr, &self.beta_sr)
    }

    pub fn g_sr_est(&self) -> CMatrix<T> {
        scale_cols(&self.h_sr_est, &self.beta_sr)
    }

    /// True `G_RD = D_RD^{1/2} H_RD`.
    pub fn g_rd(&self) -> CMatrix<T> {
        scale_rows(&self.h_rd, &self.beta_rd)
    }

    pub fn g_rd_est(&self) -> CMatrix<T> {
        scale_rows(&self.h_rd_est, &self.beta_rd)
    }
}

/// Channel realization for `trial` drawn from the config's master seed.
pub fn draw_channels<T: Real>(cfg: &SystemConfig, trial: u64) -> ChannelSet<T> {
    let mut rng = stream_rng(cfg.master_seed, streams::CHANNEL, trial);
    ChannelSet::draw(cfg, &mut rng)
}

/// Adds the relay hardware error `e ~ CN(0, eps_t2 I)` to a transmit vector.
pub fn apply_tx_impairment<T: Real, R: Rng + ?Sized>(
    t: &CVector<T>,
    eps_t2: f64,
    rng: &mut R,
) -> CVector<T> {
    if eps_t2 == 0.0 {
        return t.clone();
    }
    t.map(|v| v + complex_normal::<T, _>(rng, eps_t2))
}

/// Stream identifiers for [`stream_rng`].
pub mod streams {
    pub const CHANNEL: u64 = 1;
    pub const BLOCK: u64 = 2;
    pub const SHADOWING: u64 = 3;
    pub const COEFFICIENTS: u64 = 4;
    pub const TARGETS: u64 = 5;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::norm_sqr;

    fn cfg() -> SystemConfig {
        SystemConfig::default().with_antennas(8).with_pairs(2)
    }

    #[test]
    fn zero_estimation_error_gives_exact_estimates() {
        let mut c = cfg();
        c.eps_h2 = 0.0;
        let ch: ChannelSet<f64> = draw_channels(&c, 3);
        assert_eq!(ch.h_sr, ch.h_sr_est);
        assert_eq!(ch.h_rd, ch.h_rd_est);
        assert_eq!(ch.h_li, ch.h_li_est);
    }

    #[test]
    fn estimate_plus_error_is_truth() {
        let mut c = cfg();
        c.eps_h2 = 0.1;
        let ch: ChannelSet<f64> = draw_channels(&c, 0);
        assert!((&ch.h_sr - &ch.h_sr_est - &ch.err_sr).norm() < 1e-14);
        assert!((&ch.h_rd - &ch.h_rd_est - &ch.err_rd).norm() < 1e-14);
        assert!((&ch.h_li - &ch.h_li_est - &ch.err_li).norm() < 1e-14);
    }

    #[test]
    fn deterministic_per_seed_and_trial() {
        let c = cfg();
        let a: ChannelSet<f64> = draw_channels(&c, 17);
        let b: ChannelSet<f64> = draw_channels(&c, 17);
        let other: ChannelSet<f64> = draw_channels(&c, 18);
        assert_eq!(a, b);
        assert_ne!(a.h_sr, other.h_sr);
    }

    #[test]
    fn entry_variances() {
        let mut c = cfg();
        c.sigma_li2 = 0.5;
        c.eps_h2 = 0.2;
        let (mut sr, mut li, mut err, mut est) = (0.0, 0.0, 0.0, 0.0);
        let draws = 10_000;
        for t in 0..draws {
            let ch: ChannelSet<f64> = draw_channels(&c, t);
            sr += ch.h_sr.iter().map(|z| norm_sqr(*z)).sum::<f64>() / 16.0;
            li += ch.h_li.iter().map(|z| norm_sqr(*z)).sum::<f64>() / 64.0;
            err += ch.err_rd.iter().map(|z| norm_sqr(*z)).sum::<f64>() / 16.0;
            est += ch.h_rd_est.iter().map(|z| norm_sqr(*z)).sum::<f64>() / 16.0;
        }
        let n = draws as f64;
        assert!((sr / n - 1.0).abs() < 0.05);
        assert!((li / n - 0.5).abs() < 0.05 * 0.5);
        assert!((err / n - 0.2).abs() < 0.05 * 0.2);
        assert!((est / n - 1.2).abs() < 0.05 * 1.2);
    }

    #[test]
    fn shadowing_disabled_gives_unit_gains() {
        let ch: ChannelSet<f64> = draw_channels(&cfg(), 5);
        assert!(ch.beta_sr.iter().chain(ch.beta_rd.iter()).all(|&b| b == 1.0));
    }

    #[test]
    fn log_normal_gains_have_unit_mean() {
        let mut rng = stream_rng(9, 0, 0);
        let n = 200_000;
        let b: RVector<f64> = draw_large_scale(n, 6.0, &mut rng);
        assert!(b.iter().all(|&x| x > 0.0));
        let mean = b.sum() / n as f64;
        // Var of a unit-mean log-normal is exp(s^2) - 1 ~ 5.7 at 6 dB.
        assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
        let db_std = {
            let db: Vec<f64> = b.iter().map(|x| 10.0 * x.log10()).collect();
            let m = db.iter().sum::<f64>() / n as f64;
            (db.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt()
        };
        assert!((db_std - 6.0).abs() < 0.05);
    }

    #[test]
    fn impairment_power_and_independence() {
        let n_tx = 16;
        let eps = 0.01;
        let draws = 10_000;
        let mut rng = stream_rng(4, 0, 0);
        let mut power = 0.0;
        let mut cross = Complex::new(0.0, 0.0);
        let mut cross_sq = 0.0;
        for _ in 0..draws {
            let t: CVector<f64> = DVector::from_fn(n_tx, |_, _| complex_normal(&mut rng, 1.0));
            let out = apply_tx_impairment(&t, eps, &mut rng);
            let e = &out - &t;
            power += e.norm_squared();
            // Per-draw sample of E[e_0 conj(t_0)].
            let s = e[0] * t[0].conj();
            cross += s;
            cross_sq += s.norm_sqr();
        }
        let n = draws as f64;
        assert!((power / n - n_tx as f64 * eps).abs() < 0.05 * n_tx as f64 * eps);
        let mean = cross / n;
        let se = (cross_sq / n / n).sqrt();
        assert!(mean.norm() < 3.0 * se, "cross {mean} vs se {se}");
    }

    #[test]
    fn impairment_noop_at_zero() {
        let mut rng = stream_rng(4, 0, 0);
        let t: CVector<f64> = DVector::from_fn(4, |i, _| Complex::new(i as f64, 1.0));
        assert_eq!(apply_tx_impairment(&t, 0.0, &mut rng), t);
    }

    #[test]
    fn relay_snr() {
        let mut c = SystemConfig { sigma_nr2: 1.0, ..Default::default() };
        assert!((snr_relay_db(&c).unwrap() - 10.0 * 5f64.log10()).abs() < 1e-12);
        let c8 = SystemConfig::default().with_relay_snr_db(8.0);
        assert!((c8.sigma_nr2 - 5.0 / 10f64.powf(0.8)).abs() < 1e-12);
        assert!((snr_relay_db(&c8).unwrap() - 8.0).abs() < 1e-12);
        let mut doubled = c.clone();
        doubled.p_s.iter_mut().for_each(|p| *p *= 2.0);
        let gain = snr_relay_db(&doubled).unwrap() - snr_relay_db(&c).unwrap();
        assert!((gain - 3.0103).abs() < 1e-4);
        c.sigma_nr2 = 0.0;
        assert!(snr_relay_db(&c).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::default().validate().is_ok());
        let bad = SystemConfig::default().with_pairs(64).with_antennas(32);
        assert!(bad.validate().is_err());
        let neg = SystemConfig { eps_h2: -1.0, ..Default::default() };
        assert!(neg.validate().is_err());
        let d0 = SystemConfig { delay: 0, ..Default::default() };
        assert!(d0.validate().is_err());
    }
}
