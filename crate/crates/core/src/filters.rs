//! Per-realization linear processing at the relay: ZF detector and precoder,
//! the precoder power normalization, the MMSE loopback-suppression receive
//! filter, the MSE objective it minimizes, and the null-space residual
//! diagnostic.

use nalgebra::linalg::{Cholesky, SymmetricEigen};
use nalgebra::{DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSet, SystemConfig};
use crate::error::{Error, Result};
use crate::scalar::{creal, frob_sqr, CMatrix, Complex, RVector, Real};

/// Reciprocal condition number below which a Gram matrix counts as singular.
pub const RCOND_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    /// MMSE receive filter, identity transmit filter.
    Mmse,
    /// Natural isolation: no loopback processing.
    Ni,
    /// Half duplex: identity filters, relay silent while receiving.
    Hd,
}

impl FilterMode {
    pub const ALL: [FilterMode; 3] = [FilterMode::Mmse, FilterMode::Ni, FilterMode::Hd];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterMode::Mmse => "mmse",
            FilterMode::Ni => "ni",
            FilterMode::Hd => "hd",
        }
    }
}

impl std::fmt::Display for FilterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mmse" => Ok(FilterMode::Mmse),
            "ni" => Ok(FilterMode::Ni),
            "hd" => Ok(FilterMode::Hd),
            other => Err(Error::InvalidInput(format!("unknown filter mode '{other}'"))),
        }
    }
}

/// Filters for one channel realization.
#[derive(Debug, Clone)]
pub struct FilterSet<T: Real> {
    pub mode: FilterMode,
    /// `K x N_rx`
    pub w_zf: CMatrix<T>,
    /// `N_tx x K`
    pub a_zf: CMatrix<T>,
    pub alpha_zf: T,
    /// Explicit receive filter; `None` is the identity.
    pub f_rx: Option<CMatrix<T>>,
    /// Explicit transmit prefilter; `None` is the identity.
    pub f_tx: Option<CMatrix<T>>,
    /// `W_zf F_rx`, the full receive chain before quantization.
    pub combiner: CMatrix<T>,
    /// `F_tx A_zf`, the full transmit chain.
    pub precoder: CMatrix<T>,
}

impl<T: Real> FilterSet<T> {
    /// Relay is silent while receiving.
    pub fn silences_relay(&self) -> bool {
        self.mode == FilterMode::Hd
    }
}

/// Cholesky factor of a Hermitian matrix with an eigenvalue-based
/// reciprocal condition check.
fn factor_gram<T: Real>(gram: CMatrix<T>, what: &'static str) -> Result<Cholesky<Complex<T>, Dyn>> {
    let eig = SymmetricEigen::new(gram.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
            let v = v.to_f64_lossy();
            (lo.min(v), hi.max(v.abs()))
        });
    let rcond = if hi > 0.0 { lo / hi } else { 0.0 };
    if !(rcond >= RCOND_THRESHOLD) {
        return Err(Error::Singular { what, rcond });
    }
    Cholesky::new(gram).ok_or(Error::Singular { what, rcond })
}

/// `W_zf = (G^H G)^{-1} G^H` for the estimated source-relay channel.
pub fn zf_detector<T: Real>(g_sr_est: &CMatrix<T>) -> Result<CMatrix<T>> {
    let gh = g_sr_est.adjoint();
    let chol = factor_gram(&gh * g_sr_est, "source-relay Gram matrix")?;
    Ok(chol.solve(&gh))
}

/// Precoder normalization `sqrt((N_tx - K) / sum_k (beta_k (1 + eps_h2))^{-1})`.
pub fn alpha_zf<T: Real>(beta_rd: &[T], eps_h2: T, n_tx: usize, k: usize) -> Result<T> {
    if n_tx <= k {
        return Err(Error::Domain(format!("alpha_zf needs N_tx > K (N_tx = {n_tx}, K = {k})")));
    }
    if beta_rd.len() != k {
        return Err(Error::Shape(format!("{} large-scale gains for K = {k}", beta_rd.len())));
    }
    if beta_rd.iter().any(|b| !(*b > T::zero())) {
        return Err(Error::Domain("large-scale gains must be positive".into()));
    }
    let inv_sum = beta_rd
        .iter()
        .fold(T::zero(), |acc, &b| acc + T::one() / (b * (T::one() + eps_h2)));
    Ok((T::lit((n_tx - k) as f64) / inv_sum).sqrt())
}

/// `A_zf = alpha G^H (G G^H)^{-1}` for the estimated relay-destination channel.
pub fn zf_precoder<T: Real>(g_rd_est: &CMatrix<T>, alpha: T) -> Result<CMatrix<T>> {
    let chol = factor_gram(g_rd_est * g_rd_est.adjoint(), "relay-destination Gram matrix")?;
    // (G G^H)^{-1} is Hermitian, so G^H (G G^H)^{-1} = ((G G^H)^{-1} G)^H.
    let mut a = chol.solve(g_rd_est).adjoint();
    a *= creal(alpha);
    Ok(a)
}

/// `H H^H` through real products, which reach the optimized real GEMM.
pub fn outer_gram<T: Real>(h: &CMatrix<T>) -> CMatrix<T> {
    let re: DMatrix<T> = h.map(|z| z.re);
    let im: DMatrix<T> = h.map(|z| z.im);
    let re_t = re.transpose();
    let im_t = im.transpose();
    let real = &re * &re_t + &im * &im_t;
    let imag = &im * &re_t - &re * &im_t;
    DMatrix::from_fn(h.nrows(), h.nrows(), |i, j| Complex::new(real[(i, j)], imag[(i, j)]))
}

/// Relay transmit covariance `F_tx A R_x A^H F_tx^H + eps_t2 I` with `R_x = I`.
pub fn tx_covariance<T: Real>(precoder: &CMatrix<T>, eps_t2: T) -> CMatrix<T> {
    let mut r = precoder * precoder.adjoint();
    for i in 0..r.nrows() {
        r[(i, i)] += creal(eps_t2);
    }
    r
}

/// Desired-signal covariance `G D_pS G^H`.
fn signal_covariance<T: Real>(g_sr_est: &CMatrix<T>, p_s: &RVector<T>) -> CMatrix<T> {
    let mut scaled = g_sr_est.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= creal(p_s[j]);
    }
    scaled * g_sr_est.adjoint()
}

fn check_mmse_inputs<T: Real>(
    g_sr_est: &CMatrix<T>,
    p_s: &RVector<T>,
    h_li_est: &CMatrix<T>,
    p_r: T,
) -> Result<()> {
    let n = g_sr_est.nrows();
    if p_s.len() != g_sr_est.ncols() || h_li_est.nrows() != n {
        return Err(Error::Shape(format!(
            "G_SR {}x{}, p_s {}, H_LI {}x{}",
            n,
            g_sr_est.ncols(),
            p_s.len(),
            h_li_est.nrows(),
            h_li_est.ncols()
        )));
    }
    let finite = g_sr_est.iter().chain(h_li_est.iter()).all(|z| z.re.is_finite() && z.im.is_finite())
        && p_s.iter().all(|p| p.is_finite())
        && p_r.is_finite();
    if !finite {
        return Err(Error::Domain("non-finite entries in MMSE filter inputs".into()));
    }
    Ok(())
}

/// MMSE receive filter `S (S + p_R H R_t H^H + R_nr)^{-1}` with
/// `S = G D_pS G^H`, for an arbitrary transmit covariance `r_t` and noise
/// covariance `r_nr`.
///
/// The inverse is never formed: the bracketed matrix `C` is Hermitian
/// positive definite, and since `S` is Hermitian, `F^H = C^{-1} S`.
pub fn mmse_rx_filter<T: Real>(
    g_sr_est: &CMatrix<T>,
    p_s: &RVector<T>,
    h_li_est: &CMatrix<T>,
    r_t: &CMatrix<T>,
    r_nr: &CMatrix<T>,
    p_r: T,
) -> Result<CMatrix<T>> {
    check_mmse_inputs(g_sr_est, p_s, h_li_est, p_r)?;
    let s = signal_covariance(g_sr_est, p_s);
    let mut c = &s + h_li_est * r_t * h_li_est.adjoint() * creal(p_r);
    c += r_nr;
    let chol = Cholesky::new(c)
        .ok_or_else(|| Error::Domain("MMSE covariance is not positive definite (sigma_nr2 = 0?)".into()))?;
    Ok(chol.solve(&s).adjoint())
}

/// Structured MMSE inputs for the filter model used by the simulator:
/// `R_t = P P^H + eps_t2 I` with `P = F_tx A_zf`, and `R_nr = sigma_nr2 I`.
#[derive(Debug, Clone, Copy)]
pub struct MmseInputs<'a, T: Real> {
    pub g_sr_est: &'a CMatrix<T>,
    pub p_s: &'a RVector<T>,
    pub h_li_est: &'a CMatrix<T>,
    pub precoder: &'a CMatrix<T>,
    pub eps_t2: T,
    pub sigma_nr2: T,
    pub p_r: T,
}

impl<T: Real> MmseInputs<'_, T> {
    /// `S + p_R H R_t H^H + sigma_nr2 I` using `H R_t H^H = (H P)(H P)^H + eps_t2 H H^H`.
    fn covariance(&self) -> Result<CMatrix<T>> {
        check_mmse_inputs(self.g_sr_est, self.p_s, self.h_li_est, self.p_r)?;
        if !(self.sigma_nr2 > T::zero()) {
            return Err(Error::Domain("MMSE filter needs sigma_nr2 > 0".into()));
        }
        let mut c = signal_covariance(self.g_sr_est, self.p_s);
        if self.p_r > T::zero() {
            let hp = self.h_li_est * self.precoder;
            c += (&hp * hp.adjoint()) * creal(self.p_r);
            if self.eps_t2 > T::zero() {
                c += outer_gram(self.h_li_est) * creal(self.p_r * self.eps_t2);
            }
        }
        for i in 0..c.nrows() {
            c[(i, i)] += creal(self.sigma_nr2);
        }
        Ok(c)
    }

    fn factor(&self) -> Result<Cholesky<Complex<T>, Dyn>> {
        Cholesky::new(self.covariance()?)
            .ok_or_else(|| Error::Domain("MMSE covariance is not positive definite".into()))
    }

    /// Full `N_rx x N_rx` receive filter.
    pub fn filter(&self) -> Result<CMatrix<T>> {
        let s = signal_covariance(self.g_sr_est, self.p_s);
        Ok(self.factor()?.solve(&s).adjoint())
    }

    /// `W_zf F_rx` without materializing `F_rx`.
    ///
    /// With `W_zf G = I`, `W_zf S = D_pS G^H`, so
    /// `(W_zf F_rx)^H = C^{-1} G D_pS`, a solve with only `K` right-hand sides.
    pub fn combiner(&self) -> Result<CMatrix<T>> {
        let mut gd = self.g_sr_est.clone();
        for (j, mut col) in gd.column_iter_mut().enumerate() {
            col *= creal(self.p_s[j]);
        }
        Ok(self.factor()?.solve(&gd).adjoint())
    }
}

/// Trace of the relay-input error covariance
/// `(I - F) S (I - F)^H + p_R F H R_t H^H F^H + F R_nr F^H`.
pub fn trace_q<T: Real>(
    f_rx: &CMatrix<T>,
    g_sr_est: &CMatrix<T>,
    p_s: &RVector<T>,
    h_li_est: &CMatrix<T>,
    r_t: &CMatrix<T>,
    r_nr: &CMatrix<T>,
    p_r: T,
) -> Result<T> {
    let n = g_sr_est.nrows();
    if f_rx.shape() != (n, n) || r_nr.shape() != (n, n) || r_t.shape() != (h_li_est.ncols(), h_li_est.ncols()) {
        return Err(Error::Shape(format!(
            "F_rx {:?}, R_nr {:?}, R_t {:?} for N_rx = {n}, N_tx = {}",
            f_rx.shape(),
            r_nr.shape(),
            r_t.shape(),
            h_li_est.ncols()
        )));
    }
    check_mmse_inputs(g_sr_est, p_s, h_li_est, p_r)?;
    // tr{X Y X^H} = sum_ij (X Y)_ij conj(X_ij)
    let quad = |x: &CMatrix<T>, y: &CMatrix<T>| -> T {
        (x * y).zip_fold(x, T::zero(), |acc, a, b| acc + (a * b.conj()).re)
    };
    let residual = CMatrix::<T>::identity(n, n) - f_rx;
    let s = signal_covariance(g_sr_est, p_s);
    let li = h_li_est * r_t * h_li_est.adjoint();
    Ok(quad(&residual, &s) + quad(f_rx, &li) * p_r + quad(f_rx, r_nr))
}

/// `||F_rx H_LI F_tx||_F`; zero exactly when the pair satisfies the
/// null-space condition.
pub fn nsp_residual<T: Real>(f_rx: &CMatrix<T>, h_li_est: &CMatrix<T>, f_tx: &CMatrix<T>) -> T {
    frob_sqr(&(f_rx * h_li_est * f_tx)).sqrt()
}

/// Builds the filters of `mode` for one realization at the given powers.
///
/// `F_tx` is the identity in every mode. The MMSE filter is kept only in its
/// combined form `W_zf F_rx` unless `materialize_rx` is set.
pub fn build_filters<T: Real>(
    ch: &ChannelSet<T>,
    cfg: &SystemConfig,
    mode: FilterMode,
    p_s: &[f64],
    p_r: f64,
    materialize_rx: bool,
) -> Result<FilterSet<T>> {
    let k = ch.pairs();
    let g_sr_est = ch.g_sr_est();
    let g_rd_est = ch.g_rd_est();
    let w_zf = zf_detector(&g_sr_est)?;
    let alpha = alpha_zf(ch.beta_rd.as_slice(), T::lit(cfg.eps_h2), g_rd_est.ncols(), k)?;
    let a_zf = zf_precoder(&g_rd_est, alpha)?;
    let precoder = a_zf.clone();

    let (combiner, f_rx) = match mode {
        FilterMode::Ni | FilterMode::Hd => (w_zf.clone(), None),
        FilterMode::Mmse => {
            let p_s = RVector::from_iterator(k, p_s.iter().map(|&p| T::lit(p)));
            let inputs = MmseInputs {
                g_sr_est: &g_sr_est,
                p_s: &p_s,
                h_li_est: &ch.h_li_est,
                precoder: &precoder,
                eps_t2: T::lit(cfg.eps_t2),
                sigma_nr2: T::lit(cfg.sigma_nr2),
                p_r: T::lit(p_r),
            };
            if materialize_rx {
                let f = inputs.filter()?;
                (&w_zf * &f, Some(f))
            } else {
                (inputs.combiner()?, None)
            }
        }
    };

    Ok(FilterSet {
        mode,
        w_zf,
        a_zf,
        alpha_zf: alpha,
        f_rx,
        f_tx: None,
        combiner,
        precoder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{complex_normal_matrix, stream_rng};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn c(re: f64) -> Complex<f64> {
        Complex::new(re, 0.0)
    }

    #[test]
    fn zf_detector_of_ones_column() {
        let g = CMatrix::<f64>::from_element(4, 1, c(1.0));
        let w = zf_detector(&g).unwrap();
        for z in w.iter() {
            assert!((z - c(0.25)).norm() < 1e-15);
        }
    }

    #[test]
    fn zf_left_and_right_inverse() {
        let mut rng = stream_rng(2, 0, 0);
        for _ in 0..20 {
            let g: CMatrix<f64> = complex_normal_matrix(32, 4, 1.0, &mut rng);
            let w = zf_detector(&g).unwrap();
            assert!((&w * &g - CMatrix::identity(4, 4)).camax() < 1e-9);
            let h = g.adjoint();
            let a = zf_precoder(&h, 2.5).unwrap();
            assert!((&h * &a - CMatrix::identity(4, 4) * c(2.5)).camax() < 1e-9);
        }
    }

    #[test]
    fn zf_detector_matches_least_squares() {
        // Oracle: least squares through a thin QR and back substitution,
        // one right-hand side at a time.
        let mut rng = stream_rng(3, 0, 0);
        let g: CMatrix<f64> = complex_normal_matrix(64, 5, 1.0, &mut rng);
        let w = zf_detector(&g).unwrap();
        let qr = g.clone().qr();
        let (q, r) = (qr.q(), qr.r());
        for _ in 0..5 {
            let y: CMatrix<f64> = complex_normal_matrix(64, 1, 1.0, &mut rng);
            let x_ls = r.solve_upper_triangular(&(q.adjoint() * &y)).unwrap();
            assert!((&w * &y - x_ls).camax() < 1e-10);
        }
    }

    #[test]
    fn zf_rank_deficient_is_singular() {
        let g = CMatrix::<f64>::from_element(6, 2, c(1.0));
        assert!(matches!(zf_detector(&g), Err(Error::Singular { .. })));
        assert!(matches!(zf_precoder(&g.adjoint(), 1.0), Err(Error::Singular { .. })));
    }

    #[test]
    fn alpha_values() {
        let beta = vec![1.0; 5];
        assert_relative_eq!(alpha_zf(&beta, 0.0, 64, 5).unwrap(), (59.0f64 / 5.0).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(alpha_zf(&beta, 0.0, 64, 5).unwrap(), 3.43511, epsilon = 1e-5);
        assert_relative_eq!(
            alpha_zf(&beta, 1e-3, 64, 5).unwrap(),
            (59.0f64 * 1.001 / 5.0).sqrt(),
            epsilon = 1e-14
        );
        assert!(alpha_zf(&beta, 0.0, 5, 5).is_err());
        assert!(alpha_zf(&[1.0, 0.0], 0.0, 8, 2).is_err());
    }

    #[test]
    fn scalar_precoder() {
        let g = CMatrix::<f64>::from_row_slice(1, 2, &[c(1.0), c(0.0)]);
        let alpha = alpha_zf(&[1.0], 0.0, 2, 1).unwrap();
        assert_eq!(alpha, 1.0);
        let a = zf_precoder(&g, alpha).unwrap();
        assert!((a[(0, 0)] - c(1.0)).norm() < 1e-15 && a[(1, 0)].norm() < 1e-15);
    }

    #[test]
    fn scalar_wiener() {
        let g = CMatrix::<f64>::from_element(1, 1, c(1.0));
        let p = DVector::from_element(1, 1.0);
        let h = CMatrix::<f64>::from_element(1, 1, c(1.0));
        let r_t = CMatrix::<f64>::identity(1, 1);
        let r_nr = CMatrix::<f64>::identity(1, 1);
        let f = mmse_rx_filter(&g, &p, &h, &r_t, &r_nr, 0.0).unwrap();
        assert!((f[(0, 0)] - c(0.5)).norm() < 1e-15);
    }

    #[test]
    fn noiseless_limit_preserves_signal() {
        let mut rng = stream_rng(5, 0, 0);
        let g: CMatrix<f64> = complex_normal_matrix(16, 3, 1.0, &mut rng);
        let h: CMatrix<f64> = complex_normal_matrix(16, 16, 1.0, &mut rng);
        let p = DVector::from_element(3, 1.0);
        let r_t = CMatrix::<f64>::identity(16, 16);
        let r_nr = CMatrix::<f64>::identity(16, 16) * c(1e-8);
        let f = mmse_rx_filter(&g, &p, &h, &r_t, &r_nr, 0.0).unwrap();
        assert!((&f * &g - &g).camax() < 1e-3);
    }

    #[test]
    fn singular_noise_rejected() {
        let g = CMatrix::<f64>::from_element(2, 1, c(1.0));
        let p = DVector::from_element(1, 1.0);
        let h = CMatrix::<f64>::zeros(2, 2);
        let zero = CMatrix::<f64>::zeros(2, 2);
        assert!(mmse_rx_filter(&g, &p, &h, &zero, &zero, 0.0).is_err());
    }

    #[test]
    fn trace_q_substitutions() {
        let mut rng = stream_rng(6, 0, 0);
        let n = 8;
        let g: CMatrix<f64> = complex_normal_matrix(n, 2, 1.0, &mut rng);
        let h: CMatrix<f64> = complex_normal_matrix(n, n, 1.0, &mut rng);
        let p = DVector::from_vec(vec![1.0, 2.0]);
        let r_t = CMatrix::<f64>::identity(n, n);
        let sigma = 0.3;
        let r_nr = CMatrix::<f64>::identity(n, n) * c(sigma);
        let id = CMatrix::<f64>::identity(n, n);
        let q_id = trace_q(&id, &g, &p, &h, &r_t, &r_nr, 0.0).unwrap();
        assert_relative_eq!(q_id, n as f64 * sigma, epsilon = 1e-12);
        let zero = CMatrix::<f64>::zeros(n, n);
        let q_zero = trace_q(&zero, &g, &p, &h, &r_t, &r_nr, 5.0).unwrap();
        let s_trace: f64 = (0..2).map(|j| p[j] * g.column(j).norm_squared()).sum();
        assert_relative_eq!(q_zero, s_trace, epsilon = 1e-10);
        assert!(trace_q(&CMatrix::identity(n - 1, n - 1), &g, &p, &h, &r_t, &r_nr, 0.0).is_err());
    }

    #[test]
    fn nsp_residual_zeros() {
        let mut rng = stream_rng(7, 0, 0);
        let h: CMatrix<f64> = complex_normal_matrix(4, 4, 1.0, &mut rng);
        let id = CMatrix::<f64>::identity(4, 4);
        let zero = CMatrix::<f64>::zeros(4, 4);
        assert_eq!(nsp_residual(&zero, &h, &id), 0.0);
        assert_eq!(nsp_residual(&id, &h, &zero), 0.0);
        assert_relative_eq!(nsp_residual(&id, &h, &id), h.norm(), epsilon = 1e-12);
    }

    #[test]
    fn outer_gram_matches_complex_product() {
        let mut rng = stream_rng(8, 0, 0);
        let h: CMatrix<f64> = complex_normal_matrix(7, 5, 1.0, &mut rng);
        assert!((outer_gram(&h) - &h * h.adjoint()).camax() < 1e-12);
    }

    #[test]
    fn structured_filter_matches_explicit() {
        let mut rng = stream_rng(9, 0, 0);
        let (n, k) = (16, 3);
        let g: CMatrix<f64> = complex_normal_matrix(n, k, 1.0, &mut rng);
        let h: CMatrix<f64> = complex_normal_matrix(n, n, 1.0, &mut rng);
        let a: CMatrix<f64> = complex_normal_matrix(n, k, 0.2, &mut rng);
        let p = DVector::from_vec(vec![1.0, 0.5, 2.0]);
        let inputs = MmseInputs {
            g_sr_est: &g,
            p_s: &p,
            h_li_est: &h,
            precoder: &a,
            eps_t2: 1e-2,
            sigma_nr2: 0.4,
            p_r: 3.0,
        };
        let r_t = tx_covariance(&a, 1e-2);
        let r_nr = CMatrix::<f64>::identity(n, n) * c(0.4);
        let explicit = mmse_rx_filter(&g, &p, &h, &r_t, &r_nr, 3.0).unwrap();
        assert!((inputs.filter().unwrap() - &explicit).camax() < 1e-10);
        let w = zf_detector(&g).unwrap();
        assert!((inputs.combiner().unwrap() - &w * &explicit).camax() < 1e-10);
    }

    #[test]
    fn generic_over_f32() {
        let g = CMatrix::<f32>::from_element(4, 1, Complex::new(1.0, 0.0));
        let w = zf_detector(&g).unwrap();
        assert!((w[(0, 0)].re - 0.25).abs() < 1e-6);
        let a: f32 = alpha_zf(&[1.0f32; 5], 0.0, 64, 5).unwrap();
        assert!((a - 3.435_11).abs() < 1e-4);
    }
}
