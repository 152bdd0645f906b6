//! Minimum-power allocation under per-pair rate targets.
//!
//! With fixed channel statistics every rate target `R_k >= R_0,k` is the pair
//! of SINR conditions (source-relay and relay-destination) at threshold
//! `gamma_k = 2^{R_0,k} - 1`, and both are linear in the powers:
//!
//! ```text
//! SR: p_k (MV_k - gamma_k V_k) - gamma_k (sum_{j!=k} p_j MP_kj + p_R LI_k) >= gamma_k AN_k
//! RD: p_R (MV'_k - gamma_k (V'_k + MP'_k))                                 >= gamma_k AN'_k
//! ```
//!
//! Minimizing `sum_k p_k + p_R` over the peak-power box is therefore an LP.
//! The statistics themselves depend on the powers through the MMSE filter, so
//! [`run_algorithm1`] alternates coefficient estimation and LP solves for a
//! fixed number of iterations, starting from the peak powers.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{stream_rng, streams, SystemConfig};
use crate::error::{Error, Result};
use crate::filters::FilterMode;
use crate::lp::{self, LpOutcome, LpStandardForm, RowTag};
use crate::rates::{energy_efficiency, estimate_coefficients, rate_report, RateCoefficients, RateReport};
use crate::scalar::{RVector, Real};

/// Source power allocation policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Independent power per source.
    Opa,
    /// One power shared by every source.
    Oupa,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Opa => "opa",
            Scheme::Oupa => "oupa",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpaProblem<T: Real> {
    pub coeffs: RateCoefficients<T>,
    /// Required rate per pair, bit/s/Hz.
    pub r0: Vec<T>,
    pub p_s_peak: Vec<T>,
    pub p_r_peak: T,
}

impl<T: Real> OpaProblem<T> {
    pub fn validate(&self) -> Result<()> {
        let k = self.coeffs.pairs();
        if self.r0.len() != k || self.p_s_peak.len() != k {
            return Err(Error::Shape(format!(
                "{} rate targets and {} peaks for K = {k}",
                self.r0.len(),
                self.p_s_peak.len()
            )));
        }
        if self.r0.iter().any(|r| !(*r >= T::zero())) {
            return Err(Error::InvalidInput("rate targets must be non-negative".into()));
        }
        if self.p_s_peak.iter().chain(std::iter::once(&self.p_r_peak)).any(|p| !(*p > T::zero())) {
            return Err(Error::InvalidInput("peak powers must be positive".into()));
        }
        if !self.coeffs.is_finite() {
            return Err(Error::InvalidInput("rate coefficients must be finite".into()));
        }
        Ok(())
    }

    fn gamma(&self, k: usize) -> T {
        T::lit(2.0).powf(self.r0[k]) - T::one()
    }

    /// Pairs whose targets no power can meet: the hop's own-signal
    /// coefficient vanishes at threshold `gamma`.
    fn unattainable_pairs(&self) -> Vec<usize> {
        let c = &self.coeffs;
        (0..c.pairs())
            .filter(|&k| {
                let g = self.gamma(k);
                if g == T::zero() {
                    return false;
                }
                let rd = c.mv_rd[k] - g * (c.v_rd[k] + c.mp_rd[k]);
                let sr = c.mv_sr[k] - g * c.v_sr[k];
                let rd_dead = rd <= T::zero() && c.an_rd[k] > T::zero();
                let sr_dead = sr <= T::zero() && c.an_sr[k] > T::zero();
                rd_dead || sr_dead
            })
            .collect()
    }
}

/// LP of the per-source allocation: variables `[p_S,1 .. p_S,K, p_R]`,
/// rows `SR_1, RD_1, .., SR_K, RD_K`.
pub fn linearize_constraints<T: Real>(problem: &OpaProblem<T>) -> Result<LpStandardForm<T>> {
    problem.validate()?;
    let dead = problem.unattainable_pairs();
    if !dead.is_empty() {
        return Err(Error::PairsInfeasible(dead));
    }
    let c = &problem.coeffs;
    let k = c.pairs();
    let n = k + 1;
    let mut rows = DMatrix::zeros(2 * k, n);
    let mut rhs = Vec::with_capacity(2 * k);
    let mut tags = Vec::with_capacity(2 * k);
    for i in 0..k {
        let g = problem.gamma(i);
        let sr = 2 * i;
        for j in 0..k {
            rows[(sr, j)] = if j == i {
                c.mv_sr[i] - g * c.v_sr[i]
            } else {
                -g * c.mp_sr[(i, j)]
            };
        }
        rows[(sr, k)] = -g * c.li_sr[i];
        rhs.push(g * c.an_sr[i]);
        tags.push(RowTag::SourceRelay(i));

        rows[(sr + 1, k)] = c.mv_rd[i] - g * (c.v_rd[i] + c.mp_rd[i]);
        rhs.push(g * c.an_rd[i]);
        tags.push(RowTag::RelayDestination(i));
    }
    let mut upper: Vec<Option<T>> = problem.p_s_peak.iter().map(|&p| Some(p)).collect();
    upper.push(Some(problem.p_r_peak));
    Ok(LpStandardForm {
        objective: vec![T::one(); n],
        rows,
        rhs,
        tags,
        lower: vec![T::zero(); n],
        upper,
    })
}

/// LP of the uniform allocation: variables `[p_S, p_R]`, the objective counts
/// the shared source power `K` times and its peak is the smallest per-source
/// peak.
pub fn linearize_uniform<T: Real>(problem: &OpaProblem<T>) -> Result<LpStandardForm<T>> {
    let full = linearize_constraints(problem)?;
    let k = problem.coeffs.pairs();
    let mut rows = DMatrix::zeros(2 * k, 2);
    for r in 0..2 * k {
        rows[(r, 0)] = (0..k).fold(T::zero(), |acc, j| acc + full.rows[(r, j)]);
        rows[(r, 1)] = full.rows[(r, k)];
    }
    let peak = problem.p_s_peak.iter().fold(problem.p_s_peak[0], |a, b| a.min(*b));
    Ok(LpStandardForm {
        objective: vec![T::lit(k as f64), T::one()],
        rows,
        rhs: full.rhs,
        tags: full.tags,
        lower: vec![T::zero(); 2],
        upper: vec![Some(peak), Some(problem.p_r_peak)],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AllocationStatus {
    Feasible,
    /// `iteration` is the 1-based Algorithm iteration that failed, if any.
    Infeasible { iteration: Option<usize>, pairs: Vec<usize> },
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation<T: Real> {
    pub p_s: Vec<T>,
    pub p_r: T,
    pub status: AllocationStatus,
}

impl<T: Real> PowerAllocation<T> {
    pub fn is_feasible(&self) -> bool {
        self.status == AllocationStatus::Feasible
    }

    pub fn total_power(&self) -> T {
        self.p_s.iter().fold(self.p_r, |acc, p| acc + *p)
    }
}

fn infeasible<T: Real>(k: usize, pairs: Vec<usize>) -> PowerAllocation<T> {
    PowerAllocation { p_s: vec![T::zero(); k], p_r: T::zero(), status: AllocationStatus::Infeasible { iteration: None, pairs } }
}

fn violated_pairs(tags: &[RowTag]) -> Vec<usize> {
    let mut pairs: Vec<usize> = tags.iter().filter_map(|t| t.pair()).collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Solves a per-source allocation LP (`K + 1` variables).
pub fn solve_lp<T: Real>(lp: &LpStandardForm<T>) -> Result<PowerAllocation<T>> {
    let k = lp.num_vars().checked_sub(1).ok_or_else(|| Error::Shape("LP without variables".into()))?;
    Ok(match lp::solve(lp)? {
        LpOutcome::Optimal { x, .. } => PowerAllocation { p_s: x[..k].to_vec(), p_r: x[k], status: AllocationStatus::Feasible },
        LpOutcome::Infeasible { violated, .. } => infeasible(k, violated_pairs(&violated)),
    })
}

/// Minimum-power allocation of `problem` for fixed coefficients.
pub fn allocate<T: Real>(problem: &OpaProblem<T>, scheme: Scheme) -> Result<PowerAllocation<T>> {
    let k = problem.coeffs.pairs();
    let lp = match scheme {
        Scheme::Opa => linearize_constraints(problem),
        Scheme::Oupa => linearize_uniform(problem),
    };
    let lp = match lp {
        Ok(lp) => lp,
        Err(Error::PairsInfeasible(pairs)) => return Ok(infeasible(k, pairs)),
        Err(e) => return Err(e),
    };
    match scheme {
        Scheme::Opa => solve_lp(&lp),
        Scheme::Oupa => Ok(match lp::solve(&lp)? {
            LpOutcome::Optimal { x, .. } => {
                PowerAllocation { p_s: vec![x[0]; k], p_r: x[1], status: AllocationStatus::Feasible }
            }
            LpOutcome::Infeasible { violated, .. } => infeasible(k, violated_pairs(&violated)),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSettings {
    pub r0: Vec<f64>,
    pub p_s_peak: Vec<f64>,
    pub p_r_peak: f64,
    /// Channel realizations per iteration.
    pub n_it: usize,
    /// Number of iterations.
    pub iterations: usize,
    pub mode: FilterMode,
    pub scheme: Scheme,
    /// Tag mixed into the coefficient RNG streams (e.g. a shadowing draw).
    pub stream_tag: u64,
}

impl AlgorithmSettings {
    /// `N_it = 1000`, `L = 5`, source peaks 3 dB, relay peak 10 dB.
    pub fn with_defaults(r0: Vec<f64>) -> Self {
        let k = r0.len();
        Self {
            r0,
            p_s_peak: vec![db_to_linear(3.0); k],
            p_r_peak: db_to_linear(10.0),
            n_it: 1000,
            iterations: 5,
            mode: FilterMode::Mmse,
            scheme: Scheme::Opa,
            stream_tag: 0,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// RNG stream of the coefficient draws of one iteration. Every scheme and
/// filter mode with the same tag sees the same channel realizations.
pub fn coefficient_stream(tag: u64, iteration: usize) -> u64 {
    (streams::COEFFICIENTS << 56) | ((tag & 0xff_ffff_ffff) << 16) | (iteration as u64 & 0xffff)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace<T: Real> {
    pub iteration: usize,
    pub p_s: Vec<T>,
    pub p_r: T,
    /// Rates at the new powers under the coefficients of this iteration.
    pub report: RateReport<T>,
    pub energy_efficiency: T,
    /// `||p_i - p_{i-1}||_2` over all K + 1 powers.
    pub step: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmOutput<T: Real> {
    pub allocation: PowerAllocation<T>,
    pub trace: Vec<IterationTrace<T>>,
}

/// Iterative power allocation: estimate statistics at the current powers,
/// solve the LP, replace the powers; exactly `settings.iterations` times.
pub fn run_algorithm1<T: Real>(
    cfg: &SystemConfig,
    beta_sr: &RVector<T>,
    beta_rd: &RVector<T>,
    settings: &AlgorithmSettings,
) -> Result<AlgorithmOutput<T>> {
    let k = cfg.pairs;
    if settings.iterations == 0 {
        return Err(Error::InvalidInput("at least one iteration is required".into()));
    }
    if settings.r0.len() != k || settings.p_s_peak.len() != k {
        return Err(Error::Shape(format!("rate targets / peaks do not match K = {k}")));
    }
    let mut p_s: Vec<f64> = settings.p_s_peak.clone();
    let mut p_r = settings.p_r_peak;
    let mut trace = Vec::with_capacity(settings.iterations);

    for it in 1..=settings.iterations {
        let coeffs = estimate_coefficients(
            cfg,
            beta_sr,
            beta_rd,
            settings.mode,
            &p_s,
            p_r,
            settings.n_it,
            coefficient_stream(settings.stream_tag, it),
        )?;
        let problem = OpaProblem {
            coeffs,
            r0: settings.r0.iter().map(|&r| T::lit(r)).collect(),
            p_s_peak: settings.p_s_peak.iter().map(|&p| T::lit(p)).collect(),
            p_r_peak: T::lit(settings.p_r_peak),
        };
        let alloc = allocate(&problem, settings.scheme)?;
        if let AllocationStatus::Infeasible { pairs, .. } = alloc.status {
            return Ok(AlgorithmOutput {
                allocation: PowerAllocation {
                    p_s: p_s.iter().map(|&p| T::lit(p)).collect(),
                    p_r: T::lit(p_r),
                    status: AllocationStatus::Infeasible { iteration: Some(it), pairs },
                },
                trace,
            });
        }
        let new_s: Vec<f64> = alloc.p_s.iter().map(|p| p.to_f64_lossy()).collect();
        let new_r = alloc.p_r.to_f64_lossy();
        let step = p_s
            .iter()
            .zip(&new_s)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
        let step = (step + (p_r - new_r).powi(2)).sqrt();
        let report = rate_report(&problem.coeffs, &alloc.p_s, alloc.p_r);
        let ee = if alloc.total_power() > T::zero() {
            energy_efficiency(&report, &alloc.p_s, alloc.p_r)?
        } else {
            T::zero()
        };
        trace.push(IterationTrace {
            iteration: it,
            p_s: alloc.p_s.clone(),
            p_r: alloc.p_r,
            report,
            energy_efficiency: ee,
            step: T::lit(step),
        });
        p_s = new_s;
        p_r = new_r;
    }

    Ok(AlgorithmOutput {
        allocation: PowerAllocation {
            p_s: p_s.iter().map(|&p| T::lit(p)).collect(),
            p_r: T::lit(p_r),
            status: AllocationStatus::Feasible,
        },
        trace,
    })
}

/// Uniform-allocation variant of [`run_algorithm1`].
pub fn run_oupa<T: Real>(
    cfg: &SystemConfig,
    beta_sr: &RVector<T>,
    beta_rd: &RVector<T>,
    settings: &AlgorithmSettings,
) -> Result<AlgorithmOutput<T>> {
    let s = AlgorithmSettings { scheme: Scheme::Oupa, ..settings.clone() };
    run_algorithm1(cfg, beta_sr, beta_rd, &s)
}

/// Per-pair targets summing to `sum_rate`: integer weights drawn uniformly
/// from `{1, .., levels}` and scaled to the requested sum.
pub fn draw_rate_targets<R: Rng + ?Sized>(k: usize, sum_rate: f64, levels: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(1..=levels.max(1)) as f64).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| sum_rate * x / total).collect()
}

/// Rate targets of shadowing draw `draw` for `sum_rate`.
pub fn rate_targets_for_draw(master_seed: u64, draw: u64, k: usize, sum_rate: f64, levels: usize) -> Vec<f64> {
    let mut rng = stream_rng(master_seed, streams::TARGETS, draw);
    draw_rate_targets(k, sum_rate, levels, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn single(r0: f64, peak: f64) -> OpaProblem<f64> {
        OpaProblem {
            coeffs: RateCoefficients::uniform(1, [1.0, 0.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 1.0]),
            r0: vec![r0],
            p_s_peak: vec![peak],
            p_r_peak: 10.0,
        }
    }

    #[test]
    fn zero_targets_reduce_to_nonnegativity() {
        let lp = linearize_constraints(&single(0.0, 2.0)).unwrap();
        assert!(lp.rhs.iter().all(|&b| b == 0.0));
        assert_eq!(lp.rows[(0, 0)], 1.0);
        assert_eq!(lp.rows[(1, 1)], 1.0);
        let a = solve_lp(&lp).unwrap();
        assert!(a.is_feasible() && a.total_power() == 0.0);
    }

    #[test]
    fn unit_target_single_pair() {
        // gamma = 1, MV = AN = 1 -> p_S >= 1.
        let lp = linearize_constraints(&single(1.0, 2.0)).unwrap();
        assert_eq!(lp.rows[(0, 0)], 1.0);
        assert_eq!(lp.rhs[0], 1.0);
        let a = solve_lp(&lp).unwrap();
        assert!((a.p_s[0] - 1.0).abs() < 1e-12 && (a.p_r - 1.0).abs() < 1e-12);
        assert_eq!(lp.num_vars(), 2);
        assert_eq!(lp.num_rows(), 2);
    }

    #[test]
    fn peak_below_requirement_is_infeasible() {
        let a = allocate(&single(1.0, 0.5), Scheme::Opa).unwrap();
        assert_eq!(a.status, AllocationStatus::Infeasible { iteration: None, pairs: vec![0] });
    }

    #[test]
    fn dead_relay_link_detected() {
        let mut p = single(3.0, 2.0);
        p.coeffs.v_rd[0] = 0.5; // gamma = 7, MV' - 7 * 0.5 < 0
        assert!(matches!(linearize_constraints(&p), Err(Error::PairsInfeasible(ref v)) if v == &vec![0]));
        assert!(!allocate(&p, Scheme::Opa).unwrap().is_feasible());
    }

    #[test]
    fn symmetric_uniform_equals_independent() {
        let p = OpaProblem::<f64> {
            coeffs: RateCoefficients::uniform(3, [1.0, 0.01, 0.02, 0.05, 0.2], [2.0, 0.01, 0.03, 1.0]),
            r0: vec![1.5; 3],
            p_s_peak: vec![2.0; 3],
            p_r_peak: 10.0,
        };
        let opa = allocate(&p, Scheme::Opa).unwrap();
        let oupa = allocate(&p, Scheme::Oupa).unwrap();
        assert!(opa.is_feasible() && oupa.is_feasible());
        assert!((opa.total_power() - oupa.total_power()).abs() < 1e-9);
    }

    #[test]
    fn targets_sum_exactly() {
        let r = rate_targets_for_draw(1, 0, 10, 15.0, 3);
        assert!((r.iter().sum::<f64>() - 15.0).abs() < 1e-12);
        assert_eq!(r, rate_targets_for_draw(1, 0, 10, 15.0, 3));
    }

    #[test]
    fn zero_targets_give_zero_powers() {
        let cfg = SystemConfig::default().with_pairs(2).with_antennas(8);
        let b = DVector::from_element(2, 1.0);
        let mut s = AlgorithmSettings::with_defaults(vec![0.0, 0.0]);
        s.n_it = 20;
        let out = run_algorithm1::<f64>(&cfg, &b, &b, &s).unwrap();
        assert!(out.allocation.is_feasible());
        assert_eq!(out.allocation.total_power(), 0.0);
        assert_eq!(out.trace.len(), 5);
        let oupa = run_oupa::<f64>(&cfg, &b, &b, &s).unwrap();
        assert_eq!(oupa.allocation.total_power(), 0.0);
    }

    #[test]
    fn infeasibility_carries_iteration() {
        let cfg = SystemConfig::default().with_pairs(2).with_antennas(8);
        let b = DVector::from_element(2, 1.0);
        let mut s = AlgorithmSettings::with_defaults(vec![12.0, 1.0]);
        s.n_it = 20;
        let out = run_algorithm1::<f64>(&cfg, &b, &b, &s).unwrap();
        match out.allocation.status {
            AllocationStatus::Infeasible { iteration, ref pairs } => {
                assert_eq!(iteration, Some(1));
                assert!(pairs.contains(&0));
            }
            ref other => panic!("{other:?}"),
        }
    }

    #[test]
    fn defaults() {
        let s = AlgorithmSettings::with_defaults(vec![1.0; 4]);
        assert_eq!((s.n_it, s.iterations), (1000, 5));
        assert!((s.p_s_peak[0] - 1.995_262_3).abs() < 1e-6);
        assert!((s.p_r_peak - 10.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Random K-pair problem with independent per-pair statistics.
        fn problem() -> impl Strategy<Value = OpaProblem<f64>> {
            (1usize..5).prop_flat_map(|k| {
                let v = |lo: f64, hi: f64| proptest::collection::vec(lo..hi, k);
                (v(0.5, 3.0), v(0.0, 0.05), v(0.0, 0.05), v(0.0, 0.2), v(0.05, 0.5), v(0.5, 3.0), v(0.0, 0.05), v(0.0, 0.05), v(0.05, 0.5), v(0.1, 2.0))
                    .prop_map(move |(mv, vs, mp, li, an, mvr, vr, mpr, anr, r0)| {
                        let mut c = RateCoefficients::uniform(k, [0.0; 5], [0.0; 4]);
                        for i in 0..k {
                            c.mv_sr[i] = mv[i];
                            c.v_sr[i] = vs[i];
                            c.li_sr[i] = li[i];
                            c.an_sr[i] = an[i];
                            c.mv_rd[i] = mvr[i];
                            c.v_rd[i] = vr[i];
                            c.mp_rd[i] = mpr[i];
                            c.an_rd[i] = anr[i];
                            for (j, &m) in mp.iter().enumerate().filter(|&(j, _)| j != i) {
                                c.mp_sr[(i, j)] = m;
                            }
                        }
                        OpaProblem { coeffs: c, r0, p_s_peak: vec![20.0; k], p_r_peak: 100.0 }
                    })
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn solution_meets_targets(p in problem()) {
                let a = allocate(&p, Scheme::Opa).unwrap();
                if a.is_feasible() {
                    let rep = rate_report(&p.coeffs, &a.p_s, a.p_r);
                    for (r, r0) in rep.r.iter().zip(&p.r0) {
                        prop_assert!(*r >= r0 - 1e-7, "rate {r} below target {r0}");
                    }
                    prop_assert!(a.p_s.iter().zip(&p.p_s_peak).all(|(x, m)| *x >= -1e-12 && *x <= m + 1e-9));
                    prop_assert!(a.p_r >= -1e-12 && a.p_r <= p.p_r_peak + 1e-9);
                }
            }

            #[test]
            fn uniform_never_cheaper(p in problem()) {
                let opa = allocate(&p, Scheme::Opa).unwrap();
                let oupa = allocate(&p, Scheme::Oupa).unwrap();
                if oupa.is_feasible() {
                    prop_assert!(opa.is_feasible());
                    prop_assert!(opa.total_power() <= oupa.total_power() + 1e-8);
                }
            }

            #[test]
            fn power_grows_with_targets(p in problem(), scale in 1.0f64..1.5) {
                let low = allocate(&p, Scheme::Opa).unwrap();
                let mut q = p.clone();
                q.r0.iter_mut().for_each(|r| *r *= scale);
                let high = allocate(&q, Scheme::Opa).unwrap();
                if high.is_feasible() {
                    prop_assert!(low.is_feasible());
                    prop_assert!(low.total_power() <= high.total_power() + 1e-8);
                }
            }
        }
    }
}
