//! Symbol-level full-duplex relay loop and BER sweeps.
//!
//! Slot `i` of a block: the sources send fresh QAM symbols `x[i]`; the relay
//! transmits `t[i] = F_tx A_zf x_hat[i - d] + e[i]` (zero data before the
//! pipeline fills); the relay receives through the true channels,
//! `r[i] = G_SR D_pS^{1/2} x[i] + sqrt(p_R) H_LI t[i] + n_r`, and detects
//! `x_hat[i] = Q(W_zf F_rx r[i])`; destination `k` receives
//! `y_k[i] = sqrt(p_R) g_RD,k^T t[i] + n_d,k` and decides
//! `Q(y_k / (sqrt(p_R) alpha_zf))`. Relay decisions are scored against
//! `x[i]` and destination decisions against `x[i - d]`; the first `d` slots of
//! a block are not scored.
//!
//! Half duplex removes the loopback term; its forward transmission happens in
//! a separate slot, so destinations still receive `t[i]`.
//!
//! The receive chain is applied through precomputed `K x N` products, so the
//! per-symbol cost is linear in the array size.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{apply_tx_impairment, complex_normal, stream_rng, streams, ChannelSet, SimRng, SystemConfig};
use crate::error::{Error, Result};
use crate::filters::{build_filters, FilterMode, FilterSet};
use crate::modem::{label_bit_errors, Constellation};
use crate::scalar::{creal, CVector, Complex, Real};

/// Redraws allowed per trial before a singular channel aborts the sweep.
pub const MAX_REDRAWS: u32 = 64;

/// Error counts of one or more blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCounts {
    pub relay_bit_errors: u64,
    pub relay_bits: u64,
    pub e2e_bit_errors: u64,
    pub e2e_bits: u64,
}

impl BlockCounts {
    pub fn relay_ber(&self) -> f64 {
        ratio(self.relay_bit_errors, self.relay_bits)
    }

    pub fn e2e_ber(&self) -> f64 {
        ratio(self.e2e_bit_errors, self.e2e_bits)
    }
}

impl std::ops::AddAssign for BlockCounts {
    fn add_assign(&mut self, o: Self) {
        self.relay_bit_errors += o.relay_bit_errors;
        self.relay_bits += o.relay_bits;
        self.e2e_bit_errors += o.e2e_bit_errors;
        self.e2e_bits += o.e2e_bits;
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

/// Simulates one coherence block of `n_symbols` slots at `cfg.p_r`.
pub fn run_block<T: Real>(
    cfg: &SystemConfig,
    ch: &ChannelSet<T>,
    filters: &FilterSet<T>,
    constellation: &Constellation<T>,
    n_symbols: usize,
    rng: &mut SimRng,
) -> Result<BlockCounts> {
    let d = cfg.delay;
    if n_symbols <= d {
        return Err(Error::InvalidInput(format!(
            "block of {n_symbols} symbols is not longer than the delay {d}"
        )));
    }
    let k = ch.pairs();
    let order = constellation.order();
    let bps = constellation.bits_per_symbol() as u64;
    let sqrt_pr = T::lit(cfg.p_r.sqrt());
    let sqrt_ps: Vec<T> = cfg.p_s.iter().map(|&p| T::lit(p.sqrt())).collect();
    let silent = filters.silences_relay();

    // Receive chain folded into K x (.) matrices.
    let g_sr = ch.g_sr();
    let g_rd = ch.g_rd();
    let mut sig = &filters.combiner * &g_sr;
    for (j, mut col) in sig.column_iter_mut().enumerate() {
        col *= creal(sqrt_ps[j]);
    }
    let li = &filters.combiner * &ch.h_li;
    let li_data = &li * &filters.precoder;
    let rd_data = &g_rd * &filters.precoder;
    let dest_gain = sqrt_pr * filters.alpha_zf;

    let n_rx = ch.h_sr.nrows();
    let n_tx = ch.h_rd.ncols();
    let zero_t = CVector::<T>::zeros(n_tx);

    // Ring buffers of length d + 1 holding source labels and relay decisions.
    let mut sent = vec![vec![0usize; k]; d + 1];
    let mut detected = vec![vec![0usize; k]; d + 1];
    let mut counts = BlockCounts::default();
    let mut x = CVector::<T>::zeros(k);
    let mut x_hat = CVector::<T>::zeros(k);

    for i in 0..n_symbols {
        let slot = i % (d + 1);
        let lagged = (i + 1) % (d + 1); // slot holding i - d
        let warm = i >= d;

        for kk in 0..k {
            let label = rng.random_range(0..order);
            sent[slot][kk] = label;
            x[kk] = constellation.point(label);
        }

        // Relay transmit vector: data part through the precoder, error drawn explicitly.
        if warm {
            for kk in 0..k {
                x_hat[kk] = constellation.point(detected[lagged][kk]);
            }
        } else {
            x_hat.fill(Complex::new(T::zero(), T::zero()));
        }
        let e = apply_tx_impairment(&zero_t, cfg.eps_t2, rng);

        // Relay reception after W_zf F_rx.
        let mut z = &sig * &x;
        if !silent && cfg.p_r > 0.0 {
            let loop_back = &li_data * &x_hat + &li * &e;
            z += loop_back * creal(sqrt_pr);
        }
        if cfg.sigma_nr2 > 0.0 {
            let n_r: CVector<T> = DVector::from_fn(n_rx, |_, _| complex_normal(rng, cfg.sigma_nr2));
            z += &filters.combiner * n_r;
        }
        for kk in 0..k {
            let v = if sqrt_ps[kk] > T::zero() { z[kk] / creal(sqrt_ps[kk]) } else { z[kk] };
            let label = constellation.nearest_label(v);
            detected[slot][kk] = label;
            if warm {
                counts.relay_bit_errors += u64::from(label_bit_errors(label, sent[slot][kk]));
            }
        }
        if warm {
            counts.relay_bits += k as u64 * bps;
        }

        // Destinations.
        let mut y = (&rd_data * &x_hat + &g_rd * &e) * creal(sqrt_pr);
        if cfg.sigma_nd2 > 0.0 {
            for v in y.iter_mut() {
                *v += complex_normal::<T, _>(rng, cfg.sigma_nd2);
            }
        }
        if warm {
            for kk in 0..k {
                let v = if dest_gain > T::zero() { y[kk] / creal(dest_gain) } else { y[kk] };
                let label = constellation.nearest_label(v);
                counts.e2e_bit_errors += u64::from(label_bit_errors(label, sent[lagged][kk]));
            }
            counts.e2e_bits += k as u64 * bps;
        }
    }
    Ok(counts)
}

/// Draws a nonsingular realization and its filters, redrawing on singular
/// Gram matrices. Returns the number of redraws alongside.
pub fn draw_realization<T: Real>(
    cfg: &SystemConfig,
    mode: FilterMode,
    rng: &mut SimRng,
) -> Result<(ChannelSet<T>, FilterSet<T>, u32)> {
    let mut redraws = 0;
    loop {
        let ch = ChannelSet::<T>::draw(cfg, rng);
        match build_filters(&ch, cfg, mode, &cfg.p_s, cfg.p_r, false) {
            Ok(f) => return Ok((ch, f, redraws)),
            Err(Error::Singular { what, rcond }) if redraws < MAX_REDRAWS => {
                log::debug!("redrawing realization: singular {what} (rcond {rcond:.2e})");
                redraws += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// One grid cell of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mode: FilterMode,
    pub antennas: usize,
    pub p_r_db: f64,
    pub sigma_nd2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub antennas: Vec<usize>,
    pub p_r_db: Vec<f64>,
    pub modes: Vec<FilterMode>,
    pub sigma_nd2: Vec<f64>,
}

impl Grid {
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &antennas in &self.antennas {
                for &sigma_nd2 in &self.sigma_nd2 {
                    for &p_r_db in &self.p_r_db {
                        out.push(Cell { mode, antennas, p_r_db, sigma_nd2 });
                    }
                }
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.antennas.is_empty() || self.p_r_db.is_empty() || self.modes.is_empty() || self.sigma_nd2.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub cell: Cell,
    pub counts: BlockCounts,
    pub trials: u64,
    pub symbols_per_trial: usize,
    pub singular_redraws: u64,
}

/// Config of one cell: square array, relay power and destination noise applied.
pub fn cell_config(base: &SystemConfig, cell: &Cell) -> SystemConfig {
    let mut cfg = base.clone().with_antennas(cell.antennas);
    cfg.p_r = 10f64.powf(cell.p_r_db / 10.0);
    cfg.sigma_nd2 = cell.sigma_nd2;
    cfg
}

/// RNG of one trial. Depends on the array size and trial index only, so
/// every mode and relay power of a given size sees the same channels, symbols
/// and noise (common random numbers); results never depend on scheduling.
pub fn trial_rng(master_seed: u64, antennas: usize, trial: u64) -> SimRng {
    stream_rng(master_seed, streams::BLOCK | ((antennas as u64) << 32), trial)
}

/// Simulates one cell over `trials` independent blocks.
pub fn run_cell<T: Real>(base: &SystemConfig, cell: &Cell, trials: u64, symbols: usize) -> Result<SimResult> {
    let cfg = cell_config(base, cell);
    cfg.validate()?;
    let constellation = Constellation::<T>::new(cfg.mod_order)?;
    let per_trial: Vec<(BlockCounts, u32)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(cfg.master_seed, cell.antennas, trial);
            let (ch, filters, redraws) = draw_realization::<T>(&cfg, cell.mode, &mut rng)?;
            let counts = run_block(&cfg, &ch, &filters, &constellation, symbols, &mut rng)?;
            Ok((counts, redraws))
        })
        .collect::<Result<_>>()?;
    let mut counts = BlockCounts::default();
    let mut singular = 0u64;
    for (c, r) in per_trial {
        counts += c;
        singular += u64::from(r);
    }
    Ok(SimResult {
        cell: *cell,
        counts,
        trials,
        symbols_per_trial: symbols,
        singular_redraws: singular,
    })
}

/// Runs every cell of `grid`; the output follows [`Grid::cells`] order.
pub fn sweep<T: Real>(base: &SystemConfig, grid: &Grid, trials: u64, symbols: usize) -> Result<Vec<SimResult>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("sweep grid is empty".into()));
    }
    grid.cells()
        .iter()
        .map(|cell| run_cell::<T>(base, cell, trials, symbols))
        .collect()
}
