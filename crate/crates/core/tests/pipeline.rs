//! End-to-end use of the library: simulation, coefficient estimation,
//! allocation and experiment output.

use fdrelay::experiment::{run_experiment, ExperimentKind, ExperimentSpec};
use fdrelay::opa::{allocate, OpaProblem, Scheme};
use fdrelay::rates::{estimate_coefficients, rate_report};
use fdrelay::sim::{run_cell, sweep, Cell, Grid};
use fdrelay::{FilterMode, SystemConfig};
use nalgebra::DVector;

fn cell(mode: FilterMode, p_r_db: f64) -> Cell {
    Cell { mode, antennas: 32, p_r_db, sigma_nd2: 1.0 }
}

#[test]
fn single_and_double_precision_agree_on_clean_links() {
    let base = SystemConfig::default().with_relay_snr_db(20.0);
    let c = cell(FilterMode::Hd, 10.0);
    let a = run_cell::<f64>(&base, &c, 20, 50).unwrap();
    let b = run_cell::<f32>(&base, &c, 20, 50).unwrap();
    assert_eq!(a.counts.relay_bits, b.counts.relay_bits);
    assert!(a.counts.relay_ber() < 1e-3 && b.counts.relay_ber() < 1e-3);
}

#[test]
fn sweep_is_ordered_and_repeatable() {
    let base = SystemConfig::default();
    let grid = Grid {
        antennas: vec![32],
        p_r_db: vec![0.0, 20.0],
        modes: vec![FilterMode::Mmse, FilterMode::Ni],
        sigma_nd2: vec![1.0],
    };
    let first = sweep::<f64>(&base, &grid, 10, 40).unwrap();
    let again = sweep::<f64>(&base, &grid, 10, 40).unwrap();
    assert_eq!(first, again);
    let cells: Vec<Cell> = first.iter().map(|r| r.cell).collect();
    assert_eq!(cells, grid.cells());
    // Strong loopback hurts the unsuppressed relay more.
    assert!(first[3].counts.relay_ber() >= first[1].counts.relay_ber());
}

#[test]
fn estimated_coefficients_feed_a_feasible_allocation() {
    let cfg = SystemConfig::default().with_pairs(3).with_antennas(32);
    let beta = DVector::from_element(3, 1.0);
    let coeffs = estimate_coefficients::<f64>(&cfg, &beta, &beta, FilterMode::Mmse, &[1.0; 3], 1.0, 50, 99).unwrap();
    assert!(coeffs.is_finite());
    let problem = OpaProblem { coeffs, r0: vec![1.0, 2.0, 0.5], p_s_peak: vec![10.0; 3], p_r_peak: 10.0 };
    let opa = allocate(&problem, Scheme::Opa).unwrap();
    let oupa = allocate(&problem, Scheme::Oupa).unwrap();
    assert!(opa.is_feasible() && oupa.is_feasible());
    assert!(opa.total_power() <= oupa.total_power() + 1e-9);
    let rep = rate_report(&problem.coeffs, &opa.p_s, opa.p_r);
    for (r, r0) in rep.r.iter().zip(&problem.r0) {
        assert!(*r >= r0 - 1e-7);
    }
}

#[test]
fn experiment_writes_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ExperimentSpec::defaults(ExperimentKind::RelayBer);
    spec.grid.antennas = vec![32];
    spec.grid.p_r_db = vec![0.0, 5.0];
    spec.grid.modes = vec![FilterMode::Mmse];
    spec.trials = 4;
    spec.symbols = 20;
    spec.threads = 1;
    spec.timestamp = false;
    spec.out_dir = dir.path().to_path_buf();
    let out = run_experiment(&spec).unwrap();
    let mut rdr = csv::Reader::from_path(&out.csv).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_owned).collect();
    assert_eq!(header, ExperimentKind::RelayBer.header());
    assert_eq!(rdr.records().count(), 2);
    assert!(out.meta.exists());
}
