//! Square M-QAM mapping, hard-decision quantization and error counting.
//!
//! Bit labelling: a symbol label is an integer of `log2(M)` bits, most
//! significant bit first. The upper half of the bits selects the in-phase
//! level and the lower half the quadrature level, each Gray coded. On each
//! axis Gray label 0 sits at the most-positive coordinate and consecutive
//! levels moving towards the negative side follow the reflected binary
//! sequence, so `[0, 0]` in 4-QAM is `(1 + j)/sqrt(2)` and the all-zero label
//! in 16-QAM is the corner `(3 + 3j)/sqrt(10)`.
//!
//! Points are indexed by label; the quantizer resolves exact distance ties in
//! favour of the smallest label.

use crate::error::{Error, Result};
use crate::scalar::{cplx, norm_sqr, Complex, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation<T: Real> {
    order: usize,
    bits_per_symbol: usize,
    points: Vec<Complex<T>>,
}

#[inline]
fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

impl<T: Real> Constellation<T> {
    /// Unit-energy square QAM of order 4, 16 or 64.
    pub fn new(order: usize) -> Result<Self> {
        let levels = match order {
            4 => 2,
            16 => 4,
            64 => 8,
            _ => {
                return Err(Error::InvalidInput(format!(
                    "unsupported QAM order {order}; expected 4, 16 or 64"
                )))
            }
        };
        let axis_bits = (levels as usize).trailing_zeros() as usize;
        let scale = (3.0 / (2.0 * (order as f64 - 1.0))).sqrt();

        // Gray label -> coordinate on one axis.
        let mut axis = vec![0.0f64; levels];
        for pos in 0..levels {
            axis[gray(pos)] = (levels as f64 - 1.0 - 2.0 * pos as f64) * scale;
        }

        let points = (0..order)
            .map(|label| {
                let i_label = label >> axis_bits;
                let q_label = label & (levels - 1);
                cplx(T::lit(axis[i_label]), T::lit(axis[q_label]))
            })
            .collect();

        Ok(Self {
            order,
            bits_per_symbol: 2 * axis_bits,
            points,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn points(&self) -> &[Complex<T>] {
        &self.points
    }

    pub fn point(&self, label: usize) -> Complex<T> {
        self.points[label]
    }

    /// Mean symbol energy over the whole alphabet (exactly one up to rounding).
    pub fn mean_energy(&self) -> T {
        let sum = self
            .points
            .iter()
            .fold(T::zero(), |acc, p| acc + norm_sqr(*p));
        sum / T::lit(self.order as f64)
    }

    /// Packs one group of `bits_per_symbol` bits (MSB first) into a label.
    pub fn label_from_bits(&self, bits: &[u8]) -> Result<usize> {
        if bits.len() != self.bits_per_symbol {
            return Err(Error::InvalidInput(format!(
                "expected {} bits per symbol, got {}",
                self.bits_per_symbol,
                bits.len()
            )));
        }
        bits.iter().try_fold(0usize, |acc, &b| match b {
            0 | 1 => Ok((acc << 1) | b as usize),
            other => Err(Error::InvalidInput(format!("bit value {other} is not 0 or 1"))),
        })
    }

    /// Appends the bits of `label` (MSB first) to `out`.
    pub fn push_label_bits(&self, label: usize, out: &mut Vec<u8>) {
        for shift in (0..self.bits_per_symbol).rev() {
            out.push(((label >> shift) & 1) as u8);
        }
    }

    /// Maps a bit stream onto constellation points.
    pub fn map_bits(&self, bits: &[u8]) -> Result<Vec<Complex<T>>> {
        if !bits.len().is_multiple_of(self.bits_per_symbol) {
            return Err(Error::InvalidInput(format!(
                "bit stream length {} is not a multiple of {}",
                bits.len(),
                self.bits_per_symbol
            )));
        }
        bits.chunks(self.bits_per_symbol)
            .map(|group| self.label_from_bits(group).map(|l| self.points[l]))
            .collect()
    }

    /// Bits of a sequence of labels.
    pub fn demap(&self, labels: &[usize]) -> Vec<u8> {
        let mut out = Vec::with_capacity(labels.len() * self.bits_per_symbol);
        for &l in labels {
            self.push_label_bits(l, &mut out);
        }
        out
    }

    /// Label of the nearest point; ties go to the smallest label.
    #[inline]
    pub fn nearest_label(&self, y: Complex<T>) -> usize {
        let mut best = 0;
        let mut best_d = norm_sqr(y - self.points[0]);
        for (i, p) in self.points.iter().enumerate().skip(1) {
            let d = norm_sqr(y - *p);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Symbol-wise hard decision onto the constellation.
    pub fn quantize(&self, y: &[Complex<T>]) -> Vec<Complex<T>> {
        y.iter().map(|&v| self.points[self.nearest_label(v)]).collect()
    }

    pub fn quantize_labels(&self, y: &[Complex<T>]) -> Vec<usize> {
        y.iter().map(|&v| self.nearest_label(v)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub bit_errors: u64,
    pub symbol_errors: u64,
}

/// Hamming bit errors and symbol errors between two equal-length bit streams.
/// A symbol is in error when any bit of its `bits_per_symbol` group differs.
pub fn count_errors(tx: &[u8], rx: &[u8], bits_per_symbol: usize) -> Result<ErrorCounts> {
    if tx.len() != rx.len() {
        return Err(Error::InvalidInput(format!(
            "bit stream lengths differ: {} vs {}",
            tx.len(),
            rx.len()
        )));
    }
    if bits_per_symbol == 0 || !tx.len().is_multiple_of(bits_per_symbol) {
        return Err(Error::InvalidInput(format!(
            "length {} is not a multiple of {bits_per_symbol} bits per symbol",
            tx.len()
        )));
    }
    let mut counts = ErrorCounts::default();
    for (a, b) in tx.chunks(bits_per_symbol).zip(rx.chunks(bits_per_symbol)) {
        let diff = a.iter().zip(b).filter(|(x, y)| x != y).count() as u64;
        counts.bit_errors += diff;
        counts.symbol_errors += u64::from(diff > 0);
    }
    Ok(counts)
}

/// Bit errors between two labels, used on the simulation fast path.
#[inline]
pub fn label_bit_errors(a: usize, b: usize) -> u32 {
    (a ^ b).count_ones()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn qpsk_zero_label() {
        let q = Constellation::<f64>::new(4).unwrap();
        let s = q.map_bits(&[0, 0]).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((s[0] - c(r, r)).norm() < 1e-15);
    }

    #[test]
    fn qam16_corner() {
        // Brute-force the normalized 16-QAM grid: levels {-3,-1,1,3}, energy 10.
        let grid: Vec<(f64, f64)> = [-3.0, -1.0, 1.0, 3.0]
            .iter()
            .flat_map(|&a| [-3.0, -1.0, 1.0, 3.0].iter().map(move |&b| (a, b)))
            .collect();
        let e: f64 = grid.iter().map(|(a, b)| a * a + b * b).sum::<f64>() / 16.0;
        assert_eq!(e, 10.0);

        let q = Constellation::<f64>::new(16).unwrap();
        let s = q.map_bits(&[0, 0, 0, 0]).unwrap()[0];
        assert!((s - c(3.0, 3.0) / e.sqrt()).norm() < 1e-15);
    }

    #[test]
    fn energy_normalized() {
        for m in [4, 16, 64] {
            let q = Constellation::<f64>::new(m).unwrap();
            assert!((q.mean_energy() - 1.0).abs() < 1e-14, "M={m}");
            let q32 = Constellation::<f32>::new(m).unwrap();
            assert!((q32.mean_energy() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn symmetric_and_distinct() {
        for m in [4, 16, 64] {
            let q = Constellation::<f64>::new(m).unwrap();
            let pts = q.points();
            for (i, p) in pts.iter().enumerate() {
                for other in &pts[i + 1..] {
                    assert!((p - other).norm() > 1e-9);
                }
                assert!(pts.iter().any(|o| (o + p).norm() < 1e-12));
                assert!(pts.iter().any(|o| (o - p.conj()).norm() < 1e-12));
            }
        }
    }

    #[test]
    fn gray_neighbours_differ_by_one_bit() {
        let q = Constellation::<f64>::new(64).unwrap();
        let d_min = 2.0 * (3.0 / 126.0f64).sqrt();
        for (i, a) in q.points().iter().enumerate() {
            for (j, b) in q.points().iter().enumerate() {
                if ((a - b).norm() - d_min).abs() < 1e-9 {
                    assert_eq!(label_bit_errors(i, j), 1);
                }
            }
        }
    }

    #[test]
    fn unsupported_order_rejected() {
        assert!(Constellation::<f64>::new(8).is_err());
        assert!(Constellation::<f64>::new(32).is_err());
    }

    #[test]
    fn bad_length_rejected() {
        let q = Constellation::<f64>::new(16).unwrap();
        assert!(q.map_bits(&[0, 1, 1]).is_err());
        assert!(q.map_bits(&[0, 1, 2, 0]).is_err());
    }

    #[test]
    fn quantize_far_point() {
        let q = Constellation::<f64>::new(4).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((q.quantize(&[c(10.0, 0.1)])[0] - c(r, r)).norm() < 1e-15);
    }

    #[test]
    fn quantize_tie_goes_to_smallest_label() {
        let q = Constellation::<f64>::new(4).unwrap();
        // Origin is equidistant from all four points.
        assert_eq!(q.nearest_label(c(0.0, 0.0)), 0);
        let q16 = Constellation::<f64>::new(16).unwrap();
        // Four inner points tie; inner labels per axis are 1 (+) and 3 (-).
        assert_eq!(q16.nearest_label(c(0.0, 0.0)), 0b0101);
        assert_eq!(q16.quantize(&[c(0.0, 0.0)])[0], q16.point(0b0101));
    }

    #[test]
    fn quantize_idempotent_on_points() {
        for m in [4, 16, 64] {
            let q = Constellation::<f64>::new(m).unwrap();
            for (i, p) in q.points().iter().enumerate() {
                assert_eq!(q.nearest_label(*p), i);
            }
        }
    }

    #[test]
    fn error_counting() {
        let tx = vec![0u8, 1, 1, 0, 1, 0, 0, 1];
        assert_eq!(
            count_errors(&tx, &tx, 4).unwrap(),
            ErrorCounts { bit_errors: 0, symbol_errors: 0 }
        );
        let mut one = tx.clone();
        one[5] ^= 1;
        assert_eq!(
            count_errors(&tx, &one, 4).unwrap(),
            ErrorCounts { bit_errors: 1, symbol_errors: 1 }
        );
        let all: Vec<u8> = tx.iter().map(|b| b ^ 1).collect();
        assert_eq!(
            count_errors(&tx, &all, 4).unwrap(),
            ErrorCounts { bit_errors: 8, symbol_errors: 2 }
        );
        assert!(count_errors(&tx, &tx[..4], 4).is_err());
    }

    #[test]
    fn quantizer_matches_exhaustive_search() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for m in [4, 16, 64] {
            let q = Constellation::<f64>::new(m).unwrap();
            for _ in 0..10_000 {
                let y = c(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let brute = q
                    .points()
                    .iter()
                    .enumerate()
                    .map(|(i, p)| ((y - p).norm_sqr(), i))
                    .fold((f64::INFINITY, usize::MAX), |a, b| if b.0 < a.0 { b } else { a })
                    .1;
                assert_eq!(q.nearest_label(y), brute);
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip(order_idx in 0usize..3, labels in proptest::collection::vec(0usize..64, 1..40)) {
            let m = [4, 16, 64][order_idx];
            let q = Constellation::<f64>::new(m).unwrap();
            let labels: Vec<usize> = labels.into_iter().map(|l| l % m).collect();
            let bits = q.demap(&labels);
            let syms = q.map_bits(&bits).unwrap();
            let back = q.quantize_labels(&syms);
            prop_assert_eq!(q.demap(&back), bits);
        }
    }
}
