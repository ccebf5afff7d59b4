//! Confusion matrix `Pr(k̃ | k)` of Alice's dual-homodyne receiver.
//!
//! Two routes are provided: deterministic quadrature over the decision
//! wedges and seeded Monte Carlo sampling through the nearest-point
//! decision rule. They are independent and are cross-checked in tests.
//!
//! # Quadrature
//!
//! With the sent point at `(a, 0)` in units of `σ`, integrating the offset
//! isotropic Gaussian over radius gives the phase density
//!
//! ```text
//! p(φ) = e^{-a²/2} / 2π + a cos φ · e^{-a² sin² φ / 2} · Φ(a cos φ) / √(2π)
//! ```
//!
//! `q(j)` is the integral of `p` over the wedge centred at `2πj/K`. The
//! integral is evaluated by globally adaptive Gauss–Kronrod (7/15)
//! subdivision until the summed error estimate, and the row-sum defect,
//! fall below the requested tolerance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use rayon::prelude::*;

use crate::constellation::{make_kpsk, Constellation, IqPoint};
use crate::error::{Error, Result};
use crate::link::GaussianChannel;
use crate::stream::Stream;

pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

const MAX_SUBDIVISIONS: usize = 20_000;

/// Samples per Monte Carlo shard; each shard owns one substream.
const SHARD_SAMPLES: usize = 1 << 16;

/// Beyond this value of `(r/σ)·sin(π/K)` every off-diagonal probability is
/// below the smallest positive `f64`.
const UNDERFLOW_MARGIN: f64 = 40.0;

/// `K×K` row-stochastic table, `p[k][k̃] = Pr(decoded k̃ | sent k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    k: usize,
    p: Vec<f64>,
}

impl ConfusionMatrix {
    /// Builds a matrix from rows, checking entries lie in `[0, 1]` and each
    /// row sums to 1 within `row_tol`.
    pub fn from_rows(rows: &[Vec<f64>], row_tol: f64) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::InvalidAlphabet(k));
        }
        let mut p = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::domain(format!(
                    "row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::domain(format!("row {i} has an entry outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > row_tol {
                return Err(Error::domain(format!("row {i} sums to {sum}, not 1")));
            }
            p.extend_from_slice(row);
        }
        Ok(Self { k, p })
    }

    /// Circulant matrix `p[k][k̃] = q((k̃ - k) mod K)`.
    pub fn circulant(q: &[f64]) -> Result<Self> {
        let k = q.len();
        if k < 2 {
            return Err(Error::InvalidAlphabet(k));
        }
        let mut p = vec![0.0; k * k];
        for row in 0..k {
            for col in 0..k {
                p[row * k + col] = q[(col + k - row) % k];
            }
        }
        Ok(Self { k, p })
    }

    pub fn identity(k: usize) -> Result<Self> {
        let mut q = vec![0.0; k];
        if let Some(first) = q.first_mut() {
            *first = 1.0;
        }
        Self::circulant(&q)
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::circulant(&vec![1.0 / k as f64; k])
    }

    pub fn size(&self) -> usize {
        self.k
    }

    pub fn get(&self, sent: usize, decoded: usize) -> f64 {
        self.p[sent * self.k + decoded]
    }

    pub fn row(&self, sent: usize) -> &[f64] {
        &self.p[sent * self.k..(sent + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.p.chunks_exact(self.k)
    }

    /// Largest `|row sum - 1|`.
    pub fn max_row_defect(&self) -> f64 {
        self.rows()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest deviation from the circulant built on row 0.
    pub fn circulant_defect(&self) -> f64 {
        let k = self.k;
        let mut worst = 0.0f64;
        for row in 0..k {
            for col in 0..k {
                let d = (self.get(row, col) - self.get(0, (col + k - row) % k)).abs();
                worst = worst.max(d);
            }
        }
        worst
    }
}

/// Monte Carlo estimate with per-entry binomial standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfusion {
    pub matrix: ConfusionMatrix,
    /// Row-major, same layout as the matrix.
    pub std_err: Vec<f64>,
    pub samples_per_symbol: usize,
}

impl MonteCarloConfusion {
    pub fn std_err(&self, sent: usize, decoded: usize) -> f64 {
        self.std_err[sent * self.matrix.size() + decoded]
    }
}

/// One received sample for `symbol` through `ch`.
pub fn sample_iq(
    ch: &GaussianChannel,
    constellation: &Constellation,
    symbol: usize,
    stream: &mut Stream,
) -> Result<IqPoint> {
    if symbol >= constellation.size() {
        return Err(Error::domain(format!(
            "symbol {symbol} out of range for K = {}",
            constellation.size()
        )));
    }
    Ok(sample_unchecked(ch, constellation.angle(symbol), stream))
}

fn sample_unchecked(ch: &GaussianChannel, angle: f64, stream: &mut Stream) -> IqPoint {
    let mean = IqPoint::from_polar(ch.r(), angle);
    if ch.is_noiseless() {
        return mean;
    }
    let (ni, nq) = stream.normal_pair();
    IqPoint::new(mean.i + ch.sigma() * ni, mean.q + ch.sigma() * nq)
}

/// Empirical confusion matrix from `n_samples` draws per sent symbol.
///
/// Samples are split into fixed-size shards; shard `s` of symbol `k` uses
/// substream `(seed, k << 32 | s)`, so the result does not depend on the
/// number of worker threads.
pub fn confusion_monte_carlo(
    ch: &GaussianChannel,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<MonteCarloConfusion> {
    let constellation = make_kpsk(k)?;
    if n_samples == 0 {
        return Err(Error::domain("n_samples must be >= 1"));
    }
    let shards = n_samples.div_ceil(SHARD_SAMPLES);
    let jobs: Vec<(usize, usize)> = (0..k)
        .flat_map(|sym| (0..shards).map(move |s| (sym, s)))
        .collect();
    let counts: Vec<Vec<u64>> = jobs
        .par_iter()
        .map(|&(sym, shard)| {
            let mut stream = Stream::substream(seed, ((sym as u64) << 32) | shard as u64);
            let start = shard * SHARD_SAMPLES;
            let len = SHARD_SAMPLES.min(n_samples - start);
            let angle = constellation.angle(sym);
            let mut hist = vec![0u64; k];
            for _ in 0..len {
                let p = sample_unchecked(ch, angle, &mut stream);
                hist[constellation.decide(p)] += 1;
            }
            hist
        })
        .collect();

    let mut totals = vec![0u64; k * k];
    for (&(sym, _), hist) in jobs.iter().zip(&counts) {
        for (col, &c) in hist.iter().enumerate() {
            totals[sym * k + col] += c;
        }
    }

    let n = n_samples as f64;
    let p: Vec<f64> = totals.iter().map(|&c| c as f64 / n).collect();
    let floor = 1.0 / n;
    let std_err = p
        .iter()
        .map(|&x| {
            let se = (x * (1.0 - x) / n).sqrt();
            if se > 0.0 {
                se
            } else {
                floor
            }
        })
        .collect();
    Ok(MonteCarloConfusion {
        matrix: ConfusionMatrix { k, p },
        std_err,
        samples_per_symbol: n_samples,
    })
}

/// Upper-tail standard normal probability, `Q(x) = Φ(-x)`.
pub fn normal_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// BPSK symbol error probability `Q(sqrt(snr))`.
pub fn bpsk_error_closed_form(snr: f64) -> Result<f64> {
    if snr.is_nan() || snr < 0.0 {
        return Err(Error::domain(format!("snr must be >= 0, got {snr}")));
    }
    Ok(normal_tail(snr.sqrt()))
}

/// Phase density of the received point when the mean sits at `(a, 0)` and
/// the noise has unit variance per quadrature.
pub fn phase_density(a: f64, phi: f64) -> f64 {
    let (s, c) = phi.sin_cos();
    let ac = a * c;
    let base = (-0.5 * a * a).exp() / TAU;
    let lobe = ac * (-0.5 * a * a * s * s).exp() * normal_tail(-ac) / (TAU).sqrt();
    (base + lobe).max(0.0)
}

// 15-point Kronrod abscissae on [-1, 1] (non-negative half) with the
// Kronrod weights and the embedded 7-point Gauss weights.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_3,
    0.949_107_912_342_758_524_526_189_684_047_9,
    0.864_864_423_359_769_072_789_712_788_640_9,
    0.741_531_185_599_394_439_863_864_773_280_8,
    0.586_087_235_467_691_130_294_144_845_693_0,
    0.405_845_151_377_397_166_906_606_412_076_9,
    0.207_784_955_007_898_467_600_689_403_773_2,
    0.000_000_000_000_000_000_000_000_000_000_0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_20,
    0.104_790_010_322_250_183_839_876_322_541_5,
    0.140_653_259_715_525_918_745_189_590_510_2,
    0.169_004_726_639_267_902_826_583_426_598_6,
    0.190_350_578_064_785_409_913_256_402_421_0,
    0.204_432_940_075_298_892_414_161_999_234_6,
    0.209_482_141_084_727_828_012_999_174_891_7,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_1,
    0.279_705_391_489_276_667_901_467_771_423_8,
    0.381_830_050_505_118_944_950_369_775_488_9,
    0.417_959_183_673_469_387_755_102_040_816_3,
];

/// Gauss–Kronrod 7/15 on `[lo, hi]`: `(estimate, |K15 - G7|)`.
fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64) {
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(centre);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += WGK[j] * pair;
        // Gauss nodes are the odd-indexed Kronrod nodes.
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Piece {
    wedge: usize,
    lo: f64,
    hi: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.err.total_cmp(&other.err) == Ordering::Equal
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Wedge probabilities `q(j)` for sent symbol 0 at normalised amplitude `a`.
pub fn wedge_probabilities(a: f64, k: usize, tol: f64) -> Result<Vec<f64>> {
    make_kpsk(k)?;
    if !(tol > 0.0 && tol <= 1e-3) {
        return Err(Error::domain(format!("quadrature tol must lie in (0, 1e-3], got {tol}")));
    }
    if !(a >= 0.0) {
        return Err(Error::domain(format!("amplitude must be >= 0, got {a}")));
    }
    let half_width = PI / k as f64;
    if a * half_width.sin() > UNDERFLOW_MARGIN || a.is_infinite() {
        let mut q = vec![0.0; k];
        q[0] = 1.0;
        return Ok(q);
    }
    if a == 0.0 {
        return Ok(vec![1.0 / k as f64; k]);
    }

    let f = |phi: f64| phase_density(a, phi);
    let mut heap = BinaryHeap::new();
    // Each wedge starts split at its centre, where the density of wedge 0
    // peaks.
    for wedge in 0..k {
        let centre = TAU * wedge as f64 / k as f64;
        for (lo, hi) in [(centre - half_width, centre), (centre, centre + half_width)] {
            let (value, err) = gauss_kronrod(&f, lo, hi);
            heap.push(Piece { wedge, lo, hi, value, err });
        }
    }
    let target = 0.25 * tol;
    let mut total_err: f64 = heap.iter().map(|p| p.err).sum();
    let mut splits = 0;
    while total_err > target && splits < MAX_SUBDIVISIONS {
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.lo + worst.hi);
        let (v1, e1) = gauss_kronrod(&f, worst.lo, mid);
        let (v2, e2) = gauss_kronrod(&f, mid, worst.hi);
        total_err += e1 + e2 - worst.err;
        heap.push(Piece { wedge: worst.wedge, lo: worst.lo, hi: mid, value: v1, err: e1 });
        heap.push(Piece { wedge: worst.wedge, lo: mid, hi: worst.hi, value: v2, err: e2 });
        splits += 1;
        if splits % 256 == 0 {
            // Re-sum to stop the running total drifting.
            total_err = heap.iter().map(|p| p.err).sum();
        }
    }

    total_err = heap.iter().map(|p| p.err).sum();
    let mut q = vec![0.0; k];
    let mut pieces = heap.into_vec();
    // Fixed summation order keeps results bit-reproducible.
    pieces.sort_by(|x, y| x.wedge.cmp(&y.wedge).then(x.lo.total_cmp(&y.lo)));
    for piece in &pieces {
        q[piece.wedge] += piece.value;
    }
    for v in &mut q {
        *v = v.clamp(0.0, 1.0);
    }
    let defect = (q.iter().sum::<f64>() - 1.0).abs();
    if total_err > tol || defect > tol {
        return Err(Error::Quadrature {
            requested: tol,
            achieved: total_err.max(defect),
        });
    }
    Ok(q)
}

/// Quadrature confusion matrix for `ch` and a `k`-point alphabet.
pub fn confusion_quadrature(ch: &GaussianChannel, k: usize, tol: f64) -> Result<ConfusionMatrix> {
    let q = wedge_probabilities(ch.amplitude(), k, tol)?;
    ConfusionMatrix::circulant(&q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snr_channel(snr: f64) -> GaussianChannel {
        GaussianChannel::from_snr(snr).unwrap()
    }

    #[test]
    fn closed_form_bpsk() {
        assert_eq!(bpsk_error_closed_form(0.0).unwrap(), 0.5);
        // Q(2) to 12 digits.
        assert!((bpsk_error_closed_form(4.0).unwrap() - 0.022_750_131_948_179).abs() < 1e-14);
        assert_eq!(bpsk_error_closed_form(1e6).unwrap(), 0.0);
        assert!(bpsk_error_closed_form(-1.0).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        // Trapezoid over a full period is spectrally accurate for a
        // periodic integrand; independent of the adaptive scheme.
        for a in [0.0, 0.5, 2.0, 5.0] {
            let n = 4096;
            let h = TAU / n as f64;
            let total: f64 = (0..n).map(|i| phase_density(a, i as f64 * h)).sum::<f64>() * h;
            assert!((total - 1.0).abs() < 1e-12, "a = {a}: {total}");
        }
    }

    #[test]
    fn zero_snr_is_uniform() {
        let cm = confusion_quadrature(&snr_channel(0.0), 4, DEFAULT_QUAD_TOL).unwrap();
        for r in cm.rows() {
            for &x in r {
                assert!((x - 0.25).abs() < DEFAULT_QUAD_TOL);
            }
        }
    }

    #[test]
    fn bpsk_matches_tail() {
        let cm = confusion_quadrature(&snr_channel(4.0), 2, DEFAULT_QUAD_TOL).unwrap();
        assert!((cm.get(0, 1) - 0.022_750_131_948_179).abs() < 1e-9);
        assert!((cm.get(1, 0) - cm.get(0, 1)).abs() < 1e-15);
    }

    #[test]
    fn huge_snr_is_identity() {
        for k in [2, 4, 8, 32] {
            let cm = confusion_quadrature(&snr_channel(1e6), k, DEFAULT_QUAD_TOL).unwrap();
            for s in 0..k {
                for d in 0..k {
                    let want = if s == d { 1.0 } else { 0.0 };
                    assert!((cm.get(s, d) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn moderate_snr_off_identity_goes_through_quadrature() {
        // a·sin(π/32) ≈ 9.8 here, so the underflow shortcut is not taken.
        let q = wedge_probabilities(100.0, 32, DEFAULT_QUAD_TOL).unwrap();
        // Q(9.8) is about 5e-23.
        assert!(q[1] > 1e-24 && q[1] < 1e-21, "q[1] = {:e}", q[1]);
        assert!((q[1] - q[31]).abs() < 1e-10 * q[1]);
    }

    #[test]
    fn quadrature_rows_and_symmetry() {
        for k in [2, 3, 4, 8, 32] {
            for snr in [0.1, 1.0, 10.0, 100.0, 1e4] {
                let cm = confusion_quadrature(&snr_channel(snr), k, DEFAULT_QUAD_TOL).unwrap();
                assert!(cm.max_row_defect() <= DEFAULT_QUAD_TOL, "K={k} snr={snr}");
                assert!(cm.circulant_defect() <= 1e-10);
                // Mirror symmetry of the wedges about the sent symbol.
                for j in 1..k {
                    assert!((cm.get(0, j) - cm.get(0, k - j)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn correct_decision_grows_with_snr() {
        for k in [2, 8, 32] {
            let mut prev = 0.0;
            for snr in [0.0, 0.01, 0.1, 0.5, 1.0, 3.0, 10.0, 30.0, 100.0, 1e3] {
                let q0 = wedge_probabilities(f64::sqrt(snr), k, DEFAULT_QUAD_TOL).unwrap()[0];
                assert!(q0 + 1e-12 >= prev, "K={k} snr={snr}");
                prev = q0;
            }
        }
    }

    #[test]
    fn bad_tolerance_and_alphabet() {
        assert!(wedge_probabilities(1.0, 4, 0.0).is_err());
        assert!(wedge_probabilities(1.0, 4, 1e-2).is_err());
        assert_eq!(wedge_probabilities(1.0, 1, 1e-10), Err(Error::InvalidAlphabet(1)));
    }

    #[test]
    fn noiseless_samples() {
        let c4 = make_kpsk(4).unwrap();
        let c2 = make_kpsk(2).unwrap();
        let mut s = Stream::new(1);
        let ch = GaussianChannel::noiseless(1.0).unwrap();
        assert_eq!(sample_iq(&ch, &c2, 0, &mut s).unwrap(), IqPoint::new(1.0, 0.0));
        let ch = GaussianChannel::noiseless(2.0).unwrap();
        let p = sample_iq(&ch, &c4, 1, &mut s).unwrap();
        assert!(p.i.abs() < 1e-15 && (p.q - 2.0).abs() < 1e-15);
        assert!(sample_iq(&ch, &c4, 4, &mut s).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let c = make_kpsk(8).unwrap();
        let ch = snr_channel(3.0);
        let mut a = Stream::new(99);
        let mut b = Stream::new(99);
        for _ in 0..10 {
            assert_eq!(
                sample_iq(&ch, &c, 3, &mut a).unwrap(),
                sample_iq(&ch, &c, 3, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn monte_carlo_zero_snr() {
        let n = 1_000_000;
        let mc = confusion_monte_carlo(&snr_channel(0.0), 4, n, 5).unwrap();
        for s in 0..4 {
            for d in 0..4 {
                let z = (mc.matrix.get(s, d) - 0.25).abs() / mc.std_err(s, d);
                assert!(z < 4.0, "entry ({s},{d}) off by {z} s.e.");
            }
        }
        assert!(mc.matrix.max_row_defect() < 1e-12);
    }

    #[test]
    fn monte_carlo_errors_and_floor() {
        assert!(confusion_monte_carlo(&snr_channel(1.0), 4, 0, 0).is_err());
        let mc = confusion_monte_carlo(&snr_channel(1e6), 4, 1000, 0).unwrap();
        assert_eq!(mc.matrix.get(0, 0), 1.0);
        assert_eq!(mc.std_err(0, 2), 1e-3);
        assert_eq!(mc.std_err(0, 0), 1e-3);
    }

    #[test]
    fn monte_carlo_independent_of_thread_count() {
        let ch = snr_channel(5.0);
        let reference = confusion_monte_carlo(&ch, 8, 200_000, 11).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| confusion_monte_carlo(&ch, 8, 200_000, 11).unwrap());
        assert_eq!(reference, single);
    }
}
