//! Shannon-information rate, secret-key-rate lower bound, and the
//! eavesdropper-information models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::ProtocolParams;
use crate::receiver::ConfusionMatrix;

/// Row-sum slack accepted by [`mutual_information`].
pub const STOCHASTIC_TOL: f64 = 1e-6;

/// Normalisation slack accepted by [`mutual_information_circulant`].
pub const CIRCULANT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateResult {
    /// Alice–Bob Shannon-information rate (bits/s).
    pub i_ab: f64,
    /// Eve's Holevo-information rate bound (bits/s).
    pub chi: f64,
    /// `max(0, β·I_AB - χ)` (bits/s).
    pub skr_lb: f64,
    /// `β·I_AB > χ`.
    pub secure: bool,
}

/// `I_AB = R Σ_k Σ_k̃ [p(k̃|k)/K] log2[K p(k̃|k) / Σ_k' p(k̃|k')]`, with
/// `0·log 0 = 0`.
pub fn mutual_information(cm: &ConfusionMatrix, r_baud: f64) -> Result<f64> {
    if !(r_baud > 0.0 && r_baud.is_finite()) {
        return Err(Error::domain(format!("symbol rate must be positive, got {r_baud}")));
    }
    let defect = cm.max_row_defect();
    if defect > STOCHASTIC_TOL {
        return Err(Error::domain(format!(
            "confusion matrix is not row-stochastic (row defect {defect:e})"
        )));
    }
    let k = cm.size();
    let kf = k as f64;
    let col_sums: Vec<f64> = (0..k).map(|d| (0..k).map(|s| cm.get(s, d)).sum()).collect();
    let mut bits = 0.0;
    for sent in 0..k {
        for (decoded, &p) in cm.row(sent).iter().enumerate() {
            if p > 0.0 {
                bits += p / kf * (kf * p / col_sums[decoded]).log2();
            }
        }
    }
    // Rounding can leave a tiny negative value for independent channels.
    Ok((r_baud * bits).max(0.0))
}

/// Shannon entropy in bits.
pub fn entropy_bits(q: &[f64]) -> f64 {
    -q.iter().filter(|&&x| x > 0.0).map(|&x| x * x.log2()).sum::<f64>()
}

/// Circulant shortcut `R (log2 K - H(q))`, where `q(j)` is the probability
/// of decoding `k + j` when `k` was sent.
pub fn mutual_information_circulant(q: &[f64], r_baud: f64) -> Result<f64> {
    if q.len() < 2 {
        return Err(Error::InvalidAlphabet(q.len()));
    }
    if !(r_baud > 0.0 && r_baud.is_finite()) {
        return Err(Error::domain(format!("symbol rate must be positive, got {r_baud}")));
    }
    if q.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::domain("offset distribution has entries outside [0, 1]"));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > CIRCULANT_NORM_TOL {
        return Err(Error::domain(format!("offset distribution sums to {total}, not 1")));
    }
    let bits = (q.len() as f64).log2() - entropy_bits(q);
    Ok((r_baud * bits).max(0.0))
}

/// `ΔI = β·I_AB - χ`, clamped at zero with the sign kept in `secure`.
pub fn skr_lower_bound(i_ab: f64, beta: f64, chi: f64) -> Result<RateResult> {
    if !(i_ab >= 0.0) || !(chi >= 0.0) {
        return Err(Error::domain(format!(
            "rates must be non-negative (I_AB = {i_ab}, chi = {chi})"
        )));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::domain(format!("beta must lie in (0, 1], got {beta}")));
    }
    let margin = beta * i_ab - chi;
    Ok(RateResult {
        i_ab,
        chi,
        skr_lb: margin.max(0.0),
        secure: margin > 0.0,
    })
}

/// Upper bound on Eve's Holevo-information rate at an operating point.
///
/// Implementations are immutable after construction and shared across
/// worker threads.
pub trait EveModel: Send + Sync {
    /// `χ` in bits/s for parameters `p` and intrusion parameter `f_e`.
    fn chi(&self, p: &ProtocolParams, f_e: f64) -> Result<f64>;

    fn name(&self) -> String;
}

/// Validated wrapper around [`EveModel::chi`].
pub fn eve_chi(model: &dyn EveModel, p: &ProtocolParams, f_e: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&f_e) {
        return Err(Error::domain(format!("f_E must lie in [0, 1], got {f_e}")));
    }
    let chi = model.chi(p, f_e)?;
    if !(chi >= 0.0) {
        return Err(Error::domain(format!("{} returned chi = {chi}", model.name())));
    }
    Ok(chi)
}

/// Eve learns nothing.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ZeroLeakage;

impl EveModel for ZeroLeakage {
    fn chi(&self, _p: &ProtocolParams, _f_e: f64) -> Result<f64> {
        Ok(0.0)
    }

    fn name(&self) -> String {
        "zero".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableAxes {
    #[serde(rename = "L_km")]
    pub l_km: Vec<f64>,
    #[serde(rename = "N_S")]
    pub n_s: Vec<f64>,
    #[serde(rename = "f_E")]
    pub f_e: Vec<f64>,
}

/// On-disk form of a [`TabulatedBound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableFile {
    pub axes: TableAxes,
    /// Row-major over `(L_km, N_S, f_E)`, `f_E` fastest.
    pub chi_bits_per_s: Vec<f64>,
}

/// `χ` tabulated on a rectilinear `(L, N_S, f_E)` grid, evaluated by
/// trilinear interpolation. Queries outside the grid are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedBound {
    table: TableFile,
}

impl TabulatedBound {
    pub fn new(table: TableFile) -> Result<Self> {
        let axes = &table.axes;
        for (name, axis) in [("L_km", &axes.l_km), ("N_S", &axes.n_s), ("f_E", &axes.f_e)] {
            if axis.is_empty() {
                return Err(Error::Config(format!("table axis {name} is empty")));
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("table axis {name} has non-finite values")));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("table axis {name} is not strictly ascending")));
            }
        }
        let expected = axes.l_km.len() * axes.n_s.len() * axes.f_e.len();
        if table.chi_bits_per_s.len() != expected {
            return Err(Error::Config(format!(
                "table has {} chi values, expected {expected}",
                table.chi_bits_per_s.len()
            )));
        }
        if table.chi_bits_per_s.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("table chi values must be finite and >= 0".into()));
        }
        Ok(Self { table })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: TableFile = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("chi table JSON: {e}")))?;
        Self::new(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn table(&self) -> &TableFile {
        &self.table
    }

    fn node(&self, il: usize, is: usize, ie: usize) -> f64 {
        let axes = &self.table.axes;
        self.table.chi_bits_per_s[(il * axes.n_s.len() + is) * axes.f_e.len() + ie]
    }

    /// Trilinear interpolation at `(l_km, n_s, f_e)`.
    pub fn interpolate(&self, l_km: f64, n_s: f64, f_e: f64) -> Result<f64> {
        let axes = &self.table.axes;
        let (l0, tl) = locate("L_km", &axes.l_km, l_km)?;
        let (s0, ts) = locate("N_S", &axes.n_s, n_s)?;
        let (e0, te) = locate("f_E", &axes.f_e, f_e)?;
        let mut acc = 0.0;
        for (dl, wl) in [(0, 1.0 - tl), (1, tl)] {
            for (ds, ws) in [(0, 1.0 - ts), (1, ts)] {
                for (de, we) in [(0, 1.0 - te), (1, te)] {
                    let w = wl * ws * we;
                    if w != 0.0 {
                        acc += w * self.node(l0 + dl, s0 + ds, e0 + de);
                    }
                }
            }
        }
        Ok(acc)
    }
}

/// Lower cell index and fractional position of `x` on `axis`.
fn locate(name: &'static str, axis: &[f64], x: f64) -> Result<(usize, f64)> {
    let (min, max) = (axis[0], axis[axis.len() - 1]);
    if !(x >= min && x <= max) {
        return Err(Error::OutOfRange { axis: name, value: x, min, max });
    }
    if axis.len() == 1 {
        return Ok((0, 0.0));
    }
    // Index of the first node strictly greater than x, kept inside the grid.
    let upper = axis.partition_point(|&v| v <= x).clamp(1, axis.len() - 1);
    let lo = upper - 1;
    let t = (x - axis[lo]) / (axis[upper] - axis[lo]);
    Ok((lo, t.clamp(0.0, 1.0)))
}

impl EveModel for TabulatedBound {
    fn chi(&self, p: &ProtocolParams, f_e: f64) -> Result<f64> {
        self.interpolate(p.l_km, p.n_s, f_e)
    }

    fn name(&self) -> String {
        "table".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h2(p: f64) -> f64 {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }

    #[test]
    fn identity_and_uniform() {
        let id = ConfusionMatrix::identity(4).unwrap();
        assert!((mutual_information(&id, 1e10).unwrap() - 2e10).abs() < 1e-3);
        let u = ConfusionMatrix::uniform(4).unwrap();
        assert!(mutual_information(&u, 1e10).unwrap().abs() < 1e-3);
    }

    #[test]
    fn binary_symmetric() {
        let cm = ConfusionMatrix::circulant(&[0.89, 0.11]).unwrap();
        let got = mutual_information(&cm, 1.0).unwrap();
        assert!((got - (1.0 - h2(0.11))).abs() < 1e-15);
        assert!((got - 0.5001).abs() < 1e-4);
    }

    #[test]
    fn rejects_non_stochastic() {
        let cm = ConfusionMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.49]], 0.1).unwrap();
        assert!(mutual_information(&cm, 1.0).is_err());
        let id = ConfusionMatrix::identity(2).unwrap();
        assert!(mutual_information(&id, 0.0).is_err());
    }

    #[test]
    fn circulant_shortcut() {
        assert!((mutual_information_circulant(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 5.0).unwrap() - 15.0).abs() < 1e-12);
        assert!(mutual_information_circulant(&[0.25; 4], 1.0).unwrap().abs() < 1e-15);
        assert!(mutual_information_circulant(&[0.5, 0.4], 1.0).is_err());
        assert!(mutual_information_circulant(&[1.0], 1.0).is_err());
    }

    #[test]
    fn skr_examples() {
        let r = skr_lower_bound(1e10, 0.94, 4e9).unwrap();
        assert!((r.skr_lb - 5.4e9).abs() < 1e-3);
        assert!(r.secure);
        let r = skr_lower_bound(1e9, 0.94, 1e9).unwrap();
        assert_eq!(r.skr_lb, 0.0);
        assert!(!r.secure);
        let r = skr_lower_bound(3e9, 0.8, 0.0).unwrap();
        assert_eq!(r.skr_lb, 0.8 * 3e9);
        assert!(r.secure);
        let r = skr_lower_bound(0.0, 0.8, 0.0).unwrap();
        assert!(!r.secure);
        assert!(skr_lower_bound(-1.0, 0.9, 0.0).is_err());
        assert!(skr_lower_bound(1.0, 0.0, 0.0).is_err());
        assert!(skr_lower_bound(1.0, 0.9, -1.0).is_err());
    }

    fn small_table() -> TabulatedBound {
        // f_E fastest: value = 100·il + 10·is + ie.
        let mut chi = Vec::new();
        for il in 0..3 {
            for is in 0..2 {
                for ie in 0..2 {
                    chi.push((100 * il + 10 * is + ie) as f64);
                }
            }
        }
        TabulatedBound::new(TableFile {
            axes: TableAxes {
                l_km: vec![0.0, 50.0, 100.0],
                n_s: vec![0.01, 0.1],
                f_e: vec![0.0, 1.0],
            },
            chi_bits_per_s: chi,
        })
        .unwrap()
    }

    #[test]
    fn zero_leakage() {
        let p = ProtocolParams::reference(0.2);
        assert_eq!(eve_chi(&ZeroLeakage, &p, 0.0).unwrap(), 0.0);
        assert_eq!(eve_chi(&ZeroLeakage, &p.with_length(149.0), 0.7).unwrap(), 0.0);
        assert!(eve_chi(&ZeroLeakage, &p, 1.5).is_err());
    }

    #[test]
    fn table_nodes_and_midpoints() {
        let t = small_table();
        let p = ProtocolParams::reference(0.1).with_length(50.0);
        assert_eq!(eve_chi(&t, &p, 1.0).unwrap(), 111.0);
        assert_eq!(t.interpolate(100.0, 0.01, 0.0).unwrap(), 200.0);
        // Midpoint along L with the other axes on-node.
        assert_eq!(t.interpolate(25.0, 0.1, 0.0).unwrap(), 0.5 * (10.0 + 110.0));
        assert_eq!(t.interpolate(50.0, 0.1, 0.5).unwrap(), 110.5);
    }

    #[test]
    fn table_refuses_extrapolation() {
        let t = small_table();
        assert!(matches!(
            t.interpolate(100.5, 0.05, 0.0),
            Err(Error::OutOfRange { axis: "L_km", .. })
        ));
        assert!(matches!(
            t.interpolate(10.0, 0.001, 0.0),
            Err(Error::OutOfRange { axis: "N_S", .. })
        ));
        assert!(t.interpolate(f64::NAN, 0.05, 0.0).is_err());
    }

    #[test]
    fn table_json_schema() {
        let json = r#"{"axes": {"L_km": [0, 100], "N_S": [0.001], "f_E": [0, 1]},
                       "chi_bits_per_s": [1, 2, 3, 4]}"#;
        let t = TabulatedBound::from_json(json).unwrap();
        assert_eq!(t.interpolate(50.0, 0.001, 0.5).unwrap(), 2.5);
        assert!(t.interpolate(50.0, 0.002, 0.5).is_err());
        let short = r#"{"axes": {"L_km": [0, 100], "N_S": [0.001], "f_E": [0, 1]},
                        "chi_bits_per_s": [1, 2, 3]}"#;
        assert!(TabulatedBound::from_json(short).is_err());
        let unsorted = r#"{"axes": {"L_km": [100, 0], "N_S": [0.001], "f_E": [0]},
                           "chi_bits_per_s": [1, 2]}"#;
        assert!(TabulatedBound::from_json(unsorted).is_err());
    }

    fn stochastic_matrix(k: usize, raw: &[f64]) -> ConfusionMatrix {
        let rows: Vec<Vec<f64>> = raw
            .chunks(k)
            .map(|row| {
                let s: f64 = row.iter().sum();
                row.iter().map(|x| x / s).collect()
            })
            .collect();
        ConfusionMatrix::from_rows(&rows, 1e-12).unwrap()
    }

    fn matrix_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
        (2usize..7).prop_flat_map(|k| (Just(k), prop::collection::vec(0.01f64..1.0, k * k)))
    }

    proptest! {
        #[test]
        fn bounded_by_log_k((k, raw) in matrix_strategy()) {
            let cm = stochastic_matrix(k, &raw);
            let i = mutual_information(&cm, 1.0).unwrap();
            prop_assert!(i >= 0.0);
            prop_assert!(i <= (k as f64).log2() + 1e-12);
        }

        #[test]
        fn permutation_invariant((k, raw) in matrix_strategy(), shift in 1usize..7) {
            let cm = stochastic_matrix(k, &raw);
            let perm: Vec<usize> = (0..k).map(|i| (i * (2 * shift + 1) + shift) % k).collect();
            // Only a permutation when the multiplier is coprime with k.
            let mut seen = vec![false; k];
            for &p in &perm { seen[p] = true; }
            prop_assume!(seen.iter().all(|&s| s));
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|i| (0..k).map(|j| cm.get(perm[i], perm[j])).collect())
                .collect();
            let permuted = ConfusionMatrix::from_rows(&rows, 1e-12).unwrap();
            let a = mutual_information(&cm, 1.0).unwrap();
            let b = mutual_information(&permuted, 1.0).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn merging_outputs_never_helps((k, raw) in matrix_strategy()) {
            prop_assume!(k >= 3);
            let cm = stochastic_matrix(k, &raw);
            // Merge the last two output columns into one new column and pad
            // with a zero column so the matrix stays square.
            let rows: Vec<Vec<f64>> = cm
                .rows()
                .map(|r| {
                    let mut m = r[..k - 2].to_vec();
                    m.push(r[k - 2] + r[k - 1]);
                    m.push(0.0);
                    m
                })
                .collect();
            let merged = ConfusionMatrix::from_rows(&rows, 1e-12).unwrap();
            prop_assert!(mutual_information(&merged, 1.0).unwrap() <= mutual_information(&cm, 1.0).unwrap() + 1e-12);
        }

        #[test]
        fn skr_monotone(i1 in 0.0f64..1e10, di in 0.0f64..1e10, c1 in 0.0f64..1e10, dc in 0.0f64..1e10, beta in 0.01f64..1.0) {
            let base = skr_lower_bound(i1, beta, c1).unwrap().skr_lb;
            prop_assert!(skr_lower_bound(i1 + di, beta, c1).unwrap().skr_lb >= base);
            prop_assert!(skr_lower_bound(i1, beta, c1 + dc).unwrap().skr_lb <= base);
        }
    }
}
