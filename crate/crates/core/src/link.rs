//! Protocol parameters and the link budget mapping them onto the per-symbol
//! Gaussian measurement channel seen by Alice's dual-homodyne receiver.
//!
//! The channel model is deliberately a single seam: everything downstream
//! consumes only the mean radius `r` and per-quadrature deviation `sigma`
//! of a [`GaussianChannel`], so a different receiver-noise model replaces
//! [`link_budget`] and nothing else.
//!
//! The default model takes the coherent signal energy per symbol as
//! `r² = η M κ_S² G_B (1-κ_A)(1-κ_B) N_S` (the light crosses the fiber in
//! both directions) and the quadrature noise as vacuum plus the returned
//! amplifier ASE, `σ² = (1 + η κ_S N_B) / 2` with `N_B = G_B - 1`. LO excess
//! noise (`N_LO ≫ 1`) and source excess noise (`N_S ≪ 1`) are dropped.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this many modes per symbol the Gaussian receiver approximation is
/// flagged as questionable.
pub const LOW_MODE_THRESHOLD: f64 = 10.0;

/// Physical and protocol constants of one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Source bandwidth (Hz).
    pub w_hz: f64,
    /// Symbol rate (symbols/s).
    pub r_baud: f64,
    /// Alphabet size.
    pub k: usize,
    /// Source brightness delivered to Bob (photons/mode).
    pub n_s: f64,
    /// Bob's amplifier gain.
    pub g_b: f64,
    /// Local-oscillator brightness (photons/mode).
    pub n_lo: f64,
    /// Alice's monitor tap fraction.
    pub kappa_a: f64,
    /// Bob's monitor tap fraction.
    pub kappa_b: f64,
    /// ASE-to-SPDC ratio.
    pub n: f64,
    /// Fiber loss (dB/km).
    pub alpha_db_per_km: f64,
    /// One-way path length (km).
    pub l_km: f64,
    /// Homodyne detection efficiency.
    pub eta: f64,
    /// Reconciliation efficiency.
    pub beta: f64,
}

impl ProtocolParams {
    /// Reference operating point at the given brightness: 2 THz bandwidth,
    /// 10 Gbaud, `G_B = 1e6`, `N_LO = 1e4`, 1% taps, `n = 99`, 0.2 dB/km,
    /// `η = 0.9`, `β = 0.94`, BPSK over 50 km.
    pub fn reference(n_s: f64) -> Self {
        Self {
            w_hz: 2e12,
            r_baud: 1e10,
            k: 2,
            n_s,
            g_b: 1e6,
            n_lo: 1e4,
            kappa_a: 0.01,
            kappa_b: 0.01,
            n: 99.0,
            alpha_db_per_km: 0.2,
            l_km: 50.0,
            eta: 0.9,
            beta: 0.94,
        }
    }

    pub fn with_brightness(mut self, n_s: f64) -> Self {
        self.n_s = n_s;
        self
    }

    pub fn with_length(mut self, l_km: f64) -> Self {
        self.l_km = l_km;
        self
    }

    pub fn with_alphabet(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    /// Symbol duration `T = 1/R` (s).
    pub fn symbol_time(&self) -> f64 {
        1.0 / self.r_baud
    }

    /// Amplifier output ASE brightness `N_B = G_B - 1`.
    pub fn n_b(&self) -> f64 {
        self.g_b - 1.0
    }

    pub fn transmissivity(&self) -> f64 {
        10f64.powf(-self.alpha_db_per_km * self.l_km / 10.0)
    }

    pub fn modes(&self) -> f64 {
        self.w_hz / self.r_baud
    }

    /// Checks every field invariant, naming the first violation.
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, what: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::domain(format!("parameter out of range: {what}")))
            }
        }
        let finite = [
            self.w_hz,
            self.r_baud,
            self.n_s,
            self.g_b,
            self.n_lo,
            self.kappa_a,
            self.kappa_b,
            self.n,
            self.alpha_db_per_km,
            self.l_km,
            self.eta,
            self.beta,
        ]
        .iter()
        .all(|v| v.is_finite());
        check(finite, "all parameters must be finite")?;
        check(self.w_hz > 0.0, "W_hz > 0")?;
        check(self.r_baud > 0.0, "R_baud > 0")?;
        if self.k < 2 {
            return Err(Error::InvalidAlphabet(self.k));
        }
        check(self.n_s > 0.0, "N_S > 0")?;
        check(self.g_b >= 1.0, "G_B >= 1")?;
        check(self.n_lo > 0.0, "N_LO > 0")?;
        check((0.0..1.0).contains(&self.kappa_a), "0 <= kappa_A < 1")?;
        check((0.0..1.0).contains(&self.kappa_b), "0 <= kappa_B < 1")?;
        check(self.n >= 0.0, "n >= 0")?;
        check(self.alpha_db_per_km >= 0.0, "alpha_db_per_km >= 0")?;
        check(self.l_km >= 0.0, "L_km >= 0")?;
        check(self.eta > 0.0 && self.eta <= 1.0, "0 < eta <= 1")?;
        check(self.beta > 0.0 && self.beta <= 1.0, "0 < beta <= 1")?;
        Ok(())
    }
}

/// Partial parameter document: the on-disk JSON form and the CLI override
/// layer. Absent fields fall back to [`ProtocolParams::reference`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDoc {
    #[serde(rename = "W_hz", default, skip_serializing_if = "Option::is_none")]
    pub w_hz: Option<f64>,
    #[serde(rename = "R_baud", default, skip_serializing_if = "Option::is_none")]
    pub r_baud: Option<f64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(rename = "N_S", default, skip_serializing_if = "Option::is_none")]
    pub n_s: Option<f64>,
    #[serde(rename = "G_B", default, skip_serializing_if = "Option::is_none")]
    pub g_b: Option<f64>,
    #[serde(rename = "N_LO", default, skip_serializing_if = "Option::is_none")]
    pub n_lo: Option<f64>,
    #[serde(rename = "kappa_A", default, skip_serializing_if = "Option::is_none")]
    pub kappa_a: Option<f64>,
    #[serde(rename = "kappa_B", default, skip_serializing_if = "Option::is_none")]
    pub kappa_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_db_per_km: Option<f64>,
    #[serde(rename = "L_km", default, skip_serializing_if = "Option::is_none")]
    pub l_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl ParamsDoc {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("params JSON: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fields set in `other` win.
    pub fn overlay(&self, other: &ParamsDoc) -> ParamsDoc {
        ParamsDoc {
            w_hz: other.w_hz.or(self.w_hz),
            r_baud: other.r_baud.or(self.r_baud),
            k: other.k.or(self.k),
            n_s: other.n_s.or(self.n_s),
            g_b: other.g_b.or(self.g_b),
            n_lo: other.n_lo.or(self.n_lo),
            kappa_a: other.kappa_a.or(self.kappa_a),
            kappa_b: other.kappa_b.or(self.kappa_b),
            n: other.n.or(self.n),
            alpha_db_per_km: other.alpha_db_per_km.or(self.alpha_db_per_km),
            l_km: other.l_km.or(self.l_km),
            eta: other.eta.or(self.eta),
            beta: other.beta.or(self.beta),
        }
    }

    /// Fills gaps from the reference table. `N_S` has no reference value;
    /// when absent, `n_s_fallback` is used and an error is raised if that
    /// is `None` too.
    pub fn resolve(&self, n_s_fallback: Option<f64>) -> Result<ProtocolParams> {
        let n_s = self
            .n_s
            .or(n_s_fallback)
            .ok_or_else(|| Error::Config("N_S is required for this operation".into()))?;
        let d = ProtocolParams::reference(n_s);
        let p = ProtocolParams {
            w_hz: self.w_hz.unwrap_or(d.w_hz),
            r_baud: self.r_baud.unwrap_or(d.r_baud),
            k: self.k.unwrap_or(d.k),
            n_s,
            g_b: self.g_b.unwrap_or(d.g_b),
            n_lo: self.n_lo.unwrap_or(d.n_lo),
            kappa_a: self.kappa_a.unwrap_or(d.kappa_a),
            kappa_b: self.kappa_b.unwrap_or(d.kappa_b),
            n: self.n.unwrap_or(d.n),
            alpha_db_per_km: self.alpha_db_per_km.unwrap_or(d.alpha_db_per_km),
            l_km: self.l_km.unwrap_or(d.l_km),
            eta: self.eta.unwrap_or(d.eta),
            beta: self.beta.unwrap_or(d.beta),
        };
        p.validate()?;
        Ok(p)
    }
}

/// Per-symbol Gaussian measurement model: the received `(I, Q)` pair for
/// symbol `k` is `r·(cos θ_k, sin θ_k)` plus isotropic noise of standard
/// deviation `sigma` per quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianChannel {
    r2: f64,
    sigma2: f64,
    noiseless: bool,
}

impl GaussianChannel {
    pub fn new(r: f64, sigma: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::domain(format!("channel radius must be >= 0, got {r}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::domain(format!("channel sigma must be > 0, got {sigma}")));
        }
        Self::from_moments(r * r, sigma * sigma)
    }

    /// Channel from the squared mean radius and the per-quadrature variance.
    pub fn from_moments(r2: f64, sigma2: f64) -> Result<Self> {
        if !(r2.is_finite() && r2 >= 0.0) {
            return Err(Error::domain(format!("squared radius must be >= 0, got {r2}")));
        }
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::domain(format!("variance must be > 0, got {sigma2}")));
        }
        Ok(Self {
            r2,
            sigma2,
            noiseless: false,
        })
    }

    /// Unit-noise channel with the requested SNR (`r = sqrt(snr)`, `σ = 1`).
    pub fn from_snr(snr: f64) -> Result<Self> {
        if !(snr.is_finite() && snr >= 0.0) {
            return Err(Error::domain(format!("snr must be finite and >= 0, got {snr}")));
        }
        Self::from_moments(snr, 1.0)
    }

    /// Zero-noise channel. `sigma` is reported as `1e-300` so that it stays
    /// positive; samplers skip the noise draw entirely.
    pub fn noiseless(r: f64) -> Result<Self> {
        let mut ch = Self::new(r, 1.0)?;
        ch.sigma2 = f64::MIN_POSITIVE;
        ch.noiseless = true;
        Ok(ch)
    }

    pub fn r(&self) -> f64 {
        self.r2.sqrt()
    }

    pub fn sigma(&self) -> f64 {
        if self.noiseless {
            1e-300
        } else {
            self.sigma2.sqrt()
        }
    }

    pub fn r_squared(&self) -> f64 {
        self.r2
    }

    pub fn variance(&self) -> f64 {
        self.sigma2
    }

    pub fn is_noiseless(&self) -> bool {
        self.noiseless
    }

    pub fn snr(&self) -> f64 {
        if self.noiseless {
            return if self.r2 > 0.0 { f64::INFINITY } else { 0.0 };
        }
        self.r2 / self.sigma2
    }

    /// `r / σ`, the normalised distance of each symbol from the origin.
    pub fn amplitude(&self) -> f64 {
        self.snr().sqrt()
    }
}

/// Number of optical modes per symbol, with the low-mode warning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCount {
    pub modes: f64,
    pub low_mode_warning: bool,
}

/// Fiber power transmission `10^(-αL/10)`.
pub fn path_transmissivity(l_km: f64, alpha_db_per_km: f64) -> Result<f64> {
    if !(l_km >= 0.0 && alpha_db_per_km >= 0.0) || !l_km.is_finite() || !alpha_db_per_km.is_finite()
    {
        return Err(Error::domain(format!(
            "path length and loss must be finite and >= 0 (L = {l_km}, alpha = {alpha_db_per_km})"
        )));
    }
    Ok(10f64.powf(-alpha_db_per_km * l_km / 10.0))
}

/// `M = T·W = W/R`, not rounded.
pub fn modes_per_symbol(w_hz: f64, r_baud: f64) -> Result<ModeCount> {
    if !(w_hz > 0.0 && r_baud > 0.0) || !w_hz.is_finite() || !r_baud.is_finite() {
        return Err(Error::domain(format!(
            "bandwidth and symbol rate must be positive (W = {w_hz}, R = {r_baud})"
        )));
    }
    let modes = w_hz / r_baud;
    Ok(ModeCount {
        modes,
        low_mode_warning: modes < LOW_MODE_THRESHOLD,
    })
}

/// Default receiver model (see the module docs).
pub fn link_budget(p: &ProtocolParams) -> Result<GaussianChannel> {
    p.validate()?;
    link_budget_unchecked(p)
}

/// [`link_budget`] without the `N_S > 0` requirement, used where a zero
/// brightness is a meaningful limit.
pub fn link_budget_unchecked(p: &ProtocolParams) -> Result<GaussianChannel> {
    let kappa_s = path_transmissivity(p.l_km, p.alpha_db_per_km)?;
    let m = modes_per_symbol(p.w_hz, p.r_baud)?;
    if m.low_mode_warning {
        log::warn!(
            "only {:.3} modes per symbol; the Gaussian receiver model assumes M >> 1",
            m.modes
        );
    }
    if p.n_s < 0.0 {
        return Err(Error::domain(format!("N_S must be >= 0, got {}", p.n_s)));
    }
    let r2 = p.eta
        * m.modes
        * kappa_s
        * kappa_s
        * p.g_b
        * (1.0 - p.kappa_a)
        * (1.0 - p.kappa_b)
        * p.n_s;
    let sigma2 = 0.5 * (1.0 + p.eta * kappa_s * p.n_b());
    GaussianChannel::from_moments(r2, sigma2)
}
