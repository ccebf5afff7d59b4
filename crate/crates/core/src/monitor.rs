//! Single-photon channel monitoring: tap count simulation, the intrusion
//! parameter estimate, and the photon-flux check.
//!
//! Rate model: Alice's transmitted light has brightness `N_S` over `W`
//! modes/s, a fraction `1/(n+1)` of which is SPDC signal time-correlated
//! with the idler. Detectors have unit efficiency and no dark counts;
//! accidentals in a coincidence gate of width `gate` occur at
//! `S_I·S_X·gate`, identically in the aligned and shifted windows. Eve
//! replaces a fraction `f_true` of the light reaching Bob with uncorrelated
//! light of the same flux.

use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::link::{path_transmissivity, ProtocolParams};
use crate::stream::Stream;

pub const DEFAULT_GATE_S: f64 = 1e-9;
pub const DEFAULT_Z_THRESHOLD: f64 = 5.0;

/// Singles and coincidence rates (counts/s) over an accumulation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorCounts {
    pub s_i: f64,
    pub s_a: f64,
    pub s_b: f64,
    pub c_ia: f64,
    pub c_ib: f64,
    pub c_ia_shift: f64,
    pub c_ib_shift: f64,
    /// Accumulation time (s).
    pub duration: f64,
}

impl MonitorCounts {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.s_i,
            self.s_a,
            self.s_b,
            self.c_ia,
            self.c_ib,
            self.c_ia_shift,
            self.c_ib_shift,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::domain("monitor rates must be finite and >= 0"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::domain(format!(
                "accumulation time must be > 0, got {}",
                self.duration
            )));
        }
        let ia_cap = self.s_i.min(self.s_a);
        let ib_cap = self.s_i.min(self.s_b);
        if self.c_ia.max(self.c_ia_shift) > ia_cap || self.c_ib.max(self.c_ib_shift) > ib_cap {
            return Err(Error::domain("coincidence rate exceeds a constituent singles rate"));
        }
        Ok(())
    }
}

/// Intrusion parameter: the clamped value and the raw formula value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntrusionEstimate {
    pub f_e: f64,
    pub raw: f64,
}

/// `f_E = 1 - [(C_IB - C̃_IB)/S_B] / [(C_IA - C̃_IA)/S_A]`.
pub fn intrusion_parameter(c: &MonitorCounts) -> Result<IntrusionEstimate> {
    if !(c.s_a > 0.0 && c.s_b > 0.0) {
        return Err(Error::domain(format!(
            "tap singles must be positive (S_A = {}, S_B = {})",
            c.s_a, c.s_b
        )));
    }
    let alice_excess = c.c_ia - c.c_ia_shift;
    if !(alice_excess > 0.0) {
        return Err(Error::NoCorrelation(alice_excess));
    }
    let bob = (c.c_ib - c.c_ib_shift) / c.s_b;
    let alice = alice_excess / c.s_a;
    let raw = 1.0 - bob / alice;
    Ok(IntrusionEstimate {
        f_e: raw.clamp(0.0, 1.0),
        raw,
    })
}

/// Delta-method standard error of the raw intrusion parameter, treating
/// every count as an independent Poisson variable.
pub fn intrusion_std_err(c: &MonitorCounts) -> Result<f64> {
    intrusion_parameter(c)?;
    let d = c.duration;
    let x = c.c_ib - c.c_ib_shift;
    let y = c.c_ia - c.c_ia_shift;
    let var_x = (c.c_ib + c.c_ib_shift) / d;
    let var_y = (c.c_ia + c.c_ia_shift) / d;
    // g = 1 - f = (x/S_B)/(y/S_A)
    let g = (x * c.s_a) / (y * c.s_b);
    let dg_dx = c.s_a / (y * c.s_b);
    let rel = var_y / (y * y) + c.s_a / (d * c.s_a * c.s_a) + c.s_b / (d * c.s_b * c.s_b);
    Ok((dg_dx * dg_dx * var_x + g * g * rel).sqrt())
}

/// Noise-free monitor rates for brightness `p.n_s` and intrusion `f_true`.
pub fn expected_rates(
    p: &ProtocolParams,
    f_true: f64,
    duration: f64,
    gate: f64,
) -> Result<MonitorCounts> {
    p.validate()?;
    if !(0.0..=1.0).contains(&f_true) {
        return Err(Error::domain(format!("f_true must lie in [0, 1], got {f_true}")));
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::domain(format!("duration must be > 0, got {duration}")));
    }
    if !(gate > 0.0 && gate.is_finite()) {
        return Err(Error::domain(format!("gate must be > 0, got {gate}")));
    }
    let kappa_s = path_transmissivity(p.l_km, p.alpha_db_per_km)?;
    let photon_flux = p.n_s * p.w_hz;
    let spdc_flux = photon_flux / (p.n + 1.0);
    let to_bob = p.kappa_b * kappa_s * (1.0 - p.kappa_a);

    let s_i = spdc_flux;
    let s_a = p.kappa_a * photon_flux;
    let s_b = to_bob * photon_flux;
    let acc_ia = s_i * s_a * gate;
    let acc_ib = s_i * s_b * gate;
    let counts = MonitorCounts {
        s_i,
        s_a,
        s_b,
        c_ia: p.kappa_a * spdc_flux + acc_ia,
        c_ib: (1.0 - f_true) * to_bob * spdc_flux + acc_ib,
        c_ia_shift: acc_ia,
        c_ib_shift: acc_ib,
        duration,
    };
    counts.validate().map_err(|_| {
        Error::domain(format!(
            "monitor model saturates: S_I·gate = {:.3e} must be well below 1",
            s_i * gate
        ))
    })?;
    Ok(counts)
}

fn poisson_rate(mean_rate: f64, duration: f64, stream: &mut Stream) -> Result<f64> {
    let mean = mean_rate * duration;
    if mean == 0.0 {
        return Ok(0.0);
    }
    let dist = Poisson::new(mean)
        .map_err(|e| Error::domain(format!("Poisson mean {mean:e}: {e}")))?;
    Ok(dist.sample(stream.rng()) / duration)
}

/// Draws every monitor channel as an independent Poisson count with mean
/// `rate·duration` and returns the empirical rates.
pub fn simulate_counts(
    p: &ProtocolParams,
    f_true: f64,
    duration: f64,
    gate: f64,
    seed: u64,
) -> Result<MonitorCounts> {
    simulate_counts_from(p, f_true, duration, gate, &mut Stream::new(seed))
}

pub fn simulate_counts_from(
    p: &ProtocolParams,
    f_true: f64,
    duration: f64,
    gate: f64,
    stream: &mut Stream,
) -> Result<MonitorCounts> {
    let mean = expected_rates(p, f_true, duration, gate)?;
    let mut draw = |rate: f64| poisson_rate(rate, duration, stream);
    let s_i = draw(mean.s_i)?;
    let s_a = draw(mean.s_a)?;
    let s_b = draw(mean.s_b)?;
    // Independent draws can overshoot a singles count by chance; cap them so
    // the record stays physical.
    let c_ia = draw(mean.c_ia)?.min(s_i.min(s_a));
    let c_ib = draw(mean.c_ib)?.min(s_i.min(s_b));
    let c_ia_shift = draw(mean.c_ia_shift)?.min(s_i.min(s_a));
    let c_ib_shift = draw(mean.c_ib_shift)?.min(s_i.min(s_b));
    Ok(MonitorCounts {
        s_i,
        s_a,
        s_b,
        c_ia,
        c_ib,
        c_ia_shift,
        c_ib_shift,
        duration,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxCheck {
    pub z: f64,
    pub pass: bool,
}

/// Compares Bob's tap singles against the Eve-free expectation:
/// `z = (S_B - expected)·sqrt(duration)/sqrt(expected)`.
pub fn flux_check(c: &MonitorCounts, expected_s_b: f64, z_threshold: f64) -> Result<FluxCheck> {
    if !(c.duration > 0.0) {
        return Err(Error::domain(format!(
            "accumulation time must be > 0, got {}",
            c.duration
        )));
    }
    if !(expected_s_b > 0.0) {
        return Err(Error::domain(format!(
            "expected S_B must be > 0, got {expected_s_b}"
        )));
    }
    let z = (c.s_b - expected_s_b) * c.duration.sqrt() / expected_s_b.sqrt();
    Ok(FluxCheck {
        z,
        pass: z.abs() <= z_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(c_ia: f64, c_ia_shift: f64, c_ib: f64, c_ib_shift: f64) -> MonitorCounts {
        MonitorCounts {
            s_i: 1e8,
            s_a: 1e6,
            s_b: 2e5,
            c_ia,
            c_ib,
            c_ia_shift,
            c_ib_shift,
            duration: 1.0,
        }
    }

    #[test]
    fn estimator_formula_cases() {
        // Alice: (1000-200)/1e6 = 8e-4; Bob: (360-200)/2e5 = 8e-4.
        let e = intrusion_parameter(&counts(1000.0, 200.0, 360.0, 200.0)).unwrap();
        assert_eq!(e.raw, 0.0);
        let e = intrusion_parameter(&counts(1000.0, 200.0, 200.0, 200.0)).unwrap();
        assert_eq!(e.raw, 1.0);
        assert_eq!(e.f_e, 1.0);
        let e = intrusion_parameter(&counts(1000.0, 200.0, 280.0, 200.0)).unwrap();
        assert_eq!(e.raw, 0.5);
    }

    #[test]
    fn estimator_clamps_and_reports_raw() {
        let e = intrusion_parameter(&counts(1000.0, 200.0, 380.0, 200.0)).unwrap();
        assert!(e.raw < 0.0);
        assert_eq!(e.f_e, 0.0);
        let e = intrusion_parameter(&counts(1000.0, 200.0, 190.0, 200.0)).unwrap();
        assert!(e.raw > 1.0);
        assert_eq!(e.f_e, 1.0);
    }

    #[test]
    fn estimator_needs_alice_correlation() {
        assert!(matches!(
            intrusion_parameter(&counts(200.0, 200.0, 300.0, 100.0)),
            Err(Error::NoCorrelation(_))
        ));
        let mut c = counts(1000.0, 200.0, 300.0, 100.0);
        c.s_b = 0.0;
        assert!(intrusion_parameter(&c).is_err());
    }

    #[test]
    fn expected_rates_are_unbiased() {
        for f in [0.0, 0.1, 0.25, 0.5, 0.9, 1.0] {
            for l in [0.0, 50.0, 120.0] {
                let p = ProtocolParams::reference(0.01).with_length(l);
                let c = expected_rates(&p, f, 1.0, DEFAULT_GATE_S).unwrap();
                let e = intrusion_parameter(&c).unwrap();
                assert!((e.raw - f).abs() < 1e-12, "f = {f}, L = {l}: {}", e.raw);
            }
        }
        let c = expected_rates(&ProtocolParams::reference(0.01), 0.0, 1.0, DEFAULT_GATE_S).unwrap();
        assert_eq!(intrusion_parameter(&c).unwrap().f_e, 0.0);
    }

    #[test]
    fn flux_preserved_under_attack() {
        let p = ProtocolParams::reference(0.02);
        let clean = expected_rates(&p, 0.0, 1.0, DEFAULT_GATE_S).unwrap();
        let attacked = expected_rates(&p, 0.7, 1.0, DEFAULT_GATE_S).unwrap();
        assert_eq!(clean.s_b, attacked.s_b);
        assert!(attacked.c_ib < clean.c_ib);
    }

    #[test]
    fn saturated_gate_rejected() {
        let p = ProtocolParams::reference(0.4);
        assert!(expected_rates(&p, 0.0, 1.0, 1e-6).is_err());
        assert!(expected_rates(&p, 0.0, 0.0, 1e-9).is_err());
        assert!(expected_rates(&p, 1.2, 1.0, 1e-9).is_err());
    }

    #[test]
    fn simulation_is_deterministic() {
        let p = ProtocolParams::reference(0.01);
        let a = simulate_counts(&p, 0.3, 1.0, DEFAULT_GATE_S, 17).unwrap();
        let b = simulate_counts(&p, 0.3, 1.0, DEFAULT_GATE_S, 17).unwrap();
        assert_eq!(a, b);
        let c = simulate_counts(&p, 0.3, 1.0, DEFAULT_GATE_S, 18).unwrap();
        assert_ne!(a, c);
        assert!(a.validate().is_ok());
    }

    #[test]
    fn poisson_rates_concentrate() {
        // For mean counts >= 1e4 the relative deviation stays below
        // 4/sqrt(mean) in at least 99% of seeds.
        let p = ProtocolParams::reference(1e-4).with_length(100.0);
        let d = 0.05;
        let mean = expected_rates(&p, 0.0, d, DEFAULT_GATE_S).unwrap();
        let channels = |c: &MonitorCounts| [c.s_i, c.s_a, c.s_b, c.c_ia, c.c_ia_shift];
        let means = channels(&mean);
        let (mut checked, mut ok) = (0, 0);
        for seed in 0..200 {
            let c = simulate_counts(&p, 0.0, d, DEFAULT_GATE_S, seed).unwrap();
            for (got, want) in channels(&c).iter().zip(means) {
                let n = want * d;
                if n < 1e4 {
                    continue;
                }
                checked += 1;
                if ((got - want) / want).abs() <= 4.0 / n.sqrt() {
                    ok += 1;
                }
            }
        }
        assert!(checked > 0);
        assert!(ok as f64 >= 0.99 * checked as f64, "{ok}/{checked}");
    }

    #[test]
    fn full_intrusion_recovered() {
        let p = ProtocolParams::reference(0.01);
        let c = simulate_counts(&p, 1.0, 1.0, DEFAULT_GATE_S, 3).unwrap();
        let e = intrusion_parameter(&c).unwrap();
        let se = intrusion_std_err(&c).unwrap();
        assert!((e.raw - 1.0).abs() < 4.0 * se, "raw {} se {se}", e.raw);
    }

    #[test]
    fn std_err_matches_seed_scatter() {
        let p = ProtocolParams::reference(0.01);
        let n = 400;
        let raws: Vec<f64> = (0..n)
            .map(|s| {
                let c = simulate_counts(&p, 0.25, 1.0, DEFAULT_GATE_S, s).unwrap();
                intrusion_parameter(&c).unwrap().raw
            })
            .collect();
        let mean = raws.iter().sum::<f64>() / n as f64;
        let sd = (raws.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let c = simulate_counts(&p, 0.25, 1.0, DEFAULT_GATE_S, 0).unwrap();
        let se = intrusion_std_err(&c).unwrap();
        assert!((sd / se - 1.0).abs() < 0.15, "scatter {sd} vs delta-method {se}");
    }

    #[test]
    fn flux_check_cases() {
        let mut c = counts(1000.0, 200.0, 300.0, 100.0);
        c.duration = 4.0;
        let f = flux_check(&c, 2e5, DEFAULT_Z_THRESHOLD).unwrap();
        assert_eq!(f.z, 0.0);
        assert!(f.pass);
        // One standard deviation of the rate is sqrt(2e5/4).
        c.s_b = 2e5 + 10.0 * (2e5f64 / 4.0).sqrt();
        let f = flux_check(&c, 2e5, DEFAULT_Z_THRESHOLD).unwrap();
        assert!((f.z - 10.0).abs() < 1e-9);
        assert!(!f.pass);
        c.duration = 0.0;
        assert!(flux_check(&c, 2e5, DEFAULT_Z_THRESHOLD).is_err());
    }
}
