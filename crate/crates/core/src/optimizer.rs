//! Maximization of the key-rate lower bound over source brightness, and
//! distance/alphabet sweeps.
//!
//! The objective is the unclamped margin `β·I_AB - χ`, so insecure regions
//! still have a slope to climb; rows report the clamped bound. The search
//! is a logarithmic coarse grid followed by golden-section refinement on
//! the bracket around the best grid point, carried out in `ln N_S`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::link::{link_budget, GaussianChannel, ProtocolParams};
use crate::rates::{eve_chi, mutual_information, skr_lower_bound, EveModel, RateResult};
use crate::receiver::{confusion_quadrature, DEFAULT_QUAD_TOL};

/// Golden-ratio conjugate, `(sqrt(5) - 1) / 2`.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

const MAX_GOLDEN_ITERS: usize = 200;
/// Relative margin difference treated as a tie. The quadrature leaves
/// round-off of order 1e-15 on saturated plateaus.
const TIE_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub n_min: f64,
    pub n_max: f64,
    /// Relative bracket width at which refinement stops.
    pub tol: f64,
    pub grid_points: usize,
    /// Intrusion parameter passed to the Eve model.
    pub f_e: f64,
    pub quad_tol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            n_min: 1e-7,
            n_max: 0.5,
            tol: 1e-4,
            grid_points: 25,
            f_e: 0.0,
            quad_tol: DEFAULT_QUAD_TOL,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_min > 0.0 && self.n_min < self.n_max && self.n_max.is_finite()) {
            return Err(Error::domain(format!(
                "brightness bounds need 0 < N_min < N_max (got [{}, {}])",
                self.n_min, self.n_max
            )));
        }
        if !(self.tol > 0.0 && self.tol <= 0.1) {
            return Err(Error::domain(format!("tol must lie in (0, 0.1], got {}", self.tol)));
        }
        if self.grid_points < 3 {
            return Err(Error::domain("coarse grid needs at least 3 points"));
        }
        if !(0.0..=1.0).contains(&self.f_e) {
            return Err(Error::domain(format!("f_E must lie in [0, 1], got {}", self.f_e)));
        }
        Ok(())
    }
}

/// One output record of a sweep or a single-point evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub l_km: f64,
    pub k: usize,
    /// `None` when the point was specified by SNR directly.
    pub n_s_opt: Option<f64>,
    pub snr: f64,
    pub i_ab: f64,
    pub chi: f64,
    pub skr_lb: f64,
    pub secure: bool,
    /// The optimum lies within one coarse-grid step of a search bound.
    pub at_bound: bool,
    /// `false` when the coarse grid showed several local maxima or the
    /// refinement fell short of the best grid point.
    pub unimodal: bool,
}

/// Pipeline output at a fixed operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub snr: f64,
    pub rates: RateResult,
    /// `β·I_AB - χ` before clamping.
    pub margin: f64,
}

/// Rates for a given channel and alphabet with a known `χ`.
pub fn evaluate_channel(
    ch: &GaussianChannel,
    k: usize,
    r_baud: f64,
    beta: f64,
    chi: f64,
    quad_tol: f64,
) -> Result<OperatingPoint> {
    let cm = confusion_quadrature(ch, k, quad_tol)?;
    let i_ab = mutual_information(&cm, r_baud)?;
    let rates = skr_lower_bound(i_ab, beta, chi)?;
    Ok(OperatingPoint {
        snr: ch.snr(),
        rates,
        margin: beta * i_ab - chi,
    })
}

/// Full pipeline `N_S → channel → confusion matrix → I_AB → ΔI` at `p`.
pub fn evaluate(
    p: &ProtocolParams,
    eve: &dyn EveModel,
    f_e: f64,
    quad_tol: f64,
) -> Result<OperatingPoint> {
    let ch = link_budget(p)?;
    let chi = eve_chi(eve, p, f_e)?;
    evaluate_channel(&ch, p.k, p.r_baud, p.beta, chi, quad_tol)
}

fn row_from(p: &ProtocolParams, point: &OperatingPoint, at_bound: bool, unimodal: bool) -> SweepRow {
    SweepRow {
        l_km: p.l_km,
        k: p.k,
        n_s_opt: Some(p.n_s),
        snr: point.snr,
        i_ab: point.rates.i_ab,
        chi: point.rates.chi,
        skr_lb: point.rates.skr_lb,
        secure: point.rates.secure,
        at_bound,
        unimodal,
    }
}

/// Single-point row without optimization.
pub fn point_row(p: &ProtocolParams, eve: &dyn EveModel, f_e: f64, quad_tol: f64) -> Result<SweepRow> {
    let point = evaluate(p, eve, f_e, quad_tol)?;
    Ok(row_from(p, &point, false, true))
}

/// Maximizes the key-rate margin over `N_S ∈ [n_min, n_max]`. The `n_s`
/// field of `template` is ignored.
pub fn optimize_brightness(
    template: &ProtocolParams,
    eve: &dyn EveModel,
    settings: &OptimizerSettings,
) -> Result<SweepRow> {
    settings.validate()?;
    template.with_brightness(settings.n_min).validate()?;

    // `x` beats `y` only by more than round-off; ties go to the brighter side.
    let beats = |x: f64, y: f64| x > y + TIE_REL * y.abs().max(x.abs());
    let at = |ln_n: f64| -> Result<(f64, OperatingPoint)> {
        let n_s = ln_n.exp().clamp(settings.n_min, settings.n_max);
        let point = evaluate(&template.with_brightness(n_s), eve, settings.f_e, settings.quad_tol)?;
        Ok((n_s, point))
    };

    let (ln_lo, ln_hi) = (settings.n_min.ln(), settings.n_max.ln());
    let steps = settings.grid_points - 1;
    let step = (ln_hi - ln_lo) / steps as f64;
    let grid_x: Vec<f64> = (0..=steps)
        .map(|i| if i == steps { ln_hi } else { ln_lo + step * i as f64 })
        .collect();
    let grid: Vec<(f64, OperatingPoint)> = grid_x.iter().map(|&x| at(x)).collect::<Result<_>>()?;

    // Ties go to the brighter point, so saturated plateaus end at N_max.
    let mut best_i = 0;
    for (i, (_, pt)) in grid.iter().enumerate() {
        if !beats(grid[best_i].1.margin, pt.margin) {
            best_i = i;
        }
    }
    let grid_unimodal = is_unimodal(&grid.iter().map(|(_, pt)| pt.margin).collect::<Vec<_>>());

    // Golden-section maximization on the bracket around the best grid point.
    let mut a = grid_x[best_i.saturating_sub(1)];
    let mut b = grid_x[(best_i + 1).min(steps)];
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = at(c)?;
    let mut fd = at(d)?;
    for _ in 0..MAX_GOLDEN_ITERS {
        // Width in N_S relative to the bracket centre.
        let centre = 0.5 * (a + b);
        if (b.exp() - a.exp()) < settings.tol * centre.exp() {
            break;
        }
        if beats(fc.1.margin, fd.1.margin) {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = at(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = at(d)?;
        }
    }
    let refined = if beats(fc.1.margin, fd.1.margin) { fc } else { fd };
    let grid_best = grid[best_i];
    let shortfall = grid_best.1.margin - refined.1.margin;
    let refinement_ok = shortfall <= settings.tol * grid_best.1.margin.abs();
    let (n_opt, point) = if !beats(grid_best.1.margin, refined.1.margin) {
        refined
    } else {
        grid_best
    };

    let unimodal = grid_unimodal && refinement_ok;
    if !unimodal {
        log::warn!(
            "L = {} km, K = {}: brightness objective is not unimodal; optimum may be local",
            template.l_km,
            template.k
        );
    }
    let ln_opt = n_opt.ln();
    let at_bound = ln_opt - ln_lo <= step * (1.0 + 1e-9) || ln_hi - ln_opt <= step * (1.0 + 1e-9);
    Ok(row_from(&template.with_brightness(n_opt), &point, at_bound, unimodal))
}

/// Rises then falls (either part may be empty), ignoring steps below a
/// round-off floor relative to the largest magnitude.
fn is_unimodal(values: &[f64]) -> bool {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-9 * scale;
    let mut falling = false;
    for w in values.windows(2) {
        let step = w[1] - w[0];
        if step < -floor {
            falling = true;
        } else if step > floor && falling {
            return false;
        }
    }
    true
}

/// One optimized row per `(K, L)`, `K` outermost, in the order given.
pub fn sweep(
    template: &ProtocolParams,
    eve: &dyn EveModel,
    lengths_km: &[f64],
    alphabets: &[usize],
    settings: &OptimizerSettings,
) -> Result<Vec<SweepRow>> {
    if lengths_km.is_empty() || alphabets.is_empty() {
        return Err(Error::domain("sweep needs at least one length and one alphabet"));
    }
    settings.validate()?;
    let points: Vec<(usize, f64)> = alphabets
        .iter()
        .flat_map(|&k| lengths_km.iter().map(move |&l| (k, l)))
        .collect();
    points
        .par_iter()
        .map(|&(k, l_km)| {
            let p = template.with_alphabet(k).with_length(l_km);
            optimize_brightness(&p, eve, settings).map_err(|e| Error::SweepPoint {
                l_km,
                k,
                source: Box::new(e),
            })
        })
        .collect()
}
