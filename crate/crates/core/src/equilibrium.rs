//! Self-consistent equilibrium before the quench.
//!
//! At fixed chemical potential the counter term is found by a damped fixed
//! point on `δω^x`: diagonalise `h_0 + δω^x`, rebuild `δω^ℓ` from the new
//! frame and energies, rotate back to sites. An outer root-find then fixes
//! `μ` so that the Bose–Einstein occupations add up to `N_total`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{eig_hermitian_nondegenerate, max_abs, Hermitian, Unitary};
use crate::model::{
    bose_einstein, build_h0, counterterm_markovian, overlaps, CounterTerm, Mode, ModelParams,
    BAND_EDGE_GUARD, MODES,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumOptions {
    /// Weight of the new iterate in the damped update.
    pub damping: f64,
    pub max_iter: usize,
    /// Target for the fixed-point residual `max |F(δω^x) - δω^x|`.
    pub tol: f64,
    /// Largest residual still accepted after `max_iter` iterations.
    pub accept: f64,
    pub counter_term: CounterTerm,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            damping: 0.5,
            max_iter: 500,
            tol: 1e-15,
            accept: 1e-10,
            counter_term: CounterTerm::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub mu: f64,
    pub gbar: f64,
    /// Renormalised energies `ω_g < ω_o < ω_e`.
    pub omega: [f64; MODES],
    /// Eigenbasis `u_g, u_o, u_e` of `h_u` as columns.
    pub frame: Unitary,
    /// Bose–Einstein occupations at `ω`.
    pub n0: [f64; MODES],
    pub delta_omega_ell: Hermitian,
    pub delta_omega_site: Hermitian,
    /// Fixed-point defect at the returned solution.
    pub residual: f64,
    pub counter_term: CounterTerm,
}

impl EquilibriumSolution {
    /// `|u_{1g}|`, equal to `|u_{-1g}|` by reflection symmetry.
    pub fn abs_u_pm1_g(&self) -> f64 {
        self.frame.get(0, Mode::Ground.index()).norm()
    }

    pub fn total_number(&self) -> f64 {
        self.n0.iter().sum()
    }
}

/// Converged counter term at a fixed chemical potential.
#[derive(Debug, Clone)]
struct FixedPoint {
    omega: [f64; MODES],
    frame: Unitary,
    delta_ell: Hermitian,
    delta_site: Hermitian,
    residual: f64,
}

/// Why a fixed-μ solve left the band.
#[derive(Debug)]
enum Side {
    /// Lowest energy at or below zero: μ too high.
    Low,
    /// Highest energy at or above Δ: μ too low.
    High,
}

#[derive(Debug)]
enum InnerError {
    OutOfBand(Side),
    Other(Error),
}

impl From<Error> for InnerError {
    fn from(e: Error) -> Self {
        InnerError::Other(e)
    }
}

fn band_side(omega: &[f64], delta: f64) -> Option<Side> {
    let guard = BAND_EDGE_GUARD * delta;
    if omega.iter().any(|&w| !(w > guard)) {
        Some(Side::Low)
    } else if omega.iter().any(|&w| !(w < delta - guard)) {
        Some(Side::High)
    } else {
        None
    }
}

fn fixed_point_at_mu(
    mu: f64,
    p: &ModelParams,
    gbar: f64,
    start: &Hermitian,
    opts: &EquilibriumOptions,
) -> Result<FixedPoint, InnerError> {
    let h0 = build_h0(mu);
    let mut site = start.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let (vals, frame) = eig_hermitian_nondegenerate(&h0.add(&site))?;
        if let Some(side) = band_side(&vals, p.delta) {
            return Err(InnerError::OutOfBand(side));
        }
        let omega = [vals[0], vals[1], vals[2]];
        let d = counterterm_markovian(&overlaps(&frame), &omega, p.delta, gbar, opts.counter_term)?;
        let mapped = frame.conjugate(&d);
        residual = max_abs(&(mapped.matrix() - site.matrix()));
        if residual <= opts.tol {
            return Ok(FixedPoint {
                omega,
                frame,
                delta_ell: d,
                delta_site: site,
                residual,
            });
        }
        let blended = site.matrix().scale(1.0 - opts.damping) + mapped.matrix().scale(opts.damping);
        site = Hermitian::new(blended)?;
    }
    // accept a looser residual rather than failing outright
    let (vals, frame) = eig_hermitian_nondegenerate(&h0.add(&site))?;
    if let Some(side) = band_side(&vals, p.delta) {
        return Err(InnerError::OutOfBand(side));
    }
    if residual <= opts.accept {
        let omega = [vals[0], vals[1], vals[2]];
        let d = counterterm_markovian(&overlaps(&frame), &omega, p.delta, gbar, opts.counter_term)?;
        return Ok(FixedPoint {
            omega,
            frame,
            delta_ell: d,
            delta_site: site,
            residual,
        });
    }
    Err(InnerError::Other(Error::Convergence {
        what: format!("counter-term fixed point at mu = {mu}"),
        iterations: opts.max_iter,
        residual,
    }))
}

fn occupation_excess(fp: &FixedPoint, p: &ModelParams) -> Result<f64> {
    let mut total = 0.0;
    for &w in &fp.omega {
        total += bose_einstein(p.beta, w)?;
    }
    Ok(total - p.n_total)
}

/// Signed particle-number mismatch at `mu`; out-of-band failures map to
/// `±∞` so bisection can still bracket the root.
fn mismatch(
    mu: f64,
    p: &ModelParams,
    gbar: f64,
    start: &Hermitian,
    opts: &EquilibriumOptions,
) -> Result<(f64, Option<FixedPoint>)> {
    match fixed_point_at_mu(mu, p, gbar, start, opts) {
        Ok(fp) => Ok((occupation_excess(&fp, p)?, Some(fp))),
        Err(InnerError::OutOfBand(Side::Low)) => Ok((f64::INFINITY, None)),
        Err(InnerError::OutOfBand(Side::High)) => Ok((f64::NEG_INFINITY, None)),
        Err(InnerError::Other(e)) => Err(e),
    }
}

pub fn solve_equilibrium(p: &ModelParams, gbar: f64) -> Result<EquilibriumSolution> {
    solve_equilibrium_with(p, gbar, &EquilibriumOptions::default(), None)
}

/// Solves for `μ` and the self-consistent counter term at coupling `gbar`.
///
/// `warm_start` seeds the inner fixed point with a site-basis counter term
/// (typically from a neighbouring coupling); the result does not depend on
/// it beyond the convergence tolerance.
pub fn solve_equilibrium_with(
    p: &ModelParams,
    gbar: f64,
    opts: &EquilibriumOptions,
    warm_start: Option<&Hermitian>,
) -> Result<EquilibriumSolution> {
    p.validate()?;
    if !(gbar >= 0.0 && gbar.is_finite()) {
        return Err(Error::Domain(format!(
            "coupling must be non-negative, got {gbar}"
        )));
    }
    let zero = Hermitian::zeros(MODES);
    let start = warm_start.unwrap_or(&zero);

    // Energies fall as μ rises. Bracket between "top level touches Δ" and
    // "lowest level touches 0", both widened by the largest plausible shift.
    let s2 = std::f64::consts::SQRT_2;
    let mut lo = s2 - p.delta;
    let mut hi = -s2 + 1.0;
    let (mut f_lo, _) = mismatch(lo, p, gbar, start, opts)?;
    let (mut f_hi, _) = mismatch(hi, p, gbar, start, opts)?;
    let mut widen = 0;
    while f_hi < 0.0 && widen < 60 {
        hi += 1.0;
        f_hi = mismatch(hi, p, gbar, start, opts)?.0;
        widen += 1;
    }
    widen = 0;
    while f_lo > 0.0 && widen < 60 {
        lo -= 1.0;
        f_lo = mismatch(lo, p, gbar, start, opts)?.0;
        widen += 1;
    }
    if !(f_lo <= 0.0 && f_hi >= 0.0) {
        return Err(Error::Initialization(format!(
            "could not bracket the chemical potential (N_total = {})",
            p.n_total
        )));
    }

    while hi - lo > 1e-13 * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        let (f, _) = mismatch(mid, p, gbar, start, opts)?;
        if f > 0.0 {
            hi = mid;
            f_hi = f;
        } else {
            lo = mid;
            f_lo = f;
        }
    }

    // secant polish inside the final bracket
    let mut best: Option<(f64, FixedPoint, f64)> = None;
    let mut consider = |mu: f64| -> Result<()> {
        if let (f, Some(fp)) = mismatch(mu, p, gbar, start, opts)? {
            if best.as_ref().map_or(true, |b| f.abs() < b.2.abs()) {
                best = Some((mu, fp, f));
            }
        }
        Ok(())
    };
    consider(lo)?;
    consider(hi)?;
    if f_lo.is_finite() && f_hi.is_finite() && f_hi != f_lo {
        let (mut a, mut fa, mut b, mut fb) = (lo, f_lo, hi, f_hi);
        for _ in 0..4 {
            let c = b - fb * (b - a) / (fb - fa);
            if !c.is_finite() || c < lo || c > hi {
                break;
            }
            let (fc, fp) = mismatch(c, p, gbar, start, opts)?;
            if let Some(fp) = fp {
                if best.as_ref().map_or(true, |bst| fc.abs() < bst.2.abs()) {
                    best = Some((c, fp, fc));
                }
            }
            if fc == 0.0 || fc == fb {
                break;
            }
            (a, fa, b, fb) = (b, fb, c, fc);
        }
    }

    let (mu, fp, excess) = best.ok_or_else(|| {
        Error::Initialization(format!(
            "no in-band equilibrium for gbar = {gbar}, N_total = {}",
            p.n_total
        ))
    })?;
    if excess.abs() > 1e-8 {
        return Err(Error::Initialization(format!(
            "particle-number constraint missed by {excess:.3e} at mu = {mu}"
        )));
    }
    let n0 = [
        bose_einstein(p.beta, fp.omega[0])?,
        bose_einstein(p.beta, fp.omega[1])?,
        bose_einstein(p.beta, fp.omega[2])?,
    ];
    Ok(EquilibriumSolution {
        mu,
        gbar,
        omega: fp.omega,
        frame: fp.frame,
        n0,
        delta_omega_ell: fp.delta_ell,
        delta_omega_site: fp.delta_site,
        residual: fp.residual,
        counter_term: opts.counter_term,
    })
}

/// One row of a coupling sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub gbar: f64,
    pub solution: Result<EquilibriumSolution>,
}

/// Solves the equilibrium for each coupling in `gbars`.
///
/// Sequential sweeps warm-start each point from the previous converged
/// counter term. With `parallel` every point starts cold so that results
/// do not depend on scheduling.
pub fn sweep_gbar(p: &ModelParams, gbars: &[f64], parallel: bool) -> Vec<SweepRow> {
    let opts = EquilibriumOptions::default();
    if parallel {
        return gbars
            .par_iter()
            .map(|&g| SweepRow {
                gbar: g,
                solution: solve_equilibrium_with(p, g, &opts, None),
            })
            .collect();
    }
    let mut warm: Option<Hermitian> = None;
    gbars
        .iter()
        .map(|&g| {
            let solution = solve_equilibrium_with(p, g, &opts, warm.as_ref());
            if let Ok(s) = &solution {
                warm = Some(s.delta_omega_site.clone());
            }
            SweepRow { gbar: g, solution }
        })
        .collect()
}

/// The default coupling grid `0, 0.05, …, 0.3`.
pub fn default_gbar_grid() -> Vec<f64> {
    (0..=6).map(|i| 0.05 * i as f64).collect()
}
