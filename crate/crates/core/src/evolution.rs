//! Time evolution after the coupling quench.
//!
//! Each column of the frame obeys `dv_ℓ/dt = -i(h_u - ω_ℓ)v_ℓ` with
//! `h_u = h_0 + V δω^ℓ V†`, the occupations follow the Markovian transport
//! equation, and `ω_ℓ`, `δω^ℓ` are re-derived from the frame at every
//! instant. The three are advanced together by a self-consistent
//! exponential midpoint rule.

use num_complex::Complex64;

use crate::equilibrium::EquilibriumSolution;
use crate::error::{Error, Result};
use crate::linalg::{
    max_abs, propagate_unitary, reunitarize, unitarity_defect, CMatrix, Hermitian, Unitary,
    UNITARY_TOL,
};
use crate::model::{
    build_h0, odd_mode_deviation, overlaps, relaxation, renormalized_energies, CounterTerm,
    ModelParams, MODES,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Stop iterating a step once the midpoint counter term changes by less
    /// than this (max-abs entry). Convergence needs at least two passes.
    pub sc_tol: f64,
    pub sc_max_iter: usize,
    /// Emit a record every this many steps.
    pub output_stride: usize,
    pub counter_term: CounterTerm,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            dt: 0.01,
            t_max: 300.0,
            sc_tol: 1e-12,
            sc_max_iter: 50,
            output_stride: 10,
            counter_term: CounterTerm::Full,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Domain(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) {
            return Err(Error::Domain(format!(
                "t_max must be non-negative, got {}",
                self.t_max
            )));
        }
        if !(self.sc_tol > 0.0 && self.sc_tol.is_finite()) {
            return Err(Error::Domain(format!(
                "sc_tol must be positive, got {}",
                self.sc_tol
            )));
        }
        if self.sc_max_iter == 0 {
            return Err(Error::Domain("sc_max_iter must be at least 1".into()));
        }
        if self.output_stride == 0 {
            return Err(Error::Domain("output_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of steps needed to reach `t_max`.
    pub fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }
}

/// Complete state of the wells at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: f64,
    /// Chemical potential entering `h_0`; fixed for the whole run.
    pub mu: f64,
    pub frame: Unitary,
    pub n: [f64; MODES],
    pub omega: [f64; MODES],
    pub delta_omega_ell: Hermitian,
}

impl SystemState {
    /// State at `t = 0` right after the coupling switches to `gbar`.
    ///
    /// Frame and occupations are inherited from the equilibrium; energies and
    /// counter term are re-evaluated at the new coupling.
    pub fn after_quench(
        eq: &EquilibriumSolution,
        p: &ModelParams,
        gbar: f64,
        kind: CounterTerm,
    ) -> Result<Self> {
        let h0 = build_h0(eq.mu);
        let (omega, d) = renormalized_energies(&eq.frame, &h0, p.delta, gbar, kind)?;
        Ok(SystemState {
            t: 0.0,
            mu: eq.mu,
            frame: eq.frame.clone(),
            n: eq.n0,
            omega,
            delta_omega_ell: d,
        })
    }

    /// `|v_{x,ℓ}|` with sites as rows.
    pub fn abs_v(&self) -> [[f64; MODES]; MODES] {
        let mut out = [[0.0; MODES]; MODES];
        for (x, row) in out.iter_mut().enumerate() {
            for (l, slot) in row.iter_mut().enumerate() {
                *slot = self.frame.get(x, l).norm();
            }
        }
        out
    }

    /// Checks unitarity, `n ≥ 0`, the exact odd column, and that `ω` and
    /// `δω^ℓ` are consistent with the frame.
    pub fn check_invariants(&self, p: &ModelParams, gbar: f64, kind: CounterTerm) -> Result<()> {
        let defect = self.frame.defect();
        if defect > UNITARY_TOL {
            return Err(Error::Contract(format!(
                "frame not unitary (defect {defect:.3e})"
            )));
        }
        if let Some(n) = self.n.iter().find(|&&n| !(n >= 0.0)) {
            return Err(Error::Contract(format!("negative occupation {n}")));
        }
        let odd = odd_mode_deviation(&self.frame);
        if odd > 1e-10 {
            return Err(Error::Contract(format!("odd column deviates by {odd:.3e}")));
        }
        let (omega, d) =
            renormalized_energies(&self.frame, &build_h0(self.mu), p.delta, gbar, kind)?;
        let dw = omega
            .iter()
            .zip(&self.omega)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dd = max_abs(&(d.matrix() - self.delta_omega_ell.matrix()));
        if dw > 1e-10 || dd > 1e-10 {
            return Err(Error::Contract(format!(
                "stored energies inconsistent with the frame (|Δω| {dw:.3e}, |Δδω| {dd:.3e})"
            )));
        }
        Ok(())
    }
}

/// Diagnostics of a single step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub sc_iters: usize,
    /// Last change of the midpoint counter term.
    pub sc_residual: f64,
    /// `‖V†V - I‖` of the propagated frame before reunitarisation.
    pub unitarity_drift: f64,
}

/// Advances `state` by one step of `cfg.dt` at coupling `gbar`.
pub fn step(
    state: &SystemState,
    p: &ModelParams,
    gbar: f64,
    cfg: &EvolutionConfig,
) -> Result<(SystemState, StepInfo)> {
    let dt = cfg.dt;
    let kind = cfg.counter_term;
    let h0 = build_h0(state.mu);
    let v0 = state.frame.matrix();

    let mut v1 = v0.clone();
    let mut n1 = state.n;
    let mut prev_mid: Option<CMatrix> = None;
    let mut residual = f64::INFINITY;
    let mut iters = 0;
    while iters < cfg.sc_max_iter {
        iters += 1;
        let mid = reunitarize(&((v0 + &v1) * Complex64::new(0.5, 0.0)))?;
        let (w_mid, d_mid) = renormalized_energies(&mid, &h0, p.delta, gbar, kind)?;
        let h_u = h0.add(&mid.conjugate(&d_mid));
        let mut next = propagate_unitary(&h_u, 0.0, dt)? * v0;
        for (l, &w) in w_mid.iter().enumerate() {
            let phase = Complex64::from_polar(1.0, dt * w);
            next.column_mut(l).iter_mut().for_each(|z| *z *= phase);
        }
        v1 = next;

        // transport is linear in n: the midpoint rule is solved exactly
        let ov = overlaps(&mid);
        for l in 0..MODES {
            let (rate, target) = relaxation(&ov, &w_mid, p, gbar, l)?;
            let h = 0.5 * dt * rate;
            n1[l] = (state.n[l] * (1.0 - h) + 2.0 * h * target) / (1.0 + h);
        }

        residual = match &prev_mid {
            Some(prev) => max_abs(&(d_mid.matrix() - prev)),
            None => f64::INFINITY,
        };
        prev_mid = Some(d_mid.into_matrix());
        if residual < cfg.sc_tol {
            break;
        }
    }
    if residual >= cfg.sc_tol {
        return Err(Error::Convergence {
            what: "self-consistent step".into(),
            iterations: iters,
            residual,
        });
    }

    let drift = unitarity_defect(&v1);
    let frame = reunitarize(&v1)?;
    let (omega, d) = renormalized_energies(&frame, &h0, p.delta, gbar, kind)?;
    let next = SystemState {
        t: state.t + dt,
        mu: state.mu,
        frame,
        n: n1,
        omega,
        delta_omega_ell: d,
    };
    Ok((
        next,
        StepInfo {
            sc_iters: iters,
            sc_residual: residual,
            unitarity_drift: drift,
        },
    ))
}

/// One row of `timeseries.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesRecord {
    pub t: f64,
    pub abs_v: [[f64; MODES]; MODES],
    pub n: [f64; MODES],
    pub omega: [f64; MODES],
    /// Upper triangle of `δω^ℓ` in the order gg, go, ge, oo, oe, ee.
    pub delta_omega: [Complex64; 6],
    pub sc_iters: usize,
}

impl TimeSeriesRecord {
    pub fn from_state(s: &SystemState, sc_iters: usize) -> Self {
        let mut delta_omega = [Complex64::new(0.0, 0.0); 6];
        let mut k = 0;
        for a in 0..MODES {
            for b in a..MODES {
                delta_omega[k] = s.delta_omega_ell.get(a, b);
                k += 1;
            }
        }
        TimeSeriesRecord {
            t: s.t,
            abs_v: s.abs_v(),
            n: s.n,
            omega: s.omega,
            delta_omega,
            sc_iters,
        }
    }

    /// Column names, matching [`TimeSeriesRecord::values`].
    pub fn header() -> Vec<String> {
        let modes = ["g", "o", "e"];
        let sites = ["p1", "0", "m1"];
        let mut h = vec!["tJ".to_string()];
        for x in sites {
            for l in modes {
                h.push(format!("abs_v_{x}_{l}"));
            }
        }
        h.extend(modes.iter().map(|l| format!("n_{l}")));
        h.extend(modes.iter().map(|l| format!("omega_{l}")));
        for a in 0..MODES {
            for b in a..MODES {
                h.push(format!("re_dw_{}{}", modes[a], modes[b]));
                h.push(format!("im_dw_{}{}", modes[a], modes[b]));
            }
        }
        h.push("sc_iters".into());
        h
    }

    /// Every column except `sc_iters`, in header order.
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.t];
        for row in &self.abs_v {
            v.extend_from_slice(row);
        }
        v.extend_from_slice(&self.n);
        v.extend_from_slice(&self.omega);
        for z in &self.delta_omega {
            v.push(z.re);
            v.push(z.im);
        }
        v
    }
}

/// Output of [`run_quench`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<TimeSeriesRecord>,
    pub final_state: SystemState,
    /// Largest pre-reunitarisation drift over all steps.
    pub max_unitarity_drift: f64,
    /// Largest `‖V†V - I‖` over the recorded states.
    pub max_unitarity_defect: f64,
    /// Largest deviation of column `o` from `(1, 0, -1)/√2` over the recorded
    /// states.
    pub max_odd_deviation: f64,
}

/// Evolves from the equilibrium `eq` (solved at `p.gbar_before`) with
/// coupling `p.gbar_after` until `cfg.t_max`.
pub fn run_quench(
    eq: &EquilibriumSolution,
    p: &ModelParams,
    cfg: &EvolutionConfig,
) -> Result<Trajectory> {
    let state = SystemState::after_quench(eq, p, p.gbar_after, cfg.counter_term)?;
    evolve(state, p, p.gbar_after, cfg)
}

/// Evolves `state` at fixed coupling until `cfg.t_max`, recording every
/// `cfg.output_stride` steps and at the end.
pub fn evolve(
    mut state: SystemState,
    p: &ModelParams,
    gbar: f64,
    cfg: &EvolutionConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    p.validate()?;
    let steps = cfg.steps();
    let t0 = state.t;
    let mut records = vec![TimeSeriesRecord::from_state(&state, 0)];
    let mut max_drift: f64 = 0.0;
    let mut max_defect = state.frame.defect();
    let mut max_odd = odd_mode_deviation(&state.frame);
    for k in 1..=steps {
        let (mut next, info) = step(&state, p, gbar, cfg).map_err(|e| Error::AtTime {
            t: state.t,
            source: Box::new(e),
        })?;
        // avoid accumulating rounding in t
        next.t = t0 + k as f64 * cfg.dt;
        state = next;
        max_drift = max_drift.max(info.unitarity_drift);
        if k % cfg.output_stride == 0 || k == steps {
            max_defect = max_defect.max(state.frame.defect());
            max_odd = max_odd.max(odd_mode_deviation(&state.frame));
            records.push(TimeSeriesRecord::from_state(&state, info.sc_iters));
        }
    }
    Ok(Trajectory {
        records,
        final_state: state,
        max_unitarity_drift: max_drift,
        max_unitarity_defect: max_defect,
        max_odd_deviation: max_odd,
    })
}
