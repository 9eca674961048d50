//! Frozen-history evaluation of the non-Markovian memory integrals.
//!
//! With `I_ℓ`, `n_ℓ` and `ω_ℓ` held at their values at time `t`, the memory
//! integrals reduce to
//!
//! ```text
//! G_ℓ   = (1/√Δ) ∫_0^√Δ dk ∫_{t-W}^t ds e^{ε(s-t)} e^{-i(k² - ω_ℓ)(t-s)}
//! G^N_ℓ = same with an extra factor N(k²)
//! δω_{ab} = -i (ḡ²/2) I*_a I_b (G_a - conj G_b)
//! ṅ_ℓ     = -2ḡ² Re[ |I_ℓ|² (n_ℓ G_ℓ - G^N_ℓ) ]
//! ```
//!
//! which approach the Markovian counter term and transport rate as `ε → 0`.
//! The k-integral is composite Gauss–Legendre with panel edges at the
//! resonance `k = √ω_ℓ`; the s-integral is the trapezoid rule on a uniform
//! grid, summed in closed form because the frozen integrand is geometric.

use gauss_quad::GaussLegendre;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::evolution::SystemState;
use crate::linalg::{max_abs, CMatrix, Hermitian};
use crate::model::{
    bose_einstein, counterterm_markovian, overlaps, transport_rhs, CounterTerm, ModelParams, MODES,
};

/// Relative change between full and half k resolution above which the
/// quadrature is reported as unresolved.
pub const K_ACCURACY: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryOptions {
    /// Adiabatic regulator `ε`.
    pub epsilon: f64,
    /// Gauss–Legendre nodes in k, shared among the panels.
    pub k_points: usize,
    /// History length `W`; `None` means `50/ε`.
    pub s_window: Option<f64>,
    /// Trapezoid step in s.
    pub s_step: f64,
}

impl MemoryOptions {
    pub fn new(epsilon: f64) -> Self {
        MemoryOptions {
            epsilon,
            k_points: 2000,
            s_window: None,
            s_step: 0.02,
        }
    }

    fn window(&self) -> f64 {
        self.s_window.unwrap_or(50.0 / self.epsilon)
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Domain(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.s_step > 0.0) || !(self.window() >= self.s_step) {
            return Err(Error::Domain(format!(
                "need 0 < s_step <= s_window, got {} and {}",
                self.s_step,
                self.window()
            )));
        }
        if self.k_points < 20 {
            return Err(Error::Domain(format!(
                "k_points must be at least 20, got {}",
                self.k_points
            )));
        }
        Ok(())
    }
}

/// Default regulator ladder for the ε → 0 extrapolation.
pub const DEFAULT_EPSILONS: [f64; 3] = [0.02, 0.01, 0.005];

/// Non-Markovian counter term (quasiparticle basis) and occupation rates.
#[derive(Debug, Clone, PartialEq)]
pub struct NonMarkovian {
    pub delta_omega: Hermitian,
    pub n_dot: [f64; MODES],
}

/// `(G_ℓ, G^N_ℓ)` for one mode.
fn mode_integrals(
    omega: f64,
    p: &ModelParams,
    opts: &MemoryOptions,
    k_points: usize,
) -> Result<(Complex64, Complex64)> {
    let kc = p.delta.sqrt();
    let kr = omega.sqrt();
    let ir = (omega / 2.0).sqrt();
    let width = (0.3 * kr).min(50.0 * opts.epsilon / (2.0 * kr));
    let mut edges = vec![0.0, ir, kr - width, kr, kr + width, kc];
    edges.retain(|&e| (0.0..=kc).contains(&e));
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    let per_panel = (k_points / (edges.len() - 1)).max(2);
    let rule = GaussLegendre::new(per_panel)
        .map_err(|e| Error::Contract(format!("Gauss-Legendre rule: {e}")))?;

    let h = opts.s_step;
    let steps = (opts.window() / h).round();
    let mut g = Complex64::new(0.0, 0.0);
    let mut g_n = Complex64::new(0.0, 0.0);
    for pair in edges.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let half = 0.5 * (b - a);
        for &(x, w) in rule.as_node_weight_pairs() {
            let k = a + half * (x + 1.0);
            let rate = Complex64::new(opts.epsilon, k * k - omega);
            let r = (-rate * h).exp();
            let r_m = (-rate * (h * steps)).exp();
            let t = h * ((1.0 - r_m) / (1.0 - r) - 0.5 + 0.5 * r_m);
            let wt = w * half;
            g += t * wt;
            // infrared cutoff: the resonance sits above it
            if k >= ir {
                g_n += t * (wt * bose_einstein(p.beta, k * k)?);
            }
        }
    }
    let norm = 1.0 / kc;
    Ok((g * norm, g_n * norm))
}

fn assemble(
    state: &SystemState,
    gbar: f64,
    integrals: &[(Complex64, Complex64); MODES],
) -> Result<NonMarkovian> {
    let ov = overlaps(&state.frame).0;
    let pre = Complex64::new(0.0, -0.5 * gbar * gbar);
    let mut m = CMatrix::zeros(MODES, MODES);
    for a in 0..MODES {
        for b in 0..MODES {
            let (ga, gb) = (integrals[a].0, integrals[b].0);
            m[(a, b)] = pre * ov[a].conj() * ov[b] * (ga - gb.conj());
        }
    }
    let mut n_dot = [0.0; MODES];
    for l in 0..MODES {
        let (g, g_n) = integrals[l];
        n_dot[l] = -2.0 * gbar * gbar * (ov[l].norm_sqr() * (state.n[l] * g - g_n)).re;
    }
    Ok(NonMarkovian {
        delta_omega: Hermitian::new(m)?,
        n_dot,
    })
}

/// Evaluates the memory integrals at one regulator `ε` for the frozen
/// `state`.
///
/// Fails with an accuracy error if halving the k budget moves any `G_ℓ` or
/// `G^N_ℓ` by more than [`K_ACCURACY`] relative to its size.
pub fn frozen_history_memory_check(
    state: &SystemState,
    p: &ModelParams,
    gbar: f64,
    opts: &MemoryOptions,
) -> Result<NonMarkovian> {
    opts.validate()?;
    p.validate()?;
    let mut integrals = [(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)); MODES];
    let mut worst: f64 = 0.0;
    for (l, slot) in integrals.iter_mut().enumerate() {
        let fine = mode_integrals(state.omega[l], p, opts, opts.k_points)?;
        let coarse = mode_integrals(state.omega[l], p, opts, opts.k_points / 2)?;
        worst = worst
            .max((fine.0 - coarse.0).norm() / fine.0.norm())
            .max((fine.1 - coarse.1).norm() / fine.1.norm());
        *slot = fine;
    }
    if !(worst <= K_ACCURACY) {
        return Err(Error::Accuracy {
            what: format!(
                "k quadrature with {} points at epsilon = {}",
                opts.k_points, opts.epsilon
            ),
            estimate: worst,
        });
    }
    assemble(state, gbar, &integrals)
}

/// Value at `x = 0` of the polynomial through `(xs, ys)` (Neville).
pub fn extrapolate_to_zero(xs: &[f64], ys: &[f64]) -> f64 {
    let mut p = ys.to_vec();
    let n = xs.len();
    for level in 1..n {
        for i in 0..n - level {
            let (xi, xj) = (xs[i], xs[i + level]);
            p[i] = (xj * p[i] - xi * p[i + 1]) / (xj - xi);
        }
    }
    p[0]
}

/// Regulator ladder, its extrapolation and the Markovian reference.
#[derive(Debug, Clone)]
pub struct MemoryCheck {
    pub rows: Vec<(f64, NonMarkovian)>,
    pub extrapolated: NonMarkovian,
    pub markovian: NonMarkovian,
}

impl MemoryCheck {
    /// Largest entrywise relative deviation of the extrapolated counter term
    /// from the Markovian one. Entries that vanish in the Markovian result
    /// are measured against the largest entry.
    pub fn delta_omega_error(&self) -> f64 {
        let m = self.markovian.delta_omega.matrix();
        let e = self.extrapolated.delta_omega.matrix();
        let floor = 1e-12 * max_abs(m);
        m.iter()
            .zip(e.iter())
            .map(|(a, b)| (a - b).norm() / a.norm().max(floor))
            .fold(0.0, f64::max)
    }

    /// Relative deviation of each extrapolated `ṅ_ℓ`, measured against the
    /// largest Markovian rate when `ṅ_ℓ` itself vanishes.
    pub fn n_dot_errors(&self) -> [f64; MODES] {
        let m = &self.markovian.n_dot;
        let scale = m.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mut out = [0.0; MODES];
        for l in 0..MODES {
            let d = (self.extrapolated.n_dot[l] - m[l]).abs();
            out[l] = if d == 0.0 {
                0.0
            } else {
                d / m[l].abs().max(1e-12 * scale)
            };
        }
        out
    }
}

/// Runs [`frozen_history_memory_check`] for each `ε` and extrapolates every
/// entry to `ε = 0`.
pub fn extrapolate_memory(
    state: &SystemState,
    p: &ModelParams,
    gbar: f64,
    epsilons: &[f64],
    k_points: usize,
) -> Result<MemoryCheck> {
    if epsilons.len() < 2 {
        return Err(Error::Domain("need at least two regulator values".into()));
    }
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let opts = MemoryOptions {
            k_points,
            ..MemoryOptions::new(eps)
        };
        rows.push((eps, frozen_history_memory_check(state, p, gbar, &opts)?));
    }
    let xs: Vec<f64> = epsilons.to_vec();
    let column = |f: &dyn Fn(&NonMarkovian) -> f64| {
        let ys: Vec<f64> = rows.iter().map(|(_, r)| f(r)).collect();
        extrapolate_to_zero(&xs, &ys)
    };
    let mut m = CMatrix::zeros(MODES, MODES);
    for a in 0..MODES {
        for b in 0..MODES {
            let re = column(&|r: &NonMarkovian| r.delta_omega.get(a, b).re);
            let im = column(&|r: &NonMarkovian| r.delta_omega.get(a, b).im);
            m[(a, b)] = Complex64::new(re, im);
        }
    }
    let mut n_dot = [0.0; MODES];
    for (l, slot) in n_dot.iter_mut().enumerate() {
        *slot = column(&|r: &NonMarkovian| r.n_dot[l]);
    }
    let extrapolated = NonMarkovian {
        delta_omega: Hermitian::new(m)?,
        n_dot,
    };

    let ov = overlaps(&state.frame);
    let markovian = NonMarkovian {
        delta_omega: counterterm_markovian(&ov, &state.omega, p.delta, gbar, CounterTerm::Full)?,
        n_dot: transport_rhs(&state.n, &ov, &state.omega, p, gbar)?,
    };
    Ok(MemoryCheck {
        rows,
        extrapolated,
        markovian,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_equilibrium;
    use crate::model::{kernel_c, kernel_cbar, Mode};

    fn quench_state() -> (ModelParams, SystemState) {
        let p = ModelParams::reference();
        let eq = solve_equilibrium(&p, p.gbar_before).unwrap();
        let s = SystemState::after_quench(&eq, &p, p.gbar_after, CounterTerm::Full).unwrap();
        (p, s)
    }

    #[test]
    fn neville_recovers_polynomials() {
        let f = |x: f64| 3.0 - 2.0 * x + 0.5 * x * x;
        let xs = [0.2, 0.1, 0.05];
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        assert!((extrapolate_to_zero(&xs, &ys) - 3.0).abs() < 1e-13);
        // halving ladder reduces to the familiar (8, -6, 1)/3 weights
        let ys = [1.0, 0.0, 0.0];
        assert!((extrapolate_to_zero(&xs, &ys) - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn sokhotski_plemelj_limit_per_mode() {
        let p = ModelParams::reference();
        for w in [0.0985, 1.51, 2.92] {
            let vals: Vec<Complex64> = DEFAULT_EPSILONS
                .iter()
                .map(|&e| {
                    mode_integrals(w, &p, &MemoryOptions::new(e), 2000)
                        .unwrap()
                        .0
                })
                .collect();
            let re = extrapolate_to_zero(
                &DEFAULT_EPSILONS,
                &vals.iter().map(|z| z.re).collect::<Vec<_>>(),
            );
            let im = extrapolate_to_zero(
                &DEFAULT_EPSILONS,
                &vals.iter().map(|z| z.im).collect::<Vec<_>>(),
            );
            let c = kernel_c(w, p.delta).unwrap();
            let cb = kernel_cbar(w, p.delta).unwrap();
            assert!(
                (re - std::f64::consts::PI * c).abs() < 0.01 * std::f64::consts::PI * c,
                "{w}: {re}"
            );
            assert!((im + cb).abs() < 0.01 * cb.abs(), "{w}: {im}");
        }
    }

    #[test]
    fn odd_entries_vanish() {
        let (p, s) = quench_state();
        let r =
            frozen_history_memory_check(&s, &p, p.gbar_after, &MemoryOptions::new(0.05)).unwrap();
        let o = Mode::Odd.index();
        // I_o is zero to rounding, entries are of order 1e-3
        for l in 0..MODES {
            assert!(r.delta_omega.get(o, l).norm() < 1e-18);
            assert!(r.delta_omega.get(l, o).norm() < 1e-18);
        }
        assert!(r.n_dot[o].abs() < 1e-18);
    }

    #[test]
    fn matches_markovian_limit() {
        let (p, s) = quench_state();
        let check = extrapolate_memory(&s, &p, p.gbar_after, &DEFAULT_EPSILONS, 2000).unwrap();
        assert!(
            check.delta_omega_error() < 0.02,
            "{}",
            check.delta_omega_error()
        );
    }

    #[test]
    fn detailed_balance_suppresses_transport() {
        let (p, mut s) = quench_state();
        for l in 0..MODES {
            s.n[l] = bose_einstein(p.beta, s.omega[l]).unwrap();
        }
        let check = extrapolate_memory(&s, &p, p.gbar_after, &DEFAULT_EPSILONS, 2000).unwrap();
        // compare with the size of either term of the bracket
        let g = Mode::Ground.index();
        let ov = overlaps(&s.frame);
        let gain = 2.0
            * std::f64::consts::PI
            * p.gbar_after.powi(2)
            * ov.get(Mode::Ground).norm_sqr()
            * kernel_c(s.omega[g], p.delta).unwrap()
            * s.n[g];
        for l in 0..MODES {
            assert!(
                check.extrapolated.n_dot[l].abs() < 0.01 * gain,
                "{l}: {}",
                check.extrapolated.n_dot[l]
            );
        }
        // and the unextrapolated rates shrink with ε
        let first = check.rows[0].1.n_dot[g].abs();
        let last = check.rows[2].1.n_dot[g].abs();
        assert!(last < first);
    }

    #[test]
    fn coarse_k_budget_reports_accuracy() {
        let (p, s) = quench_state();
        let opts = MemoryOptions {
            k_points: 20,
            ..MemoryOptions::new(0.005)
        };
        let err = frozen_history_memory_check(&s, &p, p.gbar_after, &opts).unwrap_err();
        assert!(matches!(err, Error::Accuracy { estimate, .. } if estimate > K_ACCURACY));
    }

    #[test]
    fn bad_regulator_rejected() {
        let (p, s) = quench_state();
        for eps in [0.0, -0.1, f64::NAN] {
            assert!(matches!(
                frozen_history_memory_check(&s, &p, 0.1, &MemoryOptions::new(eps)),
                Err(Error::Domain(_))
            ));
        }
        assert!(extrapolate_memory(&s, &p, 0.1, &[0.01], 2000).is_err());
    }
}
