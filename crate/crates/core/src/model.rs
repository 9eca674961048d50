//! Triple-well system coupled to a bosonic reservoir with dispersion `Ω_k = k²`.
//!
//! Energies are in units of the hopping `J`, times in units of `1/J`. Sites
//! are ordered `x = 1, 0, -1` (matrix rows) and quasiparticle modes `g, o, e`
//! (matrix columns).

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, Hermitian, Unitary};

/// Number of wells and of quasiparticle modes.
pub const MODES: usize = 3;

/// Fraction of the bandwidth kept clear of either band edge.
pub const BAND_EDGE_GUARD: f64 = 1e-6;

/// Quasiparticle mode labels in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Ground = 0,
    Odd = 1,
    Excited = 2,
}

impl Mode {
    pub const ALL: [Mode; MODES] = [Mode::Ground, Mode::Odd, Mode::Excited];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::Ground => "g",
            Mode::Odd => "o",
            Mode::Excited => "e",
        }
    }
}

/// Well positions in row order.
pub const SITES: [i32; MODES] = [1, 0, -1];

/// Physical constants of the model, in units of `J`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Reservoir bandwidth `Δ`.
    pub delta: f64,
    /// Coupling `ḡ` for `t < 0`.
    pub gbar_before: f64,
    /// Coupling `ḡ` for `t ≥ 0`.
    pub gbar_after: f64,
    /// Inverse temperature `β`.
    pub beta: f64,
    /// Total particle number of the wells before the quench.
    pub n_total: f64,
}

impl ModelParams {
    /// Parameters of the reference quench: `Σn = 10`, `β = 1/J`, `Δ = 10 J`,
    /// `ḡ = 0.2 J → 0.1 J`.
    pub fn reference() -> Self {
        ModelParams {
            delta: 10.0,
            gbar_before: 0.2,
            gbar_after: 0.1,
            beta: 1.0,
            n_total: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        positive("Delta", self.delta)?;
        positive("beta", self.beta)?;
        positive("N_total", self.n_total)?;
        for (name, g) in [
            ("gbar_before", self.gbar_before),
            ("gbar_after", self.gbar_after),
        ] {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Domain(format!(
                    "{name} must be non-negative, got {g}"
                )));
            }
        }
        Ok(())
    }
}

/// Which counter-term entries are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CounterTerm {
    /// All entries `δω_{ℓ1ℓ2}`.
    #[default]
    Full,
    /// Only `δω_{ℓℓ}`; off-diagonal entries forced to zero.
    DiagonalOnly,
}

/// Bare single-particle Hamiltonian `h_0` of the wells.
pub fn build_h0(mu: f64) -> Hermitian {
    let d = Complex64::new(-mu, 0.0);
    let hop = Complex64::new(-1.0, 0.0);
    let z = Complex64::new(0.0, 0.0);
    let m = CMatrix::from_row_slice(MODES, MODES, &[d, hop, z, hop, d, hop, z, hop, d]);
    Hermitian::new(m).expect("h0 is Hermitian by construction")
}

/// Bose–Einstein occupation `1/(e^{βω} - 1)`.
pub fn bose_einstein(beta: f64, omega: f64) -> Result<f64> {
    let x = beta * omega;
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!(
            "Bose-Einstein occupation undefined for beta*omega = {x}"
        )));
    }
    Ok(1.0 / x.exp_m1())
}

fn check_in_band(omega: f64, delta: f64) -> Result<()> {
    let guard = BAND_EDGE_GUARD * delta;
    if omega > guard && omega < delta - guard && omega.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "energy {omega} outside the reservoir band (0, {delta})"
        )))
    }
}

/// Resonant kernel `C(ω) = 1/(2√(ωΔ))`.
pub fn kernel_c(omega: f64, delta: f64) -> Result<f64> {
    check_in_band(omega, delta)?;
    Ok(0.5 / (omega * delta).sqrt())
}

/// Principal-value kernel `C̄(ω) = C(ω) ln((√Δ - √ω)/(√Δ + √ω))`.
pub fn kernel_cbar(omega: f64, delta: f64) -> Result<f64> {
    let c = kernel_c(omega, delta)?;
    let (sw, sd) = (omega.sqrt(), delta.sqrt());
    Ok(c * ((sd - sw) / (sd + sw)).ln())
}

/// Column sums `I_ℓ = Σ_x V[x][ℓ]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlaps(pub [Complex64; MODES]);

impl Overlaps {
    pub fn get(&self, mode: Mode) -> Complex64 {
        self.0[mode.index()]
    }
}

pub fn overlaps(frame: &Unitary) -> Overlaps {
    let mut out = [Complex64::new(0.0, 0.0); MODES];
    for (l, slot) in out.iter_mut().enumerate() {
        *slot = (0..MODES).map(|x| frame.get(x, l)).sum();
    }
    Overlaps(out)
}

/// Kernel combination `k(ω1, ω2) = C̄(ω1) + C̄(ω2) + iπ(C(ω1) - C(ω2))`.
///
/// The sign of the imaginary part is the Sokhotski–Plemelj limit of the
/// regulated memory integral; see `memory` for the independent evaluation.
pub fn kernel_pair(omega1: f64, omega2: f64, delta: f64) -> Result<Complex64> {
    let (c1, c2) = (kernel_c(omega1, delta)?, kernel_c(omega2, delta)?);
    let (b1, b2) = (kernel_cbar(omega1, delta)?, kernel_cbar(omega2, delta)?);
    Ok(Complex64::new(b1 + b2, PI * (c1 - c2)))
}

/// Markovian counter term `δω^ℓ` in the quasiparticle basis.
///
/// `δω_{ℓ1ℓ2} = -(ḡ²/2) I*_{ℓ1} I_{ℓ2} k(ω_{ℓ1}, ω_{ℓ2})`; the diagonal is
/// `-ḡ² |I_ℓ|² C̄(ω_ℓ)`.
pub fn counterterm_markovian(
    ov: &Overlaps,
    omega: &[f64; MODES],
    delta: f64,
    gbar: f64,
    kind: CounterTerm,
) -> Result<Hermitian> {
    let pre = -0.5 * gbar * gbar;
    let mut m = CMatrix::zeros(MODES, MODES);
    for a in 0..MODES {
        for b in a..MODES {
            if a != b && kind == CounterTerm::DiagonalOnly {
                // still validate the energies
                kernel_c(omega[b], delta)?;
                continue;
            }
            let k = kernel_pair(omega[a], omega[b], delta)?;
            let v = ov.0[a].conj() * ov.0[b] * k * pre;
            if a == b {
                m[(a, a)] = Complex64::new(v.re, 0.0);
            } else {
                m[(a, b)] = v;
                m[(b, a)] = v.conj();
            }
        }
    }
    Hermitian::new(m)
}

/// Markovian transport equation
/// `ṅ_ℓ = -2π ḡ² |I_ℓ|² C(ω_ℓ) (n_ℓ - N(ω_ℓ))`.
pub fn transport_rhs(
    n: &[f64; MODES],
    ov: &Overlaps,
    omega: &[f64; MODES],
    p: &ModelParams,
    gbar: f64,
) -> Result<[f64; MODES]> {
    let mut out = [0.0; MODES];
    for l in 0..MODES {
        let (rate, target) = relaxation(ov, omega, p, gbar, l)?;
        out[l] = -rate * (n[l] - target);
    }
    Ok(out)
}

/// Rate `2πḡ²|I_ℓ|²C(ω_ℓ)` and target occupation `N(ω_ℓ)` of mode `l`.
pub fn relaxation(
    ov: &Overlaps,
    omega: &[f64; MODES],
    p: &ModelParams,
    gbar: f64,
    l: usize,
) -> Result<(f64, f64)> {
    let c = kernel_c(omega[l], p.delta)?;
    let target = bose_einstein(p.beta, omega[l])?;
    Ok((2.0 * PI * gbar * gbar * ov.0[l].norm_sqr() * c, target))
}

/// `δω^x = V δω^ℓ V†`.
pub fn delta_omega_to_site_basis(d: &Hermitian, frame: &Unitary) -> Hermitian {
    frame.conjugate(d)
}

/// Renormalised energies `ω_ℓ = v_ℓ† h_u v_ℓ` of a frame, with
/// `h_u = h_0 + V δω^ℓ(ω) V†`, together with the counter term at those
/// energies.
///
/// Only the diagonal `δω_ℓℓ = -ḡ²|I_ℓ|²C̄(ω_ℓ)` feeds back into `ω_ℓ`, so
/// each mode is a scalar fixed point `ω = (V†h_0V)_ℓℓ + δω_ℓℓ(ω)`.
pub fn renormalized_energies(
    frame: &Unitary,
    h0: &Hermitian,
    delta: f64,
    gbar: f64,
    kind: CounterTerm,
) -> Result<([f64; MODES], Hermitian)> {
    let bare = frame.conjugate_adjoint(h0);
    let ov = overlaps(frame);
    let mut omega = [0.0; MODES];
    for l in 0..MODES {
        let a = bare.get(l, l).re;
        let weight = gbar * gbar * ov.0[l].norm_sqr();
        let mut w = a;
        let mut converged = weight == 0.0;
        for _ in 0..200 {
            if converged {
                break;
            }
            let next = a - weight * kernel_cbar(w, delta)?;
            converged = (next - w).abs() <= 1e-15 * next.abs().max(1.0);
            w = next;
        }
        if !converged {
            return Err(Error::Convergence {
                what: format!("energy of mode {}", Mode::ALL[l].label()),
                iterations: 200,
                residual: (a - weight * kernel_cbar(w, delta)? - w).abs(),
            });
        }
        omega[l] = w;
    }
    let d = counterterm_markovian(&ov, &omega, delta, gbar, kind)?;
    Ok((omega, d))
}

/// Reflection `x → -x` as a permutation matrix.
pub fn reflection() -> CMatrix {
    let one = Complex64::new(1.0, 0.0);
    let z = Complex64::new(0.0, 0.0);
    CMatrix::from_row_slice(MODES, MODES, &[z, z, one, z, one, z, one, z, z])
}

/// The exact odd mode `(1, 0, -1)/√2`.
pub fn odd_mode() -> [Complex64; MODES] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [
        Complex64::new(s, 0.0),
        Complex64::new(0.0, 0.0),
        Complex64::new(-s, 0.0),
    ]
}

/// Distance of column `o` from `(1, 0, -1)/√2` after removing its global phase.
pub fn odd_mode_deviation(frame: &Unitary) -> f64 {
    let target = odd_mode();
    let col = Mode::Odd.index();
    let overlap: Complex64 = (0..MODES)
        .map(|x| target[x].conj() * frame.get(x, col))
        .sum();
    let phase = if overlap.norm() > 0.0 {
        overlap / overlap.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    (0..MODES)
        .map(|x| (frame.get(x, col) - target[x] * phase).norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eig_hermitian, max_abs, propagate_unitary};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn analytic_frame() -> Unitary {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Unitary::new(CMatrix::from_row_slice(
            3,
            3,
            &[
                c(0.5, 0.0),
                c(s, 0.0),
                c(0.5, 0.0),
                c(s, 0.0),
                c(0.0, 0.0),
                c(-s, 0.0),
                c(0.5, 0.0),
                c(-s, 0.0),
                c(0.5, 0.0),
            ],
        ))
        .unwrap()
    }

    #[test]
    fn h0_transcription_and_symmetry() {
        let h = build_h0(0.0);
        let expect = [[0.0, -1.0, 0.0], [-1.0, 0.0, -1.0], [0.0, -1.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(h.get(i, j), c(expect[i][j], 0.0));
            }
        }
        for mu in [-3.0, -1.5125, 0.0, 0.7] {
            let h = build_h0(mu);
            let p = reflection();
            assert_eq!(&p * h.matrix(), h.matrix() * &p);
        }
        let (vals, _) = eig_hermitian(&build_h0(-1.5125)).unwrap();
        for (v, e) in vals.iter().zip([0.0983, 1.5125, 2.9267]) {
            assert!((v - e).abs() < 1e-4);
        }
    }

    #[test]
    fn bose_einstein_values() {
        assert!((bose_einstein(1.0, 2f64.ln()).unwrap() - 1.0).abs() < 1e-15);
        for x in [50.0, 80.0, 300.0] {
            let n = bose_einstein(1.0, x).unwrap();
            assert!((n - (-x).exp()).abs() <= 1e-20);
            assert!(((n - (-x).exp()) / (-x).exp()).abs() <= 1e-15);
        }
        let n = bose_einstein(1.0, 0.0983).unwrap();
        assert!((n - 9.68).abs() < 0.01, "{n}");
        assert!(matches!(bose_einstein(1.0, 0.0), Err(Error::Domain(_))));
        assert!(bose_einstein(1.0, -0.5).is_err());
        assert!(bose_einstein(-1.0, 0.5).is_err());
    }

    #[test]
    fn kernels() {
        assert!((kernel_c(0.1, 10.0).unwrap() - 0.5).abs() < 1e-15);
        let d = 10.0;
        let cb = kernel_cbar(d / 9.0, d).unwrap();
        assert!((cb - 1.5 / d * 0.5f64.ln()).abs() < 1e-14);
        // approach the upper band edge down to the guard
        let mut prev = f64::INFINITY;
        for i in 1..=23 {
            let w = d * (1.0 - 10f64.powf(-(i as f64) / 4.0));
            let v = kernel_cbar(w, d).unwrap();
            assert!(v < prev, "not decreasing at {w}");
            prev = v;
        }
        assert!(prev < -0.7, "{prev}");
        for bad in [0.0, -1.0, d, d * (1.0 - 1e-7), 11.0] {
            assert!(matches!(kernel_c(bad, d), Err(Error::Domain(_))));
            assert!(kernel_cbar(bad, d).is_err());
        }
    }

    #[test]
    fn kernel_signs_in_band() {
        for i in 1..100 {
            let w = 10.0 * i as f64 / 100.0;
            assert!(kernel_c(w, 10.0).unwrap() > 0.0);
            assert!(kernel_cbar(w, 10.0).unwrap() < 0.0);
        }
    }

    #[test]
    fn overlap_examples() {
        let ov = overlaps(&analytic_frame());
        assert_eq!(ov.get(Mode::Odd), c(0.0, 0.0));
        assert!((ov.get(Mode::Ground).re - (1.0 + std::f64::consts::FRAC_1_SQRT_2)).abs() < 1e-15);
        assert!((ov.get(Mode::Excited).re - (1.0 - std::f64::consts::FRAC_1_SQRT_2)).abs() < 1e-15);
        assert!((ov.get(Mode::Ground).re - 1.7071).abs() < 1e-4);
        assert!((ov.get(Mode::Excited).re - 0.2929).abs() < 1e-4);
    }

    #[test]
    fn counterterm_structure() {
        let ov = overlaps(&analytic_frame());
        let omega = [0.0983, 1.5125, 2.9267];
        let d = counterterm_markovian(&ov, &omega, 10.0, 0.2, CounterTerm::Full).unwrap();
        for l in 0..3 {
            assert_eq!(d.get(1, l), c(0.0, 0.0));
            assert_eq!(d.get(l, 1), c(0.0, 0.0));
        }
        for l in [0, 2] {
            let expect = -0.04 * ov.0[l].norm_sqr() * kernel_cbar(omega[l], 10.0).unwrap();
            assert!((d.get(l, l) - c(expect, 0.0)).norm() < 1e-16);
            assert!(d.get(l, l).re > 0.0);
        }
        assert_eq!(d.get(0, 2), d.get(2, 0).conj());
        assert!(d.get(0, 2).im != 0.0);

        let zero = counterterm_markovian(&ov, &omega, 10.0, 0.0, CounterTerm::Full).unwrap();
        assert_eq!(max_abs(zero.matrix()), 0.0);

        let diag =
            counterterm_markovian(&ov, &omega, 10.0, 0.2, CounterTerm::DiagonalOnly).unwrap();
        assert_eq!(diag, d.diagonal_part());

        let bad = [0.0983, 1.5125, 12.0];
        assert!(matches!(
            counterterm_markovian(&ov, &bad, 10.0, 0.2, CounterTerm::Full),
            Err(Error::Domain(_))
        ));
        assert!(counterterm_markovian(&ov, &bad, 10.0, 0.2, CounterTerm::DiagonalOnly).is_err());
    }

    #[test]
    fn equal_energies_give_real_entry() {
        let ov = Overlaps([c(0.3, 0.4), c(-0.2, 0.1), c(1.0, -0.5)]);
        let omega = [1.2, 1.2, 1.2];
        let d = counterterm_markovian(&ov, &omega, 10.0, 0.3, CounterTerm::Full).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let ratio = d.get(a, b) / (ov.0[a].conj() * ov.0[b]);
                assert!(ratio.im.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn transport_examples() {
        let ov = overlaps(&analytic_frame());
        let omega = [0.0983, 1.5125, 2.9267];
        let p = ModelParams {
            gbar_after: 0.1,
            ..ModelParams::reference()
        };
        let n_eq: Vec<f64> = omega
            .iter()
            .map(|&w| bose_einstein(1.0, w).unwrap())
            .collect();
        let rhs = transport_rhs(&[n_eq[0], n_eq[1], n_eq[2]], &ov, &omega, &p, 0.1).unwrap();
        assert!(rhs.iter().all(|r| r.abs() < 1e-15));
        let rhs = transport_rhs(&[1.0, 5.0, 0.0], &ov, &omega, &p, 0.1).unwrap();
        assert_eq!(rhs[1], 0.0);
        let (rate, _) = relaxation(&ov, &omega, &p, 0.1, 0).unwrap();
        assert!((ov.0[0].norm_sqr() - 2.914).abs() < 1e-3);
        assert!((rate - 0.092).abs() < 0.001, "rate {rate}");
    }

    #[test]
    fn site_basis_transform() {
        let f = analytic_frame();
        let zero = delta_omega_to_site_basis(&Hermitian::zeros(3), &f);
        assert_eq!(max_abs(zero.matrix()), 0.0);
        let id = delta_omega_to_site_basis(&Hermitian::identity(3), &f);
        assert!(max_abs(&(id.matrix() - CMatrix::identity(3, 3))) < 1e-15);

        // a parity-respecting frame: even columns mixed with a complex angle
        let h = Hermitian::new(CMatrix::from_row_slice(
            3,
            3,
            &[
                c(0.2, 0.0),
                c(0.1, 0.3),
                c(-0.4, 0.0),
                c(0.1, -0.3),
                c(0.5, 0.0),
                c(0.1, -0.3),
                c(-0.4, 0.0),
                c(0.1, 0.3),
                c(0.2, 0.0),
            ],
        ))
        .unwrap();
        let (_, frame) = eig_hermitian(&build_h0(-1.0).add(&h)).unwrap();
        let ov = overlaps(&frame);
        assert!(ov.get(Mode::Odd).norm() < 1e-15);
        let d =
            counterterm_markovian(&ov, &[0.3, 1.1, 2.7], 10.0, 0.25, CounterTerm::Full).unwrap();
        let x = delta_omega_to_site_basis(&d, &frame);
        assert!((x.get(0, 0) - x.get(2, 2)).norm() < 1e-15);
        assert!((x.get(0, 1) - x.get(2, 1)).norm() < 1e-15);
        assert!((x.get(0, 2) - x.get(2, 0)).norm() < 1e-15);
        let back = frame.conjugate_adjoint(&x);
        assert!(max_abs(&(back.matrix() - d.matrix())) < 1e-12);
    }

    #[test]
    fn odd_mode_deviation_ignores_phase() {
        let f = analytic_frame();
        assert!(odd_mode_deviation(&f) < 1e-16);
        let phase =
            propagate_unitary(&Hermitian::from_diagonal(&[0.0, 0.7, 0.0]), 0.0, 1.0).unwrap();
        let rotated = Unitary::new(f.matrix() * phase).unwrap();
        assert!(odd_mode_deviation(&rotated) < 1e-15);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::reference().validate().is_ok());
        for p in [
            ModelParams {
                delta: -1.0,
                ..ModelParams::reference()
            },
            ModelParams {
                beta: 0.0,
                ..ModelParams::reference()
            },
            ModelParams {
                n_total: 0.0,
                ..ModelParams::reference()
            },
            ModelParams {
                gbar_after: -0.1,
                ..ModelParams::reference()
            },
            ModelParams {
                gbar_before: f64::NAN,
                ..ModelParams::reference()
            },
        ] {
            assert!(p.validate().is_err());
        }
    }

    fn overlaps_strategy() -> impl Strategy<Value = Overlaps> {
        proptest::collection::vec(-1.5f64..1.5, 6)
            .prop_map(|x| Overlaps([c(x[0], x[1]), c(x[2], x[3]), c(x[4], x[5])]))
    }

    proptest! {
        #[test]
        fn counterterm_hermitian_rank_one(ov in overlaps_strategy(),
                                          w in proptest::collection::vec(0.01f64..9.9, 3),
                                          g in 0.0f64..0.5) {
            let omega = [w[0], w[1], w[2]];
            let d = counterterm_markovian(&ov, &omega, 10.0, g, CounterTerm::Full).unwrap();
            for a in 0..3 {
                prop_assert_eq!(d.get(a, a).im, 0.0);
                for b in 0..3 {
                    prop_assert_eq!(d.get(a, b), d.get(b, a).conj());
                    let k = kernel_pair(omega[a], omega[b], 10.0).unwrap();
                    let expect = ov.0[a].conj() * ov.0[b] * k * (-0.5 * g * g);
                    prop_assert!((d.get(a, b) - expect).norm() <= 1e-14 * (1.0 + expect.norm()));
                }
            }
        }

        #[test]
        fn transport_drives_toward_target(ov in overlaps_strategy(),
                                          w in proptest::collection::vec(0.01f64..9.9, 3),
                                          n in proptest::collection::vec(0.0f64..20.0, 3),
                                          g in 0.01f64..0.5) {
            let omega = [w[0], w[1], w[2]];
            let p = ModelParams::reference();
            let rhs = transport_rhs(&[n[0], n[1], n[2]], &ov, &omega, &p, g).unwrap();
            for l in 0..3 {
                let target = bose_einstein(1.0, omega[l]).unwrap();
                if ov.0[l].norm() > 1e-6 && (target - n[l]).abs() > 1e-9 {
                    prop_assert_eq!(rhs[l].signum(), (target - n[l]).signum());
                }
            }
        }
    }
}
