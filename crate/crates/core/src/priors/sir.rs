//! Metapopulation SIR rollout with graph-mixed infection pressure, used as
//! an auxiliary incidence forecast.

use crate::error::{Error, Result};
use crate::graph::MixingOperator;
use crate::priors::rate_head::EpiRates;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SirState<T: Scalar = f64> {
    pub s: Vec<T>,
    pub i: Vec<T>,
    pub r: Vec<T>,
}

impl<T: Scalar> SirState<T> {
    pub fn totals(&self) -> Vec<T> {
        self.s
            .iter()
            .zip(&self.i)
            .zip(&self.r)
            .map(|((&s, &i), &r)| s + i + r)
            .collect()
    }
}

/// `I₀` is the last observation clamped to `[0, p]`, `R₀ = 0`, `S₀ = p − I₀`.
pub fn init_sir_states<T: Scalar>(last_row: &[T], populations: &[T]) -> SirState<T> {
    let i: Vec<T> = last_row
        .iter()
        .zip(populations)
        .map(|(&x, &p)| x.max(T::zero()).min(p))
        .collect();
    SirState {
        s: populations.iter().zip(&i).map(|(&p, &i)| p - i).collect(),
        r: vec![T::zero(); i.len()],
        i,
    }
}

/// Which nonnegativity repairs fired for a node during one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Clamp {
    /// `I < 0`: its deficit is charged to `S`.
    infectious: bool,
    /// `S < 0`: its deficit is charged to `I`.
    susceptible: bool,
    /// `I < 0` again after the previous repair: charged to `R`.
    spill: bool,
}

/// States and incidences of one rollout, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Rollout<T: Scalar = f64> {
    /// `states[τ]` for `τ = 0..=h`.
    pub states: Vec<SirState<T>>,
    /// `incidence[τ] = z^(τ)` for `τ = 0..h`.
    pub incidence: Vec<Vec<T>>,
    mixed: Vec<Vec<T>>,
    clamps: Vec<Vec<Clamp>>,
    dt: T,
}

impl<T: Scalar> Rollout<T> {
    pub fn horizon(&self) -> usize {
        self.incidence.len()
    }

    /// The auxiliary forecast `r = z^(h−1)`.
    pub fn output(&self) -> &[T] {
        self.incidence.last().expect("rollout has at least one step")
    }

    pub fn final_state(&self) -> &SirState<T> {
        self.states.last().expect("rollout has states")
    }

    /// Given `∂L/∂r`, returns `(∂L/∂β, ∂L/∂γ)`.
    pub fn backward(
        &self,
        g_r: &[T],
        rates: &EpiRates<T>,
        mixing: &MixingOperator<T>,
        populations: &[T],
    ) -> Result<(Vec<T>, Vec<T>)> {
        let n = g_r.len();
        let h = self.horizon();
        let dt = self.dt;
        let mut g_beta = vec![T::zero(); n];
        let mut g_gamma = vec![T::zero(); n];
        // r = z^(h-1) = dt β S M / p with M = P I, all at state h-1.
        let last = &self.states[h - 1];
        let m = &self.mixed[h - 1];
        let mut g_s = vec![T::zero(); n];
        let mut g_m = vec![T::zero(); n];
        for k in 0..n {
            let c = dt / populations[k];
            g_beta[k] += g_r[k] * c * last.s[k] * m[k];
            g_s[k] = g_r[k] * c * rates.beta[k] * m[k];
            g_m[k] = g_r[k] * c * rates.beta[k] * last.s[k];
        }
        let mut g_i = mixing.mix_transpose(&g_m)?;
        // Walk steps h-2 .. 0: adjoints (g_s, g_i) belong to state τ+1.
        for tau in (0..h.saturating_sub(1)).rev() {
            // Undo the nonnegativity repairs, last repair first.
            for k in 0..n {
                let c = self.clamps[tau][k];
                if c.spill {
                    g_i[k] = T::zero();
                }
                if c.susceptible {
                    // s_after = 0, i_after = i + s.
                    g_s[k] = g_i[k];
                }
                if c.infectious {
                    // s_after = s + i, i_after = 0.
                    g_i[k] = g_s[k];
                }
            }
            let st = &self.states[tau];
            let m = &self.mixed[tau];
            let mut g_m = vec![T::zero(); n];
            let mut next_s = vec![T::zero(); n];
            let mut next_i = vec![T::zero(); n];
            for k in 0..n {
                let c = dt / populations[k];
                // S' = S − z, I' = I + z − dt γ I.
                let g_z = g_i[k] - g_s[k];
                g_beta[k] += g_z * c * st.s[k] * m[k];
                g_gamma[k] -= g_i[k] * dt * st.i[k];
                next_s[k] = g_s[k] + g_z * c * rates.beta[k] * m[k];
                g_m[k] = g_z * c * rates.beta[k] * st.s[k];
                next_i[k] = g_i[k] * (T::one() - dt * rates.gamma[k]);
            }
            let back = mixing.mix_transpose(&g_m)?;
            for k in 0..n {
                next_i[k] += back[k];
            }
            g_s = next_s;
            g_i = next_i;
        }
        Ok((g_beta, g_gamma))
    }
}

/// Forward-Euler rollout for `h` steps with rates held fixed.
///
/// Each step computes `z = dt·β⊙(S/p)⊙(P I)`, moves `z` from `S` to `I` and
/// `dt·γ⊙I` from `I` to `R`, then repairs negative compartments by charging
/// the deficit to `S` (or, if `S` itself went negative, to `I` and then `R`),
/// so per-node totals are preserved exactly up to rounding.
pub fn sir_rollout<T: Scalar>(
    state0: &SirState<T>,
    rates: &EpiRates<T>,
    mixing: &MixingOperator<T>,
    populations: &[T],
    dt: T,
    horizon: usize,
) -> Result<Rollout<T>> {
    if horizon < 1 {
        return Err(Error::InvalidArgument("rollout horizon must be at least 1".into()));
    }
    if dt.is_nan() || dt <= T::zero() {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    let n = populations.len();
    for len in [state0.s.len(), state0.i.len(), state0.r.len(), rates.beta.len(), rates.gamma.len(), mixing.dim()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, actual: len });
        }
    }
    let mut states = Vec::with_capacity(horizon + 1);
    let mut incidence = Vec::with_capacity(horizon);
    let mut mixed = Vec::with_capacity(horizon);
    let mut clamps = Vec::with_capacity(horizon);
    states.push(state0.clone());
    for _ in 0..horizon {
        let st = states.last().expect("nonempty");
        let m = mixing.mix(&st.i)?;
        let z: Vec<T> = (0..n)
            .map(|k| dt * rates.beta[k] * (st.s[k] / populations[k]) * m[k])
            .collect();
        let mut next = SirState {
            s: vec![T::zero(); n],
            i: vec![T::zero(); n],
            r: vec![T::zero(); n],
        };
        let mut flags = vec![Clamp::default(); n];
        for k in 0..n {
            let recovered = dt * rates.gamma[k] * st.i[k];
            let (mut s, mut i, mut r) = (st.s[k] - z[k], st.i[k] + z[k] - recovered, st.r[k] + recovered);
            if i < T::zero() {
                s += i;
                i = T::zero();
                flags[k].infectious = true;
            }
            if s < T::zero() {
                i += s;
                s = T::zero();
                flags[k].susceptible = true;
                if i < T::zero() {
                    r += i;
                    i = T::zero();
                    flags[k].spill = true;
                }
            }
            next.s[k] = s;
            next.i[k] = i;
            next.r[k] = r;
        }
        incidence.push(z);
        mixed.push(m);
        clamps.push(flags);
        states.push(next);
    }
    Ok(Rollout {
        states,
        incidence,
        mixed,
        clamps,
        dt,
    })
}

/// `s·r/p`, elementwise.
pub fn sir_percent<T: Scalar>(r: &[T], populations: &[T], s: T) -> Vec<T> {
    r.iter().zip(populations).map(|(&r, &p)| s * r / p).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rates(beta: Vec<f64>, gamma: Vec<f64>) -> EpiRates {
        EpiRates { beta, gamma }
    }

    #[test]
    fn initial_states() {
        assert_eq!(init_sir_states(&[0.0], &[50.0]), SirState { s: vec![50.0], i: vec![0.0], r: vec![0.0] });
        assert_eq!(init_sir_states(&[50.0], &[50.0]), SirState { s: vec![0.0], i: vec![50.0], r: vec![0.0] });
        assert_eq!(init_sir_states(&[1.0], &[100.0]), SirState { s: vec![99.0], i: vec![1.0], r: vec![0.0] });
    }

    #[test]
    fn hand_evaluated_step() {
        let st = SirState { s: vec![99.0], i: vec![1.0], r: vec![0.0] };
        let out = sir_rollout(&st, &rates(vec![0.5], vec![0.1]), &MixingOperator::identity(1), &[100.0], 1.0, 1).unwrap();
        assert!((out.output()[0] - 0.495).abs() < 1e-15);
        let next = out.final_state();
        assert!((next.s[0] - 98.505).abs() < 1e-12);
        assert!((next.i[0] - 1.395).abs() < 1e-12);
        assert!((next.r[0] - 0.1).abs() < 1e-15);
        assert!((sir_percent(out.output(), &[100.0], 100.0)[0] - 0.495).abs() < 1e-15);
    }

    #[test]
    fn no_transmission_decays_geometrically() {
        let st = SirState { s: vec![90.0, 40.0], i: vec![10.0, 5.0], r: vec![0.0, 5.0] };
        let out = sir_rollout(&st, &rates(vec![0.0, 0.0], vec![0.2, 0.3]), &MixingOperator::identity(2), &[100.0, 50.0], 1.0, 5)
            .unwrap();
        for (tau, state) in out.states.iter().enumerate() {
            assert_eq!(state.s, st.s);
            assert!((state.i[0] - 10.0 * 0.8f64.powi(tau as i32)).abs() < 1e-12);
        }
        assert!(out.incidence.iter().flatten().all(|&z| z == 0.0));
    }

    #[test]
    fn percent_edge_cases() {
        assert_eq!(sir_percent(&[7.0, 3.0], &[7.0, 3.0], 100.0), vec![100.0, 100.0]);
        assert_eq!(sir_percent(&[0.25], &[1.0], 1.0), vec![0.25]);
    }

    #[test]
    fn zero_horizon_errors() {
        let st = init_sir_states(&[1.0], &[10.0]);
        assert!(sir_rollout(&st, &rates(vec![1.0], vec![1.0]), &MixingOperator::identity(1), &[10.0], 1.0, 0).is_err());
    }

    #[test]
    fn clamping_preserves_totals() {
        // dt·γ > 1 and dt·β·I/p > 1 force every repair path.
        let p = vec![10.0, 20.0, 5.0];
        let st = SirState { s: vec![2.0, 19.0, 1.0], i: vec![8.0, 1.0, 4.0], r: vec![0.0; 3] };
        let mixing = MixingOperator::from_stochastic(
            Matrix::from_rows(&[vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5]]).unwrap(),
        )
        .unwrap();
        let out = sir_rollout(&st, &rates(vec![9.0, 30.0, 4.0], vec![2.5, 0.1, 1.7]), &mixing, &p, 1.0, 28).unwrap();
        let t0 = st.totals();
        for state in &out.states {
            for (k, total) in state.totals().iter().enumerate() {
                assert!((total - t0[k]).abs() <= 1e-12 * t0[k]);
            }
            assert!(state.s.iter().chain(&state.i).chain(&state.r).all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 4;
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                w[(i, j)] = rng.random_range(0.0..1.0);
            }
        }
        let mixing = crate::graph::row_normalize(
            &crate::graph::AdjacencyMatrix::new(w).unwrap(),
            crate::graph::ZeroRowPolicy::SelfLoop,
        );
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(50.0..200.0)).collect();
        let st = init_sir_states(&(0..n).map(|_| rng.random_range(1.0..20.0)).collect::<Vec<_>>(), &p);
        let beta: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.6)).collect();
        let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.4)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 6;
        let loss = |b: &[f64], g: &[f64]| -> f64 {
            let out = sir_rollout(&st, &rates(b.to_vec(), g.to_vec()), &mixing, &p, 0.7, h).unwrap();
            out.output().iter().zip(&weights).map(|(r, w)| w * r * r).sum()
        };
        let r = rates(beta.clone(), gamma.clone());
        let out = sir_rollout(&st, &r, &mixing, &p, 0.7, h).unwrap();
        let g_r: Vec<f64> = out.output().iter().zip(&weights).map(|(r, w)| 2.0 * w * r).collect();
        let (gb, gg) = out.backward(&g_r, &r, &mixing, &p).unwrap();
        let eps = 1e-6;
        for k in 0..n {
            let (mut bp, mut bm) = (beta.clone(), beta.clone());
            bp[k] += eps;
            bm[k] -= eps;
            let fd = (loss(&bp, &gamma) - loss(&bm, &gamma)) / (2.0 * eps);
            assert!((fd - gb[k]).abs() <= 1e-6 * fd.abs().max(1.0), "beta {k}: {fd} vs {}", gb[k]);
            let (mut gp, mut gm) = (gamma.clone(), gamma.clone());
            gp[k] += eps;
            gm[k] -= eps;
            let fd = (loss(&beta, &gp) - loss(&beta, &gm)) / (2.0 * eps);
            assert!((fd - gg[k]).abs() <= 1e-6 * fd.abs().max(1.0), "gamma {k}: {fd} vs {}", gg[k]);
        }
    }
}
