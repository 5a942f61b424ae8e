//! Coordination game with one private and several public signals.
//!
//! A continuum of players picks an action `a_i` to minimise
//! `(1-r)(a_i - θ)^2 + r(a_i - Ā)^2`. A share `P` of players observes every
//! public signal `y_k = θ + η_k` (precision `α_k`) plus a private signal
//! `x_i = θ + ε_i` (precision `β`); the rest only see their private signal.
//! Informed players use a linear rule whose weights have a closed form;
//! [`fixed_point_oracle`] recovers the same weights by iterating best
//! responses, and is kept independent of the closed form on purpose.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Primitives of the game.
///
/// `beta_priv` is the precision of the private signal (renamed so it does not
/// clash with the regression and transmission-rate coefficients elsewhere).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamePrimitives {
    /// Strategic complementarity; 0 is the purely private action.
    pub r: f64,
    pub beta_priv: f64,
    /// Public-signal precisions, one per source (local, national, foreign, ...).
    pub alphas: Vec<f64>,
    /// Share of players that receive all public signals.
    pub informed_share: f64,
}

impl GamePrimitives {
    pub fn new(r: f64, beta_priv: f64, alphas: Vec<f64>, informed_share: f64) -> Self {
        Self {
            r,
            beta_priv,
            alphas,
            informed_share,
        }
    }

    pub fn with_informed_share(&self, p: f64) -> Self {
        Self {
            informed_share: p,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r.is_finite() && (0.0..=1.0).contains(&self.r)) {
            return param(format!("r must lie in [0, 1), got {}", self.r));
        }
        if !(self.beta_priv.is_finite() && self.beta_priv > 0.0) {
            return param(format!("beta_priv must be positive, got {}", self.beta_priv));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return param(format!("public precisions must be finite and >= 0, got {a}"));
        }
        if !(0.0..=1.0).contains(&self.informed_share) {
            return param(format!(
                "informed share must lie in [0, 1], got {}",
                self.informed_share
            ));
        }
        if self.r * self.informed_share >= 1.0 {
            return Err(Error::Domain(format!(
                "r*P = {} >= 1 makes the equilibrium denominator degenerate",
                self.r * self.informed_share
            )));
        }
        Ok(())
    }

    /// `(1 - rP)β`, the effective private precision in equilibrium.
    fn discounted_private(&self) -> f64 {
        (1.0 - self.r * self.informed_share) * self.beta_priv
    }
}

/// Realised state and signals for one informed player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRealization {
    pub theta: f64,
    pub y: Vec<f64>,
    pub x: f64,
}

/// Weights of the informed players' linear equilibrium strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumWeights {
    pub kappa_y: Vec<f64>,
    pub kappa_x: f64,
}

impl EquilibriumWeights {
    pub fn total(&self) -> f64 {
        self.kappa_x + self.kappa_y.iter().sum::<f64>()
    }

    fn max_abs_diff(&self, other: &Self) -> f64 {
        self.kappa_y
            .iter()
            .zip(&other.kappa_y)
            .map(|(a, b)| (a - b).abs())
            .fold((self.kappa_x - other.kappa_x).abs(), f64::max)
    }
}

/// Closed-form equilibrium weights.
///
/// `κ_y[k] = α_k / ((1-rP)β + Σα)` and `κ_x = (1-rP)β / ((1-rP)β + Σα)`.
pub fn equilibrium_weights(prim: &GamePrimitives) -> Result<EquilibriumWeights> {
    prim.validate()?;
    let private = prim.discounted_private();
    let denom = private + prim.alphas.iter().sum::<f64>();
    Ok(EquilibriumWeights {
        kappa_y: prim.alphas.iter().map(|a| a / denom).collect(),
        kappa_x: private / denom,
    })
}

/// Action of an informed player: `Σ κ_y[k]·y_k + κ_x·x`.
pub fn equilibrium_action(w: &EquilibriumWeights, s: &SignalRealization) -> Result<f64> {
    if w.kappa_y.len() != s.y.len() {
        return param(format!(
            "{} public weights but {} public draws",
            w.kappa_y.len(),
            s.y.len()
        ));
    }
    Ok(w.kappa_y.iter().zip(&s.y).map(|(k, y)| k * y).sum::<f64>() + w.kappa_x * s.x)
}

/// Players without public information act on their private draw alone.
pub fn private_only_action(s: &SignalRealization) -> f64 {
    s.x
}

/// Average action over the continuum for a given state and public draws.
///
/// Private noise integrates out, so informed players contribute
/// `Σ κ_y y_k + κ_x θ` and uninformed ones contribute `θ`.
pub fn expected_average_action(prim: &GamePrimitives, theta: f64, y: &[f64]) -> Result<f64> {
    let w = equilibrium_weights(prim)?;
    if y.len() != w.kappa_y.len() {
        return param(format!(
            "{} public precisions but {} public draws",
            w.kappa_y.len(),
            y.len()
        ));
    }
    let informed = w.kappa_y.iter().zip(y).map(|(k, v)| k * v).sum::<f64>() + w.kappa_x * theta;
    let p = prim.informed_share;
    Ok(p * informed + (1.0 - p) * theta)
}

/// Result of the best-response iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub weights: EquilibriumWeights,
    pub iterations: usize,
}

/// Solve for the linear equilibrium by iterating best responses.
///
/// Given conjectured informed-player coefficients `(c_y, c_x)`, the average
/// action is `P(Σ c_y y + c_x θ) + (1-P)θ`. An informed player's posterior
/// mean of θ is `Σ w_k y_k + w_x x` with precision weights `w`, so the best
/// response `(1-r)E[θ] + rE[Ā]` has coefficients
/// `c_y' = m·w_y + rP·c_y`, `c_x' = m·w_x` with `m = 1 - rP(1 - c_x)`.
/// Iteration starts at the posterior weights and stops once no coefficient
/// moves by more than `tol`.
pub fn fixed_point_oracle(
    prim: &GamePrimitives,
    tol: f64,
    max_iter: usize,
) -> Result<OracleSolution> {
    prim.validate()?;
    if !(tol > 0.0) {
        return param(format!("tolerance must be positive, got {tol}"));
    }
    let precision = prim.beta_priv + prim.alphas.iter().sum::<f64>();
    let post_y: Vec<f64> = prim.alphas.iter().map(|a| a / precision).collect();
    let post_x = prim.beta_priv / precision;
    let rp = prim.r * prim.informed_share;

    let mut current = EquilibriumWeights {
        kappa_y: post_y.clone(),
        kappa_x: post_x,
    };
    let mut change = f64::INFINITY;
    for iter in 1..=max_iter {
        let m = 1.0 - rp * (1.0 - current.kappa_x);
        let next = EquilibriumWeights {
            kappa_y: post_y
                .iter()
                .zip(&current.kappa_y)
                .map(|(w, c)| m * w + rp * c)
                .collect(),
            kappa_x: m * post_x,
        };
        change = next.max_abs_diff(&current);
        current = next;
        if change < tol {
            return Ok(OracleSolution {
                weights: current,
                iterations: iter,
            });
        }
    }
    let mut last_iterate = current.kappa_y;
    last_iterate.push(current.kappa_x);
    Err(Error::Convergence {
        iterations: max_iter,
        last_change: change,
        last_iterate,
    })
}

/// Population-average protective action when a share `coverage` is informed.
///
/// Informed players play the equilibrium rule evaluated at the realised public
/// draws `public` (their private noise averages out to θ); uninformed players
/// stay anchored at the pre-campaign state `theta_pre`.
pub fn behavior_response(
    prim_template: &GamePrimitives,
    coverage: f64,
    theta: f64,
    theta_pre: f64,
    public: &[f64],
) -> Result<f64> {
    if !(0.0..=1.0).contains(&coverage) {
        return param(format!("coverage must lie in [0, 1], got {coverage}"));
    }
    let prim = prim_template.with_informed_share(coverage);
    let w = equilibrium_weights(&prim)?;
    if public.len() != w.kappa_y.len() {
        return param(format!(
            "{} public precisions but {} public draws",
            w.kappa_y.len(),
            public.len()
        ));
    }
    let informed_mean =
        w.kappa_y.iter().zip(public).map(|(k, y)| k * y).sum::<f64>() + w.kappa_x * theta;
    Ok(coverage * informed_mean + (1.0 - coverage) * theta_pre)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn prim(r: f64, beta: f64, alphas: &[f64], p: f64) -> GamePrimitives {
        GamePrimitives::new(r, beta, alphas.to_vec(), p)
    }

    #[test]
    fn symmetric_precisions_without_complementarity() {
        for p in [0.0, 0.3, 1.0] {
            let w = equilibrium_weights(&prim(0.0, 1.0, &[1.0], p)).unwrap();
            assert_eq!(w.kappa_y, vec![0.5]);
            assert_eq!(w.kappa_x, 0.5);
        }
    }

    #[test]
    fn no_informed_players_gives_posterior_weights() {
        let w = equilibrium_weights(&prim(0.5, 1.0, &[2.0, 1.0], 0.0)).unwrap();
        assert_abs_diff_eq!(w.kappa_y[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w.kappa_y[1], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w.kappa_x, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn worked_example_full_information() {
        // denominator (1 - 0.5)·1 + 3 = 3.5
        let p = prim(0.5, 1.0, &[2.0, 1.0], 1.0);
        let w = equilibrium_weights(&p).unwrap();
        assert_abs_diff_eq!(w.kappa_y[0], 2.0 / 3.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w.kappa_y[1], 1.0 / 3.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w.kappa_x, 0.5 / 3.5, epsilon = 1e-15);
        let oracle = fixed_point_oracle(&p, 1e-14, 10_000).unwrap();
        assert!(oracle.weights.max_abs_diff(&w) < 1e-12);
    }

    #[test]
    fn degenerate_denominator_is_a_domain_error() {
        let err = equilibrium_weights(&prim(1.0, 1.0, &[1.0], 1.0)).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert!(equilibrium_weights(&prim(-0.1, 1.0, &[1.0], 0.5)).is_err());
        assert!(equilibrium_weights(&prim(0.5, 0.0, &[1.0], 0.5)).is_err());
        assert!(equilibrium_weights(&prim(0.5, 1.0, &[-1.0], 0.5)).is_err());
    }

    #[test]
    fn action_examples() {
        let w = EquilibriumWeights {
            kappa_y: vec![0.5],
            kappa_x: 0.5,
        };
        let s = SignalRealization {
            theta: 0.0,
            y: vec![2.0],
            x: 4.0,
        };
        assert_eq!(equilibrium_action(&w, &s).unwrap(), 3.0);

        let w = equilibrium_weights(&prim(0.5, 1.0, &[2.0, 1.0], 1.0)).unwrap();
        let s = SignalRealization {
            theta: 0.0,
            y: vec![1.0, -1.0],
            x: 0.5,
        };
        let expected = 2.0 / 3.5 - 1.0 / 3.5 + 0.5 / 3.5 * 0.5;
        assert_abs_diff_eq!(equilibrium_action(&w, &s).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.357143, epsilon = 1e-6);

        let all_equal = SignalRealization {
            theta: 1.3,
            y: vec![1.3, 1.3],
            x: 1.3,
        };
        assert_abs_diff_eq!(equilibrium_action(&w, &all_equal).unwrap(), 1.3, epsilon = 1e-15);

        let short = SignalRealization {
            theta: 0.0,
            y: vec![1.0],
            x: 0.0,
        };
        assert!(equilibrium_action(&w, &short).is_err());
    }

    #[test]
    fn private_only_players_echo_their_draw() {
        for x in [0.0, 1.7, -2.5] {
            let s = SignalRealization {
                theta: 0.3,
                y: vec![],
                x,
            };
            assert_eq!(private_only_action(&s), x);
        }
    }

    #[test]
    fn average_action_examples() {
        let p0 = prim(0.5, 1.0, &[2.0, 1.0], 0.0);
        assert_abs_diff_eq!(
            expected_average_action(&p0, 0.7, &[3.0, -4.0]).unwrap(),
            0.7,
            epsilon = 1e-15
        );
        let p = prim(0.3, 2.0, &[2.0, 1.0], 0.6);
        assert_abs_diff_eq!(
            expected_average_action(&p, -1.1, &[-1.1, -1.1]).unwrap(),
            -1.1,
            epsilon = 1e-15
        );
        let p1 = prim(0.5, 1.0, &[2.0, 1.0], 1.0);
        assert_abs_diff_eq!(
            expected_average_action(&p1, 0.0, &[1.0, -1.0]).unwrap(),
            1.0 / 3.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn oracle_needs_one_step_without_complementarity() {
        let sol = fixed_point_oracle(&prim(0.0, 1.5, &[2.0, 0.5, 0.0], 0.8), 1e-12, 10).unwrap();
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn oracle_near_unit_contraction() {
        let hi = fixed_point_oracle(&prim(0.99, 1.0, &[1.0, 0.5], 1.0), 1e-13, 100_000).unwrap();
        let mid = fixed_point_oracle(&prim(0.5, 1.0, &[1.0, 0.5], 1.0), 1e-13, 100_000).unwrap();
        assert!(hi.weights.kappa_x < mid.weights.kappa_x);
        assert!(hi.weights.kappa_x < 0.01);
    }

    #[test]
    fn oracle_reports_last_iterate_on_exhaustion() {
        match fixed_point_oracle(&prim(0.99, 1.0, &[1.0], 1.0), 1e-15, 3) {
            Err(Error::Convergence {
                iterations,
                last_iterate,
                ..
            }) => {
                assert_eq!(iterations, 3);
                assert_eq!(last_iterate.len(), 2);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn behavior_response_examples() {
        let template = prim(0.5, 1.0, &[2.0, 1.0], 0.0);
        assert_eq!(
            behavior_response(&template, 0.0, 1.0, -0.4, &[5.0, 5.0]).unwrap(),
            -0.4
        );
        assert_abs_diff_eq!(
            behavior_response(&template, 1.0, 0.8, 0.0, &[0.8, 0.8]).unwrap(),
            0.8,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            behavior_response(&template, 0.5, 1.0, 0.0, &[1.0, 1.0]).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        assert!(behavior_response(&template, 1.2, 1.0, 0.0, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn behavior_response_matches_agent_simulation() {
        // 10^5 agents: informed ones draw private signals, the rest sit at θ_pre.
        let template = prim(0.6, 1.0, &[2.0, 1.0], 0.0);
        let (theta, theta_pre, coverage) = (1.0, 0.0, 0.5);
        let public = [theta, theta];
        let w = equilibrium_weights(&template.with_informed_share(coverage)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let n = 100_000;
        let mut total = 0.0;
        for _ in 0..n {
            if rng.random::<f64>() < coverage {
                let s = SignalRealization {
                    theta,
                    y: public.to_vec(),
                    x: theta + noise.sample(&mut rng),
                };
                total += equilibrium_action(&w, &s).unwrap();
            } else {
                total += theta_pre;
            }
        }
        let simulated = total / n as f64;
        let analytic = behavior_response(&template, coverage, theta, theta_pre, &public).unwrap();
        assert_abs_diff_eq!(analytic, 0.5, epsilon = 1e-15);
        assert!((simulated - analytic).abs() < 0.01, "{simulated} vs {analytic}");
    }

    fn primitives() -> impl Strategy<Value = GamePrimitives> {
        (
            0.0..0.95f64,
            0.05..5.0f64,
            prop::collection::vec(0.0..5.0f64, 1..=3),
            0.0..=1.0f64,
        )
            .prop_map(|(r, b, a, p)| GamePrimitives::new(r, b, a, p))
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(p in primitives()) {
            let w = equilibrium_weights(&p).unwrap();
            prop_assert!((w.total() - 1.0).abs() < 1e-14);
            prop_assert!(w.kappa_x >= 0.0 && w.kappa_y.iter().all(|k| *k >= 0.0));
        }

        #[test]
        fn closed_form_matches_oracle(p in primitives()) {
            let w = equilibrium_weights(&p).unwrap();
            let o = fixed_point_oracle(&p, 1e-13, 1_000_000).unwrap();
            prop_assert!(o.weights.max_abs_diff(&w) < 1e-10);
        }

        #[test]
        fn public_weights_rise_with_informed_share(p in primitives(), dp in 0.01..0.5f64) {
            prop_assume!(p.r > 0.0 && p.informed_share + dp <= 1.0);
            let lo = equilibrium_weights(&p).unwrap();
            let hi = equilibrium_weights(&p.with_informed_share(p.informed_share + dp)).unwrap();
            for ((a, l), h) in p.alphas.iter().zip(&lo.kappa_y).zip(&hi.kappa_y) {
                if *a > 0.0 {
                    prop_assert!(h > l);
                }
            }
        }
    }

    #[test]
    fn foreign_signal_without_information_gets_no_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = prim(
                rng.random_range(0.0..0.95),
                rng.random_range(0.1..3.0),
                &[rng.random_range(0.1..3.0), rng.random_range(0.1..3.0), 0.0],
                rng.random_range(0.0..=1.0),
            );
            let w = equilibrium_weights(&p).unwrap();
            assert_eq!(w.kappa_y[2], 0.0);
            assert_eq!(p.alphas[0] > p.alphas[1], w.kappa_y[0] > w.kappa_y[1]);
        }
    }
}
