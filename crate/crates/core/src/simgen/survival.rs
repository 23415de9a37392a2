use crate::disease::BaselineHazard;
use rand::Rng;

/// A worker's follow-up window and cumulative exposure path.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureHistory {
    pub entry_age: f64,
    /// Administrative censoring age.
    pub censor_age: f64,
    /// `(age, x)`: cumulative exposure is `x` for ages strictly above `age`.
    /// Ages ascending; `x` in the hazard's exposure units.
    pub steps: Vec<(f64, f64)>,
}

/// Event time by inversion of the piecewise-constant PH cumulative hazard
/// `λ_k · exp(β X(t))`, left-truncated at entry. Returns `(exit_age, event)`.
pub fn sample_exit<R: Rng + ?Sized>(
    beta: f64,
    baseline: &BaselineHazard,
    history: &ExposureHistory,
    rng: &mut R,
) -> (f64, bool) {
    let target: f64 = -(1.0 - rng.random::<f64>()).ln();
    let mut knots: Vec<f64> = baseline
        .breaks
        .iter()
        .copied()
        .chain(history.steps.iter().map(|s| s.0))
        .filter(|&a| a > history.entry_age && a < history.censor_age)
        .collect();
    knots.push(history.censor_age);
    knots.sort_by(f64::total_cmp);
    knots.dedup();

    let mut acc = 0.0;
    let mut lo = history.entry_age;
    let mut step = history.steps.iter().take_while(|s| s.0 <= lo).count();
    for hi in knots {
        let x = if step == 0 { 0.0 } else { history.steps[step - 1].1 };
        let k = baseline
            .piece(0.5 * (lo + hi))
            .expect("follow-up inside baseline support");
        let rate = baseline.rates[k] * (beta * x).exp();
        let h = rate * (hi - lo);
        if acc + h >= target && rate > 0.0 {
            let t = lo + (target - acc) / rate;
            return (t.min(hi).max(lo.next_up()), true);
        }
        acc += h;
        lo = hi;
        while step < history.steps.len() && history.steps[step].0 <= lo {
            step += 1;
        }
    }
    (history.censor_age, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat(rate: f64) -> BaselineHazard {
        let mut b = BaselineHazard::default();
        b.rates = [rate; 4];
        b
    }

    #[test]
    fn exponential_special_case() {
        let b = flat(0.05);
        let h = ExposureHistory {
            entry_age: 0.0,
            censor_age: 104.0,
            steps: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let mut times = Vec::new();
        for _ in 0..n {
            let (t, e) = sample_exit(0.0, &b, &h, &mut rng);
            times.push(if e { t } else { f64::NAN });
        }
        // P(T > 104) = exp(-5.2) is small; compare to the truncated mean.
        let ev: Vec<f64> = times.iter().copied().filter(|t| t.is_finite()).collect();
        let mean = ev.iter().sum::<f64>() / ev.len() as f64;
        let lam: f64 = 0.05;
        let c = 104.0;
        let p = 1.0 - (-lam * c).exp();
        let exact = (1.0 / lam - (c + 1.0 / lam) * (-lam * c).exp()) / p;
        let sd = ev.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (ev.len() - 1) as f64;
        assert!((mean - exact).abs() < 3.0 * (sd / ev.len() as f64).sqrt(), "{mean} {exact}");
    }

    #[test]
    fn two_piece_survival_matches_closed_form() {
        // c1 on (0, 40], c2 above
        let mut b = BaselineHazard::default();
        b.rates = [0.01, 0.04, 0.04, 0.04];
        let h = ExposureHistory {
            entry_age: 0.0,
            censor_age: 104.0,
            steps: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_exit(0.0, &b, &h, &mut rng).0).collect();
        for t in [20.0, 40.0, 50.0, 70.0] {
            let exact = (-0.01 * f64::min(t, 40.0) - 0.04 * f64::max(0.0, t - 40.0)).exp();
            let emp = draws.iter().filter(|&&d| d > t).count() as f64 / n as f64;
            let se = (exact * (1.0 - exact) / n as f64).sqrt();
            assert!((emp - exact).abs() < 4.0 * se, "t={t}: {emp} vs {exact}");
        }
    }

    #[test]
    fn left_truncation_conditions_on_survival_to_entry() {
        let b = flat(0.02);
        let h = ExposureHistory {
            entry_age: 30.0,
            censor_age: 104.0,
            steps: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (t, _) = sample_exit(0.0, &b, &h, &mut rng);
            assert!(t > 30.0 && t <= 104.0);
        }
    }

    #[test]
    fn median_decreases_in_beta() {
        let b = BaselineHazard::default();
        let h = ExposureHistory {
            entry_age: 25.0,
            censor_age: 104.0,
            steps: (0..15).map(|j| (26.0 + j as f64, 0.3 * (j + 1) as f64)).collect(),
        };
        let mut last = f64::INFINITY;
        for beta in [0.0, 0.3, 0.6, 1.0, 2.0] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut t: Vec<f64> = (0..4001).map(|_| sample_exit(beta, &b, &h, &mut rng).0).collect();
            t.sort_by(f64::total_cmp);
            let med = t[2000];
            assert!(med < last, "beta {beta}: {med} !< {last}");
            last = med;
        }
    }

    #[test]
    fn exposure_steps_raise_hazard_after_accrual_only() {
        // With a huge step after age 50 every event must fall after 50 when
        // the baseline alone is negligible.
        let b = flat(1e-6);
        let h = ExposureHistory {
            entry_age: 20.0,
            censor_age: 104.0,
            steps: vec![(50.0, 20.0)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let (t, e) = sample_exit(1.0, &b, &h, &mut rng);
            assert!(e && t > 50.0 && t < 51.0, "{t}");
        }
    }
}
