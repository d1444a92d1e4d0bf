use crate::nets::PolicyDist;

/// Linear anneal from `start` to `end` over `anneal` episodes, constant afterwards.
pub fn epsilon_schedule(episode: usize, start: f64, end: f64, anneal: usize) -> f64 {
    if anneal == 0 || episode >= anneal {
        return end;
    }
    start + (end - start) * episode as f64 / anneal as f64
}

/// `(1 - eps) * pi(a) + eps / |available|` on available actions.
pub fn mcac_behavior_policy(dist: &PolicyDist, epsilon: f64) -> PolicyDist {
    let n_avail = dist.avail.iter().filter(|&&a| a).count() as f64;
    let probs = dist
        .probs
        .iter()
        .zip(&dist.avail)
        .map(|(&p, &a)| if a { (1.0 - epsilon) * p + epsilon / n_avail } else { 0.0 })
        .collect();
    PolicyDist {
        probs,
        logits: dist.logits.clone(),
        avail: dist.avail.clone(),
    }
}

/// Running mean and population variance of every raw reward seen (Welford).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RewardStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RewardStats {
    pub fn update(&mut self, r: f64) {
        self.count += 1;
        let delta = r - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (r - self.mean);
    }

    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }

    /// Adds `r` to the statistics, then returns `scale * (r - mean) / (std + 1e-6)`.
    pub fn standardize(&mut self, r: f64, scale: f64) -> f64 {
        self.update(r);
        if r == self.mean {
            return 0.0;
        }
        scale * (r - self.mean) / (self.std() + 1e-6)
    }
}

/// Standardizes when enabled, passes `r` through otherwise.
pub fn standardize_reward(stats: &mut RewardStats, r: f64, enabled: bool, scale: f64) -> f64 {
    if enabled {
        stats.standardize(r, scale)
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_endpoints_and_midpoint() {
        assert_eq!(epsilon_schedule(0, 0.5, 0.02, 20_000), 0.5);
        assert_eq!(epsilon_schedule(20_000, 0.5, 0.02, 20_000), 0.02);
        assert_eq!(epsilon_schedule(90_000, 0.5, 0.02, 20_000), 0.02);
        assert!((epsilon_schedule(10_000, 0.5, 0.02, 20_000) - 0.26).abs() < 1e-15);
    }

    #[test]
    fn behavior_policy_formula() {
        let d = PolicyDist {
            probs: vec![1.0, 0.0, 0.0],
            logits: vec![2.0, -5.0, -5.0],
            avail: vec![true; 3],
        };
        assert_eq!(mcac_behavior_policy(&d, 0.0).probs, d.probs);
        let u = mcac_behavior_policy(&d, 1.0);
        assert!(u.probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        let h = mcac_behavior_policy(&d, 0.5);
        let want = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        for (p, w) in h.probs.iter().zip(want) {
            assert!((p - w).abs() < 1e-15);
        }
        let masked = PolicyDist {
            probs: vec![1.0, 0.0, 0.0],
            logits: vec![0.0; 3],
            avail: vec![true, false, true],
        };
        let m = mcac_behavior_policy(&masked, 0.5);
        assert_eq!(m.probs, vec![0.75, 0.0, 0.25]);
    }

    #[test]
    fn standardization_examples() {
        let mut s = RewardStats::default();
        assert_eq!(s.standardize(5.0, 10.0), 0.0);
        let mut s = RewardStats::default();
        s.standardize(0.0, 10.0);
        let second = s.standardize(2.0, 10.0);
        assert!((second - 10.0 / (1.0 + 1e-6)).abs() < 1e-12);
        let mut s = RewardStats::default();
        assert_eq!(standardize_reward(&mut s, 3.5, false, 10.0), 3.5);
        assert_eq!(s.count, 0);
    }
}
