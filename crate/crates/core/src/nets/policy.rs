use rand::Rng;

use crate::autodiff::{Axis, Graph, NodeId, Tensor};
use crate::error::{shape_err, Error, Result};

pub const LOGIT_MIN: f64 = -5.0;
pub const LOGIT_MAX: f64 = 2.0;

/// Categorical policy over one agent's actions.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyDist {
    pub probs: Vec<f64>,
    /// Logits after clamping to `[LOGIT_MIN, LOGIT_MAX]`.
    pub logits: Vec<f64>,
    pub avail: Vec<bool>,
}

impl PolicyDist {
    /// Clamped masked softmax of raw logits.
    pub fn from_logits(raw: &[f64], avail: &[bool]) -> Result<Self> {
        if raw.len() != avail.len() {
            return shape_err("policy", format!("{} logits for {} mask entries", raw.len(), avail.len()));
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::row_vector(raw.to_vec()));
        let (p, z) = policy_probs(&mut g, x, mask_tensor(&[avail.to_vec()]))?;
        Ok(Self {
            probs: g.value(p).data().to_vec(),
            logits: g.value(z).data().to_vec(),
            avail: avail.to_vec(),
        })
    }

    /// Shannon entropy in nats over available actions.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.avail)
            .filter(|(&p, &a)| a && p > 0.0)
            .map(|(&p, _)| p * p.ln())
            .sum::<f64>()
    }

    /// Most probable available action; ties go to the lowest index.
    pub fn greedy(&self) -> usize {
        argmax_available(&self.probs, &self.avail)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        sample_categorical(&self.probs, &self.avail, rng)
    }
}

/// `E_pi[q - alpha * log pi]` over available actions, with `0 log 0 = 0`.
pub fn expected_soft_local_q(q_values: &[f64], dist: &PolicyDist, alpha: f64) -> f64 {
    q_values
        .iter()
        .zip(&dist.probs)
        .zip(&dist.avail)
        .filter(|(_, &a)| a)
        .map(|((&q, &p), _)| if p > 0.0 { p * (q - alpha * p.ln()) } else { 0.0 })
        .sum()
}

pub fn argmax_available(values: &[f64], avail: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for (i, (&v, &a)) in values.iter().zip(avail).enumerate() {
        if a && best.map_or(true, |b| v > values[b]) {
            best = Some(i);
        }
    }
    best.expect("at least one available action")
}

pub fn sample_categorical(probs: &[f64], avail: &[bool], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (i, (&p, &a)) in probs.iter().zip(avail).enumerate() {
        if !a {
            continue;
        }
        acc += p;
        last = Some(i);
        if u < acc {
            return i;
        }
    }
    last.expect("at least one available action")
}

/// `rows x n_actions` tensor of 0/1 availability.
pub fn mask_tensor(avail: &[Vec<bool>]) -> Tensor {
    let rows: Vec<Vec<f64>> = avail
        .iter()
        .map(|r| r.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect())
        .collect();
    Tensor::from_rows(&rows)
}

/// Clamp then masked softmax along each row. Returns `(probs, clamped logits)`.
pub fn policy_probs(g: &mut Graph, logits: NodeId, avail: Tensor) -> Result<(NodeId, NodeId)> {
    let z = g.clamp(logits, LOGIT_MIN, LOGIT_MAX)?;
    let p = g.masked_softmax(z, Axis::Cols, avail)?;
    Ok((p, z))
}

/// `log(p + (1 - mask))`: the log-probability on available entries, exactly 0 on masked ones.
pub fn masked_log(g: &mut Graph, probs: NodeId, avail: &Tensor) -> Result<NodeId> {
    if g.value(probs).shape() != avail.shape() {
        return Err(Error::Shape {
            op: "masked_log",
            detail: format!("{:?} vs {:?}", g.value(probs).shape(), avail.shape()),
        });
    }
    let floor = g.constant(avail.map(|m| 1.0 - m));
    let shifted = g.add(probs, floor)?;
    g.log(shifted)
}

/// Row-wise `sum_a p(a) (q(a) - alpha log p(a))` as a `rows x 1` node.
pub fn soft_expectation(g: &mut Graph, probs: NodeId, q: NodeId, log_probs: NodeId, alpha: f64) -> Result<NodeId> {
    let inner = if alpha == 0.0 {
        q
    } else {
        let scaled = g.scale(log_probs, alpha)?;
        g.sub(q, scaled)?
    };
    let weighted = g.mul(probs, inner)?;
    g.sum(weighted, Axis::Cols)
}

/// Row-wise entropy `-sum_a p(a) log p(a)` as a `rows x 1` node.
pub fn entropy_rows(g: &mut Graph, probs: NodeId, log_probs: NodeId) -> Result<NodeId> {
    let plogp = g.mul(probs, log_probs)?;
    let s = g.sum(plogp, Axis::Cols)?;
    g.neg(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamped_softmax_matches_analytic_values() {
        let d = PolicyDist::from_logits(&[10.0, -10.0, 0.0], &[true; 3]).unwrap();
        assert_eq!(d.logits, vec![2.0, -5.0, 0.0]);
        let z: f64 = [2.0f64, -5.0, 0.0].iter().map(|v| v.exp()).sum();
        let expected = [2.0f64.exp() / z, (-5.0f64).exp() / z, 1.0 / z];
        for (p, e) in d.probs.iter().zip(expected) {
            assert!((p - e).abs() < 1e-15);
        }
        assert!((d.probs[0] - 0.8801).abs() < 5e-5);
        assert!((d.probs[1] - 0.0008).abs() < 5e-5);
        assert!((d.probs[2] - 0.1191).abs() < 5e-5);
    }

    #[test]
    fn zero_logits_are_uniform_and_one_hot_mask_is_certain() {
        let d = PolicyDist::from_logits(&[0.0; 9], &[true; 9]).unwrap();
        assert!(d.probs.iter().all(|&p| (p - 1.0 / 9.0).abs() < 1e-15));
        let mut mask = vec![false; 4];
        mask[2] = true;
        let d = PolicyDist::from_logits(&[3.0, 1.0, -9.0, 0.0], &mask).unwrap();
        assert_eq!(d.probs, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(d.greedy(), 2);
    }

    #[test]
    fn all_masked_is_rejected() {
        assert!(matches!(
            PolicyDist::from_logits(&[0.0, 0.0], &[false, false]),
            Err(Error::AllMasked { .. })
        ));
    }

    #[test]
    fn probability_ratio_is_bounded() {
        let d = PolicyDist::from_logits(&[1e6, -1e6, 3.0], &[true; 3]).unwrap();
        assert!(d.probs[0] / d.probs[1] <= 7.0f64.exp() * (1.0 + 1e-12));
    }

    #[test]
    fn soft_expectation_special_cases() {
        let uniform = PolicyDist::from_logits(&[0.0; 9], &[true; 9]).unwrap();
        assert!((expected_soft_local_q(&[0.0; 9], &uniform, 1.0) - 9.0f64.ln()).abs() < 1e-12);
        assert!((9.0f64.ln() - 2.19722).abs() < 1e-5);

        let q = [1.0, 2.0, 3.0];
        let d = PolicyDist::from_logits(&[0.3, -0.1, 1.0], &[true; 3]).unwrap();
        let plain: f64 = q.iter().zip(&d.probs).map(|(q, p)| q * p).sum();
        assert!((expected_soft_local_q(&q, &d, 0.0) - plain).abs() < 1e-15);
        let with_entropy = expected_soft_local_q(&q, &d, 0.7);
        assert!((with_entropy - (plain + 0.7 * d.entropy())).abs() < 1e-12);

        let det = PolicyDist::from_logits(&[0.0, 5.0, 0.0], &[false, true, false]).unwrap();
        assert_eq!(expected_soft_local_q(&q, &det, 2.0), 2.0);
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let d = PolicyDist::from_logits(&[5.0, 7.0, -1.0], &[true; 3]).unwrap();
        assert_eq!(d.greedy(), 0);
    }
}
