use super::graph::{Bound, Graph};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// RMSprop smoothing constant and denominator floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsPropConfig {
    pub rho: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self { rho: 0.99, eps: 1e-5 }
    }
}

/// Named learnable arrays with gradients and RMSprop running averages.
///
/// Entries keep insertion order; that order is also the order of node ids
/// returned by [`Graph::bind`].
#[derive(Clone, Debug)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    sq_avg: Vec<Tensor>,
    pub learning_rate: f64,
    pub rms: RmsPropConfig,
}

impl ParamSet {
    pub fn new(learning_rate: f64, rms: RmsPropConfig) -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            sq_avg: Vec::new(),
            learning_rate,
            rms,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::ParamMismatch(format!("duplicate entry `{name}`")));
        }
        let (r, c) = value.shape();
        self.names.push(name);
        self.values.push(value);
        self.grads.push(Tensor::zeros(r, c));
        self.sq_avg.push(Tensor::zeros(r, c));
        Ok(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.values.iter()
    }

    pub fn value(&self, index: usize) -> &Tensor {
        &self.values[index]
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.values[index]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.values[i])
    }

    pub fn grad(&self, index: usize) -> &Tensor {
        &self.grads[index]
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn sq_avg(&self, index: usize) -> &Tensor {
        &self.sq_avg[index]
    }

    /// Total number of scalars across all entries.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// Adds the gradients that `graph` accumulated on the leaves in `bound`.
    pub fn accumulate_grads(&mut self, graph: &Graph, bound: &Bound) {
        for (i, &id) in bound.ids().iter().enumerate() {
            let node = graph.node(id);
            if node.requires_grad {
                self.grads[i].add_assign(&graph.grad(id));
            }
        }
    }

    pub fn set_grads(&mut self, grads: Vec<Tensor>) -> Result<()> {
        if grads.len() != self.len() || grads.iter().zip(&self.values).any(|(g, v)| g.shape() != v.shape()) {
            return Err(Error::ParamMismatch("gradient list does not match entries".into()));
        }
        self.grads = grads;
        Ok(())
    }

    /// One RMSprop step over every entry. A non-finite gradient anywhere aborts
    /// the whole step and leaves values and statistics untouched.
    pub fn rmsprop_step(&mut self, lr: f64) -> Result<()> {
        if let Some(i) = self.grads.iter().position(|g| !g.is_finite()) {
            log::warn!("rmsprop step skipped: non-finite gradient in `{}`", self.names[i]);
            return Err(Error::NonFiniteGradient {
                name: self.names[i].clone(),
            });
        }
        let RmsPropConfig { rho, eps } = self.rms;
        for ((value, grad), sq) in self.values.iter_mut().zip(&self.grads).zip(&mut self.sq_avg) {
            for ((v, &g), s) in value.data_mut().iter_mut().zip(grad.data()).zip(sq.data_mut()) {
                *s = rho * *s + (1.0 - rho) * g * g;
                *v -= lr * g / (s.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Step with the set's own learning rate.
    pub fn step(&mut self) -> Result<()> {
        self.rmsprop_step(self.learning_rate)
    }

    /// `self <- smoothing * online + (1 - smoothing) * self`, entrywise.
    pub fn polyak_update(&mut self, online: &ParamSet, smoothing: f64) -> Result<()> {
        if !(smoothing > 0.0 && smoothing <= 1.0) {
            return Err(Error::Config(format!("smoothing {smoothing} outside (0, 1]")));
        }
        self.check_compatible(online)?;
        for (t, o) in self.values.iter_mut().zip(&online.values) {
            if smoothing == 1.0 {
                t.data_mut().copy_from_slice(o.data());
                continue;
            }
            for (tv, &ov) in t.data_mut().iter_mut().zip(o.data()) {
                *tv = smoothing * ov + (1.0 - smoothing) * *tv;
            }
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::ParamMismatch(format!(
                "entry names differ ({} vs {} entries)",
                self.len(),
                other.len()
            )));
        }
        if let Some(i) = (0..self.len()).find(|&i| self.values[i].shape() != other.values[i].shape()) {
            return Err(Error::ParamMismatch(format!(
                "`{}` has shape {:?} vs {:?}",
                self.names[i],
                self.values[i].shape(),
                other.values[i].shape()
            )));
        }
        Ok(())
    }

    /// Values only; gradients and optimizer state start fresh.
    pub fn snapshot(&self) -> ParamSet {
        let mut out = ParamSet::new(self.learning_rate, self.rms);
        for (n, v) in self.names.iter().zip(&self.values) {
            out.insert(n.clone(), v.clone()).expect("names are unique");
        }
        out
    }

    /// Euclidean distance between the flattened values of two compatible sets.
    pub fn distance(&self, other: &ParamSet) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            .sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamSet {
        let mut p = ParamSet::new(5e-4, RmsPropConfig::default());
        p.insert("w", Tensor::scalar(value)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_values_unchanged() {
        let mut p = single(0.3);
        p.rmsprop_step(0.1).unwrap();
        assert_eq!(p.value(0).item(), 0.3);
    }

    #[test]
    fn steady_state_step_is_lr_times_sign() {
        let mut p = single(0.0);
        let g = -2.5;
        p.sq_avg[0] = Tensor::scalar(g * g);
        p.grads[0] = Tensor::scalar(g);
        p.rmsprop_step(1e-3).unwrap();
        let step = p.value(0).item();
        assert!((step - 1e-3).abs() < 1e-8, "step {step}");
    }

    #[test]
    fn identical_sets_stay_identical() {
        let mut a = single(1.0);
        let mut b = single(1.0);
        for k in 0..10 {
            let g = Tensor::scalar((k as f64).sin());
            a.set_grads(vec![g.clone()]).unwrap();
            b.set_grads(vec![g]).unwrap();
            a.rmsprop_step(0.01).unwrap();
            b.rmsprop_step(0.01).unwrap();
        }
        assert_eq!(a.value(0).item().to_bits(), b.value(0).item().to_bits());
    }

    #[test]
    fn non_finite_gradient_aborts_whole_step() {
        let mut p = ParamSet::new(0.1, RmsPropConfig::default());
        p.insert("a", Tensor::scalar(1.0)).unwrap();
        p.insert("b", Tensor::scalar(1.0)).unwrap();
        p.set_grads(vec![Tensor::scalar(1.0), Tensor::scalar(f64::NAN)]).unwrap();
        assert!(matches!(p.rmsprop_step(0.1), Err(Error::NonFiniteGradient { .. })));
        assert_eq!(p.value(0).item(), 1.0);
        assert_eq!(p.sq_avg(0).item(), 0.0);
    }

    #[test]
    fn polyak_copy_contraction_and_fixed_point() {
        let online = single(1.0);
        let mut target = single(0.0);
        target.polyak_update(&online, 0.005).unwrap();
        let d1 = target.distance(&online).unwrap();
        target.polyak_update(&online, 0.005).unwrap();
        let d2 = target.distance(&online).unwrap();
        assert!((d2 / d1 - 0.995).abs() < 1e-12);

        target.polyak_update(&online, 1.0).unwrap();
        assert_eq!(target.value(0), online.value(0));

        let before = target.value(0).clone();
        target.polyak_update(&online, 0.3).unwrap();
        assert_eq!(target.value(0), &before);
    }

    #[test]
    fn polyak_rejects_mismatch() {
        let mut a = single(0.0);
        let mut b = ParamSet::new(0.1, RmsPropConfig::default());
        b.insert("w", Tensor::zeros(1, 2)).unwrap();
        assert!(a.polyak_update(&b, 0.5).is_err());
        assert!(a.polyak_update(&single(1.0), 0.0).is_err());
    }
}
