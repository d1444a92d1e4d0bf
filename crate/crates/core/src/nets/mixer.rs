use rand::Rng;

use crate::autodiff::{Axis, Bound, Graph, NodeId, ParamSet, RmsPropConfig, Tensor};
use crate::error::{shape_err, Error, Result};

/// How per-agent values are combined into the joint value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixerKind {
    /// `sum_i |k_i(s)| v_i + b(s)`.
    Linear,
    /// Two linear layers of the given width, weights made nonnegative with `abs`:
    /// `sum_j |w2_j(s)| (sum_i |w1_ij(s)| v_i + b1_j(s)) + b(s)`.
    Stacked { width: usize },
}

/// Shape and variant of a mixing head. Every hypernetwork is affine in the state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MixerLayout {
    pub kind: MixerKind,
    /// Adds a second weight hypernetwork for the entropy channel, sharing the bias.
    pub dual: bool,
    pub n_agents: usize,
    pub state_dim: usize,
}

#[derive(Clone, Debug)]
enum KindIds {
    Linear {
        k_w: NodeId,
        k_b: NodeId,
    },
    Stacked {
        w1_w: NodeId,
        w1_b: NodeId,
        b1_w: NodeId,
        b1_b: NodeId,
        w2_w: NodeId,
        w2_b: NodeId,
    },
}

#[derive(Clone, Debug)]
pub struct MixerIds {
    kind: KindIds,
    bias_w: NodeId,
    bias_b: NodeId,
    k2: Option<(NodeId, NodeId)>,
}

impl MixerLayout {
    pub fn linear(n_agents: usize, state_dim: usize) -> Self {
        Self {
            kind: MixerKind::Linear,
            dual: false,
            n_agents,
            state_dim,
        }
    }

    fn entries(&self) -> Vec<(&'static str, usize, usize)> {
        let (s, n) = (self.state_dim, self.n_agents);
        let mut e = match self.kind {
            MixerKind::Linear => vec![("k.w", s, n), ("k.b", 1, n)],
            MixerKind::Stacked { width } => vec![
                ("w1.w", s, n * width),
                ("w1.b", 1, n * width),
                ("b1.w", s, width),
                ("b1.b", 1, width),
                ("w2.w", s, width),
                ("w2.b", 1, width),
            ],
        };
        e.push(("b.w", s, 1));
        e.push(("b.b", 1, 1));
        if self.dual {
            e.push(("k2.w", s, n));
            e.push(("k2.b", 1, n));
        }
        e
    }

    pub fn init(&self, params: &mut ParamSet, prefix: &str, rng: &mut impl Rng) -> Result<()> {
        let bound = 1.0 / ((self.state_dim + 1) as f64).sqrt();
        for (name, r, c) in self.entries() {
            let data = (0..r * c).map(|_| rng.gen_range(-bound..=bound)).collect();
            params.insert(format!("{prefix}{name}"), Tensor::from_vec(r, c, data))?;
        }
        Ok(())
    }

    pub fn resolve(&self, params: &ParamSet, bound: &Bound, prefix: &str) -> Result<MixerIds> {
        let id = |name: &str| -> Result<NodeId> { Ok(bound.id(params.require(&format!("{prefix}{name}"))?)) };
        let kind = match self.kind {
            MixerKind::Linear => KindIds::Linear {
                k_w: id("k.w")?,
                k_b: id("k.b")?,
            },
            MixerKind::Stacked { .. } => KindIds::Stacked {
                w1_w: id("w1.w")?,
                w1_b: id("w1.b")?,
                b1_w: id("b1.w")?,
                b1_b: id("b1.b")?,
                w2_w: id("w2.w")?,
                w2_b: id("w2.b")?,
            },
        };
        let k2 = if self.dual {
            Some((id("k2.w")?, id("k2.b")?))
        } else {
            None
        };
        Ok(MixerIds {
            kind,
            bias_w: id("b.w")?,
            bias_b: id("b.b")?,
            k2,
        })
    }

    fn check(&self, g: &Graph, state: NodeId, values: NodeId) -> Result<usize> {
        let (sr, sc) = g.value(state).shape();
        let (vr, vc) = g.value(values).shape();
        if sc != self.state_dim || vc != self.n_agents || sr != vr {
            return shape_err(
                "mixing_forward",
                format!("state {:?}, values {:?} for {} agents", (sr, sc), (vr, vc), self.n_agents),
            );
        }
        Ok(sr)
    }

    /// `state: rows x state_dim`, `values: rows x n_agents` -> `rows x 1`.
    pub fn forward(&self, g: &mut Graph, ids: &MixerIds, state: NodeId, values: NodeId) -> Result<NodeId> {
        self.check(g, state, values)?;
        let weighted = match (&ids.kind, self.kind) {
            (KindIds::Linear { k_w, k_b }, MixerKind::Linear) => {
                let k = g.affine(state, *k_w, *k_b)?;
                let k = g.abs(k)?;
                let kv = g.mul(k, values)?;
                g.sum(kv, Axis::Cols)?
            }
            (
                KindIds::Stacked {
                    w1_w,
                    w1_b,
                    b1_w,
                    b1_b,
                    w2_w,
                    w2_b,
                },
                MixerKind::Stacked { width },
            ) => {
                let w1 = g.affine(state, *w1_w, *w1_b)?;
                let w1 = g.abs(w1)?;
                let mut hidden = g.affine(state, *b1_w, *b1_b)?;
                for i in 0..self.n_agents {
                    let wi = g.slice(w1, Axis::Cols, i * width, (i + 1) * width)?;
                    let vi = g.slice(values, Axis::Cols, i, i + 1)?;
                    let vi = g.broadcast_cols(vi, width)?;
                    let term = g.mul(wi, vi)?;
                    hidden = g.add(hidden, term)?;
                }
                let w2 = g.affine(state, *w2_w, *w2_b)?;
                let w2 = g.abs(w2)?;
                let out = g.mul(w2, hidden)?;
                g.sum(out, Axis::Cols)?
            }
            _ => return Err(Error::Config("mixer ids do not match layout".into())),
        };
        let bias = g.affine(state, ids.bias_w, ids.bias_b)?;
        g.add(weighted, bias)
    }

    /// Dual-channel mixing: `forward(state, q_values) + sum_i |k2_i(s)| entropy_values_i`.
    pub fn forward_dual(
        &self,
        g: &mut Graph,
        ids: &MixerIds,
        state: NodeId,
        q_values: NodeId,
        entropy_values: NodeId,
    ) -> Result<NodeId> {
        let Some((k2_w, k2_b)) = ids.k2 else {
            return Err(Error::Config("dual mixing requires a second weight hypernetwork".into()));
        };
        self.check(g, state, entropy_values)?;
        let main = self.forward(g, ids, state, q_values)?;
        let k2 = g.affine(state, k2_w, k2_b)?;
        let k2 = g.abs(k2)?;
        let kh = g.mul(k2, entropy_values)?;
        let ent = g.sum(kh, Axis::Cols)?;
        g.add(main, ent)
    }
}

/// A mixing head with its own parameters (entry names carry no prefix).
#[derive(Clone, Debug)]
pub struct MixingHead {
    pub layout: MixerLayout,
    pub params: ParamSet,
}

impl MixingHead {
    pub fn random(layout: MixerLayout, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamSet::new(0.0, RmsPropConfig::default());
        layout.init(&mut params, "", rng)?;
        Ok(Self { layout, params })
    }

    /// Copies the entries under `prefix` out of a larger parameter set.
    pub fn extract(layout: MixerLayout, source: &ParamSet, prefix: &str) -> Result<Self> {
        let mut params = ParamSet::new(0.0, RmsPropConfig::default());
        for (name, _, _) in layout.entries() {
            let value = source
                .get(&format!("{prefix}{name}"))
                .ok_or_else(|| Error::UnknownParam(format!("{prefix}{name}")))?;
            params.insert(name, value.clone())?;
        }
        Ok(Self { layout, params })
    }

    /// Joint value for a single state.
    pub fn mixing_forward(&self, state: &[f64], values: &[f64]) -> Result<f64> {
        let mut g = Graph::new();
        let bound = g.bind_frozen(&self.params);
        let ids = self.layout.resolve(&self.params, &bound, "")?;
        let s = g.constant(Tensor::row_vector(state.to_vec()));
        let v = g.constant(Tensor::row_vector(values.to_vec()));
        let out = self.layout.forward(&mut g, &ids, s, v)?;
        Ok(g.value(out).item())
    }

    pub fn mixing_forward_dual(&self, state: &[f64], q_values: &[f64], entropy_values: &[f64]) -> Result<f64> {
        let mut g = Graph::new();
        let bound = g.bind_frozen(&self.params);
        let ids = self.layout.resolve(&self.params, &bound, "")?;
        let s = g.constant(Tensor::row_vector(state.to_vec()));
        let q = g.constant(Tensor::row_vector(q_values.to_vec()));
        let h = g.constant(Tensor::row_vector(entropy_values.to_vec()));
        let out = self.layout.forward_dual(&mut g, &ids, s, q, h)?;
        Ok(g.value(out).item())
    }

    /// Overwrites weights so that `k(s) = 1` and `b(s) = 0` for every state (VDN summation).
    pub fn set_identity(&mut self) -> Result<()> {
        if self.layout.kind != MixerKind::Linear {
            return Err(Error::Config("identity weights are defined for the linear mixer".into()));
        }
        for (name, fill) in [("k.w", 0.0), ("k.b", 1.0), ("b.w", 0.0), ("b.b", 0.0)] {
            self.params.get_mut(name).expect("linear layout").fill(fill);
        }
        Ok(())
    }
}
