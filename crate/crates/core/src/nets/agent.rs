use rand::Rng;

use crate::autodiff::{Axis, Bound, Graph, NodeId, ParamSet, Tensor};
use crate::error::{shape_err, Result};

pub const DEFAULT_HIDDEN_DIM: usize = 64;

/// Shape of the per-agent recurrent network shared by all agents.
///
/// Input layout per agent and timestep: observation, one-hot of the agent's
/// previous action (zeros at t = 0), one-hot agent id.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentNetSpec {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub n_agents: usize,
    pub hidden_dim: usize,
}

impl AgentNetSpec {
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_actions + self.n_agents
    }

    /// Builds one input row for `agent`.
    pub fn input_row(&self, agent: usize, obs: &[f64], last_action: Option<usize>) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim || agent >= self.n_agents {
            return shape_err(
                "agent_input",
                format!("obs len {} (want {}), agent {agent} of {}", obs.len(), self.obs_dim, self.n_agents),
            );
        }
        let mut row = Vec::with_capacity(self.input_dim());
        row.extend_from_slice(obs);
        let mut act = vec![0.0; self.n_actions];
        if let Some(a) = last_action {
            act[a] = 1.0;
        }
        row.extend(act);
        let mut id = vec![0.0; self.n_agents];
        id[agent] = 1.0;
        row.extend(id);
        Ok(row)
    }

    /// Stacks input rows for every agent into an `n_agents x input_dim` tensor.
    pub fn joint_inputs(&self, obs: &[Vec<f64>], last_actions: &[Option<usize>]) -> Result<Tensor> {
        let rows = (0..self.n_agents)
            .map(|i| self.input_row(i, &obs[i], last_actions[i]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::from_rows(&rows))
    }
}

/// Per-agent hidden vectors, `n_agents x hidden_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h: Tensor,
}

impl RecurrentState {
    pub fn zeros(spec: &AgentNetSpec) -> Self {
        Self {
            h: Tensor::zeros(spec.n_agents, spec.hidden_dim),
        }
    }
}

/// Resolved node ids of an agent network's weights inside one graph.
#[derive(Clone, Copy, Debug)]
pub struct AgentNetIds {
    fc1_w: NodeId,
    fc1_b: NodeId,
    gru_wx: NodeId,
    gru_wh: NodeId,
    gru_bx: NodeId,
    gru_bh: NodeId,
    fc2_w: NodeId,
    fc2_b: NodeId,
}

const ENTRIES: [&str; 8] = [
    "fc1.w", "fc1.b", "gru.wx", "gru.wh", "gru.bx", "gru.bh", "fc2.w", "fc2.b",
];

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect())
}

/// Adds the MLP -> GRU -> MLP weights under `prefix`.
pub fn init_agent_net(params: &mut ParamSet, prefix: &str, spec: &AgentNetSpec, rng: &mut impl Rng) -> Result<()> {
    let (i, h, a) = (spec.input_dim(), spec.hidden_dim, spec.n_actions);
    let shapes = [(i, h, i), (1, h, i), (h, 3 * h, h), (h, 3 * h, h), (1, 3 * h, h), (1, 3 * h, h), (h, a, h), (1, a, h)];
    for (name, (r, c, fan_in)) in ENTRIES.iter().zip(shapes) {
        params.insert(format!("{prefix}{name}"), uniform(rng, r, c, fan_in))?;
    }
    Ok(())
}

impl AgentNetIds {
    pub fn resolve(params: &ParamSet, bound: &Bound, prefix: &str) -> Result<Self> {
        let id = |name: &str| -> Result<NodeId> { Ok(bound.id(params.require(&format!("{prefix}{name}"))?)) };
        Ok(Self {
            fc1_w: id(ENTRIES[0])?,
            fc1_b: id(ENTRIES[1])?,
            gru_wx: id(ENTRIES[2])?,
            gru_wh: id(ENTRIES[3])?,
            gru_bx: id(ENTRIES[4])?,
            gru_bh: id(ENTRIES[5])?,
            fc2_w: id(ENTRIES[6])?,
            fc2_b: id(ENTRIES[7])?,
        })
    }

    /// One recurrent step for a block of rows: returns `(outputs [rows x n_actions], new hidden)`.
    ///
    /// Gate columns are ordered update, reset, candidate.
    pub fn step(&self, g: &mut Graph, input: NodeId, hidden: NodeId) -> Result<(NodeId, NodeId)> {
        let hdim = g.value(hidden).cols();
        if g.value(input).cols() != g.value(self.fc1_w).rows() {
            return shape_err(
                "agent_step",
                format!("input width {} vs {}", g.value(input).cols(), g.value(self.fc1_w).rows()),
            );
        }
        if hdim != g.value(self.gru_wh).rows() || g.value(input).rows() != g.value(hidden).rows() {
            return shape_err("agent_step", format!("hidden {:?}", g.value(hidden).shape()));
        }
        let x = g.affine(input, self.fc1_w, self.fc1_b)?;
        let x = g.relu(x)?;
        let xw = g.affine(x, self.gru_wx, self.gru_bx)?;
        let hw = g.affine(hidden, self.gru_wh, self.gru_bh)?;
        let xz = g.slice(xw, Axis::Cols, 0, hdim)?;
        let xr = g.slice(xw, Axis::Cols, hdim, 2 * hdim)?;
        let xn = g.slice(xw, Axis::Cols, 2 * hdim, 3 * hdim)?;
        let hz = g.slice(hw, Axis::Cols, 0, hdim)?;
        let hr = g.slice(hw, Axis::Cols, hdim, 2 * hdim)?;
        let hn = g.slice(hw, Axis::Cols, 2 * hdim, 3 * hdim)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r)?;
        let rh = g.mul(r, hn)?;
        let n = g.add(xn, rh)?;
        let n = g.tanh(n)?;
        // h' = n + z * (h - n)
        let d = g.sub(hidden, n)?;
        let zd = g.mul(z, d)?;
        let h_new = g.add(n, zd)?;
        let out = g.affine(h_new, self.fc2_w, self.fc2_b)?;
        Ok((out, h_new))
    }
}
