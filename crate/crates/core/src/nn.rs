//! Named parameter groups and small MLP building blocks.
//!
//! Parameters live outside any differentiation graph; each forward pass
//! binds them as fresh leaves on the current graph and gradients are read
//! back per group after `backward`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::graph::{Graph, TensorError, TensorId};

#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupId(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    groups: Vec<ParamGroup>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> GroupId {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "parameter group shape/data mismatch");
        self.groups.push(ParamGroup { name: name.into(), shape, data });
        GroupId(self.groups.len() - 1)
    }

    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f64,
        rng: &mut R,
    ) -> GroupId {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.add(name, shape, data)
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f64) -> GroupId {
        let numel: usize = shape.iter().product();
        self.add(name, shape, vec![value; numel])
    }

    pub fn get(&self, id: GroupId) -> &ParamGroup {
        &self.groups[id.0]
    }

    pub fn get_mut(&mut self, id: GroupId) -> &mut ParamGroup {
        &mut self.groups[id.0]
    }

    pub fn find(&self, name: &str) -> Option<GroupId> {
        self.groups.iter().position(|g| g.name == name).map(GroupId)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> impl Iterator<Item = &ParamGroup> {
        self.groups.iter()
    }

    pub fn groups_mut(&mut self) -> impl Iterator<Item = &mut ParamGroup> {
        self.groups.iter_mut()
    }

    pub fn total_params(&self) -> usize {
        self.groups.iter().map(|g| g.data.len()).sum()
    }
}

/// Per-forward-pass map from parameter groups to graph leaves.
pub struct Binder {
    ids: Vec<Option<TensorId>>,
}

impl Binder {
    pub fn new(store: &ParamStore) -> Self {
        Self { ids: vec![None; store.len()] }
    }

    pub fn bind(
        &mut self,
        g: &mut Graph,
        store: &ParamStore,
        gid: GroupId,
    ) -> Result<TensorId, TensorError> {
        if let Some(id) = self.ids[gid.0] {
            return Ok(id);
        }
        let group = store.get(gid);
        let id = g.leaf(group.data.clone(), group.shape.clone(), true)?;
        self.ids[gid.0] = Some(id);
        Ok(id)
    }

    /// Collects gradients for every bound group after `backward`.
    pub fn collect_grads(&self, g: &Graph) -> Vec<Option<Vec<f64>>> {
        self.ids
            .iter()
            .map(|id| id.and_then(|id| g.grad(id).map(|s| s.to_vec())))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: GroupId,
    pub b: GroupId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let w = store.add_normal(format!("{prefix}.w"), vec![out_dim, in_dim], std, rng);
        let b = store.add_const(format!("{prefix}.b"), vec![out_dim], 0.0);
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        store: &ParamStore,
        x: TensorId,
    ) -> Result<TensorId, TensorError> {
        let w = binder.bind(g, store, self.w)?;
        let b = binder.bind(g, store, self.b)?;
        let wx = g.matvec(w, x)?;
        g.add(wx, b)
    }
}

/// Fully connected net with relu hidden layers and a linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` = [input, hidden..., output].
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{prefix}.l{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        binder: &mut Binder,
        store: &ParamStore,
        x: TensorId,
    ) -> Result<TensorId, TensorError> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, binder, store, h)?;
            if i != last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }
}
