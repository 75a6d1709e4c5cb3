//! Named parameter storage, graph binding and the small layer helpers the
//! networks are assembled from.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use crate::error::{invalid, Result};
use crate::tensor::{Graph, Scalar, SeedRng, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    tensors: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Sub-store of the tensors whose names start with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> ParamStore<S> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamStore<S>) {
        self.tensors.extend(other.tensors);
    }

    pub fn into_inner(self) -> BTreeMap<String, Tensor<S>> {
        self.tensors
    }
}

impl<S: Scalar> FromIterator<(String, Tensor<S>)> for ParamStore<S> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<S>)>>(iter: I) -> Self {
        Self {
            tensors: iter.into_iter().collect(),
        }
    }
}

/// Binds stored parameters into a graph on first use, either as trainable
/// leaves or as frozen constants.
pub struct Binder<'g, 'p, S> {
    graph: &'g Graph<S>,
    store: &'p ParamStore<S>,
    trainable: bool,
    bound: RefCell<HashMap<String, Var<'g, S>>>,
}

impl<'g, 'p, S: Scalar> Binder<'g, 'p, S> {
    pub fn new(graph: &'g Graph<S>, store: &'p ParamStore<S>, trainable: bool) -> Self {
        Self {
            graph,
            store,
            trainable,
            bound: RefCell::new(HashMap::new()),
        }
    }

    pub fn graph(&self) -> &'g Graph<S> {
        self.graph
    }

    pub fn store(&self) -> &'p ParamStore<S> {
        self.store
    }

    pub fn has(&self, name: &str) -> bool {
        self.store.contains(name)
    }

    pub fn get(&self, name: &str) -> Result<Var<'g, S>> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(*v);
        }
        let t = self
            .store
            .get(name)
            .ok_or_else(|| invalid("bind", format!("missing parameter `{name}`")))?;
        let v = self.graph.leaf(t.clone(), self.trainable);
        self.bound.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    /// Gradients of every bound parameter, zero-filled for parameters the
    /// backward pass did not reach.
    pub fn gradients(&self) -> ParamStore<S> {
        self.bound
            .borrow()
            .iter()
            .map(|(name, v)| {
                let g = v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape()));
                (name.clone(), g)
            })
            .collect()
    }

    pub fn conv(&self, x: Var<'g, S>, prefix: &str, stride: usize, pad: usize) -> Result<Var<'g, S>> {
        let w = self.get(&format!("{prefix}.weight"))?;
        let b = self.optional(&format!("{prefix}.bias"))?;
        x.conv2d(w, b, stride, pad)
    }

    fn optional(&self, name: &str) -> Result<Option<Var<'g, S>>> {
        if self.has(name) {
            self.get(name).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn conv_transpose(&self, x: Var<'g, S>, prefix: &str, stride: usize, pad: usize) -> Result<Var<'g, S>> {
        let w = self.get(&format!("{prefix}.weight"))?;
        let b = self.optional(&format!("{prefix}.bias"))?;
        x.conv_transpose2d(w, b, stride, pad)
    }

    pub fn norm(&self, x: Var<'g, S>, prefix: &str) -> Result<Var<'g, S>> {
        let g = self.get(&format!("{prefix}.gamma"))?;
        let b = self.get(&format!("{prefix}.beta"))?;
        x.instance_norm(g, b, NORM_EPS)
    }
}

/// Fan-in uniform init `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for a conv weight
/// `[cout, cin, k, k]`, optionally with a zero bias.
pub fn init_conv<S: Scalar>(
    store: &mut ParamStore<S>,
    prefix: &str,
    cout: usize,
    cin: usize,
    k: usize,
    bias: bool,
    rng: &mut SeedRng,
) {
    let bound = 1.0 / ((cin * k * k) as f64).sqrt();
    store.insert(format!("{prefix}.weight"), rng.uniform_tensor(&[cout, cin, k, k], -bound, bound));
    if bias {
        store.insert(format!("{prefix}.bias"), Tensor::zeros(&[cout]));
    }
}

/// Transposed conv weight `[cin, cout, k, k]`, optionally with a zero bias.
pub fn init_conv_transpose<S: Scalar>(
    store: &mut ParamStore<S>,
    prefix: &str,
    cin: usize,
    cout: usize,
    k: usize,
    bias: bool,
    rng: &mut SeedRng,
) {
    let bound = 1.0 / ((cin * k * k) as f64).sqrt();
    store.insert(format!("{prefix}.weight"), rng.uniform_tensor(&[cin, cout, k, k], -bound, bound));
    if bias {
        store.insert(format!("{prefix}.bias"), Tensor::zeros(&[cout]));
    }
}

pub fn init_norm<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, channels: usize) {
    store.insert(format!("{prefix}.gamma"), Tensor::ones(&[channels]));
    store.insert(format!("{prefix}.beta"), Tensor::zeros(&[channels]));
}
