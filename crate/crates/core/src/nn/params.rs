//! Named parameter declarations, storage, and graph binding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{relative_error, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// Normal(0, std) truncated to two standard deviations.
    TruncNormal(f64),
    /// Normal(0, sqrt(2 / fan_out)).
    FanOut(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Collects parameter declarations while a network is being laid out.
#[derive(Debug, Default, Clone)]
pub struct ParamBuilder {
    specs: Vec<ParamSpec>,
}

impl ParamBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn declare(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        self.specs.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        });
        ParamId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn count(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    /// Allocates and initialises every declared parameter from `seed`.
    pub fn build(self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = self
            .specs
            .iter()
            .map(|s| Tensor::from_fn(&s.shape, |_| sample_init(s.init, &mut rng)).with_grad())
            .collect();
        ParamStore {
            specs: self.specs,
            tensors,
        }
    }
}

fn sample_init(init: Init, rng: &mut ChaCha8Rng) -> f64 {
    match init {
        Init::Zeros => 0.0,
        Init::Ones => 1.0,
        Init::Constant(v) => v,
        Init::TruncNormal(std) => {
            let n = Normal::new(0.0, std).expect("positive std");
            loop {
                let v: f64 = n.sample(rng);
                if v.abs() <= 2.0 * std {
                    return v;
                }
            }
        }
        Init::FanOut(fan_out) => {
            let std = (2.0 / fan_out.max(1) as f64).sqrt();
            Normal::new(0.0, std).expect("positive std").sample(rng)
        }
    }
}

/// Graph handles for every parameter of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    /// Handles in declaration order.
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.specs.iter().position(|s| s.name == name).map(|i| &self.tensors[i])
    }

    /// Overwrites the values of `id`, keeping its shape.
    pub fn set(&mut self, id: ParamId, values: &[f64]) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if values.len() != t.numel() {
            return Err(Error::dim(
                self.specs[id.0].name.clone(),
                format!("expected {} values, got {}", t.numel(), values.len()),
            ));
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn fill(&mut self, id: ParamId, value: f64) {
        self.tensors[id.0].data_mut().iter_mut().for_each(|v| *v = value);
    }

    /// Replaces all values from `(name, tensor)` pairs in declaration order.
    pub fn from_parts(specs: Vec<ParamSpec>, tensors: Vec<Tensor>) -> Result<Self> {
        if specs.len() != tensors.len() {
            return Err(Error::Format("parameter list length mismatch".into()));
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if s.shape != t.shape() {
                return Err(Error::Format(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
        }
        let tensors = tensors.into_iter().map(Tensor::with_grad).collect();
        Ok(Self { specs, tensors })
    }

    /// Records every parameter as a differentiable leaf on `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.leaf(t)).collect())
    }

    /// Adds leaf gradients from `g` into each parameter's gradient buffer.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &Bound) {
        for (t, v) in self.tensors.iter_mut().zip(&bound.0) {
            if let Some(gr) = g.grad(*v) {
                t.accumulate_grad(gr).expect("bound shapes match");
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }
}

/// Finite-difference check of parameter gradients for a scalar graph function.
///
/// At most `per_tensor` coordinates of each parameter are probed (chosen by a
/// seeded shuffle); `None` probes all of them. Returns the maximum relative error.
pub fn grad_check_params<F>(store: &mut ParamStore, f: F, eps: f64, per_tensor: Option<usize>, seed: u64) -> Result<f64>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let y = f(&mut g, &b)?;
    g.backward(y)?;
    let analytic: Vec<Vec<f64>> = (0..store.len())
        .map(|i| {
            g.grad(b.0[i])
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; store.tensors[i].numel()])
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..store.len() {
        let n = store.tensors[i].numel();
        let mut coords: Vec<usize> = (0..n).collect();
        if let Some(limit) = per_tensor {
            if limit < n {
                for j in 0..limit {
                    let k = rng.random_range(j..n);
                    coords.swap(j, k);
                }
                coords.truncate(limit);
            }
        }
        for c in coords {
            let orig = store.tensors[i].data()[c];
            store.tensors[i].data_mut()[c] = orig + eps;
            let plus = eval_scalar(store, &f)?;
            store.tensors[i].data_mut()[c] = orig - eps;
            let minus = eval_scalar(store, &f)?;
            store.tensors[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[i][c], numeric));
        }
    }
    Ok(worst)
}

fn eval_scalar<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let y = f(&mut g, &b)?;
    Ok(g.scalar(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_deterministic_and_counts_match() {
        let mut pb = ParamBuilder::new();
        pb.declare("a", &[3, 4], Init::TruncNormal(0.02));
        pb.declare("b", &[4], Init::Zeros);
        pb.declare("c", &[2, 1, 3, 3], Init::FanOut(18));
        assert_eq!(pb.count(), 12 + 4 + 18);
        let s1 = pb.clone().build(7);
        let s2 = pb.build(7);
        assert_eq!(s1, s2);
        assert!(s1.tensors()[0].data().iter().all(|v| v.abs() <= 0.04));
        assert!(s1.tensors()[1].data().iter().all(|&v| v == 0.0));
    }
}
