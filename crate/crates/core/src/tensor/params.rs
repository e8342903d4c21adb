use super::Tensor;
use rand::Rng;

/// Named trainable tensors of a model component.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |n, t| out.push((n, t.clone())));
        out
    }

    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    /// Rebuilds every leaf with the given `requires_grad`, dropping gradients.
    fn set_trainable(&mut self, trainable: bool) {
        self.visit_mut("", &mut |_, t| {
            *t = t.detach().into_leaf(trainable);
        });
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform in `[-bound, bound]`.
pub(crate) fn uniform<R: Rng>(rng: &mut R, shape: &[usize], bound: f64, trainable: bool) -> Tensor {
    let t = if bound == 0.0 {
        Tensor::zeros(shape)
    } else {
        Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
    };
    t.into_leaf(trainable)
}

pub(crate) fn constant(shape: &[usize], value: f64, trainable: bool) -> Tensor {
    Tensor::full(shape, value).into_leaf(trainable)
}
