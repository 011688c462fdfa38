use std::collections::{HashMap, HashSet};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Gradients of a scalar loss, keyed by tensor identity.
///
/// Holds a buffer for every graph node reachable from the loss that tracks
/// gradients, leaves and intermediates alike.
pub struct Gradients<T: Element = f32> {
    grads: HashMap<u64, Vec<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.grads.get(&t.id()).map(|g| g.as_slice())
    }

    /// Gradient of `t`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, t: &Tensor<T>) -> Vec<T> {
        self.get(t).map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); t.numel()])
    }

    pub fn wrt_tensor(&self, t: &Tensor<T>) -> Tensor<T> {
        Tensor::from_vec(self.wrt(t), t.shape()).expect("gradient shape")
    }

    pub fn contains(&self, t: &Tensor<T>) -> bool {
        self.grads.contains_key(&t.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Nodes reachable from `root` through gradient-tracking edges, parents
/// before children.
fn topo_order<T: Element>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    // (node, parents already pushed)
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(gf) = &t.node.grad_fn {
            for p in gf.parents.iter().rev() {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }
    order
}

impl<T: Element> Tensor<T> {
    /// Reverse-mode accumulation from a scalar loss.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        if !self.requires_grad() {
            return Ok(Gradients { grads });
        }
        grads.insert(self.id(), vec![T::one()]);
        let order = topo_order(self);
        for t in order.iter().rev() {
            let Some(gf) = &t.node.grad_fn else { continue };
            let Some(g_out) = grads.get(&t.id()) else { continue };
            let parent_grads = (gf.backward)(g_out, t.data());
            debug_assert_eq!(parent_grads.len(), gf.parents.len(), "{}", gf.name);
            for (p, pg) in gf.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                debug_assert_eq!(pg.len(), p.numel(), "{} gradient size", gf.name);
                match grads.get_mut(&p.id()) {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&pg) {
                            *a = *a + *v;
                        }
                    }
                    None => {
                        grads.insert(p.id(), pg);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_loss_has_unit_gradient() {
        let x = Tensor::<f64>::param(vec![3.0], &[]).unwrap();
        let g = x.backward().unwrap();
        assert_eq!(g.wrt(&x), vec![1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::<f64>::param(vec![1.0, 2.0], &[2]).unwrap();
        assert!(matches!(x.backward(), Err(TensorError::Contract(_))));
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        // loss = sum(x*x + x) -> 2x + 1
        let x = Tensor::<f64>::param(vec![1.0, -2.0], &[2]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum_all();
        let g = y.backward().unwrap();
        assert_eq!(g.wrt(&x), vec![3.0, -3.0]);
    }
}
