//! A small reverse-mode tape over dynamic-rank arrays.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards
//! is a valid topological order for gradient propagation. Values are held
//! behind `Arc` so frozen weights can be shared into many graphs without
//! copying.

use std::sync::Arc;

use ndarray::{arr0, Array1, Array3, ArrayD, ArrayView3, ArrayView4, Axis, Ix3, Ix4, IxDyn, Zip};

use crate::kernels::{self, ConvGeometry};
use crate::loss;
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackwardFn<T> = Box<dyn Fn(&ArrayD<T>, &[&ArrayD<T>], &ArrayD<T>, &[bool]) -> Vec<Option<ArrayD<T>>>>;

struct Node<T> {
    value: Arc<ArrayD<T>>,
    parents: Vec<Var>,
    needs_grad: bool,
    /// Output passed through a rectifier.
    rectified: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar with respect to the leaves that required them.
pub struct Gradients<T> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&ArrayD<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<ArrayD<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn view3<T>(a: &ArrayD<T>) -> ArrayView3<'_, T> {
    a.view().into_dimensionality::<Ix3>().expect("rank-3 tensor")
}

fn view4<T>(a: &ArrayD<T>) -> ArrayView4<'_, T> {
    a.view().into_dimensionality::<Ix4>().expect("rank-4 tensor")
}

fn scalar_of<T: Scalar>(a: &ArrayD<T>) -> T {
    *a.iter().next().expect("scalar tensor")
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<T>, parents: Vec<Var>, backward: BackwardFn<T>) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            parents,
            needs_grad,
            rectified: false,
            backward: needs_grad.then_some(backward),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: ArrayD<T>, requires_grad: bool) -> Var {
        self.shared_leaf(Arc::new(value), requires_grad)
    }

    pub fn shared_leaf(&mut self, value: Arc<ArrayD<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            needs_grad: requires_grad,
            rectified: false,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &ArrayD<T> {
        &self.nodes[var.0].value
    }

    pub fn value3(&self, var: Var) -> ArrayView3<'_, T> {
        view3(self.value(var))
    }

    pub fn scalar(&self, var: Var) -> T {
        scalar_of(self.value(var))
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    /// Convolution with optional bias and fused rectifier.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, geom: ConvGeometry, relu: bool) -> Var {
        let b = bias.map(|b| {
            self.value(b)
                .clone()
                .into_dimensionality::<ndarray::Ix1>()
                .expect("rank-1 bias")
        });
        let mut out = kernels::conv2d(self.value3(x), view4(self.value(weight)), b.as_ref(), geom);
        if relu {
            out.mapv_inplace(|v| v.max(T::zero()));
        }
        let mut parents = vec![x, weight];
        parents.extend(bias);
        let var = self.push(
            out.into_dyn(),
            parents,
            Box::new(move |grad, inputs, output, needs| {
                let mut g = view3(grad).to_owned();
                if relu {
                    Zip::from(&mut g).and(&view3(output)).for_each(|g, &o| {
                        if o <= T::zero() {
                            *g = T::zero()
                        }
                    });
                }
                let x = view3(inputs[0]);
                let w = view4(inputs[1]);
                let dx = needs[0].then(|| kernels::conv2d_backward_input(g.view(), w, x.dim(), geom).into_dyn());
                let mut res = vec![dx, None];
                let want_params = needs[1] || needs.get(2).copied().unwrap_or(false);
                if want_params {
                    let (dw, db) = kernels::conv2d_backward_params(g.view(), x, w.dim(), geom);
                    res[1] = needs[1].then(|| dw.into_dyn());
                    if inputs.len() > 2 {
                        res.push(needs[2].then(|| db.into_dyn()));
                    }
                } else if inputs.len() > 2 {
                    res.push(None);
                }
                res
            }),
        );
        self.nodes[var.0].rectified = relu;
        var
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(T::zero()));
        let var = self.push(
            out,
            vec![x],
            Box::new(|grad, _inputs, output, _| {
                let mut g = grad.clone();
                Zip::from(&mut g).and(output).for_each(|g, &o| {
                    if o <= T::zero() {
                        *g = T::zero()
                    }
                });
                vec![Some(g)]
            }),
        );
        self.nodes[var.0].rectified = true;
        var
    }

    /// Which rectified units are active, over every rectifier in the graph.
    /// Two evaluations with equal patterns lie on the same linear piece of
    /// each rectifier, so a finite-difference probe between them crosses no kink.
    pub fn rectifier_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter(|n| n.rectified)
            .flat_map(|n| n.value.iter().map(|&v| v > T::zero()))
            .collect()
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| T::one() / (T::one() + (-v).exp()));
        self.push(
            out,
            vec![x],
            Box::new(|grad, _inputs, output, _| {
                let mut g = grad.clone();
                Zip::from(&mut g).and(output).for_each(|g, &s| *g *= s * (T::one() - s));
                vec![Some(g)]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let out = self.value(a) + self.value(b);
        self.push(
            out,
            vec![a, b],
            Box::new(|grad, _inputs, _output, needs| {
                vec![needs[0].then(|| grad.clone()), needs[1].then(|| grad.clone())]
            }),
        )
    }

    /// Concatenates `[C_i, H, W]` maps along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let views: Vec<_> = parts.iter().map(|&p| self.value3(p)).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("matching spatial sizes");
        let channels: Vec<usize> = views.iter().map(|v| v.dim().0).collect();
        self.push(
            out.into_dyn(),
            parts.to_vec(),
            Box::new(move |grad, _inputs, _output, needs| {
                let g = view3(grad);
                let mut start = 0;
                channels
                    .iter()
                    .zip(needs)
                    .map(|(&c, &need)| {
                        let piece = need.then(|| g.slice(ndarray::s![start..start + c, .., ..]).to_owned().into_dyn());
                        start += c;
                        piece
                    })
                    .collect()
            }),
        )
    }

    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let out = kernels::resize_bilinear(self.value3(x), out_h, out_w);
        self.push(
            out.into_dyn(),
            vec![x],
            Box::new(|grad, inputs, _output, _| {
                let (_, h, w) = view3(inputs[0]).dim();
                vec![Some(kernels::resize_bilinear_backward(view3(grad), h, w).into_dyn())]
            }),
        )
    }

    pub fn max_pool2(&mut self, x: Var) -> Var {
        let out = kernels::max_pool2(self.value3(x));
        self.push(
            out.into_dyn(),
            vec![x],
            Box::new(|grad, inputs, _output, _| {
                vec![Some(
                    kernels::max_pool2_backward(view3(inputs[0]), view3(grad)).into_dyn(),
                )]
            }),
        )
    }

    /// Per-channel `x * scale[c] + shift[c]`.
    pub fn channel_affine(&mut self, x: Var, scale: Vec<T>, shift: Vec<T>) -> Var {
        let mut out = self.value3(x).to_owned();
        for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
            plane.mapv_inplace(|v| v * scale[c] + shift[c]);
        }
        self.push(
            out.into_dyn(),
            vec![x],
            Box::new(move |grad, _inputs, _output, _| {
                let mut g = view3(grad).to_owned();
                for (c, mut plane) in g.axis_iter_mut(Axis(0)).enumerate() {
                    plane.mapv_inplace(|v| v * scale[c]);
                }
                vec![Some(g.into_dyn())]
            }),
        )
    }

    /// Channel Gram matrix `ψψᵀ / (C·H·W)`.
    pub fn gram(&mut self, x: Var) -> Var {
        let out = loss::gram_matrix(self.value3(x));
        self.push(
            out.into_dyn(),
            vec![x],
            Box::new(|grad, inputs, _output, _| {
                let g = grad.view().into_dimensionality::<ndarray::Ix2>().expect("rank-2");
                vec![Some(loss::gram_matrix_backward(view3(inputs[0]), g).into_dyn())]
            }),
        )
    }

    /// Normalized squared distance to a fixed target feature map.
    pub fn content_loss(&mut self, x: Var, target: Arc<Array3<T>>) -> Var {
        let value = loss::content_loss_unchecked(target.view(), self.value3(x));
        self.push(
            arr0(value).into_dyn(),
            vec![x],
            Box::new(move |grad, inputs, _output, _| {
                let g = scalar_of(grad);
                let x = view3(inputs[0]);
                let n = T::from_usize_lossy(x.len());
                let two = T::lit(2.0);
                let mut d = &x - &target.view();
                d.mapv_inplace(|v| v * two * g / n);
                vec![Some(d.into_dyn())]
            }),
        )
    }

    /// Squared Frobenius distance of a Gram node to a fixed target Gram.
    pub fn gram_distance(&mut self, gram: Var, target: Arc<ndarray::Array2<T>>) -> Var {
        let gv = self
            .value(gram)
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("rank-2 gram");
        let value = loss::frobenius_sq_diff(target.view(), gv);
        self.push(
            arr0(value).into_dyn(),
            vec![gram],
            Box::new(move |grad, inputs, _output, _| {
                let g = scalar_of(grad);
                let two = T::lit(2.0);
                let mut d = inputs[0] - &target.view().into_dyn();
                d.mapv_inplace(|v| v * two * g);
                vec![Some(d)]
            }),
        )
    }

    pub fn tv_loss(&mut self, x: Var) -> Var {
        let value = loss::tv_loss_view(self.value3(x));
        self.push(
            arr0(value).into_dyn(),
            vec![x],
            Box::new(|grad, inputs, _output, _| {
                let g = scalar_of(grad);
                let mut d = loss::tv_loss_grad(view3(inputs[0]));
                d.mapv_inplace(|v| v * g);
                vec![Some(d.into_dyn())]
            }),
        )
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let value = terms.iter().fold(T::zero(), |acc, &(v, w)| acc + w * self.scalar(v));
        let weights: Vec<T> = terms.iter().map(|&(_, w)| w).collect();
        self.push(
            arr0(value).into_dyn(),
            terms.iter().map(|&(v, _)| v).collect(),
            Box::new(move |grad, _inputs, _output, needs| {
                let g = scalar_of(grad);
                weights
                    .iter()
                    .zip(needs)
                    .map(|(&w, &need)| need.then(|| arr0(w * g).into_dyn()))
                    .collect()
            }),
        )
    }

    /// `Σ x * weights` against a fixed weight tensor; used to reduce maps to a scalar.
    pub fn dot_const(&mut self, x: Var, weights: Arc<ArrayD<T>>) -> Var {
        assert_eq!(self.shape(x), weights.shape(), "dot_const shapes");
        let value = Zip::from(self.value(x))
            .and(&*weights)
            .fold(T::zero(), |acc, &a, &b| acc + a * b);
        self.push(
            arr0(value).into_dyn(),
            vec![x],
            Box::new(move |grad, _inputs, _output, _| {
                let g = scalar_of(grad);
                vec![Some(weights.mapv(|w| w * g))]
            }),
        )
    }

    /// Reverse sweep from a scalar node. Leaf gradients are retained; interior
    /// gradients are released as soon as they have been propagated.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        assert_eq!(self.value(output).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<ArrayD<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(ArrayD::from_elem(IxDyn(self.value(output).shape()), T::one()));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let inputs: Vec<&ArrayD<T>> = node.parents.iter().map(|p| &*self.nodes[p.0].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|p| self.nodes[p.0].needs_grad).collect();
            let parent_grads = backward(&grad, &inputs, &node.value, &needs);
            for (parent, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => *acc += &pg,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

/// Converts a rank-1 array into a graph leaf.
pub fn bias_leaf<T: Scalar>(g: &mut Graph<T>, b: Array1<T>, requires_grad: bool) -> Var {
    g.leaf(b.into_dyn(), requires_grad)
}
