//! Trainable parameters and the visitor used to enumerate them.

use ndarray::{Array, ArrayViewD, ArrayViewMutD, Dimension};

use super::Scalar;

/// A trainable array together with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<F, D: Dimension> {
    pub value: Array<F, D>,
    pub grad: Array<F, D>,
}

impl<F: Scalar, D: Dimension> Param<F, D> {
    pub fn new(value: Array<F, D>) -> Self {
        let grad = Array::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Callback over every trainable parameter, in a fixed traversal order.
///
/// The order is part of the contract: the optimizer aligns its momentum
/// buffers with it and checkpoints restore by name.
pub trait ParamVisitor<F> {
    fn visit(&mut self, name: &str, value: ArrayViewMutD<'_, F>, grad: ArrayViewMutD<'_, F>);
}

/// Callback over non-trainable state (batch-norm running statistics).
pub trait BufferVisitor<F> {
    fn visit(&mut self, name: &str, value: ArrayViewMutD<'_, F>);
}

/// Anything with named parameters and buffers: layers, blocks, whole networks.
pub trait Parametrized<F> {
    fn visit_params(&mut self, prefix: &str, v: &mut dyn ParamVisitor<F>);
    fn visit_buffers(&mut self, prefix: &str, v: &mut dyn BufferVisitor<F>);
}

/// Number of trainable scalars reachable from `module`.
pub fn count_params<F: Scalar>(module: &mut dyn Parametrized<F>) -> usize {
    struct Counter(usize);
    impl<F> ParamVisitor<F> for Counter {
        fn visit(&mut self, _: &str, value: ArrayViewMutD<'_, F>, _: ArrayViewMutD<'_, F>) {
            self.0 += value.len();
        }
    }
    let mut counter = Counter(0);
    module.visit_params("", &mut counter);
    counter.0
}

/// Sets every gradient accumulator to zero.
pub fn zero_grads<F: Scalar>(module: &mut dyn Parametrized<F>) {
    struct Zero;
    impl<F: Scalar> ParamVisitor<F> for Zero {
        fn visit(&mut self, _: &str, _: ArrayViewMutD<'_, F>, mut grad: ArrayViewMutD<'_, F>) {
            grad.fill(F::zero());
        }
    }
    module.visit_params("", &mut Zero);
}

/// Snapshot of `(name, value)` pairs, used by checkpoints and tests.
pub fn collect_params<F: Scalar>(
    module: &mut dyn Parametrized<F>,
) -> Vec<(String, ndarray::ArrayD<F>)> {
    struct Collect<F>(Vec<(String, ndarray::ArrayD<F>)>);
    impl<F: Scalar> ParamVisitor<F> for Collect<F> {
        fn visit(&mut self, name: &str, value: ArrayViewMutD<'_, F>, _: ArrayViewMutD<'_, F>) {
            self.0.push((name.to_string(), value.to_owned()));
        }
    }
    let mut collect = Collect(Vec::new());
    module.visit_params("", &mut collect);
    collect.0
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Read-only view helper: visitors receive mutable views, so shared helpers
/// that only need to read go through this adapter.
pub fn for_each_param<F: Scalar>(
    module: &mut dyn Parametrized<F>,
    mut f: impl FnMut(&str, ArrayViewD<'_, F>, ArrayViewD<'_, F>),
) {
    struct Fn1<'a, F, G: FnMut(&str, ArrayViewD<'_, F>, ArrayViewD<'_, F>)>(
        &'a mut G,
        std::marker::PhantomData<F>,
    );
    impl<F: Scalar, G: FnMut(&str, ArrayViewD<'_, F>, ArrayViewD<'_, F>)> ParamVisitor<F>
        for Fn1<'_, F, G>
    {
        fn visit(&mut self, name: &str, value: ArrayViewMutD<'_, F>, grad: ArrayViewMutD<'_, F>) {
            (self.0)(name, value.view(), grad.view());
        }
    }
    module.visit_params("", &mut Fn1(&mut f, std::marker::PhantomData));
}
