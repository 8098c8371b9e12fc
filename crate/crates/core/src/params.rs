//! Parameter containers are generic over their slot type `P`: the same
//! struct holds weights (`Tensor<T>`), graph handles (`Var`), gradients or
//! optimizer moments. [`ParamTree`] walks the slots in a fixed, named order.

/// Visits every parameter slot in canonical order with its dotted name.
pub trait ParamTree<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P));

    fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name, p)));
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut P)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |name, p| out.push((name, p)));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
