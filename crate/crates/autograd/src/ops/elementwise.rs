use crate::error::{AutogradError, Result};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_vec(data, a.shape()).expect("same shape")
}

impl<'t, T: Scalar> Var<'t, T> {
    fn same_shape(&self, other: &Var<'t, T>, op: &'static str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(AutogradError::shapes(op, &a, &b));
        }
        Ok(())
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_shape(&other, "add")?;
        let out = zip_map(&self.value(), &other.value(), |x, y| x + y);
        Ok(self.tape().record(&[self, other], out, |g| {
            vec![Some(g.clone()), Some(g.clone())]
        }))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_shape(&other, "sub")?;
        let out = zip_map(&self.value(), &other.value(), |x, y| x - y);
        Ok(self.tape().record(&[self, other], out, |g| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        }))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_shape(&other, "mul")?;
        let (a, b) = (self.value(), other.value());
        let out = zip_map(&a, &b, |x, y| x * y);
        Ok(self.tape().record(&[self, other], out, move |g| {
            vec![
                Some(zip_map(g, &b, |gv, bv| gv * bv)),
                Some(zip_map(g, &a, |gv, av| gv * av)),
            ]
        }))
    }

    pub fn scale(self, factor: f64) -> Var<'t, T> {
        let f = T::from_f64_lossy(factor);
        let out = self.value().map(|v| v * f);
        self.tape()
            .record(&[self], out, move |g| vec![Some(g.map(|v| v * f))])
    }

    /// Sum of all elements as a scalar.
    pub fn sum(self) -> Var<'t, T> {
        let shape = self.shape();
        let out = Tensor::scalar(self.value().sum());
        self.tape().record(&[self], out, move |g| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.value().len().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// `sum(self ⊙ weights)` against a fixed weight tensor.
    pub fn weighted_sum(self, weights: &Tensor<T>) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape != weights.shape() {
            return Err(AutogradError::shapes(
                "weighted_sum",
                &shape,
                weights.shape(),
            ));
        }
        let v = self.value();
        let total = v
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        let w = weights.clone();
        Ok(self
            .tape()
            .record(&[self], Tensor::scalar(total), move |g| {
                let gs = g.item();
                vec![Some(w.map(|x| x * gs))]
            }))
    }

    /// Same data viewed with a different shape.
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let src = self.shape();
        let out = (*self.value()).clone().reshape(shape)?;
        Ok(self.tape().record(&[self], out, move |g| {
            vec![Some(g.clone().reshape(&src).expect("same length"))]
        }))
    }
}
