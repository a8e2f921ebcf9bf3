use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{GradBuffer, ParamStore, SectionId, SectionKind};
use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    Softplus,
    Sigmoid,
}

#[inline]
pub fn softplus<T: Real>(z: T) -> T {
    // ln(1 + e^z) without overflow for large z
    if z > T::lit(20.0) {
        z
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::None => z,
            Activation::Relu => z.max(T::zero()),
            Activation::Softplus => softplus(z),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative given the pre-activation `z` and the output `y`.
    #[inline]
    fn derivative<T: Real>(self, z: T, y: T) -> T {
        match self {
            Activation::None => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Softplus => sigmoid(z),
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

/// Layer widths plus one activation tag per output unit. Hidden layers use ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub heads: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], heads: Vec<Activation>) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(heads.len());
        Self { widths, heads }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Config(
                "an MLP needs at least one hidden layer".into(),
            ));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "MLP widths must be positive: {:?}",
                self.widths
            )));
        }
        if self.heads.len() != self.output_width() {
            return Err(Error::Config(format!(
                "{} head activations for {} outputs",
                self.heads.len(),
                self.output_width()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zeros,
    /// He-uniform weights, zero biases.
    He,
    /// He-uniform hidden layers with a zeroed output layer.
    HeZeroOutput,
}

/// A dense MLP bound to sections of a [`ParamStore`]. Weight sections are
/// stored `[in, out]` row-major so a batch forward is `X·W + b`.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<SectionId>,
    biases: Vec<SectionId>,
}

/// Intermediates of one batched forward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpTape<T> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    output: Option<Array2<T>>,
}

impl<T: Real> MlpTape<T> {
    pub fn is_recorded(&self) -> bool {
        self.output.is_some()
    }

    pub fn batch_size(&self) -> usize {
        self.output.as_ref().map_or(0, |o| o.nrows())
    }
}

impl Mlp {
    /// Creates the weight and bias sections under `prefix`.
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spec: MlpSpec,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let layers = spec.num_layers();
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 0..layers {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let zero = match init {
                Init::Zeros => true,
                Init::He => false,
                Init::HeZeroOutput => l + 1 == layers,
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let values: Vec<T> = (0..fan_in * fan_out)
                .map(|_| {
                    if zero {
                        T::zero()
                    } else {
                        T::lit(rng.gen_range(-bound..bound))
                    }
                })
                .collect();
            weights.push(store.add(
                format!("{prefix}.w{l}"),
                vec![fan_in, fan_out],
                SectionKind::Weight,
                values,
            )?);
            biases.push(store.add(
                format!("{prefix}.b{l}"),
                vec![fan_out],
                SectionKind::Bias,
                vec![T::zero(); fan_out],
            )?);
        }
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    /// Binds to sections that already exist, checking their shapes.
    pub fn bind<T: Real>(store: &ParamStore<T>, prefix: &str, spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..spec.num_layers() {
            let w = store.require(&format!("{prefix}.w{l}"))?;
            let b = store.require(&format!("{prefix}.b{l}"))?;
            let want = vec![spec.widths[l], spec.widths[l + 1]];
            if store.section(w).shape != want || store.section(b).shape != vec![want[1]] {
                return Err(Error::Config(format!(
                    "layer {l} of `{prefix}` does not match widths {:?}",
                    spec.widths
                )));
            }
            weights.push(w);
            biases.push(b);
        }
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn section_ids(&self) -> impl Iterator<Item = SectionId> + '_ {
        self.weights.iter().chain(&self.biases).copied()
    }

    fn weight<'a, T: Real>(&self, store: &'a ParamStore<T>, l: usize) -> ArrayView2<'a, T> {
        let shape = (self.spec.widths[l], self.spec.widths[l + 1]);
        ArrayView2::from_shape(shape, store.values(self.weights[l])).expect("weight shape")
    }

    fn bias<'a, T: Real>(&self, store: &'a ParamStore<T>, l: usize) -> ArrayView1<'a, T> {
        ArrayView1::from(store.values(self.biases[l]))
    }

    fn check_input<T: Real>(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.spec.input_width() {
            return Err(Error::Config(format!(
                "MLP expects input width {}, got {}",
                self.spec.input_width(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn run<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: ArrayView2<T>,
        mut tape: Option<&mut MlpTape<T>>,
    ) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let layers = self.spec.num_layers();
        let mut h = x.to_owned();
        for l in 0..layers {
            let mut z = Array2::<T>::zeros((h.nrows(), self.spec.widths[l + 1]));
            general_mat_mul(T::one(), &h, &self.weight(store, l), T::zero(), &mut z);
            z += &self.bias(store, l);
            let mut y = z.clone();
            if l + 1 < layers {
                y.mapv_inplace(|v| Activation::Relu.apply(v));
            } else {
                for (j, mut col) in y.axis_iter_mut(Axis(1)).enumerate() {
                    let act = self.spec.heads[j];
                    if act != Activation::None {
                        col.mapv_inplace(|v| act.apply(v));
                    }
                }
            }
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(std::mem::replace(&mut h, y));
                t.pre.push(z);
            } else {
                h = y;
            }
        }
        if let Some(t) = tape {
            t.output = Some(h.clone());
        }
        Ok(h)
    }

    /// Batched forward pass without recording.
    pub fn forward<T: Real>(&self, store: &ParamStore<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.run(store, x, None)
    }

    /// Batched forward pass that records what [`Mlp::backward`] needs.
    pub fn forward_taped<T: Real>(
        &self,
        store: &ParamStore<T>,
        x: ArrayView2<T>,
    ) -> Result<(Array2<T>, MlpTape<T>)> {
        let mut tape = MlpTape {
            inputs: Vec::new(),
            pre: Vec::new(),
            output: None,
        };
        let y = self.run(store, x, Some(&mut tape))?;
        Ok((y, tape))
    }

    /// Reverse pass. Parameter gradients are added to `grads`; the gradient
    /// with respect to the input batch is returned.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        tape: &MlpTape<T>,
        upstream: ArrayView2<T>,
        grads: &mut GradBuffer<T>,
    ) -> Result<Array2<T>> {
        let output = tape
            .output
            .as_ref()
            .ok_or_else(|| Error::Usage("backward called without a recorded forward pass".into()))?;
        if upstream.dim() != output.dim() {
            return Err(Error::Usage(format!(
                "upstream gradient {:?} does not match recorded output {:?}",
                upstream.dim(),
                output.dim()
            )));
        }
        let layers = self.spec.num_layers();
        let mut g = upstream.to_owned();
        for l in (0..layers).rev() {
            let z = &tape.pre[l];
            if l + 1 == layers {
                for (j, mut col) in g.axis_iter_mut(Axis(1)).enumerate() {
                    let act = self.spec.heads[j];
                    if act == Activation::None {
                        continue;
                    }
                    for ((gv, &zv), &yv) in col
                        .iter_mut()
                        .zip(z.column(j).iter())
                        .zip(output.column(j).iter())
                    {
                        *gv *= act.derivative(zv, yv);
                    }
                }
            } else {
                g.zip_mut_with(z, |gv, &zv| {
                    if zv <= T::zero() {
                        *gv = T::zero();
                    }
                });
            }
            let input = &tape.inputs[l];
            let shape = (self.spec.widths[l], self.spec.widths[l + 1]);
            {
                let dw = grads.dense_mut(self.weights[l]);
                let mut dw = ArrayViewMut2::from_shape(shape, dw).expect("weight grad shape");
                general_mat_mul(T::one(), &input.t(), &g, T::one(), &mut dw);
            }
            {
                let db = grads.dense_mut(self.biases[l]);
                let col_sums: Array1<T> = g.sum_axis(Axis(0));
                for (d, s) in db.iter_mut().zip(col_sums.iter()) {
                    *d += *s;
                }
            }
            let mut next = Array2::<T>::zeros((g.nrows(), shape.0));
            general_mat_mul(T::one(), &g, &self.weight(store, l).t(), T::zero(), &mut next);
            g = next;
        }
        Ok(g)
    }
}

/// Single-sample forward pass.
pub fn mlp_forward<T: Real>(mlp: &Mlp, params: &ParamStore<T>, x: &[T]) -> Result<Vec<T>> {
    let view = ArrayView2::from_shape((1, x.len()), x)
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(mlp.forward(params, view)?.into_raw_vec_and_offset().0)
}

/// Single-sample reverse pass that accumulates straight into `params.grads`.
/// `tape` must come from [`Mlp::forward_taped`] on the same parameters.
pub fn mlp_backward<T: Real>(
    mlp: &Mlp,
    params: &mut ParamStore<T>,
    tape: &MlpTape<T>,
    upstream: &[T],
) -> Result<Vec<T>> {
    let view = ArrayView2::from_shape((1, upstream.len()), upstream)
        .map_err(|e| Error::Usage(e.to_string()))?;
    let mut buffer = GradBuffer::for_store(params);
    let dx = mlp.backward(params, tape, view, &mut buffer)?;
    params.accumulate(&buffer);
    Ok(dx.into_raw_vec_and_offset().0)
}
