//! Dense tanh networks with exact analytic gradients.
//!
//! The policy stack needs nothing beyond small scalar-output MLPs, so the
//! layer code is written directly: affine layers with tanh on hidden
//! activations and an identity output, reverse-mode gradients accumulated
//! into a flat parameter vector, and a bias-corrected Adam update over that
//! vector. Gradient correctness is pinned by finite-difference tests.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// One affine layer, weights stored `output x input`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
}

/// Scalar-output multilayer perceptron: tanh hidden layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
}

/// Post-activation values recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    sizes: Vec<usize>,
    input: DVector<f64>,
    hidden: Vec<DVector<f64>>,
}

impl Mlp {
    /// All-zero network of the given layer sizes (at least input and output;
    /// output size must be 1).
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        assert_eq!(*sizes.last().unwrap(), 1, "scalar output only");
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: DMatrix::zeros(w[1], w[0]),
                biases: DVector::zeros(w[1]),
            })
            .collect();
        Self {
            sizes: sizes.to_vec(),
            layers,
        }
    }

    /// Orthogonally initialized network: `hidden_gain` on hidden layers,
    /// `output_gain` on the output layer, zero biases. Deterministic given
    /// the generator state.
    pub fn orthogonal(
        sizes: &[usize],
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut mlp = Self::zeros(sizes);
        let last = mlp.layers.len() - 1;
        for (i, layer) in mlp.layers.iter_mut().enumerate() {
            let gain = if i == last { output_gain } else { hidden_gain };
            layer.weights =
                orthogonal_matrix(layer.weights.nrows(), layer.weights.ncols(), gain, rng);
        }
        mlp
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Total number of weights and biases.
    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Evaluates the network, returning the scalar output and the
    /// activation cache consumed by [`Mlp::backward`].
    pub fn forward(&self, input: &[f64]) -> Result<(f64, ForwardCache)> {
        if input.len() != self.sizes[0] {
            return Err(Error::Input(format!(
                "input length {} does not match network input size {}",
                input.len(),
                self.sizes[0]
            )));
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::Input("non-finite network input".into()));
        }
        let input = DVector::from_column_slice(input);
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut current = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * &current + &layer.biases;
            if i + 1 < self.layers.len() {
                z.apply(|v| *v = v.tanh());
                hidden.push(z.clone());
                current = z;
            } else {
                debug_assert_eq!(z.len(), 1);
                return Ok((
                    z[0],
                    ForwardCache {
                        sizes: self.sizes.clone(),
                        input,
                        hidden,
                    },
                ));
            }
        }
        unreachable!("network has at least one layer")
    }

    /// Scalar output without keeping a cache; input must be finite.
    pub fn eval(&self, input: &[f64]) -> f64 {
        debug_assert!(input.iter().all(|x| x.is_finite()));
        let mut current = DVector::from_column_slice(input);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * &current + &layer.biases;
            if i < last {
                z.apply(|v| *v = v.tanh());
            }
            current = z;
        }
        current[0]
    }

    /// Exact reverse-mode gradient of `output_grad * output` with respect to
    /// every parameter, flattened in the layout of [`Mlp::flatten`].
    pub fn backward(&self, cache: &ForwardCache, output_grad: f64) -> Result<Vec<f64>> {
        if cache.sizes != self.sizes {
            return Err(Error::Protocol(
                "forward cache does not match this network's layout".into(),
            ));
        }
        let n_layers = self.layers.len();
        let mut grad_w: Vec<DMatrix<f64>> = Vec::with_capacity(n_layers);
        let mut grad_b: Vec<DVector<f64>> = Vec::with_capacity(n_layers);

        // delta starts at the identity output and walks backwards through
        // the tanh layers.
        let mut delta = DVector::from_element(1, output_grad);
        for i in (0..n_layers).rev() {
            let upstream = if i == 0 {
                &cache.input
            } else {
                &cache.hidden[i - 1]
            };
            grad_w.push(&delta * upstream.transpose());
            grad_b.push(delta.clone());
            if i > 0 {
                let mut prev = self.layers[i].weights.transpose() * &delta;
                let act = &cache.hidden[i - 1];
                for j in 0..prev.len() {
                    prev[j] *= 1.0 - act[j] * act[j];
                }
                delta = prev;
            }
        }
        grad_w.reverse();
        grad_b.reverse();

        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in grad_w.iter().zip(&grad_b) {
            flat.extend(
                w.row_iter()
                    .flat_map(|r| r.iter().copied().collect::<Vec<_>>()),
            );
            flat.extend(b.iter().copied());
        }
        Ok(flat)
    }

    /// Parameters as a flat vector: per layer, weights row-major then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for row in layer.weights.row_iter() {
                flat.extend(row.iter().copied());
            }
            flat.extend(layer.biases.iter().copied());
        }
        flat
    }

    /// Loads parameters from the flat layout produced by [`Mlp::flatten`].
    pub fn set_from_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Input(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let (rows, cols) = (layer.weights.nrows(), layer.weights.ncols());
            for r in 0..rows {
                for c in 0..cols {
                    layer.weights[(r, c)] = params[offset];
                    offset += 1;
                }
            }
            for r in 0..rows {
                layer.biases[r] = params[offset];
                offset += 1;
            }
        }
        Ok(())
    }
}

/// Random orthogonal matrix scaled by `gain`: orthonormal rows when
/// `rows <= cols`, orthonormal columns otherwise.
fn orthogonal_matrix(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (tall_r, tall_c) = if rows < cols {
        (cols, rows)
    } else {
        (rows, cols)
    };
    let gaussian = DMatrix::from_fn(tall_r, tall_c, |_, _| StandardNormal.sample(rng));
    let qr = gaussian.qr();
    let r_diag: Vec<f64> = (0..tall_c).map(|i| qr.r()[(i, i)]).collect();
    let mut q = qr.q();
    // Sign correction keeps the factorization unique and the distribution
    // uniform over the orthogonal group.
    for (j, d) in r_diag.iter().enumerate() {
        if *d < 0.0 {
            for i in 0..tall_r {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    let oriented = if rows < cols { q.transpose() } else { q };
    oriented * gain
}

/// Bias-corrected Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update in place. Gradients must be finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Input(format!(
                "parameter/gradient length mismatch: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient at parameter index {i}"
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bias1;
            let v_hat = self.second_moment[i] / bias2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }

    /// Moment vectors (first, second), for checkpointing.
    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first_moment, &self.second_moment)
    }

    pub fn restore_moments(
        &mut self,
        first: &[f64],
        second: &[f64],
        step_count: u64,
    ) -> Result<()> {
        if first.len() != self.first_moment.len() || second.len() != self.second_moment.len() {
            return Err(Error::Input("moment length mismatch".into()));
        }
        self.first_moment.copy_from_slice(first);
        self.second_moment.copy_from_slice(second);
        self.step_count = step_count;
        Ok(())
    }
}

/// Versioned text checkpoint: named sections of row-major float lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    sections: Vec<(String, Vec<f64>)>,
}

/// Header line of every checkpoint file.
pub const CHECKPOINT_HEADER: &str = "evosort-ckpt v1";

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, values: Vec<f64>) {
        self.sections.push((name.to_string(), values));
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint missing section `{name}`")))
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        use std::fmt::Write as _;
        let mut out = String::new();
        out.push_str(CHECKPOINT_HEADER);
        out.push('\n');
        for (name, values) in &self.sections {
            writeln!(out, "{name} {}", values.len()).expect("string write");
            for v in values {
                out.push_str(&crate::textio::fmt_f64(*v));
                out.push('\n');
            }
        }
        crate::textio::atomic_write(path, &out)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == CHECKPOINT_HEADER => {}
            other => {
                return Err(Error::Format(format!(
                    "{}: expected header `{CHECKPOINT_HEADER}`, found {other:?}",
                    path.display()
                )))
            }
        }
        let mut sections = Vec::new();
        while let Some(line) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| Error::Format("empty section header".into()))?
                .to_string();
            let count = crate::textio::parse_usize(
                parts
                    .next()
                    .ok_or_else(|| Error::Format(format!("section `{name}` missing count")))?,
            )?;
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                let value_line = lines.next().ok_or_else(|| {
                    Error::Format(format!(
                        "section `{name}` truncated ({count} values expected)"
                    ))
                })?;
                values.push(crate::textio::parse_f64(value_line)?);
            }
            sections.push((name, values));
        }
        Ok(Self { sections })
    }
}
