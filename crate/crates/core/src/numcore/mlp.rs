use super::rng::Rng;
use super::tape::{Matrix, Param, Tape, Var};

/// Fully connected network: ReLU hidden layers, identity output.
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    // weights [in, out] and biases [1, out], interleaved per layer
    params: Vec<Param>,
}

impl Mlp {
    /// `widths` lists every layer width including input and output.
    ///
    /// Weights and biases start uniform in `±1/sqrt(fan_in)`.
    pub fn new(widths: &[usize], rng: &mut Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let mut params = Vec::with_capacity(2 * (widths.len() - 1));
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Matrix::from_shape_simple_fn((fan_in, fan_out), || rng.uniform_range(-bound, bound));
            let b = Matrix::from_shape_simple_fn((1, fan_out), || rng.uniform_range(-bound, bound));
            params.push(Param::new(w));
            params.push(Param::new(b));
        }
        Self {
            widths: widths.to_vec(),
            params,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.params.iter_mut().collect()
    }

    /// Same weights under new parameter identities.
    pub fn fresh_copy(&self) -> Self {
        Self {
            widths: self.widths.clone(),
            params: self.params.iter().map(Param::fresh_copy).collect(),
        }
    }

    /// Forward pass with the weights attached to the graph.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        self.run(tape, x, true)
    }

    /// Forward pass with the weights entered as constants. Gradients still
    /// flow into `x` if it is attached.
    pub fn forward_frozen(&self, tape: &mut Tape, x: Var) -> Var {
        self.run(tape, x, false)
    }

    /// Plain evaluation without recording a graph.
    pub fn eval(&self, x: &Matrix) -> Matrix {
        let mut h = x.clone();
        let layers = self.params.len() / 2;
        for (i, wb) in self.params.chunks(2).enumerate() {
            h = h.dot(&wb[0].value) + &wb[1].value;
            if i + 1 < layers {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        h
    }

    fn run(&self, tape: &mut Tape, x: Var, attach: bool) -> Var {
        let layers = self.params.len() / 2;
        let mut h = x;
        for (i, wb) in self.params.chunks(2).enumerate() {
            let (w, b) = if attach {
                (tape.param(&wb[0]), tape.param(&wb[1]))
            } else {
                (tape.frozen(&wb[0]), tape.frozen(&wb[1]))
            };
            let z = tape.matmul(h, w);
            h = tape.add(z, b);
            if i + 1 < layers {
                h = tape.relu(h);
            }
        }
        h
    }

    /// `self := tau * online + (1 - tau) * self`, elementwise.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        assert_eq!(self.widths, online.widths, "soft update across different architectures");
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            t.value.zip_mut_with(&o.value, |t, &o| *t = tau * o + (1.0 - tau) * *t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_shapes_chain() {
        let mut rng = Rng::new(0);
        let net = Mlp::new(&[3, 16, 16, 2], &mut rng);
        for (i, wb) in net.params().chunks(2).enumerate() {
            assert_eq!(wb[0].value.dim(), (net.widths()[i], net.widths()[i + 1]));
            assert_eq!(wb[1].value.dim(), (1, net.widths()[i + 1]));
        }
    }

    #[test]
    fn init_within_fan_in_bound() {
        let mut rng = Rng::new(1);
        let net = Mlp::new(&[4, 9, 1], &mut rng);
        assert!(net.params()[0].value.iter().all(|v| v.abs() <= 0.5));
        assert!(net.params()[2].value.iter().all(|v| v.abs() <= 1.0 / 3.0));
    }

    #[test]
    fn eval_matches_tape_forward() {
        let mut rng = Rng::new(2);
        let net = Mlp::new(&[3, 8, 2], &mut rng);
        let x = Matrix::from_shape_simple_fn((5, 3), || rng.normal());
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = net.forward(&mut tape, xv);
        let diff = (tape.value(y) - &net.eval(&x)).mapv(f64::abs).sum();
        assert!(diff < 1e-12);
    }

    #[test]
    fn soft_update_endpoints() {
        let mut rng = Rng::new(3);
        let online = Mlp::new(&[2, 4, 1], &mut rng);
        let mut target = Mlp::new(&[2, 4, 1], &mut rng);
        let before = target.clone();
        target.soft_update_from(&online, 0.0);
        assert_eq!(target.params()[0].value, before.params()[0].value);
        target.soft_update_from(&online, 1.0);
        assert_eq!(target.params()[0].value, online.params()[0].value);
    }
}
