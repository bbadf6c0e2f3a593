//! Dense feed-forward networks with reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>` laid out layer by layer: the
//! weight matrix (row-major, `out x in`) followed by the bias vector. The
//! same layout is used by gradient records, optimizer state, and the text
//! serialization, so the pieces compose without bookkeeping.

use std::io::{BufRead, Write};

use rand::distr::{Distribution, Uniform};

use super::Activation;
use crate::error::{Error, Result};
use crate::rng;

/// A dense multi-layer perceptron.
///
/// `sizes` holds the input dimension followed by every layer's output
/// dimension; `activations` holds one activation per layer. Two networks
/// constructed with the same sizes, activations, and seed have bit-identical
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Result of a reverse-mode sweep: the forward output, the gradient of
/// `cotangent . output` with respect to every parameter (flat, aligned with
/// [`Mlp::params`]), and with respect to the input.
#[derive(Debug, Clone)]
pub struct MlpBackward {
    pub output: Vec<f64>,
    pub param_grads: Vec<f64>,
    pub input_grads: Vec<f64>,
}

/// Intermediate values of a forward pass, kept so a backward sweep does not
/// have to re-run it. Produced by [`Mlp::forward_trace`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    layer_inputs: Vec<Vec<f64>>,
    pre_acts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl Mlp {
    /// Builds a network whose hidden layers use `hidden` and whose output
    /// layer is linear. This is the shape used for all distribution-parameter
    /// heads.
    pub fn new(sizes: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        let n_layers = Self::check_sizes(sizes)?;
        let mut acts = vec![hidden; n_layers];
        acts[n_layers - 1] = Activation::Identity;
        Ok(Self::init(sizes, acts, seed, false))
    }

    /// Builds a network with `act` applied after every layer, including the
    /// last one.
    pub fn uniform(sizes: &[usize], act: Activation, seed: u64) -> Result<Self> {
        let n_layers = Self::check_sizes(sizes)?;
        Ok(Self::init(sizes, vec![act; n_layers], seed, false))
    }

    /// Like [`Mlp::uniform`], but with the positivity constraint on weights:
    /// every weight is replaced by its absolute value at initialization.
    /// With a strictly increasing activation this makes any 1-d chain
    /// through the network strictly increasing.
    pub fn monotone(sizes: &[usize], act: Activation, seed: u64) -> Result<Self> {
        let n_layers = Self::check_sizes(sizes)?;
        Ok(Self::init(sizes, vec![act; n_layers], seed, true))
    }

    fn check_sizes(sizes: &[usize]) -> Result<usize> {
        if sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "an Mlp needs at least an input and an output size".into(),
            ));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        Ok(sizes.len() - 1)
    }

    fn init(sizes: &[usize], activations: Vec<Activation>, seed: u64, positive: bool) -> Self {
        let mut params = Vec::with_capacity(Self::count_params(sizes));
        let mut r = rng::seeded(seed);
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new(-limit, limit).expect("valid init range");
            for _ in 0..fan_in * fan_out {
                let w: f64 = dist.sample(&mut r);
                params.push(if positive { w.abs() } else { w });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            activations,
            params,
        }
    }

    fn count_params(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Zeroes every weight and bias. Handy for constructing constant heads.
    pub fn zero_params(&mut self) {
        self.params.fill(0.0);
    }

    /// Offset of layer `l`'s weight block in the flat parameter buffer.
    pub fn weight_offset(&self, layer: usize) -> usize {
        let mut off = 0;
        for l in 0..layer {
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        off
    }

    /// Offset of layer `l`'s bias block in the flat parameter buffer.
    pub fn bias_offset(&self, layer: usize) -> usize {
        self.weight_offset(layer) + self.sizes[layer] * self.sizes[layer + 1]
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Evaluates the network. Pure: no parameter mutation, deterministic in
    /// (parameters, input).
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut h = input.to_vec();
        let mut off = 0;
        for l in 0..self.sizes.len() - 1 {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activations[l];
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let row = &self.params[off + o * fan_in..off + (o + 1) * fan_in];
                let mut z = self.params[off + fan_in * fan_out + o];
                for (w, x) in row.iter().zip(&h) {
                    z += w * x;
                }
                next.push(act.apply(z));
            }
            h = next;
            off += fan_in * fan_out + fan_out;
        }
        Ok(h)
    }

    /// Forward pass that keeps each layer's inputs and pre-activations so a
    /// backward sweep can run without re-evaluating the network.
    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let n_layers = self.sizes.len() - 1;
        let mut layer_inputs: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut pre_acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut h = input.to_vec();
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut z = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let row = &self.params[off + o * fan_in..off + (o + 1) * fan_in];
                let mut s = self.params[off + fan_in * fan_out + o];
                for (w, x) in row.iter().zip(&h) {
                    s += w * x;
                }
                z.push(s);
            }
            let act = self.activations[l];
            layer_inputs.push(h);
            h = z.iter().map(|&v| act.apply(v)).collect();
            pre_acts.push(z);
            off += fan_in * fan_out + fan_out;
        }
        Ok(ForwardTrace {
            layer_inputs,
            pre_acts,
            output: h,
        })
    }

    /// Reverse sweep over a stored forward trace, accumulating parameter
    /// gradients into `param_grads` (`+=`) and overwriting `input_grads`.
    /// This is the allocation-free path used by training loops that sum
    /// gradients over a batch.
    pub fn backward_from_trace_into(
        &self,
        trace: &ForwardTrace,
        cotangent: &[f64],
        param_grads: &mut [f64],
        input_grads: &mut Vec<f64>,
    ) -> Result<()> {
        if cotangent.len() != self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "cotangent has length {}, network output is {}",
                cotangent.len(),
                self.output_dim()
            )));
        }
        if param_grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient buffer has length {}, network has {} parameters",
                param_grads.len(),
                self.params.len()
            )));
        }
        let n_layers = self.sizes.len() - 1;
        let mut d_h = cotangent.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.weight_offset(l);
            let act = self.activations[l];
            let inputs = &trace.layer_inputs[l];
            let mut d_prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d_z = d_h[o] * act.derivative(trace.pre_acts[l][o]);
                param_grads[off + fan_in * fan_out + o] += d_z;
                let row = off + o * fan_in;
                let wrow = &self.params[row..row + fan_in];
                let grow = &mut param_grads[row..row + fan_in];
                for i in 0..fan_in {
                    grow[i] += d_z * inputs[i];
                    d_prev[i] += wrow[i] * d_z;
                }
            }
            d_h = d_prev;
        }
        *input_grads = d_h;
        Ok(())
    }

    /// Reverse sweep over a stored forward trace.
    pub fn backward_from_trace(
        &self,
        trace: &ForwardTrace,
        cotangent: &[f64],
    ) -> Result<MlpBackward> {
        let mut param_grads = vec![0.0; self.params.len()];
        let mut input_grads = Vec::new();
        self.backward_from_trace_into(trace, cotangent, &mut param_grads, &mut input_grads)?;
        Ok(MlpBackward {
            output: trace.output.clone(),
            param_grads,
            input_grads,
        })
    }

    /// Reverse-mode sweep: returns the forward output together with the
    /// gradient of `cotangent . output` with respect to every parameter and
    /// with respect to the input.
    pub fn backward(&self, input: &[f64], cotangent: &[f64]) -> Result<MlpBackward> {
        let trace = self.forward_trace(input)?;
        self.backward_from_trace(&trace, cotangent)
    }

    /// Writes the parameter snapshot as a text record: a header line with the
    /// layer sizes and activations, then one parameter per line in layout
    /// order. Floats are printed in shortest round-trip form, so reading the
    /// record back reproduces the parameters bit for bit.
    pub fn write_record<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "mlp {}", self.sizes.len())?;
        for s in &self.sizes {
            write!(w, " {s}")?;
        }
        for a in &self.activations {
            write!(w, " {}", a.name())?;
        }
        writeln!(w)?;
        for p in &self.params {
            writeln!(w, "{p}")?;
        }
        Ok(())
    }

    /// Reads a record produced by [`Mlp::write_record`].
    pub fn read_record<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("mlp") {
            return Err(Error::Parse {
                line: 1,
                msg: "expected an 'mlp' record header".into(),
            });
        }
        let bad = |msg: &str| Error::Parse {
            line: 1,
            msg: msg.into(),
        };
        let n_sizes: usize = fields
            .next()
            .ok_or_else(|| bad("missing size count"))?
            .parse()
            .map_err(|_| bad("bad size count"))?;
        let mut sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            sizes.push(
                fields
                    .next()
                    .ok_or_else(|| bad("missing layer size"))?
                    .parse()
                    .map_err(|_| bad("bad layer size"))?,
            );
        }
        Self::check_sizes(&sizes)?;
        let mut activations = Vec::with_capacity(n_sizes - 1);
        for _ in 0..n_sizes - 1 {
            let name = fields.next().ok_or_else(|| bad("missing activation"))?;
            activations.push(Activation::from_name(name).ok_or_else(|| bad("unknown activation"))?);
        }
        let count = Self::count_params(&sizes);
        let mut params = Vec::with_capacity(count);
        let mut line = String::new();
        for i in 0..count {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: "record truncated".into(),
                });
            }
            params.push(line.trim().parse().map_err(|_| Error::Parse {
                line: i + 2,
                msg: format!("bad parameter value {:?}", line.trim()),
            })?);
        }
        Ok(Self {
            sizes,
            activations,
            params,
        })
    }
}

/// Evaluates a scalar-to-scalar network on a grid and reports whether it is
/// strictly increasing there.
#[cfg(test)]
pub(crate) fn strictly_increasing_on_grid(net: &Mlp, lo: f64, hi: f64, steps: usize) -> bool {
    assert_eq!(net.input_dim(), 1);
    assert_eq!(net.output_dim(), 1);
    let mut prev = f64::NEG_INFINITY;
    for k in 0..=steps {
        let x = lo + (hi - lo) * k as f64 / steps as f64;
        let v = net.forward(&[x]).expect("1-d forward")[0];
        if v <= prev {
            return false;
        }
        prev = v;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufReader;

    fn identity_net(dim: usize) -> Mlp {
        let mut net = Mlp::uniform(&[dim, dim], Activation::Identity, 0).unwrap();
        net.zero_params();
        for i in 0..dim {
            net.params_mut()[i * dim + i] = 1.0;
        }
        net
    }

    #[test]
    fn identity_network_maps_input_to_itself() {
        let net = identity_net(2);
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let mut net = Mlp::uniform(&[2, 2], Activation::Relu, 0).unwrap();
        net.zero_params();
        net.params_mut()[0] = 1.0; // w[0][0]
        net.params_mut()[3] = 1.0; // w[1][1]
        net.params_mut()[4] = -3.0; // b[0]
        net.params_mut()[5] = 0.0; // b[1]
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn seeded_forward_matches_hand_trace() {
        // Independent trace of the two layers using the documented layout.
        let net = Mlp::uniform(&[2, 4, 1], Activation::Relu, 9).unwrap();
        let input = [0.5, -0.5];
        let p = net.params();
        let mut hidden = [0.0; 4];
        for o in 0..4 {
            let z = p[o * 2] * input[0] + p[o * 2 + 1] * input[1] + p[8 + o];
            hidden[o] = if z > 0.0 { z } else { 0.0 };
        }
        let off = net.weight_offset(1);
        let mut out = p[net.bias_offset(1)];
        for (i, &h) in hidden.iter().enumerate() {
            out += p[off + i] * h;
        }
        out = out.max(0.0);
        let got = net.forward(&input).unwrap();
        assert!((got[0] - out).abs() < 1e-15, "{} vs {out}", got[0]);
    }

    #[test]
    fn construction_is_deterministic_in_seed() {
        let a = Mlp::new(&[3, 8, 2], Activation::Relu, 1234).unwrap();
        let b = Mlp::new(&[3, 8, 2], Activation::Relu, 1234).unwrap();
        let c = Mlp::new(&[3, 8, 2], Activation::Relu, 1235).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn forward_output_dimension_matches_last_layer() {
        let net = Mlp::new(&[3, 5, 7, 2], Activation::Relu, 3).unwrap();
        assert_eq!(net.forward(&[0.1, 0.2, 0.3]).unwrap().len(), 2);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let net = Mlp::new(&[3, 2], Activation::Identity, 0).unwrap();
        let err = net.forward(&[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)), "{err}");
    }

    #[test]
    fn backward_identity_single_layer() {
        // 1-d linear layer y = w x + b: d(w) = x, d(b) = 1.
        let mut net = Mlp::uniform(&[1, 1], Activation::Identity, 0).unwrap();
        net.zero_params();
        net.params_mut()[0] = 1.0;
        let back = net.backward(&[3.0], &[1.0]).unwrap();
        assert_eq!(back.param_grads, vec![3.0, 1.0]);
        assert_eq!(back.input_grads, vec![1.0]);
    }

    #[test]
    fn backward_zero_cotangent_gives_zero_gradients() {
        let net = Mlp::new(&[3, 8, 2], Activation::Relu, 5).unwrap();
        let back = net.backward(&[0.2, -0.4, 0.9], &[0.0, 0.0]).unwrap();
        assert!(back.param_grads.iter().all(|&g| g == 0.0));
        assert!(back.input_grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_matches_central_finite_differences() {
        for (act, seed) in [
            (Activation::Relu, 11),
            (Activation::Identity, 12),
            (Activation::SmoothInvertible, 13),
        ] {
            let mut net = Mlp::new(&[3, 8, 2], act, seed).unwrap();
            let input = [0.31, -0.62, 0.47];
            let cot = [1.0, -0.5];
            let back = net.backward(&input, &cot).unwrap();

            let h = 1e-5;
            for p in 0..net.param_count() {
                let orig = net.params()[p];
                net.params_mut()[p] = orig + h;
                let up: f64 = net
                    .forward(&input)
                    .unwrap()
                    .iter()
                    .zip(&cot)
                    .map(|(o, c)| o * c)
                    .sum();
                net.params_mut()[p] = orig - h;
                let dn: f64 = net
                    .forward(&input)
                    .unwrap()
                    .iter()
                    .zip(&cot)
                    .map(|(o, c)| o * c)
                    .sum();
                net.params_mut()[p] = orig;
                let numeric = (up - dn) / (2.0 * h);
                let analytic = back.param_grads[p];
                let scale = analytic.abs().max(numeric.abs()).max(1.0);
                assert!(
                    (analytic - numeric).abs() / scale < 1e-4,
                    "{act:?} param {p}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn monotone_net_is_strictly_increasing() {
        let net = Mlp::monotone(&[1, 16, 16, 1], Activation::SmoothInvertible, 77).unwrap();
        assert!(strictly_increasing_on_grid(&net, -5.0, 5.0, 400));
    }

    #[test]
    fn record_round_trip_is_bit_exact() {
        let net = Mlp::new(&[4, 6, 3], Activation::SmoothInvertible, 2024).unwrap();
        let mut buf = Vec::new();
        net.write_record(&mut buf).unwrap();
        let read = Mlp::read_record(&mut BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(net, read);
    }
}
