//! Flat-parameter multilayer perceptron: generic forward pass, cached f64
//! forward pass and layer-wise reverse-mode gradient.

use super::jet::Scalar;

/// Offsets of every layer's weights and biases inside the flat parameter vector.
/// Weights are stored row-major as `out x in`, followed by `out` biases.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl Layout {
    pub fn new(sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for w in sizes.windows(2) {
            offsets.push(acc);
            acc += w[0] * w[1] + w[1];
        }
        offsets.push(acc);
        Self { sizes, offsets }
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn fan_in(&self, l: usize) -> usize {
        self.sizes[l]
    }

    pub fn fan_out(&self, l: usize) -> usize {
        self.sizes[l + 1]
    }

    pub fn weights(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.offsets[l];
        start..start + self.sizes[l] * self.sizes[l + 1]
    }

    pub fn biases(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.offsets[l] + self.sizes[l] * self.sizes[l + 1];
        start..start + self.sizes[l + 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Activation {
    Tanh,
    Sine { omega0: f64 },
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sine { omega0 } => z.scale(omega0).sin(),
        }
    }

    /// Returns (activation, derivative) at `z`.
    #[inline]
    fn eval(self, z: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Sine { omega0 } => {
                let (s, c) = (omega0 * z).sin_cos();
                (s, omega0 * c)
            }
        }
    }
}

/// Per-hidden-layer dropout multipliers (0 or 1/(1-p)).
pub(crate) type Masks = Vec<Vec<f64>>;

/// Forward pass on already-encoded inputs for any scalar type.
pub(crate) fn forward<T: Scalar>(layout: &Layout, theta: &[f64], act: Activation, input: &[T], masks: Option<&Masks>) -> Vec<T> {
    let mut a: Vec<T> = input.to_vec();
    let last = layout.n_layers() - 1;
    for l in 0..layout.n_layers() {
        let (n_in, n_out) = (layout.fan_in(l), layout.fan_out(l));
        let w = &theta[layout.weights(l)];
        let b = &theta[layout.biases(l)];
        let mut next = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            let mut z = T::constant(b[o]);
            for (wi, ai) in row.iter().zip(&a) {
                z = z + ai.scale(*wi);
            }
            if l < last {
                let mut h = act.apply(z);
                if let Some(m) = masks {
                    h = h.scale(m[l][o]);
                }
                next.push(h);
            } else {
                next.push(z);
            }
        }
        a = next;
    }
    a
}

/// Activations kept from a forward pass for the backward sweep.
pub(crate) struct Cache {
    /// Layer inputs: `inputs[l]` feeds layer `l`.
    inputs: Vec<Vec<f64>>,
    /// d(output of hidden layer l)/d(pre-activation), including the dropout multiplier.
    slopes: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub(crate) fn forward_cached(layout: &Layout, theta: &[f64], act: Activation, input: &[f64], masks: Option<&[Vec<f64>]>) -> Cache {
    let n_layers = layout.n_layers();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut slopes = Vec::with_capacity(n_layers - 1);
    let mut a = input.to_vec();
    for l in 0..n_layers {
        let (n_in, n_out) = (layout.fan_in(l), layout.fan_out(l));
        let w = &theta[layout.weights(l)];
        let b = &theta[layout.biases(l)];
        let mut next = vec![0.0; n_out];
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            next[o] = b[o] + row.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>();
        }
        if l + 1 < n_layers {
            let mut slope = vec![0.0; n_out];
            for o in 0..n_out {
                let (h, dh) = act.eval(next[o]);
                let m = masks.map_or(1.0, |m| m[l][o]);
                next[o] = h * m;
                slope[o] = dh * m;
            }
            slopes.push(slope);
        }
        inputs.push(std::mem::replace(&mut a, next));
    }
    Cache { inputs, slopes, output: a }
}

/// Accumulates d(loss)/d(theta) into `grad` given d(loss)/d(output).
pub(crate) fn backward(layout: &Layout, theta: &[f64], cache: &Cache, d_output: &[f64], grad: &mut [f64]) {
    let mut delta = d_output.to_vec();
    for l in (0..layout.n_layers()).rev() {
        let (n_in, n_out) = (layout.fan_in(l), layout.fan_out(l));
        if l + 1 < layout.n_layers() {
            for (d, s) in delta.iter_mut().zip(&cache.slopes[l]) {
                *d *= s;
            }
        }
        let input = &cache.inputs[l];
        let wr = layout.weights(l);
        let br = layout.biases(l);
        {
            let gw = &mut grad[wr.clone()];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
        }
        for (g, d) in grad[br].iter_mut().zip(&delta) {
            *g += d;
        }
        if l > 0 {
            let w = &theta[wr];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
            }
            delta = prev;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_counts() {
        let l = Layout::new(vec![13, 64, 64, 64, 1]);
        assert_eq!(l.n_params(), 13 * 64 + 64 + 2 * (64 * 64 + 64) + 64 + 1);
        assert_eq!(l.weights(0), 0..13 * 64);
        assert_eq!(l.biases(3), l.n_params() - 1..l.n_params());
    }

    #[test]
    fn cached_forward_matches_generic() {
        let layout = Layout::new(vec![3, 5, 4, 2]);
        let theta: Vec<f64> = (0..layout.n_params()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let x = [0.3, -0.2, 0.9];
        for act in [Activation::Tanh, Activation::Sine { omega0: 3.0 }] {
            let a = forward::<f64>(&layout, &theta, act, &x, None);
            let b = forward_cached(&layout, &theta, act, &x, None).output;
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }
}
