//! Sine-activated coordinate MLP with hand-written reverse mode.
//!
//! Hidden layers compute `sin(omega0 * (W x + b))`; the output layer is linear
//! and its two channels are mapped to amplitude and phase by a [`Head`].
//! Coordinates are processed in fixed-size chunks so that the reduction of
//! parameter gradients happens in the same order whatever the thread count.

mod checkpoint;
mod coords;

use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{dim_err, param_err, Error, Result};
use crate::grid::RealGrid;
use crate::object::ObjectEstimate;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use coords::{make_coordinates, CoordinateGrid};

pub const DEFAULT_OMEGA0: f64 = 30.0;
pub const DEFAULT_HIDDEN: [usize; 3] = [256, 256, 256];

/// Coordinates per forward/backward work unit.
const CHUNK: usize = 512;

/// Mapping from the two raw output channels to amplitude and phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// `|tanh(o1)|`, `pi * tanh(o2)`
    #[default]
    TanhAbs,
    /// `(tanh(o1) + 1) / 2`, `pi * tanh(o2)`
    TanhShift,
    /// `|clamp(o1)|`, `pi * clamp(o2)` with clamp onto `[-1, 1]`
    ClampAbs,
}

impl Head {
    pub fn as_str(self) -> &'static str {
        match self {
            Head::TanhAbs => "tanh-abs",
            Head::TanhShift => "tanh-shift",
            Head::ClampAbs => "clamp-abs",
        }
    }

    /// Amplitude and its derivative with respect to the raw output.
    #[inline]
    fn amplitude(self, o: f64) -> (f64, f64) {
        match self {
            Head::TanhAbs => {
                let t = o.tanh();
                (t.abs(), sign(t) * (1.0 - t * t))
            }
            Head::TanhShift => {
                let t = o.tanh();
                ((t + 1.0) / 2.0, (1.0 - t * t) / 2.0)
            }
            Head::ClampAbs => {
                let t = o.clamp(-1.0, 1.0);
                (t.abs(), if o.abs() < 1.0 { sign(o) } else { 0.0 })
            }
        }
    }

    #[inline]
    fn phase(self, o: f64) -> (f64, f64) {
        match self {
            Head::TanhAbs | Head::TanhShift => {
                let t = o.tanh();
                (PI * t, PI * (1.0 - t * t))
            }
            Head::ClampAbs => (PI * o.clamp(-1.0, 1.0), if o.abs() < 1.0 { PI } else { 0.0 }),
        }
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh-abs" => Ok(Head::TanhAbs),
            "tanh-shift" => Ok(Head::TanhShift),
            "clamp-abs" => Ok(Head::ClampAbs),
            other => param_err(format!("unknown head `{other}`")),
        }
    }
}

/// Zero subgradient at the kink of `|x|`.
#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Fully connected layer, weight stored `outputs × inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

struct ChunkCache {
    /// Input to every layer, `inputs[0]` being the coordinates.
    inputs: Vec<Array2<f64>>,
    /// `omega0 * cos(omega0 * z)` for every hidden layer.
    dsin: Vec<Array2<f64>>,
    out: Array2<f64>,
}

impl Mlp {
    fn init(rng: &mut ChaCha8Rng, hidden: &[usize], outputs: usize, omega0: f64) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(2);
        widths.extend_from_slice(hidden);
        widths.push(outputs);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = if k == 0 {
                    1.0 / fan_in as f64
                } else {
                    (6.0 / fan_in as f64).sqrt() / omega0
                };
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..=bound));
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.outputs(), l.inputs()))
                .collect(),
        }
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Weight then bias of every layer, in layer order.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weight.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weight.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    fn validate(&self, outputs: usize) -> Result<()> {
        let Some(first) = self.layers.first() else {
            return dim_err("network has no layers");
        };
        if first.inputs() != 2 {
            return dim_err(format!("first layer takes {} inputs, expected 2", first.inputs()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return dim_err("layer widths do not chain");
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.outputs() {
                return dim_err("bias length does not match layer width");
            }
        }
        if self.outputs() != outputs {
            return dim_err(format!("network emits {} channels, expected {outputs}", self.outputs()));
        }
        Ok(())
    }

    fn forward_chunk(&self, x: Array2<f64>, omega0: f64) -> ChunkCache {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut dsin = Vec::with_capacity(last);
        let mut a = x;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            inputs.push(a);
            if k == last {
                return ChunkCache { inputs, dsin, out: z };
            }
            let mut d = Array2::zeros(z.raw_dim());
            ndarray::Zip::from(&mut z).and(&mut d).for_each(|zv, dv| {
                let (s, c) = (omega0 * *zv).sin_cos();
                *zv = s;
                *dv = omega0 * c;
            });
            dsin.push(d);
            a = z;
        }
        unreachable!("networks always have an output layer")
    }

    fn backward_chunk(&self, cache: &ChunkCache, d_out: Array2<f64>) -> Mlp {
        let mut grads = self.zeros_like();
        let mut dz = d_out;
        for k in (0..self.layers.len()).rev() {
            grads.layers[k].weight = dz.t().dot(&cache.inputs[k]);
            grads.layers[k].bias = dz.sum_axis(Axis(0));
            if k > 0 {
                let mut da = dz.dot(&self.layers[k].weight);
                da *= &cache.dsin[k - 1];
                dz = da;
            }
        }
        grads
    }

    fn add_assign(&mut self, other: &Mlp) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }
}

/// Parameters of the coordinate network.
///
/// With `twin` present, `net` emits the amplitude channel and `twin` the
/// phase channel, one output unit each.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub net: Mlp,
    pub twin: Option<Mlp>,
    pub omega0: f64,
    pub head: Head,
    pub seed: u64,
}

/// Gradient with the same layout as [`NetworkParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGrads {
    pub net: Mlp,
    pub twin: Option<Mlp>,
}

impl NetworkGrads {
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.net.tensors().chain(self.twin.iter().flat_map(Mlp::tensors))
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|&v| v == 0.0))
    }
}

fn validate_init(hidden: &[usize], omega0: f64) -> Result<()> {
    if hidden.is_empty() || hidden.contains(&0) {
        return param_err("hidden layer widths must be non-empty and positive");
    }
    if !(omega0 > 0.0) || !omega0.is_finite() {
        return param_err(format!("omega0 must be positive, got {omega0}"));
    }
    Ok(())
}

/// Single network with two output channels.
pub fn init_network(seed: u64, hidden: &[usize], omega0: f64, head: Head) -> Result<NetworkParams> {
    validate_init(hidden, omega0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(NetworkParams {
        net: Mlp::init(&mut rng, hidden, 2, omega0),
        twin: None,
        omega0,
        head,
        seed,
    })
}

/// Separate single-channel networks for amplitude and phase.
pub fn init_twin_network(seed: u64, hidden: &[usize], omega0: f64, head: Head) -> Result<NetworkParams> {
    validate_init(hidden, omega0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Mlp::init(&mut rng, hidden, 1, omega0);
    let twin = Mlp::init(&mut rng, hidden, 1, omega0);
    Ok(NetworkParams {
        net,
        twin: Some(twin),
        omega0,
        head,
        seed,
    })
}

/// Activations retained from a forward pass for the matching backward pass.
pub struct ForwardCache {
    rows: usize,
    cols: usize,
    net: Vec<ChunkCache>,
    twin: Option<Vec<ChunkCache>>,
    raw_amp: Vec<f64>,
    raw_phase: Vec<f64>,
}

impl NetworkParams {
    pub fn param_count(&self) -> usize {
        self.net.param_count() + self.twin.as_ref().map_or(0, Mlp::param_count)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.net.tensors().chain(self.twin.iter().flat_map(Mlp::tensors))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.net
            .tensors_mut()
            .chain(self.twin.iter_mut().flat_map(Mlp::tensors_mut))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.twin {
            None => self.net.validate(2),
            Some(twin) => {
                self.net.validate(1)?;
                twin.validate(1)
            }
        }
    }

    fn run_chunks(&self, mlp: &Mlp, coords: &CoordinateGrid) -> Vec<ChunkCache> {
        let n = coords.len();
        let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
        starts
            .into_par_iter()
            .map(|s| mlp.forward_chunk(coords.batch(s, (s + CHUNK).min(n)), self.omega0))
            .collect()
    }

    /// Forward pass that keeps the activations needed by [`NetworkParams::backward`].
    pub fn forward(&self, coords: &CoordinateGrid) -> Result<(ObjectEstimate, ForwardCache)> {
        self.validate()?;
        let net = self.run_chunks(&self.net, coords);
        let twin = self.twin.as_ref().map(|t| self.run_chunks(t, coords));

        let n = coords.len();
        let mut raw_amp = Vec::with_capacity(n);
        let mut raw_phase = Vec::with_capacity(n);
        match &twin {
            None => {
                for chunk in &net {
                    for row in chunk.out.rows() {
                        raw_amp.push(row[0]);
                        raw_phase.push(row[1]);
                    }
                }
            }
            Some(twin) => {
                raw_amp.extend(net.iter().flat_map(|c| c.out.iter().copied()));
                raw_phase.extend(twin.iter().flat_map(|c| c.out.iter().copied()));
            }
        }
        let (rows, cols) = (coords.rows(), coords.cols());
        let amplitude = RealGrid::from_vec(rows, cols, raw_amp.iter().map(|&o| self.head.amplitude(o).0).collect())?;
        let phase = RealGrid::from_vec(rows, cols, raw_phase.iter().map(|&o| self.head.phase(o).0).collect())?;
        let cache = ForwardCache {
            rows,
            cols,
            net,
            twin,
            raw_amp,
            raw_phase,
        };
        Ok((ObjectEstimate { amplitude, phase }, cache))
    }

    /// Parameter gradient given cotangents of the amplitude and phase planes.
    pub fn backward(&self, cache: &ForwardCache, amp_cot: &RealGrid, phase_cot: &RealGrid) -> Result<NetworkGrads> {
        amp_cot.ensure_shape(cache.rows, cache.cols)?;
        phase_cot.ensure_shape(cache.rows, cache.cols)?;
        let d_amp: Vec<f64> = cache
            .raw_amp
            .iter()
            .zip(amp_cot.data())
            .map(|(&o, &g)| g * self.head.amplitude(o).1)
            .collect();
        let d_phase: Vec<f64> = cache
            .raw_phase
            .iter()
            .zip(phase_cot.data())
            .map(|(&o, &g)| g * self.head.phase(o).1)
            .collect();

        let grads = match (&self.twin, &cache.twin) {
            (None, _) => reduce(&self.net, &cache.net, |start, len| {
                Array2::from_shape_fn(
                    (len, 2),
                    |(r, k)| if k == 0 { d_amp[start + r] } else { d_phase[start + r] },
                )
            }),
            (Some(_), None) => return dim_err("cache was produced without the twin network"),
            (Some(twin), Some(twin_cache)) => {
                let net = reduce(&self.net, &cache.net, |s, len| column(&d_amp[s..s + len]));
                let twin = reduce(twin, twin_cache, |s, len| column(&d_phase[s..s + len]));
                return Ok(NetworkGrads { net, twin: Some(twin) });
            }
        };
        Ok(NetworkGrads { net: grads, twin: None })
    }
}

fn column(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape")
}

/// Per-chunk gradients summed in chunk order.
fn reduce(mlp: &Mlp, chunks: &[ChunkCache], d_out: impl Fn(usize, usize) -> Array2<f64> + Sync) -> Mlp {
    let partials: Vec<Mlp> = chunks
        .par_iter()
        .enumerate()
        .map(|(i, chunk)| mlp.backward_chunk(chunk, d_out(i * CHUNK, chunk.out.nrows())))
        .collect();
    let mut total = mlp.zeros_like();
    for p in &partials {
        total.add_assign(p);
    }
    total
}

pub fn net_forward(params: &NetworkParams, coords: &CoordinateGrid) -> Result<ObjectEstimate> {
    params.forward(coords).map(|(est, _)| est)
}

pub fn net_backward(
    params: &NetworkParams,
    coords: &CoordinateGrid,
    amp_cot: &RealGrid,
    phase_cot: &RealGrid,
) -> Result<NetworkGrads> {
    let (_, cache) = params.forward(coords)?;
    params.backward(&cache, amp_cot, phase_cot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_real_grid;

    #[test]
    fn init_is_deterministic() {
        let a = init_network(7, &[16, 16], 30.0, Head::TanhAbs).unwrap();
        let b = init_network(7, &[16, 16], 30.0, Head::TanhAbs).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_network(8, &[16, 16], 30.0, Head::TanhAbs).unwrap());
    }

    #[test]
    fn default_shapes() {
        let p = init_network(0, &DEFAULT_HIDDEN, DEFAULT_OMEGA0, Head::TanhAbs).unwrap();
        let shapes: Vec<_> = p.net.layers.iter().map(|l| l.weight.dim()).collect();
        assert_eq!(shapes, vec![(256, 2), (256, 256), (256, 256), (2, 256)]);
        assert!(p.net.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_bounds() {
        let p = init_network(3, &DEFAULT_HIDDEN, 30.0, Head::TanhAbs).unwrap();
        let bound = (6.0f64 / 256.0).sqrt() / 30.0;
        assert!((bound - 0.0051).abs() < 1e-4);
        let first_max = p.net.layers[0].weight.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(first_max <= 0.5 && first_max > 0.45);
        for layer in &p.net.layers[1..] {
            let m = layer.weight.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(m <= bound && m > 0.9 * bound);
        }
    }

    #[test]
    fn invalid_init_rejected() {
        assert!(init_network(0, &[], 30.0, Head::TanhAbs).is_err());
        assert!(init_network(0, &[4], 0.0, Head::TanhAbs).is_err());
    }

    #[test]
    fn zero_output_layer_gives_zero_object() {
        let mut p = init_network(1, &[8, 8], 30.0, Head::TanhAbs).unwrap();
        p.net.layers.last_mut().unwrap().weight.fill(0.0);
        let coords = make_coordinates(5, 4, 0.1).unwrap();
        let est = net_forward(&p, &coords).unwrap();
        assert!(est.amplitude.data().iter().all(|&v| v == 0.0));
        assert!(est.phase.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_single_unit() {
        let mut p = init_network(0, &[1], 30.0, Head::TanhAbs).unwrap();
        p.net.layers[0].weight = Array2::from_shape_vec((1, 2), vec![0.5, -0.25]).unwrap();
        p.net.layers[0].bias = Array1::from_vec(vec![0.1]);
        p.net.layers[1].weight = Array2::from_shape_vec((2, 1), vec![0.8, -1.3]).unwrap();
        p.net.layers[1].bias = Array1::from_vec(vec![0.05, 0.2]);
        let coords = make_coordinates(1, 1, 1.0).unwrap();
        let est = net_forward(&p, &coords).unwrap();
        // coordinate (0, 0): hidden = sin(30 * 0.1) = sin(3)
        let h = 3.0f64.sin();
        let amp = (0.8 * h + 0.05f64).tanh().abs();
        let phase = PI * (-1.3 * h + 0.2f64).tanh();
        assert!((est.amplitude.data()[0] - amp).abs() < 1e-15);
        assert!((est.phase.data()[0] - phase).abs() < 1e-15);
    }

    #[test]
    fn head_ranges_hold_for_large_weights() {
        for head in [Head::TanhAbs, Head::TanhShift, Head::ClampAbs] {
            let mut p = init_network(5, &[8], 30.0, head).unwrap();
            for t in p.tensors_mut() {
                for v in t.iter_mut() {
                    *v *= 50.0;
                }
            }
            let est = net_forward(&p, &make_coordinates(6, 6, 1.0).unwrap()).unwrap();
            assert!(est.amplitude.data().iter().all(|&a| (0.0..=1.0).contains(&a)));
            assert!(est.phase.data().iter().all(|&v| (-PI..=PI).contains(&v)));
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let p = init_network(2, &[6, 6], 30.0, Head::TanhAbs).unwrap();
        let coords = make_coordinates(4, 4, 0.5).unwrap();
        let z = RealGrid::zeros(4, 4);
        assert!(net_backward(&p, &coords, &z, &z).unwrap().is_zero());
    }

    #[test]
    fn twin_amplitude_gradient_stays_in_first_network() {
        let p = init_twin_network(2, &[6, 6], 30.0, Head::TanhAbs).unwrap();
        let coords = make_coordinates(4, 4, 0.5).unwrap();
        let amp = random_real_grid(4, 4, -1.0, 1.0, 1);
        let g = net_backward(&p, &coords, &amp, &RealGrid::zeros(4, 4)).unwrap();
        assert!(g.twin.as_ref().unwrap().tensors().all(|t| t.iter().all(|&v| v == 0.0)));
        assert!(!g.net.tensors().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn cotangent_shape_checked() {
        let p = init_network(2, &[4], 30.0, Head::TanhAbs).unwrap();
        let coords = make_coordinates(3, 3, 0.5).unwrap();
        let bad = RealGrid::zeros(2, 3);
        assert!(net_backward(&p, &coords, &bad, &RealGrid::zeros(3, 3)).is_err());
    }

    #[test]
    fn head_names_round_trip() {
        for head in [Head::TanhAbs, Head::TanhShift, Head::ClampAbs] {
            assert_eq!(head.as_str().parse::<Head>().unwrap(), head);
        }
        assert!("relu".parse::<Head>().is_err());
    }
}
