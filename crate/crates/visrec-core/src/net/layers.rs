use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::Shape;

/// Parameterized layer kinds, used to group gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Dense,
    Projection,
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerKind::Conv => write!(f, "conv"),
            LayerKind::Dense => write!(f, "dense"),
            LayerKind::Projection => write!(f, "projection"),
        }
    }
}

/// He fan-in initialization.
pub(crate) fn he_init(rng: &mut impl Rng, fan_in: usize, len: usize) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid stddev");
    (0..len).map(|_| normal.sample(rng)).collect()
}

// ---------------------------------------------------------------------------
// Convolution (with fused ReLU)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct ConvLayer {
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// (in_channels * kernel * kernel, filters)
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

pub(crate) struct ConvCache {
    /// im2col matrix: (out_h * out_w, in_channels * kernel * kernel)
    pub col: Array2<f64>,
    /// Post-ReLU output, kept for the ReLU mask.
    pub out: Array3<f64>,
}

impl ConvLayer {
    pub fn new(in_shape: Shape, out_shape: Shape, kernel: usize, stride: usize, pad: usize) -> Self {
        let k = in_shape.channels * kernel * kernel;
        ConvLayer {
            in_shape,
            out_shape,
            kernel,
            stride,
            pad,
            weights: Array2::zeros((k, out_shape.channels)),
            bias: Array1::zeros(out_shape.channels),
        }
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        let fan_in = self.weights.nrows();
        let vals = he_init(rng, fan_in, self.weights.len());
        self.weights = Array2::from_shape_vec(self.weights.raw_dim(), vals).unwrap();
        self.bias.fill(0.0);
    }

    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let Shape {
            channels: c_in,
            height: h,
            width: w,
        } = self.in_shape;
        let (oh, ow) = (self.out_shape.height, self.out_shape.width);
        let k = self.kernel;
        let mut col = Array2::zeros((oh * ow, c_in * k * k));
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                for c in 0..c_in {
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            col[[row, (c * k + ky) * k + kx]] = x[[c, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, dcol: &Array2<f64>) -> Array3<f64> {
        let Shape {
            channels: c_in,
            height: h,
            width: w,
        } = self.in_shape;
        let (oh, ow) = (self.out_shape.height, self.out_shape.width);
        let k = self.kernel;
        let mut dx = Array3::zeros((c_in, h, w));
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                for c in 0..c_in {
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            dx[[c, iy as usize, ix as usize]] += dcol[[row, (c * k + ky) * k + kx]];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, ConvCache) {
        let col = self.im2col(x);
        let mut y = col.dot(&self.weights); // (positions, filters)
        for mut row in y.rows_mut() {
            row += &self.bias;
        }
        y.mapv_inplace(|v| v.max(0.0));
        let (oh, ow) = (self.out_shape.height, self.out_shape.width);
        let filters = self.out_shape.channels;
        // (positions, filters) -> (filters, oh, ow)
        let mut out = Array3::zeros((filters, oh, ow));
        for p in 0..oh * ow {
            for f in 0..filters {
                out[[f, p / ow, p % ow]] = y[[p, f]];
            }
        }
        let cache = ConvCache {
            col,
            out: out.clone(),
        };
        (out, cache)
    }

    /// Returns (d_weights, d_bias, d_input).
    pub fn backward(
        &self,
        cache: &ConvCache,
        dout: &Array3<f64>,
    ) -> (Array2<f64>, Array1<f64>, Array3<f64>) {
        let (oh, ow) = (self.out_shape.height, self.out_shape.width);
        let filters = self.out_shape.channels;
        // ReLU mask then back to (positions, filters) layout.
        let mut dpre = Array2::zeros((oh * ow, filters));
        for f in 0..filters {
            for p in 0..oh * ow {
                if cache.out[[f, p / ow, p % ow]] > 0.0 {
                    dpre[[p, f]] = dout[[f, p / ow, p % ow]];
                }
            }
        }
        let dw = cache.col.t().dot(&dpre);
        let db = dpre.sum_axis(ndarray::Axis(0));
        let dcol = dpre.dot(&self.weights.t());
        let dx = self.col2im(&dcol);
        (dw, db, dx)
    }
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct PoolLayer {
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub size: usize,
}

pub(crate) struct PoolCache {
    /// Flat input index of the max per output cell; ties resolve to the
    /// first element in scan order.
    pub argmax: Vec<u32>,
}

impl PoolLayer {
    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, PoolCache) {
        let (c, oh, ow) = (
            self.out_shape.channels,
            self.out_shape.height,
            self.out_shape.width,
        );
        let (h, w) = (self.in_shape.height, self.in_shape.width);
        let mut out = Array3::zeros((c, oh, ow));
        let mut argmax = vec![0u32; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..self.size {
                        for kx in 0..self.size {
                            let iy = oy * self.size + ky;
                            let ix = ox * self.size + kx;
                            let v = x[[ch, iy, ix]];
                            if v > best {
                                best = v;
                                best_idx = (ch * h + iy) * w + ix;
                            }
                        }
                    }
                    out[[ch, oy, ox]] = best;
                    argmax[(ch * oh + oy) * ow + ox] = best_idx as u32;
                }
            }
        }
        (out, PoolCache { argmax })
    }

    pub fn backward(&self, cache: &PoolCache, dout: &Array3<f64>) -> Array3<f64> {
        let (c, oh, ow) = (
            self.out_shape.channels,
            self.out_shape.height,
            self.out_shape.width,
        );
        let (h, w) = (self.in_shape.height, self.in_shape.width);
        let mut dx = Array3::zeros((c, h, w));
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let idx = cache.argmax[(ch * oh + oy) * ow + ox] as usize;
                    let (iy, ix) = ((idx / w) % h, idx % w);
                    dx[[ch, iy, ix]] += dout[[ch, oy, ox]];
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Dense (linear, no activation)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct DenseLayer {
    /// (in_dim, out_dim)
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

pub(crate) struct DenseCache {
    pub input: Array1<f64>,
}

impl DenseLayer {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            weights: Array2::zeros((in_dim, out_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        DenseLayer {
            weights: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        let fan_in = self.weights.nrows();
        let vals = he_init(rng, fan_in, self.weights.len());
        self.weights = Array2::from_shape_vec(self.weights.raw_dim(), vals).unwrap();
        self.bias.fill(0.0);
    }

    pub fn forward(&self, x: &Array1<f64>) -> (Array1<f64>, DenseCache) {
        let y = x.dot(&self.weights) + &self.bias;
        (y, DenseCache { input: x.clone() })
    }

    /// Returns (d_weights, d_bias, d_input).
    pub fn backward(
        &self,
        cache: &DenseCache,
        dout: &Array1<f64>,
    ) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let x = cache
            .input
            .view()
            .into_shape_with_order((cache.input.len(), 1))
            .unwrap();
        let dy = dout.view().into_shape_with_order((1, dout.len())).unwrap();
        let dw = x.dot(&dy);
        let db = dout.clone();
        let dx = self.weights.dot(dout);
        (dw, db, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(c: usize, h: usize, w: usize) -> Shape {
        Shape {
            channels: c,
            height: h,
            width: w,
        }
    }

    #[test]
    fn conv_known_values() {
        // 1x3x3 input, single 2x2 filter of ones, stride 1, no pad.
        let mut layer = ConvLayer::new(shape(1, 3, 3), shape(1, 2, 2), 2, 1, 0);
        layer.weights.fill(1.0);
        let x = Array3::from_shape_vec((1, 3, 3), (1..=9).map(|v| v as f64).collect()).unwrap();
        let (y, _) = layer.forward(&x);
        // Window sums: 1+2+4+5, 2+3+5+6, 4+5+7+8, 5+6+8+9
        assert_eq!(y[[0, 0, 0]], 12.0);
        assert_eq!(y[[0, 0, 1]], 16.0);
        assert_eq!(y[[0, 1, 0]], 24.0);
        assert_eq!(y[[0, 1, 1]], 28.0);
    }

    #[test]
    fn conv_relu_clamps_negative() {
        let mut layer = ConvLayer::new(shape(1, 2, 2), shape(1, 1, 1), 2, 1, 0);
        layer.weights.fill(-1.0);
        let x = Array3::from_elem((1, 2, 2), 1.0);
        let (y, _) = layer.forward(&x);
        assert_eq!(y[[0, 0, 0]], 0.0);
    }

    #[test]
    fn pool_picks_max_and_routes_gradient() {
        let layer = PoolLayer {
            in_shape: shape(1, 2, 2),
            out_shape: shape(1, 1, 1),
            size: 2,
        };
        let x = Array3::from_shape_vec((1, 2, 2), vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        let (y, cache) = layer.forward(&x);
        assert_eq!(y[[0, 0, 0]], 5.0);
        let dout = Array3::from_elem((1, 1, 1), 2.0);
        let dx = layer.backward(&cache, &dout);
        assert_eq!(dx[[0, 0, 1]], 2.0);
        assert_eq!(dx.sum(), 2.0);
    }

    #[test]
    fn dense_identity_passthrough() {
        let layer = DenseLayer::identity(3);
        let x = Array1::from_vec(vec![1.0, -2.0, 3.0]);
        let (y, _) = layer.forward(&x);
        assert_eq!(y, x);
    }
}
