use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{path_shapes, NetConfig, Shape};
use super::layers::{ConvCache, ConvLayer, DenseCache, DenseLayer, LayerKind, PoolCache, PoolLayer};
use crate::embedding::{hinge, Embedding};
use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};

#[derive(Debug, Clone)]
enum Layer {
    Conv(ConvLayer),
    Pool(PoolLayer),
    Dense(DenseLayer),
}

#[derive(Debug, Clone)]
struct PathNet {
    layers: Vec<Layer>,
    out_shape: Shape,
}

/// How to initialize projection weights when attaching them.
#[derive(Debug, Clone, Copy)]
pub enum ProjectionInit {
    /// He fan-in init with the given seed.
    Seeded(u64),
    /// Identity matrix; only valid when `reduced_dim == embedding_dim` is
    /// bypassed for testing, or for square projections.
    Identity,
}

/// The embedding network: one deep path, two shallow paths, optional linear
/// projection, optional L2 normalization. There is exactly one copy of the
/// parameters; the three triplet roles all run through it.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetConfig,
    paths: Vec<PathNet>,
    projection: Option<DenseLayer>,
}

/// Descriptor of one parameter block in canonical declaration order.
#[derive(Debug, Clone)]
pub struct BlockInfo {
    pub name: String,
    pub kind: LayerKind,
    /// Offset into the flat parameter vector.
    pub offset: usize,
    pub weight_len: usize,
    pub bias_len: usize,
}

impl Network {
    /// Builds the network with all parameters zeroed.
    pub fn zeroed(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut paths = Vec::new();
        for specs in config.paths() {
            let shapes = path_shapes(specs, config.input_height, config.input_width)?;
            let mut layers = Vec::with_capacity(specs.len());
            for (i, spec) in specs.iter().enumerate() {
                let (inp, out) = (shapes[i], shapes[i + 1]);
                let layer = match *spec {
                    super::LayerSpec::Conv {
                        kernel,
                        stride,
                        pad,
                        ..
                    } => Layer::Conv(ConvLayer::new(inp, out, kernel, stride, pad)),
                    super::LayerSpec::Pool { size } => Layer::Pool(PoolLayer {
                        in_shape: inp,
                        out_shape: out,
                        size,
                    }),
                    super::LayerSpec::Dense { units } => {
                        Layer::Dense(DenseLayer::new(inp.len(), units))
                    }
                };
                layers.push(layer);
            }
            paths.push(PathNet {
                layers,
                out_shape: *shapes.last().unwrap(),
            });
        }
        let projection = if config.projection_attached {
            let red = config.reduced_dim.expect("validated");
            Some(DenseLayer::new(config.embedding_dim, red))
        } else {
            None
        };
        Ok(Network {
            config,
            paths,
            projection,
        })
    }

    /// He-initialized network with a seeded RNG; biases start at zero.
    pub fn new_seeded(config: NetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for path in &mut net.paths {
            for layer in &mut path.layers {
                match layer {
                    Layer::Conv(c) => c.init(&mut rng),
                    Layer::Dense(d) => d.init(&mut rng),
                    Layer::Pool(_) => {}
                }
            }
        }
        if let Some(proj) = &mut net.projection {
            proj.init(&mut rng);
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn has_projection(&self) -> bool {
        self.projection.is_some()
    }

    /// Attaches projection weights; requires `reduced_dim` in the config.
    pub fn attach_projection(&mut self, init: ProjectionInit) -> Result<()> {
        let red = self
            .config
            .reduced_dim
            .ok_or_else(|| Error::Config("reduced_dim not configured".into()))?;
        let layer = match init {
            ProjectionInit::Identity => {
                if red != self.config.embedding_dim {
                    return Err(Error::Config(format!(
                        "identity projection needs square dims ({} vs {red})",
                        self.config.embedding_dim
                    )));
                }
                DenseLayer::identity(red)
            }
            ProjectionInit::Seeded(seed) => {
                let mut l = DenseLayer::new(self.config.embedding_dim, red);
                l.init(&mut ChaCha8Rng::seed_from_u64(seed));
                l
            }
        };
        self.projection = Some(layer);
        self.config.projection_attached = true;
        Ok(())
    }

    fn image_tensor(&self, image: &Image) -> Result<Array3<f64>> {
        if image.width() != self.config.input_width || image.height() != self.config.input_height {
            return Err(Error::Config(format!(
                "image {}x{} does not match network input {}x{}",
                image.width(),
                image.height(),
                self.config.input_width,
                self.config.input_height
            )));
        }
        let (h, w) = (image.height(), image.width());
        let mut x = Array3::zeros((CHANNELS, h, w));
        for y in 0..h {
            for xx in 0..w {
                let px = image.pixel(xx, y);
                for c in 0..CHANNELS {
                    x[[c, y, xx]] = px[c] as f64 / 255.0 - self.config.channel_mean[c] as f64;
                }
            }
        }
        Ok(x)
    }

    /// Raw concatenated path outputs, before projection and normalization.
    pub(crate) fn concat_vector(&self, image: &Image) -> Result<Array1<f64>> {
        Ok(self.forward_traced(image)?.concat)
    }

    /// Deterministic feature extraction; emits f32.
    pub fn forward(&self, image: &Image) -> Result<Embedding> {
        let trace = self.forward_traced(image)?;
        let out = &trace.final_out;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite activation in forward".into()));
        }
        Embedding::new(out.iter().map(|&v| v as f32).collect())
    }

    /// Embeds many images in parallel; output order matches input order.
    pub fn embed_batch(&self, images: &[&Image]) -> Result<Vec<Embedding>> {
        use rayon::prelude::*;
        images
            .par_iter()
            .map(|img| self.forward(img))
            .collect::<Result<Vec<_>>>()
    }

    pub(crate) fn forward_traced(&self, image: &Image) -> Result<ForwardTrace> {
        let x = self.image_tensor(image)?;
        let mut path_traces = Vec::with_capacity(self.paths.len());
        let mut concat = Vec::with_capacity(self.config.embedding_dim);
        for path in &self.paths {
            let mut caches = Vec::with_capacity(path.layers.len());
            let mut cur3 = x.clone();
            let mut cur1: Option<Array1<f64>> = None;
            for layer in &path.layers {
                match layer {
                    Layer::Conv(c) => {
                        let (y, cache) = c.forward(&cur3);
                        cur3 = y;
                        caches.push(LayerCache::Conv(cache));
                    }
                    Layer::Pool(p) => {
                        let (y, cache) = p.forward(&cur3);
                        cur3 = y;
                        caches.push(LayerCache::Pool(cache));
                    }
                    Layer::Dense(d) => {
                        let flat = match cur1.take() {
                            Some(v) => v,
                            None => Array1::from_iter(cur3.iter().copied()),
                        };
                        let (y, cache) = d.forward(&flat);
                        cur1 = Some(y);
                        caches.push(LayerCache::Dense(cache));
                    }
                }
            }
            let out = match cur1 {
                Some(v) => v,
                None => Array1::from_iter(cur3.iter().copied()),
            };
            concat.extend(out.iter().copied());
            path_traces.push(PathTrace { caches, out });
        }
        let concat = Array1::from_vec(concat);

        let (projected, proj_cache) = match &self.projection {
            Some(proj) => {
                let (y, cache) = proj.forward(&concat);
                (y, Some(cache))
            }
            None => (concat.clone(), None),
        };

        let (final_out, norm) = if self.config.normalize {
            let norm = projected.dot(&projected).sqrt();
            if norm == 0.0 {
                return Err(Error::Numeric("zero-norm embedding".into()));
            }
            (&projected / norm, norm)
        } else {
            (projected.clone(), 1.0)
        };

        Ok(ForwardTrace {
            path_traces,
            concat,
            proj_cache,
            prenorm: projected,
            norm,
            final_out,
        })
    }

    /// Mean triplet hinge loss over a batch, forward only.
    pub fn batch_loss(&self, batch: &[(&Image, &Image, &Image)], margin: f64) -> Result<f64> {
        let mut total = 0.0;
        for &(q, p, n) in batch {
            let eq = self.forward_traced(q)?.final_out;
            let ep = self.forward_traced(p)?.final_out;
            let en = self.forward_traced(n)?.final_out;
            total += triplet_hinge(&eq, &ep, &en, margin).0;
        }
        Ok(total / batch.len() as f64)
    }

    /// Gradient of the mean batch loss with respect to all parameters.
    ///
    /// Work is split into fixed-size chunks so the reduction order (and thus
    /// the bits of the result) does not depend on thread scheduling.
    pub fn batch_gradient(
        &self,
        batch: &[(&Image, &Image, &Image)],
        margin: f64,
    ) -> Result<(Gradient, f64)> {
        use rayon::prelude::*;
        if batch.is_empty() {
            return Err(Error::Config("empty triplet batch".into()));
        }
        const CHUNK: usize = 4;
        let chunks: Vec<(Gradient, f64)> = batch
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(chunk_idx, chunk)| {
                let mut grad = Gradient::zeros_like(self);
                let mut loss_sum = 0.0;
                for (i, &(q, p, n)) in chunk.iter().enumerate() {
                    let global_idx = chunk_idx * CHUNK + i;
                    let loss =
                        self.triplet_gradient(q, p, n, margin, &mut grad)
                            .map_err(|e| match e {
                                Error::Numeric(msg) => Error::Numeric(format!(
                                    "batch index {global_idx}: {msg}"
                                )),
                                other => other,
                            })?;
                    if !loss.is_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite loss at batch index {global_idx}"
                        )));
                    }
                    loss_sum += loss;
                }
                Ok((grad, loss_sum))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut grad = Gradient::zeros_like(self);
        let mut loss_sum = 0.0;
        for (g, l) in chunks {
            grad.add_assign(&g);
            loss_sum += l;
        }
        let scale = 1.0 / batch.len() as f64;
        grad.scale(scale);
        Ok((grad, loss_sum * scale))
    }

    /// Accumulates one triplet's loss gradient into `grad`; returns the loss.
    fn triplet_gradient(
        &self,
        q: &Image,
        p: &Image,
        n: &Image,
        margin: f64,
        grad: &mut Gradient,
    ) -> Result<f64> {
        let tq = self.forward_traced(q)?;
        let tp = self.forward_traced(p)?;
        let tn = self.forward_traced(n)?;
        let (loss, dq, dp, dn) = triplet_hinge_grad(&tq.final_out, &tp.final_out, &tn.final_out, margin);
        if loss > 0.0 {
            self.backward_into(&tq, &dq, grad, false)?;
            self.backward_into(&tp, &dp, grad, false)?;
            self.backward_into(&tn, &dn, grad, false)?;
        }
        Ok(loss)
    }

    /// Backpropagates dL/d(final embedding) through one traced forward pass,
    /// accumulating parameter gradients. With `projection_only`, path
    /// parameters are left untouched (the base network is frozen).
    pub(crate) fn backward_into(
        &self,
        trace: &ForwardTrace,
        d_final: &Array1<f64>,
        grad: &mut Gradient,
        projection_only: bool,
    ) -> Result<()> {
        // Through L2 normalization: y = v / |v|.
        let mut d_prenorm = if self.config.normalize {
            let y = &trace.final_out;
            let dot = y.dot(d_final);
            (d_final - &(y * dot)) / trace.norm
        } else {
            d_final.clone()
        };

        // Through the projection (always the last gradient block).
        if let Some(proj) = &self.projection {
            let cache = trace.proj_cache.as_ref().expect("projection cache");
            let (dw, db, dx) = proj.backward(cache, &d_prenorm);
            let last = grad.blocks.len() - 1;
            let b = &mut grad.blocks[last];
            b.0 += &dw;
            b.1 += &db;
            if projection_only {
                return Ok(());
            }
            d_prenorm = dx;
        } else if projection_only {
            return Err(Error::Config("projection not attached".into()));
        }
        debug_assert_eq!(d_prenorm.len(), self.config.embedding_dim);

        // Split the concat gradient back into paths; walk layers in reverse.
        let mut offset = 0;
        let mut block_idx = 0;
        for (path, ptrace) in self.paths.iter().zip(&trace.path_traces) {
            let out_len = path.out_shape.len();
            let d_out = d_prenorm.slice(ndarray::s![offset..offset + out_len]);
            offset += out_len;

            let param_blocks_in_path = path
                .layers
                .iter()
                .filter(|l| !matches!(l, Layer::Pool(_)))
                .count();
            let mut pblock = block_idx + param_blocks_in_path;
            block_idx = pblock;

            let mut d1: Option<Array1<f64>> = Some(d_out.to_owned());
            let mut d3: Option<Array3<f64>> = None;
            for (layer, cache) in path.layers.iter().zip(&ptrace.caches).rev() {
                match (layer, cache) {
                    (Layer::Dense(d), LayerCache::Dense(c)) => {
                        let dy = d1.take().expect("dense gradient");
                        let (dw, db, dx) = d.backward(c, &dy);
                        pblock -= 1;
                        let b = &mut grad.blocks[pblock];
                        b.0 += &dw;
                        b.1 += &db;
                        d1 = Some(dx);
                    }
                    (Layer::Conv(cl), LayerCache::Conv(c)) => {
                        let dy3 = match d3.take() {
                            Some(d) => d,
                            None => {
                                let flat = d1.take().expect("conv gradient");
                                Array3::from_shape_vec(
                                    (
                                        cl.out_shape.channels,
                                        cl.out_shape.height,
                                        cl.out_shape.width,
                                    ),
                                    flat.to_vec(),
                                )
                                .map_err(|e| Error::Numeric(e.to_string()))?
                            }
                        };
                        let (dw, db, dx) = cl.backward(c, &dy3);
                        pblock -= 1;
                        let b = &mut grad.blocks[pblock];
                        b.0 += &dw;
                        b.1 += &db;
                        d3 = Some(dx);
                    }
                    (Layer::Pool(pl), LayerCache::Pool(c)) => {
                        let dy3 = match d3.take() {
                            Some(d) => d,
                            None => {
                                let flat = d1.take().expect("pool gradient");
                                Array3::from_shape_vec(
                                    (
                                        pl.out_shape.channels,
                                        pl.out_shape.height,
                                        pl.out_shape.width,
                                    ),
                                    flat.to_vec(),
                                )
                                .map_err(|e| Error::Numeric(e.to_string()))?
                            }
                        };
                        d3 = Some(pl.backward(c, &dy3));
                    }
                    _ => unreachable!("layer/cache mismatch"),
                }
            }
        }
        Ok(())
    }

    // -- parameter access ---------------------------------------------------

    fn blocks(&self) -> Vec<(&Array2<f64>, &Array1<f64>, LayerKind, String)> {
        let mut out = Vec::new();
        let path_names = ["deep", "shallow1", "shallow2"];
        for (pi, path) in self.paths.iter().enumerate() {
            for (li, layer) in path.layers.iter().enumerate() {
                match layer {
                    Layer::Conv(c) => out.push((
                        &c.weights,
                        &c.bias,
                        LayerKind::Conv,
                        format!("{}.conv{li}", path_names[pi]),
                    )),
                    Layer::Dense(d) => out.push((
                        &d.weights,
                        &d.bias,
                        LayerKind::Dense,
                        format!("{}.dense{li}", path_names[pi]),
                    )),
                    Layer::Pool(_) => {}
                }
            }
        }
        if let Some(p) = &self.projection {
            out.push((
                &p.weights,
                &p.bias,
                LayerKind::Projection,
                "projection".to_string(),
            ));
        }
        out
    }

    pub(crate) fn blocks_mut(&mut self) -> Vec<(&mut Array2<f64>, &mut Array1<f64>)> {
        let mut out = Vec::new();
        for path in &mut self.paths {
            for layer in &mut path.layers {
                match layer {
                    Layer::Conv(c) => out.push((&mut c.weights, &mut c.bias)),
                    Layer::Dense(d) => out.push((&mut d.weights, &mut d.bias)),
                    Layer::Pool(_) => {}
                }
            }
        }
        if let Some(p) = &mut self.projection {
            out.push((&mut p.weights, &mut p.bias));
        }
        out
    }

    /// Layout of the flat parameter vector, in declaration order.
    pub fn param_layout(&self) -> Vec<BlockInfo> {
        let mut infos = Vec::new();
        let mut offset = 0;
        for (w, b, kind, name) in self.blocks() {
            infos.push(BlockInfo {
                name,
                kind,
                offset,
                weight_len: w.len(),
                bias_len: b.len(),
            });
            offset += w.len() + b.len();
        }
        infos
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(w, b, _, _)| w.len() + b.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b, _, _) in self.blocks() {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimMismatch(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut pos = 0;
        for (w, b) in self.blocks_mut() {
            for v in w.iter_mut() {
                *v = params[pos];
                pos += 1;
            }
            for v in b.iter_mut() {
                *v = params[pos];
                pos += 1;
            }
        }
        Ok(())
    }

    /// SGD-with-momentum step: `v = m*v + g; w -= lr*v`.
    pub fn sgd_step(&mut self, grad: &Gradient, velocity: &mut Gradient, lr: f64, momentum: f64) {
        for (i, (w, b)) in self.blocks_mut().into_iter().enumerate() {
            let (gw, gb) = &grad.blocks[i];
            let (vw, vb) = &mut velocity.blocks[i];
            vw.zip_mut_with(gw, |v, &g| *v = momentum * *v + g);
            vb.zip_mut_with(gb, |v, &g| *v = momentum * *v + g);
            w.zip_mut_with(vw, |x, &v| *x -= lr * v);
            b.zip_mut_with(vb, |x, &v| *x -= lr * v);
        }
    }

    /// SGD step restricted to the projection block.
    pub fn sgd_step_projection_only(
        &mut self,
        grad: &Gradient,
        velocity: &mut Gradient,
        lr: f64,
        momentum: f64,
    ) {
        let last = grad.blocks.len() - 1;
        debug_assert!(self.projection.is_some());
        let (w, b) = self.blocks_mut().into_iter().last().expect("projection block");
        let (gw, gb) = &grad.blocks[last];
        let (vw, vb) = &mut velocity.blocks[last];
        vw.zip_mut_with(gw, |v, &g| *v = momentum * *v + g);
        vb.zip_mut_with(gb, |v, &g| *v = momentum * *v + g);
        w.zip_mut_with(vw, |x, &v| *x -= lr * v);
        b.zip_mut_with(vb, |x, &v| *x -= lr * v);
    }

    /// Runs a cached concat vector through the projection and (optionally)
    /// normalization, keeping what the backward pass needs.
    pub(crate) fn project_vector(
        &self,
        concat: &Array1<f64>,
        normalize: bool,
    ) -> Result<ProjForward> {
        let proj = self
            .projection
            .as_ref()
            .ok_or_else(|| Error::Config("projection not attached".into()))?;
        let (prenorm, cache) = proj.forward(concat);
        let (out, norm) = if normalize {
            let norm = prenorm.dot(&prenorm).sqrt();
            if norm == 0.0 {
                return Err(Error::Numeric("zero-norm reduced embedding".into()));
            }
            (&prenorm / norm, norm)
        } else {
            (prenorm.clone(), 1.0)
        };
        Ok(ProjForward {
            cache,
            norm,
            normalized: normalize,
            out,
        })
    }

    /// Accumulates projection gradients for one projected vector.
    pub(crate) fn projection_backward(
        &self,
        fwd: &ProjForward,
        d_out: &Array1<f64>,
        grad: &mut Gradient,
    ) {
        let proj = self.projection.as_ref().expect("projection attached");
        let d_prenorm = if fwd.normalized {
            let dot = fwd.out.dot(d_out);
            (d_out - &(&fwd.out * dot)) / fwd.norm
        } else {
            d_out.clone()
        };
        let (dw, db, _) = proj.backward(&fwd.cache, &d_prenorm);
        let last = grad.blocks.len() - 1;
        grad.blocks[last].0 += &dw;
        grad.blocks[last].1 += &db;
    }

    /// Test hook: overrides the configured reduced dimension without the
    /// `reduced < full` validation, for identity-projection contracts.
    #[cfg(test)]
    pub(crate) fn force_reduced_dim(&mut self, dim: usize) {
        self.config.reduced_dim = Some(dim);
    }
}

/// Cached state from projecting one concat vector.
pub(crate) struct ProjForward {
    cache: DenseCache,
    norm: f64,
    normalized: bool,
    pub out: Array1<f64>,
}

/// Hinge loss on three f64 embeddings; returns the loss only.
fn triplet_hinge(eq: &Array1<f64>, ep: &Array1<f64>, en: &Array1<f64>, margin: f64) -> (f64, f64, f64) {
    let d_qp = (eq - ep).mapv(|v| v * v).sum().sqrt();
    let d_qn = (eq - en).mapv(|v| v * v).sum().sqrt();
    (hinge(d_qp, d_qn, margin), d_qp, d_qn)
}

/// Hinge loss and its gradient w.r.t. the three embeddings.
fn triplet_hinge_grad(
    eq: &Array1<f64>,
    ep: &Array1<f64>,
    en: &Array1<f64>,
    margin: f64,
) -> (f64, Array1<f64>, Array1<f64>, Array1<f64>) {
    let (loss, d_qp, d_qn) = triplet_hinge(eq, ep, en, margin);
    let dim = eq.len();
    if loss == 0.0 {
        return (
            loss,
            Array1::zeros(dim),
            Array1::zeros(dim),
            Array1::zeros(dim),
        );
    }
    // d/dx |x - y| = (x - y) / |x - y|; guard the (measure-zero) zero
    // distance to keep the flat direction instead of emitting NaN.
    let unit_qp = if d_qp > 0.0 {
        (eq - ep) / d_qp
    } else {
        Array1::zeros(dim)
    };
    let unit_qn = if d_qn > 0.0 {
        (eq - en) / d_qn
    } else {
        Array1::zeros(dim)
    };
    let dq = &unit_qp - &unit_qn;
    let dp = -&unit_qp;
    let dn = unit_qn;
    (loss, dq, dp, dn)
}

pub(crate) struct PathTrace {
    pub caches: Vec<LayerCache>,
    #[allow(dead_code)]
    pub out: Array1<f64>,
}

pub(crate) enum LayerCache {
    Conv(ConvCache),
    Pool(PoolCache),
    Dense(DenseCache),
}

pub(crate) struct ForwardTrace {
    pub path_traces: Vec<PathTrace>,
    /// Concatenated path outputs (projection input).
    pub concat: Array1<f64>,
    pub proj_cache: Option<DenseCache>,
    /// Vector entering normalization (projection output, or concat).
    #[allow(dead_code)]
    pub prenorm: Array1<f64>,
    pub norm: f64,
    /// Final f64 embedding.
    pub final_out: Array1<f64>,
}

/// Parameter-shaped gradient (or momentum) buffer.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub(crate) blocks: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradient {
    pub fn zeros_like(net: &Network) -> Self {
        Gradient {
            blocks: net
                .blocks()
                .iter()
                .map(|(w, b, _, _)| {
                    (
                        Array2::zeros(w.raw_dim()),
                        Array1::zeros(b.raw_dim()),
                    )
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for ((w, b), (ow, ob)) in self.blocks.iter_mut().zip(&other.blocks) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.blocks {
            w.mapv_inplace(|v| v * s);
            b.mapv_inplace(|v| v * s);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.blocks {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }
}
