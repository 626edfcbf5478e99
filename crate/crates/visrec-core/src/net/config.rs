use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::CHANNELS;

/// One layer of a path. Convolutions apply ReLU; dense layers are linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Max pooling with a square window and stride equal to the window size.
    Pool { size: usize },
    Dense { units: usize },
}

/// Network architecture plus the loss and preprocessing knobs that travel
/// with the trained weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// The single deep path.
    pub deep: Vec<LayerSpec>,
    /// Exactly two parallel shallow paths.
    pub shallow: Vec<Vec<LayerSpec>>,
    /// Full embedding dimension; must equal the concatenated path outputs.
    pub embedding_dim: usize,
    /// Reduced dimension for the optional linear projection.
    pub reduced_dim: Option<usize>,
    /// Hinge margin g.
    pub margin: f64,
    /// L2-normalize emitted embeddings.
    pub normalize: bool,
    /// Per-channel mean subtracted after scaling pixels to [0,1].
    #[serde(default)]
    pub channel_mean: [f32; 3],
    /// Whether the projection weights are attached (and serialized).
    #[serde(default)]
    pub projection_attached: bool,
}

impl NetConfig {
    /// Desk-scale default: deep path of six 3x3 convolutions with pooling
    /// into a 128-d dense layer, plus two large-receptive-field shallow
    /// paths of 32-d each, for a 192-d embedding.
    pub fn default_desk() -> Self {
        let conv = |filters, kernel, stride, pad| LayerSpec::Conv {
            filters,
            kernel,
            stride,
            pad,
        };
        NetConfig {
            input_height: 32,
            input_width: 32,
            deep: vec![
                conv(16, 3, 1, 1),
                conv(16, 3, 1, 1),
                LayerSpec::Pool { size: 2 },
                conv(32, 3, 1, 1),
                conv(32, 3, 1, 1),
                LayerSpec::Pool { size: 2 },
                conv(64, 3, 1, 1),
                conv(64, 3, 1, 1),
                LayerSpec::Pool { size: 2 },
                LayerSpec::Dense { units: 128 },
            ],
            shallow: vec![
                vec![
                    conv(8, 8, 4, 0),
                    LayerSpec::Pool { size: 2 },
                    LayerSpec::Dense { units: 32 },
                ],
                vec![conv(8, 16, 8, 0), LayerSpec::Dense { units: 32 }],
            ],
            embedding_dim: 192,
            reduced_dim: Some(64),
            margin: 0.2,
            normalize: true,
            channel_mean: [0.0; 3],
            projection_attached: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_height == 0 || self.input_width == 0 {
            return Err(Error::Config("zero input size".into()));
        }
        if self.shallow.len() != 2 {
            return Err(Error::Config(format!(
                "expected exactly 2 shallow paths, got {}",
                self.shallow.len()
            )));
        }
        if self.margin < 0.0 {
            return Err(Error::Config(format!("negative margin {}", self.margin)));
        }
        if let Some(red) = self.reduced_dim {
            if red == 0 || red >= self.embedding_dim {
                return Err(Error::Config(format!(
                    "reduced_dim {red} must be in 1..embedding_dim ({})",
                    self.embedding_dim
                )));
            }
        }
        if self.projection_attached && self.reduced_dim.is_none() {
            return Err(Error::Config(
                "projection attached without reduced_dim".into(),
            ));
        }
        let mut concat = 0;
        for (i, path) in self.paths().iter().enumerate() {
            concat += path_output_dim(path, self.input_height, self.input_width)
                .map_err(|e| Error::Config(format!("path {i}: {e}")))?;
        }
        if concat != self.embedding_dim {
            return Err(Error::Config(format!(
                "embedding_dim {} does not match concatenated path outputs {concat}",
                self.embedding_dim
            )));
        }
        Ok(())
    }

    /// All paths in canonical order: deep first, then the shallow paths.
    pub fn paths(&self) -> Vec<&[LayerSpec]> {
        let mut v = Vec::with_capacity(1 + self.shallow.len());
        v.push(self.deep.as_slice());
        for p in &self.shallow {
            v.push(p.as_slice());
        }
        v
    }

    /// Dimension of emitted embeddings (reduced when a projection is attached).
    pub fn output_dim(&self) -> usize {
        if self.projection_attached {
            self.reduced_dim.unwrap_or(self.embedding_dim)
        } else {
            self.embedding_dim
        }
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("NetConfig serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: NetConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Shape of a feature map flowing through a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

pub(crate) fn path_shapes(
    path: &[LayerSpec],
    input_height: usize,
    input_width: usize,
) -> Result<Vec<Shape>> {
    let mut shapes = vec![Shape {
        channels: CHANNELS,
        height: input_height,
        width: input_width,
    }];
    let mut dense_seen = false;
    for spec in path {
        let cur = *shapes.last().unwrap();
        let next = match *spec {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                pad,
            } => {
                if dense_seen {
                    return Err(Error::Config("conv after dense".into()));
                }
                if kernel == 0 || stride == 0 || filters == 0 {
                    return Err(Error::Config("zero conv parameter".into()));
                }
                let padded_h = cur.height + 2 * pad;
                let padded_w = cur.width + 2 * pad;
                if padded_h < kernel || padded_w < kernel {
                    return Err(Error::Config(format!(
                        "kernel {kernel} larger than padded input {padded_h}x{padded_w}"
                    )));
                }
                Shape {
                    channels: filters,
                    height: (padded_h - kernel) / stride + 1,
                    width: (padded_w - kernel) / stride + 1,
                }
            }
            LayerSpec::Pool { size } => {
                if dense_seen {
                    return Err(Error::Config("pool after dense".into()));
                }
                if size == 0 || cur.height < size || cur.width < size {
                    return Err(Error::Config(format!(
                        "pool size {size} on {}x{} input",
                        cur.height, cur.width
                    )));
                }
                Shape {
                    channels: cur.channels,
                    height: cur.height / size,
                    width: cur.width / size,
                }
            }
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(Error::Config("zero dense units".into()));
                }
                dense_seen = true;
                Shape {
                    channels: units,
                    height: 1,
                    width: 1,
                }
            }
        };
        shapes.push(next);
    }
    Ok(shapes)
}

fn path_output_dim(path: &[LayerSpec], input_height: usize, input_width: usize) -> Result<usize> {
    Ok(path_shapes(path, input_height, input_width)?
        .last()
        .unwrap()
        .len())
}
