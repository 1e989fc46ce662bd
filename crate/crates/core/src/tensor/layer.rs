use serde::{Deserialize, Serialize};

use super::ops::ConvGeometry;
use crate::error::{Error, Result};

/// One layer of a sequential network. Shapes exclude the batch dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        out: usize,
    },
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    Deconv2d {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
    },
    Sigmoid,
    Relu,
    LeakyRelu {
        leak: f64,
    },
    Tanh,
    Softmax,
    Dropout {
        rate: f64,
    },
    Reshape {
        shape: Vec<usize>,
    },
    Flatten,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Deconv2d { .. } => "deconv2d",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Relu => "relu",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Flatten => "flatten",
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(
            self,
            LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } | LayerSpec::Deconv2d { .. }
        )
    }

    /// Weight and bias shapes for trainable layers.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { out } => Some((vec![out, input[0]], vec![out])),
            LayerSpec::Conv2d {
                filters, kernel, ..
            } => Some((vec![filters, input[0], kernel.0, kernel.1], vec![filters])),
            LayerSpec::Deconv2d {
                filters, kernel, ..
            } => Some((vec![input[0], filters, kernel.0, kernel.1], vec![filters])),
            _ => None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |why: &str| Error::Config(format!("{} layer: {why}", self.kind_name()));
        match self {
            LayerSpec::Dense { out } => {
                if input.len() != 1 {
                    return Err(Error::dim("dense expects a flat input", input, &[0]));
                }
                if *out == 0 {
                    return Err(bad("output size must be positive"));
                }
                Ok(vec![*out])
            }
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
            }
            | LayerSpec::Deconv2d {
                filters,
                kernel,
                stride,
            } => {
                if input.len() != 3 {
                    return Err(Error::dim("2-D layers expect [C, H, W]", input, &[0, 0, 0]));
                }
                if *filters == 0 || kernel.0 == 0 || kernel.1 == 0 {
                    return Err(bad("filters and kernel must be positive"));
                }
                if stride.0 == 0 || stride.1 == 0 {
                    return Err(bad("stride must be positive"));
                }
                if matches!(self, LayerSpec::Conv2d { .. }) {
                    let g = ConvGeometry::same_halving(input[1], input[2], *kernel, *stride);
                    Ok(vec![*filters, g.out_h, g.out_w])
                } else {
                    Ok(vec![*filters, input[1] * stride.0, input[2] * stride.1])
                }
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(bad("rate must lie in [0, 1)"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::LeakyRelu { leak } => {
                if !leak.is_finite() {
                    return Err(bad("leak must be finite"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(Error::dim("softmax expects a flat input", input, &[0]));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Reshape { shape } => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err(Error::dim("reshape", input, shape));
                }
                Ok(shape.clone())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Sigmoid | LayerSpec::Relu | LayerSpec::Tanh => Ok(input.to_vec()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serde_tagging() {
        let spec = LayerSpec::Conv2d {
            filters: 16,
            kernel: (5, 5),
            stride: (2, 2),
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"conv2d\""));
        assert_eq!(serde_json::from_str::<LayerSpec>(&json).unwrap(), spec);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(LayerSpec::Dropout { rate: 1.0 }.output_shape(&[4]).is_err());
        assert!(LayerSpec::Dense { out: 3 }.output_shape(&[2, 2]).is_err());
        assert!(LayerSpec::Reshape { shape: vec![3, 3] }.output_shape(&[8]).is_err());
        let conv = LayerSpec::Conv2d {
            filters: 1,
            kernel: (3, 3),
            stride: (0, 1),
        };
        assert!(conv.output_shape(&[1, 4, 4]).is_err());
    }
}
