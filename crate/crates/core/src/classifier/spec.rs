//! Layer descriptions, the three shipped architectures and shape propagation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageType;

/// Per-sample activation shape: channels × height × width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Height × width × channels, the way the architectures are usually quoted.
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

/// Padding in `[top, bottom, left, right]` order.
pub type Padding = [usize; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    },
    BatchNorm,
    InstanceNorm,
    Relu,
    MaxPool {
        pool: (usize, usize),
        stride: (usize, usize),
    },
    Dropout {
        rate: f64,
    },
    FullyConnected {
        units: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn conv(
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    ) -> Self {
        LayerSpec::Conv {
            filters,
            kernel,
            stride,
            padding,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::BatchNorm => "batchnorm",
            LayerSpec::InstanceNorm => "instancenorm",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::FullyConnected { .. } => "fullyconnected",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Output shape for a given input, or an error naming the failing layer.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let bad = |msg: String| {
            Err(Error::InvalidConfig(format!(
                "{} layer: {msg}",
                self.name()
            )))
        };
        match *self {
            LayerSpec::Conv {
                filters,
                kernel: (kh, kw),
                stride: (sh, sw),
                padding: [pt, pb, pl, pr],
            } => {
                if filters == 0 || kh == 0 || kw == 0 || sh == 0 || sw == 0 {
                    return bad("filters, kernel and stride must be positive".into());
                }
                let (h, w) = (input.h + pt + pb, input.w + pl + pr);
                if h < kh || w < kw {
                    return bad(format!("kernel {kh}x{kw} larger than padded input {h}x{w}"));
                }
                Ok(Shape::new(filters, (h - kh) / sh + 1, (w - kw) / sw + 1))
            }
            LayerSpec::MaxPool {
                pool: (ph, pw),
                stride: (sh, sw),
            } => {
                if ph == 0 || pw == 0 || sh == 0 || sw == 0 {
                    return bad("pool and stride must be positive".into());
                }
                if input.h < ph || input.w < pw {
                    return bad(format!(
                        "pool {ph}x{pw} larger than input {}x{}",
                        input.h, input.w
                    ));
                }
                Ok(Shape::new(
                    input.c,
                    (input.h - ph) / sh + 1,
                    (input.w - pw) / sw + 1,
                ))
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return bad(format!("rate {rate} outside [0, 1)"));
                }
                Ok(input)
            }
            LayerSpec::FullyConnected { units } => {
                if units == 0 {
                    return bad("units must be positive".into());
                }
                Ok(Shape::new(units, 1, 1))
            }
            LayerSpec::BatchNorm
            | LayerSpec::InstanceNorm
            | LayerSpec::Relu
            | LayerSpec::Softmax => Ok(input),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    pub image_type: Option<ImageType>,
}

impl NetworkSpec {
    /// Shapes after every layer (`shapes()[i]` is the output of layer `i`).
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut cur = self.input;
        if cur.is_empty() {
            return Err(Error::InvalidConfig("empty input shape".into()));
        }
        self.layers
            .iter()
            .map(|l| {
                cur = l.output_shape(cur)?;
                Ok(cur)
            })
            .collect()
    }

    /// Checks shape propagation and the two-way softmax head.
    pub fn validate(&self) -> Result<Vec<Shape>> {
        let shapes = self.shapes()?;
        let n = self.layers.len();
        let ok_head = n >= 2
            && matches!(self.layers[n - 1], LayerSpec::Softmax)
            && matches!(self.layers[n - 2], LayerSpec::FullyConnected { units: 2 });
        if !ok_head {
            return Err(Error::InvalidConfig(
                "network must end with a 2-unit fully connected layer followed by softmax".into(),
            ));
        }
        Ok(shapes)
    }

    /// Activation shape entering the first fully connected layer.
    pub fn pre_fc_shape(&self) -> Result<Shape> {
        let shapes = self.shapes()?;
        let first_fc = self
            .layers
            .iter()
            .position(|l| matches!(l, LayerSpec::FullyConnected { .. }))
            .ok_or_else(|| Error::InvalidConfig("no fully connected layer".into()))?;
        Ok(if first_fc == 0 {
            self.input
        } else {
            shapes[first_fc - 1]
        })
    }
}

fn head() -> [LayerSpec; 4] {
    [
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::FullyConnected { units: 256 },
        LayerSpec::FullyConnected { units: 2 },
        LayerSpec::Softmax,
    ]
}

/// The architecture for each image size.
pub fn build_arch(image_type: ImageType) -> NetworkSpec {
    use LayerSpec::*;
    let conv = LayerSpec::conv;
    let mut layers = match image_type {
        ImageType::OneSec => vec![
            conv(64, (3, 27), (1, 3), [0, 1, 1, 1]),
            BatchNorm,
            Relu,
            MaxPool {
                pool: (1, 2),
                stride: (1, 2),
            },
            conv(128, (5, 5), (1, 2), [0, 0, 0, 0]),
            InstanceNorm,
            Relu,
            conv(256, (5, 3), (1, 2), [0, 0, 1, 2]),
            InstanceNorm,
            Relu,
            conv(512, (3, 3), (1, 1), [0, 0, 0, 0]),
            Relu,
        ],
        ImageType::FiveSec => vec![
            conv(64, (3, 11), (2, 2), [1, 1, 2, 3]),
            BatchNorm,
            Relu,
            MaxPool {
                pool: (1, 2),
                stride: (1, 2),
            },
            conv(128, (5, 5), (1, 1), [0, 0, 0, 1]),
            InstanceNorm,
            Relu,
            MaxPool {
                pool: (2, 2),
                stride: (2, 2),
            },
            conv(256, (5, 5), (2, 3), [0, 1, 1, 1]),
            InstanceNorm,
            Relu,
            conv(512, (3, 3), (1, 1), [0, 0, 0, 0]),
            Relu,
        ],
        ImageType::TenSec => vec![
            conv(32, (3, 27), (3, 3), [4, 4, 1, 1]),
            InstanceNorm,
            Relu,
            MaxPool {
                pool: (2, 2),
                stride: (2, 2),
            },
            conv(64, (5, 5), (2, 2), [1, 1, 0, 0]),
            InstanceNorm,
            Relu,
            conv(64, (3, 5), (1, 1), [0, 0, 0, 0]),
            InstanceNorm,
            Relu,
            conv(128, (3, 3), (1, 1), [0, 0, 0, 0]),
            Relu,
            conv(256, (3, 3), (1, 1), [0, 0, 0, 0]),
            Relu,
        ],
    };
    layers.extend(head());
    NetworkSpec {
        input: Shape::new(1, image_type.rows(), image_type.cols()),
        layers,
        image_type: Some(image_type),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_order_is_top_bottom_left_right() {
        let l = LayerSpec::conv(1, (1, 1), (1, 1), [1, 2, 3, 4]);
        assert_eq!(
            l.output_shape(Shape::new(1, 10, 10)).unwrap(),
            Shape::new(1, 13, 17)
        );
    }

    #[test]
    fn shipped_specs_validate() {
        for t in ImageType::ALL {
            let spec = build_arch(t);
            spec.validate().unwrap();
            assert_eq!(spec.input, Shape::new(1, t.rows(), 256));
            assert_eq!(*spec.shapes().unwrap().last().unwrap(), Shape::new(2, 1, 1));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = build_arch(ImageType::OneSec);
        spec.layers.pop();
        assert!(spec.validate().is_err());
        let tiny = NetworkSpec {
            input: Shape::new(1, 2, 2),
            layers: vec![LayerSpec::conv(1, (3, 3), (1, 1), [0; 4])],
            image_type: None,
        };
        assert!(tiny.shapes().is_err());
        assert!(LayerSpec::Dropout { rate: 1.0 }
            .output_shape(Shape::new(1, 1, 1))
            .is_err());
        assert!(LayerSpec::conv(1, (1, 1), (0, 1), [0; 4])
            .output_shape(Shape::new(1, 1, 1))
            .is_err());
    }
}
