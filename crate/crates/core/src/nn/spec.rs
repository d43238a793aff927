use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Declarative description of a single layer.
///
/// The textual form (used by config files) is `conv(in,out,kernel,stride[,padding])`,
/// `trconv(in,out,kernel,stride[,padding])`, `maxpool(window)`, `fc(in,out)`,
/// `reshape(d1,d2,...)`, `relu`, `sigmoid` or `flatten`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        in_maps: usize,
        out_maps: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    TrConv {
        in_maps: usize,
        out_maps: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        window: usize,
    },
    Fc {
        inputs: usize,
        outputs: usize,
    },
    Reshape(Vec<usize>),
    Flatten,
    Relu,
    Sigmoid,
}

impl LayerSpec {
    pub fn conv(in_maps: usize, out_maps: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv {
            in_maps,
            out_maps,
            kernel,
            stride,
            padding: 0,
        }
    }

    pub fn trconv(in_maps: usize, out_maps: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::TrConv {
            in_maps,
            out_maps,
            kernel,
            stride,
            padding,
        }
    }

    pub fn fc(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Fc { inputs, outputs }
    }

    /// Whether the layer carries weights and biases.
    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv { .. } | LayerSpec::TrConv { .. } | LayerSpec::Fc { .. }
        )
    }

    /// Shapes of (weight, bias) for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv {
                in_maps,
                out_maps,
                kernel,
                ..
            } => Some((vec![out_maps, in_maps, kernel, kernel], vec![out_maps])),
            LayerSpec::TrConv {
                in_maps,
                out_maps,
                kernel,
                ..
            } => Some((vec![in_maps, out_maps, kernel, kernel], vec![out_maps])),
            LayerSpec::Fc { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            _ => None,
        }
    }

    /// Number of inputs feeding each output unit, used to scale initialization.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv { in_maps, kernel, .. } => in_maps * kernel * kernel,
            LayerSpec::TrConv {
                in_maps,
                kernel,
                stride,
                ..
            } => (in_maps * kernel * kernel / (stride * stride)).max(1),
            LayerSpec::Fc { inputs, .. } => inputs,
            _ => 0,
        }
    }

    /// Output shape (excluding the batch axis) for the given input shape.
    ///
    /// The error string describes the incompatibility; callers attach layer names.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Conv {
                in_maps,
                out_maps,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = spatial(input)?;
                if c != in_maps {
                    return Err(format!("expects {in_maps} input maps, got {c}"));
                }
                if kernel == 0 || stride == 0 || out_maps == 0 {
                    return Err("kernel, stride and output maps must be positive".into());
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(format!("kernel {kernel} larger than padded input {h}x{w}"));
                }
                Ok(vec![
                    out_maps,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::TrConv {
                in_maps,
                out_maps,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = spatial(input)?;
                if c != in_maps {
                    return Err(format!("expects {in_maps} input maps, got {c}"));
                }
                if kernel == 0 || stride == 0 || out_maps == 0 {
                    return Err("kernel, stride and output maps must be positive".into());
                }
                let oh = (h - 1) * stride + kernel;
                let ow = (w - 1) * stride + kernel;
                if oh <= 2 * padding || ow <= 2 * padding {
                    return Err(format!("padding {padding} consumes the whole output"));
                }
                Ok(vec![out_maps, oh - 2 * padding, ow - 2 * padding])
            }
            LayerSpec::MaxPool { window } => {
                let [c, h, w] = spatial(input)?;
                if window == 0 || h < window || w < window {
                    return Err(format!("window {window} does not fit {h}x{w}"));
                }
                Ok(vec![c, h / window, w / window])
            }
            LayerSpec::Fc { inputs, outputs } => {
                if input.len() != 1 {
                    return Err(format!("expects a flat input, got shape {input:?}"));
                }
                if input[0] != inputs {
                    return Err(format!("expects {inputs} inputs, got {}", input[0]));
                }
                if outputs == 0 {
                    return Err("output width must be positive".into());
                }
                Ok(vec![outputs])
            }
            LayerSpec::Reshape(ref dims) => {
                let from: usize = input.iter().product();
                let to: usize = dims.iter().product();
                if dims.is_empty() || from != to {
                    return Err(format!("cannot reshape {input:?} into {dims:?}"));
                }
                Ok(dims.clone())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
        }
    }
}

fn spatial(input: &[usize]) -> std::result::Result<[usize; 3], String> {
    match *input {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok([c, h, w]),
        _ => Err(format!("expects a (maps, height, width) input, got {input:?}")),
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                in_maps,
                out_maps,
                kernel,
                stride,
                padding,
            } => {
                write!(f, "conv({in_maps},{out_maps},{kernel},{stride}")?;
                if *padding > 0 {
                    write!(f, ",{padding}")?;
                }
                f.write_str(")")
            }
            LayerSpec::TrConv {
                in_maps,
                out_maps,
                kernel,
                stride,
                padding,
            } => {
                write!(f, "trconv({in_maps},{out_maps},{kernel},{stride}")?;
                if *padding > 0 {
                    write!(f, ",{padding}")?;
                }
                f.write_str(")")
            }
            LayerSpec::MaxPool { window } => write!(f, "maxpool({window})"),
            LayerSpec::Fc { inputs, outputs } => write!(f, "fc({inputs},{outputs})"),
            LayerSpec::Reshape(dims) => {
                let dims: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
                write!(f, "reshape({})", dims.join(","))
            }
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Sigmoid => f.write_str("sigmoid"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let text = s.trim();
        let bad = || Error::LayerSyntax(text.to_string());
        let (name, args) = match text.find('(') {
            Some(open) => {
                let inner = text[open + 1..].strip_suffix(')').ok_or_else(bad)?;
                let args = inner
                    .split(',')
                    .map(|a| a.trim().parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                (text[..open].trim(), args)
            }
            None => (text, Vec::new()),
        };
        let spec = match (name.to_ascii_lowercase().as_str(), args.as_slice()) {
            ("conv", &[i, o, k, s]) => LayerSpec::conv(i, o, k, s),
            ("conv", &[i, o, k, s, p]) => LayerSpec::Conv {
                in_maps: i,
                out_maps: o,
                kernel: k,
                stride: s,
                padding: p,
            },
            ("trconv", &[i, o, k, s]) => LayerSpec::trconv(i, o, k, s, 0),
            ("trconv", &[i, o, k, s, p]) => LayerSpec::trconv(i, o, k, s, p),
            ("maxpool", &[w]) => LayerSpec::MaxPool { window: w },
            ("fc", &[i, o]) => LayerSpec::fc(i, o),
            ("reshape", dims) if !dims.is_empty() => LayerSpec::Reshape(dims.to_vec()),
            ("flatten", []) => LayerSpec::Flatten,
            ("relu", []) => LayerSpec::Relu,
            ("sigmoid", []) => LayerSpec::Sigmoid,
            _ => return Err(bad()),
        };
        Ok(spec)
    }
}

/// Parses a whitespace- or semicolon-separated list of layers.
pub fn parse_layers(text: &str) -> Result<Vec<LayerSpec>> {
    text.split(|c: char| c == ';' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect()
}

/// Inverse of [`parse_layers`].
pub fn format_layers(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}
