//! Declarative network description, its text format, and shape inference.

use std::fmt::{self, Write as _};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::{ClcSpec, PoolSpec};
use crate::tensor::Shape4;

/// Output channels of a channel-local layer: `(c_in - L + 1) * M`.
pub fn channel_out_count(c_in: usize, window_len: usize, filters_per_window: usize) -> Result<usize> {
    ClcSpec {
        kernel: (1, 1),
        window_len,
        filters_per_window,
        shared: false,
        stride: (1, 1),
        pad: (0, 0),
    }
    .out_channels(c_in)
}

/// (weights, biases) of a channel-local layer on `c_in` input channels.
pub fn param_count(spec: &ClcSpec, c_in: usize) -> Result<(usize, usize)> {
    let dims = spec.weight_dims(c_in)?;
    Ok((dims.iter().product(), spec.out_channels(c_in)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoolKind {
    Max(PoolSpec),
    /// Max over the whole remaining feature map.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Clc(ClcSpec),
    BatchNorm,
    Relu,
    MaxPool(PoolSpec),
    Dropout(f64),
    SoftmaxHead,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Clc(_) => "clc",
            LayerSpec::BatchNorm => "bn",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool(_) => "maxpool",
            LayerSpec::Dropout(_) => "dropout",
            LayerSpec::SoftmaxHead => "softmax-head",
        }
    }
}

/// One three-layer block. `pattern[i]` is true where layer `i` is
/// locally connected along channels (the '1' of an MLP-abc code).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub pattern: [bool; 3],
    pub first_kernel: (usize, usize),
    /// Spatial extent n of the sparse layers after the first (1 for 1-D blocks).
    pub inner_spatial: usize,
    pub widths: [usize; 3],
    /// Channel window length of every sparse layer, in layer order.
    pub window_lens: Vec<usize>,
    pub shared: bool,
}

impl BlockSpec {
    pub fn pattern_code(&self) -> String {
        self.pattern.iter().map(|&s| if s { '1' } else { '0' }).collect()
    }

    pub fn parse_pattern(code: &str) -> Result<[bool; 3]> {
        let bits: Vec<bool> = code
            .chars()
            .map(|ch| match ch {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Config(format!("pattern '{code}' contains '{other}'"))),
            })
            .collect::<Result<_>>()?;
        bits.try_into()
            .map_err(|_| Error::Config(format!("pattern '{code}' must have exactly 3 digits")))
    }

    /// Convolution specs of the three layers given the block's input channels.
    /// Fails if a sparse layer's declared width disagrees with `c_in - L + 1`.
    pub fn clc_specs(&self, block: usize, c_in: usize) -> Result<Vec<(ClcSpec, usize)>> {
        let sparse_count = self.pattern.iter().filter(|&&s| s).count();
        if self.window_lens.len() != sparse_count {
            return Err(Error::Config(format!(
                "block{block}: pattern {} needs {sparse_count} window lengths, got {}",
                self.pattern_code(),
                self.window_lens.len()
            )));
        }
        let mut lens = self.window_lens.iter();
        let mut c = c_in;
        let mut out = Vec::with_capacity(3);
        for (i, &sparse) in self.pattern.iter().enumerate() {
            let (kh, kw) = if i == 0 {
                self.first_kernel
            } else if sparse {
                (self.inner_spatial, self.inner_spatial)
            } else {
                (1, 1)
            };
            let spec = if sparse {
                let window_len = *lens.next().expect("counted above");
                ClcSpec {
                    kernel: (kh, kw),
                    window_len,
                    filters_per_window: 1,
                    shared: self.shared,
                    stride: (1, 1),
                    pad: (kh / 2, kw / 2),
                }
            } else {
                ClcSpec {
                    kernel: (kh, kw),
                    window_len: c,
                    filters_per_window: self.widths[i],
                    shared: self.shared,
                    stride: (1, 1),
                    pad: (kh / 2, kw / 2),
                }
            };
            let produced = spec
                .out_channels(c)
                .map_err(|e| Error::Config(format!("block{block} layer {}: {e}", i + 1)))?;
            if produced != self.widths[i] {
                return Err(Error::Config(format!(
                    "block{block} layer {}: declared width {} but {c} input channels with window {} give {produced}",
                    i + 1,
                    self.widths[i],
                    spec.window_len
                )));
            }
            out.push((spec, c));
            c = produced;
        }
        Ok(out)
    }
}

/// Pooling and dropout applied after a block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub pool: Option<PoolKind>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub name: String,
    /// Per-image input shape; the batch component is ignored.
    pub input: Shape4,
    pub class_count: usize,
    /// Batch norm + ReLU after every convolution when true, ReLU only otherwise.
    pub batch_norm: bool,
    pub blocks: Vec<BlockSpec>,
    /// One entry per block.
    pub transitions: Vec<Transition>,
}

/// A layer with its resolved spec and output shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedLayer {
    pub name: String,
    pub spec: LayerSpec,
    pub input: Shape4,
    pub output: Shape4,
}

impl ResolvedLayer {
    /// (weights, biases) held by this layer; BN affine parameters count as weights.
    pub fn param_count(&self) -> (usize, usize) {
        match &self.spec {
            LayerSpec::Clc(spec) => param_count(spec, self.input.channels).unwrap_or((0, 0)),
            LayerSpec::BatchNorm => (self.input.channels, self.input.channels),
            _ => (0, 0),
        }
    }
}

impl NetworkConfig {
    /// Resolves every layer and its output shape for a batch of `batch` images.
    pub fn resolve(&self, batch: usize) -> Result<Vec<ResolvedLayer>> {
        if self.blocks.is_empty() {
            return Err(Error::Config("network has no blocks".into()));
        }
        if self.transitions.len() != self.blocks.len() {
            return Err(Error::Config(format!(
                "{} blocks but {} transitions",
                self.blocks.len(),
                self.transitions.len()
            )));
        }
        let mut shape = Shape4::new(batch, self.input.channels, self.input.height, self.input.width)?;
        let mut layers = Vec::new();
        let mut push = |name: String, spec: LayerSpec, input: Shape4, output: Shape4| {
            layers.push(ResolvedLayer {
                name,
                spec,
                input,
                output,
            });
            output
        };
        for (bi, (block, tr)) in self.blocks.iter().zip(&self.transitions).enumerate() {
            let b = bi + 1;
            for (li, (spec, _)) in block.clc_specs(b, shape.channels)?.into_iter().enumerate() {
                let l = li + 1;
                let out = spec
                    .output_shape(shape)
                    .map_err(|e| Error::Config(format!("block{b} layer {l}: {e}")))?;
                shape = push(format!("block{b}.conv{l}"), LayerSpec::Clc(spec), shape, out);
                if self.batch_norm {
                    shape = push(format!("block{b}.bn{l}"), LayerSpec::BatchNorm, shape, shape);
                }
                shape = push(format!("block{b}.relu{l}"), LayerSpec::Relu, shape, shape);
            }
            if let Some(pool) = tr.pool {
                let spec = match pool {
                    PoolKind::Max(p) => p,
                    PoolKind::Global => PoolSpec::new((shape.height, shape.width), (1, 1), [0; 4]),
                };
                let out = spec
                    .output_shape(shape)
                    .map_err(|e| Error::Config(format!("block{b} pool: {e}")))?;
                shape = push(format!("block{b}.pool"), LayerSpec::MaxPool(spec), shape, out);
            }
            if let Some(rate) = tr.dropout {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Config(format!(
                        "block{b} dropout rate {rate} outside [0,1)"
                    )));
                }
                shape = push(
                    format!("block{b}.dropout"),
                    LayerSpec::Dropout(rate),
                    shape,
                    shape,
                );
            }
        }
        if shape.channels != self.class_count || shape.height != 1 || shape.width != 1 {
            return Err(Error::Config(format!(
                "network ends in {}x{}x{} but the softmax head needs {}x1x1",
                shape.channels, shape.height, shape.width, self.class_count
            )));
        }
        push("head".into(), LayerSpec::SoftmaxHead, shape, shape);
        Ok(layers)
    }

    /// Output shape of every layer for a single image.
    pub fn infer_shapes(&self) -> Result<Vec<Shape4>> {
        Ok(self.resolve(1)?.into_iter().map(|l| l.output).collect())
    }

    /// Same architecture with every hidden width divided by `divisor`
    /// (at least 1). Sparse widths are recomputed from their windows and the
    /// class head is kept.
    pub fn scaled(&self, divisor: usize) -> Result<NetworkConfig> {
        if divisor == 0 {
            return Err(Error::Param("width divisor must be >= 1".into()));
        }
        let mut cfg = self.clone();
        let last = cfg.blocks.len() - 1;
        let mut c = cfg.input.channels;
        for (bi, block) in cfg.blocks.iter_mut().enumerate() {
            let mut lens = block.window_lens.iter_mut();
            for i in 0..3 {
                if block.pattern[i] {
                    let len = lens
                        .next()
                        .ok_or_else(|| Error::Config(format!("block{} is missing window lengths", bi + 1)))?;
                    *len = (*len).min(c);
                    block.widths[i] = c - *len + 1;
                } else if !(bi == last && i == 2) {
                    block.widths[i] = (block.widths[i] / divisor).max(1);
                }
                c = block.widths[i];
            }
        }
        if divisor > 1 {
            cfg.name = format!("{}/{}", self.name, divisor);
        }
        Ok(cfg)
    }

    /// Replaces the class head width.
    pub fn with_class_count(&self, classes: usize) -> NetworkConfig {
        let mut cfg = self.clone();
        cfg.class_count = classes;
        if let Some(block) = cfg.blocks.last_mut() {
            block.widths[2] = classes;
        }
        cfg
    }

    /// SHA-256 of the canonical text form.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<NetworkConfig> {
        parse_config(text)
    }
}

fn fmt_pool(pool: &Option<PoolKind>) -> String {
    match pool {
        None => "none".into(),
        Some(PoolKind::Global) => "global".into(),
        Some(PoolKind::Max(p)) => format!(
            "max {}x{} stride {}x{} pad {},{},{},{}",
            p.window.0, p.window.1, p.stride.0, p.stride.1, p.pad[0], p.pad[1], p.pad[2], p.pad[3]
        ),
    }
}

impl fmt::Display for NetworkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        writeln!(s, "name = {}", self.name)?;
        writeln!(
            s,
            "input = {}x{}x{}",
            self.input.channels, self.input.height, self.input.width
        )?;
        writeln!(s, "class_count = {}", self.class_count)?;
        writeln!(s, "batch_norm = {}", self.batch_norm)?;
        for (i, (b, t)) in self.blocks.iter().zip(&self.transitions).enumerate() {
            writeln!(s)?;
            writeln!(s, "[block{}]", i + 1)?;
            writeln!(s, "pattern = {}", b.pattern_code())?;
            writeln!(s, "first_kernel = {}x{}", b.first_kernel.0, b.first_kernel.1)?;
            writeln!(s, "inner_spatial = {}", b.inner_spatial)?;
            writeln!(s, "widths = {},{},{}", b.widths[0], b.widths[1], b.widths[2])?;
            let lens: Vec<String> = b.window_lens.iter().map(|l| l.to_string()).collect();
            writeln!(s, "window_len = {}", lens.join(","))?;
            writeln!(s, "shared = {}", b.shared)?;
            writeln!(s, "pool = {}", fmt_pool(&t.pool))?;
            match t.dropout {
                None => writeln!(s, "dropout = none")?,
                Some(r) => writeln!(s, "dropout = {r}")?,
            }
        }
        f.write_str(&s)
    }
}

struct Line<'a> {
    number: usize,
    key: &'a str,
    value: &'a str,
}

fn config_err(line: usize, msg: impl fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn parse_usize(l: &Line<'_>, v: &str) -> Result<usize> {
    v.trim().parse().map_err(|_| {
        config_err(
            l.number,
            format!("{}: '{v}' is not a non-negative integer", l.key),
        )
    })
}

fn parse_pair(l: &Line<'_>, v: &str) -> Result<(usize, usize)> {
    let (a, b) = v
        .split_once('x')
        .ok_or_else(|| config_err(l.number, format!("{}: expected AxB, got '{v}'", l.key)))?;
    Ok((parse_usize(l, a)?, parse_usize(l, b)?))
}

fn parse_bool(l: &Line<'_>) -> Result<bool> {
    match l.value {
        "true" => Ok(true),
        "false" => Ok(false),
        v => Err(config_err(
            l.number,
            format!("{}: expected true/false, got '{v}'", l.key),
        )),
    }
}

fn parse_list(l: &Line<'_>) -> Result<Vec<usize>> {
    if l.value.is_empty() {
        return Ok(Vec::new());
    }
    l.value.split(',').map(|v| parse_usize(l, v)).collect()
}

fn parse_pool(l: &Line<'_>) -> Result<Option<PoolKind>> {
    let words: Vec<&str> = l.value.split_whitespace().collect();
    match words.as_slice() {
        ["none"] => Ok(None),
        ["global"] => Ok(Some(PoolKind::Global)),
        ["max", window, "stride", stride, "pad", pad] => {
            let pads = pad
                .split(',')
                .map(|v| parse_usize(l, v))
                .collect::<Result<Vec<_>>>()?;
            let pad: [usize; 4] = pads
                .try_into()
                .map_err(|_| config_err(l.number, "pool pad needs 4 values top,bottom,left,right"))?;
            Ok(Some(PoolKind::Max(PoolSpec::new(
                parse_pair(l, window)?,
                parse_pair(l, stride)?,
                pad,
            ))))
        }
        _ => Err(config_err(
            l.number,
            format!(
                "pool: expected 'none', 'global' or 'max KxK stride SxS pad t,b,l,r', got '{}'",
                l.value
            ),
        )),
    }
}

#[derive(Default)]
struct BlockDraft {
    pattern: Option<[bool; 3]>,
    first_kernel: Option<(usize, usize)>,
    inner_spatial: Option<usize>,
    widths: Option<[usize; 3]>,
    window_lens: Option<Vec<usize>>,
    shared: Option<bool>,
    pool: Option<Option<PoolKind>>,
    dropout: Option<Option<f64>>,
}

fn required<T>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing key '{what}'")))
}

fn parse_config(text: &str) -> Result<NetworkConfig> {
    let mut name = None;
    let mut input = None;
    let mut class_count = None;
    let mut batch_norm = None;
    let mut drafts: Vec<BlockDraft> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let number = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(section) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let expected = format!("block{}", drafts.len() + 1);
            if section.trim() != expected {
                return Err(config_err(
                    number,
                    format!("expected section [{expected}], got [{section}]"),
                ));
            }
            drafts.push(BlockDraft::default());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| config_err(number, format!("expected 'key = value', got '{content}'")))?;
        let l = Line {
            number,
            key: key.trim(),
            value: value.trim(),
        };
        match drafts.last_mut() {
            None => match l.key {
                "name" => name = Some(l.value.to_string()),
                "input" => {
                    let dims: Vec<&str> = l.value.split('x').collect();
                    let [c, h, w] = dims.as_slice() else {
                        return Err(config_err(number, "input: expected CxHxW"));
                    };
                    input = Some(Shape4::new(
                        1,
                        parse_usize(&l, c)?,
                        parse_usize(&l, h)?,
                        parse_usize(&l, w)?,
                    )?);
                }
                "class_count" => class_count = Some(parse_usize(&l, l.value)?),
                "batch_norm" => batch_norm = Some(parse_bool(&l)?),
                k => return Err(config_err(number, format!("unknown key '{k}'"))),
            },
            Some(d) => match l.key {
                "pattern" => {
                    d.pattern = Some(BlockSpec::parse_pattern(l.value).map_err(|e| config_err(number, e))?)
                }
                "first_kernel" => d.first_kernel = Some(parse_pair(&l, l.value)?),
                "inner_spatial" => d.inner_spatial = Some(parse_usize(&l, l.value)?),
                "widths" => {
                    let w: [usize; 3] = parse_list(&l)?
                        .try_into()
                        .map_err(|_| config_err(number, "widths: expected 3 values"))?;
                    d.widths = Some(w);
                }
                "window_len" => d.window_lens = Some(parse_list(&l)?),
                "shared" => d.shared = Some(parse_bool(&l)?),
                "pool" => d.pool = Some(parse_pool(&l)?),
                "dropout" => {
                    d.dropout = Some(match l.value {
                        "none" => None,
                        v => Some(
                            v.parse::<f64>()
                                .map_err(|_| config_err(number, format!("dropout: '{v}' is not a number")))?,
                        ),
                    })
                }
                k => return Err(config_err(number, format!("unknown key '{k}'"))),
            },
        }
    }

    let mut blocks = Vec::with_capacity(drafts.len());
    let mut transitions = Vec::with_capacity(drafts.len());
    for (i, d) in drafts.into_iter().enumerate() {
        let ctx = |k: &str| format!("block{}.{k}", i + 1);
        blocks.push(BlockSpec {
            pattern: required(d.pattern, &ctx("pattern"))?,
            first_kernel: required(d.first_kernel, &ctx("first_kernel"))?,
            inner_spatial: required(d.inner_spatial, &ctx("inner_spatial"))?,
            widths: required(d.widths, &ctx("widths"))?,
            window_lens: d.window_lens.unwrap_or_default(),
            shared: required(d.shared, &ctx("shared"))?,
        });
        transitions.push(Transition {
            pool: d.pool.unwrap_or(None),
            dropout: d.dropout.unwrap_or(None),
        });
    }
    Ok(NetworkConfig {
        name: required(name, "name")?,
        input: required(input, "input")?,
        class_count: required(class_count, "class_count")?,
        batch_norm: batch_norm.unwrap_or(true),
        blocks,
        transitions,
    })
}

/// The chain of channel-local layers of a single shallow MLP (one per pattern
/// digit) over `widths[0]` inputs, 1×1 spatial. Dense layers connect every
/// input; sparse ones use `window_len` and must satisfy the valid-window width law.
pub fn mlp_chain(
    widths: &[usize],
    pattern: &str,
    window_len: Option<usize>,
    shared: bool,
) -> Result<Vec<(ClcSpec, usize)>> {
    if widths.len() < 2 {
        return Err(Error::Config(
            "an MLP needs at least an input and an output width".into(),
        ));
    }
    let layers = widths.len() - 1;
    if pattern.chars().count() != layers {
        return Err(Error::Config(format!(
            "pattern '{pattern}' has {} digits for {layers} layers",
            pattern.chars().count()
        )));
    }
    let mut out = Vec::with_capacity(layers);
    for (i, ch) in pattern.chars().enumerate() {
        let (c_in, c_out) = (widths[i], widths[i + 1]);
        let spec = match ch {
            '0' => ClcSpec {
                shared,
                ..ClcSpec::dense(c_in, c_out, 1)
            },
            '1' => {
                let l = window_len.ok_or_else(|| {
                    Error::Config("pattern has a sparse layer but no window length was given".into())
                })?;
                ClcSpec::sparse(l, 1, shared)
            }
            other => return Err(Error::Config(format!("pattern digit '{other}' is not 0 or 1"))),
        };
        let produced = spec
            .out_channels(c_in)
            .map_err(|e| Error::Config(format!("layer {}: {e}", i + 1)))?;
        if produced != c_out {
            return Err(Error::Config(format!(
                "layer {}: {c_in} inputs with window {} give {produced} outputs, not {c_out}",
                i + 1,
                spec.window_len
            )));
        }
        out.push((spec, c_in));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netbuilder::presets::preset;

    #[test]
    fn channel_counts() {
        assert_eq!(channel_out_count(192, 3, 1).unwrap(), 190);
        assert_eq!(channel_out_count(192, 48, 1).unwrap(), 145);
        assert_eq!(channel_out_count(224, 3, 1).unwrap(), 222);
        assert_eq!(channel_out_count(17, 1, 1).unwrap(), 17);
        assert_eq!(channel_out_count(10, 3, 2).unwrap(), 16);
        assert!(channel_out_count(3, 4, 1).is_err());
    }

    fn chain_weights(pattern: &str, l: Option<usize>, shared: bool) -> usize {
        mlp_chain(&[8, 6, 4, 2], pattern, l, shared)
            .unwrap()
            .iter()
            .map(|(s, c)| param_count(s, *c).unwrap().0)
            .sum()
    }

    #[test]
    fn dense_and_sparse_mlp_weight_counts() {
        let per_layer: Vec<usize> = mlp_chain(&[8, 6, 4, 2], "000", None, false)
            .unwrap()
            .iter()
            .map(|(s, c)| param_count(s, *c).unwrap().0)
            .collect();
        assert_eq!(per_layer, vec![48, 24, 8]);
        assert_eq!(chain_weights("000", None, false), 80);
        assert_eq!(chain_weights("111", Some(3), true), 9);
        assert_eq!(chain_weights("111", Some(3), false), 36);
        // partial patterns mix both counts
        assert_eq!(chain_weights("010", Some(3), false), 48 + 12 + 8);
    }

    #[test]
    fn mlp_chain_rejects_inconsistent_widths() {
        assert!(mlp_chain(&[8, 5, 4, 2], "111", Some(3), false).is_err());
        assert!(mlp_chain(&[8, 6, 4, 2], "11", Some(3), false).is_err());
        assert!(mlp_chain(&[8, 6, 4, 2], "111", None, false).is_err());
    }

    #[test]
    fn biases_follow_output_channels() {
        let spec = ClcSpec::sparse(3, 1, true);
        assert_eq!(param_count(&spec, 192).unwrap(), (3, 190));
    }

    #[test]
    fn declared_width_mismatch_names_the_layer() {
        let mut cfg = preset("table2-L3").unwrap();
        cfg.blocks[1].widths[1] = 191;
        let err = cfg.resolve(1).unwrap_err().to_string();
        assert!(err.contains("block2 layer 2"), "{err}");
    }

    #[test]
    fn single_dense_block_keeps_spatial_size() {
        let cfg = NetworkConfig {
            name: "tiny".into(),
            input: Shape4::new(1, 3, 4, 4).unwrap(),
            class_count: 2,
            batch_norm: false,
            blocks: vec![BlockSpec {
                pattern: [false; 3],
                first_kernel: (1, 1),
                inner_spatial: 1,
                widths: [4, 4, 2],
                window_lens: vec![],
                shared: false,
            }],
            transitions: vec![Transition {
                pool: Some(PoolKind::Global),
                dropout: None,
            }],
        };
        let layers = cfg.resolve(1).unwrap();
        for l in layers
            .iter()
            .take_while(|l| !matches!(l.spec, LayerSpec::MaxPool(_)))
        {
            assert_eq!((l.output.height, l.output.width), (4, 4));
        }
        assert_eq!(layers.last().unwrap().output, Shape4::new(1, 2, 1, 1).unwrap());
    }

    #[test]
    fn parse_reports_line_numbers_and_unknown_keys() {
        let text = preset("cic3d-default")
            .unwrap()
            .to_text()
            .replace("shared = false", "shard = false");
        let err = NetworkConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("unknown key 'shard'"), "{err}");
        assert!(err.contains("line"), "{err}");
        assert!(NetworkConfig::parse("name = x\n[block2]\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = preset("table2-L3").unwrap();
        let text = format!(
            "# a comment\n\n{}",
            cfg.to_text().replace("\n[", "  # trailing\n[")
        );
        assert_eq!(NetworkConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn scaling_divides_widths_and_keeps_head() {
        let cfg = preset("cic3d-default").unwrap().scaled(4).unwrap();
        assert_eq!(cfg.blocks[0].widths, [56, 54, 48]);
        assert_eq!(cfg.blocks[2].widths, [56, 54, 10]);
        cfg.resolve(2).unwrap();
        let cfg = preset("table2-L3").unwrap().scaled(16).unwrap();
        assert_eq!(cfg.blocks[1].widths, [12, 10, 12]);
    }

    #[test]
    fn hash_tracks_content() {
        let a = preset("table2-L3").unwrap();
        let b = preset("table2-L6").unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
