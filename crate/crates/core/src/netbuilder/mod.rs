//! Architecture descriptions, presets, shape inference and network construction.

mod config;
mod network;
mod presets;

pub use config::{
    channel_out_count, mlp_chain, param_count, BlockSpec, LayerSpec, NetworkConfig, PoolKind, ResolvedLayer,
    Transition,
};
pub use network::{
    build_network, Gradients, Layer, LayerKind, LossOutput, Network, Param, ParamMut, Pass, Trace,
};
pub use presets::{preset, preset_names, TABLE2_WINDOWS, TABLE3_WIDTHS};

/// Per-layer output shapes of `cfg` for one image.
pub fn infer_shapes(cfg: &NetworkConfig) -> crate::Result<Vec<crate::Shape4>> {
    cfg.infer_shapes()
}
