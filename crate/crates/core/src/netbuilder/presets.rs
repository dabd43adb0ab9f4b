//! Named architectures.
//!
//! * `table2-L{3,6,12,24,48}`: dense blocks 1 and 3, a 010 block 2 whose
//!   sparse layer uses the given channel window on 192 channels.
//! * `table3-N{160,192,224,256}`: window 3, block-2 first layer widened to N.
//! * `cic1d-best`: `table3-N224`.
//! * `cic3d-default`: 010 in all three blocks, sparse input width 224,
//!   window 3, 5×5 sparse kernels.
//! * `nin-dense`: every layer dense, widths as the table-2 columns.
//!
//! All presets pool 3×3/2 with (0,1,0,1) padding plus dropout 0.5 after
//! blocks 1 and 2, and take a global max after block 3 (8×8 at 32×32 input).

use crate::error::{Error, Result};
use crate::layers::PoolSpec;
use crate::tensor::Shape4;

use super::config::{BlockSpec, NetworkConfig, PoolKind, Transition};

pub const TABLE2_WINDOWS: [usize; 5] = [3, 6, 12, 24, 48];
pub const TABLE3_WIDTHS: [usize; 4] = [160, 192, 224, 256];

pub fn preset_names() -> Vec<String> {
    let mut names: Vec<String> = TABLE2_WINDOWS.iter().map(|l| format!("table2-L{l}")).collect();
    names.extend(TABLE3_WIDTHS.iter().map(|n| format!("table3-N{n}")));
    names.extend(["cic1d-best", "cic3d-default", "nin-dense"].map(String::from));
    names
}

fn dense(first_kernel: usize, widths: [usize; 3]) -> BlockSpec {
    BlockSpec {
        pattern: [false; 3],
        first_kernel: (first_kernel, first_kernel),
        inner_spatial: 1,
        widths,
        window_lens: vec![],
        shared: false,
    }
}

fn mlp010(first_kernel: usize, inner: usize, widths: [usize; 3], window_len: usize) -> BlockSpec {
    BlockSpec {
        pattern: [false, true, false],
        first_kernel: (first_kernel, first_kernel),
        inner_spatial: inner,
        widths,
        window_lens: vec![window_len],
        shared: false,
    }
}

fn standard_transitions() -> Vec<Transition> {
    let pool = Some(PoolKind::Max(PoolSpec::new((3, 3), (2, 2), [0, 1, 0, 1])));
    vec![
        Transition {
            pool,
            dropout: Some(0.5),
        },
        Transition {
            pool,
            dropout: Some(0.5),
        },
        Transition {
            pool: Some(PoolKind::Global),
            dropout: None,
        },
    ]
}

fn network(name: &str, blocks: Vec<BlockSpec>) -> NetworkConfig {
    NetworkConfig {
        name: name.to_string(),
        input: Shape4 {
            batch: 1,
            channels: 3,
            height: 32,
            width: 32,
        },
        class_count: 10,
        batch_norm: true,
        blocks,
        transitions: standard_transitions(),
    }
}

fn table2(window_len: usize) -> Vec<BlockSpec> {
    vec![
        dense(5, [192, 192, 192]),
        mlp010(5, 1, [192, 192 - window_len + 1, 192], window_len),
        dense(3, [192, 192, 10]),
    ]
}

fn table3(width: usize) -> Vec<BlockSpec> {
    vec![
        dense(5, [192, 192, 192]),
        mlp010(5, 1, [width, width - 2, 192], 3),
        dense(3, [192, 192, 10]),
    ]
}

pub fn preset(name: &str) -> Result<NetworkConfig> {
    let unknown = || Error::UnknownPreset(name.to_string());
    if let Some(l) = name.strip_prefix("table2-L") {
        let l: usize = l.parse().map_err(|_| unknown())?;
        if !TABLE2_WINDOWS.contains(&l) {
            return Err(unknown());
        }
        return Ok(network(name, table2(l)));
    }
    if let Some(n) = name.strip_prefix("table3-N") {
        let n: usize = n.parse().map_err(|_| unknown())?;
        if !TABLE3_WIDTHS.contains(&n) {
            return Err(unknown());
        }
        return Ok(network(name, table3(n)));
    }
    match name {
        "cic1d-best" => Ok(network(name, table3(224))),
        "cic3d-default" => Ok(network(
            name,
            vec![
                mlp010(5, 5, [224, 222, 192], 3),
                mlp010(5, 5, [224, 222, 192], 3),
                mlp010(3, 5, [224, 222, 10], 3),
            ],
        )),
        "nin-dense" => Ok(network(
            name,
            vec![
                dense(5, [192, 192, 192]),
                dense(5, [192, 192, 192]),
                dense(3, [192, 192, 10]),
            ],
        )),
        _ => Err(unknown()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ClcSpec;
    use crate::netbuilder::config::LayerSpec;

    fn convs(name: &str) -> Vec<(ClcSpec, usize)> {
        preset(name)
            .unwrap()
            .resolve(1)
            .unwrap()
            .into_iter()
            .filter_map(|l| match l.spec {
                LayerSpec::Clc(s) => Some((s, l.input.channels)),
                _ => None,
            })
            .collect()
    }

    /// kh × kw × L × N_out, the notation used to print kernels.
    fn kernel(spec: &ClcSpec, c_in: usize) -> (usize, usize, usize, usize) {
        (
            spec.kernel.0,
            spec.kernel.1,
            spec.window_len,
            spec.out_channels(c_in).unwrap(),
        )
    }

    #[test]
    fn table2_l3_block2_kernels() {
        let c = convs("table2-L3");
        assert_eq!(c.len(), 9);
        assert_eq!(kernel(&c[3].0, c[3].1), (5, 5, 192, 192));
        assert_eq!(kernel(&c[4].0, c[4].1), (1, 1, 3, 190));
        assert_eq!(kernel(&c[5].0, c[5].1), (1, 1, 190, 192));
        assert_eq!(kernel(&c[0].0, c[0].1), (5, 5, 3, 192));
        assert_eq!(kernel(&c[6].0, c[6].1), (3, 3, 192, 192));
        assert_eq!(kernel(&c[8].0, c[8].1), (1, 1, 192, 10));
    }

    #[test]
    fn table3_n224_block2_first_kernel() {
        let c = convs("table3-N224");
        assert_eq!(kernel(&c[3].0, c[3].1), (5, 5, 192, 224));
        assert_eq!(kernel(&c[4].0, c[4].1), (1, 1, 3, 222));
        assert_eq!(kernel(&c[5].0, c[5].1), (1, 1, 222, 192));
        assert_eq!(convs("cic1d-best"), c);
    }

    #[test]
    fn cic3d_sparse_kernels_are_five_by_five() {
        let c = convs("cic3d-default");
        for i in [1, 4, 7] {
            assert_eq!(c[i].0.kernel, (5, 5));
            assert_eq!(c[i].0.window_len, 3);
            assert_eq!(c[i].1, 224);
            assert!(!c[i].0.shared);
        }
        assert_eq!(kernel(&c[0].0, c[0].1), (5, 5, 3, 224));
        assert_eq!(kernel(&c[6].0, c[6].1), (3, 3, 192, 224));
        assert_eq!(kernel(&c[8].0, c[8].1), (1, 1, 222, 10));
    }

    #[test]
    fn cic3d_layer_inventory() {
        let layers = preset("cic3d-default").unwrap().resolve(1).unwrap();
        let count = |k: &str| layers.iter().filter(|l| l.spec.kind() == k).count();
        assert_eq!(count("clc"), 9);
        assert_eq!(count("bn"), 9);
        assert_eq!(count("relu"), 9);
        assert_eq!(count("dropout"), 2);
        assert_eq!(count("maxpool"), 3);
        let global = layers.iter().rfind(|l| l.spec.kind() == "maxpool").unwrap();
        assert_eq!((global.input.height, global.input.width), (8, 8));
    }

    #[test]
    fn nin_dense_has_no_sparse_layer() {
        for (spec, c_in) in convs("nin-dense") {
            assert!(spec.is_dense_for(c_in));
        }
    }

    #[test]
    fn hundred_class_head() {
        let cfg = preset("cic3d-default").unwrap().with_class_count(100);
        let shapes = cfg.infer_shapes().unwrap();
        assert_eq!(shapes.last().unwrap().channels, 100);
    }

    #[test]
    fn unknown_names() {
        for bad in ["table2-L4", "table3-N100", "cic", "table2-Lx"] {
            assert!(matches!(preset(bad), Err(Error::UnknownPreset(_))));
        }
    }

    #[test]
    fn every_preset_resolves() {
        for name in preset_names() {
            preset(&name).unwrap().resolve(1).unwrap();
        }
    }
}
