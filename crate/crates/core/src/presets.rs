//! Built-in skeletons, archs, and device profiles.
//!
//! The `mnasnet_like` skeleton and arch are an illustrative seven-block mobile
//! layout; they are not a faithful reproduction of any published network.

use crate::arch::{BlockChoices, BlockSpec, ConvOp, Head, LayerSpec, NetworkArch, Skeleton, SkipOp};
use crate::cost::{scaled_filters, CoefficientEntry, DeviceProfile, OpKind, PROFILE_VERSION};

const MBCONV3: ConvOp = ConvOp::MbConv { expansion: 3 };
const MBCONV6: ConvOp = ConvOp::MbConv { expansion: 6 };

/// `base` scaled by 0.75, 1.0 and 1.25, rounded to multiples of 8, deduplicated.
pub fn filter_set(base: u32) -> Vec<u32> {
    let mut out: Vec<u32> = [0.75, 1.0, 1.25]
        .iter()
        .map(|&m| scaled_filters(base, m))
        .collect();
    out.dedup();
    out
}

/// Seven-block 224x224 mobile skeleton with the full per-block choice menu.
pub fn mnasnet_like() -> Skeleton {
    let strides_and_bases = [(1, 16), (2, 24), (2, 40), (2, 80), (1, 96), (2, 192), (1, 320)];
    Skeleton {
        skeleton_version: 1,
        id: "mnasnet-like".into(),
        input_resolution: 224,
        stem_filters: 32,
        blocks: strides_and_bases
            .iter()
            .map(|&(stride, base)| BlockChoices {
                stride,
                conv_ops: vec![ConvOp::Regular, ConvOp::DepthwiseSep, MBCONV3, MBCONV6],
                kernels: vec![3, 5],
                skips: vec![SkipOp::NoSkip, SkipOp::Identity, SkipOp::MaxPool, SkipOp::AvgPool],
                filters: filter_set(base),
                repeats: vec![1, 2, 3, 4],
            })
            .collect(),
        head: Head { num_classes: 1000 },
    }
}

/// A hand-written point in [`mnasnet_like`]: mostly MBConv with 5x5 kernels
/// in the middle stages.
pub fn mnasnet_like_arch() -> NetworkArch {
    let rows: [(ConvOp, u32, SkipOp, u32, u32, u32); 7] = [
        (ConvOp::DepthwiseSep, 3, SkipOp::NoSkip, 16, 1, 1),
        (MBCONV3, 3, SkipOp::Identity, 24, 3, 2),
        (MBCONV3, 5, SkipOp::Identity, 40, 3, 2),
        (MBCONV6, 5, SkipOp::Identity, 80, 3, 2),
        (MBCONV6, 3, SkipOp::Identity, 96, 2, 1),
        (MBCONV6, 5, SkipOp::Identity, 192, 4, 2),
        (MBCONV6, 3, SkipOp::NoSkip, 320, 1, 1),
    ];
    let blocks = rows
        .iter()
        .map(|&(conv_op, kernel, skip_op, filters, repeats, stride)| BlockSpec {
            layer: LayerSpec {
                conv_op,
                kernel,
                skip_op,
                filters,
            },
            repeats,
            stride,
        })
        .collect();
    NetworkArch::build(&mnasnet_like(), blocks).expect("preset arch resolves")
}

/// Two-block 32x32 skeleton with 144 choices per block (20,736 archs in total),
/// small enough to enumerate exhaustively.
pub fn tiny() -> Skeleton {
    let block = |filters: Vec<u32>| BlockChoices {
        stride: 2,
        conv_ops: vec![ConvOp::Regular, ConvOp::DepthwiseSep, MBCONV6],
        kernels: vec![3, 5],
        skips: vec![SkipOp::NoSkip, SkipOp::Identity],
        filters,
        repeats: vec![1, 2, 3, 4],
    };
    Skeleton {
        skeleton_version: 1,
        id: "tiny".into(),
        input_resolution: 32,
        stem_filters: 16,
        blocks: vec![block(vec![16, 24, 32]), block(vec![32, 48, 64])],
        head: Head { num_classes: 10 },
    }
}

/// Affine latency coefficients loosely shaped like a mid-range phone CPU:
/// depthwise work costs more per MAC than dense convolution.
pub fn desk_phone_profile() -> DeviceProfile {
    let mut coefficients = Vec::new();
    for (op, per_mac_ns, overhead_us) in [
        (OpKind::Regular, 0.12, 40.0),
        (OpKind::DepthwiseSep, 0.30, 60.0),
        (OpKind::MbConv, 0.22, 90.0),
    ] {
        for kernel in [3, 5] {
            // 5x5 depthwise kernels amortize loads slightly better per MAC.
            let per_mac_ns = if kernel == 5 && op != OpKind::Regular {
                per_mac_ns * 0.9
            } else {
                per_mac_ns
            };
            coefficients.push(CoefficientEntry {
                op,
                kernel,
                per_mac_ns,
                per_param_ns: 0.4,
                fixed_overhead_us: overhead_us,
            });
        }
    }
    DeviceProfile {
        profile_version: PROFILE_VERSION,
        name: "desk-phone".into(),
        coefficients,
        lookup: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::validate;
    use crate::codec::cardinality;

    #[test]
    fn presets_are_valid() {
        let sk = mnasnet_like();
        sk.check().unwrap();
        assert!(validate(&mnasnet_like_arch(), &sk).is_valid());
        tiny().check().unwrap();
        desk_phone_profile().check().unwrap();
    }

    #[test]
    fn tiny_has_20736_archs() {
        assert_eq!(cardinality(&tiny()).to_string(), "20736");
    }

    #[test]
    fn filter_sets_follow_rounding() {
        assert_eq!(filter_set(16), vec![16, 24]);
        assert_eq!(filter_set(24), vec![16, 24, 32]);
        assert_eq!(filter_set(40), vec![32, 40, 48]);
        assert_eq!(filter_set(320), vec![240, 320, 400]);
    }
}
