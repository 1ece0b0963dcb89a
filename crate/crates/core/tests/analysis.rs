use proptest::prelude::*;

use tcpvit::analysis::{
    compare_params, count_params, emit_flops, emit_params, flops_model, group_thousands, Format,
    ParamBreakdown,
};
use tcpvit::{EncoderParams, ModelConfig, Variant};

/// Closed-form parameter total, written independently of the library.
fn expected_total(cfg: &ModelConfig) -> u64 {
    let p2 = (cfg.patch * cfg.patch) as u64;
    let c = cfg.channels as u64;
    let (d, s) = match cfg.variant {
        Variant::Tcp => (p2, c),
        Variant::Std => (p2 * c, 1),
    };
    let r = cfg.r_ff as u64;
    let n = ((cfg.img_h / cfg.patch) * (cfg.img_w / cfg.patch)) as u64;
    let k = cfg.num_classes as u64;
    // q, k, v, o weights and biases; two LayerNorms; two FFN projections.
    let block = 4 * (d * d + d) * s + 2 * 2 * d * s + (d * r * d + r * d + r * d * d + d) * s;
    let proj = match cfg.variant {
        Variant::Tcp => 0,
        Variant::Std => d * d + d,
    };
    cfg.layers as u64 * block + 2 * d * s + (n + 1) * d * s + d * s + proj + d * s * k + k
}

fn config_strategy() -> impl Strategy<Value = ModelConfig> {
    (
        1usize..5,
        1usize..5,
        1usize..5,
        1usize..5,
        1usize..4,
        1usize..5,
        2usize..11,
        any::<bool>(),
        0usize..8,
    )
        .prop_map(
            |(patch, gh, gw, channels, layers, r_ff, classes, tcp, head_pick)| {
                let d = patch * patch;
                let divisors: Vec<usize> = (1..=d).filter(|h| d % h == 0).collect();
                ModelConfig {
                    img_h: patch * gh,
                    img_w: patch * gw,
                    channels,
                    patch,
                    heads: divisors[head_pick % divisors.len()],
                    layers,
                    r_ff,
                    num_classes: classes,
                    variant: if tcp { Variant::Tcp } else { Variant::Std },
                    seed: 0,
                }
            },
        )
}

#[test]
fn published_classification_totals() {
    let cmp = compare_params(&ModelConfig::cls_paper()).unwrap();
    assert_eq!(cmp.tcp.grand_total, 43_114);
    assert_eq!(cmp.std.grand_total, 119_194);
    assert_eq!(format!("{:.3}", cmp.total_ratio), "0.362");
}

#[test]
fn published_segmentation_encoder_totals() {
    let cmp = compare_params(&ModelConfig::seg_paper()).unwrap();
    assert_eq!(cmp.tcp.encoder_total, 402_048);
    assert_eq!(cmp.std.encoder_total, 1_188_480);
    assert_eq!(format!("{:.3}", cmp.encoder_ratio), "0.338");
}

#[test]
fn weight_blocks_shrink_by_exactly_one_over_c() {
    for c in 1..=6 {
        let cfg = ModelConfig {
            channels: c,
            ..ModelConfig::cls_paper()
        };
        let cmp = compare_params(&cfg).unwrap();
        assert_eq!(cmp.tcp.mhsa_weights * c as u64, cmp.std.mhsa_weights);
        assert_eq!(cmp.tcp.ffn_weights * c as u64, cmp.std.ffn_weights);
        assert_eq!(cmp.tcp.biases(), cmp.std.biases());
        assert_eq!(cmp.tcp.pos, cmp.std.pos);
    }
}

#[test]
fn table_and_machine_formats() {
    let cmp = compare_params(&ModelConfig::cls_paper()).unwrap();
    let table = emit_params(&cmp, Format::Table).unwrap();
    let total = table.lines().find(|l| l.starts_with("Total  ")).unwrap();
    assert!(
        total.contains("43,114") && total.contains("119,194"),
        "{total}"
    );

    let csv = emit_params(&cmp, Format::Csv).unwrap();
    let rows: Vec<ParamBreakdown> = csv::Reader::from_reader(csv.as_bytes())
        .deserialize()
        .map(|r| r.unwrap())
        .collect();
    assert_eq!(rows, vec![cmp.tcp.clone(), cmp.std.clone()]);

    let json = emit_params(&cmp, Format::Json).unwrap();
    let back: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(back["tcp"]["grand_total"], 43_114);

    let flops = flops_model(&ModelConfig::cls_paper(), 65).unwrap();
    assert!(emit_flops(&flops, Format::Table)
        .unwrap()
        .contains("ratio = "));
    assert!(emit_flops(&flops, Format::Csv)
        .unwrap()
        .starts_with("tokens,"));
    assert!("yaml".parse::<Format>().is_err());
}

#[test]
fn thousands_grouping() {
    assert_eq!(group_thousands(0), "0");
    assert_eq!(group_thousands(999), "999");
    assert_eq!(group_thousands(1_000), "1,000");
    assert_eq!(group_thousands(1_188_480), "1,188,480");
    assert_eq!(group_thousands(u64::MAX), "18,446,744,073,709,551,615");
}

#[test]
fn flops_ratio_values() {
    let cls = ModelConfig::cls_paper();
    let r = flops_model(&cls, cls.tokens()).unwrap();
    assert_eq!(r.tokens, 65);
    assert!((r.ratio - 516.0 / 1028.0).abs() <= 1e-12);
    assert_eq!(r.tcp_flops as f64 / r.std_flops as f64, r.ratio);
    let c1 = ModelConfig { channels: 1, ..cls };
    assert_eq!(flops_model(&c1, 65).unwrap().ratio, 1.0);
    assert!(flops_model(&cls, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn realized_count_matches_formula(cfg in config_strategy()) {
        let realized = EncoderParams::<f64>::zeros(&cfg).unwrap().num_params() as u64;
        let counted = count_params(&cfg).unwrap();
        prop_assert_eq!(realized, counted.grand_total);
        prop_assert_eq!(counted.grand_total, expected_total(&cfg));
        prop_assert_eq!(
            counted.encoder_total,
            counted.per_layer * cfg.layers as u64 + counted.final_ln
        );
    }

    #[test]
    fn flops_ratio_is_bounded_and_monotone(cfg in config_strategy(), n in 1usize..5_000) {
        let c = cfg.channels as f64;
        let a = flops_model(&cfg, n).unwrap();
        let b = flops_model(&cfg, n + 1).unwrap();
        prop_assert!(a.ratio >= 1.0 / c && a.ratio <= 1.0);
        if cfg.channels > 1 {
            prop_assert!(b.ratio > a.ratio);
        } else {
            prop_assert_eq!(a.ratio, 1.0);
        }
        let counted = a.tcp_flops_per_layer as f64 / a.std_flops_per_layer as f64;
        prop_assert!((counted - a.ratio).abs() <= 1e-12);
    }
}
