use mixattn::costmodel::*;
use mixattn::decoder::{init_params, FfnKind, ModelConfig, Variant};
use proptest::prelude::*;

const G: f64 = 1e9;

fn registry() -> NamedConfigRegistry {
    NamedConfigRegistry::bundled()
}

fn report(name: &str, n: u64, m: u64, v: Variant) -> FlopsReport {
    let e = registry().get(name).unwrap().clone();
    flops_full_accounting(&e.name, &e.to_config(v), n, m, v).unwrap()
}

fn within(actual: f64, expected: f64, rel: f64) -> bool {
    (actual - expected).abs() <= rel * expected
}

// Reference decoder FLOPs (G) per V:L ratio, vanilla then mixture.
const REFERENCE_TOTALS: [(&str, [f64; 5], [f64; 5]); 4] = [
    (
        "Qwen2-0.5B",
        [801.0, 837.0, 991.0, 1620.0, 1970.0],
        [44.0, 78.0, 224.0, 821.0, 1150.0],
    ),
    (
        "TinyLlama-1.1B",
        [1680.0, 1750.0, 2080.0, 3400.0, 4120.0],
        [92.0, 161.0, 466.0, 1720.0, 2400.0],
    ),
    (
        "Llama-3.2-1B",
        [1950.0, 2040.0, 2410.0, 3880.0, 4660.0],
        [110.0, 192.0, 546.0, 1970.0, 2730.0],
    ),
    (
        "Llama-3.2-3B",
        [5080.0, 5310.0, 6260.0, 10090.0, 12130.0],
        [310.0, 525.0, 1450.0, 5140.0, 7120.0],
    ),
];

#[test]
fn llama_1b_breakdown_at_728_64() {
    let v = report("llama-3.2-1b", 728, 64, Variant::Vanilla);
    let h = report("llama-3.2-1b", 728, 64, Variant::HimixDedicated);
    assert!(
        within(v.attn_flops as f64 / G, 348.0, 0.15),
        "{}",
        v.attn_flops as f64 / G
    );
    assert!(within(v.ffn_flops as f64 / G, 1276.0, 0.15));
    assert!(within(v.total as f64 / G, 2040.0, 0.15));
    assert!(
        within(h.attn_flops as f64 / G, 56.0, 0.15),
        "{}",
        h.attn_flops as f64 / G
    );
    assert!(within(h.ffn_flops as f64 / G, 103.0, 0.15));
    assert!(within(h.total as f64 / G, 192.0, 0.15));
}

#[test]
fn qwen_totals_and_ratio() {
    let v = report("Qwen2-0.5B", 728, 64, Variant::Vanilla);
    let h = report("Qwen2-0.5B", 728, 64, Variant::HimixDedicated);
    assert!(within(v.total as f64 / G, 837.0, 0.15));
    assert!(within(h.total as f64 / G, 78.0, 0.15));
    let r = h.total as f64 / v.total as f64;
    assert!((0.07..=0.12).contains(&r), "{r}");
}

#[test]
fn every_grid_cell_tracks_reference_ratio() {
    for (name, van, mix) in REFERENCE_TOTALS {
        for (k, &(n, m)) in GRID_RATIOS.iter().enumerate() {
            let v = report(name, n, m, Variant::Vanilla);
            let h = report(name, n, m, Variant::HimixDedicated);
            let ours = h.total as f64 / v.total as f64;
            let theirs = mix[k] / van[k];
            assert!(
                (ours - theirs).abs() <= 0.03,
                "{name} {n}:{m}: ratio {ours:.3} vs reference {theirs:.3}"
            );
        }
    }
}

#[test]
fn table_components_within_tolerance_at_728_64() {
    // (F_Attn, F_FFN) vanilla then mixture
    let rows = [
        ("Qwen2-0.5B", (124.0, 497.0), (20.0, 40.0)),
        ("TinyLlama-1.1B", (442.0, 1206.0), (55.0, 97.0)),
        ("Llama-3.2-1B", (348.0, 1276.0), (56.0, 103.0)),
        ("Llama-3.2-3B", (1333.0, 3349.0), (204.0, 270.0)),
    ];
    for (name, va, mi) in rows {
        let v = report(name, 728, 64, Variant::Vanilla);
        let h = report(name, 728, 64, Variant::HimixDedicated);
        assert!(
            within(v.attn_flops as f64 / G, va.0, 0.15),
            "{name} vanilla attn"
        );
        assert!(
            within(v.ffn_flops as f64 / G, va.1, 0.15),
            "{name} vanilla ffn"
        );
        assert!(
            within(h.attn_flops as f64 / G, mi.0, 0.15),
            "{name} mixture attn"
        );
        assert!(
            within(h.ffn_flops as f64 / G, mi.1, 0.15),
            "{name} mixture ffn"
        );
    }
}

#[test]
fn vicuna_decoder_ratio_near_twelve_percent() {
    let v = report("vicuna-7b", 728, 64, Variant::Vanilla);
    let h = report("vicuna-7b", 728, 64, Variant::HimixDedicated);
    let r = h.total as f64 / v.total as f64;
    assert!((0.10..=0.14).contains(&r), "{r}");
}

#[test]
fn injection_variants_order_like_the_ablations() {
    let u = report("llama-3.2-1b", 728, 64, Variant::HimixUniform).total as f64 / G;
    let c = report("llama-3.2-1b", 728, 64, Variant::HimixConnector).total as f64 / G;
    let d = report("llama-3.2-1b", 728, 64, Variant::HimixDedicated).total as f64 / G;
    assert!(within(u, 214.0, 0.15), "{u}");
    assert!(within(c, 354.0, 0.15), "{c}");
    assert!(d < u && u < c);
}

#[test]
fn params_match_reference_sizes() {
    let rows = [
        ("Qwen2-0.5B", 0.49, 0.50),
        ("TinyLlama-1.1B", 1.10, 1.11),
        ("Llama-3.2-1B", 1.24, 1.25),
        ("Llama-3.2-3B", 3.21, 3.28),
    ];
    for (name, van, mix) in rows {
        let e = registry().get(name).unwrap().clone();
        let pv = params_count(&e.to_config(Variant::Vanilla), Variant::Vanilla) as f64 / G;
        let pm = params_count(
            &e.to_config(Variant::HimixDedicated),
            Variant::HimixDedicated,
        ) as f64
            / G;
        assert!(within(pv, van, 0.05), "{name} vanilla {pv}");
        assert!(within(pm, mix, 0.05), "{name} mixture {pm}");
    }
}

#[test]
fn dedicated_params_exceed_vanilla_by_vision_projections() {
    for e in registry().entries() {
        let cfg = e.to_config(Variant::Vanilla);
        let extra =
            params_count(&cfg, Variant::HimixDedicated) - params_count(&cfg, Variant::Vanilla);
        assert_eq!(
            extra,
            (e.layers * e.d_vision * 2 * cfg.kv_width()) as u64,
            "{}",
            e.name
        );
    }
}

#[test]
fn toy_params_hand_count() {
    // l=2, d=8, d_ffn=32, vocab=16, plain FFN, untied head
    let mut cfg = ModelConfig::toy(Variant::Vanilla, 2, 8, 8, 16);
    cfg.d_ffn = 32;
    let per_layer = 4 * 8 * 8 + 2 * 8 * 32 + 2 * 8;
    let hand = 16 * 8 + 16 * 8 + 8 + 2 * per_layer;
    assert_eq!(params_count(&cfg, Variant::Vanilla), hand as u64);

    // The counted blocks are exactly the initialized weights minus the connector.
    let params = init_params(&cfg).unwrap();
    assert_eq!(
        params.n_params() as u64,
        hand as u64 + connector_params(&cfg)
    );

    let ded = cfg.with_variant(Variant::HimixDedicated);
    assert_eq!(
        init_params(&ded).unwrap().n_params() as u64,
        params_count(&ded, Variant::HimixDedicated)
    );
}

#[test]
fn closed_form_reduction_is_exactly_double() {
    for e in registry().entries() {
        let mut cfg = e.to_config(Variant::Vanilla);
        cfg.n_layers = 1;
        cfg.ffn = FfnKind::Plain;
        let d = cfg.d_model as u64;
        for (n, m) in [(0, 1), (728, 64), (17, 300)] {
            let opts = CostOptions::closed_form();
            let v = flops_with_options("x", &cfg, n, m, Variant::Vanilla, &opts).unwrap();
            let h = flops_with_options("x", &cfg, n, m, Variant::HimixDedicated, &opts).unwrap();
            assert_eq!(v.total, 2 * flops_closed_form_vanilla(n, m, d).unwrap());
            assert_eq!(h.total, 2 * flops_closed_form_himix(n, m, d).unwrap());
        }
    }
}

#[test]
fn equal_lengths_roughly_halve() {
    for e in registry().grid() {
        let cfg_v = e.to_config(Variant::Vanilla);
        let v = flops_full_accounting(&e.name, &cfg_v, 728, 728, Variant::Vanilla).unwrap();
        let h = flops_full_accounting(&e.name, &cfg_v, 728, 728, Variant::HimixDedicated).unwrap();
        let r = h.total as f64 / v.total as f64;
        assert!((0.45..=0.55).contains(&r), "{}: {r}", e.name);
    }
}

fn score_cost(cfg: &ModelConfig, n: u64, m: u64, v: Variant) -> f64 {
    let opts = CostOptions {
        idealized_ffn: true,
        ..CostOptions::closed_form()
    };
    let r = flops_with_options("x", cfg, n, m, v, &opts).unwrap();
    r.attn_flops as f64
}

#[test]
fn scaling_exponents() {
    let cfg = registry()
        .get("llama-3.2-1b")
        .unwrap()
        .to_config(Variant::Vanilla);
    let m = 64u64;
    let ns: Vec<u64> = (0..7).map(|k| 728u64 << k).collect();

    let xs: Vec<f64> = ns.iter().map(|&n| (n + m) as f64).collect();
    let ys: Vec<f64> = ns
        .iter()
        .map(|&n| score_cost(&cfg, n, m, Variant::Vanilla))
        .collect();
    let vanilla = scaling_exponent(&xs, &ys);
    assert!((vanilla - 2.0).abs() <= 0.05, "{vanilla}");

    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = ns
        .iter()
        .map(|&n| score_cost(&cfg, n, m, Variant::HimixDedicated))
        .collect();
    let mixture = scaling_exponent(&xs, &ys);
    assert!((mixture - 1.0).abs() <= 0.05, "{mixture}");

    let ffn: Vec<u64> = ns
        .iter()
        .map(|&n| report("llama-3.2-1b", n, m, Variant::HimixDedicated).ffn_flops)
        .collect();
    assert!(ffn.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn default_grid_has_forty_rows() {
    let reg = registry();
    let mut reports = Vec::new();
    for e in reg.grid() {
        for (n, m) in GRID_RATIOS {
            for v in [Variant::Vanilla, Variant::HimixDedicated] {
                reports.push(flops_full_accounting(&e.name, &e.to_config(v), n, m, v).unwrap());
            }
        }
    }
    let csv = emit_report(&reports, ReportFormat::Csv).unwrap();
    assert_eq!(csv.lines().count(), 41);
    let back = parse_report(&csv, ReportFormat::Csv).unwrap();
    for (a, b) in back.iter().zip(&reports) {
        assert_eq!(
            (a.total, a.attn_flops, a.params),
            (b.total, b.attn_flops, b.params)
        );
    }
    let json = emit_report(&reports, ReportFormat::Json).unwrap();
    assert_eq!(parse_report(&json, ReportFormat::Json).unwrap().len(), 40);
}

#[test]
fn pointwise_pricing_only_adds() {
    let cfg = registry()
        .get("qwen2-0.5b")
        .unwrap()
        .to_config(Variant::Vanilla);
    for v in Variant::ALL {
        let base = flops_full_accounting("q", &cfg, 728, 64, v).unwrap();
        let opts = CostOptions {
            pointwise: true,
            ..CostOptions::default()
        };
        let more = flops_with_options("q", &cfg, 728, 64, v, &opts).unwrap();
        assert!(more.total > base.total);
        assert!((more.total - base.total) as f64 / (base.total as f64) < 0.05);
    }
}

#[test]
fn user_registry_file_overrides_bundled() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reg.toml");
    std::fs::write(
        &path,
        r#"
[[model]]
name = "tiny"
layers = 2
d_model = 8
d_ffn = 32
heads = 2
kv_heads = 1
vocab = 16
d_vision = 4
ffn = "plain"
"#,
    )
    .unwrap();
    let reg = NamedConfigRegistry::from_path(&path).unwrap();
    assert_eq!(reg.entries().len(), 1);
    let cfg = reg.get("TINY").unwrap().to_config(Variant::Vanilla);
    assert_eq!((cfg.kv_width(), cfg.ffn), (4, FfnKind::Plain));
    assert!(reg.get("llama-3.2-1b").is_err());
}

#[test]
fn ratio_parsing() {
    assert_eq!(parse_ratio("728:64").unwrap(), (728, 64));
    assert_eq!(parse_ratio(" 0 : 3").unwrap(), (0, 3));
    for bad in ["728", "a:b", "5:0", "1:2:3"] {
        assert!(parse_ratio(bad).is_err(), "{bad}");
    }
}

proptest! {
    #[test]
    fn total_is_sum_and_monotone(
        n in 0u64..3000,
        m in 1u64..3000,
        dn in 0u64..500,
        dm in 0u64..500,
        vi in 0usize..4,
        model in 0usize..5,
        pointwise in any::<bool>(),
    ) {
        let reg = registry();
        let e = &reg.entries()[model];
        let v = Variant::ALL[vi];
        let cfg = e.to_config(v);
        let opts = CostOptions { pointwise, ..CostOptions::default() };
        let a = flops_with_options(&e.name, &cfg, n, m, v, &opts).unwrap();
        prop_assert_eq!(a.total, a.attn_flops + a.ffn_flops + a.head_flops);
        prop_assert_eq!(a.per_layer.len(), e.layers);
        let b = flops_with_options(&e.name, &cfg, n + dn, m, v, &opts).unwrap();
        let c = flops_with_options(&e.name, &cfg, n, m + dm, v, &opts).unwrap();
        prop_assert!(b.total >= a.total && b.attn_flops >= a.attn_flops && b.ffn_flops >= a.ffn_flops);
        prop_assert!(c.total >= a.total && c.attn_flops >= a.attn_flops && c.ffn_flops >= a.ffn_flops);
    }

    #[test]
    fn closed_forms_agree_at_empty_vision(m in 1u64..5000, d in 1u64..5000) {
        prop_assert_eq!(
            flops_closed_form_himix(0, m, d).unwrap(),
            flops_closed_form_vanilla(0, m, d).unwrap()
        );
    }

    #[test]
    fn mixture_never_costs_more(n in 0u64..5000, m in 1u64..5000, model in 0usize..5) {
        let reg = registry();
        let e = &reg.entries()[model];
        let cfg = e.to_config(Variant::Vanilla);
        let v = flops_full_accounting(&e.name, &cfg, n, m, Variant::Vanilla).unwrap();
        let h = flops_full_accounting(&e.name, &cfg, n, m, Variant::HimixDedicated).unwrap();
        // the vision projections are the only extra, and they are cheaper
        // than pushing the same rows through the FFN
        prop_assert!(h.ffn_flops <= v.ffn_flops && h.head_flops <= v.head_flops);
        if n >= 1 {
            prop_assert!(h.total < v.total);
        }
    }
}
