use mixattn::decoder::{ForwardTrace, LayerRecord, Model, ModelConfig, Variant};
use mixattn::numkit::SeqMatrix;
use mixattn::probe::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(variant: Variant, seed: u64) -> (Model, SeqMatrix, ForwardTrace) {
    let mut cfg = ModelConfig::toy(variant, 3, 8, 8, 16);
    cfg.seed = seed;
    let model = Model::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_v = SeqMatrix::random_normal(5, 8, 1.0, &mut rng);
    let x_l = SeqMatrix::random_normal(4, 8, 1.0, &mut rng);
    let trace = model.forward(&x_v, &x_l).unwrap();
    (model, x_v, trace)
}

#[test]
fn residual_only_layers_keep_similarity_at_one() {
    let cfg = ModelConfig::toy(Variant::Vanilla, 3, 8, 6, 16);
    let mut model = Model::init(&cfg).unwrap();
    for l in &mut model.params.layers {
        l.w_o = SeqMatrix::zeros(8, 8);
        l.w_ffn2 = SeqMatrix::zeros(32, 8);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x_v = SeqMatrix::random_normal(5, 6, 1.0, &mut rng);
    let x_l = SeqMatrix::random_normal(4, 8, 1.0, &mut rng);
    let trace = model.forward(&x_v, &x_l).unwrap();
    let p = cosine_profile_from_inputs(&trace, VisionReference::PostConnector, None).unwrap();
    for t in p.tracks() {
        assert_eq!(t.mean_cos, vec![1.0; 3], "{}", t.modality);
    }
}

#[test]
fn negated_reference_gives_minus_one() {
    let (_, _, trace) = run(Variant::Vanilla, 1);
    let lang = trace.language_output(0).scale(-1.0);
    let vis = trace.vision_output(0).unwrap().scale(-1.0);
    let p = cosine_profile(&trace, &lang, Some(&vis)).unwrap();
    assert!((p.language.mean_cos[0] + 1.0).abs() < 1e-12);
    assert!((p.vision.as_ref().unwrap().mean_cos[0] + 1.0).abs() < 1e-12);
}

#[test]
fn hand_computed_two_layer_profile() {
    let m = |rows: &[[f64; 2]]| SeqMatrix::from_rows(rows).unwrap();
    let input = m(&[[1.0, 0.0], [0.0, 2.0], [3.0, 4.0]]);
    let out1 = m(&[[1.0, 1.0], [0.0, -1.0], [4.0, 3.0]]);
    let out2 = m(&[[2.0, 0.0], [1.0, 0.0], [0.0, 0.0]]);
    let trace = ForwardTrace {
        variant: Variant::HimixDedicated,
        n_vision: 0,
        n_language: 3,
        vision_input: None,
        language_input: input.clone(),
        layers: vec![
            LayerRecord {
                input: input.clone(),
                output: out1,
            },
            LayerRecord {
                input: input.clone(),
                output: out2,
            },
        ],
        final_hidden: input.clone(),
    };
    let p = cosine_profile(&trace, &input, None).unwrap();
    let l1 = (1.0 / 2f64.sqrt() + -1.0 + 24.0 / 25.0) / 3.0;
    let l2 = (1.0 + 0.0) / 2.0; // third token has a zero row
    assert!((p.language.mean_cos[0] - l1).abs() < 1e-12);
    assert!((p.language.mean_cos[1] - l2).abs() < 1e-12);
    assert_eq!(p.language.excluded_tokens, vec![0, 1]);
    assert!(p.vision.is_none());
}

#[test]
fn mixture_traces_report_language_only() {
    let (_, x_v, trace) = run(Variant::HimixDedicated, 2);
    let p = cosine_profile_from_inputs(&trace, VisionReference::PreConnector, Some(&x_v)).unwrap();
    assert!(p.vision.is_none());
    assert_eq!(p.language.mean_cos.len(), 3);
}

#[test]
fn pre_and_post_connector_references() {
    let (_, x_v, trace) = run(Variant::Vanilla, 3);
    let pre =
        cosine_profile_from_inputs(&trace, VisionReference::PreConnector, Some(&x_v)).unwrap();
    let post = cosine_profile_from_inputs(&trace, VisionReference::PostConnector, None).unwrap();
    assert_eq!(pre.language, post.language);
    assert_ne!(pre.vision, post.vision);
    assert!(cosine_profile_from_inputs(&trace, VisionReference::PreConnector, None).is_err());
}

#[test]
fn csv_has_one_row_per_layer_and_modality() {
    let (_, _, trace) = run(Variant::Vanilla, 7);
    let p = cosine_profile_from_inputs(&trace, VisionReference::PostConnector, None).unwrap();
    let csv = p.to_csv().unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "layer,modality,mean_cos,excluded_tokens");
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert_eq!(lines.iter().filter(|l| l.contains(",vision,")).count(), 3);
    assert!(p
        .tracks()
        .flat_map(|t| &t.mean_cos)
        .all(|c| (-1.0..=1.0).contains(c)));
    assert_eq!(p.aggregation, AGGREGATION);
}

#[test]
fn layer_zero_input_against_itself() {
    for variant in Variant::ALL {
        let (_, _, trace) = run(variant, 4);
        let input = trace.layers[0].input.clone();
        let (c, skipped) = mean_token_cosine(&input, &input).unwrap();
        assert_eq!((c, skipped), (1.0, 0));
    }
}

#[test]
fn mismatched_reference_is_an_error() {
    let (_, _, trace) = run(Variant::HimixDedicated, 5);
    assert!(cosine_profile(&trace, &SeqMatrix::zeros(3, 8), None).is_err());
}

proptest! {
    #[test]
    fn profile_ignores_positive_rescaling(seed in 0u64..1000, scale in 1e-3f64..1e3) {
        let (_, _, trace) = run(Variant::Vanilla, seed);
        let base = cosine_profile_from_inputs(&trace, VisionReference::PostConnector, None).unwrap();
        let mut scaled = trace.clone();
        for l in &mut scaled.layers {
            l.output = l.output.scale(scale);
        }
        let again = cosine_profile_from_inputs(&scaled, VisionReference::PostConnector, None).unwrap();
        for (a, b) in base.tracks().zip(again.tracks()) {
            for (x, y) in a.mean_cos.iter().zip(&b.mean_cos) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
