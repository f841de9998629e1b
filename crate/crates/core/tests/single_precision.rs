use pivotlogit::choice::{mnl_probabilities, nested_probabilities, NestSpec};
use pivotlogit::{ModeId, NestedLogitModelF32, UtilityVectorF32};

#[test]
fn f32_model_matches_f64_to_single_precision() {
    let modes: Vec<ModeId> = ["a", "b", "c"].into_iter().map(ModeId::from).collect();
    let nests = vec![
        NestSpec {
            name: "ab".into(),
            nc: 0.5f32,
            members: modes[..2].to_vec(),
        },
        NestSpec {
            name: "c".into(),
            nc: 1.0,
            members: modes[2..].to_vec(),
        },
    ];
    let model =
        NestedLogitModelF32::new(modes, nests, Default::default(), ModeId::from("a")).unwrap();
    let u = UtilityVectorF32::from_pairs([("a", 0.0f32), ("b", 0.0), ("c", 0.0)]);
    let p = nested_probabilities(&model, &u).unwrap();
    let top = 2f64.sqrt() / (2f64.sqrt() + 1.0);
    assert!((p[&ModeId::from("a")] as f64 - top / 2.0).abs() < 1e-6);
    assert!((p[&ModeId::from("c")] as f64 - (1.0 - top)).abs() < 1e-6);
    let m = mnl_probabilities(&u).unwrap();
    assert!((m.values().sum::<f32>() - 1.0).abs() < 1e-6);
}
