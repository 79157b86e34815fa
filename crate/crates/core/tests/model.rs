use refinedet_core::fixtures::experiment_spec;
use refinedet_core::model::synthetic_inputs;
use refinedet_core::profiler::SpanRecorder;
use refinedet_core::weights::WeightBundle;
use refinedet_core::{init_weights, Model, Tensor};

#[test]
fn weights_survive_a_file_round_trip() {
    let spec = experiment_spec(9).unwrap();
    let bundle = init_weights(&spec, 3).unwrap();
    let mut bytes = Vec::new();
    bundle.write_to(&mut bytes).unwrap();
    let back = WeightBundle::read_from(bytes.as_slice()).unwrap();
    assert_eq!(back.digest(), bundle.digest());

    let a = Model::<f32>::with_bundle(&spec, &bundle).unwrap();
    let b = Model::<f32>::with_bundle(&spec, &back).unwrap();
    let x = synthetic_inputs(a.input_shape(1), 1, 1).pop().unwrap();
    let mut spans = SpanRecorder::disabled();
    let (oa, ob) = (a.forward(&x, &mut spans).unwrap(), b.forward(&x, &mut spans).unwrap());
    assert_eq!(oa[0].class_scores, ob[0].class_scores);
    assert_eq!(oa[0].odm_deltas, ob[0].odm_deltas);
}

#[test]
fn batch_items_are_independent() {
    let spec = experiment_spec(17).unwrap();
    let model = Model::<f32>::assemble(&spec).unwrap();
    let xs = synthetic_inputs::<f32>(model.input_shape(1), 2, 4);
    let batch = Tensor::concat_batch(&xs).unwrap();
    let mut spans = SpanRecorder::disabled();
    let joint = model.forward(&batch, &mut spans).unwrap();
    for (i, x) in xs.iter().enumerate() {
        let single = model.forward(x, &mut spans).unwrap();
        assert_eq!(joint[i].class_scores, single[0].class_scores);
        assert_eq!(joint[i].objectness, single[0].objectness);
    }
}

#[test]
fn single_and_double_precision_agree() {
    let spec = experiment_spec(1).unwrap();
    let m32 = Model::<f32>::assemble(&spec).unwrap();
    let m64 = Model::<f64>::assemble(&spec).unwrap();
    let x64 = synthetic_inputs::<f64>(m64.input_shape(1), 1, 2).pop().unwrap();
    let x32 = synthetic_inputs::<f32>(m32.input_shape(1), 1, 2).pop().unwrap();
    let mut spans = SpanRecorder::disabled();
    let a = &m32.forward(&x32, &mut spans).unwrap()[0];
    let b = &m64.forward(&x64, &mut spans).unwrap()[0];
    let scale = b.class_scores.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = a
        .class_scores
        .iter()
        .zip(&b.class_scores)
        .fold(0.0f64, |m, (p, q)| m.max((*p as f64 - q).abs()));
    assert!(err <= 1e-4 * scale.max(1e-12), "max error {err} at scale {scale}");
}
