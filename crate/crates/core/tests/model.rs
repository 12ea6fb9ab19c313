use std::collections::BTreeMap;

use dre::corpus::BasicTokenizer;
use dre::encoder::EncoderConfig;
use dre::model::{
    build_examples, build_vocab, example_loss, fit, from_bytes, load_checkpoint_expecting, predict, save_checkpoint,
    to_bytes, ForwardOptions, KnowledgeIds, KnowledgeSource, Model, ModelOptions, TrainConfig,
};
use dre::synth::{engagement_dialogue, generate, SynthConfig};
use dre::Error;

fn small(seed: u64) -> EncoderConfig {
    EncoderConfig {
        d_h: 16,
        layers: 1,
        seed,
        ..Default::default()
    }
}

fn trained(epochs: usize) -> Model {
    let corpus = generate(5, 12, &SynthConfig::default()).unwrap();
    let config = TrainConfig {
        learning_rate: 1e-3,
        epochs,
        ..Default::default()
    };
    fit(&corpus.instances, &corpus.relations, Some(&corpus.lexicon), small(1), ModelOptions::default(), &config, &BasicTokenizer, |_| {})
        .unwrap()
        .model
}

#[test]
fn repeated_instance_loss_decreases() {
    let corpus = generate(9, 1, &SynthConfig::default()).unwrap();
    let tok = BasicTokenizer;
    let vocab = build_vocab(&corpus.instances, Some(&corpus.lexicon), &tok, 512).unwrap();
    let mut model = Model::new(small(3), vocab, corpus.relations.clone(), ModelOptions::default()).unwrap();
    let (examples, _) = build_examples(&corpus.instances, &corpus.relations, &model.vocab, &tok, 512, true).unwrap();
    let ids = KnowledgeIds::new(&corpus.lexicon, &corpus.relations, &model.vocab, &tok).unwrap();
    let config = TrainConfig {
        learning_rate: 1e-3,
        epochs: 50,
        batch_size: 1,
        ..Default::default()
    };
    let opts = ForwardOptions {
        config: &config,
        knowledge: Some(KnowledgeSource::Encode(&ids)),
    };
    let before = example_loss(&model, &examples[0], &opts, None).unwrap().total;
    let log = dre::model::train(&mut model, &examples, Some(&ids), &config, |_| {}).unwrap();
    let after = example_loss(&model, &examples[0], &opts, None).unwrap().total;
    assert_eq!(log.steps, 50);
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn identical_configs_give_identical_logs() {
    let corpus = generate(5, 12, &SynthConfig::default()).unwrap();
    let config = TrainConfig {
        learning_rate: 1e-3,
        epochs: 3,
        seed: 4,
        ..Default::default()
    };
    let run = || {
        fit(&corpus.instances, &corpus.relations, Some(&corpus.lexicon), small(2), ModelOptions::default(), &config, &BasicTokenizer, |_| {})
            .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log.epochs, b.log.epochs);
    assert_eq!(a.model.params, b.model.params);
}

#[test]
fn knowledge_weight_requires_lexicon() {
    let corpus = generate(5, 4, &SynthConfig::default()).unwrap();
    let config = TrainConfig {
        epochs: 1,
        ..Default::default()
    };
    let err = fit(&corpus.instances, &corpus.relations, None, small(0), ModelOptions::default(), &config, &BasicTokenizer, |_| {})
        .unwrap_err();
    assert!(err.to_string().contains("lexicon"), "{err}");
    let no_k = TrainConfig { lambda_k: 0.0, ..config };
    assert!(fit(&corpus.instances, &corpus.relations, None, small(0), ModelOptions::default(), &no_k, &BasicTokenizer, |_| {}).is_ok());
}

#[test]
fn cached_knowledge_trains() {
    let corpus = generate(5, 8, &SynthConfig::default()).unwrap();
    let config = TrainConfig {
        learning_rate: 1e-3,
        epochs: 2,
        cache_knowledge: true,
        ..Default::default()
    };
    let fitted = fit(&corpus.instances, &corpus.relations, Some(&corpus.lexicon), small(0), ModelOptions::default(), &config, &BasicTokenizer, |_| {})
        .unwrap();
    assert!(fitted.log.epochs.iter().all(|e| e.knowledge_loss > 0.0));
}

#[test]
fn prediction_carries_relation_and_trigger_text() {
    let model = trained(2);
    let inst = engagement_dialogue();
    let p = predict(&model, &inst, &BasicTokenizer).unwrap();
    assert!(model.relations.index_of(&p.relation).is_ok());
    assert_eq!(p.distribution.len(), 4);
    assert!((p.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(!p.trigger_text.is_empty());
    assert!(p.trigger.end - p.trigger.start < 10);
}

#[test]
fn checkpoint_rejects_corruption() {
    let model = trained(1);
    let meta = BTreeMap::new();
    let bytes = to_bytes(&model, &meta);
    assert_eq!(from_bytes(&bytes).unwrap().0.params, model.params);

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(from_bytes(&bad_magic), Err(Error::Checkpoint(_))));
    assert!(from_bytes(&bytes[..bytes.len() - 8]).is_err());
    assert!(from_bytes(&bytes[..12]).is_err());

    let mut nan = bytes.clone();
    let n = nan.len();
    nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(from_bytes(&nan).is_err());

    // a manifest whose recorded shape disagrees names the tensor
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let json = std::str::from_utf8(&bytes[16..16 + len]).unwrap();
    let tampered = json.replacen(r#""name":"classifier.bias","shape":[4]"#, r#""name":"classifier.bias","shape":[5]"#, 1);
    assert_ne!(tampered, json);
    let mut out = b"DRECKPT\0".to_vec();
    out.extend_from_slice(&(tampered.len() as u64).to_le_bytes());
    out.extend_from_slice(tampered.as_bytes());
    out.extend_from_slice(&bytes[16 + len..]);
    match from_bytes(&out) {
        Err(Error::Shape { tensor, .. }) => assert_eq!(tensor, "classifier.bias"),
        other => panic!("expected a shape error, got {other:?}"),
    }
}

#[test]
fn checkpoint_with_wrong_width_names_tensor() {
    let model = trained(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, &BTreeMap::new(), &path).unwrap();
    assert!(load_checkpoint_expecting(&path, &small(1)).is_ok());
    let wider = EncoderConfig { d_h: 32, ..small(1) };
    match load_checkpoint_expecting(&path, &wider) {
        Err(Error::Shape { tensor, expected, found }) => {
            assert_eq!(tensor, "encoder.token_embedding");
            assert_eq!((expected[1], found[1]), (32, 16));
        }
        other => panic!("expected a shape error, got {other:?}"),
    }
}
