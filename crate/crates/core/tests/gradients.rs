mod common;

use adprompt::backend::toy::{ToyConfig, ToyMlm};
use adprompt::backend::{AdamW, AdamWConfig, DecayGroup, MaskedLm, Tokenizer};
use adprompt::synthetic;
use std::sync::Arc;

#[test]
fn prompt_loss_matches_central_differences() {
    assert_eq!(common::prompt_loss_gradient_failures(100), 0);
}

#[test]
fn toy_parameter_gradient_matches_central_differences() {
    assert_eq!(common::toy_gradient_failures(100), 0);
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let tok = Arc::new(synthetic::tokenizer());
    let mut model = ToyMlm::new("bert", tok.clone(), ToyConfig::default(), 3).unwrap();
    let before = model.parameters().to_vec();
    let ids = tok.tokenize("the boy is on the stool");
    let grads = vec![vec![0.5; tok.vocab_size()]];
    model.accumulate_gradient(&ids, &[1], &grads).unwrap();
    let mut opt = AdamW::new(AdamWConfig {
        lr: 0.0,
        ..AdamWConfig::default()
    });
    model.step(&mut opt).unwrap();
    assert_eq!(model.parameters(), &before[..]);
}

#[test]
fn same_seed_same_trajectory() {
    let tok = Arc::new(synthetic::tokenizer());
    let ids = tok.tokenize("the girl is washing dishes");
    let trajectory = || {
        let mut model = ToyMlm::new("bert", tok.clone(), ToyConfig::default(), 9).unwrap();
        let mut opt = AdamW::new(AdamWConfig {
            lr: 1e-2,
            decay_group: DecayGroup::All,
            ..AdamWConfig::default()
        });
        for step in 0..5 {
            let logits = model.logits(&ids, &[step % ids.len()]).unwrap();
            model.accumulate_gradient(&ids, &[step % ids.len()], &logits).unwrap();
            model.step(&mut opt).unwrap();
        }
        model.parameters().to_vec()
    };
    assert_eq!(trajectory(), trajectory());
}
