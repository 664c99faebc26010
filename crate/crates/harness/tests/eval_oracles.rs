use inco_core::reward::GoldReward;
use inco_core::{Instruction, Prompt, TabularLM, TokenId, Vocabulary};
use inco_harness::eval::{evaluate, EvalConfig, EvalMethod};

fn instructions(prompts: &[&[TokenId]]) -> Vec<Instruction> {
    prompts
        .iter()
        .enumerate()
        .map(|(i, p)| Instruction::new(format!("q{i}"), Prompt::Tokens(p.to_vec())).unwrap())
        .collect()
}

fn cfg(method: EvalMethod, temperature: f64, max_tokens: usize) -> EvalConfig {
    EvalConfig {
        temperature,
        max_tokens,
        method,
        mc_samples: 100_000,
        seed: 11,
    }
}

/// Every response of at most three tokens, listed by nested loops: a
/// response stops at eos or at the length cap.
fn all_responses(v: TokenId, eos: TokenId) -> Vec<Vec<TokenId>> {
    let mut out = Vec::new();
    for a in 0..v {
        if a == eos {
            out.push(vec![a]);
            continue;
        }
        for b in 0..v {
            if b == eos {
                out.push(vec![a, b]);
                continue;
            }
            for c in 0..v {
                out.push(vec![a, b, c]);
            }
        }
    }
    out
}

#[test]
fn policy_equal_to_gold_matches_nested_loop_oracle() {
    let vocab = Vocabulary::new(3, 0, 1).unwrap();
    let gold = TabularLM::random(1, vocab, 1.5, 5).unwrap();
    let rm = GoldReward::new(gold.clone(), 0.0, 3).unwrap();
    let prompt: &[TokenId] = &[2];
    let responses = all_responses(3, 1);
    let mut mass = 0.0;
    let mut oracle = 0.0;
    for r in &responses {
        let (lp, _) = gold.sequence_logprob(prompt, r).unwrap();
        mass += lp.exp();
        oracle += lp.exp() * lp / r.len() as f64;
    }
    assert!((mass - 1.0).abs() < 1e-12, "response probabilities sum to {mass}");
    let ins = instructions(&[prompt]);
    for method in [EvalMethod::Enumerate, EvalMethod::Exact, EvalMethod::Auto] {
        let got = evaluate(&gold, &rm, &ins, &cfg(method, 1.0, 3)).unwrap().mean;
        assert!((got - oracle).abs() < 1e-12, "{method:?}: {got} vs {oracle}");
    }
}

#[test]
fn monte_carlo_agrees_with_enumeration_within_three_standard_errors() {
    let vocab = Vocabulary::new(4, 0, 1).unwrap();
    let gold = TabularLM::random(2, vocab.clone(), 2.0, 1).unwrap();
    let policy = gold.perturb(1.0, 0.3, 2).unwrap();
    let rm = GoldReward::new(gold, 0.05, 4).unwrap();
    let ins = instructions(&[&[2, 3], &[3]]);
    for t in [0.7, 1.0] {
        let exact = evaluate(&policy, &rm, &ins, &cfg(EvalMethod::Enumerate, t, 6)).unwrap();
        let mc = evaluate(&policy, &rm, &ins, &cfg(EvalMethod::MonteCarlo, t, 6)).unwrap();
        assert_eq!(exact.std_err, 0.0);
        assert!(mc.std_err > 0.0);
        assert!(
            (mc.mean - exact.mean).abs() < 3.0 * mc.std_err,
            "T={t}: mc {} +- {} vs exact {}",
            mc.mean,
            mc.std_err,
            exact.mean
        );
    }
}

#[test]
fn exact_recursion_handles_lengths_beyond_enumeration() {
    let vocab = Vocabulary::new(6, 0, 1).unwrap();
    let gold = TabularLM::random(1, vocab, 1.0, 3).unwrap();
    let policy = gold.perturb(0.5, 0.1, 4).unwrap();
    let rm = GoldReward::new(gold, 0.1, 12).unwrap();
    let ins = instructions(&[&[3]]);
    let auto = evaluate(&policy, &rm, &ins, &cfg(EvalMethod::Auto, 1.0, 20)).unwrap();
    assert_eq!(auto.method, EvalMethod::Exact);
    let mc = evaluate(&policy, &rm, &ins, &cfg(EvalMethod::MonteCarlo, 1.0, 20)).unwrap();
    assert!((mc.mean - auto.mean).abs() < 3.0 * mc.std_err, "{} vs {}", mc.mean, auto.mean);
}
