//! `--remote` variants of synth and score, backed by the gateway.

use anyhow::{Context, Result};
use futures::future::join_all;

use inco_core::io::{load_jsonl, save_jsonl};
use inco_core::policy::mix_seed;
use inco_core::{Instruction, Prompt, Response, SampleSet, SamplingConfig, Segment, Source, Strategy};
use inco_gateway::Gateway;
use inco_harness::Arm;

use crate::commands::arm_of;
use crate::config::Config;
use crate::{InputError, IoArgs, SynthArgs};

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Runtime::new()?)
}

fn gateway(cfg: &Config, role: &str) -> Result<Gateway> {
    Ok(Gateway::new(cfg.endpoint(role)?.clone())?)
}

fn text_prompt(ins: &Instruction) -> Result<&str> {
    match &ins.prompt {
        Prompt::Text(t) => Ok(t),
        Prompt::Tokens(_) => Err(InputError(format!("instruction {} has a token prompt; remote runs need text", ins.id)).into()),
    }
}

fn as_off_policy(mut r: Response) -> Response {
    let end = r.segments.last().map_or(0, |s| s.end);
    r.strategy = Strategy::OffPolicy;
    r.segments = vec![Segment::new(Source::External, 0, end)];
    r
}

pub fn synth(cfg: &Config, a: &SynthArgs) -> Result<()> {
    let spec = &cfg.experiment;
    let path = a
        .prompts
        .as_ref()
        .ok_or_else(|| InputError("--remote needs --prompts with an instructions JSONL".into()))?;
    let instructions: Vec<Instruction> = load_jsonl(path).with_context(|| format!("reading {}", path.display()))?;
    for ins in &instructions {
        text_prompt(ins)?;
    }
    let arm = arm_of(a, spec.prefix_len);
    let policy_t = a.temperature.unwrap_or(match arm {
        Arm::Continuation { .. } => spec.continuation_temperature,
        _ => spec.on_policy_temperature,
    });
    let n = a.num_samples.unwrap_or(spec.num_samples);
    let max = spec.scenario.max_tokens;
    let base = a.seed.unwrap_or(spec.seed);
    let seed = |i: usize, j: usize| mix_seed(mix_seed(base, i as u64), j as u64);

    let policy = match arm {
        Arm::OffPolicy => None,
        Arm::Rewriting => return Err(InputError("rewriting is not available for remote models".into()).into()),
        _ => Some(gateway(cfg, "policy")?),
    };
    let external = match arm {
        Arm::OnPolicy | Arm::Continuation { prefix_len: 0 } => None,
        _ => Some(gateway(cfg, "external")?),
    };

    let sample = |i: usize, j: usize, prompt: &str| {
        let prompt = prompt.to_string();
        let (policy, external) = (policy.as_ref(), external.as_ref());
        async move {
            match (arm, policy, external) {
                (Arm::OffPolicy, _, Some(ext)) => {
                    let cfg = SamplingConfig::new(spec.external_temperature, max, seed(i, j));
                    ext.complete(&prompt, None, &cfg).await.map(as_off_policy)
                }
                (Arm::Continuation { prefix_len }, Some(pol), Some(ext)) if prefix_len > 0 => {
                    let ext_cfg = SamplingConfig::new(spec.external_temperature, prefix_len, seed(i, j));
                    let prefix = ext.complete(&prompt, None, &ext_cfg).await?.text.unwrap_or_default();
                    let cfg = SamplingConfig::new(policy_t, max, mix_seed(seed(i, j), 1));
                    pol.complete(&prompt, Some(&prefix), &cfg).await
                }
                (_, Some(pol), _) => pol.complete(&prompt, None, &SamplingConfig::new(policy_t, max, seed(i, j))).await,
                _ => unreachable!("gateways are built for every arm"),
            }
        }
    };

    let rt = runtime()?;
    let sets = rt.block_on(async {
        let per_instruction = instructions.iter().enumerate().map(|(i, ins)| {
            let prompt = text_prompt(ins).unwrap_or_default().to_string();
            let sample = &sample;
            async move {
                let responses = join_all((0..n).map(|j| sample(i, j, &prompt))).await;
                let responses = responses
                    .into_iter()
                    .collect::<inco_gateway::Result<Vec<_>>>()
                    .with_context(|| format!("instruction {}", ins.id))?;
                Ok::<_, anyhow::Error>(SampleSet::new(ins, responses))
            }
        });
        join_all(per_instruction).await.into_iter().collect::<Result<Vec<_>>>()
    })?;
    save_jsonl(&a.out, &sets).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

pub fn score(cfg: &Config, a: &IoArgs) -> Result<()> {
    let gw = gateway(cfg, "reward")?;
    let mut sets: Vec<SampleSet> = load_jsonl(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let rt = runtime()?;
    for set in &mut sets {
        let items = set
            .responses
            .iter()
            .map(|r| match &r.text {
                Some(t) => Ok((set.prompt.display(), t.clone())),
                None => Err(InputError(format!("set {} has token responses; remote scoring needs text", set.instruction_id))),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let scores = rt.block_on(gw.score_batch(&items));
        let values = scores
            .into_iter()
            .map(|s| s.map(|s| s.value))
            .collect::<inco_gateway::Result<Vec<_>>>()
            .with_context(|| format!("scoring set {}", set.instruction_id))?;
        set.rewards = Some(values);
    }
    save_jsonl(&a.out, &sets).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}
