//! Shared domain model: vocabularies, instructions, provenance-tagged
//! responses, sample sets and preference pairs.
//!
//! Every type here is plain data and immutable once built. JSON encodings
//! use declaration order for fields, so encoding the same value twice
//! produces identical bytes.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub size: usize,
    pub bos_id: TokenId,
    pub eos_id: TokenId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbols: Option<Vec<String>>,
}

impl Vocabulary {
    pub fn new(size: usize, bos_id: TokenId, eos_id: TokenId) -> Result<Self> {
        let vocab = Self {
            size,
            bos_id,
            eos_id,
            symbols: None,
        };
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn with_symbols(mut self, symbols: Vec<String>) -> Result<Self> {
        if symbols.len() != self.size {
            return invalid(format!(
                "symbol table has {} entries, vocabulary has {}",
                symbols.len(),
                self.size
            ));
        }
        self.symbols = Some(symbols);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return invalid("vocabulary needs at least two tokens");
        }
        if self.bos_id == self.eos_id {
            return invalid("bos and eos must differ");
        }
        self.check(self.bos_id)?;
        self.check(self.eos_id)
    }

    #[inline]
    pub fn check(&self, token: TokenId) -> Result<()> {
        if (token as usize) < self.size {
            Ok(())
        } else {
            Err(Error::InvalidToken {
                token,
                size: self.size,
            })
        }
    }

    pub fn check_all(&self, tokens: &[TokenId]) -> Result<()> {
        tokens.iter().try_for_each(|&t| self.check(t))
    }

    /// Space-separated rendering using the symbol table when present.
    pub fn render(&self, tokens: &[TokenId]) -> String {
        match &self.symbols {
            Some(symbols) => tokens
                .iter()
                .map(|&t| symbols.get(t as usize).map_or("?", String::as_str))
                .collect::<Vec<_>>()
                .join(" "),
            None => render_ids(tokens),
        }
    }
}

pub(crate) fn render_ids(tokens: &[TokenId]) -> String {
    tokens
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Prompt body: token ids for the built-in stack, raw text for remote models.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prompt {
    Tokens(Vec<TokenId>),
    Text(String),
}

impl Prompt {
    pub fn tokens(&self) -> Option<&[TokenId]> {
        match self {
            Prompt::Tokens(t) => Some(t),
            Prompt::Text(_) => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Prompt::Tokens(t) => t.is_empty(),
            Prompt::Text(s) => s.is_empty(),
        }
    }

    pub fn display(&self) -> String {
        match self {
            Prompt::Tokens(t) => render_ids(t),
            Prompt::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub id: String,
    pub prompt: Prompt,
}

impl Instruction {
    pub fn new(id: impl Into<String>, prompt: Prompt) -> Result<Self> {
        let instr = Self {
            id: id.into(),
            prompt,
        };
        if instr.prompt.is_empty() {
            return invalid(format!("instruction {} has an empty prompt", instr.id));
        }
        Ok(instr)
    }

    /// Prompt tokens, or an error for text-only instructions.
    pub fn prompt_tokens(&self) -> Result<&[TokenId]> {
        self.prompt
            .tokens()
            .ok_or_else(|| Error::InvalidInput(format!("instruction {} has a text prompt", self.id)))
    }
}

/// Checks that ids are unique and prompts non-empty.
pub fn validate_instructions(instructions: &[Instruction]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for instr in instructions {
        if instr.prompt.is_empty() {
            return invalid(format!("instruction {} has an empty prompt", instr.id));
        }
        if !seen.insert(instr.id.as_str()) {
            return invalid(format!("duplicate instruction id {}", instr.id));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Policy,
    External,
    Template,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub source: Source,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(source: Source, start: usize, end: usize) -> Self {
        Self { source, start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    OnPolicy,
    OffPolicy,
    Continuation,
    Rewriting,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::OnPolicy => "ON_POLICY",
            Strategy::OffPolicy => "OFF_POLICY",
            Strategy::Continuation => "CONTINUATION",
            Strategy::Rewriting => "REWRITING",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A generated response with per-segment provenance.
///
/// Built-in responses carry token ids and segment spans index tokens.
/// Remote responses carry `text` (with `tokens` empty) and segment spans
/// index characters of that text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub tokens: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_token_count: Option<usize>,
    pub segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_token_logprob: Option<Vec<f64>>,
    pub strategy: Strategy,
    pub sampling_config_id: String,
    #[serde(default)]
    pub truncated: bool,
}

impl Response {
    /// Single-segment token response.
    pub fn single(
        source: Source,
        tokens: Vec<TokenId>,
        per_token_logprob: Option<Vec<f64>>,
        strategy: Strategy,
        sampling_config_id: impl Into<String>,
        truncated: bool,
    ) -> Self {
        let len = tokens.len();
        Self {
            tokens,
            text: None,
            remote_token_count: None,
            segments: vec![Segment::new(source, 0, len)],
            per_token_logprob,
            strategy,
            sampling_config_id: sampling_config_id.into(),
            truncated,
        }
    }

    pub fn is_text(&self) -> bool {
        self.text.is_some()
    }

    /// Length in the unit segment spans are measured in.
    pub fn span_len(&self) -> usize {
        match &self.text {
            Some(text) => text.chars().count(),
            None => self.tokens.len(),
        }
    }

    /// Number of tokens. For text responses this is the remote model's own
    /// count of generated tokens, which excludes an injected prefix.
    pub fn token_len(&self) -> usize {
        match &self.text {
            Some(_) => self.remote_token_count.unwrap_or(0),
            None => self.tokens.len(),
        }
    }

    pub fn display(&self) -> String {
        match &self.text {
            Some(text) => text.clone(),
            None => render_ids(&self.tokens),
        }
    }

    /// Length of the leading EXTERNAL segment, zero when absent.
    pub fn external_prefix_len(&self) -> usize {
        match self.segments.first() {
            Some(seg) if seg.source == Source::External => seg.len(),
            _ => 0,
        }
    }

    /// Copy of this response cut to its first `k` tokens.
    pub fn truncated_to(&self, k: usize) -> Response {
        if self.is_text() || k >= self.tokens.len() {
            return self.clone();
        }
        let segments = self
            .segments
            .iter()
            .filter(|s| s.start < k)
            .map(|s| Segment::new(s.source, s.start, s.end.min(k)))
            .collect();
        Response {
            tokens: self.tokens[..k].to_vec(),
            text: None,
            remote_token_count: None,
            segments,
            per_token_logprob: self.per_token_logprob.as_ref().map(|lp| lp[..k].to_vec()),
            strategy: self.strategy,
            sampling_config_id: self.sampling_config_id.clone(),
            truncated: true,
        }
    }
}

/// Content hash of (instruction id, body, strategy, sampling config id).
pub fn response_id(instruction_id: &str, response: &Response) -> String {
    let mut hasher = Sha256::new();
    hasher.update(instruction_id.as_bytes());
    hasher.update([0u8]);
    match &response.text {
        Some(text) => {
            hasher.update(b"text:");
            hasher.update(text.as_bytes());
        }
        None => {
            hasher.update(b"tokens:");
            for t in &response.tokens {
                hasher.update(t.to_le_bytes());
            }
        }
    }
    hasher.update([0u8]);
    hasher.update(response.strategy.as_str().as_bytes());
    hasher.update([0u8]);
    hasher.update(response.sampling_config_id.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Empty,
    TokenOutOfRange { index: usize, token: TokenId },
    EmptySegment { index: usize },
    Gap { start: usize, end: usize },
    Overlap { start: usize, end: usize },
    PastEnd { end: usize, len: usize },
    MissingEos,
    LogprobLength { expected: usize, actual: usize },
    PositiveLogprob { index: usize },
    Layout(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "empty response"),
            Violation::TokenOutOfRange { index, token } => {
                write!(f, "token {token} at {index} out of range")
            }
            Violation::EmptySegment { index } => write!(f, "segment {index} is empty"),
            Violation::Gap { start, end } => write!(f, "gap at {start}..{end}"),
            Violation::Overlap { start, end } => write!(f, "overlap at {start}..{end}"),
            Violation::PastEnd { end, len } => {
                write!(f, "segment ends at {end} past length {len}")
            }
            Violation::MissingEos => write!(f, "no eos and not flagged truncated"),
            Violation::LogprobLength { expected, actual } => {
                write!(f, "{actual} logprobs for {expected} tokens")
            }
            Violation::PositiveLogprob { index } => write!(f, "logprob at {index} is positive"),
            Violation::Layout(msg) => write!(f, "layout: {msg}"),
        }
    }
}

/// Lists every invariant the response breaks. An empty list means valid.
pub fn validate_response(response: &Response, vocab: &Vocabulary) -> Vec<Violation> {
    let mut out = Vec::new();
    let len = response.span_len();
    if len == 0 {
        out.push(Violation::Empty);
    }

    if !response.is_text() {
        for (index, &token) in response.tokens.iter().enumerate() {
            if token as usize >= vocab.size {
                out.push(Violation::TokenOutOfRange { index, token });
            }
        }
        if len > 0 && response.tokens.last() != Some(&vocab.eos_id) && !response.truncated {
            out.push(Violation::MissingEos);
        }
    }

    let mut pos = 0;
    for (index, seg) in response.segments.iter().enumerate() {
        if seg.start >= seg.end {
            out.push(Violation::EmptySegment { index });
            continue;
        }
        if seg.start > pos {
            out.push(Violation::Gap {
                start: pos,
                end: seg.start,
            });
        } else if seg.start < pos {
            out.push(Violation::Overlap {
                start: seg.start,
                end: pos.min(seg.end),
            });
        }
        pos = pos.max(seg.end);
    }
    if pos < len {
        out.push(Violation::Gap { start: pos, end: len });
    } else if pos > len {
        out.push(Violation::PastEnd { end: pos, len });
    }

    if let Some(lp) = &response.per_token_logprob {
        // remote logprobs cover only the generated tokens, counted remotely
        let expected = match &response.text {
            Some(_) => response.remote_token_count.unwrap_or(lp.len()),
            None => response.tokens.len(),
        };
        if lp.len() != expected {
            out.push(Violation::LogprobLength {
                expected,
                actual: lp.len(),
            });
        }
        for (index, &v) in lp.iter().enumerate() {
            if v > 0.0 {
                out.push(Violation::PositiveLogprob { index });
            }
        }
    }

    let sources: Vec<Source> = response.segments.iter().map(|s| s.source).collect();
    let layout_ok = match response.strategy {
        Strategy::OnPolicy | Strategy::Rewriting => sources == [Source::Policy],
        Strategy::OffPolicy => sources == [Source::External],
        Strategy::Continuation => {
            sources == [Source::External, Source::Policy]
                || (response.truncated && sources == [Source::External])
        }
    };
    if !layout_ok {
        out.push(Violation::Layout(format!(
            "{} response with segments {:?}",
            response.strategy, sources
        )));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: u64,
    #[serde(default)]
    pub prefix_len: usize,
}

impl SamplingConfig {
    pub fn new(temperature: f64, max_tokens: usize, seed: u64) -> Self {
        Self {
            temperature,
            max_tokens,
            seed,
            prefix_len: 0,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_prefix_len(&self, prefix_len: usize) -> Self {
        Self {
            prefix_len,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return invalid(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be positive");
        }
        if self.prefix_len > self.max_tokens {
            return invalid(format!(
                "prefix_len {} exceeds max_tokens {}",
                self.prefix_len, self.max_tokens
            ));
        }
        Ok(())
    }

    /// Stable identifier recorded on every response produced under this config.
    pub fn id(&self) -> String {
        format!(
            "t{}-m{}-s{}-p{}",
            self.temperature, self.max_tokens, self.seed, self.prefix_len
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub instruction_id: String,
    pub prompt: Prompt,
    pub responses: Vec<Response>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Reference response kept for audit by the rewriting strategy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Response>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl SampleSet {
    pub fn new(instruction: &Instruction, responses: Vec<Response>) -> Self {
        Self {
            instruction_id: instruction.id.clone(),
            prompt: instruction.prompt.clone(),
            responses,
            rewards: None,
            weights: None,
            reference: None,
            diagnostics: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.responses.len();
        if n == 0 {
            return invalid(format!("sample set {} is empty", self.instruction_id));
        }
        for (name, values) in [("rewards", &self.rewards), ("weights", &self.weights)] {
            if let Some(v) = values {
                if v.len() != n {
                    return invalid(format!(
                        "sample set {}: {} {name} for {n} responses",
                        self.instruction_id,
                        v.len()
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn rewards(&self) -> Result<&[f64]> {
        self.validate()?;
        self.rewards
            .as_deref()
            .ok_or_else(|| Error::InvalidInput(format!("sample set {} is unscored", self.instruction_id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PairRecord", try_from = "PairRecord")]
pub struct PreferencePair {
    pub instruction_id: String,
    pub prompt: Prompt,
    pub chosen: Response,
    pub rejected: Response,
    pub chosen_reward: f64,
    pub rejected_reward: f64,
    pub chosen_weight: Option<f64>,
    pub rejected_weight: Option<f64>,
}

impl PreferencePair {
    pub fn margin(&self) -> f64 {
        self.chosen_reward - self.rejected_reward
    }

    pub fn is_weighted(&self) -> bool {
        self.chosen_weight.is_some() && self.rejected_weight.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.chosen_reward < self.rejected_reward {
            return invalid(format!(
                "pair {}: chosen reward {} below rejected reward {}",
                self.instruction_id, self.chosen_reward, self.rejected_reward
            ));
        }
        if self.chosen == self.rejected {
            return invalid(format!("pair {}: chosen equals rejected", self.instruction_id));
        }
        Ok(())
    }
}

/// Wire layout of a pair line. The flat `prompt`/`chosen`/`rejected`
/// strings follow the usual preference-dataset convention; the full
/// provenance objects ride along for lossless decoding.
#[derive(Serialize, Deserialize)]
struct PairRecord {
    prompt: String,
    chosen: String,
    rejected: String,
    chosen_reward: f64,
    rejected_reward: f64,
    chosen_weight: Option<f64>,
    rejected_weight: Option<f64>,
    instruction_id: String,
    prompt_body: Prompt,
    chosen_response: Response,
    rejected_response: Response,
}

impl From<PreferencePair> for PairRecord {
    fn from(p: PreferencePair) -> Self {
        Self {
            prompt: p.prompt.display(),
            chosen: p.chosen.display(),
            rejected: p.rejected.display(),
            chosen_reward: p.chosen_reward,
            rejected_reward: p.rejected_reward,
            chosen_weight: p.chosen_weight,
            rejected_weight: p.rejected_weight,
            instruction_id: p.instruction_id,
            prompt_body: p.prompt,
            chosen_response: p.chosen,
            rejected_response: p.rejected,
        }
    }
}

impl TryFrom<PairRecord> for PreferencePair {
    type Error = String;

    fn try_from(r: PairRecord) -> std::result::Result<Self, String> {
        let pair = PreferencePair {
            instruction_id: r.instruction_id,
            prompt: r.prompt_body,
            chosen: r.chosen_response,
            rejected: r.rejected_response,
            chosen_reward: r.chosen_reward,
            rejected_reward: r.rejected_reward,
            chosen_weight: r.chosen_weight,
            rejected_weight: r.rejected_weight,
        };
        pair.validate().map_err(|e| e.to_string())?;
        Ok(pair)
    }
}
