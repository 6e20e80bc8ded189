//! Prompt assembly and the multiple-choice prompting strategies.
//!
//! - few-shot: exemplars with answers, one greedy generation;
//! - chain-of-thought (CoT): exemplars with explanations, one greedy generation;
//! - self-consistency (SC): `sc_samples` CoT generations, plurality vote;
//! - ensemble refinement (ER): `er_stage1` CoT generations, then `er_stage2`
//!   generations conditioned on all stage-1 reasonings; plurality vote over
//!   the stage-2 answers only.
//!
//! Sample `i` of a sampling stage is sent with seed `spec.seed + i`.

mod extract;
mod longform;
pub mod templates;
mod vote;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Client, Generation, GenerationRequest, SampleSlot, Stage};
use crate::dataset::{Letter, MultipleChoiceQuestion, OptionMap};
use crate::digest::sha256_u64;

pub use extract::{extract_answer, extract_answer_with_options};
pub use longform::{long_form_prompt, run_long_form, LongFormSpec};
pub use templates::{fill, ExemplarSet, Templates};
pub use vote::{plurality_vote, Ballot, Tally};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt spec has no exemplars")]
    NoExemplars,
    #[error("exemplar {0} has no answer")]
    ExemplarMissingAnswer(usize),
    #[error("exemplar {0} has no explanation, which chain-of-thought prompts require")]
    ExemplarMissingExplanation(usize),
    #[error("exemplar pool has {have} items but {need} shots are requested")]
    PoolTooSmall { have: usize, need: usize },
    #[error("invalid prompt spec: {0}")]
    InvalidSpec(String),
    #[error("no parseable answers")]
    NoParseableAnswers,
    #[error("no built-in prompts for dataset {0:?}")]
    UnknownDataset(String),
    #[error("prompt asset error: {0}")]
    Asset(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "fewshot")]
    FewShot,
    #[serde(rename = "cot")]
    CoT,
    #[serde(rename = "sc")]
    SelfConsistency,
    #[serde(rename = "er")]
    EnsembleRefinement,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Strategy::FewShot, Strategy::CoT, Strategy::SelfConsistency, Strategy::EnsembleRefinement];

    pub fn short_name(self) -> &'static str {
        match self {
            Strategy::FewShot => "fewshot",
            Strategy::CoT => "cot",
            Strategy::SelfConsistency => "sc",
            Strategy::EnsembleRefinement => "er",
        }
    }

    /// Column heading used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::FewShot => "Few-shot",
            Strategy::CoT => "CoT",
            Strategy::SelfConsistency => "SC",
            Strategy::EnsembleRefinement => "ER",
        }
    }

    fn uses_explanations(self) -> bool {
        self != Strategy::FewShot
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match norm.as_str() {
            "fewshot" => Ok(Strategy::FewShot),
            "cot" | "chainofthought" => Ok(Strategy::CoT),
            "sc" | "selfconsistency" => Ok(Strategy::SelfConsistency),
            "er" | "ensemblerefinement" => Ok(Strategy::EnsembleRefinement),
            _ => Err(format!("unknown strategy {s:?} (expected fewshot, cot, sc or er)")),
        }
    }
}

/// A worked example placed before the target question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub question: String,
    pub options: OptionMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Letter>,
}

impl Exemplar {
    /// An answer-only exemplar built from a labelled question.
    pub fn from_question(q: &MultipleChoiceQuestion) -> Self {
        Exemplar {
            context: q.context.clone(),
            question: q.stem.clone(),
            options: q.options.clone(),
            explanation: None,
            answer: Some(q.gold),
        }
    }
}

/// How exemplars and the target question are laid out.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One `Instructions:` preamble, then `Question:`/options/answer blocks.
    #[default]
    Standard,
    /// Instructions repeated per block; worded answers
    /// ("The answer to the question given the context is no.").
    PubMedQaFewShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub strategy: Strategy,
    pub instructions: String,
    pub exemplars: Vec<Exemplar>,
    #[serde(default)]
    pub layout: Layout,
    /// When set, this many exemplars are drawn uniformly at random from
    /// `exemplars` for every question.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_shots: Option<usize>,
    pub sc_samples: usize,
    pub er_stage1: usize,
    pub er_stage2: usize,
    pub stage1_temperature: f64,
    pub stage2_temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
    #[serde(skip)]
    pub templates: Templates,
}

impl PromptSpec {
    pub fn new(strategy: Strategy, instructions: impl Into<String>, exemplars: Vec<Exemplar>) -> Self {
        PromptSpec {
            strategy,
            instructions: instructions.into(),
            exemplars,
            layout: Layout::Standard,
            random_shots: None,
            sc_samples: 11,
            er_stage1: 11,
            er_stage2: 33,
            stage1_temperature: 0.7,
            stage2_temperature: 0.7,
            max_tokens: 512,
            seed: 0,
            templates: Templates::builtin(),
        }
    }

    /// Built-in instructions and exemplars for a dataset tag such as `medqa`,
    /// `medmcqa`, `pubmedqa` or `mmlu-clinical-knowledge`.
    ///
    /// PubMedQA few-shot prompts draw 3 exemplars per question from a training
    /// pool, which must be supplied with [`PromptSpec::with_pool`].
    pub fn for_dataset(tag: &str, strategy: Strategy) -> Result<Self, PromptError> {
        let norm: String = tag.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        let set = if norm.starts_with("pubmedqa") {
            if strategy == Strategy::FewShot {
                let set = ExemplarSet::builtin("pubmedqa_fewshot")?;
                let mut spec = PromptSpec::new(strategy, set.instructions, Vec::new());
                spec.layout = Layout::PubMedQaFewShot;
                spec.random_shots = Some(set.shots.unwrap_or(3));
                return Ok(spec);
            }
            "pubmedqa_cot"
        } else if norm.starts_with("medmcqa") {
            "medmcqa_cot"
        } else if norm.starts_with("medqa") || norm.contains("usmle") {
            "medqa_cot"
        } else if norm.starts_with("mmlu") {
            "mmlu_cot"
        } else {
            return Err(PromptError::UnknownDataset(tag.to_string()));
        };
        let set = ExemplarSet::builtin(set)?;
        Ok(PromptSpec::new(strategy, set.instructions, set.exemplars))
    }

    pub fn with_pool(mut self, pool: Vec<Exemplar>) -> Self {
        self.exemplars = pool;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.exemplars.is_empty() {
            return Err(PromptError::NoExemplars);
        }
        for (name, n) in [("sc_samples", self.sc_samples), ("er_stage1", self.er_stage1), ("er_stage2", self.er_stage2)] {
            if n == 0 {
                return Err(PromptError::InvalidSpec(format!("{name} must be at least 1")));
            }
        }
        for (name, t) in [("stage1_temperature", self.stage1_temperature), ("stage2_temperature", self.stage2_temperature)] {
            if !(t.is_finite() && t >= 0.0) {
                return Err(PromptError::InvalidSpec(format!("{name} must be a non-negative number")));
            }
        }
        match self.random_shots {
            Some(0) => Err(PromptError::InvalidSpec("random_shots must be at least 1".into())),
            Some(k) if k > self.exemplars.len() => {
                Err(PromptError::PoolTooSmall { have: self.exemplars.len(), need: k })
            }
            _ => Ok(()),
        }
    }

    /// The exemplars used for `question`, in prompt order.
    pub fn exemplars_for(&self, question: &MultipleChoiceQuestion) -> Result<Vec<&Exemplar>, PromptError> {
        self.validate()?;
        match self.random_shots {
            None => Ok(self.exemplars.iter().collect()),
            Some(k) => {
                let mut rng = ChaCha8Rng::seed_from_u64(sha256_u64(format!("{}\u{0}{}", self.seed, question.id)));
                Ok(rand::seq::index::sample(&mut rng, self.exemplars.len(), k)
                    .into_iter()
                    .map(|i| &self.exemplars[i])
                    .collect())
            }
        }
    }
}

/// `(A) first (B) second ...` on one line.
pub fn render_options(options: &OptionMap) -> String {
    options.iter().map(|(l, t)| format!("({l}) {t}")).collect::<Vec<_>>().join(" ")
}

fn with_context(context: Option<&str>, block: String) -> String {
    match context {
        Some(c) => format!("Context: {c}\n{block}"),
        None => block,
    }
}

fn option_word(options: &OptionMap, letter: Letter) -> String {
    options.get(&letter).map(|t| t.trim().to_lowercase()).unwrap_or_else(|| letter.to_string())
}

fn render_exemplars(spec: &PromptSpec, exemplars: &[&Exemplar], explain: bool) -> Result<Vec<String>, PromptError> {
    let t = &spec.templates;
    exemplars
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let answer = e.answer.ok_or(PromptError::ExemplarMissingAnswer(i))?;
            let options = render_options(&e.options);
            let answer_s = answer.to_string();
            if spec.layout == Layout::PubMedQaFewShot {
                let word = option_word(&e.options, answer);
                return Ok(fill(
                    t.get(templates::PUBMEDQA_SHOT)?,
                    &[
                        ("INSTRUCTIONS", &spec.instructions),
                        ("CONTEXT", e.context.as_deref().unwrap_or("")),
                        ("QUESTION", &e.question),
                        ("ANSWER", &word),
                    ],
                ));
            }
            let block = if explain {
                let explanation = e.explanation.as_deref().ok_or(PromptError::ExemplarMissingExplanation(i))?;
                fill(
                    t.get(templates::EXEMPLAR_COT)?,
                    &[("QUESTION", &e.question), ("OPTIONS", &options), ("EXPLANATION", explanation), ("ANSWER", &answer_s)],
                )
            } else {
                fill(
                    t.get(templates::EXEMPLAR_FEWSHOT)?,
                    &[("QUESTION", &e.question), ("OPTIONS", &options), ("ANSWER", &answer_s)],
                )
            };
            Ok(with_context(e.context.as_deref(), block))
        })
        .collect()
}

/// Instructions, exemplars and the target question, ending at the answer cue
/// (`Answer:` for few-shot, `Explanation:` for chain-of-thought strategies).
pub fn assemble_few_shot_prompt(question: &MultipleChoiceQuestion, spec: &PromptSpec) -> Result<String, PromptError> {
    let exemplars = spec.exemplars_for(question)?;
    let explain = spec.strategy.uses_explanations();
    let blocks = render_exemplars(spec, &exemplars, explain)?;
    let t = &spec.templates;
    let options = render_options(&question.options);
    if spec.layout == Layout::PubMedQaFewShot {
        let target = fill(
            t.get(templates::PUBMEDQA_TARGET)?,
            &[
                ("INSTRUCTIONS", &spec.instructions),
                ("CONTEXT", question.context.as_deref().unwrap_or("")),
                ("QUESTION", &question.stem),
            ],
        );
        return Ok(blocks.into_iter().chain([target]).collect::<Vec<_>>().join("\n\n"));
    }
    let target_template = if explain { templates::TARGET_COT } else { templates::TARGET_FEWSHOT };
    let target = with_context(
        question.context.as_deref(),
        fill(t.get(target_template)?, &[("QUESTION", &question.stem), ("OPTIONS", &options)]),
    );
    let mut parts = vec![format!("Instructions: {}", spec.instructions)];
    parts.extend(blocks);
    parts.push(target);
    Ok(parts.join("\n\n"))
}

/// The ensemble-refinement stage-2 prompt: the stage-1 generations are listed
/// as `1 reasoning: ...`, `2 reasoning: ...` in sample order under
/// `Students' reasonings:`, and the prompt ends at `Explanation:`.
pub fn assemble_refinement_prompt(
    question: &MultipleChoiceQuestion,
    spec: &PromptSpec,
    stage1: &[Generation],
) -> Result<String, PromptError> {
    let exemplars = spec.exemplars_for(question)?;
    let blocks = render_exemplars(spec, &exemplars, true)?;
    let t = &spec.templates;
    let mut ordered: Vec<&Generation> = stage1.iter().collect();
    ordered.sort_by_key(|g| g.sample_index);
    let reasonings = ordered
        .iter()
        .enumerate()
        .map(|(i, g)| format!("{} reasoning: {}", i + 1, g.text))
        .collect::<Vec<_>>()
        .join("\n\n");
    let target = with_context(
        question.context.as_deref(),
        fill(
            t.get(templates::ER_STAGE2)?,
            &[("QUESTION", &question.stem), ("OPTIONS", &render_options(&question.options)), ("REASONINGS", &reasonings)],
        ),
    );
    let mut parts = vec![format!("Instruction: {} {}", spec.instructions, t.get(templates::ER_INSTRUCTION_SUFFIX)?)];
    parts.extend(blocks);
    parts.push(target);
    Ok(parts.join("\n\n"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub final_answer: Letter,
    /// Every generation of every stage, in (stage, sample_index) order.
    pub generations: Vec<Generation>,
    /// The stage whose answers were voted on.
    pub voting_stage: Stage,
    /// Extracted answers of the voting stage.
    pub ballots: Vec<Ballot>,
    pub tally: BTreeMap<Letter, usize>,
    pub discarded: usize,
}

fn sample_stage(
    client: &Client,
    prompt: &str,
    n: usize,
    temperature: f64,
    stage: Stage,
    spec: &PromptSpec,
) -> Result<Vec<Generation>, PromptError> {
    let requests: Vec<_> = (0..n)
        .map(|i| {
            let seed = if temperature == 0.0 { None } else { Some(spec.seed.wrapping_add(i as u64)) };
            (GenerationRequest::new(prompt, temperature, spec.max_tokens, seed), SampleSlot::new(stage, i))
        })
        .collect();
    client.generate_batch(&requests).into_iter().map(|r| r.map_err(PromptError::from)).collect()
}

fn vote_on(gens: &[Generation], question: &MultipleChoiceQuestion) -> (Vec<Ballot>, Result<Tally, PromptError>) {
    let ballots: Vec<Ballot> = gens
        .iter()
        .map(|g| Ballot::new(g.sample_index, extract_answer_with_options(&g.text, &question.options)))
        .collect();
    let tally = plurality_vote(&ballots);
    (ballots, tally)
}

fn outcome(
    strategy: Strategy,
    question: &MultipleChoiceQuestion,
    earlier: Vec<Generation>,
    voting: Vec<Generation>,
    stage: Stage,
) -> Result<StrategyOutcome, PromptError> {
    let (ballots, tally) = vote_on(&voting, question);
    let tally = tally?;
    let mut generations = earlier;
    generations.extend(voting);
    Ok(StrategyOutcome {
        strategy,
        final_answer: tally.winner,
        generations,
        voting_stage: stage,
        ballots,
        tally: tally.counts,
        discarded: tally.discarded,
    })
}

/// One greedy generation from the few-shot or chain-of-thought prompt.
pub fn run_single(question: &MultipleChoiceQuestion, client: &Client, spec: &PromptSpec) -> Result<StrategyOutcome, PromptError> {
    let prompt = assemble_few_shot_prompt(question, spec)?;
    let gens = sample_stage(client, &prompt, 1, 0.0, Stage::Single, spec)?;
    outcome(spec.strategy, question, Vec::new(), gens, Stage::Single)
}

pub fn run_self_consistency(
    question: &MultipleChoiceQuestion,
    client: &Client,
    spec: &PromptSpec,
) -> Result<StrategyOutcome, PromptError> {
    let mut cot = spec.clone();
    cot.strategy = Strategy::CoT;
    let prompt = assemble_few_shot_prompt(question, &cot)?;
    let gens = sample_stage(client, &prompt, spec.sc_samples, spec.stage1_temperature, Stage::ScSample, spec)?;
    outcome(Strategy::SelfConsistency, question, Vec::new(), gens, Stage::ScSample)
}

pub fn run_ensemble_refinement(
    question: &MultipleChoiceQuestion,
    client: &Client,
    spec: &PromptSpec,
) -> Result<StrategyOutcome, PromptError> {
    let mut cot = spec.clone();
    cot.strategy = Strategy::CoT;
    let prompt = assemble_few_shot_prompt(question, &cot)?;
    let stage1 = sample_stage(client, &prompt, spec.er_stage1, spec.stage1_temperature, Stage::ErStage1, spec)?;
    let refine = assemble_refinement_prompt(question, spec, &stage1)?;
    let stage2 = sample_stage(client, &refine, spec.er_stage2, spec.stage2_temperature, Stage::ErStage2, spec)?;
    outcome(Strategy::EnsembleRefinement, question, stage1, stage2, Stage::ErStage2)
}

/// Runs whichever strategy `spec.strategy` names.
pub fn run_strategy(question: &MultipleChoiceQuestion, client: &Client, spec: &PromptSpec) -> Result<StrategyOutcome, PromptError> {
    match spec.strategy {
        Strategy::FewShot | Strategy::CoT => run_single(question, client, spec),
        Strategy::SelfConsistency => run_self_consistency(question, client, spec),
        Strategy::EnsembleRefinement => run_ensemble_refinement(question, client, spec),
    }
}
