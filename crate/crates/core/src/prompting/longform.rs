use super::{fill, PromptError, Templates};
use crate::backends::{Client, GenerationRequest, SampleSlot, Stage};
use crate::dataset::{Answer, LongFormQuestion, LongFormSource, Producer};

#[derive(Debug, Clone, PartialEq)]
pub struct LongFormSpec {
    /// Arm name recorded as the answer's producer.
    pub producer: Producer,
    pub max_tokens: u32,
    pub templates: Templates,
}

impl LongFormSpec {
    pub fn new(producer: Producer) -> Self {
        LongFormSpec { producer, max_tokens: 1024, templates: Templates::builtin() }
    }
}

fn template_name(source: LongFormSource) -> &'static str {
    match source {
        LongFormSource::HealthSearchQA => "longform_healthsearchqa",
        LongFormSource::LiveQA => "longform_liveqa",
        LongFormSource::MedicationQA => "longform_medicationqa",
        LongFormSource::AdversarialGeneral | LongFormSource::AdversarialHealthEquity => "longform_adversarial",
    }
}

/// The per-source answer-elicitation prompt.
///
/// ```
/// use medeval::prompting::{long_form_prompt, Templates};
/// use medeval::{LongFormQuestion, LongFormSource};
///
/// let q = LongFormQuestion { id: "1".into(), text: "What is a fever?".into(), source: LongFormSource::LiveQA };
/// let p = long_form_prompt(&q, &Templates::builtin()).unwrap();
/// assert!(p.ends_with("Question: What is a fever?\nComplete Answer:"));
/// ```
pub fn long_form_prompt(question: &LongFormQuestion, templates: &Templates) -> Result<String, PromptError> {
    let template = templates.get(template_name(question.source)).map_err(|_| {
        PromptError::Asset(format!("no long-form template registered for source {:?}", question.source))
    })?;
    Ok(fill(template, &[("QUESTION", &question.text)]))
}

/// One greedy (temperature 0) generation from the source's template.
pub fn run_long_form(question: &LongFormQuestion, client: &Client, spec: &LongFormSpec) -> Result<Answer, PromptError> {
    let prompt = long_form_prompt(question, &spec.templates)?;
    let g = client.generate(&GenerationRequest::greedy(prompt, spec.max_tokens), SampleSlot::new(Stage::Single, 0))?;
    Ok(Answer::new(question.id.clone(), g.text, spec.producer.clone()))
}
