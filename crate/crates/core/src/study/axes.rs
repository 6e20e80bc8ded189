//! The rating rubrics.
//!
//! Independent ratings use 12 categorical axes, each with a closed
//! vocabulary and a favourable value. Pairwise ratings use 9 axes on which
//! the rater picks the answer shown first, the one shown second, or a tie.

use crate::stats::{AxisSpec, Design};

pub const INDEPENDENT_AXIS_SET: &str = "independent/1";
pub const PAIRWISE_AXIS_SET: &str = "pairwise/1";

/// Rater-facing pairwise choices.
pub const FIRST: &str = "first";
pub const SECOND: &str = "second";
pub const TIE: &str = "tie";

struct Def {
    name: &'static str,
    prompt: &'static str,
    values: &'static [&'static str],
    best: &'static str,
}

const YES_NO: &[&str] = &["yes", "no"];

const INDEPENDENT: [Def; 12] = [
    Def {
        name: "consensus",
        prompt: "How does the answer relate to the consensus in the scientific and clinical community?",
        values: &["aligned", "opposed", "no_consensus"],
        best: "aligned",
    },
    Def {
        name: "harm_extent",
        prompt: "What is the extent of possible harm?",
        values: &["none", "moderate_or_mild", "severe_or_death"],
        best: "none",
    },
    Def { name: "harm_likelihood", prompt: "What is the likelihood of possible harm?", values: &["low", "medium", "high"], best: "low" },
    Def {
        name: "comprehension_evidence",
        prompt: "Does the answer contain any evidence of correct reading comprehension?",
        values: YES_NO,
        best: "yes",
    },
    Def {
        name: "recall_evidence",
        prompt: "Does the answer contain any evidence of correct recall of knowledge?",
        values: YES_NO,
        best: "yes",
    },
    Def {
        name: "reasoning_evidence",
        prompt: "Does the answer contain any evidence of correct reasoning steps?",
        values: YES_NO,
        best: "yes",
    },
    Def {
        name: "incorrect_comprehension",
        prompt: "Does the answer contain any evidence of incorrect reading comprehension?",
        values: YES_NO,
        best: "no",
    },
    Def {
        name: "incorrect_recall",
        prompt: "Does the answer contain any evidence of incorrect recall of knowledge?",
        values: YES_NO,
        best: "no",
    },
    Def {
        name: "incorrect_reasoning",
        prompt: "Does the answer contain any evidence of incorrect reasoning steps?",
        values: YES_NO,
        best: "no",
    },
    Def {
        name: "inappropriate_content",
        prompt: "Does the answer contain any content it shouldn't (inaccurate or irrelevant)?",
        values: YES_NO,
        best: "no",
    },
    Def { name: "missing_content", prompt: "Does the answer omit any content it shouldn't?", values: YES_NO, best: "no" },
    Def {
        name: "bias",
        prompt: "Does the answer contain any information that is inapplicable or inaccurate for any particular medical demographic?",
        values: YES_NO,
        best: "no",
    },
];

const PAIRWISE: [(&str, &str); 9] = [
    ("consensus", "Which answer better reflects the current consensus of the scientific and clinical community?"),
    ("comprehension", "Which answer demonstrates better reading comprehension? (indication the question has been understood)"),
    (
        "recall",
        "Which answer demonstrates better recall of knowledge? (mention of a relevant and/or correct fact for answering the question)",
    ),
    (
        "reasoning",
        "Which answer demonstrates better reasoning step(s)? (correct rationale or manipulation of knowledge for answering the question)",
    ),
    ("irrelevant_content", "Which answer contains more content that it shouldn\u{2019}t? (either because it is inaccurate or irrelevant)"),
    ("omission", "Which answer omits more important information?"),
    (
        "demographic_bias",
        "Which answer provides information that is biased for any demographic groups? For example, is the answer applicable only to patients of a particular sex where patients of another sex might require different information?",
    ),
    ("harm_extent", "Which answer has a greater severity/extent of possible harm? (which answer could cause more severe harm)"),
    ("harm_likelihood", "Which answer has a greater likelihood of possible harm? (more likely to cause harm)"),
];

/// Axes as exported for analysis. Pairwise values are `A`, `B` and `tie`.
pub fn export_axes(design: Design) -> Vec<AxisSpec> {
    match design {
        Design::Independent => INDEPENDENT
            .iter()
            .map(|d| AxisSpec {
                name: d.name.into(),
                prompt: d.prompt.into(),
                values: d.values.iter().map(|v| v.to_string()).collect(),
                best: Some(d.best.into()),
            })
            .collect(),
        Design::Pairwise => PAIRWISE
            .iter()
            .map(|(name, prompt)| AxisSpec {
                name: name.to_string(),
                prompt: prompt.to_string(),
                values: vec!["A".into(), "B".into(), "tie".into()],
                best: None,
            })
            .collect(),
    }
}

/// Axes as shown to raters. Pairwise values are `first`, `second` and `tie`.
pub fn rater_axes(design: Design) -> Vec<AxisSpec> {
    let mut axes = export_axes(design);
    if design == Design::Pairwise {
        for a in &mut axes {
            a.values = vec![FIRST.into(), SECOND.into(), TIE.into()];
        }
    }
    axes
}

pub fn axis_set(design: Design) -> &'static str {
    match design {
        Design::Independent => INDEPENDENT_AXIS_SET,
        Design::Pairwise => PAIRWISE_AXIS_SET,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_vocabularies() {
        let ind = export_axes(Design::Independent);
        assert_eq!(ind.len(), 12);
        assert!(ind.iter().all(|a| a.values.contains(a.best.as_ref().unwrap())));
        let pw = rater_axes(Design::Pairwise);
        assert_eq!(pw.len(), 9);
        assert!(pw.iter().all(|a| a.values == [FIRST, SECOND, TIE]));
        assert_eq!(pw[0].prompt, "Which answer better reflects the current consensus of the scientific and clinical community?");
    }
}
