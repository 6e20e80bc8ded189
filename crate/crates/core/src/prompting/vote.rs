use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::dataset::Letter;

/// One sample's extracted answer; `None` for unparseable generations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    pub sample_index: usize,
    pub letter: Option<Letter>,
}

impl Ballot {
    pub fn new(sample_index: usize, letter: Option<Letter>) -> Self {
        Ballot { sample_index, letter }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub winner: Letter,
    pub counts: BTreeMap<Letter, usize>,
    pub discarded: usize,
}

/// Most frequent letter; ties go to the tied letter seen at the smallest
/// `sample_index`. Unparseable ballots are discarded.
///
/// ```
/// use medeval::prompting::{plurality_vote, Ballot};
/// use medeval::Letter;
///
/// let l = |c| Letter::new(c);
/// let t = plurality_vote(&[Ballot::new(1, l('B')), Ballot::new(0, l('A'))]).unwrap();
/// assert_eq!(t.winner, Letter::new('A').unwrap());
/// assert!(plurality_vote(&[Ballot::new(0, None)]).is_err());
/// ```
pub fn plurality_vote(ballots: &[Ballot]) -> Result<Tally, PromptError> {
    let mut counts: BTreeMap<Letter, usize> = BTreeMap::new();
    let mut first_seen: BTreeMap<Letter, usize> = BTreeMap::new();
    let mut discarded = 0;
    for b in ballots {
        match b.letter {
            Some(l) => {
                *counts.entry(l).or_default() += 1;
                let e = first_seen.entry(l).or_insert(b.sample_index);
                *e = (*e).min(b.sample_index);
            }
            None => discarded += 1,
        }
    }
    let winner = counts
        .iter()
        .max_by(|(la, ca), (lb, cb)| ca.cmp(cb).then(first_seen[lb].cmp(&first_seen[la])))
        .map(|(l, _)| *l)
        .ok_or(PromptError::NoParseableAnswers)?;
    Ok(Tally { winner, counts, discarded })
}
