use std::sync::LazyLock;

use regex::Regex;

use crate::dataset::{Letter, OptionMap};

static ANSWER_CUE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i:answer)\s*\**\s*:\s*\**\s*\(([A-Z])\)").unwrap());
static BARE_LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-Z])\)").unwrap());
static ANSWER_WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)answer to the question given the context is\s+([A-Za-z]+)").unwrap());

fn last_valid(re: &Regex, text: &str, letters: &[Letter]) -> Option<Letter> {
    re.captures_iter(text)
        .filter_map(|c| c[1].chars().next().and_then(Letter::new))
        .filter(|l| letters.contains(l))
        .last()
}

/// Last `Answer: (X)` with a valid letter, else the last bare `(X)` with a
/// valid letter, else `None`.
///
/// ```
/// use medeval::prompting::extract_answer;
/// use medeval::Letter;
///
/// let abcd = Letter::first_n(4);
/// assert_eq!(extract_answer("so... Answer: (D)", &abcd), Letter::new('D'));
/// assert_eq!(extract_answer("Answer: (B) ... Answer: (C)", &abcd), Letter::new('C'));
/// assert_eq!(extract_answer("Answer: (E)", &abcd), None);
/// assert_eq!(extract_answer("no answer given", &abcd), None);
/// ```
pub fn extract_answer(text: &str, letters: &[Letter]) -> Option<Letter> {
    last_valid(&ANSWER_CUE, text, letters).or_else(|| last_valid(&BARE_LETTER, text, letters))
}

/// [`extract_answer`], then the worded few-shot form
/// "the answer to the question given the context is yes" matched against
/// option texts.
pub fn extract_answer_with_options(text: &str, options: &OptionMap) -> Option<Letter> {
    let letters: Vec<Letter> = options.keys().copied().collect();
    extract_answer(text, &letters).or_else(|| {
        let word = ANSWER_WORD.captures_iter(text).last()?.get(1)?.as_str().to_ascii_lowercase();
        options
            .iter()
            .find(|(_, t)| t.trim().trim_end_matches('.').eq_ignore_ascii_case(&word))
            .map(|(l, _)| *l)
    })
}
