//! Splits answers into sub-sentences and labels each one Descriptive or
//! Analytical with the text backend.

use std::path::Path;

use crate::backends::Backend;
use crate::error::{ParseError, StageError};
use crate::template::PromptTemplate;
use crate::types::{SubSentence, SubSentenceLabel};

const DEFAULT_TEMPLATE: &str = include_str!("../templates/recognizer.txt");

pub const TEMPLATE_FILE: &str = "recognizer.txt";

/// Appended to the prompt when the first response does not parse.
pub const REPAIR_REMINDER: &str = "Your previous reply did not follow the required format. Reply with exactly one line per numbered sub-sentence, in the form `<index>. D` or `<index>. A`, covering every index once, and nothing else.";

/// Words ending in a period that never end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "e.g", "i.e", "approx", "no", "fig",
    "inc", "ltd", "co", "mt",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitOptions {
    /// Also split at commas followed by whitespace.
    pub split_on_commas: bool,
}

fn is_terminator(c: char, opts: SplitOptions) -> bool {
    matches!(c, '.' | '!' | '?' | ';') || (opts.split_on_commas && c == ',')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

/// Whether the period at byte `dot` of `text` belongs to an abbreviation,
/// initial or list number rather than ending a sentence.
fn protected_period(text: &str, frag_start: usize, dot: usize, next: Option<char>) -> bool {
    let word_start = text[..dot]
        .rfind(|c: char| c.is_whitespace() || c == '(' || c == '"')
        .map(|i| i + text[i..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(0)
        .max(frag_start);
    let word = &text[word_start..dot];
    if word.is_empty() {
        return false;
    }
    let lower = word.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    // "etc." ends a sentence only when a capitalised word follows
    if lower == "etc" {
        return !next.is_some_and(char::is_uppercase);
    }
    let mut chars = word.chars();
    // single-letter initial: "J. Smith"
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if c.is_uppercase() {
            return true;
        }
    }
    // list enumerator opening a fragment: "1. A cat sits"
    word_start == frag_start && word.len() <= 3 && word.chars().all(|c| c.is_ascii_digit())
}

/// Deterministic sentence splitter.
///
/// Fragments end after `.`, `!`, `?` or `;` (plus any closing quotes or
/// brackets) when followed by whitespace or the end of the text. Decimal points,
/// common abbreviations, initials and leading list numbers do not split.
/// Concatenating the returned texts, ignoring whitespace, yields the input.
pub fn split_into_subsentences(answer: &str, opts: SplitOptions) -> Vec<SubSentence> {
    let mut out = Vec::new();
    let mut frag_start = answer.len() - answer.trim_start().len();
    let chars: Vec<(usize, char)> = answer.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_terminator(c, opts) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && (is_terminator(chars[j].1, opts) || is_closer(chars[j].1)) {
            j += 1;
        }
        let at_break = j == chars.len() || chars[j].1.is_whitespace();
        if !at_break {
            i = j;
            continue;
        }
        let next_visible = chars[j..].iter().map(|(_, c)| *c).find(|c| !c.is_whitespace());
        if c == '.' && j == i + 1 && protected_period(answer, frag_start, pos, next_visible) {
            i = j;
            continue;
        }
        let end = chars.get(j).map_or(answer.len(), |(p, _)| *p);
        push_fragment(&mut out, &answer[frag_start..end]);
        frag_start = chars[j..]
            .iter()
            .find(|(_, c)| !c.is_whitespace())
            .map_or(answer.len(), |(p, _)| *p);
        i = j;
    }
    if frag_start < answer.len() {
        push_fragment(&mut out, &answer[frag_start..]);
    }
    out
}

fn push_fragment(out: &mut Vec<SubSentence>, text: &str) {
    let text = text.trim();
    if !text.is_empty() {
        out.push(SubSentence {
            index: out.len(),
            text: text.to_string(),
            label: None,
        });
    }
}

/// `1. first\n2. second`
pub fn number_subsentences(subs: &[SubSentence]) -> String {
    subs.iter()
        .map(|s| format!("{}. {}", s.index + 1, s.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Prompt template for the recognizer; needs `{answer}` and
/// `{numbered_subsentences}` exactly once each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecognizerTemplate {
    inner: PromptTemplate,
    split: SplitOptions,
}

impl RecognizerTemplate {
    pub fn new(inner: PromptTemplate) -> Result<RecognizerTemplate, StageError> {
        inner
            .check_placeholders(&["answer", "numbered_subsentences"])
            .map_err(StageError::Template)?;
        Ok(RecognizerTemplate {
            inner,
            split: SplitOptions::default(),
        })
    }

    pub fn parse(text: &str) -> Result<RecognizerTemplate, StageError> {
        RecognizerTemplate::new(PromptTemplate::parse(text).map_err(StageError::Template)?)
    }

    pub fn builtin() -> RecognizerTemplate {
        RecognizerTemplate::parse(DEFAULT_TEMPLATE).expect("bundled recognizer template is valid")
    }

    /// Loads `recognizer.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<RecognizerTemplate, StageError> {
        let path = dir.join(TEMPLATE_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| StageError::Template(format!("{}: {e}", path.display())))?;
        RecognizerTemplate::parse(&text)
    }

    pub fn with_split_options(mut self, split: SplitOptions) -> RecognizerTemplate {
        self.split = split;
        self
    }

    pub fn split_options(&self) -> SplitOptions {
        self.split
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.inner
    }

    fn render_examples(&self) -> String {
        self.inner
            .in_context_examples
            .iter()
            .map(|ex| {
                let subs = split_into_subsentences(&ex.input, self.split);
                format!(
                    "Answer: {}\nSub-sentences:\n{}\nLabels:\n{}",
                    ex.input,
                    number_subsentences(&subs),
                    ex.output
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn render(&self, answer: &str, subs: &[SubSentence]) -> String {
        let numbered = number_subsentences(subs);
        self.inner.render(
            &self.render_examples(),
            &[("answer", answer), ("numbered_subsentences", &numbered)],
        )
    }
}

/// Parses `<index>. <D|A>` lines; every index in `1..=n` exactly once.
pub fn parse_labels(raw: &str, n: usize) -> Result<Vec<SubSentenceLabel>, String> {
    let mut labels: Vec<Option<SubSentenceLabel>> = vec![None; n];
    for (no, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (idx, label) = line
            .split_once('.')
            .ok_or_else(|| format!("line {}: expected `<index>. <D|A>`, got {line:?}", no + 1))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| format!("line {}: bad index in {line:?}", no + 1))?;
        let label = SubSentenceLabel::from_code(label.trim())
            .ok_or_else(|| format!("line {}: label must be D or A, got {line:?}", no + 1))?;
        if idx == 0 || idx > n {
            return Err(format!("line {}: index {idx} outside 1..={n}", no + 1));
        }
        if labels[idx - 1].replace(label).is_some() {
            return Err(format!("line {}: index {idx} labeled twice", no + 1));
        }
    }
    let missing: Vec<String> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_none())
        .map(|(i, _)| (i + 1).to_string())
        .collect();
    if !missing.is_empty() {
        return Err(format!("missing labels for indices {}", missing.join(", ")));
    }
    Ok(labels.into_iter().map(|l| l.expect("checked")).collect())
}

/// Labels every sub-sentence of `answer`.
///
/// The answer is split locally and the model only assigns labels by index, so
/// it cannot alter fragment boundaries. A malformed reply gets one repair retry
/// with [`REPAIR_REMINDER`] appended; a second failure is a [`ParseError`].
pub fn identify_descriptive(
    answer: &str,
    template: &RecognizerTemplate,
    backend: &Backend,
) -> Result<Vec<SubSentence>, StageError> {
    let mut subs = split_into_subsentences(answer, template.split_options());
    if subs.is_empty() {
        return Ok(subs);
    }
    let prompt = template.render(answer, &subs);
    let first = backend.complete(&prompt)?;
    let labels = match parse_labels(&first, subs.len()) {
        Ok(labels) => labels,
        Err(reason) => {
            log::debug!("recognizer reply malformed ({reason}); retrying once");
            let repair = format!("{prompt}\n\n{REPAIR_REMINDER}");
            let second = backend.complete(&repair)?;
            parse_labels(&second, subs.len()).map_err(|reason| ParseError {
                stage: "recognizer",
                reason,
                raw: second,
            })?
        }
    };
    for (s, l) in subs.iter_mut().zip(labels) {
        s.label = Some(l);
    }
    Ok(subs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{BackendConfig, Script};

    fn texts(answer: &str) -> Vec<String> {
        split_into_subsentences(answer, SplitOptions::default())
            .into_iter()
            .map(|s| s.text)
            .collect()
    }

    #[test]
    fn splitter_examples() {
        assert_eq!(texts("The sky is blue. It looks calm."), ["The sky is blue.", "It looks calm."]);
        assert_eq!(texts("There are 3.5 km of road."), ["There are 3.5 km of road."]);
        assert_eq!(texts("A man rides; a dog follows."), ["A man rides;", "a dog follows."]);
    }

    #[test]
    fn splitter_protections() {
        assert_eq!(texts("Dr. Smith waves. Hi!"), ["Dr. Smith waves.", "Hi!"]);
        assert_eq!(texts("Fruit, e.g. apples, sits there."), ["Fruit, e.g. apples, sits there."]);
        assert_eq!(texts("Is it red?! Yes."), ["Is it red?!", "Yes."]);
        assert_eq!(texts("He said \"stop.\" Then left."), ["He said \"stop.\"", "Then left."]);
        assert_eq!(texts("1. A cat. 2. A dog."), ["1. A cat.", "2. A dog."]);
        assert_eq!(texts("Apples, pears, etc. are there."), ["Apples, pears, etc. are there."]);
        assert_eq!(texts("Apples, pears, etc. The end."), ["Apples, pears, etc.", "The end."]);
        assert_eq!(texts("no terminator here"), ["no terminator here"]);
        assert_eq!(texts("   "), Vec::<String>::new());
    }

    #[test]
    fn comma_splitting_is_opt_in() {
        let opts = SplitOptions { split_on_commas: true };
        let subs = split_into_subsentences("A cat sits, and a dog runs. 1,000 birds.", opts);
        let t: Vec<&str> = subs.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(t, ["A cat sits,", "and a dog runs.", "1,000 birds."]);
    }

    #[test]
    fn labels_grammar() {
        assert_eq!(
            parse_labels("1. D\n2. A\n", 2).unwrap(),
            vec![SubSentenceLabel::Descriptive, SubSentenceLabel::Analytical]
        );
        assert_eq!(parse_labels("  2.A\n\n1 . D", 2).unwrap().len(), 2);
        assert!(parse_labels("1. D", 2).unwrap_err().contains("missing"));
        assert!(parse_labels("1. D\n1. A", 1).unwrap_err().contains("twice"));
        assert!(parse_labels("1. X", 1).is_err());
        assert!(parse_labels("3. D", 2).is_err());
        assert!(parse_labels("Sure! 1. D", 1).is_err());
    }

    #[test]
    fn builtin_template_renders() {
        let t = RecognizerTemplate::builtin();
        let subs = split_into_subsentences("A cat. It is cute.", SplitOptions::default());
        let p = t.render("A cat. It is cute.", &subs);
        assert!(p.contains("1. A cat.\n2. It is cute."));
        assert!(!p.contains("{answer}"));
    }

    #[test]
    fn template_requires_placeholders() {
        assert!(RecognizerTemplate::parse("Label {answer}").is_err());
        assert!(RecognizerTemplate::parse("{answer} {numbered_subsentences} {answer}").is_err());
    }

    #[test]
    fn happy_path_and_repair() {
        let t = RecognizerTemplate::parse("{answer}\n{numbered_subsentences}").unwrap();
        let answer = "A red car is parked. It might belong to a tourist.";
        let subs = split_into_subsentences(answer, SplitOptions::default());
        let prompt = t.render(answer, &subs);

        let b = Backend::new(BackendConfig::scripted("m", Script::new().with(prompt.clone(), "1. D\n2. A"))).unwrap();
        let labeled = identify_descriptive(answer, &t, &b).unwrap();
        assert_eq!(labeled[0].label, Some(SubSentenceLabel::Descriptive));
        assert_eq!(labeled[1].label, Some(SubSentenceLabel::Analytical));
        assert_eq!(b.upstream_calls(), 1);

        let repair = format!("{prompt}\n\n{REPAIR_REMINDER}");
        let script = Script::new().with(prompt.clone(), "1. D").with(repair.clone(), "1. D\n2. D");
        let b = Backend::new(BackendConfig::scripted("m", script)).unwrap();
        let labeled = identify_descriptive(answer, &t, &b).unwrap();
        assert!(labeled.iter().all(SubSentence::is_descriptive));
        assert_eq!(b.upstream_calls(), 2);

        let script = Script::new().with(prompt, "1. D").with(repair, "still wrong");
        let b = Backend::new(BackendConfig::scripted("m", script)).unwrap();
        match identify_descriptive(answer, &t, &b) {
            Err(StageError::Parse(e)) => {
                assert_eq!(e.raw, "still wrong");
                assert_eq!(e.stage, "recognizer");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(b.upstream_calls(), 2);
    }
}
