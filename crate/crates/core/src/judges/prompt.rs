use crate::model::{Choice, SafetyCriteria};

/// The comparison question sent with both images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub role_preamble: String,
    pub criteria: SafetyCriteria,
    pub question: String,
    pub choices: [(Choice, String); 3],
    pub closing: String,
}

impl PromptTemplate {
    pub fn new(criteria: SafetyCriteria) -> Self {
        PromptTemplate {
            role_preamble: "You are an urban environment expert.".to_string(),
            criteria,
            question: "Now help me to compare the two input images and tell me which one is safer.".to_string(),
            choices: [
                (Choice::Left, "First Image".to_string()),
                (Choice::Right, "Second Image".to_string()),
                (Choice::Uncomparable, "Unable to compare".to_string()),
            ],
            closing: "You also need to briefly explain your choice.".to_string(),
        }
    }

    pub fn render_criteria(&self) -> String {
        format!(
            "Safe: {}. Dangerous: {}",
            self.criteria.safe.join("; "),
            self.criteria.dangerous.join("; ")
        )
    }

    pub fn render(&self) -> String {
        let [(a, a_text), (b, b_text), (c, c_text)] = &self.choices;
        format!(
            "{} Here is the definition of safe and dangerous for city scenes: {}. {} Give me a choice from {}: {} or {}: {}. {}: {}. {}",
            self.role_preamble,
            self.render_criteria(),
            self.question,
            a.label(),
            a_text,
            b.label(),
            b_text,
            c.label(),
            c_text,
            self.closing,
        )
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new(SafetyCriteria::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParsedChoice {
    Choice(Choice),
    ParseFailure,
}

const PHRASES: [(&str, Choice); 5] = [
    ("first image", Choice::Left),
    ("second image", Choice::Right),
    ("unable to compare", Choice::Uncomparable),
    ("cannot compare", Choice::Uncomparable),
    ("can't compare", Choice::Uncomparable),
];

/// Finds the earliest choice token in a model reply, case-insensitively.
///
/// Tokens are the bare labels A/B/C standing alone and the phrases
/// "first image", "second image", "unable to compare", "cannot compare".
/// A lowercase standalone "a" followed by a word ("a street") is the
/// article, not a label.
pub fn parse_choice(reply: &str) -> ParsedChoice {
    let lower = reply.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let orig = reply.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    for i in 0..bytes.len() {
        let at_word_start = i == 0 || !is_word(bytes[i - 1]);
        if !at_word_start {
            continue;
        }
        for (phrase, choice) in PHRASES {
            if bytes[i..].starts_with(phrase.as_bytes()) {
                let end = i + phrase.len();
                if end == bytes.len() || !is_word(bytes[end]) {
                    return ParsedChoice::Choice(choice);
                }
            }
        }
        let label = match bytes[i] {
            b'a' => Choice::Left,
            b'b' => Choice::Right,
            b'c' => Choice::Uncomparable,
            _ => continue,
        };
        if i + 1 < bytes.len() && is_word(bytes[i + 1]) {
            continue;
        }
        if orig[i] == b'a' && is_article(&bytes[i + 1..]) {
            continue;
        }
        return ParsedChoice::Choice(label);
    }
    ParsedChoice::ParseFailure
}

fn is_article(rest: &[u8]) -> bool {
    let mut it = rest.iter();
    match it.next() {
        Some(b' ') => {}
        _ => return false,
    }
    matches!(it.next(), Some(b) if b.is_ascii_alphabetic())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parsed(s: &str) -> ParsedChoice {
        parse_choice(s)
    }

    #[test]
    fn reference_reply() {
        let reply = "Choice: A: First Image. The first image depicts a well-maintained urban space with clear pedestrian pathways.";
        assert_eq!(parsed(reply), ParsedChoice::Choice(Choice::Left));
    }

    #[test]
    fn labels_and_phrases() {
        assert_eq!(parsed("B"), ParsedChoice::Choice(Choice::Right));
        assert_eq!(parsed("b"), ParsedChoice::Choice(Choice::Right));
        assert_eq!(parsed("C: Unable to compare."), ParsedChoice::Choice(Choice::Uncomparable));
        assert_eq!(parsed("I pick the second image (B)"), ParsedChoice::Choice(Choice::Right));
        assert_eq!(parsed("I cannot compare these"), ParsedChoice::Choice(Choice::Uncomparable));
        assert_eq!(parsed("Choice: b. The first image is worse"), ParsedChoice::Choice(Choice::Right));
        assert_eq!(parsed("FIRST IMAGE looks safer"), ParsedChoice::Choice(Choice::Left));
    }

    #[test]
    fn no_token_is_failure() {
        assert_eq!(parsed("the weather is nice"), ParsedChoice::ParseFailure);
        assert_eq!(parsed(""), ParsedChoice::ParseFailure);
        // labels embedded in words don't count
        assert_eq!(parsed("abc cab"), ParsedChoice::ParseFailure);
    }

    #[test]
    fn article_is_not_a_label() {
        assert_eq!(parsed("There is a street; answer: B"), ParsedChoice::Choice(Choice::Right));
        assert_eq!(parsed("A street is shown, answer B"), ParsedChoice::Choice(Choice::Left));
        assert_eq!(parsed("answer: a"), ParsedChoice::Choice(Choice::Left));
    }

    #[test]
    fn rendered_prompt_shape() {
        let p = PromptTemplate::default();
        let text = p.render();
        assert!(text.starts_with("You are an urban environment expert."));
        assert!(text.contains("which one is safer"));
        assert!(text.contains("A: First Image or B: Second Image. C: Unable to compare."));
        for line in p.criteria.safe.iter().chain(&p.criteria.dangerous) {
            assert!(text.contains(line.as_str()), "missing {line}");
        }
        assert_eq!(text.matches("A: ").count(), 1);
        assert_eq!(text.matches("B: ").count(), 1);
        assert_eq!(text.matches("C: ").count(), 1);
    }

    proptest! {
        #[test]
        fn parse_is_total(s in "\\PC{0,80}") {
            let _ = parse_choice(&s);
        }

        #[test]
        fn custom_criteria_always_rendered(
            safe in proptest::collection::vec("[a-zA-Z ]{1,20}", 1..5),
            dangerous in proptest::collection::vec("[a-zA-Z ]{1,20}", 1..5),
        ) {
            let p = PromptTemplate::new(SafetyCriteria { safe: safe.clone(), dangerous: dangerous.clone() });
            let text = p.render();
            for line in safe.iter().chain(&dangerous) {
                prop_assert!(text.contains(line.as_str()));
            }
        }
    }
}
