//! Parsing raw generations into canonical answer keys, per task kind.
//!
//! These rules are this artifact's extraction contract, documented so runs
//! are comparable with each other: the last occurrence always wins (chain-of-
//! thought text mentions candidate values early; final statements are
//! authoritative), and equivalent math forms are never unified — exact match
//! after canonicalization is the conservative choice.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::voting::AnswerKey;

/// Answer format of a dataset item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    BoxedMath,
    LastNumber,
    MultipleChoice,
    YesNo,
    RawString,
}

static NUMBER_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?").expect("static regex"));
// Option letters count only when uppercase-standalone or parenthesized, so a
// lowercase article "a" in prose never matches.
static CHOICE_RE: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"\(([A-Ea-e])\)|\b([A-E])\b").expect("static regex"));
static YES_NO_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)\b(yes|no)\b").expect("static regex"));

/// Parses a raw generation into a canonical `AnswerKey`. Never fails:
/// anything unparseable is the reserved `Invalid` marker.
pub fn extract_answer(text: &str, kind: TaskKind) -> AnswerKey {
    let span = match kind {
        TaskKind::BoxedMath => last_balanced_boxed(text),
        TaskKind::LastNumber => NUMBER_RE.find_iter(text).last().map(|m| m.as_str().to_string()),
        TaskKind::MultipleChoice => CHOICE_RE
            .captures_iter(text)
            .last()
            .and_then(|c| c.get(1).or_else(|| c.get(2)))
            .map(|m| m.as_str().to_string()),
        TaskKind::YesNo => YES_NO_RE.find_iter(text).last().map(|m| m.as_str().to_string()),
        TaskKind::RawString => text
            .lines()
            .rev()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .map(str::to_string),
    };
    match span {
        Some(s) => canonicalize(&s, kind),
        None => AnswerKey::Invalid,
    }
}

/// Idempotent normalization of an answer span into its canonical key.
///
/// boxed_math maps a minimal set of LaTeX tokens to their glyphs and drops
/// internal whitespace; last_number strips comma grouping and trailing
/// fractional zeros; the word-like kinds lowercase and shed surrounding
/// punctuation. An empty result is the `Invalid` marker.
pub fn canonicalize(raw: &str, kind: TaskKind) -> AnswerKey {
    let text = match kind {
        TaskKind::BoxedMath => {
            let mapped = map_latex_tokens(raw.trim());
            mapped.split_whitespace().collect::<String>()
        }
        TaskKind::LastNumber => normalize_number(raw.trim()),
        TaskKind::MultipleChoice | TaskKind::YesNo => raw
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_lowercase(),
        TaskKind::RawString => raw
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase(),
    };
    if text.is_empty() {
        AnswerKey::Invalid
    } else {
        AnswerKey::valid(text)
    }
}

/// Contents of the last `\boxed{…}` whose braces balance.
fn last_balanced_boxed(text: &str) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let starts: Vec<usize> = text.match_indices(MARKER).map(|(i, _)| i).collect();
    for &start in starts.iter().rev() {
        let body = &text[start + MARKER.len()..];
        let mut depth = 1usize;
        for (i, c) in body.char_indices() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(body[..i].to_string());
                    }
                }
                _ => {}
            }
        }
    }
    None
}

// Glyph substitutions needed for boxed answers to compare across generations.
// Deliberately tiny: this is typography normalization, not math equivalence.
const LATEX_GLYPHS: &[(&str, &str)] = &[("infty", "∞"), ("cup", "∪"), ("pi", "π")];

fn map_latex_tokens(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        let rest = &text[i + 1..];
        let name_len = rest.chars().take_while(|c| c.is_ascii_alphabetic()).count();
        let name = &rest[..name_len];
        match LATEX_GLYPHS.iter().find(|(n, _)| *n == name) {
            Some((_, glyph)) => {
                out.push_str(glyph);
                for _ in 0..name_len {
                    chars.next();
                }
            }
            None => out.push(c),
        }
    }
    out
}

fn normalize_number(raw: &str) -> String {
    let mut s: String = raw.chars().filter(|&c| c != ',' && c != '+').collect();
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn valid(s: &str) -> AnswerKey {
        AnswerKey::valid(s)
    }

    #[test]
    fn boxed_math_takes_last_balanced_box() {
        let text = r"the perimeter of the rhombus is $4 \times 13 = \boxed{52}$ inches.";
        assert_eq!(extract_answer(text, TaskKind::BoxedMath), valid("52"));

        let nested = r"so $\boxed{1}$ is wrong and the answer is $\boxed{\frac{1}{2}}$";
        assert_eq!(extract_answer(nested, TaskKind::BoxedMath), valid(r"\frac{1}{2}"));

        let unbalanced = r"first $\boxed{7}$ then a typo $\boxed{8";
        assert_eq!(extract_answer(unbalanced, TaskKind::BoxedMath), valid("7"));

        assert_eq!(extract_answer("no box here", TaskKind::BoxedMath), AnswerKey::Invalid);
    }

    #[test]
    fn boxed_math_maps_glyphs_and_drops_whitespace() {
        assert_eq!(
            canonicalize(r"(-\infty,1) \cup (2,3) \cup (4,5) \cup (6,\infty)", TaskKind::BoxedMath),
            valid("(-∞,1)∪(2,3)∪(4,5)∪(6,∞)")
        );
        assert_eq!(canonicalize(r"6\pi", TaskKind::BoxedMath), valid("6π"));
        assert_eq!(canonicalize("[2,5)", TaskKind::BoxedMath), valid("[2,5)"));
        // Unknown commands stay verbatim; \pie is not \pi.
        assert_eq!(canonicalize(r"\pie", TaskKind::BoxedMath), valid(r"\pie"));
        assert_eq!(canonicalize(r"\sqrt{2}", TaskKind::BoxedMath), valid(r"\sqrt{2}"));
    }

    #[test]
    fn last_number_takes_final_numeral_token() {
        assert_eq!(
            extract_answer("So the answer is 48,480.", TaskKind::LastNumber),
            valid("48480")
        );
        assert_eq!(extract_answer("23 - 15 is 8. Done", TaskKind::LastNumber), valid("8"));
        assert_eq!(extract_answer("we get x = -5", TaskKind::LastNumber), valid("-5"));
        assert_eq!(extract_answer("no digits at all", TaskKind::LastNumber), AnswerKey::Invalid);
    }

    // The normalization rule table for last_number; each row is
    // (raw span, canonical text).
    const NUMBER_TABLE: &[(&str, &str)] = &[
        ("1,212.0", "1212"),
        ("48,480", "48480"),
        ("48480", "48480"),
        ("0", "0"),
        ("7", "7"),
        ("-7", "-7"),
        ("+7", "7"),
        ("12.5", "12.5"),
        ("12.50", "12.5"),
        ("12.500", "12.5"),
        ("1212.0", "1212"),
        ("1212.00", "1212"),
        ("3.14", "3.14"),
        ("0.5", "0.5"),
        ("0.50", "0.5"),
        ("-0.5", "-0.5"),
        ("-1,000", "-1000"),
        ("1,000,000", "1000000"),
        ("1,000.0", "1000"),
        ("2.0", "2"),
        ("2.", "2"),
        ("10", "10"),
        ("100", "100"),
        ("-100.00", "-100"),
        ("6.25", "6.25"),
        ("6.250", "6.25"),
        ("99,999.90", "99999.9"),
        ("0.0", "0"),
        ("42", "42"),
        ("-42.0", "-42"),
        ("3,600", "3600"),
        ("3600.000", "3600"),
        ("8.1", "8.1"),
        ("8.10", "8.1"),
        ("123,456,789", "123456789"),
        ("123456789.0", "123456789"),
        ("5.05", "5.05"),
        ("5.050", "5.05"),
        ("-0.25", "-0.25"),
        ("17.000", "17"),
        ("250,000", "250000"),
        ("250,000.50", "250000.5"),
        ("9.9", "9.9"),
        ("1.23", "1.23"),
        ("1.230", "1.23"),
        ("64", "64"),
        ("-64", "-64"),
        ("777.7", "777.7"),
        ("4,848", "4848"),
        ("52", "52"),
    ];

    #[test]
    fn number_normalization_rule_table() {
        assert!(NUMBER_TABLE.len() >= 50);
        for (raw, want) in NUMBER_TABLE {
            assert_eq!(
                canonicalize(raw, TaskKind::LastNumber),
                valid(want),
                "normalizing {raw:?}"
            );
        }
    }

    #[test]
    fn multiple_choice_ignores_prose_articles() {
        assert_eq!(extract_answer("The answer is (B).", TaskKind::MultipleChoice), valid("b"));
        assert_eq!(
            extract_answer("B is right, a solid pick", TaskKind::MultipleChoice),
            valid("b")
        );
        assert_eq!(extract_answer("maybe (c) after all", TaskKind::MultipleChoice), valid("c"));
        assert_eq!(
            extract_answer("I pick B, no wait, D", TaskKind::MultipleChoice),
            valid("d")
        );
        assert_eq!(
            extract_answer("none of the options work", TaskKind::MultipleChoice),
            AnswerKey::Invalid
        );
    }

    #[test]
    fn yes_no_takes_last_token() {
        assert_eq!(canonicalize(" Yes. ", TaskKind::YesNo), valid("yes"));
        assert_eq!(
            extract_answer("Yes at first glance, but the answer is no.", TaskKind::YesNo),
            valid("no")
        );
        assert_eq!(extract_answer("I know nothing", TaskKind::YesNo), AnswerKey::Invalid);
    }

    #[test]
    fn raw_string_takes_final_nonempty_line() {
        assert_eq!(
            extract_answer("thinking...\nmore thinking\n  Final Answer  \n\n", TaskKind::RawString),
            valid("final answer")
        );
        assert_eq!(extract_answer("a  b\tc", TaskKind::RawString), valid("a b c"));
    }

    #[test]
    fn empty_input_is_invalid_for_every_kind() {
        for kind in [
            TaskKind::BoxedMath,
            TaskKind::LastNumber,
            TaskKind::MultipleChoice,
            TaskKind::YesNo,
            TaskKind::RawString,
        ] {
            assert_eq!(extract_answer("", kind), AnswerKey::Invalid, "{kind:?}");
        }
    }

    fn idempotent(raw: &str, kind: TaskKind) -> bool {
        match canonicalize(raw, kind) {
            AnswerKey::Valid(once) => canonicalize(&once, kind) == AnswerKey::Valid(once),
            AnswerKey::Invalid => true,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn canonicalize_idempotent_boxed(raw in r"[ 0-9a-z\\{}()\[\],.∞∪π+*/^-]{0,40}") {
            prop_assert!(idempotent(&raw, TaskKind::BoxedMath));
        }

        #[test]
        fn canonicalize_idempotent_number(raw in r"[-+]?[0-9][0-9,]{0,12}(\.[0-9]{0,4})?") {
            prop_assert!(idempotent(&raw, TaskKind::LastNumber));
        }

        #[test]
        fn canonicalize_idempotent_choice(raw in r"[ ().]{0,3}[A-Ea-e][ ().]{0,3}") {
            prop_assert!(idempotent(&raw, TaskKind::MultipleChoice));
        }

        #[test]
        fn canonicalize_idempotent_yesno(raw in r"[ .,!]{0,3}(yes|no|Yes|No|YES|NO)[ .,!]{0,3}") {
            prop_assert!(idempotent(&raw, TaskKind::YesNo));
        }

        #[test]
        fn canonicalize_idempotent_raw(raw in r"[ a-zA-Z0-9.,]{0,40}") {
            prop_assert!(idempotent(&raw, TaskKind::RawString));
        }

        #[test]
        fn extract_never_panics(raw in r".{0,120}", pick in 0usize..5) {
            let kind = [
                TaskKind::BoxedMath,
                TaskKind::LastNumber,
                TaskKind::MultipleChoice,
                TaskKind::YesNo,
                TaskKind::RawString,
            ][pick];
            let _ = extract_answer(&raw, kind);
        }
    }
}
