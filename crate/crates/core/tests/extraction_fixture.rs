//! The bundled math few-shot transcript doubles as the extraction fixture:
//! every demonstration answer must extract and canonicalize exactly.

use esc_core::extract::{extract_answer, TaskKind};
use esc_core::generate::Message;
use esc_core::voting::AnswerKey;

pub const FIXTURE: &str = include_str!("data/math_fewshot.json");

const EXPECTED: &[&str] =
    &["[2,5)", "48480", "16", "64", "(-∞,1)∪(2,3)∪(4,5)∪(6,∞)", "6π", "6", "52"];

#[test]
fn every_demonstration_answer_extracts_exactly() {
    let messages: Vec<Message> = serde_json::from_str(FIXTURE).expect("fixture parses");
    let answers: Vec<AnswerKey> = messages
        .iter()
        .filter(|m| m.role == "assistant")
        .map(|m| extract_answer(&m.content, TaskKind::BoxedMath))
        .collect();
    assert_eq!(answers.len(), EXPECTED.len());
    for (got, want) in answers.iter().zip(EXPECTED) {
        assert_eq!(got, &AnswerKey::valid(*want));
    }
}

#[test]
fn the_fixture_is_a_well_formed_prompt() {
    let messages: Vec<Message> = serde_json::from_str(FIXTURE).expect("fixture parses");
    assert_eq!(messages[0].role, "system");
    // Alternating user/assistant pairs after the system turn.
    for pair in messages[1..].chunks(2) {
        assert_eq!(pair[0].role, "user");
        assert_eq!(pair[1].role, "assistant");
    }
    assert_eq!(messages.len(), 1 + 2 * 8);
}
