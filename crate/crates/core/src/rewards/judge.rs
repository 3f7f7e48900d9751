//! Binary judge and format rewards for the answer protocol.

use crate::models::vocab;

/// Exact protocol: `<answer>` Yes|No `</answer>` and nothing after.
/// Returns (correct, format), each 0 or 1. Correctness requires format.
pub fn judge_reward(answer_tokens: &[usize], truth: bool) -> (u8, u8) {
    let format_ok = answer_tokens.len() == 3
        && answer_tokens[0] == vocab::ANSWER_OPEN
        && (answer_tokens[1] == vocab::YES || answer_tokens[1] == vocab::NO)
        && answer_tokens[2] == vocab::ANSWER_CLOSE;
    if !format_ok {
        return (0, 0);
    }
    let said_yes = answer_tokens[1] == vocab::YES;
    ((said_yes == truth) as u8, 1)
}

/// The verdict expressed by a well-formed answer, if any.
pub fn parse_verdict(answer_tokens: &[usize]) -> Option<bool> {
    let (_, format) = judge_reward(answer_tokens, true);
    if format == 0 {
        return None;
    }
    Some(answer_tokens[1] == vocab::YES)
}
