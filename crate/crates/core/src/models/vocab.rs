//! Fixed token vocabulary.
//!
//! Small closed vocabulary covering control markers, the answer protocol,
//! prompt-spec encodings, edit instructions with quantized arguments, and
//! bit tokens for the parity task.

pub const EOS: usize = 0;
pub const SEP: usize = 1;
pub const THINK_OPEN: usize = 2;
pub const THINK_CLOSE: usize = 3;
pub const ANSWER_OPEN: usize = 4;
pub const ANSWER_CLOSE: usize = 5;
pub const YES: usize = 6;
pub const NO: usize = 7;

pub const COUNT_1: usize = 8;
pub const COUNT_2: usize = 9;
pub const COUNT_3: usize = 10;

pub const REGION_LEFT: usize = 11;
pub const REGION_RIGHT: usize = 12;
pub const REGION_TOP: usize = 13;
pub const REGION_BOTTOM: usize = 14;
pub const REGION_ANY: usize = 15;

pub const ATTR_NEG: usize = 16;
pub const ATTR_POS: usize = 17;

pub const REL_LEFT_OF: usize = 18;
pub const REL_ABOVE: usize = 19;

pub const EDIT_TRANSLATE: usize = 20;
pub const EDIT_ROTATE: usize = 21;
pub const EDIT_SCALE: usize = 22;

/// Quantized instruction arguments ARG_0..ARG_7.
pub const ARG_BASE: usize = 23;
pub const NUM_ARGS: usize = 8;

pub const BIT_0: usize = 31;
pub const BIT_1: usize = 32;

pub const VOCAB_SIZE: usize = 33;

/// Tokens that carry the answer protocol; the policy's output bias starts
/// tilted toward these so protocol discovery does not depend on uniform
/// exploration over the whole vocabulary.
pub const PROTOCOL_TOKENS: [usize; 5] = [EOS, ANSWER_OPEN, ANSWER_CLOSE, YES, NO];

pub fn arg_token(i: usize) -> usize {
    assert!(i < NUM_ARGS, "arg index out of range");
    ARG_BASE + i
}

pub fn name(id: usize) -> &'static str {
    match id {
        EOS => "<eos>",
        SEP => "<sep>",
        THINK_OPEN => "<think>",
        THINK_CLOSE => "</think>",
        ANSWER_OPEN => "<answer>",
        ANSWER_CLOSE => "</answer>",
        YES => "Yes",
        NO => "No",
        COUNT_1 => "count:1",
        COUNT_2 => "count:2",
        COUNT_3 => "count:3",
        REGION_LEFT => "region:left",
        REGION_RIGHT => "region:right",
        REGION_TOP => "region:top",
        REGION_BOTTOM => "region:bottom",
        REGION_ANY => "region:any",
        ATTR_NEG => "attr:neg",
        ATTR_POS => "attr:pos",
        REL_LEFT_OF => "rel:left-of",
        REL_ABOVE => "rel:above",
        EDIT_TRANSLATE => "edit:translate",
        EDIT_ROTATE => "edit:rotate",
        EDIT_SCALE => "edit:scale",
        BIT_0 => "bit:0",
        BIT_1 => "bit:1",
        i if (ARG_BASE..ARG_BASE + NUM_ARGS).contains(&i) => {
            const NAMES: [&str; 8] = [
                "arg:0", "arg:1", "arg:2", "arg:3", "arg:4", "arg:5", "arg:6", "arg:7",
            ];
            NAMES[i - ARG_BASE]
        }
        _ => "<invalid>",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_is_dense_and_small() {
        assert!(VOCAB_SIZE <= 64);
        for id in 0..VOCAB_SIZE {
            assert_ne!(name(id), "<invalid>", "gap at id {id}");
        }
        assert_eq!(name(VOCAB_SIZE), "<invalid>");
    }
}
