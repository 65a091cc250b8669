//! Answer parsing and the accuracy + format reward.

use crate::env::Answer;
use crate::labeling::PseudoLabel;
use crate::policy::{Response, TokenId, POSITIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parsed {
    pub answer: Answer,
    pub well_formatted: bool,
}

/// Reads the answer token; a label between wrong delimiters still parses but
/// is flagged as a format violation.
pub fn parse_tokens(tokens: &[TokenId; POSITIONS]) -> Parsed {
    match tokens[1].as_label() {
        Some(j) => Parsed {
            answer: Answer::Label(j),
            well_formatted: tokens[0] == TokenId::OPEN && tokens[2] == TokenId::CLOSE,
        },
        None => Parsed {
            answer: Answer::Unparseable,
            well_formatted: false,
        },
    }
}

pub fn parse_answer(response: &Response) -> Parsed {
    parse_tokens(&response.tokens)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_format: f64,
    pub r_total: f64,
}

/// Unit accuracy reward for matching the pseudo-label (granted even when the
/// delimiters are wrong) plus unit format reward.
pub fn score(response: &Response, pseudo_label: &PseudoLabel) -> RewardBreakdown {
    let parsed = parse_answer(response);
    let r_acc = if parsed.answer != Answer::Unparseable && parsed.answer == pseudo_label.answer {
        1.0
    } else {
        0.0
    };
    let r_format = if parsed.well_formatted { 1.0 } else { 0.0 };
    RewardBreakdown {
        r_acc,
        r_format,
        r_total: r_acc + r_format,
    }
}
