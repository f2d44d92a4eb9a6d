//! Token grammar for backend outputs.
//!
//! Every backend answer is mapped onto a closed vocabulary: `[YES]`/`[NO]` for
//! turn bids, `[RET_IMG]`/`[RET_AUDIO]`/`[NO_RET]` for retrieval,
//! `[POSITIVE]`/`[NEGATIVE]` for memory links and yes/no for judge questions.
//! Anything else is a protocol error carrying the raw text.

use std::sync::OnceLock;

use regex::Regex;

use super::{BackendError, RetrievalDecision, TurnBid};

fn protocol(raw: &str, expected: &'static str) -> BackendError {
    BackendError::Protocol { raw: raw.to_owned(), expected }
}

fn bid_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\[(YES|NO)\](?:\s*[:=,\-]?\s*(?:p\s*=\s*|confidence\s*[:=]?\s*)?([0-9]*\.?[0-9]+))?\s*\.?$")
            .expect("valid regex")
    })
}

/// Parses a turn bid. `token_probability` is the backend-reported likelihood of
/// the `[YES]` token; without it a self-reported confidence after the token is
/// required for a positive bid.
pub fn parse_turn_bid(raw: &str, token_probability: Option<f64>) -> Result<TurnBid, BackendError> {
    const EXPECTED: &str = "[YES] <p> or [NO]";
    let text = raw.trim();
    let caps = bid_re().captures(text).ok_or_else(|| protocol(raw, EXPECTED))?;
    if caps[1].eq_ignore_ascii_case("NO") {
        return Ok(TurnBid::no());
    }
    let p = match token_probability {
        Some(p) => p,
        None => caps
            .get(2)
            .and_then(|m| m.as_str().parse::<f64>().ok())
            .ok_or_else(|| protocol(raw, EXPECTED))?,
    };
    TurnBid::yes(p).ok_or_else(|| protocol(raw, "probability in [0, 1]"))
}

/// Parses `[YES]`/`[NO]` without a probability.
pub fn parse_yes_no_token(raw: &str) -> Result<bool, BackendError> {
    match raw.trim().trim_end_matches('.').to_ascii_uppercase().as_str() {
        "[YES]" => Ok(true),
        "[NO]" => Ok(false),
        _ => Err(protocol(raw, "[YES] or [NO]")),
    }
}

pub fn parse_retrieval(raw: &str) -> Result<RetrievalDecision, BackendError> {
    match raw.trim().trim_end_matches('.').to_ascii_uppercase().as_str() {
        "[RET_IMG]" => Ok(RetrievalDecision::RetImg),
        "[RET_AUDIO]" => Ok(RetrievalDecision::RetAudio),
        "[NO_RET]" => Ok(RetrievalDecision::NoRet),
        _ => Err(protocol(raw, "[RET_IMG], [RET_AUDIO] or [NO_RET]")),
    }
}

pub fn parse_link_verdict(raw: &str) -> Result<bool, BackendError> {
    match raw.trim().trim_end_matches('.').to_ascii_uppercase().as_str() {
        "[POSITIVE]" => Ok(true),
        "[NEGATIVE]" => Ok(false),
        _ => Err(protocol(raw, "[POSITIVE] or [NEGATIVE]")),
    }
}

/// Plain yes/no answer, tolerating case, quotes, brackets and a trailing period.
pub fn parse_yes_no(raw: &str) -> Result<bool, BackendError> {
    let cleaned: String = raw
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '[' | ']' | '.' | '!' | '“' | '”'))
        .trim()
        .to_ascii_lowercase();
    match cleaned.as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err(protocol(raw, "Yes or No")),
    }
}

/// Strips a leading `[Name]` speaker tag and keeps the first non-empty line.
pub fn clean_utterance(raw: &str, speaker_name: &str) -> Result<String, BackendError> {
    let line = raw
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| protocol(raw, "a non-empty utterance"))?;
    let tag = format!("[{speaker_name}]");
    let line = line.strip_prefix(&tag).unwrap_or(line).trim();
    if line.is_empty() {
        return Err(protocol(raw, "a non-empty utterance"));
    }
    Ok(line.to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yes_with_token_probability() {
        let bid = parse_turn_bid("[YES]", Some(0.82)).unwrap();
        assert_eq!(bid, TurnBid::yes(0.82).unwrap());
    }

    #[test]
    fn yes_with_self_reported_confidence() {
        assert_eq!(parse_turn_bid(" [YES] 0.4 ", None).unwrap().probability(), Some(0.4));
        assert_eq!(parse_turn_bid("[yes] confidence: .75", None).unwrap().probability(), Some(0.75));
        assert!(parse_turn_bid("[YES]", None).is_err());
        assert!(parse_turn_bid("[YES] 1.5", None).is_err());
    }

    #[test]
    fn no_and_garbage() {
        assert_eq!(parse_turn_bid("[NO]", Some(0.9)).unwrap(), TurnBid::no());
        let err = parse_turn_bid("maybe", None).unwrap_err();
        assert_eq!(err.code(), "BACKEND_PROTOCOL");
        assert!(matches!(err, BackendError::Protocol { ref raw, .. } if raw == "maybe"));
    }

    #[test]
    fn retrieval_tokens() {
        assert_eq!(parse_retrieval("[NO_RET]").unwrap(), RetrievalDecision::NoRet);
        assert_eq!(parse_retrieval("[RET_IMG]\n").unwrap(), RetrievalDecision::RetImg);
        assert_eq!(parse_retrieval("[ret_audio]").unwrap(), RetrievalDecision::RetAudio);
        assert!(parse_retrieval("RET_IMG please").is_err());
    }

    #[test]
    fn verdicts() {
        assert!(parse_link_verdict("[POSITIVE]").unwrap());
        assert!(!parse_link_verdict("[NEGATIVE].").unwrap());
        assert!(parse_link_verdict("positive").is_err());
        assert!(parse_yes_no("Yes").unwrap());
        assert!(!parse_yes_no("\"no\".").unwrap());
        assert!(parse_yes_no("[YES]").unwrap());
        assert!(parse_yes_no("Probably").is_err());
        assert!(parse_yes_no_token("[NO]").is_ok());
    }

    #[test]
    fn utterance_cleanup() {
        assert_eq!(clean_utterance("\n[Jamie] Look at that!\n[Alex] wow", "Jamie").unwrap(), "Look at that!");
        assert!(clean_utterance("  \n ", "Jamie").is_err());
        assert!(clean_utterance("[Jamie]", "Jamie").is_err());
    }
}
