//! Instruction text formats, reproduced byte for byte.

use alloc::string::String;
use alloc::vec::Vec;

use crate::domain::{DistortionKind, ToolId};

pub const SLOWAGENT_USER: &str = "[User: {question}<image>.]";
pub const SLOWAGENT_ASSISTANT: &str = "[Assistant: DISTORTION: {type}. CALL: de-{type} tool.]";
pub const FEEDBACK_USER: &str = "[User: This is a restored image.<image> RESTORATION HISTORY: {history}. Is it clean now?]";
pub const FEEDBACK_YES: &str = "[Assistant: Yes. CALL: END.]";
pub const FEEDBACK_NO: &str = "[Assistant: No. CALL: SlowAgent.]";

/// History rendering when no tool has run yet.
pub const EMPTY_HISTORY: &str = "none";

pub const QUESTIONS: [&str; 20] = [
    "What is the distortion type of this image?",
    "What kind of distortion is present in this image?",
    "What type of image distortion can be observed here?",
    "What distortion effect is visible in this image?",
    "Can you identify the distortion in this image?",
    "What is the nature of the distortion in this image?",
    "What type of distortion has affected this image?",
    "What form of distortion is evident in this image?",
    "How is this image distorted?",
    "What kind of image distortion does this show?",
    "What kind of visual distortion is in this image?",
    "What distortion does this image exhibit?",
    "What is the specific distortion type in this image?",
    "How is this image distorted visually?",
    "What kind of alteration or distortion appears in this image?",
    "What type of distortion can be seen in this image?",
    "What image distortion effect is noticeable here?",
    "What is the distortion pattern in this image?",
    "Can you describe the distortion present in this image?",
    "What distortion characteristic is evident in this image?",
];

pub fn slowagent_user(question: &str) -> String {
    SLOWAGENT_USER.replace("{question}", question)
}

pub fn slowagent_assistant(kind: DistortionKind) -> String {
    SLOWAGENT_ASSISTANT.replace("{type}", kind.as_str())
}

/// `de-a, de-b`, or `none` for an empty history.
pub fn render_history(history: &[ToolId]) -> String {
    if history.is_empty() {
        return String::from(EMPTY_HISTORY);
    }
    history.iter().map(|t| t.name()).collect::<Vec<_>>().join(", ")
}

pub fn feedback_user(history: &[ToolId]) -> String {
    FEEDBACK_USER.replace("{history}", &render_history(history))
}

pub fn feedback_assistant(clean: bool) -> &'static str {
    if clean {
        FEEDBACK_YES
    } else {
        FEEDBACK_NO
    }
}

/// Reads the kind back out of a SlowAgent answer.
pub fn parse_slowagent_assistant(text: &str) -> Option<DistortionKind> {
    let rest = text.strip_prefix("[Assistant: DISTORTION: ")?;
    let (kind, tail) = rest.split_once(". CALL: de-")?;
    let kind: DistortionKind = kind.parse().ok()?;
    (tail == alloc::format!("{} tool.]", kind.as_str()) && kind.is_user_facing()).then_some(kind)
}

/// Reads a Yes/No verdict out of a FeedbackAgent answer. Accepts the exact
/// templates and, failing that, a leading Yes/No.
pub fn parse_feedback_answer(text: &str) -> Option<bool> {
    let t = text.trim();
    if t == FEEDBACK_YES {
        return Some(true);
    }
    if t == FEEDBACK_NO {
        return Some(false);
    }
    let body = t.strip_prefix("[Assistant:").unwrap_or(t).trim_start();
    let word: String = body.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    match word.to_ascii_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}
