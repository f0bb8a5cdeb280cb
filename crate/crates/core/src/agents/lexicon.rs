//! Rule-based prompt triage over a weighted phrase lexicon.
//!
//! Strong cues name a distortion outright ("grain", "H.265"); weak cues only
//! hint at one ("artifacts", "blurs"). Phrases are matched longest first and
//! each match masks its words, so "motion blur" never also counts as "blur".
//! A prompt is Direct when one kind has the unique top score and at least one
//! strong cue.

use alloc::string::String;
use alloc::vec::Vec;

use super::{AgentError, FastBackend, PromptClassification};
use crate::domain::{DistortionKind, ToolId};

const STRONG: u32 = 2;
const WEAK: u32 = 1;

use DistortionKind::*;

#[rustfmt::skip]
const LEXICON: &[(&str, DistortionKind, u32)] = &[
    // noise
    ("noise", Noise, STRONG), ("noisy", Noise, STRONG), ("denoise", Noise, STRONG), ("grain", Noise, STRONG),
    ("grainy", Noise, STRONG), ("graininess", Noise, STRONG), ("speckle", Noise, STRONG), ("speckles", Noise, STRONG),
    ("speckled", Noise, STRONG), ("random spots", Noise, STRONG), ("sensor noise", Noise, STRONG),
    ("static", Noise, STRONG), ("spots", Noise, WEAK), ("specks", Noise, WEAK), ("dots", Noise, WEAK),
    // gaussian blur
    ("blur", Blur, STRONG), ("blurry", Blur, STRONG), ("blurred", Blur, STRONG), ("blurriness", Blur, STRONG),
    ("deblur", Blur, STRONG), ("gaussian blur", Blur, STRONG), ("out of focus", Blur, STRONG),
    ("unfocused", Blur, STRONG), ("defocus", Blur, STRONG), ("defocused", Blur, STRONG), ("fuzzy", Blur, STRONG),
    ("soft focus", Blur, STRONG), ("blurs", Blur, WEAK), ("soft", Blur, WEAK), ("sharpen", Blur, WEAK),
    ("sharper", Blur, WEAK), ("sharpness", Blur, WEAK),
    // motion blur
    ("motion blur", MotionBlur, STRONG), ("motion blurred", MotionBlur, STRONG), ("motion", MotionBlur, STRONG),
    ("camera shake", MotionBlur, STRONG), ("shaky", MotionBlur, STRONG), ("shake", MotionBlur, STRONG),
    ("movement", MotionBlur, STRONG), ("moving", MotionBlur, WEAK), ("smeared", MotionBlur, WEAK),
    ("smear", MotionBlur, WEAK), ("ghosting", MotionBlur, WEAK),
    // jpeg
    ("jpeg", Jpeg, STRONG), ("jpg", Jpeg, STRONG), ("blocky", Jpeg, STRONG), ("blockiness", Jpeg, STRONG),
    ("block artifacts", Jpeg, STRONG), ("blocking artifacts", Jpeg, STRONG), ("8x8 blocks", Jpeg, STRONG),
    ("compression", Jpeg, WEAK), ("compressed", Jpeg, WEAK), ("artifacts", Jpeg, WEAK), ("blocks", Jpeg, WEAK),
    // hevc
    ("hevc", Hevc, STRONG), ("h.265", Hevc, STRONG), ("h265", Hevc, STRONG), ("hm compression", Hevc, STRONG),
    ("hm encoder", Hevc, STRONG), ("hm", Hevc, STRONG), ("x265", Hevc, STRONG),
    ("high efficiency video coding", Hevc, STRONG),
    // vvc
    ("vvc", Vvc, STRONG), ("h.266", Vvc, STRONG), ("h266", Vvc, STRONG), ("vtm", Vvc, STRONG),
    ("vtm compression", Vvc, STRONG), ("versatile video coding", Vvc, STRONG),
    // rain streaks
    ("rain streaks", RainStreak, STRONG), ("rain streak", RainStreak, STRONG), ("rainstreaks", RainStreak, STRONG),
    ("rainstreak", RainStreak, STRONG), ("streaks of rain", RainStreak, STRONG), ("rain lines", RainStreak, STRONG),
    ("falling rain", RainStreak, STRONG), ("rainfall", RainStreak, STRONG), ("derain", RainStreak, STRONG),
    ("rain", RainStreak, WEAK), ("streaks", RainStreak, WEAK), ("rainy", RainStreak, WEAK),
    // raindrops
    ("raindrops", RainDrop, STRONG), ("raindrop", RainDrop, STRONG), ("rain drops", RainDrop, STRONG),
    ("water droplets", RainDrop, STRONG), ("droplets", RainDrop, STRONG), ("water drops", RainDrop, STRONG),
    ("drops on the lens", RainDrop, STRONG), ("wet lens", RainDrop, STRONG), ("drops", RainDrop, WEAK),
    // haze
    ("haze", Haze, STRONG), ("hazy", Haze, STRONG), ("dehaze", Haze, STRONG), ("haziness", Haze, STRONG),
    ("fog", Haze, STRONG), ("foggy", Haze, STRONG), ("mist", Haze, STRONG), ("misty", Haze, STRONG),
    ("smog", Haze, STRONG), ("murky", Haze, WEAK), ("washed out", Haze, WEAK),
    // low light
    ("low light", LowLight, STRONG), ("lowlight", LowLight, STRONG), ("underexposed", LowLight, STRONG),
    ("underexposure", LowLight, STRONG), ("too dark", LowLight, STRONG), ("dimly lit", LowLight, STRONG),
    ("poorly lit", LowLight, STRONG), ("dark", LowLight, STRONG), ("darkness", LowLight, STRONG),
    ("brighten", LowLight, STRONG), ("dim", LowLight, WEAK), ("night", LowLight, WEAK),
    ("brighter", LowLight, WEAK), ("lighting", LowLight, WEAK),
];

/// Lowercases, folds typographic apostrophes, turns hyphens and punctuation
/// into spaces, and keeps dots that sit inside a token ("h.265").
pub fn normalize(prompt: &str) -> String {
    let lowered: Vec<char> = prompt.to_lowercase().chars().map(|c| if c == '\u{2019}' { '\'' } else { c }).collect();
    let mut out = String::with_capacity(lowered.len());
    for (i, &c) in lowered.iter().enumerate() {
        let keep = c.is_alphanumeric()
            || c == '\''
            || (c == '.'
                && i > 0
                && lowered[i - 1].is_alphanumeric()
                && lowered.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
        out.push(if keep { c } else { ' ' });
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Per-kind scores plus the matched phrases.
pub fn score(prompt: &str) -> ([u32; 10], [bool; 10], Vec<&'static str>) {
    let words: Vec<String> = normalize(prompt).split(' ').map(String::from).collect();
    let mut masked = alloc::vec![false; words.len()];
    let mut order: Vec<&(&str, DistortionKind, u32)> = LEXICON.iter().collect();
    order.sort_by_key(|(p, _, _)| core::cmp::Reverse(p.split(' ').count()));
    let mut scores = [0u32; 10];
    let mut strong = [false; 10];
    let mut hits = Vec::new();
    for &(phrase, kind, weight) in order {
        let pw: Vec<&str> = phrase.split(' ').collect();
        if pw.len() > words.len() {
            continue;
        }
        for start in 0..=words.len() - pw.len() {
            let span = start..start + pw.len();
            if masked[span.clone()].iter().any(|&m| m) {
                continue;
            }
            if words[span.clone()].iter().zip(&pw).all(|(w, p)| w == p) {
                masked[span].iter_mut().for_each(|m| *m = true);
                scores[kind.rank()] += weight;
                strong[kind.rank()] |= weight == STRONG;
                hits.push(phrase);
            }
        }
    }
    (scores, strong, hits)
}

/// The rule backend. Threshold-free: any decisive strong cue is Direct.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleFast;

impl RuleFast {
    pub fn classify_prompt(prompt: &str) -> PromptClassification {
        let (scores, strong, hits) = score(prompt);
        let total: u32 = scores.iter().sum();
        let max = *scores.iter().max().expect("ten kinds");
        let leaders: Vec<usize> = (0..10).filter(|&i| scores[i] == max).collect();
        let rationale = if hits.is_empty() { String::from("no distortion cue") } else { hits.join(", ") };
        if max > 0 && leaders.len() == 1 && strong[leaders[0]] {
            let tool = ToolId::for_kind(DistortionKind::SINGLE[leaders[0]]);
            return PromptClassification::direct(tool, max as f64 / total as f64, rationale);
        }
        let confidence = if total == 0 { 1.0 } else { 1.0 - max as f64 / total as f64 };
        PromptClassification::ambiguous(confidence, rationale)
    }
}

impl FastBackend for RuleFast {
    fn name(&self) -> &str {
        "rule"
    }

    fn classify(&self, prompt: &str) -> Result<PromptClassification, AgentError> {
        Ok(Self::classify_prompt(prompt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tool(p: &str) -> Option<DistortionKind> {
        RuleFast::classify_prompt(p).tool().map(|t| t.kind())
    }

    #[test]
    fn reference_prompts() {
        assert_eq!(tool("Please remove the grain from this image."), Some(Noise));
        assert_eq!(tool("The speckles in this photo need to be cleared up."), Some(Noise));
        assert_eq!(tool("Please fix the random spots in this image."), Some(Noise));
        assert_eq!(tool("Can you reduce the H.265 artifacts to improve the picture\u{2019}s clarity?"), Some(Hevc));
        assert_eq!(tool("The HM compression makes the image look rough; can you fix it?"), Some(Hevc));
        assert_eq!(tool("Can you remove the HEVC artifacts for a clearer image?"), Some(Hevc));
        assert_eq!(tool("Please reduce the haze that blurs the scene."), Some(Haze));
        assert_eq!(tool("I\u{2019}d prefer the photo to be haze-free for better contrast."), Some(Haze));
        assert_eq!(tool("I\u{2019}d like the image to look vibrant, free from the dull haze."), Some(Haze));
        for p in ["Please fix this image.", "This image does not look good, please help me.", "Can you help me enhance this image?"] {
            assert_eq!(tool(p), None, "{p}");
        }
    }

    #[test]
    fn longer_phrases_mask_shorter_ones() {
        let (scores, _, hits) = score("remove the motion blur");
        assert_eq!(scores[MotionBlur.rank()], STRONG);
        assert_eq!(scores[Blur.rank()], 0);
        assert_eq!(hits, ["motion blur"]);
    }

    #[test]
    fn weak_cues_alone_stay_ambiguous() {
        assert_eq!(tool("there are some artifacts here"), None);
        assert_eq!(tool("noise and haze everywhere"), None);
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("Fix the H.265 look-ups, OK?"), "fix the h.265 look ups ok");
        assert_eq!(normalize("It\u{2019}s done."), "it's done");
    }
}
