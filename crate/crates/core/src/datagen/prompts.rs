//! The 220-prompt user corpus: 20 direct prompts per kind plus 20
//! ambiguous ones. Reference prompts are kept verbatim, typographic
//! apostrophes included; the rest come from paraphrase templates.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agents::PromptOutcome;
use crate::domain::{DistortionKind, ToolId};
use crate::rng;

pub const DIRECT_PER_KIND: usize = 20;
pub const AMBIGUOUS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptOrigin {
    Reference,
    Paraphrase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: usize,
    pub prompt: String,
    pub label: PromptOutcome,
    pub origin: PromptOrigin,
}

pub const REFERENCE_DIRECT: [(DistortionKind, &str); 9] = [
    (DistortionKind::Noise, "Please remove the grain from this image."),
    (DistortionKind::Noise, "The speckles in this photo need to be cleared up."),
    (DistortionKind::Noise, "Please fix the random spots in this image."),
    (DistortionKind::Hevc, "Can you reduce the H.265 artifacts to improve the picture\u{2019}s clarity?"),
    (DistortionKind::Hevc, "The HM compression makes the image look rough; can you fix it?"),
    (DistortionKind::Hevc, "Can you remove the HEVC artifacts for a clearer image?"),
    (DistortionKind::Haze, "Please reduce the haze that blurs the scene."),
    (DistortionKind::Haze, "I\u{2019}d prefer the photo to be haze-free for better contrast."),
    (DistortionKind::Haze, "I\u{2019}d like the image to look vibrant, free from the dull haze."),
];

pub const REFERENCE_AMBIGUOUS: [&str; 3] =
    ["Please fix this image.", "This image does not look good, please help me.", "Can you help me enhance this image?"];

const TEMPLATES: [&str; 10] = [
    "Please remove the {p} from this image.",
    "Can you get rid of the {p} in this photo?",
    "The {p} in this picture is distracting; please fix it.",
    "Could you reduce the {p} in this shot?",
    "I want this image without the {p}.",
    "Please clean up the {p} in this photo.",
    "Is it possible to eliminate the {p} from this picture?",
    "Help me remove the {p} in this image.",
    "This photo suffers from {p}; can you correct it?",
    "Please take out the {p} so the image looks better.",
];

fn phrases(kind: DistortionKind) -> &'static [&'static str] {
    match kind {
        DistortionKind::Noise => &["noise", "grain", "sensor noise", "speckles", "graininess"],
        DistortionKind::Blur => &["blur", "gaussian blur", "blurriness", "out-of-focus blur", "defocus blur"],
        DistortionKind::MotionBlur => &["motion blur", "camera shake", "motion smear", "shaky motion blur", "motion streaking"],
        DistortionKind::Jpeg => &["JPEG artifacts", "JPEG blockiness", "blocky JPEG look", "JPG compression", "8x8 blocks"],
        DistortionKind::Hevc => &["HEVC artifacts", "H.265 artifacts", "HEVC coding damage", "x265 distortion", "HM encoder artifacts"],
        DistortionKind::Vvc => &["VVC artifacts", "H.266 artifacts", "VTM compression", "VVC coding damage", "H.266 distortion"],
        DistortionKind::RainStreak => &["rain streaks", "streaks of rain", "rain lines", "rainfall streaks", "falling rain"],
        DistortionKind::RainDrop => &["raindrops", "water droplets", "rain drops on the lens", "droplets", "water drops"],
        DistortionKind::Haze => &["haze", "fog", "mist", "hazy veil", "smog"],
        DistortionKind::LowLight => &["underexposure", "darkness", "low light dimness", "low-light gloom", "dark underexposed look"],
        _ => &[],
    }
}

const AMBIGUOUS_EXTRA: [&str; 17] = [
    "Make this photo look better.",
    "Could you improve the quality of this picture?",
    "Something is off with this image; can you fix it?",
    "Please restore this photo.",
    "Can you make this image look nicer?",
    "This picture looks bad. Can you help?",
    "Enhance this photo for me, please.",
    "Please clean up this image.",
    "I am not happy with how this image looks.",
    "Can you repair this photo?",
    "Make this image look professional.",
    "Improve this picture, please.",
    "This photo needs some work.",
    "Could you touch up this image?",
    "Please make this photo look natural again.",
    "Can you restore the quality of this image?",
    "Fix whatever is wrong with this picture.",
];

/// Builds the corpus: kinds in canonical order, then the ambiguous block.
/// The seed only picks which paraphrases fill each kind.
pub fn build_prompt_corpus(seed: u64) -> Vec<PromptRecord> {
    let mut out = Vec::with_capacity(DistortionKind::SINGLE.len() * DIRECT_PER_KIND + AMBIGUOUS);
    let mut push = |prompt: String, label: PromptOutcome, origin| {
        let id = out.len();
        out.push(PromptRecord { id, prompt, label, origin });
    };
    for kind in DistortionKind::SINGLE {
        let label = PromptOutcome::Direct { tool: ToolId::for_kind(kind) };
        let refs: Vec<&str> = REFERENCE_DIRECT.iter().filter(|(k, _)| *k == kind).map(|(_, p)| *p).collect();
        let mut pool: Vec<String> = TEMPLATES
            .iter()
            .flat_map(|t| phrases(kind).iter().map(move |p| t.replace("{p}", p)))
            .filter(|p| !refs.contains(&p.as_str()))
            .collect();
        pool.shuffle(&mut rng::rng(rng::derive(seed, kind.rank() as u64)));
        for p in &refs {
            push(String::from(*p), label, PromptOrigin::Reference);
        }
        for p in pool.into_iter().take(DIRECT_PER_KIND - refs.len()) {
            push(p, label, PromptOrigin::Paraphrase);
        }
    }
    for p in REFERENCE_AMBIGUOUS {
        push(String::from(p), PromptOutcome::Ambiguous, PromptOrigin::Reference);
    }
    for p in AMBIGUOUS_EXTRA {
        push(String::from(p), PromptOutcome::Ambiguous, PromptOrigin::Paraphrase);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::RuleFast;

    #[test]
    fn sizes_and_reference_prompts() {
        let c = build_prompt_corpus(1);
        assert_eq!(c.len(), 220);
        assert_eq!(c.iter().filter(|r| r.label == PromptOutcome::Ambiguous).count(), 20);
        let hm = c.iter().find(|r| r.prompt == "The HM compression makes the image look rough; can you fix it?").unwrap();
        assert_eq!(hm.label, PromptOutcome::Direct { tool: ToolId::for_kind(DistortionKind::Hevc) });
        for kind in DistortionKind::SINGLE {
            let n = c.iter().filter(|r| r.label == PromptOutcome::Direct { tool: ToolId::for_kind(kind) }).count();
            assert_eq!(n, DIRECT_PER_KIND);
        }
        let mut texts: Vec<&str> = c.iter().map(|r| r.prompt.as_str()).collect();
        texts.sort_unstable();
        texts.dedup();
        assert_eq!(texts.len(), 220);
        assert_eq!(c, build_prompt_corpus(1));
    }

    #[test]
    fn rule_backend_agrees_with_every_label() {
        for r in build_prompt_corpus(5) {
            let got = RuleFast::classify_prompt(&r.prompt).outcome;
            assert_eq!(got, r.label, "{}", r.prompt);
        }
    }
}
