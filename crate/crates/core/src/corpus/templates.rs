use std::collections::BTreeMap;

use super::{DescriptionCorpus, CORPUS_FORMAT_VERSION};

struct Phrases {
    cores: [&'static str; 5],
    cues: [&'static str; 4],
}

const TEMPLATES: [&str; 5] = [
    "A person {core}, and {cue}.",
    "{Core} for a while; {cue}.",
    "Wearable sensor recording of someone {core}: {cue}.",
    "The user is {core}, so {cue}.",
    "An activity where a person is {core} and {cue}.",
];

fn phrases(activity: &str) -> Option<Phrases> {
    let p = match activity {
        "walking" => Phrases {
            cores: [
                "walking at a steady pace",
                "strolling down a hallway",
                "taking even, regular steps",
                "walking to the kitchen",
                "going for a relaxed walk",
            ],
            cues: [
                "the arm swings back and forth in a smooth rhythm",
                "the motion repeats about twice per second",
                "the accelerometer traces a gentle wave",
                "each stride looks like the previous one",
            ],
        },
        "knocking" => Phrases {
            cores: [
                "knocking on a door",
                "rapping knuckles on a table",
                "tapping firmly on a wooden surface",
                "knocking to get someone's attention",
                "banging a fist on a door",
            ],
            cues: [
                "the hand snaps between two positions",
                "the signal jumps abruptly up and down",
                "sharp on-off impacts repeat at a fixed beat",
                "motion flips direction with hard edges",
            ],
        },
        "swinging" => Phrases {
            cores: [
                "swinging a racket",
                "swinging a bat",
                "swinging the arm in wide arcs",
                "winding up and swinging a golf club",
                "swinging a rope",
            ],
            cues: [
                "the movement speeds up within each swing",
                "the rhythm accelerates then resets",
                "each arc starts slow and ends fast",
                "frequency rises over the course of every swing",
            ],
        },
        "hammering" => Phrases {
            cores: [
                "hammering a nail",
                "driving nails with a hammer",
                "pounding a stake with a mallet",
                "hammering on a workbench",
                "striking metal with a hammer",
            ],
            cues: [
                "each blow causes a sharp shock that quickly dies away",
                "impacts ring briefly and then fade",
                "bursts of vibration decay between strikes",
                "strong jolts are followed by quiet recovery",
            ],
        },
        "standing" => Phrases {
            cores: [
                "standing still",
                "standing in line",
                "waiting while standing",
                "standing and chatting",
                "standing at a counter",
            ],
            cues: [
                "the body sways slowly and irregularly",
                "the signal drifts without any clear rhythm",
                "only slow postural wandering is present",
                "there is no repeating pattern, just gradual drift",
            ],
        },
        "brushing" => Phrases {
            cores: [
                "brushing teeth",
                "scrubbing teeth with a toothbrush",
                "brushing the back teeth",
                "cleaning teeth with quick strokes",
                "brushing teeth before bed",
            ],
            cues: [
                "quick small strokes grow stronger and weaker in waves",
                "a fast vibration pulses in intensity",
                "rapid back-and-forth motion swells and fades",
                "short strokes repeat with a slowly changing strength",
            ],
        },
        _ => return None,
    };
    Some(p)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Deterministic templated descriptions, `n_per_class` per activity. Known
/// activities get motion-specific phrasing; other names get generic phrasing.
pub fn templated_corpus<S: AsRef<str>>(activities: &[S], n_per_class: usize) -> DescriptionCorpus {
    let mut map = BTreeMap::new();
    for name in activities {
        let name = name.as_ref();
        let (base, variant) = match name.rsplit_once('_') {
            Some((b, v)) if v.chars().all(|c| c.is_ascii_digit()) => (b, Some(v)),
            _ => (name, None),
        };
        let spoken = base.replace('_', " ");
        let (cores, cues): (Vec<String>, Vec<String>) = match phrases(base) {
            Some(p) => (
                p.cores.iter().map(|s| s.to_string()).collect(),
                p.cues.iter().map(|s| s.to_string()).collect(),
            ),
            None => (
                vec![
                    spoken.clone(),
                    format!("performing {spoken}"),
                    format!("doing the {spoken} activity"),
                    format!("engaged in {spoken}"),
                    format!("busy with {spoken}"),
                ],
                vec![
                    "the wearable captures the motion".to_string(),
                    "sensors record the body movement".to_string(),
                    "the arm moves as usual for this activity".to_string(),
                    "the accelerometer shows the typical pattern".to_string(),
                ],
            ),
        };
        let cores: Vec<String> = match variant {
            Some(v) => cores.iter().map(|c| format!("{c} (variation {v}, faster)")).collect(),
            None => cores,
        };
        let descs = (0..n_per_class)
            .map(|i| {
                let t = TEMPLATES[i % TEMPLATES.len()];
                let core = &cores[(i / TEMPLATES.len()) % cores.len()];
                let cue = &cues[(i / (TEMPLATES.len() * cores.len())) % cues.len()];
                let round = i / (TEMPLATES.len() * cores.len() * cues.len());
                let mut s = t
                    .replace("{Core}", &capitalize(core))
                    .replace("{core}", core)
                    .replace("{cue}", cue);
                if round > 0 {
                    s.push_str(&format!(" (paraphrase {})", round + 1));
                }
                s
            })
            .collect();
        map.insert(name.to_string(), descs);
    }
    DescriptionCorpus {
        version: CORPUS_FORMAT_VERSION,
        activities: map,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn hundred_distinct_descriptions() {
        let c = templated_corpus(&["walking", "tying_shoes", "walking_2"], 100);
        for descs in c.activities.values() {
            assert_eq!(descs.len(), 100);
            assert_eq!(descs.iter().collect::<BTreeSet<_>>().len(), 100);
        }
        assert!(c.activities["tying_shoes"][0].contains("tying shoes"));
    }

    #[test]
    fn more_than_template_space_stays_unique() {
        let c = templated_corpus(&["walking"], 150);
        assert_eq!(c.activities["walking"].iter().collect::<BTreeSet<_>>().len(), 150);
    }
}
