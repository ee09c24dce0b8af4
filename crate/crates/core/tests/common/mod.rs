#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tvsg::annotation::{AnnotationRecord, Coarse, Dependency, EvidenceLabel, Fine};
use tvsg::anonymizer::{MaskedInstanceSet, MaskedLine, SpeakerId};
use tvsg::evaluator::PredictionRecord;
use tvsg::parser::LineKind;

/// Main characters with the surface variants a transcript may use.
pub const CAST: &[(&str, &[&str])] = &[
    ("ross", &["Ross", "ROSS", "Ross Geller"]),
    ("rachel", &["Rachel", "RACHEL", "Rach"]),
    ("monica", &["Monica", "MONICA"]),
    ("chandler", &["Chandler", "CHANDLER", "Chandler Bing"]),
    ("joey", &["Joey", "JOEY"]),
    ("phoebe", &["Phoebe", "PHOEBE", "Pheebs"]),
    ("mike", &["Mike", "MIKE"]),
];

pub const SUPPORTING: &[&str] = &["Gunther", "Janice", "Waiter 2", "Mrs Geller", "Man"];

const WORDS: &[&str] = &[
    "coffee", "okay", "we", "were", "on", "a", "break", "how", "you", "doin", "what", "is", "this", "seriously", "no", "way", "fine",
    "apartment", "turkey", "again", "why", "not", "sure", "listen",
];

pub fn cast_list() -> Vec<(String, Vec<String>)> {
    CAST.iter().map(|(c, v)| (c.to_string(), v.iter().map(|s| s.to_string()).collect())).collect()
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..=8);
    let mut words: Vec<String> = (0..n).map(|_| WORDS.choose(rng).unwrap().to_string()).collect();
    if rng.gen_bool(0.15) {
        words.insert(rng.gen_range(0..words.len()), "(laughs)".into());
    }
    if rng.gen_bool(0.1) {
        words.push("note: later".into());
    }
    if rng.gen_bool(0.1) {
        words.push("Rachel?".into());
    }
    words.join(" ")
}

/// A raw transcript with boundary lines, dialogue, stage directions, blank
/// lines and stray control characters. Always contains dialogue.
pub fn random_episode(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let n_lines = rng.gen_range(4..40);
    let scene_cast: Vec<&str> = {
        let mut c: Vec<&str> = CAST.iter().map(|(n, _)| *n).collect();
        c.shuffle(&mut rng);
        c
    };
    out.push(format!("{}: {}", CAST.iter().find(|(n, _)| *n == scene_cast[0]).unwrap().1[0], sentence(&mut rng)));
    for _ in 0..n_lines {
        let roll: f64 = rng.gen();
        let line = if roll < 0.08 {
            ["[Central Perk]", "[Scene: Monica's Apartment]", "Scene: the hallway", "INT. KITCHEN - NIGHT", "Cut to: the street", "Location: roof"]
                .choose(&mut rng)
                .unwrap()
                .to_string()
        } else if roll < 0.18 {
            format!("({} walks in.)", scene_cast.choose(&mut rng).unwrap())
        } else if roll < 0.25 {
            String::new()
        } else if roll < 0.33 {
            format!("{}: {}", SUPPORTING.choose(&mut rng).unwrap(), sentence(&mut rng))
        } else if roll < 0.36 {
            format!("Ross (whispering): {}", sentence(&mut rng))
        } else {
            let who = scene_cast[..rng.gen_range(1..=scene_cast.len())].choose(&mut rng).unwrap();
            let variants = CAST.iter().find(|(n, _)| n == who).unwrap().1;
            format!("{}: {}", variants.choose(&mut rng).unwrap(), sentence(&mut rng))
        };
        let line = if rng.gen_bool(0.05) && !line.is_empty() {
            let at = line.char_indices().map(|(i, _)| i).nth(rng.gen_range(0..line.chars().count())).unwrap();
            format!("{}\u{7}{}", &line[..at], &line[at..])
        } else {
            line
        };
        let pad = if rng.gen_bool(0.1) { "  " } else { "" };
        out.push(format!("{pad}{line}{pad}"));
    }
    out.join(if rng.gen_bool(0.2) { "\r\n" } else { "\n" })
}

/// Maps every speaker ID through `perm` (old index → new index).
pub fn relabel(inst: &MaskedInstanceSet, perm: &[usize]) -> MaskedInstanceSet {
    let map = |x: SpeakerId| SpeakerId::new(perm[x.index()]).unwrap();
    let mut out = inst.clone();
    for l in &mut out.lines {
        l.speaker_id = l.speaker_id.map(map);
    }
    out.gold = inst.gold.iter().map(|(x, n)| (map(*x), n.clone())).collect();
    out
}

/// Hand-made instance: `speakers` lists (id, text) per dialogue line.
pub fn instance(show: &str, ep: &str, idx: u64, speakers: &[(usize, &str)], gold: &[(usize, &str)], candidates: &[&str]) -> MaskedInstanceSet {
    MaskedInstanceSet {
        show: show.into(),
        episode_id: ep.into(),
        scene_index: idx,
        lines: speakers
            .iter()
            .map(|(x, t)| MaskedLine { kind: LineKind::Dialogue, speaker_id: SpeakerId::new(*x), speaker: None, text: t.to_string() })
            .collect(),
        candidates: candidates.iter().map(|s| s.to_string()).collect(),
        gold: gold.iter().map(|(x, n)| (SpeakerId::new(*x).unwrap(), n.to_string())).collect::<BTreeMap<_, _>>(),
        rng_seed: 0,
    }
}

pub fn prediction(scene: u64, x: usize, predicted: &str, gold: &str, candidates: usize) -> PredictionRecord {
    PredictionRecord {
        show: "s".into(),
        episode_id: "e".into(),
        scene_index: scene,
        speaker_id: SpeakerId::new(x).unwrap(),
        predicted: predicted.into(),
        gold: gold.into(),
        candidates,
        logits: None,
    }
}

pub fn annotation(scene: u64, x: usize, annotator: &str, guess: &str, evidence: Vec<EvidenceLabel>, dependency: Dependency) -> AnnotationRecord {
    AnnotationRecord {
        show: "s".into(),
        episode_id: "e".into(),
        scene_index: scene,
        speaker_id: SpeakerId::new(x).unwrap(),
        annotator_id: annotator.into(),
        guess: guess.into(),
        evidence,
        dependency,
        reasoning: Vec::new(),
        timestamp: 0,
    }
}

pub fn label(coarse: Coarse, fine: Option<Fine>) -> EvidenceLabel {
    EvidenceLabel::new(coarse, fine)
}

const FILLER: &[&str] = &["so", "then", "we", "could", "maybe", "go", "there", "later", "right", "now", "okay", "listen", "what", "about", "it"];

/// Anonymized corpus over a made-up cast whose names never occur in line
/// text. Returns the instances and the cast.
pub fn random_named_corpus(seed: u64, scenes: usize) -> (Vec<MaskedInstanceSet>, Vec<String>) {
    use tvsg::anonymizer::{anonymize_corpus, Roster};
    use tvsg::parser::{Line, Scene};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_cast = rng.gen_range(2..=6);
    let mut cast: Vec<String> = Vec::new();
    while cast.len() < n_cast {
        let len = rng.gen_range(4..9);
        let name: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        let name = format!("Q{name}");
        if !cast.contains(&name) {
            cast.push(name);
        }
    }
    let extras = ["Xgunther", "Xjanice"];
    let scenes: Vec<Scene> = (0..scenes)
        .map(|i| {
            let n = rng.gen_range(2..8);
            let mut lines: Vec<Line> = (0..n)
                .map(|_| {
                    let text: Vec<&str> = (0..rng.gen_range(1..7)).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
                    let text = text.join(" ");
                    match rng.gen_range(0..10) {
                        0 => Line::background(format!("({text})")),
                        1 => Line::dialogue(*extras.choose(&mut rng).unwrap(), text),
                        _ => Line::dialogue(cast.choose(&mut rng).unwrap().clone(), text),
                    }
                })
                .collect();
            lines.push(Line::dialogue(cast[0].clone(), "fine"));
            Scene { show: format!("show{}", seed % 3), episode_id: format!("e{}", i / 5), scene_index: i as u64, lines }
        })
        .collect();
    let instances = anonymize_corpus(&scenes, &Roster::new(cast.clone()), seed).unwrap();
    (instances, cast)
}

/// Gold names that occur anywhere in `payload` outside its candidate list.
pub fn leaked_names(payload: &serde_json::Value, inst: &MaskedInstanceSet) -> Vec<String> {
    let mut p = payload.clone();
    p.as_object_mut().unwrap().remove("candidates");
    let text = serde_json::to_string(&p).unwrap();
    let mut found: Vec<String> = inst.gold.values().filter(|g| text.contains(g.as_str())).cloned().collect();
    if p.as_object().unwrap().keys().any(|k| k.contains("gold")) {
        found.push("<gold field>".into());
    }
    found
}

/// A record that passes validation for `payload`.
pub fn valid_answer(payload: &serde_json::Value, pick: usize) -> serde_json::Value {
    let cands = payload["candidates"].as_array().unwrap();
    serde_json::json!({
        "show": payload["show"],
        "episode_id": payload["episode_id"],
        "scene_index": payload["scene_index"],
        "speaker_id": payload["speaker_id"],
        "annotator_id": "",
        "guess": cands[pick % cands.len()],
        "evidence": [{"coarse": "linguistic_style"}],
        "dependency": "none",
    })
}
