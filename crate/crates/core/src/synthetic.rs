//! Kaggle-shaped synthetic tweet corpora.
//!
//! Tweets are assembled from class-conditional word pools that overlap on
//! figurative disaster words ("ablaze", "bomb", "drowning"), decorated with
//! URLs, mentions, hashtags and HTML entities, and seeded with retweet
//! duplicates and URL-only rows. Labels are flipped with a configurable
//! noise rate so that no model can score perfectly.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::RawRecord;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub rows: usize,
    pub seed: u64,
    pub positive_rate: f64,
    pub label_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { rows: 2_000, seed: 2024, positive_rate: 0.43, label_noise: 0.08 }
    }
}

const DISASTER: &[&str] = &[
    "earthquake", "flood", "wildfire", "evacuation", "tornado", "hurricane", "collapse",
    "casualties", "rescue", "emergency", "injured", "killed", "damage", "derailment",
    "explosion", "landslide", "tsunami", "outbreak", "victims", "firefighters", "debris",
    "sirens", "shelter", "aftershock", "magnitude", "wreckage", "survivors", "quarantine",
    "hostages", "typhoon", "cyclone", "volcano", "eruption", "massacre", "famine",
];
const FIGURATIVE: &[&str] = &[
    "fire", "ablaze", "bomb", "storm", "crash", "drowning", "dead", "explode", "disaster",
    "burning", "panic", "attack", "destroyed", "trapped", "screaming", "hazard",
];
const EVERYDAY: &[&str] = &[
    "love", "game", "music", "lunch", "phone", "movie", "party", "weekend", "coffee",
    "song", "album", "friends", "school", "birthday", "pizza", "shopping", "video",
    "selfie", "concert", "netflix", "team", "season", "dress", "makeup", "gym", "class",
    "followers", "tonight", "vibes", "lol", "omg", "haha", "cute", "fans", "show",
];
const PLACES: &[&str] = &[
    "california", "texas", "japan", "india", "nepal", "london", "manila", "chile",
    "oklahoma", "florida", "sask", "canada", "city", "county", "village", "highway",
];
const FILLER: &[&str] = &[
    "the", "a", "is", "to", "in", "of", "my", "and", "for", "on", "at", "this", "just",
    "now", "after", "near", "so", "it", "was", "with", "all", "new", "you", "we",
];
const DISASTER_CONTEXT: &[&str] = &["reported", "officials", "confirmed", "near", "people", "homes", "area", "police"];
const EVERYDAY_CONTEXT: &[&str] = &["lol", "amazing", "omg", "literally", "feeling", "best", "love", "song"];

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).copied().unwrap_or_default()
}

fn compose<R: Rng>(rng: &mut R, disaster: bool) -> String {
    let mut words: Vec<String> = Vec::new();
    let n_topic = rng.gen_range(2..5);
    for _ in 0..n_topic {
        let w = match (disaster, rng.gen_range(0..10)) {
            (true, 0..=5) => pick(rng, DISASTER),
            (true, 6..=8) => pick(rng, FIGURATIVE),
            (true, _) => pick(rng, DISASTER_CONTEXT),
            (false, 0..=5) => pick(rng, EVERYDAY),
            (false, 6..=7) => pick(rng, FIGURATIVE),
            (false, _) => pick(rng, EVERYDAY_CONTEXT),
        };
        words.push(w.to_string());
    }
    if disaster || rng.gen_bool(0.2) {
        words.push(pick(rng, PLACES).to_string());
    }
    if disaster && rng.gen_bool(0.3) {
        words.push(rng.gen_range(2..500).to_string());
    }
    for _ in 0..rng.gen_range(2..7) {
        words.push(pick(rng, FILLER).to_string());
    }
    words.shuffle(rng);
    words.join(" ")
}

fn decorate<R: Rng>(rng: &mut R, text: &str) -> String {
    let mut out = String::new();
    if rng.gen_bool(0.2) {
        let _ = write!(out, "@user{} ", rng.gen_range(1..9999));
    }
    for (i, word) in text.split(' ').enumerate() {
        if i > 0 {
            out.push(' ');
        }
        match rng.gen_range(0..40) {
            0 => {
                out.push('#');
                out.push_str(word);
            }
            1 => out.push_str(&word.to_uppercase()),
            2 => {
                out.push_str(word);
                out.push_str(" &amp;");
            }
            3 => {
                out.push_str(word);
                out.push(',');
            }
            _ => out.push_str(word),
        }
    }
    match rng.gen_range(0..4) {
        0 => out.push_str("!!"),
        1 => out.push('.'),
        _ => {}
    }
    if rng.gen_bool(0.5) {
        let _ = write!(out, " http://t.co/{:08x}", rng.gen::<u32>());
    }
    out
}

/// Deterministic corpus with ids `1..=rows`.
pub fn generate(cfg: &SyntheticConfig) -> Vec<RawRecord> {
    let mut rng = seed::stream(cfg.seed, "synthetic");
    let mut out: Vec<RawRecord> = Vec::with_capacity(cfg.rows);
    for id in 1..=cfg.rows as i64 {
        let roll: f64 = rng.gen();
        let (text, label) = if roll < 0.004 {
            (format!("http://t.co/{:08x}", rng.gen::<u32>()), u8::from(rng.gen_bool(0.5)))
        } else if roll < 0.02 && !out.is_empty() {
            let src = &out[rng.gen_range(0..out.len())];
            let base = crate::corpus::clean_text(&src.text);
            (format!("{base} http://t.co/{:08x}", rng.gen::<u32>()), src.target.unwrap_or(0))
        } else {
            let disaster = rng.gen_bool(cfg.positive_rate);
            let mut label = u8::from(disaster);
            if rng.gen_bool(cfg.label_noise) {
                label ^= 1;
            }
            let plain = compose(&mut rng, disaster);
            (decorate(&mut rng, &plain), label)
        };
        let keyword = rng.gen_bool(0.9).then(|| pick(&mut rng, FIGURATIVE).to_string());
        let location = rng.gen_bool(0.6).then(|| pick(&mut rng, PLACES).to_string());
        out.push(RawRecord { id, keyword, location, text, target: Some(label) });
    }
    out
}

/// Serializes in the Kaggle column layout; omits `target` when
/// `with_target` is false (the layout of the unlabeled test file).
pub fn to_csv(records: &[RawRecord], with_target: bool) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: &[&str] = if with_target {
        &["id", "keyword", "location", "text", "target"]
    } else {
        &["id", "keyword", "location", "text"]
    };
    w.write_record(header).expect("in-memory write");
    for r in records {
        let mut row = vec![
            r.id.to_string(),
            r.keyword.clone().unwrap_or_default(),
            r.location.clone().unwrap_or_default(),
            r.text.clone(),
        ];
        if with_target {
            row.push(r.target.map(|t| t.to_string()).unwrap_or_default());
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}
